"""Self-checks behind ``repgeo check``: finite-difference sweeps and run audits."""

from __future__ import annotations

import csv
from pathlib import Path

import numpy as np

from . import diffcore as dc
from . import geodesic as geo
from . import repr_stack as rs
from .store import load_tensor

GRAD_TOL = 1e-4
CV_TOL = 0.05
N_INSTANCES = 20


def _away_from_kinks(rng, shape):
    # distinct values well separated from zero and from each other, so rectifier and
    # max-pool branches do not flip within a finite-difference step
    n = int(np.prod(shape))
    vals = rng.permutation(n) / n + 0.01
    return (vals * rng.choice([-1.0, 1.0], size=n)).reshape(shape)


def _layer_instances(rng):
    c = int(rng.integers(1, 3))
    return [
        ("conv2d_same", dc.Conv2d(rng.standard_normal((2, c, 3, 3))), (c, 6, 6)),
        ("conv2d_valid_stride2", dc.Conv2d(rng.standard_normal((2, c, 3, 3)), 2, "valid"), (c, 7, 7)),
        ("halfwave", dc.HalfWave(), (c, 4, 4)),
        ("maxpool", dc.MaxPool(2, 2), (c, 6, 6)),
        ("maxpool_overlap", dc.MaxPool(3, 2), (c, 7, 7)),
        ("l2pool", dc.L2Pool(dc.hanning_kernel(6), 2), (c, 8, 8)),
        ("l2pool_nonseparable", dc.L2Pool(_random_kernel(rng), 2), (c, 6, 6)),
        ("fourier_magnitude", dc.FourierMagnitude(), (c, 5, 5)),
        ("affine_preprocess", dc.AffinePreprocess(255.0, [2, 1, 0], [104.0, 117.0, 124.0]), (3, 3, 3)),
        ("identity", dc.Identity(), (c, 3, 3)),
    ]


def _random_kernel(rng):
    k = rng.random((3, 3)) + 0.1
    return k / k.sum()


def _fd(fn, x, step=1e-5):
    g = np.zeros_like(x)
    flat = x.reshape(-1)
    for i in range(flat.size):
        xp, xm = flat.copy(), flat.copy()
        xp[i] += step
        xm[i] -= step
        g.reshape(-1)[i] = (fn(xp.reshape(x.shape)) - fn(xm.reshape(x.shape))) / (2 * step)
    return g


def _rel(a, b):
    return float(np.linalg.norm(a - b) / max(np.linalg.norm(a), np.linalg.norm(b), 1e-300))


def gradient_sweep(n_instances: int = N_INSTANCES, seed: int = 0) -> list[dict]:
    """Worst relative finite-difference error per operator over seeded instances."""
    worst: dict[str, float] = {}

    def note(name, err):
        worst[name] = max(worst.get(name, 0.0), err)

    for k in range(n_instances):
        rng = np.random.default_rng([seed, k])
        for name, layer, shape in _layer_instances(rng):
            x = _away_from_kinks(rng, shape)
            note("vjp:" + name, dc.gradient_check(layer, x, GRAD_TOL, n_probes=1, seed=k).max_rel_error)
    shape = (1, 8, 8)
    for name in rs.PRESETS:
        rep = rs.build_stack(rs.preset(name), shape)
        for k in range(n_instances):
            rng = np.random.default_rng([seed, 1000 + k])
            x = rng.random(shape) * 0.8 + 0.1
            u = rng.standard_normal(rep.dim)
            note("pullback:" + name, _rel(rep.pullback(x, u), _fd(lambda z: float(np.vdot(rep.evaluate(z), u)), x)))
    for name in ("smallnet_l2", "smallnet_max", "fourier_mag", "pixel"):
        rep = rs.build_stack(rs.preset(name), (1, 8, 8))
        for k in range(n_instances):
            rng = np.random.default_rng([seed, 2000 + k])
            path = rng.random((4, 1, 8, 8)) * 0.8 + 0.1
            note("grad_rep_energy:" + name, _rel(geo.grad_rep_energy(path, rep)[1:-1],
                                                 _fd(lambda z: _energy_interior(z, path, rep), path[1:-1])))
    for k in range(n_instances):
        rng = np.random.default_rng([seed, 3000 + k])
        path = rng.random((5, 1, 4, 4))
        note("grad_pixel_energy", _rel(geo.grad_pixel_energy(path)[1:-1],
                                       _fd(lambda z: _pixel_interior(z, path), path[1:-1])))
    return [{"check": name, "max_rel_error": err, "tolerance": GRAD_TOL, "passed": err <= GRAD_TOL}
            for name, err in worst.items()]


def _energy_interior(interior, path, rep):
    p = path.copy()
    p[1:-1] = interior
    return geo.rep_energy(p, rep)


def _pixel_interior(interior, path):
    p = path.copy()
    p[1:-1] = interior
    return geo.pixel_energy(p)


def audit_run(run: Path) -> list[dict]:
    """Cauchy-Schwarz, equispacing, monotone conditioning and endpoint checks on a synth run."""
    out = []
    diag = run / "diagnostics.csv"
    if not diag.exists():
        return [{"check": f"audit:{run}", "passed": False, "detail": "no diagnostics.csv"}]
    with diag.open() as fh:
        rows = [{k: float(v) for k, v in r.items()} for r in csv.DictReader(fh)]
    n_steps = None
    if (run / "path.rgt").exists():
        path = load_tensor(run / "path.rgt")
        n_steps = len(path) - 1
        ends_ok = (path[0].tobytes() == load_tensor(run / "x0.rgt").tobytes()
                   and path[-1].tobytes() == load_tensor(run / "xn.rgt").tobytes())
        out.append({"check": f"endpoints:{run.name}", "passed": bool(ends_ok)})
        out.append({"check": f"pixel_range:{run.name}", "passed": bool(path.min() >= 0 and path.max() <= 1)})
    if n_steps is not None:
        worst = max((r["rep_length"] ** 2 - n_steps * r["rep_energy"]) for r in rows)
        cs_ok = all(r["rep_length"] ** 2 <= n_steps * r["rep_energy"] * (1 + 1e-12) for r in rows)
        out.append({"check": f"cauchy_schwarz:{run.name}", "passed": cs_ok, "worst_excess": worst})
    cv = rows[-1]["equispacing_cv"]
    out.append({"check": f"equispacing_cv:{run.name}", "passed": cv <= CV_TOL, "value": cv, "tolerance": CV_TOL})
    ep = [r["pixel_energy"] for r in rows]
    tol = 0.01 * ep[0]
    out.append({"check": f"monotone_pixel_energy:{run.name}",
                "passed": all(b <= a + tol for a, b in zip(ep, ep[1:]))})
    return out


def invariant_suite() -> list[dict]:
    """A quick synthesis on a small seeded pair, audited like a logged run."""
    # two unrelated images: a shifted pair would give the Fourier stack a zero-energy geodesic,
    # where step lengths, and so equispacing, are rounding noise
    rng = np.random.default_rng(0)
    x0 = rng.random((1, 16, 16))
    x1 = rng.random((1, 16, 16))
    out = []
    for name in ("pixel", "smallnet_l2", "fourier_mag"):
        rep = rs.build_stack(rs.preset(name), x0.shape)
        cfg = geo.GeodesicConfig(inner_iters=2000, reproj_iters=200, outer_max=10)
        path, diag = geo.synth_geodesic(x0, x1, rep, cfg)
        cs = all(r["rep_length"] ** 2 <= cfg.n_steps * r["rep_energy"] * (1 + 1e-12) for r in diag.rows)
        out.append({"check": f"cauchy_schwarz:{name}", "passed": cs})
        cv = diag.rows[-1]["equispacing_cv"]
        out.append({"check": f"equispacing_cv:{name}", "passed": cv <= CV_TOL, "value": cv, "tolerance": CV_TOL})
        out.append({"check": f"endpoints:{name}",
                    "passed": path[0].tobytes() == x0.tobytes() and path[-1].tobytes() == x1.tobytes()})
    return out


def run_checks(scope, runs) -> dict:
    results = []
    if "gradients" in scope:
        results += gradient_sweep()
    if "invariants" in scope:
        results += invariant_suite()
        for run in runs:
            results += audit_run(run)
    return {"passed": all(r["passed"] for r in results), "results": results}
