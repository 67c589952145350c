"""Acceptance criteria, one test per criterion; each prints a PASS/FAIL line.

The shipped recipes are run once per session into a temporary root and shared.
The five-crop translation comparison (criterion 5) costs roughly two hours on
one core, so it only runs with REPGEO_FULL_ACCEPTANCE=1; otherwise it is
reported as skipped.
"""

import csv
import json
import os
import time

import numpy as np
import pytest

from repgeo import checks, cli
from repgeo import geodesic as geo
from repgeo import image_transforms as it
from repgeo import metrics as mt
from repgeo import repr_stack as rs
from repgeo import samples
from repgeo.store import load_tensor

from .acceptance_log import report, skipped

FULL = os.environ.get("REPGEO_FULL_ACCEPTANCE") == "1"
SYNTH_RECIPES = [name for name, r in cli.RECIPES.items() if r["command"] == "synth"]
N_CROPS = 5


@pytest.fixture(scope="session")
def recipe_root(tmp_path_factory):
    root = tmp_path_factory.mktemp("recipes")
    timings, codes = {}, {}
    for name, recipe in cli.RECIPES.items():
        start = time.perf_counter()
        codes[name] = cli.execute(recipe["command"], recipe["args"], _mkdir(root / name))
        timings[name] = time.perf_counter() - start
    return root, timings, codes


def _mkdir(path):
    path.mkdir(parents=True, exist_ok=True)
    return path


def _diagnostics(run):
    with (run / "diagnostics.csv").open() as fh:
        return [{k: float(v) for k, v in r.items()} for r in csv.DictReader(fh)]


def _mean_rmse(run):
    with (run / "rmse.csv").open() as fh:
        rows = list(csv.DictReader(fh))[1:-1]
    return np.mean([float(r["geodesic"]) for r in rows]), np.mean([float(r["linear"]) for r in rows])


def test_criterion_1_pixel_geodesic_is_linear():
    worst, slowest = 0.0, 0.0
    for k in range(5):
        x0 = samples.natural_crop(2 * k, 64, seed=k)
        x1 = samples.natural_crop(2 * k + 1, 64, seed=k)
        rep = rs.build_stack(rs.preset("pixel"), x0.shape)
        start = time.perf_counter()
        path, _ = geo.synth_geodesic(x0, x1, rep, geo.GeodesicConfig())
        slowest = max(slowest, time.perf_counter() - start)
        worst = max(worst, float(np.max(np.abs(path - geo.init_linear(x0, x1, 10)))))
    ok = worst <= 1e-4 and slowest <= 60
    report(1, "pixel-preset geodesic equals linear interpolation", ok,
           f"max |diff| {worst:.2e}, slowest pair {slowest:.1f} s")
    assert ok


def test_criterion_2_fourier_invariance(recipe_root):
    root, timings, _ = recipe_root
    run = root / "fourier_shift"
    args = cli.RECIPES["fourier_shift"]["args"]
    n = args["config"]["n_steps"]
    x0 = cli.load_image_ref(args["x0"])
    gt = it.ground_truth_path(cli.transform_from_args(args["transform"]), x0, n)
    rep = rs.build_stack(rs.preset("fourier_mag"), x0.shape)
    e_lin = geo.rep_energy(geo.init_linear(gt[0], gt[-1], n), rep)
    # every frame is an integer circular shift, so the magnitudes agree up to FFT rounding
    e_gt = geo.rep_energy(gt, rep)
    e_end = _diagnostics(run)[-1]["rep_energy"]
    ok = e_gt <= 1e-24 * e_lin and e_end <= 1e-3 * e_lin and timings["fourier_shift"] <= 600
    report(2, "Fourier-magnitude invariance", ok,
           f"E_gt {e_gt:.2e}, terminal/linear {e_end / e_lin:.2e}, {timings['fourier_shift']:.0f} s")
    assert ok


def test_criterion_3_cauchy_schwarz_and_equispacing(recipe_root):
    root, _, _ = recipe_root
    cs_ok = True
    for name in SYNTH_RECIPES:
        n = json.loads((root / name / "manifest.json").read_text())["args"]["config"]["n_steps"]
        for r in _diagnostics(root / name):
            cs_ok &= mt.cauchy_schwarz_holds(r["rep_length"], r["rep_energy"], n)
    # two unrelated crops, so no preset has a zero-energy geodesic between them
    x0 = samples.natural_crop(5, 32)
    x1 = samples.natural_crop(6, 32)
    lin = geo.init_linear(x0, x1, 10)
    cvs = {}
    for name in rs.PRESETS:
        rep = rs.build_stack(rs.preset(name), x0.shape)
        path, _ = geo.minimize_rep_energy(lin, rep, geo.GeodesicConfig())
        cvs[name] = geo.equispacing_cv(path, rep)
        cs_ok &= mt.cauchy_schwarz_holds(geo.rep_length(path, rep), geo.rep_energy(path, rep), 10)
    worst = max(cvs, key=cvs.get)
    ok = cs_ok and cvs[worst] <= 0.05
    report(3, "Cauchy-Schwarz on logged paths, equispacing after minimization", ok,
           f"worst CV {cvs[worst]:.3g} ({worst})")
    assert ok


def test_criterion_4_gradients():
    results = checks.gradient_sweep(n_instances=20)
    worst = max(results, key=lambda r: r["max_rel_error"])
    ok = all(r["passed"] for r in results)
    report(4, "gradients match central differences", ok,
           f"{len(results)} operators, worst {worst['max_rel_error']:.2e} ({worst['check']})")
    assert ok


def test_criterion_5_l2_beats_max_and_linear(recipe_root, tmp_path):
    title = "L2 geodesic closer to ground truth than max and linear"
    if not FULL:
        reason = "about two hours on one core; set REPGEO_FULL_ACCEPTANCE=1"
        skipped(5, title, reason)
        pytest.skip(reason)
    root, timings, _ = recipe_root
    elapsed = timings["translate_l2"] + timings["translate_max"]
    wins, lines = 0, []
    for crop in range(N_CROPS):
        rmse = {}
        for stack in ("smallnet_l2", "smallnet_max"):
            if crop == 0:
                run = root / ("translate_l2" if stack == "smallnet_l2" else "translate_max")
            else:
                recipe = cli._translation_synth(stack, crop)
                run = _mkdir(tmp_path / f"{stack}_{crop}")
                start = time.perf_counter()
                cli.execute(recipe["command"], recipe["args"], run)
                elapsed += time.perf_counter() - start
            rmse[stack], rmse["linear"] = _mean_rmse(run)
        win = rmse["smallnet_l2"] < rmse["smallnet_max"] and rmse["smallnet_l2"] < rmse["linear"]
        wins += win
        lines.append(f"crop {crop}: l2 {rmse['smallnet_l2']:.4f} max {rmse['smallnet_max']:.4f} "
                     f"linear {rmse['linear']:.4f}")
    print("\n".join(lines))
    ok = wins >= 4 and elapsed <= 3600
    report(5, title, ok,
           f"{wins}/{N_CROPS} crops, {elapsed / 60:.0f} min")
    assert ok


def test_criterion_6_deviation_ordering(recipe_root):
    root, _, _ = recipe_root
    run = root / "translate_l2"
    path = load_tensor(run / "path.rgt")
    gt = load_tensor(run / "ground_truth.rgt")
    lin = load_tensor(run / "linear.rgt")
    rep = rs.build_stack(rs.preset("smallnet_l2"), path.shape[1:])
    dev = {name: mt.deviation_profile(p, rep).max_deviation for name, p in
           (("geodesic", path), ("ground_truth", gt), ("linear", lin))}
    ok = dev["geodesic"] <= dev["ground_truth"] <= dev["linear"]
    report(6, "deviation geodesic <= ground truth <= pixel interpolation", ok,
           ", ".join(f"{k} {v:.4f}" for k, v in dev.items()))
    assert ok


def _rf_size(run):
    with (run / "rf_size.csv").open() as fh:
        return float(next(csv.DictReader(fh))["size_estimate"])


def test_criterion_7_receptive_fields(recipe_root, tmp_path):
    root, _, _ = recipe_root
    rep = rs.build_stack(rs.preset("conv_only"), (1, 24, 24))
    measured = mt.receptive_field(rep, (10, 10), n_noise=64).size_estimate
    support = rs.preset("conv_only").layers[0]["size"]
    sizes = {name: _rf_size(root / name) for name in ("rf_stage3", "rf_pool1_36", "rf_pool2_18")}
    ref = sizes["rf_stage3"]
    spread = max(abs(s - ref) / ref for s in sizes.values())
    ok = abs(measured - support) <= 1 and spread <= 0.2
    report(7, "receptive-field sizes", ok,
           f"conv-only {measured:.2f} vs {support}; matched " + ", ".join(f"{k} {v:.1f}" for k, v in sizes.items()))
    assert ok


def test_criterion_8_recipes_rerun_bitwise(recipe_root, tmp_path):
    root, _, codes = recipe_root
    mismatched = []
    for name in cli.RECIPES:
        again = tmp_path / name
        assert cli.rerun(root / name / "manifest.json", again) == codes[name]
        artifacts = json.loads((root / name / "manifest.json").read_text())["artifacts"]
        assert artifacts == json.loads((again / "manifest.json").read_text())["artifacts"]
        mismatched += [f"{name}/{a}" for a in artifacts if (root / name / a).read_bytes() != (again / a).read_bytes()]
    ok = not mismatched
    report(8, "recipes rerun bitwise from their manifests", ok,
           f"{len(cli.RECIPES)} recipes" + (f"; differing: {mismatched}" if mismatched else ""))
    assert ok


def test_criterion_9_monotone_conditioning(recipe_root):
    root, _, _ = recipe_root
    bad = []
    for name in SYNTH_RECIPES:
        rows = _diagnostics(root / name)
        rep_tol = json.loads((root / name / "manifest.json").read_text())["args"]["config"]["rep_tol"]
        ep = [r["pixel_energy"] for r in rows]
        if any(b > a + rep_tol * ep[0] for a, b in zip(ep, ep[1:])):
            bad.append(f"{name}: pixel energy rose")
        if rows[-1]["rep_energy"] > 1.01 * rows[0]["rep_energy"]:
            bad.append(f"{name}: terminal rep energy {rows[-1]['rep_energy']:.4g} vs {rows[0]['rep_energy']:.4g}")
    ok = not bad
    report(9, "monotone conditioning on synth recipes", ok, "; ".join(bad) or f"{len(SYNTH_RECIPES)} recipes")
    assert ok
