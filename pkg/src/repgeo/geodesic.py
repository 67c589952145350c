"""Representational geodesics between two images.

A path is a ``(N + 1, C, H, W)`` array of frames whose first and last frames
are the fixed endpoints. :func:`synth_geodesic` first pulls the pixel
interpolation onto a minimum of the representational energy, then descends
the pixel-domain energy along directions orthogonal to the representational
gradient, re-minimizing the representational energy after every step.
"""

from __future__ import annotations

import csv
import io
import logging
from dataclasses import asdict, dataclass, field

import numpy as np

from .diffcore import DTYPE, ConfigurationError

logger = logging.getLogger(__name__)


class GeodesicError(RuntimeError):
    """Optimization failure; ``diagnostics`` holds everything logged so far."""

    def __init__(self, message, diagnostics=None, path=None):
        super().__init__(message)
        self.diagnostics = diagnostics
        self.path = path


class DivergenceError(GeodesicError):
    pass


class ReprojectionError(GeodesicError):
    pass


@dataclass
class AdamConfig:
    step_size: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8


@dataclass
class GeodesicConfig:
    n_steps: int = 10
    adam: AdamConfig = field(default_factory=AdamConfig)
    inner_iters: int = 10_000
    reproj_iters: int = 1_000
    # lambda; absolute by default, or mean per-pixel step when step_mode == "normalized"
    step: float = 0.1
    step_mode: str = "absolute"
    max_backtracks: int = 4
    outer_tol: float = 1e-4
    outer_window: int = 5
    outer_max: int = 200
    rep_tol: float = 0.01
    # absolute slack, as a fraction of the linear path's energy, for stacks whose geodesics reach E[f] ~ 0
    rep_atol: float = 1e-8
    proj_eps: float = 1e-12

    def __post_init__(self):
        if isinstance(self.adam, dict):
            self.adam = AdamConfig(**self.adam)
        self.validate()

    def validate(self):
        if self.n_steps < 2:
            raise ConfigurationError(f"n_steps must be >= 2, got {self.n_steps}")
        positive = {
            "adam.step_size": self.adam.step_size,
            "adam.eps": self.adam.eps,
            "step": self.step,
            "outer_tol": self.outer_tol,
            "rep_tol": self.rep_tol,
            "proj_eps": self.proj_eps,
        }
        for name, value in positive.items():
            if not value > 0:
                raise ConfigurationError(f"{name} must be positive, got {value}")
        if not (0 <= self.adam.beta1 < 1 and 0 <= self.adam.beta2 < 1):
            raise ConfigurationError("Adam betas must lie in [0, 1)")
        if self.rep_atol < 0:
            raise ConfigurationError(f"rep_atol must be non-negative, got {self.rep_atol}")
        if self.inner_iters < 0 or self.reproj_iters < 0 or self.outer_max < 0 or self.outer_window < 1:
            raise ConfigurationError("iteration counts must be non-negative")
        if self.step_mode not in ("absolute", "normalized"):
            raise ConfigurationError(f"unknown step_mode {self.step_mode!r}")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "GeodesicConfig":
        return cls(**d)


DIAGNOSTIC_COLUMNS = ("iter", "rep_energy", "pixel_energy", "rep_length", "equispacing_cv")


@dataclass
class Diagnostics:
    rows: list = field(default_factory=list)
    status: str = "running"
    first_rep_energy: float = float("nan")
    first_pixel_energy: float = float("nan")
    initial_rep_energy: float = float("nan")
    rejected_steps: int = 0

    def log(self, iteration: int, stats: dict):
        row = {"iter": iteration}
        row.update({k: float(stats[k]) for k in DIAGNOSTIC_COLUMNS[1:]})
        self.rows.append(row)

    def column(self, name: str) -> np.ndarray:
        return np.array([r[name] for r in self.rows])

    @property
    def converged(self) -> bool:
        return self.status == "converged"

    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.DictWriter(buf, fieldnames=DIAGNOSTIC_COLUMNS, lineterminator="\n")
        writer.writeheader()
        for r in self.rows:
            writer.writerow({k: repr(r[k]) if k != "iter" else r[k] for k in DIAGNOSTIC_COLUMNS})
        return buf.getvalue()


# ---------------------------------------------------------------------------
# objectives


def _frames(path) -> np.ndarray:
    path = np.asarray(path, dtype=DTYPE)
    if path.ndim != 4 or path.shape[0] < 2:
        raise ConfigurationError(f"path must be (N + 1, C, H, W) with N >= 1, got {path.shape}")
    return path


def step_stats(reps: np.ndarray) -> dict:
    """Energy, length and equispacing CV of a sequence of response vectors."""
    d2 = np.sum(np.diff(reps, axis=0) ** 2, axis=1)
    dist = np.sqrt(d2)
    mean = dist.mean()
    return {
        "rep_energy": float(d2.sum()),
        "rep_length": float(dist.sum()),
        "equispacing_cv": float(dist.std() / mean) if mean > 0 else 0.0,
    }


def rep_length(path, rep) -> float:
    return step_stats(rep.evaluate_batch(_frames(path)))["rep_length"]


def rep_energy(path, rep) -> float:
    return step_stats(rep.evaluate_batch(_frames(path)))["rep_energy"]


def equispacing_cv(path, rep) -> float:
    return step_stats(rep.evaluate_batch(_frames(path)))["equispacing_cv"]


def pixel_energy(path) -> float:
    path = _frames(path)
    return float(np.sum(np.diff(path, axis=0) ** 2))


def path_stats(path, rep) -> dict:
    stats = step_stats(rep.evaluate_batch(_frames(path)))
    stats["pixel_energy"] = pixel_energy(path)
    return stats


def init_linear(x0, xN, n_steps: int) -> np.ndarray:
    x0 = np.asarray(x0, dtype=DTYPE)
    xN = np.asarray(xN, dtype=DTYPE)
    if x0.shape != xN.shape:
        raise ConfigurationError(f"endpoint shapes differ: {x0.shape} vs {xN.shape}")
    if n_steps < 2:
        raise ConfigurationError(f"n_steps must be >= 2, got {n_steps}")
    path = np.empty((n_steps + 1,) + x0.shape, dtype=DTYPE)
    for n in range(n_steps + 1):
        path[n] = ((n_steps - n) / n_steps) * x0 + (n / n_steps) * xN
    np.clip(path[1:-1], 0.0, 1.0, out=path[1:-1])
    path[0] = x0
    path[-1] = xN
    return path


def grad_rep_energy(path, rep) -> np.ndarray:
    """Gradient of the representational energy; zero in the endpoint slots."""
    path = _frames(path)
    y, ctxs = rep.trace_batch(path[1:-1])
    ends = rep.evaluate_batch(path[[0, -1]])
    reps = np.concatenate([ends[:1], y, ends[1:]])
    d = np.diff(reps, axis=0)
    out = np.zeros_like(path)
    out[1:-1] = rep.backward_batch(ctxs, 2.0 * (d[:-1] - d[1:]))
    return out


def grad_pixel_energy(path) -> np.ndarray:
    path = _frames(path)
    out = np.zeros_like(path)
    out[1:-1] = 2.0 * (2.0 * path[1:-1] - path[:-2] - path[2:])
    return out


def project_out(dp: np.ndarray, dr: np.ndarray, eps: float = 1e-12) -> np.ndarray:
    """Remove from ``dp`` its component along ``dr`` (joint inner product over the whole path)."""
    dp = np.asarray(dp, dtype=DTYPE)
    dr = np.asarray(dr, dtype=DTYPE)
    if dp.shape != dr.shape:
        raise ConfigurationError(f"gradient shapes differ: {dp.shape} vs {dr.shape}")
    nr2 = float(np.vdot(dr, dr))
    # degenerate when the RMS entry of dr is below eps
    if nr2 <= eps * eps * dr.size:
        return dp.copy()
    return dp - (float(np.vdot(dr, dp)) / nr2) * dr


# ---------------------------------------------------------------------------
# optimization


def minimize_rep_energy(path, rep, cfg: GeodesicConfig, iters: int | None = None):
    """Adam on the interior frames, clamping pixels to [0, 1] after every update.

    Returns ``(path, rep_energy)`` for the lowest-energy iterate visited, so the
    result never has higher energy than the input.
    """
    path = _frames(path).copy()
    iters = cfg.inner_iters if iters is None else iters
    a = cfg.adam
    ends = rep.evaluate_batch(path[[0, -1]])
    x = path[1:-1].copy()
    m = np.zeros_like(x)
    v = np.zeros_like(x)
    best_e, best_x = np.inf, x

    def energy_and_trace(x):
        y, ctxs = rep.trace_batch(x)
        reps = np.concatenate([ends[:1], y, ends[1:]])
        d = np.diff(reps, axis=0)
        return float(np.sum(d * d)), d, ctxs

    b1t = b2t = 1.0
    for _ in range(iters):
        e, d, ctxs = energy_and_trace(x)
        if not np.isfinite(e):
            raise DivergenceError(f"representational energy became {e}", path=path)
        if e < best_e:
            best_e, best_x = e, x
        g = rep.backward_batch(ctxs, 2.0 * (d[:-1] - d[1:]))
        b1t *= a.beta1
        b2t *= a.beta2
        m *= a.beta1
        m += (1 - a.beta1) * g
        v *= a.beta2
        v += (1 - a.beta2) * (g * g)
        x = x - a.step_size * (m / (1 - b1t)) / (np.sqrt(v / (1 - b2t)) + a.eps)
        np.clip(x, 0.0, 1.0, out=x)
    e = energy_and_trace(x)[0]
    if not np.isfinite(e):
        raise DivergenceError(f"representational energy became {e}", path=path)
    if e < best_e:
        best_e, best_x = e, x
    path[1:-1] = best_x
    return path, best_e


def synth_geodesic(x0, xN, rep, cfg: GeodesicConfig | None = None, callback=None):
    """Conditional geodesic from ``x0`` to ``xN`` under ``rep``.

    Returns ``(path, diagnostics)``. Row 0 of the diagnostics is the path after
    the first full minimization; each further row is an accepted outer step.
    A step that does not lower the pixel energy, or whose re-minimized
    representational energy exceeds the best seen by more than ``rep_tol``
    (plus ``rep_atol`` times the linear path's energy),
    is retried with half the step size, up to ``max_backtracks`` times.
    """
    cfg = cfg or GeodesicConfig()
    cfg.validate()
    x0 = np.asarray(x0, dtype=DTYPE)
    xN = np.asarray(xN, dtype=DTYPE)
    if x0.shape != tuple(rep.input_shape):
        raise ConfigurationError(f"endpoint shape {x0.shape} does not match representation input {rep.input_shape}")
    diag = Diagnostics()
    path = init_linear(x0, xN, cfg.n_steps)
    diag.initial_rep_energy = rep_energy(path, rep)
    try:
        path, e_rep = minimize_rep_energy(path, rep, cfg)
    except DivergenceError as err:
        err.diagnostics = diag
        diag.status = "diverged"
        raise
    stats = path_stats(path, rep)
    diag.log(0, stats)
    diag.first_rep_energy = stats["rep_energy"]
    diag.first_pixel_energy = stats["pixel_energy"]
    best_rep = stats["rep_energy"]
    rep_slack = cfg.rep_atol * diag.initial_rep_energy
    e_pix = stats["pixel_energy"]
    stall = 0
    diag.status = "max_outer"
    for it in range(1, cfg.outer_max + 1):
        if e_pix == 0.0:
            diag.status = "converged"
            break
        dr = grad_rep_energy(path, rep)
        dp = grad_pixel_energy(path)
        direction = project_out(dp, dr, cfg.proj_eps)
        scale = np.mean(np.abs(direction[1:-1]))
        if scale <= cfg.proj_eps:
            diag.status = "converged"
            break
        lam = cfg.step / scale if cfg.step_mode == "normalized" else cfg.step
        accepted = rep_ok = False
        for _ in range(cfg.max_backtracks + 1):
            cand = path.copy()
            cand[1:-1] = np.clip(path[1:-1] - lam * direction[1:-1], 0.0, 1.0)
            try:
                cand, e_cand = minimize_rep_energy(cand, rep, cfg, cfg.reproj_iters)
            except DivergenceError as err:
                err.diagnostics = diag
                diag.status = "diverged"
                raise
            rep_ok = e_cand <= best_rep * (1.0 + cfg.rep_tol) + rep_slack
            if rep_ok and pixel_energy(cand) < e_pix:
                accepted = True
                break
            diag.rejected_steps += 1
            lam *= 0.5
        if not accepted:
            if not rep_ok:
                diag.status = "reprojection_failed"
                raise ReprojectionError(
                    f"outer iteration {it}: representational energy {e_cand:.6g} could not be restored "
                    f"to within {cfg.rep_tol:.2%} of {best_rep:.6g}",
                    diagnostics=diag,
                    path=path,
                )
            diag.status = "converged"
            break
        path = cand
        stats = path_stats(path, rep)
        diag.log(it, stats)
        best_rep = min(best_rep, stats["rep_energy"])
        rel = (e_pix - stats["pixel_energy"]) / e_pix
        e_pix = stats["pixel_energy"]
        logger.debug("outer %d: E_rep=%.6g E_pix=%.6g", it, stats["rep_energy"], e_pix)
        if callback is not None:
            callback(it, path, stats)
        stall = stall + 1 if rel < cfg.outer_tol else 0
        if stall >= cfg.outer_window:
            diag.status = "converged"
            break
    return path, diag
