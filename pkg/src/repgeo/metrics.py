"""Path diagnostics: deviation profiles, temporal slices, receptive fields, RMSE."""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass

import numpy as np

from .diffcore import DTYPE, ConfigurationError

# relative slack for L**2 <= N E when steps are equal up to rounding
CS_RELATIVE_SLACK = 1e-12


@dataclass
class DeviationProfile:
    """Per-frame position along, and distance from, the chord joining the endpoint responses.

    Both coordinates are in units of the endpoint separation.
    """

    arc: np.ndarray
    deviation: np.ndarray

    @property
    def max_deviation(self) -> float:
        return float(np.max(self.deviation))

    @property
    def knots(self):
        return list(zip(self.arc.tolist(), self.deviation.tolist()))

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["frame", "arc_position", "deviation"])
        for n, (a, d) in enumerate(self.knots):
            w.writerow([n, repr(a), repr(d)])
        return buf.getvalue()


def deviation_profile_from_reps(reps: np.ndarray) -> DeviationProfile:
    reps = np.asarray(reps, dtype=DTYPE)
    chord = reps[-1] - reps[0]
    length = np.linalg.norm(chord)
    if length == 0:
        raise ConfigurationError("endpoint representations coincide; deviation profile undefined")
    unit = chord / length
    rel = reps - reps[0]
    par = rel @ unit
    perp = np.linalg.norm(rel - np.outer(par, unit), axis=1)
    arc, dev = par / length, perp / length
    # the endpoints lie on the chord by construction
    arc[0], dev[0], arc[-1], dev[-1] = 0.0, 0.0, 1.0, 0.0
    return DeviationProfile(arc, dev)


def deviation_profile(path, rep) -> DeviationProfile:
    return deviation_profile_from_reps(rep.evaluate_batch(np.asarray(path, dtype=DTYPE)))


def temporal_slice(path, axis: str, index: int) -> np.ndarray:
    """Stack one pixel row (or column) of every frame.

    For ``axis="row"`` the result is ``(C, N + 1, W)`` with frame ``n`` in row
    ``n``; for ``axis="column"`` it is ``(C, H, N + 1)`` with frame ``n`` in
    column ``n``.
    """
    path = np.asarray(path, dtype=DTYPE)
    if path.ndim != 4:
        raise ConfigurationError(f"path must be (N + 1, C, H, W), got {path.shape}")
    _, _, h, w = path.shape
    if axis == "row":
        if not 0 <= index < h:
            raise ConfigurationError(f"row index {index} out of range [0, {h})")
        return np.ascontiguousarray(path[:, :, index, :].transpose(1, 0, 2))
    if axis == "column":
        if not 0 <= index < w:
            raise ConfigurationError(f"column index {index} out of range [0, {w})")
        return np.ascontiguousarray(path[:, :, :, index].transpose(1, 2, 0))
    raise ConfigurationError(f"axis must be 'row' or 'column', got {axis!r}")


def path_rmse(path, reference) -> np.ndarray:
    path = np.asarray(path, dtype=DTYPE)
    reference = np.asarray(reference, dtype=DTYPE)
    if path.shape != reference.shape:
        raise ConfigurationError(f"path shapes differ: {path.shape} vs {reference.shape}")
    return np.sqrt(np.mean((path - reference) ** 2, axis=tuple(range(1, path.ndim))))


def cauchy_schwarz_holds(rep_length: float, rep_energy: float, n_steps: int) -> bool:
    return rep_length**2 <= n_steps * rep_energy * (1 + CS_RELATIVE_SLACK)


# ---------------------------------------------------------------------------
# receptive fields


@dataclass
class RFMap:
    grid: np.ndarray
    size_estimate: float
    center: tuple


def _square_coverage(grid: np.ndarray, center, side: float) -> float:
    """Fraction of ``grid`` mass inside an axis-aligned square (pixels are unit cells)."""
    h, w = grid.shape
    half = side / 2.0

    def overlap(n, c):
        lo = np.arange(n) - 0.5
        return np.clip(np.minimum(lo + 1, c + half) - np.maximum(lo, c - half), 0.0, 1.0)

    return float(overlap(h, center[0]) @ grid @ overlap(w, center[1]))


def rf_size(grid: np.ndarray, mass: float = 0.95) -> tuple[float, tuple]:
    """Side of the smallest integer square, centered on the map centroid, holding ``mass`` of the total."""
    total = grid.sum()
    if total <= 0:
        raise ConfigurationError("receptive-field map has no mass")
    p = grid / total
    rows, cols = np.arange(grid.shape[0]), np.arange(grid.shape[1])
    center = (float(p.sum(axis=1) @ rows), float(p.sum(axis=0) @ cols))
    limit = 2 * max(grid.shape)
    for side in range(1, limit + 1):
        if _square_coverage(p, center, side) >= mass - 1e-12:
            return float(side), center
    return float(limit), center


def receptive_field(rep, location, n_noise: int = 256, seed: int = 0, chunk: int = 8) -> RFMap:
    """Average |gradient| of a spatial column of the tapped layer over uniform white noise.

    ``location`` is a ``(row, col)`` index into the spatial grid of the
    representation's output. Per-unit absolute gradient maps are averaged
    over the column's channels and the noise draws (summed over input
    channels), in a fixed order so results are reproducible bit for bit.
    """
    shape = rep.output_shape
    if len(shape) != 3:
        raise ConfigurationError(f"representation output {shape} has no spatial grid")
    n_units, gh, gw = shape
    i, j = location
    if not (0 <= i < gh and 0 <= j < gw):
        raise ConfigurationError(f"location {location} outside the {gh}x{gw} output grid")
    if n_noise < 1:
        raise ConfigurationError("n_noise must be >= 1")
    rng = np.random.default_rng(seed)
    cot = np.zeros((n_units,) + tuple(shape))
    cot[np.arange(n_units), np.arange(n_units), i, j] = 1.0
    cot = cot.reshape(n_units, -1)
    acc = np.zeros(rep.input_shape[1:], dtype=DTYPE)
    done = 0
    while done < n_noise:
        k = min(chunk, n_noise - done)
        noise = rng.random((k,) + tuple(rep.input_shape))
        xs = np.repeat(noise, n_units, axis=0)
        g = rep.pullback_batch(xs, np.tile(cot, (k, 1)))
        for img in np.abs(g).sum(axis=1).reshape(k, n_units, *acc.shape):
            acc += img.sum(axis=0)
        done += k
    grid = acc / (n_noise * n_units)
    size, center = rf_size(grid)
    return RFMap(grid, size, center)
