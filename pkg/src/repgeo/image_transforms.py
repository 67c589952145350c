"""Ground-truth geometric transformation sequences.

Frames are resampled from the source image at each fraction of the total
transformation (never by iterating a warp), so interpolation blur does not
compound along a sequence. Coordinates follow array convention: rows grow
downward, and a positive rotation angle turns the image content
counter-clockwise as displayed.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np
from scipy import ndimage

from .diffcore import DTYPE, ConfigurationError

_MODES = {"circular": "grid-wrap", "zero": "grid-constant", "reflect": "reflect"}
_ORDERS = {"bilinear": 1, "bicubic": 3}
_DEFAULT_BOUNDARY = {"translate": "circular", "rotate": "zero", "dilate": "zero"}


@dataclass
class TransformSpec:
    """``magnitude`` is ``[dx, dy]`` pixels, degrees, or a scale factor."""

    kind: str
    magnitude: object
    center: tuple | None = None
    boundary: str | None = None
    interpolation: str = "bicubic"

    def __post_init__(self):
        if self.kind not in _DEFAULT_BOUNDARY:
            raise ConfigurationError(f"unknown transform kind {self.kind!r}")
        if self.boundary is None:
            self.boundary = _DEFAULT_BOUNDARY[self.kind]
        if self.boundary not in _MODES:
            raise ConfigurationError(f"unknown boundary policy {self.boundary!r}")
        if self.interpolation not in _ORDERS:
            raise ConfigurationError(f"unknown interpolation {self.interpolation!r}")
        if self.kind == "translate":
            mag = np.atleast_1d(np.asarray(self.magnitude, dtype=float))
            if mag.size == 1:
                mag = np.array([mag[0], 0.0])
            if mag.size != 2:
                raise ConfigurationError(f"translation needs [dx, dy], got {self.magnitude!r}")
            self.magnitude = [float(mag[0]), float(mag[1])]
        elif self.kind == "rotate":
            self.magnitude = float(self.magnitude)
            if not -180.0 < self.magnitude <= 180.0:
                raise ConfigurationError(f"rotation must lie in (-180, 180], got {self.magnitude}")
        else:
            self.magnitude = float(self.magnitude)
            if not self.magnitude > 0:
                raise ConfigurationError(f"dilation factor must be positive, got {self.magnitude}")
        if self.center is not None:
            self.center = tuple(float(c) for c in self.center)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "TransformSpec":
        return cls(**d)

    def is_identity_at(self, fraction: float) -> bool:
        if fraction == 0:
            return True
        if self.kind == "translate":
            return self.magnitude == [0.0, 0.0]
        if self.kind == "rotate":
            return self.magnitude == 0.0
        return self.magnitude == 1.0


def _source_coords(spec: TransformSpec, h: int, w: int, fraction: float):
    """Input-image sampling positions (row, col) for every output pixel."""
    rows, cols = np.meshgrid(np.arange(h, dtype=DTYPE), np.arange(w, dtype=DTYPE), indexing="ij")
    if spec.kind == "translate":
        dx, dy = spec.magnitude
        return rows - fraction * dy, cols - fraction * dx
    cy, cx = spec.center if spec.center is not None else ((h - 1) / 2.0, (w - 1) / 2.0)
    ry, rx = rows - cy, cols - cx
    if spec.kind == "rotate":
        th = np.deg2rad(fraction * spec.magnitude)
        # inverse of a counter-clockwise (displayed) rotation with rows pointing down
        c, s = np.cos(th), np.sin(th)
        return cy + c * ry + s * rx, cx - s * ry + c * rx
    scale = spec.magnitude**fraction
    return cy + ry / scale, cx + rx / scale


def apply(spec: TransformSpec, x: np.ndarray, fraction: float = 1.0) -> np.ndarray:
    """Resample ``x`` (``(H, W)`` or ``(C, H, W)``) under ``fraction`` of the transform."""
    x = np.asarray(x, dtype=DTYPE)
    if x.ndim not in (2, 3):
        raise ConfigurationError(f"expected (H, W) or (C, H, W) image, got shape {x.shape}")
    if spec.is_identity_at(fraction):
        return np.clip(x, 0.0, 1.0)
    h, w = x.shape[-2:]
    if spec.kind == "translate" and spec.boundary == "circular":
        shift = [fraction * m for m in spec.magnitude]
        if all(float(s).is_integer() for s in shift):
            return np.clip(np.roll(x, (int(shift[1]), int(shift[0])), axis=(-2, -1)), 0.0, 1.0)
    coords = np.stack(_source_coords(spec, h, w, fraction))
    order, mode = _ORDERS[spec.interpolation], _MODES[spec.boundary]
    planes = x.reshape(-1, h, w)
    out = np.stack([ndimage.map_coordinates(p, coords, order=order, mode=mode, cval=0.0) for p in planes])
    return np.clip(out.reshape(x.shape), 0.0, 1.0)


def ground_truth_path(spec: TransformSpec, x0: np.ndarray, n_steps: int) -> np.ndarray:
    """Frames ``apply(spec, x0, n / N)`` for ``n = 0..N``, stacked on axis 0."""
    if n_steps < 1:
        raise ConfigurationError(f"n_steps must be >= 1, got {n_steps}")
    return np.stack([apply(spec, x0, n / n_steps) for n in range(n_steps + 1)])


def incremental(spec: TransformSpec, x0: np.ndarray, n_steps: int) -> np.ndarray:
    """``n_steps``-fold iterated application of the ``1 / n_steps`` increment."""
    x = np.asarray(x0, dtype=DTYPE)
    for _ in range(n_steps):
        x = apply(spec, x, 1.0 / n_steps)
    return x


STANDARD_TRANSFORMS = {
    "translate": TransformSpec("translate", [8.0, 0.0]),
    "rotate": TransformSpec("rotate", 4.0),
    "dilate": TransformSpec("dilate", 1.10),
}
