"""Forward and reverse-mode evaluation of the layers used by image representations.

Tensors are plain ``float64`` numpy arrays. Internally, layers operate on
channel-major batches shaped ``(C, B, H, W)`` so that the im2col matrices of
the convolutions are built from contiguous rows. The functional wrappers
(:func:`forward`, :func:`vjp`, ``*_forward``) take a single ``(C, H, W)``
image or a ``(B, C, H, W)`` batch and handle the transposition.

Each layer exposes

* ``output_shape(shape)`` for a ``(C, H, W)`` input shape,
* ``forward(x)`` returning the output batch,
* ``trace(x)`` returning ``(y, ctx)`` where ``ctx`` holds whatever the
  backward pass needs,
* ``backward(ctx, g)`` returning the vector-Jacobian product.

Subgradient conventions: the rectifier passes gradient only where ``x > 0``;
max pooling routes the cotangent to the first row-major argmax of each block.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

DTYPE = np.float64

L2POOL_EPS = 1e-10
FOURIER_GUARD = 1e-12


class ConfigurationError(ValueError):
    """Raised when layer parameters and input shapes are incompatible."""


def to_channel_major(x: np.ndarray) -> tuple[np.ndarray, bool]:
    """(C, H, W) or (B, C, H, W) -> (C, B, H, W), plus a flag for single images."""
    x = np.asarray(x, dtype=DTYPE)
    if x.ndim == 3:
        return x[:, None], True
    if x.ndim != 4:
        raise ConfigurationError(f"expected (C, H, W) or (B, C, H, W) tensor, got shape {x.shape}")
    return np.ascontiguousarray(x.transpose(1, 0, 2, 3)), False


def from_channel_major(y: np.ndarray, single: bool) -> np.ndarray:
    return y[:, 0] if single else np.ascontiguousarray(y.transpose(1, 0, 2, 3))


# ---------------------------------------------------------------------------
# strided correlation helpers


def _pad_amounts(size: int, k: int, stride: int, padding: str) -> tuple[int, int, int]:
    """Return (pad_before, pad_after, out_size) along one axis."""
    if padding == "valid":
        if size < k:
            raise ConfigurationError(f"spatial extent {size} smaller than window {k}")
        return 0, 0, (size - k) // stride + 1
    if padding == "same":
        out = -(-size // stride)
        total = max((out - 1) * stride + k - size, 0)
        return total // 2, total - total // 2, out
    raise ConfigurationError(f"unknown padding policy {padding!r}")


def _pad2d(x: np.ndarray, ph: tuple[int, int], pw: tuple[int, int]) -> np.ndarray:
    if ph == (0, 0) and pw == (0, 0):
        return x
    return np.pad(x, ((0, 0), (0, 0), ph, pw))


def _windows(xp: np.ndarray, kh: int, kw: int, stride: int, ho: int, wo: int) -> np.ndarray:
    """View of shape (B, C, ho, wo, kh, kw)."""
    v = sliding_window_view(xp, (kh, kw), axis=(2, 3))
    return v[:, :, : (ho - 1) * stride + 1 : stride, : (wo - 1) * stride + 1 : stride]


def _scatter_windows(dwin: np.ndarray, padded_shape, stride: int) -> np.ndarray:
    """Adjoint of :func:`_windows`: accumulate (B, C, ho, wo, kh, kw) into the padded input."""
    _, _, ho, wo, kh, kw = dwin.shape
    out = np.zeros(padded_shape, dtype=DTYPE)
    for i in range(kh):
        for j in range(kw):
            out[:, :, i : i + (ho - 1) * stride + 1 : stride, j : j + (wo - 1) * stride + 1 : stride] += dwin[
                :, :, :, :, i, j
            ]
    return out


# ---------------------------------------------------------------------------
# layers


class Layer:
    kind = "layer"

    def output_shape(self, shape):
        return tuple(shape)

    def forward(self, x: np.ndarray) -> np.ndarray:
        return self.trace(x)[0]

    def trace(self, x: np.ndarray):
        raise NotImplementedError

    def backward(self, ctx, g: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def params(self) -> dict:
        return {}


class Identity(Layer):
    kind = "identity"

    def trace(self, x):
        return x, None

    def backward(self, ctx, g):
        return g


class HalfWave(Layer):
    kind = "halfwave"

    def trace(self, x):
        mask = x > 0
        return np.maximum(x, 0.0), mask

    def backward(self, mask, g):
        return g * mask


@dataclass(eq=False)
class Conv2d(Layer):
    """Cross-correlation with a filter bank of shape (F, C, kh, kw)."""

    filters: np.ndarray
    stride: int = 1
    padding: str = "same"
    kind = "conv2d"

    def __post_init__(self):
        self.filters = np.asarray(self.filters, dtype=DTYPE)
        if self.filters.ndim != 4:
            raise ConfigurationError(f"filters must be (F, C, kh, kw), got {self.filters.shape}")
        if self.stride < 1:
            raise ConfigurationError(f"stride must be >= 1, got {self.stride}")
        if self.padding not in ("same", "valid"):
            raise ConfigurationError(f"unknown padding policy {self.padding!r}")

    def _pad_amounts(self, shape):
        _, kh, kw = self.filters.shape[1:]
        h, w = shape[1], shape[2]
        return _pad_amounts(h, kh, self.stride, self.padding), _pad_amounts(w, kw, self.stride, self.padding)

    def output_shape(self, shape):
        c = shape[0]
        if c != self.filters.shape[1]:
            raise ConfigurationError(
                f"conv2d expects {self.filters.shape[1]} input channels, got {c} (input shape {tuple(shape)})"
            )
        (_, _, ho), (_, _, wo) = self._pad_amounts(shape)
        return (self.filters.shape[0], ho, wo)

    def trace(self, x):
        c, b, h, w = x.shape
        f, _, kh, kw = self.filters.shape
        self.output_shape((c, h, w))
        (pt, pb, ho), (pl, pr, wo) = self._pad_amounts((c, h, w))
        xp = _pad2d(x, (pt, pb), (pl, pr))
        win = _windows(xp, kh, kw, self.stride, ho, wo)
        cols = win.transpose(0, 4, 5, 1, 2, 3).reshape(c * kh * kw, b * ho * wo)
        y = self.filters.reshape(f, -1) @ cols
        return y.reshape(f, b, ho, wo), (xp.shape, (pt, pl, h, w), ho, wo)

    def backward(self, ctx, g):
        pshape, (pt, pl, h, w), ho, wo = ctx
        f, c, kh, kw = self.filters.shape
        b = g.shape[1]
        dcols = self.filters.reshape(f, -1).T @ g.reshape(f, -1)
        dcols = dcols.reshape(c, kh, kw, b, ho, wo)
        s = self.stride
        dxp = np.zeros(pshape, dtype=DTYPE)
        for i in range(kh):
            for j in range(kw):
                dxp[:, :, i : i + (ho - 1) * s + 1 : s, j : j + (wo - 1) * s + 1 : s] += dcols[:, i, j]
        return dxp[:, :, pt : pt + h, pl : pl + w]

    def params(self):
        return {"weights": self.filters.tolist(), "stride": self.stride, "padding": self.padding}


@dataclass(eq=False)
class MaxPool(Layer):
    extent: int = 2
    stride: int = 2
    kind = "maxpool"

    def output_shape(self, shape):
        c, h, w = shape
        if h < self.extent or w < self.extent:
            raise ConfigurationError(f"maxpool extent {self.extent} exceeds spatial size {h}x{w}")
        return (c, (h - self.extent) // self.stride + 1, (w - self.extent) // self.stride + 1)

    def trace(self, x):
        c, b, h, w = x.shape
        _, ho, wo = self.output_shape((c, h, w))
        k, s = self.extent, self.stride
        if k == s:
            blocks = x[:, :, : ho * k, : wo * k].reshape(c, b, ho, k, wo, k).transpose(0, 1, 2, 4, 3, 5)
            blocks = blocks.reshape(c, b, ho, wo, k * k)
        else:
            blocks = _windows(x, k, k, s, ho, wo).reshape(c, b, ho, wo, k * k)
        idx = np.argmax(blocks, axis=-1)
        y = np.take_along_axis(blocks, idx[..., None], axis=-1)[..., 0]
        return y, (x.shape, idx)

    def backward(self, ctx, g):
        shape, idx = ctx
        k, s = self.extent, self.stride
        c, b, ho, wo = idx.shape
        if k == s:
            blocks = np.zeros((c, b, ho, wo, k * k), dtype=DTYPE)
            np.put_along_axis(blocks, idx[..., None], g[..., None], axis=-1)
            dx = np.zeros(shape, dtype=DTYPE)
            dx[:, :, : ho * k, : wo * k] = (
                blocks.reshape(c, b, ho, wo, k, k).transpose(0, 1, 2, 4, 3, 5).reshape(c, b, ho * k, wo * k)
            )
            return dx
        dx = np.zeros(shape, dtype=DTYPE)
        for i in range(k):
            for j in range(k):
                dx[:, :, i : i + (ho - 1) * s + 1 : s, j : j + (wo - 1) * s + 1 : s] += np.where(
                    idx == i * k + j, g, 0.0
                )
        return dx

    def params(self):
        return {"extent": self.extent, "stride": self.stride}


def hanning_kernel(size: int) -> np.ndarray:
    """Separable unit-sum Hanning window ``w(i) w(j)`` with ``w(i) = 0.5 (1 - cos(2 pi i / (M - 1)))``."""
    w = hanning_taps(size)
    return np.outer(w, w)


def hanning_taps(size: int) -> np.ndarray:
    if size == 1:
        return np.ones(1, dtype=DTYPE)
    i = np.arange(size, dtype=DTYPE)
    w = 0.5 * (1.0 - np.cos(2.0 * np.pi * i / (size - 1)))
    return w / w.sum()


def strided_filter_matrix(taps: np.ndarray, size: int, stride: int, padding: str = "same") -> np.ndarray:
    """Dense ``(out, size)`` matrix of a zero-padded 1-D strided correlation."""
    before, _, out = _pad_amounts(size, taps.size, stride, padding)
    m = np.zeros((out, size), dtype=DTYPE)
    for o in range(out):
        for k, t in enumerate(taps):
            i = o * stride + k - before
            if 0 <= i < size:
                m[o, i] += t
    return m


@dataclass(eq=False)
class L2Pool(Layer):
    """``sqrt(g * x**2 + eps)`` subsampled by ``stride``; zero "same" padding.

    Rank-one kernels (the Hanning windows) are applied as a pair of banded
    matrices, one per spatial axis.
    """

    kernel: np.ndarray
    stride: int = 2
    eps: float = L2POOL_EPS
    padding: str = "same"
    kind = "l2pool"

    def __post_init__(self):
        g = np.asarray(self.kernel, dtype=DTYPE)
        if g.ndim != 2:
            raise ConfigurationError(f"l2pool kernel must be 2-D, got shape {g.shape}")
        if np.any(g < 0):
            raise ConfigurationError("l2pool kernel has negative entries")
        if abs(g.sum() - 1.0) > 1e-9:
            raise ConfigurationError(f"l2pool kernel must sum to 1, sums to {g.sum():.12g}")
        if not self.eps > 0:
            raise ConfigurationError("l2pool eps must be positive")
        self.kernel = g
        self._taps = None
        self._mats = {}
        u, sv, vt = np.linalg.svd(g)
        if sv.size == 1 or sv[1] <= 1e-13 * sv[0]:
            a, b = u[:, 0] * np.sqrt(sv[0]), vt[0] * np.sqrt(sv[0])
            if a.sum() < 0:
                a, b = -a, -b
            self._taps = (np.abs(a), np.abs(b))

    def _geometry(self, h, w):
        kh, kw = self.kernel.shape
        return _pad_amounts(h, kh, self.stride, self.padding), _pad_amounts(w, kw, self.stride, self.padding)

    def _matrices(self, h, w):
        if (h, w) not in self._mats:
            a, b = self._taps
            self._mats[h, w] = (
                strided_filter_matrix(a, h, self.stride, self.padding),
                np.ascontiguousarray(strided_filter_matrix(b, w, self.stride, self.padding).T),
            )
        return self._mats[h, w]

    def output_shape(self, shape):
        c, h, w = shape
        (_, _, ho), (_, _, wo) = self._geometry(h, w)
        return (c, ho, wo)

    def trace(self, x):
        _, _, h, w = x.shape
        sq = x * x
        if self._taps is not None:
            mh, mwt = self._matrices(h, w)
            y = np.sqrt(mh @ (sq @ mwt) + self.eps)
            return y, (x, y, None)
        (pt, pb, ho), (pl, pr, wo) = self._geometry(h, w)
        sq = _pad2d(sq, (pt, pb), (pl, pr))
        kh, kw = self.kernel.shape
        win = _windows(sq, kh, kw, self.stride, ho, wo)
        y = np.sqrt(np.einsum("cbhwij,ij->cbhw", win, self.kernel, optimize=True) + self.eps)
        return y, (x, y, (sq.shape, pt, pl))

    def backward(self, ctx, g):
        x, y, geom = ctx
        r = g / (2.0 * y)
        _, _, h, w = x.shape
        if geom is None:
            mh, mwt = self._matrices(h, w)
            dsq = (mh.T @ r) @ mwt.T
        else:
            pshape, pt, pl = geom
            dsq = _scatter_windows(r[..., None, None] * self.kernel, pshape, self.stride)[:, :, pt : pt + h, pl : pl + w]
        return 2.0 * x * dsq

    def params(self):
        return {"kernel": self.kernel.tolist(), "stride": self.stride, "eps": self.eps, "padding": self.padding}


@dataclass(eq=False)
class FourierMagnitude(Layer):
    """Per-channel modulus of the unnormalized 2-D DFT."""

    guard: float = FOURIER_GUARD
    kind = "fourier_magnitude"

    def trace(self, x):
        spec = np.fft.fft2(x, axes=(-2, -1))
        mag = np.abs(spec)
        safe = mag >= self.guard
        phase = np.where(safe, spec / np.where(safe, mag, 1.0), 0.0)
        return mag, phase

    def backward(self, phase, g):
        h, w = phase.shape[-2:]
        return np.real(np.fft.ifft2(g * phase, axes=(-2, -1))) * (h * w)


@dataclass(eq=False)
class AffinePreprocess(Layer):
    """``y[c] = scale * x[perm[c]] - means[c]``."""

    scale: float
    permutation: list = field(default_factory=list)
    means: list = field(default_factory=list)
    kind = "affine_preprocess"

    def __post_init__(self):
        perm = list(self.permutation)
        if sorted(perm) != list(range(len(perm))):
            raise ConfigurationError(f"channel permutation {perm} is not a bijection")
        if len(self.means) != len(perm):
            raise ConfigurationError(f"{len(self.means)} channel means for {len(perm)} channels")
        self._perm = np.asarray(perm, dtype=int)
        self._inv = np.argsort(self._perm)
        self._means = np.asarray(self.means, dtype=DTYPE)

    def output_shape(self, shape):
        if shape[0] != len(self._perm):
            raise ConfigurationError(f"preprocess expects {len(self._perm)} channels, got {shape[0]}")
        return tuple(shape)

    def trace(self, x):
        return self.scale * x[self._perm] - self._means[:, None, None, None], None

    def backward(self, ctx, g):
        return self.scale * g[self._inv]

    def params(self):
        return {"scale": self.scale, "permutation": list(self.permutation), "means": list(self.means)}


# ---------------------------------------------------------------------------
# functional surface


def forward(layer: Layer, x: np.ndarray) -> np.ndarray:
    xc, single = to_channel_major(x)
    layer.output_shape((xc.shape[0],) + xc.shape[2:])
    return from_channel_major(layer.forward(xc), single)


def vjp(layer: Layer, x: np.ndarray, cotangent: np.ndarray) -> np.ndarray:
    """Vector-Jacobian product of ``layer`` at ``x``."""
    xc, single = to_channel_major(x)
    out_shape = tuple(layer.output_shape((xc.shape[0],) + xc.shape[2:]))
    g = np.asarray(cotangent, dtype=DTYPE)
    expected = out_shape if single else (xc.shape[1],) + out_shape
    if g.shape != expected:
        raise ConfigurationError(f"cotangent shape {g.shape} does not match layer output {expected}")
    gc, _ = to_channel_major(g)
    _, ctx = layer.trace(xc)
    return from_channel_major(layer.backward(ctx, gc), single)


def conv2d_forward(x, filters, stride=1, padding="same"):
    return forward(Conv2d(filters, stride, padding), x)


def halfwave_forward(x):
    return forward(HalfWave(), x)


def maxpool_forward(x, extent=2, stride=2):
    return forward(MaxPool(extent, stride), x)


def l2pool_forward(x, g, stride=2, eps=L2POOL_EPS):
    return forward(L2Pool(g, stride, eps), x)


def fourier_magnitude_forward(x):
    return forward(FourierMagnitude(), x)


@dataclass
class GradientReport:
    kind: str
    max_rel_error: float
    tolerance: float

    @property
    def passed(self) -> bool:
        return bool(self.max_rel_error <= self.tolerance)


def gradient_check(layer: Layer, x: np.ndarray, tolerance: float = 1e-4, step: float = 1e-5,
                   n_probes: int = 3, seed: int = 0) -> GradientReport:
    """Compare :func:`vjp` with central finite differences of ``<forward(x), u>``.

    The full gradient of the probe objective is differenced coordinate by
    coordinate, for ``n_probes`` random cotangents ``u``. ``x`` must stay
    clear of rectifier zeros and max-pool ties by more than ``step``.
    """
    rng = np.random.default_rng(seed)
    x = np.asarray(x, dtype=DTYPE)
    y = forward(layer, x)
    worst = 0.0
    for _ in range(n_probes):
        u = rng.standard_normal(y.shape)
        analytic = vjp(layer, x, u)
        numeric = np.empty_like(x)
        flat = x.reshape(-1)
        for i in range(flat.size):
            xp = flat.copy()
            xm = flat.copy()
            xp[i] += step
            xm[i] -= step
            fp = np.vdot(forward(layer, xp.reshape(x.shape)), u)
            fm = np.vdot(forward(layer, xm.reshape(x.shape)), u)
            numeric.reshape(-1)[i] = (fp - fm) / (2 * step)
        err = np.linalg.norm(analytic - numeric) / max(np.linalg.norm(numeric), np.linalg.norm(analytic), 1e-300)
        worst = max(worst, float(err))
    return GradientReport(layer.kind, worst, tolerance)
