"""Composable image representations built from :mod:`repgeo.diffcore` layers.

A :class:`StackSpec` is a JSON-serializable description (layer kinds,
parameters, filter-bank seeds); :func:`build_stack` instantiates it for a
concrete ``(C, H, W)`` input shape.

The ``smallnet_*`` presets are desk-scale stand-ins for a VGG-style network:
up to three stages of (conv -> half-wave -> pool). The first convolution is a
fixed oriented (Gabor) bank in both polarities; deeper convolutions use
seeded Gaussian filters. They mimic the architecture, not the trained weights
of VGG-16, so "stage 3" here is an analogue of VGG's third pooling stage
rather than an equivalent.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field

import numpy as np

from . import diffcore as dc
from .diffcore import ConfigurationError

FILTER_SEED = 20160219

VGG_MEANS_BGR = [104.0, 117.0, 124.0]

# widths and sizes of the three smallnet stages
SMALLNET_WIDTHS = (16, 32, 64)
SMALLNET_KSIZES = (5, 3, 3)
L2_POOL_SIZE = 6


@dataclass
class PreprocessSpec:
    scale: float = 255.0
    channel_permutation: list = field(default_factory=lambda: [2, 1, 0])
    channel_means: list = field(default_factory=lambda: list(VGG_MEANS_BGR))


@dataclass
class StackSpec:
    name: str
    layers: list
    preprocess: PreprocessSpec | None = None
    tap: int | None = None

    def to_dict(self) -> dict:
        d = asdict(self)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "StackSpec":
        pre = d.get("preprocess")
        return cls(
            name=d["name"],
            layers=[dict(layer) for layer in d["layers"]],
            preprocess=PreprocessSpec(**pre) if pre else None,
            tap=d.get("tap"),
        )

    def to_json(self, **kw) -> str:
        return json.dumps(self.to_dict(), **kw)

    @classmethod
    def from_json(cls, text: str) -> "StackSpec":
        return cls.from_dict(json.loads(text))


# ---------------------------------------------------------------------------
# filter banks


def oriented_bank(size: int, n_orient: int = 4, wavelength: float | None = None) -> np.ndarray:
    """Even and odd Gabor filters at ``n_orient`` orientations, both polarities.

    Returns ``(4 * n_orient, size, size)``; each filter is zero-mean with unit
    L2 norm.
    """
    wavelength = wavelength or size / 1.5
    sigma = 0.35 * size
    r = np.arange(size) - (size - 1) / 2.0
    yy, xx = np.meshgrid(r, r, indexing="ij")
    env = np.exp(-(xx**2 + yy**2) / (2 * sigma**2))
    out = []
    for k in range(n_orient):
        th = np.pi * k / n_orient
        u = xx * np.cos(th) + yy * np.sin(th)
        for carrier in (np.cos, np.sin):
            f = env * carrier(2 * np.pi * u / wavelength)
            f -= f.mean()
            f /= np.linalg.norm(f)
            out.extend([f, -f])
    return np.stack(out)


def random_bank(n_filters: int, in_channels: int, size: int, seed: int) -> np.ndarray:
    rng = np.random.default_rng(seed)
    fan_in = in_channels * size * size
    return rng.standard_normal((n_filters, in_channels, size, size)) * np.sqrt(2.0 / fan_in)


def _conv_filters(spec: dict, in_channels: int) -> np.ndarray:
    if "weights" in spec:
        return np.asarray(spec["weights"], dtype=dc.DTYPE)
    bank = spec.get("bank", "random")
    size = int(spec["size"])
    if bank == "gabor":
        g = oriented_bank(size, int(spec.get("n_orient", 4)))
        return np.repeat(g[:, None], in_channels, axis=1) / in_channels
    if bank == "random":
        return random_bank(int(spec["n_filters"]), in_channels, size, int(spec["seed"]))
    if bank == "delta":
        w = np.zeros((in_channels, in_channels, size, size))
        for c in range(in_channels):
            w[c, c, size // 2, size // 2] = 1.0
        return w
    if bank == "box":
        return np.full((int(spec.get("n_filters", 1)), in_channels, size, size), 1.0 / (in_channels * size * size))
    raise ConfigurationError(f"unknown filter bank {bank!r}")


def _pool_kernel(spec: dict) -> np.ndarray:
    if "kernel" in spec:
        return np.asarray(spec["kernel"], dtype=dc.DTYPE)
    window = spec.get("window", "hanning")
    if window != "hanning":
        raise ConfigurationError(f"unknown pooling window {window!r}")
    return dc.hanning_kernel(int(spec["size"]))


def make_layer(spec: dict, in_shape) -> dc.Layer:
    kind = spec["kind"]
    if kind == "identity":
        return dc.Identity()
    if kind == "halfwave":
        return dc.HalfWave()
    if kind == "fourier_magnitude":
        return dc.FourierMagnitude()
    if kind == "conv2d":
        return dc.Conv2d(_conv_filters(spec, in_shape[0]), int(spec.get("stride", 1)), spec.get("padding", "same"))
    if kind == "maxpool":
        return dc.MaxPool(int(spec.get("extent", 2)), int(spec.get("stride", 2)))
    if kind == "l2pool":
        return dc.L2Pool(_pool_kernel(spec), int(spec.get("stride", 2)), float(spec.get("eps", dc.L2POOL_EPS)))
    if kind == "affine_preprocess":
        return dc.AffinePreprocess(float(spec["scale"]), list(spec["permutation"]), list(spec["means"]))
    raise ConfigurationError(f"unknown layer kind {kind!r}")


# ---------------------------------------------------------------------------
# representation


class Representation:
    """An instantiated stack: image ``(C, H, W)`` -> flat response vector."""

    def __init__(self, name: str, layers: list, input_shape, tap: int):
        self.name = name
        self.layers = layers
        self.input_shape = tuple(int(s) for s in input_shape)
        self.tap = tap
        shapes = [self.input_shape]
        for i, layer in enumerate(layers[: tap + 1]):
            try:
                shapes.append(tuple(layer.output_shape(shapes[-1])))
            except ConfigurationError as err:
                raise ConfigurationError(f"layer {i} ({layer.kind}) of stack {name!r}: {err}") from err
        self.shapes = shapes
        self.output_shape = shapes[-1]
        self.dim = int(np.prod(self.output_shape))

    def __repr__(self):
        return f"Representation({self.name!r}, input={self.input_shape}, output={self.output_shape})"

    def _check_batch(self, xs):
        xs = np.asarray(xs, dtype=dc.DTYPE)
        if xs.ndim != 4 or xs.shape[1:] != self.input_shape:
            raise ConfigurationError(f"input shape {xs.shape[1:]} does not match {self.input_shape}")
        return dc.to_channel_major(xs)[0]

    @staticmethod
    def _flatten(h):
        return np.ascontiguousarray(h.transpose(1, 0, 2, 3)).reshape(h.shape[1], -1)

    def evaluate_batch(self, xs: np.ndarray) -> np.ndarray:
        """Responses of a ``(B, C, H, W)`` batch as a ``(B, dim)`` matrix."""
        h = self._check_batch(xs)
        for layer in self.layers[: self.tap + 1]:
            h = layer.forward(h)
        return self._flatten(h)

    def trace_batch(self, xs: np.ndarray):
        """Forward pass keeping what :meth:`backward_batch` needs."""
        h = self._check_batch(xs)
        ctxs = []
        for layer in self.layers[: self.tap + 1]:
            h, ctx = layer.trace(h)
            ctxs.append(ctx)
        return self._flatten(h), ctxs

    def backward_batch(self, ctxs, cotangents: np.ndarray) -> np.ndarray:
        g = np.asarray(cotangents, dtype=dc.DTYPE).reshape((-1,) + self.output_shape)
        g = np.ascontiguousarray(g.transpose(1, 0, 2, 3))
        for layer, ctx in zip(reversed(self.layers[: self.tap + 1]), reversed(ctxs)):
            g = layer.backward(ctx, g)
        return dc.from_channel_major(g, False)

    def pullback_batch(self, xs: np.ndarray, cotangents: np.ndarray) -> np.ndarray:
        _, ctxs = self.trace_batch(xs)
        return self.backward_batch(ctxs, cotangents)

    def evaluate(self, x: np.ndarray) -> np.ndarray:
        return self.evaluate_batch(np.asarray(x)[None])[0]

    def pullback(self, x: np.ndarray, cotangent: np.ndarray) -> np.ndarray:
        """Gradient of ``<f(x), cotangent>`` with respect to ``x``."""
        cot = np.asarray(cotangent, dtype=dc.DTYPE).reshape(-1)
        if cot.size != self.dim:
            raise ConfigurationError(f"cotangent length {cot.size} does not match representation dimension {self.dim}")
        return self.pullback_batch(np.asarray(x)[None], cot[None])[0]


class LinearMapped(Representation):
    """``A @ f(x)`` for a fixed matrix ``A``; a test wrapper for equivariance checks."""

    def __init__(self, base: Representation, matrix: np.ndarray):
        self.base = base
        self.matrix = np.asarray(matrix, dtype=dc.DTYPE)
        if self.matrix.shape[1] != base.dim:
            raise ConfigurationError(f"matrix has {self.matrix.shape[1]} columns, representation has {base.dim}")
        self.name = f"linear({base.name})"
        self.layers = base.layers
        self.input_shape = base.input_shape
        self.tap = base.tap
        self.shapes = base.shapes
        self.output_shape = (self.matrix.shape[0],)
        self.dim = self.matrix.shape[0]

    def evaluate_batch(self, xs):
        return self.base.evaluate_batch(xs) @ self.matrix.T

    def trace_batch(self, xs):
        y, ctxs = self.base.trace_batch(xs)
        return y @ self.matrix.T, ctxs

    def backward_batch(self, ctxs, cotangents):
        g = np.asarray(cotangents, dtype=dc.DTYPE).reshape(-1, self.dim) @ self.matrix
        return self.base.backward_batch(ctxs, g)


def build_stack(spec: StackSpec, input_shape) -> Representation:
    shape = tuple(int(s) for s in input_shape)
    if len(shape) != 3:
        raise ConfigurationError(f"input shape must be (C, H, W), got {shape}")
    layers = []
    if spec.preprocess is not None:
        p = spec.preprocess
        layers.append(dc.AffinePreprocess(p.scale, list(p.channel_permutation), list(p.channel_means)))
    offset = len(layers)
    cur = shape
    for i, lspec in enumerate(spec.layers):
        try:
            layer = make_layer(lspec, cur)
            cur = layer.output_shape(cur)
        except ConfigurationError as err:
            raise ConfigurationError(f"layer {i} ({lspec.get('kind')}) of stack {spec.name!r}: {err}") from err
        layers.append(layer)
    if not layers:
        raise ConfigurationError(f"stack {spec.name!r} has no layers")
    tap = len(spec.layers) - 1 if spec.tap is None else spec.tap
    if not 0 <= tap < len(spec.layers):
        raise ConfigurationError(f"tap index {tap} out of range for {len(spec.layers)} layers")
    return Representation(spec.name, layers, shape, tap + offset)


def evaluate(rep: Representation, x: np.ndarray) -> np.ndarray:
    return rep.evaluate(x)


def pullback(rep: Representation, x: np.ndarray, cotangent: np.ndarray) -> np.ndarray:
    return rep.pullback(x, cotangent)


# ---------------------------------------------------------------------------
# presets


def _stage(index: int, pool: dict) -> list:
    if index == 0:
        conv = {"kind": "conv2d", "bank": "gabor", "size": SMALLNET_KSIZES[0], "n_orient": SMALLNET_WIDTHS[0] // 4}
    else:
        conv = {
            "kind": "conv2d",
            "bank": "random",
            "n_filters": SMALLNET_WIDTHS[index],
            "size": SMALLNET_KSIZES[index],
            "seed": FILTER_SEED + index,
        }
    return [conv, {"kind": "halfwave"}, dict(pool)]


def _smallnet(name: str, pools: list, preprocess: bool) -> StackSpec:
    layers = []
    for i, pool in enumerate(pools):
        layers += _stage(i, pool)
    return StackSpec(name, layers, PreprocessSpec() if preprocess else None)


MAXPOOL = {"kind": "maxpool", "extent": 2, "stride": 2}


def l2pool_spec(size: int = L2_POOL_SIZE) -> dict:
    return {"kind": "l2pool", "window": "hanning", "size": size, "stride": 2}


PRESETS = (
    "pixel",
    "fourier_mag",
    "smallnet_max",
    "smallnet_l2",
    "smallnet_l2_pool1_36",
    "smallnet_l2_pool2_18",
    "conv_only",
)


def preset(name: str, preprocess: bool = False) -> StackSpec:
    """Named stack specification.

    ``preprocess`` prepends the VGG input convention (x255, RGB -> BGR,
    subtract BGR means); it only makes sense for 3-channel inputs.
    """
    if name == "pixel":
        return StackSpec(name, [{"kind": "identity"}])
    if name == "fourier_mag":
        return StackSpec(name, [{"kind": "fourier_magnitude"}])
    if name == "smallnet_max":
        return _smallnet(name, [MAXPOOL] * 3, preprocess)
    if name == "smallnet_l2":
        return _smallnet(name, [l2pool_spec()] * 3, preprocess)
    if name == "smallnet_l2_pool1_36":
        return _smallnet(name, [l2pool_spec(36)], preprocess)
    if name == "smallnet_l2_pool2_18":
        return _smallnet(name, [l2pool_spec(), l2pool_spec(18)], preprocess)
    if name == "conv_only":
        return StackSpec(name, [{"kind": "conv2d", "bank": "random", "n_filters": 4, "size": 5, "seed": FILTER_SEED,
                                 "padding": "valid"}])
    raise ConfigurationError(f"unknown preset {name!r}; choose from {', '.join(PRESETS)}")


def load_stack_spec(ref: str, preprocess: bool = False) -> StackSpec:
    """Preset name or path to a JSON stack specification."""
    if ref in PRESETS:
        return preset(ref, preprocess)
    with open(ref) as fh:
        return StackSpec.from_json(fh.read())
