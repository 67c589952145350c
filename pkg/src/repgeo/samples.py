"""Seeded test images: natural-image crops and synthetic patterns.

Natural crops come from the photographs bundled with scikit-image, converted
to grayscale, block-averaged and cut into square patches.
"""

from __future__ import annotations

import numpy as np

from .diffcore import DTYPE

NATURAL_SOURCES = ("camera", "astronaut", "coffee", "chelsea", "rocket", "immunohistochemistry", "brick", "grass")


def _gray(name: str) -> np.ndarray:
    from skimage import color, data

    img = getattr(data, name)()
    if img.ndim == 3:
        img = color.rgb2gray(img[..., :3])
    else:
        img = img / 255.0
    return np.asarray(img, dtype=DTYPE)


def block_mean(img: np.ndarray, factor: int) -> np.ndarray:
    h, w = (img.shape[0] // factor) * factor, (img.shape[1] // factor) * factor
    return img[:h, :w].reshape(h // factor, factor, w // factor, factor).mean(axis=(1, 3))


def natural_crop(index: int, size: int = 64, seed: int = 0, downsample: int = 3) -> np.ndarray:
    """A ``(1, size, size)`` grayscale crop in [0, 1].

    ``index`` selects the source photograph (cycling), ``seed`` the crop
    position. Crops with too little contrast are rejected and redrawn.
    """
    src = block_mean(_gray(NATURAL_SOURCES[index % len(NATURAL_SOURCES)]), downsample)
    rng = np.random.default_rng([seed, index])
    for _ in range(100):
        r = rng.integers(0, src.shape[0] - size + 1)
        c = rng.integers(0, src.shape[1] - size + 1)
        crop = src[r : r + size, c : c + size]
        if crop.std() > 0.12:
            break
    return np.clip(crop, 0.0, 1.0)[None].copy()


def random_image(shape, seed: int) -> np.ndarray:
    return np.random.default_rng(seed).random(shape)


def smooth_random_image(shape, seed: int, sigma: float = 2.0) -> np.ndarray:
    from scipy import ndimage

    x = np.random.default_rng(seed).standard_normal(shape)
    x = ndimage.gaussian_filter(x, sigma=(0,) * (len(shape) - 2) + (sigma, sigma), mode="wrap")
    x = (x - x.min()) / (x.max() - x.min())
    return x


def disk(size: int = 64, radius: float = 16.0, soft: float = 1.5) -> np.ndarray:
    """Centered soft-edged disk, ``(1, size, size)``."""
    r = np.arange(size) - (size - 1) / 2.0
    yy, xx = np.meshgrid(r, r, indexing="ij")
    d = np.sqrt(xx**2 + yy**2)
    return (0.5 * (1 - np.tanh((d - radius) / soft)))[None]
