"""Image degradations for robustness sweeps on 8-bit panoramic rasters.

Panoramas are periodic in azimuth, so occlusion bands and the blur kernel
wrap around the left/right edges.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import kernels
from .errors import ColumnsOutOfRange, EvenKernel

EFFECT_KINDS = ("noise", "occlusion", "blur")


def _check_raster(img) -> np.ndarray:
    img = np.asarray(img)
    if img.ndim != 2 or img.dtype != np.uint8:
        raise ValueError("expected a 2-D uint8 raster")
    return img


def add_gaussian_noise(img, sigma: float, seed) -> np.ndarray:
    """Add N(0, sigma^2) per pixel, round half-to-even and clip to [0, 255]."""
    img = _check_raster(img)
    if sigma < 0:
        raise ValueError(f"sigma must be >= 0, got {sigma}")
    if sigma == 0:
        return img.copy()
    rng = np.random.default_rng(seed)
    noisy = img + rng.normal(0.0, sigma, size=img.shape)
    return np.clip(np.rint(noisy), 0, 255).astype(np.uint8)


def occlude_columns(img, columns: int, start: int = 0) -> np.ndarray:
    """Black out ``columns`` contiguous columns beginning at ``start``."""
    img = _check_raster(img)
    width = img.shape[1]
    if not 0 <= columns <= width:
        raise ColumnsOutOfRange(f"columns must lie in [0, {width}], got {columns}")
    out = img.copy()
    if columns:
        out[:, (start + np.arange(columns)) % width] = 0
    return out


def motion_blur(img, kernel: int) -> np.ndarray:
    """Horizontal box filter of odd length ``kernel``."""
    img = _check_raster(img)
    if kernel < 1 or kernel % 2 == 0:
        raise EvenKernel(f"kernel must be an odd integer >= 1, got {kernel}")
    if kernel == 1:
        return img.copy()
    return kernels.circular_box_blur(img, kernel)


@dataclass(frozen=True)
class EffectSpec:
    """One degradation and its magnitude.

    ``start=None`` draws the occlusion start column per image from ``seed``.
    """

    kind: str
    sigma: float = 0.0
    columns: int = 0
    start: int | None = None
    kernel: int = 1
    seed: int = 0

    def __post_init__(self):
        if self.kind not in EFFECT_KINDS:
            raise ValueError(f"effect kind must be one of {EFFECT_KINDS}, got {self.kind!r}")
        if self.sigma < 0:
            raise ValueError("sigma must be >= 0")
        if self.columns < 0:
            raise ColumnsOutOfRange("columns must be >= 0")
        if self.kernel < 1 or self.kernel % 2 == 0:
            raise EvenKernel(f"kernel must be an odd integer >= 1, got {self.kernel}")

    @property
    def level(self) -> float:
        return {"noise": self.sigma, "occlusion": self.columns, "blur": self.kernel}[self.kind]

    @property
    def is_identity(self) -> bool:
        return {"noise": self.sigma == 0, "occlusion": self.columns == 0, "blur": self.kernel == 1}[self.kind]

    def apply(self, img, index: int = 0) -> np.ndarray:
        """Apply to one image; ``index`` decorrelates per-image randomness."""
        if self.kind == "noise":
            return add_gaussian_noise(img, self.sigma, (self.seed, index))
        if self.kind == "occlusion":
            start = self.start
            if start is None:
                start = int(np.random.default_rng((self.seed, index)).integers(np.asarray(img).shape[1]))
            return occlude_columns(img, self.columns, start)
        return motion_blur(img, self.kernel)


def perturb_records(records, spec: EffectSpec, salt: int = 0):
    """Copies of ``records`` with the effect applied to every raster."""
    out = []
    for i, r in enumerate(records):
        if r.pixels is None:
            raise ValueError(f"record {r.id!r} has no raster to perturb")
        out.append(r.replace(pixels=spec.apply(r.pixels, salt + i), features=None))
    return out
