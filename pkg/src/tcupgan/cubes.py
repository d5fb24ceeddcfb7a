"""Volumetric data containers: image cubes and their segmentation masks.

A cube is a depth-ordered stack of square 2D grayscale slices with layout
(D, H, W, 1) and float32 values in [0, 1].  Ground-truth masks are strictly
binary; machine predictions are soft probabilities.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

CUBE_LAYOUT = "(depth, height, width, channels=1)"


def _check_voxels(voxels: np.ndarray) -> np.ndarray:
    voxels = np.asarray(voxels, dtype=np.float32)
    if voxels.ndim == 3:
        voxels = voxels[..., np.newaxis]
    if voxels.ndim != 4 or voxels.shape[-1] != 1:
        raise ValueError(
            f"cube voxels must have layout {CUBE_LAYOUT}, got shape {voxels.shape}"
        )
    d, h, w, _ = voxels.shape
    if d < 1:
        raise ValueError("cube depth must be >= 1")
    if h != w:
        raise ValueError(f"cube slices must be square, got {h}x{w}")
    if not np.isfinite(voxels).all():
        raise ValueError("cube voxels must be finite")
    return voxels


def _default_slice_ids(cube_id: str, depth: int) -> list[str]:
    return [f"{cube_id}/{i:03d}" for i in range(depth)]


@dataclass
class ImageCube:
    """Stack of grayscale slices, values normalized to [0, 1]."""

    voxels: np.ndarray
    cube_id: str = "cube"
    slice_ids: list[str] = field(default_factory=list)

    def __post_init__(self):
        self.voxels = _check_voxels(self.voxels)
        lo, hi = float(self.voxels.min()), float(self.voxels.max())
        if lo < 0.0 or hi > 1.0:
            raise ValueError(f"image voxels must lie in [0, 1], got range [{lo}, {hi}]")
        if not self.slice_ids:
            self.slice_ids = _default_slice_ids(self.cube_id, self.depth)
        if len(self.slice_ids) != self.depth:
            raise ValueError("need exactly one slice id per depth slice")

    @property
    def depth(self) -> int:
        return self.voxels.shape[0]

    @property
    def size(self) -> int:
        return self.voxels.shape[1]


@dataclass
class MaskCube:
    """Binary {0, 1} ground-truth segmentation aligned to an ImageCube."""

    voxels: np.ndarray
    cube_id: str = "cube"

    def __post_init__(self):
        self.voxels = _check_voxels(self.voxels)
        if not np.isin(self.voxels, (0.0, 1.0)).all():
            raise ValueError("ground-truth mask voxels must be exactly 0 or 1")

    @property
    def depth(self) -> int:
        return self.voxels.shape[0]

    @property
    def size(self) -> int:
        return self.voxels.shape[1]


@dataclass
class PredictionCube:
    """Soft machine-predicted segmentation, probabilities in [0, 1]."""

    voxels: np.ndarray
    cube_id: str = "cube"

    def __post_init__(self):
        self.voxels = _check_voxels(self.voxels)
        lo, hi = float(self.voxels.min()), float(self.voxels.max())
        if lo < 0.0 or hi > 1.0:
            raise ValueError(f"predicted voxels must lie in [0, 1], got range [{lo}, {hi}]")

    @property
    def depth(self) -> int:
        return self.voxels.shape[0]

    @property
    def size(self) -> int:
        return self.voxels.shape[1]


def check_same_shape(a, b, what: str = "cube/mask") -> None:
    if a.voxels.shape != b.voxels.shape:
        raise ValueError(
            f"{what} shapes differ: {a.voxels.shape} vs {b.voxels.shape}"
        )
