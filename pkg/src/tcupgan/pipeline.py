"""Dataset construction: volunteer-mask aggregation, cube assembly,
augmentation, and synthetic desk-scale data with simulated volunteers.

On disk a dataset is a directory with ``manifest.json`` plus 8-bit grayscale
PNG slices and {0, 255} PNG masks; manifest paths are relative to the
manifest's directory.
"""

from __future__ import annotations

import json
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from PIL import Image
from scipy import ndimage

from .cubes import ImageCube, MaskCube, check_same_shape

MANIFEST_NAME = "manifest.json"
MANIFEST_VERSION = "1"


# --- PNG helpers ------------------------------------------------------------


def save_image_png(path, slice01: np.ndarray) -> None:
    arr = np.round(np.asarray(slice01, dtype=np.float64) * 255.0).astype(np.uint8)
    Image.fromarray(arr, mode="L").save(path)


def save_mask_png(path, mask01: np.ndarray) -> None:
    arr = (np.asarray(mask01) > 0.5).astype(np.uint8) * 255
    Image.fromarray(arr, mode="L").save(path)


def load_image_png(path) -> np.ndarray:
    img = Image.open(path)
    if img.mode != "L":
        raise ValueError(f"{path}: expected 8-bit grayscale PNG, got mode {img.mode}")
    return np.asarray(img, dtype=np.float32) / 255.0


def load_mask_png(path) -> np.ndarray:
    img = Image.open(path)
    if img.mode != "L":
        raise ValueError(f"{path}: expected 8-bit grayscale PNG, got mode {img.mode}")
    arr = np.asarray(img)
    if not np.isin(arr, (0, 255)).all():
        raise ValueError(f"{path}: mask PNG must contain only 0 and 255")
    return (arr == 255).astype(np.float32)


# --- volunteer annotations ----------------------------------------------------


@dataclass
class AnnotationRecord:
    """One volunteer's binary mask for one slice of a cube."""

    cube_id: str
    slice_index: int
    volunteer_id: str
    mask: np.ndarray
    created_at: float = field(default_factory=time.time)

    def __post_init__(self):
        self.mask = (np.asarray(self.mask) > 0.5).astype(np.uint8)
        if self.mask.ndim != 2:
            raise ValueError("annotation mask must be 2D")
        if self.slice_index < 0:
            raise ValueError("slice_index must be >= 0")


def aggregate_consensus(annotations: list[AnnotationRecord]) -> np.ndarray:
    """Per-pixel majority vote; a pixel is set iff marked by >= 50% of
    volunteers (so exact ties round up). Returns a {0, 1} uint8 mask."""
    if not annotations:
        raise ValueError("consensus needs at least one annotation")
    shape = annotations[0].mask.shape
    for a in annotations[1:]:
        if a.mask.shape != shape:
            raise ValueError(
                f"annotation dimensions differ: {a.mask.shape} vs {shape}"
            )
    votes = np.zeros(shape, dtype=np.int64)
    for a in annotations:
        votes += a.mask
    return (2 * votes >= len(annotations)).astype(np.uint8)


# --- cube assembly ------------------------------------------------------------


def _normalize01(arr: np.ndarray) -> np.ndarray:
    arr = np.asarray(arr)
    if arr.dtype == np.uint8:
        return arr.astype(np.float32) / 255.0
    return arr.astype(np.float32)


def _mask01(arr: np.ndarray) -> np.ndarray:
    # accepts {0,1} of any dtype or {0,255} bytes
    arr = np.asarray(arr, dtype=np.float32)
    if arr.max() > 1.0:
        arr = arr / 255.0
    return (arr > 0.5).astype(np.float32)


def stack_slices(slices, masks, cube_id: str = "cube") -> tuple[ImageCube, MaskCube]:
    """Stack ordered 2D slices/masks into a paired (ImageCube, MaskCube)."""
    if len(slices) != len(masks):
        raise ValueError(f"{len(slices)} slices vs {len(masks)} masks")
    if not slices:
        raise ValueError("cannot stack zero slices")
    shape = np.asarray(slices[0]).shape
    for s in list(slices) + list(masks):
        if np.asarray(s).shape != shape:
            raise ValueError(f"ragged slice dimensions: {np.asarray(s).shape} vs {shape}")
    img = np.stack([_normalize01(s) for s in slices], axis=0)
    msk = np.stack([_mask01(m) for m in masks], axis=0)
    return ImageCube(img, cube_id=cube_id), MaskCube(msk, cube_id=cube_id)


def unstack(cube) -> list[np.ndarray]:
    return [cube.voxels[d, :, :, 0].copy() for d in range(cube.depth)]


def _resample_axis(arr: np.ndarray, target: int, axis: int) -> np.ndarray:
    src = arr.shape[axis]
    if target == src:
        return arr
    coords = (np.arange(target) + 0.5) * (src / target) - 0.5
    coords = np.clip(coords, 0.0, src - 1.0)
    lo = np.floor(coords).astype(np.int64)
    hi = np.minimum(lo + 1, src - 1)
    shape = [1] * arr.ndim
    shape[axis] = target
    frac = (coords - lo).reshape(shape)
    a = np.take(arr, lo, axis=axis)
    b = np.take(arr, hi, axis=axis)
    # lerp form keeps constants exact
    return a + (b - a) * frac


def _bilinear(slice2d: np.ndarray, target: int) -> np.ndarray:
    out = _resample_axis(slice2d.astype(np.float64), target, axis=0)
    out = _resample_axis(out, target, axis=1)
    return out


def resize_cube(cube, target: int):
    """Resize every slice to target x target, depth unchanged.

    Images are bilinear-interpolated; masks are bilinear-interpolated and
    re-thresholded at 0.5 so they stay binary.
    """
    if target < 8:
        raise ValueError("resize target must be >= 8")
    is_mask = isinstance(cube, MaskCube)
    out = np.empty((cube.depth, target, target, 1), dtype=np.float32)
    for d in range(cube.depth):
        r = _bilinear(cube.voxels[d, :, :, 0], target)
        if is_mask:
            out[d, :, :, 0] = (r >= 0.5).astype(np.float32)
        else:
            out[d, :, :, 0] = np.clip(r, 0.0, 1.0)
    if is_mask:
        return MaskCube(out, cube_id=cube.cube_id)
    return ImageCube(out, cube_id=cube.cube_id)


TEN_CROP_INPUT = 512
TEN_CROP_SIZE = 256
# (row, col) corner offsets: top-left, top-right, bottom-left, bottom-right, center
TEN_CROP_OFFSETS = ((0, 0), (0, 256), (256, 0), (256, 256), (128, 128))


def ten_crop(image: ImageCube, mask: MaskCube) -> list[tuple[ImageCube, MaskCube]]:
    """Five overlapping 256-crops of a 512x512 pair plus the vertical flip
    (row-axis reversal) of each, image and mask transformed identically."""
    check_same_shape(image, mask)
    if image.size != TEN_CROP_INPUT:
        raise ValueError(
            f"ten_crop expects {TEN_CROP_INPUT}x{TEN_CROP_INPUT} slices, got {image.size}"
        )
    s = TEN_CROP_SIZE
    views = []
    for r, c in TEN_CROP_OFFSETS:
        views.append((image.voxels[:, r:r + s, c:c + s, :], mask.voxels[:, r:r + s, c:c + s, :]))
    flipped = [(iv[:, ::-1, :, :], mv[:, ::-1, :, :]) for iv, mv in views]
    pairs = []
    for i, (iv, mv) in enumerate(views + flipped):
        cid = f"{image.cube_id}/crop{i}"
        pairs.append((ImageCube(iv.copy(), cube_id=cid), MaskCube(mv.copy(), cube_id=cid)))
    return pairs


# --- dataset manifest ----------------------------------------------------------


@dataclass
class CubeEntry:
    cube_id: str
    slices: list[str]
    masks: list[str]


@dataclass
class DatasetManifest:
    """Index of a dataset directory; slice/mask paths are relative to root."""

    cubes: list[CubeEntry]
    slice_depth: int
    notes: list[str] = field(default_factory=list)
    version: str = MANIFEST_VERSION
    root: Path | None = None

    def save(self, directory) -> Path:
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        payload = {
            "version": self.version,
            "slice_depth": self.slice_depth,
            "notes": self.notes,
            "cubes": [
                {"cube_id": c.cube_id, "slices": c.slices, "masks": c.masks}
                for c in self.cubes
            ],
        }
        path = directory / MANIFEST_NAME
        path.write_text(json.dumps(payload, indent=2))
        self.root = directory
        return path

    @classmethod
    def load(cls, path) -> "DatasetManifest":
        path = Path(path)
        if path.is_dir():
            path = path / MANIFEST_NAME
        data = json.loads(path.read_text())
        manifest = cls(
            cubes=[CubeEntry(c["cube_id"], list(c["slices"]), list(c["masks"])) for c in data["cubes"]],
            slice_depth=int(data["slice_depth"]),
            notes=list(data.get("notes", [])),
            version=str(data.get("version", MANIFEST_VERSION)),
            root=path.parent,
        )
        manifest.validate()
        return manifest

    def validate(self) -> None:
        if self.root is None:
            raise ValueError("manifest has no root directory")
        seen = set()
        for c in self.cubes:
            if c.cube_id in seen:
                raise ValueError(f"duplicate cube_id {c.cube_id}")
            seen.add(c.cube_id)
            if len(c.slices) != self.slice_depth or len(c.masks) != self.slice_depth:
                raise ValueError(
                    f"cube {c.cube_id} must list exactly {self.slice_depth} slices and masks"
                )
            for rel in c.slices + c.masks:
                p = self.root / rel
                if not p.exists():
                    raise ValueError(f"missing dataset file: {p}")

    def entry(self, cube_id: str) -> CubeEntry:
        for c in self.cubes:
            if c.cube_id == cube_id:
                return c
        raise KeyError(cube_id)

    def load_cube(self, entry) -> tuple[ImageCube, MaskCube]:
        if isinstance(entry, str):
            entry = self.entry(entry)
        slices = [load_image_png(self.root / p) for p in entry.slices]
        masks = [load_mask_png(self.root / p) for p in entry.masks]
        img = np.stack(slices)[..., np.newaxis]
        msk = np.stack(masks)[..., np.newaxis]
        cube = ImageCube(img, cube_id=entry.cube_id)
        return cube, MaskCube(msk, cube_id=entry.cube_id)

    def iter_cubes(self):
        for entry in self.cubes:
            yield self.load_cube(entry)


# --- synthetic data --------------------------------------------------------------


@dataclass(frozen=True)
class SynthConfig:
    """Geometry and randomness knobs for the synthetic droplet dataset.

    The background sits near 0.62; intensities close to that make faint
    droplets that are genuinely hard to segment.
    """

    n_cubes: int = 20
    depth: int = 10
    size: int = 256
    droplets_per_cube: tuple[int, int] = (3, 8)
    radius_range: tuple[float, float] = (10.0, 32.0)
    depth_radius_range: tuple[float, float] = (1.5, 4.0)
    intensity_range: tuple[float, float] = (0.12, 0.32)
    noise_sigma: float = 0.015
    seed: int = 0

    def __post_init__(self):
        if self.seed is None:
            raise ValueError("a seed is mandatory for reproducibility")
        if self.radius_range[1] >= self.size:
            raise ValueError(
                f"droplet radius {self.radius_range[1]} exceeds slice size {self.size}"
            )


def _inside_ellipsoid(zz, yy, xx, center, radii):
    cz, cy, cx = center
    rz, ry, rx = radii
    return (
        ((zz - cz) / rz) ** 2 + ((yy - cy) / ry) ** 2 + ((xx - cx) / rx) ** 2
    ) <= 1.0


def rasterize_droplets(depth: int, size: int, droplets: list[dict]) -> np.ndarray:
    """Voxel mask of a droplet list: 1 where the ellipsoid inequality holds."""
    zz, yy, xx = np.meshgrid(
        np.arange(depth, dtype=np.float64),
        np.arange(size, dtype=np.float64),
        np.arange(size, dtype=np.float64),
        indexing="ij",
    )
    mask = np.zeros((depth, size, size), dtype=bool)
    for d in droplets:
        mask |= _inside_ellipsoid(zz, yy, xx, d["center"], d["radii"])
    return mask.astype(np.float32)


def synthesize_dataset(config: SynthConfig, out_dir) -> DatasetManifest:
    """Write a seeded synthetic dataset of dark ellipsoidal droplets on a
    textured background; persists droplet geometry for independent checks."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    entries = []
    geometry = {}
    lo, hi = config.droplets_per_cube
    for i in range(config.n_cubes):
        rng = np.random.default_rng([config.seed, i])
        cube_id = f"synth{i:04d}"
        n_droplets = int(rng.integers(lo, hi + 1))
        droplets = []
        for _ in range(n_droplets):
            droplets.append({
                "center": [
                    float(rng.uniform(0, config.depth - 1)),
                    float(rng.uniform(0, config.size - 1)),
                    float(rng.uniform(0, config.size - 1)),
                ],
                "radii": [
                    float(rng.uniform(*config.depth_radius_range)),
                    float(rng.uniform(*config.radius_range)),
                    float(rng.uniform(*config.radius_range)),
                ],
                "intensity": float(rng.uniform(*config.intensity_range)),
            })

        mask = rasterize_droplets(config.depth, config.size, droplets)
        coarse = rng.normal(0.0, 1.0, size=(config.depth, config.size, config.size))
        texture = ndimage.gaussian_filter(coarse, sigma=(0.5, 12.0, 12.0))
        texture = 0.08 * texture / max(float(np.abs(texture).max()), 1e-9)
        image = 0.62 + texture + rng.normal(0.0, config.noise_sigma, size=mask.shape)
        for d in droplets:
            inside = rasterize_droplets(config.depth, config.size, [d]).astype(bool)
            image[inside] = d["intensity"] + 0.03 * (image[inside] - 0.62)
        image = np.clip(image, 0.0, 1.0)

        cube_dir = out_dir / cube_id
        cube_dir.mkdir(exist_ok=True)
        slice_paths, mask_paths = [], []
        for d in range(config.depth):
            sp = f"{cube_id}/slice_{d:03d}.png"
            mp = f"{cube_id}/mask_{d:03d}.png"
            save_image_png(out_dir / sp, image[d])
            save_mask_png(out_dir / mp, mask[d])
            slice_paths.append(sp)
            mask_paths.append(mp)
        entries.append(CubeEntry(cube_id, slice_paths, mask_paths))
        geometry[cube_id] = droplets

    manifest = DatasetManifest(
        cubes=entries,
        slice_depth=config.depth,
        notes=[f"synthetic droplets, seed={config.seed}, n_cubes={config.n_cubes}"],
    )
    manifest.save(out_dir)
    (out_dir / "geometry.json").write_text(json.dumps(geometry, indent=2))
    return manifest


# --- simulated volunteers ----------------------------------------------------------


@dataclass(frozen=True)
class VolunteerNoise:
    """Boundary jitter in pixels plus per-component miss probability."""

    jitter_px: int = 1
    miss_prob: float = 0.1


def simulate_volunteers(mask: np.ndarray, k: int, noise: VolunteerNoise, seed: int,
                        cube_id: str = "cube", slice_index: int = 0) -> list[AnnotationRecord]:
    """k noisy copies of a mask: every connected component is independently
    dropped with miss_prob, kept components are dilated/eroded by a random
    radius in [-jitter_px, jitter_px]."""
    if k < 1:
        raise ValueError("need at least one volunteer")
    mask = (np.asarray(mask) > 0.5)
    labels, n_comp = ndimage.label(mask)
    structure = ndimage.generate_binary_structure(2, 1)
    records = []
    for v in range(k):
        rng = np.random.default_rng([seed, v])
        out = np.zeros_like(mask)
        for comp in range(1, n_comp + 1):
            if rng.random() < noise.miss_prob:
                continue
            component = labels == comp
            r = int(rng.integers(-noise.jitter_px, noise.jitter_px + 1))
            if r > 0:
                component = ndimage.binary_dilation(component, structure, iterations=r)
            elif r < 0:
                component = ndimage.binary_erosion(component, structure, iterations=-r)
            out |= component
        records.append(AnnotationRecord(
            cube_id=cube_id,
            slice_index=slice_index,
            volunteer_id=f"volunteer{v:03d}",
            mask=out.astype(np.uint8),
        ))
    return records
