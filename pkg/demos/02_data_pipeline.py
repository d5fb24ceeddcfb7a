"""Dataset construction end to end, at toy scale.

Simulates volunteers annotating a slice, aggregates their masks into a
consensus, stacks slices into cubes, resizes, and runs the ten-crop
augmentation; then synthesizes a ready-made droplet dataset.
"""

import tempfile
from pathlib import Path

import numpy as np

from tcupgan.pipeline import (
    SynthConfig,
    VolunteerNoise,
    aggregate_consensus,
    resize_cube,
    simulate_volunteers,
    stack_slices,
    synthesize_dataset,
    ten_crop,
)

# --- volunteers and consensus ---------------------------------------------
truth = np.zeros((128, 128), dtype=np.uint8)
truth[30:60, 40:80] = 1
truth[90:110, 20:45] = 1

annotations = simulate_volunteers(truth, k=5, noise=VolunteerNoise(jitter_px=2, miss_prob=0.15),
                                  seed=11)
consensus = aggregate_consensus(annotations)
for a in annotations:
    agree = (a.mask == truth).mean()
    print(f"{a.volunteer_id}: {a.mask.sum():5d} px marked, {agree:.1%} agreement with truth")
print(f"consensus:     {consensus.sum():5d} px, {(consensus == truth).mean():.1%} agreement\n")

# --- stacking, resizing, cropping ------------------------------------------
slices = [np.clip(0.6 - 0.4 * truth + 0.05 * np.random.default_rng(d).random(truth.shape), 0, 1)
          for d in range(10)]
masks = [truth] * 10
image_cube, mask_cube = stack_slices(slices, masks, cube_id="demo")
print(f"stacked cube: {image_cube.voxels.shape}")

big_img = resize_cube(image_cube, 512)
big_mask = resize_cube(mask_cube, 512)
print(f"resized to:   {big_img.voxels.shape} (masks stay binary: "
      f"{sorted(np.unique(big_mask.voxels))})")

crops = ten_crop(big_img, big_mask)
print(f"ten-crop:     {len(crops)} cubes of {crops[0][0].voxels.shape}")
print(f"crop ids:     {[img.cube_id.rsplit('/', 1)[1] for img, _ in crops]}\n")

# --- synthetic dataset --------------------------------------------------------
with tempfile.TemporaryDirectory() as tmp:
    manifest = synthesize_dataset(
        SynthConfig(n_cubes=3, depth=6, size=64, radius_range=(5.0, 12.0),
                    depth_radius_range=(1.0, 2.5), seed=7),
        Path(tmp) / "dataset",
    )
    print(f"synthesized {len(manifest.cubes)} cubes, depth {manifest.slice_depth}")
    for cube, mask in manifest.iter_cubes():
        frac = float(mask.voxels.mean())
        print(f"  {cube.cube_id}: {cube.voxels.shape}, {frac:.1%} foreground")
