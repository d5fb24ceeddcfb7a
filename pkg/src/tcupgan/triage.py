"""Discriminator-guided review triage.

Each predicted slice gets the mean and population variance of its 64 patch
scores; a straight line fitted in that (mean, variance) plane separates
slices whose segmentation is machine-acceptable from slices that need a
human reviewer.  The human-review side is the lower-mean side, and fitting
maximizes balanced accuracy against a Tversky-loss calibration threshold.
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import losses
from .model import PatchScoreGrid, discriminator_forward, generator_forward
from .pipeline import DatasetManifest, save_image_png, save_mask_png


@dataclass
class SliceStats:
    """Per-slice discriminator score statistics (tl only on calibration runs)."""

    cube_id: str
    slice_index: int
    mean: float
    variance: float
    tl: float | None = None

    def __post_init__(self):
        if not 0.0 <= self.mean <= 1.0:
            raise ValueError(f"mean must lie in [0, 1], got {self.mean}")
        if not 0.0 <= self.variance <= 0.25:
            raise ValueError(f"variance of [0,1] scores must lie in [0, 0.25], got {self.variance}")
        if self.tl is not None and not 0.0 <= self.tl <= 1.0:
            raise ValueError(f"tl must lie in [0, 1], got {self.tl}")


@dataclass
class SelectionCut:
    """Linear decision boundary: d = w_mean*mean + w_var*variance + bias;
    d < 0 routes the slice to human review."""

    w_mean: float
    w_var: float
    bias: float
    tl0: float = 0.3

    def __post_init__(self):
        if self.w_mean == 0.0 and self.w_var == 0.0:
            raise ValueError("cut weights must not all be zero")
        if not 0.0 < self.tl0 < 1.0:
            raise ValueError("tl0 must lie in (0, 1)")

    def decision_value(self, mean: float, variance: float) -> float:
        return self.w_mean * mean + self.w_var * variance + self.bias

    def sends_to_humans(self, stats: SliceStats) -> bool:
        return self.decision_value(stats.mean, stats.variance) < 0.0

    def save(self, path) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(json.dumps({
            "w_mean": self.w_mean, "w_var": self.w_var,
            "bias": self.bias, "tl0": self.tl0,
        }, indent=2))
        return path

    @classmethod
    def load(cls, path) -> "SelectionCut":
        d = json.loads(Path(path).read_text())
        return cls(w_mean=d["w_mean"], w_var=d["w_var"], bias=d["bias"], tl0=d["tl0"])


def slice_stats(grid, tl: list[float] | None = None,
                cube_id: str | None = None) -> list[SliceStats]:
    """Mean and population variance of each slice's patch scores.

    Accepts a PatchScoreGrid or a raw (D, gh, gw) array of scores in [0, 1].
    """
    if isinstance(grid, PatchScoreGrid):
        scores3 = grid.scores
        cube_id = cube_id or grid.cube_id
    else:
        scores3 = np.asarray(grid)
        cube_id = cube_id or "cube"
    records = []
    for d in range(scores3.shape[0]):
        scores = scores3[d].astype(np.float64)
        records.append(SliceStats(
            cube_id=cube_id,
            slice_index=d,
            mean=float(scores.mean()),
            variance=float(scores.var()),
            tl=None if tl is None else float(tl[d]),
        ))
    return records


def score_dataset(generator, discriminator, data: DatasetManifest,
                  with_ground_truth: bool = False,
                  tversky: losses.TverskyParams = losses.TverskyParams()) -> list[SliceStats]:
    """Predict every cube, score (image, prediction) pairs patch-wise, and
    collect per-slice statistics; attaches per-slice TL when ground truth
    is requested."""
    stats: list[SliceStats] = []
    for cube, mask in data.iter_cubes():
        pred, _ = generator_forward(generator, cube)
        grid = discriminator_forward(discriminator, cube, pred)
        tl = None
        if with_ground_truth:
            slice_counts = losses.confusion(pred.voxels[..., 0], mask.voxels[..., 0],
                                            granularity="slice")
            tl = [losses.focal_tversky_loss(c, tversky).tl for c in slice_counts]
        stats.extend(slice_stats(grid, tl))
    return stats


def save_stats(stats: list[SliceStats], path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w") as fh:
        for s in stats:
            rec = {"cube_id": s.cube_id, "slice_index": s.slice_index,
                   "mean": s.mean, "variance": s.variance}
            if s.tl is not None:
                rec["tl"] = s.tl
            fh.write(json.dumps(rec) + "\n")
    return path


def load_stats(path) -> list[SliceStats]:
    out = []
    for line in Path(path).read_text().splitlines():
        if line.strip():
            d = json.loads(line)
            out.append(SliceStats(cube_id=d["cube_id"], slice_index=int(d["slice_index"]),
                                  mean=d["mean"], variance=d["variance"], tl=d.get("tl")))
    return out


def _balanced_accuracy_split(proj: np.ndarray, is_human: np.ndarray):
    """Best threshold for 'human iff projection < t' by balanced accuracy.

    Returns (best_ba, best_t); scans realizable splits of the sorted
    projections, so the result does not depend on input order.
    """
    order = np.argsort(proj, kind="stable")
    p_sorted = proj[order]
    h_sorted = is_human[order].astype(np.int64)
    n = len(p_sorted)
    n_human = int(h_sorted.sum())
    n_machine = n - n_human

    human_below = np.concatenate([[0], np.cumsum(h_sorted)])  # humans among k smallest
    best_ba, best_t = -1.0, 0.0
    for k in range(n + 1):
        if 0 < k < n and not p_sorted[k - 1] < p_sorted[k]:
            continue  # split not realizable by a threshold
        tpr = human_below[k] / n_human
        tnr = ((n_machine - (k - human_below[k]))) / n_machine
        ba = (tpr + tnr) / 2.0
        if ba > best_ba:
            best_ba = ba
            if k == 0:
                best_t = float(p_sorted[0] - 1.0)
            elif k == n:
                best_t = float(p_sorted[-1] + 1.0)
            else:
                best_t = float((p_sorted[k - 1] + p_sorted[k]) / 2.0)
    return best_ba, best_t


def fit_selection_cut(stats: list[SliceStats], tl0: float = 0.3) -> SelectionCut:
    """Fit the linear boundary by coarse-to-fine grid search over angle and
    offset, maximizing balanced accuracy of 'tl >= tl0 -> send to humans'.

    The angle is restricted so the mean-score coefficient stays positive:
    the human-review side is always the lower-mean side.
    """
    labeled = [s for s in stats if s.tl is not None]
    if len(labeled) < 100:
        raise ValueError(f"need at least 100 calibration records with tl, got {len(labeled)}")
    mean = np.array([s.mean for s in labeled])
    var = np.array([s.variance for s in labeled])
    is_human = np.array([s.tl >= tl0 for s in labeled])
    if is_human.all() or not is_human.any():
        raise ValueError(
            "calibration needs both classes: "
            f"{int(is_human.sum())} of {len(labeled)} records have tl >= {tl0}"
        )

    # variance spans a much narrower range than mean; search the angle of the
    # normal vector (cos t, sin t) with cos t > 0
    best = (-1.0, 0.0, 0.0)  # (ba, theta, t)
    span = 89.0
    center = 0.0
    for step_deg in (2.0, 0.2, 0.02):
        lo = max(center - span, -89.9)
        hi = min(center + span, 89.9)
        for theta_deg in np.arange(lo, hi + 1e-9, step_deg):
            theta = np.deg2rad(theta_deg)
            proj = np.cos(theta) * mean + np.sin(theta) * var
            ba, t = _balanced_accuracy_split(proj, is_human)
            if ba > best[0]:
                best = (ba, theta_deg, t)
        center = best[1]
        span = step_deg

    _, theta_deg, t = best
    theta = np.deg2rad(theta_deg)
    return SelectionCut(w_mean=float(np.cos(theta)), w_var=float(np.sin(theta)),
                        bias=float(-t), tl0=tl0)


@dataclass
class TriageSelection:
    """apply_cut output: the slices to send to humans plus the summary."""

    selected: list[SliceStats]
    decision_values: dict[tuple[str, int], float]
    summary: dict

    def save_summary(self, path) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(json.dumps(self.summary, indent=2))
        return path


def apply_cut(stats: list[SliceStats], cut: SelectionCut) -> TriageSelection:
    """Slices with decision value < 0 go to human review."""
    decisions = {(s.cube_id, s.slice_index): cut.decision_value(s.mean, s.variance)
                 for s in stats}
    selected = [s for s in stats if decisions[(s.cube_id, s.slice_index)] < 0.0]
    n_total, n_selected = len(stats), len(selected)
    summary = {
        "n_total": n_total,
        "n_selected": n_selected,
        "reduction_fraction": 1.0 - n_selected / n_total if n_total else 1.0,
    }
    return TriageSelection(selected=selected, decision_values=decisions, summary=summary)


def _safe_name(cube_id: str) -> str:
    return re.sub(r"[^A-Za-z0-9_.-]", "__", cube_id)


def export_review_queue(selection: TriageSelection, data: DatasetManifest,
                        generator, discriminator, out_dir) -> Path:
    """Write the human-review queue: JSON-lines ordered worst-first plus
    per-slice image, machine-mask, and patch-heatmap PNGs."""
    if not selection.selected:
        raise ValueError("selection is empty; nothing to export")
    out_dir = Path(out_dir)
    assets = out_dir / "assets"
    assets.mkdir(parents=True, exist_ok=True)

    by_cube: dict[str, list[SliceStats]] = {}
    for s in selection.selected:
        by_cube.setdefault(s.cube_id, []).append(s)

    records = []
    for cube_id, slices in by_cube.items():
        cube, _ = data.load_cube(cube_id)
        pred, _ = generator_forward(generator, cube)
        grid = discriminator_forward(discriminator, cube, pred)
        for s in slices:
            d = s.slice_index
            stem = f"{_safe_name(cube_id)}_{d:03d}"
            image_rel = f"assets/{stem}_image.png"
            mask_rel = f"assets/{stem}_mask.png"
            heat_rel = f"assets/{stem}_heatmap.png"
            save_image_png(out_dir / image_rel, cube.voxels[d, :, :, 0])
            save_mask_png(out_dir / mask_rel, pred.voxels[d, :, :, 0] >= 0.5)
            _save_heatmap_png(out_dir / heat_rel, grid.scores[d], cube.size)
            records.append({
                "cube_id": cube_id,
                "slice_index": d,
                "mean": s.mean,
                "variance": s.variance,
                "decision_value": selection.decision_values[(cube_id, d)],
                "image": image_rel,
                "machine_mask": mask_rel,
                "heatmap": heat_rel,
            })

    records.sort(key=lambda r: (r["decision_value"], r["cube_id"], r["slice_index"]))
    queue_path = out_dir / "queue.jsonl"
    with open(queue_path, "w") as fh:
        for rec in records:
            fh.write(json.dumps(rec) + "\n")
    selection.save_summary(out_dir / "summary.json")
    return queue_path


def _save_heatmap_png(path, grid_scores: np.ndarray, size: int) -> None:
    """Upsample the patch grid to slice size with hard cell boundaries."""
    cell = size // grid_scores.shape[0]
    heat = np.kron(grid_scores.astype(np.float64), np.ones((cell, cell)))
    save_image_png(path, heat)
