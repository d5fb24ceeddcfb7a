import json

import numpy as np
import pytest
import torch

from tcupgan.model import (
    ConvLSTMUNet,
    DiscriminatorConfig,
    GeneratorConfig,
    PatchDiscriminator,
    PatchScoreGrid,
)
from tcupgan.pipeline import SynthConfig, load_mask_png, synthesize_dataset
from tcupgan.triage import (
    SelectionCut,
    SliceStats,
    apply_cut,
    export_review_queue,
    fit_selection_cut,
    load_stats,
    save_stats,
    score_dataset,
    slice_stats,
)


class TestSliceStats:
    def test_constant_half_grid(self):
        grid = PatchScoreGrid(np.full((3, 8, 8), 0.5), cube_id="c")
        stats = slice_stats(grid)
        assert len(stats) == 3
        for s in stats:
            assert s.mean == 0.5 and s.variance == 0.0

    def test_symmetric_extreme_row(self):
        row = np.zeros((1, 8, 8))
        row.ravel()[:32] = 1.0
        s = slice_stats(row)[0]
        assert s.mean == 0.5 and s.variance == 0.25

    def test_matches_two_pass_oracle(self):
        rng = np.random.default_rng(0)
        grid = PatchScoreGrid(rng.uniform(0.01, 0.99, (5, 8, 8)), cube_id="c")
        stats = slice_stats(grid)
        for d, s in enumerate(stats):
            vals = [float(v) for v in grid.scores[d].ravel()]
            mean = sum(vals) / len(vals)
            var = sum((v - mean) ** 2 for v in vals) / len(vals)
            assert abs(s.mean - mean) < 1e-12
            assert abs(s.variance - var) < 1e-12

    def test_stats_jsonl_round_trip(self, tmp_path):
        stats = [SliceStats("a", 0, 0.4, 0.01, tl=0.2), SliceStats("b", 3, 0.9, 0.002)]
        save_stats(stats, tmp_path / "stats.jsonl")
        back = load_stats(tmp_path / "stats.jsonl")
        assert back == stats

    def test_range_validation(self):
        with pytest.raises(ValueError, match="variance"):
            SliceStats("c", 0, mean=0.5, variance=0.3)
        with pytest.raises(ValueError, match="mean"):
            SliceStats("c", 0, mean=1.5, variance=0.1)


def synthetic_calibration(n=400, seed=0):
    """Stats where tl = 1 - mean exactly; variance is uninformative noise."""
    rng = np.random.default_rng(seed)
    stats = []
    for i in range(n):
        mean = float(rng.uniform(0.0, 1.0))
        stats.append(SliceStats(
            cube_id=f"c{i:04d}", slice_index=0,
            mean=mean, variance=float(rng.uniform(0.0, 0.02)),
            tl=1.0 - mean,
        ))
    return stats


class TestFitSelectionCut:
    def test_recovers_closed_form_mean_threshold(self):
        stats = synthetic_calibration()
        cut = fit_selection_cut(stats, tl0=0.3)
        for s in stats:
            closed_form_human = s.mean <= 1.0 - 0.3
            assert cut.sends_to_humans(s) == closed_form_human

    def test_separable_clusters_reach_perfect_balanced_accuracy(self):
        rng = np.random.default_rng(1)
        stats = []
        for i in range(200):
            # machine-acceptable cluster: high mean, low variance, low tl
            stats.append(SliceStats(f"m{i}", 0, float(rng.uniform(0.7, 0.95)),
                                    float(rng.uniform(0.0, 0.01)), tl=float(rng.uniform(0.0, 0.2))))
            # human cluster: low mean, higher variance, high tl
            stats.append(SliceStats(f"h{i}", 0, float(rng.uniform(0.1, 0.4)),
                                    float(rng.uniform(0.02, 0.1)), tl=float(rng.uniform(0.5, 1.0))))
        cut = fit_selection_cut(stats, tl0=0.3)
        for s in stats:
            assert cut.sends_to_humans(s) == (s.tl >= 0.3)

    def test_shuffle_invariance(self):
        stats = synthetic_calibration(seed=3)
        cut_a = fit_selection_cut(stats, tl0=0.3)
        shuffled = list(stats)
        np.random.default_rng(9).shuffle(shuffled)
        cut_b = fit_selection_cut(shuffled, tl0=0.3)
        for s in stats:
            assert cut_a.sends_to_humans(s) == cut_b.sends_to_humans(s)

    def test_orientation_keeps_mean_coefficient_positive(self):
        cut = fit_selection_cut(synthetic_calibration(seed=5), tl0=0.3)
        assert cut.w_mean > 0.0
        # raising the mean can only move a slice toward the machine side
        s = SliceStats("x", 0, 0.2, 0.01)
        if not cut.sends_to_humans(s):
            assert not cut.sends_to_humans(SliceStats("x", 0, 0.9, 0.01))

    def test_too_few_records_rejected(self):
        with pytest.raises(ValueError, match="at least 100"):
            fit_selection_cut(synthetic_calibration(n=50), tl0=0.3)

    def test_single_class_rejected(self):
        stats = [SliceStats(f"c{i}", 0, 0.9, 0.001, tl=0.05) for i in range(150)]
        with pytest.raises(ValueError, match="both classes"):
            fit_selection_cut(stats, tl0=0.3)

    def test_records_without_tl_are_ignored(self):
        stats = synthetic_calibration(n=150, seed=7)
        stats += [SliceStats(f"u{i}", 0, 0.5, 0.01) for i in range(100)]
        cut = fit_selection_cut(stats, tl0=0.3)
        assert isinstance(cut, SelectionCut)


class TestApplyCut:
    def test_degenerate_cut_selects_nothing(self):
        stats = [SliceStats(f"c{i}", 0, 0.1, 0.01) for i in range(10)]
        cut = SelectionCut(w_mean=1.0, w_var=0.0, bias=10.0)
        sel = apply_cut(stats, cut)
        assert sel.summary == {"n_total": 10, "n_selected": 0, "reduction_fraction": 1.0}

    def test_reduction_fraction_exact(self):
        stats = [SliceStats(f"c{i}", 0, 0.1 if i < 3 else 0.9, 0.0) for i in range(10)]
        cut = SelectionCut(w_mean=1.0, w_var=0.0, bias=-0.5)
        sel = apply_cut(stats, cut)
        assert sel.summary["n_selected"] == 3
        assert sel.summary["reduction_fraction"] == 1.0 - 3 / 10

    def test_pure_function(self):
        stats = [SliceStats(f"c{i}", 0, i / 10, 0.001) for i in range(1, 10)]
        cut = SelectionCut(w_mean=1.0, w_var=0.5, bias=-0.4)
        a = apply_cut(stats, cut)
        b = apply_cut(stats, cut)
        assert [s.cube_id for s in a.selected] == [s.cube_id for s in b.selected]
        assert a.summary == b.summary

    def test_cut_validation(self):
        with pytest.raises(ValueError, match="zero"):
            SelectionCut(w_mean=0.0, w_var=0.0, bias=1.0)
        with pytest.raises(ValueError, match="tl0"):
            SelectionCut(w_mean=1.0, w_var=0.0, bias=0.0, tl0=1.5)

    def test_cut_json_round_trip(self, tmp_path):
        cut = SelectionCut(w_mean=0.8, w_var=-0.6, bias=-0.3, tl0=0.25)
        cut.save(tmp_path / "cut.json")
        assert SelectionCut.load(tmp_path / "cut.json") == cut


@pytest.fixture(scope="module")
def scored_setup(tmp_path_factory):
    out = tmp_path_factory.mktemp("triage_data")
    manifest = synthesize_dataset(
        SynthConfig(n_cubes=2, depth=4, size=64, radius_range=(5.0, 12.0),
                    depth_radius_range=(1.0, 2.0), seed=9), out)
    torch.manual_seed(0)
    gen = ConvLSTMUNet(GeneratorConfig(widths=(2, 4)))
    disc = PatchDiscriminator(DiscriminatorConfig(widths=(2, 2, 2, 2)))
    return manifest, gen, disc


class TestScoreDataset:
    def test_cardinality_and_ranges(self, scored_setup):
        manifest, gen, disc = scored_setup
        stats = score_dataset(gen, disc, manifest)
        assert len(stats) == 2 * 4
        for s in stats:
            assert 0.0 <= s.mean <= 1.0 and 0.0 <= s.variance <= 0.25
            assert s.tl is None

    def test_ground_truth_attaches_tl(self, scored_setup):
        manifest, gen, disc = scored_setup
        stats = score_dataset(gen, disc, manifest, with_ground_truth=True)
        assert all(s.tl is not None and 0.0 <= s.tl <= 1.0 for s in stats)

    def test_determinism(self, scored_setup):
        manifest, gen, disc = scored_setup
        a = score_dataset(gen, disc, manifest, with_ground_truth=True)
        b = score_dataset(gen, disc, manifest, with_ground_truth=True)
        assert a == b


class TestExportQueue:
    def test_export_assets_and_ordering(self, scored_setup, tmp_path):
        manifest, gen, disc = scored_setup
        stats = score_dataset(gen, disc, manifest)
        cut = SelectionCut(w_mean=1.0, w_var=0.0, bias=-1.0)  # selects everything
        selection = apply_cut(stats, cut)
        assert len(selection.selected) == 8

        queue_path = export_review_queue(selection, manifest, gen, disc, tmp_path / "q")
        lines = [json.loads(l) for l in queue_path.read_text().splitlines()]
        assert len(lines) == 8
        assert len(list((tmp_path / "q" / "assets").iterdir())) == 24  # 3 per slice

        values = [r["decision_value"] for r in lines]
        assert values == sorted(values)
        keys = [(r["decision_value"], r["cube_id"], r["slice_index"]) for r in lines]
        assert keys == sorted(keys)

        for rec in lines:
            for key in ("image", "machine_mask", "heatmap"):
                assert (tmp_path / "q" / rec[key]).exists()

        summary = json.loads((tmp_path / "q" / "summary.json").read_text())
        assert summary["n_selected"] == 8

    def test_heatmap_quantization_matches_grid(self, scored_setup, tmp_path):
        from tcupgan.model import discriminator_forward, generator_forward
        from PIL import Image

        manifest, gen, disc = scored_setup
        stats = score_dataset(gen, disc, manifest)
        selection = apply_cut(stats, SelectionCut(w_mean=1.0, w_var=0.0, bias=-1.0))
        export_review_queue(selection, manifest, gen, disc, tmp_path / "q")

        cube, _ = manifest.load_cube(manifest.cubes[0].cube_id)
        pred, _ = generator_forward(gen, cube)
        grid = discriminator_forward(disc, cube, pred)
        rec = [json.loads(l) for l in (tmp_path / "q" / "queue.jsonl").read_text().splitlines()
               if json.loads(l)["cube_id"] == cube.cube_id][0]
        heat = np.asarray(Image.open(tmp_path / "q" / rec["heatmap"]), dtype=np.float64) / 255.0
        d = rec["slice_index"]
        assert abs(heat.max() - grid.scores[d].max()) <= 1.0 / 255.0
        assert abs(heat.min() - grid.scores[d].min()) <= 1.0 / 255.0

    def test_machine_mask_is_binary_png(self, scored_setup, tmp_path):
        manifest, gen, disc = scored_setup
        stats = score_dataset(gen, disc, manifest)
        selection = apply_cut(stats, SelectionCut(w_mean=1.0, w_var=0.0, bias=-1.0))
        queue_path = export_review_queue(selection, manifest, gen, disc, tmp_path / "q")
        rec = json.loads(queue_path.read_text().splitlines()[0])
        mask = load_mask_png(tmp_path / "q" / rec["machine_mask"])
        assert set(np.unique(mask)) <= {0.0, 1.0}

    def test_empty_selection_rejected(self, scored_setup, tmp_path):
        manifest, gen, disc = scored_setup
        stats = score_dataset(gen, disc, manifest)
        selection = apply_cut(stats, SelectionCut(w_mean=1.0, w_var=0.0, bias=10.0))
        with pytest.raises(ValueError, match="empty"):
            export_review_queue(selection, manifest, gen, disc, tmp_path / "q")
