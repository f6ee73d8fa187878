import json
from dataclasses import replace

import pytest

from helpers import tiny_config
from memefuse import TrainConfig, generate_synthetic, published_grid, train
from memefuse.errors import ConfigError
from memefuse.experiments import ablate, grid_search


def quick_tc(**overrides):
    base = dict(lr=1e-3, epochs=2, batch_size=8, seed=0)
    base.update(overrides)
    return TrainConfig(**base)


class TestPublishedGrid:
    def test_enumerates_64_points(self):
        points = published_grid()
        assert len(points) == 2 * 2 * 2 * 2 * 2 * 2 == 64

    def test_axis_values(self):
        points = published_grid()
        assert {tc.lr for _, tc in points} == {1e-4, 1e-5}
        assert {tc.epochs for _, tc in points} == {16, 32}
        assert {mc.alpha for mc, _ in points} == {0.2, 0.8}
        assert {mc.d_model for mc, _ in points} == {512, 1024}
        assert {(mc.n_heads, mc.ff_dim, mc.n_layers) for mc, _ in points} == {
            (4, 512, 1), (16, 2048, 3)}
        assert {(mc.decoder_dim, mc.decoder_heads, mc.decoder_ff, mc.decoder_layers)
                for mc, _ in points} == {(64, 4, 64, 1), (256, 16, 256, 3)}

    def test_points_are_distinct(self):
        points = published_grid()
        keys = {(tc.lr, tc.epochs, mc.alpha, mc.d_model, mc.n_heads, mc.decoder_dim)
                for mc, tc in points}
        assert len(keys) == 64

    def test_batch_size_default_32(self):
        assert all(tc.batch_size == 32 for _, tc in published_grid())


class TestConfigInvariants:
    def test_zero_epochs_forbidden(self):
        with pytest.raises(ConfigError):
            TrainConfig(epochs=0).validate()

    def test_zero_lr_forbidden(self):
        with pytest.raises(ConfigError):
            TrainConfig(lr=0).validate()


class TestGridSearch:
    def test_single_point_matches_train(self, tmp_path):
        manifest = generate_synthetic(24, 6, seed=1)
        mc = tiny_config(manifest, dtype="float32")
        tc = quick_tc()
        results = grid_search([(mc, tc)], manifest, tmp_path / "grid")
        direct = train(mc, tc, manifest)
        assert len(results) == 1
        assert results[0].status == "ok"
        assert results[0].metric == pytest.approx(direct.best_metric)
        assert results[0].metric_name == direct.metric_name

    def test_cache_resume_and_failed_point(self, tmp_path):
        manifest = generate_synthetic(24, 6, seed=1)
        good = tiny_config(manifest, dtype="float32")
        bad = replace(good, d_model=10, n_heads=4)  # fails validation
        points = [(good, quick_tc()), (bad, quick_tc())]
        out = tmp_path / "grid"
        first = grid_search(points, manifest, out)
        assert [r.status for r in first] == ["ok", "failed"]
        assert "divisible" in first[1].error
        cache_files = sorted(out.glob("point-*.json"))
        assert len(cache_files) == 2
        stamps = {f: f.stat().st_mtime_ns for f in cache_files}
        second = grid_search(points, manifest, out)
        assert [r.digest for r in second] == [r.digest for r in first]
        assert all(f.stat().st_mtime_ns == stamps[f] for f in cache_files)

    def test_empty_grid_rejected(self, tmp_path):
        with pytest.raises(ValueError):
            grid_search([], generate_synthetic(8, 6, seed=0), tmp_path)

    def test_ranked_by_metric(self, tmp_path):
        manifest = generate_synthetic(24, 6, seed=1)
        a = tiny_config(manifest, dtype="float32", seed=0)
        b = tiny_config(manifest, dtype="float32", seed=5)
        results = grid_search([(a, quick_tc()), (b, quick_tc(seed=5))],
                              manifest, tmp_path / "grid")
        metrics = [r.metric for r in results if r.status == "ok"]
        assert metrics == sorted(metrics, reverse=True)


@pytest.fixture(scope="module")
def table(tmp_path_factory):
    manifest = generate_synthetic(32, 6, seed=2)
    mc = tiny_config(manifest, dtype="float32")
    out = tmp_path_factory.mktemp("ablate")
    return ablate(mc, quick_tc(), manifest, out_dir=out), out


class TestAblate:
    def test_five_rows_in_removal_order(self, table):
        rows = table[0].rows
        assert [r.label for r in rows] == [
            "full model", "- external knowledge", "- caption supervision",
            "- fusion stage 1", "- fusion stage 2"]
        assert [r.flag for r in rows] == [None, "no_external", "no_caption",
                                          "no_stage1", "no_stage2"]

    def test_no_caption_row_has_fewer_parameters(self, table):
        rows = {r.label: r for r in table[0].rows}
        full = rows["full model"].n_parameters
        assert rows["- caption supervision"].n_parameters < full
        assert rows["- external knowledge"].n_parameters < full
        assert rows["- fusion stage 2"].n_parameters < full
        assert rows["- fusion stage 1"].n_parameters == full

    def test_artifacts_written(self, table):
        _, out = table
        assert (out / "ablation.kv").exists()
        assert (out / "ablation.txt").exists()
        assert (out / "history-full.tsv").exists()
        assert (out / "history-no_stage2.tsv").exists()

    def test_render_shape(self, table):
        text = table[0].render()
        lines = text.splitlines()
        assert len(lines) == 7  # header, rule, 5 variants
        assert lines[2].startswith("full model")

    def test_base_config_must_be_unablated(self):
        manifest = generate_synthetic(8, 6, seed=0)
        mc = tiny_config(manifest, ablations=("no_caption",), alpha=0.0)
        with pytest.raises(ValueError):
            ablate(mc, quick_tc(), manifest)
