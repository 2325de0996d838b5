import dataclasses

import numpy as np
import pytest

from ttshield.experiment import (
    ACCESS_LABELS,
    DisplayedModel,
    canonical_wb_corpus,
    ExperimentConfig,
    ScoreTable,
    config_hash,
    default_rows,
    display_calibration,
    dp_accuracy_sweep,
    dp_attack_sweep,
    make_cohorts,
    power_display,
    resolve_out_dir,
    run_attack_suite,
    shuffled_baseline,
    tt_accuracy_tradeoff,
    write_artifact,
)
from ttshield.predictors import LrHyper, MlpHyper
from ttshield.privacy import extract_corpus, train_shadow_models, TargetSpec


def tiny_config(**overrides):
    base = dict(
        sizes=(48, 40),
        rate=0.4,
        drift=0.4,
        lr_grid=(LrHyper(),),
        mlp_hyper=MlpHyper(hidden=(8,), epochs=30),
        averaged_J=3,
        averaged_K=2,
        bins=(2,),
        eps_grid=(1.0, 100.0),
        access_levels=("wbb2", "sbb", "wb"),
        R=2,
        n_probes=20,
        repeats=2,
        folds=2,
        max_union_size=1,
        tt_pivots=30,
        seed=5,
    )
    base.update(overrides)
    return ExperimentConfig(**base)


class TestConfig:
    def test_roundtrip(self):
        cfg = tiny_config()
        assert ExperimentConfig.from_dict(cfg.to_dict()) == cfg

    def test_defaults_roundtrip(self):
        cfg = ExperimentConfig()
        assert ExperimentConfig.from_dict({}) == cfg
        assert ExperimentConfig.from_dict(cfg.to_dict()) == cfg

    def test_unknown_key_rejected(self):
        with pytest.raises(ValueError, match="unknown config key"):
            ExperimentConfig.from_dict({"granularity": 3})

    def test_bad_access_level_rejected(self):
        with pytest.raises(ValueError, match="access level"):
            ExperimentConfig(access_levels=("wbb2", "gray-box"))

    def test_hash_deterministic_and_seed_sensitive(self):
        a = config_hash(tiny_config())
        b = config_hash(tiny_config())
        c = config_hash(tiny_config(seed=6))
        assert a == b
        assert a != c
        assert len(a) == 64

    def test_partial_overlay(self):
        cfg = ExperimentConfig.from_dict({"R": 7, "bins": [6]})
        assert cfg.R == 7
        assert cfg.bins == (6,)
        assert cfg.rate == ExperimentConfig().rate


class TestRows:
    def test_default_rows_cover_models_and_bins(self):
        rows = default_rows(tiny_config(bins=(2, 10)))
        assert list(rows) == ["lr/vanilla", "lr/averaged", "mlp/vanilla", "tt-lr/b=2", "tt-lr/b=10"]
        assert all(isinstance(s, TargetSpec) for specs in rows.values() for s in specs)
        assert rows["tt-lr/b=2"][0].tensorize.bins == 2

    def test_grid_width(self):
        cfg = tiny_config(lr_grid=(LrHyper(), LrHyper(C=0.1)))
        rows = default_rows(cfg)
        assert len(rows["lr/vanilla"]) == 2
        assert len(rows["mlp/vanilla"]) == 1


class TestScoreTable:
    def table(self):
        return ScoreTable(
            row_names=("lr/vanilla", "mlp/vanilla"),
            columns=("wbb2", "wb"),
            means=((0.5, 0.9), (0.55, 0.8)),
            stds=((0.01, 0.02), (0.03, 0.04)),
        )

    def test_csv_roundtrip(self):
        t = self.table()
        assert ScoreTable.from_csv_bytes(t.to_csv_bytes()) == t

    def test_cell_lookup(self):
        assert self.table().cell("mlp/vanilla", "wb") == (0.8, 0.04)

    def test_render_uses_labels(self):
        text = self.table().render()
        assert "2-WBB" in text and "WB" in text
        assert "0.900 ± 0.020" in text

    def test_shape_validation(self):
        with pytest.raises(ValueError):
            ScoreTable(("a",), ("x", "y"), ((0.5,),), ((0.1,),))

    def test_header_validation(self):
        with pytest.raises(ValueError, match="header"):
            ScoreTable.from_csv_bytes(b"model,mean,std\n")


@pytest.fixture(scope="module")
def tiny_suite():
    return run_attack_suite(tiny_config())


class TestSuite:
    def test_table_shape(self, tiny_suite):
        t = tiny_suite.table
        assert t.row_names == ("lr/vanilla", "lr/averaged", "mlp/vanilla", "tt-lr/b=2")
        assert t.columns == ("wbb2", "sbb", "wb")
        flat = [m for row in t.means for m in row]
        assert all(0.0 <= m <= 1.0 for m in flat)

    def test_no_failures(self, tiny_suite):
        assert tiny_suite.failures == ()

    def test_manifest_records_hash_and_probes(self, tiny_suite):
        assert tiny_suite.manifest["config_hash"] == config_hash(tiny_config())
        assert len(tiny_suite.manifest["probe_ids"]) == 20

    def test_rerun_is_byte_identical(self, tiny_suite):
        again = run_attack_suite(tiny_config())
        assert again.table.to_csv_bytes() == tiny_suite.table.to_csv_bytes()

    def test_seed_moves_cells(self, tiny_suite):
        other = run_attack_suite(tiny_config(seed=6))
        assert other.table.to_csv_bytes() != tiny_suite.table.to_csv_bytes()


def test_worker_pool_matches_sequential():
    cfg = tiny_config()
    cohorts = make_cohorts(cfg)
    specs = (TargetSpec("lr", LrHyper()),)
    seq_models, seq_fails = train_shadow_models(cohorts, specs, R=2, seed=3, max_union_size=1)
    par_models, par_fails = train_shadow_models(
        cohorts, specs, R=2, seed=3, max_union_size=1, workers=2
    )
    assert seq_fails == par_fails == []
    assert len(seq_models) == len(par_models)
    for a, b in zip(seq_models, par_models):
        assert a.provenance == b.provenance
        np.testing.assert_array_equal(a.artifact.w, b.artifact.w)


@pytest.fixture(scope="module")
def cohorts():
    return make_cohorts(tiny_config())


class TestDefenseSweeps:
    def test_dp_attack_sweep_keys(self, cohorts):
        out = dp_attack_sweep(tiny_config(), cohorts)
        assert set(out) == {1.0, 100.0}
        assert all(0.0 <= r.mean <= 1.0 for r in out.values())

    def test_dp_accuracy_sweep(self, cohorts):
        out = dp_accuracy_sweep(tiny_config(), cohorts, n_seeds=3)
        assert set(out) == {"baseline", 1.0, 100.0}
        assert all(0.0 <= v <= 1.0 for v in out.values())
        assert out[100.0] >= out[1.0] - 0.25

    def test_tt_tradeoff(self, cohorts):
        out = tt_accuracy_tradeoff(tiny_config(), cohorts, b=2)
        assert set(out) == {"ba_model", "ba_tt"}
        assert 0.4 <= out["ba_model"] <= 1.0

    def test_canonical_wb_corpus(self, cohorts):
        models, _ = train_shadow_models(
            cohorts, (TargetSpec("lr", LrHyper()),), R=2, seed=4, max_union_size=1
        )
        corpus = canonical_wb_corpus(models)
        assert corpus.features.shape == (4, 21)
        assert corpus.manifest == {"canonical": True}
        shifted = models[0].artifact
        feats = corpus.records[0].features
        assert feats[-1] == pytest.approx(shifted.b + shifted.w[5])

    def test_shuffled_baseline_near_half(self, cohorts):
        cfg = tiny_config()
        models, _ = train_shadow_models(
            cohorts,
            (TargetSpec("lr", LrHyper()),),
            R=6,
            seed=11,
            max_union_size=1,
        )
        corpus = extract_corpus(models, "wb")
        base = shuffled_baseline(corpus, repeats=3, folds=3, seed=1)
        assert 0.2 <= base.mean <= 0.8


class TestDisplay:
    def test_power_display_monotone(self):
        disp = power_display(1.6)
        grid = np.linspace(0, 1, 50)
        vals = disp(grid)
        assert np.all(np.diff(vals) >= 0)
        assert vals[0] == 0.0 and vals[-1] == 1.0

    def test_power_display_validation(self):
        with pytest.raises(ValueError):
            power_display(0.0)

    def test_displayed_model_composes(self):
        inner = lambda X: np.full(np.atleast_2d(X).shape[0], 0.25)
        shown = DisplayedModel(inner, power_display(2.0))
        out = shown(np.zeros((4, 21)))
        np.testing.assert_allclose(out, 0.0625)

    def test_calibration_pairs(self):
        pairs = display_calibration(power_display(1.6), n=11)
        assert len(pairs) == 11
        assert pairs[0] == (0.0, 0.0)
        assert pairs[-1] == (1.0, 1.0)
        shown = [v for _, v in pairs]
        assert all(b >= a for a, b in zip(shown, shown[1:]))


class TestArtifacts:
    def test_append_only(self, tmp_path):
        p1 = write_artifact(tmp_path, "table", b"abc", "csv")
        p2 = write_artifact(tmp_path, "table", b"abc", "csv")
        p3 = write_artifact(tmp_path, "table", b"xyz", "csv")
        assert p1 == p2
        assert p3 != p1
        assert len(list(tmp_path.glob("table-*.csv"))) == 2
        assert p1.read_bytes() == b"abc"

    def test_existing_artifact_untouched(self, tmp_path):
        p1 = write_artifact(tmp_path, "t", b"abc", "csv")
        p1.write_bytes(b"abc")
        before = p1.stat().st_mtime_ns
        write_artifact(tmp_path, "t", b"abc", "csv")
        assert p1.stat().st_mtime_ns == before

    def test_out_dir_env_override(self, monkeypatch, tmp_path):
        monkeypatch.setenv("TTSHIELD_OUT", str(tmp_path / "env"))
        assert resolve_out_dir("flagged") == tmp_path / "env"
        monkeypatch.delenv("TTSHIELD_OUT")
        assert resolve_out_dir("flagged").name == "flagged"
        assert resolve_out_dir(None).name == "out"
