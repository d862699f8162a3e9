import json
from pathlib import Path

import numpy as np
import pytest

from ga_radiance.model import ModelConfig, tiny_config
from ga_radiance.pipeline import experiments
from ga_radiance.pipeline.experiments import BenchmarkConfig, BenchmarkResult
from ga_radiance.pipeline.train import TrainConfig
from ga_radiance.scene import GridSpec, benchmark_edits, benchmark_rooms

REPO = Path(__file__).resolve().parents[1]


def small_benchmark(**kw) -> BenchmarkConfig:
    base = dict(
        ga_nerf=TrainConfig(steps=5, batch_size=8, eval_every=5, model=tiny_config()),
        mlp=TrainConfig(steps=5, batch_size=8, eval_every=5, model=ModelConfig(kind="mlp", mlp_hidden=(8,))),
        rooms=("room2",),
        frequencies_hz=(2.4e9,),
        grid="6x6",
    )
    return BenchmarkConfig(**{**base, **kw})


@pytest.fixture(scope="module")
def small_result():
    return experiments.run_benchmark(small_benchmark())


class TestBenchmarkConfig:
    def test_round_trip(self, tmp_path):
        cfg = small_benchmark()
        path = tmp_path / "b.json"
        path.write_text(json.dumps(cfg.to_dict()))
        assert BenchmarkConfig.load(path) == cfg

    def test_shipped_config_loads(self):
        cfg = BenchmarkConfig.load(REPO / "configs" / "benchmark.json")
        assert cfg.rooms == ("room1", "room2") and cfg.frequencies_hz == (2.4e9, 5.0e9)
        assert cfg.ga_nerf.model.kind == "ga_nerf" and cfg.mlp.model.kind == "mlp"

    @pytest.mark.parametrize(
        "change",
        [{"extra": 1}, {"version": 2}, {"rooms": ["room9"]}, {"variants": ["no_tokenizer", "full"]}],
    )
    def test_rejects_invalid(self, change):
        data = {**small_benchmark().to_dict(), **change}
        with pytest.raises(ValueError):
            BenchmarkConfig.from_dict(data)

    def test_requires_version(self):
        data = small_benchmark().to_dict()
        del data["version"]
        with pytest.raises(ValueError, match="version"):
            BenchmarkConfig.from_dict(data)


class TestRunBenchmark:
    def test_cell_structure(self, small_result):
        (cell,) = small_result.cells
        assert set(cell["test"]) == {"mlp", "full", "no_tokenizer", "no_attention_rt"}
        assert set(cell["edits"]["full"]) == {"add", "relocate", "remove"}
        assert "cross_frequency" not in cell  # single frequency: nothing to cross-evaluate
        assert all(s >= 0 for s in cell["cpu_seconds"].values())
        s = small_result.summary()
        assert len(s["beats_mlp"]) == 1 and len(s["edits_beat_mlp"]) == 3

    def test_deterministic(self, small_result):
        again = experiments.run_benchmark(small_benchmark())
        for a, b in zip(small_result.cells, again.cells):
            assert a["test"] == b["test"] and a["edits"] == b["edits"]

    def test_json_serializable(self, small_result):
        json.dumps(small_result.to_dict())

    def test_summary_logic(self):
        rep = lambda v: {"mae_mean_db": v}  # noqa: E731
        cell = {
            "test": {"mlp": rep(2.0), "full": rep(1.5), "no_tokenizer": rep(1.5), "no_attention_rt": rep(1.4)},
            "edits": {"full": {"add": {"2400000000": rep(1.0)}}, "mlp": {"add": {"2400000000": rep(1.2)}}},
            "cpu_seconds": {"mlp": 60.0, "full": 120.0},
        }
        s = BenchmarkResult([cell]).summary()
        assert s == {"beats_mlp": [True], "full_beats_ablations": [False], "edits_beat_mlp": [True], "max_cpu_minutes": 2.0}


class TestDrivers:
    def test_same_seed_same_metrics(self):
        splits = experiments.make_splits(benchmark_rooms()["room2"], GridSpec(6, 6), seed=2)
        cfg = TrainConfig(steps=5, batch_size=8, model=tiny_config())
        (_, a), (_, b) = (experiments.run_ablation(splits, "full", cfg) for _ in range(2))
        assert a == b

    def test_abs_errors_match_report(self):
        splits = experiments.make_splits(benchmark_rooms()["room2"], GridSpec(6, 6), seed=2)
        fitted, report = experiments.baseline_mlp(splits, TrainConfig(steps=20, batch_size=8, model=ModelConfig(kind="mlp", mlp_hidden=(8,))))
        err = experiments.abs_errors(fitted.model, fitted.result.params, splits.test, fitted.result.normalizer)
        np.testing.assert_allclose(report["mae_mean_db"], err.mean(), rtol=1e-12)

    def test_generalization_uses_edited_scene(self):
        room = benchmark_rooms()["room2"]
        splits = experiments.make_splits(room, GridSpec(6, 6), seed=2)
        fitted, _ = experiments.run_ablation(splits, "full", TrainConfig(steps=2, batch_size=8, model=tiny_config()))
        out = experiments.run_generalization(fitted, benchmark_edits(room), GridSpec(6, 6), 2)
        assert {v["2400000000"]["scene"] for v in out.values()} == {f"{room.name}:{k}" for k in out}
