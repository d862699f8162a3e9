"""Experiment drivers: MLP baseline, ablations, scene-edit generalization and the two-room benchmark."""

from __future__ import annotations

import dataclasses
import json
import logging
import time
from dataclasses import dataclass, field

import numpy as np

from ..model import ModelConfig, build_model
from ..scene import GridSpec, SceneGraph, benchmark_edits, benchmark_rooms, simulate_samples
from .train import Dataset, Normalizer, TrainConfig, TrainResult, as_complex, evaluate, predict, train

log = logging.getLogger(__name__)

BENCHMARK_VERSION = 1


@dataclass
class Splits:
    train: Dataset
    val: Dataset
    test: Dataset


def make_splits(scene: SceneGraph, grid: GridSpec, seed: int, mode: str = "rssi") -> Splits:
    labels = ("rssi",) if mode == "rssi" else ("csi",)
    samples = simulate_samples(scene, grid, seed, labels=labels)
    return Splits(*(Dataset.from_samples(scene, samples, mode, split) for split in ("train", "val", "test")))


def abs_errors(model, params, data: Dataset, norm: Normalizer = Normalizer()) -> np.ndarray:
    """Per-sample absolute error in dB (CSI: mean over subcarrier magnitudes)."""
    pred = predict(model, params, data, norm)
    if model.cfg.mode == "rssi":
        return np.abs(pred[:, 0] - data.target[:, 0])
    db = lambda y: 20 * np.log10(np.abs(as_complex(y)) + 1e-12)  # noqa: E731
    return np.abs(db(pred) - db(data.target)).mean(axis=1)


@dataclass
class Fitted:
    model: object
    result: TrainResult
    cpu_seconds: float

    def evaluate(self, data: Dataset, label: str = "") -> dict:
        return evaluate(self.model, self.result.params, data, self.result.normalizer, label)


def fit(cfg: TrainConfig, splits: Splits) -> Fitted:
    """Train on ``splits.train``, selecting the snapshot by validation loss."""
    model = build_model(cfg.model)
    start = time.process_time()
    result = train(model, splits.train, cfg, val=splits.val)
    return Fitted(model, result, time.process_time() - start)


def baseline_mlp(splits: Splits, cfg: TrainConfig) -> tuple[Fitted, dict]:
    """ReLU MLP on ``[rx | tx | freq]`` with the same optimizer and metrics."""
    if cfg.model.kind != "mlp":
        cfg = dataclasses.replace(cfg, model=ModelConfig(kind="mlp", mode=cfg.mode))
    fitted = fit(cfg, splits)
    return fitted, fitted.evaluate(splits.test, "mlp")


def run_ablation(splits: Splits, variant: str, cfg: TrainConfig) -> tuple[Fitted, dict]:
    """Train one model variant with the budget of ``cfg``; metrics on the test split."""
    cfg = dataclasses.replace(cfg, model=cfg.model.with_variant(variant))
    fitted = fit(cfg, splits)
    return fitted, fitted.evaluate(splits.test, variant)


def run_generalization(fitted: Fitted, edits: dict[str, SceneGraph], grid: GridSpec, seed: int) -> dict[str, dict]:
    """Frozen-weight metrics on the test split of each edited scene, keyed by edit then frequency.

    The edited datasets reuse the base grid and seed, so their test split
    covers the same receiver positions as the in-scene test split.
    """
    mode = fitted.model.cfg.mode
    out: dict[str, dict] = {}
    for name, scene in edits.items():
        test = make_splits(scene, grid, seed, mode).test
        report = fitted.evaluate(test)
        report["scene"] = f"{scene.name}:{name}"
        out[name] = {str(int(scene.frequency_hz)): report}
    return out


def run_cross_frequency(fitted: Fitted, scene: SceneGraph, frequency_hz: float, grid: GridSpec, seed: int) -> dict:
    """Evaluate a model trained at one frequency on the same scene at another, without fine-tuning."""
    test = make_splits(scene.with_frequency(frequency_hz), grid, seed, fitted.model.cfg.mode).test
    return fitted.evaluate(test)


# -- benchmark -------------------------------------------------------------------


@dataclass(frozen=True)
class BenchmarkConfig:
    ga_nerf: TrainConfig
    mlp: TrainConfig
    rooms: tuple[str, ...] = ("room1", "room2")
    frequencies_hz: tuple[float, ...] = (2.4e9, 5.0e9)
    grid: str = "20x20"
    data_seed: int = 1
    variants: tuple[str, ...] = ("full", "no_tokenizer", "no_attention_rt")
    version: int = BENCHMARK_VERSION

    def __post_init__(self):
        if self.version != BENCHMARK_VERSION:
            raise ValueError(f"unsupported benchmark config version {self.version}")
        if self.variants[0] != "full":
            raise ValueError("the first benchmark variant must be 'full'")
        unknown = set(self.rooms) - set(benchmark_rooms())
        if unknown:
            raise ValueError(f"unknown benchmark rooms: {sorted(unknown)}")

    @classmethod
    def from_dict(cls, data: dict) -> "BenchmarkConfig":
        data = dict(data)
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ValueError(f"unknown benchmark config keys: {sorted(unknown)}")
        if "version" not in data:
            raise ValueError("benchmark config needs a 'version' field")
        for key in ("ga_nerf", "mlp"):
            data[key] = TrainConfig.from_dict(data[key])
        for key in ("rooms", "frequencies_hz", "variants"):
            if key in data:
                data[key] = tuple(data[key])
        return cls(**data)

    @classmethod
    def load(cls, path) -> "BenchmarkConfig":
        with open(path) as fh:
            return cls.from_dict(json.load(fh))

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["ga_nerf"], d["mlp"] = self.ga_nerf.to_dict(), self.mlp.to_dict()
        return d


@dataclass
class BenchmarkResult:
    cells: list[dict] = field(default_factory=list)

    def _cells(self):
        return [(c, c["test"]) for c in self.cells]

    def beats_mlp(self) -> list[bool]:
        """Per cell: full GA-NeRF test MAE strictly below the MLP's."""
        return [t["full"]["mae_mean_db"] < t["mlp"]["mae_mean_db"] for _, t in self._cells()]

    def full_beats_ablations(self) -> list[bool]:
        """Per cell: full model MAE at most every ablation's MAE."""
        return [all(t["full"]["mae_mean_db"] <= t[v]["mae_mean_db"] for v in t if v not in ("full", "mlp")) for _, t in self._cells()]

    def edits_beat_mlp(self) -> list[bool]:
        """Per cell and edit: frozen full GA-NeRF MAE at most the frozen MLP's."""
        out = []
        for c in self.cells:
            for name, per in c["edits"]["full"].items():
                (key,) = per
                out.append(per[key]["mae_mean_db"] <= c["edits"]["mlp"][name][key]["mae_mean_db"])
        return out

    def summary(self) -> dict:
        return {
            "beats_mlp": self.beats_mlp(),
            "full_beats_ablations": self.full_beats_ablations(),
            "edits_beat_mlp": self.edits_beat_mlp(),
            "max_cpu_minutes": max((s / 60 for c in self.cells for s in c["cpu_seconds"].values()), default=0.0),
        }

    def to_dict(self) -> dict:
        return {"cells": self.cells, "summary": self.summary()}


def run_benchmark(cfg: BenchmarkConfig, progress=None) -> BenchmarkResult:
    """Train and evaluate every (room, frequency) cell.

    Each cell trains the MLP baseline and every GA-NeRF variant on the same
    splits, then evaluates the frozen full model and MLP on the scene edits.
    """
    grid = GridSpec.parse(cfg.grid)
    rooms = benchmark_rooms()
    result = BenchmarkResult()
    for room in cfg.rooms:
        for freq in cfg.frequencies_hz:
            scene = rooms[room].with_frequency(freq)
            splits = make_splits(scene, grid, cfg.data_seed, cfg.ga_nerf.mode)
            cell = {"room": room, "freq_hz": freq, "test": {}, "cpu_seconds": {}, "edits": {}}
            fitted = {}
            mlp, cell["test"]["mlp"] = baseline_mlp(splits, cfg.mlp)
            fitted["mlp"], cell["cpu_seconds"]["mlp"] = mlp, mlp.cpu_seconds
            for variant in cfg.variants:
                f, cell["test"][variant] = run_ablation(splits, variant, cfg.ga_nerf)
                fitted[variant], cell["cpu_seconds"][variant] = f, f.cpu_seconds
            edits = benchmark_edits(scene)
            for key in ("full", "mlp"):
                cell["edits"][key] = run_generalization(fitted[key], edits, grid, cfg.data_seed)
            for key in ("full", "mlp"):
                for other in cfg.frequencies_hz:
                    if other != freq:
                        cell.setdefault("cross_frequency", {})[key] = run_cross_frequency(fitted[key], scene, other, grid, cfg.data_seed)
            for rep in cell["test"].values():
                rep.pop("snr_per_sample", None)
            result.cells.append(cell)
            msg = f"{room} {freq / 1e9:g} GHz: " + ", ".join(f"{k}={v['mae_mean_db']:.3f}" for k, v in cell["test"].items())
            log.info(msg)
            if progress is not None:
                progress(msg)
    return result
