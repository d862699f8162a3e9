"""Command-line front end: ``ga-radiance {simulate,train,eval,plot,gradcheck,benchmark}``.

Exit codes: 0 ok, 2 bad input, 3 numerical failure, 4 incompatible checkpoint.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import json
import logging
import os
import sys
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch

from . import scene as sim
from .model import Batch, build_model, tiny_config
from .params import ModelParams
from .pipeline import experiments, metrics
from .pipeline.checkpoint import CheckpointError, ConfigHashMismatch, load_checkpoint, save_checkpoint
from .pipeline.gradcheck import grad_check
from .pipeline.train import Dataset, EmptyDatasetError, Normalizer, TrainConfig, TrainingDivergedError, evaluate, train

log = logging.getLogger("ga_radiance")

EXIT_OK, EXIT_INPUT, EXIT_NUMERIC, EXIT_COMPAT = 0, 2, 3, 4
RUN_CONFIG_VERSION = 1
SEED_ENV = "GA_RADIANCE_SEED"


class InputError(Exception):
    """Bad paths, schemas or arguments; reported with exit code 2."""


# -- run config ------------------------------------------------------------------


@dataclass(frozen=True)
class RunConfig:
    """A training/evaluation run: scene, dataset, output directory and training config.

    Relative paths are resolved against the directory holding the config file.
    """

    scene: Path
    dataset: Path
    output_dir: Path
    train: TrainConfig
    version: int = RUN_CONFIG_VERSION

    @classmethod
    def from_dict(cls, data: dict, base: Path = Path(".")) -> "RunConfig":
        if not isinstance(data, dict):
            raise InputError("run config must be a JSON object")
        unknown = set(data) - {f.name for f in dataclasses.fields(cls)}
        if unknown:
            raise InputError(f"unknown run config keys: {sorted(unknown)}")
        if "version" not in data:
            raise InputError("run config needs a 'version' field")
        if data["version"] != RUN_CONFIG_VERSION:
            raise InputError(f"unsupported run config version {data['version']!r}")
        missing = {"scene", "dataset", "output_dir", "train"} - set(data)
        if missing:
            raise InputError(f"run config is missing {sorted(missing)}")
        try:
            tc = TrainConfig.from_dict(data["train"])
        except (TypeError, ValueError) as exc:
            raise InputError(f"invalid train config: {exc}") from exc
        return cls(*(base / data[k] for k in ("scene", "dataset", "output_dir")), tc, data["version"])

    @classmethod
    def load(cls, path) -> "RunConfig":
        path = Path(path)
        try:
            data = json.loads(path.read_text())
        except FileNotFoundError:
            raise InputError(f"config file not found: {path}") from None
        except json.JSONDecodeError as exc:
            raise InputError(f"{path}: invalid JSON ({exc})") from None
        return cls.from_dict(data, path.parent)

    def to_dict(self) -> dict:
        return {
            "version": self.version,
            "scene": str(self.scene),
            "dataset": str(self.dataset),
            "output_dir": str(self.output_dir),
            "train": self.train.to_dict(),
        }


def seed_override(seed: int) -> int:
    raw = os.environ.get(SEED_ENV)
    if raw is None:
        return seed
    try:
        value = int(raw)
    except ValueError:
        raise InputError(f"{SEED_ENV} must be an integer, got {raw!r}") from None
    log.warning("%s=%d overrides configured seed %d", SEED_ENV, value, seed)
    return value


def load_scene(path) -> sim.SceneGraph:
    path = Path(path)
    if not path.is_file():
        raise InputError(f"scene file not found: {path}")
    try:
        return sim.SceneGraph.load(path)
    except (KeyError, TypeError, ValueError) as exc:
        raise InputError(f"{path}: invalid scene ({exc})") from None


def load_samples(path) -> list[sim.ChannelSample]:
    path = Path(path)
    if not path.is_file():
        raise InputError(f"dataset file not found: {path}")
    try:
        samples = sim.read_dataset(path)
    except (KeyError, TypeError, ValueError) as exc:
        raise InputError(f"{path}: invalid dataset ({exc})") from None
    if not samples:
        raise InputError(f"{path}: dataset is empty")
    return samples


def output_path(out_dir: Path, name: str | None, default: str) -> Path:
    """Resolve an output file, refusing anything outside ``out_dir``."""
    out_dir = out_dir.resolve()
    path = (out_dir / (name or default)).resolve()
    if out_dir != path.parent and out_dir not in path.parents:
        raise InputError(f"{path} is outside the output directory {out_dir}")
    return path


def run_config_with_overrides(args) -> RunConfig:
    rc = RunConfig.load(args.config)
    tc = rc.train
    model = tc.model
    if getattr(args, "variant", None):
        model = model.with_variant(args.variant)
    if getattr(args, "mode", None):
        model = dataclasses.replace(model, mode=args.mode)
    updates = {"model": model, "seed": seed_override(tc.seed)}
    if getattr(args, "steps", None) is not None:
        updates["steps"] = args.steps
    try:
        return dataclasses.replace(rc, train=dataclasses.replace(tc, **updates))
    except ValueError as exc:
        raise InputError(str(exc)) from None


def split_data(rc: RunConfig, split: str | None) -> Dataset:
    scene = load_scene(rc.scene)
    try:
        return Dataset.from_samples(scene, load_samples(rc.dataset), rc.train.mode, split)
    except ValueError as exc:
        raise InputError(f"{rc.dataset}: {exc}") from None


# -- commands --------------------------------------------------------------------


def cmd_simulate(args) -> int:
    scene = load_scene(args.scene)
    if args.frequency is not None:
        scene = scene.with_frequency(args.frequency)
    try:
        grid = sim.GridSpec.parse(args.grid)
    except ValueError:
        raise InputError(f"grid must look like 20x20, got {args.grid!r}") from None
    labels = tuple(args.labels.split(","))
    if not set(labels) <= {"rssi", "csi"}:
        raise InputError(f"labels must be rssi and/or csi, got {args.labels!r}")
    out_dir = Path(args.out).resolve().parent
    out_dir.mkdir(parents=True, exist_ok=True)
    out = output_path(out_dir, Path(args.out).name, "dataset.jsonl")
    cfg = sim.SimConfig(reflections=not args.no_reflections)
    samples = sim.generate_dataset(scene, grid, seed=seed_override(args.seed), out=out, cfg=cfg, labels=labels)
    print(f"wrote {len(samples)} samples to {out}")
    if "rssi" in labels:
        r = np.array([s.rssi_db for s in samples])
        print(f"rssi_db mean={r.mean():.2f} min={r.min():.2f} max={r.max():.2f}")
    counts = {k: sum(s.split == k for s in samples) for k in ("train", "val", "test")}
    print("splits " + " ".join(f"{k}={v}" for k, v in counts.items()))
    return EXIT_OK


def _mae_line(model, params, norm, data: Dataset, name: str) -> str:
    if len(data) == 0:
        return f"{name}: no samples"
    rep = evaluate(model, params, data, norm)
    return f"{name} mae_mean_db={rep['mae_mean_db']:.4f} mae_median_db={rep['mae_median_db']:.4f}"


def cmd_train(args) -> int:
    rc = run_config_with_overrides(args)
    out_dir = Path(args.out).resolve().parent if args.out else rc.output_dir
    out_dir.mkdir(parents=True, exist_ok=True)
    ckpt = output_path(out_dir, Path(args.out).name if args.out else None, "checkpoint.bin")
    data = {s: split_data(rc, s) for s in ("train", "val")}
    model = build_model(rc.train.model)
    try:
        result = train(model, data["train"], rc.train, val=data["val"])
    except TrainingDivergedError as exc:
        print(f"error: training diverged at step {exc.step} (loss {exc.loss})", file=sys.stderr)
        return EXIT_NUMERIC
    except EmptyDatasetError as exc:
        raise InputError(str(exc)) from None
    meta = {
        "train_config": rc.train.to_dict(),
        "normalizer": dataclasses.asdict(result.normalizer),
        "scene": sim.SceneGraph.load(rc.scene).name,
    }
    save_checkpoint(ckpt, result.params, rc.train.model.digest(), meta)
    history = ckpt.with_suffix(".history.csv")
    with open(history, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["step", "loss", "val_loss"])
        for h in result.history:
            w.writerow([h["step"], repr(h["loss"]), repr(h["val_loss"]) if "val_loss" in h else ""])
    print(f"checkpoint {ckpt} config_hash {rc.train.model.digest()}")
    for split in ("train", "val"):
        print(_mae_line(model, result.params, result.normalizer, data[split], split))
    return EXIT_OK


def cmd_eval(args) -> int:
    rc = run_config_with_overrides(args)
    out_dir = Path(args.out_dir).resolve() if args.out_dir else rc.output_dir.resolve()
    out_dir.mkdir(parents=True, exist_ok=True)
    model = build_model(rc.train.model)
    if not Path(args.checkpoint).is_file():
        raise InputError(f"checkpoint file not found: {args.checkpoint}")
    try:
        params, meta = load_checkpoint(args.checkpoint, model.layout, rc.train.model.digest())
    except ConfigHashMismatch as exc:
        print(f"error: config hash mismatch: checkpoint {exc.found} vs model spec {exc.expected}", file=sys.stderr)
        return EXIT_COMPAT
    except CheckpointError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_COMPAT
    norm = Normalizer(**meta.get("normalizer", {}))
    data = split_data(rc, args.split)
    if len(data) == 0:
        raise InputError(f"split {args.split!r} is empty")
    if args.metric == "snr" and rc.train.mode != "csi":
        raise InputError("--metric snr needs --mode csi")
    report = evaluate(model, params, data, norm)
    if args.metric == "snr":
        values, column = report["snr_per_sample"], "snr_db"
    else:
        values, column = experiments.abs_errors(model, params, data, norm), "abs_error_db"
    report.pop("snr_per_sample", None)
    fitted = experiments.Fitted(model, experiments.TrainResult(params, [], norm), 0.0)
    if args.edits:
        grid = sim.GridSpec.parse(args.grid)
        report["edits"] = experiments.run_generalization(fitted, sim.benchmark_edits(data.scene), grid, args.data_seed)
    if args.ablation:
        splits = experiments.Splits(*(split_data(rc, s) for s in ("train", "val", "test")))
        report["ablation"] = {v: experiments.run_ablation(splits, v, rc.train)[1] for v in ("full", "no_tokenizer", "no_attention_rt")}
        for rep in report["ablation"].values():
            rep.pop("snr_per_sample", None)
    metrics_path = output_path(out_dir, args.metrics_name, "metrics.json")
    metrics_path.write_text(json.dumps(report, indent=2, sort_keys=True) + "\n")
    metrics.write_cdf_csv(output_path(out_dir, args.cdf_name, "cdf.csv"), values, column=column)
    print(f"{args.split} mae_mean_db={report['mae_mean_db']:.4f} mae_median_db={report['mae_median_db']:.4f}"
          + (f" snr_db={report['snr_db']:.2f}" if "snr_db" in report else ""))
    print(f"wrote {metrics_path}")
    return EXIT_OK


def cmd_plot(args) -> int:
    from . import plots

    out = Path(args.out)
    out_path = output_path(out.resolve().parent, out.name, "plot.svg")
    if args.kind == "cdf":
        if not args.inputs:
            raise InputError("plot cdf needs at least one CDF CSV")
        labels = args.labels or [Path(p).stem for p in args.inputs]
        if len(labels) != len(args.inputs):
            raise InputError("give one label per input")
        curves = {}
        for label, path in zip(labels, args.inputs):
            if not Path(path).is_file():
                raise InputError(f"CDF file not found: {path}")
            try:
                column, x, frac = metrics.read_cdf_csv(path)
            except ValueError as exc:
                raise InputError(str(exc)) from None
            curves[label] = (x, frac)
        plots.cdf_svg(curves, out_path, xlabel="SNR (dB)" if column == "snr_db" else "absolute error (dB)")
    else:
        if len(args.inputs) != 1:
            raise InputError("plot heatmap takes exactly one dataset file")
        try:
            plots.heatmap_svg(load_samples(args.inputs[0]), out_path, title=args.title or "")
        except ValueError as exc:
            raise InputError(str(exc)) from None
    print(f"wrote {out_path}")
    return EXIT_OK


def cmd_gradcheck(args) -> int:
    model = build_model(tiny_config(args.mode, args.variant))
    rng = np.random.default_rng(seed_override(args.seed))
    scene = sim.benchmark_rooms()["room1"]
    (x0, y0, _), (x1, y1, _) = scene.bounds
    rx = rng.uniform([x0 + 0.3, y0 + 0.3, 0.3], [x1 - 0.3, y1 - 0.3, 2.0], size=(2, 3))
    batch = Batch(scene, torch.as_tensor(rx), torch.tensor([2.4e9, 5.0e9]))
    target = torch.as_tensor(rng.normal(size=(2, model.out_dim)))
    report = grad_check(model, ModelParams.initialize(model.layout, args.seed), batch, target, args.tolerance)
    print(f"{model.layout.size} parameters")
    print(report.summary())
    return EXIT_OK if report.passed else EXIT_NUMERIC


def cmd_benchmark(args) -> int:
    try:
        cfg = experiments.BenchmarkConfig.load(args.config)
    except FileNotFoundError:
        raise InputError(f"config file not found: {args.config}") from None
    except (TypeError, ValueError) as exc:
        raise InputError(f"{args.config}: {exc}") from None
    out_dir = Path(args.out_dir).resolve()
    out_dir.mkdir(parents=True, exist_ok=True)
    path = output_path(out_dir, None, "benchmark.json")
    result = experiments.run_benchmark(cfg, progress=print)
    path.write_text(json.dumps({"config": cfg.to_dict(), **result.to_dict()}, indent=2, sort_keys=True) + "\n")
    print(json.dumps(result.summary()))
    return EXIT_OK


# -- entry point -----------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="ga-radiance", description="Geometric-algebra radio radiance fields.")
    p.add_argument("--threads", type=int, default=1, help="torch worker threads (default 1)")
    p.add_argument("--log-level", default="WARNING")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("simulate", help="simulate a dataset for a scene")
    s.add_argument("--scene", required=True)
    s.add_argument("--grid", default="20x20")
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--out", required=True)
    s.add_argument("--labels", default="rssi,csi")
    s.add_argument("--frequency", type=float, help="override the scene carrier (Hz)")
    s.add_argument("--no-reflections", action="store_true")
    s.set_defaults(func=cmd_simulate)

    t = sub.add_parser("train", help="train a model from a run config")
    t.add_argument("--config", required=True)
    t.add_argument("--out", help="checkpoint path (default: <output_dir>/checkpoint.bin)")
    t.add_argument("--variant", choices=("full", "no_tokenizer", "no_attention_rt"))
    t.add_argument("--mode", choices=("rssi", "csi"))
    t.add_argument("--steps", type=int)
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("eval", help="evaluate a checkpoint")
    e.add_argument("--config", required=True)
    e.add_argument("--checkpoint", required=True)
    e.add_argument("--out-dir")
    e.add_argument("--split", default="test", choices=("train", "val", "test"))
    e.add_argument("--metric", default="mae", choices=("mae", "snr"))
    e.add_argument("--mode", choices=("rssi", "csi"))
    e.add_argument("--variant", choices=("full", "no_tokenizer", "no_attention_rt"))
    e.add_argument("--edits", action="store_true", help="also evaluate on the benchmark scene edits")
    e.add_argument("--ablation", action="store_true", help="also train and evaluate every variant")
    e.add_argument("--grid", default="20x20", help="grid for edited-scene datasets")
    e.add_argument("--data-seed", type=int, default=1, help="seed for edited-scene datasets")
    e.add_argument("--metrics-name", default="metrics.json")
    e.add_argument("--cdf-name", default="cdf.csv")
    e.set_defaults(func=cmd_eval)

    pl = sub.add_parser("plot", help="render SVG figures")
    pl.add_argument("kind", choices=("cdf", "heatmap"))
    pl.add_argument("inputs", nargs="*")
    pl.add_argument("--labels", nargs="*")
    pl.add_argument("--title")
    pl.add_argument("--out", required=True)
    pl.set_defaults(func=cmd_plot)

    g = sub.add_parser("gradcheck", help="finite-difference check of a tiny model")
    g.add_argument("--variant", default="full", choices=("full", "no_tokenizer", "no_attention_rt"))
    g.add_argument("--mode", default="rssi", choices=("rssi", "csi"))
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--tolerance", type=float, default=1e-4)
    g.set_defaults(func=cmd_gradcheck)

    b = sub.add_parser("benchmark", help="two-room benchmark: baseline, ablations and scene edits")
    b.add_argument("--config", required=True)
    b.add_argument("--out-dir", required=True)
    b.set_defaults(func=cmd_benchmark)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=getattr(logging, str(args.log_level).upper(), logging.WARNING),
                        format="%(levelname)s %(name)s: %(message)s")
    if args.threads < 1:
        print("error: --threads must be at least 1", file=sys.stderr)
        return EXIT_INPUT
    torch.set_num_threads(args.threads)
    try:
        return args.func(args)
    except InputError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
