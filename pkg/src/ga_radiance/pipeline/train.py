"""Adam training over one flat parameter vector, prediction and evaluation."""

from __future__ import annotations

import dataclasses
import logging
from dataclasses import dataclass, field

import numpy as np
import torch

from ..model import Batch, ModelConfig, build_model
from ..params import ModelParams
from ..scene import ChannelSample, SceneGraph
from . import metrics
from .fire import fire_standardize

log = logging.getLogger(__name__)


class TrainingDivergedError(RuntimeError):
    def __init__(self, step: int, loss: float):
        super().__init__(f"training diverged at step {step} (loss={loss})")
        self.step = step
        self.loss = loss


class EmptyDatasetError(ValueError):
    pass


@dataclass(frozen=True)
class TrainConfig:
    lr: float = 1e-3
    steps: int = 500
    batch_size: int = 32
    seed: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    loss: str = "mse"
    eval_every: int = 0  # >0 with a validation set: keep the best-validation parameters
    model: ModelConfig = field(default_factory=ModelConfig)

    def __post_init__(self):
        if self.lr <= 0 or self.steps < 0 or self.batch_size < 1:
            raise ValueError("lr and batch_size must be positive and steps non-negative")
        if not (0 <= self.beta1 < 1 and 0 <= self.beta2 < 1 and self.eps > 0):
            raise ValueError("invalid Adam hyperparameters")
        if self.loss != "mse":
            raise ValueError(f"unsupported loss {self.loss!r}")
        if isinstance(self.model, dict):
            object.__setattr__(self, "model", ModelConfig.from_dict(self.model))

    @property
    def mode(self) -> str:
        return self.model.mode

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["model"] = self.model.to_dict()
        return d

    @classmethod
    def from_dict(cls, data: dict) -> "TrainConfig":
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ValueError(f"unknown train config keys: {sorted(unknown)}")
        return cls(**data)


# -- targets --------------------------------------------------------------------


def csi_target(csi) -> np.ndarray:
    """FIRE-standardized CSI as ``[real parts | imaginary parts]``."""
    h = fire_standardize(csi)
    return np.concatenate([h.real, h.imag])


def as_complex(y: np.ndarray) -> np.ndarray:
    n = y.shape[-1] // 2
    return y[..., :n] + 1j * y[..., n:]


@dataclass
class Dataset:
    """Arrays for one scene: receiver positions, frequencies and raw targets."""

    scene: SceneGraph
    rx: np.ndarray  # (n, 3)
    freq_hz: np.ndarray  # (n,)
    target: np.ndarray  # (n, out_dim)

    def __len__(self) -> int:
        return len(self.rx)

    @classmethod
    def from_samples(cls, scene: SceneGraph, samples: list[ChannelSample], mode: str, split: str | None = None) -> "Dataset":
        chosen = [s for s in samples if split is None or s.split == split]
        if mode == "rssi":
            if any(s.rssi_db is None for s in chosen):
                raise ValueError("dataset has no RSSI labels")
            target = np.array([[s.rssi_db] for s in chosen], dtype=float).reshape(-1, 1)
        else:
            if any(s.csi is None for s in chosen):
                raise ValueError("dataset has no CSI labels")
            target = np.array([csi_target(s.csi) for s in chosen]).reshape(len(chosen), -1)
        return cls(
            scene,
            np.array([s.rx for s in chosen], dtype=float).reshape(-1, 3),
            np.array([s.freq_hz for s in chosen], dtype=float),
            target,
        )

    def batch(self, idx) -> Batch:
        return Batch(self.scene, torch.as_tensor(self.rx[idx]), torch.as_tensor(self.freq_hz[idx]))


@dataclass(frozen=True)
class Normalizer:
    """Affine target standardization; CSI is already unit-RMS so it stays identity."""

    mean: float = 0.0
    std: float = 1.0

    @classmethod
    def fit(cls, data: Dataset, mode: str) -> "Normalizer":
        if mode == "csi":
            return cls()
        std = float(data.target.std())
        return cls(float(data.target.mean()), std if std > 0 else 1.0)

    def forward(self, y):
        return (y - self.mean) / self.std

    def inverse(self, y):
        return y * self.std + self.mean


@dataclass
class TrainResult:
    params: ModelParams
    history: list[dict]
    normalizer: Normalizer


def _loss(model, views, batch: Batch, target: torch.Tensor) -> torch.Tensor:
    pred = model.forward(views, batch)
    return torch.mean((pred - target) ** 2)


def _val_score(model, theta, val: Dataset, norm: Normalizer) -> float:
    params = ModelParams(model.layout, theta.detach().numpy().copy())
    pred = norm.forward(predict(model, params, val, norm))
    return float(np.mean((pred - norm.forward(val.target)) ** 2))


def train(model, data: Dataset, cfg: TrainConfig, init: ModelParams | None = None, val: Dataset | None = None) -> TrainResult:
    """Minibatch Adam on the MSE of standardized targets.

    Deterministic for a fixed seed: the initialization, the batch order and the
    summation order all derive from ``cfg.seed``. With ``val`` and
    ``cfg.eval_every > 0`` the returned parameters are the snapshot with the
    lowest validation loss (the final step is always evaluated).
    """
    if len(data) == 0:
        raise EmptyDatasetError("training set is empty")
    params = init or ModelParams.initialize(model.layout, cfg.seed)
    norm = Normalizer.fit(data, cfg.mode)
    theta = params.tensor(requires_grad=True)
    opt = torch.optim.Adam([theta], lr=cfg.lr, betas=(cfg.beta1, cfg.beta2), eps=cfg.eps)
    target = torch.as_tensor(norm.forward(data.target))
    rng = np.random.default_rng([cfg.seed, 0x7EA1])
    order, cursor = rng.permutation(len(data)), 0
    history = []
    track = val is not None and len(val) > 0 and cfg.eval_every > 0
    best = (np.inf, theta.detach().clone())
    for step in range(cfg.steps):
        if cursor + cfg.batch_size > len(order):
            order, cursor = rng.permutation(len(data)), 0
        idx = order[cursor : cursor + cfg.batch_size]
        cursor += cfg.batch_size
        opt.zero_grad()
        loss = _loss(model, model.layout.views(theta), data.batch(idx), target[idx])
        value = float(loss.detach())
        if not np.isfinite(value):
            raise TrainingDivergedError(step, value)
        loss.backward()
        opt.step()
        entry = {"step": step, "loss": value}
        if track and ((step + 1) % cfg.eval_every == 0 or step + 1 == cfg.steps):
            entry["val_loss"] = _val_score(model, theta, val, norm)
            if entry["val_loss"] < best[0]:
                best = (entry["val_loss"], theta.detach().clone())
        history.append(entry)
    final = best[1] if track and cfg.steps > 0 else theta.detach()
    return TrainResult(ModelParams(model.layout, final.numpy().copy()), history, norm)


def predict(model, params: ModelParams, data: Dataset, norm: Normalizer = Normalizer(), batch_size: int = 64) -> np.ndarray:
    """De-standardized predictions for every query in ``data``."""
    views = params.views()
    out = []
    with torch.no_grad():
        g = model.global_token(views, data.scene)
        for i in range(0, len(data), batch_size):
            idx = np.arange(i, min(i + batch_size, len(data)))
            out.append(model.forward(views, data.batch(idx), global_cls=g).numpy())
    if not out:
        return np.zeros((0, model.out_dim))
    return norm.inverse(np.concatenate(out))


def evaluate(model, params: ModelParams, data: Dataset, norm: Normalizer = Normalizer(), label: str = "") -> dict:
    """Metrics report; in CSI mode MAE is over per-subcarrier magnitudes in dB."""
    if len(data) == 0:
        raise EmptyDatasetError("evaluation set is empty")
    pred = predict(model, params, data, norm)
    mode = model.cfg.mode
    report = {
        "variant": label or (model.cfg.variant if model.cfg.kind == "ga_nerf" else "mlp"),
        "scene": data.scene.name,
        "freq_hz": float(np.unique(data.freq_hz)[0]) if len(np.unique(data.freq_hz)) == 1 else None,
        "n": len(data),
    }
    if mode == "rssi":
        m = metrics.mae_db(pred[:, 0], data.target[:, 0])
    else:
        hp, ht = as_complex(pred), as_complex(data.target)
        m = metrics.mae_db(20 * np.log10(np.abs(hp) + 1e-12), 20 * np.log10(np.abs(ht) + 1e-12))
        snr = [metrics.snr_db(a, b) for a, b in zip(hp, ht)]
        report["snr_db"] = float(np.median(np.minimum(snr, metrics.SNR_CAP_DB)))
        report["snr_per_sample"] = [float(min(s, metrics.SNR_CAP_DB)) for s in snr]
    report["mae_mean_db"] = m["mean"]
    report["mae_median_db"] = m["median"]
    return report
