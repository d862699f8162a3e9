"""Model assembly: the geometric-algebra radiance model, its ablations and the MLP baseline.

Both model families map a batch of receiver queries in one scene to
standardized predictions: one value per query in ``rssi`` mode, 104 values
(real parts then imaginary parts of 52 subcarriers) in ``csi`` mode.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
from dataclasses import dataclass, field

import numpy as np
import torch
import torch.nn.functional as F

from . import equi, radiance, render, tokenizer
from .params import ParamLayout, sub
from .scene import SceneGraph

VARIANTS = ("full", "no_tokenizer", "no_attention_rt")
MODES = ("rssi", "csi")


def out_dim(mode: str) -> int:
    if mode not in MODES:
        raise ValueError(f"unknown mode {mode!r}")
    return 1 if mode == "rssi" else 2 * render.N_SUBCARRIERS


@dataclass(frozen=True)
class RayConfig:
    rays: int = 8
    samples: int = 16
    t_near: float = 0.05
    t_far: float = 3.0
    seed: int = 0
    los: bool = False  # add the direct rx -> tx path as an extra ray


@dataclass(frozen=True)
class ModelConfig:
    """Everything that fixes the parameter layout and the forward map."""

    kind: str = "ga_nerf"  # or "mlp"
    mode: str = "rssi"
    variant: str = "full"
    signature: str = "pga"
    pos_freqs: int = 10
    dir_freqs: int = 4
    enc_channels: int = 8
    enc_hidden: int = 16
    enc_depth: int = 2
    enc_e4_path: bool = False
    radiance: radiance.RadianceConfig = field(default_factory=radiance.RadianceConfig)
    render: render.RenderConfig = field(default_factory=render.RenderConfig)
    rays: RayConfig = field(default_factory=RayConfig)
    mlp_hidden: tuple[int, ...] = (256, 128, 64, 64)

    def __post_init__(self):
        if self.kind not in ("ga_nerf", "mlp"):
            raise ValueError(f"unknown model kind {self.kind!r}")
        if self.variant not in VARIANTS:
            raise ValueError(f"unknown variant {self.variant!r}")
        out_dim(self.mode)
        object.__setattr__(self, "mlp_hidden", tuple(self.mlp_hidden))

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> "ModelConfig":
        data = dict(data)
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ValueError(f"unknown model config keys: {sorted(unknown)}")
        for key, sub_cls in (("radiance", radiance.RadianceConfig), ("render", render.RenderConfig), ("rays", RayConfig)):
            if key in data and isinstance(data[key], dict):
                data[key] = sub_cls(**data[key])
        return cls(**data)

    def digest(self) -> str:
        return hashlib.sha256(json.dumps(self.to_dict(), sort_keys=True).encode()).hexdigest()

    def with_variant(self, variant: str) -> "ModelConfig":
        return dataclasses.replace(self, variant=variant)


@dataclass
class Batch:
    scene: SceneGraph
    rx: torch.Tensor  # (B, 3)
    freq_hz: torch.Tensor  # (B,)


class RadianceModel:
    """Tokenizer -> attenuation/signal nets -> attention (or classic) rendering."""

    def __init__(self, cfg: ModelConfig):
        if cfg.kind != "ga_nerf":
            raise ValueError("RadianceModel needs kind='ga_nerf'")
        self.cfg = cfg
        self.tok_cfg = tokenizer.TokenizerConfig(
            pos_freqs=cfg.pos_freqs,
            dir_freqs=cfg.dir_freqs,
            encoder=equi.EncoderConfig(
                channels=cfg.enc_channels,
                hidden_channels=cfg.enc_hidden,
                depth=cfg.enc_depth,
                e4_path=cfg.enc_e4_path,
                signature=cfg.signature,
            ),
            use_global=cfg.variant != "no_tokenizer",
        )
        r = cfg.rays
        self.rays = radiance.sample_rays(np.zeros(3), r.rays, r.samples, r.t_near, r.t_far, seed=r.seed)
        self.out_dim = out_dim(cfg.mode)
        t = self.tok_cfg
        self.ctx_dim = t.view_dim + t.tx_dim + t.global_dim + 1
        lay = ParamLayout()
        lay.extend("tok.", tokenizer.tokenizer_layout(t))
        lay.extend("att.", radiance.attenuation_layout(cfg.radiance, t.local_dim))
        lay.extend("sig.", radiance.signal_layout(cfg.radiance, self.ctx_dim))
        if cfg.variant == "no_attention_rt":
            dec = 1 if cfg.mode == "rssi" else self.out_dim
            lay.add("dec.w", (dec, cfg.radiance.signal_dim))
            lay.add("dec.b", (dec,), ("zeros",))
            lay.add("head.w", (self.out_dim, dec), ("identity",))
            lay.add("head.b", (self.out_dim,), ("zeros",))
        else:
            lay.extend("art.", render.attention_render_layout(cfg.render, cfg.radiance.signal_dim, t.view_dim, t.global_dim, self.out_dim))
        self.layout = lay
        rc = cfg.render
        self.omega = (
            render.performer_features(rc.token_dim // rc.heads, rc.performer_features, rc.performer_seed) if rc.performer else None
        )
        self._scene_cache: dict[SceneGraph, np.ndarray] = {}

    def scene_tokens(self, scene: SceneGraph) -> np.ndarray:
        if scene not in self._scene_cache:
            self._scene_cache[scene] = tokenizer.scene_tokens(scene)
        return self._scene_cache[scene]

    def global_token(self, params: dict, scene: SceneGraph) -> torch.Tensor:
        return tokenizer.encode_scene(self.scene_tokens(scene), sub(params, "tok."), self.tok_cfg)

    def decode(self, xi: torch.Tensor, p: dict) -> torch.Tensor:
        """Emission -> amplitude (rssi) or amplitude/phase pairs combined as ``a e^{j phi}`` (csi)."""
        raw = xi @ p["dec.w"].T + p["dec.b"]
        if self.cfg.mode == "rssi":
            return raw
        amp, phase = raw.chunk(2, dim=-1)
        return torch.cat([amp * torch.cos(phase), amp * torch.sin(phase)], dim=-1)

    def forward(self, params: dict, batch: Batch, global_cls: torch.Tensor | None = None) -> torch.Tensor:
        if global_cls is None:
            global_cls = self.global_token(params, batch.scene)
        bundle = self.rays.at(batch.rx)
        if self.cfg.rays.los:
            bundle = bundle.with_los(batch.scene.tx)
        tokens = tokenizer.build_tokens(batch.scene, bundle, {}, self.tok_cfg, batch.freq_hz, global_cls=global_cls)
        att = radiance.attenuation_forward(tokens.local, sub(params, "att."), self.cfg.radiance)
        xi = radiance.signal_forward(att.feature, tokens.context(), sub(params, "sig."))
        if self.cfg.variant == "no_attention_rt":
            return render.classic_render(att.delta, bundle.t, self.decode(xi, params), params["head.w"], params["head.b"])
        _, w = render.transmittance_weights(att.delta, bundle.t)
        g = torch.cat([tokens.global_cls.expand(xi.shape[0], -1), tokens.freq], dim=-1)
        depth = render.optical_depth(att.delta, bundle.t) if self.cfg.render.depth_feature else None
        return render.attention_render(xi, w, tokens.view_local, g, sub(params, "art."), self.cfg.render, self.omega, depth=depth)


class MLPBaseline:
    """ReLU MLP on ``[rx | tx | freq]`` in the scene frame; no hidden layers gives a linear model."""

    def __init__(self, cfg: ModelConfig):
        self.cfg = cfg
        self.out_dim = out_dim(cfg.mode)
        widths = [7, *cfg.mlp_hidden, self.out_dim]
        self.widths = tuple(widths)
        lay = ParamLayout()
        for i, (a, b) in enumerate(zip(widths[:-1], widths[1:])):
            lay.add(f"l{i}.w", (b, a), ("normal", (2.0 / a) ** 0.5 if i < len(widths) - 2 else a ** -0.5))
            lay.add(f"l{i}.b", (b,), ("zeros",))
        self.layout = lay

    def global_token(self, params, scene):
        return None

    def features(self, batch: Batch) -> torch.Tensor:
        frame = tokenizer.Frame.of(batch.scene)
        rx = frame.points(batch.rx)
        tx = frame.points(batch.scene.tx).expand_as(rx)
        f = torch.as_tensor(batch.freq_hz, dtype=torch.float64).reshape(-1, 1) / 5e9
        return torch.cat([rx, tx, f], dim=-1)

    def forward(self, params: dict, batch: Batch, global_cls=None) -> torch.Tensor:
        h = self.features(batch)
        n = len(self.widths) - 1
        for i in range(n):
            h = h @ params[f"l{i}.w"].T + params[f"l{i}.b"]
            if i < n - 1:
                h = F.relu(h)
        return h


def build_model(cfg: ModelConfig):
    return RadianceModel(cfg) if cfg.kind == "ga_nerf" else MLPBaseline(cfg)


def tiny_config(mode: str = "rssi", variant: str = "full") -> ModelConfig:
    """Smallest stack that still exercises every module (~2k parameters in rssi mode)."""
    return ModelConfig(
        mode=mode, variant=variant, pos_freqs=1, dir_freqs=1, enc_channels=1, enc_hidden=2, enc_depth=1,
        radiance=radiance.RadianceConfig(att_width=4, att_layers=2, skip_at=1, feature_dim=4, sig_width=4, sig_layers=1,
                                         signal_dim=2, film_hidden=3),
        render=render.RenderConfig(token_dim=10, heads=10, performer_features=4),
        rays=RayConfig(rays=2, samples=3),
    )
