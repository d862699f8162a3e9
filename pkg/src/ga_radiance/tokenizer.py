"""Multi-view tokens: sinusoidal local embeddings plus a geometric scene token.

The global view runs the scene primitives and the transmitter through the
equivariant encoder and refines its ``[CLS]`` output with a norm + residual
MLP. The local view is the standard NeRF positional encoding of sample
positions, ray directions and the transmitter position. Downstream code
concatenates contexts as ``[local | global]``.

Scene tokens carry two multivector channels:

* channel 0 is geometry: planes ``n + d e4`` and points ``x + e4`` in the
  scene frame (centered on the room, scaled by its half extent);
* channel 1 holds rotation-invariant attributes: penetration loss / 10 dB as
  the scalar, reflection coefficient as the pseudoscalar, and a transmitter
  flag on e4.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
import torch
import torch.nn.functional as F

from . import equi, ga
from .params import ParamLayout, sub
from .scene import SceneGraph


class DegenerateSceneError(ValueError):
    pass


def positional_encode(x, n_freqs: int) -> torch.Tensor:
    """``[sin(2^f pi x_d), cos(2^f pi x_d)]`` ordered by octave f, then axis d.

    ``x`` has shape ``(..., 3)``; the result has ``6 * n_freqs`` features.
    """
    if n_freqs < 1:
        raise ValueError("positional encoding needs at least one octave")
    x = torch.as_tensor(x, dtype=torch.float64)
    scales = math.pi * 2.0 ** torch.arange(n_freqs, dtype=torch.float64)
    ang = x[..., None, :] * scales[:, None]  # (..., F, 3)
    out = torch.stack([torch.sin(ang), torch.cos(ang)], dim=-1)  # (..., F, 3, 2)
    return out.reshape(*x.shape[:-1], 6 * n_freqs)


@dataclass(frozen=True)
class Frame:
    """Similarity map from room coordinates (m) to the model frame."""

    center: tuple[float, float, float]
    scale: float

    @classmethod
    def of(cls, scene: SceneGraph) -> "Frame":
        return cls(tuple(float(v) for v in scene.center), scene.half_extent)

    def points(self, p) -> torch.Tensor:
        p = torch.as_tensor(p, dtype=torch.float64)
        return (p - torch.as_tensor(self.center, dtype=torch.float64)) / self.scale


@dataclass(frozen=True)
class TokenizerConfig:
    pos_freqs: int = 10
    dir_freqs: int = 4
    encoder: equi.EncoderConfig = field(default_factory=equi.EncoderConfig)
    use_global: bool = True

    @property
    def local_dim(self) -> int:
        return 6 * self.pos_freqs

    @property
    def view_dim(self) -> int:
        return 6 * self.dir_freqs

    @property
    def tx_dim(self) -> int:
        return 6 * self.pos_freqs

    @property
    def global_dim(self) -> int:
        return 16 * self.encoder.channels


def scene_tokens(scene: SceneGraph, frame: Frame | None = None, include_boundary: bool = True) -> np.ndarray:
    """Scene primitives and the transmitter as ``(T, 2, 16)`` multivector tokens."""
    if not scene.obstacles and not include_boundary:
        raise DegenerateSceneError("scene has no geometric primitives")
    frame = frame or Frame.of(scene)
    c = np.asarray(frame.center)
    tokens = []

    def attrs(mat, tx=False):
        a = np.zeros(16)
        if mat is not None:
            a[0] = mat.penetration_loss_db / 10.0
            a[15] = mat.reflection_coeff
        if tx:
            a[4] = 1.0
        return a

    def plane(p0, p1, mat):
        d = np.asarray(p1) - np.asarray(p0)
        n = np.array([-d[1], d[0], 0.0]) / np.linalg.norm(d)
        mid = np.array([*(np.asarray(p0) + np.asarray(p1)) / 2, c[2]])
        offset = float(n @ (mid - c)) / frame.scale
        tokens.append([ga.embed_geometry("plane", n, offset=offset), attrs(mat)])

    def point(p, mat, tx=False):
        p = np.asarray(p, dtype=float)
        if p.shape == (2,):
            p = np.array([*p, c[2]])
        tokens.append([ga.embed_geometry("point", (p - c) / frame.scale), attrs(mat, tx)])

    if include_boundary:
        for a, b, _ in scene.boundary_faces():
            plane(a, b, scene.boundary)
    for ob in scene.obstacles:
        point(ob.centroid, ob.material)
        for a, b, _ in ob.faces():
            plane(a, b, ob.material)
    point(scene.tx, None, tx=True)
    return np.asarray(tokens)


def tokenizer_layout(cfg: TokenizerConfig) -> ParamLayout:
    lay = ParamLayout()
    if not cfg.use_global:
        return lay
    lay.extend("enc.", equi.encoder_layout(cfg.encoder))
    g = cfg.global_dim
    lay.add("refine.w1", (g, g))
    lay.add("refine.b1", (g,), ("zeros",))
    lay.add("refine.w2", (g, g), ("normal", 0.1 / math.sqrt(g)))
    lay.add("refine.b2", (g,), ("zeros",))
    return lay


def refine_global(cls: torch.Tensor, p: dict) -> torch.Tensor:
    """Norm & MLP refinement of a ``(1, n_c, 16)`` CLS token into a flat vector.

    Residual form ``n + W2 gelu(W1 n + b1) + b2`` with hidden width equal to the
    input width, so nothing is compressed and zero output weights give the
    normalized token back.
    """
    n = equi.mv_layernorm(cls).reshape(*cls.shape[:-3], -1)
    h = F.gelu(n @ p["w1"].T + p["b1"])
    return n + h @ p["w2"].T + p["b2"]


def encode_scene(tokens, params: dict, cfg: TokenizerConfig) -> torch.Tensor:
    """Global scene embedding of length ``cfg.global_dim``."""
    if not cfg.use_global:
        return torch.zeros(cfg.global_dim, dtype=torch.float64)
    t = torch.as_tensor(tokens, dtype=torch.float64)
    cls, _ = equi.gatr_encode(t, sub(params, "enc."), cfg.encoder)
    return refine_global(cls, sub(params, "refine.")).reshape(-1)


@dataclass
class TokenSet:
    """Per-query tokens; leading axis B indexes queries.

    local: (B, M, N, 6 F_pos), view_local: (M, 6 F_dir),
    tx_local: (6 F_pos,), global_cls: (16 n_c,), freq: (B, 1) in units of 5 GHz.
    """

    local: torch.Tensor
    view_local: torch.Tensor
    tx_local: torch.Tensor
    global_cls: torch.Tensor
    freq: torch.Tensor

    def context(self) -> torch.Tensor:
        """``[view | tx | global | freq]`` per ray, shape ``(B, M, C)``."""
        b, m = self.local.shape[:2]
        parts = [
            self.view_local.expand(b, m, -1),
            self.tx_local.expand(b, m, -1),
            self.global_cls.expand(b, m, -1),
            self.freq[:, None, :].expand(b, m, 1),
        ]
        return torch.cat(parts, dim=-1)


def build_tokens(scene: SceneGraph, bundle, params: dict, cfg: TokenizerConfig, freq_hz=None,
                 global_cls: torch.Tensor | None = None) -> TokenSet:
    """Assemble the token set for a batch of queries sharing one scene.

    ``global_cls`` may be passed in to reuse a scene embedding across batches.
    """
    frame = Frame.of(scene)
    if global_cls is None:
        global_cls = encode_scene(scene_tokens(scene, frame), params, cfg)
    pos = frame.points(bundle.positions)
    if pos.dim() == 3:
        pos = pos[None]
    b = pos.shape[0]
    if freq_hz is None:
        freq_hz = scene.frequency_hz
    freq = torch.as_tensor(freq_hz, dtype=torch.float64).reshape(-1, 1).expand(b, 1) / 5e9
    return TokenSet(
        local=positional_encode(pos, cfg.pos_freqs),
        view_local=positional_encode(bundle.directions, cfg.dir_freqs),
        tx_local=positional_encode(frame.points(scene.tx), cfg.pos_freqs),
        global_cls=global_cls,
        freq=freq,
    )
