"""Rendering heads: volumetric quadrature and attention-based ray aggregation."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import torch
import torch.nn.functional as F

from .params import ParamLayout, sub

N_SUBCARRIERS = 52


# -- classic volumetric rendering ---------------------------------------------------


def sample_spacing(t: torch.Tensor) -> torch.Tensor:
    """``dt_i = t_{i+1} - t_i``; the last sample reuses the mean spacing."""
    t = torch.as_tensor(t, dtype=torch.float64)
    if t.shape[-1] == 1:
        return torch.ones_like(t)
    gaps = t[..., 1:] - t[..., :-1]
    if torch.any(gaps <= 0):
        raise ValueError("sample depths must be strictly increasing")
    return torch.cat([gaps, gaps.mean(dim=-1, keepdim=True)], dim=-1)


def transmittance_weights(delta: torch.Tensor, t: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor]:
    """Transmittance ``T_i = exp(-sum_{j<i} delta_j dt_j)`` and weights ``w_i = T_i delta_i dt_i``."""
    tau = torch.as_tensor(delta, dtype=torch.float64) * sample_spacing(t)
    optical = torch.cumsum(tau, dim=-1) - tau  # exclusive prefix sum
    trans = torch.exp(-optical)
    return trans, trans * tau


def optical_depth(delta: torch.Tensor, t: torch.Tensor) -> torch.Tensor:
    """Per-ray ``sum_i delta_i dt_i``: minus the log of the transmittance past the last sample."""
    return (torch.as_tensor(delta, dtype=torch.float64) * sample_spacing(t)).sum(dim=-1)


def classic_render(delta: torch.Tensor, t: torch.Tensor, decoded: torch.Tensor, head_w: torch.Tensor, head_b: torch.Tensor) -> torch.Tensor:
    """``head(mean_rays sum_i w_i decoded_i)``.

    ``delta``: (..., M, N); ``t``: (M, N); ``decoded``: (..., M, N, D).
    """
    _, w = transmittance_weights(delta, t)
    per_ray = (w[..., None] * decoded).sum(dim=-2)
    return per_ray.mean(dim=-2) @ head_w.T + head_b


# -- Performer / FAVOR+ ---------------------------------------------------------------


def performer_features(d: int, m: int, seed: int) -> torch.Tensor:
    """``(m, d)`` Gaussian projection rows, orthogonalized in blocks of ``d``.

    Row norms are redrawn from the chi distribution so each row is marginally
    N(0, I) as in FAVOR+.
    """
    if m < 1 or d < 1:
        raise ValueError("performer needs m >= 1 and d >= 1")
    rng = np.random.default_rng(seed)
    blocks = []
    for _ in range(math.ceil(m / d)):
        q, r = np.linalg.qr(rng.normal(size=(d, d)))
        blocks.append((q * np.sign(np.diag(r))).T)  # sign fix makes q Haar-distributed
    omega = np.concatenate(blocks)[:m]
    norms = np.linalg.norm(rng.normal(size=(m, d)), axis=1)
    return torch.as_tensor(omega * norms[:, None])


def positive_features(x: torch.Tensor, omega: torch.Tensor, stabilizer: torch.Tensor) -> torch.Tensor:
    """``exp(omega x - |x|^2 / 2 - stabilizer) / sqrt(m)``."""
    proj = x @ omega.T
    return torch.exp(proj - (x * x).sum(-1, keepdim=True) / 2 - stabilizer) / math.sqrt(omega.shape[0])


def performer_attention(q: torch.Tensor, k: torch.Tensor, v: torch.Tensor, m: int = 256, seed: int = 0,
                        omega: torch.Tensor | None = None) -> torch.Tensor:
    """Linear-cost approximation of ``softmax(q k^T / sqrt(d)) v``."""
    d = q.shape[-1]
    if omega is None:
        omega = performer_features(d, m, seed)
    scale = d ** -0.25
    qs, ks = q * scale, k * scale
    # stabilizers cancel: per-row for queries, one constant for all keys
    q_proj = qs @ omega.T - (qs * qs).sum(-1, keepdim=True) / 2
    k_proj = ks @ omega.T - (ks * ks).sum(-1, keepdim=True) / 2
    phi_q = torch.exp(q_proj - q_proj.amax(dim=-1, keepdim=True).detach())
    phi_k = torch.exp(k_proj - k_proj.amax(dim=(-1, -2), keepdim=True).detach())
    kv = phi_k.transpose(-1, -2) @ v  # (..., m, d_v)
    num = phi_q @ kv
    den = phi_q @ phi_k.sum(dim=-2)[..., None]
    return num / den


def softmax_attention(q, k, v):
    return torch.softmax(q @ k.transpose(-1, -2) / math.sqrt(q.shape[-1]), dim=-1) @ v


# -- local self-attention over ray tokens --------------------------------------------


def mha_layout(lay: ParamLayout, prefix: str, d: int) -> None:
    for name in ("q", "k", "v", "o"):
        lay.add(f"{prefix}{name}.w", (d, d))
        lay.add(f"{prefix}{name}.b", (d,), ("zeros",))
    lay.add(f"{prefix}ln.g", (d,), ("const", 1.0))
    lay.add(f"{prefix}ln.b", (d,), ("zeros",))


def multi_head_attention(x: torch.Tensor, p: dict, heads: int = 10, omega: torch.Tensor | None = None) -> torch.Tensor:
    """Multi-head attention core (no residual); performer path when ``omega`` is given."""
    n, d = x.shape[-2:]
    if d % heads:
        raise ValueError(f"token width {d} is not divisible by {heads} heads")
    hd = d // heads

    def split(t):
        return t.reshape(*t.shape[:-1], heads, hd).transpose(-2, -3)

    q = split(x @ p["q.w"].T + p["q.b"])
    k = split(x @ p["k.w"].T + p["k.b"])
    v = split(x @ p["v.w"].T + p["v.b"])
    out = softmax_attention(q, k, v) if omega is None else performer_attention(q, k, v, omega=omega)
    out = out.transpose(-2, -3).reshape(*x.shape[:-2], n, d)
    return out @ p["o.w"].T + p["o.b"]


def local_self_attention(x: torch.Tensor, p: dict, heads: int = 10, omega: torch.Tensor | None = None) -> torch.Tensor:
    """``LayerNorm(x + MHA(x))``."""
    y = x + multi_head_attention(x, p, heads, omega)
    return F.layer_norm(y, y.shape[-1:], p["ln.g"], p["ln.b"])


def cls_guided_pool(cls: torch.Tensor, rays: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor]:
    """Softmax(rays . cls / sqrt(d))-weighted sum of ray tokens."""
    if cls.shape[-1] != rays.shape[-1]:
        raise ValueError("cls and ray tokens must share their width")
    logits = (rays @ cls[..., :, None])[..., 0] / math.sqrt(rays.shape[-1])
    w = torch.softmax(logits, dim=-1)
    return (w[..., None] * rays).sum(dim=-2), w


# -- full attention render head ------------------------------------------------------


@dataclass(frozen=True)
class RenderConfig:
    token_dim: int = 40
    heads: int = 10
    performer: bool = True
    performer_features: int = 32
    performer_seed: int = 0
    depth_feature: bool = False  # append per-ray optical depth sum_i delta_i dt_i to the token input


def attention_render_layout(cfg: RenderConfig, signal_dim: int, view_dim: int, global_dim: int, out_dim: int) -> ParamLayout:
    lay = ParamLayout()
    d = cfg.token_dim
    lay.add("tok.w", (d, 2 * signal_dim + 1 + int(cfg.depth_feature)))
    lay.add("tok.b", (d,), ("zeros",))
    lay.add("ray_emb.w", (d, view_dim))
    lay.add("ray_emb.b", (d,), ("zeros",))
    lay.add("cls.w", (d, global_dim + 1))  # [global | freq]
    lay.add("cls.b", (d,), ("zeros",))
    mha_layout(lay, "lsa.", d)
    lay.add("proj.w", (out_dim, 2 * d), ("normal", 0.5 / math.sqrt(2 * d)))
    lay.add("proj.b", (out_dim,), ("zeros",))
    return lay


def ray_tokens(xi: torch.Tensor, w: torch.Tensor, view: torch.Tensor, p: dict, depth: torch.Tensor | None = None) -> torch.Tensor:
    """Per-ray tokens from ``[mean_i xi_i | sum_i w_i xi_i | sum_i w_i (| depth)]`` plus a direction embedding."""
    parts = [xi.mean(dim=-2), (w[..., None] * xi).sum(dim=-2), w.sum(dim=-1, keepdim=True)]
    if depth is not None:
        parts.append(depth[..., None])
    feats = torch.cat(parts, dim=-1)
    return feats @ p["tok.w"].T + p["tok.b"] + view @ p["ray_emb.w"].T + p["ray_emb.b"]


def attention_render(xi: torch.Tensor, w: torch.Tensor, view: torch.Tensor, global_ctx: torch.Tensor, p: dict,
                     cfg: RenderConfig, omega: torch.Tensor | None = None, return_weights: bool = False,
                     depth: torch.Tensor | None = None):
    """Attention-based ray tracing.

    ``xi``: (B, M, N, D_s) emissions, ``w``: (B, M, N) quadrature weights,
    ``view``: (M, L_dir) direction embeddings, ``global_ctx``: (B, L_g) scene token,
    ``depth``: (B, M) optical depths, required iff ``cfg.depth_feature``.
    """
    if cfg.depth_feature != (depth is not None):
        raise ValueError("depth must be given exactly when cfg.depth_feature is set")
    tokens = ray_tokens(xi, w, view, p, depth)
    cls = global_ctx @ p["cls.w"].T + p["cls.b"]
    if cfg.performer and omega is None:
        omega = performer_features(cfg.token_dim // cfg.heads, cfg.performer_features, cfg.performer_seed)
    tokens = local_self_attention(tokens, sub(p, "lsa."), cfg.heads, omega if cfg.performer else None)
    pooled, weights = cls_guided_pool(cls, tokens)
    out = torch.cat([pooled, cls], dim=-1) @ p["proj.w"].T + p["proj.b"]
    return (out, weights) if return_weights else out
