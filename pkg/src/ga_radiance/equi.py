"""Rotation-equivariant transformer over multivector tokens.

Tokens are tensors of shape ``(..., T, C, 16)``: T tokens, C multivector
channels, 16 blade coefficients in :mod:`ga_radiance.ga` order. Token 0 is the
``[CLS]`` token. Every layer commutes with spatial rotor sandwiches
``x -> R x R^-1``:

* linear maps mix channels with one matrix per grade (plus an optional
  left-multiplication by e4, which commutes with spatial rotors);
* normalization divides by a rotation-invariant magnitude;
* attention scores use the invariant inner product ``<reverse(q) k>_0``;
* the only pointwise nonlinearity is a GELU of the grade-0 part used as a gate.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import torch
import torch.nn.functional as F

from . import ga
from .params import ParamLayout, sub

_GRADE_INDEX = torch.as_tensor(ga.GRADES, dtype=torch.long)


def _sig(sig) -> ga.Signature:
    return ga.SIGNATURES[sig] if isinstance(sig, str) else sig


def _table(sig) -> torch.Tensor:
    return torch.as_tensor(np.array(ga.cayley_table(_sig(sig))), dtype=torch.float64)


def _metric(sig) -> torch.Tensor:
    return torch.as_tensor(np.array(ga.blade_metric(_sig(sig))), dtype=torch.float64)


def _e4_left(sig) -> torch.Tensor:
    """Matrix ``M[j, k]`` with ``e4 * x = sum_j x_j M[j, k] e_k``."""
    return _table(sig)[ga.BLADE_NAMES.index("e4")]


@dataclass(frozen=True)
class EncoderConfig:
    in_channels: int = 2
    channels: int = 8
    hidden_channels: int = 16
    depth: int = 2
    e4_path: bool = False
    signature: str = "pga"


def equi_linear(x: torch.Tensor, weight: torch.Tensor, e4_weight: torch.Tensor | None = None, sig="pga") -> torch.Tensor:
    """Per-grade channel mixing.

    ``weight`` has shape ``(5, C_out, C_in)``; ``e4_weight`` (``(C_out, C_in)``)
    adds ``W e4 x``.
    """
    if x.shape[-1] != 16 or x.shape[-2] != weight.shape[-1]:
        raise ValueError(f"equi_linear: input {tuple(x.shape)} does not match weight {tuple(weight.shape)}")
    per_blade = weight[_GRADE_INDEX]  # (16, out, in)
    out = torch.einsum("koc,...ck->...ok", per_blade, x)
    if e4_weight is not None:
        e4x = torch.einsum("...cj,jk->...ck", x, _e4_left(sig))
        out = out + torch.einsum("oc,...ck->...ok", e4_weight, e4x)
    return out


def mv_layernorm(x: torch.Tensor, eps: float = 1e-6) -> torch.Tensor:
    """Scale each token to unit mean squared magnitude over its channels."""
    ms = (x * x).sum(dim=-1).mean(dim=-1, keepdim=True)
    return x / torch.sqrt(ms + eps)[..., None]


def attention_weights(q: torch.Tensor, k: torch.Tensor, sig="pga") -> torch.Tensor:
    """Softmax over keys of ``sum_c <q_c, k_c> / sqrt(8 n_c)``; shape ``(..., T_q, T_k)``."""
    n_c = q.shape[-2]
    logits = torch.einsum("...icx,...jcx,x->...ij", q, k, _metric(sig)) / math.sqrt(8 * n_c)
    return torch.softmax(logits, dim=-1)


def geometric_attention(q: torch.Tensor, k: torch.Tensor, v: torch.Tensor, sig="pga") -> torch.Tensor:
    if not (q.shape[-2:] == k.shape[-2:] == v.shape[-2:] and k.shape[-3] == v.shape[-3]):
        raise ValueError("geometric_attention: q, k, v must share channels and key/value token counts")
    a = attention_weights(q, k, sig)
    return torch.einsum("...ij,...jcx->...icx", a, v)


def scalar_gate(x: torch.Tensor) -> torch.Tensor:
    return F.gelu(x[..., :1]) * x


def encoder_layout(cfg: EncoderConfig) -> ParamLayout:
    lay = ParamLayout()
    c, h = cfg.channels, cfg.hidden_channels
    lay.add("cls", (cfg.in_channels, 2), ("normal", 1.0))  # scalar + pseudoscalar seed per input channel
    lay.add("lift", (5, c, cfg.in_channels))
    if cfg.e4_path:
        lay.add("lift_e4", (c, cfg.in_channels), ("zeros",))
    for b in range(cfg.depth):
        p = f"b{b}."
        for name in ("q", "k", "v"):
            lay.add(p + name, (5, c, c))
        lay.add(p + "o", (5, c, c), ("normal", 0.5 / math.sqrt(c)))
        lay.add(p + "mlp_in", (5, h, c))
        lay.add(p + "mlp_out", (5, c, h), ("normal", 0.5 / math.sqrt(h)))
        if cfg.e4_path:
            for name, shape in (("v_e4", (c, c)), ("mlp_in_e4", (h, c))):
                lay.add(p + name, shape, ("zeros",))
    return lay


def identity_params(cfg: EncoderConfig) -> dict[str, torch.Tensor]:
    """Parameters under which every block is the identity map.

    Query/key/value/hidden maps are identities, branch outputs are zero, so
    each residual block returns its input unchanged.
    """
    if cfg.hidden_channels != cfg.channels:
        raise ValueError("identity parameters need hidden_channels == channels")
    lay = encoder_layout(cfg)
    eye = lambda o, i: torch.eye(o, i, dtype=torch.float64).expand(5, o, i).clone()
    out = {}
    for seg in lay:
        name = seg.name.split(".")[-1]
        if name in ("q", "k", "v", "mlp_in", "lift"):
            out[seg.name] = eye(seg.shape[1], seg.shape[2])
        elif name == "cls":
            t = torch.zeros(seg.shape, dtype=torch.float64)
            t[:, 0] = 1.0
            out[seg.name] = t
        else:
            out[seg.name] = torch.zeros(seg.shape, dtype=torch.float64)
    return out


def prepend_cls(tokens: torch.Tensor, cls_seed: torch.Tensor) -> torch.Tensor:
    """Put an invariant (scalar + pseudoscalar) token in front of ``tokens``."""
    cls = torch.zeros(tokens.shape[:-3] + (1,) + tokens.shape[-2:], dtype=tokens.dtype)
    cls[..., 0, :, 0] = cls_seed[:, 0]
    cls[..., 0, :, 15] = cls_seed[:, 1]
    return torch.cat([cls, tokens], dim=-3)


def gatr_block(x: torch.Tensor, p: dict, sig="pga") -> torch.Tensor:
    h = mv_layernorm(x)
    q = equi_linear(h, p["q"])
    k = equi_linear(h, p["k"])
    v = equi_linear(h, p["v"], p.get("v_e4"), sig)
    x = x + equi_linear(geometric_attention(q, k, v, sig), p["o"])
    h = mv_layernorm(x)
    h = scalar_gate(equi_linear(h, p["mlp_in"], p.get("mlp_in_e4"), sig))
    return x + equi_linear(h, p["mlp_out"])


def gatr_encode(scene_tokens: torch.Tensor, params: dict, cfg: EncoderConfig, with_cls: bool = True):
    """Encode ``(T, C_in, 16)`` scene tokens; returns ``(cls, tokens)``.

    ``cls`` has shape ``(1, channels, 16)``. When ``with_cls`` is False the
    input must already carry its ``[CLS]`` token at index 0 (with
    ``channels`` channels) and the lift is skipped.
    """
    if cfg.depth < 1:
        raise ValueError("encoder depth must be >= 1")
    sig = cfg.signature
    if with_cls:
        x = prepend_cls(scene_tokens, params["cls"])
        x = equi_linear(x, params["lift"], params.get("lift_e4"), sig)
    else:
        x = scene_tokens
    for b in range(cfg.depth):
        x = gatr_block(x, sub(params, f"b{b}."), sig)
    return x[..., :1, :, :], x[..., 1:, :, :]


def apply_rotor(tokens: torch.Tensor, rotor: np.ndarray, sig="pga") -> torch.Tensor:
    """Sandwich every multivector of ``tokens`` with ``rotor`` (reference path via :mod:`ga`)."""
    r = torch.as_tensor(rotor, dtype=torch.float64)
    r_inv = torch.as_tensor(ga.versor_inverse(rotor, _sig(sig)), dtype=torch.float64)
    table = _table(sig)
    left = torch.einsum("i,...j,ijk->...k", r, tokens, table)
    return torch.einsum("...i,j,ijk->...k", left, r_inv, table)
