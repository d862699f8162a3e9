"""Ray-in-ray-out radiance field: ray bundles, PowerMLP layers, attenuation and signal nets."""

from __future__ import annotations

import contextlib
import math
from dataclasses import dataclass

import numpy as np
import torch
import torch.nn.functional as F

from .params import ParamLayout, sub

GOLDEN_ANGLE = math.pi * (3.0 - math.sqrt(5.0))


@dataclass
class RayBundle:
    """Rays backtraced from one or more receivers.

    rx: (..., 3) receiver positions (m); directions: (M, 3) unit vectors, or
    (B, M, 3) when rays differ per query; t: (M, N) or (B, M, N) strictly
    increasing sample depths; positions: (..., M, N, 3).
    """

    rx: torch.Tensor
    directions: torch.Tensor
    t: torch.Tensor

    @property
    def positions(self) -> torch.Tensor:
        return self.rx[..., None, None, :] + self.t[..., None] * self.directions[..., :, None, :]

    def at(self, rx) -> "RayBundle":
        """Same rays and depths from other receiver position(s)."""
        return RayBundle(torch.as_tensor(rx, dtype=torch.float64), self.directions, self.t)

    def with_los(self, tx) -> "RayBundle":
        """Append the direct path to ``tx`` as one more ray per query.

        Its samples sit at the midpoints of ``N`` equal pieces of the rx-tx
        segment, so its transmittance integrates attenuation along the line
        of sight.
        """
        rx = torch.atleast_2d(self.rx)
        d = torch.as_tensor(tx, dtype=torch.float64) - rx
        length = d.norm(dim=-1, keepdim=True)
        if torch.any(length <= 0):
            raise ValueError("line-of-sight ray needs the receiver away from the transmitter")
        b, m, n = rx.shape[0], self.n_rays, self.n_samples
        u = (torch.arange(n, dtype=torch.float64) + 0.5) / n
        dirs = torch.cat([self.directions.expand(b, m, 3), (d / length)[:, None]], dim=1)
        t = torch.cat([self.t.expand(b, m, n), (length * u)[:, None]], dim=1)
        return RayBundle(rx, dirs, t)

    @property
    def n_rays(self) -> int:
        return self.directions.shape[-2]

    @property
    def n_samples(self) -> int:
        return self.t.shape[-1]


def fibonacci_directions(m: int) -> np.ndarray:
    """Unit vectors on a Fibonacci sphere lattice; ``m = 1`` gives (1, 0, 0)."""
    i = np.arange(m) + 0.5
    z = 1.0 - 2.0 * i / m
    r = np.sqrt(np.clip(1.0 - z * z, 0.0, None))
    phi = GOLDEN_ANGLE * np.arange(m)
    return np.stack([r * np.cos(phi), r * np.sin(phi), z], axis=-1)


def _random_rotation(rng: np.random.Generator) -> np.ndarray:
    q, r = np.linalg.qr(rng.normal(size=(3, 3)))
    q = q * np.sign(np.diag(r))
    if np.linalg.det(q) < 0:
        q[:, 0] = -q[:, 0]
    return q


def sample_rays(rx, m: int, n: int, t_near: float, t_far: float, seed: int = 0, stratified: bool = False) -> RayBundle:
    """Fibonacci-lattice ray bundle.

    Seed 0 keeps the canonical lattice; other seeds rotate it rigidly. With
    ``stratified`` each ray draws one uniform depth per bin, otherwise depths
    are evenly spaced from ``t_near`` to ``t_far`` inclusive.
    """
    if m < 1 or n < 2 or not 0 <= t_near < t_far:
        raise ValueError(f"invalid ray bundle request m={m}, n={n}, t=[{t_near}, {t_far}]")
    dirs = fibonacci_directions(m)
    rng = np.random.default_rng(seed)
    if seed != 0:
        dirs = dirs @ _random_rotation(rng).T
    if stratified:
        edges = np.linspace(t_near, t_far, n + 1)
        u = rng.uniform(0.05, 0.95, size=(m, n))
        t = edges[:-1] + u * np.diff(edges)
    else:
        t = np.broadcast_to(np.linspace(t_near, t_far, n), (m, n)).copy()
    return RayBundle(torch.as_tensor(np.asarray(rx, dtype=float)), torch.as_tensor(dirs), torch.as_tensor(t))


# -- RePU / PowerMLP ---------------------------------------------------------------

_kink_log: list[torch.Tensor] | None = None


@contextlib.contextmanager
def record_kinks():
    """Collect every RePU input (flattened, detached) evaluated inside the block."""
    global _kink_log
    prev, _kink_log = _kink_log, []
    try:
        yield _kink_log
    finally:
        _kink_log = prev


def repu(x, p):
    """``max(0, x) ** p``, with zero gradient (also in ``p``) where ``x <= 0``."""
    x = torch.as_tensor(x, dtype=torch.float64)
    p = torch.as_tensor(p, dtype=torch.float64)
    if _kink_log is not None:
        _kink_log.append(x.detach().flatten().clone())
    pos = x > 0
    safe = torch.where(pos, x, torch.ones_like(x))
    return torch.where(pos, safe**p, torch.zeros_like(x))


def exponent(raw: torch.Tensor) -> torch.Tensor:
    """Learnable RePU exponent, ``1 + softplus(raw)`` so it stays above 1."""
    return 1.0 + F.softplus(raw)


P_INIT_RAW = -2.0  # exponent ~1.13 at initialization


def power_layer_layout(lay: ParamLayout, prefix: str, n_in: int, n_out: int) -> None:
    lay.add(prefix + "w", (n_out, n_in))
    lay.add(prefix + "b", (n_out,), ("const", 0.05))
    lay.add(prefix + "wl", (n_out, n_in), ("normal", 0.5 / math.sqrt(n_in)))
    lay.add(prefix + "bl", (n_out,), ("zeros",))
    lay.add(prefix + "p", (), ("const", P_INIT_RAW))


def power_layer(x: torch.Tensor, p: dict) -> torch.Tensor:
    """RePU branch plus a parallel affine branch."""
    return repu(x @ p["w"].T + p["b"], exponent(p["p"])) + x @ p["wl"].T + p["bl"]


def power_mlp_layout(widths, prefix: str = "") -> ParamLayout:
    lay = ParamLayout()
    for i, (a, b) in enumerate(zip(widths[:-2], widths[1:-1])):
        power_layer_layout(lay, f"{prefix}l{i}.", a, b)
    lay.add(f"{prefix}out.w", (widths[-1], widths[-2]))
    lay.add(f"{prefix}out.b", (widths[-1],), ("zeros",))
    return lay


def power_mlp_forward(x: torch.Tensor, p: dict) -> torch.Tensor:
    """PowerMLP: RePU+linear layers ``l0, l1, ...`` then a plain affine ``out``."""
    i = 0
    while f"l{i}.w" in p:
        w = p[f"l{i}.w"]
        if x.shape[-1] != w.shape[-1]:
            raise ValueError(f"layer l{i} expects {w.shape[-1]} inputs, got {x.shape[-1]}")
        x = power_layer(x, sub(p, f"l{i}."))
        i += 1
    if x.shape[-1] != p["out.w"].shape[-1]:
        raise ValueError(f"output layer expects {p['out.w'].shape[-1]} inputs, got {x.shape[-1]}")
    return x @ p["out.w"].T + p["out.b"]


def film_modulate(h, gamma, beta):
    if not (h.shape[-1] == gamma.shape[-1] == beta.shape[-1]):
        raise ValueError("FiLM: feature, gamma and beta lengths differ")
    return gamma * h + beta


# -- attenuation / signal nets ---------------------------------------------------


@dataclass(frozen=True)
class RadianceConfig:
    att_width: int = 64
    att_layers: int = 8
    skip_at: int = 4  # input re-enters after this many layers
    feature_dim: int = 64
    sig_width: int = 64
    sig_layers: int = 4
    signal_dim: int = 16
    film_hidden: int = 64


def attenuation_layout(cfg: RadianceConfig, in_dim: int) -> ParamLayout:
    lay = ParamLayout()
    w = cfg.att_width
    for i in range(cfg.att_layers):
        n_in = in_dim if i == 0 else w + (in_dim if i == cfg.skip_at else 0)
        power_layer_layout(lay, f"l{i}.", n_in, w)
    lay.add("delta.w", (1, w))
    lay.add("delta.b", (1,), ("const", 0.1))
    lay.add("delta.p", (), ("const", P_INIT_RAW))
    lay.add("feat.w", (cfg.feature_dim, w))
    lay.add("feat.b", (cfg.feature_dim,), ("zeros",))
    return lay


@dataclass
class AttenuationOut:
    delta: torch.Tensor  # (..., M, N) >= 0
    feature: torch.Tensor  # (..., M, N, D_f)


def attenuation_forward(local: torch.Tensor, p: dict, cfg: RadianceConfig) -> AttenuationOut:
    """Per-sample attenuation from the sample-position embedding only."""
    x = local
    h = x
    for i in range(cfg.att_layers):
        if i == cfg.skip_at and i > 0:
            h = torch.cat([h, x], dim=-1)
        h = power_layer(h, sub(p, f"l{i}."))
    delta = repu(h @ p["delta.w"].T + p["delta.b"], exponent(p["delta.p"]))[..., 0]
    feat = h @ p["feat.w"].T + p["feat.b"]
    return AttenuationOut(delta, feat)


def signal_layout(cfg: RadianceConfig, ctx_dim: int) -> ParamLayout:
    lay = ParamLayout()
    d = cfg.feature_dim
    lay.add("film.w1", (cfg.film_hidden, ctx_dim))
    lay.add("film.b1", (cfg.film_hidden,), ("zeros",))
    lay.add("film.w2", (2 * d, cfg.film_hidden), ("normal", 0.1 / math.sqrt(cfg.film_hidden)))
    lay.add("film.b2", (2 * d,), ("zeros",))
    widths = [d + ctx_dim] + [cfg.sig_width] * cfg.sig_layers + [cfg.signal_dim]
    lay.extend("net.", power_mlp_layout(widths))
    return lay


def film_params(ctx: torch.Tensor, p: dict) -> tuple[torch.Tensor, torch.Tensor]:
    """Per-feature (gamma, beta) from the context; gamma is centered on 1."""
    h = F.gelu(ctx @ p["w1"].T + p["b1"])
    gb = h @ p["w2"].T + p["b2"]
    gamma, beta = gb.chunk(2, dim=-1)
    return 1.0 + gamma, beta


def signal_forward(feature: torch.Tensor, ctx: torch.Tensor, p: dict) -> torch.Tensor:
    """Emission representation per sample.

    ``feature``: (..., M, N, D_f); ``ctx``: (..., M, C) per-ray context.
    """
    gamma, beta = film_params(ctx, sub(p, "film."))
    n = feature.shape[-2]
    gamma, beta = gamma[..., None, :], beta[..., None, :]
    h = film_modulate(feature, gamma, beta)
    c = ctx[..., None, :].expand(*ctx.shape[:-1], n, ctx.shape[-1])
    return power_mlp_forward(torch.cat([h, c], dim=-1), sub(p, "net."))
