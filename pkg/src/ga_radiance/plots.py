"""Deterministic SVG figures: SNR/error CDF overlays and RSSI heatmaps."""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from .scene import ChannelSample  # noqa: E402

SVG_SALT = "ga-radiance"


def _save(fig, path) -> None:
    with matplotlib.rc_context({"svg.hashsalt": SVG_SALT, "svg.fonttype": "none"}):
        fig.savefig(path, format="svg", metadata={"Date": None})
    plt.close(fig)


def cdf_svg(curves: dict[str, tuple[np.ndarray, np.ndarray]], path, xlabel: str = "SNR (dB)") -> None:
    """One labeled step curve per entry of ``curves`` (label -> (values, fractions))."""
    if not curves:
        raise ValueError("no CDF curves to plot")
    fig, ax = plt.subplots(figsize=(5, 3.5))
    for label, (x, frac) in curves.items():
        ax.step(x, frac, where="post", label=label)
    ax.set_xlabel(xlabel)
    ax.set_ylabel("CDF")
    ax.set_ylim(0, 1.02)
    ax.grid(alpha=0.3)
    ax.legend()
    fig.tight_layout()
    _save(fig, path)


def rssi_grid(samples: list[ChannelSample]) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Arrange samples on their (x, y) lattice; cells without a sample are NaN.

    Jittered positions are binned by rank along each axis, so the lattice is
    recovered as long as jitter stays below half the grid pitch.
    """
    pts = [(s.rx[0], s.rx[1], s.rssi_db) for s in samples if s.rssi_db is not None]
    if not pts:
        raise ValueError("no RSSI samples to plot")
    p = np.array(pts)
    xs, ys = _axis(p[:, 0]), _axis(p[:, 1])
    z = np.full((len(ys), len(xs)), np.nan)
    for x, y, v in p:
        z[np.argmin(np.abs(ys - y)), np.argmin(np.abs(xs - x))] = v
    return xs, ys, z


def _axis(v: np.ndarray) -> np.ndarray:
    v = np.sort(v)
    if len(v) == 1:
        return v
    gaps = np.diff(v)
    cut = gaps > 0.5 * gaps.max() if gaps.max() > 0 else np.zeros_like(gaps, dtype=bool)
    groups = np.split(v, np.flatnonzero(cut) + 1)
    return np.array([g.mean() for g in groups])


def heatmap_svg(samples: list[ChannelSample], path, title: str = "") -> None:
    xs, ys, z = rssi_grid(samples)
    fig, ax = plt.subplots(figsize=(5, 4))
    mesh = ax.pcolormesh(xs, ys, z, shading="nearest", cmap="viridis")
    fig.colorbar(mesh, ax=ax, label="RSSI (dBm)")
    ax.set_xlabel("x (m)")
    ax.set_ylabel("y (m)")
    ax.set_aspect("equal")
    if title:
        ax.set_title(title)
    fig.tight_layout()
    _save(fig, path)
