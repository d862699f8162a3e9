"""Error metrics in dB and CDF export."""

from __future__ import annotations

import csv
import math

import numpy as np

SNR_CAP_DB = 99.0


def mae_db(pred, truth) -> dict:
    """Mean and median absolute error; the median is the headline statistic."""
    pred, truth = np.asarray(pred, dtype=float), np.asarray(truth, dtype=float)
    if pred.shape != truth.shape or pred.size == 0:
        raise ValueError(f"mae_db needs equal non-empty shapes, got {pred.shape} and {truth.shape}")
    err = np.abs(pred - truth)
    return {"mean": float(err.mean()), "median": float(np.median(err))}


def snr_db(pred, truth) -> float:
    """``10 log10(sum |H|^2 / sum |H - H_hat|^2)``; a perfect match returns +inf."""
    pred, truth = np.asarray(pred), np.asarray(truth)
    if pred.shape != truth.shape:
        raise ValueError(f"snr_db needs equal shapes, got {pred.shape} and {truth.shape}")
    signal = float(np.sum(np.abs(truth) ** 2))
    if signal == 0:
        raise ValueError("snr_db is undefined for an all-zero reference")
    noise = float(np.sum(np.abs(truth - pred) ** 2))
    return math.inf if noise == 0 else 10 * math.log10(signal / noise)


def empirical_cdf(values) -> tuple[np.ndarray, np.ndarray]:
    """Sorted values (infinities capped at 99 dB) and cumulative fractions."""
    v = np.sort(np.minimum(np.asarray(values, dtype=float), SNR_CAP_DB))
    return v, np.arange(1, len(v) + 1) / len(v)


def write_cdf_csv(path, values, column: str = "snr_db") -> None:
    x, frac = empirical_cdf(values)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow([column, "cumulative_fraction"])
        for a, b in zip(x, frac):
            w.writerow([repr(float(a)), repr(float(b))])


def read_cdf_csv(path) -> tuple[str, np.ndarray, np.ndarray]:
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if len(rows) < 2:
        raise ValueError(f"{path}: CDF file is empty")
    data = np.array([[float(a), float(b)] for a, b in rows[1:]])
    return rows[0][0], data[:, 0], data[:, 1]
