"""Frequency-domain diagnostics of the per-space forecasts.

Spectra come from a direct DFT.  ``dft_power`` returns the one-sided power
``|X_k|^2`` for ``k = 0..N//2``; the band statistics (power shares and MAF)
weight each one-sided bin by ``one_sided_weights`` (2 for interior bins, 1
for DC and, when ``N`` is even, Nyquist) so the weighted sum equals the
two-sided total and Parseval reads ``sum(w * P) == N * sum(x**2)``.

Two per-bin quantities are reported and kept apart: ``pve`` (variance
explained inside a band, which need not sum to one over bins) and
``power_share_bins`` (the fraction of a signal's power in each band, which
does).
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from numerion import _kernels
from numerion.model import SPACE_NAMES, NumerionConfig, NumerionParams
from numerion.train import predict

BIN_EDGES = (0.0, 0.01, 0.04, 0.09, 0.14, 0.20, 0.27, 0.50)
PVE_TOL = 1e-12
# one-sided bins below this fraction of the total power are DFT round-off
POWER_FLOOR = 1e-20


class SpectralError(ValueError):
    """Zero-power signal or an invalid request."""


def bin_labels() -> list[str]:
    lo = BIN_EDGES[:-1]
    return [f"[{a:.2f},{b:.2f}]" if i == 0 else f"({a:.2f},{b:.2f}]"
            for i, (a, b) in enumerate(zip(lo, BIN_EDGES[1:]))]


def frequencies(n: int) -> np.ndarray:
    return np.arange(n // 2 + 1) / n


def one_sided_weights(n: int) -> np.ndarray:
    w = np.full(n // 2 + 1, 2.0)
    w[0] = 1.0
    if n % 2 == 0:
        w[-1] = 1.0
    return w


def _dft(x: np.ndarray):
    return _kernels.dft(np.ascontiguousarray(x, dtype=np.float64))


def dft_power(x) -> np.ndarray:
    """``|sum_t x_t exp(-2 pi i k t / N)|^2`` at ``f_k = k/N``, ``k = 0..N//2``."""
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 1 or x.size < 2:
        raise SpectralError("dft_power needs a 1-D series with at least 2 samples")
    re, im = _dft(x)
    m = x.size // 2 + 1
    return re[:m] ** 2 + im[:m] ** 2


def band_filter(x, lo: float, hi: float, include_lo: bool = False) -> np.ndarray:
    """Keep only DFT coefficients with ``lo < |f| <= hi`` (``lo <= |f|`` if ``include_lo``)."""
    x = np.asarray(x, dtype=np.float64)
    n = x.size
    re, im = _dft(x)
    k = np.arange(n)
    f = np.minimum(k, n - k) / n
    keep = (f <= hi) & ((f >= lo) if include_lo else (f > lo))
    re, im = re * keep, im * keep
    # real part of the inverse transform: (DFT(re).re + DFT(im).im) / N
    a_re, _ = _dft(re)
    _, b_im = _dft(im)
    return (a_re + b_im) / n


def _band(band) -> tuple[float, float, bool]:
    lo, hi = float(band[0]), float(band[1])
    if not 0.0 <= lo < hi <= 0.5:
        raise SpectralError(f"band must satisfy 0 <= lo < hi <= 0.5, got {band}")
    return lo, hi, lo == 0.0


def pve(y, y_hat, band=(0.0, 0.5)) -> float | None:
    """``1 - Var(Y_f - Yhat_f) / Var(Y_f)`` after masking both to ``band``.

    Returns ``None`` when the truth has no variance inside the band.
    """
    y = np.asarray(y, dtype=np.float64)
    y_hat = np.asarray(y_hat, dtype=np.float64)
    if y.shape != y_hat.shape or y.ndim != 1:
        raise SpectralError(f"pve needs equal-length 1-D series, got {y.shape} and {y_hat.shape}")
    lo, hi, inc = _band(band)
    yf = band_filter(y, lo, hi, inc)
    var = yf.var()
    if var <= PVE_TOL * max(1.0, float(np.mean(y * y))):
        return None
    return float(1.0 - (yf - band_filter(y_hat, lo, hi, inc)).var() / var)


def _weighted_power(x) -> tuple[np.ndarray, np.ndarray]:
    x = np.asarray(x, dtype=np.float64)
    p = dft_power(x) * one_sided_weights(x.size)
    p[p <= POWER_FLOOR * p.sum()] = 0.0
    return frequencies(x.size), p


def power_share_bins(x, edges=BIN_EDGES) -> np.ndarray:
    """Fraction of non-DC power in each ``(edge_i, edge_i+1]`` bin; sums to 1."""
    f, p = _weighted_power(x)
    f, p = f[1:], p[1:]
    total = p.sum()
    if not total > 0:
        raise SpectralError("signal has no power away from DC")
    idx = np.clip(np.searchsorted(edges, f, side="left") - 1, 0, len(edges) - 2)
    return np.bincount(idx, weights=p, minlength=len(edges) - 1) / total


def maf(x, exclude_dc: bool = False) -> float:
    """Power-weighted mean normalized frequency; DC stays in the denominator unless excluded."""
    f, p = _weighted_power(x)
    if exclude_dc:
        f, p = f[1:], p[1:]
    total = p.sum()
    if not total > 0:
        raise SpectralError("signal has no power")
    return float((f * p).sum() / total)


def pearson(a, b) -> float | None:
    a = np.asarray(a, dtype=np.float64).ravel()
    b = np.asarray(b, dtype=np.float64).ravel()
    if a.shape != b.shape:
        raise SpectralError("pearson needs equal-length inputs")
    da, db = a - a.mean(), b - b.mean()
    na, nb = np.sqrt((da * da).sum()), np.sqrt((db * db).sum())
    if na == 0 or nb == 0:
        return None
    return float(np.clip((da * db).sum() / (na * nb), -1.0, 1.0))


@dataclass
class SpaceSummary:
    space: int
    pve: list[float | None]  # mean over windows per bin; None where never defined
    power_share: list[float]
    maf: float
    maf_ac: float
    pearson: float | None
    weight_share: float


@dataclass
class SpectralReport:
    channel: int
    windows: int
    spaces: list[SpaceSummary]
    fused_maf: float
    truth_maf: float
    files: dict[str, str] = field(default_factory=dict)

    def maf_order(self, exclude_dc: bool = False) -> list[int]:
        """Spaces sorted from highest to lowest MAF."""
        key = (lambda s: s.maf_ac) if exclude_dc else (lambda s: s.maf)
        return [s.space for s in sorted(self.spaces, key=key, reverse=True)]

    def format(self) -> str:
        lines = [f"channel {self.channel}, {self.windows} windows; "
                 f"truth MAF {self.truth_maf:.4f}, fused MAF {self.fused_maf:.4f}",
                 f"{'space':<6} {'MAF':>7} {'MAF(AC)':>8} {'pearson':>8} {'weight':>7}"]
        for s in self.spaces:
            r = "n/a" if s.pearson is None else f"{s.pearson:.4f}"
            lines.append(f"{SPACE_NAMES[s.space]:<6} {s.maf:7.4f} {s.maf_ac:8.4f} {r:>8} "
                         f"{s.weight_share:7.4f}")
        return "\n".join(lines)


def _mean_defined(values) -> float | None:
    vals = [v for v in values if v is not None]
    return float(np.mean(vals)) if vals else None


def _safe(fn, *args, **kw):
    try:
        return fn(*args, **kw)
    except SpectralError:
        return None


def decomposition_report(params: NumerionParams, cfg: NumerionConfig, dataset, channel: int = 0,
                         out_dir=None, max_windows: int | None = None, trace_window: int = 0,
                         batch_size: int = 1024) -> SpectralReport:
    """Per-space spectral summary of the forecasts for one channel.

    Each space's output is compared with the truth in the mean-removed frame
    the space works in.  Per-window statistics are averaged over windows.
    With ``out_dir`` set, writes ``pve.csv``, ``spaces.csv``, ``power.csv``,
    ``weights.csv`` and ``traces.csv``.
    """
    if not 0 <= channel < dataset.n_channels:
        raise SpectralError(f"channel {channel} out of range for {dataset.n_channels} channels")
    n_win = len(dataset) if max_windows is None else min(max_windows, len(dataset))
    if n_win == 0:
        raise SpectralError("dataset has no windows")
    x, y = dataset.batch(np.arange(n_win))
    y_hat, parts, weights = predict(params, cfg, x, batch_size, return_parts=True)
    level = x[:, channel].mean(axis=-1, keepdims=True)
    truth = y[:, channel] - level  # [W, P]
    parts = parts[:, :, channel]  # [S, W, P]
    weights = weights[:, :, channel]
    fused = y_hat[:, channel]
    bins = list(zip(BIN_EDGES[:-1], BIN_EDGES[1:]))
    P = cfg.horizon
    freqs = frequencies(P)
    spaces, power_rows = [], []
    for si, space in enumerate(cfg.enabled_spaces):
        o = parts[si]
        pve_bins = [_mean_defined(pve(truth[w], o[w], b) for w in range(n_win)) for b in bins]
        shares = [s for s in (_safe(power_share_bins, o[w]) for w in range(n_win)) if s is not None]
        share = np.mean(shares, axis=0).tolist() if shares else [0.0] * len(bins)
        mafs = [_safe(maf, o[w]) for w in range(n_win)]
        mafs_ac = [_safe(maf, o[w], exclude_dc=True) for w in range(n_win)]
        spaces.append(SpaceSummary(space, pve_bins, share, _mean_defined(mafs) or 0.0,
                                   _mean_defined(mafs_ac) or 0.0,
                                   pearson(o, truth), float(weights[si].mean())))
        power_rows.append(np.mean([dft_power(o[w]) for w in range(n_win)], axis=0))
    report = SpectralReport(channel, n_win, spaces,
                            _mean_defined(_safe(maf, fused[w] - level[w, 0]) for w in range(n_win)) or 0.0,
                            _mean_defined(_safe(maf, truth[w]) for w in range(n_win)) or 0.0)
    if out_dir is not None:
        report.files = _write_report(Path(out_dir), report, cfg, bins, freqs, power_rows,
                                     weights.mean(axis=1), truth, fused - level, parts,
                                     min(trace_window, n_win - 1))
    return report


def _write_report(out: Path, report, cfg, bins, freqs, power_rows, weight_curves, truth, fused,
                  parts, w) -> dict[str, str]:
    out.mkdir(parents=True, exist_ok=True)
    labels = bin_labels()
    files = {}

    def write(name, header, rows):
        path = out / name
        with path.open("w", newline="") as fh:
            wr = csv.writer(fh)
            wr.writerow(header)
            wr.writerows(rows)
        files[name.split(".")[0]] = str(path)

    write("pve.csv", ["space", "bin", "bin_lo", "bin_hi", "pve_mean", "power_share"],
          [[SPACE_NAMES[s.space], labels[i], lo, hi, "" if s.pve[i] is None else s.pve[i],
            s.power_share[i]] for s in report.spaces for i, (lo, hi) in enumerate(bins)])
    write("spaces.csv", ["space", "dim", "maf", "maf_ac", "pearson", "weight_share"],
          [[SPACE_NAMES[s.space], s.space, s.maf, s.maf_ac, "" if s.pearson is None else s.pearson,
            s.weight_share] for s in report.spaces])
    write("power.csv", ["space", "frequency", "power_mean"],
          [[SPACE_NAMES[s.space], f, p] for s, row in zip(report.spaces, power_rows)
           for f, p in zip(freqs, row)])
    write("weights.csv", ["space", "t", "weight_mean"],
          [[SPACE_NAMES[s.space], t, v] for s, curve in zip(report.spaces, weight_curves)
           for t, v in enumerate(curve)])
    names = [SPACE_NAMES[s] for s in cfg.enabled_spaces]
    write("traces.csv", ["t", "truth", "fused", *names],
          [[t, truth[w, t], fused[w, t], *parts[:, w, t]] for t in range(truth.shape[1])])
    return files


__all__ = [
    "BIN_EDGES",
    "SpaceSummary",
    "SpectralError",
    "SpectralReport",
    "band_filter",
    "bin_labels",
    "decomposition_report",
    "dft_power",
    "frequencies",
    "maf",
    "one_sided_weights",
    "pearson",
    "power_share_bins",
    "pve",
]
