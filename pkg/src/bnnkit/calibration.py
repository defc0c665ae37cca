"""Uncertainty quantification: classwise confidence binning, ECE/MCE, NLL,
temperature scaling, and reliability-plot output.

Binning is classwise: every (example, class) probability is one entry, so a
table built from N examples with K classes holds N*K counts.  Bin id is
``min(floor(p * M), M - 1)``; an exact probability of 1.0 lands in the top
bin.

Two ECE readings are supported.  ``standard`` normalizes accuracy and
confidence per bin before differencing:

    ece = sum_m binsize[m]/(N*K) * |acc[m] - conf[m]|      (nonempty bins)

``paper`` keeps the raw bin sums and the extra leading 1/M factor some
write-ups carry.  MCE is always the maximum per-bin |acc - conf| over
nonempty bins, with normalized values.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError

ECE_STANDARD = "standard"
ECE_PAPER = "paper"
ECE_FORMULAS = (ECE_STANDARD, ECE_PAPER)
PROB_FLOOR = 1e-12
DEFAULT_BINS = 15


@dataclass(frozen=True)
class BinTable:
    m: int
    binsize: np.ndarray  # counts per bin
    acc_sum: np.ndarray  # correct-indicator sums
    conf_sum: np.ndarray  # probability sums


@dataclass(frozen=True)
class CalibrationReport:
    ece: float
    mce: float
    nll: float
    t_star: float
    bins: tuple[tuple[float, float, float, float], ...]  # (center, acc, conf, weight)


def bin_accumulate(probs: np.ndarray, labels: np.ndarray, m: int) -> BinTable:
    """Classwise binning over all (example, class) pairs."""
    if m < 1:
        raise ConfigError(f"need at least one bin, got {m}")
    probs = np.asarray(probs, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    n, k = probs.shape
    flat = probs.ravel()
    ids = np.minimum((flat * m).astype(np.int64), m - 1)
    correct = (labels[:, None] == np.arange(k)).astype(np.float64).ravel()

    binsize = np.zeros(m)
    acc_sum = np.zeros(m)
    conf_sum = np.zeros(m)
    np.add.at(binsize, ids, 1.0)
    np.add.at(acc_sum, ids, correct)
    np.add.at(conf_sum, ids, flat)
    return BinTable(m, binsize, acc_sum, conf_sum)


def merge_tables(a: BinTable, b: BinTable) -> BinTable:
    if a.m != b.m:
        raise ConfigError("bin counts differ")
    return BinTable(a.m, a.binsize + b.binsize, a.acc_sum + b.acc_sum, a.conf_sum + b.conf_sum)


def ece_mce(table: BinTable, n: int, k: int, formula: str = ECE_STANDARD) -> tuple[float, float]:
    # sequential accumulation in bin order, matching the defining pseudocode
    # term by term (a pairwise numpy sum reassociates and drifts by ulps)
    if formula not in ECE_FORMULAS:
        raise ConfigError(f"unknown ece formula {formula!r}")
    ece, mce = 0.0, 0.0
    total = n * k
    for b in range(table.m):
        size = table.binsize[b]
        if size == 0:
            continue
        acc = table.acc_sum[b] / size
        conf = table.conf_sum[b] / size
        mce = max(mce, abs(acc - conf))
        if formula == ECE_STANDARD:
            ece += size / total * abs(acc - conf)
        else:
            ece += size / total * abs(table.acc_sum[b] - table.conf_sum[b])
    if formula == ECE_PAPER:
        ece /= table.m
    return float(ece), float(mce)


def nll(probs: np.ndarray, labels: np.ndarray) -> float:
    """Mean negative log-probability of the true label, floored at 1e-12."""
    probs = np.asarray(probs, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    p = np.maximum(probs[np.arange(len(labels)), labels], PROB_FLOOR)
    return float(-np.log(p).mean())


def scaled_probs(logits: np.ndarray, t: float) -> np.ndarray:
    from .mlp import softmax

    return softmax(np.asarray(logits, dtype=np.float64) / t)


def _nll_at(logits: np.ndarray, labels: np.ndarray, t: float) -> float:
    from .mlp import log_softmax

    logp = log_softmax(np.asarray(logits, dtype=np.float64) / t)
    return float(-logp[np.arange(len(labels)), labels].mean())


T_LO, T_HI = 0.05, 20.0
_INVPHI = (np.sqrt(5.0) - 1.0) / 2.0


def fit_temperature(logits: np.ndarray, labels: np.ndarray) -> float:
    """Temperature minimizing NLL of softmax(logits / T) on the given set.

    A coarse geometric grid over [0.05, 20] brackets the minimum (the NLL is
    unimodal in T in practice but the grid guards against flat/edge cases),
    then golden-section search refines to |dT| < 1e-4.
    """
    labels = np.asarray(labels, dtype=np.int64)
    if np.unique(labels).size < 2:
        warnings.warn("temperature fit skipped: labels contain a single class")
        return 1.0

    grid = np.geomspace(T_LO, T_HI, 65)
    values = [_nll_at(logits, labels, t) for t in grid]
    i = int(np.argmin(values))
    lo = grid[max(i - 1, 0)]
    hi = grid[min(i + 1, len(grid) - 1)]

    a, b = lo, hi
    c = b - _INVPHI * (b - a)
    d = a + _INVPHI * (b - a)
    fc, fd = _nll_at(logits, labels, c), _nll_at(logits, labels, d)
    while b - a > 1e-4:
        if fc < fd:
            b, d, fd = d, c, fc
            c = b - _INVPHI * (b - a)
            fc = _nll_at(logits, labels, c)
        else:
            a, c, fc = c, d, fd
            d = a + _INVPHI * (b - a)
            fd = _nll_at(logits, labels, d)
    return float((a + b) / 2.0)


def normalized_bins(table: BinTable) -> tuple[tuple[float, float, float, float], ...]:
    """(bin_center, accuracy, confidence, weight) for nonempty bins."""
    total = table.binsize.sum()
    rows = []
    for i in range(table.m):
        if table.binsize[i] == 0:
            continue
        rows.append(
            (
                (i + 0.5) / table.m,
                float(table.acc_sum[i] / table.binsize[i]),
                float(table.conf_sum[i] / table.binsize[i]),
                float(table.binsize[i] / total),
            )
        )
    return tuple(rows)


def build_report(
    table: BinTable, n: int, k: int, nll_value: float, t_star: float,
    formula: str = ECE_STANDARD,
) -> CalibrationReport:
    ece, mce = ece_mce(table, n, k, formula)
    return CalibrationReport(ece, mce, nll_value, t_star, normalized_bins(table))


def reliability_emit(table: BinTable, path_csv, path_svg, annotations: dict | None = None) -> None:
    """Write the reliability table as CSV and a small standalone SVG chart.

    The SVG shows per-bin accuracy bars over the identity diagonal with
    confidence markers; `annotations` (e.g. ECE/MCE/NLL values) are printed
    in the lower-right corner, matching the usual reliability-plot layout.
    """
    rows = normalized_bins(table)
    with open(path_csv, "w") as fh:
        fh.write("bin_center,accuracy,confidence,weight\n")
        for center, acc, conf, weight in rows:
            fh.write(f"{center!r},{acc!r},{conf!r},{weight!r}\n")

    size, margin = 480, 50
    plot = size - 2 * margin

    def px(x: float) -> float:
        return margin + x * plot

    def py(y: float) -> float:
        return size - margin - y * plot

    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{size}" height="{size}" '
        f'viewBox="0 0 {size} {size}">',
        f'<rect width="{size}" height="{size}" fill="white"/>',
        f'<line x1="{px(0)}" y1="{py(0)}" x2="{px(1)}" y2="{py(1)}" '
        'stroke="#888" stroke-dasharray="6,4"/>',
    ]
    bw = plot / table.m
    for center, acc, conf, _w in rows:
        x = margin + (center - 0.5 / table.m) * plot
        parts.append(
            f'<rect x="{x:.2f}" y="{py(acc):.2f}" width="{bw:.2f}" '
            f'height="{max(py(0) - py(acc), 0.0):.2f}" fill="#4878a8" fill-opacity="0.75" '
            'stroke="#2b4a68" stroke-width="0.8"/>'
        )
        parts.append(f'<circle cx="{px(center):.2f}" cy="{py(conf):.2f}" r="3.5" fill="#c0392b"/>')
    parts.append(
        f'<rect x="{margin}" y="{margin}" width="{plot}" height="{plot}" '
        'fill="none" stroke="#333"/>'
    )
    for frac in (0.0, 0.25, 0.5, 0.75, 1.0):
        parts.append(
            f'<text x="{px(frac):.1f}" y="{size - margin + 18}" font-size="11" '
            f'text-anchor="middle" fill="#333">{frac:g}</text>'
        )
        parts.append(
            f'<text x="{margin - 8}" y="{py(frac) + 4:.1f}" font-size="11" '
            f'text-anchor="end" fill="#333">{frac:g}</text>'
        )
    parts.append(
        f'<text x="{size / 2}" y="{size - 12}" font-size="13" text-anchor="middle" '
        'fill="#333">confidence</text>'
    )
    parts.append(
        f'<text x="14" y="{size / 2}" font-size="13" text-anchor="middle" fill="#333" '
        f'transform="rotate(-90 14 {size / 2})">accuracy</text>'
    )
    if annotations:
        y = py(0) - 10 - 14 * (len(annotations) - 1)
        for key, val in annotations.items():
            parts.append(
                f'<text x="{px(1) - 8:.1f}" y="{y:.1f}" font-size="12" '
                f'text-anchor="end" fill="#222">{key}={val:.4g}</text>'
            )
            y += 14
    parts.append("</svg>")
    with open(path_svg, "w") as fh:
        fh.write("\n".join(parts) + "\n")
