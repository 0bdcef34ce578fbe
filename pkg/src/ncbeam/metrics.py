"""Post-alignment gain, accuracy, percentiles, required number of probes."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .array import ImpairmentVector


@dataclass(frozen=True)
class AlignmentResult:
    predicted: int
    reference: int
    gain_pred: float
    gain_ref: float

    @property
    def loss_db(self) -> float:
        if self.gain_pred <= 0:
            return math.inf
        return 10.0 * math.log10(self.gain_ref / self.gain_pred)


def bf_gain(h, e: ImpairmentVector, w) -> float:
    """Normalized combining gain |h^H diag(e) w|^2 / ||h||^2 for a unit-norm w."""
    h = np.asarray(h, dtype=np.complex128)
    energy = float(np.vdot(h, h).real)
    if not energy > 0:
        raise ValueError("channel vector is zero")
    return float(abs(np.vdot(h, e.e * np.asarray(w, dtype=np.complex128))) ** 2 / energy)


def gain_table(h_batch, e: ImpairmentVector, codewords) -> np.ndarray:
    """bf_gain for every (channel, codeword) pair; shape (n_channels, n_codewords)."""
    h_batch = np.atleast_2d(np.asarray(h_batch, dtype=np.complex128))
    energy = np.sum(np.abs(h_batch) ** 2, axis=1, keepdims=True)
    if np.any(energy <= 0):
        raise ValueError("channel vector is zero")
    w_tilde = e.e * np.asarray(codewords, dtype=np.complex128)
    return np.abs(np.conj(h_batch) @ w_tilde.T) ** 2 / energy


def alignment_results(h_batch, e: ImpairmentVector, codewords, predicted) -> list[AlignmentResult]:
    """Score predicted beams against the exhaustive optimum over the same codewords."""
    gains = gain_table(h_batch, e, codewords)
    predicted = np.asarray(predicted, dtype=np.int64)
    ref = np.argmax(gains, axis=1)
    rows = np.arange(gains.shape[0])
    return [AlignmentResult(int(p), int(r), float(gp), float(gr))
            for p, r, gp, gr in zip(predicted, ref, gains[rows, predicted], gains[rows, ref])]


def gain_loss_db(h_batch, e: ImpairmentVector, codewords, predicted) -> np.ndarray:
    """Vectorized loss_db of :func:`alignment_results`."""
    gains = gain_table(h_batch, e, codewords)
    predicted = np.asarray(predicted, dtype=np.int64)
    g_pred = gains[np.arange(gains.shape[0]), predicted]
    g_ref = gains.max(axis=1)
    with np.errstate(divide="ignore"):
        return 10.0 * np.log10(g_ref / g_pred)


def accuracy(predictions, references) -> float:
    predictions = np.asarray(predictions)
    references = np.asarray(references)
    if predictions.shape != references.shape or predictions.size == 0:
        raise ValueError("predictions and references must be non-empty and of equal length")
    return float(np.mean(predictions == references))


def gain_loss_percentile(losses_db, q: float) -> float:
    """Order statistic at 0-based rank floor(q/100 * n), capped at the last sample.

    Without ties this is the first sorted sample preceded by at least q percent
    of the data, so 0..99 at q=90 gives 90.
    """
    x = np.sort(np.asarray(losses_db, dtype=np.float64))
    if x.size == 0:
        raise ValueError("empty loss list")
    if not 0 <= q <= 100:
        raise ValueError("percentile must be within [0, 100]")
    idx = min(x.size - 1, int(math.floor(q * x.size / 100.0)))
    return float(x[idx])


def coverage_below(losses_db, threshold_db: float) -> float:
    x = np.asarray(losses_db, dtype=np.float64)
    return float(np.count_nonzero(x < threshold_db)) / x.size


def required_m(results_by_m: dict, threshold_db: float = 2.0, coverage: float = 0.9):
    """Smallest M whose losses fall strictly below threshold_db in at least ``coverage`` of cases."""
    if not results_by_m:
        raise ValueError("no results")
    for m in sorted(results_by_m):
        losses = np.asarray(results_by_m[m], dtype=np.float64)
        if losses.size and np.count_nonzero(losses < threshold_db) >= coverage * losses.size - 1e-9:
            return int(m)
    return None


def overhead_reduction(K: int, M: int) -> float:
    if K <= 0 or not 0 <= M <= K:
        raise ValueError("need K > 0 and 0 <= M <= K")
    return (K - M) / K
