"""Noncoherent RSS probing and the coherent symbol model behind the SNR convention."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .array import ImpairmentVector, apply_impairment


@dataclass(frozen=True)
class SoundingConfig:
    rss_snr_db: float = 20.0
    seed: int = 0

    def __post_init__(self):
        if not np.isfinite(self.rss_snr_db) and self.rss_snr_db != np.inf:
            raise ValueError("rss_snr_db must be finite or +inf")


@dataclass(frozen=True, eq=False)
class RssVector:
    """Magnitude measurements p_1..p_M; ``n_clamped`` counts noise draws clipped at zero."""

    values: np.ndarray
    n_clamped: int = 0

    def __post_init__(self):
        v = np.asarray(self.values, dtype=np.float64)
        if np.any(v < 0):
            raise ValueError("RSS values must be nonnegative")
        object.__setattr__(self, "values", v)

    def __len__(self):
        return self.values.shape[0]

    def __array__(self, dtype=None, copy=None):
        return self.values if dtype is None else self.values.astype(dtype)


def coherent_symbol(w, h, sigma_n: float, rng: np.random.Generator) -> complex:
    """y = w^H h + n with n ~ CN(0, sigma_n^2) and a unit pilot symbol."""
    w = np.asarray(w, dtype=np.complex128)
    h = np.asarray(h, dtype=np.complex128)
    if w.shape != h.shape:
        raise ValueError("AWV and channel lengths differ")
    if sigma_n < 0:
        raise ValueError("sigma_n must be nonnegative")
    n = (rng.standard_normal() + 1j * rng.standard_normal()) * sigma_n / np.sqrt(2.0)
    return complex(np.vdot(w, h) + n)


def rss_measure(w_tilde, h, sigma_rss: float, rng: np.random.Generator) -> float:
    """max(0, |w~^H h| + n) with real Gaussian n of standard deviation sigma_rss."""
    if sigma_rss < 0:
        raise ValueError("sigma_rss must be nonnegative")
    clean = abs(np.vdot(np.asarray(w_tilde, dtype=np.complex128), np.asarray(h, dtype=np.complex128)))
    return max(0.0, clean + sigma_rss * rng.standard_normal())


def noiseless_rss(codewords, e: ImpairmentVector, h) -> np.ndarray:
    """|(diag(e) w_m)^H h| for every row of ``codewords``."""
    w_tilde = apply_impairment(e, np.atleast_2d(codewords))
    return np.abs(np.conj(w_tilde) @ np.asarray(h, dtype=np.complex128))


def sound_codebook(codebook, e: ImpairmentVector, h, sigma_rss: float,
                   rng: np.random.Generator) -> RssVector:
    """Probe the channel once with every codeword, in codebook order.

    Noise samples are drawn in one block of length ``len(codebook)``, so the
    result equals sequential calls to :func:`rss_measure` on the same stream.
    """
    if sigma_rss < 0:
        raise ValueError("sigma_rss must be nonnegative")
    codewords = getattr(codebook, "codewords", codebook)
    clean = noiseless_rss(codewords, e, h)
    noisy = clean + sigma_rss * rng.standard_normal(clean.shape[0])
    n_clamped = int(np.count_nonzero(noisy < 0))
    return RssVector(np.maximum(noisy, 0.0), n_clamped)


def sigma_from_rss_snr(h, codebook, e: ImpairmentVector, rss_snr_db: float) -> float:
    """Noise std such that mean_m |w~_m^H h|^2 / sigma^2 equals the requested SNR."""
    codewords = getattr(codebook, "codewords", codebook)
    if len(codewords) == 0:
        raise ValueError("codebook is empty")
    power = float(np.mean(noiseless_rss(codewords, e, h) ** 2))
    if not power > 0:
        raise ValueError("channel has zero energy through this codebook")
    if rss_snr_db == np.inf:
        return 0.0
    return float(np.sqrt(power / 10.0 ** (rss_snr_db / 10.0)))
