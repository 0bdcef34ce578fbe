"""Phased-array response, per-element hardware impairment and single-path channels.

Angles are given in degrees at the API boundary and converted to radians
internally. All arrays are complex128 / float64.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np


@dataclass(frozen=True)
class ArrayGeometry:
    """Uniform linear array.

    Parameters
    ----------
    n_elements : int
        Number of receive elements (must be at least 2).
    spacing_over_wavelength : float
        Element spacing d/lambda, default half-wavelength.
    """

    n_elements: int
    spacing_over_wavelength: float = 0.5

    def __post_init__(self):
        if int(self.n_elements) != self.n_elements or self.n_elements < 2:
            raise ValueError(f"n_elements must be an integer >= 2, got {self.n_elements}")
        if not self.spacing_over_wavelength > 0:
            raise ValueError("spacing_over_wavelength must be positive")


@dataclass(frozen=True)
class ImpairmentConfig:
    gain_std_db: float = 2.0
    phase_std_deg: float = 35.0
    seed: int = 0

    def __post_init__(self):
        if self.gain_std_db < 0 or self.phase_std_deg < 0:
            raise ValueError("impairment standard deviations must be nonnegative")


@dataclass(frozen=True, eq=False)
class ImpairmentVector:
    """Unknown multiplicative gain/phase error, one complex value per element."""

    e: np.ndarray
    config: ImpairmentConfig | None = None

    def __post_init__(self):
        e = np.asarray(self.e, dtype=np.complex128)
        if e.ndim != 1:
            raise ValueError("impairment vector must be one-dimensional")
        mag = np.abs(e)
        if not (np.all(np.isfinite(mag)) and np.all(mag > 0)):
            raise ValueError("impairment magnitudes must be finite and positive")
        object.__setattr__(self, "e", e)

    def __len__(self):
        return self.e.shape[0]

    def __eq__(self, other):
        if not isinstance(other, ImpairmentVector):
            return NotImplemented
        return np.array_equal(self.e, other.e) and self.config == other.config

    @classmethod
    def identity(cls, geometry: ArrayGeometry) -> "ImpairmentVector":
        return cls(np.ones(geometry.n_elements, dtype=np.complex128),
                   ImpairmentConfig(0.0, 0.0, 0))

    def to_json(self) -> dict:
        return {
            "e": complex_to_pairs(self.e),
            "config": None if self.config is None else asdict(self.config),
        }

    @classmethod
    def from_json(cls, obj: dict) -> "ImpairmentVector":
        cfg = obj.get("config")
        return cls(pairs_to_complex(obj["e"]),
                   None if cfg is None else ImpairmentConfig(**cfg))


@dataclass(frozen=True)
class ChannelRealization:
    """Dominant-path channel: true AoA and complex post-Tx-beam gain."""

    aoa_deg: float
    alpha: complex = 1.0 + 0.0j

    def __post_init__(self):
        _check_angle(self.aoa_deg)
        if not abs(self.alpha) > 0:
            raise ValueError("channel gain must be nonzero")


def complex_to_pairs(z) -> list:
    z = np.asarray(z, dtype=np.complex128)
    return np.stack([z.real, z.imag], axis=-1).tolist()


def pairs_to_complex(pairs) -> np.ndarray:
    arr = np.asarray(pairs, dtype=np.float64)
    if arr.shape[-1] != 2:
        raise ValueError("expected [re, im] pairs")
    return arr[..., 0] + 1j * arr[..., 1]


def _check_angle(angle_deg):
    a = np.asarray(angle_deg, dtype=np.float64)
    if not np.all((a > -90.0) & (a < 90.0)):
        raise ValueError(f"angle must lie in the open interval (-90, 90) degrees, got {angle_deg}")


def array_response(geometry: ArrayGeometry, angle_deg) -> np.ndarray:
    """Receive steering vector exp(j 2 pi n d/lambda sin(angle)), n = 0..N-1.

    A scalar angle gives shape (N,); an array of angles gives shape (len, N).
    """
    _check_angle(angle_deg)
    angle = np.deg2rad(np.asarray(angle_deg, dtype=np.float64))
    n = np.arange(geometry.n_elements)
    phase = 2.0 * np.pi * geometry.spacing_over_wavelength * np.multiply.outer(np.sin(angle), n)
    return np.exp(1j * phase)


def draw_impairment(config: ImpairmentConfig, geometry: ArrayGeometry) -> ImpairmentVector:
    """Log-normal gain (std in dB) times a Gaussian phase error, i.i.d. per element."""
    rng = np.random.default_rng(config.seed)
    gain_db = rng.normal(0.0, 1.0, geometry.n_elements) * config.gain_std_db
    phase = rng.normal(0.0, 1.0, geometry.n_elements) * np.deg2rad(config.phase_std_deg)
    e = 10.0 ** (gain_db / 20.0) * np.exp(1j * phase)
    return ImpairmentVector(e, config)


def apply_impairment(e: ImpairmentVector, w) -> np.ndarray:
    """diag(e) w. ``w`` may also be a stack of codewords with shape (..., N)."""
    w = np.asarray(w, dtype=np.complex128)
    if w.shape[-1] != len(e):
        raise ValueError(f"length mismatch: impairment has {len(e)} elements, AWV has {w.shape[-1]}")
    return e.e * w


def make_channel(aoa_deg: float, alpha: complex = 1.0) -> ChannelRealization:
    return ChannelRealization(float(aoa_deg), complex(alpha))


def channel_vector(ch: ChannelRealization, geometry: ArrayGeometry) -> np.ndarray:
    return ch.alpha * array_response(geometry, ch.aoa_deg)


def beam_pattern(w_tilde, geometry: ArrayGeometry, angles_deg) -> np.ndarray:
    """Power pattern |w^H a(theta)|^2 over a grid of angles."""
    angles = np.atleast_1d(np.asarray(angles_deg, dtype=np.float64))
    if angles.size == 0:
        raise ValueError("angle grid is empty")
    a = array_response(geometry, angles)
    return np.abs(a @ np.conj(np.asarray(w_tilde, dtype=np.complex128))) ** 2
