"""Directional (DFT) and pseudo-noise (PN) sounding codebooks."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .array import ArrayGeometry, array_response, complex_to_pairs, pairs_to_complex

KINDS = ("directional", "sounding", "concatenated")
PN_PHASES = np.array([0.0, 0.5 * np.pi, np.pi, 1.5 * np.pi])


@dataclass(frozen=True, eq=False)
class Codebook:
    """Ordered set of antenna weight vectors, stored row-wise as a (size, N) array.

    ``angles_deg`` holds one steering angle per directional codeword. For a
    concatenated codebook it covers the leading directional block only and
    ``n_directional`` marks where the sounding block starts.
    """

    codewords: np.ndarray
    kind: str
    angles_deg: np.ndarray | None = None
    seed: int | None = None
    n_directional: int | None = None

    def __post_init__(self):
        cw = np.asarray(self.codewords, dtype=np.complex128)
        if cw.ndim != 2:
            raise ValueError("codewords must be a 2-D array (size, n_elements)")
        if not np.all(np.isfinite(cw)):
            raise ValueError("codewords must be finite")
        if self.kind not in KINDS:
            raise ValueError(f"unknown codebook kind {self.kind!r}")
        object.__setattr__(self, "codewords", cw)
        if self.angles_deg is not None:
            ang = np.asarray(self.angles_deg, dtype=np.float64)
            if np.any(np.diff(ang) <= 0):
                raise ValueError("directional angles must be strictly increasing")
            object.__setattr__(self, "angles_deg", ang)
        if self.kind == "directional":
            if self.angles_deg is None or self.angles_deg.shape[0] != cw.shape[0]:
                raise ValueError("directional codebooks need one angle per codeword")

    def __len__(self):
        return self.codewords.shape[0]

    def __getitem__(self, idx):
        return self.codewords[idx]

    def __eq__(self, other):
        if not isinstance(other, Codebook):
            return NotImplemented
        same_angles = (self.angles_deg is None and other.angles_deg is None) or (
            self.angles_deg is not None and other.angles_deg is not None
            and np.array_equal(self.angles_deg, other.angles_deg))
        return (self.kind == other.kind and self.seed == other.seed
                and self.n_directional == other.n_directional
                and np.array_equal(self.codewords, other.codewords) and same_angles)

    @property
    def n_elements(self) -> int:
        return self.codewords.shape[1]

    def prefix(self, m: int) -> "Codebook":
        """First ``m`` codewords of a sounding codebook."""
        if self.kind != "sounding":
            raise ValueError("prefix is defined for sounding codebooks")
        if not 0 <= m <= len(self):
            raise ValueError(f"prefix length {m} outside [0, {len(self)}]")
        return Codebook(self.codewords[:m], "sounding", seed=self.seed)

    def to_json(self) -> dict:
        obj = {"kind": self.kind, "n_elements": self.n_elements}
        if self.angles_deg is not None:
            obj["angles_deg"] = self.angles_deg.tolist()
        if self.n_directional is not None:
            obj["n_directional"] = self.n_directional
        obj["codewords"] = complex_to_pairs(self.codewords)
        if self.seed is not None:
            obj["seed"] = self.seed
        return obj

    @classmethod
    def from_json(cls, obj: dict) -> "Codebook":
        n = int(obj["n_elements"])
        cw = pairs_to_complex(obj["codewords"]) if obj["codewords"] else np.zeros((0, n), complex)
        if cw.ndim != 2 or cw.shape[1] != n:
            raise ValueError("codeword length does not match n_elements")
        angles = obj.get("angles_deg")
        return cls(cw, obj["kind"], None if angles is None else np.asarray(angles),
                   obj.get("seed"), obj.get("n_directional"))


def steering_codeword(geometry: ArrayGeometry, angle_deg: float) -> np.ndarray:
    return array_response(geometry, angle_deg) / np.sqrt(geometry.n_elements)


def dft_codebook(geometry: ArrayGeometry, K: int = 64, angle_min_deg: float = -45.0,
                 angle_max_deg: float = 45.0) -> Codebook:
    """K steering beams uniformly spaced in angle, both endpoints included."""
    if K < 2:
        raise ValueError(f"a directional codebook needs K >= 2 beams, got {K}")
    if not angle_min_deg < angle_max_deg:
        raise ValueError("angle_min_deg must be smaller than angle_max_deg")
    angles = np.linspace(angle_min_deg, angle_max_deg, K)
    cw = array_response(geometry, angles) / np.sqrt(geometry.n_elements)
    return Codebook(cw, "directional", angles)


def pn_phase_indices(n_codewords: int, n_elements: int, seed: int) -> np.ndarray:
    # One Philox stream per codeword keyed on (seed, codeword index): a
    # codebook of size M is the exact prefix of any larger one.
    out = np.empty((n_codewords, n_elements), dtype=np.int64)
    for m in range(n_codewords):
        rng = np.random.Generator(np.random.Philox(np.random.SeedSequence([seed, m])))
        out[m] = rng.integers(0, 4, n_elements)
    return out


def pn_codebook(geometry: ArrayGeometry, M0: int, seed: int = 0) -> Codebook:
    """Constant-modulus codewords with phases drawn uniformly from {0, pi/2, pi, 3pi/2}."""
    if M0 < 1:
        raise ValueError(f"M0 must be at least 1, got {M0}")
    idx = pn_phase_indices(M0, geometry.n_elements, seed)
    # exact quadrature values so the phase set is hit bit-exactly
    unit = np.array([1.0 + 0j, 1j, -1.0 + 0j, -1j])[idx]
    return Codebook(unit / np.sqrt(geometry.n_elements), "sounding", seed=seed)


def concat_codebook(directional: Codebook, sounding: Codebook) -> Codebook:
    """Directional beams first, sounding beams after."""
    if directional.n_elements != sounding.n_elements:
        raise ValueError("codebooks have different codeword lengths")
    cw = np.concatenate([directional.codewords, sounding.codewords], axis=0)
    return Codebook(cw, "concatenated", directional.angles_deg, sounding.seed,
                    n_directional=len(directional))
