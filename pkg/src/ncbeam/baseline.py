"""Model-based alignment: exhaustive sweep selection and RSS matching pursuit.

Vanilla and dictionary-refined RSS-MP share :func:`rss_mp`; they differ only
in whether the magnitude dictionary comes from :func:`model_dictionary` or
from :func:`estimate_dictionary`.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .array import ArrayGeometry, array_response
from .dataset import Dataset, assign_label, truncate_features


class DegenerateDictionaryError(ValueError):
    """A dictionary column is all zero, so RSS-MP has no signature for that label."""


@dataclass(frozen=True, eq=False)
class MagnitudeDictionary:
    """Nonnegative M x K' matrix; entry (m, k) approximates |w~_m^H a(theta_k)|."""

    values: np.ndarray
    source: str
    provenance: dict = field(default_factory=dict)

    def __post_init__(self):
        v = np.asarray(self.values, dtype=np.float64)
        if v.ndim != 2:
            raise ValueError("dictionary must be a matrix")
        if np.any(v < 0) or not np.all(np.isfinite(v)):
            raise ValueError("dictionary entries must be finite and nonnegative")
        if np.any(np.all(v == 0, axis=0)):
            raise DegenerateDictionaryError("dictionary has an all-zero column")
        if self.source not in ("model", "estimated"):
            raise ValueError(f"unknown dictionary source {self.source!r}")
        object.__setattr__(self, "values", v)

    @property
    def shape(self):
        return self.values.shape

    def to_json(self) -> dict:
        M, K = self.values.shape
        return {"source": self.source, "M": M, "K": K, "values": self.values.tolist(),
                "provenance": self.provenance}

    @classmethod
    def from_json(cls, obj: dict) -> "MagnitudeDictionary":
        values = np.asarray(obj["values"], dtype=np.float64).reshape(obj["M"], obj["K"])
        return cls(values, obj["source"], obj.get("provenance", {}))


def exhaustive_select(dft_rss) -> int:
    return assign_label(dft_rss)


def model_dictionary(sounding, dft_angles_deg, geometry: ArrayGeometry) -> MagnitudeDictionary:
    """Impairment-free |w_m^H a(theta_k)| from the nominal sounding codewords."""
    codewords = np.atleast_2d(getattr(sounding, "codewords", sounding))
    if codewords.shape[0] < 1:
        raise ValueError("need at least one sounding codeword")
    a = array_response(geometry, np.asarray(dft_angles_deg, dtype=np.float64)).reshape(-1, geometry.n_elements)
    values = np.abs(np.conj(codewords) @ a.T)
    return MagnitudeDictionary(values, "model", {"M": codewords.shape[0], "K": a.shape[0]})


def estimate_dictionary(train: Dataset, M: int) -> MagnitudeDictionary:
    """Average gain-normalized sounding RSS per label over the training set.

    Each point's path gain is estimated as its peak directional RSS divided
    by sqrt(N), so the estimate lives on the same scale as the model.
    """
    pn = truncate_features(train, M)
    gain = train.dft_matrix.max(axis=1) / np.sqrt(train.meta["n_elements"])
    if np.any(gain <= 0):
        raise ValueError("a training point has an all-zero directional sweep")
    scaled = pn / gain[:, None]
    labels = train.labels
    counts = np.bincount(labels, minlength=train.n_labels)
    missing = np.flatnonzero(counts == 0)
    if missing.size:
        raise ValueError(f"labels {missing.tolist()} have no training points")
    sums = np.zeros((train.n_labels, pn.shape[1]))
    np.add.at(sums, labels, scaled)
    values = (sums / counts[:, None]).T
    dead = np.flatnonzero(np.all(values == 0, axis=0))
    if dead.size:
        raise DegenerateDictionaryError(
            f"labels {dead.tolist()} have all-zero sounding RSS over the first {M} probes")
    return MagnitudeDictionary(values, "estimated", {"M": int(M), "K": train.n_labels,
                                                     "n_train": len(train)})


def rss_mp_scores(p, dictionary: MagnitudeDictionary) -> np.ndarray:
    """<p, |Psi_k|> / ||Psi_k|| for each column; ``p`` may be a batch of rows."""
    psi = dictionary.values
    p = np.asarray(p, dtype=np.float64)
    if p.shape[-1] != psi.shape[0]:
        raise ValueError(f"RSS length {p.shape[-1]} does not match dictionary rows {psi.shape[0]}")
    norms = np.linalg.norm(psi, axis=0)
    if np.any(norms == 0):
        raise ValueError("dictionary has an all-zero column")
    return (p @ psi) / norms


def rss_mp(p, dictionary: MagnitudeDictionary):
    """Column index with the highest normalized correlation (lowest index on ties).

    Returns an int for a single vector and an integer array for a batch.
    """
    scores = rss_mp_scores(p, dictionary)
    if scores.ndim == 1:
        return int(np.argmax(scores))
    return np.argmax(scores, axis=-1)
