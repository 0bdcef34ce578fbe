"""Synthetic learning-stage captures: random AoAs sounded with the concatenated
codebook, labels from the directional sweep, filtering, splitting and JSON-lines I/O.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np

from .array import (ArrayGeometry, ImpairmentConfig, ImpairmentVector, array_response,
                    draw_impairment)
from .codebooks import Codebook, concat_codebook, dft_codebook, pn_codebook
from .sounding import sigma_from_rss_snr, sound_codebook

FORMAT_TAG = "ncbeam-dataset/1"


class DatasetFormatError(ValueError):
    pass


@dataclass(frozen=True)
class GenConfig:
    n_points: int = 3000
    aoa_range_deg: tuple = (-27.0, 45.0)
    K: int = 64
    M0: int = 36
    N_rx: int = 36
    spacing_over_wavelength: float = 0.5
    dft_range_deg: tuple = (-45.0, 45.0)
    impairment: ImpairmentConfig = field(default_factory=ImpairmentConfig)
    rss_snr_db: float = 20.0
    seed: int = 0
    pn_seed: int = 0

    def __post_init__(self):
        if self.n_points < 1:
            raise ValueError("n_points must be >= 1")
        lo, hi = self.aoa_range_deg
        if not -90 < lo < hi < 90:
            raise ValueError(f"invalid aoa_range_deg {self.aoa_range_deg}")
        if isinstance(self.impairment, dict):
            object.__setattr__(self, "impairment", ImpairmentConfig(**self.impairment))
        object.__setattr__(self, "aoa_range_deg", tuple(float(a) for a in self.aoa_range_deg))
        object.__setattr__(self, "dft_range_deg", tuple(float(a) for a in self.dft_range_deg))

    @classmethod
    def from_dict(cls, obj: dict) -> "GenConfig":
        known = {f for f in cls.__dataclass_fields__}
        unknown = set(obj) - known
        if unknown:
            raise ValueError(f"unknown GenConfig keys: {sorted(unknown)}")
        return cls(**obj)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["aoa_range_deg"] = list(self.aoa_range_deg)
        d["dft_range_deg"] = list(self.dft_range_deg)
        return d


@dataclass(frozen=True, eq=False)
class DataPoint:
    aoa_true_deg: float
    dft_rss: np.ndarray
    pn_rss: np.ndarray
    label: int
    snr_tag_db: float

    def __eq__(self, other):
        if not isinstance(other, DataPoint):
            return NotImplemented
        return (self.aoa_true_deg == other.aoa_true_deg and self.label == other.label
                and self.snr_tag_db == other.snr_tag_db
                and np.array_equal(self.dft_rss, other.dft_rss)
                and np.array_equal(self.pn_rss, other.pn_rss))


class Dataset:
    """Captured points plus the descriptors needed to rebuild codebooks and impairment.

    ``label_map[i]`` is the directional-codebook index of dense label ``i``.
    """

    def __init__(self, points, meta: dict, label_map=None):
        self.points = list(points)
        self.meta = meta
        if label_map is None:
            label_map = list(range(meta["K"]))
        self.label_map = [int(k) for k in label_map]
        if len(set(self.label_map)) != len(self.label_map):
            raise ValueError("label_map must be injective")
        K, M0 = meta["K"], meta["M0"]
        for p in self.points:
            if p.dft_rss.shape != (K,) or p.pn_rss.shape != (M0,):
                raise ValueError("inconsistent RSS vector lengths")

    def __len__(self):
        return len(self.points)

    def __eq__(self, other):
        if not isinstance(other, Dataset):
            return NotImplemented
        return (self.meta == other.meta and self.label_map == other.label_map
                and self.points == other.points)

    def subset(self, indices) -> "Dataset":
        return Dataset([self.points[i] for i in indices], self.meta, self.label_map)

    @property
    def n_labels(self) -> int:
        return len(self.label_map)

    @property
    def labels(self) -> np.ndarray:
        return np.array([p.label for p in self.points], dtype=np.int64)

    @property
    def aoas(self) -> np.ndarray:
        return np.array([p.aoa_true_deg for p in self.points], dtype=np.float64)

    @property
    def dft_matrix(self) -> np.ndarray:
        return np.array([p.dft_rss for p in self.points]).reshape(len(self), self.meta["K"])

    @property
    def pn_matrix(self) -> np.ndarray:
        return np.array([p.pn_rss for p in self.points]).reshape(len(self), self.meta["M0"])

    @property
    def geometry(self) -> ArrayGeometry:
        return ArrayGeometry(self.meta["n_elements"], self.meta["spacing_over_wavelength"])

    @property
    def impairment(self) -> ImpairmentVector:
        return ImpairmentVector.from_json(self.meta["impairment"])

    def dft_codebook(self) -> Codebook:
        lo, hi = self.meta["dft_range_deg"]
        return dft_codebook(self.geometry, self.meta["K"], lo, hi)

    def pn_codebook(self) -> Codebook:
        return pn_codebook(self.geometry, self.meta["M0"], self.meta["pn_seed"])

    def retained_angles(self) -> np.ndarray:
        return self.dft_codebook().angles_deg[self.label_map]

    def channels(self) -> np.ndarray:
        # unit-gain channels; every metric used downstream is invariant to alpha
        return array_response(self.geometry, self.aoas).reshape(len(self), -1)


def assign_label(dft_rss) -> int:
    """Index of the strongest directional beam, lowest index on ties."""
    x = np.asarray(dft_rss)
    if x.size == 0:
        raise ValueError("empty RSS vector")
    return int(np.argmax(x))


def point_rng(seed: int, index: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([seed, index]))


def generate_dataset(config: GenConfig) -> Dataset:
    geom = ArrayGeometry(config.N_rx, config.spacing_over_wavelength)
    dft = dft_codebook(geom, config.K, *config.dft_range_deg)
    pn = pn_codebook(geom, config.M0, config.pn_seed)
    book = concat_codebook(dft, pn)
    e = draw_impairment(config.impairment, geom)

    lo, hi = config.aoa_range_deg
    h_ref = array_response(geom, 0.5 * (lo + hi))
    sigma = sigma_from_rss_snr(h_ref, pn, e, config.rss_snr_db)

    points = []
    n_clamped = 0
    for i in range(config.n_points):
        rng = point_rng(config.seed, i)
        aoa = float(rng.uniform(lo, hi))
        alpha = np.exp(1j * rng.uniform(0.0, 2.0 * np.pi))
        h = alpha * array_response(geom, aoa)
        rss = sound_codebook(book, e, h, sigma, rng)
        n_clamped += rss.n_clamped
        dft_rss = rss.values[:config.K]
        points.append(DataPoint(aoa, dft_rss, rss.values[config.K:], assign_label(dft_rss),
                                float(config.rss_snr_db)))

    meta = {
        "n_elements": geom.n_elements,
        "spacing_over_wavelength": geom.spacing_over_wavelength,
        "K": config.K,
        "M0": config.M0,
        "dft_range_deg": list(config.dft_range_deg),
        "pn_seed": config.pn_seed,
        "impairment": e.to_json(),
        "rss_snr_db": config.rss_snr_db,
        "sigma_rss": sigma,
        "n_clamped": n_clamped,
        "seed": config.seed,
        "gen_config": config.to_dict(),
    }
    return Dataset(points, meta)


def label_counts(dataset: Dataset) -> np.ndarray:
    return np.bincount(dataset.labels, minlength=dataset.n_labels)


def filter_labels(dataset: Dataset, min_count: int = 20) -> Dataset:
    """Drop points whose label has fewer than ``min_count`` members and re-index densely."""
    if min_count < 1:
        raise ValueError("min_count must be >= 1")
    counts = label_counts(dataset)
    kept = [lab for lab in range(dataset.n_labels) if counts[lab] >= min_count]
    if not kept:
        raise ValueError(f"no label has at least {min_count} points")
    remap = {old: new for new, old in enumerate(kept)}
    points = [replace(p, label=remap[p.label]) for p in dataset.points if p.label in remap]
    return Dataset(points, dataset.meta, [dataset.label_map[k] for k in kept])


def split(dataset: Dataset, train_fraction: float = 0.617, seed: int = 0):
    """Label-stratified random split into (train, test).

    Per-label train counts start from floor(f * n_label); the leftover needed to
    reach round(f * n) overall goes to the labels with the largest fractional
    parts. Every label keeps at least one point on each side.
    """
    if not 0 < train_fraction < 1:
        raise ValueError("train_fraction must lie strictly between 0 and 1")
    labels = dataset.labels
    present = np.unique(labels)
    groups = {lab: np.flatnonzero(labels == lab) for lab in present}
    small = [int(lab) for lab, idx in groups.items() if idx.size < 2]
    if small:
        raise ValueError(f"labels {small} have fewer than 2 points; cannot stratify")

    ideal = np.array([train_fraction * groups[lab].size for lab in present])
    n_train = np.floor(ideal).astype(np.int64)
    leftover = int(round(train_fraction * len(dataset))) - int(n_train.sum())
    order = np.argsort(-(ideal - n_train), kind="stable")
    n_train[order[:max(leftover, 0)]] += 1
    sizes = np.array([groups[lab].size for lab in present])
    n_train = np.clip(n_train, 1, sizes - 1)

    rng = np.random.default_rng(seed)
    train_idx, test_idx = [], []
    for lab, n in zip(present, n_train):
        perm = rng.permutation(groups[lab])
        train_idx.extend(perm[:n])
        test_idx.extend(perm[n:])
    return dataset.subset(sorted(train_idx)), dataset.subset(sorted(test_idx))


def truncate_features(x, M: int):
    """Leading M sounding measurements of a point, a dataset or a raw array."""
    if isinstance(x, DataPoint):
        arr = x.pn_rss
    elif isinstance(x, Dataset):
        arr = x.pn_matrix
    else:
        arr = np.asarray(x, dtype=np.float64)
    M0 = arr.shape[-1]
    if int(M) != M or not 1 <= M <= M0:
        raise ValueError(f"M must be an integer in [1, {M0}], got {M}")
    return arr[..., :M]


def _point_record(p: DataPoint) -> dict:
    return {
        "aoa_true_deg": p.aoa_true_deg,
        "dft_rss": p.dft_rss.tolist(),
        "pn_rss": p.pn_rss.tolist(),
        "label": p.label,
        "snr_tag_db": p.snr_tag_db,
    }


def save_dataset(dataset: Dataset, path) -> None:
    header = {"record": "header", "format": FORMAT_TAG, "meta": dataset.meta,
              "label_map": dataset.label_map, "n_points": len(dataset)}
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(json.dumps(header, sort_keys=True) + "\n")
        for p in dataset.points:
            fh.write(json.dumps(_point_record(p)) + "\n")


def load_dataset(path) -> Dataset:
    path = Path(path)
    with open(path, encoding="utf-8") as fh:
        lines = fh.read().splitlines()
    if not lines:
        raise DatasetFormatError(f"{path}:1: empty file")

    def parse(lineno, text):
        try:
            return json.loads(text)
        except json.JSONDecodeError as exc:
            raise DatasetFormatError(f"{path}:{lineno}: {exc.msg}") from exc

    header = parse(1, lines[0])
    if not isinstance(header, dict) or header.get("format") != FORMAT_TAG:
        raise DatasetFormatError(f"{path}:1: missing or unsupported dataset header")
    meta = header["meta"]
    label_map = header["label_map"]
    K, M0 = meta["K"], meta["M0"]

    points = []
    for lineno, text in enumerate(lines[1:], start=2):
        if not text.strip():
            continue
        rec = parse(lineno, text)
        try:
            p = DataPoint(float(rec["aoa_true_deg"]), np.asarray(rec["dft_rss"], dtype=np.float64),
                          np.asarray(rec["pn_rss"], dtype=np.float64), int(rec["label"]),
                          float(rec["snr_tag_db"]))
        except (KeyError, TypeError, ValueError) as exc:
            raise DatasetFormatError(f"{path}:{lineno}: bad record ({exc})") from exc
        if p.dft_rss.shape != (K,) or p.pn_rss.shape != (M0,):
            raise DatasetFormatError(
                f"{path}:{lineno}: expected {K} directional and {M0} sounding values, "
                f"got {p.dft_rss.size} and {p.pn_rss.size}")
        if not 0 <= p.label < len(label_map) or label_map[p.label] != assign_label(p.dft_rss):
            raise DatasetFormatError(f"{path}:{lineno}: label does not match the directional sweep argmax")
        points.append(p)
    if "n_points" in header and header["n_points"] != len(points):
        raise DatasetFormatError(f"{path}: header announces {header['n_points']} points, found {len(points)}")
    return Dataset(points, meta, label_map)
