"""Experiment drivers: beam patterns, accuracy / gain loss versus M, and the
required-M versus array-size sweep. Every output is a pure function of the
ExperimentConfig and its master seed.
"""

from __future__ import annotations

import csv
import io
import math
import platform
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace

import numpy as np

from . import __version__
from .array import ArrayGeometry, ImpairmentConfig, apply_impairment, beam_pattern, draw_impairment
from .baseline import DegenerateDictionaryError, estimate_dictionary, model_dictionary, rss_mp
from .codebooks import dft_codebook, pn_codebook
from .dataset import Dataset, GenConfig, filter_labels, generate_dataset, split
from .metrics import accuracy, gain_loss_db, gain_loss_percentile, required_m
from .neural import TrainConfig, features, predict, train_arrays

ALGOS = ("nn", "rss_mp_vanilla", "rss_mp_refined")
ACCURACY_FIELDS = ("scenario", "algo", "M", "train_size", "trial", "accuracy")
LOSS_FIELDS = ("scenario", "algo", "M", "trial", "p50_db", "p90_db", "p99_db")
REQUIRED_FIELDS = ("scenario", "algo", "trial", "required_m")
SCALING_FIELDS = ("scenario", "algo", "n_rx", "K", "trial", "required_m")
PATTERN_FIELDS = ("angle_deg", "dft_model_db", "dft_impaired_db", "pn_model_db", "pn_impaired_db")


@dataclass(frozen=True)
class ExperimentConfig:
    scenario: str = "default"
    gen: GenConfig = field(default_factory=GenConfig)
    m_list: tuple = (2, 3, 4, 5, 6, 8, 10, 15, 20)
    train_sizes: tuple = (500, 1000, 2000)
    array_sizes: tuple = (8, 16, 32, 64)
    train: TrainConfig = field(default_factory=TrainConfig)
    trials: int = 3
    out_dir: str = "results"
    seed: int = 0
    min_count: int = 20
    train_fraction: float = 2.0 / 3.0
    threshold_db: float = 2.0
    coverage: float = 0.9
    # array-size sweep: K = ceil(beams_per_element * N) over array_dft_range_deg
    beams_per_element: float = 0.9
    array_aoa_range_deg: tuple = (-45.0, 45.0)
    array_dft_range_deg: tuple = (-45.0, 45.0)
    array_rss_snr_db: float = 20.0
    array_m_list: tuple = tuple(range(1, 13)) + (14, 16, 20, 24, 28, 32)
    array_n_points: int = 3000
    # beam-pattern figure
    pattern_step_deg: float = 0.1
    pattern_dft_angle_deg: float = 0.0
    pattern_pn_index: int = 0
    pattern_floor_db: float = 30.0
    jobs: int = 1

    def __post_init__(self):
        if isinstance(self.gen, dict):
            object.__setattr__(self, "gen", GenConfig.from_dict(self.gen))
        if isinstance(self.train, dict):
            object.__setattr__(self, "train", TrainConfig.from_dict(self.train))
        for name in ("m_list", "train_sizes", "array_sizes", "array_m_list"):
            value = tuple(int(v) for v in getattr(self, name))
            if not value:
                raise ValueError(f"{name} must not be empty")
            object.__setattr__(self, name, value)
        for name in ("array_aoa_range_deg", "array_dft_range_deg"):
            object.__setattr__(self, name, tuple(float(v) for v in getattr(self, name)))
        if self.trials < 1:
            raise ValueError("trials must be >= 1")
        if max(self.m_list) > self.gen.M0:
            raise ValueError(f"m_list exceeds the {self.gen.M0} recorded sounding beams")
        if min(self.m_list) < 1 or min(self.array_m_list) < 1:
            raise ValueError("every M must be >= 1")

    @classmethod
    def from_dict(cls, obj: dict) -> "ExperimentConfig":
        unknown = set(obj) - set(cls.__dataclass_fields__)
        if unknown:
            raise ValueError(f"unknown experiment config keys: {sorted(unknown)}")
        return cls(**obj)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["gen"] = self.gen.to_dict()
        for k, v in d.items():
            if isinstance(v, tuple):
                d[k] = list(v)
        return d


def derive_seed(master: int, *coords: int) -> int:
    """Stable 32-bit seed for one cell of a sweep."""
    return int(np.random.SeedSequence([int(master), *[int(c) for c in coords]]).generate_state(1)[0])


# stage tags keep seeds of different sweeps independent
_DATA, _TRAIN, _ARRAY_DATA, _ARRAY_TRAIN, _PATTERN = range(5)


def _trial_gen(config: ExperimentConfig, trial: int) -> GenConfig:
    s = derive_seed(config.seed, _DATA, trial)
    return replace(config.gen, seed=s, pn_seed=s,
                   impairment=replace(config.gen.impairment, seed=s))


def prepare_trial(gen: GenConfig, min_count: int, train_fraction: float, seed: int):
    ds = filter_labels(generate_dataset(gen), min_count)
    train_set, test_set = split(ds, train_fraction, seed)
    return ds, train_set, test_set


def _subsample(train_set: Dataset, size: int, seed: int) -> Dataset:
    if size >= len(train_set):
        return train_set
    sub, _ = split(train_set, size / len(train_set), seed)
    return sub


def evaluate_algorithms(ds: Dataset, train_set: Dataset, test_set: Dataset, M: int, params):
    """Predictions of all three algorithms on the same test RSS matrix.

    An RSS-MP variant is left out when its dictionary has an all-zero column
    (no usable signature for some label at this M), and ``nn`` when
    ``params`` is None.
    """
    P = test_set.pn_matrix[:, :M]
    pn = ds.pn_codebook()
    builders = {"rss_mp_vanilla": lambda: model_dictionary(pn.codewords[:M], ds.retained_angles(), ds.geometry),
                "rss_mp_refined": lambda: estimate_dictionary(train_set, M)}
    out = {}
    for algo, build in builders.items():
        try:
            out[algo] = rss_mp(P, build())
        except DegenerateDictionaryError:
            pass
    if params is not None:
        out["nn"] = predict(params, P)
    return out


def losses_on_test(ds: Dataset, test_set: Dataset, predictions) -> np.ndarray:
    codewords = ds.dft_codebook().codewords[ds.label_map]
    return gain_loss_db(test_set.channels(), ds.impairment, codewords, predictions)


def _m_sweep_trial(config: ExperimentConfig, trial: int):
    ds, train_set, test_set = prepare_trial(_trial_gen(config, trial), config.min_count,
                                            config.train_fraction, derive_seed(config.seed, _DATA, trial, 1))
    sizes = sorted(set(min(s, len(train_set)) for s in config.train_sizes))
    full = sizes[-1]
    acc_rows, loss_rows, losses_by_algo = [], [], {a: {} for a in ALGOS}
    for size in sizes:
        sub = _subsample(train_set, size, derive_seed(config.seed, _TRAIN, trial, 0, size))
        for M in config.m_list:
            tc = replace(config.train, seed=derive_seed(config.seed, _TRAIN, trial, M, size))
            params, _ = train_arrays(features(sub, M), sub.labels, sub.n_labels, tc)
            preds = evaluate_algorithms(ds, sub, test_set, M, params)
            for algo in ("nn", "rss_mp_refined") + (("rss_mp_vanilla",) if size == full else ()):
                acc = accuracy(preds[algo], test_set.labels) if algo in preds else None
                acc_rows.append((config.scenario, algo, M, size, trial, acc))
            if size == full:
                for algo in ALGOS:
                    if algo not in preds:
                        loss_rows.append((config.scenario, algo, M, trial, None, None, None))
                        continue
                    L = losses_on_test(ds, test_set, preds[algo])
                    losses_by_algo[algo][M] = L
                    loss_rows.append((config.scenario, algo, M, trial,
                                      *(gain_loss_percentile(L, q) for q in (50, 90, 99))))
    req_rows = [(config.scenario, algo, trial,
                 required_m(losses_by_algo[algo], config.threshold_db, config.coverage)
                 if losses_by_algo[algo] else None)
                for algo in ALGOS]
    return acc_rows, loss_rows, req_rows


def _map(fn, args, jobs):
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            return list(pool.map(fn, *zip(*args)))
    return [fn(*a) for a in args]


@dataclass
class SweepResult:
    accuracy: list = field(default_factory=list)
    gainloss: list = field(default_factory=list)
    required: list = field(default_factory=list)
    scaling: list = field(default_factory=list)


def run_m_sweep(config: ExperimentConfig) -> SweepResult:
    """Accuracy and gain-loss versus M in one pass; each NN fit is shared by both tables."""
    per_trial = _map(_m_sweep_trial, [(config, t) for t in range(config.trials)], config.jobs)
    res = SweepResult()
    for acc_rows, loss_rows, req_rows in per_trial:
        res.accuracy += acc_rows
        res.gainloss += loss_rows
        res.required += req_rows
    return res


def run_accuracy_vs_m(config: ExperimentConfig) -> str:
    return to_csv(ACCURACY_FIELDS, run_m_sweep(config).accuracy)


def run_gainloss_vs_m(config: ExperimentConfig) -> str:
    return to_csv(LOSS_FIELDS, run_m_sweep(config).gainloss)


def _array_trial(config: ExperimentConfig, n_rx: int, trial: int):
    K = math.ceil(config.beams_per_element * n_rx)
    s = derive_seed(config.seed, _ARRAY_DATA, n_rx, trial)
    gen = GenConfig(n_points=config.array_n_points, aoa_range_deg=config.array_aoa_range_deg,
                    K=K, M0=max(config.array_m_list), N_rx=n_rx,
                    spacing_over_wavelength=config.gen.spacing_over_wavelength,
                    dft_range_deg=config.array_dft_range_deg,
                    impairment=ImpairmentConfig(0.0, 0.0, s),
                    rss_snr_db=config.array_rss_snr_db, seed=s, pn_seed=s)
    ds, train_set, test_set = prepare_trial(gen, config.min_count, config.train_fraction, s)
    losses = {a: {} for a in ALGOS}
    found = {a: None for a in ALGOS}
    # M is scanned upward; an algorithm stops being evaluated once it qualifies
    for M in sorted(config.array_m_list):
        params = None
        if found["nn"] is None:
            tc = replace(config.train, seed=derive_seed(config.seed, _ARRAY_TRAIN, n_rx, trial, M))
            params, _ = train_arrays(features(train_set, M), train_set.labels, train_set.n_labels, tc)
        preds = evaluate_algorithms(ds, train_set, test_set, M, params)
        for algo in ALGOS:
            if found[algo] is None and algo in preds:
                losses[algo][M] = losses_on_test(ds, test_set, preds[algo])
                found[algo] = required_m({M: losses[algo][M]}, config.threshold_db, config.coverage)
        if all(v is not None for v in found.values()):
            break
    return [(config.scenario, algo, n_rx, K, trial, found[algo]) for algo in ALGOS]


def run_required_m_vs_array(config: ExperimentConfig) -> list:
    args = [(config, n, t) for n in config.array_sizes for t in range(config.trials)]
    rows = []
    for r in _map(_array_trial, args, config.jobs):
        rows += r
    return rows


def beam_pattern_rows(config: ExperimentConfig):
    """Model and impaired power patterns (dB) of one DFT and one PN codeword, plus a summary."""
    gen = config.gen
    geom = ArrayGeometry(gen.N_rx, gen.spacing_over_wavelength)
    seed = derive_seed(config.seed, _PATTERN)
    e = draw_impairment(replace(gen.impairment, seed=seed), geom)
    dft = dft_codebook(geom, gen.K, *gen.dft_range_deg)
    k = int(np.argmin(np.abs(dft.angles_deg - config.pattern_dft_angle_deg)))
    pn = pn_codebook(geom, max(gen.M0, config.pattern_pn_index + 1), seed)
    w_dft, w_pn = dft[k], pn[config.pattern_pn_index]

    n_steps = int(round(90.0 / config.pattern_step_deg))
    grid = np.arange(-n_steps + 1, n_steps) * config.pattern_step_deg
    pats = {
        "dft_model": beam_pattern(w_dft, geom, grid),
        "dft_impaired": beam_pattern(apply_impairment(e, w_dft), geom, grid),
        "pn_model": beam_pattern(w_pn, geom, grid),
        "pn_impaired": beam_pattern(apply_impairment(e, w_pn), geom, grid),
    }
    db = {name: 10.0 * np.log10(np.maximum(v, 1e-30)) for name, v in pats.items()}
    rows = list(zip(grid.tolist(), *(db[n].tolist() for n in
                                     ("dft_model", "dft_impaired", "pn_model", "pn_impaired"))))

    steer = dft.angles_deg[k]
    # half-power region of the nominal pencil beam
    half_null = 1.0 / (geom.n_elements * geom.spacing_over_wavelength)
    near = np.abs(np.sin(np.deg2rad(grid)) - np.sin(np.deg2rad(steer))) < half_null
    mainlobe = near & (db["dft_model"] >= db["dft_model"][near].max() - 3.0)
    lo, hi = gen.dft_range_deg
    span = (grid >= lo) & (grid <= hi)

    def dev(model, impaired, mask):
        floor = model[mask].max() - config.pattern_floor_db
        return float(np.mean(np.abs(np.maximum(model[mask], floor) - np.maximum(impaired[mask], floor))))

    ml_idx = np.flatnonzero(mainlobe)
    peak_angle = float(grid[ml_idx[np.argmax(pats["dft_impaired"][ml_idx])]])
    summary = {
        "dft_index": k,
        "dft_steer_deg": float(steer),
        "dft_grid_step_deg": float(dft.angles_deg[1] - dft.angles_deg[0]),
        "dft_peak_shift_deg": abs(peak_angle - float(steer)),
        "dft_mainlobe_dev_db": dev(db["dft_model"], db["dft_impaired"], mainlobe),
        "pn_dev_db": dev(db["pn_model"], db["pn_impaired"], span),
        "impairment_seed": seed,
    }
    return rows, summary


def run_beam_pattern(config: ExperimentConfig) -> str:
    rows, _ = beam_pattern_rows(config)
    return to_csv(PATTERN_FIELDS, rows)


def _fmt(v):
    if v is None:
        return ""
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


def to_csv(fields, rows) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(fields)
    for row in rows:
        writer.writerow([_fmt(v) for v in row])
    return buf.getvalue()


def manifest(config: ExperimentConfig, command: str, outputs: list) -> dict:
    return {
        "command": command,
        "config": config.to_dict(),
        "master_seed": config.seed,
        "outputs": outputs,
        "versions": {"ncbeam": __version__, "numpy": np.__version__,
                     "python": platform.python_version()},
    }
