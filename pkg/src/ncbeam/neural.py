"""Dense beam classifier written directly in numpy.

Architecture: FC(M->64) -> BN -> ReLU -> FC(64->128) -> BN -> ReLU -> FC(128->K').
Weights are stored (out, in); a layer computes ``x @ W.T + b``. BN scale and
shift are trainable, running statistics are not, which gives exactly
64M + 129K' + 8768 trainable values.
"""

from __future__ import annotations

import copy
import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .dataset import Dataset, truncate_features

HIDDEN = (64, 128)
BN_EPS = 1e-3
BN_MOMENTUM = 0.99
MODEL_FORMAT = "ncbeam-model/1"

TRAINABLE = ("fc1_w", "fc1_b", "bn1_gamma", "bn1_beta",
             "fc2_w", "fc2_b", "bn2_gamma", "bn2_beta",
             "fc3_w", "fc3_b")
RUNNING = ("bn1_mean", "bn1_var", "bn2_mean", "bn2_var")


class ArchitectureError(ValueError):
    pass


@dataclass
class NetworkParameters:
    tensors: dict
    meta: dict

    @property
    def M(self) -> int:
        return self.meta["M"]

    @property
    def n_labels(self) -> int:
        return self.meta["K"]

    def trainable_count(self) -> int:
        return sum(self.tensors[name].size for name in TRAINABLE)

    def copy(self) -> "NetworkParameters":
        return NetworkParameters({k: v.copy() for k, v in self.tensors.items()}, copy.deepcopy(self.meta))

    def check(self) -> None:
        """Raise ArchitectureError unless every tensor has the shape implied by meta."""
        for name, shape in expected_shapes(self.M, self.n_labels).items():
            if name not in self.tensors:
                raise ArchitectureError(f"missing tensor {name}")
            if self.tensors[name].shape != shape:
                raise ArchitectureError(f"{name} has shape {self.tensors[name].shape}, expected {shape}")
        for name in ("bn1_var", "bn2_var"):
            if np.any(self.tensors[name] <= 0):
                raise ArchitectureError(f"{name} must be positive")


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 1e-3
    rms_decay: float = 0.9
    epsilon: float = 1e-7
    batch_size: int = 32
    max_epochs: int = 200
    early_stop_patience: int = 20
    val_fraction: float = 0.15
    seed: int = 0

    def __post_init__(self):
        if not (self.learning_rate >= 0 and 0 < self.rms_decay < 1 and self.epsilon > 0):
            raise ValueError("invalid optimizer hyperparameters")
        if self.batch_size < 2 or self.max_epochs < 1 or self.early_stop_patience < 1:
            raise ValueError("batch_size must be >= 2, max_epochs and patience >= 1")
        if self.early_stop_patience >= self.max_epochs:
            raise ValueError("early_stop_patience must be smaller than max_epochs")
        if not 0 < self.val_fraction < 1:
            raise ValueError("val_fraction must lie strictly between 0 and 1")

    @classmethod
    def from_dict(cls, obj: dict) -> "TrainConfig":
        unknown = set(obj) - set(cls.__dataclass_fields__)
        if unknown:
            raise ValueError(f"unknown TrainConfig keys: {sorted(unknown)}")
        return cls(**obj)


@dataclass
class TrainHistory:
    train_loss: list = field(default_factory=list)
    train_acc: list = field(default_factory=list)
    val_acc: list = field(default_factory=list)
    best_epoch: int = -1

    def __len__(self):
        return len(self.train_loss)

    def to_csv(self) -> str:
        lines = ["epoch,train_loss,train_acc,val_acc"]
        for i, (lo, ta, va) in enumerate(zip(self.train_loss, self.train_acc, self.val_acc)):
            lines.append(f"{i + 1},{lo!r},{ta!r},{va!r}")
        return "\n".join(lines) + "\n"


def param_count(M: int, K: int) -> int:
    if M < 1 or K < 1:
        raise ValueError("M and K must be positive")
    return 64 * M + 129 * K + 8768


def expected_shapes(M: int, K: int) -> dict:
    h1, h2 = HIDDEN
    return {
        "fc1_w": (h1, M), "fc1_b": (h1,),
        "bn1_gamma": (h1,), "bn1_beta": (h1,), "bn1_mean": (h1,), "bn1_var": (h1,),
        "fc2_w": (h2, h1), "fc2_b": (h2,),
        "bn2_gamma": (h2,), "bn2_beta": (h2,), "bn2_mean": (h2,), "bn2_var": (h2,),
        "fc3_w": (K, h2), "fc3_b": (K,),
    }


def init_network(M: int, K: int, seed: int = 0) -> NetworkParameters:
    """LeCun-uniform weights (limit sqrt(3 / fan_in)), zero biases, identity BN."""
    if M < 1 or K < 2:
        raise ValueError("need M >= 1 and K' >= 2")
    rng = np.random.default_rng(seed)
    shapes = expected_shapes(M, K)
    t = {}
    for layer in ("fc1", "fc2", "fc3"):
        out_dim, fan_in = shapes[f"{layer}_w"]
        limit = math.sqrt(3.0 / fan_in)
        t[f"{layer}_w"] = rng.uniform(-limit, limit, (out_dim, fan_in))
        t[f"{layer}_b"] = np.zeros(out_dim)
    for bn in ("bn1", "bn2"):
        n = shapes[f"{bn}_gamma"][0]
        t[f"{bn}_gamma"] = np.ones(n)
        t[f"{bn}_beta"] = np.zeros(n)
        t[f"{bn}_mean"] = np.zeros(n)
        t[f"{bn}_var"] = np.ones(n)
    return NetworkParameters(t, {"M": int(M), "K": int(K), "seed": int(seed),
                                 "normalization": "per-sample max"})


def normalize_features(p) -> np.ndarray:
    """Divide an RSS vector by its maximum so the largest entry is exactly 1."""
    p = np.asarray(getattr(p, "values", p), dtype=np.float64)
    peak = p.max(axis=-1, keepdims=True)
    if np.any(peak <= 0):
        raise ValueError("cannot normalize an all-zero RSS vector")
    return p / peak


def normalize_rows(P) -> np.ndarray:
    """Batch form of normalize_features; an all-zero row (every probe clamped) stays zero."""
    P = np.asarray(P, dtype=np.float64)
    peak = P.max(axis=-1, keepdims=True)
    return P / np.where(peak > 0, peak, 1.0)


def features(dataset: Dataset, M: int) -> np.ndarray:
    return normalize_rows(truncate_features(dataset, M))


def _bn_forward(z, gamma, beta, mean, var, train):
    if train:
        mu = z.mean(axis=0)
        var_b = z.var(axis=0)
    else:
        mu, var_b = mean, var
    inv_std = 1.0 / np.sqrt(var_b + BN_EPS)
    xhat = (z - mu) * inv_std
    return gamma * xhat + beta, (xhat, inv_std, mu, var_b)


def _forward(params: NetworkParameters, X, train: bool, update_stats: bool):
    t = params.tensors
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2 or X.shape[1] != params.M:
        raise ValueError(f"expected a (batch, {params.M}) feature array, got shape {X.shape}")
    if train and X.shape[0] < 2:
        raise ValueError("train-mode batch normalization needs a batch of at least 2")
    cache = {"x0": X}
    a = X
    for i in (1, 2):
        z = a @ t[f"fc{i}_w"].T + t[f"fc{i}_b"]
        y, (xhat, inv_std, mu, var_b) = _bn_forward(
            z, t[f"bn{i}_gamma"], t[f"bn{i}_beta"], t[f"bn{i}_mean"], t[f"bn{i}_var"], train)
        a = np.maximum(y, 0.0)
        cache[f"xhat{i}"], cache[f"inv_std{i}"], cache[f"y{i}"], cache[f"a{i}"] = xhat, inv_std, y, a
        if train and update_stats:
            n = z.shape[0]
            t[f"bn{i}_mean"] *= BN_MOMENTUM
            t[f"bn{i}_mean"] += (1.0 - BN_MOMENTUM) * mu
            t[f"bn{i}_var"] *= BN_MOMENTUM
            t[f"bn{i}_var"] += (1.0 - BN_MOMENTUM) * var_b * n / (n - 1)
    logits = a @ t["fc3_w"].T + t["fc3_b"]
    return logits, cache


def forward(params: NetworkParameters, features, mode: str = "infer") -> np.ndarray:
    """Logits of shape (batch, K').

    ``mode="train"`` normalizes with batch statistics and folds them into the
    running averages; ``mode="infer"`` uses the running averages and never
    modifies ``params``.
    """
    if mode not in ("train", "infer"):
        raise ValueError(f"mode must be 'train' or 'infer', got {mode!r}")
    logits, _ = _forward(params, np.atleast_2d(features), mode == "train", update_stats=True)
    return logits


def _log_softmax(logits):
    shifted = logits - logits.max(axis=1, keepdims=True)
    return shifted - np.log(np.sum(np.exp(shifted), axis=1, keepdims=True))


def loss(logits, labels) -> float:
    """Mean sparse categorical cross-entropy."""
    logits = np.atleast_2d(np.asarray(logits, dtype=np.float64))
    labels = np.atleast_1d(np.asarray(labels, dtype=np.int64))
    if np.any(labels < 0) or np.any(labels >= logits.shape[1]):
        raise ValueError("label out of range")
    logp = _log_softmax(logits)
    return float(-np.mean(logp[np.arange(labels.size), labels]))


def _bn_backward(dy, xhat, inv_std, gamma):
    n = dy.shape[0]
    dgamma = np.sum(dy * xhat, axis=0)
    dbeta = np.sum(dy, axis=0)
    dxhat = dy * gamma
    dz = inv_std / n * (n * dxhat - dxhat.sum(axis=0) - xhat * np.sum(dxhat * xhat, axis=0))
    return dz, dgamma, dbeta


def gradients(params: NetworkParameters, X, labels, update_stats: bool = False):
    """Batch loss and analytic gradients of every trainable tensor (train-mode BN)."""
    t = params.tensors
    labels = np.asarray(labels, dtype=np.int64)
    logits, c = _forward(params, X, train=True, update_stats=update_stats)
    n = logits.shape[0]
    logp = _log_softmax(logits)
    batch_loss = float(-np.mean(logp[np.arange(n), labels]))

    dlogits = np.exp(logp)
    dlogits[np.arange(n), labels] -= 1.0
    dlogits /= n

    g = {"fc3_w": dlogits.T @ c["a2"], "fc3_b": dlogits.sum(axis=0)}
    da = dlogits @ t["fc3_w"]
    for i in (2, 1):
        dy = da * (c[f"y{i}"] > 0)
        dz, g[f"bn{i}_gamma"], g[f"bn{i}_beta"] = _bn_backward(
            dy, c[f"xhat{i}"], c[f"inv_std{i}"], t[f"bn{i}_gamma"])
        a_prev = c["a1"] if i == 2 else c["x0"]
        g[f"fc{i}_w"] = dz.T @ a_prev
        g[f"fc{i}_b"] = dz.sum(axis=0)
        if i == 2:
            da = dz @ t["fc2_w"]
    return batch_loss, g, logits


def init_optimizer(params: NetworkParameters) -> dict:
    return {name: np.zeros_like(params.tensors[name]) for name in TRAINABLE}


def backward_and_step(params: NetworkParameters, X, labels, config: TrainConfig, opt_state: dict):
    """One RMSprop step on a batch; updates ``params`` and ``opt_state`` in place.

    Returns ``(params, batch_loss)``.
    """
    batch_loss, grads, _ = gradients(params, X, labels, update_stats=True)
    return params, _apply_rmsprop(params, grads, config, opt_state, batch_loss)


def _apply_rmsprop(params, grads, config, opt_state, batch_loss):
    if not math.isfinite(batch_loss):
        raise FloatingPointError(f"non-finite batch loss {batch_loss}")
    rho, lr, eps = config.rms_decay, config.learning_rate, config.epsilon
    for name in TRAINABLE:
        g = grads[name]
        if not np.all(np.isfinite(g)):
            raise FloatingPointError(f"non-finite gradient in {name}")
        v = opt_state[name]
        v *= rho
        v += (1.0 - rho) * g * g
        params.tensors[name] -= lr * g / (np.sqrt(v) + eps)
    return batch_loss


def _batches(n, batch_size, rng):
    order = rng.permutation(n)
    chunks = [order[i:i + batch_size] for i in range(0, n, batch_size)]
    if len(chunks) > 1 and chunks[-1].size == 1:
        chunks[-2] = np.concatenate([chunks[-2], chunks.pop()])
    return chunks


def train_arrays(X, y, n_labels: int, config: TrainConfig, X_val=None, y_val=None):
    """Train on normalized feature rows; validation accuracy drives early stopping.

    When no validation set is given, ``config.val_fraction`` of the rows is
    held out at random. The returned parameters are the best-validation ones.
    """
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.int64)
    rng = np.random.default_rng(config.seed)
    if X_val is None:
        if X.shape[0] < 4:
            raise ValueError("need at least 4 training points to carve a validation set")
        perm = rng.permutation(X.shape[0])
        n_val = min(max(1, int(round(config.val_fraction * X.shape[0]))), X.shape[0] - 2)
        X_val, y_val = X[perm[:n_val]], y[perm[:n_val]]
        X, y = X[perm[n_val:]], y[perm[n_val:]]
    if X.shape[0] < 2:
        raise ValueError("training set is too small")

    params = init_network(X.shape[1], n_labels, config.seed)
    opt = init_optimizer(params)
    history = TrainHistory()
    best, best_acc, stale = params.copy(), -1.0, 0
    for epoch in range(config.max_epochs):
        losses, correct = 0.0, 0
        for idx in _batches(X.shape[0], config.batch_size, rng):
            batch_loss, grads, logits = gradients(params, X[idx], y[idx], update_stats=True)
            _apply_rmsprop(params, grads, config, opt, batch_loss)
            losses += batch_loss * idx.size
            correct += int(np.count_nonzero(np.argmax(logits, axis=1) == y[idx]))
        val_acc = float(np.mean(np.argmax(forward(params, X_val), axis=1) == y_val))
        history.train_loss.append(losses / X.shape[0])
        history.train_acc.append(correct / X.shape[0])
        history.val_acc.append(val_acc)
        if val_acc > best_acc:
            best, best_acc, stale = params.copy(), val_acc, 0
            history.best_epoch = epoch
        else:
            stale += 1
            if stale >= config.early_stop_patience:
                break
    best.meta["seed"] = int(config.seed)
    return best, history


def train(train_set: Dataset, M: int, config: TrainConfig = TrainConfig()):
    """Fit the classifier on the first M sounding measurements of ``train_set``."""
    if len(train_set) == 0:
        raise ValueError("training set is empty")
    params, history = train_arrays(features(train_set, M), train_set.labels,
                                   train_set.n_labels, config)
    params.meta["label_map"] = list(train_set.label_map)
    return params, history


def predict(params: NetworkParameters, rss):
    """Beam label from raw (unnormalized) RSS; a batch of rows gives an index array."""
    rss = np.asarray(getattr(rss, "values", rss), dtype=np.float64)
    if rss.shape[-1] != params.M:
        raise ValueError(f"expected {params.M} RSS values, got {rss.shape[-1]}")
    logits = forward(params, normalize_rows(np.atleast_2d(rss)))
    out = np.argmax(logits, axis=1)
    return int(out[0]) if rss.ndim == 1 else out


def save_model(params: NetworkParameters, path) -> None:
    obj = {
        "format": MODEL_FORMAT,
        "meta": params.meta,
        "tensors": {name: {"shape": list(arr.shape), "data": arr.ravel().tolist()}
                    for name, arr in sorted(params.tensors.items())},
    }
    Path(path).write_text(json.dumps(obj, sort_keys=True) + "\n", encoding="utf-8")


def load_model(path, M: int | None = None, n_labels: int | None = None) -> NetworkParameters:
    """Load a model, optionally insisting on a feature length and label count."""
    obj = json.loads(Path(path).read_text(encoding="utf-8"))
    if obj.get("format") != MODEL_FORMAT:
        raise ArchitectureError("not a model file")
    tensors = {name: np.asarray(rec["data"], dtype=np.float64).reshape(rec["shape"])
               for name, rec in obj["tensors"].items()}
    params = NetworkParameters(tensors, obj["meta"])
    params.check()
    if M is not None and params.M != M:
        raise ArchitectureError(f"model expects M={params.M}, requested M={M}")
    if n_labels is not None and params.n_labels != n_labels:
        raise ArchitectureError(f"model has {params.n_labels} labels, requested {n_labels}")
    return params


def train_config_dict(config: TrainConfig) -> dict:
    return asdict(config)
