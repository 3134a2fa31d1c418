"""Two-hidden-layer ReLU regressor written directly in numpy.

Each layer's weights live in one ``(fan_in + 1, fan_out)`` matrix whose row 0
holds the bias, i.e. the constant input ``x_0 = 1``.  The loss is batch MSE
plus ``weight_decay`` times the squared L2 norm of the non-bias rows.
"""
from __future__ import annotations

import itertools
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .errors import ArgumentError, ParseError, UndefinedMetricError

SEARCH_GRID = {
    "batch_size": (32, 64, 128),
    "learning_rate": (0.01, 0.005, 0.001, 0.0001),
    "weight_decay": (0.05, 0.01, 0.005),
    "hidden_nodes": (10, 15, 20),
}


@dataclass(frozen=True)
class TrainConfig:
    batch_size: int = 64
    learning_rate: float = 0.001
    weight_decay: float = 0.01
    hidden_nodes: int = 15
    max_epochs: int = 50
    patience: int | None = 10
    seed: int = 0
    eval_every: int = 0  # extra evaluations every N iterations; 0 = epoch ends only

    def __post_init__(self):
        for name in ("batch_size", "learning_rate", "hidden_nodes", "max_epochs"):
            if not getattr(self, name) > 0:
                raise ArgumentError(f"{name} must be positive")
        if self.weight_decay < 0:
            raise ArgumentError("weight_decay must be >= 0")
        if self.patience is not None and self.patience < 0:
            raise ArgumentError("patience must be >= 0")


@dataclass
class MlpModel:
    layer_sizes: tuple[int, ...]
    weights: list[np.ndarray]
    feature_mean: np.ndarray | None = None
    feature_std: np.ndarray | None = None

    def __post_init__(self):
        sizes = tuple(int(s) for s in self.layer_sizes)
        self.layer_sizes = sizes
        if len(self.weights) != len(sizes) - 1:
            raise ArgumentError("one weight matrix per layer transition expected")
        for w, (n_in, n_out) in zip(self.weights, zip(sizes[:-1], sizes[1:])):
            if w.shape != (n_in + 1, n_out):
                raise ArgumentError(f"weight shape {w.shape} does not match ({n_in + 1}, {n_out})")
        if self.feature_mean is None:
            self.feature_mean = np.zeros(sizes[0])
        if self.feature_std is None:
            self.feature_std = np.ones(sizes[0])

    @property
    def n_inputs(self) -> int:
        return self.layer_sizes[0]

    def copy(self) -> "MlpModel":
        return MlpModel(self.layer_sizes, [w.copy() for w in self.weights],
                        self.feature_mean.copy(), self.feature_std.copy())

    def standardize(self, features) -> np.ndarray:
        return (np.asarray(features, dtype=float) - self.feature_mean) / self.feature_std

    def predict(self, features) -> np.ndarray:
        """Predictions for raw (unstandardised) feature rows."""
        return forward(self, self.standardize(features))

    def predict_one(self, features) -> float:
        return float(self.predict(np.asarray(features, dtype=float)[None, :])[0])


def init(layer_sizes, seed: int = 0) -> MlpModel:
    """He-normal weights (variance 2 / fan_in), zero biases."""
    rng = np.random.default_rng(seed)
    weights = []
    for n_in, n_out in zip(layer_sizes[:-1], layer_sizes[1:]):
        w = np.zeros((n_in + 1, n_out))
        w[1:] = rng.normal(0.0, math.sqrt(2.0 / n_in), (n_in, n_out))
        weights.append(w)
    return MlpModel(tuple(layer_sizes), weights)


def init_for(config: TrainConfig, n_inputs: int = 8, seed: int | None = None) -> MlpModel:
    h = config.hidden_nodes
    return init((n_inputs, h, h, 1), config.seed if seed is None else seed)


def _check_inputs(model: MlpModel, x) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    squeeze = x.ndim == 1
    if squeeze:
        x = x[None, :]
    if x.ndim != 2 or x.shape[1] != model.n_inputs:
        raise ArgumentError(f"expected {model.n_inputs} inputs per sample, got shape {np.shape(x)}")
    return x


def _forward_cache(model: MlpModel, x: np.ndarray):
    pre, act = [], [x]
    h = x
    last = len(model.weights) - 1
    for i, w in enumerate(model.weights):
        z = h @ w[1:] + w[0]
        pre.append(z)
        h = z if i == last else np.maximum(z, 0.0)
        act.append(h)
    return pre, act


def forward(model: MlpModel, x):
    """Network output for already standardised input; scalar for a single vector."""
    arr = np.asarray(x, dtype=float)
    xb = _check_inputs(model, arr)
    _, act = _forward_cache(model, xb)
    out = act[-1][:, 0]
    return float(out[0]) if arr.ndim == 1 else out


def l2_penalty(model: MlpModel) -> float:
    return float(sum(np.sum(w[1:] ** 2) for w in model.weights))


def loss(model: MlpModel, x, y, weight_decay: float = 0.0) -> float:
    x = _check_inputs(model, x)
    y = np.asarray(y, dtype=float).reshape(-1)
    if y.size == 0:
        raise ArgumentError("loss of an empty batch")
    f = forward(model, x)
    return float(np.mean((f - y) ** 2) + weight_decay * l2_penalty(model))


def backward(model: MlpModel, x, y, weight_decay: float = 0.0) -> list[np.ndarray]:
    """Exact gradient of :func:`loss` for every weight matrix (bias rows included)."""
    x = _check_inputs(model, x)
    y = np.asarray(y, dtype=float).reshape(-1)
    if y.size == 0:
        raise ArgumentError("gradient of an empty batch")
    pre, act = _forward_cache(model, x)
    n = x.shape[0]
    delta = (2.0 / n) * (act[-1][:, 0] - y)[:, None]
    grads = [None] * len(model.weights)
    for i in range(len(model.weights) - 1, -1, -1):
        w = model.weights[i]
        g = np.empty_like(w)
        g[0] = delta.sum(axis=0)
        g[1:] = act[i].T @ delta + 2.0 * weight_decay * w[1:]
        grads[i] = g
        if i > 0:
            delta = (delta @ w[1:].T) * (pre[i - 1] > 0.0)
    return grads


@dataclass
class AdamState:
    m: list[np.ndarray]
    v: list[np.ndarray]
    t: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def zeros_like(cls, params) -> "AdamState":
        return cls([np.zeros_like(p) for p in params], [np.zeros_like(p) for p in params])


def adam_step(state: AdamState, params: list[np.ndarray], grads: list[np.ndarray], learning_rate: float) -> None:
    """In-place bias-corrected ADAM update of ``params``."""
    state.t += 1
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1 ** state.t
    c2 = 1.0 - b2 ** state.t
    for p, g, m, v in zip(params, grads, state.m, state.v):
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        p -= learning_rate * (m / c1) / (np.sqrt(v / c2) + state.eps)


# -- metrics -----------------------------------------------------------------------

def rmse(predictions, labels) -> float:
    p = np.asarray(predictions, dtype=float)
    y = np.asarray(labels, dtype=float)
    if p.shape != y.shape:
        raise ArgumentError(f"shape mismatch {p.shape} vs {y.shape}")
    if y.size == 0:
        raise ArgumentError("rmse of empty arrays")
    return float(np.sqrt(np.mean((p - y) ** 2)))


def r2(predictions, labels) -> float:
    p = np.asarray(predictions, dtype=float)
    y = np.asarray(labels, dtype=float)
    if p.shape != y.shape or y.size == 0:
        raise ArgumentError(f"need equal non-empty arrays, got {p.shape} and {y.shape}")
    ss_tot = float(np.sum((y - y.mean()) ** 2))
    if ss_tot == 0.0:
        raise UndefinedMetricError("R^2 is undefined for labels with zero variance")
    return 1.0 - float(np.sum((y - p) ** 2)) / ss_tot


# -- training ------------------------------------------------------------------------

@dataclass
class TrainingCurves:
    iteration: list[int] = field(default_factory=list)
    epoch: list[int] = field(default_factory=list)
    train_rmse: list[float] = field(default_factory=list)
    train_r2: list[float] = field(default_factory=list)
    val_rmse: list[float] = field(default_factory=list)
    val_r2: list[float] = field(default_factory=list)
    batch_loss: list[float] = field(default_factory=list)  # every iteration
    stopped_epoch: int = 0
    best_epoch: int = 0

    def record(self, iteration, epoch, tr, va):
        self.iteration.append(iteration)
        self.epoch.append(epoch)
        self.train_rmse.append(tr[0])
        self.train_r2.append(tr[1])
        self.val_rmse.append(va[0])
        self.val_r2.append(va[1])

    def to_csv(self, path) -> None:
        lines = ["iteration,epoch,train_rmse,train_r2,val_rmse,val_r2"]
        for row in zip(self.iteration, self.epoch, self.train_rmse, self.train_r2, self.val_rmse, self.val_r2):
            lines.append(",".join(repr(v if isinstance(v, int) else float(v)) for v in row))
        Path(path).write_text("\n".join(lines) + "\n")


def _metrics(model: MlpModel, x, y):
    pred = forward(model, x)
    try:
        score = r2(pred, y)
    except UndefinedMetricError:
        score = float("nan")
    return rmse(pred, y), score


def fit_standardization(model: MlpModel, features) -> MlpModel:
    features = np.asarray(features, dtype=float)
    std = features.std(axis=0)
    model.feature_mean = features.mean(axis=0)
    model.feature_std = np.where(std > 0, std, 1.0)
    return model


def train(model: MlpModel, train_xy, val_xy, config: TrainConfig,
          standardize: bool = True) -> tuple[MlpModel, TrainingCurves]:
    """Mini-batch ADAM with per-epoch evaluation and best-validation restore.

    ``train_xy`` / ``val_xy`` are ``(features, labels)`` pairs of raw
    features; when ``standardize`` is set the model's input statistics are
    fitted on the training features first.  Training halts once validation
    RMSE has not improved for ``patience + 1`` consecutive epochs
    (``patience=None`` disables early stopping).
    """
    x_tr, y_tr = (np.asarray(a, dtype=float) for a in train_xy)
    x_va, y_va = (np.asarray(a, dtype=float) for a in val_xy)
    if len(y_tr) == 0 or len(y_va) == 0:
        raise ArgumentError("training and validation sets must be non-empty")
    if config.batch_size > len(y_tr):
        raise ArgumentError(f"batch size {config.batch_size} exceeds {len(y_tr)} training samples")
    model = model.copy()
    if standardize:
        fit_standardization(model, x_tr)
    xs_tr, xs_va = model.standardize(x_tr), model.standardize(x_va)

    rng = np.random.default_rng(config.seed)
    adam = AdamState.zeros_like(model.weights)
    curves = TrainingCurves()
    best_rmse, best_weights, best_epoch = math.inf, None, 0
    stale = 0
    iteration = 0
    n = len(y_tr)
    for epoch in range(1, config.max_epochs + 1):
        order = rng.permutation(n)
        for start in range(0, n, config.batch_size):
            idx = order[start:start + config.batch_size]
            grads = backward(model, xs_tr[idx], y_tr[idx], config.weight_decay)
            adam_step(adam, model.weights, grads, config.learning_rate)
            iteration += 1
            if config.eval_every and iteration % config.eval_every == 0:
                curves.record(iteration, epoch, _metrics(model, xs_tr, y_tr), _metrics(model, xs_va, y_va))
        tr, va = _metrics(model, xs_tr, y_tr), _metrics(model, xs_va, y_va)
        if not (curves.iteration and curves.iteration[-1] == iteration):
            curves.record(iteration, epoch, tr, va)
        curves.stopped_epoch = epoch
        if va[0] < best_rmse:
            best_rmse, best_weights, best_epoch = va[0], [w.copy() for w in model.weights], epoch
            stale = 0
        else:
            stale += 1
            if config.patience is not None and stale > config.patience:
                break
    model.weights = best_weights
    curves.best_epoch = best_epoch
    return model, curves


# -- model selection ---------------------------------------------------------------------

def grid_points(grid: dict | None = None) -> list[dict]:
    grid = SEARCH_GRID if grid is None else grid
    keys = list(grid)
    return [dict(zip(keys, values)) for values in itertools.product(*(grid[k] for k in keys))]


def contiguous_folds(n: int, k: int) -> list[np.ndarray]:
    if k < 2:
        raise ArgumentError("need at least 2 folds")
    if k > n:
        raise ArgumentError(f"{k} folds requested for {n} samples")
    bounds = np.linspace(0, n, k + 1).round().astype(int)
    return [np.arange(bounds[i], bounds[i + 1]) for i in range(k)]


def cv_score(x, y, config: TrainConfig, k: int = 10) -> float:
    """Mean held-out RMSE over ``k`` contiguous folds.

    Each fold trains for the full epoch budget without early stopping, so the
    held-out block never influences the fitted weights.
    """
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    folds = contiguous_folds(len(y), k)
    cfg = replace(config, patience=None)
    scores = []
    for i, held in enumerate(folds):
        mask = np.ones(len(y), dtype=bool)
        mask[held] = False
        model = init_for(cfg, x.shape[1], seed=cfg.seed + i)
        fitted, _ = train(model, (x[mask], y[mask]), (x[held], y[held]), cfg)
        scores.append(rmse(fitted.predict(x[held]), y[held]))
    return float(np.mean(scores))


def _cv_task(args):
    x, y, cfg, k = args
    return cv_score(x, y, cfg, k)


@dataclass
class GridResult:
    best: TrainConfig
    scores: list[tuple[TrainConfig, float]]


def grid_search_cv(x, y, grid: dict | None = None, k: int = 10, base: TrainConfig | None = None,
                   jobs: int = 1) -> GridResult:
    """Exhaustive search over ``grid`` scored by k-fold CV RMSE.

    Ties go to fewer hidden nodes, then the smaller learning rate.
    """
    base = base or TrainConfig()
    if k > len(np.asarray(y)):
        raise ArgumentError(f"{k} folds requested for {len(np.asarray(y))} samples")
    configs = [replace(base, **point) for point in grid_points(grid)]
    tasks = [(x, y, cfg, k) for cfg in configs]
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            values = list(pool.map(_cv_task, tasks))
    else:
        values = [_cv_task(t) for t in tasks]
    scores = list(zip(configs, values))
    best = min(scores, key=lambda cs: (cs[1], cs[0].hidden_nodes, cs[0].learning_rate))[0]
    return GridResult(best=best, scores=scores)


# -- persistence -------------------------------------------------------------------------

def _fmt(values) -> str:
    return " ".join(repr(float(v)) for v in np.ravel(values))


def save_model(path, model: MlpModel, mvc=None, meta: dict | None = None) -> None:
    """Plain-text model: header fields, standardisation, MVC, then row-major weights."""
    lines = ["forcegrip-mlp 1", "layer_sizes " + " ".join(str(s) for s in model.layer_sizes)]
    for key, value in (meta or {}).items():
        if isinstance(value, (int, float, np.number)) and not isinstance(value, bool):
            value = float(value)
        lines.append(f"meta {key} {value!r}")
    if mvc is not None:
        lines.append("mvc " + _fmt(getattr(mvc, "x_mvc", mvc)))
    lines.append("feature_mean " + _fmt(model.feature_mean))
    lines.append("feature_std " + _fmt(model.feature_std))
    for i, w in enumerate(model.weights, start=1):
        lines.append(f"layer {i} {w.shape[0]} {w.shape[1]}")
        lines.extend(_fmt(row) for row in w)
    Path(path).write_text("\n".join(lines) + "\n")


def load_model(path):
    """Returns ``(model, mvc_values_or_None, meta)``."""
    path = Path(path)
    lines = path.read_text().splitlines()
    if not lines or not lines[0].startswith("forcegrip-mlp"):
        raise ParseError(f"{path}: line 1: not a forcegrip model file")
    sizes, mvc, meta = None, None, {}
    mean = std = None
    weights = []
    i = 1
    try:
        while i < len(lines):
            head, _, rest = lines[i].partition(" ")
            if head == "layer_sizes":
                sizes = tuple(int(v) for v in rest.split())
            elif head == "meta":
                key, _, value = rest.partition(" ")
                try:
                    meta[key] = float(value)
                except ValueError:
                    meta[key] = value.strip("'\"")
            elif head == "mvc":
                mvc = np.array([float(v) for v in rest.split()])
            elif head == "feature_mean":
                mean = np.array([float(v) for v in rest.split()])
            elif head == "feature_std":
                std = np.array([float(v) for v in rest.split()])
            elif head == "layer":
                _, rows, cols = (int(v) for v in rest.split())
                block = [[float(v) for v in lines[i + 1 + r].split()] for r in range(rows)]
                w = np.array(block)
                if w.shape != (rows, cols):
                    raise ParseError(f"{path}: line {i + 1}: layer block is {w.shape}, header says ({rows}, {cols})")
                weights.append(w)
                i += rows
            elif head:
                raise ParseError(f"{path}: line {i + 1}: unknown field {head!r}")
            i += 1
    except (ValueError, IndexError) as exc:
        raise ParseError(f"{path}: line {i + 1}: {exc}") from exc
    if sizes is None:
        raise ParseError(f"{path}: missing layer_sizes")
    try:
        model = MlpModel(sizes, weights, mean, std)
    except ArgumentError as exc:
        raise ParseError(f"{path}: {exc}") from exc
    return model, mvc, meta
