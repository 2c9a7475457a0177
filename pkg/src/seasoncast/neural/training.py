"""Two-phase training protocol, serialization and day-ahead forecasting."""

from __future__ import annotations

import csv
import json
from dataclasses import asdict, dataclass, field

import numpy as np

from ..core import ForecastRecord, PeriodGrid, UndefinedWapeError, inverse_transform, moving_average, wape
from ..features import Design, Standardizer, to_sequences
from .network import MODEL_TYPES, Network
from .optim import AMSGrad

TYPE_TAGS = {"dense": "NN_Classic", "simple_rnn": "RNN_Simple", "gru": "RNN_GRU", "lstm": "RNN_LSTM"}
CHEAT_TAGS = {"dense": "NN_Classic_cheat", "simple_rnn": "Simple_cheat", "gru": "GRU_cheat",
              "lstm": "LSTM_cheat"}


class TrainingDiverged(ArithmeticError):
    """Loss or validation predictions went non-finite."""


@dataclass
class NetworkConfig:
    model_type: str = "gru"
    nlayers: int = 1
    nnodes: int = 50
    kernel_l2: float = 0.0
    mixed_cheat: bool = False
    max_epochs: int = 500
    ma_window: int = 10
    batch_size_dense: int = 32
    batch_size_rnn: int = 32  # days per batch
    lr: float = 1e-3
    lr_decay: float = 1e-4
    seed: int = 0

    def __post_init__(self):
        if self.model_type not in MODEL_TYPES:
            raise ValueError(f"model_type must be one of {MODEL_TYPES}")
        if self.nlayers < 1 or self.nnodes < 1:
            raise ValueError("nlayers and nnodes must be >= 1")
        if self.kernel_l2 < 0:
            raise ValueError("kernel_l2 must be >= 0")
        if not 1 <= self.ma_window <= self.max_epochs:
            raise ValueError("need 1 <= ma_window <= max_epochs")

    @property
    def recurrent(self) -> bool:
        return self.model_type != "dense"

    @property
    def model_tag(self) -> str:
        return (CHEAT_TAGS if self.mixed_cheat else TYPE_TAGS)[self.model_type]

    def build(self, n_inputs: int) -> Network:
        return Network(self.model_type, n_inputs, self.nlayers, self.nnodes, seed=self.seed)


@dataclass
class NetworkFit:
    config: NetworkConfig
    network: Network
    chosen_epochs: int
    history: dict = field(default_factory=dict)  # epoch, loss, val_wape lists
    target_scaler: Standardizer | None = None
    refit: bool = True

    def to_json(self) -> str:
        d = {
            "config": asdict(self.config),
            "chosen_epochs": self.chosen_epochs,
            "refit": self.refit,
            "target_scaler": None if self.target_scaler is None else asdict(self.target_scaler),
            "weights": {k: v.tolist() for k, v in self.network.get_weights().items()},
            "history": {k: [float(x) for x in v] for k, v in self.history.items()},
        }
        return json.dumps(d)

    @classmethod
    def from_json(cls, text: str, n_inputs: int | None = None) -> "NetworkFit":
        d = json.loads(text)
        config = NetworkConfig(**d["config"])
        weights = {k: np.asarray(v, dtype=float) for k, v in d["weights"].items()}
        n_in = n_inputs if n_inputs is not None else weights["0.W"].shape[0]
        net = config.build(n_in)
        net.set_weights(weights)
        ts = d.get("target_scaler")
        return cls(config, net, d["chosen_epochs"], d["history"],
                   None if ts is None else Standardizer(**ts), d.get("refit", True))

    def write_history_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["epoch", "loss", "val_wape"])
            for e, l, v in zip(self.history["epoch"], self.history["loss"], self.history["val_wape"]):
                w.writerow([e, repr(float(l)), repr(float(v))])


def choose_epochs(val_wape, window: int) -> int:
    """Epoch count whose trailing ``window`` mean of validation WAPE is smallest.

    Smoothed position k averages epochs k+1..k+window (1-based), and is
    credited to its last epoch, so the result is ``k + window``. Ties go to
    the smallest epoch.
    """
    sm = moving_average(np.asarray(val_wape, dtype=float), window)
    if not np.all(np.isfinite(sm)):
        raise TrainingDiverged("non-finite validation WAPE")
    return int(np.argmin(sm)) + window


def _batches(rng, n: int, size: int):
    order = rng.permutation(n)
    return [order[i:i + size] for i in range(0, n, size)]


def _run_epochs(config: NetworkConfig, X, y, epochs: int, on_epoch=None) -> Network:
    """Train a freshly initialized network (seeded by ``config.seed``) for ``epochs`` passes."""
    net = config.build(X.shape[-1])
    opt = AMSGrad(lr=config.lr, decay=config.lr_decay)
    rng = np.random.default_rng([config.seed, 1])
    params = net.named_params()
    size = config.batch_size_rnn if config.recurrent else config.batch_size_dense
    for epoch in range(epochs):
        opt.decay_t = epoch
        losses, weights = [], []
        for idx in _batches(rng, X.shape[0], size):
            loss, grads = net.loss_and_grads(X[idx], y[idx], config.kernel_l2)
            if not np.isfinite(loss):
                raise TrainingDiverged(f"non-finite loss at epoch {epoch + 1}")
            opt.step(params, grads)
            losses.append(loss)
            weights.append(len(idx))
        if on_epoch is not None:
            on_epoch(epoch + 1, float(np.average(losses, weights=weights)), net)
    return net


def _count_scale(net: Network, X, scaler: Standardizer):
    return inverse_transform(scaler.inverse(net.predict(X)))


def train(config: NetworkConfig, X, y, X_val, y_val, target_scaler: Standardizer,
          val_actuals=None) -> NetworkFit:
    """Select an epoch count on the validation set, then refit on everything.

    ``X`` is a flat ``(rows, width)`` matrix for dense networks and a
    ``(days, periods, width)`` array for recurrent ones; ``y`` has matching
    leading shape. Validation WAPE is scored on counts; ``val_actuals``
    defaults to the back-transformed ``y_val``.
    """
    X, y, X_val, y_val = (np.asarray(a, dtype=float) for a in (X, y, X_val, y_val))
    if val_actuals is None:
        val_actuals = inverse_transform(target_scaler.inverse(y_val))
    val_actuals = np.asarray(val_actuals, dtype=float).ravel()
    hist = {"epoch": [], "loss": [], "val_wape": []}

    def record(epoch, loss, net):
        pred = _count_scale(net, X_val, target_scaler).ravel()
        if not np.all(np.isfinite(pred)):
            raise TrainingDiverged(f"non-finite validation predictions at epoch {epoch}")
        try:
            score = wape(val_actuals, pred)
        except UndefinedWapeError:
            score = float(np.mean(np.abs(val_actuals - pred)))
        hist["epoch"].append(epoch)
        hist["loss"].append(loss)
        hist["val_wape"].append(score)

    _run_epochs(config, X, y, config.max_epochs, record)
    chosen = choose_epochs(hist["val_wape"], config.ma_window)
    net = _run_epochs(config, np.concatenate([X, X_val]), np.concatenate([y, y_val]), chosen)
    return NetworkFit(config, net, chosen, hist, target_scaler, refit=True)


def split_design(design: Design, grid: PeriodGrid, recurrent: bool, val_days: int | None = None):
    """Hold out the last ``val_days`` encoded days (default one week) for validation."""
    ppd = grid.periods_per_day
    nv = grid.days_per_week if val_days is None else val_days
    n_days = design.X.shape[0] // ppd
    if n_days <= nv:
        raise ValueError(f"{n_days} encoded days cannot spare {nv} for validation")
    cut = (n_days - nv) * ppd
    X, y = design.X, design.y
    if recurrent:
        Xs, ys = to_sequences(X, y, grid)
        k = n_days - nv
        return Xs[:k], ys[:k], Xs[k:], ys[k:]
    return X[:cut], y[:cut], X[cut:], y[cut:]


def fit_design(config: NetworkConfig, design: Design, grid: PeriodGrid) -> NetworkFit:
    """Run ``train`` on an encoded window with the last week as validation."""
    parts = split_design(design, grid, config.recurrent)
    return train(config, *parts, design.target_scaler)


def forecast_day(fit: NetworkFit, X_target, skill: str = "", target_day: int = 0,
                 actuals=None, scaler: Standardizer | None = None) -> ForecastRecord:
    """De-standardize, back-transform and floor the network's target-day output."""
    scaler = scaler or fit.target_scaler
    if scaler is None:
        raise ValueError("no target standardizer available")
    X = np.asarray(X_target, dtype=float)
    if fit.config.recurrent and X.ndim == 2:
        X = X[None]
    pred = _count_scale(fit.network, X, scaler).ravel()
    return ForecastRecord(fit.config.model_tag, skill, target_day, pred, actuals)


def layer_param_count(model_type: str, n_in: int, n: int) -> int:
    """Parameters in one hidden layer of the given type."""
    k = {"dense": 0, "simple_rnn": 1, "gru": 3, "lstm": 4}[model_type]
    if k == 0:
        return n_in * n + n
    return k * (n_in * n + n * n + n)
