"""Feedforward regression networks trained with Adam, written on bare numpy.

One architecture serves both regression targets: 400 probe probabilities in,
a few hidden ReLU layers, linear readout, mean squared error.  Position
targets are normalised to the unit box and coupling targets are z-scored per
component, so a single learning-rate setting works across both.

Training is fully deterministic for a given seed: the validation split, the
weight initialisation and every epoch's batch order all derive from one
generator.  The best validation weights are kept and restored at the end.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .datagen import canonical_json

MODEL_SCHEMA = 1


@dataclass(frozen=True)
class TrainingConfig:
    epochs: int = 1000
    batch_size: int = 64
    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    val_fraction: float = 0.1
    patience: int = 50
    seed: int = 0

    def validate(self) -> None:
        if not (0.0 < self.val_fraction < 1.0):
            raise ValueError("validation fraction must be in (0, 1)")
        if self.epochs < 1 or self.batch_size < 1 or self.learning_rate <= 0:
            raise ValueError(f"bad training configuration {self}")

    def to_dict(self) -> dict:
        return {"epochs": self.epochs, "batch_size": self.batch_size,
                "learning_rate": self.learning_rate, "beta1": self.beta1,
                "beta2": self.beta2, "eps": self.eps,
                "val_fraction": self.val_fraction, "patience": self.patience,
                "seed": self.seed}

    @classmethod
    def from_dict(cls, doc: dict) -> "TrainingConfig":
        return cls(epochs=int(doc["epochs"]), batch_size=int(doc["batch_size"]),
                   learning_rate=float(doc["learning_rate"]),
                   beta1=float(doc["beta1"]), beta2=float(doc["beta2"]),
                   eps=float(doc["eps"]), val_fraction=float(doc["val_fraction"]),
                   patience=int(doc["patience"]), seed=int(doc["seed"]))


class Mlp:
    """Fully connected ReLU network with a linear output layer."""

    def __init__(self, layer_sizes: Sequence[int], seed: int = 0):
        if len(layer_sizes) < 2:
            raise ValueError("need at least input and output sizes")
        self.layer_sizes = [int(s) for s in layer_sizes]
        rng = np.random.default_rng(seed)
        self.weights: list[np.ndarray] = []
        self.biases: list[np.ndarray] = []
        for fan_in, fan_out in zip(self.layer_sizes[:-1], self.layer_sizes[1:]):
            bound = np.sqrt(6.0 / fan_in)
            self.weights.append(rng.uniform(-bound, bound, size=(fan_in, fan_out)))
            self.biases.append(np.zeros(fan_out))

    @property
    def parameters(self) -> list[np.ndarray]:
        return self.weights + self.biases

    def forward(self, x: np.ndarray) -> np.ndarray:
        x = np.atleast_2d(x)
        for w, b in zip(self.weights[:-1], self.biases[:-1]):
            x = np.maximum(x @ w + b, 0.0)
        return x @ self.weights[-1] + self.biases[-1]

    def loss(self, x: np.ndarray, target: np.ndarray) -> float:
        diff = self.forward(x) - target
        return float(np.mean(diff ** 2))

    def gradients(self, x: np.ndarray, target: np.ndarray
                  ) -> tuple[float, list[np.ndarray]]:
        """Mean-squared-error loss and its gradient for every parameter.

        Returns gradients in the order of :attr:`parameters` (all weight
        matrices, then all bias vectors).
        """
        x = np.atleast_2d(x)
        pre: list[np.ndarray] = []       # pre-activations per layer
        acts: list[np.ndarray] = [x]     # inputs to each layer
        h = x
        for k, (w, b) in enumerate(zip(self.weights, self.biases)):
            z = h @ w + b
            pre.append(z)
            h = z if k == len(self.weights) - 1 else np.maximum(z, 0.0)
            acts.append(h)
        diff = acts[-1] - target
        loss = float(np.mean(diff ** 2))
        grad_w = [np.empty(0)] * len(self.weights)
        grad_b = [np.empty(0)] * len(self.biases)
        delta = 2.0 * diff / diff.size
        for k in range(len(self.weights) - 1, -1, -1):
            grad_w[k] = acts[k].T @ delta
            grad_b[k] = delta.sum(axis=0)
            if k > 0:
                delta = (delta @ self.weights[k].T) * (pre[k - 1] > 0.0)
        return loss, grad_w + grad_b

    def state_copy(self) -> list[np.ndarray]:
        return [p.copy() for p in self.parameters]

    def load_state(self, params: Sequence[np.ndarray]) -> None:
        n = len(self.weights)
        for k in range(n):
            self.weights[k][...] = params[k]
            self.biases[k][...] = params[n + k]

    def to_dict(self) -> dict:
        return {"layer_sizes": self.layer_sizes,
                "weights": [w.tolist() for w in self.weights],
                "biases": [b.tolist() for b in self.biases]}

    @classmethod
    def from_dict(cls, doc: dict) -> "Mlp":
        net = cls(doc["layer_sizes"])
        net.weights = [np.array(w, dtype=float) for w in doc["weights"]]
        net.biases = [np.array(b, dtype=float) for b in doc["biases"]]
        return net


@dataclass
class AdamState:
    """First and second moment accumulators, one pair per parameter."""

    m: list
    v: list
    t: int = 0

    @classmethod
    def for_parameters(cls, params: Sequence[np.ndarray]) -> "AdamState":
        return cls(m=[np.zeros_like(p) for p in params],
                   v=[np.zeros_like(p) for p in params])


def adam_step(params: Sequence[np.ndarray], grads: Sequence[np.ndarray],
              state: AdamState, lr: float = 1e-3, beta1: float = 0.9,
              beta2: float = 0.999, eps: float = 1e-8) -> None:
    """One bias-corrected Adam update, applied to the parameters in place."""
    state.t += 1
    c1 = 1.0 - beta1 ** state.t
    c2 = 1.0 - beta2 ** state.t
    for p, g, m, v in zip(params, grads, state.m, state.v):
        m *= beta1
        m += (1.0 - beta1) * g
        v *= beta2
        v += (1.0 - beta2) * g ** 2
        p -= lr * (m / c1) / (np.sqrt(v / c2) + eps)


@dataclass(frozen=True)
class EpochRecord:
    epoch: int
    train_loss: float
    val_loss: float


@dataclass
class TrainingHistory:
    epochs: list = field(default_factory=list)
    best_epoch: int = -1
    best_val_loss: float = np.inf
    stopped_early: bool = False

    def to_dict(self) -> dict:
        return {"best_epoch": self.best_epoch,
                "best_val_loss": self.best_val_loss,
                "stopped_early": self.stopped_early,
                "epochs": [[e.epoch, e.train_loss, e.val_loss] for e in self.epochs]}


def train_mlp(net: Mlp, x: np.ndarray, target: np.ndarray,
              config: TrainingConfig,
              progress: Optional[callable] = None) -> TrainingHistory:
    """Mini-batch Adam with early stopping on a held-out validation slice.

    Deterministic in ``config.seed``; the network ends up holding the weights
    of its best validation epoch.  Raises if the loss goes non-finite.
    """
    config.validate()
    x = np.asarray(x, dtype=float)
    target = np.asarray(target, dtype=float)
    if x.shape[0] != target.shape[0]:
        raise ValueError("feature and target counts differ")
    n = x.shape[0]
    n_val = max(1, int(round(config.val_fraction * n)))
    if n_val >= n:
        raise ValueError(f"validation slice swallows all {n} samples")
    rng = np.random.default_rng(config.seed)
    perm = rng.permutation(n)
    val_idx, train_idx = perm[:n_val], perm[n_val:]
    x_tr, t_tr = x[train_idx], target[train_idx]
    x_val, t_val = x[val_idx], target[val_idx]

    state = AdamState.for_parameters(net.parameters)
    history = TrainingHistory()
    best_params = net.state_copy()
    since_best = 0
    for epoch in range(config.epochs):
        order = rng.permutation(x_tr.shape[0])
        batch_losses = []
        for start in range(0, order.size, config.batch_size):
            idx = order[start:start + config.batch_size]
            loss, grads = net.gradients(x_tr[idx], t_tr[idx])
            adam_step(net.parameters, grads, state, config.learning_rate,
                      config.beta1, config.beta2, config.eps)
            batch_losses.append(loss)
        train_loss = float(np.mean(batch_losses))
        val_loss = net.loss(x_val, t_val)
        if not (np.isfinite(train_loss) and np.isfinite(val_loss)):
            raise RuntimeError(f"training diverged at epoch {epoch}")
        history.epochs.append(EpochRecord(epoch, train_loss, val_loss))
        if val_loss < history.best_val_loss:
            history.best_val_loss = val_loss
            history.best_epoch = epoch
            best_params = net.state_copy()
            since_best = 0
        else:
            since_best += 1
            if since_best > config.patience:
                history.stopped_early = True
                break
        if progress:
            progress(epoch, train_loss, val_loss)
    net.load_state(best_params)
    return history


class PositionCodec:
    """Maps box coordinates to the unit square and back."""

    kind = "positions"

    def __init__(self, box_size: float, m: int):
        self.box_size = box_size
        self.m = m

    @property
    def n_outputs(self) -> int:
        return 2 * self.m

    def encode(self, coords: np.ndarray) -> np.ndarray:
        flat = np.asarray(coords, dtype=float).reshape(-1, 2 * self.m)
        return flat / self.box_size + 0.5

    def decode(self, outputs: np.ndarray) -> np.ndarray:
        flat = (np.asarray(outputs, dtype=float) - 0.5) * self.box_size
        return flat.reshape(-1, self.m, 2)

    def to_dict(self) -> dict:
        return {"kind": self.kind, "box_size": self.box_size, "m": self.m}

    @classmethod
    def from_dict(cls, doc: dict) -> "PositionCodec":
        return cls(box_size=float(doc["box_size"]), m=int(doc["m"]))


class OperatorCodec:
    """Z-scores coupling components; constant components pass through unscaled."""

    kind = "operators"

    def __init__(self, mean: np.ndarray, std: np.ndarray):
        self.mean = mean
        self.std = std

    @classmethod
    def fit(cls, targets: np.ndarray) -> "OperatorCodec":
        targets = np.asarray(targets, dtype=float)
        mean = targets.mean(axis=0)
        std = targets.std(axis=0)
        std = np.where(std < 1e-12, 1.0, std)
        return cls(mean=mean, std=std)

    @property
    def n_outputs(self) -> int:
        return self.mean.shape[0]

    def encode(self, raw: np.ndarray) -> np.ndarray:
        return (np.asarray(raw, dtype=float) - self.mean) / self.std

    def decode(self, outputs: np.ndarray) -> np.ndarray:
        return np.asarray(outputs, dtype=float) * self.std + self.mean

    def to_dict(self) -> dict:
        return {"kind": self.kind, "mean": self.mean.tolist(),
                "std": self.std.tolist()}

    @classmethod
    def from_dict(cls, doc: dict) -> "OperatorCodec":
        return cls(mean=np.array(doc["mean"]), std=np.array(doc["std"]))


def _codec_from_dict(doc: dict):
    if doc["kind"] == "positions":
        return PositionCodec.from_dict(doc)
    if doc["kind"] == "operators":
        return OperatorCodec.from_dict(doc)
    raise ValueError(f"unknown codec kind {doc['kind']!r}")


DEFAULT_HIDDEN = (1024, 512, 256)


@dataclass
class RegressionModel:
    """A trained network plus the codec that grounds its outputs."""

    net: Mlp
    codec: object
    config: TrainingConfig
    history: TrainingHistory
    meta: dict = field(default_factory=dict)

    def predict_raw(self, x: np.ndarray) -> np.ndarray:
        return self.net.forward(x)

    def predict(self, x: np.ndarray) -> np.ndarray:
        return self.codec.decode(self.net.forward(x))

    def to_dict(self) -> dict:
        return {"schema": MODEL_SCHEMA, "kind": "mlp",
                "net": self.net.to_dict(), "codec": self.codec.to_dict(),
                "config": self.config.to_dict(),
                "history": self.history.to_dict(), "meta": self.meta}

    @classmethod
    def from_dict(cls, doc: dict) -> "RegressionModel":
        history = TrainingHistory()
        hdoc = doc.get("history", {})
        history.best_epoch = hdoc.get("best_epoch", -1)
        history.best_val_loss = hdoc.get("best_val_loss", np.inf)
        history.stopped_early = hdoc.get("stopped_early", False)
        history.epochs = [EpochRecord(int(e), float(tr), float(va))
                          for e, tr, va in hdoc.get("epochs", [])]
        return cls(net=Mlp.from_dict(doc["net"]),
                   codec=_codec_from_dict(doc["codec"]),
                   config=TrainingConfig.from_dict(doc["config"]),
                   history=history, meta=doc.get("meta", {}))


def save_model(model: RegressionModel, path) -> None:
    Path(path).write_text(canonical_json(model.to_dict()) + "\n")


def load_model(path) -> RegressionModel:
    doc = json.loads(Path(path).read_text())
    if doc.get("schema") != MODEL_SCHEMA or doc.get("kind") != "mlp":
        raise ValueError(f"{path} does not hold a regression network")
    return RegressionModel.from_dict(doc)


def train_position_regressor(features: np.ndarray, coords: np.ndarray,
                             box_size: float, config: TrainingConfig,
                             hidden: Sequence[int] = DEFAULT_HIDDEN,
                             progress: Optional[callable] = None) -> RegressionModel:
    """Learn box-atom coordinates (um) from probe features."""
    coords = np.asarray(coords, dtype=float)
    m = coords.shape[1] // 2
    codec = PositionCodec(box_size=box_size, m=m)
    net = Mlp([features.shape[1], *hidden, codec.n_outputs], seed=config.seed)
    history = train_mlp(net, features, codec.encode(coords), config, progress)
    return RegressionModel(net=net, codec=codec, config=config, history=history,
                           meta={"target": "positions", "m": m})


def train_operator_regressor(features: np.ndarray, couplings: np.ndarray,
                             config: TrainingConfig,
                             hidden: Sequence[int] = DEFAULT_HIDDEN,
                             progress: Optional[callable] = None) -> RegressionModel:
    """Learn the environment couplings (h', Re l, Im l) from probe features."""
    codec = OperatorCodec.fit(couplings)
    net = Mlp([features.shape[1], *hidden, codec.n_outputs], seed=config.seed)
    history = train_mlp(net, features, codec.encode(couplings), config, progress)
    return RegressionModel(net=net, codec=codec, config=config, history=history,
                           meta={"target": "operators",
                                 "n_atoms": codec.n_outputs // 3})


def split_operator_prediction(pred: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Turn a (R, 3N) coupling prediction back into h' and complex l arrays."""
    pred = np.atleast_2d(pred)
    n = pred.shape[1] // 3
    h_prime = pred[:, :n]
    l = pred[:, n:2 * n] + 1j * pred[:, 2 * n:]
    return h_prime, l
