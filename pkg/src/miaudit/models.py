"""Small softmax MLPs trained with momentum SGD, DP-SGD, fine-tuning and unlearning.

Everything is plain numpy with hand-written backpropagation.  Parameters live in
one flat float64 vector; :class:`MLP` knows how to view it as layers.
"""
from __future__ import annotations

import dataclasses
import json
import math
from typing import Sequence

import numpy as np

from miaudit import rng as _rng
from miaudit.dataspec import LabeledDataset
from miaudit.errors import ConfigurationError, DataValidationError, TrainingDivergenceError

POSTERIOR_FLOOR = 1e-12

CAPACITY_PRESETS = {
    "logistic": (),
    "small": (16,),
    "medium": (64, 64),
    "large": (256, 256, 256),
}


@dataclasses.dataclass(frozen=True)
class ModelConfig:
    input_dim: int
    num_classes: int
    hidden_widths: tuple = ()
    activation: str = "relu"
    init_seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "hidden_widths", tuple(int(w) for w in self.hidden_widths if int(w) > 0))
        if self.activation not in ("relu", "tanh"):
            raise ConfigurationError(f"unknown activation {self.activation!r}")
        if int(self.input_dim) < 1 or int(self.num_classes) < 1:
            raise ConfigurationError("input_dim and num_classes must be positive")

    @classmethod
    def from_preset(cls, preset: str, input_dim: int, num_classes: int, **kw) -> "ModelConfig":
        if preset not in CAPACITY_PRESETS:
            raise ConfigurationError(f"unknown capacity preset {preset!r}; choose from {sorted(CAPACITY_PRESETS)}")
        return cls(input_dim, num_classes, CAPACITY_PRESETS[preset], **kw)


@dataclasses.dataclass(frozen=True)
class DPConfig:
    clip_norm: float
    noise_multiplier: float = 0.0

    def __post_init__(self):
        if not self.clip_norm > 0:
            raise ConfigurationError("dp clip_norm must be positive")
        if not self.noise_multiplier >= 0:
            raise ConfigurationError("dp noise_multiplier must be non-negative")


@dataclasses.dataclass(frozen=True)
class TrainConfig:
    epochs: int = 50
    batch_size: int = 32
    learning_rate: float = 0.1
    momentum: float = 0.9
    weight_decay: float = 0.0
    checkpoint_every: int = 0
    dp: DPConfig | None = None
    seed: int = 0

    def __post_init__(self):
        if int(self.epochs) < 0:
            raise ConfigurationError("epochs must be non-negative")
        if int(self.batch_size) < 1:
            raise ConfigurationError("batch_size must be positive")
        if self.learning_rate < 0:
            raise ConfigurationError("learning_rate must be non-negative")
        if not 0 <= self.momentum < 1:
            raise ConfigurationError("momentum must lie in [0, 1)")
        if self.weight_decay < 0:
            raise ConfigurationError("weight_decay must be non-negative")
        if int(self.checkpoint_every) < 0:
            raise ConfigurationError("checkpoint_every must be non-negative")


class MLP:
    """Fully connected network ``input -> hidden* -> logits``."""

    def __init__(self, sizes: Sequence[int], activation: str = "relu"):
        self.sizes = tuple(int(s) for s in sizes)
        self.activation = activation
        self.shapes = [(a, b) for a, b in zip(self.sizes[:-1], self.sizes[1:])]
        self.n_params = sum(a * b + b for a, b in self.shapes)

    @classmethod
    def for_config(cls, cfg: ModelConfig) -> "MLP":
        return cls((cfg.input_dim, *cfg.hidden_widths, cfg.num_classes), cfg.activation)

    def unpack(self, theta: np.ndarray):
        layers, off = [], 0
        for a, b in self.shapes:
            w = theta[off:off + a * b].reshape(a, b)
            off += a * b
            layers.append((w, theta[off:off + b]))
            off += b
        return layers

    def init(self, seed: int) -> np.ndarray:
        gen = _rng.stream(seed, "init")
        theta = np.zeros(self.n_params)
        gain = 2.0 if self.activation == "relu" else 1.0
        for w, _ in self.unpack(theta):
            w[...] = gen.standard_normal(w.shape) * math.sqrt(gain / w.shape[0])
        return theta

    def _act(self, z):
        return np.maximum(z, 0.0) if self.activation == "relu" else np.tanh(z)

    def _act_grad(self, z, a):
        return (z > 0).astype(z.dtype) if self.activation == "relu" else 1.0 - a * a

    def forward(self, theta, x, keep: bool = False):
        layers = self.unpack(theta)
        a = np.asarray(x, dtype=np.float64)
        cache = [(a, None)]
        for i, (w, b) in enumerate(layers):
            z = a @ w + b
            if i == len(layers) - 1:
                return (z, cache) if keep else z
            a = self._act(z)
            cache.append((a, z))
        raise AssertionError("unreachable")

    def _deltas(self, theta, cache, dlogits):
        """Yield ``(layer_index, input_activation, delta)`` from the top layer down."""
        layers = self.unpack(theta)
        delta = dlogits
        for i in range(len(layers) - 1, -1, -1):
            a_in, _ = cache[i]
            yield i, a_in, delta
            if i:
                a_prev, z_prev = cache[i]
                delta = (delta @ layers[i][0].T) * self._act_grad(z_prev, a_prev)

    def backward(self, theta, cache, dlogits) -> np.ndarray:
        grad = np.zeros_like(theta)
        views = self.unpack(grad)
        for i, a_in, delta in self._deltas(theta, cache, dlogits):
            views[i][0][...] = a_in.T @ delta
            views[i][1][...] = delta.sum(axis=0)
        return grad

    def per_sample_sq_norms(self, theta, cache, dlogits) -> np.ndarray:
        """Squared L2 norm of each row's gradient without materialising it."""
        out = np.zeros(len(dlogits))
        for _, a_in, delta in self._deltas(theta, cache, dlogits):
            out += np.einsum("ij,ij->i", delta, delta) * (np.einsum("ij,ij->i", a_in, a_in) + 1.0)
        return out

    def per_sample_grads(self, theta, cache, dlogits) -> np.ndarray:
        n = len(dlogits)
        grads = np.zeros((n, self.n_params))
        offsets, off = [], 0
        for a, b in self.shapes:
            offsets.append(off)
            off += a * b + b
        for i, a_in, delta in self._deltas(theta, cache, dlogits):
            a, b = self.shapes[i]
            o = offsets[i]
            grads[:, o:o + a * b] = np.einsum("ni,nj->nij", a_in, delta).reshape(n, -1)
            grads[:, o + a * b:o + a * b + b] = delta
        return grads

    def loss_and_grad(self, theta, x, y, weight_decay: float = 0.0):
        """Mean cross-entropy (plus ``wd/2 * |theta|^2``) and its gradient."""
        logits, cache = self.forward(theta, x, keep=True)
        loss, dlogits = cross_entropy(logits, y)
        grad = self.backward(theta, cache, dlogits)
        if weight_decay:
            loss += 0.5 * weight_decay * float(theta @ theta)
            grad += weight_decay * theta
        return loss, grad


def log_softmax(logits):
    shifted = logits - logits.max(axis=1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))


def cross_entropy(logits, y):
    """Mean CE and its gradient with respect to the logits."""
    y = np.asarray(y)
    logp = log_softmax(logits)
    n = len(y)
    loss = -float(logp[np.arange(n), y].mean())
    d = np.exp(logp)
    d[np.arange(n), y] -= 1.0
    return loss, d / n


def stable_posteriors(logits) -> np.ndarray:
    p = np.exp(log_softmax(np.asarray(logits, dtype=np.float64)))
    p = np.clip(p, POSTERIOR_FLOOR, 1.0)
    return p / p.sum(axis=1, keepdims=True)


@dataclasses.dataclass(eq=False)
class TrainedModel:
    config: ModelConfig
    parameters: np.ndarray
    checkpoints: list = dataclasses.field(default_factory=list)
    train_history: list = dataclasses.field(default_factory=list)
    initial_loss: float = float("nan")
    n_train: int = 0
    train_ids: frozenset = frozenset()
    tag: str = "model"

    def __post_init__(self):
        if self.parameters.shape != (self.net.n_params,):
            raise ConfigurationError("parameter vector does not match the model configuration")

    @property
    def net(self) -> MLP:
        return MLP.for_config(self.config)

    def logits(self, x) -> np.ndarray:
        return self.net.forward(self.parameters, x)

    def at_checkpoint(self, epoch: int) -> "TrainedModel":
        for e, params in self.checkpoints:
            if e == epoch:
                return dataclasses.replace(
                    self, parameters=params, checkpoints=[], train_history=self.train_history[:epoch],
                    tag=f"{self.tag}@{epoch}",
                )
        raise ConfigurationError(f"no checkpoint at epoch {epoch} (have {[e for e, _ in self.checkpoints]})")

    def save(self, path) -> None:
        np.savez(
            path, parameters=self.parameters,
            config=json.dumps(dataclasses.asdict(self.config)), tag=self.tag,
            history=np.array(self.train_history, dtype=np.float64).reshape(-1, 2),
        )

    @classmethod
    def load(cls, path) -> "TrainedModel":
        with np.load(path) as z:
            cfg = json.loads(str(z["config"]))
            cfg["hidden_widths"] = tuple(cfg["hidden_widths"])
            return cls(ModelConfig(**cfg), z["parameters"].copy(), train_history=[tuple(r) for r in z["history"].tolist()], tag=str(z["tag"]))


def _check_dims(ds: LabeledDataset, cfg: ModelConfig):
    if len(ds) and ds.dim != cfg.input_dim:
        raise ConfigurationError(f"feature dim {ds.dim} does not match model input_dim {cfg.input_dim}")
    if ds.num_classes > cfg.num_classes or (len(ds) and ds.labels.max() >= cfg.num_classes):
        raise ConfigurationError("dataset labels exceed the model's output width")


def _evaluate(net, theta, ds):
    logits = net.forward(theta, ds.features)
    loss, _ = cross_entropy(logits, ds.labels)
    acc = float((logits.argmax(axis=1) == ds.labels).mean())
    return loss, acc


def _dp_gradient(net, theta, x, y, dp: DPConfig, noise_gen, batch_size: int):
    logits, cache = net.forward(theta, x, keep=True)
    loss, dlogits = cross_entropy(logits, y)
    # the per-sample gradient is linear in that sample's dlogits row, so clipping
    # rescales rows and one batched backward pass yields the clipped mean
    norms = np.sqrt(net.per_sample_sq_norms(theta, cache, dlogits * len(y)))
    factors = np.minimum(1.0, dp.clip_norm / np.maximum(norms, 1e-300))
    grad = net.backward(theta, cache, dlogits * factors[:, None])
    if dp.noise_multiplier > 0:
        grad = grad + noise_gen.standard_normal(grad.shape) * (dp.noise_multiplier * dp.clip_norm / batch_size)
    return loss, grad


def _sgd_loop(theta, ds, cfg: ModelConfig, tcfg: TrainConfig, tag: str, *, private: bool = False):
    net = MLP.for_config(cfg)
    theta = theta.copy()
    velocity = np.zeros_like(theta)
    n = len(ds)
    initial_loss, _ = _evaluate(net, theta, ds)
    history, checkpoints = [], []
    for epoch in range(1, int(tcfg.epochs) + 1):
        order = _rng.stream(tcfg.seed, "batch-order", epoch).permutation(n)
        noise_gen = _rng.stream(tcfg.seed, "dp-noise", epoch) if private else None
        for start in range(0, n, tcfg.batch_size):
            idx = order[start:start + tcfg.batch_size]
            x, y = ds.features[idx], ds.labels[idx]
            if private:
                loss, grad = _dp_gradient(net, theta, x, y, tcfg.dp, noise_gen, len(idx))
            else:
                logits, cache = net.forward(theta, x, keep=True)
                loss, dlogits = cross_entropy(logits, y)
                grad = net.backward(theta, cache, dlogits)
            if not math.isfinite(loss):
                raise TrainingDivergenceError(epoch)
            if tcfg.weight_decay:
                grad = grad + tcfg.weight_decay * theta
            velocity = tcfg.momentum * velocity + grad
            theta = theta - tcfg.learning_rate * velocity
        loss, acc = _evaluate(net, theta, ds)
        if not (math.isfinite(loss) and np.isfinite(theta).all()):
            raise TrainingDivergenceError(epoch)
        history.append((loss, acc))
        if tcfg.checkpoint_every and epoch % tcfg.checkpoint_every == 0:
            checkpoints.append((epoch, theta.copy()))
    return TrainedModel(
        cfg, theta, checkpoints, history, initial_loss, n, frozenset(ds.sample_ids.tolist()), tag,
    )


def train_sgd(ds: LabeledDataset, mcfg: ModelConfig, tcfg: TrainConfig, tag: str = "model") -> TrainedModel:
    """Mini-batch momentum SGD on mean cross-entropy. ``tcfg.dp`` is ignored."""
    if len(ds) == 0:
        raise ConfigurationError("cannot train on an empty dataset")
    _check_dims(ds, mcfg)
    theta0 = MLP.for_config(mcfg).init(mcfg.init_seed)
    return _sgd_loop(theta0, ds, mcfg, tcfg, tag)


def train_dpsgd(ds: LabeledDataset, mcfg: ModelConfig, tcfg: TrainConfig, tag: str = "model") -> TrainedModel:
    """DP-SGD: per-sample clipping to ``clip_norm`` plus Gaussian noise on the mean gradient."""
    if tcfg.dp is None:
        raise ConfigurationError("train_dpsgd requires a dp block in the training config")
    if len(ds) == 0:
        raise ConfigurationError("cannot train on an empty dataset")
    _check_dims(ds, mcfg)
    theta0 = MLP.for_config(mcfg).init(mcfg.init_seed)
    return _sgd_loop(theta0, ds, mcfg, tcfg, tag, private=True)


def train(ds, mcfg, tcfg, tag="model") -> TrainedModel:
    return (train_dpsgd if tcfg.dp is not None else train_sgd)(ds, mcfg, tcfg, tag)


def finetune(model: TrainedModel, ds_ft: LabeledDataset, tcfg: TrainConfig, *, check_disjoint: bool = True, tag: str | None = None) -> TrainedModel:
    """Continue SGD (or DP-SGD if ``tcfg.dp``) from the model's current parameters."""
    _check_dims(ds_ft, model.config)
    if check_disjoint and model.train_ids and not model.train_ids.isdisjoint(ds_ft.sample_ids.tolist()):
        raise ConfigurationError("fine-tuning data overlaps the model's pretraining data")
    if len(ds_ft) == 0 or tcfg.epochs == 0:
        return dataclasses.replace(model, checkpoints=[], tag=tag or model.tag)
    out = _sgd_loop(model.parameters, ds_ft, model.config, tcfg, tag or model.tag, private=tcfg.dp is not None)
    return out


def retrain_reference(d_retain: LabeledDataset, mcfg: ModelConfig, tcfg: TrainConfig, tag: str = "retrained") -> TrainedModel:
    """Exact-unlearning reference: train from scratch on the retained data only."""
    return train(d_retain, mcfg, tcfg, tag)


UNLEARN_METHODS = ("finetune_retain", "gradient_ascent_forget")


def unlearn_approx(model: TrainedModel, d_forget: LabeledDataset, d_retain: LabeledDataset, method: str,
                   tcfg: TrainConfig, *, ascent_clip: float | None = None, tag: str | None = None) -> TrainedModel:
    """Approximate unlearning baselines."""
    tag = tag or f"{model.tag}-{method}"
    if method == "finetune_retain":
        return finetune(model, d_retain, dataclasses.replace(tcfg, dp=None), check_disjoint=False, tag=tag)
    if method != "gradient_ascent_forget":
        raise ConfigurationError(f"unknown unlearning method {method!r}; expected one of {UNLEARN_METHODS}")
    if tcfg.epochs == 0 or len(d_forget) == 0:
        return dataclasses.replace(model, checkpoints=[], tag=tag)
    clip = ascent_clip if ascent_clip is not None else (tcfg.dp.clip_norm if tcfg.dp else 1.0)
    net = model.net
    theta = model.parameters.copy()
    history = []
    for epoch in range(1, int(tcfg.epochs) + 1):
        r_order = _rng.stream(tcfg.seed, "unlearn-retain", epoch).permutation(len(d_retain))
        f_order = _rng.stream(tcfg.seed, "unlearn-forget", epoch).permutation(len(d_forget))
        n_steps = max(1, -(-len(d_retain) // tcfg.batch_size))
        for step in range(n_steps):
            f_idx = np.take(f_order, np.arange(step * tcfg.batch_size, (step + 1) * tcfg.batch_size), mode="wrap")
            loss_f, g_f = net.loss_and_grad(theta, d_forget.features[f_idx], d_forget.labels[f_idx])
            norm = float(np.linalg.norm(g_f))
            if norm > clip:
                g_f = g_f * (clip / norm)
            theta = theta + tcfg.learning_rate * g_f
            r_idx = r_order[step * tcfg.batch_size:(step + 1) * tcfg.batch_size]
            if len(r_idx):
                loss_r, g_r = net.loss_and_grad(theta, d_retain.features[r_idx], d_retain.labels[r_idx], tcfg.weight_decay)
                theta = theta - tcfg.learning_rate * g_r
            if not (math.isfinite(loss_f) and np.isfinite(theta).all()):
                raise TrainingDivergenceError(epoch)
        history.append(_evaluate(net, theta, d_retain))
    return dataclasses.replace(model, parameters=theta, checkpoints=[], train_history=history, tag=tag)


@dataclasses.dataclass(frozen=True)
class PredictionRecord:
    sample_id: int
    true_label: int
    posterior: tuple
    membership: bool | None = None
    model_tag: str = "model"


@dataclasses.dataclass(eq=False)
class PredictionSet:
    """Column-oriented batch of prediction records from one model."""

    sample_ids: np.ndarray
    labels: np.ndarray
    posteriors: np.ndarray
    model_tag: str = "model"
    membership: np.ndarray | None = None
    features: np.ndarray | None = None

    def __post_init__(self):
        self.sample_ids = np.asarray(self.sample_ids, dtype=np.int64)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        self.posteriors = np.asarray(self.posteriors, dtype=np.float64)
        if self.posteriors.ndim != 2 or len(self.posteriors) != len(self.sample_ids) or len(self.labels) != len(self.sample_ids):
            raise DataValidationError("prediction set columns have mismatched lengths")

    def __len__(self) -> int:
        return len(self.sample_ids)

    @property
    def num_classes(self) -> int:
        return self.posteriors.shape[1]

    def take(self, pos) -> "PredictionSet":
        pos = np.asarray(pos, dtype=np.int64)
        return PredictionSet(
            self.sample_ids[pos], self.labels[pos], self.posteriors[pos], self.model_tag,
            None if self.membership is None else self.membership[pos],
            None if self.features is None else self.features[pos],
        )

    def with_membership(self, membership) -> "PredictionSet":
        out = dataclasses.replace(self)
        out.membership = None if membership is None else np.asarray(membership, dtype=bool)
        return out

    @staticmethod
    def concat(parts: Sequence["PredictionSet"], model_tag: str | None = None) -> "PredictionSet":
        mem = None if any(p.membership is None for p in parts) else np.concatenate([p.membership for p in parts])
        feats = None if any(p.features is None for p in parts) else np.concatenate([p.features for p in parts])
        return PredictionSet(
            np.concatenate([p.sample_ids for p in parts]), np.concatenate([p.labels for p in parts]),
            np.concatenate([p.posteriors for p in parts]), model_tag or parts[0].model_tag, mem, feats,
        )

    def records(self) -> list[PredictionRecord]:
        mem = [None] * len(self) if self.membership is None else [bool(m) for m in self.membership]
        return [
            PredictionRecord(int(s), int(y), tuple(p.tolist()), m, self.model_tag)
            for s, y, p, m in zip(self.sample_ids, self.labels, self.posteriors, mem)
        ]

    @classmethod
    def from_records(cls, records: Sequence[PredictionRecord]) -> "PredictionSet":
        if not records:
            raise DataValidationError("no prediction records")
        mem = [r.membership for r in records]
        return cls(
            [r.sample_id for r in records], [r.true_label for r in records],
            np.array([r.posterior for r in records], dtype=np.float64), records[0].model_tag,
            None if any(m is None for m in mem) else np.array(mem, dtype=bool),
        )


def predict(model: TrainedModel, ds: LabeledDataset, *, keep_features: bool = True) -> PredictionSet:
    """Floored softmax posteriors for every sample of ``ds``."""
    if len(ds) and ds.dim != model.config.input_dim:
        raise ConfigurationError(f"feature dim {ds.dim} does not match model input_dim {model.config.input_dim}")
    post = stable_posteriors(model.logits(ds.features)) if len(ds) else np.zeros((0, model.config.num_classes))
    return PredictionSet(ds.sample_ids, ds.labels, post, model.tag, None, ds.features if keep_features else None)


def mean_log_loss(preds: PredictionSet) -> float:
    return -float(np.log(preds.posteriors[np.arange(len(preds)), preds.labels]).mean())


def generalization_gap(model: TrainedModel, d_train: LabeledDataset, d_test: LabeledDataset) -> dict:
    """Train/test accuracy and loss with ``acc_gap = train - test``, ``loss_gap = test - train``."""
    if len(d_train) == 0 or len(d_test) == 0:
        raise DataValidationError("generalization gap needs non-empty splits")
    out = {}
    for name, ds in (("train", d_train), ("test", d_test)):
        p = predict(model, ds, keep_features=False)
        out[f"{name}_acc"] = float((p.posteriors.argmax(axis=1) == ds.labels).mean())
        out[f"{name}_loss"] = mean_log_loss(p)
    out["acc_gap"] = out["train_acc"] - out["test_acc"]
    out["loss_gap"] = out["test_loss"] - out["train_loss"]
    return out
