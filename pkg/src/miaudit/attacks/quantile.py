"""Quantile-regression attack: a per-sample threshold learned from known non-members."""
from __future__ import annotations

import dataclasses

import numpy as np
from scipy import sparse
from scipy.optimize import linprog

from miaudit import rng as _rng
from miaudit.attacks.metric import metric_signals
from miaudit.errors import DataValidationError, InsufficientKnowledgeError
from miaudit.models import MLP

SIGNALS = {"confidence": "confidence", "loss": "loss"}


def pinball_loss(y, pred, alpha: float) -> float:
    r = np.asarray(y, dtype=np.float64) - np.asarray(pred, dtype=np.float64)
    return float(np.mean(np.maximum(alpha * r, (alpha - 1.0) * r)))


@dataclasses.dataclass(eq=False)
class QuantileModel:
    net: MLP
    parameters: np.ndarray
    alpha: float
    signal: str
    x_mean: np.ndarray
    x_std: np.ndarray

    def predict(self, features) -> np.ndarray:
        x = (np.asarray(features, dtype=np.float64) - self.x_mean) / self.x_std
        return self.net.forward(self.parameters, x)[:, 0]


def _hidden(net, theta, x):
    _, cache = net.forward(theta, x, keep=True)
    return cache[-1][0]


def _refit_head(net, theta, x, y, alpha, l1=1e-7):
    """Solve the pinball-loss linear program for the output layer exactly."""
    h = _hidden(net, theta, x)
    n, m = h.shape
    # variables: w+ (m), w- (m), b+, b-, u+ (n), u- (n)
    c = np.concatenate([np.full(2 * m, l1), [0.0, 0.0], np.full(n, alpha), np.full(n, 1.0 - alpha)]) / n
    ones = np.ones((n, 1))
    eye = sparse.identity(n, format="csr")
    a_eq = sparse.hstack([sparse.csr_matrix(np.hstack([h, -h, ones, -ones])), eye, -eye], format="csr")
    res = linprog(c, A_eq=a_eq, b_eq=y, bounds=(0, None), method="highs")
    if res.status != 0:
        return theta
    z = res.x
    w = z[:m] - z[m:2 * m]
    b = z[2 * m] - z[2 * m + 1]
    theta = theta.copy()
    w_out, b_out = net.unpack(theta)[-1]
    w_out[:, 0] = w
    b_out[0] = b
    return theta


def train_quantile_model(reference, alpha: float, *, signal: str = "confidence", hidden: int = 32,
                         epochs: int = 100, batch_size: int = 64, learning_rate: float = 0.05,
                         momentum: float = 0.9, seed: int = 0) -> QuantileModel:
    """Fit ``features -> alpha-quantile of the non-member signal``.

    ``reference`` is a :class:`PredictionSet` of known non-members with features.
    The network is trained by SGD on the pinball loss, then its linear head is
    re-solved exactly as a linear program on the learned hidden features.
    """
    if reference is None or len(reference) == 0:
        raise InsufficientKnowledgeError("quantile attack needs non-empty reference data")
    if reference.features is None:
        raise DataValidationError("quantile reference records must carry features")
    if not 0.0 < alpha < 1.0:
        raise DataValidationError("quantile level alpha must lie in (0, 1)")
    if signal not in SIGNALS:
        raise DataValidationError(f"unknown quantile signal {signal!r}")
    y = metric_signals(reference.posteriors, reference.labels, SIGNALS[signal])
    x_mean = reference.features.mean(axis=0)
    x_std = reference.features.std(axis=0)
    x_std = np.where(x_std > 0, x_std, 1.0)
    x = (reference.features - x_mean) / x_std
    net = MLP((x.shape[1], hidden, 1), "tanh")
    theta = net.init(seed)
    w_out, b_out = net.unpack(theta)[-1]
    w_out[...] = 0.0
    b_out[0] = float(np.quantile(y, alpha))
    velocity = np.zeros_like(theta)
    n = len(y)
    for epoch in range(1, epochs + 1):
        order = _rng.stream(seed, "quantile-order", epoch).permutation(n)
        for start in range(0, n, batch_size):
            idx = order[start:start + batch_size]
            out, cache = net.forward(theta, x[idx], keep=True)
            r = y[idx] - out[:, 0]
            dpred = np.where(r > 0, -alpha, np.where(r < 0, 1.0 - alpha, 0.0)) / len(idx)
            grad = net.backward(theta, cache, dpred[:, None])
            velocity = momentum * velocity + grad
            theta = theta - learning_rate * velocity
    theta = _refit_head(net, theta, x, y, alpha)
    return QuantileModel(net, theta, alpha, signal, x_mean, x_std)


def quantile_scores(targets, qm: QuantileModel) -> np.ndarray:
    """Signal minus predicted quantile; positive means above the adaptive threshold."""
    if targets.features is None:
        raise DataValidationError("quantile attack needs target features")
    signal = metric_signals(targets.posteriors, targets.labels, SIGNALS[qm.signal])
    return signal - qm.predict(targets.features)


def quantile_score(target_record, qm: QuantileModel, features) -> float:
    from miaudit.models import PredictionSet

    ps = PredictionSet([target_record.sample_id], [target_record.true_label], np.asarray([target_record.posterior]),
                       features=np.asarray([features], dtype=np.float64))
    return float(quantile_scores(ps, qm)[0])
