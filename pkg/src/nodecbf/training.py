"""Online/offline training of the hybrid model.

The loss integrates the hybrid ODE (double integrator + neural residual)
across each window of consecutive queue samples with one RK4 step per
inter-sample interval (control held zero-order), and penalizes the
squared prediction error at the sample times plus an L2 penalty on the
parameters.  Gradients are exact reverse-mode derivatives of the
unrolled integrator.
"""

import math
from collections import deque
from dataclasses import dataclass, replace

import numpy as np

from . import backend
from .residual import ResidualNet

SPAN_TOL = 1e-9  # slack applied to capacity checks on float timestamps


@dataclass(frozen=True)
class Sample:
    """One observed state-control pair."""

    t: float
    x: np.ndarray
    u: np.ndarray


class TrainingQueue:
    """FIFO buffer of samples bounded by a time span in seconds."""

    def __init__(self, capacity=10.0):
        if capacity < 0:
            raise ValueError("capacity must be >= 0")
        self.capacity = float(capacity)
        self._samples = deque()

    def __len__(self):
        return len(self._samples)

    @property
    def span(self):
        if len(self._samples) < 2:
            return 0.0
        return self._samples[-1].t - self._samples[0].t

    def push(self, sample):
        if self._samples and sample.t <= self._samples[-1].t:
            raise ValueError(
                f"sample time {sample.t} not after last {self._samples[-1].t}"
            )
        self._samples.append(sample)
        while (
            len(self._samples) > 1
            and self._samples[-1].t - self._samples[0].t > self.capacity + SPAN_TOL
        ):
            self._samples.popleft()

    def samples(self):
        return list(self._samples)

    def as_arrays(self):
        m = len(self._samples)
        ts = np.empty(m)
        xs = np.empty((m, 6))
        us = np.empty((m, 3))
        for i, s in enumerate(self._samples):
            ts[i] = s.t
            xs[i] = s.x
            us[i] = s.u
        return ts, xs, us


@dataclass(frozen=True)
class TrainerConfig:
    learning_rate: float = 1e-3
    epochs: int = 50
    lam: float = 1e-4
    horizon: int = 1
    hidden: int = 16
    seed: int = 0
    max_lr_halvings: int = 3

    def __post_init__(self):
        if self.lam < 0:
            raise ValueError("lam must be >= 0")
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be > 0")
        if self.horizon < 1:
            raise ValueError("horizon must be >= 1")
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")


@dataclass(frozen=True)
class ModelSnapshot:
    net: ResidualNet
    version: int
    trained_at: float

    @property
    def params(self):
        return self.net.params


def predict(net, sample_i, sample_j):
    """Integrate the hybrid model from sample_i to sample_j's time with
    the control held constant; one RK4 step over the interval."""
    dt = sample_j.t - sample_i.t
    if dt <= 0:
        raise ValueError("sample_j must be later than sample_i")
    xs = np.ascontiguousarray(sample_i.x, dtype=float).reshape(1, 6)
    us = np.ascontiguousarray(sample_i.u, dtype=float).reshape(1, 3)
    out = backend.rk4_hybrid_step_batch(
        net.params, net.hidden, xs, us, np.array([dt])
    )[0]
    if not np.all(np.isfinite(out)):
        raise FloatingPointError("non-finite prediction")
    return out


def _queue_arrays(queue_or_samples):
    if isinstance(queue_or_samples, TrainingQueue):
        return queue_or_samples.as_arrays()
    samples = list(queue_or_samples)
    ts = np.array([s.t for s in samples], dtype=float)
    xs = np.array([np.asarray(s.x, dtype=float) for s in samples]).reshape(-1, 6)
    us = np.array([np.asarray(s.u, dtype=float) for s in samples]).reshape(-1, 3)
    return ts, xs, us


def _check_window(m, cfg):
    if m < 2:
        raise ValueError("need at least 2 samples to train")
    if m <= cfg.horizon:
        raise ValueError(f"need more than horizon={cfg.horizon} samples, got {m}")


def knode_loss(net, queue, cfg):
    """Mean squared prediction error over sample windows plus lam*|theta|^2."""
    ts, xs, us = _queue_arrays(queue)
    _check_window(len(ts), cfg)
    return float(
        backend.knode_loss_value(
            net.params, net.hidden, ts, xs, us, cfg.horizon, cfg.lam
        )
    )


def knode_loss_gradient(net, queue, cfg):
    """Loss and its gradient with respect to the flat parameter vector."""
    ts, xs, us = _queue_arrays(queue)
    _check_window(len(ts), cfg)
    loss, grad = backend.knode_loss_grad(
        net.params, net.hidden, ts, xs, us, cfg.horizon, cfg.lam
    )
    return float(loss), grad


def _adam(params, arrays, cfg, lr):
    """Run cfg.epochs full-batch Adam steps; returns the new parameters
    or None if anything went non-finite."""
    ts, xs, us = arrays
    beta1, beta2, eps = 0.9, 0.999, 1e-8
    p = params.copy()
    m = np.zeros_like(p)
    v = np.zeros_like(p)
    for step in range(1, cfg.epochs + 1):
        loss, grad = backend.knode_loss_grad(
            p, cfg.hidden, ts, xs, us, cfg.horizon, cfg.lam
        )
        if not (math.isfinite(loss) and np.all(np.isfinite(grad))):
            return None
        m = beta1 * m + (1.0 - beta1) * grad
        v = beta2 * v + (1.0 - beta2) * grad * grad
        mhat = m / (1.0 - beta1**step)
        vhat = v / (1.0 - beta2**step)
        p -= lr * mhat / (np.sqrt(vhat) + eps)
    if not np.all(np.isfinite(p)):
        return None
    return p


class Trainer:
    """Owns the evolving model and the monotone snapshot version.

    A round runs cfg.epochs of Adam on the full queue; if the loss did
    not improve the round is retried with a halved learning rate (at
    most cfg.max_lr_halvings times) and, failing that, the previous
    parameters are kept.  Every round publishes a fresh snapshot.
    """

    def __init__(self, net, cfg):
        self.net = net
        self.cfg = cfg
        self.version = 0

    def snapshot(self, trained_at=0.0):
        return ModelSnapshot(self.net, self.version, trained_at)

    def train_round(self, queue, trained_at=0.0):
        ts, xs, us = _queue_arrays(queue)
        _check_window(len(ts), self.cfg)
        arrays = (ts, xs, us)
        loss_before = float(
            backend.knode_loss_value(
                self.net.params, self.cfg.hidden, ts, xs, us,
                self.cfg.horizon, self.cfg.lam,
            )
        )
        accepted = None
        if math.isfinite(loss_before):
            lr = self.cfg.learning_rate
            for _ in range(self.cfg.max_lr_halvings + 1):
                p = _adam(self.net.params, arrays, self.cfg, lr)
                if p is not None:
                    loss_after = float(
                        backend.knode_loss_value(
                            p, self.cfg.hidden, ts, xs, us,
                            self.cfg.horizon, self.cfg.lam,
                        )
                    )
                    if math.isfinite(loss_after) and loss_after <= loss_before:
                        accepted = p
                        break
                lr *= 0.5
        if accepted is not None:
            self.net = self.net.with_params(accepted)
        self.version += 1
        return ModelSnapshot(self.net, self.version, trained_at)


def train_round(net, queue, cfg, trained_at=0.0):
    """One-shot round (fresh Trainer); returns the published snapshot."""
    trainer = Trainer(net, cfg)
    return trainer.train_round(queue, trained_at)


def offline_train(samples, cfg, total_epochs=400):
    """Repeated rounds over the full dataset until the epoch budget is
    exhausted; returns the final snapshot."""
    ts, xs, us = _queue_arrays(samples)
    _check_window(len(ts), cfg)
    rounds = max(1, math.ceil(total_epochs / cfg.epochs))
    trainer = Trainer(ResidualNet.initialize(cfg.hidden, cfg.seed), cfg)
    snap = trainer.snapshot()
    for _ in range(rounds):
        snap = trainer.train_round(samples, trained_at=float(ts[-1]))
    return snap


def dataset_from_log(log):
    """Samples (t, x, u) from a trajectory log, for offline training."""
    return [
        Sample(float(t), x.copy(), u.copy())
        for t, x, u in zip(log.t, log.states, log.u)
    ]
