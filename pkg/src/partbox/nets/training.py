"""Seeded minibatch trainer (Adam / SGD) and a finite-difference gradient checker."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .autodiff import DiffTensor


class TrainingDiverged(RuntimeError):
    """Loss became non-finite; carries the epoch index where it happened."""

    def __init__(self, epoch: int, loss: float):
        super().__init__(f"loss became non-finite ({loss}) at epoch {epoch}")
        self.epoch = epoch


@dataclass
class OptimizerConfig:
    algo: str = "adam"
    lr: float = 1e-3
    batch_size: int = 64
    epochs: int = 20
    lr_decay: float = 0.9
    decay_every: int = 2
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    def lr_at(self, epoch: int) -> float:
        if self.decay_every <= 0:
            return self.lr
        return self.lr * self.lr_decay ** (epoch // self.decay_every)


class Adam:
    def __init__(self, params, cfg: OptimizerConfig):
        self.params = list(params)
        self.cfg = cfg
        self.m = [np.zeros_like(p.value) for p in self.params]
        self.v = [np.zeros_like(p.value) for p in self.params]
        self.t = 0

    def step(self, lr: float):
        self.t += 1
        b1, b2, eps = self.cfg.beta1, self.cfg.beta2, self.cfg.eps
        for i, p in enumerate(self.params):
            g = p.grad if p.grad is not None else np.zeros_like(p.value)
            self.m[i] = b1 * self.m[i] + (1 - b1) * g
            self.v[i] = b2 * self.v[i] + (1 - b2) * g * g
            m_hat = self.m[i] / (1 - b1**self.t)
            v_hat = self.v[i] / (1 - b2**self.t)
            p.value -= lr * m_hat / (np.sqrt(v_hat) + eps)

    def state_arrays(self) -> dict:
        out = {"t": np.array([float(self.t)])}
        for i, (m, v) in enumerate(zip(self.m, self.v)):
            out[f"m{i}"] = m
            out[f"v{i}"] = v
        return out

    def load_state_arrays(self, arrays: dict):
        self.t = int(arrays["t"][0])
        for i in range(len(self.params)):
            self.m[i] = np.array(arrays[f"m{i}"])
            self.v[i] = np.array(arrays[f"v{i}"])


class Sgd:
    def __init__(self, params, cfg: OptimizerConfig):
        self.params = list(params)

    def step(self, lr: float):
        for p in self.params:
            if p.grad is not None:
                p.value -= lr * p.grad

    def state_arrays(self) -> dict:
        return {}

    def load_state_arrays(self, arrays: dict):
        pass


def make_optimizer(params, cfg: OptimizerConfig):
    if cfg.algo == "adam":
        return Adam(params, cfg)
    if cfg.algo == "sgd":
        return Sgd(params, cfg)
    raise ValueError(f"unknown optimizer {cfg.algo!r}")


@dataclass
class TrainResult:
    loss_curve: list
    epochs_run: int
    optimizer_state: dict = field(default_factory=dict)


def train(
    parameters,
    batch_loss,
    n_samples: int,
    cfg: OptimizerConfig,
    seed: int = 0,
    start_epoch: int = 0,
    optimizer_state: dict | None = None,
    epoch_callback=None,
) -> TrainResult:
    """Minibatch-train `parameters` against `batch_loss`.

    `batch_loss(indices)` must return a scalar DiffTensor (mean loss over
    the given sample indices).  Shuffling, batching, and updates are fully
    determined by (seed, cfg, start_epoch), so runs are bit-reproducible.
    Non-finite loss raises TrainingDiverged with the epoch index.
    """
    if n_samples < 1:
        raise ValueError("dataset must be nonempty")
    params = list(parameters)
    opt = make_optimizer(params, cfg)
    if optimizer_state:
        opt.load_state_arrays(optimizer_state)
    curve = []
    for epoch in range(start_epoch, start_epoch + cfg.epochs):
        rng = np.random.default_rng([seed, epoch])
        order = rng.permutation(n_samples)
        lr = cfg.lr_at(epoch)
        total, seen = 0.0, 0
        for lo in range(0, n_samples, cfg.batch_size):
            idx = order[lo : lo + cfg.batch_size]
            for p in params:
                p.zero_grad()
            loss = batch_loss(idx)
            value = float(loss.value)
            if not np.isfinite(value):
                raise TrainingDiverged(epoch, value)
            loss.backward()
            opt.step(lr)
            total += value * len(idx)
            seen += len(idx)
        curve.append(total / seen)
        if epoch_callback is not None:
            epoch_callback(epoch, curve[-1])
    return TrainResult(curve, cfg.epochs, opt.state_arrays())


@dataclass
class GradCheckReport:
    max_rel_error: float
    n_checked: int
    ok: bool
    worst_param: int = -1
    worst_index: int = -1

    def __str__(self):
        status = "OK" if self.ok else "FAIL"
        return (
            f"grad check {status}: max rel error {self.max_rel_error:.3e} "
            f"over {self.n_checked} entries"
        )


def grad_check(
    loss_fn,
    params,
    h: float = 1e-5,
    tol: float = 1e-4,
    max_entries_per_param: int = 0,
    rng: np.random.Generator | None = None,
) -> GradCheckReport:
    """Compare analytic gradients of `loss_fn()` against central differences.

    Relative error uses a 1e-6 floor in the denominator so near-zero
    gradients are compared absolutely (central differences carry ~1e-11
    noise for unit-scale losses).  Set `max_entries_per_param` to check a
    random subset of each parameter tensor.
    """
    params = list(params)
    for p in params:
        p.zero_grad()
    loss = loss_fn()
    loss.backward()
    analytic = [np.array(p.grad) if p.grad is not None else np.zeros_like(p.value) for p in params]

    worst, worst_p, worst_i, checked = 0.0, -1, -1, 0
    for pi, p in enumerate(params):
        flat = p.value.reshape(-1)
        n = flat.size
        if max_entries_per_param and n > max_entries_per_param:
            if rng is None:
                rng = np.random.default_rng(0)
            entries = rng.choice(n, size=max_entries_per_param, replace=False)
        else:
            entries = range(n)
        a_flat = analytic[pi].reshape(-1)
        for j in entries:
            orig = flat[j]
            flat[j] = orig + h
            f_plus = float(loss_fn().value)
            flat[j] = orig - h
            f_minus = float(loss_fn().value)
            flat[j] = orig
            fd = (f_plus - f_minus) / (2.0 * h)
            rel = abs(a_flat[j] - fd) / max(abs(a_flat[j]), abs(fd), 1e-6)
            checked += 1
            if rel > worst:
                worst, worst_p, worst_i = rel, pi, j
    return GradCheckReport(worst, checked, worst <= tol, worst_p, worst_i)
