"""Sparse teacher forcing training with rectified Adam."""
from __future__ import annotations

import csv
import json
import logging
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, fields

import numpy as np

from .errors import CPLRNNError, DegenerateGradient, NonFiniteLoss
from .events import solve_trajectory
from .gradients import GradAccumulator, ParamGrad, trajectory_vjp
from .model import ModelParams

log = logging.getLogger(__name__)


@dataclass
class TrainConfig:
    M: int = 20
    P: int = 10
    seq_len: int = 200
    batch_size: int = 16
    batches_per_epoch: int = 50
    epochs: int = 2000
    lr_start: float = 1e-3
    lr_end: float = 1e-5
    tf_interval: int = 16
    noise_level: float = 0.05
    grad_clip_norm: float = 10.0
    checkpoint_every: int = 0
    w_scale: float = 1.0

    def __post_init__(self):
        self.validate()

    def validate(self):
        for name in ("M", "seq_len", "batch_size", "batches_per_epoch", "epochs", "tf_interval"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be positive")
        if not 0 <= self.P <= self.M:
            raise ValueError("P must lie in [0, M]")
        if not (0 < self.lr_end <= self.lr_start):
            raise ValueError("need 0 < lr_end <= lr_start")
        if self.noise_level < 0 or self.grad_clip_norm < 0 or self.checkpoint_every < 0:
            raise ValueError("noise_level, grad_clip_norm, checkpoint_every must be >= 0")

    def lr_at(self, epoch: int) -> float:
        return self.lr_start * (self.lr_end / self.lr_start) ** (epoch / self.epochs)

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        return cls(**d)

    @classmethod
    def load(cls, path) -> "TrainConfig":
        with open(path) as fh:
            return cls.from_dict(json.load(fh))

    def to_dict(self) -> dict:
        return asdict(self)


def mse_loss(predicted, observed) -> float:
    predicted = np.asarray(predicted, dtype=float)
    observed = np.asarray(observed, dtype=float)
    if predicted.shape != observed.shape:
        raise ValueError("shape mismatch")
    with np.errstate(over="ignore", invalid="ignore"):
        return float(np.mean((predicted - observed) ** 2))


@dataclass
class STFRecord:
    predictions: np.ndarray
    chunks: list = field(default_factory=list)    # (start index, Trajectory)
    N: int = 0


def stf_forward(params: ModelParams, times, values, tf_interval: int, noise_level: float = 0.0,
                rng=None, noise=None, allow_perturb: bool = True) -> STFRecord:
    """Predictions at ``times[1:]`` with forcing at every ``tf_interval``-th index.

    Hidden coordinates start at zero and are carried across forcing points.
    ``noise`` (shape of ``values``) overrides drawing from ``rng``.
    """
    times = np.asarray(times, dtype=float)
    values = np.asarray(values, dtype=float)
    if values.ndim == 1:
        values = values[:, None]
    T, N = values.shape
    if noise is None:
        if noise_level > 0:
            if rng is None:
                raise ValueError("rng required when noise_level > 0")
            noise = rng.normal(0.0, noise_level, size=values.shape)
        else:
            noise = np.zeros_like(values)
    rec = STFRecord(predictions=np.empty((T - 1, N)), N=N)
    z = np.zeros(params.M)
    for k0 in range(0, T - 1, tf_interval):
        k1 = min(k0 + tf_interval, T - 1)
        z = z.copy()
        z[:N] = values[k0] + noise[k0]
        traj = solve_trajectory(params, z, times[k0:k1 + 1], allow_perturb=allow_perturb)
        rec.predictions[k0:k1] = traj.states[1:, :N]
        rec.chunks.append((k0, traj))
        z = traj.states[-1]
    return rec


def stf_backward(params: ModelParams, rec: STFRecord, pred_bar, acc: GradAccumulator):
    """Accumulate gradients of a loss with ``d loss / d predictions = pred_bar``."""
    N = rec.N
    M = params.M
    carry = np.zeros(M)
    for k0, traj in reversed(rec.chunks):
        n = traj.times.shape[0]
        sb = np.zeros((n, M))
        sb[1:, :N] = pred_bar[k0:k0 + n - 1]
        sb[-1] += carry
        e0 = trajectory_vjp(params, traj, sb, acc)
        carry = e0.copy()
        carry[:N] = 0.0


def loss_and_grad(params: ModelParams, times, values, tf_interval: int, noise=None,
                  acc: GradAccumulator | None = None):
    """STF MSE loss of one sequence and its gradient (accumulated into ``acc``)."""
    own = acc is None
    if own:
        acc = GradAccumulator(params)
    rec = stf_forward(params, times, values, tf_interval, noise=noise)
    target = np.asarray(values, dtype=float).reshape(len(times), -1)[1:]
    loss = mse_loss(rec.predictions, target)
    if not math.isfinite(loss):
        return loss, None
    pred_bar = 2.0 * (rec.predictions - target) / rec.predictions.size
    stf_backward(params, rec, pred_bar, acc)
    if own:
        return loss, acc.finalize()
    return loss, None


class RAdam:
    """Rectified Adam over a flat parameter vector."""

    def __init__(self, size: int, betas=(0.9, 0.999), eps: float = 1e-8):
        self.b1, self.b2 = betas
        self.eps = eps
        self.m = np.zeros(size)
        self.v = np.zeros(size)
        self.t = 0
        self.rho_inf = 2.0 / (1.0 - self.b2) - 1.0

    def step(self, theta: np.ndarray, grad: np.ndarray, lr: float) -> np.ndarray:
        self.t += 1
        b1, b2, t = self.b1, self.b2, self.t
        self.m = b1 * self.m + (1 - b1) * grad
        self.v = b2 * self.v + (1 - b2) * grad * grad
        m_hat = self.m / (1 - b1 ** t)
        rho_t = self.rho_inf - 2 * t * b2 ** t / (1 - b2 ** t)
        if rho_t > 5.0:
            l = math.sqrt(1 - b2 ** t) / (np.sqrt(self.v) + self.eps)
            r = math.sqrt((rho_t - 4) * (rho_t - 2) * self.rho_inf
                          / ((self.rho_inf - 4) * (self.rho_inf - 2) * rho_t))
            return theta - lr * m_hat * r * l
        return theta - lr * m_hat

    def state_dict(self) -> dict:
        return {"m": self.m.tolist(), "v": self.v.tolist(), "t": self.t}


def _pack(params: ModelParams) -> np.ndarray:
    return np.concatenate([params.A, params.W.ravel(), params.h])


def _unpack(params: ModelParams, theta: np.ndarray) -> ModelParams:
    M = params.M
    return params.replace(A=theta[:M], W=theta[M:M + M * M].reshape(M, M), h=theta[M + M * M:])


def _member_grad(args):
    params, times, values, tf_interval, noise = args
    acc = GradAccumulator(params)
    loss, _ = loss_and_grad(params, times, values, tf_interval, noise=noise, acc=acc)
    if not math.isfinite(loss):
        return loss, None
    return loss, acc


@dataclass
class EpochRecord:
    epoch: int
    loss: float
    lr: float
    discarded_segments: int


def write_history(path, history):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["epoch", "loss", "lr", "discarded_segments"])
        for r in history:
            w.writerow([r.epoch, repr(r.loss), repr(r.lr), r.discarded_segments])


def train(params: ModelParams, times, values, config: TrainConfig, rng: np.random.Generator,
          out_dir=None, jobs: int = 1, progress=None):
    """Train ``params`` on one (possibly irregular) series; returns (params, history)."""
    times = np.asarray(times, dtype=float)
    values = np.asarray(values, dtype=float)
    if values.ndim == 1:
        values = values[:, None]
    T = values.shape[0]
    L = min(config.seq_len, T)
    opt = RAdam(_pack(params).size)
    history: list[EpochRecord] = []
    ckpt_dir = None
    if out_dir is not None:
        ckpt_dir = os.path.join(out_dir, "checkpoints")
        os.makedirs(ckpt_dir, exist_ok=True)
    last_finite = params
    pool = ProcessPoolExecutor(max_workers=jobs) if jobs > 1 else None
    try:
        for epoch in range(config.epochs):
            lr = config.lr_at(epoch)
            losses = []
            discarded = 0
            for _ in range(config.batches_per_epoch):
                starts = rng.integers(0, T - L + 1, size=config.batch_size)
                noise = rng.normal(0.0, config.noise_level, size=(config.batch_size, L, values.shape[1])) \
                    if config.noise_level > 0 else np.zeros((config.batch_size, L, values.shape[1]))
                jobs_args = [(params, times[s:s + L], values[s:s + L], config.tf_interval, noise[b])
                             for b, s in enumerate(starts)]
                batch_loss, grad = _batch(params, jobs_args, pool)
                if not math.isfinite(batch_loss):
                    raise NonFiniteLoss(f"non-finite loss at epoch {epoch}", params=last_finite,
                                        history=history, epoch=epoch)
                losses.append(batch_loss)
                if grad is None:
                    continue
                discarded += grad.discarded_segments
                g = grad.flat()
                gn = float(np.linalg.norm(g))
                if config.grad_clip_norm > 0 and gn > config.grad_clip_norm:
                    g = g * (config.grad_clip_norm / gn)
                last_finite = params
                params = _unpack(params, opt.step(_pack(params), g, lr))
            rec = EpochRecord(epoch, float(np.mean(losses)), lr, discarded)
            history.append(rec)
            if progress is not None:
                progress(rec, params)
            if ckpt_dir and config.checkpoint_every and (epoch + 1) % config.checkpoint_every == 0:
                params.save(os.path.join(ckpt_dir, f"epoch_{epoch + 1:05d}.json"))
            if out_dir is not None:
                write_history(os.path.join(out_dir, "loss_history.csv"), history)
    except NonFiniteLoss:
        if out_dir is not None:
            last_finite.save(os.path.join(out_dir, "last_finite.json"))
            write_history(os.path.join(out_dir, "loss_history.csv"), history)
        raise
    finally:
        if pool is not None:
            pool.shutdown()
    if out_dir is not None:
        params.save(os.path.join(out_dir, "model.json"))
    return params, history


def _batch(params, jobs_args, pool):
    """Mean loss and gradient over a batch, reduced in member order."""
    n = len(jobs_args)
    try:
        if pool is None:
            acc = GradAccumulator(params)
            total = 0.0
            for p, t, v, tau, noise in jobs_args:
                loss, _ = loss_and_grad(p, t, v, tau, noise=noise, acc=acc)
                if not math.isfinite(loss):
                    return loss, None
                total += loss
            grad = acc.finalize()
        else:
            total = 0.0
            grad = ParamGrad.zeros(params.M)
            switches = discarded = 0
            for loss, acc in pool.map(_member_grad, jobs_args):
                if not math.isfinite(loss):
                    return loss, None
                total += loss
                switches += acc.switches
                discarded += acc.discarded
                grad = grad + acc.finalize(check_degenerate=False)
            if switches > 0 and discarded > 0.5 * switches:
                raise DegenerateGradient(f"{discarded} of {switches} switch contributions discarded",
                                         discarded=discarded, switches=switches)
    except DegenerateGradient as err:
        log.warning("skipping update: %s", err)
        return _losses_only(jobs_args), None
    except CPLRNNError as err:
        log.warning("solver failure in batch (%s); treating loss as non-finite", err.code)
        return math.nan, None
    return total / n, grad.scaled(1.0 / n)


def _losses_only(jobs_args):
    total = 0.0
    for p, t, v, tau, noise in jobs_args:
        rec = stf_forward(p, t, v, tau, noise=noise)
        total += mse_loss(rec.predictions, np.asarray(v).reshape(len(t), -1)[1:])
    return total / len(jobs_args)
