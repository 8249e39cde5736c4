"""Full-depth autoencoder training over randomized environments."""

from __future__ import annotations

import logging
import math
import time
from dataclasses import asdict, dataclass
from typing import Callable

import numpy as np

from . import channel as ch
from .model import LinkBudget, ModelConfig, forward_end_to_end, init_params
from .numerics import rng as rngmod
from .numerics.autodiff import backward
from .numerics.optim import AdamW, ParamStore, cosine_lr

log = logging.getLogger(__name__)

CN2_LOG_RANGE = (4e-15, 5e-14)


@dataclass(frozen=True)
class TrainConfig:
    batch_size: int = 64
    epochs: int = 50
    steps_per_epoch: int = 200
    lr: float = 1e-3
    lr_min: float = 0.0
    train_snr_db: float = 10.0
    lambda_bce: float = 1.0
    weight_decay: float = 1e-5
    seed: int = 0
    # skip fading and noise entirely (smoke runs, identity-channel checks)
    noiseless: bool = False

    def __post_init__(self):
        for name in ("batch_size", "epochs", "steps_per_epoch", "lr"):
            if not getattr(self, name) > 0:
                raise ValueError(f"train_ae.{name} must be positive")
        for name in ("lr_min", "lambda_bce", "weight_decay"):
            if getattr(self, name) < 0:
                raise ValueError(f"train_ae.{name} must be >= 0")

    @property
    def total_steps(self) -> int:
        return self.epochs * self.steps_per_epoch

    def to_dict(self) -> dict:
        return asdict(self)


# ---------------------------------------------------------------------------


def normalize_env(env) -> np.ndarray:
    """Min-max scale an environment (or batch) to ``[0, 1]^5``.

    Cn2 is scaled in the log domain. Values outside the Table II ranges are
    clamped, with a warning.
    """
    if isinstance(env, ch.EnvParams):
        cols = env.as_array()[None, :]
    elif isinstance(env, ch.EnvBatch):
        cols = env.as_array()
    else:
        cols = np.atleast_2d(np.asarray(env, dtype=np.float64))
    lo = np.array([ch.Z_RANGE[0], ch.VD_RANGE[0], math.log(CN2_LOG_RANGE[0]),
                   ch.SIGMA_S_RANGE[0], ch.SIGMA_A_RANGE[0]])
    hi = np.array([ch.Z_RANGE[1], ch.VD_RANGE[1], math.log(CN2_LOG_RANGE[1]),
                   ch.SIGMA_S_RANGE[1], ch.SIGMA_A_RANGE[1]])
    cols = cols.copy()
    cols[:, 2] = np.log(cols[:, 2])
    s = (cols - lo) / (hi - lo)
    if np.any(s < -1e-12) or np.any(s > 1 + 1e-12):
        log.warning("environment outside the configured ranges; clamping")
        s = np.clip(s, 0.0, 1.0)
    return s[0] if isinstance(env, ch.EnvParams) else s


@dataclass
class Batch:
    bits: np.ndarray
    envs: ch.EnvBatch
    states: np.ndarray
    h: np.ndarray
    noise: np.ndarray


def make_batch(rng: np.random.Generator, n: int, cfg: ModelConfig, consts: ch.ChannelConstants,
               noiseless: bool = False) -> Batch:
    """One block per row: uniform bits, a fresh env and one channel draw each."""
    bits = rng.integers(0, 2, size=(n, cfg.N)).astype(np.float64)
    envs = ch.sample_envs(rng, n)
    if noiseless:
        h = np.ones(n)
    else:
        h = np.asarray(ch.sample_channel(rng, envs, consts).h, dtype=np.float64)
    noise = rng.standard_normal((n, cfg.K))
    if noiseless:
        noise[:] = 0.0
    return Batch(bits, envs, normalize_env(envs), h, noise)


def link_budget(snr_db: float, mean_h: float, consts: ch.ChannelConstants) -> LinkBudget:
    amp = ch.amplitude_for_snr(snr_db, mean_h, consts.sigma_w)
    return LinkBudget(amp, consts.sigma_w, mean_h)


def noiseless_link() -> LinkBudget:
    return LinkBudget(1.0, 0.0, 1.0)


def calibrated_mean_h(seed: int, consts: ch.ChannelConstants) -> float:
    return ch.calibrate_mean_h(rngmod.stream(seed, rngmod.CALIBRATION), consts)


class TrainingDiverged(RuntimeError):
    pass


@dataclass
class TrainResult:
    params: ParamStore
    log_rows: list[tuple[int, int, float, float]]
    mean_h: float
    wall_time_s: float

    @property
    def losses(self) -> np.ndarray:
        return np.array([r[2] for r in self.log_rows])


def train_ae(
    model_cfg: ModelConfig,
    train_cfg: TrainConfig,
    consts: ch.ChannelConstants | None = None,
    params: ParamStore | None = None,
    on_epoch: Callable[[int, float], None] | None = None,
) -> TrainResult:
    """Minimize mean BCE with all layers active.

    Weight decay (the parameter-norm penalty) is AdamW's decoupled decay.
    Each step draws its batch from the stream ``(seed, TRAIN + step)`` so a run
    is reproducible step by step.
    """
    consts = consts or ch.ChannelConstants()
    seed = train_cfg.seed
    if params is None:
        params = init_params(model_cfg, rngmod.stream(seed, rngmod.INIT))
    if train_cfg.noiseless:
        mean_h = 1.0
        link = noiseless_link()
    else:
        mean_h = calibrated_mean_h(seed, consts)
        link = link_budget(train_cfg.train_snr_db, mean_h, consts)
    opt = AdamW(lr=train_cfg.lr, weight_decay=train_cfg.weight_decay)
    total = train_cfg.total_steps
    rows = []
    t0 = time.perf_counter()
    step = 0
    for epoch in range(train_cfg.epochs):
        epoch_loss = 0.0
        for _ in range(train_cfg.steps_per_epoch):
            g = rngmod.stream(seed, rngmod.TRAIN + step)
            b = make_batch(g, train_cfg.batch_size, model_cfg, consts, train_cfg.noiseless)
            lr = cosine_lr(step, total, train_cfg.lr, train_cfg.lr_min)
            params.zero_grad()
            res = forward_end_to_end(params, model_cfg, b.bits, b.states, b.h, link, noise=b.noise)
            loss = res.bce if train_cfg.lambda_bce == 1.0 else res.bce * train_cfg.lambda_bce
            value = float(res.bce.data)
            if not math.isfinite(value):
                raise TrainingDiverged(f"loss became {value} at epoch {epoch}, step {step}")
            backward(loss)
            opt.step(params, lr=lr)
            rows.append((epoch, step, value, lr))
            epoch_loss += value
            step += 1
        if on_epoch is not None:
            on_epoch(epoch, epoch_loss / train_cfg.steps_per_epoch)
    return TrainResult(params, rows, mean_h, time.perf_counter() - t0)
