"""Multi-run studies: env-aware vs env-zeroed training, DQN efficiency.

Trained autoencoders are cached on disk under a key built from the config
hash, the seed and the ablation arm. A JSON sidecar keeps the measured
training wall time, so a study that reuses cached models still reports the
compute it actually cost.
"""

from __future__ import annotations

import dataclasses
import json
import math
import time
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .checkpoint import load_checkpoint, save_checkpoint
from .config import Config
from .dqn import ActionSpace, DqnConfig, train_dqn
from .eval import AECodec, ber_curve
from .model import ModelConfig
from .numerics.optim import ParamStore
from .train import calibrated_mean_h, train_ae


@dataclass
class TrainedAE:
    params: ParamStore
    cfg: ModelConfig
    mean_h: float
    train_seconds: float
    cached: bool


def trained_ae(config: Config, seed: int, env_input: bool, cache_dir) -> TrainedAE:
    model_cfg = dataclasses.replace(config.model, env_input=env_input)
    cfg = dataclasses.replace(config.with_seed(seed), model=model_cfg)
    cache = Path(cache_dir)
    cache.mkdir(parents=True, exist_ok=True)
    stem = cache / f"ae_{cfg.hash}_s{seed}_{'env' if env_input else 'noenv'}"
    ck_path, side = stem.with_suffix(".ckpt"), stem.with_suffix(".json")
    if ck_path.exists() and side.exists():
        ck = load_checkpoint(ck_path, kind="ae")
        info = json.loads(side.read_text())
        return TrainedAE(ck.params, model_cfg, info["mean_h"], info["train_seconds"], True)
    res = train_ae(model_cfg, cfg.train_ae, cfg.channel)
    save_checkpoint(ck_path, res.params, "ae", model_cfg.to_dict(), {"config_hash": cfg.hash, "seed": seed})
    side.write_text(json.dumps({"mean_h": res.mean_h, "train_seconds": res.wall_time_s,
                                "final_bce": float(res.losses[-200:].mean())}))
    # evaluate what was stored, i.e. the float32 round trip
    ck = load_checkpoint(ck_path, kind="ae")
    return TrainedAE(ck.params, model_cfg, res.mean_h, res.wall_time_s, False)


def sign_test_p(wins: int, n: int) -> float:
    """One-sided p-value of ``wins`` or more successes out of ``n`` fair coin flips."""
    return sum(math.comb(n, k) for k in range(wins, n + 1)) / 2**n


@dataclass
class EnvAwarenessResult:
    seeds: list[int]
    ber_env: list[float]
    ber_noenv: list[float]
    wins: int
    p_value: float
    train_seconds: float
    eval_seconds: float

    @property
    def total_seconds(self) -> float:
        return self.train_seconds + self.eval_seconds


def env_awareness_study(config: Config, seeds: Sequence[int], cache_dir, eval_seed: int = 10_000,
                        snr_grid: Sequence[float] = (0, 2, 4, 6, 8, 10), n_bits: int | None = None,
                        log=print) -> EnvAwarenessResult:
    """Paired comparison: same seed, same eval blocks, env token on vs zeroed."""
    n_bits = n_bits or config.eval.n_bits
    ber_env, ber_noenv = [], []
    train_s = eval_s = 0.0
    for seed in seeds:
        pair = []
        for env_input in (True, False):
            ae = trained_ae(config, seed, env_input, cache_dir)
            train_s += ae.train_seconds
            t0 = time.perf_counter()
            mean_h = calibrated_mean_h(eval_seed, config.channel)
            rep = ber_curve(AECodec(ae.params, ae.cfg), snr_grid, n_bits, eval_seed, mean_h, config.channel)
            eval_s += time.perf_counter() - t0
            pair.append(float(np.mean([r.ber for r in rep.records])))
            log(f"seed {seed} env={env_input} mean BER {pair[-1]:.5f} "
                f"(train {ae.train_seconds:.0f}s{', cached' if ae.cached else ''})")
        ber_env.append(pair[0])
        ber_noenv.append(pair[1])
    wins = sum(e < z for e, z in zip(ber_env, ber_noenv))
    return EnvAwarenessResult(list(seeds), ber_env, ber_noenv, wins, sign_test_p(wins, len(seeds)),
                              train_s, eval_s)


@dataclass
class DqnEfficiencyResult:
    avg_layers: float
    mse_full: float
    mse_dqn: float
    layers_low_snr: float
    layers_high_snr: float
    per_snr: list[dict]
    seconds: float

    @property
    def mse_ratio(self) -> float:
        return self.mse_dqn / self.mse_full


def dqn_efficiency_study(config: Config, ae: TrainedAE, dqn_cfg: DqnConfig | None = None, eval_seed: int = 20_000,
                         snr_grid: Sequence[float] = (0, 2, 4, 6, 8, 10), n_bits: int = 256_000,
                         low_snr: float = 0.0, high_snr: float = 10.0) -> DqnEfficiencyResult:
    """Train a Q-network on a frozen AE and compare against full depth on held-out envs."""
    t0 = time.perf_counter()
    dqn_cfg = dqn_cfg or config.dqn
    res = train_dqn(ae.params, ae.cfg, dqn_cfg, ae.mean_h, config.channel)
    mean_h = calibrated_mean_h(eval_seed, config.channel)
    full = ber_curve(AECodec(ae.params, ae.cfg), snr_grid, n_bits, eval_seed, mean_h, config.channel)
    space = ActionSpace(ae.cfg.layers, dqn_cfg.l_min_per_stack)
    sel = ber_curve(AECodec(ae.params, ae.cfg, res.Q, space, config.eval.deploy_threshold), snr_grid, n_bits,
                    eval_seed, mean_h, config.channel)
    per = [{"snr_db": f.snr_db, "ber_full": f.ber, "ber_dqn": s.ber, "mse_full": f.mean_mse, "mse_dqn": s.mean_mse,
            "avg_active_layers": s.avg_active_layers} for f, s in zip(full.records, sel.records)]
    low = [s.avg_active_layers for s in sel.records if s.snr_db <= low_snr]
    high = [s.avg_active_layers for s in sel.records if s.snr_db >= high_snr]
    return DqnEfficiencyResult(
        avg_layers=float(np.mean([s.avg_active_layers for s in sel.records])),
        mse_full=float(np.mean([f.mean_mse for f in full.records])),
        mse_dqn=float(np.mean([s.mean_mse for s in sel.records])),
        layers_low_snr=float(np.mean(low)),
        layers_high_snr=float(np.mean(high)),
        per_snr=per,
        seconds=time.perf_counter() - t0,
    )
