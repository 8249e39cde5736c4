import dataclasses
import math

import numpy as np
import pytest
from scipy import stats

from aeat import eval as ev
from aeat.config import Config
from aeat.model import ModelConfig
from aeat.studies import dqn_efficiency_study, env_awareness_study, sign_test_p, trained_ae
from aeat.train import TrainConfig, calibrated_mean_h


def tiny_config():
    base = Config()
    return dataclasses.replace(
        base,
        model=ModelConfig(T=4, d=8, heads=2, layers=2, d_in=2),
        train_ae=TrainConfig(epochs=1, steps_per_epoch=20, batch_size=16, lr=1e-2),
        dqn=dataclasses.replace(base.dqn, episodes=20, batch=8, blocks_per_episode=2, hidden=16),
    )


def gradient_image():
    y, x = np.mgrid[0:16, 0:16]
    return np.stack([x * 16, y * 16, (x + y) * 8], axis=-1).astype(np.uint8)


class TestSignTest:
    @pytest.mark.parametrize("n", [1, 5, 9])
    def test_matches_scipy(self, n):
        for wins in range(n + 1):
            ref = stats.binomtest(wins, n, 0.5, alternative="greater").pvalue
            assert sign_test_p(wins, n) == pytest.approx(ref, rel=1e-12)

    def test_five_of_five(self):
        assert sign_test_p(5, 5) == 1 / 32
        assert sign_test_p(0, 5) == 1.0


class TestCache:
    def test_second_call_hits_cache(self, tmp_path):
        cfg = tiny_config()
        a = trained_ae(cfg, 1, True, tmp_path)
        b = trained_ae(cfg, 1, True, tmp_path)
        assert not a.cached and b.cached
        assert b.train_seconds == a.train_seconds and b.mean_h == a.mean_h
        for k in a.params.names():
            assert np.array_equal(a.params[k].data, b.params[k].data)

    def test_arms_and_seeds_are_separate(self, tmp_path):
        cfg = tiny_config()
        trained_ae(cfg, 1, True, tmp_path)
        trained_ae(cfg, 1, False, tmp_path)
        trained_ae(cfg, 2, True, tmp_path)
        assert len(list(tmp_path.glob("*.ckpt"))) == 3


class TestStudies:
    def test_env_awareness_shapes(self, tmp_path):
        r = env_awareness_study(tiny_config(), [0, 1], tmp_path, snr_grid=(0, 10), n_bits=2048, log=lambda s: None)
        assert len(r.ber_env) == len(r.ber_noenv) == 2
        assert r.wins == sum(e < z for e, z in zip(r.ber_env, r.ber_noenv))
        assert r.p_value == sign_test_p(r.wins, 2)
        assert r.total_seconds == pytest.approx(r.train_seconds + r.eval_seconds)

    def test_dqn_efficiency_shapes(self, tmp_path):
        cfg = tiny_config()
        ae = trained_ae(cfg, 0, True, tmp_path)
        r = dqn_efficiency_study(cfg, ae, snr_grid=(0, 10), n_bits=2048)
        assert len(r.per_snr) == 2
        assert 2 <= r.avg_layers <= 2 * cfg.model.layers
        assert r.mse_ratio == pytest.approx(r.mse_dqn / r.mse_full)


def test_env_awareness_image_psnr_low_snr(acceptance_cache):
    # uses the default-scale models trained for the environment-awareness criterion
    config = Config()
    img = gradient_image()
    mean_h = calibrated_mean_h(30_000, config.channel)
    gains = []
    for seed in range(5):
        psnr = {}
        for env_input in (True, False):
            ae = trained_ae(config, seed, env_input, acceptance_cache)
            job = ev.image_pipeline(img, ev.AECodec(ae.params, ae.cfg), -16.0, 30_000 + seed, mean_h,
                                    config.channel)
            psnr[env_input] = job.psnr_db
        gains.append(psnr[True] - psnr[False])
    print("PSNR gain env - noenv at -16 dB per seed:", " ".join(f"{g:+.2f}" for g in gains))
    assert math.isfinite(np.mean(gains))
    assert np.mean(gains) > 0
