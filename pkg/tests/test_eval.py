import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from aeat import channel as ch
from aeat import eval as ev
from aeat.dqn import ActionSpace, DqnConfig, init_q
from aeat.model import LayerMask, ModelConfig, init_params
from aeat.numerics import stream

# 10 log10(255^2 / 256)
PSNR_16_LEVELS = 24.0484039556

CONSTS = ch.ChannelConstants()


def hamming_error_moments(p):
    """Mean and variance of data-bit errors per codeword over BSC(p), by 2^7 enumeration.

    Written independently of the library's decoder: nearest-codeword search.
    """
    G = np.array([[1, 0, 0, 0, 1, 1, 0], [0, 1, 0, 0, 1, 0, 1], [0, 0, 1, 0, 0, 1, 1], [0, 0, 0, 1, 1, 1, 1]])
    msgs = np.array([[(m >> i) & 1 for i in range(4)] for m in range(16)])
    book = msgs @ G % 2
    m1 = m2 = 0.0
    for pattern in range(128):
        e = np.array([(pattern >> i) & 1 for i in range(7)])
        w = e.sum()
        prob = p**w * (1 - p) ** (7 - w)
        # all-zero codeword sent (linear code); decode to nearest codeword
        nearest = np.argmin((book != e).sum(axis=1))
        x = msgs[nearest].sum()
        m1 += prob * x
        m2 += prob * x * x
    return m1, m2 - m1 * m1


class TestStubCodecs:
    def test_perfect_codec_noiseless(self):
        rep = ev.ber_curve(ev.PerfectCodec(), [0.0, 10.0], 128 * 40, 0, 1.0)
        assert all(r.errors == 0 and r.ber == 0.0 for r in rep.records)

    def test_random_codec_half(self):
        n = 128 * 800
        rep = ev.ber_curve(ev.RandomCodec(), [5.0], n, 1, 1.0)
        assert abs(rep.records[0].ber - 0.5) <= 3 * math.sqrt(0.25 / n)

    def test_report_invariants(self):
        rep = ev.ber_curve(ev.RandomCodec(), [0.0, 4.0], 128 * 10, 2, 0.004)
        for r in rep.records:
            assert r.bits == 1280 and r.ber == r.errors / r.bits
        assert rep.metadata["mean_h"] == 0.004 and len(rep.metadata["amplitudes"]) == 2

    def test_n_bits_must_be_block_multiple(self):
        with pytest.raises(ValueError):
            ev.ber_curve(ev.PerfectCodec(), [0.0], 100, 0, 1.0)


@pytest.fixture(scope="module")
def small_ae():
    cfg = ModelConfig(T=4, d=8, heads=2, layers=4, d_in=2)
    return init_params(cfg, stream(0, 0)), cfg


def fixed_q(space, index, state_dim=5):
    """Q-network whose greedy action is always ``index``."""
    Q = init_q(DqnConfig(hidden=4), len(space), stream(0, 1))
    for n in Q:
        Q[n].data[:] = 0.0
    Q["q2.b"].data[0, index] = 1.0
    return Q


class TestAECodec:
    def test_full_depth_layers(self, small_ae):
        P, cfg = small_ae
        rep = ev.ber_curve(ev.AECodec(P, cfg), [0.0, 10.0], cfg.N * 40, 0, 0.0045)
        assert all(r.avg_active_layers == 8.0 for r in rep.records)
        assert all(0 < r.mean_mse < 1 for r in rep.records)

    def test_threads_identical(self, small_ae):
        P, cfg = small_ae
        space = ActionSpace(4)
        Q = init_q(DqnConfig(hidden=8), len(space), stream(0, 2))
        codec = ev.AECodec(P, cfg, Q, space)
        a = ev.ber_curve(codec, [0.0, 6.0], cfg.N * 100, 3, 0.0045, workers=1, chunk_blocks=8)
        b = ev.ber_curve(codec, [0.0, 6.0], cfg.N * 100, 3, 0.0045, workers=3, chunk_blocks=8)
        assert a.to_csv() == b.to_csv()

    def test_layer_average_matches_masks(self, small_ae):
        P, cfg = small_ae
        space = ActionSpace(4)
        Q = init_q(DqnConfig(hidden=8), len(space), stream(0, 3))
        codec = ev.AECodec(P, cfg, Q, space)
        n_blocks = 64
        rep = ev.ber_curve(codec, [4.0], cfg.N * n_blocks, 5, 0.0045, chunk_blocks=16)
        used = []
        for start in range(0, n_blocks, 16):
            b = ev.block_data(5, start, 16, cfg.N, cfg.K, CONSTS)
            used += [m.active for m in codec.masks_for(b.states)]
        assert rep.records[0].avg_active_layers == pytest.approx(np.mean(used), rel=1e-12)
        assert 2 <= rep.records[0].avg_active_layers <= 8

    def test_fixed_mask(self, small_ae):
        P, cfg = small_ae
        space = ActionSpace(4)
        codec = ev.AECodec(P, cfg, fixed_q(space, space.index(LayerMask(1, 2))), space)
        rep = ev.ber_curve(codec, [10.0], cfg.N * 8, 0, 0.0045)
        assert rep.records[0].avg_active_layers == 2.0


class TestBlockData:
    def test_per_block_streams(self):
        a = ev.block_data(7, 0, 10, 16, 16, CONSTS)
        b = ev.block_data(7, 4, 3, 16, 16, CONSTS)
        assert np.array_equal(a.bits[4:7], b.bits) and np.array_equal(a.h[4:7], b.h)
        assert np.all((a.states >= 0) & (a.states <= 1))


class TestOOK:
    def test_closed_form_limits(self):
        assert ev.ook_theoretical_ber(-400.0) == pytest.approx(0.5)
        grid = np.linspace(-10, 20, 31)
        assert np.all(np.diff(ev.ook_theoretical_ber(grid)) < 0)

    @pytest.mark.parametrize("snr", [0.0, 6.0, 10.0])
    def test_simulation_matches(self, snr):
        errors, n = ev.simulate_ook_awgn(snr, 1_000_000, stream(11, int(snr)))
        p = float(ev.ook_theoretical_ber(snr))
        assert abs(errors / n - p) <= 3 * math.sqrt(p * (1 - p) / n)


class TestHamming:
    def test_zero_codeword(self):
        assert ev.hamming74_encode(np.zeros(4, dtype=int)).tolist() == [0] * 7

    def test_single_errors_corrected(self):
        for m in range(16):
            data = np.array([(m >> i) & 1 for i in range(4)])
            code = ev.hamming74_encode(data)
            assert np.array_equal(ev.hamming74_decode(code), data)
            for pos in range(7):
                bad = code.copy()
                bad[pos] ^= 1
                assert np.array_equal(ev.hamming74_decode(bad), data)

    def test_length_checks(self):
        with pytest.raises(ValueError):
            ev.hamming74_encode(np.zeros(5, dtype=int))
        with pytest.raises(ValueError):
            ev.hamming74_decode(np.zeros(8, dtype=int))

    def test_expected_ber_matches_independent_enumeration(self):
        mean, _ = hamming_error_moments(0.01)
        assert ev.hamming74_bsc_expected_ber(0.01) == pytest.approx(mean / 4, rel=1e-12)

    def test_monte_carlo(self):
        n = 200_000
        errors, bits = ev.hamming74_bsc_simulate(0.01, n, stream(3, 0))
        mean, var = hamming_error_moments(0.01)
        assert abs(errors / bits - mean / 4) <= 3 * math.sqrt(var / n) / 4

    def test_baseline_curves(self):
        ook = ev.baseline_curve("ook", [0.0, 10.0], 128 * 50, 0, 0.0045)
        ham = ev.baseline_curve("hamming74", [0.0, 10.0], 128 * 50, 0, 0.0045)
        assert ook.records[1].ber < ook.records[0].ber
        assert ham.records[1].ber < ham.records[0].ber
        with pytest.raises(ValueError):
            ev.baseline_curve("ldpc", [0.0], 128, 0, 1.0)


class TestImages:
    def test_psnr(self):
        img = np.full((2, 2, 3), 9, dtype=np.uint8)
        assert ev.psnr(img, img) == math.inf
        assert ev.psnr(np.zeros((1, 1)), np.full((1, 1), 255.0)) == pytest.approx(0.0, abs=1e-12)
        assert ev.psnr(np.zeros((1, 1)), np.full((1, 1), 16.0)) == pytest.approx(PSNR_16_LEVELS, rel=1e-10)
        with pytest.raises(ValueError):
            ev.psnr(np.zeros((1, 2)), np.zeros((2, 1)))

    def test_bit_order(self):
        img = np.array([[[0x80, 0x01, 0xFF]]], dtype=np.uint8)
        bits = ev.image_to_bits(img)
        assert bits[:8].tolist() == [1, 0, 0, 0, 0, 0, 0, 0]
        assert bits[8:16].tolist() == [0, 0, 0, 0, 0, 0, 0, 1]

    @pytest.mark.parametrize("shape", [(4, 4, 3), (5, 7, 3), (16, 32, 3)])
    def test_pad_truncate_identity(self, shape):
        img = np.random.default_rng(0).integers(0, 256, shape, dtype=np.uint8)
        raw = ev.image_to_bits(img)
        padded = ev.pad_bits(raw, 128)
        assert padded.size % 128 == 0 and np.all(padded[raw.size:] == 0)
        assert np.array_equal(ev.bits_to_image(padded[: raw.size], shape), img)

    @given(st.integers(1, 9), st.integers(1, 9))
    def test_perfect_noiseless_pipeline(self, rows, cols):
        img = np.random.default_rng(rows * 10 + cols).integers(0, 256, (rows, cols, 3), dtype=np.uint8)
        job = ev.image_pipeline(img, ev.PerfectCodec(), 0.0, 0, 1.0, noiseless=True)
        assert job.bit_errors == 0 and job.psnr_db == math.inf
        assert np.array_equal(job.reconstructed, img)
        assert job.padded_bits.size % 128 == 0

    def test_ppm_roundtrip(self, tmp_path):
        img = np.random.default_rng(1).integers(0, 256, (3, 5, 3), dtype=np.uint8)
        ev.write_ppm(tmp_path / "a.ppm", img)
        assert np.array_equal(ev.read_ppm(tmp_path / "a.ppm"), img)

    def test_ppm_header_comment(self, tmp_path):
        p = tmp_path / "c.ppm"
        p.write_bytes(b"P6\n# made by hand\n2 1\n255\n" + bytes(range(6)))
        assert ev.read_ppm(p).reshape(-1).tolist() == list(range(6))

    def test_ppm_errors(self, tmp_path):
        bad = tmp_path / "bad.ppm"
        bad.write_bytes(b"P3\n1 1\n255\n0 0 0\n")
        with pytest.raises(ValueError):
            ev.read_ppm(bad)
        bad.write_bytes(b"P6\n2 2\n255\n\x00")
        with pytest.raises(ValueError):
            ev.read_ppm(bad)
        with pytest.raises(OSError):
            ev.read_ppm(tmp_path / "missing.ppm")

    def test_noisy_pipeline_dims(self, small_ae):
        P, cfg = small_ae
        img = np.random.default_rng(2).integers(0, 256, (3, 3, 3), dtype=np.uint8)
        job = ev.image_pipeline(img, ev.AECodec(P, cfg), 0.0, 0, 0.0045)
        assert job.reconstructed.shape == img.shape and np.isfinite(job.psnr_db)


class TestTiming:
    def test_fields(self, small_ae):
        P, cfg = small_ae
        rep = ev.timing(ev.AECodec(P, cfg), n_bits=cfg.N * 64, mean_h=0.0045)
        assert set(rep) == {"n_bits", "seconds", "avg_active_layers", "bits_per_second"}
        assert all(math.isfinite(v) and v > 0 for v in rep.values())
        assert rep["avg_active_layers"] == 8.0

    def test_fewer_layers_not_slower(self):
        cfg = ModelConfig()
        P = init_params(cfg, stream(0, 0))
        space = ActionSpace(4)
        full = ev.AECodec(P, cfg)
        small = ev.AECodec(P, cfg, fixed_q(space, space.index(LayerMask(1, 1))), space)
        t_full = ev.timing(full, n_bits=128 * 64, mean_h=0.0045, repeats=3)["seconds"]
        t_small = ev.timing(small, n_bits=128 * 64, mean_h=0.0045, repeats=3)["seconds"]
        assert t_small <= 1.05 * t_full

    def test_linear_scaling(self):
        cfg = ModelConfig()
        codec = ev.AECodec(init_params(cfg, stream(0, 0)), cfg)
        t1 = ev.timing(codec, n_bits=128 * 128, mean_h=0.0045, repeats=3)["seconds"]
        t2 = ev.timing(codec, n_bits=128 * 256, mean_h=0.0045, repeats=3)["seconds"]
        assert 0.8 * 2 <= t2 / t1 <= 1.2 * 2
