"""Monte Carlo evaluation: BER curves, classic baselines, timing, images.

Block ``i`` of an evaluation always draws its bits, environment, fading and
unit noise from the stream ``(seed, EVAL + i)``. Blocks are grouped into
fixed-size chunks; chunks may run on worker threads and are merged by index,
so every count is independent of the number of workers. The same blocks are
reused at every SNR point (only the transmit amplitude changes).
"""

from __future__ import annotations

import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Protocol, Sequence

import numpy as np

from . import channel as ch
from .dqn import ActionSpace, DeploySelector
from .model import LinkBudget, ModelConfig, forward_end_to_end
from .numerics import rng as rngmod
from .numerics.special import gaussian_q
from .train import link_budget, normalize_env

CSV_COLUMNS = ("snr_db", "ber", "avg_active_layers", "bits", "errors", "mean_mse", "seed")
DEFAULT_SNR_GRID = (0.0, 2.0, 4.0, 6.0, 8.0, 10.0)
CHUNK_BLOCKS = 32


# ---------------------------------------------------------------------------
# codecs


class Codec(Protocol):
    N: int
    K: int

    def transmit(self, bits, states, h, noise, link: LinkBudget) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Return (bit probabilities, active layers per block, per-block MSE)."""


class PerfectCodec:
    """Returns the transmitted bits untouched; for harness sanity checks."""

    def __init__(self, N: int = 128):
        self.N = self.K = N

    def transmit(self, bits, states, h, noise, link):
        z = np.zeros(len(bits))
        return bits.astype(np.float64), z, z.copy()


class RandomCodec:
    """Guesses every bit; the guess is the sign of the block's own unit noise."""

    def __init__(self, N: int = 128):
        self.N = self.K = N

    def transmit(self, bits, states, h, noise, link):
        probs = (noise > 0).astype(np.float64)
        err = probs - bits
        return probs, np.zeros(len(bits)), np.mean(err * err, axis=1)


class AECodec:
    """Trained autoencoder, full depth or with masks chosen by a Q-network.

    A fresh deployment selector is used for each chunk so that caching never
    crosses chunk boundaries.
    """

    def __init__(self, params, cfg: ModelConfig, Q=None, space: ActionSpace | None = None,
                 threshold: float = 0.1):
        self.params = params
        self.cfg = cfg
        self.Q = Q
        self.space = space or ActionSpace(cfg.layers)
        self.threshold = threshold
        self.N, self.K = cfg.N, cfg.K

    def masks_for(self, states) -> list:
        if self.Q is None:
            return [None] * len(states)
        sel = DeploySelector(self.Q, self.space, self.threshold)
        return [sel.select(s) for s in states]

    def transmit(self, bits, states, h, noise, link, masks=None):
        n = len(bits)
        masks = self.masks_for(states) if masks is None else masks
        probs = np.empty((n, self.cfg.N))
        mse = np.empty(n)
        active = np.empty(n)
        groups: dict = {}
        for i, m in enumerate(masks):
            groups.setdefault(None if m is None else (m.enc, m.dec), []).append(i)
        for key in sorted(groups, key=lambda k: (-1, -1) if k is None else k):
            idx = np.array(groups[key])
            m = masks[idx[0]]
            enc = None if m is None else m.enc_layers
            dec = None if m is None else m.dec_layers
            res = forward_end_to_end(self.params, self.cfg, bits[idx], states[idx], h[idx], link, enc, dec,
                                     noise=noise[idx])
            probs[idx] = res.probs.data
            mse[idx] = res.block_mse
            active[idx] = 2 * self.cfg.layers if m is None else m.active
        return probs, active, mse


# ---------------------------------------------------------------------------
# block data


@dataclass
class Blocks:
    bits: np.ndarray
    states: np.ndarray
    h: np.ndarray
    noise: np.ndarray


def block_data(seed: int, start: int, count: int, N: int, K: int, consts: ch.ChannelConstants,
               namespace: int = rngmod.EVAL) -> Blocks:
    table = ch.turbulence_table(consts)
    bits = np.empty((count, N))
    noise = np.empty((count, K))
    envs = []
    h = np.empty(count)
    for j in range(count):
        g = rngmod.stream(seed, namespace + start + j)
        bits[j] = g.integers(0, 2, size=N)
        env = ch.sample_env(g)
        envs.append(env)
        h[j] = ch.sample_channel(g, env, consts, table).h
        noise[j] = g.standard_normal(K)
    return Blocks(bits, normalize_env(ch.EnvBatch.from_envs(envs)), h, noise)


# ---------------------------------------------------------------------------
# BER curves


@dataclass
class SnrRecord:
    snr_db: float
    bits: int
    errors: int
    avg_active_layers: float
    mean_mse: float
    seed: int
    wall_time_s: float = 0.0

    @property
    def ber(self) -> float:
        return self.errors / self.bits


@dataclass
class EvalReport:
    records: list[SnrRecord]
    metadata: dict = field(default_factory=dict)

    def to_csv(self) -> str:
        lines = []
        if "config_hash" in self.metadata:
            lines.append(f"# config_hash={self.metadata['config_hash']} seed={self.metadata.get('seed')}")
        lines.append(",".join(CSV_COLUMNS))
        for r in self.records:
            lines.append(f"{r.snr_db:g},{r.ber:.10g},{r.avg_active_layers:.6g},{r.bits},{r.errors},"
                         f"{r.mean_mse:.10g},{r.seed}")
        return "\n".join(lines) + "\n"

    def to_json_dict(self, wall_time: bool = False) -> dict:
        recs = []
        for r in self.records:
            d = {"snr_db": r.snr_db, "ber": r.ber, "avg_active_layers": r.avg_active_layers, "bits": r.bits,
                 "errors": r.errors, "mean_mse": r.mean_mse, "seed": r.seed}
            if wall_time:
                d["wall_time_s"] = r.wall_time_s
            recs.append(d)
        return {"metadata": self.metadata, "records": recs}


def _run_chunk(codec, seed, start, count, snr_links, consts):
    b = block_data(seed, start, count, codec.N, codec.K, consts)
    masks = codec.masks_for(b.states) if isinstance(codec, AECodec) else None
    out = []
    for link in snr_links:
        if masks is not None:
            probs, active, mse = codec.transmit(b.bits, b.states, b.h, b.noise, link, masks=masks)
        else:
            probs, active, mse = codec.transmit(b.bits, b.states, b.h, b.noise, link)
        errors = int(np.count_nonzero((probs > 0.5) != (b.bits > 0.5)))
        out.append((errors, float(active.sum()), float(mse.sum())))
    return out


def ber_curve(
    codec,
    snr_grid: Sequence[float],
    n_bits: int,
    seed: int,
    mean_h: float,
    consts: ch.ChannelConstants | None = None,
    workers: int = 1,
    chunk_blocks: int = CHUNK_BLOCKS,
) -> EvalReport:
    """Exact error counts per SNR point over ``n_bits / N`` fresh blocks."""
    consts = consts or ch.ChannelConstants()
    if n_bits <= 0 or n_bits % codec.N:
        raise ValueError(f"n_bits must be a positive multiple of {codec.N}")
    n_blocks = n_bits // codec.N
    links = [link_budget(s, mean_h, consts) for s in snr_grid]
    starts = list(range(0, n_blocks, chunk_blocks))
    t0 = time.perf_counter()

    def job(start):
        return _run_chunk(codec, seed, start, min(chunk_blocks, n_blocks - start), links, consts)

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as ex:
            results = list(ex.map(job, starts))
    else:
        results = [job(s) for s in starts]
    wall = time.perf_counter() - t0
    records = []
    for k, snr in enumerate(snr_grid):
        errors = sum(r[k][0] for r in results)
        active = sum(r[k][1] for r in results)
        mse = sum(r[k][2] for r in results)
        records.append(SnrRecord(float(snr), n_bits, errors, active / n_blocks, mse / n_blocks, seed,
                                 wall / len(snr_grid)))
    meta = {"snr_convention": "SNR_dB = 20*log10(amplitude*E[h]/sigma_w)", "mean_h": mean_h,
            "sigma_w": consts.sigma_w, "amplitudes": [l.amplitude for l in links], "seed": seed}
    return EvalReport(records, meta)


# ---------------------------------------------------------------------------
# OOK reference


def ook_theoretical_ber(snr_db):
    """On-off keying over AWGN with mid-level threshold: ``Q(sqrt(SNR_lin) / 2)``.

    With SNR_dB = 20 log10(A / sigma) the on level is A and the noise std is
    sigma, so sqrt(SNR_lin) = A / sigma.
    """
    snr = np.asarray(snr_db, dtype=np.float64)
    return gaussian_q(np.sqrt(10.0 ** (snr / 10.0)) / 2.0)


def simulate_ook_awgn(snr_db: float, n_bits: int, rng: np.random.Generator) -> tuple[int, int]:
    """Unit noise, on level ``10**(snr/20)``, threshold at half the on level."""
    amp = 10.0 ** (snr_db / 20.0)
    bits = rng.integers(0, 2, n_bits)
    y = amp * bits + rng.standard_normal(n_bits)
    return int(np.count_nonzero((y > amp / 2) != bits)), n_bits


# ---------------------------------------------------------------------------
# Hamming(7,4), systematic: codeword = d1 d2 d3 d4 p1 p2 p3

_P = np.array([[1, 1, 0], [1, 0, 1], [0, 1, 1], [1, 1, 1]], dtype=np.int64)
HAMMING_G = np.hstack([np.eye(4, dtype=np.int64), _P])
HAMMING_H = np.hstack([_P.T, np.eye(3, dtype=np.int64)])
# syndrome (as integer s0*4 + s1*2 + s2) -> error position, -1 for none
_SYNDROME_POS = np.full(8, -1, dtype=np.int64)
for _pos in range(7):
    _s = HAMMING_H[:, _pos]
    _SYNDROME_POS[_s[0] * 4 + _s[1] * 2 + _s[2]] = _pos


def hamming74_encode(bits) -> np.ndarray:
    b = np.asarray(bits, dtype=np.int64).reshape(-1)
    if b.size % 4:
        raise ValueError("Hamming(7,4) input length must be a multiple of 4")
    return (b.reshape(-1, 4) @ HAMMING_G % 2).reshape(-1)


def hamming74_decode(code) -> np.ndarray:
    """Hard-decision syndrome decoding; corrects one error per codeword."""
    c = np.asarray(code, dtype=np.int64).reshape(-1)
    if c.size % 7:
        raise ValueError("Hamming(7,4) codeword stream length must be a multiple of 7")
    words = c.reshape(-1, 7).copy()
    s = words @ HAMMING_H.T % 2
    pos = _SYNDROME_POS[s[:, 0] * 4 + s[:, 1] * 2 + s[:, 2]]
    rows = np.nonzero(pos >= 0)[0]
    words[rows, pos[rows]] ^= 1
    return words[:, :4].reshape(-1)


def hamming74_bsc_expected_ber(p: float) -> float:
    """Exact decoded bit error rate over BSC(p), enumerating all 2^7 patterns.

    The code is linear and the decoder is syndrome-based, so the all-zero
    codeword is representative.
    """
    total = 0.0
    zero = np.zeros(7, dtype=np.int64)
    for pattern in range(128):
        e = np.array([(pattern >> i) & 1 for i in range(7)], dtype=np.int64)
        w = int(e.sum())
        prob = p**w * (1 - p) ** (7 - w)
        data_errors = int(hamming74_decode(zero ^ e).sum())
        total += prob * data_errors / 4.0
    return total


def hamming74_bsc_simulate(p: float, n_codewords: int, rng: np.random.Generator) -> tuple[int, int]:
    data = rng.integers(0, 2, 4 * n_codewords)
    code = hamming74_encode(data)
    flips = (rng.random(code.size) < p).astype(np.int64)
    dec = hamming74_decode(code ^ flips)
    return int(np.count_nonzero(dec != data)), data.size


def baseline_curve(kind: str, snr_grid: Sequence[float], n_bits: int, seed: int, mean_h: float,
                   consts: ch.ChannelConstants | None = None) -> EvalReport:
    """Uncoded OOK or hard-decision Hamming(7,4)+OOK over the fading channel.

    The receiver knows the block's h and thresholds at ``amplitude * h / 2``.
    Each 128-bit block becomes one block of symbols (224 for Hamming) under
    a single channel draw; the symbol amplitude is the same as for the AE.
    """
    consts = consts or ch.ChannelConstants()
    if kind not in ("ook", "hamming74"):
        raise ValueError(f"unknown baseline {kind!r}")
    N = 128
    if n_bits <= 0 or n_bits % N:
        raise ValueError(f"n_bits must be a positive multiple of {N}")
    n_blocks = n_bits // N
    K = N if kind == "ook" else N * 7 // 4
    errors = np.zeros(len(snr_grid), dtype=np.int64)
    for start in range(0, n_blocks, CHUNK_BLOCKS):
        b = block_data(seed, start, min(CHUNK_BLOCKS, n_blocks - start), N, K, consts)
        tx = b.bits if kind == "ook" else hamming74_encode(b.bits).reshape(len(b.bits), K)
        for k, snr in enumerate(snr_grid):
            link = link_budget(snr, mean_h, consts)
            y = link.amplitude * b.h[:, None] * tx + link.sigma_w * b.noise
            hard = (y > link.amplitude * b.h[:, None] / 2).astype(np.int64)
            dec = hard if kind == "ook" else hamming74_decode(hard).reshape(len(b.bits), N)
            errors[k] += int(np.count_nonzero(dec != b.bits))
    recs = [SnrRecord(float(s), n_bits, int(e), 0.0, float("nan"), seed) for s, e in zip(snr_grid, errors)]
    return EvalReport(recs, {"baseline": kind, "mean_h": mean_h, "seed": seed})


# ---------------------------------------------------------------------------
# images

PSNR_IDENTICAL = math.inf


def psnr(a, b, max_value: float = 255.0) -> float:
    """Peak signal-to-noise ratio in dB; identical rasters give ``inf``."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"raster shapes differ: {a.shape} vs {b.shape}")
    mse = np.mean((a - b) ** 2)
    if mse == 0:
        return PSNR_IDENTICAL
    return 10.0 * math.log10(max_value**2 / mse)


def read_ppm(path) -> np.ndarray:
    """Binary PPM (P6, maxval 255) -> uint8 array (rows, cols, 3)."""
    with open(path, "rb") as f:
        data = f.read()
    tokens = []
    i = 0
    while len(tokens) < 4:
        while i < len(data) and data[i:i + 1].isspace():
            i += 1
        if data[i:i + 1] == b"#":
            while i < len(data) and data[i:i + 1] not in (b"\n", b"\r"):
                i += 1
            continue
        j = i
        while j < len(data) and not data[j:j + 1].isspace():
            j += 1
        if j == i:
            raise ValueError("truncated PPM header")
        tokens.append(data[i:j])
        i = j
    if tokens[0] != b"P6":
        raise ValueError("not a binary PPM (P6) file")
    w, h, maxval = (int(t) for t in tokens[1:])
    if maxval != 255:
        raise ValueError("only maxval 255 is supported")
    pixels = data[i + 1:i + 1 + w * h * 3]
    if len(pixels) != w * h * 3:
        raise ValueError("PPM pixel data is truncated")
    return np.frombuffer(pixels, dtype=np.uint8).reshape(h, w, 3).copy()


def write_ppm(path, image) -> None:
    img = np.asarray(image)
    if img.ndim != 3 or img.shape[2] != 3 or img.dtype != np.uint8:
        raise ValueError("expected an 8-bit RGB raster of shape (rows, cols, 3)")
    with open(path, "wb") as f:
        f.write(b"P6\n%d %d\n255\n" % (img.shape[1], img.shape[0]))
        f.write(img.tobytes())


def image_to_bits(image) -> np.ndarray:
    """Row-major pixels, R then G then B, each byte most significant bit first."""
    return np.unpackbits(np.asarray(image, dtype=np.uint8).reshape(-1))


def bits_to_image(bits, shape) -> np.ndarray:
    return np.packbits(np.asarray(bits, dtype=np.uint8)).reshape(shape)


def pad_bits(bits, N: int) -> np.ndarray:
    bits = np.asarray(bits, dtype=np.uint8)
    pad = (-bits.size) % N
    return np.concatenate([bits, np.zeros(pad, dtype=np.uint8)])


@dataclass
class ImageJob:
    source: np.ndarray
    padded_bits: np.ndarray
    reconstructed: np.ndarray
    psnr_db: float
    bit_errors: int


def image_pipeline(image, codec, snr_db: float, seed: int, mean_h: float,
                   consts: ch.ChannelConstants | None = None, noiseless: bool = False) -> ImageJob:
    """Send an RGB raster through ``codec`` block by block and rebuild it.

    Every block gets its own environment and channel draw from the stream
    ``(seed, IMAGE + block)``. ``noiseless`` forces h = 1 and zero noise.
    """
    consts = consts or ch.ChannelConstants()
    image = np.asarray(image)
    if image.ndim != 3 or image.shape[2] != 3:
        raise ValueError("expected an RGB raster of shape (rows, cols, 3)")
    image = image.astype(np.uint8)
    raw = image_to_bits(image)
    padded = pad_bits(raw, codec.N)
    blocks = padded.reshape(-1, codec.N).astype(np.float64)
    if noiseless:
        link = LinkBudget(1.0, 0.0, 1.0)
    else:
        link = link_budget(snr_db, mean_h, consts)
    out = np.empty_like(blocks)
    for start in range(0, len(blocks), CHUNK_BLOCKS):
        count = min(CHUNK_BLOCKS, len(blocks) - start)
        b = block_data(seed, start, count, codec.N, codec.K, consts, namespace=rngmod.IMAGE)
        h = np.ones(count) if noiseless else b.h
        noise = np.zeros_like(b.noise) if noiseless else b.noise
        probs, _, _ = codec.transmit(blocks[start:start + count], b.states, h, noise, link)
        out[start:start + count] = probs > 0.5
    rx = out.reshape(-1).astype(np.uint8)[: raw.size]
    rebuilt = bits_to_image(rx, image.shape)
    return ImageJob(image, padded, rebuilt, psnr(image, rebuilt), int(np.count_nonzero(rx != raw)))


# ---------------------------------------------------------------------------
# timing


def timing(codec, n_bits: int = 200_000, seed: int = 0, mean_h: float = 1.0, snr_db: float = 10.0,
           consts: ch.ChannelConstants | None = None, repeats: int = 1) -> dict:
    """Wall-clock seconds to push ``n_bits`` through the codec (best of ``repeats``).

    Block data is generated beforehand and a one-chunk warm-up is excluded.
    """
    consts = consts or ch.ChannelConstants()
    n_blocks = -(-n_bits // codec.N)
    b = block_data(seed, 0, n_blocks, codec.N, codec.K, consts)
    link = link_budget(snr_db, mean_h, consts)
    w = min(CHUNK_BLOCKS, n_blocks)
    codec.transmit(b.bits[:w], b.states[:w], b.h[:w], b.noise[:w], link)
    best = math.inf
    layers = 0.0
    for _ in range(repeats):
        t0 = time.perf_counter()
        active_sum = 0.0
        for start in range(0, n_blocks, CHUNK_BLOCKS):
            sl = slice(start, start + CHUNK_BLOCKS)
            _, active, _ = codec.transmit(b.bits[sl], b.states[sl], b.h[sl], b.noise[sl], link)
            active_sum += float(active.sum())
        best = min(best, time.perf_counter() - t0)
        layers = active_sum / n_blocks
    return {"n_bits": n_blocks * codec.N, "seconds": best, "avg_active_layers": layers,
            "bits_per_second": n_blocks * codec.N / best}
