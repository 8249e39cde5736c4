"""Environment-conditioned transformer autoencoder with per-layer masking.

Signal path: bits -> tokens (T x d_in) -> linear embedding + positional table
-> encoder stack -> sigmoid intensities -> channel -> decoder input head ->
decoder stack -> sigmoid bit probabilities. Every layer attends to itself and
then, through cross-attention, to a single environment token.

A layer that is not in the active set is an identity map; the forward simply
skips it.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass
from typing import Mapping, Sequence

import numpy as np

from .numerics import autodiff as ad
from .numerics.autodiff import Tensor
from .numerics.optim import ParamStore

STACKS = ("enc", "dec")


@dataclass(frozen=True)
class ModelConfig:
    T: int = 16
    d: int = 32
    heads: int = 4
    layers: int = 4
    d_in: int = 8
    env_dim: int = 5
    ffn_mult: int = 4
    ln_eps: float = 1e-5
    use_pos: bool = True
    # False reproduces the "no env" ablation: the environment vector is zeroed
    env_input: bool = True
    hard_transmit: bool = False

    def __post_init__(self):
        for name in ("T", "d", "heads", "layers", "d_in", "env_dim", "ffn_mult"):
            if getattr(self, name) <= 0:
                raise ValueError(f"model.{name} must be positive")
        if self.d % self.heads:
            raise ValueError("model.d must be divisible by model.heads")

    @property
    def N(self) -> int:
        return self.T * self.d_in

    @property
    def K(self) -> int:
        return self.T * self.d_in

    @property
    def d_k(self) -> int:
        return self.d // self.heads

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass(frozen=True)
class LayerMask:
    """Active encoder/decoder layers as bitsets (bit l = layer l)."""

    enc: int
    dec: int
    layers: int = 4

    def __post_init__(self):
        top = 1 << self.layers
        if not (0 < self.enc < top and 0 < self.dec < top):
            raise ValueError(f"layer masks must be non-empty subsets of {self.layers} layers")

    @classmethod
    def full(cls, layers: int = 4) -> "LayerMask":
        full = (1 << layers) - 1
        return cls(full, full, layers)

    @staticmethod
    def _bits(mask: int, layers: int) -> list[int]:
        return [l for l in range(layers) if mask >> l & 1]

    @property
    def enc_layers(self) -> list[int]:
        return self._bits(self.enc, self.layers)

    @property
    def dec_layers(self) -> list[int]:
        return self._bits(self.dec, self.layers)

    @property
    def active(self) -> int:
        return bin(self.enc).count("1") + bin(self.dec).count("1")

    def __str__(self) -> str:
        return f"enc={self.enc_layers} dec={self.dec_layers}"


@dataclass(frozen=True)
class LinkBudget:
    """Transmit amplitude (eta_e * P_t), noise std and the E[h] used for scaling."""

    amplitude: float
    sigma_w: float
    mean_h: float

    @property
    def rx_scale(self) -> float:
        return 1.0 / (self.amplitude * self.mean_h)


# ---------------------------------------------------------------------------
# parameters


def _layer_shapes(cfg: ModelConfig) -> dict[str, tuple[int, int]]:
    d, f = cfg.d, cfg.ffn_mult * cfg.d
    shapes = {}
    for w in ("Wq", "Wk", "Wv", "Wo", "cWq", "cWk", "cWv", "cWo"):
        shapes[w] = (d, d)
    shapes.update({"ffn.W1": (d, f), "ffn.b1": (1, f), "ffn.W2": (f, d), "ffn.b2": (1, d)})
    for i in (1, 2, 3):
        shapes[f"ln{i}.g"] = (1, d)
        shapes[f"ln{i}.b"] = (1, d)
    return shapes


# output projections of every residual branch start small so each layer
# begins close to an identity map; post-LN stacks train far faster this way
RESIDUAL_INIT_SCALE = 0.1


def init_params(cfg: ModelConfig, rng: np.random.Generator) -> ParamStore:
    d, d_in = cfg.d, cfg.d_in

    def dense(fan_in, fan_out):
        return rng.normal(0.0, 1.0 / math.sqrt(fan_in), (fan_in, fan_out))

    P = ParamStore()
    P.add("sig.W", dense(d_in, d))
    P.add("sig.b", np.zeros((1, d)))
    P.add("pos", rng.normal(0.0, 0.1, (cfg.T, d)) if cfg.use_pos else np.zeros((cfg.T, d)))
    P.add("env.W1", dense(cfg.env_dim, d))
    P.add("env.b1", np.zeros((1, d)))
    P.add("env.W2", dense(d, d))
    P.add("env.b2", np.zeros((1, d)))
    for stack in STACKS:
        for l in range(cfg.layers):
            for name, shape in _layer_shapes(cfg).items():
                if name.endswith(".g"):
                    value = np.ones(shape)
                elif name.endswith((".b", ".b1", ".b2")):
                    value = np.zeros(shape)
                else:
                    value = dense(*shape)
                    if name in ("Wo", "cWo", "ffn.W2"):
                        value *= RESIDUAL_INIT_SCALE
                P.add(f"{stack}.{l}.{name}", value)
    P.add("enc.out.W", dense(d, d_in))
    P.add("enc.out.b", np.zeros((1, d_in)))
    P.add("dec.in.W", dense(d_in, d))
    P.add("dec.in.b", np.zeros((1, d)))
    P.add("dec.out.W", dense(d, d_in))
    P.add("dec.out.b", np.zeros((1, d_in)))
    return P


def subnetwork(P: ParamStore, cfg: ModelConfig, mask: LayerMask) -> tuple[ParamStore, list[int], list[int]]:
    """Copy of ``P`` holding only the layers active in ``mask``, renumbered 0.."""
    keep = {"enc": mask.enc_layers, "dec": mask.dec_layers}
    out = ParamStore()
    for name, t in P.items():
        parts = name.split(".")
        if parts[0] in STACKS and parts[1].isdigit():
            l = int(parts[1])
            if l not in keep[parts[0]]:
                continue
            parts[1] = str(keep[parts[0]].index(l))
            name = ".".join(parts)
        out.add(name, t.data.copy())
    return out, list(range(len(keep["enc"]))), list(range(len(keep["dec"])))


# ---------------------------------------------------------------------------
# building blocks


def embed_signal(P: Mapping[str, Tensor], cfg: ModelConfig, bits) -> Tensor:
    bits = np.asarray(bits, dtype=np.float64)
    if bits.ndim == 1:
        bits = bits[None, :]
    if bits.shape[-1] != cfg.N:
        raise ad.ShapeError(f"expected {cfg.N} bits per block, got {bits.shape[-1]}")
    X0 = bits.reshape(bits.shape[0], cfg.T, cfg.d_in)
    return ad.add(ad.add(ad.matmul(X0, P["sig.W"]), P["sig.b"]), P["pos"])


def embed_env(P: Mapping[str, Tensor], cfg: ModelConfig, state) -> Tensor:
    """Environment token, shape ``(batch, 1, d)``, from normalized states."""
    s = np.asarray(state, dtype=np.float64)
    if s.ndim == 1:
        s = s[None, :]
    if s.shape[-1] != cfg.env_dim:
        raise ad.ShapeError(f"expected {cfg.env_dim} environment features, got {s.shape[-1]}")
    if np.any(s < -0.1) or np.any(s > 1.1):
        raise ValueError("environment state must be normalized to [0, 1]")
    if not cfg.env_input:
        s = np.zeros_like(s)
    h = ad.relu(ad.add(ad.matmul(s, P["env.W1"]), P["env.b1"]))
    e = ad.add(ad.matmul(h, P["env.W2"]), P["env.b2"])
    return ad.reshape(e, (s.shape[0], 1, cfg.d))


def _split_heads(x: Tensor, heads: int) -> Tensor:
    B, T, d = x.shape
    return ad.transpose(ad.reshape(x, (B, T, heads, d // heads)), (0, 2, 1, 3))


def _merge_heads(x: Tensor) -> Tensor:
    B, H, T, dk = x.shape
    return ad.reshape(ad.transpose(x, (0, 2, 1, 3)), (B, T, H * dk))


def _attention(q_in: Tensor, kv_in: Tensor, Wq, Wk, Wv, Wo, heads: int, return_weights: bool):
    Q = _split_heads(ad.matmul(q_in, Wq), heads)
    K = _split_heads(ad.matmul(kv_in, Wk), heads)
    V = _split_heads(ad.matmul(kv_in, Wv), heads)
    dk = Q.shape[-1]
    A = ad.row_softmax(ad.matmul(Q, ad.transpose(K, (0, 1, 3, 2))), scale=1.0 / math.sqrt(dk))
    O = ad.matmul(_merge_heads(ad.matmul(A, V)), Wo)
    return (O, A) if return_weights else O


def self_attention(I: Tensor, P: Mapping[str, Tensor], prefix: str, cfg: ModelConfig, return_weights=False):
    return _attention(
        I, I, P[f"{prefix}.Wq"], P[f"{prefix}.Wk"], P[f"{prefix}.Wv"], P[f"{prefix}.Wo"], cfg.heads, return_weights
    )


def cross_attention(N_self: Tensor, E_in: Tensor, P: Mapping[str, Tensor], prefix: str, cfg: ModelConfig,
                    return_weights=False):
    """Queries from the signal, keys and values from the environment token(s).

    With a single environment token every softmax row is exactly [1.0], so
    each output row equals ``E_in W_Vc W_Oc``; that path is taken directly.
    """
    if E_in.shape[1] == 1:
        row = ad.matmul(ad.matmul(E_in, P[f"{prefix}.cWv"]), P[f"{prefix}.cWo"])
        B, T = N_self.shape[0], N_self.shape[1]
        out = _broadcast_rows(row, T)
        return (out, np.ones((B, cfg.heads, T, 1))) if return_weights else out
    return _attention(
        N_self, E_in, P[f"{prefix}.cWq"], P[f"{prefix}.cWk"], P[f"{prefix}.cWv"], P[f"{prefix}.cWo"],
        cfg.heads, return_weights,
    )


def _broadcast_rows(row: Tensor, T: int) -> Tensor:
    # (B, 1, d) -> (B, T, d); gradient sums over the copies
    return ad.add(row, np.zeros((row.shape[0], T, row.shape[2])))


def _ln(x: Tensor, P, prefix: str, i: int, eps: float) -> Tensor:
    return ad.layer_norm(x, P[f"{prefix}.ln{i}.g"], P[f"{prefix}.ln{i}.b"], eps)


def transformer_layer(I: Tensor, E_in: Tensor, P: Mapping[str, Tensor], prefix: str, cfg: ModelConfig) -> Tensor:
    N_self = _ln(ad.add(I, self_attention(I, P, prefix, cfg)), P, prefix, 1, cfg.ln_eps)
    # (B, 1, d) cross output broadcasts over the T rows inside the residual add
    N_cross = _ln(ad.add(N_self, _cross_term(N_self, E_in, P, prefix, cfg)), P, prefix, 2, cfg.ln_eps)
    hidden = ad.relu(ad.add(ad.matmul(N_cross, P[f"{prefix}.ffn.W1"]), P[f"{prefix}.ffn.b1"]))
    F = ad.add(ad.matmul(hidden, P[f"{prefix}.ffn.W2"]), P[f"{prefix}.ffn.b2"])
    return _ln(ad.add(N_cross, F), P, prefix, 3, cfg.ln_eps)


def _cross_term(N_self, E_in, P, prefix, cfg):
    if E_in.shape[1] == 1:
        return ad.matmul(ad.matmul(E_in, P[f"{prefix}.cWv"]), P[f"{prefix}.cWo"])
    return cross_attention(N_self, E_in, P, prefix, cfg)


def _run_stack(x: Tensor, E_in: Tensor, P, stack: str, active: Sequence[int], cfg: ModelConfig) -> Tensor:
    if not len(active):
        raise ValueError(f"{stack} stack needs at least one active layer")
    for l in active:
        x = transformer_layer(x, E_in, P, f"{stack}.{l}", cfg)
    return x


# ---------------------------------------------------------------------------
# encoder / decoder


def encode(P, cfg: ModelConfig, bits, E_in: Tensor, active: Sequence[int]) -> Tensor:
    """Transmit intensities in (0, 1), shape ``(batch, K)``."""
    x = _run_stack(embed_signal(P, cfg, bits), E_in, P, "enc", active, cfg)
    x = ad.sigmoid(ad.add(ad.matmul(x, P["enc.out.W"]), P["enc.out.b"]))
    x = ad.reshape(x, (x.shape[0], cfg.K))
    if cfg.hard_transmit:
        x = Tensor((x.data > 0.5).astype(np.float64))
    return x


def decode(P, cfg: ModelConfig, y, E_in: Tensor, active: Sequence[int], rx_scale: float = 1.0) -> Tensor:
    """Bit probabilities, shape ``(batch, N)``, from received samples ``y``."""
    y = ad.as_tensor(y)
    if y.shape[-1] != cfg.K:
        raise ad.ShapeError(f"expected {cfg.K} received samples, got {y.shape[-1]}")
    R = ad.reshape(ad.scale(y, rx_scale), (y.shape[0], cfg.T, cfg.d_in))
    R = ad.add(ad.add(ad.matmul(R, P["dec.in.W"]), P["dec.in.b"]), P["pos"])
    R = _run_stack(R, E_in, P, "dec", active, cfg)
    out = ad.sigmoid(ad.add(ad.matmul(R, P["dec.out.W"]), P["dec.out.b"]))
    return ad.reshape(out, (out.shape[0], cfg.N))


@dataclass
class ForwardResult:
    probs: Tensor
    bce: Tensor
    mse: Tensor
    block_mse: np.ndarray
    tx: Tensor


def forward_end_to_end(
    P,
    cfg: ModelConfig,
    bits,
    env_state,
    h,
    link: LinkBudget,
    enc_layers: Sequence[int] | None = None,
    dec_layers: Sequence[int] | None = None,
    noise: np.ndarray | None = None,
    rng: np.random.Generator | None = None,
) -> ForwardResult:
    """Encode, pass through ``y = amplitude * h * x + w`` and decode.

    ``h`` holds one coefficient per block. The noise ``w`` is either given as
    standard normals (scaled here by ``sigma_w``) or drawn from ``rng``.
    """
    bits = np.asarray(bits, dtype=np.float64)
    if bits.ndim == 1:
        bits = bits[None, :]
    enc_layers = range(cfg.layers) if enc_layers is None else enc_layers
    dec_layers = range(cfg.layers) if dec_layers is None else dec_layers
    E_in = embed_env(P, cfg, env_state)
    x = encode(P, cfg, bits, E_in, enc_layers)
    if noise is None:
        if rng is None:
            raise ValueError("forward_end_to_end needs either noise or rng")
        noise = rng.standard_normal(x.shape)
    gain = link.amplitude * np.asarray(h, dtype=np.float64).reshape(-1, 1)
    y = ad.add(ad.mul(x, gain), link.sigma_w * np.asarray(noise).reshape(x.shape))
    probs = decode(P, cfg, y, E_in, dec_layers, link.rx_scale)
    err = probs.data - bits
    return ForwardResult(
        probs=probs,
        bce=ad.bce_loss(probs, bits),
        mse=ad.mse_loss(probs, bits),
        block_mse=np.mean(err * err, axis=1),
        tx=x,
    )
