"""UAV free-space-optical fading channel.

The composite coefficient is ``h = h_l * h_a * h_p * h_aoa``:

* ``h_l``   Beer-Lambert attenuation with the Kim visibility model,
* ``h_a``   Malaga turbulence, sampled by inverse transform over a CDF table,
* ``h_p``   pointing loss with the modified-Rayleigh approximation,
* ``h_aoa`` on/off outage when the angle of arrival leaves the field of view.

Everything here is a pure function of an explicit ``numpy.random.Generator``.
"""

from __future__ import annotations

import functools
import math
from dataclasses import asdict, dataclass, field
from typing import Sequence

import numpy as np

from .numerics.special import bessel_k, erf

# Table II ranges
Z_RANGE = (1000.0, 5000.0)
VD_RANGE = (2.0, 13.0)
CN2_LEVELS = (5e-14, 1.7e-14, 5e-15, 4e-15)
SIGMA_S_RANGE = (0.01, 0.05)
SIGMA_A_RANGE = (0.002, 0.005)

COHERENCE_VARIANTS = ("standard_k", "paper_lambda")


class ChannelDomainError(ValueError):
    pass


@dataclass(frozen=True)
class EnvParams:
    Z: float
    V_d: float
    Cn2: float
    sigma_s: float
    sigma_a: float

    def as_array(self) -> np.ndarray:
        return np.array([self.Z, self.V_d, self.Cn2, self.sigma_s, self.sigma_a])

    def in_ranges(self) -> bool:
        return (
            Z_RANGE[0] <= self.Z <= Z_RANGE[1]
            and VD_RANGE[0] <= self.V_d <= VD_RANGE[1]
            and any(math.isclose(self.Cn2, c, rel_tol=1e-12) for c in CN2_LEVELS)
            and SIGMA_S_RANGE[0] <= self.sigma_s <= SIGMA_S_RANGE[1]
            and SIGMA_A_RANGE[0] <= self.sigma_a <= SIGMA_A_RANGE[1]
        )


@dataclass(frozen=True)
class EnvBatch:
    """Column-wise storage for many environments."""

    Z: np.ndarray
    V_d: np.ndarray
    Cn2: np.ndarray
    sigma_s: np.ndarray
    sigma_a: np.ndarray

    @classmethod
    def from_envs(cls, envs: Sequence[EnvParams]) -> "EnvBatch":
        cols = np.array([e.as_array() for e in envs], dtype=np.float64).reshape(-1, 5)
        return cls(*(cols[:, i].copy() for i in range(5)))

    def __len__(self) -> int:
        return self.Z.size

    def __getitem__(self, i: int) -> EnvParams:
        return EnvParams(float(self.Z[i]), float(self.V_d[i]), float(self.Cn2[i]),
                         float(self.sigma_s[i]), float(self.sigma_a[i]))

    def as_array(self) -> np.ndarray:
        return np.stack([self.Z, self.V_d, self.Cn2, self.sigma_s, self.sigma_a], axis=1)


@dataclass(frozen=True)
class ChannelConstants:
    eta_e: float = 0.5
    sigma_w2: float = 1e-10
    wavelength: float = 1550e-9
    r_a: float = 0.1
    w_oz: float = 2.0
    theta_fov: float = 0.020
    alpha: float = 8.2
    beta: int = 4
    b0: float = 0.1079
    rho_malaga: float = 0.596
    Omega: float = 1.3265
    phase_diff: float = math.pi / 2
    coherence_variant: str = "standard_k"

    def __post_init__(self):
        if int(self.beta) != self.beta or self.beta < 1:
            raise ChannelDomainError("beta must be a positive integer")
        for name in ("eta_e", "sigma_w2", "wavelength", "r_a", "w_oz", "theta_fov", "alpha", "b0", "Omega"):
            if not getattr(self, name) > 0:
                raise ChannelDomainError(f"{name} must be positive")
        if self.coherence_variant not in COHERENCE_VARIANTS:
            raise ChannelDomainError(f"unknown coherence variant {self.coherence_variant!r}")

    @property
    def sigma_w(self) -> float:
        return math.sqrt(self.sigma_w2)

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass(frozen=True)
class MalagaParams:
    A: float
    a_k: tuple[float, ...]
    Omega_prime: float
    b: float


@dataclass(frozen=True)
class PointingParams:
    w_z: float
    v: float
    A0: float
    w_zeq: float
    g: float


@dataclass
class ChannelDraw:
    """One realization per block; fields are scalars or equal-length arrays."""

    h_l: float | np.ndarray
    h_a: float | np.ndarray
    h_p: float | np.ndarray
    h_aoa: float | np.ndarray
    h: float | np.ndarray = field(init=False)

    def __post_init__(self):
        self.h = self.h_l * self.h_a * self.h_p * self.h_aoa


# ---------------------------------------------------------------------------
# deterministic pieces


def scattering_coefficient(V_d, wavelength: float = 1550e-9):
    """Kim-model extinction coefficient in 1/km for visibility ``V_d`` in km."""
    V = np.asarray(V_d, dtype=np.float64)
    if np.any(~(V > 0)):
        raise ChannelDomainError("visibility must be positive")
    q = np.select(
        [V > 50.0, V > 6.0, V > 1.0, V > 0.5],
        [1.6, 1.3, 0.16 * V + 0.34, V - 0.5],
        default=0.0,
    )
    xi = 3.91 / V * (wavelength * 1e9 / 550.0) ** (-q)
    return float(xi) if xi.ndim == 0 else xi


def atmospheric_attenuation(Z, xi):
    Z = np.asarray(Z, dtype=np.float64)
    xi = np.asarray(xi, dtype=np.float64)
    if np.any(Z < 0) or np.any(xi < 0):
        raise ChannelDomainError("distance and extinction must be non-negative")
    h = np.exp(-(Z / 1000.0) * xi)
    return float(h) if h.ndim == 0 else h


def rytov_variance(Cn2, wavelength, Z):
    k = 2 * np.pi / wavelength
    out = 1.23 * np.asarray(Cn2) * k ** (7 / 6) * np.asarray(Z, dtype=np.float64) ** (11 / 6)
    return float(out) if np.ndim(out) == 0 else out


def coherence_length(Cn2, wavelength, Z, formula_variant: str = "standard_k"):
    """Plane-wave coherence length ``(0.55 Cn2 s Z)^(-3/5)``.

    ``standard_k`` uses ``s = (2 pi / lambda)^2``; ``paper_lambda`` uses
    ``s = lambda^2`` as printed, which gives lengths of order 1e13 m.
    """
    if formula_variant == "standard_k":
        s = (2 * np.pi / wavelength) ** 2
    elif formula_variant == "paper_lambda":
        s = wavelength**2
    else:
        raise ChannelDomainError(f"unknown coherence variant {formula_variant!r}")
    out = (0.55 * np.asarray(Cn2) * s * np.asarray(Z, dtype=np.float64)) ** (-3 / 5)
    return float(out) if np.ndim(out) == 0 else out


def malaga_params(consts: ChannelConstants) -> MalagaParams:
    rho = consts.rho_malaga
    if not 0.0 <= rho <= 1.0:
        raise ChannelDomainError("Malaga coupling factor must lie in [0, 1]")
    alpha, beta, b0, Om = consts.alpha, int(consts.beta), consts.b0, consts.Omega
    cos_term = 0.0 if consts.phase_diff == math.pi / 2 else math.cos(consts.phase_diff)
    Op = Om + rho * 2 * b0 + 2 * math.sqrt(2 * b0 * Om * rho) * cos_term
    b = 2 * b0 * (1 - rho)
    A = (
        2 * alpha ** (alpha / 2)
        / (b ** (1 + alpha / 2) * math.gamma(alpha))
        * (b * beta / (b * beta + Op)) ** (beta + alpha / 2)
    )
    a_k = tuple(
        math.comb(beta - 1, k - 1)
        * (b * beta + Op) ** (1 - k / 2)
        / math.factorial(k - 1)
        * (Op / b) ** (k - 1)
        * (alpha / beta) ** (k / 2)
        for k in range(1, beta + 1)
    )
    return MalagaParams(A=A, a_k=a_k, Omega_prime=Op, b=b)


def malaga_pdf(h_a, params: MalagaParams, alpha: float, beta: int):
    """Malaga turbulence density; the power of ``h_a`` in term k is (alpha+k)/2 - 1."""
    h = np.asarray(h_a, dtype=np.float64)
    if np.any(~(h > 0)):
        raise ChannelDomainError("turbulence density defined for h_a > 0")
    arg = 2.0 * np.sqrt(alpha * beta * h / (params.b * beta + params.Omega_prime))
    total = np.zeros_like(h)
    for k in range(1, int(beta) + 1):
        total = total + params.a_k[k - 1] * h ** ((alpha + k) / 2 - 1) * bessel_k(alpha - k, arg)
    out = params.A * total
    return float(out) if out.ndim == 0 else out


def beam_width(Z, w_oz, wavelength, rho_c):
    theta = 1 + 2 * w_oz**2 / np.asarray(rho_c, dtype=np.float64) ** 2
    out = w_oz * np.sqrt(1 + theta * (wavelength * np.asarray(Z, dtype=np.float64) / (np.pi * w_oz**2)) ** 2)
    return float(out) if np.ndim(out) == 0 else out


def pointing_params(r_a: float, w_z: float, sigma_s: float) -> PointingParams:
    v = math.sqrt(math.pi / 2) * r_a / w_z
    ev = erf(v)
    w_zeq = math.sqrt(w_z**2 * math.sqrt(math.pi) * ev / (2 * v * math.exp(-v * v)))
    return PointingParams(w_z=w_z, v=v, A0=ev * ev, w_zeq=w_zeq, g=w_zeq / (2 * sigma_s))


def aoa_outage_prob(theta_fov, sigma_a):
    out = np.exp(-np.asarray(theta_fov) ** 2 / (2 * np.asarray(sigma_a, dtype=np.float64) ** 2))
    return float(out) if np.ndim(out) == 0 else out


def compute_sigma_a(theta_tx_p, theta_ty_p, sigma_txo, sigma_tyo) -> float:
    if sigma_txo <= 0 or sigma_tyo <= 0:
        raise ChannelDomainError("orientation standard deviations must be positive")
    var = (
        (3 * theta_tx_p**2 * sigma_txo**4 + 3 * theta_ty_p**2 * sigma_tyo**4 + sigma_txo**6 + sigma_tyo**6) / 2
    ) ** (1 / 3)
    return math.sqrt(var)


# ---------------------------------------------------------------------------
# turbulence CDF table

TABLE_NODES = 4096
TABLE_RANGE = (1e-6, 60.0)


@dataclass(frozen=True)
class TurbulenceTable:
    nodes: np.ndarray
    cdf: np.ndarray

    def __post_init__(self):
        if self.nodes.shape != self.cdf.shape or np.any(np.diff(self.cdf) < 0) or np.any(np.diff(self.nodes) <= 0):
            raise ChannelDomainError("turbulence CDF table must be monotone")

    def inverse(self, u):
        return np.interp(u, self.cdf, self.nodes)

    def evaluate(self, h):
        return np.interp(h, self.nodes, self.cdf, left=0.0, right=1.0)

    def mean(self) -> float:
        """Mean of the piecewise-linear distribution the sampler draws from."""
        dF = np.diff(self.cdf)
        mid = 0.5 * (self.nodes[1:] + self.nodes[:-1])
        return float(self.cdf[0] * self.nodes[0] + (dF * mid).sum())


def build_turbulence_table(
    consts: ChannelConstants, n_nodes: int = TABLE_NODES, h_range: tuple[float, float] = TABLE_RANGE
) -> TurbulenceTable:
    params = malaga_params(consts)
    nodes = np.geomspace(h_range[0], h_range[1], n_nodes)
    pdf = malaga_pdf(nodes, params, consts.alpha, int(consts.beta))
    # density is flat near 0, so the mass below the first node is pdf * h
    head = pdf[0] * nodes[0]
    cum = np.concatenate([[0.0], np.cumsum(0.5 * (pdf[1:] + pdf[:-1]) * np.diff(nodes))])
    cdf = (head + cum) / (head + cum[-1])
    return TurbulenceTable(nodes=nodes, cdf=cdf)


@functools.lru_cache(maxsize=8)
def turbulence_table(consts: ChannelConstants) -> TurbulenceTable:
    return build_turbulence_table(consts)


def sample_turbulence(rng: np.random.Generator, table: TurbulenceTable, size=None):
    return table.inverse(rng.random(size))


# ---------------------------------------------------------------------------
# samplers


def sample_pointing(rng: np.random.Generator, A0, g, size=None):
    A0 = np.asarray(A0, dtype=np.float64)
    g = np.asarray(g, dtype=np.float64)
    if np.any((A0 <= 0) | (A0 >= 1)) or np.any(g <= 0):
        raise ChannelDomainError("pointing sampler needs 0 < A0 < 1 and g > 0")
    u = 1.0 - rng.random(size if size is not None else np.broadcast(A0, g).shape)  # (0, 1]
    out = A0 * u ** (1.0 / (g * g))
    return float(out) if np.ndim(out) == 0 else out


def sample_aoa(rng: np.random.Generator, S, size=None):
    S = np.asarray(S, dtype=np.float64)
    if np.any((S < 0) | (S > 1)):
        raise ChannelDomainError("outage probability must lie in [0, 1]")
    u = rng.random(size if size is not None else S.shape)
    out = (u >= S).astype(np.float64)
    return float(out) if np.ndim(out) == 0 else out


def _as_batch(env) -> EnvBatch:
    if isinstance(env, EnvBatch):
        return env
    if isinstance(env, EnvParams):
        return EnvBatch.from_envs([env])
    return EnvBatch.from_envs(list(env))


def env_factors(env: EnvParams | EnvBatch | Sequence[EnvParams], consts: ChannelConstants):
    """Deterministic per-environment quantities: ``(h_l, A0, g, S)``, arrays."""
    batch = _as_batch(env)
    Z, V, Cn2, ss, sa = batch.Z, batch.V_d, batch.Cn2, batch.sigma_s, batch.sigma_a
    h_l = np.atleast_1d(atmospheric_attenuation(Z, scattering_coefficient(V, consts.wavelength)))
    rho_c = coherence_length(Cn2, consts.wavelength, Z, consts.coherence_variant)
    w_z = np.atleast_1d(beam_width(Z, consts.w_oz, consts.wavelength, rho_c))
    v = math.sqrt(math.pi / 2) * consts.r_a / w_z
    ev = erf(v)
    A0 = ev * ev
    w_zeq = np.sqrt(w_z**2 * math.sqrt(math.pi) * ev / (2 * v * np.exp(-v * v)))
    g = w_zeq / (2 * ss)
    S = np.atleast_1d(aoa_outage_prob(consts.theta_fov, sa))
    return h_l, A0, g, S


def sample_channel(
    rng: np.random.Generator,
    env: EnvParams | EnvBatch | Sequence[EnvParams],
    consts: ChannelConstants,
    table: TurbulenceTable | None = None,
) -> ChannelDraw:
    """Draw the composite fading for one env (scalars) or many envs (arrays).

    Draw order is all h_a, then all h_p, then all h_aoa.
    """
    table = turbulence_table(consts) if table is None else table
    h_l, A0, g, S = env_factors(env, consts)
    n = h_l.size
    h_a = sample_turbulence(rng, table, n)
    h_p = np.atleast_1d(sample_pointing(rng, A0, g, n))
    h_aoa = np.atleast_1d(sample_aoa(rng, S, n))
    if isinstance(env, EnvParams):
        return ChannelDraw(float(h_l[0]), float(h_a[0]), float(h_p[0]), float(h_aoa[0]))
    return ChannelDraw(h_l, h_a, h_p, h_aoa)


def apply_channel(x, h, amplitude: float, sigma_w: float, rng: np.random.Generator):
    """Received intensity ``amplitude * h * x + w`` with white Gaussian ``w``.

    ``h`` is one coefficient per block; for a ``(blocks, K)`` input pass a
    length-``blocks`` array.
    """
    x = np.asarray(x, dtype=np.float64)
    h = np.asarray(h, dtype=np.float64)
    if h.ndim == 1 and x.ndim == 2:
        h = h[:, None]
    w = sigma_w * rng.standard_normal(x.shape)
    return amplitude * h * x + w


def sample_env(rng: np.random.Generator) -> EnvParams:
    return EnvParams(
        Z=float(rng.uniform(*Z_RANGE)),
        V_d=float(rng.uniform(*VD_RANGE)),
        Cn2=float(CN2_LEVELS[int(rng.integers(len(CN2_LEVELS)))]),
        sigma_s=float(rng.uniform(*SIGMA_S_RANGE)),
        sigma_a=float(rng.uniform(*SIGMA_A_RANGE)),
    )


# ---------------------------------------------------------------------------
# SNR convention: SNR_dB = 20 log10(amplitude * E[h] / sigma_w)

CALIBRATION_DRAWS = 100_000


def sample_envs(rng: np.random.Generator, n: int) -> EnvBatch:
    return EnvBatch(
        Z=rng.uniform(*Z_RANGE, n),
        V_d=rng.uniform(*VD_RANGE, n),
        Cn2=np.asarray(CN2_LEVELS)[rng.integers(len(CN2_LEVELS), size=n)],
        sigma_s=rng.uniform(*SIGMA_S_RANGE, n),
        sigma_a=rng.uniform(*SIGMA_A_RANGE, n),
    )


def calibrate_mean_h(rng: np.random.Generator, consts: ChannelConstants, n: int = CALIBRATION_DRAWS) -> float:
    """Monte Carlo estimate of E[h] over the environment distribution."""
    return float(np.mean(sample_channel(rng, sample_envs(rng, n), consts).h))


def amplitude_for_snr(snr_db: float, mean_h: float, sigma_w: float) -> float:
    return sigma_w * 10.0 ** (snr_db / 20.0) / mean_h


def snr_db(amplitude: float, mean_h: float, sigma_w: float) -> float:
    return 20.0 * math.log10(amplitude * mean_h / sigma_w)
