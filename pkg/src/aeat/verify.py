"""Statistical self-checks of the channel simulator.

Each check returns a dict with the measured value, its reference, the
tolerance, a ``passed`` flag and the runtime. Reference integrals use
``scipy.integrate.quad``, an adaptive routine independent of the trapezoid
table used by the sampler.
"""

from __future__ import annotations

import math
import time

import numpy as np
from scipy import integrate

from . import channel as ch
from .numerics import rng as rngmod

# reference geometry for the pointing and AoA checks
REF_Z = 1000.0
REF_SIGMA_S = 0.03
REF_SIGMA_A = 0.005


def _timed(fn):
    def wrapper(*args, **kwargs):
        t0 = time.perf_counter()
        out = fn(*args, **kwargs)
        out["runtime_s"] = time.perf_counter() - t0
        return out

    wrapper.__name__ = fn.__name__
    wrapper.__doc__ = fn.__doc__
    return wrapper


def _pdf(consts):
    params = ch.malaga_params(consts)
    return lambda h: ch.malaga_pdf(h, params, consts.alpha, int(consts.beta))


def pdf_moment(consts: ch.ChannelConstants, order: int = 0) -> float:
    """``int_0^inf h^order f(h) dh`` by adaptive quadrature."""
    f = _pdf(consts)
    g = lambda h: h**order * f(h) if h > 0 else 0.0  # noqa: E731
    # split where the density has its bulk and its tail
    pieces = [(0.0, 0.5), (0.5, 2.0), (2.0, 8.0), (8.0, 60.0), (60.0, np.inf)]
    return sum(integrate.quad(g, a, b, limit=200, epsabs=1e-13, epsrel=1e-11)[0] for a, b in pieces)


@_timed
def check_pdf_normalization(consts: ch.ChannelConstants, tol: float = 1e-3) -> dict:
    total = pdf_moment(consts, 0)
    return {"name": "pdf_normalization", "value": total, "reference": 1.0, "tolerance": tol,
            "passed": abs(total - 1.0) <= tol}


def ks_statistic(samples: np.ndarray, cdf) -> float:
    x = np.sort(samples)
    n = x.size
    F = cdf(x)
    i = np.arange(1, n + 1)
    return float(max(np.max(i / n - F), np.max(F - (i - 1) / n)))


@_timed
def check_turbulence_sampler(consts: ch.ChannelConstants, seed: int, n: int = 1_000_000,
                             ks_tol: float = 0.005, mean_rel_tol: float = 0.005) -> dict:
    table = ch.turbulence_table(consts)
    s = ch.sample_turbulence(rngmod.stream(seed, rngmod.VERIFY + 1), table, n)
    ks = ks_statistic(s, table.evaluate)
    ref_mean = pdf_moment(consts, 1)
    rel = abs(s.mean() - ref_mean) / ref_mean
    return {"name": "turbulence_sampler", "ks": ks, "ks_tolerance": ks_tol, "sample_mean": float(s.mean()),
            "quadrature_mean": ref_mean, "mean_rel_error": rel, "mean_tolerance": mean_rel_tol,
            "passed": ks < ks_tol and rel < mean_rel_tol}


def reference_pointing(consts: ch.ChannelConstants, Z: float = REF_Z, sigma_s: float = REF_SIGMA_S):
    rho = ch.coherence_length(ch.CN2_LEVELS[0], consts.wavelength, Z, consts.coherence_variant)
    w_z = ch.beam_width(Z, consts.w_oz, consts.wavelength, rho)
    return ch.pointing_params(consts.r_a, w_z, sigma_s)


@_timed
def check_pointing_sampler(consts: ch.ChannelConstants, seed: int, n: int = 1_000_000,
                           mean_rel_tol: float = 0.005, cdf_tol: float = 1e-3) -> dict:
    pp = reference_pointing(consts)
    s = ch.sample_pointing(rngmod.stream(seed, rngmod.VERIFY + 2), pp.A0, pp.g, n)
    g2 = pp.g**2
    ref_mean = pp.A0 * g2 / (g2 + 1)
    rel = abs(s.mean() - ref_mean) / ref_mean
    cdf_err = {}
    for frac in (0.25, 0.5, 0.75):
        emp = float(np.mean(s <= frac * pp.A0))
        cdf_err[str(frac)] = abs(emp - frac**g2)
    return {"name": "pointing_sampler", "A0": pp.A0, "g": pp.g, "sample_mean": float(s.mean()),
            "reference_mean": ref_mean, "mean_rel_error": rel, "mean_tolerance": mean_rel_tol,
            "cdf_abs_errors": cdf_err, "cdf_tolerance": cdf_tol,
            "passed": rel < mean_rel_tol and max(cdf_err.values()) < cdf_tol}


@_timed
def check_aoa_outage(consts: ch.ChannelConstants, seed: int, n: int = 10_000_000,
                     sigma_a: float = REF_SIGMA_A) -> dict:
    S = ch.aoa_outage_prob(consts.theta_fov, sigma_a)
    g = rngmod.stream(seed, rngmod.VERIFY + 3)
    zeros = 0
    step = 1_000_000
    for start in range(0, n, step):
        zeros += int(np.count_nonzero(ch.sample_aoa(g, S, min(step, n - start)) == 0))
    freq = zeros / n
    sigma = math.sqrt(S * (1 - S) / n)
    return {"name": "aoa_outage", "S": S, "frequency": freq, "binomial_sigma": sigma,
            "z_score": (freq - S) / sigma, "passed": abs(freq - S) <= 3 * sigma}


@_timed
def check_moment_factorization(consts: ch.ChannelConstants, seed: int, n: int = 1_000_000,
                               rel_tol: float = 0.01) -> dict:
    """E[h] for one fixed env equals the product of the factor means."""
    env = ch.EnvParams(Z=2000.0, V_d=8.0, Cn2=1.7e-14, sigma_s=0.03, sigma_a=0.005)
    envs = ch.EnvBatch.from_envs([env]).as_array().repeat(n, axis=0)
    batch = ch.EnvBatch(*(envs[:, i] for i in range(5)))
    d = ch.sample_channel(rngmod.stream(seed, rngmod.VERIFY + 4), batch, consts)
    prod = float(np.mean(d.h_l) * np.mean(d.h_a) * np.mean(d.h_p) * np.mean(d.h_aoa))
    rel = abs(float(np.mean(d.h)) - prod) / prod
    return {"name": "moment_factorization", "mean_h": float(np.mean(d.h)), "product_of_means": prod,
            "rel_error": rel, "tolerance": rel_tol, "passed": rel < rel_tol}


@_timed
def check_env_sampler(seed: int, n: int = 100_000) -> dict:
    b = ch.sample_envs(rngmod.stream(seed, rngmod.VERIFY + 5), n)
    inside = all(b[i].in_ranges() for i in range(0, n, max(1, n // 1000)))
    inside = inside and bool(
        np.all((b.Z >= ch.Z_RANGE[0]) & (b.Z <= ch.Z_RANGE[1]))
        and np.all((b.V_d >= ch.VD_RANGE[0]) & (b.V_d <= ch.VD_RANGE[1]))
        and np.all(np.isin(b.Cn2, ch.CN2_LEVELS))
        and np.all((b.sigma_s >= ch.SIGMA_S_RANGE[0]) & (b.sigma_s <= ch.SIGMA_S_RANGE[1]))
        and np.all((b.sigma_a >= ch.SIGMA_A_RANGE[0]) & (b.sigma_a <= ch.SIGMA_A_RANGE[1]))
    )
    return {"name": "env_sampler", "n": n, "all_in_ranges": inside, "passed": inside}


def verify_channel(consts: ch.ChannelConstants | None = None, seed: int = 0) -> dict:
    consts = consts or ch.ChannelConstants()
    checks = [
        check_pdf_normalization(consts),
        check_turbulence_sampler(consts, seed),
        check_pointing_sampler(consts, seed),
        check_aoa_outage(consts, seed),
        check_moment_factorization(consts, seed),
        check_env_sampler(seed),
    ]
    # numpy scalars -> python, so the report serializes as JSON
    checks = [{k: v.item() if isinstance(v, np.generic) else v for k, v in c.items()} for c in checks]
    return {"seed": seed, "checks": checks, "all_passed": all(c["passed"] for c in checks)}
