"""Euler-Maruyama Monte-Carlo for the beta = 1 SABR model.

Every path set is driven by its own generator seeded from a fixed key
(master seed, role, surface id, row), so results never depend on the order
in which rows or surfaces are processed or on the number of workers.
"""

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace

import numpy as np

from . import kernels
from .exceptions import DomainError, SabrNetError
from .model import SabrParams, bs_vega, implied_vol

EXCLUSION_RATIO = 100.0
BLOCK_STEPS = 32

# leading stream tags: keep spec sampling and path generation on disjoint keys
TAG_SPEC = 0
TAG_ROW = 1


@dataclass(frozen=True)
class SimConfig:
    n_paths: int
    dt: float = 0.002
    seed: int = 0
    antithetic: bool = True

    def __post_init__(self):
        if self.n_paths < 2:
            raise DomainError("n_paths must be >= 2")
        if self.antithetic and self.n_paths % 2:
            raise DomainError("n_paths must be even with antithetic pairing")
        if not (self.dt > 0 and math.isfinite(self.dt)):
            raise DomainError("dt must be > 0")


@dataclass
class PricedPoint:
    price_mean: float
    price_std: float
    price_se: float
    iv: float | None
    noise: float | None
    excluded: bool


def stream(*key):
    """Generator for a key of non-negative integers (the public mixing function)."""
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence([int(k) for k in key])))


def _advance(f, a, rng, n_steps, h, nu, rho, antithetic):
    n_draw = f.shape[0] // 2 if antithetic else f.shape[0]
    sq = math.sqrt(h)
    done = 0
    while done < n_steps:
        b = min(BLOCK_STEPS, n_steps - done)
        z = rng.standard_normal((b, 2, n_draw))
        kernels.euler_block(f, a, z, sq, nu, rho, antithetic)
        done += b


def _n_steps(span, dt):
    return max(1, math.ceil(span / dt - 1e-9))


def simulate_terminal(params, maturity, cfg, rng=None):
    """Terminal forwards at ``maturity`` for ``cfg.n_paths`` paths, f0 = 1.

    ``params.nu`` is used as the constant vol-of-vol of the simulation. The
    step is ``maturity / ceil(maturity / dt)`` so the last step lands on the
    maturity exactly. Both the forward and the volatility are floored at 0.
    """
    if not (maturity >= cfg.dt):
        raise DomainError(f"maturity {maturity} shorter than dt {cfg.dt}")
    if rng is None:
        rng = stream(cfg.seed)
    f = np.ones(cfg.n_paths)
    a = np.full(cfg.n_paths, float(params.alpha0))
    n = _n_steps(maturity, cfg.dt)
    _advance(f, a, rng, n, maturity / n, float(params.nu), float(params.rho), cfg.antithetic)
    return f


def _invert(mean, std, se, strikes, maturity, forward0, n_paths):
    m = len(strikes)
    iv = np.full(m, np.nan)
    noise = np.full(m, np.nan)
    mask = np.ones(m, dtype=bool)
    for k in range(m):
        if std[k] > EXCLUSION_RATIO * mean[k]:
            continue
        K = float(strikes[k])
        try:
            v = implied_vol(float(mean[k]), forward0, K, maturity, K >= forward0)
        except SabrNetError:
            continue
        vega = bs_vega(forward0, K, maturity, v)
        if vega <= 0.0 or not math.isfinite(vega):
            continue
        iv[k] = v
        noise[k] = math.sqrt(n_paths) * se[k] / vega
        mask[k] = False
    return iv, noise, mask


def price_row_arrays(terminals, strikes, maturity, forward0=1.0, antithetic=True):
    terminals = np.ascontiguousarray(terminals, dtype=float)
    strikes = np.ascontiguousarray(strikes, dtype=float)
    mean, std, se = kernels.payoff_stats(terminals, strikes, float(forward0), bool(antithetic))
    iv, noise, mask = _invert(mean, std, se, strikes, maturity, forward0, terminals.shape[0])
    return mean, std, se, iv, noise, mask


def price_row(terminals, strikes, maturity, forward0=1.0, antithetic=True):
    """Price OTM options on one maturity row and convert to implied vols.

    A point is excluded when the per-path payoff std exceeds 100 times the
    mean payoff, or when the mean price cannot be inverted.
    """
    if len(terminals) == 0:
        raise DomainError("terminals must be nonempty")
    cols = price_row_arrays(terminals, strikes, maturity, forward0, antithetic)
    out = []
    for mean, std, se, iv, noise, mask in zip(*cols):
        out.append(PricedPoint(
            price_mean=float(mean), price_std=float(std), price_se=float(se),
            iv=None if mask else float(iv), noise=None if mask else float(noise),
            excluded=bool(mask)))
    return out


def effective_nu(nu, maturity, nu_mode="per_row"):
    """Vol-of-vol used to simulate one maturity row."""
    if nu_mode == "per_row":
        return nu / math.sqrt(maturity)
    if nu_mode == "single":
        return nu
    raise DomainError(f"unknown nu_mode {nu_mode!r}")


def _row_job(spec, cfg, role_code, k):
    T = float(spec.maturities[k])
    nu_t = effective_nu(spec.params.nu, T, spec.nu_mode)
    p = SabrParams(spec.params.alpha0, nu_t, spec.params.rho)
    row_cfg = cfg if T >= cfg.dt else replace(cfg, dt=T)
    rng = stream(cfg.seed, role_code, spec.surface_id, TAG_ROW, k)
    f_T = simulate_terminal(p, T, row_cfg, rng=rng)
    _, _, _, iv, noise, mask = price_row_arrays(f_T, spec.strikes[k], T, 1.0, cfg.antithetic)
    return iv, noise, mask


def _single_path_rows(spec, cfg, role_code):
    m = len(spec.maturities)
    n = spec.strikes.shape[1]
    iv = np.empty((m, n))
    noise = np.empty((m, n))
    mask = np.empty((m, n), dtype=bool)
    rng = stream(cfg.seed, role_code, spec.surface_id, TAG_ROW, 0)
    f = np.ones(cfg.n_paths)
    a = np.full(cfg.n_paths, float(spec.params.alpha0))
    t = 0.0
    for k in range(m):
        T = float(spec.maturities[k])
        span = T - t
        n_steps = _n_steps(span, cfg.dt)
        _advance(f, a, rng, n_steps, span / n_steps, float(spec.params.nu), float(spec.params.rho),
                 cfg.antithetic)
        t = T
        _, _, _, iv[k], noise[k], mask[k] = price_row_arrays(f, spec.strikes[k], T, 1.0, cfg.antithetic)
    return iv, noise, mask


def mc_surface(spec, cfg, role_code=0, workers=1):
    """Simulate and invert every grid point of one surface.

    In ``per_row`` mode each maturity row is its own simulation with
    vol-of-vol ``nu / sqrt(T)``; in ``single`` mode one path set with the raw
    ``nu`` is sampled at every maturity.
    """
    from .surfaces import IvSurface

    m = len(spec.maturities)
    if spec.nu_mode == "single":
        iv, noise, mask = _single_path_rows(spec, cfg, role_code)
    else:
        if workers > 1:
            with ThreadPoolExecutor(workers) as ex:
                rows = list(ex.map(lambda k: _row_job(spec, cfg, role_code, k), range(m)))
        else:
            rows = [_row_job(spec, cfg, role_code, k) for k in range(m)]
        iv = np.stack([r[0] for r in rows])
        noise = np.stack([r[1] for r in rows])
        mask = np.stack([r[2] for r in rows])
    return IvSurface(spec=spec, iv=iv, noise=noise, mask=mask, n_paths=cfg.n_paths)
