"""Random surface specifications and dataset assembly.

A surface is an ``m x n`` grid: ``m`` equidistant maturities starting at a
random first maturity, and for each maturity ``n`` equidistant strikes whose
range widens with the standard deviation of the log-forward.
"""

import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from multiprocessing import get_context

import numpy as np

from .exceptions import DomainError
from .mc import TAG_SPEC, mc_surface, stream
from .model import SabrParams

ROLES = {"train": 1, "validate": 2, "test": 3, "test-accurate": 4}
ROLE_NAMES = {v: k for k, v in ROLES.items()}
NU_MODES = ("per_row", "single")

_SERIES_CUT = 1e-10


@dataclass(frozen=True)
class GenHyper:
    m: int = 20
    n: int = 20
    alpha0_min: float = 0.01
    alpha0_max: float = 0.5
    nu_min: float = 0.01
    nu_max: float = 2.0
    rho_min: float = -0.99
    rho_max: float = 0.1
    t_last: float = 2.0
    eta_min: float = 0.842
    eta_max: float = 2.576
    dt: float = 0.002
    literal_k_formula: bool = False
    literal_dk: bool = False
    nu_mode: str = "per_row"

    def __post_init__(self):
        if self.m < 1 or self.n < 2:
            raise DomainError("need m >= 1 and n >= 2")
        for lo, hi in (("alpha0_min", "alpha0_max"), ("nu_min", "nu_max"),
                       ("rho_min", "rho_max"), ("eta_min", "eta_max")):
            if not getattr(self, lo) <= getattr(self, hi):
                raise DomainError(f"empty range {lo}..{hi}")
        if self.alpha0_min <= 0 or self.nu_min < 0:
            raise DomainError("alpha0 must be > 0 and nu >= 0")
        if not (-1 < self.rho_min and self.rho_max < 1):
            raise DomainError("rho range must lie inside (-1, 1)")
        if self.t_last <= 0 or self.dt <= 0:
            raise DomainError("t_last and dt must be > 0")
        if self.nu_mode not in NU_MODES:
            raise DomainError(f"nu_mode must be one of {NU_MODES}")


@dataclass
class SurfaceSpec:
    params: SabrParams
    maturities: np.ndarray
    strikes: np.ndarray
    eta_f: float
    surface_id: int
    nu_mode: str = "per_row"


@dataclass
class IvSurface:
    spec: SurfaceSpec
    iv: np.ndarray
    noise: np.ndarray
    mask: np.ndarray
    n_paths: int

    def inputs(self):
        """``(m, n, 5)`` grid of (T, K, alpha0, nu, rho)."""
        m, n = self.iv.shape
        p = self.spec.params
        x = np.empty((m, n, 5))
        x[..., 0] = self.spec.maturities[:, None]
        x[..., 1] = self.spec.strikes
        x[..., 2] = p.alpha0
        x[..., 3] = p.nu
        x[..., 4] = p.rho
        return x


@dataclass
class Dataset:
    surfaces: list
    hyper: GenHyper
    n_paths: int
    dt: float
    seed: int
    role: str
    antithetic: bool = True
    meta: dict = field(default_factory=dict)

    def __len__(self):
        return len(self.surfaces)

    @property
    def ids(self):
        return [s.spec.surface_id for s in self.surfaces]

    def points(self):
        """Flatten to ``(X, y, mask, noise, surface_index)`` over all grid points."""
        X = np.concatenate([s.inputs().reshape(-1, 5) for s in self.surfaces])
        y = np.concatenate([s.iv.ravel() for s in self.surfaces])
        mask = np.concatenate([s.mask.ravel() for s in self.surfaces])
        noise = np.concatenate([s.noise.ravel() for s in self.surfaces])
        idx = np.concatenate([np.full(s.iv.size, i) for i, s in enumerate(self.surfaces)])
        return X, y, mask, noise, idx

    def exclusion_fraction(self):
        total = sum(s.mask.size for s in self.surfaces)
        return sum(int(s.mask.sum()) for s in self.surfaces) / total


def _scaled_widths(nu_t, T):
    """Return ``(exp(nu_t^2 T) - 1) / nu_t^2`` and ``sqrt(exp(nu_t^2 T) - 1) / nu_t``."""
    x = nu_t * nu_t * T
    if x < _SERIES_CUT:
        var = T * (1.0 + 0.5 * x)
        sd = math.sqrt(T) * (1.0 + 0.25 * x)
    else:
        w = math.expm1(x)
        var = w / (nu_t * nu_t)
        sd = math.sqrt(w) / nu_t
    return var, sd


def strike_range(alpha0, nu_t, T, eta_f, forward0=1.0, literal=False):
    """Lowest and highest strike of the row at maturity ``T``."""
    var, sd = _scaled_widths(nu_t, T)
    drift_hi = 0.5 * alpha0 * alpha0 * var
    drift_lo = 0.5 * alpha0 * var if literal else drift_hi
    k_lo = forward0 * math.exp(-drift_lo - eta_f * alpha0 * sd)
    k_hi = forward0 * math.exp(-drift_hi + eta_f * alpha0 * sd)
    return k_lo, k_hi


def sample_spec(hyper, rng, surface_id=0):
    """Draw one surface specification. ``rng`` is a ``numpy.random.Generator``."""
    alpha0 = rng.uniform(hyper.alpha0_min, hyper.alpha0_max)
    nu = rng.uniform(hyper.nu_min, hyper.nu_max)
    rho = rng.uniform(hyper.rho_min, hyper.rho_max)
    eta_f = rng.uniform(hyper.eta_min, hyper.eta_max)
    dT = hyper.t_last / hyper.m
    t1 = dT - rng.uniform(0.0, dT)  # (0, dT]
    maturities = t1 + dT * np.arange(hyper.m)
    strikes = np.empty((hyper.m, hyper.n))
    steps = np.arange(hyper.n)
    div = hyper.n if hyper.literal_dk else hyper.n - 1
    for k, T in enumerate(maturities):
        nu_t = nu / math.sqrt(T) if hyper.nu_mode == "per_row" else nu
        k_lo, k_hi = strike_range(alpha0, nu_t, T, eta_f, literal=hyper.literal_k_formula)
        strikes[k] = k_lo + steps * ((k_hi - k_lo) / div)
    return SurfaceSpec(SabrParams(alpha0, nu, rho), maturities, strikes, eta_f, int(surface_id),
                       hyper.nu_mode)


def spec_for(hyper, seed, role, surface_id):
    rng = stream(seed, ROLES[role], surface_id, TAG_SPEC)
    return sample_spec(hyper, rng, surface_id)


def _make_surface(args):
    hyper, cfg, role, sid = args
    spec = spec_for(hyper, cfg.seed, role, sid)
    return mc_surface(spec, cfg, role_code=ROLES[role])


def generate_dataset(hyper, count, cfg, role, workers=1, start_id=0, meta=None, log=None):
    """Sample and price ``count`` surfaces with ids ``start_id ...``.

    Output depends only on (hyper, count, cfg, role, start_id).
    """
    if count < 1:
        raise DomainError("count must be >= 1")
    if role not in ROLES:
        raise DomainError(f"unknown role {role!r}")
    if cfg.dt != hyper.dt:
        raise DomainError(f"SimConfig.dt {cfg.dt} differs from GenHyper.dt {hyper.dt}")
    t0 = time.perf_counter()
    jobs = [(hyper, cfg, role, start_id + i) for i in range(count)]
    if workers > 1:
        with ProcessPoolExecutor(workers, mp_context=get_context("fork")) as ex:
            surfaces = list(ex.map(_make_surface, jobs, chunksize=max(1, count // (8 * workers))))
    else:
        surfaces = [_make_surface(j) for j in jobs]
    ds = Dataset(surfaces, hyper, cfg.n_paths, cfg.dt, cfg.seed, role, cfg.antithetic,
                 dict(meta or {}))
    if log is not None:
        wall = time.perf_counter() - t0
        steps = sum(float(np.ceil(s.spec.maturities / cfg.dt).sum()) for s in surfaces)
        log.update(surfaces=count, exclusion_fraction=ds.exclusion_fraction(), wall_seconds=wall,
                   path_steps_per_second=steps * cfg.n_paths / wall if wall > 0 else float("inf"))
    return ds


def subset(ds, fraction):
    """Prefix-by-id subset of size ``len(ds) * fraction`` for ``fraction = 1 / 2**k``."""
    fraction = float(fraction)
    if not (0 < fraction <= 1):
        raise DomainError("fraction must be in (0, 1]")
    k = math.log2(1.0 / fraction)
    if abs(k - round(k)) > 1e-12:
        raise DomainError("fraction must be a power of 1/2")
    n = len(ds) // (1 << int(round(k)))
    if n < 1:
        raise DomainError("subset would be empty")
    ordered = sorted(ds.surfaces, key=lambda s: s.spec.surface_id)
    return Dataset(ordered[:n], ds.hyper, ds.n_paths, ds.dt, ds.seed, ds.role, ds.antithetic,
                   dict(ds.meta))
