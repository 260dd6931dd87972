"""Analytic pricing primitives for the log-normal (beta = 1) SABR model.

Prices are undiscounted forward prices; the forward is driftless so rates
and dividends never enter.
"""

import math
from dataclasses import dataclass

import numpy as np
from scipy.optimize import brentq

from .exceptions import ConvergenceError, DomainError, NoSolutionError

VOL_LO = 1e-6
VOL_HI = 10.0
IV_MAXITER = 200
HAGAN_SERIES_Z = 1e-6

_SQRT2 = math.sqrt(2.0)


@dataclass(frozen=True)
class SabrParams:
    """Initial volatility, vol-of-vol and correlation. ``beta`` is pinned to 1."""

    alpha0: float
    nu: float
    rho: float
    beta: float = 1.0

    def __post_init__(self):
        if not (math.isfinite(self.alpha0) and self.alpha0 > 0):
            raise DomainError(f"alpha0 must be > 0, got {self.alpha0}")
        if not (math.isfinite(self.nu) and self.nu >= 0):
            raise DomainError(f"nu must be >= 0, got {self.nu}")
        if not (-1.0 < self.rho < 1.0):
            raise DomainError(f"rho must lie in (-1, 1), got {self.rho}")
        if self.beta != 1.0:
            raise DomainError("only beta = 1 is supported")


@dataclass(frozen=True)
class OptionSpec:
    strike: float
    maturity: float
    forward0: float = 1.0

    def __post_init__(self):
        for name in ("strike", "maturity", "forward0"):
            v = getattr(self, name)
            if not (math.isfinite(v) and v > 0):
                raise DomainError(f"{name} must be finite and > 0, got {v}")


def _ncdf(x):
    return 0.5 * math.erfc(-x / _SQRT2)


def _check_positive(**kw):
    for name, v in kw.items():
        if not (isinstance(v, (int, float, np.floating, np.integer)) and math.isfinite(v) and v > 0):
            raise DomainError(f"{name} must be finite and > 0, got {v!r}")


def _black(forward, strike, maturity, vol, is_call):
    sd = vol * math.sqrt(maturity)
    if sd == 0.0:
        return max(forward - strike, 0.0) if is_call else max(strike - forward, 0.0)
    d1 = math.log(forward / strike) / sd + 0.5 * sd
    d2 = d1 - sd
    if is_call:
        return max(forward * _ncdf(d1) - strike * _ncdf(d2), 0.0)
    return max(strike * _ncdf(-d2) - forward * _ncdf(-d1), 0.0)


def bs_price(forward, strike, maturity, vol, is_call=True):
    """Black-Scholes price of a European option on a forward, undiscounted."""
    _check_positive(forward=forward, strike=strike, maturity=maturity)
    if not (math.isfinite(vol) and vol >= 0):
        raise DomainError(f"vol must be finite and >= 0, got {vol!r}")
    return _black(float(forward), float(strike), float(maturity), float(vol), bool(is_call))


def bs_vega(forward, strike, maturity, vol):
    """dPrice/dVol; identical for calls and puts."""
    sd = vol * math.sqrt(maturity)
    if sd <= 0.0:
        return 0.0
    d1 = math.log(forward / strike) / sd + 0.5 * sd
    return forward * math.sqrt(maturity) * math.exp(-0.5 * d1 * d1) / math.sqrt(2.0 * math.pi)


def price_tolerance(price):
    return max(1e-12, 1e-9 * abs(price))


def implied_vol(price, forward, strike, maturity, is_call=True):
    """Invert :func:`bs_price` in vol on the bracket ``[1e-6, 10]``.

    Raises :class:`NoSolutionError` when the price lies outside the range the
    bracket can reach, :class:`ConvergenceError` when Brent's method stalls.
    """
    _check_positive(forward=forward, strike=strike, maturity=maturity)
    if not math.isfinite(price):
        raise DomainError(f"price must be finite, got {price!r}")
    forward, strike, maturity, price = float(forward), float(strike), float(maturity), float(price)
    intrinsic = max(forward - strike, 0.0) if is_call else max(strike - forward, 0.0)
    upper = forward if is_call else strike
    if price < intrinsic or price > upper:
        raise NoSolutionError(f"price {price} outside no-arbitrage bounds [{intrinsic}, {upper}]")
    if price == intrinsic:
        raise NoSolutionError(f"price {price} carries no time value")

    def g(v):
        return _black(forward, strike, maturity, v, is_call) - price

    tol = price_tolerance(price)
    g_lo = g(VOL_LO)
    if g_lo >= 0.0:
        if g_lo <= tol:
            return VOL_LO
        raise NoSolutionError(f"price {price} below the value at vol {VOL_LO}")
    g_hi = g(VOL_HI)
    if g_hi <= 0.0:
        if -g_hi <= tol:
            return VOL_HI
        raise NoSolutionError(f"price {price} above the value at vol {VOL_HI}")

    vol, res = brentq(g, VOL_LO, VOL_HI, xtol=1e-15, rtol=4 * np.finfo(float).eps,
                      maxiter=IV_MAXITER, full_output=True, disp=False)
    if not res.converged or abs(g(vol)) > tol:
        raise ConvergenceError(f"implied vol did not converge for price {price}", best=vol)
    return vol


def _chi(z, rho):
    s = math.sqrt(1.0 - 2.0 * rho * z + z * z)
    if z >= -0.5:
        return math.log1p((z + (z * z - 2.0 * rho * z) / (s + 1.0)) / (1.0 - rho))
    # conjugate form avoids cancellation in s + z - rho for large negative z
    return math.log((1.0 + rho) / (s - z + rho))


def z_over_chi(z, rho):
    """``z / chi(z)`` with a second-order series near ``z = 0``."""
    if abs(z) < HAGAN_SERIES_Z:
        return 1.0 - 0.5 * rho * z + (1.0 / 6.0 - 0.25 * rho * rho) * z * z
    return z / _chi(z, rho)


def hagan_iv(params, strike, maturity, forward=1.0):
    """Hagan's asymptotic log-normal implied vol for beta = 1."""
    _check_positive(strike=strike, maturity=maturity, forward=forward)
    a, nu, rho = params.alpha0, params.nu, params.rho
    z = (nu / a) * math.log(forward / strike)
    ratio = z_over_chi(z, rho)
    return a * ratio * (1.0 + (0.25 * rho * a * nu + (2.0 - 3.0 * rho * rho) * nu * nu / 24.0) * maturity)


def otm_payoff(terminal_forward, strike, forward0=1.0):
    """Put payoff below the initial forward, call payoff at or above it."""
    terminal_forward = np.asarray(terminal_forward, dtype=float)
    if strike >= forward0:
        out = np.maximum(terminal_forward - strike, 0.0)
    else:
        out = np.maximum(strike - terminal_forward, 0.0)
    return out if out.ndim else float(out)
