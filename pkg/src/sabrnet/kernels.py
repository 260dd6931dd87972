"""Inner loops of the Monte-Carlo engine.

Each kernel has a numba version and a numpy version with the same
arithmetic order. The public names (``euler_block``, ``payoff_stats``) are
bound to one of them according to :mod:`sabrnet._accel`; both variants stay
importable so the benchmark can time them side by side.
"""

import math

import numpy as np

from ._accel import HAS_NUMBA, njit


def euler_block_numpy(f, a, z, sqdt, nu, rho, antithetic):
    """Advance ``f`` and ``a`` in place through ``z.shape[0]`` Euler steps.

    ``z`` has shape ``(steps, 2, n_draw)``; row 0 drives the forward, row 1
    is the independent shock mixed into the volatility. With antithetic
    pairing the second half of the paths uses the negated draws.
    """
    rhobar = math.sqrt(1.0 - rho * rho)
    for s in range(z.shape[0]):
        e = z[s, 0]
        et = z[s, 1]
        if antithetic:
            e = np.concatenate((e, -e))
            et = np.concatenate((et, -et))
        x = e * sqdt
        y = et * sqdt
        f_new = f + a * f * x
        a_new = a + nu * a * (rho * x + rhobar * y)
        np.maximum(f_new, 0.0, out=f)
        np.maximum(a_new, 0.0, out=a)


@njit(cache=True, nogil=True)
def _euler_block_jit(f, a, z, sqdt, nu, rho, antithetic):
    # steps outer, paths inner: z[s, 0, :] is read contiguously
    rhobar = math.sqrt(1.0 - rho * rho)
    n_draw = z.shape[2]
    n_pass = 2 if antithetic else 1
    for s in range(z.shape[0]):
        for half in range(n_pass):
            sign = -1.0 if half == 1 else 1.0
            off = half * n_draw
            for j in range(n_draw):
                i = off + j
                x = (sign * z[s, 0, j]) * sqdt
                y = (sign * z[s, 1, j]) * sqdt
                fi = f[i]
                ai = a[i]
                f_new = fi + ai * fi * x
                a_new = ai + nu * ai * (rho * x + rhobar * y)
                f[i] = f_new if f_new > 0.0 else 0.0
                a[i] = a_new if a_new > 0.0 else 0.0


def payoff_stats_numpy(terminals, strikes, forward0, antithetic):
    """Mean, per-path std and standard error of OTM payoffs per strike.

    The standard error uses antithetic pair means when pairing is on, which
    is the correct error bar for the pair-averaged estimator.
    """
    n = terminals.shape[0]
    mean = np.empty(strikes.shape[0])
    std = np.empty(strikes.shape[0])
    se = np.empty(strikes.shape[0])
    for k, K in enumerate(strikes):
        if K >= forward0:
            pay = np.maximum(terminals - K, 0.0)
        else:
            pay = np.maximum(K - terminals, 0.0)
        mu = pay.mean()
        mean[k] = mu
        std[k] = math.sqrt(((pay - mu) ** 2).sum() / (n - 1))
        if antithetic:
            half = n // 2
            pm = 0.5 * (pay[:half] + pay[half:])
            se[k] = math.sqrt(((pm - mu) ** 2).sum() / max(half - 1, 1)) / math.sqrt(half)
        else:
            se[k] = std[k] / math.sqrt(n)
    return mean, std, se


@njit(cache=True, nogil=True)
def _payoff_stats_jit(terminals, strikes, forward0, antithetic):
    n = terminals.shape[0]
    nk = strikes.shape[0]
    mean = np.empty(nk)
    std = np.empty(nk)
    se = np.empty(nk)
    half = n // 2
    for k in range(nk):
        K = strikes[k]
        call = K >= forward0
        acc = 0.0
        for i in range(n):
            p = terminals[i] - K if call else K - terminals[i]
            if p > 0.0:
                acc += p
        mu = acc / n
        ss = 0.0
        for i in range(n):
            p = terminals[i] - K if call else K - terminals[i]
            if p < 0.0:
                p = 0.0
            ss += (p - mu) * (p - mu)
        mean[k] = mu
        std[k] = math.sqrt(ss / (n - 1))
        if antithetic:
            sp = 0.0
            for i in range(half):
                p1 = terminals[i] - K if call else K - terminals[i]
                p2 = terminals[i + half] - K if call else K - terminals[i + half]
                if p1 < 0.0:
                    p1 = 0.0
                if p2 < 0.0:
                    p2 = 0.0
                d = 0.5 * (p1 + p2) - mu
                sp += d * d
            se[k] = math.sqrt(sp / max(half - 1, 1)) / math.sqrt(half)
        else:
            se[k] = std[k] / math.sqrt(n)
    return mean, std, se


if HAS_NUMBA:
    euler_block_jit = _euler_block_jit
    payoff_stats_jit = _payoff_stats_jit
    euler_block = _euler_block_jit
    payoff_stats = _payoff_stats_jit
else:
    euler_block_jit = None
    payoff_stats_jit = None
    euler_block = euler_block_numpy
    payoff_stats = payoff_stats_numpy
