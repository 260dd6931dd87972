"""Prediction-error estimation for a surrogate fitted to noisy targets.

With ``M`` paths per point, the Monte-Carlo target equals the true value plus
zero-mean noise of variance ``beta_l**2 / M``. The mean squared fitting error
on a test set therefore has expectation ``MSPE + <beta**2> / M``, and two
test sets at different path counts ``M1 != M2`` give the unbiased estimate

    (M1 * MSFE(M1) - M2 * MSFE(M2)) / (M1 - M2)

of the true mean squared prediction error ``MSPE``.
"""

import math
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .exceptions import DomainError
from .mc import stream
from .netfit import INPUT_NAMES, init_network, train
from .surfaces import subset

CI_QUANTILE_99 = 2.576
MIN_BUCKET_POINTS = 100


def msfe(net, ds):
    """Mean squared fitting error over the non-excluded points of ``ds``."""
    X, y, mask, _, _ = ds.points()
    keep = ~mask
    if not keep.any():
        raise DomainError("dataset has no non-excluded points")
    d = net.predict_points(X[keep]) - y[keep]
    return float(d @ d) / d.size


def estimate_pred_error(msfe1, m1, msfe2, m2):
    """Unbiased MSPE estimate from fitting errors at path counts ``m1`` and ``m2``.

    May be negative in finite samples; it is returned unclamped.
    """
    if m1 == m2:
        raise DomainError("path counts must differ")
    if msfe1 < 0 or msfe2 < 0:
        raise DomainError("MSFE values must be >= 0")
    return (m1 * msfe1 - m2 * msfe2) / (m1 - m2)


def n_pred(msfe_value, m_prime, e_pred):
    """Path count at which plain Monte-Carlo would match the network's error."""
    if not e_pred > 0:
        raise DomainError("e_pred must be > 0")
    return m_prime * (msfe_value - e_pred) / e_pred


# ---------------------------------------------------------------- reports


@dataclass
class ErrorReport:
    msfe_lo: float
    msfe_hi: float
    m1: int
    m2: int
    l1: int
    l2: int
    e_pred_hat: float
    n_pred: float
    negative: bool
    jackknife_se: float = float("nan")
    quintiles: dict = field(default_factory=dict)

    def rows(self):
        return [
            ("msfe_lo", self.msfe_lo), ("msfe_hi", self.msfe_hi), ("m1", self.m1),
            ("m2", self.m2), ("l1", self.l1), ("l2", self.l2),
            ("e_pred_hat", self.e_pred_hat), ("n_pred", self.n_pred),
            ("negative_estimate", int(self.negative)),
            ("jackknife_se_artifact", self.jackknife_se),
        ]

    def to_text(self):
        lines = [
            f"MSFE at M2={self.m2} paths (L'={self.l2} points): {self.msfe_lo:.6e}",
            f"MSFE at M1={self.m1} paths (L'={self.l1} points): {self.msfe_hi:.6e}",
            f"estimated MSPE: {self.e_pred_hat:.6e}"
            + ("  [NEGATIVE: finite-sample artefact, not clamped]" if self.negative else ""),
            f"jackknife std-error over surfaces (artifact addition): {self.jackknife_se:.3e}",
            f"N_pred (at M2): {self.n_pred:.6e}",
        ]
        for name, rows in self.quintiles.items():
            lines.append(f"quintiles of {name}:")
            for r in rows:
                flag = "  [small bucket]" if r["flagged"] else ""
                lines.append(f"  [Q{r['bucket']},Q{r['bucket'] + 1}] {r['lo']:.4g}..{r['hi']:.4g}: "
                             f"E_pred={r['e_pred']:.3e} N_pred={r['n_pred']:.3e}{flag}")
        return "\n".join(lines)


def _sq_errors(net, ds):
    X, y, mask, _, idx = ds.points()
    keep = ~mask
    d = net.predict_points(X[keep]) - y[keep]
    return X[keep], d * d, idx[keep]


def _estimate(se_hi, m1, se_lo, m2):
    if se_hi.size == 0 or se_lo.size == 0:
        return math.nan, math.nan, math.nan, math.nan
    e_hi = float(se_hi.sum()) / se_hi.size
    e_lo = float(se_lo.sum()) / se_lo.size
    e = estimate_pred_error(e_hi, m1, e_lo, m2)
    npred = n_pred(e_lo, m2, e) if e > 0 else math.nan
    return e_lo, e_hi, e, npred


def _jackknife_var(sq, idx):
    """Delete-one-surface jackknife variance of the mean of ``sq``."""
    surf = np.unique(idx)
    if surf.size < 2:
        return math.nan
    sums = np.bincount(np.searchsorted(surf, idx), weights=sq)
    counts = np.bincount(np.searchsorted(surf, idx)).astype(float)
    loo = (sums.sum() - sums) / (counts.sum() - counts)
    g = surf.size
    return float((g - 1) / g * ((loo - loo.mean()) ** 2).sum())


def quintile_edges(values):
    return np.quantile(values, np.linspace(0.0, 1.0, 6))


def bucketize(values, edges):
    """Bucket index 0..4; the outer buckets are open-ended."""
    return np.searchsorted(edges[1:-1], values, side="right")


def quintile_report(net, ds_lo, ds_hi, input_name, _cache=None):
    """Estimator restricted to each quintile of one input.

    Quintiles are empirical over the non-excluded points of ``ds_lo``; the
    same edges are applied to ``ds_hi``. Rows with fewer than 100 points on
    either side are flagged.
    """
    if input_name not in INPUT_NAMES:
        raise DomainError(f"input must be one of {INPUT_NAMES}")
    j = INPUT_NAMES.index(input_name)
    Xl, sql, _ = _cache[0] if _cache else _sq_errors(net, ds_lo)
    Xh, sqh, _ = _cache[1] if _cache else _sq_errors(net, ds_hi)
    edges = quintile_edges(Xl[:, j])
    bl = bucketize(Xl[:, j], edges)
    bh = bucketize(Xh[:, j], edges)
    rows = []
    for k in range(5):
        a, b = sqh[bh == k], sql[bl == k]
        e_lo, e_hi, e, npred = _estimate(a, ds_hi.n_paths, b, ds_lo.n_paths)
        rows.append({"bucket": k, "lo": float(edges[k]), "hi": float(edges[k + 1]),
                     "n_lo": int(b.size), "n_hi": int(a.size), "msfe_lo": e_lo, "msfe_hi": e_hi,
                     "e_pred": e, "n_pred": npred,
                     "flagged": bool(min(a.size, b.size) < MIN_BUCKET_POINTS)})
    return rows


def restricted_estimate(net, ds_lo, ds_hi, input_name, q_from=0, q_to=5, _cache=None):
    """Estimator over points whose input lies in ``[Q_q_from, Q_q_to]``.

    ``(0, 5)`` keeps every point and so reproduces the unrestricted values.
    """
    if not 0 <= q_from < q_to <= 5:
        raise DomainError("need 0 <= q_from < q_to <= 5")
    j = INPUT_NAMES.index(input_name)
    Xl, sql, _ = _cache[0] if _cache else _sq_errors(net, ds_lo)
    Xh, sqh, _ = _cache[1] if _cache else _sq_errors(net, ds_hi)
    edges = quintile_edges(Xl[:, j])
    bl = bucketize(Xl[:, j], edges)
    bh = bucketize(Xh[:, j], edges)
    keep_l = (bl >= q_from) & (bl < q_to)
    keep_h = (bh >= q_from) & (bh < q_to)
    return _estimate(sqh[keep_h], ds_hi.n_paths, sql[keep_l], ds_lo.n_paths)


def evaluate(net, ds_lo, ds_hi, quintile_inputs=INPUT_NAMES):
    """Full error report; ``ds_hi`` is the higher-precision test set."""
    if len(ds_lo) == 0 or len(ds_hi) == 0:
        raise DomainError("both test datasets must be nonempty")
    if ds_lo.n_paths == ds_hi.n_paths:
        raise DomainError("test datasets must use different path counts")
    lo = _sq_errors(net, ds_lo)
    hi = _sq_errors(net, ds_hi)
    if lo[1].size == 0 or hi[1].size == 0:
        raise DomainError("dataset has no non-excluded points")
    m1, m2 = ds_hi.n_paths, ds_lo.n_paths
    e_lo, e_hi, e, npred = _estimate(hi[1], m1, lo[1], m2)
    if e < 0:
        warnings.warn("negative MSPE estimate (finite-sample); reported unclamped")
    c = m1 / (m1 - m2)
    jk = math.sqrt(c * c * _jackknife_var(hi[1], hi[2]) + (c - 1) ** 2 * _jackknife_var(lo[1], lo[2]))
    rep = ErrorReport(e_lo, e_hi, m1, m2, int(hi[1].size), int(lo[1].size), e, npred, e < 0, jk)
    for name in quintile_inputs:
        rep.quintiles[name] = quintile_report(net, ds_lo, ds_hi, name, _cache=(lo, hi))
    return rep


def ci_table(net, ds, surface_ids):
    """Per-point network vs Monte-Carlo vols with 99% half-widths, for plotting."""
    rows = []
    wanted = set(surface_ids)
    for s in ds.surfaces:
        if s.spec.surface_id not in wanted:
            continue
        pred = net.predict_points(s.inputs().reshape(-1, 5)).reshape(s.iv.shape)
        m, n = s.iv.shape
        for k1 in range(m):
            for k2 in range(n):
                half = CI_QUANTILE_99 * s.noise[k1, k2] / math.sqrt(s.n_paths)
                rows.append((s.spec.surface_id, k1, k2, float(s.spec.maturities[k1]),
                             float(s.spec.strikes[k1, k2]), float(pred[k1, k2]),
                             float(s.iv[k1, k2]), float(half), bool(s.mask[k1, k2])))
    return rows


# ------------------------------------------------------- synthetic harness


@dataclass
class SyntheticSpec:
    """Known-truth setup: targets = truth + N(0, beta**2 / M), network = truth + delta."""

    truth: np.ndarray
    delta: np.ndarray
    beta: np.ndarray
    m1: int
    m2: int
    replications: int = 2000
    seed: int = 0

    def __post_init__(self):
        self.truth = np.asarray(self.truth, dtype=float)
        self.delta = np.asarray(self.delta, dtype=float)
        self.beta = np.asarray(self.beta, dtype=float)
        if not (self.truth.shape == self.delta.shape == self.beta.shape):
            raise DomainError("truth, delta and beta must share one shape")
        if (self.beta < 0).any():
            raise DomainError("beta must be >= 0")
        if self.replications < 2:
            raise DomainError("need at least 2 replications")
        if self.m1 == self.m2:
            raise DomainError("m1 and m2 must differ")

    @property
    def n_points(self):
        return self.truth.size


def synthetic_fit_variance(spec, m_prime):
    """Exact Var[MSFE] when the prediction error is the fixed ``delta``."""
    d2 = spec.delta ** 2
    b2 = spec.beta ** 2
    L = spec.n_points
    return float((4.0 * d2 * b2 / m_prime + 2.0 * b2 * b2 / m_prime ** 2).sum()) / L ** 2


def synthetic_pred_variance(spec):
    c1 = spec.m1 / (spec.m1 - spec.m2)
    c2 = spec.m2 / (spec.m1 - spec.m2)
    return c1 * c1 * synthetic_fit_variance(spec, spec.m1) + c2 * c2 * synthetic_fit_variance(spec, spec.m2)


@dataclass
class SyntheticSummary:
    e_pred_hat: np.ndarray
    msfe1: np.ndarray
    msfe2: np.ndarray
    msae2: np.ndarray
    cross2: np.ndarray
    true_mspe: float
    var_formula: float

    @property
    def mean(self):
        return float(self.e_pred_hat.mean())

    @property
    def var(self):
        return float(self.e_pred_hat.var(ddof=1))

    @property
    def stderr(self):
        return math.sqrt(self.var / self.e_pred_hat.size)

    @property
    def z_score(self):
        return (self.mean - self.true_mspe) / self.stderr

    def abs_pred_error_quantiles(self, spec, qs=(0.5, 0.9, 0.97, 0.99)):
        return dict(zip(qs, np.quantile(np.abs(spec.delta), qs)))


def _replicate(spec, r):
    rng = stream(spec.seed, r)
    z = rng.standard_normal((2, spec.n_points))
    e1 = spec.beta / math.sqrt(spec.m1) * z[0]
    e2 = spec.beta / math.sqrt(spec.m2) * z[1]
    net = spec.truth + spec.delta
    f1 = net - (spec.truth + e1)
    f2 = net - (spec.truth + e2)
    L = spec.n_points
    msfe1 = float(f1 @ f1) / L
    msfe2 = float(f2 @ f2) / L
    return msfe1, msfe2, float(e2 @ e2) / L, -2.0 * float(spec.delta @ e2) / L


def run_synthetic_validation(spec, workers=1):
    """Replicate the two-precision experiment with known truth.

    Replication ``r`` draws its noise from its own stream, so the summary
    does not depend on ``workers``.
    """
    reps = range(spec.replications)
    if workers > 1:
        with ThreadPoolExecutor(workers) as ex:
            out = list(ex.map(lambda r: _replicate(spec, r), reps))
    else:
        out = [_replicate(spec, r) for r in reps]
    arr = np.array(out)
    e_hat = (spec.m1 * arr[:, 0] - spec.m2 * arr[:, 1]) / (spec.m1 - spec.m2)
    return SyntheticSummary(e_hat, arr[:, 0], arr[:, 1], arr[:, 2], arr[:, 3],
                            float((spec.delta ** 2).mean()), synthetic_pred_variance(spec))


def random_synthetic_spec(n_points, m1, m2, replications, seed=0, delta_scale=1e-3,
                          beta_range=(0.05, 0.5)):
    """Synthetic spec with random truth, prediction errors and noise scales."""
    rng = stream(seed, 2**32 - 1)
    truth = rng.uniform(0.05, 0.6, n_points)
    delta = rng.normal(0.0, delta_scale, n_points)
    beta = rng.uniform(*beta_range, n_points)
    return SyntheticSpec(truth, delta, beta, m1, m2, replications, seed)


# ------------------------------------------------------- data-size study


def data_size_study(train_ds, fractions, net_cfg, tcfg, val_ds, test_lo, test_hi, callback=None):
    """Train one network per nested subset and estimate its prediction error."""
    fr = sorted({float(f) for f in fractions})
    rows = []
    for f in fr:
        sub = subset(train_ds, f)
        net = train(init_network(net_cfg), sub, val_ds, tcfg)
        e_lo = msfe(net, test_lo)
        e_hi = msfe(net, test_hi)
        e = estimate_pred_error(e_hi, test_hi.n_paths, e_lo, test_lo.n_paths)
        row = {"fraction": f, "surfaces": len(sub),
               "points": int(sum((~s.mask).sum() for s in sub.surfaces)),
               "msfe_lo": e_lo, "msfe_hi": e_hi, "e_pred": e,
               "n_pred": n_pred(e_lo, test_lo.n_paths, e) if e > 0 else math.nan}
        rows.append(row)
        if callback is not None:
            callback(row)
    return rows
