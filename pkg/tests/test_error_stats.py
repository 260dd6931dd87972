import math
import warnings

import numpy as np
import pytest

from sabrnet.error_stats import (SyntheticSpec, bucketize, ci_table, data_size_study,
                                 estimate_pred_error, evaluate, msfe, n_pred, quintile_edges,
                                 random_synthetic_spec, restricted_estimate, run_synthetic_validation,
                                 synthetic_fit_variance, synthetic_pred_variance)
from sabrnet.exceptions import DomainError
from sabrnet.mc import SimConfig
from sabrnet.netfit import INPUT_NAMES, NetConfig, TrainConfig, init_network
from sabrnet.surfaces import GenHyper, generate_dataset

# (4 * 1e-4 * 1e-2 / 1e3 + 2 * 1e-4 / 1e6) / 100, see tests/oracles.py
SYNTH_FIT_VAR = 4.2e-11


class Lookup:
    """Stand-in network returning stored targets plus a constant offset."""

    def __init__(self, ds, offset=0.0):
        X, y, _, _, _ = ds.points()
        self.table = {tuple(x): v for x, v in zip(X, y)}
        self.offset = offset

    def predict_points(self, X):
        return np.array([self.table[tuple(x)] for x in X]) + self.offset


@pytest.fixture(scope="module")
def pair():
    h = GenHyper(m=3, n=6, t_last=0.6, dt=0.01)
    lo = generate_dataset(h, 40, SimConfig(400, dt=0.01, seed=1), "test")
    hi = generate_dataset(h, 40, SimConfig(4000, dt=0.01, seed=1), "test-accurate")
    return lo, hi


def test_msfe_examples(pair):
    lo, _ = pair
    assert msfe(Lookup(lo), lo) == 0.0
    assert msfe(Lookup(lo, 0.001), lo) == pytest.approx(1e-6, rel=1e-6)


def test_estimator_examples():
    assert estimate_pred_error(0.3, 10, 0.3, 5) == pytest.approx(0.3, rel=1e-15)
    assert estimate_pred_error(1.01e-4, 10000, 1.1e-4, 1000) == pytest.approx(1.0e-4, rel=1e-12)
    with pytest.raises(DomainError):
        estimate_pred_error(1.0, 10, 1.0, 10)


def test_estimator_algebra():
    rng = np.random.default_rng(0)
    for _ in range(100):
        a, b, c = rng.uniform(0, 1e-3, 3)
        m1, m2 = 5000, 1000
        e = estimate_pred_error(a, m1, b, m2)
        assert estimate_pred_error(c * a, m1, c * b, m2) == pytest.approx(c * e, rel=1e-12, abs=1e-20)
        # linear in each argument
        assert estimate_pred_error(a + c, m1, b, m2) - e == pytest.approx(c * m1 / (m1 - m2), rel=1e-9)


def test_n_pred_examples():
    assert n_pred(0.2, 500, 0.2) == 0.0
    assert n_pred(2e-6, 100, 1e-6) == pytest.approx(100.0, rel=1e-12)
    assert n_pred(5.5e-6, 500000, 2.0e-7) == pytest.approx(13.25e6, rel=1e-12)
    with pytest.raises(DomainError):
        n_pred(1e-6, 100, 0.0)


def test_synthetic_fit_variance_reductions():
    beta = np.full(50, 0.2)
    spec = SyntheticSpec(np.zeros(50), np.zeros(50), beta, 1000, 100)
    assert synthetic_fit_variance(spec, 1000) == pytest.approx(2 / 50 * np.mean(beta ** 4) / 1000 ** 2)
    spec0 = SyntheticSpec(np.zeros(50), np.full(50, 0.01), np.zeros(50), 1000, 100)
    assert synthetic_fit_variance(spec0, 1000) == 0.0


def test_synthetic_fit_variance_vs_simulation():
    spec = SyntheticSpec(np.full(100, 0.2), np.full(100, 0.01), np.full(100, 0.1), 1000, 100,
                         replications=10000, seed=3)
    assert synthetic_fit_variance(spec, 1000) == pytest.approx(SYNTH_FIT_VAR, rel=1e-12)
    s = run_synthetic_validation(spec)
    assert s.msfe1.var(ddof=1) == pytest.approx(SYNTH_FIT_VAR, rel=0.05)


def test_zero_delta_unbiased():
    spec = SyntheticSpec(np.full(1000, 0.3), np.zeros(1000), np.full(1000, 0.2), 10000, 1000,
                         replications=1000, seed=4)
    s = run_synthetic_validation(spec)
    assert abs(s.mean) < 3 * s.stderr


@pytest.mark.parametrize("ratio", [5, 10, 25])
@pytest.mark.parametrize("points", [1000, 10000])
def test_unbiased_grid(ratio, points):
    spec = random_synthetic_spec(points, 1000 * ratio, 1000, replications=400, seed=ratio + points)
    s = run_synthetic_validation(spec)
    assert abs(s.z_score) < 3


def test_decomposition_cross_term():
    spec = random_synthetic_spec(2000, 10000, 1000, replications=1000, seed=7)
    s = run_synthetic_validation(spec)
    # MSFE = MSPE + MSAE + cross term, replication by replication
    assert np.allclose(s.msfe2, s.true_mspe + s.msae2 + s.cross2, rtol=1e-10, atol=0)
    assert abs(s.cross2.mean()) < 3 * s.cross2.std(ddof=1) / math.sqrt(s.cross2.size)


def test_consistency_slope():
    sizes = np.array([1000, 4000, 16000])
    sds = []
    for L in sizes:
        spec = SyntheticSpec(np.full(L, 0.3), np.full(L, 1e-3), np.full(L, 0.2), 10000, 1000,
                             replications=500, seed=int(L))
        sds.append(run_synthetic_validation(spec).e_pred_hat.std(ddof=1))
    slope = np.polyfit(np.log(sizes), np.log(sds), 1)[0]
    assert slope == pytest.approx(-0.5, abs=0.1)


def test_workers_do_not_change_summary():
    spec = random_synthetic_spec(500, 10000, 1000, replications=50, seed=2)
    a = run_synthetic_validation(spec, workers=1)
    b = run_synthetic_validation(spec, workers=4)
    assert np.array_equal(a.e_pred_hat, b.e_pred_hat)


def test_closed_form_variance_matches():
    spec = random_synthetic_spec(1000, 10000, 1000, replications=4000, seed=9)
    s = run_synthetic_validation(spec)
    assert s.var == pytest.approx(synthetic_pred_variance(spec), rel=0.1)


def test_quintile_buckets_uniform():
    v = np.random.default_rng(0).uniform(size=100000)
    counts = np.bincount(bucketize(v, quintile_edges(v)), minlength=5)
    assert np.all(np.abs(counts - 20000) <= 0.02 * 20000)


def test_report_fields_and_identities(pair):
    lo, hi = pair
    net = init_network(NetConfig(1, 8, init_seed=0))
    net.biases[-1][:] = 0.3
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        rep = evaluate(net, lo, hi)
    assert rep.m1 == 4000 and rep.m2 == 400
    assert rep.e_pred_hat == estimate_pred_error(rep.msfe_hi, rep.m1, rep.msfe_lo, rep.m2)
    if rep.e_pred_hat > 0:
        assert rep.n_pred == n_pred(rep.msfe_lo, rep.m2, rep.e_pred_hat)
    assert set(rep.quintiles) == set(INPUT_NAMES)
    for name in INPUT_NAMES:
        e_lo, e_hi, e, npred = restricted_estimate(net, lo, hi, name, 0, 5)
        assert (e_lo, e_hi, e) == (rep.msfe_lo, rep.msfe_hi, rep.e_pred_hat)
        rows = rep.quintiles[name]
        assert len(rows) == 5 and sum(r["n_lo"] for r in rows) == rep.l2
        assert all(r["flagged"] == (min(r["n_lo"], r["n_hi"]) < 100) for r in rows)
    assert "estimated MSPE" in rep.to_text() and "N_pred" in rep.to_text()
    with pytest.raises(DomainError):
        evaluate(net, lo, lo)


def test_negative_estimate_flagged(pair):
    lo, hi = pair
    # exact on the accurate set, off by 0.01 on the noisy one: the estimate
    # (M1 * 0 - M2 * 1e-4) / (M1 - M2) is negative
    net = LookupUnion(Lookup(lo, 0.01), Lookup(hi))
    with pytest.warns(UserWarning):
        rep = evaluate(net, lo, hi)
    assert rep.negative and rep.e_pred_hat < 0 and math.isnan(rep.n_pred)


class LookupUnion:
    def __init__(self, *parts):
        self.parts = parts

    def predict_points(self, X):
        out = []
        for x in X:
            p = next(p for p in self.parts if tuple(x) in p.table)
            out.append(p.table[tuple(x)] + p.offset)
        return np.array(out)


def test_ci_table(pair):
    _, hi = pair
    net = init_network(NetConfig(1, 4))
    rows = ci_table(net, hi, [0, 1])
    assert len(rows) == 2 * 3 * 6
    r = rows[0]
    s = hi.surfaces[0]
    if not r[8]:
        assert r[7] == pytest.approx(2.576 * s.noise[0, 0] / math.sqrt(4000))


def test_data_size_study_single_fraction(pair):
    lo, hi = pair
    h = lo.hyper
    tr = generate_dataset(h, 8, SimConfig(400, dt=0.01, seed=1), "train")
    va = generate_dataset(h, 4, SimConfig(400, dt=0.01, seed=1), "validate")
    rows = data_size_study(tr, [1], NetConfig(1, 4), TrainConfig(batch_size=4, lr_initial=1e-3,
                                                                  lr_floor=1e-5, max_epochs=3),
                           va, lo, hi)
    assert len(rows) == 1 and rows[0]["surfaces"] == 8
