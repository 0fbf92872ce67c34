import numpy as np
import pytest

from effdim.concentration import (
    DeviationEstimate,
    Nonlinearity,
    RefUnavailable,
    SearchConfig,
    UnsupportedOrder,
    bound_curve,
    empirical_sup_deviation,
    gaussian_moment_tensor,
    identity_fs,
    net_sup_deviation,
    scaling_experiment,
    tensor_deviation,
    tightness_probe,
    _gaussian_product_moment,
    _loglog_slope,
)
from effdim.linalg import sphere_net
from effdim.rng import RngStream
from effdim.spectrum import SampleMatrix, make_spectrum, sample_gaussian


SP5 = make_spectrum("isotropic", d=5, sigma1=1.0)


def test_nonlinearities_are_lipschitz_and_zero_at_zero():
    z = np.linspace(-3, 3, 601)
    for f in (Nonlinearity("identity"), Nonlinearity("relu"),
              Nonlinearity("clip", 1.5)):
        assert f(np.zeros(1))[0] == 0.0
        diffs = np.abs(np.diff(f(z))) / np.diff(z)
        assert np.all(diffs <= 1.0 + 1e-12)
        assert np.all((f.deriv(z) >= 0) & (f.deriv(z) <= 1))


def test_isserlis_moment_matches_wick_by_hand():
    cov = np.diag([4.0, 1.0])
    x = [np.array([1.0, 0.0]), np.array([0.0, 1.0]),
         np.array([1.0, 1.0]), np.array([1.0, -1.0])]
    # E[(a x1)(a x2)(a x3)(a x4)] = s12 s34 + s13 s24 + s14 s23
    def s(u, v):
        return u @ cov @ v
    expected = s(x[0], x[1]) * s(x[2], x[3]) + s(x[0], x[2]) * s(x[1], x[3]) \
        + s(x[0], x[3]) * s(x[1], x[2])
    assert _gaussian_product_moment(cov, x) == pytest.approx(expected, abs=1e-14)
    assert _gaussian_product_moment(cov, x[:3]) == 0.0


def test_centered_r2_matches_operator_norm():
    sm = sample_gaussian(SP5, 400, RngStream(3))
    est = empirical_sup_deviation(sm, identity_fs(2), 2, centered=True, ref=SP5,
                                  search=SearchConfig(restarts=8, iters=60),
                                  rng=RngStream(4))
    M = sm.rows.T @ sm.rows / sm.n - np.eye(5)
    assert est.value == pytest.approx(np.linalg.norm(M, 2), abs=1e-8)


def test_uncentered_r2_matches_operator_norm():
    sm = sample_gaussian(SP5, 400, RngStream(9))
    est = empirical_sup_deviation(sm, identity_fs(2), 2, centered=False,
                                  search=SearchConfig(restarts=8, iters=60),
                                  rng=RngStream(4))
    M = sm.rows.T @ sm.rows / sm.n
    assert est.value == pytest.approx(np.linalg.norm(M, 2), abs=1e-8)


def test_net_oracle_agrees_at_low_dimension():
    sp = make_spectrum("custom", values=[1.5, 0.5])
    sm = sample_gaussian(sp, 200, RngStream(11))
    net = sphere_net(2, 0.15)
    fs = [Nonlinearity("relu"), Nonlinearity("clip", 2.0)]
    ref = sample_gaussian(sp, 100_000, RngStream(12))
    oracle = net_sup_deviation(sm, fs, 2, True, ref, net)
    est = empirical_sup_deviation(sm, fs, 2, centered=True, ref=ref,
                                  search=SearchConfig(restarts=16, iters=200),
                                  rng=RngStream(13))
    # net undershoots by O(resolution * Lipschitz); ascent can land either side
    assert est.value >= oracle - 0.05
    assert est.value <= oracle + 0.05


def test_centered_requires_reference():
    sm = sample_gaussian(SP5, 50, RngStream(1))
    with pytest.raises(RefUnavailable):
        empirical_sup_deviation(sm, identity_fs(2), 2, centered=True, ref=None)
    with pytest.raises(RefUnavailable):
        empirical_sup_deviation(sm, [Nonlinearity("relu")] * 2, 2,
                                centered=True, ref=SP5)


def test_prefix_monotonicity_in_restarts():
    sm = sample_gaussian(SP5, 100, RngStream(21))
    fs = [Nonlinearity("relu")] * 3
    ref = sample_gaussian(SP5, 100_000, RngStream(22))
    vals = []
    for restarts in (2, 4, 8):
        est = empirical_sup_deviation(sm, fs, 3, centered=True, ref=ref,
                                      search=SearchConfig(restarts=restarts, iters=50),
                                      rng=RngStream(23))
        vals.append(est.value)
    assert vals[0] <= vals[1] + 1e-12 <= vals[2] + 2e-12


def test_gaussian_moment_tensor_values():
    sp = make_spectrum("custom", values=[2.0, 1.0])
    cov = sp.covariance()
    np.testing.assert_allclose(gaussian_moment_tensor(sp, 2), cov)
    assert not np.any(gaussian_moment_tensor(sp, 3))
    t4 = gaussian_moment_tensor(sp, 4)
    assert t4[0, 0, 0, 0] == pytest.approx(3 * cov[0, 0] ** 2)
    assert t4[0, 0, 1, 1] == pytest.approx(cov[0, 0] * cov[1, 1])
    with pytest.raises(UnsupportedOrder):
        gaussian_moment_tensor(sp, 5)


def test_tensor_deviation_p2_matches_matrix_route():
    sm = sample_gaussian(SP5, 300, RngStream(31))
    est = tensor_deviation(sm, 2, mean="exact", spectrum=SP5, rng=RngStream(32))
    M = sm.rows.T @ sm.rows / sm.n - np.eye(5)
    assert est.value == pytest.approx(np.linalg.norm(M, 2), rel=1e-8)


def test_tensor_deviation_requires_spectrum_for_exact():
    sm = sample_gaussian(SP5, 50, RngStream(1))
    with pytest.raises(RefUnavailable):
        tensor_deviation(sm, 2, mean="exact")


def test_bound_curves_positive_and_monotone_in_lambda():
    sp = make_spectrum("power_law", d=10, sigma1=2.0, alpha=1.0)
    for theorem in ("1", "2", "tensor"):
        b0 = bound_curve(theorem, sp, 1000, 3, lam=1.0)
        b1 = bound_curve(theorem, sp, 1000, 3, lam=4.0)
        assert 0 < b0 < b1


def test_tightness_probe_single_sample_is_exact():
    sm = SampleMatrix(np.array([[3.0, 4.0]]))
    # ||a_1|| = 5, value at x = a_1/||a_1|| is ||a_1||^r
    assert tightness_probe(sm, 2) == pytest.approx(25.0, rel=1e-12)
    assert tightness_probe(sm, 3) == pytest.approx(125.0, rel=1e-12)


def test_loglog_slope_recovers_power_law():
    ns = [100, 200, 400, 800]
    means = [3.0 * n**-0.5 for n in ns]
    slope, stderr = _loglog_slope(ns, means)
    assert slope == pytest.approx(-0.5, abs=1e-12)
    assert stderr == pytest.approx(0.0, abs=1e-10)


def test_scaling_experiment_pairing_and_jobs_invariance():
    spectra = {
        "iso": make_spectrum("isotropic", d=4, sigma1=1.0),
        "pl": make_spectrum("power_law", d=4, sigma1=1.0, alpha=1.0),
    }
    kwargs = dict(n_grid=[32, 64], trials=30, r=2,
                  search=SearchConfig(restarts=4, iters=30), rng=RngStream(41))
    r1 = scaling_experiment(spectra, jobs=1, **kwargs)
    r2 = scaling_experiment(spectra, jobs=4, **kwargs)
    assert r1["rows"] == r2["rows"]
    with pytest.raises(ValueError):
        scaling_experiment(spectra, [32], 5, 2, rng=RngStream(1))
