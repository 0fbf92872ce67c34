import numpy as np
import pytest

from effdim.precond import (
    ErmProblem,
    GradientServer,
    InnerSolveFailure,
    Loss,
    Preconditioner,
    SingularPhi,
    bregman_div,
    hessian_deviation_sup,
    mu_formula,
    newton_minimize,
    precond_bgd,
    relative_condition,
    solve_erm,
    tune_mu,
    vanilla_gd,
)
from effdim.rng import RngStream
from effdim.spectrum import make_spectrum, sample_gaussian


def _small_problem(loss_kind="logistic", n=80, d=6, lam=0.1, seed=1):
    sp = make_spectrum("power_law", d=d, sigma1=1.0, alpha=0.5)
    root = RngStream(seed)
    A = sample_gaussian(sp, n, root.child(0)).rows
    gen = root.child(1).generator()
    xn = gen.standard_normal(d)
    xn /= np.linalg.norm(xn)
    if loss_kind == "logistic":
        b = np.where(A @ xn >= 0, 1.0, -1.0)
    else:
        b = A @ xn + 0.05 * gen.standard_normal(n)
    return ErmProblem(A, b, Loss(loss_kind), lam)


def test_gradient_matches_finite_differences():
    for kind in ("logistic", "ridge", "hinge"):
        p = _small_problem(kind)
        gen = RngStream(5).generator()
        x = gen.standard_normal(p.d) * 0.3
        g = p.grad(x)
        h = 1e-6
        for k in range(p.d):
            e = np.zeros(p.d)
            e[k] = h
            fd = (p.value(x + e) - p.value(x - e)) / (2 * h)
            assert g[k] == pytest.approx(fd, abs=1e-5)


def test_hessian_matches_finite_differences():
    p = _small_problem("logistic")
    gen = RngStream(6).generator()
    x = gen.standard_normal(p.d) * 0.3
    H = p.hessian(x)
    h = 1e-5
    for k in range(p.d):
        e = np.zeros(p.d)
        e[k] = h
        fd = (p.grad(x + e) - p.grad(x - e)) / (2 * h)
        np.testing.assert_allclose(H[:, k], fd, atol=1e-6)


def test_hinge_kink_takes_zero_side():
    loss = Loss("hinge")
    assert loss.deriv(np.array([0.0]), np.array([0.0]))[0] == 0.0
    assert loss.value(np.array([0.0]), np.array([0.0]))[0] == 0.0


def test_logistic_curvature_constants():
    loss = Loss("logistic")
    assert loss.second(np.array([0.0]), np.array([1.0]))[0] == pytest.approx(0.25)
    z = np.linspace(-10, 10, 2001)
    third = loss.third(z, np.ones_like(z))
    assert np.abs(third).max() == pytest.approx(loss.hess_lipschitz, rel=1e-3)


def test_relative_condition_identity_and_scaling():
    p = _small_problem("logistic")
    probes = RngStream(7).generator().standard_normal((10, p.d)) * 0.5

    phi_same = Preconditioner(p, mu=0.0)
    cond = relative_condition(p, phi_same, probes)
    assert cond["L_rel"] == pytest.approx(1.0, abs=1e-10)
    assert cond["sigma_rel"] == pytest.approx(1.0, abs=1e-10)

    class Doubled:
        def hessian(self, x):
            return 2.0 * p.hessian(x)

    cond2 = relative_condition(p, Doubled(), probes)
    assert cond2["L_rel"] == pytest.approx(0.5, abs=1e-10)
    assert cond2["sigma_rel"] == pytest.approx(0.5, abs=1e-10)


def test_relative_condition_rejects_indefinite_phi():
    p = _small_problem("logistic")

    class Bad:
        def hessian(self, x):
            return np.diag([1.0] * (p.d - 1) + [-1.0])

    with pytest.raises(SingularPhi):
        relative_condition(p, Bad(), [np.zeros(p.d)])


def test_bregman_divergence_properties():
    p = _small_problem("logistic")
    phi = Preconditioner(p, mu=0.01)
    gen = RngStream(8).generator()
    for _ in range(10):
        x, y = gen.standard_normal((2, p.d))
        assert bregman_div(phi, x, y) >= -1e-12
    x = gen.standard_normal(p.d)
    assert bregman_div(phi, x, x) == pytest.approx(0.0, abs=1e-12)


def test_newton_solves_quadratic_in_one_step():
    H = np.diag([4.0, 1.0])
    b = np.array([1.0, -2.0])
    x = newton_minimize(lambda x: 0.5 * x @ H @ x - b @ x,
                        lambda x: H @ x - b, lambda x: H,
                        np.zeros(2))
    np.testing.assert_allclose(x, np.linalg.solve(H, b), atol=1e-12)


def test_newton_reports_failure_on_singular_hessian():
    with pytest.raises(InnerSolveFailure):
        newton_minimize(lambda x: x[0], lambda x: np.array([1.0]),
                        lambda x: np.zeros((1, 1)), np.zeros(1))


def test_solve_erm_reaches_stationarity():
    p = _small_problem("ridge")
    x = solve_erm(p)
    assert np.linalg.norm(p.grad(x)) <= 1e-9
    with pytest.raises(ValueError):
        solve_erm(_small_problem("hinge"))


def test_hessian_deviation_detects_known_gap():
    # ridge data Hessians are x-independent: deviation = ||A'A/n - B'B/m||_op
    pa = _small_problem("ridge", seed=2)
    pb = _small_problem("ridge", seed=3)
    expected = np.linalg.norm(pa.A.T @ pa.A / pa.n - pb.A.T @ pb.A / pb.n, 2)
    got = hessian_deviation_sup(pa, pb, restarts=2, iters=2, rng=RngStream(4))
    assert got == pytest.approx(expected, rel=1e-10)


def test_hessian_deviation_inits_dominate_probe_points():
    pa = _small_problem("logistic", seed=2)
    pb = _small_problem("logistic", seed=3)
    probes = RngStream(5).generator().standard_normal((8, pa.d))
    probes /= np.linalg.norm(probes, axis=1, keepdims=True)
    mu = hessian_deviation_sup(pa, pb, restarts=2, iters=10,
                               rng=RngStream(6), inits=probes)
    for x in probes:
        ev = np.linalg.eigvalsh(pa.data_hessian(x) - pb.data_hessian(x))
        assert max(abs(ev[0]), abs(ev[-1])) <= mu + 1e-12


def test_mu_formula_decreases_in_n():
    sp = make_spectrum("power_law", d=10, sigma1=1.0, alpha=1.0)
    vals = [mu_formula(sp, n, 0.05, 1.0, 0.1) for n in (100, 1000, 10000)]
    assert vals[0] > vals[1] > vals[2] > 0


def test_tune_mu_dispatch():
    pa = _small_problem("logistic", seed=2)
    pb = _small_problem("logistic", seed=3)
    sp = make_spectrum("power_law", d=pa.d, sigma1=1.0, alpha=0.5)
    m1 = tune_mu(pa, pb, method="measured", rng=RngStream(1),
                 restarts=2, iters=10)
    m2 = tune_mu(pa, pb, method="formula", spectrum=sp)
    assert m1 > 0 and m2 > 0
    with pytest.raises(ValueError):
        tune_mu(pa, pb, method="other")


def test_gradient_server_invariant_to_worker_count():
    p = _small_problem("logistic")
    x = RngStream(9).generator().standard_normal(p.d)
    g1 = GradientServer(p, 1).full_gradient(x)
    g5 = GradientServer(p, 5).full_gradient(x)
    np.testing.assert_allclose(g1, g5, atol=1e-14)
    np.testing.assert_allclose(g1, p.grad(x), atol=1e-14)


def test_precond_bgd_with_exact_phi_is_newton_fast():
    p = _small_problem("logistic", lam=0.05)
    f_star = p.value(solve_erm(p))
    phi = Preconditioner(p, mu=0.0)  # phi = F: one Bregman step solves it
    run = precond_bgd(p, phi, iters=5, f_star=f_star, gap_tol=1e-12)
    assert run.gaps[-1] <= 1e-12
    assert run.rounds <= 2


def test_precond_beats_vanilla_gd_in_rounds():
    p = _small_problem("logistic", n=400, d=8, lam=0.01, seed=12)
    aux = _small_problem("logistic", n=400, d=8, lam=0.01, seed=13)
    mu = hessian_deviation_sup(p, aux, restarts=4, iters=40, rng=RngStream(14))
    phi = Preconditioner(aux, mu)
    f_star = p.value(solve_erm(p))
    run_p = precond_bgd(p, phi, iters=100, f_star=f_star, gap_tol=1e-8)
    run_g = vanilla_gd(p, iters=100_000, f_star=f_star, gap_tol=1e-8)
    assert run_p.gaps[-1] <= 1e-8
    assert run_g.gaps[-1] <= 1e-8
    assert run_p.rounds < run_g.rounds


def test_gap_contracts_at_relative_condition_rate():
    p = _small_problem("logistic", n=400, d=8, lam=0.01, seed=12)
    aux = _small_problem("logistic", n=400, d=8, lam=0.01, seed=13)
    mu = hessian_deviation_sup(p, aux, restarts=4, iters=40, rng=RngStream(14))
    phi = Preconditioner(aux, mu)
    f_star = p.value(solve_erm(p))
    run = precond_bgd(p, phi, iters=30, f_star=f_star, gap_tol=1e-11)
    rate = 1.0 - 1.0 / phi.kappa
    for g0, g1 in zip(run.gaps, run.gaps[1:]):
        if g0 <= 1e-11:
            break
        assert g1 <= g0 * rate + 1e-13
