"""Regularized ERM, Hessian-deviation measurement, and Bregman
preconditioned gradient descent.

The preconditioner phi is the same ERM objective evaluated on an
auxiliary sample plus an extra mu/2 ||x||^2 term.  When the uniform
Hessian deviation between the two samples is at most mu, F is 1-smooth
and (1 + 2 mu / lambda)^{-1}-strongly convex relative to phi, so Bregman
proximal gradient steps contract the optimality gap by that relative
condition number per communication round.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg

from .linalg import sym_eigh
from .rng import RngStream
from .spectrum import CovarianceSpectrum, effective_dimension


class SingularPhi(Exception):
    """Preconditioner Hessian is not positive definite at a probe point."""


class InnerSolveFailure(Exception):
    """Damped Newton failed to solve the Bregman proximal subproblem."""


_LOGISTIC_HESS_LIP = 1.0 / (6.0 * math.sqrt(3.0))  # max |d/dz sigmoid'(z)|


@dataclass(frozen=True)
class Loss:
    """Scalar margin loss: logistic, ridge (squared), or hinge.

    The hinge derivative takes the 0-side value at its kink so that
    subgradient evaluations are deterministic.
    """

    kind: str

    def __post_init__(self):
        if self.kind not in ("logistic", "ridge", "hinge"):
            raise ValueError(f"unknown loss {self.kind!r}")

    def value(self, z, b):
        if self.kind == "logistic":
            return np.logaddexp(0.0, -b * z)
        if self.kind == "ridge":
            return 0.5 * (z - b) ** 2
        return np.maximum(z - b, 0.0)

    def deriv(self, z, b):
        if self.kind == "logistic":
            return -b * _sigmoid(-b * z)
        if self.kind == "ridge":
            return z - b
        return (z > b).astype(float)

    def second(self, z, b):
        if self.kind == "logistic":
            s = _sigmoid(b * z)
            return s * (1.0 - s)
        if self.kind == "ridge":
            return np.ones_like(np.asarray(z, dtype=float))
        return np.zeros_like(np.asarray(z, dtype=float))

    def third(self, z, b):
        if self.kind == "logistic":
            s = _sigmoid(b * z)
            return b * s * (1.0 - s) * (1.0 - 2.0 * s)
        return np.zeros_like(np.asarray(z, dtype=float))

    @property
    def second_max(self) -> float:
        return {"logistic": 0.25, "ridge": 1.0, "hinge": 0.0}[self.kind]

    @property
    def hess_lipschitz(self) -> float:
        return {"logistic": _LOGISTIC_HESS_LIP, "ridge": 0.0, "hinge": 0.0}[self.kind]


def _sigmoid(z):
    return 0.5 * (1.0 + np.tanh(0.5 * np.asarray(z, dtype=float)))


@dataclass(frozen=True)
class ErmProblem:
    """F(x) = lam/2 ||x||^2 + (1/n) sum_i loss(a_i^T x; b_i)."""

    A: np.ndarray
    b: np.ndarray
    loss: Loss
    lam: float = 0.0

    def __post_init__(self):
        A = np.asarray(self.A, dtype=float)
        b = np.asarray(self.b, dtype=float)
        if A.ndim != 2 or b.shape != (A.shape[0],):
            raise ValueError("A must be (n, d) with one label per row")
        if not (np.isfinite(A).all() and np.isfinite(b).all()):
            raise ValueError("non-finite entries in problem data")
        if self.lam < 0:
            raise ValueError("lam must be nonnegative")
        object.__setattr__(self, "A", A)
        object.__setattr__(self, "b", b)

    @property
    def n(self) -> int:
        return self.A.shape[0]

    @property
    def d(self) -> int:
        return self.A.shape[1]

    def value(self, x: np.ndarray) -> float:
        z = self.A @ x
        return 0.5 * self.lam * float(x @ x) + float(np.mean(self.loss.value(z, self.b)))

    def grad(self, x: np.ndarray) -> np.ndarray:
        z = self.A @ x
        return self.lam * x + self.A.T @ self.loss.deriv(z, self.b) / self.n

    def hessian(self, x: np.ndarray) -> np.ndarray:
        z = self.A @ x
        w = self.loss.second(z, self.b)
        return self.lam * np.eye(self.d) + (self.A.T * w) @ self.A / self.n

    def data_hessian(self, x: np.ndarray) -> np.ndarray:
        """Hessian of the data term only (no lam/2 ||x||^2)."""
        z = self.A @ x
        w = self.loss.second(z, self.b)
        return (self.A.T * w) @ self.A / self.n

    def smoothness(self) -> float:
        """Upper bound on the operator norm of the Hessian, for GD steps."""
        opnorm = float(np.linalg.norm(self.A, 2))
        return self.lam + self.loss.second_max * opnorm**2 / self.n


@dataclass(frozen=True)
class Preconditioner:
    """phi = ERM on an auxiliary sample plus an extra mu/2 ||x||^2."""

    tilde: ErmProblem
    mu: float

    def __post_init__(self):
        if self.mu < 0:
            raise ValueError("mu must be nonnegative")

    @property
    def kappa(self) -> float:
        """Relative condition bound 1 + 2 mu / lam."""
        if self.tilde.lam <= 0:
            raise SingularPhi("kappa bound requires lam > 0")
        return 1.0 + 2.0 * self.mu / self.tilde.lam

    def value(self, x: np.ndarray) -> float:
        return self.tilde.value(x) + 0.5 * self.mu * float(x @ x)

    def grad(self, x: np.ndarray) -> np.ndarray:
        return self.tilde.grad(x) + self.mu * x

    def hessian(self, x: np.ndarray) -> np.ndarray:
        return self.tilde.hessian(x) + self.mu * np.eye(self.tilde.d)


def bregman_div(phi, x: np.ndarray, y: np.ndarray) -> float:
    """D_phi(x, y) = phi(x) - phi(y) - <grad phi(y), x - y>."""
    return float(phi.value(x) - phi.value(y) - phi.grad(y) @ (x - y))


def relative_condition(problem: ErmProblem, phi, probes) -> dict:
    """Relative smoothness / strong-convexity over a set of probe points.

    Returns generalized-eigenvalue extremes of (hess F, hess phi) at each
    probe: L_rel = max over probes of the largest eigenvalue, sigma_rel =
    min over probes of the smallest.  Raises SingularPhi when the
    preconditioner Hessian is not positive definite at some probe.
    """
    L_vals, s_vals = [], []
    for x in probes:
        HF = problem.hessian(x)
        HP = phi.hessian(x)
        try:
            np.linalg.cholesky(HP)
        except np.linalg.LinAlgError:
            raise SingularPhi("preconditioner Hessian not positive definite")
        eig = scipy.linalg.eigh(HF, HP, eigvals_only=True)
        L_vals.append(float(eig[-1]))
        s_vals.append(float(eig[0]))
    return {
        "L_rel": max(L_vals),
        "sigma_rel": min(s_vals),
        "per_probe": list(zip(L_vals, s_vals)),
    }


def hessian_deviation_sup(
    problem_a: ErmProblem,
    problem_b: ErmProblem,
    radius: float = 1.0,
    restarts: int = 16,
    iters: int = 100,
    step: float | None = None,
    rng: RngStream = RngStream(0),
    inits: np.ndarray | None = None,
) -> float:
    """sup_{||x|| <= radius} || H_a(x) - H_b(x) ||_op for the data Hessians.

    Lower estimate by multistart projected gradient ascent; the ascent
    direction at x uses the top eigenvector v of the deviation matrix,
    since d/dx v^T (H_a - H_b)(x) v has the closed form
    (1/n) sum_i loss'''(a_i^T x)(v^T a_i)^2 a_i (minus the same for b).

    ``inits`` adds explicit starting points (each inside the radius ball)
    to the random restarts; the returned value then dominates the
    deviation at every supplied point even if ascent from it stalls.
    """
    if problem_a.d != problem_b.d:
        raise ValueError("dimension mismatch")
    d = problem_a.d
    gen = rng.generator()

    def dev_matrix(x):
        return problem_a.data_hessian(x) - problem_b.data_hessian(x)

    def top_pair(M):
        evals, evecs = sym_eigh(M)
        if abs(evals[0]) >= abs(evals[-1]):
            return float(evals[0]), evecs[:, 0], 1.0
        return float(evals[-1]), evecs[:, -1], -1.0

    def quad_grad(problem, x, v):
        z = problem.A @ x
        t = problem.loss.third(z, problem.b)
        w = t * (problem.A @ v) ** 2
        return problem.A.T @ w / problem.n

    starts = []
    for _ in range(restarts):
        x = gen.standard_normal(d)
        starts.append(x * radius / np.linalg.norm(x))
    if inits is not None:
        for x in np.atleast_2d(np.asarray(inits, dtype=float)):
            if np.linalg.norm(x) > radius * (1 + 1e-12):
                raise ValueError("init point outside the search ball")
            starts.append(x.copy())

    best = 0.0
    for x in starts:
        lr = step if step is not None else 0.5 * radius
        for _ in range(iters):
            M = dev_matrix(x)
            lam, v, sign = top_pair(M)
            best = max(best, abs(lam))
            g = sign * (quad_grad(problem_a, x, v) - quad_grad(problem_b, x, v))
            x = x + lr * g
            nrm = np.linalg.norm(x)
            if nrm > radius:
                x *= radius / nrm
        lam, _, _ = top_pair(dev_matrix(x))
        best = max(best, abs(lam))
    return best


def mu_formula(s: CovarianceSpectrum, n: int, delta: float,
               radius: float, hess_lipschitz: float,
               constant: float = 1.0) -> float:
    """Printed high-probability bound on the uniform Hessian deviation."""
    if not 0 < delta < 1:
        raise ValueError("delta must be in (0, 1)")
    sigma1 = float(s.sigmas[0])
    d = s.dim
    ln_d = math.log(d) if d > 1 else 0.0
    ln_inv = math.log(1.0 / delta)
    d1 = effective_dimension(s, 1)
    d3 = effective_dimension(s, 3)
    term1 = (d3 * ln_d + ln_inv) * math.sqrt(d1 + math.log(n / delta)) / n
    term2 = (math.sqrt(ln_inv) + math.sqrt(d1 * ln_d)) / math.sqrt(n)
    return constant * radius * sigma1**3 * hess_lipschitz * (term1 + term2)


def tune_mu(problem: ErmProblem, aux: ErmProblem, method: str = "measured",
            spectrum: CovarianceSpectrum | None = None, delta: float = 0.05,
            radius: float = 1.0, rng: RngStream = RngStream(0), **search) -> float:
    """mu for the preconditioner: measured sup deviation or the printed bound."""
    if method == "measured":
        return hessian_deviation_sup(problem, aux, radius=radius, rng=rng, **search)
    if method == "formula":
        if spectrum is None:
            raise ValueError("formula method requires the data spectrum")
        return mu_formula(spectrum, problem.n, delta, radius,
                          problem.loss.hess_lipschitz)
    raise ValueError(f"unknown method {method!r}")


class GradientServer:
    """In-process server/worker split of a dataset for round counting.

    Each call to :meth:`full_gradient` is one communication round: every
    worker returns the gradient of its shard at the broadcast point and
    the server averages them.  Results match the monolithic gradient
    exactly regardless of the number of workers.
    """

    def __init__(self, problem: ErmProblem, workers: int = 1):
        if workers < 1:
            raise ValueError("need at least one worker")
        self.problem = problem
        idx = np.array_split(np.arange(problem.n), min(workers, problem.n))
        self.shards = [
            (problem.A[ix], problem.b[ix]) for ix in idx if len(ix) > 0
        ]
        self.rounds = 0

    def full_gradient(self, x: np.ndarray) -> np.ndarray:
        self.rounds += 1
        total = np.zeros_like(x)
        for A, b in self.shards:
            z = A @ x
            total += A.T @ self.problem.loss.deriv(z, b)
        return self.problem.lam * x + total / self.problem.n


def newton_minimize(value, grad, hess, x0: np.ndarray, tol: float = 1e-12,
                    max_iter: int = 100) -> np.ndarray:
    """Damped Newton with Cholesky solves and backtracking line search."""
    x = np.asarray(x0, dtype=float).copy()
    scale = max(abs(value(x)), 1.0)
    for _ in range(max_iter):
        g = grad(x)
        if np.linalg.norm(g) <= tol * scale:
            return x
        H = hess(x)
        try:
            c, low = scipy.linalg.cho_factor(H)
            step = scipy.linalg.cho_solve((c, low), g)
        except np.linalg.LinAlgError as exc:
            raise InnerSolveFailure("Hessian factorization failed") from exc
        except scipy.linalg.LinAlgError as exc:
            raise InnerSolveFailure("Hessian factorization failed") from exc
        t = 1.0
        f0 = value(x)
        descent = float(g @ step)
        for _ in range(60):
            if value(x - t * step) <= f0 - 1e-4 * t * descent:
                break
            t *= 0.5
        else:
            raise InnerSolveFailure("line search stalled")
        x = x - t * step
    g = grad(x)
    if np.linalg.norm(g) <= math.sqrt(tol) * scale:
        return x
    raise InnerSolveFailure(f"no convergence in {max_iter} Newton steps")


def solve_erm(problem: ErmProblem, x0=None, tol: float = 1e-13) -> np.ndarray:
    """High-accuracy minimizer of a smooth ERM problem (reference optimum)."""
    if problem.loss.kind == "hinge":
        raise ValueError("hinge objective is nonsmooth; no Newton reference")
    x0 = np.zeros(problem.d) if x0 is None else x0
    return newton_minimize(problem.value, problem.grad, problem.hessian, x0, tol=tol)


@dataclass(frozen=True)
class PrecondRun:
    xs: np.ndarray  # (T+1, d) iterates
    values: list[float]
    rounds: int
    gaps: list[float] = field(default_factory=list)


def precond_bgd(
    problem: ErmProblem,
    phi: Preconditioner,
    x0: np.ndarray | None = None,
    eta: float = 1.0,
    iters: int = 50,
    f_star: float | None = None,
    gap_tol: float | None = None,
    workers: int = 1,
) -> PrecondRun:
    """Bregman proximal gradient descent x_{t+1} = argmin <grad F(x_t), x>
    + (1/eta) D_phi(x, x_t), inner problems solved by damped Newton.

    One outer iteration costs one gradient communication round.  Stops
    early when f_star and gap_tol are given and the gap falls below tol.
    """
    x = np.zeros(problem.d) if x0 is None else np.asarray(x0, dtype=float).copy()
    server = GradientServer(problem, workers)
    xs = [x.copy()]
    values = [problem.value(x)]
    gaps = [] if f_star is None else [values[0] - f_star]
    for _ in range(iters):
        g = server.full_gradient(x)
        shift = g - phi.grad(x) / eta
        x = newton_minimize(
            lambda y: float(shift @ y) + phi.value(y) / eta,
            lambda y: shift + phi.grad(y) / eta,
            lambda y: phi.hessian(y) / eta,
            x,
        )
        xs.append(x.copy())
        values.append(problem.value(x))
        if f_star is not None:
            gaps.append(values[-1] - f_star)
            if gap_tol is not None and gaps[-1] <= gap_tol:
                break
    return PrecondRun(np.array(xs), values, server.rounds, gaps)


def vanilla_gd(
    problem: ErmProblem,
    x0: np.ndarray | None = None,
    step: float | None = None,
    iters: int = 10_000,
    f_star: float | None = None,
    gap_tol: float | None = None,
    workers: int = 1,
) -> PrecondRun:
    """Plain gradient descent with step 1/L, same round accounting."""
    x = np.zeros(problem.d) if x0 is None else np.asarray(x0, dtype=float).copy()
    if step is None:
        step = 1.0 / problem.smoothness()
    server = GradientServer(problem, workers)
    xs = [x.copy()]
    values = [problem.value(x)]
    gaps = [] if f_star is None else [values[0] - f_star]
    for _ in range(iters):
        x = x - step * server.full_gradient(x)
        xs.append(x.copy())
        values.append(problem.value(x))
        if f_star is not None:
            gaps.append(values[-1] - f_star)
            if gap_tol is not None and gaps[-1] <= gap_tol:
                break
    return PrecondRun(np.array(xs), values, server.rounds, gaps)
