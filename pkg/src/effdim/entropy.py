"""Ellipsoid metric-entropy bounds and constructive desk-scale coverings.

The unit-entropy bound is reported as an explicit (K_b, correction) pair
with the universal constant ``c`` exposed as a parameter (default 1), so
downstream comparisons can fit ``c`` empirically.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numpy as np

from .rng import RngStream
from .spectrum import CovarianceSpectrum, effective_dimension


class DimTooLarge(Exception):
    """Constructive covering is capped at d <= 5."""


class CoverTooLarge(Exception):
    """Grid enumeration would exceed the cell cap."""


class TruncationInsufficient(Exception):
    """Tail envelope cannot certify the requested quantity."""


@dataclass(frozen=True)
class EllipsoidAxes:
    """Semi-axes b_1 >= ... >= b_d > 0 of an axis-aligned ellipsoid."""

    b: np.ndarray

    def __post_init__(self):
        b = np.asarray(self.b, dtype=float)
        object.__setattr__(self, "b", b)
        if b.ndim != 1 or len(b) < 1:
            raise ValueError("axes must be a nonempty 1-d array")
        if not np.all(b > 0):
            raise ValueError("axes must be strictly positive")
        if np.any(np.diff(b) > 0):
            raise ValueError("axes must be non-increasing")

    @property
    def dim(self) -> int:
        return len(self.b)


@dataclass(frozen=True)
class EntropyBound:
    """Unit-entropy bound split into K_b and the c-multiplied bracket."""

    kb: float
    mb: int
    correction: float
    c: float

    @property
    def total(self) -> float:
        return self.kb + self.c * self.correction


@dataclass(frozen=True)
class BallCover:
    """Centers of an epsilon-ball cover plus construction metadata."""

    epsilon: float
    centers: np.ndarray
    grid_spacing: float

    @property
    def size(self) -> int:
        return len(self.centers)


def kb_mb(e: EllipsoidAxes) -> tuple[float, int]:
    """m_b = #{i : b_i > 1}; K_b = sum of ln(b_i) over those axes."""
    mb = int(np.sum(e.b > 1.0))
    kb = float(np.sum(np.log(e.b[:mb]))) if mb else 0.0
    return kb, mb


def unit_entropy_bound(e: EllipsoidAxes, c: float = 1.0) -> EntropyBound:
    """Non-asymptotic unit-entropy bound K_b + c[ln d + sqrt(ln+ b1 m_b ln d)]."""
    if c <= 0:
        raise ValueError("c must be positive")
    kb, mb = kb_mb(e)
    ln_d = math.log(e.dim)
    ln_b1 = max(math.log(e.b[0]), 0.0)
    correction = ln_d + math.sqrt(ln_b1 * mb * ln_d)
    return EntropyBound(kb=kb, mb=mb, correction=correction, c=c)


def m_eps(s: CovarianceSpectrum, eps: float) -> int:
    """Exact count of sigma_i > eps * sigma_1."""
    if eps <= 0:
        raise ValueError("eps must be positive")
    return int(np.sum(s.sigmas > eps * s.sigmas[0]))


def eps_entropy_bound(s: CovarianceSpectrum, eps: float, r: int = 1,
                      c: float = 1.0) -> float:
    """Entropy bound for covering the unit sphere in the Sigma-metric.

    Returns the minimum of the exact per-axis sum form and the closed-form
    d_eff(r) bound, each plus the shared c-bracket.  Also asserts the
    companion inequality m_eps <= 1 + (d_eff(r) - 1) * eps^{-2/r}.
    """
    if not (0 < eps <= 1):
        raise ValueError("eps must lie in (0, 1]")
    if r < 1:
        raise ValueError("r must be >= 1")
    d = s.dim
    me = m_eps(s, eps)
    deff = effective_dimension(s, r)
    assert me <= 1 + (deff - 1) * eps ** (-2.0 / r) + 1e-9, "m_eps inequality violated"
    ln_inv_eps = math.log(1.0 / eps)
    ln_d = math.log(d)
    bracket = ln_d + math.sqrt(max(ln_inv_eps, 0.0) * ln_d * me)
    if d == 1:
        warnings.warn("eps_entropy_bound degenerates at d=1; using ln(1/eps) + c*bracket")
        return ln_inv_eps + c * bracket
    exact_sum = float(np.sum(np.log(s.sigmas[:me] / (eps * s.sigmas[0])))) if me else 0.0
    a = eps ** (-2.0 / r) * (deff - 1.0)
    lead = min(d - 1.0, a / math.e) / (2.0 / r)
    log_term = math.log(max(math.e, a / (d - 1.0)))
    closed_form = ln_inv_eps + lead * log_term
    return min(exact_sum, closed_form) + c * bracket


def spectral_entropy_bound(d_spec: float, eps: float) -> float:
    """Leading-order infinite-dimensional bound d_spec * ln(1/eps)^2.

    The (1 + o(1)) factor of the asymptotic statement is a caveat, not a
    number; callers comparing against data must fit their own constant.
    """
    if d_spec <= 0:
        raise ValueError("d_spec must be positive")
    if not (0 < eps < 1):
        raise ValueError("eps must lie in (0, 1)")
    return float(d_spec * math.log(1.0 / eps) ** 2)


def infinite_ellipsoid_stats(b_seq, truncation: int,
                             envelope: tuple[float, float] | None = None):
    """(K_b, m_b, M_b) for an infinite-dimensional ellipsoid.

    ``b_seq`` supplies axes b_1 >= b_2 >= ... up to ``truncation`` (callable
    on 1-based indices or array-like).  ``envelope = (amplitude, exponent)``
    certifies b_i <= amplitude * i^{-exponent} beyond the truncation; the
    tail of sum b_i^2 is then bounded by the integral of the envelope.

    K_b sums ln+(b_i) (infinite-dimensional convention), m_b counts
    b_i >= 1/2, and M_b is the least n with certified tail sum <= 1/2.
    Raises :class:`TruncationInsufficient` when the envelope cannot certify
    m_b or M_b within the truncation.
    """
    if truncation < 1:
        raise ValueError("truncation must be >= 1")
    idx = np.arange(1, truncation + 1, dtype=float)
    if callable(b_seq):
        b = np.asarray([float(b_seq(int(i))) for i in idx])
    else:
        b = np.asarray(b_seq, dtype=float)[:truncation]
        if len(b) < truncation:
            truncation = len(b)
            idx = idx[:truncation]
    if np.any(b <= 0) or np.any(np.diff(b) > 1e-15):
        raise ValueError("b_seq must be positive and non-increasing")

    def tail_sq_bound(n: int) -> float:
        """Certified upper bound on sum_{i > n} b_i^2."""
        within = float(np.sum(b[n:] ** 2))
        if envelope is None:
            raise TruncationInsufficient("no tail envelope supplied")
        amp, q = envelope
        if 2 * q <= 1:
            raise TruncationInsufficient("envelope exponent too small for a summable tail")
        beyond = amp**2 * truncation ** (1.0 - 2.0 * q) / (2.0 * q - 1.0)
        return within + beyond

    if b[-1] >= 0.5:
        raise TruncationInsufficient("m_b not certified: b still >= 1/2 at truncation")
    mb = int(np.sum(b >= 0.5))
    if b[-1] > 1.0:
        raise TruncationInsufficient("K_b not certified: b still > 1 at truncation")
    kb = float(np.sum(np.maximum(np.log(b), 0.0)))

    Mb = None
    for n in range(0, truncation):
        if tail_sq_bound(n) <= 0.5:
            Mb = max(n, 1)
            break
    if Mb is None:
        raise TruncationInsufficient("M_b not certified within truncation")
    return kb, mb, Mb


def build_cover(e: EllipsoidAxes, eps: float, rng: RngStream = RngStream(0),
                max_cells: int = 10**7) -> BallCover:
    """Constructive eps-cover of the ellipsoid by an axis-aligned grid.

    Grid spacing eps/sqrt(d); a center is kept iff its grid cell intersects
    the ellipsoid (separable exact test), so every ellipsoid point is within
    half a cell diagonal (= eps/2) of a kept center.  The cover property is
    guaranteed by this geometry; ``rng`` is accepted for interface parity
    and unused.
    """
    if e.dim > 5:
        raise DimTooLarge(f"build_cover supports d <= 5, got {e.dim}")
    if eps <= 0:
        raise ValueError("eps must be positive")
    d = e.dim
    s = eps / math.sqrt(d)
    axes_counts = [int(math.floor((bi + s / 2) / s)) for bi in e.b]
    total = 1
    for k in axes_counts:
        total *= 2 * k + 1
    if total > max_cells:
        raise CoverTooLarge(f"grid would enumerate {total} cells > {max_cells}")
    grids = [s * np.arange(-k, k + 1, dtype=float) for k in axes_counts]
    mesh = np.meshgrid(*grids, indexing="ij")
    pts = np.stack([m.ravel() for m in mesh], axis=1)
    # Cell [c - s/2, c + s/2]^d meets E_b iff the per-axis closest point is inside.
    closest = np.maximum(np.abs(pts) - s / 2, 0.0)
    inside = np.sum((closest / e.b) ** 2, axis=1) <= 1.0
    return BallCover(epsilon=eps, centers=pts[inside], grid_spacing=s)


def sample_ellipsoid(e: EllipsoidAxes, n: int, rng: RngStream) -> np.ndarray:
    """Uniform samples from the ellipsoid.

    Rejection from the bounding box; falls back to the normalized-Gaussian
    radial method when box acceptance is below 1e-4.
    """
    if n < 1:
        raise ValueError("n_samples must be >= 1")
    gen = rng.generator()
    d = e.dim
    out = np.empty((n, d))
    got = 0
    attempts = 0
    max_attempts = max(int(n / 1e-4), 10 * n)
    while got < n and attempts < max_attempts:
        want = min(max(4 * (n - got), 1024), 1 << 20)
        cand = gen.uniform(-1.0, 1.0, size=(want, d)) * e.b
        ok = cand[np.sum((cand / e.b) ** 2, axis=1) <= 1.0]
        take = min(len(ok), n - got)
        out[got:got + take] = ok[:take]
        got += take
        attempts += want
    if got < n:
        # Gaussian direction + radial u^{1/d} law, then scale by the axes.
        z = gen.standard_normal((n - got, d))
        z /= np.linalg.norm(z, axis=1, keepdims=True)
        radii = gen.uniform(size=(n - got, 1)) ** (1.0 / d)
        out[got:] = z * radii * e.b
    return out


def verify_cover(cover: BallCover, e: EllipsoidAxes, n_samples: int,
                 rng: RngStream) -> dict:
    """Sample ellipsoid points; report nearest-center distance violations."""
    pts = sample_ellipsoid(e, n_samples, rng)
    if len(cover.centers) == 0:
        return {"violations": n_samples, "max_dist": float("inf")}
    # Chunked nearest-center distances to bound memory.
    max_d = 0.0
    violations = 0
    centers = cover.centers
    step = max(1, int(5e7 // max(len(centers), 1)))
    for i in range(0, len(pts), step):
        block = pts[i:i + step]
        d2 = (
            np.sum(block**2, axis=1)[:, None]
            - 2.0 * block @ centers.T
            + np.sum(centers**2, axis=1)[None, :]
        )
        nearest = np.sqrt(np.maximum(d2.min(axis=1), 0.0))
        violations += int(np.sum(nearest > cover.epsilon))
        max_d = max(max_d, float(nearest.max()))
    return {"violations": violations, "max_dist": max_d}
