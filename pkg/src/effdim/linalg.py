"""Dense symmetric linear algebra and tensor operations.

Matrices are plain float64 numpy arrays, symmetrized on construction via
:func:`sym_matrix`.  Symmetric tensors of order p are dense ``dim**p``
arrays, symmetrized over all index permutations by :func:`sym_tensor`.
All functions here are pure; nothing is mutated in place.
"""

from __future__ import annotations

import itertools
import math

import numpy as np

from .rng import RngStream


class NonConvergence(Exception):
    """Eigensolver failed to converge."""


class NotPsd(Exception):
    """Matrix has a significantly negative eigenvalue."""


class DimTooLarge(Exception):
    """Dimension exceeds the cap of an enumeration-based oracle."""


def sym_matrix(entries) -> np.ndarray:
    """Return the symmetrized copy (m + m.T)/2 as float64."""
    m = np.asarray(entries, dtype=float)
    if m.ndim != 2 or m.shape[0] != m.shape[1] or m.shape[0] < 1:
        raise ValueError(f"expected a square matrix, got shape {m.shape}")
    return 0.5 * (m + m.T)


def sym_tensor(entries, order: int | None = None) -> np.ndarray:
    """Symmetrize a dense tensor over all index permutations."""
    t = np.asarray(entries, dtype=float)
    p = t.ndim if order is None else order
    if t.ndim != p or p < 2:
        raise ValueError(f"expected an order-{p} tensor, got shape {t.shape}")
    if len(set(t.shape)) != 1:
        raise ValueError(f"tensor axes must share one dimension, got {t.shape}")
    out = np.zeros_like(t)
    for perm in itertools.permutations(range(p)):
        out += np.transpose(t, perm)
    return out / math.factorial(p)


def rank1_tensor(v: np.ndarray, order: int) -> np.ndarray:
    """v^{⊗p} as a dense array."""
    v = np.asarray(v, dtype=float)
    out = v
    for _ in range(order - 1):
        out = np.multiply.outer(out, v)
    return out


def sym_eigh(m: np.ndarray, tol: float = 1e-12):
    """Eigendecomposition of a symmetric matrix, eigenvalues descending.

    Returns ``(eigenvalues, eigenvectors)`` with orthonormal columns and
    reconstruction error ``||m - V diag(w) V^T||_F <= tol * ||m||_F``.
    Raises :class:`NonConvergence` if the LAPACK driver fails or the
    reconstruction check does not hold.
    """
    if tol <= 0:
        raise ValueError("tol must be positive")
    m = np.asarray(m, dtype=float)
    if not np.allclose(m, m.T, atol=1e-12 * (1 + np.abs(m).max())):
        raise ValueError("matrix is not symmetric")
    try:
        w, v = np.linalg.eigh(m)
    except np.linalg.LinAlgError as exc:
        raise NonConvergence(str(exc)) from exc
    order = np.argsort(w)[::-1]
    w, v = w[order], v[:, order]
    norm = np.linalg.norm(m)
    resid = np.linalg.norm(m - (v * w) @ v.T)
    if norm > 0 and resid > tol * norm:
        raise NonConvergence(f"reconstruction error {resid:.3e} exceeds tol")
    return w, v


def psd_sqrt(m: np.ndarray, tol: float = 1e-10) -> np.ndarray:
    """Symmetric PSD square root; small negative eigenvalues are clamped."""
    w, v = sym_eigh(m)
    opnorm = max(abs(w[0]), abs(w[-1]), 1.0)
    if w[-1] < -tol * opnorm:
        raise NotPsd(f"eigenvalue {w[-1]:.3e} below -tol*||m||_op")
    w = np.clip(w, 0.0, None)
    return sym_matrix((v * np.sqrt(w)) @ v.T)


def psd_pinv(m: np.ndarray, rank_tol: float = 1e-12) -> np.ndarray:
    """Moore-Penrose pseudo-inverse of a symmetric PSD matrix.

    Eigenvalues below ``rank_tol * sigma_max`` are treated as exact zeros.
    """
    w, v = sym_eigh(m)
    cutoff = rank_tol * max(w[0], 0.0)
    inv = np.where(w > cutoff, 1.0 / np.where(w > cutoff, w, 1.0), 0.0)
    return sym_matrix((v * inv) @ v.T)


def tensor_apply(t: np.ndarray, x: np.ndarray) -> float:
    """<t, x^{⊗p}> for a single vector x."""
    out = t
    for _ in range(t.ndim):
        out = out @ x
    return float(out)


def _tensor_contract_all_but_one(t: np.ndarray, x: np.ndarray) -> np.ndarray:
    """Contract t with x along all axes but the first: t[i, j, ...] x_j ... ."""
    out = t
    for _ in range(t.ndim - 1):
        out = out @ x
    return out


def tensor_opnorm(
    t: np.ndarray,
    restarts: int = 16,
    iters: int = 200,
    rng: RngStream = RngStream(0),
    tol: float = 1e-12,
) -> float:
    """Lower estimate of the tensor operator norm via symmetric power iteration.

    For symmetric t the supremum of <t, x_1 ⊗ ... ⊗ x_p> over unit rank-one
    tensors is attained on the diagonal x_1 = ... = x_p up to sign, so we
    run higher-order power iteration on |<t, x^{⊗p}>| from ``restarts``
    random starts and keep the best value.  Deterministic given ``rng``.
    """
    if restarts < 1:
        raise ValueError("restarts must be >= 1")
    p = t.ndim
    d = t.shape[0]
    if not np.any(t):
        return 0.0
    gen = rng.generator()
    best = 0.0
    for _ in range(restarts):
        x = gen.standard_normal(d)
        x /= np.linalg.norm(x)
        val = abs(tensor_apply(t, x))
        for _ in range(iters):
            g = _tensor_contract_all_but_one(t, x)
            # S-HOPM step; flip toward the current sign so |value| increases.
            if tensor_apply(t, x) < 0:
                g = -g
            nrm = np.linalg.norm(g)
            if nrm == 0:
                break
            x_new = g / nrm
            new_val = abs(tensor_apply(t, x_new))
            if new_val <= val * (1 + tol):
                x = x_new
                val = max(val, new_val)
                break
            x, val = x_new, new_val
        best = max(best, val)
    return best


def sphere_net(dim: int, resolution: float) -> np.ndarray:
    """Unit-sphere net: every unit vector is within ``resolution`` of a point.

    Enumeration oracle only, capped at dim <= 4.  Built recursively from
    polar-angle grids; the per-level steps are chosen so the accumulated
    Euclidean error stays below ``resolution``.
    """
    if dim > 4:
        raise DimTooLarge(f"sphere_net supports dim <= 4, got {dim}")
    if dim < 1:
        raise ValueError("dim must be >= 1")
    if not (0 < resolution < 1):
        raise ValueError("resolution must lie in (0, 1)")
    return _sphere_net_rec(dim, resolution)


def _sphere_net_rec(dim: int, res: float) -> np.ndarray:
    if dim == 1:
        return np.array([[1.0], [-1.0]])
    if dim == 2:
        # Full-circle angular grid; chord error <= half the angular step.
        n = int(math.ceil(2.0 * math.pi / res))
        angles = 2.0 * math.pi * np.arange(n) / n
        return np.column_stack([np.cos(angles), np.sin(angles)])
    # Split the error budget: sqrt(2)*h/2 for the polar angle, rest recursive.
    h = res / (math.sqrt(2.0) * (dim - 1))
    thetas = np.arange(0.0, math.pi + h, h)
    sub_res = res * (dim - 2) / (dim - 1)
    rows = []
    for theta in thetas:
        s = math.sin(theta)
        c = math.cos(theta)
        if s < 1e-12:
            sub = _sphere_net_rec(dim - 1, 0.5)[:1]
        else:
            sub = _sphere_net_rec(dim - 1, min(sub_res / s, 0.999))
        block = np.empty((len(sub), dim))
        block[:, 0] = c
        block[:, 1:] = s * sub
        rows.append(block)
    pts = np.vstack(rows)
    pts /= np.linalg.norm(pts, axis=1, keepdims=True)
    return np.unique(np.round(pts, 12), axis=0)
