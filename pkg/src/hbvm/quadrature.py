"""Shifted Legendre bases and Gauss-Legendre quadrature on [0, 1].

All polynomials here are the Legendre polynomials shifted to [0, 1] and
scaled to be orthonormal in L^2([0, 1]):

    P_0(x) = 1,   P_1(x) = sqrt(3) * (2x - 1),   int_0^1 P_i P_j = delta_ij.

Everything is computed on demand in double precision via three-term
recurrences on this family directly; no tabulated coefficients, so the
number of abscissae is unbounded in principle (validated up to k = 64).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import RootFindingError

__all__ = [
    "QuadratureRule",
    "BasisMatrices",
    "legendre_eval",
    "legendre_antiderivative",
    "gauss_legendre_rule",
    "basis_matrices",
]


def _legendre_table(jmax: int, x, derivative: bool = False):
    """Values of P_0 .. P_jmax at the points ``x`` (shape (jmax+1,) + x.shape).

    With ``derivative=True`` also returns the table of x-derivatives.
    """
    x = np.asarray(x, dtype=float)
    vals = np.empty((jmax + 1,) + x.shape)
    vals[0] = 1.0
    if jmax >= 1:
        vals[1] = np.sqrt(3.0) * (2.0 * x - 1.0)
    for j in range(1, jmax):
        a = np.sqrt(2.0 * j + 3.0) / (j + 1.0)
        b = np.sqrt(2.0 * j + 1.0)
        c = j / np.sqrt(2.0 * j - 1.0)
        vals[j + 1] = a * (b * (2.0 * x - 1.0) * vals[j] - c * vals[j - 1])
    if not derivative:
        return vals
    ders = np.zeros_like(vals)
    if jmax >= 1:
        ders[1] = 2.0 * np.sqrt(3.0)
    for j in range(1, jmax):
        a = np.sqrt(2.0 * j + 3.0) / (j + 1.0)
        b = np.sqrt(2.0 * j + 1.0)
        c = j / np.sqrt(2.0 * j - 1.0)
        ders[j + 1] = a * (b * (2.0 * vals[j] + (2.0 * x - 1.0) * ders[j]) - c * ders[j - 1])
    return vals, ders


def legendre_eval(j: int, x):
    """Evaluate the degree-j shifted orthonormal Legendre polynomial at x."""
    if j < 0:
        raise ValueError("degree must be nonnegative")
    out = _legendre_table(j, x)[j]
    return float(out) if np.isscalar(x) else out


def legendre_antiderivative(j: int, c):
    """Return int_0^c P_j(x) dx for the shifted orthonormal family.

    Uses the classical integration identity, which for this scaling reads

        int_0^c P_j = (P_{j+1}(c)/sqrt(2j+3) - P_{j-1}(c)/sqrt(2j-1)) / (2 sqrt(2j+1))

    for j >= 1, and simply c for j = 0.
    """
    if j < 0:
        raise ValueError("degree must be nonnegative")
    c_arr = np.asarray(c, dtype=float)
    if j == 0:
        out = c_arr.copy()
    else:
        vals = _legendre_table(j + 1, c_arr)
        out = (vals[j + 1] / np.sqrt(2.0 * j + 3.0)
               - vals[j - 1] / np.sqrt(2.0 * j - 1.0)) / (2.0 * np.sqrt(2.0 * j + 1.0))
    return float(out) if np.isscalar(c) else out


@dataclass(frozen=True)
class QuadratureRule:
    """Gauss-Legendre nodes and weights on [0, 1].

    nodes are the k roots of the shifted Legendre polynomial of degree k,
    strictly increasing in (0, 1); weights are positive and sum to 1.
    """

    k: int
    nodes: np.ndarray
    weights: np.ndarray


def gauss_legendre_rule(k: int, tol: float = 1e-15, max_iters: int = 100) -> QuadratureRule:
    """Build the k-point Gauss-Legendre rule on [0, 1].

    Nodes are found by Newton iteration on P_k starting from Chebyshev
    points; weights come from the Christoffel identity for an orthonormal
    family, b_i = 1 / sum_{j<k} P_j(c_i)^2.  Exact for polynomials of
    degree <= 2k - 1.
    """
    if k < 1:
        raise ValueError("k must be >= 1")
    i = np.arange(1, k + 1)
    x = 0.5 * (1.0 - np.cos(np.pi * (4.0 * i - 1.0) / (4.0 * k + 2.0)))
    for _ in range(max_iters):
        vals, ders = _legendre_table(k, x, derivative=True)
        dx = vals[k] / ders[k]
        x -= dx
        if np.max(np.abs(dx)) < tol:
            break
    else:
        raise RootFindingError(f"Gauss-Legendre nodes did not converge for k={k}")
    # one polishing step, then enforce the exact node/weight symmetry
    vals, ders = _legendre_table(k, x, derivative=True)
    x -= vals[k] / ders[k]
    x = 0.5 * (x + 1.0 - x[::-1])
    table = _legendre_table(k - 1, x) if k > 1 else _legendre_table(0, x)
    w = 1.0 / np.sum(table[:k] ** 2, axis=0)
    w = 0.5 * (w + w[::-1])
    return QuadratureRule(k=k, nodes=x, weights=w)


@dataclass(frozen=True)
class BasisMatrices:
    """Collocation basis data for a quadrature rule and truncation order s.

    P[i, j] = P_j(c_i) and I[i, j] = int_0^{c_i} P_j for j = 0..s-1, both
    k x s; Omega is the k x k diagonal matrix of the quadrature weights.
    The columns of P are discretely orthonormal under Omega when k >= s.
    """

    P: np.ndarray
    I: np.ndarray
    Omega: np.ndarray


def basis_matrices(rule: QuadratureRule, s: int) -> BasisMatrices:
    """Evaluate the basis matrices P, I (k x s) and Omega = diag(weights)."""
    if not 1 <= s <= rule.k:
        raise ValueError(f"s must satisfy 1 <= s <= k, got s={s}, k={rule.k}")
    c = rule.nodes
    vals = _legendre_table(s, c)
    P = vals[:s].T.copy()
    I = np.empty((rule.k, s))
    I[:, 0] = c
    for j in range(1, s):
        I[:, j] = (vals[j + 1] / np.sqrt(2.0 * j + 3.0)
                   - vals[j - 1] / np.sqrt(2.0 * j - 1.0)) / (2.0 * np.sqrt(2.0 * j + 1.0))
    return BasisMatrices(P=P, I=I, Omega=np.diag(rule.weights))
