"""Structured solvers for the block linear systems of collocation BVPs.

Every Newton iteration of the mesh solver produces a sparse block system.
With n mesh intervals, state size d = 2m and s fundamental stages per
interval, the interior rows repeat the pattern

    stage rows:  V_i (on delta_i)   K_i (on Delta_i)                 = c_i
    node rows:   L_i (on delta_i)   U_i^T (on Delta_i)  I (delta_{i+1}) = b_i

with unknowns ordered (delta_0, Delta_0, delta_1, Delta_1, ..).  The
boundary rows decide the overall shape:

* separated rows (B_a first, B_b last) give an almost block diagonal (ABD)
  matrix, solved by a forward block elimination with row pivoting;
* one coupled row B_a delta_0 + B_b delta_n = b0 gives a bordered ABD
  (BABD), solved by the same sweep carrying a delta_n border block;
* periodic problems eliminate delta_n (== delta_0), append anchor rows
  B_a delta_0 = b0 (and optionally an energy row and a stepsize border
  column), and are overdetermined: they are solved in the least-squares
  sense by a structured Householder QR sweep.

All sweeps cost O(n) block operations and store only per-interval factor
blocks.  A dense assembly path is kept as a testing oracle.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numpy.linalg import qr
from scipy.linalg import solve_triangular

from .errors import SingularSystemError

__all__ = ["BlockSystem", "solve_abd", "solve_babd", "lstsq_bordered",
           "dense_oracle_solve", "assemble_dense"]


@dataclass
class BlockSystem:
    """Per-interval blocks, boundary rows and right-hand sides of one system.

    ``kind`` is one of ``"separated"``, ``"coupled"`` or ``"periodic"``.
    Shapes: V (n, s*d, d), K (n, s*d, s*d), L (n, d, d), UT (n, d, s*d),
    rhs_stage (n, s*d), rhs_node (n, d).  Boundary data:

    * separated: Ba (r, d) with rhs_a (r,), Bb (d - r, d) with rhs_b;
    * coupled:   Ba (d, d), Bb (d, d), rhs_a (d,);
    * periodic:  Ba (r, d) anchor rows with rhs_a, optional energy row
      BH (d,) with scalar rhs_H, optional stepsize border columns
      w (n, s*d) / v (n, d) which add one trailing unknown.
    """

    n: int
    d: int
    s: int
    V: np.ndarray
    K: np.ndarray
    L: np.ndarray
    UT: np.ndarray
    rhs_stage: np.ndarray
    rhs_node: np.ndarray
    kind: str = "separated"
    Ba: np.ndarray | None = None
    rhs_a: np.ndarray | None = None
    Bb: np.ndarray | None = None
    rhs_b: np.ndarray | None = None
    BH: np.ndarray | None = None
    rhs_H: float | None = None
    w: np.ndarray | None = None
    v: np.ndarray | None = None

    @property
    def stage_dim(self) -> int:
        return self.s * self.d

    @property
    def has_border_column(self) -> bool:
        return self.w is not None

    def n_unknowns(self) -> int:
        nd = self.n * (self.d + self.stage_dim)
        if self.kind == "periodic":
            return nd + (1 if self.has_border_column else 0)
        return nd + self.d


def assemble_dense(sys: BlockSystem):
    """Dense matrix/rhs with the exact structured row and column layout."""
    d, sd, n = sys.d, sys.stage_dim, sys.n
    ncols = sys.n_unknowns()

    def dcol(i):
        return i * (d + sd)

    def scol(i):
        return i * (d + sd) + d

    rows_interior = n * (sd + d)
    if sys.kind == "separated":
        r = sys.Ba.shape[0]
        nrows = rows_interior + d
        A = np.zeros((nrows, ncols))
        rhs = np.zeros(nrows)
        A[:r, dcol(0):dcol(0) + d] = sys.Ba
        rhs[:r] = sys.rhs_a
        row = r
        for i in range(n):
            A[row:row + sd, dcol(i):dcol(i) + d] = sys.V[i]
            A[row:row + sd, scol(i):scol(i) + sd] = sys.K[i]
            rhs[row:row + sd] = sys.rhs_stage[i]
            row += sd
            A[row:row + d, dcol(i):dcol(i) + d] = sys.L[i]
            A[row:row + d, scol(i):scol(i) + sd] = sys.UT[i]
            A[row:row + d, dcol(i + 1):dcol(i + 1) + d] = np.eye(d)
            rhs[row:row + d] = sys.rhs_node[i]
            row += d
        A[row:, dcol(n):dcol(n) + d] = sys.Bb
        rhs[row:] = sys.rhs_b
        return A, rhs

    if sys.kind == "coupled":
        nrows = rows_interior + d
        A = np.zeros((nrows, ncols))
        rhs = np.zeros(nrows)
        row = 0
        for i in range(n):
            A[row:row + sd, dcol(i):dcol(i) + d] = sys.V[i]
            A[row:row + sd, scol(i):scol(i) + sd] = sys.K[i]
            rhs[row:row + sd] = sys.rhs_stage[i]
            row += sd
            A[row:row + d, dcol(i):dcol(i) + d] = sys.L[i]
            A[row:row + d, scol(i):scol(i) + sd] = sys.UT[i]
            A[row:row + d, dcol(i + 1):dcol(i + 1) + d] = np.eye(d)
            rhs[row:row + d] = sys.rhs_node[i]
            row += d
        A[row:, dcol(0):dcol(0) + d] = sys.Ba
        A[row:, dcol(n):dcol(n) + d] = sys.Bb
        rhs[row:] = sys.rhs_a
        return A, rhs

    if sys.kind == "periodic":
        r = 0 if sys.Ba is None else sys.Ba.shape[0]
        has_energy = sys.BH is not None
        has_h = sys.has_border_column
        nrows = rows_interior + r + (1 if has_energy else 0)
        A = np.zeros((nrows, ncols))
        rhs = np.zeros(nrows)
        row = 0
        if has_energy:
            A[0, dcol(0):dcol(0) + d] = sys.BH
            rhs[0] = sys.rhs_H
            row = 1
        if r:
            A[row:row + r, dcol(0):dcol(0) + d] = sys.Ba
            rhs[row:row + r] = sys.rhs_a
            row += r
        for i in range(n):
            A[row:row + sd, dcol(i):dcol(i) + d] = sys.V[i]
            A[row:row + sd, scol(i):scol(i) + sd] = sys.K[i]
            if has_h:
                A[row:row + sd, -1] = sys.w[i]
            rhs[row:row + sd] = sys.rhs_stage[i]
            row += sd
            inext = (i + 1) % n
            A[row:row + d, dcol(i):dcol(i) + d] = sys.L[i]
            A[row:row + d, scol(i):scol(i) + sd] = sys.UT[i]
            A[row:row + d, dcol(inext):dcol(inext) + d] += np.eye(d)
            if has_h:
                A[row:row + d, -1] = sys.v[i]
            rhs[row:row + d] = sys.rhs_node[i]
            row += d
        return A, rhs

    raise ValueError(f"unknown system kind {sys.kind!r}")


def _pivoted_eliminate(M, rhs, ncol, interval, min_pivot):
    """In-place partial-pivot elimination of the first ``ncol`` columns.

    Returns the updated smallest pivot magnitude seen so far.  Raises
    :class:`SingularSystemError` on a vanishing pivot, naming the interval.
    """
    tiny = 1e-14 * max(1.0, float(np.max(np.abs(M))))
    for col in range(ncol):
        piv = col + int(np.argmax(np.abs(M[col:, col])))
        pval = abs(M[piv, col])
        if pval < tiny:
            raise SingularSystemError(
                f"numerically singular pivot ({pval:.3e}) in interval {interval}")
        if piv != col:
            M[[col, piv]] = M[[piv, col]]
            rhs[[col, piv]] = rhs[[piv, col]]
        min_pivot = min(min_pivot, pval)
        factors = M[col + 1:, col] / M[col, col]
        M[col + 1:, col:] -= np.outer(factors, M[col, col:])
        M[col + 1:, col] = 0.0
        rhs[col + 1:] -= factors * rhs[col]
    return min_pivot


def _norm1_blocks(sys: BlockSystem) -> float:
    """1-norm of the assembled matrix, accumulated column-block-wise."""
    d, n = sys.d, sys.n
    best = 0.0
    for i in range(n):
        cols_delta = (np.sum(np.abs(sys.V[i]), axis=0)
                      + np.sum(np.abs(sys.L[i]), axis=0))
        if i > 0:
            cols_delta += 1.0  # identity block from the previous node row
        elif sys.kind == "periodic":
            cols_delta += 1.0  # wrap-around identity block
            if sys.BH is not None:
                cols_delta += np.abs(sys.BH)
        if i == 0 and sys.Ba is not None:
            cols_delta += np.sum(np.abs(sys.Ba), axis=0)
        cols_stage = (np.sum(np.abs(sys.K[i]), axis=0)
                      + np.sum(np.abs(sys.UT[i]), axis=0))
        best = max(best, float(np.max(cols_delta)), float(np.max(cols_stage)))
    if sys.kind == "separated" and sys.Bb is not None and sys.Bb.size:
        best = max(best, float(np.max(np.sum(np.abs(sys.Bb), axis=0) + 1.0)))
    if sys.kind == "coupled":
        best = max(best, float(np.max(np.sum(np.abs(sys.Bb), axis=0) + 1.0)))
    if sys.has_border_column:
        best = max(best, float(np.sum(np.abs(sys.w)) + np.sum(np.abs(sys.v))))
    return best


def solve_abd(sys: BlockSystem, info: dict | None = None) -> np.ndarray:
    """Solve a separated-boundary (ABD) system by block elimination.

    Forward sweep with row pivoting confined to the overlapping blocks;
    O(n) work and storage, no stage-block inversion.  ``info``, if given,
    receives a cheap 1-norm condition estimate and the smallest pivot.
    """
    if sys.kind != "separated":
        raise ValueError("solve_abd expects a separated-boundary system")
    d, sd, n = sys.d, sys.stage_dim, sys.n
    ncol = d + sd
    pending = np.asarray(sys.Ba, float).copy()
    pending_rhs = np.asarray(sys.rhs_a, float).copy()
    factors = []
    min_pivot = np.inf
    for i in range(n):
        p = pending.shape[0]
        M = np.zeros((p + sd + d, ncol + d))
        rhs = np.empty(p + sd + d)
        M[:p, :d] = pending
        rhs[:p] = pending_rhs
        M[p:p + sd, :d] = sys.V[i]
        M[p:p + sd, d:ncol] = sys.K[i]
        rhs[p:p + sd] = sys.rhs_stage[i]
        M[p + sd:, :d] = sys.L[i]
        M[p + sd:, d:ncol] = sys.UT[i]
        M[p + sd:, ncol:] = np.eye(d)
        rhs[p + sd:] = sys.rhs_node[i]
        min_pivot = _pivoted_eliminate(M, rhs, ncol, i, min_pivot)
        factors.append((M[:ncol, :ncol], M[:ncol, ncol:], rhs[:ncol]))
        pending = M[ncol:, ncol:]
        pending_rhs = rhs[ncol:]
    tail = np.vstack([pending, sys.Bb]) if sys.Bb.size else pending
    tail_rhs = np.concatenate([pending_rhs, sys.rhs_b]) if sys.Bb.size else pending_rhs
    try:
        delta_n = np.linalg.solve(tail, tail_rhs)
    except np.linalg.LinAlgError as exc:
        raise SingularSystemError(f"singular boundary block: {exc}") from exc
    x = np.empty(sys.n_unknowns())
    x[n * (d + sd):] = delta_n
    delta_next = delta_n
    for i in range(n - 1, -1, -1):
        R, S, rhs_i = factors[i]
        xi = solve_triangular(R, rhs_i - S @ delta_next, lower=False)
        x[i * (d + sd): i * (d + sd) + ncol] = xi
        delta_next = xi[:d]
    if info is not None:
        norm1 = _norm1_blocks(sys)
        info.update(norm1=norm1, min_pivot=min_pivot,
                    cond_estimate=norm1 / min_pivot)
    return x


def solve_babd(sys: BlockSystem, info: dict | None = None) -> np.ndarray:
    """Solve a coupled-boundary (BABD) system by a bordered block sweep.

    The single coupled row B_a delta_0 + B_b delta_n = b0 is carried through
    the forward elimination as a border block on the delta_n columns; the
    fill-in is one extra (d + s d) x d block per interval.
    """
    if sys.kind != "coupled":
        raise ValueError("solve_babd expects a coupled-boundary system")
    d, sd, n = sys.d, sys.stage_dim, sys.n
    ncol = d + sd
    # pending rows: [coefficients on delta_i | border on delta_n]
    pending = np.hstack([np.asarray(sys.Ba, float), np.asarray(sys.Bb, float)])
    pending_rhs = np.asarray(sys.rhs_a, float).copy()
    factors = []
    min_pivot = np.inf
    for i in range(n):
        p = pending.shape[0]
        last = i == n - 1
        width = ncol + d if last else ncol + 2 * d
        M = np.zeros((p + sd + d, width))
        rhs = np.empty(p + sd + d)
        M[:p, :d] = pending[:, :d]
        if last:
            M[:p, ncol:] += pending[:, d:]
        else:
            M[:p, ncol + d:] = pending[:, d:]
        rhs[:p] = pending_rhs
        M[p:p + sd, :d] = sys.V[i]
        M[p:p + sd, d:ncol] = sys.K[i]
        rhs[p:p + sd] = sys.rhs_stage[i]
        M[p + sd:, :d] = sys.L[i]
        M[p + sd:, d:ncol] = sys.UT[i]
        M[p + sd:, ncol:ncol + d] += np.eye(d)
        rhs[p + sd:] = sys.rhs_node[i]
        min_pivot = _pivoted_eliminate(M, rhs, ncol, i, min_pivot)
        factors.append((M[:ncol, :ncol], M[:ncol, ncol:], rhs[:ncol]))
        pending = M[ncol:, ncol:]
        pending_rhs = rhs[ncol:]
    try:
        delta_n = np.linalg.solve(pending, pending_rhs)
    except np.linalg.LinAlgError as exc:
        raise SingularSystemError(f"singular boundary block: {exc}") from exc
    x = np.empty(sys.n_unknowns())
    x[n * (d + sd):] = delta_n
    delta_next = delta_n
    for i in range(n - 1, -1, -1):
        R, T, rhs_i = factors[i]
        trail = delta_next if i == n - 1 else np.concatenate([delta_next, delta_n])
        xi = solve_triangular(R, rhs_i - T @ trail, lower=False)
        x[i * (d + sd): i * (d + sd) + ncol] = xi
        delta_next = xi[:d]
    if info is not None:
        norm1 = _norm1_blocks(sys)
        info.update(norm1=norm1, min_pivot=min_pivot,
                    cond_estimate=norm1 / min_pivot)
    return x


def _qr_eliminate(M, rhs, ncol):
    """Orthogonal elimination of the first ``ncol`` columns; returns
    (R, transformed trailing columns, transformed rhs head, pending rows,
    pending rhs)."""
    Q, R = qr(M[:, :ncol], mode="complete")
    rest = Q.T @ M[:, ncol:]
    rhs_t = Q.T @ rhs
    return R[:ncol], rest[:ncol], rhs_t[:ncol], rest[ncol:], rhs_t[ncol:]


def lstsq_bordered(sys: BlockSystem, info: dict | None = None):
    """Least-squares solution of a periodic (optionally bordered) system.

    Householder QR sweep over the interval blocks.  The wrap-around
    identity block couples the last node rows to delta_0, so those rows
    join the first elimination step and their (delta_{n-1}, Delta_{n-1})
    support is carried as a border column block; an optional stepsize
    column adds one trailing unknown.  Returns ``(solution, residual_norm)``
    where the residual norm is the Euclidean norm of the unresolved rows.
    """
    if sys.kind != "periodic":
        raise ValueError("lstsq_bordered expects a periodic-layout system")
    d, sd, n = sys.d, sys.stage_dim, sys.n
    if n < 2:
        return _lstsq_dense_fallback(sys, info)
    ncol = d + sd
    has_h = sys.has_border_column
    hcols = 1 if has_h else 0
    bw = ncol  # border block: (delta_{n-1}, Delta_{n-1}) support of the last node rows
    r = 0 if sys.Ba is None else sys.Ba.shape[0]
    has_energy = sys.BH is not None

    min_rdiag = np.inf
    factors = []

    def check_rank(R, step):
        nonlocal min_rdiag
        dmin = float(np.min(np.abs(np.diag(R))))
        scale = max(1.0, float(np.max(np.abs(R))))
        if dmin < 1e-13 * scale:
            raise SingularSystemError(
                f"rank-deficient system: smallest diagonal factor entry "
                f"{dmin:.3e} at interval {step}")
        min_rdiag = min(min_rdiag, dmin)

    # step 0: everything touching delta_0, including the wrap-around rows
    p0 = (1 if has_energy else 0) + r + sd + 2 * d
    M = np.zeros((p0, ncol + d + bw + hcols))
    rhs = np.empty(p0)
    row = 0
    if has_energy:
        M[0, :d] = sys.BH
        rhs[0] = sys.rhs_H
        row = 1
    if r:
        M[row:row + r, :d] = sys.Ba
        rhs[row:row + r] = sys.rhs_a
        row += r
    M[row:row + sd, :d] = sys.V[0]
    M[row:row + sd, d:ncol] = sys.K[0]
    if has_h:
        M[row:row + sd, -1] = sys.w[0]
    rhs[row:row + sd] = sys.rhs_stage[0]
    row += sd
    M[row:row + d, :d] = sys.L[0]
    M[row:row + d, d:ncol] = sys.UT[0]
    M[row:row + d, ncol:ncol + d] = np.eye(d)
    if has_h:
        M[row:row + d, -1] = sys.v[0]
    rhs[row:row + d] = sys.rhs_node[0]
    row += d
    M[row:row + d, :d] = np.eye(d)                      # wrap-around block
    M[row:row + d, ncol + d:ncol + d + d] = sys.L[n - 1]
    M[row:row + d, ncol + d + d:ncol + d + bw] = sys.UT[n - 1]
    if has_h:
        M[row:row + d, -1] = sys.v[n - 1]
    rhs[row:row + d] = sys.rhs_node[n - 1]

    R, C, rhead, pending, pending_rhs = _qr_eliminate(M, rhs, ncol)
    check_rank(R, 0)
    factors.append((R, C, rhead))

    for i in range(1, n - 1):
        p = pending.shape[0]
        M = np.zeros((p + sd + d, ncol + d + bw + hcols))
        rhs = np.empty(p + sd + d)
        M[:p, :d] = pending[:, :d]
        M[:p, ncol + d:] = pending[:, d:]
        rhs[:p] = pending_rhs
        M[p:p + sd, :d] = sys.V[i]
        M[p:p + sd, d:ncol] = sys.K[i]
        if has_h:
            M[p:p + sd, -1] = sys.w[i]
        rhs[p:p + sd] = sys.rhs_stage[i]
        M[p + sd:, :d] = sys.L[i]
        M[p + sd:, d:ncol] = sys.UT[i]
        M[p + sd:, ncol:ncol + d] = np.eye(d)
        if has_h:
            M[p + sd:, -1] = sys.v[i]
        rhs[p + sd:] = sys.rhs_node[i]
        R, C, rhead, pending, pending_rhs = _qr_eliminate(M, rhs, ncol)
        check_rank(R, i)
        factors.append((R, C, rhead))

    # step n-1: the border columns coincide with (delta_{n-1}, Delta_{n-1})
    p = pending.shape[0]
    M = np.zeros((p + sd, ncol + hcols))
    rhs = np.empty(p + sd)
    M[:p, :d] = pending[:, :d] + pending[:, d:2 * d]
    M[:p, d:ncol] = pending[:, 2 * d:2 * d + sd]
    if has_h:
        M[:p, -1] = pending[:, -1]
    rhs[:p] = pending_rhs
    M[p:, :d] = sys.V[n - 1]
    M[p:, d:ncol] = sys.K[n - 1]
    if has_h:
        M[p:, -1] = sys.w[n - 1]
    rhs[p:] = sys.rhs_stage[n - 1]
    R, C, rhead, pending, pending_rhs = _qr_eliminate(M, rhs, ncol)
    check_rank(R, n - 1)
    factors.append((R, C, rhead))

    delta_h = None
    if has_h:
        Rh, _, rh_head, _, pending_rhs = _qr_eliminate(
            pending, pending_rhs, 1)
        check_rank(Rh, n)
        delta_h = float(rh_head[0] / Rh[0, 0])
    residual_norm = float(np.linalg.norm(pending_rhs))

    # back substitution
    x = np.empty(sys.n_unknowns())
    htail = np.array([delta_h]) if has_h else np.zeros(0)
    R, C, rhead = factors[n - 1]
    xi = solve_triangular(R, rhead - C @ htail, lower=False)
    x[(n - 1) * ncol:(n - 1) * ncol + ncol] = xi
    delta_last, Delta_last = xi[:d], xi[d:]
    delta_next = delta_last
    for i in range(n - 2, -1, -1):
        R, C, rhead = factors[i]
        trail = np.concatenate([delta_next, delta_last, Delta_last, htail])
        xi = solve_triangular(R, rhead - C @ trail, lower=False)
        x[i * ncol: (i + 1) * ncol] = xi
        delta_next = xi[:d]
    if has_h:
        x[-1] = delta_h
    if info is not None:
        norm1 = _norm1_blocks(sys)
        info.update(norm1=norm1, min_pivot=min_rdiag,
                    cond_estimate=norm1 / min_rdiag)
    return x, residual_norm


def _lstsq_dense_fallback(sys: BlockSystem, info: dict | None):
    A, rhs = assemble_dense(sys)
    x, _, rank, sv = np.linalg.lstsq(A, rhs, rcond=None)
    if rank < A.shape[1]:
        raise SingularSystemError(
            f"rank-deficient system: smallest singular value {sv[-1]:.3e}")
    if info is not None:
        info.update(norm1=float(np.linalg.norm(A, 1)), min_pivot=float(sv[-1]),
                    cond_estimate=float(sv[0] / sv[-1]))
    return x, float(np.linalg.norm(A @ x - rhs))


def dense_oracle_solve(sys: BlockSystem) -> np.ndarray:
    """Reference solve on the assembled dense matrix (LU or QR least squares)."""
    A, rhs = assemble_dense(sys)
    nrows, ncols = A.shape
    if nrows == ncols:
        try:
            return np.linalg.solve(A, rhs)
        except np.linalg.LinAlgError as exc:
            raise SingularSystemError(f"singular dense system: {exc}") from exc
    x, _, rank, sv = np.linalg.lstsq(A, rhs, rcond=None)
    if rank < ncols:
        raise SingularSystemError(
            f"rank-deficient dense system: smallest singular value {sv[-1]:.3e}")
    return x
