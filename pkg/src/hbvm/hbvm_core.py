"""HBVM(k, s) coefficients, stage partitioning, and the one-step propagator.

An HBVM(k, s) is a k-stage Runge-Kutta method of order 2s whose k x k
coefficient matrix A = I_s P_s^T Omega has rank s.  Only s of the k stages
(the "fundamental" ones) are independent unknowns; the remaining k - s
"silent" stages are linear combinations of the initial value and the
fundamental stages, which keeps the cost of an implicit step governed by
s while k controls how accurately the energy is conserved.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConvergenceError
from .hamiltonian_models import HamiltonianModel, j_times_mat, j_times_vec
from .quadrature import QuadratureRule, basis_matrices, gauss_legendre_rule

__all__ = [
    "HbvmTableau",
    "StagePartition",
    "StepResult",
    "NewtonOptions",
    "build_tableau",
    "select_fundamental",
    "make_partition",
    "hbvm_step",
    "propagate",
    "dense_output",
    "energy_drift",
]


@dataclass(frozen=True)
class HbvmTableau:
    """Butcher tableau of the k-stage method with rank-s coefficient matrix."""

    k: int
    s: int
    A: np.ndarray
    b: np.ndarray
    c: np.ndarray


def build_tableau(k: int, s: int) -> HbvmTableau:
    """Assemble A = I_s P_s^T Omega together with the Gauss weights/abscissae."""
    if not 1 <= s <= k:
        raise ValueError(f"need 1 <= s <= k, got s={s}, k={k}")
    rule = gauss_legendre_rule(k)
    bm = basis_matrices(rule, s)
    A = bm.I @ bm.P.T @ bm.Omega
    return HbvmTableau(k=k, s=s, A=A, b=rule.weights.copy(), c=rule.nodes.copy())


@dataclass(frozen=True)
class StagePartition:
    """Fundamental/silent stage split of an HBVM(k, s) method.

    ``fundamental_idx`` holds the s abscissae chosen approximately uniformly
    spaced in [0, 1]; ``silent_idx`` the complement.  ``a0`` and ``A_map``
    evaluate the Lagrange basis on {0, fundamental abscissae} at the silent
    abscissae, so silent stage values are W = a0 (x) y0 + (A_map (x) I) Z.
    B1, B2, beta1, beta2 are the tableau coefficients partitioned by the
    same index sets (rows at fundamental abscissae for B1/B2).
    """

    rule: QuadratureRule
    s: int
    fundamental_idx: np.ndarray
    silent_idx: np.ndarray
    a0: np.ndarray
    A_map: np.ndarray
    B1: np.ndarray
    B2: np.ndarray
    beta1: np.ndarray
    beta2: np.ndarray

    @property
    def k(self) -> int:
        return self.rule.k

    @property
    def c_fund(self) -> np.ndarray:
        return self.rule.nodes[self.fundamental_idx]

    @property
    def c_silent(self) -> np.ndarray:
        return self.rule.nodes[self.silent_idx]


def _choose_uniform_subset(nodes: np.ndarray, s: int) -> np.ndarray:
    """Pick s of the sorted nodes minimising the max deviation from the
    uniform targets (2i - 1) / (2s); ties resolve to the smallest indices."""
    k = len(nodes)
    targets = (2.0 * np.arange(1, s + 1) - 1.0) / (2.0 * s)
    cost = np.abs(nodes[:, None] - targets[None, :])  # (k, s)
    big = np.inf
    # suffix[j][i]: best max deviation assigning targets j.. to nodes i.. (monotone)
    suffix = np.full((s + 1, k + 1), big)
    suffix[s, :] = -np.inf
    for j in range(s - 1, -1, -1):
        best = big
        for i in range(k - (s - j), j - 1, -1):
            cand = max(cost[i, j], suffix[j + 1, i + 1])
            best = min(best, cand)
            suffix[j, i] = best
    optimum = suffix[0, 0]
    chosen = []
    i = 0
    for j in range(s):
        while max(cost[i, j], suffix[j + 1, i + 1]) > optimum:
            i += 1
        chosen.append(i)
        i += 1
    return np.array(chosen, dtype=int)


def select_fundamental(rule: QuadratureRule, s: int) -> StagePartition:
    """Split the k stages into s fundamental and k - s silent stages."""
    if not 1 <= s <= rule.k:
        raise ValueError(f"need 1 <= s <= k, got s={s}, k={rule.k}")
    k = rule.k
    f_idx = _choose_uniform_subset(rule.nodes, s)
    mask = np.ones(k, dtype=bool)
    mask[f_idx] = False
    s_idx = np.nonzero(mask)[0]

    # Lagrange cardinal functions on {0, c_f1, .., c_fs} at the silent abscissae
    tset = np.concatenate([[0.0], rule.nodes[f_idx]])
    nsil = len(s_idx)
    card = np.empty((nsil, s + 1))
    for q, cq in enumerate(rule.nodes[s_idx]):
        for m_ in range(s + 1):
            others = np.delete(tset, m_)
            card[q, m_] = np.prod((cq - others) / (tset[m_] - others))
    a0 = card[:, 0].copy() if nsil else np.zeros(0)
    A_map = card[:, 1:].copy() if nsil else np.zeros((0, s))

    bm = basis_matrices(rule, s)
    A = bm.I @ bm.P.T @ bm.Omega
    return StagePartition(
        rule=rule,
        s=s,
        fundamental_idx=f_idx,
        silent_idx=s_idx,
        a0=a0,
        A_map=A_map,
        B1=A[np.ix_(f_idx, f_idx)],
        B2=A[np.ix_(f_idx, s_idx)] if nsil else np.zeros((s, 0)),
        beta1=rule.weights[f_idx],
        beta2=rule.weights[s_idx] if nsil else np.zeros(0),
    )


def make_partition(k: int, s: int) -> StagePartition:
    """Convenience constructor: Gauss rule plus fundamental/silent split."""
    return select_fundamental(gauss_legendre_rule(k), s)


@dataclass
class NewtonOptions:
    """Settings for the damped Newton iterations used throughout."""

    tol: float = 1e-13
    max_iters: int = 50
    max_damping: int = 8


@dataclass
class StepResult:
    """Outcome of one HBVM step: new state, stage values, iteration stats."""

    y1: np.ndarray
    Z: np.ndarray
    W: np.ndarray
    newton_iters: int
    residual_norm: float


def silent_stages(part: StagePartition, y0: np.ndarray, Z: np.ndarray) -> np.ndarray:
    """W = a0 (x) y0 + (A_map (x) I) Z, shape (k - s, dim)."""
    if len(part.silent_idx) == 0:
        return np.zeros((0, len(y0)))
    return part.a0[:, None] * y0[None, :] + part.A_map @ Z


def _stage_state(model, part, y0, h, Z):
    """Residual of the fundamental-stage equations plus gradient data."""
    W = silent_stages(part, y0, Z)
    GZ = np.array([model.grad(z) for z in Z])
    GW = np.array([model.grad(w) for w in W]) if len(W) else np.zeros((0, len(y0)))
    rhs = part.B1 @ GZ
    if len(W):
        rhs = rhs + part.B2 @ GW
    F = Z - y0[None, :] - h * j_times_vec(rhs)
    return F, GZ, GW, W


def _stage_jacobian(model, part, h, Z, W):
    """Newton matrix of the stage equations with per-stage Hessians."""
    s, d = Z.shape
    JH_Z = np.array([j_times_mat(model.hess(z)) for z in Z])
    blocks = np.einsum("ij,jab->iajb", part.B1, JH_Z)
    if len(W):
        JH_W = np.array([j_times_mat(model.hess(w)) for w in W])
        blocks = blocks + np.einsum("iq,qj,qab->iajb", part.B2, part.A_map, JH_W)
    M = -h * blocks.reshape(s * d, s * d)
    M[np.arange(s * d), np.arange(s * d)] += 1.0
    return M


def hbvm_step(model: HamiltonianModel, y0, h: float, part: StagePartition,
              opts: NewtonOptions | None = None) -> StepResult:
    """Advance the flow ydot = J grad H by one step of size h.

    Solves the fundamental-stage equations by damped Newton (initial guess
    Z_i = y0), forms the silent stages from them, and assembles the update

        y1 = y0 + h (beta1 (x) J) grad H(Z) + h (beta2 (x) J) grad H(W).

    Raises :class:`ConvergenceError` if the iteration does not reach the
    scaled residual tolerance within ``opts.max_iters``.  A negative
    stepsize integrates backwards (used to exercise the method's symmetry).
    """
    if h == 0.0:
        raise ValueError("stepsize must be nonzero")
    opts = opts or NewtonOptions()
    y0 = np.asarray(y0, dtype=float)
    if y0.shape != (model.dim,):
        raise ValueError(f"state has shape {y0.shape}, model dim is {model.dim}")
    s = part.s
    scale = 1.0 + float(np.max(np.abs(y0)))

    Z = np.tile(y0, (s, 1))
    F, GZ, GW, W = _stage_state(model, part, y0, h, Z)
    rnorm = float(np.max(np.abs(F))) / scale
    iters = 0
    while rnorm > opts.tol:
        if iters >= opts.max_iters:
            raise ConvergenceError(
                f"stage Newton did not converge in {opts.max_iters} iterations "
                f"(residual {rnorm:.3e})")
        M = _stage_jacobian(model, part, h, Z, W)
        delta = np.linalg.solve(M, -F.ravel()).reshape(s, -1)
        alpha = 1.0
        accepted = False
        for _ in range(opts.max_damping + 1):
            Zt = Z + alpha * delta
            Ft, GZt, GWt, Wt = _stage_state(model, part, y0, h, Zt)
            rt = float(np.max(np.abs(Ft))) / scale
            if rt < rnorm or rt <= opts.tol:
                accepted = True
                break
            alpha *= 0.5
        if not accepted:
            raise ConvergenceError(
                f"stage Newton diverged after {opts.max_damping} step halvings "
                f"(residual {rnorm:.3e})")
        Z, F, GZ, GW, W = Zt, Ft, GZt, GWt, Wt
        rnorm = rt
        iters += 1

    incr = part.beta1 @ GZ
    if len(W):
        incr = incr + part.beta2 @ GW
    y1 = y0 + h * j_times_vec(incr)
    return StepResult(y1=y1, Z=Z, W=W, newton_iters=iters, residual_norm=rnorm)


def propagate(model: HamiltonianModel, y0, h: float, n_steps: int,
              part: StagePartition, opts: NewtonOptions | None = None) -> np.ndarray:
    """Fixed-step propagation; returns the (n_steps + 1, dim) node trajectory."""
    traj = np.empty((n_steps + 1, model.dim))
    traj[0] = np.asarray(y0, dtype=float)
    for i in range(n_steps):
        traj[i + 1] = hbvm_step(model, traj[i], h, part, opts).y1
    return traj


def dense_output(part: StagePartition, y0, Z, h: float, c: float) -> np.ndarray:
    """Evaluate the degree-s collocation polynomial at t0 + c h.

    The polynomial interpolates y0 at c = 0 and the fundamental stages at
    their abscissae; at a silent abscissa it reproduces the silent stage.
    """
    y0 = np.asarray(y0, dtype=float)
    nodes = np.concatenate([[0.0], part.c_fund])
    values = np.vstack([y0, Z])
    diffs = c - nodes
    exact = np.nonzero(np.abs(diffs) == 0.0)[0]
    if len(exact):
        return values[exact[0]].copy()
    # barycentric form on the s + 1 interpolation nodes
    wts = np.array([1.0 / np.prod(nodes[m] - np.delete(nodes, m))
                    for m in range(len(nodes))])
    terms = wts / diffs
    return (terms @ values) / np.sum(terms)


def energy_drift(model: HamiltonianModel, trajectory) -> np.ndarray:
    """H(y_i) - H(y_0) along a node trajectory."""
    trajectory = np.asarray(trajectory, dtype=float)
    if trajectory.ndim != 2 or len(trajectory) == 0:
        raise ValueError("trajectory must be a nonempty (n, dim) array")
    values = np.array([model.H(y) for y in trajectory])
    return values - values[0]
