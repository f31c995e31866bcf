"""Global Newton iteration over all mesh unknowns of a Hamiltonian BVP.

The unknowns are the node values y_0 .. y_n together with the fundamental
stage vectors Z_0 .. Z_{n-1} of every interval.  Each simplified-Newton
iteration freezes the Hessian at the interval midpoint value
ybar_i = (y_i + y_{i+1}) / 2, assembles the interval blocks

    V_i  = -e (x) I - h (B2 a0) (x) J hess(ybar_i)
    U_i^T= -h (beta2^T A_map + beta1^T) (x) J hess(ybar_i)
    L_i  = -I - h (beta2^T a0) J hess(ybar_i)
    K_i  = I - h (B2 A_map + B1) (x) J hess(ybar_i)

and dispatches the resulting structured system to the matching solver:
separated boundary conditions give an ABD system, coupled ones a BABD
system, and periodic ones (with anchor rows, optionally an energy row and
an unknown stepsize) an overdetermined bordered system solved by least
squares.  Periodicity y_n = y_0 is built into the unknown layout, never
imposed as an equation.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .errors import ConvergenceError, ModelDomainError
from .hamiltonian_models import HamiltonianModel, j_times_mat, j_times_vec
from .hbvm_core import NewtonOptions, StagePartition, silent_stages
from .structured_linalg import BlockSystem, lstsq_bordered, solve_abd, solve_babd

__all__ = [
    "Separated",
    "NonSeparated",
    "PeriodicAnchored",
    "PeriodicEnergy",
    "MeshSolution",
    "NewtonReport",
    "NewtonOptions",
    "assemble_interval_blocks",
    "residuals",
    "h_border_columns",
    "newton_solve",
]


@dataclass
class Separated:
    """r conditions g_a(y_0) = 0 at the left end, 2m - r conditions
    g_b(y_n) = 0 at the right end, each with an analytic Jacobian."""

    ga: Callable[[np.ndarray], np.ndarray]
    ga_jac: Callable[[np.ndarray], np.ndarray]
    gb: Callable[[np.ndarray], np.ndarray]
    gb_jac: Callable[[np.ndarray], np.ndarray]
    r: int


@dataclass
class NonSeparated:
    """2m coupled conditions g(y_0, y_n) = 0 with both partial Jacobians."""

    g: Callable[[np.ndarray, np.ndarray], np.ndarray]
    jac_y0: Callable[[np.ndarray, np.ndarray], np.ndarray]
    jac_yn: Callable[[np.ndarray, np.ndarray], np.ndarray]


@dataclass
class PeriodicAnchored:
    """Periodic orbit at fixed stepsize, pinned by anchor rows B_a y_0 = b0."""

    Ba: np.ndarray
    b0: np.ndarray

    def __post_init__(self):
        self.Ba = np.atleast_2d(np.asarray(self.Ba, float))
        self.b0 = np.atleast_1d(np.asarray(self.b0, float))


@dataclass
class PeriodicEnergy:
    """Periodic orbit with unknown stepsize, pinned by anchors and by the
    energy condition H(y_0) = H_target."""

    Ba: np.ndarray
    b0: np.ndarray
    H_target: float

    def __post_init__(self):
        self.Ba = np.atleast_2d(np.asarray(self.Ba, float))
        self.b0 = np.atleast_1d(np.asarray(self.b0, float))


BoundarySpec = Separated | NonSeparated | PeriodicAnchored | PeriodicEnergy


@dataclass
class NewtonReport:
    """Convergence diagnostics of one mesh solve."""

    iterations: int = 0
    residual_history: list = field(default_factory=list)
    update_history: list = field(default_factory=list)
    damping_events: int = 0
    lstsq_residual: float | None = None
    cond_estimates: list = field(default_factory=list)
    converged: bool = False
    message: str = ""


@dataclass
class MeshSolution:
    """Node values, fundamental stages and stepsize of a mesh iterate."""

    t0: float
    h: float
    n: int
    ys: np.ndarray          # (n + 1, dim)
    Zs: np.ndarray          # (n, s, dim)
    report: NewtonReport | None = None

    def copy(self) -> "MeshSolution":
        return MeshSolution(self.t0, self.h, self.n, self.ys.copy(),
                            self.Zs.copy(), self.report)

    @property
    def times(self) -> np.ndarray:
        return self.t0 + self.h * np.arange(self.n + 1)


def assemble_interval_blocks(model: HamiltonianModel, part: StagePartition,
                             y_left, y_right, h: float):
    """Simplified-Newton blocks (V, U^T, L, K) of one interval."""
    d = model.dim
    s = part.s
    ybar = 0.5 * (np.asarray(y_left, float) + np.asarray(y_right, float))
    JH = j_times_mat(model.hess(ybar))
    nsil = len(part.silent_idx)
    if nsil:
        B2a0 = part.B2 @ part.a0           # (s,)
        beta2a0 = float(part.beta2 @ part.a0)
        row_coeff = part.beta2 @ part.A_map + part.beta1   # (s,)
        Kcoef = part.B2 @ part.A_map + part.B1             # (s, s)
    else:
        B2a0 = np.zeros(s)
        beta2a0 = 0.0
        row_coeff = part.beta1
        Kcoef = part.B1
    V = np.zeros((s * d, d))
    UT = np.zeros((d, s * d))
    for i in range(s):
        V[i * d:(i + 1) * d] = -np.eye(d) - h * B2a0[i] * JH
        UT[:, i * d:(i + 1) * d] = -h * row_coeff[i] * JH
    L = -np.eye(d) - h * beta2a0 * JH
    K = -h * np.einsum("ij,ab->iajb", Kcoef, JH).reshape(s * d, s * d)
    K[np.arange(s * d), np.arange(s * d)] += 1.0
    return V, UT, L, K


def _interval_residual(model, part, y_left, y_right, Z, h):
    """Negated residuals (stage, node) of one interval, plus gradient data."""
    W = silent_stages(part, y_left, Z)
    GZ = np.array([model.grad(z) for z in Z])
    GW = (np.array([model.grad(w) for w in W]) if len(W)
          else np.zeros((0, len(y_left))))
    stage_rhs = part.B1 @ GZ
    node_incr = part.beta1 @ GZ
    if len(W):
        stage_rhs = stage_rhs + part.B2 @ GW
        node_incr = node_incr + part.beta2 @ GW
    F_stage = Z - y_left[None, :] - h * j_times_vec(stage_rhs)
    F_node = y_right - y_left - h * j_times_vec(node_incr)
    return -F_stage.ravel(), -F_node, GZ, GW


def residuals(model: HamiltonianModel, part: StagePartition, ys, Zs, h: float):
    """Negated residuals of all intervals: (rhs_stage (n, s*d), rhs_node (n, d))."""
    ys = np.asarray(ys, float)
    n = len(ys) - 1
    d = model.dim
    rhs_stage = np.empty((n, part.s * d))
    rhs_node = np.empty((n, d))
    for i in range(n):
        try:
            rhs_stage[i], rhs_node[i], _, _ = _interval_residual(
                model, part, ys[i], ys[i + 1], Zs[i], h)
        except ModelDomainError as exc:
            raise ModelDomainError(f"interval {i}: {exc}") from exc
    return rhs_stage, rhs_node


def h_border_columns(model: HamiltonianModel, part: StagePartition, ys, Zs, h: float):
    """Derivatives of the interval residuals with respect to the stepsize.

    Returns (w (n, s*d), v (n, d)) with
    w_i = -(B1 (x) J) grad H(Z) - (B2 (x) J) grad H(W) and
    v_i = -(beta1^T (x) J) grad H(Z) - (beta2^T (x) J) grad H(W).
    """
    ys = np.asarray(ys, float)
    n = len(ys) - 1
    d = model.dim
    w = np.empty((n, part.s * d))
    v = np.empty((n, d))
    for i in range(n):
        W = silent_stages(part, ys[i], Zs[i])
        GZ = np.array([model.grad(z) for z in Zs[i]])
        GW = (np.array([model.grad(wst) for wst in W]) if len(W)
              else np.zeros((0, d)))
        stage_rhs = part.B1 @ GZ
        node_incr = part.beta1 @ GZ
        if len(W):
            stage_rhs = stage_rhs + part.B2 @ GW
            node_incr = node_incr + part.beta2 @ GW
        w[i] = -j_times_vec(stage_rhs).ravel()
        v[i] = -j_times_vec(node_incr)
    return w, v


def _boundary_residuals(model, spec, y0, yn, h):
    """Boundary residual pieces in solver layout (negated where needed).

    Returns a dict with keys depending on the boundary-condition class.
    """
    if isinstance(spec, Separated):
        return {"rhs_a": -np.atleast_1d(spec.ga(y0)),
                "rhs_b": -np.atleast_1d(spec.gb(yn)),
                "Ba": np.atleast_2d(spec.ga_jac(y0)),
                "Bb": np.atleast_2d(spec.gb_jac(yn))}
    if isinstance(spec, NonSeparated):
        return {"rhs_a": -np.atleast_1d(spec.g(y0, yn)),
                "Ba": np.atleast_2d(spec.jac_y0(y0, yn)),
                "Bb": np.atleast_2d(spec.jac_yn(y0, yn))}
    if isinstance(spec, PeriodicAnchored):
        return {"rhs_a": spec.b0 - spec.Ba @ y0, "Ba": spec.Ba}
    if isinstance(spec, PeriodicEnergy):
        return {"rhs_a": spec.b0 - spec.Ba @ y0, "Ba": spec.Ba,
                "BH": model.grad(y0), "rhs_H": spec.H_target - model.H(y0)}
    raise TypeError(f"unknown boundary spec {type(spec).__name__}")


def _total_residual_norm(model, part, spec, ys, Zs, h):
    """Max-norm and 2-norm of the full residual, plus the assembled pieces.

    The max-norm drives the convergence threshold and the report; the
    2-norm drives step damping (the least-squares iteration is a descent
    direction for it).
    """
    rhs_stage, rhs_node = residuals(model, part, ys, Zs, h)
    bres = _boundary_residuals(model, spec, ys[0], ys[-1], h)
    pieces = [rhs_stage.ravel(), rhs_node.ravel(), bres["rhs_a"]]
    if "rhs_b" in bres:
        pieces.append(bres["rhs_b"])
    if "rhs_H" in bres:
        pieces.append(np.atleast_1d(bres["rhs_H"]))
    full = np.concatenate(pieces)
    return (float(np.max(np.abs(full))), float(np.linalg.norm(full)),
            (rhs_stage, rhs_node, bres))


def _build_system(model, part, spec, ys, Zs, h, pieces):
    rhs_stage, rhs_node, bres = pieces
    n = len(ys) - 1
    d = model.dim
    s = part.s
    V = np.empty((n, s * d, d))
    K = np.empty((n, s * d, s * d))
    L = np.empty((n, d, d))
    UT = np.empty((n, d, s * d))
    for i in range(n):
        V[i], UT[i], L[i], K[i] = assemble_interval_blocks(
            model, part, ys[i], ys[i + 1], h)
    sysargs = dict(n=n, d=d, s=s, V=V, K=K, L=L, UT=UT,
                   rhs_stage=rhs_stage, rhs_node=rhs_node)
    if isinstance(spec, Separated):
        return BlockSystem(kind="separated", Ba=bres["Ba"], rhs_a=bres["rhs_a"],
                           Bb=bres["Bb"], rhs_b=bres["rhs_b"], **sysargs)
    if isinstance(spec, NonSeparated):
        return BlockSystem(kind="coupled", Ba=bres["Ba"], rhs_a=bres["rhs_a"],
                           Bb=bres["Bb"], **sysargs)
    if isinstance(spec, PeriodicAnchored):
        return BlockSystem(kind="periodic", Ba=bres["Ba"], rhs_a=bres["rhs_a"],
                           **sysargs)
    # PeriodicEnergy: energy row plus stepsize border column
    w, v = h_border_columns(model, part, ys, Zs, h)
    return BlockSystem(kind="periodic", Ba=bres["Ba"], rhs_a=bres["rhs_a"],
                       BH=bres["BH"], rhs_H=bres["rhs_H"], w=w, v=v, **sysargs)


def _replace_rhs(system: BlockSystem, spec, pieces) -> None:
    """Swap the right-hand sides of an assembled system, keeping the frozen
    Jacobian blocks (used by the natural-level damping test)."""
    rhs_stage, rhs_node, bres = pieces
    system.rhs_stage = rhs_stage
    system.rhs_node = rhs_node
    system.rhs_a = bres["rhs_a"]
    if isinstance(spec, Separated):
        system.rhs_b = bres["rhs_b"]
    if isinstance(spec, PeriodicEnergy):
        system.rhs_H = bres["rhs_H"]


def _solve_system(system: BlockSystem, info=None):
    if system.kind == "separated":
        return solve_abd(system, info=info), None
    if system.kind == "coupled":
        return solve_babd(system, info=info), None
    return lstsq_bordered(system, info=info)


def _apply_update(spec, mesh: MeshSolution, x, alpha, d, s):
    """Return an updated copy of the mesh moved by alpha times the solution x."""
    new = mesh.copy()
    n = mesh.n
    blk = d + s * d
    periodic = isinstance(spec, (PeriodicAnchored, PeriodicEnergy))
    for i in range(n):
        new.ys[i] += alpha * x[i * blk: i * blk + d]
        new.Zs[i] += alpha * x[i * blk + d: (i + 1) * blk].reshape(s, d)
    if periodic:
        new.ys[n] = new.ys[0]
    else:
        new.ys[n] += alpha * x[n * blk: n * blk + d]
    if isinstance(spec, PeriodicEnergy):
        new.h = mesh.h + alpha * x[-1]
    return new


def newton_solve(model: HamiltonianModel, part: StagePartition, spec: BoundarySpec,
                 mesh0: MeshSolution, opts: NewtonOptions | None = None) -> MeshSolution:
    """Damped Newton iteration over the whole mesh.

    Convergence requires the max-norm of the update to drop below
    ``opts.tol`` together with a residual criterion: residual below the
    tolerance, or (for the overdetermined periodic variants) a residual
    that has become stationary at its least-squares floor.  Raises
    :class:`ConvergenceError` with the best iterate attached otherwise.
    """
    opts = opts or NewtonOptions(tol=1e-10)
    mesh = mesh0.copy()
    n, d, s = mesh.n, model.dim, part.s
    if mesh.ys.shape != (n + 1, d):
        raise ValueError(f"mesh nodes have shape {mesh.ys.shape}, expected {(n + 1, d)}")
    periodic = isinstance(spec, (PeriodicAnchored, PeriodicEnergy))
    if periodic:
        mesh.ys[n] = mesh.ys[0]

    report = NewtonReport()
    res_max, res_two, pieces = _total_residual_norm(
        model, part, spec, mesh.ys, mesh.Zs, mesh.h)
    report.residual_history.append(res_max)
    best = (res_max, mesh.copy())
    grew_in_a_row = 0

    for it in range(opts.max_iters):
        system = _build_system(model, part, spec, mesh.ys, mesh.Zs, mesh.h, pieces)
        solve_info: dict = {}
        x, lstsq_res = _solve_system(system, info=solve_info)
        report.cond_estimates.append(solve_info.get("cond_estimate"))
        report.lstsq_residual = lstsq_res
        level = float(np.linalg.norm(x))

        # step damping on the natural level function: the trial point is
        # measured by the norm of the correction the frozen Jacobian would
        # produce there, which is robust where the raw residual is not
        # monotone along the Newton path
        alpha = 1.0
        accepted = None
        last_trial = None
        for _ in range(opts.max_damping + 1):
            trial = _apply_update(spec, mesh, x, alpha, d, s)
            if trial.h <= 0.0:
                alpha *= 0.5
                continue
            trial_max, trial_two, trial_pieces = _total_residual_norm(
                model, part, spec, trial.ys, trial.Zs, trial.h)
            _replace_rhs(system, spec, trial_pieces)
            trial_level = float(np.linalg.norm(_solve_system(system)[0]))
            last_trial = (trial, trial_max, trial_two, trial_pieces, alpha)
            if trial_level < level or trial_max <= opts.tol:
                accepted = last_trial
                break
            alpha *= 0.5
            report.damping_events += 1
        if accepted is None:
            # accept the most damped step anyway; bail out if this keeps happening
            if last_trial is None:
                raise ConvergenceError("stepsize collapsed to zero", report=report,
                                       best=best[1])
            accepted = last_trial
            grew_in_a_row += 1
        else:
            grew_in_a_row = 0

        prev_two = res_two
        mesh, res_max, res_two, pieces, alpha = accepted
        update_norm = alpha * float(np.max(np.abs(x)))
        report.iterations = it + 1
        report.residual_history.append(res_max)
        report.update_history.append(update_norm)
        if res_max < best[0]:
            best = (res_max, mesh.copy())

        if update_norm < opts.tol:
            stationary = abs(prev_two - res_two) <= opts.tol * (1.0 + res_two)
            if res_max < opts.tol or (periodic and stationary):
                report.converged = True
                break
        if grew_in_a_row >= 3:
            report.message = "no damped step reduced the Newton correction "
            report.message += "for 3 consecutive iterations"
            break

    if not report.converged:
        if not report.message:
            report.message = (f"no convergence in {opts.max_iters} iterations "
                              f"(residual {res_max:.3e})")
        best[1].report = report
        raise ConvergenceError(report.message, report=report, best=best[1])
    mesh.report = report
    return mesh
