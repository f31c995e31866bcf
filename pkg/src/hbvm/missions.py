"""High-level drivers: periodic orbits and optimal transfers near L2.

All public drivers take mission inputs in days / km and convert to the
nondimensional rotating-frame units internally.  Periodic orbits are
located either by their period (fixed stepsize, anchored periodic solve)
or by their energy level (stepsize joins the unknowns); transfers solve
the state+costate system of the minimum-effort control problem with the
states pinned at both ends and the costates free.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .bvp_newton import (MeshSolution, NewtonOptions, PeriodicAnchored,
                         PeriodicEnergy, Separated, newton_solve)
from .errors import ConvergenceError
from .hamiltonian_models import (CrtbpParams, HamiltonianModel,
                                 collinear_libration_points, control_from_costate,
                                 crtbp_model, days_to_nondim, extended_hill_model,
                                 extended_model, hill_model, linearize,
                                 nondim_to_days)
from .hbvm_core import (StagePartition, dense_output, energy_drift,
                        make_partition, silent_stages)

__all__ = [
    "OrbitResult",
    "TransferResult",
    "initial_guess_linearized",
    "lyapunov_guess",
    "halo_guess",
    "lyapunov_by_period",
    "lyapunov_by_energy",
    "halo_by_period",
    "halo_by_energy",
    "hill_transfer",
    "halo_transfer",
    "continuation",
]

DEFAULT_MU = 3.04036e-6          # Sun vs Earth+Moon mass ratio
_HALO_ASPECT = 3.2               # in-plane/vertical semi-axis ratio of halo guesses
_HALO_ANCHOR_FRACTION = 0.75     # default q3 anchor level relative to the guess top

_MISSION_OPTS = NewtonOptions(tol=1e-12, max_iters=60)


@dataclass
class OrbitResult:
    """A converged periodic orbit with its headline numbers."""

    mesh: MeshSolution
    period_days: float
    energy: float
    max_energy_drift: float
    classification: str = ""
    mu: float | None = None


@dataclass
class TransferResult:
    """A converged optimal transfer on the extended state+costate system."""

    mesh: MeshSolution
    control: np.ndarray          # (n + 1, n_controls) at the mesh nodes
    cost: float                  # J = 1/2 int |u|^2 dt by the method's quadrature
    boundary_mismatch: float
    energy_error: float          # extended-Hamiltonian end-to-start error


def _center_pairs(matrix):
    """Imaginary-axis eigenvalue/eigenvector pairs of a linearisation,
    sorted by frequency; returns list of (omega, eigvec) with omega > 0."""
    vals, vecs = np.linalg.eig(matrix)
    pairs = []
    for idx in range(len(vals)):
        lam = vals[idx]
        if lam.imag > 1e-10 and abs(lam.real) < 1e-8 * max(1.0, abs(lam)):
            pairs.append((lam.imag, vecs[:, idx]))
    pairs.sort(key=lambda t: t[0])
    return pairs


def initial_guess_linearized(model: HamiltonianModel, equilibrium, amplitude: float,
                             n: int, plane: str = "in-plane",
                             aspect: float = _HALO_ASPECT) -> MeshSolution:
    """Closed initial guess sampled from the linearised dynamics at an
    equilibrium.

    ``plane="in-plane"`` samples one period of the center-eigenspace
    ellipse of the in-plane mode, phased to start on the x-axis
    (q2 = 0).  ``plane="vertical"`` builds an elliptic curve in the plane
    orthogonal to the x-axis through the equilibrium, with vertical
    semi-axis ``amplitude``, in-plane semi-axis ``aspect * amplitude``,
    starting at the upper end of the vertical axis; the traversal period
    is that of the vertical mode.  Stages start as constant extrapolation.
    """
    equilibrium = np.asarray(equilibrium, float)
    M = linearize(model, equilibrium)
    pairs = _center_pairs(M)
    if not pairs:
        raise ValueError("no center eigenvalue pair at the given equilibrium")
    d = model.dim
    m = d // 2
    theta = 2.0 * np.pi * np.arange(n + 1) / n

    if plane == "in-plane":
        omega, vec = pairs[0]
        vr, vi = vec.real, vec.imag
        # phase the ellipse so q2(0) = 0 with q1(0) > equilibrium q1
        phi = np.arctan2(vr[1], vi[1])
        pts = (np.cos(theta + phi)[:, None] * vr[None, :]
               - np.sin(theta + phi)[:, None] * vi[None, :])
        if pts[0, 0] < 0.0:
            pts = -pts
        scale = amplitude / np.max(np.abs(pts[:, 0]))
        ys = equilibrium[None, :] + scale * pts
        ys[0, 1] = 0.0
        ys[-1] = ys[0]
        period = 2.0 * np.pi / omega
    elif plane == "vertical":
        if m != 3:
            raise ValueError("vertical guesses need a spatial (dim 6) model")
        # vertical mode = the center pair living in the (q3, p3) subspace
        vertical = [p for p in pairs
                    if np.linalg.norm(np.delete(p[1], [2, 5])) < 1e-8]
        omega = vertical[0][0] if vertical else pairs[-1][0]
        period = 2.0 * np.pi / omega
        a_y = aspect * amplitude
        q = np.zeros((n + 1, 3))
        q[:, 1] = -a_y * np.sin(theta)
        q[:, 2] = amplitude * np.cos(theta)
        qdot = np.zeros((n + 1, 3))
        qdot[:, 1] = -a_y * omega * np.cos(theta)
        qdot[:, 2] = -amplitude * omega * np.sin(theta)
        q += equilibrium[None, :3]
        p = np.empty_like(q)
        p[:, 0] = qdot[:, 0] - q[:, 1]
        p[:, 1] = qdot[:, 1] + q[:, 0]
        p[:, 2] = qdot[:, 2]
        ys = np.hstack([q, p])
        ys[-1] = ys[0]
    else:
        raise ValueError(f"unknown plane selection {plane!r}")

    # single-stage constant extrapolation; drivers re-expand to their s
    Zs = np.repeat(ys[:-1, None, :], 1, axis=1)
    return MeshSolution(t0=0.0, h=period / n, n=n, ys=ys, Zs=Zs)


def _prepare_stages(mesh: MeshSolution, s: int) -> MeshSolution:
    """Stages for a solve with s fundamental stages: keep the guess's stages
    when they already match (warm start), otherwise constant extrapolation."""
    out = mesh.copy()
    if out.Zs.shape[1] != s:
        out.Zs = np.repeat(out.ys[:-1, None, :], s, axis=1)
    return out


def _l2_equilibrium(mu: float, spatial: bool) -> np.ndarray:
    x = collinear_libration_points(mu)[1]
    if spatial:
        return np.array([x, 0.0, 0.0, 0.0, x, 0.0])
    return np.array([x, 0.0, 0.0, x])


def lyapunov_guess(mu: float = DEFAULT_MU, amplitude: float = 4e-3,
                   n: int = 100) -> MeshSolution:
    """Near-equilibrium planar orbit from the linearisation at L2.

    The default amplitude is calibrated so the Sun-Earth scenarios around
    L2 converge to the intended orbit family member; too small a value
    lets the anchored-periodic iteration collapse onto the equilibrium.
    """
    model = crtbp_model(CrtbpParams(mu, spatial=False))
    return initial_guess_linearized(model, _l2_equilibrium(mu, False), amplitude, n)


def halo_guess(mu: float = DEFAULT_MU, amplitude: float = 3e-3, n: int = 100,
               aspect: float = _HALO_ASPECT) -> MeshSolution:
    """Elliptic out-of-plane curve through L2 used to seed halo solves.

    Defaults (vertical semi-axis, in-plane aspect) are calibrated against
    the Sun-Earth L2 halo family near a 180-day period.
    """
    model = crtbp_model(CrtbpParams(mu, spatial=True))
    return initial_guess_linearized(model, _l2_equilibrium(mu, True), amplitude,
                                    n, plane="vertical", aspect=aspect)


def _orbit_result(model, mesh, mu, tag) -> OrbitResult:
    drift = energy_drift(model, mesh.ys)
    return OrbitResult(mesh=mesh,
                       period_days=nondim_to_days(mesh.n * mesh.h),
                       energy=model.H(mesh.ys[0]),
                       max_energy_drift=float(np.max(np.abs(drift))),
                       classification=tag, mu=mu)


def _anchor_q2(dim: int) -> np.ndarray:
    row = np.zeros((1, dim))
    row[0, 1] = 1.0
    return row


def _anchor_q3(dim: int) -> np.ndarray:
    row = np.zeros((1, dim))
    row[0, 2] = 1.0
    return row


def _halo_anchor_value(guess: MeshSolution) -> float:
    """Default q3 anchor level for a halo solve.

    Anchoring exactly at the vertical extremum (where qdot3 = 0) stalls
    the least-squares iteration, so when the guess starts at its own top
    (a fresh ellipse guess) the anchor is lowered to a level the orbit
    crosses transversally.  A warm-start mesh that already begins on a
    transversal crossing keeps its starting height.
    """
    z0 = float(guess.ys[0, 2])
    z_top = float(np.max(guess.ys[:, 2]))
    if abs(z0 - z_top) < 0.05 * max(abs(z_top), 1e-12):
        return _HALO_ANCHOR_FRACTION * z0
    return z0


def lyapunov_by_period(mu: float, T_days: float, guess: MeshSolution,
                       hbvm=(6, 2), n: int = 100,
                       anchor=None, opts: NewtonOptions | None = None) -> OrbitResult:
    """Planar periodic orbit of prescribed period around L2.

    Anchored-periodic solve at fixed h = T/n; the default anchor fixes
    q2(t0) = 0 (start on the x-axis).
    """
    model = crtbp_model(CrtbpParams(mu, spatial=False))
    part = make_partition(*hbvm)
    mesh0 = _prepare_stages(guess, part.s)
    mesh0.h = days_to_nondim(T_days) / n
    if anchor is None:
        anchor = PeriodicAnchored(Ba=_anchor_q2(model.dim), b0=np.zeros(1))
    mesh = newton_solve(model, part, anchor, mesh0, opts or _MISSION_OPTS)
    return _orbit_result(model, mesh, mu, "L2 Lyapunov (by period)")


def lyapunov_by_energy(mu: float, H_target: float, guess: MeshSolution,
                       hbvm=(6, 2), n: int = 100,
                       anchor=None, opts: NewtonOptions | None = None) -> OrbitResult:
    """Planar periodic orbit of prescribed energy; the period is an output."""
    model = crtbp_model(CrtbpParams(mu, spatial=False))
    part = make_partition(*hbvm)
    mesh0 = _prepare_stages(guess, part.s)
    if anchor is None:
        spec = PeriodicEnergy(Ba=_anchor_q2(model.dim), b0=np.zeros(1),
                              H_target=H_target)
    else:
        spec = PeriodicEnergy(Ba=anchor.Ba, b0=anchor.b0, H_target=H_target)
    mesh = newton_solve(model, part, spec, mesh0, opts or _MISSION_OPTS)
    return _orbit_result(model, mesh, mu, "L2 Lyapunov (by energy)")


def halo_by_period(mu: float, T_days: float, guess: MeshSolution,
                   hbvm=(6, 2), n: int = 100,
                   anchor=None, opts: NewtonOptions | None = None) -> OrbitResult:
    """Spatial periodic (halo) orbit of prescribed period around L2.

    The default anchor pins q3(t0) to the guess's starting (topmost) value.
    """
    model = crtbp_model(CrtbpParams(mu, spatial=True))
    part = make_partition(*hbvm)
    mesh0 = _prepare_stages(guess, part.s)
    mesh0.h = days_to_nondim(T_days) / n
    if anchor is None:
        anchor = PeriodicAnchored(Ba=_anchor_q3(model.dim),
                                  b0=np.array([_halo_anchor_value(guess)]))
    mesh = newton_solve(model, part, anchor, mesh0, opts or _MISSION_OPTS)
    return _orbit_result(model, mesh, mu, "L2 halo (by period)")


def halo_by_energy(mu: float, H_target: float, guess: MeshSolution,
                   hbvm=(6, 2), n: int = 100,
                   anchor=None, opts: NewtonOptions | None = None) -> OrbitResult:
    """Spatial periodic (halo) orbit of prescribed energy level."""
    model = crtbp_model(CrtbpParams(mu, spatial=True))
    part = make_partition(*hbvm)
    mesh0 = _prepare_stages(guess, part.s)
    if anchor is None:
        spec = PeriodicEnergy(Ba=_anchor_q3(model.dim),
                              b0=np.array([_halo_anchor_value(guess)]),
                              H_target=H_target)
    else:
        spec = PeriodicEnergy(Ba=anchor.Ba, b0=anchor.b0, H_target=H_target)
    mesh = newton_solve(model, part, spec, mesh0, opts or _MISSION_OPTS)
    return _orbit_result(model, mesh, mu, "L2 halo (by energy)")


def _fixed_state_conditions(dim_ext: int, state_left, state_right) -> Separated:
    """Both end states pinned, costates free: r = dim_ext/2 conditions per end."""
    ds = dim_ext // 2
    P1 = np.asarray(state_left, float)
    P2 = np.asarray(state_right, float)
    E = np.hstack([np.eye(ds), np.zeros((ds, ds))])
    return Separated(ga=lambda z: z[:ds] - P1, ga_jac=lambda z: E,
                     gb=lambda z: z[:ds] - P2, gb_jac=lambda z: E, r=ds)


def _transfer_result(model, part, mesh, state_left, state_right) -> TransferResult:
    ds = model.dim // 2
    u = control_from_costate(mesh.ys)
    # cost by the method's own quadrature over all k stage values per interval
    b = part.rule.weights
    cost = 0.0
    for i in range(mesh.n):
        stages = np.empty((part.k, model.dim))
        stages[part.fundamental_idx] = mesh.Zs[i]
        if len(part.silent_idx):
            stages[part.silent_idx] = silent_stages(part, mesh.ys[i], mesh.Zs[i])
        ustage = control_from_costate(stages)
        cost += mesh.h * float(b @ np.sum(ustage ** 2, axis=1))
    drift = energy_drift(model, mesh.ys)
    mismatch = max(float(np.max(np.abs(mesh.ys[0, :ds] - state_left))),
                   float(np.max(np.abs(mesh.ys[-1, :ds] - state_right))))
    return TransferResult(mesh=mesh, control=u, cost=0.5 * cost,
                          boundary_mismatch=mismatch,
                          energy_error=float(drift[-1]))


def _solve_transfer(model, part, P1, P2, tf, n, opts, tf_continuation=()):
    """Shared transfer solve with optional warm-started continuation in tf."""
    ds = model.dim // 2
    P1 = np.asarray(P1, float)
    P2 = np.asarray(P2, float)
    spec = _fixed_state_conditions(model.dim, P1, P2)

    def initial_mesh(tf_val, base=None):
        if base is None:
            lam = np.zeros((n + 1, ds))
            frac = np.linspace(0.0, 1.0, n + 1)[:, None]
            states = (1.0 - frac) * P1[None, :] + frac * P2[None, :]
            ys = np.hstack([states, lam])
        else:
            ys = base.ys.copy()
        mesh = MeshSolution(t0=0.0, h=tf_val / n, n=n, ys=ys,
                            Zs=np.repeat(ys[:-1, None, :], part.s, axis=1))
        return mesh

    schedule = list(tf_continuation) + [tf]
    mesh = None
    for tf_val in schedule:
        mesh0 = initial_mesh(tf_val, base=mesh)
        mesh = newton_solve(model, part, spec, mesh0, opts)
    return mesh


def hill_transfer(P1, P2, tf: float, hbvm=(4, 2), n: int = 100,
                  opts: NewtonOptions | None = None,
                  tf_continuation=()) -> TransferResult:
    """Minimum-effort transfer between two states of the Hill problem.

    ``P1`` and ``P2`` are planar states (q1, q2, p1, p2); the transfer time
    ``tf`` is in nondimensional units.  Costates start from zero; an
    optional increasing ``tf_continuation`` schedule warm-starts hard cases.
    """
    model = extended_hill_model()
    part = make_partition(*hbvm)
    mesh = _solve_transfer(model, part, P1, P2, tf, n,
                           opts or _MISSION_OPTS, tf_continuation)
    return _transfer_result(model, part, mesh, P1, P2)


def halo_transfer(orbitA: OrbitResult, orbitB: OrbitResult, T_days: float,
                  hbvm=(6, 2), n: int = 100,
                  opts: NewtonOptions | None = None,
                  tf_continuation=()) -> TransferResult:
    """Minimum-effort transfer between the topmost points of two halo orbits."""
    mu = orbitA.mu if orbitA.mu is not None else DEFAULT_MU
    base = crtbp_model(CrtbpParams(mu, spatial=True))
    model = extended_model(base)
    part = make_partition(*hbvm)
    P1 = orbitA.mesh.ys[np.argmax(orbitA.mesh.ys[:, 2])]
    P2 = orbitB.mesh.ys[np.argmax(orbitB.mesh.ys[:, 2])]
    tf = days_to_nondim(T_days)
    mesh = _solve_transfer(model, part, P1, P2, tf, n,
                           opts or _MISSION_OPTS, tf_continuation)
    return _transfer_result(model, part, mesh, P1, P2)


@dataclass
class ContinuationStep:
    """One entry of a continuation run: the parameter, and either a result
    or the error that stopped this step."""

    parameter: float
    result: object = None
    error: Exception | None = None

    @property
    def ok(self) -> bool:
        return self.error is None


def continuation(driver, parameters, guess: MeshSolution):
    """Warm-started parameter sweep.

    ``driver(parameter, guess)`` must return an object with a ``mesh``
    attribute (e.g. :class:`OrbitResult`).  Each solve restarts from the
    previous converged mesh; failures are recorded and the sweep continues
    from the last success.
    """
    steps = []
    current = guess
    for p in parameters:
        try:
            result = driver(p, current)
        except ConvergenceError as exc:
            steps.append(ContinuationStep(parameter=p, error=exc))
            continue
        steps.append(ContinuationStep(parameter=p, result=result))
        current = result.mesh
    return steps
