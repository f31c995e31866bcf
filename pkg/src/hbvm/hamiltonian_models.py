"""Hamiltonian model contracts and the concrete astrodynamics models.

A model exposes the value H, the gradient and the Hessian of a scalar
Hamiltonian on a 2m-dimensional state y = (q, p).  The canonical
structure matrix

    J = [[0, I_m], [-I_m, 0]]

is never stored; it is applied structurally by swapping and negating the
position/momentum blocks (see :func:`j_times_vec` / :func:`j_times_mat`).

Concrete models: the circular restricted three-body problem (spatial and
planar), the Hill problem, and their Pontryagin-extended state+costate
versions used for minimum-effort transfers.  Units follow the usual
nondimensional convention (total mass 1, primary distance 1, angular
velocity 1); helpers convert from days and kilometres.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from .errors import ModelDomainError

__all__ = [
    "HamiltonianModel",
    "CrtbpParams",
    "PhysicalConstants",
    "CONSTANTS",
    "j_times_vec",
    "j_times_mat",
    "mat_times_j",
    "crtbp_model",
    "hill_model",
    "extended_model",
    "extended_hill_model",
    "collinear_libration_points",
    "linearize",
    "days_to_nondim",
    "nondim_to_days",
    "km_to_nondim",
]

_MIN_SEPARATION = 1e-9


def j_times_vec(g):
    """Apply J to one vector or to the rows of an array of vectors."""
    g = np.asarray(g)
    m = g.shape[-1] // 2
    return np.concatenate([g[..., m:], -g[..., :m]], axis=-1)


def j_times_mat(M):
    """Return J @ M without forming J."""
    m = M.shape[0] // 2
    return np.vstack([M[m:], -M[:m]])


def mat_times_j(M):
    """Return M @ J without forming J."""
    m = M.shape[1] // 2
    return np.hstack([-M[:, m:], M[:, :m]])


@dataclass
class HamiltonianModel:
    """Evaluation contract for a 2m-dimensional Hamiltonian system.

    ``H``, ``grad`` and ``hess`` take a state vector of length ``dim`` and
    return a float, a (dim,) vector and a symmetric (dim, dim) matrix.
    The flow is ydot = J grad H(y).
    """

    dim: int
    H: Callable[[np.ndarray], float]
    grad: Callable[[np.ndarray], np.ndarray]
    hess: Callable[[np.ndarray], np.ndarray]
    name: str = ""

    def vector_field(self, y):
        return j_times_vec(self.grad(y))


@dataclass(frozen=True)
class CrtbpParams:
    """Mass ratio and planar/spatial switch for the restricted three-body model."""

    mu: float
    spatial: bool = True

    def __post_init__(self):
        if not 0.0 < self.mu < 0.5:
            raise ValueError(f"mass ratio must lie in (0, 1/2), got {self.mu}")


@dataclass(frozen=True)
class PhysicalConstants:
    """Sun-Earth/Moon normalisation constants (length in km, rate in rad/s)."""

    R_km: float = 1.49589e8
    omega_rad_s: float = 1.99099e-7


CONSTANTS = PhysicalConstants()

_SECONDS_PER_DAY = 86400.0


def days_to_nondim(T_days, constants: PhysicalConstants = CONSTANTS):
    """Convert a duration in days to nondimensional time units."""
    return T_days * _SECONDS_PER_DAY * constants.omega_rad_s


def nondim_to_days(t, constants: PhysicalConstants = CONSTANTS):
    """Convert a nondimensional duration to days."""
    return t / (_SECONDS_PER_DAY * constants.omega_rad_s)


def km_to_nondim(d_km, constants: PhysicalConstants = CONSTANTS):
    """Convert a distance in km to primary-separation units."""
    return d_km / constants.R_km


def _crtbp_separations(q3, mu):
    """Distances from the two primaries for a 3D position vector."""
    d1 = q3 + np.array([mu, 0.0, 0.0])
    d2 = q3 - np.array([1.0 - mu, 0.0, 0.0])
    r1 = float(np.linalg.norm(d1))
    r2 = float(np.linalg.norm(d2))
    if r1 < _MIN_SEPARATION or r2 < _MIN_SEPARATION:
        raise ModelDomainError(f"state too close to a primary: r1={r1:.3e}, r2={r2:.3e}")
    return d1, d2, r1, r2


def crtbp_model(params: CrtbpParams) -> HamiltonianModel:
    """Rotating-frame Hamiltonian of the circular restricted three-body problem.

    H(q, p) = p1 q2 - p2 q1 + |p|^2 / 2 - (1 - mu)/r1 - mu/r2 with r1, r2
    the distances from the primaries at (-mu, 0, 0) and (1 - mu, 0, 0).
    The planar variant eliminates q3 = p3 = 0; its H values coincide with
    the spatial model on the embedded states.
    """
    mu = params.mu
    # planar states embed as (q1, q2, 0, p1, p2, 0)
    idx = np.array([0, 1, 3, 4]) if not params.spatial else np.arange(6)
    dim = len(idx)

    def embed(y):
        z = np.zeros(6)
        z[idx] = y
        return z[:3], z[3:]

    def H(y):
        q, p = embed(np.asarray(y, float))
        _, _, r1, r2 = _crtbp_separations(q, mu)
        return (p[0] * q[1] - p[1] * q[0] + 0.5 * p @ p
                - (1.0 - mu) / r1 - mu / r2)

    def grad(y):
        q, p = embed(np.asarray(y, float))
        d1, d2, r1, r2 = _crtbp_separations(q, mu)
        gq = (np.array([-p[1], p[0], 0.0])
              + (1.0 - mu) * d1 / r1 ** 3 + mu * d2 / r2 ** 3)
        gp = p + np.array([q[1], -q[0], 0.0])
        return np.concatenate([gq, gp])[idx]

    def hess(y):
        q, p = embed(np.asarray(y, float))
        d1, d2, r1, r2 = _crtbp_separations(q, mu)
        Hqq = ((1.0 - mu) * (np.eye(3) / r1 ** 3 - 3.0 * np.outer(d1, d1) / r1 ** 5)
               + mu * (np.eye(3) / r2 ** 3 - 3.0 * np.outer(d2, d2) / r2 ** 5))
        Hqp = np.array([[0.0, -1.0, 0.0], [1.0, 0.0, 0.0], [0.0, 0.0, 0.0]])
        M = np.zeros((6, 6))
        M[:3, :3] = Hqq
        M[:3, 3:] = Hqp
        M[3:, :3] = Hqp.T
        M[3:, 3:] = np.eye(3)
        return M[np.ix_(idx, idx)]

    tag = "crtbp-spatial" if params.spatial else "crtbp-planar"
    return HamiltonianModel(dim=dim, H=H, grad=grad, hess=hess, name=f"{tag}(mu={mu:g})")


def hill_model() -> HamiltonianModel:
    """Planar Hill problem Hamiltonian, Earth-centred and mass-ratio free.

    H = p1 q2 - p2 q1 + (p1^2 + p2^2)/2 - 1/|q| + q2^2 / 2 - q1^2.
    The two equilibria sit at (±(1/3)^(1/3), 0) with zero velocity.
    """

    def _radius(q):
        r = float(np.hypot(q[0], q[1]))
        if r < _MIN_SEPARATION:
            raise ModelDomainError(f"state too close to the origin: r={r:.3e}")
        return r

    def H(y):
        q, p = np.asarray(y, float)[:2], np.asarray(y, float)[2:]
        r = _radius(q)
        return (p[0] * q[1] - p[1] * q[0] + 0.5 * (p @ p)
                - 1.0 / r + 0.5 * q[1] ** 2 - q[0] ** 2)

    def grad(y):
        y = np.asarray(y, float)
        q, p = y[:2], y[2:]
        r = _radius(q)
        gq = np.array([-p[1] + q[0] / r ** 3 - 2.0 * q[0],
                       p[0] + q[1] / r ** 3 + q[1]])
        gp = np.array([p[0] + q[1], p[1] - q[0]])
        return np.concatenate([gq, gp])

    def hess(y):
        y = np.asarray(y, float)
        q = y[:2]
        r = _radius(q)
        Hqq = (np.eye(2) / r ** 3 - 3.0 * np.outer(q, q) / r ** 5
               + np.diag([-2.0, 1.0]))
        Hqp = np.array([[0.0, -1.0], [1.0, 0.0]])
        M = np.zeros((4, 4))
        M[:2, :2] = Hqq
        M[:2, 2:] = Hqp
        M[2:, :2] = Hqp.T
        M[2:, 2:] = np.eye(2)
        return M

    return HamiltonianModel(dim=4, H=H, grad=grad, hess=hess, name="hill")


def _pontryagin_extension(base: HamiltonianModel, fd_step: float = 1e-6) -> HamiltonianModel:
    """State+costate Hamiltonian for minimum-effort control of ``base``.

    With state y, costate lam and velocity-costate block lam_v (the last
    m components of lam), the reduced Hamiltonian after eliminating the
    control u = -lam_v is

        Hext(y, lam) = lam . (J grad H(y)) - |lam_v|^2 / 2.

    The extended state is ordered z = (y, lam), which makes the flow
    zdot = J grad Hext reproduce ydot = dHext/dlam, lamdot = -dHext/dy.
    Third derivatives of the base Hamiltonian enter the Hessian; they are
    approximated by central differences of the analytic base Hessian.
    """
    d = base.dim
    m = d // 2
    S = np.concatenate([np.zeros(m), np.ones(m)])

    def split(z):
        z = np.asarray(z, float)
        return z[:d], z[d:]

    def H(z):
        y, lam = split(z)
        return float(lam @ j_times_vec(base.grad(y)) - 0.5 * lam[m:] @ lam[m:])

    def grad(z):
        y, lam = split(z)
        g_y = -base.hess(y) @ j_times_vec(lam)
        g_lam = j_times_vec(base.grad(y)) - S * lam
        return np.concatenate([g_y, g_lam])

    def hess(z):
        y, lam = split(z)
        jlam = j_times_vec(lam)
        delta = fd_step * max(1.0, float(np.max(np.abs(y))))
        T = np.empty((d, d))
        for c in range(d):
            e = np.zeros(d)
            e[c] = delta
            T[:, c] = -(base.hess(y + e) - base.hess(y - e)) @ jlam / (2.0 * delta)
        T = 0.5 * (T + T.T)
        ylam = -mat_times_j(base.hess(y))
        M = np.zeros((2 * d, 2 * d))
        M[:d, :d] = T
        M[:d, d:] = ylam
        M[d:, :d] = ylam.T
        M[d:, d:] = -np.diag(S)
        return M

    return HamiltonianModel(dim=2 * d, H=H, grad=grad, hess=hess,
                            name=f"extended({base.name})")


def extended_model(base: HamiltonianModel) -> HamiltonianModel:
    """Extended state+costate model for a spatial (dim 6) base Hamiltonian."""
    if base.dim != 6:
        raise ValueError(f"extended_model expects a dim-6 base model, got dim={base.dim}")
    return _pontryagin_extension(base)


def extended_hill_model(base: HamiltonianModel | None = None) -> HamiltonianModel:
    """Extended state+costate model for the planar Hill problem (dim 4 base)."""
    if base is None:
        base = hill_model()
    if base.dim != 4:
        raise ValueError(f"extended_hill_model expects a dim-4 base model, got dim={base.dim}")
    return _pontryagin_extension(base)


def control_from_costate(z):
    """Recover the control u = -(velocity block of the costate) from an
    extended state (works for one state or an array of them)."""
    z = np.asarray(z, float)
    d = z.shape[-1] // 2
    m = d // 2
    return -z[..., d + m:]


def _collinear_equation(x, mu):
    u1 = x + mu
    u2 = x - 1.0 + mu
    f = x - (1.0 - mu) * u1 / abs(u1) ** 3 - mu * u2 / abs(u2) ** 3
    fp = 1.0 + 2.0 * (1.0 - mu) / abs(u1) ** 3 + 2.0 * mu / abs(u2) ** 3
    return f, fp


def collinear_libration_points(mu: float) -> np.ndarray:
    """x-abscissae of the collinear equilibria (L1, L2, L3), barycentric frame.

    Roots of x - (1-mu)(x+mu)/|x+mu|^3 - mu(x-1+mu)/|x-1+mu|^3 = 0, one per
    standard interval, found by bisection plus Newton polishing.
    """
    if not 0.0 < mu < 0.5:
        raise ValueError(f"mass ratio must lie in (0, 1/2), got {mu}")
    eps = 1e-9
    brackets = [
        (-mu + eps, 1.0 - mu - eps),   # L1, between the primaries
        (1.0 - mu + eps, 2.0),         # L2, beyond the small primary
        (-2.0, -mu - eps),             # L3, opposite the small primary
    ]
    roots = []
    for lo, hi in brackets:
        flo = _collinear_equation(lo, mu)[0]
        for _ in range(80):
            mid = 0.5 * (lo + hi)
            fmid = _collinear_equation(mid, mu)[0]
            if (flo < 0) == (fmid < 0):
                lo, flo = mid, fmid
            else:
                hi = mid
        x = 0.5 * (lo + hi)
        for _ in range(50):
            f, fp = _collinear_equation(x, mu)
            step = f / fp
            x -= step
            if abs(step) < 1e-16:
                break
        roots.append(x)
    return np.array(roots)


def linearize(model: HamiltonianModel, y_eq, grad_tol: float = 1e-8) -> np.ndarray:
    """State matrix J hess(y_eq) of the variational equations at an equilibrium."""
    y_eq = np.asarray(y_eq, float)
    gnorm = float(np.max(np.abs(model.grad(y_eq))))
    if gnorm > grad_tol:
        raise ValueError(f"not an equilibrium: |grad H| = {gnorm:.3e} > {grad_tol:g}")
    return j_times_mat(model.hess(y_eq))
