"""Nitsche contact operators, the generalized Newton iteration and the Coulomb fixed point."""

from __future__ import annotations

import enum
from dataclasses import dataclass, field, replace

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from . import kernels
from .fem import (
    ContactPoints,
    FeSpace,
    MaterialParams,
    NodalSampler,
    OperatorRows,
    StressTrace,
    apply_dirichlet,
    nodal_trace,
    operator_rows,
    trace_at,
)

GAP_SENTINEL = 1e3


class NonConvergence(RuntimeError):
    def __init__(self, message: str, result=None):
        super().__init__(message)
        self.result = result


class SingularTangent(RuntimeError):
    pass


# -- pointwise operators ----------------------------------------------------------

def neg_part(z):
    """``[z]_- = min(z, 0)``."""
    return np.minimum(z, 0.0)


def heaviside(z):
    """1 where ``z >= 0``, else 0."""
    return (np.asarray(z) >= 0.0).astype(float)


def proj_ball(x, r):
    """Projection onto the interval ``[-r, r]`` (the ball of R^1)."""
    return np.clip(x, -np.asarray(r), np.asarray(r))


def ball_proj_jacobian(x, s):
    """Derivative of ``proj_ball``: 1 inside the ball, 0 outside (exact in 1D)."""
    return (np.abs(x) <= s).astype(float)


def huber(x, s):
    """Primitive of ``proj_ball``: ``x^2/2 - (x - [x]_s)^2/2``."""
    p = proj_ball(x, s)
    return 0.5 * x * x - 0.5 * (x - p) ** 2


# -- parameters -------------------------------------------------------------------

@dataclass(frozen=True)
class NitscheParams:
    gamma0: float
    mesh_size_h: float

    def __post_init__(self):
        if not (self.gamma0 > 0 and self.mesh_size_h > 0):
            raise ValueError("Nitsche parameters must be positive")

    @property
    def gamma(self) -> float:
        return self.gamma0 / self.mesh_size_h

    @classmethod
    def from_material(cls, mat: MaterialParams, h: float, factor: float = 50.0) -> "NitscheParams":
        return cls(factor * mat.lame_mu, h)


class FrictionKind(enum.Enum):
    FRICTIONLESS = "none"
    TRESCA = "tresca"
    COULOMB = "coulomb"


@dataclass(frozen=True, eq=False)
class FrictionModel:
    """Friction law; ``s`` may be a scalar or a per-quadrature-point array for Tresca."""

    kind: FrictionKind = FrictionKind.FRICTIONLESS
    s: float | np.ndarray = 0.0
    nu_F: float = 0.0

    def __post_init__(self):
        if self.kind is FrictionKind.TRESCA and np.any(np.asarray(self.s) < 0):
            raise ValueError("Tresca threshold must be non-negative")
        if self.kind is FrictionKind.COULOMB and not self.nu_F > 0:
            raise ValueError("Coulomb coefficient must be positive")

    @classmethod
    def frictionless(cls):
        return cls()

    @classmethod
    def tresca(cls, s):
        return cls(FrictionKind.TRESCA, s=s)

    @classmethod
    def coulomb(cls, nu_F: float):
        return cls(FrictionKind.COULOMB, nu_F=nu_F)

    @property
    def tangential(self) -> bool:
        return self.kind is not FrictionKind.FRICTIONLESS


# -- gap --------------------------------------------------------------------------

@dataclass(frozen=True)
class RigidDisk:
    radius: float
    center: tuple[float, float]


def ray_gap(points: np.ndarray, normals: np.ndarray, obstacle: RigidDisk, sentinel: float = GAP_SENTINEL):
    """Distance from ``points`` along ``normals`` to the obstacle disk (sentinel if missed)."""
    p = np.asarray(points, float) - np.asarray(obstacle.center, float)
    b = np.sum(p * normals, axis=-1)
    c = np.sum(p * p, axis=-1) - obstacle.radius**2
    disc = b * b - c
    root = np.sqrt(np.maximum(disc, 0.0))
    t = -b - root
    t = np.where(t < 0.0, -b + root, t)
    return np.where((disc < 0.0) | (t < 0.0), sentinel, t)


@dataclass(frozen=True)
class GapField:
    quad: np.ndarray
    nodal: np.ndarray


def gap_field(points: ContactPoints, sampler: NodalSampler, obstacle: RigidDisk) -> GapField:
    return GapField(
        ray_gap(points.points, points.normals, obstacle),
        ray_gap(sampler.coords, sampler.normals, obstacle),
    )


# -- contact data -----------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class ContactData:
    """Pointwise contact quantities at one parameter value."""

    points: ContactPoints
    rows: OperatorRows
    gamma: float
    gap: np.ndarray

    @classmethod
    def build(cls, points: ContactPoints, mat: MaterialParams, gamma: float, gap: np.ndarray):
        return cls(points, operator_rows(points, mat), float(gamma), np.asarray(gap, float))

    def scaled(self, mu: float, gap: np.ndarray) -> "ContactData":
        """Data of the domain mapped by ``x -> mu x`` with a new gap.

        The mapped mesh has size ``mu h``, so ``gamma = gamma0 / h`` becomes ``gamma / mu``.
        """
        r = self.rows
        rows = OperatorRows(r.sigma_nn / mu, r.sigma_ntau / mu, r.v_n, r.v_tau)
        return ContactData(self.points.scaled(mu), rows, self.gamma / mu, np.asarray(gap, float))

    def subset(self, idx: np.ndarray) -> "ContactData":
        r = self.rows
        rows = OperatorRows(r.sigma_nn[idx], r.sigma_ntau[idx], r.v_n[idx], r.v_tau[idx])
        return ContactData(self.points.subset(idx), rows, self.gamma, self.gap[idx])


@dataclass(frozen=True)
class ContactTrace:
    sigma_nn: np.ndarray
    sigma_ntau: np.ndarray
    v_n: np.ndarray
    v_tau: np.ndarray
    p_n_gamma_g: np.ndarray
    p_n_gamma_0: np.ndarray
    p_tau: np.ndarray


def _with_operators(t: StressTrace, gamma: float, gap) -> ContactTrace:
    return ContactTrace(
        t.sigma_nn, t.sigma_ntau, t.v_n, t.v_tau,
        t.sigma_nn - gamma * (t.v_n - gap),
        t.sigma_nn - gamma * t.v_n,
        t.sigma_ntau - gamma * t.v_tau,
    )


def eval_contact_traces(data: ContactData, U: np.ndarray) -> ContactTrace:
    return _with_operators(trace_at(data.points, data.rows, U), data.gamma, data.gap)


def eval_nodal_traces(sampler: NodalSampler, rows: OperatorRows, gamma: float, gap_nodal, U) -> ContactTrace:
    return _with_operators(nodal_trace(sampler, rows, U), gamma, gap_nodal)


def _threshold(friction: FrictionModel, shape):
    return np.broadcast_to(np.asarray(friction.s, float), shape)


def _p0_rows(data: ContactData):
    return data.rows.sigma_nn - data.gamma * data.rows.v_n


def _pt_rows(data: ContactData):
    return data.rows.sigma_ntau - data.gamma * data.rows.v_tau


def local_correction(data: ContactData, friction: FrictionModel) -> np.ndarray:
    """Element matrices of ``int (1/gamma) sigma(u)n . sigma(v)n`` (normal part only if frictionless)."""
    coef = data.points.weights / data.gamma
    local = kernels.outer_accumulate(coef, data.rows.sigma_nn)
    if friction.tangential:
        local += kernels.outer_accumulate(coef, data.rows.sigma_ntau)
    return local


def local_tangent(data: ContactData, friction: FrictionModel, U: np.ndarray, part: str = "all") -> np.ndarray:
    """Element matrices of the generalized derivative of the contact terms at ``U``.

    ``part`` restricts to the derivative of the normal (``'n'``) or
    tangential (``'tau'``) residual term; ``'all'`` is their sum.
    """
    tr = eval_contact_traces(data, U)
    w = data.points.weights / data.gamma
    if part == "tau":
        local = np.zeros(data.points.values.shape[:1] + (data.points.dofs.shape[1],) * 2)
    else:
        local = kernels.outer_accumulate(w * heaviside(-tr.p_n_gamma_g), _p0_rows(data))
    if friction.tangential and part != "n":
        s = _threshold(friction, w.shape)
        local += kernels.outer_accumulate(w * ball_proj_jacobian(tr.p_tau, s), _pt_rows(data))
    return local


def local_theta(data: ContactData, friction: FrictionModel, U: np.ndarray, part: str = "n") -> np.ndarray:
    """Element vectors of the normal (``part='n'``) or tangential (``'tau'``) residual term."""
    tr = eval_contact_traces(data, U)
    w = data.points.weights / data.gamma
    if part == "n":
        return kernels.weighted_accumulate(w * neg_part(tr.p_n_gamma_g), _p0_rows(data))
    s = _threshold(friction, w.shape)
    return kernels.weighted_accumulate(w * proj_ball(tr.p_tau, s), _pt_rows(data))


# -- assembly on the contact block ------------------------------------------------

@dataclass(frozen=True, eq=False)
class ContactPattern:
    """Sparsity of the contact terms and in-order scatter maps.

    Matrix entries are stored on the upper triangle (row <= col) sorted
    lexicographically; vector entries on the sorted DOF support. Element
    contributions are accumulated in ascending element order, so a single
    entry recomputed from its own element list matches the full assembly
    bit for bit.
    """

    n_dof: int
    n_loc: int
    rows: np.ndarray
    cols: np.ndarray
    mat_src: np.ndarray
    mat_dst: np.ndarray
    vec_dofs: np.ndarray
    vec_src: np.ndarray
    vec_dst: np.ndarray

    @classmethod
    def build(cls, dofs: np.ndarray, n_dof: int) -> "ContactPattern":
        n_el, n_loc = dofs.shape
        gi = np.repeat(dofs, n_loc, axis=1).ravel()
        gj = np.tile(dofs, (1, n_loc)).ravel()
        upper = np.flatnonzero(gi <= gj)
        key = gi[upper] * n_dof + gj[upper]
        uniq, dst = np.unique(key, return_inverse=True)
        vec_dofs, vdst = np.unique(dofs.ravel(), return_inverse=True)
        return cls(n_dof, n_loc, uniq // n_dof, uniq % n_dof, upper, dst.ravel(),
                   vec_dofs, np.arange(dofs.size), vdst.ravel())

    @property
    def n_entries(self) -> int:
        return len(self.rows)

    def matrix_values(self, local: np.ndarray) -> np.ndarray:
        out = np.zeros(self.n_entries)
        kernels.scatter_add(out, self.mat_dst, local.reshape(-1)[self.mat_src])
        return out

    def vector_values(self, local: np.ndarray) -> np.ndarray:
        out = np.zeros(len(self.vec_dofs))
        kernels.scatter_add(out, self.vec_dst, local.reshape(-1)[self.vec_src])
        return out

    def to_matrix(self, values: np.ndarray) -> sp.csr_matrix:
        off = self.rows != self.cols
        r = np.concatenate([self.rows, self.cols[off]])
        c = np.concatenate([self.cols, self.rows[off]])
        v = np.concatenate([values, values[off]])
        return sp.csr_matrix((v, (r, c)), shape=(self.n_dof, self.n_dof))

    def to_vector(self, values: np.ndarray) -> np.ndarray:
        out = np.zeros(self.n_dof)
        out[self.vec_dofs] = values
        return out


# -- the discrete nonlinear system ------------------------------------------------

@dataclass(frozen=True, eq=False)
class NitscheSystem:
    """Algebraic Nitsche contact problem at one parameter value.

    ``gram`` defines the norm of the convergence test; ``lift`` holds the
    Dirichlet values (and is the default initial iterate when
    ``initial`` is None).
    """

    stiffness: sp.csr_matrix
    gram: sp.csr_matrix
    load: np.ndarray
    dirichlet_dofs: np.ndarray
    dirichlet_values: np.ndarray
    data: ContactData
    pattern: ContactPattern
    friction: FrictionModel = field(default_factory=FrictionModel.frictionless)

    @property
    def n_dof(self) -> int:
        return self.stiffness.shape[0]

    def with_friction(self, friction: FrictionModel) -> "NitscheSystem":
        return replace(self, friction=friction)

    def correction(self) -> sp.csr_matrix:
        return self.pattern.to_matrix(self.pattern.matrix_values(local_correction(self.data, self.friction)))

    def a_gamma(self) -> sp.csr_matrix:
        return (self.stiffness - self.correction()).tocsr()

    def b_values(self, U) -> np.ndarray:
        return self.pattern.matrix_values(local_tangent(self.data, self.friction, U))

    def b_gamma(self, U) -> sp.csr_matrix:
        return self.pattern.to_matrix(self.b_values(U))

    def theta_values(self, U, part: str = "n") -> np.ndarray:
        return self.pattern.vector_values(local_theta(self.data, self.friction, U, part))

    def theta_gamma(self, U) -> np.ndarray:
        out = self.pattern.to_vector(self.theta_values(U, "n"))
        if self.friction.tangential:
            out += self.pattern.to_vector(self.theta_values(U, "tau"))
        return out

    def residual(self, U, a_gamma=None) -> np.ndarray:
        a = self.a_gamma() if a_gamma is None else a_gamma
        r = a @ U + self.theta_gamma(U) - self.load
        r[self.dirichlet_dofs] = 0.0
        return r

    def norm(self, U) -> float:
        return float(np.sqrt(max(U @ (self.gram @ U), 0.0)))

    def lift(self) -> np.ndarray:
        out = np.zeros(self.n_dof)
        out[self.dirichlet_dofs] = self.dirichlet_values
        return out

    def linear_solution(self) -> np.ndarray:
        """Elasticity solution with the Dirichlet data and without contact terms."""
        mat, rhs = apply_dirichlet(self.stiffness, self.load, self.dirichlet_dofs, self.dirichlet_values)
        return _factor(mat).solve(rhs)

    def traces(self, U) -> ContactTrace:
        return eval_contact_traces(self.data, U)

    def energies(self, U) -> dict[str, float]:
        """``J``, the Nitsche energy and (with friction) the frictional Nitsche energy."""
        U = np.asarray(U, float)
        base = 0.5 * U @ (self.stiffness @ U) - self.load @ U
        tr = self.traces(U)
        w = self.data.points.weights / self.data.gamma
        nitsche = base - 0.5 * np.sum(w * tr.sigma_nn**2) + 0.5 * np.sum(w * neg_part(tr.p_n_gamma_g) ** 2)
        out = {"J": float(base), "J_nitsche": float(nitsche)}
        if self.friction.tangential:
            s = _threshold(self.friction, w.shape)
            out["J_friction"] = float(nitsche - 0.5 * np.sum(w * tr.sigma_ntau**2) + np.sum(w * huber(tr.p_tau, s)))
        return out


def _factor(mat: sp.spmatrix):
    try:
        lu = spla.splu(sp.csc_matrix(mat))
    except RuntimeError as exc:
        raise SingularTangent(str(exc)) from exc
    if not np.all(np.isfinite(lu.U.diagonal())) or np.any(lu.U.diagonal() == 0):
        raise SingularTangent("zero pivot in tangent factorization")
    return lu


def build_system(space: FeSpace, mat: MaterialParams, nitsche: NitscheParams, friction: FrictionModel,
                 gap: np.ndarray, stiffness, gram, load=None, dirichlet_values=0.0) -> NitscheSystem:
    """Direct construction on a (possibly mapped) space."""
    data = ContactData.build(space.contact, mat, nitsche.gamma, gap)
    values = np.broadcast_to(np.asarray(dirichlet_values, float), space.dirichlet_dofs.shape).copy()
    return NitscheSystem(
        stiffness=stiffness,
        gram=gram,
        load=np.zeros(space.n_dof) if load is None else np.asarray(load, float),
        dirichlet_dofs=space.dirichlet_dofs,
        dirichlet_values=values,
        data=data,
        pattern=ContactPattern.build(space.contact.dofs, space.n_dof),
        friction=friction,
    )


# -- solvers ----------------------------------------------------------------------

@dataclass(frozen=True)
class SolverConfig:
    """Newton settings; ``line_search`` enables Armijo backtracking on the Nitsche energy."""

    delta_u: float = 1e-8
    max_iter: int = 50
    line_search: bool = False

    def __post_init__(self):
        if not self.delta_u > 0 or self.max_iter < 1:
            raise ValueError("delta_u must be positive and max_iter at least 1")


@dataclass
class SolveResult:
    U_cv: np.ndarray
    k_cv: int
    converged: bool
    iterates: list[np.ndarray]
    increments: list[float]
    outer_iterations: int = 0


def relative_increment(norm, delta, new) -> float:
    nd, nn = norm(delta), norm(new)
    if nn == 0.0:
        return 0.0 if nd == 0.0 else np.inf
    return nd / nn


def solve_nitsche(system: NitscheSystem, config: SolverConfig = SolverConfig(), U0=None) -> SolveResult:
    """Generalized Newton iteration ``(A + B(U_k)) dU = -R(U_k)``."""
    U = system.linear_solution() if U0 is None else np.array(U0, dtype=float)
    U[system.dirichlet_dofs] = system.dirichlet_values
    a_gamma = system.a_gamma()
    iterates = [U.copy()]
    history = []
    for k in range(1, config.max_iter + 1):
        r = system.residual(U, a_gamma)
        tangent = (a_gamma + system.b_gamma(U)).tocsr()
        mat, rhs = apply_dirichlet(tangent, -r, system.dirichlet_dofs, 0.0)
        dU = _factor(mat).solve(rhs)
        if not np.all(np.isfinite(dU)):
            raise SingularTangent("non-finite Newton increment")
        if config.line_search:
            dU = dU * _armijo_step(system, U, dU, r)
        U = U + dU
        iterates.append(U.copy())
        history.append(relative_increment(system.norm, dU, U))
        if history[-1] <= config.delta_u:
            return SolveResult(U, k, True, iterates, history)
    result = SolveResult(U, config.max_iter, False, iterates, history)
    raise NonConvergence(f"no convergence after {config.max_iter} iterations "
                         f"(last increment {history[-1]:.3e})", result)


def _energy(system: NitscheSystem, U) -> float:
    e = system.energies(U)
    return e["J_friction"] if system.friction.tangential else e["J_nitsche"]


def _armijo_step(system: NitscheSystem, U, dU, r, c: float = 1e-4, min_step: float = 2.0**-30) -> float:
    """Backtracking step for the convex Nitsche energy, whose gradient is the residual ``r``."""
    e0 = _energy(system, U)
    slope = float(r @ dU)
    if slope >= 0.0:
        return 1.0
    # roundoff floor: near convergence energy differences drop below machine precision
    floor = 1e-14 * (abs(e0) + 1.0)
    t = 1.0
    while t > min_step:
        if _energy(system, U + t * dU) <= e0 + c * t * slope + floor:
            return t
        t *= 0.5
    return t


@dataclass(frozen=True)
class CoulombConfig:
    delta_fp: float = 1e-6
    max_outer: int = 100
    inner: SolverConfig = SolverConfig(line_search=True)


def coulomb_threshold(system: NitscheSystem, nu_F: float, U) -> np.ndarray:
    """Pointwise slip threshold ``nu_F |[P_n(U)]_-|`` at the contact quadrature points."""
    return nu_F * np.abs(neg_part(system.traces(U).p_n_gamma_g))


def solve_coulomb(system: NitscheSystem, nu_F: float, config: CoulombConfig = CoulombConfig()) -> SolveResult:
    """Fixed point over Tresca problems whose threshold comes from the previous outer iterate."""
    if not nu_F > 0:
        raise ValueError("Coulomb coefficient must be positive")
    frictionless = solve_nitsche(system.with_friction(FrictionModel.frictionless()), config.inner)
    U = frictionless.U_cv
    outer = [U.copy()]
    history = []
    inner_total = 0
    for n in range(1, config.max_outer + 1):
        s = coulomb_threshold(system, nu_F, U)
        res = solve_nitsche(system.with_friction(FrictionModel.tresca(s)), config.inner, U0=U)
        inner_total += res.k_cv
        change = relative_increment(system.norm, res.U_cv - U, res.U_cv)
        U = res.U_cv
        outer.append(U.copy())
        history.append(change)
        if change <= config.delta_fp:
            return SolveResult(U, inner_total, True, outer, history, outer_iterations=n)
    result = SolveResult(U, inner_total, False, outer, history, outer_iterations=config.max_outer)
    raise NonConvergence(f"Coulomb fixed point did not converge in {config.max_outer} outer steps", result)
