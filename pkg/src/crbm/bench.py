"""The parametric Hertz half-disk benchmark, its error metrics and convergence studies."""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from functools import lru_cache

import numpy as np

from .fem import (
    FeSpace,
    MaterialParams,
    assemble_elasticity,
    assemble_mass,
    assemble_vector_laplacian,
    build_fe_space,
    operator_rows,
)
from .mesh import Mesh, build_reference_halfdisk
from .nitsche import (
    ContactData,
    ContactPattern,
    ContactTrace,
    FrictionKind,
    FrictionModel,
    NitscheParams,
    NitscheSystem,
    RigidDisk,
    SolveResult,
    SolverConfig,
    CoulombConfig,
    eval_nodal_traces,
    local_correction,
    neg_part,
    proj_ball,
    ray_gap,
    solve_coulomb,
    solve_nitsche,
)

DESK_H = 0.01
PAPER_H_LADDER = (0.005, 0.0025, 0.00125)
MIN_REPORTED_N = 10


class NotApplicable(ValueError):
    """Metric undefined, e.g. no contact stress at all."""


@dataclass(frozen=True)
class HertzConfig:
    R2: float = 1.0
    g0: float = 0.001
    d: float = 0.09
    mu_range: tuple[float, float] = (0.7, 1.3)
    material: MaterialParams = field(default_factory=MaterialParams)
    gamma0_factor: float = 50.0
    friction: FrictionModel = field(default_factory=FrictionModel.frictionless)
    contact_arc: tuple[float, float] = (-5 * math.pi / 8, -3 * math.pi / 8)
    h_target: float = DESK_H
    degree: int = 2
    char_length: float = 1.0

    def __post_init__(self):
        lo, hi = self.mu_range
        if not 0 < lo <= hi:
            raise ValueError("mu_range must be a positive interval")

    def nitsche(self) -> NitscheParams:
        return NitscheParams.from_material(self.material, self.h_target, self.gamma0_factor)

    def obstacle(self, mu: float) -> RigidDisk:
        return RigidDisk(self.R2, (0.0, -(mu + self.g0 + self.R2)))


@dataclass(frozen=True)
class ParameterSets:
    D_train: np.ndarray
    D_valid: np.ndarray
    seed: int

    @classmethod
    def standard(cls, seed: int = 20240101, train: str = "0.7:0.0075:61", n_valid: int = 30,
                 mu_range=(0.7, 1.3)) -> "ParameterSets":
        """Training grid from a ``parse_grid`` spec; validation drawn uniformly on ``mu_range``."""
        lo, hi = mu_range
        valid = np.sort(np.random.default_rng(seed).uniform(lo, hi, n_valid))
        return cls(parse_grid(train), valid, seed)

    def restricted_valid(self, upper: float = 1.18) -> np.ndarray:
        return self.D_valid[self.D_valid <= upper]


def parse_grid(spec: str) -> np.ndarray:
    """``"start:step:count"`` or a comma separated list of values."""
    if ":" in spec:
        start, step, count = spec.split(":")
        return np.round(float(start) + float(step) * np.arange(int(count)), 12)
    return np.array([float(v) for v in spec.split(",") if v.strip()])


@dataclass(frozen=True, eq=False)
class HertzModel:
    """Reference-domain operators; every parameter value is obtained by scaling.

    With ``x -> mu x`` the stiffness is unchanged and the mass scales as
    ``mu^2``; contact stresses scale as ``1/mu``, boundary weights as ``mu``
    and the Nitsche parameter ``gamma0 / h`` as ``1/mu`` (the mapped mesh
    size is ``mu h``). The boundary correction is therefore independent of
    ``mu``, and so is the coercivity margin of ``K - C``.
    """

    config: HertzConfig
    mesh: Mesh
    space: FeSpace
    stiffness: object
    mass: object
    laplacian: object
    gram_ref: object
    data_ref: ContactData
    sampler_rows: object
    pattern: ContactPattern

    @property
    def n_dof(self) -> int:
        return self.space.n_dof

    @property
    def gamma(self) -> float:
        """Nitsche parameter of the reference mesh."""
        return self.data_ref.gamma

    def gamma_at(self, mu: float) -> float:
        return self.data_ref.gamma / mu

    def gram(self, mu: float):
        ell = self.config.char_length
        return (mu * mu * self.mass + ell * ell * self.laplacian).tocsr()

    def correction_ref(self, friction: FrictionModel | None = None):
        """Boundary correction ``C``; ``A(mu) = K - C`` for every ``mu``."""
        friction = self.config.friction if friction is None else friction
        vals = self.pattern.matrix_values(local_correction(self.data_ref, friction))
        return self.pattern.to_matrix(vals)

    def gap(self, mu: float) -> np.ndarray:
        pts = self.data_ref.points
        return ray_gap(pts.points * mu, pts.normals, self.config.obstacle(mu))

    def gap_subset(self, mu: float, elements) -> np.ndarray:
        """Gap at the contact quadrature points of the given boundary elements."""
        pts = self.data_ref.points
        return ray_gap(pts.points[elements] * mu, pts.normals[elements], self.config.obstacle(mu))

    def nodal_gap(self, mu: float) -> np.ndarray:
        s = self.space.sampler
        return ray_gap(s.coords * mu, s.normals, self.config.obstacle(mu))

    def contact_data(self, mu: float) -> ContactData:
        return self.data_ref.scaled(mu, self.gap(mu))

    def dirichlet_values(self) -> np.ndarray:
        dofs = self.space.dirichlet_dofs
        return np.where(dofs % 2 == 1, -self.config.d, 0.0)

    def lift(self) -> np.ndarray:
        """Rigid translation by the imposed displacement; matches the Dirichlet data."""
        out = np.zeros(self.n_dof)
        out[1::2] = -self.config.d
        return out

    def system(self, mu: float, friction: FrictionModel | None = None) -> NitscheSystem:
        friction = self.config.friction if friction is None else friction
        lo, hi = self.config.mu_range
        if not lo - 1e-12 <= mu <= hi + 1e-12:
            raise ValueError(f"mu = {mu} outside {self.config.mu_range}")
        return NitscheSystem(
            stiffness=self.stiffness,
            gram=self.gram(mu),
            load=np.zeros(self.n_dof),
            dirichlet_dofs=self.space.dirichlet_dofs,
            dirichlet_values=self.dirichlet_values(),
            data=self.contact_data(mu),
            pattern=self.pattern,
            friction=friction,
        )

    def nodal_traces(self, mu: float, U) -> ContactTrace:
        r = self.sampler_rows
        rows = type(r)(r.sigma_nn / mu, r.sigma_ntau / mu, r.v_n, r.v_tau)
        return eval_nodal_traces(self.space.sampler.scaled(mu), rows, self.gamma_at(mu), self.nodal_gap(mu), U)


def build_hertz_model(cfg: HertzConfig) -> HertzModel:
    parts = _cached_parts(cfg.h_target, cfg.degree, cfg.contact_arc, cfg.material,
                          cfg.gamma0_factor, cfg.char_length)
    return HertzModel(cfg, *parts)


@lru_cache(maxsize=8)
def _cached_mesh(h: float, arc: tuple[float, float]) -> Mesh:
    return build_reference_halfdisk(h, arc)


@lru_cache(maxsize=8)
def _cached_parts(h, degree, arc, mat, gamma0_factor, char_length):
    mesh = _cached_mesh(h, arc)
    space = build_fe_space(mesh, degree)
    stiffness = assemble_elasticity(space, mat)
    mass = assemble_mass(space)
    lap = assemble_vector_laplacian(space)
    gamma = NitscheParams.from_material(mat, h, gamma0_factor).gamma
    data = ContactData.build(space.contact, mat, gamma, np.zeros(space.contact.weights.shape))
    return (
        mesh,
        space,
        stiffness,
        mass,
        lap,
        (mass + char_length**2 * lap).tocsr(),
        data,
        operator_rows(space.sampler.pairs, mat),
        ContactPattern.build(space.contact.dofs, space.n_dof),
    )


def build_hertz_problem(cfg: HertzConfig, mu: float, h_target: float | None = None) -> NitscheSystem:
    if h_target is not None and h_target != cfg.h_target:
        cfg = replace(cfg, h_target=h_target)
    return build_hertz_model(cfg).system(mu)


def solve_hertz(model: HertzModel, mu: float, friction: FrictionModel | None = None,
                config: SolverConfig = SolverConfig(), coulomb: CoulombConfig | None = None) -> SolveResult:
    friction = model.config.friction if friction is None else friction
    system = model.system(mu, friction)
    if friction.kind is FrictionKind.COULOMB:
        cc = coulomb or CoulombConfig(inner=replace(config, line_search=True))
        return solve_coulomb(system, friction.nu_F, cc)
    return solve_nitsche(system, config, U0=model.lift())


# -- error metrics ----------------------------------------------------------------

def _ratio(num: np.ndarray, den: np.ndarray) -> float:
    d = float(np.linalg.norm(den))
    if d == 0.0:
        raise NotApplicable("reference stress vanishes on the contact boundary")
    return float(np.linalg.norm(num)) / d


def error_alart_curnier_normal(trace: ContactTrace) -> float:
    """``|sigma_nn - [P_n]_-| / |sigma_nn|`` in the nodal l2 norm."""
    return _ratio(trace.sigma_nn - neg_part(trace.p_n_gamma_g), trace.sigma_nn)


def error_alart_curnier_tangential(trace: ContactTrace, s) -> float:
    """``|sigma_ntau - [P_tau]_s| / |sigma_nn|`` in the nodal l2 norm."""
    return _ratio(trace.sigma_ntau - proj_ball(trace.p_tau, s), trace.sigma_nn)


def rb_error_metrics(model: HertzModel, mu: float, U_hf, U_rb) -> dict[str, float]:
    """Relative displacement, normal-stress and tangential-stress errors of a reduced solution."""
    W = model.gram(mu)
    diff = np.asarray(U_hf) - np.asarray(U_rb)
    den = math.sqrt(U_hf @ (W @ U_hf))
    out = {"e_u": math.sqrt(max(diff @ (W @ diff), 0.0)) / den}
    t_hf = model.nodal_traces(mu, U_hf)
    t_rb = model.nodal_traces(mu, U_rb)
    out["e_nn"] = _ratio(t_hf.sigma_nn - t_rb.sigma_nn, t_hf.sigma_nn)
    try:
        out["e_ntau"] = _ratio(t_hf.sigma_ntau - t_rb.sigma_ntau, t_hf.sigma_ntau)
    except NotApplicable:
        out["e_ntau"] = 0.0 if np.allclose(t_rb.sigma_ntau, 0.0) else math.inf
    return out


def gap_violation(model: HertzModel, mu: float, U) -> float:
    """Largest nodal value of ``u_n - g`` on the contact boundary (positive means penetration)."""
    return float(np.max(model.nodal_traces(mu, U).v_n - model.nodal_gap(mu)))


def nodal_threshold(model: HertzModel, mu: float, friction: FrictionModel, U) -> np.ndarray | float:
    """Slip threshold at the contact nodes (Coulomb: from the nodal normal operator)."""
    if friction.kind is FrictionKind.COULOMB:
        return friction.nu_F * np.abs(neg_part(model.nodal_traces(mu, U).p_n_gamma_g))
    return friction.s


# -- convergence study ------------------------------------------------------------

@dataclass
class StudyTable:
    mus: list[float]
    hs: list[float]
    errors: np.ndarray
    iterations: np.ndarray
    metric: str

    def orders(self) -> np.ndarray:
        """Observed orders ``log(e_i / e_{i+1}) / log(h_i / h_{i+1})``; empty if a single h."""
        if len(self.hs) < 2:
            return np.zeros((len(self.mus), 0))
        h = np.asarray(self.hs)
        return np.log(self.errors[:, :-1] / self.errors[:, 1:]) / np.log(h[:-1] / h[1:])


def convergence_study(cfg: HertzConfig, mus, hs, config: SolverConfig = SolverConfig()) -> StudyTable:
    mus, hs = list(mus), list(hs)
    if not mus or not hs:
        raise ValueError("parameter and mesh-size lists must be nonempty")
    tangential = cfg.friction.tangential
    errors = np.zeros((len(mus), len(hs)))
    iters = np.zeros((len(mus), len(hs)), dtype=int)
    for j, h in enumerate(hs):
        model = build_hertz_model(replace(cfg, h_target=h))
        for i, mu in enumerate(mus):
            res = solve_hertz(model, mu, config=config)
            tr = model.nodal_traces(mu, res.U_cv)
            if tangential:
                s = nodal_threshold(model, mu, cfg.friction, res.U_cv)
                errors[i, j] = error_alart_curnier_tangential(tr, s)
            else:
                errors[i, j] = error_alart_curnier_normal(tr)
            iters[i, j] = res.k_cv
    metric = "e_AC_ntau" if tangential else "e_AC_n"
    return StudyTable(mus, hs, errors, iters, metric)
