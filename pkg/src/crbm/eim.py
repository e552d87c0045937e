"""Greedy empirical interpolation of contact operators and the hyper-reduced online solver."""

from __future__ import annotations

from dataclasses import dataclass, field

import time

import numpy as np
import scipy.linalg as sla

from . import kernels
from .fem import ContactPoints
from .nitsche import (
    ContactData,
    ContactPattern,
    FrictionModel,
    NonConvergence,
    SolveResult,
    SolverConfig,
    local_tangent,
    local_theta,
)


class DegenerateFamily(ValueError):
    pass


@dataclass(frozen=True)
class EimConfig:
    tol: float = 1e-6
    max_terms: int | None = None

    def __post_init__(self):
        if not self.tol > 0:
            raise ValueError("EIM tolerance must be positive")


@dataclass
class EimDecomposition:
    """Interpolant of a family stored on a fixed support of entries.

    ``terms[s]`` is the ``s``-th basis member on the support, ``indices[s]``
    the position (in the support) of its interpolation entry and
    ``Q[i, j] = terms[j][indices[i]]`` (unit lower-triangular).
    ``training_log[s]`` is the relative sup-norm residual before term ``s``
    is added; its last entry is the residual of the final interpolant.
    """

    kind: str
    support_rows: np.ndarray
    support_cols: np.ndarray | None
    terms: np.ndarray
    indices: np.ndarray
    Q: np.ndarray
    training_log: list[float] = field(default_factory=list)
    scale: float = 1.0

    @property
    def S(self) -> int:
        return len(self.indices)

    def entry_addresses(self) -> np.ndarray:
        if self.kind == "matrix":
            return np.stack([self.support_rows[self.indices], self.support_cols[self.indices]], axis=1)
        return self.support_rows[self.indices]

    def truncated(self, S: int) -> "EimDecomposition":
        return EimDecomposition(self.kind, self.support_rows, self.support_cols, self.terms[:S],
                                self.indices[:S], self.Q[:S, :S], self.training_log[: S + 1], self.scale)

    def reconstruct(self, alpha: np.ndarray) -> np.ndarray:
        return np.asarray(alpha) @ self.terms[: len(alpha)]


def eim_train(family: np.ndarray, config: EimConfig = EimConfig(), kind: str = "matrix",
              support_rows=None, support_cols=None) -> EimDecomposition:
    """Classical greedy EIM on the rows of ``family`` (members x support entries).

    Each step picks the member with the largest sup-norm residual, then its
    entry of largest absolute residual (first one on ties), and adds the
    residual normalised to 1 at that entry.
    """
    R = np.array(family, dtype=float, order="C")
    if R.ndim != 2 or R.shape[0] == 0:
        raise ValueError("family must be a nonempty 2D array")
    n_entries = R.shape[1]
    rowmax = np.abs(R).max(axis=1) if n_entries else np.zeros(R.shape[0])
    scale = float(rowmax.max()) if len(rowmax) else 0.0
    if scale == 0.0:
        raise DegenerateFamily("every member of the family is identically zero")
    max_terms = n_entries if config.max_terms is None else min(config.max_terms, n_entries)
    terms, indices, log = [], [], []
    while True:
        m = int(np.argmax(rowmax))
        err = float(rowmax[m]) / scale
        log.append(err)
        if err <= config.tol or len(terms) >= max_terms:
            break
        j = int(np.argmax(np.abs(R[m])))
        q = R[m] / R[m, j]
        col = R[:, j].copy()
        rowmax = kernels.rank1_update_maxabs(R, col, q)
        terms.append(q)
        indices.append(j)
    terms = np.array(terms).reshape(len(terms), n_entries)
    indices = np.array(indices, dtype=np.int64)
    Q = terms[:, indices].T.copy() if len(indices) else np.zeros((0, 0))
    rows = np.arange(n_entries) if support_rows is None else np.asarray(support_rows)
    return EimDecomposition(kind, rows, None if support_cols is None else np.asarray(support_cols),
                            terms, indices, Q, log, scale)


def eim_online_coeffs(decomp: EimDecomposition, entry_values: np.ndarray) -> np.ndarray:
    """Coefficients ``alpha`` with ``Q alpha = T`` (forward substitution)."""
    T = np.asarray(entry_values, dtype=float)
    if decomp.S == 0:
        return np.zeros(0)
    return sla.solve_triangular(decomp.Q, T, lower=True, unit_diagonal=True)


def eim_error_curve(decomp: EimDecomposition, family: np.ndarray) -> np.ndarray:
    """``e(S)`` for ``S = 0 .. decomp.S``: max sup-norm error over the family divided by its max sup-norm."""
    R = np.array(family, dtype=float, order="C")
    scale = np.abs(R).max() if R.size else 0.0
    out = np.zeros(decomp.S + 1)
    if scale == 0.0:
        return out
    alpha = eim_online_coeffs(decomp, R[:, decomp.indices].T).reshape(decomp.S, -1).T if decomp.S else None
    out[0] = 1.0
    for s in range(decomp.S):
        rowmax = kernels.rank1_update_maxabs(R, alpha[:, s], decomp.terms[s])
        out[s + 1] = rowmax.max() / scale
    return out


# -- local evaluation of selected entries -----------------------------------------

@dataclass(frozen=True, eq=False)
class EntryEvaluator:
    """Recomputes selected entries of a contact operator from the few elements touching them.

    Contributions are summed per entry in ascending element order, matching
    ``ContactPattern`` assembly bit for bit.
    """

    kind: str
    elements: np.ndarray
    dofs: np.ndarray
    local_dofs: np.ndarray
    flat_index: np.ndarray
    target: np.ndarray
    n_entries: int

    @classmethod
    def build(cls, pattern: ContactPattern, decomp: EimDecomposition, element_dofs: np.ndarray):
        n_loc = pattern.n_loc
        if decomp.kind == "matrix":
            src, dst, block = pattern.mat_src, pattern.mat_dst, n_loc * n_loc
        else:
            src, dst, block = pattern.vec_src, pattern.vec_dst, n_loc
        order = np.argsort(dst, kind="stable")
        dst_sorted = dst[order]
        flat, target = [], []
        for s, slot in enumerate(decomp.indices):
            lo, hi = np.searchsorted(dst_sorted, [slot, slot + 1])
            pos = np.sort(order[lo:hi])
            flat.append(src[pos])
            target.append(np.full(len(pos), s))
        flat = np.concatenate(flat) if flat else np.zeros(0, dtype=np.int64)
        target = np.concatenate(target) if target else np.zeros(0, dtype=np.int64)
        elements = np.unique(flat // block)
        remap = np.searchsorted(elements, flat // block)
        flat_local = remap * block + flat % block
        dofs = np.unique(element_dofs[elements]) if len(elements) else np.zeros(0, dtype=np.int64)
        local_dofs = np.searchsorted(dofs, element_dofs[elements])
        return cls(decomp.kind, elements, dofs, local_dofs, flat_local, target, decomp.S)

    @property
    def n_elements(self) -> int:
        return len(self.elements)

    def restrict(self, data: ContactData) -> ContactData:
        """Contact data on the evaluator's elements with compact DOF numbering."""
        return self.compact(data.subset(self.elements))

    def compact(self, sub: ContactData) -> ContactData:
        """Renumber the DOFs of data already restricted to ``self.elements``."""
        p = sub.points
        pts = ContactPoints(p.element, self.local_dofs, p.values, p.grads, p.weights, p.points, p.normals)
        return ContactData(pts, sub.rows, sub.gamma, sub.gap)

    def evaluate(self, data_local: ContactData, friction: FrictionModel, u_local: np.ndarray,
                 part: str = "n") -> np.ndarray:
        """Entry values at the state whose values on ``self.dofs`` are ``u_local``."""
        if self.kind == "matrix":
            local = local_tangent(data_local, friction, u_local)
        else:
            local = local_theta(data_local, friction, u_local, part)
        out = np.zeros(self.n_entries)
        kernels.scatter_add(out, self.target, local.reshape(-1)[self.flat_index])
        return out


    def derivative(self, data_local: ContactData, friction: FrictionModel, u_local: np.ndarray,
                   part: str = "n") -> np.ndarray:
        """Jacobian of the selected vector entries with respect to ``u_local``, shape ``(S, len(dofs))``."""
        if self.kind != "vector":
            raise ValueError("derivatives are available for vector evaluators only")
        local = local_tangent(data_local, friction, u_local, part)
        n_loc = local.shape[1]
        elem, row = np.divmod(self.flat_index, n_loc)
        out = np.zeros((self.n_entries, len(self.dofs)))
        np.add.at(out, (self.target[:, None], self.local_dofs[elem]), local[elem, row, :])
        return out


def evaluate_selected_entries(data: ContactData, friction: FrictionModel, w: np.ndarray,
                              evaluator: EntryEvaluator, part: str = "n") -> np.ndarray:
    """Selected entries of the tangent (matrix evaluator) or residual term (vector evaluator) at ``w``."""
    return evaluator.evaluate(evaluator.restrict(data), friction, np.asarray(w)[evaluator.dofs], part)


# -- affine expansions and the online solver --------------------------------------

@dataclass
class AffineExpansion:
    """Reduced images of the EIM terms, ``Z^T B_s Z`` or ``Z^T Theta_s``."""

    decomp: EimDecomposition
    reduced_terms: np.ndarray
    evaluator: EntryEvaluator
    part: str = "n"

    @classmethod
    def build(cls, decomp: EimDecomposition, pattern: ContactPattern, Z: np.ndarray,
              element_dofs: np.ndarray, part: str = "n"):
        if decomp.kind == "matrix":
            red = np.stack([Z.T @ (pattern.to_matrix(t) @ Z) for t in decomp.terms]) if decomp.S else \
                np.zeros((0, Z.shape[1], Z.shape[1]))
        else:
            Zs = Z[pattern.vec_dofs]
            red = decomp.terms @ Zs if decomp.S else np.zeros((0, Z.shape[1]))
        return cls(decomp, red, EntryEvaluator.build(pattern, decomp, element_dofs), part)

    def combine(self, alpha: np.ndarray, N: int) -> np.ndarray:
        if self.decomp.kind == "matrix":
            return np.tensordot(alpha, self.reduced_terms[:, :N, :N], axes=1)
        return alpha @ self.reduced_terms[:, :N]


@dataclass
class ReducedModel:
    """Everything the online stage needs; no array depends on the full DOF count
    except ``Z`` and ``lift``, used only for the final reconstruction.

    The parametric dependence is ``A(mu) = K - C`` (both independent of ``mu``) and
    ``W(mu) = mu^2 M + l^2 L``.
    """

    Z: np.ndarray
    lift: np.ndarray
    K_N: np.ndarray
    C_N: np.ndarray
    K_lift: np.ndarray
    C_lift: np.ndarray
    M_N: np.ndarray
    L_N: np.ndarray
    M_lift: np.ndarray
    L_lift: np.ndarray
    lift_M_lift: float
    lift_L_lift: float
    char_length: float
    friction: FrictionModel
    expansions: dict[str, AffineExpansion]
    data_ref: ContactData
    gap_fn: object = None  # (mu, element indices) -> gap at those elements' quadrature points
    train_mus: np.ndarray = field(default_factory=lambda: np.zeros(0))
    train_coeffs: np.ndarray = field(default_factory=lambda: np.zeros((0, 0)))  # N_max x P
    local_Z: dict[str, np.ndarray] = field(default_factory=dict)
    local_lift: dict[str, np.ndarray] = field(default_factory=dict)

    @property
    def N_max(self) -> int:
        return self.Z.shape[1]

    @classmethod
    def build(cls, Z, lift, stiffness, correction, mass, laplacian, char_length, friction,
              expansions, data_ref, gap_fn, train_mus=None, train_coeffs=None):
        out = cls(
            Z=Z, lift=lift,
            K_N=Z.T @ (stiffness @ Z), C_N=Z.T @ (correction @ Z),
            K_lift=Z.T @ (stiffness @ lift), C_lift=Z.T @ (correction @ lift),
            M_N=Z.T @ (mass @ Z), L_N=Z.T @ (laplacian @ Z),
            M_lift=Z.T @ (mass @ lift), L_lift=Z.T @ (laplacian @ lift),
            lift_M_lift=float(lift @ (mass @ lift)), lift_L_lift=float(lift @ (laplacian @ lift)),
            char_length=char_length, friction=friction, expansions=expansions,
            data_ref=data_ref, gap_fn=gap_fn,
        )
        if train_mus is not None:
            out.train_mus = np.asarray(train_mus, float)
            out.train_coeffs = np.asarray(train_coeffs, float)
        out.prepare()
        return out

    def prepare(self):
        for name, exp in self.expansions.items():
            self.local_Z[name] = np.ascontiguousarray(self.Z[exp.evaluator.dofs])
            self.local_lift[name] = self.lift[exp.evaluator.dofs]

    def reconstruct(self, a: np.ndarray) -> np.ndarray:
        return self.lift + self.Z[:, : len(a)] @ a

    def initial_coeffs(self, mu: float, N: int, initial: str = "nearest") -> np.ndarray:
        """Zero (the lift) or the leading coefficients of the nearest training snapshot."""
        if initial == "lift" or len(self.train_mus) == 0:
            return np.zeros(N)
        if initial != "nearest":
            raise ValueError(f"unknown initial guess {initial!r}")
        p = int(np.argmin(np.abs(self.train_mus - mu)))
        return self.train_coeffs[:N, p].copy()


@dataclass
class OnlineTimings:
    coefficients: float = 0.0
    reduced_solve: float = 0.0
    reconstruction: float = 0.0


def solve_reduced_eim(model: ReducedModel, mu: float, N: int, config: SolverConfig = SolverConfig(),
                      timings: OnlineTimings | None = None,
                      initial: str = "nearest",
                      jacobian: str = "eim") -> tuple[np.ndarray, np.ndarray, SolveResult]:
    """Hyper-reduced Newton iteration.

    Per-step cost depends on N, the EIM ranks and the number of elements
    touching the selected entries only. ``initial`` selects the starting
    coefficients: ``"nearest"`` training snapshot or ``"lift"`` (zero).
    ``jacobian="eim"`` uses the interpolated tangent matrix; ``"consistent"``
    differentiates the interpolated residual itself (exact Newton on the
    hyper-reduced equations; the tangent-matrix interpolant is then unused).
    """
    if jacobian not in ("eim", "consistent"):
        raise ValueError(f"unknown jacobian {jacobian!r}")
    if not 1 <= N <= model.N_max:
        raise ValueError(f"N must lie in [1, {model.N_max}]")
    t = timings or OnlineTimings()
    t0 = time.perf_counter()
    locals_ = {}
    for name, exp in model.expansions.items():
        ev = exp.evaluator
        sub = model.data_ref.subset(ev.elements)
        locals_[name] = ev.compact(sub.scaled(mu, model.gap_fn(mu, ev.elements)))
    A_N = model.K_N[:N, :N] - model.C_N[:N, :N]
    A_lift = model.K_lift[:N] - model.C_lift[:N]
    ell2 = model.char_length**2
    G = mu * mu * model.M_N[:N, :N] + ell2 * model.L_N[:N, :N]
    g_lift = mu * mu * model.M_lift[:N] + ell2 * model.L_lift[:N]
    lift_sq = mu * mu * model.lift_M_lift + ell2 * model.lift_L_lift
    t.coefficients += time.perf_counter() - t0

    a = model.initial_coeffs(mu, N, initial)
    history = []
    coeff_hist = [a.copy()]
    for k in range(1, config.max_iter + 1):
        t0 = time.perf_counter()
        jac = A_N.copy()
        res = A_N @ a + A_lift
        for name, exp in model.expansions.items():
            matrix = exp.decomp.kind == "matrix"
            if matrix and jacobian == "consistent":
                continue
            Z_loc = model.local_Z[name][:, :N]
            u_loc = model.local_lift[name] + Z_loc @ a
            T = exp.evaluator.evaluate(locals_[name], model.friction, u_loc, exp.part)
            alpha = eim_online_coeffs(exp.decomp, T)
            if matrix:
                jac += exp.combine(alpha, N)
                continue
            res += exp.combine(alpha, N)
            if jacobian == "consistent":
                dT = exp.evaluator.derivative(locals_[name], model.friction, u_loc, exp.part) @ Z_loc
                jac += exp.reduced_terms[:, :N].T @ eim_online_coeffs(exp.decomp, dT)
        t1 = time.perf_counter()
        t.coefficients += t1 - t0
        try:
            da = np.linalg.solve(jac, -res)
        except np.linalg.LinAlgError as exc:
            raise NonConvergence(f"singular reduced tangent at mu = {mu}: {exc}") from exc
        a = a + da
        coeff_hist.append(a.copy())
        nd = np.sqrt(max(da @ (G @ da), 0.0))
        nu = np.sqrt(max(a @ (G @ a) + 2 * g_lift @ a + lift_sq, 0.0))
        history.append(0.0 if nu == 0.0 and nd == 0.0 else (nd / nu if nu else np.inf))
        t.reduced_solve += time.perf_counter() - t1
        if not np.all(np.isfinite(a)):
            break
        if history[-1] <= config.delta_u:
            t0 = time.perf_counter()
            U = model.reconstruct(a)
            t.reconstruction += time.perf_counter() - t0
            return a, U, SolveResult(U, k, True, coeff_hist, history)
    result = SolveResult(model.reconstruct(a), len(history), False, coeff_hist, history)
    raise NonConvergence(f"online solve did not converge at mu = {mu}, N = {N}", result)
