"""POD reduced bases, projected arrays and the naive reduced Newton solver."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .nitsche import NitscheSystem, NonConvergence, SolveResult, SolverConfig, relative_increment

RANK_TOL = 1e-14


class RankDeficient(ValueError):
    pass


@dataclass
class SnapshotSet:
    parameters: np.ndarray
    snapshots: list[np.ndarray]
    iterate_snapshots: list[list[np.ndarray]] = field(default_factory=list)
    friction: str = "none"

    def __post_init__(self):
        self.parameters = np.asarray(self.parameters, dtype=float)
        if len(self.parameters) != len(self.snapshots):
            raise ValueError("one snapshot per parameter value is required")
        if len(np.unique(self.parameters)) != len(self.parameters):
            raise ValueError("parameter values must be pairwise distinct")
        if len({len(s) for s in self.snapshots}) > 1:
            raise ValueError("snapshots must share one length")

    def matrix(self, lift: np.ndarray | None = None) -> np.ndarray:
        Y = np.column_stack(self.snapshots)
        return Y if lift is None else Y - lift[:, None]


@dataclass
class ReducedBasis:
    """Columns of ``Z`` are orthonormal in the ``gram`` inner product."""

    Z: np.ndarray
    singular_values: np.ndarray
    gram_used: str = "H1 reference"

    @property
    def N(self) -> int:
        return self.Z.shape[1]

    @property
    def rank(self) -> int:
        s = self.singular_values
        if len(s) == 0 or s[0] == 0.0:
            return 0
        return int(np.sum(s >= RANK_TOL * s[0]))

    def truncated(self, N: int) -> "ReducedBasis":
        if N > self.N:
            raise RankDeficient(f"N = {N} exceeds the {self.N} available modes")
        return ReducedBasis(self.Z[:, :N], self.singular_values, self.gram_used)


def weighted_qr(Y: np.ndarray, gram) -> tuple[np.ndarray, np.ndarray]:
    """``Y = Q R`` with ``Q^T gram Q = I`` (classical Gram-Schmidt, two passes).

    Columns that vanish after orthogonalisation give zero columns in ``Q``
    and zero rows in ``R``.
    """
    n, p = Y.shape
    Q = np.zeros((n, p))
    R = np.zeros((p, p))
    for j in range(p):
        v = Y[:, j].astype(float).copy()
        norm0 = np.sqrt(max(v @ (gram @ v), 0.0))
        for _ in range(2):
            if j:
                c = Q[:, :j].T @ (gram @ v)
                v -= Q[:, :j] @ c
                R[:j, j] += c
        nv = np.sqrt(max(v @ (gram @ v), 0.0))
        if nv > 1e-15 * norm0 and nv > 0.0:
            Q[:, j] = v / nv
            R[j, j] = nv
    return Q, R


def _fix_signs(Z: np.ndarray) -> np.ndarray:
    if Z.size == 0:
        return Z
    idx = np.argmax(np.abs(Z), axis=0)
    sign = np.sign(Z[idx, np.arange(Z.shape[1])])
    sign[sign == 0] = 1.0
    return Z * sign


def pod(Y: np.ndarray, gram, N: int | None = None, tol: float | None = None) -> ReducedBasis:
    """POD of the columns of ``Y`` in the ``gram`` inner product.

    Modes are ordered by decreasing singular value, with the largest-magnitude
    coefficient of each mode positive. ``N`` fixes the size; ``tol`` picks the
    smallest ``N`` whose relative energy loss ``sqrt(sum_{i>N} s_i^2 / sum s_i^2)``
    is below ``tol``; by default the numerical rank is used.
    """
    Y = np.atleast_2d(np.asarray(Y, dtype=float))
    if Y.shape[1] == 0:
        raise ValueError("empty snapshot set")
    Q, R = weighted_qr(Y, gram)
    U, s, _ = np.linalg.svd(R)
    basis = ReducedBasis(_fix_signs(Q @ U), s)
    rank = basis.rank
    if N is None:
        N = rank
        if tol is not None:
            tail = np.sqrt(np.maximum(np.cumsum((s**2)[::-1])[::-1], 0.0))
            loss = np.append(tail[1:], 0.0) / tail[0] if tail[0] > 0 else np.zeros_like(s)
            N = int(np.argmax(loss <= tol)) + 1
    if N > rank:
        raise RankDeficient(f"requested N = {N} exceeds the numerical rank {rank}")
    return basis.truncated(N)


def pod_projection_error(Y: np.ndarray, basis: ReducedBasis, grams) -> list[tuple[int, float]]:
    """``(N, e_POD(N))`` for ``N = 1 .. basis.N``.

    Each snapshot ``Y[:, p]`` is projected orthogonally in its own inner
    product ``grams[p]``, so every term is nonincreasing in ``N``.
    """
    Z = basis.Z
    num = np.zeros(basis.N)
    den = 0.0
    for p, W in enumerate(grams):
        y = Y[:, p]
        WZ = W @ Z
        G = Z.T @ WZ
        b = WZ.T @ y
        den += y @ (W @ y)
        for n in range(1, basis.N + 1):
            c = np.linalg.solve(G[:n, :n], b[:n])
            r = y - Z[:, :n] @ c
            num[n - 1] += max(r @ (W @ r), 0.0)
    if den == 0.0:
        return [(n, 0.0) for n in range(1, basis.N + 1)]
    return [(n, float(np.sqrt(num[n - 1] / den))) for n in range(1, basis.N + 1)]


@dataclass
class ReducedArrays:
    A_N: np.ndarray
    vectors: dict[str, np.ndarray] = field(default_factory=dict)

    @property
    def N(self) -> int:
        return self.A_N.shape[0]


def project_arrays(Z: np.ndarray, A=None, **vectors) -> ReducedArrays:
    """``Z^T A Z`` and ``Z^T v`` for each named vector."""
    Z = np.asarray(Z, dtype=float)
    A_N = np.asarray(Z.T @ (A @ Z)) if A is not None else np.zeros((Z.shape[1],) * 2)
    return ReducedArrays(A_N, {k: Z.T @ np.asarray(v, float) for k, v in vectors.items()})


def solve_reduced_naive(system: NitscheSystem, Z: np.ndarray, lift: np.ndarray,
                        config: SolverConfig = SolverConfig()) -> tuple[np.ndarray, np.ndarray, SolveResult]:
    """Galerkin projection of the Newton iteration; B and R are reassembled at full order.

    Returns the coefficients, the reconstruction ``lift + Z a`` and the
    iteration record.
    """
    N = Z.shape[1]
    if N < 1:
        raise ValueError("reduced basis must have at least one mode")
    a_gamma = system.a_gamma()
    A_N = Z.T @ (a_gamma @ Z)
    a = np.zeros(N)
    U = lift + Z @ a
    iterates, history = [U.copy()], []
    for k in range(1, config.max_iter + 1):
        r_N = Z.T @ system.residual(U, a_gamma)
        J_N = A_N + Z.T @ (system.b_gamma(U) @ Z)
        try:
            da = np.linalg.solve(J_N, -r_N)
        except np.linalg.LinAlgError as exc:
            raise NonConvergence(f"singular reduced tangent: {exc}") from exc
        a = a + da
        dU = Z @ da
        U = lift + Z @ a
        iterates.append(U.copy())
        history.append(relative_increment(system.norm, dU, U))
        if history[-1] <= config.delta_u:
            return a, U, SolveResult(U, k, True, iterates, history)
    result = SolveResult(U, config.max_iter, False, iterates, history)
    raise NonConvergence(f"reduced solve did not converge in {config.max_iter} iterations", result)
