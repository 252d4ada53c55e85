"""Condenser modulus of an operator tuple and the graph-to-matrix transfer.

For a tuple ``tau = (T_1, ..., T_n)`` of ``d x d`` matrices, a normed ideal
given by a norming function ``Phi`` and orthogonal projections ``P, Q`` with
``PQ = 0`` the condenser modulus is

    k(tau; P, Q) = min  max_j |T_j X - X T_j|_Phi

over Hermitian ``X`` with ``0 <= X <= I``, ``XP = P`` and ``XQ = 0``.  Such an
``X`` is ``P + C Y C^H`` where the columns of ``C`` span the orthogonal
complement of ``range(P) + range(Q)`` and ``0 <= Y <= I``, so the
optimisation runs over ``Y`` and the projection is an eigenvalue clip.

For the truncated shifts of a Cayley ball, diagonal ``X = diag(f)`` turns the
commutators into matrices supported on the edge positions with entries
``-D_j f``; this and the pinching inequality give the two directions of the
transfer between graph capacities and matrix moduli.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
import scipy.linalg

from .capacity_solver import CondenserProblem, SolveReport, solve_condenser
from .graph_core import GradientCombiner, LabeledGraph, gradient_seminorm
from .subgradient import SolverOptions, minimize
from .symmetric_gauge import NormingFunction, evaluate_singular_norm, subgradient_singular

__all__ = [
    "OperatorTuple",
    "ProjectionPair",
    "PreconditionError",
    "truncated_shift_tuple",
    "project_feasible",
    "diag_compress",
    "modulus_objective",
    "solve_modulus",
    "TransferReport",
    "transfer_compare",
]

TUPLE_KINDS = ("truncated-shift", "diagonal-multiplication", "custom")
DEFAULT_MAX_DIM = 2000
# absolute tolerance on eigenvalues when clipping to [0, 1]
EIG_TOL = 1e-12
# tolerance for projection identities and feasibility checks
FEAS_TOL = 1e-10
ACTIVE_TOL = 1e-9


class PreconditionError(ValueError):
    """Raised when an input violates a documented precondition."""


@dataclass(frozen=True, eq=False)
class OperatorTuple:
    """Tuple of square matrices of a common dimension.

    Parameters
    ----------
    matrices
        The operators ``T_1, ..., T_n``.
    kind
        ``"truncated-shift"``, ``"diagonal-multiplication"`` or ``"custom"``.
        Truncated shifts must be partial permutation matrices.
    cyclic_vector
        Optional unit vector.
    """

    matrices: tuple
    kind: str = "custom"
    cyclic_vector: Optional[np.ndarray] = None
    dim: int = field(init=False)

    def __post_init__(self):
        mats = tuple(np.asarray(m) for m in self.matrices)
        if self.kind not in TUPLE_KINDS:
            raise ValueError(f"unknown tuple kind {self.kind!r}")
        if not mats:
            raise ValueError("an operator tuple needs at least one matrix (use a zero matrix)")
        d = mats[0].shape[0] if mats[0].ndim == 2 else -1
        for m in mats:
            if m.ndim != 2 or m.shape != (d, d):
                raise ValueError("matrices must be square with a common dimension")
            if not np.all(np.isfinite(m)):
                raise ValueError("matrices must have finite entries")
        if self.kind == "truncated-shift":
            for m in mats:
                if not np.all((m == 0) | (m == 1)):
                    raise ValueError("truncated shifts must have 0/1 entries")
                if d and (m.sum(axis=0).max() > 1 or m.sum(axis=1).max() > 1):
                    raise ValueError("truncated shifts must be partial permutations")
        xi = self.cyclic_vector
        if xi is not None:
            xi = np.asarray(xi).ravel()
            if xi.shape != (d,) or not math.isclose(float(np.linalg.norm(xi)), 1.0, abs_tol=1e-9):
                raise ValueError("cyclic vector must be a unit vector of the tuple's dimension")
        object.__setattr__(self, "matrices", mats)
        object.__setattr__(self, "cyclic_vector", xi)
        object.__setattr__(self, "dim", d)

    def __len__(self) -> int:
        return len(self.matrices)

    @property
    def is_real(self) -> bool:
        return not any(np.iscomplexobj(m) for m in self.matrices)


@dataclass(frozen=True, eq=False)
class ProjectionPair:
    """Orthogonal projections ``P`` and ``Q`` with ``PQ = 0``.

    Build with :meth:`from_coordinates` (diagonal projections onto coordinate
    subsets) or :meth:`from_frames` (orthonormal column frames).
    """

    P: np.ndarray
    Q: np.ndarray
    p_coords: Optional[tuple] = None
    q_coords: Optional[tuple] = None

    def __post_init__(self):
        P = np.asarray(self.P)
        Q = np.asarray(self.Q)
        if P.ndim != 2 or P.shape[0] != P.shape[1] or P.shape != Q.shape:
            raise ValueError("P and Q must be square matrices of the same size")
        for name, m in (("P", P), ("Q", Q)):
            if np.abs(m - m.conj().T).max(initial=0) > FEAS_TOL:
                raise PreconditionError(f"{name} is not Hermitian")
            if np.abs(m @ m - m).max(initial=0) > FEAS_TOL:
                raise PreconditionError(f"{name} is not idempotent")
        if np.abs(P @ Q).max(initial=0) > FEAS_TOL:
            raise PreconditionError("ranges of P and Q are not orthogonal (PQ != 0)")
        object.__setattr__(self, "P", P)
        object.__setattr__(self, "Q", Q)

    @classmethod
    def from_coordinates(cls, dim: int, p_coords: Sequence[int], q_coords: Sequence[int] = ()):
        p = sorted({int(i) for i in p_coords})
        q = sorted({int(i) for i in q_coords})
        for i in p + q:
            if not 0 <= i < dim:
                raise ValueError(f"coordinate {i} out of range for dimension {dim}")
        if set(p) & set(q):
            raise PreconditionError("ranges of P and Q intersect (PQ != 0)")
        P = np.zeros((dim, dim))
        Q = np.zeros((dim, dim))
        P[p, p] = 1.0
        Q[q, q] = 1.0
        return cls(P, Q, tuple(p), tuple(q))

    @classmethod
    def from_frames(cls, p_frame, q_frame=None):
        """Projections onto the spans of orthonormal columns."""
        A = np.atleast_2d(np.asarray(p_frame))
        d = A.shape[0]
        B = np.zeros((d, 0)) if q_frame is None else np.atleast_2d(np.asarray(q_frame))
        for name, m in (("P", A), ("Q", B)):
            if m.shape[0] != d:
                raise ValueError("frames must have the same number of rows")
            if np.abs(m.conj().T @ m - np.eye(m.shape[1])).max(initial=0) > FEAS_TOL:
                raise ValueError(f"{name} frame columns are not orthonormal")
        return cls(A @ A.conj().T, B @ B.conj().T)

    @property
    def dim(self) -> int:
        return self.P.shape[0]

    def complement_frame(self) -> np.ndarray:
        """Orthonormal basis of the complement of ``range(P) + range(Q)``."""
        d = self.dim
        if self.p_coords is not None and self.q_coords is not None:
            keep = np.setdiff1d(np.arange(d), np.array(self.p_coords + self.q_coords, dtype=int))
            C = np.zeros((d, keep.size))
            C[keep, np.arange(keep.size)] = 1.0
            return C
        R = np.eye(d) - self.P - self.Q
        w, v = np.linalg.eigh((R + R.conj().T) / 2)
        return v[:, w > 0.5]


def truncated_shift_tuple(g: LabeledGraph) -> OperatorTuple:
    """Partial permutation matrices with a 1 at ``(g_j v, v)`` for every stored edge."""
    n = g.n_vertices
    mats = []
    for j in range(g.n_generators):
        m = np.zeros((n, n))
        s, t = g.edges(j, interior_only=False)
        m[t, s] = 1.0
        mats.append(m)
    if not mats:
        mats.append(np.zeros((n, n)))
    return OperatorTuple(tuple(mats), kind="truncated-shift")


def diag_compress(m) -> np.ndarray:
    """Zero every off-diagonal entry (pinching onto the diagonal)."""
    m = np.asarray(m)
    if m.ndim != 2 or m.shape[0] != m.shape[1]:
        raise ValueError("diag_compress needs a square matrix")
    return np.diag(np.diag(m))


def _clip_hermitian(y: np.ndarray) -> np.ndarray:
    y = (y + y.conj().T) / 2
    if y.size == 0:
        return y
    w, v = np.linalg.eigh(y)
    w = np.clip(w, 0.0, 1.0)
    w[np.abs(w) <= EIG_TOL] = 0.0
    w[np.abs(w - 1.0) <= EIG_TOL] = 1.0
    return (v * w) @ v.conj().T


def project_feasible(x, pq: ProjectionPair) -> np.ndarray:
    """Nearest (Frobenius) ``X`` with ``0 <= X <= I``, ``XP = P`` and ``XQ = 0``.

    >>> pq = ProjectionPair.from_coordinates(2, [0])
    >>> project_feasible(2 * np.eye(2), pq)
    array([[1., 0.],
           [0., 1.]])
    """
    x = np.asarray(x)
    if x.shape != (pq.dim, pq.dim):
        raise ValueError("matrix and projections have different dimensions")
    C = pq.complement_frame()
    y = _clip_hermitian(C.conj().T @ x @ C)
    out = pq.P + C @ y @ C.conj().T
    return out if np.iscomplexobj(out) else out.real


def feasibility_residual(x, pq: ProjectionPair) -> float:
    """Largest violation of ``XP = P``, ``XQ = 0``, ``X = X^H`` and ``0 <= X <= I``."""
    x = np.asarray(x)
    r = max(
        float(np.abs(x @ pq.P - pq.P).max(initial=0)),
        float(np.abs(x @ pq.Q).max(initial=0)),
        float(np.abs(x - x.conj().T).max(initial=0)),
    )
    if x.size:
        w = np.linalg.eigvalsh((x + x.conj().T) / 2)
        r = max(r, float(-w.min()), float(w.max() - 1.0))
    return max(r, 0.0)


def _commutators(tau: OperatorTuple, x: np.ndarray) -> list:
    return [t @ x - x @ t for t in tau.matrices]


def modulus_objective(tau: OperatorTuple, x, phi: NormingFunction) -> float:
    """``max_j |[T_j, X]|_Phi``."""
    x = np.asarray(x)
    return max(evaluate_singular_norm(phi, k) for k in _commutators(tau, x))


def solve_modulus(tau: OperatorTuple, pq: ProjectionPair, phi: NormingFunction,
                  options: SolverOptions = SolverOptions(), initial=None,
                  max_dim: int = DEFAULT_MAX_DIM) -> SolveReport:
    """Minimise ``max_j |[T_j, X]|_Phi`` over the condenser-feasible ``X``.

    ``initial`` (optional) is projected onto the feasible set and used as the
    starting point when it beats ``X = P``.  The returned minimizer is the
    full ``d x d`` matrix.
    """
    d = tau.dim
    if pq.dim != d:
        raise PreconditionError(f"projections have dimension {pq.dim}, operators {d}")
    if d > max_dim:
        raise ValueError(f"dimension {d} exceeds the configured limit {max_dim}")
    C = pq.complement_frame()
    m = C.shape[1]
    complex_ = not tau.is_real or np.iscomplexobj(pq.P) or np.iscomplexobj(pq.Q)
    dtype = complex if complex_ else float
    Ch = C.conj().T
    P = pq.P.astype(dtype)

    def assemble(yflat):
        return P + C @ yflat.reshape(m, m) @ Ch

    def fun(yflat):
        return modulus_objective(tau, assemble(yflat), phi)

    def subgradient(yflat):
        x = assemble(yflat)
        ks = _commutators(tau, x)
        vals = np.array([evaluate_singular_norm(phi, k) for k in ks])
        top = vals.max()
        s = np.zeros((d, d), dtype=dtype)
        active = np.flatnonzero(vals >= top - ACTIVE_TOL)
        for j in active:
            t = tau.matrices[j]
            gj = subgradient_singular(phi, ks[j])
            th = t.conj().T
            s += th @ gj - gj @ th
        s /= active.size
        s = (s + s.conj().T) / 2
        return (Ch @ s @ C).ravel()

    def project(yflat):
        return _clip_hermitian(yflat.reshape(m, m)).ravel()

    y0 = np.zeros((m, m), dtype=dtype)
    f0 = fun(y0.ravel())
    if initial is not None:
        xi = project_feasible(np.asarray(initial, dtype=dtype), pq)
        yi = _clip_hermitian(Ch @ xi @ C)
        fi = fun(yi.ravel())
        if fi < f0:
            y0, f0 = yi, fi
    if m == 0:
        x = assemble(y0.ravel())
        return SolveReport(value=f0, minimizer=x, iterations=0,
                           feasibility_residual=feasibility_residual(x, pq),
                           best_value_history=np.array([f0]), tolerance_met=True, initial_value=f0)
    res = minimize(fun, subgradient, project, y0.ravel(), math.sqrt(m), options)
    x = assemble(res.x)
    if not complex_:
        x = x.real
    return SolveReport(
        value=res.value,
        minimizer=x,
        iterations=res.iterations,
        feasibility_residual=feasibility_residual(x, pq),
        best_value_history=res.history,
        tolerance_met=res.tolerance_met,
        initial_value=f0,
    )


@dataclass
class TransferReport:
    """Graph capacity against matrix modulus on a matched instance.

    ``embedding_ok``: ``diag(f)`` of the graph minimizer is modulus-feasible
    and its matrix objective equals the graph objective.
    ``compression_ok``: the diagonal of the matrix minimizer is
    graph-feasible and its gradient seminorm does not exceed the matrix
    objective.
    """

    cap_graph: float
    k_matrix: float
    gap: float
    relative_gap: float
    embedding_ok: bool
    compression_ok: bool
    graph_report: SolveReport = field(repr=False)
    matrix_report: SolveReport = field(repr=False)

    @property
    def diag_roundtrip_ok(self) -> bool:
        return self.embedding_ok and self.compression_ok


def transfer_compare(g: LabeledGraph, source: Sequence[int], sink: Sequence[int],
                     phi: NormingFunction, options: SolverOptions = SolverOptions(),
                     max_dim: int = DEFAULT_MAX_DIM) -> TransferReport:
    """Solve the graph condenser and the matrix modulus on matched data.

    The graph side uses the max-over-generators combiner; on the matrix side
    ``P`` projects onto ``source`` and ``Q`` onto ``sink`` plus the halo.
    """
    problem = CondenserProblem(g, source, sink, phi, GradientCombiner.MAX_THEN_NORM)
    graph = solve_condenser(problem, options)
    tau = truncated_shift_tuple(g)
    q = np.union1d(problem.sink, g.halo_indices)
    pq = ProjectionPair.from_coordinates(g.n_vertices, problem.source, q)

    f = graph.minimizer
    x_emb = np.diag(f)
    emb_val = modulus_objective(tau, x_emb, phi)
    scale = max(1.0, graph.value)
    embedding_ok = (feasibility_residual(x_emb, pq) <= FEAS_TOL
                    and abs(emb_val - graph.value) <= 1e-9 * scale)

    matrix = solve_modulus(tau, pq, phi, options, initial=x_emb, max_dim=max_dim)
    fb = np.diag(diag_compress(matrix.minimizer)).real.copy()
    idx, val = problem.pinned()
    pinned_ok = np.allclose(fb[idx], val, atol=FEAS_TOL)
    in_box = bool(np.all(fb >= -FEAS_TOL) and np.all(fb <= 1 + FEAS_TOL))
    fb = np.clip(fb, 0.0, 1.0)
    fb[idx] = val
    compressed = gradient_seminorm(g, fb, phi, GradientCombiner.MAX_THEN_NORM)
    compression_ok = pinned_ok and in_box and compressed <= matrix.value * (1 + 1e-9) + 1e-12

    gap = matrix.value - graph.value
    rel = gap / graph.value if graph.value > 0 else (0.0 if gap == 0 else math.inf)
    return TransferReport(graph.value, matrix.value, gap, rel, bool(embedding_ok),
                          bool(compression_ok), graph, matrix)
