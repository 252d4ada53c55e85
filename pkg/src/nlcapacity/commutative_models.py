"""Covering functionals of cell sets and the commuting-tuple certificate.

A :class:`CellSet` is a union of axis-aligned cubes of side ``base**-level``
in ``[0, 1]^n`` carrying positive weights.  It stands in for a compact set
``E`` with a measure on it:

* the covering functional ``U_{Phi, eps}(E)`` is bounded from above by
  explicit ball coverings with radii ``< eps`` (:func:`covering_value`);
* the tuple of multiplications by the coordinate functions becomes a tuple of
  commuting diagonal matrices with a positive cyclic vector
  (:func:`build_grid_model`);
* a covering partition gives a projection ``P`` whose commutators with the
  tuple satisfy ``|[tau_i, P]|_Phi <= 2 Phi(r_1, r_2, ...)`` and
  ``||[tau_i, P]|| <= 2 eps`` (:func:`certificate_check`).

Commutator singular values are computed blockwise: the part ``omega`` with
restricted unit vector ``u`` contributes ``w u^T - u w^T`` with
``w = tau_i u``, whose only nonzero singular value ``|w - <u, w> u|`` occurs
twice.  This is the weighted standard deviation of coordinate ``i`` over the
part, so no dense decomposition is needed.
"""

from __future__ import annotations

import heapq
import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
from scipy.spatial import cKDTree

from .matrix_modulus import OperatorTuple, PreconditionError
from .symmetric_gauge import LorentzP1, Lp, NormingFunction, evaluate_norm

__all__ = [
    "CellSet",
    "GridModel",
    "CoveringPartition",
    "CoveringResult",
    "CertificateReport",
    "ScalingRow",
    "ScalingStudy",
    "parse_shape",
    "shape_dimension",
    "build_cell_set",
    "load_cells",
    "serialize_cells",
    "covering_value",
    "block_covering",
    "greedy_covering",
    "build_grid_model",
    "covering_projection",
    "commutator_singular_values",
    "certificate_check",
    "scaling_study",
]

DEFAULT_MAX_CELLS = 300_000
GREEDY_MAX_CELLS = 4096
DENSE_MAX_DIM = 4096
# relative slack on the certificate's right-hand side
CERT_SLACK = 1e-9
BAND_RATIO = 1.35
SHAPES = ("cube", "interval", "cantor", "carpet")


class CellFormatError(ValueError):
    def __init__(self, lineno: int, message: str):
        super().__init__(f"line {lineno}: {message}")
        self.lineno = lineno


@dataclass(frozen=True, eq=False)
class CellSet:
    """Occupied cells of the grid of side ``base**-level`` in ``[0, 1]^dim``.

    Attributes
    ----------
    cells : (m, dim) int array
        Integer cell coordinates in ``[0, base**level)``, sorted
        lexicographically.
    weights : (m,) float array
        Positive cell masses.
    """

    dim: int
    level: int
    cells: np.ndarray
    weights: np.ndarray
    base: int = 2

    def __post_init__(self):
        if self.dim < 1:
            raise ValueError("dimension must be >= 1")
        if self.level < 0:
            raise ValueError("level must be >= 0")
        if self.base < 2:
            raise ValueError("base must be >= 2")
        cells = np.asarray(self.cells, dtype=np.int64).reshape(-1, self.dim)
        w = np.asarray(self.weights, dtype=float).ravel()
        if w.shape[0] != cells.shape[0]:
            raise ValueError("one weight per cell is required")
        if not np.all(np.isfinite(w)) or np.any(w <= 0):
            raise ValueError("cell weights must be positive and finite")
        n_side = self.base ** self.level
        if cells.size and (cells.min() < 0 or cells.max() >= n_side):
            raise ValueError("cell index outside [0, 1]^n")
        order = np.lexsort(cells.T[::-1]) if cells.size else np.zeros(0, dtype=np.int64)
        cells, w = cells[order], w[order]
        if cells.shape[0] > 1 and np.any(np.all(cells[1:] == cells[:-1], axis=1)):
            raise ValueError("duplicate cell")
        cells.flags.writeable = False
        w.flags.writeable = False
        object.__setattr__(self, "cells", cells)
        object.__setattr__(self, "weights", w)

    def __len__(self) -> int:
        return self.cells.shape[0]

    @property
    def side(self) -> float:
        return float(self.base) ** -self.level

    @property
    def centers(self) -> np.ndarray:
        return (self.cells + 0.5) * self.side

    @property
    def cell_circumradius(self) -> float:
        return 0.5 * self.side * math.sqrt(self.dim)

    @property
    def total_mass(self) -> float:
        return float(self.weights.sum())

    def __eq__(self, other):
        if not isinstance(other, CellSet):
            return NotImplemented
        return (self.dim == other.dim and self.level == other.level and self.base == other.base
                and np.array_equal(self.cells, other.cells)
                and np.array_equal(self.weights, other.weights))

    __hash__ = None


def parse_shape(text: str) -> tuple[str, int]:
    """Parse ``cube:<n>``, ``cube`` (n = 2), ``interval``, ``cantor`` or ``carpet``.

    Returns the shape name and ambient dimension.
    """
    t = text.strip().lower()
    head, _, arg = t.partition(":")
    if head not in SHAPES:
        raise ValueError(f"unknown shape {text!r}; choose from {SHAPES}")
    if head == "cube":
        try:
            n = int(arg) if arg else 2
        except ValueError:
            raise ValueError(f"malformed cube dimension in {text!r}") from None
        if n < 1:
            raise ValueError("cube dimension must be >= 1")
        return head, n
    if arg:
        raise ValueError(f"shape {head!r} takes no argument")
    return head, 2 if head == "carpet" else 1


def shape_dimension(shape: str) -> float:
    """Similarity dimension of a shape (``n`` for cubes)."""
    name, n = parse_shape(shape)
    if name == "cantor":
        return math.log(2) / math.log(3)
    if name == "carpet":
        return math.log(8) / math.log(3)
    return float(n)


def _digit_product(digits: Sequence[Sequence[int]], level: int, base: int) -> np.ndarray:
    """All cells whose base-``base`` digit tuples lie in ``digits`` at every level."""
    allowed = np.asarray(digits, dtype=np.int64).reshape(len(digits), -1)
    cells = np.zeros((1, allowed.shape[1]), dtype=np.int64)
    for _ in range(level):
        cells = (cells[:, None, :] * base + allowed[None, :, :]).reshape(-1, allowed.shape[1])
    return cells


def build_cell_set(shape: str, level: int, weights: str = "lebesgue",
                   max_cells: int = DEFAULT_MAX_CELLS) -> CellSet:
    """Construct a named shape at a resolution level.

    Parameters
    ----------
    shape
        ``cube:<n>`` or ``interval`` (dyadic cells of side ``2**-level``),
        ``cantor`` (``2**level`` intervals of length ``3**-level``) or
        ``carpet`` (``8**level`` squares of side ``3**-level``).
    weights
        ``"lebesgue"`` (cell volume) or ``"equal"`` (mass ``1/m`` per cell,
        the self-similar measure for the fractals).
    """
    name, n = parse_shape(shape)
    if level < 0:
        raise ValueError("level must be >= 0")
    if name in ("cube", "interval"):
        base, count = 2, 2 ** (level * n)
    elif name == "cantor":
        base, count = 3, 2 ** level
    else:
        base, count = 3, 8 ** level
    if count > max_cells:
        raise ValueError(f"{shape} at level {level} has {count} cells (limit {max_cells})")
    if name in ("cube", "interval"):
        grid = np.indices((2 ** level,) * n).reshape(n, -1).T
        cells = grid
    elif name == "cantor":
        cells = _digit_product([[0], [2]], level, 3)
    else:
        digits = [(a, b) for a in range(3) for b in range(3) if (a, b) != (1, 1)]
        cells = _digit_product(digits, level, 3)
    if weights == "lebesgue":
        w = np.full(len(cells), float(base) ** (-level * n))
    elif weights == "equal":
        w = np.full(len(cells), 1.0 / len(cells))
    else:
        raise ValueError(f"unknown weight scheme {weights!r}")
    return CellSet(n, level, cells, w, base)


def serialize_cells(e: CellSet) -> str:
    """Text form: ``cells <n> <level> <base>`` then ``c <i_1> ... <i_n> <weight>`` lines."""
    lines = [f"cells {e.dim} {e.level} {e.base}"]
    for idx, w in zip(e.cells, e.weights):
        lines.append("c " + " ".join(str(int(i)) for i in idx) + " " + repr(float(w)))
    return "\n".join(lines) + "\n"


def load_cells(text: str) -> CellSet:
    """Inverse of :func:`serialize_cells`; the base defaults to 2 when omitted."""
    header = None
    cells, weights = [], []
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        tok = line.split()
        if header is None:
            if tok[0] != "cells" or len(tok) not in (3, 4):
                raise CellFormatError(lineno, "expected header 'cells <n> <level> [base]'")
            try:
                header = tuple(int(t) for t in tok[1:]) + ((2,) if len(tok) == 3 else ())
            except ValueError:
                raise CellFormatError(lineno, "header fields must be integers") from None
            continue
        if tok[0] != "c" or len(tok) != header[0] + 2:
            raise CellFormatError(lineno, f"expected 'c' followed by {header[0]} indices and a weight")
        try:
            cells.append([int(t) for t in tok[1:-1]])
            weights.append(float(tok[-1]))
        except ValueError:
            raise CellFormatError(lineno, "malformed cell line") from None
    if header is None:
        raise CellFormatError(1, "missing header")
    n, level, base = header
    try:
        return CellSet(n, level, np.array(cells, dtype=np.int64).reshape(-1, n),
                       np.array(weights, dtype=float), base)
    except ValueError as exc:
        raise CellFormatError(0, str(exc)) from None


# --------------------------------------------------------------------------
# coverings


@dataclass(frozen=True, eq=False)
class CoveringPartition:
    """Partition of the occupied cells with a containing ball per part.

    ``labels[c]`` is the part of cell ``c``; part ``j`` lies in the closed
    ball ``B(centers[j], radii[j])``.
    """

    labels: np.ndarray
    centers: np.ndarray
    radii: np.ndarray

    def __post_init__(self):
        labels = np.asarray(self.labels, dtype=np.int64).ravel()
        radii = np.asarray(self.radii, dtype=float).ravel()
        centers = np.asarray(self.centers, dtype=float).reshape(radii.size, -1)
        if labels.size and (labels.min() < 0 or labels.max() >= radii.size):
            raise ValueError("part label out of range")
        if np.any(np.bincount(labels, minlength=radii.size) == 0):
            raise ValueError("every part must contain at least one cell")
        object.__setattr__(self, "labels", labels)
        object.__setattr__(self, "centers", centers)
        object.__setattr__(self, "radii", radii)

    @property
    def n_parts(self) -> int:
        return self.radii.size

    def parts(self) -> list[np.ndarray]:
        order = np.argsort(self.labels, kind="stable")
        bounds = np.cumsum(np.bincount(self.labels, minlength=self.n_parts))[:-1]
        return np.split(order, bounds)

    def validate(self, e: CellSet) -> None:
        """Raise ``ValueError`` unless this covers ``e`` cell by cell."""
        if self.labels.size != len(e):
            raise ValueError("partition does not match the cell set")
        if self.centers.shape[1] != e.dim:
            raise ValueError("ball centres have the wrong dimension")
        # distance from the ball centre to the farthest corner of each cell
        off = np.abs(e.centers - self.centers[self.labels]) + 0.5 * e.side
        reach = np.linalg.norm(off, axis=1)
        bad = reach > self.radii[self.labels] * (1 + 1e-12) + 1e-15
        if np.any(bad):
            raise ValueError(f"cell {int(np.flatnonzero(bad)[0])} is not inside its ball")


def _bounding_balls(e: CellSet, labels: np.ndarray, k: int) -> tuple[np.ndarray, np.ndarray]:
    """Circumscribed ball of the bounding box of each part's cells."""
    lo = np.full((k, e.dim), np.inf)
    hi = np.full((k, e.dim), -np.inf)
    np.minimum.at(lo, labels, e.cells * e.side)
    np.maximum.at(hi, labels, (e.cells + 1) * e.side)
    return (lo + hi) / 2, 0.5 * np.linalg.norm(hi - lo, axis=1)


def block_covering(e: CellSet, block_level: int) -> CoveringPartition:
    """Group cells by the ``base``-adic block of level ``block_level`` containing them."""
    if not 0 <= block_level <= e.level:
        raise ValueError(f"block level must lie in [0, {e.level}]")
    key = e.cells // (e.base ** (e.level - block_level))
    _, labels = np.unique(key, axis=0, return_inverse=True)
    labels = labels.ravel()
    k = int(labels.max()) + 1 if labels.size else 0
    centers, radii = _bounding_balls(e, labels, k)
    return CoveringPartition(labels, centers, radii)


def greedy_covering(e: CellSet, eps: float, max_cells: int = GREEDY_MAX_CELLS) -> CoveringPartition:
    """Repeatedly place a ball of radius ``< eps`` at the cell centre covering most uncovered cells."""
    m = len(e)
    if m > max_cells:
        raise ValueError(f"greedy covering is limited to {max_cells} cells (got {m})")
    rho = eps * (1 - 1e-9) - e.cell_circumradius
    if rho < 0:
        raise ValueError("eps must exceed the cell circumradius")
    pts = e.centers
    nbrs = cKDTree(pts).query_ball_point(pts, rho, return_sorted=True)
    nbrs = [np.asarray(a, dtype=np.int64) for a in nbrs]
    count = np.array([a.size for a in nbrs])
    covered = np.zeros(m, dtype=bool)
    labels = np.full(m, -1, dtype=np.int64)
    heap = [(-int(count[i]), i) for i in range(m)]
    heapq.heapify(heap)
    centers = []
    while heap:
        negc, i = heapq.heappop(heap)
        if covered[i] and count[i] == 0:
            continue
        if -negc != count[i]:
            heapq.heappush(heap, (-int(count[i]), i))
            continue
        if count[i] == 0:
            continue
        new = nbrs[i][~covered[nbrs[i]]]
        labels[new] = len(centers)
        centers.append(pts[i])
        covered[new] = True
        for c in new:
            count[nbrs[c]] -= 1
    k = len(centers)
    centers = np.array(centers).reshape(k, e.dim)
    reach = np.linalg.norm(np.abs(pts - centers[labels]) + 0.5 * e.side, axis=1)
    radii = np.zeros(k)
    np.maximum.at(radii, labels, reach)
    return CoveringPartition(labels, centers, radii)


@dataclass
class CoveringResult:
    value: float
    covering: CoveringPartition = field(repr=False)
    strategy: str
    block_level: Optional[int] = None


def covering_value(e: CellSet, eps: float, phi: NormingFunction,
                   strategy: str = "dyadic") -> CoveringResult:
    """Upper bound on ``U_{Phi, eps}(E)`` from an explicit covering.

    ``dyadic`` (``triadic`` is accepted as an alias; the block base follows
    the cell set) evaluates the block covering at every level whose radii
    are all below ``eps`` and keeps the smallest value.  ``greedy`` places
    balls of radius just below ``eps``.
    """
    if len(e) == 0:
        raise ValueError("empty cell set")
    if not eps > e.cell_circumradius:
        raise ValueError(f"eps={eps} does not exceed the cell circumradius "
                         f"{e.cell_circumradius:.6g}; no admissible covering at this resolution")
    if strategy in ("dyadic", "triadic", "block"):
        best = None
        for lev in range(e.level + 1):
            cov = block_covering(e, lev)
            if cov.radii.max() >= eps:
                continue
            val = evaluate_norm(phi, cov.radii)
            if best is None or val < best.value:
                best = CoveringResult(val, cov, "dyadic" if e.base == 2 else "triadic", lev)
        assert best is not None  # the finest level is always admissible here
        best.covering.validate(e)
        return best
    if strategy == "greedy":
        cov = greedy_covering(e, eps)
        cov.validate(e)
        if cov.radii.max() >= eps:
            raise AssertionError("greedy covering produced an inadmissible radius")
        return CoveringResult(evaluate_norm(phi, cov.radii), cov, "greedy")
    raise ValueError(f"unknown covering strategy {strategy!r}")


# --------------------------------------------------------------------------
# grid model and certificate


@dataclass(frozen=True, eq=False)
class GridModel:
    """Commuting coordinate multiplications on the occupied cells.

    ``coords[:, i]`` is the diagonal of ``tau_i``; ``xi`` is the unit cyclic
    vector ``sqrt(weight / total)``.  The dense tuple is built on demand.
    """

    cells: CellSet
    coords: np.ndarray
    xi: np.ndarray

    @property
    def dim(self) -> int:
        return self.coords.shape[0]

    def tau(self, max_dim: int = DENSE_MAX_DIM) -> OperatorTuple:
        if self.dim > max_dim:
            raise ValueError(f"dense model of dimension {self.dim} exceeds {max_dim}")
        mats = tuple(np.diag(self.coords[:, i]) for i in range(self.coords.shape[1]))
        return OperatorTuple(mats, kind="diagonal-multiplication", cyclic_vector=self.xi)


def build_grid_model(e: CellSet) -> GridModel:
    """Diagonal coordinate tuple on ``e`` with cyclic vector ``sqrt(w / sum w)``.

    >>> m = build_grid_model(build_cell_set("interval", 2))
    >>> m.coords[:, 0], m.xi
    (array([0.125, 0.375, 0.625, 0.875]), array([0.5, 0.5, 0.5, 0.5]))
    """
    if len(e) == 0:
        raise ValueError("empty cell set")
    xi = np.sqrt(e.weights / e.total_mass)
    return GridModel(e, e.centers, xi)


def covering_projection(m: GridModel, c: CoveringPartition,
                        max_dim: int = DENSE_MAX_DIM) -> np.ndarray:
    """Dense projection onto the span of the restrictions of ``xi`` to the parts."""
    if c.labels.size != m.dim:
        raise ValueError("partition does not match the model")
    if m.dim > max_dim:
        raise ValueError(f"dense projection of dimension {m.dim} exceeds {max_dim}")
    mass = np.bincount(c.labels, m.xi ** 2, minlength=c.n_parts)
    if np.any(mass <= 0):
        raise ValueError("a part carries no mass")
    u = m.xi / np.sqrt(mass[c.labels])
    same = c.labels[:, None] == c.labels[None, :]
    return np.where(same, np.outer(u, u), 0.0)


def commutator_singular_values(m: GridModel, c: CoveringPartition, axis: int) -> np.ndarray:
    """Nonzero singular values of ``[tau_axis, P]`` (each listed with multiplicity 2)."""
    if c.labels.size != m.dim:
        raise ValueError("partition does not match the model")
    w2 = m.xi ** 2
    mass = np.bincount(c.labels, w2, minlength=c.n_parts)
    x = m.coords[:, axis]
    mean = np.bincount(c.labels, w2 * x, minlength=c.n_parts) / mass
    # centred second moment avoids cancellation for tight parts
    var = np.bincount(c.labels, w2 * (x - mean[c.labels]) ** 2, minlength=c.n_parts) / mass
    s = np.sqrt(np.maximum(var, 0.0))
    s = s[s > 0]
    return np.repeat(s, 2)


@dataclass
class CertificateReport:
    lhs_ideal: float
    rhs_ideal: float
    lhs_op: float
    rhs_op: float
    ok: bool

    @property
    def ratio(self) -> float:
        return self.lhs_ideal / self.rhs_ideal if self.rhs_ideal > 0 else 0.0


def certificate_check(m: GridModel, c: CoveringPartition, phi: NormingFunction,
                      eps: float) -> CertificateReport:
    """Compare ``max_i |[tau_i, P]|_Phi`` with ``2 Phi(r)`` and the operator norm with ``2 eps``.

    Raises :class:`PreconditionError` when some radius is not below ``eps``
    or the partition does not cover the model's cells.
    """
    if c.radii.size and not c.radii.max() < eps:
        raise PreconditionError(f"covering radius {c.radii.max():.6g} is not below eps={eps}")
    c.validate(m.cells)
    lhs_ideal = 0.0
    lhs_op = 0.0
    for i in range(m.coords.shape[1]):
        s = commutator_singular_values(m, c, i)
        lhs_ideal = max(lhs_ideal, evaluate_norm(phi, s))
        lhs_op = max(lhs_op, float(s.max(initial=0.0)))
    rhs_ideal = 2.0 * evaluate_norm(phi, c.radii)
    rhs_op = 2.0 * eps
    ok = lhs_ideal <= rhs_ideal * (1 + CERT_SLACK) and lhs_op <= rhs_op * (1 + CERT_SLACK)
    return CertificateReport(lhs_ideal, rhs_ideal, lhs_op, rhs_op, bool(ok))


# --------------------------------------------------------------------------
# scaling


@dataclass
class ScalingRow:
    level: int
    eps: float
    covering_value: float
    lhs_ideal: float
    rhs_ideal: float
    certificate_ok: bool


@dataclass
class ScalingStudy:
    """Covering values per level with the expected trend.

    ``expected`` is ``"band"`` when ``p`` equals the shape dimension,
    ``"decreasing"`` when it is larger and ``"increasing"`` when smaller.
    """

    shape: str
    p: float
    phi: NormingFunction
    dimension: float
    rows: list
    expected: str
    band_ratio: float
    trend_ok: bool


def _trend_ok(values: np.ndarray, expected: str) -> tuple[bool, float]:
    band = float(values.max() / values.min()) if values.min() > 0 else math.inf
    if expected == "band":
        return band <= BAND_RATIO, band
    d = np.diff(values)
    if expected == "decreasing":
        return bool(np.all(d < 0)), band
    return bool(np.all(d > 0)), band


def scaling_study(shape: str, p: float, levels: Sequence[int], phi_kind: str = "lorentz",
                  refine: int = 1, max_cells: int = DEFAULT_MAX_CELLS) -> ScalingStudy:
    """Covering values and certificates across block levels.

    For each level ``k`` the shape is resolved ``refine`` levels finer and
    covered by its level ``k`` blocks.  The reported ``eps`` is the
    circumradius of a level ``k - 1`` block, so these blocks are the coarsest
    admissible ones, and the certificate is checked against it.
    """
    levels = [int(k) for k in levels]
    if not levels or any(b <= a for a, b in zip(levels, levels[1:])):
        raise ValueError("levels must be a nonempty increasing list")
    if levels[0] < 0:
        raise ValueError("levels must be >= 0")
    if refine < 0:
        raise ValueError("refine must be >= 0")
    kind = phi_kind.lower()
    if kind in ("lorentz", "lorentzp1"):
        phi = LorentzP1(p)
    elif kind in ("lp", "l"):
        phi = Lp(p)
    else:
        raise ValueError(f"unknown norming family {phi_kind!r}; use 'lp' or 'lorentz'")
    dimension = shape_dimension(shape)
    if math.isclose(p, dimension, rel_tol=1e-9):
        expected = "band"
    else:
        expected = "decreasing" if p > dimension else "increasing"
    rows = []
    for k in levels:
        e = build_cell_set(shape, k + refine, weights="equal", max_cells=max_cells)
        block_side = float(e.base) ** -(k - 1)
        eps = 0.5 * block_side * math.sqrt(e.dim)
        cov = block_covering(e, k)
        cov.validate(e)
        cert = certificate_check(build_grid_model(e), cov, phi, eps)
        rows.append(ScalingRow(k, eps, evaluate_norm(phi, cov.radii), cert.lhs_ideal,
                               cert.rhs_ideal, cert.ok))
    values = np.array([r.covering_value for r in rows])
    ok, band = _trend_ok(values, expected)
    return ScalingStudy(shape, float(p), phi, dimension, rows, expected, band, ok)
