"""Graph condenser capacities: the convex program, profiles over balls and oracles.

The condenser capacity of ``(X1, X2)`` is the infimum of the gradient
seminorm over functions with ``0 <= f <= 1``, ``f = 1`` on ``X1`` and
``f = 0`` on ``X2`` and on the halo.  :func:`solve_condenser` minimises it by
projected subgradient; every reported value is attained by a feasible
function and is therefore an upper bound on the infimum.

Three oracles check the solver independently of its iteration:
:func:`oracle_quadratic` (harmonic extension, p = 2),
:func:`oracle_mincut` (unit-capacity maximum flow, l1) and
:func:`oracle_grid_search` (refined exhaustive search, few free vertices).
"""

from __future__ import annotations

import itertools
import math
import sys
from collections import deque
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
import scipy.sparse as sp
from scipy.sparse import csgraph
from scipy.sparse.linalg import spsolve

from .graph_core import (
    EdgeLayout,
    GradientCombiner,
    LabeledGraph,
    cayley_ball,
)
from .subgradient import SolverOptions, minimize
from .symmetric_gauge import NormingFunction, subgradient_vector

__all__ = [
    "CondenserProblem",
    "SolveReport",
    "SolverOptions",
    "ProfilePoint",
    "ProbeResult",
    "solve_condenser",
    "capacity_profile",
    "oracle_quadratic",
    "oracle_mincut",
    "oracle_grid_search",
    "hyperbolicity_probe",
    "sup_capacity",
    "initial_guess",
    "max_flow_unit",
]

ACTIVE_TOL = 1e-9
MAX_ROUNDING_LEVELS = 64


@dataclass(frozen=True, eq=False)
class CondenserProblem:
    """Condenser ``(X1, X2)`` on a labeled graph.

    ``source`` and ``sink`` are vertex indices; the halo always counts as sink.
    """

    graph: LabeledGraph
    source: np.ndarray
    sink: np.ndarray
    phi: NormingFunction
    combiner: GradientCombiner = GradientCombiner.MAX_THEN_NORM
    box: bool = True

    def __post_init__(self):
        g = self.graph
        src = np.unique(np.asarray(self.source, dtype=np.int64))
        snk = np.unique(np.asarray(self.sink, dtype=np.int64))
        if src.size == 0:
            raise ValueError("source set X1 must be nonempty")
        for name, s in (("source", src), ("sink", snk)):
            if s.size and (s.min() < 0 or s.max() >= g.n_vertices):
                raise ValueError(f"{name} refers to a missing vertex")
        if np.any(g.halo[src]):
            raise ValueError("source set X1 may not contain halo vertices")
        if np.intersect1d(src, snk).size:
            raise ValueError("source and sink sets must be disjoint")
        object.__setattr__(self, "source", src)
        object.__setattr__(self, "sink", snk)

    @classmethod
    def from_labels(cls, graph: LabeledGraph, source: Sequence[str], sink: Sequence[str] = (),
                    phi: NormingFunction | None = None, combiner=GradientCombiner.MAX_THEN_NORM,
                    box: bool = True) -> "CondenserProblem":
        if phi is None:
            raise ValueError("a norming function is required")
        return cls(graph, graph.indices(source), graph.indices(sink), phi, combiner, box)

    @property
    def zero_set(self) -> np.ndarray:
        """Sink vertices together with the halo."""
        return np.union1d(self.sink, self.graph.halo_indices)

    def pinned(self) -> tuple[np.ndarray, np.ndarray]:
        """Indices and values of all pinned vertices."""
        zero = self.zero_set
        idx = np.concatenate([self.source, zero])
        val = np.concatenate([np.ones(self.source.size), np.zeros(zero.size)])
        return idx, val

    def free(self) -> np.ndarray:
        mask = np.ones(self.graph.n_vertices, dtype=bool)
        mask[self.pinned()[0]] = False
        return np.flatnonzero(mask)


@dataclass
class SolveReport:
    value: float
    minimizer: np.ndarray
    iterations: int
    feasibility_residual: float
    best_value_history: np.ndarray = field(repr=False)
    tolerance_met: bool
    initial_value: float = float("nan")

    def summary(self) -> dict:
        return {
            "value": self.value,
            "iterations": self.iterations,
            "feasibility_residual": self.feasibility_residual,
            "tolerance_met": self.tolerance_met,
            "initial_value": self.initial_value,
        }


# --------------------------------------------------------------------------
# objective


class CondenserObjective:
    """Value and subgradient of the gradient seminorm for a fixed problem."""

    def __init__(self, problem: CondenserProblem):
        self.problem = problem
        self.layout = EdgeLayout.of(problem.graph)
        self.phi = problem.phi
        self.combiner = problem.combiner
        idx, val = problem.pinned()
        self.pin_idx = idx
        self.pin_val = val
        self.n = problem.graph.n_vertices
        self.free = problem.free()

    def value(self, f: np.ndarray) -> float:
        lay = self.layout
        return float(lay.seminorm(lay.differences(f), self.phi, self.combiner))

    def values(self, fs: np.ndarray) -> np.ndarray:
        lay = self.layout
        return lay.seminorm(lay.differences(fs), self.phi, self.combiner)

    def edge_weights(self, f: np.ndarray) -> np.ndarray:
        """Subgradient of the seminorm with respect to the edge differences."""
        lay = self.layout
        d = lay.differences(f)
        phi = self.phi
        c = self.combiner
        if c is GradientCombiner.SUM_THEN_NORM:
            return subgradient_vector(phi, d)
        w = np.zeros_like(d)
        if lay.n_generators == 0:
            return w
        if c is GradientCombiner.MAX_THEN_NORM:
            segs = [slice(lay.offsets[j], lay.offsets[j + 1]) for j in range(lay.n_generators)]
            vals = np.array([lay.seminorm(d[s], phi, GradientCombiner.SUM_THEN_NORM) for s in segs])
            top = vals.max()
            active = [j for j in range(len(segs)) if vals[j] >= top - ACTIVE_TOL]
            for j in active:
                w[segs[j]] = subgradient_vector(phi, d[segs[j]]) / len(active)
            return w
        per = lay.per_vertex(d)
        gen = np.repeat(np.arange(lay.n_generators), np.diff(lay.offsets))
        if c is GradientCombiner.POINTWISE_MAX_THEN_NORM:
            mag = np.abs(per)
            h = mag.max(axis=0)
            winner = mag.argmax(axis=0)
            u = subgradient_vector(phi, h)
            hit = winner[lay.src] == gen
            w[hit] = u[lay.src[hit]] * np.sign(d[hit])
            return w
        h = np.sqrt(np.sum(per * per, axis=0))
        u = subgradient_vector(phi, h)
        ratio = np.divide(u, h, out=np.zeros_like(h), where=h > 0)
        return ratio[lay.src] * d

    def subgradient(self, f: np.ndarray) -> np.ndarray:
        w = self.edge_weights(f)
        lay = self.layout
        g = np.bincount(lay.dst, w, self.n) - np.bincount(lay.src, w, self.n)
        g[self.pin_idx] = 0.0
        return g

    def project(self, f: np.ndarray) -> np.ndarray:
        if self.problem.box:
            f = np.clip(f, 0.0, 1.0)
        else:
            f = f.copy()
        f[self.pin_idx] = self.pin_val
        return f

    def tangent(self, f: np.ndarray, g: np.ndarray) -> np.ndarray:
        if not self.problem.box:
            return g
        d = g.copy()
        d[(f <= 0.0) & (g > 0)] = 0.0
        d[(f >= 1.0) & (g < 0)] = 0.0
        return d

    def level_sets(self, f: np.ndarray):
        """Indicator functions of superlevel sets ``{f >= t}``, all feasible."""
        levels = np.unique(f[self.free])
        levels = levels[(levels > 0.0) & (levels < 1.0)]
        if levels.size > MAX_ROUNDING_LEVELS:
            levels = np.unique(np.quantile(levels, np.linspace(0, 1, MAX_ROUNDING_LEVELS)))
        levels = np.append(levels, 1.0)
        cands = (f[None, :] >= levels[:, None]).astype(float)
        cands[:, self.pin_idx] = self.pin_val
        return list(cands)

    def residual(self, f: np.ndarray) -> float:
        r = float(np.max(np.abs(f[self.pin_idx] - self.pin_val), initial=0.0))
        if self.problem.box:
            r = max(r, float(np.max(-f, initial=0.0)), float(np.max(f - 1.0, initial=0.0)))
        return r


def _bfs_distance(n: int, src: np.ndarray, dst: np.ndarray, seeds: np.ndarray) -> np.ndarray:
    """Hop distance to the nearest seed over the undirected graph (inf if unreachable)."""
    if seeds.size == 0:
        return np.full(n, np.inf)
    # one extra node adjacent to every seed
    hub = n
    rows = np.concatenate([src, dst, np.full(seeds.size, hub)])
    cols = np.concatenate([dst, src, seeds])
    a = sp.coo_matrix((np.ones(rows.size), (rows, cols)), shape=(n + 1, n + 1)).tocsr()
    a = a + a.T
    dist = csgraph.shortest_path(a, unweighted=True, indices=hub)
    return dist[:n] - 1.0


def initial_guess(problem: CondenserProblem) -> np.ndarray:
    """Distance interpolation ``d0 / (d0 + d1)`` between the zero set and ``X1``."""
    g = problem.graph
    src, dst = g.undirected_edges()
    d1 = _bfs_distance(g.n_vertices, src, dst, problem.source)
    d0 = _bfs_distance(g.n_vertices, src, dst, problem.zero_set)
    f = np.zeros(g.n_vertices)
    with np.errstate(invalid="ignore", divide="ignore"):
        both = np.isfinite(d1) & np.isfinite(d0)
        f[both] = d0[both] / (d0[both] + d1[both])
    f[np.isfinite(d1) & ~np.isfinite(d0)] = 1.0
    idx, val = problem.pinned()
    f[idx] = val
    return f


def solve_condenser(problem: CondenserProblem, options: SolverOptions = SolverOptions(),
                    initial: np.ndarray | None = None) -> SolveReport:
    """Minimise the gradient seminorm over the condenser's feasible set.

    ``initial`` (optional) is used instead of the distance interpolation when
    it is feasible and has a lower objective value.
    """
    obj = CondenserObjective(problem)
    x0 = initial_guess(problem)
    f0 = obj.value(x0)
    if initial is not None:
        cand = obj.project(np.asarray(initial, dtype=float))
        fc = obj.value(cand)
        if fc < f0:
            x0, f0 = cand, fc
    diameter = math.sqrt(max(obj.free.size, 1))
    res = minimize(obj.value, obj.subgradient, obj.project, x0, diameter, options,
                   tangent=obj.tangent, candidates=obj.level_sets)
    f = res.x
    return SolveReport(
        value=res.value,
        minimizer=f,
        iterations=res.iterations,
        feasibility_residual=obj.residual(f),
        best_value_history=res.history,
        tolerance_met=res.tolerance_met,
        initial_value=f0,
    )


# --------------------------------------------------------------------------
# profiles


@dataclass
class ProfilePoint:
    radius: int
    value: float
    report: SolveReport = field(repr=False)


def capacity_profile(group, source: Sequence[str], phi: NormingFunction,
                     combiner: GradientCombiner = GradientCombiner.MAX_THEN_NORM,
                     radii: Sequence[int] = (1, 2, 3, 4), options: SolverOptions = SolverOptions(),
                     max_vertices: int | None = None) -> list[ProfilePoint]:
    """Capacity of ``source`` on balls of increasing radius with the halo as sink.

    The minimiser for one radius, extended by zero, is feasible for the next
    larger ball with the same value; it is offered to the next solve as a
    starting point.  A repeated radius reuses the previous result.
    """
    radii = list(radii)
    if any(b < a for a, b in zip(radii, radii[1:])):
        raise ValueError("radii must be nondecreasing")
    elems = [group.parse_element(s) for s in source]
    labels = [group.label(x) for x in elems]
    out: list[ProfilePoint] = []
    prev_graph = prev_report = None
    for r in radii:
        if out and r == out[-1].radius:
            out.append(ProfilePoint(r, out[-1].value, out[-1].report))
            continue
        kw = {} if max_vertices is None else {"max_vertices": max_vertices}
        g = cayley_ball(group, r, **kw)
        try:
            problem = CondenserProblem.from_labels(g, labels, (), phi, combiner)
        except KeyError as exc:
            raise ValueError(f"source {exc} lies outside the ball of radius {r}") from None
        start = None
        if prev_report is not None:
            start = np.zeros(g.n_vertices)
            keep = [i for i, lab in enumerate(prev_graph.labels) if not prev_graph.halo[i]]
            start[g.indices(prev_graph.labels[i] for i in keep)] = prev_report.minimizer[keep]
        rep = solve_condenser(problem, options, initial=start)
        out.append(ProfilePoint(r, rep.value, rep))
        prev_graph, prev_report = g, rep
    return out


def sup_capacity(graph: LabeledGraph, subsets: Sequence[Sequence[int]], phi: NormingFunction,
                 combiner: GradientCombiner = GradientCombiner.MAX_THEN_NORM,
                 options: SolverOptions = SolverOptions()) -> tuple[float, int]:
    """Largest capacity over a family of finite source sets (halo as sink).

    This is the finite-family version of the capacity of an arbitrary set,
    defined as the supremum over its finite subsets.  Returns the value and
    the index of the maximising subset.
    """
    if not subsets:
        raise ValueError("need at least one subset")
    vals = [solve_condenser(CondenserProblem(graph, s, (), phi, combiner), options).value
            for s in subsets]
    k = int(np.argmax(vals))
    return float(vals[k]), k


@dataclass
class ProbeResult:
    profile: list[tuple[int, float]]
    verdict: str | None
    fit: dict


def hyperbolicity_probe(group, p: float, rmax: int,
                        combiner: GradientCombiner = GradientCombiner.MAX_THEN_NORM,
                        options: SolverOptions = SolverOptions(),
                        ratio_saturating: float = 0.6, ratio_algebraic: float = 0.8) -> ProbeResult:
    """Heuristic test of whether ``cap_p({e})`` vanishes on the group.

    The tail of the profile ``R -> cap`` is examined through the ratios of
    successive decrements.  Geometric decay of the decrements (ratio below
    ``ratio_saturating``) means the profile converges quickly; the limit is
    extrapolated and the verdict is ``"bounded-below"`` when it stays
    positive.  Decrements decaying slower than geometrically (ratio above
    ``ratio_algebraic``) indicate power-law or logarithmic decay and give
    ``"vanishing"``.  Anything in between withholds the verdict.
    """
    if p < 1:
        raise ValueError("p must be >= 1")
    if rmax < 4:
        raise ValueError("rmax must be >= 4")
    from .symmetric_gauge import Lp

    pts = capacity_profile(group, ["e"], Lp(p), combiner, range(1, rmax + 1), options)
    radii = np.array([q.radius for q in pts], dtype=float)
    vals = np.array([q.value for q in pts])
    dec = -np.diff(vals)
    fit: dict = {}
    tail = dec[-3:]
    if np.any(tail <= 0):
        fit["reason"] = "profile not strictly decreasing in the tail"
        return ProbeResult(list(zip(radii.astype(int).tolist(), vals.tolist())), None, fit)
    ratios = tail[1:] / tail[:-1]
    q = float(np.exp(np.mean(np.log(ratios))))
    slope, _ = np.polyfit(np.log(radii[-4:]), np.log(vals[-4:]), 1)
    fit["decrement_ratio"] = q
    fit["loglog_slope"] = float(slope)
    verdict = None
    if q < ratio_saturating:
        limit = float(vals[-1] - tail[-1] * q / (1.0 - q))
        fit["extrapolated_limit"] = limit
        if limit > 0.5 * vals[-1]:
            verdict = "bounded-below"
        else:
            fit["reason"] = "geometric decay toward a small limit"
    elif q > ratio_algebraic:
        verdict = "vanishing"
    else:
        fit["reason"] = "decrement ratio between the geometric and algebraic regimes"
    return ProbeResult(list(zip(radii.astype(int).tolist(), vals.tolist())), verdict, fit)


# --------------------------------------------------------------------------
# oracles


def _require(problem: CondenserProblem, p: float, combiners: set):
    phi = problem.phi
    if not (phi.kind == "lp" and phi.p == p):
        raise ValueError(f"this oracle needs phi = Lp({p:g})")
    single = problem.graph.n_generators <= 1
    if problem.combiner not in combiners and not single:
        raise ValueError(f"this oracle does not apply to the {problem.combiner.value} combiner")
    if not problem.box:
        raise ValueError("this oracle assumes the box constraint 0 <= f <= 1")


def _edge_matrix(n: int, src: np.ndarray, dst: np.ndarray) -> sp.csr_matrix:
    a = sp.coo_matrix((np.ones(src.size), (src, dst)), shape=(n, n)).tocsr()
    return a + a.T


def oracle_quadratic(problem: CondenserProblem) -> float:
    """``sqrt(f^T L f)`` at the harmonic extension of the boundary data.

    Valid for ``phi = Lp(2)`` with the Euclidean or sum combiner (any combiner
    on a single generator): the objective is then ``sqrt`` of the Dirichlet
    energy, minimised by the solution of the graph Laplace equation; the
    maximum principle keeps it inside the box.
    """
    _require(problem, 2.0, {GradientCombiner.EUCLIDEAN_THEN_NORM, GradientCombiner.SUM_THEN_NORM})
    g = problem.graph
    n = g.n_vertices
    src, dst = g.undirected_edges()
    a = _edge_matrix(n, src, dst)
    lap = sp.diags(np.asarray(a.sum(axis=1)).ravel()) - a
    idx, val = problem.pinned()
    f = np.zeros(n)
    f[idx] = val
    free = problem.free()
    if free.size:
        a_ff = a[free][:, free]
        ncomp, comp = csgraph.connected_components(a_ff, directed=False)
        touches = np.asarray(a[free][:, idx].sum(axis=1)).ravel() > 0
        anchored = np.zeros(ncomp, dtype=bool)
        anchored[np.unique(comp[touches])] = True
        keep = free[anchored[comp]]
        if keep.size:
            l_kk = lap[keep][:, keep].tocsc()
            rhs = -lap[keep][:, idx] @ val
            f[keep] = np.atleast_1d(spsolve(l_kk, rhs))
    d = f[dst] - f[src]
    return float(np.sqrt(d @ d))


def max_flow_unit(n: int, edges: Sequence[tuple[int, int]], sources: Sequence[int],
                  sinks: Sequence[int]) -> int:
    """Maximum number of edge-disjoint paths from ``sources`` to ``sinks``.

    Undirected unit-capacity edges (parallel edges add up); Dinic's
    blocking-flow algorithm on an explicit residual graph.
    """
    s, t = n, n + 1
    head: list[list[int]] = [[] for _ in range(n + 2)]
    to: list[int] = []
    cap: list[int] = []

    def arc(u, v, c_uv, c_vu):
        head[u].append(len(to))
        to.append(v)
        cap.append(c_uv)
        head[v].append(len(to))
        to.append(u)
        cap.append(c_vu)

    big = len(edges) + 1
    for u, v in edges:
        arc(int(u), int(v), 1, 1)
    for u in set(int(x) for x in sources):
        arc(s, u, big, 0)
    for v in set(int(x) for x in sinks):
        arc(v, t, big, 0)

    flow = 0
    while True:
        level = [-1] * (n + 2)
        level[s] = 0
        queue = deque([s])
        while queue:
            u = queue.popleft()
            for e in head[u]:
                if cap[e] > 0 and level[to[e]] < 0:
                    level[to[e]] = level[u] + 1
                    queue.append(to[e])
        if level[t] < 0:
            return flow
        it = [0] * (n + 2)

        def push(u, limit):
            if u == t:
                return limit
            while it[u] < len(head[u]):
                e = head[u][it[u]]
                v = to[e]
                if cap[e] > 0 and level[v] == level[u] + 1:
                    got = push(v, min(limit, cap[e]))
                    if got:
                        cap[e] -= got
                        cap[e ^ 1] += got
                        return got
                it[u] += 1
            return 0

        while True:
            got = push(s, big)
            if not got:
                break
            flow += got


def oracle_mincut(problem: CondenserProblem) -> float:
    """Minimum number of edges separating ``X1`` from the sink and halo.

    For ``phi = Lp(1)`` with the sum combiner the objective is the total
    variation, whose infimum over the box is attained at an indicator function
    (coarea formula), i.e. at a minimum edge cut.
    """
    _require(problem, 1.0, {GradientCombiner.SUM_THEN_NORM})
    g = problem.graph
    src, dst = g.undirected_edges()
    limit = sys.getrecursionlimit()
    sys.setrecursionlimit(max(limit, 4 * g.n_vertices + 100))
    try:
        return float(max_flow_unit(g.n_vertices, list(zip(src.tolist(), dst.tolist())),
                                   problem.source.tolist(), problem.zero_set.tolist()))
    finally:
        sys.setrecursionlimit(limit)


def oracle_grid_search(problem: CondenserProblem, coarse: int = 8, fine: int = 64,
                       refine: str = "poll", final_step: float = 1e-7, directions: int = 256,
                       seed: int = 0, max_free: int = 6, batch: int = 200_000) -> float:
    """Exhaustive search over the free values followed by local refinement.

    A full grid of step ``1/coarse`` over ``[0, 1]^free`` is zoomed with
    5-point-per-coordinate lattices down to step ``1/fine``.  The incumbent is
    then refined locally:

    ``refine="poll"``
        mesh-adaptive poll over coordinate directions plus ``directions``
        fresh random unit vectors, the mesh doubling after a success and
        halving after a failure.  Cheap, but it can stall on ridges of
        polyhedral objectives (Lorentz gauges, max combiners).
    ``refine="conic"``
        the objective is re-encoded as a conic program (requires ``cvxpy``)
        and minimised over a trust box of half-width ``2/fine`` around the
        incumbent; the box is re-centred until the local minimiser lies in
        its interior, which by convexity makes it global.
    """
    free = problem.free()
    k = free.size
    if k > max_free:
        raise ValueError(f"grid search limited to {max_free} free vertices, problem has {k}")
    obj = CondenserObjective(problem)
    base = obj.project(np.zeros(problem.graph.n_vertices))
    if k == 0:
        return obj.value(base)

    def evaluate(points: np.ndarray) -> np.ndarray:
        out = np.empty(points.shape[0])
        for a in range(0, points.shape[0], batch):
            chunk = points[a:a + batch]
            fs = np.repeat(base[None, :], chunk.shape[0], axis=0)
            fs[:, free] = chunk
            out[a:a + batch] = obj.values(fs)
        return out

    axis = np.linspace(0.0, 1.0, coarse + 1)
    pts = np.array(list(itertools.product(axis, repeat=k)))
    vals = evaluate(pts)
    i = int(np.argmin(vals))
    best_x, best = pts[i], vals[i]

    step = 1.0 / coarse
    lattice = np.array(list(itertools.product(range(-2, 3), repeat=k)), dtype=float)
    while step > 1.0 / fine:
        cand = np.clip(best_x + step * lattice, 0.0, 1.0)
        vals = evaluate(cand)
        i = int(np.argmin(vals))
        if vals[i] < best:
            best, best_x = vals[i], cand[i]
        if vals[i] >= best or np.all(np.abs(lattice[i]) < 2):
            step /= 2.0

    if refine == "conic":
        return _conic_refine(problem, obj, base, free, best_x, 2.0 / fine)
    if refine != "poll":
        raise ValueError(f"unknown refinement {refine!r}")
    rng = np.random.default_rng(seed)
    eye = np.eye(k)
    mesh = step
    while mesh > final_step:
        rand = rng.standard_normal((directions, k))
        rand /= np.linalg.norm(rand, axis=1, keepdims=True)
        dirs = np.concatenate([eye, -eye, rand])
        cand = np.clip(best_x + mesh * dirs, 0.0, 1.0)
        vals = evaluate(cand)
        i = int(np.argmin(vals))
        if vals[i] < best:
            best, best_x = vals[i], cand[i]
            mesh = min(2.0 * mesh, 1.0 / coarse)
        else:
            mesh /= 2.0
    return float(best)


def _conic_refine(problem, obj, base, free, x0, width, max_rounds: int = 50) -> float:
    import cvxpy as cp

    g = problem.graph
    phi = problem.phi
    x = cp.Variable(free.size)
    lo = cp.Parameter(free.size)
    hi = cp.Parameter(free.size)
    f = [float(v) for v in base]
    fexpr = [x[int(np.flatnonzero(free == i)[0])] if i in set(free.tolist()) else f[i]
             for i in range(g.n_vertices)]

    def gauge(vec):
        if phi.kind == "lp":
            return cp.norm1(vec) if phi.p == 1.0 else cp.pnorm(vec, phi.p)
        m = vec.shape[0]
        w = np.append(phi.weights_for(m), 0.0)
        terms = [(w[i] - w[i + 1]) * cp.sum_largest(cp.abs(vec), i + 1)
                 for i in range(m) if w[i] - w[i + 1] > 0]
        return cp.sum(cp.hstack(terms))

    diffs = []
    for j in range(g.n_generators):
        s, t = g.edges(j)
        diffs.append([(int(a), fexpr[b] - fexpr[a]) for a, b in zip(s, t)])
    c = problem.combiner
    if c is GradientCombiner.MAX_THEN_NORM:
        parts = [gauge(cp.hstack([e for _, e in dj])) for dj in diffs if dj]
        objective = cp.maximum(*parts) if len(parts) > 1 else parts[0]
    elif c is GradientCombiner.SUM_THEN_NORM:
        objective = gauge(cp.hstack([e for dj in diffs for _, e in dj]))
    else:
        by_vertex: dict[int, list] = {}
        for dj in diffs:
            for v, e in dj:
                by_vertex.setdefault(v, []).append(e)
        cols = []
        for v in sorted(by_vertex):
            stack = cp.hstack(by_vertex[v])
            cols.append(cp.max(cp.abs(stack)) if c is GradientCombiner.POINTWISE_MAX_THEN_NORM
                        else cp.norm(stack, 2))
        objective = gauge(cp.hstack(cols))
    cons = [x >= lo, x <= hi]
    if problem.box:
        cons += [x >= 0, x <= 1]
    prob = cp.Problem(cp.Minimize(objective), cons)
    center = np.asarray(x0, dtype=float)
    best = float("inf")
    for _ in range(max_rounds):
        lo.value = center - width
        hi.value = center + width
        prob.solve(solver="CLARABEL")
        xs = np.clip(np.asarray(x.value, dtype=float), 0.0, 1.0)
        fs = base.copy()
        fs[free] = xs
        best = min(best, obj.value(fs))
        at_edge = (np.abs(xs - lo.value) < 1e-7) & (xs > 1e-7)
        at_edge |= (np.abs(xs - hi.value) < 1e-7) & (xs < 1 - 1e-7)
        if not np.any(at_edge):
            break
        center = xs
    return best
