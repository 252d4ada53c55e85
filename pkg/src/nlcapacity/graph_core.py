"""Generator-labeled graphs, Cayley-graph balls and discrete gradient seminorms.

A :class:`LabeledGraph` stores a finite vertex set together with one partial
injective map per generator.  Finitely supported functions on an infinite
group are modelled by storing the ball ``B_{R+1}`` and pinning the outer
layer (the *halo*) to zero, so every edge touching the interior ``B_R`` is
represented exactly.
"""

from __future__ import annotations

import enum
from math import comb
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from .symmetric_gauge import NormingFunction, evaluate_norm_rows

__all__ = [
    "FreeAbelian",
    "Free",
    "parse_group",
    "LabeledGraph",
    "GraphFormatError",
    "GradientCombiner",
    "cayley_ball",
    "ball_size",
    "graph_from_edges",
    "load_graph",
    "serialize_graph",
    "generator_difference",
    "gradient_seminorm",
    "gradient_seminorm_batch",
    "vertex_function",
]

DEFAULT_MAX_VERTICES = 200_000


# --------------------------------------------------------------------------
# groups


@dataclass(frozen=True)
class FreeAbelian:
    """The group Z^d with the d unit translations as generators."""

    d: int

    def __post_init__(self):
        if self.d < 1:
            raise ValueError("FreeAbelian needs d >= 1")

    @property
    def n_generators(self) -> int:
        return self.d

    def identity(self):
        return (0,) * self.d

    def neighbours(self, x):
        for i in range(self.d):
            for s in (1, -1):
                y = list(x)
                y[i] += s
                yield tuple(y)

    def act(self, j: int, x):
        y = list(x)
        y[j] += 1
        return tuple(y)

    def label(self, x) -> str:
        return ",".join(str(c) for c in x)

    def parse_element(self, text: str):
        t = text.strip()
        if t == "e":
            return self.identity()
        try:
            x = tuple(int(c) for c in t.split(","))
        except ValueError:
            raise ValueError(f"cannot parse {text!r} as an element of Z^{self.d}") from None
        if len(x) != self.d:
            raise ValueError(f"{text!r} does not have {self.d} coordinates")
        return x

    def sort_key(self, x):
        return x

    def __str__(self) -> str:
        return f"z:{self.d}"


@dataclass(frozen=True)
class Free:
    """The free group on k generators ``a, b, c, ...``; capitals are inverses."""

    k: int

    def __post_init__(self):
        if not 1 <= self.k <= 26:
            raise ValueError("Free needs 1 <= k <= 26")

    @property
    def n_generators(self) -> int:
        return self.k

    def identity(self):
        return ""

    def _mul_letter(self, letter: str, w: str) -> str:
        if w and w[0] == letter.swapcase():
            return w[1:]
        return letter + w

    def neighbours(self, w):
        for i in range(self.k):
            a = chr(ord("a") + i)
            yield self._mul_letter(a, w)
            yield self._mul_letter(a.upper(), w)

    def act(self, j: int, w):
        return self._mul_letter(chr(ord("a") + j), w)

    def label(self, w) -> str:
        return w or "e"

    def parse_element(self, text: str):
        t = text.strip()
        if t in ("e", ""):
            return ""
        letters = {chr(ord("a") + i) for i in range(self.k)}
        if any(c.lower() not in letters for c in t):
            raise ValueError(f"{text!r} is not a word in the free group on {self.k} generators")
        # reduce from the right, letter by letter
        w = ""
        for c in reversed(t):
            w = self._mul_letter(c, w)
        return w

    def sort_key(self, w):
        return (len(w), w)

    def __str__(self) -> str:
        return f"free:{self.k}"


def parse_group(text: str):
    """Parse ``z:<d>`` / ``zd:<d>`` or ``free:<k>``."""
    head, sep, arg = text.strip().lower().partition(":")
    if not sep:
        raise ValueError(f"malformed group spec {text!r}")
    try:
        n = int(arg)
    except ValueError:
        raise ValueError(f"malformed group spec {text!r}") from None
    if head in ("z", "zd", "abelian"):
        return FreeAbelian(n)
    if head == "free":
        return Free(n)
    raise ValueError(f"unknown group family {text!r}")


def ball_size(group, radius: int) -> int:
    """Number of elements of word length at most ``radius``."""
    if radius < 0:
        return 0
    if isinstance(group, Free):
        k = group.k
        if k == 1:
            return 2 * radius + 1
        return 1 + 2 * k * ((2 * k - 1) ** radius - 1) // (2 * k - 2)
    # lattice points of the l1-ball: sum_i 2^i C(d,i) C(R,i)
    return sum(2**i * comb(group.d, i) * comb(radius, i) for i in range(group.d + 1))


# --------------------------------------------------------------------------
# graphs


class GraphFormatError(ValueError):
    """Malformed graph file; ``lineno`` is 1-based (0 when not line specific)."""

    def __init__(self, message: str, lineno: int = 0):
        self.lineno = lineno
        super().__init__(f"line {lineno}: {message}" if lineno else message)


@dataclass(frozen=True, eq=False)
class LabeledGraph:
    """Finite vertex set with generator-labeled partial injective edge maps.

    Attributes
    ----------
    labels : tuple of str
        Vertex labels; position in this tuple is the vertex index.
    sources, targets : tuple of int arrays
        For generator ``j`` the edges are ``sources[j][i] -> targets[j][i]``,
        i.e. ``v -> g_j v``.  Sorted by source index.
    halo : bool array
        Vertices pinned to zero.
    """

    labels: tuple[str, ...]
    sources: tuple[np.ndarray, ...]
    targets: tuple[np.ndarray, ...]
    halo: np.ndarray
    index: dict = field(init=False, repr=False)

    def __post_init__(self):
        labels = tuple(self.labels)
        n = len(labels)
        index = {}
        for i, lab in enumerate(labels):
            if not lab or any(c.isspace() for c in lab):
                raise ValueError(f"invalid vertex label {lab!r}")
            if lab in index:
                raise ValueError(f"duplicate vertex label {lab!r}")
            index[lab] = i
        if len(self.sources) != len(self.targets):
            raise ValueError("sources and targets must list the same generators")
        srcs, dsts = [], []
        for j, (s, t) in enumerate(zip(self.sources, self.targets)):
            s = np.asarray(s, dtype=np.int64).ravel()
            t = np.asarray(t, dtype=np.int64).ravel()
            if s.shape != t.shape:
                raise ValueError(f"generator {j}: mismatched edge arrays")
            if s.size and (s.min() < 0 or t.min() < 0 or s.max() >= n or t.max() >= n):
                raise ValueError(f"generator {j}: edge refers to a missing vertex")
            if np.unique(s).size != s.size:
                raise ValueError(f"generator {j}: two edges leave the same vertex")
            if np.unique(t).size != t.size:
                raise ValueError(f"generator {j}: map is not injective")
            order = np.argsort(s, kind="stable")
            s, t = s[order], t[order]
            s.flags.writeable = False
            t.flags.writeable = False
            srcs.append(s)
            dsts.append(t)
        halo = np.zeros(n, dtype=bool) if self.halo is None else np.asarray(self.halo, dtype=bool).copy()
        if halo.shape != (n,):
            raise ValueError("halo mask has the wrong length")
        halo.flags.writeable = False
        object.__setattr__(self, "labels", labels)
        object.__setattr__(self, "sources", tuple(srcs))
        object.__setattr__(self, "targets", tuple(dsts))
        object.__setattr__(self, "halo", halo)
        object.__setattr__(self, "index", index)

    @property
    def n_vertices(self) -> int:
        return len(self.labels)

    @property
    def n_generators(self) -> int:
        return len(self.sources)

    @property
    def interior(self) -> np.ndarray:
        return np.flatnonzero(~self.halo)

    @property
    def halo_indices(self) -> np.ndarray:
        return np.flatnonzero(self.halo)

    def indices(self, labels: Iterable[str]) -> np.ndarray:
        out = []
        for lab in labels:
            try:
                out.append(self.index[lab])
            except KeyError:
                raise KeyError(f"unknown vertex {lab!r}") from None
        return np.asarray(out, dtype=np.int64)

    def edges(self, j: int, interior_only: bool = True) -> tuple[np.ndarray, np.ndarray]:
        """Edge arrays of generator ``j``; halo-to-halo edges dropped by default."""
        s, t = self.sources[j], self.targets[j]
        if interior_only:
            keep = ~(self.halo[s] & self.halo[t])
            s, t = s[keep], t[keep]
        return s, t

    def undirected_edges(self) -> tuple[np.ndarray, np.ndarray]:
        """All edges touching the interior, every generator concatenated."""
        parts = [self.edges(j) for j in range(self.n_generators)]
        if not parts:
            return np.zeros(0, np.int64), np.zeros(0, np.int64)
        return (np.concatenate([p[0] for p in parts]), np.concatenate([p[1] for p in parts]))

    def __eq__(self, other):
        if not isinstance(other, LabeledGraph):
            return NotImplemented
        return (
            self.labels == other.labels
            and self.n_generators == other.n_generators
            and all(np.array_equal(a, b) for a, b in zip(self.sources, other.sources))
            and all(np.array_equal(a, b) for a, b in zip(self.targets, other.targets))
            and np.array_equal(self.halo, other.halo)
        )

    __hash__ = None


def cayley_ball(group, radius: int, max_vertices: int = DEFAULT_MAX_VERTICES) -> LabeledGraph:
    """Ball ``B_{R+1}`` of the Cayley graph with interior ``B_R`` and halo the outer layer.

    Vertices are ordered by the group's natural key (coordinates for Z^d,
    shortlex for free groups); generator ``j`` maps ``g`` to ``g_j g``.
    """
    if radius < 0:
        raise ValueError("radius must be >= 0")
    size = ball_size(group, radius + 1)
    if size > max_vertices:
        raise ValueError(f"ball of radius {radius + 1} has {size} vertices, above the cap {max_vertices}")
    dist = {group.identity(): 0}
    frontier = [group.identity()]
    for r in range(1, radius + 2):
        nxt = []
        for x in frontier:
            for y in group.neighbours(x):
                if y not in dist:
                    dist[y] = r
                    nxt.append(y)
        frontier = nxt
    elems = sorted(dist, key=group.sort_key)
    pos = {x: i for i, x in enumerate(elems)}
    sources, targets = [], []
    for j in range(group.n_generators):
        s, t = [], []
        for x in elems:
            y = group.act(j, x)
            if y in pos:
                s.append(pos[x])
                t.append(pos[y])
        sources.append(np.array(s, dtype=np.int64))
        targets.append(np.array(t, dtype=np.int64))
    halo = np.array([dist[x] == radius + 1 for x in elems])
    return LabeledGraph(tuple(group.label(x) for x in elems), tuple(sources), tuple(targets), halo)


def graph_from_edges(n_vertices: int, edges: Sequence[tuple[int, int]], halo: Sequence[int] = (),
                     labels: Sequence[str] | None = None) -> LabeledGraph:
    """Label an undirected edge list with generators greedily.

    Each edge ``(u, v)`` becomes ``u -> v`` under the first generator whose map
    is still injective with it; new generators are opened as needed.
    """
    out_used: list[set] = []
    in_used: list[set] = []
    srcs: list[list] = []
    dsts: list[list] = []
    for u, v in edges:
        if u == v:
            raise ValueError("self-loops are not supported")
        for j in range(len(srcs)):
            if u not in out_used[j] and v not in in_used[j]:
                break
        else:
            j = len(srcs)
            out_used.append(set())
            in_used.append(set())
            srcs.append([])
            dsts.append([])
        out_used[j].add(u)
        in_used[j].add(v)
        srcs[j].append(u)
        dsts[j].append(v)
    if labels is None:
        labels = [str(i) for i in range(n_vertices)]
    mask = np.zeros(n_vertices, dtype=bool)
    mask[list(halo)] = True
    return LabeledGraph(tuple(labels), tuple(np.array(s, dtype=np.int64) for s in srcs),
                        tuple(np.array(d, dtype=np.int64) for d in dsts), mask)


# --------------------------------------------------------------------------
# file format


def load_graph(text: str) -> LabeledGraph:
    """Parse the line-oriented graph format.

    ::

        graph <n_generators>
        v <id> [interior|halo]
        e <generator_index> <src_id> <dst_id>

    Generator indices are 0-based; ``#`` starts a comment.
    """
    n_gen = None
    labels: list[str] = []
    halo: list[bool] = []
    index: dict[str, int] = {}
    edges: list[tuple[int, str, str, int]] = []
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        tok = line.split()
        if n_gen is None:
            if tok[0] != "graph" or len(tok) != 2:
                raise GraphFormatError("expected header 'graph <n_generators>'", lineno)
            try:
                n_gen = int(tok[1])
            except ValueError:
                raise GraphFormatError(f"bad generator count {tok[1]!r}", lineno) from None
            if n_gen < 0:
                raise GraphFormatError("generator count must be >= 0", lineno)
            continue
        if tok[0] == "v":
            if len(tok) not in (2, 3):
                raise GraphFormatError("expected 'v <id> [interior|halo]'", lineno)
            kind = tok[2] if len(tok) == 3 else "interior"
            if kind not in ("interior", "halo"):
                raise GraphFormatError(f"unknown vertex kind {kind!r}", lineno)
            if tok[1] in index:
                raise GraphFormatError(f"vertex {tok[1]!r} declared twice", lineno)
            index[tok[1]] = len(labels)
            labels.append(tok[1])
            halo.append(kind == "halo")
        elif tok[0] == "e":
            if len(tok) != 4:
                raise GraphFormatError("expected 'e <generator_index> <src_id> <dst_id>'", lineno)
            try:
                j = int(tok[1])
            except ValueError:
                raise GraphFormatError(f"bad generator index {tok[1]!r}", lineno) from None
            if not 0 <= j < n_gen:
                raise GraphFormatError(f"generator index {j} out of range", lineno)
            edges.append((j, tok[2], tok[3], lineno))
        elif tok[0] == "graph":
            raise GraphFormatError("repeated header", lineno)
        else:
            raise GraphFormatError(f"unknown record type {tok[0]!r}", lineno)
    if n_gen is None:
        raise GraphFormatError("missing header")
    srcs = [[] for _ in range(n_gen)]
    dsts = [[] for _ in range(n_gen)]
    seen_src = [dict() for _ in range(n_gen)]
    seen_dst = [dict() for _ in range(n_gen)]
    for j, a, b, lineno in edges:
        for lab in (a, b):
            if lab not in index:
                raise GraphFormatError(f"edge refers to undeclared vertex {lab!r}", lineno)
        ia, ib = index[a], index[b]
        if ia in seen_src[j]:
            raise GraphFormatError(f"generator {j} already maps {a!r} (line {seen_src[j][ia]})", lineno)
        if ib in seen_dst[j]:
            raise GraphFormatError(f"generator {j} is not injective: {b!r} already hit (line {seen_dst[j][ib]})",
                                   lineno)
        seen_src[j][ia] = lineno
        seen_dst[j][ib] = lineno
        srcs[j].append(ia)
        dsts[j].append(ib)
    return LabeledGraph(tuple(labels), tuple(np.array(s, dtype=np.int64) for s in srcs),
                        tuple(np.array(d, dtype=np.int64) for d in dsts), np.array(halo, dtype=bool))


def serialize_graph(g: LabeledGraph) -> str:
    lines = [f"graph {g.n_generators}"]
    for lab, h in zip(g.labels, g.halo):
        lines.append(f"v {lab} {'halo' if h else 'interior'}")
    for j in range(g.n_generators):
        for s, t in zip(g.sources[j], g.targets[j]):
            lines.append(f"e {j} {g.labels[s]} {g.labels[t]}")
    return "\n".join(lines) + "\n"


# --------------------------------------------------------------------------
# gradients


class GradientCombiner(enum.Enum):
    """How per-generator differences are combined before applying the gauge."""

    MAX_THEN_NORM = "max"
    POINTWISE_MAX_THEN_NORM = "pointwise-max"
    EUCLIDEAN_THEN_NORM = "euclidean"
    SUM_THEN_NORM = "sum"

    @classmethod
    def parse(cls, text: str) -> "GradientCombiner":
        t = text.strip().lower()
        aliases = {"delta": "max", "delta*": "pointwise-max", "pmax": "pointwise-max",
                   "euclid": "euclidean", "l2": "euclidean", "concat": "sum"}
        t = aliases.get(t, t)
        for c in cls:
            if c.value == t:
                return c
        raise ValueError(f"unknown combiner {text!r}")


def vertex_function(g: LabeledGraph, values) -> np.ndarray:
    """Validate ``values`` as a function on the stored vertices (zero on the halo)."""
    f = np.asarray(values, dtype=float)
    if f.shape != (g.n_vertices,):
        raise ValueError(f"expected {g.n_vertices} values, got shape {f.shape}")
    if not np.all(np.isfinite(f)):
        raise ValueError("vertex function has non-finite values")
    if np.any(f[g.halo] != 0):
        raise ValueError("vertex function must vanish on the halo")
    return f


def generator_difference(g: LabeledGraph, f, j: int) -> np.ndarray:
    """``f(g_j v) - f(v)`` over the edges of generator ``j`` (0-based) touching the interior."""
    f = np.asarray(f, dtype=float)
    s, t = g.edges(j)
    return f[..., t] - f[..., s]


@dataclass(frozen=True)
class EdgeLayout:
    """All interior-touching edges concatenated generator by generator."""

    src: np.ndarray
    dst: np.ndarray
    offsets: np.ndarray  # generator j owns src[offsets[j]:offsets[j+1]]
    n_vertices: int

    @classmethod
    def of(cls, g: LabeledGraph) -> "EdgeLayout":
        parts = [g.edges(j) for j in range(g.n_generators)]
        sizes = [p[0].size for p in parts]
        offsets = np.concatenate([[0], np.cumsum(sizes)]).astype(np.int64)
        src = np.concatenate([p[0] for p in parts]) if parts else np.zeros(0, np.int64)
        dst = np.concatenate([p[1] for p in parts]) if parts else np.zeros(0, np.int64)
        return cls(src, dst, offsets, g.n_vertices)

    @property
    def n_generators(self) -> int:
        return self.offsets.size - 1

    def differences(self, f: np.ndarray) -> np.ndarray:
        return f[..., self.dst] - f[..., self.src]

    def per_vertex(self, d: np.ndarray) -> np.ndarray:
        """Scatter edge differences to an array ``(..., n_generators, n_vertices)`` keyed by source."""
        out = np.zeros(d.shape[:-1] + (self.n_generators, self.n_vertices))
        for j in range(self.n_generators):
            a, b = self.offsets[j], self.offsets[j + 1]
            out[..., j, self.src[a:b]] = d[..., a:b]
        return out

    def seminorm(self, d: np.ndarray, phi: NormingFunction, combiner: GradientCombiner) -> np.ndarray:
        """Combine edge differences ``d`` (last axis) into seminorm values."""
        if combiner is GradientCombiner.MAX_THEN_NORM:
            if self.n_generators == 0:
                return np.zeros(d.shape[:-1])
            vals = [evaluate_norm_rows(phi, d[..., self.offsets[j]:self.offsets[j + 1]])
                    for j in range(self.n_generators)]
            return np.max(np.stack(vals, axis=-1), axis=-1)
        if combiner is GradientCombiner.SUM_THEN_NORM:
            return evaluate_norm_rows(phi, d)
        if self.n_generators == 0:
            return np.zeros(d.shape[:-1])
        h = np.abs(self.per_vertex(d))
        if combiner is GradientCombiner.POINTWISE_MAX_THEN_NORM:
            h = h.max(axis=-2)
        else:
            h = np.sqrt(np.sum(h * h, axis=-2))
        return evaluate_norm_rows(phi, h)


def gradient_seminorm(g: LabeledGraph, f, phi: NormingFunction,
                      combiner: GradientCombiner = GradientCombiner.MAX_THEN_NORM) -> float:
    """Discrete gradient seminorm of ``f``.

    ``MAX_THEN_NORM`` is ``max_j phi(D_j f)``; ``POINTWISE_MAX_THEN_NORM`` is
    ``phi(v -> max_j |D_j f(v)|)``; ``EUCLIDEAN_THEN_NORM`` replaces the
    pointwise max by the Euclidean norm across generators and
    ``SUM_THEN_NORM`` applies ``phi`` to all differences at once.
    """
    f = np.asarray(f, dtype=float)
    if f.shape != (g.n_vertices,):
        raise ValueError(f"expected {g.n_vertices} values, got shape {f.shape}")
    layout = EdgeLayout.of(g)
    return float(layout.seminorm(layout.differences(f), phi, combiner))


def gradient_seminorm_batch(g: LabeledGraph, fs, phi: NormingFunction,
                            combiner: GradientCombiner = GradientCombiner.MAX_THEN_NORM,
                            layout: EdgeLayout | None = None) -> np.ndarray:
    """Row-wise :func:`gradient_seminorm` for an array of shape ``(batch, n_vertices)``."""
    fs = np.asarray(fs, dtype=float)
    layout = layout or EdgeLayout.of(g)
    return layout.seminorm(layout.differences(fs), phi, combiner)

