"""Edge-length and outdegree functionals, difference operators and stabilization radii.

Edge policy shared by every function here: a vertex whose hull never closed
(see :mod:`nnegraph.nne`) contributes its outgoing edges only when it lies in
the window ``B_t``.  Such a vertex inside the window signals an insufficient
sampling buffer: ``strict=True`` turns it into :class:`UnclosedVertexError`,
otherwise a warning is issued and its literal edge set (every other vertex) is
used.

Difference operators are evaluated from the symmetric difference of the
counted edge sets, summed with :func:`math.fsum`.  The result is exactly
rounded, so any two evaluations over the same changed edges agree bit for bit.
"""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numpy as np

from .geometry import Space, distance, distances_from
from .nne import NNEGraph, build_nne, outgoing_sets
from .sampling import PointConfiguration, with_points

__all__ = [
    "UnclosedVertexError",
    "FunctionalSpec",
    "StabilizationRecord",
    "length_power",
    "outdegree_count",
    "evaluate",
    "add_one_cost",
    "second_difference",
    "stabilization_radius",
]

LENGTH_POWER = "length_power"
OUTDEGREE_COUNT = "outdegree_count"


class UnclosedVertexError(RuntimeError):
    """A vertex inside the observation window never closed its hull."""

    def __init__(self, vertex: int, stream: int | None = None):
        where = f" (stream {stream})" if stream is not None else ""
        super().__init__(f"vertex {vertex}{where} inside the window has no closed hull")
        self.vertex = vertex
        self.stream = stream


@dataclass(frozen=True)
class FunctionalSpec:
    """Either the edge-length power sum (``alpha``) or the outdegree count (``k``) on ``B_t``."""

    kind: str
    param: float
    t: float

    def __post_init__(self):
        if self.kind not in (LENGTH_POWER, OUTDEGREE_COUNT):
            raise ValueError(f"unknown functional kind {self.kind!r}")
        if not self.t > 0:
            raise ValueError(f"window radius must be positive, got {self.t}")
        if self.kind == LENGTH_POWER and not self.param >= 0:
            raise ValueError(
                f"edge-length exponent must be non-negative, got {self.param}; "
                "negative exponents are not supported"
            )
        if self.kind == OUTDEGREE_COUNT and self.param != int(self.param):
            raise ValueError(f"outdegree must be an integer, got {self.param}")

    @classmethod
    def length_power(cls, alpha: float, t: float) -> "FunctionalSpec":
        return cls(LENGTH_POWER, float(alpha), float(t))

    @classmethod
    def outdegree_count(cls, k: int, t: float) -> "FunctionalSpec":
        return cls(OUTDEGREE_COUNT, int(k), float(t))

    @property
    def k(self) -> int:
        return int(self.param)

    def check(self, space: Space) -> None:
        """Reject outdegrees that cannot occur: a hull needs ``d + 1`` points to close."""
        if self.kind == OUTDEGREE_COUNT and self.k < space.dim + 1:
            raise ValueError(
                f"outdegree k={self.k} is below d+1={space.dim + 1}; "
                "closing a hull needs at least d+1 neighbours"
            )

    def label(self) -> str:
        if self.kind == LENGTH_POWER:
            return f"F(alpha={self.param:g})"
        return f"G(k={self.k})"


@dataclass(frozen=True)
class StabilizationRecord:
    r1: float
    r2: float
    r: float
    censored: bool = False

    @classmethod
    def of(cls, r1: float, r2: float, censored: bool = False) -> "StabilizationRecord":
        return cls(float(r1), float(r2), float(max(r1, 2.0 * r2)), censored)


def _check_unclosed(in_window_open: np.ndarray, strict: bool, stream=None) -> None:
    if not len(in_window_open):
        return
    if strict:
        raise UnclosedVertexError(int(in_window_open[0]), stream)
    warnings.warn(
        f"{len(in_window_open)} vertices inside the window have no closed hull; "
        "using all other vertices as their neighbours",
        RuntimeWarning,
        stacklevel=3,
    )


def _edge_table(graph: NNEGraph) -> tuple[np.ndarray, np.ndarray]:
    """Canonical undirected edges ``(a < b)`` from closed vertices, with their lengths."""
    if "edge_table" not in graph._cache:
        src, dst = graph.closed_edges()
        a = np.minimum(src, dst)
        b = np.maximum(src, dst)
        n = max(len(graph), 1)
        key = np.unique(a * n + b)
        a, b = key // n, key % n
        pts = graph.config.points
        lengths = np.atleast_1d(distance(graph.space, pts[a], pts[b])) if len(a) else np.zeros(0)
        graph._cache["edge_table"] = (np.stack([a, b], axis=1), lengths)
    return graph._cache["edge_table"]


def _window_edges(graph: NNEGraph, t: float, strict: bool, stream=None):
    """Counted edges for window ``t`` and the in-window mask of the vertices."""
    inside = graph.config.norms <= t
    pairs, lengths = _edge_table(graph)
    open_in = np.flatnonzero(inside & ~graph.closed)
    _check_unclosed(open_in, strict, stream)
    if len(open_in):
        n = len(graph)
        extra = [(min(i, j), max(i, j)) for i in open_in for j in range(n) if j != i]
        extra = np.array(extra, dtype=np.int64).reshape(-1, 2)
        allp = np.concatenate([pairs, extra])
        key, first = np.unique(allp[:, 0] * n + allp[:, 1], return_index=True)
        pairs = allp[first]
        pts = graph.config.points
        lengths = np.atleast_1d(distance(graph.space, pts[pairs[:, 0]], pts[pairs[:, 1]]))
    return pairs, lengths, inside


def length_power(graph: NNEGraph, alpha: float, t: float, strict: bool = False, stream=None) -> float:
    """Half the sum over window vertices of ``length^alpha`` over all their incident edges.

    Equivalently each undirected edge has weight 1 with both ends in ``B_t``
    and 1/2 with one end there.  ``0^0`` is taken as 1.
    """
    if not alpha >= 0:
        raise ValueError("alpha must be non-negative")
    pairs, lengths, inside = _window_edges(graph, t, strict, stream)
    if not len(pairs):
        return 0.0
    w = 0.5 * (inside[pairs[:, 0]].astype(float) + inside[pairs[:, 1]])
    terms = w * (lengths**alpha if alpha != 0 else np.ones_like(lengths))
    return math.fsum(terms[w > 0])


def outdegree_count(graph: NNEGraph, k: int, t: float, strict: bool = False, stream=None) -> int:
    """Number of closed window vertices with exactly ``k`` outgoing neighbours."""
    if k < graph.space.dim + 1:
        raise ValueError(
            f"outdegree k={k} is below d+1={graph.space.dim + 1}; "
            "closing a hull needs at least d+1 neighbours"
        )
    inside = graph.config.norms <= t
    _check_unclosed(np.flatnonzero(inside & ~graph.closed), strict, stream)
    deg = np.diff(graph.offsets)
    return int(np.count_nonzero(inside & graph.closed & (deg == k)))


def evaluate(graph: NNEGraph, spec: FunctionalSpec, strict: bool = False, stream=None) -> float:
    spec.check(graph.space)
    if spec.kind == LENGTH_POWER:
        return length_power(graph, spec.param, spec.t, strict, stream)
    return float(outdegree_count(graph, spec.k, spec.t, strict, stream))


# -- local rebuilds -----------------------------------------------------------


@dataclass
class _Local:
    """Outgoing sets of a chosen vertex subset, indexed in a common numbering."""

    vertices: np.ndarray  # global ids
    closed: dict
    out: dict  # global id -> array of global ids (closed vertices only)


def _local_sets(config: PointConfiguration, vertices, tol: float, ids=None) -> _Local:
    """Out-sets of ``vertices`` (local indices); ``ids`` maps local to global ids."""
    vertices = np.asarray(vertices, dtype=np.int64)
    sets = outgoing_sets(config, vertices, tol=tol)
    ids = np.arange(len(config)) if ids is None else np.asarray(ids)
    closed = {}
    out = {}
    for r, v in enumerate(vertices):
        g = int(ids[v])
        closed[g] = bool(sets.closed[r])
        if sets.closed[r]:
            out[g] = ids[sets.targets[sets.offsets[r] : sets.offsets[r + 1]]]
    return _Local(ids[vertices], closed, out)


def _counted_pairs(local: _Local, inside: dict, allowed: set, strict: bool) -> set:
    """Undirected pairs with both ends in ``allowed`` counted under the edge policy."""
    pairs = set()
    open_in = []
    for v in local.vertices:
        v = int(v)
        if local.closed[v]:
            nb = local.out[v]
        elif inside[v]:
            open_in.append(v)
            nb = [u for u in allowed if u != v]
        else:
            continue
        for u in nb:
            u = int(u)
            if u in allowed:
                pairs.add((min(u, v), max(u, v)))
    _check_unclosed(np.array(open_in), strict)
    return pairs


def _change_terms(space, pts_global, old: set, new: set, inside: dict, alpha: float) -> list[float]:
    terms = []
    for sign, edges in ((1.0, new - old), (-1.0, old - new)):
        for a, b in sorted(edges):
            w = 0.5 * (inside[a] + inside[b])
            if w == 0:
                continue
            ln = distance(space, pts_global[a], pts_global[b])
            terms.append(sign * w * (ln**alpha if alpha != 0 else 1.0))
    return terms


def _degree_change(old: _Local, new: _Local, inside: dict, k: int, vertices) -> int:
    total = 0
    for v in vertices:
        v = int(v)
        if not inside[v]:
            continue
        now = new.closed.get(v, False) and len(new.out[v]) == k
        before = v in old.closed and old.closed[v] and len(old.out[v]) == k
        total += int(now) - int(before)
    return total


def add_one_cost(
    config: PointConfiguration,
    x,
    spec: FunctionalSpec,
    radius: float | None = None,
    strict: bool = False,
    tol: float = 1e-9,
) -> float:
    """Change of the functional when the point ``x`` is inserted.

    Without ``radius`` every vertex's outgoing set is rebuilt on both
    configurations.  With ``radius`` only the vertices in ``B(x, radius)`` are
    rebuilt (still against the whole configuration) and only edges with both
    ends in that ball are compared; this is the fast path, and it agrees with
    the full evaluation whenever ``radius`` is at least the stabilization
    radius of ``x``.
    """
    spec.check(config.space)
    space = config.space
    n = len(config)
    plus = with_points(config, x)
    pts = plus.points
    inside_arr = plus.norms <= spec.t
    inside = {i: bool(inside_arr[i]) for i in range(n + 1)}
    if radius is None:
        region = np.arange(n + 1)
    else:
        region = np.flatnonzero(distances_from(space, pts[n], pts) <= radius)
        region = region[region != n]
        region = np.append(region, n)
    old_v = region[region < n]
    old = _local_sets(config, old_v, tol)
    new = _local_sets(plus, region, tol)
    if spec.kind == OUTDEGREE_COUNT:
        return float(_degree_change(old, new, inside, spec.k, region))
    allowed = set(int(v) for v in region)
    old_pairs = _counted_pairs(old, inside, allowed - {n}, strict)
    new_pairs = _counted_pairs(new, inside, allowed, strict)
    return math.fsum(_change_terms(space, pts, old_pairs, new_pairs, inside, spec.param))


def second_difference(
    config: PointConfiguration, x, y, spec: FunctionalSpec, strict: bool = False, tol: float = 1e-9
) -> float:
    """``f(eta + x + y) - f(eta + x) - f(eta + y) + f(eta)`` from four full rebuilds.

    Contributions are gathered per edge (or per vertex for the outdegree
    count) with integer coefficients and summed exactly, so the value is
    symmetric in ``x`` and ``y`` to the last bit.
    """
    spec.check(config.space)
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    n = len(config)
    both = with_points(config, np.vstack([x, y]))
    pts = both.points
    inside_arr = both.norms <= spec.t
    inside = {i: bool(inside_arr[i]) for i in range(n + 2)}
    # local ids n and n+1 map to global ids n (x) and n+1 (y)
    variants = [
        (config, np.arange(n), 1),
        (with_points(config, x), np.arange(n + 1), -1),
        (with_points(config, y), np.append(np.arange(n), n + 1), -1),
        (both, np.arange(n + 2), 1),
    ]
    if spec.kind == OUTDEGREE_COUNT:
        total = 0
        for cfg, ids, sign in variants:
            loc = _local_sets(cfg, np.arange(len(cfg)), tol, ids)
            total += sign * sum(
                1
                for v in loc.vertices
                if inside[int(v)] and loc.closed[int(v)] and len(loc.out[int(v)]) == spec.k
            )
        return float(total)
    coeff: dict = {}
    for cfg, ids, sign in variants:
        loc = _local_sets(cfg, np.arange(len(cfg)), tol, ids)
        for e in _counted_pairs(loc, inside, set(int(i) for i in ids), strict):
            coeff[e] = coeff.get(e, 0) + sign
    terms = []
    for (a, b), c in coeff.items():
        if c == 0:
            continue
        w = 0.5 * (inside[a] + inside[b])
        ln = distance(config.space, pts[a], pts[b])
        terms.append(c * w * (ln**spec.param if spec.param != 0 else 1.0))
    return math.fsum(terms)


def _reach(graph: NNEGraph) -> np.ndarray:
    """Distance from each closed vertex to its farthest outgoing neighbour (inf if unclosed)."""
    if "reach" not in graph._cache:
        pts = graph.config.points
        reach = np.full(len(graph), np.inf)
        src, dst = graph.closed_edges()
        if len(src):
            lengths = np.atleast_1d(distance(graph.space, pts[src], pts[dst]))
            # out-lists are sorted by distance, so the last entry is the farthest
            last = graph.offsets[1:] - 1
            has = np.diff(graph.offsets) > 0
            reach[has] = lengths[last[has]]
        graph._cache["reach"] = reach
    return graph._cache["reach"]


def stabilization_radius(
    config: PointConfiguration,
    x,
    t: float | None = None,
    graph: NNEGraph | None = None,
    tol: float = 1e-9,
) -> StabilizationRecord:
    """Radius beyond which inserting ``x`` changes nothing.

    ``r1`` is the distance to the farthest outgoing neighbour of ``x`` after
    insertion.  ``r2`` is the largest outgoing-neighbour distance (before
    insertion) over the vertices that adopt ``x`` as an outgoing neighbour;
    0 if there are none.  The record is censored when ``x`` or a counted
    adopter has no closed hull; ``r1`` is then the window radius.
    A vertex that only closes after insertion contributes its new reach.
    ``graph``, if given, must be ``build_nne(config)``.
    """
    space = config.space
    t = config.window_radius if t is None else t
    x = np.asarray(x, dtype=float)
    n = len(config)
    plus = with_points(config, x)
    if graph is None:
        graph = build_nne(config, tol=tol)
    own = outgoing_sets(plus, [n], tol=tol)
    if not own.closed[0]:
        return StabilizationRecord.of(t, 0.0, censored=True)
    nb = own.targets
    r1 = float(distances_from(space, x, plus.points[nb]).max())
    if n == 0:
        return StabilizationRecord.of(r1, 0.0)
    reach = _reach(graph)
    dx = distances_from(space, x, config.points)
    # an adopter z has x within its (shrunk) reach, so d(z, x) <= reach(z)
    cand = np.flatnonzero(dx <= reach)
    if not len(cand):
        return StabilizationRecord.of(r1, 0.0)
    after = outgoing_sets(plus, cand, tol=tol)
    inside = config.norms <= t
    r2 = 0.0
    censored = False
    for r, z in enumerate(cand):
        if after.closed[r]:
            out = after.targets[after.offsets[r] : after.offsets[r + 1]]
            if n not in out:
                continue
            new_reach = distance(space, config.points[z], plus.points[out[-1]])
            r2 = max(r2, reach[z] if graph.closed[z] else new_reach)
        elif inside[z]:
            censored = True
    return StabilizationRecord.of(r1, r2, censored=censored)
