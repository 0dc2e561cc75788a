"""Nearest neighbour embracing graph construction and verification.

Each vertex ``x`` takes its neighbours in order of increasing distance and
stops as soon as it lies in their convex hull (tested only once at least
``d + 1`` neighbours are present).  Vertices whose hull never closes inside
the sampled configuration are flagged as not closed; their outgoing set is,
by the construction, every other vertex.

Neighbour candidates come from a k-d tree: on the points themselves in the
Euclidean case and on Poincare ball coordinates in the hyperbolic case.  A
candidate is only used once every point at least as close is known to be in
the candidate list; otherwise the query is widened.
"""
from __future__ import annotations

import os
from dataclasses import dataclass, field

import numpy as np
from numba import njit
from scipy.spatial import cKDTree

from .geometry import Space, ball_volume, distances_from, klein_coords, poincare_coords
from .hull import (
    CONVERGED,
    ITERATION_CAP,
    SEPARATED,
    HullFailure,
    _min_norm_cold,
    _wolfe,
    exact_contains,
    min_norm_point,
)
from .sampling import PointConfiguration, format_configuration, parse_configuration

__all__ = [
    "NNEGraph",
    "Violation",
    "VerificationReport",
    "nearest_sorted",
    "build_nne",
    "outgoing_sets",
    "verify_graph",
    "graph_from_lists",
    "format_graph",
    "parse_graph",
    "write_graph",
    "read_graph",
]

DEFAULT_TOL = 1e-9

# per-vertex status codes
CLOSED = 0
NEED_MORE = 1
UNCLOSED = 2
FAILED = 3


@njit(cache=True)
def _dist(pts, hyper, a, b):
    s = 0.0
    if hyper:
        d0 = pts[a, 0] - pts[b, 0]
        for j in range(1, pts.shape[1]):
            t = pts[a, j] - pts[b, j]
            s += t * t
        s -= d0 * d0
        if s < 0.0:
            s = 0.0
        return 2.0 * np.arcsinh(0.5 * np.sqrt(s))
    for j in range(pts.shape[1]):
        t = pts[a, j] - pts[b, j]
        s += t * t
    return np.sqrt(s)


@njit(cache=True)
def _chart(pts, hyper, c, q, out):
    """Klein chart coordinates of point ``q`` around point ``c`` (same formula as geometry)."""
    if not hyper:
        for j in range(pts.shape[1]):
            out[j] = pts[q, j] - pts[c, j]
        return
    D = pts.shape[1]
    d0 = pts[q, 0] - pts[c, 0]
    sq = 0.0
    s = 0.0
    for j in range(1, D):
        t = pts[q, j] - pts[c, j]
        sq += t * t
        s += pts[c, j] * t
    q0 = 1.0 + 0.5 * (sq - d0 * d0)
    f = s / (1.0 + pts[c, 0])
    for j in range(1, D):
        out[j - 1] = (pts[q, j] - pts[c, j] - pts[c, j] * d0 + pts[c, j] * f) / q0


@njit(cache=True)
def _close_vertex(pts, hyper, d, v, order, ncert, tol, P, S, lam, x):
    """Grow the neighbour list of ``v`` along ``order[:ncert]``.

    Returns (outdegree, status, residual of closing test, residual of the
    previous test).
    """
    ns = 0
    res = np.inf
    prev = np.inf
    started = False
    x[:] = np.nan
    for m in range(ncert):
        _chart(pts, hyper, v, order[m], P[m])
        cnt = m + 1
        if cnt < d + 1:
            continue
        if not started:
            best = 0
            best_val = np.inf
            for i in range(cnt):
                s = 0.0
                for j in range(d):
                    s += P[i, j] * P[i, j]
                if s < best_val:
                    best_val = s
                    best = i
            S[0] = best
            lam[0] = 1.0
            for j in range(d):
                x[j] = P[best, j]
            ns = 1
            started = True
        prev = res
        res, status, ns = _wolfe(P, cnt, S, lam, x, ns, tol, 10 * cnt * d)
        if status == ITERATION_CAP:
            return cnt, FAILED, res, prev
        if status != SEPARATED and res <= tol:
            return cnt, CLOSED, res, prev
    return ncert, NEED_MORE, res, prev


@njit(cache=True)
def _close_batch(pts, hyper, verts, cand, cand_off, cert, all_in, tol):
    """Run :func:`_close_vertex` for each vertex over its candidate slice.

    ``cand[cand_off[r]:cand_off[r + 1]]`` holds candidate neighbours of
    ``verts[r]`` (the vertex itself may appear); every point within distance
    ``cert[r]`` of the vertex is guaranteed to be among them.  When
    ``all_in[r]`` the slice is the whole configuration.
    """
    nrows = len(verts)
    d = pts.shape[1] - 1 if hyper else pts.shape[1]
    width = 1
    for r in range(nrows):
        width = max(width, cand_off[r + 1] - cand_off[r])
    deg = np.zeros(nrows, np.int64)
    status = np.zeros(nrows, np.int64)
    res = np.empty(nrows)
    prev = np.empty(nrows)
    order_out = np.full(len(cand), -1, np.int64)
    direction = np.full((nrows, d), np.nan)
    P = np.empty((width, d))
    S = np.empty(d + 2, np.int64)
    lam = np.empty(d + 2)
    x = np.empty(d)
    for r in range(nrows):
        v = verts[r]
        lo = cand_off[r]
        others = np.empty(cand_off[r + 1] - lo, np.int64)
        m = 0
        for j in range(lo, cand_off[r + 1]):
            c = cand[j]
            if c != v and c >= 0:
                others[m] = c
                m += 1
        others = np.sort(others[:m])
        dist = np.empty(m)
        for j in range(m):
            dist[j] = _dist(pts, hyper, v, others[j])
        idx = np.argsort(dist, kind="mergesort")
        order = others[idx]
        dsorted = dist[idx]
        ncert = m
        if not all_in[r]:
            ncert = 0
            while ncert < m and dsorted[ncert] <= cert[r]:
                ncert += 1
        dg, st, rs, pv = _close_vertex(pts, hyper, d, v, order, ncert, tol, P, S, lam, x)
        if st == NEED_MORE and all_in[r]:
            st = UNCLOSED
        deg[r] = dg
        status[r] = st
        res[r] = rs
        prev[r] = pv
        for j in range(dg):
            order_out[lo + j] = order[j]
        if st == NEED_MORE:
            direction[r] = x
    return deg, status, res, prev, order_out, direction


@njit(cache=True)
def _contains_all(pts, hyper, v, tol):
    n = pts.shape[0]
    d = pts.shape[1] - 1 if hyper else pts.shape[1]
    P = np.empty((n - 1, d))
    m = 0
    for q in range(n):
        if q != v:
            _chart(pts, hyper, v, q, P[m])
            m += 1
    res, status, _ = _min_norm_cold(P, tol, 10 * (n - 1) * d)
    return res, status


@dataclass
class _Sets:
    """Outgoing sets for a subset of vertices."""

    vertices: np.ndarray
    closed: np.ndarray
    offsets: np.ndarray
    targets: np.ndarray
    residual: np.ndarray
    prev_residual: np.ndarray


def _far_side_hits(pts, tree, verts, direction) -> list:
    """Points on the closed negative side of a hyperplane through each vertex.

    ``direction[r]`` is a Klein-chart vector at ``verts[r]``.  The hyperplane
    through the vertex orthogonal to it has spacelike normal ``n``; when the
    origin is on the positive side, the closed negative side is a Euclidean
    ball in Poincare coordinates, which the k-d tree can search (slightly
    enlarged, so the hit list is a superset).  Rows where that does not apply
    get ``None``; otherwise the hits exclude the vertex itself.
    """
    out: list = [None] * len(verts)
    ok = np.all(np.isfinite(direction), axis=1)
    if not ok.any():
        return out
    v = pts[verts]
    c0 = v[:, 0]
    cs = v[:, 1:]
    u = np.where(ok[:, None], direction, 0.0)
    u = u / np.maximum(np.linalg.norm(u, axis=1, keepdims=True), 1e-300)
    n0 = np.sum(cs * u, axis=1)
    ns = u + cs * (n0 / (1.0 + c0))[:, None]
    idx = np.flatnonzero(ok & (n0 < -1e-12))
    if len(idx) == 0:
        return out
    centre = ns[idx] / n0[idx, None]
    radius = (1.0 / np.abs(n0[idx])) * (1.0 + 1e-9) + 1e-12
    hits = tree.query_ball_point(centre, radius)
    for j, r in enumerate(idx):
        out[r] = [h for h in hits[j] if h != verts[r]]
    return out


def _separate(space, pts, tree, v, known, direction, tol, hits=None, rounds=8):
    """Try to prove that vertex ``v`` lies outside the hull of all points.

    Alternates between collecting the points on the far side of the current
    separating hyperplane and re-solving the minimum-norm problem on the
    enlarged set.  Returns True (outside), False (inside the hull of a subset,
    hence of everything) or None (undecided).
    """
    known = set(int(i) for i in known)
    for _ in range(rounds):
        if hits is None:
            hits = _far_side_hits(pts, tree, np.array([v]), direction[None, :])[0]
        if hits is None:
            return None
        if not hits:
            return True
        known.update(hits)
        idx = np.fromiter(sorted(known), dtype=np.int64)
        P = klein_coords(space, pts[v], pts[idx])
        res, status, x = _min_norm_cold(P, tol, 10 * len(idx) * space.dim)
        if status == ITERATION_CAP:
            return None
        if status != SEPARATED and res <= tol:
            return False
        direction = x
        hits = None
    return None


def _chart_points(config: PointConfiguration) -> np.ndarray:
    if config.space.hyperbolic_kind:
        return poincare_coords(config.space, config.points)
    return np.asarray(config.points)


def _hyperbolic_disks(chart_norm: np.ndarray, chart: np.ndarray, r: np.ndarray):
    """Poincare-ball images (centre, radius) of the hyperbolic balls ``B(v, r)``.

    The image of ``B(v, r)`` is a Euclidean ball whose diameter on the ray
    through ``v`` runs between ``tanh((rho - r)/2)`` and ``tanh((rho + r)/2)``.
    """
    rho = 2.0 * np.arctanh(chart_norm)
    lo = np.tanh(0.5 * (rho - r))
    hi = np.tanh(0.5 * (rho + r))
    unit = chart / np.maximum(chart_norm, 1e-300)[:, None]
    centre = unit * (0.5 * (lo + hi))[:, None]
    return centre, 0.5 * (hi - lo)


def _radius_for_volume(space: Space, vol: float) -> float:
    lo, hi = 0.0, 1.0
    while ball_volume(space, hi) < vol:
        hi *= 2.0
    for _ in range(60):
        mid = 0.5 * (lo + hi)
        if ball_volume(space, mid) < vol:
            lo = mid
        else:
            hi = mid
    return hi


def _candidates(config, chart, tree, verts, k, radius):
    """Candidate slices (flat, offsets), certified radii and all-points flags.

    Euclidean: the ``k`` nearest points from the tree, certified up to the
    ``k``-th distance.  Hyperbolic: every point inside the Poincare image of
    the hyperbolic ball of ``radius[r]``, certified up to that radius.
    """
    n = len(config)
    if not config.space.hyperbolic_kind:
        kq = min(k, n - 1)
        kd_dist, kd_idx = tree.query(chart[verts], k=kq + 1)
        kd_dist = np.asarray(kd_dist).reshape(len(verts), -1)
        kd_idx = np.asarray(kd_idx, dtype=np.int64).reshape(len(verts), -1)
        cert = kd_dist[:, -1] * (1.0 - 1e-12)
        all_in = np.full(len(verts), kq >= n - 1)
        off = np.arange(len(verts) + 1, dtype=np.int64) * (kq + 1)
        return kd_idx.ravel(), off, cert, all_in
    q = chart[verts]
    qn = np.linalg.norm(q, axis=1)
    rho = 2.0 * np.arctanh(qn)
    all_in = radius >= rho + config.norms.max()
    centre, rad = _hyperbolic_disks(qn, q, radius)
    hits = tree.query_ball_point(centre, rad * (1.0 + 1e-9) + 1e-12)
    everyone = np.arange(n, dtype=np.int64)
    lists = [everyone if all_in[r] else np.asarray(h, dtype=np.int64) for r, h in enumerate(hits)]
    off = np.zeros(len(verts) + 1, np.int64)
    np.cumsum([len(x) for x in lists], out=off[1:])
    flat = np.concatenate(lists) if lists else np.zeros(0, np.int64)
    cert = radius * (1.0 - 1e-9) - 1e-12
    return flat, off, cert, all_in


def outgoing_sets(
    config: PointConfiguration,
    vertices=None,
    tol: float = DEFAULT_TOL,
    initial_k: int | None = None,
    tree: cKDTree | None = None,
) -> _Sets:
    """Outgoing neighbour lists of ``vertices`` (default: all) in ``config``.

    Unclosed vertices get an empty list here; :class:`NNEGraph` expands them.
    """
    n = len(config)
    space = config.space
    d = space.dim
    pts = np.ascontiguousarray(config.points)
    hyper = space.hyperbolic_kind
    verts = np.arange(n) if vertices is None else np.asarray(vertices, dtype=np.int64)
    nv = len(verts)
    closed = np.zeros(nv, bool)
    degs = np.zeros(nv, np.int64)
    res = np.full(nv, np.inf)
    prev = np.full(nv, np.inf)
    lists: list[np.ndarray | None] = [None] * nv
    if n <= 1 or nv == 0:
        return _Sets(verts, closed, np.zeros(nv + 1, np.int64), np.zeros(0, np.int64), res, prev)
    chart = _chart_points(config)
    if tree is None:
        tree = cKDTree(chart)
    k = initial_k or (12 if d == 2 else 8 * d)
    radius = np.full(nv, _radius_for_volume(space, k) if hyper else 0.0)
    pending = np.arange(nv)
    while len(pending):
        vp = verts[pending]
        cand, off, cert, all_in = _candidates(config, chart, tree, vp, k, radius[pending])
        dg, st, rs, pv, order, direction = _close_batch(
            pts, hyper, vp, cand, off, cert, all_in, tol
        )
        if np.any(st == FAILED):
            r = int(np.flatnonzero(st == FAILED)[0])
            raise HullFailure(
                f"hull test did not converge at vertex {vp[r]}", float(rs[r]), vertex=int(vp[r])
            )
        verdict = {}
        open_rows = np.flatnonzero(st == NEED_MORE)
        if hyper and len(open_rows):
            first = _far_side_hits(pts, tree, vp[open_rows], direction[open_rows])
            for r, hits in zip(open_rows, first):
                if hits is None:
                    continue
                if not hits:
                    verdict[r] = True
                    continue
                known = order[off[r] : off[r] + dg[r]]
                verdict[r] = _separate(
                    space, pts, tree, int(vp[r]), known, direction[r], tol, hits=hits
                )
        still = []
        for r, row in enumerate(pending):
            if st[r] == CLOSED:
                closed[row] = True
                degs[row] = dg[r]
                res[row] = rs[r]
                prev[row] = pv[r]
                lists[row] = order[off[r] : off[r] + dg[r]]
            elif st[r] == UNCLOSED or verdict.get(r) is True:
                res[row] = rs[r]
            elif verdict.get(r) is False or (hyper and r not in verdict):
                still.append(row)
            else:
                full_res, full_st = _contains_all(pts, hyper, int(vp[r]), tol)
                if full_st == ITERATION_CAP:
                    raise HullFailure(
                        f"hull test did not converge at vertex {vp[r]}",
                        float(full_res),
                        vertex=int(vp[r]),
                    )
                if full_st == SEPARATED or full_res > tol:
                    res[row] = full_res
                else:
                    still.append(row)
        pending = np.array(still, dtype=np.int64)
        k *= 4
        radius[pending] = np.maximum(
            radius[pending] * 4.0 ** (1.0 / d), radius[pending] + np.log(4.0) / (d - 1)
        )
    offsets = np.zeros(nv + 1, np.int64)
    np.cumsum(degs, out=offsets[1:])
    targets = np.zeros(offsets[-1], np.int64)
    for row in range(nv):
        if lists[row] is not None:
            targets[offsets[row] : offsets[row + 1]] = lists[row]
    return _Sets(verts, closed, offsets, targets, res, prev)


@dataclass(frozen=True, eq=False)
class NNEGraph:
    """Outgoing neighbour lists of every vertex of a configuration.

    ``offsets``/``targets`` store the lists of closed vertices (CSR layout);
    unclosed vertices have empty slices there and report every other vertex
    from :meth:`out_neighbors`.
    """

    config: PointConfiguration
    closed: np.ndarray
    offsets: np.ndarray
    targets: np.ndarray
    residual: np.ndarray
    prev_residual: np.ndarray
    _cache: dict = field(default_factory=dict, repr=False)

    def __len__(self):
        return len(self.config)

    @property
    def space(self) -> Space:
        return self.config.space

    @property
    def outdegree(self) -> np.ndarray:
        deg = np.diff(self.offsets)
        return np.where(self.closed, deg, max(len(self) - 1, 0))

    def out_neighbors(self, i: int) -> np.ndarray:
        if self.closed[i]:
            return self.targets[self.offsets[i] : self.offsets[i + 1]]
        return np.array([j for j, _ in nearest_sorted(self.config, i)], dtype=np.int64)

    def closed_edges(self) -> tuple[np.ndarray, np.ndarray]:
        """Directed edges ``(src, dst)`` leaving closed vertices."""
        if "closed_edges" not in self._cache:
            src = np.repeat(np.arange(len(self)), np.diff(self.offsets))
            self._cache["closed_edges"] = (src, self.targets)
        return self._cache["closed_edges"]

    def adjacency(self, i: int) -> np.ndarray:
        """All neighbours of ``i``: its own out-list plus every vertex pointing at it."""
        if "adjacency" not in self._cache:
            src, dst = self.closed_edges()
            n = len(self)
            open_v = np.flatnonzero(~self.closed)
            if len(open_v):
                extra_src = np.repeat(open_v, n)
                extra_dst = np.tile(np.arange(n), len(open_v))
                keep = extra_src != extra_dst
                src = np.concatenate([src, extra_src[keep]])
                dst = np.concatenate([dst, extra_dst[keep]])
            a = np.concatenate([src, dst])
            b = np.concatenate([dst, src])
            key = np.unique(a * n + b)
            a, b = key // n, key % n
            starts = np.searchsorted(a, np.arange(n + 1))
            self._cache["adjacency"] = (starts, b)
        starts, b = self._cache["adjacency"]
        return b[starts[i] : starts[i + 1]]


def graph_from_lists(config: PointConfiguration, out_lists, closed=None) -> NNEGraph:
    """Assemble a graph from explicit outgoing lists (hand-built or parsed graphs)."""
    n = len(config)
    if closed is None:
        closed = [True] * n
    closed = np.asarray(closed, dtype=bool)
    degs = [len(out_lists[i]) if closed[i] else 0 for i in range(n)]
    offsets = np.zeros(n + 1, np.int64)
    np.cumsum(degs, out=offsets[1:])
    targets = np.zeros(offsets[-1], np.int64)
    for i in range(n):
        if closed[i]:
            targets[offsets[i] : offsets[i + 1]] = out_lists[i]
    nan = np.full(n, np.nan)
    return NNEGraph(config, closed, offsets, targets, nan, nan.copy())


def nearest_sorted(config: PointConfiguration, i: int) -> list[tuple[int, float]]:
    """All other vertices by increasing distance from vertex ``i`` (ties by index)."""
    n = len(config)
    others = np.array([j for j in range(n) if j != i], dtype=np.int64)
    if len(others) == 0:
        return []
    dist = distances_from(config.space, config.points[i], config.points[others])
    order = np.lexsort((others, dist))
    return [(int(others[j]), float(dist[j])) for j in order]


def build_nne(config: PointConfiguration, tol: float = DEFAULT_TOL) -> NNEGraph:
    sets = outgoing_sets(config, tol=tol)
    return NNEGraph(
        config, sets.closed, sets.offsets, sets.targets, sets.residual, sets.prev_residual
    )


@dataclass(frozen=True)
class Violation:
    vertex: int
    reason: str


@dataclass
class VerificationReport:
    violations: list[Violation]
    ambiguous: list[int]
    checked: int

    @property
    def ok(self) -> bool:
        return not self.violations


def _oracle(space: Space, vectors: np.ndarray, tol: float) -> bool:
    if space.dim <= 3:
        return exact_contains(vectors)
    return min_norm_point(vectors, tol / 100).contains(tol / 100)


def verify_graph(graph: NNEGraph, tol: float = DEFAULT_TOL) -> VerificationReport:
    """Re-check every closed vertex with an independent hull oracle.

    A closed vertex must lie in the hull of its outgoing set and outside the
    hull of that set minus its farthest member.  Vertices whose recorded
    residuals fall in ``[tol/2, 2 tol]`` are listed as ambiguous and skipped.
    """
    space = graph.space
    pts = graph.config.points
    d = space.dim
    violations: list[Violation] = []
    ambiguous: list[int] = []
    checked = 0
    for i in np.flatnonzero(graph.closed):
        i = int(i)
        band = [r for r in (graph.residual[i], graph.prev_residual[i]) if np.isfinite(r)]
        if any(tol / 2 <= r <= 2 * tol for r in band):
            ambiguous.append(i)
            continue
        nbrs = graph.out_neighbors(i)
        checked += 1
        if len(nbrs) < d + 1:
            violations.append(Violation(i, f"outdegree {len(nbrs)} below {d + 1}"))
            continue
        dist = distances_from(space, pts[i], pts[nbrs])
        if np.any(np.diff(dist) <= 0):
            violations.append(Violation(i, "out-neighbours not strictly increasing in distance"))
        vec = klein_coords(space, pts[i], pts[nbrs])
        if not _oracle(space, vec, tol):
            violations.append(Violation(i, "not inside the hull of its out-neighbours"))
        elif len(nbrs) > d + 1 and _oracle(space, vec[:-1], tol):
            violations.append(Violation(i, "hull already closed without the farthest neighbour"))
    return VerificationReport(violations, ambiguous, checked)


def format_graph(graph: NNEGraph) -> str:
    """Text form: header, the configuration, a blank line, then one record per vertex.

    Records are ``index 1 k j_1 ... j_k`` for closed vertices and
    ``index 0 *`` (all other vertices) for unclosed ones.
    """
    lines = ["nne-graph 1", format_configuration(graph.config).rstrip("\n"), ""]
    for i in range(len(graph)):
        if graph.closed[i]:
            nb = graph.out_neighbors(i)
            lines.append(" ".join([str(i), "1", str(len(nb))] + [str(j) for j in nb]))
        else:
            lines.append(f"{i} 0 *")
    return "\n".join(lines) + "\n"


def parse_graph(text: str) -> NNEGraph:
    lines = text.splitlines()
    if not lines or lines[0].split() != ["nne-graph", "1"]:
        raise ValueError("not an nne-graph file")
    blank = lines.index("", 1)
    config = parse_configuration(lines[1:blank])
    n = len(config)
    out_lists: list[list[int]] = [[] for _ in range(n)]
    closed = np.zeros(n, bool)
    seen = 0
    for line in lines[blank + 1 :]:
        if not line.strip():
            continue
        fields = line.split()
        i = int(fields[0])
        closed[i] = fields[1] == "1"
        if closed[i]:
            k = int(fields[2])
            out_lists[i] = [int(v) for v in fields[3 : 3 + k]]
        seen += 1
    if seen != n:
        raise ValueError(f"graph file lists {seen} vertices for {n} points")
    return graph_from_lists(config, out_lists, closed)


def write_graph(graph: NNEGraph, path: str | os.PathLike) -> None:
    with open(path, "w", encoding="ascii") as fh:
        fh.write(format_graph(graph))


def read_graph(path: str | os.PathLike) -> NNEGraph:
    with open(path, encoding="ascii") as fh:
        return parse_graph(fh.read())
