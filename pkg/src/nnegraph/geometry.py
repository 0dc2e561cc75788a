"""Euclidean and hyperbolic space primitives.

Hyperbolic points live on the upper sheet of the hyperboloid
``-x0^2 + x1^2 + ... + xd^2 = -1`` and carry ``d + 1`` coordinates;
Euclidean points carry ``d``.  Functions accept a single point (1-d array)
or a stack of points (2-d array, one point per row) wherever that is cheap.
"""
from __future__ import annotations

import enum
import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np

__all__ = [
    "Kind",
    "Space",
    "TangentVector",
    "GeometryConstants",
    "Isometry",
    "origin",
    "check_point",
    "minkowski_dot",
    "distance",
    "distances_from",
    "tangent_frame",
    "exp_map",
    "log_map",
    "ball_volume",
    "rho",
    "klein_coords",
    "poincare_coords",
    "compute_volume_constants",
    "volume_constants",
    "random_isometry",
    "apply_isometry",
    "boost",
]


class Kind(str, enum.Enum):
    EUCLIDEAN = "euclidean"
    HYPERBOLIC = "hyperbolic"


@dataclass(frozen=True)
class Space:
    kind: Kind
    dim: int

    def __post_init__(self):
        object.__setattr__(self, "kind", Kind(self.kind))
        if int(self.dim) != self.dim or self.dim < 2:
            raise ValueError(f"dimension must be an integer >= 2, got {self.dim}")
        object.__setattr__(self, "dim", int(self.dim))

    @classmethod
    def euclidean(cls, dim: int) -> "Space":
        return cls(Kind.EUCLIDEAN, dim)

    @classmethod
    def hyperbolic(cls, dim: int) -> "Space":
        return cls(Kind.HYPERBOLIC, dim)

    @property
    def hyperbolic_kind(self) -> bool:
        return self.kind is Kind.HYPERBOLIC

    @property
    def ambient_dim(self) -> int:
        """Number of stored coordinates per point."""
        return self.dim + 1 if self.hyperbolic_kind else self.dim

    def __str__(self):
        return f"{self.kind.value}{self.dim}"


@dataclass(frozen=True)
class TangentVector:
    """Tangent vector at ``base``, expressed in :func:`tangent_frame` coordinates."""

    base: np.ndarray
    vec: np.ndarray


@dataclass(frozen=True)
class GeometryConstants:
    kappa_d: float
    gamma_d: float = float("nan")
    Gamma_d: float = float("nan")


def unit_ball_volume(d: int) -> float:
    return math.pi ** (d / 2) / math.gamma(1 + d / 2)


def origin(space: Space) -> np.ndarray:
    p = np.zeros(space.ambient_dim)
    if space.hyperbolic_kind:
        p[0] = 1.0
    return p


def check_point(space: Space, pt, tol: float = 1e-9) -> np.ndarray:
    """Return ``pt`` as a float array, raising ``ValueError`` if it is not a valid point."""
    x = np.asarray(pt, dtype=float)
    if x.shape[-1] != space.ambient_dim:
        raise ValueError(
            f"{space} points need {space.ambient_dim} coordinates, got {x.shape[-1]}"
        )
    if not np.all(np.isfinite(x)):
        raise ValueError("point coordinates must be finite")
    if space.hyperbolic_kind:
        norm = minkowski_dot(x, x)
        # drift grows with the coordinate magnitude, so compare relatively
        scale = np.maximum(1.0, x[..., 0] ** 2)
        if np.any(np.abs(norm + 1.0) > tol * scale) or np.any(x[..., 0] < 1.0 - tol):
            raise ValueError("point is not on the upper sheet of the hyperboloid")
    return x


def minkowski_dot(a, b) -> np.ndarray:
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    return np.sum(a[..., 1:] * b[..., 1:], axis=-1) - a[..., 0] * b[..., 0]


def _renormalize(x: np.ndarray) -> np.ndarray:
    """Project onto the hyperboloid by recomputing the time coordinate."""
    x = np.array(x, dtype=float)
    x[..., 0] = np.sqrt(1.0 + np.sum(x[..., 1:] ** 2, axis=-1))
    return x


def _hyperbolic_distance(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    # <a-b, a-b>_L = 4 sinh^2(d/2); better conditioned than arccosh(-<a,b>)
    # for nearby points far from the origin
    diff = a - b
    q = np.sum(diff[..., 1:] ** 2, axis=-1) - diff[..., 0] ** 2
    return 2.0 * np.arcsinh(0.5 * np.sqrt(np.maximum(q, 0.0)))


def distance(space: Space, a, b) -> float:
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if a.shape[-1] != space.ambient_dim or b.shape[-1] != space.ambient_dim:
        raise ValueError(
            f"dimension mismatch: {space} expects {space.ambient_dim} coordinates"
        )
    if space.hyperbolic_kind:
        out = _hyperbolic_distance(a, b)
    else:
        out = np.sqrt(np.sum((a - b) ** 2, axis=-1))
    return float(out) if np.ndim(out) == 0 else out


def distances_from(space: Space, a, pts) -> np.ndarray:
    """Distances from the point ``a`` to every row of ``pts``."""
    pts = np.asarray(pts, dtype=float).reshape(-1, space.ambient_dim)
    return np.atleast_1d(distance(space, np.asarray(a, dtype=float)[None, :], pts))


def tangent_frame(space: Space, base) -> np.ndarray:
    """Orthonormal basis of the tangent space at ``base``, one vector per row.

    Euclidean: the ambient standard basis.  Hyperbolic: Gram-Schmidt (in the
    Minkowski inner product) of the projected coordinate axes ``e_1..e_d``;
    at the origin this is again the standard basis.
    """
    d = space.dim
    if not space.hyperbolic_kind:
        return np.eye(d)
    b = np.asarray(base, dtype=float)
    frame = []
    for i in range(1, d + 1):
        v = np.zeros(d + 1)
        v[i] = 1.0
        v = v + minkowski_dot(v, b) * b
        for f in frame:
            v = v - minkowski_dot(v, f) * f
        v = v / math.sqrt(minkowski_dot(v, v))
        frame.append(v)
    return np.array(frame)


def exp_map(space: Space, v: TangentVector) -> np.ndarray:
    base = np.asarray(v.base, dtype=float)
    vec = np.asarray(v.vec, dtype=float)
    if vec.shape != (space.dim,) or not np.all(np.isfinite(vec)):
        raise ValueError(f"tangent vector must be {space.dim} finite numbers")
    if not space.hyperbolic_kind:
        return base + vec
    norm = float(np.linalg.norm(vec))
    if norm == 0.0:
        return base.copy()
    direction = (vec / norm) @ tangent_frame(space, base)
    return _renormalize(math.cosh(norm) * base + math.sinh(norm) * direction)


def log_map(space: Space, base, q) -> TangentVector:
    """Inverse of :func:`exp_map`: the tangent vector at ``base`` pointing to ``q``."""
    base = np.asarray(base, dtype=float)
    q = np.asarray(q, dtype=float)
    if not space.hyperbolic_kind:
        return TangentVector(base, q - base)
    r = distance(space, base, q)
    if r == 0.0:
        return TangentVector(base, np.zeros(space.dim))
    u = q + minkowski_dot(base, q) * base
    u = u / math.sqrt(max(minkowski_dot(u, u), 1e-300))
    frame = tangent_frame(space, base)
    coords = np.array([minkowski_dot(u, f) for f in frame])
    return TangentVector(base, r * coords)


def _adaptive_simpson(f, a: float, b: float, rtol: float) -> float:
    def simpson(fa, fm, fb, h):
        return h * (fa + 4.0 * fm + fb) / 6.0

    fa, fb, fm = f(a), f(b), f(0.5 * (a + b))
    whole = simpson(fa, fm, fb, b - a)
    total = 0.0
    stack = [(a, b, fa, fm, fb, whole, 0)]
    # absolute target from a coarse estimate; integrand is positive
    atol = max(rtol * abs(whole), 1e-300)
    while stack:
        lo, hi, flo, fmid, fhi, est, depth = stack.pop()
        mid = 0.5 * (lo + hi)
        lm, rm = 0.5 * (lo + mid), 0.5 * (mid + hi)
        flm, frm = f(lm), f(rm)
        left = simpson(flo, flm, fmid, mid - lo)
        right = simpson(fmid, frm, fhi, hi - mid)
        width_share = (hi - lo) / (b - a)
        if depth > 50 or abs(left + right - est) <= 15.0 * atol * width_share:
            total += left + right + (left + right - est) / 15.0
        else:
            stack.append((lo, mid, flo, flm, fmid, left, depth + 1))
            stack.append((mid, hi, fmid, frm, fhi, right, depth + 1))
    return total


def ball_volume(space: Space, r: float) -> float:
    if r < 0:
        raise ValueError(f"radius must be non-negative, got {r}")
    d = space.dim
    kappa = unit_ball_volume(d)
    if not space.hyperbolic_kind:
        return kappa * r**d
    if d == 2:
        # 2 pi (cosh r - 1), written to avoid cancellation at small r
        return 4.0 * math.pi * math.sinh(0.5 * r) ** 2
    if d == 3:
        if r < 1e-3:
            return 4.0 * math.pi / 3.0 * r**3 * (1.0 + 0.2 * r * r)
        return math.pi * (math.sinh(2.0 * r) - 2.0 * r)
    if r == 0:
        return 0.0
    return d * kappa * _adaptive_simpson(lambda u: math.sinh(u) ** (d - 1), 0.0, r, 1e-10)


def ball_volumes(space: Space, r) -> np.ndarray:
    """Vectorised :func:`ball_volume` for Euclidean space and hyperbolic d <= 3."""
    r = np.asarray(r, dtype=float)
    d = space.dim
    if not space.hyperbolic_kind:
        return unit_ball_volume(d) * r**d
    if d == 2:
        return 4.0 * np.pi * np.sinh(0.5 * r) ** 2
    if d == 3:
        small = r < 1e-3
        big = np.pi * (np.sinh(2.0 * r) - 2.0 * r)
        return np.where(small, 4.0 * np.pi / 3.0 * r**3 * (1.0 + 0.2 * r * r), big)
    return np.array([ball_volume(space, float(v)) for v in r.ravel()]).reshape(r.shape)


def compute_volume_constants(space: Space, r_max: float = 20.0) -> GeometryConstants:
    """Bounds ``gamma_d <= vol(B_r) e^{-r(d-1)} <= Gamma_d`` over ``r in [2, r_max]``."""
    d = space.dim
    kappa = unit_ball_volume(d)
    if not space.hyperbolic_kind:
        return GeometryConstants(kappa_d=kappa)
    if r_max < 4:
        raise ValueError("r_max must be at least 4")
    n_steps = int(math.ceil((r_max - 2.0) / 0.01))
    grid = np.linspace(2.0, r_max, n_steps + 1)
    if d <= 3:
        vols = ball_volumes(space, grid)
    else:
        # integrate interval by interval and accumulate
        f = lambda u: math.sinh(u) ** (d - 1)  # noqa: E731
        vols = np.empty_like(grid)
        vols[0] = ball_volume(space, grid[0])
        for i in range(1, len(grid)):
            vols[i] = vols[i - 1] + d * kappa * _adaptive_simpson(
                f, grid[i - 1], grid[i], 1e-12
            )
    ratios = vols * np.exp(-grid * (d - 1))
    limit = d * kappa / (2 ** (d - 1) * (d - 1))
    candidates = np.append(ratios, limit)
    return GeometryConstants(
        kappa_d=kappa, gamma_d=float(candidates.min()), Gamma_d=float(candidates.max())
    )


@lru_cache(maxsize=None)
def volume_constants(space: Space) -> GeometryConstants:
    """Cached :func:`compute_volume_constants` with the default range."""
    return compute_volume_constants(space)


def rho(space: Space, r: float, constants: GeometryConstants | None = None) -> float:
    """Volume proxy used in the stabilization tail bounds."""
    if not space.hyperbolic_kind:
        return unit_ball_volume(space.dim) * r**space.dim
    if r < 2:
        return 0.0
    if constants is None:
        constants = volume_constants(space)
    return constants.gamma_d * math.exp(r * (space.dim - 1))


def boost_to_origin(center: np.ndarray) -> np.ndarray:
    """Lorentz boost (no rotation) mapping ``center`` to the hyperboloid origin."""
    c0 = center[0]
    cs = center[1:]
    n = len(center)
    L = np.empty((n, n))
    L[0, 0] = c0
    L[0, 1:] = -cs
    L[1:, 0] = -cs
    L[1:, 1:] = np.eye(n - 1) + np.outer(cs, cs) / (1.0 + c0)
    return L


def klein_coords(space: Space, center, q) -> np.ndarray:
    """Beltrami-Klein chart coordinates of ``q`` (one point or a stack) centred at ``center``.

    Convex hulls in the hyperbolic space map to Euclidean convex hulls of the
    chart images.  Euclidean space uses the translation ``q - center``.
    """
    center = np.asarray(center, dtype=float)
    q = np.asarray(q, dtype=float)
    if not space.hyperbolic_kind:
        return q - center
    # boost the difference q - center; the time component of the image is
    # 1 + <delta, delta>_L / 2, which avoids cancellation for nearby points
    delta = q - center
    L = boost_to_origin(center)
    spatial = delta @ L[1:].T
    sq = np.sum(delta[..., 1:] ** 2, axis=-1) - delta[..., 0] ** 2
    return spatial / (1.0 + 0.5 * sq)[..., None]


def poincare_coords(space: Space, pts) -> np.ndarray:
    """Poincare ball coordinates ``x_i / (1 + x_0)`` of hyperboloid points."""
    if not space.hyperbolic_kind:
        raise ValueError("Poincare coordinates are only defined for hyperbolic space")
    pts = np.asarray(pts, dtype=float)
    return pts[..., 1:] / (1.0 + pts[..., :1])


@dataclass(frozen=True)
class Isometry:
    """``x -> matrix @ x + shift`` (shift is zero for hyperbolic isometries)."""

    space: Space
    matrix: np.ndarray
    shift: np.ndarray

    @classmethod
    def identity(cls, space: Space) -> "Isometry":
        n = space.ambient_dim
        return cls(space, np.eye(n), np.zeros(n))

    def __call__(self, pts) -> np.ndarray:
        return apply_isometry(self, pts)

    def compose(self, other: "Isometry") -> "Isometry":
        """``self`` after ``other``."""
        return Isometry(
            self.space, self.matrix @ other.matrix, self.matrix @ other.shift + self.shift
        )


def boost(space: Space, axis: int, dist: float) -> Isometry:
    """Hyperbolic translation by ``dist`` along coordinate axis ``axis`` (1-based)."""
    n = space.ambient_dim
    L = np.eye(n)
    ch, sh = math.cosh(dist), math.sinh(dist)
    L[0, 0] = L[axis, axis] = ch
    L[0, axis] = L[axis, 0] = sh
    return Isometry(space, L, np.zeros(n))


def _random_rotation(d: int, rng) -> np.ndarray:
    q, r = np.linalg.qr(rng.standard_normal((d, d)))
    return q * np.sign(np.diag(r))


def random_isometry(space: Space, rng, max_shift: float = 2.0) -> Isometry:
    """Random rotation about the origin followed by a translation of length <= ``max_shift``.

    ``rng`` is anything exposing ``standard_normal`` and ``uniform`` (a
    :class:`~nnegraph.sampling.RandomStream` or a numpy ``Generator``).
    """
    d = space.dim
    rot = _random_rotation(d, rng)
    if not space.hyperbolic_kind:
        shift = rng.uniform(-max_shift, max_shift, size=d)
        return Isometry(space, rot, shift)
    R = np.eye(d + 1)
    R[1:, 1:] = rot
    direction = _random_rotation(d, rng)[0]
    dist = rng.uniform(0.0, max_shift)
    # boost along `direction`: conjugate the axis-1 boost by a rotation taking e1 there
    to_dir = np.eye(d + 1)
    basis = np.linalg.qr(np.column_stack([direction, rng.standard_normal((d, d - 1))]))[0]
    basis[:, 0] *= np.sign(basis[:, 0] @ direction)
    to_dir[1:, 1:] = basis
    B = to_dir @ boost(space, 1, dist).matrix @ to_dir.T
    return Isometry(space, B @ R, np.zeros(d + 1))


def apply_isometry(iso: Isometry, pts) -> np.ndarray:
    pts = np.asarray(pts, dtype=float)
    out = pts @ iso.matrix.T + iso.shift
    if iso.space.hyperbolic_kind:
        out = _renormalize(out)
    return out
