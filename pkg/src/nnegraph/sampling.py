"""Poisson point processes with unit intensity on balls around the origin."""
from __future__ import annotations

import math
import os
from dataclasses import dataclass, field, replace

import numpy as np

from .geometry import (
    Space,
    ball_volume,
    ball_volumes,
    check_point,
    distances_from,
    origin,
)

__all__ = [
    "RandomStream",
    "PointConfiguration",
    "sample_poisson_ball",
    "uniform_in_ball",
    "radial_inverse_cdf",
    "restrict",
    "with_points",
    "write_configuration",
    "read_configuration",
    "format_configuration",
    "parse_configuration",
]

_MASK64 = (1 << 64) - 1


class RandomStream:
    """Counter-based random stream keyed by ``(seed, stream_id)``.

    Backed by Philox with the two 64-bit words as the key, so stream
    ``stream_id`` of a campaign is reproducible no matter which worker
    draws it.  Generator methods (``normal``, ``poisson``, ...) are forwarded.
    """

    def __init__(self, seed: int, stream_id: int = 0):
        self.seed = int(seed) & _MASK64
        self.stream_id = int(stream_id) & _MASK64
        bitgen = np.random.Philox(key=np.array([self.seed, self.stream_id], dtype=np.uint64))
        self.generator = np.random.Generator(bitgen)

    def __getattr__(self, name):
        return getattr(self.generator, name)

    def __repr__(self):
        return f"RandomStream(seed={self.seed}, stream_id={self.stream_id})"


@dataclass(frozen=True, eq=False)
class PointConfiguration:
    space: Space
    points: np.ndarray
    sample_radius: float
    window_radius: float
    seed: int | None = None
    stream: int | None = None
    _norms: np.ndarray | None = field(default=None, repr=False, compare=False)

    def __post_init__(self):
        pts = np.array(self.points, dtype=float).reshape(-1, self.space.ambient_dim)
        pts.flags.writeable = False
        object.__setattr__(self, "points", pts)
        if self.window_radius > self.sample_radius:
            raise ValueError("window radius exceeds sample radius")

    def __len__(self):
        return len(self.points)

    @property
    def norms(self) -> np.ndarray:
        """Distances of all points from the origin."""
        if self._norms is None:
            norms = distances_from(self.space, origin(self.space), self.points)
            norms.flags.writeable = False
            object.__setattr__(self, "_norms", norms)
        return self._norms

    def validate(self, tol: float = 1e-9) -> None:
        check_point(self.space, self.points)
        if len(self) and np.any(self.norms > self.sample_radius + tol):
            raise ValueError("configuration has points outside its sampling ball")


def _radial_quantiles(space: Space, R: float, u: np.ndarray) -> np.ndarray:
    d = space.dim
    if not space.hyperbolic_kind:
        return R * u ** (1.0 / d)
    if d == 2:
        # arccosh(1 + u (cosh R - 1)), via cosh r - 1 = 2 sinh^2(r/2)
        return 2.0 * np.arcsinh(np.sqrt(u) * math.sinh(0.5 * R))
    target = u * ball_volume(space, R)
    lo = np.zeros_like(u)
    hi = np.full_like(u, R)
    for _ in range(64):
        mid = 0.5 * (lo + hi)
        below = ball_volumes(space, mid) < target
        lo = np.where(below, mid, lo)
        hi = np.where(below, hi, mid)
    return 0.5 * (lo + hi)


def radial_inverse_cdf(space: Space, R: float, u: float) -> float:
    """Radius ``r`` with ``vol(B_r) = u vol(B_R)``."""
    if not 0.0 <= u <= 1.0:
        raise ValueError(f"u must lie in [0, 1], got {u}")
    if u == 0.0:
        return 0.0
    if u == 1.0:
        return float(R)
    if not space.hyperbolic_kind or space.dim <= 3:
        return float(_radial_quantiles(space, R, np.array([u]))[0])
    target = u * ball_volume(space, R)
    lo, hi = 0.0, float(R)
    while hi - lo > 1e-12:
        mid = 0.5 * (lo + hi)
        if ball_volume(space, mid) < target:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


def _hyperbolic_radii_rejection(space: Space, R: float, n: int, rng) -> np.ndarray:
    # proposal density ~ e^{(d-1)u} on [0, R]; acceptance (1 - e^{-2u})^{d-1}
    k = space.dim - 1
    out = np.empty(0)
    while len(out) < n:
        m = max(2 * (n - len(out)), 16)
        v = rng.uniform(size=m)
        u = np.log1p(v * math.expm1(k * R)) / k
        keep = rng.uniform(size=m) < (-np.expm1(-2.0 * u)) ** k
        out = np.concatenate([out, u[keep]])
    return out[:n]


def uniform_in_ball(space: Space, R: float, n: int, rng) -> np.ndarray:
    """``n`` independent points distributed by volume on ``B(p, R)``."""
    d = space.dim
    dirs = rng.standard_normal((n, d))
    dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
    if space.hyperbolic_kind and d > 3:
        radii = _hyperbolic_radii_rejection(space, R, n, rng)
    else:
        radii = _radial_quantiles(space, R, rng.uniform(size=n))
    if not space.hyperbolic_kind:
        return radii[:, None] * dirs
    pts = np.empty((n, d + 1))
    pts[:, 0] = np.cosh(radii)
    pts[:, 1:] = np.sinh(radii)[:, None] * dirs
    return pts


def sample_poisson_ball(space: Space, R: float, rng: RandomStream) -> PointConfiguration:
    """Poisson process with intensity equal to volume, restricted to ``B(p, R)``."""
    if not R > 0:
        raise ValueError(f"sampling radius must be positive, got {R}")
    n = int(rng.poisson(ball_volume(space, R)))
    return PointConfiguration(
        space,
        uniform_in_ball(space, R, n, rng),
        float(R),
        float(R),
        seed=getattr(rng, "seed", None),
        stream=getattr(rng, "stream_id", None),
    )


def restrict(config: PointConfiguration, r: float) -> PointConfiguration:
    """Keep the points within distance ``r`` of the origin."""
    if r > config.sample_radius:
        raise ValueError(
            f"cannot restrict to radius {r} beyond the sampling radius {config.sample_radius}"
        )
    if not r > 0:
        raise ValueError("restriction radius must be positive")
    keep = config.norms <= r
    return replace(
        config,
        points=config.points[keep],
        sample_radius=float(r),
        window_radius=min(config.window_radius, float(r)),
        _norms=None,
    )


def with_points(config: PointConfiguration, extra) -> PointConfiguration:
    """Configuration with ``extra`` points appended (indices ``len(config)`` onwards)."""
    extra = np.asarray(extra, dtype=float).reshape(-1, config.space.ambient_dim)
    return replace(config, points=np.vstack([config.points, extra]), _norms=None)


def _fmt(v: float) -> str:
    return format(float(v), ".17g")


def format_configuration(config: PointConfiguration) -> str:
    seed = "none" if config.seed is None else str(config.seed)
    stream = "none" if config.stream is None else str(config.stream)
    lines = [
        " ".join(
            [
                config.space.kind.value,
                str(config.space.dim),
                _fmt(config.sample_radius),
                _fmt(config.window_radius),
                seed,
                stream,
            ]
        )
    ]
    lines.extend(" ".join(_fmt(c) for c in row) for row in config.points)
    return "\n".join(lines) + "\n"


def parse_configuration(lines) -> PointConfiguration:
    """Parse an iterable of lines in the text format of :func:`format_configuration`."""
    it = iter(lines)
    header = next(it).split()
    if len(header) != 6:
        raise ValueError("configuration header needs 6 fields")
    kind, dim, sample_radius, window_radius, seed, stream = header
    space = Space(kind, int(dim))
    rows = []
    for line in it:
        if not line.strip():
            break
        rows.append([float(v) for v in line.split()])
    pts = np.array(rows, dtype=float).reshape(-1, space.ambient_dim)
    return PointConfiguration(
        space,
        pts,
        float(sample_radius),
        float(window_radius),
        seed=None if seed == "none" else int(seed),
        stream=None if stream == "none" else int(stream),
    )


def write_configuration(config: PointConfiguration, path: str | os.PathLike) -> None:
    with open(path, "w", encoding="ascii") as fh:
        fh.write(format_configuration(config))


def read_configuration(path: str | os.PathLike) -> PointConfiguration:
    with open(path, encoding="ascii") as fh:
        return parse_configuration(fh.read().splitlines())
