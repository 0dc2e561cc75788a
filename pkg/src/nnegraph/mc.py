"""Monte Carlo campaigns over the window radius and normality diagnostics.

A campaign samples one configuration per replication on ``B_{t_max + buffer}``
(stream ``r`` of the base seed), builds the graph once and evaluates every
grid cell on it.  Rows are collected in stream order, so results do not
depend on how replications were scheduled across worker processes.
"""
from __future__ import annotations

import csv
import io
import json
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from scipy import special, stats

from .functionals import FunctionalSpec, UnclosedVertexError, evaluate, stabilization_radius
from .geometry import Space, ball_volume, distances_from, origin, rho
from .hull import HullFailure
from .nne import build_nne
from .sampling import RandomStream, sample_poisson_ball, uniform_in_ball

__all__ = [
    "CampaignError",
    "ExperimentPlan",
    "CellStats",
    "ExperimentResult",
    "parse_plan",
    "load_plan",
    "run_replication",
    "run_campaign",
    "standardize",
    "ks_distance_to_normal",
    "wasserstein_distance_to_normal",
    "VarianceReport",
    "variance_scaling_report",
    "RateSummary",
    "rate_check",
    "StabilizationSample",
    "sample_stabilization_radii",
    "TailSummary",
    "tail_check",
]

DEFAULT_BUFFER = {"euclidean": 4.0, "hyperbolic": 3.0}


class CampaignError(RuntimeError):
    """A replication could not be evaluated (unclosed window vertex or hull failure)."""

    def __init__(self, stream: int, vertex: int | None, reason: str):
        super().__init__(f"replication {stream}: {reason}")
        self.stream = stream
        self.vertex = vertex


@dataclass(frozen=True)
class ExperimentPlan:
    space: Space
    t_values: tuple[float, ...]
    alphas: tuple[float, ...] = ()
    ks: tuple[int, ...] = ()
    buffer: float | None = None
    replications: int = 100
    seed: int = 0
    threads: int = 1

    def __post_init__(self):
        object.__setattr__(self, "t_values", tuple(float(t) for t in self.t_values))
        object.__setattr__(self, "alphas", tuple(float(a) for a in self.alphas))
        object.__setattr__(self, "ks", tuple(int(k) for k in self.ks))
        if self.buffer is None:
            object.__setattr__(self, "buffer", DEFAULT_BUFFER[self.space.kind.value])
        if self.replications < 2:
            raise ValueError("a campaign needs at least 2 replications")
        if not self.t_values or not (self.alphas or self.ks):
            raise ValueError("the (t, functional) grid is empty")
        if self.buffer < 0:
            raise ValueError("buffer must be non-negative")
        if self.threads < 1:
            raise ValueError("threads must be at least 1")
        for spec in self.specs:
            spec.check(self.space)

    @property
    def sample_radius(self) -> float:
        return max(self.t_values) + self.buffer

    @property
    def specs(self) -> list[FunctionalSpec]:
        """Grid cells, ordered by functional then window radius."""
        cells = [FunctionalSpec.length_power(a, t) for a in self.alphas for t in self.t_values]
        cells += [FunctionalSpec.outdegree_count(k, t) for k in self.ks for t in self.t_values]
        return cells

    def to_dict(self) -> dict:
        return {
            "space": self.space.kind.value,
            "dim": self.space.dim,
            "t": list(self.t_values),
            "alpha": list(self.alphas),
            "k": list(self.ks),
            "buffer": self.buffer,
            "replications": self.replications,
            "seed": self.seed,
        }


_PLAN_KEYS = {"space", "dim", "t", "alpha", "k", "buffer", "replications", "seed", "threads"}


def _plan_fields(text: str) -> dict:
    out = {}
    for n, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"line {n}: expected 'key = value'")
        key, value = (s.strip() for s in line.split("=", 1))
        if key not in _PLAN_KEYS:
            raise ValueError(f"line {n}: unknown key {key!r}")
        out[key] = value
    return out


def _numbers(value, cast):
    if isinstance(value, (list, tuple)):
        return tuple(cast(v) for v in value)
    return tuple(cast(v) for v in str(value).replace(",", " ").split())


def parse_plan(text: str, overrides: dict | None = None) -> ExperimentPlan:
    """Plan from flat ``key = value`` text (``#`` comments); ``overrides`` win over the file."""
    fields = _plan_fields(text)
    for key, value in (overrides or {}).items():
        if key not in _PLAN_KEYS:
            raise ValueError(f"unknown key {key!r}")
        if value is not None:
            fields[key] = value
    if "space" not in fields or "t" not in fields:
        raise ValueError("a plan needs at least 'space' and 't'")
    space = Space(str(fields["space"]), int(fields.get("dim", 2)))
    return ExperimentPlan(
        space=space,
        t_values=_numbers(fields["t"], float),
        alphas=_numbers(fields.get("alpha", ""), float),
        ks=_numbers(fields.get("k", ""), int),
        buffer=float(fields["buffer"]) if "buffer" in fields else None,
        replications=int(fields.get("replications", 100)),
        seed=int(fields.get("seed", 0)),
        threads=int(fields.get("threads", 1)),
    )


def load_plan(path: str | os.PathLike, overrides: dict | None = None) -> ExperimentPlan:
    with open(path, encoding="utf-8") as fh:
        return parse_plan(fh.read(), overrides)


def run_replication(plan: ExperimentPlan, stream: int) -> list[float]:
    """Functional values of one replication, in the order of ``plan.specs``."""
    rng = RandomStream(plan.seed, stream)
    config = sample_poisson_ball(plan.space, plan.sample_radius, rng)
    try:
        graph = build_nne(config)
        return [evaluate(graph, spec, strict=True, stream=stream) for spec in plan.specs]
    except UnclosedVertexError as exc:
        raise CampaignError(
            stream, exc.vertex, f"vertex {exc.vertex} inside the window has no closed hull"
        ) from None
    except HullFailure as exc:
        raise CampaignError(stream, exc.vertex, str(exc)) from None


def _replication_block(args) -> list[list[float]]:
    plan, streams = args
    return [run_replication(plan, s) for s in streams]


# -- normality distances ---------------------------------------------------------


def standardize(samples) -> np.ndarray:
    """Subtract the sample mean and divide by the unbiased standard deviation."""
    x = np.asarray(samples, dtype=float)
    if len(x) < 2:
        raise ValueError("standardizing needs at least 2 samples")
    sd = np.std(x, ddof=1)
    if not sd > 0:
        raise ValueError("degenerate sample: zero variance")
    return (x - x.mean()) / sd


def ks_distance_to_normal(samples) -> float:
    """Kolmogorov distance between the empirical CDF and the standard normal CDF."""
    x = np.sort(np.asarray(samples, dtype=float))
    n = len(x)
    if n == 0:
        raise ValueError("need at least one sample")
    cdf = special.ndtr(x)
    i = np.arange(1, n + 1)
    return float(max(np.max(i / n - cdf), np.max(cdf - (i - 1) / n)))


def _phi_integral(x):
    """Antiderivative of the standard normal CDF: ``x Phi(x) + phi(x)``."""
    return x * special.ndtr(x) + np.exp(-0.5 * x * x) / math.sqrt(2.0 * math.pi)


def wasserstein_distance_to_normal(samples) -> float:
    """L1 distance between the empirical CDF and the standard normal CDF.

    Exact up to rounding: on each gap between consecutive order statistics
    the empirical CDF is a constant ``c`` and ``Phi`` crosses it at most once
    (at ``Phi^{-1}(c)``); the two outer pieces are Gaussian tail integrals.
    """
    x = np.sort(np.asarray(samples, dtype=float))
    n = len(x)
    if n == 0:
        raise ValueError("need at least one sample")
    pdf = lambda v: math.exp(-0.5 * v * v) / math.sqrt(2.0 * math.pi)  # noqa: E731
    left = float(x[0] * special.ndtr(x[0]) + pdf(x[0]))
    right = float(pdf(x[-1]) - x[-1] * special.ndtr(-x[-1]))
    if n == 1:
        return left + right
    a, b = x[:-1], x[1:]
    c = np.arange(1, n) / n
    q = np.clip(special.ndtri(c), a, b)
    Ga, Gb, Gq = _phi_integral(a), _phi_integral(b), _phi_integral(q)
    below = c * (q - a) - (Gq - Ga)
    above = (Gb - Gq) - c * (b - q)
    return left + right + math.fsum(below) + math.fsum(above)


# -- campaign results ---------------------------------------------------------------


@dataclass(frozen=True)
class CellStats:
    mean: float
    variance: float
    ks: float
    wasserstein: float
    vol_bt: float


@dataclass(frozen=True)
class ExperimentResult:
    plan: ExperimentPlan
    values: np.ndarray  # replications x cells
    stats: tuple[CellStats, ...] = field(default=())

    @property
    def specs(self) -> list[FunctionalSpec]:
        return self.plan.specs

    def samples(self, spec: FunctionalSpec) -> np.ndarray:
        return self.values[:, self.specs.index(spec)]

    def cells(self, kind: str, param) -> list[tuple[FunctionalSpec, CellStats]]:
        """Cells of one functional, in increasing ``t``."""
        out = [
            (s, st) for s, st in zip(self.specs, self.stats) if s.kind == kind and s.param == param
        ]
        return sorted(out, key=lambda p: p[0].t)

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["seed", "stream", "t", "kind", "param", "value"])
        for r in range(self.values.shape[0]):
            for j, spec in enumerate(self.specs):
                param = spec.k if spec.kind == "outdegree_count" else format(spec.param, ".17g")
                w.writerow(
                    [
                        self.plan.seed,
                        r,
                        format(spec.t, ".17g"),
                        spec.kind,
                        param,
                        format(float(self.values[r, j]), ".17g"),
                    ]
                )
        return buf.getvalue()

    def summary(self) -> dict:
        cells = []
        for spec, st in zip(self.specs, self.stats):
            cells.append(
                {
                    "kind": spec.kind,
                    "param": spec.k if spec.kind == "outdegree_count" else spec.param,
                    "t": spec.t,
                    "mean": st.mean,
                    "variance": st.variance,
                    "ks": st.ks,
                    "wasserstein": st.wasserstein,
                    "vol_bt": st.vol_bt,
                }
            )
        functionals = []
        groups = [("length_power", a) for a in self.plan.alphas]
        groups += [("outdegree_count", k) for k in self.plan.ks]
        for kind, param in groups:
            entry = {"kind": kind, "param": param}
            if len(self.plan.t_values) >= 2:
                entry["variance_scaling"] = variance_scaling_report(self, kind, param).to_dict()
            if len(self.plan.t_values) >= 3:
                cells_ = self.cells(kind, param)
                rc = rate_check(
                    self.plan.space, [s.t for s, _ in cells_], [st.ks for _, st in cells_]
                )
                entry["ks_rate"] = rc.to_dict()
            functionals.append(entry)
        return {"plan": self.plan.to_dict(), "cells": cells, "functionals": functionals}


def _cell_stats(space: Space, spec: FunctionalSpec, v: np.ndarray) -> CellStats:
    var = float(np.var(v, ddof=1))
    if var > 0:
        z = standardize(v)
        ks, w = ks_distance_to_normal(z), wasserstein_distance_to_normal(z)
    else:
        ks = w = float("nan")
    return CellStats(float(np.mean(v)), var, ks, w, ball_volume(space, spec.t))


def result_from_values(plan: ExperimentPlan, values) -> ExperimentResult:
    values = np.asarray(values, dtype=float).reshape(plan.replications, len(plan.specs))
    stats_ = tuple(_cell_stats(plan.space, s, values[:, j]) for j, s in enumerate(plan.specs))
    return ExperimentResult(plan, values, stats_)


def run_campaign(plan: ExperimentPlan, threads: int | None = None) -> ExperimentResult:
    threads = plan.threads if threads is None else threads
    streams = list(range(plan.replications))
    if threads <= 1:
        rows = [run_replication(plan, s) for s in streams]
    else:
        # contiguous blocks keep per-task overhead low; order is restored by position
        size = max(1, math.ceil(len(streams) / (4 * threads)))
        blocks = [(plan, streams[i : i + size]) for i in range(0, len(streams), size)]
        with ProcessPoolExecutor(max_workers=threads) as pool:
            rows = [row for block in pool.map(_replication_block, blocks) for row in block]
    return result_from_values(plan, rows)


def write_results(result: ExperimentResult, csv_path, json_path) -> None:
    with open(csv_path, "w", encoding="ascii", newline="") as fh:
        fh.write(result.to_csv())
    with open(json_path, "w", encoding="ascii") as fh:
        json.dump(result.summary(), fh, indent=2, sort_keys=True)
        fh.write("\n")


# -- scaling diagnostics ------------------------------------------------------------


@dataclass(frozen=True)
class VarianceReport:
    rows: tuple[tuple[float, float, float, float], ...]  # (t, vol_bt, variance, ratio)
    min_ratio: float
    spread: float

    def to_dict(self) -> dict:
        return {
            "rows": [dict(zip(("t", "vol_bt", "variance", "ratio"), r)) for r in self.rows],
            "min_ratio": self.min_ratio,
            "spread": self.spread,
        }


def variance_ratios(space: Space, ts, variances) -> VarianceReport:
    if len(ts) < 2:
        raise ValueError("variance scaling needs at least two window radii")
    rows = []
    for t, v in zip(ts, variances):
        vol = ball_volume(space, t)
        rows.append((float(t), vol, float(v), float(v) / vol))
    ratios = [r[3] for r in rows]
    lo = min(ratios)
    return VarianceReport(tuple(rows), lo, max(ratios) / lo if lo > 0 else float("inf"))


def variance_scaling_report(
    result: ExperimentResult, kind: str, param, t_values=None
) -> VarianceReport:
    """Variance over window volume per ``t`` for one functional of a campaign."""
    cells = result.cells(kind, param)
    if t_values is not None:
        cells = [c for c in cells if c[0].t in set(t_values)]
    return variance_ratios(
        result.plan.space, [s.t for s, _ in cells], [st.variance for _, st in cells]
    )


@dataclass(frozen=True)
class RateSummary:
    slope: float
    stderr: float
    ci: tuple[float, float]
    scaled: tuple[float, ...]  # distance * sqrt(vol_bt) per t
    scaled_spread: float

    def to_dict(self) -> dict:
        return {
            "slope": self.slope,
            "stderr": self.stderr,
            "ci95": list(self.ci),
            "scaled": list(self.scaled),
            "scaled_spread": self.scaled_spread,
        }


def rate_check(space: Space, ts, distances) -> RateSummary:
    """Regress ``log(distance)`` on ``log(vol(B_t))``; a ``1/sqrt(vol)`` rate has slope -1/2."""
    if len(ts) < 3:
        raise ValueError("rate check needs at least three window radii")
    vol = np.array([ball_volume(space, t) for t in ts])
    dist = np.asarray(distances, dtype=float)
    lx, ly = np.log(vol), np.log(dist)
    fit = stats.linregress(lx, ly)
    dof = len(ts) - 2
    half = stats.t.ppf(0.975, dof) * fit.stderr if dof > 0 else float("inf")
    scaled = dist * np.sqrt(vol)
    spread = float(scaled.max() / scaled.min()) if scaled.min() > 0 else float("inf")
    return RateSummary(
        float(fit.slope),
        float(fit.stderr),
        (float(fit.slope - half), float(fit.slope + half)),
        tuple(float(s) for s in scaled),
        spread,
    )


# -- stabilization tails ----------------------------------------------------------


@dataclass(frozen=True)
class StabilizationSample:
    radii: np.ndarray  # uncensored radii R(x, eta)
    ball_counts: np.ndarray  # points of eta in B(x, R(x, eta)), same order
    contained: np.ndarray  # whether B(x, R) lies inside the sampling ball
    censored: int
    total: int

    @property
    def censored_fraction(self) -> float:
        return self.censored / self.total if self.total else 0.0


def sample_stabilization_radii(
    space: Space,
    t: float,
    buffer: float,
    n: int,
    seed: int,
    per_config: int = 10,
) -> StabilizationSample:
    """Stabilization radii of ``n`` insertion points drawn by volume on ``B_t``.

    Each configuration (stream ``i`` on ``B_{t + buffer}``) hosts
    ``per_config`` insertion points, each inserted on its own.  A radius whose
    ball ``B(x, R)`` leaves the sampling ball may be inflated by vertices near
    the sampling boundary; ``contained`` marks the ones that do not.
    """
    radii, counts, contained = [], [], []
    censored = 0
    stream = 0
    while len(radii) + censored < n:
        rng = RandomStream(seed, stream)
        config = sample_poisson_ball(space, t + buffer, rng)
        graph = build_nne(config)
        m = min(per_config, n - len(radii) - censored)
        for x in uniform_in_ball(space, t, m, rng):
            rec = stabilization_radius(config, x, t=t, graph=graph)
            if rec.censored:
                censored += 1
            else:
                radii.append(rec.r)
                counts.append(int(np.count_nonzero(distances_from(space, x, config.points) <= rec.r)))
                norm = distances_from(space, origin(space), x[None, :])[0]
                contained.append(bool(norm + rec.r <= t + buffer))
        stream += 1
    return StabilizationSample(
        np.array(radii), np.array(counts, dtype=np.int64), np.array(contained, dtype=bool), censored, n
    )


@dataclass(frozen=True)
class TailSummary:
    spearman: float
    slope: float  # of log survival against rho(s/2)
    points: int


def tail_check(space: Space, radii, band=(0.01, 0.5)) -> TailSummary:
    """Rank correlation between ``log P(R > s)`` and ``rho(s/2)`` where the survival lies in ``band``."""
    r = np.sort(np.asarray(radii, dtype=float))
    n = len(r)
    s, first = np.unique(r, return_index=True)
    # P(R > s) at each distinct value: count strictly above divided by n
    last = np.append(first[1:], n)
    surv = (n - last) / n
    keep = (surv >= band[0]) & (surv <= band[1])
    if keep.sum() < 3:
        raise ValueError("too few distinct radii inside the survival band")
    x = np.array([rho(space, v / 2) for v in s[keep]])
    y = np.log(surv[keep])
    return TailSummary(
        float(stats.spearmanr(x, y).statistic),
        float(stats.linregress(x, y).slope),
        int(keep.sum()),
    )
