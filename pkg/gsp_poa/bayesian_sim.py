"""
Bayesian GSP: independent value distributions, strategy tables mapping
values to bids, Monte Carlo interim best responses and Bayesian PoA.

All estimates are paired: one matrix of value draws (VALUES stream) and
one matrix of strategy draws (BIDS stream) per seed, shared by every agent,
value and deviation that is evaluated.
"""

from __future__ import annotations

import logging
import math
from typing import Literal, Sequence

import numpy as np
from pydantic import BaseModel, ConfigDict, model_validator
from scipy.stats import norm

from . import rng
from .auction_core import (
    BidProfile,
    CtrProfile,
    ValueProfile,
    counterfactual_utilities,
    optimal_welfare_kernel,
    welfare_kernel,
)
from .equilibria import BidSampler, DEFAULT_GRID_POINTS
from .errors import ShapeError, UndefinedRatio

logger = logging.getLogger(__name__)

DEFAULT_VALUE_POINTS = 32
DEFAULT_SAMPLES = 100_000
CONFIDENCE = 0.95
CHUNK = 8192


class DistributionSpec(BaseModel):
    """One agent's value distribution F_i."""

    model_config = ConfigDict(frozen=True)

    kind: Literal["uniform", "discrete", "point"]
    low: float = 0.0
    high: float = 1.0
    atoms: tuple[float, ...] = ()
    weights: tuple[float, ...] = ()
    value: float = 0.0

    @model_validator(mode="after")
    def _valid_support(self) -> DistributionSpec:
        if self.kind == "uniform":
            if not (math.isfinite(self.low) and math.isfinite(self.high) and 0 <= self.low <= self.high):
                raise ValueError(f"uniform support [{self.low}, {self.high}] must satisfy 0 <= low <= high")
        elif self.kind == "discrete":
            if not self.atoms or len(self.atoms) != len(self.weights):
                raise ValueError("discrete distributions need one weight per atom")
            if any(a < 0 or not math.isfinite(a) for a in self.atoms) or any(w < 0 for w in self.weights):
                raise ValueError("atoms and weights must be nonnegative")
            if abs(sum(self.weights) - 1) > 1e-9:
                raise ValueError(f"weights sum to {sum(self.weights)}, not 1")
        elif self.value < 0 or not math.isfinite(self.value):
            raise ValueError("point mass must sit at a finite nonnegative value")
        return self

    @classmethod
    def uniform(cls, low: float, high: float) -> DistributionSpec:
        return cls(kind="uniform", low=low, high=high)

    @classmethod
    def discrete(cls, atoms: Sequence[float], weights: Sequence[float]) -> DistributionSpec:
        return cls(kind="discrete", atoms=tuple(atoms), weights=tuple(weights))

    @classmethod
    def point(cls, value: float) -> DistributionSpec:
        return cls(kind="point", value=value)

    def quantile(self, u: np.ndarray) -> np.ndarray:
        u = np.asarray(u, dtype=float)
        if self.kind == "uniform":
            return self.low + (self.high - self.low) * u
        if self.kind == "discrete":
            index = np.searchsorted(np.cumsum(self.weights), u, side="right")
            return np.asarray(self.atoms)[np.minimum(index, len(self.atoms) - 1)]
        return np.full(u.shape, self.value)

    def value_grid(self, points: int = DEFAULT_VALUE_POINTS) -> tuple[float, ...]:
        if self.kind == "uniform":
            return tuple(float(x) for x in np.unique(np.linspace(self.low, self.high, points)))
        if self.kind == "discrete":
            return tuple(float(x) for x in np.unique(self.atoms))
        return (self.value,)


def sample_values(dists: Sequence[DistributionSpec], seed: int, count: int, start: int = 0) -> np.ndarray:
    """Value profiles start..start+count-1, shape (count, n)."""
    uniforms = rng.uniform_rows(seed, rng.VALUES, start, count, len(dists))
    if count <= 0:
        return uniforms
    return np.stack([d.quantile(uniforms[:, i]) for i, d in enumerate(dists)], axis=1)


def sample_profile(dists: Sequence[DistributionSpec], seed: int, index: int) -> ValueProfile:
    return ValueProfile.of(*sample_values(dists, seed, 1, start=index)[0])


def _nearest(grid: np.ndarray, v: np.ndarray) -> np.ndarray:
    if len(grid) == 1:
        return np.zeros(v.shape, dtype=int)
    right = np.clip(np.searchsorted(grid, v), 1, len(grid) - 1)
    left = right - 1
    return np.where(v - grid[left] <= grid[right] - v, left, right)


class AgentStrategy(BaseModel):
    """b_i(.) on a value grid: pure bids, or weights over a shared action set.

    Off-grid values use the nearest grid point (or linear interpolation of
    pure bids when `interpolation` is linear); the bid is then capped at the
    value itself.
    """

    model_config = ConfigDict(frozen=True)

    values: tuple[float, ...]
    bids: tuple[float, ...] | None = None
    actions: tuple[float, ...] | None = None
    weights: tuple[tuple[float, ...], ...] | None = None
    interpolation: Literal["nearest", "linear"] = "nearest"

    @model_validator(mode="after")
    def _no_overbidding(self) -> AgentStrategy:
        if not self.values or any(a >= b for a, b in zip(self.values, self.values[1:])) or self.values[0] < 0:
            raise ValueError("value grid must be nonempty, nonnegative, sorted and distinct")
        if (self.bids is None) == (self.weights is None):
            raise ValueError("give either pure bids or mixed weights")
        if self.bids is not None:
            if len(self.bids) != len(self.values):
                raise ValueError("one bid per grid value is required")
            for v, b in zip(self.values, self.bids):
                if b < 0 or b > v:
                    raise ValueError(f"bid {b} at value {v} violates no-overbidding")
            return self
        if self.interpolation != "nearest":
            raise ValueError("mixed strategies use nearest-grid lookup")
        if not self.actions or len(self.weights) != len(self.values):
            raise ValueError("mixed strategies need actions and one weight row per grid value")
        for v, row in zip(self.values, self.weights):
            if len(row) != len(self.actions) or any(w < 0 for w in row) or abs(sum(row) - 1) > 1e-9:
                raise ValueError(f"weights at value {v} are not a distribution over the actions")
            if any(w > 0 and a > v for a, w in zip(self.actions, row)):
                raise ValueError(f"mixed strategy at value {v} puts weight on an overbid")
        return self

    def interim_support(self, index: int) -> tuple[np.ndarray, np.ndarray]:
        """(bids, probabilities) played at grid value `index`."""
        if self.bids is not None:
            return np.array([self.bids[index]]), np.ones(1)
        return np.asarray(self.actions), np.asarray(self.weights[index])

    def bid_rows(self, v: np.ndarray, u: np.ndarray) -> np.ndarray:
        grid = np.asarray(self.values)
        if self.bids is not None and self.interpolation == "linear":
            bids = np.interp(v, grid, self.bids)
        elif self.bids is not None:
            bids = np.asarray(self.bids)[_nearest(grid, v)]
        else:
            cdf = np.cumsum(np.asarray(self.weights), axis=1)[_nearest(grid, v)]
            pick = (cdf < u[:, None] * cdf[:, -1:]).sum(axis=1)
            bids = np.asarray(self.actions)[np.minimum(pick, len(self.actions) - 1)]
        return np.minimum(bids, v)


class StrategyTable(BaseModel):
    model_config = ConfigDict(frozen=True)

    agents: tuple[AgentStrategy, ...]

    @property
    def n(self) -> int:
        return len(self.agents)

    def bids_for(self, value_rows: np.ndarray, uniforms: np.ndarray) -> np.ndarray:
        return np.stack(
            [s.bid_rows(value_rows[:, i], uniforms[:, i]) for i, s in enumerate(self.agents)], axis=1
        )

    @classmethod
    def truthful(cls, dists: Sequence[DistributionSpec], points: int = DEFAULT_VALUE_POINTS) -> StrategyTable:
        return cls.shaded(dists, 1.0, points)

    @classmethod
    def shaded(cls, dists: Sequence[DistributionSpec], factor: float, points: int = DEFAULT_VALUE_POINTS) -> StrategyTable:
        """b_i(v) = factor * v."""
        if not 0 <= factor <= 1:
            raise ShapeError("shading factor must lie in [0, 1]")
        agents = []
        for d in dists:
            grid = d.value_grid(points)
            agents.append(AgentStrategy(values=grid, bids=tuple(factor * g for g in grid), interpolation="linear"))
        return cls(agents=tuple(agents))

    @classmethod
    def constant(cls, bids: BidProfile, dists: Sequence[DistributionSpec], points: int = DEFAULT_VALUE_POINTS) -> StrategyTable:
        """b_i(v) = min(bids_i, v)."""
        if bids.n != len(dists):
            raise ShapeError(f"{bids.n} bids for {len(dists)} distributions")
        agents = []
        for b, d in zip(bids.bids, dists):
            grid = d.value_grid(points)
            agents.append(AgentStrategy(values=grid, bids=tuple(min(b, g) for g in grid)))
        return cls(agents=tuple(agents))


class ValueScan(BaseModel):
    agent: int
    value: float
    prescribed_utility: float
    best_bid: float
    gain: float
    standard_error: float


class BneReport(BaseModel):
    epsilon: float
    per_agent: list[float]
    standard_error: float
    worst_agent: int
    worst_value: float
    samples: int


class BpoaReport(BaseModel):
    e_opt: float
    e_sw: float
    ratio: float
    ci_low: float
    ci_high: float
    samples: int


class BneSearchResult(BaseModel):
    table: StrategyTable
    report: BneReport
    trace: list[float]


def _check_instance(strategies: StrategyTable, dists: Sequence[DistributionSpec], ctrs: CtrProfile, samples: int) -> None:
    if not strategies.n == len(dists) == ctrs.n:
        raise ShapeError(f"{strategies.n} strategies, {len(dists)} distributions, {ctrs.n} slots")
    if samples < 1:
        raise ShapeError("at least one sample is required")


def _draw_bids(strategies: StrategyTable, dists: Sequence[DistributionSpec], samples: int, seed: int) -> tuple[np.ndarray, np.ndarray]:
    values = sample_values(dists, seed, samples)
    uniforms = rng.uniform_rows(seed, rng.BIDS, 0, samples, len(dists))
    return values, strategies.bids_for(values, uniforms)


def _interim_scan(
    strategies: StrategyTable,
    dists: Sequence[DistributionSpec],
    ctrs: CtrProfile,
    samples: int,
    seed: int,
    deviation_points: int,
) -> list[list[ValueScan]]:
    """Gain of the best grid deviation over the prescribed play, per agent and grid value.

    Ties between deviations go to the highest bid.
    """
    _check_instance(strategies, dists, ctrs, samples)
    alphas = ctrs.array()
    _, bids = _draw_bids(strategies, dists, samples, seed)
    scans = []
    for i, strategy in enumerate(strategies.agents):
        rows = []
        for j, g in enumerate(strategy.values):
            support, probs = strategy.interim_support(j)
            deviations = np.unique(np.linspace(0.0, g, deviation_points))
            levels = np.concatenate([deviations, support])[None, :]
            width = len(deviations)
            gain_sum = np.zeros(width)
            gain_sq = np.zeros(width)
            prescribed = 0.0
            for lo in range(0, samples, CHUNK):
                u = counterfactual_utilities(bids[lo:lo + CHUNK], np.array([g]), alphas, levels, np.array([i]))[:, 0, :]
                played = u[:, width:] @ probs
                diff = u[:, :width] - played[:, None]
                gain_sum += diff.sum(axis=0)
                gain_sq += (diff**2).sum(axis=0)
                prescribed += played.sum()
            mean = gain_sum / samples
            best = width - 1 - int(np.argmax(mean[::-1]))
            variance = (gain_sq[best] - samples * mean[best] ** 2) / (samples - 1) if samples > 1 else 0.0
            rows.append(ValueScan(
                agent=i,
                value=g,
                prescribed_utility=prescribed / samples,
                best_bid=float(deviations[best]),
                gain=float(mean[best]),
                standard_error=math.sqrt(max(variance, 0.0) / samples),
            ))
        scans.append(rows)
    return scans


def _report(scans: list[list[ValueScan]], samples: int) -> BneReport:
    per_agent = [max(0.0, max(s.gain for s in rows)) for rows in scans]
    worst = max((s for rows in scans for s in rows), key=lambda s: s.gain)
    return BneReport(
        epsilon=max(per_agent),
        per_agent=per_agent,
        standard_error=worst.standard_error,
        worst_agent=worst.agent,
        worst_value=worst.value,
        samples=samples,
    )


def bne_epsilon(
    strategies: StrategyTable,
    dists: Sequence[DistributionSpec],
    ctrs: CtrProfile,
    samples: int = DEFAULT_SAMPLES,
    seed: int = 0,
    deviation_points: int = DEFAULT_GRID_POINTS,
) -> BneReport:
    """Largest interim gain from a fixed grid deviation, over agents and table values.

    Deviations for value v are `deviation_points` bids on [0, v].
    """
    return _report(_interim_scan(strategies, dists, ctrs, samples, seed, deviation_points), samples)


def bpoa_estimate(
    strategies: StrategyTable,
    dists: Sequence[DistributionSpec],
    ctrs: CtrProfile,
    samples: int = DEFAULT_SAMPLES,
    seed: int = 0,
) -> BpoaReport:
    """E[OPT] / E[SW] with a delta-method interval."""
    _check_instance(strategies, dists, ctrs, samples)
    alphas = ctrs.array()
    values, bids = _draw_bids(strategies, dists, samples, seed)
    opt = optimal_welfare_kernel(values, alphas)
    sw = welfare_kernel(bids, values, alphas)
    e_opt, e_sw = float(opt.mean()), float(sw.mean())
    if e_sw <= 0:
        raise UndefinedRatio("estimated expected social welfare is not positive")
    ratio = e_opt / e_sw
    spread = float((opt - ratio * sw).std(ddof=1)) if samples > 1 else 0.0
    half = float(norm.ppf(0.5 + CONFIDENCE / 2)) * spread / (e_sw * math.sqrt(samples))
    return BpoaReport(e_opt=e_opt, e_sw=e_sw, ratio=ratio, ci_low=ratio - half, ci_high=ratio + half, samples=samples)


def approx_bne_search(
    dists: Sequence[DistributionSpec],
    ctrs: CtrProfile,
    iterations: int = 10,
    samples: int = 20_000,
    seed: int = 0,
    deviation_points: int = DEFAULT_GRID_POINTS,
    value_points: int = DEFAULT_VALUE_POINTS,
    initial: StrategyTable | None = None,
) -> BneSearchResult:
    """Simultaneous interim best-response iteration on the value grid.

    Starts from half-shading unless `initial` is given. trace holds the
    epsilon of every visited table; convergence is not guaranteed.
    """
    if iterations < 1:
        raise ShapeError("iterations must be at least 1")
    table = StrategyTable.shaded(dists, 0.5, value_points) if initial is None else initial
    trace = []
    for it in range(iterations + 1):
        scans = _interim_scan(table, dists, ctrs, samples, seed, deviation_points)
        report = _report(scans, samples)
        trace.append(report.epsilon)
        logger.info("best-response iteration %d: epsilon %.3g", it, report.epsilon)
        if it == iterations:
            break
        table = StrategyTable(agents=tuple(
            AgentStrategy(values=s.values, bids=tuple(r.best_bid for r in rows), interpolation="linear")
            for s, rows in zip(table.agents, scans)
        ))
    return BneSearchResult(table=table, report=report, trace=trace)


def strategy_sampler(strategies: StrategyTable, dists: Sequence[DistributionSpec]) -> BidSampler:
    """Joint bids with agent i at a fixed value and the others drawn from F_-i."""

    def draw(agent: int, value: float, generator: np.random.Generator, count: int) -> np.ndarray:
        uniforms = generator.random((count, len(dists)))
        values = np.stack([d.quantile(uniforms[:, k]) for k, d in enumerate(dists)], axis=1)
        values[:, agent] = value
        return strategies.bids_for(values, generator.random((count, len(dists))))

    return draw
