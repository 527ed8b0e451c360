"""
Pure Nash equilibria of GSP on discretized bid spaces, and Monte Carlo
measurement of the structural property that drives the welfare bounds.

The structural property asks, for every agent i, test value v_i and slot k,

    E[ alpha_{sigma(b,i)} v_i + alpha_k b_{pi^i(b_-i, k)} ] >= gamma alpha_k v_i

and any gamma for which it holds yields SW >= gamma/2 * OPT. At exact
Bayes-Nash (and coarse correlated) equilibria gamma = 1 - 1/e.
"""

from __future__ import annotations

import logging
import math
from typing import Callable, Literal, NamedTuple, Sequence

import numpy as np
from pydantic import BaseModel, ConfigDict, model_validator
from scipy.stats import norm

from . import rng
from .auction_core import (
    BidProfile,
    CtrProfile,
    ValueProfile,
    _same_length,
    counterfactual_utilities,
    excluded_bids_kernel,
    gsp_kernel,
    optimal_slots,
    optimal_welfare,
    utility_kernel,
)
from .errors import BudgetExceeded, ShapeError

logger = logging.getLogger(__name__)

GAMMA_BOUND = 1 - 1 / math.e
TOTAL_ANARCHY_BOUND = 2 / GAMMA_BOUND
DEFAULT_GRID_POINTS = 64
DEFAULT_ENUMERATION_BUDGET = 10**7
DEFAULT_TEST_VALUES = 16
CONFIDENCE = 0.95

Sampler = Literal["boundary", "uniform"]
AllocationFilter = Literal["any", "fixed_point", "cyclic"]

# (agent, value, generator, count) -> (count, n) joint bid profiles in which
# `agent` holds `value` and everyone else follows their own strategy.
BidSampler = Callable[[int, float, np.random.Generator, int], np.ndarray]


class BidGrid(BaseModel):
    """Finite bid set per agent; caps[i] is the no-overbidding cap when enforced."""

    model_config = ConfigDict(frozen=True)

    levels: tuple[tuple[float, ...], ...]
    caps: tuple[float | None, ...]

    @model_validator(mode="after")
    def _sorted_and_capped(self) -> BidGrid:
        if len(self.levels) != len(self.caps):
            raise ValueError("one cap entry per agent grid is required")
        for i, (row, cap) in enumerate(zip(self.levels, self.caps)):
            if not row:
                raise ValueError(f"grid of agent {i} is empty")
            if row[0] < 0 or any(a >= b for a, b in zip(row, row[1:])):
                raise ValueError(f"grid of agent {i} must be nonnegative, sorted and distinct")
            if cap is not None and row[-1] > cap:
                raise ValueError(f"grid of agent {i} exceeds its cap {cap}")
        return self

    @classmethod
    def uniform(
        cls,
        values: ValueProfile,
        points: int = DEFAULT_GRID_POINTS,
        no_overbid: bool = True,
        ceiling: float | None = None,
    ) -> BidGrid:
        """`points` evenly spaced bids on [0, v_i] (or [0, ceiling] without the cap)."""
        if points < 1:
            raise ShapeError("a bid grid needs at least one point")
        top = max(values.values) if ceiling is None else ceiling
        levels, caps = [], []
        for v in values.values:
            cap = v if no_overbid else top
            levels.append(tuple(float(x) for x in np.unique(np.linspace(0.0, cap, points))))
            caps.append(v if no_overbid else None)
        return cls(levels=tuple(levels), caps=tuple(caps))

    @property
    def n(self) -> int:
        return len(self.levels)

    @property
    def joint_size(self) -> int:
        return math.prod(len(row) for row in self.levels)

    def matrix(self) -> tuple[np.ndarray, np.ndarray]:
        """(levels, mask) of shape (n, K); short rows are padded with their top bid."""
        width = max(len(row) for row in self.levels)
        levels = np.empty((self.n, width))
        mask = np.zeros((self.n, width), dtype=bool)
        for i, row in enumerate(self.levels):
            levels[i, : len(row)] = row
            levels[i, len(row):] = row[-1]
            mask[i, : len(row)] = True
        return levels, mask


class BestResponse(NamedTuple):
    bid: float
    utility: float


class NashVerdict(BaseModel):
    is_equilibrium: bool
    epsilon: float
    gains: tuple[float, ...]
    worst_agent: int
    worst_deviation: float
    worst_gain: float


class EquilibriumSummary(NamedTuple):
    worst_ratio: float
    worst_bids: BidProfile | None
    count: int


class PoaSearchResult(BaseModel):
    n: int
    instances: int
    equilibria: int
    instances_without_equilibrium: int
    worst_ratio: float
    witness_ctrs: CtrProfile | None
    witness_values: ValueProfile | None
    witness_bids: BidProfile | None
    sampler: Sampler
    allocation: AllocationFilter
    grid_points: int


class GammaTriple(BaseModel):
    agent: int
    value: float
    slot: int
    ratio: float
    half_width: float


class GammaReport(BaseModel):
    gamma_hat: float
    raw_minimum: float
    half_width: float
    samples: int
    per_pair_minima: list[list[float | None]]
    worst: GammaTriple | None


class WelfareChain(BaseModel):
    social_welfare: float
    deviation_term: float
    bid_welfare: float
    holds: bool


def default_epsilon(values: ValueProfile, ctrs: CtrProfile) -> float:
    return 1e-6 * ctrs.alphas[0] * max(values.values)


def _checked_grid(what: str, grid: BidGrid, *sizes: int) -> None:
    n = _same_length(what, *sizes)
    if grid.n != n:
        raise ShapeError(f"grid covers {grid.n} agents, instance has {n}")


def best_response(
    agent: int,
    opponents: BidProfile,
    values: ValueProfile,
    ctrs: CtrProfile,
    grid: BidGrid,
) -> BestResponse:
    """Utility-maximizing grid bid against fixed opponents, lowest bid on ties.

    The agent's own entry in `opponents` is ignored.
    """
    n = opponents.n
    if not 0 <= agent < n:
        raise ShapeError(f"agent index {agent} out of range for {n} agents")
    _checked_grid("best_response", grid, n, values.n, ctrs.n)
    row = np.asarray(grid.levels[agent])
    payoff = counterfactual_utilities(
        opponents.array(), np.array([values.values[agent]]), ctrs.array(), row[None, :], np.array([agent])
    )[0, 0]
    best = int(np.argmax(payoff))
    return BestResponse(bid=float(row[best]), utility=float(payoff[best]))


def check_pure_ne(
    bids: BidProfile,
    values: ValueProfile,
    ctrs: CtrProfile,
    grid: BidGrid,
    epsilon: float | None = None,
) -> NashVerdict:
    """No agent gains more than epsilon by a unilateral deviation on its grid."""
    _checked_grid("check_pure_ne", grid, bids.n, values.n, ctrs.n)
    epsilon = default_epsilon(values, ctrs) if epsilon is None else epsilon
    if epsilon < 0:
        raise ShapeError("epsilon must be nonnegative")
    v, alphas = values.array(), ctrs.array()
    levels, mask = grid.matrix()
    current = utility_kernel(bids.array()[None, :], v, alphas)[0]
    payoff = counterfactual_utilities(bids.array(), v, alphas, levels)[0]
    payoff = np.where(mask, payoff, -np.inf)
    choice = payoff.argmax(axis=1)
    gains = payoff[np.arange(bids.n), choice] - current
    worst = int(np.argmax(gains))
    return NashVerdict(
        is_equilibrium=bool(gains.max() <= epsilon),
        epsilon=epsilon,
        gains=tuple(float(g) for g in gains),
        worst_agent=worst,
        worst_deviation=float(levels[worst, choice[worst]]),
        worst_gain=float(gains[worst]),
    )


def _joint_profiles(grid: BidGrid, budget: int) -> tuple[np.ndarray, tuple[int, ...]]:
    required = grid.joint_size
    if required > budget:
        raise BudgetExceeded(required, budget)
    axes = [np.asarray(row) for row in grid.levels]
    mesh = np.meshgrid(*axes, indexing="ij")
    shape = tuple(len(row) for row in grid.levels)
    return np.stack([m.ravel() for m in mesh], axis=1), shape


def _equilibrium_mask(profiles: np.ndarray, shape: tuple[int, ...], v: np.ndarray, alphas: np.ndarray) -> np.ndarray:
    payoff = utility_kernel(profiles, v, alphas)
    stable = np.ones(len(profiles), dtype=bool)
    for i in range(len(shape)):
        own = payoff[:, i].reshape(shape)
        stable &= (own >= own.max(axis=i, keepdims=True)).ravel()
    return stable


def enumerate_pure_ne(
    values: ValueProfile,
    ctrs: CtrProfile,
    grid: BidGrid,
    budget: int = DEFAULT_ENUMERATION_BUDGET,
) -> list[BidProfile]:
    """Every joint grid profile that is an exact (epsilon = 0) pure NE."""
    _checked_grid("enumerate_pure_ne", grid, values.n, ctrs.n)
    profiles, shape = _joint_profiles(grid, budget)
    stable = _equilibrium_mask(profiles, shape, values.array(), ctrs.array())
    return [BidProfile.of(*row) for row in profiles[stable]]


def _allocation_mask(slot_of: np.ndarray, values: ValueProfile, ctrs: CtrProfile, allocation: AllocationFilter) -> np.ndarray:
    if allocation == "any":
        return np.ones(len(slot_of), dtype=bool)
    nu = np.asarray(optimal_slots(values, ctrs))
    if allocation == "fixed_point":
        return (slot_of == nu[None, :]).any(axis=1)
    n = len(nu)
    cyclic = np.where(nu == 0, n - 1, nu - 1)
    return (slot_of == cyclic[None, :]).all(axis=1)


def worst_equilibrium(
    values: ValueProfile,
    ctrs: CtrProfile,
    grid: BidGrid,
    allocation: AllocationFilter = "any",
    budget: int = DEFAULT_ENUMERATION_BUDGET,
) -> EquilibriumSummary:
    """Largest OPT/SW over the enumerated pure NE whose allocation passes the filter."""
    _checked_grid("worst_equilibrium", grid, values.n, ctrs.n)
    v, alphas = values.array(), ctrs.array()
    profiles, shape = _joint_profiles(grid, budget)
    stable = profiles[_equilibrium_mask(profiles, shape, v, alphas)]
    _, slot_of, _ = gsp_kernel(stable)
    stable = stable[_allocation_mask(slot_of, values, ctrs, allocation)]
    if len(stable) == 0:
        return EquilibriumSummary(worst_ratio=float("nan"), worst_bids=None, count=0)
    _, slot_of, _ = gsp_kernel(stable)
    welfare = (alphas[slot_of] * v).sum(axis=1)
    opt = optimal_welfare(values, ctrs)
    with np.errstate(divide="ignore", invalid="ignore"):
        ratios = np.where(welfare > 0, opt / welfare, np.where(opt > 0, np.inf, 1.0))
    worst = int(np.argmax(ratios))
    return EquilibriumSummary(
        worst_ratio=float(ratios[worst]),
        worst_bids=BidProfile.of(*stable[worst]),
        count=len(stable),
    )


def sample_instance(
    n: int,
    seed: int,
    ctr_index: int,
    value_index: int = 0,
    sampler: Sampler = "boundary",
) -> tuple[ValueProfile, CtrProfile]:
    """Seeded instance with alpha_1 = 1.

    `uniform` draws iid U[0,1] values. `boundary` puts v_1 = 1 and each other
    value just above the Nash-inequality bound of the cyclic allocation, where
    the inefficient equilibria live.
    """
    if n < 1:
        raise ShapeError("an instance needs at least one slot")
    draws = rng.stream(seed, rng.INSTANCES, ctr_index).random(n - 1)
    alphas = np.concatenate([[1.0], np.sort(draws)[::-1]])
    value_draws = rng.stream(seed, rng.INSTANCES, ctr_index, value_index + 1).random(n)
    if sampler == "uniform" or n == 1:
        values = value_draws
    else:
        values = np.empty(n)
        values[0] = 1.0
        for i in range(1, n):
            prev = alphas[i - 1]
            bound = (prev - alphas[-1]) / prev if prev > 0 else value_draws[i]
            values[i] = bound * (1 + 0.02 * value_draws[i])
    return ValueProfile.of(*values), CtrProfile.of(*alphas)


def pure_poa_search(
    n: int,
    ctr_samples: int,
    value_samples: int = 1,
    grid_points: int = DEFAULT_GRID_POINTS,
    seed: int = 0,
    sampler: Sampler = "boundary",
    allocation: AllocationFilter = "any",
    budget: int = DEFAULT_ENUMERATION_BUDGET,
) -> PoaSearchResult:
    """Worst OPT/SW over sampled instances and all their grid pure NE."""
    if not 1 <= n <= 4:
        raise ShapeError("pure PoA search enumerates joint grids and supports 1 <= n <= 4")
    if grid_points**n > budget:
        raise BudgetExceeded(grid_points**n, budget)
    worst = EquilibriumSummary(worst_ratio=0.0, worst_bids=None, count=0)
    witness: tuple[ValueProfile, CtrProfile] | None = None
    total = empty = 0
    for c in range(ctr_samples):
        for s in range(value_samples):
            values, ctrs = sample_instance(n, seed, c, s, sampler)
            found = worst_equilibrium(values, ctrs, BidGrid.uniform(values, grid_points), allocation, budget)
            total += found.count
            if found.count == 0:
                empty += 1
                continue
            logger.debug("instance (%d, %d): %d equilibria, worst ratio %.6f", c, s, found.count, found.worst_ratio)
            if found.worst_ratio > worst.worst_ratio:
                worst, witness = found, (values, ctrs)
    logger.info("pure PoA search n=%d: worst ratio %.6f over %d instances", n, worst.worst_ratio, ctr_samples * value_samples)
    return PoaSearchResult(
        n=n,
        instances=ctr_samples * value_samples,
        equilibria=total,
        instances_without_equilibrium=empty,
        worst_ratio=worst.worst_ratio,
        witness_ctrs=None if witness is None else witness[1],
        witness_values=None if witness is None else witness[0],
        witness_bids=worst.worst_bids,
        sampler=sampler,
        allocation=allocation,
        grid_points=grid_points,
    )


def fixed_profile_sampler(bids: BidProfile) -> BidSampler:
    """Deterministic full-information play: every draw is `bids`."""
    row = bids.array()

    def draw(agent: int, value: float, generator: np.random.Generator, count: int) -> np.ndarray:
        return np.tile(row, (count, 1))

    return draw


def empirical_sampler(bid_rows: np.ndarray) -> BidSampler:
    """Uniform round selection from a declaration sequence (the shared randomness)."""
    rows = np.asarray(bid_rows, dtype=float)

    def draw(agent: int, value: float, generator: np.random.Generator, count: int) -> np.ndarray:
        return rows[generator.integers(0, len(rows), size=count)]

    return draw


def structural_gamma(
    bid_sampler: BidSampler,
    ctrs: CtrProfile,
    test_values: Sequence[Sequence[float]],
    samples: int = 100_000,
    seed: int = 0,
    agents: Sequence[int] | None = None,
) -> GammaReport:
    """Largest gamma for which the structural property holds on the tested triples.

    test_values[i] lists the values tested for agent i. The expectation over
    the other agents' values and bids lives in `bid_sampler`: it draws full bid
    profiles with agent i holding the tested value, so a Bayesian sampler
    (`strategy_sampler`) samples the opponents' values from their
    distributions and maps them through their strategies, while
    `empirical_sampler` and `fixed_profile_sampler` cover full-information play.
    Triples with alpha_k * v_i = 0 are vacuous and skipped.
    """
    if samples < 1:
        raise ShapeError("structural_gamma needs at least one sample")
    alphas = ctrs.array()
    n = len(alphas)
    if len(test_values) != n:
        raise ShapeError(f"{len(test_values)} test-value lists for {n} agents")
    z = float(norm.ppf(0.5 + CONFIDENCE / 2))
    minima: list[list[float | None]] = [[None] * n for _ in range(n)]
    worst: GammaTriple | None = None
    for i in range(n) if agents is None else agents:
        for j, value in enumerate(test_values[i]):
            rows = bid_sampler(i, float(value), rng.stream(seed, rng.BIDS, i, j), samples)
            _, slot_of, _ = gsp_kernel(rows)
            own = alphas[slot_of[:, i]] * value
            terms = own[:, None] + alphas[None, :] * excluded_bids_kernel(rows, i)
            means = terms.mean(axis=0)
            spread = terms.std(axis=0, ddof=1) if samples > 1 else np.zeros(n)
            for k in range(n):
                scale = alphas[k] * value
                if scale <= 0:
                    continue
                ratio = float(means[k] / scale)
                half = float(z * spread[k] / math.sqrt(samples) / scale)
                current = minima[i][k]
                minima[i][k] = ratio if current is None else min(current, ratio)
                if worst is None or ratio < worst.ratio:
                    worst = GammaTriple(agent=i, value=float(value), slot=k, ratio=ratio, half_width=half)
    raw = 1.0 if worst is None else worst.ratio
    return GammaReport(
        gamma_hat=min(max(raw, 0.0), 1.0),
        raw_minimum=raw,
        half_width=0.0 if worst is None else worst.half_width,
        samples=samples,
        per_pair_minima=minima,
        worst=worst,
    )


def lemma1_consistency(gamma_hat: float, measured_sw: float, measured_opt: float, tolerance: float = 1e-9) -> bool:
    """SW >= (gamma/2) * OPT, the welfare consequence of the structural property."""
    return measured_sw >= (gamma_hat / 2 - tolerance) * measured_opt


def welfare_chain(bid_rows: np.ndarray, values: ValueProfile, ctrs: CtrProfile, tolerance: float = 1e-9) -> WelfareChain:
    """Averages of the three quantities linked in the welfare argument.

    deviation_term = sum_i alpha_{nu(i)} b_{pi^i(b_-i, nu(i))}, bid_welfare =
    sum_k alpha_k b_{pi(k)}, social_welfare = realized SW. The chain
    deviation_term <= bid_welfare <= social_welfare holds without overbidding.
    """
    rows = np.atleast_2d(np.asarray(bid_rows, dtype=float))
    v, alphas = values.array(), ctrs.array()
    _, slot_of, _ = gsp_kernel(rows)
    sw = float((alphas[slot_of] * v).sum(axis=1).mean())
    bid_welfare = float((alphas[slot_of] * rows).sum(axis=1).mean())
    nu = optimal_slots(values, ctrs)
    deviation = float(sum((alphas[nu[i]] * excluded_bids_kernel(rows, i)[:, nu[i]]).mean() for i in range(len(v))))
    return WelfareChain(
        social_welfare=sw,
        deviation_term=deviation,
        bid_welfare=bid_welfare,
        holds=deviation <= bid_welfare + tolerance and bid_welfare <= sw + tolerance,
    )
