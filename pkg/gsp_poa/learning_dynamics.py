"""
Repeated GSP with full-information Hedge bidders.

A run is a declaration sequence b^1..b^T. Read as the uniform distribution
over rounds it is an empirical coarse correlated equilibrium whose slack is
the largest external regret, and its average welfare against OPT is the
price of total anarchy of the run.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
import pandas as pd
from pydantic import BaseModel

from . import rng
from .auction_core import (
    AuctionOutcome,
    CtrProfile,
    ValueProfile,
    counterfactual_utilities,
    gsp_kernel,
    optimal_welfare,
    utility_kernel,
)
from .equilibria import TOTAL_ANARCHY_BOUND, BidGrid
from .errors import InvalidUtility, ShapeError, UndefinedRatio

logger = logging.getLogger(__name__)

POTA_BOUND = TOTAL_ANARCHY_BOUND
REGRET_CHUNK = 1024
LOG_EVERY = 50_000


def hedge_rate(rounds: int, actions: int, scale: float) -> float:
    """Learning rate sqrt(8 ln K / T) for utilities in [0, scale]."""
    if actions <= 1 or scale <= 0:
        return 0.0
    return math.sqrt(8 * math.log(actions) / rounds) / scale


def hedge_regret_bound(rounds: int, actions: int, scale: float) -> float:
    """Average-regret guarantee of Hedge run at `hedge_rate`."""
    if actions <= 1:
        return 0.0
    return scale * math.sqrt(math.log(actions) / (2 * rounds))


def _softmax_rows(cumulative: np.ndarray, eta: np.ndarray, mask: np.ndarray) -> np.ndarray:
    scaled = np.where(mask, eta[:, None] * cumulative, -np.inf)
    weights = np.exp(scaled - scaled.max(axis=1, keepdims=True))
    return weights / weights.sum(axis=1, keepdims=True)


@dataclass(frozen=True)
class LearnerState:
    """Exponential-weights learner over a finite bid set.

    weights are proportional to exp(eta * cumulative).
    """

    agent: int
    actions: tuple[float, ...]
    eta: float
    cumulative: np.ndarray = field(repr=False)

    @classmethod
    def fresh(cls, agent: int, actions: Sequence[float], eta: float) -> LearnerState:
        if not actions:
            raise ShapeError(f"learner {agent} has no actions")
        return cls(agent=agent, actions=tuple(float(a) for a in actions), eta=eta, cumulative=np.zeros(len(actions)))

    @property
    def weights(self) -> np.ndarray:
        mask = np.ones((1, len(self.actions)), dtype=bool)
        return _softmax_rows(self.cumulative[None, :], np.array([self.eta]), mask)[0]


def hedge_update(state: LearnerState, utilities: Sequence[float]) -> LearnerState:
    payoff = np.asarray(utilities, dtype=float)
    if payoff.shape != (len(state.actions),):
        raise ShapeError(f"learner {state.agent}: {payoff.shape} utilities for {len(state.actions)} actions")
    if not np.isfinite(payoff).all():
        raise InvalidUtility(f"learner {state.agent} received non-finite utilities")
    return LearnerState(agent=state.agent, actions=state.actions, eta=state.eta, cumulative=state.cumulative + payoff)


def make_learners(values: ValueProfile, ctrs: CtrProfile, grid: BidGrid, rounds: int) -> list[LearnerState]:
    """One fresh learner per agent, rate tuned to the horizon and utility range."""
    top = ctrs.alphas[0]
    return [
        LearnerState.fresh(i, grid.levels[i], hedge_rate(rounds, len(grid.levels[i]), top * v))
        for i, v in enumerate(values.values)
    ]


@dataclass(frozen=True)
class DeclarationSequence:
    """Per-round bids and GSP outcomes; rows of `bids` are b^1..b^T.

    mixture_utility and counterfactual_totals are the learners' own
    bookkeeping (zero for scripted agents and for sequences built from bids).
    """

    ctrs: CtrProfile
    bids: np.ndarray = field(repr=False)
    assignment: np.ndarray = field(repr=False)
    slot_of: np.ndarray = field(repr=False)
    payments: np.ndarray = field(repr=False)
    actions: tuple[tuple[float, ...], ...] = ()
    learners: tuple[LearnerState | None, ...] = ()
    mixture_utility: np.ndarray | None = field(default=None, repr=False)
    counterfactual_totals: np.ndarray | None = field(default=None, repr=False)

    @classmethod
    def from_bids(cls, bids: np.ndarray, ctrs: CtrProfile, **extra) -> DeclarationSequence:
        rows = np.atleast_2d(np.asarray(bids, dtype=float))
        if rows.shape[0] < 1:
            raise ShapeError("a declaration sequence needs at least one round")
        if rows.shape[1] != ctrs.n:
            raise ShapeError(f"bid rows have {rows.shape[1]} agents, auction has {ctrs.n} slots")
        assignment, slot_of, payments = gsp_kernel(rows)
        return cls(ctrs=ctrs, bids=rows, assignment=assignment, slot_of=slot_of, payments=payments, **extra)

    @property
    def rounds(self) -> int:
        return self.bids.shape[0]

    @property
    def n(self) -> int:
        return self.bids.shape[1]

    def outcome(self, t: int) -> AuctionOutcome:
        alphas = self.ctrs.array()
        return AuctionOutcome(
            assignment=tuple(int(a) for a in self.assignment[t]),
            slot_of=tuple(int(s) for s in self.slot_of[t]),
            payments=tuple(float(p) for p in self.payments[t]),
            clicks=tuple(float(alphas[s]) for s in self.slot_of[t]),
        )

    def round_welfare(self, values: ValueProfile) -> np.ndarray:
        return (self.ctrs.array()[self.slot_of] * values.array()).sum(axis=1)

    def to_frame(self, values: ValueProfile) -> pd.DataFrame:
        """Plot-ready per-round log: round, bid_i, slot_i, payment_i, sw."""
        columns = {"round": np.arange(self.rounds)}
        columns.update({f"bid_{i}": self.bids[:, i] for i in range(self.n)})
        columns.update({f"slot_{i}": self.slot_of[:, i] for i in range(self.n)})
        columns.update({f"payment_{i}": self.payments[:, i] for i in range(self.n)})
        columns["sw"] = self.round_welfare(values)
        return pd.DataFrame(columns)


def play_rounds(
    values: ValueProfile,
    ctrs: CtrProfile,
    learners: Sequence[LearnerState | None],
    rounds: int,
    seed: int,
    scripted_bids: np.ndarray | None = None,
) -> DeclarationSequence:
    """Shared loop for learners and scripted agents.

    Agent i is a learner when learners[i] is set, otherwise it bids
    scripted_bids[t, i] in round t. Action draws for round t come from row t
    of the ACTIONS stream, so scripted columns never shift the learners' draws.
    """
    n = values.n
    if ctrs.n != n or len(learners) != n:
        raise ShapeError(f"{values.n} values, {ctrs.n} slots and {len(learners)} learner entries must agree")
    if rounds < 1:
        raise ShapeError("rounds must be at least 1")
    scripted = [i for i, state in enumerate(learners) if state is None]
    if scripted and (scripted_bids is None or scripted_bids.shape != (rounds, n)):
        raise ShapeError("scripted agents need a (rounds, n) bid matrix")
    for i, state in enumerate(learners):
        if state is None:
            continue
        if state.agent != i:
            raise ShapeError(f"learner for agent {state.agent} sits at position {i}")
        if max(state.actions) > values.values[i]:
            raise ShapeError(f"learner {i} can bid above its value {values.values[i]}")

    actions = tuple(state.actions if state is not None else (0.0,) for state in learners)
    grid = BidGrid(levels=actions, caps=tuple(None for _ in actions))
    levels, mask = grid.matrix()
    sizes = mask.sum(axis=1)
    agents = np.arange(n)
    v, alphas = values.array(), ctrs.array()
    eta = np.array([state.eta if state is not None else 0.0 for state in learners])
    start = np.zeros(levels.shape)
    for i, state in enumerate(learners):
        if state is not None:
            start[i, : len(state.actions)] = state.cumulative
    cumulative = start.copy()

    draws = rng.uniform_rows(seed, rng.ACTIONS, 0, rounds, n)
    bids = np.empty((rounds, n))
    mixed = np.zeros(n)
    for t in range(rounds):
        weights = _softmax_rows(cumulative, eta, mask)
        cdf = np.cumsum(weights, axis=1)
        pick = np.minimum((cdf < draws[t, :, None] * cdf[:, -1:]).sum(axis=1), sizes - 1)
        row = levels[agents, pick]
        if scripted:
            row[scripted] = scripted_bids[t, scripted]
        payoff = np.where(mask, counterfactual_utilities(row, v, alphas, levels)[0], 0.0)
        mixed += (weights * payoff).sum(axis=1)
        cumulative += payoff
        bids[t] = row
        if (t + 1) % LOG_EVERY == 0:
            logger.info("round %d/%d", t + 1, rounds)

    final = tuple(
        None if state is None
        else LearnerState(agent=i, actions=state.actions, eta=state.eta, cumulative=cumulative[i, : len(state.actions)].copy())
        for i, state in enumerate(learners)
    )
    mixed[scripted] = 0.0
    totals = np.where(mask, cumulative - start, -np.inf)
    totals[scripted] = -np.inf
    return DeclarationSequence.from_bids(
        bids,
        ctrs,
        actions=actions,
        learners=final,
        mixture_utility=mixed,
        counterfactual_totals=totals,
    )


def run_repeated_auction(
    values: ValueProfile,
    ctrs: CtrProfile,
    learners: Sequence[LearnerState],
    rounds: int,
    seed: int,
) -> DeclarationSequence:
    """Every agent learns; see `play_rounds`."""
    return play_rounds(values, ctrs, list(learners), rounds, seed)


def _regret_sums(
    sequence: DeclarationSequence,
    values: ValueProfile,
    grid: BidGrid,
    burn_in: int,
) -> tuple[np.ndarray, np.ndarray]:
    """(best fixed-bid utility sums (n,), realized utility sums (n,)) over rounds >= burn_in."""
    if grid.n != sequence.n or values.n != sequence.n:
        raise ShapeError("grid, values and sequence cover different agent counts")
    if not 0 <= burn_in < sequence.rounds:
        raise ShapeError(f"burn_in {burn_in} leaves no rounds out of {sequence.rounds}")
    v, alphas = values.array(), sequence.ctrs.array()
    levels, mask = grid.matrix()
    best = np.zeros(levels.shape)
    realized = np.zeros(sequence.n)
    for lo in range(burn_in, sequence.rounds, REGRET_CHUNK):
        rows = sequence.bids[lo:lo + REGRET_CHUNK]
        best += counterfactual_utilities(rows, v, alphas, levels).sum(axis=0)
        realized += utility_kernel(rows, v, alphas).sum(axis=0)
    return np.where(mask, best, -np.inf).max(axis=1), realized


def regret_profile(
    sequence: DeclarationSequence,
    values: ValueProfile,
    grid: BidGrid | None = None,
    burn_in: int = 0,
) -> np.ndarray:
    """Average external regret of every agent against its best fixed grid bid.

    The grid defaults to the action sets the sequence was played on.
    """
    if grid is None:
        grid = BidGrid(levels=sequence.actions, caps=tuple(None for _ in sequence.actions))
    best, realized = _regret_sums(sequence, values, grid, burn_in)
    return (best - realized) / (sequence.rounds - burn_in)


def external_regret(
    agent: int,
    sequence: DeclarationSequence,
    values: ValueProfile,
    ctrs: CtrProfile,
    grid: BidGrid,
) -> float:
    if ctrs != sequence.ctrs:
        raise ShapeError("sequence was played on different click-through rates")
    if not 0 <= agent < sequence.n:
        raise ShapeError(f"agent index {agent} out of range for {sequence.n} agents")
    return float(regret_profile(sequence, values, grid)[agent])


def mixture_regret(sequence: DeclarationSequence) -> np.ndarray:
    """Average regret of the learners' expected utilities; the quantity Hedge bounds."""
    if sequence.mixture_utility is None or sequence.counterfactual_totals is None:
        raise ShapeError("sequence carries no learner bookkeeping")
    regret = (sequence.counterfactual_totals.max(axis=1) - sequence.mixture_utility) / sequence.rounds
    return np.where(np.isfinite(regret), regret, 0.0)


class CceVerdict(BaseModel):
    holds: bool
    epsilon: float
    max_gain: float
    worst_agent: int


def empirical_cce_check(
    sequence: DeclarationSequence,
    values: ValueProfile,
    ctrs: CtrProfile,
    grid: BidGrid,
    epsilon: float,
) -> CceVerdict:
    """Uniform distribution over rounds is an epsilon-CCE iff max regret <= epsilon."""
    if ctrs != sequence.ctrs:
        raise ShapeError("sequence was played on different click-through rates")
    regrets = regret_profile(sequence, values, grid)
    worst = int(np.argmax(regrets))
    return CceVerdict(
        holds=bool(regrets[worst] <= epsilon),
        epsilon=epsilon,
        max_gain=float(regrets[worst]),
        worst_agent=worst,
    )


def average_welfare(sequence: DeclarationSequence, values: ValueProfile, burn_in: int = 0) -> float:
    if not 0 <= burn_in < sequence.rounds:
        raise ShapeError(f"burn_in {burn_in} leaves no rounds out of {sequence.rounds}")
    return float(sequence.round_welfare(values)[burn_in:].mean())


def pota_ratio(sequence: DeclarationSequence, values: ValueProfile, ctrs: CtrProfile, burn_in: int = 0) -> float:
    """OPT(v) over the average welfare of the sequence."""
    if ctrs != sequence.ctrs:
        raise ShapeError("sequence was played on different click-through rates")
    welfare = average_welfare(sequence, values, burn_in)
    if welfare <= 0:
        raise UndefinedRatio("average social welfare is zero")
    return optimal_welfare(values, ctrs) / welfare


def grid_step_utility(values: ValueProfile, ctrs: CtrProfile, grid: BidGrid) -> np.ndarray:
    """Utility an agent can lose by rounding a deviation bid onto its grid."""
    top = ctrs.alphas[0]
    return np.array([
        top * v / (len(row) - 1) if len(row) > 1 else 0.0
        for v, row in zip(values.values, grid.levels)
    ])


def welfare_slack(
    regrets: Sequence[float],
    values: ValueProfile,
    ctrs: CtrProfile,
    grid: BidGrid,
    benchmark: float,
    agents: Sequence[int] | None = None,
) -> float:
    """Relative slack delta for SW / benchmark >= (1 - 1/e)/2 - delta.

    Half the positive residual regret plus half a grid step of utility,
    summed over the listed agents (default all).
    """
    if benchmark <= 0:
        return 0.0
    members = list(range(values.n)) if agents is None else list(agents)
    residual = np.maximum(np.asarray(regrets, dtype=float)[members], 0.0).sum()
    rounding = grid_step_utility(values, ctrs, grid)[members].sum()
    return float(0.5 * (residual + rounding) / benchmark)
