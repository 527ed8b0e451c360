"""
Mixed populations: rational Hedge learners (N) next to scripted agents (M)
that keep their values but bid by a fixed no-overbidding rule.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Literal

import numpy as np
from pydantic import BaseModel, ConfigDict, model_validator

from . import rng
from .auction_core import CtrProfile, ValueProfile, optimal_welfare, restricted_welfare
from .equilibria import (
    DEFAULT_GRID_POINTS,
    GAMMA_BOUND,
    BidGrid,
    GammaReport,
    empirical_sampler,
    lemma1_consistency,
    structural_gamma,
)
from .errors import ScriptOverbids, ShapeError
from .learning_dynamics import DeclarationSequence, make_learners, play_rounds, regret_profile, welfare_slack

logger = logging.getLogger(__name__)


class ByzantineScript(BaseModel):
    """constant: `bid` every round; sequence: `bids` cycled; random: U[0, cap * v_i]."""

    model_config = ConfigDict(frozen=True)

    kind: Literal["constant", "sequence", "random"]
    bid: float = 0.0
    bids: tuple[float, ...] = ()
    cap: float = 1.0

    @model_validator(mode="after")
    def _well_formed(self) -> ByzantineScript:
        if self.kind == "constant" and self.bid < 0:
            raise ValueError("constant script bid must be nonnegative")
        if self.kind == "sequence" and (not self.bids or min(self.bids) < 0):
            raise ValueError("sequence script needs nonnegative bids")
        if self.kind == "random" and not 0 <= self.cap <= 1:
            raise ValueError("random script cap must lie in [0, 1]")
        return self

    def check(self, agent: int, value: float) -> None:
        top = {"constant": self.bid, "sequence": max(self.bids, default=0.0), "random": self.cap * value}[self.kind]
        if top > value:
            raise ScriptOverbids(f"script of agent {agent} bids {top} above its value {value}")

    def column(self, value: float, rounds: int, uniforms: np.ndarray) -> np.ndarray:
        if self.kind == "constant":
            return np.full(rounds, self.bid)
        if self.kind == "sequence":
            return np.resize(np.asarray(self.bids, dtype=float), rounds)
        return uniforms * (self.cap * value)


class PopulationSpec(BaseModel):
    model_config = ConfigDict(frozen=True)

    rational: tuple[int, ...]
    scripts: dict[int, ByzantineScript] = {}

    @model_validator(mode="after")
    def _disjoint(self) -> PopulationSpec:
        if len(set(self.rational)) != len(self.rational):
            raise ValueError("rational agents listed twice")
        if set(self.rational) & set(self.scripts):
            raise ValueError("an agent cannot be both rational and scripted")
        return self

    @property
    def byzantine(self) -> tuple[int, ...]:
        return tuple(sorted(self.scripts))

    def validate_against(self, values: ValueProfile) -> None:
        members = set(self.rational) | set(self.scripts)
        if members != set(range(values.n)):
            raise ShapeError(f"population {sorted(members)} does not cover agents 0..{values.n - 1}")
        for agent, script in self.scripts.items():
            script.check(agent, values.values[agent])


class ByzantineReport(BaseModel):
    sw_total: float
    sw_rational: float
    opt_rational: float
    opt: float
    ratio: float | None
    ratio_rational: float | None
    max_rational_regret: float
    slack: float
    bound_holds: bool | None
    informational: bool
    gamma: GammaReport
    gamma_consistent: bool


@dataclass(frozen=True)
class ByzantineRun:
    sequence: DeclarationSequence
    report: ByzantineReport


def opt_rational(values: ValueProfile, ctrs: CtrProfile, pop: PopulationSpec) -> float:
    """OPT_N: best placement of the rational agents alone over all slots."""
    return restricted_welfare(pop.rational, None, values, ctrs, optimal=True)


def script_matrix(values: ValueProfile, pop: PopulationSpec, rounds: int, seed: int) -> np.ndarray:
    """(rounds, n) scripted bids; learner columns are zero."""
    uniforms = rng.uniform_rows(seed, rng.SCRIPTS, 0, rounds, values.n) if pop.scripts else None
    out = np.zeros((rounds, values.n))
    for agent, script in pop.scripts.items():
        column = uniforms[:, agent] if uniforms is not None else None
        out[:, agent] = script.column(values.values[agent], rounds, column)
    return out


def run_byzantine(
    values: ValueProfile,
    ctrs: CtrProfile,
    pop: PopulationSpec,
    rounds: int,
    seed: int,
    grid: BidGrid | None = None,
    burn_in: int = 0,
    gamma_samples: int = 20_000,
) -> ByzantineRun:
    """Learners in N play Hedge, agents in M follow their scripts.

    Scripts are validated before any round runs. With M empty this is
    exactly `run_repeated_auction` on the same learners and seed. Gamma is
    measured for the learners only, on the post-burn-in rounds, and checked
    against OPT_N.
    """
    pop.validate_against(values)
    grid = BidGrid.uniform(values, DEFAULT_GRID_POINTS) if grid is None else grid
    learners = make_learners(values, ctrs, grid, rounds)
    seats = [learners[i] if i not in pop.scripts else None for i in range(values.n)]
    scripted = script_matrix(values, pop, rounds, seed) if pop.scripts else None
    sequence = play_rounds(values, ctrs, seats, rounds, seed, scripted)

    welfare = ctrs.array()[sequence.slot_of] * values.array()
    members = list(pop.rational)
    sw_total = float(welfare[burn_in:].sum(axis=1).mean())
    sw_rational = float(welfare[burn_in:, members].sum(axis=1).mean()) if members else 0.0
    benchmark = opt_rational(values, ctrs, pop)
    regrets = regret_profile(sequence, values, burn_in=burn_in)
    slack = welfare_slack(regrets, values, ctrs, grid, benchmark, agents=members)
    informational = not members or benchmark <= 0
    ratio = None if benchmark <= 0 else sw_total / benchmark
    tests = [[float(v)] for v in values.values]
    gamma = structural_gamma(
        empirical_sampler(sequence.bids[burn_in:]), ctrs, tests, samples=gamma_samples, seed=seed, agents=members
    )
    report = ByzantineReport(
        sw_total=sw_total,
        sw_rational=sw_rational,
        opt_rational=benchmark,
        opt=optimal_welfare(values, ctrs),
        ratio=ratio,
        ratio_rational=None if benchmark <= 0 else sw_rational / benchmark,
        max_rational_regret=float(regrets[members].max()) if members else 0.0,
        slack=slack,
        bound_holds=None if informational else ratio >= GAMMA_BOUND / 2 - slack,
        informational=informational,
        gamma=gamma,
        gamma_consistent=lemma1_consistency(gamma.gamma_hat, sw_total, benchmark),
    )
    logger.info("byzantine run M=%s: SW/OPT_N = %s", pop.byzantine, ratio)
    return ByzantineRun(sequence=sequence, report=report)
