"""
Generalized Second Price mechanism and the welfare primitives built on it.

Agents and slots are 0-based. Slot k receives alphas[k] clicks. Slots go to
agents in decreasing bid order, ties to the lower agent index, and the agent
in slot k pays per click the bid of the agent in slot k+1 (0 in the last slot).

The pydantic models are the validated, serializable surface. The `*_kernel`
and `counterfactual_utilities` functions are the vectorized forms used by
every hot loop; they follow the same tie rule bit-for-bit.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np
from pydantic import BaseModel, ConfigDict, field_validator, model_validator

from .errors import ShapeError

logger = logging.getLogger(__name__)


def _check_amounts(xs: tuple[float, ...], what: str) -> tuple[float, ...]:
    if len(xs) == 0:
        raise ValueError(f"{what}: at least one entry is required")
    for x in xs:
        if not math.isfinite(x) or x < 0:
            raise ValueError(f"{what}: entries must be finite and nonnegative, got {x}")
    return xs


class CtrProfile(BaseModel):
    model_config = ConfigDict(frozen=True)

    alphas: tuple[float, ...]

    @field_validator("alphas")
    @classmethod
    def _nonincreasing(cls, alphas: tuple[float, ...]) -> tuple[float, ...]:
        _check_amounts(alphas, "alphas")
        if any(a < b for a, b in zip(alphas, alphas[1:])):
            raise ValueError("click-through rates must be nonincreasing")
        return alphas

    @classmethod
    def of(cls, *alphas: float) -> CtrProfile:
        return cls(alphas=tuple(float(a) for a in alphas))

    @property
    def n(self) -> int:
        return len(self.alphas)

    def array(self) -> np.ndarray:
        return np.asarray(self.alphas, dtype=float)


class ValueProfile(BaseModel):
    model_config = ConfigDict(frozen=True)

    values: tuple[float, ...]

    @field_validator("values")
    @classmethod
    def _nonnegative(cls, values: tuple[float, ...]) -> tuple[float, ...]:
        return _check_amounts(values, "values")

    @classmethod
    def of(cls, *values: float) -> ValueProfile:
        return cls(values=tuple(float(v) for v in values))

    @property
    def n(self) -> int:
        return len(self.values)

    def array(self) -> np.ndarray:
        return np.asarray(self.values, dtype=float)


class BidProfile(BaseModel):
    model_config = ConfigDict(frozen=True)

    bids: tuple[float, ...]

    @field_validator("bids")
    @classmethod
    def _nonnegative(cls, bids: tuple[float, ...]) -> tuple[float, ...]:
        return _check_amounts(bids, "bids")

    @classmethod
    def of(cls, *bids: float) -> BidProfile:
        return cls(bids=tuple(float(b) for b in bids))

    @property
    def n(self) -> int:
        return len(self.bids)

    def array(self) -> np.ndarray:
        return np.asarray(self.bids, dtype=float)


class AuctionOutcome(BaseModel):
    """assignment[k] is the agent in slot k; slot_of[i] is agent i's slot."""

    model_config = ConfigDict(frozen=True)

    assignment: tuple[int, ...]
    slot_of: tuple[int, ...]
    payments: tuple[float, ...]
    clicks: tuple[float, ...]

    @model_validator(mode="after")
    def _bijection(self) -> AuctionOutcome:
        n = len(self.assignment)
        if sorted(self.assignment) != list(range(n)):
            raise ValueError("assignment must be a permutation of the agents")
        if len(self.slot_of) != n or any(self.assignment[s] != i for i, s in enumerate(self.slot_of)):
            raise ValueError("slot_of must be the inverse of assignment")
        if len(self.payments) != n or len(self.clicks) != n:
            raise ValueError("payments and clicks need one entry per agent")
        return self


@dataclass(frozen=True)
class NormalizedInstance:
    values: ValueProfile
    ctrs: CtrProfile
    bids: BidProfile | None
    n_agents: int
    n_slots: int


def normalize_instance(
    values: Sequence[float],
    ctrs: Sequence[float],
    bids: Sequence[float] | None = None,
) -> NormalizedInstance:
    """Pad to a square instance with zero-CTR slots or zero-value, zero-bid agents."""
    if bids is not None and len(bids) != len(values):
        raise ShapeError(f"{len(bids)} bids for {len(values)} agents")
    n = max(len(values), len(ctrs))
    pad_agents = [0.0] * (n - len(values))
    padded_bids = None if bids is None else BidProfile.of(*bids, *pad_agents)
    if n != len(values) or n != len(ctrs):
        logger.debug("padded instance from %d agents x %d slots to %d", len(values), len(ctrs), n)
    return NormalizedInstance(
        values=ValueProfile.of(*values, *pad_agents),
        ctrs=CtrProfile.of(*ctrs, *([0.0] * (n - len(ctrs)))),
        bids=padded_bids,
        n_agents=len(values),
        n_slots=len(ctrs),
    )


def gsp_kernel(bid_rows: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Allocation and prices for a batch of bid profiles of shape (..., n).

    Returns (assignment, slot_of, prices), each of shape (..., n).
    """
    bids = np.asarray(bid_rows, dtype=float)
    assignment = np.argsort(-bids, axis=-1, kind="stable")
    ordered = np.take_along_axis(bids, assignment, axis=-1)
    below = np.zeros_like(ordered)
    below[..., :-1] = ordered[..., 1:]
    slot_of = np.argsort(assignment, axis=-1, kind="stable")
    prices = np.take_along_axis(below, slot_of, axis=-1)
    return assignment, slot_of, prices


def utility_kernel(bid_rows: np.ndarray, values: np.ndarray, alphas: np.ndarray) -> np.ndarray:
    _, slot_of, prices = gsp_kernel(bid_rows)
    return alphas[slot_of] * (values - prices)


def welfare_kernel(bid_rows: np.ndarray, values: np.ndarray, alphas: np.ndarray) -> np.ndarray:
    _, slot_of, _ = gsp_kernel(bid_rows)
    return (alphas[slot_of] * values).sum(axis=-1)


def optimal_welfare_kernel(value_rows: np.ndarray, alphas: np.ndarray) -> np.ndarray:
    ordered = -np.sort(-np.asarray(value_rows, dtype=float), axis=-1)
    return (ordered * alphas).sum(axis=-1)


def excluded_bids_kernel(bid_rows: np.ndarray, agent: int) -> np.ndarray:
    """Bid of the occupant of each slot when `agent` sits out, shape (P, n).

    The last slot always holds the virtual zero-bid agent.
    """
    bids = np.atleast_2d(np.asarray(bid_rows, dtype=float))
    others = np.delete(bids, agent, axis=1)
    ordered = -np.sort(-others, axis=1)
    return np.concatenate([ordered, np.zeros((bids.shape[0], 1))], axis=1)


def counterfactual_utilities(
    bid_rows: np.ndarray,
    own_values: np.ndarray,
    alphas: np.ndarray,
    levels: np.ndarray,
    agents: np.ndarray | None = None,
) -> np.ndarray:
    """Utility of each listed agent for each alternative bid, opponents held fixed.

    bid_rows: (P, n) realized profiles. agents: (m,) agent indices, default all.
    levels: (m, K) alternative bids per listed agent. own_values: (m,).
    Returns (P, m, K).
    """
    bids = np.atleast_2d(np.asarray(bid_rows, dtype=float))
    n = bids.shape[1]
    agents = np.arange(n) if agents is None else np.asarray(agents, dtype=int)
    levels = np.atleast_2d(np.asarray(levels, dtype=float))
    own_values = np.asarray(own_values, dtype=float)

    index = np.arange(n)
    others = agents[:, None] != index[None, :]
    ahead_on_tie = index[None, :] < agents[:, None]

    x = levels[None, :, :, None]
    b = bids[:, None, None, :]
    beats = (b > x) | ((b == x) & ahead_on_tie[None, :, None, :])
    beats &= others[None, :, None, :]
    slot = beats.sum(axis=-1)

    masked = np.where(others[None, :, :], bids[:, None, :], -1.0)
    below = np.maximum(-np.sort(-masked, axis=-1), 0.0)
    price = np.take_along_axis(below, slot, axis=-1)
    return alphas[slot] * (own_values[None, :, None] - price)


def _same_length(what: str, *sizes: int) -> int:
    if len(set(sizes)) != 1:
        raise ShapeError(f"{what}: lengths differ {sizes}; pad with normalize_instance first")
    return sizes[0]


def _check_agent(agent: int, n: int) -> None:
    if not 0 <= agent < n:
        raise ShapeError(f"agent index {agent} out of range for {n} agents")


def _check_bijection(assignment: Sequence[int], n: int) -> None:
    if len(assignment) != n or sorted(assignment) != list(range(n)):
        raise ShapeError(f"assignment {tuple(assignment)} is not a bijection onto {n} slots")


def run_gsp(bids: BidProfile, ctrs: CtrProfile) -> AuctionOutcome:
    _same_length("run_gsp", bids.n, ctrs.n)
    alphas = ctrs.array()
    assignment, slot_of, prices = gsp_kernel(bids.array())
    return AuctionOutcome(
        assignment=tuple(int(a) for a in assignment),
        slot_of=tuple(int(s) for s in slot_of),
        payments=tuple(float(p) for p in prices),
        clicks=tuple(float(alphas[s]) for s in slot_of),
    )


def utility(agent: int, values: ValueProfile, outcome: AuctionOutcome) -> float:
    _check_agent(agent, len(outcome.slot_of))
    _same_length("utility", values.n, len(outcome.slot_of))
    return outcome.clicks[agent] * (values.values[agent] - outcome.payments[agent])


def social_welfare(assignment: Sequence[int], values: ValueProfile, ctrs: CtrProfile) -> float:
    n = _same_length("social_welfare", values.n, ctrs.n)
    _check_bijection(assignment, n)
    return float(sum(a * values.values[i] for a, i in zip(ctrs.alphas, assignment)))


def optimal_assignment(values: ValueProfile, ctrs: CtrProfile) -> tuple[int, ...]:
    """Assortative matching: the k-th highest value gets slot k, ties by index."""
    _same_length("optimal_assignment", values.n, ctrs.n)
    return tuple(int(i) for i in np.argsort(-values.array(), kind="stable"))


def optimal_slots(values: ValueProfile, ctrs: CtrProfile) -> tuple[int, ...]:
    """nu(v, i): the slot agent i holds in the optimal assignment."""
    assignment = optimal_assignment(values, ctrs)
    slots = [0] * len(assignment)
    for k, i in enumerate(assignment):
        slots[i] = k
    return tuple(slots)


def optimal_welfare(values: ValueProfile, ctrs: CtrProfile) -> float:
    return social_welfare(optimal_assignment(values, ctrs), values, ctrs)


def assignment_excluding(agent: int, bids: BidProfile, ctrs: CtrProfile) -> tuple[int | None, ...]:
    """pi^i: slot -> agent when `agent` does not participate; None is the virtual zero bid."""
    n = _same_length("assignment_excluding", bids.n, ctrs.n)
    _check_agent(agent, n)
    order = [int(j) for j in np.argsort(-bids.array(), kind="stable") if j != agent]
    return (*order, None)


def excluded_slot_bids(agent: int, bids: BidProfile, ctrs: CtrProfile) -> tuple[float, ...]:
    """b_{pi^i(b_-i, k)} for every slot k."""
    occupants = assignment_excluding(agent, bids, ctrs)
    return tuple(0.0 if j is None else bids.bids[j] for j in occupants)


def restricted_welfare(
    subset: Iterable[int],
    assignment: Sequence[int] | None,
    values: ValueProfile,
    ctrs: CtrProfile,
    optimal: bool = False,
) -> float:
    """SW_N of an assignment, or OPT_N (best placement of N alone) with `optimal`."""
    n = _same_length("restricted_welfare", values.n, ctrs.n)
    members = list(subset)
    if len(set(members)) != len(members) or any(not 0 <= i < n for i in members):
        raise ShapeError(f"invalid agent subset {members} for {n} agents")
    if optimal:
        ordered = sorted((values.values[i] for i in members), reverse=True)
        return float(sum(a * v for a, v in zip(ctrs.alphas, ordered)))
    if assignment is None:
        raise ShapeError("restricted_welfare needs an assignment unless optimal is set")
    _check_bijection(assignment, n)
    slot_of = {agent: k for k, agent in enumerate(assignment)}
    return float(sum(values.values[i] * ctrs.alphas[slot_of[i]] for i in members))
