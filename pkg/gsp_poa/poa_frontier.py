"""
Closed-form welfare-loss objectives of the worst pure-NE allocations and
their numeric maximization.

With alpha_1 normalized to 1, the 3-slot cyclic allocation (agent 1 last,
agents 2 and 3 moved up one slot) has worst ratio

    (a1 + a2 (a1 - a3)/a1 + a3 (a2 - a3)/a2) / (a3 + (a1 - a3) + (a2 - a3))

after the Nash inequalities bound v2 and v3 in terms of v1; the other
cyclic allocation gives the case-ii expression. Both peak at 1.25913.
"""

from __future__ import annotations

import logging
from enum import Enum
from typing import Sequence

import numpy as np
from pydantic import BaseModel
from scipy.optimize import minimize

from . import rng
from .auction_core import BidProfile, CtrProfile, ValueProfile, optimal_welfare, run_gsp, social_welfare
from .equilibria import BidGrid, check_pure_ne
from .errors import ConstructionError, DomainViolation, InvariantBreach, ShapeError

logger = logging.getLogger(__name__)

GUARD = 1e-9
CERTIFY_SLACK = 1e-6
MIN_CERTIFIED_RESOLUTION = 1000
THREE_SLOT_POA = 1.25913
ARGMAX_CASE_I = (1.0, 0.55079, 0.4704)
ARGMAX_CASE_II = (1.0, 0.5295, 0.1458)


class CaseTag(str, Enum):
    CASE_I = "case_i"
    CASE_II = "case_ii"
    CYCLIC = "cyclic"


class PoaPoint(BaseModel):
    ctrs: CtrProfile
    value: float
    case: CaseTag


class OptimizerResult(BaseModel):
    best: PoaPoint
    evaluations: int
    restarts: int
    resolution: int
    grid_best: float
    trace: list[float]
    certified: bool


def _cyclic_bound(alphas: Sequence[float]) -> float:
    top, last = alphas[0], alphas[-1]
    if top <= 0:
        raise DomainViolation("alpha_1 must be positive")
    num, den = top, last
    for prev, cur in zip(alphas, alphas[1:]):
        if prev <= GUARD * top:
            raise DomainViolation(f"vanishing click-through rate {prev} in a denominator")
        num += cur * (prev - last) / prev
        den += prev - last
    if den <= GUARD * top:
        raise DomainViolation("denominator vanishes")
    return num / den


def _three(ctrs: CtrProfile) -> tuple[float, float, float]:
    if ctrs.n != 3:
        raise ShapeError(f"expected 3 slots, got {ctrs.n}")
    return ctrs.alphas


def poa_case_i(ctrs: CtrProfile) -> float:
    return _cyclic_bound(_three(ctrs))


def poa_case_ii(ctrs: CtrProfile) -> float:
    a1, a2, a3 = _three(ctrs)
    if a1 <= 0 or a1 - a2 <= GUARD * a1 or a1 - a3 <= GUARD * a1:
        raise DomainViolation("case ii needs alpha_1 strictly above alpha_2 and alpha_3")
    up2, up3 = a1 / (a1 - a2), a1 / (a1 - a3)
    return (a1 * up2 + a2 * up3 + a3) / (a2 * up2 + a3 * up3 + a1)


def poa_cyclic(ctrs: CtrProfile) -> float:
    """Bound for the allocation sigma(1) = n, sigma(i) = i - 1 on n >= 3 slots."""
    if ctrs.n < 3:
        raise ShapeError("the cyclic family starts at 3 slots")
    return _cyclic_bound(ctrs.alphas)


def symmetry_map(ctrs: CtrProfile) -> CtrProfile:
    """Case-i point to the case-ii point with the same objective value."""
    a1, a2, a3 = _three(ctrs)
    if a1 <= 0 or a2 <= GUARD * a1:
        raise DomainViolation("symmetry map needs alpha_2 > 0")
    a, c = a2 / a1, a3 / a1
    return CtrProfile.of(1.0, 1.0 - c, (a - c) / a)


def _surface(case: CaseTag, a2: np.ndarray, a3: np.ndarray) -> np.ndarray:
    """Objective on the alpha_1 = 1 plane; -inf where undefined or unordered."""
    with np.errstate(divide="ignore", invalid="ignore"):
        if case is CaseTag.CASE_I:
            ok = (a3 <= a2) & (a2 > GUARD)
            value = (1 + a2 * (1 - a3) + a3 * (a2 - a3) / a2) / (1 + a2 - a3)
        else:
            ok = (a3 <= a2) & (1 - a2 > GUARD)
            up2, up3 = 1 / (1 - a2), 1 / (1 - a3)
            value = (up2 + a2 * up3 + a3) / (a2 * up2 + a3 * up3 + 1)
    return np.where(ok, value, -np.inf)


def _evaluate(case: CaseTag, alphas: Sequence[float]) -> float:
    profile = CtrProfile.of(*alphas)
    if case is CaseTag.CASE_I:
        return poa_case_i(profile)
    if case is CaseTag.CASE_II:
        return poa_case_ii(profile)
    return poa_cyclic(profile)


def _chain(x: np.ndarray) -> list[float] | None:
    """alpha_1 = 1 and alpha_{k+1} = alpha_k * x_k; None outside the unit box."""
    if ((x < 0) | (x > 1)).any():
        return None
    alphas = [1.0]
    for t in x:
        alphas.append(alphas[-1] * float(t))
    return alphas


def _ratios(alphas: Sequence[float]) -> np.ndarray:
    a = np.asarray(alphas, dtype=float)
    return np.divide(a[1:], a[:-1], out=np.zeros(len(a) - 1), where=a[:-1] > 0)


def _refine(case: CaseTag, starts: list[np.ndarray]) -> tuple[list[float], float, list[float], int]:
    evaluations = 0

    def loss(x: np.ndarray) -> float:
        nonlocal evaluations
        evaluations += 1
        alphas = _chain(x)
        if alphas is None:
            return np.inf
        try:
            return -_evaluate(case, alphas)
        except DomainViolation:
            return np.inf

    best_x, best_value, trace = None, -np.inf, []
    for start in starts:
        found = minimize(loss, start, method="Nelder-Mead", options={"xatol": 1e-10, "fatol": 1e-14, "maxiter": 4000})
        value = -float(found.fun)
        trace.append(value)
        if value > best_value:
            best_x, best_value = found.x, value
    return _chain(best_x), best_value, trace, evaluations


def _random_starts(dim: int, count: int, seed: int) -> list[np.ndarray]:
    return [rng.stream(seed, rng.RESTARTS, r).random(dim) for r in range(count)]


def maximize_3slot(
    case: CaseTag | str,
    resolution: int = 2000,
    restarts: int = 32,
    seed: int = 0,
) -> OptimizerResult:
    """Grid scan of the ordered (alpha_2, alpha_3) triangle, then Nelder-Mead.

    Half the restarts start at the best grid cells and half at seeded random
    points. The grid must not beat the refined optimum by more than 1e-6.
    """
    case = CaseTag(case)
    if case is CaseTag.CYCLIC:
        raise ShapeError("use maximize_cyclic for the n-slot family")
    if resolution < 2 or restarts < 1:
        raise ShapeError("resolution must be at least 2 and restarts at least 1")
    axis = np.linspace(0.0, 1.0, resolution)
    a2, a3 = np.meshgrid(axis, axis, indexing="ij")
    surface = _surface(case, a2, a3).ravel()
    grid_best = float(surface.max())
    seeded = max(1, restarts // 2)
    top = np.argsort(-surface, kind="stable")[:seeded]
    starts = [_ratios((1.0, a2.ravel()[k], a3.ravel()[k])) for k in top]
    starts += _random_starts(2, restarts - seeded, seed)
    alphas, value, trace, evaluations = _refine(case, starts)
    if grid_best > value + CERTIFY_SLACK:
        raise InvariantBreach("optimizer dominates the certification grid", f"grid {grid_best} > refined {value}")
    certified = resolution >= MIN_CERTIFIED_RESOLUTION
    if not certified:
        logger.warning("resolution %d is below the certification threshold %d", resolution, MIN_CERTIFIED_RESOLUTION)
    logger.info("%s maximum %.6f at %s", case.value, value, alphas)
    return OptimizerResult(
        best=PoaPoint(ctrs=CtrProfile.of(*alphas), value=value, case=case),
        evaluations=evaluations + surface.size,
        restarts=len(starts),
        resolution=resolution,
        grid_best=grid_best,
        trace=trace,
        certified=certified,
    )


def padding_candidates(n: int, alphas: Sequence[float] = ARGMAX_CASE_I) -> dict[str, CtrProfile]:
    """Orderings of the 3-slot optimum lifted to n slots.

    tail: (1, a2, a3, a3, ...); head: (1, ..., 1, a2, a3); sorted: the
    literal (a1, a2, 1, ..., 1) sorted into nonincreasing order.
    """
    if n < 3:
        raise ShapeError("padding starts at 3 slots")
    a1, a2, a3 = alphas
    literal = [a1, a2, *([1.0] * (n - 2))]
    return {
        "tail": CtrProfile.of(a1, a2, *([a3] * (n - 2))),
        "head": CtrProfile.of(*([a1] * (n - 2)), a2, a3),
        "sorted": CtrProfile.of(*sorted(literal, reverse=True)),
    }


def maximize_cyclic(n: int, restarts: int = 32, seed: int = 0) -> OptimizerResult:
    """Multi-start Nelder-Mead on the cyclic n-slot objective.

    Starts include the padded 3-slot optima; the rest are seeded random.
    """
    if n < 3:
        raise ShapeError("the cyclic family starts at 3 slots")
    starts = [_ratios(c.alphas) for c in padding_candidates(n).values()]
    starts += _random_starts(n - 1, max(restarts - len(starts), 0), seed)
    alphas, value, trace, evaluations = _refine(CaseTag.CYCLIC, starts)
    logger.info("cyclic n=%d maximum %.6f", n, value)
    return OptimizerResult(
        best=PoaPoint(ctrs=CtrProfile.of(*alphas), value=value, case=CaseTag.CYCLIC),
        evaluations=evaluations,
        restarts=len(starts),
        resolution=0,
        grid_best=max(trace),
        trace=trace,
        certified=False,
    )


class TightInstance(BaseModel):
    values: ValueProfile
    ctrs: CtrProfile
    bids: BidProfile
    ratio: float
    max_gain: float


def tight_instance_3slot(
    alphas: Sequence[float] = ARGMAX_CASE_I,
    verify_points: int = 1000,
    epsilon: float = 1e-3,
) -> TightInstance:
    """Pure NE whose allocation puts agent 0 last and agents 1, 2 one slot up.

    Values sit on the Nash-inequality boundary; the profile is checked
    against every deviation on a `verify_points` grid.
    """
    ctrs = CtrProfile.of(*alphas)
    a1, a2, a3 = _three(ctrs)
    if a1 <= 0 or a2 <= 0:
        raise DomainViolation("tight instance needs alpha_1, alpha_2 > 0")
    values = ValueProfile.of(1.0, (a1 - a3) / a1, (a2 - a3) / a2)
    bids = BidProfile.of(0.0, values.values[1], values.values[2])
    verdict = check_pure_ne(bids, values, ctrs, BidGrid.uniform(values, verify_points), epsilon)
    if not verdict.is_equilibrium:
        raise ConstructionError(
            "tight instance is a pure NE",
            f"agent {verdict.worst_agent} gains {verdict.worst_gain} by bidding {verdict.worst_deviation}",
        )
    welfare = social_welfare(run_gsp(bids, ctrs).assignment, values, ctrs)
    return TightInstance(
        values=values,
        ctrs=ctrs,
        bids=bids,
        ratio=optimal_welfare(values, ctrs) / welfare,
        max_gain=verdict.worst_gain,
    )
