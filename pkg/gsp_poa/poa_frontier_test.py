import numpy as np
import pytest

from .auction_core import BidProfile, CtrProfile, ValueProfile
from .equilibria import BidGrid, check_pure_ne
from .errors import DomainViolation, ShapeError
from .poa_frontier import (
    ARGMAX_CASE_I,
    ARGMAX_CASE_II,
    THREE_SLOT_POA,
    CaseTag,
    maximize_3slot,
    maximize_cyclic,
    padding_candidates,
    poa_case_i,
    poa_case_ii,
    poa_cyclic,
    symmetry_map,
    tight_instance_3slot,
)


def random_ctrs(count, seed):
    rng = np.random.default_rng(seed)
    for _ in range(count):
        a2, a3 = np.sort(rng.uniform(0.01, 0.99, size=2))[::-1]
        yield CtrProfile.of(1.0, a2, a3)


def test_case_i_examples():
    assert poa_case_i(CtrProfile.of(*ARGMAX_CASE_I)) == pytest.approx(THREE_SLOT_POA, abs=1e-4)
    assert poa_case_i(CtrProfile.of(1, 1, 1)) == pytest.approx(1.0, abs=1e-12)
    for c in (0.01, 3.0, 250.0):
        scaled = CtrProfile.of(*(c * a for a in ARGMAX_CASE_I))
        assert poa_case_i(scaled) == pytest.approx(poa_case_i(CtrProfile.of(*ARGMAX_CASE_I)), abs=1e-12)


def test_case_i_rejects_vanishing_alpha_2():
    with pytest.raises(DomainViolation):
        poa_case_i(CtrProfile.of(1.0, 0.0, 0.0))
    with pytest.raises(ShapeError):
        poa_case_i(CtrProfile.of(1.0, 0.5))


def test_case_ii_examples():
    assert poa_case_ii(CtrProfile.of(*ARGMAX_CASE_II)) == pytest.approx(THREE_SLOT_POA, abs=1e-3)
    # (1, .5, .5): numerator 2 + 1 + .5, denominator 1 + 1 + 1
    assert poa_case_ii(CtrProfile.of(1.0, 0.5, 0.5)) == pytest.approx(7 / 6, abs=1e-12)
    assert np.isfinite(poa_case_ii(CtrProfile.of(1.0, 1.0 - 1e-6, 0.2)))
    with pytest.raises(DomainViolation):
        poa_case_ii(CtrProfile.of(1.0, 1.0, 0.2))
    with pytest.raises(DomainViolation):
        poa_case_ii(CtrProfile.of(1.0, 1.0, 1.0))


def test_objectives_are_homogeneous():
    for ctrs in random_ctrs(50, seed=1):
        scaled = CtrProfile.of(*(7.5 * a for a in ctrs.alphas))
        assert poa_case_i(scaled) == pytest.approx(poa_case_i(ctrs), abs=1e-12)
        assert poa_case_ii(scaled) == pytest.approx(poa_case_ii(ctrs), abs=1e-12)


@pytest.mark.parametrize("n", range(5, 9))
def test_cyclic_objective_is_homogeneous(n):
    draws = np.random.default_rng(n)
    for _ in range(20):
        ctrs = CtrProfile.of(1.0, *np.sort(draws.uniform(0.05, 1.0, n - 1))[::-1])
        for c in (0.02, 7.5):
            scaled = CtrProfile.of(*(c * a for a in ctrs.alphas))
            assert poa_cyclic(scaled) == pytest.approx(poa_cyclic(ctrs), rel=1e-12)


def test_symmetry_map_examples():
    mapped = symmetry_map(CtrProfile.of(*ARGMAX_CASE_I))
    assert mapped.alphas == pytest.approx((1.0, 0.5296, 0.1460), abs=1e-3)
    assert mapped.alphas == pytest.approx(ARGMAX_CASE_II, abs=1e-3)
    assert symmetry_map(CtrProfile.of(1, 1, 0)).alphas == (1.0, 1.0, 1.0)
    with pytest.raises(DomainViolation):
        symmetry_map(CtrProfile.of(1, 0, 0))


def test_symmetry_identity_on_random_profiles():
    for ctrs in random_ctrs(1000, seed=2):
        assert abs(poa_case_ii(symmetry_map(ctrs)) - poa_case_i(ctrs)) <= 1e-9


def test_cyclic_objective():
    for ctrs in random_ctrs(20, seed=3):
        assert poa_cyclic(ctrs) == poa_case_i(ctrs)
    assert poa_cyclic(CtrProfile.of(0.4, 0.4, 0.4, 0.4)) == pytest.approx(1.0, abs=1e-12)
    with pytest.raises(ShapeError):
        poa_cyclic(CtrProfile.of(1.0, 0.5))
    with pytest.raises(DomainViolation):
        poa_cyclic(CtrProfile.of(1.0, 0.5, 0.0, 0.0))


def test_tail_padding_keeps_the_three_slot_value():
    three = poa_case_i(CtrProfile.of(*ARGMAX_CASE_I))
    for n in range(3, 9):
        candidates = padding_candidates(n)
        assert set(candidates) == {"tail", "head", "sorted"}
        assert all(c.n == n for c in candidates.values())
        assert poa_cyclic(candidates["tail"]) == pytest.approx(three, abs=1e-12)


def test_diagonal_stays_below_the_optimum():
    sweep = [poa_case_i(CtrProfile.of(1.0, t, t)) for t in np.linspace(0.01, 1.0, 1000)]
    assert max(sweep) <= 1.25 + 1e-12
    assert max(sweep) < THREE_SLOT_POA - 1e-3


@pytest.mark.parametrize("case, argmax, tolerance", [("i", ARGMAX_CASE_I, 2e-3), ("ii", ARGMAX_CASE_II, 3e-3)])
def test_maximize_3slot_finds_the_optimum(case, argmax, tolerance):
    tag = CaseTag.CASE_I if case == "i" else CaseTag.CASE_II
    result = maximize_3slot(tag, resolution=300, restarts=8, seed=0)
    assert result.best.case is tag
    assert result.best.value == pytest.approx(THREE_SLOT_POA, abs=1e-4)
    assert result.best.ctrs.alphas == pytest.approx(argmax, abs=tolerance)
    assert result.best.value >= max(result.trace)
    assert result.best.value >= result.grid_best - 1e-6
    assert result.restarts == 8
    assert not result.certified


def test_maximize_3slot_is_deterministic():
    first = maximize_3slot("case_i", resolution=100, restarts=4, seed=5)
    again = maximize_3slot("case_i", resolution=100, restarts=4, seed=5)
    assert first == again


def test_maximize_3slot_rejects_the_cyclic_tag():
    with pytest.raises(ShapeError):
        maximize_3slot(CaseTag.CYCLIC, resolution=100)


def test_maximize_cyclic_at_three_slots_matches_case_i():
    result = maximize_cyclic(3, restarts=6, seed=0)
    assert result.best.value == pytest.approx(THREE_SLOT_POA, abs=1e-4)
    assert result.best.value >= max(result.trace)


def test_maximize_cyclic_five_slots_reaches_the_padded_value():
    result = maximize_cyclic(5, restarts=6, seed=0)
    padded = poa_cyclic(CtrProfile.of(1, 0.55079, 0.4704, 0.4704, 0.4704))
    assert result.best.value >= padded - 1e-9
    assert result.best.ctrs.n == 5


def test_tight_instance():
    instance = tight_instance_3slot()
    assert instance.ratio >= 1.25
    assert instance.ratio == pytest.approx(THREE_SLOT_POA, abs=1e-4)
    assert instance.max_gain <= 1e-3
    assert instance.bids.bids[0] == 0.0


def test_scaled_tight_instance_stays_an_equilibrium():
    instance = tight_instance_3slot()
    values = ValueProfile.of(*(10 * v for v in instance.values.values))
    bids = BidProfile.of(*(10 * b for b in instance.bids.bids))
    verdict = check_pure_ne(bids, values, instance.ctrs, BidGrid.uniform(values, 1000), epsilon=1e-2)
    assert verdict.is_equilibrium


@pytest.mark.slow
@pytest.mark.parametrize("case", ["case_i", "case_ii"])
def test_certified_3slot_optimum(case):
    result = maximize_3slot(case, resolution=2000, restarts=32, seed=0)
    assert result.certified
    assert result.best.value == pytest.approx(THREE_SLOT_POA, abs=1e-4)


@pytest.mark.slow
def test_cyclic_family_up_to_eight_slots():
    for n in range(3, 9):
        result = maximize_cyclic(n, restarts=32, seed=n)
        assert result.best.value >= THREE_SLOT_POA - 1e-4
