import itertools

import numpy as np
import pytest
from pydantic import ValidationError

from .auction_core import (
    BidProfile,
    CtrProfile,
    ValueProfile,
    assignment_excluding,
    counterfactual_utilities,
    excluded_bids_kernel,
    excluded_slot_bids,
    normalize_instance,
    optimal_assignment,
    optimal_slots,
    optimal_welfare,
    restricted_welfare,
    run_gsp,
    social_welfare,
    utility,
    utility_kernel,
)
from .errors import ShapeError

TOL = 1e-9


def sort_and_shift(bids):
    """Independent oracle: order by (-bid, index), charge the next bid down."""
    order = sorted(range(len(bids)), key=lambda i: (-bids[i], i))
    payments = [0.0] * len(bids)
    for k, agent in enumerate(order[:-1]):
        payments[agent] = bids[order[k + 1]]
    return tuple(order), tuple(payments)


def brute_force_opt(values, alphas):
    return max(
        sum(a * values[i] for a, i in zip(alphas, perm))
        for perm in itertools.permutations(range(len(values)))
    )


def random_instance(rng, n):
    alphas = np.sort(rng.random(n))[::-1]
    return CtrProfile.of(*alphas), ValueProfile.of(*rng.random(n))


def test_run_gsp_next_bid_pricing():
    outcome = run_gsp(BidProfile.of(0.9, 0.5, 0.2), CtrProfile.of(1.0, 0.6, 0.3))
    assert outcome.assignment == (0, 1, 2)
    assert outcome.payments == (0.5, 0.2, 0.0)
    assert outcome.clicks == (1.0, 0.6, 0.3)


def test_run_gsp_all_zero_bids_break_ties_by_index():
    outcome = run_gsp(BidProfile.of(0, 0, 0), CtrProfile.of(0.7, 0.2, 0.1))
    assert outcome.assignment == (0, 1, 2)
    assert outcome.payments == (0.0, 0.0, 0.0)


def test_run_gsp_symmetric_bids_lower_index_wins():
    outcome = run_gsp(BidProfile.of(1, 1), CtrProfile.of(1, 0.5))
    assert outcome.slot_of == (0, 1)
    assert outcome.payments == (1.0, 0.0)


def test_run_gsp_rejects_length_mismatch():
    with pytest.raises(ShapeError):
        run_gsp(BidProfile.of(1, 2, 3), CtrProfile.of(1, 0.5))


def test_profiles_validate_their_invariants():
    with pytest.raises(ValidationError):
        CtrProfile.of(0.5, 1.0)
    with pytest.raises(ValidationError):
        ValueProfile.of(1.0, -0.1)
    with pytest.raises(ValidationError):
        BidProfile(bids=())


def test_run_gsp_matches_sort_and_shift_oracle():
    rng = np.random.default_rng(7)
    for _ in range(2000):
        n = int(rng.integers(1, 11))
        # coarse bids so ties actually happen
        bids = tuple(float(b) for b in rng.integers(0, 5, size=n) / 4)
        ctrs = CtrProfile.of(*np.sort(rng.random(n))[::-1])
        outcome = run_gsp(BidProfile(bids=bids), ctrs)
        order, payments = sort_and_shift(bids)
        assert outcome.assignment == order
        assert outcome.payments == payments
        for k in range(n - 1):
            assert bids[outcome.assignment[k]] >= bids[outcome.assignment[k + 1]]
        assert all(p <= b for p, b in zip(outcome.payments, bids))


@pytest.mark.slow
def test_run_gsp_matches_oracle_at_acceptance_scale():
    rng = np.random.default_rng(11)
    for _ in range(10_000):
        n = int(rng.integers(1, 11))
        bids = tuple(float(b) for b in rng.random(n))
        outcome = run_gsp(BidProfile(bids=bids), CtrProfile.of(*np.sort(rng.random(n))[::-1]))
        assert (outcome.assignment, outcome.payments) == sort_and_shift(bids)


def test_utility_examples():
    outcome = run_gsp(BidProfile.of(0.9, 0.5, 0.2), CtrProfile.of(1.0, 0.6, 0.3))
    values = ValueProfile.of(1.0, 0.8, 0.5)
    got = [utility(i, values, outcome) for i in range(3)]
    assert got == pytest.approx([0.5, 0.36, 0.15], abs=TOL)


def test_utility_zero_margin_and_zero_clicks():
    outcome = run_gsp(BidProfile.of(0.9, 0.5), CtrProfile.of(1.0, 0.0))
    assert utility(0, ValueProfile.of(0.5, 0.5), outcome) == 0.0
    assert utility(1, ValueProfile.of(0.5, 0.5), outcome) == 0.0
    with pytest.raises(ShapeError):
        utility(2, ValueProfile.of(0.5, 0.5), outcome)


def test_individual_rationality_without_overbidding():
    rng = np.random.default_rng(3)
    for _ in range(500):
        n = int(rng.integers(1, 8))
        ctrs, values = random_instance(rng, n)
        bids = BidProfile.of(*(values.array() * rng.random(n)))
        outcome = run_gsp(bids, ctrs)
        assert all(utility(i, values, outcome) >= 0 for i in range(n))


def test_social_welfare_examples():
    values, ctrs = ValueProfile.of(3, 2, 1), CtrProfile.of(3, 2, 1)
    assert social_welfare((0, 1, 2), values, ctrs) == 14
    assert brute_force_opt(values.values, ctrs.alphas) == 14
    assert social_welfare((2, 0, 1), values, CtrProfile.of(0, 0, 0)) == 0
    assert social_welfare((0,), ValueProfile.of(2.5), CtrProfile.of(0.4)) == pytest.approx(1.0)
    with pytest.raises(ShapeError):
        social_welfare((0, 0, 1), values, ctrs)


def test_optimal_assignment_is_assortative():
    values, ctrs = ValueProfile.of(1, 2, 3), CtrProfile.of(3, 2, 1)
    assert optimal_assignment(values, ctrs) == (2, 1, 0)
    assert optimal_slots(values, ctrs) == (2, 1, 0)
    assert optimal_assignment(ValueProfile.of(1, 1, 1), ctrs) == (0, 1, 2)
    assert optimal_assignment(ValueProfile.of(4), CtrProfile.of(1)) == (0,)


def test_optimal_welfare_examples():
    assert optimal_welfare(ValueProfile.of(1, 2, 3), CtrProfile.of(3, 2, 1)) == 14
    assert optimal_welfare(ValueProfile.of(0, 0, 0), CtrProfile.of(3, 2, 1)) == 0
    assert optimal_welfare(ValueProfile.of(0.2, 0.9, 0.4), CtrProfile.of(0.5, 0, 0)) == pytest.approx(0.45)


@pytest.mark.parametrize("n", [1, 2, 3, 4, 5, 6])
def test_optimal_welfare_equals_exhaustive_max(n):
    rng = np.random.default_rng(100 + n)
    for _ in range(60):
        ctrs, values = random_instance(rng, n)
        assert optimal_welfare(values, ctrs) == pytest.approx(brute_force_opt(values.values, ctrs.alphas), abs=TOL)


@pytest.mark.slow
def test_optimal_welfare_exhaustive_at_acceptance_scale():
    rng = np.random.default_rng(5)
    for _ in range(1000):
        n = int(rng.integers(1, 8))
        ctrs, values = random_instance(rng, n)
        assert optimal_welfare(values, ctrs) == pytest.approx(brute_force_opt(values.values, ctrs.alphas), abs=TOL)


def test_truthful_bidding_is_efficient_exactly():
    rng = np.random.default_rng(9)
    for _ in range(300):
        n = int(rng.integers(1, 9))
        ctrs, values = random_instance(rng, n)
        outcome = run_gsp(BidProfile(bids=values.values), ctrs)
        assert social_welfare(outcome.assignment, values, ctrs) == optimal_welfare(values, ctrs)


def test_swapping_agents_never_improves_assortative_welfare():
    rng = np.random.default_rng(21)
    for _ in range(100):
        n = int(rng.integers(2, 7))
        ctrs, values = random_instance(rng, n)
        best = list(optimal_assignment(values, ctrs))
        opt = optimal_welfare(values, ctrs)
        for a, b in itertools.combinations(range(n), 2):
            swapped = best.copy()
            swapped[a], swapped[b] = swapped[b], swapped[a]
            assert social_welfare(swapped, values, ctrs) <= opt + TOL


def test_scaling_bids_keeps_assignment_and_scales_payments():
    rng = np.random.default_rng(13)
    for _ in range(200):
        n = int(rng.integers(1, 8))
        ctrs, _ = random_instance(rng, n)
        bids = rng.random(n)
        c = float(rng.uniform(0.1, 10))
        base = run_gsp(BidProfile.of(*bids), ctrs)
        scaled = run_gsp(BidProfile.of(*(c * bids)), ctrs)
        assert scaled.assignment == base.assignment
        assert scaled.payments == pytest.approx([c * p for p in base.payments], abs=TOL)


def test_assignment_excluding_examples():
    bids, ctrs = BidProfile.of(0.9, 0.5, 0.2), CtrProfile.of(1, 0.6, 0.3)
    assert assignment_excluding(0, bids, ctrs) == (1, 2, None)
    assert excluded_slot_bids(0, bids, ctrs) == (0.5, 0.2, 0.0)
    assert assignment_excluding(0, BidProfile.of(0.3), CtrProfile.of(1)) == (None,)
    assert assignment_excluding(2, bids, ctrs)[:2] == run_gsp(bids, ctrs).assignment[:2]
    with pytest.raises(ShapeError):
        assignment_excluding(3, bids, ctrs)


def test_excluded_bids_kernel_matches_scalar_form():
    rng = np.random.default_rng(17)
    rows = rng.integers(0, 4, size=(50, 4)) / 3
    ctrs = CtrProfile.of(1, 0.5, 0.4, 0.1)
    for agent in range(4):
        batch = excluded_bids_kernel(rows, agent)
        for row, got in zip(rows, batch):
            assert tuple(got) == excluded_slot_bids(agent, BidProfile.of(*row), ctrs)


def test_restricted_welfare_examples():
    values, ctrs = ValueProfile.of(3, 2, 1), CtrProfile.of(3, 2, 1)
    assignment = (0, 1, 2)
    assert restricted_welfare(range(3), assignment, values, ctrs) == social_welfare(assignment, values, ctrs)
    assert restricted_welfare([], assignment, values, ctrs) == 0
    assert restricted_welfare([1, 2], None, values, ctrs, optimal=True) == 8
    with pytest.raises(ShapeError):
        restricted_welfare([1, 1], assignment, values, ctrs)
    with pytest.raises(ShapeError):
        restricted_welfare([5], assignment, values, ctrs)


def test_counterfactual_utility_of_own_bid_is_the_realized_utility():
    rng = np.random.default_rng(23)
    n, k = 4, 9
    values = rng.random(n)
    alphas = np.sort(rng.random(n))[::-1]
    levels = np.linspace(0, 1, k)[None, :] * values[:, None]
    picks = rng.integers(0, k, size=(200, n))
    rows = levels[np.arange(n), picks]
    counter = counterfactual_utilities(rows, values, alphas, levels)
    realized = utility_kernel(rows, values, alphas)
    own = np.take_along_axis(counter, picks[:, :, None], axis=2)[:, :, 0]
    assert np.array_equal(own, realized)


def test_normalize_instance_pads_both_ways():
    more_agents = normalize_instance([3, 2, 1], [1.0, 0.5])
    assert more_agents.ctrs.alphas == (1.0, 0.5, 0.0)
    assert more_agents.n_slots == 2
    more_slots = normalize_instance([3], [1.0, 0.5], bids=[2])
    assert more_slots.values.values == (3.0, 0.0)
    assert more_slots.bids.bids == (2.0, 0.0)
    assert more_slots.n_agents == 1
