import math
from fractions import Fraction

import pytest
from hypothesis import given
from hypothesis import strategies as st

from hubplatoon.errors import InfeasibleError, InternalConsistencyError, InvalidArgumentError
from hubplatoon.network import Route, RoadSegment, Truck
from hubplatoon.reward import (
    EconomicParams,
    PartnerCounts,
    PartnerPrediction,
    average_platoon_profit,
    count_partners,
    delta_f,
    potential_partners,
    predicted_partners,
    stage_reward,
    terminal_reward,
)

ECON = EconomicParams()
TOL = 1e-9


def _truck(tid, hubs, fleet=0):
    edges = tuple(RoadSegment(a, b, 600) for a, b in zip(hubs, hubs[1:]))
    route = Route(edges)
    return Truck(tid, fleet, route, 0, route.travel_time * 2)


class TestPotentialPartners:
    def test_shared_ordered_edge(self):
        i = _truck(0, (0, 1, 2))
        j = _truck(1, (5, 1, 2))
        assert potential_partners(i, 1, [i, j]) == {1}

    def test_disjoint_routes(self):
        i = _truck(0, (0, 1))
        j = _truck(1, (2, 3))
        assert potential_partners(i, 0, [i, j]) == set()

    def test_reverse_direction_is_not_a_partner(self):
        i = _truck(0, (0, 1))
        j = _truck(1, (1, 0))
        assert potential_partners(i, 0, [i, j]) == set()

    def test_never_returns_self(self):
        i = _truck(0, (0, 1))
        assert 0 not in potential_partners(i, 0, [i, _truck(1, (0, 1))])

    def test_stage_out_of_range(self):
        i = _truck(0, (0, 1))
        with pytest.raises(InvalidArgumentError):
            potential_partners(i, 1, [i])


class TestPredictedPartners:
    def test_exact_match(self):
        assert predicted_partners(100, 20, [PartnerPrediction(7, 0, 120)]) == {7}

    def test_off_by_one_misses(self):
        cands = [PartnerPrediction(1, 0, 119), PartnerPrediction(2, 0, 121)]
        assert predicted_partners(100, 20, cands) == set()

    def test_several_at_same_second(self):
        cands = [PartnerPrediction(j, 0, 120) for j in (1, 2, 3)] + [PartnerPrediction(4, 0, 130)]
        assert predicted_partners(100, 20, cands) == {1, 2, 3}


class TestDeltaF:
    @pytest.mark.parametrize(
        "same, other, expected",
        [(0, 1, 0.5), (1, 0, 1.0), (1, 1, 5 / 6)],
    )
    def test_hand_values(self, same, other, expected):
        assert delta_f(PartnerCounts(same, other), False) == pytest.approx(expected, abs=TOL)

    def test_empty(self):
        assert delta_f(PartnerCounts(0, 0), True) == 0.0

    def test_nonempty_with_zero_counts(self):
        with pytest.raises(InternalConsistencyError):
            delta_f(PartnerCounts(0, 0), False)

    def test_empty_with_counts(self):
        with pytest.raises(InternalConsistencyError):
            delta_f(PartnerCounts(1, 0), True)

    @given(st.integers(0, 50), st.integers(0, 50))
    def test_bounded(self, same, other):
        if same + other == 0:
            return
        value = delta_f(PartnerCounts(same, other), False)
        assert 0.0 <= value <= 1.0
        assert (value == 1.0) == (other == 0)

    def test_strictly_increasing_in_same_fleet(self):
        for other in range(1, 51):
            values = [delta_f(PartnerCounts(s, other), False) for s in range(0, 51)]
            assert all(b > a for a, b in zip(values, values[1:]))

    def test_matches_exact_rational(self):
        for s in range(0, 20):
            for o in range(0, 20):
                if s + o == 0:
                    continue
                n = s + o
                exact = 1 - Fraction(o, (n + 1) * n)
                assert delta_f(PartnerCounts(s, o), False) == pytest.approx(float(exact), abs=1e-15)


def _expanded_increment(same, other, xi_tau):
    # Fleet profit after joining minus fleet profit before, with even sharing.
    n = same + other
    after = xi_tau * (n / (n + 1)) * (same + 1)
    before = xi_tau * ((n - 1) / n) * same
    return after - before


def test_closed_form_equals_expanded_difference():
    xi_tau = ECON.platoon_benefit_rate * 1.0
    for same in range(0, 51):
        for other in range(0, 51):
            if same + other == 0:
                continue
            closed = xi_tau * delta_f(PartnerCounts(same, other), False)
            assert abs(closed - _expanded_increment(same, other, xi_tau)) <= 1e-12


class TestStageReward:
    def test_empty(self):
        assert stage_reward(3600, PartnerCounts(0, 0), True, ECON) == 0.0

    def test_one_other_fleet_partner_one_hour(self):
        assert stage_reward(3600, PartnerCounts(0, 1), False, ECON) == pytest.approx(2.80, abs=TOL)

    def test_one_same_fleet_partner_half_hour(self):
        assert stage_reward(1800, PartnerCounts(1, 0), False, ECON) == pytest.approx(2.80, abs=TOL)

    def test_nonpositive_travel_time(self):
        with pytest.raises(InvalidArgumentError):
            stage_reward(0, PartnerCounts(1, 0), False, ECON)

    @given(st.integers(1, 50), st.integers(60, 36000))
    def test_same_fleet_only_gives_full_benefit(self, same, tau):
        # A fleet-only platoon gains a whole follower's worth per added truck.
        independent = ECON.platoon_benefit_rate * tau / 3600
        assert stage_reward(tau, PartnerCounts(same, 0), False, ECON) == pytest.approx(independent, abs=TOL)


class TestTerminalReward:
    def test_no_wait(self):
        assert terminal_reward(40000, 36000, 4000, 25.0) == 0.0

    def test_fifteen_minutes(self):
        assert terminal_reward(36000 + 3600 + 900, 36000, 3600, 25.0) == pytest.approx(-6.25, abs=TOL)

    @given(st.integers(0, 100000))
    def test_zero_rate(self, wait):
        assert terminal_reward(1000 + wait, 0, 1000, 0.0) == 0.0

    def test_arrival_too_early(self):
        with pytest.raises(InfeasibleError):
            terminal_reward(1000, 0, 1001, 25.0)

    @given(st.integers(0, 20000), st.integers(0, 20000), st.floats(0, 100))
    def test_nonpositive_and_linear(self, a, b, rate):
        ra = terminal_reward(a, 0, 0, rate)
        rb = terminal_reward(b, 0, 0, rate)
        rab = terminal_reward(a + b, 0, 0, rate)
        assert ra <= 0 and rb <= 0
        assert rab == pytest.approx(ra + rb, abs=1e-9)


class TestAveragePlatoonProfit:
    def test_single_truck(self):
        assert average_platoon_profit(1, 3600, ECON) == 0.0

    def test_pair(self):
        assert average_platoon_profit(2, 3600, ECON) == pytest.approx(2.8, abs=TOL)

    def test_large_platoon_approaches_full_benefit(self):
        assert math.isclose(average_platoon_profit(10**6, 3600, ECON), 5.6, rel_tol=1e-5)

    def test_invalid_size(self):
        with pytest.raises(InvalidArgumentError):
            average_platoon_profit(0, 3600, ECON)


def test_count_partners_splits_by_fleet():
    matched = [PartnerPrediction(1, 3, 0), PartnerPrediction(2, 4, 0), PartnerPrediction(5, 3, 0)]
    assert count_partners(matched, 3) == PartnerCounts(2, 1)


def test_economics_round_trip_and_defaults():
    assert ECON.to_dict() == {"xi_per_follower_h": 5.6, "fuel_saving_fraction": 0.10, "epsilon_per_h": 25.0}
    assert EconomicParams.from_dict(ECON.to_dict()) == ECON
    with pytest.raises(InvalidArgumentError):
        EconomicParams(platoon_benefit_rate=-1)
