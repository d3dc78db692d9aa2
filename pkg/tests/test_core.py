"""Domain model: scoring, eligibility, ranking, quality, configuration."""

from __future__ import annotations

import pytest
from hypothesis import given, strategies as st

from contestsim import (ConfigurationError, ContestConfig, Post,
                        Ranking, RankEntry, WorkerProfile, compute_quality,
                        is_eligible, k_neighbours_view, rank_workers,
                        score_annotation, worker_utility)
from contestsim.core import EXACT_MATCH_MULTIPLIER


# --- scoring ---------------------------------------------------------------

def test_score_exact_match_earns_bonus_multiple():
    assert score_annotation(3, 3, 10) == 5 * 10
    assert EXACT_MATCH_MULTIPLIER == 5


def test_score_mismatch_earns_base_points():
    assert score_annotation(2, 3, 10) == 10
    assert score_annotation(7, 3, 10) == 10


def test_score_empty_annotation_earns_nothing():
    assert score_annotation(0, 3, 10) == 0
    # An empty annotation never scores, even when the post has no entities.
    assert score_annotation(0, 0, 10) == 0


@given(annotated=st.integers(0, 50), expected=st.integers(0, 50),
       base=st.integers(1, 100))
def test_score_range_is_three_valued(annotated, expected, base):
    assert score_annotation(annotated, expected, base) in (0, base, 5 * base)


def test_score_rejects_bad_inputs():
    with pytest.raises(ConfigurationError):
        score_annotation(-1, 3, 10)
    with pytest.raises(ConfigurationError):
        score_annotation(1, -3, 10)
    with pytest.raises(ConfigurationError):
        score_annotation(1, 3, 0)


# --- eligibility -----------------------------------------------------------

def test_eligibility_boundary_cases():
    assert is_eligible(1, 1) is True
    assert is_eligible(2, 1) is False
    assert is_eligible(10, 10) is True


@given(rank=st.integers(1, 200), spread=st.integers(1, 200))
def test_eligibility_monotone_in_rank_and_spread(rank, spread):
    if is_eligible(rank, spread):
        if rank > 1:
            assert is_eligible(rank - 1, spread)
        assert is_eligible(rank, spread + 1)


def test_eligibility_rejects_non_positive_arguments():
    with pytest.raises(ConfigurationError):
        is_eligible(0, 1)
    with pytest.raises(ConfigurationError):
        is_eligible(1, 0)


# --- ranking ---------------------------------------------------------------

def test_rank_workers_orders_by_score_then_stamp_then_id():
    ranking = rank_workers(
        scores={1: 50, 2: 50, 3: 100},
        last_scored_ms={1: 1000, 2: 500, 3: 2000},
    )
    assert [e.worker_id for e in ranking] == [3, 2, 1]
    assert ranking.rank_of(3) == 1
    assert ranking.rank_of(2) == 2
    assert ranking.rank_of(1) == 3


def test_rank_workers_never_scored_sorts_last():
    ranking = rank_workers(scores={1: 0, 2: 0},
                           last_scored_ms={1: None, 2: 300})
    assert [e.worker_id for e in ranking] == [2, 1]


def test_rank_workers_id_breaks_exact_ties():
    ranking = rank_workers(scores={5: 10, 2: 10},
                           last_scored_ms={5: 100, 2: 100})
    assert [e.worker_id for e in ranking] == [2, 5]


def test_rank_workers_is_deterministic_under_input_order():
    scores = {i: (i * 7) % 5 for i in range(20)}
    stamps = {i: (None if i % 4 == 0 else 100 * i) for i in range(20)}
    a = rank_workers(scores, stamps)
    reversed_scores = dict(reversed(list(scores.items())))
    b = rank_workers(reversed_scores, stamps)
    assert [e.worker_id for e in a] == [e.worker_id for e in b]


def test_rank_workers_validates_key_sets():
    with pytest.raises(ConfigurationError):
        rank_workers({1: 0}, {2: None})
    with pytest.raises(ConfigurationError):
        rank_workers({1: 0}, {1: None}, annotations={2: 1})


def test_ranking_accessors_and_unknown_worker():
    ranking = rank_workers(scores={1: 5, 2: 3}, last_scored_ms={1: 10, 2: 20})
    assert len(ranking) == 2
    assert ranking.entry(2).score == 3
    with pytest.raises(KeyError):
        ranking.rank_of(99)


def test_ranking_rejects_duplicate_workers():
    entry = RankEntry(1, 10, 2, 100)
    with pytest.raises(ConfigurationError):
        Ranking(entries=(entry, RankEntry(1, 5, 1, 200)))


# --- k-neighbours view -----------------------------------------------------

def _descending_ranking(n: int) -> Ranking:
    # Worker i sits at rank i: strictly decreasing scores by id.
    scores = {i: 10 * (n - i) for i in range(1, n + 1)}
    stamps = {i: 1000 for i in range(1, n + 1)}
    return rank_workers(scores, stamps)


def test_k_neighbours_middle_of_a_small_board():
    ranking = _descending_ranking(7)
    view = k_neighbours_view(ranking, 4, 1)
    assert [e.worker_id for e in view] == [3, 4, 5]


def test_k_neighbours_truncates_at_the_top():
    ranking = _descending_ranking(7)
    view = k_neighbours_view(ranking, 1, 3)
    assert [e.worker_id for e in view] == [1, 2, 3, 4]


def test_k_neighbours_wide_board_window():
    ranking = _descending_ranking(100)
    view = k_neighbours_view(ranking, 50, 3)
    assert [e.worker_id for e in view] == [47, 48, 49, 50, 51, 52, 53]


def test_k_neighbours_k_zero_is_self_only():
    ranking = _descending_ranking(5)
    assert [e.worker_id for e in k_neighbours_view(ranking, 3, 0)] == [3]


def test_k_neighbours_rejects_negative_k():
    with pytest.raises(ConfigurationError):
        k_neighbours_view(_descending_ranking(3), 1, -1)


# --- quality and utility ---------------------------------------------------

@given(skill=st.floats(0, 1), effort=st.floats(0, 100),
       scale=st.floats(0.01, 50), anchor=st.floats(-10, 10))
def test_quality_is_linear_in_effort_about_the_anchor(skill, effort, scale, anchor):
    direct = compute_quality(skill, scale * effort, anchor) - anchor
    scaled = scale * (compute_quality(skill, effort, anchor) - anchor)
    assert direct == pytest.approx(scaled, rel=1e-9, abs=1e-9)


@given(prize=st.floats(0, 100), effort=st.floats(0, 1000),
       cost=st.floats(0, 10))
def test_winning_dominates_losing_by_exactly_the_prize(prize, effort, cost):
    won = worker_utility(prize, True, effort, cost)
    lost = worker_utility(prize, False, effort, cost)
    assert won - lost == pytest.approx(prize, rel=1e-9, abs=1e-9)


def test_utility_charges_effort_cost_either_way():
    assert worker_utility(10.0, True, 4.0, 0.5) == 8.0
    assert worker_utility(10.0, False, 4.0, 0.5) == -2.0


# --- input validation ------------------------------------------------------

def test_post_validation():
    with pytest.raises(ConfigurationError):
        Post(id=1, token_count=0, expected_entities=0, arrival_index=0)
    with pytest.raises(ConfigurationError):
        Post(id=1, token_count=5, expected_entities=6, arrival_index=0)
    with pytest.raises(ConfigurationError):
        Post(id=1, token_count=5, expected_entities=1, arrival_index=-1)


def test_worker_profile_validation():
    ok = dict(id=0, skill=0.5, lambda_in=1.0, lambda_out=1.0)
    WorkerProfile(**ok)
    with pytest.raises(ConfigurationError):
        WorkerProfile(**{**ok, "skill": 1.5})
    with pytest.raises(ConfigurationError):
        WorkerProfile(**{**ok, "lambda_in": 0.0})
    with pytest.raises(ConfigurationError):
        WorkerProfile(**{**ok, "lambda_out": -1.0})
    with pytest.raises(ConfigurationError):
        WorkerProfile(**{**ok, "cost_per_effort": -0.1})
    with pytest.raises(ConfigurationError):
        WorkerProfile(**{**ok, "exit_threshold": 1.5})


def test_contest_config_accepts_exactly_provisioned_stream(contest_config):
    # service rate = 10/10 = 1 post/s per worker; arrival 2.0 means the
    # offered load equals the two-worker workforce, which is allowed.
    config = contest_config(arrival_rate=2.0)
    assert config.n_workers == 2


def test_contest_config_rejects_overload(contest_config):
    with pytest.raises(ConfigurationError):
        contest_config(arrival_rate=2.01)


def test_contest_config_rejects_spread_beyond_workforce(contest_config):
    with pytest.raises(ConfigurationError):
        contest_config(reward_spread=3)


def test_contest_config_rejects_oversized_task_unit(contest_config):
    with pytest.raises(ConfigurationError):
        contest_config(task_unit_size=11, window_size=10)


def test_contest_config_rejects_non_positive_fields(contest_config):
    for field, bad in [("n_workers", 0), ("n_posts", 0), ("window_size", 0),
                       ("task_unit_time_s", 0.0), ("arrival_rate", 0.0),
                       ("base_points", 0), ("reward_spread", 0),
                       ("reduction_rate", 0.0), ("quality_constraint", -1),
                       ("prize_value", -1.0)]:
        with pytest.raises(ConfigurationError):
            contest_config(**{field: bad})
