"""Contest domain model: posts, workers, configuration, scoring, ranking.

Pure types and functions.  Nothing in this module draws random numbers or
keeps mutable state; the simulation engine composes these primitives.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Hashable, Mapping, Optional, Sequence

from .errors import ConfigurationError

# Sort key stand-in for "never scored": any real timestamp beats it.
_NEVER_SCORED = float("inf")

EXACT_MATCH_MULTIPLIER = 5


@dataclass(frozen=True)
class Post:
    """A unit of annotatable content flowing through the contest."""

    id: int
    token_count: int
    expected_entities: int
    arrival_index: int

    def __post_init__(self) -> None:
        if self.token_count < 1:
            raise ConfigurationError(f"post {self.id}: token_count must be >= 1")
        if not 0 <= self.expected_entities <= self.token_count:
            raise ConfigurationError(
                f"post {self.id}: expected_entities must lie in [0, token_count]"
            )
        if self.arrival_index < 0:
            raise ConfigurationError(f"post {self.id}: arrival_index must be >= 0")


@dataclass(frozen=True)
class WorkerProfile:
    """Latent per-worker parameters, fixed for the life of a contest.

    ``lambda_in`` / ``lambda_out`` are annotation rates (events per second)
    applied while the worker is inside / outside the reward spread.
    ``exit_threshold`` scales the worker's exit hazard; 0 disables exits.
    """

    id: int
    skill: float
    lambda_in: float
    lambda_out: float
    cost_per_effort: float = 0.0
    exit_threshold: float = 0.0

    def __post_init__(self) -> None:
        if not 0.0 <= self.skill <= 1.0:
            raise ConfigurationError(f"worker {self.id}: skill must lie in [0, 1]")
        if self.lambda_in <= 0.0 or self.lambda_out <= 0.0:
            raise ConfigurationError(f"worker {self.id}: rates must be positive")
        if self.cost_per_effort < 0.0:
            raise ConfigurationError(f"worker {self.id}: cost_per_effort must be >= 0")
        if not 0.0 <= self.exit_threshold <= 1.0:
            raise ConfigurationError(
                f"worker {self.id}: exit_threshold must lie in [0, 1]"
            )


@dataclass(frozen=True)
class ContestConfig:
    """Static parameters of one contest run."""

    n_workers: int
    n_posts: int
    window_size: int
    task_unit_time_s: float
    task_unit_size: int
    arrival_rate: float
    reward_spread: int
    prize_value: float
    base_points: int
    leaderboard_k: int
    quality_constraint: int
    reduction_rate: float

    def __post_init__(self) -> None:
        for name in ("n_workers", "n_posts", "window_size", "task_unit_size",
                     "base_points", "leaderboard_k", "reward_spread"):
            if getattr(self, name) < 1:
                raise ConfigurationError(f"{name} must be a positive integer")
        if self.quality_constraint < 0:
            raise ConfigurationError("quality_constraint must be >= 0")
        for name in ("task_unit_time_s", "arrival_rate", "reduction_rate"):
            if getattr(self, name) <= 0.0:
                raise ConfigurationError(f"{name} must be positive")
        if self.prize_value < 0.0:
            raise ConfigurationError("prize_value must be >= 0")
        if self.reward_spread > self.n_workers:
            raise ConfigurationError("reward_spread cannot exceed n_workers")
        if self.task_unit_size > self.window_size:
            raise ConfigurationError("task_unit_size cannot exceed window_size")
        # Load check: a worker serves one task unit per task-unit time, so the
        # per-worker service rate is task_unit_size / task_unit_time_s posts/s.
        # Equality means the stream is exactly provisioned, which the
        # round-robin allocation handles, so only strict overload is rejected.
        service_rate = self.task_unit_size / self.task_unit_time_s
        load = self.arrival_rate / service_rate
        if load > self.n_workers:
            raise ConfigurationError(
                f"task intensity {load:g} exceeds n_workers={self.n_workers}; "
                "the stream would outrun the workforce"
            )


class RankEntry:
    """One leaderboard row."""

    __slots__ = ("worker_id", "score", "annotations", "tie_break_stamp")

    def __init__(self, worker_id: Hashable, score: float, annotations: int,
                 tie_break_stamp: Optional[int]) -> None:
        self.worker_id = worker_id
        self.score = score
        self.annotations = annotations
        self.tie_break_stamp = tie_break_stamp

    def sort_key(self) -> tuple:
        stamp = self.tie_break_stamp if self.tie_break_stamp is not None else _NEVER_SCORED
        return (-self.score, stamp, self.worker_id)

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, RankEntry):
            return NotImplemented
        return (self.worker_id, self.score, self.annotations, self.tie_break_stamp) == (
            other.worker_id, other.score, other.annotations, other.tie_break_stamp)

    def __repr__(self) -> str:
        return (f"RankEntry({self.worker_id!r}, score={self.score!r}, "
                f"annotations={self.annotations!r}, tie_break_stamp={self.tie_break_stamp!r})")


@dataclass(frozen=True)
class Ranking:
    """Leaderboard snapshot, best first.

    Sorted by score descending; ties broken by earlier ``tie_break_stamp``
    (the time the entry last gained points), then by worker id.
    """

    entries: tuple[RankEntry, ...]
    _index: dict = field(init=False, repr=False, compare=False)

    def __post_init__(self) -> None:
        index = {}
        for pos, entry in enumerate(self.entries):
            if entry.worker_id in index:
                raise ConfigurationError(f"duplicate worker {entry.worker_id} in ranking")
            index[entry.worker_id] = pos
        object.__setattr__(self, "_index", index)

    def __len__(self) -> int:
        return len(self.entries)

    def __iter__(self):
        return iter(self.entries)

    def rank_of(self, worker_id: Hashable) -> int:
        """1-based rank of ``worker_id``; raises KeyError if absent."""
        return self._index[worker_id] + 1

    def entry(self, worker_id: Hashable) -> RankEntry:
        return self.entries[self._index[worker_id]]


def compute_quality(skill: float, effort: float, noise: float) -> float:
    """Annotation quality: skill scaled by effort plus an additive disturbance."""
    return skill * effort + noise


def worker_utility(prize: float, won: bool, effort: float,
                   cost_per_effort: float) -> float:
    """Net payoff of one worker: prize if won, minus linear effort cost either way."""
    cost = cost_per_effort * effort
    return prize - cost if won else -cost


def score_annotation(annotated_count: int, expected_count: int,
                     base_points: int) -> int:
    """Points for one annotation.

    Exact entity-count match (with at least one entity found) earns the
    bonus multiple of ``base_points``; any other non-empty annotation earns
    ``base_points``; an empty annotation earns nothing.
    """
    if annotated_count < 0 or expected_count < 0:
        raise ConfigurationError("counts must be non-negative")
    if base_points <= 0:
        raise ConfigurationError("base_points must be positive")
    if annotated_count == 0:
        return 0
    if annotated_count == expected_count:
        return EXACT_MATCH_MULTIPLIER * base_points
    return base_points


def rank_workers(scores: Mapping[Hashable, float],
                 last_scored_ms: Mapping[Hashable, Optional[int]],
                 annotations: Optional[Mapping[Hashable, int]] = None) -> Ranking:
    """Build the leaderboard from cumulative scores.

    ``last_scored_ms`` maps each worker to the time their score last
    increased (None if it never did); it breaks score ties in favour of the
    worker who got there first.
    """
    if set(scores) != set(last_scored_ms):
        raise ConfigurationError("scores and last_scored_ms must cover the same workers")
    if annotations is not None and set(annotations) != set(scores):
        raise ConfigurationError("annotations must cover the same workers as scores")
    entries = [
        RankEntry(
            worker_id=w,
            score=scores[w],
            annotations=0 if annotations is None else annotations[w],
            tie_break_stamp=last_scored_ms[w],
        )
        for w in scores
    ]
    entries.sort(key=RankEntry.sort_key)
    return Ranking(entries=tuple(entries))


def is_eligible(rank: int, reward_spread: int) -> bool:
    """A worker is payment-eligible while ranked inside the reward spread."""
    if rank < 1:
        raise ConfigurationError("rank is 1-based")
    if reward_spread < 1:
        raise ConfigurationError("reward_spread must be >= 1")
    return rank <= reward_spread


def k_neighbours_view(ranking: Ranking, worker_id: Hashable,
                      k: int) -> Sequence[RankEntry]:
    """The leaderboard slice a worker sees: themselves plus k rows either side.

    Truncated at the top and bottom of the board (no wrap-around).
    """
    if k < 0:
        raise ConfigurationError("k must be >= 0")
    pos = ranking.rank_of(worker_id) - 1
    lo = max(0, pos - k)
    hi = min(len(ranking), pos + k + 1)
    return list(ranking.entries[lo:hi])
