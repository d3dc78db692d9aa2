"""Continuous-time contest engine.

Each worker is a point process over a virtual clock: holding times between
annotations are exponential, at ``lambda_in`` while the worker sits inside
the reward spread and ``lambda_out`` while outside.  Rates are re-evaluated
at the worker's own events, where the leaderboard is also updated, so every
logged holding time is a single exponential draw at the rate recorded with
the event.  The clock is integer milliseconds throughout.

Two dispatch modes share the engine:

* ``"windowed"``: posts arrive in stream windows and are dealt round-robin
  into per-worker bins; unsolved posts drop when their window closes.
* ``"shared"``: every worker draws from one FIFO pool until the pool or the
  clock runs out.  No post is ever dropped.

Exit decisions happen at twenty evenly spaced checkpoints: a worker outside
the spread leaves with a hazard that grows with their distance below the
spread and with elapsed contest time.
"""

from __future__ import annotations

import json
import math
from collections import deque
from dataclasses import asdict, dataclass
from heapq import heappop, heappush
from pathlib import Path
from typing import Callable, Mapping, NamedTuple, Optional, Sequence, Union

import numpy as np

from . import rng as streams
from .core import (ContestConfig, Post, RankEntry, Ranking, WorkerProfile,
                   rank_workers, score_annotation)
from .errors import ConfigurationError, ContractViolation
from .stream import DropQueue, advance_queue, allocate_round_robin, build_windows, total_contest_time

# Default scale of the exit hazard, chosen so that with the stock behavior
# prior at least 85% of a 20-worker field is still active at the 90% time
# mark even in a winner-takes-all contest (see tests/test_acceptance.py).
DEFAULT_BASE_HAZARD = 0.06

N_CHECKPOINTS = 20

LOG_FORMAT = "contest-log-v1"

_RATE_FLOOR = 1e-12
_NEVER = float("inf")
_PERTURBATIONS = (-2, -1, 1, 2)

Seed = Union[int, Sequence[int]]

# Custom rate model: (rank, elapsed_ms, annotations_remaining, eligible) -> rate/s.
RateFn = Callable[[int, int, int, bool], float]


@dataclass(frozen=True)
class BehaviorPrior:
    """Population prior over worker annotation rates.

    ``lambda_in`` is gamma distributed; ``lambda_out`` adds an independent
    half-normal bump to a fresh gamma draw, tilting out-of-spread behavior
    towards more effort.
    """

    gamma_shape: float = 9.0
    gamma_rate: float = 8.0
    halfnormal_sigma: float = 0.01

    def __post_init__(self) -> None:
        for name in ("gamma_shape", "gamma_rate", "halfnormal_sigma"):
            if getattr(self, name) <= 0.0:
                raise ConfigurationError(f"{name} must be strictly positive")


class AnnotationEvent(NamedTuple):
    """One annotation, with the state that governed its holding time.

    ``rank_at_event`` / ``eligible_at_event`` describe the worker at the
    start of the interval that ended with this event (i.e. right after
    their previous event was scored), which is exactly the state whose rate
    generated ``holding_time_ms``.  ``annotations_remaining`` counts posts
    left in the contest after this event.
    """

    worker_id: int
    event_index: int
    event_time_ms: int
    holding_time_ms: int
    post_id: int
    annotated_count: int
    rank_at_event: int
    eligible_at_event: bool
    annotations_remaining: int


class ExitEvent(NamedTuple):
    worker_id: int
    exit_time_ms: int
    rank_at_exit: int
    eligible_at_exit: bool


@dataclass(frozen=True)
class PostCounters:
    """Where every ingested post ended up."""

    ingested: int
    solved: int
    dropped: int
    pending: int


@dataclass
class EventLog:
    """Complete record of one contest run."""

    config: ContestConfig
    seed: Seed
    dispatch: str
    horizon_ms: int
    base_hazard: float
    accuracy_floor: float
    events: list[AnnotationEvent]
    exits: list[ExitEvent]
    final_ranking: Ranking
    counters: PostCounters


def draw_behavior(prior: BehaviorPrior,
                  rng: np.random.Generator) -> tuple[float, float]:
    """Sample one worker's (lambda_in, lambda_out) pair from the prior."""
    lam_in = rng.gamma(prior.gamma_shape, 1.0 / prior.gamma_rate)
    lam_out = (rng.gamma(prior.gamma_shape, 1.0 / prior.gamma_rate)
               + abs(rng.normal(0.0, prior.halfnormal_sigma)))
    return max(float(lam_in), _RATE_FLOOR), max(float(lam_out), _RATE_FLOOR)


def holding_time(base_rate: float, modulation: float,
                 rng: np.random.Generator, size: Optional[int] = None):
    """Exponential waiting time at rate ``base_rate * modulation``.

    The sample is in the reciprocal units of the rate (seconds when rates
    are per second); callers convert to the millisecond clock.  ``size``
    batches draws for Monte-Carlo use.
    """
    rate = base_rate * modulation
    if not rate > 0.0:
        raise ConfigurationError("holding_time requires a positive rate")
    if size is None:
        return float(rng.exponential(1.0 / rate))
    return rng.exponential(1.0 / rate, size=size)


def exit_hazard(eligible: bool, rank_gap: int, elapsed_fraction: float,
                profile: WorkerProfile, *, n_workers: int,
                base_hazard: float = DEFAULT_BASE_HAZARD) -> float:
    """Per-checkpoint probability that a worker abandons the contest.

    Zero while eligible (or at zero distance below the spread); otherwise
    grows linearly both with the rank gap, capped at the field size, and
    with elapsed contest time, so exits concentrate late.
    ``profile.exit_threshold`` scales the whole hazard, so a zero threshold
    pins a worker in place.
    """
    if not 0.0 <= elapsed_fraction <= 1.0:
        raise ConfigurationError("elapsed_fraction must lie in [0, 1]")
    if n_workers < 1:
        raise ConfigurationError("n_workers must be >= 1")
    if base_hazard < 0.0:
        raise ConfigurationError("base_hazard must be >= 0")
    if eligible or rank_gap <= 0:
        return 0.0
    gap_pressure = min(1.0, rank_gap / n_workers)
    hazard = (base_hazard * profile.exit_threshold * gap_pressure
              * elapsed_fraction)
    return min(1.0, hazard)


def simulate_annotated_count(post: Post, profile: WorkerProfile,
                             rng: np.random.Generator,
                             accuracy_floor: float = 0.0) -> int:
    """Entity count a worker reports for a post.

    Correct with probability ``clamp(skill + accuracy_floor, 0, 1)``;
    otherwise the true count is nudged by a small non-zero offset and
    clamped at zero (so a miss on a zero-entity post can still land on the
    truth, but a miss on a non-empty post never can).
    """
    p_correct = min(1.0, max(0.0, profile.skill + accuracy_floor))
    if rng.random() < p_correct:
        return post.expected_entities
    delta = _PERTURBATIONS[rng.integers(0, len(_PERTURBATIONS))]
    return max(0, post.expected_entities + delta)


class _WorkerState:
    __slots__ = ("idx", "profile", "score", "stamp_key", "annotations",
                 "last_ms", "alive", "gov_rank", "gov_elig",
                 "event_rng", "count_rng", "exit_rng", "bin")

    def __init__(self, idx: int, profile: WorkerProfile, seed: Seed) -> None:
        self.idx = idx
        self.profile = profile
        self.score = 0
        self.stamp_key = _NEVER  # sort key; real stamps are integer ms
        self.annotations = 0
        self.last_ms = 0
        self.alive = True
        self.gov_rank = 0
        self.gov_elig = False
        self.event_rng = streams.substream(seed, streams.EVENTS, idx)
        self.count_rng = streams.substream(seed, streams.COUNTS, idx)
        self.exit_rng = streams.substream(seed, streams.EXITS, idx)
        self.bin: deque[Post] = deque()


def run_contest(config: ContestConfig, profiles: Sequence[WorkerProfile],
                posts: Sequence[Post], seed: Seed, *,
                dispatch: str = "windowed",
                base_hazard: float = DEFAULT_BASE_HAZARD,
                accuracy_floor: float = 0.0,
                rate_fns: Optional[Mapping[int, RateFn]] = None) -> EventLog:
    """Simulate one contest and return its full event log.

    Deterministic: identical (config, profiles, posts, seed) inputs yield a
    bit-identical log.  ``rate_fns``, if given, overrides the two-state rate
    for the listed worker ids with a callable of the worker's current
    (rank, elapsed_ms, annotations_remaining, eligible) state.
    """
    if len(profiles) != config.n_workers:
        raise ConfigurationError(
            f"expected {config.n_workers} profiles, got {len(profiles)}")
    if len(posts) != config.n_posts:
        raise ConfigurationError(
            f"expected {config.n_posts} posts, got {len(posts)}")
    if dispatch not in ("windowed", "shared"):
        raise ConfigurationError(f"unknown dispatch mode {dispatch!r}")
    ids = [p.id for p in profiles]
    if len(set(ids)) != len(ids):
        raise ConfigurationError("worker ids must be unique")
    if len({p.id for p in posts}) != len(posts):
        raise ConfigurationError("post ids must be unique")

    n = config.n_workers
    spread = config.reward_spread
    workers = [_WorkerState(i, profiles[i], seed) for i in range(n)]
    by_id = {w.profile.id: w for w in workers}
    id_order = sorted(workers, key=lambda w: w.profile.id)
    for pos, w in enumerate(id_order):
        w.gov_rank = pos + 1
        w.gov_elig = w.gov_rank <= spread

    def rank_of(w: _WorkerState) -> int:
        # 1 + number of strictly better workers; exited workers keep their
        # scores on the board.
        s, st, wid = w.score, w.stamp_key, w.profile.id
        r = 1
        for v in workers:
            if v is w:
                continue
            if v.score > s:
                r += 1
            elif v.score == s:
                if v.stamp_key < st or (v.stamp_key == st and v.profile.id < wid):
                    r += 1
        return r

    def current_rate(w: _WorkerState, elapsed_ms: int, remaining: int) -> float:
        if rate_fns is not None and w.profile.id in rate_fns:
            rate = rate_fns[w.profile.id](w.gov_rank, elapsed_ms, remaining,
                                          w.gov_elig)
            if not rate > 0.0:
                raise ConfigurationError("custom rate model returned a non-positive rate")
            return rate
        return w.profile.lambda_in if w.gov_elig else w.profile.lambda_out

    def gap_ms(w: _WorkerState, elapsed_ms: int, remaining: int) -> int:
        tau_s = holding_time(current_rate(w, elapsed_ms, remaining), 1.0,
                             w.event_rng)
        return max(1, math.ceil(tau_s * 1000.0))

    unit_ms = int(round(config.task_unit_time_s * 1000.0))
    if unit_ms < 1:
        raise ConfigurationError("task_unit_time_s is below the 1 ms clock resolution")

    events: list[AnnotationEvent] = []
    exits: list[ExitEvent] = []
    solved = 0

    if dispatch == "windowed":
        windows = build_windows(posts, config.window_size, config.task_unit_time_s)
        horizon_ms = len(windows) * unit_ms
    else:
        horizon_s = total_contest_time(config.n_posts, config.task_unit_time_s,
                                       config.window_size)
        horizon_ms = int(round(horizon_s * 1000.0))
    checkpoint_ms = [int(round(k * horizon_ms / N_CHECKPOINTS))
                     for k in range(1, N_CHECKPOINTS + 1)]
    cp_idx = 0

    def process_checkpoint(ci: int) -> None:
        t_cp = checkpoint_ms[ci]
        frac = (ci + 1) / N_CHECKPOINTS
        for w in id_order:
            if not w.alive:
                continue
            u = w.exit_rng.random()  # one draw per checkpoint, hazard or not
            r = rank_of(w)
            elig = r <= spread
            h = exit_hazard(elig, r - spread, frac, w.profile,
                            n_workers=n, base_hazard=base_hazard)
            if u < h:
                w.alive = False
                exits.append(ExitEvent(w.profile.id, t_cp, r, elig))

    def handle_event(w: _WorkerState, t: int, post: Post) -> int:
        nonlocal solved
        hold = t - w.last_ms
        count = simulate_annotated_count(post, w.profile, w.count_rng,
                                         accuracy_floor=accuracy_floor)
        solved += 1
        remaining = config.n_posts - solved
        events.append(AnnotationEvent(
            worker_id=w.profile.id,
            event_index=w.annotations,
            event_time_ms=t,
            holding_time_ms=hold,
            post_id=post.id,
            annotated_count=count,
            rank_at_event=w.gov_rank,
            eligible_at_event=w.gov_elig,
            annotations_remaining=remaining,
        ))
        w.annotations += 1
        w.last_ms = t
        points = score_annotation(count, post.expected_entities, config.base_points)
        if points > 0:
            w.score += points
            w.stamp_key = t
        r = rank_of(w)
        w.gov_rank = r
        w.gov_elig = r <= spread
        return remaining

    if dispatch == "windowed":
        queue = DropQueue()
        posts_by_id = {p.id: p for p in posts}
        ingested = 0
        rr_offset = 0
        for win in windows:
            open_ms = win.index * unit_ms
            close_ms = open_ms + unit_ms
            ingested += len(win.posts)
            active = [w for w in id_order if w.alive]
            holders: list[_WorkerState] = []
            if active:
                assignments = allocate_round_robin(
                    win, [w.profile.id for w in active],
                    config.task_unit_size, start_offset=rr_offset)
                rr_offset = (rr_offset + len(assignments)) % len(active)
                assigned: set[int] = set()
                for a in assignments:
                    holder = by_id[a.worker_id]
                    holder.bin = deque(posts_by_id[pid] for pid in a.bin)
                    holders.append(holder)
                    assigned.update(a.bin)
                for p in win.posts:
                    if p.id not in assigned:
                        queue.push(p, win.close_time_s)
            else:
                for p in win.posts:
                    queue.push(p, win.close_time_s)

            heap: list[tuple[int, int]] = []
            for w in holders:
                base = w.last_ms if w.last_ms > open_ms else open_ms
                t = base + gap_ms(w, base, config.n_posts - solved)
                if t <= close_ms:
                    heappush(heap, (t, w.idx))
            while heap:
                t, widx = heappop(heap)
                w = workers[widx]
                if not w.alive:
                    continue
                while cp_idx < N_CHECKPOINTS and checkpoint_ms[cp_idx] < t:
                    process_checkpoint(cp_idx)
                    cp_idx += 1
                if not w.alive:
                    continue
                remaining = handle_event(w, t, w.bin.popleft())
                if w.bin:
                    t2 = t + gap_ms(w, t, remaining)
                    if t2 <= close_ms:
                        heappush(heap, (t2, widx))
            for w in holders:
                while w.bin:
                    queue.push(w.bin.popleft(), win.close_time_s)
            advance_queue(queue, win.close_time_s)
            while cp_idx < N_CHECKPOINTS and checkpoint_ms[cp_idx] <= close_ms:
                process_checkpoint(cp_idx)
                cp_idx += 1
        counters = PostCounters(ingested=ingested, solved=solved,
                                dropped=queue.dropped_count,
                                pending=len(queue))
    else:
        pool = deque(posts)
        ingested = len(pool)
        heap = []
        for w in id_order:
            t = gap_ms(w, 0, config.n_posts - solved)
            if t <= horizon_ms:
                heappush(heap, (t, w.idx))
        while heap:
            t, widx = heappop(heap)
            w = workers[widx]
            if not w.alive:
                continue
            while cp_idx < N_CHECKPOINTS and checkpoint_ms[cp_idx] < t:
                process_checkpoint(cp_idx)
                cp_idx += 1
            if not w.alive or not pool:
                continue
            remaining = handle_event(w, t, pool.popleft())
            if pool:
                t2 = t + gap_ms(w, t, remaining)
                if t2 <= horizon_ms:
                    heappush(heap, (t2, widx))
        while cp_idx < N_CHECKPOINTS:
            process_checkpoint(cp_idx)
            cp_idx += 1
        counters = PostCounters(ingested=ingested, solved=solved,
                                dropped=0, pending=len(pool))

    if counters.ingested != counters.solved + counters.dropped + counters.pending:
        raise ContractViolation(f"post conservation violated: {counters}")

    final_ranking = rank_workers(
        scores={w.profile.id: w.score for w in workers},
        last_scored_ms={w.profile.id: (None if w.stamp_key == _NEVER
                                       else int(w.stamp_key))
                        for w in workers},
        annotations={w.profile.id: w.annotations for w in workers},
    )
    return EventLog(config=config, seed=seed, dispatch=dispatch,
                    horizon_ms=horizon_ms, base_hazard=base_hazard,
                    accuracy_floor=accuracy_floor, events=events, exits=exits,
                    final_ranking=final_ranking, counters=counters)


# --- serialization ---------------------------------------------------------

def _dump(obj) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"))


def event_log_lines(log: EventLog):
    """Yield the canonical line-delimited form of a log.

    One annotation or exit per line in chronological order (annotations
    first on ties), bracketed by a header with the configuration snapshot
    and a trailer with the final leaderboard.
    """
    seed = list(log.seed) if isinstance(log.seed, (list, tuple)) else log.seed
    yield _dump({
        "format": LOG_FORMAT,
        "seed": seed,
        "dispatch": log.dispatch,
        "horizon_ms": log.horizon_ms,
        "base_hazard": log.base_hazard,
        "accuracy_floor": log.accuracy_floor,
        "config": asdict(log.config),
        "counters": asdict(log.counters),
    })
    ei, xi = 0, 0
    while ei < len(log.events) or xi < len(log.exits):
        take_event = xi >= len(log.exits) or (
            ei < len(log.events)
            and log.events[ei].event_time_ms <= log.exits[xi].exit_time_ms)
        if take_event:
            e = log.events[ei]
            ei += 1
            yield _dump({
                "worker_id": e.worker_id,
                "event_index": e.event_index,
                "event_time_ms": e.event_time_ms,
                "holding_time_ms": e.holding_time_ms,
                "post_id": e.post_id,
                "annotated_count": e.annotated_count,
                "rank": e.rank_at_event,
                "eligible": e.eligible_at_event,
            })
        else:
            x = log.exits[xi]
            xi += 1
            yield _dump({
                "worker_id": x.worker_id,
                "exit_time_ms": x.exit_time_ms,
                "rank": x.rank_at_exit,
                "eligible": x.eligible_at_exit,
            })
    yield _dump({
        "final_ranking": [
            {"worker_id": e.worker_id, "score": e.score,
             "annotations": e.annotations,
             "last_scored_ms": e.tie_break_stamp}
            for e in log.final_ranking
        ],
    })


def write_event_log(log: EventLog, path: Union[str, Path]) -> None:
    Path(path).write_text("\n".join(event_log_lines(log)) + "\n",
                          encoding="utf-8")


def read_event_log(path: Union[str, Path]) -> EventLog:
    """Parse a log written by `write_event_log`, reconstructing derived fields.

    ``annotations_remaining`` is not stored; it is rebuilt by replaying the
    solved count against the configured post total.
    """
    lines = Path(path).read_text(encoding="utf-8").splitlines()
    if not lines:
        raise ConfigurationError(f"{path}: empty event log")
    header = json.loads(lines[0])
    if header.get("format") != LOG_FORMAT:
        raise ConfigurationError(f"{path}: not a {LOG_FORMAT} file")
    config = ContestConfig(**header["config"])
    seed = header["seed"]
    if isinstance(seed, list):
        seed = tuple(seed)
    trailer = json.loads(lines[-1])
    if "final_ranking" not in trailer:
        raise ConfigurationError(f"{path}: missing final-ranking trailer")
    events: list[AnnotationEvent] = []
    exits: list[ExitEvent] = []
    per_worker_index: dict[int, int] = {}
    solved = 0
    for line in lines[1:-1]:
        obj = json.loads(line)
        if "exit_time_ms" in obj:
            exits.append(ExitEvent(obj["worker_id"], obj["exit_time_ms"],
                                   obj["rank"], obj["eligible"]))
            continue
        solved += 1
        expected_index = per_worker_index.get(obj["worker_id"], 0)
        if obj["event_index"] != expected_index:
            raise ConfigurationError(
                f"{path}: worker {obj['worker_id']} event_index out of order")
        per_worker_index[obj["worker_id"]] = expected_index + 1
        events.append(AnnotationEvent(
            worker_id=obj["worker_id"],
            event_index=obj["event_index"],
            event_time_ms=obj["event_time_ms"],
            holding_time_ms=obj["holding_time_ms"],
            post_id=obj["post_id"],
            annotated_count=obj["annotated_count"],
            rank_at_event=obj["rank"],
            eligible_at_event=obj["eligible"],
            annotations_remaining=config.n_posts - solved,
        ))
    ranking = Ranking(entries=tuple(
        RankEntry(r["worker_id"], r["score"], r["annotations"],
                  r["last_scored_ms"])
        for r in trailer["final_ranking"]
    ))
    return EventLog(
        config=config, seed=seed, dispatch=header["dispatch"],
        horizon_ms=header["horizon_ms"], base_hazard=header["base_hazard"],
        accuracy_floor=header["accuracy_floor"], events=events, exits=exits,
        final_ranking=ranking,
        counters=PostCounters(**header["counters"]),
    )


# --- replay validation -----------------------------------------------------

def replay_validate(log: EventLog, posts: Sequence[Post]) -> None:
    """Re-derive every structural invariant of a log; raise on any mismatch.

    Checks, per worker: the holding-time recursion (each event lands exactly
    holding_time_ms after the previous one), that the recorded rank and
    eligibility equal the leaderboard state right after the worker's
    previous event, silence after exit, and that holding times sum to the
    final event time.  Globally: post conservation and the remaining-post
    countdown.  Needs the post list to re-score events.
    """
    expected = {p.id: p.expected_entities for p in posts}
    worker_ids = [e.worker_id for e in log.final_ranking]
    spread = log.config.reward_spread
    score = {w: 0 for w in worker_ids}
    stamp = {w: _NEVER for w in worker_ids}
    last_ms = {w: 0 for w in worker_ids}
    hold_sum = {w: 0 for w in worker_ids}
    count = {w: 0 for w in worker_ids}
    exit_ms = {x.worker_id: x.exit_time_ms for x in log.exits}

    def rank_scan(wid: int) -> int:
        s, st = score[wid], stamp[wid]
        r = 1
        for v in worker_ids:
            if v == wid:
                continue
            if score[v] > s or (score[v] == s and
                                (stamp[v] < st or (stamp[v] == st and v < wid))):
                r += 1
        return r

    gov_rank = {}
    for pos, wid in enumerate(sorted(worker_ids)):
        gov_rank[wid] = pos + 1
    solved = 0
    prev_t = 0
    for e in log.events:
        wid = e.worker_id
        if e.event_time_ms < prev_t:
            raise ContractViolation("event log is not globally time-sorted")
        prev_t = e.event_time_ms
        if wid in exit_ms and e.event_time_ms > exit_ms[wid]:
            raise ContractViolation(f"worker {wid} annotated after exiting")
        if e.event_index != count[wid]:
            raise ContractViolation(f"worker {wid} event_index mismatch")
        if e.event_time_ms - e.holding_time_ms != last_ms[wid]:
            raise ContractViolation(f"worker {wid} holding-time recursion broken")
        if e.rank_at_event != gov_rank[wid]:
            raise ContractViolation(
                f"worker {wid} rank_at_event {e.rank_at_event} != replay {gov_rank[wid]}")
        if e.eligible_at_event != (e.rank_at_event <= spread):
            raise ContractViolation(f"worker {wid} eligibility flag inconsistent")
        if e.holding_time_ms < 1:
            raise ContractViolation("holding_time_ms must be a positive integer")
        solved += 1
        if e.annotations_remaining != log.config.n_posts - solved:
            raise ContractViolation("annotations_remaining countdown broken")
        count[wid] += 1
        last_ms[wid] = e.event_time_ms
        hold_sum[wid] += e.holding_time_ms
        points = score_annotation(e.annotated_count, expected[e.post_id],
                                  log.config.base_points)
        if points > 0:
            score[wid] += points
            stamp[wid] = e.event_time_ms
        gov_rank[wid] = rank_scan(wid)

    for wid in worker_ids:
        if hold_sum[wid] != last_ms[wid]:
            raise ContractViolation(
                f"worker {wid}: holding times sum to {hold_sum[wid]}, "
                f"last event at {last_ms[wid]}")
        if count[wid] != log.final_ranking.entry(wid).annotations:
            raise ContractViolation(f"worker {wid} annotation count mismatch")
        if score[wid] != log.final_ranking.entry(wid).score:
            raise ContractViolation(f"worker {wid} final score mismatch")
    c = log.counters
    if c.ingested != c.solved + c.dropped + c.pending:
        raise ContractViolation(f"post conservation violated: {c}")
    if c.solved != len(log.events):
        raise ContractViolation("solved counter disagrees with event count")
