"""Sweep orchestration: configs, corpora, replications, and output files.

An experiment fixes everything about a contest except the reward spread,
then replicates each spread with common random numbers (profile and event
seeds depend on the replication index, never on the spread) so that paired
comparisons across spreads are sharp.
"""

from __future__ import annotations

import hashlib
import json
import math
from collections import defaultdict
from dataclasses import MISSING, dataclass, fields
from pathlib import Path
from typing import NamedTuple, Optional, Sequence, Union

from . import rng as streams
from .core import ContestConfig, Post, WorkerProfile
from .errors import ConfigurationError, ContestError
from .simulate import (DEFAULT_BASE_HAZARD, BehaviorPrior, EventLog,
                       draw_behavior, run_contest)

CONFIG_VERSION = 1
TREND_ALPHA = 0.05
MANIFEST_FORMAT = "sweep-outputs-v1"

# Token counts are drawn uniformly from this inclusive range.
TOKEN_RANGE = (5, 30)


@dataclass(frozen=True)
class ExperimentConfig:
    """Flat description of a reward-spread sweep."""

    config_version: int
    n_workers: int
    n_posts: int
    window_size: int
    task_unit_time_s: float
    task_unit_size: int
    arrival_rate: float
    prize_value: float
    base_points: int
    quality_constraint: int
    reduction_rate: float
    spreads: tuple[int, ...]
    replications: int
    master_seed: int
    leaderboard_k: int = 3
    gamma_shape: float = 9.0
    gamma_rate: float = 8.0
    halfnormal_sigma: float = 0.01
    base_hazard: float = DEFAULT_BASE_HAZARD
    accuracy_floor: float = 0.0
    mean_entities: float = 1.2
    corpus: str = "generate"
    dispatch: str = "windowed"
    tie_rates: bool = False
    output_dir: str = "out"

    def __post_init__(self) -> None:
        if self.config_version != CONFIG_VERSION:
            raise ConfigurationError(
                f"unsupported config_version {self.config_version}; "
                f"expected {CONFIG_VERSION}")
        if self.replications < 1:
            raise ConfigurationError("replications must be >= 1")
        if not self.spreads:
            raise ConfigurationError("spreads must be non-empty")
        if len(set(self.spreads)) != len(self.spreads):
            raise ConfigurationError("spreads must be distinct")
        for s in self.spreads:
            if not 1 <= s <= self.n_workers:
                raise ConfigurationError(
                    f"spread {s} outside [1, n_workers={self.n_workers}]")
        if self.mean_entities <= 0.0:
            raise ConfigurationError("mean_entities must be positive")
        if self.dispatch not in ("windowed", "shared"):
            raise ConfigurationError(f"unknown dispatch {self.dispatch!r}")

    @property
    def prior(self) -> BehaviorPrior:
        return BehaviorPrior(gamma_shape=self.gamma_shape,
                             gamma_rate=self.gamma_rate,
                             halfnormal_sigma=self.halfnormal_sigma)

    def contest_config(self, reward_spread: int) -> ContestConfig:
        return ContestConfig(
            n_workers=self.n_workers, n_posts=self.n_posts,
            window_size=self.window_size,
            task_unit_time_s=self.task_unit_time_s,
            task_unit_size=self.task_unit_size,
            arrival_rate=self.arrival_rate, reward_spread=reward_spread,
            prize_value=self.prize_value, base_points=self.base_points,
            leaderboard_k=self.leaderboard_k,
            quality_constraint=self.quality_constraint,
            reduction_rate=self.reduction_rate,
        )


_BOOL_WORDS = {"true": True, "false": False}


def _parse_value(name: str, raw: str, target_type: type):
    if target_type is bool:
        try:
            return _BOOL_WORDS[raw.lower()]
        except KeyError:
            raise ConfigurationError(f"{name} must be true or false, got {raw!r}")
    if target_type is int:
        try:
            return int(raw)
        except ValueError:
            raise ConfigurationError(f"{name} must be an integer, got {raw!r}")
    if target_type is float:
        try:
            return float(raw)
        except ValueError:
            raise ConfigurationError(f"{name} must be a number, got {raw!r}")
    return raw


def parse_experiment_config(text: str) -> ExperimentConfig:
    """Parse ``key=value`` lines; ``#`` starts a comment, blanks are skipped."""
    field_types = {f.name: f.type for f in fields(ExperimentConfig)}
    seen: dict[str, object] = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        stripped = line.strip()
        if not stripped or stripped.startswith("#"):
            continue
        if "=" not in stripped:
            raise ConfigurationError(f"line {lineno}: expected key=value")
        key, _, raw = stripped.partition("=")
        key, raw = key.strip(), raw.strip()
        if key not in field_types:
            raise ConfigurationError(f"line {lineno}: unknown key {key!r}")
        if key in seen:
            raise ConfigurationError(f"line {lineno}: duplicate key {key!r}")
        if key == "spreads":
            parts = [p.strip() for p in raw.split(",") if p.strip()]
            if not parts:
                raise ConfigurationError(f"line {lineno}: spreads is empty")
            seen[key] = tuple(_parse_value("spreads", p, int) for p in parts)
            continue
        annotation = field_types[key]
        base = {"int": int, "float": float, "str": str, "bool": bool}.get(
            str(annotation), str)
        seen[key] = _parse_value(key, raw, base)
    missing = [f.name for f in fields(ExperimentConfig)
               if f.name not in seen and f.default is MISSING
               and f.default_factory is MISSING]
    if missing:
        raise ConfigurationError(f"missing required keys: {', '.join(missing)}")
    return ExperimentConfig(**seen)  # type: ignore[arg-type]


def read_experiment_config(path: Union[str, Path]) -> ExperimentConfig:
    return parse_experiment_config(Path(path).read_text(encoding="utf-8"))


def write_experiment_config(config: ExperimentConfig,
                            path: Union[str, Path]) -> None:
    lines = []
    for f in fields(ExperimentConfig):
        value = getattr(config, f.name)
        if f.name == "spreads":
            rendered = ",".join(str(s) for s in value)
        elif isinstance(value, bool):
            rendered = "true" if value else "false"
        else:
            rendered = repr(value) if isinstance(value, float) else str(value)
        lines.append(f"{f.name}={rendered}")
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


# --- corpus ----------------------------------------------------------------

def generate_corpus(n_posts: int, mean_entities: float,
                    seed: Union[int, Sequence[int]]) -> list[Post]:
    """Synthetic posts: uniform token counts, Poisson entity counts.

    Entity counts are capped by the token count, which thins the Poisson
    mean slightly; with the default token range the cap is rarely binding.
    """
    if n_posts < 0:
        raise ConfigurationError("n_posts must be >= 0")
    if mean_entities <= 0.0:
        raise ConfigurationError("mean_entities must be positive")
    gen = streams.substream(seed, streams.CORPUS)
    lo, hi = TOKEN_RANGE
    posts = []
    for i in range(n_posts):
        tokens = int(gen.integers(lo, hi + 1))
        entities = int(min(gen.poisson(mean_entities), tokens))
        posts.append(Post(id=i, token_count=tokens, expected_entities=entities,
                          arrival_index=i))
    return posts


def write_corpus(posts: Sequence[Post], path: Union[str, Path]) -> None:
    lines = [json.dumps({"id": p.id, "token_count": p.token_count,
                         "expected_entities": p.expected_entities},
                        sort_keys=True, separators=(",", ":"))
             for p in posts]
    Path(path).write_text("\n".join(lines) + ("\n" if lines else ""),
                          encoding="utf-8")


def read_corpus(path: Union[str, Path]) -> list[Post]:
    posts = []
    for i, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines()):
        obj = json.loads(line)
        posts.append(Post(id=obj["id"], token_count=obj["token_count"],
                          expected_entities=obj["expected_entities"],
                          arrival_index=i))
    return posts


# --- profiles --------------------------------------------------------------

def generate_profiles(config: ExperimentConfig,
                      seed: Union[int, Sequence[int]]) -> list[WorkerProfile]:
    """Draw per-worker behavior from the prior; fresh draws per replication.

    With ``tie_rates`` the outside rate is forced equal to the inside rate
    (the null model: eligibility has no behavioral effect).  The same
    number of random draws is consumed either way, so tied and untied runs
    with one seed share every other profile attribute.
    """
    gen = streams.substream(seed, streams.PROFILES)
    prior = config.prior
    profiles = []
    for i in range(config.n_workers):
        lam_in, lam_out = draw_behavior(prior, gen)
        if config.tie_rates:
            lam_out = lam_in
        skill = float(gen.random())
        exit_threshold = float(gen.random())
        profiles.append(WorkerProfile(
            id=i, skill=skill, lambda_in=lam_in, lambda_out=lam_out,
            cost_per_effort=0.01, exit_threshold=exit_threshold,
        ))
    return profiles


# --- per-contest summaries -------------------------------------------------

@dataclass(frozen=True)
class ContestSummary:
    """Scalar outcomes of one simulated contest."""

    reward_spread: int
    replication: int
    total_annotations: int
    distinct_annotations: int
    n_exits: int
    active_worker_counts: tuple[int, ...]  # at 0%, 5%, ..., 100% of horizon
    mean_annotations_per_active: float
    mean_annotation_time_s_per_entity: float
    top1_annotations: int
    top10_annotations: int
    winners: tuple[int, ...]
    payout_total: float
    duration_ms: int

    def to_record(self) -> dict:
        def num(x: float):
            return None if math.isnan(x) else x
        return {
            "reward_spread": self.reward_spread,
            "replication": self.replication,
            "total_annotations": self.total_annotations,
            "distinct_annotations": self.distinct_annotations,
            "n_exits": self.n_exits,
            "active_worker_counts": list(self.active_worker_counts),
            "mean_annotations_per_active": num(self.mean_annotations_per_active),
            "mean_annotation_time_s_per_entity":
                num(self.mean_annotation_time_s_per_entity),
            "top1_annotations": self.top1_annotations,
            "top10_annotations": self.top10_annotations,
            "winners": list(self.winners),
            "payout_total": self.payout_total,
            "duration_ms": self.duration_ms,
        }


def summarize(log: EventLog, replication: int = 0) -> ContestSummary:
    config = log.config
    total = len(log.events)
    distinct = len({(e.post_id, e.annotated_count) for e in log.events})
    exit_times = sorted(x.exit_time_ms for x in log.exits)
    n_checkpoints = 20
    active_counts = []
    for k in range(n_checkpoints + 1):
        t = round(log.horizon_ms * k / n_checkpoints)
        exited = sum(1 for ms in exit_times if ms <= t)
        active_counts.append(config.n_workers - exited)
    n_active_end = config.n_workers - len(log.exits)
    mean_per_active = (total / n_active_end) if n_active_end else float("nan")
    total_entities = sum(e.annotated_count for e in log.events)
    total_seconds = sum(e.holding_time_ms for e in log.events) / 1000.0
    mean_time = (total_seconds / total_entities) if total_entities else float("nan")
    entries = log.final_ranking.entries
    top1 = entries[0].annotations if entries else 0
    top10 = sum(e.annotations for e in entries[:10])
    qualifying = [e for e in entries if e.annotations >= config.quality_constraint]
    winners = tuple(e.worker_id for e in qualifying[:config.reward_spread])
    return ContestSummary(
        reward_spread=config.reward_spread, replication=replication,
        total_annotations=total, distinct_annotations=distinct,
        n_exits=len(log.exits), active_worker_counts=tuple(active_counts),
        mean_annotations_per_active=mean_per_active,
        mean_annotation_time_s_per_entity=mean_time,
        top1_annotations=top1, top10_annotations=top10,
        winners=winners, payout_total=config.prize_value * len(winners),
        duration_ms=log.horizon_ms,
    )


def merge_annotations(logs: Sequence[EventLog]) -> dict[int, int]:
    """Majority-vote entity count per post across logs; ties pick the lower."""
    votes: dict[int, dict[int, int]] = defaultdict(lambda: defaultdict(int))
    for log in logs:
        for e in log.events:
            votes[e.post_id][e.annotated_count] += 1
    merged = {}
    for post_id, counts in votes.items():
        best = max(counts.items(), key=lambda kv: (kv[1], -kv[0]))
        merged[post_id] = best[0]
    return merged


# --- trend and variance tests ----------------------------------------------

def sign_test_one_sided(diffs: Sequence[float]) -> float:
    """P(at least the observed number of positive signs | fair coin).

    Zero differences are dropped, the usual convention.  An empty or
    all-zero sample gives p = 1.0.
    """
    n = sum(1 for d in diffs if d != 0)
    if n == 0:
        return 1.0
    k = sum(1 for d in diffs if d > 0)
    tail = sum(math.comb(n, i) for i in range(k, n + 1))
    return tail / 2 ** n


@dataclass(frozen=True)
class TrendResult:
    """Does total output increase with the reward spread?"""

    spreads: tuple[int, ...]
    mean_total_annotations: tuple[float, ...]
    strictly_increasing: bool
    n_pairs: int
    n_positive: int
    n_ties: int
    p_value: float
    detected: bool
    applicable: bool

    def to_record(self) -> dict:
        return {
            "spreads": list(self.spreads),
            "mean_total_annotations": list(self.mean_total_annotations),
            "strictly_increasing": self.strictly_increasing,
            "n_pairs": self.n_pairs,
            "n_positive": self.n_positive,
            "n_ties": self.n_ties,
            "p_value": self.p_value,
            "detected": self.detected,
            "applicable": self.applicable,
        }


def trend_from_summaries(summaries: Sequence[ContestSummary]) -> TrendResult:
    by_spread: dict[int, dict[int, int]] = defaultdict(dict)
    for s in summaries:
        by_spread[s.reward_spread][s.replication] = s.total_annotations
    spreads = tuple(sorted(by_spread))
    means = tuple(
        sum(by_spread[s].values()) / len(by_spread[s]) for s in spreads)
    if len(spreads) < 2:
        return TrendResult(spreads=spreads, mean_total_annotations=means,
                           strictly_increasing=False, n_pairs=0, n_positive=0,
                           n_ties=0, p_value=1.0, detected=False,
                           applicable=False)
    lo, hi = by_spread[spreads[0]], by_spread[spreads[-1]]
    common = sorted(set(lo) & set(hi))
    diffs = [hi[r] - lo[r] for r in common]
    increasing = all(b > a for a, b in zip(means, means[1:]))
    p = sign_test_one_sided(diffs)
    return TrendResult(
        spreads=spreads, mean_total_annotations=means,
        strictly_increasing=increasing, n_pairs=len(diffs),
        n_positive=sum(1 for d in diffs if d > 0),
        n_ties=sum(1 for d in diffs if d == 0),
        p_value=p, detected=increasing and p < TREND_ALPHA, applicable=True,
    )


class AnovaResult(NamedTuple):
    f_value: float
    df_between: int
    df_within: int
    degenerate: bool


def anova_f(groups: Sequence[Sequence[float]]) -> AnovaResult:
    """One-way fixed-effects F statistic.

    Degenerate inputs are flagged rather than raised: zero within-group
    variance gives +inf when the means differ and NaN when every value is
    identical.
    """
    if len(groups) < 2:
        raise ConfigurationError("anova needs at least two groups")
    if any(len(g) == 0 for g in groups):
        raise ConfigurationError("anova groups must be non-empty")
    n_total = sum(len(g) for g in groups)
    k = len(groups)
    df_between = k - 1
    df_within = n_total - k
    if df_within < 1:
        raise ConfigurationError("anova needs replication within groups")
    grand = math.fsum(math.fsum(g) for g in groups) / n_total
    group_means = [math.fsum(g) / len(g) for g in groups]
    ss_between = math.fsum(len(g) * (m - grand) ** 2
                           for g, m in zip(groups, group_means))
    ss_within = math.fsum(math.fsum((x - m) ** 2 for x in g)
                          for g, m in zip(groups, group_means))
    ms_between = ss_between / df_between
    if ss_within == 0.0:
        f = float("inf") if ms_between > 0.0 else float("nan")
        return AnovaResult(f, df_between, df_within, True)
    ms_within = ss_within / df_within
    return AnovaResult(ms_between / ms_within, df_between, df_within, False)


# --- the sweep -------------------------------------------------------------

@dataclass(frozen=True)
class SweepResult:
    config: ExperimentConfig
    summaries: tuple[ContestSummary, ...]
    errors: tuple[dict, ...]
    trend: TrendResult


def _load_corpus(config: ExperimentConfig,
                 posts: Optional[Sequence[Post]]) -> list[Post]:
    if posts is None:
        if config.corpus == "generate":
            posts = generate_corpus(config.n_posts, config.mean_entities,
                                    seed=config.master_seed)
        else:
            posts = read_corpus(config.corpus)
    if len(posts) < config.n_posts:
        raise ConfigurationError(
            f"corpus has {len(posts)} posts; {config.n_posts} required")
    return list(posts[:config.n_posts])


def run_condition(config: ExperimentConfig, reward_spread: int,
                  replication: int, posts: Sequence[Post]
                  ) -> tuple[ContestSummary, EventLog]:
    """One contest at one spread.  Seeds exclude the spread on purpose:
    replication r sees identical workers and identical random streams at
    every spread, so cross-spread differences are pure treatment effects.
    """
    seed_key = (config.master_seed, replication)
    profiles = generate_profiles(config, seed_key)
    contest = config.contest_config(reward_spread)
    log = run_contest(contest, profiles, posts, seed=seed_key,
                      dispatch=config.dispatch, base_hazard=config.base_hazard,
                      accuracy_floor=config.accuracy_floor)
    return summarize(log, replication=replication), log


def sweep(config: ExperimentConfig,
          posts: Optional[Sequence[Post]] = None) -> SweepResult:
    """Run every (spread, replication) cell; isolate per-cell failures.

    A failed replication becomes a diagnostic record and the sweep moves
    on; it never silently shrinks another cell's sample.
    """
    corpus = _load_corpus(config, posts)
    summaries: list[ContestSummary] = []
    errors: list[dict] = []
    for spread in config.spreads:
        for rep in range(config.replications):
            try:
                summary, _ = run_condition(config, spread, rep, corpus)
            except Exception as exc:  # noqa: BLE001 - diagnostic containment
                errors.append({
                    "reward_spread": spread, "replication": rep,
                    "error": f"{type(exc).__name__}: {exc}",
                })
                continue
            summaries.append(summary)
    if not summaries:
        raise ContestError("every replication failed; see diagnostics")
    return SweepResult(config=config, summaries=tuple(summaries),
                       errors=tuple(errors),
                       trend=trend_from_summaries(summaries))


# --- output files ----------------------------------------------------------

_SWEEP_COLUMNS = (
    "reward_spread", "replication", "total_annotations",
    "distinct_annotations", "n_exits", "mean_annotations_per_active",
    "mean_annotation_time_s_per_entity", "top1_annotations",
    "top10_annotations", "n_winners", "payout_total", "duration_ms",
)


def _csv_cell(value) -> str:
    if isinstance(value, float):
        return "nan" if math.isnan(value) else repr(value)
    return str(value)


def _sweep_table_bytes(result: SweepResult) -> bytes:
    rows = [",".join(_SWEEP_COLUMNS)]
    for s in sorted(result.summaries,
                    key=lambda s: (s.reward_spread, s.replication)):
        record = s.to_record()
        record["n_winners"] = len(s.winners)
        record["mean_annotations_per_active"] = s.mean_annotations_per_active
        record["mean_annotation_time_s_per_entity"] = \
            s.mean_annotation_time_s_per_entity
        rows.append(",".join(_csv_cell(record[c]) for c in _SWEEP_COLUMNS))
    return ("\n".join(rows) + "\n").encode("utf-8")


def _exit_curves_bytes(result: SweepResult) -> bytes:
    spreads = tuple(sorted({s.reward_spread for s in result.summaries}))
    by_spread: dict[int, list[tuple[int, ...]]] = defaultdict(list)
    for s in result.summaries:
        by_spread[s.reward_spread].append(s.active_worker_counts)
    n_workers = result.config.n_workers
    header = ",".join(["checkpoint_fraction",
                       *(f"spread_{s}" for s in spreads)])
    rows = [header]
    for k in range(21):
        cells = [f"{k * 5 / 100:.2f}"]
        for s in spreads:
            curves = by_spread[s]
            mean_active = math.fsum(c[k] for c in curves) / len(curves)
            cells.append(repr(mean_active / n_workers))
        rows.append(",".join(cells))
    return ("\n".join(rows) + "\n").encode("utf-8")


def _summaries_bytes(result: SweepResult) -> bytes:
    lines = [json.dumps(s.to_record(), sort_keys=True, separators=(",", ":"))
             for s in sorted(result.summaries,
                             key=lambda s: (s.reward_spread, s.replication))]
    if not lines:
        return b""
    return ("\n".join(lines) + "\n").encode("utf-8")


def _trajectories_bytes(log: EventLog) -> bytes:
    rows = ["worker_id,event_time_ms,cumulative_annotations"]
    cumulative: dict[int, int] = defaultdict(int)
    for e in log.events:
        cumulative[e.worker_id] += 1
        rows.append(f"{e.worker_id},{e.event_time_ms},{cumulative[e.worker_id]}")
    return ("\n".join(rows) + "\n").encode("utf-8")


def emit_outputs(result: SweepResult, output_dir: Union[str, Path], *,
                 fitted=None, trajectory_log: Optional[EventLog] = None
                 ) -> dict[str, Path]:
    """Write the sweep's files plus a manifest of their sha256 digests.

    Bytes are fully determined by the result object.  On a write failure
    everything already written is removed so a partial directory never
    masquerades as a finished one.
    """
    from .inference import fitted_to_record

    out = Path(output_dir)
    out.mkdir(parents=True, exist_ok=True)
    payload: dict[str, bytes] = {
        "sweep_table.csv": _sweep_table_bytes(result),
        "summaries.jsonl": _summaries_bytes(result),
        "exit_curves.csv": _exit_curves_bytes(result),
        "trend.json": (json.dumps(result.trend.to_record(), sort_keys=True,
                                  separators=(",", ":")) + "\n").encode("utf-8"),
    }
    if result.errors:
        lines = [json.dumps(e, sort_keys=True, separators=(",", ":"))
                 for e in result.errors]
        payload["errors.jsonl"] = ("\n".join(lines) + "\n").encode("utf-8")
    if trajectory_log is not None:
        payload["trajectories.csv"] = _trajectories_bytes(trajectory_log)
    if fitted is not None:
        lines = [json.dumps(fitted_to_record(f), sort_keys=True,
                            separators=(",", ":")) for f in fitted]
        payload["fitted.jsonl"] = ("\n".join(lines) + "\n").encode("utf-8")

    digests = {name: hashlib.sha256(data).hexdigest()
               for name, data in payload.items()}
    manifest = json.dumps({"format": MANIFEST_FORMAT, "files": digests},
                          sort_keys=True, separators=(",", ":")) + "\n"

    written: list[Path] = []
    paths: dict[str, Path] = {}
    try:
        for name in sorted(payload):
            path = out / name
            path.write_bytes(payload[name])
            written.append(path)
            paths[name] = path
        manifest_path = out / "manifest.json"
        manifest_path.write_bytes(manifest.encode("utf-8"))
        written.append(manifest_path)
        paths["manifest.json"] = manifest_path
    except OSError:
        for path in written:
            try:
                path.unlink()
            except OSError:
                pass
        raise
    return paths


def verify_manifest(output_dir: Union[str, Path]) -> bool:
    """Recompute digests for a finished output directory."""
    out = Path(output_dir)
    manifest = json.loads((out / "manifest.json").read_text(encoding="utf-8"))
    if manifest.get("format") != MANIFEST_FORMAT:
        raise ConfigurationError("unrecognized manifest format")
    for name, digest in manifest["files"].items():
        actual = hashlib.sha256((out / name).read_bytes()).hexdigest()
        if actual != digest:
            return False
    return True
