"""Rate estimation from contest event logs.

The likelihood of a logged event sequence treats each holding time tau_j
(in seconds) as an exponential draw at rate r_j, giving the negative log
likelihood

    sum_j ( -log r_j + r_j * tau_j ).

Two rate models share that loss: a two-state model (one rate inside the
reward spread, one outside) with a closed-form maximum-likelihood solution,
and a log-linear model r_j = exp(theta . x_j) over standardized leaderboard
features, fitted by batch gradient descent with a backtracking line search.
"""

from __future__ import annotations

import json
import math
from collections import defaultdict
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, Optional, Sequence, Union

import numpy as np

from .core import ContestConfig, Post, WorkerProfile
from .errors import ConfigurationError, DegenerateDataError
from .simulate import AnnotationEvent, EventLog, RateFn, run_contest

# Fixed, versioned feature layout for the log-linear model.
FEATURE_NAMES = ("intercept", "rank", "elapsed_time", "annotations_remaining",
                 "eligible")
FEATURES_VERSION = 1

DEFAULT_TOLERANCE = 1e-8
DEFAULT_MAX_ITERS = 10_000
_ARMIJO_C = 1e-4
_MIN_STEP = 1e-20


@dataclass(frozen=True)
class FeatureVector:
    """Raw observables describing the interval that produced one event."""

    rank: int
    elapsed_time_ms: int
    annotations_remaining: int
    eligible: bool

    @classmethod
    def from_event(cls, event: AnnotationEvent) -> "FeatureVector":
        # The event's rank/eligibility already describe the interval start;
        # elapsed time is recovered from the holding-time recursion, and the
        # remaining-post count is stepped back over the event itself.
        return cls(
            rank=event.rank_at_event,
            elapsed_time_ms=event.event_time_ms - event.holding_time_ms,
            annotations_remaining=event.annotations_remaining + 1,
            eligible=event.eligible_at_event,
        )


@dataclass(frozen=True)
class FeatureNorms:
    """Contest totals used to standardize features into [0, 1] ranges."""

    n_workers: int
    horizon_ms: int
    n_posts: int

    def __post_init__(self) -> None:
        if self.n_workers < 1 or self.horizon_ms < 1 or self.n_posts < 1:
            raise ConfigurationError("feature norms must be positive")

    @classmethod
    def from_log(cls, log: EventLog) -> "FeatureNorms":
        return cls(n_workers=log.config.n_workers, horizon_ms=log.horizon_ms,
                   n_posts=log.config.n_posts)

    def vector(self, fv: FeatureVector) -> tuple[float, ...]:
        return (
            1.0,
            fv.rank / self.n_workers,
            fv.elapsed_time_ms / self.horizon_ms,
            fv.annotations_remaining / self.n_posts,
            1.0 if fv.eligible else 0.0,
        )


@dataclass(frozen=True)
class FittedBehavior:
    """Result of fitting one worker's rate model."""

    worker_id: Optional[int]
    model_kind: str
    lambda_in_hat: Optional[float]
    lambda_out_hat: Optional[float]
    theta_hat: Optional[tuple[float, ...]]
    nll: float
    n_in: int
    n_out: int
    converged: bool
    iterations: int = 0
    nll_history: tuple[float, ...] = field(default=(), repr=False, compare=False)


def _holding_seconds(events: Sequence[AnnotationEvent]) -> np.ndarray:
    tau = np.array([e.holding_time_ms for e in events], dtype=float) / 1000.0
    if len(tau) and tau.min() <= 0.0:
        raise DegenerateDataError("holding times must be positive")
    return tau


def _design_matrix(features: Sequence[FeatureVector],
                   norms: FeatureNorms) -> np.ndarray:
    return np.array([norms.vector(fv) for fv in features], dtype=float)


def negative_log_likelihood(events: Sequence[AnnotationEvent],
                            params: Sequence[float],
                            model_kind: str = "two_state",
                            norms: Optional[FeatureNorms] = None) -> float:
    """Exponential-holding-time loss; 0 by convention for an empty log."""
    if not events:
        return 0.0
    tau = _holding_seconds(events)
    if model_kind == "two_state":
        lam_in, lam_out = params
        if lam_in <= 0.0 or lam_out <= 0.0:
            raise ConfigurationError("two-state rates must be positive")
        rates = np.where([e.eligible_at_event for e in events], lam_in, lam_out)
        return float(np.sum(-np.log(rates) + rates * tau))
    if model_kind == "log_linear":
        if norms is None:
            raise ConfigurationError("log-linear likelihood needs feature norms")
        theta = np.asarray(params, dtype=float)
        if theta.shape != (len(FEATURE_NAMES),):
            raise ConfigurationError(
                f"theta must have {len(FEATURE_NAMES)} components")
        x = _design_matrix([FeatureVector.from_event(e) for e in events], norms)
        eta = x @ theta
        return float(np.sum(-eta + np.exp(eta) * tau))
    raise ConfigurationError(f"unknown model kind {model_kind!r}")


def nll_gradient(events: Sequence[AnnotationEvent], theta: Sequence[float],
                 norms: FeatureNorms) -> np.ndarray:
    """Gradient of the log-linear loss: sum_j (r_j tau_j - 1) x_j."""
    th = np.asarray(theta, dtype=float)
    if th.shape != (len(FEATURE_NAMES),):
        raise ConfigurationError(f"theta must have {len(FEATURE_NAMES)} components")
    if not events:
        return np.zeros(len(FEATURE_NAMES))
    tau = _holding_seconds(events)
    x = _design_matrix([FeatureVector.from_event(e) for e in events], norms)
    rates = np.exp(x @ th)
    return x.T @ (rates * tau - 1.0)


def fit_two_state(events: Sequence[AnnotationEvent],
                  worker_id: Optional[int] = None) -> FittedBehavior:
    """Closed-form MLE: rate per state = event count / total holding time.

    A state with no events is unidentifiable and reported as None; the
    other state's estimate is unaffected.
    """
    n = {True: 0, False: 0}
    total_s = {True: 0.0, False: 0.0}
    for e in events:
        if e.holding_time_ms <= 0:
            raise DegenerateDataError("holding times must be positive")
        n[e.eligible_at_event] += 1
        total_s[e.eligible_at_event] += e.holding_time_ms / 1000.0
    for state in (True, False):
        if n[state] > 0 and total_s[state] <= 0.0:
            raise DegenerateDataError("zero total holding time in a populated state")
    lam_in = n[True] / total_s[True] if n[True] else None
    lam_out = n[False] / total_s[False] if n[False] else None
    nll = 0.0
    for state, lam in ((True, lam_in), (False, lam_out)):
        if lam is not None:
            # At the MLE, sum(rate * tau) over the state equals its count.
            nll += -n[state] * math.log(lam) + n[state]
    return FittedBehavior(
        worker_id=worker_id, model_kind="two_state",
        lambda_in_hat=lam_in, lambda_out_hat=lam_out, theta_hat=None,
        nll=nll, n_in=n[True], n_out=n[False],
        converged=bool(events),
    )


def fit_log_linear(events: Sequence[AnnotationEvent], norms: FeatureNorms,
                   worker_id: Optional[int] = None,
                   init_theta: Optional[Sequence[float]] = None,
                   step_size: float = 1.0,
                   max_iters: int = DEFAULT_MAX_ITERS,
                   tolerance: float = DEFAULT_TOLERANCE) -> FittedBehavior:
    """Batch gradient descent on the log-linear loss.

    Backtracking (Armijo) line search keeps the loss non-increasing across
    accepted iterations; convergence is declared when the gradient's
    infinity norm drops below ``tolerance``.
    """
    if max_iters < 1:
        raise ConfigurationError("max_iters must be >= 1")
    if tolerance <= 0.0 or step_size <= 0.0:
        raise ConfigurationError("tolerance and step_size must be positive")
    dim = len(FEATURE_NAMES)
    theta = (np.zeros(dim) if init_theta is None
             else np.asarray(init_theta, dtype=float).copy())
    if theta.shape != (dim,):
        raise ConfigurationError(f"init_theta must have {dim} components")
    n_in = sum(1 for e in events if e.eligible_at_event)
    n_out = len(events) - n_in
    if not events:
        return FittedBehavior(worker_id=worker_id, model_kind="log_linear",
                              lambda_in_hat=None, lambda_out_hat=None,
                              theta_hat=tuple(theta), nll=0.0,
                              n_in=0, n_out=0, converged=False)

    tau = _holding_seconds(events)
    x = _design_matrix([FeatureVector.from_event(e) for e in events], norms)

    def loss(th: np.ndarray) -> float:
        eta = x @ th
        return float(np.sum(-eta + np.exp(eta) * tau))

    def grad(th: np.ndarray) -> np.ndarray:
        return x.T @ (np.exp(x @ th) * tau - 1.0)

    nll = loss(theta)
    if not math.isfinite(nll):
        raise DegenerateDataError("loss is non-finite at the starting point")
    history = [nll]
    converged = False
    iterations = 0
    for iterations in range(max_iters + 1):
        g = grad(theta)
        if float(np.max(np.abs(g))) < tolerance:
            converged = True
            break
        if iterations == max_iters:
            break
        g_sq = float(g @ g)
        step = step_size
        while True:
            candidate = theta - step * g
            nll_new = loss(candidate)
            if math.isfinite(nll_new) and nll_new <= nll - _ARMIJO_C * step * g_sq:
                break
            step *= 0.5
            if step < _MIN_STEP:
                candidate, nll_new = theta, nll  # no descent direction left
                break
        if nll_new >= nll and not converged:
            # Line search stalled at numerical precision; report honestly.
            break
        theta, nll = candidate, nll_new
        history.append(nll)
    return FittedBehavior(
        worker_id=worker_id, model_kind="log_linear",
        lambda_in_hat=None, lambda_out_hat=None, theta_hat=tuple(theta),
        nll=nll, n_in=n_in, n_out=n_out, converged=converged,
        iterations=iterations, nll_history=tuple(history),
    )


def make_log_linear_rate_fn(theta: Sequence[float],
                            norms: FeatureNorms) -> RateFn:
    """Adapt a theta vector into the engine's custom-rate callback."""
    th = tuple(float(t) for t in theta)
    if len(th) != len(FEATURE_NAMES):
        raise ConfigurationError(f"theta must have {len(FEATURE_NAMES)} components")

    def rate(rank: int, elapsed_ms: int, remaining: int, eligible: bool) -> float:
        x = (1.0, rank / norms.n_workers, elapsed_ms / norms.horizon_ms,
             remaining / norms.n_posts, 1.0 if eligible else 0.0)
        return math.exp(sum(t * xi for t, xi in zip(th, x)))

    return rate


def predicted_rate(fit: FittedBehavior, fv: FeatureVector,
                   norms: Optional[FeatureNorms] = None) -> float:
    """Rate a fitted model assigns to one feature vector."""
    if fit.model_kind == "two_state":
        lam = fit.lambda_in_hat if fv.eligible else fit.lambda_out_hat
        if lam is None:
            raise DegenerateDataError("requested state was unidentifiable")
        return lam
    if norms is None:
        raise ConfigurationError("log-linear prediction needs feature norms")
    eta = sum(t * xi for t, xi in zip(fit.theta_hat, norms.vector(fv)))
    return math.exp(eta)


# --- serialization ---------------------------------------------------------

def fitted_to_record(fit: FittedBehavior) -> dict:
    record = {
        "worker_id": fit.worker_id,
        "model_kind": fit.model_kind,
        "nll": fit.nll,
        "n_in": fit.n_in,
        "n_out": fit.n_out,
        "converged": fit.converged,
    }
    if fit.model_kind == "two_state":
        record["lambda_in_hat"] = fit.lambda_in_hat
        record["lambda_out_hat"] = fit.lambda_out_hat
    else:
        record["theta_hat"] = list(fit.theta_hat)
    return record


def write_fitted(fits: Sequence[FittedBehavior], path: Union[str, Path]) -> None:
    lines = [json.dumps(fitted_to_record(f), sort_keys=True,
                        separators=(",", ":")) for f in fits]
    Path(path).write_text("\n".join(lines) + ("\n" if lines else ""),
                          encoding="utf-8")


def read_fitted(path: Union[str, Path]) -> list[FittedBehavior]:
    fits = []
    for line in Path(path).read_text(encoding="utf-8").splitlines():
        obj = json.loads(line)
        theta = obj.get("theta_hat")
        fits.append(FittedBehavior(
            worker_id=obj["worker_id"], model_kind=obj["model_kind"],
            lambda_in_hat=obj.get("lambda_in_hat"),
            lambda_out_hat=obj.get("lambda_out_hat"),
            theta_hat=None if theta is None else tuple(theta),
            nll=obj["nll"], n_in=obj["n_in"], n_out=obj["n_out"],
            converged=obj["converged"],
        ))
    return fits


# --- recovery experiments --------------------------------------------------

@dataclass(frozen=True)
class RecoveryRow:
    seed: int
    worker_id: int
    true_lambda_in: float
    true_lambda_out: float
    est_lambda_in: Optional[float]
    est_lambda_out: Optional[float]
    rel_err_in: Optional[float]
    rel_err_out: Optional[float]
    n_in: int
    n_out: int
    runs_pooled: int


@dataclass(frozen=True)
class RecoveryReport:
    rows: tuple[RecoveryRow, ...]
    n_events_target: int
    mean_rel_err_in: float
    mean_rel_err_out: float
    max_rel_err_in: float
    max_rel_err_out: float
    unidentifiable: int

    def to_record(self) -> dict:
        return {
            "n_events_target": self.n_events_target,
            "mean_rel_err_in": self.mean_rel_err_in,
            "mean_rel_err_out": self.mean_rel_err_out,
            "max_rel_err_in": self.max_rel_err_in,
            "max_rel_err_out": self.max_rel_err_out,
            "unidentifiable": self.unidentifiable,
            "n_rows": len(self.rows),
        }


def _recovery_config(n_workers: int, posts_per_run: int) -> ContestConfig:
    # One giant window consumed from a shared pool: the horizon equals the
    # task unit time, chosen long enough that the pool always runs dry.
    horizon_s = float(4 * posts_per_run)
    return ContestConfig(
        n_workers=n_workers, n_posts=posts_per_run,
        window_size=posts_per_run, task_unit_time_s=horizon_s,
        task_unit_size=posts_per_run,
        arrival_rate=posts_per_run / horizon_s,
        reward_spread=max(1, n_workers // 2),
        prize_value=0.0, base_points=10, leaderboard_k=1,
        quality_constraint=0, reduction_rate=2.0,
    )


def _recovery_posts(n_posts: int) -> list[Post]:
    return [Post(id=i, token_count=10, expected_entities=1, arrival_index=i)
            for i in range(n_posts)]


def recovery_experiment(prior, n_workers: int, n_events_target: int,
                        seeds: Iterable[int], *,
                        fixed_rates: Optional[tuple[float, float]] = None
                        ) -> RecoveryReport:
    """Simulate contests, fit the two-state model, and score the recovery.

    For each seed: draw (or fix) worker rates, pool shared-pool contest runs
    until every worker has ``n_events_target`` events in each eligibility
    state (or a run cap is hit), fit per worker, and record relative errors
    against the generating rates.

    With ``fixed_rates`` the first worker gets exactly that (in, out) pair
    and the remainder get the mirrored pair, which keeps the leaderboard
    contested so both states stay populated.  ``prior`` is consulted only
    when ``fixed_rates`` is None.
    """
    from . import rng as streams  # local import keeps module load light
    from .simulate import BehaviorPrior, draw_behavior

    if n_workers < 2:
        raise ConfigurationError("recovery needs at least two workers")
    if n_events_target < 0:
        raise ConfigurationError("n_events_target must be >= 0")
    posts_per_run = 200 * n_workers
    config = _recovery_config(n_workers, posts_per_run)
    posts = _recovery_posts(posts_per_run)
    max_runs = 0 if n_events_target == 0 else max(6, -(-n_events_target * 8 // 200))

    rows: list[RecoveryRow] = []
    for seed in seeds:
        if fixed_rates is not None:
            lam_in, lam_out = fixed_rates
            pairs = [(lam_in, lam_out) if i % 2 == 0 else (lam_out, lam_in)
                     for i in range(n_workers)]
        else:
            if prior is None:
                raise ConfigurationError("either prior or fixed_rates is required")
            gen = streams.substream(seed, streams.PROFILES)
            pairs = [draw_behavior(prior, gen) for _ in range(n_workers)]
        profiles = [
            WorkerProfile(id=i, skill=1.0, lambda_in=pairs[i][0],
                          lambda_out=pairs[i][1], cost_per_effort=0.0,
                          exit_threshold=0.0)
            for i in range(n_workers)
        ]
        pooled: dict[int, list[AnnotationEvent]] = defaultdict(list)
        runs = 0
        while runs < max_runs:
            log = run_contest(config, profiles, posts, seed=(seed, runs),
                              dispatch="shared", base_hazard=0.0)
            runs += 1
            for e in log.events:
                pooled[e.worker_id].append(e)
            done = all(
                sum(1 for e in pooled[w] if e.eligible_at_event) >= n_events_target
                and sum(1 for e in pooled[w] if not e.eligible_at_event) >= n_events_target
                for w in range(n_workers)
            )
            if done:
                break
        for w in range(n_workers):
            fit = fit_two_state(pooled[w], worker_id=w)
            true_in, true_out = pairs[w]
            err_in = (abs(fit.lambda_in_hat - true_in) / true_in
                      if fit.lambda_in_hat is not None else None)
            err_out = (abs(fit.lambda_out_hat - true_out) / true_out
                       if fit.lambda_out_hat is not None else None)
            rows.append(RecoveryRow(
                seed=seed, worker_id=w, true_lambda_in=true_in,
                true_lambda_out=true_out, est_lambda_in=fit.lambda_in_hat,
                est_lambda_out=fit.lambda_out_hat, rel_err_in=err_in,
                rel_err_out=err_out, n_in=fit.n_in, n_out=fit.n_out,
                runs_pooled=runs,
            ))

    errs_in = [r.rel_err_in for r in rows if r.rel_err_in is not None]
    errs_out = [r.rel_err_out for r in rows if r.rel_err_out is not None]
    nan = float("nan")
    return RecoveryReport(
        rows=tuple(rows),
        n_events_target=n_events_target,
        mean_rel_err_in=float(np.mean(errs_in)) if errs_in else nan,
        mean_rel_err_out=float(np.mean(errs_out)) if errs_out else nan,
        max_rel_err_in=float(np.max(errs_in)) if errs_in else nan,
        max_rel_err_out=float(np.max(errs_out)) if errs_out else nan,
        unidentifiable=sum(1 for r in rows
                           if r.rel_err_in is None or r.rel_err_out is None),
    )
