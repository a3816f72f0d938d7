"""Streaming test engine.

Events are turned into signed increments (control ``+y``, treatment
``-y``), accumulated into the running sum and compared against a
boundary after every event. Also hosts the input-side transforms:
variance estimation, subject-level downsampling and progressive capping.
"""

from __future__ import annotations

import hashlib
import math
import warnings
from dataclasses import dataclass, field, replace
from datetime import datetime, timezone
from typing import Iterable, Sequence, Union

import numpy as np

from seqmon.boundaries import ONE_SIDED, ConstantBoundary, StaircaseBoundary
from seqmon.errors import DataError, DomainError, UsageError
from seqmon.rng import mix64

CONTROL = "control"
TREATMENT = "treatment"
GROUPS = (CONTROL, TREATMENT)

CONTINUE = "continue"
FLAG = "flag"

Boundary = Union[ConstantBoundary, StaircaseBoundary]


@dataclass(frozen=True)
class Event:
    index: int
    timestamp: datetime
    subject_id: str
    group: str
    outcome: float

    def __post_init__(self) -> None:
        if self.group not in GROUPS:
            raise DataError(f"group must be 'control' or 'treatment', got {self.group!r}")
        if not math.isfinite(self.outcome):
            raise DataError(f"event {self.index}: outcome must be finite, got {self.outcome}")


def increment_from_event(e: Event) -> float:
    """``(1 - 2W) * Y``: positive for control, negative for treatment."""
    if not math.isfinite(e.outcome):
        raise DataError(f"event {e.index}: outcome must be finite")
    return e.outcome if e.group == CONTROL else -e.outcome


def increments(events: Iterable[Event]) -> np.ndarray:
    return np.array([increment_from_event(e) for e in events], dtype=float)


@dataclass(frozen=True)
class MonitorState:
    boundary: Boundary
    n: int = 0
    running_sum: float = 0.0
    running_max: float = 0.0
    detected_at: int | None = None

    @property
    def horizon(self) -> int:
        return self.boundary.horizon


def _check_boundary(boundary: Boundary) -> None:
    if isinstance(boundary, StaircaseBoundary) and boundary.sidedness != ONE_SIDED:
        raise DomainError("two-sided staircase monitoring is not supported")


def initial_state(boundary: Boundary) -> MonitorState:
    _check_boundary(boundary)
    return MonitorState(boundary)


def step(state: MonitorState, e: Event | float) -> tuple[MonitorState, str]:
    """Consume one event (or a raw increment) and return the new state and decision.

    Detection is sticky: once flagged, every later step also returns ``"flag"``
    and ``detected_at`` keeps the first crossing.
    """
    if state.n >= state.horizon:
        raise UsageError(f"monitor already consumed its horizon of {state.horizon} events")
    x = increment_from_event(e) if isinstance(e, Event) else float(e)
    if not math.isfinite(x):
        raise DataError(f"increment must be finite, got {x}")
    n = state.n + 1
    s = state.running_sum + x
    stat = s if state.boundary.sidedness == ONE_SIDED else abs(s)
    detected_at = state.detected_at
    if detected_at is None and stat > state.boundary.threshold_at(n):
        detected_at = n
    new = replace(
        state,
        n=n,
        running_sum=s,
        running_max=max(state.running_max, stat),
        detected_at=detected_at,
    )
    return new, (CONTINUE if detected_at is None else FLAG)


@dataclass(frozen=True)
class MonitorReport:
    detected_at: int | None
    final_s: float
    n_processed: int
    boundary: Boundary
    trajectory: list[tuple[int, float, float, bool]] | None = field(default=None, compare=False)

    def to_dict(self) -> dict:
        return {
            "detected_at": self.detected_at,
            "n_processed": self.n_processed,
            "final_s": self.final_s,
            "boundary": self.boundary.to_dict(),
        }


def run_stream(
    events: Iterable[Event],
    boundary: Boundary,
    *,
    strict: bool = True,
    truncate: bool = False,
    record_trajectory: bool = False,
) -> MonitorReport:
    """Fold :func:`step` over a time-ordered event stream.

    Out-of-order timestamps raise :class:`DataError` when ``strict``,
    otherwise they only warn. Events past the boundary horizon raise
    :class:`UsageError` unless ``truncate`` is set, in which case the
    remainder of the stream is ignored.
    """
    state = initial_state(boundary)
    last_ts = None
    trajectory = [] if record_trajectory else None
    for e in events:
        if last_ts is not None and _ts_key(e.timestamp) < last_ts:
            msg = f"event {e.index} is out of timestamp order"
            if strict:
                raise DataError(msg)
            warnings.warn(msg, stacklevel=2)
        last_ts = _ts_key(e.timestamp)
        if state.n >= state.horizon and truncate:
            break
        state, decision = step(state, e)
        if trajectory is not None:
            trajectory.append(
                (state.n, state.running_sum, boundary.threshold_at(state.n), decision == FLAG)
            )
    return MonitorReport(state.detected_at, state.running_sum, state.n, boundary, trajectory)


def _ts_key(ts: datetime) -> float:
    return ts.timestamp() if ts.tzinfo is not None else ts.replace(tzinfo=timezone.utc).timestamp()


def first_crossing(stat_path: np.ndarray, thresholds: np.ndarray) -> int | None:
    """1-based index of the first ``stat > threshold``, or ``None``."""
    hits = np.flatnonzero(np.asarray(stat_path) > np.asarray(thresholds))
    return int(hits[0]) + 1 if hits.size else None


# ---------------------------------------------------------------------------
# variance estimation


@dataclass(frozen=True)
class VarianceEstimate:
    value: float
    method: str
    n_events: int
    n_clusters: int | None = None


def estimate_variance_iid(values: Sequence[float]) -> VarianceEstimate:
    """Sample variance (``ddof=1``) of the increments, i.e. ``var(S_N) / N``
    when increments are independent."""
    x = np.asarray(values, dtype=float)
    if x.size < 2:
        raise DataError("need at least two increments to estimate a variance")
    v = float(np.var(x, ddof=1))
    if not v > 0:
        raise DataError("increments are constant; variance is degenerate")
    return VarianceEstimate(v, "iid", int(x.size))


def cluster_robust_variance(values: Sequence[float], clusters: Sequence) -> tuple[float, int]:
    """``(1/N) * sum_g (sum_{i in g} (x_i - mean))^2`` and the cluster count.

    CR0-style, no small-sample correction.
    """
    x = np.asarray(values, dtype=float)
    _, inverse = np.unique(np.asarray(clusters), return_inverse=True)
    n_clusters = int(inverse.max()) + 1 if x.size else 0
    if n_clusters < 2:
        raise DataError("cluster-robust variance needs at least two clusters")
    sums = np.bincount(inverse, weights=x - x.mean(), minlength=n_clusters)
    return float(np.dot(sums, sums) / x.size), n_clusters


def estimate_variance_cluster_robust(events: Sequence[Event]) -> VarianceEstimate:
    """Variance of the running sum robust to correlation among events of the
    same subject; clusters are subject ids."""
    x = increments(events)
    v, g = cluster_robust_variance(x, [e.subject_id for e in events])
    if not v > 0:
        raise DataError("cluster sums are all zero; variance is degenerate")
    return VarianceEstimate(v, "cluster_robust", int(x.size), g)


# ---------------------------------------------------------------------------
# input transforms


def _subject_groups(events: Sequence[Event]) -> dict[str, str]:
    groups: dict[str, str] = {}
    for e in events:
        seen = groups.setdefault(e.subject_id, e.group)
        if seen != e.group:
            raise DataError(f"subject {e.subject_id!r} appears in both groups")
    return groups


def _subject_key(subject_id: str, seed: int) -> int:
    digest = hashlib.blake2b(subject_id.encode("utf-8"), digest_size=8).digest()
    return int(mix64(np.uint64(int.from_bytes(digest, "little") ^ (seed & 0xFFFFFFFFFFFFFFFF))))


def downsample_subjects(
    events: Sequence[Event], seed: int, target_ratio: float | None = None
) -> list[Event]:
    """Drop a random subset of the larger group's subjects (with all their events).

    ``target_ratio`` is the fraction of the larger group's subjects kept;
    by default it is chosen so both groups end up with the same number of
    subjects. Selection depends only on ``seed`` and the subject ids.
    """
    groups = _subject_groups(events)
    by_group = {g: sorted(s for s, gg in groups.items() if gg == g) for g in GROUPS}
    if not by_group[CONTROL] or not by_group[TREATMENT]:
        raise DataError("both groups need at least one subject")
    larger = max(GROUPS, key=lambda g: len(by_group[g]))
    smaller = TREATMENT if larger == CONTROL else CONTROL
    n_large = len(by_group[larger])
    if target_ratio is None:
        keep = len(by_group[smaller])
    else:
        if not 0.0 < target_ratio <= 1.0:
            raise DomainError(f"target_ratio must lie in (0, 1], got {target_ratio}")
        keep = int(round(target_ratio * n_large))
    if keep >= n_large:
        return list(events)
    ranked = sorted(by_group[larger], key=lambda s: (_subject_key(s, seed), s))
    dropped = set(ranked[keep:])
    return [e for e in events if e.subject_id not in dropped]


def progressive_cap(events: Sequence[Event], cap: float) -> list[Event]:
    """Per subject, keep events while the running outcome total stays within ``cap``.

    The event that pushes a subject over the cap is dropped along with
    every later event of that subject. ``cap = inf`` is the identity.
    """
    if not cap > 0:
        raise DomainError(f"cap must be positive, got {cap}")
    if cap == math.inf:
        return list(events)
    totals: dict[str, float] = {}
    stopped: set[str] = set()
    out = []
    for e in events:
        if e.subject_id in stopped:
            continue
        total = totals.get(e.subject_id, 0.0) + e.outcome
        if total > cap:
            stopped.add(e.subject_id)
            continue
        totals[e.subject_id] = total
        out.append(e)
    return out


def percentile_cap_from_history(events: Sequence[Event], percentile: float) -> float:
    """Empirical percentile of per-subject outcome totals.

    Uses the order statistic at 0-based rank ``ceil(p * (n - 1))``, so
    the result is always an observed total.
    """
    if not 0.0 < percentile < 1.0:
        raise DomainError(f"percentile must lie in (0, 1), got {percentile}")
    totals: dict[str, float] = {}
    for e in events:
        totals[e.subject_id] = totals.get(e.subject_id, 0.0) + e.outcome
    if not totals:
        raise DataError("no events to compute a cap from")
    values = sorted(totals.values())
    rank = math.ceil(round(percentile * (len(values) - 1), 9))
    cap = values[rank]
    if not cap > 0:
        raise DataError(f"percentile cap must be positive, got {cap}")
    return float(cap)
