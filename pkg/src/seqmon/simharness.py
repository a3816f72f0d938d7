"""Monte-Carlo harness: detection rates and savings of monitoring rules on
simulated two-group experiments, permutation validation on clustered
event data, and an exact enumeration check of the reflection inequality.

All randomness comes from :mod:`seqmon.rng` substreams, so a result
depends only on ``(base_seed, rep_index)`` and never on chunking.
"""

from __future__ import annotations

import csv
import io
import json
import math
import platform
from dataclasses import asdict, dataclass, replace
from datetime import datetime, timedelta, timezone
from typing import Iterable, Sequence

import numpy as np

from seqmon import rng
from seqmon.boundaries import (
    DEFAULT_METHODS,
    ONE_SIDED,
    MethodSpec,
    TestConfig,
    normalize_sidedness,
    threshold_path,
)
from seqmon.errors import DataError, DomainError, ResourceError, UsageError
from seqmon.monitor import CONTROL, TREATMENT, Event

CONTINUOUS = "continuous"
DISCRETE = "discrete"
RESULT_COLUMNS = (
    "method", "effect", "mode", "check_count", "detection_rate",
    "std_error", "mean_savings", "replications", "seed",
)


@dataclass(frozen=True)
class ScenarioDistribution:
    """Outcome law of both groups; ``effect`` moves only the treatment.

    * ``normal``: control ``N(mean, sd)``, treatment mean shifted by ``effect * sd``.
    * ``student_t``: ``t(df) + shift`` vs ``t(df) + shift * (1 + effect)``.
    * ``gamma``: ``Gamma(shape, scale)`` vs ``Gamma(shape, scale * (1 + effect))``.
    """

    kind: str = "normal"
    mean: float = 1.0
    sd: float = 1.0
    df: float = 3.0
    shift: float = math.sqrt(3.0)
    shape: float = 1.0
    scale: float = 2.0

    def __post_init__(self) -> None:
        if self.kind not in ("normal", "student_t", "gamma"):
            raise DomainError(f"unknown scenario kind {self.kind!r}")
        if self.kind == "normal" and not self.sd > 0:
            raise DomainError("sd must be positive")
        if self.kind == "student_t" and not self.df > 2:
            raise DomainError("df must exceed 2 for a finite variance")
        if self.kind == "gamma" and not (self.shape > 0 and self.scale > 0):
            raise DomainError("gamma shape and scale must be positive")

    @property
    def draws_per_value(self) -> int:
        return 2 if self.kind == "student_t" else 1

    def null_increment_variance(self) -> float:
        """``var(Y_c - Y_t)`` when the effect is zero."""
        if self.kind == "normal":
            return 2.0 * self.sd**2
        if self.kind == "student_t":
            return 2.0 * self.df / (self.df - 2.0)
        return 2.0 * self.shape * self.scale**2

    def base_draws(self, keys: np.ndarray, start: int, count: int) -> np.ndarray:
        """Zero-effect noise component for ``count`` values of each stream."""
        if self.kind == "normal":
            return rng.normals(keys, start, count)
        if self.kind == "student_t":
            z = rng.normals(keys, start, count)
            chi2 = 2.0 * rng.gammas(keys, start + count, count, self.df / 2.0)
            return z / np.sqrt(chi2 / self.df)
        return rng.gammas(keys, start, count, self.shape)

    def apply(self, noise: np.ndarray, effect: float, treated: bool) -> np.ndarray:
        e = effect if treated else 0.0
        if self.kind == "normal":
            return self.mean + e * self.sd + self.sd * noise
        if self.kind == "student_t":
            return noise + self.shift * (1.0 + e)
        return self.scale * (1.0 + e) * noise


def _draw_pair(dist: ScenarioDistribution, keys: np.ndarray, n: int):
    width = n * dist.draws_per_value
    return dist.base_draws(keys, 0, n), dist.base_draws(keys, width, n)


def sample_scenario(
    dist: ScenarioDistribution, effect: float, seed: int, rep_index: int = 0, size: int = 1
) -> tuple[np.ndarray, np.ndarray]:
    """Control and treatment outcomes for one replication's substream."""
    keys = rng.substream_keys(seed, [rep_index])
    noise_c, noise_t = _draw_pair(dist, keys, size)
    return dist.apply(noise_c[0], effect, False), dist.apply(noise_t[0], effect, True)


@dataclass(frozen=True)
class SimConfig:
    scenario: ScenarioDistribution = ScenarioDistribution()
    n_per_group: int = 500
    effect_sizes: tuple[float, ...] = (0.0, 0.1, 0.2, 0.3, 0.4)
    replications: int = 100_000
    base_seed: int = 8163
    alpha: float = 0.05
    methods: tuple[str, ...] = DEFAULT_METHODS
    mode: str = CONTINUOUS
    check_counts: tuple[int, ...] = ()
    sidedness: str = ONE_SIDED
    chunk_size: int = 5000

    def __post_init__(self) -> None:
        if self.replications < 1:
            raise DomainError("replications must be >= 1")
        if not self.effect_sizes:
            raise DomainError("effect grid must be non-empty")
        if self.n_per_group < 1:
            raise DomainError("n_per_group must be >= 1")
        if not 0 < self.alpha < 1:
            raise DomainError(f"alpha must lie in (0, 1), got {self.alpha}")
        if self.mode not in (CONTINUOUS, DISCRETE):
            raise UsageError(f"mode must be 'continuous' or 'discrete', got {self.mode!r}")
        if self.mode == DISCRETE:
            if not self.check_counts:
                raise UsageError("discrete mode needs at least one check count")
            for c in self.check_counts:
                if not 1 <= c <= self.n_per_group:
                    raise UsageError(f"check count {c} must lie in 1..{self.n_per_group}")
        object.__setattr__(self, "sidedness", normalize_sidedness(self.sidedness))
        for m in self.methods:
            MethodSpec.parse(m)


@dataclass(frozen=True)
class SimResult:
    method: str
    effect: float
    mode: str
    check_count: int
    detection_rate: float
    std_error: float
    mean_savings: float
    mean_savings_detected: float
    replications: int
    seed: int

    def csv_row(self) -> list[str]:
        return [
            self.method, f"{self.effect:g}", self.mode, str(self.check_count),
            f"{self.detection_rate:.6f}", f"{self.std_error:.6f}", f"{self.mean_savings:.6f}",
            str(self.replications), str(self.seed),
        ]


def savings(detection_index: int | None, n_total: int) -> float:
    """Share of the sample not needed: ``1 - index / n_total``; 0 without detection."""
    if detection_index is None:
        return 0.0
    if not 1 <= detection_index <= n_total:
        raise DomainError(f"detection index {detection_index} outside 1..{n_total}")
    return 1.0 - detection_index / n_total


def checkpoints(n_total: int, check_count: int) -> np.ndarray:
    """1-based step indices of ``check_count`` equally spaced checks ending at ``n_total``."""
    if not 1 <= check_count <= n_total:
        raise UsageError(f"check count {check_count} must lie in 1..{n_total}")
    j = np.arange(1, check_count + 1, dtype=np.int64)
    return (n_total * j + check_count // 2) // check_count


def _masked(thresholds: np.ndarray, checks: np.ndarray | None) -> np.ndarray:
    if checks is None:
        return thresholds
    out = np.full_like(thresholds, np.inf)
    out[checks - 1] = thresholds[checks - 1]
    return out


def _monitored_statistic(s: np.ndarray, sidedness: str) -> np.ndarray:
    # one-sided runs look for the treatment outperforming control, i.e. S drifting down
    return -s if sidedness == ONE_SIDED else np.abs(s)


def _first_hits(stat: np.ndarray, thresholds: np.ndarray) -> np.ndarray:
    """0 where no crossing, else the 1-based index of the first crossing, per row."""
    cross = stat > thresholds[None, :]
    first = cross.argmax(axis=1) + 1
    return np.where(cross.any(axis=1), first, 0)


@dataclass
class _Cell:
    detections: int = 0
    savings_sum: float = 0.0


def _cells_for(cfg: SimConfig) -> list[tuple[str, int, np.ndarray]]:
    """(method name, check count, threshold path) for every method/mode cell."""
    n = cfg.n_per_group
    var = cfg.scenario.null_increment_variance()
    out = []
    counts = cfg.check_counts if cfg.mode == DISCRETE else (n,)
    for name in cfg.methods:
        spec = MethodSpec.parse(name)
        for c in counts:
            thr = threshold_path(spec, n, var, cfg.alpha, cfg.sidedness, check_count=c)
            checks = None if c == n else checkpoints(n, c)
            out.append((spec.name, int(c), _masked(thr, checks)))
    return out


def _run_block(cfg: SimConfig, cells, rep_start: int, rep_stop: int, tallies) -> None:
    keys = rng.substream_keys(cfg.base_seed, np.arange(rep_start, rep_stop))
    noise_c, noise_t = _draw_pair(cfg.scenario, keys, cfg.n_per_group)
    n = cfg.n_per_group
    for effect in cfg.effect_sizes:
        x = cfg.scenario.apply(noise_c, effect, False) - cfg.scenario.apply(noise_t, effect, True)
        stat = _monitored_statistic(np.cumsum(x, axis=1), cfg.sidedness)
        for name, c, thr in cells:
            hits = _first_hits(stat, thr)
            cell = tallies[(name, c, effect)]
            detected = hits > 0
            cell.detections += int(detected.sum())
            cell.savings_sum += float(np.sum(1.0 - hits[detected] / n))


def run_experiment_grid(cfg: SimConfig) -> list[SimResult]:
    """Detection rate and savings for every method x effect (x check count) cell.

    ``mean_savings`` averages over all replications with zero for runs
    that never detect; ``mean_savings_detected`` averages over detecting
    runs only.
    """
    cells = _cells_for(cfg)
    tallies = {(name, c, e): _Cell() for name, c, _ in cells for e in cfg.effect_sizes}
    for start in range(0, cfg.replications, cfg.chunk_size):
        _run_block(cfg, cells, start, min(start + cfg.chunk_size, cfg.replications), tallies)

    reps = cfg.replications
    results = []
    for name, c, _ in cells:
        for e in cfg.effect_sizes:
            t = tallies[(name, c, e)]
            p = t.detections / reps
            results.append(SimResult(
                method=name,
                effect=float(e),
                mode=cfg.mode,
                check_count=c,
                detection_rate=p,
                std_error=math.sqrt(p * (1.0 - p) / reps),
                mean_savings=t.savings_sum / reps,
                mean_savings_detected=t.savings_sum / t.detections if t.detections else 0.0,
                replications=reps,
                seed=cfg.base_seed,
            ))
    return results


def run_discrete_mode(cfg: SimConfig) -> list[SimResult]:
    if cfg.mode != DISCRETE:
        raise UsageError("run_discrete_mode needs a config with mode='discrete'")
    return run_experiment_grid(cfg)


def simulate_replication(
    cfg: SimConfig, effect: float, rep_index: int, method: str
) -> tuple[bool, int | None]:
    """Run one method on one replication; returns (detected, 1-based detection index)."""
    if not 0 <= rep_index < cfg.replications:
        raise DomainError(f"rep_index {rep_index} outside 0..{cfg.replications - 1}")
    spec = MethodSpec.parse(method)
    one = replace(cfg, methods=(spec.name,), effect_sizes=(effect,))
    _, c, thr = _cells_for(one)[0]
    keys = rng.substream_keys(cfg.base_seed, [rep_index])
    noise_c, noise_t = _draw_pair(cfg.scenario, keys, cfg.n_per_group)
    x = cfg.scenario.apply(noise_c, effect, False) - cfg.scenario.apply(noise_t, effect, True)
    hit = int(_first_hits(_monitored_statistic(np.cumsum(x, axis=1), cfg.sidedness), thr)[0])
    return (hit > 0, hit or None)


def results_to_csv(results: Iterable[SimResult]) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(RESULT_COLUMNS)
    for r in results:
        writer.writerow(r.csv_row())
    return buf.getvalue()


def manifest(cfg: SimConfig, extra: dict | None = None) -> dict:
    from seqmon import __version__

    doc = {
        "config": json.loads(json.dumps(asdict(cfg))),
        "code_version": __version__,
        "python": platform.python_version(),
        "numpy": np.__version__,
    }
    if extra:
        doc.update(extra)
    return doc


# ---------------------------------------------------------------------------
# key=value scenario files

_SCENARIO_KEYS = {"mean", "sd", "df", "shift", "shape", "scale"}


def _floats(text: str) -> tuple[float, ...]:
    return tuple(float(v) for v in text.split(",") if v.strip())


def parse_sim_config(text: str, **overrides) -> SimConfig:
    """Build a :class:`SimConfig` from ``key=value`` lines.

    Recognised keys: ``scenario`` (normal | student_t | gamma), ``mean``,
    ``sd``, ``df``, ``shift``, ``shape``, ``scale``, ``n``, ``effects``
    (comma list), ``reps``, ``seed``, ``alpha``, ``methods`` (comma
    list), ``mode``, ``checks`` (comma list), ``sidedness``,
    ``chunk_size``. ``#`` starts a comment. Keyword ``overrides`` use
    the :class:`SimConfig` field names and win over the file.
    """
    values: dict[str, str] = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise DataError(f"line {lineno}: expected key=value, got {raw!r}")
        key, value = (p.strip() for p in line.split("=", 1))
        values[key.lower()] = value

    known = _SCENARIO_KEYS | {
        "scenario", "n", "effects", "reps", "seed", "alpha", "methods",
        "mode", "checks", "sidedness", "chunk_size",
    }
    unknown = set(values) - known
    if unknown:
        raise DataError(f"unknown config keys: {', '.join(sorted(unknown))}")
    try:
        scen_kwargs = {k: float(values[k]) for k in _SCENARIO_KEYS if k in values}
        scenario = ScenarioDistribution(kind=values.get("scenario", "normal"), **scen_kwargs)
        kwargs: dict = {"scenario": scenario}
        if "n" in values:
            kwargs["n_per_group"] = int(values["n"])
        if "effects" in values:
            kwargs["effect_sizes"] = _floats(values["effects"])
        if "reps" in values:
            kwargs["replications"] = int(values["reps"])
        if "seed" in values:
            kwargs["base_seed"] = int(values["seed"])
        if "alpha" in values:
            kwargs["alpha"] = float(values["alpha"])
        if "methods" in values:
            kwargs["methods"] = tuple(m.strip() for m in values["methods"].split(",") if m.strip())
        if "mode" in values:
            kwargs["mode"] = values["mode"]
        if "checks" in values:
            kwargs["check_counts"] = tuple(int(v) for v in _floats(values["checks"]))
        if "sidedness" in values:
            kwargs["sidedness"] = values["sidedness"]
        if "chunk_size" in values:
            kwargs["chunk_size"] = int(values["chunk_size"])
    except ValueError as exc:
        if isinstance(exc, (DomainError, DataError)):
            raise
        raise DataError(f"bad config value: {exc}") from exc
    kwargs.update({k: v for k, v in overrides.items() if v is not None})
    return SimConfig(**kwargs)


# ---------------------------------------------------------------------------
# permutation validation on clustered event data


@dataclass(frozen=True)
class ClusteredSynthConfig:
    """Synthetic stand-in for subject-clustered order data.

    Each subject produces ``min_events + Poisson(extra_events_mean)``
    events with Gaussian outcomes whose within-subject correlation is
    ``within_subject_corr``; event times are uniform over the period.
    """

    n_subjects: int = 1000
    min_events: int = 5
    extra_events_mean: float = 1.0
    within_subject_corr: float = 0.5
    outcome_mean: float = 50.0
    outcome_sd: float = 25.0
    period_days: float = 14.0

    def __post_init__(self) -> None:
        if self.n_subjects < 2:
            raise DomainError("need at least two subjects")
        if self.min_events < 1 or self.extra_events_mean < 0:
            raise DomainError("event-count parameters must be nonnegative (min_events >= 1)")
        if not 0.0 <= self.within_subject_corr < 1.0:
            raise DomainError("within_subject_corr must lie in [0, 1)")
        if not self.outcome_sd > 0:
            raise DomainError("outcome_sd must be positive")


def generate_clustered_events(
    cfg: ClusteredSynthConfig,
    seed: int,
    start: datetime = datetime(2024, 1, 1, tzinfo=timezone.utc),
    subject_prefix: str = "u",
) -> list[Event]:
    """Time-ordered synthetic events; all subjects are labelled control
    (validation reassigns groups)."""
    gen = np.random.Generator(np.random.PCG64(seed))
    counts = cfg.min_events + gen.poisson(cfg.extra_events_mean, cfg.n_subjects)
    subj = np.repeat(np.arange(cfg.n_subjects), counts)
    latent = gen.standard_normal(cfg.n_subjects)[subj]
    idio = gen.standard_normal(subj.size)
    rho = cfg.within_subject_corr
    y = cfg.outcome_mean + cfg.outcome_sd * (math.sqrt(rho) * latent + math.sqrt(1 - rho) * idio)
    t = gen.uniform(0.0, cfg.period_days * 86400.0, subj.size)
    order = np.argsort(t, kind="stable")
    return [
        Event(i + 1, start + timedelta(seconds=float(t[j])), f"{subject_prefix}{subj[j]}", CONTROL, float(y[j]))
        for i, j in enumerate(order)
    ]


def random_assignment(events: Sequence[Event], seed: int, rep_index: int = 0) -> list[Event]:
    """Assign each subject to control or treatment by an independent fair coin."""
    subjects = sorted({e.subject_id for e in events})
    signs = _coin_signs(len(subjects), rng.substream_keys(seed, [rep_index]))[0]
    group = {s: (CONTROL if g > 0 else TREATMENT) for s, g in zip(subjects, signs)}
    return [replace(e, group=group[e.subject_id]) for e in events]


def _coin_signs(n_subjects: int, keys: np.ndarray) -> np.ndarray:
    return np.where(rng.uniforms(keys, 0, n_subjects) < 0.5, 1.0, -1.0)


def permutation_validation(
    events: Sequence[Event],
    replications: int,
    seed: int,
    cfg: TestConfig,
    method: str = "yeast",
    chunk_size: int = 500,
) -> float:
    """False detection rate of ``method`` under random subject reassignment.

    ``cfg`` carries the horizon and variance estimated from a separate
    history period; monitoring stops after ``cfg.horizon_events`` events.
    Outcomes are taken as-is (group labels on ``events`` are ignored).
    """
    if replications < 1:
        raise DomainError("replications must be >= 1")
    subjects, inverse = np.unique([e.subject_id for e in events], return_inverse=True)
    if subjects.size < 2:
        raise DataError("permutation validation needs at least two subjects")
    y = np.array([e.outcome for e in events], dtype=float)
    n = min(y.size, cfg.horizon_events)
    y, inverse = y[:n], inverse[:n]
    thr = threshold_path(method, cfg.horizon_events, cfg.variance_scaled, cfg.alpha, cfg.sidedness)[:n]
    detections = 0
    for start in range(0, replications, chunk_size):
        stop = min(start + chunk_size, replications)
        keys = rng.substream_keys(seed, np.arange(start, stop))
        signs = _coin_signs(subjects.size, keys)
        s = np.cumsum(signs[:, inverse] * y[None, :], axis=1)
        stat = s if cfg.sidedness == ONE_SIDED else np.abs(s)
        detections += int((stat > thr[None, :]).any(axis=1).sum())
    return detections / replications


def history_inputs(
    history: Sequence[Event], seed: int, robust: bool = True
) -> tuple[int, float]:
    """Horizon and per-event variance estimated from a pre-period.

    The pre-period gets one random subject assignment so increments carry
    the sign structure of a live experiment.
    """
    from seqmon.monitor import estimate_variance_cluster_robust, estimate_variance_iid, increments

    assigned = random_assignment(history, seed)
    if robust:
        est = estimate_variance_cluster_robust(assigned)
    else:
        est = estimate_variance_iid(increments(assigned))
    return len(history), est.value


# ---------------------------------------------------------------------------
# exact reflection-inequality check

LEVY_MAX_N = 20


def levy_oracle_enumerate(n: int, threshold: float) -> tuple[float, float]:
    """Exact ``P(max_k S_k >= b)`` and ``2 P(S_n >= b)`` for a symmetric +-1 walk.

    Enumerates all ``2**n`` paths. Raises ``AssertionError`` if the
    inequality fails.
    """
    if n < 1:
        raise DomainError("n must be >= 1")
    if n > LEVY_MAX_N:
        raise ResourceError(f"exhaustive enumeration limited to n <= {LEVY_MAX_N}, got {n}")
    codes = np.arange(2**n, dtype=np.int64)
    steps = ((codes[:, None] >> np.arange(n)) & 1) * 2 - 1
    paths = np.cumsum(steps, axis=1)
    hit_max = int(np.count_nonzero(paths.max(axis=1) >= threshold))
    hit_end = int(np.count_nonzero(paths[:, -1] >= threshold))
    if hit_max > 2 * hit_end:
        raise AssertionError(f"reflection bound violated at n={n}, b={threshold}: {hit_max} > 2*{hit_end}")
    total = float(2**n)
    return hit_max / total, 2 * hit_end / total


def levy_sweep(max_n: int = 12) -> list[tuple[int, float, float, float]]:
    """Run :func:`levy_oracle_enumerate` for ``n <= max_n`` and ``b`` in ``0.5, 1, ..., n``."""
    if max_n > LEVY_MAX_N:
        raise ResourceError(f"exhaustive enumeration limited to n <= {LEVY_MAX_N}, got {max_n}")
    rows = []
    for n in range(1, max_n + 1):
        for b in np.arange(1, 2 * n + 1) / 2.0:
            lhs, rhs = levy_oracle_enumerate(n, float(b))
            rows.append((n, float(b), lhs, rhs))
    return rows
