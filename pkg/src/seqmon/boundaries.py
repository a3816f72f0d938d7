"""Alerting boundaries for the running sum ``S_n``.

Two families are provided:

* the constant YEAST threshold and its staircase (pYEAST) generalisation
  computed by inflating initial thresholds until an approximate FDR
  bound drops below ``alpha``;
* baseline decision rules (normal-mixture mSPRT, GAVI, Bonferroni),
  each expressed as a per-step threshold on the running sum so that all
  methods share one evaluation path.

One-sided tests flag ``S_n > b``; two-sided tests flag ``|S_n| > b``.
"""

from __future__ import annotations

import bisect
import math
import re
from dataclasses import dataclass, field
from typing import Any, Sequence

import numpy as np

from seqmon.errors import ConvergenceError, DataError, DomainError, UsageError
from seqmon.statdist import (
    DEFAULT_QUADRATURE,
    QuadratureSpec,
    normal_cdf,
    normal_quantile,
    normal_sf,
    truncated_normal_convolution_cdf,
)

ONE_SIDED = "one_sided"
TWO_SIDED = "two_sided"
_SIDEDNESS_ALIASES = {
    "one": ONE_SIDED,
    "one_sided": ONE_SIDED,
    "one-sided": ONE_SIDED,
    "two": TWO_SIDED,
    "two_sided": TWO_SIDED,
    "two-sided": TWO_SIDED,
}

STAIRCASE_MAX_ITER = 10_000


def normalize_sidedness(value: str) -> str:
    try:
        return _SIDEDNESS_ALIASES[str(value).strip().lower()]
    except KeyError:
        raise DomainError(f"sidedness must be 'one_sided' or 'two_sided', got {value!r}") from None


def _check_alpha(alpha: float) -> float:
    alpha = float(alpha)
    if not 0.0 < alpha < 1.0:
        raise DomainError(f"alpha must lie in (0, 1), got {alpha}")
    return alpha


@dataclass(frozen=True)
class TestConfig:
    """Inputs of a constant-boundary test.

    ``variance_scaled`` is the estimate of ``var(S_N) / N``, i.e. the
    per-event variance of the tracked difference.
    """

    __test__ = False  # not a pytest class

    alpha: float
    sidedness: str
    horizon_events: int
    variance_scaled: float

    def __post_init__(self) -> None:
        _check_alpha(self.alpha)
        object.__setattr__(self, "sidedness", normalize_sidedness(self.sidedness))
        if int(self.horizon_events) != self.horizon_events or self.horizon_events < 1:
            raise DomainError(f"horizon_events must be a positive integer, got {self.horizon_events}")
        object.__setattr__(self, "horizon_events", int(self.horizon_events))
        if not (self.variance_scaled > 0 and math.isfinite(self.variance_scaled)):
            raise DomainError(f"variance_scaled must be positive, got {self.variance_scaled}")


@dataclass(frozen=True)
class ConstantBoundary:
    threshold: float
    sidedness: str
    alpha: float
    horizon_events: int

    @property
    def horizon(self) -> int:
        return self.horizon_events

    def threshold_at(self, n: int) -> float:
        if not 1 <= n <= self.horizon_events:
            raise DomainError(f"step {n} outside 1..{self.horizon_events}")
        return self.threshold

    def to_dict(self) -> dict[str, Any]:
        return {
            "type": "constant",
            "alpha": self.alpha,
            "sidedness": self.sidedness,
            "thresholds": [self.threshold],
            "period_end_indices": [self.horizon_events],
        }


@dataclass(frozen=True)
class StaircasePlan:
    """Period layout and variance inputs for the staircase search.

    ``cum_variances[k]`` estimates ``var(S)`` at the end of period ``k``;
    ``incr_variances[k]`` the variance of the sum over period ``k`` alone.
    """

    period_sizes: tuple[int, ...]
    cum_variances: tuple[float, ...]
    incr_variances: tuple[float, ...]
    epsilon: float = 0.01

    def __post_init__(self) -> None:
        sizes = tuple(int(s) for s in self.period_sizes)
        cum = tuple(float(v) for v in self.cum_variances)
        inc = tuple(float(v) for v in self.incr_variances)
        if not sizes:
            raise DomainError("a staircase plan needs at least one period")
        if not len(sizes) == len(cum) == len(inc):
            raise DomainError(
                f"period_sizes, cum_variances, incr_variances lengths differ: "
                f"{len(sizes)}, {len(cum)}, {len(inc)}"
            )
        if any(s < 1 for s in sizes) or any(s != p for s, p in zip(sizes, self.period_sizes)):
            raise DomainError(f"period sizes must be positive integers, got {self.period_sizes}")
        if any(not (v > 0 and math.isfinite(v)) for v in cum + inc):
            raise DomainError("variances must be positive and finite")
        if any(b <= a for a, b in zip(cum, cum[1:])):
            raise DomainError(f"cum_variances must be strictly increasing, got {cum}")
        if not (self.epsilon > 0 and math.isfinite(self.epsilon)):
            raise DomainError(f"epsilon must be positive, got {self.epsilon}")
        object.__setattr__(self, "period_sizes", sizes)
        object.__setattr__(self, "cum_variances", cum)
        object.__setattr__(self, "incr_variances", inc)

    @property
    def period_count(self) -> int:
        return len(self.period_sizes)

    @property
    def period_end_indices(self) -> tuple[int, ...]:
        return tuple(int(v) for v in np.cumsum(self.period_sizes))

    @classmethod
    def from_period_variances(
        cls, period_sizes: Sequence[int], incr_variances: Sequence[float], epsilon: float = 0.01
    ) -> "StaircasePlan":
        """Plan under independent increments: cumulative variances are running sums."""
        cum = np.cumsum(np.asarray(incr_variances, dtype=float))
        return cls(tuple(period_sizes), tuple(cum), tuple(incr_variances), epsilon)

    @classmethod
    def from_event_variance(
        cls, period_sizes: Sequence[int], variance_per_event: float, epsilon: float = 0.01
    ) -> "StaircasePlan":
        incr = [variance_per_event * int(s) for s in period_sizes]
        return cls.from_period_variances(period_sizes, incr, epsilon)


def equal_periods(total_events: int, period_count: int) -> list[int]:
    """Split ``total_events`` into ``period_count`` near-equal integer periods.

    Larger periods come first, e.g. 500 events into 7 periods gives
    ``[72, 72, 72, 71, 71, 71, 71]``.
    """
    if period_count < 1 or total_events < period_count:
        raise DomainError(f"cannot split {total_events} events into {period_count} periods")
    base, extra = divmod(int(total_events), int(period_count))
    return [base + 1] * extra + [base] * (period_count - extra)


@dataclass(frozen=True)
class StaircaseBoundary:
    thresholds: tuple[float, ...]
    period_end_indices: tuple[int, ...]
    alpha: float
    sidedness: str = ONE_SIDED
    inflation_steps: int = 0
    achieved_bound: float | None = field(default=None, compare=False)

    def __post_init__(self) -> None:
        if len(self.thresholds) != len(self.period_end_indices) or not self.thresholds:
            raise DomainError("thresholds and period_end_indices must be non-empty and equal length")
        if any(b <= a for a, b in zip(self.period_end_indices, self.period_end_indices[1:])):
            raise DomainError("period_end_indices must be strictly increasing")
        if self.period_end_indices[0] < 1:
            raise DomainError("period_end_indices must be positive")

    @property
    def horizon(self) -> int:
        return self.period_end_indices[-1]

    def period_of(self, n: int) -> int:
        """0-based period containing step ``n`` (1-based)."""
        if not 1 <= n <= self.horizon:
            raise DomainError(f"step {n} outside 1..{self.horizon}")
        return bisect.bisect_left(self.period_end_indices, n)

    def threshold_at(self, n: int) -> float:
        return self.thresholds[self.period_of(n)]

    def threshold_path(self) -> np.ndarray:
        sizes = np.diff(np.concatenate([[0], self.period_end_indices]))
        return np.repeat(np.asarray(self.thresholds, dtype=float), sizes)

    def to_dict(self) -> dict[str, Any]:
        return {
            "type": "staircase",
            "alpha": self.alpha,
            "sidedness": self.sidedness,
            "thresholds": list(self.thresholds),
            "period_end_indices": list(self.period_end_indices),
        }


def boundary_from_dict(doc: dict[str, Any]) -> ConstantBoundary | StaircaseBoundary:
    """Inverse of ``to_dict`` for either boundary type. Unknown keys are ignored."""
    try:
        kind = doc["type"]
        alpha = _check_alpha(doc["alpha"])
        sidedness = normalize_sidedness(doc["sidedness"])
        thresholds = [float(b) for b in doc["thresholds"]]
        ends = [int(e) for e in doc["period_end_indices"]]
    except (KeyError, TypeError, ValueError) as exc:
        raise DataError(f"malformed boundary document: {exc}") from exc
    if kind == "constant":
        if len(thresholds) != 1 or len(ends) != 1:
            raise DataError("constant boundary needs exactly one threshold and one end index")
        if ends[0] < 1:
            raise DataError("horizon must be positive")
        return ConstantBoundary(thresholds[0], sidedness, alpha, ends[0])
    if kind == "staircase":
        if sidedness != ONE_SIDED:
            raise DomainError("staircase boundaries are one-sided only")
        return StaircaseBoundary(tuple(thresholds), tuple(ends), alpha, sidedness)
    raise DataError(f"unknown boundary type {kind!r}")


def constant_boundary(cfg: TestConfig) -> ConstantBoundary:
    """YEAST threshold ``z * sqrt(N * V)``.

    The quantile level is ``1 - alpha/2`` one-sided and ``1 - alpha/4``
    two-sided; the extra factor two comes from the reflection bound on
    the running maximum.
    """
    level = 1.0 - cfg.alpha / (2.0 if cfg.sidedness == ONE_SIDED else 4.0)
    z = normal_quantile(level)
    b = z * math.sqrt(cfg.horizon_events * cfg.variance_scaled)
    return ConstantBoundary(b, cfg.sidedness, cfg.alpha, cfg.horizon_events)


def fdr_bound(
    plan: StaircasePlan,
    thresholds: Sequence[float],
    quad: QuadratureSpec = DEFAULT_QUADRATURE,
) -> float:
    """Approximate upper bound on the false detection rate of a staircase.

    ``2 * (P(first period crosses) + sum_k Z_k * (1 - J_k))`` where ``Z_k``
    is the normal probability of ending period ``k-1`` below its
    threshold and ``J_k`` the truncated-normal convolution CDF.
    """
    b = [float(x) for x in thresholds]
    if len(b) != plan.period_count:
        raise DomainError(f"expected {plan.period_count} thresholds, got {len(b)}")
    if any(not (x > 0 and math.isfinite(x)) for x in b):
        raise DomainError("thresholds must be positive and finite")
    cum, inc = plan.cum_variances, plan.incr_variances
    total = normal_sf(b[0] / math.sqrt(cum[0]))
    for k in range(1, plan.period_count):
        z_k = normal_cdf(b[k - 1] / math.sqrt(cum[k - 1]))
        j_k = truncated_normal_convolution_cdf(b[k - 1], b[k], cum[k - 1], inc[k], quad)
        total += z_k * (1.0 - j_k)
    return 2.0 * total


def staircase_boundaries(
    plan: StaircasePlan,
    alpha: float,
    quad: QuadratureSpec = DEFAULT_QUADRATURE,
    max_iter: int = STAIRCASE_MAX_ITER,
) -> StaircaseBoundary:
    """Inflate ``z_{1-alpha/2} * sqrt(U_k)`` by ``(1 + epsilon)`` per pass
    until :func:`fdr_bound` is at most ``alpha``.

    Raises:
        ConvergenceError: if more than ``max_iter`` passes are needed.
    """
    alpha = _check_alpha(alpha)
    z = normal_quantile(1.0 - alpha / 2.0)
    initial = [z * math.sqrt(u) for u in plan.cum_variances]
    growth = 1.0 + plan.epsilon
    for m in range(max_iter + 1):
        current = [b * growth**m for b in initial]
        bound = fdr_bound(plan, current, quad)
        # slack absorbs round-off when the bound equals alpha exactly (K = 1)
        if bound <= alpha * (1.0 + 1e-12):
            return StaircaseBoundary(
                tuple(current), plan.period_end_indices, alpha, ONE_SIDED, m, bound
            )
    raise ConvergenceError(
        f"staircase search did not reach alpha={alpha} within {max_iter} inflation steps "
        f"(last bound {bound:.6g})"
    )


# ---------------------------------------------------------------------------
# baselines


def _mixture_level(alpha: float, sidedness: str) -> float:
    # a one-sided level-alpha test is the two-sided mixture rule at 2*alpha
    return 2.0 * alpha if normalize_sidedness(sidedness) == ONE_SIDED else alpha


def msprt_log_likelihood_ratio(n, running_sum, outcome_variance: float, mixture: float):
    """Log of the normal-mixture likelihood ratio after ``n`` increments.

    The mixing distribution on the per-event mean is ``N(0, sigma^2 / mixture)``,
    i.e. ``mixture`` is the prior precision in units of the data variance.
    Vectorised over ``n`` and ``running_sum``.
    """
    if not outcome_variance > 0:
        raise DomainError(f"outcome_variance must be positive, got {outcome_variance}")
    if not mixture > 0:
        raise DomainError(f"mixture must be positive, got {mixture}")
    n = np.asarray(n, dtype=float)
    s = np.asarray(running_sum, dtype=float)
    out = 0.5 * np.log(mixture / (mixture + n)) + s * s / (2.0 * outcome_variance * (mixture + n))
    return out if out.ndim else float(out)


def msprt_p_value(
    prev_p: float, n: int, running_sum: float, outcome_variance: float, mixture: float
) -> float:
    """Always-valid (two-sided) p-value update ``min(prev_p, 1 / Lambda_n)``."""
    if not 0.0 < prev_p <= 1.0:
        raise DomainError(f"prev_p must lie in (0, 1], got {prev_p}")
    if n < 0:
        raise DomainError(f"n must be nonnegative, got {n}")
    if n == 0:
        return prev_p
    log_lr = msprt_log_likelihood_ratio(n, running_sum, outcome_variance, mixture)
    return min(prev_p, math.exp(-log_lr) if log_lr > -700 else 1.0)


def msprt_threshold(n, outcome_variance: float, mixture: float, alpha: float, sidedness: str = TWO_SIDED):
    """Running-sum level at which the mSPRT p-value first drops to the test level.

    Equivalent to the p-value recursion: a crossing of this threshold is
    exactly the event ``Lambda_n >= 1 / level``.
    """
    _check_alpha(alpha)
    level = _mixture_level(alpha, sidedness)
    n = np.asarray(n, dtype=float)
    inner = math.log(1.0 / level) + 0.5 * np.log((mixture + n) / mixture)
    out = np.sqrt(2.0 * outcome_variance * (mixture + n) * inner)
    return out if out.ndim else float(out)


def gavi_rho(rho_numerator: float, alpha: float) -> float:
    """Mixture scale (in events) that tunes the boundary for ``rho_numerator`` events."""
    log_term = 2.0 * math.log(1.0 / alpha)
    return rho_numerator / (log_term + math.log(1.0 + log_term))


def gavi_boundary(
    n,
    variance_per_event: float,
    rho_numerator: float,
    alpha: float,
    sidedness: str = TWO_SIDED,
):
    """Normal-mixture time-uniform boundary ``sqrt((V+rho) log((V+rho)/(rho*a^2)))``
    at intrinsic time ``V = n * variance_per_event``.

    ``rho`` is :func:`gavi_rho` of the numerator at the test level,
    expressed in intrinsic time by multiplying with ``variance_per_event``.
    """
    alpha = _check_alpha(alpha)
    if not (variance_per_event > 0 and rho_numerator > 0):
        raise DomainError("variance_per_event and rho_numerator must be positive")
    level = _mixture_level(alpha, sidedness)
    rho = gavi_rho(rho_numerator, level) * variance_per_event
    v = np.asarray(n, dtype=float) * variance_per_event
    out = np.sqrt((v + rho) * np.log((v + rho) / (rho * level * level)))
    return out if out.ndim else float(out)


def bonferroni_threshold(alpha: float, check_count: int, n, variance_scaled: float, sidedness: str = ONE_SIDED):
    """Per-check fixed-sample z threshold at level ``alpha / check_count``."""
    alpha = _check_alpha(alpha)
    if int(check_count) != check_count or check_count < 1:
        raise DomainError(f"check_count must be a positive integer, got {check_count}")
    if not variance_scaled > 0:
        raise DomainError(f"variance_scaled must be positive, got {variance_scaled}")
    tail = alpha / check_count
    if normalize_sidedness(sidedness) == TWO_SIDED:
        tail /= 2.0
    z = normal_quantile(1.0 - tail)
    out = z * np.sqrt(np.asarray(n, dtype=float) * variance_scaled)
    return out if out.ndim else float(out)


# ---------------------------------------------------------------------------
# method descriptors

_METHOD_RE = re.compile(r"^(yeast|pyeast(\d+)|msprt(?:phi)?(\d+(?:\.\d+)?)|gavi(\d+(?:\.\d+)?)|bonferroni)$")
KNOWN_METHOD_PATTERNS = ("yeast", "pyeast<K>", "msprt<phi>", "gavi<numerator>", "bonferroni")
DEFAULT_METHODS = (
    "yeast", "pyeast7", "pyeast14",
    "msprt100", "msprt11", "msprt25",
    "gavi250", "gavi500", "gavi750",
    "bonferroni",
)


@dataclass(frozen=True)
class MethodSpec:
    """A monitoring rule: ``kind`` plus its single numeric parameter.

    ``param`` is the period count for ``pyeast``, the mixture precision
    for ``msprt`` and the rho numerator for ``gavi``; unused otherwise.
    """

    kind: str
    param: float | None = None

    @property
    def name(self) -> str:
        if self.param is None:
            return self.kind
        p = int(self.param) if float(self.param).is_integer() else self.param
        return f"{self.kind}{p}"

    @classmethod
    def parse(cls, text: str) -> "MethodSpec":
        m = _METHOD_RE.match(str(text).strip().lower())
        if not m:
            raise UsageError(
                f"unknown method {text!r}; valid methods: {', '.join(KNOWN_METHOD_PATTERNS)}"
            )
        full, k, phi, num = m.groups()
        if full == "yeast" or full == "bonferroni":
            return cls(full)
        if k is not None:
            if int(k) < 1:
                raise UsageError("pyeast needs at least one period")
            return cls("pyeast", int(k))
        if phi is not None:
            return cls("msprt", float(phi))
        return cls("gavi", float(num))


def threshold_path(
    method: MethodSpec | str,
    n_total: int,
    variance_per_event: float,
    alpha: float,
    sidedness: str = ONE_SIDED,
    check_count: int | None = None,
    quad: QuadratureSpec = DEFAULT_QUADRATURE,
) -> np.ndarray:
    """Threshold on ``S_n`` (``|S_n|`` two-sided) for steps ``1..n_total``.

    ``check_count`` is only used by Bonferroni and defaults to
    ``n_total`` (a check after every event).
    """
    if isinstance(method, str):
        method = MethodSpec.parse(method)
    sidedness = normalize_sidedness(sidedness)
    steps = np.arange(1, n_total + 1, dtype=float)
    if method.kind == "yeast":
        b = constant_boundary(TestConfig(alpha, sidedness, n_total, variance_per_event))
        return np.full(n_total, b.threshold)
    if method.kind == "pyeast":
        if sidedness != ONE_SIDED:
            raise DomainError("staircase boundaries are one-sided only")
        plan = StaircasePlan.from_event_variance(
            equal_periods(n_total, int(method.param)), variance_per_event
        )
        return staircase_boundaries(plan, alpha, quad).threshold_path()
    if method.kind == "msprt":
        return msprt_threshold(steps, variance_per_event, method.param, alpha, sidedness)
    if method.kind == "gavi":
        return gavi_boundary(steps, variance_per_event, method.param, alpha, sidedness)
    if method.kind == "bonferroni":
        k = n_total if check_count is None else check_count
        return bonferroni_threshold(alpha, k, steps, variance_per_event, sidedness)
    raise DomainError(f"unsupported method kind {method.kind!r}")
