"""Standard-normal primitives, Gauss-Legendre quadrature and the
normal / truncated-normal convolution used by the staircase FDR bound.

Everything here is pure. Scalar functions use the stdlib ``math.erfc``;
array work goes through :mod:`scipy.special`.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache
from typing import Callable

import numpy as np
from scipy import special

from seqmon.errors import DomainError, NumericalError

_INV_SQRT_2PI = 1.0 / math.sqrt(2.0 * math.pi)
_SQRT2 = math.sqrt(2.0)

# Acklam's rational approximation to the normal quantile (rel. error ~1.15e-9).
_A = (-3.969683028665376e01, 2.209460984245205e02, -2.759285104469687e02,
      1.383577518672690e02, -3.066479806614716e01, 2.506628277459239e00)
_B = (-5.447609879822406e01, 1.615858368580409e02, -1.556989798598866e02,
      6.680131188771972e01, -1.328068155288572e01)
_C = (-7.784894002430293e-03, -3.223964580411365e-01, -2.400758277161838e00,
      -2.549732539343734e00, 4.374664141464968e00, 2.938163982698783e00)
_D = (7.784695709041462e-03, 3.224671290700398e-01, 2.445134137142996e00,
      3.754408661907416e00)
_P_LOW = 0.02425


@dataclass(frozen=True)
class QuadratureSpec:
    """Fixed-node quadrature settings.

    ``domain_halfwidth_sigmas`` is how far below the mean (in standard
    deviations) the semi-infinite convolution integral is truncated.
    """

    node_count: int = 128
    domain_halfwidth_sigmas: float = 10.0

    def __post_init__(self) -> None:
        if int(self.node_count) != self.node_count or self.node_count < 16:
            raise DomainError(f"node_count must be an integer >= 16, got {self.node_count}")
        if not self.domain_halfwidth_sigmas >= 6:
            raise DomainError(
                f"domain_halfwidth_sigmas must be >= 6, got {self.domain_halfwidth_sigmas}"
            )

    def refined(self) -> "QuadratureSpec":
        return QuadratureSpec(2 * self.node_count, self.domain_halfwidth_sigmas)


DEFAULT_QUADRATURE = QuadratureSpec()


def _check_finite(x: float, name: str = "x") -> float:
    x = float(x)
    if not math.isfinite(x):
        raise DomainError(f"{name} must be finite, got {x}")
    return x


def normal_pdf(x: float) -> float:
    x = _check_finite(x)
    return _INV_SQRT_2PI * math.exp(-0.5 * x * x)


def normal_cdf(x: float) -> float:
    x = _check_finite(x)
    return 0.5 * math.erfc(-x / _SQRT2)


def normal_sf(x: float) -> float:
    """Upper tail ``1 - normal_cdf(x)`` without cancellation."""
    x = _check_finite(x)
    return 0.5 * math.erfc(x / _SQRT2)


def _acklam(p: float) -> float:
    if p < _P_LOW:
        q = math.sqrt(-2.0 * math.log(p))
        return (((((_C[0] * q + _C[1]) * q + _C[2]) * q + _C[3]) * q + _C[4]) * q + _C[5]) / (
            (((_D[0] * q + _D[1]) * q + _D[2]) * q + _D[3]) * q + 1.0
        )
    if p > 1.0 - _P_LOW:
        return -_acklam(1.0 - p)
    q = p - 0.5
    r = q * q
    return (((((_A[0] * r + _A[1]) * r + _A[2]) * r + _A[3]) * r + _A[4]) * r + _A[5]) * q / (
        ((((_B[0] * r + _B[1]) * r + _B[2]) * r + _B[3]) * r + _B[4]) * r + 1.0
    )


def normal_quantile(p: float) -> float:
    """Inverse of :func:`normal_cdf`.

    Acklam's initial guess followed by two Halley steps; the residual
    in probability is below 1e-15 over the representable range.
    """
    p = float(p)
    if not 0.0 < p < 1.0:
        raise DomainError(f"p must lie in (0, 1), got {p}")
    if p == 0.5:
        return 0.0
    x = _acklam(p)
    for _ in range(2):
        # work in the smaller tail to keep the residual accurate
        if x < 0:
            err = normal_cdf(x) - p
        else:
            err = (1.0 - p) - normal_sf(x)
        u = err / normal_pdf(x)
        x -= u / (1.0 + 0.5 * x * u)
    return x


@lru_cache(maxsize=32)
def _legendre_nodes(n: int) -> tuple[np.ndarray, np.ndarray]:
    nodes, weights = np.polynomial.legendre.leggauss(n)
    nodes.setflags(write=False)
    weights.setflags(write=False)
    return nodes, weights


def gauss_legendre(
    f: Callable[[np.ndarray], np.ndarray],
    lo: float,
    hi: float,
    quad: QuadratureSpec = DEFAULT_QUADRATURE,
    panels: int = 1,
) -> float:
    """Integrate ``f`` over ``[lo, hi]`` with a fixed Gauss-Legendre rule.

    ``f`` is called once with an array of abscissae and must return an
    array of the same shape. ``panels > 1`` applies the rule on that
    many equal sub-intervals.
    """
    lo, hi = float(lo), float(hi)
    if not lo < hi:
        raise DomainError(f"need lo < hi, got [{lo}, {hi}]")
    nodes, weights = _legendre_nodes(quad.node_count)
    edges = np.linspace(lo, hi, int(panels) + 1)
    half = 0.5 * np.diff(edges)[:, None]
    mid = 0.5 * (edges[:-1] + edges[1:])[:, None]
    x = mid + half * nodes[None, :]
    vals = np.asarray(f(x), dtype=float)
    return float(np.sum(half * weights[None, :] * vals))


def _convolution_integral(beta: float, lo: float, b_cur: float, sd_prev: float,
                          sd_incr: float, quad: QuadratureSpec, panels: int) -> float:
    # integrate over the standardized prior coordinate t = x / sd_prev
    def integrand(t: np.ndarray) -> np.ndarray:
        return special.ndtr((b_cur - sd_prev * t) / sd_incr) * np.exp(-0.5 * t * t) * _INV_SQRT_2PI

    return gauss_legendre(integrand, lo, beta, quad, panels=panels)


def truncated_normal_convolution_cdf(
    b_prev: float,
    b_cur: float,
    var_prev: float,
    var_incr: float,
    quad: QuadratureSpec = DEFAULT_QUADRATURE,
) -> float:
    """CDF at ``b_cur`` of ``A + B`` where ``A ~ N(0, var_prev)`` truncated to
    ``A <= b_prev`` and ``B ~ N(0, var_incr)`` independent.

    Raises:
        DomainError: if either variance is not positive.
        NumericalError: if the rule and its node-doubled refinement
            disagree by more than 1e-8.
    """
    b_prev = _check_finite(b_prev, "b_prev")
    b_cur = float(b_cur)
    if math.isnan(b_cur):
        raise DomainError("b_cur must not be NaN")
    if not (var_prev > 0 and var_incr > 0) or not (math.isfinite(var_prev) and math.isfinite(var_incr)):
        raise DomainError(f"variances must be positive and finite, got {var_prev}, {var_incr}")
    if b_cur == math.inf:
        return 1.0
    if b_cur == -math.inf:
        return 0.0

    sd_prev = math.sqrt(var_prev)
    sd_incr = math.sqrt(var_incr)
    beta = b_prev / sd_prev
    lo = -quad.domain_halfwidth_sigmas
    if beta <= lo:
        # truncated law collapses onto b_prev
        return normal_cdf((b_cur - b_prev) / sd_incr)

    z = normal_cdf(beta)
    # resolve the narrower of the two kernels with several nodes per panel
    scale = min(1.0, sd_incr / sd_prev)
    panels = max(1, math.ceil((beta - lo) / (4.0 * scale)))
    coarse = _convolution_integral(beta, lo, b_cur, sd_prev, sd_incr, quad, panels) / z
    fine = _convolution_integral(beta, lo, b_cur, sd_prev, sd_incr, quad.refined(), panels) / z
    if abs(fine - coarse) > 1e-8:
        raise NumericalError(
            f"quadrature did not converge: {coarse!r} vs {fine!r} "
            f"(b_prev={b_prev}, b_cur={b_cur}, var_prev={var_prev}, var_incr={var_incr})"
        )
    return min(1.0, max(0.0, fine))
