"""Achievable rates for overlay cognitive-radio pairs.

All powers are linear SNRs with unit noise; rates are in bits per channel use.
The primary link has unit direct gain, the secondary transmitter reaches the
primary receiver through an amplitude gain ``a`` with ``0 <= a <= 1``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterable, List

DEFAULT_TOL = 1e-9
MAX_BISECTION_ITERS = 200

SWEEP_POWERS = (1, 2, 5, 10, 20, 30, 40)


class RateDomainError(ValueError):
    """An argument lies outside the domain of a rate expression."""


class RateConvergenceError(ArithmeticError):
    """Bisection did not reach the requested tolerance."""


@dataclass(frozen=True)
class RateParams:
    p_primary: float
    p_secondary: float
    cross_gain: float

    def __post_init__(self):
        if not (self.p_primary > 0 and self.p_secondary > 0):
            raise RateDomainError(
                f"powers must be positive, got P_P={self.p_primary}, P_S={self.p_secondary}")
        if not 0.0 <= self.cross_gain <= 1.0:
            raise RateDomainError(f"cross gain must lie in [0, 1], got {self.cross_gain}")


@dataclass(frozen=True)
class RatePair:
    alpha: float
    rate_primary: float
    rate_secondary: float


@dataclass(frozen=True)
class GammaResult:
    gamma: float
    alpha_hat: float
    balanced_rate: float
    base_rate: float


def point_to_point_rate(p: float) -> float:
    """Gaussian link rate 0.5*log2(1+p) with unit gain and unit noise."""
    if not p > 0:
        raise RateDomainError(f"SNR must be positive, got {p}")
    return 0.5 * math.log2(1.0 + p)


def two_switch_capacity(p_secondary: float, prob_both_free: float) -> float:
    """Upper bound on the secondary rate of the two-switch interweave model.

    ``prob_both_free`` is the probability that neither end of the secondary
    link senses primary activity. The expression tends to zero as that
    probability vanishes.
    """
    if not p_secondary > 0:
        raise RateDomainError(f"SNR must be positive, got {p_secondary}")
    if not 0.0 <= prob_both_free <= 1.0:
        raise RateDomainError(f"probability must lie in [0, 1], got {prob_both_free}")
    if prob_both_free == 0.0:
        return 0.0
    # log form avoids overflowing p/Pr for subnormal probabilities
    return prob_both_free * (math.log2(prob_both_free + p_secondary) - math.log2(prob_both_free))


def overlay_alpha_star(params: RateParams) -> float:
    """Power fraction the secondary must spend so the primary rate is untouched."""
    pp, ps, a = params.p_primary, params.p_secondary, params.cross_gain
    if a == 0.0:
        # no interference path, nothing to compensate
        return 0.0
    root = math.sqrt(pp) * (math.sqrt(1.0 + a * a * ps * (1.0 + pp)) - 1.0)
    alpha = (root / (a * math.sqrt(ps) * (1.0 + pp))) ** 2
    assert 0.0 <= alpha <= 1.0, f"alpha* out of range: {alpha}"
    return alpha


def overlay_secondary_capacity(params: RateParams) -> float:
    alpha = overlay_alpha_star(params)
    return 0.5 * math.log2(1.0 + (1.0 - alpha) * params.p_secondary)


def achievable_rates(alpha: float, params: RateParams) -> RatePair:
    """Rates of both links when the secondary spends ``alpha`` of its power assisting."""
    if not 0.0 <= alpha <= 1.0:
        raise RateDomainError(f"alpha must lie in [0, 1], got {alpha}")
    pp, ps, a = params.p_primary, params.p_secondary, params.cross_gain
    signal = (math.sqrt(pp) + a * math.sqrt(alpha * ps)) ** 2
    interference = 1.0 + a * a * (1.0 - alpha) * ps
    r_p = 0.5 * math.log2(1.0 + signal / interference)
    r_s = 0.5 * math.log2(1.0 + (1.0 - alpha) * ps)
    return RatePair(alpha, r_p, r_s)


def balance_alpha(params: RateParams, tol: float = DEFAULT_TOL) -> GammaResult:
    """Find the split equalising primary and secondary rates.

    R_P grows and R_S shrinks with alpha, so the gap R_S - R_P has at most
    one root on [0, 1]; it is located by bisection until the rate gap is
    within ``tol``. Without a sign change the better endpoint is returned.
    """
    if not tol > 0:
        raise RateDomainError(f"tolerance must be positive, got {tol}")
    base = point_to_point_rate(params.p_primary)
    if params.cross_gain == 0.0:
        pair = achievable_rates(0.0, params)
        balanced = min(pair.rate_primary, pair.rate_secondary)
        return GammaResult(balanced / base, 0.0, balanced, base)

    def gap(alpha):
        pair = achievable_rates(alpha, params)
        return pair.rate_secondary - pair.rate_primary, pair

    lo, hi = 0.0, 1.0
    g_lo, pair_lo = gap(lo)
    g_hi, pair_hi = gap(hi)
    if g_lo <= 0.0:
        # primary already at or below secondary with no assistance
        pair = pair_lo
    elif g_hi >= 0.0:
        pair = pair_hi
    else:
        for _ in range(MAX_BISECTION_ITERS):
            mid = 0.5 * (lo + hi)
            g_mid, pair = gap(mid)
            if abs(g_mid) <= tol:
                break
            if g_mid > 0.0:
                lo = mid
            else:
                hi = mid
        else:
            raise RateConvergenceError(
                f"no balance within {tol} after {MAX_BISECTION_ITERS} iterations")
    balanced = min(pair.rate_primary, pair.rate_secondary)
    return GammaResult(balanced / base, pair.alpha, balanced, base)


@dataclass(frozen=True)
class GammaRow:
    a: float
    power: float
    alpha_hat: float
    gamma: float


def gamma_sweep(a_grid: Iterable[float], power_list: Iterable[float],
                tol: float = DEFAULT_TOL) -> List[GammaRow]:
    """Gamma over a grid of cross gains and equal primary/secondary powers.

    Rows are ordered power-major, then by cross gain, in input order.
    """
    a_grid = list(a_grid)
    power_list = list(power_list)
    if not a_grid or not power_list:
        raise RateDomainError("gain and power grids must be non-empty")
    rows = []
    for power in power_list:
        for a in a_grid:
            res = balance_alpha(RateParams(power, power, a), tol)
            rows.append(GammaRow(a, power, res.alpha_hat, res.gamma))
    return rows


def format_sweep_csv(rows: Iterable[GammaRow]) -> str:
    lines = ["a,power,alpha_hat,gamma"]
    for r in rows:
        lines.append(f"{r.a:.6g},{r.power:.6g},{r.alpha_hat:.6g},{r.gamma:.6g}")
    return "\n".join(lines) + "\n"
