"""Closed-form solution of the separate sensing/communication problem.

Applies when class variances strictly descend while sensing costs are
non-decreasing. The solution fully samples a prefix of classes (possibly one
of them partially) and splits the rate budget by reverse water-filling, with
per-class rates scaled by the sampling fractions. A KKT certificate recovers
the multipliers and measures how far any candidate allocation is from
satisfying the optimality system.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional, Sequence, Tuple

import numpy as np

from .model import (
    PreconditionError,
    SeparateAllocation,
    SeparateInstance,
    SolveReport,
    ValidationError,
    check_feasible,
    objective_separate,
    per_class_distortion,
    sampled_fraction_distortion,
)

__all__ = [
    "SeparateThresholds",
    "KktCertificate",
    "thresholds",
    "reverse_waterfill_rates",
    "solve_ordered",
    "kkt_certificate_separate",
]

TWO_LN2 = 2.0 * math.log(2.0)

#: a fraction this close to 1 is treated as sitting on the upper bound
_AT_UPPER = 1e-6


@dataclass(frozen=True)
class SeparateThresholds:
    """Energy prefix sums and the rate levels separating water-filling regimes.

    energy_levels[m-1] is the energy needed to fully sample classes 1..m.
    rate_levels[l-1] is the largest total rate at which only the l classes
    with the largest variances receive positive rate.
    """

    energy_levels: tuple
    rate_levels: tuple


@dataclass(frozen=True)
class KktCertificate:
    """Recovered multipliers plus per-condition violation magnitudes.

    residual is the maximum violation; a small residual certifies optimality
    of the candidate because the problem is convex and strictly feasible.
    """

    rate_price: Optional[float]
    energy_price: Optional[float]
    fraction_multipliers: tuple
    rate_multipliers: tuple
    violations: tuple

    @property
    def residual(self) -> float:
        return max((v for _, v in self.violations), default=0.0)

    def violation(self, name: str) -> float:
        return max((v for n, v in self.violations if n == name), default=0.0)


def _require_descending_variances(variances: np.ndarray):
    if not all(variances[i] > variances[i + 1] for i in range(len(variances) - 1)):
        raise PreconditionError(
            "class variances must be strictly descending; merge equal-variance "
            "classes into one class with summed count"
        )


def _require_ordered(instance: SeparateInstance):
    _require_descending_variances(instance.variances)
    costs = instance.sensing_costs
    if not all(costs[i] <= costs[i + 1] for i in range(len(costs) - 1)):
        raise PreconditionError("sensing costs must be non-decreasing across classes")


def thresholds(instance: SeparateInstance) -> SeparateThresholds:
    """Energy and rate levels that delimit the closed-form cases."""
    _require_descending_variances(instance.variances)
    q = instance.counts
    sig = instance.variances
    eps = instance.sensing_costs
    energy = tuple(np.cumsum(q * eps))
    rate = []
    for l in range(1, instance.size):
        rate.append(0.5 * float(np.sum(q[:l] * np.log2(sig[:l] / sig[l]))))
    return SeparateThresholds(energy_levels=energy, rate_levels=tuple(rate))


def reverse_waterfill_rates(
    classes: Sequence, fractions: Sequence[float], total_rate: float
) -> Tuple[np.ndarray, Optional[float]]:
    """Split a total rate over classes with given sampling fractions.

    Every class with positive rate ends up with the same sampled-fraction
    distortion, equal to rate_price / (2 ln 2); classes whose variance falls
    below that level get zero rate. The rate assigned to a class scales with
    its fraction. Classes with fraction 0 are excluded and receive rate 0.

    Returns (rates, rate_price). rate_price is None when no rate is assigned
    (zero budget, or no class is sensed -- the "rate unusable" case).
    """
    fractions = np.asarray(fractions, dtype=float)
    sig = np.array([c.variance for c in classes])
    q = np.array([float(c.count) for c in classes])
    if len(fractions) != len(sig):
        raise ValidationError("fractions length does not match classes")
    rates = np.zeros_like(fractions)
    if total_rate < 0:
        raise ValidationError("total_rate must be >= 0")
    active = [k for k in np.argsort(-sig, kind="stable") if fractions[k] > 0]
    if not active or total_rate == 0:
        return rates, None

    # Water level scan: grow the positive-rate set in variance order until the
    # level sits between the last included and first excluded variance.
    weight = 0.0
    mean_log = 0.0
    level = None
    chosen = 0
    logs = np.log2(sig)
    for j, k in enumerate(active):
        weight += q[k] * fractions[k]
        mean_log += q[k] * fractions[k] * logs[k]
        c = (mean_log - 2.0 * total_rate) / weight
        inside = logs[k] > c
        nxt = active[j + 1] if j + 1 < len(active) else None
        outside = nxt is None or logs[nxt] <= c
        if inside and outside:
            level = c
            chosen = j + 1
            break
    if level is None:  # numerically degenerate ties: use the full active set
        level = c
        chosen = len(active)
    for k in active[:chosen]:
        rates[k] = fractions[k] / 2.0 * (logs[k] - level)
    return rates, TWO_LN2 * 2.0 ** level


def _rates_full_prefix(instance, l: int) -> np.ndarray:
    """Rates when the first l classes are fully sampled and rated."""
    q = instance.counts
    sig = instance.variances
    R = instance.rate_budget
    rates = np.zeros(instance.size)
    qs = float(q[:l].sum())
    for k in range(l):
        cross = 0.5 * sum(
            q[j] * math.log2(sig[k] / sig[j]) for j in range(l) if j != k
        )
        rates[k] = (R + cross) / qs
    return rates


def _rates_fraction_scaled(instance, th: np.ndarray, m: int) -> np.ndarray:
    """Rates over the first m classes with fraction-scaled water-filling."""
    q = instance.counts
    sig = instance.variances
    R = instance.rate_budget
    rates = np.zeros(instance.size)
    wsum = float((q[:m] * th[:m]).sum())
    for k in range(m):
        cross = 0.5 * sum(
            q[j] * th[j] * math.log2(sig[k] / sig[j]) for j in range(m) if j != k
        )
        rates[k] = th[k] / wsum * (R + cross)
    return rates


def _rate_price_for(instance, th: np.ndarray, sensed: int) -> float:
    q = instance.counts
    sig = instance.variances
    w = float((q[:sensed] * th[:sensed]).sum())
    t = float((q[:sensed] * th[:sensed] * np.log2(sig[:sensed])).sum())
    return TWO_LN2 * 2.0 ** ((t - 2.0 * instance.rate_budget) / w)


def _degenerate_report(instance) -> SolveReport:
    K = instance.size
    alloc = SeparateAllocation(fractions=(0.0,) * K, rates=(0.0,) * K)
    return SolveReport(
        allocation=alloc,
        objective=objective_separate(instance, alloc),
        rate_price=None,
        power_price=None,
        kkt_residual=0.0,
        case_tag="degenerate",
        per_class_distortion=per_class_distortion(instance, alloc),
        sampled_distortion=sampled_fraction_distortion(instance, alloc),
    )


def solve_ordered(instance: SeparateInstance) -> SolveReport:
    """Optimal allocation for ordered instances (descending variances,
    non-decreasing costs).

    The energy budget selects how many classes can be sensed; the rate budget
    selects how many of those actually receive rate. Zero budgets yield the
    canonical all-zero allocation.
    """
    _require_ordered(instance)
    E = instance.energy_budget
    R = instance.rate_budget
    if E == 0.0 or R == 0.0:
        return _degenerate_report(instance)

    K = instance.size
    q = instance.counts
    eps = instance.sensing_costs
    thr = thresholds(instance)
    e = thr.energy_levels
    r = thr.rate_levels

    m = K
    for i in range(K):
        if E <= e[i]:
            m = i + 1
            break

    th = np.zeros(K)
    if m >= 2 and R <= r[m - 2]:
        # enough rate only for l < m classes: fully sample those, rest idle
        l = 1
        for i in range(m - 1):
            if R <= r[i]:
                l = i + 1
                break
        th[:l] = 1.0
        rates = _rates_full_prefix(instance, l)
        alpha = _rate_price_for(instance, th, l)
        tag = f"case1(l={l})"
        if E > e[l - 1] + 1e-12:
            tag += ";energy_slack"
    else:
        th[: m - 1] = 1.0
        cost_m = q[m - 1] * eps[m - 1]
        prev = e[m - 2] if m >= 2 else 0.0
        th[m - 1] = 1.0 if cost_m == 0 else min((E - prev) / cost_m, 1.0)
        rates = _rates_fraction_scaled(instance, th, m)
        alpha = _rate_price_for(instance, th, m)
        tag = f"case2(m={m})"

    alloc = SeparateAllocation(fractions=tuple(th), rates=tuple(rates))
    cert = kkt_certificate_separate(instance, alloc)
    return SolveReport(
        allocation=alloc,
        objective=objective_separate(instance, alloc),
        rate_price=alpha,
        power_price=None,
        kkt_residual=cert.residual,
        case_tag=tag,
        per_class_distortion=per_class_distortion(instance, alloc),
        sampled_distortion=sampled_fraction_distortion(instance, alloc),
    )


def kkt_certificate_separate(
    instance: SeparateInstance, alloc: SeparateAllocation
) -> KktCertificate:
    """Recover multipliers for a candidate allocation and score the KKT system.

    Zero-fraction classes are dropped first (the problem reduces to the sensed
    sub-instance); the certificate then checks stationarity, dual feasibility,
    complementary slackness, and primal feasibility on what remains.
    """
    if len(alloc.fractions) != instance.size:
        raise ValidationError("allocation does not match instance")
    E = instance.energy_budget
    R = instance.rate_budget
    q = instance.counts
    sig = instance.variances
    eps = instance.sensing_costs
    th = np.asarray(alloc.fractions)
    rates = np.asarray(alloc.rates)

    sensed = [k for k in range(instance.size) if th[k] > 0]
    viol = []
    mu = [0.0] * instance.size
    nu = [0.0] * instance.size

    if not sensed:
        certifiable = R <= 0 or (E <= 0 and float(eps.min(initial=math.inf)) > 0)
        if not certifiable:
            viol.append(("unsensed_with_usable_budget", math.inf))
        for k in range(instance.size):
            if rates[k] > 0:
                viol.append((f"rate_on_unsensed[{k}]", float(rates[k])))
        return KktCertificate(None, None, tuple(mu), tuple(nu), tuple(viol))

    # primal feasibility
    energy_used = float((q * th * eps).sum())
    rate_used = float((q * rates).sum())
    viol.append(("primal_energy", max(0.0, energy_used - E) / max(1.0, E)))
    viol.append(("primal_rate", max(0.0, rate_used - R) / max(1.0, R)))
    for k in range(instance.size):
        if k not in sensed and rates[k] > 0:
            viol.append((f"rate_on_unsensed[{k}]", float(rates[k])))

    # sampled-fraction distortion scaled by 2 ln 2 equals the rate price
    marginal = {
        k: TWO_LN2 * sig[k] * 2.0 ** (-2.0 * rates[k] / th[k]) for k in sensed
    }

    rated = [k for k in sensed if rates[k] > 0]
    if rated:
        alpha = marginal[rated[0]]
    elif rate_used < R - 1e-12:
        alpha = 0.0
    else:
        alpha = max(marginal[k] for k in sensed)
    viol.append(("dual_rate_price", max(0.0, -alpha)))

    for k in sensed:
        if rates[k] > 0:
            viol.append(
                (f"stationarity_rate[{k}]", abs(alpha - marginal[k]) / max(1.0, alpha))
            )
        else:
            nu[k] = q[k] * (alpha - marginal[k])
            viol.append((f"dual_rate[{k}]", max(0.0, -nu[k] / q[k]) / max(1.0, alpha)))

    # fraction stationarity: s_k is the per-source derivative with mu folded out
    def reduction_term(k):
        x = 2.0 ** (-2.0 * rates[k] / th[k])
        return sig[k] * (1.0 - x * (1.0 + TWO_LN2 * rates[k] / th[k]))

    interior = [
        k for k in sensed if th[k] < 1.0 - _AT_UPPER and eps[k] > 0
    ]
    energy_slack = E - energy_used
    if interior:
        beta = reduction_term(interior[0]) / eps[interior[0]]
    elif energy_slack > 1e-12:
        beta = 0.0
    else:
        bounds = [reduction_term(k) / eps[k] for k in sensed if eps[k] > 0]
        beta = min(bounds) if bounds else 0.0
    beta = max(beta, 0.0) if beta > -1e-15 else beta
    viol.append(("dual_energy_price", max(0.0, -beta)))
    beta_eff = max(beta, 0.0)

    for k in sensed:
        s_k = beta_eff * eps[k] - reduction_term(k)
        if th[k] >= 1.0 - _AT_UPPER:
            mu[k] = -q[k] * s_k
            viol.append((f"dual_fraction[{k}]", max(0.0, s_k)))
            viol.append((f"cs_fraction[{k}]", abs(s_k) * (1.0 - th[k])))
        else:
            viol.append((f"stationarity_fraction[{k}]", abs(s_k)))

    viol.append(("cs_energy", abs(beta_eff * energy_slack) / max(1.0, E)))
    viol.append(("cs_rate", abs(alpha * (rate_used - R)) / max(1.0, R)))

    report = check_feasible(instance, alloc)
    if report.bound_violations:
        viol.append(("primal_bounds", 1.0))

    return KktCertificate(
        rate_price=alpha,
        energy_price=beta_eff,
        fraction_multipliers=tuple(mu),
        rate_multipliers=tuple(nu),
        violations=tuple(viol),
    )
