"""Joint sensing/communication solutions for ordered instances.

Covers the zero-sensing-cost power water-filling solution, the budget
thresholds that control how many classes receive power, the full-sampling
budget above which sampling everything is optimal (with its closed-form power
allocation), a structure check for candidate allocations, the KKT certificate,
and the capacity water-filling utility that converts a transmit-power budget
into a rate budget for the separate problem.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional, Sequence, Tuple

import numpy as np

from .model import (
    JointAllocation,
    JointInstance,
    PreconditionError,
    SolveReport,
    ValidationError,
    objective_joint,
    per_class_distortion,
    sampled_fraction_distortion,
)
from .separate import KktCertificate

__all__ = [
    "JointThresholds",
    "StructureReport",
    "budget_thresholds",
    "waterfill_powers",
    "solve_zero_cost",
    "full_sampling_budget",
    "joint_thresholds",
    "solve_large_budget",
    "structure_check",
    "kkt_certificate_joint",
    "capacity_waterfill",
]

_AT_UPPER = 1e-6
_EXP_CAP = 700.0  # exp() overflow guard inside the multiplier bisection


@dataclass(frozen=True)
class JointThresholds:
    """Budget levels plus the full-sampling budget and its reference power."""

    budget_levels: tuple
    full_sampling_budget: float
    reference_power: float
    degenerate: bool = False


@dataclass(frozen=True)
class StructureReport:
    ok: bool
    violation: Optional[str] = None

    def __bool__(self) -> bool:
        return self.ok


def _require_ordered_joint(instance: JointInstance):
    sig = instance.variances
    if not all(sig[i] > sig[i + 1] for i in range(len(sig) - 1)):
        raise PreconditionError(
            "class variances must be strictly descending; merge equal-variance "
            "classes into one class with summed count"
        )
    noises = instance.noises
    if not all(noises[i] <= noises[i + 1] for i in range(len(noises) - 1)):
        raise PreconditionError("channel noises must be non-decreasing across classes")
    costs = instance.sensing_costs
    if not all(costs[i] <= costs[i + 1] for i in range(len(costs) - 1)):
        raise PreconditionError("sensing costs must be non-decreasing across classes")


def budget_thresholds(instance: JointInstance) -> tuple:
    """Budget levels below which only a prefix of classes receives power.

    With the budget in the i-th interval, exactly the first i classes get
    positive transmit power in the zero-sensing-cost solution.
    """
    _require_ordered_joint(instance)
    sig = instance.variances
    noise = instance.noises
    q = instance.counts
    tau = instance.bandwidth_ratio
    e = 1.0 / (2.0 * tau + 1.0)
    out = []
    for i in range(1, instance.size):
        total = sum(
            q[j] * noise[j] * ((sig[j] * noise[i] / (sig[i] * noise[j])) ** e - 1.0)
            for j in range(i)
        )
        out.append(tau * float(total))
    return tuple(out)


def waterfill_powers(
    classes: Sequence,
    fractions: Sequence[float],
    bandwidth_ratio: float,
    power_budget: float,
) -> Tuple[np.ndarray, Optional[float]]:
    """Spend a power budget across classes with given sampling fractions.

    The power price is bisected (in log space, the spend is monotone) until
    the tau-weighted power sum exhausts the budget. Classes with fraction 0
    are excluded and get zero power.

    Returns (powers, power_price). power_price is None when no class is
    sensed while the budget is positive (the "power unusable" case).
    """
    fractions = np.asarray(fractions, dtype=float)
    sig = np.array([c.variance for c in classes])
    noise = np.array([c.channel_noise for c in classes])
    q = np.array([float(c.count) for c in classes])
    if len(fractions) != len(sig):
        raise ValidationError("fractions length does not match classes")
    if power_budget < 0:
        raise ValidationError("power_budget must be >= 0")
    tau = float(bandwidth_ratio)
    powers = np.zeros_like(fractions)
    active = [k for k in range(len(sig)) if fractions[k] > 0]
    if not active:
        return powers, None

    log_c = [math.log(2.0 * sig[k] / noise[k]) for k in active]
    expo = [fractions[k] / (2.0 * tau + fractions[k]) for k in active]
    u_hi = max(log_c)  # price at which every class's power hits zero
    if power_budget == 0.0:
        return powers, math.exp(u_hi)

    def spend(u: float) -> float:
        total = 0.0
        for i, k in enumerate(active):
            arg = expo[i] * (log_c[i] - u)
            if arg > 0:
                total += q[k] * noise[k] * (math.exp(min(arg, _EXP_CAP)) - 1.0)
        return tau * total

    u_lo = min(
        log_c[i] - math.log1p(power_budget / (tau * q[k] * noise[k])) / expo[i]
        for i, k in enumerate(active)
    )
    lo, hi = u_lo, u_hi
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        s = spend(mid)
        if abs(s - power_budget) <= 1e-14 * max(1.0, power_budget):
            lo = hi = mid
            break
        if s > power_budget:
            lo = mid
        else:
            hi = mid
        if hi - lo <= 1e-16 * max(1.0, abs(hi)):
            break
    u = 0.5 * (lo + hi)
    for i, k in enumerate(active):
        arg = expo[i] * (log_c[i] - u)
        if arg > 0:
            powers[k] = noise[k] * (math.exp(min(arg, _EXP_CAP)) - 1.0)
    return powers, math.exp(u)


def _prefix_powers(instance: JointInstance, budget: float, m: int) -> np.ndarray:
    """Closed-form powers over the first m fully sampled classes."""
    sig = instance.variances
    noise = instance.noises
    q = instance.counts
    tau = instance.bandwidth_ratio
    e = 1.0 / (2.0 * tau + 1.0)
    powers = np.zeros(instance.size)
    for k in range(m):
        num = budget + tau * sum(
            q[j] * noise[j] * (1.0 - (sig[j] * noise[k] / (sig[k] * noise[j])) ** e)
            for j in range(m)
            if j != k
        )
        den = tau * sum(
            q[j]
            * (sig[j] * noise[j] ** (2 * tau) / (sig[k] * noise[k] ** (2 * tau))) ** e
            for j in range(m)
        )
        powers[k] = num / den
    return powers


def _prefix_power_price(instance: JointInstance, budget: float, m: int) -> float:
    sig = instance.variances
    noise = instance.noises
    q = instance.counts
    tau = instance.bandwidth_ratio
    e = 1.0 / (2.0 * tau + 1.0)
    num = tau * sum(q[j] * (2.0 * sig[j] * noise[j] ** (2 * tau)) ** e for j in range(m))
    return (num / (budget + tau * float((q[:m] * noise[:m]).sum()))) ** (2 * tau + 1)


def solve_zero_cost(instance: JointInstance) -> SolveReport:
    """Optimal allocation when sensing is free: sample everything, water-fill
    power over the classes whose variance/noise profile earns it."""
    if any(c.sensing_cost != 0 for c in instance.classes):
        raise PreconditionError("solve_zero_cost requires all sensing costs to be 0")
    _require_ordered_joint(instance)
    B = instance.budget
    K = instance.size
    if B == 0.0:
        alloc = JointAllocation(fractions=(0.0,) * K, powers=(0.0,) * K)
        return SolveReport(
            allocation=alloc,
            objective=objective_joint(instance, alloc),
            rate_price=None,
            power_price=None,
            kkt_residual=0.0,
            case_tag="degenerate",
            per_class_distortion=per_class_distortion(instance, alloc),
            sampled_distortion=sampled_fraction_distortion(instance, alloc),
        )
    levels = budget_thresholds(instance)
    m = K
    for i, b in enumerate(levels):
        if B <= b:
            m = i + 1
            break
    powers = _prefix_powers(instance, B, m)
    beta = _prefix_power_price(instance, B, m)
    alloc = JointAllocation(fractions=(1.0,) * K, powers=tuple(powers))
    cert = kkt_certificate_joint(instance, alloc)
    return SolveReport(
        allocation=alloc,
        objective=objective_joint(instance, alloc),
        rate_price=None,
        power_price=beta,
        kkt_residual=cert.residual,
        case_tag=f"zero-cost(m={m})",
        per_class_distortion=per_class_distortion(instance, alloc),
        sampled_distortion=sampled_fraction_distortion(instance, alloc),
    )


def full_sampling_budget(instance: JointInstance) -> Tuple[float, float]:
    """Smallest budget at which fully sampling every class is optimal.

    Found by bisection: the marginal value of the last class's sampling
    fraction (left side of the boundary equation) rises with the budget while
    the power price (right side) falls, so the crossing is unique. Returns
    (budget, reference power of the last class at that budget).
    """
    _require_ordered_joint(instance)
    costs = instance.sensing_costs
    if all(c == 0 for c in costs):
        levels = budget_thresholds(instance)
        last = levels[-1] if levels else 0.0
        return last, 0.0
    if any(c == 0 for c in costs):
        raise PreconditionError("full_sampling_budget requires all sensing costs > 0")

    sig = instance.variances
    noise = instance.noises
    q = instance.counts
    tau = instance.bandwidth_ratio
    e = 1.0 / (2.0 * tau + 1.0)
    K = instance.size
    levels = budget_thresholds(instance)
    b_prev = levels[-1] if levels else 0.0
    sensing_total = float((q * costs).sum())
    ref_den = tau * sum(
        q[j] * (sig[j] * noise[j] ** (2 * tau) / (sig[K - 1] * noise[K - 1] ** (2 * tau))) ** e
        for j in range(K)
    )
    price_num = tau * sum(q[j] * (2.0 * sig[j] * noise[j] ** (2 * tau)) ** e for j in range(K))
    price_shift = float((q * (costs - tau * noise)).sum())

    def ref_power(b: float) -> float:
        return (b - b_prev - sensing_total) / ref_den

    def gap(b: float) -> float:
        x = 1.0 + ref_power(b) / noise[K - 1]
        lhs = sig[K - 1] / costs[K - 1] * (
            1.0 - x ** (-2.0 * tau) * (1.0 + 2.0 * tau * math.log(x))
        )
        rhs = (price_num / (b - price_shift)) ** (2 * tau + 1)
        return lhs - rhs

    lo = b_prev + sensing_total
    width = max(1.0, abs(lo))
    hi = lo + width
    while gap(hi) < 0:
        width *= 2.0
        hi = lo + width
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if gap(mid) >= 0:
            hi = mid
        else:
            lo = mid
        if hi - lo <= 1e-10 * max(1.0, hi):
            break
    bbar = 0.5 * (lo + hi)
    return bbar, ref_power(bbar)


def joint_thresholds(instance: JointInstance) -> JointThresholds:
    """All thresholds of the joint problem bundled together."""
    levels = budget_thresholds(instance)
    degenerate = all(c.sensing_cost == 0 for c in instance.classes)
    bbar, ref = full_sampling_budget(instance)
    return JointThresholds(
        budget_levels=levels,
        full_sampling_budget=bbar,
        reference_power=ref,
        degenerate=degenerate,
    )


def solve_large_budget(instance: JointInstance) -> SolveReport:
    """Closed form when the budget covers full sampling of every class.

    Sampling costs are paid up front; the remainder is water-filled as in the
    zero-cost solution. Refuses budgets below the full-sampling threshold
    (the refusal message carries the computed threshold).
    """
    _require_ordered_joint(instance)
    bbar, _ = full_sampling_budget(instance)
    B = instance.budget
    if B < bbar:
        raise PreconditionError(
            f"budget {B} is below the full-sampling threshold {bbar:.12g}; "
            "use the general solver"
        )
    q = instance.counts
    sensing_total = float((q * instance.sensing_costs).sum())
    powers = _prefix_powers(instance, B - sensing_total, instance.size)
    beta = _prefix_power_price(instance, B - sensing_total, instance.size)
    alloc = JointAllocation(fractions=(1.0,) * instance.size, powers=tuple(powers))
    cert = kkt_certificate_joint(instance, alloc)
    return SolveReport(
        allocation=alloc,
        objective=objective_joint(instance, alloc),
        rate_price=None,
        power_price=beta,
        kkt_residual=cert.residual,
        case_tag="large-budget",
        per_class_distortion=per_class_distortion(instance, alloc),
        sampled_distortion=sampled_fraction_distortion(instance, alloc),
    )


def structure_check(alloc: JointAllocation, tol: float = 1e-7) -> StructureReport:
    """Check the shape an optimal ordered-instance allocation must have.

    Fractions non-increasing with equality below 1 flagged, the sensed classes
    forming a prefix, and powers positive exactly on the sensed prefix.
    """
    th = alloc.fractions
    P = alloc.powers
    K = len(th)
    sensed = [k for k in range(K) if th[k] > 0]
    if sensed and sensed != list(range(sensed[-1] + 1)):
        return StructureReport(False, "sensed classes are not a prefix")
    for k in range(K - 1):
        if th[k + 1] > th[k] + tol:
            return StructureReport(
                False, f"fractions increase from class {k + 1} to {k + 2}"
            )
        both_sensed = th[k] > 0 and th[k + 1] > 0
        if (
            both_sensed
            and abs(th[k] - th[k + 1]) <= tol
            and th[k] < 1.0 - tol
        ):
            return StructureReport(
                False,
                f"classes {k + 1} and {k + 2} share an interior fraction; "
                "equality is only allowed at 1",
            )
    for k in range(K):
        if th[k] > 0 and P[k] <= 0:
            return StructureReport(False, f"sensed class {k + 1} has zero power")
        if th[k] == 0 and P[k] > 0:
            return StructureReport(False, f"unsensed class {k + 1} has positive power")
    return StructureReport(True, None)


def kkt_certificate_joint(instance: JointInstance, alloc: JointAllocation) -> KktCertificate:
    """Multiplier recovery and violation scoring for the joint problem."""
    if len(alloc.fractions) != instance.size:
        raise ValidationError("allocation does not match instance")
    B = instance.budget
    q = instance.counts
    sig = instance.variances
    noise = instance.noises
    eps = instance.sensing_costs
    tau = instance.bandwidth_ratio
    th = np.asarray(alloc.fractions)
    P = np.asarray(alloc.powers)

    sensed = [k for k in range(instance.size) if th[k] > 0]
    viol = []
    mu = [0.0] * instance.size
    nu = [0.0] * instance.size

    if not sensed:
        if B > 0:
            viol.append(("unsensed_with_usable_budget", math.inf))
        for k in range(instance.size):
            if P[k] > 0:
                viol.append((f"power_on_unsensed[{k}]", float(P[k])))
        return KktCertificate(None, None, tuple(mu), tuple(nu), tuple(viol))

    used = float((q * (th * eps + tau * P)).sum())
    viol.append(("primal_budget", max(0.0, used - B) / max(1.0, B)))
    for k in range(instance.size):
        if k not in sensed and P[k] > 0:
            viol.append((f"power_on_unsensed[{k}]", float(P[k])))

    # price implied by each class's power level
    def implied_price(k):
        return (
            2.0
            * sig[k]
            / noise[k]
            * (1.0 + P[k] / noise[k]) ** (-(2.0 * tau + th[k]) / th[k])
        )

    powered = [k for k in sensed if P[k] > 0]
    slack = B - used
    if powered:
        beta = implied_price(powered[0])
    elif slack > 1e-12:
        beta = 0.0
    else:
        beta = 0.0
    viol.append(("dual_power_price", max(0.0, -beta)))

    for k in sensed:
        if P[k] > 0:
            viol.append(
                (f"stationarity_power[{k}]", abs(beta - implied_price(k)) / max(1.0, beta))
            )
        else:
            nu[k] = tau * q[k] * (beta - 2.0 * sig[k] / noise[k])
            viol.append(
                (
                    f"dual_power[{k}]",
                    max(0.0, 2.0 * sig[k] / noise[k] - beta) / max(1.0, beta),
                )
            )

    def reduction_term(k):
        x = 1.0 + P[k] / noise[k]
        y = x ** (-2.0 * tau / th[k])
        return sig[k] * (1.0 - y * (1.0 + 2.0 * tau / th[k] * math.log(x)))

    for k in sensed:
        s_k = beta * eps[k] - reduction_term(k)
        if th[k] >= 1.0 - _AT_UPPER:
            mu[k] = -q[k] * s_k
            viol.append((f"dual_fraction[{k}]", max(0.0, s_k)))
            viol.append((f"cs_fraction[{k}]", abs(s_k) * (1.0 - th[k])))
        else:
            viol.append((f"stationarity_fraction[{k}]", abs(s_k)))

    viol.append(("cs_budget", abs(beta * slack) / max(1.0, B)))

    return KktCertificate(
        rate_price=None,
        energy_price=beta,
        fraction_multipliers=tuple(mu),
        rate_multipliers=tuple(nu),
        violations=tuple(viol),
    )


def capacity_waterfill(
    noises: Sequence[float],
    counts: Sequence[int],
    bandwidth_ratio: float,
    power_budget: float,
) -> float:
    """Total capacity of parallel Gaussian channels under a power budget.

    Classic water-filling: the water level is set so the count-weighted powers
    meet the budget; the result (bits per source sample) can serve as the rate
    budget of a separate sensing/communication problem.
    """
    if power_budget < 0:
        raise ValidationError("power_budget must be >= 0")
    noises = np.asarray(noises, dtype=float)
    q = np.asarray(counts, dtype=float)
    if power_budget == 0:
        return 0.0
    order = np.argsort(noises, kind="stable")
    level = None
    qsum = nsum = 0.0
    for j, k in enumerate(order):
        qsum += q[k]
        nsum += q[k] * noises[k]
        cand = (power_budget + nsum) / qsum
        nxt = order[j + 1] if j + 1 < len(order) else None
        if cand > noises[k] and (nxt is None or cand <= noises[nxt]):
            level = cand
            break
    if level is None:
        level = cand
    powers = np.maximum(level - noises, 0.0)
    rate = bandwidth_ratio * float((q * np.log2(1.0 + powers / noises)).sum())
    return rate
