"""Suboptimal comparison strategies for the separate problem.

Lower Cost First spends the sensing budget greedily on the cheapest classes;
Equal Sampling Fraction first runs classic reverse water-filling with the
energy constraint ignored, then samples an equal fraction of every class that
received rate. Both finish by re-splitting the rate budget with the
fraction-scaled water-filling variant.
"""
from __future__ import annotations

import numpy as np

from .model import (
    SeparateAllocation,
    SeparateInstance,
    SolveReport,
    objective_separate,
    per_class_distortion,
    sampled_fraction_distortion,
)
from .separate import kkt_certificate_separate, reverse_waterfill_rates

__all__ = ["solve_lcf", "solve_esf"]


def _report(instance, th, rates, alpha, tag) -> SolveReport:
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


def solve_lcf(instance: SeparateInstance) -> SolveReport:
    """Lower Cost First: fill fractions to 1 in order of ascending sensing
    cost (ties: larger variance first) until the energy budget runs out."""
    K = instance.size
    q = instance.counts
    eps = instance.sensing_costs
    order = sorted(range(K), key=lambda k: (eps[k], -instance.variances[k], k))
    th = np.zeros(K)
    remaining = instance.energy_budget
    for k in order:
        cost = q[k] * eps[k]
        if cost == 0:
            th[k] = 1.0
        elif remaining > 0:
            th[k] = min(remaining / cost, 1.0)
            remaining -= th[k] * cost
    rates, alpha = reverse_waterfill_rates(instance.classes, th, instance.rate_budget)
    return _report(instance, th, rates, alpha, "lcf")


def solve_esf(instance: SeparateInstance) -> SolveReport:
    """Equal Sampling Fraction: classic water-filling picks the rated classes,
    the energy buys the same fraction of each, rates are then re-split."""
    K = instance.size
    q = instance.counts
    eps = instance.sensing_costs
    rates0, _ = reverse_waterfill_rates(
        instance.classes, np.ones(K), instance.rate_budget
    )
    selected = rates0 > 0
    th = np.zeros(K)
    if selected.any():
        denom = float((q * eps)[selected].sum())
        frac = 1.0 if denom == 0 else min(instance.energy_budget / denom, 1.0)
        th[selected] = frac
    rates, alpha = reverse_waterfill_rates(instance.classes, th, instance.rate_budget)
    return _report(instance, th, rates, alpha, f"esf(selected={int(selected.sum())})")
