"""General numerical solver for arbitrarily ordered instances.

The non-differentiability of the objectives at zero fractions is removed by a
small floor delta on every fraction. Each problem is then solved by a
two-level decomposition: for fixed fractions the rate/power subproblem is
solved exactly by water-filling, and the resulting reduced objective (convex
by partial minimization, differentiable above the floor) is minimized by
projected gradient descent with backtracking. Fractions that finish at the
floor are snapped to zero before the result is certified.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .joint import kkt_certificate_joint, waterfill_powers
from .model import (
    JointAllocation,
    JointInstance,
    SeparateAllocation,
    SeparateInstance,
    SolveReport,
    ValidationError,
    objective_joint,
    objective_separate,
    per_class_distortion,
    sampled_fraction_distortion,
)
from .separate import TWO_LN2, kkt_certificate_separate, reverse_waterfill_rates

__all__ = ["SolverConfig", "project_box_halfspace", "solve_separate_general", "solve_joint_general"]

# backtracking line search constants, fixed for determinism
_ARMIJO = 1e-4
_SHRINK = 0.5
_MIN_STEP = 1e-14


@dataclass(frozen=True)
class SolverConfig:
    """Knobs of the projected-gradient solver.

    delta is the sampling-fraction floor; tolerance is the relative objective
    change at which iteration stops; seed is reserved for future multi-start
    variants (the problems here are convex, a single start suffices).
    """

    delta: float = 1e-6
    tolerance: float = 1e-10
    max_iterations: int = 100_000
    seed: int = 0

    def __post_init__(self):
        if not (0 < self.delta < 1):
            raise ValidationError(f"delta must be in (0, 1), got {self.delta}")
        if not self.tolerance > 0:
            raise ValidationError("tolerance must be positive")
        if self.max_iterations < 1:
            raise ValidationError("max_iterations must be >= 1")


def project_box_halfspace(point, costs, budget, lower, upper) -> np.ndarray:
    """Euclidean projection onto {lower <= x <= upper, costs . x <= budget}.

    Box clipping first; if the linear constraint is still violated its
    multiplier is bisected (spend is monotone in it) until the constraint
    holds to 1e-12.
    """
    point = np.asarray(point, dtype=float)
    costs = np.asarray(costs, dtype=float)
    lo = np.broadcast_to(np.asarray(lower, dtype=float), point.shape).copy()
    hi = np.broadcast_to(np.asarray(upper, dtype=float), point.shape).copy()
    if np.any(lo > hi):
        raise ValidationError("lower bound exceeds upper bound")
    if np.any(costs < 0):
        raise ValidationError("costs must be non-negative")
    if float(costs @ lo) > budget + 1e-12 * max(1.0, abs(budget)):
        raise ValidationError("feasible set is empty")

    x = np.clip(point, lo, hi)
    tol = 1e-12 * max(1.0, abs(budget))
    if float(costs @ x) <= budget + tol:
        return x

    def clipped(lam):
        return np.clip(point - lam * costs, lo, hi)

    lam_hi = 1.0
    while float(costs @ clipped(lam_hi)) > budget:
        lam_hi *= 2.0
        if lam_hi > 1e64:  # unreachable with a nonempty feasible set
            break
    lam_lo = 0.0
    for _ in range(200):
        mid = 0.5 * (lam_lo + lam_hi)
        used = float(costs @ clipped(mid))
        if abs(used - budget) <= tol:
            lam_lo = lam_hi = mid
            break
        if used > budget:
            lam_lo = mid
        else:
            lam_hi = mid
    return clipped(lam_hi)


def _projected_gradient(evaluate, project, x0, config):
    """Minimize a smooth convex function over a convex set.

    evaluate(x) returns (value, gradient, payload); payload is whatever the
    inner subproblem produced at x and is handed back for the final report.
    Returns (x, value, payload, iterations, converged).
    """
    x = project(np.asarray(x0, dtype=float))
    value, grad, payload = evaluate(x)
    iterations = 0
    for iterations in range(1, config.max_iterations + 1):
        step = 1.0
        accepted = False
        while step >= _MIN_STEP:
            y = project(x - step * grad)
            move = y - x
            if not np.any(move):
                break
            predicted = float(grad @ move)
            new_value, new_grad, new_payload = evaluate(y)
            if new_value <= value + _ARMIJO * predicted:
                accepted = True
                break
            step *= _SHRINK
        if not accepted:
            return x, value, payload, iterations - 1, True
        assert new_value <= value + 1e-12 * max(1.0, abs(value)), "objective increased"
        change = (value - new_value) / max(1.0, abs(value))
        x, value, grad, payload = y, new_value, new_grad, new_payload
        if change < config.tolerance:
            return x, value, payload, iterations, True
    return x, value, payload, config.max_iterations, False


def _zero_separate_report(instance, tag) -> SolveReport:
    K = instance.size
    alloc = SeparateAllocation(fractions=(0.0,) * K, rates=(0.0,) * K)
    return SolveReport(
        allocation=alloc,
        objective=objective_separate(instance, alloc),
        rate_price=None,
        power_price=None,
        kkt_residual=0.0,
        case_tag=tag,
        per_class_distortion=per_class_distortion(instance, alloc),
        sampled_distortion=sampled_fraction_distortion(instance, alloc),
    )


def solve_separate_general(
    instance: SeparateInstance, config: Optional[SolverConfig] = None
) -> SolveReport:
    """Minimize total MSE for arbitrary variance/cost orderings.

    Rates are eliminated exactly by reverse water-filling inside the objective;
    the gradient over fractions follows from the envelope theorem. Fractions
    live in [delta, 1] intersected with the sensing-energy halfspace.
    """
    config = config or SolverConfig()
    E = instance.energy_budget
    R = instance.rate_budget
    if R == 0.0:
        return _zero_separate_report(instance, "degenerate")
    q = instance.counts
    sig = instance.variances
    eps = instance.sensing_costs
    qeps = q * eps
    total_cost = float(qeps.sum())
    if E == 0.0 and total_cost > 0:
        return _zero_separate_report(instance, "degenerate")

    delta = config.delta
    flags = ""
    if total_cost > 0 and delta * total_cost > E:
        delta = 0.5 * E / total_cost
        flags = ";delta_shrunk"

    classes = instance.classes
    K = instance.size

    def evaluate(th):
        rates, alpha = reverse_waterfill_rates(classes, th, R)
        obj = 0.0
        grad = np.empty(K)
        for k in range(K):
            x = 2.0 ** (-2.0 * rates[k] / th[k])
            obj += q[k] * sig[k] * ((1.0 - th[k]) + th[k] * x)
            grad[k] = q[k] * sig[k] * (-1.0 + x * (1.0 + TWO_LN2 * rates[k] / th[k]))
        return obj, grad, (rates, alpha)

    def project(x):
        return project_box_halfspace(x, qeps, E, delta, 1.0)

    x0 = np.ones(K)
    th, _, _, iterations, converged = _projected_gradient(evaluate, project, x0, config)

    th = np.where(th <= 2.0 * delta, 0.0, th)
    rates, alpha = reverse_waterfill_rates(classes, th, R)
    alloc = SeparateAllocation(fractions=tuple(th), rates=tuple(rates))
    cert = kkt_certificate_separate(instance, alloc)
    tag = f"general(iterations={iterations})" + flags
    if not converged:
        tag += ";max_iterations"
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


def solve_joint_general(
    instance: JointInstance, config: Optional[SolverConfig] = None
) -> SolveReport:
    """Minimize total MSE of the joint problem for ordered or unordered data.

    For fixed fractions, the leftover budget after sensing is spent exactly by
    power water-filling; the envelope gradient couples the distortion slope
    with the power price times each class's sensing cost.
    """
    config = config or SolverConfig()
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

    q = instance.counts
    sig = instance.variances
    eps = instance.sensing_costs
    noise = instance.noises
    tau = instance.bandwidth_ratio
    qeps = q * eps

    delta = config.delta
    flags = ""
    prefix = K
    cum = np.cumsum(qeps)
    while prefix > 1 and delta * cum[prefix - 1] >= B:
        prefix -= 1
    if delta * cum[prefix - 1] >= B:
        delta = 0.5 * B / cum[prefix - 1]
        flags = ";delta_shrunk"
    if prefix < K:
        flags += f";prefix={prefix}"

    sub = list(range(prefix))
    classes = [instance.classes[k] for k in sub]
    qeps_sub = qeps[sub]

    def evaluate(th):
        spend = B - float(qeps_sub @ th)
        powers, beta = waterfill_powers(classes, th, tau, max(spend, 0.0))
        obj = 0.0
        grad = np.empty(prefix)
        for i, k in enumerate(sub):
            x = 1.0 + powers[i] / noise[k]
            y = x ** (-2.0 * tau / th[i])
            obj += q[k] * sig[k] * ((1.0 - th[i]) + th[i] * y)
            slope = -1.0 + y * (1.0 + 2.0 * tau / th[i] * math.log(x))
            grad[i] = q[k] * sig[k] * slope + beta * qeps_sub[i]
        return obj, grad, (powers, beta)

    def project(x):
        return project_box_halfspace(x, qeps_sub, B, delta, 1.0)

    x0 = np.ones(prefix)
    th_sub, _, _, iterations, converged = _projected_gradient(
        evaluate, project, x0, config
    )

    th = np.zeros(K)
    th[sub] = np.where(th_sub <= 2.0 * delta, 0.0, th_sub)
    spend = B - float(qeps @ th)
    powers = np.zeros(K)
    sensed = [k for k in range(K) if th[k] > 0]
    beta = None
    if sensed:
        p_sub, beta = waterfill_powers(
            [instance.classes[k] for k in sensed], th[sensed], tau, max(spend, 0.0)
        )
        powers[sensed] = p_sub
    alloc = JointAllocation(fractions=tuple(th), powers=tuple(powers))
    cert = kkt_certificate_joint(instance, alloc)
    tag = f"general(iterations={iterations})" + flags
    if not converged:
        tag += ";max_iterations"
    return SolveReport(
        allocation=alloc,
        objective=objective_joint(instance, alloc),
        rate_price=None,
        power_price=beta,
        kkt_residual=cert.residual,
        case_tag=tag,
        per_class_distortion=per_class_distortion(instance, alloc),
        sampled_distortion=sampled_fraction_distortion(instance, alloc),
    )
