"""Domain types, distortion functionals, objectives, and feasibility checks.

Two problem flavors are modeled. In the *separate* problem a sensor has an
energy budget for sensing and an independent rate budget for communication.
In the *joint* problem a single energy budget pays for both sensing and
transmit power over per-source channels.

Sources are grouped into classes of identical sources (same variance, same
sensing cost, same channel noise); giving every member of a class the same
fraction and rate/power is optimal, so allocations carry one entry per class.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, replace
from typing import Optional, Sequence, Union

import numpy as np

__all__ = [
    "ValidationError",
    "PreconditionError",
    "SourceClass",
    "SeparateInstance",
    "JointInstance",
    "SeparateAllocation",
    "JointAllocation",
    "SolveReport",
    "BudgetUse",
    "FeasibilityReport",
    "distortion_factor_separate",
    "distortion_factor_joint",
    "objective_separate",
    "objective_joint",
    "per_class_distortion",
    "sampled_fraction_distortion",
    "fold_weights",
    "check_feasible",
]

#: absolute tolerance used when flagging constraint violations
FEASIBILITY_TOL = 1e-9


class ValidationError(ValueError):
    """Raised for malformed data: bad field values, dimension mismatches."""


class PreconditionError(ValueError):
    """Raised when a method's precondition (ordering, budget regime) is unmet."""


@dataclass(frozen=True)
class SourceClass:
    """One class of identical Gaussian sources.

    variance: per-source signal power (must be > 0).
    sensing_cost: energy per source sample spent acquiring/compressing it.
    count: number of identical sources in the class.
    channel_noise: noise variance of the class's channel (joint problem only).
    """

    variance: float
    sensing_cost: float = 0.0
    count: int = 1
    channel_noise: Optional[float] = None

    def __post_init__(self):
        if not (self.variance > 0 and math.isfinite(self.variance)):
            raise ValidationError(f"variance must be positive, got {self.variance}")
        if not (self.sensing_cost >= 0 and math.isfinite(self.sensing_cost)):
            raise ValidationError(f"sensing_cost must be >= 0, got {self.sensing_cost}")
        if int(self.count) != self.count or self.count < 1:
            raise ValidationError(f"count must be a positive integer, got {self.count}")
        if self.channel_noise is not None and not (
            self.channel_noise > 0 and math.isfinite(self.channel_noise)
        ):
            raise ValidationError(f"channel_noise must be positive, got {self.channel_noise}")


def _as_class_tuple(classes) -> tuple:
    classes = tuple(classes)
    if not classes:
        raise ValidationError("at least one source class is required")
    if not all(isinstance(c, SourceClass) for c in classes):
        raise ValidationError("classes must be SourceClass values")
    return classes


def _check_budget(name: str, value: float) -> float:
    value = float(value)
    if not (math.isfinite(value) and value >= 0):
        raise ValidationError(f"{name} must be finite and >= 0, got {value}")
    return value


@dataclass(frozen=True)
class SeparateInstance:
    """Separate sensing/communication problem: classes + (energy, rate) budgets."""

    classes: tuple
    energy_budget: float
    rate_budget: float

    def __post_init__(self):
        object.__setattr__(self, "classes", _as_class_tuple(self.classes))
        object.__setattr__(self, "energy_budget", _check_budget("energy_budget", self.energy_budget))
        object.__setattr__(self, "rate_budget", _check_budget("rate_budget", self.rate_budget))

    @property
    def size(self) -> int:
        return len(self.classes)

    @property
    def variances(self) -> np.ndarray:
        return np.array([c.variance for c in self.classes])

    @property
    def sensing_costs(self) -> np.ndarray:
        return np.array([c.sensing_cost for c in self.classes])

    @property
    def counts(self) -> np.ndarray:
        return np.array([float(c.count) for c in self.classes])


@dataclass(frozen=True)
class JointInstance:
    """Joint sensing/communication problem: classes with channels + one budget."""

    classes: tuple
    budget: float
    bandwidth_ratio: float

    def __post_init__(self):
        object.__setattr__(self, "classes", _as_class_tuple(self.classes))
        object.__setattr__(self, "budget", _check_budget("budget", self.budget))
        if not (self.bandwidth_ratio > 0 and math.isfinite(self.bandwidth_ratio)):
            raise ValidationError(f"bandwidth_ratio must be positive, got {self.bandwidth_ratio}")
        for i, c in enumerate(self.classes):
            if c.channel_noise is None:
                raise ValidationError(f"class {i} lacks channel_noise, required for joint problems")

    @property
    def size(self) -> int:
        return len(self.classes)

    @property
    def variances(self) -> np.ndarray:
        return np.array([c.variance for c in self.classes])

    @property
    def sensing_costs(self) -> np.ndarray:
        return np.array([c.sensing_cost for c in self.classes])

    @property
    def counts(self) -> np.ndarray:
        return np.array([float(c.count) for c in self.classes])

    @property
    def noises(self) -> np.ndarray:
        return np.array([c.channel_noise for c in self.classes])


def _check_fraction_vector(fractions) -> tuple:
    fr = tuple(float(x) for x in fractions)
    for x in fr:
        if not (-1e-12 <= x <= 1 + 1e-12):
            raise ValidationError(f"fraction {x} outside [0, 1]")
    return tuple(min(max(x, 0.0), 1.0) for x in fr)


def _check_nonneg_vector(name, values) -> tuple:
    vals = tuple(float(x) for x in values)
    for x in vals:
        if x < -1e-12 or not math.isfinite(x):
            raise ValidationError(f"{name} entry {x} must be >= 0 and finite")
    return tuple(max(x, 0.0) for x in vals)


@dataclass(frozen=True)
class SeparateAllocation:
    """Per-class sampling fractions and communication rates."""

    fractions: tuple
    rates: tuple

    def __post_init__(self):
        object.__setattr__(self, "fractions", _check_fraction_vector(self.fractions))
        object.__setattr__(self, "rates", _check_nonneg_vector("rates", self.rates))
        if len(self.fractions) != len(self.rates):
            raise ValidationError("fractions and rates must have equal length")


@dataclass(frozen=True)
class JointAllocation:
    """Per-class sampling fractions and transmit powers."""

    fractions: tuple
    powers: tuple

    def __post_init__(self):
        object.__setattr__(self, "fractions", _check_fraction_vector(self.fractions))
        object.__setattr__(self, "powers", _check_nonneg_vector("powers", self.powers))
        if len(self.fractions) != len(self.powers):
            raise ValidationError("fractions and powers must have equal length")


@dataclass(frozen=True)
class SolveReport:
    """Solver output: allocation, objective, prices, and a KKT residual.

    case_tag records which analytic case or numerical path produced the
    allocation (and solver iteration counts / flags).
    """

    allocation: Union[SeparateAllocation, JointAllocation]
    objective: float
    rate_price: Optional[float]
    power_price: Optional[float]
    kkt_residual: float
    case_tag: str
    per_class_distortion: tuple
    sampled_distortion: tuple


@dataclass(frozen=True)
class BudgetUse:
    name: str
    used: float
    limit: float

    @property
    def slack(self) -> float:
        return self.limit - self.used

    @property
    def violated(self) -> bool:
        return self.used > self.limit + FEASIBILITY_TOL


@dataclass(frozen=True)
class FeasibilityReport:
    budgets: tuple
    bound_violations: tuple

    @property
    def feasible(self) -> bool:
        return not self.bound_violations and not any(b.violated for b in self.budgets)

    def budget(self, name: str) -> BudgetUse:
        for b in self.budgets:
            if b.name == name:
                return b
        raise KeyError(name)


# --------------------------------------------------------------------------
# distortion functionals


def distortion_factor_separate(fraction: float, rate: float) -> float:
    """Normalized reconstruction MSE of a unit-variance source.

    A fraction of the samples is measured and described at the given total
    rate per source sample; the remaining fraction is reconstructed at full
    variance. The factor is 1 at fraction 0 regardless of rate.
    """
    if not (0.0 <= fraction <= 1.0):
        raise ValidationError(f"fraction {fraction} outside [0, 1]")
    if rate < 0:
        raise ValidationError(f"rate {rate} must be >= 0")
    if fraction == 0.0:
        return 1.0
    return (1.0 - fraction) + fraction * 2.0 ** (-2.0 * rate / fraction)


def distortion_factor_joint(
    fraction: float, power: float, noise: float, bandwidth_ratio: float
) -> float:
    """Normalized MSE when the sensed fraction is sent over a Gaussian channel.

    The sensed samples are transmitted with the given power over a channel of
    the given noise variance, with bandwidth_ratio channel uses per source
    sample. The factor is 1 at fraction 0.
    """
    if not (0.0 <= fraction <= 1.0):
        raise ValidationError(f"fraction {fraction} outside [0, 1]")
    if power < 0:
        raise ValidationError(f"power {power} must be >= 0")
    if noise <= 0 or bandwidth_ratio <= 0:
        raise ValidationError("noise and bandwidth_ratio must be positive")
    if fraction == 0.0:
        return 1.0
    return (1.0 - fraction) + fraction * (1.0 + power / noise) ** (
        -2.0 * bandwidth_ratio / fraction
    )


def _require_length(instance, alloc_len: int):
    if alloc_len != instance.size:
        raise ValidationError(
            f"allocation length {alloc_len} does not match instance size {instance.size}"
        )


def per_class_distortion(instance, alloc) -> tuple:
    """Per-source distortion of each class under the given allocation."""
    if isinstance(instance, SeparateInstance):
        _require_length(instance, len(alloc.fractions))
        return tuple(
            c.variance * distortion_factor_separate(t, r)
            for c, t, r in zip(instance.classes, alloc.fractions, alloc.rates)
        )
    _require_length(instance, len(alloc.fractions))
    tau = instance.bandwidth_ratio
    return tuple(
        c.variance * distortion_factor_joint(t, p, c.channel_noise, tau)
        for c, t, p in zip(instance.classes, alloc.fractions, alloc.powers)
    )


def sampled_fraction_distortion(instance, alloc) -> tuple:
    """Normalized distortion of the sampled fraction only; None where unsensed."""
    out = []
    if isinstance(instance, SeparateInstance):
        for c, t, r in zip(instance.classes, alloc.fractions, alloc.rates):
            out.append(c.variance * 2.0 ** (-2.0 * r / t) if t > 0 else None)
    else:
        tau = instance.bandwidth_ratio
        for c, t, p in zip(instance.classes, alloc.fractions, alloc.powers):
            if t > 0:
                out.append(c.variance * (1.0 + p / c.channel_noise) ** (-2.0 * tau / t))
            else:
                out.append(None)
    return tuple(out)


def objective_separate(instance: SeparateInstance, alloc: SeparateAllocation) -> float:
    """Total MSE: count-weighted sum of per-source distortions."""
    _require_length(instance, len(alloc.fractions))
    return float(
        sum(
            c.count * c.variance * distortion_factor_separate(t, r)
            for c, t, r in zip(instance.classes, alloc.fractions, alloc.rates)
        )
    )


def objective_joint(instance: JointInstance, alloc: JointAllocation) -> float:
    """Total MSE of the joint problem under the given fractions and powers."""
    _require_length(instance, len(alloc.fractions))
    tau = instance.bandwidth_ratio
    return float(
        sum(
            c.count * c.variance * distortion_factor_joint(t, p, c.channel_noise, tau)
            for c, t, p in zip(instance.classes, alloc.fractions, alloc.powers)
        )
    )


def fold_weights(instance, weights: Sequence[float]):
    """Fold per-class positive weights into the variances.

    A weighted-MSE objective with weights w is equivalent to the plain MSE
    objective on an instance whose class variances are scaled by w.
    """
    weights = [float(w) for w in weights]
    if len(weights) != instance.size:
        raise ValidationError(
            f"got {len(weights)} weights for {instance.size} classes"
        )
    if any(not (w > 0 and math.isfinite(w)) for w in weights):
        raise ValidationError("weights must all be positive and finite")
    new_classes = tuple(
        replace(c, variance=w * c.variance) for c, w in zip(instance.classes, weights)
    )
    return replace(instance, classes=new_classes)


def check_feasible(instance, alloc) -> FeasibilityReport:
    """Report budget usage and slack; violations are data, not exceptions."""
    _require_length(instance, len(alloc.fractions))
    q = instance.counts
    th = np.asarray(alloc.fractions)
    bounds = []
    for k, t in enumerate(alloc.fractions):
        if t < -FEASIBILITY_TOL or t > 1 + FEASIBILITY_TOL:
            bounds.append(f"fraction[{k}]={t} outside [0, 1]")
    if isinstance(instance, SeparateInstance):
        for k, r in enumerate(alloc.rates):
            if r < -FEASIBILITY_TOL:
                bounds.append(f"rate[{k}]={r} negative")
        energy = float((q * th * instance.sensing_costs).sum())
        rate = float((q * np.asarray(alloc.rates)).sum())
        budgets = (
            BudgetUse("energy", energy, instance.energy_budget),
            BudgetUse("rate", rate, instance.rate_budget),
        )
    else:
        for k, p in enumerate(alloc.powers):
            if p < -FEASIBILITY_TOL:
                bounds.append(f"power[{k}]={p} negative")
        tau = instance.bandwidth_ratio
        used = float(
            (q * (th * instance.sensing_costs + tau * np.asarray(alloc.powers))).sum()
        )
        budgets = (BudgetUse("budget", used, instance.budget),)
    return FeasibilityReport(budgets=budgets, bound_violations=tuple(bounds))
