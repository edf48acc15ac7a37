"""Device physics for a single microgrid.

Generator and battery cost curves, battery state-of-charge dynamics,
linear network loss and action clipping. Everything here is a pure
function of its arguments.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np


class DomainError(ValueError):
    """Raised when a power setpoint lies outside the device bounds."""


@dataclass(frozen=True)
class CgParams:
    """Conventional generator: quadratic cost a*p^2 + b*p + c on [p_min, p_max]."""

    a: float
    b: float
    c: float
    p_min: float
    p_max: float

    def __post_init__(self):
        if self.p_min > self.p_max:
            raise ValueError(f"p_min {self.p_min} > p_max {self.p_max}")
        if self.a < 0:
            raise ValueError("cost coefficient a must be nonnegative")


@dataclass(frozen=True)
class BaParams:
    """Battery. Positive power discharges, negative power charges."""

    a: float
    b: float
    c: float
    p_min: float
    p_max: float
    capacity: float = 200.0  # kWh
    eta_ch: float = 0.95
    eta_dch: float = 0.95
    delta: float = 0.002  # self-discharge per 1 h step
    soc_min: float = 0.1
    soc_max: float = 0.9

    def __post_init__(self):
        if not self.p_min < 0 < self.p_max:
            raise ValueError("battery needs p_min < 0 < p_max")
        if not 0 <= self.soc_min < self.soc_max <= 1:
            raise ValueError("need 0 <= soc_min < soc_max <= 1")
        if not (0 < self.eta_ch <= 1 and 0 < self.eta_dch <= 1):
            raise ValueError("efficiencies must lie in (0, 1]")
        if not 0 <= self.delta < 1:
            raise ValueError("self-discharge rate must lie in [0, 1)")
        if self.capacity <= 0:
            raise ValueError("capacity must be positive")


@dataclass(frozen=True)
class LossCoefficients:
    lambda_cg: float = 0.02
    lambda_reg: float = 0.02
    lambda_ba: float = 0.02

    def __post_init__(self):
        for name in ("lambda_cg", "lambda_reg", "lambda_ba"):
            v = getattr(self, name)
            if not 0 <= v <= 0.1:
                raise ValueError(f"{name}={v} outside [0, 0.1]")


def _check_bounds(p: float, lo: float, hi: float, what: str) -> None:
    if not lo <= p <= hi:
        raise DomainError(f"{what} power {p} outside [{lo}, {hi}]; clip first")


def cg_cost(p: float, params: CgParams) -> float:
    """Fuel cost of a conventional generator at output ``p`` (kW)."""
    _check_bounds(p, params.p_min, params.p_max, "CG")
    return params.a * p * p + params.b * p + params.c


def ba_cost(p: float, soc: float, params: BaParams) -> float:
    """Amortized battery cost.

    The quadratic is evaluated at the effective power
    ``p + 3 * p_max * (1 - soc)``. Deep charging of a full battery gives a
    negative cost; this is passed through unchanged.
    """
    _check_bounds(p, params.p_min, params.p_max, "BA")
    if not 0.0 <= soc <= 1.0:
        raise DomainError(f"soc {soc} outside [0, 1]")
    x = p + 3.0 * params.p_max * (1.0 - soc)
    return params.a * x * x + params.b * x + params.c


def soc_unclamped(soc: float, p: float, params: BaParams, dt: float = 1.0) -> float:
    """Raw state-of-charge update before any bound handling."""
    decayed = (1.0 - params.delta) * soc
    if p < 0:
        return decayed - p * dt / (params.eta_ch * params.capacity)
    return decayed - params.eta_dch * p * dt / params.capacity


def soc_step(soc: float, p: float, params: BaParams, dt: float = 1.0) -> tuple[float, float]:
    """Advance the battery one step.

    Returns ``(next_soc, applied_power)``. If ``p`` would push the state of
    charge past a bound, the applied power is cut back to the value that
    lands exactly on the bound. When self-discharge alone crosses the lower
    bound the state is clamped and the applied power is zero.
    """
    if dt <= 0:
        raise ValueError("dt must be positive")
    nxt = soc_unclamped(soc, p, params, dt)
    decayed = (1.0 - params.delta) * soc
    if nxt < params.soc_min and p > 0:
        p = max(0.0, (decayed - params.soc_min) * params.capacity / (params.eta_dch * dt))
        nxt = soc_unclamped(soc, p, params, dt)
    elif nxt > params.soc_max and p < 0:
        p = min(0.0, -(params.soc_max - decayed) * params.eta_ch * params.capacity / dt)
        nxt = soc_unclamped(soc, p, params, dt)
    return min(max(nxt, params.soc_min), params.soc_max), p


def power_loss(
    p_cgs: Sequence[float],
    p_regs: Sequence[float],
    p_bas: Sequence[float],
    coeffs: LossCoefficients = LossCoefficients(),
) -> float:
    """Network loss as a linear combination of device outputs (kW)."""
    return (
        coeffs.lambda_cg * float(sum(p_cgs))
        + coeffs.lambda_reg * float(sum(p_regs))
        + coeffs.lambda_ba * float(sum(p_bas))
    )


def clip_action(raw: Sequence[float], bounds: Sequence[tuple[float, float]]) -> list[float]:
    """Clamp each setpoint into its ``(min, max)`` pair."""
    if len(raw) != len(bounds):
        raise ValueError(f"{len(raw)} setpoints but {len(bounds)} bounds")
    out = []
    for x, (lo, hi) in zip(raw, bounds):
        if lo > hi:
            raise ValueError(f"bounds ({lo}, {hi}) not ordered")
        out.append(float(np.clip(x, lo, hi)))
    return out
