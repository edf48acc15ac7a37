"""Single-microgrid MDP over a 24-hour day.

The state holds the previous hour's load, renewable output, battery state
of charge and distribution price. Actions are CG and battery setpoints in
kW; the step clips them to the device bounds, cuts battery power back to
what the state of charge allows, and scores the result with

    r = -w_cost * (CG cost + BA cost) - w_dev * price_dpn * |P_de|

where ``P_de = load - (CG + REG + BA - loss)``.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from . import grid
from .config import MmgConfig, ObsScale, RewardWeights
from .grid import LossCoefficients
from .scenario import HOURS, MgDevices, NoiseModel, ScenarioDay, sample_realization


@dataclass(frozen=True)
class MgState:
    prev_load: float
    prev_reg: tuple[float, ...]
    soc: tuple[float, ...]
    prev_price: float
    hour_index: int  # 0..23, the hour about to be dispatched minus one

    def observation(self, scale: ObsScale = ObsScale()) -> np.ndarray:
        return np.array(
            [
                self.prev_load / scale.power,
                *(r / scale.power for r in self.prev_reg),
                *self.soc,
                self.prev_price / scale.price,
                self.hour_index / scale.hours,
            ]
        )


@dataclass(frozen=True)
class StepOutcome:
    next_state: MgState
    reward: float
    deviation: float
    cost_cg: float
    cost_ba: float
    loss: float
    p_cg: tuple[float, ...]
    p_ba: tuple[float, ...]
    reg: float
    load: float
    price: float
    hour: int
    done: bool


@dataclass(frozen=True)
class Transition:
    state: MgState
    action: tuple[float, ...]
    reward: float
    next_state: MgState
    log_prob: float = float("nan")
    value: float = float("nan")


def obs_dim(devices: MgDevices) -> int:
    return 1 + devices.n_reg + len(devices.ba) + 2


def action_dim(devices: MgDevices) -> int:
    return len(devices.cg) + len(devices.ba)


def action_bounds(devices: MgDevices) -> list[tuple[float, float]]:
    return [(g.p_min, g.p_max) for g in devices.cg] + [(b.p_min, b.p_max) for b in devices.ba]


def scale_action(unit: Sequence[float], devices: MgDevices) -> np.ndarray:
    """Map a per-dimension value in [-1, 1] affinely onto the device bounds."""
    lo, hi = np.array(action_bounds(devices)).T
    return lo + (np.asarray(unit, dtype=float) + 1.0) * 0.5 * (hi - lo)


def reward_terms(cost_cg, cost_ba, deviation, price, weights: RewardWeights) -> tuple[float, float]:
    """The two physical penalty terms, already weighted and negated."""
    return -weights.w_cost * (cost_cg + cost_ba), -weights.w_dev * price * abs(deviation)


def transition(
    state: MgState,
    action: Sequence[float],
    t: int,
    devices: MgDevices,
    day: ScenarioDay,
    mg: int,
    loss: LossCoefficients = LossCoefficients(),
    weights: RewardWeights = RewardWeights(),
) -> StepOutcome:
    """Dispatch hour ``t`` (1..24) of microgrid ``mg`` on a realized day."""
    if not 1 <= t <= HOURS:
        raise grid.DomainError(f"hour {t} outside [1, {HOURS}]")
    n_cg = len(devices.cg)
    if len(action) != action_dim(devices):
        raise ValueError(f"expected {action_dim(devices)} setpoints, got {len(action)}")
    clipped = grid.clip_action(list(action), action_bounds(devices))
    p_cg = tuple(clipped[:n_cg])

    p_ba, next_soc, cost_ba = [], [], 0.0
    for b, p, soc in zip(devices.ba, clipped[n_cg:], state.soc):
        soc_next, applied = grid.soc_step(soc, p, b)
        cost_ba += grid.ba_cost(applied, soc, b)
        p_ba.append(applied)
        next_soc.append(soc_next)
    cost_cg = sum(grid.cg_cost(p, g) for p, g in zip(p_cg, devices.cg))

    h = t - 1
    regs = day.reg[: devices.n_reg, h]
    load = float(day.load[mg, h])
    price = float(day.price_dpn[h])
    p_loss = grid.power_loss(p_cg, regs, p_ba, loss)
    deviation = load - (sum(p_cg) + float(regs.sum()) + sum(p_ba) - p_loss)
    cost_term, dev_term = reward_terms(cost_cg, cost_ba, deviation, price, weights)

    nxt = MgState(
        prev_load=load,
        prev_reg=tuple(float(r) for r in regs),
        soc=tuple(next_soc),
        prev_price=price,
        hour_index=t % HOURS,
    )
    return StepOutcome(
        next_state=nxt,
        reward=cost_term + dev_term,
        deviation=deviation,
        cost_cg=cost_cg,
        cost_ba=cost_ba,
        loss=p_loss,
        p_cg=p_cg,
        p_ba=tuple(p_ba),
        reg=float(regs.sum()),
        load=load,
        price=price,
        hour=t,
        done=t == HOURS,
    )


class MicrogridEnv:
    """One microgrid's episode driver. Single owner; not thread-safe."""

    def __init__(
        self,
        devices: MgDevices,
        scenario: ScenarioDay,
        mg: int,
        loss: LossCoefficients = LossCoefficients(),
        weights: RewardWeights = RewardWeights(),
        noise: NoiseModel = NoiseModel(),
        initial_soc: float = 0.5,
        obs_scale: ObsScale = ObsScale(),
    ):
        if not 0 <= mg < scenario.n_mg:
            raise IndexError(f"microgrid {mg} not in scenario with {scenario.n_mg} MGs")
        self.devices = devices
        self.scenario = scenario
        self.mg = mg
        self.loss = loss
        self.weights = weights
        self.noise = noise
        self.initial_soc = initial_soc
        self.obs_scale = obs_scale
        self.day = scenario
        self.t = 0
        self.state: MgState | None = None

    @classmethod
    def from_config(cls, cfg: MmgConfig, scenario: ScenarioDay, mg: int) -> "MicrogridEnv":
        return cls(
            cfg.devices[mg],
            scenario,
            mg,
            loss=cfg.loss,
            weights=cfg.reward,
            noise=cfg.noise,
            initial_soc=cfg.initial_soc,
            obs_scale=cfg.obs,
        )

    @property
    def obs_dim(self) -> int:
        return obs_dim(self.devices)

    @property
    def action_dim(self) -> int:
        return action_dim(self.devices)

    def reset(self, seed=None) -> MgState:
        """Start a new day. ``seed=None`` uses the forecast itself (no noise)."""
        self.day = self.scenario if seed is None else sample_realization(self.scenario, self.noise, seed)
        last = HOURS - 1
        n_reg = self.devices.n_reg
        self.state = MgState(
            prev_load=float(self.day.load[self.mg, last]),
            prev_reg=tuple(float(r) for r in self.day.reg[:n_reg, last]),
            soc=tuple(self.initial_soc for _ in self.devices.ba),
            prev_price=float(self.day.price_dpn[last]),
            hour_index=0,
        )
        self.t = 0
        return self.state

    def step(self, action: Sequence[float]) -> StepOutcome:
        if self.state is None or self.t >= HOURS:
            raise RuntimeError("call reset() before stepping a finished episode")
        self.t += 1
        out = transition(self.state, action, self.t, self.devices, self.day, self.mg, self.loss, self.weights)
        self.state = out.next_state
        return out

    def observe(self, state: MgState) -> np.ndarray:
        return state.observation(self.obs_scale)

    def step_unit(self, unit_action: Sequence[float]) -> StepOutcome:
        """Step with an action expressed in [-1, 1] per dimension."""
        return self.step(scale_action(unit_action, self.devices))


def run_episode(
    policy: Callable[[MgState], Sequence[float]],
    env: MicrogridEnv,
    seed=None,
) -> tuple[list[Transition], float, list[StepOutcome]]:
    """Roll out one day with ``policy`` mapping a state to kW setpoints."""
    state = env.reset(seed)
    transitions, outcomes = [], []
    for _ in range(HOURS):
        action = tuple(float(a) for a in policy(state))
        out = env.step(action)
        transitions.append(Transition(state, action, out.reward, out.next_state))
        outcomes.append(out)
        state = out.next_state
    return transitions, float(sum(o.reward for o in outcomes)), outcomes


TRACE_COLUMNS = ("hour", "p_cg", "p_ba", "reg", "load", "loss", "deviation", "cost_cg", "cost_ba", "reward")


def write_trace(outcomes: Sequence[StepOutcome], path, header_comment: str | None = None) -> None:
    with open(path, "w", newline="") as fh:
        if header_comment:
            fh.write(f"# {header_comment}\n")
        w = csv.writer(fh)
        w.writerow(TRACE_COLUMNS)
        for o in outcomes:
            w.writerow(
                [o.hour, repr(sum(o.p_cg)), repr(sum(o.p_ba)), repr(o.reg), repr(o.load),
                 repr(o.loss), repr(o.deviation), repr(o.cost_cg), repr(o.cost_ba), repr(o.reward)]
            )
