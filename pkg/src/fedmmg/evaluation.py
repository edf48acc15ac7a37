"""Test rewards of trained agents under the two demand regimes."""

from __future__ import annotations

from typing import Sequence

from .config import MmgConfig
from .env import MicrogridEnv
from .mlp import AgentSpec, IntegrityError, ParamVector
from .ppo import Agent, evaluate
from .scenario import ScenarioDay, capacity_scaled_load

MODES = {"self-insufficient": 1.3, "self-sufficient": 0.7}
NOISY_SEED_BASE = 10_000


def noisy_seeds(n: int) -> list[int]:
    return [NOISY_SEED_BASE + k for k in range(1, n + 1)]


def mode_scenario(cfg: MmgConfig, scenario: ScenarioDay, mode: str) -> ScenarioDay:
    """``"training"`` returns the scenario unchanged; the other modes rescale loads to a capacity share."""
    if mode == "training":
        return scenario
    if mode not in MODES:
        raise ValueError(f"unknown mode {mode!r}; choose from training, {', '.join(MODES)}")
    return capacity_scaled_load(scenario, list(cfg.devices), MODES[mode])


def test_reward(
    vec: ParamVector,
    spec: AgentSpec,
    cfg: MmgConfig,
    scenario: ScenarioDay,
    mg: int,
    n_noisy: int | None = None,
) -> float:
    """Mean deterministic-policy reward over the noise-free day and ``n_noisy`` fixed noisy days."""
    if vec.spec_hash != spec.spec_hash:
        raise IntegrityError(f"checkpoint hash {vec.spec_hash} does not match {spec.spec_hash}")
    agent = Agent(spec, cfg.ppo)
    agent.load(vec)
    env = MicrogridEnv.from_config(cfg, scenario, mg)
    n = cfg.eval_noisy_episodes if n_noisy is None else n_noisy
    seeds: Sequence = [None, *noisy_seeds(n)]
    return evaluate(agent, env, seeds)[0]
