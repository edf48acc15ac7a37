"""Federated vs local-only comparison used by the reproduction script and the acceptance suite."""

from __future__ import annotations

import time
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .config import MmgConfig
from .evaluation import MODES, mode_scenario, test_reward
from .federation import TrainingResult, agent_spec_for, run_training
from .scenario import ScenarioDay


@dataclass(frozen=True)
class RoundTrend:
    """Round-1 and last-round mean evaluation reward of every agent for one seed."""

    seed: int
    first: tuple[float, ...]
    last: tuple[float, ...]

    @property
    def improved(self) -> tuple[bool, ...]:
        return tuple(b >= a for a, b in zip(self.first, self.last))


@dataclass(frozen=True)
class DeviationTrend:
    seed: int
    mg: int  # 0-based
    first: float
    last: float

    @property
    def ratio(self) -> float:
        return self.last / self.first


@dataclass
class Comparison:
    seeds: list[int]
    federated: dict[int, TrainingResult] = field(default_factory=dict)
    local: dict[int, TrainingResult] = field(default_factory=dict)
    # test_rewards[mode][label] -> array (seeds, mgs)
    test_rewards: dict[str, dict[str, np.ndarray]] = field(default_factory=dict)
    seconds: float = 0.0

    def round_trends(self) -> list[RoundTrend]:
        out = []
        for s in self.seeds:
            reps = self.federated[s].reports
            out.append(RoundTrend(s, reps[0].round_eval_mean, reps[-1].round_eval_mean))
        return out

    def deviation_trends(self, mgs: Sequence[int]) -> list[DeviationTrend]:
        out = []
        for s in self.seeds:
            hist = self.federated[s].histories
            for j in mgs:
                out.append(DeviationTrend(s, j, hist[j][0].mean_abs_dev, hist[j][-1].mean_abs_dev))
        return out

    def mean_test_reward(self, mode: str) -> tuple[np.ndarray, np.ndarray]:
        t = self.test_rewards[mode]
        return t["federated"].mean(axis=0), t["local-only"].mean(axis=0)

    def federated_wins(self, mode: str) -> int:
        fed, loc = self.mean_test_reward(mode)
        return int(np.sum(fed >= loc))


def compare(
    cfg: MmgConfig,
    scenario: ScenarioDay,
    seeds: Sequence[int],
    n_noisy: int | None = None,
    progress: Callable[[str], None] | None = None,
) -> Comparison:
    """Train both variants for every seed, then score the final agents in both capacity modes."""
    t0 = time.time()
    cmp = Comparison(list(seeds))
    spec = agent_spec_for(cfg, scenario)
    for s in seeds:
        for local, bucket in ((False, cmp.federated), (True, cmp.local)):
            t = time.time()
            bucket[s] = run_training(cfg, scenario, s, local_only=local)
            if progress:
                progress(f"seed {s} {'local-only' if local else 'federated'}: {time.time() - t:.0f} s")
    for mode in MODES:
        sc = mode_scenario(cfg, scenario, mode)
        cmp.test_rewards[mode] = {}
        for label, bucket in (("federated", cmp.federated), ("local-only", cmp.local)):
            cmp.test_rewards[mode][label] = np.array([
                [test_reward(v, spec, cfg, sc, j, n_noisy) for j, v in enumerate(bucket[s].final_vectors)]
                for s in seeds
            ])
    cmp.seconds = time.time() - t0
    return cmp
