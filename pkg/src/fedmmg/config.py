"""Run configuration: device data, reward weights, PPO and federation settings.

Configs are plain dataclasses. A YAML document can override any field;
see ``configs/default.yaml`` for a commented example.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from pathlib import Path

import yaml

from .grid import BaParams, CgParams, LossCoefficients
from .scenario import MgDevices, NoiseModel, default_device_params


@dataclass(frozen=True)
class RewardWeights:
    w_cost: float = 1.0
    w_dev: float = 1.0


@dataclass(frozen=True)
class ObsScale:
    """Divisors applied to raw observations before they reach the networks."""

    power: float = 600.0
    price: float = 30.0
    hours: float = 24.0


@dataclass(frozen=True)
class PpoHyper:
    gamma: float = 0.99
    gae_lambda: float = 0.95
    clip_eps: float = 0.2
    lr_actor: float = 1e-4
    lr_critic: float = 1e-3
    epochs_per_update: int = 8
    minibatches: int = 4
    episodes_per_epoch: int = 4
    hidden: tuple[int, ...] = (64, 64)
    log_std_init: float = -0.6931471805599453  # ln 0.5
    log_std_min: float = -4.605170185988091  # ln 0.01
    log_std_max: float = 0.0
    normalize_advantages: bool = True
    faithful_critic: bool = False
    # "td": one-step bootstrap target; "gae": advantage + value (lambda-return)
    critic_target: str = "gae"
    # rewards are multiplied by this before they reach the learner
    reward_scale: float = 1e-4

    def __post_init__(self):
        if not (0 <= self.gamma <= 1 and 0 <= self.gae_lambda <= 1):
            raise ValueError("gamma and gae_lambda must lie in [0, 1]")
        if self.clip_eps <= 0:
            raise ValueError("clip_eps must be positive")
        if self.critic_target not in ("td", "gae"):
            raise ValueError(f"unknown critic_target {self.critic_target!r}")
        if self.minibatches < 1:
            raise ValueError("minibatches must be >= 1")
        if self.episodes_per_epoch < 1 or self.epochs_per_update < 0:
            raise ValueError("episodes_per_epoch >= 1 and epochs_per_update >= 0 required")


@dataclass(frozen=True)
class FedSchedule:
    total_epochs: int = 1500
    local_epochs: int = 500
    weighting: str = "uniform"  # or "data"
    federated: bool = True

    def __post_init__(self):
        if self.local_epochs < 1:
            raise ValueError("local_epochs must be >= 1")
        if self.total_epochs < self.local_epochs:
            raise ValueError("total_epochs must be >= local_epochs")
        if self.weighting not in ("uniform", "data"):
            raise ValueError(f"unknown weighting {self.weighting!r}")

    @property
    def n_rounds(self) -> int:
        return -(-self.total_epochs // self.local_epochs)

    def epochs_in_round(self, r: int) -> int:
        """Local epochs in 1-based round ``r``; the last round may be partial."""
        return min(self.local_epochs, self.total_epochs - (r - 1) * self.local_epochs)


@dataclass(frozen=True)
class MmgConfig:
    devices: tuple[MgDevices, ...] = field(default_factory=lambda: tuple(default_device_params()))
    loss: LossCoefficients = LossCoefficients()
    reward: RewardWeights = RewardWeights()
    noise: NoiseModel = NoiseModel()
    obs: ObsScale = ObsScale()
    ppo: PpoHyper = PpoHyper()
    schedule: FedSchedule = FedSchedule()
    initial_soc: float = 0.5
    eval_noisy_episodes: int = 4

    @property
    def n_mg(self) -> int:
        return len(self.devices)


def _merge(obj, overrides: dict):
    """Return a copy of dataclass ``obj`` with nested ``overrides`` applied."""
    changes = {}
    known = {f.name: f for f in dataclasses.fields(obj)}
    for key, val in overrides.items():
        if key not in known:
            raise KeyError(f"unknown config key {key!r} for {type(obj).__name__}")
        cur = getattr(obj, key)
        if dataclasses.is_dataclass(cur) and isinstance(val, dict):
            changes[key] = _merge(cur, val)
        elif isinstance(cur, tuple) and isinstance(val, list) and key == "hidden":
            changes[key] = tuple(int(v) for v in val)
        else:
            changes[key] = val
    return dataclasses.replace(obj, **changes)


def _devices_from(spec: list[dict]) -> tuple[MgDevices, ...]:
    out = []
    for mg in spec:
        battery_extra = mg.get("battery", {})
        cgs = tuple(CgParams(**g) for g in mg["cg"])
        bas = tuple(BaParams(**{**b, **battery_extra}) for b in mg["ba"])
        out.append(MgDevices(cg=cgs, ba=bas, n_reg=mg.get("n_reg", 2)))
    return tuple(out)


def config_from_dict(doc: dict | None) -> MmgConfig:
    doc = dict(doc or {})
    base = MmgConfig()
    devices = doc.pop("devices", None)
    battery = doc.pop("battery", None)
    if devices is not None:
        base = dataclasses.replace(base, devices=_devices_from(devices))
    if battery:
        base = dataclasses.replace(
            base,
            devices=tuple(
                dataclasses.replace(d, ba=tuple(dataclasses.replace(b, **battery) for b in d.ba))
                for d in base.devices
            ),
        )
    return _merge(base, doc)


def load_config(path) -> MmgConfig:
    with open(Path(path)) as fh:
        return config_from_dict(yaml.safe_load(fh))


def config_to_dict(cfg: MmgConfig) -> dict:
    d = dataclasses.asdict(cfg)
    d["ppo"]["hidden"] = list(cfg.ppo.hidden)
    return d
