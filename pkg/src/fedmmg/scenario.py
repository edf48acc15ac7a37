"""Day-ahead scenario data: forecasts, prices and device parameters.

The bundled data set is the three-microgrid case: one wind and one PV
series shared by all microgrids, a load series per microgrid, and two
price series (distribution network and inter-microgrid).
"""

from __future__ import annotations

import csv
from functools import cached_property
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from .grid import BaParams, CgParams

HOURS = 24

# Hourly rows exactly as tabulated: wind, pv, price_dpn, price_mg, load_mg1..3
_TABLE_II = {
    "wind": "51.48 38.37 43.56 40.75 27.74 30.15 28.65 23.38 21.75 34.82 27.17 30.20 "
    "23.52 39.48 35.74 18.06 24.27 26.26 26.77 26.22 32.84 36.02 37.23 44.12",
    "pv": "0.00 0.00 0.00 0.00 0.00 0.00 0.16 1.77 5.30 11.60 36.64 42.68 "
    "35.22 35.46 34.83 23.62 14.18 4.67 0.18 0.00 0.00 0.00 0.00 0.00",
    "price_dpn": "8.65 8.11 8.25 8.10 8.14 8.13 8.34 9.35 12.00 9.19 12.30 20.70 "
    "26.82 27.35 13.81 17.31 16.42 9.83 8.63 8.87 8.35 16.44 16.19 8.87",
    "price_mg": "4.33 4.06 4.13 4.05 4.07 4.07 4.17 4.68 6.00 4.60 6.15 10.35 "
    "13.41 13.68 6.91 8.66 8.21 4.92 4.32 4.44 4.18 8.22 8.10 4.44",
    "load_mg1": "457.70 336.50 274.90 272.60 245.30 233.70 274.60 291.00 315.70 362.40 320.00 350.00 "
    "345.20 320.60 333.20 316.80 291.30 413.80 539.80 557.20 557.10 535.00 437.80 447.30",
    "load_mg2": "110.50 109.85 112.45 110.50 113.75 120.25 130.00 157.95 165.10 169.00 173.55 168.35 "
    "168.35 165.75 170.30 172.25 165.75 164.25 162.50 165.75 169.00 161.20 148.00 119.60",
    "load_mg3": "124.71 123.98 126.91 124.71 128.38 135.43 146.72 178.26 186.33 190.73 195.87 190.00 "
    "190.00 187.07 192.20 194.40 187.07 185.60 183.40 187.07 190.73 181.93 161.39 134.98",
}

# (a, b, c, p_min, p_max) per device, as tabulated
_TABLE_I = {
    "MG1": {"CG": "0.0081 5.72 63 0 200", "BA": "0.0153 5.54 26 -50 50"},
    "MG2": {"CG": "0.0076 5.68 365 0 280", "BA": "0.0163 5.64 32 -50 50"},
    "MG3": {"CG": "0.0095 5.81 108 0 200", "BA": "0.0173 5.74 38 -50 50"},
}


def table_i_literals() -> dict[str, dict[str, list[str]]]:
    return {mg: {dev: row.split() for dev, row in devs.items()} for mg, devs in _TABLE_I.items()}


def table_ii_literals() -> dict[str, list[str]]:
    return {k: v.split() for k, v in _TABLE_II.items()}


class ScenarioError(ValueError):
    """A scenario file or object violates the data contract."""

    def __init__(self, message: str, row: int | None = None, column: str | None = None):
        where = []
        if row is not None:
            where.append(f"row {row}")
        if column is not None:
            where.append(f"column {column!r}")
        super().__init__(f"{message} ({', '.join(where)})" if where else message)
        self.row = row
        self.column = column


@dataclass(frozen=True)
class ScenarioDay:
    """24 hourly values per series. ``load`` has shape (n_mg, 24)."""

    wind: np.ndarray
    pv: np.ndarray
    load: np.ndarray
    price_dpn: np.ndarray
    price_mg: np.ndarray

    def __post_init__(self):
        for name in ("wind", "pv", "price_dpn", "price_mg"):
            arr = np.asarray(getattr(self, name), dtype=float)
            if arr.shape != (HOURS,):
                raise ScenarioError(f"{name} must have {HOURS} values, got {arr.size}", column=name)
            object.__setattr__(self, name, arr)
        load = np.atleast_2d(np.asarray(self.load, dtype=float))
        if load.shape[1] != HOURS:
            raise ScenarioError(f"load series must have {HOURS} values, got {load.shape[1]}")
        object.__setattr__(self, "load", load)
        self.validate()

    @property
    def n_mg(self) -> int:
        return self.load.shape[0]

    @cached_property
    def reg(self) -> np.ndarray:
        """Renewable outputs, shape (2, 24): wind then PV."""
        return np.stack([self.wind, self.pv])

    def validate(self) -> None:
        series = {"wind": self.wind, "pv": self.pv}
        series.update({f"load_mg{i + 1}": self.load[i] for i in range(self.n_mg)})
        for name, arr in series.items():
            bad = np.flatnonzero(~(arr >= 0))
            if bad.size:
                raise ScenarioError("negative or non-finite power", row=int(bad[0]) + 1, column=name)
        bad = np.flatnonzero(self.price_mg > self.price_dpn)
        if bad.size:
            h = int(bad[0]) + 1
            raise ScenarioError(f"inter-MG price exceeds distribution price at hour {h}", row=h, column="price_mg")
        bad = np.flatnonzero(~(self.price_dpn > 0) | ~(self.price_mg > 0))
        if bad.size:
            raise ScenarioError("prices must be positive", row=int(bad[0]) + 1)

    def columns(self) -> dict[str, np.ndarray]:
        cols = {"wind": self.wind, "pv": self.pv, "price_dpn": self.price_dpn, "price_mg": self.price_mg}
        cols.update({f"load_mg{i + 1}": self.load[i] for i in range(self.n_mg)})
        return cols

    def with_load(self, mg: int, series: np.ndarray) -> "ScenarioDay":
        load = self.load.copy()
        load[mg] = series
        return replace(self, load=load)


@dataclass(frozen=True)
class NoiseModel:
    """Relative Gaussian forecast errors."""

    wind_pv_std: float = 0.15
    load_std: float = 0.03

    def __post_init__(self):
        if self.wind_pv_std < 0 or self.load_std < 0:
            raise ValueError("noise std must be nonnegative")


@dataclass(frozen=True)
class MgDevices:
    cg: tuple[CgParams, ...]
    ba: tuple[BaParams, ...]
    n_reg: int = 2

    @property
    def capacity(self) -> float:
        """Maximum dispatchable output in kW."""
        return sum(g.p_max for g in self.cg) + sum(b.p_max for b in self.ba)


def default_scenario() -> ScenarioDay:
    t = {k: np.array([float(x) for x in v]) for k, v in table_ii_literals().items()}
    return ScenarioDay(
        wind=t["wind"],
        pv=t["pv"],
        load=np.stack([t["load_mg1"], t["load_mg2"], t["load_mg3"]]),
        price_dpn=t["price_dpn"],
        price_mg=t["price_mg"],
    )


def default_device_params(**battery_overrides) -> list[MgDevices]:
    """One CG and one battery per microgrid; battery extras default to lab-scale values."""
    out = []
    for devs in table_i_literals().values():
        cg = [float(x) for x in devs["CG"]]
        ba = [float(x) for x in devs["BA"]]
        out.append(MgDevices(cg=(CgParams(*cg),), ba=(BaParams(*ba, **battery_overrides),)))
    return out


def sample_realization(day: ScenarioDay, noise: NoiseModel, seed) -> ScenarioDay:
    """Draw one realized day: x -> max(0, x * (1 + eps)), eps ~ N(0, std^2).

    ``seed`` is anything accepted by ``numpy.random.default_rng``. Wind and
    PV draws are shared by every microgrid.
    """
    rng = np.random.default_rng(seed)
    eps_reg = rng.standard_normal((2, HOURS))
    eps_load = rng.standard_normal(day.load.shape)
    wind = np.maximum(day.wind * (1.0 + noise.wind_pv_std * eps_reg[0]), 0.0)
    pv = np.maximum(day.pv * (1.0 + noise.wind_pv_std * eps_reg[1]), 0.0)
    load = np.maximum(day.load * (1.0 + noise.load_std * eps_load), 0.0)
    return replace(day, wind=wind, pv=pv, load=load)


def save_scenario(day: ScenarioDay, path) -> None:
    cols = day.columns()
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["hour", *cols])
        for h in range(HOURS):
            w.writerow([h + 1, *(repr(float(c[h])) for c in cols.values())])


def load_scenario(path) -> ScenarioDay:
    """Read a scenario CSV written by :func:`save_scenario` or by hand."""
    path = Path(path)
    if not path.exists():
        raise ScenarioError(f"scenario file not found: {path}")
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    rows = [r for r in rows if r and not r[0].startswith("#")]
    if not rows:
        raise ScenarioError(f"empty scenario file: {path}")
    header, body = [h.strip() for h in rows[0]], rows[1:]
    required = ["wind", "pv", "price_dpn", "price_mg"]
    for name in required:
        if name not in header:
            raise ScenarioError(f"missing column {name!r}", row=1, column=name)
    load_cols = sorted((h for h in header if h.startswith("load_mg")), key=lambda h: int(h[7:]))
    if not load_cols:
        raise ScenarioError("no load_mg<i> columns", row=1)
    if len(body) != HOURS:
        raise ScenarioError(f"expected {HOURS} data rows, found {len(body)}")
    data = {h: np.empty(HOURS) for h in required + load_cols}
    for i, row in enumerate(body):
        if len(row) != len(header):
            raise ScenarioError(f"expected {len(header)} fields, found {len(row)}", row=i + 1)
        for h in data:
            cell = row[header.index(h)]
            try:
                data[h][i] = float(cell)
            except ValueError:
                raise ScenarioError(f"not a number: {cell!r}", row=i + 1, column=h) from None
    return ScenarioDay(
        wind=data["wind"],
        pv=data["pv"],
        load=np.stack([data[h] for h in load_cols]),
        price_dpn=data["price_dpn"],
        price_mg=data["price_mg"],
    )


def capacity_scaled_load(day: ScenarioDay, devices: list[MgDevices], factor: float) -> ScenarioDay:
    """Rescale every load series so its peak equals ``factor`` times the MG's capacity.

    Capacity is the dispatchable maximum plus the peak renewable output.
    ``factor > 1`` gives an energy self-insufficient day, ``factor < 1`` a
    self-sufficient one.
    """
    peak_reg = float((day.wind + day.pv).max())
    load = day.load.copy()
    for i, dev in enumerate(devices):
        target = factor * (dev.capacity + peak_reg)
        load[i] = load[i] * (target / load[i].max())
    return replace(day, load=load)
