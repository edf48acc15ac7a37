"""Inter-microgrid settlement of hourly imbalances.

Balances are net surplus per microgrid (generation minus load after
losses, i.e. ``-P_de``): negative means the microgrid is short. Each short
microgrid buys, in index order, from the cheapest microgrid that still has
surplus; whatever cannot be covered comes from the distribution network.
Surplus nobody buys is exported to the network at the seller's own price.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from typing import Sequence, Union

GRID = "grid"
Party = Union[int, str]


@dataclass(frozen=True)
class Trade:
    buyer: Party
    seller: Party
    kw: float
    price: float

    @property
    def cost(self) -> float:
        return self.kw * self.price


@dataclass
class SettlementResult:
    trades: list[Trade] = field(default_factory=list)
    residual_from_grid: list[float] = field(default_factory=list)
    exported: list[float] = field(default_factory=list)
    system_reward: float = 0.0

    def bought(self, mg: int) -> float:
        return sum(t.kw for t in self.trades if t.buyer == mg)

    def sold(self, mg: int) -> float:
        return sum(t.kw for t in self.trades if t.seller == mg and t.buyer != GRID)


def system_reward(per_mg_rewards: Sequence[float]) -> float:
    return float(sum(per_mg_rewards))


def settle(
    deviations: Sequence[float],
    price_mg: Sequence[float],
    price_dpn: float,
    per_mg_rewards: Sequence[float] | None = None,
) -> SettlementResult:
    """Greedy cheapest-seller matching for one hour.

    ``price_mg[l]`` is the price at which microgrid ``l`` sells surplus.
    Ties between equally cheap sellers go to the lowest index.
    """
    n = len(deviations)
    if len(price_mg) != n:
        raise ValueError(f"{n} deviations but {len(price_mg)} prices")
    if per_mg_rewards is not None and len(per_mg_rewards) != n:
        raise ValueError(f"{n} deviations but {len(per_mg_rewards)} rewards")
    if price_dpn <= 0 or any(p <= 0 for p in price_mg):
        raise ValueError("prices must be positive")

    surplus = [max(float(d), 0.0) for d in deviations]
    result = SettlementResult(residual_from_grid=[0.0] * n, exported=[0.0] * n)
    for buyer in range(n):
        need = max(-float(deviations[buyer]), 0.0)
        while need > 0:
            sellers = [l for l in range(n) if surplus[l] > 0]
            if not sellers:
                break
            j = min(sellers, key=lambda l: (price_mg[l], l))
            qty = min(need, surplus[j])
            result.trades.append(Trade(buyer, j, qty, float(price_mg[j])))
            surplus[j] -= qty
            need -= qty
        if need > 0:
            result.trades.append(Trade(buyer, GRID, need, float(price_dpn)))
            result.residual_from_grid[buyer] = need
    for l in range(n):
        if surplus[l] > 0:
            result.trades.append(Trade(GRID, l, surplus[l], float(price_mg[l])))
            result.exported[l] = surplus[l]
    if per_mg_rewards is not None:
        result.system_reward = system_reward(per_mg_rewards)
    return result


SETTLEMENT_COLUMNS = ("hour", "buyer", "seller", "kw", "price", "cost")


def _label(p: Party) -> str:
    return p if isinstance(p, str) else f"MG{p + 1}"


def write_settlements(hourly: Sequence[tuple[int, SettlementResult]], path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(SETTLEMENT_COLUMNS)
        for hour, res in hourly:
            for t in res.trades:
                w.writerow([hour, _label(t.buyer), _label(t.seller), repr(t.kw), repr(t.price), repr(t.cost)])
