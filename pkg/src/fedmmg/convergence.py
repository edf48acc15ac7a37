"""Linear-rate checks for gradient descent on strongly convex quadratics.

For ``F(w) = 1/2 w'Aw + b'w`` with the spectrum of ``A`` inside
``[mu, L]``, gradient descent with step ``1/L`` must satisfy

    F(w_k) - F* <= (1 - mu/L)^k (F(w_0) - F*)

and every iterate must sit inside the sandwich

    |grad F(w)|^2 / (2 mu) >= F(w) - F* >= mu/2 |w - w*|^2.

Optimality gaps are computed as ``1/2 (w-w*)'A(w-w*)`` rather than by
subtracting two function values, which keeps them accurate near the optimum.
Once a run reaches the roundoff floor the gap stops shrinking, so the rate is
only checked against bounds above that floor.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

TOL = 1e-9


@dataclass(frozen=True)
class QuadraticObjective:
    A: np.ndarray
    b: np.ndarray
    mu: float
    L: float

    def __post_init__(self):
        if not 0 < self.mu <= self.L:
            raise ValueError(f"need 0 < mu <= L, got mu={self.mu}, L={self.L}")

    @property
    def dim(self) -> int:
        return self.b.size

    def value(self, w) -> float:
        w = np.asarray(w, dtype=float)
        return float(0.5 * w @ self.A @ w + self.b @ w)

    def grad(self, w) -> np.ndarray:
        return self.A @ np.asarray(w, dtype=float) + self.b

    @property
    def w_star(self) -> np.ndarray:
        return -np.linalg.solve(self.A, self.b)

    @property
    def f_star(self) -> float:
        return self.value(self.w_star)

    def gap(self, w) -> float:
        d = np.asarray(w, dtype=float) - self.w_star
        return float(0.5 * d @ self.A @ d)


def make_objective(dim: int, mu: float, L: float, seed) -> QuadraticObjective:
    """Random rotation of a diagonal spectrum that includes both ``mu`` and ``L``."""
    if mu > L:
        raise ValueError(f"mu={mu} exceeds L={L}")
    if mu <= 0 or dim < 1:
        raise ValueError("need mu > 0 and dim >= 1")
    rng = np.random.default_rng(seed)
    if dim == 1:
        eig = np.array([mu])
    else:
        eig = np.concatenate([[mu, L], rng.uniform(mu, L, dim - 2)])
    q, r = np.linalg.qr(rng.standard_normal((dim, dim)))
    q = q * np.sign(np.diag(r))
    A = (q * eig) @ q.T
    A = 0.5 * (A + A.T)
    return QuadraticObjective(A, rng.standard_normal(dim), float(mu), float(L))


def gradient_descent(obj: QuadraticObjective, w0, k_max: int, eta: float | None = None) -> np.ndarray:
    """Iterates ``w_0 .. w_kmax`` of ``w <- w - eta * grad F(w)``, default ``eta = 1/L``."""
    eta = 1.0 / obj.L if eta is None else eta
    ws = np.empty((k_max + 1, obj.dim))
    ws[0] = w0
    for k in range(k_max):
        ws[k + 1] = ws[k] - eta * obj.grad(ws[k])
        if not np.all(np.isfinite(ws[k + 1])):
            raise ArithmeticError(f"non-finite iterate at step {k + 1}")
    return ws


@dataclass(frozen=True)
class BoundReport:
    max_ratio: float
    sandwich_ok: bool
    descent_ok: bool
    gaps: np.ndarray
    iterations_to_eps: int | None
    iteration_bound: int | None

    @property
    def passed(self) -> bool:
        return self.max_ratio <= 1.0 + TOL and self.sandwich_ok and self.descent_ok


def _leq(a: float, b: float) -> bool:
    return a <= b + TOL * max(1.0, abs(a), abs(b))


def check_linear_rate(obj: QuadraticObjective, w0, k_max: int, eps: float = 1e-6) -> BoundReport:
    if k_max < 1:
        raise ValueError("k_max must be >= 1")
    ws = gradient_descent(obj, w0, k_max)
    gaps = np.array([obj.gap(w) for w in ws])
    rho = 1.0 - obj.mu / obj.L
    w_star = obj.w_star
    # gap produced by a few ulps of error in w; the bound is not checked below it
    floor = 0.5 * obj.L * (obj.dim * np.finfo(float).eps * max(1.0, float(np.abs(ws).max()))) ** 2
    ratio = 0.0
    for k, g in enumerate(gaps):
        ratio = max(ratio, g / max(rho**k * gaps[0], floor))
    sandwich = True
    descent = True
    for k, w in enumerate(ws):
        g2 = float(np.sum(obj.grad(w) ** 2))
        d2 = float(np.sum((w - w_star) ** 2))
        sandwich &= _leq(gaps[k], g2 / (2 * obj.mu)) and _leq(obj.mu / 2 * d2, gaps[k])
        if k < k_max:
            descent &= _leq(obj.value(ws[k + 1]), obj.value(w) - g2 / (2 * obj.L))
    hit = np.flatnonzero(gaps <= eps)
    n_eps = int(hit[0]) if hit.size else None
    n_bound = math.ceil(obj.L / obj.mu * math.log(gaps[0] / eps)) if gaps[0] > eps else 0
    return BoundReport(float(ratio), bool(sandwich), bool(descent), gaps, n_eps, n_bound)


def weighted_objective(objectives: Sequence[QuadraticObjective], weights: Sequence[float]) -> QuadraticObjective:
    A = sum(p * o.A for p, o in zip(weights, objectives))
    b = sum(p * o.b for p, o in zip(weights, objectives))
    eig = np.linalg.eigvalsh(A)
    return QuadraticObjective(A, b, float(eig[0]), float(eig[-1]))


@dataclass(frozen=True)
class ConsistencyReport:
    residual: float
    fedavg: np.ndarray
    centralized: np.ndarray

    @property
    def passed(self) -> bool:
        return self.residual < 1e-10


def check_federated_consistency(
    objectives: Sequence[QuadraticObjective],
    weights: Sequence[float],
    w0=None,
    eta: float | None = None,
) -> ConsistencyReport:
    """One local gradient step per client from ``w0`` then averaging, versus one step on ``sum p_j F_j``."""
    dims = {o.dim for o in objectives}
    if len(dims) != 1:
        raise ValueError("objectives must share a dimension")
    dim = dims.pop()
    w0 = np.zeros(dim) if w0 is None else np.asarray(w0, dtype=float)
    eta = 1.0 / max(o.L for o in objectives) if eta is None else eta
    local = [w0 - eta * o.grad(w0) for o in objectives]
    fed = sum(p * w for p, w in zip(weights, local))
    cen = w0 - eta * weighted_objective(objectives, weights).grad(w0)
    return ConsistencyReport(float(np.max(np.abs(fed - cen))), fed, cen)


def multi_step_drift(
    objectives: Sequence[QuadraticObjective],
    weights: Sequence[float],
    local_steps: int,
    rounds: int,
    w0=None,
    eta: float | None = None,
) -> np.ndarray:
    """Distance per round between FedAvg with several local steps and centralized GD.

    Reported only: with heterogeneous clients and ``local_steps > 1`` the two
    trajectories genuinely differ.
    """
    dim = objectives[0].dim
    w_fed = np.zeros(dim) if w0 is None else np.asarray(w0, dtype=float)
    eta = 1.0 / max(o.L for o in objectives) if eta is None else eta
    central = weighted_objective(objectives, weights)
    w_cen = w_fed.copy()
    drift = []
    for _ in range(rounds):
        locals_ = []
        for o in objectives:
            w = w_fed.copy()
            for _ in range(local_steps):
                w = w - eta * o.grad(w)
            locals_.append(w)
        w_fed = sum(p * w for p, w in zip(weights, locals_))
        for _ in range(local_steps):
            w_cen = w_cen - eta * central.grad(w_cen)
        drift.append(float(np.linalg.norm(w_fed - w_cen)))
    return np.array(drift)


@dataclass(frozen=True)
class SeedRow:
    seed: int
    max_ratio: float
    sandwich_ok: bool
    descent_ok: bool
    iterations_to_eps: int | None
    iteration_bound: int | None

    @property
    def passed(self) -> bool:
        return self.max_ratio <= 1.0 + TOL and self.sandwich_ok and self.descent_ok


def run_suite(seeds: Sequence[int], dim: int = 10, mu: float = 1.0, L: float = 10.0, k_max: int = 200) -> list[SeedRow]:
    rows = []
    for s in seeds:
        obj = make_objective(dim, mu, L, s)
        w0 = np.random.default_rng([s, 1]).standard_normal(dim) * 10.0
        rep = check_linear_rate(obj, w0, k_max)
        rows.append(SeedRow(s, rep.max_ratio, rep.sandwich_ok, rep.descent_ok, rep.iterations_to_eps, rep.iteration_bound))
    return rows


def write_suite(rows: Sequence[SeedRow], path, header_comment: str | None = None) -> None:
    with open(path, "w", newline="") as fh:
        if header_comment:
            fh.write(f"# {header_comment}\n")
        w = csv.writer(fh)
        w.writerow(("seed", "max_ratio", "sandwich", "descent", "iterations_to_eps", "iteration_bound", "result"))
        for r in rows:
            w.writerow((r.seed, repr(r.max_ratio), int(r.sandwich_ok), int(r.descent_ok), r.iterations_to_eps,
                        r.iteration_bound, "PASS" if r.passed else "FAIL"))
