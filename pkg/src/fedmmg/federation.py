"""FedAvg over microgrid agents.

A server holds the global parameter vector. Each round it broadcasts the
vector, every participant loads it (Adam moments are reset), trains
locally for ``local_epochs`` PPO epochs with its own RNG stream, and
uploads the result. The server waits for all uploads, then averages.

Participants are reached through a *link*: :class:`InProcessLink` runs
them in this process one after another, :class:`TcpLink` talks to remote
(or threaded) participants over the frame protocol in :mod:`fedmmg.wire`.
Since each participant's computation depends only on the broadcast vector
and its own seed, both links produce bitwise-identical trajectories.

Local-only mode skips aggregation: every agent starts from the same
initial vector and keeps training its own parameters and optimizer state.
"""

from __future__ import annotations

import csv
import socket
import threading
import time
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from . import wire
from .config import MmgConfig
from .env import MicrogridEnv
from .mlp import AgentSpec, IntegrityError, ParamVector
from .ppo import Agent, EpochStats, TrainingError, evaluate, local_update
from .scenario import ScenarioDay

DEFAULT_TIMEOUT = 60.0
INIT_STREAM = 2**32 - 1  # agent_id slot used for the initial global vector


class RoundAborted(RuntimeError):
    """A round ended without aggregation (timeout or participant failure)."""

    def __init__(self, round_index: int, reason: str, agent_id: int | None = None):
        who = f" (agent {agent_id})" if agent_id is not None else ""
        super().__init__(f"round {round_index} aborted{who}: {reason}")
        self.round_index = round_index
        self.agent_id = agent_id
        self.reason = reason


@dataclass(frozen=True)
class AggregationWeights:
    p: tuple[float, ...]

    def __post_init__(self):
        p = tuple(float(x) for x in self.p)
        object.__setattr__(self, "p", p)
        if not p:
            raise ValueError("need at least one weight")
        if any(x < 0 or not np.isfinite(x) for x in p):
            raise ValueError(f"weights must be finite and nonnegative, got {p}")
        if abs(sum(p) - 1.0) > 1e-9:
            raise ValueError(f"weights sum to {sum(p)!r}, not 1")

    @classmethod
    def uniform(cls, n: int) -> "AggregationWeights":
        return cls(tuple(1.0 / n for _ in range(n)))

    @classmethod
    def from_counts(cls, counts: Sequence[float]) -> "AggregationWeights":
        total = float(sum(counts))
        if total <= 0:
            raise ValueError("data counts must have a positive sum")
        return cls(tuple(c / total for c in counts))


def aggregate(vectors: Sequence[ParamVector], weights: AggregationWeights) -> ParamVector:
    """Weighted elementwise average ``sum_j p_j w_j``."""
    if not vectors:
        raise ValueError("nothing to aggregate")
    if len(vectors) != len(weights.p):
        raise ValueError(f"{len(vectors)} vectors but {len(weights.p)} weights")
    h, n = vectors[0].spec_hash, len(vectors[0])
    for j, v in enumerate(vectors):
        if v.spec_hash != h:
            raise IntegrityError(f"vector {j} has spec hash {v.spec_hash}, expected {h}")
        if len(v) != n:
            raise IntegrityError(f"vector {j} has length {len(v)}, expected {n}")
    out = np.zeros(n)
    for p, v in zip(weights.p, vectors):
        out += p * v.values
    return ParamVector(out, h)


def broadcast_and_replace(global_vec: ParamVector, agents: Sequence[Agent]) -> None:
    """Load ``global_vec`` into every agent and zero its Adam moments."""
    for a in agents:
        if a.spec.spec_hash != global_vec.spec_hash:
            raise IntegrityError(f"agent spec {a.spec.spec_hash} != global {global_vec.spec_hash}")
    for a in agents:
        a.load(global_vec, reset_optim=True)


def agent_spec_for(cfg: MmgConfig, scenario: ScenarioDay) -> AgentSpec:
    envs = [MicrogridEnv.from_config(cfg, scenario, j) for j in range(cfg.n_mg)]
    specs = {AgentSpec.build(e.obs_dim, e.action_dim, cfg.ppo.hidden) for e in envs}
    if len(specs) != 1:
        raise IntegrityError("microgrids have different observation/action sizes; they cannot share a model")
    return specs.pop()


def initial_vector(spec: AgentSpec, cfg: MmgConfig, seed: int) -> ParamVector:
    return Agent(spec, cfg.ppo, np.random.default_rng([seed, INIT_STREAM, 0])).params()


def round_rng(seed: int, agent_id: int, round_index: int) -> np.random.Generator:
    return np.random.default_rng([seed, agent_id, round_index])


@dataclass(frozen=True)
class Upload:
    round: int
    agent_id: int
    params: ParamVector
    n_transitions: int
    round_eval_mean: float


class Participant:
    """One microgrid learner. Owns its agent, environment and training history."""

    def __init__(self, agent_id: int, cfg: MmgConfig, scenario: ScenarioDay, seed: int):
        self.agent_id = agent_id
        self.cfg = cfg
        self.seed = seed
        self.env = MicrogridEnv.from_config(cfg, scenario, agent_id)
        self.spec = agent_spec_for(cfg, scenario)
        self.agent = Agent(self.spec, cfg.ppo, np.random.default_rng([seed, agent_id, 0]))
        self.history: list[EpochStats] = []

    @property
    def epochs_done(self) -> int:
        return len(self.history)

    def run_round(self, round_index: int, global_vec: ParamVector | None, n_epochs: int) -> Upload:
        """Optionally load ``global_vec``, then train ``n_epochs`` and package the result."""
        if global_vec is not None:
            broadcast_and_replace(global_vec, [self.agent])
        rng = round_rng(self.seed, self.agent_id, round_index)
        try:
            hist = local_update(self.agent, self.env, self.cfg.ppo, n_epochs, rng, first_epoch=self.epochs_done + 1)
        except (TrainingError, ArithmeticError, ValueError) as exc:
            raise RoundAborted(round_index, str(exc), self.agent_id) from exc
        self.history.extend(hist)
        return Upload(
            round=round_index,
            agent_id=self.agent_id,
            params=self.agent.params(),
            n_transitions=n_epochs * self.cfg.ppo.episodes_per_epoch * self.env.scenario.load.shape[1],
            round_eval_mean=float(np.mean([h.eval_reward for h in hist])),
        )


class InProcessLink:
    """Runs participants sequentially in the calling thread."""

    def __init__(self, participants: Sequence[Participant]):
        self.participants = list(participants)

    @property
    def n(self) -> int:
        return len(self.participants)

    def run_round(self, round_index: int, global_vec: ParamVector | None, n_epochs: int) -> list[Upload]:
        return [p.run_round(round_index, global_vec, n_epochs) for p in self.participants]

    def finish(self, final_vec: ParamVector | None) -> None:
        if final_vec is not None:
            broadcast_and_replace(final_vec, [p.agent for p in self.participants])

    def close(self) -> None:
        pass


class TcpLink:
    """Server side of the socket transport. Federated mode only."""

    def __init__(self, sock: socket.socket, n: int, spec_hash: str, timeout: float = DEFAULT_TIMEOUT):
        self.sock = sock
        self.n = n
        self.spec_hash = spec_hash
        self.timeout = timeout
        self.conns: dict[int, socket.socket] = {}

    @classmethod
    def listen(cls, address: tuple[str, int], n: int, spec_hash: str, timeout: float = DEFAULT_TIMEOUT) -> "TcpLink":
        sock = socket.create_server(address)
        sock.listen(n)
        return cls(sock, n, spec_hash, timeout)

    @property
    def address(self) -> tuple[str, int]:
        return self.sock.getsockname()[:2]

    def accept_all(self) -> None:
        """Admit ``n`` participants whose HELLO carries the right spec hash."""
        deadline = time.monotonic() + self.timeout
        while len(self.conns) < self.n:
            left = deadline - time.monotonic()
            if left <= 0:
                raise RoundAborted(1, f"only {len(self.conns)} of {self.n} participants joined")
            self.sock.settimeout(left)
            try:
                conn, _ = self.sock.accept()
            except socket.timeout:
                continue
            conn.settimeout(self.timeout)
            try:
                hello = wire.recv(conn)
            except (OSError, wire.ProtocolError):
                conn.close()
                continue
            if hello.kind != wire.HELLO:
                wire.send(conn, wire.Message(wire.REJECT, reason="expected HELLO"))
                conn.close()
            elif hello.spec_hash != self.spec_hash:
                reason = f"spec hash {hello.spec_hash} != {self.spec_hash}"
                wire.send(conn, wire.Message(wire.REJECT, reason=reason))
                conn.close()
            elif hello.agent_id in self.conns or hello.agent_id >= self.n:
                wire.send(conn, wire.Message(wire.REJECT, reason=f"agent id {hello.agent_id} unavailable"))
                conn.close()
            else:
                self.conns[hello.agent_id] = conn

    def run_round(self, round_index: int, global_vec: ParamVector | None, n_epochs: int) -> list[Upload]:
        if global_vec is None:
            raise ValueError("the socket transport needs a global vector every round")
        if len(self.conns) < self.n:
            self.accept_all()
        msg = wire.Message(wire.GLOBAL, round=round_index, local_epochs=n_epochs, params=global_vec)
        for aid in sorted(self.conns):
            wire.send(self.conns[aid], msg)
        uploads = {}
        deadline = time.monotonic() + self.timeout
        for aid in sorted(self.conns):
            conn = self.conns[aid]
            try:
                conn.settimeout(max(deadline - time.monotonic(), 1e-3))
                reply = wire.recv(conn)
            except (socket.timeout, TimeoutError):
                raise RoundAborted(round_index, "timed out waiting for uploads", aid) from None
            except (OSError, wire.ProtocolError) as exc:
                raise RoundAborted(round_index, str(exc), aid) from exc
            if reply.kind == wire.ERROR:
                raise RoundAborted(round_index, reply.reason, reply.agent_id)
            if reply.kind != wire.PARAMS or reply.round != round_index or reply.agent_id != aid:
                raise RoundAborted(round_index, f"unexpected message type {reply.kind}", aid)
            uploads[aid] = Upload(round_index, aid, reply.params, reply.n_transitions, reply.eval_mean)
        return [uploads[a] for a in sorted(uploads)]

    def finish(self, final_vec: ParamVector | None) -> None:
        for conn in self.conns.values():
            try:
                wire.send(conn, wire.Message(wire.DONE, params=final_vec))
            except OSError:
                pass

    def close(self) -> None:
        for conn in self.conns.values():
            conn.close()
        self.sock.close()


def join(participant: Participant, address: tuple[str, int], timeout: float = DEFAULT_TIMEOUT) -> ParamVector:
    """Participant loop for the socket transport. Returns the final global vector."""
    sock = socket.create_connection(address, timeout=timeout)
    try:
        wire.send(sock, wire.Message(wire.HELLO, agent_id=participant.agent_id, spec_hash=participant.spec.spec_hash))
        while True:
            sock.settimeout(None)  # rounds may be long; the server enforces the barrier
            msg = wire.recv(sock)
            if msg.kind == wire.REJECT:
                raise wire.SpecMismatch(msg.reason)
            if msg.kind == wire.DONE:
                broadcast_and_replace(msg.params, [participant.agent])
                return msg.params
            if msg.kind != wire.GLOBAL:
                raise wire.ProtocolError(f"unexpected message type {msg.kind}")
            try:
                up = participant.run_round(msg.round, msg.params, msg.local_epochs)
            except Exception as exc:
                wire.send(sock, wire.Message(wire.ERROR, agent_id=participant.agent_id, reason=str(exc)))
                raise
            wire.send(sock, wire.Message(
                wire.PARAMS, round=up.round, agent_id=up.agent_id, n_transitions=up.n_transitions,
                eval_mean=up.round_eval_mean, params=up.params,
            ))
    finally:
        sock.close()


@dataclass
class RoundReport:
    round: int
    first_epoch: int
    last_epoch: int
    eval_pre: tuple[float, ...]  # uploaded local parameters, each on its own MG
    eval_post: tuple[float, ...]  # parameters each agent continues from
    round_eval_mean: tuple[float, ...]  # mean per-epoch eval reward during the round
    norm_local: tuple[float, ...]
    norm_global: float
    weights: tuple[float, ...]
    aggregated: bool
    wall_clock: float


ROUND_COLUMNS = ("round", "agent", "first_epoch", "last_epoch", "eval_pre", "eval_post", "round_eval_mean",
                 "norm_local", "norm_global", "weight", "aggregated", "wall_clock")


def write_round_reports(reports: Sequence[RoundReport], path, header_comment: str | None = None) -> None:
    with open(path, "w", newline="") as fh:
        if header_comment:
            fh.write(f"# {header_comment}\n")
        w = csv.writer(fh)
        w.writerow(ROUND_COLUMNS)
        for r in reports:
            for j in range(len(r.eval_pre)):
                w.writerow([
                    r.round, j + 1, r.first_epoch, r.last_epoch, repr(r.eval_pre[j]), repr(r.eval_post[j]),
                    repr(r.round_eval_mean[j]), repr(r.norm_local[j]), repr(r.norm_global), repr(r.weights[j]),
                    int(r.aggregated), f"{r.wall_clock:.3f}",
                ])


@dataclass
class TrainingResult:
    reports: list[RoundReport]
    final_vectors: list[ParamVector]  # one per agent, what each agent ends with
    global_vector: ParamVector | None
    histories: dict[int, list[EpochStats]] = field(default_factory=dict)


def _eval_vector(vec: ParamVector, envs: Sequence[MicrogridEnv], spec: AgentSpec, cfg: MmgConfig) -> list[float]:
    probe = Agent(spec, cfg.ppo)
    probe.load(vec)
    return [evaluate(probe, env)[0] for env in envs]


def serve(link, cfg: MmgConfig, scenario: ScenarioDay, seed: int, federated: bool = True, progress=None) -> TrainingResult:
    """Server loop over any link. ``progress`` is called with each finished RoundReport."""
    sched = cfg.schedule
    spec = agent_spec_for(cfg, scenario)
    envs = [MicrogridEnv.from_config(cfg, scenario, j) for j in range(cfg.n_mg)]
    if link.n != cfg.n_mg:
        raise ValueError(f"link has {link.n} participants, config has {cfg.n_mg} microgrids")
    global_vec = initial_vector(spec, cfg, seed)
    reports: list[RoundReport] = []
    uploads: list[Upload] = []
    epoch = 0
    for r in range(1, sched.n_rounds + 1):
        t0 = time.perf_counter()
        n_ep = sched.epochs_in_round(r)
        send = global_vec if (federated or r == 1) else None
        uploads = link.run_round(r, send, n_ep)
        if [u.agent_id for u in uploads] != list(range(link.n)) or any(u.round != r for u in uploads):
            raise RoundAborted(r, "uploads out of order or from the wrong round")
        vecs = [u.params for u in uploads]
        eval_pre = [_eval_vector(v, [envs[j]], spec, cfg)[0] for j, v in enumerate(vecs)]
        if federated:
            if sched.weighting == "data":
                weights = AggregationWeights.from_counts([u.n_transitions for u in uploads])
            else:
                weights = AggregationWeights.uniform(link.n)
            global_vec = aggregate(vecs, weights)
            eval_post = _eval_vector(global_vec, envs, spec, cfg)
        else:
            weights = AggregationWeights.uniform(link.n)
            eval_post = list(eval_pre)
        reports.append(RoundReport(
            round=r,
            first_epoch=epoch + 1,
            last_epoch=epoch + n_ep,
            eval_pre=tuple(eval_pre),
            eval_post=tuple(eval_post),
            round_eval_mean=tuple(u.round_eval_mean for u in uploads),
            norm_local=tuple(float(np.linalg.norm(v.values)) for v in vecs),
            norm_global=float(np.linalg.norm(global_vec.values)) if federated else float("nan"),
            weights=weights.p,
            aggregated=federated,
            wall_clock=time.perf_counter() - t0,
        ))
        epoch += n_ep
        if progress is not None:
            progress(reports[-1])
    if federated:
        link.finish(global_vec)
        finals = [global_vec] * link.n
    else:
        link.finish(None)
        finals = [u.params for u in uploads]
    return TrainingResult(reports, finals, global_vec if federated else None)


def run_training(
    cfg: MmgConfig,
    scenario: ScenarioDay,
    seed: int,
    transport: str = "inproc",
    local_only: bool | None = None,
    timeout: float = DEFAULT_TIMEOUT,
    progress=None,
) -> TrainingResult:
    """Full training run. ``transport="tcp"`` runs the participants in threads over loopback."""
    federated = cfg.schedule.federated if local_only is None else not local_only
    participants = [Participant(j, cfg, scenario, seed) for j in range(cfg.n_mg)]
    if transport == "inproc":
        link = InProcessLink(participants)
        try:
            result = serve(link, cfg, scenario, seed, federated, progress)
        finally:
            link.close()
    elif transport == "tcp":
        if not federated:
            raise ValueError("the socket transport runs federated training only")
        spec = participants[0].spec
        link = TcpLink.listen(("127.0.0.1", 0), cfg.n_mg, spec.spec_hash, timeout)
        errors: list[BaseException] = []

        def worker(p: Participant):
            try:
                join(p, link.address, timeout)
            except BaseException as exc:  # reported after the server returns
                errors.append(exc)

        threads = [threading.Thread(target=worker, args=(p,), daemon=True) for p in participants]
        for t in threads:
            t.start()
        try:
            result = serve(link, cfg, scenario, seed, federated, progress)
        finally:
            link.close()
            for t in threads:
                t.join(timeout)
        if errors:
            raise errors[0]
    else:
        raise ValueError(f"unknown transport {transport!r}")
    result.histories = {p.agent_id: p.history for p in participants}
    return result
