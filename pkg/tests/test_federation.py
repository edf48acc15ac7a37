import dataclasses
import socket
import threading

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from fedmmg import federation, wire
from fedmmg.config import FedSchedule, MmgConfig, PpoHyper
from fedmmg.federation import (
    AggregationWeights, InProcessLink, Participant, RoundAborted, TcpLink, aggregate, broadcast_and_replace,
    run_training, serve, write_round_reports,
)
from fedmmg.mlp import AgentSpec, IntegrityError, ParamVector
from fedmmg.ppo import Agent
from fedmmg.scenario import default_scenario

H = "h" * 16


def pv(*vals):
    return ParamVector(np.array(vals, dtype=float), H)


def small_cfg(total=4, local=2, n_mg=3, **sched):
    ppo = PpoHyper(hidden=(8,), epochs_per_update=2, minibatches=2, episodes_per_epoch=2)
    cfg = MmgConfig(ppo=ppo, schedule=FedSchedule(total, local, **sched))
    return dataclasses.replace(cfg, devices=cfg.devices[:n_mg])


def test_aggregate_examples():
    v = [pv(1, 2), pv(3, 4), pv(5, 6)]
    assert np.allclose(aggregate(v, AggregationWeights.uniform(3)).values, [3, 4], atol=1e-12)
    assert np.allclose(aggregate(v, AggregationWeights((0.5, 0.25, 0.25))).values, [2.5, 3.5], atol=1e-12)
    same = pv(0.1, -7.3, 1e-9)
    out = aggregate([same] * 3, AggregationWeights.uniform(3))
    assert np.max(np.abs(out.values - same.values)) <= 1e-15


def test_aggregate_errors():
    with pytest.raises(IntegrityError):
        aggregate([pv(1, 2), pv(1, 2, 3)], AggregationWeights.uniform(2))
    with pytest.raises(IntegrityError):
        aggregate([pv(1, 2), ParamVector(np.zeros(2), "x" * 16)], AggregationWeights.uniform(2))
    with pytest.raises(ValueError):
        AggregationWeights((0.5, 0.49))
    with pytest.raises(ValueError):
        AggregationWeights((1.5, -0.5))
    assert AggregationWeights.from_counts([1, 3]).p == (0.25, 0.75)


vectors = st.integers(1, 6).flatmap(
    lambda n: st.lists(st.lists(st.floats(-1e3, 1e3), min_size=n, max_size=n), min_size=1, max_size=5)
)


@given(vectors, st.data())
@settings(max_examples=1000)
def test_aggregate_stays_in_the_hull(rows, data):
    raw = data.draw(st.lists(st.floats(0.01, 1), min_size=len(rows), max_size=len(rows)))
    w = AggregationWeights.from_counts(raw)
    out = aggregate([pv(*r) for r in rows], w).values
    arr = np.array(rows)
    span = 1e-12 * (1 + np.abs(arr).max())
    assert np.all(out >= arr.min(axis=0) - span) and np.all(out <= arr.max(axis=0) + span)


@given(vectors, st.floats(-3, 3), st.floats(-3, 3), st.data())
@settings(max_examples=200)
def test_aggregate_is_affine(rows, alpha, beta, data):
    other = data.draw(st.lists(st.lists(st.floats(-1e3, 1e3), min_size=len(rows[0]), max_size=len(rows[0])),
                               min_size=len(rows), max_size=len(rows)))
    w = AggregationWeights.uniform(len(rows))
    x, y = np.array(rows), np.array(other)
    lhs = aggregate([pv(*r) for r in alpha * x + beta * y], w).values
    rhs = alpha * aggregate([pv(*r) for r in x], w).values + beta * aggregate([pv(*r) for r in y], w).values
    assert np.allclose(lhs, rhs, atol=1e-12 * (1 + 6e3), rtol=0)


def test_broadcast_and_replace():
    spec = AgentSpec.build(6, 2, (8,))
    agents = [Agent(spec, PpoHyper(), np.random.default_rng(i)) for i in range(3)]
    agents[0].actor_opt.step = 7
    agents[0].actor_opt.m[:] = 1.0
    g = agents[1].params()
    broadcast_and_replace(g, agents)
    obs = np.random.default_rng(0).standard_normal((4, 6))
    for a in agents:
        assert np.array_equal(a.params().values, g.values)
        assert a.actor_opt.step == 0 and not a.actor_opt.m.any()
        assert np.array_equal(a.act_deterministic(obs), agents[0].act_deterministic(obs))
    own = agents[2].params()
    broadcast_and_replace(own, [agents[2]])
    assert np.array_equal(agents[2].params().values, own.values)
    with pytest.raises(IntegrityError):
        broadcast_and_replace(ParamVector(np.zeros(3), "bad" * 5 + "x"), agents)


def test_round_structure():
    assert FedSchedule().n_rounds == 3
    assert FedSchedule(1000, 300).n_rounds == 4 and FedSchedule(1000, 300).epochs_in_round(4) == 100
    with pytest.raises(ValueError):
        FedSchedule(10, 20)


def test_default_run_has_three_rounds_and_barriers():
    cfg = small_cfg(total=6, local=2)
    res = run_training(cfg, default_scenario(), seed=3)
    assert [r.round for r in res.reports] == [1, 2, 3]
    assert [(r.first_epoch, r.last_epoch) for r in res.reports] == [(1, 2), (3, 4), (5, 6)]
    for j, hist in res.histories.items():
        assert [h.epoch for h in hist] == list(range(1, 7))
    # every agent ends on the last global vector
    assert all(np.array_equal(v.values, res.global_vector.values) for v in res.final_vectors)


def test_single_participant_equals_local_training():
    cfg = small_cfg(total=4, local=2, n_mg=1)
    fed = run_training(cfg, default_scenario(), seed=5)
    # reproduce by hand: broadcast the initial vector, then train locally round by round
    spec = federation.agent_spec_for(cfg, default_scenario())
    p = Participant(0, cfg, default_scenario(), 5)
    vec = federation.initial_vector(spec, cfg, 5)
    for r in (1, 2):
        vec = p.run_round(r, vec, 2).params
    assert np.array_equal(fed.global_vector.values, vec.values)


def test_one_round_is_local_training_then_average():
    cfg = small_cfg(total=3, local=3)
    res = run_training(cfg, default_scenario(), seed=2)
    assert len(res.reports) == 1
    spec = federation.agent_spec_for(cfg, default_scenario())
    init = federation.initial_vector(spec, cfg, 2)
    ups = [Participant(j, cfg, default_scenario(), 2).run_round(1, init, 3).params for j in range(3)]
    assert np.array_equal(aggregate(ups, AggregationWeights.uniform(3)).values, res.global_vector.values)


def test_local_only_keeps_agents_apart():
    cfg = small_cfg(total=4, local=2)
    res = run_training(cfg, default_scenario(), seed=1, local_only=True)
    assert res.global_vector is None
    assert not np.array_equal(res.final_vectors[0].values, res.final_vectors[1].values)
    assert all(not r.aggregated and r.eval_pre == r.eval_post for r in res.reports)
    fed = run_training(cfg, default_scenario(), seed=1)
    # round 1 is shared by both modes
    assert fed.reports[0].eval_pre == res.reports[0].eval_pre


def test_data_weighting_runs():
    cfg = small_cfg(total=2, local=2, weighting="data")
    res = run_training(cfg, default_scenario(), seed=1)
    assert res.reports[0].weights == pytest.approx((1 / 3,) * 3)


def test_inprocess_is_deterministic(tmp_path):
    cfg = small_cfg(total=4, local=2)
    a = run_training(cfg, default_scenario(), seed=9)
    b = run_training(cfg, default_scenario(), seed=9)
    assert a.global_vector.values.tobytes() == b.global_vector.values.tobytes()
    write_round_reports(a.reports, tmp_path / "r.csv", "hdr")
    lines = (tmp_path / "r.csv").read_text().splitlines()
    assert lines[0] == "# hdr" and len(lines) == 2 + 2 * 3


def test_tcp_matches_inprocess():
    cfg = small_cfg(total=4, local=2)
    a = run_training(cfg, default_scenario(), seed=4)
    b = run_training(cfg, default_scenario(), seed=4, transport="tcp", timeout=30)
    assert a.global_vector.values.tobytes() == b.global_vector.values.tobytes()
    for j in range(3):
        assert [h.eval_reward for h in a.histories[j]] == [h.eval_reward for h in b.histories[j]]


def test_participant_failure_names_agent():
    cfg = small_cfg(total=2, local=2)
    parts = [Participant(j, cfg, default_scenario(), 1) for j in range(3)]

    def boom(*args, **kw):
        raise RoundAborted(1, "diverged", 1)

    parts[1].run_round = boom
    with pytest.raises(RoundAborted) as err:
        serve(InProcessLink(parts), cfg, default_scenario(), 1)
    assert err.value.agent_id == 1


def _hello(address, agent_id, spec_hash):
    s = socket.create_connection(address, timeout=5)
    wire.send(s, wire.Message(wire.HELLO, agent_id=agent_id, spec_hash=spec_hash))
    return s


def test_wrong_spec_hash_is_rejected():
    cfg = small_cfg()
    spec = federation.agent_spec_for(cfg, default_scenario())
    link = TcpLink.listen(("127.0.0.1", 0), 1, spec.spec_hash, timeout=2)
    try:
        holder = {}
        t = threading.Thread(target=lambda: holder.setdefault("s", _hello(link.address, 0, "0" * 16)))
        t.start()
        with pytest.raises(RoundAborted):
            link.accept_all()
        t.join()
        assert wire.recv(holder["s"]).kind == wire.REJECT
        holder["s"].close()
    finally:
        link.close()


def test_join_raises_typed_rejection():
    link = TcpLink.listen(("127.0.0.1", 0), 1, "f" * 16, timeout=3)
    cfg = small_cfg(n_mg=1)
    part = Participant(0, cfg, default_scenario(), 1)
    t = threading.Thread(target=lambda: pytest.raises(RoundAborted, link.accept_all))
    t.start()
    try:
        with pytest.raises(wire.SpecMismatch):
            federation.join(part, link.address, timeout=3)
    finally:
        t.join()
        link.close()


def test_missing_participant_times_out_without_aggregation():
    cfg = small_cfg(total=2, local=2)
    spec = federation.agent_spec_for(cfg, default_scenario())
    link = TcpLink.listen(("127.0.0.1", 0), 3, spec.spec_hash, timeout=1.0)
    conns = [_hello(link.address, j, spec.spec_hash) for j in range(2)]
    seen = []
    try:
        with pytest.raises(RoundAborted, match="2 of 3"):
            serve(link, cfg, default_scenario(), 1, progress=seen.append)
    finally:
        for c in conns:
            c.close()
        link.close()
    assert seen == []  # no round completed, nothing aggregated
