"""Command-line entry point: ``fedmmg {train,evaluate,schedule,settlements,convergence}``."""

from __future__ import annotations

import argparse
import csv
import dataclasses
import sys
from pathlib import Path

import numpy as np
import yaml

from . import convergence, federation, market
from .config import MmgConfig, config_to_dict, load_config
from .env import MicrogridEnv
from .evaluation import MODES, mode_scenario, noisy_seeds, test_reward
from .federation import INIT_STREAM
from .mlp import IntegrityError, load_checkpoint, save_checkpoint
from .ppo import Agent, evaluate, write_training_csv
from .scenario import HOURS, ScenarioError, default_scenario, load_scenario
from .wire import ProtocolError, parse_address


class CliError(Exception):
    def __init__(self, message: str, code: int = 2):
        super().__init__(message)
        self.code = code


def _seeds(text: str) -> list[int]:
    try:
        seeds = [int(s) for s in text.split(",") if s.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"seeds must be comma-separated integers, got {text!r}") from None
    if not seeds:
        raise argparse.ArgumentTypeError("at least one seed is required")
    return seeds


def _config(args) -> MmgConfig:
    cfg = load_config(args.config) if getattr(args, "config", None) else MmgConfig()
    sched, ppo = cfg.schedule, cfg.ppo
    if getattr(args, "local_epochs", None) is not None:
        sched = dataclasses.replace(sched, local_epochs=args.local_epochs,
                                    total_epochs=max(sched.total_epochs, args.local_epochs))
    if getattr(args, "rounds", None) is not None:
        sched = dataclasses.replace(sched, total_epochs=args.rounds * sched.local_epochs)
    if getattr(args, "local_only", False):
        sched = dataclasses.replace(sched, federated=False)
    if getattr(args, "faithful_critic", False):
        ppo = dataclasses.replace(ppo, critic_target="td", faithful_critic=True)
    return dataclasses.replace(cfg, schedule=sched, ppo=ppo)


def _scenario(path: str):
    return default_scenario() if path in (None, "default") else load_scenario(path)


def seed_header(seed: int, cfg: MmgConfig, extra: str = "") -> str:
    parts = [
        f"seed={seed}",
        f"init=[{seed},{INIT_STREAM},0]",
        f"agent_init=[{seed},j,0]",
        f"round_stream=[{seed},j,r]",
        f"noisy_eval={noisy_seeds(cfg.eval_noisy_episodes)}",
    ]
    return "seed hierarchy: " + " ".join(parts) + (f" | {extra}" if extra else "")


def cmd_train(args) -> int:
    cfg = _config(args)
    scenario = _scenario(args.scenario)
    out = Path(args.out)
    federated = cfg.schedule.federated
    if args.join:
        if args.agent is None:
            raise CliError("--join needs --agent")
        seed = args.seeds[0]
        p = federation.Participant(args.agent, cfg, scenario, seed)
        federation.join(p, parse_address(args.join), args.timeout)
        d = out / f"seed_{seed}"
        d.mkdir(parents=True, exist_ok=True)
        write_training_csv(p.history, d / f"training_mg{args.agent + 1}.csv", seed_header(seed, cfg))
        return 0

    for seed in args.seeds:
        d = out / f"seed_{seed}"
        d.mkdir(parents=True, exist_ok=True)
        label = "federated" if federated else "local-only"
        progress = (lambda r: print(f"seed {seed} round {r.round}: eval {[round(x) for x in r.eval_post]}",
                                    file=sys.stderr)) if args.verbose else None
        if args.serve:
            if not federated:
                raise CliError("--serve runs federated training only")
            spec = federation.agent_spec_for(cfg, scenario)
            link = federation.TcpLink.listen(parse_address(args.serve), cfg.n_mg, spec.spec_hash, args.timeout)
            try:
                result = federation.serve(link, cfg, scenario, seed, True, progress)
            finally:
                link.close()
        else:
            result = federation.run_training(cfg, scenario, seed, transport=args.transport,
                                             local_only=not federated, timeout=args.timeout, progress=progress)
        head = seed_header(seed, cfg, label)
        for j, hist in result.histories.items():
            write_training_csv(hist, d / f"training_mg{j + 1}.csv", head)
        federation.write_round_reports(result.reports, d / "rounds.csv", head)
        spec = federation.agent_spec_for(cfg, scenario)
        for j, vec in enumerate(result.final_vectors):
            save_checkpoint(d / f"mg{j + 1}.ckpt", vec, spec, cfg.schedule.total_epochs)
        with open(d / "config.yaml", "w") as fh:
            yaml.safe_dump(config_to_dict(cfg), fh, sort_keys=False)
        print(f"seed {seed}: {label} training written to {d}")
    return 0


def _checkpoint_for(directory: Path, mg: int) -> Path:
    p = directory / f"mg{mg + 1}.ckpt"
    if not p.exists():
        raise CliError(f"missing checkpoint {p}", 3)
    return p


def cmd_evaluate(args) -> int:
    cfg = _config(args)
    base = _scenario(args.scenario)
    labels = args.labels.split(",") if args.labels else [Path(c).name for c in args.checkpoints]
    if len(labels) != len(args.checkpoints):
        raise CliError("--labels must name every checkpoint directory")
    spec = federation.agent_spec_for(cfg, base)
    modes = list(MODES) if args.mode == "both" else [args.mode]
    rows = []
    for mode in modes:
        scenario = mode_scenario(cfg, base, mode)
        for mg in range(cfg.n_mg):
            row = [mode, f"MG{mg + 1}"]
            for c in args.checkpoints:
                vec, ck_spec, _ = load_checkpoint(_checkpoint_for(Path(c), mg))
                if ck_spec.spec_hash != spec.spec_hash:
                    raise IntegrityError(f"{c}: checkpoint topology does not match the config")
                row.append(repr(test_reward(vec, spec, cfg, scenario, mg, args.noisy_episodes)))
            rows.append(row)
    n_noisy = cfg.eval_noisy_episodes if args.noisy_episodes is None else args.noisy_episodes
    with open(args.out, "w", newline="") as fh:
        fh.write(f"# test reward: noise-free day plus noisy days {noisy_seeds(n_noisy)}\n")
        w = csv.writer(fh)
        w.writerow(["mode", "mg", *labels])
        w.writerows(rows)
    print(f"wrote {args.out}")
    return 0


SCHEDULE_COLUMNS = ("hour", "cg_kw", "ba_kw", "reg_kw", "load_kw", "loss_kw", "unbalanced_kw", "soc",
                    "price_dpn", "reward")


def cmd_schedule(args) -> int:
    cfg = _config(args)
    scenario = mode_scenario(cfg, _scenario(args.scenario), args.mode)
    mg = args.mg - 1
    if not 0 <= mg < cfg.n_mg:
        raise CliError(f"--mg must lie in 1..{cfg.n_mg}, got {args.mg}")
    vec, spec, _ = load_checkpoint(args.checkpoint)
    agent = Agent(spec, cfg.ppo)
    agent.load(vec)
    env = MicrogridEnv.from_config(cfg, scenario, mg)
    if (env.obs_dim, env.action_dim) != (spec.actor.n_in, spec.actor.n_out):
        raise IntegrityError("checkpoint topology does not fit this microgrid")
    _, _, trace = evaluate(agent, env)
    with open(args.out, "w", newline="") as fh:
        fh.write(f"# MG{args.mg} deterministic dispatch, mode={args.mode}\n")
        w = csv.writer(fh)
        w.writerow(SCHEDULE_COLUMNS)
        for o in trace:
            w.writerow([o.hour, repr(sum(o.p_cg)), repr(sum(o.p_ba)), repr(o.reg), repr(o.load), repr(o.loss),
                        repr(o.deviation), repr(float(np.mean(o.next_state.soc))), repr(o.price), repr(o.reward)])
    print(f"wrote {args.out}")
    return 0


def read_schedule(path) -> dict[str, list[float]]:
    with open(path, newline="") as fh:
        rows = [r for r in csv.DictReader(line for line in fh if not line.startswith("#"))]
    return {k: [float(r[k]) for r in rows] for k in SCHEDULE_COLUMNS}


def cmd_settlements(args) -> int:
    scenario = _scenario(args.scenario)
    scheds = [read_schedule(p) for p in args.schedules]
    hours = [s["hour"] for s in scheds]
    if any(h != hours[0] for h in hours) or len(hours[0]) != HOURS:
        raise CliError("schedule files must cover the same 24 hours in the same order")
    hourly = []
    for k, hour in enumerate(hours[0]):
        h = int(hour)
        surplus = [-s["unbalanced_kw"][k] for s in scheds]
        price = float(scenario.price_mg[h - 1])
        res = market.settle(surplus, [price] * len(scheds), float(scenario.price_dpn[h - 1]),
                            [s["reward"][k] for s in scheds])
        hourly.append((h, res))
    market.write_settlements(hourly, args.out)
    print(f"wrote {args.out}")
    return 0


def cmd_convergence(args) -> int:
    rows = convergence.run_suite(args.seeds, args.dim, args.mu, args.L, args.k_max)
    print(f"{'seed':>6} {'max_ratio':>12} {'sandwich':>7} {'descent':>8} {'result':>7}")
    for r in rows:
        print(f"{r.seed:>6} {r.max_ratio:>12.6f} {str(r.sandwich_ok):>7} {str(r.descent_ok):>8} "
              f"{'PASS' if r.passed else 'FAIL':>7}")
    if args.out:
        convergence.write_suite(rows, args.out, f"dim={args.dim} mu={args.mu} L={args.L} k_max={args.k_max}")
    return 0 if all(r.passed for r in rows) else 1


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="fedmmg", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, scenario=True):
        p.add_argument("--config", help="YAML config file (default: built-in defaults)")
        if scenario:
            p.add_argument("--scenario", default="default", help="scenario CSV or 'default'")

    p = sub.add_parser("train", help="federated or local-only PPO training")
    common(p)
    p.add_argument("--seeds", type=_seeds, default=[1], help="comma-separated seeds, one run each")
    p.add_argument("--out", default="runs", help="output directory (one subdirectory per seed)")
    p.add_argument("--local-only", action="store_true", help="train without aggregation")
    p.add_argument("--rounds", type=int, help="number of federation rounds")
    p.add_argument("--local-epochs", type=int, help="local epochs per round")
    p.add_argument("--faithful-critic", action="store_true",
                   help="TD critic target with the gradient flowing through V(s')")
    p.add_argument("--transport", choices=("inproc", "tcp"), default="inproc")
    p.add_argument("--serve", metavar="HOST:PORT", help="act as server for remote participants")
    p.add_argument("--join", metavar="HOST:PORT", help="act as participant --agent of a remote server")
    p.add_argument("--agent", type=int, help="0-based microgrid index when joining")
    p.add_argument("--timeout", type=float, default=federation.DEFAULT_TIMEOUT, help="barrier timeout in seconds")
    p.add_argument("--verbose", action="store_true")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("evaluate", help="test-reward table for trained checkpoints")
    common(p)
    p.add_argument("--checkpoints", nargs="+", required=True, help="directories holding mg<k>.ckpt files")
    p.add_argument("--labels", help="comma-separated column names, one per checkpoint directory")
    p.add_argument("--mode", choices=("both", "training", *MODES), default="both")
    p.add_argument("--noisy-episodes", type=int, help="fixed-seed noisy days per evaluation")
    p.add_argument("--out", default="test_rewards.csv")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("schedule", help="24-hour dispatch of one trained agent")
    common(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--mg", type=int, required=True, help="1-based microgrid index")
    p.add_argument("--mode", choices=("training", *MODES), default="training")
    p.add_argument("--out", default="schedule.csv")
    p.set_defaults(func=cmd_schedule)

    p = sub.add_parser("settlements", help="inter-microgrid trades from schedule files")
    p.add_argument("--scenario", default="default", help="scenario CSV or 'default'")
    p.add_argument("--schedules", nargs="+", required=True, help="one schedule CSV per microgrid, in MG order")
    p.add_argument("--out", default="settlements.csv")
    p.set_defaults(func=cmd_settlements)

    p = sub.add_parser("convergence", help="gradient-descent rate checks on random quadratics")
    p.add_argument("--seeds", type=_seeds, default=list(range(20)))
    p.add_argument("--dim", type=int, default=10)
    p.add_argument("--mu", type=float, default=1.0)
    p.add_argument("--L", type=float, default=10.0)
    p.add_argument("--k-max", type=int, default=200)
    p.add_argument("--out", help="per-seed CSV")
    p.set_defaults(func=cmd_convergence)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except CliError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.code
    except (IntegrityError, ProtocolError, federation.RoundAborted) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3
    except (ScenarioError, KeyError, ValueError, OSError, yaml.YAMLError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
