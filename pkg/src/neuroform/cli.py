"""Command-line surface: gen-data, train, simulate, evaluate, plot.

Every command takes a JSON config (strictly validated: unknown keys are
rejected) plus a few overriding flags. All randomness flows from the
single per-command seed, which is recorded in the output manifests.

Exit codes: 0 success, 2 configuration or input error, 3 training
finished without reaching the loss target (artifacts still written).
"""

from __future__ import annotations

import argparse
import csv
import json
import sys
from pathlib import Path

import numpy as np

from . import experiments as xp
from .datasets import AgentDataset, build_agent_dataset, load_dataset, save_dataset
from .dynamics import FormationInstance
from .engine import MonitorConfig, SimConfig, lyapunov_diagnostics, run
from .errors import GainSet
from .exceptions import ConfigError, NeuroformError
from .mlp import MlpController, MlpEnsemble, load_weights, save_weights, train
from .persist import (
    file_sha256,
    read_record_csv,
    write_manifest,
    write_record_csv,
    write_summary_json,
)
from .policies import DistributedPolicy, OraclePolicy, PolicyKind

EXPERIMENTS = ("exp1", "exp2", "exp3")
DEFAULT_HIDDEN = [512, 512, 512, 512]


def _check_keys(d: dict, allowed: set, ctx: str) -> None:
    unknown = set(d) - allowed
    if unknown:
        raise ConfigError(f"unknown keys in {ctx}: {sorted(unknown)}")


def _sim_from(d: dict, ctx: str, **defaults) -> SimConfig:
    d = dict(d or {})
    _check_keys(d, {"dt", "duration", "integrator", "record_stride", "blowup_norm"}, ctx)
    merged = {**defaults, **d}
    return SimConfig(seed=0, **merged)


def _monitor_from(d: dict) -> MonitorConfig:
    d = dict(d or {})
    _check_keys(d, {"kappa", "variant"}, "monitor")
    return MonitorConfig(**d)


def _gains_from(d: dict, n_agents: int) -> GainSet:
    if not d:
        return GainSet.uniform(n_agents)
    _check_keys(d, {"k1", "k2", "mu1"}, "gains")
    def arr(v, default):
        if v is None:
            return default * np.ones(n_agents)
        v = np.asarray(v, dtype=float)
        return v if v.ndim else v * np.ones(n_agents)
    return GainSet(arr(d.get("k1"), 0.1), arr(d.get("k2"), 0.5), arr(d.get("mu1"), 0.5))


def _exp3_spec(config: dict, seed: int, full: bool) -> xp.ExperimentSpec:
    return xp.desk_scale_exp3(base_seed=seed, full=full)


def _default_gen_sim(experiment: str) -> dict:
    horizon = {"exp1": xp.EXP1_HORIZON, "exp2": xp.EXP2_HORIZON, "exp3": 40.0}[experiment]
    return {"dt": 5e-3, "duration": horizon, "record_stride": 5}


def cmd_gen_data(config: dict, out_dir: Path) -> int:
    _check_keys(
        config,
        {"experiment", "n_trajectories", "sample_count", "seed", "gen", "full"},
        "gen-data config",
    )
    experiment = config.get("experiment")
    if experiment not in EXPERIMENTS:
        raise ConfigError(f"experiment must be one of {EXPERIMENTS}")
    seed = int(config.get("seed", 0))
    full = bool(config.get("full", False))
    sample_count = int(config.get("sample_count", 500))
    gains = GainSet.uniform(5)
    defaults = _default_gen_sim(experiment)
    sim = _sim_from(config.get("gen"), "gen", **defaults)

    if experiment == "exp1":
        n_traj = int(config.get("n_trajectories", 100))
        instances = xp.exp1_training_instances(n_traj, seed=seed)
        trajectories, skipped = xp.generate_training_data(instances, sim, gains)
    elif experiment == "exp2":
        n_traj = int(config.get("n_trajectories", 100))
        trajectories, skipped = xp.generate_exp2_training_data(n_traj, seed, sim, gains)
    else:
        spec = _exp3_spec(config, seed, full)
        instances = xp.make_exp3(spec)
        train_insts, _ = xp.split_exp3(instances, spec)
        trajectories, skipped = xp.generate_training_data(
            train_insts, sim, gains, batch=False
        )

    out_dir.mkdir(parents=True, exist_ok=True)
    n_agents = trajectories[0].topology.n_agents if trajectories else 5
    files, checksums, rows = {}, {}, {}
    for agent in range(1, n_agents + 1):
        ds = build_agent_dataset(agent, trajectories, sample_count)
        fname = f"dataset_agent{agent}.npz"
        save_dataset(ds, out_dir / fname)
        files[agent] = fname
        checksums[fname] = file_sha256(out_dir / fname)
        rows[fname] = len(ds)
    write_manifest(
        out_dir / "manifest.json",
        {
            "command": "gen-data",
            "experiment": experiment,
            "seed": seed,
            "trajectories": len(trajectories),
            "sample_count": sample_count,
            "rows": rows,
            "checksums": checksums,
            "skipped": skipped,
            "gen": {"dt": sim.dt, "duration": sim.duration,
                    "record_stride": sim.record_stride},
        },
    )
    print(f"wrote {len(files)} agent datasets to {out_dir}")
    return 0


def cmd_train(config: dict, out_dir: Path) -> int:
    _check_keys(
        config,
        {"datasets_dir", "agents", "epochs", "loss_target", "batch_size",
         "seed", "dtype", "hidden"},
        "train config",
    )
    ds_dir = Path(config.get("datasets_dir", ""))
    if not ds_dir.is_dir():
        raise ConfigError(f"datasets_dir {ds_dir} does not exist")
    seed = int(config.get("seed", 0))
    epochs = int(config.get("epochs", 500))
    loss_target = float(config.get("loss_target", 5e-4))
    batch_size = int(config.get("batch_size", 256))
    dtype = np.dtype(config.get("dtype", "float32"))
    hidden = list(config.get("hidden", DEFAULT_HIDDEN))

    paths = sorted(ds_dir.glob("dataset_agent*.npz"))
    if not paths:
        raise ConfigError(f"no dataset files found in {ds_dir}")
    agents = config.get("agents")
    out_dir.mkdir(parents=True, exist_ok=True)
    all_converged = True
    results = {}
    for path in paths:
        ds = load_dataset(path)
        if agents and ds.agent not in agents:
            continue
        model = MlpController(
            ds.inputs.shape[1], hidden, ds.state_dim,
            seed=seed + ds.agent, dtype=dtype,
        )
        res = train(
            model, ds.inputs, ds.targets,
            epochs=epochs, loss_target=loss_target,
            batch_size=batch_size, seed=seed + 1000 + ds.agent,
        )
        wname = f"weights_agent{ds.agent}.npz"
        save_weights(model, out_dir / wname)
        with open(out_dir / f"loss_history_agent{ds.agent}.csv", "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["epoch", "loss"])
            for e, v in enumerate(res.loss_history, start=1):
                writer.writerow([e, repr(v)])
        results[ds.agent] = {
            "weights": wname,
            "epochs_run": res.epochs_run,
            "best_loss": res.best_loss,
            "converged": res.converged,
            "warning": res.warning,
        }
        all_converged &= res.converged
        print(
            f"agent {ds.agent}: best loss {res.best_loss:.3e} "
            f"after {res.epochs_run} epochs (converged={res.converged})"
        )
    write_manifest(
        out_dir / "train_manifest.json",
        {
            "command": "train",
            "seed": seed,
            "epochs_cap": epochs,
            "loss_target": loss_target,
            "batch_size": batch_size,
            "dtype": dtype.name,
            "hidden": hidden,
            "agents": {str(k): v for k, v in results.items()},
        },
    )
    return 0 if all_converged else 3


def _load_ensemble(weights_dir: Path, n_agents: int) -> MlpEnsemble:
    models = []
    for agent in range(1, n_agents + 1):
        path = weights_dir / f"weights_agent{agent}.npz"
        if not path.exists():
            raise ConfigError(f"missing weight file {path}")
        models.append(load_weights(path))
    return MlpEnsemble(models)


def _build_policy(kind: str, gains: GainSet, weights_dir, n_agents: int):
    kind = PolicyKind(kind)
    if kind == PolicyKind.ORACLE:
        return OraclePolicy()
    ensemble = None
    if kind in (PolicyKind.ADAPTIVE, PolicyKind.NON_ADAPTIVE):
        if not weights_dir:
            raise ConfigError(f"policy {kind.value} requires weights_dir")
        ensemble = _load_ensemble(Path(weights_dir), n_agents)
    return DistributedPolicy(kind, gains, ensemble)


def cmd_simulate(config: dict, out_dir: Path) -> int:
    _check_keys(
        config,
        {"experiment", "instance_file", "instance_index", "policy", "weights_dir",
         "sim", "monitor", "gains", "d_hat_init", "seed", "full"},
        "simulate config",
    )
    seed = int(config.get("seed", 0))
    policy_name = config.get("policy", "adaptive")
    mon = _monitor_from(config.get("monitor"))
    d_hat_init = float(config.get("d_hat_init", 0.1))
    out_dir.mkdir(parents=True, exist_ok=True)

    experiment = config.get("experiment")
    schedule = None
    if config.get("instance_file"):
        with open(config["instance_file"]) as fh:
            inst = FormationInstance.from_dict(json.load(fh))
        duration = 40.0
    elif experiment == "exp1":
        inst, _ = xp.make_exp1(seed=seed)
        duration = xp.EXP1_HORIZON
    elif experiment == "exp2":
        schedule, _ = xp.make_exp2(seed=seed)
        inst = None
        duration = xp.EXP2_HORIZON
    elif experiment == "exp3":
        spec = _exp3_spec(config, seed, bool(config.get("full", False)))
        instances = xp.make_exp3(spec)
        inst = instances[int(config.get("instance_index", 0))]
        duration = spec.horizon
    else:
        raise ConfigError("simulate needs an experiment or an instance_file")

    sim = _sim_from(config.get("sim"), "sim", dt=1e-3, duration=duration,
                    record_stride=10)
    n_agents = inst.n_agents if inst is not None else schedule.topology.n_agents
    gains = _gains_from(config.get("gains"), n_agents)
    policy = _build_policy(policy_name, gains, config.get("weights_dir"), n_agents)

    if schedule is not None:
        records = xp.run_schedule(schedule, policy, sim, mon, gains, d_hat_init)
        merged = xp.merge_records(records)
        for k, rec in enumerate(records):
            write_record_csv(rec, out_dir / f"record_seg{k}.csv")
        write_record_csv(merged, out_dir / "record.csv")
        rec = merged
    else:
        rec = run(inst, policy, sim, mon, gains, d_hat_init=d_hat_init)
        write_record_csv(rec, out_dir / "record.csv")
    lyap = lyapunov_diagnostics(rec)
    write_summary_json(rec, out_dir / "summary.json", extra={"lyapunov": lyap})
    print(
        f"policy {policy_name}: status {rec.status}, "
        f"final error metric {rec.error_metric()[-1]:.4g}"
    )
    return 0


def cmd_evaluate(config: dict, out_dir: Path) -> int:
    _check_keys(
        config,
        {"experiment", "policies", "weights_dir", "sim", "monitor", "gains",
         "seed", "full", "d_hat_init"},
        "evaluate config",
    )
    if config.get("experiment", "exp3") != "exp3":
        raise ConfigError("the comparison study is defined for exp3")
    seed = int(config.get("seed", 0))
    full = bool(config.get("full", False))
    spec = _exp3_spec(config, seed, full)
    instances = xp.make_exp3(spec)
    _, test_insts = xp.split_exp3(instances, spec)
    mon = _monitor_from(config.get("monitor"))
    gains = _gains_from(config.get("gains"), 5)
    sim = _sim_from(config.get("sim"), "sim", dt=spec.eval_dt,
                    duration=spec.horizon, record_stride=50)
    kinds = config.get("policies", ["adaptive", "no_nn", "non_adaptive"])
    policies = {
        k: _build_policy(k, gains, config.get("weights_dir"), 5) for k in kinds
    }
    report, records = xp.evaluate_comparison(
        test_insts, policies, sim, mon, gains,
        d_hat_init=float(config.get("d_hat_init", 0.1)),
    )
    out_dir.mkdir(parents=True, exist_ok=True)
    with open(out_dir / "comparison.json", "w") as fh:
        json.dump(report.to_dict(), fh, indent=2, sort_keys=True)
        fh.write("\n")
    for kind, recs in records.items():
        for idx, rec in enumerate(recs):
            rdir = out_dir / "runs" / f"instance{idx:03d}" / kind
            rdir.mkdir(parents=True, exist_ok=True)
            write_record_csv(rec, rdir / "record.csv")
            write_summary_json(rec, rdir / "summary.json")
    write_manifest(
        out_dir / "evaluate_manifest.json",
        {
            "command": "evaluate",
            "seed": seed,
            "full": full,
            "policies": kinds,
            "test_instances": len(test_insts),
            "sim": {"dt": sim.dt, "duration": sim.duration,
                    "record_stride": sim.record_stride},
        },
    )
    for kind in kinds:
        d = report.per_policy[kind]
        print(
            f"{kind}: mean final {d['mean_final']:.4g}, "
            f"divergences {d['divergences']}/{d['runs']}"
        )
    return 0


def cmd_plot(config: dict, out_dir: Path) -> int:
    from . import plots
    from .topology import Topology

    _check_keys(
        config,
        {"record", "run_dir", "comparison", "snapshot_times", "topology"},
        "plot config",
    )
    out_dir.mkdir(parents=True, exist_ok=True)
    wrote = []
    record_path = config.get("record")
    if config.get("run_dir"):
        cand = Path(config["run_dir"]) / "record.csv"
        if not cand.exists():
            raise ConfigError(f"missing record at {cand}")
        record_path = cand
    if record_path:
        record_path = Path(record_path)
        if not record_path.exists():
            raise ConfigError(f"missing record file {record_path}")
        rec = read_record_csv(record_path)
        if config.get("topology"):
            topo = Topology.from_dict(config["topology"])
        else:
            topo = _infer_topology(rec)
        times = config.get("snapshot_times")
        wrote.append(plots.save_figure(
            plots.snapshot_figure(rec, topo, times), out_dir / "snapshots"))
        wrote.append(plots.save_figure(plots.error_figure(rec), out_dir / "errors"))
        wrote.append(plots.save_figure(
            plots.adaptation_figure(rec), out_dir / "adaptation_ch"))
        wrote.append(plots.save_figure(plots.control_figure(rec), out_dir / "controls"))
        wrote.append(plots.save_figure(plots.lyapunov_figure(rec), out_dir / "lyapunov"))
    if config.get("comparison"):
        path = Path(config["comparison"])
        if not path.exists():
            raise ConfigError(f"missing comparison file {path}")
        with open(path) as fh:
            report = json.load(fh)
        wrote.append(plots.save_figure(
            plots.comparison_figure(report), out_dir / "comparison"))
    if not wrote:
        raise ConfigError("plot config names neither a record nor a comparison")
    print(f"wrote {len(wrote)} figures to {out_dir}")
    return 0


def _infer_topology(rec) -> "Topology":
    """Fallback when a plot config does not carry the graph: exp1's topology
    fits any 5-agent record; otherwise edges are unknown and omitted."""
    from .topology import Topology

    if rec.n_agents == 5:
        return xp.exp1_topology()
    return Topology.create(
        rec.n_agents, [], [1] * rec.n_agents, state_dim=rec.state_dim
    )


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="neuroform",
        description="learning-based distributed formation control toolkit",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    for name in ("gen-data", "train", "simulate", "evaluate", "plot"):
        p = sub.add_parser(name)
        p.add_argument("--config", type=Path, help="JSON config file")
        p.add_argument("--out", type=Path, required=True, help="output directory")
        p.add_argument("--seed", type=int, default=None, help="override config seed")
        p.add_argument("--full", action="store_true",
                       help="paper-scale randomized study (100/20 split)")
    args = parser.parse_args(argv)

    config = {}
    if args.config:
        if not args.config.exists():
            print(f"config file {args.config} not found", file=sys.stderr)
            return 2
        with open(args.config) as fh:
            config = json.load(fh)
    if args.seed is not None:
        config["seed"] = args.seed
    if args.full:
        config["full"] = True

    handler = {
        "gen-data": cmd_gen_data,
        "train": cmd_train,
        "simulate": cmd_simulate,
        "evaluate": cmd_evaluate,
        "plot": cmd_plot,
    }[args.command]
    try:
        return handler(config, args.out)
    except NeuroformError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
