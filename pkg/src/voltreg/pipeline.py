"""End-to-end orchestration shared by the CLI and the test harness.

Each run_* function consumes a RunConfig, writes its artifacts (CSV + PNG +
JSON log) into an output directory, and returns the in-memory results.  Held
out evaluation days are split deterministically from (seed, n_days) so that
training and comparison commands agree without sharing state.
"""

from __future__ import annotations

import json
import logging
import os
import time
from dataclasses import asdict

import numpy as np

from . import report
from .config import RunConfig
from .ddpg import EvalReport, build_actor, evaluate, train
from .env import RewardConfig, SurrogateBackend, TrueModelBackend, VoltVarEnv
from .grid import load_feeder
from .nn import load_mlp, save_mlp
from .powerflow import Injection, ZBusSolver, solve_calls
from .profiles import (load_profiles_csv, ramp_profiles, synthetic_profiles)
from .surrogate import (evaluate_mae, generate_dataset, load_dataset_csv,
                        load_surrogate, save_dataset_csv, save_surrogate,
                        train_surrogate)

log = logging.getLogger(__name__)

DATASET_FILE = "dataset.csv"
SURROGATE_FILE = "surrogate.npz"


def _np_labels(feeder, indices=None):
    idx = range(feeder.nph) if indices is None else indices
    return ["%d%s" % feeder.node_phases[k] for k in idx]


def build_profiles(feeder, cfg: RunConfig):
    p = cfg.profiles
    if p.kind == "csv":
        if not p.csv_path:
            raise ValueError("profile kind csv needs csv_path")
        return load_profiles_csv(p.csv_path, feeder)
    if p.kind != "synthetic":
        raise ValueError("unknown profile kind %r" % p.kind)
    pf_tan = float(np.tan(np.arccos(p.power_factor)))
    return synthetic_profiles(feeder, p.n_days, seed=cfg.seed,
                              base_load_mw=tuple(p.base_load_mw),
                              pf_tan=pf_tan)


def split_days(n_days, n_test, seed):
    """Deterministic train/test day split; test days sampled uniformly."""
    if n_test >= n_days:
        raise ValueError("need more profile days than test days")
    rng = np.random.default_rng([seed, 0xE7A1])
    test = np.sort(rng.choice(n_days, size=n_test, replace=False))
    mask = np.ones(n_days, dtype=bool)
    mask[test] = False
    return np.flatnonzero(mask), test


def _write_json(path, obj):
    with open(path, "w") as fh:
        json.dump(obj, fh, indent=1, default=str)
        fh.write("\n")


def _actor_path(out_dir, backend):
    return os.path.join(out_dir, "actor_%s.npz" % backend)


# -- commands ---------------------------------------------------------------

def run_gen_data(cfg: RunConfig, out_dir):
    feeder = load_feeder(cfg.feeder)
    profiles = build_profiles(feeder, cfg)
    t0 = time.time()
    dataset, discarded = generate_dataset(
        feeder, profiles, cfg.data.n_samples, seed=cfg.seed,
        train_frac=cfg.data.train_frac)
    os.makedirs(out_dir, exist_ok=True)
    save_dataset_csv(dataset, feeder, os.path.join(out_dir, DATASET_FILE))
    _write_json(os.path.join(out_dir, "gen_log.json"), {
        "n_samples": cfg.data.n_samples,
        "discarded": discarded,
        "seed": cfg.seed,
        "elapsed_s": round(time.time() - t0, 3),
    })
    return dataset


def run_train_surrogate(cfg: RunConfig, out_dir, dataset=None):
    feeder = load_feeder(cfg.feeder)
    if dataset is None:
        ds_path = os.path.join(out_dir, DATASET_FILE)
        if os.path.exists(ds_path):
            dataset = load_dataset_csv(ds_path, feeder)
        else:
            dataset = run_gen_data(cfg, out_dir)
    t0 = time.time()
    model, losses = train_surrogate(dataset, feeder, cfg.surrogate)
    mae, per_node = evaluate_mae(model, dataset.p[dataset.test_idx],
                                 dataset.q[dataset.test_idx],
                                 dataset.v[dataset.test_idx])
    os.makedirs(out_dir, exist_ok=True)
    save_surrogate(model, os.path.join(out_dir, SURROGATE_FILE),
                   meta={"seed": cfg.seed, "test_mae": mae})
    report.save_loss_curve(losses,
                           os.path.join(out_dir, "surrogate_loss.csv"),
                           os.path.join(out_dir, "surrogate_loss.png"))
    report.save_error_hist(per_node,
                           _np_labels(feeder, feeder.nonslack_indices),
                           os.path.join(out_dir, "surrogate_error.csv"),
                           os.path.join(out_dir, "surrogate_error.png"))
    _write_json(os.path.join(out_dir, "surrogate_report.json"), {
        "test_mae": mae,
        "max_node_mae": float(per_node.max()),
        "first_epoch_mse": float(losses[0]),
        "final_epoch_mse": float(losses[-1]),
        "epochs": int(cfg.surrogate.epochs),
        "elapsed_s": round(time.time() - t0, 3),
    })
    return model, losses, mae, per_node


def make_env(feeder, profiles, cfg, backend_name, surrogate_model=None):
    reward = cfg.reward
    if backend_name == "surrogate":
        if surrogate_model is None:
            raise ValueError("surrogate backend needs a trained model")
        backend = SurrogateBackend(surrogate_model)
    elif backend_name == "truemodel":
        backend = TrueModelBackend(feeder)
    else:
        raise ValueError("unknown backend %r" % backend_name)
    return VoltVarEnv(feeder, profiles, backend, reward=reward)


def run_train_agent(cfg: RunConfig, out_dir, backend="surrogate",
                    surrogate_model=None, profiles=None):
    feeder = load_feeder(cfg.feeder)
    if profiles is None:
        profiles = build_profiles(feeder, cfg)
    if backend == "surrogate" and surrogate_model is None:
        surrogate_model = load_surrogate(os.path.join(out_dir, SURROGATE_FILE))
    env = make_env(feeder, profiles, cfg, backend, surrogate_model)
    train_days, _ = split_days(profiles.n_days, cfg.eval.test_days, cfg.seed)

    calls_before = solve_calls.count
    t0 = time.time()
    result = train(env, cfg.agent, seed=cfg.seed, days=train_days)
    elapsed = time.time() - t0
    solver_calls = solve_calls.count - calls_before

    os.makedirs(out_dir, exist_ok=True)
    save_mlp(result.actor, _actor_path(out_dir, backend),
             meta={"kind": "actor", "backend": backend, "seed": cfg.seed,
                   "state_dim": env.state_dim, "action_dim": env.action_dim})
    save_mlp(result.critic, os.path.join(out_dir, "critic_%s.npz" % backend),
             meta={"kind": "critic", "backend": backend, "seed": cfg.seed})
    report.save_reward_curve(
        result.returns,
        os.path.join(out_dir, "reward_curve_%s.csv" % backend),
        os.path.join(out_dir, "reward_curve_%s.png" % backend))
    _write_json(os.path.join(out_dir, "train_log_%s.json" % backend), {
        "backend": backend,
        "episodes": int(cfg.agent.episodes),
        "updates": result.updates,
        "sigma_final": result.sigma_final,
        "nonconverged_steps": result.nonconverged_steps,
        "powerflow_solver_calls": solver_calls,
        "elapsed_s": round(elapsed, 3),
    })
    return result, solver_calls


def load_actor(out_dir, backend):
    net, _, meta = load_mlp(_actor_path(out_dir, backend))
    if meta.get("kind") != "actor":
        raise ValueError("not an actor checkpoint: %s"
                         % _actor_path(out_dir, backend))
    return net


def run_compare(cfg: RunConfig, out_dir, actors=None, profiles=None):
    """Evaluate no-control and both trained agents on the true model over the
    held-out days; write the comparison table and voltage snapshots."""
    feeder = load_feeder(cfg.feeder)
    if profiles is None:
        profiles = build_profiles(feeder, cfg)
    if actors is None:
        actors = {"surrogate": load_actor(out_dir, "surrogate"),
                  "truemodel": load_actor(out_dir, "truemodel")}
    env = make_env(feeder, profiles, cfg, "truemodel")
    _, test_days = split_days(profiles.n_days, cfg.eval.test_days, cfg.seed)

    rows = [("no-control", None),
            ("ddpg-surrogate", actors["surrogate"]),
            ("ddpg-truemodel", actors["truemodel"])]
    reports, details = [], {}
    for name, actor in rows:
        rep, det = evaluate(actor, env, test_days, method=name)
        reports.append(rep)
        details[name] = det

    os.makedirs(out_dir, exist_ok=True)
    table = report.save_comparison_table(
        reports,
        os.path.join(out_dir, "compare_table.csv"),
        os.path.join(out_dir, "compare_table.txt"))

    # hour snapshot on the first evaluation day, all node-phases
    hour = cfg.eval.snapshot_hour
    snap = {name: details[name].v_mag[0, hour] for name, _ in rows}
    ns = feeder.nonslack_indices
    report.save_voltage_snapshot(
        {k: v[ns] for k, v in snap.items()}, _np_labels(feeder, ns),
        (cfg.reward.v_min, cfg.reward.v_max),
        os.path.join(out_dir, "voltage_snapshot.csv"),
        os.path.join(out_dir, "voltage_snapshot.png"),
        title="hour %d, day %d" % (hour, test_days[0]))

    # daily trace for the node-phase worst hit without control
    nc = details["no-control"].v_mag
    flat = np.nanmax(np.abs(nc[:, :, ns] - cfg.reward.v0), axis=(0, 1))
    worst = int(ns[int(np.argmax(flat))])
    trace = {name: details[name].v_mag[0, :, worst] for name, _ in rows}
    report.save_voltage_trace(
        np.arange(24), trace, (cfg.reward.v_min, cfg.reward.v_max),
        os.path.join(out_dir, "voltage_profile.csv"),
        os.path.join(out_dir, "voltage_profile.png"),
        xlabel="hour",
        title="node-phase %s, day %d" % (_np_labels(feeder, [worst])[0],
                                         test_days[0]))
    _write_json(os.path.join(out_dir, "compare_log.json"), {
        "test_days": [int(d) for d in test_days],
        "monitored_node_phase": _np_labels(feeder, [worst])[0],
        "rows": [asdict(r) for r in reports],
    })
    return reports, details, test_days


def run_fast_fluct(cfg: RunConfig, out_dir, actors=None, profiles=None):
    """Per-second cloud-transient rollout under the three methods."""
    feeder = load_feeder(cfg.feeder)
    if profiles is None:
        profiles = build_profiles(feeder, cfg)
    if actors is None:
        actors = {"surrogate": load_actor(out_dir, "surrogate"),
                  "truemodel": load_actor(out_dir, "truemodel")}
    ff = cfg.fast_fluct
    # lightest-load day gives the strongest over-voltage case
    day = int(np.argmin(profiles.p_load.sum(axis=(1, 2))))
    base_p, _, base_q = profiles.at(day, ff.hour)
    pl, pv, ql = ramp_profiles(feeder, base_p, base_q, seconds=ff.seconds,
                               p_high_mw=ff.p_high_mw, p_low_mw=ff.p_low_mw)

    env = make_env(feeder, profiles, cfg, "truemodel")
    from .env import State  # local import to avoid cycle at module load
    ns = feeder.nonslack_indices
    traces = {}
    latencies = {}
    for name, actor in (("no-control", None),
                        ("ddpg-surrogate", actors["surrogate"]),
                        ("ddpg-truemodel", actors["truemodel"])):
        v_rows = np.full((ff.seconds, feeder.nph), np.nan)
        lat = []
        for t in range(ff.seconds):
            state = State(p_load=pl[t], p_pv=pv[t], q_load=ql[t], hour=ff.hour)
            if actor is None:
                action = np.zeros(env.action_dim)
                lo, hi = feeder.svc_q_min_pu, feeder.svc_q_max_pu
                if env.action_dim > len(feeder.pvs):
                    action[len(feeder.pvs):] = np.where(
                        hi > lo, 2.0 * (0.0 - lo) / (hi - lo) - 1.0, 0.0)
            else:
                t0 = time.perf_counter()
                action = np.clip(actor.forward(env.flatten(state)), -1.0, 1.0)
                lat.append(time.perf_counter() - t0)
            res = env.step(state, action)
            if res.converged:
                v_rows[t] = res.v_mag
        traces[name] = v_rows
        latencies[name] = float(np.median(lat)) if lat else 0.0

    # monitor the node-phase that violates hardest without control
    over = np.nanmax(traces["no-control"][:, ns], axis=0)
    worst = int(ns[int(np.argmax(over))])
    label = _np_labels(feeder, [worst])[0]
    os.makedirs(out_dir, exist_ok=True)
    trace_cols = {name: traces[name][:, worst] for name in traces}
    report.save_voltage_trace(
        np.arange(ff.seconds), trace_cols,
        (cfg.reward.v_min, cfg.reward.v_max),
        os.path.join(out_dir, "fastfluct_trace.csv"),
        os.path.join(out_dir, "fastfluct_trace.png"),
        xlabel="second", title="node-phase %s" % label)

    in_bounds = {
        name: float(np.mean((trace_cols[name] >= cfg.reward.v_min)
                            & (trace_cols[name] <= cfg.reward.v_max)))
        for name in trace_cols}
    _write_json(os.path.join(out_dir, "fastfluct_report.json"), {
        "day": day,
        "hour": ff.hour,
        "monitored_node_phase": label,
        "in_bounds_fraction": in_bounds,
        "median_decision_latency_s": latencies,
    })
    return trace_cols, in_bounds, latencies


def run_pf(cfg: RunConfig, day=0, hour=12, stream=None):
    """Solve one profile hour with zero reactive control; CSV of |V| to the
    stream (stdout by default)."""
    import sys
    stream = stream or sys.stdout
    feeder = load_feeder(cfg.feeder)
    profiles = build_profiles(feeder, cfg)
    p_load, p_pv, q_load = profiles.at(day, hour)
    solver = ZBusSolver(feeder)
    sol = solver.solve(Injection(p_pv - p_load, -q_load))
    stream.write("bus,phase,v_mag_pu\n")
    for k, (bus, phase) in enumerate(feeder.node_phases):
        stream.write("%d,%s,%.10f\n" % (bus, phase, abs(sol.v[k])))
    if not sol.converged:
        raise RuntimeError("power flow did not converge (residual %.3e)"
                           % sol.residual)
    return sol
