"""Command-line interface: gen, train, simulate, analyze, evaluate, gradcheck."""
from __future__ import annotations

import argparse
import json
import logging
import os
import sys
import time

import numpy as np

from . import __version__
from .analysis import find_fixed_points, floquet_multipliers, search_cycles, write_report
from .benchgen import Dataset, gen_lif, gen_lorenz, subsample_irregular
from .errors import CPLRNNError, NonFiniteLoss
from .evaluation import evaluate_model, initial_state
from .events import SolverError, solve_trajectory
from .gradcheck import run_gradcheck, run_tangential_injection
from .metrics import MetricConfig
from .model import ModelParams, init_params
from .training import TrainConfig, train

OUT_DIR_ENV = "CPLRNN_OUT_DIR"

EXIT_USAGE = 2
EXIT_DIVERGED = 3
EXIT_SOLVER = 4
EXIT_GRADCHECK = 5

log = logging.getLogger("cplrnn")


class UsageError(Exception):
    pass


def _write_manifest(args, out_dir, inputs, outputs, started, extra=None):
    manifest = {
        "command": args.command,
        "argv": sys.argv[1:],
        "config": getattr(args, "config", None),
        "seed": args.seed,
        "jobs": args.jobs,
        "inputs": inputs,
        "outputs": outputs,
        "version": __version__,
        "wall_time": time.time() - started,
    }
    if extra:
        manifest.update(extra)
    path = os.path.join(out_dir, f"manifest_{args.command}.json")
    with open(path, "w") as fh:
        json.dump(manifest, fh, indent=2)
    return path


def _require_file(path, what):
    if path is None or not os.path.isfile(path):
        raise UsageError(f"{what} not found: {path}")


def _floats(text):
    return [float(v) for v in text.split(",")] if text else None


# ---------------------------------------------------------------------------

def cmd_gen(args, out_dir):
    rng = np.random.default_rng(args.seed)
    if args.system == "lorenz":
        z0 = _floats(args.z0) or [1.0, 1.0, 1.0]
        ds = gen_lorenz(args.sigma, args.rho, args.beta, args.dt, args.T, z0, args.time_scale,
                        args.transient, seed=args.seed)
    else:
        ds = gen_lif(args.R, args.C, args.V_th, args.V_reset, args.I, args.dt, args.T,
                     seed=args.seed)
    outputs = []
    if args.fraction < 1.0:
        full = os.path.join(out_dir, f"{args.name}_full.csv")
        ds.save(full)
        outputs.append(full)
        ds = subsample_irregular(ds, args.fraction, rng)
    path = os.path.join(out_dir, f"{args.name}.csv")
    ds.save(path)
    outputs.append(path)
    return [], outputs, {}


def cmd_train(args, out_dir):
    _require_file(args.data, "dataset")
    cfg_dict = {}
    if args.config:
        _require_file(args.config, "config")
        with open(args.config) as fh:
            cfg_dict = json.load(fh)
    if args.epochs is not None:
        cfg_dict["epochs"] = args.epochs
    if args.checkpoint_every is not None:
        cfg_dict["checkpoint_every"] = args.checkpoint_every
    try:
        cfg = TrainConfig.from_dict(cfg_dict)
    except (TypeError, ValueError) as err:
        raise UsageError(f"bad config: {err}") from err
    ds = Dataset.load(args.data)
    rng = np.random.default_rng(args.seed)
    if args.init:
        _require_file(args.init, "initial model")
        params = ModelParams.load(args.init)
    else:
        params = init_params(cfg.M, cfg.P, ds.N, rng, w_scale=cfg.w_scale)
    with open(os.path.join(out_dir, "train_config.json"), "w") as fh:
        json.dump(cfg.to_dict(), fh, indent=2)

    def progress(rec, _):
        log.info("epoch %d loss %.6g lr %.3g discarded %d", rec.epoch, rec.loss, rec.lr,
                 rec.discarded_segments)

    train(params, ds.times, ds.values, cfg, rng, out_dir=out_dir, jobs=args.jobs, progress=progress)
    outputs = [os.path.join(out_dir, f) for f in ("model.json", "loss_history.csv")]
    return [args.data, args.config], outputs, {"train_config": cfg.to_dict()}


def _query_times(args):
    if args.times:
        _require_file(args.times, "times file")
        t = np.loadtxt(args.times, delimiter=",", ndmin=2)
        if t.shape[1] > 1:
            t = t[:, 0]
        return np.ravel(t)
    return np.linspace(args.t0, args.t_end, args.n)


def cmd_simulate(args, out_dir):
    _require_file(args.model, "model")
    params = ModelParams.load(args.model)
    inputs = [args.model]
    if args.from_data:
        _require_file(args.from_data, "dataset")
        ds = Dataset.load(args.from_data)
        z0 = initial_state(params, ds.values[args.index])
        inputs.append(args.from_data)
    elif args.z0:
        z0 = np.array(_floats(args.z0))
        if z0.size != params.M:
            raise UsageError(f"--z0 needs {params.M} values")
    else:
        z0 = np.zeros(params.M)
    try:
        times = _query_times(args)
    except ValueError as err:
        raise UsageError(str(err)) from err
    traj_path = os.path.join(out_dir, "trajectory.csv")
    ev_path = os.path.join(out_dir, "events.csv")
    try:
        traj = solve_trajectory(params, z0, times, max_events=args.max_events)
    except SolverError as err:
        traj = err.context["trajectory"]
        traj.to_csv(traj_path, ev_path)
        raise
    except ValueError as err:
        raise UsageError(str(err)) from err
    traj.to_csv(traj_path, ev_path)
    return inputs, [traj_path, ev_path], {"events": len(traj.events), "truncated": traj.truncated}


def cmd_analyze(args, out_dir):
    _require_file(args.model, "model")
    params = ModelParams.load(args.model)
    rng = np.random.default_rng(args.seed)
    do_all = not (args.fp or args.cycles or args.floquet)
    fps, cycles = [], []
    if args.fp or do_all:
        fps = find_fixed_points(params, restarts=args.restarts, rng=rng)
    if args.cycles or args.floquet or do_all:
        z0 = np.zeros(params.M)
        if args.z0:
            z0 = np.array(_floats(args.z0))
        else:
            z0[:params.N] = rng.normal(0, 1, params.N)
        times = np.linspace(0.0, args.sim_length, 2)
        try:
            traj = solve_trajectory(params, z0, times, max_events=args.max_events)
        except SolverError as err:
            traj = err.context["trajectory"]
        cycles = search_cycles(params, traj)
        if args.floquet:
            for c in cycles:
                c.multipliers = floquet_multipliers(params, c.regions, c.flight_times)
    path = os.path.join(out_dir, "analysis.json")
    write_report(path, fps, cycles)
    return [args.model], [path], {"n_fixed_points": len(fps), "n_cycles": len(cycles)}


def cmd_evaluate(args, out_dir):
    _require_file(args.data, "truth dataset")
    truth = Dataset.load(args.data)
    cfg = MetricConfig(bins=args.bins, smoothing=args.smoothing, mae_horizon=args.horizon)
    inputs = [args.data]
    rng = np.random.default_rng(args.seed)
    if args.generated:
        _require_file(args.generated, "generated trajectory")
        gen = np.loadtxt(args.generated, delimiter=",", skiprows=1, ndmin=2)[:, 1:truth.N + 1]
        params = ModelParams.load(args.model) if args.model else None
        res = evaluate_model(params, truth.times, truth.values, cfg, rng=rng, generated=gen,
                             n_windows=args.windows)
        inputs.append(args.generated)
    else:
        _require_file(args.model, "model")
        params = ModelParams.load(args.model)
        res = evaluate_model(params, truth.times, truth.values, cfg, rng=rng, n_windows=args.windows)
        inputs.append(args.model)
    path = os.path.join(out_dir, "metrics.json")
    with open(path, "w") as fh:
        json.dump(res.to_dict(), fh, indent=2)
    return inputs, [path], {}


def cmd_gradcheck(args, out_dir):
    rng = np.random.default_rng(args.seed)
    model = None
    inputs = []
    if args.model:
        _require_file(args.model, "model")
        model = ModelParams.load(args.model)
        inputs.append(args.model)
    rep = run_gradcheck(args.n_models, rng, model=model)
    out = rep.to_dict()
    if args.inject_tangential:
        out["injected_discards"] = run_tangential_injection()
        out["discarded_segments"] += out["injected_discards"]
    path = os.path.join(out_dir, "gradcheck.json")
    with open(path, "w") as fh:
        json.dump(out, fh, indent=2)
    print("param  max_rel_error")
    for k, v in out["max_rel_error"].items():
        print(f"{k:6s} {v:.3e}")
    print(f"models={out['n_models']} failures={out['n_failures']} "
          f"discarded={out['discarded_segments']}")
    return inputs, [path], {"passed": rep.passed, "_exit": 0 if rep.passed else EXIT_GRADCHECK}


# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="cplrnn", description=__doc__)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--jobs", type=int, default=1)
    p.add_argument("--out-dir", default=None,
                   help=f"output directory (default: ${OUT_DIR_ENV} or ./runs)")
    p.add_argument("--log-level", default="INFO")
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen", help="generate a benchmark dataset")
    gs = g.add_subparsers(dest="system", required=True)
    lz = gs.add_parser("lorenz")
    lz.add_argument("--sigma", type=float, default=10.0)
    lz.add_argument("--rho", type=float, default=28.0)
    lz.add_argument("--beta", type=float, default=8.0 / 3.0)
    lz.add_argument("--dt", type=float, default=1e-2)
    lz.add_argument("--T", type=int, default=100_000)
    lz.add_argument("--time-scale", type=float, default=100.0)
    lz.add_argument("--transient", type=int, default=1000)
    lz.add_argument("--z0", default=None, help="comma-separated initial state")
    lif = gs.add_parser("lif")
    lif.add_argument("--R", type=float, default=5.0)
    lif.add_argument("--C", type=float, default=1e-3)
    lif.add_argument("--V-th", dest="V_th", type=float, default=1.0)
    lif.add_argument("--V-reset", dest="V_reset", type=float, default=0.0)
    lif.add_argument("--I", type=float, default=0.25)
    lif.add_argument("--dt", type=float, default=1.6e-4)
    lif.add_argument("--T", type=int, default=1000)
    for sp in (lz, lif):
        sp.add_argument("--fraction", type=float, default=1.0)
        sp.add_argument("--name", default=None)

    t = sub.add_parser("train", help="train a model with sparse teacher forcing")
    t.add_argument("--data", required=True)
    t.add_argument("--config", default=None)
    t.add_argument("--epochs", type=int, default=None)
    t.add_argument("--checkpoint-every", type=int, default=None)
    t.add_argument("--init", default=None, help="start from this checkpoint")

    s = sub.add_parser("simulate", help="solve a trajectory")
    s.add_argument("--model", required=True)
    s.add_argument("--z0", default=None)
    s.add_argument("--from-data", default=None)
    s.add_argument("--index", type=int, default=0)
    s.add_argument("--times", default=None, help="CSV with query times in the first column")
    s.add_argument("--t0", type=float, default=0.0)
    s.add_argument("--t-end", type=float, default=10.0)
    s.add_argument("--n", type=int, default=1001)
    s.add_argument("--max-events", type=int, default=100_000)

    a = sub.add_parser("analyze", help="fixed points, cycles, Floquet multipliers")
    a.add_argument("--model", required=True)
    a.add_argument("--fp", action="store_true")
    a.add_argument("--cycles", action="store_true")
    a.add_argument("--floquet", action="store_true")
    a.add_argument("--restarts", type=int, default=1000)
    a.add_argument("--sim-length", type=float, default=2000.0)
    a.add_argument("--max-events", type=int, default=100_000)
    a.add_argument("--z0", default=None)

    e = sub.add_parser("evaluate", help="reconstruction metrics")
    e.add_argument("--data", required=True, help="truth dataset (regular grid)")
    e.add_argument("--model", default=None)
    e.add_argument("--generated", default=None, help="trajectory CSV instead of a model")
    e.add_argument("--smoothing", type=float, default=20.0)
    e.add_argument("--bins", type=int, default=30)
    e.add_argument("--horizon", type=int, default=25)
    e.add_argument("--windows", type=int, default=100)

    gc = sub.add_parser("gradcheck", help="finite-difference gradient verification")
    gc.add_argument("--n-models", type=int, default=200)
    gc.add_argument("--model", default=None)
    gc.add_argument("--inject-tangential", action="store_true")
    return p


COMMANDS = {"gen": cmd_gen, "train": cmd_train, "simulate": cmd_simulate,
            "analyze": cmd_analyze, "evaluate": cmd_evaluate, "gradcheck": cmd_gradcheck}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=getattr(logging, str(args.log_level).upper(), logging.INFO),
                        format="%(levelname)s %(name)s: %(message)s")
    if args.jobs < 1:
        parser.error("--jobs must be >= 1")
    if args.jobs > 1:
        log.warning("--jobs > 1 changes the gradient reduction order; results may differ "
                    "bitwise from --jobs 1")
    if args.command == "gen" and args.name is None:
        args.name = args.system
    out_dir = args.out_dir or os.environ.get(OUT_DIR_ENV) or "runs"
    os.makedirs(out_dir, exist_ok=True)
    started = time.time()
    code = 0
    try:
        inputs, outputs, extra = COMMANDS[args.command](args, out_dir)
        code = extra.pop("_exit", 0)
    except UsageError as err:
        parser.print_usage(sys.stderr)
        print(f"error: {err}", file=sys.stderr)
        return EXIT_USAGE
    except NonFiniteLoss as err:
        log.error("training diverged: %s", err)
        _write_manifest(args, out_dir, [], [os.path.join(out_dir, "last_finite.json")], started,
                        {"error": err.code})
        return EXIT_DIVERGED
    except CPLRNNError as err:
        log.error("solver error %s: %s", err.code, err)
        _write_manifest(args, out_dir, [], [], started, {"error": err.code})
        return EXIT_SOLVER
    _write_manifest(args, out_dir, inputs, outputs, started, extra)
    return code


if __name__ == "__main__":
    sys.exit(main())
