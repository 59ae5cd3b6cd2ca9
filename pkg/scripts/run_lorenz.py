"""Desk-scale Lorenz-63 reconstruction: train several seeds, score them, locate fixed points.

Usage: python scripts/run_lorenz.py [--seeds 0 1 2] [--epochs 300] [--out artifacts/lorenz]

Each seed directory receives model.json, loss_history.csv, checkpoints/, metrics.json and
analysis.json; summary.json collects all seeds and marks the best one.
"""
from __future__ import annotations

import argparse
import json
import logging
import os
import time

import numpy as np

from cplrnn.analysis import find_fixed_points, write_report
from cplrnn.benchgen import gen_lorenz, lorenz_equilibria
from cplrnn.errors import NonFiniteLoss
from cplrnn.evaluation import evaluate_model
from cplrnn.metrics import MetricConfig
from cplrnn.model import init_params
from cplrnn.training import TrainConfig, train

log = logging.getLogger("run_lorenz")


def fixed_point_distances(fps, N: int = 3) -> list[float]:
    """Distance from each analytic equilibrium to the nearest real model fixed point."""
    eq = lorenz_equilibria()
    pts = np.array([fp.z_star[:N] for fp in fps]) if fps else np.empty((0, N))
    return [float(np.min(np.linalg.norm(pts - e, axis=1))) if len(pts) else float("inf")
            for e in eq]


def run_seed(seed: int, ds, cfg: TrainConfig, out: str, jobs: int) -> dict:
    seed_dir = os.path.join(out, f"seed_{seed}")
    os.makedirs(seed_dir, exist_ok=True)
    rng = np.random.default_rng(seed)
    params = init_params(cfg.M, cfg.P, ds.N, rng, w_scale=cfg.w_scale)
    started = time.time()

    def progress(rec, _):
        log.info("seed %d epoch %d loss %.5g lr %.3g discarded %d (%.0fs)", seed, rec.epoch,
                 rec.loss, rec.lr, rec.discarded_segments, time.time() - started)

    try:
        params, _ = train(params, ds.times, ds.values, cfg, rng, out_dir=seed_dir, jobs=jobs,
                          progress=progress)
    except NonFiniteLoss as err:
        log.error("seed %d diverged at epoch %s", seed, err.context.get("epoch"))
        return {"seed": seed, "diverged": True, "train_seconds": time.time() - started}
    train_seconds = time.time() - started
    res = evaluate_model(params, ds.times, ds.values, MetricConfig(smoothing=20.0),
                         rng=np.random.default_rng(seed))
    with open(os.path.join(seed_dir, "metrics.json"), "w") as fh:
        json.dump(res.to_dict(), fh, indent=2)
    fps = find_fixed_points(params, rng=np.random.default_rng(seed))
    write_report(os.path.join(seed_dir, "analysis.json"), fps, [])
    dist = fixed_point_distances(fps)
    return {"seed": seed, "diverged": False, "d_stsp": res.d_stsp, "d_h": res.d_h, "mae": res.mae,
            "n_fixed_points": len(fps), "equilibrium_distances": dist,
            "train_seconds": train_seconds, "total_seconds": time.time() - started}


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--seeds", type=int, nargs="+", default=[0, 1, 2])
    ap.add_argument("--epochs", type=int, default=300)
    ap.add_argument("--T", type=int, default=100_000)
    ap.add_argument("--jobs", type=int, default=1)
    ap.add_argument("--out", default="artifacts/lorenz")
    args = ap.parse_args(argv)
    logging.basicConfig(level=logging.INFO, format="%(asctime)s %(message)s")
    os.makedirs(args.out, exist_ok=True)
    ds = gen_lorenz(T=args.T)
    ds.save(os.path.join(args.out, "lorenz.csv"))
    cfg = TrainConfig(M=20, P=10, epochs=args.epochs, checkpoint_every=50)
    with open(os.path.join(args.out, "train_config.json"), "w") as fh:
        json.dump(cfg.to_dict(), fh, indent=2)
    runs = []
    for seed in args.seeds:
        runs.append(run_seed(seed, ds, cfg, args.out, args.jobs))
        ok = [r for r in runs if not r["diverged"]]
        best = min(ok, key=lambda r: (r["d_stsp"], r["d_h"]))["seed"] if ok else None
        with open(os.path.join(args.out, "summary.json"), "w") as fh:
            json.dump({"epochs": args.epochs, "runs": runs, "best_seed": best}, fh, indent=2)
    log.info("summary: %s", json.dumps(runs))


if __name__ == "__main__":
    main()
