"""Command-line entry point wiring all modules together.

Subcommands: weights, topo-dist, loss, gradcheck, train, eval, ablate.
Exit codes: 0 success, 2 configuration error, 3 numerical failure.
All randomness flows from the explicit --seed / config seed through
numpy's default_rng; TCDESC_THREADS caps ablation parallelism.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import json
import os
import sys

try:
    import tomllib
except ImportError:  # Python < 3.11
    import tomli as tomllib

import numpy as np

from . import weights as tw
from .core import DescriptorBatch, knn, load_descriptors
from .errors import (ConfigError, Divergence, HingeBoundary, SingularGram,
                     TCDescError, TieDetected, ToleranceExceeded)
from .grad import finite_difference_check
from .loss import LossConfig, tcdesc_loss
from .metrics import evaluate_batch
from .topology import batch_topology_distance
from .trainer import (EmbeddingNet, TrainConfig, generate_pairs, save_model,
                      train)

HEAT_T_PRESETS = (0.1, 0.5, 1.0, 5.0, 10.0)
FIXED_LAMBDA_GRID = (0.05, 0.1, 0.2, 0.3, 0.4, 0.5)


# ---------------------------------------------------------------------------
# config files


def _load_config(path):
    try:
        if str(path).endswith(".toml"):
            with open(path, "rb") as fh:
                return tomllib.load(fh)
        with open(path) as fh:
            return json.load(fh)
    except (OSError, ValueError, tomllib.TOMLDecodeError) as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc


def _take(section, name, known):
    unknown = set(section) - set(known)
    if unknown:
        raise ConfigError(f"unknown keys in [{name}]: {sorted(unknown)}")
    return {k: section[k] for k in known if k in section}


def _parse_experiment_config(raw):
    known_top = {"seed", "data", "net", "train", "loss", "grid"}
    unknown = set(raw) - known_top
    if unknown:
        raise ConfigError(f"unknown top-level config keys: {sorted(unknown)}")
    data = _take(raw.get("data", {}), "data",
                 ("n_total", "d_in", "n_clusters", "sigma", "cluster_spread"))
    net = _take(raw.get("net", {}), "net", ("hidden", "d_out"))
    train_kw = _take(raw.get("train", {}), "train",
                     ("epochs", "batch_size", "lr_start", "momentum",
                      "weight_decay"))
    loss_kw = _take(raw.get("loss", {}), "loss",
                    ("margin", "k", "gamma", "weight_kind", "fixed_lambda",
                     "ridge_eps", "heat_t", "lambda_batch_mean"))
    grid = _take(raw.get("grid", {}), "grid",
                 ("k", "gamma", "kinds", "heat_t", "lambda"))
    return {
        "seed": int(raw.get("seed", 0)),
        "data": {"n_total": 512, "d_in": 24, "n_clusters": 32,
                 "sigma": 0.25, "cluster_spread": 1.0, **data},
        "net": {"hidden": 48, "d_out": 32, **net},
        "train": train_kw,
        "loss": loss_kw,
        "grid": grid,
    }


def _build_loss_cfg(loss_kw):
    try:
        return LossConfig(**loss_kw)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"bad loss config: {exc}") from exc


def _run_training(cfg):
    data = generate_pairs(seed=cfg["seed"], **cfg["data"])
    net = EmbeddingNet.create(
        (cfg["data"]["d_in"], cfg["net"]["hidden"], cfg["net"]["d_out"]),
        np.random.default_rng(cfg["seed"] + 1))
    loss_cfg = _build_loss_cfg(cfg["loss"])
    try:
        train_cfg = TrainConfig(loss_cfg=loss_cfg, seed=cfg["seed"],
                                **cfg["train"])
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"bad train config: {exc}") from exc
    return train(net, data, train_cfg)


# ---------------------------------------------------------------------------
# subcommands


def _cmd_weights(args):
    batch = load_descriptors(args.desc)
    writer = csv.writer(sys.stdout)
    writer.writerow(["center_index", "neighbor_index", "weight"])
    for set_name, x in (("a", batch.a_set), ("p", batch.p_set)):
        if set_name == "p" and not args.both_sets:
            break
        for i in range(batch.n):
            nb = knn(x, i, args.k)
            if args.kind == tw.HARD:
                w = tw.hard_weights(nb)
            elif args.kind == tw.HARD_PROXY:
                w = tw.hard_proxy_weights(x[i], nb)
            elif args.kind == tw.HEAT_KERNEL:
                w = tw.heat_kernel_weights(x[i], nb, args.t)
            else:
                w = tw.linear_combination_weights(x[i], nb, args.ridge)
            for j, wj in zip(nb.neighbor_indices, w.weights):
                writer.writerow([i, int(j), f"{wj:.12g}"])
    return 0


def _cmd_topo_dist(args):
    batch = load_descriptors(args.desc)
    report = batch_topology_distance(batch, args.k, kind=args.kind,
                                     t=args.t, ridge_eps=args.ridge)
    writer = csv.writer(sys.stdout)
    writer.writerow(["pair_index", "distance"])
    for i, value in enumerate(report.per_pair):
        writer.writerow([i, f"{value:.12g}"])
    writer.writerow(["mean", f"{report.mean:.12g}"])
    return 0


def _cmd_loss(args):
    batch = load_descriptors(args.desc)
    cfg = LossConfig(margin=args.margin, k=args.k, gamma=args.gamma,
                     weight_kind=args.kind, fixed_lambda=args.fixed_lambda,
                     heat_t=args.t, ridge_eps=args.ridge)
    report = tcdesc_loss(batch, cfg)
    print(json.dumps({"loss": report.loss}))
    for pair in report.per_pair:
        print(json.dumps(dataclasses.asdict(pair)))
    return 0


def _cmd_gradcheck(args):
    rng = np.random.default_rng(args.seed)
    batch = DescriptorBatch.from_raw(rng.normal(size=(args.n, args.d)),
                                     rng.normal(size=(args.n, args.d)))
    cfg = LossConfig(k=args.k, gamma=args.gamma, weight_kind=args.kind,
                     heat_t=args.t)
    try:
        rep = finite_difference_check(batch, cfg, h=args.h, tol=args.tol)
    except ToleranceExceeded as exc:
        print(f"FAIL: {exc}")
        return 3
    print(f"max abs deviation: {rep.max_abs:.3e}")
    print(f"max rel deviation: {rep.max_rel:.3e}")
    print("PASS")
    return 0


def _cmd_train(args):
    cfg = _parse_experiment_config(_load_config(args.config))
    net, log = _run_training(cfg)
    if args.out:
        save_model(args.out, net)
    columns = ["epoch", "loss", "mean_dE", "mean_dT", "mean_m_over_k", "fpr95"]
    out = open(args.log, "w", newline="") if args.log else sys.stdout
    try:
        writer = csv.writer(out)
        writer.writerow(columns)
        for entry in log:
            writer.writerow([entry[c] for c in columns])
    finally:
        if args.log:
            out.close()
    return 0


def _cmd_eval(args):
    batch = load_descriptors(args.desc)
    report = evaluate_batch(batch, args.k)
    print(json.dumps(dataclasses.asdict(report)))
    return 0


def _ablate_cells(cfg):
    grid = cfg["grid"]
    ks = grid.get("k", [16, 32, 64])
    gammas = grid.get("gamma", [0.5, 1.0, 2.0])
    kinds = grid.get("kinds", [tw.HARD, tw.HARD_PROXY, tw.HEAT_KERNEL,
                               tw.LINEAR_COMBINATION])
    heat_ts = grid.get("heat_t", list(HEAT_T_PRESETS))
    lambdas = grid.get("lambda", ["adaptive"] + list(FIXED_LAMBDA_GRID))
    cells = []
    for k in ks:
        for gamma in gammas:
            for kind in kinds:
                ts = heat_ts if kind == tw.HEAT_KERNEL else [1.0]
                for t in ts:
                    for lam in lambdas:
                        cells.append((k, gamma, kind, t, lam))
    return cells


def _run_cell(packed):
    cfg, (k, gamma, kind, t, lam) = packed
    loss_kw = dict(cfg["loss"])
    loss_kw.update(k=k, gamma=gamma, weight_kind=kind, heat_t=t,
                   fixed_lambda=None if lam == "adaptive" else float(lam))
    cell_cfg = dict(cfg)
    cell_cfg["loss"] = loss_kw
    _, log = _run_training(cell_cfg)
    final = log[-1]
    return [k, gamma, kind, t, lam, final["loss"], final["mean_dE"],
            final["mean_dT"], final["mean_m_over_k"], final["fpr95"]]


def _cmd_ablate(args):
    cfg = _parse_experiment_config(_load_config(args.config))
    cells = _ablate_cells(cfg)
    threads = int(os.environ.get("TCDESC_THREADS", "1"))
    out = open(args.out, "w", newline="") if args.out else sys.stdout
    try:
        writer = csv.writer(out)
        writer.writerow(["k", "gamma", "kind", "t", "lambda", "loss",
                         "mean_dE", "mean_dT", "mean_m_over_k", "fpr95"])
        out.flush()
        packed = [(cfg, cell) for cell in cells]
        if threads > 1:
            from concurrent.futures import ProcessPoolExecutor
            with ProcessPoolExecutor(max_workers=threads) as pool:
                for row in pool.map(_run_cell, packed):
                    writer.writerow(row)
                    out.flush()
        else:
            for item in packed:
                writer.writerow(_run_cell(item))
                out.flush()
    finally:
        if args.out:
            out.close()
    return 0


# ---------------------------------------------------------------------------
# argument parsing


def _add_weight_flags(sub):
    sub.add_argument("--kind", choices=tw.WEIGHT_KINDS,
                     default=tw.LINEAR_COMBINATION)
    sub.add_argument("--t", type=float, default=1.0,
                     help="heat-kernel width (presets: %s)" %
                          ", ".join(str(v) for v in HEAT_T_PRESETS))
    sub.add_argument("--ridge", type=float, default=tw.DEFAULT_RIDGE_EPS)


def build_parser():
    parser = argparse.ArgumentParser(
        prog="tcdesc",
        description="Topology-consistent descriptor toolkit")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("weights", help="per-descriptor topology weights as CSV")
    p.add_argument("--desc", required=True)
    p.add_argument("--k", type=int, required=True)
    p.add_argument("--both-sets", action="store_true",
                   help="also emit weights for the P set")
    _add_weight_flags(p)
    p.set_defaults(func=_cmd_weights)

    p = sub.add_parser("topo-dist", help="per-pair topology distances as CSV")
    p.add_argument("--desc", required=True)
    p.add_argument("--k", type=int, required=True)
    _add_weight_flags(p)
    p.set_defaults(func=_cmd_topo_dist)

    p = sub.add_parser("loss", help="loss report as JSON lines")
    p.add_argument("--desc", required=True)
    p.add_argument("--k", type=int, required=True)
    p.add_argument("--gamma", type=float, default=1.0)
    p.add_argument("--margin", type=float, default=1.0)
    p.add_argument("--fixed-lambda", type=float, default=None)
    _add_weight_flags(p)
    p.set_defaults(func=_cmd_loss)

    p = sub.add_parser("gradcheck", help="finite-difference gradient check")
    p.add_argument("--n", type=int, default=12)
    p.add_argument("--d", type=int, default=8)
    p.add_argument("--k", type=int, default=3)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--gamma", type=float, default=1.0)
    p.add_argument("--h", type=float, default=1e-5)
    p.add_argument("--tol", type=float, default=1e-4)
    _add_weight_flags(p)
    p.set_defaults(func=_cmd_gradcheck)

    p = sub.add_parser("train", help="train the toy embedding network")
    p.add_argument("--config", required=True)
    p.add_argument("--out", default=None, help="model output path (TCM1)")
    p.add_argument("--log", default=None, help="per-epoch CSV log path")
    p.set_defaults(func=_cmd_train)

    p = sub.add_parser("eval", help="metric report for a descriptor file")
    p.add_argument("--desc", required=True)
    p.add_argument("--k", type=int, required=True)
    p.set_defaults(func=_cmd_eval)

    p = sub.add_parser("ablate", help="grid of training runs, CSV per cell")
    p.add_argument("--config", required=True)
    p.add_argument("--out", default=None, help="CSV output path")
    p.set_defaults(func=_cmd_ablate)

    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except (Divergence, SingularGram, ToleranceExceeded, TieDetected,
            HingeBoundary) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return 3
    except TCDescError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
