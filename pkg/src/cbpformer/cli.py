"""Command-line entry points.

Usage::

    cbpformer <command> [key=value ...]

Commands: gen-data, train, infer, verify, plan, eval.  Every command echoes
its effective configuration as one ``# config`` JSON line, then prints one
summary line.  Exit status 0 means success; errors map to the codes carried
by :mod:`cbpformer.errors` (2 argument, 3 configuration, 4 I/O, 5 invalid
data, 6 numeric, 7 non-convergence).
"""

from __future__ import annotations

import csv
import io
import json
import logging
import sys
import time

import numpy as np

from . import cbp_core as cbp
from . import oracles as orc
from . import planner as pl
from . import problems as pb
from . import seq2seq as s2
from . import verify as vf
from .errors import ArgumentError, CBPError, ConfigurationError, NonConvergenceError

IO_EXIT = 4

_HP_KEYS = ("d_emb", "n_heads", "n_layers", "dropout_rate", "learning_rate", "batch_size", "seed")

# kind-dependent defaults at desk scale
KIND_DEFAULTS = {
    pb.BRACHISTOCHRONE: {"count": 10_000, "epochs": 30},
    pb.OBSTACLE: {"count": 20_000, "epochs": 40},
}

DEFAULTS = {
    "gen-data": {
        "kind": pb.BRACHISTOCHRONE,
        "count": None,
        "seed": 0,
        "K": 3,
        "N": 10,
        "delta_P": 1e-2,
        "workers": 1,
        "out": "data.txt",
    },
    "train": {
        "data": "data.txt",
        "out": "model.ckpt",
        "log": "train_log.csv",
        "holdout": 0,
        "epochs": None,
        "d_emb": 64,
        "n_heads": 4,
        "n_layers": 1,
        "dropout_rate": 0.1,
        "learning_rate": 4e-4,
        "batch_size": 8,
        "seed": 0,
    },
    "infer": {"model": "model.ckpt", "theta": "", "out": "curve.txt", "snap": True, "seed": 0},
    "verify": {"curve": "curve.txt", "max_elevation": None, "samples": 1000, "out": "", "seed": 0},
    "plan": {
        "model": "",
        "scenario": "",
        "out": "plan",
        "sensing_radius": 4.0,
        "horizon_distance": 3.0,
        "goal_tolerance": 0.3,
        "max_iterations": 100,
        "seed": 0,
    },
    "eval": {
        "model": "model.ckpt",
        "data": "data.txt",
        "holdout": 0,
        "limit": 0,
        "out": "metrics.csv",
        "seed": 0,
    },
}


def parse_overrides(command: str, args: list) -> dict:
    """Apply ``key=value`` strings onto the command's defaults."""
    if command not in DEFAULTS:
        raise ArgumentError(f"unknown command {command!r}; valid: {', '.join(DEFAULTS)}")
    cfg = dict(DEFAULTS[command])
    for arg in args:
        key, sep, raw = arg.partition("=")
        if not sep:
            raise ArgumentError(f"expected key=value, got {arg!r}")
        if key not in cfg:
            raise ArgumentError(f"unknown key {key!r} for {command}; valid keys: {', '.join(sorted(cfg))}")
        cfg[key] = _coerce(DEFAULTS[command][key], raw, key)
    return cfg


def _coerce(default, raw: str, key: str):
    try:
        if isinstance(default, bool):
            return raw.lower() in ("1", "true", "yes")
        if isinstance(default, int):
            return int(raw)
        if isinstance(default, float):
            return float(raw)
        if default is None:
            try:
                return int(raw)
            except ValueError:
                return float(raw)
    except ValueError as err:
        raise ArgumentError(f"bad value for {key}: {raw!r}") from err
    return raw


def _echo(command: str, cfg: dict) -> None:
    print("# config " + json.dumps({"command": command, **cfg}, sort_keys=True))


def _write(path: str, data, binary: bool = False) -> None:
    mode = "wb" if binary else "w"
    kw = {} if binary else {"encoding": "ascii", "newline": ""}
    with open(path, mode, **kw) as fh:
        fh.write(data)


# -- commands ---------------------------------------------------------------


def cmd_gen_data(cfg: dict) -> str:
    kind = cfg["kind"]
    if kind not in pb.KINDS:
        raise ArgumentError(f"kind must be one of {', '.join(pb.KINDS)}")
    if cfg["count"] is None:
        cfg["count"] = KIND_DEFAULTS[kind]["count"]
    _echo("gen-data", cfg)
    config = pb.TranscriptionConfig(cfg["K"], cfg["N"], cfg["delta_P"])
    t0 = time.perf_counter()
    ds = orc.build_dataset(kind, cfg["count"], cfg["seed"], config, workers=cfg["workers"])
    elapsed = time.perf_counter() - t0
    ds.write(cfg["out"])
    return f"wrote {len(ds)} records ({ds.rejected} rejected) to {cfg['out']} in {elapsed:.2f} s"


def cmd_train(cfg: dict) -> str:
    ds = orc.Dataset.read(cfg["data"])
    if cfg["epochs"] is None:
        cfg["epochs"] = KIND_DEFAULTS[ds.kind]["epochs"]
    _echo("train", cfg)
    n_train = len(ds) - cfg["holdout"]
    if cfg["holdout"] < 0 or n_train < 1:
        raise ArgumentError("holdout must leave at least one training record")
    train_set, _ = ds.split(n_train)
    hp = s2.HyperParams(epochs=cfg["epochs"], **{k: cfg[k] for k in _HP_KEYS})
    model = s2.model_for_dataset(ds, hp)
    res = s2.train(model, s2.normalized_thetas(model, train_set.thetas()), train_set.targets(), hp)
    model.meta["final_loss"] = res.history[-1] if res.history else None
    model.meta["train_records"] = n_train
    model.save(cfg["out"])
    _write(cfg["log"], res.log_csv())
    final = model.meta["final_loss"]
    return (
        f"trained {hp.epochs} epochs on {n_train} records, final loss "
        f"{final if final is None else format(final, '.6g')}, saved {cfg['out']}"
    )


def _parse_theta(text: str) -> np.ndarray:
    try:
        vals = [float(v) for v in text.replace(";", ",").split(",") if v.strip()]
    except ValueError as err:
        raise ArgumentError(f"theta must be comma-separated numbers, got {text!r}") from err
    if not vals:
        raise ArgumentError("theta is required, e.g. theta=2.0,1.0")
    return np.array(vals)


def _model_instance(model: s2.Seq2Seq, theta) -> pb.ProblemInstance:
    meta = model.meta
    config = pb.TranscriptionConfig(meta["K"], meta["N"], meta["delta_P"])
    return pb.ProblemInstance(meta["kind"], theta, config, meta["constants"])


def cmd_infer(cfg: dict) -> str:
    _echo("infer", cfg)
    model = s2.Seq2Seq.load(cfg["model"])
    theta = _parse_theta(cfg["theta"])
    instance = _model_instance(model, theta)
    t0 = time.perf_counter()
    tokens = s2.predict_tokens(model, theta)
    elapsed = time.perf_counter() - t0
    z = orc.tokens_to_decision(instance, tokens)
    if cfg["snap"]:
        z = pb.snap_boundary(instance, z)
    _write(cfg["out"], pb.export_warm_start(instance, z))
    for row in z.stacked():
        print(" ".join(format(float(v), ".10g") for v in row))
    return f"inferred {len(tokens)} control points in {elapsed:.4f} s, wrote {cfg['out']}"


def cmd_verify(cfg: dict) -> str:
    _echo("verify", cfg)
    with open(cfg["curve"], encoding="ascii") as fh:
        instance, z = pb.import_warm_start(fh.read())
    cert = vf.certify(instance, z, cfg["max_elevation"])
    cex = vf.counterexample_scan(instance, z, cfg["samples"])
    doc = cert.to_dict()
    doc["counterexample"] = cex
    if cfg["out"]:
        _write(cfg["out"], json.dumps(doc, indent=1, sort_keys=True) + "\n")
    tail = "" if cex is None else f", counterexample {cex['constraint']} at t={cex['t']:.4g}"
    return f"status {cert.status}{tail}"


def _scenario(cfg: dict) -> pl.Scenario:
    keys = ("sensing_radius", "horizon_distance", "goal_tolerance", "max_iterations")
    over = {k: cfg[k] for k in keys}
    if cfg["scenario"]:
        with open(cfg["scenario"], encoding="utf-8") as fh:
            doc = json.load(fh)
        doc.update(over)
        return pl.Scenario.from_dict(doc)
    return pl.corridor_scenario(**over)


def cmd_plan(cfg: dict) -> str:
    _echo("plan", cfg)
    scenario = _scenario(cfg)
    model = s2.Seq2Seq.load(cfg["model"]) if cfg["model"] else None
    try:
        planlog = pl.run(scenario, model)
    except NonConvergenceError as err:
        if err.result is not None:
            err.result.write(cfg["out"])
        raise
    planlog.write(cfg["out"])
    counts = planlog.fallback_counts()
    return (
        f"reached goal in {len(planlog.iterations)} iterations "
        f"(fallback none={counts['none']} refined={counts['refined']} oracle={counts['oracle']}), "
        f"min clearance {planlog.min_clearance():.4g}, {planlog.total_time:.2f} s"
    )


# -- evaluation -------------------------------------------------------------


def _trajectory_error(instance: pb.ProblemInstance, z: pb.DecisionVector, samples: int = 100) -> float:
    """Mean squared position error against the analytic optimum at matched fractions."""
    s = np.linspace(0.0, 1.0, samples)
    if instance.kind == pb.BRACHISTOCHRONE:
        sol = orc.solve_brachistochrone(instance.theta, instance.constants["g"])
        x = s * instance.theta[0]
        pred = cbp.evaluate(z.states, x)[:, 0]
        return float(np.mean((pred - sol.y_of_x(x)) ** 2))
    path = orc.solve_obstacle_path(instance.theta, instance.constants)
    pred = cbp.evaluate(z.states, s * z.t_K)
    return float(np.mean(np.sum((pred - path.position(s * path.total_length)) ** 2, axis=1)))


def evaluate_predictions(dataset: orc.Dataset, indices, predictor) -> dict:
    """Trajectory MSE, mean percent cost violation and mean prediction time.

    ``predictor(theta)`` returns raw token sequences.  The boundary control
    points are set from ``theta`` before scoring.  Brachistochrone costs
    are taken with the depth floored so that slightly negative predicted
    depths near the start still yield a finite travel time.
    """
    indices = list(indices)
    if not indices:
        raise ArgumentError("empty test set")
    mse, viol, times = [], [], []
    for i in indices:
        instance = dataset.instance(i)
        t0 = time.perf_counter()
        tokens = predictor(instance.theta)
        times.append(time.perf_counter() - t0)
        z = pb.snap_boundary(instance, orc.tokens_to_decision(instance, tokens))
        mse.append(_trajectory_error(instance, z))
        best = orc.analytic_cost(instance)
        if instance.kind == pb.BRACHISTOCHRONE:
            j = pb.brachistochrone_cost(instance, z, floor=True)
        else:
            j = pb.cost(instance, z)
        viol.append(100.0 * abs(j - best) / best)
    return {
        "trajectory_mse": float(np.mean(mse)),
        "cost_violation_pct": float(np.mean(viol)),
        "inference_time_s": float(np.mean(times)),
    }


def metrics_csv(metrics: dict, final_loss) -> str:
    out = io.StringIO()
    w = csv.writer(out, lineterminator="\n")
    w.writerow(["metric", "value", "unit"])
    w.writerow(["trajectory_mse", format(metrics["trajectory_mse"], ".6g"), "m^2"])
    w.writerow(["cost_violation", format(metrics["cost_violation_pct"], ".6g"), "percent"])
    w.writerow(["final_loss", "" if final_loss is None else format(final_loss, ".6g"), "sse_per_sequence"])
    w.writerow(["inference_time", format(metrics["inference_time_s"], ".6g"), "s"])
    return out.getvalue()


def cmd_eval(cfg: dict) -> str:
    _echo("eval", cfg)
    model = s2.Seq2Seq.load(cfg["model"])
    ds = orc.Dataset.read(cfg["data"])
    for key, val in (("kind", ds.kind), ("K", ds.config.K), ("N", ds.config.N)):
        if model.meta.get(key) != val:
            raise ConfigurationError(f"model has {key}={model.meta.get(key)!r}, dataset has {val!r}")
    start = len(ds) - cfg["holdout"] if cfg["holdout"] > 0 else 0
    stop = len(ds) if cfg["limit"] <= 0 else min(len(ds), start + cfg["limit"])
    metrics = evaluate_predictions(ds, range(start, stop), lambda th: s2.predict_tokens(model, th))
    final = model.meta.get("final_loss")
    _write(cfg["out"], metrics_csv(metrics, final))
    return (
        f"mse {metrics['trajectory_mse']:.4g}, cost violation {metrics['cost_violation_pct']:.3g}%, "
        f"final loss {final if final is None else format(final, '.4g')}, "
        f"inference {metrics['inference_time_s']:.4g} s over {stop - start} records"
    )


COMMANDS = {
    "gen-data": cmd_gen_data,
    "train": cmd_train,
    "infer": cmd_infer,
    "verify": cmd_verify,
    "plan": cmd_plan,
    "eval": cmd_eval,
}


def main(argv=None) -> int:
    argv = sys.argv[1:] if argv is None else list(argv)
    logging.basicConfig(level=logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    if not argv or argv[0] in ("-h", "--help"):
        print(__doc__.strip())
        return 0 if argv else 2
    command = argv[0]
    try:
        cfg = parse_overrides(command, argv[1:])
        summary = COMMANDS[command](cfg)
    except CBPError as err:
        print(f"error: {err}", file=sys.stderr)
        return err.exit_code
    except OSError as err:
        print(f"error: {err}", file=sys.stderr)
        return IO_EXIT
    print(summary)
    return 0


if __name__ == "__main__":
    sys.exit(main())
