"""Command-line experiment harness.

Subcommands: ``fit`` (one adaptive fit), ``experiment`` (multi-trial with
aggregate rows), ``compress`` (dense tensor to tree format), ``treeopt``
(tree optimization of a serialized model), ``sample`` (emit samples) and
``eval`` (evaluate a model at points).  All outputs are JSON and CSV; runs
are deterministic given the master seed, except for the elapsed_s column of
the results table, which records wall time.

Exit codes: 0 success, 2 configuration error, 3 numerical failure.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import os
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Mapping, Optional, Sequence

import numpy as np

from .dimension_tree import build_balanced_tree, build_linear_tree, random_binary_tree
from .distributions import distribution_from_json_dict
from .learner import LearnerConfig, SampleSet, relative_error, split_samples, test_risk
from .rank_adapter import RankAdaptConfig, adapt_ranks
from .tree_adapter import TreeProposalConfig, optimize_tree
from .tree_tensor import (
    FullTensor,
    evaluate_many,
    full_to_tree,
    load_tensor,
    save_tensor,
)

__all__ = ["ExperimentConfig", "TrialResult", "run_experiment", "emit_convergence", "main"]


class ConfigError(ValueError):
    """Invalid experiment configuration; message carries the field path."""


class NumericalError(RuntimeError):
    """A run produced non-finite results or a factorization failed."""


RESULT_COLUMNS = ["trial", "seed", "n", "test_risk", "rel_error", "complexity",
                  "tree_json", "elapsed_s"]

PRESETS: dict[str, dict] = {
    "table1": {"distribution": {"kind": "truncated_gaussian", "preset": "group_independent"},
               "max_degree": 50},
    "table2": {"distribution": {"kind": "truncated_gaussian", "preset": "band_diagonal"},
               "max_degree": 50},
    "table3": {"distribution": {"kind": "markov_chain", "d": 8, "n_states": 5,
                                "seed": 421, "per_step": False}},
    "table4": {"distribution": {"kind": "graphical_model", "seed": 97}},
}


@dataclass(frozen=True)
class TrialResult:
    trial: int
    seed: int
    n: int
    test_risk: float
    rel_error: float
    complexity: int
    tree_json: str
    elapsed_s: float
    ranks: dict[int, int] = field(default_factory=dict)
    max_trace_jump: float = 0.0


@dataclass(frozen=True)
class ExperimentConfig:
    distribution: dict
    n_train: tuple[int, ...]
    n_test: int = 10_000
    n_error: int = 10_000
    trials: int = 10
    seed: int = 1
    max_degree: int = 50
    tree_schedule: str = "interleaved"  # interleaved | final | none
    tree_eps: float = 1e-3
    tree_iterations: int = 150
    tree_restarts: int = 2
    learner: LearnerConfig = field(default_factory=LearnerConfig)
    rank_adapt: RankAdaptConfig = field(default_factory=RankAdaptConfig)
    out_dir: Optional[str] = None
    threads: int = 1

    def __post_init__(self):
        if self.trials < 1:
            raise ConfigError("trials: must be >= 1")
        if any(n < 1 for n in self.n_train) or self.n_test < 1 or self.n_error < 1:
            raise ConfigError("n_train/n_test/n_error: sizes must be >= 1")
        if self.tree_schedule not in ("interleaved", "final", "none"):
            raise ConfigError("tree_schedule: must be interleaved, final or none")


def _build_config(doc: Mapping, overrides: Mapping) -> ExperimentConfig:
    doc = dict(doc)
    preset = overrides.get("preset") or doc.pop("preset", None)
    if preset is not None:
        if preset not in PRESETS:
            raise ConfigError(f"preset: unknown preset {preset!r}")
        merged = dict(PRESETS[preset])
        merged.update(doc)
        doc = merged
    if "distribution" not in doc:
        raise ConfigError("distribution: required (or use --preset)")
    for key in ("seed", "trials", "threads"):
        if overrides.get(key) is not None:
            doc[key] = overrides[key]
    if overrides.get("out") is not None:
        doc["out_dir"] = overrides["out"]
    if overrides.get("n") is not None:
        doc["n_train"] = overrides["n"]

    n_train = doc.get("n_train", [10_000])
    if isinstance(n_train, (int, float)):
        n_train = [int(n_train)]
    try:
        learner = LearnerConfig(**doc.get("learner", {}))
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"learner: {exc}") from exc
    rank_doc = dict(doc.get("rank_adapter", {}))
    try:
        rank_adapt = RankAdaptConfig(learner=learner, **rank_doc)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"rank_adapter: {exc}") from exc
    tree_doc = dict(doc.get("tree_adapter", {}))
    try:
        return ExperimentConfig(
            distribution=dict(doc["distribution"]),
            n_train=tuple(int(v) for v in n_train),
            n_test=int(doc.get("n_test", 10_000)),
            n_error=int(doc.get("n_error", 10_000)),
            trials=int(doc.get("trials", 10)),
            seed=int(doc.get("seed", 1)),
            max_degree=int(doc.get("max_degree", 50)),
            tree_schedule=doc.get("tree_schedule", "interleaved"),
            tree_eps=float(tree_doc.get("eps", 1e-3)),
            tree_iterations=int(tree_doc.get("iterations", 150)),
            tree_restarts=int(tree_doc.get("restarts", 2)),
            learner=learner,
            rank_adapt=rank_adapt,
            out_dir=doc.get("out_dir"),
            threads=int(doc.get("threads", _default_threads())),
        )
    except ConfigError:
        raise
    except (TypeError, ValueError, KeyError) as exc:
        raise ConfigError(str(exc)) from exc


def _default_threads() -> int:
    env = os.environ.get("TREEDENS_THREADS")
    if env:
        try:
            return max(1, int(env))
        except ValueError as exc:
            raise ConfigError(f"TREEDENS_THREADS: not an integer: {env!r}") from exc
    return 1


def _dist_bases(dist, max_degree: int):
    if hasattr(dist, "covariance"):
        return dist.bases(max_degree)
    return dist.bases()


# -- one trial -------------------------------------------------------------------


def _run_trial_full(cfg: ExperimentConfig, n: int, trial: int):
    """Fresh samples, a full adaptive fit, and metrics for one trial."""
    t_start = time.perf_counter()
    seq = np.random.SeedSequence(entropy=cfg.seed, spawn_key=(n, trial))
    trial_seed = int(seq.generate_state(1)[0])
    rng = np.random.default_rng(seq)

    dist = distribution_from_json_dict(cfg.distribution)
    s_all = dist.sample(n, rng)
    s_test = dist.sample(cfg.n_test, rng)
    s_eps = dist.sample_reference(cfg.n_error, rng)
    bases = _dist_bases(dist, cfg.max_degree)

    d = s_all.d
    leaf_order = [int(v) + 1 for v in rng.permutation(d)]
    tree = build_linear_tree(d, leaf_order)
    s_fit, s_val = split_samples(s_all, 0.1, rng)

    tree_hook = None
    if cfg.tree_schedule == "interleaved":
        def tree_hook(g, round_idx):
            if max(g.ranks().values()) < 2:
                return g
            tcfg = TreeProposalConfig(eps=cfg.tree_eps,
                                      max_iterations=cfg.tree_iterations,
                                      restarts=cfg.tree_restarts,
                                      seed=trial_seed ^ (round_idx + 1))
            return optimize_tree(g, tcfg)

    rank_cfg = replace(cfg.rank_adapt, seed=trial_seed & 0x7FFFFFFF)
    state = adapt_ranks(tree, bases, s_fit, s_val, rank_cfg, tree_hook=tree_hook)
    g = state.model
    if cfg.tree_schedule == "final":
        tcfg = TreeProposalConfig(eps=cfg.tree_eps, max_iterations=cfg.tree_iterations,
                                  restarts=cfg.tree_restarts, seed=trial_seed)
        g = optimize_tree(g, tcfg)

    risk = test_risk(g, s_test)
    eps_val = relative_error(g, dist.density_many, s_eps)
    if not (np.isfinite(risk) and np.isfinite(eps_val)):
        raise NumericalError(f"trial {trial}: non-finite metrics")
    result = TrialResult(
        trial=trial,
        seed=trial_seed,
        n=n,
        test_risk=risk,
        rel_error=eps_val,
        complexity=g.storage_complexity(),
        tree_json=g.tree.to_json(),
        elapsed_s=time.perf_counter() - t_start,
        ranks=g.ranks(),
        max_trace_jump=state.max_trace_jump(),
    )
    return result, g


def run_trial(cfg: ExperimentConfig, n: int, trial: int) -> TrialResult:
    return _run_trial_full(cfg, n, trial)[0]


def _trial_worker(payload: tuple) -> TrialResult:
    cfg_doc, n, trial = payload
    return run_trial(_build_config(cfg_doc, {}), n, trial)


# -- experiments --------------------------------------------------------------------


def _aggregate(rows: Sequence[TrialResult]) -> dict:
    out: dict = {"n": rows[0].n, "trials": len(rows)}
    for name in ("test_risk", "rel_error", "complexity"):
        vals = np.array([getattr(r, name) for r in rows], dtype=float)
        out[f"{name}_mean"] = float(vals.mean())
        out[f"{name}_min"] = float(vals.min())
        out[f"{name}_max"] = float(vals.max())
    out["max_trace_jump"] = max(r.max_trace_jump for r in rows)
    best = min(rows, key=lambda r: r.rel_error)
    out["best_trial_tree"] = best.tree_json
    return out


def run_experiment(cfg: ExperimentConfig, cfg_doc: Optional[dict] = None
                   ) -> tuple[list[TrialResult], list[dict]]:
    """All trials over the n_train grid, plus one aggregate row per n.

    Trials are independent and may run in a worker pool; results are ordered
    by trial index regardless of completion order.
    """
    results: list[TrialResult] = []
    aggregates: list[dict] = []
    for n in cfg.n_train:
        jobs = [(n, t) for t in range(cfg.trials)]
        if cfg.threads > 1 and cfg_doc is not None and len(jobs) > 1:
            payloads = [(cfg_doc, n, t) for n, t in jobs]
            with ProcessPoolExecutor(max_workers=cfg.threads) as pool:
                rows = list(pool.map(_trial_worker, payloads))
        else:
            rows = [run_trial(cfg, n, t) for n, t in jobs]
        rows.sort(key=lambda r: r.trial)
        results.extend(rows)
        aggregates.append(_aggregate(rows))
    return results, aggregates


def results_csv(rows: Sequence[TrialResult]) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(RESULT_COLUMNS)
    for r in rows:
        writer.writerow([r.trial, r.seed, r.n, repr(r.test_risk), repr(r.rel_error),
                         r.complexity, r.tree_json, f"{r.elapsed_s:.3f}"])
    return buf.getvalue()


def aggregates_csv(aggs: Sequence[dict]) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    cols = ["n", "trials",
            "test_risk_mean", "test_risk_min", "test_risk_max",
            "rel_error_mean", "rel_error_min", "rel_error_max",
            "complexity_mean", "complexity_min", "complexity_max"]
    writer.writerow(cols)
    for a in aggs:
        writer.writerow([a[c] if c in ("n", "trials") else repr(a[c]) for c in cols])
    return buf.getvalue()


def emit_convergence(aggregates: Sequence[dict]) -> tuple[str, float]:
    """CSV of (n, mean relative error) plus the least-squares log-log slope."""
    if len(aggregates) < 2:
        raise ConfigError("n_train: convergence needs at least two sample sizes")
    ns = np.array([a["n"] for a in aggregates], dtype=float)
    eps = np.array([a["rel_error_mean"] for a in aggregates], dtype=float)
    slope = float(np.polyfit(np.log(ns), np.log(eps), 1)[0])
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["n", "rel_error_mean"])
    for n, e in zip(ns, eps):
        writer.writerow([int(n), repr(float(e))])
    return buf.getvalue(), slope


# -- samples files --------------------------------------------------------------------


def write_samples_csv(path: str, s: SampleSet, discrete: bool) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow([f"x{k}" for k in range(1, s.d + 1)])
        for row in s.points:
            writer.writerow([int(v) if discrete else repr(float(v)) for v in row])


def read_points_csv(path: str) -> np.ndarray:
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        if not header or not header[0].startswith("x"):
            raise ConfigError(f"{path}: expected a header row x1,...,xd")
        rows = [[float(v) for v in row] for row in reader if row]
    if not rows:
        raise ConfigError(f"{path}: no data rows")
    return np.asarray(rows)


# -- subcommands -------------------------------------------------------------------------


def _cmd_experiment(args) -> int:
    doc = {}
    if args.config:
        with open(args.config, encoding="utf-8") as fh:
            doc = json.load(fh)
    overrides = {"preset": args.preset, "seed": args.seed, "trials": args.trials,
                 "out": args.out, "threads": args.threads, "n": args.n}
    cfg = _build_config(doc, overrides)
    cfg_doc = dict(doc)
    if args.preset:
        cfg_doc["preset"] = args.preset
    results, aggs = run_experiment(cfg, cfg_doc)
    out_dir = cfg.out_dir or "."
    os.makedirs(out_dir, exist_ok=True)
    with open(os.path.join(out_dir, "results.csv"), "w", encoding="utf-8") as fh:
        fh.write(results_csv(results))
    with open(os.path.join(out_dir, "aggregate.csv"), "w", encoding="utf-8") as fh:
        fh.write(aggregates_csv(aggs))
    summary = {"aggregates": aggs}
    if len(aggs) >= 2:
        conv_csv, slope = emit_convergence(aggs)
        with open(os.path.join(out_dir, "convergence.csv"), "w", encoding="utf-8") as fh:
            fh.write(conv_csv)
        summary["loglog_slope"] = slope
    with open(os.path.join(out_dir, "summary.json"), "w", encoding="utf-8") as fh:
        json.dump(summary, fh, indent=2)
    print(json.dumps(summary["aggregates"], indent=2))
    if "loglog_slope" in summary:
        print(f"log-log slope: {summary['loglog_slope']:.4f}")
    return 0


def _cmd_fit(args) -> int:
    if args.samples:
        return _fit_from_samples(args)
    doc = {}
    if args.config:
        with open(args.config, encoding="utf-8") as fh:
            doc = json.load(fh)
    cfg = _build_config(doc, {"preset": args.preset, "seed": args.seed,
                              "n": args.n, "out": None})
    result, model = _run_trial_full(cfg, cfg.n_train[0], trial=0)
    print(json.dumps({"test_risk": result.test_risk, "rel_error": result.rel_error,
                      "complexity": result.complexity,
                      "tree": json.loads(result.tree_json)}, indent=2))
    if args.out:
        save_tensor(model, args.out, binary=args.binary)
    return 0


def _fit_from_samples(args) -> int:
    """Adaptive fit of an existing samples file against declared bases."""
    from .bases import basis_from_json_dict
    from .rank_adapter import adapt_ranks

    if not args.bases:
        raise ConfigError("fit --samples also needs --bases (JSON list)")
    points = read_points_csv(args.samples)
    with open(args.bases, encoding="utf-8") as fh:
        bases = [basis_from_json_dict(b) for b in json.load(fh)]
    if len(bases) != points.shape[1]:
        raise ConfigError("bases: need one basis per sample column")
    seed = args.seed if args.seed is not None else 1
    rng = np.random.default_rng(np.random.SeedSequence(seed))
    s_all = SampleSet(points)
    leaf_order = [int(v) + 1 for v in rng.permutation(s_all.d)]
    tree = build_linear_tree(s_all.d, leaf_order)
    s_fit, s_val = split_samples(s_all, 0.1, rng)

    def tree_hook(g, round_idx):
        if max(g.ranks().values()) < 2:
            return g
        return optimize_tree(g, TreeProposalConfig(eps=1e-3, max_iterations=150,
                                                   restarts=2,
                                                   seed=seed ^ (round_idx + 1)))

    from .rank_adapter import RankAdaptConfig
    state = adapt_ranks(tree, bases, s_fit, s_val, RankAdaptConfig(seed=seed),
                        tree_hook=tree_hook)
    g = state.model
    print(json.dumps({"empirical_risk": state.risk_history[state.iteration]
                      if state.risk_history else None,
                      "complexity": g.storage_complexity(),
                      "tree": g.tree.to_json_dict()}, indent=2))
    if args.out:
        save_tensor(g, args.out, binary=args.binary)
    return 0


_COMPRESS_PRESETS = ("markov-example", "graphical-example")


def _cmd_compress(args) -> int:
    from .distributions import example_graphical_model, example_markov_chain

    if args.preset:
        if args.preset == "markov-example":
            dist = example_markov_chain()
        elif args.preset == "graphical-example":
            dist = example_graphical_model(rank3=False)
        else:
            raise ConfigError(f"preset: expected one of {_COMPRESS_PRESETS}")
        full = dist.exact_tensor()
        bases = dist.bases()
    elif args.input:
        arr = np.load(args.input)
        full = FullTensor(tuple(arr.shape), arr)
        from .bases import CanonicalBasis
        bases = [CanonicalBasis(sz) for sz in arr.shape]
    else:
        raise ConfigError("compress: need --preset or --input")

    d = len(full.dims)
    if args.tree == "linear":
        tree = build_linear_tree(d)
    elif args.tree == "permuted":
        order = tuple(range(1, d + 1, 2)) + tuple(range(2, d + 1, 2))
        tree = build_linear_tree(d, order)
    elif args.tree == "balanced":
        tree = build_balanced_tree(d)
    elif args.tree.startswith("random"):
        seed = int(args.tree.split(":", 1)[1]) if ":" in args.tree else args.seed
        tree = random_binary_tree(d, np.random.default_rng(seed))
    else:
        raise ConfigError("tree: expected linear | permuted | balanced | random[:seed]")

    g = full_to_tree(full, tree, bases, tol=args.tol)
    report = {"storage": g.storage_complexity(),
              "max_rank": max(g.ranks().values()),
              "ranks": {str(i): r for i, r in sorted(g.ranks().items())},
              "tree": g.tree.to_json_dict()}
    print(json.dumps(report, indent=2))
    if args.out:
        save_tensor(g, args.out)
    return 0


def _cmd_treeopt(args) -> int:
    g = load_tensor(args.input)
    events: list = []
    cfg = TreeProposalConfig(eps=args.eps, max_iterations=args.iterations,
                             seed=args.seed)
    g2 = optimize_tree(g, cfg, events)
    for event in events:
        print(json.dumps({"event": "accepted", **event}))
    print(json.dumps({"event": "done", "initial": g.storage_complexity(),
                      "final": g2.storage_complexity()}))
    if args.out:
        save_tensor(g2, args.out)
    return 0


def _cmd_sample(args) -> int:
    doc = {}
    if args.config:
        with open(args.config, encoding="utf-8") as fh:
            doc = json.load(fh)
    cfg = _build_config(doc, {"preset": args.preset, "seed": args.seed, "n": None,
                              "out": None})
    dist = distribution_from_json_dict(cfg.distribution)
    rng = np.random.default_rng(np.random.SeedSequence(cfg.seed))
    s = dist.sample(args.n, rng)
    discrete = not hasattr(dist, "covariance")
    write_samples_csv(args.out, s, discrete)
    print(json.dumps({"written": args.out, "n": s.n, "d": s.d}))
    return 0


def _cmd_eval(args) -> int:
    g = load_tensor(args.model)
    pts = read_points_csv(args.points)
    vals = evaluate_many(g, pts)
    if not np.all(np.isfinite(vals)):
        raise NumericalError("model evaluation produced non-finite values")
    if args.out:
        with open(args.out, "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow([f"x{k}" for k in range(1, pts.shape[1] + 1)] + ["value"])
            for row, v in zip(pts, vals):
                writer.writerow([repr(float(x)) for x in row] + [repr(float(v))])
    else:
        for v in vals:
            print(repr(float(v)))
    return 0


# -- entry point ----------------------------------------------------------------------------


def _parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="treedens",
                                description="Density estimation with tree tensor networks")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp):
        sp.add_argument("--config", help="JSON config path")
        sp.add_argument("--preset", help="named experiment preset")
        sp.add_argument("--seed", type=int, default=None, help="master seed")

    sp = sub.add_parser("experiment", help="multi-trial experiment with aggregates")
    common(sp)
    sp.add_argument("--trials", type=int, default=None)
    sp.add_argument("--n", type=int, nargs="+", default=None, help="training sizes")
    sp.add_argument("--out", default=None, help="output directory")
    sp.add_argument("--threads", type=int, default=None)

    sp = sub.add_parser("fit", help="single adaptive fit")
    common(sp)
    sp.add_argument("--n", type=int, nargs="+", default=None)
    sp.add_argument("--samples", default=None, help="fit a samples CSV instead")
    sp.add_argument("--bases", default=None,
                    help="JSON list of per-dimension bases (with --samples)")
    sp.add_argument("--out", default=None, help="model output path")
    sp.add_argument("--binary", action="store_true", help="binary model format")

    sp = sub.add_parser("compress", help="dense tensor to tree tensor")
    sp.add_argument("--preset", choices=_COMPRESS_PRESETS, default=None)
    sp.add_argument("--input", default=None, help=".npy dense tensor")
    sp.add_argument("--tree", default="linear")
    sp.add_argument("--tol", type=float, default=1e-13)
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--out", default=None, help="model output path")

    sp = sub.add_parser("treeopt", help="optimize the dimension tree of a model")
    sp.add_argument("--input", required=True)
    sp.add_argument("--eps", type=float, default=1e-13)
    sp.add_argument("--iterations", type=int, default=100)
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--out", default=None)

    sp = sub.add_parser("sample", help="draw samples from a distribution")
    common(sp)
    sp.add_argument("--n", type=int, required=True)
    sp.add_argument("--out", required=True)

    sp = sub.add_parser("eval", help="evaluate a saved model at points")
    sp.add_argument("--model", required=True)
    sp.add_argument("--points", required=True, help="CSV with header x1..xd")
    sp.add_argument("--out", default=None)
    return p


_HANDLERS = {
    "experiment": _cmd_experiment,
    "fit": _cmd_fit,
    "compress": _cmd_compress,
    "treeopt": _cmd_treeopt,
    "sample": _cmd_sample,
    "eval": _cmd_eval,
}


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = _parser().parse_args(argv)
    try:
        return _HANDLERS[args.command](args)
    except (ConfigError, FileNotFoundError, json.JSONDecodeError, KeyError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except (NumericalError, np.linalg.LinAlgError, FloatingPointError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
