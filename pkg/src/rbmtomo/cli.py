"""Command-line interface.

Every subcommand writes its outputs to files and prints a one-line
summary to stdout.  Exit codes: 0 success, 1 domain/structural error,
2 usage error (argparse's native convention).
"""

from __future__ import annotations

import argparse
import json
import math
import sys
from pathlib import Path

from .errors import RbmTomoError
from . import harness, metrics, models, regression, sampling, structure


def _common(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--seed", type=int, default=0, help="RNG seed")
    parser.add_argument("--out", type=str, default=None, help="output file or directory")
    parser.add_argument("--format", choices=("json", "csv", "both"), default="both",
                        help="report format for experiment outputs")


def _outdir(args, default_name: str) -> Path:
    if args.out is None:
        return Path(default_name)
    path = Path(args.out)
    if path.suffix:  # looks like a file
        return path
    path.mkdir(parents=True, exist_ok=True)
    return path / default_name


def _load_reference_table(args) -> models.DistributionTable:
    if getattr(args, "table", None):
        return models.load_table(args.table)
    if getattr(args, "model", None):
        return models.rbm_marginal_distribution(models.load_model(args.model))
    raise RbmTomoError("either --model or --table is required")


def _cmd_gen_model(args) -> int:
    if args.kind != "chain":
        raise RbmTomoError(f"unknown generator kind {args.kind!r}")
    model = harness.gen_chain_model(args.n, args.j, args.h, args.g)
    path = _outdir(args, "model.json")
    models.save_model(model, path)
    graph = models.rbm_two_hop(model)
    print(f"wrote chain model n={model.n} m={model.m} d2={graph.d2} -> {path}")
    return 0


def _cmd_sample(args) -> int:
    if args.gibbs:
        if not args.model:
            raise RbmTomoError("--gibbs sampling requires --model")
        model = models.load_model(args.model)
        shots = sampling.sample_gibbs(model, args.count, args.burn_in,
                                      args.thinning, args.seed, chains=args.chains)
    else:
        table = _load_reference_table(args)
        shots = sampling.sample_exact(table, args.count, args.seed)
    path = _outdir(args, "samples.bin" if args.binary else "samples.txt")
    if args.binary:
        sampling.save_samples_binary(shots, path)
    else:
        sampling.save_samples_text(shots, path)
    print(f"wrote {shots.count} shots over n={shots.n} (seed={args.seed}) -> {path}")
    return 0


def _cmd_perturb(args) -> int:
    table = _load_reference_table(args)
    noisy, achieved = sampling.perturb_linf(table, args.eps_inf, args.seed,
                                            p_norm=args.p_norm)
    path = _outdir(args, "table.json")
    models.save_table(noisy, path)
    print(f"perturbed table: achieved linf={achieved.linf:.3e} "
          f"lp={achieved.lp:.3e} (p={achieved.p_norm}) -> {path}")
    return 0


def _cmd_learn_structure(args) -> int:
    shots = _load_samples(args.samples)
    cfg = structure.StructureConfig(
        method=args.method, tau=args.tau, max_set=args.max_set,
        eta=args.eta, k=args.k, symmetrize=args.symmetrize)
    result = structure.learn_full_structure(shots, cfg)
    path = _outdir(args, "graph.json")
    structure.save_structure_result(result, path)
    print(f"learned graph with {len(result.graph.edges())} edges "
          f"(d2={result.graph.d2}) -> {path}")
    return 0


def _load_samples(path_str: str) -> sampling.SampleSet:
    path = Path(path_str)
    if path.suffix == ".bin":
        return sampling.load_samples_binary(path)
    return sampling.load_samples_text(path)


def _cmd_learn_params(args) -> int:
    shots = _load_samples(args.samples)
    result = structure.load_structure_result(args.graph)
    graph = result.graph
    cfg = regression.AlphatronConfig(
        learning_rate=args.learning_rate, iterations=args.iterations,
        holdout_fraction=args.holdout_fraction,
        feature_order_cap=args.order_cap, seed=args.seed)
    node_results = []
    for u in range(graph.n):
        node_results.append(regression.learn_node_potential(
            shots, u, graph.neighbors[u], cfg))
    q = regression.assemble_potential(node_results, graph)
    path = _outdir(args, "potential.json")
    models.save_potential(q, path)
    if args.nodes_out:
        nodes_dir = Path(args.nodes_out)
        nodes_dir.mkdir(parents=True, exist_ok=True)
        for res in node_results:
            regression.save_node_result(res, nodes_dir / f"node_{res.node + 1:03d}.json")
    print(f"learned potential with {len(q)} monomials (order {q.order}) -> {path}")
    return 0


def _cmd_evaluate(args) -> int:
    reference = _load_reference_table(args)
    q = models.load_potential(args.potential)
    recon = regression.reconstruct_distribution(q)
    learned = structure.load_graph(args.graph) if args.graph else None
    truth = structure.load_graph(args.truth_graph) if args.truth_graph else None
    report = metrics.evaluate_tables(recon, reference, p_norm=args.p_norm,
                                     learned=learned, truth=truth)
    path = _outdir(args, "eval.json")
    metrics.save_eval_report(report, path)
    print(f"fidelity={report.fidelity:.6f} l1={report.l1:.6f} "
          f"linf={report.linf:.3e} -> {path}")
    return 0


def _finite_json(value):
    if isinstance(value, dict):
        return {k: _finite_json(v) for k, v in value.items()}
    if isinstance(value, float) and not math.isfinite(value):
        return str(value)
    return value


def _cmd_thresholds(args) -> int:
    th = structure.compute_thresholds(args.alpha, args.beta, args.d2)
    summary = (f"tau={th.tau:.6e} delta={th.delta_lc:.6e} gamma={th.gamma:.6e} "
               f"eta={th.eta:.6e} k={th.k}")
    payload = {"thresholds": vars(th).copy()}
    if args.n is not None:
        limits = structure.compute_robustness_limits(th, args.n, args.p_norm)
        bounds = structure.compute_sample_bounds(th, args.n, args.zeta)
        payload["robustness_limits"] = vars(limits).copy()
        payload["sample_bounds"] = vars(bounds).copy()
        summary += (f" eps_p_max_lc={limits.eps_p_max_lc:.3e}"
                    f" rho_max_lc={limits.rho_max_lc:.3e}")
    print(summary)
    if args.out:
        path = _outdir(args, "thresholds.json")
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(_finite_json(payload), fh)
            fh.write("\n")
    return 0


def _cmd_experiment(args) -> int:
    cfg = harness.load_config(args.config)
    if args.seed is not None:
        import dataclasses
        cfg = dataclasses.replace(cfg, base_seed=args.seed)
    runners = {
        "structure": harness.run_structure_experiment,
        "state": harness.run_state_learning_experiment,
        "partial": harness.run_partial_learning_experiment,
    }
    report = runners[cfg.kind](cfg)
    outdir = Path(args.out) if args.out else Path(".")
    outdir.mkdir(parents=True, exist_ok=True)
    written = []
    if args.format in ("json", "both"):
        path = outdir / "report.json"
        harness.write_report_json(report, path)
        written.append(str(path))
    if args.format in ("csv", "both"):
        path = outdir / "report.csv"
        harness.write_report_csv(report, path)
        written.append(str(path))
    agg = report.aggregates[-1] if report.aggregates else None
    tail = ""
    if agg is not None and agg.success_rate is not None:
        tail = f" success_rate@M={agg.sample_size}: {agg.success_rate:.3f}"
    if agg is not None and agg.fidelity_mean is not None:
        tail += f" mean_fidelity@M={agg.sample_size}: {agg.fidelity_mean:.5f}"
    print(f"{cfg.kind} experiment done ({len(report.rows)} trials):"
          f"{tail} -> {', '.join(written)}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="rbmtomo",
        description="Two-hop structure learning and magnitude reconstruction "
                    "for RBM-backed states.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-model", help="generate a ground-truth model file")
    _common(p)
    p.add_argument("--kind", default="chain")
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--j", type=float, default=1.0)
    p.add_argument("--h", type=float, default=-0.1)
    p.add_argument("--g", type=float, default=-0.1)
    p.set_defaults(func=_cmd_gen_model)

    p = sub.add_parser("sample", help="draw measurement shots")
    _common(p)
    p.add_argument("--model", type=str, default=None)
    p.add_argument("--table", type=str, default=None)
    p.add_argument("--count", type=int, required=True)
    p.add_argument("--binary", action="store_true", help="write the binary format")
    p.add_argument("--gibbs", action="store_true", help="use block-Gibbs sampling")
    p.add_argument("--burn-in", type=int, default=1000)
    p.add_argument("--thinning", type=int, default=2)
    p.add_argument("--chains", type=int, default=64)
    p.set_defaults(func=_cmd_sample)

    p = sub.add_parser("perturb", help="apply bounded L_inf noise to a table")
    _common(p)
    p.add_argument("--model", type=str, default=None)
    p.add_argument("--table", type=str, default=None)
    p.add_argument("--eps-inf", type=float, required=True)
    p.add_argument("--p-norm", type=float, default=math.inf)
    p.set_defaults(func=_cmd_perturb)

    p = sub.add_parser("learn-structure", help="learn the two-hop graph from shots")
    _common(p)
    p.add_argument("--samples", type=str, required=True)
    p.add_argument("--method", choices=("lc", "ferro"), default="lc")
    p.add_argument("--tau", type=float, default=None)
    p.add_argument("--max-set", type=int, default=None)
    p.add_argument("--eta", type=float, default=None)
    p.add_argument("--k", type=int, default=None)
    p.add_argument("--symmetrize", choices=("or", "and"), default="or")
    p.set_defaults(func=_cmd_learn_structure)

    p = sub.add_parser("learn-params", help="fit node potentials and assemble")
    _common(p)
    p.add_argument("--samples", type=str, required=True)
    p.add_argument("--graph", type=str, required=True)
    p.add_argument("--learning-rate", type=float, default=1.0)
    p.add_argument("--iterations", type=int, default=None)
    p.add_argument("--holdout-fraction", type=float, default=0.2)
    p.add_argument("--order-cap", type=int, default=None)
    p.add_argument("--nodes-out", type=str, default=None,
                   help="directory for per-node regression files")
    p.set_defaults(func=_cmd_learn_params)

    p = sub.add_parser("evaluate", help="score a learned potential against a table")
    _common(p)
    p.add_argument("--model", type=str, default=None)
    p.add_argument("--table", type=str, default=None)
    p.add_argument("--potential", type=str, required=True)
    p.add_argument("--graph", type=str, default=None)
    p.add_argument("--truth-graph", type=str, default=None)
    p.add_argument("--p-norm", type=float, default=2.0)
    p.set_defaults(func=_cmd_evaluate)

    p = sub.add_parser("thresholds", help="evaluate threshold formulas")
    _common(p)
    p.add_argument("--alpha", type=float, required=True)
    p.add_argument("--beta", type=float, required=True)
    p.add_argument("--d2", type=int, required=True)
    p.add_argument("--n", type=int, default=None)
    p.add_argument("--p-norm", type=float, default=math.inf)
    p.add_argument("--zeta", type=float, default=0.1)
    p.set_defaults(func=_cmd_thresholds)

    p = sub.add_parser("experiment", help="run a configured sweep")
    p.add_argument("--config", type=str, required=True)
    p.add_argument("--seed", type=int, default=None,
                   help="override the config base_seed")
    p.add_argument("--out", type=str, default=None)
    p.add_argument("--format", choices=("json", "csv", "both"), default="both")
    p.set_defaults(func=_cmd_experiment)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except RbmTomoError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except FileNotFoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
