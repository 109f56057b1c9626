"""Command-line interface.

Exit codes: 0 success, 1 audit failure, 2 usage error (argparse default).
"""

from __future__ import annotations

import argparse
import csv
import json
import os
import sys

import numpy as np

from . import harness, metrics, scoring
from .density import target_density_estimator
from .estimators import (
    EstimatorConfig,
    nonprivate_spectral_estimate,
    private_graphon_estimate,
    private_sbm_estimate,
    robust_density_estimate,
    robust_sbm_estimate,
    subsample_aggregate_estimate,
)
from .graphs import (
    BlockGraphon,
    BlockMatrix,
    read_edge_list,
    sample_graphon_graph,
    sample_sbm,
    write_edge_list,
)
from .mechanisms import MechanismConfig, exact_em_distribution
from .rng import substream


def _default_seed() -> int:
    return int(os.environ.get("DPGRAPHON_SEED", "0"))


def _parse_matrix(text: str) -> np.ndarray:
    return np.array(json.loads(text), dtype=float)


def _cmd_generate(args) -> int:
    if args.model == "sbm":
        B0 = BlockMatrix(_parse_matrix(args.b0), R=args.R, normalized=True)
        G = sample_sbm(B0, args.d, args.n, seed=args.seed)
    else:
        B = BlockMatrix(_parse_matrix(args.b0), R=args.R)
        G = sample_graphon_graph(BlockGraphon(B), rho=args.rho, n=args.n, seed=args.seed)
    write_edge_list(G, args.out)
    print(f"wrote {args.out} (n={G.n}, edges={G.num_edges()})")
    return 0


def _cmd_metrics(args) -> int:
    B = _parse_matrix(args.b)
    B0 = _parse_matrix(args.b0)
    if args.metric == "ds":
        val, S = metrics.delta_ds(B, B0)
        print(json.dumps({"delta_ds": val, "argmin": S.entries.tolist()}))
    elif args.metric == "p":
        print(json.dumps({"delta_p": metrics.delta_p(B, B0)}))
    else:
        print(json.dumps({"delta_hat2": metrics.delta_hat2(B, B0)}))
    return 0


def _cmd_score(args) -> int:
    G = read_edge_list(args.graph)
    B = _parse_matrix(args.b)
    Yin = G.adjacency / args.divisor
    if args.mode == "ideal":
        val, z = scoring.ideal_score(B, Yin)
        print(json.dumps({"score": val, "argmax": z.assignment.tolist()}))
    elif args.mode == "lipschitz":
        print(json.dumps({"score": scoring.lipschitz_score(B, Yin, args.R)}))
    else:
        det = scoring.relaxed_score_detail(B, Yin, args.R)
        print(json.dumps({"score": det.value, "interval": [det.lower, det.upper], "status": det.status}))
    return 0


def _cmd_density(args) -> int:
    G = read_edge_list(args.graph)
    est = target_density_estimator(G, args.eps, args.R, substream(args.seed, "cli-density"))
    print(
        json.dumps(
            {
                "value": est.value,
                "raw": est.raw,
                "degree_bound": est.degree_bound,
                "stage_eps": est.stage_eps,
                "details": {k: v for k, v in est.details.items() if k != "fine"},
                "flags": list(est.flags),
            }
        )
    )
    return 0


def _cmd_estimate(args) -> int:
    G = read_edge_list(args.graph)
    cfg = EstimatorConfig(scorer=args.scorer, seed=args.seed, eta=args.eta)
    if args.kind == "sbm":
        report = private_sbm_estimate(G, args.k, args.eps, args.R, cfg=cfg)
        print(report.to_json())
    elif args.kind == "graphon":
        _, report = private_graphon_estimate(G, args.k, args.eps, args.R, cfg=cfg)
        print(report.to_json())
    elif args.kind == "spectral":
        B, z = nonprivate_spectral_estimate(G, args.k, divisor=args.divisor or None, seed=args.seed)
        print(json.dumps({"b_hat": B.entries.tolist(), "labels": z.assignment.tolist()}))
    elif args.kind == "subsample":
        report = subsample_aggregate_estimate(G, args.k, args.eps, tau=args.tau, cfg=cfg)
        print(report.to_json())
    else:  # robust
        B, z = robust_sbm_estimate(G, d=args.d, k=args.k, R=args.R, seed=args.seed)
        rd = robust_density_estimate(G, eta=args.corruption)
        print(
            json.dumps(
                {
                    "b_hat": B.entries.tolist(),
                    "labels": z.assignment.tolist(),
                    "robust_density": {
                        "value": rd.value,
                        "greedy": rd.greedy,
                        "exact": rd.exact,
                        "relaxation_bound": rd.relaxation_bound,
                    },
                }
            )
        )
    return 0


def _cmd_audit(args) -> int:
    kwargs = {"seed": args.seed}
    if args.kind == "privacy" and args.pairs:
        kwargs["pairs"] = args.pairs
    if args.kind == "sensitivity" and args.graphs:
        kwargs["graphs"] = args.graphs
    report = harness.run_audit(args.kind, **kwargs)
    if args.out:
        with open(args.out, "w") as fh:
            json.dump(report, fh, indent=2, default=str)
    print(json.dumps({k: v for k, v in report.items() if k != "cases"}, default=str))
    return 0 if report["passed"] else 1


def _cmd_mechanism_audit(args) -> int:
    """Per-candidate log-ratio table for one adjacent pair, as CSV."""
    G = harness._random_graph(args.n, seed=args.seed, p=0.4)
    Gp = harness.rewire_vertex(G, 0, seed=args.seed + 1)
    from .graphs import empirical_density
    from .mechanisms import build_grid

    rho = max(empirical_density(G), 2.0 / (args.n * (args.n - 1)))
    grid = build_grid(2, args.R, args.R / 4.0)
    s = scoring.lipschitz_scores_grid(G.adjacency / rho, args.R, grid.candidates)
    sp = scoring.lipschitz_scores_grid(Gp.adjacency / rho, args.R, grid.candidates)
    cfg = MechanismConfig(eps=args.eps, sensitivity=40.0 * args.n * args.R**2, mode="strict")
    p1 = exact_em_distribution(s, cfg)
    p2 = exact_em_distribution(sp, cfg)
    writer = csv.writer(sys.stdout, lineterminator="\n")
    writer.writerow(["candidate", "log_ratio", "score", "score_adjacent"])
    for i in range(len(grid)):
        writer.writerow(
            [
                json.dumps(grid.candidates[i].tolist()),
                format(float(np.log(p1[i]) - np.log(p2[i])), ".12g"),
                format(float(s[i]), ".12g"),
                format(float(sp[i]), ".12g"),
            ]
        )
    return 0


def _cmd_experiment(args) -> int:
    if args.config:
        cfg = harness.ExperimentConfig.from_toml(args.config)
    else:
        cfg = harness.ExperimentConfig(
            B0=json.loads(args.b0),
            k=args.k,
            n_list=json.loads(args.n_list),
            d_list=json.loads(args.d_list),
            eps_list=json.loads(args.eps_list),
            R=args.R,
            trials=args.trials,
        )
    if args.seed is not None:
        cfg.seed = args.seed
    if args.scorer:
        cfg.scorer = args.scorer
    result = harness.run_experiment(cfg)
    prefix = args.out or cfg.out_prefix or "experiment"
    with open(prefix + ".csv", "w") as fh:
        fh.write(result.to_csv())
    with open(prefix + ".json", "w") as fh:
        json.dump({"schema": "v1", "summary": result.summary}, fh, indent=2, sort_keys=True)
    print(f"wrote {prefix}.csv and {prefix}.json ({len(result.rows)} rows)")
    return 0


def _cmd_plotdata(args) -> int:
    with open(args.input) as fh:
        reader = csv.DictReader(fh)
        columns = reader.fieldnames or []
        rows = []
        for row in reader:
            parsed = {}
            for key, val in row.items():
                try:
                    parsed[key] = float(val)
                except (TypeError, ValueError):
                    parsed[key] = val
            rows.append(parsed)
    result = harness.SweepResult(columns=columns, rows=rows)
    out = harness.emit_plotdata(result, args.x, args.y, args.groupby)
    if args.out:
        with open(args.out, "w") as fh:
            fh.write(out)
    else:
        sys.stdout.write(out)
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="dpgraphon", description=__doc__)
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("generate", help="sample a graph and write an edge list")
    g.add_argument("--model", choices=["sbm", "graphon"], default="sbm")
    g.add_argument("--b0", required=True, help="JSON block matrix")
    g.add_argument("--d", type=float, default=5.0)
    g.add_argument("--rho", type=float, default=0.1)
    g.add_argument("--n", type=int, required=True)
    g.add_argument("--R", type=float, default=4.0)
    g.add_argument("--seed", type=int, default=_default_seed())
    g.add_argument("--out", required=True)
    g.set_defaults(func=_cmd_generate)

    m = sub.add_parser("metrics", help="graphon distances between block matrices")
    m.add_argument("--b", required=True)
    m.add_argument("--b0", required=True)
    m.add_argument("--metric", choices=["ds", "p", "hat2"], default="ds")
    m.set_defaults(func=_cmd_metrics)

    s = sub.add_parser("score", help="score one candidate against a graph")
    s.add_argument("--graph", required=True)
    s.add_argument("--b", required=True)
    s.add_argument("--divisor", type=float, required=True)
    s.add_argument("--R", type=float, default=4.0)
    s.add_argument("--mode", choices=["ideal", "lipschitz", "relaxed"], default="lipschitz")
    s.set_defaults(func=_cmd_score)

    d = sub.add_parser("density", help="private target edge density")
    d.add_argument("--graph", required=True)
    d.add_argument("--eps", type=float, default=1.0)
    d.add_argument("--R", type=float, default=4.0)
    d.add_argument("--seed", type=int, default=_default_seed())
    d.set_defaults(func=_cmd_density)

    e = sub.add_parser("estimate", help="run an estimator")
    e.add_argument("kind", choices=["sbm", "graphon", "spectral", "subsample", "robust"])
    e.add_argument("--graph", required=True)
    e.add_argument("--k", type=int, default=2)
    e.add_argument("--eps", type=float, default=1.0)
    e.add_argument("--R", type=float, default=4.0)
    e.add_argument("--d", type=float, default=5.0)
    e.add_argument("--tau", type=float, default=0.5)
    e.add_argument("--corruption", type=float, default=0.1)
    e.add_argument("--divisor", type=float, default=0.0)
    e.add_argument("--eta", type=float, default=None)
    e.add_argument("--scorer", default="auto")
    e.add_argument("--seed", type=int, default=_default_seed())
    e.set_defaults(func=_cmd_estimate)

    a = sub.add_parser("audit", help="run a verification audit (exit 1 on failure)")
    a.add_argument("--kind", choices=sorted(harness.AUDITS), required=True)
    a.add_argument("--pairs", type=int, default=None)
    a.add_argument("--graphs", type=int, default=None)
    a.add_argument("--seed", type=int, default=_default_seed())
    a.add_argument("--out", default=None)
    a.set_defaults(func=_cmd_audit)

    ma = sub.add_parser("mechanism", help="mechanism-level tools")
    masub = ma.add_subparsers(dest="subcommand", required=True)
    maa = masub.add_parser("audit", help="per-candidate log-ratio table (CSV)")
    maa.add_argument("--n", type=int, default=6)
    maa.add_argument("--eps", type=float, default=1.0)
    maa.add_argument("--R", type=float, default=2.0)
    maa.add_argument("--seed", type=int, default=_default_seed())
    maa.set_defaults(func=_cmd_mechanism_audit)

    x = sub.add_parser("experiment", help="parameter sweep -> CSV + JSON summary")
    x.add_argument("--config", default=None, help="TOML config (CLI flags override)")
    x.add_argument("--b0", default="[[1.5,0.5],[0.5,1.5]]")
    x.add_argument("--k", type=int, default=2)
    x.add_argument("--n-list", default="[64]")
    x.add_argument("--d-list", default="[8]")
    x.add_argument("--eps-list", default="[1.0]")
    x.add_argument("--R", type=float, default=4.0)
    x.add_argument("--trials", type=int, default=2)
    x.add_argument("--scorer", default=None)
    x.add_argument("--seed", type=int, default=None)
    x.add_argument("--out", default=None)
    x.set_defaults(func=_cmd_experiment)

    pl = sub.add_parser("plotdata", help="tidy per-group means from a sweep CSV")
    pl.add_argument("--input", required=True)
    pl.add_argument("--x", required=True)
    pl.add_argument("--y", required=True)
    pl.add_argument("--groupby", required=True)
    pl.add_argument("--out", default=None)
    pl.set_defaults(func=_cmd_plotdata)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
