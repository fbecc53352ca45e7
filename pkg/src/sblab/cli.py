"""Command-line entry point ``sblab``.

Exit codes: 0 success, 2 invalid config or input, 3 enumeration refused as
too large, 4 numerical failure.
"""

from __future__ import annotations

import argparse
import csv
import json
import sys
from pathlib import Path

from . import bvm, exact, harness, mcmc, prediction
from .core import RngHandle
from .diagnostics import diagnose
from .errors import (ComplexityRefused, ConfigError, ConvergenceError, DegenerateDesign,
                     DimensionError, DomainError, EmptyFamily, EmptyMixture, IntegralError, IoError,
                     ParseError, RankError, SolverError)
from .priors import certify_dimension_prior

EXIT_CONFIG, EXIT_COMPLEXITY, EXIT_NUMERIC = 2, 3, 4


def _dump(path: Path, obj):
    path.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")


def _write_rows(path: Path, header, rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)


def _support_str(idx) -> str:
    return " ".join(str(int(i)) for i in idx)


def cmd_diagnose(cfg, out, args):
    X, b0, _ = harness.make_instance(cfg)
    dp, slab = harness.build_priors(cfg, X)
    supports = [b0.model] if b0 is not None and b0.s else []
    rep = diagnose(X, int(cfg["diagnose.s_max"]), supports, slab.lam,
                   certify_dimension_prior(dp).A4)
    _dump(out / "diagnostics.json", rep.to_dict())


def _fit(cfg):
    X, b0, y = harness.make_instance(cfg)
    dp, slab = harness.build_priors(cfg, X)
    rng = RngHandle(int(cfg["seed"]), (2,))
    return X, b0, y, dp, slab, rng


def cmd_fit_exact(cfg, out, args):
    X, b0, y, dp, slab, rng = _fit(cfg)
    post = harness.fit_posterior(harness.ExperimentConfig({**cfg.values, "engine": "exact"}),
                                 X, y, dp, slab, rng)
    summary = {"map_model": list(exact.map_model(post).indices),
               "inclusion_probabilities": exact.inclusion_probabilities(post).tolist()}
    if isinstance(post, exact.SequencePosterior):
        summary["dimension_posterior"] = post.dimension_posterior().tolist()
        summary["engine"] = "sequence"
    else:
        summary.update(post.to_dict())
        summary["engine"] = "enumeration"
    _dump(out / "posterior.json", summary)
    draws = exact.sample_posterior_array(post, X, y, rng.child(1), int(cfg["n_draws"]))
    _write_rows(out / "draws.csv", [f"b{j}" for j in range(X.p)], draws.tolist())


def cmd_fit_mcmc(cfg, out, args):
    X, b0, y, dp, slab, rng = _fit(cfg)
    ch = mcmc.ChainConfig(int(cfg["mcmc.n_sweeps"]), int(cfg["mcmc.burn_in"]), rng=rng)
    res = mcmc.run_mcmc(X, y, dp, slab, cfg=ch)
    _write_rows(out / "chain.csv", ["draw", "support", "values"],
                [[t, _support_str(s), " ".join(repr(float(v)) for v in vals)]
                 for t, (s, vals) in enumerate(zip(res.supports, res.values))])
    _dump(out / "diagnostics.json", {
        "acceptance": res.acceptance, "proposed": res.proposed, "accepted": res.accepted,
        "rank_rejections": res.rank_rejections,
        "inclusion_frequencies": res.inclusion_trace().mean(axis=0).tolist(),
        "size_ess": mcmc.effective_sample_size(res.sizes)})


def cmd_bvm(cfg, out, args):
    X, b0, y, dp, slab, rng = _fit(cfg)
    A4 = certify_dimension_prior(dp).A4
    post = exact.enumerate_posterior(X, y, dp, slab, s_max=cfg["s_max"])
    ref = b0 if b0 is not None else bvm.plug_in_reference(post)
    nb = bvm.build_neighborhood(ref, X, A4, float(cfg["bvm.M"]))
    mix = bvm.bvm_weights(X, y, dp, slab.lam, nb)
    tv = bvm.tv_upper_bound(post, mix, bvm.TVConfig(mc_draws=int(cfg["bvm.mc_draws"])))
    res = mix.to_dict()
    res.update({"tv_bound": tv.value, "tv_se": tv.se, "tv_weight_part": tv.weight_part,
                "tv_within_part": tv.within_part, "neighborhood_dim_cap": nb.dim_cap,
                "neighborhood_tail_bound": nb.tail_bound})
    _dump(out / "mixture.json", res)


def cmd_lasso_compare(cfg, out, args):
    X, b0, y, dp, slab, rng = _fit(cfg)
    ctx = {"cfg": cfg, "X": X, "y": y,
           "post": harness.fit_posterior(cfg, X, y, dp, slab, rng.child(4))}
    _dump(out / "lasso.json", harness._rep_lasso(ctx, 0, rng))


def cmd_predict_subspace(cfg, out, args):
    X, b0, y, dp, slab, rng = _fit(cfg)
    fam = prediction.enumerate_subspaces(X, int(cfg["subspace.t_max"]))
    sp = prediction.subspace_posterior(fam, y, float(cfg["subspace.d"]))
    _write_rows(out / "family.csv", ["index", "support", "dim", "log_weight"],
                [[i, _support_str(fam.support(i)), int(fam.dims[i]),
                  repr(float(sp.log_weights[i]))] for i in range(len(fam))])
    gam = prediction.subspace_predict_sample(sp, y, rng.child(1), int(cfg["n_draws"]))
    _write_rows(out / "predictions.csv", [f"g{i}" for i in range(X.n)], gam.tolist())
    res = {"family_size": len(fam), "t_max": fam.t_max, "merged": fam.merged,
           "members_per_dim": fam.counts().tolist(),
           "dimension_posterior": sp.dimension_posterior().tolist()}
    if b0 is not None:
        res["t0"] = prediction.true_subspace_dim(X, b0)
        res["s0"] = b0.s
    _dump(out / "posterior.json", res)


def cmd_simulate(cfg, out, args):
    report = harness.run_experiment(cfg, threads=args.threads)
    harness.write_report(report, out)
    for k, v in report.aggregates.items():
        print(f"{k}: {v['mean']:.6g} (se {v['se']:.2g})")


COMMANDS = {
    "diagnose": (cmd_diagnose, "design diagnostics"),
    "fit-exact": (cmd_fit_exact, "exact posterior by enumeration or the sequence fast path"),
    "fit-mcmc": (cmd_fit_mcmc, "posterior by reversible-jump MCMC"),
    "bvm": (cmd_bvm, "normal-mixture approximation and its TV bound"),
    "lasso-compare": (cmd_lasso_compare, "LASSO posterior against the spike-and-slab posterior"),
    "predict-subspace": (cmd_predict_subspace, "prediction over column-span subspaces"),
    "simulate": (cmd_simulate, "run a replicated experiment"),
}


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="sblab", description=__doc__.splitlines()[0])
    sub = ap.add_subparsers(dest="command", required=True)
    for name, (_, help_) in COMMANDS.items():
        sp = sub.add_parser(name, help=help_)
        sp.add_argument("--config", required=True, help="JSON config file")
        sp.add_argument("--out", default=".", help="output directory")
        sp.add_argument("--seed", type=int, help="override the config seed")
        sp.add_argument("--threads", type=int, default=1, help="worker threads for replications")
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    fn = COMMANDS[args.command][0]
    try:
        cfg = harness.ExperimentConfig.from_file(args.config)
        if args.seed is not None:
            cfg = harness.ExperimentConfig({**cfg.values, "seed": args.seed})
        if args.threads < 1:
            raise ConfigError("--threads must be >= 1")
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        fn(cfg, out, args)
    except (ConfigError, ParseError, DimensionError, IoError) as exc:
        print(f"sblab: invalid input: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except ComplexityRefused as exc:
        print(f"sblab: refused: {exc}", file=sys.stderr)
        return EXIT_COMPLEXITY
    except (SolverError, ConvergenceError, RankError, IntegralError, EmptyMixture, EmptyFamily,
            DegenerateDesign, DomainError) as exc:
        print(f"sblab: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    return 0


if __name__ == "__main__":
    sys.exit(main())
