"""Command-line pipeline: simulate, map, propose, sample, compare, reference, check-eq6.

Every command writes into ``--out``::

    out/config.ini     the effective configuration (reloadable with --config)
    out/chains/        chain CSVs
    out/summaries/     JSON summaries and quantile-trace CSVs

Outputs contain no timestamps, so reruns with the same seed are byte-identical.
"""

import argparse
import json
import os
import sys

import numpy as np

from . import __version__
from .config import dump_config, load_config, with_overrides
from .datagen import SimConfig, read_dataset, simulate, write_dataset, write_truth
from .mapsolve import MapOptions, find_map
from .pipeline import (
    build_proposal, chain_summary, compare, finite_or_none, kernels_for, prepare,
    reference_chain, select_mala_gamma, TUNING_STREAM,
)
from .proposal import expected_info_gap
from .samplers import KERNELS, derive_seed, run_chain
from .structural import get_model

COMMANDS = ("simulate", "map", "propose", "sample", "compare", "reference", "check-eq6")


def _write_json(path, obj):
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _layout(out):
    for sub in ("chains", "summaries"):
        os.makedirs(os.path.join(out, sub), exist_ok=True)


def _setup(args):
    cfg = load_config(args.config) if args.config else load_config()
    cfg = with_overrides(
        cfg,
        seed=args.seed,
        iters=args.iters,
        runs=args.runs,
        individual=args.individual,
        burn_in=args.burn_in,
        kernels=tuple(args.kernel) if args.kernel else None,
    )
    model = get_model(cfg.model)
    theta = cfg.theta()
    if model.n_params != theta.dim:
        raise ValueError(f"model {model.name} has {model.n_params} parameters, config has {theta.dim}")
    _layout(args.out)
    with open(os.path.join(args.out, "config.ini"), "w", encoding="utf-8") as fh:
        fh.write(dump_config(cfg))
    return cfg, model, theta


def _records(args):
    if not args.data:
        raise ValueError("--data is required for this command")
    with open(args.data, encoding="utf-8", newline="") as fh:
        return read_dataset(fh)


def _pick(records, rid):
    for r in records:
        if r.id == rid:
            return r
    raise KeyError(f"individual {rid!r} not in data (ids: {', '.join(r.id for r in records[:10])}...)")


def _map_opts(cfg):
    return MapOptions(gtol=cfg.gtol, max_iter=cfg.max_iter)


def _mala_gamma(cfg, individual):
    """Fixed gamma from the config, or the ladder value closest to 0.57 acceptance."""
    if cfg.mala_gamma != "auto":
        return float(cfg.mala_gamma), None
    gamma, table = select_mala_gamma(individual.target, cfg.mala_ladder(), cfg.mala_tune_iters,
                                     derive_seed(cfg.seed, TUNING_STREAM))
    return gamma, [{"gamma": g, "acceptance_rate": a} for g, a in table]


def cmd_simulate(args, cfg, model, theta):
    sim = SimConfig(n_individuals=cfg.n_individuals, times=cfg.times, theta=theta,
                    dose_per_kg=cfg.dose_per_kg, weights=cfg.weight, seed=cfg.seed, model=model)
    records, latents = simulate(sim)
    with open(os.path.join(args.out, "data.csv"), "w", encoding="utf-8", newline="") as fh:
        write_dataset(records, fh)
    with open(os.path.join(args.out, "truth.csv"), "w", encoding="utf-8", newline="") as fh:
        write_truth([r.id for r in records], latents, model.param_names, fh, theta)


def cmd_map(args, cfg, model, theta):
    records = _records(args)
    results = []
    for r in records:
        res = find_map(r, theta, model, opts=_map_opts(cfg))
        results.append({"id": r.id, **res.to_dict()})
    _write_json(os.path.join(args.out, "summaries", "map.json"), {
        "param_names": list(model.param_names),
        "n_converged": sum(r["converged"] for r in results),
        "individuals": results,
    })


def cmd_propose(args, cfg, model, theta):
    records = _records(args)
    if args.individual:
        records = [_pick(records, args.individual)]
    out = []
    for r in records:
        res = find_map(r, theta, model, opts=_map_opts(cfg))
        entry = {"id": r.id, "map": res.to_dict()}
        for kind in ("linearized", "laplace"):
            entry[kind] = build_proposal(r, theta, model, res, kind, cfg.allow_unconverged).to_dict()
        out.append(entry)
    _write_json(os.path.join(args.out, "summaries", "proposals.json"),
                {"param_names": list(model.param_names), "individuals": out})


def _individual(args, cfg, model, theta):
    record = _pick(_records(args), cfg.individual)
    return prepare(record, theta, model, cfg.proposal, _map_opts(cfg), cfg.allow_unconverged)


def cmd_sample(args, cfg, model, theta):
    ind = _individual(args, cfg, model, theta)
    gamma, table = _mala_gamma(cfg, ind) if "mala" in cfg.kernels else (None, None)
    kernels = kernels_for(ind, cfg.kernels, gamma)
    summaries = {}
    for idx, kind in enumerate(cfg.kernels):
        chain = run_chain(None, kernels[kind], ind.target, cfg.iters, derive_seed(cfg.seed, idx))
        with open(os.path.join(args.out, "chains", f"{kind}.csv"), "w", encoding="utf-8", newline="") as fh:
            chain.to_csv(fh)
        summaries[kind] = chain_summary(chain, cfg.burn_in)
    _write_json(os.path.join(args.out, "summaries", "sample.json"),
                {"individual": ind.record.id, "mala_tuning": table, "chains": summaries})


def cmd_reference(args, cfg, model, theta):
    ind = _individual(args, cfg, model, theta)
    gamma = _mala_gamma(cfg, ind)[0] if cfg.reference_kernel == "mala" else None
    ref = reference_chain(ind, cfg.reference_kernel, cfg.reference_iters, cfg.seed, gamma)
    with open(os.path.join(args.out, "chains", "reference.csv"), "w", encoding="utf-8", newline="") as fh:
        ref.to_csv(fh)
    _write_json(os.path.join(args.out, "summaries", "reference.json"),
                {"individual": ind.record.id, **chain_summary(ref, cfg.reference_burn_in)})


def cmd_compare(args, cfg, model, theta):
    ind = _individual(args, cfg, model, theta)
    gamma, table = _mala_gamma(cfg, ind) if "mala" in cfg.kernels else (None, None)
    ref_gamma = gamma if cfg.reference_kernel == "mala" else None
    ref = reference_chain(ind, cfg.reference_kernel, cfg.reference_iters, cfg.seed, ref_gamma)
    results = compare(ind, cfg.kernels, cfg.runs, cfg.iters, cfg.seed, ref, cfg.reference_burn_in,
                      cfg.effective_thresholds(), cfg.burn_in, gamma, cfg.workers)
    kernels_out = {}
    for kind, res in results.items():
        with open(os.path.join(args.out, "summaries", f"quantiles_{kind}.csv"), "w",
                  encoding="utf-8", newline="") as fh:
            res["trace"].to_csv(fh)
        kernels_out[kind] = {
            "kernel": res["kernel"].describe(),
            "mean_acceptance_rate": res["acceptance"],
            "replicates": res["summary"].to_dict(),
            "inside_reference_iqr": res["summary"].inside_reference_iqr().tolist(),
        }
    _write_json(os.path.join(args.out, "summaries", "compare.json"), {
        "individual": ind.record.id,
        "n_runs": cfg.runs,
        "n_iter": cfg.iters,
        "mala_gamma": gamma,
        "mala_tuning": table,
        "reference": chain_summary(ref, cfg.reference_burn_in),
        "kernels": kernels_out,
    })


def cmd_check_eq6(args, cfg, model, theta):
    ind = _individual(args, cfg, model, theta)
    gap = expected_info_gap(ind.record, theta, model, ind.map_result, cfg.n_sims, cfg.seed)
    lin = ind.proposal if cfg.proposal == "linearized" else build_proposal(
        ind.record, theta, model, ind.map_result, "linearized", cfg.allow_unconverged)
    lap = build_proposal(ind.record, theta, model, ind.map_result, "laplace", cfg.allow_unconverged)
    cov_gap = float(np.linalg.norm(lap.cov - lin.cov) / np.linalg.norm(lin.cov))
    _write_json(os.path.join(args.out, "summaries", "eq6.json"), {
        "individual": ind.record.id,
        "n_sims": gap.n_sims,
        "info_gap": gap.gap,
        "info_gap_stderr": finite_or_none(gap.stderr),
        "within_3_stderr": bool(gap.gap < 3 * gap.stderr) if gap.n_sims > 1 else None,
        "laplace_vs_linearized_cov_rel_frobenius": cov_gap,
    })


HANDLERS = {
    "simulate": cmd_simulate,
    "map": cmd_map,
    "propose": cmd_propose,
    "sample": cmd_sample,
    "compare": cmd_compare,
    "reference": cmd_reference,
    "check-eq6": cmd_check_eq6,
}


def build_parser():
    parser = argparse.ArgumentParser(prog="nlmeimh", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--out", required=True, help="output directory")
        p.add_argument("--config", help="INI configuration file")
        p.add_argument("--data", help="dataset CSV (id,time,observation,dose)")
        p.add_argument("--seed", type=int)
        p.add_argument("--kernel", action="append", choices=KERNELS,
                       help="kernel to run; repeat for several")
        p.add_argument("--iters", type=int)
        p.add_argument("--runs", type=int)
        p.add_argument("--individual")
        p.add_argument("--burn-in", dest="burn_in", type=int)
    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        if args.config and not os.path.exists(args.config):
            raise FileNotFoundError(f"config not found: {args.config}")
        if args.data and not os.path.exists(args.data):
            raise FileNotFoundError(f"data not found: {args.data}")
        cfg, model, theta = _setup(args)
        HANDLERS[args.command](args, cfg, model, theta)
    except Exception as exc:  # noqa: BLE001 - single-line machine-readable failure
        msg = " ".join(str(exc).split())
        print(f"error: {type(exc).__name__}: {msg}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
