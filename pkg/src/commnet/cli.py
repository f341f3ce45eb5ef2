"""Command-line front end: simulate, fit, summarize, diagnose.

Exit codes: 0 on success, 2 for usage mistakes, 3 for unreadable or
inconsistent data, 4 when the sampler loses numerical stability (the
failing state is snapshotted next to the draws for inspection).
Simulation output is a pure function of the scenario and seed, so the
same invocation writes byte-identical files; fitting re-read data
reproduces an in-memory fit exactly because the file formats are
lossless.
"""

from __future__ import annotations

import argparse
import dataclasses
import math
import os
import pickle
import shutil
import sys
from concurrent.futures import ProcessPoolExecutor

import numpy as np

import commnet
from commnet import chainio
from commnet.chainio import DataError
from commnet.diagnostics import acf, ess, geweke
from commnet.postprocess import community_weighted_average, resolve_labels
from commnet.sampler import ChainNumericalError, FitConfig, run_chain
from commnet.simulate import (ScenarioSpec, generate_censored_network,
                              generate_network, scenario_presets)

_SUMMARY_FILE = "summary.csv"
_NODE_INTERVALS_FILE = "node_intervals.csv"
_CLUSTERS_FILE = "clusters.csv"
_DIAGNOSTICS_FILE = "diagnostics.csv"
_ACF_FILE = "acf.csv"
_DIAGNOSE_SUMMARY_FILE = "diagnose-summary.json"

_ROLE_SOURCES = {"sender": "row", "receiver": "col",
                 "dyad_sender": "dyad", "dyad_receiver": "dyad"}


class UsageError(Exception):
    """The invocation itself is wrong, independent of any file contents."""


# ---------------------------------------------------------------------------
# simulate


def _rescale_spec(spec: ScenarioSpec, nodes: int) -> ScenarioSpec:
    """Resize a scenario, keeping community proportions (each kept >= 1)."""
    k = len(spec.community_sizes)
    if nodes < k:
        raise UsageError(f"--nodes {nodes} cannot hold {k} communities")
    if nodes == spec.n:
        return spec
    shares = [size * nodes / spec.n for size in spec.community_sizes]
    sizes = [max(1, math.floor(s)) for s in shares]
    remainders = sorted(range(k), key=lambda c: shares[c] - math.floor(shares[c]),
                        reverse=True)
    cursor = 0
    while sum(sizes) < nodes:
        sizes[remainders[cursor % k]] += 1
        cursor += 1
    while sum(sizes) > nodes:
        cursor += 1
        candidate = remainders[-(cursor % k) - 1]
        if sizes[candidate] > 1:
            sizes[candidate] -= 1
    return dataclasses.replace(spec, n=nodes, community_sizes=tuple(sizes))


def cmd_simulate(args) -> int:
    if (args.preset is None) == (args.spec_file is None):
        raise UsageError("give exactly one of --preset or --spec-file")
    if args.preset is not None:
        presets = scenario_presets()
        if args.preset not in presets:
            raise UsageError(f"unknown preset {args.preset!r}; available: "
                             + ", ".join(sorted(presets)))
        spec = presets[args.preset]
    else:
        spec = chainio.read_scenario_file(args.spec_file)
    if args.nodes is not None:
        spec = _rescale_spec(spec, args.nodes)
    seed = spec.seed if args.seed is None else args.seed
    spec = dataclasses.replace(spec, seed=seed)

    os.makedirs(args.out_dir, exist_ok=True)
    if spec.censor_cap is not None:
        network, covariates, truth = generate_censored_network(spec, seed=seed)
    else:
        network, covariates, truth = generate_network(spec, seed=seed)
    written = chainio.write_network(args.out_dir, network)
    written += chainio.write_covariates(args.out_dir, covariates)
    chainio.write_truth(os.path.join(args.out_dir, chainio.TRUTH_FILE), truth)
    written.append(chainio.TRUTH_FILE)
    manifest = {
        "command": "simulate",
        "package_version": commnet.__version__,
        "scenario": chainio.scenario_to_dict(spec),
        "seed": seed,
        "outputs": chainio.digest_files(args.out_dir, written),
    }
    chainio.write_manifest(os.path.join(args.out_dir, chainio.MANIFEST_FILE),
                           manifest)
    density = float(np.mean(network.y[~np.eye(network.n, dtype=bool)] == 1))
    print(f"wrote {spec.name} network: n={network.n}, density={density:.3f}, "
          f"files: {', '.join(written + [chainio.MANIFEST_FILE])}")
    return 0


# ---------------------------------------------------------------------------
# fit


def _config_as_dict(config: FitConfig) -> dict:
    payload = dataclasses.asdict(config)
    labels = payload.get("initial_labels")
    if labels is not None:
        payload["initial_labels"] = [int(v) for v in np.asarray(labels)]
    return payload


_INPUT_FILE_PREFIXES = (chainio.ADJACENCY_FILE, chainio.NETWORK_META_FILE,
                        chainio.COVARIATES_FILE, chainio.COVARIATES_META_FILE)


def _input_files(data_dir) -> list[str]:
    names = []
    for name in sorted(os.listdir(data_dir)):
        if name in _INPUT_FILE_PREFIXES or \
                (name.startswith("dyad-") and name.endswith(".csv")):
            names.append(name)
    return names


def _build_fit_config(args, n_communities: int, seed: int) -> FitConfig:
    if args.init == "file":
        if args.init_file is None:
            raise UsageError("--init file needs --init-file")
        initial_labels = chainio.read_labels_file(args.init_file)
        init_method = "provided"
    else:
        if args.init_file is not None:
            raise UsageError("--init-file only makes sense with --init file")
        initial_labels = None
        init_method = args.init
    flags = chainio.read_dependence_flags(args.dep_flags) \
        if args.dep_flags else None
    return FitConfig(
        n_communities=n_communities,
        n_iter=args.iterations,
        burn_in=args.burnin,
        thin=args.thin,
        seed=seed,
        init_method=init_method,
        initial_labels=initial_labels,
        censored_mode=True if args.censored else None,
        dependence_flags=flags,
    )


def _fit_one(data_dir, out_dir, config: FitConfig, *, resume: bool,
             checkpoint_every: int) -> dict:
    """Run one chain against on-disk data, writing draws, manifest, and
    periodic checkpoints into out_dir.  Returns the manifest payload."""
    network = chainio.read_network(data_dir)
    covariates = chainio.read_covariates(data_dir, network.n)
    os.makedirs(out_dir, exist_ok=True)
    checkpoint_path = os.path.join(out_dir, chainio.CHECKPOINT_FILE)
    resume_from = None
    if resume:
        if not os.path.exists(checkpoint_path):
            raise DataError(f"--resume given but {checkpoint_path} is missing")
        resume_from = chainio.load_checkpoint(checkpoint_path)

    def hook(snapshot):
        chainio.save_checkpoint(checkpoint_path, snapshot)

    try:
        chain = run_chain(network, covariates, config,
                          checkpoint_hook=hook,
                          checkpoint_every=checkpoint_every,
                          resume_from=resume_from)
    except ChainNumericalError as err:
        snapshot_path = os.path.join(out_dir, chainio.ERROR_STATE_FILE)
        with open(snapshot_path, "wb") as fh:
            pickle.dump({"iteration": err.iteration, "state": err.state,
                         "message": str(err)}, fh,
                        protocol=pickle.HIGHEST_PROTOCOL)
        err.snapshot_path = snapshot_path
        raise

    chainio.write_draws(os.path.join(out_dir, chainio.DRAWS_FILE), chain)
    input_names = _input_files(data_dir)
    for name in input_names:
        shutil.copy(os.path.join(data_dir, name), os.path.join(out_dir, name))
    per_iteration = chain.seconds_elapsed / chain.iterations_run \
        if chain.iterations_run else 0.0
    manifest = {
        "command": "fit",
        "package_version": commnet.__version__,
        "config": _config_as_dict(config),
        "config_digest": chain.config_digest,
        "seed": config.seed,
        "data_dir": os.path.abspath(data_dir),
        "input_digests": chainio.digest_files(data_dir, input_names),
        "sampler": {
            "iterations": chain.iterations_run,
            "n_draws": chain.n_draws,
            "sample_seconds": chain.seconds_elapsed,
            "seconds_per_iteration": per_iteration,
            "iterations_per_second": chain.iterations_per_second,
            "membership_acceptance": chain.membership_acceptance,
            "reciprocity_acceptance": chain.reciprocity_acceptance,
        },
        "outputs": chainio.digest_files(out_dir, [chainio.DRAWS_FILE]),
    }
    chainio.write_manifest(os.path.join(out_dir, chainio.MANIFEST_FILE),
                           manifest)
    return manifest


def _chain_worker(payload: dict) -> dict:
    config = FitConfig(**payload["config"])
    return _fit_one(payload["data_dir"], payload["out_dir"], config,
                    resume=payload["resume"],
                    checkpoint_every=payload["checkpoint_every"])


def cmd_fit(args) -> int:
    if args.communities < 1:
        raise UsageError("--K must be at least 1")
    if args.chains < 1:
        raise UsageError("--chains must be at least 1")
    base_config = _build_fit_config(args, args.communities, args.seed)
    if args.chains == 1:
        manifest = _fit_one(args.data_dir, args.out_dir, base_config,
                            resume=args.resume,
                            checkpoint_every=args.checkpoint_every)
        stats = manifest["sampler"]
        print(f"fit complete: {stats['n_draws']} draws from "
              f"{stats['iterations']} iterations "
              f"({stats['iterations_per_second']:.1f} it/s), "
              f"membership acceptance {stats['membership_acceptance']:.3f}")
        return 0

    os.makedirs(args.out_dir, exist_ok=True)
    payloads = []
    for index in range(args.chains):
        config = dataclasses.replace(base_config, seed=args.seed + index)
        payloads.append({
            "config": _config_as_dict(config),
            "data_dir": args.data_dir,
            "out_dir": os.path.join(args.out_dir, f"chain-{index}"),
            "resume": args.resume,
            "checkpoint_every": args.checkpoint_every,
        })
    workers = min(args.chains, os.cpu_count() or 1)
    with ProcessPoolExecutor(max_workers=workers) as pool:
        manifests = list(pool.map(_chain_worker, payloads))
    top = {
        "command": "fit",
        "package_version": commnet.__version__,
        "config": _config_as_dict(base_config),
        "seed": args.seed,
        "data_dir": os.path.abspath(args.data_dir),
        "chains": [{"directory": f"chain-{i}",
                    "seed": m["seed"],
                    "config_digest": m["config_digest"]}
                   for i, m in enumerate(manifests)],
        "input_digests": manifests[0]["input_digests"],
    }
    chainio.write_manifest(os.path.join(args.out_dir, chainio.MANIFEST_FILE),
                           top)
    for i, m in enumerate(manifests):
        stats = m["sampler"]
        print(f"chain {i} (seed {m['seed']}): {stats['n_draws']} draws, "
              f"{stats['iterations_per_second']:.1f} it/s")
    return 0


# ---------------------------------------------------------------------------
# summarize


def _load_fit(fit_dir):
    draws_path = os.path.join(fit_dir, chainio.DRAWS_FILE)
    if not os.path.exists(draws_path):
        if os.path.isdir(os.path.join(fit_dir, "chain-0")):
            raise DataError(f"{fit_dir} holds multiple chains; point "
                            "--fit-dir at one of its chain-* directories")
        raise DataError(f"{fit_dir} has no {chainio.DRAWS_FILE}; "
                        "run the fit command first")
    return chainio.reconstruct_chain(fit_dir)


def _slot_names(slots, fit_dir, n: int) -> list[str]:
    """Human-readable covariate names for summary slots, falling back to
    positional names when the fit directory lacks covariate files."""
    try:
        covariates = chainio.read_covariates(fit_dir, n)
        names = {"row": [c.name for c in covariates.row],
                 "col": [c.name for c in covariates.col],
                 "dyad": [c.name for c in covariates.dyad]}
    except DataError:
        names = None
    labels = []
    for role, index in slots:
        if names is not None:
            labels.append(f"{names[_ROLE_SOURCES[role]][index]}:{role}")
        else:
            labels.append(f"{role}[{index}]")
    return labels


def _role_variability(role, index, covariates, cluster_map, n_communities):
    """Per-community and overall mean squared regressor for one slot.

    Node covariates contribute one value per node; dyadic covariates
    contribute the mean square over a node's structurally present dyads,
    grouped by sender or receiver community as the role dictates.
    """
    if role in ("sender", "receiver"):
        source = covariates.row if role == "sender" else covariates.col
        node_sq = np.asarray(source[index].values, dtype=float) ** 2
    else:
        values = np.asarray(covariates.dyad[index].values, dtype=float)
        n = values.shape[0]
        off = ~np.eye(n, dtype=bool)
        squares = np.where(off, values ** 2, 0.0)
        axis = 1 if role == "dyad_sender" else 0
        node_sq = squares.sum(axis=axis) / (n - 1)
    per_community = np.array([node_sq[cluster_map == c].mean()
                              for c in range(n_communities)])
    return per_community, float(node_sq.mean())


def _write_table(path, header, rows) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(",".join(header) + "\n")
        for row in rows:
            fh.write(",".join(str(cell) for cell in row) + "\n")


def _format_cell(value: float) -> str:
    return f"{value:.6g}"


def cmd_summarize(args) -> int:
    chain = _load_fit(args.fit_dir)
    out_dir = args.out_dir or args.fit_dir
    os.makedirs(out_dir, exist_ok=True)
    if args.communities is not None:
        n_communities = args.communities
    else:
        manifest = chainio.read_manifest(
            os.path.join(args.fit_dir, chainio.MANIFEST_FILE))
        n_communities = int(manifest["config"]["n_communities"])
    n = chain.labels.shape[1]
    summary = resolve_labels(chain, n_communities, level=args.level,
                             pooled_draws=args.pooled_draws)
    names = _slot_names(summary.slots, args.fit_dir, n)

    pooled = None
    if args.compare_averaged:
        try:
            covariates = chainio.read_covariates(args.fit_dir, n)
        except DataError as exc:
            raise DataError("--compare-averaged needs the covariate files "
                            f"inside the fit directory: {exc}") from exc
        pooled = []
        for q, (role, index) in enumerate(summary.slots):
            per_community, overall = _role_variability(
                role, index, covariates, summary.cluster_map, n_communities)
            pooled.append(tuple(
                community_weighted_average(endpoints[:, q], summary.sizes,
                                           per_community, overall)
                for endpoints in (summary.community_lower,
                                  summary.community_mean,
                                  summary.community_upper)))

    header = ["covariate", "community", "lower", "mean", "upper"]
    if pooled is not None:
        header += ["pooled_lower", "pooled_mean", "pooled_upper"]
    rows = []
    for q, name in enumerate(names):
        for c in range(summary.n_communities):
            row = [name, c,
                   _format_cell(summary.community_lower[c, q]),
                   _format_cell(summary.community_mean[c, q]),
                   _format_cell(summary.community_upper[c, q])]
            if pooled is not None:
                row += [_format_cell(v) for v in pooled[q]]
            rows.append(row)
    _write_table(os.path.join(out_dir, _SUMMARY_FILE), header, rows)

    node_rows = []
    for q, name in enumerate(names):
        for i in range(n):
            node_rows.append([i, name, int(summary.cluster_map[i]),
                              _format_cell(summary.node_lower[i, q]),
                              _format_cell(summary.node_mean[i, q]),
                              _format_cell(summary.node_upper[i, q])])
    _write_table(os.path.join(out_dir, _NODE_INTERVALS_FILE),
                 ["node", "covariate", "community", "lower", "mean", "upper"],
                 node_rows)
    _write_table(os.path.join(out_dir, _CLUSTERS_FILE), ["node", "community"],
                 [[i, int(summary.cluster_map[i])] for i in range(n)])

    width = max(len(name) for name in names) if names else 0
    print(f"{int(round(100 * args.level))}% credible intervals over "
          f"{chain.n_draws} draws, {n_communities} communities "
          f"(sizes {', '.join(str(int(s)) for s in summary.sizes)}):")
    for q, name in enumerate(names):
        for c in range(summary.n_communities):
            line = (f"  {name:<{width}}  community {c}: "
                    f"[{summary.community_lower[c, q]:8.4f}, "
                    f"{summary.community_upper[c, q]:8.4f}]  "
                    f"mean {summary.community_mean[c, q]:8.4f}")
            if pooled is not None and c == 0:
                line += f"   pooled mean {pooled[q][1]:8.4f}"
            print(line)
    print(f"tables written to {out_dir}")
    return 0


# ---------------------------------------------------------------------------
# diagnose


def _diagnostic_series(chain):
    """Yield (parameter, index_label, series) for every real-valued series
    the chain stores.  Community labels are categorical and excluded."""
    yield "intercept", "", chain.intercept
    yield "reciprocity", "", chain.reciprocity
    yield "log_likelihood", "", chain.loglik
    k = chain.affinity.shape[1]
    for a in range(k):
        for b in range(k):
            yield "affinity", f"{a}:{b}", chain.affinity[:, a, b]
    blocks = [("sender", chain.sender_coefficients),
              ("receiver", chain.receiver_coefficients),
              ("dyad_sender", chain.dyad_sender_coefficients),
              ("dyad_receiver", chain.dyad_receiver_coefficients)]
    n = chain.sender_effects.shape[1]
    for name, arr in blocks:
        for i in range(n):
            for l in range(arr.shape[2]):
                yield name, f"{i}:{l}", arr[:, i, l]
    for i in range(n):
        yield "sender_effect", str(i), chain.sender_effects[:, i]
    for i in range(n):
        yield "receiver_effect", str(i), chain.receiver_effects[:, i]
    for a, b in ((0, 0), (0, 1), (1, 1)):
        yield "effect_covariance", f"{a}:{b}", chain.effect_covariance[:, a, b]
    if chain.censor_offsets is not None:
        for i in range(n):
            yield "censor_offset", str(i), chain.censor_offsets[:, i]
        yield "censor_offset_variance", "", chain.censor_offset_var


def cmd_diagnose(args) -> int:
    chain = _load_fit(args.fit_dir)
    if chain.n_draws < 100:
        raise DataError(f"chains too short to diagnose: {chain.n_draws} "
                        "draws stored, need at least 100")
    out_dir = args.out_dir or args.fit_dir
    os.makedirs(out_dir, exist_ok=True)
    max_lag = min(args.max_lag, chain.n_draws - 1)

    table_rows = []
    acf_rows = []
    z_scores = []
    ess_values = []
    for parameter, label, series in _diagnostic_series(chain):
        mixing = ess(series)
        if not mixing.degenerate:
            ess_values.append(float(mixing))
        try:
            z = geweke(series)
            z_scores.append(z)
            z_cell = _format_cell(z)
        except ValueError:
            z_cell = "nan"
        table_rows.append([parameter, label, _format_cell(series.mean()),
                           _format_cell(float(mixing)),
                           int(mixing.degenerate), z_cell])
        if not mixing.degenerate:
            correlations = acf(series, max_lag)
            for lag in range(max_lag + 1):
                acf_rows.append([parameter, label, lag,
                                 _format_cell(correlations[lag])])
    _write_table(os.path.join(out_dir, _DIAGNOSTICS_FILE),
                 ["parameter", "index", "mean", "ess", "degenerate",
                  "geweke_z"], table_rows)
    _write_table(os.path.join(out_dir, _ACF_FILE),
                 ["parameter", "index", "lag", "acf"], acf_rows)

    z_arr = np.asarray(z_scores, dtype=float)
    fraction = float(np.mean(np.abs(z_arr) < 2.0)) if z_arr.size else \
        float("nan")
    payload = {
        "n_draws": chain.n_draws,
        "n_series": len(table_rows),
        "n_z_scores": int(z_arr.size),
        "fraction_abs_z_below_2": fraction,
        "min_ess": float(np.min(ess_values)) if ess_values else None,
        "median_ess": float(np.median(ess_values)) if ess_values else None,
        "max_lag": max_lag,
    }
    chainio.write_manifest(os.path.join(out_dir, _DIAGNOSE_SUMMARY_FILE),
                           payload)
    print(f"{len(table_rows)} series over {chain.n_draws} draws: "
          f"median ESS {payload['median_ess']:.0f}, "
          f"min ESS {payload['min_ess']:.0f}")
    print(f"fraction of parameters with |geweke z| < 2: {fraction:.3f}")
    print(f"tables written to {out_dir}")
    return 0


# ---------------------------------------------------------------------------
# parser and entry point


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="commnet",
        description="Simulate, fit, and summarize community-dependent "
                    "network regressions.")
    commands = parser.add_subparsers(dest="command", required=True)

    sim = commands.add_parser(
        "simulate", help="draw a synthetic network and write it out")
    sim.add_argument("--preset", help="named scenario "
                     f"({', '.join(sorted(scenario_presets()))})")
    sim.add_argument("--spec-file", help="JSON scenario description")
    sim.add_argument("--seed", type=int, default=None,
                     help="override the scenario's seed")
    sim.add_argument("--nodes", type=int, default=None,
                     help="rescale the scenario to this many nodes")
    sim.add_argument("-o", "--out-dir", required=True)
    sim.set_defaults(func=cmd_simulate)

    fit = commands.add_parser(
        "fit", help="run the posterior sampler on a written network")
    fit.add_argument("--data-dir", required=True,
                     help="directory produced by simulate (or matching it)")
    fit.add_argument("--K", "--communities", dest="communities", type=int,
                     required=True, help="number of communities")
    fit.add_argument("--iter", "--iterations", dest="iterations", type=int,
                     default=150000)
    fit.add_argument("--burnin", "--burn-in", dest="burnin", type=int,
                     default=10000)
    fit.add_argument("--thin", type=int, default=10)
    fit.add_argument("--seed", type=int, default=0)
    fit.add_argument("--init", choices=("spectral", "residual", "random",
                                        "file"), default="spectral")
    fit.add_argument("--init-file", default=None,
                     help="starting labels, one per line (with --init file)")
    fit.add_argument("--censored", action="store_true",
                     help="treat flagged nodes' out-degrees as capped")
    fit.add_argument("--dep-flags", default=None,
                     help="file of per-covariate dependence overrides")
    fit.add_argument("--chains", type=int, default=1,
                     help="independent chains with derived seeds")
    fit.add_argument("--resume", action="store_true",
                     help="continue from the checkpoint in the output dir")
    fit.add_argument("--checkpoint-every", type=int, default=1000)
    fit.add_argument("-o", "--out-dir", required=True)
    fit.set_defaults(func=cmd_fit)

    summ = commands.add_parser(
        "summarize", help="community-level credible intervals from a fit")
    summ.add_argument("--fit-dir", required=True)
    summ.add_argument("--K", "--communities", dest="communities", type=int,
                      default=None, help="override the fitted community count")
    summ.add_argument("--level", type=float, default=0.95)
    summ.add_argument("--pooled-draws", action="store_true",
                      help="pool member draws instead of averaging endpoints")
    summ.add_argument("--compare-averaged", action="store_true",
                      help="add variance-weighted pooled columns")
    summ.add_argument("-o", "--out-dir", default=None,
                      help="defaults to the fit directory")
    summ.set_defaults(func=cmd_summarize)

    diag = commands.add_parser(
        "diagnose", help="per-parameter mixing and stationarity checks")
    diag.add_argument("--fit-dir", required=True)
    diag.add_argument("--max-lag", type=int, default=100)
    diag.add_argument("-o", "--out-dir", default=None,
                      help="defaults to the fit directory")
    diag.set_defaults(func=cmd_diagnose)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return exc.code if isinstance(exc.code, int) else 2
    try:
        return args.func(args)
    except UsageError as err:
        print(f"error: {err}", file=sys.stderr)
        return 2
    except DataError as err:
        print(f"error: {err}", file=sys.stderr)
        return 3
    except ChainNumericalError as err:
        print(f"error: {err}", file=sys.stderr)
        snapshot = getattr(err, "snapshot_path", None)
        if snapshot:
            print(f"state at failure saved to {snapshot}", file=sys.stderr)
        return 4
    except ValueError as err:
        print(f"error: {err}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
