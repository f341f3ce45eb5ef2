"""Plain-text file formats for networks, covariates, draws, and run provenance.

Everything is CSV or line-oriented text so other tools can read it
without this package.  Adjacency files are headerless 0/1 grids with NA
on the diagonal; node covariates share one CSV whose columns are
described by a sidecar declaring each covariate's role and dependence
flag; dyadic covariates get one square CSV each.  Posterior draws go to
a long-format CSV of (iteration, parameter, index, value) rows, floats
written with shortest round-trip precision so reading them back loses
nothing.  A JSON manifest records configuration hashes, seeds, and input
digests so a run can be traced to its exact inputs.
"""

from __future__ import annotations

import hashlib
import json
import os
import pickle

import numpy as np

from commnet.model import (ABSENT, CoefficientSet, CovariateSet, DyadCovariate,
                           ModelState, NodeCovariate, Sociomatrix)
from commnet.sampler import ChainCheckpoint, ChainOutput
from commnet.simulate import ScenarioSpec

ADJACENCY_FILE = "adjacency.csv"
NETWORK_META_FILE = "network.meta"
COVARIATES_FILE = "covariates.csv"
COVARIATES_META_FILE = "covariates.meta"
TRUTH_FILE = "truth.json"
MANIFEST_FILE = "manifest.json"
DRAWS_FILE = "draws.csv"
CHECKPOINT_FILE = "checkpoint.pkl"
ERROR_STATE_FILE = "error-state.pkl"

_ROLE_TOKENS = {"row": "row", "column": "col"}
_FLAG_TOKENS = {"dependent": True, "tied": False}


class DataError(ValueError):
    """A file failed to parse or its contents are inconsistent."""


def _fail(path, lineno, message) -> DataError:
    return DataError(f"{path}:{lineno}: {message}")


def _read_lines(path) -> list[str]:
    try:
        with open(path, encoding="utf-8") as fh:
            return fh.read().splitlines()
    except OSError as exc:
        raise DataError(f"cannot read {path}: {exc.strerror}") from exc


def _parse_float(token: str, path, lineno: int) -> float:
    try:
        return float(token)
    except ValueError:
        raise _fail(path, lineno, f"expected a number, got {token!r}") from None


def _parse_int(token: str, path, lineno: int) -> int:
    try:
        return int(token)
    except ValueError:
        raise _fail(path, lineno, f"expected an integer, got {token!r}") from None


def _format_row(values) -> str:
    return ",".join(repr(float(v)) for v in values)


# ---------------------------------------------------------------------------
# adjacency


def write_network(directory, network: Sociomatrix) -> list[str]:
    """Write adjacency.csv (plus network.meta when censored); returns the
    file names written."""
    y = network.y
    n = network.n
    rows = []
    for i in range(n):
        cells = [("NA" if j == i else str(int(y[i, j]))) for j in range(n)]
        rows.append(",".join(cells))
    path = os.path.join(directory, ADJACENCY_FILE)
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("\n".join(rows) + "\n")
    written = [ADJACENCY_FILE]
    if network.censor_cap is not None:
        flagged = " ".join(str(i) for i in np.flatnonzero(network.censored))
        meta = f"censor-cap {network.censor_cap}\ncensored {flagged}".rstrip()
        with open(os.path.join(directory, NETWORK_META_FILE), "w",
                  encoding="utf-8") as fh:
            fh.write(meta + "\n")
        written.append(NETWORK_META_FILE)
    return written


def read_network(directory) -> Sociomatrix:
    """Read adjacency.csv and the optional censoring sidecar."""
    path = os.path.join(directory, ADJACENCY_FILE)
    lines = [line for line in _read_lines(path) if line.strip()]
    n = len(lines)
    if n == 0:
        raise DataError(f"{path}: empty adjacency file")
    y = np.empty((n, n), dtype=np.int8)
    for i, line in enumerate(lines):
        cells = line.split(",")
        if len(cells) != n:
            raise _fail(path, i + 1,
                        f"expected {n} columns, got {len(cells)}")
        for j, cell in enumerate(cells):
            cell = cell.strip()
            if j == i:
                if cell != "NA":
                    raise _fail(path, i + 1,
                                f"diagonal entry must be NA, got {cell!r}")
                y[i, j] = ABSENT
            elif cell == "0" or cell == "1":
                y[i, j] = int(cell)
            else:
                raise _fail(path, i + 1,
                            f"adjacency entries must be 0 or 1, got {cell!r}")
    cap, flags = _read_network_meta(directory, n)
    try:
        return Sociomatrix(y, censor_cap=cap, censored=flags)
    except ValueError as exc:
        raise DataError(f"{path}: {exc}") from exc


def _read_network_meta(directory, n: int):
    path = os.path.join(directory, NETWORK_META_FILE)
    if not os.path.exists(path):
        return None, None
    cap = None
    flags = None
    for lineno, line in enumerate(_read_lines(path), start=1):
        tokens = line.split()
        if not tokens or tokens[0].startswith("#"):
            continue
        if tokens[0] == "censor-cap" and len(tokens) == 2:
            cap = _parse_int(tokens[1], path, lineno)
        elif tokens[0] == "censored":
            indices = [_parse_int(t, path, lineno) for t in tokens[1:]]
            if any(i < 0 or i >= n for i in indices):
                raise _fail(path, lineno, "censored node index out of range")
            flags = np.zeros(n, dtype=bool)
            flags[indices] = True
        else:
            raise _fail(path, lineno, f"unrecognized line {line!r}")
    if flags is not None and cap is None:
        raise DataError(f"{path}: censored flags given without a censor-cap")
    return cap, flags


# ---------------------------------------------------------------------------
# covariates


def write_covariates(directory, covs: CovariateSet) -> list[str]:
    """Write covariates.csv, its metadata sidecar, and one square CSV per
    dyadic covariate; returns the file names written."""
    node_covs = [(cov, "row") for cov in covs.row] \
        + [(cov, "column") for cov in covs.col]
    for cov in covs.row + covs.col + covs.dyad:
        if not cov.name or any(ch.isspace() for ch in cov.name):
            raise DataError(f"covariate name {cov.name!r} cannot be written: "
                            "names must be non-empty and free of whitespace")
    meta = ["# covariate roles and community-dependence flags"]
    written = []
    path = os.path.join(directory, COVARIATES_FILE)
    with open(path, "w", encoding="utf-8") as fh:
        if node_covs:
            fh.write(",".join(cov.name for cov, _ in node_covs) + "\n")
            table = np.column_stack([cov.values for cov, _ in node_covs])
            for i in range(covs.n):
                fh.write(_format_row(table[i]) + "\n")
    written.append(COVARIATES_FILE)
    for cov, role in node_covs:
        flag = "dependent" if cov.community_dependent else "tied"
        meta.append(f"node {cov.name} {role} {flag}")
    for position, cov in enumerate(covs.dyad, start=1):
        name = f"dyad-{position}.csv"
        with open(os.path.join(directory, name), "w", encoding="utf-8") as fh:
            for i in range(covs.n):
                fh.write(_format_row(cov.values[i]) + "\n")
        flag = "dependent" if cov.community_dependent else "tied"
        meta.append(f"dyad {cov.name} {name} {flag}")
        written.append(name)
    with open(os.path.join(directory, COVARIATES_META_FILE), "w",
              encoding="utf-8") as fh:
        fh.write("\n".join(meta) + "\n")
    written.append(COVARIATES_META_FILE)
    return written


def _read_float_table(path, expect_rows: int | None = None) -> np.ndarray:
    lines = [line for line in _read_lines(path) if line.strip()]
    rows = []
    width = None
    for lineno, line in enumerate(lines, start=1):
        cells = line.split(",")
        if width is None:
            width = len(cells)
        elif len(cells) != width:
            raise _fail(path, lineno,
                        f"expected {width} columns, got {len(cells)}")
        rows.append([_parse_float(c, path, lineno) for c in cells])
    if expect_rows is not None and len(rows) != expect_rows:
        raise DataError(f"{path}: expected {expect_rows} rows, "
                        f"found {len(rows)}")
    return np.array(rows, dtype=float)


def read_covariates(directory, n: int) -> CovariateSet:
    """Rebuild a covariate set from its sidecar and data files."""
    meta_path = os.path.join(directory, COVARIATES_META_FILE)
    node_specs = []
    dyad_specs = []
    for lineno, line in enumerate(_read_lines(meta_path), start=1):
        tokens = line.split()
        if not tokens or tokens[0].startswith("#"):
            continue
        if tokens[0] == "node" and len(tokens) == 4:
            name, role, flag = tokens[1], tokens[2], tokens[3]
            if role not in _ROLE_TOKENS:
                raise _fail(meta_path, lineno,
                            f"role must be row or column, got {role!r}")
            if flag not in _FLAG_TOKENS:
                raise _fail(meta_path, lineno,
                            f"flag must be dependent or tied, got {flag!r}")
            node_specs.append((name, _ROLE_TOKENS[role], _FLAG_TOKENS[flag]))
        elif tokens[0] == "dyad" and len(tokens) == 4:
            name, filename, flag = tokens[1], tokens[2], tokens[3]
            if flag not in _FLAG_TOKENS:
                raise _fail(meta_path, lineno,
                            f"flag must be dependent or tied, got {flag!r}")
            dyad_specs.append((name, filename, _FLAG_TOKENS[flag]))
        else:
            raise _fail(meta_path, lineno, f"unrecognized line {line!r}")
    row = []
    col = []
    if node_specs:
        csv_path = os.path.join(directory, COVARIATES_FILE)
        lines = _read_lines(csv_path)
        if not lines:
            raise DataError(f"{csv_path}: missing header row")
        header = lines[0].split(",")
        if header != [name for name, _, _ in node_specs]:
            raise DataError(
                f"{csv_path}: header {header} does not match the sidecar's "
                f"covariate names {[name for name, _, _ in node_specs]}")
        table = _read_float_table_from_lines(lines[1:], csv_path,
                                             len(node_specs), n)
        for index, (name, role, dependent) in enumerate(node_specs):
            cov = NodeCovariate(name, table[:, index], dependent)
            (row if role == "row" else col).append(cov)
    dyad = []
    for name, filename, dependent in dyad_specs:
        values = _read_float_table(os.path.join(directory, filename),
                                   expect_rows=n)
        if values.shape != (n, n):
            raise DataError(f"{os.path.join(directory, filename)}: expected "
                            f"a {n}x{n} table, got {values.shape}")
        dyad.append(DyadCovariate(name, values, dependent))
    try:
        return CovariateSet(n=n, row=tuple(row), col=tuple(col),
                            dyad=tuple(dyad))
    except ValueError as exc:
        raise DataError(f"{meta_path}: {exc}") from exc


def _read_float_table_from_lines(lines, path, width: int,
                                 expect_rows: int) -> np.ndarray:
    rows = []
    for lineno, line in enumerate(lines, start=2):
        if not line.strip():
            continue
        cells = line.split(",")
        if len(cells) != width:
            raise _fail(path, lineno,
                        f"expected {width} columns, got {len(cells)}")
        rows.append([_parse_float(c, path, lineno) for c in cells])
    if len(rows) != expect_rows:
        raise DataError(f"{path}: expected {expect_rows} data rows, "
                        f"found {len(rows)}")
    return np.array(rows, dtype=float)


# ---------------------------------------------------------------------------
# generating truth and scenario files


def write_truth(path, state: ModelState) -> None:
    """Record the generating parameters of a simulated network as JSON."""
    payload = {
        "intercept": float(state.coeffs.intercept),
        "row_coefficients": state.coeffs.row.tolist(),
        "col_coefficients": state.coeffs.col.tolist(),
        "dyad_row_coefficients": state.coeffs.dyad_row.tolist(),
        "dyad_col_coefficients": state.coeffs.dyad_col.tolist(),
        "affinity": state.affinity.tolist(),
        "reciprocity": float(state.latent.reciprocity),
        "effect_covariance": state.effects.covariance.tolist(),
        "labels": [int(v) for v in state.community.labels],
        "n_communities": int(state.community.n_communities),
        "sender_effects": state.effects.sender.tolist(),
        "receiver_effects": state.effects.receiver.tolist(),
    }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")


def read_truth(path) -> dict:
    """Generating parameters as arrays, keyed as written by write_truth."""
    payload = _read_json(path)
    out = {}
    for key, value in payload.items():
        if key == "n_communities":
            out[key] = int(value)
        elif key == "labels":
            out[key] = np.asarray(value, dtype=np.int64)
        elif isinstance(value, list):
            out[key] = np.asarray(value, dtype=float)
        else:
            out[key] = float(value)
    return out


def _read_json(path) -> dict:
    try:
        with open(path, encoding="utf-8") as fh:
            return json.load(fh)
    except OSError as exc:
        raise DataError(f"cannot read {path}: {exc.strerror}") from exc
    except json.JSONDecodeError as exc:
        raise DataError(f"{path}:{exc.lineno}: {exc.msg}") from exc


def scenario_to_dict(spec: ScenarioSpec) -> dict:
    return {
        "name": spec.name,
        "n": spec.n,
        "community_sizes": list(spec.community_sizes),
        "intercept": float(spec.coefficients.intercept),
        "row_coefficients": spec.coefficients.row.tolist(),
        "col_coefficients": spec.coefficients.col.tolist(),
        "dyad_row_coefficients": spec.coefficients.dyad_row.tolist(),
        "dyad_col_coefficients": spec.coefficients.dyad_col.tolist(),
        "affinity": spec.affinity.tolist(),
        "reciprocity": spec.reciprocity,
        "effect_covariance": spec.effect_covariance.tolist(),
        "target_density": spec.target_density,
        "shared_covariates": spec.shared_covariates,
        "row_flags": list(spec.row_flags),
        "col_flags": list(spec.col_flags),
        "dyad_flags": list(spec.dyad_flags),
        "censor_cap": spec.censor_cap,
        "latent_dim": spec.latent_dim,
        "seed": spec.seed,
    }


def scenario_from_dict(payload: dict, origin="scenario") -> ScenarioSpec:
    known = set(scenario_to_dict(
        ScenarioSpec("x", 1, (1,),
                     CoefficientSet(0.0, np.zeros((0, 1)), np.zeros((0, 1)),
                                    np.zeros((0, 1)), np.zeros((0, 1))),
                     np.zeros((1, 1)), 0.0, np.eye(2),
                     target_density=None)))
    unknown = set(payload) - known
    if unknown:
        raise DataError(f"{origin}: unrecognized keys {sorted(unknown)}")
    missing = {"name", "n", "community_sizes", "row_coefficients",
               "col_coefficients", "affinity", "reciprocity",
               "effect_covariance"} - set(payload)
    if missing:
        raise DataError(f"{origin}: missing keys {sorted(missing)}")
    k = len(payload["community_sizes"])

    def matrix(key):
        arr = np.asarray(payload.get(key, ()), dtype=float)
        return np.zeros((0, k)) if arr.size == 0 else arr

    coeffs = CoefficientSet(
        intercept=float(payload.get("intercept", 0.0)),
        row=matrix("row_coefficients"),
        col=matrix("col_coefficients"),
        dyad_row=matrix("dyad_row_coefficients"),
        dyad_col=matrix("dyad_col_coefficients"),
    )
    try:
        return ScenarioSpec(
            name=str(payload["name"]),
            n=int(payload["n"]),
            community_sizes=tuple(int(s) for s in payload["community_sizes"]),
            coefficients=coeffs,
            affinity=np.asarray(payload["affinity"], dtype=float),
            reciprocity=float(payload["reciprocity"]),
            effect_covariance=np.asarray(payload["effect_covariance"],
                                         dtype=float),
            target_density=payload.get("target_density", 0.3),
            shared_covariates=bool(payload.get("shared_covariates", True)),
            row_flags=tuple(bool(f) for f in payload.get("row_flags", ())),
            col_flags=tuple(bool(f) for f in payload.get("col_flags", ())),
            dyad_flags=tuple(bool(f) for f in payload.get("dyad_flags", ())),
            censor_cap=payload.get("censor_cap"),
            latent_dim=payload.get("latent_dim"),
            seed=int(payload.get("seed", 0)),
        )
    except ValueError as exc:
        raise DataError(f"{origin}: {exc}") from exc


def read_scenario_file(path) -> ScenarioSpec:
    return scenario_from_dict(_read_json(path), origin=path)


# ---------------------------------------------------------------------------
# draws


def write_draws(path, chain: ChainOutput) -> None:
    """Long-format draw file: one (iteration, parameter, index, value) row
    per stored scalar, floats at shortest round-trip precision."""
    n = chain.sender_effects.shape[1]
    k = chain.affinity.shape[1]
    blocks = [("sender", chain.sender_coefficients),
              ("receiver", chain.receiver_coefficients),
              ("dyad_sender", chain.dyad_sender_coefficients),
              ("dyad_receiver", chain.dyad_receiver_coefficients)]
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("iteration,parameter,index,value\n")
        for s in range(chain.n_draws):
            it = int(chain.iteration_index[s])
            fh.write(f"{it},intercept,,{float(chain.intercept[s])!r}\n")
            fh.write(f"{it},reciprocity,,{float(chain.reciprocity[s])!r}\n")
            fh.write(f"{it},log_likelihood,,{float(chain.loglik[s])!r}\n")
            for a in range(k):
                for b in range(k):
                    fh.write(f"{it},affinity,{a}:{b},"
                             f"{float(chain.affinity[s, a, b])!r}\n")
            for name, arr in blocks:
                for i in range(n):
                    for l in range(arr.shape[2]):
                        fh.write(f"{it},{name},{i}:{l},"
                                 f"{float(arr[s, i, l])!r}\n")
            for i in range(n):
                fh.write(f"{it},sender_effect,{i},"
                         f"{float(chain.sender_effects[s, i])!r}\n")
            for i in range(n):
                fh.write(f"{it},receiver_effect,{i},"
                         f"{float(chain.receiver_effects[s, i])!r}\n")
            for a, b in ((0, 0), (0, 1), (1, 1)):
                fh.write(f"{it},effect_covariance,{a}:{b},"
                         f"{float(chain.effect_covariance[s, a, b])!r}\n")
            for i in range(n):
                fh.write(f"{it},community,{i},{int(chain.labels[s, i])}\n")
            if chain.censor_offsets is not None:
                for i in range(n):
                    fh.write(f"{it},censor_offset,{i},"
                             f"{float(chain.censor_offsets[s, i])!r}\n")
                fh.write(f"{it},censor_offset_variance,,"
                         f"{float(chain.censor_offset_var[s])!r}\n")


def read_draws(path) -> dict:
    """Parse a long-format draw file back into arrays.

    Returns a dict with "iterations" plus one array per parameter, shaped
    as the sampler stores them.
    """
    groups: dict[str, dict[tuple, list]] = {}
    order: dict[str, list] = {}
    lines = _read_lines(path)
    if not lines or lines[0] != "iteration,parameter,index,value":
        raise DataError(f"{path}:1: expected header "
                        "'iteration,parameter,index,value'")
    iterations = []
    for lineno, line in enumerate(lines[1:], start=2):
        if not line.strip():
            continue
        cells = line.split(",")
        if len(cells) != 4:
            raise _fail(path, lineno, f"expected 4 fields, got {len(cells)}")
        it_token, param, index_token, value_token = cells
        iteration = _parse_int(it_token, path, lineno)
        index = tuple(_parse_int(t, path, lineno)
                      for t in index_token.split(":")) if index_token else ()
        if param == "community":
            value = _parse_int(value_token, path, lineno)
        else:
            value = _parse_float(value_token, path, lineno)
        slot = groups.setdefault(param, {})
        if index not in slot:
            slot[index] = []
            order.setdefault(param, []).append(index)
        series = slot[index]
        series.append(value)
        if param == "intercept":
            iterations.append(iteration)
    if "intercept" not in groups:
        raise DataError(f"{path}: no intercept draws found")
    d = len(iterations)
    for param, slot in groups.items():
        for index, series in slot.items():
            if len(series) != d:
                label = ":".join(str(i) for i in index)
                raise DataError(
                    f"{path}: parameter {param!r} index {label!r} has "
                    f"{len(series)} values but the chain stores {d} draws")
    out = {"iterations": np.asarray(iterations, dtype=np.int64)}
    for param, slot in groups.items():
        indices = order[param]
        width = len(indices[0])
        if width == 0:
            out[param] = np.asarray(slot[()], dtype=float)
            continue
        shape = tuple(max(ix[axis] for ix in indices) + 1
                      for axis in range(width))
        if param == "effect_covariance":
            if sorted(indices) != [(0, 0), (0, 1), (1, 1)]:
                raise DataError(f"{path}: effect_covariance must store "
                                "exactly the upper triangle 0:0, 0:1, 1:1")
        elif len(indices) != int(np.prod(shape)):
            raise DataError(f"{path}: parameter {param!r} is missing entries "
                            f"for its {shape} index grid")
        dtype = np.int64 if param == "community" else float
        arr = np.zeros((d,) + shape, dtype=dtype)
        for index in indices:
            arr[(slice(None),) + index] = slot[index]
        out[param] = arr
    return out


def reconstruct_chain(directory) -> ChainOutput:
    """Rebuild a ChainOutput from a fit directory's draw file and manifest.

    The live model state is not serialized, so the reconstructed chain
    carries draws and run metadata only; resuming needs the checkpoint
    file instead.
    """
    draws = read_draws(os.path.join(directory, DRAWS_FILE))
    manifest = read_manifest(os.path.join(directory, MANIFEST_FILE))
    sampler_info = manifest.get("sampler", {})
    required = ("iterations", "intercept", "reciprocity", "log_likelihood",
                "affinity", "sender_effect", "receiver_effect",
                "effect_covariance", "community")
    missing = [name for name in required if name not in draws]
    if missing:
        raise DataError(f"{os.path.join(directory, DRAWS_FILE)}: missing "
                        f"parameter series {missing}")
    d = draws["iterations"].shape[0]
    n = draws["community"].shape[1]

    def block(name):
        if name in draws:
            return draws[name]
        return np.zeros((d, n, 0))

    cov_draws = draws["effect_covariance"]
    full_cov = np.empty((d, 2, 2))
    full_cov[:, 0, 0] = cov_draws[:, 0, 0]
    full_cov[:, 0, 1] = cov_draws[:, 0, 1]
    full_cov[:, 1, 0] = cov_draws[:, 0, 1]
    full_cov[:, 1, 1] = cov_draws[:, 1, 1]
    return ChainOutput(
        config_digest=manifest.get("config_digest", ""),
        seed=int(manifest.get("seed", 0)),
        iteration_index=draws["iterations"],
        intercept=draws["intercept"],
        sender_coefficients=block("sender"),
        receiver_coefficients=block("receiver"),
        dyad_sender_coefficients=block("dyad_sender"),
        dyad_receiver_coefficients=block("dyad_receiver"),
        affinity=draws["affinity"],
        reciprocity=draws["reciprocity"],
        effect_covariance=full_cov,
        sender_effects=draws["sender_effect"],
        receiver_effects=draws["receiver_effect"],
        labels=draws["community"],
        loglik=draws["log_likelihood"],
        censor_offsets=draws.get("censor_offset"),
        censor_offset_var=draws.get("censor_offset_variance"),
        membership_acceptance=float(sampler_info.get("membership_acceptance",
                                                     float("nan"))),
        reciprocity_acceptance=float(sampler_info.get("reciprocity_acceptance",
                                                      float("nan"))),
        seconds_elapsed=float(sampler_info.get("sample_seconds", 0.0)),
        iterations_run=int(sampler_info.get("iterations", 0)),
        final_state=None,
    )


# ---------------------------------------------------------------------------
# manifests and checkpoints


def file_digest(path) -> str:
    digest = hashlib.sha256()
    try:
        with open(path, "rb") as fh:
            for block in iter(lambda: fh.read(1 << 20), b""):
                digest.update(block)
    except OSError as exc:
        raise DataError(f"cannot read {path}: {exc.strerror}") from exc
    return digest.hexdigest()


def digest_files(directory, names) -> dict:
    return {name: file_digest(os.path.join(directory, name))
            for name in sorted(names)}


def verify_digests(directory, recorded: dict) -> list[str]:
    """Names of recorded files whose bytes no longer match their digest."""
    mismatched = []
    for name, expected in sorted(recorded.items()):
        path = os.path.join(directory, name)
        if not os.path.exists(path) or file_digest(path) != expected:
            mismatched.append(name)
    return mismatched


def write_manifest(path, payload: dict) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")


def read_manifest(path) -> dict:
    return _read_json(path)


def save_checkpoint(path, checkpoint: ChainCheckpoint) -> None:
    """Atomically persist a resumable snapshot."""
    scratch = f"{path}.tmp"
    with open(scratch, "wb") as fh:
        pickle.dump(checkpoint, fh, protocol=pickle.HIGHEST_PROTOCOL)
    os.replace(scratch, path)


def load_checkpoint(path) -> ChainCheckpoint:
    try:
        with open(path, "rb") as fh:
            snapshot = pickle.load(fh)
    except OSError as exc:
        raise DataError(f"cannot read {path}: {exc.strerror}") from exc
    except (pickle.UnpicklingError, EOFError) as exc:
        raise DataError(f"{path}: corrupt checkpoint ({exc})") from exc
    if not isinstance(snapshot, ChainCheckpoint):
        raise DataError(f"{path}: not a chain checkpoint")
    return snapshot


# ---------------------------------------------------------------------------
# small auxiliary inputs


def read_labels_file(path) -> np.ndarray:
    """Initial community labels, one integer per line."""
    labels = []
    for lineno, line in enumerate(_read_lines(path), start=1):
        stripped = line.strip()
        if not stripped or stripped.startswith("#"):
            continue
        labels.append(_parse_int(stripped, path, lineno))
    if not labels:
        raise DataError(f"{path}: no labels found")
    return np.asarray(labels, dtype=np.int64)


def read_dependence_flags(path) -> dict:
    """Per-covariate dependence overrides: lines of
    '<name or name:role> <dependent|tied>'."""
    flags = {}
    for lineno, line in enumerate(_read_lines(path), start=1):
        tokens = line.split()
        if not tokens or tokens[0].startswith("#"):
            continue
        if len(tokens) != 2 or tokens[1] not in _FLAG_TOKENS:
            raise _fail(path, lineno,
                        "expected '<name or name:role> <dependent|tied>', "
                        f"got {line!r}")
        flags[tokens[0]] = _FLAG_TOKENS[tokens[1]]
    return flags
