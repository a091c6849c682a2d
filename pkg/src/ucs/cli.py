"""Command-line entry point wiring the pipeline stages together.

Every stage reads and writes plain files (matrix containers, label files,
CSV), so any stage can be replaced by an external tool; this is also how
real embedding dumps enter the pipeline. Each artifact gets a sibling
``<artifact>.manifest.txt`` recording the stage, the effective config, seeds
and input hashes; the timestamp is the only manifest field allowed to differ
between reruns, and artifacts themselves are byte-identical when inputs and
config are unchanged.

Exit codes: 0 success, 2 configuration or input-format error, 3 missing
input file, 4 numeric failure.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import os
import sys
from datetime import datetime, timezone

import numpy as np

from .clustering import CLUSTERING_METHODS, cluster_pool
from .coverage import (
    SgtConfig,
    corpus_prior,
    coverage_phi,
    gt_unseen,
    sgt_unseen,
    subset_spectrum,
)
from .errors import (
    ConfigError,
    DegenerateInput,
    MissingInput,
    NonFiniteValue,
    SingularKernel,
    UcsError,
)
from .latent_dictionary import (
    CodeBook,
    fit_dictionary,
    fit_joint_dictionary,
    ridge_encode,
)
from .matrix_store import (
    read_labels,
    read_matrix,
    read_token_bundle,
    sha256_file,
    write_labels,
    write_manifest,
    write_matrix,
)
from .preprocess import POOLING_MODES, pool_tokens, preprocess_pool, write_sidecars
from .selection import (
    RARITY_VARIANTS,
    SelectionConfig,
    SelectionResult,
    dpp_kernel,
    greedy_dpp_ucs,
    rarity_controls,
    redundancy_utility,
    sample_candidate_subsets,
    subset_utility_ucs,
    votek_ucs_select,
)
from .synth_oracle import (
    Population,
    cluster_stats,
    exposure_metrics,
    mc_unseen_oracle,
    sample_pool,
)

# Flat config-file schema; names follow the hyperparameter tables.
CONFIG_TYPES: dict[str, type] = {
    "budget": int,
    "dict_n_components": int,
    "dict_alpha": float,
    "dict_pca_dim": int,
    "dbscan_k": int,
    "dbscan_q": float,
    "dbscan_min_samples": int,
    "sgt_lambda": float,
    "sgt_t": float,
    "sgt_bin_size": int,
    "sgt_offset": float,
    "votek_k": int,
    "dpp_scale_factor": float,
    "candidate_num": int,
    "seed": int,
    "n_runs": int,
    "clustering": str,
}

CONFIG_DEFAULTS: dict[str, object] = {
    "budget": 10,
    "dict_n_components": 64,
    "dict_alpha": 10.0,
    "dict_pca_dim": 128,
    "dbscan_k": 20,
    "dbscan_q": 0.01,
    "dbscan_min_samples": 1,
    "sgt_lambda": 0.1,
    "sgt_t": 5.0,
    "sgt_bin_size": 20,
    "sgt_offset": 1.0,
    "votek_k": 3,
    "dpp_scale_factor": 0.1,
    "candidate_num": 50,
    "seed": 42,
    "n_runs": 3,
    "clustering": "dict_dbscan",
}

PIPELINE_STAGES = (
    "preprocess",
    "dict-fit",
    "dict-encode",
    "cluster",
    "prior",
    "select",
    "analyze",
)

BASE_SELECTORS = ("dpp", "votek", "subset_utility")


def load_config(path: str) -> dict[str, object]:
    """Parse a flat key=value config file; '#' starts a comment line."""
    if not os.path.exists(path):
        raise MissingInput(f"config file not found: {path}")
    values: dict[str, object] = {}
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            if "=" not in line:
                raise ConfigError(f"{path}:{lineno}: expected key=value, got {line!r}")
            key, _, text = line.partition("=")
            key, text = key.strip(), text.strip()
            if key not in CONFIG_TYPES:
                raise ConfigError(f"{path}:{lineno}: unknown config key {key!r}")
            try:
                values[key] = CONFIG_TYPES[key](text)
            except ValueError as exc:
                raise ConfigError(
                    f"{path}:{lineno}: bad value for {key}: {text!r}"
                ) from exc
    return values


def resolve_config(args: argparse.Namespace) -> dict[str, object]:
    """Defaults, overridden by the config file, overridden by CLI flags."""
    cfg = dict(CONFIG_DEFAULTS)
    if getattr(args, "config", None):
        cfg.update(load_config(args.config))
    for key in CONFIG_TYPES:
        value = getattr(args, key, None)
        if value is not None:
            cfg[key] = value
    if cfg["clustering"] not in CLUSTERING_METHODS:
        raise ConfigError(
            f"clustering must be one of {CLUSTERING_METHODS}, got {cfg['clustering']!r}"
        )
    return cfg


def resolve_threads(args: argparse.Namespace) -> int:
    value = getattr(args, "threads", None)
    if value is None:
        env = os.environ.get("UCS_THREADS")
        if env:
            try:
                value = int(env)
            except ValueError as exc:
                raise ConfigError(f"UCS_THREADS must be an integer, got {env!r}") from exc
    if value is None:
        value = os.cpu_count() or 1
    if value < 1:
        raise ConfigError(f"threads must be >= 1, got {value}")
    return value


def _require(path: str, what: str) -> str:
    if not os.path.exists(path):
        raise MissingInput(f"{what} not found: {path}")
    return path


def _stage_manifest(
    artifact: str,
    stage: str,
    cfg_used: dict[str, object],
    inputs: dict[str, str],
    extra: dict[str, str] | None = None,
) -> None:
    entries: dict[str, str] = {"stage": stage}
    for key in sorted(cfg_used):
        entries[f"config.{key}"] = repr(cfg_used[key]) if isinstance(
            cfg_used[key], float) else str(cfg_used[key])
    for name in sorted(inputs):
        entries[f"input.{name}.sha256"] = sha256_file(inputs[name])
    if extra:
        entries.update(extra)
    entries["timestamp"] = datetime.now(timezone.utc).strftime("%Y-%m-%dT%H:%M:%SZ")
    write_manifest(artifact + ".manifest.txt", entries)


def _sgt_config(cfg: dict[str, object], args: argparse.Namespace) -> SgtConfig:
    return SgtConfig(
        t=float(cfg["sgt_t"]),
        bin_size=int(cfg["sgt_bin_size"]),
        offset_alpha=float(cfg["sgt_offset"]),
        smoothing=getattr(args, "smoothing", None) or "off",
        noise_label=getattr(args, "noise_label", None),
        k0_override=getattr(args, "k0", None),
    )


def _fmt(value: float) -> str:
    """Full-precision, locale-independent float text for CSV cells."""
    return repr(float(value))


def _write_selection_csv(path: str, result: SelectionResult) -> None:
    """One row per selected item: step, index, base_gain, coverage_term,
    total, where total = base_gain + lambda * coverage_term. Subset-utility
    results repeat the winning subset's scores on every member row."""
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["step", "index", "base_gain", "coverage_term", "total"])
        if result.base == "subset_utility":
            rec = result.records[0]
            for step, index in enumerate(result.indices):
                writer.writerow([step, index, _fmt(rec.base_gain),
                                 _fmt(rec.coverage_term), _fmt(rec.total)])
        else:
            for step, rec in enumerate(result.records):
                writer.writerow([step, rec.index, _fmt(rec.base_gain),
                                 _fmt(rec.coverage_term), _fmt(rec.total)])


def _read_selection_csv(path: str) -> list[int]:
    with open(path, "r", encoding="utf-8", newline="") as fh:
        return [int(row["index"]) for row in csv.DictReader(fh)]


def _read_subset_file(path: str) -> list[int]:
    with open(path, "r", encoding="utf-8") as fh:
        return [int(line) for line in fh.read().split()]


def _write_table(path: str | None, rows: list[tuple[str, str]]) -> None:
    width = max(len(name) for name, _ in rows)
    lines = [f"{name:<{width}}  {value}" for name, value in rows]
    text = "\n".join(lines) + "\n"
    if path:
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(text)
    sys.stdout.write(text)


# ---------------------------------------------------------------------------
# Stage implementations (shared by subcommands and run_pipeline)


def stage_ingest(input_path: str, out: str, dtype: str, cfg_used: dict) -> None:
    matrix = read_matrix(_require(input_path, "input matrix"))
    write_matrix(matrix, out, dtype=dtype)
    _stage_manifest(out, "ingest", cfg_used, {"matrix": input_path},
                    {"dtype": dtype})


def stage_preprocess(
    input_path: str | None,
    bundle: str | None,
    out: str,
    pca_dim: int,
    standardize: bool,
    l2norm: bool,
    pooling: str,
    cfg_used: dict,
) -> None:
    if bundle is not None:
        _require(bundle, "token bundle directory")
        rows = [
            pool_tokens(hidden, mask, pooling)
            for _, hidden, mask in read_token_bundle(bundle)
        ]
        pool = np.stack(rows)
        inputs: dict[str, str] = {}
    else:
        pool = read_matrix(_require(input_path, "pool matrix"))
        inputs = {"pool": input_path}
    reduced, scaler, basis = preprocess_pool(
        pool, d_prime=pca_dim, standardize=standardize, l2norm=l2norm
    )
    write_matrix(reduced, out)
    stem = out[: -len(".ucsm")] if out.endswith(".ucsm") else out
    write_sidecars(stem, scaler, basis)
    _stage_manifest(out, "preprocess", cfg_used, inputs, {
        "rows": str(reduced.shape[0]),
        "cols": str(reduced.shape[1]),
        "standardize": str(standardize),
        "l2norm": str(l2norm),
        "pooling": pooling,
    })


def stage_dict_fit(input_path: str, out: str, cfg: dict, max_iter: int,
                   cfg_used: dict) -> CodeBook:
    pool = read_matrix(_require(input_path, "pool matrix"))
    book = fit_dictionary(
        pool,
        n_atoms=int(cfg["dict_n_components"]),
        ridge_alpha=float(cfg["dict_alpha"]),
        max_iter=max_iter,
        seed=int(cfg["seed"]),
    )
    write_matrix(book.dictionary, out)
    _stage_manifest(out, "dict-fit", cfg_used, {"pool": input_path}, {
        "objective": _fmt(book.objective),
        "n_iter": str(book.n_iter),
        "max_iter": str(max_iter),
    })
    return book


def stage_dict_encode(dict_path: str, input_path: str, out: str, cfg: dict,
                      normalize: bool, cfg_used: dict) -> np.ndarray:
    dictionary = read_matrix(_require(dict_path, "dictionary matrix"))
    pool = read_matrix(_require(input_path, "pool matrix"))
    book = CodeBook(dictionary=dictionary, ridge_alpha=float(cfg["dict_alpha"]))
    codes = ridge_encode(book, pool)
    if normalize:
        from .latent_dictionary import normalize_codes

        codes = normalize_codes(codes)
    write_matrix(codes, out)
    _stage_manifest(out, "dict-encode", cfg_used,
                    {"dict": dict_path, "pool": input_path},
                    {"normalize": str(normalize)})
    return codes


def stage_cluster(input_path: str, out: str, cfg: dict, threads: int,
                  eps_override: float | None, cfg_used: dict) -> np.ndarray:
    x = read_matrix(_require(input_path, "input matrix"))
    assignment = cluster_pool(
        x,
        method=str(cfg["clustering"]),
        dbscan_k=int(cfg["dbscan_k"]),
        dbscan_q=float(cfg["dbscan_q"]),
        min_samples=int(cfg["dbscan_min_samples"]),
        eps_override=eps_override,
        threads=threads,
    )
    write_labels(assignment.labels, out)
    extra = {"n_clusters": str(assignment.n_clusters)}
    if assignment.eps is not None:
        extra["eps"] = _fmt(assignment.eps)
    _stage_manifest(out, "cluster", cfg_used, {"input": input_path}, extra)
    return assignment.labels


def stage_prior(labels_path: str, out: str, smoothing: str, eps: float,
                noise_label: int | None, cfg_used: dict) -> None:
    labels = read_labels(_require(labels_path, "labels file"))
    prior = corpus_prior(labels, smoothing=smoothing, eps=eps,
                         noise_label=noise_label)
    clusters = sorted(prior.sizes)
    with open(out, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["cluster", "size", "weight"])
        for c in clusters:
            writer.writerow([c, prior.sizes[c], _fmt(prior.weights[c])])
    _stage_manifest(out, "prior", cfg_used, {"labels": labels_path},
                    {"smoothing": smoothing, "n_clusters": str(len(clusters))})


def run_selection(
    x: np.ndarray,
    labels: np.ndarray,
    base: str,
    cfg: dict,
    seed: int,
    sgt: SgtConfig,
    rarity: str | None = None,
    freeze_votes: bool = False,
    query_row: int | None = None,
) -> SelectionResult:
    sel_cfg = SelectionConfig(
        budget=int(cfg["budget"]),
        lam=float(cfg["sgt_lambda"]),
        base=base,
        dpp_scale_factor=float(cfg["dpp_scale_factor"]),
        votek_k=int(cfg["votek_k"]),
        candidate_num=int(cfg["candidate_num"]),
        sgt=sgt,
        seed=seed,
    )
    if rarity is not None:
        return rarity_controls(x, labels, sel_cfg, rarity)
    if base == "dpp":
        kernel = dpp_kernel(x, scale=sel_cfg.dpp_scale_factor)
        return greedy_dpp_ucs(kernel, labels, sel_cfg)
    if base == "votek":
        prior = corpus_prior(labels, noise_label=sgt.noise_label)
        return votek_ucs_select(x, labels, prior, sel_cfg,
                                freeze_votes=freeze_votes)
    if base == "subset_utility":
        query = x[query_row] if query_row is not None else x.mean(axis=0)
        candidates = sample_candidate_subsets(
            x, query, sel_cfg.budget, sel_cfg.candidate_num, seed
        )
        utilities = redundancy_utility(x, candidates)
        return subset_utility_ucs(candidates, utilities, labels, sel_cfg)
    raise ConfigError(f"base must be one of {BASE_SELECTORS}, got {base!r}")


def stage_select(
    embeddings_path: str,
    labels_path: str,
    out: str,
    base: str,
    cfg: dict,
    sgt: SgtConfig,
    seed: int,
    rarity: str | None,
    freeze_votes: bool,
    query_row: int | None,
    cfg_used: dict,
) -> SelectionResult:
    x = read_matrix(_require(embeddings_path, "embeddings matrix"))
    labels = read_labels(_require(labels_path, "labels file"))
    if labels.shape[0] != x.shape[0]:
        raise ConfigError(
            f"labels cover {labels.shape[0]} rows but pool has {x.shape[0]}"
        )
    result = run_selection(x, labels, base, cfg, seed, sgt, rarity=rarity,
                           freeze_votes=freeze_votes, query_row=query_row)
    _write_selection_csv(out, result)
    _stage_manifest(out, "select", cfg_used,
                    {"embeddings": embeddings_path, "labels": labels_path}, {
                        "base": base if rarity is None else f"rarity_{rarity}",
                        "seed": str(seed),
                        "phi": _fmt(result.phi),
                        "k_seen": str(result.k_seen),
                    })
    return result


def stage_analyze(labels_path: str, selection_paths: list[str],
                  out: str | None, cfg_used: dict) -> list[tuple[str, str]]:
    labels = read_labels(_require(labels_path, "labels file"))
    selections = [
        _read_selection_csv(_require(p, "selection csv")) for p in selection_paths
    ]
    stats = cluster_stats(labels)
    report = exposure_metrics(labels, selections)
    rows: list[tuple[str, str]] = []
    for k in range(1, 9):
        rows.append((f"size_{k}_mass", str(stats.size_mass[k])))
    rows.append(("top_sizes", " ".join(str(s) for s in stats.top_sizes)))
    rows.append(("n_selections", str(report.n_selections)))
    rows.append(("uniq_clusters",
                 f"{report.uniq_clusters:.4f} +/- {report.uniq_std:.4f}"))
    rows.append(("mean_cluster_size",
                 f"{report.mean_cluster_size:.4f} +/- {report.size_std:.4f}"))
    rows.append(("mean_inv_size",
                 f"{report.mean_inv_size:.4f} +/- {report.inv_std:.4f}"))
    _write_table(out, rows)
    if out:
        inputs = {"labels": labels_path}
        inputs.update({f"selection{i}": p for i, p in enumerate(selection_paths)})
        _stage_manifest(out, "analyze", cfg_used, inputs)
    return rows


def run_pipeline(
    cfg: dict,
    input_pool: str,
    workdir: str,
    stages: list[str],
    base: str,
    threads: int,
    rarity: str | None = None,
) -> None:
    """Run a contiguous stage range, reading earlier artifacts from workdir.

    Artifacts use fixed names so later invocations can resume: when the
    range starts after `preprocess` the earlier files must already exist.
    seed..seed+n_runs-1 drive repeated selection runs; the analyze stage
    aggregates exposure metrics over those runs as mean +/- std.
    """
    os.makedirs(workdir, exist_ok=True)
    paths = {
        "reduced": os.path.join(workdir, "pool_reduced.ucsm"),
        "dict": os.path.join(workdir, "dict.ucsm"),
        "codes": os.path.join(workdir, "codes.ucsm"),
        "labels": os.path.join(workdir, "labels.txt"),
        "prior": os.path.join(workdir, "prior.csv"),
        "report": os.path.join(workdir, "report.txt"),
    }
    sgt = SgtConfig(t=float(cfg["sgt_t"]), bin_size=int(cfg["sgt_bin_size"]),
                    offset_alpha=float(cfg["sgt_offset"]))
    n_runs = int(cfg["n_runs"])
    select_outs = [
        os.path.join(workdir, f"select_run{r:02d}.csv") for r in range(n_runs)
    ]
    if "preprocess" in stages:
        stage_preprocess(input_pool, None, paths["reduced"],
                         int(cfg["dict_pca_dim"]), True, False, "mean", cfg)
    if "dict-fit" in stages:
        stage_dict_fit(paths["reduced"], paths["dict"], cfg, 50, cfg)
    if "dict-encode" in stages:
        stage_dict_encode(paths["dict"], paths["reduced"], paths["codes"],
                          cfg, False, cfg)
    if "cluster" in stages:
        source = paths["reduced"] if cfg["clustering"] == "dbscan" else paths["codes"]
        stage_cluster(source, paths["labels"], cfg, threads, None, cfg)
    if "prior" in stages:
        stage_prior(paths["labels"], paths["prior"], "power_law", 1e-6, None, cfg)
    if "select" in stages:
        for r in range(n_runs):
            stage_select(paths["reduced"], paths["labels"], select_outs[r],
                         base, cfg, sgt, int(cfg["seed"]) + r, rarity, False,
                         None, cfg)
    if "analyze" in stages:
        for p in select_outs:
            _require(p, "selection csv")
        stage_analyze(paths["labels"], select_outs, paths["report"], cfg)


# ---------------------------------------------------------------------------
# Argument parsing


def _add_config_flags(parser: argparse.ArgumentParser, keys: list[str]) -> None:
    for key in keys:
        flag = "--" + key.replace("_", "-")
        parser.add_argument(flag, type=CONFIG_TYPES[key], default=None,
                            help=f"override config key {key}")
    parser.add_argument("--config", default=None,
                        help="flat key=value config file")
    parser.add_argument("--threads", type=int, default=None,
                        help="stage-internal worker threads "
                             "(default: UCS_THREADS or all cores)")
    parser.epilog = "config keys consumed: " + (", ".join(keys) if keys else "none")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="ucs",
        description="Coverage-regularized demonstration selection pipeline.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("ingest", help="re-encode a CSV or binary matrix as f64")
    p.add_argument("--input", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--dtype", choices=("f64", "f32"), default="f64")
    _add_config_flags(p, [])

    p = sub.add_parser("preprocess",
                       help="pool tokens, standardize, and reduce with PCA")
    src = p.add_mutually_exclusive_group(required=True)
    src.add_argument("--input", help="pooled N x d matrix")
    src.add_argument("--bundle", help="token bundle directory")
    p.add_argument("--out", required=True)
    p.add_argument("--pooling", choices=POOLING_MODES, default="mean")
    p.add_argument("--no-standardize", action="store_true")
    p.add_argument("--l2norm", action="store_true")
    _add_config_flags(p, ["dict_pca_dim"])

    p = sub.add_parser("dict-fit", help="fit the latent dictionary")
    p.add_argument("--input", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--max-iter", type=int, default=50)
    _add_config_flags(p, ["dict_n_components", "dict_alpha", "seed"])

    p = sub.add_parser("dict-encode", help="ridge-encode a pool against a dictionary")
    p.add_argument("--dict", dest="dict_path", required=True)
    p.add_argument("--input", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--normalize", action="store_true",
                   help="row-normalize the codes")
    _add_config_flags(p, ["dict_alpha"])

    p = sub.add_parser("joint-fit",
                       help="fit one dictionary across aligned sources")
    p.add_argument("--inputs", nargs="+", required=True)
    p.add_argument("--out-stem", required=True)
    p.add_argument("--max-iter", type=int, default=50)
    p.add_argument("--latent-dim", type=int, default=None)
    p.add_argument("--fix-maps", action="store_true")
    _add_config_flags(p, ["dict_n_components", "dict_alpha", "seed"])

    p = sub.add_parser("cluster", help="assign latent-cluster labels")
    p.add_argument("--input", required=True,
                   help="codes (dict_* methods) or embeddings (dbscan)")
    p.add_argument("--out", required=True)
    p.add_argument("--eps", type=float, default=None,
                   help="override the kNN-quantile eps")
    _add_config_flags(p, ["clustering", "dbscan_k", "dbscan_q",
                          "dbscan_min_samples"])

    p = sub.add_parser("spectrum", help="emit the cluster-size spectrum")
    p.add_argument("--labels", required=True)
    p.add_argument("--subset", default=None,
                   help="file of row indices, whitespace separated")
    p.add_argument("--noise-label", type=int, default=None)
    p.add_argument("--out", default=None)
    _add_config_flags(p, [])

    p = sub.add_parser("estimate", help="estimate unseen clusters and coverage")
    p.add_argument("--labels", required=True)
    p.add_argument("--subset", default=None)
    p.add_argument("--noise-label", type=int, default=None)
    p.add_argument("--smoothing", choices=("off", "power_law"), default="off")
    p.add_argument("--k0", type=int, default=None,
                   help="override the weight truncation depth")
    p.add_argument("--out", default=None)
    _add_config_flags(p, ["sgt_t", "sgt_bin_size", "sgt_offset"])

    p = sub.add_parser("prior", help="emit per-cluster rarity weights as CSV")
    p.add_argument("--labels", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--smoothing", choices=("off", "power_law"),
                   default="power_law")
    p.add_argument("--eps", type=float, default=1e-6)
    p.add_argument("--noise-label", type=int, default=None)
    _add_config_flags(p, [])

    p = sub.add_parser("select", help="run a coverage-regularized selector")
    p.add_argument("--embeddings", required=True)
    p.add_argument("--labels", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--base", choices=BASE_SELECTORS, default="votek")
    p.add_argument("--rarity", choices=RARITY_VARIANTS, default=None,
                   help="run a rarity-only control instead of the UCS weights")
    p.add_argument("--freeze-votes", action="store_true")
    p.add_argument("--query-row", type=int, default=None,
                   help="subset_utility query row (default: pool mean)")
    _add_config_flags(p, ["budget", "sgt_lambda", "sgt_t", "sgt_bin_size",
                          "sgt_offset", "votek_k", "dpp_scale_factor",
                          "candidate_num", "seed"])

    p = sub.add_parser("synth", help="generate synthetic pools or run the "
                                     "Monte Carlo unseen-type oracle")
    p.add_argument("--mode", choices=("pool", "oracle"), default="pool")
    p.add_argument("--k-types", type=int, required=True)
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--zipf-exponent", type=float, default=None,
                   help="zipf population (default: uniform)")
    p.add_argument("--dim", type=int, default=32)
    p.add_argument("--spread", type=float, default=0.05)
    p.add_argument("--out-stem", default=None, help="pool mode output stem")
    p.add_argument("--t", type=float, default=None,
                   help="oracle second-draw multiple (default: sgt_t)")
    p.add_argument("--trials", type=int, default=100)
    p.add_argument("--estimator", choices=("sgt", "gt"), default="sgt")
    p.add_argument("--out", default=None, help="oracle mode report file")
    _add_config_flags(p, ["seed", "sgt_t", "sgt_bin_size", "sgt_offset"])

    p = sub.add_parser("analyze", help="cluster-size stats and exposure metrics")
    p.add_argument("--labels", required=True)
    p.add_argument("--selections", nargs="+", required=True,
                   help="selection CSVs from the select stage")
    p.add_argument("--out", default=None)
    _add_config_flags(p, [])

    p = sub.add_parser("pipeline", help="run a contiguous stage range")
    p.add_argument("--input", required=True, help="raw pooled matrix")
    p.add_argument("--workdir", required=True)
    p.add_argument("--from-stage", choices=PIPELINE_STAGES,
                   default=PIPELINE_STAGES[0])
    p.add_argument("--to-stage", choices=PIPELINE_STAGES,
                   default=PIPELINE_STAGES[-1])
    p.add_argument("--base", choices=BASE_SELECTORS, default="votek")
    p.add_argument("--rarity", choices=RARITY_VARIANTS, default=None)
    _add_config_flags(p, list(CONFIG_TYPES))

    return parser


# ---------------------------------------------------------------------------
# Subcommand dispatch


def _cmd_ingest(args, cfg, threads) -> int:
    stage_ingest(args.input, args.out, args.dtype, {})
    return 0


def _cmd_preprocess(args, cfg, threads) -> int:
    stage_preprocess(args.input, args.bundle, args.out,
                     int(cfg["dict_pca_dim"]), not args.no_standardize,
                     args.l2norm, args.pooling,
                     {"dict_pca_dim": cfg["dict_pca_dim"]})
    return 0


def _cmd_dict_fit(args, cfg, threads) -> int:
    used = {k: cfg[k] for k in ("dict_n_components", "dict_alpha", "seed")}
    book = stage_dict_fit(args.input, args.out, cfg, args.max_iter, used)
    print(f"objective {book.objective!r} after {book.n_iter} iterations")
    return 0


def _cmd_dict_encode(args, cfg, threads) -> int:
    stage_dict_encode(args.dict_path, args.input, args.out, cfg,
                      args.normalize, {"dict_alpha": cfg["dict_alpha"]})
    return 0


def _cmd_joint_fit(args, cfg, threads) -> int:
    sources = [read_matrix(_require(p, "source matrix")) for p in args.inputs]
    book = fit_joint_dictionary(
        sources,
        n_atoms=int(cfg["dict_n_components"]),
        ridge_alpha=float(cfg["dict_alpha"]),
        max_iter=args.max_iter,
        seed=int(cfg["seed"]),
        d_c=args.latent_dim,
        fix_maps=args.fix_maps,
    )
    stem = args.out_stem
    write_matrix(book.dictionary, stem + ".dict.ucsm")
    write_matrix(book.codes, stem + ".codes.ucsm")
    for m, mapping in enumerate(book.maps):
        write_matrix(mapping, f"{stem}.map{m}.ucsm")
    used = {k: cfg[k] for k in ("dict_n_components", "dict_alpha", "seed")}
    _stage_manifest(stem + ".dict.ucsm", "joint-fit", used,
                    {f"source{i}": p for i, p in enumerate(args.inputs)}, {
                        "objective": _fmt(book.objective),
                        "n_iter": str(book.n_iter),
                        "n_sources": str(len(sources)),
                    })
    print(f"joint objective {book.objective!r} after {book.n_iter} iterations")
    return 0


def _cmd_cluster(args, cfg, threads) -> int:
    used = {k: cfg[k] for k in ("clustering", "dbscan_k", "dbscan_q",
                                "dbscan_min_samples")}
    labels = stage_cluster(args.input, args.out, cfg, threads, args.eps, used)
    print(f"{np.unique(labels).size} clusters over {labels.size} points")
    return 0


def _cmd_spectrum(args, cfg, threads) -> int:
    labels = read_labels(_require(args.labels, "labels file"))
    subset = (_read_subset_file(_require(args.subset, "subset file"))
              if args.subset else range(labels.size))
    spec = subset_spectrum(labels, subset, noise_label=args.noise_label)
    rows = [(f"size_{s}", str(int(spec.spectrum[s])))
            for s in sorted(spec.spectrum)]
    rows.insert(0, ("subset_size", str(spec.size)))
    _write_table(args.out, rows)
    return 0


def _cmd_estimate(args, cfg, threads) -> int:
    labels = read_labels(_require(args.labels, "labels file"))
    subset = (_read_subset_file(_require(args.subset, "subset file"))
              if args.subset else range(labels.size))
    sgt = _sgt_config(cfg, args)
    phi, k_seen, u_hat = coverage_phi(labels, subset, sgt)
    spec = subset_spectrum(labels, subset, noise_label=args.noise_label)
    raw = gt_unseen(spec, sgt.t, sgt.bin_size)
    rows = [
        ("k_seen", str(k_seen)),
        ("u_hat", _fmt(u_hat)),
        ("phi", _fmt(phi)),
        ("gt_raw", _fmt(raw)),
        ("t", _fmt(sgt.t)),
    ]
    _write_table(args.out, rows)
    return 0


def _cmd_prior(args, cfg, threads) -> int:
    stage_prior(args.labels, args.out, args.smoothing, args.eps,
                args.noise_label, {})
    return 0


def _cmd_select(args, cfg, threads) -> int:
    used = {k: cfg[k] for k in ("budget", "sgt_lambda", "sgt_t", "sgt_bin_size",
                                "sgt_offset", "votek_k", "dpp_scale_factor",
                                "candidate_num", "seed")}
    sgt = SgtConfig(t=float(cfg["sgt_t"]), bin_size=int(cfg["sgt_bin_size"]),
                    offset_alpha=float(cfg["sgt_offset"]))
    result = stage_select(args.embeddings, args.labels, args.out, args.base,
                          cfg, sgt, int(cfg["seed"]), args.rarity,
                          args.freeze_votes, args.query_row, used)
    print(f"selected {result.indices} phi={result.phi!r} k_seen={result.k_seen}")
    return 0


def _cmd_synth(args, cfg, threads) -> int:
    seed = int(cfg["seed"])
    if args.zipf_exponent is None:
        pop = Population.uniform(args.k_types)
    else:
        pop = Population.zipf(args.k_types, args.zipf_exponent)
    if args.mode == "pool":
        if not args.out_stem:
            raise ConfigError("pool mode requires --out-stem")
        x, labels = sample_pool(pop, args.n, dim=args.dim,
                                spread=args.spread, seed=seed)
        pool_path = args.out_stem + ".pool.ucsm"
        write_matrix(x, pool_path)
        write_labels(labels, args.out_stem + ".labels.txt")
        _stage_manifest(pool_path, "synth", {"seed": seed}, {}, {
            "k_types": str(args.k_types),
            "n": str(args.n),
            "dim": str(args.dim),
            "spread": _fmt(args.spread),
            "population": pop.kind,
        })
        return 0
    t = args.t if args.t is not None else float(cfg["sgt_t"])
    sgt = SgtConfig(t=t, bin_size=int(cfg["sgt_bin_size"]),
                    offset_alpha=float(cfg["sgt_offset"]))
    report = mc_unseen_oracle(pop, args.n, t, args.trials, seed, sgt=sgt,
                              estimator=args.estimator)
    rows = [
        ("trials", str(report.trials)),
        ("estimator", args.estimator),
        ("t", _fmt(t)),
        ("mean_new", _fmt(report.mean_new)),
        ("std_new", _fmt(report.std_new)),
        ("mean_estimate", _fmt(report.mean_estimate)),
        ("std_estimate", _fmt(report.std_estimate)),
        ("mean_abs_estimator_error", _fmt(report.mean_abs_estimator_error)),
    ]
    _write_table(args.out, rows)
    return 0


def _cmd_analyze(args, cfg, threads) -> int:
    stage_analyze(args.labels, args.selections, args.out, {})
    return 0


def _cmd_pipeline(args, cfg, threads) -> int:
    lo = PIPELINE_STAGES.index(args.from_stage)
    hi = PIPELINE_STAGES.index(args.to_stage)
    if lo > hi:
        raise ConfigError(
            f"--from-stage {args.from_stage} comes after --to-stage {args.to_stage}"
        )
    stages = list(PIPELINE_STAGES[lo:hi + 1])
    if lo == 0:
        _require(args.input, "input pool")
    run_pipeline(cfg, args.input, args.workdir, stages, args.base, threads,
                 rarity=args.rarity)
    print(f"pipeline stages {stages} done in {args.workdir}")
    return 0


_COMMANDS = {
    "ingest": _cmd_ingest,
    "preprocess": _cmd_preprocess,
    "dict-fit": _cmd_dict_fit,
    "dict-encode": _cmd_dict_encode,
    "joint-fit": _cmd_joint_fit,
    "cluster": _cmd_cluster,
    "spectrum": _cmd_spectrum,
    "estimate": _cmd_estimate,
    "prior": _cmd_prior,
    "select": _cmd_select,
    "synth": _cmd_synth,
    "analyze": _cmd_analyze,
    "pipeline": _cmd_pipeline,
}


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        cfg = resolve_config(args)
        threads = resolve_threads(args)
        return _COMMANDS[args.command](args, cfg, threads)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except MissingInput as exc:
        print(f"missing input: {exc}", file=sys.stderr)
        return 3
    except (NonFiniteValue, DegenerateInput, SingularKernel,
            np.linalg.LinAlgError, FloatingPointError) as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return 4
    except UcsError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
