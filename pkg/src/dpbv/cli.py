"""Command-line interface: ``dpbv <command> [options]``.

Every command that writes files also writes ``<output>.manifest.json`` with the
exact argument vector, so ``dpbv rerun <manifest>`` repeats the run.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import platform
import sys
import time
from importlib import metadata
from pathlib import Path

import numpy as np

from . import datasets, experiments
from .clustering import dbscan, kcluster, nmi
from .core import ConfigError, Dataset, EncodingConfig, InputError, Schema
from .distance import (DistanceMatrix, build_distance_matrix, default_tolerance, distance_consistence)
from .encoder import EncodedDataset, Mechanism, encode_dataset
from .multiparty import SimulationParams, simulate, split_horizontal, split_vertical
from .privacy import PrivacyParams, error_bound, expected_popcount, format_delta

log = logging.getLogger("dpbv")

OUT_ENV = "DPBV_OUT"
EXIT_CONFIG = 3
EXIT_INPUT = 4
EXIT_MISSING = 5


class MissingInput(FileNotFoundError):
    pass


def _out_dir(args) -> Path:
    path = Path(args.out_dir or os.environ.get(OUT_ENV, "."))
    path.mkdir(parents=True, exist_ok=True)
    return path


def _existing(path) -> Path:
    p = Path(path)
    if not p.exists():
        raise MissingInput(f"{p} does not exist")
    return p


def _version() -> str:
    try:
        return metadata.version("artifact")
    except metadata.PackageNotFoundError:
        return "unknown"


def write_manifest(output: Path, args, argv, started: float, fingerprint: str | None = None,
                   inputs=(), outputs=(), extra: dict | None = None) -> Path:
    params = {k: v for k, v in vars(args).items() if k not in ("func",)}
    doc = {
        "command": args.command,
        "argv": list(argv),
        "parameters": params,
        "fingerprint": fingerprint,
        "seeds": {k: v for k, v in params.items() if "seed" in k},
        "inputs": [str(p) for p in inputs],
        "outputs": [str(p) for p in outputs],
        "duration_seconds": round(time.perf_counter() - started, 3),
        "versions": {"artifact": _version(), "numpy": np.__version__, "python": platform.python_version()},
    }
    if extra:
        doc.update(extra)
    path = output.with_name(output.name + ".manifest.json")
    path.write_text(json.dumps(doc, indent=2, default=str))
    return path


# -- dataset helpers ----------------------------------------------------------------


def _load_data(args) -> tuple[Dataset, dict]:
    """Dataset from --input (CSV + --schema) or a built-in --dataset."""
    if getattr(args, "input", None):
        schema = Schema.load(_existing(args.schema))
        return Dataset.from_csv(_existing(args.input), schema, policy=args.range_policy), {"source": args.input}
    name = args.dataset
    if name == "digits":
        return datasets.load_digits(t=args.t, s=args.s, epsilon=args.epsilon, seed=args.seed)
    if name in datasets.SHAPES:
        return datasets.make_shapes(name, n=args.n, seed=args.seed, t=args.t, s=args.s, epsilon=args.epsilon)
    raise InputError(f"unknown dataset {name!r}")


def _add_data_flags(p, schema_required=False):
    p.add_argument("--input", help="CSV of records (optional leading id column, trailing label column)")
    p.add_argument("--schema", required=schema_required, help="schema JSON written by `dpbv config`")
    p.add_argument("--dataset", choices=["digits", *datasets.SHAPES], default="digits")
    p.add_argument("--n", type=int, default=300, help="records for synthetic shapes")
    p.add_argument("--t", type=float, default=datasets.DEFAULT_T)
    p.add_argument("--s", type=int, default=datasets.DEFAULT_S)
    p.add_argument("--epsilon", type=float, default=2.0)
    p.add_argument("--seed", type=int, default=0, help="shared hash-family seed")
    p.add_argument("--range-policy", choices=["reject", "clamp"], default="reject")


# -- commands -----------------------------------------------------------------------


def cmd_config(args, argv, started):
    if args.delta is not None:
        params = PrivacyParams.for_target(args.epsilon, args.delta)
        s = params.s
    else:
        s = args.s
    names = args.names.split(",") if args.names else None
    schema = Schema.uniform(args.d, args.lower, args.upper, args.t, s, args.epsilon, args.seed, names)
    out = _out_dir(args) / args.output
    schema.save(out)
    write_manifest(out, args, argv, started, schema.fingerprint(), outputs=[out])
    print(f"wrote {out} (d={schema.d}, s={s}, fingerprint {schema.fingerprint()})")


def cmd_encode(args, argv, started):
    data, info = _load_data(args)
    enc = encode_dataset(data, args.mechanism, args.noise_seed)
    out = _out_dir(args) / args.output
    enc.save(out)
    schema_out = out.with_suffix(".schema.json")
    data.schema.save(schema_out)
    extra = {"normalization": info}
    if args.keep_plain:
        plain = out.with_suffix(".csv")
        data.to_csv(plain, include_ids=True)
        extra["plain_copy"] = str(plain)
    write_manifest(out, args, argv, started, data.schema.fingerprint(), outputs=[out, schema_out], extra=extra)
    print(f"encoded {enc.n} records x {enc.d} attributes ({enc.mechanism.value}, s={enc.s}) -> {out}")


def cmd_distances(args, argv, started):
    enc = EncodedDataset.load(_existing(args.encoded))
    schema = Schema.load(_existing(args.schema))
    if schema.fingerprint() != enc.fingerprint:
        raise ConfigError("schema fingerprint does not match the encoded payload")
    matrix = build_distance_matrix(enc, list(schema.configs))
    out = _out_dir(args) / args.output
    matrix.save(out)
    write_manifest(out, args, argv, started, enc.fingerprint, inputs=[args.encoded, args.schema], outputs=[out])
    print(f"distance matrix {matrix.n} x {matrix.n} -> {out}")


def cmd_consistence(args, argv, started):
    matrix = DistanceMatrix.load(_existing(args.matrix))
    tol = args.tolerance
    if tol is None:
        schema = Schema.load(_existing(args.schema)) if args.schema else None
        if schema is None:
            raise ConfigError("pass --tolerance or --schema so a default tolerance can be derived")
        tol = default_tolerance(schema.configs[0], args.mechanism)
    refined = distance_consistence(matrix, tol, args.local_radius)
    out = _out_dir(args) / args.output
    refined.save(out)
    rev = out.with_suffix(".revision.csv")
    refined.revision_to_csv(rev)
    write_manifest(out, args, argv, started, inputs=[args.matrix], outputs=[out, rev],
                   extra={"tolerance": tol, "local_radius": refined.local_radius})
    print(f"refined matrix -> {out} (local radius {refined.local_radius})")


def cmd_privacy(args, argv, started):
    if args.delta is not None:
        params = PrivacyParams.for_target(args.epsilon, args.delta, args.beta)
    else:
        params = PrivacyParams.for_length(args.epsilon, args.s, args.beta)
    cfg = EncodingConfig(0.0, args.width, args.t, params.s, params.epsilon)
    bound = error_bound(cfg, args.beta)
    doc = {"epsilon": params.epsilon, "s": params.s, "delta": format_delta(params.log_delta),
           "log_delta": params.log_delta, "mu": cfg.mu, "beta": args.beta, "error_bound": bound,
           "expected_popcount": expected_popcount(cfg)}
    if args.json:
        print(json.dumps(doc))
    else:
        print(f"epsilon={params.epsilon:g} s={params.s} delta={doc['delta']}")
        print(f"error bound (mu={cfg.mu:g}, beta={args.beta:g}): {bound:.4f}")
        print(f"expected popcount E[w]={doc['expected_popcount']:.4f}")


def _cluster_matrix(args) -> tuple[np.ndarray | DistanceMatrix, np.ndarray | None, str | None]:
    if args.matrix:
        labels = None
        if args.labels:
            labels = np.loadtxt(_existing(args.labels), dtype=np.int64, delimiter=",", ndmin=1)
        return DistanceMatrix.load(_existing(args.matrix)), labels, None
    data, _ = _load_data(args)
    if args.mode == "exact":
        return experiments.exact_distances(data.values), data.labels, data.schema.fingerprint()
    enc = encode_dataset(data, args.mode, args.noise_seed)
    return build_distance_matrix(enc, list(data.schema.configs)), data.labels, data.schema.fingerprint()


def cmd_cluster(args, argv, started):
    matrix, truth, fp = _cluster_matrix(args)
    if args.algo == "kcluster":
        result = kcluster(matrix, args.k, args.max_iter, np.random.default_rng(args.cluster_seed), n_init=args.n_init)
    else:
        result = dbscan(matrix, args.eps, args.min_pts)
    out = _out_dir(args) / args.output
    np.savetxt(out, result.labels, fmt="%d", delimiter=",")
    metrics = {"iterations": result.iterations_used, "converged": result.converged, "k": result.k,
               "nmi": None if truth is None else nmi(truth, result.labels)}
    metrics_path = out.with_suffix(".metrics.json")
    metrics_path.write_text(json.dumps(metrics, indent=2))
    write_manifest(out, args, argv, started, fp, outputs=[out, metrics_path])
    print(json.dumps(metrics))


def cmd_simulate(args, argv, started):
    data, info = _load_data(args)
    rng = np.random.default_rng(args.split_seed)
    if args.partition == "horizontal":
        parties = split_horizontal(data, args.parties, rng)
    else:
        bounds = np.linspace(0, data.d, args.parties + 1).round().astype(int)[1:-1].tolist()
        parties = split_vertical(data, bounds)
    params = SimulationParams(mechanism=args.mechanism, method=args.method, consistence=args.consistence,
                              k=args.k, eps=args.eps, min_points=args.min_pts, max_iterations=args.max_iter,
                              seed=args.cluster_seed)
    result = simulate(parties, args.task, params)
    out = _out_dir(args) / args.output
    metrics = result.metrics()
    metrics.update(partition=args.partition, method=args.method)
    out.write_text(json.dumps(metrics, indent=2))
    write_manifest(out, args, argv, started, data.schema.fingerprint(), outputs=[out],
                   extra={"party_manifests": result.manifests, "normalization": info})
    print(json.dumps(metrics))


def cmd_reproduce(args, argv, started):
    out_dir = _out_dir(args)
    outputs = []
    name = args.target
    if name == "fig4":
        rows = experiments.fig4(reps=args.reps, seed=args.seed)
    elif name == "fig5":
        rows = experiments.fig5(pairs=args.pairs, seed=args.seed)
    elif name == "fig6":
        rows, points = experiments.fig6(seed=args.seed)
        pts = out_dir / "fig6_points.csv"
        experiments.write_csv(points, pts)
        outputs.append(pts)
    elif name == "table3":
        rows = experiments.table3()
    elif name == "epsilon_sweep":
        rows = experiments.epsilon_sweep()
    else:
        raise InputError(f"unknown target {name!r}")
    out = out_dir / f"{name}.csv"
    experiments.write_csv(rows, out)
    outputs.insert(0, out)
    write_manifest(out, args, argv, started, outputs=outputs)
    for row in rows:
        print(", ".join(f"{k}={v:.4g}" if isinstance(v, float) else f"{k}={v}" for k, v in row.items()))


def cmd_rerun(args, argv, started):
    doc = json.loads(_existing(args.manifest).read_text())
    replay = doc["argv"]
    log.info("re-running %s", doc["command"])
    return main(replay)


# -- parser -------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="dpbv", description="Locally private distance estimation and clustering")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    def command(name, func, help_text):
        p = sub.add_parser(name, help=help_text)
        p.set_defaults(func=func)
        p.add_argument("--out-dir", help=f"output directory (default ${OUT_ENV} or the working directory)")
        return p

    p = command("config", cmd_config, "write a schema JSON")
    p.add_argument("--d", type=int, required=True)
    p.add_argument("--lower", type=float, default=0.0)
    p.add_argument("--upper", type=float, default=50.0)
    p.add_argument("--t", type=float, default=25.0)
    p.add_argument("--s", type=int, default=1000)
    p.add_argument("--delta", type=float, help="derive s from a target delta instead of --s")
    p.add_argument("--epsilon", type=float, default=2.0)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--names", help="comma-separated attribute names")
    p.add_argument("--output", default="schema.json")

    p = command("encode", cmd_encode, "encode a dataset")
    _add_data_flags(p)
    p.add_argument("--mechanism", choices=["bv", "dpbv"], default="dpbv")
    p.add_argument("--noise-seed", type=int, help="defaults to the shared seed")
    p.add_argument("--keep-plain", action="store_true", help="also write the scaled plaintext CSV")
    p.add_argument("--output", default="encoded.bin")

    p = command("distances", cmd_distances, "estimate the pairwise distance matrix")
    p.add_argument("--encoded", required=True)
    p.add_argument("--schema", required=True)
    p.add_argument("--output", default="distances.bin")

    p = command("consistence", cmd_consistence, "refine long-range estimates")
    p.add_argument("--matrix", required=True)
    p.add_argument("--schema")
    p.add_argument("--mechanism", choices=["bv", "dpbv"], default="dpbv")
    p.add_argument("--tolerance", type=float)
    p.add_argument("--local-radius", type=float)
    p.add_argument("--output", default="refined.bin")

    p = command("privacy", cmd_privacy, "privacy and accuracy figures for (epsilon, s)")
    p.add_argument("--epsilon", type=float, required=True)
    group = p.add_mutually_exclusive_group(required=True)
    group.add_argument("--s", type=int)
    group.add_argument("--delta", type=float)
    p.add_argument("--width", type=float, default=50.0, help="attribute range length U - L")
    p.add_argument("--t", type=float, default=25.0)
    p.add_argument("--beta", type=float, default=0.05)
    p.add_argument("--json", action="store_true")

    p = command("cluster", cmd_cluster, "cluster from a matrix or a dataset")
    _add_data_flags(p)
    p.add_argument("--matrix", help="precomputed distance matrix (.bin)")
    p.add_argument("--labels", help="ground-truth labels CSV for --matrix")
    p.add_argument("--algo", choices=["kcluster", "dbscan"], default="kcluster")
    p.add_argument("--mode", choices=["exact", "bv", "dpbv"], default="dpbv")
    p.add_argument("--noise-seed", type=int)
    p.add_argument("--k", type=int, default=10)
    p.add_argument("--n-init", type=int, default=1)
    p.add_argument("--eps", type=float, default=5.0)
    p.add_argument("--min-pts", type=int, default=5)
    p.add_argument("--max-iter", type=int, default=100)
    p.add_argument("--cluster-seed", type=int, default=0)
    p.add_argument("--output", default="labels.csv")

    p = command("simulate", cmd_simulate, "custodians -> aggregator simulation")
    _add_data_flags(p)
    p.add_argument("--parties", type=int, default=2)
    p.add_argument("--partition", choices=["horizontal", "vertical"], default="horizontal")
    p.add_argument("--method", choices=["naive", "decomposition"], default="naive")
    p.add_argument("--mechanism", choices=["bv", "dpbv"], default="dpbv")
    p.add_argument("--task", choices=["distances", "kcluster", "dbscan"], default="kcluster")
    p.add_argument("--consistence", action="store_true")
    p.add_argument("--k", type=int, default=10)
    p.add_argument("--eps", type=float, default=5.0)
    p.add_argument("--min-pts", type=int, default=5)
    p.add_argument("--max-iter", type=int, default=100)
    p.add_argument("--cluster-seed", type=int, default=0)
    p.add_argument("--split-seed", type=int, default=0)
    p.add_argument("--output", default="simulation.json")

    p = command("reproduce", cmd_reproduce, "emit CSV data for a figure or table")
    p.add_argument("target", choices=experiments.REPRODUCIBLE)
    p.add_argument("--reps", type=int, default=5)
    p.add_argument("--pairs", type=int, default=20000)
    p.add_argument("--seed", type=int, default=0)

    p = command("rerun", cmd_rerun, "repeat a run from its manifest")
    p.add_argument("manifest")
    return parser


def main(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    started = time.perf_counter()
    try:
        result = args.func(args, argv, started)
    except MissingInput as exc:
        print(f"error [missing]: {exc}", file=sys.stderr)
        return EXIT_MISSING
    except ConfigError as exc:
        print(f"error [config]: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except InputError as exc:
        print(f"error [input]: {exc}", file=sys.stderr)
        return EXIT_INPUT
    return result or 0


if __name__ == "__main__":
    sys.exit(main())
