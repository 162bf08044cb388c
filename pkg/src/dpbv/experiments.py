"""Experiment drivers that emit plot-ready rows of (x, y, stderr) plus extra columns."""

from __future__ import annotations

import csv
import math
from typing import Iterable, Sequence

import numpy as np

from .clustering import adp_transform, dbscan, kcluster, kmeans_labels, nmi, rsp_transform
from .core import Dataset, Schema, derive_rng
from .datasets import load_digits, make_shapes, uniform_points
from .distance import (DistanceMatrix, attribute_estimates, average_estimation_error, build_distance_matrix,
                       default_tolerance, distance_consistence)
from .encoder import Mechanism, encode_dataset
from .multiparty import decomposition_config, decomposition_estimates, encode_decomposition_pairs

EXPERIMENT_STREAM = 0x6578


def exact_distances(values: np.ndarray) -> np.ndarray:
    x = np.asarray(values, dtype=np.float64)
    sq = (x * x).sum(axis=1)
    d2 = np.maximum(sq[:, None] + sq[None, :] - 2.0 * x @ x.T, 0.0)
    np.fill_diagonal(d2, 0.0)
    return np.sqrt(d2)


def _mean_se(values: Sequence[float]) -> tuple[float, float]:
    v = np.asarray(values, dtype=np.float64)
    if len(v) < 2:
        return float(v.mean()), float("nan")
    return float(v.mean()), float(v.std(ddof=1) / math.sqrt(len(v)))


def write_csv(rows: list[dict], path) -> None:
    if not rows:
        raise ValueError("no rows to write")
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=list(rows[0]))
        writer.writeheader()
        writer.writerows(rows)


# -- Algorithm 1 efficacy -------------------------------------------------------


def fig4(s_values: Iterable[int] = (250, 500, 1000, 2000), reps: int = 5, n: int = 100, t: float = 3.0,
         lower: float = 0.0, upper: float = 25.0, seed: int = 0) -> list[dict]:
    """Average estimation error with and without distance consistence.

    Two independent sets of ``n`` uniform points are encoded with the plain
    mechanism; consistence runs on the union and the error is measured on the
    n x n cross block, averaged over ``reps`` repetitions.
    """
    rows = []
    for s in s_values:
        plain, refined = [], []
        for rep in range(reps):
            rng = derive_rng(seed, EXPERIMENT_STREAM, 4, s, rep)
            data = uniform_points(2 * n, 1, lower, upper, rng, t, s, seed=seed * 1000 + rep)
            cfg = data.schema.configs[0]
            est = build_distance_matrix(encode_dataset(data, Mechanism.BV), cfg)
            fixed = distance_consistence(est, default_tolerance(cfg, Mechanism.BV))
            truth = exact_distances(data.values)[:n, n:]
            plain.append(average_estimation_error(truth, est.values[:n, n:]))
            refined.append(average_estimation_error(truth, fixed.values[:n, n:]))
        m, se = _mean_se(refined)
        m0, se0 = _mean_se(plain)
        rows.append({"x": s, "y": m, "stderr": se, "unrefined": m0, "unrefined_stderr": se0})
    return rows


# -- vertical partitioning ------------------------------------------------------


def fig5(d_values: Iterable[int] = (2, 4, 8, 16, 32), pairs: int = 2000, s: int = 1000, epsilon: float = 2.0,
         width: float = 50.0, t: float = 25.0, seed: int = 0) -> list[dict]:
    """Distance error of the naive and decomposition vertical estimators.

    Each pair has d Alice-side attributes (exact) and d Bob-side attributes
    (estimated), uniform on [0, width].
    """
    rows = []
    for d in d_values:
        rng = derive_rng(seed, EXPERIMENT_STREAM, 5, d)
        a = rng.uniform(0.0, width, (pairs, 2 * d))
        b = rng.uniform(0.0, width, (pairs, 2 * d))
        l2 = ((a[:, :d] - b[:, :d]) ** 2).sum(axis=1)
        truth = np.sqrt(l2 + ((a[:, d:] - b[:, d:]) ** 2).sum(axis=1))

        schema = Schema.uniform(d, 0.0, width, t, s, epsilon, seed=seed + d)
        both = Dataset(np.vstack([a[:, d:], b[:, d:]]), schema)
        enc = encode_dataset(both, Mechanism.DPBV)
        w = enc.words()
        d_h = np.bitwise_count(w[:pairs] ^ w[pairs:]).sum(axis=2, dtype=np.int64)
        est = attribute_estimates(d_h, list(schema.configs), Mechanism.DPBV)
        naive = np.sqrt(l2 + (est * est).sum(axis=1))

        cfg = decomposition_config(schema.configs)
        idx = np.arange(pairs)
        payload = encode_decomposition_pairs(both.values, cfg, Mechanism.DPBV, pairs=(idx, idx + pairs),
                                             noise_key=d)
        r2 = decomposition_estimates(payload, cfg)
        decomposed = np.sqrt(l2 + np.maximum(r2, 0.0))

        e_naive = np.abs(naive - truth)
        e_dec = np.abs(decomposed - truth)
        rows.append({"x": d, "y": float(e_dec.mean()), "stderr": float(e_dec.std(ddof=1) / math.sqrt(pairs)),
                     "naive": float(e_naive.mean()),
                     "naive_stderr": float(e_naive.std(ddof=1) / math.sqrt(pairs))})
    return rows


# -- clustering ----------------------------------------------------------------


SHAPE_PARAMS = {"blobs": (3, 6.0, 5), "circles": (2, 6.0, 5), "moons": (2, 5.0, 5)}


def fig6(kinds: Iterable[str] = ("blobs", "circles", "moons"), n: int = 300, epsilon: float = 2.0,
         s: int = 1000, seed: int = 0, n_init: int = 10) -> tuple[list[dict], list[dict]]:
    """Exact vs anonymized clustering on 2-D shapes.

    Returns (summary rows, point rows). Summary rows carry the NMI between the
    exact-distance and anonymized labelings for each algorithm.
    """
    summary, points = [], []
    for kind in kinds:
        k, eps, min_pts = SHAPE_PARAMS[kind]
        data, _ = make_shapes(kind, n=n, seed=seed, s=s, epsilon=epsilon)
        exact = exact_distances(data.values)
        est = build_distance_matrix(encode_dataset(data, Mechanism.DPBV), list(data.schema.configs))
        results = {}
        for algo in ("kcluster", "dbscan"):
            if algo == "kcluster":
                a = kcluster(exact, k, rng=np.random.default_rng(seed), n_init=n_init)
                b = kcluster(est, k, rng=np.random.default_rng(seed), n_init=n_init)
            else:
                a = dbscan(exact, eps, min_pts)
                b = dbscan(est, eps, min_pts)
            results[algo] = (a.labels, b.labels)
            summary.append({"x": f"{kind}/{algo}", "y": nmi(a.labels, b.labels), "stderr": float("nan"),
                            "nmi_exact_vs_truth": nmi(data.labels, a.labels),
                            "nmi_anonymized_vs_truth": nmi(data.labels, b.labels)})
        for i, (x, y) in enumerate(data.values):
            points.append({"dataset": kind, "x": x, "y": y, "truth": int(data.labels[i]),
                           "kcluster_exact": int(results["kcluster"][0][i]),
                           "kcluster_dpbv": int(results["kcluster"][1][i]),
                           "dbscan_exact": int(results["dbscan"][0][i]),
                           "dbscan_dpbv": int(results["dbscan"][1][i])})
    return summary, points


def digits_matrix(epsilon: float, s: int = 1000, t: float = 25.0, seed: int = 7) -> tuple[DistanceMatrix, np.ndarray]:
    data, _ = load_digits(t=t, s=s, epsilon=epsilon, seed=seed)
    enc = encode_dataset(data, Mechanism.DPBV)
    return build_distance_matrix(enc, list(data.schema.configs)), data.labels


def epsilon_sweep(epsilons: Iterable[float] = (0.5, 1.0, 2.0, 4.0), s: int = 1000, seed: int = 7,
                  cluster_seed: int = 0, n_init: int = 10) -> list[dict]:
    """DP-kCluster NMI on digits across epsilon, with the exact-distance reference."""
    data, _ = load_digits(s=s, seed=seed)
    ref = kcluster(exact_distances(data.values), 10, rng=np.random.default_rng(cluster_seed), n_init=n_init)
    ref_nmi = nmi(data.labels, ref.labels)
    rows = []
    for eps in epsilons:
        matrix, labels = digits_matrix(eps, s=s, seed=seed)
        got = kcluster(matrix, 10, rng=np.random.default_rng(cluster_seed), n_init=n_init)
        rows.append({"x": eps, "y": nmi(labels, got.labels), "stderr": float("nan"), "exact_nmi": ref_nmi})
    return rows


def table3(s: int = 1000, seed: int = 7, cluster_seed: int = 0, n_init: int = 10,
           sigma_r: float = 1.0) -> list[dict]:
    """NMI on digits for the plain and privacy-preserving pipelines."""
    data, _ = load_digits(s=s, seed=seed)
    from sklearn.datasets import load_digits as _raw

    raw = _raw().data
    labels = data.labels
    rng = derive_rng(seed, EXPERIMENT_STREAM, 3)
    rows = [{"method": "k-means", "privacy": "none", "nmi": nmi(labels, kmeans_labels(raw, 10, cluster_seed))}]
    exact = kcluster(exact_distances(data.values), 10, rng=np.random.default_rng(cluster_seed), n_init=n_init)
    rows.append({"method": "kCluster", "privacy": "none", "nmi": nmi(labels, exact.labels)})
    for eps in (1.0, 2.0):
        matrix, _ = digits_matrix(eps, s=s, seed=seed)
        got = kcluster(matrix, 10, rng=np.random.default_rng(cluster_seed), n_init=n_init)
        rows.append({"method": "LDP+kCluster", "privacy": f"epsilon={eps:g}", "nmi": nmi(labels, got.labels)})
    for sigma in (1.0, 2.0):
        noisy = adp_transform(raw, sigma, rng)
        rows.append({"method": "ADP+k-means", "privacy": f"sigma={sigma:g}",
                     "nmi": nmi(labels, kmeans_labels(noisy, 10, cluster_seed))})
    for frac in (0.5, 0.75):
        q = int(round(frac * raw.shape[1]))
        proj = rsp_transform(raw, q, rng, sigma_r)
        rows.append({"method": "RSP+k-means", "privacy": f"{int(frac * 100)}%",
                     "nmi": nmi(labels, kmeans_labels(proj, 10, cluster_seed))})
    return rows


REPRODUCIBLE = ("fig4", "fig5", "fig6", "table3", "epsilon_sweep")
