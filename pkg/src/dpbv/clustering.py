"""Clustering from estimated distances: kCluster, DBSCAN, NMI, and the ADP/RSP baselines."""

from __future__ import annotations

import math
from collections import deque
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .core import ConfigError, Dataset, EncodingConfig, InputError
from .distance import DistanceMatrix, expected_hamming, pairwise_hamming, zero_distance_hamming
from .encoder import EncodedDataset, Mechanism

NOISE = -1


@dataclass
class ClusterAssignment:
    labels: np.ndarray
    k: int
    iterations_used: int = 0
    converged: bool = True
    objective_history: list[float] = field(default_factory=list)

    def __post_init__(self):
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if self.labels.size and (self.labels.max() >= max(self.k, 1) or self.labels.min() < NOISE):
            raise InputError("cluster label out of range")


def _matrix(source) -> np.ndarray:
    if isinstance(source, DistanceMatrix):
        return source.pair_values
    arr = np.asarray(source, dtype=np.float64)
    if arr.ndim != 2 or arr.shape[0] != arr.shape[1]:
        raise InputError("expected a square distance matrix")
    return arr


def point_to_cluster_distance(p_index: int, cluster_members: Sequence[int], distances) -> float:
    """Mean estimated distance from point ``p_index`` to the members of one cluster."""
    members = np.asarray(cluster_members, dtype=np.int64)
    if members.size == 0:
        raise InputError("cluster is empty")
    D = _matrix(distances)
    return float(D[p_index, members].mean())


def cluster_distances(D: np.ndarray, labels: np.ndarray, k: int) -> tuple[np.ndarray, np.ndarray]:
    """(n, k) mean distance from every point to every cluster, and cluster sizes.

    Columns of empty clusters are +inf.
    """
    n = D.shape[0]
    onehot = np.zeros((n, k))
    onehot[np.arange(n), labels] = 1.0
    sizes = onehot.sum(axis=0)
    with np.errstate(invalid="ignore", divide="ignore"):
        avg = (D @ onehot) / sizes
    avg[:, sizes == 0] = np.inf
    return avg, sizes


def kcluster_objective(D, labels: np.ndarray, k: int) -> float:
    """Sum over points of the mean distance to their own cluster."""
    D = _matrix(D)
    avg, _ = cluster_distances(D, labels, k)
    return float(avg[np.arange(len(labels)), labels].sum())


def kcluster(distances, k: int, max_iterations: int = 100, rng: np.random.Generator | None = None,
             initial: Sequence[int] | None = None, n_init: int = 1) -> ClusterAssignment:
    """k-means-style clustering that compares points to whole clusters.

    Seeds are k distinct records drawn uniformly; each point then joins the
    cluster with the smallest mean distance to the previous iteration's
    members, until assignments stop changing, a previous assignment recurs,
    or ``max_iterations`` passes have run. Ties go to the lowest cluster index.
    With ``n_init > 1`` the whole procedure is repeated from fresh seeds and
    the run with the smallest final objective is kept.
    """
    if n_init > 1:
        if initial is not None:
            raise ConfigError("initial seeds and n_init > 1 are mutually exclusive")
        rng = np.random.default_rng() if rng is None else rng
        runs = [kcluster(distances, k, max_iterations, rng) for _ in range(n_init)]
        return min(runs, key=lambda run: run.objective_history[-1])
    D = _matrix(distances)
    n = D.shape[0]
    if k < 1:
        raise ConfigError("k must be at least 1")
    if k > n:
        raise ConfigError(f"k={k} exceeds the number of records n={n}")
    if initial is None:
        rng = np.random.default_rng() if rng is None else rng
        seeds = rng.choice(n, size=k, replace=False)
    else:
        seeds = np.asarray(initial, dtype=np.int64)
        if len(seeds) != k or len(set(seeds.tolist())) != k:
            raise ConfigError("initial must list k distinct record indices")
    labels = np.argmin(D[:, seeds], axis=1)
    labels[seeds] = np.arange(k)
    history = [kcluster_objective(D, labels, k)]
    seen = {labels.tobytes()}
    converged = False
    iterations = 0
    while iterations < max_iterations:
        iterations += 1
        avg, sizes = cluster_distances(D, labels, k)
        new = np.argmin(avg, axis=1)
        new = _fill_empty(new, D, k)
        if np.array_equal(new, labels):
            converged = True
            break
        labels = new
        history.append(kcluster_objective(D, labels, k))
        key = labels.tobytes()
        if key in seen:
            break
        seen.add(key)
    return ClusterAssignment(labels, k, iterations, converged, history)


def _fill_empty(labels: np.ndarray, D: np.ndarray, k: int) -> np.ndarray:
    """Give each empty cluster the point farthest from its own cluster."""
    labels = labels.copy()
    for c in range(k):
        if np.any(labels == c):
            continue
        avg, sizes = cluster_distances(D, labels, k)
        own = avg[np.arange(len(labels)), labels].copy()
        own[sizes[labels] <= 1] = -np.inf  # never empty another cluster
        labels[int(np.argmax(own))] = c
    return labels


# -- DBSCAN ---------------------------------------------------------------


def hamming_threshold(eps_distance: float, config: EncodingConfig, mechanism: Mechanism | str = Mechanism.DPBV,
                      d: int = 1) -> float:
    """Hamming distance expected at Euclidean distance ``eps_distance``.

    For d > 1 the summed per-attribute Hamming distance tracks the L1 distance,
    so the other d - 1 attributes contribute their zero-distance expectation.
    """
    if not 0 <= eps_distance <= 2 * config.t:
        raise ConfigError(f"eps {eps_distance} is outside the local view [0, {2 * config.t}]")
    base = expected_hamming(eps_distance, config, mechanism)
    if Mechanism(mechanism) is Mechanism.DPBV:
        base += (d - 1) * zero_distance_hamming(config)
    return float(base)


def dbscan_neighbors(neighbors: np.ndarray, min_points: int) -> np.ndarray:
    """DBSCAN over a boolean neighborhood matrix (self-neighborhood included)."""
    n = neighbors.shape[0]
    if min_points < 1:
        raise ConfigError("min_points must be at least 1")
    nb = neighbors.copy()
    np.fill_diagonal(nb, True)
    core = nb.sum(axis=1) >= min_points
    labels = np.full(n, NOISE, dtype=np.int64)
    cluster = 0
    for i in range(n):
        if labels[i] != NOISE or not core[i]:
            continue
        labels[i] = cluster
        queue = deque([i])
        while queue:
            p = queue.popleft()
            if not core[p]:
                continue
            for q in np.flatnonzero(nb[p]):
                if labels[q] == NOISE:
                    labels[q] = cluster
                    if core[q]:
                        queue.append(q)
        cluster += 1
    return labels


def dbscan(source, eps_distance: float, min_points: int, mode: str = "matrix",
           configs: EncodingConfig | Sequence[EncodingConfig] | None = None) -> ClusterAssignment:
    """Density clustering over estimated distances.

    ``mode="matrix"``: ``source`` is a distance matrix and neighbors are pairs
    with distance <= ``eps_distance``. ``mode="threshold"``: ``source`` is an
    encoded dataset and neighbors are pairs whose summed Hamming distance is at
    most :func:`hamming_threshold`. Noise points get label -1.
    """
    if eps_distance < 0:
        raise ConfigError("eps must be non-negative")
    if mode == "matrix":
        D = source.values if isinstance(source, DistanceMatrix) else _matrix(source)
        neighbors = D <= eps_distance
    elif mode == "threshold":
        if not isinstance(source, EncodedDataset):
            raise InputError("threshold mode needs the encoded dataset")
        if configs is None:
            raise ConfigError("threshold mode needs the encoding config")
        cfg = configs if isinstance(configs, EncodingConfig) else configs[0]
        limit = hamming_threshold(eps_distance, cfg, source.mechanism, source.d)
        neighbors = pairwise_hamming(source).sum(axis=2) <= limit
    else:
        raise ConfigError(f"unknown DBSCAN mode {mode!r}")
    labels = dbscan_neighbors(neighbors, min_points)
    k = int(labels.max()) + 1 if labels.size else 0
    return ClusterAssignment(labels, k, 1, True)


# -- evaluation -------------------------------------------------------------


def _entropy(counts: np.ndarray) -> float:
    p = counts[counts > 0] / counts.sum()
    return float(-(p * np.log(p)).sum())


def nmi(labels_a, labels_b) -> float:
    """Mutual information normalized by the geometric mean of the two entropies."""
    a = np.asarray(labels_a)
    b = np.asarray(labels_b)
    if a.shape != b.shape or a.ndim != 1:
        raise InputError("label arrays must be one-dimensional and equally long")
    if a.size == 0:
        raise InputError("empty labelings")
    _, ia = np.unique(a, return_inverse=True)
    _, ib = np.unique(b, return_inverse=True)
    table = np.zeros((ia.max() + 1, ib.max() + 1))
    np.add.at(table, (ia, ib), 1.0)
    h_a = _entropy(table.sum(axis=1))
    h_b = _entropy(table.sum(axis=0))
    if h_a == 0.0 and h_b == 0.0:
        return 1.0
    if h_a == 0.0 or h_b == 0.0:
        return 0.0
    n = a.size
    nz = table > 0
    pij = table[nz] / n
    pi = (table.sum(axis=1)[:, None] / n * np.ones_like(table))[nz]
    pj = (table.sum(axis=0)[None, :] / n * np.ones_like(table))[nz]
    mi = float((pij * np.log(pij / (pi * pj))).sum())
    return min(1.0, max(0.0, mi / math.sqrt(h_a * h_b)))


# -- baselines --------------------------------------------------------------


def _values(data) -> np.ndarray:
    return data.values if isinstance(data, Dataset) else np.asarray(data, dtype=np.float64)


def adp_transform(data, sigma: float, rng: np.random.Generator) -> np.ndarray:
    """Additive perturbation: i.i.d. zero-mean Gaussian noise with standard deviation ``sigma``."""
    if not sigma > 0:
        raise ConfigError("sigma must be positive")
    x = _values(data)
    return x + rng.normal(0.0, sigma, size=x.shape)


def rsp_transform(data, q: int, rng: np.random.Generator, sigma_r: float = 1.0) -> np.ndarray:
    """Random subspace projection d -> q with a Gaussian matrix, scaled by 1/(sqrt(q) sigma_r)."""
    x = _values(data)
    d = x.shape[1]
    if not 1 <= q <= d:
        raise ConfigError(f"q must lie in [1, {d}]")
    if not sigma_r > 0:
        raise ConfigError("sigma_r must be positive")
    R = rng.normal(0.0, sigma_r, size=(d, q))
    return x @ R / (math.sqrt(q) * sigma_r)


def kmeans_labels(x: np.ndarray, k: int, seed: int = 0) -> np.ndarray:
    """Plain k-means on real-valued (non-anonymized) data, for baseline rows."""
    from sklearn.cluster import KMeans

    return KMeans(n_clusters=k, n_init=10, random_state=seed).fit_predict(np.asarray(x, dtype=np.float64))
