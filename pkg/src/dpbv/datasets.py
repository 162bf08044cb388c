"""Dataset loaders and generators, all rescaled to a common encoding range."""

from __future__ import annotations

import os

import numpy as np

from .core import Dataset, InputError, Schema

DEFAULT_RANGE = (0.0, 50.0)
DEFAULT_T = 25.0
DEFAULT_S = 1000


def minmax_scale(x: np.ndarray, lower: float = 0.0, upper: float = 50.0) -> tuple[np.ndarray, dict]:
    """Per-attribute min-max scaling to [lower, upper]; constant columns map to ``lower``.

    Returns the scaled array and the per-column (min, max) so distances can be
    mapped back to the original units.
    """
    x = np.asarray(x, dtype=np.float64)
    lo = x.min(axis=0)
    hi = x.max(axis=0)
    span = np.where(hi > lo, hi - lo, 1.0)
    scaled = lower + (x - lo) / span * (upper - lower)
    scaled[:, hi <= lo] = lower
    return np.clip(scaled, lower, upper), {"min": lo.tolist(), "max": hi.tolist(), "range": [lower, upper]}


def _dataset(x, labels, t, s, epsilon, seed, lower, upper) -> tuple[Dataset, dict]:
    scaled, info = minmax_scale(x, lower, upper)
    schema = Schema.uniform(scaled.shape[1], lower, upper, t, s, epsilon, seed)
    return Dataset(scaled, schema, None if labels is None else np.asarray(labels)), info


def load_digits(t: float = DEFAULT_T, s: int = DEFAULT_S, epsilon: float = 2.0, seed: int = 0,
                lower: float = 0.0, upper: float = 50.0) -> tuple[Dataset, dict]:
    """The 1797 x 64 handwritten digits (0-16 intensities), scaled per attribute."""
    from sklearn.datasets import load_digits as _load

    data = _load()
    ds, info = _dataset(data.data, data.target, t, s, epsilon, seed, lower, upper)
    info["source"] = "sklearn.datasets.load_digits"
    return ds, info


def make_shapes(kind: str, n: int = 300, noise: float = 0.05, seed: int = 0, t: float = DEFAULT_T,
                s: int = DEFAULT_S, epsilon: float = 2.0, lower: float = 0.0,
                upper: float = 50.0) -> tuple[Dataset, dict]:
    """Two-dimensional blobs, circles or moons from scikit-learn's generators, scaled."""
    from sklearn import datasets as gen

    if kind == "blobs":
        centers = np.array([[0.0, 0.0], [1.0, 1.0], [0.0, 1.0]])
        x, y = gen.make_blobs(n_samples=n, centers=centers, cluster_std=noise * 2, random_state=seed)
    elif kind == "circles":
        x, y = gen.make_circles(n_samples=n, noise=noise, factor=0.4, random_state=seed)
    elif kind == "moons":
        x, y = gen.make_moons(n_samples=n, noise=noise, random_state=seed)
    else:
        raise InputError(f"unknown shape {kind!r}; choose blobs, circles or moons")
    ds, info = _dataset(x, y, t, s, epsilon, seed, lower, upper)
    info["source"] = f"sklearn.datasets.make_{kind}"
    return ds, info


def uniform_points(n: int, d: int, lower: float, upper: float, rng: np.random.Generator, t: float,
                   s: int, epsilon: float = 2.0, seed: int = 0) -> Dataset:
    schema = Schema.uniform(d, lower, upper, t, s, epsilon, seed)
    return Dataset(rng.uniform(lower, upper, (n, d)), schema)


def load_points_csv(path, t: float = DEFAULT_T, s: int = DEFAULT_S, epsilon: float = 2.0, seed: int = 0,
                    lower: float = 0.0, upper: float = 50.0) -> tuple[Dataset, dict]:
    """Whitespace or comma separated points with the label in the last column.

    Suits the Aggregation / pathbased shape benchmarks, which are not bundled.
    """
    if not os.path.exists(path):
        raise InputError(f"{path} not found; download the benchmark file and pass its local path")
    with open(path) as fh:
        text = fh.read().replace(",", " ")
    rows = np.array([line.split() for line in text.splitlines() if line.strip()], dtype=np.float64)
    ds, info = _dataset(rows[:, :-1], rows[:, -1].astype(np.int64), t, s, epsilon, seed, lower, upper)
    info["source"] = str(path)
    return ds, info


SHAPES = ("blobs", "circles", "moons")
