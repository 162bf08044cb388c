"""Hamming distances, Euclidean estimation in the anonymized space, and distance consistence."""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .core import BitVector, ConfigError, EncodingConfig, InputError
from .encoder import EncodedDataset, EncodedRecord, Mechanism
from .privacy import error_bound


def hamming(a: BitVector, b: BitVector) -> int:
    if a.s != b.s:
        raise InputError(f"length mismatch: {a.s} vs {b.s}")
    return int(np.bitwise_count(np.bitwise_xor(a.bits, b.bits)).sum())


def _contrast(epsilon: float) -> float:
    """(e^eps - 1) / (e^eps + 1), computed without overflow."""
    e = math.exp(-epsilon)
    return (1.0 - e) / (1.0 + e)


def zero_distance_hamming(config: EncodingConfig) -> float:
    """Expected Hamming distance between two DPBV encodings of the same value: 2s e^eps/(e^eps+1)^2."""
    p = config.keep_probability
    return 2.0 * config.s * p * (1.0 - p)


def expected_hamming(d_e, config: EncodingConfig, mechanism: Mechanism | str = Mechanism.DPBV):
    """Expected Hamming distance for true distance ``d_e`` <= 2t (linear in ``d_e``)."""
    d_e = np.asarray(d_e, dtype=np.float64)
    frac = 2.0 * d_e / config.mu
    if Mechanism(mechanism) is Mechanism.BV:
        out = config.s * frac
    else:
        p = config.keep_probability
        q = 1.0 - p
        differ_if_split = p * p + q * q  # (e^{2eps}+1)/(e^eps+1)^2
        differ_if_same = 2.0 * p * q  # 2e^eps/(e^eps+1)^2
        out = config.s * (frac * differ_if_split + (1.0 - frac) * differ_if_same)
    return out if out.ndim else float(out)


def _dpbv_coefficients(config: EncodingConfig) -> tuple[float, float]:
    """(slope, offset) with raw estimate = slope * d_H - offset."""
    if not config.epsilon > 0:
        raise ConfigError("epsilon must be positive for the randomized estimator")
    c = _contrast(config.epsilon)
    slope = config.mu / (2.0 * config.s * c * c)
    return slope, slope * zero_distance_hamming(config)


def bv_estimate(d_h, config: EncodingConfig):
    """mu * d_H / (2s); valid for true distances up to 2t."""
    out = config.mu * np.asarray(d_h, dtype=np.float64) / (2.0 * config.s)
    return out if out.ndim else float(out)


def dpbv_estimate(d_h, config: EncodingConfig, raw: bool = False):
    """Debiased Euclidean estimate from the Hamming distance of two DPBV vectors.

    The raw value ``mu/(2s) ((e^eps+1)/(e^eps-1))^2 d_H - mu e^eps/(e^eps-1)^2`` is
    unbiased but may be negative; by default it is clamped to [0, 2t].
    """
    slope, offset = _dpbv_coefficients(config)
    est = slope * np.asarray(d_h, dtype=np.float64) - offset
    if not raw:
        est = np.clip(est, 0.0, 2.0 * config.t)
    return est if est.ndim else float(est)


def estimate(d_h, config: EncodingConfig, mechanism: Mechanism | str, raw: bool = False):
    if Mechanism(mechanism) is Mechanism.BV:
        return bv_estimate(d_h, config)
    return dpbv_estimate(d_h, config, raw=raw)


@dataclass(eq=False)
class DistanceMatrix:
    """Pairwise estimated distances plus the round in which each entry was last revised.

    ``raw`` holds unclamped estimates when they exist (single-attribute DPBV);
    ``local_radius`` is set by :func:`distance_consistence`.
    """

    values: np.ndarray
    revision: np.ndarray
    raw: np.ndarray | None = None
    local_radius: float | None = None

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.values.ndim != 2 or self.values.shape[0] != self.values.shape[1]:
            raise InputError("distance matrix must be square")
        self.revision = np.asarray(self.revision, dtype=np.int64)
        if self.revision.shape != self.values.shape:
            raise InputError("revision flags must match the matrix shape")

    @classmethod
    def from_values(cls, values, raw=None) -> "DistanceMatrix":
        values = np.asarray(values, dtype=np.float64)
        return cls(values, np.zeros(values.shape, dtype=np.int64), raw)

    @property
    def n(self) -> int:
        return self.values.shape[0]

    @property
    def pair_values(self) -> np.ndarray:
        """Values to average over for point-to-cluster distances (raw where available)."""
        return self.values if self.raw is None else self.raw

    def to_csv(self, path) -> None:
        np.savetxt(path, self.values, delimiter=",", fmt="%.17g")

    def revision_to_csv(self, path) -> None:
        np.savetxt(path, self.revision, delimiter=",", fmt="%d")

    @classmethod
    def from_csv(cls, path) -> "DistanceMatrix":
        return cls.from_values(np.atleast_2d(np.loadtxt(path, delimiter=",", dtype=np.float64)))

    def to_bytes(self) -> bytes:
        return struct.pack("<Q", self.n) + self.values.astype("<f8").tobytes()

    @classmethod
    def from_bytes(cls, data: bytes) -> "DistanceMatrix":
        (n,) = struct.unpack("<Q", data[:8])
        if len(data) != 8 + 8 * n * n:
            raise InputError("binary distance matrix has the wrong size")
        return cls.from_values(np.frombuffer(data, dtype="<f8", offset=8).reshape(n, n).copy())

    def save(self, path) -> None:
        with open(path, "wb") as fh:
            fh.write(self.to_bytes())

    @classmethod
    def load(cls, path) -> "DistanceMatrix":
        with open(path, "rb") as fh:
            return cls.from_bytes(fh.read())


def _block_hamming(wa: np.ndarray, wb: np.ndarray) -> np.ndarray:
    """(na, d, W) x (nb, d, W) uint64 words -> (na, nb, d) Hamming distances."""
    x = np.bitwise_xor(wa[:, None], wb[None, :])
    return np.bitwise_count(x).sum(axis=-1, dtype=np.uint32)


def pairwise_hamming(a: EncodedDataset, b: EncodedDataset | None = None) -> np.ndarray:
    """Per-attribute Hamming distances, shape (n_a, n_b, d)."""
    b = a if b is None else b
    if a.s != b.s or a.d != b.d:
        raise InputError("encoded datasets differ in s or d")
    wa, wb = a.words(), b.words()
    out = np.empty((a.n, b.n, a.d), dtype=np.uint32)
    step = max(1, 4_000_000 // max(1, b.n * wa.shape[1] * wa.shape[2]))
    for i in range(0, a.n, step):
        out[i:i + step] = _block_hamming(wa[i:i + step], wb)
    return out


def attribute_estimates(d_h: np.ndarray, configs: Sequence[EncodingConfig], mechanism: Mechanism | str,
                        clamp: bool = True) -> np.ndarray:
    """Per-attribute distance estimates from Hamming distances (last axis = attribute).

    With ``clamp`` each DPBV estimate is limited to [0, 2t] before further use.
    """
    mechanism = Mechanism(mechanism)
    d_h = np.asarray(d_h, dtype=np.float64)
    if d_h.shape[-1] != len(configs):
        raise InputError("one config per attribute is required")
    if mechanism is Mechanism.BV:
        scale = np.array([c.mu / (2.0 * c.s) for c in configs])
        return d_h * scale
    coef = np.array([_dpbv_coefficients(c) for c in configs])
    est = d_h * coef[:, 0] - coef[:, 1]
    if clamp:
        est = np.clip(est, 0.0, np.array([2.0 * c.t for c in configs]))
    return est


def combine_attributes(est: np.ndarray) -> np.ndarray:
    """Euclidean combination sqrt(sum of squared per-attribute estimates)."""
    return np.sqrt(np.einsum("...d,...d->...", est, est))


def _as_dataset(encoded) -> EncodedDataset:
    if isinstance(encoded, EncodedDataset):
        return encoded
    records = list(encoded)
    if records and not all(isinstance(r, EncodedRecord) for r in records):
        raise InputError("expected EncodedRecord items")
    return EncodedDataset.from_records(records)


def build_distance_matrix(encoded: EncodedDataset | Sequence[EncodedRecord],
                          configs: EncodingConfig | Sequence[EncodingConfig],
                          block: int | None = None) -> DistanceMatrix:
    """Estimated Euclidean distance between every pair of encoded records.

    Each unordered pair is computed once (upper triangle, mirrored). For
    single-attribute DPBV data the unclamped estimates are kept in ``raw``.
    """
    enc = _as_dataset(encoded)
    if isinstance(configs, EncodingConfig):
        configs = [configs] * enc.d
    configs = list(configs)
    if len(configs) != enc.d:
        raise InputError(f"{len(configs)} configs for {enc.d} attributes")
    if any(c.s != enc.s for c in configs):
        raise InputError("config s differs from encoded vector length")
    n = enc.n
    words = enc.words()
    values = np.zeros((n, n))
    keep_raw = enc.mechanism is Mechanism.DPBV and enc.d == 1
    raw = np.zeros((n, n)) if keep_raw else None
    if block is None:
        block = max(1, 8_000_000 // max(1, n * words.shape[1] * words.shape[2]))
    for i in range(0, n, block):
        stop = min(i + block, n)
        hd = _block_hamming(words[i:stop], words[i:])  # (b, n - i, d)
        est = attribute_estimates(hd, configs, enc.mechanism)
        values[i:stop, i:] = combine_attributes(est)
        if keep_raw:
            raw[i:stop, i:] = attribute_estimates(hd, configs, enc.mechanism, clamp=False)[..., 0]
    iu = np.tril_indices(n, -1)
    values[iu] = values.T[iu]
    np.fill_diagonal(values, 0.0)
    if keep_raw:
        raw[iu] = raw.T[iu]
        np.fill_diagonal(raw, 0.0)
    return DistanceMatrix(values, np.zeros((n, n), dtype=np.int64), raw)


def default_tolerance(config: EncodingConfig, mechanism: Mechanism | str, beta: float = 0.05) -> float:
    """Slack for the additivity test: float round-off for BV, the concentration bound for DPBV."""
    if Mechanism(mechanism) is Mechanism.BV:
        return 1e-9 * config.mu
    return error_bound(config, beta)


@dataclass
class _Witnesses:
    witnessed: np.ndarray
    contradicted: np.ndarray


def _triple_witnesses(D: np.ndarray, tolerance: float, interior_fraction: float) -> _Witnesses:
    """Classify each pair by additive triples (i, j, k) with j strictly inside.

    j counts as an interior candidate for (i, k) when both hops are shorter than
    D[i, k] and each is at least ``interior_fraction * D[i, k]``. The pair is
    witnessed if some candidate satisfies |D_ij + D_jk - D_ik| <= tolerance and
    contradicted if candidates exist but none does.
    """
    n = D.shape[0]
    witnessed = np.zeros((n, n), dtype=bool)
    contradicted = np.zeros((n, n), dtype=bool)
    for i in range(n):
        dik = D[i][:, None]  # indexed by k
        dij = D[i][None, :]  # indexed by j
        djk = D.T  # [k, j] = D[j, k]
        cand = (dij < dik) & (djk < dik) & (np.minimum(dij, djk) >= interior_fraction * dik)
        ok = cand & (np.abs(dij + djk - dik) <= tolerance)
        w = ok.any(axis=1)
        witnessed[i] = w
        contradicted[i] = cand.any(axis=1) & ~w
    return _Witnesses(witnessed, contradicted)


def _min_plus(A: np.ndarray, rows: np.ndarray, block: int = 64) -> np.ndarray:
    """min_j (A[i, j] + A[j, k]) for the selected rows i."""
    out = np.empty((len(rows), A.shape[1]))
    for s in range(0, len(rows), block):
        r = rows[s:s + block]
        out[s:s + block] = np.min(A[r][:, :, None] + A[None, :, :], axis=1)
    return out


def distance_consistence(D: DistanceMatrix | np.ndarray, tolerance: float = 0.0,
                         known_local_radius: float | None = None, interior_fraction: float = 0.25,
                         max_rounds: int | None = None) -> DistanceMatrix:
    """Repair saturated long-range estimates by chaining local-view distances.

    1. The local-view radius ``r`` is the largest entry witnessed by an additive
       interior triple, unless ``known_local_radius`` is given.
    2. Trusted entries are copied: without a known radius, the witnessed ones;
       with it, entries <= r that no interior triple contradicts.
    3. In round k, every untrusted entry still unset becomes
       min_j (D_ij + D_jk) over entries set in rounds < k.
    4. Entries never reached keep their original value.

    ``revision`` records the round in which each entry was set (0 = original).
    """
    if tolerance < 0:
        raise ConfigError("tolerance must be non-negative")
    if not 0 <= interior_fraction < 0.5:
        raise ConfigError("interior_fraction must lie in [0, 0.5)")
    base = D.values if isinstance(D, DistanceMatrix) else np.asarray(D, dtype=np.float64)
    n = base.shape[0]
    if base.shape != (n, n) or not np.allclose(base, base.T) or np.any(base < 0):
        raise InputError("distance matrix must be square, symmetric and non-negative")
    revision = np.zeros((n, n), dtype=np.int64)
    if n < 3:
        return DistanceMatrix(base.copy(), revision, local_radius=known_local_radius)

    marks = _triple_witnesses(base, tolerance, interior_fraction)
    if known_local_radius is not None:
        r = float(known_local_radius)
        trusted = (base <= r) & ~marks.contradicted
    else:
        if not marks.witnessed.any():
            return DistanceMatrix(base.copy(), revision, local_radius=None)
        r = float(base[marks.witnessed].max())
        trusted = marks.witnessed & (base <= r)
    np.fill_diagonal(trusted, True)

    refined = np.where(trusted, base, np.inf)
    rounds = n if max_rounds is None else max_rounds
    for k in range(1, rounds + 1):
        pending = np.flatnonzero(np.isinf(refined).any(axis=1))
        if len(pending) == 0:
            break
        previous = refined.copy()
        cand = _min_plus(previous, pending)
        rows = previous[pending]
        update = np.isinf(rows) & np.isfinite(cand)
        if not update.any():
            break
        rows[update] = cand[update]
        refined[pending] = rows
        rev_rows = revision[pending]
        rev_rows[update] = k
        revision[pending] = rev_rows
    unreached = np.isinf(refined)
    refined[unreached] = base[unreached]
    return DistanceMatrix(refined, revision, local_radius=r)


def average_estimation_error(true_d, est_d) -> float:
    """Mean absolute difference between true and estimated distances over all compared entries."""
    true_d = np.asarray(true_d, dtype=np.float64)
    est_d = np.asarray(est_d.values if isinstance(est_d, DistanceMatrix) else est_d, dtype=np.float64)
    if true_d.shape != est_d.shape:
        raise InputError(f"shape mismatch: {true_d.shape} vs {est_d.shape}")
    if true_d.size == 0:
        raise InputError("nothing to compare")
    return float(np.mean(np.abs(true_d - est_d)))
