"""Simulated custodians and aggregator for horizontally and vertically partitioned data.

Every payload handed to the aggregator is serialized and parsed back, so the
binary encoded-dataset format plus a JSON manifest is the only interface.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .clustering import ClusterAssignment, dbscan, kcluster, nmi
from .core import (ConfigError, Dataset, EncodingConfig, InputError, Schema, derive_hash_family,
                   derive_rng)
from .distance import (DistanceMatrix, attribute_estimates, build_distance_matrix, combine_attributes,
                       default_tolerance, distance_consistence, dpbv_estimate, estimate, hamming,
                       pairwise_hamming)
from .encoder import EncodedDataset, EncodedRecord, Mechanism, encode_dataset

DECOMPOSITION_STREAM = 0x6463
HORIZONTAL = "horizontal"
VERTICAL = "vertical"


@dataclass(frozen=True)
class Custodian:
    """One data holder: a slice of the records (horizontal) or of the attributes (vertical)."""

    party_id: int
    data: Dataset
    schema: Schema
    partition: str = HORIZONTAL
    attribute_range: tuple[int, int] | None = None

    def __post_init__(self):
        if self.partition not in (HORIZONTAL, VERTICAL):
            raise ConfigError(f"unknown partition kind {self.partition!r}")
        if self.partition == VERTICAL:
            if self.attribute_range is None:
                raise ConfigError("a vertical custodian needs an attribute range")
            start, stop = self.attribute_range
            if not 0 <= start < stop <= self.schema.d or stop - start != self.data.d:
                raise ConfigError("attribute range does not match the local slice")
        elif self.data.d != self.schema.d:
            raise ConfigError("a horizontal custodian holds every attribute")

    @property
    def columns(self) -> tuple[int, int]:
        return self.attribute_range if self.attribute_range is not None else (0, self.schema.d)

    def manifest(self, mechanism: Mechanism | str, payload: str = "records") -> dict:
        doc = {
            "party_id": self.party_id,
            "partition": self.partition,
            "payload": payload,
            "mechanism": Mechanism(mechanism).value,
            "fingerprint": self.schema.fingerprint(),
        }
        if self.partition == VERTICAL:
            doc["attribute_range"] = list(self.attribute_range)
        else:
            doc["record_count"] = self.data.n
        return doc

    def encode(self, mechanism: Mechanism | str = Mechanism.DPBV) -> tuple[bytes, dict]:
        """Encode the local slice with the shared families; returns (payload, manifest)."""
        start, stop = self.columns
        families = [derive_hash_family(c, i) for i, c in enumerate(self.schema.configs)][start:stop]
        enc = encode_dataset(self.data, mechanism, self.schema.configs[0].seed, families,
                             noise_offset=start, noise_width=self.schema.d)
        return enc.to_bytes(), self.manifest(mechanism)

    def exact_partial_squares(self) -> np.ndarray:
        """(n, n) exact squared distances over the local attributes (the L^2 block)."""
        x = self.data.values
        sq = (x * x).sum(axis=1)
        out = sq[:, None] + sq[None, :] - 2.0 * x @ x.T
        np.fill_diagonal(out, 0.0)
        return np.maximum(out, 0.0)

    def encode_decomposition(self, mechanism: Mechanism | str = Mechanism.DPBV) -> tuple[bytes, dict]:
        """Encode (S1, S2) for every unordered record pair; returns (payload, manifest)."""
        cfg = decomposition_config(self.schema.configs[self.columns[0]:self.columns[1]])
        enc = encode_decomposition_pairs(self.data.values, cfg, mechanism, self.data.record_ids)
        doc = self.manifest(mechanism, payload="decomposition")
        doc["decomposition"] = cfg.to_dict()
        return enc.to_bytes(), doc


@dataclass
class VerticalPair:
    L_squared: float
    R_squared_estimate: float
    method: str = "naive"

    def __post_init__(self):
        if self.L_squared < 0:
            raise InputError("L_squared must be non-negative")
        if self.method not in ("naive", "decomposition"):
            raise ConfigError(f"unknown method {self.method!r}")

    @property
    def distance(self) -> float:
        return math.sqrt(self.L_squared + max(0.0, self.R_squared_estimate))


# -- pairwise estimators ------------------------------------------------------


def _record_hamming(a: EncodedRecord, b: EncodedRecord) -> np.ndarray:
    if a.d != b.d or a.fingerprint != b.fingerprint or a.mechanism != b.mechanism:
        raise InputError("records were encoded under different schemas")
    return np.array([hamming(u, v) for u, v in zip(a.vectors, b.vectors)], dtype=np.float64)


def _configs_for(record: EncodedRecord, configs) -> list[EncodingConfig]:
    configs = [configs] * record.d if isinstance(configs, EncodingConfig) else list(configs)
    if len(configs) != record.d:
        raise InputError(f"{len(configs)} configs for {record.d} attributes")
    return configs


def horizontal_estimate(encoded_a: EncodedRecord, encoded_b: EncodedRecord, configs) -> float:
    """Euclidean distance from per-attribute estimates, each clamped to [0, 2t]."""
    configs = _configs_for(encoded_a, configs)
    est = attribute_estimates(_record_hamming(encoded_a, encoded_b), configs, encoded_a.mechanism)
    return float(combine_attributes(est))


def vertical_estimate_naive(bob_a: EncodedRecord, bob_b: EncodedRecord, configs) -> float:
    """Squared remainder: sum of squared per-attribute estimates over the Bob-side attributes."""
    configs = _configs_for(bob_a, configs)
    est = attribute_estimates(_record_hamming(bob_a, bob_b), configs, bob_a.mechanism)
    return float((est * est).sum())


def decomposition_config(configs: Sequence[EncodingConfig]) -> EncodingConfig:
    """Scalar encoding for (S1, S2): range [0, mu_max] with mu_max = 2 sum mu^2 and t = mu_max / 2."""
    configs = list(configs)
    if not configs:
        raise ConfigError("at least one attribute is required")
    mu_max = 2.0 * sum(c.mu ** 2 for c in configs)
    first = configs[0]
    return EncodingConfig(0.0, mu_max, mu_max / 2.0, first.s, first.epsilon, first.seed, 1)


def decomposition_scalars(a, b) -> tuple[float, float]:
    """S1 = sum(a^2 + b^2), S2 = sum(2ab); S1 - S2 is the squared distance."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if np.any(a < 0) or np.any(b < 0):
        raise InputError("decomposition needs non-negative attribute values")
    return float((a * a + b * b).sum()), float((2.0 * a * b).sum())


def _decomposition_family(config: EncodingConfig):
    # keyed apart from every real attribute index
    return derive_hash_family(config, DECOMPOSITION_STREAM)


def vertical_estimate_decomposition(bob_a, bob_b, config: EncodingConfig, rng: np.random.Generator | None,
                                    mechanism: Mechanism | str = Mechanism.DPBV) -> float:
    """Squared remainder from one scalar encoding of S1 and one of S2.

    ``config`` is the output of :func:`decomposition_config`. Returns the raw
    (unclamped) scalar estimate, which may be negative under noise.
    """
    s1, s2 = decomposition_scalars(bob_a, bob_b)
    if max(s1, s2) > config.upper:
        raise InputError("decomposition scalar exceeds mu_max; normalize the attributes")
    family = _decomposition_family(config)
    mechanism = Mechanism(mechanism)
    lo, hi = family.thresholds - config.t, family.thresholds + config.t
    bits = np.stack([(s1 >= lo) & (s1 <= hi), (s2 >= lo) & (s2 <= hi)])
    if mechanism is Mechanism.DPBV:
        if rng is None:
            raise ConfigError("DPBV encoding requires a random stream")
        bits ^= rng.random(bits.shape) < config.flip_probability
    d_h = int((bits[0] != bits[1]).sum())
    if mechanism is Mechanism.BV:
        return float(estimate(d_h, config, mechanism))
    return float(dpbv_estimate(d_h, config, raw=True))


def encode_decomposition_pairs(values: np.ndarray, config: EncodingConfig, mechanism: Mechanism | str,
                               record_ids: np.ndarray | None = None, chunk: int = 4096,
                               pairs: tuple[np.ndarray, np.ndarray] | None = None,
                               noise_key: int = 0) -> EncodedDataset:
    """Encode (S1, S2) for record pairs as two-attribute records.

    By default every pair i < j is encoded in row-major upper-triangle order;
    ``pairs`` selects explicit (i, j) index arrays instead. Noise is fresh per
    pair and drawn from one stream per chunk of pairs.
    """
    values = np.asarray(values, dtype=np.float64)
    if np.any(values < 0):
        raise InputError("decomposition needs non-negative attribute values")
    mechanism = Mechanism(mechanism)
    if pairs is None:
        iu, ju = np.triu_indices(values.shape[0], 1)
    else:
        iu, ju = (np.asarray(a, dtype=np.int64) for a in pairs)
    sq = (values * values).sum(axis=1)
    family = _decomposition_family(config)
    lo, hi = family.thresholds - config.t, family.thresholds + config.t
    width = ((config.s + 63) // 64) * 8
    packed = np.zeros((len(iu), 2, width), dtype=np.uint8)
    for c, start in enumerate(range(0, len(iu), chunk)):
        i, j = iu[start:start + chunk], ju[start:start + chunk]
        s1 = sq[i] + sq[j]
        s2 = 2.0 * np.einsum("pd,pd->p", values[i], values[j])
        if max(s1.max(initial=0.0), s2.max(initial=0.0)) > config.upper:
            raise InputError("decomposition scalar exceeds mu_max; normalize the attributes")
        x = np.stack([s1, s2], axis=1)[:, :, None]
        bits = (x >= lo) & (x <= hi)
        if mechanism is Mechanism.DPBV:
            rng = derive_rng(config.seed, DECOMPOSITION_STREAM, noise_key, c)
            bits ^= rng.random(bits.shape, dtype=np.float32) < config.flip_probability
        packed[start:start + len(i), :, : (config.s + 7) // 8] = np.packbits(bits, axis=2, bitorder="little")
    pair_ids = np.arange(len(iu), dtype=np.int64)
    return EncodedDataset(packed, config.s, mechanism, "decomposition", pair_ids)


def decomposition_estimates(encoded_pairs: EncodedDataset, config: EncodingConfig) -> np.ndarray:
    """Raw squared-remainder estimate for each encoded (S1, S2) pair."""
    if encoded_pairs.d != 2:
        raise InputError("pair payload must hold two vectors per pair")
    w = encoded_pairs.words()
    d_h = np.bitwise_count(w[:, 0] ^ w[:, 1]).sum(axis=1, dtype=np.int64)
    if encoded_pairs.mechanism is Mechanism.BV:
        return np.asarray(estimate(d_h, config, Mechanism.BV), dtype=np.float64)
    return np.asarray(dpbv_estimate(d_h, config, raw=True), dtype=np.float64)


def decomposition_matrix(encoded_pairs: EncodedDataset, config: EncodingConfig, n: int) -> np.ndarray:
    """(n, n) raw squared-remainder estimates from upper-triangle (S1, S2) pairs."""
    if encoded_pairs.n != n * (n - 1) // 2:
        raise InputError("pair payload does not match the record count")
    out = np.zeros((n, n))
    out[np.triu_indices(n, 1)] = decomposition_estimates(encoded_pairs, config)
    return out + out.T


# -- aggregator -----------------------------------------------------------------


@dataclass
class SimulationParams:
    mechanism: str = "dpbv"
    method: str = "naive"  # vertical only: naive | decomposition
    consistence: bool = False
    k: int = 2
    eps: float = 1.0
    min_points: int = 5
    max_iterations: int = 100
    seed: int = 0


@dataclass
class SimulationResult:
    record_ids: np.ndarray
    distances: DistanceMatrix
    assignment: ClusterAssignment | None
    nmi: float | None
    manifests: list[dict] = field(default_factory=list)
    payload_bytes: int = 0

    def metrics(self) -> dict:
        doc = {"n": int(len(self.record_ids)), "payload_bytes": self.payload_bytes,
               "parties": len(self.manifests)}
        if self.assignment is not None:
            doc.update(k=self.assignment.k, iterations=self.assignment.iterations_used,
                       converged=self.assignment.converged)
        if self.nmi is not None:
            doc["nmi"] = self.nmi
        return doc


class Aggregator:
    """Consolidates payloads. Accepts only serialized encodings and exact L^2 blocks."""

    def __init__(self):
        self.manifests: list[dict] = []
        self.payloads: list[EncodedDataset] = []
        self.partial_squares: list[np.ndarray] = []
        self.received_bytes = 0

    def receive(self, payload: bytes, manifest: dict) -> None:
        if not isinstance(payload, (bytes, bytearray)):
            raise InputError("the aggregator only accepts serialized encodings")
        doc = json.loads(json.dumps(manifest))
        if self.manifests and doc["fingerprint"] != self.manifests[0]["fingerprint"]:
            raise ConfigError(f"party {doc['party_id']} uses a different configuration fingerprint")
        self.manifests.append(doc)
        self.payloads.append(EncodedDataset.from_bytes(bytes(payload)))
        self.received_bytes += len(payload)

    def receive_partial_squares(self, block: np.ndarray) -> None:
        block = np.asarray(block, dtype=np.float64)
        if block.ndim != 2 or block.shape[0] != block.shape[1] or np.any(block < 0):
            raise InputError("expected a square block of non-negative squared distances")
        self.partial_squares.append(block)
        self.received_bytes += block.nbytes

    def union(self) -> EncodedDataset:
        merged = EncodedDataset.concatenate(self.payloads)
        return merged.subset(np.argsort(merged.record_ids, kind="stable"))


def _check_parties(parties: Sequence[Custodian]) -> str:
    if not parties:
        raise InputError("at least one custodian is required")
    kinds = {p.partition for p in parties}
    if len(kinds) != 1:
        raise ConfigError("all custodians must use the same partition kind")
    prints = {p.schema.fingerprint() for p in parties}
    if len(prints) != 1:
        raise ConfigError("custodians disagree on the shared configuration fingerprint")
    kind = kinds.pop()
    if kind == VERTICAL:
        spans = sorted(p.attribute_range for p in parties)
        if spans[0][0] != 0 or spans[-1][1] != parties[0].schema.d or any(
                a[1] != b[0] for a, b in zip(spans, spans[1:])):
            raise ConfigError("vertical slices must be disjoint and cover every attribute")
        ids = [tuple(p.data.record_ids) for p in parties]
        if len(set(ids)) != 1:
            raise InputError("vertical custodians must hold the same record ids in the same order")
    else:
        ids = np.concatenate([p.data.record_ids for p in parties])
        if len(np.unique(ids)) != len(ids):
            raise InputError("horizontal custodians must hold disjoint record sets")
    return kind


def _horizontal(parties, params, agg: Aggregator) -> tuple[np.ndarray, DistanceMatrix]:
    for p in parties:
        agg.receive(*p.encode(params.mechanism))
    merged = agg.union()
    return merged.record_ids, build_distance_matrix(merged, list(parties[0].schema.configs))


def _vertical(parties, params, agg: Aggregator) -> tuple[np.ndarray, DistanceMatrix]:
    parties = sorted(parties, key=lambda p: p.attribute_range)
    alice, bobs = parties[0], parties[1:]
    schema = alice.schema
    n = alice.data.n
    agg.receive_partial_squares(alice.exact_partial_squares())
    agg.manifests.append(alice.manifest(params.mechanism, payload="partial_squares"))
    r_squared = np.zeros((n, n))
    for bob in bobs:
        start, stop = bob.attribute_range
        if params.method == "naive":
            agg.receive(*bob.encode(params.mechanism))
            enc = agg.payloads[-1]
            est = attribute_estimates(pairwise_hamming(enc), list(schema.configs[start:stop]), enc.mechanism)
            r_squared += (est * est).sum(axis=2)
        elif params.method == "decomposition":
            payload, manifest = bob.encode_decomposition(params.mechanism)
            agg.receive(payload, manifest)
            cfg = EncodingConfig(**agg.manifests[-1]["decomposition"])
            r_squared += np.maximum(decomposition_matrix(agg.payloads[-1], cfg, n), 0.0)
        else:
            raise ConfigError(f"unknown vertical method {params.method!r}")
    total = agg.partial_squares[0] + r_squared
    values = np.sqrt(np.maximum(total, 0.0))
    np.fill_diagonal(values, 0.0)
    return alice.data.record_ids, DistanceMatrix.from_values(values)


def simulate(parties: Sequence[Custodian], task: str = "distances",
             params: SimulationParams | None = None) -> SimulationResult:
    """Run the custodian -> aggregator pipeline in-process.

    ``task`` is one of ``distances``, ``kcluster`` or ``dbscan``. Ground-truth
    labels are read from the custodians only for the final NMI.
    """
    params = params or SimulationParams()
    if task not in ("distances", "kcluster", "dbscan"):
        raise ConfigError(f"unknown task {task!r}")
    kind = _check_parties(parties)
    agg = Aggregator()
    if kind == HORIZONTAL:
        ids, matrix = _horizontal(parties, params, agg)
    else:
        ids, matrix = _vertical(parties, params, agg)
    if params.consistence:
        cfg = parties[0].schema.configs[0]
        matrix = distance_consistence(matrix, default_tolerance(cfg, params.mechanism))
    assignment = None
    if task == "kcluster":
        assignment = kcluster(matrix, params.k, params.max_iterations, np.random.default_rng(params.seed))
    elif task == "dbscan":
        assignment = dbscan(matrix, params.eps, params.min_points)
    score = None
    if assignment is not None:
        truth = _gather_labels(parties, ids)
        if truth is not None:
            score = nmi(truth, assignment.labels)
    return SimulationResult(ids, matrix, assignment, score, agg.manifests, agg.received_bytes)


def _gather_labels(parties: Sequence[Custodian], ids: np.ndarray) -> np.ndarray | None:
    lookup = {}
    for p in parties:
        if p.data.labels is None:
            continue
        lookup.update(zip(p.data.record_ids.tolist(), p.data.labels.tolist()))
    if not all(int(i) in lookup for i in ids):
        return None
    return np.array([lookup[int(i)] for i in ids])


def split_horizontal(data: Dataset, parts: int, rng: np.random.Generator) -> list[Custodian]:
    """Deal records to ``parts`` custodians at random."""
    owner = rng.integers(0, parts, data.n)
    return [Custodian(i, data.subset(np.flatnonzero(owner == i)), data.schema) for i in range(parts)]


def split_vertical(data: Dataset, bounds: Sequence[int]) -> list[Custodian]:
    """Cut the attributes at ``bounds`` (e.g. [32] for two halves of 64)."""
    edges = [0, *bounds, data.d]
    return [Custodian(i, data.columns(a, b), data.schema, VERTICAL, (a, b))
            for i, (a, b) in enumerate(zip(edges, edges[1:]))]
