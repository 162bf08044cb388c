"""Shared domain types: encoding configuration, hash families, bit vectors, datasets."""

from __future__ import annotations

import csv
import hashlib
import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

# Stream labels keep the threshold and noise streams disjoint for the same seed.
THRESHOLD_STREAM = 0x7468
NOISE_STREAM = 0x6E6F
SAMPLING_STREAM = 0x7361

_SEED_MASK = (1 << 64) - 1


class ConfigError(ValueError):
    """Invalid or inconsistent encoding parameters."""


class InputError(ValueError):
    """Input data violates a precondition (range, shape, schema)."""


def derive_rng(seed: int, *key: int) -> np.random.Generator:
    """Deterministic generator keyed by ``seed`` and an integer path."""
    ss = np.random.SeedSequence(seed & _SEED_MASK, spawn_key=tuple(int(k) & _SEED_MASK for k in key))
    return np.random.Generator(np.random.PCG64(ss))


@dataclass(frozen=True)
class EncodingConfig:
    """Parameters every custodian agrees on before encoding one attribute.

    Attributes:
        lower: Lower bound L of the data range.
        upper: Upper bound U of the data range.
        t: Interval half-width of each hash window.
        s: Bit-vector length (number of hash functions).
        epsilon: Per-bit privacy parameter.
        seed: Shared seed from which hash families are derived.
        attribute_count: Number of attributes d in the record schema.
    """

    lower: float
    upper: float
    t: float
    s: int
    epsilon: float
    seed: int = 0
    attribute_count: int = 1

    def __post_init__(self):
        for name in ("lower", "upper", "t", "epsilon"):
            if not math.isfinite(float(getattr(self, name))):
                raise ConfigError(f"{name} must be finite")
        if not self.upper > self.lower:
            raise ConfigError(f"upper ({self.upper}) must exceed lower ({self.lower})")
        if not self.t > 0:
            raise ConfigError(f"t must be positive, got {self.t}")
        if int(self.s) != self.s or self.s < 1:
            raise ConfigError(f"s must be a positive integer, got {self.s}")
        if not self.epsilon > 0:
            raise ConfigError(f"epsilon must be positive, got {self.epsilon}")
        if int(self.attribute_count) != self.attribute_count or self.attribute_count < 1:
            raise ConfigError("attribute_count must be a positive integer")
        if not -(1 << 63) <= int(self.seed) < (1 << 64):
            raise ConfigError("seed must fit in 64 bits")
        for name in ("lower", "upper", "t", "epsilon"):
            object.__setattr__(self, name, float(getattr(self, name)))
        object.__setattr__(self, "s", int(self.s))
        object.__setattr__(self, "attribute_count", int(self.attribute_count))
        object.__setattr__(self, "seed", int(self.seed))

    @property
    def mu(self) -> float:
        """Effective range length after widening [L, U] to [L - t, U + t]."""
        return (self.upper - self.lower) + 2.0 * self.t

    @property
    def keep_probability(self) -> float:
        """Probability e^eps / (e^eps + 1) that a bit survives randomized response."""
        return 1.0 / (1.0 + math.exp(-self.epsilon))

    @property
    def flip_probability(self) -> float:
        e = math.exp(-self.epsilon)
        return e / (1.0 + e)

    def replace(self, **changes) -> "EncodingConfig":
        values = asdict(self)
        values.update(changes)
        return EncodingConfig(**values)

    def to_dict(self) -> dict:
        return asdict(self)


def fingerprint(configs: EncodingConfig | Sequence[EncodingConfig]) -> str:
    """Short stable hash of one or more configurations."""
    if isinstance(configs, EncodingConfig):
        configs = [configs]
    payload = json.dumps([c.to_dict() for c in configs], sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(payload.encode()).hexdigest()[:16]


@dataclass(frozen=True, eq=False)
class HashFamily:
    """The ``s`` random thresholds defining one attribute's window hashes."""

    thresholds: np.ndarray
    attribute_index: int = 0

    def __post_init__(self):
        arr = np.array(self.thresholds, dtype=np.float64)
        arr.setflags(write=False)
        object.__setattr__(self, "thresholds", arr)

    def __len__(self) -> int:
        return len(self.thresholds)

    def __eq__(self, other) -> bool:
        if not isinstance(other, HashFamily):
            return NotImplemented
        return self.attribute_index == other.attribute_index and np.array_equal(
            self.thresholds, other.thresholds
        )

    def __hash__(self) -> int:
        return hash((self.attribute_index, self.thresholds.tobytes()))


def derive_hash_family(config: EncodingConfig, attribute_index: int = 0) -> HashFamily:
    """Draw the thresholds for ``attribute_index`` from the shared seed.

    Thresholds are i.i.d. uniform on [L - t, U + t]; the stream is keyed by
    ``(seed, attribute_index)`` so every custodian reconstructs them exactly.
    """
    if not isinstance(config, EncodingConfig):
        raise ConfigError("config must be an EncodingConfig")
    if attribute_index < 0:
        raise ConfigError("attribute_index must be non-negative")
    rng = derive_rng(config.seed, THRESHOLD_STREAM, attribute_index)
    thresholds = rng.uniform(config.lower - config.t, config.upper + config.t, config.s)
    return HashFamily(thresholds, attribute_index)


def derive_hash_families(configs: Sequence[EncodingConfig]) -> list[HashFamily]:
    return [derive_hash_family(c, i) for i, c in enumerate(configs)]


def _packed_length(s: int) -> int:
    return (s + 7) // 8


@dataclass(frozen=True, eq=False)
class BitVector:
    """Packed ``s``-bit vector, little-endian bit order within each byte."""

    bits: np.ndarray
    s: int

    def __post_init__(self):
        arr = np.ascontiguousarray(self.bits, dtype=np.uint8)
        if arr.ndim != 1 or arr.size != _packed_length(self.s):
            raise InputError(f"packed buffer of {arr.size} bytes does not hold {self.s} bits")
        arr = arr.copy()
        if self.s % 8:
            arr[-1] &= (1 << (self.s % 8)) - 1
        arr.setflags(write=False)
        object.__setattr__(self, "bits", arr)

    @classmethod
    def from_bools(cls, values: Iterable) -> "BitVector":
        arr = np.asarray(list(values) if not isinstance(values, np.ndarray) else values, dtype=bool)
        return cls(np.packbits(arr, bitorder="little"), arr.size)

    @classmethod
    def from_string(cls, text: str) -> "BitVector":
        return cls.from_bools([c == "1" for c in text])

    @classmethod
    def from_bytes(cls, data: bytes, s: int) -> "BitVector":
        return cls(np.frombuffer(data, dtype=np.uint8), s)

    def to_bools(self) -> np.ndarray:
        return np.unpackbits(self.bits, count=self.s, bitorder="little").astype(bool)

    def to_bytes(self) -> bytes:
        return self.bits.tobytes()

    def to_list(self) -> list[int]:
        return self.to_bools().astype(int).tolist()

    def popcount(self) -> int:
        return int(np.bitwise_count(self.bits).sum())

    def complement(self) -> "BitVector":
        return BitVector.from_bools(~self.to_bools())

    def __len__(self) -> int:
        return self.s

    def __eq__(self, other) -> bool:
        if not isinstance(other, BitVector):
            return NotImplemented
        return self.s == other.s and np.array_equal(self.bits, other.bits)

    def __hash__(self) -> int:
        return hash((self.s, self.bits.tobytes()))

    def __repr__(self) -> str:
        text = "".join("1" if b else "0" for b in self.to_bools()[:32])
        return f"BitVector(s={self.s}, bits={text}{'...' if self.s > 32 else ''})"


@dataclass(frozen=True)
class Schema:
    """Attribute names plus one configuration per attribute."""

    names: tuple[str, ...]
    configs: tuple[EncodingConfig, ...]

    def __post_init__(self):
        if len(self.names) != len(self.configs):
            raise ConfigError("one configuration per attribute name is required")
        if len(set(self.names)) != len(self.names):
            raise ConfigError("attribute names must be unique")
        shared = {(c.t, c.s, c.epsilon, c.seed, c.attribute_count) for c in self.configs}
        if len(shared) > 1:
            raise ConfigError("t, s, epsilon, seed and attribute_count must be shared by all attributes")

    @property
    def d(self) -> int:
        return len(self.configs)

    @classmethod
    def uniform(cls, d: int, lower: float, upper: float, t: float, s: int, epsilon: float,
                seed: int = 0, names: Sequence[str] | None = None) -> "Schema":
        names = tuple(names) if names is not None else tuple(f"a{i}" for i in range(d))
        cfg = EncodingConfig(lower, upper, t, s, epsilon, seed, d)
        return cls(names, (cfg,) * d)

    def fingerprint(self) -> str:
        return fingerprint(self.configs)

    def to_dict(self) -> dict:
        first = self.configs[0]
        return {
            "t": first.t,
            "s": first.s,
            "epsilon": first.epsilon,
            "seed": first.seed,
            "lower": min(c.lower for c in self.configs),
            "upper": max(c.upper for c in self.configs),
            "attributes": [
                {"name": n, "lower": c.lower, "upper": c.upper} for n, c in zip(self.names, self.configs)
            ],
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "Schema":
        try:
            t, s, eps = float(doc["t"]), doc["s"], float(doc["epsilon"])
            seed = int(doc.get("seed", 0))
            attrs = doc.get("attributes")
            if not attrs:
                attrs = [{"name": "a0", "lower": doc["lower"], "upper": doc["upper"]}]
        except KeyError as exc:
            raise ConfigError(f"config document missing field {exc}") from None
        d = len(attrs)
        names, configs = [], []
        for a in attrs:
            lower = float(a.get("lower", doc.get("lower")))
            upper = float(a.get("upper", doc.get("upper")))
            names.append(str(a["name"]))
            configs.append(EncodingConfig(lower, upper, t, s, eps, seed, d))
        return cls(tuple(names), tuple(configs))

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2) + "\n")

    @classmethod
    def load(cls, path) -> "Schema":
        try:
            doc = json.loads(Path(path).read_text())
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: not valid JSON ({exc})") from None
        return cls.from_dict(doc)


@dataclass(frozen=True, eq=False)
class Dataset:
    """Records as an (n, d) array with ids, optional labels, and the schema."""

    values: np.ndarray
    schema: Schema
    labels: np.ndarray | None = None
    record_ids: np.ndarray | None = None

    def __post_init__(self):
        values = np.array(self.values, dtype=np.float64)
        if values.ndim == 1 and (self.schema.d == 1 or values.size == 0):
            values = values.reshape(-1, self.schema.d)
        values.setflags(write=False)
        object.__setattr__(self, "values", values)
        n = values.shape[0]
        ids = np.arange(n, dtype=np.int64) if self.record_ids is None else np.asarray(self.record_ids, dtype=np.int64)
        if ids.shape != (n,):
            raise InputError("record_ids must have one entry per record")
        if len(np.unique(ids)) != n:
            raise InputError("record_ids must be unique")
        ids.setflags(write=False)
        object.__setattr__(self, "record_ids", ids)
        if self.labels is not None:
            labels = np.asarray(self.labels)
            if labels.shape != (n,):
                raise InputError("labels must have one entry per record")
            object.__setattr__(self, "labels", labels)

    @property
    def n(self) -> int:
        return self.values.shape[0]

    @property
    def d(self) -> int:
        return self.schema.d

    @classmethod
    def create(cls, values, schema: Schema, labels=None, record_ids=None, policy: str = "reject") -> "Dataset":
        """Build a dataset, rejecting (default) or clamping out-of-range values."""
        ds = cls(values, schema, labels, record_ids)
        report = validate_dataset(ds)
        if report.passed:
            return ds
        if policy == "clamp" and not report.dimension_errors:
            lo = np.array([c.lower for c in schema.configs])
            hi = np.array([c.upper for c in schema.configs])
            return cls(np.clip(ds.values, lo, hi), schema, labels, ds.record_ids)
        if policy not in ("reject", "clamp"):
            raise ConfigError(f"unknown range policy {policy!r}")
        raise InputError("; ".join(report.errors[:5]))

    def subset(self, rows) -> "Dataset":
        rows = np.asarray(rows)
        labels = None if self.labels is None else self.labels[rows]
        return Dataset(self.values[rows], self.schema, labels, self.record_ids[rows])

    def columns(self, start: int, stop: int) -> "Dataset":
        """Vertical slice of attributes [start, stop)."""
        sub = Schema(self.schema.names[start:stop],
                     tuple(c.replace(attribute_count=stop - start) for c in self.schema.configs[start:stop]))
        return Dataset(self.values[:, start:stop], sub, self.labels, self.record_ids)

    def to_csv(self, path, include_ids: bool = False) -> None:
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            header = (["id"] if include_ids else []) + list(self.schema.names)
            if self.labels is not None:
                header.append("label")
            writer.writerow(header)
            for i in range(self.n):
                row = ([int(self.record_ids[i])] if include_ids else []) + [repr(float(v)) for v in self.values[i]]
                if self.labels is not None:
                    row.append(self.labels[i])
                writer.writerow(row)

    @classmethod
    def from_csv(cls, path, schema: Schema, policy: str = "reject") -> "Dataset":
        """Read a CSV with a header row; optional ``id`` and trailing ``label`` columns."""
        with open(path, newline="") as fh:
            rows = list(csv.reader(fh))
        if not rows:
            raise InputError(f"{path}: empty file")
        header, body = rows[0], rows[1:]
        has_id = bool(header) and header[0] == "id"
        has_label = bool(header) and header[-1] == "label"
        names = header[(1 if has_id else 0):(len(header) - 1 if has_label else len(header))]
        if tuple(names) != schema.names:
            raise InputError(f"{path}: attribute columns {names} do not match schema {list(schema.names)}")
        d = len(names)
        values = np.empty((len(body), d))
        ids, labels = [], []
        for r, row in enumerate(body):
            if len(row) != len(header):
                raise InputError(f"{path}: row {r + 1} has {len(row)} fields, expected {len(header)}")
            off = 1 if has_id else 0
            if has_id:
                ids.append(int(row[0]))
            try:
                values[r] = [float(v) for v in row[off:off + d]]
            except ValueError as exc:
                raise InputError(f"{path}: row {r + 1}: {exc}") from None
            if has_label:
                labels.append(row[-1])
        lab = None
        if has_label:
            lab = np.array(labels)
            try:
                lab = lab.astype(np.int64)
            except ValueError:
                pass
        return cls.create(values, schema, lab, ids if has_id else None, policy=policy)


@dataclass
class ValidationReport:
    passed: bool
    errors: list[str] = field(default_factory=list)
    warnings: list[str] = field(default_factory=list)
    out_of_range: list[tuple[int, int, float]] = field(default_factory=list)
    dimension_errors: list[int] = field(default_factory=list)


def validate_dataset(dataset: Dataset) -> ValidationReport:
    """Report out-of-range values and dimension mismatches without raising."""
    report = ValidationReport(passed=True)
    values = dataset.values
    if values.shape[0] == 0:
        report.warnings.append("dataset is empty")
        return report
    if values.ndim != 2 or values.shape[1] != dataset.schema.d:
        report.passed = False
        report.dimension_errors = list(range(values.shape[0]))
        report.errors.append(f"records have {values.shape[1:]} attributes, schema declares {dataset.schema.d}")
        return report
    lo = np.array([c.lower for c in dataset.schema.configs])
    hi = np.array([c.upper for c in dataset.schema.configs])
    bad = ~((values >= lo) & (values <= hi))
    for i, j in zip(*np.nonzero(bad)):
        report.out_of_range.append((int(i), int(j), float(values[i, j])))
        report.errors.append(
            f"record {int(i)} attribute {dataset.schema.names[j]!r}: value {values[i, j]!r} outside [{lo[j]}, {hi[j]}]"
        )
    report.passed = not report.errors
    return report
