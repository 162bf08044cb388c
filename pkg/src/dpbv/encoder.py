"""Scalar-to-Hamming-space embedding (plain and randomized-response bit vectors)."""

from __future__ import annotations

import enum
import json
import struct
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .core import (
    NOISE_STREAM,
    BitVector,
    ConfigError,
    Dataset,
    EncodingConfig,
    HashFamily,
    InputError,
    derive_hash_families,
    derive_rng,
    fingerprint,
)


class Mechanism(str, enum.Enum):
    BV = "BV"
    DPBV = "DPBV"

    @classmethod
    def _missing_(cls, value):
        if isinstance(value, str):
            for member in cls:
                if member.value == value.upper():
                    return member
        return None


def _check_range(x, config: EncodingConfig) -> None:
    x = np.asarray(x, dtype=np.float64)
    if not np.all(np.isfinite(x)) or np.any(x < config.lower) or np.any(x > config.upper):
        raise InputError(f"value outside [{config.lower}, {config.upper}]")


def window_bits(x, thresholds: np.ndarray, t: float) -> np.ndarray:
    """Boolean membership ``x in [r_i - t, r_i + t]``; broadcasts over leading axes of ``x``."""
    x = np.asarray(x, dtype=np.float64)[..., None]
    return (x >= thresholds - t) & (x <= thresholds + t)


def bv_encode(x: float, family: HashFamily, config: EncodingConfig) -> BitVector:
    """Plain bit-vector encoding: bit i is set iff ``x`` lies in window i."""
    _check_range(x, config)
    return BitVector.from_bools(window_bits(float(x), family.thresholds, config.t))


def flip_mask(shape, config: EncodingConfig, rng: np.random.Generator) -> np.ndarray:
    return rng.random(shape) < config.flip_probability


def dpbv_encode(x: float, family: HashFamily, config: EncodingConfig, rng: np.random.Generator) -> BitVector:
    """Bit-vector encoding followed by independent per-bit randomized response.

    Each plain bit is kept with probability e^eps / (e^eps + 1). The thresholds
    in ``family`` are reused as-is; only the flips are random.
    """
    _check_range(x, config)
    bits = window_bits(float(x), family.thresholds, config.t)
    return BitVector.from_bools(bits ^ flip_mask(bits.shape, config, rng))


@dataclass(frozen=True, eq=False)
class EncodedRecord:
    vectors: tuple[BitVector, ...]
    mechanism: Mechanism
    fingerprint: str
    record_id: int = 0

    def __post_init__(self):
        object.__setattr__(self, "vectors", tuple(self.vectors))
        object.__setattr__(self, "mechanism", Mechanism(self.mechanism))
        lengths = {v.s for v in self.vectors}
        if len(lengths) > 1:
            raise InputError("all attribute vectors must share the same length")

    @property
    def d(self) -> int:
        return len(self.vectors)

    @property
    def s(self) -> int:
        return self.vectors[0].s

    def __eq__(self, other) -> bool:
        if not isinstance(other, EncodedRecord):
            return NotImplemented
        return (self.vectors, self.mechanism, self.fingerprint) == (other.vectors, other.mechanism, other.fingerprint)


def encode_record(
    record: Sequence[float],
    families: Sequence[HashFamily],
    configs: EncodingConfig | Sequence[EncodingConfig],
    mechanism: Mechanism | str = Mechanism.DPBV,
    rng: np.random.Generator | None = None,
    record_id: int = 0,
) -> EncodedRecord:
    """Encode attribute i of ``record`` with ``families[i]``.

    For DPBV the flips for all attributes are drawn from ``rng`` in attribute
    order, so encoding one attribute at a time with the same stream gives the
    same result.
    """
    mechanism = Mechanism(mechanism)
    values = np.atleast_1d(np.asarray(record, dtype=np.float64))
    if isinstance(configs, EncodingConfig):
        configs = [configs] * len(families)
    if not (len(values) == len(families) == len(configs)):
        raise InputError(f"record has {len(values)} attributes, {len(families)} families, {len(configs)} configs")
    if mechanism is Mechanism.DPBV and rng is None:
        raise ConfigError("DPBV encoding requires a random stream")
    vectors = []
    for x, fam, cfg in zip(values, families, configs):
        if mechanism is Mechanism.BV:
            vectors.append(bv_encode(x, fam, cfg))
        else:
            vectors.append(dpbv_encode(x, fam, cfg, rng))
    return EncodedRecord(tuple(vectors), mechanism, fingerprint(list(configs)), record_id)


def record_noise_rng(noise_seed: int, record_id: int) -> np.random.Generator:
    """Noise stream for one record, keyed by record id so encodings are partition-independent."""
    return derive_rng(noise_seed, NOISE_STREAM, record_id)


def _words_per_vector(s: int) -> int:
    return (s + 63) // 64


class EncodedDataset:
    """A batch of encoded records stored as one packed array.

    ``packed`` has shape (n, d, W * 8) bytes with W 64-bit words per vector; bits
    past ``s`` are zero so XOR/popcount over the padded words is exact.
    """

    def __init__(self, packed: np.ndarray, s: int, mechanism: Mechanism | str, fingerprint: str,
                 record_ids: np.ndarray | None = None):
        packed = np.ascontiguousarray(packed, dtype=np.uint8)
        if packed.ndim != 3:
            raise InputError("packed array must have shape (n, d, bytes)")
        width = _words_per_vector(s) * 8
        if packed.shape[2] < (s + 7) // 8 or packed.shape[2] > width:
            raise InputError("packed row width does not match s")
        if packed.shape[2] != width:
            packed = np.concatenate(
                [packed, np.zeros(packed.shape[:2] + (width - packed.shape[2],), np.uint8)], axis=2
            )
        self.packed = packed
        self.packed.setflags(write=False)
        self.s = int(s)
        self.mechanism = Mechanism(mechanism)
        self.fingerprint = fingerprint
        n = packed.shape[0]
        ids = np.arange(n, dtype=np.int64) if record_ids is None else np.asarray(record_ids, dtype=np.int64)
        if ids.shape != (n,):
            raise InputError("record_ids must have one entry per record")
        self.record_ids = ids

    @property
    def n(self) -> int:
        return self.packed.shape[0]

    @property
    def d(self) -> int:
        return self.packed.shape[1]

    def words(self) -> np.ndarray:
        """View as (n, d, W) uint64 words."""
        return self.packed.view(np.uint64)

    def bits(self) -> np.ndarray:
        """Unpacked (n, d, s) boolean array."""
        return np.unpackbits(self.packed, axis=2, count=self.s, bitorder="little").astype(bool)

    def record(self, i: int) -> EncodedRecord:
        nbytes = (self.s + 7) // 8
        vecs = tuple(BitVector(self.packed[i, a, :nbytes], self.s) for a in range(self.d))
        return EncodedRecord(vecs, self.mechanism, self.fingerprint, int(self.record_ids[i]))

    def records(self) -> list[EncodedRecord]:
        return [self.record(i) for i in range(self.n)]

    def attributes(self, start: int, stop: int) -> "EncodedDataset":
        return EncodedDataset(self.packed[:, start:stop], self.s, self.mechanism, self.fingerprint, self.record_ids)

    def subset(self, rows) -> "EncodedDataset":
        rows = np.asarray(rows)
        return EncodedDataset(self.packed[rows], self.s, self.mechanism, self.fingerprint, self.record_ids[rows])

    @classmethod
    def from_records(cls, records: Sequence[EncodedRecord]) -> "EncodedDataset":
        if not records:
            raise InputError("no records to assemble")
        mechs = {r.mechanism for r in records}
        prints = {r.fingerprint for r in records}
        if len(mechs) != 1:
            raise InputError("mixed mechanisms in one dataset")
        if len(prints) != 1:
            raise InputError("records were encoded under different configurations")
        s = records[0].s
        arr = np.stack([np.stack([v.bits for v in r.vectors]) for r in records])
        return cls(arr, s, records[0].mechanism, records[0].fingerprint, [r.record_id for r in records])

    @classmethod
    def concatenate(cls, parts: Sequence["EncodedDataset"]) -> "EncodedDataset":
        if not parts:
            raise InputError("nothing to concatenate")
        first = parts[0]
        for p in parts[1:]:
            if p.fingerprint != first.fingerprint:
                raise InputError("config fingerprint mismatch between parts")
            if p.mechanism != first.mechanism or p.s != first.s or p.d != first.d:
                raise InputError("parts disagree on mechanism or shape")
        return cls(np.concatenate([p.packed for p in parts]), first.s, first.mechanism, first.fingerprint,
                   np.concatenate([p.record_ids for p in parts]))

    def __eq__(self, other) -> bool:
        if not isinstance(other, EncodedDataset):
            return NotImplemented
        return (self.s == other.s and self.mechanism == other.mechanism and self.fingerprint == other.fingerprint
                and np.array_equal(self.record_ids, other.record_ids) and np.array_equal(self.packed, other.packed))

    # -- serialization -----------------------------------------------------

    MAGIC = b"DPBVENC1"

    def to_bytes(self) -> bytes:
        header = json.dumps({
            "fingerprint": self.fingerprint,
            "mechanism": self.mechanism.value,
            "s": self.s,
            "d": self.d,
            "n": self.n,
        }, sort_keys=True).encode()
        nbytes = (self.s + 7) // 8
        rows = np.ascontiguousarray(self.packed[:, :, :nbytes])
        return b"".join([
            self.MAGIC,
            struct.pack("<I", len(header)),
            header,
            self.record_ids.astype("<i8").tobytes(),
            rows.tobytes(),
        ])

    @classmethod
    def from_bytes(cls, data: bytes) -> "EncodedDataset":
        if data[:8] != cls.MAGIC:
            raise InputError("not an encoded dataset (bad magic)")
        (hlen,) = struct.unpack("<I", data[8:12])
        header = json.loads(data[12:12 + hlen])
        n, d, s = header["n"], header["d"], header["s"]
        off = 12 + hlen
        ids = np.frombuffer(data, dtype="<i8", count=n, offset=off)
        off += 8 * n
        nbytes = (s + 7) // 8
        if len(data) - off != n * d * nbytes:
            raise InputError("encoded dataset is truncated or has trailing bytes")
        rows = np.frombuffer(data, dtype=np.uint8, offset=off).reshape(n, d, nbytes)
        return cls(rows, s, header["mechanism"], header["fingerprint"], ids)

    def save(self, path) -> None:
        with open(path, "wb") as fh:
            fh.write(self.to_bytes())

    @classmethod
    def load(cls, path) -> "EncodedDataset":
        with open(path, "rb") as fh:
            return cls.from_bytes(fh.read())

    def to_jsonl(self) -> str:
        """Debug format: a header object, then one object per record with 0/1 arrays."""
        lines = [json.dumps({"fingerprint": self.fingerprint, "mechanism": self.mechanism.value,
                             "s": self.s, "d": self.d, "n": self.n})]
        bits = self.bits().astype(int)
        for i in range(self.n):
            lines.append(json.dumps({"id": int(self.record_ids[i]), "bits": bits[i].tolist()}))
        return "\n".join(lines) + "\n"

    @classmethod
    def from_jsonl(cls, text: str) -> "EncodedDataset":
        lines = [ln for ln in text.splitlines() if ln.strip()]
        header = json.loads(lines[0])
        rows = [json.loads(ln) for ln in lines[1:]]
        if len(rows) != header["n"]:
            raise InputError("record count does not match header")
        bits = np.array([r["bits"] for r in rows], dtype=bool).reshape(header["n"], header["d"], header["s"])
        return cls(np.packbits(bits, axis=2, bitorder="little"), header["s"], header["mechanism"],
                   header["fingerprint"], [r["id"] for r in rows])


def encode_dataset(
    dataset: Dataset,
    mechanism: Mechanism | str = Mechanism.DPBV,
    noise_seed: int | None = None,
    families: Sequence[HashFamily] | None = None,
    chunk: int = 256,
    noise_offset: int = 0,
    noise_width: int | None = None,
) -> EncodedDataset:
    """Encode every record of ``dataset``.

    Noise for record ``k`` comes from ``record_noise_rng(noise_seed, k)`` and is
    drawn as a (d, s) block, which matches :func:`encode_record` with that
    stream. ``noise_seed`` defaults to the shared config seed.

    A party holding attributes [a, b) of a wider record passes
    ``noise_offset=a`` and the full width, so it draws the same flips for
    those attributes as a centralized encoder would.
    """
    mechanism = Mechanism(mechanism)
    configs = dataset.schema.configs
    if families is None:
        families = derive_hash_families(configs)
    if len(families) != dataset.d:
        raise InputError("one hash family per attribute is required")
    for j, cfg in enumerate(configs):
        _check_range(dataset.values[:, j], cfg)
    s = configs[0].s
    if noise_seed is None:
        noise_seed = configs[0].seed
    thresholds = np.stack([f.thresholds for f in families])  # (d, s)
    t = np.array([c.t for c in configs])[:, None]
    q = configs[0].flip_probability
    if noise_width is None:
        noise_width = dataset.d
    if noise_offset < 0 or noise_offset + dataset.d > noise_width:
        raise InputError("attribute block lies outside the noise width")
    width = _words_per_vector(s) * 8
    packed = np.zeros((dataset.n, dataset.d, width), dtype=np.uint8)
    for start in range(0, dataset.n, chunk):
        stop = min(start + chunk, dataset.n)
        x = dataset.values[start:stop, :, None]
        bits = (x >= thresholds - t) & (x <= thresholds + t)
        if mechanism is Mechanism.DPBV:
            for row, rid in enumerate(dataset.record_ids[start:stop]):
                rng = record_noise_rng(noise_seed, int(rid))
                flips = rng.random((noise_width, s))[noise_offset:noise_offset + dataset.d] < q
                bits[row] ^= flips
        packed[start:stop, :, : (s + 7) // 8] = np.packbits(bits, axis=2, bitorder="little")
    return EncodedDataset(packed, s, mechanism, fingerprint(list(configs)), dataset.record_ids)


def insert_mediating_values(values: Sequence[float], t: float) -> tuple[np.ndarray, np.ndarray]:
    """Fill gaps of at least 2t with evenly spaced synthetic values.

    Returns the augmented sorted values and a mask that is True for inserted
    entries, so callers can drop them from clustering output.
    """
    if not t > 0:
        raise ConfigError("t must be positive")
    vals = np.asarray(values, dtype=np.float64)
    if vals.ndim != 1:
        raise InputError("values must be one-dimensional")
    if np.any(np.diff(vals) < 0):
        raise InputError("values must be sorted ascending")
    out, mask = [], []
    for i, v in enumerate(vals):
        if i > 0:
            gap = v - vals[i - 1]
            if gap >= 2 * t:
                m = int(np.floor(gap / (2 * t)))
                step = gap / (m + 1)
                for k in range(1, m + 1):
                    out.append(vals[i - 1] + k * step)
                    mask.append(True)
        out.append(v)
        mask.append(False)
    return np.array(out), np.array(mask, dtype=bool)
