"""Closed-form privacy accounting and exact output-distribution analysis."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .core import BitVector, ConfigError, EncodingConfig, HashFamily, InputError
from .encoder import Mechanism, window_bits

MAX_ENUMERATION_BITS = 20


def _log_keep(epsilon: float) -> float:
    # log(e^eps / (e^eps + 1)) = -log1p(e^-eps)
    return -math.log1p(math.exp(-epsilon))


def _log_flip(epsilon: float) -> float:
    return _log_keep(epsilon) - epsilon


def delta_of(epsilon: float, s: int) -> float:
    """Natural log of delta for an s-bit randomized-response vector.

    delta = p^s - e^eps q^s with p = e^eps/(e^eps+1), q = 1/(e^eps+1). Since
    q/p = e^-eps this factors as p^s (1 - e^{eps(1-s)}), which stays finite in
    log space for any s. Returns ``-inf`` when delta is exactly zero (s = 1).
    """
    if not epsilon > 0:
        raise ConfigError("epsilon must be positive")
    if int(s) != s or s < 1:
        raise ConfigError("s must be a positive integer")
    s = int(s)
    tail = -math.expm1(epsilon * (1 - s))  # 1 - e^{eps(1-s)}
    if tail <= 0.0:
        return -math.inf
    return s * _log_keep(epsilon) + math.log(tail)


def delta_value(epsilon: float, s: int) -> float:
    """delta itself; underflows to 0.0 for very long vectors."""
    return math.exp(delta_of(epsilon, s))


def log10_delta(epsilon: float, s: int) -> float:
    return delta_of(epsilon, s) / math.log(10)


def format_delta(log_delta: float) -> str:
    """Scientific notation from a natural-log value, e.g. ``7.5e-56``."""
    if log_delta == -math.inf:
        return "0"
    l10 = log_delta / math.log(10)
    exponent = math.floor(l10)
    mantissa = 10 ** (l10 - exponent)
    if mantissa >= 9.95:
        mantissa, exponent = mantissa / 10, exponent + 1
    return f"{mantissa:.1f}e{exponent}"


def s_of(epsilon: float, delta: float | None = None, *, log_delta: float | None = None) -> int:
    """Smallest integer s from ``ceil(ln delta / (eps - ln(e^eps + 1)))``.

    The result is checked against :func:`delta_of` and bumped if floating
    point rounding left the achieved delta above the request.
    """
    if not epsilon > 0:
        raise ConfigError("epsilon must be positive")
    if log_delta is None:
        if delta is None or not 0 < delta < 1:
            raise ConfigError("delta must lie in (0, 1)")
        log_delta = math.log(delta)
    elif not log_delta < 0:
        raise ConfigError("log_delta must be negative")
    s = max(1, math.ceil(log_delta / _log_keep(epsilon)))
    while delta_of(epsilon, s) > log_delta:
        s += 1
    return s


@dataclass(frozen=True)
class PrivacyParams:
    """Privacy summary for one (epsilon, s) pair; delta kept as its natural log."""

    epsilon: float
    s: int
    log_delta: float
    beta: float = 0.05

    @property
    def delta(self) -> float:
        return math.exp(self.log_delta)

    @classmethod
    def for_length(cls, epsilon: float, s: int, beta: float = 0.05) -> "PrivacyParams":
        return cls(epsilon, s, delta_of(epsilon, s), beta)

    @classmethod
    def for_target(cls, epsilon: float, delta: float, beta: float = 0.05) -> "PrivacyParams":
        s = s_of(epsilon, delta)
        return cls(epsilon, s, delta_of(epsilon, s), beta)


def expected_popcount(config: EncodingConfig, mechanism: Mechanism | str = Mechanism.DPBV) -> float:
    """Expected number of set bits; contains no dependence on the encoded value."""
    frac = 2.0 * config.t / config.mu
    if Mechanism(mechanism) is Mechanism.BV:
        return config.s * frac
    e = math.exp(-config.epsilon)
    # (e^eps - 1)/(e^eps + 1) and 1/(e^eps + 1), written to avoid overflow
    contrast = (1.0 - e) / (1.0 + e)
    return config.s * (frac * contrast + config.flip_probability)


def error_bound(config: EncodingConfig, beta: float) -> float:
    """Half-width that bounds |estimate - truth| with probability at least 1 - beta."""
    if not 0 < beta < 1:
        raise ConfigError("beta must lie in (0, 1)")
    e = math.exp(-config.epsilon)
    inv_contrast_sq = ((1.0 + e) / (1.0 - e)) ** 2
    return config.mu / 2.0 * inv_contrast_sq * math.sqrt(math.log(2.0 / beta) / (2.0 * config.s))


def _all_outputs(s: int) -> np.ndarray:
    """(2^s, s) boolean matrix; row k holds the bits of integer k, bit i = (k >> i) & 1."""
    k = np.arange(1 << s, dtype=np.uint32)
    return ((k[:, None] >> np.arange(s, dtype=np.uint32)) & 1).astype(bool)


def output_distribution(x: float, family: HashFamily, config: EncodingConfig) -> np.ndarray:
    """Exact probability of each of the 2^s randomized outputs for input ``x``.

    Entry k is Pr[output == bits of k], with bit i of the output equal to
    ``(k >> i) & 1``.
    """
    s = len(family)
    if s > MAX_ENUMERATION_BITS:
        raise InputError(f"exact enumeration is limited to s <= {MAX_ENUMERATION_BITS}; use sample_output_distribution")
    if not config.lower <= x <= config.upper:
        raise InputError("x outside the configured range")
    plain = window_bits(float(x), family.thresholds, config.t)
    agree = (_all_outputs(s) == plain).sum(axis=1)
    lk, lf = _log_keep(config.epsilon), _log_flip(config.epsilon)
    return np.exp(agree * lk + (s - agree) * lf)


@dataclass
class SampledDistribution:
    """Monte Carlo view of the output distribution when 2^s is too large to enumerate."""

    outputs: list[BitVector]
    frequencies: np.ndarray
    probabilities: np.ndarray
    approximate: bool = True


def sample_output_distribution(x: float, family: HashFamily, config: EncodingConfig, n_samples: int,
                               rng: np.random.Generator) -> SampledDistribution:
    plain = window_bits(float(x), family.thresholds, config.t)
    flips = rng.random((n_samples, len(family))) < config.flip_probability
    outs = plain ^ flips
    uniq, counts = np.unique(np.packbits(outs, axis=1, bitorder="little"), axis=0, return_counts=True)
    vectors = [BitVector(u, len(family)) for u in uniq]
    agree = np.array([(v.to_bools() == plain).sum() for v in vectors])
    s = len(family)
    probs = np.exp(agree * _log_keep(config.epsilon) + (s - agree) * _log_flip(config.epsilon))
    return SampledDistribution(vectors, counts / n_samples, probs)


def log_likelihoods(observed: BitVector, family: HashFamily, config: EncodingConfig, grid: Sequence[float],
                    mechanism: Mechanism | str = Mechanism.DPBV) -> np.ndarray:
    """log Pr[observed | x] for each candidate x in ``grid``.

    For the plain mechanism the likelihood is 1 on inputs whose encoding equals
    ``observed`` and 0 elsewhere (log value ``-inf``).
    """
    grid = np.asarray(grid, dtype=np.float64)
    if np.any(grid < config.lower) or np.any(grid > config.upper):
        raise InputError("grid must lie within the configured range")
    if observed.s != len(family):
        raise InputError("observed vector length differs from family size")
    plain = window_bits(grid, family.thresholds, config.t)  # (m, s)
    disagree = (plain != observed.to_bools()).sum(axis=1)
    if Mechanism(mechanism) is Mechanism.BV:
        return np.where(disagree == 0, 0.0, -np.inf)
    s = observed.s
    return (s - disagree) * _log_keep(config.epsilon) + disagree * _log_flip(config.epsilon)


def posterior_over_inputs(observed: BitVector, family: HashFamily, config: EncodingConfig,
                          grid: Sequence[float], mechanism: Mechanism | str = Mechanism.DPBV) -> dict[float, float]:
    """Map each candidate input to its log-likelihood of producing ``observed``."""
    ll = log_likelihoods(observed, family, config, grid, mechanism)
    return {float(x): float(v) for x, v in zip(np.asarray(grid, dtype=float), ll)}


def normalized_posterior(log_lik: np.ndarray) -> np.ndarray:
    """Posterior under a uniform prior over the grid, via log-sum-exp."""
    top = np.max(log_lik)
    if top == -np.inf:
        raise InputError("no candidate explains the observation")
    w = np.exp(log_lik - top)
    return w / w.sum()


def composition_gap(epsilon: float, s: int, chunk: int = 512) -> float:
    """max over (o, B_a, B_b) of Pr[o | B_a] - e^eps Pr[o | B_b], by exhaustive enumeration.

    Every plain vector B in {0,1}^s is considered, not just those a particular
    hash family can produce. Cost is O(4^s); intended for s <= 12.
    """
    if s > 14:
        raise InputError("exhaustive enumeration is limited to s <= 14")
    lk, lf = _log_keep(epsilon), _log_flip(epsilon)
    codes = np.arange(1 << s, dtype=np.uint32)
    weight = math.exp(epsilon)
    best = -math.inf
    for start in range(0, len(codes), chunk):
        o = codes[start:start + chunk]
        dist = np.bitwise_count(o[:, None] ^ codes[None, :]).astype(np.int64)
        probs = np.exp((s - dist) * lk + dist * lf)
        gap = probs.max(axis=1) - weight * probs.min(axis=1)
        best = max(best, float(gap.max()))
    return best


def per_bit_probabilities(epsilon: float) -> tuple[float, float]:
    """(keep, flip) probabilities of one randomized bit."""
    return math.exp(_log_keep(epsilon)), math.exp(_log_flip(epsilon))
