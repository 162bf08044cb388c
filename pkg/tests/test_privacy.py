import itertools
import math

import mpmath
import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from dpbv.core import BitVector, ConfigError, EncodingConfig, HashFamily, InputError, derive_hash_family
from dpbv.encoder import Mechanism, bv_encode
from dpbv.privacy import (PrivacyParams, composition_gap, delta_of, delta_value, error_bound, expected_popcount,
                          format_delta, log_likelihoods, normalized_posterior, output_distribution,
                          posterior_over_inputs, s_of, sample_output_distribution)

# high-precision reference values, computed once with mpmath at 60 digits
FROZEN_DELTA = {(2.0, 1000): 7.513906e-56, (1.0, 1000): 8.957309e-137}


def mp_delta(eps, s):
    mpmath.mp.dps = 60
    e = mpmath.e ** eps
    return (e / (e + 1)) ** s - e * (1 / (e + 1)) ** s


def cfg(**kw):
    base = dict(lower=0.0, upper=50.0, t=25.0, s=1000, epsilon=2.0, seed=0)
    base.update(kw)
    return EncodingConfig(**base)


class TestDelta:
    @pytest.mark.parametrize("key", list(FROZEN_DELTA))
    def test_frozen_values(self, key):
        eps, s = key
        got = math.exp(delta_of(eps, s))
        assert got == pytest.approx(FROZEN_DELTA[key], rel=1e-6)
        assert got == pytest.approx(float(mp_delta(eps, s)), rel=1e-9)

    def test_printed_figures(self):
        assert format_delta(delta_of(2.0, 1000)) == "7.5e-56"
        # one significant figure: 8.96e-137 and 8.9e-137 both round to 9e-137
        assert f"{delta_value(1.0, 1000):.0e}" == f"{8.9e-137:.0e}"

    @pytest.mark.parametrize("eps", [0.5, 1.0, 2.0, 4.0])
    def test_single_bit_is_pure(self, eps):
        assert delta_value(eps, 1) == 0.0
        assert delta_of(eps, 1) == -math.inf

    @given(st.floats(0.05, 6.0), st.integers(2, 50))
    @settings(max_examples=80)
    def test_matches_naive_arithmetic(self, eps, s):
        e = math.exp(eps)
        naive = (e / (e + 1)) ** s - e * (1 / (e + 1)) ** s
        assert math.exp(delta_of(eps, s)) == pytest.approx(naive, rel=1e-9, abs=1e-300)

    def test_huge_s_stays_finite_in_log_space(self):
        ld = delta_of(1.0, 10**7)
        assert math.isfinite(ld) and ld < -1e6

    def test_rejects_bad_input(self):
        with pytest.raises(ConfigError):
            delta_of(0.0, 10)
        with pytest.raises(ConfigError):
            delta_of(1.0, 0)


class TestLength:
    def test_paper_pair(self):
        s = s_of(2.0, 7.5e-56)
        assert abs(s - 1000) <= 2
        assert delta_of(2.0, s) <= math.log(7.5e-56)
        assert delta_of(2.0, s - 1) > math.log(7.5e-56)

    @pytest.mark.parametrize("eps", [0.5, 1.0, 2.0, 4.0])
    @pytest.mark.parametrize("delta", [1e-3, 1e-20, 1e-60, 1e-150])
    def test_round_trip(self, eps, delta):
        s = s_of(eps, delta)
        assert delta_of(eps, s) <= math.log(delta)

    def test_monotone_in_delta(self):
        deltas = [10.0 ** -k for k in range(1, 200, 7)]
        lengths = [s_of(1.0, d) for d in deltas]
        assert lengths == sorted(lengths)

    def test_monotone_in_epsilon(self):
        lengths = [s_of(e, 1e-50) for e in (0.5, 1.0, 2.0, 4.0, 8.0)]
        assert all(a < b for a, b in zip(lengths, lengths[1:]))

    def test_log_delta_input(self):
        assert s_of(1.0, log_delta=math.log(1e-30)) == s_of(1.0, 1e-30)
        with pytest.raises(ConfigError):
            s_of(1.0, 1.5)

    def test_params(self):
        p = PrivacyParams.for_target(2.0, 1e-40)
        assert p.delta <= 1e-40
        assert PrivacyParams.for_length(2.0, 1000).log_delta == delta_of(2.0, 1000)


class TestAccuracy:
    def test_expected_popcount(self):
        assert expected_popcount(cfg()) == pytest.approx(500.0)
        assert expected_popcount(cfg(t=5.0), Mechanism.BV) == pytest.approx(1000 * 10 / 60)

    def test_error_bound_value(self):
        assert error_bound(cfg(), 0.05) == pytest.approx(3.7022, abs=5e-4)

    def test_error_bound_scaling(self):
        assert error_bound(cfg(s=4000), 0.05) == pytest.approx(error_bound(cfg(s=1000), 0.05) / 2)

    @pytest.mark.parametrize("beta", [0.0, 1.0, 2.0])
    def test_error_bound_rejects_beta(self, beta):
        with pytest.raises(ConfigError):
            error_bound(cfg(), beta)


class TestDistributions:
    def test_normalized(self):
        c = cfg(s=10, epsilon=1.0)
        probs = output_distribution(24.3, derive_hash_family(c), c)
        assert probs.sum() == pytest.approx(1.0, abs=1e-12)

    def test_mode_is_plain_encoding(self):
        c = cfg(s=10, epsilon=1.0)
        fam = derive_hash_family(c)
        probs = output_distribution(24.3, fam, c)
        plain = bv_encode(24.3, fam, c).to_bools()
        k = int(np.argmax(probs))
        assert [(k >> i) & 1 for i in range(10)] == plain.astype(int).tolist()
        assert probs[k] == pytest.approx(c.keep_probability ** 10)

    def test_ratio_bound_for_demo_inputs(self):
        c = cfg(s=10, epsilon=1.0)
        fam = derive_hash_family(c)
        a = output_distribution(24.3, fam, c)
        b = output_distribution(26.2, fam, c)
        d_h = int((bv_encode(24.3, fam, c).to_bools() != bv_encode(26.2, fam, c).to_bools()).sum())
        assert np.max(a / b) <= math.exp(c.epsilon * d_h) * (1 + 1e-9)

    def test_enumeration_cap(self):
        c = cfg(s=21)
        with pytest.raises(InputError):
            output_distribution(1.0, derive_hash_family(c), c)

    def test_sampled_is_flagged(self):
        c = cfg(s=40)
        res = sample_output_distribution(3.0, derive_hash_family(c), c, 200, np.random.default_rng(0))
        assert res.approximate
        assert res.frequencies.sum() == pytest.approx(1.0)


class TestPosterior:
    def test_bv_likelihood_is_an_interval(self):
        c = cfg(s=30, t=5.0)
        fam = derive_hash_family(c)
        obs = bv_encode(20.0, fam, c)
        grid = np.linspace(0, 50, 2001)
        ll = log_likelihoods(obs, fam, c, grid, Mechanism.BV)
        hits = np.flatnonzero(ll == 0.0)
        assert len(hits) > 1
        assert np.all(np.diff(hits) == 1)
        assert grid[hits[0]] <= 20.0 <= grid[hits[-1]]

    def test_point_likelihood_vanishes(self):
        c = cfg(s=1000, epsilon=1.0)
        fam = derive_hash_family(c)
        obs = bv_encode(20.0, fam, c)
        post = posterior_over_inputs(obs, fam, c, [10.0, 20.0, 30.0])
        assert max(post.values()) <= 1000 * math.log(c.keep_probability) + 1e-9

    def test_likelihood_ratio_bound(self):
        c = cfg(s=50, epsilon=1.0)
        fam = derive_hash_family(c)
        obs = BitVector.from_bools(np.random.default_rng(0).random(50) < 0.5)
        ll = log_likelihoods(obs, fam, c, np.linspace(0, 50, 101))
        assert ll.max() - ll.min() <= c.epsilon * c.s + 1e-9
        assert normalized_posterior(ll).sum() == pytest.approx(1.0)


class TestComposition:
    @pytest.mark.parametrize("s", [1, 2, 5, 8, 12])
    @pytest.mark.parametrize("eps", [0.5, 1.0, 2.0])
    def test_exhaustive_gap_equals_delta(self, eps, s):
        assert composition_gap(eps, s) == pytest.approx(delta_value(eps, s), abs=1e-12)

    def test_gap_against_literal_loop(self):
        # independent brute force over explicit tuples for a tiny case
        eps, s = 1.3, 4
        p, q = 1 / (1 + math.exp(-eps)), 1 / (1 + math.exp(eps))
        vecs = list(itertools.product([0, 1], repeat=s))

        def prob(o, b):
            return math.prod(p if x == y else q for x, y in zip(o, b))

        best = max(prob(o, a) - math.exp(eps) * prob(o, b) for o in vecs for a in vecs for b in vecs)
        assert composition_gap(eps, s) == pytest.approx(best, abs=1e-14)
