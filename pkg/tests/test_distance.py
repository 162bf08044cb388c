import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from dpbv.core import BitVector, ConfigError, Dataset, EncodingConfig, InputError, Schema, derive_hash_family
from dpbv.distance import (DistanceMatrix, average_estimation_error, build_distance_matrix, bv_estimate,
                           default_tolerance, distance_consistence, dpbv_estimate, expected_hamming, hamming,
                           pairwise_hamming, zero_distance_hamming)
from dpbv.encoder import Mechanism, bv_encode, dpbv_encode, encode_dataset, encode_record
from dpbv.privacy import error_bound

# 100 e^2 / (e^2 - 1)^2, evaluated by hand: 738.9056 / 40.8200
FROZEN_OFFSET = 18.1015


def cfg(**kw):
    base = dict(lower=0.0, upper=50.0, t=25.0, s=1000, epsilon=2.0, seed=0)
    base.update(kw)
    return EncodingConfig(**base)


class TestHamming:
    def test_examples(self):
        assert hamming(BitVector.from_string("1011"), BitVector.from_string("1101")) == 2
        v = BitVector.from_bools(np.random.default_rng(0).random(333) < 0.5)
        assert hamming(v, v) == 0
        assert hamming(v, v.complement()) == 333

    def test_length_mismatch(self):
        with pytest.raises(InputError):
            hamming(BitVector.from_string("10"), BitVector.from_string("101"))


class TestEstimators:
    def test_bv_examples(self):
        c = EncodingConfig(0.0, 16.0, 2.0, 1000, 1.0)
        assert c.mu == 20.0
        assert bv_estimate(240, c) == pytest.approx(2.4)
        assert bv_estimate(0, c) == 0.0

    def test_bv_saturates_out_of_view(self):
        c = EncodingConfig(0.0, 20.0, 1.2, 20000, 1.0, seed=5)
        fam = derive_hash_family(c)
        est = bv_estimate(hamming(bv_encode(5.0, fam, c), bv_encode(9.0, fam, c)), c)
        assert abs(est - 2 * c.t) < 0.3
        assert est < 3.0

    def test_dpbv_zero_point(self):
        c = cfg()
        assert dpbv_estimate(zero_distance_hamming(c), c, raw=True) == pytest.approx(0.0, abs=1e-9)
        e = math.exp(2.0)
        assert zero_distance_hamming(c) == pytest.approx(2 * 1000 * e / (e + 1) ** 2)

    def test_dpbv_offset(self):
        c = cfg()
        assert dpbv_estimate(0, c, raw=True) == pytest.approx(-FROZEN_OFFSET, abs=1e-3)
        assert dpbv_estimate(0, c) == 0.0
        assert dpbv_estimate(c.s, c) == 2 * c.t

    @pytest.mark.parametrize("eps,s,mu", [(0.5, 200, 30.0), (1.0, 1000, 100.0), (2.0, 1000, 100.0),
                                          (4.0, 5000, 13.0)])
    def test_identity_on_grid(self, eps, s, mu):
        t = mu / 4
        c = EncodingConfig(0.0, mu - 2 * t, t, s, eps)
        grid = np.linspace(0, 2 * t, 100)
        back = dpbv_estimate(expected_hamming(grid, c), c)
        assert np.max(np.abs(back - grid)) < 1e-9
        back_bv = bv_estimate(expected_hamming(grid, c, Mechanism.BV), c)
        assert np.max(np.abs(back_bv - grid)) < 1e-9

    def test_unbiased_and_concentrated(self):
        c = cfg()
        rng = np.random.default_rng(3)
        trials = 3000
        bound = error_bound(c, 0.05)
        for d in (0.0, 10.0, 30.0):
            fam_seeds = rng.integers(0, 2**32, trials)
            est = np.empty(trials)
            for k in range(trials):
                fam = derive_hash_family(c.replace(seed=int(fam_seeds[k])), 0)
                x = rng.uniform(0, 50 - d)
                h = hamming(dpbv_encode(x, fam, c, rng), dpbv_encode(x + d, fam, c, rng))
                est[k] = dpbv_estimate(h, c, raw=True)
            assert abs(est.mean() - d) < 3 * est.std(ddof=1) / math.sqrt(trials)
            assert np.mean(np.abs(est - d) <= bound) >= 0.95


class TestMatrix:
    def _data(self, values, d=1, s=400, eps=2.0, seed=0):
        schema = Schema.uniform(d, 0, 50, 25, s, eps, seed)
        return Dataset(np.asarray(values, dtype=float).reshape(-1, d), schema)

    def test_single_record(self):
        ds = self._data([3.0])
        m = build_distance_matrix(encode_dataset(ds, "dpbv"), ds.schema.configs[0])
        assert m.values.shape == (1, 1) and m.values[0, 0] == 0.0

    def test_identical_records_bv(self):
        ds = self._data([[7.0, 8.0]] * 4, d=2)
        m = build_distance_matrix(encode_dataset(ds, "bv"), list(ds.schema.configs))
        assert np.all(m.values == 0.0)

    def test_scalar_reduction(self):
        ds = self._data(np.random.default_rng(0).uniform(0, 50, 12))
        c = ds.schema.configs[0]
        enc = encode_dataset(ds, "dpbv")
        m = build_distance_matrix(enc, c)
        recs = enc.records()
        for i in range(12):
            for j in range(12):
                if i != j:
                    h = hamming(recs[i].vectors[0], recs[j].vectors[0])
                    assert m.values[i, j] == pytest.approx(dpbv_estimate(h, c))
                    assert m.raw[i, j] == pytest.approx(dpbv_estimate(h, c, raw=True))

    def test_symmetric_zero_diagonal_nonnegative(self):
        ds = self._data(np.random.default_rng(1).uniform(0, 50, (30, 3)), d=3)
        m = build_distance_matrix(encode_dataset(ds, "dpbv"), list(ds.schema.configs), block=7)
        assert np.array_equal(m.values, m.values.T)
        assert np.all(np.diag(m.values) == 0)
        assert np.all(m.values >= 0) and np.all(np.isfinite(m.values))

    def test_block_size_does_not_change_result(self):
        ds = self._data(np.random.default_rng(2).uniform(0, 50, (25, 2)), d=2)
        enc = encode_dataset(ds, "dpbv")
        a = build_distance_matrix(enc, list(ds.schema.configs), block=1)
        b = build_distance_matrix(enc, list(ds.schema.configs), block=25)
        assert np.array_equal(a.values, b.values)

    def test_pairwise_hamming_matches_scalar(self):
        ds = self._data(np.random.default_rng(4).uniform(0, 50, (6, 2)), d=2, s=130)
        enc = encode_dataset(ds, "dpbv")
        hd = pairwise_hamming(enc)
        recs = enc.records()
        for i in range(6):
            for j in range(6):
                for a in range(2):
                    assert hd[i, j, a] == hamming(recs[i].vectors[a], recs[j].vectors[a])

    def test_serialization(self, tmp_path):
        m = DistanceMatrix.from_values(np.array([[0, 1.5], [1.5, 0]]))
        m.save(tmp_path / "m.bin")
        assert np.array_equal(DistanceMatrix.load(tmp_path / "m.bin").values, m.values)
        m.to_csv(tmp_path / "m.csv")
        assert np.array_equal(DistanceMatrix.from_csv(tmp_path / "m.csv").values, m.values)

    def test_schema_length_mismatch(self):
        ds = self._data([1.0, 2.0])
        with pytest.raises(InputError):
            build_distance_matrix(encode_dataset(ds, "dpbv"), ds.schema.configs[0].replace(s=10))


class TestConsistence:
    def test_collinear_in_view_unchanged(self):
        c = EncodingConfig(0.0, 20.0, 5.0, 2000, 1.0, seed=1)
        fam = derive_hash_family(c)
        xs = [4.0, 6.0, 9.0]
        vecs = [bv_encode(x, fam, c) for x in xs]
        D = np.array([[bv_estimate(hamming(a, b), c) for b in vecs] for a in vecs])
        out = distance_consistence(D, default_tolerance(c, Mechanism.BV))
        assert np.array_equal(out.values, D)
        assert np.all(out.revision == 0)

    def test_chain_repair(self):
        D = np.array([[0.0, 2.0, 2.16], [2.0, 0.0, 2.0], [2.16, 2.0, 0.0]])
        out = distance_consistence(D, 1e-6, known_local_radius=2.4)
        assert out.values[0, 2] == pytest.approx(4.0)
        assert out.revision[0, 2] == 1
        assert out.values[0, 1] == 2.0

    def test_negative_tolerance(self):
        with pytest.raises(ConfigError):
            distance_consistence(np.zeros((3, 3)), -1.0)

    def test_rejects_asymmetric(self):
        with pytest.raises(InputError):
            distance_consistence(np.array([[0, 1, 2], [1, 0, 1], [3, 1, 0.0]]))

    def test_tiny_matrices_pass_through(self):
        D = np.array([[0, 3.0], [3.0, 0]])
        assert np.array_equal(distance_consistence(D).values, D)

    def test_unreached_keep_original(self):
        # two far clusters with no chain between them
        D = np.array([[0, 1, 9, 9], [1, 0, 9, 9], [9, 9, 0, 1], [9, 9, 1, 0.0]])
        out = distance_consistence(D, 1e-9, known_local_radius=1.0)
        assert out.values[0, 2] == 9.0

    def test_properties_on_bv_line(self):
        rng = np.random.default_rng(8)
        c = EncodingConfig(0.0, 25.0, 3.0, 1000, 1.0, seed=2)
        ds = Dataset(rng.uniform(0, 25, (60, 1)), Schema(("x",), (c,)))
        est = build_distance_matrix(encode_dataset(ds, "bv"), c)
        out = distance_consistence(est, default_tolerance(c, Mechanism.BV))
        assert np.allclose(out.values, out.values.T)
        assert np.all(np.diag(out.values) == 0)
        kept = out.revision == 0
        assert np.array_equal(out.values[kept], est.values[kept])
        truth = np.abs(ds.values - ds.values.T)
        assert average_estimation_error(truth, out) < average_estimation_error(truth, est)

    def test_default_tolerance(self):
        c = cfg()
        assert default_tolerance(c, "bv") == pytest.approx(1e-7)
        assert default_tolerance(c, "dpbv") == pytest.approx(error_bound(c, 0.05))


class TestTheoremOne:
    @given(st.integers(0, 2**32 - 1), st.floats(0, 1), st.floats(0, 1), st.floats(0, 1))
    @settings(max_examples=300, deadline=None)
    def test_additivity_exact(self, seed, u, v, w):
        c = EncodingConfig(0.0, 30.0, 4.0, 257, 1.0, seed=seed)
        fam = derive_hash_family(c)
        x = u * 30.0
        z = min(30.0, x + w * 2 * c.t)
        y = x + v * (z - x)
        bx, by, bz = (bv_encode(p, fam, c) for p in (x, y, z))
        # integer identity behind the estimator additivity
        assert hamming(bx, bz) == hamming(bx, by) + hamming(by, bz)
        assert bv_estimate(hamming(bx, bz), c) == pytest.approx(
            bv_estimate(hamming(bx, by), c) + bv_estimate(hamming(by, bz), c), abs=1e-12)


class TestAverageError:
    def test_examples(self):
        t = np.arange(9.0).reshape(3, 3)
        assert average_estimation_error(t, t) == 0.0
        assert average_estimation_error(t, t + 1) == 1.0

    def test_shape_mismatch(self):
        with pytest.raises(InputError):
            average_estimation_error(np.zeros((2, 2)), np.zeros((3, 3)))
