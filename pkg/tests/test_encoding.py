import numpy as np
import numpy.testing as npt
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mrdl import encoding as enc

from oracles import central_diff, rel_err, scalar_encode

# Frozen from oracles.scalar_encode on D=1, X=[0, 2], C=[0, 1], s=[1, 1].
HAND_ASSIGNMENTS = np.array(
    [
        [0.7310585786300049, 0.2689414213699951],
        [0.04742587317756678, 0.9525741268224334],
    ]
)
HAND_RAW = np.array([[0.09485174635513356], [0.6836327054524666]])


def small_instance(seed, n=5, k=3, d=4):
    rng = np.random.default_rng(seed)
    X = rng.normal(size=(n, d))
    book = enc.Codebook(rng.normal(size=(k, d)), rng.uniform(0.2, 1.5, size=k))
    return X, book, rng


class TestSoftAssign:
    def test_single_codeword_assigns_everything(self):
        X = np.random.default_rng(0).normal(size=(6, 3))
        book = enc.Codebook(np.zeros((1, 3)), np.array([0.7]))
        a, _ = enc.soft_assign(X, book)
        npt.assert_allclose(a, 1.0, atol=1e-15)

    def test_equidistant_symmetry(self):
        book = enc.Codebook(np.array([[1.0, 0.0], [-1.0, 0.0]]), np.array([0.8, 0.8]))
        a, _ = enc.soft_assign(np.array([[0.0, 2.0]]), book)
        npt.assert_allclose(a, [[0.5, 0.5]], atol=1e-15)

    def test_hand_evaluated_scalar_case(self):
        X = np.array([[0.0], [2.0]])
        book = enc.Codebook(np.array([[0.0], [1.0]]), np.array([1.0, 1.0]))
        a, _ = enc.soft_assign(X, book)
        npt.assert_allclose(a, HAND_ASSIGNMENTS, atol=1e-12)
        oracle_a, _, _ = scalar_encode(X, book.codewords, book.smoothing)
        npt.assert_allclose(a, oracle_a, atol=1e-12)

    def test_huge_scaled_distances_stay_finite(self):
        X = np.array([[100.0, 0.0], [0.0, 100.0]])
        book = enc.Codebook(np.array([[-100.0, 0.0], [0.0, -100.0]]), np.array([1.0, 2.0]))
        a, cache = enc.soft_assign(X, book)  # s * ||r||^2 of order 1e5
        assert np.all(np.isfinite(a))
        npt.assert_allclose(a.sum(axis=1), 1.0, atol=1e-12)
        npt.assert_allclose(cache.shifts[0], (book.smoothing * cache.sq_norms[0]).min(axis=1))

    def test_rows_sum_to_one_on_random_inputs(self):
        for seed in range(5):
            X, book, _ = small_instance(seed)
            a, _ = enc.soft_assign(X, book)
            npt.assert_allclose(a.sum(axis=1), 1.0, atol=1e-12)
            assert np.all(a >= 0) and np.all(a <= 1)

    def test_shifted_matches_unshifted_on_benign_inputs(self):
        for seed in range(5):
            X, book, _ = small_instance(seed)
            a, _ = enc.soft_assign(X, book)
            oracle_a, _, _ = scalar_encode(X, book.codewords, book.smoothing)
            npt.assert_allclose(a, oracle_a, atol=1e-10)

    def test_dim_mismatch_rejected(self):
        book = enc.Codebook(np.zeros((2, 3)), np.ones(2))
        with pytest.raises(ValueError, match="dim"):
            enc.soft_assign(np.zeros((4, 2)), book)

    def test_non_finite_descriptor_rejected(self):
        book = enc.Codebook(np.zeros((2, 2)), np.ones(2))
        bad = np.array([[0.0, np.nan]])
        with pytest.raises(ValueError, match="non-finite"):
            enc.soft_assign(bad, book)

    def test_hard_assign_limit(self):
        # With one shared, very large smoothing factor the soft weights
        # collapse onto the nearest codeword (indicator oracle).
        rng = np.random.default_rng(31)
        X = rng.normal(size=(10, 3))
        C = rng.normal(size=(4, 3))
        book = enc.Codebook(C, np.full(4, 1e4))
        a, _ = enc.soft_assign(X, book)
        dists = ((X[:, None, :] - C[None, :, :]) ** 2).sum(axis=2)
        hard = np.zeros_like(a)
        hard[np.arange(10), dists.argmin(axis=1)] = 1.0
        npt.assert_allclose(a, hard, atol=1e-8)


class TestAggregate:
    def test_descriptors_on_codeword_with_sharp_assignment(self):
        book = enc.Codebook(np.array([[1.0, 2.0], [5.0, 5.0]]), np.array([50.0, 50.0]))
        X = np.tile(book.codewords[0], (7, 1))
        a, cache = enc.soft_assign(X, book)
        raw = enc.aggregate(X, book, a, cache)
        npt.assert_allclose(raw[0], 0.0, atol=1e-12)

    def test_single_codeword_sums_residuals(self):
        rng = np.random.default_rng(2)
        X = rng.normal(size=(5, 3))
        book = enc.Codebook(rng.normal(size=(1, 3)), np.array([0.4]))
        a, cache = enc.soft_assign(X, book)
        raw = enc.aggregate(X, book, a, cache)
        npt.assert_allclose(raw[0], (X - book.codewords[0]).sum(axis=0), atol=1e-12)

    def test_hand_evaluated_scalar_case(self):
        X = np.array([[0.0], [2.0]])
        book = enc.Codebook(np.array([[0.0], [1.0]]), np.array([1.0, 1.0]))
        a, cache = enc.soft_assign(X, book)
        raw = enc.aggregate(X, book, a, cache)
        npt.assert_allclose(raw, HAND_RAW, atol=1e-12)
        _, oracle_raw, _ = scalar_encode(X, book.codewords, book.smoothing)
        npt.assert_allclose(raw, oracle_raw, atol=1e-12)


class TestNormalize:
    def test_three_four_block(self):
        out = enc.normalize(np.array([[3.0, 4.0]]))
        npt.assert_allclose(out, [0.6, 0.8], atol=1e-15)

    def test_zero_block_stays_zero(self):
        out = enc.normalize(np.array([[0.0, 0.0], [3.0, 4.0]]))
        npt.assert_array_equal(out[:2], 0.0)
        npt.assert_allclose(out[2:], [0.6, 0.8])

    def test_random_blocks_unit_norm(self):
        rng = np.random.default_rng(3)
        raw = rng.normal(size=(4, 5))
        out = enc.normalize(raw).reshape(4, 5)
        npt.assert_allclose(np.linalg.norm(out, axis=1), 1.0, atol=1e-12)


class TestEncodeForward:
    def test_permutation_invariance(self):
        for seed in range(10):
            X, book, rng = small_instance(seed, n=8)
            e0, _ = enc.encode_forward(X, book)
            e1, _ = enc.encode_forward(X[rng.permutation(8)], book)
            npt.assert_allclose(e0, e1, atol=1e-12)

    @pytest.mark.parametrize("n", [1, 7, 64])
    def test_fixed_length_output(self, n):
        rng = np.random.default_rng(n)
        book = enc.Codebook(rng.normal(size=(3, 4)), rng.uniform(0.1, 1.0, 3))
        e, _ = enc.encode_forward(rng.normal(size=(n, 4)), book)
        assert e.shape == (12,)

    def test_composition_matches_step_oracle(self):
        for seed in range(5):
            X, book, _ = small_instance(seed)
            e, _ = enc.encode_forward(X, book)
            _, _, oracle = scalar_encode(X, book.codewords, book.smoothing)
            npt.assert_allclose(e, oracle, atol=1e-10)

    def test_batch_matches_single(self):
        rng = np.random.default_rng(41)
        book = enc.Codebook(rng.normal(size=(3, 4)), rng.uniform(0.2, 1.0, 3))
        X = rng.normal(size=(6, 5, 4))
        batched, _ = enc.batch_encode_forward(X, book)
        for i in range(6):
            single, _ = enc.encode_forward(X[i], book)
            npt.assert_allclose(batched[i], single, atol=1e-14)

    def test_argmax_invariant_under_uniform_smoothing_scale(self):
        X, book, _ = small_instance(51, n=12, k=4)
        a0, _ = enc.soft_assign(X, book)
        for lam in (0.5, 2.0, 7.3):
            scaled = enc.Codebook(book.codewords, lam * book.smoothing)
            a1, _ = enc.soft_assign(X, scaled)
            assert not np.allclose(a0, a1)  # weights move...
            npt.assert_array_equal(a0.argmax(axis=1), a1.argmax(axis=1))  # ...argmax does not


class TestEncodeBackward:
    def test_zero_upstream_gives_zero_grads(self):
        X, book, _ = small_instance(4)
        e, cache = enc.encode_forward(X, book)
        gx, gc, gs = enc.encode_backward(np.zeros_like(e), X, book, cache)
        npt.assert_array_equal(gx, 0.0)
        npt.assert_array_equal(gc, 0.0)
        npt.assert_array_equal(gs, 0.0)

    def test_single_codeword_closed_form(self):
        # K=1: assignments are constant 1, so the raw aggregate is
        # sum_i (x_i - c) and d(raw)/dc = -N * I, d(raw)/dx_i = I.
        rng = np.random.default_rng(5)
        n, d = 6, 3
        X = rng.normal(size=(n, d))
        book = enc.Codebook(rng.normal(size=(1, d)), np.array([0.9]))
        _, cache = enc.encode_forward(X, book)
        g = rng.normal(size=d)
        gx, gc, gs = enc.encode_backward(g, X, book, cache)
        raw = cache.raw[0, 0]
        norm = np.linalg.norm(raw)
        unit = raw / norm
        g_raw = (g - unit * (unit @ g)) / norm
        npt.assert_allclose(gc[0], -n * g_raw, atol=1e-12)
        npt.assert_allclose(gx, np.tile(g_raw, (n, 1)), atol=1e-12)
        npt.assert_allclose(gs, 0.0, atol=1e-12)

    @pytest.mark.parametrize("seed", range(6))
    def test_gradcheck_random_instance(self, seed):
        rng = np.random.default_rng(100 + seed)
        n = int(rng.integers(1, 9))
        k = int(rng.integers(1, 5))
        d = int(rng.integers(1, 6))
        X = rng.normal(size=(n, d))
        C = rng.normal(size=(k, d))
        s = rng.uniform(0.2, 1.5, size=k)
        probe = rng.normal(size=k * d)

        def loss(X_, C_, s_):
            e, _ = enc.encode_forward(X_, enc.Codebook(C_, s_))
            return float(e @ probe)

        num_gx, num_gc, num_gs = central_diff(loss, [X, C, s])
        _, cache = enc.encode_forward(X, enc.Codebook(C, s))
        gx, gc, gs = enc.encode_backward(probe, X, enc.Codebook(C, s), cache)
        assert rel_err(gx, num_gx) < 1e-4
        assert rel_err(gc, num_gc) < 1e-4
        assert rel_err(gs, num_gs) < 1e-4

    def test_batch_backward_matches_single(self):
        rng = np.random.default_rng(43)
        book = enc.Codebook(rng.normal(size=(3, 4)), rng.uniform(0.2, 1.0, 3))
        X = rng.normal(size=(4, 5, 4))
        G = rng.normal(size=(4, 12))
        _, cache = enc.batch_encode_forward(X, book)
        bgx, bgc, bgs = enc.batch_encode_backward(G, book, cache)
        acc_c = np.zeros_like(bgc)
        acc_s = np.zeros_like(bgs)
        for i in range(4):
            _, ci = enc.encode_forward(X[i], book)
            gx, gc, gs = enc.encode_backward(G[i], X[i], book, ci)
            npt.assert_allclose(bgx[i], gx, atol=1e-13)
            acc_c += gc
            acc_s += gs
        npt.assert_allclose(bgc, acc_c, atol=1e-13)
        npt.assert_allclose(bgs, acc_s, atol=1e-13)

    def test_smoothing_grad_per_descriptor_coefficient(self):
        # The derivative of each assignment w.r.t. its own smoothing factor
        # has per-descriptor magnitude f*g*||r||^2 / h^2 when written in
        # terms of the raw exponentials f, their row sums h and the
        # leave-one-out sums g; our assignment-based form must agree.
        X, book, _ = small_instance(61, n=4, k=3)
        _, cache = enc.encode_forward(X, book)
        a = cache.assignments[0]
        n2 = cache.sq_norms[0]
        f = np.exp(-book.smoothing[None, :] * n2)
        h = f.sum(axis=1, keepdims=True)
        g = h - f
        npt.assert_allclose(a * (1.0 - a) * n2, f * g * n2 / h**2, atol=1e-12)

    def test_cache_mismatch_rejected(self):
        X, book, _ = small_instance(7)
        _, cache = enc.encode_forward(X, book)
        with pytest.raises(ValueError, match="cache"):
            enc.encode_backward(np.zeros(book.K * book.D), X[:2], book, cache)


class TestZeroNormBlock:
    def _symmetric_instance(self):
        # Two descriptors symmetric about the sole codeword: the raw
        # aggregate block is exactly zero.
        book = enc.Codebook(np.zeros((1, 2)), np.array([0.5]))
        X = np.array([[1.0, 0.0], [-1.0, 0.0]])
        return X, book

    def test_forward_emits_zero_block(self):
        X, book = self._symmetric_instance()
        e, cache = enc.encode_forward(X, book)
        npt.assert_array_equal(e, 0.0)
        assert cache.block_norms[0, 0] < 1e-12

    def test_backward_through_zero_block_is_zero(self):
        X, book = self._symmetric_instance()
        _, cache = enc.encode_forward(X, book)
        gx, gc, gs = enc.encode_backward(np.array([1.0, 2.0]), X, book, cache)
        npt.assert_array_equal(gx, 0.0)
        npt.assert_array_equal(gc, 0.0)
        npt.assert_array_equal(gs, 0.0)


class TestInitCodebook:
    def test_deterministic(self):
        a = enc.init_codebook(4, 3, seed=9)
        b = enc.init_codebook(4, 3, seed=9)
        npt.assert_array_equal(a.codewords, b.codewords)
        npt.assert_array_equal(a.smoothing, b.smoothing)

    def test_bounds_on_many_draws(self):
        book = enc.init_codebook(100, 100, seed=1)  # 1e4 codeword entries
        bound = 1.0 / np.sqrt(100)
        assert np.all(np.abs(book.codewords) <= bound)
        assert np.all(book.smoothing > 0.0) and np.all(book.smoothing <= 1.0)
        # Draws should actually exercise the range, not cluster.
        assert book.codewords.max() > 0.9 * bound
        assert book.codewords.min() < -0.9 * bound

    def test_minimal_codebook(self):
        book = enc.init_codebook(1, 1, seed=2)
        assert book.codewords.shape == (1, 1)
        assert -1.0 <= book.codewords[0, 0] <= 1.0


@settings(max_examples=25, deadline=None)
@given(
    n=st.integers(1, 8),
    k=st.integers(1, 4),
    d=st.integers(1, 5),
    scale=st.floats(0.01, 100.0),
    seed=st.integers(0, 10_000),
)
def test_property_rows_sum_to_one_and_length_fixed(n, k, d, scale, seed):
    rng = np.random.default_rng(seed)
    X = rng.normal(size=(n, d)) * scale
    book = enc.Codebook(rng.normal(size=(k, d)) * scale, rng.uniform(0.01, 10.0, k))
    a, _ = enc.soft_assign(X, book)
    assert np.all(np.abs(a.sum(axis=1) - 1.0) <= 1e-12)
    e, _ = enc.encode_forward(X, book)
    assert e.shape == (k * d,)
    assert np.all(np.isfinite(e))
