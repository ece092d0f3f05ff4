import numpy as np
import pytest

from cafe import alignment as A
from cafe import tensor as T
from cafe.layers import Dense, EncodedSequence
from cafe.tensor import ParamRegistry, Tensor


def registry(seed=0):
    return ParamRegistry(np.random.default_rng(seed), dtype=np.float64)


def encoded(values, lengths=None):
    values = np.asarray(values, dtype=float)
    batch, max_len, _ = values.shape
    lengths = np.full(batch, max_len) if lengths is None else np.asarray(lengths)
    mask = np.zeros((batch, max_len))
    for i, n in enumerate(lengths):
        mask[i, :n] = 1.0
    return EncodedSequence(Tensor(values), mask, lengths)


def identity_projection(dim, seed=0):
    """A projection whose scores reproduce raw dot products is inconvenient;
    these tests mostly want *fixed* scores, so they bypass the projection by
    monkeypatching where needed and use a plain random one otherwise."""
    return Dense(registry(seed), "proj", dim, dim, "relu")


class TestInterAlign:
    def test_single_premise_token_gives_beta_equal_premise(self):
        prem = encoded(np.random.default_rng(0).standard_normal((1, 1, 4)))
        hyp = encoded(np.random.default_rng(1).standard_normal((1, 3, 4)))
        beta, alpha, _ = A.inter_align(prem, hyp, identity_projection(4))
        for j in range(3):
            assert np.allclose(beta.data[0, j], prem.vectors.data[0, 0], atol=1e-12)

    def test_equal_scores_give_uniform_mean(self):
        prem = encoded(np.random.default_rng(2).standard_normal((1, 4, 3)))
        hyp = encoded(np.ones((1, 2, 3)))
        proj = identity_projection(3, seed=3)
        proj.w.data[...] = 0.0  # relu(0 + b) constant -> all scores equal
        proj.b.data[...] = 1.0
        beta, _, _ = A.inter_align(prem, hyp, proj)
        mean = prem.vectors.data[0].mean(axis=0)
        assert np.allclose(beta.data[0, 0], mean, atol=1e-12)

    def test_two_by_two_hand_softmax(self):
        # scores [[0, ln 3], [0, 0]]: weights over premise for hypothesis
        # token 2 are (3/4, 1/4)
        p = np.array([[[1.0, 0.0], [0.0, 1.0]]])
        prem, hyp = encoded(p), encoded(np.zeros((1, 2, 2)))
        scores = np.array([[[0.0, np.log(3.0)], [0.0, 0.0]]])
        weights = T.masked_softmax(Tensor(scores), np.ones((1, 2, 1)), axis=1)
        beta = T.matmul(T.transpose(weights), prem.vectors)
        assert np.allclose(beta.data[0, 1], 0.75 * p[0, 0] + 0.25 * p[0, 1])

    def test_empty_sequence_rejected(self):
        prem = encoded(np.zeros((1, 0, 3)))
        hyp = encoded(np.ones((1, 2, 3)))
        with pytest.raises(ValueError, match="empty"):
            A.inter_align(prem, hyp, identity_projection(3))

    def test_beta_is_convex_combination_of_premise(self):
        rng = np.random.default_rng(4)
        prem = encoded(rng.standard_normal((2, 5, 4)), lengths=[5, 3])
        hyp = encoded(rng.standard_normal((2, 3, 4)))
        beta, _, _ = A.inter_align(prem, hyp, identity_projection(4, seed=5))
        for b in range(2):
            valid = prem.vectors.data[b, :prem.lengths[b]]
            lo, hi = valid.min(axis=0), valid.max(axis=0)
            for j in range(3):
                assert np.all(beta.data[b, j] >= lo - 1e-9)
                assert np.all(beta.data[b, j] <= hi + 1e-9)

    def test_padding_invariance(self):
        rng = np.random.default_rng(6)
        p = rng.standard_normal((1, 3, 4))
        h = rng.standard_normal((1, 2, 4))
        proj = identity_projection(4, seed=7)
        beta, alpha, _ = A.inter_align(encoded(p), encoded(h), proj)
        p_pad = np.concatenate([p, rng.standard_normal((1, 4, 4))], axis=1)
        beta2, alpha2, _ = A.inter_align(encoded(p_pad, lengths=[3]),
                                         encoded(h), proj)
        assert np.allclose(beta.data, beta2.data, atol=1e-6)
        assert np.allclose(alpha.data, alpha2.data[:, :3], atol=1e-6)


class TestIntraAlign:
    def test_singleton_aligns_to_itself(self):
        seq = encoded(np.random.default_rng(0).standard_normal((1, 1, 3)))
        out = A.intra_align(seq, identity_projection(3))
        assert np.allclose(out.data[0, 0], seq.vectors.data[0, 0], atol=1e-12)

    def test_identical_tokens_give_identical_mixtures(self):
        row = np.random.default_rng(1).standard_normal(3)
        seq = encoded(np.tile(row, (1, 4, 1)))
        out = A.intra_align(seq, identity_projection(3, seed=2))
        for i in range(4):
            assert np.allclose(out.data[0, i], row, atol=1e-9)

    def test_matches_double_loop_oracle(self):
        rng = np.random.default_rng(3)
        values = rng.standard_normal((1, 3, 4))
        seq = encoded(values)
        proj = identity_projection(4, seed=4)
        out = A.intra_align(seq, proj).data
        g = np.maximum(values[0] @ proj.w.data + proj.b.data, 0.0)
        expected = np.zeros((3, 4))
        for i in range(3):
            scores = np.array([g[i] @ g[j] for j in range(3)])
            w = np.exp(scores - scores.max())
            w /= w.sum()
            for j in range(3):
                expected[i] += w[j] * values[0, j]
        assert np.allclose(out[0], expected, atol=1e-6)


class TestFactorizedScorer:
    def test_zero_input_returns_bias(self):
        reg = registry(0)
        scorer = A.FactorizedScorer(reg, "fm", 5, 3)
        scorer.bias.data[...] = 0.7
        assert abs(A.fm_score(scorer, np.zeros(5)) - 0.7) < 1e-12

    def test_hand_computed_orthogonal_factors(self):
        # w0 = 0.5, w = (1, -1), x = (2, 3), factors orthogonal -> -0.5
        reg = registry(1)
        scorer = A.FactorizedScorer(reg, "fm", 2, 2)
        scorer.bias.data[...] = 0.5
        scorer.linear.data[...] = np.array([[1.0], [-1.0]])
        scorer.factors.data[...] = np.array([[1.0, 0.0], [0.0, 1.0]])
        assert abs(A.fm_score(scorer, np.array([2.0, 3.0])) - (-0.5)) < 1e-12

    def test_zero_factors_degenerate_to_affine(self):
        rng = np.random.default_rng(2)
        reg = registry(2)
        scorer = A.FactorizedScorer(reg, "fm", 6, 4)
        scorer.factors.data[...] = 0.0
        for _ in range(20):
            x = rng.standard_normal(6)
            expected = float(scorer.bias.data[0]
                             + x @ scorer.linear.data[:, 0])
            assert abs(A.fm_score(scorer, x) - expected) < 1e-12

    def test_linear_time_matches_brute_force_oracle(self):
        from cafe.checks import fm_brute_force
        rng = np.random.default_rng(3)
        for trial in range(200):
            n = int(rng.integers(1, 65))
            f = int(rng.integers(1, 17))
            reg = ParamRegistry(rng, dtype=np.float64)
            scorer = A.FactorizedScorer(reg, "fm", n, f)
            scorer.bias.data[...] = rng.standard_normal()
            scorer.linear.data[...] = rng.standard_normal((n, 1))
            scorer.factors.data[...] = rng.standard_normal((n, f))
            x = rng.standard_normal(n)
            fast = A.fm_score(scorer, x)
            slow = fm_brute_force(float(scorer.bias.data[0]),
                                  scorer.linear.data[:, 0],
                                  scorer.factors.data, x)
            assert abs(fast - slow) < 1e-10, f"trial {trial}"

    def test_dimension_mismatch_rejected(self):
        scorer = A.FactorizedScorer(registry(4), "fm", 4, 2)
        with pytest.raises(ValueError, match="last dim 4"):
            scorer(Tensor(np.zeros((2, 5))))


class TestFactorizePairs:
    def _scorers(self, d, seed=0):
        reg = registry(seed)
        return {op: A.FactorizedScorer(reg, f"s.{op}", 2 * d if op == "cat" else d, 3)
                for op in A.COMPARISONS}, reg

    def test_equal_pair_sub_channel_is_bias(self):
        scorers, _ = self._scorers(4)
        scorers["sub"].bias.data[...] = 0.25
        a = Tensor(np.random.default_rng(1).standard_normal((1, 3, 4)))
        feats = A.factorize_pairs(a, a, scorers)
        assert np.allclose(feats["sub"].data, 0.25, atol=1e-12)

    def test_zero_partner_mul_channel_is_bias(self):
        scorers, _ = self._scorers(4, seed=2)
        scorers["mul"].bias.data[...] = -0.4
        a = Tensor(np.random.default_rng(3).standard_normal((1, 3, 4)))
        feats = A.factorize_pairs(a, Tensor(np.zeros((1, 3, 4))), scorers)
        assert np.allclose(feats["mul"].data, -0.4, atol=1e-12)

    def test_channels_match_per_token_scalar_oracle(self):
        from cafe.checks import fm_brute_force
        scorers, _ = self._scorers(3, seed=4)
        rng = np.random.default_rng(5)
        a, b = rng.standard_normal((1, 2, 3)), rng.standard_normal((1, 2, 3))
        feats = A.factorize_pairs(Tensor(a), Tensor(b), scorers)
        combos = {"cat": np.concatenate([a, b], axis=2), "sub": a - b, "mul": a * b}
        for op, vec in combos.items():
            s = scorers[op]
            for t in range(2):
                expected = fm_brute_force(float(s.bias.data[0]),
                                          s.linear.data[:, 0], s.factors.data,
                                          vec[0, t])
                assert abs(feats[op].data[0, t] - expected) < 1e-10

    def test_six_instances_are_disjoint(self):
        d = 4
        inter, _ = self._scorers(d, seed=6)
        intra, _ = self._scorers(d, seed=7)
        rng = np.random.default_rng(8)
        a, b = Tensor(rng.standard_normal((1, 3, d))), Tensor(rng.standard_normal((1, 3, d)))

        def all_channels():
            fi = A.factorize_pairs(a, b, inter)
            fr = A.factorize_pairs(a, b, intra)
            return {f"inter_{op}": fi[op].data.copy() for op in A.COMPARISONS} | \
                   {f"intra_{op}": fr[op].data.copy() for op in A.COMPARISONS}

        baseline = all_channels()
        for group, scorers in (("inter", inter), ("intra", intra)):
            for op in A.COMPARISONS:
                saved = scorers[op].linear.data.copy()
                scorers[op].linear.data[...] += 0.5
                perturbed = all_channels()
                scorers[op].linear.data[...] = saved
                for name in baseline:
                    changed = not np.allclose(perturbed[name], baseline[name])
                    assert changed == (name == f"{group}_{op}"), name

    def test_mismatched_shapes_rejected(self):
        scorers, _ = self._scorers(3)
        with pytest.raises(ValueError, match="mismatched"):
            A.factorize_pairs(Tensor(np.zeros((1, 2, 3))),
                              Tensor(np.zeros((1, 3, 3))), scorers)


class TestAugment:
    def _features(self, batch, length, value=0.0):
        return {op: Tensor(np.full((batch, length), value))
                for op in A.COMPARISONS}

    def test_dimension_without_intra_vector(self):
        seq = encoded(np.zeros((2, 3, 300)))
        out = A.augment(seq, self._features(2, 3), self._features(2, 3), None)
        assert out.vectors.shape == (2, 3, 306)

    def test_dimension_with_intra_vector(self):
        seq = encoded(np.zeros((2, 3, 300)))
        out = A.augment(seq, self._features(2, 3), self._features(2, 3),
                        Tensor(np.zeros((2, 3, 300))))
        assert out.vectors.shape == (2, 3, 606)

    def test_zero_features_concatenate_zeros(self):
        values = np.random.default_rng(0).standard_normal((1, 2, 4))
        out = A.augment(encoded(values), self._features(1, 2), self._features(1, 2),
                        None)
        assert np.array_equal(out.vectors.data[:, :, :4], values)
        assert np.all(out.vectors.data[:, :, 4:] == 0.0)

    def test_token_count_mismatch_rejected(self):
        seq = encoded(np.zeros((1, 3, 4)))
        with pytest.raises(ValueError, match="channel"):
            A.augment(seq, self._features(1, 2), None, None)
