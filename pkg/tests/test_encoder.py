import numpy as np
import numpy.testing as npt
import pytest

from dmin import numerics as nm
from dmin.encoder import (EncoderConfig, FeatureHashEncoder,
                          PrecomputedEncoder, encode_batch, fnv1a64,
                          hash_counts, init_encoder_arrays, token_bucket)
from oracles import fnv1a64_reference, hash_encode_reference


class TestHash:
    def test_empty_input_is_offset_basis(self):
        assert fnv1a64(b"") == 14695981039346656037

    def test_published_reference_vectors(self):
        # from the FNV reference test suite
        assert fnv1a64(b"a") == 0xAF63DC4C8601EC8C
        assert fnv1a64(b"foobar") == 0x85944171F73967E8

    def test_matches_independent_reimplementation(self):
        rng = np.random.default_rng(0)
        for _ in range(200):
            data = bytes(rng.integers(0, 256, size=rng.integers(0, 30)))
            assert fnv1a64(data) == fnv1a64_reference(data)

    def test_golden_token_buckets(self):
        got = {t: token_bucket(t, 64) for t in ("the", "cat", "sat", "mat")}
        want = {t: fnv1a64_reference(t.encode()) % 64
                for t in ("the", "cat", "sat", "mat")}
        assert got == want

    def test_counts_normalized(self):
        v = hash_counts("one two two three three three", 32)
        assert v.sum() > 0
        assert np.linalg.norm(v) == pytest.approx(1.0, abs=1e-12)

    def test_counts_case_fold_and_split(self):
        npt.assert_array_equal(hash_counts("Hello  WORLD", 16),
                               hash_counts("hello world", 16))

    def test_counts_reject_blank(self):
        with pytest.raises(ValueError):
            hash_counts("", 8)
        with pytest.raises(ValueError):
            hash_counts("   \t ", 8)


class TestFeatureHashEncoder:
    def make(self, seed=7, V=8, d=4):
        cfg = EncoderConfig(kind="feature_hash", embed_dim=d, vocab_buckets=V)
        proj = np.random.default_rng(seed).normal(size=(d, V))
        return cfg, proj, FeatureHashEncoder(cfg, nm.constant(proj))

    def test_fixture_matches_oracle(self):
        cfg, proj, enc = self.make(seed=7, V=8, d=4)
        got = enc.encode("a b a").array
        want = hash_encode_reference("a b a", 8, proj)
        npt.assert_allclose(got, want, atol=1e-14, rtol=0)

    def test_deterministic(self):
        _, _, enc = self.make()
        npt.assert_array_equal(enc.encode("same text here").array,
                               enc.encode("same text here").array)

    def test_zero_projection_gives_zero_vector(self):
        cfg = EncoderConfig(embed_dim=4, vocab_buckets=8)
        enc = FeatureHashEncoder(cfg, nm.constant(np.zeros((4, 8))))
        npt.assert_array_equal(enc.encode("anything at all").array, np.zeros(4))

    def test_output_in_tanh_range(self):
        rng = np.random.default_rng(12)
        cfg = EncoderConfig(embed_dim=6, vocab_buckets=32)
        enc = FeatureHashEncoder(
            cfg, nm.constant(rng.normal(0.0, 3.0, (6, 32))))
        words = ["alpha", "beta", "gamma", "delta", "epsilon"]
        for _ in range(50):
            text = " ".join(rng.choice(words, size=rng.integers(1, 10)))
            out = enc.encode(text).array
            assert out.shape == (6,)
            assert np.all(out > -1.0) and np.all(out < 1.0)

    def test_projection_gradient_flows(self):
        cfg = EncoderConfig(embed_dim=4, vocab_buckets=8)
        tape = nm.Tape()
        proj = tape.leaf(np.random.default_rng(3).normal(size=(4, 8)))
        enc = FeatureHashEncoder(cfg, proj)
        out = enc.encode("a b a")
        grads = nm.backward(tape, nm.dot(out, out))
        g = grads[proj.node_id]
        assert g.shape == (4, 8)
        assert np.any(g != 0.0) and np.all(np.isfinite(g))

    def test_shape_validation(self):
        cfg = EncoderConfig(embed_dim=4, vocab_buckets=8)
        with pytest.raises(ValueError):
            FeatureHashEncoder(cfg, nm.constant(np.zeros((4, 9))))


class TestPrecomputedEncoder:
    def test_lookup_and_missing(self):
        cfg = EncoderConfig(kind="precomputed", embed_dim=3)
        enc = PrecomputedEncoder(cfg, {"x1": [1.0, 2.0, 3.0]})
        npt.assert_array_equal(enc.encode("x1").array, [1.0, 2.0, 3.0])
        with pytest.raises(ValueError, match="x9"):
            enc.encode("x9")

    def test_wrong_length_vector_rejected(self):
        cfg = EncoderConfig(kind="precomputed", embed_dim=3)
        with pytest.raises(ValueError, match="bad"):
            PrecomputedEncoder(cfg, {"bad": [1.0, 2.0]})


class TestBatch:
    def test_empty_and_singleton(self):
        cfg = EncoderConfig(kind="precomputed", embed_dim=2)
        enc = PrecomputedEncoder(cfg, {"a": [1.0, 2.0]})
        assert encode_batch(enc, []) == []
        [only] = encode_batch(enc, ["a"])
        npt.assert_array_equal(only.array, [1.0, 2.0])

    def test_batch_equals_single_calls(self):
        rng = np.random.default_rng(5)
        cfg = EncoderConfig(embed_dim=4, vocab_buckets=16)
        enc = FeatureHashEncoder(cfg, nm.constant(rng.normal(size=(4, 16))))
        texts = ["first text", "second one", "third thing"]
        batch = encode_batch(enc, texts)
        for text, got in zip(texts, batch):
            npt.assert_array_equal(got.array, enc.encode(text).array)

    def test_error_carries_item_index(self):
        cfg = EncoderConfig(embed_dim=4, vocab_buckets=16)
        enc = FeatureHashEncoder(cfg, nm.constant(np.zeros((4, 16))))
        with pytest.raises(ValueError, match="item 1"):
            encode_batch(enc, ["fine", ""])


class TestConfig:
    def test_validation(self):
        with pytest.raises(ValueError):
            EncoderConfig(kind="transformer")
        with pytest.raises(ValueError):
            EncoderConfig(embed_dim=1)
        with pytest.raises(ValueError):
            EncoderConfig(embed_dim=64, vocab_buckets=32)

    def test_init_arrays(self):
        cfg = EncoderConfig(embed_dim=8, vocab_buckets=32)
        arrays = init_encoder_arrays(cfg, np.random.default_rng(1))
        assert arrays["projection"].shape == (8, 32)
        pc = EncoderConfig(kind="precomputed", embed_dim=8)
        assert init_encoder_arrays(pc, np.random.default_rng(1)) == {}
