import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from seqlab import embedding as E
from seqlab import tensor as T


class TestVocabulary:
    def test_single_token_corpus(self):
        vocab = E.build_vocab([["a"]])
        assert vocab.size == 4 + 1
        assert vocab.content_size == 1
        assert vocab.token_to_id["a"] == 4

    def test_reserved_ids_fixed(self):
        vocab = E.build_vocab([["x", "y"]])
        assert vocab.token_to_id[E.PAD_TOKEN] == E.PAD_ID == 0
        assert vocab.token_to_id[E.BOS_TOKEN] == E.BOS_ID == 1
        assert vocab.token_to_id[E.EOS_TOKEN] == E.EOS_ID == 2
        assert vocab.token_to_id[E.UNK_TOKEN] == E.UNK_ID == 3

    def test_first_occurrence_order(self):
        vocab = E.build_vocab([["b", "a"], ["a", "c"]])
        assert vocab.decode([4, 5, 6]) == ["b", "a", "c"]

    def test_permuted_corpus_same_size_different_ids(self):
        v1 = E.build_vocab([["a", "b", "c"]])
        v2 = E.build_vocab([["c", "b", "a"]])
        assert v1.size == v2.size
        assert v1.token_to_id["a"] != v2.token_to_id["a"]

    def test_bijection(self):
        vocab = E.build_vocab([["u", "v", "w"]])
        for tok, idx in vocab.token_to_id.items():
            assert vocab.id_to_token[idx] == tok

    def test_unknown_tokens_map_to_unk(self):
        vocab = E.build_vocab([["a"]])
        assert vocab.encode(["a", "zzz"]) == [4, E.UNK_ID]

    def test_empty_corpus_rejected(self):
        with pytest.raises(ValueError):
            E.build_vocab([])

    def test_save_load_roundtrip(self, tmp_path):
        vocab = E.build_vocab([["walk", "jump", "JUMP"]])
        path = tmp_path / "vocab.txt"
        vocab.save(path)
        assert E.Vocabulary.load(path) == vocab

    def test_load_rejects_missing_header(self, tmp_path):
        path = tmp_path / "vocab.txt"
        path.write_text("a\nb\n")
        with pytest.raises(ValueError):
            E.Vocabulary.load(path)


class TestSinusoidalTable:
    def test_position_zero(self):
        pe = E.sinusoidal_pe(max_len=8, d_model=10)
        np.testing.assert_allclose(pe.values[0, 0::2], 0.0)
        np.testing.assert_allclose(pe.values[0, 1::2], 1.0)

    @pytest.mark.parametrize("d_model", [2, 16, 128])
    def test_first_position_first_column(self, d_model):
        pe = E.sinusoidal_pe(max_len=4, d_model=d_model)
        np.testing.assert_allclose(pe.rows(1)[0], 0.841471, atol=1e-6)

    def test_signed_symmetry(self):
        pe = E.sinusoidal_pe(max_len=16, d_model=12, signed=True)
        for i in (1, 5, 16):
            np.testing.assert_allclose(pe.rows(-i)[0::2], -pe.rows(i)[0::2],
                                       atol=1e-6)
            np.testing.assert_allclose(pe.rows(-i)[1::2], pe.rows(i)[1::2],
                                       atol=1e-6)

    @settings(max_examples=25, deadline=None)
    @given(max_len=st.integers(1, 64), half_d=st.integers(1, 32),
           signed=st.booleans())
    def test_entries_bounded(self, max_len, half_d, signed):
        pe = E.sinusoidal_pe(max_len, 2 * half_d, signed=signed)
        assert (np.abs(pe.values) <= 1.0 + 1e-6).all()

    def test_odd_d_model_rejected(self):
        with pytest.raises(ValueError):
            E.sinusoidal_pe(8, 7)

    def test_out_of_range_position(self):
        pe = E.sinusoidal_pe(4, 8)
        with pytest.raises(IndexError):
            pe.rows(4)
        signed = E.sinusoidal_pe(4, 8, signed=True)
        with pytest.raises(IndexError):
            signed.rows(-5)

    def test_matches_formula_directly(self):
        d = 8
        pe = E.sinusoidal_pe(6, d)
        for i in range(6):
            for k in range(d // 2):
                angle = i / 10000 ** (2 * k / d)
                assert abs(pe.values[i, 2 * k] - np.sin(angle)) < 1e-6
                assert abs(pe.values[i, 2 * k + 1] - np.cos(angle)) < 1e-6


def vocab_of_size(total):
    return E.build_vocab([[f"tok{i}" for i in range(total - 4)]])


class TestInitEmbedding:
    def test_token_upscale_bound(self):
        vocab = vocab_of_size(19)
        table = E.init_embedding(vocab, 128, E.ScalingScheme.TOKEN_UPSCALE,
                                 np.random.default_rng(0))
        bound = np.sqrt(6.0 / (128 + 19))
        np.testing.assert_allclose(bound, 0.2020, atol=5e-4)
        assert np.abs(table.weights.data).max() <= bound

    def test_no_scaling_unit_std(self):
        vocab = vocab_of_size(784)  # 784 * 128 > 1e5 draws
        table = E.init_embedding(vocab, 128, E.ScalingScheme.NO_SCALING,
                                 np.random.default_rng(1))
        assert abs(table.weights.data.std() - 1.0) < 0.02

    def test_position_downscale_std(self):
        vocab = vocab_of_size(1568)
        table = E.init_embedding(vocab, 64, E.ScalingScheme.POSITION_DOWNSCALE,
                                 np.random.default_rng(2))
        assert abs(table.weights.data.std() - 0.125) < 0.005

    def test_reproducible_bit_exact(self):
        vocab = vocab_of_size(10)
        a = E.init_embedding(vocab, 16, E.ScalingScheme.NO_SCALING,
                             np.random.default_rng(42))
        b = E.init_embedding(vocab, 16, E.ScalingScheme.NO_SCALING,
                             np.random.default_rng(42))
        assert np.array_equal(a.weights.data, b.weights.data)

    def test_scheme_parse(self):
        assert E.ScalingScheme.parse("no_scaling") is E.ScalingScheme.NO_SCALING
        with pytest.raises(ValueError):
            E.ScalingScheme.parse("bogus")


class TestEmbedScaled:
    def make_table(self, vocab, d_model, scheme, zero=False):
        table = E.init_embedding(vocab, d_model, scheme, np.random.default_rng(3))
        if zero:
            table.weights.data[:] = 0.0
        return table

    def test_zero_embedding_row_passes_through_positions(self):
        vocab = vocab_of_size(6)
        table = self.make_table(vocab, 8, E.ScalingScheme.TOKEN_UPSCALE, zero=True)
        pe = E.sinusoidal_pe(16, 8)
        out = E.embed_scaled(table, pe, np.array([4, 5]), use_absolute_pe=True)
        np.testing.assert_array_equal(out.data, pe.values[:2])

    def test_token_upscale_factor_sqrt4(self):
        vocab = vocab_of_size(5)
        table = self.make_table(vocab, 4, E.ScalingScheme.TOKEN_UPSCALE)
        pe = E.sinusoidal_pe(8, 4)
        pe.values[:] = 0.0
        out = E.embed_scaled(table, pe, np.array([4]), use_absolute_pe=True)
        np.testing.assert_allclose(out.data[0], 2.0 * table.weights.data[4],
                                   rtol=1e-6)

    def test_position_downscale_quarter(self):
        vocab = vocab_of_size(5)
        table = self.make_table(vocab, 16, E.ScalingScheme.POSITION_DOWNSCALE,
                                zero=True)
        pe = E.sinusoidal_pe(8, 16)
        out = E.embed_scaled(table, pe, np.array([4, 4]), use_absolute_pe=True)
        np.testing.assert_allclose(out.data, 0.25 * pe.values[:2], rtol=1e-6)

    @pytest.mark.parametrize("scheme", list(E.ScalingScheme))
    def test_scalar_recomputation_two_tokens_d4(self, scheme):
        vocab = vocab_of_size(6)
        table = self.make_table(vocab, 4, scheme)
        pe = E.sinusoidal_pe(8, 4)
        ids = np.array([5, 4])
        out = E.embed_scaled(table, pe, ids, use_absolute_pe=True)
        for pos, tok in enumerate(ids):
            for j in range(4):
                e = float(table.weights.data[tok, j])
                p = float(pe.values[pos, j])
                if scheme is E.ScalingScheme.TOKEN_UPSCALE:
                    expected = 2.0 * e + p
                elif scheme is E.ScalingScheme.NO_SCALING:
                    expected = e + p
                else:
                    expected = e + 0.5 * p
                assert abs(float(out.data[pos, j]) - expected) < 1e-5

    @pytest.mark.parametrize("scheme", list(E.ScalingScheme))
    def test_relative_mode_independent_of_position_table(self, scheme):
        vocab = vocab_of_size(6)
        table = self.make_table(vocab, 8, scheme)
        pe = E.sinusoidal_pe(16, 8)
        ids = np.array([[4, 5, 4]])
        out1 = E.embed_scaled(table, pe, ids, use_absolute_pe=False)
        pe.values[:] = np.random.default_rng(9).standard_normal(pe.values.shape)
        out2 = E.embed_scaled(table, pe, ids, use_absolute_pe=False)
        np.testing.assert_array_equal(out1.data, out2.data)

    def test_out_of_range_id(self):
        vocab = vocab_of_size(5)
        table = self.make_table(vocab, 4, E.ScalingScheme.NO_SCALING)
        pe = E.sinusoidal_pe(8, 4)
        with pytest.raises(IndexError):
            E.embed_scaled(table, pe, np.array([7]), use_absolute_pe=True)

    def test_too_long_sequence(self):
        vocab = vocab_of_size(5)
        table = self.make_table(vocab, 4, E.ScalingScheme.NO_SCALING)
        pe = E.sinusoidal_pe(3, 4)
        with pytest.raises(ValueError):
            E.embed_scaled(table, pe, np.array([4, 4, 4, 4]), use_absolute_pe=True)

    def test_gradient_flows_to_embedding(self):
        vocab = vocab_of_size(5)
        table = self.make_table(vocab, 4, E.ScalingScheme.NO_SCALING)
        pe = E.sinusoidal_pe(8, 4)
        with T.Tape():
            out = E.embed_scaled(table, pe, np.array([4, 4]), use_absolute_pe=True)
            loss = T.sum_all(out)
        T.backward_pass(loss)
        np.testing.assert_allclose(table.weights.grad[4], 2.0)
        assert np.all(table.weights.grad[:4] == 0.0)
