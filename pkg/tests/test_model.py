import numpy as np
import pytest

from mutelab import tensor as T
from mutelab.model import ModelConfig, ToyASRModel, load_checkpoint, save_checkpoint
from mutelab.vocab import SPECIALS, Vocab, decoder_prefix


@pytest.fixture(scope="module")
def small_model():
    vocab = Vocab(["ba", "de", "fo", "ga", "he", "jo", "ka", "le"])
    cfg = ModelConfig(name="tiny", width=32, enc_layers=1, dec_layers=1, heads=2)
    return ToyASRModel.create(cfg, vocab, seed=0)


class TestVocab:
    def test_ids_dense_and_unique(self):
        v = Vocab(["aa", "bb"])
        ids = [v.id_of(t) for t in v.words + list(SPECIALS)]
        assert ids == list(range(len(v)))

    def test_eot_queryable_and_last(self):
        v = Vocab(["aa"])
        assert v.eot_id == len(v) - 1
        assert v.token_string(v.eot_id) == "<|endoftext|>"

    def test_words_of_drops_specials(self):
        v = Vocab(["aa", "bb"])
        assert v.words_of([0, v.t0_id, 1, v.eot_id]) == ["aa", "bb"]

    def test_translation_is_a_derangement(self):
        v = Vocab([f"w{i}" for i in range(32)])
        mapped = [v.translated_word_id(i) for i in range(32)]
        assert sorted(mapped) == list(range(32))
        assert all(m != i for i, m in enumerate(mapped))

    def test_prefix_shapes(self):
        v = Vocab(["aa"])
        assert decoder_prefix(v, timestamps=True) == [v.sot_id, v.lang_id, v.transcribe_id]
        assert decoder_prefix(v, timestamps=False)[-1] == v.notimestamps_id
        assert decoder_prefix(v, task="translate")[2] == v.translate_id
        assert decoder_prefix(v, multilingual=False) == [v.sot_id]
        with pytest.raises(ValueError):
            decoder_prefix(v, task="summarize")


class TestModelForward:
    def test_next_token_distribution_sums_to_one(self, small_model):
        rng = np.random.default_rng(0)
        audio = rng.uniform(-0.3, 0.3, 12000).astype(np.float32)
        from mutelab.decode import next_token_dist

        prefix = decoder_prefix(small_model.vocab)
        probs = next_token_dist(small_model, audio, prefix)
        assert probs.shape == (len(small_model.vocab),)
        assert abs(probs.sum() - 1.0) < 1e-6
        assert np.all(probs >= 0)

    def test_zeroed_output_head_gives_uniform(self, small_model):
        import copy

        model = ToyASRModel(small_model.cfg, small_model.vocab,
                            {k: T.Tensor(v.data.copy(), requires_grad=True)
                             for k, v in small_model.params.items()})
        model.params["dec.emb"].data[:] = 0.0
        from mutelab.decode import next_token_dist

        rng = np.random.default_rng(1)
        audio = rng.uniform(-0.2, 0.2, 8000).astype(np.float32)
        probs = next_token_dist(model, audio, decoder_prefix(model.vocab))
        np.testing.assert_allclose(probs, 1.0 / len(model.vocab), atol=1e-6)

    def test_out_of_vocab_token_rejected(self, small_model):
        enc = small_model.encode_signals([np.zeros(8000, dtype=np.float32)])
        with pytest.raises(ValueError, match="vocabulary"):
            small_model.decode_logits(enc, np.array([[len(small_model.vocab)]]))

    def test_greedy_token_equals_argmax_of_projection(self, small_model):
        # the output logits are literally W @ q for the tied embedding W
        rng = np.random.default_rng(2)
        audio = rng.uniform(-0.4, 0.4, 10000).astype(np.float32)
        prefix = decoder_prefix(small_model.vocab)
        enc = small_model.encode_signals([audio])
        with T.no_grad():
            h = small_model.decode_hidden(enc, np.asarray([prefix]))
            logits = small_model.decode_logits(enc, np.asarray([prefix]))
        q = h.data[0, -1]
        w = small_model.projection_matrix
        np.testing.assert_allclose(logits.data[0, -1], w @ q, rtol=1e-4, atol=1e-5)
        assert int(logits.data[0, -1].argmax()) == int((w @ q).argmax())

    def test_decoding_is_deterministic(self, small_model):
        from mutelab.decode import transcribe

        rng = np.random.default_rng(3)
        audio = rng.uniform(-0.3, 0.3, 9000).astype(np.float32)
        a = transcribe(small_model, audio, beam=3)
        b = transcribe(small_model, audio, beam=3)
        assert a.token_ids == b.token_ids
        assert a.log_probs == b.log_probs


class TestCheckpoint:
    def test_roundtrip_bit_identical(self, small_model, tmp_path):
        p = tmp_path / "m.ckpt"
        save_checkpoint(p, small_model)
        back = load_checkpoint(p)
        assert back.model_id == small_model.model_id
        assert back.vocab.words == small_model.vocab.words
        for k in small_model.params:
            assert np.array_equal(back.params[k].data, small_model.params[k].data)
        assert back.cfg == small_model.cfg

    def test_truncated_blob_rejected(self, small_model, tmp_path):
        p = tmp_path / "m.ckpt"
        save_checkpoint(p, small_model)
        raw = p.read_bytes()
        p.write_bytes(raw[:-8])
        with pytest.raises(ValueError, match="blob"):
            load_checkpoint(p)

    def test_wrong_format_rejected(self, tmp_path):
        p = tmp_path / "x.ckpt"
        p.write_bytes(b'{"format": "other"}\n')
        with pytest.raises(ValueError, match="not a version"):
            load_checkpoint(p)
