import numpy as np
import pytest

from mulr.corpus import build_subword_index, build_vocabulary
from mulr.dataset import TypeSystem
from mulr.embeddings import EmbeddingStore
from mulr.errors import DataError
from mulr.levels import (Assembler, CharVocab, ClrEncoder, FeatureIndexer,
                         LevelSpec, RepresentationSpec, Resources, assemble,
                         avg_des, bow_features, build_char_vocab, build_idf,
                         char_lookup, default_cnn_bank, default_hidden_units,
                         nsl_features, wlr)


def word_store(vectors: dict[str, list[float]]) -> EmbeddingStore:
    tokens = sorted(vectors)
    dim = len(next(iter(vectors.values())))
    matrix = np.array([vectors[t] for t in tokens], dtype=float)
    return EmbeddingStore(kind="skip", dim=dim, tokens=tokens, matrix=matrix)


def subword_store(sentences, n=(2, 3)) -> EmbeddingStore:
    from mulr.embeddings import SgnsConfig, train_subword_sgns
    vocab = build_vocabulary(sentences, 1)
    index = build_subword_index(vocab, n_min=n[0], n_max=n[1], min_count=1)
    cfg = SgnsConfig(dim=6, negatives=2, window=1, epochs=1,
                     learning_rate=0.05, seed=0, table_size=1000,
                     batch_pairs=8)
    return train_subword_sgns(sentences, vocab, index, cfg)


class TestCharMatrix:
    def test_bracketing_and_padding(self):
        vocab = CharVocab(chars=("a", "b"))
        ids = vocab.ids("ab", 6)
        assert ids.tolist() == [vocab.START, vocab.index["a"],
                                vocab.index["b"], vocab.END,
                                vocab.PAD, vocab.PAD]

    def test_truncation_keeps_end_marker(self):
        vocab = CharVocab(chars=tuple("abcdef"))
        ids = vocab.ids("abcdef", 5)
        assert ids[0] == vocab.START
        assert ids[-1] == vocab.END
        assert len(ids) == 5
        assert ids[1:4].tolist() == [vocab.index[c] for c in "abc"]

    def test_unknown_char_maps_to_unk(self):
        vocab = CharVocab(chars=("a",))
        ids = vocab.ids("aZ", 5)
        assert ids[2] == vocab.UNK

    def test_empty_name_flagged_but_valid(self):
        vocab = CharVocab(chars=("a",))
        table = np.arange(vocab.size * 2, dtype=float).reshape(vocab.size, 2)
        flags = []
        C = char_lookup("", table, vocab, 4, flags=flags)
        assert C.shape == (4, 2)
        assert flags

    def test_char_vocab_min_count(self):
        names = ["aaaaa", "b"]
        vocab = build_char_vocab(names, min_count=5)
        assert "a" in vocab.index
        assert "b" not in vocab.index


class TestClrEncoders:
    def _encoder(self, kind, seed=0, **opts):
        rng = np.random.default_rng(seed)
        vocab = CharVocab(chars=tuple("abcdefgh"))
        level = LevelSpec(kind=kind, options=opts)
        return ClrEncoder(level, vocab, rng), vocab

    def test_forward_concatenates_rows(self):
        enc, vocab = self._encoder("clr-forward", padded_len=4, char_dim=3)
        ids = vocab.ids("ab", 4)
        out = enc.forward(ids[None])
        assert out.shape == (1, 12)
        np.testing.assert_array_equal(out[0], enc.table[ids].reshape(-1))

    def test_forward_zero_table_zero_output(self):
        enc, vocab = self._encoder("clr-forward", padded_len=4, char_dim=3)
        enc.table[...] = 0.0
        out = enc.forward(vocab.ids("ab", 4)[None])
        np.testing.assert_array_equal(out, np.zeros((1, 12)))

    def test_forward_order_sensitive(self):
        enc, vocab = self._encoder("clr-forward", padded_len=5, char_dim=3)
        a = enc.forward(vocab.ids("ab", 5)[None])
        b = enc.forward(vocab.ids("ba", 5)[None])
        assert not np.allclose(a, b)

    def test_cnn_output_length_matches_filter_count(self):
        # three filters of width 2 plus four of width 4 give seven features
        from mulr.nn import ConvMaxPool
        rng = np.random.default_rng(1)
        bank = ConvMaxPool([(2, 3), (4, 4)], d_in=3, rng=rng)
        assert bank.out_dim == 7
        out = bank.forward(rng.normal(size=(12, 3)))
        assert out.shape == (7,)

    def test_lstm_and_bilstm_dims(self):
        enc, vocab = self._encoder("clr-lstm", padded_len=8, char_dim=4,
                                   hidden_dim=5)
        assert enc.forward(vocab.ids("abc", 8)[None]).shape == (1, 5)
        enc, vocab = self._encoder("clr-bilstm", padded_len=8, char_dim=4,
                                   hidden_dim=50)
        assert enc.forward(vocab.ids("abc", 8)[None]).shape == (1, 100)

    def test_single_character_name_all_encoders(self):
        for kind in ("clr-forward", "clr-cnn", "clr-lstm", "clr-bilstm"):
            enc, vocab = self._encoder(kind, padded_len=10, char_dim=4,
                                       hidden_dim=3, widths=(1, 2),
                                       feature_maps=2)
            out = enc.forward(vocab.ids("a", 10)[None])
            assert out.shape == (1, enc.out_dim)
            assert np.all(np.isfinite(out))

    def test_identical_names_identical_outputs(self):
        enc, vocab = self._encoder("clr-cnn", padded_len=10, char_dim=4,
                                   widths=(2, 3), feature_maps=3)
        ids = enc.ids_for(["Walter", "Walter"])
        out = enc.forward(ids)
        np.testing.assert_array_equal(out[0], out[1])

    def test_encoder_grad_check(self):
        from mulr.nn import grad_check
        rng = np.random.default_rng(5)
        for kind in ("clr-forward", "clr-cnn", "clr-lstm", "clr-bilstm"):
            enc, vocab = self._encoder(kind, seed=3, padded_len=7, char_dim=3,
                                       hidden_dim=4, widths=(1, 2),
                                       feature_maps=2)
            ids = enc.ids_for(["abc", "de"])
            weights = rng.normal(size=(2, enc.out_dim))

            def loss_fn():
                return float(np.sum(enc.forward(ids) * weights))

            loss_fn()
            enc.zero_grad()
            enc.backward(weights)
            err = grad_check(loss_fn, enc.params(), enc.grad_dict(), rng=rng)
            assert err < 1e-4, kind


class TestWlr:
    def test_mean_of_two_vectors(self):
        store = word_store({"alpha": [1.0, 2.0], "beta": [3.0, 4.0]})
        np.testing.assert_allclose(wlr("alpha beta", store), [2.0, 3.0])

    def test_single_word_passthrough(self):
        store = word_store({"alpha": [1.0, 2.0]})
        np.testing.assert_allclose(wlr("alpha", store), [1.0, 2.0])

    def test_missing_words_skipped(self):
        store = word_store({"alpha": [1.0, 2.0]})
        np.testing.assert_allclose(wlr("alpha missing", store), [1.0, 2.0])

    def test_all_missing_zero_and_flagged(self):
        store = word_store({"alpha": [1.0, 2.0]})
        flags = []
        np.testing.assert_array_equal(wlr("nope never", store, flags=flags),
                                      [0.0, 0.0])
        assert flags

    def test_lowercase_fallback(self):
        store = word_store({"lake": [2.0, 0.0]})
        np.testing.assert_allclose(wlr("Lake", store), [2.0, 0.0])

    def test_subword_store_composes_oov(self):
        sentences = [["karonic", "w1"], ["kalonic", "w2"]] * 30
        store = subword_store(sentences)
        flags = []
        vec = wlr("karunic", store, flags=flags)
        assert np.any(vec)
        assert not flags

    def test_permutation_invariance_and_scaling(self):
        rng = np.random.default_rng(2)
        vocs = {f"w{i}": list(rng.normal(size=3)) for i in range(6)}
        store = word_store(vocs)
        doubled = word_store({k: [2 * x for x in v] for k, v in vocs.items()})
        for _ in range(20):
            words = list(rng.choice(sorted(vocs), size=4, replace=True))
            name = " ".join(words)
            shuffled = " ".join(rng.permutation(words))
            np.testing.assert_allclose(wlr(name, store),
                                       wlr(shuffled, store), atol=1e-12)
            np.testing.assert_allclose(2 * wlr(name, store),
                                       wlr(name, doubled), atol=1e-12)


class TestSparseFeatures:
    def test_bow_example(self):
        feats = bow_features("Walter Leaf")
        assert feats == {"w=Walter": 1, "w=Leaf": 1,
                         "wl=walter": 1, "wl=leaf": 1}

    def test_bow_lowercase_namespace_distinct(self):
        assert bow_features("abc") == {"w=abc": 1, "wl=abc": 1}

    def test_bow_empty(self):
        assert bow_features("") == {}

    def test_nsl_shape_feature(self):
        feats = nsl_features("Rolph P. Kugl")
        assert "shape=Aa A. Aa" in feats

    def test_nsl_digit_normalization(self):
        feats = nsl_features("B2B")
        assert "nng=b7b" in feats

    def test_nsl_bracketed_ngrams(self):
        feats = nsl_features("Lipofen")
        assert "ng=pofen" in feats
        assert "ng=ofen$" in feats
        assert "ng=^Lipo" in feats

    def test_nsl_length_and_token_count(self):
        feats = nsl_features("Rolph P. Kugl")  # 13 characters, 3 tokens
        assert "len=11-20" in feats
        assert "ntok=3" in feats

    def test_pure_and_deterministic(self):
        a = nsl_features("Aunt Mary's Nectarine Compote")
        b = nsl_features("Aunt Mary's Nectarine Compote")
        assert a == b
        assert all(v == 1 for v in a.values())

    def test_indexer_ignores_unseen(self):
        ix = FeatureIndexer().fit([{"a": 1, "b": 1}])
        vec = ix.transform({"a": 1, "z": 1})
        assert vec.tolist() == [1.0, 0.0]


class TestAvgDes:
    def test_single_known_word(self):
        store = word_store({"alpha": [1.0, 2.0]})
        idf = {"alpha": 1.0}
        np.testing.assert_allclose(avg_des(["alpha"], idf, store, k=3),
                                   [1.0, 2.0])

    def test_tie_broken_lexicographically(self):
        store = word_store({"aa": [1.0, 0.0], "bb": [0.0, 1.0]})
        idf = {"aa": 1.0, "bb": 1.0}
        np.testing.assert_allclose(avg_des(["bb", "aa"], idf, store, k=1),
                                   [1.0, 0.0])

    def test_top_k_by_tfidf(self):
        store = word_store({"a": [3.0], "b": [1.0], "c": [100.0]})
        idf = {"a": 1.0, "b": 1.0, "c": 1.0}
        # tf: a=3, b=2, c=1 -> top two are a and b
        desc = ["a"] * 3 + ["b"] * 2 + ["c"]
        np.testing.assert_allclose(avg_des(desc, idf, store, k=2), [2.0])

    def test_nothing_usable_zero_flagged(self):
        store = word_store({"a": [1.0]})
        flags = []
        np.testing.assert_array_equal(
            avg_des(["zz"], {}, store, k=2, flags=flags), [0.0])
        assert flags

    def test_build_idf(self):
        idf = build_idf({"e1": ["a", "b"], "e2": ["a"]})
        assert idf["a"] == pytest.approx(0.0)
        assert idf["b"] == pytest.approx(np.log(2))


class TestAssemble:
    def _resources(self):
        ts = TypeSystem(types=("t1", "t2"), parent={})
        entity_store = EmbeddingStore(
            kind="sskip", dim=3, tokens=["m.1", "t1", "t2"],
            matrix=np.array([[1.0, 0.0, 0.0],
                             [1.0, 0.0, 0.0],
                             [0.0, 1.0, 0.0]]))
        return Resources(type_system=ts, word_store=word_store(
            {"alpha": [1.0, 2.0], "beta": [3.0, 4.0]}),
            entity_store=entity_store)

    def test_elr_plus_tc_dimension(self):
        res = self._resources()
        spec = RepresentationSpec.parse("elr,tc")
        v = assemble("m.1", "alpha", spec, res)
        assert v.shape == (3 + 2,)
        np.testing.assert_allclose(v[:3], [1.0, 0.0, 0.0])
        np.testing.assert_allclose(v[3:], [1.0, 0.0])

    def test_single_level_equals_wlr(self):
        res = self._resources()
        spec = RepresentationSpec.parse("wwlr")
        np.testing.assert_array_equal(
            assemble("m.1", "alpha beta", spec, res),
            wlr("alpha beta", res.word_store))

    def test_layout_records_order(self):
        res = self._resources()
        a = Assembler(RepresentationSpec.parse("elr,tc"), res)
        b = Assembler(RepresentationSpec.parse("tc,elr"), res)
        assert a.layout() == [("elr", 3), ("tc", 2)]
        assert b.layout() == [("tc", 2), ("elr", 3)]

    def test_missing_entity_vector_errors_with_id(self):
        res = self._resources()
        spec = RepresentationSpec.parse("elr")
        with pytest.raises(DataError, match="m.404"):
            assemble("m.404", "alpha", spec, res)

    def test_dimension_is_sum_over_all_level_subsets(self):
        import itertools
        res = self._resources()
        kinds = ["elr", "tc", "wwlr", "bow", "nsl"]
        names = ["alpha beta", "beta"]
        for r in range(1, len(kinds) + 1):
            for combo in itertools.combinations(kinds, r):
                spec = RepresentationSpec.parse(",".join(combo))
                asm = Assembler(spec, res).fit(names)
                dims = dict(asm.layout())
                v = asm.frozen_vector("m.1", "alpha beta")
                assert v.shape == (sum(dims.values()),)

    def test_duplicate_level_rejected(self):
        with pytest.raises(DataError, match="duplicate"):
            RepresentationSpec.parse("elr,elr")

    def test_two_clr_levels_rejected(self):
        with pytest.raises(DataError, match="one character-level"):
            RepresentationSpec.parse("clr-cnn,clr-lstm")


class TestPublishedDefaults:
    def test_hidden_units_for_known_combos(self):
        assert default_hidden_units(("elr",)) == 400
        assert default_hidden_units(("clr-cnn",)) == 800
        assert default_hidden_units(("elr", "swlr", "clr-cnn", "tc")) == 900
        assert default_hidden_units(("bow", "nsl")) == 300

    def test_cnn_bank_defaults(self):
        widths, maps = default_cnn_bank(("clr-cnn",))
        assert widths == tuple(range(1, 9)) and maps == 100
        widths, maps = default_cnn_bank(("elr", "clr-cnn"))
        assert widths == tuple(range(1, 8)) and maps == 100
        widths, maps = default_cnn_bank(("elr", "swlr", "clr-cnn", "tc"))
        assert widths == tuple(range(1, 8)) and maps == 50

    def test_char_dims_per_variant(self):
        rng = np.random.default_rng(0)
        vocab = CharVocab(chars=("a",))
        dims = {"clr-forward": 15, "clr-cnn": 10, "clr-lstm": 70,
                "clr-bilstm": 50}
        for kind, d in dims.items():
            enc = ClrEncoder(LevelSpec(kind=kind), vocab, rng)
            assert enc.char_dim == d
