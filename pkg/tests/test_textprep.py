import random
from collections import Counter

import numpy as np
import pytest
from hypothesis import given, strategies as st

from newsmil.errors import FormatError, ParseError
from newsmil.tensor import make_rng
from newsmil.textprep import (UNK_TOKEN, Vocabulary, build_vocab, default_stopwords,
                              encode_title, init_embeddings, load_pretrained,
                              load_stopwords, tokenize)


class TestTokenize:
    def test_apostrophe_removed(self):
        assert tokenize("China's Stocks Rise") == ["chinas", "stocks", "rise"]

    def test_typographic_apostrophe(self):
        assert tokenize("China’s Stocks Rise") == ["chinas", "stocks", "rise"]

    def test_empty(self):
        assert tokenize("") == []

    def test_boundary_punctuation_internal_kept(self):
        # applying the documented rules by hand: trailing periods stripped,
        # internal periods and hyphens kept
        assert tokenize("U.S. Gulf Crude-Oil Premiums Increase") == \
            ["u.s", "gulf", "crude-oil", "premiums", "increase"]

    def test_digits_and_symbols(self):
        assert tokenize("Premium at 0.31% on Sept. 19") == \
            ["premium", "at", "0.31", "on", "sept", "19"]
        assert tokenize("$10 Trillion Cost.") == ["10", "trillion", "cost"]

    def test_pure_punctuation_dropped(self):
        assert tokenize("-- ... ***") == []

    @given(st.text(max_size=60))
    def test_tokens_have_alnum_boundaries(self, text):
        for tok in tokenize(text):
            assert tok
            assert tok[0].isalnum() and tok[-1].isalnum()
            assert tok == tok.lower()
            assert "'" not in tok and "’" not in tok


class TestBuildVocab:
    def test_min_count_boundary_kept(self):
        corpus = [["stocks", "rise", "fast"]] * 5
        vocab = build_vocab(corpus, min_count=5)
        assert {"stocks", "rise", "fast"} <= set(vocab.tokens)

    def test_min_count_boundary_dropped(self):
        corpus = [["stocks", "rise", "fast"]] * 5
        vocab = build_vocab(corpus, min_count=6)
        assert vocab.tokens == (UNK_TOKEN,)

    def test_matches_frequency_count_oracle(self):
        rng = random.Random(3)
        words = [f"w{i}" for i in range(30)]
        corpus = [[rng.choice(words) for _ in range(6)] for _ in range(40)]
        counts = Counter(t for title in corpus for t in title)
        vocab = build_vocab(corpus, min_count=4)
        expected = {t for t, c in counts.items() if c >= 4}
        assert set(vocab.tokens) - {UNK_TOKEN} == expected

    def test_stopwords_excluded_even_if_frequent(self):
        corpus = [["the", "market", "rallies"]] * 10
        vocab = build_vocab(corpus, stopwords=frozenset(["the"]), min_count=2)
        assert "the" not in vocab
        assert "market" in vocab

    def test_empty_corpus_rejected(self):
        with pytest.raises(ValueError):
            build_vocab([])

    def test_order_independence(self):
        rng = random.Random(11)
        words = [f"w{i}" for i in range(20)]
        corpus = [[rng.choice(words) for _ in range(5)] for _ in range(50)]
        shuffled = corpus[:]
        rng.shuffle(shuffled)
        a = build_vocab(corpus, min_count=3)
        b = build_vocab(shuffled, min_count=3)
        assert a.tokens == b.tokens  # ids identical, not just the token set

    def test_ids_dense_and_unk_reserved(self):
        vocab = build_vocab([["b", "a", "b"]], min_count=1)
        assert vocab.unk_id == 0
        assert vocab.tokens[0] == UNK_TOKEN
        assert sorted(vocab.index.values()) == list(range(len(vocab)))
        # descending frequency, ties lexicographic: b(2), a(1)
        assert vocab.tokens == (UNK_TOKEN, "b", "a")


class TestEncodeTitle:
    @pytest.fixture
    def vocab(self):
        return build_vocab([["up", "down", "flat"]] * 3, min_count=3)

    def test_known_tokens(self, vocab):
        ids = encode_title(["up", "down"], vocab)
        assert ids == (vocab.index["up"], vocab.index["down"])

    def test_unknown_tokens(self, vocab):
        assert encode_title(["mystery", "words"], vocab) == (0, 0)

    def test_matches_dict_lookup_oracle(self, vocab):
        tokens = ["up", "mystery", "flat", "down", "nope"]
        expected = tuple(vocab.index.get(t, 0) for t in tokens)
        assert encode_title(tokens, vocab) == expected

    def test_roundtrip_for_in_vocab(self, vocab):
        for tok in ("up", "down", "flat"):
            assert vocab.token_of(vocab.index[tok]) == tok


class TestEmbeddings:
    @pytest.fixture
    def vocab(self):
        return build_vocab([["alpha", "beta", "gamma"]] * 5, min_count=1)

    def test_file_vector_taken_exactly(self, tmp_path, vocab):
        path = tmp_path / "vec.txt"
        path.write_text("alpha 1.5 -2.25 0.125\nbeta 0.5 0.5 0.5\n")
        emb = load_pretrained(path, vocab, 3, make_rng(0))
        np.testing.assert_array_equal(emb.vectors[vocab.index["alpha"]], [1.5, -2.25, 0.125])

    def test_missing_token_in_init_range(self, tmp_path, vocab):
        path = tmp_path / "vec.txt"
        path.write_text("alpha 1.0 1.0 1.0\n")
        emb = load_pretrained(path, vocab, 3, make_rng(0))
        row = emb.vectors[vocab.index["gamma"]]
        assert np.all(np.abs(row) < 0.05)
        assert np.any(row != 0)

    def test_reload_same_seed_identical(self, tmp_path, vocab):
        path = tmp_path / "vec.txt"
        path.write_text("alpha 1.0 1.0 1.0\n")
        a = load_pretrained(path, vocab, 3, make_rng(4))
        b = load_pretrained(path, vocab, 3, make_rng(4))
        np.testing.assert_array_equal(a.vectors, b.vectors)

    def test_unknown_row_zero(self, tmp_path, vocab):
        path = tmp_path / "vec.txt"
        path.write_text("alpha 1.0 1.0 1.0\n")
        emb = load_pretrained(path, vocab, 3, make_rng(0))
        np.testing.assert_array_equal(emb.vectors[vocab.unk_id], np.zeros(3))

    def test_wrong_field_count_names_line(self, tmp_path, vocab):
        path = tmp_path / "vec.txt"
        path.write_text("alpha 1.0 1.0 1.0\nbeta 1.0\n")
        with pytest.raises(ParseError) as err:
            load_pretrained(path, vocab, 3, make_rng(0))
        assert err.value.line == 2

    def test_dim_mismatch_is_format_error(self, tmp_path, vocab):
        path = tmp_path / "vec.txt"
        path.write_text("alpha 1.0 1.0\n")
        with pytest.raises(FormatError):
            load_pretrained(path, vocab, 3, make_rng(0))

    def test_random_init_deterministic(self, vocab):
        a = init_embeddings(vocab, 8, make_rng(2))
        b = init_embeddings(vocab, 8, make_rng(2))
        np.testing.assert_array_equal(a.vectors, b.vectors)
        np.testing.assert_array_equal(a.vectors[vocab.unk_id], np.zeros(8))

    def test_scale_bounds(self, vocab):
        emb = init_embeddings(vocab, 8, make_rng(2), scale=0.5)
        assert np.all(np.abs(emb.vectors) < 0.5)
        assert np.abs(emb.vectors[1:]).max() > 0.05


class TestStopwords:
    def test_load_ignores_comments_and_blanks(self, tmp_path):
        path = tmp_path / "stop.txt"
        path.write_text("# comment\nthe\n\nand\n")
        assert load_stopwords(path) == frozenset({"the", "and"})

    def test_default_list_present(self):
        words = default_stopwords()
        assert "the" in words and "and" in words
        assert len(words) > 100


def test_vocabulary_len_and_contains():
    vocab = Vocabulary(tokens=(UNK_TOKEN, "x"), index={UNK_TOKEN: 0, "x": 1}, min_count=1)
    assert len(vocab) == 2
    assert "x" in vocab and "y" not in vocab
