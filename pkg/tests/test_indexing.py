import json
import random

import pytest

from lexfuse.indexing import (
    DuplicateDocumentError,
    InvertedIndex,
    TokenizerConfig,
    build_index,
    tokenize,
)


def sliding_ngrams(words, lo, hi):
    """Independent n-gram oracle."""
    out = []
    for n in range(lo, hi + 1):
        out.extend("_".join(words[i:i + n]) for i in range(len(words) - n + 1))
    return out


class TestTokenize:
    def test_unigram_identity(self):
        assert tokenize("The dog ran") == ["the", "dog", "ran"]

    def test_bigram_window(self):
        assert tokenize("a b c", TokenizerConfig(ngram_lo=2, ngram_hi=2)) == ["a_b", "b_c"]

    def test_empty(self):
        assert tokenize("", TokenizerConfig(ngram_lo=1, ngram_hi=3)) == []

    def test_matches_sliding_window_oracle(self):
        rng = random.Random(5)
        alphabet = ["red", "fox", "jumps", "very", "high", "x9"]
        for _ in range(100):
            words = [rng.choice(alphabet) for _ in range(rng.randrange(0, 12))]
            lo = rng.randrange(1, 4)
            hi = rng.randrange(lo, 5)
            got = tokenize(" ".join(words), TokenizerConfig(ngram_lo=lo, ngram_hi=hi))
            assert sorted(got) == sorted(sliding_ngrams(words, lo, hi))

    def test_min_token_len(self):
        config = TokenizerConfig(min_token_len=3)
        assert tokenize("an axe or saw", config) == ["axe", "saw"]

    def test_splits_on_punctuation_and_underscore(self):
        assert tokenize("semi-final_result: done.") == ["semi", "final", "result", "done"]

    def test_config_validation(self):
        with pytest.raises(ValueError):
            TokenizerConfig(ngram_lo=0)
        with pytest.raises(ValueError):
            TokenizerConfig(ngram_lo=3, ngram_hi=2)


class TestBuildIndex:
    def test_hand_counted_statistics(self):
        index = build_index([("d1", "a b"), ("d2", "b c")])
        assert index.doc_freq == {"a": 1, "b": 2, "c": 1}
        assert index.avgdl == 2
        assert index.doc_len == (2, 2)
        assert index.total_coll_tokens == 4

    def test_empty_corpus(self):
        index = build_index([])
        assert index.num_docs == 0
        assert index.avgdl == 0.0

    def test_repeated_term(self):
        index = build_index([("d1", "a a a")])
        assert index.term_frequency("a", 0) == 3
        assert index.doc_len == (3,)

    def test_duplicate_id_rejected(self):
        with pytest.raises(DuplicateDocumentError, match="dup1"):
            build_index([("dup1", "x"), ("dup1", "y")])

    def test_accepts_objects_with_id_and_text(self):
        class Doc:
            def __init__(self, id, text):
                self.id = id
                self.text = text

        index = build_index([Doc("d1", "hello world")])
        assert index.doc_ids == ("d1",)
        assert index.doc_len == (2,)

    def test_postings_sum_equals_collection_frequency(self):
        rng = random.Random(13)
        vocab = [f"w{i}" for i in range(30)]
        for _ in range(30):
            docs = [
                (f"d{i}", " ".join(rng.choice(vocab) for _ in range(rng.randrange(0, 40))))
                for i in range(rng.randrange(1, 12))
            ]
            index = build_index(docs)
            for term, postings in index.postings.items():
                assert sum(tf for _, tf in postings) == index.coll_freq[term]
                assert len(postings) == index.doc_freq[term]
                assert [d for d, _ in postings] == sorted(d for d, _ in postings)
            assert sum(index.doc_len) == index.total_coll_tokens

    def test_ngram_range_1_1_equals_plain(self):
        docs = [("d1", "the cat sat"), ("d2", "the dog ran far")]
        plain = build_index(docs, TokenizerConfig())
        same = build_index(docs, TokenizerConfig(ngram_lo=1, ngram_hi=1))
        assert plain.to_dict() == same.to_dict()


class TestSerialization:
    def test_round_trip(self, tmp_path):
        index = build_index(
            [("d1", "a b b"), ("d2", "c a")],
            TokenizerConfig(ngram_lo=1, ngram_hi=2),
        )
        path = tmp_path / "index.json"
        index.save(path)
        loaded = InvertedIndex.load(path)
        assert loaded.to_dict() == index.to_dict()
        assert loaded.avgdl == index.avgdl
        assert loaded.doc_freq == index.doc_freq
        assert loaded.config == index.config

    def test_rebuild_is_byte_identical(self, tmp_path):
        docs = [("d1", "alpha beta beta"), ("d2", "gamma alpha")]
        p1, p2 = tmp_path / "a.json", tmp_path / "b.json"
        build_index(docs).save(p1)
        build_index(docs).save(p2)
        assert p1.read_bytes() == p2.read_bytes()

    def test_version_header_present_and_checked(self, tmp_path):
        index = build_index([("d1", "x")])
        path = tmp_path / "index.json"
        index.save(path)
        data = json.loads(path.read_text())
        assert data["format"] == "lexfuse-index"
        assert data["version"] == 1
        data["format"] = "something-else"
        with pytest.raises(ValueError, match="not an index snapshot"):
            InvertedIndex.from_dict(data)
