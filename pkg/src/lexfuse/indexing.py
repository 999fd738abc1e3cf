"""Tokenization and the immutable inverted index behind the lexical scorers."""

import json
import re
from collections import Counter
from dataclasses import asdict, dataclass
from pathlib import Path

# Letters and digits only; "_" is a boundary, so n-gram joints stay unambiguous.
_WORD_RE = re.compile(r"[^\W_]+", re.UNICODE)

INDEX_FORMAT = "lexfuse-index"
INDEX_VERSION = 1


class DuplicateDocumentError(ValueError):
    """Two documents in one corpus share an id."""


class UnknownDocumentError(KeyError):
    """A document ordinal or id is not present in the index."""


@dataclass(frozen=True)
class TokenizerConfig:
    lowercase: bool = True
    min_token_len: int = 1
    ngram_lo: int = 1
    ngram_hi: int = 1

    def __post_init__(self):
        if self.min_token_len < 1:
            raise ValueError("min_token_len must be >= 1")
        if self.ngram_lo < 1:
            raise ValueError("ngram_lo must be >= 1")
        if self.ngram_hi < self.ngram_lo:
            raise ValueError("ngram_hi must be >= ngram_lo")


#: Range used for the n-gram BM25 feature unless configured otherwise.
NGRAM_DEFAULT = TokenizerConfig(ngram_lo=1, ngram_hi=3)


def tokenize(text, config=TokenizerConfig()):
    """Split ``text`` on non-alphanumeric boundaries and expand n-grams.

    Tokens shorter than ``min_token_len`` are dropped before expansion.
    Every contiguous n-gram for n in [ngram_lo, ngram_hi] is emitted,
    joined with "_".
    """
    source = text.lower() if config.lowercase else text
    words = _WORD_RE.findall(source)
    if config.min_token_len > 1:
        words = [w for w in words if len(w) >= config.min_token_len]
    if config.ngram_lo == 1 and config.ngram_hi == 1:
        return words
    out = []
    for n in range(config.ngram_lo, config.ngram_hi + 1):
        if n == 1:
            out.extend(words)
        else:
            out.extend("_".join(words[i:i + n]) for i in range(len(words) - n + 1))
    return out


class InvertedIndex:
    """Immutable term statistics for a fixed corpus.

    Holds everything the scorers need: postings (term frequency per
    document), document frequencies, per-document and average lengths,
    and collection frequencies for the smoothed language model.
    """

    def __init__(self, config, doc_ids, doc_len, postings):
        self.config = config
        self.doc_ids = tuple(doc_ids)
        self.doc_len = tuple(doc_len)
        self.postings = postings  # term -> list[(ordinal, tf)] sorted by ordinal
        self.doc_freq = {t: len(p) for t, p in postings.items()}
        self.coll_freq = {t: sum(tf for _, tf in p) for t, p in postings.items()}
        self.total_coll_tokens = sum(self.doc_len)
        self.avgdl = self.total_coll_tokens / len(self.doc_len) if self.doc_len else 0.0
        self._ordinals = {doc_id: i for i, doc_id in enumerate(self.doc_ids)}

    @property
    def num_docs(self):
        return len(self.doc_ids)

    def ordinal_of(self, doc_id):
        try:
            return self._ordinals[doc_id]
        except KeyError:
            raise UnknownDocumentError(f"unknown document id: {doc_id!r}") from None

    def term_frequency(self, term, ordinal):
        if not 0 <= ordinal < self.num_docs:
            raise UnknownDocumentError(f"unknown document ordinal: {ordinal}")
        for doc, tf in self.postings.get(term, ()):
            if doc == ordinal:
                return tf
            if doc > ordinal:
                break
        return 0

    def collection_prob(self, term):
        """p(term | collection); 0 for unseen terms or an empty collection."""
        if self.total_coll_tokens == 0:
            return 0.0
        return self.coll_freq.get(term, 0) / self.total_coll_tokens

    # -- serialization -----------------------------------------------------

    def to_dict(self):
        return {
            "format": INDEX_FORMAT,
            "version": INDEX_VERSION,
            "config": asdict(self.config),
            "doc_ids": list(self.doc_ids),
            "doc_len": list(self.doc_len),
            "postings": {t: [[d, tf] for d, tf in p] for t, p in self.postings.items()},
        }

    @classmethod
    def from_dict(cls, data):
        if data.get("format") != INDEX_FORMAT:
            raise ValueError(f"not an index snapshot: format={data.get('format')!r}")
        if data.get("version") != INDEX_VERSION:
            raise ValueError(f"unsupported index version: {data.get('version')!r}")
        config = TokenizerConfig(**data["config"])
        postings = {t: [(d, tf) for d, tf in p] for t, p in data["postings"].items()}
        return cls(config, data["doc_ids"], data["doc_len"], postings)

    def save(self, path):
        Path(path).write_text(
            json.dumps(self.to_dict(), sort_keys=True, ensure_ascii=False),
            encoding="utf-8",
        )

    @classmethod
    def load(cls, path):
        return cls.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))


def _doc_pairs(docs):
    for doc in docs:
        if isinstance(doc, tuple):
            yield doc
        else:
            yield doc.id, doc.text


def build_index(docs, config=TokenizerConfig()):
    """Build an InvertedIndex from ``docs``.

    ``docs`` is an iterable of ``(id, text)`` pairs or of objects with
    ``id`` and ``text`` attributes. Deterministic given input order;
    duplicate ids are rejected.
    """
    doc_ids = []
    doc_len = []
    postings = {}
    seen = set()
    for doc_id, text in _doc_pairs(docs):
        if doc_id in seen:
            raise DuplicateDocumentError(f"duplicate document id: {doc_id!r}")
        seen.add(doc_id)
        ordinal = len(doc_ids)
        doc_ids.append(doc_id)
        terms = tokenize(text, config)
        doc_len.append(len(terms))
        for term, tf in Counter(terms).items():
            postings.setdefault(term, []).append((ordinal, tf))
    return InvertedIndex(config, doc_ids, doc_len, postings)
