"""Lexical relevance scorers over an inverted index.

BM25:
    score(d, q) = sum_i IDF(t_i) * TF(t_i, d) * (k1 + 1)
                        / (TF(t_i, d) + k1 * (1 - b + b * len(d) / avgdl))
    with IDF(t) = ln(1 + (N - df + 0.5) / (df + 0.5)).

Query likelihood with Dirichlet smoothing:
    score(d, q) = sum_i ln( (tf(q_i, d) + mu * p(q_i|C)) / (len(d) + mu) )
    Query terms with zero collection frequency are dropped first.

"bm25_ngram" is plain BM25 evaluated over an n-gram-expanded index.
"""

import math
from collections import Counter
from dataclasses import dataclass

from .indexing import UnknownDocumentError, tokenize


@dataclass(frozen=True)
class Bm25Params:
    k1: float = 3.0
    b: float = 1.0

    def __post_init__(self):
        if self.k1 < 0:
            raise ValueError("k1 must be >= 0")
        if not 0.0 <= self.b <= 1.0:
            raise ValueError("b must be in [0, 1]")


#: Case-retrieval feature setting and statute-retrieval setting.
TASK1_BM25 = Bm25Params(k1=3.0, b=1.0)
TASK3_BM25 = Bm25Params(k1=0.99, b=0.75)


@dataclass(frozen=True)
class QldParams:
    mu: float = 2000.0

    def __post_init__(self):
        if self.mu <= 0:
            raise ValueError("mu must be > 0")


SCORER_NAMES = ("bm25", "qld", "bm25_ngram")


@dataclass
class ScoredList:
    """Per-query ranking: (doc_id, score) sorted by score desc, id asc."""

    query_id: str
    entries: list

    @classmethod
    def from_scores(cls, query_id, scores):
        """Build from a {doc_id: score} mapping, applying the sort order."""
        items = sorted(scores.items(), key=lambda kv: (-kv[1], kv[0]))
        return cls(query_id=query_id, entries=items)

    def validate(self):
        seen = set()
        for doc_id, _ in self.entries:
            if doc_id in seen:
                raise ValueError(f"duplicate doc id in list: {doc_id!r}")
            seen.add(doc_id)
        keys = [(-score, doc_id) for doc_id, score in self.entries]
        for a, b in zip(keys, keys[1:]):
            if a >= b:
                raise ValueError(f"entries out of order near {b[1]!r}")
        return self

    def doc_ids(self):
        return [doc_id for doc_id, _ in self.entries]

    def __len__(self):
        return len(self.entries)


def _idf(index, term):
    df = index.doc_freq.get(term, 0)
    return math.log(1.0 + (index.num_docs - df + 0.5) / (df + 0.5))


def _length_norm(index, ordinal, params):
    ratio = index.doc_len[ordinal] / index.avgdl if index.avgdl > 0 else 0.0
    return params.k1 * (1.0 - params.b + params.b * ratio)


def bm25_score(index, query_terms, doc, params=TASK1_BM25):
    """BM25 score of document ordinal ``doc`` for the given query terms.

    Repeated query terms contribute once per occurrence; terms absent
    from the document contribute exactly 0.
    """
    if not 0 <= doc < index.num_docs:
        raise UnknownDocumentError(f"unknown document ordinal: {doc}")
    norm = _length_norm(index, doc, params)
    score = 0.0
    for term in query_terms:
        tf = index.term_frequency(term, doc)
        if tf == 0:
            continue
        score += _idf(index, term) * tf * (params.k1 + 1.0) / (tf + norm)
    return score


def qld_score(index, query_terms, doc, params=QldParams()):
    """Dirichlet-smoothed query log-likelihood for document ordinal ``doc``."""
    if not 0 <= doc < index.num_docs:
        raise UnknownDocumentError(f"unknown document ordinal: {doc}")
    mu = params.mu
    denom = index.doc_len[doc] + mu
    score = 0.0
    for term in query_terms:
        p_coll = index.collection_prob(term)
        if p_coll == 0.0:
            continue
        tf = index.term_frequency(term, doc)
        score += math.log((tf + mu * p_coll) / denom)
    return score


def score_all(index, query_id, query_text, scorer="bm25", params=None):
    """Score every document in the index for one query.

    The query is tokenized with the index's own tokenizer config, so the
    n-gram index sees n-gram query terms. Query documents are not
    excluded here; that is the post-processing stage's job.
    """
    if scorer not in SCORER_NAMES:
        raise ValueError(f"unknown scorer: {scorer!r}")
    terms = tokenize(query_text, index.config)
    n = index.num_docs
    scores = [0.0] * n
    if scorer in ("bm25", "bm25_ngram"):
        p = params or TASK1_BM25
        norms = [_length_norm(index, d, p) for d in range(n)]
        for term, q_count in sorted(Counter(terms).items()):
            postings = index.postings.get(term)
            if not postings:
                continue
            idf = _idf(index, term)
            for doc, tf in postings:
                scores[doc] += q_count * idf * tf * (p.k1 + 1.0) / (tf + norms[doc])
    else:
        p = params or QldParams()
        mu = p.mu
        live = [(t, c, index.collection_prob(t)) for t, c in sorted(Counter(terms).items())
                if index.collection_prob(t) > 0.0]
        base = sum(c * math.log(mu * pc) for _, c, pc in live)
        for doc in range(n):
            scores[doc] = base - sum(c for _, c, _ in live) * math.log(index.doc_len[doc] + mu)
        for term, q_count, p_coll in live:
            for doc, tf in index.postings.get(term, ()):
                scores[doc] += q_count * (
                    math.log(tf + mu * p_coll) - math.log(mu * p_coll)
                )
    return ScoredList.from_scores(query_id, {index.doc_ids[d]: scores[d] for d in range(n)})


def top_k(scored, k):
    """Prefix of length min(k, len); k must be non-negative."""
    if k < 0:
        raise ValueError("k must be >= 0")
    return ScoredList(query_id=scored.query_id, entries=list(scored.entries[:k]))


# -- score dumps -------------------------------------------------------------

def write_score_dump(lists, path):
    """Write ``query_id<TAB>doc_id<TAB>score`` lines, six-decimal scores."""
    with open(path, "w", encoding="utf-8") as fh:
        for slist in sorted(lists, key=lambda s: s.query_id):
            for doc_id, score in slist.entries:
                fh.write(f"{slist.query_id}\t{doc_id}\t{score:.6f}\n")


def read_score_dump(path):
    """Parse a score dump back into {query_id: ScoredList}."""
    per_query = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.rstrip("\n")
            if not line:
                continue
            parts = line.split("\t")
            if len(parts) != 3:
                raise ValueError(f"{path}:{lineno}: expected 3 tab-separated fields")
            qid, doc_id, score = parts
            per_query.setdefault(qid, {})
            if doc_id in per_query[qid]:
                raise ValueError(f"{path}:{lineno}: duplicate pair ({qid}, {doc_id})")
            per_query[qid][doc_id] = float(score)
    return {qid: ScoredList.from_scores(qid, scores) for qid, scores in per_query.items()}
