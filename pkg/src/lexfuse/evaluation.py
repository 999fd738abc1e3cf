"""Competition-style retrieval metrics.

Case retrieval pools true/false positives and misses over all queries
before computing precision, recall, and F1 (micro average). Statute
retrieval averages per-query precision and recall first and derives
F2 = 5PR / (4P + R) from the averaged values (macro average, recall
weighted four times precision). Zero denominators yield 0 and are
flagged in the report.
"""

import json
from dataclasses import dataclass, field
from pathlib import Path

from .scorers import ScoredList


@dataclass
class MetricReport:
    precision: float
    recall: float
    f_measure: float
    per_query: dict = field(default_factory=dict)
    tp: int | None = None
    fp: int | None = None
    fn: int | None = None
    zero_division: tuple = ()

    def to_dict(self):
        out = {
            "precision": self.precision,
            "recall": self.recall,
            "f_measure": self.f_measure,
            "per_query": self.per_query,
        }
        if self.tp is not None:
            out["counts"] = {"tp": self.tp, "fp": self.fp, "fn": self.fn}
        if self.zero_division:
            out["zero_division"] = list(self.zero_division)
        return out


def _query_universe(runs, qrels):
    return sorted(set(runs) | set(qrels))


def _retrieved(runs, qid):
    slist = runs.get(qid)
    return [] if slist is None else slist.doc_ids()


def micro_prf1(runs, qrels):
    """Pooled precision/recall/F1 over all queries."""
    tp = fp = fn = 0
    per_query = {}
    for qid in _query_universe(runs, qrels):
        retrieved = set(_retrieved(runs, qid))
        relevant = set(qrels.get(qid, ()))
        q_tp = len(retrieved & relevant)
        q_fp = len(retrieved - relevant)
        q_fn = len(relevant - retrieved)
        tp += q_tp
        fp += q_fp
        fn += q_fn
        per_query[qid] = {"tp": q_tp, "fp": q_fp, "fn": q_fn}
    flags = []
    precision = tp / (tp + fp) if tp + fp else 0.0
    if not tp + fp:
        flags.append("precision")
    recall = tp / (tp + fn) if tp + fn else 0.0
    if not tp + fn:
        flags.append("recall")
    f1 = 2 * precision * recall / (precision + recall) if precision + recall else 0.0
    if not precision + recall:
        flags.append("f_measure")
    return MetricReport(
        precision=precision, recall=recall, f_measure=f1,
        per_query=per_query, tp=tp, fp=fp, fn=fn, zero_division=tuple(flags),
    )


def macro_prf2(runs, qrels):
    """Per-query precision and recall averaged, then F2 from the averages."""
    precisions = []
    recalls = []
    per_query = {}
    for qid in _query_universe(runs, qrels):
        retrieved = _retrieved(runs, qid)
        relevant = set(qrels.get(qid, ()))
        correct = len(set(retrieved) & relevant)
        q_p = correct / len(retrieved) if retrieved else 0.0
        q_r = correct / len(relevant) if relevant else 0.0
        precisions.append(q_p)
        recalls.append(q_r)
        per_query[qid] = {"precision": q_p, "recall": q_r}
    flags = []
    if precisions:
        precision = sum(precisions) / len(precisions)
        recall = sum(recalls) / len(recalls)
    else:
        precision = recall = 0.0
        flags.extend(["precision", "recall"])
    denom = 4 * precision + recall
    f2 = 5 * precision * recall / denom if denom else 0.0
    if not denom:
        flags.append("f_measure")
    return MetricReport(
        precision=precision, recall=recall, f_measure=f2,
        per_query=per_query, zero_division=tuple(flags),
    )


def mean_average_precision(runs, qrels):
    """Mean over queries of average precision; unretrieved relevants add 0."""
    ap_values = []
    for qid in sorted(qrels):
        relevant = set(qrels[qid])
        if not relevant:
            continue
        hits = 0
        precision_sum = 0.0
        for rank, doc_id in enumerate(_retrieved(runs, qid), 1):
            if doc_id in relevant:
                hits += 1
                precision_sum += hits / rank
        ap_values.append(precision_sum / len(relevant))
    return sum(ap_values) / len(ap_values) if ap_values else 0.0


def recall_at_k(runs, qrels, k):
    """Macro average of |relevant in top-k| / |relevant|."""
    if k < 1:
        raise ValueError("k must be >= 1")
    values = []
    for qid in sorted(qrels):
        relevant = set(qrels[qid])
        if not relevant:
            continue
        top = set(_retrieved(runs, qid)[:k])
        values.append(len(top & relevant) / len(relevant))
    return sum(values) / len(values) if values else 0.0


# -- file formats -------------------------------------------------------------

def load_qrels(path):
    """Read ``{"query_id": ["doc_id", ...]}`` into {query_id: set}."""
    data = json.loads(Path(path).read_text(encoding="utf-8"))
    return {qid: set(docs) for qid, docs in data.items()}


def write_qrels(qrels, path):
    data = {qid: sorted(docs) for qid, docs in sorted(qrels.items())}
    Path(path).write_text(json.dumps(data, sort_keys=True, indent=1), encoding="utf-8")


def write_run_file(runs, path, tag="lexfuse"):
    """``query_id<TAB>doc_id<TAB>rank<TAB>score<TAB>run_tag`` per entry."""
    with open(path, "w", encoding="utf-8") as fh:
        for qid in sorted(runs):
            for rank, (doc_id, score) in enumerate(runs[qid].entries, 1):
                fh.write(f"{qid}\t{doc_id}\t{rank}\t{score:.6f}\t{tag}\n")


def read_run_file(path):
    per_query = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.rstrip("\n")
            if not line:
                continue
            parts = line.split("\t")
            if len(parts) != 5:
                raise ValueError(f"{path}:{lineno}: expected 5 tab-separated fields")
            qid, doc_id, _rank, score, _tag = parts
            entries = per_query.setdefault(qid, [])
            if any(d == doc_id for d, _ in entries):
                raise ValueError(f"{path}:{lineno}: duplicate candidate {doc_id!r}")
            entries.append((doc_id, float(score)))
    return {qid: ScoredList(qid, entries) for qid, entries in per_query.items()}


def write_report(report, path, extra=None):
    data = report.to_dict()
    if extra:
        data.update(extra)
    Path(path).write_text(
        json.dumps(data, sort_keys=True, indent=1), encoding="utf-8"
    )
