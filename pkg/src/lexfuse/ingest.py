"""Heuristic cleaning of raw case documents and statute articles.

Case cleaning: drop the procedural preamble before the "[1]" marker,
strip suppression placeholders, remove French passages, hoist the summary
section to the front, and record the latest date found as the trial date.
Article cleaning: drop structural lead-in lines and parenthesized caption
headings.
"""

import json
import re
from dataclasses import dataclass
from datetime import date
from pathlib import Path

from .indexing import TokenizerConfig, tokenize

PREAMBLE_MARKER = "[1]"

PLACEHOLDERS = (
    "FRAGMENT_SUPPRESSED",
    "REFERENCE_SUPPRESSED",
    "CITATION_SUPPRESSED",
)

_PLACEHOLDER_RE = re.compile(r"\s*(?:" + "|".join(PLACEHOLDERS) + r")\s*")

# Top-50 function words per language, used by the stopword-ratio language
# heuristic. A paragraph counts as non-English only when English function
# words almost vanish AND French ones are clearly present. "a" is left off
# the English list: it is also the third-person form of French "avoir".
ENGLISH_FUNCTION_WORDS = frozenset(
    """the of and to in is was that it he for on are as with his they at be
    this have from or had by not but what all were we when your can said there
    use an each which she do how their if will up other about would""".split()
)
FRENCH_FUNCTION_WORDS = frozenset(
    """le la les de des du un une et en que qui dans pour pas sur au aux avec
    son sa ses ce cette ces il elle ils elles ne je tu nous vous se ou mais
    donc car ni y à été être avoir est sont fait plus par""".split()
)

_ENGLISH_RATIO_FLOOR = 0.02
_FRENCH_RATIO_FLOOR = 0.05
_MAJORITY_NON_ENGLISH = 0.80

_LANG_WORD_RE = re.compile(r"[^\W\d_]+", re.UNICODE)

_MONTHS = {
    name: i + 1
    for i, name in enumerate(
        "january february march april may june july august september "
        "october november december".split()
    )
}
_MONTH_ALT = "|".join(_MONTHS)
_DATE_PATTERNS = (
    # Month D, YYYY
    (re.compile(rf"\b({_MONTH_ALT})\s+(\d{{1,2}}),\s*(\d{{4}})\b", re.IGNORECASE),
     lambda m: (int(m.group(3)), _MONTHS[m.group(1).lower()], int(m.group(2)))),
    # D Month YYYY
    (re.compile(rf"\b(\d{{1,2}})\s+({_MONTH_ALT})\s+(\d{{4}})\b", re.IGNORECASE),
     lambda m: (int(m.group(3)), _MONTHS[m.group(2).lower()], int(m.group(1)))),
    # YYYY-MM-DD
    (re.compile(r"\b(\d{4})-(\d{2})-(\d{2})\b"),
     lambda m: (int(m.group(1)), int(m.group(2)), int(m.group(3)))),
    # MM/DD/YYYY
    (re.compile(r"\b(\d{1,2})/(\d{1,2})/(\d{4})\b"),
     lambda m: (int(m.group(3)), int(m.group(1)), int(m.group(2)))),
)


@dataclass(frozen=True)
class RawDocument:
    id: str
    text: str


@dataclass
class CleanDocument:
    id: str
    body: str
    summary: str | None = None
    trial_date: date | None = None
    placeholder_count: int = 0
    token_length: int = 0

    @property
    def text(self):
        """Indexable text with the summary hoisted to the front."""
        if self.summary:
            return self.summary + "\n\n" + self.body if self.body else self.summary
        return self.body


@dataclass
class ArticleEntry:
    article_id: str
    content: str


@dataclass
class IngestStats:
    documents: int = 0
    placeholders_removed: int = 0
    paragraphs_dropped: int = 0
    kept_verbatim_ids: list = None
    dated_documents: int = 0

    def __post_init__(self):
        if self.kept_verbatim_ids is None:
            self.kept_verbatim_ids = []


def strip_preamble(text):
    """Return the text from the first "[1]" marker onward, or all of it."""
    pos = text.find(PREAMBLE_MARKER)
    return text if pos < 0 else text[pos:]


def remove_placeholders(text):
    """Remove suppression placeholders; return (cleaned, count removed).

    Whitespace around each removed placeholder collapses to one space;
    leading/trailing residue is stripped.
    """
    cleaned, count = _PLACEHOLDER_RE.subn(" ", text)
    if count:
        cleaned = cleaned.strip()
    return cleaned, count


def _language_word_ratios(paragraph):
    words = _LANG_WORD_RE.findall(paragraph.lower())
    if not words:
        return 1.0, 0.0  # empty/blank blocks are never "French"
    eng = sum(1 for w in words if w in ENGLISH_FUNCTION_WORDS) / len(words)
    fra = sum(1 for w in words if w in FRENCH_FUNCTION_WORDS) / len(words)
    return eng, fra


def _is_non_english(paragraph):
    eng, fra = _language_word_ratios(paragraph)
    return eng < _ENGLISH_RATIO_FLOOR and fra >= _FRENCH_RATIO_FLOOR


def _filter_non_english(text):
    """Return (text, dropped_count, kept_verbatim)."""
    if not text.strip():
        return text, 0, False
    paragraphs = re.split(r"\n\s*\n", text)
    flags = [_is_non_english(p) for p in paragraphs]
    dropped = sum(flags)
    if dropped == 0:
        return text, 0, False
    if dropped / len(paragraphs) > _MAJORITY_NON_ENGLISH:
        # Mostly French: keep the document as-is and let the caller flag it.
        return text, 0, True
    kept = [p for p, bad in zip(paragraphs, flags) if not bad]
    return "\n\n".join(kept), dropped, False


def filter_non_english(text):
    """Drop paragraphs classified as French by the stopword-ratio heuristic.

    Documents that are mostly French are returned verbatim (the pipeline
    records a flag instead of translating them).
    """
    filtered, _, _ = _filter_non_english(text)
    return filtered


def _looks_like_heading(stripped):
    if not stripped or len(stripped) > 60:
        return False
    if stripped.endswith(":"):
        return True
    if stripped.endswith((".", "!", "?", ",", ";")):
        return False
    words = stripped.split()
    if not 1 <= len(words) <= 6 or not stripped[0].isupper():
        return False
    # Title case: every substantial word capitalized ("Reasons for Judgment").
    return all(w[0].isupper() for w in words if w[0].isalpha() and len(w) > 3)


def _find_summary(text):
    """Locate the summary section; return (heading_line, end_line, body) or None.

    The section runs from the line after a standalone "summary"/"summary:"
    heading to the next blank-line-delimited heading (or end of text).
    """
    lines = text.splitlines()
    start = None
    for i, line in enumerate(lines):
        if line.strip().lower() in ("summary", "summary:"):
            start = i
            break
    if start is None:
        return None
    end = len(lines)
    for j in range(start + 1, len(lines)):
        preceded_by_blank = lines[j - 1].strip() == "" and j - 1 > start
        if preceded_by_blank and _looks_like_heading(lines[j].strip()):
            end = j
            break
    section = "\n".join(lines[start + 1:end]).strip()
    if not section:
        return None
    return start, end, section


def extract_summary(text):
    """Return the text of the summary section, or None when absent/empty."""
    found = _find_summary(text)
    return found[2] if found else None


def extract_trial_date(text):
    """Latest parseable date in the text, or None.

    Recognized formats: "Month D, YYYY", "D Month YYYY", "YYYY-MM-DD",
    "MM/DD/YYYY". Calendar-invalid matches are skipped; bare years are
    not treated as dates.
    """
    best = None
    for pattern, extract in _DATE_PATTERNS:
        for match in pattern.finditer(text):
            try:
                candidate = date(*extract(match))
            except ValueError:
                continue
            if best is None or candidate > best:
                best = candidate
    return best


def preprocess_case(raw, tokenizer_config=None):
    """Run the full case-cleaning pipeline on one raw document.

    The trial date and the placeholder count are taken from the original
    text so earlier cleaning steps cannot destroy their evidence.
    """
    doc, _ = _preprocess_case_ex(raw, tokenizer_config)
    return doc


def _preprocess_case_ex(raw, tokenizer_config=None):
    config = tokenizer_config or TokenizerConfig()
    trial = extract_trial_date(raw.text)
    _, placeholder_count = remove_placeholders(raw.text)

    body = strip_preamble(raw.text)
    body, _ = remove_placeholders(body)
    body, dropped, kept_verbatim = _filter_non_english(body)

    summary = None
    found = _find_summary(body)
    if found:
        start, end, summary = found
        lines = body.splitlines()
        body = "\n".join(lines[:start] + lines[end:]).strip()

    doc = CleanDocument(
        id=raw.id,
        body=body,
        summary=summary,
        trial_date=trial,
        placeholder_count=placeholder_count,
    )
    doc.token_length = len(tokenize(doc.text, config))
    return doc, (dropped, kept_verbatim)


_LEAD_IN_RE = re.compile(r"^(Part|Chapter|Section|Subsection)\s")
_CAPTION_RE = re.compile(r"^\(.*\)$")


def preprocess_article(raw):
    """Clean one statute article: drop lead-in lines and caption headings."""
    kept = []
    for line in raw.text.splitlines():
        stripped = line.strip()
        if _LEAD_IN_RE.match(stripped):
            continue
        if stripped and _CAPTION_RE.match(stripped):
            continue
        kept.append(line)
    return ArticleEntry(article_id=raw.id, content="\n".join(kept).strip())


# -- corpus I/O -------------------------------------------------------------

def load_raw_corpus(corpus_dir):
    """Read ``<id>.txt`` files from a directory, sorted by id."""
    root = Path(corpus_dir)
    docs = []
    for path in sorted(root.glob("*.txt")):
        docs.append(RawDocument(id=path.stem, text=path.read_text(encoding="utf-8")))
    return docs


def preprocess_corpus(raws, tokenizer_config=None):
    """Clean every raw case document; return (docs, stats)."""
    stats = IngestStats()
    docs = []
    for raw in raws:
        doc, (dropped, kept_verbatim) = _preprocess_case_ex(raw, tokenizer_config)
        docs.append(doc)
        stats.documents += 1
        stats.placeholders_removed += doc.placeholder_count
        stats.paragraphs_dropped += dropped
        if kept_verbatim:
            stats.kept_verbatim_ids.append(doc.id)
        if doc.trial_date is not None:
            stats.dated_documents += 1
    return docs, stats


def write_clean_jsonl(docs, path):
    with open(path, "w", encoding="utf-8") as fh:
        for doc in sorted(docs, key=lambda d: d.id):
            fh.write(json.dumps(
                {
                    "id": doc.id,
                    "body": doc.body,
                    "summary": doc.summary,
                    "trial_date": doc.trial_date.isoformat() if doc.trial_date else None,
                    "placeholder_count": doc.placeholder_count,
                    "token_length": doc.token_length,
                },
                sort_keys=True,
                ensure_ascii=False,
            ))
            fh.write("\n")


def read_clean_jsonl(path):
    docs = []
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            if not line.strip():
                continue
            rec = json.loads(line)
            docs.append(CleanDocument(
                id=rec["id"],
                body=rec["body"],
                summary=rec["summary"],
                trial_date=date.fromisoformat(rec["trial_date"]) if rec["trial_date"] else None,
                placeholder_count=rec["placeholder_count"],
                token_length=rec["token_length"],
            ))
    return docs
