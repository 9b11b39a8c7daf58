"""Document ingestion and two-stage requirements extraction.

Stage one flags candidate requirement sentences (modal-verb annotation);
stage two converts each candidate into a structured requirement object with
a span-level trace back to its source.  The baseline extractor is a pure
deterministic function of the document text; external model adapters are
exercised only through record/replay fixtures.
"""

from __future__ import annotations

import hashlib
import json
import os
import re
import unicodedata
from dataclasses import dataclass, field
from enum import Enum

from .core import Modality, Project, ReqType, Requirement, SourceRef, TraceKind
from .units import UNIT_TABLE

_UNIT_TOKENS = frozenset(u.lower() for u in UNIT_TABLE)


class DocumentError(Exception):
    pass


class AdapterError(Exception):
    pass


class DocFormat(str, Enum):
    PLAIN_TEXT = "PlainText"
    MARKDOWN = "Markdown"


MODAL_TOKENS = ("shall", "must", "will", "should")
_MODAL_RE = re.compile(r"\b(shall|must|will|should)\b", re.IGNORECASE)

# words that never participate in a noun phrase
STOPWORDS = frozenset(
    """
    a an the this that these those its it their his her our your my
    and or nor but not no any all each every both few many much some such
    to of in on at for with from by as into onto between through during
    than then when where which who whom whose what while if unless until
    is are was were be been being has have had do does did done
    shall must will should may might can could would
    more less least most least-significant only same other another
    """.split()
)

# verbs recognized as actions so they never join a noun phrase; the
# interaction verb table in synth reuses the same stems
ACTION_VERBS = frozenset(
    """
    send transmit report receive power supply drive mount attach support
    pump feed vent connect interface provide ensure maintain operate
    store draw exceed weigh measure deploy capture record command control
    communicate process monitor regulate dissipate survive withstand use
    carry point orient stabilize charge discharge downlink uplink
    """.split()
)

_WORD_RE = re.compile(r"[A-Za-z][A-Za-z0-9_'-]*|\d+(?:\.\d+)?")

# sentence terminators; a '.' after a single-letter token or "etc" is an
# abbreviation, not a boundary
_TERMINATORS = ".?!"

_MD_MARKER_RE = re.compile(r"^(#{1,6}[ \t]+|[-*+][ \t]+|>[ \t]*|\d+[.)][ \t]+)")


@dataclass
class DocumentArtifact:
    uid: str
    title: str
    text: str
    format: DocFormat
    sentences: list[tuple[int, int]] = field(default_factory=list)

    def sentence_text(self, span: tuple[int, int]) -> str:
        return self.text[span[0] : span[1]]


@dataclass(frozen=True)
class CandidateSpan:
    doc: str
    span: tuple[int, int]
    trigger: str
    confidence: float = 1.0


@dataclass
class GlossaryEntry:
    term: str
    count: int
    occurrences: list[tuple[str, tuple[int, int]]]


@dataclass
class Glossary:
    entries: dict[str, GlossaryEntry] = field(default_factory=dict)

    def terms_by_count(self) -> list[str]:
        return sorted(self.entries, key=lambda t: (-self.entries[t].count, t))


def normalize_text(raw: bytes) -> str:
    try:
        text = raw.decode("utf-8")
    except UnicodeDecodeError as exc:
        raise DocumentError(f"document is not valid UTF-8: {exc}") from exc
    text = unicodedata.normalize("NFC", text)
    return text.replace("\r\n", "\n").replace("\r", "\n")


def _is_abbreviation(text: str, dot: int) -> bool:
    """Guard dots inside ``e.g.``, ``i.e.``, ``etc.`` and letter-dot runs."""
    j = dot - 1
    word_end = j
    while j >= 0 and text[j].isalpha():
        j -= 1
    word = text[j + 1 : word_end + 1]
    if word.lower() == "etc":
        return True
    if len(word) == 1:
        preceded_by_dot = j >= 0 and text[j] == "."
        followed_by_letter_dot = (
            dot + 2 < len(text) and text[dot + 1].isalpha() and text[dot + 2] == "."
        )
        return preceded_by_dot or followed_by_letter_dot
    return False


def segment_sentences(text: str, format: DocFormat) -> list[tuple[int, int]]:
    """Sentence spans over the normalized text.

    Blocks are separated by blank lines; within a block, sentences end at
    ``.``, ``?`` or ``!`` followed by whitespace (with an abbreviation guard).
    For Markdown, leading structure markers are excluded from the span so
    slicing the text by a span reproduces the sentence verbatim.
    """
    spans: list[tuple[int, int]] = []
    pos = 0
    length = len(text)
    while pos < length:
        # find next block: skip blank lines
        line_start = pos
        block_lines: list[tuple[int, int]] = []
        scan = pos
        while scan < length:
            eol = text.find("\n", scan)
            if eol == -1:
                eol = length
            if text[scan:eol].strip():
                block_lines.append((scan, eol))
                scan = eol + 1
            else:
                scan = eol + 1
                if block_lines:
                    break
        if not block_lines:
            break
        block_start, block_end = block_lines[0][0], block_lines[-1][1]
        pos = scan
        spans.extend(_segment_block(text, block_start, block_end, format))
    return spans


def _strip_sentence_start(text: str, start: int, end: int, format: DocFormat) -> int:
    while start < end and text[start].isspace():
        start += 1
    if format is DocFormat.MARKDOWN:
        while True:
            match = _MD_MARKER_RE.match(text, start, end)
            if match is None:
                break
            start = match.end()
    while start < end and text[start].isspace():
        start += 1
    return start


def _segment_block(
    text: str, block_start: int, block_end: int, format: DocFormat
) -> list[tuple[int, int]]:
    spans: list[tuple[int, int]] = []
    start = _strip_sentence_start(text, block_start, block_end, format)
    i = start
    while i < block_end:
        ch = text[i]
        if ch in _TERMINATORS:
            boundary = i + 1 >= block_end or text[i + 1].isspace()
            if boundary and not (ch == "." and _is_abbreviation(text, i)):
                if i + 1 > start:
                    spans.append((start, i + 1))
                start = _strip_sentence_start(text, i + 1, block_end, format)
                i = start
                continue
        i += 1
    if start < block_end:
        end = block_end
        while end > start and text[end - 1].isspace():
            end -= 1
        if end > start:
            spans.append((start, end))
    return spans


def ingest_document(
    project: Project, title: str, raw: bytes, format: DocFormat = DocFormat.PLAIN_TEXT
) -> DocumentArtifact:
    """Register a source document: normalize, segment, bind, and index."""
    text = normalize_text(raw)
    if not text.strip():
        raise DocumentError("empty document")
    sentences = segment_sentences(text, format)
    uid = project.register_uid("doc").render()
    artifact = DocumentArtifact(uid, title, text, format, sentences)
    project.documents[uid] = artifact
    project.bind(uid, Modality.GRAPH, uid)
    project.bind(uid, Modality.DOCUMENT, uid)
    return artifact


# -- stage 1: candidate annotation -------------------------------------------


class AdapterMode(str, Enum):
    BASELINE = "Baseline"
    EXTERNAL_REPLAY = "ExternalReplay"
    EXTERNAL_LIVE = "ExternalLive"


class BaselineAdapter:
    """Deterministic modal-verb annotator; confidence is always 1.0."""

    name = "baseline"
    mode = AdapterMode.BASELINE

    def annotate(self, doc: DocumentArtifact) -> list[CandidateSpan]:
        candidates = []
        for span in doc.sentences:
            match = _MODAL_RE.search(doc.sentence_text(span))
            if match:
                candidates.append(CandidateSpan(doc.uid, span, match.group(0).lower(), 1.0))
        return candidates


class ReplayAdapter:
    """Replays recorded external responses byte-exactly from a JSONL fixture.

    Each line is ``{"request_digest": ..., "response": [...]}`` keyed by a
    content digest of the annotation request.
    """

    name = "replay"
    mode = AdapterMode.EXTERNAL_REPLAY

    def __init__(self, fixture_path: str):
        self._responses: dict[str, list] = {}
        with open(fixture_path, encoding="utf-8") as fh:
            for line in fh:
                if not line.strip():
                    continue
                record = json.loads(line)
                self._responses[record["request_digest"]] = record["response"]

    def annotate(self, doc: DocumentArtifact) -> list[CandidateSpan]:
        digest = request_digest(doc)
        if digest not in self._responses:
            raise AdapterError(f"no recorded response for request {digest}")
        spans = set(doc.sentences)
        out = []
        for item in self._responses[digest]:
            span = (int(item["span"][0]), int(item["span"][1]))
            if span not in spans:
                raise AdapterError(f"replayed span {span} is not a sentence span")
            out.append(
                CandidateSpan(doc.uid, span, item["trigger"], float(item.get("confidence", 1.0)))
            )
        return out


class LiveAdapter:
    """Calls an external annotation endpoint; never used by the test suite.

    The endpoint URL and API key come from ``SYSTHREAD_EXTRACT_URL`` and
    ``SYSTHREAD_EXTRACT_KEY``.
    """

    name = "live"
    mode = AdapterMode.EXTERNAL_LIVE

    def annotate(self, doc: DocumentArtifact) -> list[CandidateSpan]:
        import urllib.request

        url = os.environ.get("SYSTHREAD_EXTRACT_URL")
        key = os.environ.get("SYSTHREAD_EXTRACT_KEY", "")
        if not url:
            raise AdapterError("SYSTHREAD_EXTRACT_URL is not set")
        body = json.dumps({"text": doc.text, "sentences": doc.sentences}).encode("utf-8")
        request = urllib.request.Request(
            url, data=body, headers={"Authorization": f"Bearer {key}", "Content-Type": "application/json"}
        )
        try:
            with urllib.request.urlopen(request) as response:
                payload = json.loads(response.read().decode("utf-8"))
        except Exception as exc:
            raise AdapterError(f"external annotation failed: {exc}") from exc
        spans = set(doc.sentences)
        out = []
        for item in payload:
            span = (int(item["span"][0]), int(item["span"][1]))
            if span not in spans:
                raise AdapterError(f"adapter span {span} is not a sentence span")
            out.append(
                CandidateSpan(doc.uid, span, item["trigger"], float(item.get("confidence", 1.0)))
            )
        return out


def request_digest(doc: DocumentArtifact) -> str:
    payload = json.dumps(
        {"text": doc.text, "sentences": doc.sentences}, sort_keys=True, ensure_ascii=False
    )
    return hashlib.sha256(payload.encode("utf-8")).hexdigest()


def annotate_candidates(doc: DocumentArtifact, adapter=None) -> list[CandidateSpan]:
    """Stage one: flag candidate requirement sentences, ordered by span start."""
    adapter = adapter or BaselineAdapter()
    candidates = adapter.annotate(doc)
    return sorted(candidates, key=lambda c: c.span[0])


# -- stage 2: conversion to requirement objects -------------------------------

_COMPARISON_PHRASES = (
    "shall not exceed",
    "must not exceed",
    "no more than",
    "no less than",
    "at least",
    "at most",
    "less than",
    "greater than",
    "not exceed",
)

_INTERFACE_WORDS = ("interface", "send", "connect")

_NUMBER_UNIT_RE = re.compile(r"\b\d+(?:\.\d+)?\s*(kg|g|W|mW|V|mm|m|s)\b")


def classify_requirement(text: str) -> ReqType:
    lowered = text.lower()
    if any(re.search(rf"\b{word}", lowered) for word in _INTERFACE_WORDS):
        return ReqType.INTERFACE
    if any(phrase in lowered for phrase in _COMPARISON_PHRASES):
        return ReqType.CONSTRAINT
    if "within" in lowered or _NUMBER_UNIT_RE.search(text):
        return ReqType.PERFORMANCE
    return ReqType.FUNCTIONAL


def convert_to_requirements(
    project: Project, candidates: list[CandidateSpan]
) -> list[Requirement]:
    """Stage two: one Proposed requirement per candidate, trace-linked to its
    source document."""
    ordered = sorted(candidates, key=lambda c: (c.doc, c.span[0]))
    requirements = []
    for candidate in ordered:
        doc = project.documents.get(candidate.doc)
        if doc is None:
            raise DocumentError(f"candidate references unknown document {candidate.doc}")
        text = doc.sentence_text(candidate.span)
        source = SourceRef(candidate.doc, candidate.span[0], candidate.span[1])
        requirement = project.add_requirement(text, classify_requirement(text), source)
        project.add_trace(requirement.uid, TraceKind.DERIVED_FROM, candidate.doc)
        requirements.append(requirement)
    return requirements


# -- glossary ------------------------------------------------------------------


def _noun_runs(text: str, base: int = 0) -> list[tuple[str, int, int]]:
    """Maximal runs of noun-candidate tokens as (phrase, start, end)."""
    runs: list[tuple[str, int, int]] = []
    current: list[tuple[str, int, int]] = []
    for match in _WORD_RE.finditer(text):
        token = match.group(0)
        lowered = token.lower()
        is_noun = (
            token[0].isalpha()
            and lowered not in STOPWORDS
            and lowered not in _UNIT_TOKENS
            and lowered not in ACTION_VERBS
            and not _is_verb_form(lowered)
        )
        if is_noun:
            current.append((token, match.start(), match.end()))
        elif current:
            runs.append(_close_run(current, base))
            current = []
    if current:
        runs.append(_close_run(current, base))
    return runs


def _close_run(tokens: list[tuple[str, int, int]], base: int) -> tuple[str, int, int]:
    phrase = " ".join(t[0] for t in tokens)
    return (phrase, base + tokens[0][1], base + tokens[-1][2])


def _is_verb_form(lowered: str) -> bool:
    for stem in ACTION_VERBS:
        if lowered == stem:
            return True
        for suffix in ("s", "es", "ed", "ing"):
            if lowered == stem + suffix:
                return True
        if stem.endswith("e") and lowered in (stem[:-1] + "ing", stem[:-1] + "ed"):
            return True
    return False


def build_glossary(docs: list[DocumentArtifact]) -> Glossary:
    """Noun-phrase terms with occurrence counts and source spans."""
    glossary = Glossary()
    for doc in docs:
        for span in doc.sentences:
            sentence = doc.sentence_text(span)
            for phrase, start, end in _noun_runs(sentence, span[0]):
                term = phrase.lower()
                entry = glossary.entries.get(term)
                if entry is None:
                    entry = GlossaryEntry(term, 0, [])
                    glossary.entries[term] = entry
                entry.count += 1
                entry.occurrences.append((doc.uid, (start, end)))
    return glossary
