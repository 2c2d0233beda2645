"""Body preprocessing and TF-IDF cosine similarity.

Splits raw post markup into prose tokens, code tokens, and link
targets, then supports cosine comparison of documents under a fitted
TF-IDF weighting.  "body" mode uses prose and code tokens together;
"code" mode uses code tokens only.
"""

from __future__ import annotations

import hashlib
import json
import math
import re
from dataclasses import dataclass
from html.parser import HTMLParser
from typing import Iterable, Mapping, Sequence

from .errors import ConfigError, DomainError

BODY = "body"
CODE = "code"
MODES = (BODY, CODE)

_TOKEN = re.compile(r"[^\W_]+", re.UNICODE)


def tokenize(text: str) -> list[str]:
    """Lowercase and split on anything non-alphanumeric."""
    return _TOKEN.findall(text.lower())


@dataclass(frozen=True)
class DocumentParts:
    """Tokenized views of one post body."""

    text: tuple[str, ...]
    code: tuple[str, ...]
    links: tuple[str, ...]

    def tokens(self, mode: str) -> tuple[str, ...]:
        if mode == BODY:
            return self.text + self.code
        if mode == CODE:
            return self.code
        raise ConfigError(f"unknown similarity mode {mode!r}")


class _BodyParser(HTMLParser):
    """Separate prose from code/pre blocks and collect href targets."""

    def __init__(self) -> None:
        super().__init__(convert_charrefs=True)
        self.text_chunks: list[str] = []
        self.code_chunks: list[str] = []
        self.links: list[str] = []
        self._code_depth = 0

    def handle_starttag(self, tag: str, attrs: list[tuple[str, str | None]]) -> None:
        if tag in ("code", "pre"):
            self._code_depth += 1
        elif tag == "a":
            for name, value in attrs:
                if name == "href" and value:
                    self.links.append(value)

    def handle_endtag(self, tag: str) -> None:
        if tag in ("code", "pre") and self._code_depth > 0:
            self._code_depth -= 1

    def handle_data(self, data: str) -> None:
        if self._code_depth > 0:
            self.code_chunks.append(data)
        else:
            self.text_chunks.append(data)


def preprocess(body: str) -> DocumentParts:
    """Split a raw body into prose tokens, code tokens, and links.

    Malformed markup never raises; it degrades to tag-stripped text.
    """
    parser = _BodyParser()
    try:
        parser.feed(body)
        parser.close()
    except Exception:
        # Extremely broken markup: fall back to a crude tag strip.
        stripped = re.sub(r"<[^>]*>", " ", body)
        return DocumentParts(text=tuple(tokenize(stripped)), code=(), links=())
    return DocumentParts(
        text=tuple(tokenize(" ".join(parser.text_chunks))),
        code=tuple(tokenize(" ".join(parser.code_chunks))),
        links=tuple(parser.links),
    )


@dataclass(frozen=True)
class TfidfVector:
    """Sparse term→weight mapping tied to the corpus it was fitted on."""

    weights: Mapping[str, float]
    corpus_id: str

    def norm(self) -> float:
        # fsum: exactly rounded, so the value is iteration-order independent
        return math.sqrt(math.fsum(w * w for w in self.weights.values()))


def corpus_fingerprint(documents: Sequence[Sequence[str]]) -> str:
    digest = hashlib.sha256()
    digest.update(json.dumps([list(doc) for doc in documents]).encode("utf-8"))
    return digest.hexdigest()[:16]


def fit_tfidf(documents: Sequence[Sequence[str]]) -> list[TfidfVector]:
    """Weight each document with raw tf times smoothed idf.

    idf(t) = ln((1+N)/(1+df(t))) + 1, which keeps single-document and
    tiny corpora away from all-zero vectors.
    """
    if len(documents) == 0:
        raise DomainError("cannot fit TF-IDF on zero documents")
    n_docs = len(documents)
    df: dict[str, int] = {}
    for doc in documents:
        for term in set(doc):
            df[term] = df.get(term, 0) + 1
    idf = {term: math.log((1 + n_docs) / (1 + count)) + 1.0 for term, count in df.items()}
    corpus_id = corpus_fingerprint(documents)
    vectors = []
    for doc in documents:
        tf: dict[str, int] = {}
        for term in doc:
            tf[term] = tf.get(term, 0) + 1
        weights = {term: count * idf[term] for term, count in tf.items()}
        vectors.append(TfidfVector(weights=weights, corpus_id=corpus_id))
    return vectors


def cosine(a: TfidfVector, b: TfidfVector) -> float:
    """Cosine similarity in [0, 1]; all-zero vectors compare as 0."""
    if a.corpus_id != b.corpus_id:
        raise DomainError(
            f"vectors fitted on different corpora ({a.corpus_id} vs {b.corpus_id})"
        )
    small, large = (a.weights, b.weights) if len(a.weights) <= len(b.weights) else (b.weights, a.weights)
    # fsum keeps the dot product independent of which vector is iterated,
    # so cosine(a, b) == cosine(b, a) exactly
    dot = math.fsum(w * large[term] for term, w in small.items() if term in large)
    if dot == 0.0:
        return 0.0
    norm_a = a.norm()
    norm_b = b.norm()
    if norm_a == 0.0 or norm_b == 0.0:
        return 0.0
    return min(1.0, max(0.0, dot / (norm_a * norm_b)))


class TableSimilaritySource:
    """Pairwise similarities over the interaction table's documents.

    Question documents are the table's questions (owned by their asker);
    answer documents are the table's answers (owned by their answerer).
    TF-IDF is fitted once per document kind and mode over the whole
    table, so weights do not depend on which community is under test.
    """

    def __init__(self, records: Iterable):
        question_owner: dict[int, int] = {}
        answer_owner: dict[int, int] = {}
        bodies: dict[tuple[str, int], str] = {}
        for record in records:
            question_owner[record.question_id] = record.asker_id
            answer_owner[record.answer_id] = record.answerer_id
            bodies[("question", record.question_id)] = record.question_body
            bodies[("answer", record.answer_id)] = record.answer_body
        self._docs = {
            "question": sorted(question_owner),
            "answer": sorted(answer_owner),
        }
        self._owners = {"question": question_owner, "answer": answer_owner}
        self._parts = {key: preprocess(body) for key, body in bodies.items()}
        self._fitted: dict[tuple[str, str], dict[int, TfidfVector]] = {}

    def _vectors(self, kind: str, mode: str) -> dict[int, TfidfVector]:
        key = (kind, mode)
        if key not in self._fitted:
            ids = self._docs[kind]
            fitted = (
                fit_tfidf([self._parts[(kind, pid)].tokens(mode) for pid in ids])
                if ids else []
            )
            self._fitted[key] = dict(zip(ids, fitted))
        return self._fitted[key]

    def _max_pairwise(self, kind: str, members: Iterable[int], mode: str) -> float | None:
        if mode not in MODES:
            raise ConfigError(f"unknown similarity mode {mode!r}")
        member_set = set(members)
        owners = self._owners[kind]
        ids = [pid for pid in self._docs[kind] if owners[pid] in member_set]
        if len(ids) < 2:
            return None
        vectors = self._vectors(kind, mode)
        best = 0.0
        for i, pid_a in enumerate(ids):
            va = vectors[pid_a]
            for pid_b in ids[i + 1:]:
                best = max(best, cosine(va, vectors[pid_b]))
        return best

    def max_question_similarity(self, members: Iterable[int], mode: str) -> float | None:
        """Highest cosine among the members' question pairs; None if <2 questions."""
        return self._max_pairwise("question", members, mode)

    def max_answer_similarity(self, members: Iterable[int], mode: str) -> float | None:
        """Highest cosine among the members' answer pairs; None if <2 answers."""
        return self._max_pairwise("answer", members, mode)
