"""Post corpora: parsing forum dumps, the mutual-answer interaction table,
and reputation snapshot sets.

Two input formats are supported for posts: the Stack Exchange style
``Posts.xml`` row dump (``se-xml``) and a line-delimited JSON format
(``jsonl``).  Parsing is streaming; per-row problems are skipped and
counted rather than aborting the whole file.
"""

from __future__ import annotations

import csv
import json
import logging
import xml.etree.ElementTree as ET
from dataclasses import dataclass, field
from datetime import date, datetime, timezone
from pathlib import Path
from typing import IO, Iterable, Iterator, Sequence

from .errors import ParseError, ValidationError

log = logging.getLogger(__name__)

QUESTION = "question"
ANSWER = "answer"

# Diagnostics are capped so parsing stays O(1) in memory no matter how
# dirty the input file is; counts are always complete.
DIAGNOSTIC_CAP = 50


def parse_utc(value: str) -> datetime:
    """Parse an ISO-8601 timestamp into an aware UTC datetime.

    Naive timestamps are taken to be UTC (Stack Exchange dumps omit the
    offset); a trailing ``Z`` is accepted.
    """
    text = value.strip()
    if text.endswith(("Z", "z")):
        text = text[:-1] + "+00:00"
    dt = datetime.fromisoformat(text)
    if dt.tzinfo is None:
        return dt.replace(tzinfo=timezone.utc)
    return dt.astimezone(timezone.utc)


def _isoformat(dt: datetime) -> str:
    return dt.astimezone(timezone.utc).isoformat()


@dataclass(frozen=True, slots=True)
class Post:
    """One question or answer from a forum dump.

    ``parent_id`` is present exactly for answers; ``accepted_answer_id``
    only ever appears on questions.
    """

    id: int
    kind: str
    owner_id: int
    created_at: datetime
    body: str
    parent_id: int | None = None
    accepted_answer_id: int | None = None

    def __post_init__(self) -> None:
        if self.kind not in (QUESTION, ANSWER):
            raise ValidationError(f"post {self.id}: unknown kind {self.kind!r}")
        if self.kind == ANSWER and self.parent_id is None:
            raise ValidationError(f"answer {self.id} has no parent_id")
        if self.kind == QUESTION and self.parent_id is not None:
            raise ValidationError(f"question {self.id} must not have a parent_id")
        if self.kind == ANSWER and self.accepted_answer_id is not None:
            raise ValidationError(f"answer {self.id} must not carry accepted_answer_id")
        if self.created_at.tzinfo is None:
            raise ValidationError(f"post {self.id}: created_at must be timezone-aware")


@dataclass(slots=True)
class ParsedPosts:
    """Result of a parse run: the posts plus skip accounting."""

    posts: list[Post] = field(default_factory=list)
    skipped: dict[str, int] = field(default_factory=dict)
    diagnostics: list[str] = field(default_factory=list)
    total_rows: int = 0

    def _skip(self, reason: str, message: str) -> None:
        self.skipped[reason] = self.skipped.get(reason, 0) + 1
        if len(self.diagnostics) < DIAGNOSTIC_CAP:
            self.diagnostics.append(message)

    @property
    def skipped_total(self) -> int:
        return sum(self.skipped.values())


def _row_to_post(attrs: dict[str, str]) -> Post | None:
    """Convert one se-xml row attribute dict; None means 'not a post row'."""
    post_type = attrs.get("PostTypeId")
    if post_type == "1":
        kind = QUESTION
    elif post_type == "2":
        kind = ANSWER
    else:
        return None
    accepted = attrs.get("AcceptedAnswerId")
    return Post(
        id=int(attrs["Id"]),
        kind=kind,
        owner_id=int(attrs["OwnerUserId"]),
        created_at=parse_utc(attrs["CreationDate"]),
        body=attrs.get("Body", ""),
        parent_id=int(attrs["ParentId"]) if kind == ANSWER else None,
        accepted_answer_id=int(accepted) if (kind == QUESTION and accepted) else None,
    )


def _parse_se_xml(stream: IO[bytes], result: ParsedPosts) -> None:
    try:
        for _event, elem in ET.iterparse(stream, events=("end",)):
            if elem.tag != "row":
                continue
            result.total_rows += 1
            attrs = dict(elem.attrib)
            elem.clear()
            post_type = attrs.get("PostTypeId")
            if post_type not in ("1", "2"):
                result._skip("other_post_type", f"row Id={attrs.get('Id')}: PostTypeId={post_type}")
                continue
            if not attrs.get("OwnerUserId"):
                result._skip("missing_owner", f"row Id={attrs.get('Id')}: no OwnerUserId")
                continue
            try:
                post = _row_to_post(attrs)
            except (KeyError, ValueError, ValidationError) as exc:
                result._skip("malformed", f"row Id={attrs.get('Id')}: {exc}")
                continue
            if post is not None:
                result.posts.append(post)
    except ET.ParseError as exc:
        raise ParseError(f"se-xml input is not well formed: {exc}") from exc


def _record_to_post(record: dict) -> Post:
    kind = record["kind"]
    return Post(
        id=int(record["id"]),
        kind=kind,
        owner_id=int(record["owner_id"]),
        created_at=parse_utc(record["created_at"]),
        body=record.get("body") or "",
        parent_id=int(record["parent_id"]) if record.get("parent_id") is not None else None,
        accepted_answer_id=(
            int(record["accepted_answer_id"])
            if record.get("accepted_answer_id") is not None
            else None
        ),
    )


def _parse_jsonl(stream: IO[bytes], result: ParsedPosts) -> None:
    for lineno, raw in enumerate(stream, start=1):
        line = raw.strip()
        if not line:
            continue
        result.total_rows += 1
        try:
            record = json.loads(line)
        except json.JSONDecodeError as exc:
            result._skip("malformed", f"line {lineno}: invalid JSON ({exc})")
            continue
        if not isinstance(record, dict):
            result._skip("malformed", f"line {lineno}: not an object")
            continue
        if record.get("owner_id") is None:
            result._skip("missing_owner", f"line {lineno}: no owner_id")
            continue
        try:
            result.posts.append(_record_to_post(record))
        except (KeyError, TypeError, ValueError, ValidationError) as exc:
            result._skip("malformed", f"line {lineno}: {exc}")


def parse_posts(source: str | Path | IO[bytes], format: str = "se-xml") -> ParsedPosts:
    """Parse a posts dump into Post objects.

    Rows that are not questions or answers, have no owner, or fail to
    decode are skipped and counted in ``result.skipped``; only an input
    that cannot be read at all raises ParseError.
    """
    if format not in ("se-xml", "jsonl"):
        raise ParseError(f"unknown posts format {format!r}")
    result = ParsedPosts()
    parser = _parse_se_xml if format == "se-xml" else _parse_jsonl
    if hasattr(source, "read"):
        parser(source, result)  # type: ignore[arg-type]
    else:
        path = Path(source)
        try:
            with path.open("rb") as stream:
                parser(stream, result)
        except OSError as exc:
            raise ParseError(f"cannot read {path}: {exc}") from exc
    if result.skipped_total:
        log.info(
            "parsed %d posts, skipped %d rows (%s)",
            len(result.posts),
            result.skipped_total,
            ", ".join(f"{k}={v}" for k, v in sorted(result.skipped.items())),
        )
    return result


def write_posts_jsonl(posts: Iterable[Post], target: str | Path | IO[str]) -> int:
    """Write posts in the jsonl input format; returns the row count.

    Output is deterministic for a given post sequence, so equal corpora
    serialize to identical bytes.
    """

    def _dump(stream: IO[str]) -> int:
        count = 0
        for post in posts:
            record = {
                "id": post.id,
                "kind": post.kind,
                "owner_id": post.owner_id,
                "parent_id": post.parent_id,
                "accepted_answer_id": post.accepted_answer_id,
                "created_at": _isoformat(post.created_at),
                "body": post.body,
            }
            stream.write(json.dumps(record, ensure_ascii=False) + "\n")
            count += 1
        return count

    if hasattr(target, "write"):
        return _dump(target)  # type: ignore[arg-type]
    with Path(target).open("w", encoding="utf-8") as stream:
        return _dump(stream)


@dataclass(frozen=True, slots=True)
class InteractionRecord:
    """One kept answer event: ``answerer`` answered a question of ``asker``.

    Only events between mutual pairs survive table construction, i.e.
    both users must have answered at least one question of the other.
    Bodies ride along so similarity checks need no second corpus pass.
    """

    question_id: int
    asker_id: int
    answer_id: int
    answerer_id: int
    question_created_at: datetime
    answer_created_at: datetime
    is_accepted: bool
    question_body: str
    answer_body: str

    @property
    def latency_seconds(self) -> float:
        return (self.answer_created_at - self.question_created_at).total_seconds()


@dataclass(slots=True)
class TableBuild:
    """Interaction table plus counts of everything that was dropped."""

    records: list[InteractionRecord]
    dropped: dict[str, int]

    @property
    def dropped_total(self) -> int:
        return sum(self.dropped.values())


def build_interaction_table(posts: Iterable[Post]) -> TableBuild:
    """Reduce a corpus to answer events between mutual answer pairs.

    Drops (with counts): answers whose question is missing from the
    corpus, self-answers, answers created before their question, and
    events whose user pair never reciprocated.
    """
    questions: dict[int, Post] = {}
    answers: list[Post] = []
    for post in posts:
        if post.kind == QUESTION:
            questions[post.id] = post
        else:
            answers.append(post)

    dropped = {"dangling_answer": 0, "self_answer": 0, "negative_latency": 0, "non_mutual": 0}
    candidates: list[InteractionRecord] = []
    directed: set[tuple[int, int]] = set()
    for answer in answers:
        question = questions.get(answer.parent_id)
        if question is None:
            dropped["dangling_answer"] += 1
            continue
        if answer.owner_id == question.owner_id:
            dropped["self_answer"] += 1
            continue
        if answer.created_at < question.created_at:
            dropped["negative_latency"] += 1
            continue
        record = InteractionRecord(
            question_id=question.id,
            asker_id=question.owner_id,
            answer_id=answer.id,
            answerer_id=answer.owner_id,
            question_created_at=question.created_at,
            answer_created_at=answer.created_at,
            is_accepted=question.accepted_answer_id == answer.id,
            question_body=question.body,
            answer_body=answer.body,
        )
        candidates.append(record)
        directed.add((record.asker_id, record.answerer_id))

    records = []
    for record in candidates:
        if (record.answerer_id, record.asker_id) in directed:
            records.append(record)
        else:
            dropped["non_mutual"] += 1
    return TableBuild(records=records, dropped=dropped)


def write_table_jsonl(records: Iterable[InteractionRecord], target: str | Path | IO[str]) -> int:
    """Serialize interaction records as JSON lines."""

    def _dump(stream: IO[str]) -> int:
        count = 0
        for record in records:
            stream.write(json.dumps({
                "question_id": record.question_id,
                "asker_id": record.asker_id,
                "answer_id": record.answer_id,
                "answerer_id": record.answerer_id,
                "question_created_at": _isoformat(record.question_created_at),
                "answer_created_at": _isoformat(record.answer_created_at),
                "is_accepted": record.is_accepted,
                "question_body": record.question_body,
                "answer_body": record.answer_body,
            }, ensure_ascii=False) + "\n")
            count += 1
        return count

    if hasattr(target, "write"):
        return _dump(target)  # type: ignore[arg-type]
    with Path(target).open("w", encoding="utf-8") as stream:
        return _dump(stream)


def read_table_jsonl(source: str | Path | IO[str]) -> list[InteractionRecord]:
    """Load interaction records, re-checking the table invariants."""

    def _load(stream: IO[str]) -> list[InteractionRecord]:
        records: list[InteractionRecord] = []
        directed: set[tuple[int, int]] = set()
        for lineno, raw in enumerate(stream, start=1):
            line = raw.strip()
            if not line:
                continue
            try:
                data = json.loads(line)
                record = InteractionRecord(
                    question_id=int(data["question_id"]),
                    asker_id=int(data["asker_id"]),
                    answer_id=int(data["answer_id"]),
                    answerer_id=int(data["answerer_id"]),
                    question_created_at=parse_utc(data["question_created_at"]),
                    answer_created_at=parse_utc(data["answer_created_at"]),
                    is_accepted=bool(data["is_accepted"]),
                    question_body=str(data["question_body"]),
                    answer_body=str(data["answer_body"]),
                )
            except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
                raise ParseError(f"table line {lineno}: {exc}") from exc
            if record.asker_id == record.answerer_id:
                raise ValidationError(f"table line {lineno}: self-answer record")
            if record.answer_created_at < record.question_created_at:
                raise ValidationError(f"table line {lineno}: answer precedes question")
            records.append(record)
            directed.add((record.asker_id, record.answerer_id))
        for record in records:
            if (record.answerer_id, record.asker_id) not in directed:
                raise ValidationError(
                    f"pair ({record.asker_id}, {record.answerer_id}) is not mutual; "
                    "this is not a valid interaction table"
                )
        return records

    if hasattr(source, "read"):
        return _load(source)  # type: ignore[arg-type]
    with Path(source).open("r", encoding="utf-8") as stream:
        return _load(stream)


def _parse_day(value: str) -> date:
    text = value.strip()
    if "T" in text or " " in text:
        return parse_utc(text).date()
    return date.fromisoformat(text)


@dataclass(slots=True)
class SnapshotSet:
    """Reputation scores across an ordered series of dump snapshots.

    ``dumps`` is ordered by strictly increasing dump date.  ``scores``
    maps (user_id, dump_label) to the reputation recorded in that dump;
    a user may be absent from older dumps.  ``last_access`` holds each
    user's most recent site access, when known.
    """

    dumps: tuple[tuple[str, date], ...]
    scores: dict[tuple[int, str], int]
    last_access: dict[int, datetime]

    def __post_init__(self) -> None:
        dates = [d for _label, d in self.dumps]
        if any(b <= a for a, b in zip(dates, dates[1:])):
            raise ValidationError("dump dates must be strictly increasing")
        labels = {label for label, _ in self.dumps}
        if len(labels) != len(self.dumps):
            raise ValidationError("dump labels must be unique")
        for (user, label), score in self.scores.items():
            if label not in labels:
                raise ValidationError(f"score for user {user} references unknown dump {label!r}")
            if score < 1:
                raise ValidationError(
                    f"user {user} has reputation {score} in dump {label!r}; platform floor is 1"
                )

    @property
    def labels(self) -> tuple[str, ...]:
        return tuple(label for label, _ in self.dumps)

    def date_of(self, label: str) -> date:
        for known, day in self.dumps:
            if known == label:
                return day
        raise ValidationError(f"unknown dump label {label!r}")

    def score(self, user_id: int, label: str) -> int | None:
        return self.scores.get((user_id, label))

    def users(self) -> set[int]:
        return {user for user, _label in self.scores}

    def users_in(self, label: str) -> set[int]:
        self.date_of(label)
        return {user for user, known in self.scores if known == label}


SNAPSHOT_HEADER = ["user_id", "dump_label", "dump_date", "reputation", "last_access_date"]


def load_snapshots(source: str | Path | IO[str]) -> SnapshotSet:
    """Load a snapshot CSV (see SNAPSHOT_HEADER for the column order)."""

    def _load(stream: IO[str]) -> SnapshotSet:
        reader = csv.reader(stream)
        try:
            header = next(reader)
        except StopIteration:
            raise ParseError("snapshot CSV is empty") from None
        if [h.strip() for h in header] != SNAPSHOT_HEADER:
            raise ParseError(f"bad snapshot header {header!r}, want {SNAPSHOT_HEADER!r}")
        dump_dates: dict[str, date] = {}
        scores: dict[tuple[int, str], int] = {}
        last_access: dict[int, datetime] = {}
        for lineno, row in enumerate(reader, start=2):
            if not row or all(not cell.strip() for cell in row):
                continue
            if len(row) != len(SNAPSHOT_HEADER):
                raise ParseError(f"line {lineno}: expected {len(SNAPSHOT_HEADER)} fields")
            try:
                user = int(row[0])
                label = row[1].strip()
                day = _parse_day(row[2])
                reputation = int(row[3])
            except ValueError as exc:
                raise ParseError(f"line {lineno}: {exc}") from exc
            if not label:
                raise ParseError(f"line {lineno}: empty dump_label")
            if label in dump_dates and dump_dates[label] != day:
                raise ValidationError(f"dump {label!r} appears with conflicting dates")
            dump_dates.setdefault(label, day)
            if (user, label) in scores:
                raise ValidationError(f"duplicate score row for user {user} in dump {label!r}")
            scores[(user, label)] = reputation
            access_text = row[4].strip()
            if access_text:
                accessed = parse_utc(access_text) if ("T" in access_text or " " in access_text) \
                    else datetime.combine(date.fromisoformat(access_text), datetime.min.time(), timezone.utc)
                prior = last_access.get(user)
                if prior is None or accessed > prior:
                    last_access[user] = accessed
        dumps = tuple(sorted(dump_dates.items(), key=lambda item: item[1]))
        return SnapshotSet(dumps=dumps, scores=scores, last_access=last_access)

    if hasattr(source, "read"):
        return _load(source)  # type: ignore[arg-type]
    path = Path(source)
    try:
        with path.open("r", encoding="utf-8", newline="") as stream:
            return _load(stream)
    except OSError as exc:
        raise ParseError(f"cannot read {path}: {exc}") from exc


def write_snapshots_csv(snapshots: SnapshotSet, target: str | Path | IO[str]) -> int:
    """Write a SnapshotSet back out in the snapshot CSV format."""

    def _dump(stream: IO[str]) -> int:
        writer = csv.writer(stream, lineterminator="\n")
        writer.writerow(SNAPSHOT_HEADER)
        count = 0
        by_date = {label: day for label, day in snapshots.dumps}
        for (user, label) in sorted(snapshots.scores, key=lambda k: (by_date[k[1]], k[0])):
            accessed = snapshots.last_access.get(user)
            writer.writerow([
                user,
                label,
                by_date[label].isoformat(),
                snapshots.scores[(user, label)],
                _isoformat(accessed) if accessed is not None else "",
            ])
            count += 1
        return count

    if hasattr(target, "write"):
        return _dump(target)  # type: ignore[arg-type]
    with Path(target).open("w", encoding="utf-8", newline="") as stream:
        return _dump(stream)
