"""Deterministic synthetic forums: honest background activity plus
planted voting rings, and reputation snapshot series with planted
jumps.  The emitted ground truth is the oracle the evaluation module
scores detectors against.

Ring planting works backwards from the mutual-pair filter: every
planted member pair answers in both directions, so ring records survive
table construction and the ring shows up as one isolated component of
the interaction graph with exactly the requested edge count.
"""

from __future__ import annotations

import json
import logging
import math
import random
from dataclasses import dataclass, field, replace
from datetime import date, datetime, timedelta, timezone
from pathlib import Path
from typing import IO, Sequence

from .corpus import ANSWER, QUESTION, Post, SnapshotSet, parse_utc
from .errors import DomainError, ValidationError

log = logging.getLogger(__name__)

THREAD_RING = "thread_ring"
SERIAL_RING = "serial_ring"


@dataclass(frozen=True)
class RingSpec:
    """Blueprint for one planted ring.

    member_count users interact only with each other; interaction_count
    internal answer events are planted.  Because the interaction table
    keeps mutual pairs only, a connected ring needs at least
    2*(member_count - 1) events (both directions along a spanning path),
    which is stricter than the representational floor of
    member_count - 1.

    thread_ring groups a member's outgoing demands into shared
    questions; serial_ring uses one question per answer.  all_accepted
    forces the serial shape since a question accepts at most one answer.
    When all_accepted is false, at least one planted edge is left
    unaccepted so acceptance-based and latency-based detectors see
    genuinely different communities.
    """

    member_count: int
    interaction_count: int
    all_accepted: bool = False
    max_latency: timedelta = timedelta(hours=24)
    clone_questions: bool = False
    ring_type: str = SERIAL_RING
    members: tuple[int, ...] | None = None

    def __post_init__(self) -> None:
        if not 2 <= self.member_count <= 10:
            raise ValidationError("member_count must be between 2 and 10")
        if self.interaction_count < self.member_count - 1:
            raise ValidationError(
                "interaction_count must be at least member_count - 1"
            )
        if self.interaction_count < 2 * (self.member_count - 1):
            raise ValidationError(
                f"interaction_count={self.interaction_count} cannot connect "
                f"{self.member_count} members with mutual pairs; "
                f"need at least {2 * (self.member_count - 1)}"
            )
        if self.max_latency <= timedelta(0):
            raise ValidationError("max_latency must be positive")
        if self.ring_type not in (THREAD_RING, SERIAL_RING):
            raise ValidationError(f"unknown ring_type {self.ring_type!r}")
        if self.members is not None:
            if len(self.members) != self.member_count:
                raise ValidationError("explicit members must match member_count")
            if len(set(self.members)) != self.member_count:
                raise ValidationError("explicit members must be distinct")


@dataclass(frozen=True)
class RemovalEvent:
    user_id: int
    timestamp: datetime
    score_delta: int


@dataclass
class GroundTruth:
    fraud_users: set[int] = field(default_factory=set)
    fraud_communities: list[frozenset[int]] = field(default_factory=list)
    planted_jump_users: set[int] = field(default_factory=set)
    removal_events: list[RemovalEvent] = field(default_factory=list)

    def confirmed_users(self) -> set[int]:
        """Users backed by a removal event or fraud labeling."""
        return self.fraud_users | {event.user_id for event in self.removal_events}


def write_truth_json(truth: GroundTruth, target: str | Path | IO[str]) -> None:
    payload = {
        "fraud_users": sorted(truth.fraud_users),
        "fraud_communities": [sorted(members) for members in truth.fraud_communities],
        "planted_jump_users": sorted(truth.planted_jump_users),
        "removal_events": [
            {
                "user_id": event.user_id,
                "timestamp": event.timestamp.astimezone(timezone.utc).isoformat(),
                "score_delta": event.score_delta,
            }
            for event in truth.removal_events
        ],
    }
    text = json.dumps(payload, indent=2) + "\n"
    if hasattr(target, "write"):
        target.write(text)  # type: ignore[union-attr]
    else:
        Path(target).write_text(text, encoding="utf-8")


def read_truth_json(source: str | Path | IO[str]) -> GroundTruth:
    if hasattr(source, "read"):
        payload = json.load(source)  # type: ignore[arg-type]
    else:
        payload = json.loads(Path(source).read_text(encoding="utf-8"))
    try:
        return GroundTruth(
            fraud_users={int(u) for u in payload["fraud_users"]},
            fraud_communities=[frozenset(int(u) for u in c) for c in payload["fraud_communities"]],
            planted_jump_users={int(u) for u in payload["planted_jump_users"]},
            removal_events=[
                RemovalEvent(
                    user_id=int(e["user_id"]),
                    timestamp=parse_utc(e["timestamp"]),
                    score_delta=int(e["score_delta"]),
                )
                for e in payload["removal_events"]
            ],
        )
    except (KeyError, TypeError, ValueError) as exc:
        raise ValidationError(f"bad ground-truth file: {exc}") from exc


@dataclass(frozen=True)
class ForumParams:
    """Knobs for the honest background activity model."""

    start: datetime = datetime(2018, 6, 1, tzinfo=timezone.utc)
    span_days: int = 90
    vocab_size: int = 800
    answer_count_weights: tuple[tuple[int, float], ...] = ((0, 0.25), (1, 0.45), (2, 0.20), (3, 0.10))
    accept_probability: float = 0.55
    median_latency_hours: float = 5.0
    latency_sigma: float = 1.4
    code_probability: float = 0.35


@dataclass
class ForumResult:
    posts: list[Post]
    truth: GroundTruth


def _zipf_weights(n: int) -> list[float]:
    return [1.0 / (rank + 1) ** 0.7 for rank in range(n)]


class _PostFactory:
    def __init__(self) -> None:
        self.posts: list[Post] = []
        self._pos: dict[int, int] = {}
        self._next_id = 1

    def question(self, owner: int, created: datetime, body: str) -> int:
        pid = self._next_id
        self._next_id += 1
        self._pos[pid] = len(self.posts)
        self.posts.append(Post(
            id=pid, kind=QUESTION, owner_id=owner, created_at=created, body=body,
        ))
        return pid

    def answer(self, owner: int, created: datetime, body: str, parent: int) -> int:
        pid = self._next_id
        self._next_id += 1
        self._pos[pid] = len(self.posts)
        self.posts.append(Post(
            id=pid, kind=ANSWER, owner_id=owner, created_at=created, body=body,
            parent_id=parent,
        ))
        return pid

    def accept(self, question_id: int, answer_id: int | None) -> None:
        try:
            idx = self._pos[question_id]
        except KeyError:
            raise DomainError(f"no question {question_id} to accept into") from None
        self.posts[idx] = replace(self.posts[idx], accepted_answer_id=answer_id)


def _honest_body(rng: random.Random, vocab: list[str], weights: list[float],
                 params: ForumParams) -> str:
    words = rng.choices(vocab, weights=weights, k=rng.randint(18, 36))
    body = f"<p>{' '.join(words)}</p>"
    if rng.random() < params.code_probability:
        code_words = rng.choices(vocab, weights=weights, k=rng.randint(4, 10))
        body += f"<code>{' '.join(code_words)}</code>"
    return body


def _generate_honest(rng: random.Random, factory: _PostFactory, honest_users: int,
                     honest_questions: int, params: ForumParams) -> None:
    vocab = [f"term{i}" for i in range(params.vocab_size)]
    weights = _zipf_weights(params.vocab_size)
    span_seconds = params.span_days * 86400
    counts = [c for c, _w in params.answer_count_weights]
    count_weights = [w for _c, w in params.answer_count_weights]
    answers_given = [1.0] * (honest_users + 1)  # 1-based; preferential attachment mass

    question_times = sorted(rng.uniform(0, span_seconds) for _ in range(honest_questions))
    for q_offset in question_times:
        asker = rng.randint(1, honest_users)
        q_time = params.start + timedelta(seconds=round(q_offset))
        q_id = factory.question(asker, q_time, _honest_body(rng, vocab, weights, params))
        n_answers = rng.choices(counts, weights=count_weights, k=1)[0]
        answer_ids = []
        for _ in range(n_answers):
            answerer = rng.choices(
                range(1, honest_users + 1), weights=answers_given[1:], k=1
            )[0]
            if answerer == asker:
                continue
            answers_given[answerer] += 1.0
            latency_hours = rng.lognormvariate(
                mu=math.log(params.median_latency_hours), sigma=params.latency_sigma
            )
            latency = min(timedelta(hours=latency_hours), timedelta(days=30))
            latency = max(latency, timedelta(minutes=2))
            a_time = q_time + timedelta(seconds=round(latency.total_seconds()))
            answer_ids.append(factory.answer(
                answerer, a_time, _honest_body(rng, vocab, weights, params), q_id
            ))
        if answer_ids and rng.random() < params.accept_probability:
            factory.accept(q_id, rng.choice(answer_ids))


def _ring_demands(members: Sequence[int], count: int) -> list[tuple[int, int]]:
    """Ordered (asker, answerer) demands: a mutual spanning path plus
    round-robin extras over the same already-mutual pairs.

    Extras reuse backbone pairs only, so every planted pair is mutual in
    both directions and no record is lost to the table's mutual filter.
    """
    backbone = []
    for a, b in zip(members, members[1:]):
        backbone.append((a, b))
        backbone.append((b, a))
    demands = list(backbone)
    idx = 0
    while len(demands) < count:
        demands.append(backbone[idx % len(backbone)])
        idx += 1
    return demands[:count]


def _ring_bodies(rng: random.Random, ring_index: int, spec: RingSpec,
                 n_questions: int) -> tuple[list[str], list[str]]:
    """Question and answer bodies for one ring.

    Cloned rings share one base template: the first two documents are
    identical and later ones differ by a single trailing token, giving
    near-duplicate pairs in both body and code modes.  Non-cloned rings
    get independent random bodies over a ring-private vocabulary.
    """
    prefix = f"ring{ring_index}"
    if spec.clone_questions:
        q_text = " ".join(f"{prefix}q{t}" for t in range(20))
        q_code = " ".join(f"{prefix}qc{t}" for t in range(8))
        a_text = " ".join(f"{prefix}a{t}" for t in range(20))
        a_code = " ".join(f"{prefix}ac{t}" for t in range(8))
        questions = []
        answers = []
        for i in range(n_questions):
            extra = "" if i < 2 else f" {prefix}qx{i}"
            questions.append(f"<p>{q_text}{extra}</p><code>{q_code}{extra}</code>")
            extra_a = "" if i < 2 else f" {prefix}ax{i}"
            answers.append(f"<p>{a_text}{extra_a}</p><code>{a_code}{extra_a}</code>")
        return questions, answers
    vocab = [f"{prefix}w{t}" for t in range(120)]
    questions = []
    answers = []
    for _ in range(n_questions):
        q_words = rng.sample(vocab, 16)
        a_words = rng.sample(vocab, 16)
        questions.append(f"<p>{' '.join(q_words)}</p>")
        answers.append(f"<p>{' '.join(a_words)}</p>")
    return questions, answers


def _plant_ring(rng: random.Random, factory: _PostFactory, spec: RingSpec,
                members: Sequence[int], ring_index: int, params: ForumParams,
                truth: GroundTruth) -> tuple[datetime, datetime]:
    """Emit the ring's posts; returns (first question time, last answer time)."""
    demands = _ring_demands(members, spec.interaction_count)
    serial = spec.ring_type == SERIAL_RING or spec.all_accepted
    if spec.all_accepted and spec.ring_type == THREAD_RING:
        log.info("ring %d: all_accepted forces one question per answer", ring_index)

    # Confine ring windows to the first half of the span so removal
    # events planted after formation stay inside the corpus time span.
    window_start = params.start + timedelta(
        seconds=round(rng.uniform(0, params.span_days * 0.5 * 86400))
    )
    max_latency_s = spec.max_latency.total_seconds()

    def latency() -> timedelta:
        return timedelta(seconds=max(1, round(rng.uniform(0.15, 0.95) * max_latency_s)))

    if serial:
        groups: list[tuple[int, list[int]]] = [(asker, [answerer]) for asker, answerer in demands]
    else:
        grouped: dict[int, list[int]] = {}
        order: list[int] = []
        for asker, answerer in demands:
            if asker not in grouped:
                grouped[asker] = []
                order.append(asker)
            grouped[asker].append(answerer)
        groups = [(asker, grouped[asker]) for asker in order]

    q_bodies, a_bodies = _ring_bodies(rng, ring_index, spec, len(groups))
    first_q: datetime | None = None
    last_a: datetime | None = None
    accepted_edges = 0
    total_edges = 0
    edge_posts: list[tuple[int, int]] = []  # (question post id, answer post id)
    cursor = window_start
    doc_idx = 0
    for asker, answerers in groups:
        q_time = cursor
        cursor += timedelta(seconds=rng.randint(1800, 7200))
        q_id = factory.question(asker, q_time, q_bodies[doc_idx])
        if first_q is None or q_time < first_q:
            first_q = q_time
        answer_ids = []
        for answerer in answerers:
            a_time = q_time + latency()
            a_id = factory.answer(answerer, a_time, a_bodies[doc_idx], q_id)
            answer_ids.append(a_id)
            edge_posts.append((q_id, a_id))
            total_edges += 1
            if last_a is None or a_time > last_a:
                last_a = a_time
        if spec.all_accepted:
            factory.accept(q_id, answer_ids[0])
            accepted_edges += len(answer_ids)
        else:
            if len(answer_ids) == 1 and rng.random() < 0.5:
                factory.accept(q_id, answer_ids[0])
                accepted_edges += 1
            elif len(answer_ids) > 1:
                factory.accept(q_id, rng.choice(answer_ids))
                accepted_edges += 1
        doc_idx += 1
    if not spec.all_accepted and accepted_edges == total_edges:
        # Guarantee at least one unaccepted edge: retract the last acceptance.
        factory.accept(edge_posts[-1][0], None)

    truth.fraud_users.update(members)
    truth.fraud_communities.append(frozenset(members))
    assert first_q is not None and last_a is not None
    return first_q, last_a


def _plant_removals(rng: random.Random, spec: RingSpec, members: Sequence[int],
                    first_q: datetime, last_a: datetime, span_end: datetime,
                    truth: GroundTruth) -> None:
    count = max(1, round(len(members) * 0.6))
    chosen = sorted(rng.sample(list(members), count))
    offsets = [None, timedelta(hours=12), timedelta(days=3), timedelta(days=10),
               timedelta(days=20)]
    for i, user in enumerate(chosen):
        offset = offsets[i % len(offsets)]
        if offset is None:
            midpoint = first_q + (last_a - first_q) / 2
            when = midpoint if first_q < midpoint < last_a else last_a
        else:
            when = min(last_a + offset, span_end)
        truth.removal_events.append(RemovalEvent(
            user_id=user,
            timestamp=when,
            score_delta=-rng.randint(50, 500),
        ))


def generate_forum(
    honest_users: int,
    honest_questions: int,
    rings: Sequence[RingSpec],
    seed: int,
    params: ForumParams | None = None,
) -> ForumResult:
    """Generate a forum corpus with planted rings and its ground truth.

    Honest askers are uniform; honest answerers follow preferential
    attachment, which concentrates reciprocation on a few heavy users
    and keeps accidental isolated honest pairs rare.  Ring members never
    interact with outsiders.  Deterministic for fixed inputs and seed.
    """
    if honest_users < 1 or honest_questions < 1:
        raise DomainError("honest_users and honest_questions must be positive")
    params = params or ForumParams()
    rng = random.Random(seed)
    factory = _PostFactory()
    truth = GroundTruth()

    _generate_honest(rng, factory, honest_users, honest_questions, params)

    used_ids: set[int] = set(range(1, honest_users + 1))
    next_auto = honest_users + 1
    ring_infos = []
    for ring_index, spec in enumerate(rings):
        if spec.members is not None:
            collision = set(spec.members) & used_ids
            if collision:
                raise ValidationError(
                    f"ring {ring_index}: member ids {sorted(collision)} collide "
                    "with honest users or another ring"
                )
            members = list(spec.members)
        else:
            members = []
            while len(members) < spec.member_count:
                if next_auto not in used_ids:
                    members.append(next_auto)
                next_auto += 1
        used_ids.update(members)
        first_q, last_a = _plant_ring(rng, factory, spec, members, ring_index, params, truth)
        ring_infos.append((spec, members, first_q, last_a))

    span_end = max(post.created_at for post in factory.posts)
    for spec, members, first_q, last_a in ring_infos:
        _plant_removals(rng, spec, members, first_q, last_a, span_end, truth)

    posts = sorted(factory.posts, key=lambda post: post.id)
    return ForumResult(posts=posts, truth=truth)


@dataclass(frozen=True)
class GrowthParams:
    """Honest reputation growth model for snapshot synthesis."""

    users: int
    mean_delta: float = 15.0
    stdev_delta: float = 4.0
    inactive_fraction: float = 0.10
    newer_only_fraction: float = 0.02
    base_score_mean: float = 200.0
    base_score_stdev: float = 80.0
    start_date: date = date(2018, 3, 1)
    spacing_days: int = 90

    def __post_init__(self) -> None:
        if self.users < 1:
            raise DomainError("users must be positive")
        if self.mean_delta <= 0:
            raise DomainError("mean_delta must be positive")
        if not 0 <= self.inactive_fraction < 1:
            raise DomainError("inactive_fraction must lie in [0, 1)")


def generate_snapshots(
    growth: GrowthParams,
    planted_jumps: Sequence[tuple[int, float]],
    dump_labels: Sequence[str] | Sequence[tuple[str, date]],
    seed: int,
) -> tuple[SnapshotSet, GroundTruth]:
    """Generate a snapshot series with planted score jumps.

    Planted users gain exactly multiple x mean_delta per dump interval
    and are always active; honest users draw gaussian deltas.  Labels
    may be bare strings (dates assigned at spacing_days apart) or
    (label, date) pairs.
    """
    if len(dump_labels) < 2:
        raise DomainError("need at least two dump labels")
    seen_planted: set[int] = set()
    for user, multiple in planted_jumps:
        if user in seen_planted:
            raise ValidationError(f"duplicate planted user id {user}")
        seen_planted.add(user)
        if multiple <= 0:
            raise ValidationError(f"planted multiple for user {user} must be > 0")
        if not 1 <= user <= growth.users:
            raise ValidationError(
                f"planted user {user} outside the user range 1..{growth.users}"
            )

    dumps: list[tuple[str, date]] = []
    for i, entry in enumerate(dump_labels):
        if isinstance(entry, str):
            dumps.append((entry, growth.start_date + timedelta(days=i * growth.spacing_days)))
        else:
            label, day = entry
            dumps.append((str(label), day))

    rng = random.Random(seed)
    planted = dict(planted_jumps)
    final_date = dumps[-1][1]
    scores: dict[tuple[int, str], int] = {}
    last_access: dict[int, datetime] = {}
    for user in range(1, growth.users + 1):
        is_planted = user in planted
        base = max(1, round(rng.gauss(growth.base_score_mean, growth.base_score_stdev)))
        first_dump = 0
        if not is_planted and rng.random() < growth.newer_only_fraction:
            first_dump = rng.randint(1, len(dumps) - 1)
        score = base
        for idx, (label, _day) in enumerate(dumps):
            if idx >= first_dump:
                scores[(user, label)] = max(1, score)
            if idx < len(dumps) - 1:
                if is_planted:
                    delta = round(planted[user] * growth.mean_delta)
                else:
                    delta = round(rng.gauss(growth.mean_delta, growth.stdev_delta))
                score = max(1, score + delta)
        if is_planted:
            last_access[user] = datetime.combine(
                final_date, datetime.min.time(), timezone.utc
            )
        elif rng.random() >= growth.inactive_fraction:
            recency = rng.randint(0, 30)
            last_access[user] = datetime.combine(
                final_date - timedelta(days=recency), datetime.min.time(), timezone.utc
            )
        else:
            last_access[user] = datetime.combine(
                dumps[0][1] - timedelta(days=rng.randint(200, 400)),
                datetime.min.time(), timezone.utc,
            )

    snapshots = SnapshotSet(dumps=tuple(dumps), scores=scores, last_access=last_access)
    truth = GroundTruth(planted_jump_users=set(planted))
    return snapshots, truth
