"""Scoring detector output against ground truth.

Provides the confusion/precision/recall arithmetic, seeded sampling for
relative recall, the coverage bucket table over flagged communities,
and the removal-event proximity windows.
"""

from __future__ import annotations

import csv
import json
import logging
import math
import random
from dataclasses import dataclass
from datetime import datetime, timedelta
from pathlib import Path
from statistics import NormalDist
from typing import IO, Iterable, Mapping, Sequence

from .corpus import InteractionRecord
from .errors import DomainError
from .synth import RemovalEvent

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class ConfusionMatrix:
    tp: int
    fp: int
    tn: int
    fn: int

    def __post_init__(self) -> None:
        for name in ("tp", "fp", "tn", "fn"):
            if getattr(self, name) < 0:
                raise DomainError(f"{name} must be nonnegative")

    @property
    def total(self) -> int:
        return self.tp + self.fp + self.tn + self.fn


def confusion(flagged: set, truth: set, population: set) -> ConfusionMatrix:
    """Partition the population into the four confusion cells."""
    if not population:
        raise DomainError("confusion needs a non-empty population")
    if not flagged <= population:
        raise DomainError("flagged set must be a subset of the population")
    if not truth <= population:
        raise DomainError("truth set must be a subset of the population")
    tp = len(flagged & truth)
    fp = len(flagged - truth)
    fn = len(truth - flagged)
    tn = len(population) - tp - fp - fn
    return ConfusionMatrix(tp=tp, fp=fp, tn=tn, fn=fn)


@dataclass(frozen=True)
class Metrics:
    """Precision/recall/F1/accuracy; degenerate denominators yield None
    with the reason recorded in notes, never a silent zero."""

    precision: float | None
    recall: float | None
    f1: float | None
    accuracy: float
    notes: tuple[str, ...] = ()


def metrics(c: ConfusionMatrix) -> Metrics:
    if c.total == 0:
        raise DomainError("cannot compute metrics over an empty population")
    notes: list[str] = []
    if c.tp + c.fp == 0:
        precision = None
        notes.append("precision undefined: nothing was flagged")
    else:
        precision = c.tp / (c.tp + c.fp)
    if c.tp + c.fn == 0:
        recall = None
        notes.append("recall undefined: ground truth has no positives")
    else:
        recall = c.tp / (c.tp + c.fn)
    if precision is None or recall is None:
        f1 = None
        notes.append("f1 undefined: requires both precision and recall")
    elif precision + recall == 0:
        f1 = None
        notes.append("f1 undefined: precision and recall are both zero")
    else:
        f1 = 2 * precision * recall / (precision + recall)
    accuracy = (c.tp + c.tn) / c.total
    return Metrics(
        precision=precision, recall=recall, f1=f1, accuracy=accuracy, notes=tuple(notes)
    )


def recommended_sample_size(
    population_size: int, confidence: float = 0.99, margin: float = 0.10
) -> int:
    """Sample size for a proportion at worst-case variance, with finite
    population correction (e.g. 166 for a population of 200,000 at 99%
    confidence and a 10-point interval)."""
    if population_size < 1:
        raise DomainError("population_size must be positive")
    if not 0 < confidence < 1 or not 0 < margin < 1:
        raise DomainError("confidence and margin must lie in (0, 1)")
    z = NormalDist().inv_cdf(0.5 + confidence / 2)
    n0 = (z * z * 0.25) / (margin * margin)
    corrected = n0 / (1 + (n0 - 1) / population_size)
    return min(population_size, math.ceil(corrected))


def sample_for_relative_recall(population: set, sample_size: int, seed: int) -> set:
    """Seeded uniform sample without replacement; census-sized requests
    return the whole population."""
    if sample_size < 1:
        raise DomainError("sample_size must be positive")
    if sample_size > len(population):
        raise DomainError(
            f"sample_size {sample_size} exceeds population of {len(population)}"
        )
    ordered = sorted(population)
    rng = random.Random(seed)
    return set(rng.sample(ordered, sample_size))


def relative_recall(flagged: set, truth: set, sample: set) -> float | None:
    """Recall measured only inside the sampled subset; None when the
    sample contains no true positives to find."""
    truth_in_sample = truth & sample
    if not truth_in_sample:
        return None
    return len(flagged & truth_in_sample) / len(truth_in_sample)


@dataclass(frozen=True)
class CoverageBuckets:
    """Share of flagged communities by confirmed-member fraction.

    Buckets overlap by design: a fully confirmed community counts in
    every nonnegative bucket at once.
    """

    communities_total: int
    pct_at_least_one: float
    pct_all: float
    pct_ge_75: float
    pct_ge_50: float
    pct_lt_50: float

    def as_dict(self) -> dict:
        return {
            "communities_total": self.communities_total,
            "pct_at_least_one": self.pct_at_least_one,
            "pct_all": self.pct_all,
            "pct_ge_75": self.pct_ge_75,
            "pct_ge_50": self.pct_ge_50,
            "pct_lt_50": self.pct_lt_50,
        }


def coverage_report(
    flagged_communities: Sequence[Iterable[int]], confirmed: set
) -> CoverageBuckets:
    """Bucket flagged communities by the fraction of confirmed members."""
    communities = [frozenset(members) for members in flagged_communities]
    if not communities:
        raise DomainError("coverage needs at least one flagged community")
    n = len(communities)
    at_least_one = every = ge_75 = ge_50 = lt_50 = 0
    for members in communities:
        fraction = len(members & confirmed) / len(members)
        if fraction > 0:
            at_least_one += 1
        if fraction == 1.0:
            every += 1
        if fraction >= 0.75:
            ge_75 += 1
        if fraction >= 0.5:
            ge_50 += 1
        if fraction < 0.5:
            lt_50 += 1
    pct = lambda count: 100.0 * count / n
    return CoverageBuckets(
        communities_total=n,
        pct_at_least_one=pct(at_least_one),
        pct_all=pct(every),
        pct_ge_75=pct(ge_75),
        pct_ge_50=pct(ge_50),
        pct_lt_50=pct(lt_50),
    )


PROXIMITY_WINDOWS = ("during", "in_1d", "in_7d", "in_14d", "in_30d")
_WINDOW_DAYS = {"in_1d": 1, "in_7d": 7, "in_14d": 14, "in_30d": 30}


@dataclass(frozen=True)
class ProximityReport:
    """How often a removal event lands near community formation.

    ``counts`` holds, per window, the number of counted communities
    with at least one member removal event inside the window; the
    cumulative windows all start at the first question time, so counts
    never decrease from 1d up to 30d.
    """

    communities_total: int
    excluded: int
    counts: dict[str, int]
    percentages: dict[str, float]

    def as_dict(self) -> dict:
        return {
            "communities_total": self.communities_total,
            "excluded": self.excluded,
            "counts": dict(self.counts),
            "percentages": dict(self.percentages),
        }


def formation_times(
    records: Iterable[InteractionRecord], communities: Iterable[Iterable[int]]
) -> dict[frozenset, tuple[datetime, datetime]]:
    """Per community: (first question time, last answer time) over its
    internal interaction records."""
    sets = [frozenset(members) for members in communities]
    times: dict[frozenset, tuple[datetime, datetime]] = {}
    for record in records:
        for members in sets:
            if record.asker_id in members and record.answerer_id in members:
                earliest, latest = times.get(members, (None, None))
                q_time, a_time = record.question_created_at, record.answer_created_at
                times[members] = (
                    q_time if earliest is None or q_time < earliest else earliest,
                    a_time if latest is None or a_time > latest else latest,
                )
    return times


def proximity_report(
    flagged_communities: Sequence[Iterable[int]],
    removal_events: Sequence[RemovalEvent],
    formation: Mapping[frozenset, tuple[datetime, datetime]],
) -> ProximityReport:
    """Percentage of communities with a member removal event per window.

    Windows are closed; events before the first question are excluded
    everywhere; the 1d/7d/14d/30d windows run from the first question
    to the stated horizon after the last answer, so they are cumulative
    and contain the formation interval.
    """
    if not flagged_communities:
        raise DomainError("proximity needs at least one flagged community")
    events_by_user: dict[int, list[RemovalEvent]] = {}
    for event in removal_events:
        events_by_user.setdefault(event.user_id, []).append(event)

    counts = {window: 0 for window in PROXIMITY_WINDOWS}
    counted = 0
    excluded = 0
    for members_iter in flagged_communities:
        members = frozenset(members_iter)
        if members not in formation:
            excluded += 1
            log.info("community %s has no interaction records; excluded from proximity",
                     sorted(members)[:5])
            continue
        counted += 1
        t1_q, t1_a = formation[members]
        member_events = [
            event
            for user in members
            for event in events_by_user.get(user, ())
            if event.timestamp >= t1_q
        ]
        if any(event.timestamp <= t1_a for event in member_events):
            counts["during"] += 1
        for window, days in _WINDOW_DAYS.items():
            horizon = t1_a + timedelta(days=days)
            if any(event.timestamp <= horizon for event in member_events):
                counts[window] += 1
    percentages = {
        window: (100.0 * count / counted if counted else 0.0)
        for window, count in counts.items()
    }
    return ProximityReport(
        communities_total=counted,
        excluded=excluded,
        counts=counts,
        percentages=percentages,
    )


@dataclass(frozen=True)
class MetricsRow:
    detector: str
    preset: str
    confusion: ConfusionMatrix
    scores: Metrics


METRICS_HEADER = ["detector", "preset", "P", "R", "F1", "A", "tp", "fp", "fn", "tn"]


def write_metrics_csv(rows: Sequence[MetricsRow], target: str | Path | IO[str]) -> int:
    """One row per detector/preset evaluation; undefined metrics stay blank."""

    def _fmt(value: float | None) -> str:
        return "" if value is None else repr(value)

    def _dump(stream: IO[str]) -> int:
        writer = csv.writer(stream, lineterminator="\n")
        writer.writerow(METRICS_HEADER)
        for row in rows:
            writer.writerow([
                row.detector,
                row.preset,
                _fmt(row.scores.precision),
                _fmt(row.scores.recall),
                _fmt(row.scores.f1),
                _fmt(row.scores.accuracy),
                row.confusion.tp,
                row.confusion.fp,
                row.confusion.fn,
                row.confusion.tn,
            ])
        return len(rows)

    if hasattr(target, "write"):
        return _dump(target)  # type: ignore[arg-type]
    with Path(target).open("w", encoding="utf-8", newline="") as stream:
        return _dump(stream)


def write_report_json(
    target: str | Path | IO[str],
    coverage: CoverageBuckets | None = None,
    proximity: ProximityReport | None = None,
    extra: Mapping | None = None,
) -> None:
    payload: dict = {}
    if coverage is not None:
        payload["coverage"] = coverage.as_dict()
    if proximity is not None:
        payload["proximity"] = proximity.as_dict()
    if extra:
        payload.update(extra)
    text = json.dumps(payload, indent=2, sort_keys=True) + "\n"
    if hasattr(target, "write"):
        target.write(text)  # type: ignore[union-attr]
    else:
        Path(target).write_text(text, encoding="utf-8")
