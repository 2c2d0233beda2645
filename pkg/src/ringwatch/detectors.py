"""Suspicion detectors: three community heuristics over the interaction
graph, the reputation-jump detector over snapshot pairs, and the two
above-average baselines.

Community detectors share the isolation requirement and differ in what
they demand of the internal edges: GC_V1 wants enough edges all answered
fast, GC_V2 wants enough edges all accepted, GC_V3 wants near-duplicate
question (and optionally answer) bodies.  All comparisons follow the
preset tables: edge counts, latencies and similarities are inclusive
thresholds; the jump detector and the baselines compare strictly.
"""

from __future__ import annotations

import calendar
import json
import logging
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from datetime import date, timedelta
from pathlib import Path
from statistics import fmean
from typing import IO, Callable, Iterable, Sequence

from .corpus import SnapshotSet
from .errors import ConfigError, DomainError
from .graph import InteractionGraph, is_isolated
from .louvain import Partition
from .textsim import BODY, CODE, MODES, TableSimilaritySource

log = logging.getLogger(__name__)

GC_V1 = "GC_V1"
GC_V2 = "GC_V2"
GC_V3 = "GC_V3"
JUMP = "JUMP"
B_U = "B_U"
B_D = "B_D"

THREADS_ENV = "RINGWATCH_THREADS"


def thread_budget() -> int:
    """Worker cap from RINGWATCH_THREADS; anything unusable means 1."""
    raw = os.environ.get(THREADS_ENV, "").strip()
    if not raw:
        return 1
    try:
        value = int(raw)
    except ValueError:
        log.warning("ignoring non-integer %s=%r", THREADS_ENV, raw)
        return 1
    return max(1, value)


def _map_ordered(fn: Callable, items: Sequence) -> list:
    budget = thread_budget()
    if budget > 1 and len(items) > 1:
        with ThreadPoolExecutor(max_workers=budget) as pool:
            return list(pool.map(fn, items))
    return [fn(item) for item in items]


def shift_months(day: date, months: int) -> date:
    """Calendar-month shift with end-of-month day clamping."""
    total = day.month - 1 + months
    year = day.year + total // 12
    month = total % 12 + 1
    return date(year, month, min(day.day, calendar.monthrange(year, month)[1]))


@dataclass(frozen=True)
class CommunityDetectorConfig:
    """Thresholds for the community detectors.

    tau_l and tau_t drive GC_V1/GC_V2; the similarity thresholds drive
    GC_V3, picked by mode (body: tau_qb/tau_ab, code: tau_qc/tau_ac).
    """

    tau_l: int | None = None
    tau_t: timedelta | None = None
    tau_qb: float | None = None
    tau_qc: float | None = None
    tau_ab: float | None = None
    tau_ac: float | None = None
    similarity_mode: str = BODY
    require_answer_similarity: bool = False
    preset: str | None = None

    def __post_init__(self) -> None:
        if self.tau_l is not None and self.tau_l < 1:
            raise ConfigError("tau_l must be a positive integer")
        if self.tau_t is not None and self.tau_t <= timedelta(0):
            raise ConfigError("tau_t must be a positive duration")
        for name in ("tau_qb", "tau_qc", "tau_ab", "tau_ac"):
            value = getattr(self, name)
            if value is not None and not 0.0 <= value <= 1.0:
                raise ConfigError(f"{name} must lie in [0, 1]")
        if self.similarity_mode not in MODES:
            raise ConfigError(f"similarity_mode must be one of {MODES}")

    def question_threshold(self) -> float:
        value = self.tau_qb if self.similarity_mode == BODY else self.tau_qc
        if value is None:
            raise ConfigError(
                f"{self.similarity_mode} mode needs a question similarity threshold"
            )
        return value

    def answer_threshold(self) -> float:
        value = self.tau_ab if self.similarity_mode == BODY else self.tau_ac
        if value is None:
            raise ConfigError(
                f"{self.similarity_mode} mode needs an answer similarity threshold"
            )
        return value

    def snapshot(self, detector: str) -> dict:
        """Config as a flat JSON-able dict.

        The preset name is deliberately omitted so a preset run and its
        equivalent explicit-threshold run serialize identically; run
        manifests carry the preset for provenance.
        """
        out: dict[str, object] = {"detector": detector}
        if self.tau_l is not None:
            out["tau_l"] = self.tau_l
        if self.tau_t is not None:
            out["tau_t_hours"] = self.tau_t.total_seconds() / 3600.0
        for name in ("tau_qb", "tau_qc", "tau_ab", "tau_ac"):
            value = getattr(self, name)
            if value is not None:
                out[name] = value
        if detector == GC_V3:
            out["similarity_mode"] = self.similarity_mode
            out["require_answer_similarity"] = self.require_answer_similarity
        return out


@dataclass(frozen=True)
class UserDetectorConfig:
    """Thresholds for the reputation-jump detector.

    dump labels default to the two newest snapshots when unset.
    """

    tau_r: float = 28.0
    tau_m_months: int = 3
    dump_m: str | None = None
    dump_n: str | None = None
    preset: str | None = None

    def __post_init__(self) -> None:
        if not self.tau_r > 0:
            raise ConfigError("tau_r must be > 0")
        if self.tau_m_months < 1:
            raise ConfigError("tau_m_months must be a positive integer")

    def snapshot(self) -> dict:
        """Config as a flat JSON-able dict; preset omitted as for the
        community configs."""
        out: dict[str, object] = {
            "detector": JUMP,
            "tau_r": self.tau_r,
            "tau_m_months": self.tau_m_months,
        }
        if self.dump_m:
            out["dump_m"] = self.dump_m
        if self.dump_n:
            out["dump_n"] = self.dump_n
        return out


@dataclass(frozen=True)
class SuspicionReport:
    """One flagged community or user with the evidence behind the flag."""

    kind: str
    subject: tuple[int, ...] | int
    detector: str
    evidence: dict
    config: dict

    def to_json_dict(self) -> dict:
        subject = list(self.subject) if self.kind == "community" else self.subject
        return {
            "kind": self.kind,
            "subject": subject,
            "detector": self.detector,
            "evidence": self.evidence,
            "config": self.config,
        }

    @classmethod
    def from_json_dict(cls, record: dict) -> "SuspicionReport":
        kind = record["kind"]
        raw_subject = record["subject"]
        subject = tuple(int(x) for x in raw_subject) if kind == "community" else int(raw_subject)
        return cls(
            kind=kind,
            subject=subject,
            detector=record["detector"],
            evidence=dict(record["evidence"]),
            config=dict(record["config"]),
        )


def write_reports_jsonl(reports: Iterable[SuspicionReport], target: str | Path | IO[str]) -> int:
    def _dump(stream: IO[str]) -> int:
        count = 0
        for report in reports:
            stream.write(json.dumps(report.to_json_dict(), ensure_ascii=False) + "\n")
            count += 1
        return count

    if hasattr(target, "write"):
        return _dump(target)  # type: ignore[arg-type]
    with Path(target).open("w", encoding="utf-8") as stream:
        return _dump(stream)


def read_reports_jsonl(source: str | Path | IO[str]) -> list[SuspicionReport]:
    def _load(stream: IO[str]) -> list[SuspicionReport]:
        reports = []
        for lineno, raw in enumerate(stream, start=1):
            line = raw.strip()
            if not line:
                continue
            try:
                reports.append(SuspicionReport.from_json_dict(json.loads(line)))
            except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
                raise DomainError(f"reports line {lineno}: {exc}") from exc
        return reports

    if hasattr(source, "read"):
        return _load(source)  # type: ignore[arg-type]
    with Path(source).open("r", encoding="utf-8") as stream:
        return _load(stream)


def _candidate_communities(partition: Partition) -> list[tuple[int, ...]]:
    """Communities of at least two members, ordered by member tuple."""
    return sorted(
        tuple(sorted(members))
        for members in partition.communities.values()
        if len(members) >= 2
    )


def detect_gc_v1(
    graph: InteractionGraph, partition: Partition, config: CommunityDetectorConfig
) -> list[SuspicionReport]:
    """Isolated communities whose edges are numerous and all answered fast."""
    if config.tau_l is None:
        raise ConfigError("GC_V1 requires tau_l")
    if config.tau_t is None:
        raise ConfigError("GC_V1 requires tau_t")
    tau_t_seconds = config.tau_t.total_seconds()
    snapshot = config.snapshot(GC_V1)

    def check(members: tuple[int, ...]) -> SuspicionReport | None:
        if not is_isolated(graph, members):
            return None
        edges = graph.edges_within(members)
        if len(edges) < config.tau_l:
            return None
        max_latency = max(edge.e_time_seconds for edge in edges)
        if max_latency > tau_t_seconds:
            return None
        return SuspicionReport(
            kind="community",
            subject=members,
            detector=GC_V1,
            evidence={"edge_count": len(edges), "max_latency_seconds": max_latency},
            config=snapshot,
        )

    results = _map_ordered(check, _candidate_communities(partition))
    return [report for report in results if report is not None]


def detect_gc_v2(
    graph: InteractionGraph, partition: Partition, config: CommunityDetectorConfig
) -> list[SuspicionReport]:
    """Isolated communities whose edges are numerous and all accepted."""
    if config.tau_l is None:
        raise ConfigError("GC_V2 requires tau_l")
    snapshot = config.snapshot(GC_V2)

    def check(members: tuple[int, ...]) -> SuspicionReport | None:
        if not is_isolated(graph, members):
            return None
        edges = graph.edges_within(members)
        if len(edges) < config.tau_l:
            return None
        accepted = sum(1 for edge in edges if edge.e_accepted)
        if accepted != len(edges):
            return None
        return SuspicionReport(
            kind="community",
            subject=members,
            detector=GC_V2,
            evidence={"edge_count": len(edges), "accepted_edges": accepted},
            config=snapshot,
        )

    results = _map_ordered(check, _candidate_communities(partition))
    return [report for report in results if report is not None]


def detect_gc_v3(
    graph: InteractionGraph,
    partition: Partition,
    config: CommunityDetectorConfig,
    similarity_source: TableSimilaritySource,
) -> list[SuspicionReport]:
    """Isolated communities containing a near-duplicate question pair.

    With require_answer_similarity the community must also contain a
    near-duplicate answer pair.  Communities with fewer than two
    questions simply cannot match; that is not an error.
    """
    question_threshold = config.question_threshold()
    answer_threshold = config.answer_threshold() if config.require_answer_similarity else None
    mode = config.similarity_mode
    snapshot = config.snapshot(GC_V3)

    def check(members: tuple[int, ...]) -> SuspicionReport | None:
        if not is_isolated(graph, members):
            return None
        max_q = similarity_source.max_question_similarity(members, mode)
        if max_q is None or max_q < question_threshold:
            return None
        evidence: dict[str, object] = {"max_question_similarity": max_q, "mode": mode}
        if answer_threshold is not None:
            max_a = similarity_source.max_answer_similarity(members, mode)
            if max_a is None or max_a < answer_threshold:
                return None
            evidence["max_answer_similarity"] = max_a
        return SuspicionReport(
            kind="community",
            subject=members,
            detector=GC_V3,
            evidence=evidence,
            config=snapshot,
        )

    results = _map_ordered(check, _candidate_communities(partition))
    return [report for report in results if report is not None]


@dataclass(frozen=True)
class _DumpPair:
    label_m: str
    label_n: str
    date_m: date
    deltas: dict[int, int]
    active: set[int]
    newer_only: int


def _resolve_pair(
    snapshots: SnapshotSet, dump_m: str | None, dump_n: str | None, tau_m_months: int
) -> _DumpPair:
    labels = snapshots.labels
    if len(labels) < 2:
        raise DomainError("need at least two dumps to compare")
    label_m = dump_m if dump_m is not None else labels[-1]
    label_n = dump_n if dump_n is not None else labels[-2]
    date_m = snapshots.date_of(label_m)
    date_n = snapshots.date_of(label_n)
    if date_m <= date_n:
        raise ConfigError(
            f"dump_m ({label_m}, {date_m}) must be newer than dump_n ({label_n}, {date_n})"
        )
    users_m = snapshots.users_in(label_m)
    users_n = snapshots.users_in(label_n)
    deltas = {
        user: snapshots.scores[(user, label_m)] - snapshots.scores[(user, label_n)]
        for user in users_m & users_n
    }
    newer_only = len(users_m - users_n)
    if newer_only:
        log.info(
            "%d users present only in dump %s excluded from delta computation",
            newer_only, label_m,
        )
    window_start = shift_months(date_m, -tau_m_months)
    active = set()
    for user in deltas:
        accessed = snapshots.last_access.get(user)
        if accessed is not None and window_start <= accessed.date() <= date_m:
            active.add(user)
    return _DumpPair(
        label_m=label_m,
        label_n=label_n,
        date_m=date_m,
        deltas=deltas,
        active=active,
        newer_only=newer_only,
    )


def detect_suspicious_users(
    snapshots: SnapshotSet, config: UserDetectorConfig
) -> list[SuspicionReport]:
    """Flag active users whose score growth deviates far above the mean.

    delta is the score difference between the two dumps, rho the mean
    delta over active users, and phi = (delta - rho)/rho; users with
    phi strictly above tau_r are flagged.  A non-positive rho aborts:
    phi's sign convention collapses there.
    """
    pair = _resolve_pair(snapshots, config.dump_m, config.dump_n, config.tau_m_months)
    if not pair.active:
        raise DomainError(
            f"no active users in the {config.tau_m_months}-month window before {pair.date_m}"
        )
    rho = fmean(pair.deltas[user] for user in pair.active)
    if rho <= 0:
        raise DomainError(
            f"mean active delta rho={rho:.4f} is not positive; "
            "deviation ratios are meaningless on this dump pair"
        )
    snapshot = config.snapshot()
    snapshot["dump_m"] = pair.label_m
    snapshot["dump_n"] = pair.label_n
    reports = []
    for user in sorted(pair.active):
        delta = pair.deltas[user]
        phi = (delta - rho) / rho
        if phi > config.tau_r:
            reports.append(SuspicionReport(
                kind="user",
                subject=user,
                detector=JUMP,
                evidence={"delta": delta, "rho": rho, "phi": phi},
                config=snapshot,
            ))
    return reports


def baseline_up(
    snapshots: SnapshotSet,
    dump_m: str | None = None,
    dump_n: str | None = None,
    tau_m_months: int = 3,
) -> list[SuspicionReport]:
    """Active users whose positive growth exceeds the mean positive growth."""
    pair = _resolve_pair(snapshots, dump_m, dump_n, tau_m_months)
    gains = {user: pair.deltas[user] for user in pair.active if pair.deltas[user] > 0}
    if not gains:
        log.info("baseline_up: no active user gained score; nothing to flag")
        return []
    mean_gain = fmean(gains.values())
    config = {
        "detector": B_U,
        "dump_m": pair.label_m,
        "dump_n": pair.label_n,
        "tau_m_months": tau_m_months,
    }
    return [
        SuspicionReport(
            kind="user",
            subject=user,
            detector=B_U,
            evidence={"delta": delta, "mean_positive_delta": mean_gain},
            config=config,
        )
        for user, delta in sorted(gains.items())
        if delta > mean_gain
    ]


def baseline_down(
    snapshots: SnapshotSet,
    dump_m: str | None = None,
    dump_n: str | None = None,
    tau_m_months: int = 3,
) -> list[SuspicionReport]:
    """Active users whose score drop exceeds the mean drop magnitude."""
    pair = _resolve_pair(snapshots, dump_m, dump_n, tau_m_months)
    drops = {user: -pair.deltas[user] for user in pair.active if pair.deltas[user] < 0}
    if not drops:
        log.info("baseline_down: no active user lost score; nothing to flag")
        return []
    mean_drop = fmean(drops.values())
    config = {
        "detector": B_D,
        "dump_m": pair.label_m,
        "dump_n": pair.label_n,
        "tau_m_months": tau_m_months,
    }
    return [
        SuspicionReport(
            kind="user",
            subject=user,
            detector=B_D,
            evidence={"delta": -magnitude, "mean_drop_magnitude": mean_drop},
            config=config,
        )
        for user, magnitude in sorted(drops.items())
        if magnitude > mean_drop
    ]


def _hours(value: float) -> timedelta:
    return timedelta(hours=value)


# Named community configurations; C1-C4 exercise the acceptance detector,
# C5-C12 the latency detector at two edge-count floors, C13-C20 the
# similarity detector in body and code modes.
COMMUNITY_PRESETS: dict[str, tuple[str, CommunityDetectorConfig]] = {
    "C1": (GC_V2, CommunityDetectorConfig(tau_l=2, preset="C1")),
    "C2": (GC_V2, CommunityDetectorConfig(tau_l=6, preset="C2")),
    "C3": (GC_V2, CommunityDetectorConfig(tau_l=8, preset="C3")),
    "C4": (GC_V2, CommunityDetectorConfig(tau_l=10, preset="C4")),
    "C5": (GC_V1, CommunityDetectorConfig(tau_l=6, tau_t=_hours(24), preset="C5")),
    "C6": (GC_V1, CommunityDetectorConfig(tau_l=6, tau_t=_hours(1), preset="C6")),
    "C7": (GC_V1, CommunityDetectorConfig(tau_l=6, tau_t=_hours(0.5), preset="C7")),
    "C8": (GC_V1, CommunityDetectorConfig(tau_l=6, tau_t=_hours(0.25), preset="C8")),
    "C9": (GC_V1, CommunityDetectorConfig(tau_l=8, tau_t=_hours(24), preset="C9")),
    "C10": (GC_V1, CommunityDetectorConfig(tau_l=8, tau_t=_hours(1), preset="C10")),
    "C11": (GC_V1, CommunityDetectorConfig(tau_l=8, tau_t=_hours(0.5), preset="C11")),
    "C12": (GC_V1, CommunityDetectorConfig(tau_l=8, tau_t=_hours(0.25), preset="C12")),
    "C13": (GC_V3, CommunityDetectorConfig(tau_qb=0.89, similarity_mode=BODY, preset="C13")),
    "C14": (GC_V3, CommunityDetectorConfig(tau_qb=0.95, similarity_mode=BODY, preset="C14")),
    "C15": (GC_V3, CommunityDetectorConfig(tau_qc=0.80, similarity_mode=CODE, preset="C15")),
    "C16": (GC_V3, CommunityDetectorConfig(tau_qc=0.90, similarity_mode=CODE, preset="C16")),
    "C17": (GC_V3, CommunityDetectorConfig(
        tau_qb=0.89, tau_ab=0.89, similarity_mode=BODY,
        require_answer_similarity=True, preset="C17")),
    "C18": (GC_V3, CommunityDetectorConfig(
        tau_qb=0.95, tau_ab=0.95, similarity_mode=BODY,
        require_answer_similarity=True, preset="C18")),
    "C19": (GC_V3, CommunityDetectorConfig(
        tau_qc=0.80, tau_ac=0.80, similarity_mode=CODE,
        require_answer_similarity=True, preset="C19")),
    "C20": (GC_V3, CommunityDetectorConfig(
        tau_qc=0.90, tau_ac=0.90, similarity_mode=CODE,
        require_answer_similarity=True, preset="C20")),
}

# Named jump thresholds: roughly mean + 2 stdev, the 99th percentile,
# and the 100th percentile of observed growth ratios.
JUMP_PRESETS: dict[str, float] = {"C1": 28.0, "C2": 65.0, "C3": 130.0}


def community_preset(name: str) -> tuple[str, CommunityDetectorConfig]:
    try:
        return COMMUNITY_PRESETS[name]
    except KeyError:
        raise ConfigError(
            f"unknown community preset {name!r} (valid: C1..C20)"
        ) from None


def jump_preset(
    name: str,
    tau_m_months: int = 3,
    dump_m: str | None = None,
    dump_n: str | None = None,
) -> UserDetectorConfig:
    try:
        tau_r = JUMP_PRESETS[name]
    except KeyError:
        raise ConfigError(f"unknown jump preset {name!r} (valid: C1..C3)") from None
    return UserDetectorConfig(
        tau_r=tau_r, tau_m_months=tau_m_months, dump_m=dump_m, dump_n=dump_n, preset=name
    )


def detect_community(
    graph: InteractionGraph,
    partition: Partition,
    detector: str,
    config: CommunityDetectorConfig,
    similarity_source: TableSimilaritySource | None = None,
) -> list[SuspicionReport]:
    """Dispatch to one of the three community detectors by name."""
    if detector == GC_V1:
        return detect_gc_v1(graph, partition, config)
    if detector == GC_V2:
        return detect_gc_v2(graph, partition, config)
    if detector == GC_V3:
        if similarity_source is None:
            raise ConfigError("GC_V3 requires a similarity source built from post bodies")
        return detect_gc_v3(graph, partition, config, similarity_source)
    raise ConfigError(f"unknown community detector {detector!r}")
