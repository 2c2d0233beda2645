"""Community detectors, the reputation-jump detector, baselines, presets."""

import io
import random
from datetime import date, datetime, timedelta, timezone

import pytest

from helpers import T0, answer, four_cluster_fixture, question, records_for
from ringwatch.corpus import SnapshotSet
from ringwatch.detectors import (
    B_D,
    B_U,
    COMMUNITY_PRESETS,
    GC_V1,
    GC_V2,
    GC_V3,
    JUMP,
    JUMP_PRESETS,
    CommunityDetectorConfig,
    SuspicionReport,
    UserDetectorConfig,
    baseline_down,
    baseline_up,
    community_preset,
    detect_community,
    detect_gc_v1,
    detect_gc_v2,
    detect_gc_v3,
    detect_suspicious_users,
    jump_preset,
    read_reports_jsonl,
    shift_months,
    thread_budget,
    write_reports_jsonl,
)
from ringwatch.errors import ConfigError, DomainError
from ringwatch.graph import build_graph
from ringwatch.louvain import Partition, louvain
from ringwatch.textsim import BODY, CODE, TableSimilaritySource


class TestShiftMonths:
    def test_plain_shift(self):
        assert shift_months(date(2020, 6, 15), -3) == date(2020, 3, 15)
        assert shift_months(date(2020, 6, 15), 3) == date(2020, 9, 15)

    def test_year_boundary(self):
        assert shift_months(date(2020, 1, 10), -3) == date(2019, 10, 10)
        assert shift_months(date(2019, 11, 1), 3) == date(2020, 2, 1)

    def test_day_clamped(self):
        assert shift_months(date(2020, 5, 31), -3) == date(2020, 2, 29)
        assert shift_months(date(2019, 5, 31), -3) == date(2019, 2, 28)
        assert shift_months(date(2020, 3, 31), -1) == date(2020, 2, 29)
        assert shift_months(date(2020, 1, 31), 1) == date(2020, 2, 29)


class TestConfigValidation:
    def test_community_thresholds(self):
        with pytest.raises(ConfigError):
            CommunityDetectorConfig(tau_l=0)
        with pytest.raises(ConfigError):
            CommunityDetectorConfig(tau_t=timedelta(0))
        with pytest.raises(ConfigError):
            CommunityDetectorConfig(tau_qb=1.5)
        with pytest.raises(ConfigError):
            CommunityDetectorConfig(similarity_mode="prose")

    def test_mode_threshold_selection(self):
        config = CommunityDetectorConfig(tau_qb=0.9, tau_qc=0.8, similarity_mode=CODE)
        assert config.question_threshold() == 0.8
        config = CommunityDetectorConfig(tau_qb=0.9, similarity_mode=BODY)
        assert config.question_threshold() == 0.9
        with pytest.raises(ConfigError):
            CommunityDetectorConfig(tau_qc=0.8, similarity_mode=BODY).question_threshold()
        with pytest.raises(ConfigError):
            CommunityDetectorConfig(tau_qb=0.9, similarity_mode=BODY).answer_threshold()

    def test_user_thresholds(self):
        with pytest.raises(ConfigError):
            UserDetectorConfig(tau_r=0.0)
        with pytest.raises(ConfigError):
            UserDetectorConfig(tau_m_months=0)

    def test_snapshot_omits_preset(self):
        _, config = community_preset("C9")
        snap = config.snapshot(GC_V1)
        assert "preset" not in snap
        assert snap == {"detector": GC_V1, "tau_l": 8, "tau_t_hours": 24.0}
        jump_snap = jump_preset("C2").snapshot()
        assert "preset" not in jump_snap
        assert jump_snap["tau_r"] == 65.0


@pytest.fixture(scope="module")
def cluster_setup():
    posts = four_cluster_fixture()
    records = records_for(posts)
    graph = build_graph(records)
    partition = louvain(graph)
    return records, graph, partition


class TestCommunityDetectors:
    def test_partition_recovers_clusters(self, cluster_setup):
        _records, _graph, partition = cluster_setup
        assert set(partition.communities.values()) == {
            frozenset({1, 2}), frozenset({3, 4, 5}),
            frozenset({6, 7}), frozenset({8, 9, 10}),
        }

    def test_gc_v1_flags_fast_clusters(self, cluster_setup):
        _records, graph, partition = cluster_setup
        config = CommunityDetectorConfig(tau_l=8, tau_t=timedelta(hours=24))
        reports = detect_gc_v1(graph, partition, config)
        assert {r.subject for r in reports} == {(1, 2), (3, 4, 5)}
        by_subject = {r.subject: r for r in reports}
        assert by_subject[(1, 2)].evidence["edge_count"] == 13
        assert by_subject[(3, 4, 5)].evidence["edge_count"] == 9
        assert by_subject[(1, 2)].evidence["max_latency_seconds"] <= 24 * 3600

    def test_gc_v2_flags_accepted_clusters(self, cluster_setup):
        _records, graph, partition = cluster_setup
        config = CommunityDetectorConfig(tau_l=8)
        reports = detect_gc_v2(graph, partition, config)
        assert {r.subject for r in reports} == {(6, 7), (8, 9, 10)}
        by_subject = {r.subject: r for r in reports}
        assert by_subject[(6, 7)].evidence == {"edge_count": 13, "accepted_edges": 13}
        assert by_subject[(8, 9, 10)].evidence == {"edge_count": 8, "accepted_edges": 8}

    def test_edge_count_threshold_inclusive(self, cluster_setup):
        _records, graph, partition = cluster_setup
        # D has exactly 8 accepted edges: tau_l=8 keeps it, 9 drops it
        eight = detect_gc_v2(graph, partition, CommunityDetectorConfig(tau_l=8))
        nine = detect_gc_v2(graph, partition, CommunityDetectorConfig(tau_l=9))
        assert (8, 9, 10) in {r.subject for r in eight}
        assert (8, 9, 10) not in {r.subject for r in nine}

    def test_latency_threshold_inclusive(self, cluster_setup):
        _records, graph, partition = cluster_setup
        # A's slowest answer is exactly 2h
        config = CommunityDetectorConfig(tau_l=8, tau_t=timedelta(hours=2))
        assert (1, 2) in {r.subject for r in detect_gc_v1(graph, partition, config)}
        config = CommunityDetectorConfig(tau_l=8, tau_t=timedelta(hours=1, minutes=59))
        assert (1, 2) not in {r.subject for r in detect_gc_v1(graph, partition, config)}

    def test_non_isolated_community_never_flagged(self, cluster_setup):
        _records, graph, partition = cluster_setup
        # hand partition splitting cluster B: {3,4} leaks edges to 5
        assignment = dict(partition.assignment)
        cid = max(partition.communities) + 1
        assignment[5] = cid
        broken = Partition(
            assignment=assignment,
            communities={
                **{c: m for c, m in partition.communities.items() if c != partition.community_of(3)},
                partition.community_of(3): frozenset({3, 4}),
                cid: frozenset({5}),
            },
            modularity_q=0.0,
        )
        config = CommunityDetectorConfig(tau_l=1, tau_t=timedelta(days=30))
        assert (3, 4) not in {r.subject for r in detect_gc_v1(graph, broken, config)}

    def test_missing_thresholds_rejected(self, cluster_setup):
        _records, graph, partition = cluster_setup
        with pytest.raises(ConfigError):
            detect_gc_v1(graph, partition, CommunityDetectorConfig(tau_l=8))
        with pytest.raises(ConfigError):
            detect_gc_v1(graph, partition, CommunityDetectorConfig(tau_t=timedelta(hours=1)))
        with pytest.raises(ConfigError):
            detect_gc_v2(graph, partition, CommunityDetectorConfig(tau_t=timedelta(hours=1)))

    def test_tau_l_sweep_monotone(self, cluster_setup):
        _records, graph, partition = cluster_setup
        previous = None
        for tau_l in (2, 6, 8, 10):
            flagged = {
                r.subject
                for r in detect_gc_v2(graph, partition, CommunityDetectorConfig(tau_l=tau_l))
            }
            if previous is not None:
                assert flagged <= previous
            previous = flagged
        assert previous == {(6, 7)}  # only C has >= 10 accepted edges


def _similarity_fixture():
    """Two isolated mutual pairs; 10/11 post identical questions, and
    30/31 self-similar answers but distinct questions."""
    posts = [
        question(1, 10, T0, body="<p>identical question text</p><code>f(1)</code>"),
        answer(2, 11, 1, T0 + timedelta(hours=1), body="<p>answer one</p>"),
        question(3, 11, T0, body="<p>identical question text</p><code>f(1)</code>"),
        answer(4, 10, 3, T0 + timedelta(hours=1), body="<p>answer two entirely</p>"),
        question(5, 30, T0, body="<p>apples oranges pears</p><code>g(2)</code>"),
        answer(6, 31, 5, T0 + timedelta(hours=1), body="<p>same answer body</p>"),
        question(7, 31, T0, body="<p>trains planes boats</p><code>h(3)</code>"),
        answer(8, 30, 7, T0 + timedelta(hours=1), body="<p>same answer body</p>"),
    ]
    records = records_for(posts)
    graph = build_graph(records)
    partition = louvain(graph)
    source = TableSimilaritySource(records)
    return graph, partition, source


class TestGcV3:
    def test_question_similarity_flags(self):
        graph, partition, source = _similarity_fixture()
        config = CommunityDetectorConfig(tau_qb=0.95, similarity_mode=BODY)
        reports = detect_gc_v3(graph, partition, config, source)
        assert {r.subject for r in reports} == {(10, 11)}
        report = reports[0]
        assert report.evidence["max_question_similarity"] == pytest.approx(1.0)
        assert report.evidence["mode"] == BODY

    def test_code_mode(self):
        graph, partition, source = _similarity_fixture()
        config = CommunityDetectorConfig(tau_qc=0.95, similarity_mode=CODE)
        reports = detect_gc_v3(graph, partition, config, source)
        assert {r.subject for r in reports} == {(10, 11)}

    def test_answer_similarity_requirement(self):
        graph, partition, source = _similarity_fixture()
        # 10/11: identical questions but different answers -> dropped
        config = CommunityDetectorConfig(
            tau_qb=0.95, tau_ab=0.95, similarity_mode=BODY,
            require_answer_similarity=True,
        )
        assert detect_gc_v3(graph, partition, config, source) == []
        # lowering the question bar lets 30/31 in: distinct questions
        # (sim < 0.5) still fail, so nothing is flagged either way
        config = CommunityDetectorConfig(
            tau_qb=0.3, tau_ab=0.95, similarity_mode=BODY,
            require_answer_similarity=True,
        )
        flagged = {r.subject for r in detect_gc_v3(graph, partition, config, source)}
        assert (30, 31) not in flagged

    def test_dispatcher_requires_source(self):
        graph, partition, _source = _similarity_fixture()
        config = CommunityDetectorConfig(tau_qb=0.9)
        with pytest.raises(ConfigError):
            detect_community(graph, partition, GC_V3, config, None)
        with pytest.raises(ConfigError):
            detect_community(graph, partition, "GC_V9", config)


def snapset(dumps, scores, access):
    return SnapshotSet(
        dumps=tuple(dumps),
        scores=dict(scores),
        last_access=dict(access),
    )


def _at(day: date) -> datetime:
    return datetime.combine(day, datetime.min.time(), timezone.utc)


D1 = date(2020, 1, 1)
D2 = date(2020, 4, 1)


def _jump_fixture():
    """Active deltas 30/10/500 -> rho=180; user 4 inactive, user 5 newer-only."""
    scores = {
        (1, "d1"): 100, (1, "d2"): 130,
        (2, "d1"): 100, (2, "d2"): 110,
        (3, "d1"): 100, (3, "d2"): 600,
        (4, "d1"): 100, (4, "d2"): 5000,
        (5, "d2"): 50,
    }
    access = {
        1: _at(date(2020, 3, 15)),
        2: _at(date(2020, 3, 20)),
        3: _at(date(2020, 3, 25)),
        4: _at(date(2019, 10, 1)),  # outside the 3-month window
        5: _at(date(2020, 3, 30)),
    }
    return snapset([("d1", D1), ("d2", D2)], scores, access)


class TestJumpDetector:
    def test_hand_case(self):
        snaps = _jump_fixture()
        config = UserDetectorConfig(tau_r=1.5)
        reports = detect_suspicious_users(snaps, config)
        assert [r.subject for r in reports] == [3]
        evidence = reports[0].evidence
        assert evidence["delta"] == 500
        assert evidence["rho"] == pytest.approx(180.0)
        assert evidence["phi"] == pytest.approx((500 - 180) / 180)
        assert reports[0].config["dump_m"] == "d2"
        assert reports[0].config["dump_n"] == "d1"

    def test_strict_threshold(self):
        snaps = _jump_fixture()
        phi_user3 = (500 - 180) / 180
        at_threshold = detect_suspicious_users(snaps, UserDetectorConfig(tau_r=phi_user3))
        assert at_threshold == []  # strictly greater required
        below = detect_suspicious_users(snaps, UserDetectorConfig(tau_r=phi_user3 - 1e-9))
        assert [r.subject for r in below] == [3]

    def test_inactive_user_not_flagged_nor_in_rho(self):
        snaps = _jump_fixture()
        reports = detect_suspicious_users(snaps, UserDetectorConfig(tau_r=0.1))
        subjects = {r.subject for r in reports}
        assert 4 not in subjects  # delta 4900 but stale last access
        assert all(r.evidence["rho"] == pytest.approx(180.0) for r in reports)

    def test_activity_window_boundaries(self):
        window_start = shift_months(D2, -3)  # 2020-01-01
        scores = {
            (1, "d1"): 100, (1, "d2"): 200,
            (2, "d1"): 100, (2, "d2"): 200,
            (3, "d1"): 100, (3, "d2"): 200,
        }
        access = {
            1: _at(window_start),                       # inclusive start
            2: _at(window_start - timedelta(days=1)),   # just outside
            3: _at(D2 + timedelta(days=5)),             # after the dump
        }
        snaps = snapset([("d1", D1), ("d2", D2)], scores, access)
        reports = detect_suspicious_users(snaps, UserDetectorConfig(tau_r=0.0001))
        # rho = 100 from user 1 alone; phi = 0 for them, nobody above
        assert reports == []

    def test_explicit_dump_selection(self):
        # users 1/2 are active only in c's window, users 3/4 only in b's
        scores = {
            (1, "a"): 100, (1, "b"): 150, (1, "c"): 150,
            (2, "a"): 100, (2, "b"): 100, (2, "c"): 700,
            (3, "a"): 100, (3, "b"): 300, (3, "c"): 300,
            (4, "a"): 100, (4, "b"): 5000,
        }
        access = {
            1: _at(date(2020, 6, 20)),
            2: _at(date(2020, 6, 25)),
            3: _at(date(2020, 3, 15)),
            4: _at(date(2020, 2, 10)),
        }
        snaps = snapset(
            [("a", date(2020, 1, 1)), ("b", date(2020, 4, 1)), ("c", date(2020, 7, 1))],
            scores, access,
        )
        # default pair: c vs b; rho = (0 + 600) / 2 over users 1,2
        default = detect_suspicious_users(snaps, UserDetectorConfig(tau_r=0.9))
        assert [r.subject for r in default] == [2]
        assert default[0].config["dump_m"] == "c"
        assert default[0].config["dump_n"] == "b"
        # explicit pair: b vs a; rho = (200 + 4900) / 2 over users 3,4
        explicit = detect_suspicious_users(
            snaps, UserDetectorConfig(tau_r=0.9, dump_m="b", dump_n="a"),
        )
        assert [r.subject for r in explicit] == [4]
        assert explicit[0].config["dump_m"] == "b"
        assert explicit[0].config["dump_n"] == "a"

    def test_reversed_pair_rejected(self):
        snaps = _jump_fixture()
        with pytest.raises(ConfigError):
            detect_suspicious_users(
                snaps, UserDetectorConfig(dump_m="d1", dump_n="d2"),
            )

    def test_single_dump_rejected(self):
        snaps = snapset([("d1", D1)], {(1, "d1"): 100}, {})
        with pytest.raises(DomainError):
            detect_suspicious_users(snaps, UserDetectorConfig())

    def test_no_active_users(self):
        scores = {(1, "d1"): 100, (1, "d2"): 200}
        snaps = snapset([("d1", D1), ("d2", D2)], scores, {})
        with pytest.raises(DomainError):
            detect_suspicious_users(snaps, UserDetectorConfig())

    def test_non_positive_rho(self):
        scores = {(1, "d1"): 200, (1, "d2"): 100}
        access = {1: _at(date(2020, 3, 20))}
        snaps = snapset([("d1", D1), ("d2", D2)], scores, access)
        with pytest.raises(DomainError):
            detect_suspicious_users(snaps, UserDetectorConfig())

    def test_matches_naive_oracle_random(self):
        rng = random.Random(31337)
        for _ in range(100):
            n = rng.randint(2, 50)
            scores = {}
            access = {}
            for user in range(1, n + 1):
                base = rng.randint(1, 500)
                scores[(user, "d1")] = base
                scores[(user, "d2")] = max(1, base + rng.randint(0, 400))
                access[user] = _at(D2 - timedelta(days=rng.randint(0, 200)))
            snaps = snapset([("d1", D1), ("d2", D2)], scores, access)
            tau_r = rng.choice([0.5, 2.0, 5.0, 28.0])
            config = UserDetectorConfig(tau_r=tau_r)
            # independent recomputation
            window_start = shift_months(D2, -3)
            active = [
                u for u in range(1, n + 1)
                if window_start <= access[u].date() <= D2
            ]
            deltas = {u: scores[(u, "d2")] - scores[(u, "d1")] for u in range(1, n + 1)}
            if not active:
                with pytest.raises(DomainError):
                    detect_suspicious_users(snaps, config)
                continue
            rho = sum(deltas[u] for u in active) / len(active)
            if rho <= 0:
                with pytest.raises(DomainError):
                    detect_suspicious_users(snaps, config)
                continue
            expected = {u for u in active if (deltas[u] - rho) / rho > tau_r}
            got = {r.subject for r in detect_suspicious_users(snaps, config)}
            assert got == expected


class TestBaselines:
    def _snaps(self):
        scores = {
            (1, "d1"): 100, (1, "d2"): 110,   # +10
            (2, "d1"): 100, (2, "d2"): 150,   # +50
            (3, "d1"): 100, (3, "d2"): 400,   # +300
            (4, "d1"): 100, (4, "d2"): 80,    # -20
            (5, "d1"): 100, (5, "d2"): 10,    # -90
            (6, "d1"): 100, (6, "d2"): 100,   # 0
        }
        access = {u: _at(date(2020, 3, 20)) for u in range(1, 7)}
        return snapset([("d1", D1), ("d2", D2)], scores, access)

    def test_baseline_up(self):
        # positive deltas 10, 50, 300 -> mean 120; only 300 beats it
        reports = baseline_up(self._snaps())
        assert [r.subject for r in reports] == [3]
        assert reports[0].evidence["mean_positive_delta"] == pytest.approx(120.0)
        assert reports[0].detector == B_U

    def test_baseline_down(self):
        # drops 20, 90 -> mean 55; only -90 beats it
        reports = baseline_down(self._snaps())
        assert [r.subject for r in reports] == [5]
        assert reports[0].evidence["mean_drop_magnitude"] == pytest.approx(55.0)
        assert reports[0].detector == B_D

    def test_empty_pools(self, caplog):
        scores = {(1, "d1"): 100, (1, "d2"): 100}
        access = {1: _at(date(2020, 3, 20))}
        snaps = snapset([("d1", D1), ("d2", D2)], scores, access)
        with caplog.at_level("INFO", logger="ringwatch.detectors"):
            assert baseline_up(snaps) == []
            assert baseline_down(snaps) == []
        assert sum("nothing to flag" in r.message for r in caplog.records) == 2


class TestPresets:
    def test_table_values(self):
        assert community_preset("C1") == (GC_V2, CommunityDetectorConfig(tau_l=2, preset="C1"))
        assert community_preset("C9")[1].tau_l == 8
        assert community_preset("C9")[1].tau_t == timedelta(hours=24)
        assert community_preset("C8")[1].tau_t == timedelta(minutes=15)
        c13 = community_preset("C13")[1]
        assert (c13.tau_qb, c13.similarity_mode, c13.require_answer_similarity) == \
            (0.89, BODY, False)
        c16 = community_preset("C16")[1]
        assert (c16.tau_qc, c16.similarity_mode) == (0.90, CODE)
        c18 = community_preset("C18")[1]
        assert (c18.tau_qb, c18.tau_ab, c18.require_answer_similarity) == (0.95, 0.95, True)
        c19 = community_preset("C19")[1]
        assert (c19.tau_qc, c19.tau_ac, c19.similarity_mode) == (0.80, 0.80, CODE)
        assert len(COMMUNITY_PRESETS) == 20
        assert JUMP_PRESETS == {"C1": 28.0, "C2": 65.0, "C3": 130.0}

    def test_unknown_presets(self):
        with pytest.raises(ConfigError):
            community_preset("C21")
        with pytest.raises(ConfigError):
            jump_preset("C4")

    def test_preset_equals_explicit_reports(self, cluster_setup):
        _records, graph, partition = cluster_setup
        name, preset_config = community_preset("C3")
        explicit = CommunityDetectorConfig(tau_l=8)
        a = detect_community(graph, partition, name, preset_config)
        b = detect_community(graph, partition, GC_V2, explicit)
        assert a == b
        buf_a, buf_b = io.StringIO(), io.StringIO()
        write_reports_jsonl(a, buf_a)
        write_reports_jsonl(b, buf_b)
        assert buf_a.getvalue() == buf_b.getvalue()


class TestReportIO:
    def test_roundtrip(self):
        reports = [
            SuspicionReport(
                kind="community", subject=(1, 2), detector=GC_V1,
                evidence={"edge_count": 9, "max_latency_seconds": 10.0},
                config={"detector": GC_V1, "tau_l": 8, "tau_t_hours": 24.0},
            ),
            SuspicionReport(
                kind="user", subject=7, detector=JUMP,
                evidence={"delta": 900, "rho": 15.0, "phi": 59.0},
                config={"detector": JUMP, "tau_r": 28.0, "tau_m_months": 3},
            ),
        ]
        buf = io.StringIO()
        assert write_reports_jsonl(reports, buf) == 2
        assert read_reports_jsonl(io.StringIO(buf.getvalue())) == reports

    def test_malformed_line(self):
        with pytest.raises(DomainError):
            read_reports_jsonl(io.StringIO("{}\n"))


class TestThreading:
    def test_default_budget(self, monkeypatch):
        monkeypatch.delenv("RINGWATCH_THREADS", raising=False)
        assert thread_budget() == 1

    def test_env_budget(self, monkeypatch):
        monkeypatch.setenv("RINGWATCH_THREADS", "4")
        assert thread_budget() == 4
        monkeypatch.setenv("RINGWATCH_THREADS", "0")
        assert thread_budget() == 1
        monkeypatch.setenv("RINGWATCH_THREADS", "lots")
        assert thread_budget() == 1

    def test_parallel_results_identical(self, cluster_setup, monkeypatch):
        _records, graph, partition = cluster_setup
        config = CommunityDetectorConfig(tau_l=8, tau_t=timedelta(hours=24))
        serial = detect_gc_v1(graph, partition, config)
        monkeypatch.setenv("RINGWATCH_THREADS", "4")
        parallel = detect_gc_v1(graph, partition, config)
        assert serial == parallel
