"""Interaction graph structure, weights, isolation, serialization."""

import io
from datetime import timedelta

import pytest

from helpers import T0, answer, question, records_for
from ringwatch.corpus import build_interaction_table
from ringwatch.errors import DomainError, ValidationError
from ringwatch.graph import (
    Edge,
    InteractionGraph,
    build_graph,
    graph_from_edges,
    is_isolated,
    read_edges_jsonl,
    write_edges_jsonl,
)


def edge(asker, answerer, key, accepted=False, seconds=3600.0):
    return Edge(asker, answerer, key, accepted, seconds)


class TestAddEdge:
    def test_basic(self):
        g = graph_from_edges([edge(1, 2, "10/11"), edge(2, 1, "12/13"), edge(1, 2, "14/15")])
        assert g.nodes == {1, 2}
        assert g.total_edges == 3
        assert g.pair_weight(1, 2) == 3
        assert g.pair_weight(2, 1) == 3
        assert g.degree(1) == 3

    def test_self_loop_rejected(self):
        g = InteractionGraph()
        with pytest.raises(ValidationError):
            g.add_edge(edge(1, 1, "1/2"))

    def test_negative_latency_rejected(self):
        g = InteractionGraph()
        with pytest.raises(ValidationError):
            g.add_edge(edge(1, 2, "1/2", seconds=-5.0))

    def test_duplicate_key_rejected(self):
        g = graph_from_edges([edge(1, 2, "1/2")])
        with pytest.raises(ValidationError):
            g.add_edge(edge(2, 3, "1/2"))

    def test_pair_weight_domain(self):
        g = graph_from_edges([edge(1, 2, "1/2")])
        with pytest.raises(DomainError):
            g.pair_weight(1, 1)
        with pytest.raises(DomainError):
            g.pair_weight(1, 99)

    def test_neighbors_unknown_node(self):
        g = InteractionGraph()
        with pytest.raises(DomainError):
            g.neighbors(7)


class TestBuildGraph:
    def test_from_table(self):
        posts = [
            question(1, 10, T0, accepted=2),
            answer(2, 11, 1, T0 + timedelta(hours=4)),
            question(3, 11, T0),
            answer(4, 10, 3, T0 + timedelta(hours=2)),
        ]
        g = build_graph(build_interaction_table(posts).records)
        assert g.nodes == {10, 11}
        assert g.total_edges == 2
        keys = {e.e_key for e in g.edges()}
        assert keys == {"1/2", "3/4"}
        by_key = {e.e_key: e for e in g.edges()}
        assert by_key["1/2"].e_accepted is True
        assert by_key["1/2"].e_time_seconds == 4 * 3600
        assert by_key["1/2"].asker == 10 and by_key["1/2"].answerer == 11

    def test_parallel_edges_counted(self):
        records = records_for([
            question(1, 10, T0), answer(2, 11, 1, T0 + timedelta(hours=1)),
            question(3, 10, T0), answer(4, 11, 3, T0 + timedelta(hours=1)),
            question(5, 11, T0), answer(6, 10, 5, T0 + timedelta(hours=1)),
        ])
        g = build_graph(records)
        assert g.pair_weight(10, 11) == 3


class TestIsolation:
    def _graph(self):
        # 1-2-3 triangle plus a pendant 3-4 edge.
        return graph_from_edges([
            edge(1, 2, "a"), edge(2, 3, "b"), edge(3, 1, "c"), edge(3, 4, "d"),
        ])

    def test_isolated_component(self):
        g = self._graph()
        assert is_isolated(g, [1, 2, 3, 4]) is True

    def test_leaky_subset(self):
        g = self._graph()
        assert is_isolated(g, [1, 2, 3]) is False
        assert is_isolated(g, [4]) is False

    def test_singleton_with_no_edges(self):
        g = self._graph()
        g.add_node(99)
        assert is_isolated(g, [99]) is True

    def test_empty_set_is_domain_error(self):
        with pytest.raises(DomainError):
            is_isolated(self._graph(), [])

    def test_unknown_member_is_domain_error(self):
        with pytest.raises(DomainError):
            is_isolated(self._graph(), [1, 77])


class TestEdgesWithin:
    def test_subset_edges(self):
        g = graph_from_edges([
            edge(1, 2, "a"), edge(2, 1, "b"), edge(2, 3, "c"), edge(4, 5, "d"),
        ])
        keys = {e.e_key for e in g.edges_within([1, 2])}
        assert keys == {"a", "b"}
        assert g.edges_within([1]) == []
        assert {e.e_key for e in g.edges_within([1, 2, 3])} == {"a", "b", "c"}

    def test_members_absent_from_graph_are_skipped(self):
        g = graph_from_edges([edge(1, 2, "a")])
        assert g.edges_within([1, 2, 999]) == [edge(1, 2, "a")]


class TestSerialization:
    def test_roundtrip(self):
        g = graph_from_edges([
            edge(5, 2, "a", accepted=True, seconds=120.5),
            edge(2, 5, "b"),
            edge(1, 9, "c"),
        ])
        buf = io.StringIO()
        assert write_edges_jsonl(g, buf) == 3
        g2 = read_edges_jsonl(io.StringIO(buf.getvalue()))
        assert g2.nodes == g.nodes
        assert g2.total_edges == g.total_edges
        assert sorted(g2.edges()) == sorted(g.edges())

    def test_write_deterministic(self):
        g = graph_from_edges([edge(3, 1, "x"), edge(2, 1, "y")])
        a_buf, b_buf = io.StringIO(), io.StringIO()
        write_edges_jsonl(g, a_buf)
        write_edges_jsonl(g, b_buf)
        assert a_buf.getvalue() == b_buf.getvalue()
        # pair-sorted: (1,2) before (1,3)
        first = a_buf.getvalue().splitlines()[0]
        assert '"y"' in first

    def test_read_rejects_garbage(self):
        with pytest.raises(ValidationError):
            read_edges_jsonl(io.StringIO('{"asker": 1}\n'))
