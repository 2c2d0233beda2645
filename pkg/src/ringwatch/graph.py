"""The interaction graph: a directed multigraph of answer events whose
undirected pair weights drive community detection.

Nodes are user ids.  Each kept answer event becomes one edge from the
asker to the answerer, keyed by "questionId/answerId" and carrying the
acceptance flag and the question-to-answer latency in seconds.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import IO, Iterable, Iterator, NamedTuple

from .corpus import InteractionRecord
from .errors import DomainError, ValidationError


class Edge(NamedTuple):
    asker: int
    answerer: int
    e_key: str
    e_accepted: bool
    e_time_seconds: float


def _pair(i: int, j: int) -> tuple[int, int]:
    return (i, j) if i < j else (j, i)


@dataclass(slots=True)
class InteractionGraph:
    """Directed multigraph over user ids with undirected pair weights.

    ``pair_edges`` groups parallel edges by unordered endpoint pair;
    the weight of a pair is simply how many edges connect it, in either
    direction.  ``total_edges`` is the multigraph edge count m.
    """

    nodes: set[int] = field(default_factory=set)
    pair_edges: dict[tuple[int, int], list[Edge]] = field(default_factory=dict)
    adjacency: dict[int, dict[int, int]] = field(default_factory=dict)
    total_edges: int = 0
    _keys: set[str] = field(default_factory=set)

    def add_node(self, node: int) -> None:
        if node not in self.nodes:
            self.nodes.add(node)
            self.adjacency[node] = {}

    def add_edge(self, edge: Edge) -> None:
        if edge.asker == edge.answerer:
            raise ValidationError(f"edge {edge.e_key}: self-loops are not allowed")
        if edge.e_time_seconds < 0:
            raise ValidationError(f"edge {edge.e_key}: negative latency")
        if edge.e_key in self._keys:
            raise ValidationError(f"duplicate edge key {edge.e_key!r}")
        self._keys.add(edge.e_key)
        self.add_node(edge.asker)
        self.add_node(edge.answerer)
        pair = _pair(edge.asker, edge.answerer)
        self.pair_edges.setdefault(pair, []).append(edge)
        i, j = pair
        self.adjacency[i][j] = self.adjacency[i].get(j, 0) + 1
        self.adjacency[j][i] = self.adjacency[j].get(i, 0) + 1
        self.total_edges += 1

    def pair_weight(self, i: int, j: int) -> int:
        """Number of edges between i and j, direction ignored."""
        if i == j:
            raise DomainError("pair weight is undefined for a node with itself")
        if i not in self.nodes or j not in self.nodes:
            raise DomainError("pair weight asked for nodes outside the graph")
        return self.adjacency[i].get(j, 0)

    def neighbors(self, node: int) -> dict[int, int]:
        if node not in self.nodes:
            raise DomainError(f"node {node} is not in the graph")
        return self.adjacency[node]

    def degree(self, node: int) -> int:
        """Weighted degree: total edges incident to the node."""
        return sum(self.neighbors(node).values())

    def edges(self) -> Iterator[Edge]:
        for pair in self.pair_edges.values():
            yield from pair

    def edges_within(self, members: Iterable[int]) -> list[Edge]:
        """All edges whose both endpoints lie in ``members``."""
        member_set = set(members)
        out: list[Edge] = []
        for u in member_set:
            if u not in self.nodes:
                continue
            for v, _w in self.adjacency[u].items():
                if v in member_set and u < v:
                    out.extend(self.pair_edges[(u, v)])
        return out

    def __contains__(self, node: int) -> bool:
        return node in self.nodes


def build_graph(records: Iterable[InteractionRecord]) -> InteractionGraph:
    """Build the interaction graph from interaction table records.

    Edge key is "questionId/answerId"; a duplicate key means the table
    was built twice over the same data or is corrupt, and is an error.
    """
    graph = InteractionGraph()
    for record in records:
        graph.add_edge(Edge(
            asker=record.asker_id,
            answerer=record.answerer_id,
            e_key=f"{record.question_id}/{record.answer_id}",
            e_accepted=record.is_accepted,
            e_time_seconds=record.latency_seconds,
        ))
    return graph


def graph_from_edges(edges: Iterable[Edge]) -> InteractionGraph:
    graph = InteractionGraph()
    for edge in edges:
        graph.add_edge(edge)
    return graph


def is_isolated(graph: InteractionGraph, members: Iterable[int]) -> bool:
    """True iff no edge leaves the member set.

    Members must be a non-empty subset of the graph's nodes.
    """
    member_set = set(members)
    if not member_set:
        raise DomainError("isolation is undefined for an empty member set")
    missing = member_set - graph.nodes
    if missing:
        raise DomainError(f"members not in graph: {sorted(missing)[:5]}")
    for u in member_set:
        for v in graph.adjacency[u]:
            if v not in member_set:
                return False
    return True


def write_edges_jsonl(graph: InteractionGraph, target: str | Path | IO[str]) -> int:
    """Serialize edges as JSON lines; deterministic given equal graphs."""

    def _dump(stream: IO[str]) -> int:
        count = 0
        for pair in sorted(graph.pair_edges):
            for edge in graph.pair_edges[pair]:
                record = {
                    "asker": edge.asker,
                    "answerer": edge.answerer,
                    "e_key": edge.e_key,
                    "e_accepted": edge.e_accepted,
                    "e_time_seconds": edge.e_time_seconds,
                }
                stream.write(json.dumps(record, ensure_ascii=False) + "\n")
                count += 1
        return count

    if hasattr(target, "write"):
        return _dump(target)  # type: ignore[arg-type]
    with Path(target).open("w", encoding="utf-8") as stream:
        return _dump(stream)


def read_edges_jsonl(source: str | Path | IO[str]) -> InteractionGraph:
    """Rebuild an interaction graph from its JSONL edge serialization."""

    def _load(stream: IO[str]) -> InteractionGraph:
        graph = InteractionGraph()
        for lineno, raw in enumerate(stream, start=1):
            line = raw.strip()
            if not line:
                continue
            try:
                record = json.loads(line)
                edge = Edge(
                    asker=int(record["asker"]),
                    answerer=int(record["answerer"]),
                    e_key=str(record["e_key"]),
                    e_accepted=bool(record["e_accepted"]),
                    e_time_seconds=float(record["e_time_seconds"]),
                )
            except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
                raise ValidationError(f"edges line {lineno}: {exc}") from exc
            graph.add_edge(edge)
        return graph

    if hasattr(source, "read"):
        return _load(source)  # type: ignore[arg-type]
    with Path(source).open("r", encoding="utf-8") as stream:
        return _load(stream)
