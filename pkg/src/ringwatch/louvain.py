"""Louvain community detection over the interaction graph.

Modularity uses the undirected pair weights (number of edges between a
pair, direction ignored) with m equal to the total edge count.  The
optimizer is deterministic: nodes are visited in ascending id order,
ties prefer staying put and then the lowest community id, and the final
assignment is locally optimal at the individual-node level.
"""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import IO, Mapping

from .errors import ConfigError, DomainError, ParseError
from .graph import InteractionGraph

log = logging.getLogger(__name__)

# Sentinel target for evaluating a move into a brand-new empty community.
FRESH = -1

# Hard cap on sweeps inside one local-moving phase; each accepted move
# raises Q by more than epsilon so this is unreachable in practice.
_SWEEP_CAP = 10_000
# Sweep cap inside the aggregation cascade; see louvain() for rationale.
_LEVEL_SWEEP_CAP = 12


@dataclass(frozen=True)
class LouvainConfig:
    epsilon: float = 1e-12
    max_passes: int = 32

    def __post_init__(self) -> None:
        if not self.epsilon > 0:
            raise ConfigError("epsilon must be > 0")
        if self.max_passes < 1:
            raise ConfigError("max_passes must be >= 1")


@dataclass(frozen=True)
class Partition:
    """A community assignment together with its modularity score.

    ``communities`` maps community id to the frozen member set;
    community ids are consecutive integers ordered by smallest member.
    """

    assignment: dict[int, int]
    communities: dict[int, frozenset[int]]
    modularity_q: float

    def __post_init__(self) -> None:
        seen: set[int] = set()
        for cid, members in self.communities.items():
            if not members:
                raise DomainError(f"community {cid} is empty")
            for node in members:
                if self.assignment.get(node) != cid:
                    raise DomainError(f"node {node} not assigned to its community {cid}")
                seen.add(node)
        if seen != set(self.assignment):
            raise DomainError("assignment and communities cover different node sets")
        if not -1.0 <= self.modularity_q <= 1.0:
            raise DomainError(f"modularity {self.modularity_q} outside [-1, 1]")

    @property
    def n_communities(self) -> int:
        return len(self.communities)

    def community_of(self, node: int) -> int:
        try:
            return self.assignment[node]
        except KeyError:
            raise DomainError(f"node {node} is not in the partition") from None

    def members(self, community_id: int) -> frozenset[int]:
        try:
            return self.communities[community_id]
        except KeyError:
            raise DomainError(f"unknown community {community_id}") from None


def _check_coverage(graph: InteractionGraph, assignment: Mapping[int, int]) -> None:
    if set(assignment) != graph.nodes:
        extra = sorted(set(assignment) - graph.nodes)[:5]
        missing = sorted(graph.nodes - set(assignment))[:5]
        raise DomainError(
            f"assignment must cover exactly the graph's nodes (extra={extra}, missing={missing})"
        )


def modularity(graph: InteractionGraph, assignment: Mapping[int, int]) -> float:
    """Newman-Girvan modularity Q of an assignment.

    Q = sum over communities of [Sigma_in/(2m) - (Sigma_tot/(2m))^2]
    where Sigma_in counts both orientations of each internal pair.
    A graph without edges has Q defined as 0.
    """
    _check_coverage(graph, assignment)
    m = graph.total_edges
    if m == 0:
        return 0.0
    two_m = 2.0 * m
    sigma_in: dict[int, float] = {}
    sigma_tot: dict[int, float] = {}
    for node in graph.nodes:
        community = assignment[node]
        degree = graph.degree(node)
        sigma_tot[community] = sigma_tot.get(community, 0.0) + degree
        internal = 0
        for neighbor, weight in graph.neighbors(node).items():
            if assignment[neighbor] == community:
                internal += weight
        sigma_in[community] = sigma_in.get(community, 0.0) + internal
    return sum(
        sigma_in[c] / two_m - (sigma_tot[c] / two_m) ** 2
        for c in sigma_tot
    )


class LouvainState:
    """Bookkeeping for evaluating single-node moves on a graph.

    Standard local-move protocol: ``detach`` a node from its community,
    evaluate candidate targets with :func:`delta_modularity`, then
    ``insert`` it where it belongs (possibly back home).
    """

    def __init__(self, graph: InteractionGraph, assignment: Mapping[int, int]):
        _check_coverage(graph, assignment)
        self.graph = graph
        self.assignment: dict[int, int] = dict(assignment)
        self.m = graph.total_edges
        self.sigma_tot: dict[int, float] = {}
        self.sizes: dict[int, int] = {}
        for node, community in self.assignment.items():
            self.sigma_tot[community] = self.sigma_tot.get(community, 0.0) + graph.degree(node)
            self.sizes[community] = self.sizes.get(community, 0) + 1
        self.detached: dict[int, int] = {}

    def communities(self) -> set[int]:
        return set(self.sizes)

    def detach(self, node: int) -> int:
        """Remove a node from its community for move evaluation."""
        if node in self.detached:
            raise DomainError(f"node {node} is already detached")
        try:
            home = self.assignment.pop(node)
        except KeyError:
            raise DomainError(f"unknown node {node}") from None
        self.sigma_tot[home] -= self.graph.degree(node)
        self.sizes[home] -= 1
        self.detached[node] = home
        return home

    def insert(self, node: int, community: int) -> None:
        """Place a detached node into a community (an existing one or a fresh id)."""
        if node not in self.detached:
            raise DomainError(f"node {node} is not detached")
        home = self.detached.pop(node)
        if community == FRESH:
            community = max(self.sizes, default=-1) + 1
        self.assignment[node] = community
        self.sigma_tot[community] = self.sigma_tot.get(community, 0.0) + self.graph.degree(node)
        self.sizes[community] = self.sizes.get(community, 0) + 1
        if self.sizes.get(home, 0) == 0:
            self.sizes.pop(home, None)
            self.sigma_tot.pop(home, None)


def delta_modularity(
    graph: InteractionGraph, state: LouvainState, node: int, target: int
) -> float:
    """Exact modularity change of moving a detached node into ``target``.

    The node must currently be detached via ``state.detach``; the value
    returned is Q(node placed in target) minus Q(node back in its home
    community), so re-targeting the home community yields 0.  ``target``
    may be a live community id or FRESH for a new singleton.
    """
    if node not in state.detached:
        raise DomainError(f"node {node} must be detached before evaluating moves")
    home = state.detached[node]
    if target != FRESH and target != home and target not in state.sizes:
        raise DomainError(f"unknown target community {target}")
    m = state.m
    if m == 0:
        return 0.0
    k_i = graph.degree(node)
    k_home = 0.0
    k_target = 0.0
    for neighbor, weight in graph.neighbors(node).items():
        community = state.assignment.get(neighbor)
        if community == home:
            k_home += weight
        if community == target:
            k_target += weight
    inv = k_i / (2.0 * m * m)
    sigma_target = 0.0 if target == FRESH else state.sigma_tot.get(target, 0.0)
    gain_target = k_target / m - sigma_target * inv
    gain_home = k_home / m - state.sigma_tot.get(home, 0.0) * inv
    return gain_target - gain_home


@dataclass(slots=True)
class _WorkGraph:
    """Flat index-based weighted graph used internally by the optimizer."""

    n: int
    adj: list[dict[int, float]]
    loops: list[float]
    degree: list[float]
    two_m: float


def _work_graph(graph: InteractionGraph, order: list[int]) -> _WorkGraph:
    index = {node: i for i, node in enumerate(order)}
    adj: list[dict[int, float]] = [dict() for _ in order]
    for node in order:
        i = index[node]
        row = adj[i]
        for neighbor, weight in graph.adjacency[node].items():
            row[index[neighbor]] = float(weight)
    loops = [0.0] * len(order)
    degree = [sum(row.values()) for row in adj]
    return _WorkGraph(len(order), adj, loops, degree, sum(degree))


def _aggregate(g: _WorkGraph, comm: list[int]) -> tuple[_WorkGraph, dict[int, int]]:
    """Collapse communities to super-nodes.

    Internal weight appears as a self-loop counting both orientations of
    every internal pair, so degrees and 2m are preserved exactly.
    """
    labels = sorted(set(comm))
    index = {label: k for k, label in enumerate(labels)}
    n2 = len(labels)
    adj2: list[dict[int, float]] = [dict() for _ in range(n2)]
    loops2 = [0.0] * n2
    for i in range(g.n):
        ci = index[comm[i]]
        loops2[ci] += g.loops[i]
        row = adj2[ci]
        for j, w in g.adj[i].items():
            cj = index[comm[j]]
            if cj == ci:
                loops2[ci] += w
            else:
                row[cj] = row.get(cj, 0.0) + w
    degree2 = [sum(adj2[k].values()) + loops2[k] for k in range(n2)]
    return _WorkGraph(n2, adj2, loops2, degree2, sum(degree2)), index


def _local_move(g: _WorkGraph, comm: list[int], epsilon: float,
                max_sweeps: int = _SWEEP_CAP) -> bool:
    """Sweep nodes in ascending index order until a full sweep moves nothing.

    Returns True if any node changed community.  Only neighboring
    communities are candidates; ties prefer staying, then the lowest
    community id.

    Between full sweeps, only nodes whose neighborhood changed since
    their last evaluation are re-examined; termination is still
    certified by a clean full sweep over every node, so the stable
    point is identical in kind to the naive schedule (no node can
    improve by moving).  A finite ``max_sweeps`` trades convergence at
    this level for another aggregation round picking up the slack.
    """
    m = g.two_m / 2.0
    if m == 0:
        return False
    inv_2m2 = 1.0 / (2.0 * m * m)
    sigma = [0.0] * (max(comm) + 1)
    for i in range(g.n):
        sigma[comm[i]] += g.degree[i]
    moved_any = False
    adj_all = g.adj
    degree_all = g.degree
    dirty = bytearray(b"\x01") * g.n
    verifying = False
    for _sweep in range(max_sweeps):
        moves = 0
        for i in range(g.n):
            if not verifying and not dirty[i]:
                continue
            dirty[i] = 0
            adj = adj_all[i]
            if not adj:
                continue
            ci = comm[i]
            k_i = degree_all[i]
            link: dict[int, float] = {}
            for j, w in adj.items():
                cj = comm[j]
                if cj in link:
                    link[cj] += w
                else:
                    link[cj] = w
            sigma[ci] -= k_i
            factor = k_i * inv_2m2
            gain_stay = link.get(ci, 0.0) / m - sigma[ci] * factor
            best_c = -1
            best_gain = 0.0
            for c, k_in in link.items():
                if c == ci:
                    continue
                gain = k_in / m - sigma[c] * factor
                if best_c < 0 or gain > best_gain or (gain == best_gain and c < best_c):
                    best_c = c
                    best_gain = gain
            if best_c >= 0 and best_gain - gain_stay > epsilon:
                comm[i] = best_c
                sigma[best_c] += k_i
                moves += 1
                moved_any = True
                for j in adj:
                    dirty[j] = 1
            else:
                sigma[ci] += k_i
        if moves == 0:
            if verifying:
                break
            verifying = True
        else:
            verifying = False
    return moved_any


# Pairwise exchanges are only examined between communities at most this
# large: single-node moving plus aggregation handles coarse structure,
# while the blocked configurations that need a swap to escape only occur
# in tiny tightly-coupled groups.  Keeps the pass O(edges) on big graphs.
_SWAP_COMMUNITY_CAP = 16

# Connected components up to this many nodes are partitioned exactly by
# subset DP instead of heuristically.  3^10 is ~59k DP steps, negligible,
# and small isolated clusters are precisely where optimal quality matters
# most for the downstream community checks.
_EXACT_CAP = 10


def _components(g: _WorkGraph) -> list[list[int]]:
    seen = [False] * g.n
    out: list[list[int]] = []
    for start in range(g.n):
        if seen[start]:
            continue
        seen[start] = True
        stack = [start]
        members = [start]
        while stack:
            v = stack.pop()
            for u in g.adj[v]:
                if not seen[u]:
                    seen[u] = True
                    members.append(u)
                    stack.append(u)
        out.append(sorted(members))
    return out


def _exact_blocks(g: _WorkGraph, nodes: list[int]) -> list[list[int]]:
    """Maximum-modularity partition of one small connected component.

    DP over node subsets: best(S) maximizes sum of per-community terms
    Sigma_in/2m - (Sigma_tot/2m)^2, with m the whole graph's edge count
    (community terms are separable across components, so solving each
    component alone preserves global optimality).
    """
    n = len(nodes)
    pos = {v: i for i, v in enumerate(nodes)}
    deg = [g.degree[v] for v in nodes]
    w = [[0.0] * n for _ in range(n)]
    for i, v in enumerate(nodes):
        for u, weight in g.adj[v].items():
            j = pos.get(u)
            if j is not None:
                w[i][j] = weight
    two_m = g.two_m
    full = (1 << n) - 1

    sigma_in = [0.0] * (full + 1)
    sigma_tot = [0.0] * (full + 1)
    for mask in range(1, full + 1):
        low = (mask & -mask).bit_length() - 1
        rest = mask ^ (1 << low)
        cross = 0.0
        r = rest
        while r:
            j = (r & -r).bit_length() - 1
            cross += w[low][j]
            r &= r - 1
        sigma_in[mask] = sigma_in[rest] + 2.0 * cross
        sigma_tot[mask] = sigma_tot[rest] + deg[low]
    quality = [
        sigma_in[mask] / two_m - (sigma_tot[mask] / two_m) ** 2
        for mask in range(full + 1)
    ]

    best = [0.0] * (full + 1)
    choice = [0] * (full + 1)
    for mask in range(1, full + 1):
        low_bit = mask & -mask
        rest = mask ^ low_bit
        best_val = None
        best_block = 0
        sub = rest
        while True:
            block = sub | low_bit
            val = quality[block] + best[mask ^ block]
            if best_val is None or val > best_val + 1e-15:
                best_val = val
                best_block = block
            if sub == 0:
                break
            sub = (sub - 1) & rest
        best[mask] = best_val
        choice[mask] = best_block

    blocks: list[list[int]] = []
    mask = full
    while mask:
        block = choice[mask]
        blocks.append([nodes[i] for i in range(n) if block >> i & 1])
        mask ^= block
    return blocks


def _swap_pass(g: _WorkGraph, comm: list[int], epsilon: float) -> bool:
    """One deterministic sweep of pairwise community exchanges.

    Single-node local moves cannot escape configurations where two nodes
    must trade communities simultaneously (each move alone lowers Q,
    together they raise it).  For every pair of edge-adjacent small
    communities this evaluates the exact combined change of exchanging
    each cross pair of members and applies exchanges gaining more than
    epsilon.  Capped to small communities, so the pass costs O(edges)
    plus a constant per adjacent small-community pair.
    """
    m = g.two_m / 2.0
    if m == 0:
        return False
    inv_2m2 = 1.0 / (2.0 * m * m)
    sigma: dict[int, float] = {}
    sizes: dict[int, int] = {}
    for i in range(g.n):
        c = comm[i]
        sigma[c] = sigma.get(c, 0.0) + g.degree[i]
        sizes[c] = sizes.get(c, 0) + 1

    members: dict[int, list[int]] = {}
    for i in range(g.n):
        c = comm[i]
        if sizes[c] <= _SWAP_COMMUNITY_CAP:
            members.setdefault(c, []).append(i)
    community_pairs: set[tuple[int, int]] = set()
    for u in range(g.n):
        cu = comm[u]
        if cu not in members:
            continue
        for v in g.adj[u]:
            cv = comm[v]
            if cv != cu and cv in members:
                community_pairs.add((cu, cv) if cu < cv else (cv, cu))

    def link_of(i: int) -> dict[int, float]:
        link: dict[int, float] = {}
        for j, w in g.adj[i].items():
            cj = comm[j]
            link[cj] = link.get(cj, 0.0) + w
        return link

    moved = False
    for a, b in sorted(community_pairs):
        for u in list(members[a]):
            if comm[u] != a:
                continue
            for v in list(members[b]):
                if comm[v] != b or comm[u] != a:
                    continue
                k_u, k_v = g.degree[u], g.degree[v]
                # exact gain of u: a -> b with u detached
                link_u = link_of(u)
                delta1 = (link_u.get(b, 0.0) / m - sigma[b] * k_u * inv_2m2) \
                    - (link_u.get(a, 0.0) / m - (sigma[a] - k_u) * k_u * inv_2m2)
                comm[u] = b
                sigma[a] -= k_u
                sigma[b] += k_u
                # exact gain of v: b -> a in the intermediate state
                link_v = link_of(v)
                delta2 = (link_v.get(a, 0.0) / m - sigma[a] * k_v * inv_2m2) \
                    - (link_v.get(b, 0.0) / m - (sigma[b] - k_v) * k_v * inv_2m2)
                if delta1 + delta2 > epsilon:
                    comm[v] = a
                    sigma[b] -= k_v
                    sigma[a] += k_v
                    members[a].remove(u)
                    members[b].remove(v)
                    members[a].append(v)
                    members[b].append(u)
                    moved = True
                else:
                    comm[u] = a
                    sigma[b] -= k_u
                    sigma[a] += k_u
    return moved


def louvain(graph: InteractionGraph, config: LouvainConfig | None = None) -> Partition:
    """Partition an interaction graph by modularity.

    Small connected components (at most 10 nodes) are solved exactly;
    larger ones go through Louvain local moving alternated with
    aggregation rounds and a pairwise-exchange sweep, until nothing
    changes.  The result is locally optimal for single-node moves and
    deterministic for a fixed graph and config.
    """
    if config is None:
        config = LouvainConfig()
    order = sorted(graph.nodes)
    if graph.total_edges == 0:
        if order:
            log.warning("graph has no edges; returning singleton partition with Q = 0")
        assignment = {node: i for i, node in enumerate(order)}
        communities = {i: frozenset([node]) for i, node in enumerate(order)}
        return Partition(assignment=assignment, communities=communities, modularity_q=0.0)

    g0 = _work_graph(graph, order)
    comm = [0] * g0.n
    label = 0
    any_big = False
    for members in _components(g0):
        if len(members) <= _EXACT_CAP:
            for block in _exact_blocks(g0, members):
                for v in block:
                    comm[v] = label
                label += 1
        else:
            any_big = True
            for v in members:
                comm[v] = label
                label += 1

    # The heuristics only ever accept strict improvements, so the exact
    # component solutions above cannot be degraded by running them over
    # the whole graph; with no big component they have nothing to do.
    for _cycle in range(config.max_passes if any_big else 0):
        moved_node = _local_move(g0, comm, config.epsilon)
        # Aggregation cascades: each level collapses the previous level's
        # graph, with node_to_super carrying the composed assignment so
        # the full graph is projected only once at the end.  Sweeps per
        # level are capped: checkpointing partial convergence into the
        # next (smaller) level is much cheaper than converging in place.
        agg_moved = False
        g_cur, index = _aggregate(g0, comm)
        node_to_super = [index[c] for c in comm]
        for _level in range(config.max_passes):
            meta = list(range(g_cur.n))
            if not _local_move(g_cur, meta, config.epsilon, _LEVEL_SWEEP_CAP):
                break
            agg_moved = True
            node_to_super = [meta[s] for s in node_to_super]
            g_cur, index2 = _aggregate(g_cur, meta)
            node_to_super = [index2[c] for c in node_to_super]
        if agg_moved:
            comm[:] = node_to_super
        # Exchange-blocked fine structure is repaired here; a hit keeps
        # the outer loop running, so the next cycle's moves and a fresh
        # aggregation rebuild the coarse structure around the fix.
        swap_moved = _swap_pass(g0, comm, config.epsilon)
        if not moved_node and not swap_moved and not agg_moved:
            break

    # Relabel communities as consecutive ids ordered by smallest member.
    groups: dict[int, list[int]] = {}
    for i, node in enumerate(order):
        groups.setdefault(comm[i], []).append(node)
    ordered = sorted(groups.values(), key=lambda members: members[0])
    assignment = {}
    communities = {}
    for cid, members in enumerate(ordered):
        communities[cid] = frozenset(members)
        for node in members:
            assignment[node] = cid
    q = modularity(graph, assignment)
    return Partition(assignment=assignment, communities=communities, modularity_q=q)


def write_partition_csv(partition: Partition, target: str | Path | IO[str]) -> int:
    """Write node/community rows with the modularity recorded up front."""

    def _dump(stream: IO[str]) -> int:
        stream.write(f"# modularity_q={partition.modularity_q!r}\n")
        writer = csv.writer(stream, lineterminator="\n")
        writer.writerow(["node_id", "community_id"])
        count = 0
        for node in sorted(partition.assignment):
            writer.writerow([node, partition.assignment[node]])
            count += 1
        return count

    if hasattr(target, "write"):
        return _dump(target)  # type: ignore[arg-type]
    with Path(target).open("w", encoding="utf-8", newline="") as stream:
        return _dump(stream)


def read_partition_csv(source: str | Path | IO[str]) -> Partition:
    def _load(stream: IO[str]) -> Partition:
        first = stream.readline().strip()
        prefix = "# modularity_q="
        if not first.startswith(prefix):
            raise ParseError("partition CSV must start with the modularity header line")
        try:
            q = float(first[len(prefix):])
        except ValueError as exc:
            raise ParseError(f"bad modularity value in header: {exc}") from exc
        reader = csv.reader(stream)
        try:
            header = next(reader)
        except StopIteration:
            raise ParseError("partition CSV has no column header") from None
        if [h.strip() for h in header] != ["node_id", "community_id"]:
            raise ParseError(f"bad partition header {header!r}")
        assignment: dict[int, int] = {}
        for lineno, row in enumerate(reader, start=3):
            if not row or all(not cell.strip() for cell in row):
                continue
            try:
                node, community = int(row[0]), int(row[1])
            except (IndexError, ValueError) as exc:
                raise ParseError(f"line {lineno}: {exc}") from exc
            if node in assignment:
                raise ParseError(f"line {lineno}: node {node} assigned twice")
            assignment[node] = community
        groups: dict[int, set[int]] = {}
        for node, community in assignment.items():
            groups.setdefault(community, set()).add(node)
        communities = {cid: frozenset(members) for cid, members in groups.items()}
        return Partition(assignment=assignment, communities=communities, modularity_q=q)

    if hasattr(source, "read"):
        return _load(source)  # type: ignore[arg-type]
    with Path(source).open("r", encoding="utf-8", newline="") as stream:
        return _load(stream)
