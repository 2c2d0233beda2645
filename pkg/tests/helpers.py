"""Hand-built corpora shared across test modules.

Everything here is constructed directly from Post objects so the tests
do not depend on the synthetic generators they are meant to check.
"""

from __future__ import annotations

from datetime import datetime, timedelta, timezone

from ringwatch.corpus import Post, build_interaction_table

T0 = datetime(2020, 1, 1, tzinfo=timezone.utc)


def question(qid: int, owner: int, at: datetime, body: str = "", accepted: int | None = None) -> Post:
    return Post(id=qid, kind="question", owner_id=owner, created_at=at,
                body=body, accepted_answer_id=accepted)


def answer(aid: int, owner: int, parent: int, at: datetime, body: str = "") -> Post:
    return Post(id=aid, kind="answer", owner_id=owner, created_at=at,
                body=body, parent_id=parent)


def backbone_pairs(members: list[int]) -> list[tuple[int, int]]:
    """Both directions of a spanning path; every pair is trivially mutual."""
    pairs = []
    for a, b in zip(members, members[1:]):
        pairs.append((a, b))
        pairs.append((b, a))
    return pairs


def hand_community(
    members: list[int],
    n_edges: int,
    *,
    all_accepted: bool,
    latency: timedelta,
    slow_edge_latency: timedelta | None = None,
    id_start: int = 1000,
    t0: datetime = T0,
) -> list[Post]:
    """Posts realizing an isolated community with exactly ``n_edges``
    surviving answer events among ``members``.

    One question per answer, so ``all_accepted`` is realizable.  When
    ``all_accepted`` is false exactly one event is left unaccepted.  If
    ``slow_edge_latency`` is given, one event gets that latency instead
    of ``latency``.
    """
    base = backbone_pairs(members)
    if n_edges < len(base):
        raise ValueError("n_edges below the mutual backbone size")
    demands = list(base)
    i = 0
    while len(demands) < n_edges:
        demands.append(base[i % len(base)])
        i += 1

    posts: list[Post] = []
    next_id = id_start
    cursor = t0
    for index, (asker, answerer) in enumerate(demands):
        lat = latency
        if slow_edge_latency is not None and index == len(demands) - 1:
            lat = slow_edge_latency
        accept = all_accepted or index < len(demands) - 1
        qid, aid = next_id, next_id + 1
        next_id += 2
        posts.append(question(qid, asker, cursor, body=f"q{qid}",
                              accepted=aid if accept else None))
        posts.append(answer(aid, answerer, qid, cursor + lat, body=f"a{aid}"))
        cursor += timedelta(hours=1)
    return posts


def four_cluster_fixture() -> list[Post]:
    """Four isolated communities exercising the latency/acceptance axes.

    A = {1,2}: 13 events, <= 24h, one unaccepted.
    B = {3,4,5}: 9 events, <= 24h, one unaccepted.
    C = {6,7}: 13 events, all accepted, one takes 30h.
    D = {8,9,10}: 8 events, all accepted, one takes 30h.
    """
    posts: list[Post] = []
    posts += hand_community([1, 2], 13, all_accepted=False,
                            latency=timedelta(hours=2), id_start=1000)
    posts += hand_community([3, 4, 5], 9, all_accepted=False,
                            latency=timedelta(hours=5), id_start=2000)
    posts += hand_community([6, 7], 13, all_accepted=True,
                            latency=timedelta(hours=3),
                            slow_edge_latency=timedelta(hours=30), id_start=3000)
    posts += hand_community([8, 9, 10], 8, all_accepted=True,
                            latency=timedelta(hours=4),
                            slow_edge_latency=timedelta(hours=30), id_start=4000)
    return posts


def records_for(posts: list[Post]):
    build = build_interaction_table(posts)
    assert build.dropped_total == 0, f"fixture must survive the table intact: {build.dropped}"
    return build.records


def naive_modularity(graph, assignment) -> float:
    """Direct double-sum modularity, independent of the library's
    community-sum formulation: (1/2m) sum_ij [A_ij - k_i k_j / 2m] over
    same-community pairs, including the i == j diagonal."""
    m = graph.total_edges
    if m == 0:
        return 0.0
    two_m = 2.0 * m
    q = 0.0
    nodes = sorted(graph.nodes)
    for i in nodes:
        k_i = graph.degree(i)
        for j in nodes:
            if assignment[i] != assignment[j]:
                continue
            a_ij = 0 if i == j else graph.adjacency[i].get(j, 0)
            q += a_ij - k_i * graph.degree(j) / two_m
    return q / two_m


def set_partitions(items: list):
    """All partitions of ``items`` into nonempty blocks (Bell-number many)."""
    if not items:
        yield []
        return
    first, rest = items[0], items[1:]
    for part in set_partitions(rest):
        for i in range(len(part)):
            yield part[:i] + [[first] + part[i]] + part[i + 1:]
        yield [[first]] + part


def brute_force_best_q(graph) -> float:
    """Exhaustive maximum modularity over every partition of the node set."""
    from ringwatch.louvain import modularity

    nodes = sorted(graph.nodes)
    best = float("-inf")
    for blocks in set_partitions(nodes):
        assignment = {}
        for cid, block in enumerate(blocks):
            for node in block:
                assignment[node] = cid
        q = modularity(graph, assignment)
        if q > best:
            best = q
    return best


def random_multigraph(rng, max_nodes: int = 8, max_edges: int = 16,
                      allow_empty: bool = False):
    """Random small multigraph for oracle comparisons."""
    from ringwatch.graph import Edge, InteractionGraph

    n = rng.randint(2, max_nodes)
    g = InteractionGraph()
    for node in range(1, n + 1):
        g.add_node(node)
    lo = 0 if allow_empty else 1
    n_edges = rng.randint(lo, max_edges)
    for k in range(n_edges):
        i = rng.randint(1, n)
        j = rng.randint(1, n)
        while j == i:
            j = rng.randint(1, n)
        g.add_edge(Edge(i, j, f"e{k}", rng.random() < 0.5, float(rng.randint(60, 86400))))
    return g
