"""Topic-post-comment graph construction and manipulation.

One graph per topic: the topic node is a hub connected to every post, and
each post roots its comment reply tree. Edges are undirected; reply
direction survives only in the thread records. Graphs are immutable after
construction and safe to share across threads.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from enum import Enum
from typing import TYPE_CHECKING, Iterable, Mapping, Sequence

import numpy as np

from tpcgcn.sparse import SparseMatrix

if TYPE_CHECKING:
    from tpcgcn.data import Comment, ThreadRecord


class ValidationError(ValueError):
    """Input data violates a structural or schema constraint."""


class NodeKind(str, Enum):
    TOPIC = "topic"
    POST = "post"
    COMMENT = "comment"


@dataclass(frozen=True)
class NodeRef:
    kind: NodeKind
    id: str


class AblationVariant(Enum):
    """Structural and feature ablations of a topic graph.

    Node-dropping variants remove nodes plus incident edges; the
    feature-randomizing variants keep the structure and only name the node
    kinds whose input features should be replaced with random vectors.
    """

    FULL = "full"
    DROP_TOPIC = "drop_topic"
    DROP_COMMENTS = "drop_comments"
    RAND_TOPIC_FEAT = "rand_topic_feat"
    RAND_POST_FEAT = "rand_post_feat"
    RAND_COMMENT_FEAT = "rand_comment_feat"

    @property
    def randomized_kinds(self) -> frozenset[NodeKind]:
        return _RANDOMIZED_KINDS.get(self, frozenset())


_RANDOMIZED_KINDS = {
    AblationVariant.RAND_TOPIC_FEAT: frozenset({NodeKind.TOPIC}),
    AblationVariant.RAND_POST_FEAT: frozenset({NodeKind.POST}),
    AblationVariant.RAND_COMMENT_FEAT: frozenset({NodeKind.COMMENT}),
}


@dataclass
class TpcGraph:
    """Nodes in a fixed order, undirected edges by position.

    As built, the graph is a tree rooted at the topic node; ablations may
    remove the topic (leaving one component per post) or the comments.
    """

    topic_id: str
    nodes: list[NodeRef]
    edges: list[tuple[int, int]]
    topic_pos: int | None
    post_pos: dict[str, int]
    post_comments: dict[str, tuple[int, ...]]

    @property
    def n_nodes(self) -> int:
        return len(self.nodes)

    @property
    def post_ids(self) -> list[str]:
        return list(self.post_pos)

    def neighbors(self) -> list[list[int]]:
        adj: list[list[int]] = [[] for _ in self.nodes]
        for a, b in self.edges:
            adj[a].append(b)
            adj[b].append(a)
        for lst in adj:
            lst.sort()
        return adj

    def distances_from(self, start: int) -> np.ndarray:
        """BFS hop counts from a node position; unreachable nodes get -1."""
        adj = self.neighbors()
        dist = np.full(self.n_nodes, -1, dtype=np.int64)
        dist[start] = 0
        frontier = [start]
        while frontier:
            nxt = []
            for u in frontier:
                for v in adj[u]:
                    if dist[v] < 0:
                        dist[v] = dist[u] + 1
                        nxt.append(v)
            frontier = nxt
        return dist


def build_tpc_graph(topic_id: str, threads: Sequence["ThreadRecord"]) -> TpcGraph:
    """Assemble the per-topic graph from resolved thread records.

    Node order: topic first, then per thread its post followed by that
    thread's comments sorted by (created_at, id). Every comment's parent
    must be the post or an earlier comment of the same thread.
    """
    if not threads:
        raise ValidationError(f"topic {topic_id}: no threads")
    nodes: list[NodeRef] = [NodeRef(NodeKind.TOPIC, topic_id)]
    seen_ids = {topic_id}
    edges: list[tuple[int, int]] = []
    post_pos: dict[str, int] = {}
    post_comments: dict[str, tuple[int, ...]] = {}

    for thread in threads:
        if thread.topic_id != topic_id:
            raise ValidationError(
                f"thread {thread.post_id} belongs to topic {thread.topic_id}, "
                f"not {topic_id}"
            )
        if thread.post_id in seen_ids:
            raise ValidationError(f"duplicate node id: {thread.post_id}")
        seen_ids.add(thread.post_id)
        p = len(nodes)
        nodes.append(NodeRef(NodeKind.POST, thread.post_id))
        post_pos[thread.post_id] = p
        edges.append((0, p))

        pos_of = {thread.post_id: p}
        comment_positions = []
        ordered = sorted(thread.comments, key=lambda c: (c.created_at, c.id))
        for comment in ordered:
            if comment.id in seen_ids:
                raise ValidationError(f"duplicate node id: {comment.id}")
            seen_ids.add(comment.id)
            parent_id = comment.parent_id if comment.parent_id is not None else thread.post_id
            if parent_id not in pos_of:
                raise ValidationError(
                    f"comment {comment.id}: parent {parent_id} not found earlier "
                    f"in thread {thread.post_id}"
                )
            cpos = len(nodes)
            nodes.append(NodeRef(NodeKind.COMMENT, comment.id))
            pos_of[comment.id] = cpos
            comment_positions.append(cpos)
            edges.append((pos_of[parent_id], cpos))
        post_comments[thread.post_id] = tuple(comment_positions)

    return TpcGraph(
        topic_id=topic_id,
        nodes=nodes,
        edges=edges,
        topic_pos=0,
        post_pos=post_pos,
        post_comments=post_comments,
    )


def rebuild_reply_tree(
    raw_comments: Sequence["Comment"],
) -> dict[str, str | None]:
    """Recover reply structure from timestamps and mentions.

    A comment that mentions user ``u`` attaches to u's most recent earlier
    comment in the thread; everything else (including unresolvable mentions)
    attaches to the post, encoded as parent ``None``. The result never
    contains an edge from an earlier comment to a later parent.
    """
    ordered = sorted(raw_comments, key=lambda c: (c.created_at, c.id))
    latest_by_author: dict[str, str] = {}
    parents: dict[str, str | None] = {}
    for comment in ordered:
        mention = comment.mentioned_user
        parents[comment.id] = latest_by_author.get(mention) if mention else None
        latest_by_author[comment.author] = comment.id
    return parents


@dataclass(frozen=True)
class MaxCount:
    """Keep at most n comments, earliest first."""

    n: int


@dataclass(frozen=True)
class TimeWindow:
    """Keep comments created within ``seconds`` of the post."""

    seconds: float


def truncate_comments(thread: "ThreadRecord", policy: MaxCount | TimeWindow) -> "ThreadRecord":
    """Apply a truncation policy, pruning subtrees of removed comments.

    A comment survives only if its parent chain survives, so the result is
    still a well-formed forest under the post.
    """
    if isinstance(policy, MaxCount):
        if policy.n < 0:
            raise ValueError("MaxCount needs n >= 0")
    elif isinstance(policy, TimeWindow):
        if policy.seconds < 0:
            raise ValueError("TimeWindow needs seconds >= 0")
    else:
        raise TypeError(f"unknown truncation policy: {policy!r}")

    kept: dict[str, "Comment"] = {}
    result = []
    for comment in sorted(thread.comments, key=lambda c: (c.created_at, c.id)):
        parent = comment.parent_id
        if parent is not None and parent != thread.post_id and parent not in kept:
            continue
        if isinstance(policy, MaxCount):
            if len(kept) >= policy.n:
                continue
        else:
            if comment.created_at > thread.created_at + policy.seconds:
                continue
        kept[comment.id] = comment
        result.append(comment)
    return replace(thread, comments=result)


def normalize_adjacency(graph: TpcGraph) -> SparseMatrix:
    """Symmetric degree-normalized adjacency with self-loops.

    Entry (i, j) of the result is (A + I)_ij / sqrt(d_i * d_j) where the
    degrees d are taken over A + I, so isolated nodes still get a positive
    diagonal from their self-loop.
    """
    n = graph.n_nodes
    deg = np.ones(n, dtype=np.float64)
    for a, b in graph.edges:
        deg[a] += 1.0
        deg[b] += 1.0
    inv_sqrt = 1.0 / np.sqrt(deg)
    entries = [(i, i, inv_sqrt[i] * inv_sqrt[i]) for i in range(n)]
    for a, b in graph.edges:
        w = inv_sqrt[a] * inv_sqrt[b]
        entries.append((a, b, w))
        entries.append((b, a, w))
    return SparseMatrix(n, n, entries)


def apply_ablation(graph: TpcGraph, variant: AblationVariant) -> TpcGraph:
    """Structural variant of a graph; never mutates the input.

    Feature-randomizing variants (and FULL) return the graph unchanged;
    which features to randomize is carried by ``variant.randomized_kinds``.
    """
    if variant in (
        AblationVariant.FULL,
        AblationVariant.RAND_TOPIC_FEAT,
        AblationVariant.RAND_POST_FEAT,
        AblationVariant.RAND_COMMENT_FEAT,
    ):
        return graph
    if variant is AblationVariant.DROP_TOPIC:
        drop = {graph.topic_pos}
    elif variant is AblationVariant.DROP_COMMENTS:
        drop = {
            pos for positions in graph.post_comments.values() for pos in positions
        }
    else:
        raise ValueError(f"unknown ablation variant: {variant}")

    remap: dict[int, int] = {}
    nodes: list[NodeRef] = []
    for pos, node in enumerate(graph.nodes):
        if pos in drop:
            continue
        remap[pos] = len(nodes)
        nodes.append(node)
    edges = [
        (remap[a], remap[b])
        for a, b in graph.edges
        if a not in drop and b not in drop
    ]
    topic_pos = None if variant is AblationVariant.DROP_TOPIC else remap[graph.topic_pos]
    post_pos = {pid: remap[pos] for pid, pos in graph.post_pos.items()}
    post_comments = {
        pid: tuple(remap[p] for p in positions if p not in drop)
        for pid, positions in graph.post_comments.items()
    }
    return TpcGraph(
        topic_id=graph.topic_id,
        nodes=nodes,
        edges=edges,
        topic_pos=topic_pos,
        post_pos=post_pos,
        post_comments=post_comments,
    )


def restrict_to_posts(graph: TpcGraph, keep_post_ids: Iterable[str]) -> TpcGraph:
    """Drop the posts not in ``keep_post_ids`` along with their comment trees.

    Used by inductive training, where non-train posts must not even appear
    in the message-passing structure.
    """
    keep = set(keep_post_ids)
    drop: set[int] = set()
    for pid, pos in graph.post_pos.items():
        if pid not in keep:
            drop.add(pos)
            drop.update(graph.post_comments[pid])
    if not drop:
        return graph
    remap: dict[int, int] = {}
    nodes: list[NodeRef] = []
    for pos, node in enumerate(graph.nodes):
        if pos in drop:
            continue
        remap[pos] = len(nodes)
        nodes.append(node)
    edges = [
        (remap[a], remap[b]) for a, b in graph.edges if a not in drop and b not in drop
    ]
    return TpcGraph(
        topic_id=graph.topic_id,
        nodes=nodes,
        edges=edges,
        topic_pos=remap[graph.topic_pos] if graph.topic_pos is not None else None,
        post_pos={p: remap[pos] for p, pos in graph.post_pos.items() if p in keep},
        post_comments={
            p: tuple(remap[c] for c in cs)
            for p, cs in graph.post_comments.items()
            if p in keep
        },
    )


def fusion_positions(graph: TpcGraph, post_id: str) -> list[int]:
    """Positions averaged into a post's fusion vector: the post, then its comments."""
    return [graph.post_pos[post_id], *graph.post_comments[post_id]]


def fusion_matrix(graph: TpcGraph) -> SparseMatrix:
    """Row-averaging matrix F with one row per post.

    F @ H gives each post the mean of its own representation and its
    comments' representations.
    """
    entries = []
    for row, post_id in enumerate(graph.post_ids):
        positions = fusion_positions(graph, post_id)
        w = 1.0 / len(positions)
        for pos in positions:
            entries.append((row, pos, w))
    return SparseMatrix(len(graph.post_pos), graph.n_nodes, entries)


def dump_edges(graph: TpcGraph) -> str:
    """Edge list as "kind:id kind:id" lines, BFS order from the topic node.

    For topic-less (ablated) graphs the BFS starts from each post in order.
    """
    adj = graph.neighbors()
    roots = (
        [graph.topic_pos]
        if graph.topic_pos is not None
        else sorted(graph.post_pos.values())
    )
    lines = []
    visited = set(roots)
    frontier = list(roots)
    while frontier:
        nxt = []
        for u in frontier:
            for v in adj[u]:
                if v in visited:
                    continue
                visited.add(v)
                a, b = graph.nodes[u], graph.nodes[v]
                lines.append(f"{a.kind.value}:{a.id} {b.kind.value}:{b.id}")
                nxt.append(v)
        frontier = nxt
    return "\n".join(lines) + ("\n" if lines else "")


def node_kind_map(graphs: Iterable[TpcGraph]) -> dict[str, NodeKind]:
    """Node id to kind, across a collection of graphs."""
    kinds: dict[str, NodeKind] = {}
    for g in graphs:
        for node in g.nodes:
            kinds[node.id] = node.kind
    return kinds
