"""Synthetic corpora with planted, linearly decodable signals.

These fixtures make training behavior checkable against ground truth: the
controversy label of each post is a known linear function of directions
injected into chosen node features, so a model that can see the carrier
nodes can reach perfect accuracy, and one that cannot is reduced to
guessing. An optional per-topic direction makes topic identity decodable
the same way.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from tpcgcn.data import Comment, EmbeddingTable, ThreadRecord
from tpcgcn.rng import SeededRng


@dataclass
class SyntheticCorpus:
    threads: list[ThreadRecord]
    table: EmbeddingTable
    # which label-signal family each post carries: "shared" or "topic"
    carrier_group: dict[str, str]


def _unit(rng: SeededRng, dim: int) -> np.ndarray:
    v = rng.normal(dim)
    return v / np.linalg.norm(v)


def planted_corpus(
    n_topics: int = 2,
    posts_per_topic: int = 10,
    comments_per_post: int = 3,
    dim: int = 16,
    seed: int = 0,
    label_carrier: str = "both",  # "post" | "comment" | "both"
    label_signal: float = 3.0,
    topic_signal: float = 0.0,
    noise: float = 0.5,
    chain_comments: bool = False,
    mixed_carriers: bool = False,
) -> SyntheticCorpus:
    """Corpus whose labels ride a planted direction in node features.

    Labels alternate within each topic (balanced). Posts with label 1 get
    ``+label_signal`` times the label direction added to their carrier
    nodes, label 0 gets the negation. With ``mixed_carriers`` the label
    direction alternates per post between one direction shared by all
    topics and a per-topic direction, and the choice is recorded in
    ``carrier_group`` ("shared" / "topic").
    """
    rng = SeededRng(seed)
    v_label = _unit(rng.spawn("label-dir"), dim)
    v_topic_label = {
        t: _unit(rng.spawn(f"topic-label-dir:{t}"), dim) for t in range(n_topics)
    }
    v_topic = {t: _unit(rng.spawn(f"topic-dir:{t}"), dim) for t in range(n_topics)}
    feat_rng = rng.spawn("features")

    def base(node_key: str) -> np.ndarray:
        return noise * feat_rng.spawn(node_key).normal(dim)

    threads: list[ThreadRecord] = []
    table = EmbeddingTable(dim)
    carrier_group: dict[str, str] = {}

    for t in range(n_topics):
        topic_id = f"topic{t}"
        vec = base(topic_id) + topic_signal * v_topic[t]
        table.put(topic_id, vec)
        for p in range(posts_per_topic):
            post_id = f"t{t}p{p}"
            label = p % 2
            sign = 1.0 if label == 1 else -1.0
            if mixed_carriers:
                group = "shared" if (p // 2) % 2 == 0 else "topic"
            else:
                group = "shared"
            carrier_group[post_id] = group
            direction = v_label if group == "shared" else v_topic_label[t]

            comments = []
            created = 1000.0 * (t * posts_per_topic + p)
            for c in range(comments_per_post):
                cid = f"{post_id}c{c}"
                parent = f"{post_id}c{c - 1}" if chain_comments and c > 0 else None
                comments.append(
                    Comment(
                        id=cid,
                        parent_id=parent,
                        author=f"user{c}",
                        text=f"comment {c} on {post_id}",
                        created_at=created + 60.0 * (c + 1),
                    )
                )
                cvec = base(cid) + topic_signal * v_topic[t]
                if label_carrier in ("comment", "both"):
                    cvec = cvec + sign * label_signal * direction
                table.put(cid, cvec)

            pvec = base(post_id) + topic_signal * v_topic[t]
            if label_carrier in ("post", "both"):
                pvec = pvec + sign * label_signal * direction
            table.put(post_id, pvec)

            threads.append(
                ThreadRecord(
                    post_id=post_id,
                    topic_id=topic_id,
                    text=f"post {p} of {topic_id}",
                    label=label,
                    created_at=created,
                    comments=comments,
                )
            )
    return SyntheticCorpus(threads=threads, table=table, carrier_group=carrier_group)


def random_tree_corpus(
    n_posts: int = 3,
    max_comments: int = 5,
    max_depth: int = 3,
    dim: int = 8,
    seed: int = 0,
) -> SyntheticCorpus:
    """Random reply trees with noise features, for structural tests."""
    rng = SeededRng(seed)
    table = EmbeddingTable(dim)
    topic_id = f"rt{seed}"
    table.put(topic_id, rng.spawn(topic_id).normal(dim))
    threads = []
    u = rng.spawn("shape").uniform(n_posts * (1 + max_comments) * 2)
    k = 0
    for p in range(n_posts):
        post_id = f"{topic_id}p{p}"
        table.put(post_id, rng.spawn(post_id).normal(dim))
        n_comments = int(u[k] * (max_comments + 1))
        k += 1
        comments: list[Comment] = []
        ids_by_depth: dict[int, list[str]] = {0: [post_id]}
        depth_of = {post_id: 0}
        for c in range(n_comments):
            cid = f"{post_id}c{c}"
            candidates = [x for x in depth_of if depth_of[x] < max_depth]
            parent = candidates[int(u[k] * len(candidates))]
            k += 1
            depth_of[cid] = depth_of[parent] + 1
            comments.append(
                Comment(
                    id=cid,
                    parent_id=None if parent == post_id else parent,
                    author=f"a{c}",
                    text=f"c{c}",
                    created_at=100.0 * p + c,
                )
            )
            table.put(cid, rng.spawn(cid).normal(dim))
        threads.append(
            ThreadRecord(
                post_id=post_id,
                topic_id=topic_id,
                text=f"post {p}",
                label=p % 2,
                created_at=100.0 * p,
                comments=comments,
            )
        )
    return SyntheticCorpus(threads=threads, table=table, carrier_group={})
