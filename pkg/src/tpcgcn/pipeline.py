"""End-to-end data preparation: records to per-topic prepared graphs."""

from __future__ import annotations

from typing import Sequence

from tpcgcn.data import EmbeddingTable, ThreadRecord, bow_table_for_nodes, node_texts
from tpcgcn.graph import (
    AblationVariant,
    MaxCount,
    TimeWindow,
    TpcGraph,
    apply_ablation,
    build_tpc_graph,
    node_kind_map,
    rebuild_reply_tree,
    truncate_comments,
)
from tpcgcn.model import PreparedGraph, prepare_graph


def prepare_threads(
    threads: Sequence[ThreadRecord],
    rebuild_tree: bool = False,
    time_window_secs: float | None = None,
    max_comments: int | None = None,
) -> list[ThreadRecord]:
    """Optionally rebuild reply structure, then truncate.

    When both truncation policies are set, the time window applies first and
    the count cap second.
    """
    out = []
    for thread in threads:
        if rebuild_tree:
            parents = rebuild_reply_tree(thread.comments)
            from dataclasses import replace

            thread = replace(
                thread,
                comments=[replace(c, parent_id=parents[c.id]) for c in thread.comments],
            )
        if time_window_secs is not None:
            thread = truncate_comments(thread, TimeWindow(time_window_secs))
        if max_comments is not None:
            thread = truncate_comments(thread, MaxCount(max_comments))
        out.append(thread)
    return out


def group_by_topic(threads: Sequence[ThreadRecord]) -> dict[str, list[ThreadRecord]]:
    groups: dict[str, list[ThreadRecord]] = {}
    for thread in threads:
        groups.setdefault(thread.topic_id, []).append(thread)
    return dict(sorted(groups.items()))


def build_graphs(threads: Sequence[ThreadRecord]) -> list[TpcGraph]:
    """One graph per topic, topics in sorted id order."""
    return [
        build_tpc_graph(topic_id, group)
        for topic_id, group in group_by_topic(threads).items()
    ]


def fallback_table(threads: Sequence[ThreadRecord], dim: int, seed: int) -> EmbeddingTable:
    """Hashed bag-of-words features so the pipeline runs without an embedding file."""
    return bow_table_for_nodes(node_texts(threads), dim, seed)


def prepare_dataset(
    threads: Sequence[ThreadRecord],
    table: EmbeddingTable,
    variant: AblationVariant = AblationVariant.FULL,
    feature_seed: int = 0,
) -> list[PreparedGraph]:
    """Build (optionally ablated) prepared graphs for every topic.

    Feature-randomizing variants replace the selected node kinds' vectors in
    a copy of the table, seeded by ``feature_seed``; structural variants
    rebuild the graphs instead.
    """
    graphs = [apply_ablation(g, variant) for g in build_graphs(threads)]
    if variant.randomized_kinds:
        from tpcgcn.data import randomize_features

        table = randomize_features(
            table, variant.randomized_kinds, feature_seed, node_kind_map(graphs)
        )
    labels = {t.post_id: t.label for t in threads}
    return [prepare_graph(g, labels, table) for g in graphs]
