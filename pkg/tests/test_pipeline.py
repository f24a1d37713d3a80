import numpy as np
import pytest

from tpcgcn import autodiff as ad
from tpcgcn.autodiff import Tensor
from tpcgcn.data import Comment, ThreadRecord
from tpcgcn.gradcheck import NumericError, finite_diff_check
from tpcgcn.graph import AblationVariant, NodeKind
from tpcgcn.pipeline import (
    build_graphs,
    fallback_table,
    group_by_topic,
    prepare_dataset,
    prepare_threads,
)
from tpcgcn.synth import planted_corpus


def make_thread(mentions=False):
    comments = [
        Comment("c1", None, "alice", "early", 10.0),
        Comment("c2", None, "bob", "middle", 4000.0,
                mentioned_user="alice" if mentions else None),
        Comment("c3", None, "carol", "late", 9000.0),
    ]
    return ThreadRecord("p1", "T", "post", 1, 0.0, comments)


class TestPrepareThreads:
    def test_rebuild_assigns_mention_parents(self):
        out = prepare_threads([make_thread(mentions=True)], rebuild_tree=True)
        parents = {c.id: c.parent_id for c in out[0].comments}
        assert parents == {"c1": None, "c2": "c1", "c3": None}

    def test_window_then_count_composition(self):
        # window (<= 5000s) drops c3; count cap then keeps only c1
        out = prepare_threads(
            [make_thread()], time_window_secs=5000.0, max_comments=1
        )
        assert [c.id for c in out[0].comments] == ["c1"]

    def test_count_prunes_subtree_after_rebuild(self):
        out = prepare_threads(
            [make_thread(mentions=True)], rebuild_tree=True, max_comments=1
        )
        # c2 replies to c1(kept); cap 1 keeps only c1, and c2's subtree goes
        assert [c.id for c in out[0].comments] == ["c1"]

    def test_noop_when_nothing_requested(self):
        thread = make_thread()
        assert prepare_threads([thread]) == [thread]


class TestDatasetAssembly:
    def test_topics_sorted_and_grouped(self):
        corpus = planted_corpus(n_topics=3, posts_per_topic=2, comments_per_post=1, dim=4)
        groups = group_by_topic(corpus.threads)
        assert list(groups) == ["topic0", "topic1", "topic2"]
        graphs = build_graphs(corpus.threads)
        assert [g.topic_id for g in graphs] == ["topic0", "topic1", "topic2"]

    def test_fallback_table_covers_every_node(self):
        corpus = planted_corpus(n_topics=2, posts_per_topic=2, comments_per_post=2, dim=4)
        table = fallback_table(corpus.threads, dim=32, seed=0)
        for g in build_graphs(corpus.threads):
            for node in g.nodes:
                assert node.id in table

    def test_feature_ablation_randomizes_only_selected_kind(self):
        corpus = planted_corpus(n_topics=2, posts_per_topic=2, comments_per_post=1, dim=8)
        base = prepare_dataset(corpus.threads, corpus.table)
        ablated = prepare_dataset(
            corpus.threads, corpus.table, AblationVariant.RAND_POST_FEAT, feature_seed=3
        )
        for prep_a, prep_b in zip(base, ablated):
            for i, node in enumerate(prep_a.graph.nodes):
                same = np.array_equal(prep_a.x_raw.value[i], prep_b.x_raw.value[i])
                assert same == (node.kind is not NodeKind.POST)

    def test_structural_ablation_drops_nodes(self):
        corpus = planted_corpus(n_topics=1, posts_per_topic=3, comments_per_post=2, dim=4)
        base = prepare_dataset(corpus.threads, corpus.table)[0]
        dropped = prepare_dataset(
            corpus.threads, corpus.table, AblationVariant.DROP_COMMENTS
        )[0]
        assert dropped.graph.n_nodes == base.graph.n_nodes - 6


class TestGradcheckErrors:
    @pytest.mark.filterwarnings("ignore:invalid value encountered")
    def test_non_finite_loss_raises(self):
        w = Tensor(np.array([[0.0]]), requires_grad=True)

        def loss_fn():
            out = ad.mul_const(w, np.inf)
            return ad.sum_all(ad.mul(out, ad.constant([[0.0]])))

        with pytest.raises(NumericError, match="not finite"):
            finite_diff_check(loss_fn, [w])

    def test_sampled_coordinates(self):
        from tpcgcn.rng import SeededRng

        w = Tensor(SeededRng(1).normal(400).reshape(20, 20), requires_grad=True)
        err = finite_diff_check(
            lambda: ad.sum_all(ad.mul(w, w)), [w],
            max_coords_per_param=25, rng=SeededRng(2),
        )
        # looser than the small-matrix quadratic bound: the 400-term loss sum
        # adds rounding noise to each central difference
        assert err < 1e-6
