import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from tpcgcn import autodiff as ad
from tpcgcn.autodiff import Tensor
from tpcgcn.gradcheck import finite_diff_check
from tpcgcn.graph import build_tpc_graph, fusion_positions
from tpcgcn.model import (
    DtpcModel,
    DtpcShape,
    TpcgcnModel,
    TpcgcnShape,
    attention_fuse,
    branch_forward,
    dtpcgcn_forward,
    fuse_post,
    gcn_layer,
    load_model_for_eval,
    model_kind_of_store,
    prepare_graph,
    reduce_embeddings,
    tpcgcn_forward,
)
from tpcgcn.params import ParameterStore
from tpcgcn.pipeline import prepare_dataset
from tpcgcn.rng import SeededRng
from tpcgcn.sparse import SparseMatrix, sparse_identity
from tpcgcn.synth import planted_corpus, random_tree_corpus


def prepared_toy(seed=0, n_posts=3, dim=6):
    corpus = random_tree_corpus(n_posts=n_posts, max_comments=4, dim=dim, seed=seed)
    return prepare_dataset(corpus.threads, corpus.table)[0]


class TestReduce:
    def test_identity_weights_relu_mask(self):
        store = ParameterStore()
        w = store.add("w", np.eye(2))
        b = store.add("b", np.zeros((1, 2)))
        out = reduce_embeddings(Tensor([[1.0, -1.0]]), w, b)
        assert np.array_equal(out.value, [[1.0, 0.0]])

    def test_default_dims_768_to_300(self):
        shape = TpcgcnShape(raw_dim=768)
        model = TpcgcnModel.build(shape, SeededRng(0))
        x = Tensor(SeededRng(1).normal(5 * 768).reshape(5, 768))
        out = reduce_embeddings(x, model.store["reduction.w"], model.store["reduction.b"])
        assert out.value.shape == (5, 300)

    def test_gradcheck(self):
        store = ParameterStore()
        w = store.add("w", SeededRng(2).normal(12).reshape(4, 3))
        b = store.add("b", SeededRng(3).normal(3).reshape(1, 3))
        x = Tensor(SeededRng(4).normal(8).reshape(2, 4))
        err = finite_diff_check(
            lambda: ad.sum_all(reduce_embeddings(x, w, b)), [w, b]
        )
        assert err < 1e-6


class TestGcnLayer:
    def test_identity_adjacency(self):
        store = ParameterStore()
        w = store.add("w", np.eye(2))
        b = store.add("b", np.zeros((1, 2)))
        out = gcn_layer(Tensor([[2.0, -3.0]]), sparse_identity(1), w, b, "relu")
        assert np.array_equal(out.value, [[2.0, 0.0]])

    def test_two_node_hand_value(self):
        a_hat = SparseMatrix(2, 2, [(0, 0, 0.5), (0, 1, 0.5), (1, 0, 0.5), (1, 1, 0.5)])
        store = ParameterStore()
        w = store.add("w", np.eye(1))
        b = store.add("b", np.zeros((1, 1)))
        out = gcn_layer(Tensor([[2.0], [4.0]]), a_hat, w, b, "none")
        assert np.allclose(out.value, [[3.0], [3.0]], atol=1e-15)

    @pytest.mark.parametrize("seed", range(4))
    def test_matches_dense_oracle(self, seed):
        prep = prepared_toy(seed=seed, dim=5)
        store = ParameterStore()
        w = store.add("w", SeededRng(seed + 50).normal(5 * 3).reshape(5, 3))
        b = store.add("b", SeededRng(seed + 60).normal(3).reshape(1, 3))
        h = Tensor(SeededRng(seed + 70).normal(prep.graph.n_nodes * 5).reshape(-1, 5))
        got = gcn_layer(h, prep.a_hat, w, b, "relu").value
        dense = prep.a_hat.to_dense()
        expected = np.maximum(dense @ h.value @ w.value + b.value, 0.0)
        assert np.allclose(got, expected, atol=1e-12, rtol=0)


class TestFusePost:
    def test_no_comments_is_post_row(self):
        h = Tensor(SeededRng(1).normal(8).reshape(4, 2))
        out = fuse_post(h, 2, [])
        assert np.array_equal(out.value, h.value[2:3])

    def test_hand_mean(self):
        h = Tensor([[1.0, 3.0], [3.0, 1.0], [2.0, 2.0]])
        out = fuse_post(h, 0, [1, 2])
        assert np.array_equal(out.value, [[2.0, 2.0]])

    def test_comment_permutation_bit_identical(self):
        h = Tensor(SeededRng(2).normal(12).reshape(6, 2))
        a = fuse_post(h, 0, [3, 1, 4, 2])
        b = fuse_post(h, 0, [2, 4, 1, 3])
        assert np.array_equal(a.value, b.value)

    def test_consistent_with_fusion_matrix(self):
        prep = prepared_toy(seed=3)
        h = Tensor(SeededRng(9).normal(prep.graph.n_nodes * 3).reshape(-1, 3))
        batched = ad.spmm(prep.fusion, h).value
        for row, pid in enumerate(prep.post_ids):
            pos = fusion_positions(prep.graph, pid)
            single = fuse_post(h, pos[0], pos[1:]).value
            assert np.allclose(batched[row], single[0], atol=1e-12, rtol=0)


class TestTpcgcnForward:
    def test_default_hidden_dims(self):
        shape = TpcgcnShape(raw_dim=32)
        assert (shape.hidden1, shape.hidden2) == (100, 2)

    def test_probs_rows_sum_to_one(self):
        prep = prepared_toy(seed=4)
        model = TpcgcnModel.build(
            TpcgcnShape(raw_dim=6, reduced_dim=5, hidden1=4, hidden2=2), SeededRng(1)
        )
        out = tpcgcn_forward(prep, model)
        assert out.probs.shape == (prep.n_posts, 2)
        assert np.allclose(out.probs.sum(axis=1), 1.0, atol=1e-12)

    def test_deterministic_without_dropout(self):
        prep = prepared_toy(seed=5)
        model = TpcgcnModel.build(
            TpcgcnShape(raw_dim=6, reduced_dim=5, hidden1=4, hidden2=2), SeededRng(2)
        )
        a = tpcgcn_forward(prep, model).logits.value
        b = tpcgcn_forward(prep, model).logits.value
        assert np.array_equal(a, b)

    def test_full_model_gradcheck(self):
        prep = prepared_toy(seed=6, n_posts=2, dim=5)
        model = TpcgcnModel.build(
            TpcgcnShape(raw_dim=5, reduced_dim=4, hidden1=3, hidden2=2), SeededRng(3)
        )

        def loss_fn():
            out = tpcgcn_forward(prep, model)
            loss, _ = ad.softmax_cross_entropy(out.logits, prep.labels)
            return loss

        err = finite_diff_check(loss_fn, list(model.store))
        assert err < 1e-4


def far_perturbation_cases(prep):
    """(post_row, node_pos) pairs where the node is >= 3 hops from the post
    and outside its fusion set."""
    cases = []
    for row, pid in enumerate(prep.post_ids):
        fset = set(fusion_positions(prep.graph, pid))
        dist = prep.graph.distances_from(prep.graph.post_pos[pid])
        for pos in range(prep.graph.n_nodes):
            if pos not in fset and dist[pos] >= 3:
                cases.append((row, pos))
    return cases


class TestReceptiveField:
    def test_perturbing_far_node_leaves_logits_bit_identical(self):
        hits, rippled = 0, 0
        for seed in range(30):
            corpus = random_tree_corpus(n_posts=3, max_comments=5, dim=6, seed=seed)
            prep = prepare_dataset(corpus.threads, corpus.table)[0]
            cases = far_perturbation_cases(prep)
            if not cases:
                continue
            model = TpcgcnModel.build(
                TpcgcnShape(raw_dim=6, reduced_dim=5, hidden1=4, hidden2=2),
                SeededRng(seed),
            )
            base = tpcgcn_forward(prep, model).logits.value
            row, pos = cases[0]
            prep.x_raw.value[pos] += 1.5
            try:
                bumped = tpcgcn_forward(prep, model).logits.value
            finally:
                prep.x_raw.value[pos] -= 1.5
            assert np.array_equal(base[row], bumped[row])
            hits += 1
            # relu gates can absorb a perturbation entirely, but usually
            # some other post's logits should move
            if not np.array_equal(base, bumped):
                rippled += 1
        assert hits >= 10  # enough random graphs actually had a far node
        assert rippled >= 5


class TestBranchForward:
    def make(self, seed=0, n_topics=3):
        prep = prepared_toy(seed=seed, dim=6)
        shape = DtpcShape(
            raw_dim=6, n_topics=n_topics, reduced_dim=5, hidden1=4, hidden2=3, attn_dim=3
        )
        model = DtpcModel.build(shape, SeededRng(seed + 1))
        return prep, model

    def test_default_dims(self):
        shape = DtpcShape(raw_dim=8, n_topics=4)
        assert (shape.hidden1, shape.hidden2) == (32, 16)

    def test_topic_logits_columns(self):
        prep, model = self.make(n_topics=5)
        out = branch_forward(prep, model.u)
        assert out.topic_logits.value.shape == (prep.n_posts, 5)
        assert out.contro_logits.value.shape == (prep.n_posts, 2)
        assert out.fusion_vectors.value.shape == (prep.n_posts, 3)

    def test_gradcheck_through_both_heads(self):
        prep, model = self.make(seed=2)

        def loss_fn():
            out = branch_forward(prep, model.r)
            l_c, _ = ad.softmax_cross_entropy(out.contro_logits, prep.labels)
            l_t, _ = ad.softmax_cross_entropy(
                out.topic_logits, np.zeros(prep.n_posts, dtype=np.int64)
            )
            return ad.add(l_c, l_t)

        params = [model.store[n] for n in model.r.param_names()]
        err = finite_diff_check(loss_fn, params)
        assert err < 1e-4


class TestAttentionFuse:
    def params(self, dim=3, attn=3, seed=0):
        store = ParameterStore()
        rng = SeededRng(seed)
        w_f = store.add("wf", rng.spawn("wf").normal(dim * attn).reshape(dim, attn))
        b_f = store.add("bf", rng.spawn("bf").normal(attn).reshape(1, attn))
        v = store.add("v", rng.spawn("v").normal(attn).reshape(attn, 1))
        return store, w_f, b_f, v

    def test_identical_inputs_mix_evenly(self):
        _, w_f, b_f, v = self.params()
        f = Tensor(SeededRng(1).normal(6).reshape(2, 3))
        fused, a_u, a_r = attention_fuse(f, Tensor(f.value.copy()), w_f, b_f, v)
        assert np.allclose(a_u.value, 0.5, atol=1e-15)
        assert np.allclose(a_r.value, 0.5, atol=1e-15)
        assert np.allclose(fused.value, f.value, atol=1e-15)

    @settings(max_examples=40, deadline=None)
    @given(st.integers(0, 5_000))
    def test_weights_sum_to_one_and_convex(self, seed):
        _, w_f, b_f, v = self.params(seed=seed % 17)
        rng = SeededRng(seed)
        f_u = Tensor(rng.normal(6).reshape(2, 3) * 3)
        f_r = Tensor(rng.normal(6).reshape(2, 3) * 3)
        fused, a_u, a_r = attention_fuse(f_u, f_r, w_f, b_f, v)
        assert np.allclose(a_u.value + a_r.value, 1.0, atol=1e-12)
        assert np.all(a_u.value > 0) and np.all(a_u.value < 1)
        lo = np.minimum(f_u.value, f_r.value) - 1e-12
        hi = np.maximum(f_u.value, f_r.value) + 1e-12
        assert np.all(fused.value >= lo) and np.all(fused.value <= hi)

    def test_gradcheck(self):
        store, w_f, b_f, v = self.params(seed=3)
        f_u = Tensor(SeededRng(4).normal(6).reshape(2, 3), requires_grad=True)
        f_r = Tensor(SeededRng(5).normal(6).reshape(2, 3), requires_grad=True)

        def loss_fn():
            fused, _, _ = attention_fuse(f_u, f_r, w_f, b_f, v)
            return ad.sum_all(fused)

        err = finite_diff_check(loss_fn, [w_f, b_f, v, f_u, f_r])
        assert err < 1e-5


class TestDtpcForward:
    def make(self, seed=0):
        prep = prepared_toy(seed=seed, dim=6)
        shape = DtpcShape(
            raw_dim=6, n_topics=2, reduced_dim=5, hidden1=4, hidden2=3, attn_dim=3
        )
        return prep, DtpcModel.build(shape, SeededRng(seed + 10))

    def test_probs_sum_to_one_and_alpha_recorded(self):
        prep, model = self.make(1)
        out = dtpcgcn_forward(prep, model)
        assert np.allclose(out.probs.sum(axis=1), 1.0, atol=1e-12)
        assert out.alpha.shape == (prep.n_posts, 2)
        assert np.allclose(out.alpha.sum(axis=1), 1.0, atol=1e-12)

    def test_identical_branches_reduce_to_single_branch(self):
        prep, model = self.make(2)
        # copy R <- U so both branches compute identical fusion vectors
        for name in model.u.param_names():
            model.store["R" + name[1:]].value[...] = model.store[name].value
        out = dtpcgcn_forward(prep, model)
        f_u = branch_forward(prep, model.u).fusion_vectors
        logits = ad.add_bias(
            ad.matmul(f_u, model.store["final_head.w"]), model.store["final_head.b"]
        )
        expected = ad.softmax_rows(logits.value)
        assert np.allclose(out.probs, expected, atol=1e-12)
        assert np.allclose(out.alpha, 0.5, atol=1e-12)

    def test_stage3_gradcheck_attention_and_final_head_only(self):
        prep, model = self.make(3)
        model.store.freeze_prefix("U.")
        model.store.freeze_prefix("R.")
        trainable = [p for p in model.store if not p.frozen]
        assert {p.name for p in trainable} == {
            "attention.wf",
            "attention.bf",
            "attention.v",
            "final_head.w",
            "final_head.b",
        }

        def loss_fn():
            out = dtpcgcn_forward(prep, model)
            loss, _ = ad.softmax_cross_entropy(out.logits, prep.labels)
            return loss

        err = finite_diff_check(loss_fn, trainable)
        assert err < 1e-4
        # frozen branches get no gradients at all
        for name in model.u.param_names():
            assert np.array_equal(model.store[name].grad, np.zeros_like(model.store[name].value))


class TestStoreRoundtrip:
    def test_model_kind_detection(self):
        tpc = TpcgcnModel.build(TpcgcnShape(raw_dim=4, reduced_dim=3, hidden1=3), SeededRng(0))
        assert model_kind_of_store(tpc.store) == "tpcgcn"
        dtpc = DtpcModel.build(
            DtpcShape(raw_dim=4, n_topics=2, reduced_dim=3, hidden1=3, hidden2=2, attn_dim=2),
            SeededRng(1),
        )
        assert model_kind_of_store(dtpc.store) == "dtpcgcn"
        rebuilt = load_model_for_eval(dtpc.store)
        assert isinstance(rebuilt, DtpcModel)
        assert rebuilt.shape == dtpc.shape

    def test_planted_corpus_shapes(self):
        corpus = planted_corpus(n_topics=2, posts_per_topic=4, comments_per_post=2, dim=8)
        prepared = prepare_dataset(corpus.threads, corpus.table)
        assert len(prepared) == 2
        assert prepared[0].x_raw.value.shape[1] == 8
        assert prepared[0].n_posts == 4
