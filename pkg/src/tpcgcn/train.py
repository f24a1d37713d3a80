"""Seeded, deterministic training loops.

Single-stage training for the plain model, and the three-stage schedule for
the disentangled one:

1. Reduction, first GCN layer, and topic head of each branch train on the
   topic task alone; branch R minimizes the topic loss, branch U minimizes
   its negation (gradient sign flip, stabilized by global norm clipping).
2. Each full branch trains on controversy loss plus the signed, weighted
   topic loss.
3. Both branches freeze; only the attention scorer and the final head train
   on controversy loss through the fused vectors.

The batch unit is one topic graph. Posts outside the train fold take part
in message passing but never in a loss (transductive; an inductive mode
prunes them from the training graphs entirely). Everything random flows
from the config seed, so a (seed, config, data) triple pins every parameter
value at every step.
"""

from __future__ import annotations

import json
import warnings
from dataclasses import asdict, dataclass, field, fields
from typing import Callable, Sequence

import numpy as np

from tpcgcn import autodiff as ad
from tpcgcn.data import SplitSpec
from tpcgcn.graph import ValidationError, restrict_to_posts
from tpcgcn.metrics import compute_metrics
from tpcgcn.model import (
    BranchModel,
    DtpcModel,
    DtpcShape,
    PreparedGraph,
    TpcgcnModel,
    TpcgcnShape,
    branch_forward,
    dtpcgcn_forward,
    prepare_graph,
    tpcgcn_forward,
)
from tpcgcn.params import AdamState, ParameterStore, adam_step
from tpcgcn.rng import SeededRng


@dataclass
class TrainConfig:
    """Hyperparameters; field names mirror the JSON config file."""

    lr: float = 1e-4
    epochs: int = 100
    dropout: float | None = None  # default 0.35 single-branch, 0.4 per branch
    seed: int = 0
    reduced_dim: int = 300
    tpc_hidden1: int = 100
    tpc_hidden2: int = 2
    dtpc_hidden1: int = 32
    dtpc_hidden2: int = 16
    attn_dim: int = 16
    stage_epochs: tuple[int, int, int] = (30, 70, 50)
    topic_loss_weight: float = 1.0
    grad_clip_norm: float | None = 5.0
    selection_metric: str = "accuracy"  # or "macro_f1"
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    inductive: bool = False
    freeze_stage1_in_stage2: bool = False
    rebuild_comment_tree: bool = False
    max_comments: int | None = None
    time_window_secs: float | None = None
    bow_dim: int = 64

    def __post_init__(self):
        # lr 0 is allowed: it must leave parameters untouched.
        if self.lr < 0:
            raise ValidationError(f"lr must be >= 0, got {self.lr}")
        if self.epochs < 1:
            raise ValidationError(f"epochs must be >= 1, got {self.epochs}")
        if self.topic_loss_weight < 0:
            raise ValidationError("topic_loss_weight must be >= 0")
        if self.selection_metric not in ("accuracy", "macro_f1"):
            raise ValidationError(
                f"selection_metric must be accuracy or macro_f1, got {self.selection_metric!r}"
            )
        self.stage_epochs = tuple(self.stage_epochs)

    @classmethod
    def from_json(cls, path) -> "TrainConfig":
        with open(path, "r", encoding="utf-8") as fh:
            obj = json.load(fh)
        known = {f.name for f in fields(cls)}
        unknown = set(obj) - known
        if unknown:
            raise ValidationError(f"unknown config fields: {sorted(unknown)}")
        return cls(**obj)

    def to_json(self, path) -> None:
        obj = asdict(self)
        obj["stage_epochs"] = list(self.stage_epochs)
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(obj, fh, indent=2, sort_keys=True)
            fh.write("\n")


@dataclass
class EpochRecord:
    stage: int
    epoch: int
    branch: str | None
    l_c: float | None
    l_t: float | None
    val_metric: float | None

    def to_json(self) -> str:
        obj = {"stage": self.stage, "epoch": self.epoch}
        if self.branch is not None:
            obj["branch"] = self.branch
        obj["L_c"] = self.l_c
        obj["L_t"] = self.l_t
        obj["val_metric"] = self.val_metric
        return json.dumps(obj)


@dataclass
class TrainHistory:
    records: list[EpochRecord] = field(default_factory=list)
    best: dict[str, dict] = field(default_factory=dict)

    def to_jsonl(self) -> str:
        lines = [r.to_json() for r in self.records]
        lines.append(json.dumps({"best": self.best}, sort_keys=True))
        return "\n".join(lines) + "\n"

    def save(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(self.to_jsonl())


def clip_gradients(store: ParameterStore, max_norm: float | None) -> float:
    """Scale all trainable gradients so their global L2 norm is <= max_norm.

    Returns the scale factor applied (1.0 when already under the threshold
    or when max_norm is None).
    """
    if max_norm is None:
        return 1.0
    if max_norm <= 0:
        raise ValueError(f"max_norm must be positive, got {max_norm}")
    total = 0.0
    for p in store.trainable():
        total += float(np.sum(p.grad * p.grad))
    total = float(np.sqrt(total))
    if total <= max_norm or total == 0.0:
        return 1.0
    scale = max_norm / total
    for p in store.trainable():
        p.grad *= scale
    return scale


class _RowTable:
    """Embedding-table view over rows already gathered for a graph."""

    def __init__(self, rows_by_id: dict[str, np.ndarray]):
        self._rows = rows_by_id

    def get(self, node_id: str) -> np.ndarray:
        return self._rows[node_id]


@dataclass
class _Batches:
    """Per-graph train-row indices, for loss graphs and full (eval) graphs."""

    eval_preps: list[PreparedGraph]
    loss_preps: list[PreparedGraph]
    train_rows: list[np.ndarray]


def _make_batches(
    prepared: Sequence[PreparedGraph], split: SplitSpec, inductive: bool
) -> _Batches:
    train_ids = set(split.train)
    loss_preps: list[PreparedGraph] = []
    rows: list[np.ndarray] = []
    any_train = False
    for prep in prepared:
        loss_prep = prep
        if inductive:
            keep = [pid for pid in prep.post_ids if pid in train_ids]
            if keep:
                graph = restrict_to_posts(prep.graph, keep)
                table = _RowTable(
                    {
                        node.id: prep.x_raw.value[i]
                        for i, node in enumerate(prep.graph.nodes)
                    }
                )
                labels = dict(zip(prep.post_ids, prep.labels.tolist()))
                loss_prep = prepare_graph(graph, labels, table)
        loss_preps.append(loss_prep)
        r = np.asarray(
            [i for i, pid in enumerate(loss_prep.post_ids) if pid in train_ids],
            dtype=np.int64,
        )
        rows.append(r)
        if r.size:
            any_train = True
        else:
            warnings.warn(
                f"topic {prep.topic_id}: no posts in the train fold; graph skipped",
                stacklevel=2,
            )
    if not any_train:
        raise ValidationError("no graph has any train-fold posts")
    return _Batches(list(prepared), loss_preps, rows)


def _fold_rows(prepared: Sequence[PreparedGraph], fold_ids: set[str]) -> list[np.ndarray]:
    return [
        np.asarray(
            [i for i, pid in enumerate(p.post_ids) if pid in fold_ids], dtype=np.int64
        )
        for p in prepared
    ]


def _controversy_score(
    probs_fn: Callable[[PreparedGraph], np.ndarray],
    prepared: Sequence[PreparedGraph],
    fold_rows: list[np.ndarray],
    metric: str,
) -> float | None:
    by_post: dict[str, tuple[int, int]] = {}
    for prep, rows in zip(prepared, fold_rows):
        if rows.size == 0:
            continue
        probs = probs_fn(prep)
        preds = probs.argmax(axis=1)
        for i in rows:
            by_post[prep.post_ids[i]] = (int(preds[i]), int(prep.labels[i]))
    if not by_post:
        return None
    pairs = [by_post[k] for k in sorted(by_post)]
    m = compute_metrics([p for p, _ in pairs], [l for _, l in pairs])
    return m.accuracy if metric == "accuracy" else m.macro_f1


def train_tpcgcn(
    prepared: Sequence[PreparedGraph], split: SplitSpec, config: TrainConfig
) -> tuple[TpcgcnModel, TrainHistory]:
    """Single-stage training; best epoch selected on the validation fold."""
    dropout = config.dropout if config.dropout is not None else 0.35
    raw_dim = prepared[0].x_raw.shape[1]
    shape = TpcgcnShape(
        raw_dim=raw_dim,
        reduced_dim=config.reduced_dim,
        hidden1=config.tpc_hidden1,
        hidden2=config.tpc_hidden2,
    )
    root = SeededRng(config.seed)
    model = TpcgcnModel.build(shape, root.spawn("init"), dropout=dropout)
    store = model.store
    batches = _make_batches(prepared, split, config.inductive)
    val_rows = _fold_rows(batches.eval_preps, set(split.val))
    adam = AdamState(store)
    history = TrainHistory()
    best_score, best_snap, best_epoch = -np.inf, None, None

    for epoch in range(1, config.epochs + 1):
        order = root.spawn(f"order:{epoch}").permutation(len(batches.loss_preps))
        drop_rng = root.spawn(f"dropout:{epoch}")
        loss_sum, n_sum = 0.0, 0
        for gi in order:
            rows = batches.train_rows[gi]
            if rows.size == 0:
                continue
            prep = batches.loss_preps[gi]
            out = tpcgcn_forward(prep, model, drop_rng, training=True)
            loss, _ = ad.softmax_cross_entropy(
                ad.take_rows(out.logits, rows), prep.labels[rows]
            )
            store.zero_grads()
            loss.backward()
            clip_gradients(store, config.grad_clip_norm)
            adam_step(
                store, adam, config.lr, config.adam_beta1, config.adam_beta2, config.adam_eps
            )
            loss_sum += float(loss.value[0, 0]) * rows.size
            n_sum += rows.size

        val_metric = _controversy_score(
            lambda p: tpcgcn_forward(p, model).probs,
            batches.eval_preps,
            val_rows,
            config.selection_metric,
        )
        history.records.append(
            EpochRecord(1, epoch, None, loss_sum / n_sum, None, val_metric)
        )
        score = val_metric if val_metric is not None else -np.inf
        if score > best_score or best_snap is None:
            best_score, best_snap, best_epoch = score, store.snapshot(), epoch

    store.restore(best_snap)
    history.best["stage1"] = {"epoch": best_epoch, "val_metric": _none_if_inf(best_score)}
    return model, history


def _none_if_inf(x: float) -> float | None:
    return None if not np.isfinite(x) else float(x)


def _topic_classes(
    prepared: Sequence[PreparedGraph], train_rows: list[np.ndarray]
) -> dict[str, int]:
    topics = sorted(
        prep.topic_id
        for prep, rows in zip(prepared, train_rows)
        if rows.size > 0
    )
    return {t: i for i, t in enumerate(topics)}


def _branch_losses(
    prep: PreparedGraph,
    rows: np.ndarray,
    branch: BranchModel,
    topic_class: int | None,
    rng: SeededRng | None,
    training: bool,
) -> tuple[ad.Tensor | None, ad.Tensor | None]:
    """(controversy loss, topic loss) over the given rows; None if undefined."""
    out = branch_forward(prep, branch, rng, training)
    l_c, _ = ad.softmax_cross_entropy(
        ad.take_rows(out.contro_logits, rows), prep.labels[rows]
    )
    l_t = None
    if topic_class is not None:
        l_t, _ = ad.softmax_cross_entropy(
            ad.take_rows(out.topic_logits, rows),
            np.full(rows.size, topic_class, dtype=np.int64),
        )
    return l_c, l_t


def _branch_val_losses(
    prepared: Sequence[PreparedGraph],
    val_rows: list[np.ndarray],
    branch: BranchModel,
    class_of: dict[str, int],
) -> tuple[float | None, float | None]:
    """(mean val controversy loss, mean val topic loss), dropout off."""
    c_sum, c_n, t_sum, t_n = 0.0, 0, 0.0, 0
    for prep, rows in zip(prepared, val_rows):
        if rows.size == 0:
            continue
        l_c, l_t = _branch_losses(
            prep, rows, branch, class_of.get(prep.topic_id), None, False
        )
        c_sum += float(l_c.value[0, 0]) * rows.size
        c_n += rows.size
        if l_t is not None:
            t_sum += float(l_t.value[0, 0]) * rows.size
            t_n += rows.size
    return (c_sum / c_n if c_n else None, t_sum / t_n if t_n else None)


def _train_branch_stage(
    stage: int,
    branch: BranchModel,
    batches: _Batches,
    val_rows: list[np.ndarray],
    class_of: dict[str, int],
    config: TrainConfig,
    root: SeededRng,
    history: TrainHistory,
) -> None:
    """Stages 1 and 2 of one branch; restores the branch's best parameters.

    Branch U's objective carries the opposite topic-loss sign from branch R
    in both stages; the applied topic gradient before clipping is the exact
    negation of what R's rule would produce for identical parameters.
    """
    store = branch.store
    sign = 1.0 if branch.branch_id == "R" else -1.0
    beta = config.topic_loss_weight
    n_epochs = config.stage_epochs[stage - 1]
    adam = AdamState(store)
    best_score, best_snap, best_epoch = -np.inf, None, None
    branch_names = branch.param_names()

    for epoch in range(1, n_epochs + 1):
        order = root.spawn(f"s{stage}:order:{epoch}").permutation(len(batches.loss_preps))
        drop_rng = root.spawn(f"s{stage}:dropout:{branch.branch_id}:{epoch}")
        c_sum, t_sum, n_sum = 0.0, 0.0, 0
        for gi in order:
            rows = batches.train_rows[gi]
            if rows.size == 0:
                continue
            prep = batches.loss_preps[gi]
            topic_class = class_of.get(prep.topic_id)
            if topic_class is None:
                continue
            l_c, l_t = _branch_losses(prep, rows, branch, topic_class, drop_rng, True)
            if stage == 1:
                loss = l_t if sign > 0 else ad.neg(l_t)
            else:
                loss = l_c
                if beta != 0.0:
                    loss = ad.add(loss, ad.mul_const(l_t, sign * beta))
            store.zero_grads()
            loss.backward()
            clip_gradients(store, config.grad_clip_norm)
            adam_step(
                store, adam, config.lr, config.adam_beta1, config.adam_beta2, config.adam_eps
            )
            c_sum += float(l_c.value[0, 0]) * rows.size
            t_sum += float(l_t.value[0, 0]) * rows.size
            n_sum += rows.size

        val_c, val_t = _branch_val_losses(batches.eval_preps, val_rows, branch, class_of)
        # In pure inter-topic splits the validation topics are outside the
        # topic-class set, so the topic loss falls back to the train fold.
        if stage == 1:
            basis = val_t if val_t is not None else (t_sum / n_sum if n_sum else None)
            score = None if basis is None else -sign * basis
        else:
            if val_c is None:
                score = None
            else:
                score = -(val_c + sign * beta * val_t) if val_t is not None else -val_c
        history.records.append(
            EpochRecord(
                stage,
                epoch,
                branch.branch_id,
                c_sum / n_sum if n_sum else None,
                t_sum / n_sum if n_sum else None,
                score,
            )
        )
        eff = score if score is not None else -np.inf
        if eff > best_score or best_snap is None:
            best_score = eff
            best_snap = {n: store[n].value.copy() for n in branch_names}
            best_epoch = epoch

    store.restore(best_snap)
    history.best[f"stage{stage}:{branch.branch_id}"] = {
        "epoch": best_epoch,
        "val_metric": _none_if_inf(best_score),
    }


def train_dtpcgcn(
    prepared: Sequence[PreparedGraph], split: SplitSpec, config: TrainConfig
) -> tuple[DtpcModel, TrainHistory]:
    """Three-stage disentangled training. Needs >= 2 topics in the train fold."""
    dropout = config.dropout if config.dropout is not None else 0.4
    batches = _make_batches(prepared, split, config.inductive)
    class_of = _topic_classes(batches.loss_preps, batches.train_rows)
    if len(class_of) < 2:
        raise ValidationError(
            "dtpcgcn needs at least 2 topics in the training fold for the "
            f"topic task, found {len(class_of)}"
        )
    raw_dim = prepared[0].x_raw.shape[1]
    shape = DtpcShape(
        raw_dim=raw_dim,
        n_topics=len(class_of),
        reduced_dim=config.reduced_dim,
        hidden1=config.dtpc_hidden1,
        hidden2=config.dtpc_hidden2,
        attn_dim=config.attn_dim,
    )
    root = SeededRng(config.seed)
    model = DtpcModel.build(shape, root.spawn("init"), dropout=dropout)
    store = model.store
    val_rows = _fold_rows(batches.eval_preps, set(split.val))
    history = TrainHistory()

    # Stages 1 and 2: branches train independently, R first for a fixed order.
    for stage in (1, 2):
        if stage == 2 and config.freeze_stage1_in_stage2:
            for bid in ("U", "R"):
                for part in ("reduction.", "gcn1.", "topic_head."):
                    store.freeze_prefix(f"{bid}.{part}")
        for bid in ("R", "U"):
            _train_branch_stage(
                stage,
                model.branch(bid),
                batches,
                val_rows,
                class_of,
                config,
                root.spawn(f"stage{stage}:{bid}"),
                history,
            )
        if stage == 2 and config.freeze_stage1_in_stage2:
            for bid in ("U", "R"):
                for part in ("reduction.", "gcn1.", "topic_head."):
                    store.freeze_prefix(f"{bid}.{part}", frozen=False)

    # Stage 3: freeze both branches, train attention + final head on L_c.
    store.freeze_prefix("U.")
    store.freeze_prefix("R.")
    adam = AdamState(store)
    best_score, best_snap, best_epoch = -np.inf, None, None
    for epoch in range(1, config.stage_epochs[2] + 1):
        order = root.spawn(f"s3:order:{epoch}").permutation(len(batches.loss_preps))
        drop_rng = root.spawn(f"s3:dropout:{epoch}")
        c_sum, n_sum = 0.0, 0
        for gi in order:
            rows = batches.train_rows[gi]
            if rows.size == 0:
                continue
            prep = batches.loss_preps[gi]
            out = dtpcgcn_forward(prep, model, drop_rng, training=True)
            loss, _ = ad.softmax_cross_entropy(
                ad.take_rows(out.logits, rows), prep.labels[rows]
            )
            store.zero_grads()
            loss.backward()
            clip_gradients(store, config.grad_clip_norm)
            adam_step(
                store, adam, config.lr, config.adam_beta1, config.adam_beta2, config.adam_eps
            )
            c_sum += float(loss.value[0, 0]) * rows.size
            n_sum += rows.size
        val_metric = _controversy_score(
            lambda p: dtpcgcn_forward(p, model).probs,
            batches.eval_preps,
            val_rows,
            config.selection_metric,
        )
        history.records.append(
            EpochRecord(3, epoch, None, c_sum / n_sum if n_sum else None, None, val_metric)
        )
        score = val_metric if val_metric is not None else -np.inf
        if score > best_score or best_snap is None:
            best_score, best_snap, best_epoch = score, store.snapshot(), epoch
    store.restore(best_snap)
    history.best["stage3"] = {"epoch": best_epoch, "val_metric": _none_if_inf(best_score)}
    return model, history


def train_single_branch(
    prepared: Sequence[PreparedGraph],
    split: SplitSpec,
    config: TrainConfig,
    branch_id: str,
) -> tuple[BranchModel, TrainHistory]:
    """Stages 1 and 2 for one branch alone; classifies via its controversy head."""
    dropout = config.dropout if config.dropout is not None else 0.4
    batches = _make_batches(prepared, split, config.inductive)
    class_of = _topic_classes(batches.loss_preps, batches.train_rows)
    if len(class_of) < 2:
        raise ValidationError(
            "branch training needs at least 2 topics in the training fold, "
            f"found {len(class_of)}"
        )
    shape = DtpcShape(
        raw_dim=prepared[0].x_raw.shape[1],
        n_topics=len(class_of),
        reduced_dim=config.reduced_dim,
        hidden1=config.dtpc_hidden1,
        hidden2=config.dtpc_hidden2,
        attn_dim=config.attn_dim,
    )
    root = SeededRng(config.seed)
    store = ParameterStore()
    BranchModel.build_params(store, branch_id, shape, root.spawn("init"))
    branch = BranchModel(store, branch_id, shape, dropout)
    val_rows = _fold_rows(batches.eval_preps, set(split.val))
    history = TrainHistory()
    for stage in (1, 2):
        _train_branch_stage(
            stage,
            branch,
            batches,
            val_rows,
            class_of,
            config,
            root.spawn(f"stage{stage}:{branch_id}"),
            history,
        )
    return branch, history
