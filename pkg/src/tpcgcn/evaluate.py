"""Checkpoint evaluation, ablation orchestration, attention export."""

from __future__ import annotations

import json
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from tpcgcn.data import EmbeddingTable, SplitSpec, ThreadRecord
from tpcgcn.graph import AblationVariant, ValidationError
from tpcgcn.metrics import Metrics, compute_metrics, render_metrics_table
from tpcgcn.model import (
    BranchModel,
    DtpcModel,
    PreparedGraph,
    TpcgcnModel,
    branch_forward,
    dtpcgcn_forward,
    load_model_for_eval,
    tpcgcn_forward,
)
from tpcgcn.params import ParameterStore
from tpcgcn.pipeline import prepare_dataset
from tpcgcn.train import TrainConfig, train_dtpcgcn, train_single_branch, train_tpcgcn

__all__ = [
    "Metrics",
    "compute_metrics",
    "render_metrics_table",
    "AttentionRecord",
    "evaluate",
    "evaluate_store",
    "run_ablation",
    "export_attention",
    "ABLATION_NAMES",
]


def _model_probs(model, prep: PreparedGraph) -> np.ndarray:
    if isinstance(model, DtpcModel):
        return dtpcgcn_forward(prep, model).probs
    if isinstance(model, TpcgcnModel):
        return tpcgcn_forward(prep, model).probs
    if isinstance(model, BranchModel):
        out = branch_forward(prep, model)
        from tpcgcn.autodiff import softmax_rows

        return softmax_rows(out.contro_logits.value)
    raise TypeError(f"cannot evaluate {type(model).__name__}")


def evaluate(
    model, prepared: Sequence[PreparedGraph], fold_ids: Sequence[str]
) -> Metrics:
    """Deterministic metrics over the fold's posts (dropout off, argmax).

    Predictions are keyed by post id and sorted before scoring, so the
    result does not depend on graph iteration order.
    """
    fold = set(fold_ids)
    if not fold:
        raise ValidationError("cannot evaluate an empty fold")
    by_post: dict[str, tuple[int, int]] = {}
    for prep in prepared:
        wanted = [i for i, pid in enumerate(prep.post_ids) if pid in fold]
        if not wanted:
            continue
        probs = _model_probs(model, prep)
        preds = probs.argmax(axis=1)
        for i in wanted:
            by_post[prep.post_ids[i]] = (int(preds[i]), int(prep.labels[i]))
    missing = fold - set(by_post)
    if missing:
        raise ValidationError(
            f"fold posts missing from the dataset: {sorted(missing)[:5]}"
        )
    pairs = [by_post[k] for k in sorted(by_post)]
    return compute_metrics([p for p, _ in pairs], [l for _, l in pairs])


def evaluate_store(
    store: ParameterStore, prepared: Sequence[PreparedGraph], fold_ids: Sequence[str]
) -> Metrics:
    """Evaluate a loaded checkpoint; the model family is inferred from it."""
    return evaluate(load_model_for_eval(store), prepared, fold_ids)


ABLATION_NAMES = [v.value for v in AblationVariant] + ["u_only", "r_only"]


def run_ablation(
    variant_name: str,
    threads: Sequence[ThreadRecord],
    table: EmbeddingTable,
    split: SplitSpec,
    config: TrainConfig,
    fold: str = "test",
) -> tuple[Metrics, ParameterStore]:
    """Train the requested variant and score it on a fold.

    Graph/feature variants train the single-branch model on the ablated
    dataset; ``u_only``/``r_only`` train one disentangled branch through
    stages 1-2 and classify from its controversy head. The ``full``
    variant is exactly the baseline train-plus-evaluate under the same
    seed.
    """
    if variant_name in ("u_only", "r_only"):
        prepared = prepare_dataset(threads, table, AblationVariant.FULL)
        branch, _ = train_single_branch(
            prepared, split, config, "U" if variant_name == "u_only" else "R"
        )
        return evaluate(branch, prepared, split.fold(fold)), branch.store
    try:
        variant = AblationVariant(variant_name)
    except ValueError:
        raise ValidationError(
            f"unknown ablation variant {variant_name!r}; choose from {ABLATION_NAMES}"
        ) from None
    prepared = prepare_dataset(threads, table, variant, feature_seed=config.seed)
    model, _ = train_tpcgcn(prepared, split, config)
    return evaluate(model, prepared, split.fold(fold)), model.store


@dataclass(frozen=True)
class AttentionRecord:
    """Per-post branch weights from the fused model, for case studies."""

    post_id: str
    alpha_u: float
    alpha_r: float
    predicted: int
    label: int

    def to_json(self) -> str:
        return json.dumps(
            {
                "post_id": self.post_id,
                "alpha_u": self.alpha_u,
                "alpha_r": self.alpha_r,
                "predicted": self.predicted,
                "label": self.label,
            }
        )

    @classmethod
    def from_json(cls, line: str) -> "AttentionRecord":
        obj = json.loads(line)
        return cls(
            post_id=obj["post_id"],
            alpha_u=float(obj["alpha_u"]),
            alpha_r=float(obj["alpha_r"]),
            predicted=int(obj["predicted"]),
            label=int(obj["label"]),
        )


def export_attention(
    model: DtpcModel, prepared: Sequence[PreparedGraph], fold_ids: Sequence[str]
) -> list[AttentionRecord]:
    """One record per fold post with its (alpha_U, alpha_R) weights."""
    if not isinstance(model, DtpcModel):
        raise ValidationError("attention export needs a two-branch checkpoint")
    fold = set(fold_ids)
    records: dict[str, AttentionRecord] = {}
    for prep in prepared:
        wanted = [i for i, pid in enumerate(prep.post_ids) if pid in fold]
        if not wanted:
            continue
        out = dtpcgcn_forward(prep, model)
        preds = out.probs.argmax(axis=1)
        for i in wanted:
            pid = prep.post_ids[i]
            records[pid] = AttentionRecord(
                post_id=pid,
                alpha_u=float(out.alpha[i, 0]),
                alpha_r=float(out.alpha[i, 1]),
                predicted=int(preds[i]),
                label=int(prep.labels[i]),
            )
    return [records[k] for k in sorted(records)]


def save_attention(records: Sequence[AttentionRecord], path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for record in records:
            fh.write(record.to_json() + "\n")
