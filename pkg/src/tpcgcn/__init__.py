"""Controversy detection on topic-post-comment graphs.

Builds per-topic graphs linking a topic hub, its posts, and their reply
trees, then trains graph-convolutional classifiers over them: a single
two-layer model, and a disentangled two-branch variant whose branches are
pushed toward topic-related and topic-unrelated features and fused with
attention.
"""

__version__ = "0.1.0"

from tpcgcn.data import (
    Comment,
    EmbeddingTable,
    SplitMode,
    SplitSpec,
    ThreadRecord,
    load_embeddings,
    load_split,
    load_threads,
    make_split,
    save_split,
    save_threads,
    write_embeddings,
)
from tpcgcn.evaluate import (
    AttentionRecord,
    Metrics,
    compute_metrics,
    evaluate,
    evaluate_store,
    export_attention,
    run_ablation,
)
from tpcgcn.graph import (
    AblationVariant,
    NodeKind,
    TpcGraph,
    ValidationError,
    build_tpc_graph,
    normalize_adjacency,
)
from tpcgcn.model import BranchModel, DtpcModel, TpcgcnModel
from tpcgcn.params import load_checkpoint, save_checkpoint
from tpcgcn.pipeline import fallback_table, prepare_dataset, prepare_threads
from tpcgcn.rng import SeededRng
from tpcgcn.train import TrainConfig, TrainHistory, train_dtpcgcn, train_tpcgcn

__all__ = [
    "__version__",
    "AblationVariant",
    "AttentionRecord",
    "BranchModel",
    "Comment",
    "DtpcModel",
    "EmbeddingTable",
    "Metrics",
    "NodeKind",
    "SeededRng",
    "SplitMode",
    "SplitSpec",
    "ThreadRecord",
    "TpcGraph",
    "TpcgcnModel",
    "TrainConfig",
    "TrainHistory",
    "ValidationError",
    "build_tpc_graph",
    "compute_metrics",
    "evaluate",
    "evaluate_store",
    "export_attention",
    "fallback_table",
    "load_checkpoint",
    "load_embeddings",
    "load_split",
    "load_threads",
    "make_split",
    "normalize_adjacency",
    "prepare_dataset",
    "prepare_threads",
    "run_ablation",
    "save_checkpoint",
    "save_split",
    "save_threads",
    "train_dtpcgcn",
    "train_tpcgcn",
    "write_embeddings",
]
