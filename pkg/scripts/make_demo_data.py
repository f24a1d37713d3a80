"""Write a small synthetic corpus so the CLI can be exercised end to end.

    python scripts/make_demo_data.py demo/
"""

import os
import sys

sys.path.insert(0, os.path.join(os.path.dirname(__file__), "..", "src"))

from pathlib import Path

from tpcgcn.data import save_threads, write_embeddings
from tpcgcn.synth import planted_corpus
from tpcgcn.train import TrainConfig


def main(out_dir: str = "demo") -> None:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    corpus = planted_corpus(
        n_topics=4,
        posts_per_topic=12,
        comments_per_post=3,
        dim=32,
        seed=0,
        label_signal=3.0,
        topic_signal=2.0,
        noise=0.5,
    )
    save_threads(corpus.threads, out / "threads.jsonl")
    write_embeddings(corpus.table, out / "embeddings.tpce", format="binary")
    TrainConfig(
        lr=0.02,
        epochs=60,
        seed=0,
        reduced_dim=32,
        tpc_hidden1=16,
        tpc_hidden2=2,
        dtpc_hidden1=8,
        dtpc_hidden2=4,
        attn_dim=4,
        stage_epochs=(30, 30, 30),
    ).to_json(out / "config.json")
    print(f"wrote {out}/threads.jsonl, {out}/embeddings.tpce, {out}/config.json")


if __name__ == "__main__":
    main(sys.argv[1] if len(sys.argv) > 1 else "demo")
