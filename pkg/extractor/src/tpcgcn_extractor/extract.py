"""Node-text collection, encoding, and embedding-file output.

The thread input and embedding outputs follow the graph package's public
formats exactly; this package shares no code with it, only the formats.

Thread JSONL, one post per line:
    {"id", "topic_id", "text", ..., "comments": [{"id", "text", ...}]}

Embedding JSONL: {"id": str, "vec": [floats]} per line.
Embedding binary ("TPCE"): magic, u16 version, u32 dim, then per record a
u16 id byte-length, the UTF-8 id, and dim little-endian float32 values.
"""

from __future__ import annotations

import json
import os
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from tpcgcn_extractor.backends import get_backend

EMBEDDING_MAGIC = b"TPCE"
EMBEDDING_VERSION = 1


class ExtractionError(ValueError):
    """Bad input file or unusable model."""


@dataclass
class ExtractorConfig:
    model: str
    max_tokens: int = 45
    pooling: str = "cls"  # or "mean"
    output_format: str = "binary"  # or "jsonl"
    topic_text: str = "id"  # or "posts": concatenated post snippets
    batch_size: int = 32

    def __post_init__(self):
        if self.max_tokens < 1:
            raise ExtractionError(f"max_tokens must be >= 1, got {self.max_tokens}")
        if self.pooling not in ("cls", "mean"):
            raise ExtractionError(f"pooling must be cls or mean, got {self.pooling!r}")
        if self.output_format not in ("binary", "jsonl"):
            raise ExtractionError(
                f"output format must be binary or jsonl, got {self.output_format!r}"
            )
        if self.topic_text not in ("id", "posts"):
            raise ExtractionError(
                f"topic_text must be id or posts, got {self.topic_text!r}"
            )


def collect_node_texts(threads_path, topic_text: str = "id") -> dict[str, str]:
    """One text per node id, in file order: topics, then posts and comments.

    A topic node's text defaults to the topic id string itself (typically
    the hashtag or board name); ``topic_text="posts"`` concatenates the
    topic's post texts instead.
    """
    texts: dict[str, str] = {}
    topic_posts: dict[str, list[str]] = {}
    try:
        fh = open(threads_path, "r", encoding="utf-8")
    except OSError as exc:
        raise ExtractionError(f"cannot read {threads_path}: {exc}") from exc
    with fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise ExtractionError(f"line {lineno}: invalid JSON: {exc}") from exc
            try:
                post_id = obj["id"]
                topic_id = obj["topic_id"]
                post_text = obj["text"]
            except KeyError as exc:
                raise ExtractionError(f"line {lineno}: missing field {exc}") from exc
            texts.setdefault(topic_id, topic_id)
            topic_posts.setdefault(topic_id, []).append(post_text)
            if post_id in texts:
                raise ExtractionError(f"line {lineno}: duplicate node id {post_id!r}")
            texts[post_id] = post_text
            for comment in obj.get("comments", []):
                cid = comment["id"]
                if cid in texts:
                    raise ExtractionError(f"line {lineno}: duplicate node id {cid!r}")
                texts[cid] = comment["text"]
    if topic_text == "posts":
        for topic_id, posts in topic_posts.items():
            texts[topic_id] = " ".join(posts[:16])
    return texts


def encode_texts(texts: dict[str, str], config: ExtractorConfig) -> dict[str, np.ndarray]:
    backend = get_backend(config.model)
    ids = list(texts)
    vectors: dict[str, np.ndarray] = {}
    for start in range(0, len(ids), config.batch_size):
        chunk = ids[start : start + config.batch_size]
        batch = backend.encode(
            [texts[i] for i in chunk], config.max_tokens, config.pooling
        )
        for node_id, vec in zip(chunk, batch):
            vectors[node_id] = np.asarray(vec, dtype=np.float32)
    dims = {v.shape[0] for v in vectors.values()}
    if len(dims) > 1:
        raise ExtractionError(f"backend produced mixed dimensions: {sorted(dims)}")
    return vectors


def write_embedding_file(vectors: dict[str, np.ndarray], path, output_format: str) -> None:
    """Write atomically: build the file next to the target, then rename."""
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    dim = next(iter(vectors.values())).shape[0]
    if output_format == "binary":
        with open(tmp, "wb") as fh:
            fh.write(EMBEDDING_MAGIC)
            fh.write(struct.pack("<H", EMBEDDING_VERSION))
            fh.write(struct.pack("<I", dim))
            for node_id, vec in vectors.items():
                encoded = node_id.encode("utf-8")
                fh.write(struct.pack("<H", len(encoded)))
                fh.write(encoded)
                fh.write(vec.astype("<f4").tobytes(order="C"))
    else:
        with open(tmp, "w", encoding="utf-8") as fh:
            for node_id, vec in vectors.items():
                fh.write(
                    json.dumps({"id": node_id, "vec": [float(x) for x in vec]}) + "\n"
                )
    os.replace(tmp, path)


def extract(threads_path, out_path, config: ExtractorConfig) -> int:
    """Embed every node of a thread file; returns the number of records."""
    texts = collect_node_texts(threads_path, config.topic_text)
    if not texts:
        raise ExtractionError(f"{threads_path}: no records")
    vectors = encode_texts(texts, config)
    write_embedding_file(vectors, out_path, config.output_format)
    return len(vectors)
