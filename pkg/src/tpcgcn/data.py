"""Thread records, embedding tables, and split generation.

File formats:

* Thread JSONL, one post per line::

    {"id", "topic_id", "text", "label", "created_at",
     "comments": [{"id", "parent_id"|null, "author", "text", "created_at",
                   "mentioned_user"?}]}

  ``parent_id: null`` means the comment replies directly to the post.

* Embedding JSONL: ``{"id": str, "vec": [floats]}`` per line.
* Embedding binary ("TPCE"): magic bytes, u16 version, u32 dim, then
  records of (u16 id byte-length, UTF-8 id, dim x 32-bit little-endian
  reals). Little-endian throughout.
* Split JSON: ``{"mode", "seed", "train": [ids], "val": [ids], "test": [ids]}``.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from enum import Enum
from typing import Iterable, Mapping, Sequence

import numpy as np

from tpcgcn.graph import NodeKind, ValidationError
from tpcgcn.rng import SeededRng, fnv1a64

EMBEDDING_MAGIC = b"TPCE"
EMBEDDING_VERSION = 1


@dataclass(frozen=True)
class Comment:
    id: str
    parent_id: str | None
    author: str
    text: str
    created_at: float
    mentioned_user: str | None = None


@dataclass(frozen=True)
class ThreadRecord:
    """One post with its comment list, topic, and controversy label."""

    post_id: str
    topic_id: str
    text: str
    label: int
    created_at: float
    comments: list[Comment] = field(default_factory=list)


def _require(obj: dict, key: str, lineno: int, kinds, what: str):
    if key not in obj:
        raise ValidationError(f"line {lineno}: {what} missing field '{key}'")
    value = obj[key]
    if not isinstance(value, kinds) or isinstance(value, bool):
        raise ValidationError(
            f"line {lineno}: {what} field '{key}' has invalid type "
            f"{type(value).__name__}"
        )
    return value


def load_threads(path) -> list[ThreadRecord]:
    """Parse and validate a thread JSONL file.

    Malformed lines are reported with their line number and field; duplicate
    post ids and labels outside {0, 1} are rejected.
    """
    records: list[ThreadRecord] = []
    seen_posts: set[str] = set()
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise ValidationError(f"line {lineno}: invalid JSON: {exc}") from exc
            post_id = _require(obj, "id", lineno, str, "post")
            topic_id = _require(obj, "topic_id", lineno, str, "post")
            text = _require(obj, "text", lineno, str, "post")
            label = _require(obj, "label", lineno, int, "post")
            created_at = float(_require(obj, "created_at", lineno, (int, float), "post"))
            if label not in (0, 1):
                raise ValidationError(
                    f"line {lineno}: field 'label' must be 0 or 1, got {label}"
                )
            if post_id in seen_posts:
                raise ValidationError(f"line {lineno}: duplicate post_id {post_id!r}")
            seen_posts.add(post_id)
            comments = []
            raw_comments = obj.get("comments", [])
            if not isinstance(raw_comments, list):
                raise ValidationError(f"line {lineno}: field 'comments' must be a list")
            seen_comments: set[str] = set()
            for raw in raw_comments:
                cid = _require(raw, "id", lineno, str, f"comment of {post_id}")
                if cid in seen_comments:
                    raise ValidationError(
                        f"line {lineno}: duplicate comment id {cid!r}"
                    )
                seen_comments.add(cid)
                parent = raw.get("parent_id")
                if parent is not None and not isinstance(parent, str):
                    raise ValidationError(
                        f"line {lineno}: comment '{cid}' parent_id must be a "
                        "string or null"
                    )
                comments.append(
                    Comment(
                        id=cid,
                        parent_id=parent,
                        author=_require(raw, "author", lineno, str, f"comment {cid}"),
                        text=_require(raw, "text", lineno, str, f"comment {cid}"),
                        created_at=float(
                            _require(raw, "created_at", lineno, (int, float), f"comment {cid}")
                        ),
                        mentioned_user=raw.get("mentioned_user"),
                    )
                )
            records.append(
                ThreadRecord(
                    post_id=post_id,
                    topic_id=topic_id,
                    text=text,
                    label=label,
                    created_at=created_at,
                    comments=comments,
                )
            )
    return records


def save_threads(records: Sequence[ThreadRecord], path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for r in records:
            obj = {
                "id": r.post_id,
                "topic_id": r.topic_id,
                "text": r.text,
                "label": r.label,
                "created_at": r.created_at,
                "comments": [
                    {
                        "id": c.id,
                        "parent_id": c.parent_id,
                        "author": c.author,
                        "text": c.text,
                        "created_at": c.created_at,
                        **(
                            {"mentioned_user": c.mentioned_user}
                            if c.mentioned_user is not None
                            else {}
                        ),
                    }
                    for c in r.comments
                ],
            }
            fh.write(json.dumps(obj, sort_keys=True) + "\n")


class EmbeddingTable:
    """Fixed-dimension float32 vectors keyed by node id."""

    def __init__(self, dim: int):
        if dim < 1:
            raise ValidationError(f"embedding dim must be >= 1, got {dim}")
        self.dim = int(dim)
        self.vectors: dict[str, np.ndarray] = {}

    def put(self, node_id: str, vec) -> None:
        arr = np.asarray(vec, dtype=np.float32).reshape(-1)
        if arr.shape[0] != self.dim:
            raise ValidationError(
                f"embedding for {node_id!r} has dim {arr.shape[0]}, table dim {self.dim}"
            )
        if node_id in self.vectors:
            raise ValidationError(f"duplicate embedding id {node_id!r}")
        self.vectors[node_id] = arr

    def get(self, node_id: str) -> np.ndarray:
        try:
            return self.vectors[node_id]
        except KeyError:
            raise ValidationError(f"no embedding for node id {node_id!r}") from None

    def __contains__(self, node_id: str) -> bool:
        return node_id in self.vectors

    def __len__(self) -> int:
        return len(self.vectors)

    def ids(self) -> list[str]:
        return list(self.vectors)

    def copy(self) -> "EmbeddingTable":
        out = EmbeddingTable(self.dim)
        out.vectors = {k: v.copy() for k, v in self.vectors.items()}
        return out


def load_embeddings(path) -> EmbeddingTable:
    """Load a JSONL or binary embedding file; the format is sniffed."""
    with open(path, "rb") as fh:
        magic = fh.read(4)
    if magic == EMBEDDING_MAGIC:
        return _load_embeddings_binary(path)
    return _load_embeddings_jsonl(path)


def _load_embeddings_jsonl(path) -> EmbeddingTable:
    table: EmbeddingTable | None = None
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise ValidationError(f"line {lineno}: invalid JSON: {exc}") from exc
            node_id = _require(obj, "id", lineno, str, "embedding")
            vec = _require(obj, "vec", lineno, list, "embedding")
            if table is None:
                table = EmbeddingTable(len(vec))
            if len(vec) != table.dim:
                raise ValidationError(
                    f"line {lineno}: embedding dim {len(vec)} != table dim {table.dim}"
                )
            table.put(node_id, vec)
    if table is None:
        raise ValidationError(f"{path}: empty embedding file")
    return table


def _load_embeddings_binary(path) -> EmbeddingTable:
    with open(path, "rb") as fh:
        magic = fh.read(4)
        if magic != EMBEDDING_MAGIC:
            raise ValidationError(f"not an embedding file (bad magic {magic!r})")
        (version,) = struct.unpack("<H", fh.read(2))
        if version != EMBEDDING_VERSION:
            raise ValidationError(f"unsupported embedding file version {version}")
        (dim,) = struct.unpack("<I", fh.read(4))
        table = EmbeddingTable(dim)
        while True:
            head = fh.read(2)
            if not head:
                break
            (id_len,) = struct.unpack("<H", head)
            node_id = fh.read(id_len).decode("utf-8")
            raw = fh.read(4 * dim)
            if len(raw) != 4 * dim:
                raise ValidationError(f"truncated embedding record for {node_id!r}")
            table.put(node_id, np.frombuffer(raw, dtype="<f4"))
    return table


def write_embeddings(table: EmbeddingTable, path, format: str = "binary") -> None:
    if format == "binary":
        with open(path, "wb") as fh:
            fh.write(EMBEDDING_MAGIC)
            fh.write(struct.pack("<H", EMBEDDING_VERSION))
            fh.write(struct.pack("<I", table.dim))
            for node_id, vec in table.vectors.items():
                encoded = node_id.encode("utf-8")
                fh.write(struct.pack("<H", len(encoded)))
                fh.write(encoded)
                fh.write(vec.astype("<f4").tobytes(order="C"))
    elif format == "jsonl":
        with open(path, "w", encoding="utf-8") as fh:
            for node_id, vec in table.vectors.items():
                fh.write(
                    json.dumps({"id": node_id, "vec": [float(x) for x in vec]}) + "\n"
                )
    else:
        raise ValueError(f"unknown embedding format {format!r}")


_TOKEN_SPLIT = None


def _tokens(text: str) -> list[str]:
    global _TOKEN_SPLIT
    if _TOKEN_SPLIT is None:
        import re

        _TOKEN_SPLIT = re.compile(r"\w+", re.UNICODE)
    return _TOKEN_SPLIT.findall(text.lower())


def hashed_bow_embed(text: str, dim: int, seed: int = 0) -> np.ndarray:
    """Signed feature-hashing bag of words, L2-normalized.

    Tokens are lowercased word-character runs; each token adds +-1 (by a
    sign hash) at a hashed index. Counts accumulate as integers, so the
    result depends only on the token multiset, never the order. The zero
    vector is returned for empty text.
    """
    if dim < 1:
        raise ValidationError(f"embedding dim must be >= 1, got {dim}")
    counts: dict[int, int] = {}
    salt = f"{seed}:".encode("utf-8")
    for token in _tokens(text):
        data = token.encode("utf-8")
        idx = fnv1a64(salt + b"idx:" + data) % dim
        sign = 1 if fnv1a64(salt + b"sgn:" + data) & 1 else -1
        counts[idx] = counts.get(idx, 0) + sign
    vec = np.zeros(dim, dtype=np.float64)
    for idx, count in counts.items():
        vec[idx] = float(count)
    norm = np.linalg.norm(vec)
    if norm > 0:
        vec /= norm
    return vec.astype(np.float32)


def bow_table_for_nodes(
    texts_by_id: Mapping[str, str], dim: int, seed: int = 0
) -> EmbeddingTable:
    """Hashed bag-of-words table covering the given node texts."""
    table = EmbeddingTable(dim)
    for node_id, text in texts_by_id.items():
        table.put(node_id, hashed_bow_embed(text, dim, seed))
    return table


def node_texts(threads: Sequence[ThreadRecord]) -> dict[str, str]:
    """Text per node id; a topic node's text is its topic id string."""
    texts: dict[str, str] = {}
    for record in threads:
        texts.setdefault(record.topic_id, record.topic_id)
        texts[record.post_id] = record.text
        for comment in record.comments:
            texts[comment.id] = comment.text
    return texts


class SplitMode(str, Enum):
    INTRA = "intra"
    INTER = "inter"


@dataclass
class SplitSpec:
    """Disjoint, exhaustive train/val/test assignment over post ids."""

    mode: SplitMode
    seed: int
    train: list[str]
    val: list[str]
    test: list[str]

    def fold(self, name: str) -> list[str]:
        try:
            return {"train": self.train, "val": self.val, "test": self.test}[name]
        except KeyError:
            raise ValueError(f"unknown fold {name!r}") from None

    def assignment(self) -> dict[str, str]:
        out = {}
        for name in ("train", "val", "test"):
            for pid in self.fold(name):
                out[pid] = name
        return out


def _largest_remainder(n: int, ratios: Sequence[int], unit_name: str) -> list[int]:
    """Proportional counts by largest remainder, each nonzero fold >= 1.

    Ties go to the earlier fold. When rounding leaves a nonzero-ratio fold
    empty, one unit moves from the largest fold; having fewer units than
    nonzero-ratio folds is an error.
    """
    nonzero = [i for i, r in enumerate(ratios) if r > 0]
    if n < len(nonzero):
        raise ValidationError(
            f"too few {unit_name} ({n}) to populate a fold with ratios {tuple(ratios)}"
        )
    total = sum(ratios)
    quotas = [n * r / total for r in ratios]
    counts = [int(q) for q in quotas]
    leftover = n - sum(counts)
    order = sorted(range(len(ratios)), key=lambda i: (-(quotas[i] - counts[i]), i))
    for i in order[:leftover]:
        counts[i] += 1
    for i in nonzero:
        if counts[i] == 0:
            donor = max(range(len(counts)), key=lambda j: (counts[j], -j))
            counts[donor] -= 1
            counts[i] += 1
    return counts


def make_split(
    records: Sequence[ThreadRecord],
    mode: SplitMode,
    ratios: tuple[int, int, int],
    seed: int,
) -> SplitSpec:
    """Seeded train/val/test split.

    Intra-topic: posts are shuffled and proportioned within each topic
    (largest-remainder rounding, ties to the earlier fold), then merged.
    Inter-topic: whole topics are assigned to folds the same way, so no
    topic ever spans folds.
    """
    if len(ratios) != 3 or any(r < 0 for r in ratios) or sum(ratios) == 0:
        raise ValidationError(f"ratios must be three non-negative integers, got {ratios}")
    root = SeededRng(seed)
    by_topic: dict[str, list[str]] = {}
    for r in records:
        by_topic.setdefault(r.topic_id, []).append(r.post_id)
    folds: dict[str, list[str]] = {"train": [], "val": [], "test": []}

    if mode is SplitMode.INTRA:
        for topic_id in sorted(by_topic):
            posts = root.spawn(f"topic:{topic_id}").shuffled(sorted(by_topic[topic_id]))
            counts = _largest_remainder(
                len(posts), ratios, f"posts in topic {topic_id}"
            )
            folds["train"].extend(posts[: counts[0]])
            folds["val"].extend(posts[counts[0] : counts[0] + counts[1]])
            folds["test"].extend(posts[counts[0] + counts[1] :])
    elif mode is SplitMode.INTER:
        topics = root.spawn("topics").shuffled(sorted(by_topic))
        counts = _largest_remainder(len(topics), ratios, "topics")
        groups = (
            topics[: counts[0]],
            topics[counts[0] : counts[0] + counts[1]],
            topics[counts[0] + counts[1] :],
        )
        for name, group in zip(("train", "val", "test"), groups):
            for topic_id in group:
                folds[name].extend(sorted(by_topic[topic_id]))
    else:
        raise ValidationError(f"unknown split mode {mode!r}")

    for name, ratio in zip(("train", "val", "test"), ratios):
        if ratio > 0 and not folds[name]:
            raise ValidationError(
                f"too few units to populate the {name} fold "
                f"(mode={mode.value}, ratios={ratios})"
            )
    return SplitSpec(mode=mode, seed=seed, **folds)


def save_split(split: SplitSpec, path) -> None:
    obj = {
        "mode": split.mode.value,
        "seed": split.seed,
        "train": split.train,
        "val": split.val,
        "test": split.test,
    }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True)
        fh.write("\n")


def load_split(path) -> SplitSpec:
    with open(path, "r", encoding="utf-8") as fh:
        obj = json.load(fh)
    try:
        return SplitSpec(
            mode=SplitMode(obj["mode"]),
            seed=int(obj["seed"]),
            train=list(obj["train"]),
            val=list(obj["val"]),
            test=list(obj["test"]),
        )
    except (KeyError, ValueError) as exc:
        raise ValidationError(f"{path}: invalid split file: {exc}") from exc


def randomize_features(
    table: EmbeddingTable,
    kinds: Iterable[NodeKind],
    seed: int,
    kind_of: Mapping[str, NodeKind],
) -> EmbeddingTable:
    """Replace vectors of the selected node kinds with uniform noise.

    Replacements are i.i.d. uniform(-a, a) with a = sqrt(6 / dim), drawn
    from a per-node substream so the result is independent of iteration
    order. Other vectors are returned untouched (bit-identical).
    """
    kinds = frozenset(kinds)
    if not kinds:
        raise ValidationError("randomize_features needs at least one node kind")
    bound = float(np.sqrt(6.0 / table.dim))
    root = SeededRng(seed)
    out = EmbeddingTable(table.dim)
    for node_id, vec in table.vectors.items():
        if kind_of.get(node_id) in kinds:
            child = root.spawn(f"feat:{node_id}")
            out.put(node_id, child.uniform_in(-bound, bound, table.dim))
        else:
            out.put(node_id, vec.copy())
    return out
