"""Command line for one-shot embedding extraction.

    tpcgcn-extract --threads threads.jsonl --model bert-base-uncased \
        --max-tokens 45 --pooling cls --out embeddings.tpce
"""

from __future__ import annotations

import argparse
import sys

from tpcgcn_extractor import __version__
from tpcgcn_extractor.extract import ExtractionError, ExtractorConfig, extract


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="tpcgcn-extract",
        description="Embed every node of a thread file with a frozen encoder",
    )
    parser.add_argument("--version", action="version", version=__version__)
    parser.add_argument("--threads", required=True, help="thread JSONL file")
    parser.add_argument(
        "--model",
        required=True,
        help="pretrained model name or local path, or 'hashed' for the "
        "dependency-free offline backend",
    )
    parser.add_argument("--max-tokens", type=int, default=45)
    parser.add_argument("--pooling", choices=["cls", "mean"], default="cls")
    parser.add_argument("--out", required=True)
    parser.add_argument("--format", choices=["binary", "jsonl"], default="binary")
    parser.add_argument("--topic-text", choices=["id", "posts"], default="id")
    parser.add_argument("--batch-size", type=int, default=32)
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        config = ExtractorConfig(
            model=args.model,
            max_tokens=args.max_tokens,
            pooling=args.pooling,
            output_format=args.format,
            topic_text=args.topic_text,
            batch_size=args.batch_size,
        )
        count = extract(args.threads, args.out, config)
    except ExtractionError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except RuntimeError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    print(f"{count} embeddings -> {args.out}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
