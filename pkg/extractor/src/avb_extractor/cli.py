"""CLI: extract embedding tables from audio, validate feature files."""

from __future__ import annotations

import argparse
import sys

from .backends import (
    EMOTION_MODEL_ID, ExtractorSpec, ModelFetchError, VARIANT_MODELS, make_backend,
)
from .extract import extract, validate_table


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="avb-extract",
        description="Pooled wav2vec 2.0 embeddings as avb feature tables.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("extract", help="extract a feature table from a directory of WAVs")
    group = p.add_mutually_exclusive_group(required=True)
    group.add_argument("--model-id", help="model hub identifier")
    group.add_argument("--variant", choices=sorted(VARIANT_MODELS),
                       help="published variant name (implies model id and logits)")
    p.add_argument("--audio", required=True, help="directory of .wav files")
    p.add_argument("--out", required=True, help="output feature file")
    p.add_argument("--emit-logits", action="store_true",
                   help="append the 3 affect logits (emotion model only)")
    p.add_argument("--binary", action="store_true", help="write AVBF binary instead of CSV")
    p.add_argument("--backend", choices=["hf", "stub"], default="hf",
                   help="stub runs offline with deterministic fake embeddings")

    p = sub.add_parser("validate", help="check a feature table")
    p.add_argument("path")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.command == "validate":
            rows, dims = validate_table(args.path)
            print(f"ok, {rows} rows, {dims} dims")
            return 0
        if args.variant:
            spec = ExtractorSpec.for_variant(args.variant)
        else:
            spec = ExtractorSpec(
                model_id=args.model_id,
                emit_logits=args.emit_logits,
            )
        backend = make_backend(spec, args.backend)
        n = extract(args.audio, spec, backend, args.out, binary=args.binary)
        print(
            f"wrote {n} rows x {spec.output_dims} dims to {args.out} "
            f"(model {spec.model_id}, revision {backend.revision})",
            file=sys.stderr,
        )
        return 0
    except ModelFetchError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except (ValueError, OSError, RuntimeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
