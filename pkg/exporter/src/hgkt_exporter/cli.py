"""CLI: export embeddings or verify an existing embedding file."""

from __future__ import annotations

import argparse
import json
import sys

from .encoders import EncoderError, make_encoder
from .export import ExportError, ExportJob, export, verify
from .format import FormatError


def build_parser():
    parser = argparse.ArgumentParser(prog="hgkt-export")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("export", help="encode exercise text to an embedding file")
    p.add_argument("--in", dest="exercises", required=True, help="exercises.jsonl")
    p.add_argument("--out", required=True, help="output embedding file")
    p.add_argument("--encoder", required=True,
                   help="HTTP endpoint URL, local model id, or 'hash'")
    p.add_argument("--dim", type=int, default=768)
    p.add_argument("--batch", type=int, default=32)
    p.add_argument("--pooling", choices=["mean", "cls"], default="mean",
                   help="pooling hint forwarded to the encoder (default mean)")

    p = sub.add_parser("verify", help="validate an embedding file against a corpus")
    p.add_argument("--emb", required=True)
    p.add_argument("--exercises", required=True)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.command == "export":
            encoder = make_encoder(args.encoder, args.dim, args.pooling)
            job = ExportJob(exercises_path=args.exercises, encoder=encoder,
                            output_path=args.out, expected_dim=args.dim,
                            batch_size=args.batch)
            result = export(job)
            print(json.dumps(result))
            return 0
        report = verify(args.emb, args.exercises)
        print(json.dumps(report, indent=2))
        return 0 if report["ok"] else 1
    except (ExportError, FormatError, EncoderError, FileNotFoundError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
