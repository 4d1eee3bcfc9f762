"""Command-line surface: export a pool file, or build the bundled mock assets."""

from __future__ import annotations

import argparse
import sys

from .data import BridgeConfigError, BridgeError, make_mock_dataset
from .export import ExportConfig, export_pool
from .model import save_checkpoint


def _parse_class_map(text: str | None) -> dict[str, int]:
    if not text:
        return {}
    mapping = {}
    for part in text.split(","):
        if ":" not in part:
            raise BridgeConfigError(f"class map entries need NAME:ID, got {part!r}")
        name, cid = part.split(":", 1)
        mapping[name.strip()] = int(cid)
    return mapping


def cmd_export(args) -> int:
    cfg = ExportConfig(
        checkpoint=args.ckpt,
        data_dir=args.data,
        out_path=args.out,
        gradient_layer=args.layer,
        m_passes=args.m,
        dropout_rate=args.dropout,
        class_map=_parse_class_map(args.class_map),
        seed=args.seed,
    )
    summary = export_pool(cfg)
    print(
        f"exported {summary['records']} records ({summary['boxes']} boxes) "
        f"from {summary['frames']} frames -> {summary['out']}"
    )
    print(f"wrote layer metadata to {summary['meta']}")
    return 0


def cmd_make_mock(args) -> int:
    ckpt = save_checkpoint(args.ckpt, num_classes=args.classes, seed=args.seed)
    frames = make_mock_dataset(args.data, frames=args.frames, seed=args.seed)
    print(f"wrote mock checkpoint to {ckpt}")
    print(f"wrote {len(frames)} mock frames to {args.data}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="boxal-bridge",
        description="Export engine-compatible pool records from a torch detector.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("export", help="run the detector over a dataset and write a pool file")
    p.add_argument("--ckpt", required=True, help="detector checkpoint path")
    p.add_argument("--data", required=True, help="dataset directory of .npz frames")
    p.add_argument("--m", type=int, default=5, help="MC-dropout passes per frame")
    p.add_argument("--dropout", type=float, default=0.3)
    p.add_argument("--layer", required=True, help="named layer whose weight gradient is exported")
    p.add_argument("--class-map", dest="class_map",
                   help="NAME:ID pairs, comma separated (defaults to checkpoint order)")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True, help="pool JSONL output path")
    p.set_defaults(func=cmd_export)

    p = sub.add_parser("make-mock", help="write the bundled mock checkpoint and dataset")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--classes", type=int, default=3)
    p.add_argument("--frames", type=int, default=12)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_make_mock)
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except BridgeConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except BridgeError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return 3
    except OSError as exc:
        print(f"i/o error: {exc}", file=sys.stderr)
        return 4


if __name__ == "__main__":
    sys.exit(main())
