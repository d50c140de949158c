"""Command-line front end for corpus building and evaluation.

Subcommands: index, split, rir, mix, eval, loss-check. Exit codes: 0 on
success, 1 when input data fails to process, 2 for usage or configuration
errors. A JSON config file (--config) supplies PipelineConfig fields;
explicit flags override it.
"""

import argparse
import json
import sys
from pathlib import Path

from .losses import LossConfig
from .metrics import MetricConfig
from .pipeline import (
    PipelineConfig,
    evaluate_tree,
    generate_examples,
    generate_rirs,
    loss_check_tree,
)
from .scenes import (
    SPLIT_NAMES,
    SplitAssignment,
    index_corpus,
    load_corpus_manifest,
    partition_by_uploader,
    write_corpus_manifest,
)


class UsageError(Exception):
    """Bad invocation: missing inputs, malformed config, unknown names."""


def _load_pipeline_config(args) -> PipelineConfig:
    base = {}
    if getattr(args, "config", None):
        path = Path(args.config)
        if not path.exists():
            raise UsageError(f"config file not found: {path}")
        try:
            base = json.loads(path.read_text())
        except json.JSONDecodeError as exc:
            raise UsageError(f"config file {path} is not valid JSON: {exc}")
    for flag, key in (
        ("seed", "master_seed"),
        ("sample_rate", "sample_rate"),
        ("workers", "workers"),
    ):
        value = getattr(args, flag, None)
        if value is not None:
            base[key] = value
    try:
        return PipelineConfig.from_dict(base)
    except (TypeError, ValueError) as exc:
        raise UsageError(f"invalid configuration: {exc}")


def _require(path, what: str) -> Path:
    path = Path(path)
    if not path.exists():
        raise UsageError(f"{what} not found: {path}")
    return path


def _clips_for_split(args) -> list:
    manifest = _require(args.manifest, "corpus manifest")
    clips = load_corpus_manifest(manifest)
    if args.splits is None:
        return clips
    splits_path = _require(args.splits, "splits file")
    data = json.loads(splits_path.read_text())
    assignment = SplitAssignment(by_uploader=data["by_uploader"])
    missing = {c.uploader for c in clips} - set(assignment.by_uploader)
    if missing:
        raise UsageError(f"splits file missing uploaders: {sorted(missing)[:5]}")
    return assignment.partition(clips)[args.split]


def cmd_index(args) -> int:
    root = _require(args.corpus_root, "corpus directory")
    has_manifest = (root / "manifest.csv").exists() or (root / "manifest.jsonl").exists()
    if not has_manifest:
        if any(root.rglob("*.wav")):
            raise UsageError(f"no manifest.csv or manifest.jsonl under {root}")
        clips = []
    else:
        clips = index_corpus(
            root,
            single_label_only=not args.allow_multi_label,
            cc0_only=not args.all_licenses,
        )
    write_corpus_manifest(clips, args.out)
    hours = sum(c.duration_s for c in clips) / 3600.0
    print(f"{len(clips)} clips, ~{hours:.1f} h")
    return 0


def cmd_split(args) -> int:
    manifest = _require(args.manifest, "corpus manifest")
    clips = load_corpus_manifest(manifest)
    targets = tuple(args.targets) if args.targets else (7237, 2883, 2257)
    assignment = partition_by_uploader(clips, args.seed or 0, targets)
    per_split = assignment.partition(clips)
    counts = {name: len(per_split[name]) for name in SPLIT_NAMES}
    payload = {
        "schema_version": 1,
        "seed": args.seed or 0,
        "targets": list(targets),
        "by_uploader": assignment.by_uploader,
        "clip_counts": counts,
    }
    Path(args.out).write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n")
    print(" ".join(f"{name}={counts[name]}" for name in SPLIT_NAMES))
    return 0


def cmd_rir(args) -> int:
    config = _load_pipeline_config(args)
    out_dir = generate_rirs(config, args.split, count=args.count, rir_root=args.out)
    n_sidecars = len(list(out_dir.glob("rir_*.json")))
    n_wavs = len(list(out_dir.glob("rir_*.wav")))
    print(f"{n_sidecars} rooms, {n_wavs} impulse responses in {out_dir}")
    return 0


def cmd_mix(args) -> int:
    config = _load_pipeline_config(args)
    clips = _clips_for_split(args)
    if not clips:
        raise UsageError(f"no clips available for split {args.split!r}")
    split_dir = generate_examples(
        config,
        args.split,
        clips,
        mode=args.mode,
        count=args.count,
        output_root=args.out,
        rir_root=args.rir_dir,
    )
    total = args.count if args.count is not None else config.examples_for(args.split)
    print(f"{total} examples in {split_dir}")
    return 0


def cmd_eval(args) -> int:
    ref_root = _require(args.references, "reference tree")
    est_root = _require(args.estimates, "estimate tree")
    metric_config = MetricConfig(formulation=args.formulation)
    report, records, failures = evaluate_tree(
        ref_root, est_root, out_dir=args.out, metric_config=metric_config
    )
    print(report.render_table())
    print(f"{len(records)} examples scored, {len(failures)} failed")
    for line in failures[:10]:
        print(f"  failed: {line}", file=sys.stderr)
    return 1 if failures else 0


def cmd_loss_check(args) -> int:
    root = _require(args.directory, "loss-check directory")
    loss_config = LossConfig(snr_max=args.snr_max)
    records, failures = loss_check_tree(root, out_path=args.out, loss_config=loss_config)
    print(f"{len(records)} examples scored, {len(failures)} failed")
    for line in failures[:10]:
        print(f"  failed: {line}", file=sys.stderr)
    return 1 if failures else 0


def build_parser() -> argparse.ArgumentParser:
    shared = argparse.ArgumentParser(add_help=False)
    shared.add_argument("--seed", type=int, default=None, help="master seed (default 0)")
    shared.add_argument("--sample-rate", dest="sample_rate", type=int, default=None)
    shared.add_argument("--workers", type=int, default=None)
    shared.add_argument("--config", default=None, help="JSON file of pipeline settings")

    parser = argparse.ArgumentParser(
        prog="varisep",
        description="Build and evaluate variable-source separation corpora.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("index", parents=[shared], help="index a source corpus directory")
    p.add_argument("corpus_root", type=Path)
    p.add_argument("--out", required=True, help="output manifest (.csv or .jsonl)")
    p.add_argument("--allow-multi-label", action="store_true")
    p.add_argument("--all-licenses", action="store_true")
    p.set_defaults(func=cmd_index)

    p = sub.add_parser("split", parents=[shared], help="partition uploaders into train/validation/eval")
    p.add_argument("--manifest", required=True)
    p.add_argument("--out", required=True, help="output splits JSON")
    p.add_argument("--targets", type=int, nargs=3, metavar=("TRAIN", "VAL", "EVAL"))
    p.set_defaults(func=cmd_split)

    p = sub.add_parser("rir", parents=[shared], help="render the room impulse response store")
    p.add_argument("--split", required=True, choices=SPLIT_NAMES)
    p.add_argument("--count", type=int, default=None, help="rooms to render (default: per config)")
    p.add_argument("--out", default=None, help="RIR store root")
    p.set_defaults(func=cmd_rir)

    p = sub.add_parser("mix", parents=[shared], help="sample and render mixtures")
    p.add_argument("--split", required=True, choices=SPLIT_NAMES)
    p.add_argument("--mode", choices=("dry", "reverberant"), default="dry")
    p.add_argument("--manifest", required=True, help="corpus manifest from `index`")
    p.add_argument("--splits", default=None, help="splits JSON from `split`")
    p.add_argument("--count", type=int, default=None, help="examples to build (default: per config)")
    p.add_argument("--out", default=None, help="output corpus root")
    p.add_argument("--rir-dir", dest="rir_dir", default=None, help="RIR store root from `rir`")
    p.set_defaults(func=cmd_mix)

    p = sub.add_parser("eval", parents=[shared], help="score an estimate tree against references")
    p.add_argument("references")
    p.add_argument("estimates")
    p.add_argument("--out", default=None, help="directory for report.json and friends")
    p.add_argument("--formulation", choices=("scaled", "stabilized"), default="stabilized")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("loss-check", parents=[shared], help="run the training loss over WAV triples")
    p.add_argument("directory")
    p.add_argument("--out", default=None, help="output JSONL path")
    p.add_argument("--snr-max", dest="snr_max", type=float, default=30.0)
    p.set_defaults(func=cmd_loss_check)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # data/processing failure
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
