#!/usr/bin/env python3
"""Build a miniature mixture corpus end to end with the command-line tools.

Pipeline: synthesize source clips -> index -> split by uploader -> render a
room impulse response store -> mix dry and reverberant examples.
"""

import json
import tempfile
from pathlib import Path

from varisep.cli import main as cli

from synth import build_demo_corpus


def run(*argv) -> None:
    argv = [str(a) for a in argv]
    print(f"\n$ varisep {' '.join(argv)}")
    code = cli(argv)
    if code != 0:
        raise SystemExit(f"command failed with exit code {code}")


def main() -> None:
    work = Path(tempfile.mkdtemp(prefix="corpus-demo-"))
    corpus = build_demo_corpus(work / "clips")
    print(f"synthetic clip corpus at {corpus}")

    config = {
        "master_seed": 11,
        "examples_per_split": {"train": 4, "validation": 2, "eval": 2},
        "scene": {"sim": {"rir_length_s": 0.15}},
    }
    (work / "config.json").write_text(json.dumps(config, indent=2))

    run("index", corpus, "--out", work / "manifest.csv")
    run("split", "--manifest", work / "manifest.csv", "--out", work / "splits.json",
        "--targets", "18", "9", "9", "--seed", "0")
    run("rir", "--split", "train", "--config", work / "config.json",
        "--out", work / "rirs")
    run("mix", "--split", "train", "--mode", "dry",
        "--manifest", work / "manifest.csv", "--splits", work / "splits.json",
        "--config", work / "config.json", "--out", work / "corpus_dry")
    run("mix", "--split", "train", "--mode", "reverberant",
        "--manifest", work / "manifest.csv", "--splits", work / "splits.json",
        "--config", work / "config.json", "--out", work / "corpus_rev",
        "--rir-dir", work / "rirs")

    example = work / "corpus_dry" / "train" / "example0"
    spec = json.loads((example / "spec.json").read_text())
    print(f"\nfirst dry example ({spec['example_id']}):")
    for event in spec["events"]:
        print(f"  {event['role']:<10} {event['class_label']:<8} "
              f"start {event['start_time_s']:6.2f} s, "
              f"duration {event['segment_duration_s']:5.2f} s, "
              f"gain {event['gain_db']:+6.1f} dB")
    wavs = sorted(p.name for p in example.glob("*.wav"))
    print(f"  files: {', '.join(wavs)}")


if __name__ == "__main__":
    main()
