"""Batch orchestration: reproducible corpus builds and tree-level scoring.

Every example is generated from a seed hashed out of (master seed, split
name, example index), so examples are independent: a worker pool can build
them in any order, with any parallelism, and the output tree is
byte-identical. Example directories are written to a temp name and renamed
into place, making interrupted runs resumable (a directory that exists is
complete); the split manifest is reassembled from the per-example records
on every run.

In reverberant mode, impulse responses are quantized to float32 before
convolution whether they were loaded from a RIR store or rendered in
memory, so mixes do not depend on whether the store was materialized.
"""

import json
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .audio import AudioBuffer, read_wav, write_wav
from .losses import LossConfig, pit_loss
from .metrics import (
    EvalReport,
    MetricConfig,
    aggregate_report,
    evaluate_example,
)
from .rooms import RoomRanges, SimConfig, image_method_rir, sample_room, save_room_rirs
from .scenes import (
    ClipLoader,
    MixtureSpec,
    SceneConfig,
    render_example,
    room_for_spec,
    sample_mixture_spec,
)
from .seeding import derive_seed

SCHEMA_VERSION = 1
DEFAULT_EXAMPLE_COUNTS = {"train": 20000, "validation": 1000, "eval": 1000}
MAX_SOURCE_SLOTS = 4  # rooms carry one source position per possible slot


@dataclass(frozen=True)
class PipelineConfig:
    """Everything a batch run needs: seed, counts, rate, paths, parallelism."""

    master_seed: int = 0
    examples_per_split: dict = field(default_factory=lambda: dict(DEFAULT_EXAMPLE_COUNTS))
    rooms_per_split: dict | None = None
    sample_rate: int = 16000
    workers: int = 1
    corpus_manifest: str | None = None
    splits_file: str | None = None
    output_root: str | None = None
    rir_root: str | None = None
    scene: dict = field(default_factory=dict)

    def __post_init__(self):
        for split, count in self.examples_per_split.items():
            if count <= 0:
                raise ValueError(f"example count for {split!r} must be positive, got {count}")
        if self.rooms_per_split is not None:
            # one room per example: a divergent room schedule breaks the
            # example <-> room pairing
            if dict(self.rooms_per_split) != dict(self.examples_per_split):
                raise ValueError("rooms_per_split must equal examples_per_split (one room per example)")
        if self.workers < 1:
            raise ValueError(f"workers must be >= 1, got {self.workers}")
        if self.sample_rate < 1:
            raise ValueError(f"sample_rate must be positive, got {self.sample_rate}")

    def examples_for(self, split: str) -> int:
        try:
            return self.examples_per_split[split]
        except KeyError:
            raise ValueError(f"unknown split {split!r}") from None

    def scene_config(self) -> SceneConfig:
        """Materialize scene parameters, applying any overrides from config."""
        overrides = dict(self.scene)
        if "room_ranges" in overrides:
            overrides["room_ranges"] = RoomRanges(**overrides["room_ranges"])
        if "sim" in overrides:
            overrides["sim"] = SimConfig.from_dict(overrides["sim"])
        if "foreground_snr_db" in overrides:
            overrides["foreground_snr_db"] = tuple(overrides["foreground_snr_db"])
        return SceneConfig(sample_rate=self.sample_rate, **overrides)

    def to_dict(self) -> dict:
        return {
            "schema_version": SCHEMA_VERSION,
            "master_seed": self.master_seed,
            "examples_per_split": dict(self.examples_per_split),
            "rooms_per_split": None if self.rooms_per_split is None else dict(self.rooms_per_split),
            "sample_rate": self.sample_rate,
            "workers": self.workers,
            "corpus_manifest": self.corpus_manifest,
            "splits_file": self.splits_file,
            "output_root": self.output_root,
            "rir_root": self.rir_root,
            "scene": dict(self.scene),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "PipelineConfig":
        d = dict(d)
        version = d.pop("schema_version", SCHEMA_VERSION)
        if version != SCHEMA_VERSION:
            raise ValueError(f"unsupported config schema_version {version}")
        known = {
            "master_seed",
            "examples_per_split",
            "rooms_per_split",
            "sample_rate",
            "workers",
            "corpus_manifest",
            "splits_file",
            "output_root",
            "rir_root",
            "scene",
        }
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown config fields: {sorted(unknown)}")
        return cls(**d)


def example_seed(master_seed: int, split: str, index: int) -> int:
    """Per-example seed: a hash of (master seed, split name, example index)."""
    return derive_seed(master_seed, "example", split, index)


def room_for_example(config: PipelineConfig, split: str, index: int):
    """The room paired with one example, with a position for every slot.

    Rooms always carry MAX_SOURCE_SLOTS positions so the RIR store can be
    built without knowing each mixture's source count; a mixture that uses
    fewer sources reads a prefix of the slots (position draws are
    sequential, so prefixes agree across source counts).
    """
    scene = config.scene_config()
    room_seed = derive_seed(example_seed(config.master_seed, split, index), "room")
    return sample_room(room_seed, n_sources=MAX_SOURCE_SLOTS, ranges=scene.room_ranges)


def _quantized_rirs(spec: MixtureSpec, scene: SceneConfig, rir_dir: Path | None):
    """RIRs for a spec at float32 precision, from disk when available."""
    store = {}
    missing = []
    if rir_dir is not None:
        for rid in spec.rir_ids:
            path = rir_dir / f"{rid}.wav"
            if path.exists():
                buf = read_wav(path)
                store[rid] = _rir_from_buffer(buf, rid)
            else:
                missing.append(rid)
    if rir_dir is None or missing:
        room = room_for_spec(spec, scene)
        for k, rid in enumerate(spec.rir_ids):
            if rid in store:
                continue
            rir = image_method_rir(room, k, scene.sim)
            rounded = AudioBuffer(
                rir.samples.samples.astype(np.float32).astype(np.float64),
                rir.samples.sample_rate,
            )
            store[rid] = _Rendered(rounded, k, rir.room_id, rir.max_order)
    return store


@dataclass(frozen=True, eq=False)
class _Rendered:
    samples: AudioBuffer
    source_index: int
    room_id: str
    max_order: int


def _rir_from_buffer(buf: AudioBuffer, rir_id: str) -> "_Rendered":
    room_id, _, slot = rir_id.removeprefix("rir_").rpartition("_s")
    return _Rendered(buf, int(slot), room_id, -1)


def _source_filename(event_index: int, clip_id: str) -> str:
    if event_index == 0:
        return f"background0_{clip_id}.wav"
    return f"foreground{event_index - 1}_{clip_id}.wav"


def build_example(
    config: PipelineConfig,
    split: str,
    index: int,
    clips,
    mode: str,
    split_dir: Path,
    loader: ClipLoader,
    rir_dir: Path | None = None,
) -> None:
    """Render one example into <split_dir>/example<index>, atomically."""
    scene = config.scene_config()
    seed = example_seed(config.master_seed, split, index)
    spec = sample_mixture_spec(
        seed, split, clips, scene, example_id=f"{split}_example{index}", loader=loader
    )
    store = _quantized_rirs(spec, scene, rir_dir) if mode == "reverberant" else None
    rendered = render_example(spec, clips, rir_store=store, mode=mode, config=scene, loader=loader)

    final_dir = split_dir / f"example{index}"
    tmp_dir = split_dir / f".tmp-example{index}-{os.getpid()}"
    tmp_dir.mkdir(parents=True, exist_ok=True)
    try:
        write_wav(rendered.mixture, tmp_dir / "mixture.wav", encoding="float32")
        for k, (event, source) in enumerate(zip(spec.events, rendered.sources)):
            write_wav(source, tmp_dir / _source_filename(k, event.clip_id), encoding="float32")
        record = {
            "schema_version": SCHEMA_VERSION,
            "mode": mode,
            "sample_rate": config.sample_rate,
            **spec.to_dict(),
        }
        (tmp_dir / "spec.json").write_text(json.dumps(record, sort_keys=True) + "\n")
        os.replace(tmp_dir, final_dir)
    finally:
        if tmp_dir.exists():
            for leftover in tmp_dir.iterdir():
                leftover.unlink()
            tmp_dir.rmdir()


def generate_examples(
    config: PipelineConfig,
    split: str,
    clips,
    mode: str = "dry",
    count: int | None = None,
    output_root=None,
    rir_root=None,
) -> Path:
    """Build a split of the corpus in the release directory layout.

    Skips example directories that already exist, then (re)writes the split
    manifest JSONL and example list from the per-example records.
    """
    if mode not in ("dry", "reverberant"):
        raise ValueError(f"mode must be 'dry' or 'reverberant', got {mode!r}")
    output_root = Path(output_root or config.output_root or ".")
    rir_dir = None
    if rir_root is not None or config.rir_root is not None:
        rir_dir = Path(rir_root or config.rir_root) / split
        if not rir_dir.exists():
            rir_dir = None
    count = config.examples_for(split) if count is None else count
    split_dir = output_root / split
    split_dir.mkdir(parents=True, exist_ok=True)
    loader = ClipLoader(sample_rate=config.sample_rate)
    clips = list(clips)

    pending = [i for i in range(count) if not (split_dir / f"example{i}").exists()]
    if pending:
        if config.workers == 1:
            for i in pending:
                build_example(config, split, i, clips, mode, split_dir, loader, rir_dir)
        else:
            with ThreadPoolExecutor(max_workers=config.workers) as pool:
                futures = [
                    pool.submit(
                        build_example, config, split, i, clips, mode, split_dir, loader, rir_dir
                    )
                    for i in pending
                ]
                for fut in futures:
                    fut.result()

    _write_split_manifest(output_root, split, count)
    return split_dir


def _write_split_manifest(output_root: Path, split: str, count: int) -> None:
    split_dir = output_root / split
    manifest_lines = []
    list_lines = []
    for i in range(count):
        example_dir = split_dir / f"example{i}"
        record_path = example_dir / "spec.json"
        if not record_path.exists():
            raise FileNotFoundError(f"example directory incomplete: {example_dir}")
        record = json.loads(record_path.read_text())
        manifest_lines.append(json.dumps(record, sort_keys=True))
        spec = MixtureSpec.from_dict({k: record[k] for k in
                                      ("example_id", "split", "events", "room_id", "rir_ids", "seed")})
        paths = [f"{split}/example{i}/mixture.wav"] + [
            f"{split}/example{i}/{_source_filename(k, ev.clip_id)}"
            for k, ev in enumerate(spec.events)
        ]
        list_lines.append("\t".join(paths))
    _atomic_write(output_root / f"{split}_manifest.jsonl", "\n".join(manifest_lines) + "\n")
    _atomic_write(output_root / f"{split}_example_list.txt", "\n".join(list_lines) + "\n")


def _atomic_write(path: Path, text: str) -> None:
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_text(text)
    os.replace(tmp, path)


def generate_rirs(
    config: PipelineConfig,
    split: str,
    count: int | None = None,
    rir_root=None,
) -> Path:
    """Write the RIR store for a split: per-room WAVs plus one sidecar each."""
    rir_root = Path(rir_root or config.rir_root or ".")
    out_dir = rir_root / split
    if count is None:
        rooms = config.rooms_per_split or config.examples_per_split
        if split not in rooms:
            raise ValueError(f"unknown split {split!r}")
        count = rooms[split]
    scene = config.scene_config()

    def build(i: int) -> None:
        room = room_for_example(config, split, i)
        sidecar = out_dir / f"rir_{room.room_id}.json"
        if sidecar.exists():
            return
        save_room_rirs(room, scene.sim, out_dir)

    if config.workers == 1:
        for i in range(count):
            build(i)
    else:
        with ThreadPoolExecutor(max_workers=config.workers) as pool:
            for fut in [pool.submit(build, i) for i in range(count)]:
                fut.result()
    return out_dir


def _zeros_like(n_samples: int, sample_rate: int) -> AudioBuffer:
    return AudioBuffer(np.zeros(n_samples), sample_rate)


def _reference_wavs(example_dir: Path) -> list[Path]:
    refs = [
        p
        for p in sorted(example_dir.glob("*.wav"))
        if p.name != "mixture.wav" and not p.name.startswith("estimate")
    ]
    return refs


def discover_example_dirs(root) -> list[tuple[str, Path]]:
    """(relative id, directory) for every example directory under root."""
    root = Path(root)
    found = []
    for mixture in sorted(root.rglob("mixture.wav")):
        rel = mixture.parent.relative_to(root)
        found.append((str(rel), mixture.parent))
    if not found:
        # estimate-only trees have no mixture.wav; key on directories of wavs
        dirs = sorted({p.parent for p in root.rglob("*.wav")})
        found = [(str(d.relative_to(root)), d) for d in dirs]
    return found


def evaluate_tree(
    ref_root,
    est_root,
    out_dir=None,
    metric_config: MetricConfig | None = None,
) -> tuple[EvalReport, list[dict], list[str]]:
    """Score an estimate tree against a reference tree.

    Both trees are keyed by example directory (the reference side holds
    mixture.wav plus the reference sources; the estimate side holds one WAV
    per output slot). Reference and estimate lists are zero-padded to a
    common slot count before alignment. Returns (report, per-example
    records, failure messages); when ``out_dir`` is given, also writes
    report.json, per_example.jsonl, confusion_matrix.csv, and
    input_si_snr.csv.
    """
    metric_config = metric_config or MetricConfig()
    ref_root, est_root = Path(ref_root), Path(est_root)
    examples = discover_example_dirs(ref_root)
    if not examples:
        raise FileNotFoundError(f"no example directories under {ref_root}")

    evals = []
    records = []
    failures = []
    for example_id, ref_dir in examples:
        est_dir = est_root / example_id
        try:
            mixture = read_wav(ref_dir / "mixture.wav")
            refs = [read_wav(p) for p in _reference_wavs(ref_dir)]
            est_paths = sorted(est_dir.glob("*.wav"))
            if not est_paths:
                raise FileNotFoundError(f"no estimate WAVs in {est_dir}")
            ests = [read_wav(p) for p in est_paths]
            slots = max(len(refs), len(ests))
            refs += [_zeros_like(len(mixture), mixture.sample_rate)] * (slots - len(refs))
            ests += [_zeros_like(len(mixture), mixture.sample_rate)] * (slots - len(ests))
            result = evaluate_example(refs, ests, mixture, metric_config)
        except Exception as exc:
            failures.append(f"{example_id}: {exc}")
            continue
        evals.append(result)
        records.append(
            {
                "example_id": example_id,
                "reference_count": result.reference_count,
                "estimate_count": result.estimate_count,
                "separation_class": result.separation_class,
                "pairing": [list(p) for p in result.pairing],
                "si_snr_db": list(result.si_snr_db),
                "si_snri_db": list(result.si_snri_db),
                "input_si_snr_db": list(result.input_si_snr_db),
            }
        )
    if not evals:
        raise ValueError(f"every example failed to evaluate; first: {failures[0]}")
    report = aggregate_report(evals)
    if out_dir is not None:
        _write_eval_outputs(Path(out_dir), report, records, metric_config)
    return report, records, failures


def _write_eval_outputs(out_dir: Path, report: EvalReport, records, metric_config: MetricConfig) -> None:
    out_dir.mkdir(parents=True, exist_ok=True)
    payload = {
        "schema_version": SCHEMA_VERSION,
        "formulation": metric_config.formulation,
        **report.to_dict(),
    }
    (out_dir / "report.json").write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n")
    with open(out_dir / "per_example.jsonl", "w") as fh:
        for record in records:
            fh.write(json.dumps(record, sort_keys=True) + "\n")
    matrix = report.confusion_matrix
    lines = ["ref_count\\est_count," + ",".join(str(j) for j in range(matrix.shape[1]))]
    for i in range(matrix.shape[0]):
        lines.append(f"{i}," + ",".join(str(int(v)) for v in matrix[i]))
    (out_dir / "confusion_matrix.csv").write_text("\n".join(lines) + "\n")
    rows = ["source_count,input_si_snr_db"]
    for count in sorted(report.input_si_snr):
        for value in report.input_si_snr[count]:
            rows.append(f"{count},{value!r}")
    (out_dir / "input_si_snr.csv").write_text("\n".join(rows) + "\n")


def loss_check_tree(root, out_path=None, loss_config: LossConfig | None = None) -> tuple[list[dict], list[str]]:
    """Run the permutation loss over a tree of (references, estimates, mixture).

    Each example directory holds mixture.wav, reference sources (any WAV
    not named mixture/estimate*), and estimate<k>.wav files. Emits one JSON
    record per example.
    """
    loss_config = loss_config or LossConfig()
    examples = discover_example_dirs(root)
    if not examples:
        raise FileNotFoundError(f"no example directories under {root}")
    records = []
    failures = []
    for example_id, example_dir in examples:
        try:
            mixture = read_wav(example_dir / "mixture.wav")
            refs = [read_wav(p) for p in _reference_wavs(example_dir)]
            est_paths = sorted(example_dir.glob("estimate*.wav"))
            if not est_paths:
                raise FileNotFoundError(f"no estimate*.wav in {example_dir}")
            ests = [read_wav(p) for p in est_paths]
            result = pit_loss(refs, ests, mixture, loss_config)
        except Exception as exc:
            failures.append(f"{example_id}: {exc}")
            continue
        records.append(
            {
                "example_id": example_id,
                "total_loss_db": result.total_loss,
                "mean_loss_db": result.mean_loss,
                "best_permutation": list(result.best_permutation),
                "per_pair_losses": [[kind, value] for kind, value in result.per_pair_losses],
            }
        )
    if out_path is not None:
        text = "".join(json.dumps(r, sort_keys=True) + "\n" for r in records)
        _atomic_write(Path(out_path), text)
    return records, failures
