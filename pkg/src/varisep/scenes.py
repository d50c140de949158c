"""Corpus indexing, mixture recipes, and 10-second scene rendering.

A source corpus is a directory of single-label WAV clips plus a manifest
(CSV or JSONL) naming each clip's class, uploader, and license. Clips are
partitioned into train/validation/eval by uploader, so no uploader's
material crosses splits. A mixture recipe draws 1-4 sources: always one
background (a clip longer than the canvas, active the whole time, starting
at a random offset into the file) and 0-3 foreground events (clips shorter
than the canvas, each placed uniformly so the event fits), with all class
labels pairwise distinct via rejection sampling. Recipes carry concrete
per-event gains and every seed needed to re-render bit-exactly.

Level calibration is not prescribed anywhere authoritative: by default the
background is peak-normalized to -25 dBFS and each foreground is placed at
a uniform [-5, +25] dB SNR relative to the background RMS. Both knobs are
configuration, not protocol.
"""

import csv
import json
import math
import threading
import warnings
from collections import OrderedDict
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .audio import AudioBuffer, probe_wav, read_wav
from .rooms import Rir, RoomRanges, SimConfig, image_method_rir, render_reverberant, rir_basename, sample_room
from .seeding import derive_seed

SPLIT_NAMES = ("train", "validation", "eval")

# separators that mark multi-label class fields in a manifest
_LABEL_SEPARATORS = (";", ",")


class SceneSamplingError(RuntimeError):
    """Mixture sampling could not satisfy its constraints."""


@dataclass(frozen=True)
class CorpusClip:
    """One indexed source file."""

    id: str
    path: str
    class_label: str
    uploader: str
    duration_s: float
    license: str

    def __post_init__(self):
        if self.duration_s <= 0:
            raise ValueError(f"clip {self.id}: duration must be positive")


def read_corpus_manifest(path) -> list[dict]:
    """Rows of a corpus manifest; format chosen by extension (.csv/.jsonl)."""
    path = Path(path)
    rows: list[dict] = []
    if path.suffix == ".csv":
        with open(path, newline="") as fh:
            for row in csv.DictReader(fh):
                rows.append(row)
    elif path.suffix == ".jsonl":
        with open(path) as fh:
            for line in fh:
                line = line.strip()
                if line:
                    rows.append(json.loads(line))
    else:
        raise ValueError(f"unrecognized manifest format: {path.name} (use .csv or .jsonl)")
    required = {"id", "path", "class_label", "uploader", "license"}
    for row in rows:
        missing = required - {k for k, v in row.items() if v is not None}
        if missing:
            raise ValueError(f"manifest row {row.get('id', row)}: missing fields {sorted(missing)}")
    return rows


def index_corpus(
    root,
    manifest_path=None,
    single_label_only: bool = True,
    cc0_only: bool = True,
) -> list[CorpusClip]:
    """Build the clip index for a corpus directory.

    Durations come from the WAV headers, not the manifest. Multi-label rows
    and non-CC0 rows are dropped when the respective filter is on.
    Unreadable files are skipped with a warning; WAV files present under
    ``root`` but absent from the manifest are an error.
    """
    root = Path(root)
    if manifest_path is None:
        candidates = [root / "manifest.csv", root / "manifest.jsonl"]
        manifest_path = next((c for c in candidates if c.exists()), None)
        if manifest_path is None:
            raise FileNotFoundError(f"no manifest.csv or manifest.jsonl under {root}")
    rows = read_corpus_manifest(manifest_path)

    listed = {str((root / row["path"]).resolve()) for row in rows}
    stray = [
        str(p)
        for p in sorted(root.rglob("*.wav"))
        if str(p.resolve()) not in listed
    ]
    if stray:
        raise ValueError(f"{len(stray)} WAV file(s) missing from the manifest, e.g. {stray[0]}")

    clips: list[CorpusClip] = []
    skipped_unreadable = 0
    for row in rows:
        label = str(row["class_label"])
        if single_label_only and any(sep in label for sep in _LABEL_SEPARATORS):
            continue
        if cc0_only and not str(row["license"]).lower().startswith("cc0"):
            continue
        path = root / row["path"]
        try:
            info = probe_wav(path)
        except FileNotFoundError:
            raise
        except Exception as exc:
            skipped_unreadable += 1
            warnings.warn(f"skipping unreadable clip {path}: {exc}")
            continue
        clips.append(
            CorpusClip(
                id=str(row["id"]),
                path=str(path),
                class_label=label,
                uploader=str(row["uploader"]),
                duration_s=info.n_frames / info.sample_rate,
                license=str(row["license"]),
            )
        )
    if skipped_unreadable:
        warnings.warn(f"index_corpus: skipped {skipped_unreadable} unreadable file(s)")
    return clips


def write_corpus_manifest(clips, path, relative_to=None) -> None:
    """Write the clip index in the canonical manifest format (.csv/.jsonl).

    Paths are stored relative to ``relative_to`` (default: the manifest's
    directory) so the corpus can be moved as a unit.
    """
    path = Path(path)
    base = Path(relative_to) if relative_to is not None else path.parent
    rows = []
    for clip in clips:
        try:
            rel = str(Path(clip.path).resolve().relative_to(base.resolve()))
        except ValueError:
            rel = str(Path(clip.path))
        rows.append(
            {
                "id": clip.id,
                "path": rel,
                "class_label": clip.class_label,
                "uploader": clip.uploader,
                "duration_s": clip.duration_s,
                "license": clip.license,
            }
        )
    if path.suffix == ".csv":
        with open(path, "w", newline="") as fh:
            writer = csv.DictWriter(
                fh, fieldnames=["id", "path", "class_label", "uploader", "duration_s", "license"]
            )
            writer.writeheader()
            writer.writerows(rows)
    elif path.suffix == ".jsonl":
        with open(path, "w") as fh:
            for row in rows:
                fh.write(json.dumps(row, sort_keys=True) + "\n")
    else:
        raise ValueError(f"unrecognized manifest format: {path.name} (use .csv or .jsonl)")


def load_corpus_manifest(path) -> list[CorpusClip]:
    """Read a previously written manifest back into clips (no file probing)."""
    path = Path(path)
    base = path.parent
    clips = []
    for row in read_corpus_manifest(path):
        clip_path = Path(row["path"])
        if not clip_path.is_absolute():
            clip_path = base / clip_path
        clips.append(
            CorpusClip(
                id=str(row["id"]),
                path=str(clip_path),
                class_label=str(row["class_label"]),
                uploader=str(row["uploader"]),
                duration_s=float(row["duration_s"]),
                license=str(row["license"]),
            )
        )
    return clips


@dataclass(frozen=True, eq=False)
class SplitAssignment:
    """Uploader -> split mapping; whole uploaders, never divided."""

    by_uploader: dict

    def split_of(self, uploader: str) -> str:
        return self.by_uploader[uploader]

    def partition(self, clips) -> dict[str, list[CorpusClip]]:
        out: dict[str, list[CorpusClip]] = {name: [] for name in SPLIT_NAMES}
        for clip in clips:
            out[self.by_uploader[clip.uploader]].append(clip)
        return out


def partition_by_uploader(clips, rng_seed: int, targets=(7237, 2883, 2257)) -> SplitAssignment:
    """Assign whole uploaders to train/validation/eval near target clip counts.

    ``targets`` are clip counts (or proportions, if they sum to <= 1.5) for
    (train, validation, eval). Uploaders are taken largest-first with a
    seeded random tie order, each going to the split furthest below its
    target. Unreachable targets degrade to best effort with a warning.
    """
    clips = list(clips)
    if len(targets) != len(SPLIT_NAMES):
        raise ValueError(f"need {len(SPLIT_NAMES)} targets, got {len(targets)}")
    total = len(clips)
    if total == 0:
        raise ValueError("cannot partition an empty corpus")
    if sum(targets) <= 1.5:
        goals = [t * total for t in targets]
    else:
        scale = total / sum(targets)
        goals = [t * scale for t in targets]

    sizes: dict[str, int] = {}
    for clip in clips:
        sizes[clip.uploader] = sizes.get(clip.uploader, 0) + 1
    uploaders = sorted(sizes)
    if len(uploaders) < 3:
        warnings.warn(
            f"only {len(uploaders)} uploader(s): some splits will be empty"
        )
    rng = np.random.default_rng(derive_seed(rng_seed, "uploader-split"))
    shuffled = [uploaders[i] for i in rng.permutation(len(uploaders))]
    shuffled.sort(key=lambda u: -sizes[u])  # stable: ties keep shuffled order

    deficits = list(goals)
    assignment: dict[str, str] = {}
    for uploader in shuffled:
        pick = max(range(len(SPLIT_NAMES)), key=lambda i: deficits[i])
        assignment[uploader] = SPLIT_NAMES[pick]
        deficits[pick] -= sizes[uploader]

    worst = max(abs(d) for d in deficits)
    if worst > max(0.02 * total, float(max(sizes.values()))):
        warnings.warn(
            f"uploader partition misses targets by up to {worst:.0f} clips "
            "(uploaders are atomic)"
        )
    return SplitAssignment(by_uploader=assignment)


@dataclass(frozen=True)
class SourceEvent:
    """One source placed on the canvas.

    Backgrounds start at 0 and span the whole canvas, reading a segment
    from a longer file; foregrounds use their entire (shorter) file and
    start wherever the event still fits.
    """

    clip_id: str
    role: str  # "background" | "foreground"
    start_time_s: float
    segment_offset_s: float
    segment_duration_s: float
    gain_db: float
    class_label: str

    def __post_init__(self):
        if self.role not in ("background", "foreground"):
            raise ValueError(f"unknown event role {self.role!r}")
        if self.role == "background" and self.start_time_s != 0.0:
            raise ValueError("background events start at time 0")
        if self.start_time_s < 0 or self.segment_offset_s < 0 or self.segment_duration_s <= 0:
            raise ValueError("event timing fields must be non-negative (duration positive)")

    def to_dict(self) -> dict:
        return {
            "clip_id": self.clip_id,
            "role": self.role,
            "start_time_s": self.start_time_s,
            "segment_offset_s": self.segment_offset_s,
            "segment_duration_s": self.segment_duration_s,
            "gain_db": self.gain_db,
            "class_label": self.class_label,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "SourceEvent":
        return cls(**d)


@dataclass(frozen=True)
class MixtureSpec:
    """Complete recipe for one example; self-sufficient for re-rendering."""

    example_id: str
    split: str
    events: tuple[SourceEvent, ...]
    room_id: str
    rir_ids: tuple[str, ...]
    seed: int

    def __post_init__(self):
        if not 1 <= len(self.events) <= 4:
            raise ValueError(f"need 1-4 events, got {len(self.events)}")
        roles = [e.role for e in self.events]
        if roles.count("background") != 1 or roles[0] != "background":
            raise ValueError("exactly one background event required, listed first")
        labels = [e.class_label for e in self.events]
        if len(set(labels)) != len(labels):
            raise ValueError(f"class labels must be pairwise distinct: {labels}")
        if len(self.rir_ids) != len(self.events):
            raise ValueError("one RIR id per event required")

    @property
    def n_sources(self) -> int:
        return len(self.events)

    def to_dict(self) -> dict:
        return {
            "example_id": self.example_id,
            "split": self.split,
            "events": [e.to_dict() for e in self.events],
            "room_id": self.room_id,
            "rir_ids": list(self.rir_ids),
            "seed": self.seed,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "MixtureSpec":
        return cls(
            example_id=d["example_id"],
            split=d["split"],
            events=tuple(SourceEvent.from_dict(e) for e in d["events"]),
            room_id=d["room_id"],
            rir_ids=tuple(d["rir_ids"]),
            seed=int(d["seed"]),
        )


@dataclass(frozen=True)
class SceneConfig:
    """Scene-synthesis parameters (canvas, counts, levels, room physics)."""

    canvas_s: float = 10.0
    sample_rate: int = 16000
    min_sources: int = 1
    max_sources: int = 4
    clip_retry_cap: int = 100
    spec_retry_cap: int = 100
    background_peak_dbfs: float = -25.0
    foreground_snr_db: tuple[float, float] = (-5.0, 25.0)
    room_ranges: RoomRanges = RoomRanges()
    sim: SimConfig = SimConfig()

    def __post_init__(self):
        if self.canvas_s <= 0 or self.sample_rate < 1:
            raise ValueError("canvas_s and sample_rate must be positive")
        if not 1 <= self.min_sources <= self.max_sources <= 4:
            raise ValueError("source counts must satisfy 1 <= min <= max <= 4")

    @property
    def canvas_samples(self) -> int:
        return int(round(self.canvas_s * self.sample_rate))


class ClipLoader:
    """Read-through cache for clip audio and level statistics.

    Safe to share across render workers; buffers are immutable so cache
    hits can be handed out without copying.
    """

    def __init__(self, sample_rate: int | None = None, capacity: int = 64):
        self.sample_rate = sample_rate
        self.capacity = capacity
        self._audio: OrderedDict[str, AudioBuffer] = OrderedDict()
        self._stats: dict[str, tuple[float, float]] = {}
        self._lock = threading.Lock()

    def load(self, clip: CorpusClip) -> AudioBuffer:
        with self._lock:
            cached = self._audio.get(clip.id)
            if cached is not None:
                self._audio.move_to_end(clip.id)
                return cached
        buf = read_wav(clip.path)
        if self.sample_rate is not None and buf.sample_rate != self.sample_rate:
            raise ValueError(
                f"clip {clip.id} is {buf.sample_rate} Hz, corpus expects {self.sample_rate} Hz"
            )
        with self._lock:
            self._audio[clip.id] = buf
            if len(self._audio) > self.capacity:
                self._audio.popitem(last=False)
        return buf

    def stats(self, clip: CorpusClip) -> tuple[float, float]:
        """(peak dBFS, RMS dBFS) of the whole file; -inf for silent clips."""
        with self._lock:
            cached = self._stats.get(clip.id)
        if cached is not None:
            return cached
        x = self.load(clip).samples
        peak = float(np.max(np.abs(x))) if x.size else 0.0
        rms_sq = float(np.mean(x * x)) if x.size else 0.0
        peak_db = 20.0 * math.log10(peak) if peak > 0 else -math.inf
        rms_db = 10.0 * math.log10(rms_sq) if rms_sq > 0 else -math.inf
        with self._lock:
            self._stats[clip.id] = (peak_db, rms_db)
        return (peak_db, rms_db)


def _pick_with_distinct_label(rng, pool, used_labels, cap: int, split: str, role: str) -> CorpusClip:
    if not pool:
        raise SceneSamplingError(f"split {split!r} has no eligible {role} clips")
    for _ in range(cap):
        clip = pool[int(rng.integers(len(pool)))]
        if clip.class_label not in used_labels:
            return clip
    raise SceneSamplingError(
        f"split {split!r}: no {role} clip with a fresh class label after {cap} tries"
    )


def sample_mixture_spec(
    rng_seed: int,
    split: str,
    index,
    config: SceneConfig | None = None,
    example_id: str | None = None,
    loader: ClipLoader | None = None,
) -> MixtureSpec:
    """Draw one mixture recipe from a split's clip index.

    The source count is uniform on {min..max}; the background comes from
    clips longer than the canvas (uniform segment offset), each foreground
    from clips shorter than the canvas (uniform placement). A clip whose
    class label collides is redrawn up to ``clip_retry_cap`` times, after
    which the whole draw restarts with a fresh count.
    """
    config = config or SceneConfig()
    loader = loader or ClipLoader(sample_rate=config.sample_rate)
    rng = np.random.default_rng(derive_seed(rng_seed, "mixture-spec"))
    bg_pool = [c for c in index if c.duration_s > config.canvas_s]
    fg_pool = [c for c in index if c.duration_s < config.canvas_s]
    if not bg_pool:
        raise SceneSamplingError(f"split {split!r} has no clip longer than {config.canvas_s} s")

    last_error: SceneSamplingError | None = None
    for _ in range(config.spec_retry_cap):
        count = int(rng.integers(config.min_sources, config.max_sources + 1))
        try:
            events = _draw_events(rng, count, bg_pool, fg_pool, config, loader, split)
        except SceneSamplingError as exc:
            last_error = exc
            continue
        room_seed = derive_seed(rng_seed, "room")
        room_id = f"{room_seed & 0xFFFFFFFFFFFFFFFF:016x}"
        return MixtureSpec(
            example_id=example_id or f"{split}_{rng_seed & 0xFFFFFFFFFFFFFFFF:016x}",
            split=split,
            events=tuple(events),
            room_id=room_id,
            rir_ids=tuple(rir_basename(room_id, k) for k in range(count)),
            seed=rng_seed,
        )
    raise SceneSamplingError(
        f"split {split!r}: gave up after {config.spec_retry_cap} draws ({last_error})"
    )


def _draw_events(rng, count, bg_pool, fg_pool, config, loader, split) -> list[SourceEvent]:
    used: set[str] = set()
    bg_clip = _pick_with_distinct_label(rng, bg_pool, used, config.clip_retry_cap, split, "background")
    used.add(bg_clip.class_label)
    offset = float(rng.uniform(0.0, bg_clip.duration_s - config.canvas_s))
    peak_db, rms_db = loader.stats(bg_clip)
    bg_gain_db = config.background_peak_dbfs - peak_db if math.isfinite(peak_db) else 0.0
    bg_level_db = rms_db + bg_gain_db if math.isfinite(rms_db) else config.background_peak_dbfs
    events = [
        SourceEvent(
            clip_id=bg_clip.id,
            role="background",
            start_time_s=0.0,
            segment_offset_s=offset,
            segment_duration_s=config.canvas_s,
            gain_db=bg_gain_db,
            class_label=bg_clip.class_label,
        )
    ]
    for _ in range(count - 1):
        fg_clip = _pick_with_distinct_label(rng, fg_pool, used, config.clip_retry_cap, split, "foreground")
        used.add(fg_clip.class_label)
        start = float(rng.uniform(0.0, config.canvas_s - fg_clip.duration_s))
        snr_db = float(rng.uniform(*config.foreground_snr_db))
        _, fg_rms_db = loader.stats(fg_clip)
        gain_db = bg_level_db + snr_db - fg_rms_db if math.isfinite(fg_rms_db) else 0.0
        events.append(
            SourceEvent(
                clip_id=fg_clip.id,
                role="foreground",
                start_time_s=start,
                segment_offset_s=0.0,
                segment_duration_s=fg_clip.duration_s,
                gain_db=gain_db,
                class_label=fg_clip.class_label,
            )
        )
    return events


def room_for_spec(spec: MixtureSpec, config: SceneConfig | None = None):
    """Re-derive the example's room from its seed (pure, no stored state)."""
    config = config or SceneConfig()
    room_seed = derive_seed(spec.seed, "room")
    room = sample_room(room_seed, n_sources=spec.n_sources, ranges=config.room_ranges)
    if room.room_id != spec.room_id:
        raise ValueError(
            f"room id mismatch for {spec.example_id}: spec says {spec.room_id}, "
            f"derived {room.room_id}"
        )
    return room


def rirs_for_spec(spec: MixtureSpec, config: SceneConfig | None = None) -> dict[str, Rir]:
    """Render every impulse response a MixtureSpec references, keyed by RIR id."""
    config = config or SceneConfig()
    room = room_for_spec(spec, config)
    return {
        spec.rir_ids[k]: image_method_rir(room, k, config.sim)
        for k in range(spec.n_sources)
    }


@dataclass(frozen=True, eq=False)
class RenderedExample:
    """Per-source waveforms plus their exact sum."""

    spec: MixtureSpec
    sources: tuple[AudioBuffer, ...]
    mixture: AudioBuffer


def render_example(
    spec: MixtureSpec,
    index,
    rir_store: dict[str, Rir] | None = None,
    mode: str = "dry",
    config: SceneConfig | None = None,
    loader: ClipLoader | None = None,
) -> RenderedExample:
    """Render a recipe to audio.

    Each event lands on its own zero canvas at its start time with its gain
    applied; in reverberant mode each canvas is then convolved with that
    source's impulse response and truncated back to the canvas length. The
    mixture is the exact sample-wise sum of the emitted sources.
    """
    if mode not in ("dry", "reverberant"):
        raise ValueError(f"mode must be 'dry' or 'reverberant', got {mode!r}")
    config = config or SceneConfig()
    loader = loader or ClipLoader(sample_rate=config.sample_rate)
    by_id = {c.id: c for c in index} if not isinstance(index, dict) else index
    fs = config.sample_rate
    n = config.canvas_samples

    if mode == "reverberant" and rir_store is None:
        rir_store = rirs_for_spec(spec, config)

    sources = []
    for k, event in enumerate(spec.events):
        clip = by_id.get(event.clip_id)
        if clip is None:
            raise KeyError(f"{spec.example_id}: clip {event.clip_id} not in index")
        audio = loader.load(clip)
        off = int(round(event.segment_offset_s * fs))
        seg_len = int(round(event.segment_duration_s * fs))
        if off + seg_len > len(audio):
            raise ValueError(
                f"{spec.example_id}: clip {clip.id} has {len(audio)} samples, "
                f"event needs {off + seg_len}"
            )
        segment = audio.samples[off : off + seg_len] * 10.0 ** (event.gain_db / 20.0)
        start = int(round(event.start_time_s * fs))
        canvas = np.zeros(n)
        end = min(start + seg_len, n)
        canvas[start:end] = segment[: end - start]
        track = AudioBuffer(canvas, fs)
        if mode == "reverberant":
            rir_id = spec.rir_ids[k]
            if rir_id not in rir_store:
                raise KeyError(f"{spec.example_id}: RIR {rir_id} not in store")
            track = render_reverberant(track, rir_store[rir_id])
        sources.append(track)

    mixture = AudioBuffer(np.sum([s.samples for s in sources], axis=0), fs)
    return RenderedExample(spec=spec, sources=tuple(sources), mixture=mixture)


@dataclass(frozen=True, eq=False)
class OverlapStats:
    """Per-window active-source counts for one example."""

    window_counts: np.ndarray
    n_sources: int

    @property
    def percentages(self) -> tuple[float, ...]:
        """Share of windows with k simultaneously active sources, k = 0..4."""
        top = max(4, self.n_sources)
        hist = np.bincount(self.window_counts, minlength=top + 1)
        return tuple(100.0 * hist / self.window_counts.size)


def overlap_stats(
    sources,
    window_s: float = 0.025,
    activity_threshold_db: float = -60.0,
) -> OverlapStats:
    """Count simultaneously active sources in non-overlapping windows.

    A source is active in a window when that window's energy is within
    ``activity_threshold_db`` of the source's own loudest window, so the
    measure does not depend on absolute event gains.
    """
    if not sources:
        raise ValueError("overlap_stats requires at least one source")
    fs = sources[0].sample_rate
    length = len(sources[0])
    for s in sources[1:]:
        if len(s) != length or s.sample_rate != fs:
            raise ValueError("sources must share length and sample rate")
    win = int(round(window_s * fs))
    if win < 1 or win > length:
        raise ValueError(f"window of {win} samples invalid for signal of {length}")
    n_win = length // win
    ratio = 10.0 ** (activity_threshold_db / 10.0)
    active = np.zeros(n_win, dtype=np.int64)
    for s in sources:
        frames = s.samples[: n_win * win].reshape(n_win, win)
        energies = np.sum(frames * frames, axis=1)
        peak = energies.max()
        active += energies > peak * ratio  # silent source: 0 > 0 is False
    return OverlapStats(window_counts=active, n_sources=len(sources))


def overlap_table(entries) -> dict[int, tuple[float, ...]]:
    """Pool per-example overlap stats into per-source-count table rows.

    ``entries`` yields (n_sources, OverlapStats); each row gives the pooled
    percentage of windows with k = 0..4 active sources and sums to 100.
    """
    pooled: dict[int, np.ndarray] = {}
    for n_sources, stats in entries:
        hist = np.bincount(stats.window_counts, minlength=5)
        if hist.size > 5:
            raise ValueError("more than 4 simultaneously active sources")
        row = pooled.setdefault(n_sources, np.zeros(5, dtype=np.int64))
        row += hist
    return {
        count: tuple(100.0 * hist / hist.sum())
        for count, hist in sorted(pooled.items())
    }
