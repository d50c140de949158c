"""Shared fixtures: a small synthetic source corpus on disk.

12 uploaders, each contributing one background clip (11-14 s, longer than
the 10 s canvas) and two foreground clips (1-5.5 s). Labels are drawn from
disjoint background/foreground pools so distinct-label sampling always has
room. All audio is deterministic band-shaped noise at 16 kHz.
"""

import csv

import numpy as np
import pytest

from varisep.audio import AudioBuffer, write_wav
from varisep.scenes import index_corpus, partition_by_uploader
from varisep.seeding import derive_seed

FS = 16000
BG_LABELS = ("rain", "hum", "crowd", "wind")
FG_LABELS = ("dog", "bell", "speech", "car", "bird", "knock", "drum", "siren")
N_UPLOADERS = 12


def make_clip(seed: int, seconds: float, continuous: bool) -> AudioBuffer:
    """Deterministic noise clip; continuous clips stay active everywhere."""
    rng = np.random.default_rng(derive_seed(seed, "test-clip"))
    n = int(round(seconds * FS))
    x = rng.standard_normal(n)
    # random spectral tilt so every clip sounds distinct
    tilt = 1.0 + 9.0 * rng.random()
    spectrum = np.fft.rfft(x)
    spectrum /= 1.0 + tilt * np.linspace(0.0, 1.0, spectrum.size)
    y = np.fft.irfft(spectrum, n)
    if not continuous:
        y *= np.hanning(n) + 1e-3
    peak = np.max(np.abs(y))
    return AudioBuffer(0.5 * y / peak, FS)


@pytest.fixture(scope="session")
def corpus_dir(tmp_path_factory):
    root = tmp_path_factory.mktemp("corpus")
    rows = []
    clip_seed = 0
    for k in range(N_UPLOADERS):
        uploader = f"up{k:02d}"
        updir = root / "audio" / uploader
        updir.mkdir(parents=True)

        bg_id = f"bg{k:03d}"
        bg_seconds = 11.0 + (k % 4)
        write_wav(make_clip(clip_seed, bg_seconds, continuous=True), updir / f"{bg_id}.wav")
        rows.append((bg_id, f"audio/{uploader}/{bg_id}.wav", BG_LABELS[k % 4], uploader, "CC0-1.0"))
        clip_seed += 1

        for j in range(2):
            fg_id = f"fg{2 * k + j:03d}"
            fg_seconds = 1.0 + ((2 * k + j) % 10) * 0.5
            write_wav(make_clip(clip_seed, fg_seconds, continuous=False), updir / f"{fg_id}.wav")
            rows.append(
                (fg_id, f"audio/{uploader}/{fg_id}.wav", FG_LABELS[(2 * k + j) % 8], uploader, "CC0-1.0")
            )
            clip_seed += 1

    with open(root / "manifest.csv", "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["id", "path", "class_label", "uploader", "license"])
        writer.writerows(rows)
    return root


@pytest.fixture(scope="session")
def corpus_clips(corpus_dir):
    return index_corpus(corpus_dir)


@pytest.fixture(scope="session")
def split_pools(corpus_clips):
    assignment = partition_by_uploader(corpus_clips, rng_seed=7, targets=(18, 9, 9))
    return assignment.partition(corpus_clips)
