"""Shared helpers for the demo scripts: tiny synthetic clips and corpora.

Real deployments index a directory of recorded CC0 clips; the demos stay
self-contained by synthesizing colored-noise clips instead.
"""

import csv
from pathlib import Path

import numpy as np

from varisep.audio import AudioBuffer, write_wav
from varisep.seeding import derive_seed

SAMPLE_RATE = 16000

BACKGROUND_LABELS = ("rain", "hum", "crowd", "wind")
FOREGROUND_LABELS = ("dog", "bell", "speech", "car", "bird", "knock", "drum", "siren")


def make_clip(seed: int, seconds: float, continuous: bool) -> AudioBuffer:
    """Colored noise with a random spectral tilt; short clips get an envelope."""
    rng = np.random.default_rng(derive_seed(seed, "demo-clip"))
    n = int(round(seconds * SAMPLE_RATE))
    spectrum = np.fft.rfft(rng.standard_normal(n))
    tilt = rng.uniform(0.0, 6.0)
    spectrum /= 1.0 + tilt * np.linspace(0.0, 1.0, spectrum.size)
    x = np.fft.irfft(spectrum, n)
    if not continuous:
        x *= np.hanning(n) + 1e-3
    x *= 0.5 / np.max(np.abs(x))
    return AudioBuffer(x, SAMPLE_RATE)


def build_demo_corpus(root: Path, n_uploaders: int = 12) -> Path:
    """Write a small clip corpus with a manifest; returns the corpus root."""
    root = Path(root)
    (root / "audio").mkdir(parents=True, exist_ok=True)
    rows = []
    for k in range(n_uploaders):
        uploader = f"up{k:02d}"
        (root / "audio" / uploader).mkdir(exist_ok=True)
        clip_id = f"bg{k:03d}"
        rel = f"audio/{uploader}/{clip_id}.wav"
        write_wav(make_clip(k * 31, 11.0 + (k % 4), continuous=True), root / rel)
        rows.append((clip_id, rel, BACKGROUND_LABELS[k % 4], uploader, "CC0-1.0"))
        for j in range(2):
            clip_id = f"fg{k:03d}{j}"
            rel = f"audio/{uploader}/{clip_id}.wav"
            seconds = 1.0 + ((2 * k + j) % 10) * 0.5
            write_wav(make_clip(1000 + k * 31 + j, seconds, continuous=False), root / rel)
            rows.append((clip_id, rel, FOREGROUND_LABELS[(2 * k + j) % 8], uploader, "CC0-1.0"))
    with open(root / "manifest.csv", "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["id", "path", "class_label", "uploader", "license"])
        writer.writerows(rows)
    return root
