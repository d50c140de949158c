#!/usr/bin/env python3
"""Tour of the audio layer: WAV round trips, probing, convolution, STFT."""

import tempfile
from pathlib import Path

import numpy as np

from varisep.audio import (
    AudioBuffer,
    StftConfig,
    energy_db,
    fft_convolve,
    istft,
    probe_wav,
    read_wav,
    stft,
    write_wav,
)

from synth import SAMPLE_RATE, make_clip


def main() -> None:
    clip = make_clip(7, 2.0, continuous=True)
    print(f"synthetic clip: {len(clip)} samples at {clip.sample_rate} Hz "
          f"({clip.duration_s:.2f} s), energy {energy_db(clip):.2f} dB")

    workdir = Path(tempfile.mkdtemp(prefix="audio-demo-"))
    for encoding in ("float32", "pcm16"):
        path = workdir / f"clip_{encoding}.wav"
        write_wav(clip, path, encoding=encoding)
        info = probe_wav(path)
        back = read_wav(path)
        worst = np.max(np.abs(back.samples - clip.samples))
        print(f"  {encoding}: {info.n_frames} frames, encoding={info.encoding}, "
              f"max round-trip error {worst:.2e}")

    kernel = AudioBuffer(np.array([0.5, 0.0, 0.25]), SAMPLE_RATE)
    wet = fft_convolve(clip, kernel)
    print(f"fft_convolve: {len(clip)} (x) {len(kernel)} -> {len(wet)} samples "
          f"(full convolution, length n + k - 1)")

    config = StftConfig()
    win, hop = config.sizes(SAMPLE_RATE)
    spec = stft(clip, config)
    resynth = istft(spec)
    err = np.max(np.abs(resynth.samples - clip.samples))
    print(f"stft: window {win} / hop {hop} samples -> {spec.frames.shape[0]} frames x "
          f"{spec.n_bins} bins; round-trip error {err:.2e}")


if __name__ == "__main__":
    main()
