#!/usr/bin/env python3
"""Tour of the room simulator: geometry, impulse responses, decay times."""

import math
from dataclasses import replace

import numpy as np

from varisep.rooms import (
    SimConfig,
    image_method_rir,
    measure_t60,
    render_reverberant,
    sabine_t60,
    sample_room,
)

from synth import make_clip


def main() -> None:
    room = sample_room(rng_seed=42, n_sources=2)
    print(f"room {room.room_id}: {room.width:.2f} x {room.length:.2f} x {room.height:.2f} m,"
          f" reflectivity gain {room.reflectivity_gain:.2f}")
    print(f"  mic at {tuple(round(v, 2) for v in room.mic_position)}")
    for k, pos in enumerate(room.source_positions):
        d = math.dist(pos, room.mic_position)
        print(f"  source {k} at {tuple(round(v, 2) for v in pos)} ({d:.2f} m from mic)")

    sim = SimConfig(rir_length_s=0.4)
    rir = image_method_rir(room, 0, sim)
    h = rir.samples
    d = math.dist(room.source_positions[0], room.mic_position)
    predicted = d / sim.c * sim.sample_rate
    onset = int(np.argmax(np.abs(h.samples[: int(predicted) + 12])))
    print(f"impulse response: {len(h)} samples, image order {rir.max_order}")
    print(f"  direct path predicted at sample {predicted:.1f}, peak found at {onset}")
    print(f"  predicted T60 (volume/absorption): {sabine_t60(room):.3f} s")
    print(f"  measured  T60 (decay fit):         {measure_t60(rir).seconds:.3f} s")

    for gain in (0.55, 0.75, 0.95):
        t60 = measure_t60(image_method_rir(replace(room, reflectivity_gain=gain), 0, sim))
        label = f"{t60.seconds:.3f} s" if not t60.censored else f">= {t60.seconds:.3f} s (censored)"
        print(f"  reflectivity gain {gain:.2f} -> T60 {label}")

    clip = make_clip(3, 1.0, continuous=False)
    wet = render_reverberant(clip, rir)
    gain_db = 10 * math.log10(float(np.sum(wet.samples**2) / np.sum(clip.samples**2)))
    print(f"dry clip {len(clip)} samples -> reverberant render, same length, "
          f"level shift {gain_db:+.1f} dB")


if __name__ == "__main__":
    main()
