"""Box-room sampling and image-method impulse response rendering.

Rooms are axis-aligned boxes with one omnidirectional microphone. Each of
the six surfaces carries a named material whose per-octave-band reflection
magnitude is scaled by a global reflectivity gain. An impulse response sums
mirror-image contributions: every image's cumulative per-band magnitude
(product of wall reflectivities along its path, over the distance-law
1/(4*pi*d)) is realized as a short linear-phase FIR, delayed to its exact
fractional arrival time with a Hann-windowed sinc, and scatter-added into
the output. Image positions other than the direct path are jittered by up
to +-8 cm per axis, with offsets hashed from (room seed, source index,
image index) so renders are bit-reproducible regardless of chunking.

The direct path is special-cased: it reflects off nothing, so it is placed
unfiltered, keeping its arrival time and amplitude analytically checkable.
"""

import json
import math
from dataclasses import dataclass
from functools import lru_cache
from pathlib import Path

import numpy as np

from .audio import AudioBuffer, fft_convolve, write_wav
from .seeding import derive_seed, hash_to_unit, splitmix64

OCTAVE_BANDS_HZ = (125.0, 250.0, 500.0, 1000.0, 2000.0, 4000.0, 8000.0)

# Published octave-band absorption coefficients for common building
# surfaces (standard architectural-acoustics tables; 8 kHz extends the
# 4 kHz value where tables stop at 4 kHz).
_ABSORPTION = {
    "brick": (0.01, 0.02, 0.02, 0.03, 0.03, 0.04, 0.04),
    "concrete": (0.02, 0.03, 0.03, 0.03, 0.04, 0.07, 0.07),
    "plaster": (0.29, 0.10, 0.05, 0.04, 0.07, 0.09, 0.09),
    "glass": (0.35, 0.25, 0.18, 0.12, 0.07, 0.04, 0.04),
    "plywood": (0.28, 0.22, 0.17, 0.09, 0.10, 0.11, 0.11),
    "carpet": (0.02, 0.06, 0.14, 0.37, 0.60, 0.65, 0.65),
    "curtain": (0.07, 0.31, 0.49, 0.75, 0.70, 0.60, 0.60),
    "acoustic_tile": (0.50, 0.70, 0.60, 0.70, 0.70, 0.50, 0.50),
}


class RoomSamplingError(RuntimeError):
    """Position constraints could not be satisfied by rejection sampling."""


@dataclass(frozen=True)
class Material:
    """Surface with per-octave-band reflection magnitudes in [0, 1]."""

    name: str
    band_reflectivity: tuple[float, ...]

    def __post_init__(self):
        bands = tuple(float(v) for v in self.band_reflectivity)
        if len(bands) != len(OCTAVE_BANDS_HZ):
            raise ValueError(f"expected {len(OCTAVE_BANDS_HZ)} band values, got {len(bands)}")
        if any(not 0.0 <= v <= 1.0 for v in bands):
            raise ValueError(f"band reflectivity outside [0, 1]: {bands}")
        object.__setattr__(self, "band_reflectivity", bands)

    @classmethod
    def from_absorption(cls, name: str, band_absorption) -> "Material":
        """Energy absorption alpha -> pressure reflectivity sqrt(1 - alpha)."""
        return cls(name, tuple(math.sqrt(1.0 - a) for a in band_absorption))


MATERIALS = {name: Material.from_absorption(name, a) for name, a in _ABSORPTION.items()}


@dataclass(frozen=True)
class RoomRanges:
    """Sampling ranges and placement constraints for random rooms."""

    width: tuple[float, float] = (3.0, 7.0)
    length: tuple[float, float] = (4.0, 8.0)
    height: tuple[float, float] = (2.13, 3.05)
    reflectivity_gain: tuple[float, float] = (0.5, 0.95)
    wall_margin: float = 0.10
    min_source_mic_distance: float = 0.20
    max_attempts: int = 1000


@dataclass(frozen=True)
class RoomSpec:
    """Box geometry, surface materials, and device positions.

    Wall order is (x=0, x=width, y=0, y=length, z=0, z=height). Positions
    are (x, y, z) metres, strictly inside the box; every source keeps at
    least 20 cm from the microphone.
    """

    width: float
    length: float
    height: float
    wall_materials: tuple[Material, ...]
    reflectivity_gain: float
    mic_position: tuple[float, float, float]
    source_positions: tuple[tuple[float, float, float], ...]
    seed: int

    def __post_init__(self):
        dims = (self.width, self.length, self.height)
        if any(d <= 0 for d in dims):
            raise ValueError(f"room dimensions must be positive: {dims}")
        if len(self.wall_materials) != 6:
            raise ValueError("six wall materials required (x0, x1, y0, y1, z0, z1)")
        if not 0.0 < self.reflectivity_gain <= 1.0:
            raise ValueError(f"reflectivity_gain must be in (0, 1], got {self.reflectivity_gain}")
        for pos in (self.mic_position, *self.source_positions):
            if len(pos) != 3 or any(not 0.0 < p < d for p, d in zip(pos, dims)):
                raise ValueError(f"position {pos} not strictly inside room {dims}")
        mic = np.asarray(self.mic_position)
        for i, pos in enumerate(self.source_positions):
            dist = float(np.linalg.norm(np.asarray(pos) - mic))
            if dist < 0.20:
                raise ValueError(f"source {i} is {dist:.3f} m from the mic (minimum 0.20 m)")
        object.__setattr__(self, "source_positions", tuple(tuple(map(float, p)) for p in self.source_positions))
        object.__setattr__(self, "mic_position", tuple(map(float, self.mic_position)))
        object.__setattr__(self, "seed", int(self.seed))

    @property
    def room_id(self) -> str:
        return f"{self.seed & 0xFFFFFFFFFFFFFFFF:016x}"

    @property
    def dimensions(self) -> tuple[float, float, float]:
        return (self.width, self.length, self.height)

    def to_dict(self) -> dict:
        return {
            "width": self.width,
            "length": self.length,
            "height": self.height,
            "wall_materials": [
                {"name": m.name, "band_reflectivity": list(m.band_reflectivity)}
                for m in self.wall_materials
            ],
            "reflectivity_gain": self.reflectivity_gain,
            "mic_position": list(self.mic_position),
            "source_positions": [list(p) for p in self.source_positions],
            "seed": self.seed,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "RoomSpec":
        walls = tuple(
            Material(m["name"], tuple(m["band_reflectivity"])) for m in d["wall_materials"]
        )
        return cls(
            width=d["width"],
            length=d["length"],
            height=d["height"],
            wall_materials=walls,
            reflectivity_gain=d["reflectivity_gain"],
            mic_position=tuple(d["mic_position"]),
            source_positions=tuple(tuple(p) for p in d["source_positions"]),
            seed=d["seed"],
        )


@dataclass(frozen=True)
class SimConfig:
    """Impulse-response rendering parameters.

    ``rir_length_s=None`` derives the length from a Sabine decay estimate,
    max(0.5 s, 1.5 * T60), capped at 3 s. ``max_order=None`` keeps every
    image whose (jittered) arrival can land inside that window.
    """

    sample_rate: int = 16000
    c: float = 343.0
    rir_length_s: float | None = None
    max_order: int | None = None
    jitter_m: float = 0.08
    fir_taps: int = 16
    sinc_half_width: int = 8
    amp_floor: float = 1e-30

    def __post_init__(self):
        if self.sample_rate < 1 or self.c <= 0:
            raise ValueError("sample_rate and c must be positive")
        if self.rir_length_s is not None and self.rir_length_s <= 0:
            raise ValueError("rir_length_s must be positive when given")
        if self.max_order is not None and self.max_order < 0:
            raise ValueError("max_order must be >= 0 when given")
        if self.jitter_m < 0:
            raise ValueError("jitter_m must be >= 0")
        if self.fir_taps < 2 or self.fir_taps % 2:
            raise ValueError("fir_taps must be a positive even number")
        if self.sinc_half_width < 1:
            raise ValueError("sinc_half_width must be >= 1")

    def to_dict(self) -> dict:
        return {
            "sample_rate": self.sample_rate,
            "c": self.c,
            "rir_length_s": self.rir_length_s,
            "max_order": self.max_order,
            "jitter_m": self.jitter_m,
            "fir_taps": self.fir_taps,
            "sinc_half_width": self.sinc_half_width,
            "amp_floor": self.amp_floor,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "SimConfig":
        return cls(**d)


@dataclass(frozen=True, eq=False)
class Rir:
    """Rendered impulse response for one (room, source) pair."""

    samples: AudioBuffer
    source_index: int
    room_id: str
    max_order: int


def sample_room(rng_seed: int, n_sources: int, ranges: RoomRanges | None = None) -> RoomSpec:
    """Draw a random room with a mic and ``n_sources`` source positions.

    Dimensions, gain, and positions are uniform within the configured
    ranges; positions keep ``wall_margin`` from every surface, and sources
    closer than the minimum mic distance are rejection-resampled.
    """
    ranges = ranges or RoomRanges()
    if not 1 <= n_sources <= 4:
        raise ValueError(f"n_sources must be in 1..4, got {n_sources}")
    rng = np.random.default_rng(derive_seed(rng_seed, "room-geometry"))
    dims = (
        rng.uniform(*ranges.width),
        rng.uniform(*ranges.length),
        rng.uniform(*ranges.height),
    )
    gain = rng.uniform(*ranges.reflectivity_gain)
    names = sorted(MATERIALS)
    walls = tuple(MATERIALS[names[int(rng.integers(len(names)))]] for _ in range(6))

    margin = ranges.wall_margin
    if any(d <= 2 * margin for d in dims):
        raise RoomSamplingError(f"margin {margin} m leaves no interior in room {dims}")

    def draw() -> np.ndarray:
        return np.array([rng.uniform(margin, d - margin) for d in dims])

    mic = draw()
    sources = []
    for _ in range(n_sources):
        for _attempt in range(ranges.max_attempts):
            cand = draw()
            if np.linalg.norm(cand - mic) >= ranges.min_source_mic_distance:
                sources.append(tuple(cand))
                break
        else:
            raise RoomSamplingError(
                f"no source position >= {ranges.min_source_mic_distance} m from the mic "
                f"after {ranges.max_attempts} attempts"
            )
    return RoomSpec(
        width=dims[0],
        length=dims[1],
        height=dims[2],
        wall_materials=walls,
        reflectivity_gain=gain,
        mic_position=tuple(mic),
        source_positions=tuple(sources),
        seed=rng_seed,
    )


def sabine_t60(room: RoomSpec) -> float:
    """Sabine decay estimate 0.161*V/A from effective band-mean absorption."""
    refl = np.array([m.band_reflectivity for m in room.wall_materials]) * room.reflectivity_gain
    alpha = np.mean(1.0 - refl**2, axis=1)  # per-wall, averaged over bands
    w, l, h = room.width, room.length, room.height
    areas = np.array([l * h, l * h, w * h, w * h, w * l, w * l])
    absorbing_area = float(np.dot(areas, alpha))
    volume = w * l * h
    return 0.161 * volume / max(absorbing_area, 1e-6)


def _windowed_sinc(t: np.ndarray, half_width: int) -> np.ndarray:
    """Hann-windowed sinc, support |t| <= half_width samples, cutoff Nyquist."""
    inside = np.abs(t) <= half_width
    window = 0.5 * (1.0 + np.cos(np.pi * t / half_width))
    return np.where(inside, window * np.sinc(t), 0.0)


@lru_cache(maxsize=8)
def _fir_fit(sample_rate: int, n_taps: int) -> tuple[np.ndarray, np.ndarray]:
    """Least-squares map from octave-band magnitudes to half-FIR taps.

    An even-length linear-phase FIR has amplitude response
    A(w) = 2*sum_m g_m cos(w*(m+0.5)) with g the upper half of the taps.
    Band targets are spread onto a dense frequency grid (piecewise-linear
    in log-frequency, held flat outside the band span, tapered into the
    structural type-II zero at Nyquist) and the taps solve the dense
    least-squares problem. Interpolating through the bands alone is badly
    conditioned: 16 taps cannot tell 125 Hz from 250 Hz, and the exact fit
    rings with huge off-band gain. Both stages are linear, so the whole map
    collapses to one matrix. Bands at or above 95% of Nyquist are dropped
    (the taper covers them). Returns (fit matrix, kept-band mask).
    """
    bands = np.asarray(OCTAVE_BANDS_HZ, dtype=np.float64)
    keep = bands < 0.475 * sample_rate
    if not keep.any():
        raise ValueError(f"no octave band below Nyquist at {sample_rate} Hz")
    kept = bands[keep]
    nyquist = sample_rate / 2.0
    hold_edge = min(0.85 * nyquist, max(kept[-1], 0.5 * nyquist))

    grid_hz = np.linspace(0.0, nyquist, 257)
    weights = np.zeros((grid_hz.size, kept.size))
    log_kept = np.log(kept)
    for i, f in enumerate(grid_hz):
        if f <= kept[0]:
            weights[i, 0] = 1.0
        elif f < kept[-1]:
            j = int(np.searchsorted(kept, f)) - 1
            t = (math.log(f) - log_kept[j]) / (log_kept[j + 1] - log_kept[j])
            weights[i, j] = 1.0 - t
            weights[i, j + 1] = t
        elif f <= hold_edge:
            weights[i, -1] = 1.0
        else:
            weights[i, -1] = max(0.0, (nyquist - f) / (nyquist - hold_edge))

    omega = 2.0 * np.pi * grid_hz / sample_rate
    design = 2.0 * np.cos(np.outer(omega, np.arange(n_taps // 2) + 0.5))
    return np.linalg.pinv(design) @ weights, keep


def _axis_images(src: float, dim: float, r_max: int) -> tuple[np.ndarray, ...]:
    """1-D image set along one axis.

    For mirror parity p in {0,1} and period index r, the image coordinate is
    (1-2p)*src + 2*r*dim, encountering |r-p| reflections at the x=0 wall and
    |r| at the x=dim wall.
    """
    r = np.arange(-r_max, r_max + 1, dtype=np.int64)
    r2 = np.repeat(r, 2)
    p2 = np.tile(np.array([0, 1], dtype=np.int64), r.size)
    coord = (1.0 - 2.0 * p2) * src + 2.0 * r2 * dim
    return coord, np.abs(r2 - p2), np.abs(r2), r2, p2


def resolve_rir_length_s(room: RoomSpec, sim: SimConfig) -> float:
    if sim.rir_length_s is not None:
        return sim.rir_length_s
    return max(0.5, min(3.0, 1.5 * sabine_t60(room)))


def image_method_rir(room: RoomSpec, source_index: int, sim: SimConfig | None = None) -> Rir:
    """Render the impulse response from one source to the room microphone."""
    sim = sim or SimConfig()
    if not 0 <= source_index < len(room.source_positions):
        raise ValueError(f"source_index {source_index} out of range")
    fs = sim.sample_rate
    hw = sim.sinc_half_width
    half_taps = sim.fir_taps // 2
    dims = np.array(room.dimensions)
    src = np.array(room.source_positions[source_index])
    mic = np.array(room.mic_position)

    length_s = resolve_rir_length_s(room, sim)
    n_out = int(round(length_s * fs))
    direct_dist = float(np.linalg.norm(src - mic))
    direct_tau = direct_dist / sim.c * fs
    if direct_tau >= n_out:
        raise ValueError(
            f"rir_length {length_s} s shorter than the direct-path delay "
            f"({direct_dist / sim.c:.4f} s)"
        )

    # reach: farthest image distance whose contribution can still land in
    # the buffer, padded for jitter and filter support
    reach = (n_out + hw + half_taps + 2) / fs * sim.c + sim.jitter_m * math.sqrt(3.0)
    if sim.max_order is not None:
        order_cap = sim.max_order
        r_maxes = [min(order_cap // 2 + 1, int(math.ceil(reach / (2 * d))) + 1) for d in dims]
    else:
        order_cap = int(math.ceil(reach / (2 * float(dims.min())))) + 1
        r_maxes = [int(math.ceil(reach / (2 * d))) + 1 for d in dims]

    axes = [_axis_images(src[a], dims[a], r_maxes[a]) for a in range(3)]
    sizes = [ax[0].size for ax in axes]

    # effective per-wall log reflectivity; clip keeps 0 * log(0) out of the
    # count matmul (zero-reflectivity walls then underflow to amplitude 0)
    refl = np.array([m.band_reflectivity for m in room.wall_materials]) * room.reflectivity_gain
    log_beta = np.log(np.clip(refl, 1e-300, None))  # (6, n_bands)
    fit_pinv, band_keep = _fir_fit(fs, sim.fir_taps)

    jitter_base = derive_seed(room.seed, "image-jitter", source_index)
    pad = hw + half_taps + 4
    acc = np.zeros(n_out + 2 * pad)
    sinc_span = np.arange(2 * hw + 2)
    conv_width = 2 * hw + 1 + sim.fir_taps
    resolved_order = 0

    total = sizes[0] * sizes[1] * sizes[2]
    chunk = 1 << 17
    for start in range(0, total, chunk):
        flat = np.arange(start, min(start + chunk, total), dtype=np.int64)
        iz = flat % sizes[2]
        iy = (flat // sizes[2]) % sizes[1]
        ix = flat // (sizes[2] * sizes[1])

        counts = np.stack(
            [
                axes[0][1][ix], axes[0][2][ix],
                axes[1][1][iy], axes[1][2][iy],
                axes[2][1][iz], axes[2][2][iz],
            ],
            axis=1,
        )
        order = counts.sum(axis=1)
        keep = (order > 0) & (order <= order_cap)  # direct path handled apart
        if not keep.any():
            continue
        ix, iy, iz = ix[keep], iy[keep], iz[keep]
        counts = counts[keep]
        order = order[keep]

        coords = np.stack([axes[0][0][ix], axes[1][0][iy], axes[2][0][iz]], axis=1)

        if sim.jitter_m > 0.0:
            key = (
                (axes[0][3][ix] + 0x8000).astype(np.uint64)
                | ((axes[1][3][iy] + 0x8000).astype(np.uint64) << np.uint64(16))
                | ((axes[2][3][iz] + 0x8000).astype(np.uint64) << np.uint64(32))
                | (
                    (
                        axes[0][4][ix] | (axes[1][4][iy] << 1) | (axes[2][4][iz] << 2)
                    ).astype(np.uint64)
                    << np.uint64(48)
                )
            )
            mixed = splitmix64(key ^ np.uint64(jitter_base))
            for a in range(3):
                u = hash_to_unit(splitmix64(mixed + np.uint64(a + 1)))
                coords[:, a] += (2.0 * u - 1.0) * sim.jitter_m

        dist = np.linalg.norm(coords - mic[None, :], axis=1)
        tau = dist / sim.c * fs
        in_window = tau < n_out + hw + half_taps + 1
        if not in_window.any():
            continue
        counts = counts[in_window]
        order = order[in_window]
        dist = dist[in_window]
        tau = tau[in_window]

        band_amp = np.exp(counts @ log_beta) / (4.0 * np.pi * dist)[:, None]
        audible = band_amp.max(axis=1) >= sim.amp_floor
        if not audible.any():
            continue
        band_amp = band_amp[audible]
        order = order[audible]
        tau = tau[audible]
        resolved_order = max(resolved_order, int(order.max()))

        half = band_amp[:, band_keep] @ fit_pinv.T  # (m, half_taps)
        taps = np.concatenate([half[:, ::-1], half], axis=1)

        base = np.floor(tau).astype(np.int64)
        frac = tau - base
        # windowed sinc on an integer grid, with the FIR group delay of
        # (fir_taps-1)/2 folded in as the extra half-sample offset
        grid = sinc_span[None, :] - hw - (frac[:, None] + 0.5)
        g = _windowed_sinc(grid, hw)
        rows = np.zeros((g.shape[0], conv_width))
        for m in range(sim.fir_taps):
            rows[:, m : m + 2 * hw + 2] += taps[:, m : m + 1] * g

        starts = base - hw - half_taps + pad
        idx = starts[:, None] + np.arange(conv_width)[None, :]
        acc += np.bincount(idx.ravel(), weights=rows.ravel(), minlength=acc.size)[: acc.size]

    # direct path: no walls, no jitter, flat spectrum 1/(4*pi*d)
    base = int(math.floor(direct_tau))
    frac = direct_tau - base
    direct = _windowed_sinc(np.arange(2 * hw + 1) - hw - frac, hw) / (4.0 * np.pi * direct_dist)
    lo = base - hw + pad
    acc[lo : lo + 2 * hw + 1] += direct

    out = acc[pad : pad + n_out]
    if not np.all(np.isfinite(out)):
        raise FloatingPointError("non-finite impulse response")
    return Rir(
        samples=AudioBuffer(out, fs),
        source_index=source_index,
        room_id=room.room_id,
        max_order=sim.max_order if sim.max_order is not None else resolved_order,
    )


@dataclass(frozen=True)
class T60Estimate:
    """Reverberation time with a censoring flag.

    ``censored`` means the impulse response ended before the decay curve
    reached -25 dB, so ``seconds`` extrapolates from the span that was
    observed and is best read as a lower bound.
    """

    seconds: float
    censored: bool
    decay_span_db: float


def measure_t60(rir: Rir) -> T60Estimate:
    """Reverberation time from the Schroeder backward-integrated decay.

    Fits a line to the decay between -5 dB and -25 dB and extrapolates to
    -60 dB (x3 the fitted 20 dB span).
    """
    h = rir.samples.samples
    fs = rir.samples.sample_rate
    energy = np.cumsum(h[::-1] ** 2)[::-1]
    if energy[0] <= 0.0:
        raise ValueError("cannot measure T60 of an all-zero impulse response")
    valid = energy > 0.0
    curve = np.full(h.size, -np.inf)
    curve[valid] = 10.0 * np.log10(energy[valid] / energy[0])

    below5 = np.flatnonzero(curve <= -5.0)
    if below5.size == 0:
        return T60Estimate(seconds=math.inf, censored=True, decay_span_db=float(-curve[valid][-1]))
    i5 = below5[0]
    below25 = np.flatnonzero(curve <= -25.0)
    if below25.size:
        i_end = below25[0]
        censored = False
    else:
        i_end = np.flatnonzero(valid)[-1]
        censored = True
    span_db = float(curve[i5] - curve[i_end])
    if i_end <= i5 or span_db <= 0.0:
        return T60Estimate(seconds=0.0, censored=True, decay_span_db=span_db)
    t = np.arange(i5, i_end + 1) / fs
    slope = np.polyfit(t, curve[i5 : i_end + 1], 1)[0]
    if slope >= 0.0:
        return T60Estimate(seconds=math.inf, censored=True, decay_span_db=span_db)
    return T60Estimate(seconds=float(-60.0 / slope), censored=censored, decay_span_db=span_db)


def render_reverberant(source: AudioBuffer, rir: Rir) -> AudioBuffer:
    """Convolve a source with an impulse response, keeping the source length."""
    wet = fft_convolve(source, rir.samples)
    return AudioBuffer(wet.samples[: len(source)], source.sample_rate)


def rir_basename(room_id: str, source_index: int) -> str:
    return f"rir_{room_id}_s{source_index}"


def save_room_rirs(room: RoomSpec, sim: SimConfig, directory, rirs=None) -> tuple[list[Path], Path]:
    """Persist one float32 WAV per source plus one JSON sidecar per room.

    The sidecar carries the full room spec and simulation config, enough to
    re-render every WAV bit-exactly. Returns (wav paths, sidecar path).
    """
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    if rirs is None:
        rirs = [image_method_rir(room, k, sim) for k in range(len(room.source_positions))]
    wav_paths = []
    for rir in rirs:
        wav_path = directory / f"{rir_basename(rir.room_id, rir.source_index)}.wav"
        write_wav(rir.samples, wav_path, encoding="float32")
        wav_paths.append(wav_path)
    sidecar = {
        "room": room.to_dict(),
        "sim": sim.to_dict(),
        "rir_files": [p.name for p in wav_paths],
        "max_order": max((r.max_order for r in rirs), default=0),
    }
    json_path = directory / f"rir_{room.room_id}.json"
    json_path.write_text(json.dumps(sidecar, indent=2, sort_keys=True) + "\n")
    return wav_paths, json_path
