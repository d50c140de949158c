"""Waveform containers, WAV I/O, convolution, and STFT analysis/synthesis.

Everything downstream (room simulation, scene rendering, losses, metrics)
moves audio around as :class:`AudioBuffer`: an immutable mono float64 signal
tagged with its sample rate. WAV files are parsed directly from the RIFF
bytes so that header problems, unsupported encodings, and truncations raise
distinct errors, and so durations can be probed without decoding samples.
"""

import math
import struct
from dataclasses import dataclass, field

import numpy as np
import scipy.signal

ENERGY_FLOOR = 1e-30  # keeps energy_db finite; all-zero signal -> -300 dB

_WAVE_FORMAT_PCM = 0x0001
_WAVE_FORMAT_IEEE_FLOAT = 0x0003
_WAVE_FORMAT_EXTENSIBLE = 0xFFFE

# Above this many samples, convolution switches to block (overlap-add) mode
# to bound FFT memory.
_BLOCK_CONVOLVE_THRESHOLD = 1 << 22


class MalformedWavError(Exception):
    """WAV file with a broken or truncated RIFF structure."""


class UnsupportedWavError(Exception):
    """Structurally valid WAV whose encoding is not PCM16 or float32."""


@dataclass(frozen=True, eq=False)
class AudioBuffer:
    """Mono waveform: float64 samples (nominal full scale +-1) + rate in Hz."""

    samples: np.ndarray
    sample_rate: int

    def __post_init__(self):
        samples = np.ascontiguousarray(self.samples, dtype=np.float64)
        if samples.ndim != 1:
            raise ValueError(f"AudioBuffer expects a 1-D signal, got shape {samples.shape}")
        if samples.size and not np.all(np.isfinite(samples)):
            raise ValueError("AudioBuffer samples must be finite (no NaN/Inf)")
        rate = int(self.sample_rate)
        if rate <= 0:
            raise ValueError(f"sample_rate must be positive, got {self.sample_rate}")
        samples.flags.writeable = False
        object.__setattr__(self, "samples", samples)
        object.__setattr__(self, "sample_rate", rate)

    def __len__(self):
        return self.samples.size

    @property
    def duration_s(self) -> float:
        return self.samples.size / self.sample_rate


@dataclass(frozen=True)
class WavInfo:
    """Header-level facts about a WAV file (no sample data read)."""

    sample_rate: int
    n_frames: int
    n_channels: int
    encoding: str  # "pcm16" | "float32" | anything else found in the header


def _parse_header(blob: bytes, path) -> tuple[WavInfo, int, int]:
    """Parse RIFF/WAVE chunks; return (info, data_offset, data_size)."""
    if len(blob) < 12:
        raise MalformedWavError(f"{path}: file too short for a RIFF header")
    if blob[0:4] != b"RIFF" or blob[8:12] != b"WAVE":
        raise MalformedWavError(f"{path}: not a RIFF/WAVE file")

    fmt = None
    data_span = None
    pos = 12
    while pos + 8 <= len(blob):
        chunk_id = blob[pos : pos + 4]
        (chunk_size,) = struct.unpack_from("<I", blob, pos + 4)
        body = pos + 8
        if chunk_id == b"fmt ":
            if chunk_size < 16 or body + 16 > len(blob):
                raise MalformedWavError(f"{path}: truncated fmt chunk")
            fmt = struct.unpack_from("<HHIIHH", blob, body)
            if fmt[0] == _WAVE_FORMAT_EXTENSIBLE:
                # resolve the real format tag from the SubFormat GUID
                if chunk_size < 40 or body + 26 > len(blob):
                    raise MalformedWavError(f"{path}: truncated extensible fmt chunk")
                (subformat_tag,) = struct.unpack_from("<H", blob, body + 24)
                fmt = (subformat_tag,) + fmt[1:]
        elif chunk_id == b"data":
            data_span = (body, chunk_size)
        pos = body + chunk_size + (chunk_size & 1)

    if fmt is None:
        raise MalformedWavError(f"{path}: missing fmt chunk")
    if data_span is None:
        raise MalformedWavError(f"{path}: missing data chunk")

    format_tag, n_channels, sample_rate, _byte_rate, block_align, bits = fmt
    if n_channels < 1 or sample_rate < 1:
        raise MalformedWavError(f"{path}: nonsensical fmt fields")
    data_offset, data_size = data_span
    if data_offset + data_size > len(blob):
        raise MalformedWavError(f"{path}: data chunk extends past end of file")

    if format_tag == _WAVE_FORMAT_PCM and bits == 16:
        encoding = "pcm16"
    elif format_tag == _WAVE_FORMAT_IEEE_FLOAT and bits == 32:
        encoding = "float32"
    else:
        encoding = f"format_tag={format_tag},bits={bits}"
    expected_align = n_channels * (bits // 8)
    if block_align not in (0, expected_align):
        raise MalformedWavError(f"{path}: block alignment inconsistent with fmt")
    n_frames = data_size // expected_align if expected_align else 0
    info = WavInfo(sample_rate, n_frames, n_channels, encoding)
    return info, data_offset, data_size


def probe_wav(path) -> WavInfo:
    """Read sample rate / frame count / encoding from a WAV header only."""
    with open(path, "rb") as fh:
        blob = fh.read(1 << 16)
        # header normally fits in the first chunk reads; a fmt chunk after
        # huge data would need the rest
        if len(blob) == 1 << 16:
            blob += fh.read()
    info, _, _ = _parse_header(blob, path)
    return info


def read_wav(path, channel: int = 0) -> AudioBuffer:
    """Load one channel of a PCM16 or float32 WAV.

    PCM16 samples are scaled to [-1, 1) by division by 32768. Multichannel
    files are not downmixed: ``channel`` selects one stream.
    """
    with open(path, "rb") as fh:
        blob = fh.read()
    info, offset, size = _parse_header(blob, path)
    if info.encoding == "pcm16":
        raw = np.frombuffer(blob, dtype="<i2", count=size // 2, offset=offset)
        data = raw.astype(np.float64) / 32768.0
    elif info.encoding == "float32":
        raw = np.frombuffer(blob, dtype="<f4", count=size // 4, offset=offset)
        data = raw.astype(np.float64)
    else:
        raise UnsupportedWavError(f"{path}: unsupported encoding ({info.encoding})")
    if info.n_channels > 1:
        if not 0 <= channel < info.n_channels:
            raise ValueError(f"{path}: channel {channel} out of range ({info.n_channels} channels)")
        data = data[: info.n_frames * info.n_channels].reshape(-1, info.n_channels)[:, channel]
    data = np.ascontiguousarray(data)
    return AudioBuffer(data, info.sample_rate)


def write_wav(buffer: AudioBuffer, path, encoding: str = "float32") -> None:
    """Write a mono WAV with a canonical 44-byte header.

    pcm16 clips to [-1, 1 - 2**-15] and rounds; float32 round-trips
    bit-exactly through :func:`read_wav`. Empty buffers produce a valid
    zero-length data chunk.
    """
    if encoding == "pcm16":
        scaled = np.round(buffer.samples * 32768.0)
        payload = np.clip(scaled, -32768, 32767).astype("<i2").tobytes()
        format_tag, bits = _WAVE_FORMAT_PCM, 16
    elif encoding == "float32":
        payload = buffer.samples.astype("<f4").tobytes()
        format_tag, bits = _WAVE_FORMAT_IEEE_FLOAT, 32
    else:
        raise ValueError(f"unknown encoding {encoding!r} (use 'pcm16' or 'float32')")
    block_align = bits // 8
    header = struct.pack(
        "<4sI4s4sIHHIIHH4sI",
        b"RIFF",
        36 + len(payload),
        b"WAVE",
        b"fmt ",
        16,
        format_tag,
        1,
        buffer.sample_rate,
        buffer.sample_rate * block_align,
        block_align,
        bits,
        b"data",
        len(payload),
    )
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(payload)


def fft_convolve(signal: AudioBuffer, kernel: AudioBuffer) -> AudioBuffer:
    """Full linear convolution (length N + K - 1) of two buffers."""
    if len(signal) == 0 or len(kernel) == 0:
        raise ValueError("fft_convolve requires non-empty inputs")
    if signal.sample_rate != kernel.sample_rate:
        raise ValueError(
            f"sample-rate mismatch: {signal.sample_rate} Hz vs {kernel.sample_rate} Hz"
        )
    if max(len(signal), len(kernel)) > _BLOCK_CONVOLVE_THRESHOLD:
        out = scipy.signal.oaconvolve(signal.samples, kernel.samples, mode="full")
    else:
        out = scipy.signal.fftconvolve(signal.samples, kernel.samples, mode="full")
    return AudioBuffer(out, signal.sample_rate)


def energy_db(buffer: AudioBuffer) -> float:
    """Total signal energy in dB: 10*log10(sum(y^2) + 1e-30)."""
    return float(10.0 * np.log10(np.dot(buffer.samples, buffer.samples) + ENERGY_FLOOR))


@dataclass(frozen=True)
class StftConfig:
    """Analysis/synthesis framing. Defaults: 32 ms window, 8 ms hop."""

    window_length: float = 0.032
    hop: float = 0.008
    window: str = "sqrt_hann"

    def __post_init__(self):
        if not 0 < self.hop <= self.window_length:
            raise ValueError(f"need 0 < hop <= window_length, got {self.hop}, {self.window_length}")
        if self.window != "sqrt_hann":
            raise ValueError(f"unknown analysis window {self.window!r}")

    def sizes(self, sample_rate: int) -> tuple[int, int]:
        """Window and hop in samples; rejects pairs without exact overlap-add."""
        win = int(round(self.window_length * sample_rate))
        hop = int(round(self.hop * sample_rate))
        if win < 2 or hop < 1:
            raise ValueError(f"window/hop too short at {sample_rate} Hz")
        if win % hop != 0 or win // hop < 2:
            raise ValueError(
                f"window ({win}) must be an integer multiple >= 2x of hop ({hop}) "
                "for exact overlap-add reconstruction"
            )
        return win, hop


@dataclass(frozen=True, eq=False)
class Spectrogram:
    """Complex STFT frames (n_frames x bins) plus what istft needs to invert."""

    frames: np.ndarray
    config: StftConfig
    original_length: int
    sample_rate: int

    @property
    def n_bins(self) -> int:
        return self.frames.shape[1]


def _sqrt_hann(win: int) -> np.ndarray:
    # periodic Hann; sqrt pair keeps analysis*synthesis summing flat
    n = np.arange(win)
    return np.sqrt(0.5 - 0.5 * np.cos(2.0 * np.pi * n / win))


def stft(buffer: AudioBuffer, config: StftConfig | None = None) -> Spectrogram:
    """Short-time Fourier transform; inputs shorter than a window are zero-padded."""
    config = config or StftConfig()
    win, hop = config.sizes(buffer.sample_rate)
    x = buffer.samples
    # pad by a full window on both sides so every original sample gets
    # complete overlap coverage in istft
    n_frames = max(1, math.ceil((x.size + win) / hop) + 1)
    padded = np.zeros(win + (n_frames - 1) * hop + win, dtype=np.float64)
    padded[win : win + x.size] = x
    window = _sqrt_hann(win)
    idx = np.arange(win)[None, :] + hop * np.arange(n_frames)[:, None]
    frames = np.fft.rfft(padded[idx] * window[None, :], axis=1)
    return Spectrogram(frames, config, x.size, buffer.sample_rate)


def istft(spec: Spectrogram) -> AudioBuffer:
    """Inverse STFT via windowed overlap-add; exact on the original span."""
    win, hop = spec.config.sizes(spec.sample_rate)
    window = _sqrt_hann(win)
    n_frames = spec.frames.shape[0]
    total = win + (n_frames - 1) * hop + win
    out = np.zeros(total, dtype=np.float64)
    norm = np.zeros(total, dtype=np.float64)
    chunks = np.fft.irfft(spec.frames, n=win, axis=1) * window[None, :]
    wsq = window * window
    for k in range(n_frames):
        start = k * hop
        out[start : start + win] += chunks[k]
        norm[start : start + win] += wsq
    lo, hi = win, win + spec.original_length
    return AudioBuffer(out[lo:hi] / np.maximum(norm[lo:hi], 1e-12), spec.sample_rate)
