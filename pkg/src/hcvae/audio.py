"""WAV I/O and the log-mel feature pipeline.

Pipeline: Hann-windowed power STFT -> HTK mel filterbank (unit-peak
triangles) -> 10*log10 with a floor -> stacking of consecutive frames into
one input vector per position.
"""

from __future__ import annotations

import os
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import (
    ConfigurationError,
    InputTooShortError,
    UnsupportedCodecError,
    WavFormatError,
    WavNotFoundError,
)

_PCM = 0x0001
_EXTENSIBLE = 0xFFFE
_PCM_SUBFORMAT_TAIL = b"\x00\x00\x00\x00\x10\x00\x80\x00\x00\xaa\x00\x38\x9b\x71"


@dataclass
class Waveform:
    samples: np.ndarray
    sample_rate: int

    def __post_init__(self):
        if self.sample_rate <= 0:
            raise ConfigurationError(f"sample_rate must be positive, got {self.sample_rate}")
        if len(self.samples) == 0:
            raise InputTooShortError("waveform has no samples")

    @property
    def duration(self) -> float:
        return len(self.samples) / self.sample_rate


@dataclass(frozen=True)
class SpectrogramConfig:
    sample_rate: int = 16000
    frame_size: int = 1024
    hop: int = 512
    mel_bins: int = 128
    fmin: float = 0.0
    fmax: float | None = None
    log_floor: float = 1e-10
    stack: int = 5

    def __post_init__(self):
        if not 0 < self.hop <= self.frame_size:
            raise ConfigurationError(f"need 0 < hop <= frame_size, got hop={self.hop}")
        if self.mel_bins < 1:
            raise ConfigurationError("mel_bins must be >= 1")
        if self.stack < 1:
            raise ConfigurationError("stack must be >= 1")
        if self.log_floor <= 0:
            raise ConfigurationError("log_floor must be positive")
        if not self.fmin < self.upper_freq:
            raise ConfigurationError(f"fmin {self.fmin} must be below fmax {self.upper_freq}")
        if self.upper_freq > self.sample_rate / 2:
            raise ConfigurationError("fmax exceeds Nyquist")

    @property
    def upper_freq(self) -> float:
        return self.sample_rate / 2 if self.fmax is None else float(self.fmax)

    @property
    def n_fft_bins(self) -> int:
        return self.frame_size // 2 + 1

    @property
    def feature_dim(self) -> int:
        return self.mel_bins * self.stack

    def to_dict(self) -> dict:
        return {
            "sample_rate": self.sample_rate,
            "frame_size": self.frame_size,
            "hop": self.hop,
            "mel_bins": self.mel_bins,
            "fmin": self.fmin,
            "fmax": self.fmax,
            "log_floor": self.log_floor,
            "stack": self.stack,
        }


@dataclass
class FeatureMatrix:
    """Stacked log-mel vectors for one clip, shape (n_vectors, mel_bins * stack)."""

    values: np.ndarray
    mel_bins: int
    stack: int

    def __post_init__(self):
        if self.values.ndim != 2 or self.values.shape[1] != self.mel_bins * self.stack:
            raise ConfigurationError(
                f"feature values of shape {self.values.shape} do not match "
                f"mel_bins={self.mel_bins} x stack={self.stack}"
            )

    @property
    def n_vectors(self) -> int:
        return self.values.shape[0]

    @property
    def dim(self) -> int:
        return self.values.shape[1]


# --- WAV ---------------------------------------------------------------------


def read_wav(path) -> Waveform:
    """Read a 16-bit PCM RIFF/WAVE file. Multi-channel input keeps channel 0."""
    path = Path(path)
    try:
        blob = path.read_bytes()
    except FileNotFoundError:
        raise WavNotFoundError(f"no such file: {path}") from None
    except IsADirectoryError:
        raise WavNotFoundError(f"not a file: {path}") from None

    if len(blob) < 12 or blob[:4] != b"RIFF" or blob[8:12] != b"WAVE":
        raise WavFormatError(f"{path}: not a RIFF/WAVE file")

    fmt = None
    data = None
    pos = 12
    while pos + 8 <= len(blob):
        chunk_id = blob[pos : pos + 4]
        (size,) = struct.unpack_from("<I", blob, pos + 4)
        body = blob[pos + 8 : pos + 8 + size]
        if chunk_id == b"fmt ":
            if len(body) < 16:
                raise WavFormatError(f"{path}: truncated fmt chunk")
            fmt = body
        elif chunk_id == b"data":
            if len(body) < size:
                raise WavFormatError(f"{path}: data chunk truncated ({len(body)} of {size} bytes)")
            data = body
            break
        pos += 8 + size + (size & 1)

    if fmt is None:
        raise WavFormatError(f"{path}: missing fmt chunk")
    if data is None:
        raise WavFormatError(f"{path}: missing data chunk")

    codec, channels, rate, _, block_align, bits = struct.unpack_from("<HHIIHH", fmt, 0)
    if codec == _EXTENSIBLE:
        if len(fmt) < 40 or fmt[26:40] != _PCM_SUBFORMAT_TAIL:
            raise UnsupportedCodecError(f"{path}: extensible format with non-PCM subformat")
        codec = struct.unpack_from("<H", fmt, 24)[0]
    if codec != _PCM:
        raise UnsupportedCodecError(f"{path}: format tag {codec:#06x} is not PCM")
    if bits != 16:
        raise UnsupportedCodecError(f"{path}: {bits}-bit samples, only 16-bit PCM is supported")
    if channels < 1 or rate == 0:
        raise WavFormatError(f"{path}: invalid channel count or sample rate")
    if block_align != 2 * channels:
        raise WavFormatError(f"{path}: block_align {block_align} inconsistent with {channels} channels")

    n_frames = len(data) // block_align
    if n_frames == 0:
        raise WavFormatError(f"{path}: no sample frames")
    pcm = np.frombuffer(data[: n_frames * block_align], dtype="<i2").reshape(n_frames, channels)
    return Waveform(pcm[:, 0].astype(np.float64) / 32768.0, int(rate))


def write_wav(path, waveform: Waveform) -> None:
    """Write mono 16-bit PCM; samples are clipped to [-1, 1) before quantising."""
    pcm = np.clip(np.round(np.asarray(waveform.samples) * 32768.0), -32768, 32767).astype("<i2")
    payload = pcm.tobytes()
    header = b"RIFF" + struct.pack("<I", 36 + len(payload)) + b"WAVE"
    header += b"fmt " + struct.pack(
        "<IHHIIHH", 16, _PCM, 1, waveform.sample_rate, 2 * waveform.sample_rate, 2, 16
    )
    header += b"data" + struct.pack("<I", len(payload))
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_suffix(path.suffix + ".part")
    tmp.write_bytes(header + payload)
    os.replace(tmp, path)


# --- spectral pipeline ---------------------------------------------------------


def hz_to_mel(f):
    return 2595.0 * np.log10(1.0 + np.asarray(f, dtype=np.float64) / 700.0)


def mel_to_hz(m):
    return 700.0 * (10.0 ** (np.asarray(m, dtype=np.float64) / 2595.0) - 1.0)


def n_frames(n_samples: int, cfg: SpectrogramConfig) -> int:
    if n_samples < cfg.frame_size:
        return 0
    return (n_samples - cfg.frame_size) // cfg.hop + 1


def stft_power(w: Waveform, cfg: SpectrogramConfig = SpectrogramConfig()) -> np.ndarray:
    """Power spectrogram |rfft(hann * frame)|^2, shape (frames, frame_size//2 + 1).

    Trailing samples that do not fill a frame are dropped.
    """
    x = np.asarray(w.samples, dtype=np.float64)
    t = n_frames(len(x), cfg)
    if t == 0:
        raise InputTooShortError(
            f"clip of {len(x)} samples is shorter than one frame ({cfg.frame_size})"
        )
    frames = np.lib.stride_tricks.sliding_window_view(x, cfg.frame_size)[:: cfg.hop][:t]
    # periodic Hann, the usual choice for STFT analysis
    window = 0.5 - 0.5 * np.cos(2.0 * np.pi * np.arange(cfg.frame_size) / cfg.frame_size)
    spec = np.fft.rfft(frames * window, axis=1)
    return spec.real**2 + spec.imag**2


def mel_center_frequencies(cfg: SpectrogramConfig) -> np.ndarray:
    """Edges and centers of the filterbank in Hz: ``mel_bins + 2`` points."""
    mels = np.linspace(hz_to_mel(cfg.fmin), hz_to_mel(cfg.upper_freq), cfg.mel_bins + 2)
    return mel_to_hz(mels)


def mel_filterbank(cfg: SpectrogramConfig = SpectrogramConfig()) -> np.ndarray:
    """Triangular filters (mel_bins, frame_size//2 + 1), each scaled to peak 1."""
    points = mel_center_frequencies(cfg)
    freqs = np.arange(cfg.n_fft_bins) * cfg.sample_rate / cfg.frame_size
    lower, center, upper = points[:-2, None], points[1:-1, None], points[2:, None]
    rising = (freqs - lower) / (center - lower)
    falling = (upper - freqs) / (upper - center)
    fb = np.maximum(0.0, np.minimum(rising, falling))
    peaks = fb.max(axis=1)
    empty = np.flatnonzero(peaks <= 0)
    if empty.size:
        raise ConfigurationError(
            f"{empty.size} mel filters contain no FFT bin (first: {empty[0]}); "
            f"reduce mel_bins or increase frame_size"
        )
    return fb / peaks[:, None]


def log_mel(power: np.ndarray, fb: np.ndarray, log_floor: float = 1e-10) -> np.ndarray:
    if power.ndim != 2 or fb.ndim != 2 or power.shape[1] != fb.shape[1]:
        raise ConfigurationError(
            f"power {power.shape} and filterbank {fb.shape} are not compatible"
        )
    return 10.0 * np.log10(np.maximum(power @ fb.T, log_floor))


def stack_frames(logmel: np.ndarray, stack: int = 5) -> FeatureMatrix:
    t, bins = logmel.shape
    if t < stack:
        raise InputTooShortError(f"{t} frames cannot be stacked {stack} at a time")
    windows = np.lib.stride_tricks.sliding_window_view(logmel, (stack, bins))[:, 0]
    return FeatureMatrix(windows.reshape(t - stack + 1, stack * bins).copy(), bins, stack)


def extract_features(source, cfg: SpectrogramConfig = SpectrogramConfig(), fb=None) -> FeatureMatrix:
    """Waveform or WAV path -> FeatureMatrix."""
    w = source if isinstance(source, Waveform) else read_wav(source)
    if w.sample_rate != cfg.sample_rate:
        raise ConfigurationError(
            f"clip sample rate {w.sample_rate} Hz differs from configured {cfg.sample_rate} Hz"
        )
    if fb is None:
        fb = mel_filterbank(cfg)
    return stack_frames(log_mel(stft_power(w, cfg), fb, cfg.log_floor), cfg.stack)
