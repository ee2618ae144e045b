"""Waveform -> log-mel spectrogram (LMS) frontend and the on-disk LMS cache.

The LMS matrix is the image-like audio representation the generators consume.
Frames are taken without padding, so a clip must cover at least one FFT
window; every log value is floored at ``log_floor`` so silence maps to a
constant matrix.
"""

import struct
from dataclasses import dataclass, field

import numpy as np
from PIL import Image
from scipy.io import wavfile

from .errors import DataError

#: natural log of the default minimum mel energy
DEFAULT_LOG_FLOOR = float(np.log(1e-5))

CACHE_MAGIC = b"LMS1"
CACHE_HEADER = struct.Struct("<4sIII")  # magic, mel_bins, time_frames, reserved


@dataclass(frozen=True)
class PreprocessConfig:
    """STFT / mel parameters. Defaults follow common speech-audio practice."""

    sample_rate: int = 16000
    clip_seconds: float = 0.5
    fft_size: int = 512
    hop_length: int = 256
    mel_bins: int = 128
    log_floor: float = DEFAULT_LOG_FLOOR

    def __post_init__(self):
        if self.sample_rate <= 0:
            raise ValueError("sample_rate must be positive")
        if self.fft_size <= 0 or self.hop_length <= 0:
            raise ValueError("fft_size and hop_length must be positive")
        if self.mel_bins <= 0:
            raise ValueError("mel_bins must be positive")
        if self.clip_seconds <= 0:
            raise ValueError("clip_seconds must be positive")


@dataclass
class Spectrogram:
    """Log-mel amplitude matrix for one fixed-duration clip."""

    values: np.ndarray  # (mel_bins, time_frames) float32, entries >= log_floor
    sample_rate: int
    clip_duration: float
    class_id: int = -1


def hz_to_mel(freq_hz):
    return 2595.0 * np.log10(1.0 + np.asarray(freq_hz, dtype=np.float64) / 700.0)


def mel_to_hz(mel):
    return 700.0 * (10.0 ** (np.asarray(mel, dtype=np.float64) / 2595.0) - 1.0)


def mel_filterbank(fft_size, sample_rate, mel_bins, f_min=0.0, f_max=None):
    """Triangular mel filters over the one-sided spectrum; each row peaks at 1.

    Returns a (mel_bins, fft_size // 2 + 1) non-negative matrix.
    """
    if f_max is None:
        f_max = sample_rate / 2.0
    freqs = np.linspace(0.0, sample_rate / 2.0, fft_size // 2 + 1)
    points = mel_to_hz(np.linspace(hz_to_mel(f_min), hz_to_mel(f_max), mel_bins + 2))
    bank = np.zeros((mel_bins, freqs.size), dtype=np.float64)
    for m in range(mel_bins):
        lo, center, hi = points[m], points[m + 1], points[m + 2]
        rising = (freqs - lo) / max(center - lo, 1e-12)
        falling = (hi - freqs) / max(hi - center, 1e-12)
        bank[m] = np.clip(np.minimum(rising, falling), 0.0, None)
    return bank


def mel_center_frequencies(config: PreprocessConfig) -> np.ndarray:
    """Center frequency in Hz of each mel filter."""
    points = mel_to_hz(
        np.linspace(hz_to_mel(0.0), hz_to_mel(config.sample_rate / 2.0), config.mel_bins + 2)
    )
    return points[1:-1]


def hann_window(size):
    # periodic Hann, the usual analysis window
    return 0.5 - 0.5 * np.cos(2.0 * np.pi * np.arange(size) / size)


def num_frames(n_samples, config: PreprocessConfig) -> int:
    return 1 + (n_samples - config.fft_size) // config.hop_length


def waveform_to_lms(samples, sample_rate, config: PreprocessConfig) -> Spectrogram:
    """Convert a mono waveform into its log-mel spectrogram.

    Frame count is ``1 + (len(samples) - fft_size) // hop_length`` (no
    padding); each entry is ``max(log(mel_energy), log_floor)``.
    """
    samples = np.asarray(samples, dtype=np.float64)
    if samples.ndim != 1 or samples.size == 0:
        raise DataError("expected a non-empty 1-D sample array")
    if not np.isfinite(samples).all():
        raise DataError("waveform contains non-finite samples")
    if sample_rate <= 0:
        raise DataError(f"sample rate must be positive, got {sample_rate}")
    if samples.size < config.fft_size:
        raise DataError(
            f"clip of {samples.size} samples is shorter than one FFT window "
            f"({config.fft_size} samples)"
        )

    frames = np.lib.stride_tricks.sliding_window_view(samples, config.fft_size)
    frames = frames[:: config.hop_length]
    window = hann_window(config.fft_size)
    spectrum = np.fft.rfft(frames * window, axis=1)
    power = spectrum.real**2 + spectrum.imag**2  # (time_frames, fft_size//2+1)

    bank = mel_filterbank(config.fft_size, sample_rate, config.mel_bins)
    mel_energy = power @ bank.T  # (time_frames, mel_bins)
    floor_energy = np.exp(config.log_floor)
    values = np.log(np.maximum(mel_energy, floor_energy)).T  # (mel_bins, time_frames)

    return Spectrogram(
        values=values.astype(np.float32),
        sample_rate=int(sample_rate),
        clip_duration=samples.size / float(sample_rate),
    )


def lms_to_net_input(values, resolution) -> np.ndarray:
    """Min-max normalize an LMS matrix to [-1, 1] and resize to a square plane.

    A constant matrix (e.g. silence) maps to all -1. Returns (1, res, res)
    float32; this is the single spectrogram channel fed to the networks.
    """
    values = np.asarray(values, dtype=np.float32)
    lo = float(values.min())
    hi = float(values.max())
    if hi - lo < 1e-12:
        norm = np.full_like(values, -1.0)
    else:
        norm = (values - lo) / (hi - lo) * 2.0 - 1.0
    img = Image.fromarray(norm, mode="F").resize((resolution, resolution), Image.BILINEAR)
    return np.asarray(img, dtype=np.float32)[None, :, :]


def write_lms_cache(path, values) -> None:
    """Write one LMS matrix: 16-byte header then row-major little-endian f32."""
    values = np.ascontiguousarray(values, dtype="<f4")
    if values.ndim != 2:
        raise ValueError("LMS cache stores a 2-D matrix")
    header = CACHE_HEADER.pack(CACHE_MAGIC, values.shape[0], values.shape[1], 0)
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(values.tobytes())


def read_lms_cache(path) -> np.ndarray:
    with open(path, "rb") as fh:
        raw = fh.read(CACHE_HEADER.size)
        if len(raw) != CACHE_HEADER.size:
            raise DataError(f"{path}: truncated LMS cache header")
        magic, mel_bins, time_frames, _reserved = CACHE_HEADER.unpack(raw)
        if magic != CACHE_MAGIC:
            raise DataError(f"{path}: not an LMS cache file (bad magic {magic!r})")
        body = fh.read()
    expected = mel_bins * time_frames * 4
    if len(body) != expected:
        raise DataError(
            f"{path}: LMS cache payload has {len(body)} bytes, expected {expected}"
        )
    values = np.frombuffer(body, dtype="<f4").reshape(mel_bins, time_frames)
    return np.array(values)  # writable copy


def read_wav(path):
    """Read a PCM WAV file; returns (mono float64 samples in [-1, 1], rate)."""
    try:
        rate, data = wavfile.read(path)
    except Exception as exc:  # scipy raises ValueError on malformed files
        raise DataError(f"{path}: cannot read WAV file ({exc})") from exc
    if data.size == 0:
        raise DataError(f"{path}: WAV file contains no samples")
    if data.dtype == np.int16:
        samples = data / 32768.0
    elif data.dtype == np.int32:
        samples = data / 2147483648.0
    elif data.dtype == np.uint8:
        samples = (data.astype(np.float64) - 128.0) / 128.0
    elif data.dtype in (np.float32, np.float64):
        samples = data.astype(np.float64)
    else:
        raise DataError(f"{path}: unsupported WAV sample format {data.dtype}")
    if samples.ndim == 2:  # mono mix
        samples = samples.mean(axis=1)
    return np.asarray(samples, dtype=np.float64), int(rate)


def write_wav(path, samples, sample_rate) -> None:
    """Write mono samples in [-1, 1] as 16-bit PCM."""
    clipped = np.clip(np.asarray(samples, dtype=np.float64), -1.0, 1.0)
    pcm = np.round(clipped * 32767.0).astype(np.int16)
    wavfile.write(path, int(sample_rate), pcm)
