"""MFCC feature extraction from 16-bit PCM WAV audio.

Classic pipeline: pre-emphasis, Hamming-windowed framing, power spectrum,
triangular mel filterbank, floored log, type-II DCT, optional delta and
delta-delta appension. Serves as the acoustic baseline feature extractor;
its 10 ms default hop matches the archive frame period used everywhere else.
"""

from __future__ import annotations

import wave
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.fft import dct

LOG_FLOOR = 1e-10
DELTA_WINDOW = 2


@dataclass(frozen=True)
class MfccConfig:
    sample_rate_hz: int = 16000
    window_ms: float = 25.0
    hop_ms: float = 10.0
    n_fft: int | None = None  # None: next power of two >= window length
    n_mel_filters: int = 40
    n_cepstra: int = 13
    pre_emphasis: float = 0.97
    include_deltas: bool = True

    def __post_init__(self):
        if self.sample_rate_hz < 1:
            raise ValueError("sample_rate_hz must be >= 1")
        if self.hop_ms > self.window_ms:
            raise ValueError("hop_ms must be <= window_ms")
        if self.hop_ms <= 0:
            raise ValueError("hop_ms must be > 0")
        if self.n_cepstra > self.n_mel_filters:
            raise ValueError("n_cepstra must be <= n_mel_filters")
        if self.n_cepstra < 1 or self.n_mel_filters < 1:
            raise ValueError("n_cepstra and n_mel_filters must be >= 1")
        if self.n_fft is not None and self.n_fft < self.window_samples:
            raise ValueError(
                f"n_fft ({self.n_fft}) must be >= window length in samples ({self.window_samples})"
            )

    @property
    def window_samples(self) -> int:
        return int(round(self.sample_rate_hz * self.window_ms / 1000.0))

    @property
    def hop_samples(self) -> int:
        return int(round(self.sample_rate_hz * self.hop_ms / 1000.0))

    @property
    def fft_size(self) -> int:
        if self.n_fft is not None:
            return self.n_fft
        n = 1
        while n < self.window_samples:
            n *= 2
        return n

    @property
    def dim(self) -> int:
        return self.n_cepstra * (3 if self.include_deltas else 1)

    @property
    def frame_period_us(self) -> int:
        return int(round(self.hop_ms * 1000.0))


def hz_to_mel(hz):
    return 2595.0 * np.log10(1.0 + np.asarray(hz, dtype=np.float64) / 700.0)


def mel_to_hz(mel):
    return 700.0 * (10.0 ** (np.asarray(mel, dtype=np.float64) / 2595.0) - 1.0)


def mel_filterbank(config: MfccConfig) -> np.ndarray:
    """Triangular filters (n_mel_filters x n_fft//2+1), peak 1 at each center.

    Centers are equally spaced on the mel scale between 0 Hz and Nyquist;
    each filter rises linearly from the previous center and falls to the next,
    evaluated at the FFT bin frequencies.
    """
    n_bins = config.fft_size // 2 + 1
    bin_freqs = np.arange(n_bins) * config.sample_rate_hz / config.fft_size
    mel_points = np.linspace(
        hz_to_mel(0.0), hz_to_mel(config.sample_rate_hz / 2.0), config.n_mel_filters + 2
    )
    edges = mel_to_hz(mel_points)
    bank = np.zeros((config.n_mel_filters, n_bins))
    for m in range(config.n_mel_filters):
        lo, center, hi = edges[m], edges[m + 1], edges[m + 2]
        rising = (bin_freqs - lo) / (center - lo)
        falling = (hi - bin_freqs) / (hi - center)
        bank[m] = np.clip(np.minimum(rising, falling), 0.0, None)
    return bank


def filter_centers_hz(config: MfccConfig) -> np.ndarray:
    mel_points = np.linspace(
        hz_to_mel(0.0), hz_to_mel(config.sample_rate_hz / 2.0), config.n_mel_filters + 2
    )
    return mel_to_hz(mel_points)[1:-1]


def frame_count(n_samples: int, config: MfccConfig) -> int:
    if n_samples < config.window_samples:
        raise ValueError(
            f"input has {n_samples} samples, shorter than one {config.window_samples}-sample window"
        )
    return (n_samples - config.window_samples) // config.hop_samples + 1


def deltas(coeffs: np.ndarray, window: int = DELTA_WINDOW) -> np.ndarray:
    """Regression deltas over +/-window frames with edge replication."""
    padded = np.pad(coeffs, ((window, window), (0, 0)), mode="edge")
    num = np.zeros_like(coeffs, dtype=np.float64)
    for n in range(1, window + 1):
        num += n * (padded[window + n : padded.shape[0] - window + n] - padded[window - n : -window - n])
    return num / (2.0 * sum(n * n for n in range(1, window + 1)))


def compute_mfcc(samples: np.ndarray, config: MfccConfig) -> np.ndarray:
    """Compute a T x dim MFCC matrix from mono audio samples."""
    x = np.asarray(samples, dtype=np.float64)
    if x.ndim != 1:
        raise ValueError(f"samples must be 1-D, got shape {x.shape}")
    n_frames = frame_count(x.shape[0], config)

    emphasized = np.empty_like(x)
    emphasized[0] = x[0]
    emphasized[1:] = x[1:] - config.pre_emphasis * x[:-1]

    win = config.window_samples
    idx = np.arange(n_frames)[:, None] * config.hop_samples + np.arange(win)[None, :]
    frames = emphasized[idx] * np.hamming(win)

    spectrum = np.fft.rfft(frames, n=config.fft_size, axis=1)
    power = (spectrum.real**2 + spectrum.imag**2) / config.fft_size
    energies = power @ mel_filterbank(config).T
    log_energies = np.log(np.maximum(energies, LOG_FLOOR))
    cepstra = dct(log_energies, type=2, axis=1, norm="ortho")[:, : config.n_cepstra]

    if not config.include_deltas:
        return cepstra
    d1 = deltas(cepstra)
    d2 = deltas(d1)
    return np.concatenate([cepstra, d1, d2], axis=1)


def read_wav(path: str | Path) -> tuple[np.ndarray, int]:
    """Read a mono 16-bit PCM WAV file; returns (samples in [-1, 1), sample_rate)."""
    with wave.open(str(path), "rb") as w:
        if w.getcomptype() != "NONE":
            raise ValueError(f"{path}: compressed WAV not supported ({w.getcomptype()})")
        if w.getnchannels() != 1:
            raise ValueError(f"{path}: expected mono audio, got {w.getnchannels()} channels")
        if w.getsampwidth() != 2:
            raise ValueError(f"{path}: expected 16-bit PCM, got {8 * w.getsampwidth()}-bit")
        n = w.getnframes()
        raw = w.readframes(n)
        rate = w.getframerate()
    samples = np.frombuffer(raw, dtype="<i2").astype(np.float64) / 32768.0
    return samples, rate


def write_wav(path: str | Path, samples: np.ndarray, sample_rate_hz: int) -> None:
    """Write mono float samples in [-1, 1] as 16-bit PCM (test/demo helper)."""
    pcm = np.clip(np.asarray(samples, dtype=np.float64), -1.0, 32767.0 / 32768.0)
    pcm = np.round(pcm * 32768.0).astype("<i2")
    with wave.open(str(path), "wb") as w:
        w.setnchannels(1)
        w.setsampwidth(2)
        w.setframerate(sample_rate_hz)
        w.writeframes(pcm.tobytes())


def extract_archive(wav_paths, config: MfccConfig):
    """Compute MFCCs for WAV files; yields (utt_id, frames) in sorted path order.

    utt_id is the file stem. Every file must match config.sample_rate_hz.
    """
    for path in sorted(Path(p) for p in wav_paths):
        samples, rate = read_wav(path)
        if rate != config.sample_rate_hz:
            raise ValueError(
                f"{path}: sample rate {rate} does not match configured {config.sample_rate_hz}"
            )
        yield path.stem, compute_mfcc(samples, config)
