"""Batch feature extraction from WAV files into a feature archive.

Two context regimes:

* ``utterance`` (default): the LSTM state starts from zeros for every file,
  so each record depends only on its own audio. Each file runs through the
  convolutional front end individually (batch-padding a convolution is not
  neutral: a padded zero window still yields bias -> norm -> ReLU
  activations that deeper layers would see); the resulting frame sequences
  are then padded into one batch for the causal LSTM and trimmed back to
  their exact frame counts, which is exactly equivalent to per-file
  forwards.
* ``streaming``: the recurrent state is carried across files in sorted
  order, as if the directory were one continuous audio stream; files are
  necessarily processed one at a time.
"""

from __future__ import annotations

import wave
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch

from .archive import write_archive
from .model import conv_frame_count, load_checkpoint

FRAME_PERIOD_US = 10_000  # 160-sample hop at 16 kHz
MODES = ("utterance", "streaming")


class AudioError(Exception):
    """A WAV file could not be used as model input."""


@dataclass(frozen=True)
class ExtractConfig:
    checkpoint: str | Path
    audio_dir: str | Path
    out: str | Path
    layer: int = 2  # 1-indexed context LSTM layer
    batch_size: int = 8
    mode: str = "utterance"
    sample_rate_hz: int = 16000

    def __post_init__(self):
        if self.layer < 1:
            raise ValueError(f"layer must be >= 1, got {self.layer}")
        if self.batch_size < 1:
            raise ValueError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}, got {self.mode!r}")
        if self.sample_rate_hz < 1:
            raise ValueError(f"sample_rate_hz must be >= 1, got {self.sample_rate_hz}")


@dataclass(frozen=True)
class ExtractReport:
    out: str
    dim: int
    frame_period_us: int
    layer: int
    mode: str
    n_files: int
    total_frames: int
    files: tuple[tuple[str, int], ...]  # (utt_id, n_frames), archive order

    def as_dict(self) -> dict:
        return {
            "out": self.out,
            "dim": self.dim,
            "frame_period_us": self.frame_period_us,
            "layer": self.layer,
            "mode": self.mode,
            "n_files": self.n_files,
            "total_frames": self.total_frames,
            "files": [[utt_id, n] for utt_id, n in self.files],
        }


def read_wav(path: str | Path, expected_rate_hz: int) -> np.ndarray:
    """Read mono 16-bit PCM WAV samples scaled to [-1, 1)."""
    try:
        with wave.open(str(path), "rb") as w:
            if w.getcomptype() != "NONE":
                raise AudioError(f"{path}: compressed WAV not supported ({w.getcomptype()})")
            if w.getnchannels() != 1:
                raise AudioError(f"{path}: expected mono audio, got {w.getnchannels()} channels")
            if w.getsampwidth() != 2:
                raise AudioError(f"{path}: expected 16-bit PCM, got {8 * w.getsampwidth()}-bit")
            if w.getframerate() != expected_rate_hz:
                raise AudioError(
                    f"{path}: sample rate {w.getframerate()} does not match "
                    f"expected {expected_rate_hz}"
                )
            raw = w.readframes(w.getnframes())
    except wave.Error as e:
        raise AudioError(f"{path}: not a readable WAV file ({e})") from None
    return np.frombuffer(raw, dtype="<i2").astype(np.float32) / 32768.0


def _wav_paths(audio_dir: str | Path) -> list[Path]:
    audio_dir = Path(audio_dir)
    if not audio_dir.is_dir():
        raise FileNotFoundError(f"audio directory not found: {audio_dir}")
    paths = sorted(audio_dir.glob("*.wav"))
    if not paths:
        raise FileNotFoundError(f"no .wav files in {audio_dir}")
    stems = [p.stem for p in paths]
    if len(set(stems)) != len(stems):
        dupes = sorted({s for s in stems if stems.count(s) > 1})
        raise AudioError(f"duplicate utterance ids from file stems: {dupes}")
    return paths


def _utterance_batches(model, paths, config):
    for start in range(0, len(paths), config.batch_size):
        batch = paths[start : start + config.batch_size]
        waves = [read_wav(p, config.sample_rate_hz) for p in batch]
        n_frames = [_frame_count_or_error(p, w) for p, w in zip(batch, waves)]
        encoded = [
            model.encoder(torch.from_numpy(w).unsqueeze(0)).squeeze(0) for w in waves
        ]
        x = torch.zeros(len(batch), max(n_frames), model.hidden_size)
        for row, frames in zip(x, encoded):
            row[: frames.shape[0]] = frames
        outputs, _ = model.context(x)
        for path, t, row in zip(batch, n_frames, outputs[config.layer - 1]):
            yield path.stem, row[:t].cpu().numpy()


def _streaming_records(model, paths, config):
    states = None
    for path in paths:
        w = read_wav(path, config.sample_rate_hz)
        _frame_count_or_error(path, w)
        x = torch.from_numpy(w).unsqueeze(0)
        features, states = model(x, config.layer, states)
        yield path.stem, features.squeeze(0).cpu().numpy()


def _frame_count_or_error(path: Path, samples: np.ndarray) -> int:
    try:
        return conv_frame_count(samples.shape[0])
    except ValueError as e:
        raise AudioError(f"{path}: {e}") from None


def extract_features(config: ExtractConfig) -> ExtractReport:
    """Run the model over every WAV in the audio directory; write the archive."""
    paths = _wav_paths(config.audio_dir)
    model = load_checkpoint(config.checkpoint)
    model.check_layer(config.layer)
    with torch.inference_mode():
        if config.mode == "streaming":
            records = _streaming_records(model, paths, config)
        else:
            records = _utterance_batches(model, paths, config)
        written = write_archive(config.out, model.hidden_size, FRAME_PERIOD_US, records)
    return ExtractReport(
        out=str(config.out),
        dim=model.hidden_size,
        frame_period_us=FRAME_PERIOD_US,
        layer=config.layer,
        mode=config.mode,
        n_files=len(written),
        total_frames=sum(n for _, n in written),
        files=written,
    )
