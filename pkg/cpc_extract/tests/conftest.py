import wave

import numpy as np
import pytest

from cpc_extract import new_model, save_checkpoint


def write_wav(path, samples, rate_hz=16000, channels=1, sampwidth=2):
    pcm = np.clip(np.asarray(samples, dtype=np.float64), -1.0, 32767.0 / 32768.0)
    pcm = np.round(pcm * 32768.0).astype("<i2")
    if channels > 1:
        pcm = np.repeat(pcm, channels)
    if sampwidth == 1:
        pcm = ((pcm.astype(np.int32) // 256) + 128).astype(np.uint8)
    with wave.open(str(path), "wb") as w:
        w.setnchannels(channels)
        w.setsampwidth(sampwidth)
        w.setframerate(rate_hz)
        w.writeframes(pcm.tobytes())


@pytest.fixture(scope="session")
def model():
    return new_model(seed=0)


@pytest.fixture(scope="session")
def checkpoint(model, tmp_path_factory):
    path = tmp_path_factory.mktemp("ckpt") / "cpc.pt"
    save_checkpoint(model, path)
    return path


@pytest.fixture(scope="session")
def audio_dir(tmp_path_factory):
    """Three mono 16 kHz WAVs with distinct lengths (one not hop-aligned)."""
    root = tmp_path_factory.mktemp("audio")
    rng = np.random.default_rng(0)
    for utt_id, n in (("a", 16000), ("b", 8000), ("c", 12347)):
        t = np.arange(n) / 16000.0
        samples = 0.3 * np.sin(2 * np.pi * 440.0 * t) + 0.05 * rng.standard_normal(n)
        write_wav(root / f"{utt_id}.wav", samples)
    return root
