"""Pretrained CPC speech encoder: strided convolutions plus a deep LSTM.

The topology matches the widely published "CPC-big" configuration: five
1-D convolutions (512 channels, kernels 10/8/4/4/4, strides 5/4/2/2/2,
each followed by a per-step channel normalization and ReLU) producing one
512-dim frame per 160 input samples -- 10 ms at 16 kHz -- and a 4-layer
LSTM context network (hidden size 512) on top. Features are the hidden
states of a selectable LSTM layer.

`load_checkpoint` accepts plain state dicts, common wrapper dicts
(`state_dict` / `model` / `weights` / `best_state`, with or without a
`module.` prefix), and the published naming scheme
(`gEncoder.convN` / `gEncoder.batchNormN` / `gAR.baseNet.*_lN`).
Parameters outside the encoder/context stack (training criteria,
prediction heads) are ignored.
"""

from __future__ import annotations

import re
from pathlib import Path

import torch
from torch import nn

ENCODER_CHANNELS = 512
ENCODER_KERNELS = (10, 8, 4, 4, 4)
ENCODER_STRIDES = (5, 4, 2, 2, 2)
ENCODER_PADDINGS = (3, 2, 1, 1, 1)
CONTEXT_LAYERS = 4
CONTEXT_HIDDEN = 512
HOP_SAMPLES = 160  # product of the strides: one frame per 10 ms at 16 kHz

# Per-layer LSTM state: (hidden, cell) for each layer, or None for zeros.
LayerStates = list[tuple[torch.Tensor, torch.Tensor]] | None


class CheckpointError(Exception):
    """Checkpoint is unreadable or does not match the CPC topology."""


class LayerError(Exception):
    """Requested context layer does not exist in the loaded model."""


def conv_frame_count(n_samples: int) -> int:
    """Exact number of output frames the convolution stack yields.

    Roughly n_samples / 160; exact per-layer arithmetic is
    (length + 2*padding - kernel) // stride + 1.
    """
    length = int(n_samples)
    for kernel, stride, pad in zip(ENCODER_KERNELS, ENCODER_STRIDES, ENCODER_PADDINGS):
        length = (length + 2 * pad - kernel) // stride + 1
        if length < 1:
            raise ValueError(
                f"audio too short: {n_samples} samples yield no output frames"
            )
    return length


class ChannelNorm(nn.Module):
    """Normalize each time step across channels, with a learned affine map."""

    def __init__(self, channels: int, eps: float = 1e-5):
        super().__init__()
        self.eps = eps
        self.weight = nn.Parameter(torch.ones(1, channels, 1))
        self.bias = nn.Parameter(torch.zeros(1, channels, 1))

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        mean = x.mean(dim=1, keepdim=True)
        var = x.var(dim=1, keepdim=True, unbiased=True)
        return (x - mean) * torch.rsqrt(var + self.eps) * self.weight + self.bias


class ConvEncoder(nn.Module):
    """Five strided convolutions mapping (B, samples) to (B, frames, 512)."""

    def __init__(self):
        super().__init__()
        self.convs = nn.ModuleList()
        self.norms = nn.ModuleList()
        in_channels = 1
        for kernel, stride, pad in zip(ENCODER_KERNELS, ENCODER_STRIDES, ENCODER_PADDINGS):
            self.convs.append(
                nn.Conv1d(in_channels, ENCODER_CHANNELS, kernel, stride=stride, padding=pad)
            )
            self.norms.append(ChannelNorm(ENCODER_CHANNELS))
            in_channels = ENCODER_CHANNELS

    def forward(self, waveform: torch.Tensor) -> torch.Tensor:
        x = waveform.unsqueeze(1)
        for conv, norm in zip(self.convs, self.norms):
            x = torch.relu(norm(conv(x)))
        return x.transpose(1, 2)


class ContextLstm(nn.Module):
    """Four stacked single-layer LSTMs, so every layer's output is observable."""

    def __init__(self):
        super().__init__()
        self.layers = nn.ModuleList(
            nn.LSTM(CONTEXT_HIDDEN, CONTEXT_HIDDEN, batch_first=True)
            for _ in range(CONTEXT_LAYERS)
        )

    def forward(
        self, x: torch.Tensor, states: LayerStates = None
    ) -> tuple[list[torch.Tensor], list[tuple[torch.Tensor, torch.Tensor]]]:
        """Run all layers; returns per-layer output sequences and final states."""
        if states is None:
            states = [None] * len(self.layers)
        outputs, finals = [], []
        for layer, state in zip(self.layers, states):
            x, final = layer(x, state)
            outputs.append(x)
            finals.append(final)
        return outputs, finals


class CpcEncoder(nn.Module):
    """Convolutional front end plus LSTM context network."""

    def __init__(self):
        super().__init__()
        self.encoder = ConvEncoder()
        self.context = ContextLstm()

    @property
    def hidden_size(self) -> int:
        return CONTEXT_HIDDEN

    @property
    def n_context_layers(self) -> int:
        return len(self.context.layers)

    def check_layer(self, layer: int) -> None:
        if not 1 <= layer <= self.n_context_layers:
            raise LayerError(
                f"layer must be in 1..{self.n_context_layers}, got {layer}"
            )

    def forward(
        self, waveform: torch.Tensor, layer: int, states: LayerStates = None
    ) -> tuple[torch.Tensor, list[tuple[torch.Tensor, torch.Tensor]]]:
        """Features of the given context layer (1-indexed) for (B, samples) audio.

        Returns (B, frames, hidden) features and the final per-layer LSTM
        states, so a caller can carry context across consecutive inputs.
        """
        self.check_layer(layer)
        conv_frame_count(waveform.shape[-1])  # reject too-short audio up front
        outputs, finals = self.context(self.encoder(waveform), states)
        return outputs[layer - 1], finals


def new_model(seed: int | None = None) -> CpcEncoder:
    """Freshly initialized model (seeded when given); useful for tests/demos."""
    if seed is not None:
        torch.manual_seed(seed)
    return CpcEncoder().eval()


def save_checkpoint(model: CpcEncoder, dest: str | Path) -> None:
    torch.save(model.state_dict(), str(dest))


_PUBLISHED_PATTERNS = (
    (re.compile(r"^gEncoder\.conv(\d+)\.(weight|bias)$"), r"encoder.convs.\1.\2"),
    (re.compile(r"^gEncoder\.batchNorm(\d+)\.(weight|bias)$"), r"encoder.norms.\1.\2"),
    (
        re.compile(r"^gAR\.baseNet\.(weight|bias)_(ih|hh)_l(\d+)$"),
        r"context.layers.\3.\1_\2_l0",
    ),
)
_WRAPPER_KEYS = ("state_dict", "model", "weights", "best_state")


def _unwrap(raw) -> dict:
    if not isinstance(raw, dict):
        raise CheckpointError(
            f"checkpoint must hold a state dict, got {type(raw).__name__}"
        )
    if raw and all(isinstance(v, torch.Tensor) for v in raw.values()):
        return raw
    for key in _WRAPPER_KEYS:
        inner = raw.get(key)
        if isinstance(inner, dict):
            return _unwrap(inner)
    raise CheckpointError(
        f"no tensor state dict found (top-level keys: {sorted(map(str, raw))[:8]})"
    )


def _normalize_state_dict(raw) -> dict[str, torch.Tensor]:
    state = {}
    for key, value in _unwrap(raw).items():
        if key.startswith("module."):
            key = key[len("module."):]
        for pattern, replacement in _PUBLISHED_PATTERNS:
            match = pattern.match(key)
            if match:
                key = match.expand(replacement)
                break
        if key.startswith(("encoder.", "context.")):
            state[key] = value
    if not state:
        raise CheckpointError("no encoder/context parameters found in checkpoint")
    return state


def load_checkpoint(path: str | Path) -> CpcEncoder:
    """Load a pretrained model in inference mode; see module docstring for formats."""
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"checkpoint not found: {path}")
    try:
        raw = torch.load(path, map_location="cpu", weights_only=True)
    except Exception as e:
        raise CheckpointError(f"{path}: not a readable checkpoint ({e})") from e
    model = CpcEncoder()
    try:
        model.load_state_dict(_normalize_state_dict(raw), strict=True)
    except RuntimeError as e:
        raise CheckpointError(
            f"{path}: parameters do not match the CPC topology: {e}"
        ) from e
    return model.eval()
