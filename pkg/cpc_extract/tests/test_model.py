import re

import pytest
import torch

from cpc_extract import (
    CONTEXT_HIDDEN,
    CONTEXT_LAYERS,
    CheckpointError,
    LayerError,
    conv_frame_count,
    load_checkpoint,
    new_model,
)
from cpc_extract.model import ContextLstm


class TestFrameArithmetic:
    def test_known_counts(self):
        assert conv_frame_count(16000) == 100  # 1 s at 16 kHz -> one frame per 10 ms
        assert conv_frame_count(8000) == 50
        assert conv_frame_count(160) == 1

    def test_too_short_raises(self):
        with pytest.raises(ValueError, match="too short"):
            conv_frame_count(100)

    @pytest.mark.parametrize("n_samples", [160, 3200, 12347, 16000])
    def test_forward_honors_exact_count(self, model, n_samples):
        torch.manual_seed(1)
        x = torch.randn(1, n_samples)
        with torch.inference_mode():
            features, states = model(x, 2)
        assert features.shape == (1, conv_frame_count(n_samples), CONTEXT_HIDDEN)
        assert len(states) == CONTEXT_LAYERS

    def test_forward_rejects_too_short(self, model):
        with pytest.raises(ValueError, match="too short"):
            with torch.inference_mode():
                model(torch.zeros(1, 100), 2)


class TestForward:
    def test_deterministic(self, model):
        torch.manual_seed(2)
        x = torch.randn(1, 3200)
        with torch.inference_mode():
            a, _ = model(x, 2)
            b, _ = model(x, 2)
        assert torch.equal(a, b)

    def test_layers_give_different_features(self, model):
        torch.manual_seed(3)
        x = torch.randn(1, 3200)
        with torch.inference_mode():
            outs = [model(x, layer)[0] for layer in range(1, CONTEXT_LAYERS + 1)]
        for i in range(len(outs)):
            for j in range(i + 1, len(outs)):
                assert not torch.allclose(outs[i], outs[j])

    @pytest.mark.parametrize("layer", [0, 5, -1])
    def test_invalid_layer_rejected(self, model, layer):
        with pytest.raises(LayerError, match="1..4"):
            model.check_layer(layer)

    def test_model_in_eval_mode(self, model):
        assert not model.training


class TestStateCarrying:
    def test_chunked_lstm_equals_whole_pass(self):
        torch.manual_seed(4)
        lstm = ContextLstm().eval()
        x = torch.randn(1, 40, CONTEXT_HIDDEN)
        with torch.inference_mode():
            whole, _ = lstm(x)
            first, states = lstm(x[:, :25])
            second, _ = lstm(x[:, 25:], states)
        for layer in range(CONTEXT_LAYERS):
            rejoined = torch.cat([first[layer], second[layer]], dim=1)
            assert torch.allclose(whole[layer], rejoined, atol=1e-6)

    def test_carried_state_changes_output(self, model):
        torch.manual_seed(5)
        x = torch.randn(1, 3200)
        with torch.inference_mode():
            fresh, states = model(x, 2)
            carried, _ = model(x, 2, states)
        assert not torch.allclose(fresh, carried)


def _reference_output(model):
    torch.manual_seed(6)
    x = torch.randn(1, 3200)
    with torch.inference_mode():
        features, _ = model(x, 2)
    return x, features


def _published_names(state):
    """Rewrite our canonical parameter names into the published scheme."""
    out = {}
    for key, value in state.items():
        m = re.match(r"^encoder\.convs\.(\d+)\.(weight|bias)$", key)
        if m:
            out[f"gEncoder.conv{m.group(1)}.{m.group(2)}"] = value
            continue
        m = re.match(r"^encoder\.norms\.(\d+)\.(weight|bias)$", key)
        if m:
            out[f"gEncoder.batchNorm{m.group(1)}.{m.group(2)}"] = value
            continue
        m = re.match(r"^context\.layers\.(\d+)\.(weight|bias)_(ih|hh)_l0$", key)
        if m:
            out[f"gAR.baseNet.{m.group(2)}_{m.group(3)}_l{m.group(1)}"] = value
            continue
        raise AssertionError(f"unmapped key {key}")
    return out


class TestCheckpointLoading:
    def test_roundtrip_identical(self, model, checkpoint):
        loaded = load_checkpoint(checkpoint)
        x, want = _reference_output(model)
        with torch.inference_mode():
            got, _ = loaded(x, 2)
        assert torch.equal(got, want)

    @pytest.mark.parametrize("wrapper", ["state_dict", "model", "weights", "best_state"])
    def test_wrapped_state_dict(self, model, tmp_path, wrapper):
        path = tmp_path / "wrapped.pt"
        torch.save({wrapper: model.state_dict(), "epoch": 7}, path)
        loaded = load_checkpoint(path)
        x, want = _reference_output(model)
        with torch.inference_mode():
            got, _ = loaded(x, 2)
        assert torch.equal(got, want)

    def test_module_prefix(self, model, tmp_path):
        path = tmp_path / "ddp.pt"
        torch.save({f"module.{k}": v for k, v in model.state_dict().items()}, path)
        loaded = load_checkpoint(path)
        x, want = _reference_output(model)
        with torch.inference_mode():
            got, _ = loaded(x, 2)
        assert torch.equal(got, want)

    def test_published_naming_scheme(self, model, tmp_path):
        state = _published_names(model.state_dict())
        state["cpcCriterion.wPrediction.weight"] = torch.zeros(8, 8)  # ignored extras
        path = tmp_path / "published.pt"
        torch.save({"weights": state}, path)
        loaded = load_checkpoint(path)
        x, want = _reference_output(model)
        with torch.inference_mode():
            got, _ = loaded(x, 2)
        assert torch.equal(got, want)

    def test_missing_file(self, tmp_path):
        with pytest.raises(FileNotFoundError):
            load_checkpoint(tmp_path / "nope.pt")

    def test_garbage_file(self, tmp_path):
        path = tmp_path / "garbage.pt"
        path.write_bytes(b"not a checkpoint at all")
        with pytest.raises(CheckpointError, match="not a readable checkpoint"):
            load_checkpoint(path)

    def test_incomplete_state_dict(self, model, tmp_path):
        state = dict(list(model.state_dict().items())[:4])
        path = tmp_path / "partial.pt"
        torch.save(state, path)
        with pytest.raises(CheckpointError, match="topology"):
            load_checkpoint(path)

    def test_wrong_shapes(self, model, tmp_path):
        state = {k: torch.zeros_like(v)[..., :1] for k, v in model.state_dict().items()}
        path = tmp_path / "shapes.pt"
        torch.save(state, path)
        with pytest.raises(CheckpointError, match="topology"):
            load_checkpoint(path)

    def test_no_matching_parameters(self, tmp_path):
        path = tmp_path / "foreign.pt"
        torch.save({"something.else": torch.zeros(3)}, path)
        with pytest.raises(CheckpointError, match="no encoder/context parameters"):
            load_checkpoint(path)

    def test_not_a_state_dict(self, tmp_path):
        path = tmp_path / "tensor.pt"
        torch.save(torch.zeros(3), path)
        with pytest.raises(CheckpointError):
            load_checkpoint(path)

    def test_seeded_init_reproducible(self):
        a = new_model(seed=11).state_dict()
        b = new_model(seed=11).state_dict()
        assert all(torch.equal(a[k], b[k]) for k in a)
