import numpy as np
import pytest
import torch
from torch import nn

from avunit.modeling import (
    CheckpointError,
    EncoderBlock,
    LayerSpec,
    TrainConfig,
    build_layer,
    causal_bias,
    flatten_params,
    gradient_check,
    load_checkpoint,
    load_flat_checkpoint,
    lr_at,
    param_hash,
    save_checkpoint,
    save_flat_checkpoint,
    seeded_init,
    sinusoid_table,
    unflatten_params,
)


# ---------------------------------------------------------------------------
# layer specs


def test_layer_spec_validation():
    LayerSpec("linear", in_dim=4, out_dim=4)
    LayerSpec("self-attention", width=64, heads=4)
    with pytest.raises(ValueError):
        LayerSpec("linear", in_dim=0, out_dim=4)
    with pytest.raises(ValueError, match="divide"):
        LayerSpec("self-attention", width=64, heads=5)
    with pytest.raises(ValueError, match="unknown layer kind"):
        LayerSpec("pooling", width=4)


def test_build_layer_kinds():
    specs = [
        LayerSpec("embedding", vocab=10, out_dim=8),
        LayerSpec("self-attention", width=16, heads=2),
        LayerSpec("cross-attention", width=16, heads=2),
        LayerSpec("feed-forward", width=16, hidden=32),
        LayerSpec("layer-norm", width=16),
        LayerSpec("conv1d", in_dim=4, out_dim=8, kernel=3),
        LayerSpec("linear", in_dim=4, out_dim=8),
    ]
    for spec in specs:
        assert isinstance(build_layer(spec), nn.Module)


# ---------------------------------------------------------------------------
# seeded_init


def test_seeded_init_deterministic():
    spec = LayerSpec("linear", in_dim=8, out_dim=8)
    a = seeded_init(spec, seed=5)
    b = seeded_init(spec, seed=5)
    assert param_hash(a) == param_hash(b)


def test_seeded_init_seed_sensitivity():
    spec = LayerSpec("linear", in_dim=8, out_dim=8)
    a = seeded_init(spec, seed=5)
    b = seeded_init(spec, seed=6)
    assert param_hash(a) != param_hash(b)


def test_seeded_init_documented_bound():
    layer = seeded_init(LayerSpec("linear", in_dim=4, out_dim=4), seed=0)
    bound = 1.0 / np.sqrt(4)
    w = layer.weight.detach().numpy()
    assert np.all(np.abs(w) <= bound)
    assert np.all(layer.bias.detach().numpy() == 0)


def test_seeded_init_layer_norm_scale():
    block = seeded_init(EncoderBlock(16, 2, 32), seed=0)
    assert np.all(block.norm1.weight.detach().numpy() == 1.0)
    assert np.all(block.norm1.bias.detach().numpy() == 0.0)


# ---------------------------------------------------------------------------
# train config and schedule


def test_train_config_validation():
    TrainConfig(steps=10, warmup_steps=2, peak_lr=1e-3)
    with pytest.raises(ValueError):
        TrainConfig(steps=10, warmup_steps=11, peak_lr=1e-3)
    with pytest.raises(ValueError):
        TrainConfig(steps=10, warmup_steps=2, peak_lr=0.0)
    with pytest.raises(ValueError):
        TrainConfig(steps=10, warmup_steps=2, peak_lr=1e-3, schedule="cosine")


def test_lr_schedule_shape():
    cfg = TrainConfig(steps=100, warmup_steps=10, peak_lr=1.0)
    ramp = [lr_at(cfg, s) for s in range(10)]
    assert ramp == sorted(ramp)
    assert lr_at(cfg, 9) == pytest.approx(1.0)
    decay = [lr_at(cfg, s) for s in range(10, 100)]
    assert decay == sorted(decay, reverse=True)
    assert lr_at(cfg, 99) == pytest.approx(1.0 / 90)
    const = TrainConfig(steps=100, warmup_steps=10, peak_lr=0.5, schedule="constant")
    assert lr_at(const, 50) == 0.5


# ---------------------------------------------------------------------------
# gradient_check


class _SquaredLoss(nn.Module):
    def __init__(self, inner):
        super().__init__()
        self.inner = inner

    def forward(self, x, target):
        return ((self.inner(x) - target) ** 2).sum()


class _BlockLoss(nn.Module):
    def __init__(self, width, heads, hidden):
        super().__init__()
        self.block = EncoderBlock(width, heads, hidden)

    def forward(self, x, target):
        return ((self.block(x) - target) ** 2).mean()


def test_gradient_check_linear_quadratic():
    torch.manual_seed(0)
    frag = _SquaredLoss(seeded_init(LayerSpec("linear", in_dim=4, out_dim=3), seed=1))
    x = torch.randn(5, 4)
    target = torch.randn(5, 3)
    assert gradient_check(frag, (x, target)) < 1e-6


def test_gradient_check_transformer_block():
    torch.manual_seed(1)
    frag = _BlockLoss(8, 2, 16)
    seeded_init(frag, seed=2)
    x = torch.randn(1, 6, 8)
    target = torch.randn(1, 6, 8)
    assert gradient_check(frag, (x, target)) < 1e-4


def test_gradient_check_no_params_vacuous():
    class Empty(nn.Module):
        def forward(self, x):
            return (x**2).sum()

    assert gradient_check(Empty(), (torch.randn(3),)) == 0.0


def test_gradient_check_validates_eps_and_finiteness():
    frag = _SquaredLoss(seeded_init(LayerSpec("linear", in_dim=2, out_dim=2), seed=0))
    x = torch.randn(2, 2)
    t = torch.randn(2, 2)
    with pytest.raises(ValueError):
        gradient_check(frag, (x, t), eps=1e-2)
    with pytest.raises(ValueError, match="finite"):
        gradient_check(frag, (torch.full((2, 2), float("nan")), t))


def test_gradient_check_rejects_large_fragments():
    frag = _SquaredLoss(seeded_init(LayerSpec("linear", in_dim=200, out_dim=200), seed=0))
    with pytest.raises(ValueError, match="too large"):
        gradient_check(frag, (torch.randn(1, 200), torch.randn(1, 200)))


# ---------------------------------------------------------------------------
# checkpoints


def test_checkpoint_round_trip(tmp_path):
    model = seeded_init(EncoderBlock(16, 2, 32), seed=3)
    path = tmp_path / "m.ckpt"
    save_checkpoint(path, model, "block/16", step=42)
    other = EncoderBlock(16, 2, 32)
    step = load_checkpoint(path, other, "block/16")
    assert step == 42
    assert param_hash(other) == param_hash(model)


def test_checkpoint_rejects_spec_mismatch(tmp_path):
    model = seeded_init(EncoderBlock(16, 2, 32), seed=3)
    path = tmp_path / "m.ckpt"
    save_checkpoint(path, model, "block/16", step=1)
    with pytest.raises(CheckpointError, match="different model spec"):
        load_checkpoint(path, EncoderBlock(16, 2, 32), "block/32")


def test_checkpoint_rejects_garbage(tmp_path):
    path = tmp_path / "junk.ckpt"
    path.write_bytes(b"not a checkpoint")
    with pytest.raises(CheckpointError):
        load_flat_checkpoint(path, "x")


def test_flat_checkpoint_bytes(tmp_path):
    vec = np.arange(5, dtype=np.float32)
    path = tmp_path / "v.ckpt"
    save_flat_checkpoint(path, vec, "vec", step=7)
    out, step = load_flat_checkpoint(path, "vec")
    assert step == 7
    assert np.array_equal(out, vec)


def test_flatten_unflatten_round_trip():
    model = seeded_init(EncoderBlock(8, 2, 16), seed=1)
    flat = flatten_params(model)
    other = EncoderBlock(8, 2, 16)
    unflatten_params(other, flat)
    assert param_hash(other) == param_hash(model)
    with pytest.raises(ValueError, match="mismatch"):
        unflatten_params(other, flat[:-1])


# ---------------------------------------------------------------------------
# attention machinery


def test_causal_bias_blocks_future():
    bias = causal_bias(4)
    assert bias[0, 1] == float("-inf")
    assert bias[2, 1] == 0


def test_sinusoid_table_shape_and_range():
    table = sinusoid_table(32, 16)
    assert table.shape == (32, 16)
    assert float(table.abs().max()) <= 1.0
