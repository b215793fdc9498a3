import math

import pytest
import torch
import torch.nn as nn

from ai.nncore import (
    AdamConfig,
    AdamTrainer,
    adam_step,
    count_parameters,
    grad_check,
    init_uniform_,
    leaky_relu,
    load_module,
    masked_cross_entropy,
    save_module,
    softmax_nll,
    zero_grads,
)
from utils.errors import NonFiniteGradientError
from utils.storage import checkpoint_metadata


def test_leaky_relu():
    x = torch.tensor([-2.0, 0.0, 3.0], dtype=torch.float64)
    assert leaky_relu(x, 0.2).tolist() == pytest.approx([-0.4, 0.0, 3.0])


def test_softmax_nll_singleton_is_zero():
    assert softmax_nll(torch.tensor([4.2], dtype=torch.float64), 0).item() == 0.0


def test_softmax_nll_value():
    scores = torch.tensor([0.0, math.log(3.0)], dtype=torch.float64)
    assert softmax_nll(scores, 1).item() == pytest.approx(-math.log(0.75))


def test_softmax_nll_is_shift_stable():
    scores = torch.tensor([1000.0, 1001.0], dtype=torch.float64)
    assert math.isfinite(softmax_nll(scores, 0).item())


def test_init_uniform_is_seeded_and_bounded():
    a, b = nn.Linear(16, 4).double(), nn.Linear(16, 4).double()
    init_uniform_(a, seed=5)
    init_uniform_(b, seed=5)
    assert torch.equal(a.weight, b.weight)
    assert a.weight.abs().max().item() <= 1.0 / math.sqrt(16)
    assert torch.count_nonzero(a.bias).item() == 0


def test_init_uniform_zeroes_padding_rows():
    emb = nn.Embedding(10, 4, padding_idx=0).double()
    init_uniform_(emb, seed=1)
    assert torch.count_nonzero(emb.weight[0]).item() == 0


def test_lr_decays_linearly():
    cfg = AdamConfig(lr0=1e-3, total_steps=10)
    assert cfg.lr_at(0) == pytest.approx(1e-3)
    assert cfg.lr_at(5) == pytest.approx(5e-4)
    assert cfg.lr_at(10) == 0.0
    assert cfg.lr_at(12) == 0.0


def test_first_adam_step_moves_by_lr():
    layer = nn.Linear(1, 1, bias=False).double()
    with torch.no_grad():
        layer.weight.fill_(1.0)
    trainer = AdamTrainer(layer, AdamConfig(lr0=0.1, total_steps=100))
    trainer.zero_grad()
    (layer.weight.sum() * 3.0).backward()
    adam_step(trainer)
    assert layer.weight.item() == pytest.approx(0.9, abs=1e-6)
    assert trainer.step_count == 1


def test_all_zero_gradients_leave_parameters_unchanged():
    layer = nn.Linear(3, 2).double()
    init_uniform_(layer, seed=2)
    before = [p.detach().clone() for p in layer.parameters()]
    trainer = AdamTrainer(layer, AdamConfig(lr0=0.1, total_steps=10))
    for _ in range(3):
        trainer.zero_grad()
        (layer.weight.sum() * 0.0 + layer.bias.sum() * 0.0).backward()
        adam_step(trainer)
    assert all(torch.equal(a, b) for a, b in zip(before, layer.parameters()))


def test_step_at_the_end_of_the_schedule_leaves_parameters_unchanged():
    layer = nn.Linear(3, 2).double()
    init_uniform_(layer, seed=3)
    before = [p.detach().clone() for p in layer.parameters()]
    trainer = AdamTrainer(layer, AdamConfig(lr0=0.1, total_steps=10))
    trainer.zero_grad()
    layer(torch.ones(1, 3, dtype=torch.float64)).sum().backward()
    adam_step(trainer, t=10)
    assert all(torch.equal(a, b) for a, b in zip(before, layer.parameters()))
    assert trainer.step_count == 11



def test_non_finite_gradient_names_parameter():
    layer = nn.Linear(2, 1).double()
    trainer = AdamTrainer(layer, AdamConfig())
    zero_grads(layer)
    layer.weight.grad.fill_(float("nan"))
    with pytest.raises(NonFiniteGradientError, match="weight"):
        trainer.step()


def test_zero_grads_fills_missing_buffers():
    layer = nn.Linear(2, 2).double()
    zero_grads(layer)
    assert all(torch.count_nonzero(p.grad).item() == 0 for p in layer.parameters())


def test_grad_check_on_smooth_function():
    w = torch.randn(5, dtype=torch.float64, requires_grad=True)
    assert grad_check(lambda: (w.sin() * w).sum(), [w]) < 1e-6


def test_grad_check_detects_wrong_gradient():
    w = torch.randn(3, dtype=torch.float64, requires_grad=True)

    class Wrong(torch.autograd.Function):
        @staticmethod
        def forward(ctx, x):
            return (x ** 2).sum()

        @staticmethod
        def backward(ctx, grad):
            return grad * torch.ones(3, dtype=torch.float64)

    assert grad_check(lambda: Wrong.apply(w), [w]) > 1e-2


def test_module_checkpoint_round_trip(tmp_path):
    layer = nn.Linear(3, 2).double()
    init_uniform_(layer, seed=2)
    path = tmp_path / "layer.tensors"
    save_module(layer, path, {"kind": "test"})

    other = nn.Linear(3, 2).double()
    meta = load_module(other, path)
    assert meta["kind"] == "test"
    assert checkpoint_metadata(path)["kind"] == "test"
    assert torch.allclose(layer.weight, other.weight, atol=1e-6)
    assert count_parameters([layer]) == 8


def test_masked_cross_entropy_ignores_masked_positions():
    logits = torch.tensor([[0.0, 100.0, 0.0]], dtype=torch.float64)
    mask = torch.tensor([[True, False, True]])
    loss = masked_cross_entropy(logits, torch.tensor([0]), mask)
    assert loss.item() == pytest.approx(math.log(2.0))


def test_masked_cross_entropy_singleton():
    logits = torch.tensor([[1.5, 9.0]], dtype=torch.float64)
    mask = torch.tensor([[True, False]])
    assert masked_cross_entropy(logits, torch.tensor([0]), mask).item() == 0.0
