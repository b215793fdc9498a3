"""
Numeric core shared by every trainable model.

Thin layer over torch: the activations and losses the models compose,
seeded initialization, Adam with linear learning-rate decay, a
finite-difference gradient checker and checkpoint (de)serialization of
module parameters.
"""

import logging
import math
import random
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Dict, Iterable, List, Optional, Sequence, Tuple, Union

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

from utils.errors import NonFiniteGradientError
from utils.storage import load_tensors, save_tensors

logger = logging.getLogger(__name__)

DEFAULT_DTYPE = torch.float64


def seed_everything(seed: int):
    """Seed python, numpy and torch generators."""
    random.seed(seed)
    np.random.seed(seed % (2 ** 32))
    torch.manual_seed(seed)


def leaky_relu(x: torch.Tensor, slope: float = 0.2) -> torch.Tensor:
    """x where x >= 0, slope * x elsewhere (gradient 1 at exactly 0)."""
    return torch.where(x >= 0, x, slope * x)


def softmax_nll(scores: torch.Tensor, positive_index: int) -> torch.Tensor:
    """-log softmax(scores)[positive_index] with max-subtraction."""
    shifted = scores - scores.max().detach()
    return -(shifted[positive_index] - torch.logsumexp(shifted, dim=-1))


def init_uniform_(module: nn.Module, seed: int):
    """uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) for weights, zeros for biases."""
    generator = torch.Generator().manual_seed(seed)
    with torch.no_grad():
        for name, param in module.named_parameters():
            if name.endswith("bias"):
                param.zero_()
                continue
            if param.dim() < 2:
                # norm gains and other vectors keep their constructor values
                continue
            fan_in = param.shape[-1]
            bound = 1.0 / math.sqrt(max(fan_in, 1))
            values = torch.rand(param.shape, generator=generator, dtype=torch.float64) * 2 * bound - bound
            param.copy_(values.to(param.dtype))
        for sub in module.modules():
            if isinstance(sub, nn.Embedding) and sub.padding_idx is not None:
                sub.weight[sub.padding_idx].zero_()
    for sub in module.modules():
        if hasattr(sub, "post_init_"):
            sub.post_init_()


def zero_grads(module: nn.Module):
    """Set every gradient buffer to exactly zero."""
    for param in module.parameters():
        if param.grad is None:
            param.grad = torch.zeros_like(param)
        else:
            param.grad.zero_()


@dataclass
class AdamConfig:
    lr0: float = 8e-4
    total_steps: int = 1
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    def lr_at(self, step: int) -> float:
        return self.lr0 * max(0.0, 1.0 - step / max(self.total_steps, 1))


class AdamTrainer:
    """
    Adam with step-t bias correction and linearly decayed learning rate.
    Owns the optimizer for exactly one module.
    """

    def __init__(self, module: nn.Module, cfg: AdamConfig):
        self.module = module
        self.cfg = cfg
        self.params = [(n, p) for n, p in module.named_parameters() if p.requires_grad]
        self.optimizer = torch.optim.Adam(
            [p for _, p in self.params],
            lr=cfg.lr0,
            betas=(cfg.beta1, cfg.beta2),
            eps=cfg.eps,
        )
        self.step_count = 0

    def step(self):
        """One update at the current step's learning rate."""
        for name, param in self.params:
            if param.grad is not None and not torch.isfinite(param.grad).all():
                raise NonFiniteGradientError(name)
        lr = self.cfg.lr_at(self.step_count)
        for group in self.optimizer.param_groups:
            group["lr"] = lr
        self.optimizer.step()
        self.step_count += 1

    def zero_grad(self):
        self.optimizer.zero_grad(set_to_none=False)


def adam_step(trainer: AdamTrainer, t: Optional[int] = None) -> AdamTrainer:
    """Apply one Adam update at step t (defaults to the trainer's own counter)."""
    if t is not None:
        trainer.step_count = t
    trainer.step()
    return trainer


ParamsLike = Union[nn.Module, Sequence[torch.Tensor]]


def _as_named(params: ParamsLike) -> List[Tuple[str, torch.Tensor]]:
    if isinstance(params, nn.Module):
        return [(n, p) for n, p in params.named_parameters() if p.requires_grad]
    return [(f"param{i}", p) for i, p in enumerate(params)]


def grad_check(
    f: Callable[[], torch.Tensor],
    params: ParamsLike,
    eps: float = 1e-6,
    samples_per_param: int = 8,
    seed: int = 0,
    atol: float = 1e-5,
) -> float:
    """
    Compare analytic gradients of scalar f() with central differences.

    Args:
        f: zero-argument deterministic closure returning a scalar tensor
        params: module or tensors (requires_grad) f depends on
        eps: finite-difference step
        samples_per_param: coordinates sampled per parameter tensor
        atol: floor of the relative-error denominator

    Returns:
        max relative error |a - n| / max(|a| + |n|, atol) over sampled coordinates
    """
    named = _as_named(params)
    tensors = [p for _, p in named]
    loss = f()
    analytic = torch.autograd.grad(loss, tensors, allow_unused=True)
    generator = torch.Generator().manual_seed(seed)

    worst = 0.0
    with torch.no_grad():
        for (name, param), grad in zip(named, analytic):
            grad = torch.zeros_like(param) if grad is None else grad
            flat = param.view(-1)
            count = min(samples_per_param, flat.numel())
            coords = torch.randperm(flat.numel(), generator=generator)[:count]
            for idx in coords.tolist():
                original = flat[idx].item()
                flat[idx] = original + eps
                plus = f().item()
                flat[idx] = original - eps
                minus = f().item()
                flat[idx] = original
                numeric = (plus - minus) / (2 * eps)
                exact = grad.reshape(-1)[idx].item()
                err = abs(exact - numeric) / max(abs(exact) + abs(numeric), atol)
                if err > worst:
                    worst = err
                    logger.debug("grad_check %s[%d]: analytic %.6g numeric %.6g", name, idx, exact, numeric)
    return worst


# ============ Checkpoints ============

def save_module(module: nn.Module, filepath: Path, metadata: Optional[Dict[str, str]] = None, prefix: str = ""):
    """Persist parameters and buffers under their qualified names."""
    tensors = {f"{prefix}{name}": tensor for name, tensor in module.state_dict().items()
               if tensor.is_floating_point()}
    save_tensors(filepath, tensors, metadata)


def load_module(module: nn.Module, filepath: Path, prefix: str = "") -> Dict[str, str]:
    """Load parameters saved by save_module; returns the checkpoint metadata."""
    dtype = next(module.parameters()).dtype
    tensors, metadata = load_tensors(filepath, dtype=dtype)
    state = {name[len(prefix):]: tensor for name, tensor in tensors.items() if name.startswith(prefix)}
    current = module.state_dict()
    for name, tensor in current.items():
        if not tensor.is_floating_point():
            state[name] = tensor
    module.load_state_dict(state)
    return metadata


def count_parameters(modules: Iterable[nn.Module]) -> int:
    return sum(p.numel() for m in modules for p in m.parameters() if p.requires_grad)


def masked_cross_entropy(logits: torch.Tensor, target: torch.Tensor, mask: torch.Tensor) -> torch.Tensor:
    """Cross-entropy per row restricted to positions where mask is True."""
    filled = logits.masked_fill(~mask, float("-inf"))
    return F.cross_entropy(filled, target, reduction="none")
