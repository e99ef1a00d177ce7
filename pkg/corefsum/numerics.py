"""
Deterministic 64-bit tensor building blocks.

Everything runs on CPU in ``torch.float64``. Randomness (initialization and
dropout masks) is drawn only from an explicit ``RngState`` so two runs with
the same seed produce identical numbers.
"""

import logging
import math
from dataclasses import dataclass, field
from typing import Callable, Iterable, List, Mapping, Optional, Sequence, Tuple

import torch
import torch.nn.functional as F
from torch import nn

from .exceptions import ConfigurationError, NumericError, ShapeError


logger = logging.getLogger(__name__)

DTYPE = torch.float64
INIT_BOUND = 0.08
LAYER_NORM_EPS = 1e-5
DEFAULT_DROPOUT = 0.1
GRADIENT_STEP = 1e-5
GRADIENT_TOLERANCE = 1e-4
# gradients smaller than this are compared in absolute terms
GRADIENT_FLOOR = 1e-3


class RngState:
    """Seeded random stream; identical seeds give identical draws."""

    def __init__(self, seed: int):
        self.seed = int(seed)
        self.counter = 0
        self.generator = torch.Generator(device="cpu")
        self.generator.manual_seed(self.seed)

    def fork(self, offset: int) -> "RngState":
        """Independent stream derived from this seed."""
        return RngState(self.seed * 1_000_003 + offset)

    def uniform(self, shape: Sequence[int], low: float, high: float) -> torch.Tensor:
        self.counter += 1
        draw = torch.rand(tuple(shape), generator=self.generator, dtype=DTYPE)
        return draw * (high - low) + low

    def randperm(self, n: int) -> List[int]:
        self.counter += 1
        return torch.randperm(n, generator=self.generator).tolist()


def init_uniform_(tensor: torch.Tensor, rng: RngState, bound: float = INIT_BOUND) -> None:
    """Fill ``tensor`` in place from U[-bound, bound]."""
    with torch.no_grad():
        tensor.copy_(rng.uniform(tensor.shape, -bound, bound))


def linear(x: torch.Tensor, weight: torch.Tensor, bias: torch.Tensor) -> torch.Tensor:
    """y = xW + b with W stored as (in_features, out_features)."""
    if weight.dim() != 2 or x.shape[-1] != weight.shape[0]:
        raise ShapeError(
            f"linear: input {tuple(x.shape)} does not match weight {tuple(weight.shape)}"
        )
    if bias.shape != (weight.shape[1],):
        raise ShapeError(
            f"linear: bias {tuple(bias.shape)} does not match weight {tuple(weight.shape)}"
        )
    return x @ weight + bias


def layer_norm(
    x: torch.Tensor,
    gamma: torch.Tensor,
    beta: torch.Tensor,
    eps: float = LAYER_NORM_EPS,
) -> torch.Tensor:
    """Normalize over the last dimension, then scale by gamma and shift by beta."""
    if x.dim() < 1 or x.shape[-1] < 1:
        raise ShapeError("layer_norm needs at least one feature dimension")
    return F.layer_norm(x, (x.shape[-1],), gamma, beta, eps)


def softmax_rows(x: torch.Tensor) -> torch.Tensor:
    """Row-wise softmax over the last dimension, max-shifted for stability."""
    if x.dim() < 2:
        raise ShapeError(f"softmax_rows expects a matrix, got shape {tuple(x.shape)}")
    shifted = x - x.amax(dim=-1, keepdim=True).detach()
    return torch.softmax(shifted, dim=-1)


def dropout(x: torch.Tensor, p: float, rng: RngState, training: bool) -> torch.Tensor:
    """Inverted dropout: kept entries are scaled by 1/(1-p); inference is the identity."""
    if not 0.0 <= p < 1.0:
        raise ConfigurationError(f"Dropout probability must be in [0, 1), got {p}")
    if not training or p == 0.0:
        return x
    keep = rng.uniform(x.shape, 0.0, 1.0) >= p
    return x * keep.to(x.dtype) / (1.0 - p)


class Linear(nn.Module):
    """Affine layer with uniformly initialized weight and bias."""

    def __init__(self, in_features: int, out_features: int, rng: RngState):
        super().__init__()
        self.weight = nn.Parameter(torch.empty(in_features, out_features, dtype=DTYPE))
        self.bias = nn.Parameter(torch.empty(out_features, dtype=DTYPE))
        init_uniform_(self.weight, rng)
        init_uniform_(self.bias, rng)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return linear(x, self.weight, self.bias)


class LayerNorm(nn.Module):
    def __init__(self, size: int, eps: float = LAYER_NORM_EPS):
        super().__init__()
        self.gamma = nn.Parameter(torch.ones(size, dtype=DTYPE))
        self.beta = nn.Parameter(torch.zeros(size, dtype=DTYPE))
        self.eps = eps

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return layer_norm(x, self.gamma, self.beta, self.eps)


class Dropout(nn.Module):
    """Module form of ``dropout`` bound to a shared random stream."""

    def __init__(self, p: float, rng: RngState):
        super().__init__()
        if not 0.0 <= p < 1.0:
            raise ConfigurationError(f"Dropout probability must be in [0, 1), got {p}")
        self.p = p
        self.rng = rng

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return dropout(x, self.p, self.rng, self.training)


def build_adam(
    groups: Mapping[str, Tuple[Iterable[nn.Parameter], float]],
    betas: Tuple[float, float] = (0.9, 0.999),
    eps: float = 1e-8,
) -> torch.optim.Adam:
    """Adam over named parameter groups, each with its own learning rate.

    Empty groups are skipped.
    """
    param_groups = []
    for name, (params, lr) in groups.items():
        params = [p for p in params if p.requires_grad]
        if not params:
            continue
        if lr <= 0:
            raise ConfigurationError(f"Learning rate for {name} must be positive, got {lr}")
        param_groups.append({"params": params, "lr": lr, "name": name})
    if not param_groups:
        raise ConfigurationError("No trainable parameters to optimize")
    return torch.optim.Adam(param_groups, betas=betas, eps=eps, foreach=False)


def adam_step(optimizer: torch.optim.Adam) -> int:
    """Apply one bias-corrected Adam update; returns the step count t."""
    for group in optimizer.param_groups:
        for param in group["params"]:
            if param.grad is not None and param.grad.shape != param.shape:
                raise ShapeError(
                    f"Gradient shape {tuple(param.grad.shape)} does not match "
                    f"parameter {tuple(param.shape)}"
                )
    optimizer.step()
    steps = [
        int(optimizer.state[p]["step"])
        for group in optimizer.param_groups
        for p in group["params"]
        if "step" in optimizer.state[p]
    ]
    return max(steps, default=0)


@dataclass
class GradientReport:
    """Outcome of a finite-difference comparison."""

    max_relative_error: float
    tolerance: float
    worst: Optional[Tuple[int, int]] = None
    checked: int = 0
    errors: List[float] = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return self.max_relative_error < self.tolerance


def check_gradients(
    model_fn: Callable[..., torch.Tensor],
    params: Sequence[torch.Tensor],
    inputs: Sequence[object] = (),
    tolerance: float = GRADIENT_TOLERANCE,
    step: float = GRADIENT_STEP,
) -> GradientReport:
    """Compare autograd gradients with central finite differences.

    Args:
        model_fn: Callable returning a scalar loss from ``inputs``; it must
            read ``params`` (dropout disabled)
        params: 64-bit tensors requiring grad
        inputs: Positional arguments for ``model_fn``
        tolerance: Pass threshold on the maximum relative error
        step: Finite-difference step h

    Returns:
        GradientReport with the maximum relative error over all elements

    Raises:
        NumericError: If the loss or any gradient is non-finite
    """
    params = list(params)
    loss = model_fn(*inputs)
    if loss.numel() != 1:
        raise ShapeError(f"model_fn must return a scalar, got shape {tuple(loss.shape)}")
    if not torch.isfinite(loss).all():
        raise NumericError(f"Non-finite loss during gradient check: {loss.item()}")

    analytic = torch.autograd.grad(loss, params, allow_unused=True)

    report = GradientReport(max_relative_error=0.0, tolerance=tolerance)
    for index, (param, grad) in enumerate(zip(params, analytic)):
        if grad is None:
            grad = torch.zeros_like(param)
        if not torch.isfinite(grad).all():
            raise NumericError(f"Non-finite analytic gradient for parameter {index}")

        flat = param.data.view(-1)
        flat_grad = grad.reshape(-1)
        for i in range(flat.numel()):
            original = flat[i].item()
            with torch.no_grad():
                flat[i] = original + step
                plus = model_fn(*inputs).item()
                flat[i] = original - step
                minus = model_fn(*inputs).item()
                flat[i] = original
            if not (math.isfinite(plus) and math.isfinite(minus)):
                raise NumericError(f"Non-finite loss while perturbing parameter {index}")

            numeric = (plus - minus) / (2.0 * step)
            exact = flat_grad[i].item()
            scale = max(abs(exact), abs(numeric), GRADIENT_FLOOR)
            error = abs(exact - numeric) / scale
            report.errors.append(error)
            report.checked += 1
            if error > report.max_relative_error:
                report.max_relative_error = error
                report.worst = (index, i)

    logger.debug(
        f"Gradient check: {report.checked} elements, "
        f"max relative error {report.max_relative_error:.3e}"
    )
    return report
