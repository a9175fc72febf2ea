"""Small module system: parameter containers and the layers the models use."""
from __future__ import annotations

import numpy as np

from . import functional as F
from .tensor import Tensor, parameter


class Module:
    """Parameter container; submodules and parameters are found by attribute walk."""

    def named_parameters(self, prefix: str = "") -> list[tuple[str, Tensor]]:
        out = []
        for name, value in vars(self).items():
            full = f"{prefix}{name}"
            if isinstance(value, Tensor) and value.requires_grad:
                out.append((full, value))
            elif isinstance(value, Module):
                out.extend(value.named_parameters(full + "."))
            elif isinstance(value, (list, tuple)):
                for i, item in enumerate(value):
                    if isinstance(item, Module):
                        out.extend(item.named_parameters(f"{full}.{i}."))
                    elif isinstance(item, Tensor) and item.requires_grad:
                        out.append((f"{full}.{i}", item))
        return out

    def parameters(self) -> list[Tensor]:
        return [p for _, p in self.named_parameters()]

    def state_dict(self) -> dict[str, np.ndarray]:
        return {k: v.data.copy() for k, v in self.named_parameters()}

    def load_state_dict(self, state: dict[str, np.ndarray]) -> None:
        params = dict(self.named_parameters())
        missing = sorted(set(params) - set(state))
        extra = sorted(set(state) - set(params))
        if missing or extra:
            raise KeyError(f"state mismatch: missing={missing} unexpected={extra}")
        for k, p in params.items():
            if p.shape != state[k].shape:
                raise ValueError(f"{k}: expected shape {p.shape}, got {state[k].shape}")
            p.data = np.array(state[k], dtype=p.dtype)

    def astype(self, dtype) -> "Module":
        for _, p in self.named_parameters():
            p.data = p.data.astype(dtype)
        return self

    def zero_grad(self) -> None:
        for p in self.parameters():
            p.grad = None

    def __call__(self, *args, **kwargs):
        return self.forward(*args, **kwargs)


# sqrt(6): keeps activation variance roughly constant through ReLU layers
RELU_GAIN = float(np.sqrt(6.0))


def _uniform(rng: np.random.Generator, shape, fan_in: int, gain: float = 1.0) -> Tensor:
    bound = gain / np.sqrt(fan_in)
    return parameter(rng.uniform(-bound, bound, size=shape).astype(np.float32))


class Conv2d(Module):
    def __init__(self, cin: int, cout: int, k: int, rng: np.random.Generator, stride: int = 1,
                 padding: int | None = None, bias: bool = True):
        fan_in = cin * k * k
        self.weight = _uniform(rng, (cout, cin, k, k), fan_in, RELU_GAIN)
        self.bias = _uniform(rng, (cout,), fan_in) if bias else None
        self.stride = stride
        self.padding = k // 2 if padding is None else padding

    def forward(self, x: Tensor) -> Tensor:
        return F.conv2d(x, self.weight, self.bias, stride=self.stride, padding=self.padding)


class ConvTranspose2d(Module):
    """Upsampling layer; weight is stored in conv layout (Cin_of_conv=cout, Cout_of_conv=cin)."""

    def __init__(self, cin: int, cout: int, k: int, rng: np.random.Generator, stride: int = 2):
        self.weight = _uniform(rng, (cin, cout, k, k), cin * k * k)
        self.bias = _uniform(rng, (cout,), cin * k * k)
        self.stride = stride

    def forward(self, x: Tensor) -> Tensor:
        return F.transposed_conv2d(x, self.weight, self.bias, stride=self.stride)


class Linear(Module):
    def __init__(self, cin: int, cout: int, rng: np.random.Generator):
        self.weight = _uniform(rng, (cin, cout), cin)
        self.bias = _uniform(rng, (cout,), cin)

    def forward(self, x: Tensor) -> Tensor:
        return F.linear(x, self.weight, self.bias)
