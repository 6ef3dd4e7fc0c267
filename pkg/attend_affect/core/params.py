from typing import Dict, Iterator, List, Tuple

import numpy as np

from attend_affect.core.tensor_core import RngState, Tensor, parameter
from attend_affect.errors import DataValidationError, DimensionError


def uniform_init(rng: RngState, shape: Tuple[int, ...], fan_in: int) -> np.ndarray:
    """Draw weights from uniform(-1/sqrt(fan_in), +1/sqrt(fan_in))."""
    bound = 1.0 / np.sqrt(max(1, fan_in))
    return rng.uniform(-bound, bound, shape)


class ParamSet:
    """
    Ordered container of named trainable tensors and nested ParamSets.

    Names are dotted paths ("blocks.0.w_q.3"), which is also how checkpoints
    store them. Registration order fixes iteration order, so parameter lists
    are identical across runs.
    """

    def __init__(self):
        self._tensors: Dict[str, Tensor] = {}
        self._children: Dict[str, "ParamSet"] = {}

    def add_weight(self, name: str, rng: RngState, shape: Tuple[int, ...], fan_in: int) -> Tensor:
        return self.add_tensor(name, parameter(uniform_init(rng, shape, fan_in), name=name))

    def add_bias(self, name: str, size: int) -> Tensor:
        return self.add_tensor(name, parameter(np.zeros(size), name=name))

    def add_constant(self, name: str, value: float, size: int) -> Tensor:
        return self.add_tensor(name, parameter(np.full(size, float(value)), name=name))

    def add_tensor(self, name: str, tensor: Tensor) -> Tensor:
        assert name not in self._tensors and name not in self._children, f"duplicate parameter {name}"
        self._tensors[name] = tensor
        return tensor

    def add_child(self, name: str, child: "ParamSet") -> "ParamSet":
        assert name not in self._tensors and name not in self._children, f"duplicate parameter set {name}"
        self._children[name] = child
        return child

    def named_parameters(self, prefix: str = "") -> Iterator[Tuple[str, Tensor]]:
        for name, tensor in self._tensors.items():
            yield prefix + name, tensor
        for name, child in self._children.items():
            yield from child.named_parameters(prefix + name + ".")

    def parameters(self) -> List[Tensor]:
        return [t for _, t in self.named_parameters()]

    def parameter_count(self) -> int:
        return sum(t.size for t in self.parameters())

    def zero_grad(self) -> None:
        for t in self.parameters():
            t.zero_grad()

    def state_dict(self) -> Dict[str, np.ndarray]:
        return {name: t.data.copy() for name, t in self.named_parameters()}

    def load_state_dict(self, state: Dict[str, np.ndarray]) -> None:
        own = dict(self.named_parameters())
        missing = sorted(set(own) - set(state))
        unexpected = sorted(set(state) - set(own))
        if missing or unexpected:
            raise DataValidationError(f"parameter mismatch: missing={missing} unexpected={unexpected}")
        for name, tensor in own.items():
            value = np.asarray(state[name], dtype=np.float64)
            if value.shape != tensor.shape:
                raise DimensionError(f"parameter {name}: shape {value.shape} != {tensor.shape}")
            tensor.data[...] = value
