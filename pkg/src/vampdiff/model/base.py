"""Minimal parameter-container plumbing shared by model components."""
from __future__ import annotations

import numpy as np

from ..numcore import Tensor


class ParamModule:
    """Holds named parameter tensors and child modules."""

    def __init__(self):
        self._params: dict[str, Tensor] = {}
        self._children: dict[str, "ParamModule"] = {}

    def add_param(self, name: str, value: np.ndarray) -> Tensor:
        t = Tensor(value, requires_grad=True)
        self._params[name] = t
        return t

    def add_child(self, name: str, child: "ParamModule") -> "ParamModule":
        self._children[name] = child
        return child

    def named_params(self, prefix: str = ""):
        for name, t in self._params.items():
            yield (prefix + name, t)
        for cname, child in self._children.items():
            yield from child.named_params(prefix + cname + ".")

    def params(self) -> list[Tensor]:
        return [t for _, t in self.named_params()]

    def zero_grads(self) -> None:
        for t in self.params():
            t.grad = None

    def state_arrays(self) -> dict[str, np.ndarray]:
        return {name: t.data for name, t in self.named_params()}

    def load_state_arrays(self, state: dict[str, np.ndarray]) -> None:
        for name, t in self.named_params():
            if name not in state:
                raise KeyError(f"missing parameter {name!r} in state")
            arr = np.asarray(state[name], dtype=np.float64)
            if arr.shape != t.data.shape:
                raise ValueError(
                    f"shape mismatch for {name!r}: "
                    f"{arr.shape} vs {t.data.shape}")
            t.data = arr.copy()


def conv_init(rng: np.random.Generator, cout: int, cin: int, k: int) -> np.ndarray:
    return rng.normal(0.0, np.sqrt(1.0 / (cin * k)), (cout, cin, k))


def linear_init(rng: np.random.Generator, m: int, n: int) -> np.ndarray:
    return rng.normal(0.0, np.sqrt(1.0 / n), (m, n))
