"""Adam updates and the shared epoch-driven training loop."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .rng import Rng
from .tensor import DTYPE

ADAM_EPS = 1e-8


@dataclass
class AdamState:
    """First/second moment estimates for one parameter tensor."""
    m: np.ndarray
    v: np.ndarray
    t: int = 0

    @classmethod
    def for_param(cls, value: np.ndarray) -> "AdamState":
        return cls(m=np.zeros_like(value), v=np.zeros_like(value))


@dataclass
class HyperParams:
    """Training setup: Adam moments 0.9/0.999, lr 0.001, batch 32,
    20 epochs, 5 runs. The decay rates are Adam's beta moments; there is
    no learning-rate schedule."""
    learning_rate: float = 0.001
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = ADAM_EPS
    batch_size: int = 32
    epochs: int = 20
    runs: int = 5

    def __post_init__(self):
        if not 0.0 < self.beta1 < self.beta2 < 1.0:
            raise ValueError(f"need 0 < beta1 < beta2 < 1, got {self.beta1}, {self.beta2}")
        if self.learning_rate < 0:
            # lr = 0 is allowed so a zero-rate epoch is exactly a no-op
            raise ValueError(f"learning_rate must be >= 0, got {self.learning_rate}")
        if self.batch_size < 1:
            raise ValueError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.eps <= 0:
            raise ValueError(f"eps must be > 0, got {self.eps}")


def adam_step(value: np.ndarray, grad: np.ndarray, state: AdamState,
              hyper: HyperParams) -> np.ndarray:
    """One bias-corrected Adam update; mutates value and state in place."""
    if value.shape != grad.shape or value.shape != state.m.shape:
        raise ValueError(
            f"adam_step shape mismatch: param {value.shape}, grad {grad.shape}, "
            f"state {state.m.shape}")
    if not np.all(np.isfinite(grad)):
        raise FloatingPointError("non-finite gradient in adam_step")
    state.t += 1
    b1, b2 = hyper.beta1, hyper.beta2
    state.m += (1 - b1) * (grad - state.m)
    state.v += (1 - b2) * (grad * grad - state.v)
    m_hat = state.m / (1 - b1 ** state.t)
    v_hat = state.v / (1 - b2 ** state.t)
    value -= (hyper.learning_rate * m_hat / (np.sqrt(v_hat) + hyper.eps)).astype(DTYPE)
    return value


class Adam:
    """Owns the AdamState of every parameter in a model's registry."""

    def __init__(self, model, hyper: HyperParams):
        self.hyper = hyper
        self._entries = []
        for name, p in model.params():
            if p.state is None:
                p.state = AdamState.for_param(p.value)
            self._entries.append((name, p))

    def step(self):
        for name, p in self._entries:
            try:
                adam_step(p.value, p.grad, p.state, self.hyper)
            except FloatingPointError as exc:
                raise FloatingPointError(f"{exc} (parameter {name!r})") from None

    def zero_grad(self):
        for _, p in self._entries:
            p.zero_grad()


def iter_batches(n: int, batch_size: int, rng: Rng, drop_last: bool):
    """Seed-determined shuffle, then contiguous batches of indices."""
    order = rng.permutation(n)
    stop = (n // batch_size) * batch_size if drop_last else n
    for start in range(0, stop, batch_size):
        batch = order[start:start + batch_size]
        if len(batch) > 0:
            yield batch


def train_epoch(model, optimizer: Adam, inputs: np.ndarray, targets: np.ndarray,
                loss_fn, rng: Rng, drop_last: bool = False) -> tuple[float, int]:
    """One full pass: shuffle, then forward/backward/step per batch.

    ``rng`` should be a child stream derived from (run seed, epoch index)
    so each epoch reshuffles reproducibly. Returns (mean loss, batch count).
    """
    n = len(inputs)
    if n == 0:
        raise ValueError("train_epoch on empty dataset")
    total, count = 0.0, 0
    for idx in iter_batches(n, optimizer.hyper.batch_size, rng, drop_last):
        x = inputs[idx]
        y = targets[idx]
        out = model.forward(x, train=True)
        loss, dout = loss_fn(out, y)
        optimizer.zero_grad()
        model.backward(dout)
        optimizer.step()
        total += loss
        count += 1
    if count == 0:
        raise ValueError("no batches produced; dataset smaller than batch size "
                         "with drop_last")
    return total / count, count
