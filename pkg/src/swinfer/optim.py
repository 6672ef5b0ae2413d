"""SGD with momentum, optionally wrapped in sharpness-aware minimization.

The base update is v <- mu*v + g; w <- w - lr*v with the step schedule
lr(epoch) = base_lr * 0.1^(epoch // 10). When SAM is enabled each update
runs two forward/backward passes over the same minibatch: the first
gradient defines an ascent perturbation eps = rho * g / ||g||_2 (one
global L2 norm over all parameters jointly), the second gradient -
taken at w + eps - drives the base update applied at the original w.
Weights are snapshotted before the perturbation so the ascent never
leaks into the stored parameters.
"""

import warnings
from typing import Callable

import numpy as np

from .errors import ContractError
from .tensor import Tensor


def lr_schedule(epoch: int, base_lr: float) -> float:
    """Decay by 10x every ten epochs."""
    if epoch < 0:
        raise ContractError(f"epoch must be >= 0, got {epoch}")
    return base_lr * 0.1 ** (epoch // 10)


class Optimizer:
    """Owns the momentum state for a named parameter set.

    `sam_enabled=False` (or rho == 0) reduces exactly to plain
    SGD-with-momentum, bit for bit.
    """

    def __init__(
        self,
        params: dict[str, Tensor],
        base_lr: float,
        momentum: float = 0.9,
        rho: float = 0.05,
        sam_enabled: bool = False,
    ):
        if not 0.0 <= momentum < 1.0:
            raise ContractError(f"momentum must be in [0, 1), got {momentum}")
        if rho < 0.0:
            raise ContractError(f"rho must be >= 0, got {rho}")
        self.params = params
        self.base_lr = base_lr
        self.momentum = momentum
        self.rho = rho
        self.sam_enabled = sam_enabled
        self.epoch = 0
        self.velocity = {name: np.zeros_like(t.data) for name, t in params.items()}

    @property
    def lr(self) -> float:
        return lr_schedule(self.epoch, self.base_lr)

    def clear_grads(self) -> None:
        for t in self.params.values():
            t.grad = None

    def _require_grads(self) -> None:
        for name, t in self.params.items():
            if t.grad is None:
                raise ContractError(f"parameter '{name}' has no gradient")

    def sgd_momentum_step(self) -> None:
        """v <- mu*v + g; w <- w - lr*v; grads are cleared afterwards."""
        self._require_grads()
        lr = self.lr
        for name, t in self.params.items():
            v = self.velocity[name]
            v *= self.momentum
            v += t.grad
            t.data -= lr * v
        self.clear_grads()

    def global_grad_norm(self) -> float:
        self._require_grads()
        total = 0.0
        for t in self.params.values():
            g = t.grad.reshape(-1)
            total += float(g @ g)
        return float(np.sqrt(total))

    def sam_ascent(self) -> dict[str, np.ndarray]:
        """Perturbation eps = rho * g / ||g||_2 using the joint norm.

        A zero gradient yields eps = 0 (with a warning): there is no
        ascent direction to follow.
        """
        norm = self.global_grad_norm()
        if norm == 0.0:
            warnings.warn("gradient norm is zero; skipping ascent perturbation")
            return {name: np.zeros_like(t.data) for name, t in self.params.items()}
        factor = self.rho / norm
        return {name: t.grad * factor for name, t in self.params.items()}

    def sam_step(self, loss_backward: Callable[[], float]) -> float:
        """One sharpness-aware update; exactly two forward-backward passes.

        `loss_backward` must run forward + backward over the SAME
        minibatch each call and return the loss value. Returns the loss
        at the unperturbed weights.
        """
        self.clear_grads()
        loss = loss_backward()
        eps = self.sam_ascent()
        snapshot = {name: t.data.copy() for name, t in self.params.items()}
        for name, t in self.params.items():
            t.data += eps[name]
        self.clear_grads()
        loss_backward()
        for name, t in self.params.items():
            t.data = snapshot[name]
        self.sgd_momentum_step()
        return loss

    def step(self, loss_backward: Callable[[], float]) -> float:
        """Dispatch to the SAM or plain path; returns the loss at w."""
        if self.sam_enabled:
            return self.sam_step(loss_backward)
        self.clear_grads()
        loss = loss_backward()
        self.sgd_momentum_step()
        return loss
