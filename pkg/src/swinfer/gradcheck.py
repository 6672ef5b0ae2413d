"""Finite-difference verification of autodiff gradients.

`grad_check` compares reverse-mode gradients against central differences
(f(x+h) - f(x-h)) / 2h, coordinate by coordinate, and reports the worst
relative error. It requires the 64-bit precision mode; central
differences at 32-bit have too little headroom to certify anything.
"""

from dataclasses import dataclass, field

import numpy as np

from . import tensor as T
from .errors import ContractError

# Below this magnitude an |analytic - numeric| gap is indistinguishable
# from finite-difference roundoff, so the denominator is floored.
_DENOM_FLOOR = 1e-6


@dataclass
class InputReport:
    name: str
    max_rel_err: float
    worst_index: tuple[int, ...]
    analytic: float
    numeric: float
    checked: int


@dataclass
class GradCheckReport:
    max_rel_err: float
    inputs: list[InputReport] = field(default_factory=list)

    def passed(self, tol: float) -> bool:
        return self.max_rel_err < tol

    def summary(self) -> str:
        lines = [f"grad_check: max relative error {self.max_rel_err:.3e}"]
        for r in self.inputs:
            lines.append(
                f"  {r.name}: max {r.max_rel_err:.3e} at {r.worst_index} "
                f"(analytic {r.analytic:.6e}, numeric {r.numeric:.6e}, "
                f"{r.checked} coords)"
            )
        return "\n".join(lines)


def grad_check(
    f,
    inputs: dict[str, T.Tensor],
    h: float = 1e-5,
    max_coords: int | None = None,
    seed: int = 0,
) -> GradCheckReport:
    """Check d f / d input for every tensor in `inputs`.

    f is a deterministic callable taking no arguments (it closes over
    the input tensors) and returning a scalar Tensor. `max_coords`
    caps the number of coordinates sampled per input; None checks all.
    """
    if T.get_dtype() != np.float64:
        raise ContractError("grad_check requires the 64-bit precision mode")

    for t in inputs.values():
        t.grad = None
    loss = f()
    T.backward(loss)
    analytic = {}
    for name, t in inputs.items():
        if t.grad is None:
            raise ContractError(f"input '{name}' received no gradient")
        analytic[name] = t.grad.copy()
        t.grad = None

    rng = np.random.Generator(np.random.PCG64(seed))
    reports = []
    overall = 0.0
    with T.no_grad():
        for name, t in inputs.items():
            flat = t.data.reshape(-1)
            n = flat.size
            if max_coords is not None and n > max_coords:
                coords = rng.choice(n, size=max_coords, replace=False)
            else:
                coords = np.arange(n)
            worst = (0.0, (0,), 0.0, 0.0)
            for c in coords:
                orig = flat[c]
                flat[c] = orig + h
                fp = f().item()
                flat[c] = orig - h
                fm = f().item()
                flat[c] = orig
                numeric = (fp - fm) / (2.0 * h)
                a = analytic[name].reshape(-1)[c]
                denom = max(abs(a), abs(numeric), _DENOM_FLOOR)
                err = abs(a - numeric) / denom
                if err >= worst[0]:
                    worst = (err, np.unravel_index(c, t.shape), float(a), numeric)
            reports.append(
                InputReport(name, worst[0], worst[1], worst[2], worst[3], len(coords))
            )
            overall = max(overall, worst[0])
    return GradCheckReport(overall, reports)
