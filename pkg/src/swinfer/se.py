"""Excitation gate for the pooled classification vector.

Only the excitation half of the classic squeeze-and-excitation design
is used: the input is already a single vector, so there is nothing left
to pool. Two affine maps form a bottleneck (dim -> dim/r -> dim) with a
relu between them; the sigmoid output gates each channel
multiplicatively, amplifying informative channels and damping the rest.
Gate values live strictly in (0, 1), so the output never exceeds the
input in magnitude and never flips a sign.
"""

import numpy as np

from . import tensor as T
from .errors import ConfigError


def init_se_parameters(dim: int, reduction: int, rng: np.random.Generator) -> dict:
    """Bottleneck parameters; weights truncated-normal, biases zero."""
    from .model import trunc_normal  # local import to avoid a cycle

    if dim % reduction:
        raise ConfigError(f"dim {dim} not divisible by reduction {reduction}")
    hidden = dim // reduction
    return {
        "se.fc1.weight": T.Tensor(trunc_normal(rng, (dim, hidden)), requires_grad=True),
        "se.fc1.bias": T.Tensor(np.zeros(hidden), requires_grad=True),
        "se.fc2.weight": T.Tensor(trunc_normal(rng, (hidden, dim)), requires_grad=True),
        "se.fc2.bias": T.Tensor(np.zeros(dim), requires_grad=True),
    }


def excite(z: T.Tensor, params: dict, prefix: str = "se") -> T.Tensor:
    """Gate the pooled vector: sigmoid(W2 relu(W1 z + b1) + b2) * z.

    Accepts [dim] or [batch, dim].
    """
    h = T.relu(T.linear(z, params[f"{prefix}.fc1.weight"], params[f"{prefix}.fc1.bias"]))
    s = T.sigmoid(T.linear(h, params[f"{prefix}.fc2.weight"], params[f"{prefix}.fc2.bias"]))
    return T.mul(s, z)
