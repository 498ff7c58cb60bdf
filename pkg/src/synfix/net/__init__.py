"""Function approximator: token embedding, 2-layer LSTM encoder with
mean pooling, a 14-way policy head and a scalar value head.

Two interchangeable backends implement the math: a compiled float32
extension for the training hot loop and a pure-numpy float64 reference.
The compiled one is picked automatically when built; set
``SYNFIX_BACKEND=python`` (or ``c``) to force a choice.
"""

from __future__ import annotations

import os
import warnings
from dataclasses import dataclass, field

import numpy as np

from .params import (
    CHECKPOINT_VERSION,
    ParamLayout,
    init_params,
    load_checkpoint,
    save_checkpoint,
)
from . import numpy_backend

__all__ = [
    "Net", "ParamLayout", "Trajectory", "TrajectoryStep",
    "available_backends", "bootstrap_returns", "init_params",
    "load_checkpoint", "loss_and_grads", "resolve_backend",
    "save_checkpoint", "CHECKPOINT_VERSION",
]

try:
    from . import _ckernels
except ImportError:  # pure-Python install; the fallback covers everything
    _ckernels = None


def available_backends() -> list[str]:
    names = ["python"]
    if _ckernels is not None:
        names.insert(0, "c")
    return names


def resolve_backend(name: str | None = None):
    name = name or os.environ.get("SYNFIX_BACKEND", "auto")
    if name in ("auto", "c") and _ckernels is not None:
        return _ckernels
    if name == "c":
        raise ImportError("compiled kernels are not built; install with the "
                          "extension or use SYNFIX_BACKEND=python")
    if name == "auto":
        warnings.warn("compiled kernels unavailable; using the pure-Python "
                      "backend (slow)", stacklevel=2)
    elif name != "python":
        raise ValueError(f"unknown backend {name!r}")
    return numpy_backend


class Net:
    """One parameter snapshot plus the chosen compute backend.

    Thread workers each hold their own Net; ``refresh`` copies the shared
    float64 master weights into the backend's buffer.
    """

    def __init__(self, layout: ParamLayout, flat64: np.ndarray,
                 backend: str | None = None, max_len: int = 2048):
        self.layout = layout
        self.backend = resolve_backend(backend)
        self.flat = self.backend.make_flat(layout, flat64)
        self.ws = self.backend.make_workspace(layout, max_len)

    @property
    def backend_name(self) -> str:
        return self.backend.NAME

    @property
    def grad_dtype(self):
        return self.backend.DTYPE

    def refresh(self, flat64: np.ndarray) -> None:
        self.flat[...] = flat64

    def forward(self, ids: np.ndarray):
        """(policy, value, pooled) for one encoded state."""
        return self.backend.forward(self.flat, self.layout, ids, self.ws)

    def forward_save(self, ids: np.ndarray):
        """Like forward, but also returns an activation cache that
        ``step_grads`` can consume while these parameters stay current."""
        return self.backend.forward_save(self.flat, self.layout, ids, self.ws)

    def new_grad(self) -> np.ndarray:
        return np.zeros(self.layout.size, dtype=self.backend.DTYPE)

    def step_grads(self, ids, action: int, advantage: float, ret: float,
                   beta: float, value_coef: float, grad: np.ndarray,
                   cache: dict | None = None):
        """Accumulate one step's gradient contribution into ``grad``;
        returns (log pi(action), entropy, value)."""
        if cache is not None:
            return self.backend.backward_from_cache(
                self.flat, self.layout, ids, cache, action, float(advantage),
                float(ret), float(beta), float(value_coef), grad, self.ws)
        return self.backend.accumulate_step_grads(
            self.flat, self.layout, ids, action, float(advantage),
            float(ret), float(beta), float(value_coef), grad, self.ws)


@dataclass
class TrajectoryStep:
    ids: np.ndarray
    action: int
    reward: float
    policy: np.ndarray
    value: float
    cache: dict | None = None  # forward activations, valid for one snapshot


@dataclass
class Trajectory:
    """Rollout segment consumed by one gradient accumulation.

    ``bootstrap_value`` is the critic's estimate of the state after the
    last recorded step, and must be 0 when the segment ended an episode.
    """

    steps: list[TrajectoryStep] = field(default_factory=list)
    bootstrap_value: float = 0.0

    def __len__(self):
        return len(self.steps)


def bootstrap_returns(traj: Trajectory, gamma: float) -> np.ndarray:
    """Discounted n-step targets R_t = r_t + gamma * R_{t+1}, seeded with
    the bootstrap value."""
    if not 0.0 < gamma <= 1.0:
        raise ValueError("gamma must be in (0, 1]")
    out = np.empty(len(traj.steps), dtype=np.float64)
    acc = float(traj.bootstrap_value)
    for t in range(len(traj.steps) - 1, -1, -1):
        acc = traj.steps[t].reward + gamma * acc
        out[t] = acc
    return out


def loss_and_grads(net: Net, traj: Trajectory, targets: np.ndarray,
                   beta: float = 0.01, value_coef: float = 1.0):
    """Accumulated gradients over a trajectory per the update rules:
    policy ascent on log pi(a_t) * (R_t - V_t) plus beta * entropy, value
    descent on (R_t - V_t)^2, advantage treated as a constant.

    Returns (grad, stats); grad is a descent direction in the backend's
    dtype, stats carries summed loss terms for monitoring.
    """
    if len(targets) != len(traj.steps):
        raise ValueError("one target per trajectory step required")
    grad = net.new_grad()
    policy_loss = value_loss = entropy_sum = 0.0
    for step, ret in zip(traj.steps, targets):
        advantage = float(ret) - step.value
        logp, ent, val = net.step_grads(step.ids, step.action, advantage,
                                        float(ret), beta, value_coef, grad,
                                        cache=step.cache)
        policy_loss -= logp * advantage
        entropy_sum += ent
        value_loss += (float(ret) - val) ** 2
    if not np.isfinite(grad).all():
        raise FloatingPointError("non-finite gradient")
    stats = {
        "policy_loss": policy_loss,
        "value_loss": value_loss,
        "entropy": entropy_sum / max(1, len(traj.steps)),
    }
    return grad, stats
