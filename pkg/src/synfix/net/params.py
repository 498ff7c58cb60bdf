"""Parameter block for the encoder/policy/value network.

All weights live in one flat vector so snapshots, gradient clipping and
optimizer updates are single array operations; named views are cut on
demand.  Architecture: token embedding -> 2 stacked LSTM layers ->
element-wise mean over the top-layer outputs -> linear policy head and
linear value head.
"""

from __future__ import annotations

import functools
from dataclasses import dataclass

import numpy as np

CHECKPOINT_VERSION = 1

# Gate order within each 4H block: input, forget, cell, output.
GATES = 4


@dataclass(frozen=True)
class ParamLayout:
    vocab_size: int
    embed_dim: int = 24
    hidden: int = 128
    n_actions: int = 14

    def _shapes(self):
        v, e, h, a = self.vocab_size, self.embed_dim, self.hidden, self.n_actions
        return [
            ("emb", (v, e)),
            ("l1_w_ih", (GATES * h, e)),
            ("l1_w_hh", (GATES * h, h)),
            ("l1_b", (GATES * h,)),
            ("l2_w_ih", (GATES * h, h)),
            ("l2_w_hh", (GATES * h, h)),
            ("l2_b", (GATES * h,)),
            ("wp", (a, h)),
            ("bp", (a,)),
            ("wv", (h,)),
            ("bv", (1,)),
        ]

    @property
    def size(self) -> int:
        return sum(int(np.prod(s)) for _, s in self._shapes())

    def slices(self) -> dict[str, slice]:
        out, off = {}, 0
        for name, shape in self._shapes():
            n = int(np.prod(shape))
            out[name] = slice(off, off + n)
            off += n
        return out

    @functools.lru_cache(maxsize=None)
    def offsets(self) -> np.ndarray:
        """Start offset of each block, in declaration order (int64)."""
        return np.array([sl.start for sl in self.slices().values()],
                        dtype=np.int64)

    def views(self, flat: np.ndarray) -> dict[str, np.ndarray]:
        """Named reshaped views into a flat parameter/gradient vector."""
        if flat.shape != (self.size,):
            raise ValueError(f"expected flat vector of size {self.size}, "
                             f"got {flat.shape}")
        out = {}
        for (name, shape), sl in zip(self._shapes(), self.slices().values()):
            out[name] = flat[sl].reshape(shape)
        return out


WEIGHT_INIT_RANGE = 0.25


def init_params(layout: ParamLayout, seed: int = 0,
                scale: float = WEIGHT_INIT_RANGE) -> np.ndarray:
    """Uniform(-scale, scale) weights, zero biases, forget-gate bias 1.

    The default range is deliberately wide for this small network: tiny
    init leaves the mean-pooled features (and hence all head gradients)
    so small that short training runs cannot move the policy.
    """
    rng = np.random.default_rng(seed)
    flat = np.zeros(layout.size, dtype=np.float64)
    v = layout.views(flat)
    h = layout.hidden
    for name in ("emb", "l1_w_ih", "l1_w_hh", "l2_w_ih", "l2_w_hh", "wp", "wv"):
        v[name][...] = rng.uniform(-scale, scale, size=v[name].shape)
    for name in ("l1_b", "l2_b"):
        v[name][h:2 * h] = 1.0
    return flat


def save_checkpoint(path, flat: np.ndarray, layout: ParamLayout,
                    meta: dict | None = None) -> None:
    np.savez(
        path,
        version=CHECKPOINT_VERSION,
        flat=flat,
        vocab_size=layout.vocab_size,
        embed_dim=layout.embed_dim,
        hidden=layout.hidden,
        n_actions=layout.n_actions,
        meta=np.array([str(meta or {})]),
    )


def load_checkpoint(path) -> tuple[np.ndarray, ParamLayout]:
    data = np.load(path, allow_pickle=False)
    if int(data["version"]) != CHECKPOINT_VERSION:
        raise ValueError(f"unsupported checkpoint version {data['version']}")
    layout = ParamLayout(
        vocab_size=int(data["vocab_size"]),
        embed_dim=int(data["embed_dim"]),
        hidden=int(data["hidden"]),
        n_actions=int(data["n_actions"]),
    )
    flat = np.asarray(data["flat"], dtype=np.float64)
    if flat.shape != (layout.size,):
        raise ValueError("checkpoint parameter vector has the wrong size")
    return flat, layout
