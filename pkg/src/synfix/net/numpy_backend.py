"""Reference float64 implementation of the network forward pass and the
per-step gradient accumulation.  The compiled kernel mirrors this math in
float32; tests check the two against each other and against finite
differences."""

from __future__ import annotations

import numpy as np

from .params import ParamLayout

DTYPE = np.float64
NAME = "python"


def _sigmoid(x):
    return 1.0 / (1.0 + np.exp(-x))


def _lstm_layer_forward(x, w_ih, w_hh, b, hidden):
    """Run one LSTM layer over (T, in) inputs; returns (h_seq, cache)."""
    T = x.shape[0]
    z_in = x @ w_ih.T + b
    gates = np.empty((T, 4 * hidden), dtype=x.dtype)
    cs = np.empty((T, hidden), dtype=x.dtype)
    hs = np.empty((T, hidden), dtype=x.dtype)
    h = np.zeros(hidden, dtype=x.dtype)
    c = np.zeros(hidden, dtype=x.dtype)
    H = hidden
    for t in range(T):
        z = z_in[t] + w_hh @ h
        i = _sigmoid(z[:H])
        f = _sigmoid(z[H:2 * H])
        g = np.tanh(z[2 * H:3 * H])
        o = _sigmoid(z[3 * H:])
        c = f * c + i * g
        h = o * np.tanh(c)
        gates[t, :H], gates[t, H:2 * H] = i, f
        gates[t, 2 * H:3 * H], gates[t, 3 * H:] = g, o
        cs[t], hs[t] = c, h
    return hs, {"x": x, "gates": gates, "c": cs, "h": hs}


def _lstm_layer_backward(cache, dh_ext, w_ih, w_hh, d_w_ih, d_w_hh, d_b, hidden):
    """BPTT one layer given per-step external output grads; returns dx."""
    x, gates, cs, hs = cache["x"], cache["gates"], cache["c"], cache["h"]
    T = x.shape[0]
    H = hidden
    dz_all = np.empty((T, 4 * H), dtype=x.dtype)
    dh_next = np.zeros(H, dtype=x.dtype)
    dc_next = np.zeros(H, dtype=x.dtype)
    for t in range(T - 1, -1, -1):
        i, f = gates[t, :H], gates[t, H:2 * H]
        g, o = gates[t, 2 * H:3 * H], gates[t, 3 * H:]
        c_prev = cs[t - 1] if t > 0 else np.zeros(H, dtype=x.dtype)
        tc = np.tanh(cs[t])
        dh = dh_ext[t] + dh_next
        do = dh * tc
        dc = dh * o * (1.0 - tc * tc) + dc_next
        di = dc * g
        dg = dc * i
        df = dc * c_prev
        dc_next = dc * f
        dz = dz_all[t]
        dz[:H] = di * i * (1.0 - i)
        dz[H:2 * H] = df * f * (1.0 - f)
        dz[2 * H:3 * H] = dg * (1.0 - g * g)
        dz[3 * H:] = do * o * (1.0 - o)
        dh_next = w_hh.T @ dz
    h_prev = np.vstack([np.zeros((1, H), dtype=x.dtype), hs[:-1]])
    d_w_ih += dz_all.T @ x
    d_w_hh += dz_all.T @ h_prev
    d_b += dz_all.sum(axis=0)
    return dz_all @ w_ih


def _heads(v, pooled):
    logits = v["wp"] @ pooled + v["bp"]
    logits = logits - logits.max()
    expz = np.exp(logits)
    policy = expz / expz.sum()
    value = float(v["wv"] @ pooled + v["bv"][0])
    return policy, value


def forward(flat: np.ndarray, layout: ParamLayout, ids: np.ndarray,
            workspace=None):
    """(policy, value, pooled) for one encoded state."""
    policy, value, pooled, _ = _forward_cached(flat, layout, ids)
    return policy, value, pooled


def _forward_cached(flat, layout, ids):
    v = layout.views(flat)
    ids = np.asarray(ids, dtype=np.int64)
    if ids.size == 0:
        raise ValueError("empty input sequence")
    if ids.min() < 0 or ids.max() >= layout.vocab_size:
        raise ValueError("token id out of vocabulary range")
    x = v["emb"][ids]
    h1, cache1 = _lstm_layer_forward(x, v["l1_w_ih"], v["l1_w_hh"], v["l1_b"],
                                     layout.hidden)
    h2, cache2 = _lstm_layer_forward(h1, v["l2_w_ih"], v["l2_w_hh"], v["l2_b"],
                                     layout.hidden)
    pooled = h2.mean(axis=0)
    policy, value = _heads(v, pooled)
    return policy, value, pooled, (ids, cache1, cache2)


def _backward(flat, layout, ids, cache1, cache2, policy, value, pooled,
              action, advantage, ret, beta, value_coef, grad):
    v = layout.views(flat)
    g = layout.views(grad)
    T = ids.shape[0]

    logp = np.log(np.maximum(policy, 1e-300))
    entropy = float(-(policy * logp).sum())
    # d(loss)/d(logits): -(e_a - pi) * A + beta * pi * (log pi + H)
    dlogits = policy * advantage
    dlogits[action] -= advantage
    dlogits = dlogits + beta * policy * (logp + entropy)
    dvalue = -2.0 * value_coef * (ret - value)

    g["wp"] += np.outer(dlogits, pooled)
    g["bp"] += dlogits
    g["wv"] += dvalue * pooled
    g["bv"] += dvalue
    dpooled = v["wp"].T @ dlogits + dvalue * v["wv"]

    dh2 = np.tile(dpooled / T, (T, 1))
    dh1 = _lstm_layer_backward(cache2, dh2, v["l2_w_ih"], v["l2_w_hh"],
                               g["l2_w_ih"], g["l2_w_hh"], g["l2_b"],
                               layout.hidden)
    dx = _lstm_layer_backward(cache1, dh1, v["l1_w_ih"], v["l1_w_hh"],
                              g["l1_w_ih"], g["l1_w_hh"], g["l1_b"],
                              layout.hidden)
    np.add.at(g["emb"], ids, dx)
    return float(logp[action]), entropy, float(value)


def accumulate_step_grads(flat: np.ndarray, layout: ParamLayout,
                          ids: np.ndarray, action: int, advantage: float,
                          ret: float, beta: float, value_coef: float,
                          grad: np.ndarray,
                          workspace=None) -> tuple[float, float, float]:
    """Add one step's contribution to ``grad`` (same layout as ``flat``).

    Implements the per-step accumulation rules: the policy part follows
    grad ascent on log pi(a) * advantage + beta * entropy (advantage is
    treated as a constant), the value part grad descent on
    value_coef * (ret - V)^2; both are expressed here as one descent
    gradient.  Returns (log pi(a), entropy, value).
    """
    policy, value, pooled, (ids64, cache1, cache2) = \
        _forward_cached(flat, layout, ids)
    return _backward(flat, layout, ids64, cache1, cache2, policy, value,
                     pooled, action, advantage, ret, beta, value_coef, grad)


def forward_save(flat: np.ndarray, layout: ParamLayout, ids: np.ndarray,
                 workspace=None):
    """(policy, value, pooled, cache); the cache feeds backward_from_cache."""
    policy, value, pooled, (ids64, cache1, cache2) = \
        _forward_cached(flat, layout, ids)
    cache = {"ids": ids64, "cache1": cache1, "cache2": cache2,
             "policy": policy, "value": value, "pooled": pooled}
    return policy, value, pooled, cache


def backward_from_cache(flat: np.ndarray, layout: ParamLayout, ids, cache,
                        action: int, advantage: float, ret: float,
                        beta: float, value_coef: float, grad: np.ndarray,
                        workspace=None) -> tuple[float, float, float]:
    """Backward for one step from a cache produced under the same
    parameter snapshot."""
    return _backward(flat, layout, cache["ids"], cache["cache1"],
                     cache["cache2"], cache["policy"], cache["value"],
                     cache["pooled"], action, advantage, ret, beta,
                     value_coef, grad)


def make_workspace(layout: ParamLayout, max_len: int = 2048):
    """The reference backend allocates as it goes; nothing to prepare."""
    return None


def make_flat(layout: ParamLayout, flat64: np.ndarray) -> np.ndarray:
    """Backend-dtype copy of the master float64 parameter vector."""
    return np.array(flat64, dtype=DTYPE, copy=True)
