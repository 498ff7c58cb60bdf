# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled float32 kernels for the encoder/policy/value network.

Mirrors numpy_backend exactly (same parameter layout, same math) but runs
the LSTM recurrences and BPTT in C with BLAS matrix products, and releases
the GIL so parallel actor-learners overlap.  Selected automatically at
import by synfix.net when built.
"""

import numpy as np

cimport numpy as cnp
from libc.math cimport expf, logf, tanhf
from scipy.linalg.cython_blas cimport sgemm, sgemv

cnp.import_array()

NAME = "c"
DTYPE = np.float32

ctypedef cnp.float32_t f32


# --- BLAS helpers over row-major buffers -----------------------------------

cdef void rm_matvec(float* w, int rows, int cols, float* x, float beta,
                    float* y) nogil:
    # y(rows) = W(rows x cols) @ x + beta * y
    cdef int m = cols, n = rows, inc = 1
    cdef float alpha = 1.0
    cdef char t = b'T'
    sgemv(&t, &m, &n, &alpha, w, &m, x, &inc, &beta, y, &inc)


cdef void rm_matvec_t(float* w, int rows, int cols, float* x, float beta,
                      float* y) nogil:
    # y(cols) = W^T(cols x rows) @ x + beta * y
    cdef int m = cols, n = rows, inc = 1
    cdef float alpha = 1.0
    cdef char t = b'N'
    sgemv(&t, &m, &n, &alpha, w, &m, x, &inc, &beta, y, &inc)


cdef void rm_in_proj(float* x, int T, int in_dim, float* w, int out_dim,
                     float* out) nogil:
    # out(T x out_dim) = X(T x in_dim) @ W(out_dim x in_dim)^T
    cdef int m = out_dim, n = T, k = in_dim
    cdef float alpha = 1.0, beta = 0.0
    cdef char ta = b'T', tb = b'N'
    sgemm(&ta, &tb, &m, &n, &k, &alpha, w, &k, x, &k, &beta, out, &m)


cdef void rm_acc_outer(float* dz, int T, int rows, float* x, int cols,
                       float* dw) nogil:
    # dW(rows x cols) += dZ(T x rows)^T @ X(T x cols)
    cdef int m = cols, n = rows, k = T
    cdef float alpha = 1.0, beta = 1.0
    cdef char ta = b'N', tb = b'T'
    sgemm(&ta, &tb, &m, &n, &k, &alpha, x, &m, dz, &n, &beta, dw, &m)


cdef void rm_dz_w(float* dz, int T, int rows, float* w, int cols,
                  float* out) nogil:
    # out(T x cols) = dZ(T x rows) @ W(rows x cols)
    cdef int m = cols, n = T, k = rows
    cdef float alpha = 1.0, beta = 0.0
    cdef char ta = b'N', tb = b'N'
    sgemm(&ta, &tb, &m, &n, &k, &alpha, w, &m, dz, &k, &beta, out, &m)


# --- workspace ---------------------------------------------------------------

cdef class Workspace:
    cdef public int max_len
    cdef public dict arrays
    cdef f32[:, ::1] x, zin1, gates1, c1, tc1, h1
    cdef f32[:, ::1] zin2, gates2, c2, tc2, h2
    cdef f32[:, ::1] dz, dh1_ext, dx
    cdef f32[::1] pooled, dh, dc, scratch

    def __init__(self, int embed_dim, int hidden, int max_len):
        self.max_len = max_len
        G = 4 * hidden
        self.arrays = {
            "x": np.empty((max_len, embed_dim), dtype=DTYPE),
            "zin1": np.empty((max_len, G), dtype=DTYPE),
            "gates1": np.empty((max_len, G), dtype=DTYPE),
            "c1": np.empty((max_len, hidden), dtype=DTYPE),
            "tc1": np.empty((max_len, hidden), dtype=DTYPE),
            "h1": np.empty((max_len, hidden), dtype=DTYPE),
            "zin2": np.empty((max_len, G), dtype=DTYPE),
            "gates2": np.empty((max_len, G), dtype=DTYPE),
            "c2": np.empty((max_len, hidden), dtype=DTYPE),
            "tc2": np.empty((max_len, hidden), dtype=DTYPE),
            "h2": np.empty((max_len, hidden), dtype=DTYPE),
        }
        self.x = self.arrays["x"]
        self.zin1 = self.arrays["zin1"]
        self.gates1 = self.arrays["gates1"]
        self.c1 = self.arrays["c1"]
        self.tc1 = self.arrays["tc1"]
        self.h1 = self.arrays["h1"]
        self.zin2 = self.arrays["zin2"]
        self.gates2 = self.arrays["gates2"]
        self.c2 = self.arrays["c2"]
        self.tc2 = self.arrays["tc2"]
        self.h2 = self.arrays["h2"]
        self.dz = np.empty((max_len, G), dtype=DTYPE)
        self.dh1_ext = np.empty((max_len, hidden), dtype=DTYPE)
        self.dx = np.empty((max_len, embed_dim), dtype=DTYPE)
        self.pooled = np.empty(hidden, dtype=DTYPE)
        self.dh = np.empty(hidden, dtype=DTYPE)
        self.dc = np.empty(hidden, dtype=DTYPE)
        self.scratch = np.empty(G, dtype=DTYPE)


def make_workspace(layout, int max_len=2048):
    return Workspace(layout.embed_dim, layout.hidden, max_len)

# Per-step activation cache: copies of the forward buffers, reused by the
# backward pass so update time does not repeat the forward run.
_CACHE_KEYS = ("x", "gates1", "c1", "tc1", "h1", "gates2", "c2", "tc2", "h2")


def make_flat(layout, flat64):
    return np.ascontiguousarray(flat64, dtype=DTYPE)


# --- forward -----------------------------------------------------------------

cdef void _layer_forward(float* zin, float* w_hh, float* b, int T, int H,
                         float* gates, float* cs, float* tcs,
                         float* hs) nogil:
    # Gate activations are written into ``gates`` in simple contiguous
    # sub-loops so the compiler can vectorize the expf/tanhf calls.
    cdef int t, j, G = 4 * H
    cdef float cval
    cdef float* z
    cdef float* gt
    for t in range(T):
        z = zin + t * G
        gt = gates + t * G
        if t > 0:
            rm_matvec(w_hh, G, H, hs + (t - 1) * H, 1.0, z)
        for j in range(2 * H):
            gt[j] = 1.0 / (1.0 + expf(-(z[j] + b[j])))            # i, f
        for j in range(2 * H, 3 * H):
            gt[j] = tanhf(z[j] + b[j])                            # g
        for j in range(3 * H, G):
            gt[j] = 1.0 / (1.0 + expf(-(z[j] + b[j])))            # o
        if t > 0:
            for j in range(H):
                cs[t * H + j] = gt[H + j] * cs[(t - 1) * H + j] + gt[j] * gt[2 * H + j]
        else:
            for j in range(H):
                cs[j] = gt[j] * gt[2 * H + j]
        for j in range(H):
            tcs[t * H + j] = tanhf(cs[t * H + j])
        for j in range(H):
            hs[t * H + j] = gt[3 * H + j] * tcs[t * H + j]


cdef int _forward_core(f32[::1] flat, long[::1] off, int V, int E, int H,
                       int A, int[::1] ids, Workspace ws,
                       f32[::1] policy, f32[::1] pooled,
                       float* value) nogil except -1:
    cdef int T = ids.shape[0]
    cdef int t, j, tid
    cdef float m, s
    cdef float* emb = &flat[0] + off[0]
    for t in range(T):
        tid = ids[t]
        if tid < 0 or tid >= V:
            return -1
        for j in range(E):
            ws.x[t, j] = emb[tid * E + j]
    rm_in_proj(&ws.x[0, 0], T, E, &flat[0] + off[1], 4 * H, &ws.zin1[0, 0])
    _layer_forward(&ws.zin1[0, 0], &flat[0] + off[2], &flat[0] + off[3], T, H,
                   &ws.gates1[0, 0], &ws.c1[0, 0], &ws.tc1[0, 0], &ws.h1[0, 0])
    rm_in_proj(&ws.h1[0, 0], T, H, &flat[0] + off[4], 4 * H, &ws.zin2[0, 0])
    _layer_forward(&ws.zin2[0, 0], &flat[0] + off[5], &flat[0] + off[6], T, H,
                   &ws.gates2[0, 0], &ws.c2[0, 0], &ws.tc2[0, 0], &ws.h2[0, 0])
    for j in range(H):
        s = 0.0
        for t in range(T):
            s += ws.h2[t, j]
        pooled[j] = s / T
    # policy head: softmax(Wp @ pooled + bp)
    rm_matvec(&flat[0] + off[7], A, H, &pooled[0], 0.0, &policy[0])
    m = -1e30
    for j in range(A):
        policy[j] += (&flat[0] + off[8])[j]
        if policy[j] > m:
            m = policy[j]
    s = 0.0
    for j in range(A):
        policy[j] = expf(policy[j] - m)
        s += policy[j]
    for j in range(A):
        policy[j] /= s
    # value head
    s = (&flat[0] + off[10])[0]
    for j in range(H):
        s += (&flat[0] + off[9])[j] * pooled[j]
    value[0] = s
    return 0


def forward(f32[::1] flat, layout, ids, Workspace ws):
    """(policy, value, pooled) for one encoded state."""
    cdef cnp.ndarray[int, ndim=1] ids32 = np.ascontiguousarray(ids, dtype=np.int32)
    cdef int T = ids32.shape[0]
    if T == 0:
        raise ValueError("empty input sequence")
    if T > ws.max_len:
        raise ValueError(f"sequence of {T} tokens exceeds workspace {ws.max_len}")
    cdef long[::1] off = layout.offsets()
    cdef int V = layout.vocab_size, E = layout.embed_dim
    cdef int H = layout.hidden, A = layout.n_actions
    policy = np.empty(A, dtype=DTYPE)
    pooled = np.empty(H, dtype=DTYPE)
    cdef f32[::1] pol = policy, po = pooled
    cdef float value = 0.0
    cdef int rc
    cdef int[::1] idv = ids32
    with nogil:
        rc = _forward_core(flat, off, V, E, H, A, idv, ws, pol, po, &value)
    if rc != 0:
        raise ValueError("token id out of vocabulary range")
    return policy, float(value), pooled


def forward_save(f32[::1] flat, layout, ids, Workspace ws):
    """Forward pass that also returns the activation cache consumed by
    ``backward_from_cache``; (policy, value, pooled, cache)."""
    policy, value, pooled = forward(flat, layout, ids, ws)
    cdef int T = len(ids)
    cache = {k: np.array(ws.arrays[k][:T]) for k in _CACHE_KEYS}
    cache["policy"] = policy
    cache["pooled"] = pooled
    cache["value"] = value
    return policy, value, pooled, cache


# --- fused forward + backward ------------------------------------------------

cdef void _layer_backward(float* x_in, int in_dim, float* gates, float* cs,
                          float* tcs, float* hs, float* w_ih, float* w_hh,
                          float* dh_ext, int ext_is_const, float* dh_const,
                          int T, int H, Workspace ws,
                          float* g_w_ih, float* g_w_hh, float* g_b,
                          float* dx_out) nogil:
    """BPTT one layer; dh_ext is per-step (T x H) unless ext_is_const, in
    which case dh_const (H) applies to every step.  Fills ws.dz (T x 4H)
    and dx_out (T x in_dim); accumulates weight grads."""
    cdef int t, j, G = 4 * H
    cdef float tc, gv
    cdef float* gt
    cdef float* dzt
    for j in range(H):
        ws.dh[j] = 0.0
        ws.dc[j] = 0.0
    for t in range(T - 1, -1, -1):
        gt = gates + t * G
        dzt = &ws.dz[t, 0]
        if ext_is_const:
            for j in range(H):
                ws.dh[j] += dh_const[j]
        else:
            for j in range(H):
                ws.dh[j] += dh_ext[t * H + j]
        for j in range(H):
            tc = tcs[t * H + j]
            ws.dc[j] += ws.dh[j] * gt[3 * H + j] * (1.0 - tc * tc)
        for j in range(H):
            gv = gt[j]
            dzt[j] = (ws.dc[j] * gt[2 * H + j]) * gv * (1.0 - gv)
        if t > 0:
            for j in range(H):
                gv = gt[H + j]
                dzt[H + j] = (ws.dc[j] * cs[(t - 1) * H + j]) * gv * (1.0 - gv)
        else:
            for j in range(H):
                dzt[H + j] = 0.0
        for j in range(H):
            gv = gt[2 * H + j]
            dzt[2 * H + j] = (ws.dc[j] * gt[j]) * (1.0 - gv * gv)
        for j in range(H):
            gv = gt[3 * H + j]
            dzt[3 * H + j] = (ws.dh[j] * tcs[t * H + j]) * gv * (1.0 - gv)
        for j in range(H):
            ws.dc[j] *= gt[H + j]
        rm_matvec_t(w_hh, G, H, dzt, 0.0, &ws.dh[0])
        for j in range(G):
            g_b[j] += dzt[j]
    # dW_ih += dZ^T @ X ; dW_hh += dZ[1:]^T @ H[:-1]
    rm_acc_outer(&ws.dz[0, 0], T, G, x_in, in_dim, g_w_ih)
    if T > 1:
        rm_acc_outer(&ws.dz[1, 0], T - 1, G, hs, H, g_w_hh)
    rm_dz_w(&ws.dz[0, 0], T, G, w_ih, in_dim, dx_out)


cdef void _backward_core(float* fp, long[::1] off, int E, int H, int A,
                         int[::1] idv, int T,
                         float* pol, float* pooled, float value,
                         float* x, float* gates1, float* c1, float* tc1,
                         float* h1, float* gates2, float* c2, float* tc2,
                         float* h2,
                         int action, float advantage, float ret, float beta,
                         float value_coef, float* gp, Workspace ws,
                         float* logp_a, float* entropy) nogil:
    cdef int t, j, tid
    cdef float dvalue, lp
    cdef double ent_acc = 0.0
    for j in range(A):
        lp = logf(pol[j] + 1e-30)
        ent_acc -= pol[j] * lp
    entropy[0] = <float> ent_acc
    logp_a[0] = logf(pol[action] + 1e-30)
    # dlogits into ws.scratch[:A]
    for j in range(A):
        ws.scratch[j] = pol[j] * advantage \
            + beta * pol[j] * (logf(pol[j] + 1e-30) + entropy[0])
    ws.scratch[action] -= advantage
    dvalue = -2.0 * value_coef * (ret - value)
    # head grads
    for j in range(A):
        (gp + off[8])[j] += ws.scratch[j]
    for t in range(A):
        for j in range(H):
            (gp + off[7])[t * H + j] += ws.scratch[t] * pooled[j]
    for j in range(H):
        (gp + off[9])[j] += dvalue * pooled[j]
    (gp + off[10])[0] += dvalue
    # per-step pooled gradient, shared by every timestep (mean pooling)
    rm_matvec_t(fp + off[7], A, H, &ws.scratch[0], 0.0, &ws.dc[0])
    for j in range(H):
        ws.pooled[j] = (ws.dc[j] + dvalue * (fp + off[9])[j]) / T
    _layer_backward(h1, H, gates2, c2, tc2, h2,
                    fp + off[4], fp + off[5],
                    NULL, 1, &ws.pooled[0], T, H, ws,
                    gp + off[4], gp + off[5], gp + off[6],
                    &ws.dh1_ext[0, 0])
    _layer_backward(x, E, gates1, c1, tc1, h1,
                    fp + off[1], fp + off[2],
                    &ws.dh1_ext[0, 0], 0, NULL, T, H, ws,
                    gp + off[1], gp + off[2], gp + off[3],
                    &ws.dx[0, 0])
    for t in range(T):
        tid = idv[t]
        for j in range(E):
            (gp + off[0])[tid * E + j] += ws.dx[t, j]


def accumulate_step_grads(f32[::1] flat, layout, ids, int action,
                          float advantage, float ret, float beta,
                          float value_coef, f32[::1] grad, Workspace ws):
    """Fused forward+backward for one step; adds into ``grad``.
    Returns (log pi(action), entropy, value)."""
    cdef cnp.ndarray[int, ndim=1] ids32 = np.ascontiguousarray(ids, dtype=np.int32)
    cdef int T = ids32.shape[0]
    if T == 0:
        raise ValueError("empty input sequence")
    if T > ws.max_len:
        raise ValueError(f"sequence of {T} tokens exceeds workspace {ws.max_len}")
    cdef long[::1] off = layout.offsets()
    cdef int V = layout.vocab_size, E = layout.embed_dim
    cdef int H = layout.hidden, A = layout.n_actions
    policy = np.empty(A, dtype=DTYPE)
    cdef f32[::1] pol = policy
    cdef float value = 0.0
    cdef int rc
    cdef int[::1] idv = ids32
    cdef float entropy = 0.0, logp_a = 0.0
    with nogil:
        rc = _forward_core(flat, off, V, E, H, A, idv, ws, pol, ws.pooled, &value)
        if rc == 0:
            # pooled was written into ws.pooled; _backward_core reuses the
            # buffer for the per-step gradient, so pass a copy via scratch:
            # copy pooled into dh (free at this point)
            for rc in range(H):
                ws.dh[rc] = ws.pooled[rc]
            rc = 0
            _backward_core(&flat[0], off, E, H, A, idv, T,
                           &pol[0], &ws.dh[0], value,
                           &ws.x[0, 0], &ws.gates1[0, 0], &ws.c1[0, 0],
                           &ws.tc1[0, 0], &ws.h1[0, 0], &ws.gates2[0, 0],
                           &ws.c2[0, 0], &ws.tc2[0, 0], &ws.h2[0, 0],
                           action, advantage, ret, beta, value_coef,
                           &grad[0], ws, &logp_a, &entropy)
    if rc != 0:
        raise ValueError("token id out of vocabulary range")
    return float(logp_a), float(entropy), float(value)


def backward_from_cache(f32[::1] flat, layout, ids, dict cache, int action,
                        float advantage, float ret, float beta,
                        float value_coef, f32[::1] grad, Workspace ws):
    """Backward pass for one step using activations cached by
    ``forward_save`` (run under the same parameter snapshot).
    Returns (log pi(action), entropy, value)."""
    cdef cnp.ndarray[int, ndim=1] ids32 = np.ascontiguousarray(ids, dtype=np.int32)
    cdef int T = ids32.shape[0]
    cdef long[::1] off = layout.offsets()
    cdef int E = layout.embed_dim, H = layout.hidden, A = layout.n_actions
    cdef f32[:, ::1] x = cache["x"], gates1 = cache["gates1"]
    cdef f32[:, ::1] c1 = cache["c1"], tc1 = cache["tc1"], h1 = cache["h1"]
    cdef f32[:, ::1] gates2 = cache["gates2"], c2 = cache["c2"]
    cdef f32[:, ::1] tc2 = cache["tc2"], h2 = cache["h2"]
    cdef f32[::1] pol = cache["policy"], pooled = cache["pooled"]
    cdef float value = cache["value"]
    cdef int[::1] idv = ids32
    cdef float entropy = 0.0, logp_a = 0.0
    if x.shape[0] != T:
        raise ValueError("cache does not match the token sequence")
    with nogil:
        _backward_core(&flat[0], off, E, H, A, idv, T,
                       &pol[0], &pooled[0], value,
                       &x[0, 0], &gates1[0, 0], &c1[0, 0], &tc1[0, 0],
                       &h1[0, 0], &gates2[0, 0], &c2[0, 0], &tc2[0, 0],
                       &h2[0, 0],
                       action, advantage, ret, beta, value_coef,
                       &grad[0], ws, &logp_a, &entropy)
    return float(logp_a), float(entropy), float(value)
