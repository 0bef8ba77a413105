"""Hot inner loops: depthwise 1D convolution, RBF set convolution, leaky ReLU.

Each kernel has a numba implementation and a pure-numpy one. The numba path is
used when numba imports cleanly and ``NP_FORGE_NUMBA`` is not set to ``0``.
Both paths accumulate in the same order, so results agree to rounding.
"""

import os

import numpy as np

try:
    import numba
except ImportError:  # pragma: no cover - numba is a hard dependency in practice
    numba = None


def _env_wants_numba():
    return os.environ.get("NP_FORGE_NUMBA", "1").strip().lower() not in ("0", "false", "no", "off")


_USE_NUMBA = numba is not None and _env_wants_numba()


def backend():
    return "numba" if _USE_NUMBA else "numpy"


def set_backend(name):
    """Switch between ``"numba"`` and ``"numpy"`` at runtime (benchmarks, tests)."""
    global _USE_NUMBA
    if name == "numba":
        if numba is None:
            raise RuntimeError("numba is not installed")
        _USE_NUMBA = True
    elif name == "numpy":
        _USE_NUMBA = False
    else:
        raise ValueError(f"unknown backend {name!r}")


# ---------------------------------------------------------------------------
# numpy reference paths
# ---------------------------------------------------------------------------


def _dw_fwd_np(x, w):
    B, K, C = x.shape
    W = w.shape[0]
    p = W // 2
    xp = np.zeros((B, K + 2 * p, C))
    xp[:, p:p + K] = x
    out = np.zeros((B, K, C))
    for j in range(W):
        out += xp[:, j:j + K] * w[j]
    return out


def _dw_bwd_np(x, w, g):
    B, K, C = x.shape
    W = w.shape[0]
    p = W // 2
    xp = np.zeros((B, K + 2 * p, C))
    xp[:, p:p + K] = x
    gp = np.zeros((B, K + 2 * p, C))
    gw = np.empty((W, C))
    for j in range(W):
        gp[:, j:j + K] += g * w[j]
        gw[j] = np.einsum("bkc,bkc->c", g, xp[:, j:j + K])
    return gp[:, p:p + K].copy(), gw


def _rbf_weights_np(x_in, x_out, ls):
    # (B, M, N, C)
    d = x_out[:, :, None] - x_in[:, None, :]
    return np.exp(-0.5 * (d * d)[..., None] / (ls * ls)), d


def _grouped(a, P):
    # (P*G, ...) -> (P, G, ...)
    return a.reshape((P, a.shape[0] // P) + a.shape[1:])


def _rbf_fwd_np(x_in, v, x_out, ls):
    P = x_in.shape[0]
    w, _ = _rbf_weights_np(x_in, x_out, ls)
    out = np.einsum("bmnc,bgnc->bgmc", w, _grouped(v, P))
    return out.reshape((v.shape[0],) + out.shape[2:])


def _rbf_bwd_np(x_in, v, x_out, ls, g):
    P = x_in.shape[0]
    w, d = _rbf_weights_np(x_in, x_out, ls)
    vg, gg = _grouped(v, P), _grouped(g, P)
    gv = np.einsum("bmnc,bgmc->bgnc", w, gg).reshape(v.shape)
    # d/dls exp(-r^2 / 2ls^2) = exp(.) r^2 / ls^3
    r2 = (d * d)[..., None]
    gls = np.einsum("bmnc,bmnc,bgnc,bgmc->c", w, r2, vg, gg) / ls ** 3
    return gv, gls


# ---------------------------------------------------------------------------
# numba paths
# ---------------------------------------------------------------------------

if numba is not None:
    _jit = numba.njit(cache=True, nogil=True, fastmath=False)

    @_jit
    def _dw_fwd_nb(x, w):
        B, K, C = x.shape
        W = w.shape[0]
        p = W // 2
        out = np.zeros((B, K, C))
        for b in range(B):
            for i in range(K):
                j0 = max(0, p - i)
                j1 = min(W, K + p - i)
                for j in range(j0, j1):
                    s = i + j - p
                    for c in range(C):
                        out[b, i, c] += x[b, s, c] * w[j, c]
        return out

    def _dw_bwd_nb(x, w, g):
        # the input gradient is the forward correlation with the kernel reversed
        gx = _dw_fwd_nb(g, np.ascontiguousarray(w[::-1]))
        return gx, _dw_gw_nb(x, g, w.shape[0])

    @_jit
    def _rbf_fwd_nb(x_in, v, x_out, ls):
        P, N = x_in.shape
        BG, _, C = v.shape
        G = BG // P
        M = x_out.shape[1]
        out = np.zeros((BG, M, C))
        inv = np.empty(C)
        for c in range(C):
            inv[c] = -0.5 / (ls[c] * ls[c])
        for b in range(P):
            for m in range(M):
                for n in range(N):
                    d = x_out[b, m] - x_in[b, n]
                    d2 = d * d
                    for c in range(C):
                        w = np.exp(d2 * inv[c])
                        for k in range(b * G, b * G + G):
                            out[k, m, c] += w * v[k, n, c]
        return out

    @_jit
    def _rbf_bwd_nb(x_in, v, x_out, ls, g):
        P, N = x_in.shape
        BG, _, C = v.shape
        G = BG // P
        M = x_out.shape[1]
        gv = np.zeros((BG, N, C))
        gls = np.zeros(C)
        inv = np.empty(C)
        for c in range(C):
            inv[c] = -0.5 / (ls[c] * ls[c])
        for b in range(P):
            for m in range(M):
                for n in range(N):
                    d = x_out[b, m] - x_in[b, n]
                    d2 = d * d
                    for c in range(C):
                        w = np.exp(d2 * inv[c])
                        acc = 0.0
                        for k in range(b * G, b * G + G):
                            gv[k, n, c] += w * g[k, m, c]
                            acc += v[k, n, c] * g[k, m, c]
                        gls[c] += w * d2 * acc
        for c in range(C):
            gls[c] /= ls[c] ** 3
        return gv, gls

    @_jit
    def _leaky_fwd_nb(x, slope):
        xf = x.reshape(-1)
        out = np.empty_like(xf)
        for i in range(xf.size):
            v = xf[i]
            out[i] = v if v > 0 else slope * v
        return out.reshape(x.shape)

    @_jit
    def _leaky_bwd_nb(x, g, slope):
        xf = x.reshape(-1)
        gf = g.reshape(-1)
        out = np.empty_like(gf)
        for i in range(xf.size):
            out[i] = gf[i] if xf[i] > 0 else slope * gf[i]
        return out.reshape(g.shape)

    @_jit
    def _dw_gw_nb(x, g, W):
        B, K, C = x.shape
        p = W // 2
        gw = np.zeros((W, C))
        for b in range(B):
            for i in range(K):
                j0 = max(0, p - i)
                j1 = min(W, K + p - i)
                for j in range(j0, j1):
                    s = i + j - p
                    for c in range(C):
                        gw[j, c] += g[b, i, c] * x[b, s, c]
        return gw


# ---------------------------------------------------------------------------
# dispatch
# ---------------------------------------------------------------------------


def _f64(a):
    return np.ascontiguousarray(a, dtype=np.float64)


def depthwise_conv1d_forward(x, w):
    """Zero-padded "same" depthwise cross-correlation; x is (B, K, C), w is (W, C) with W odd."""
    x, w = _f64(x), _f64(w)
    if _USE_NUMBA:
        return _dw_fwd_nb(x, w)
    return _dw_fwd_np(x, w)


def depthwise_conv1d_backward(x, w, g):
    x, w, g = _f64(x), _f64(w), _f64(g)
    if _USE_NUMBA:
        return _dw_bwd_nb(x, w, g)
    return _dw_bwd_np(x, w, g)


def rbf_setconv_forward(x_in, v, x_out, ls):
    """out[k, m, c] = sum_n v[k, n, c] * exp(-(x_out[b, m] - x_in[b, n])**2 / (2 ls[c]**2)).

    ``x_in`` and ``x_out`` have P rows and ``v`` has P*G rows; row k of ``v``
    uses the locations of row b = k // G, so G value sets can share one set of
    locations without recomputing the weights.
    """
    x_in, v, x_out, ls = _f64(x_in), _f64(v), _f64(x_out), _f64(ls)
    if _USE_NUMBA:
        return _rbf_fwd_nb(x_in, v, x_out, ls)
    return _rbf_fwd_np(x_in, v, x_out, ls)


def rbf_setconv_backward(x_in, v, x_out, ls, g):
    x_in, v, x_out, ls, g = _f64(x_in), _f64(v), _f64(x_out), _f64(ls), _f64(g)
    if _USE_NUMBA:
        return _rbf_bwd_nb(x_in, v, x_out, ls, g)
    return _rbf_bwd_np(x_in, v, x_out, ls, g)


def leaky_relu_forward(x, slope):
    x = _f64(x)
    if _USE_NUMBA:
        return _leaky_fwd_nb(x, float(slope))
    return np.where(x > 0, x, slope * x)


def leaky_relu_backward(x, g, slope):
    x, g = _f64(x), _f64(g)
    if _USE_NUMBA:
        return _leaky_bwd_nb(x, g, float(slope))
    return np.where(x > 0, g, slope * g)
