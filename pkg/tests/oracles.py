"""Independent scalar-loop oracles used to cross-check the vectorized engine.

Everything here is deliberately written with explicit Python loops and
``math`` functions so it shares no code path with the package internals.
"""

import math

import numpy as np


def sigmoid_s(x: float) -> float:
    if x >= 0:
        return 1.0 / (1.0 + math.exp(-x))
    e = math.exp(x)
    return e / (1.0 + e)


def _affine(x, w, b):
    out = [0.0] * w.shape[1]
    for j in range(w.shape[1]):
        acc = b[j] if b is not None else 0.0
        for k in range(w.shape[0]):
            acc += x[k] * w[k, j]
        out[j] = acc
    return out


def lstm_step(x, h, c, p):
    """One LSTM step for a single record; p maps names to numpy arrays."""
    H = len(h)

    def gate(name, squash):
        xa = _affine(x, p[f"w_x{name}"], p[f"b_x{name}"])
        ha = _affine(h, p[f"w_h{name}"], p[f"b_h{name}"])
        return [squash(xa[j] + ha[j]) for j in range(H)]

    i = gate("i", sigmoid_s)
    f = gate("f", sigmoid_s)
    o = gate("o", sigmoid_s)
    g = gate("g", math.tanh)
    c_new = [f[j] * c[j] + i[j] * g[j] for j in range(H)]
    h_new = [o[j] * math.tanh(c_new[j]) for j in range(H)]
    return h_new, c_new, {"i": i, "f": f, "o": o, "g": g}


def gru_step(x, h, p):
    H = len(h)
    xr = _affine(x, p["w_xr"], p["b_xr"])
    hr = _affine(h, p["w_hr"], p["b_hr"])
    xz = _affine(x, p["w_xz"], p["b_xz"])
    hz = _affine(h, p["w_hz"], p["b_hz"])
    xn = _affine(x, p["w_xn"], p["b_xn"])
    hn = _affine(h, p["w_hn"], p["b_hn"])
    r = [sigmoid_s(xr[j] + hr[j]) for j in range(H)]
    z = [sigmoid_s(xz[j] + hz[j]) for j in range(H)]
    n = [math.tanh(xn[j] + r[j] * hn[j]) for j in range(H)]
    return [(1.0 - z[j]) * n[j] + z[j] * h[j] for j in range(H)]


def rnn_step(x, h, w_xh, w_hh):
    H = len(h)
    xa = _affine(x, w_xh, None)
    ha = _affine(h, w_hh, None)
    return [math.tanh(ha[j] + xa[j]) for j in range(H)]


def cam_raw(features, weights, class_idx):
    """Weighted channel sum: features [T, C], weights [C, classes]."""
    T, C = features.shape
    return np.array([sum(weights[k, class_idx] * features[n, k] for k in range(C))
                     for n in range(T)])


def attention_alpha(x_tap, context, w_x, w_c, b_c, psi, b_phi):
    """Additive attention coefficients for aligned [T, Cx] and [T, Cc] maps."""
    T = x_tap.shape[0]
    A = w_x.shape[1]
    alphas = []
    for i in range(T):
        hidden = []
        for a in range(A):
            acc = b_c[a]
            for k in range(x_tap.shape[1]):
                acc += w_x[k, a] * x_tap[i, k]
            for k in range(context.shape[1]):
                acc += w_c[k, a] * context[i, k]
            hidden.append(max(acc, 0.0))
        score = b_phi + sum(psi[a] * hidden[a] for a in range(A))
        alphas.append(sigmoid_s(score))
    return np.array(alphas)


def linear_upsample(values, new_len):
    """Loop version of endpoint-anchored linear interpolation."""
    src = len(values)
    if src == 1:
        return np.full(new_len, values[0], dtype=float)
    out = np.zeros(new_len)
    for i in range(new_len):
        pos = i * (src - 1) / (new_len - 1) if new_len > 1 else 0.0
        lo = min(int(math.floor(pos)), src - 2)
        frac = pos - lo
        out[i] = values[lo] * (1.0 - frac) + values[lo + 1] * frac
    return out


def warp_signal(signal, coarse, factor=None):
    """Loop oracle for the shift warp: upsample grid, sample with clamping."""
    L = len(signal)
    m = linear_upsample(coarse, L)
    out = np.zeros(L)
    for n in range(L):
        s = n + m[n] * (L - 1) / 2.0
        s = min(max(s, 0.0), L - 1.0)
        lo = min(int(math.floor(s)), L - 2) if L > 1 else 0
        frac = s - lo
        out[n] = signal[lo] * (1.0 - frac) + signal[min(lo + 1, L - 1)] * frac
    return out


def shift_objective(coarse, score, lam1, lam2, beta=1.0):
    """L1 + total-variation + class-score sum for a coarse shift grid."""
    l1 = sum(abs(v) for v in coarse)
    tv = sum(abs(coarse[i + 1] - coarse[i]) ** beta for i in range(len(coarse) - 1))
    return lam1 * l1 + lam2 * tv + score


def softmax_list(scores):
    mx = max(scores)
    exps = [math.exp(s - mx) for s in scores]
    total = sum(exps)
    return [e / total for e in exps]


def adam_scalar(grad_fn, w0, lr, steps, beta1=0.9, beta2=0.999, eps=1e-8):
    """Textbook Adam trajectory on a scalar parameter."""
    w, m, v = w0, 0.0, 0.0
    trace = []
    for t in range(1, steps + 1):
        g = grad_fn(w)
        m = beta1 * m + (1 - beta1) * g
        v = beta2 * v + (1 - beta2) * g * g
        m_hat = m / (1 - beta1 ** t)
        v_hat = v / (1 - beta2 ** t)
        w = w - lr * m_hat / (math.sqrt(v_hat) + eps)
        trace.append(w)
    return trace


def f1_from_confusion(counts, c):
    """2 TP / (P + p) with rows = prediction, columns = ground truth."""
    counts = np.asarray(counts)
    tp = counts[c, c]
    p_true = counts[:, c].sum()
    p_pred = counts[c, :].sum()
    if p_true + p_pred == 0:
        return 0.0
    return 2.0 * tp / (p_true + p_pred)
