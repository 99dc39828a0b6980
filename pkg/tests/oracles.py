"""Independent reference implementations used to freeze expected values.

Everything here is deliberately naive (plain loops, direct formulas) and
shares no code with the library, so agreement is meaningful.
"""

import numpy as np


def naive_conv2d(x, kernels, bias, stride=1, pad=0):
    """Sliding-window cross-correlation with explicit nested loops."""
    b, cin, h, w = x.shape
    cout, _, kh, kw = kernels.shape
    xp = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad)))
    ho = (h + 2 * pad - kh) // stride + 1
    wo = (w + 2 * pad - kw) // stride + 1
    out = np.zeros((b, cout, ho, wo))
    for bi in range(b):
        for o in range(cout):
            for i in range(ho):
                for j in range(wo):
                    acc = bias[o]
                    for c in range(cin):
                        for u in range(kh):
                            for v in range(kw):
                                acc += xp[bi, c, i * stride + u, j * stride + v] * kernels[o, c, u, v]
                    out[bi, o, i, j] = acc
    return out


def naive_avgpool2(x):
    b, c, h, w = x.shape
    out = np.zeros((b, c, h // 2, w // 2))
    for bi in range(b):
        for ci in range(c):
            for i in range(h // 2):
                for j in range(w // 2):
                    out[bi, ci, i, j] = x[bi, ci, 2 * i : 2 * i + 2, 2 * j : 2 * j + 2].mean()
    return out


def scalar_encode(X, C, s):
    """Direct, unshifted evaluation of the encoding formulas.

    Returns (assignments N x K, raw aggregate K x D, normalized K*D vector).
    Only valid where the plain exponentials are representable.
    """
    X = np.asarray(X, dtype=np.float64)
    C = np.asarray(C, dtype=np.float64)
    s = np.asarray(s, dtype=np.float64)
    n, k = X.shape[0], C.shape[0]
    a = np.zeros((n, k))
    for i in range(n):
        weights = [np.exp(-s[j] * np.sum((X[i] - C[j]) ** 2)) for j in range(k)]
        total = sum(weights)
        for j in range(k):
            a[i, j] = weights[j] / total
    raw = np.zeros((k, C.shape[1]))
    for j in range(k):
        for i in range(n):
            raw[j] += a[i, j] * (X[i] - C[j])
    out = np.zeros_like(raw)
    for j in range(k):
        norm = np.linalg.norm(raw[j])
        if norm >= 1e-12:
            out[j] = raw[j] / norm
    return a, raw, out.reshape(-1)


def central_diff(fn, arrays, h=1e-5):
    """Central finite-difference gradients of scalar ``fn(*arrays)``.

    Perturbs every element of every array; returns a list of gradient
    arrays matching ``arrays``.
    """
    arrays = [np.array(a, dtype=np.float64) for a in arrays]
    grads = []
    for idx in range(len(arrays)):
        g = np.zeros_like(arrays[idx])
        flat = arrays[idx].reshape(-1)
        gflat = g.reshape(-1)
        for j in range(flat.size):
            orig = flat[j]
            flat[j] = orig + h
            fp = fn(*arrays)
            flat[j] = orig - h
            fm = fn(*arrays)
            flat[j] = orig
            gflat[j] = (fp - fm) / (2.0 * h)
        grads.append(g)
    return grads


def rel_err(analytic, numeric, floor=1e-6):
    """Elementwise |a-n| / max(|a|, |n|, floor), reduced to the max.

    The floor absorbs finite-difference roundoff on near-zero entries
    without masking real disagreements.
    """
    a = np.asarray(analytic, dtype=np.float64)
    n = np.asarray(numeric, dtype=np.float64)
    denom = np.maximum(np.maximum(np.abs(a), np.abs(n)), floor)
    return float(np.max(np.abs(a - n) / denom)) if a.size else 0.0
