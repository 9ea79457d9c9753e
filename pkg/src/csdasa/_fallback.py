"""Pure-numpy versions of the compiled kernels in ``_ext.pyx``.

Signatures and output layouts match the extension exactly so either can back
``csdasa.kernels``.
"""

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view


def _sigmoid(z):
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    e = np.exp(z[~pos])
    out[~pos] = e / (1.0 + e)
    return out


def im2col(x, k):
    n, c, H, W = x.shape
    pad = k // 2
    xp = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad)))
    win = sliding_window_view(xp, (k, k), axis=(2, 3))  # n, c, H, W, k, k
    return np.ascontiguousarray(win.transpose(0, 1, 4, 5, 2, 3)).reshape(n, c * k * k, H * W)


def col2im(cols, c, H, W, k):
    n = cols.shape[0]
    pad = k // 2
    blocks = cols.reshape(n, c, k, k, H, W)
    out = np.zeros((n, c, H + 2 * pad, W + 2 * pad))
    for di in range(k):
        for dj in range(k):
            out[:, :, di:di + H, dj:dj + W] += blocks[:, :, di, dj]
    return np.ascontiguousarray(out[:, :, pad:pad + H, pad:pad + W])


def lstm_gates_forward(pre, c_prev, peep):
    hid = c_prev.shape[1]
    zi, zf, zo, zg = (pre[:, q * hid:(q + 1) * hid] for q in range(4))
    ig = _sigmoid(zi + peep[0] * c_prev)
    fg = _sigmoid(zf + peep[1] * c_prev)
    og = _sigmoid(zo + peep[2] * c_prev)
    gg = np.tanh(zg)
    c = fg * c_prev + ig * gg
    h = og * np.tanh(c)
    return np.concatenate([ig, fg, og, gg], axis=1), c, h


def lstm_gates_backward(gates, c_prev, c, peep, dh, dc):
    hid = c_prev.shape[1]
    ig, fg, og, gg = (gates[:, q * hid:(q + 1) * hid] for q in range(4))
    tc = np.tanh(c)
    dct = dc + dh * og * (1.0 - tc * tc)
    dzo = dh * tc * og * (1.0 - og)
    dzi = dct * gg * ig * (1.0 - ig)
    dzf = dct * c_prev * fg * (1.0 - fg)
    dzg = dct * ig * (1.0 - gg * gg)
    dpre = np.concatenate([dzi, dzf, dzo, dzg], axis=1)
    dcp = dct * fg + dzi * peep[0] + dzf * peep[1] + dzo * peep[2]
    dpeep = np.stack([(dzi * c_prev).sum(0), (dzf * c_prev).sum(0), (dzo * c_prev).sum(0)])
    return dpre, dcp, dpeep


def pairwise_sqdist(X, Y):
    diff = X[:, None, :] - Y[None, :, :]
    return np.einsum("ijk,ijk->ij", diff, diff)
