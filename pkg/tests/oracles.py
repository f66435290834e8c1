"""Independent reference implementations used to check the package.

Everything here is deliberately written the dumb way (scalar loops, direct
formulas) and must stay independent of the code paths it verifies.
"""

from __future__ import annotations

import numpy as np

FD_STEP = 1e-5


def central_diff_grad(f, x: np.ndarray, step: float = FD_STEP) -> np.ndarray:
    """Central finite differences of a scalar function, element by element."""
    x = np.asarray(x, dtype=np.float64)
    g = np.zeros_like(x)
    flat = x.ravel()
    gf = g.ravel()
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + step
        fp = f(x)
        flat[i] = orig - step
        fm = f(x)
        flat[i] = orig
        gf[i] = (fp - fm) / (2.0 * step)
    return g


def rel_err(a: np.ndarray, b: np.ndarray, floor: float = 1e-6) -> float:
    """Worst-case elementwise relative error with an absolute floor."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    denom = np.maximum(np.maximum(np.abs(a), np.abs(b)), floor)
    return float(np.max(np.abs(a - b) / denom))


def dense_attention(q: np.ndarray, k: np.ndarray, v: np.ndarray) -> np.ndarray:
    """Row-by-row softmax attention, scalar loops only."""
    lq, d = q.shape
    out = np.zeros((lq, v.shape[1]))
    for i in range(lq):
        scores = np.array([float(q[i] @ k[j]) / np.sqrt(d) for j in range(k.shape[0])])
        e = np.exp(scores - scores.max())
        w = e / e.sum()
        for j in range(k.shape[0]):
            out[i] += w[j] * v[j]
    return out


def loop_rmse(pred: np.ndarray, real: np.ndarray) -> float:
    total = 0.0
    n = 0
    for i in range(pred.shape[0]):
        for j in range(pred.shape[1] if pred.ndim > 1 else 1):
            d = (pred[i, j] if pred.ndim > 1 else pred[i]) - (real[i, j] if real.ndim > 1 else real[i])
            total += d * d
            n += 1
    return float(np.sqrt(total / n))


def gauss_seidel_power_flow(ybus: np.ndarray, p_spec, q_spec, slack_v, pv_buses, v_sched, tol=1e-10, iters=20000):
    """Independent Gauss-Seidel AC power-flow solve on a dense Ybus.

    Bus 0 is the slack at ``slack_v``.  ``pv_buses`` hold scheduled P and
    voltage magnitude ``v_sched``; everything else is PQ.
    """
    n = ybus.shape[0]
    v = np.ones(n, dtype=complex) * 1.0
    v[0] = slack_v
    pv = set(int(b) for b in pv_buses)
    for b in pv:
        v[b] = v_sched[b]
    for _ in range(iters):
        maxdelta = 0.0
        for i in range(1, n):
            if i in pv:
                # update Q estimate at scheduled voltage, then the angle
                qi = -np.imag(np.conj(v[i]) * (ybus[i] @ v))
                s = p_spec[i] - 1j * qi
                vnew = (s / np.conj(v[i]) - (ybus[i] @ v - ybus[i, i] * v[i])) / ybus[i, i]
                vnew = v_sched[i] * vnew / abs(vnew)
            else:
                s = p_spec[i] - 1j * q_spec[i]
                vnew = (s / np.conj(v[i]) - (ybus[i] @ v - ybus[i, i] * v[i])) / ybus[i, i]
            maxdelta = max(maxdelta, abs(vnew - v[i]))
            v[i] = vnew
        if maxdelta < tol:
            break
    return v
