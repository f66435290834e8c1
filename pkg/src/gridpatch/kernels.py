"""Hot numeric kernels: numba-jitted twins with pure-numpy fallbacks.

The binding is chosen once at import time: each public name points at the
implementation that wins on the benchmark (numba for the power-flow
Jacobian, BLAS-backed numpy elsewhere).  Set ``GRIDPATCH_NUMBA=0`` to force
the all-numpy path; ``benchmarks/bench_kernels.py`` compares both sides.
Both backends compute the same quantities; summation order may differ at
the last ulp, so byte-level reproducibility holds per backend, not across
them.

Kernels:
  conv1d_forward / conv1d_backward   "same"-padded 1-D convolution, layout
                                     time x channels, kernel k x c_in x c_out
  pf_injections                      active/reactive bus injections from a
                                     polar voltage state and dense G/B
  pf_jacobian                        polar Newton power-flow Jacobian for
                                     the [theta_pvpq, vm_pq] unknown vector
"""

from __future__ import annotations

import os

import numpy as np


def _numba_requested() -> bool:
    flag = os.environ.get("GRIDPATCH_NUMBA", "1").strip().lower()
    return flag not in ("0", "false", "off", "no")


# ---------------------------------------------------------------------------
# numpy reference implementations
# ---------------------------------------------------------------------------

def _shift_rows(x: np.ndarray, offset: int) -> np.ndarray:
    """Rows shifted so out[t] = x[t + offset], zero outside the valid range."""
    out = np.zeros_like(x)
    n = x.shape[0]
    if offset >= 0:
        if offset < n:
            out[: n - offset] = x[offset:]
    else:
        out[-offset:] = x[: n + offset]
    return out


def conv1d_forward_np(x: np.ndarray, w: np.ndarray) -> np.ndarray:
    k = w.shape[0]
    pad = k // 2
    out = np.zeros((x.shape[0], w.shape[2]))
    for dt in range(k):
        out += _shift_rows(x, dt - pad) @ w[dt]
    return out


def conv1d_backward_np(x: np.ndarray, w: np.ndarray, gout: np.ndarray):
    k = w.shape[0]
    pad = k // 2
    gx = np.zeros_like(x)
    gw = np.zeros_like(w)
    for dt in range(k):
        gx += _shift_rows(gout, pad - dt) @ w[dt].T
        gw[dt] = _shift_rows(x, dt - pad).T @ gout
    return gx, gw


def pf_injections_np(g: np.ndarray, b: np.ndarray, vm: np.ndarray, va: np.ndarray):
    # S = V conj(Y V) in real arithmetic: four real matmuls, no complex temps
    c = vm * np.cos(va)
    s = vm * np.sin(va)
    i_re = g @ c - b @ s
    i_im = g @ s + b @ c
    return c * i_re + s * i_im, s * i_re - c * i_im


def pf_jacobian_np(
    g: np.ndarray,
    b: np.ndarray,
    vm: np.ndarray,
    va: np.ndarray,
    p: np.ndarray,
    q: np.ndarray,
    pvpq: np.ndarray,
    pq: np.ndarray,
) -> np.ndarray:
    n = len(vm)
    th = va[:, None] - va[None, :]
    ct, st = np.cos(th), np.sin(th)
    vv = vm[:, None] * vm[None, :]
    # full dP/dtheta, dP/dV, dQ/dtheta, dQ/dV blocks, then select rows/cols
    dp_dth = vv * (g * st - b * ct)
    dq_dth = -vv * (g * ct + b * st)
    dp_dv = vm[:, None] * (g * ct + b * st)
    dq_dv = vm[:, None] * (g * st - b * ct)
    i = np.arange(n)
    dp_dth[i, i] = -q - b[i, i] * vm**2
    dq_dth[i, i] = p - g[i, i] * vm**2
    dp_dv[i, i] = p / vm + g[i, i] * vm
    dq_dv[i, i] = q / vm - b[i, i] * vm
    j11 = dp_dth[np.ix_(pvpq, pvpq)]
    j12 = dp_dv[np.ix_(pvpq, pq)]
    j21 = dq_dth[np.ix_(pq, pvpq)]
    j22 = dq_dv[np.ix_(pq, pq)]
    return np.block([[j11, j12], [j21, j22]])


# ---------------------------------------------------------------------------
# numba twins
# ---------------------------------------------------------------------------

NUMBA_ENABLED = False

if _numba_requested():
    try:
        from numba import njit

        NUMBA_ENABLED = True
    except ImportError:  # pragma: no cover - mirror is expected to carry numba
        NUMBA_ENABLED = False

if NUMBA_ENABLED:

    @njit(cache=True)
    def conv1d_forward_nb(x, w):
        t_len, c_in = x.shape
        k, _, c_out = w.shape
        pad = k // 2
        out = np.zeros((t_len, c_out))
        for t in range(t_len):
            for dt in range(k):
                s = t + dt - pad
                if 0 <= s < t_len:
                    for o in range(c_out):
                        acc = 0.0
                        for i in range(c_in):
                            acc += x[s, i] * w[dt, i, o]
                        out[t, o] += acc
        return out

    @njit(cache=True)
    def conv1d_backward_nb(x, w, gout):
        t_len, c_in = x.shape
        k, _, c_out = w.shape
        pad = k // 2
        gx = np.zeros_like(x)
        gw = np.zeros_like(w)
        for t in range(t_len):
            for dt in range(k):
                s = t + dt - pad
                if 0 <= s < t_len:
                    for o in range(c_out):
                        go = gout[t, o]
                        for i in range(c_in):
                            gx[s, i] += go * w[dt, i, o]
                            gw[dt, i, o] += x[s, i] * go
        return gx, gw

    @njit(cache=True)
    def pf_injections_nb(g, b, vm, va):
        n = len(vm)
        p = np.zeros(n)
        q = np.zeros(n)
        for i in range(n):
            pi = 0.0
            qi = 0.0
            for j in range(n):
                th = va[i] - va[j]
                ct = np.cos(th)
                st = np.sin(th)
                pi += vm[j] * (g[i, j] * ct + b[i, j] * st)
                qi += vm[j] * (g[i, j] * st - b[i, j] * ct)
            p[i] = vm[i] * pi
            q[i] = vm[i] * qi
        return p, q

    @njit(cache=True)
    def pf_jacobian_nb(g, b, vm, va, p, q, pvpq, pq):
        npv = len(pvpq)
        npq = len(pq)
        m = npv + npq
        jac = np.zeros((m, m))
        for r in range(npv):
            i = pvpq[r]
            for c in range(npv):
                j = pvpq[c]
                if i == j:
                    jac[r, c] = -q[i] - b[i, i] * vm[i] ** 2
                else:
                    th = va[i] - va[j]
                    jac[r, c] = vm[i] * vm[j] * (g[i, j] * np.sin(th) - b[i, j] * np.cos(th))
            for c in range(npq):
                j = pq[c]
                if i == j:
                    jac[r, npv + c] = p[i] / vm[i] + g[i, i] * vm[i]
                else:
                    th = va[i] - va[j]
                    jac[r, npv + c] = vm[i] * (g[i, j] * np.cos(th) + b[i, j] * np.sin(th))
        for r in range(npq):
            i = pq[r]
            for c in range(npv):
                j = pvpq[c]
                if i == j:
                    jac[npv + r, c] = p[i] - g[i, i] * vm[i] ** 2
                else:
                    th = va[i] - va[j]
                    jac[npv + r, c] = -vm[i] * vm[j] * (g[i, j] * np.cos(th) + b[i, j] * np.sin(th))
            for c in range(npq):
                j = pq[c]
                if i == j:
                    jac[npv + r, npv + c] = q[i] / vm[i] - b[i, i] * vm[i]
                else:
                    th = va[i] - va[j]
                    jac[npv + r, npv + c] = vm[i] * (g[i, j] * np.sin(th) - b[i, j] * np.cos(th))
        return jac


def implementations() -> dict:
    """Backend name -> kernel dict, for the benchmark script and tests."""
    impls = {
        "numpy": {
            "conv1d_forward": conv1d_forward_np,
            "conv1d_backward": conv1d_backward_np,
            "pf_injections": pf_injections_np,
            "pf_jacobian": pf_jacobian_np,
        }
    }
    if NUMBA_ENABLED:
        impls["numba"] = {
            "conv1d_forward": conv1d_forward_nb,
            "conv1d_backward": conv1d_backward_nb,
            "pf_injections": pf_injections_nb,
            "pf_jacobian": pf_jacobian_nb,
        }
    return impls


# Default binding uses the measured winner per kernel (see
# benchmarks/bench_kernels.py): BLAS beats the jitted loops on the small
# dense kernels, while the Jacobian assembly is ~6x faster under numba.
# GRIDPATCH_NUMBA=0 forces the all-numpy path.
conv1d_forward = conv1d_forward_np
conv1d_backward = conv1d_backward_np
pf_injections = pf_injections_np
if NUMBA_ENABLED:
    pf_jacobian = pf_jacobian_nb
    BACKEND = "numba"
else:
    pf_jacobian = pf_jacobian_np
    BACKEND = "numpy"
