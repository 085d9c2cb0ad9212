"""Compiled kernels for the diagonal selective-scan recurrence.

The recurrence is sequential in t, so the time loop lives in numba-compiled
code (nogil: a branch running the scan does not hold the interpreter lock
while the other branch computes). The fused kernels also evaluate the
decay exp(delta*A) and the B/C inner products in the same pass, avoiding
(B, T, d_inner, d_state)-sized temporaries.

Pure-numpy fallbacks with identical semantics are used when numba is
unavailable (set FLOWHN_NO_NUMBA=1 to force them).

Shapes: delta, u: (B, T, C); bmat, cmat: (B, T, S); a: (C, S) with C the
inner channel count and S the state size.
"""

from __future__ import annotations

import os

import numpy as np


def _sscan_fwd_np(delta, a, u, bmat, cmat):
    decay = np.exp(delta[..., None] * a)
    bu = (delta * u)[..., None] * bmat[:, :, None, :]
    h = np.empty_like(bu)
    h[:, 0] = bu[:, 0]
    for t in range(1, bu.shape[1]):
        h[:, t] = decay[:, t] * h[:, t - 1] + bu[:, t]
    y = np.einsum("btcs,bts->btc", h, cmat)
    return y, h


def _sscan_bwd_np(delta, a, u, bmat, cmat, h, dy):
    B, T, C = delta.shape
    decay = np.exp(delta[..., None] * a)
    direct = dy[..., None] * cmat[:, :, None, :]
    dh = np.empty_like(h)
    dh[:, T - 1] = direct[:, T - 1]
    for t in range(T - 2, -1, -1):
        dh[:, t] = direct[:, t] + decay[:, t + 1] * dh[:, t + 1]
    h_prev = np.zeros_like(h)
    h_prev[:, 1:] = h[:, :-1]
    d_dta = dh * h_prev * decay
    dw = np.einsum("btcs,bts->btc", dh, bmat)
    ddelta = np.einsum("btcs,cs->btc", d_dta, a) + dw * u
    du = dw * delta
    da = np.einsum("btcs,btc->cs", d_dta, delta)
    dbmat = np.einsum("btcs,btc->bts", dh, delta * u)
    dcmat = np.einsum("btc,btcs->bts", dy, h)
    return ddelta, da, du, dbmat, dcmat


sscan_fwd = _sscan_fwd_np
sscan_bwd = _sscan_bwd_np
HAVE_NUMBA = False

if not os.environ.get("FLOWHN_NO_NUMBA"):
    try:
        from numba import njit

        @njit(nogil=True, cache=True)
        def _sscan_fwd_nb(delta, a, u, bmat, cmat):  # pragma: no cover - compiled
            B, T, C = delta.shape
            S = a.shape[1]
            h = np.empty((B, T, C, S))
            y = np.zeros((B, T, C))
            for b in range(B):
                for t in range(T):
                    for c in range(C):
                        dt = delta[b, t, c]
                        w = dt * u[b, t, c]
                        acc = 0.0
                        for s in range(S):
                            hv = w * bmat[b, t, s]
                            if t > 0:
                                hv += np.exp(dt * a[c, s]) * h[b, t - 1, c, s]
                            h[b, t, c, s] = hv
                            acc += cmat[b, t, s] * hv
                        y[b, t, c] = acc
            return y, h

        @njit(nogil=True, cache=True)
        def _sscan_bwd_nb(delta, a, u, bmat, cmat, h, dy):  # pragma: no cover
            B, T, C = delta.shape
            S = a.shape[1]
            ddelta = np.zeros((B, T, C))
            da = np.zeros((C, S))
            du = np.zeros((B, T, C))
            dbmat = np.zeros((B, T, S))
            dcmat = np.zeros((B, T, S))
            carry = np.zeros((C, S))
            for b in range(B):
                carry[:, :] = 0.0
                for t in range(T - 1, -1, -1):
                    for c in range(C):
                        dt = delta[b, t, c]
                        uv = u[b, t, c]
                        w = dt * uv
                        dyv = dy[b, t, c]
                        dwv = 0.0
                        ddt = 0.0
                        for s in range(S):
                            hv = h[b, t, c, s]
                            dhv = dyv * cmat[b, t, s] + carry[c, s]
                            dcmat[b, t, s] += dyv * hv
                            dbmat[b, t, s] += dhv * w
                            dwv += dhv * bmat[b, t, s]
                            dec = np.exp(dt * a[c, s])
                            if t > 0:
                                d_dta = dhv * h[b, t - 1, c, s] * dec
                                ddt += d_dta * a[c, s]
                                da[c, s] += d_dta * dt
                            carry[c, s] = dec * dhv
                        ddelta[b, t, c] = ddt + dwv * uv
                        du[b, t, c] = dwv * dt
            return ddelta, da, du, dbmat, dcmat

        sscan_fwd = _sscan_fwd_nb
        sscan_bwd = _sscan_bwd_nb
        HAVE_NUMBA = True
    except ImportError:
        pass


def warmup():
    """Trigger JIT compilation so timed runs never include compile time."""
    z3 = np.zeros((1, 2, 1))
    z2 = np.zeros((1, 1))
    zs = np.zeros((1, 2, 1))
    y, h = sscan_fwd(z3, z2, z3, zs, zs)
    sscan_bwd(z3, z2, z3, zs, zs, h, y)
