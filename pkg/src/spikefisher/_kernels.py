"""Scalar hot loops: Stieltjes fixed points and local Stieltjes sums.

Two interchangeable backends are provided.  By default the loops are compiled
with ``numba.njit``; setting ``SPIKEFISHER_BACKEND=numpy`` (or running where
numba cannot be imported) keeps them as plain Python with numpy reductions.
Both backends execute the same arithmetic in the same order, so results agree
to rounding and the choice only affects speed.
"""
from __future__ import annotations

import os

import numpy as np

_requested = os.environ.get("SPIKEFISHER_BACKEND", "numba").strip().lower()
if _requested not in ("numba", "numpy"):
    raise ImportError(
        f"SPIKEFISHER_BACKEND must be 'numba' or 'numpy', got {_requested!r}"
    )

BACKEND = "numpy"
if _requested == "numba":
    try:
        from numba import njit

        BACKEND = "numba"
    except ImportError:  # pragma: no cover - numba is a declared dependency
        BACKEND = "numpy"

if BACKEND == "numba":

    def _jit(fn):
        return njit(cache=True)(fn)

else:

    def _jit(fn):
        return fn


# law codes
LAW_DISCRETE = 0
LAW_MP = 1

# equation codes
EQ_LAW = 0  # m = m_law(z)
EQ_M2 = 2  # noncentral covariance LSD
EQ_M3 = 3  # noncentral Fisher LSD

# status codes returned by the solver
OK = 0
NOT_CONVERGED = 1


if BACKEND == "numba":

    @_jit
    def _discrete_sum(t, w, u):
        s = 0j
        for i in range(t.shape[0]):
            s += w[i] / (t[i] - u)
        return s

    @_jit
    def _silverstein_sum(t, w, v):
        s = 0j
        for i in range(t.shape[0]):
            s += w[i] * t[i] / (1.0 + t[i] * v)
        return s

else:

    def _discrete_sum(t, w, u):
        return complex(np.sum(w / (t - u)))

    def _silverstein_sum(t, w, v):
        return complex(np.sum(w * t / (1.0 + t * v)))


@_jit
def _law_st(law, t, w, y, u, v):
    """Stieltjes transform of the base law at ``u``.

    For the generalized Marchenko-Pastur law the companion value ``v`` is an
    auxiliary unknown; one Silverstein update of it is returned alongside.
    """
    if law == LAW_DISCRETE:
        return _discrete_sum(t, w, u), v
    vn = -1.0 / (u - y * _silverstein_sum(t, w, v))
    return (vn + (1.0 - y) / u) / y, vn


@_jit
def _update(eq, law, t, w, y, c1, c2, z, m, v):
    if eq == EQ_LAW:
        return _law_st(law, t, w, y, z, v)
    if eq == EQ_M2:
        b = 1.0 + c1 * m
        lm, vn = _law_st(law, t, w, y, b * (b * z - (1.0 - c1)), v)
        return b * lm, vn
    d = 1.0 + c2 * z * m
    e = 1.0 + (c1 + c2 * z) * m
    shift = (1.0 - c1) / d - z * e / d
    lm, vn = _law_st(law, t, w, y, -e * shift, v)
    return e * lm, vn


@_jit
def fixed_point(eq, law, t, w, y, c1, c2, z, scale, tol, maxit, damp):
    """Damped fixed point with continuation along ``z + i*eta``.

    ``eta`` starts at ``10*scale`` and is halved down to about ``1e-9*scale``
    before the final solve at ``eta = 0``; every stage is warm started from
    the previous one, which pins the branch with ``m ~ -1/z`` at infinity.

    Returns ``(m, v, residual, iterations, status)``.
    """
    eta = 10.0 * scale
    floor = 1e-9 * scale
    m = -1.0 / (z + 1j * eta)
    v = m
    total = 0
    resid = 0.0
    while True:
        zz = z + 1j * eta
        converged = False
        for _ in range(maxit):
            mt, vt = _update(eq, law, t, w, y, c1, c2, zz, m, v)
            total += 1
            dm = abs(mt - m)
            dv = abs(vt - v)
            resid = dm if dm > dv else dv
            if dm <= tol * (1.0 + abs(m)) and dv <= tol * (1.0 + abs(v)):
                m = mt
                v = vt
                converged = True
                break
            m = (1.0 - damp) * m + damp * mt
            v = (1.0 - damp) * v + damp * vt
        if not converged:
            return m, v, resid, total, NOT_CONVERGED
        if eta == 0.0:
            break
        eta *= 0.5
        if eta < floor:
            eta = 0.0
    return m, v, resid, total, OK


@_jit
def local_sum(eigs, center, threshold):
    """Sum of ``1/(l_i - center)`` over eigenvalues outside the relative window.

    Returns ``(sum, n_outside)``.
    """
    s = 0.0
    cnt = 0
    scale = abs(center)
    for i in range(eigs.shape[0]):
        if abs(eigs[i] - center) / scale <= threshold:
            continue
        s += 1.0 / (eigs[i] - center)
        cnt += 1
    return s, cnt
