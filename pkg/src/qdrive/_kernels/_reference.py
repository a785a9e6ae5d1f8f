"""Pure numpy implementation of the propagation kernel.

Integrates ``dpsi/dtau = -i T H(tau) psi`` with ``H(tau) = sum_k c_k(tau) H_k``,
where each ``c_k`` is a piecewise Chebyshev series. Explicit Dormand-Prince
8(5,3) with the error norm and step controller of ``scipy.integrate.DOP853``,
plus a hard step ceiling and exact landing on requested output times.
The compiled kernel implements the same algorithm line by line.
"""

import numpy as np

from ._tableau import A, B, C, E3, E5, N_STAGES

SAFETY = 0.9
MIN_FACTOR = 0.2
MAX_FACTOR = 10.0
ERR_EXP = -1.0 / 8.0

STATUS_OK = 0
STATUS_MAX_STEPS = 1
STATUS_UNDERFLOW = 2


def chebyshev_coefficients_at(t, breaks, cheb, seg):
    """Clenshaw evaluation of every coefficient function at ``t``.

    ``seg`` is a one-element list holding the current piece index; it is
    moved in place, which makes monotone sweeps O(1) per call.
    """
    m = breaks.size - 1
    j = seg[0]
    while j < m - 1 and t > breaks[j + 1]:
        j += 1
    while j > 0 and t < breaks[j]:
        j -= 1
    seg[0] = j
    a, b = breaks[j], breaks[j + 1]
    u = (2.0 * t - a - b) / (b - a)
    coef = cheb[j]
    b1 = np.zeros(coef.shape[0])
    b2 = np.zeros(coef.shape[0])
    for n in range(coef.shape[1] - 1, 0, -1):
        b1, b2 = 2.0 * u * b1 - b2 + coef[:, n], b1
    return coef[:, 0] + u * b1 - b2


def propagate(psi0, terms, breaks, cheb, scale, rtol, atol, h_max, stops, max_steps):
    """Propagate ``psi0`` from ``tau = 0`` through the sorted output times ``stops``.

    Returns ``(states, n_steps, n_rejected, n_evals, status)``.
    """
    terms = np.ascontiguousarray(terms, dtype=float)
    breaks = np.ascontiguousarray(breaks, dtype=float)
    cheb = np.ascontiguousarray(cheb, dtype=float)
    stops = np.ascontiguousarray(stops, dtype=float)
    d = terms.shape[1]
    seg = [0]
    n_evals = 0

    def rhs(t, y):
        nonlocal n_evals
        n_evals += 1
        c = chebyshev_coefficients_at(t, breaks, cheb, seg)
        ham = np.tensordot(c, terms, axes=1)
        return -1j * scale * (ham @ y)

    y = np.array(psi0, dtype=complex)
    states = np.empty((stops.size, d), dtype=complex)
    k = np.empty((N_STAGES + 1, d), dtype=complex)
    t = 0.0
    f = rhs(t, y)
    h = min(h_max, 0.01)
    n_steps = n_rejected = 0
    i_stop = 0
    rejected = False
    while i_stop < stops.size:
        t_stop = stops[i_stop]
        if t >= t_stop:
            states[i_stop] = y
            i_stop += 1
            continue
        if n_steps + n_rejected >= max_steps:
            return states, n_steps, n_rejected, n_evals, STATUS_MAX_STEPS
        if h < 1e-15 * max(1.0, t):
            return states, n_steps, n_rejected, n_evals, STATUS_UNDERFLOW
        h_try = h
        land = False
        if t + 1.01 * h_try >= t_stop:
            h_try = t_stop - t
            land = True
        k[0] = f
        for s in range(1, N_STAGES):
            dy = h_try * (A[s, :s] @ k[:s])
            k[s] = rhs(t + C[s] * h_try, y + dy)
        y_new = y + h_try * (B @ k[:N_STAGES])
        t_new = t_stop if land else t + h_try
        f_new = rhs(t_new, y_new)
        k[N_STAGES] = f_new
        sc = atol + rtol * np.maximum(np.abs(y), np.abs(y_new))
        err5 = (E5 @ k) / sc
        err3 = (E3 @ k) / sc
        e5 = float(np.sum(err5.real ** 2 + err5.imag ** 2))
        e3 = float(np.sum(err3.real ** 2 + err3.imag ** 2))
        if e5 == 0.0 and e3 == 0.0:
            err = 0.0
        else:
            err = h_try * e5 / np.sqrt((e5 + 0.01 * e3) * d)
        if err < 1.0:
            factor = MAX_FACTOR if err == 0.0 else min(MAX_FACTOR, SAFETY * err ** ERR_EXP)
            if rejected:
                factor = min(1.0, factor)
            h_next = h_try * factor
            h = min(h_max, max(h, h_next) if (land and h_try < h) else h_next)
            t, y, f = t_new, y_new, f_new
            n_steps += 1
            rejected = False
            if land:
                states[i_stop] = y
                i_stop += 1
        else:
            h = h_try * max(MIN_FACTOR, SAFETY * err ** ERR_EXP)
            n_rejected += 1
            rejected = True
    return states, n_steps, n_rejected, n_evals, STATUS_OK
