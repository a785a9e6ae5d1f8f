# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled propagation kernel (same algorithm as ``_reference.propagate``)."""

import numpy as np

from libc.math cimport sqrt, pow

from ._tableau import A as _A, B as _B, C as _C, E3 as _E3, E5 as _E5, N_STAGES as _NS

cdef enum:
    NS = 12

cdef double SAFETY = 0.9
cdef double MIN_FACTOR = 0.2
cdef double MAX_FACTOR = 10.0

cdef double[:, ::1] TA = np.ascontiguousarray(_A, dtype=float)
cdef double[::1] TB = np.ascontiguousarray(_B, dtype=float)
cdef double[::1] TC = np.ascontiguousarray(_C, dtype=float)
cdef double[::1] TE3 = np.ascontiguousarray(_E3, dtype=float)
cdef double[::1] TE5 = np.ascontiguousarray(_E5, dtype=float)
assert _NS == NS


cdef inline Py_ssize_t _locate(double t, const double[::1] breaks, Py_ssize_t j) noexcept nogil:
    cdef Py_ssize_t m = breaks.shape[0] - 1
    while j < m - 1 and t > breaks[j + 1]:
        j += 1
    while j > 0 and t < breaks[j]:
        j -= 1
    return j


cdef void _coefficients(double t, const double[::1] breaks, const double[:, :, ::1] cheb,
                        Py_ssize_t* seg, double[::1] out) noexcept nogil:
    cdef Py_ssize_t j = _locate(t, breaks, seg[0])
    cdef Py_ssize_t k, n
    cdef Py_ssize_t n_terms = cheb.shape[1]
    cdef Py_ssize_t p = cheb.shape[2]
    cdef double a = breaks[j]
    cdef double b = breaks[j + 1]
    cdef double u = (2.0 * t - a - b) / (b - a)
    cdef double b1, b2, tmp
    seg[0] = j
    for k in range(n_terms):
        b1 = 0.0
        b2 = 0.0
        for n in range(p - 1, 0, -1):
            tmp = 2.0 * u * b1 - b2 + cheb[j, k, n]
            b2 = b1
            b1 = tmp
        out[k] = cheb[j, k, 0] + u * b1 - b2


cdef void _rhs(double t, const double complex[::1] y, double complex[::1] out,
               const double[:, :, ::1] terms, const double[::1] breaks,
               const double[:, :, ::1] cheb, double scale, Py_ssize_t* seg,
               double[::1] coef, double[:, ::1] ham) noexcept nogil:
    cdef Py_ssize_t d = terms.shape[1]
    cdef Py_ssize_t n_terms = terms.shape[0]
    cdef Py_ssize_t i, j, k
    cdef double c, hr, hi
    cdef double complex acc
    _coefficients(t, breaks, cheb, seg, coef)
    for i in range(d):
        for j in range(d):
            ham[i, j] = 0.0
    for k in range(n_terms):
        c = coef[k]
        if c != 0.0:
            for i in range(d):
                for j in range(d):
                    ham[i, j] += c * terms[k, i, j]
    for i in range(d):
        hr = 0.0
        hi = 0.0
        for j in range(d):
            hr += ham[i, j] * y[j].real
            hi += ham[i, j] * y[j].imag
        # -i * scale * (hr + i hi)
        out[i] = scale * hi - 1j * scale * hr


def propagate(psi0, terms, breaks, cheb, double scale, double rtol, double atol,
              double h_max, stops, long max_steps):
    """Propagate ``psi0`` through the sorted output times ``stops``.

    Returns ``(states, n_steps, n_rejected, n_evals, status)``.
    """
    cdef double[:, :, ::1] tv = np.ascontiguousarray(terms, dtype=float)
    cdef double[::1] bv = np.ascontiguousarray(breaks, dtype=float)
    cdef double[:, :, ::1] cv = np.ascontiguousarray(cheb, dtype=float)
    cdef double[::1] sv = np.ascontiguousarray(stops, dtype=float)
    cdef Py_ssize_t d = tv.shape[1]
    cdef Py_ssize_t n_stops = sv.shape[0]
    states_arr = np.empty((n_stops, d), dtype=complex)
    cdef double complex[:, ::1] states = states_arr
    cdef double complex[::1] y = np.array(psi0, dtype=complex)
    cdef double complex[::1] y_new = np.empty(d, dtype=complex)
    cdef double complex[::1] y_stage = np.empty(d, dtype=complex)
    cdef double complex[::1] f = np.empty(d, dtype=complex)
    cdef double complex[:, ::1] kst = np.empty((NS + 1, d), dtype=complex)
    cdef double[::1] coef = np.empty(tv.shape[0], dtype=float)
    cdef double[:, ::1] ham = np.empty((d, d), dtype=float)
    cdef Py_ssize_t seg = 0
    cdef long n_steps = 0, n_rejected = 0, n_evals = 0
    cdef Py_ssize_t i_stop = 0, s, q, i
    cdef double t = 0.0, t_stop, t_new, h, h_try, h_next, err, e5, e3, factor, sc, ay, an
    cdef double complex acc, acc3, acc5
    cdef bint land, rejected = False
    cdef int status = 0

    with nogil:
        _rhs(t, y, f, tv, bv, cv, scale, &seg, coef, ham)
        n_evals += 1
        h = h_max if h_max < 0.01 else 0.01
        while i_stop < n_stops:
            t_stop = sv[i_stop]
            if t >= t_stop:
                for i in range(d):
                    states[i_stop, i] = y[i]
                i_stop += 1
                continue
            if n_steps + n_rejected >= max_steps:
                status = 1
                break
            if h < 1e-15 * (t if t > 1.0 else 1.0):
                status = 2
                break
            h_try = h
            land = False
            if t + 1.01 * h_try >= t_stop:
                h_try = t_stop - t
                land = True
            for i in range(d):
                kst[0, i] = f[i]
            for s in range(1, NS):
                for i in range(d):
                    acc = 0.0
                    for q in range(s):
                        acc = acc + TA[s, q] * kst[q, i]
                    y_stage[i] = y[i] + h_try * acc
                _rhs(t + TC[s] * h_try, y_stage, kst[s], tv, bv, cv, scale, &seg, coef, ham)
                n_evals += 1
            for i in range(d):
                acc = 0.0
                for q in range(NS):
                    acc = acc + TB[q] * kst[q, i]
                y_new[i] = y[i] + h_try * acc
            t_new = t_stop if land else t + h_try
            _rhs(t_new, y_new, kst[NS], tv, bv, cv, scale, &seg, coef, ham)
            n_evals += 1
            e5 = 0.0
            e3 = 0.0
            for i in range(d):
                ay = sqrt(y[i].real * y[i].real + y[i].imag * y[i].imag)
                an = sqrt(y_new[i].real * y_new[i].real + y_new[i].imag * y_new[i].imag)
                sc = atol + rtol * (ay if ay > an else an)
                acc5 = 0.0
                acc3 = 0.0
                for q in range(NS + 1):
                    acc5 = acc5 + TE5[q] * kst[q, i]
                    acc3 = acc3 + TE3[q] * kst[q, i]
                e5 += (acc5.real * acc5.real + acc5.imag * acc5.imag) / (sc * sc)
                e3 += (acc3.real * acc3.real + acc3.imag * acc3.imag) / (sc * sc)
            if e5 == 0.0 and e3 == 0.0:
                err = 0.0
            else:
                err = h_try * e5 / sqrt((e5 + 0.01 * e3) * d)
            if err < 1.0:
                if err == 0.0:
                    factor = MAX_FACTOR
                else:
                    factor = SAFETY * pow(err, -0.125)
                    if factor > MAX_FACTOR:
                        factor = MAX_FACTOR
                if rejected and factor > 1.0:
                    factor = 1.0
                h_next = h_try * factor
                if land and h_try < h:
                    if h_next > h:
                        h = h_next
                else:
                    h = h_next
                if h > h_max:
                    h = h_max
                t = t_new
                for i in range(d):
                    y[i] = y_new[i]
                    f[i] = kst[NS, i]
                n_steps += 1
                rejected = False
                if land:
                    for i in range(d):
                        states[i_stop, i] = y[i]
                    i_stop += 1
            else:
                factor = SAFETY * pow(err, -0.125)
                if factor < MIN_FACTOR:
                    factor = MIN_FACTOR
                h = h_try * factor
                n_rejected += 1
                rejected = True
    return states_arr, n_steps, n_rejected, n_evals, status
