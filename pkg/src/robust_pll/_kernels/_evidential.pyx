# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled evidential kernels.

Single-pass C implementations of the per-batch loss/gradient kernels and
the label-weight update.  Digamma and trigamma use the standard upward
recurrence to shift arguments above 10 followed by the asymptotic
Bernoulli series; log-gamma comes from libm.  Matches the numpy backend
to ~1e-13 relative.
"""

import numpy as np

cimport numpy as cnp
from libc.math cimport lgamma, log

cnp.import_array()

BACKEND = "compiled"


cdef double _digamma(double x) noexcept nogil:
    cdef double acc = 0.0
    cdef double inv, inv2, series
    while x < 10.0:
        acc -= 1.0 / x
        x += 1.0
    inv = 1.0 / x
    inv2 = inv * inv
    series = inv2 * (1.0 / 12.0 - inv2 * (1.0 / 120.0 - inv2 * (
        1.0 / 252.0 - inv2 * (1.0 / 240.0 - inv2 * (
            1.0 / 132.0 - inv2 * (691.0 / 32760.0))))))
    return acc + log(x) - 0.5 * inv - series


cdef double _trigamma(double x) noexcept nogil:
    cdef double acc = 0.0
    cdef double inv, inv2, series
    while x < 10.0:
        acc += 1.0 / (x * x)
        x += 1.0
    inv = 1.0 / x
    inv2 = inv * inv
    series = inv * inv2 * (1.0 / 6.0 - inv2 * (1.0 / 30.0 - inv2 * (
        1.0 / 42.0 - inv2 * (1.0 / 30.0 - inv2 * (
            5.0 / 66.0 - inv2 * (691.0 / 2730.0))))))
    return acc + inv + 0.5 * inv2 + series


def digamma(x):
    arr = np.ascontiguousarray(np.atleast_1d(np.asarray(x, dtype=np.float64)))
    out = np.empty_like(arr)
    cdef double[::1] xv = arr.ravel()
    cdef double[::1] ov = out.ravel()
    cdef Py_ssize_t i
    for i in range(xv.shape[0]):
        ov[i] = _digamma(xv[i])
    return out.reshape(np.shape(x)) if np.ndim(x) else float(out[0])


def trigamma(x):
    arr = np.ascontiguousarray(np.atleast_1d(np.asarray(x, dtype=np.float64)))
    out = np.empty_like(arr)
    cdef double[::1] xv = arr.ravel()
    cdef double[::1] ov = out.ravel()
    cdef Py_ssize_t i
    for i in range(xv.shape[0]):
        ov[i] = _trigamma(xv[i])
    return out.reshape(np.shape(x)) if np.ndim(x) else float(out[0])


def log_gamma(x):
    arr = np.ascontiguousarray(np.atleast_1d(np.asarray(x, dtype=np.float64)))
    out = np.empty_like(arr)
    cdef double[::1] xv = arr.ravel()
    cdef double[::1] ov = out.ravel()
    cdef Py_ssize_t i
    for i in range(xv.shape[0]):
        ov[i] = lgamma(xv[i])
    return out.reshape(np.shape(x)) if np.ndim(x) else float(out[0])


def sq_loss_terms(double[:, ::1] evidence, double[:, ::1] weights):
    cdef Py_ssize_t n = evidence.shape[0], k = evidence.shape[1]
    err_arr = np.empty(n, dtype=np.float64)
    var_arr = np.empty(n, dtype=np.float64)
    cdef double[::1] err = err_arr
    cdef double[::1] var = var_arr
    cdef Py_ssize_t i, j
    cdef double s, p, e, v, d
    with nogil:
        for i in range(n):
            s = 0.0
            for j in range(k):
                s += evidence[i, j] + 1.0
            e = 0.0
            v = 0.0
            for j in range(k):
                p = (evidence[i, j] + 1.0) / s
                d = weights[i, j] - p
                e += d * d
                v += p * (1.0 - p)
            err[i] = e
            var[i] = v / (1.0 + s)
    return err_arr, var_arr


def sq_loss_value_grad(double[:, ::1] evidence, double[:, ::1] weights):
    cdef Py_ssize_t n = evidence.shape[0], k = evidence.shape[1]
    err_arr = np.empty(n, dtype=np.float64)
    var_arr = np.empty(n, dtype=np.float64)
    grad_arr = np.empty((n, k), dtype=np.float64)
    cdef double[::1] err = err_arr
    cdef double[::1] var = var_arr
    cdef double[:, ::1] grad = grad_arr
    cdef Py_ssize_t i, j
    cdef double s, p, e, v, d, g, gdot, vterm
    with nogil:
        for i in range(n):
            s = 0.0
            for j in range(k):
                s += evidence[i, j] + 1.0
            e = 0.0
            v = 0.0
            gdot = 0.0
            for j in range(k):
                p = (evidence[i, j] + 1.0) / s
                d = weights[i, j] - p
                e += d * d
                v += p * (1.0 - p)
                g = -2.0 * d + (1.0 - 2.0 * p) / (1.0 + s)
                grad[i, j] = g
                gdot += g * p
            err[i] = e
            var[i] = v / (1.0 + s)
            vterm = v / ((1.0 + s) * (1.0 + s))
            for j in range(k):
                grad[i, j] = (grad[i, j] - gdot) / s - vterm
    return err_arr, var_arr, grad_arr


def kl_value(double[:, ::1] evidence, unsigned char[:, ::1] cand_mask):
    cdef Py_ssize_t n = evidence.shape[0], k = evidence.shape[1]
    kl_arr = np.empty(n, dtype=np.float64)
    cdef double[::1] kl = kl_arr
    cdef Py_ssize_t i, j
    cdef double s0, a, acc
    with nogil:
        for i in range(n):
            s0 = 0.0
            for j in range(k):
                s0 += 1.0 if cand_mask[i, j] else evidence[i, j] + 1.0
            acc = lgamma(s0) - lgamma(<double> k)
            for j in range(k):
                if not cand_mask[i, j]:
                    a = evidence[i, j] + 1.0
                    acc -= lgamma(a)
                    acc += (a - 1.0) * (_digamma(a) - _digamma(s0))
            kl[i] = acc
    return kl_arr


def kl_value_grad(double[:, ::1] evidence, unsigned char[:, ::1] cand_mask):
    cdef Py_ssize_t n = evidence.shape[0], k = evidence.shape[1]
    kl_arr = np.empty(n, dtype=np.float64)
    grad_arr = np.zeros((n, k), dtype=np.float64)
    cdef double[::1] kl = kl_arr
    cdef double[:, ::1] grad = grad_arr
    cdef Py_ssize_t i, j
    cdef double s0, a, acc, psi_s0, tri_s0
    with nogil:
        for i in range(n):
            s0 = 0.0
            for j in range(k):
                s0 += 1.0 if cand_mask[i, j] else evidence[i, j] + 1.0
            psi_s0 = _digamma(s0)
            tri_s0 = _trigamma(s0)
            acc = lgamma(s0) - lgamma(<double> k)
            for j in range(k):
                if not cand_mask[i, j]:
                    a = evidence[i, j] + 1.0
                    acc -= lgamma(a)
                    acc += (a - 1.0) * (_digamma(a) - psi_s0)
                    grad[i, j] = (a - 1.0) * _trigamma(a) - (s0 - k) * tri_s0
            kl[i] = acc
    return kl_arr, grad_arr


def ce_loss_value_grad(double[:, ::1] evidence, double[:, ::1] weights):
    cdef Py_ssize_t n = evidence.shape[0], k = evidence.shape[1]
    loss_arr = np.empty(n, dtype=np.float64)
    grad_arr = np.empty((n, k), dtype=np.float64)
    cdef double[::1] loss = loss_arr
    cdef double[:, ::1] grad = grad_arr
    cdef Py_ssize_t i, j
    cdef double s, acc, wsum, psi_s, tri_s
    with nogil:
        for i in range(n):
            s = 0.0
            wsum = 0.0
            for j in range(k):
                s += evidence[i, j] + 1.0
                wsum += weights[i, j]
            psi_s = _digamma(s)
            tri_s = _trigamma(s)
            acc = 0.0
            for j in range(k):
                acc += weights[i, j] * (psi_s - _digamma(evidence[i, j] + 1.0))
                grad[i, j] = wsum * tri_s - weights[i, j] * _trigamma(evidence[i, j] + 1.0)
            loss[i] = acc
    return loss_arr, grad_arr


def mse_weight_update(double[:, ::1] pbar, unsigned char[:, ::1] cand_mask):
    cdef Py_ssize_t n = pbar.shape[0], k = pbar.shape[1]
    out_arr = np.zeros((n, k), dtype=np.float64)
    cdef double[:, ::1] out = out_arr
    cdef Py_ssize_t i, j
    cdef long n_clamped = 0, size
    cdef double cand_mass, share, row_sum
    cdef bint clamped
    with nogil:
        for i in range(n):
            size = 0
            cand_mass = 0.0
            for j in range(k):
                if cand_mask[i, j]:
                    size += 1
                    cand_mass += pbar[i, j]
            share = (1.0 - cand_mass) / size
            clamped = False
            row_sum = 0.0
            for j in range(k):
                if cand_mask[i, j]:
                    out[i, j] = pbar[i, j] + share
                    if out[i, j] < 0.0:
                        out[i, j] = 0.0
                        clamped = True
                    row_sum += out[i, j]
            if clamped:
                n_clamped += 1
                if row_sum > 0.0:
                    for j in range(k):
                        out[i, j] /= row_sum
                else:
                    for j in range(k):
                        if cand_mask[i, j]:
                            out[i, j] = 1.0 / size
    return out_arr, n_clamped
