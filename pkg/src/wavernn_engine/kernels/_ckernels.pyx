# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled matrix-vector kernels.

All products accumulate in 32-bit floats in a fixed order, and every lane
(row of ``X``) is processed by identical code, so a lane's result never
depends on how many other lanes were passed in the same call.
"""

from libc.stdint cimport int32_t, uint16_t
from libc.math cimport expf, tanhf
from libc.stdlib cimport malloc, free

import numpy as np

cdef extern from *:
    """
    #include <stdint.h>
    #include <string.h>
    /* Exact binary16 -> binary32 widening, subnormals included: shift the
       exponent/mantissa into place, rescale by 2**112 to rebias, then patch
       in the sign and the inf/nan exponent. Branch-free so it vectorizes. */
    typedef union { uint32_t u[16]; float f[16]; } wr_lane16;

    static inline void wr_widen16(const uint16_t* v, float* out) {
        wr_lane16 a, s;
        int r;
        for (r = 0; r < 16; r++) {
            uint32_t h = v[r];
            a.u[r] = (h & 0x7fffu) << 13;
            s.u[r] = ((h & 0x8000u) << 16)
                     | ((0u - (((h & 0x7c00u) + 0x0400u) >> 15)) & 0x7f800000u);
        }
        for (r = 0; r < 16; r++) a.f[r] = a.f[r] * 5.192296858534828e+33f;
        for (r = 0; r < 16; r++) a.u[r] |= s.u[r];
        memcpy(out, a.f, sizeof(a.f));
    }

    static inline float wr_half_to_float(uint16_t h) {
        uint32_t em = ((uint32_t)(h & 0x7fffu)) << 13;
        uint32_t bits;
        float f;
        memcpy(&f, &em, 4);
        f *= 5.192296858534828e+33f;
        memcpy(&bits, &f, 4);
        bits |= (((uint32_t)(h & 0x8000u)) << 16)
                | ((0u - ((((uint32_t)h & 0x7c00u) + 0x0400u) >> 15)) & 0x7f800000u);
        memcpy(&f, &bits, 4);
        return f;
    }
    """
    float wr_half_to_float(uint16_t h) nogil
    void wr_widen16(const uint16_t* v, float* out) nogil


NAME = "compiled"


cdef inline void _dense_rows(const float[:, ::1] W, const float* x, float* y,
                             Py_ssize_t r0, Py_ssize_t r1) noexcept nogil:
    cdef Py_ssize_t n = W.shape[1]
    cdef Py_ssize_t i, j, t
    cdef float acc[8]
    cdef const float* w
    for i in range(r0, r1):
        w = &W[i, 0]
        for t in range(8):
            acc[t] = 0.0
        j = 0
        while j + 8 <= n:
            for t in range(8):
                acc[t] = acc[t] + w[j + t] * x[j + t]
            j += 8
        t = 0
        while j < n:
            acc[t] = acc[t] + w[j] * x[j]
            j += 1
            t += 1
        y[i] = ((acc[0] + acc[1]) + (acc[2] + acc[3])) + ((acc[4] + acc[5]) + (acc[6] + acc[7]))


def dense_matvec_lanes(const float[:, ::1] W, const float[:, ::1] X,
                       float[:, ::1] Y, Py_ssize_t r0=0, Py_ssize_t r1=-1):
    """Y[k, r0:r1] = W[r0:r1] @ X[k] for every lane k."""
    if r1 < 0:
        r1 = W.shape[0]
    cdef Py_ssize_t lane
    with nogil:
        for lane in range(X.shape[0]):
            _dense_rows(W, &X[lane, 0] if X.shape[1] > 0 else NULL, &Y[lane, 0], r0, r1)


cdef inline void _bsr_16x1(const int32_t* ptr, const int32_t* cols, const uint16_t* vals,
                           const float* x, float* y, Py_ssize_t rb0, Py_ssize_t rb1) noexcept nogil:
    cdef Py_ssize_t bi, kk, r
    cdef float acc[16]
    cdef float w[16]
    cdef float xv
    for bi in range(rb0, rb1):
        for r in range(16):
            acc[r] = 0.0
        for kk in range(ptr[bi], ptr[bi + 1]):
            xv = x[cols[kk]]
            wr_widen16(vals + kk * 16, w)
            for r in range(16):
                acc[r] = acc[r] + w[r] * xv
        for r in range(16):
            y[bi * 16 + r] = acc[r]


cdef inline void _bsr_4x4(const int32_t* ptr, const int32_t* cols, const uint16_t* vals,
                          const float* x, float* y, Py_ssize_t rb0, Py_ssize_t rb1) noexcept nogil:
    cdef Py_ssize_t bi, kk, r
    cdef float acc[4]
    cdef float w[16]
    cdef float x0, x1, x2, x3
    cdef const float* xb
    for bi in range(rb0, rb1):
        for r in range(4):
            acc[r] = 0.0
        for kk in range(ptr[bi], ptr[bi + 1]):
            xb = x + cols[kk] * 4
            x0 = xb[0]
            x1 = xb[1]
            x2 = xb[2]
            x3 = xb[3]
            wr_widen16(vals + kk * 16, w)
            for r in range(4):
                acc[r] = (((acc[r] + w[4 * r] * x0) + w[4 * r + 1] * x1)
                          + w[4 * r + 2] * x2) + w[4 * r + 3] * x3
        for r in range(4):
            y[bi * 4 + r] = acc[r]


cdef inline void _bsr_generic(const int32_t* ptr, const int32_t* cols, const uint16_t* vals,
                              int br, int bc, const float* x, float* y, float* acc,
                              Py_ssize_t rb0, Py_ssize_t rb1) noexcept nogil:
    cdef Py_ssize_t bi, kk, r, c
    cdef Py_ssize_t m = br * bc
    cdef float s
    cdef const uint16_t* v
    cdef const float* xb
    for bi in range(rb0, rb1):
        for r in range(br):
            acc[r] = 0.0
        for kk in range(ptr[bi], ptr[bi + 1]):
            xb = x + cols[kk] * bc
            v = vals + kk * m
            for r in range(br):
                s = acc[r]
                for c in range(bc):
                    s = s + wr_half_to_float(v[r * bc + c]) * xb[c]
                acc[r] = s
        for r in range(br):
            y[bi * br + r] = acc[r]


def bsr_matvec_lanes(const int32_t[::1] ptr, const int32_t[::1] cols, const uint16_t[::1] vals,
                     int br, int bc, const float[:, ::1] X, float[:, ::1] Y,
                     Py_ssize_t rb0=0, Py_ssize_t rb1=-1):
    """Block-sparse product over block-rows [rb0, rb1) for every lane of X.

    Per output row the sum runs over retained blocks in column order, then
    over the block's columns left to right.
    """
    if rb1 < 0:
        rb1 = ptr.shape[0] - 1
    cdef Py_ssize_t lane
    cdef const int32_t* p = &ptr[0]
    cdef const int32_t* cp = &cols[0] if cols.shape[0] > 0 else NULL
    cdef const uint16_t* vp = &vals[0] if vals.shape[0] > 0 else NULL
    cdef float* acc = <float*> malloc(br * sizeof(float))
    if acc == NULL:
        raise MemoryError()
    try:
        with nogil:
            for lane in range(X.shape[0]):
                if br == 16 and bc == 1:
                    _bsr_16x1(p, cp, vp, &X[lane, 0], &Y[lane, 0], rb0, rb1)
                elif br == 4 and bc == 4:
                    _bsr_4x4(p, cp, vp, &X[lane, 0], &Y[lane, 0], rb0, rb1)
                else:
                    _bsr_generic(p, cp, vp, br, bc, &X[lane, 0], &Y[lane, 0], acc, rb0, rb1)
    finally:
        free(acc)


def half_to_float(const uint16_t[::1] bits):
    out = np.empty(bits.shape[0], dtype=np.float32)
    cdef float[::1] o = out
    cdef Py_ssize_t i
    with nogil:
        for i in range(bits.shape[0]):
            o[i] = wr_half_to_float(bits[i])
    return out


def gate_nonlinearities(const float[::1] pre, float[::1] out):
    """sigmoid on the first two thirds of ``pre``, tanh on the last third."""
    cdef Py_ssize_t n = pre.shape[0]
    cdef Py_ssize_t split = (2 * n) // 3
    cdef Py_ssize_t i
    with nogil:
        for i in range(split):
            out[i] = 1.0 / (1.0 + expf(-pre[i]))
        for i in range(split, n):
            out[i] = tanhf(pre[i])
