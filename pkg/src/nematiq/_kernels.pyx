# cython: language_level=3, boundscheck=False, cdivision=True
"""Fused pointwise kernels; arrays are viewed as (batch, component, points)."""

import numpy as np
cimport numpy as cnp

cnp.import_array()


def _flat(a, int comps):
    a = np.asarray(a, dtype=np.float64)
    lead = a.shape[:-3]
    return a.reshape((-1, comps, a.shape[-2] * a.shape[-1])), lead


def cross(a, b):
    a, b = np.broadcast_arrays(a, b)
    shape = a.shape
    fa, _ = _flat(np.ascontiguousarray(a), 3)
    fb, _ = _flat(np.ascontiguousarray(b), 3)
    out = np.empty_like(fa)
    cdef const double[:, :, ::1] x = fa
    cdef const double[:, :, ::1] y = fb
    cdef double[:, :, ::1] o = out
    cdef Py_ssize_t s, p
    with nogil:
        for s in range(x.shape[0]):
            for p in range(x.shape[2]):
                o[s, 0, p] = x[s, 1, p] * y[s, 2, p] - x[s, 2, p] * y[s, 1, p]
                o[s, 1, p] = x[s, 2, p] * y[s, 0, p] - x[s, 0, p] * y[s, 2, p]
                o[s, 2, p] = x[s, 0, p] * y[s, 1, p] - x[s, 1, p] * y[s, 0, p]
    return out.reshape(shape)


def poly_f(n, coeffs):
    n = np.ascontiguousarray(n, dtype=np.float64)
    shape = n.shape
    fn, _ = _flat(n, 3)
    out = np.empty_like(fn)
    cdef const double[:, :, ::1] x = fn
    cdef double[:, :, ::1] o = out
    cdef const double[::1] c = np.ascontiguousarray(coeffs, dtype=np.float64)
    cdef Py_ssize_t s, p, k, deg = c.shape[0] - 1
    cdef double r, phi
    with nogil:
        for s in range(x.shape[0]):
            for p in range(x.shape[2]):
                r = x[s, 0, p] * x[s, 0, p] + x[s, 1, p] * x[s, 1, p] + x[s, 2, p] * x[s, 2, p]
                phi = c[deg]
                for k in range(deg - 1, -1, -1):
                    phi = phi * r + c[k]
                o[s, 0, p] = phi * x[s, 0, p]
                o[s, 1, p] = phi * x[s, 1, p]
                o[s, 2, p] = phi * x[s, 2, p]
    return out.reshape(shape)


def poly_eval(r, coeffs):
    r = np.ascontiguousarray(r, dtype=np.float64)
    shape = r.shape
    flat = r.reshape(-1)
    out = np.empty_like(flat)
    cdef const double[::1] x = flat
    cdef double[::1] o = out
    cdef const double[::1] c = np.ascontiguousarray(coeffs, dtype=np.float64)
    cdef Py_ssize_t p, k, deg = c.shape[0] - 1
    cdef double acc
    with nogil:
        for p in range(x.shape[0]):
            acc = c[deg]
            for k in range(deg - 1, -1, -1):
                acc = acc * x[p] + c[k]
            o[p] = acc
    return out.reshape(shape)


def advect(u, grad):
    u = np.asarray(u, dtype=np.float64)
    grad = np.asarray(grad, dtype=np.float64)
    comps = grad.shape[-4]
    lead = np.broadcast_shapes(u.shape[:-3], grad.shape[:-4])
    npts = grad.shape[-2] * grad.shape[-1]
    fu = np.ascontiguousarray(np.broadcast_to(u, lead + u.shape[-3:])).reshape((-1, 2, npts))
    fg = np.ascontiguousarray(np.broadcast_to(grad, lead + grad.shape[-4:])).reshape((-1, comps, 2, npts))
    out = np.empty((fg.shape[0], comps, npts))
    cdef const double[:, :, ::1] x = fu
    cdef const double[:, :, :, ::1] g = fg
    cdef double[:, :, ::1] o = out
    cdef Py_ssize_t s, c, p
    with nogil:
        for s in range(g.shape[0]):
            for c in range(g.shape[1]):
                for p in range(g.shape[3]):
                    o[s, c, p] = x[s, 0, p] * g[s, c, 0, p] + x[s, 1, p] * g[s, c, 1, p]
    return out.reshape(lead + (comps,) + grad.shape[-2:])
