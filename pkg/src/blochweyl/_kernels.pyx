# cython: boundscheck=False, wraparound=False, cdivision=True, language_level=3
"""Compiled Magnus-4 Bloch-rotation kernel (see _kernels_py for the contract)."""

import numpy as np

cimport numpy as cnp
from libc.math cimport cos, sin, sqrt

BACKEND = "cython"

cdef double _SQRT3_12 = sqrt(3.0) / 12.0


def magnus_rotation_step(cnp.ndarray[cnp.float64_t, ndim=2] omega1,
                         cnp.ndarray[cnp.float64_t, ndim=2] omega2,
                         double h,
                         cnp.ndarray[cnp.float64_t, ndim=2] n):
    cdef Py_ssize_t m = n.shape[0]
    cdef cnp.ndarray[cnp.float64_t, ndim=2] out = np.empty((m, 3), dtype=np.float64)
    cdef double w1x, w1y, w1z, w2x, w2y, w2z
    cdef double rx, ry, rz, cxx, cxy, cxz
    cdef double theta, ax, ay, az, ct, st, dot
    cdef double nx, ny, nz, c2
    cdef Py_ssize_t i
    for i in range(m):
        w1x = omega1[i, 0]; w1y = omega1[i, 1]; w1z = omega1[i, 2]
        w2x = omega2[i, 0]; w2y = omega2[i, 1]; w2z = omega2[i, 2]
        # Magnus-4 rotation vector: h/2 (w1 + w2) + sqrt(3)/12 h^2 (w2 x w1)
        cxx = w2y * w1z - w2z * w1y
        cxy = w2z * w1x - w2x * w1z
        cxz = w2x * w1y - w2y * w1x
        c2 = _SQRT3_12 * h * h
        rx = 0.5 * h * (w1x + w2x) + c2 * cxx
        ry = 0.5 * h * (w1y + w2y) + c2 * cxy
        rz = 0.5 * h * (w1z + w2z) + c2 * cxz
        theta = sqrt(rx * rx + ry * ry + rz * rz)
        nx = n[i, 0]; ny = n[i, 1]; nz = n[i, 2]
        if theta < 1e-300:
            out[i, 0] = nx; out[i, 1] = ny; out[i, 2] = nz
            continue
        ax = rx / theta; ay = ry / theta; az = rz / theta
        ct = cos(theta); st = sin(theta)
        dot = ax * nx + ay * ny + az * nz
        out[i, 0] = ct * nx + st * (ay * nz - az * ny) + (1.0 - ct) * dot * ax
        out[i, 1] = ct * ny + st * (az * nx - ax * nz) + (1.0 - ct) * dot * ay
        out[i, 2] = ct * nz + st * (ax * ny - ay * nx) + (1.0 - ct) * dot * az
    return out


def rotate_bloch(omega_fn, double t0, double t1, int n_steps,
                 cnp.ndarray[cnp.float64_t, ndim=2] n):
    cdef double h = (t1 - t0) / n_steps
    cdef double c1 = 0.5 - sqrt(3.0) / 6.0
    cdef double c2 = 0.5 + sqrt(3.0) / 6.0
    cdef int k
    out = np.array(n, dtype=np.float64, copy=True)
    for k in range(n_steps):
        tk = t0 + k * h
        w1 = np.ascontiguousarray(omega_fn(tk + c1 * h), dtype=np.float64)
        w2 = np.ascontiguousarray(omega_fn(tk + c2 * h), dtype=np.float64)
        out = magnus_rotation_step(w1, w2, h, out)
    return out
