# cython: boundscheck=False, wraparound=False, cdivision=True, language_level=3
"""Compiled hot loops: Crank-Nicolson stepping and the two-scale contraction."""
import numpy as np
cimport numpy as cnp
from libc.math cimport cos, sin

ctypedef double complex cplx


cdef inline void _thomas(const cplx[::1] low, const cplx[::1] cp, const cplx[::1] minv,
                         const cplx[::1] rhs, cplx[::1] out, Py_ssize_t n) noexcept nogil:
    cdef Py_ssize_t i
    out[0] = rhs[0] * minv[0]
    for i in range(1, n):
        out[i] = (rhs[i] - low[i] * out[i - 1]) * minv[i]
    for i in range(n - 2, -1, -1):
        out[i] = out[i] - cp[i] * out[i + 1]


def cn_cyclic(cnp.ndarray diag_h, cnp.ndarray up_h, cnp.ndarray psi0, double tau,
              Py_ssize_t nsteps):
    """``nsteps`` Crank-Nicolson steps ``(1 + i tau H) psi' = (1 - i tau H) psi``.

    ``H`` is cyclic tridiagonal and Hermitian: ``H[p, p] = diag_h[p]`` and
    ``H[p, p+1 mod n] = up_h[p]``.  The cyclic system is reduced to a
    tridiagonal one by a Sherman-Morrison update; factors are computed once.
    """
    cdef Py_ssize_t n = diag_h.shape[0]
    if n < 3:
        raise ValueError("cyclic solve needs at least 3 points")
    cdef cplx[::1] d = np.ascontiguousarray(diag_h, dtype=np.complex128)
    cdef cplx[::1] u = np.ascontiguousarray(up_h, dtype=np.complex128)
    cdef cplx[::1] psi = np.array(psi0, dtype=np.complex128)
    cdef cplx I = 1j
    cdef cplx[::1] a = np.empty(n, dtype=np.complex128)    # diagonal of A
    cdef cplx[::1] low = np.empty(n, dtype=np.complex128)  # A[i, i-1]
    cdef cplx[::1] sup = np.empty(n, dtype=np.complex128)  # A[i, i+1]
    cdef cplx[::1] cp = np.empty(n, dtype=np.complex128)
    cdef cplx[::1] minv = np.empty(n, dtype=np.complex128)
    cdef cplx[::1] z = np.empty(n, dtype=np.complex128)
    cdef cplx[::1] rhs = np.empty(n, dtype=np.complex128)
    cdef cplx[::1] y = np.empty(n, dtype=np.complex128)
    cdef cplx[::1] uvec = np.zeros(n, dtype=np.complex128)
    cdef Py_ssize_t i, step
    cdef cplx alpha, beta, gamma, fact, denom
    for i in range(n):
        a[i] = 1.0 + I * tau * d[i]
        sup[i] = I * tau * u[i]
        low[i] = I * tau * u[(i - 1 + n) % n].conjugate()
    alpha = sup[n - 1]          # A[n-1, 0]
    beta = low[0]               # A[0, n-1]
    gamma = -a[0]
    a[0] = a[0] - gamma
    a[n - 1] = a[n - 1] - alpha * beta / gamma
    minv[0] = 1.0 / a[0]
    cp[0] = sup[0] * minv[0]
    for i in range(1, n):
        minv[i] = 1.0 / (a[i] - low[i] * cp[i - 1])
        cp[i] = sup[i] * minv[i]
    uvec[0] = gamma
    uvec[n - 1] = alpha
    _thomas(low, cp, minv, uvec, z, n)
    denom = 1.0 + z[0] + beta * z[n - 1] / gamma
    cdef cplx[::1] bd = np.empty(n, dtype=np.complex128)   # diagonal of B = 1 - i tau H
    cdef cplx[::1] bu = np.empty(n, dtype=np.complex128)   # B[i, i+1]
    cdef cplx[::1] bl = np.empty(n, dtype=np.complex128)   # B[i, i-1]
    for i in range(n):
        bd[i] = 1.0 - I * tau * d[i]
        bu[i] = -sup[i]
        bl[i] = -low[i]
    with nogil:
        for step in range(nsteps):
            rhs[0] = bd[0] * psi[0] + bu[0] * psi[1] + bl[0] * psi[n - 1]
            for i in range(1, n - 1):
                rhs[i] = bd[i] * psi[i] + bu[i] * psi[i + 1] + bl[i] * psi[i - 1]
            rhs[n - 1] = bd[n - 1] * psi[n - 1] + bu[n - 1] * psi[0] + bl[n - 1] * psi[n - 2]
            _thomas(low, cp, minv, rhs, y, n)
            fact = (y[0] + beta * y[n - 1] / gamma) / denom
            for i in range(n):
                psi[i] = y[i] - fact * z[i]
    return np.asarray(psi)


def pn_contract(cnp.ndarray ys, cnp.ndarray xis, cnp.ndarray F, cnp.ndarray coef):
    """``out[c, j] = sum_l exp(i y_j xi_l) F[j, l, c] coef[l]``."""
    cdef double[::1] y = np.ascontiguousarray(ys, dtype=np.float64)
    cdef double[::1] xi = np.ascontiguousarray(xis, dtype=np.float64)
    cdef cplx[:, :, ::1] f = np.ascontiguousarray(F, dtype=np.complex128)
    cdef cplx[::1] c = np.ascontiguousarray(coef, dtype=np.complex128)
    cdef Py_ssize_t ny = f.shape[0], nxi = f.shape[1], n = f.shape[2]
    out_arr = np.zeros((ny, n), dtype=np.complex128)
    cdef cplx[:, ::1] out = out_arr
    cdef Py_ssize_t j, l, q
    cdef double ph
    cdef cplx w
    with nogil:
        for j in range(ny):
            for l in range(nxi):
                ph = y[j] * xi[l]
                w = (cos(ph) + 1j * sin(ph)) * c[l]
                for q in range(n):
                    out[j, q] = out[j, q] + f[j, l, q] * w
    return np.ascontiguousarray(out_arr.T)
