"""Pure-Python reference implementations of the compiled kernels."""
from __future__ import annotations

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla


def cyclic_tridiagonal(diag_h, up_h) -> sp.csr_matrix:
    """Hermitian cyclic tridiagonal matrix with ``H[p, p+1 mod n] = up_h[p]``."""
    n = len(diag_h)
    p = np.arange(n)
    q = (p + 1) % n
    rows = np.concatenate([p, p, q])
    cols = np.concatenate([p, q, p])
    vals = np.concatenate([np.asarray(diag_h, complex), up_h, np.conj(up_h)])
    return sp.csr_matrix((vals, (rows, cols)), shape=(n, n))


def cn_sparse(H, psi0, tau: float, nsteps: int):
    """Crank-Nicolson steps with a sparse LU of ``1 + i tau H``."""
    n = H.shape[0]
    eye = sp.identity(n, dtype=complex, format="csc")
    lu = spla.splu((eye + 1j * tau * H).tocsc())
    Bm = (eye - 1j * tau * H).tocsr()
    psi = np.array(psi0, dtype=complex)
    for _ in range(nsteps):
        psi = lu.solve(Bm @ psi)
    return psi


def cn_cyclic(diag_h, up_h, psi0, tau: float, nsteps: int):
    return cn_sparse(cyclic_tridiagonal(diag_h, up_h), psi0, tau, nsteps)


def pn_contract(ys, xis, F, coef):
    E = np.exp(1j * np.outer(ys, xis))
    return np.einsum("jl,jlc,l->cj", E, F, coef)
