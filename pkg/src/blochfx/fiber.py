"""Discretized fiber Hamiltonian ``H0(k) = (-i d/dx + w x x / 2 + k)^2 + V``.

The kinetic term uses a link-phase (Peierls-factor) stencil: a hop along a
grid link carries ``exp(i * integral of (a(x) + k) along the link)``, and a
hop that leaves the unit cell picks up the magnetic-translation phase that
enforces ``T_gamma u = u``.  Both are unit-modulus, so the matrix is exactly
Hermitian and exactly magnetic-periodic at every grid size, and the
k-derivatives of the matrix are available in closed form.
"""
from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np
import scipy.linalg
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .config import ModelSpec
from .errors import EigensolverFailure

DENSE_MAX = 1024

# second-derivative stencils: (diagonal weight, ((step, weight), ...))
_STENCILS = {
    2: (2.0, ((1, 1.0),)),
    4: (2.5, ((1, 4.0 / 3.0), (2, -1.0 / 12.0))),
}


@dataclass(frozen=True, eq=False)
class CellGrid:
    """Uniform grid on the unit cell; flattened index is row-major."""

    shape: tuple[int, ...]
    lengths: np.ndarray

    @property
    def size(self) -> int:
        return int(np.prod(self.shape))

    @property
    def spacing(self) -> np.ndarray:
        return self.lengths / np.asarray(self.shape)

    @property
    def weight(self) -> float:
        """Quadrature weight of one node in the discrete L2(E) product."""
        return float(np.prod(self.spacing))

    @property
    def coords(self) -> np.ndarray:
        axes = [np.arange(n) * h for n, h in zip(self.shape, self.spacing)]
        mesh = np.meshgrid(*axes, indexing="ij")
        return np.stack([m.ravel() for m in mesh], axis=-1)

    def inner(self, a, b):
        """Discrete L2(E) inner product, antilinear in ``a``; batches over leading axes."""
        return self.weight * np.sum(np.conj(a) * b, axis=-1)

    def norm(self, a):
        return np.sqrt(np.real(self.inner(a, a)))


@dataclass(frozen=True, eq=False)
class Stencil:
    """k-independent part of the fiber operator.

    ``H(k)[rows, cols] = base * exp(i disp . k)`` plus the real diagonal.
    """

    grid: CellGrid
    rows: np.ndarray
    cols: np.ndarray
    base: np.ndarray
    disp: np.ndarray
    diag: np.ndarray

    def values(self, k):
        """Off-diagonal values for quasimomenta ``k`` of shape ``(..., d)``."""
        k = np.asarray(k, dtype=float)
        return self.base * np.exp(1j * (k @ self.disp.T))


@lru_cache(maxsize=32)
def build_stencil(spec: ModelSpec) -> Stencil:
    d = spec.dimension
    grid = CellGrid(spec.cell_shape, spec.lattice.lengths)
    shape = np.asarray(grid.shape)
    h = grid.spacing
    a = spec.lattice.lengths
    B0 = spec.magnetic.B0
    x = grid.coords
    idx = np.arange(grid.size).reshape(grid.shape)
    multi = np.stack(np.unravel_index(np.arange(grid.size), grid.shape), axis=-1)
    diag_w, hops = _STENCILS[spec.stencil_order]

    rows, cols, base, disp = [], [], [], []
    for mu in range(d):
        for step, weight in hops:
            for sgn in (1, -1):
                s = sgn * step
                tgt = multi.copy()
                tgt[:, mu] += s
                wraps = np.floor_divide(tgt[:, mu], shape[mu])
                tgt[:, mu] -= wraps * shape[mu]
                xt = tgt * h
                # Peierls phase of the symmetric-gauge potential along the link
                if d == 2 and B0 != 0:
                    other = 1 - mu
                    sign = -1.0 if mu == 0 else 1.0
                    theta = sign * 0.5 * B0 * x[:, other] * s * h[mu]
                    # T_gamma u = u  =>  u(x' + g a_mu e_mu) = exp(i g (w x x').a_mu e_mu / 2) u(x')
                    theta = theta + wraps * sign * 0.5 * B0 * xt[:, other] * a[mu]
                else:
                    theta = np.zeros(grid.size)
                dvec = np.zeros(d)
                dvec[mu] = s * h[mu]
                rows.append(np.arange(grid.size))
                cols.append(idx[tuple(tgt.T)])
                base.append(-weight / h[mu] ** 2 * np.exp(1j * theta))
                disp.append(np.broadcast_to(dvec, (grid.size, d)))
    pairs = np.concatenate(rows) * grid.size + np.concatenate(cols)
    assert len(np.unique(pairs)) == len(pairs), "stencil links must be distinct"
    diag = np.full(grid.size, diag_w * np.sum(1.0 / h**2))
    diag = diag + spec.potential(spec.lattice, x)
    return Stencil(
        grid=grid,
        rows=np.concatenate(rows),
        cols=np.concatenate(cols),
        base=np.concatenate(base),
        disp=np.concatenate(disp),
        diag=diag,
    )


@dataclass(frozen=True, eq=False)
class FiberOperator:
    """``H0(k)`` on the cell grid plus its exact k-derivatives.

    ``dH[j]`` is dH/dk_j; ``d2H[j]`` is d^2H/dk_j^2 (mixed second
    derivatives vanish for the axis-aligned stencil).
    """

    spec: ModelSpec
    k: np.ndarray
    grid: CellGrid
    H: object
    dH: tuple
    d2H: tuple

    @property
    def is_dense(self) -> bool:
        return isinstance(self.H, np.ndarray)

    @property
    def size(self) -> int:
        return self.grid.size

    def hermiticity_error(self) -> float:
        H = self.H if self.is_dense else self.H.toarray()
        return float(np.max(np.abs(H - H.conj().T)))


def assemble_fiber_operator(spec: ModelSpec, k, dense: bool | None = None) -> FiberOperator:
    """Assemble ``H0(k)``; dense when the grid has at most DENSE_MAX nodes."""
    st = build_stencil(spec)
    k = np.atleast_1d(np.asarray(k, dtype=float))
    n = st.grid.size
    if dense is None:
        dense = n <= DENSE_MAX
    vals = st.values(k)
    dH, d2H = [], []
    mats = []
    for j in range(spec.dimension):
        dv = 1j * st.disp[:, j] * vals
        mats.append((dv, -(st.disp[:, j] ** 2) * vals))
    if dense:
        H = np.zeros((n, n), dtype=complex)
        np.add.at(H, (st.rows, st.cols), vals)
        H[np.diag_indices(n)] += st.diag
        for dv, d2v in mats:
            a = np.zeros((n, n), dtype=complex)
            np.add.at(a, (st.rows, st.cols), dv)
            b = np.zeros((n, n), dtype=complex)
            np.add.at(b, (st.rows, st.cols), d2v)
            dH.append(a)
            d2H.append(b)
    else:
        H = sp.coo_matrix((vals, (st.rows, st.cols)), shape=(n, n)).tocsr() + sp.diags(st.diag)
        for dv, d2v in mats:
            dH.append(sp.coo_matrix((dv, (st.rows, st.cols)), shape=(n, n)).tocsr())
            d2H.append(sp.coo_matrix((d2v, (st.rows, st.cols)), shape=(n, n)).tocsr())
    return FiberOperator(spec, k, st.grid, H, tuple(dH), tuple(d2H))


def assemble_batch(spec: ModelSpec, ks):
    """Dense ``H``, ``dH`` and ``d2H`` for a batch ``ks`` of shape ``(B, d)``.

    Returns arrays of shapes ``(B, n, n)``, ``(B, d, n, n)``, ``(B, d, n, n)``.
    """
    st = build_stencil(spec)
    ks = np.asarray(ks, dtype=float).reshape(-1, spec.dimension)
    B, n, d = len(ks), st.grid.size, spec.dimension
    vals = st.values(ks)  # (B, nnz)
    H = np.zeros((B, n, n), dtype=complex)
    H[:, st.rows, st.cols] = vals
    H[:, np.arange(n), np.arange(n)] += st.diag
    dH = np.zeros((B, d, n, n), dtype=complex)
    d2H = np.zeros((B, d, n, n), dtype=complex)
    for j in range(d):
        dH[:, j, st.rows, st.cols] = 1j * st.disp[:, j] * vals
        d2H[:, j, st.rows, st.cols] = -(st.disp[:, j] ** 2) * vals
    return H, dH, d2H


@dataclass(frozen=True, eq=False)
class Eigenpair:
    """Eigenvalue and eigenvector normalized in the discrete L2(E) product."""

    energy: float
    vector: np.ndarray
    index: int


def _lowest_eigs(H, m_max: int, tol: float):
    if isinstance(H, np.ndarray):
        n = H.shape[0]
        try:
            w, v = scipy.linalg.eigh(H, subset_by_index=[0, min(m_max, n) - 1], driver="evr")
        except (np.linalg.LinAlgError, ValueError) as exc:
            raise EigensolverFailure(f"dense eigh failed: {exc}") from exc
        return w, v
    # shift-invert below the spectrum: H >= min(diag - row offdiag sum)
    n = H.shape[0]
    absrow = np.asarray(abs(H).sum(axis=1)).ravel()
    dg = H.diagonal().real
    sigma = float(np.min(dg - (absrow - np.abs(dg)))) - 1.0
    try:
        w, v = spla.eigsh(H, k=min(m_max, n - 2), sigma=sigma, which="LM", tol=tol * 1e-2)
    except (spla.ArpackNoConvergence, spla.ArpackError) as exc:
        raise EigensolverFailure(f"sparse eigsh failed near sigma={sigma:.4g}: {exc}") from exc
    order = np.argsort(w)
    return w[order], v[:, order]


def solve_bands(op: FiberOperator, m_max: int) -> list[Eigenpair]:
    """Lowest ``m_max`` eigenpairs of ``op``, ascending.

    Raises EigensolverFailure when the solver does not converge or the
    returned pairs fail the residual check.
    """
    if m_max > op.size:
        raise ValueError("m_max exceeds the matrix size")
    tol = op.spec.tol["eig_tol"]
    w, v = _lowest_eigs(op.H, m_max, tol)
    scale = max(1.0, float(np.max(np.abs(w))))
    resid = np.linalg.norm(op.H @ v - v * w, axis=0)
    if np.any(resid > tol * scale * 1e3):
        raise EigensolverFailure(f"eigen residual {resid.max():.3e} exceeds tolerance")
    wt = np.sqrt(op.grid.weight)
    return [Eigenpair(float(w[i]), v[:, i] / wt, i + 1) for i in range(len(w))]


def velocity_expectation(op: FiberOperator, pair: Eigenpair) -> np.ndarray:
    """Hellmann-Feynman velocity ``<Psi, dH/dk_j Psi>``."""
    psi = pair.vector
    return np.array([np.real(op.grid.inner(psi, dHj @ psi)) for dHj in op.dH])


def reduce_to_cell(spec: ModelSpec, k):
    return spec.lattice.reduce_k(k)


def free_dispersion(k, h, order: int = 2):
    """Exact eigenvalue of the V=0 stencil on a plane wave of momentum ``k``."""
    k = np.asarray(k, dtype=float)
    diag_w, hops = _STENCILS[order]
    out = diag_w / h**2 + 0 * k
    for step, weight in hops:
        out = out - 2 * weight * np.cos(step * k * h) / h**2
    return out


def dump_matrix(path, M) -> None:
    """Write a matrix as little-endian: int64 rows, int64 cols, then row-major
    (re, im) float64 pairs."""
    M = np.asarray(M.toarray() if sp.issparse(M) else M, dtype=np.complex128)
    with open(path, "wb") as fh:
        fh.write(np.asarray(M.shape, dtype="<i8").tobytes())
        fh.write(np.ascontiguousarray(M).view("<f8").tobytes())


def load_matrix(path) -> np.ndarray:
    raw = np.fromfile(path, dtype="<u1")
    shape = tuple(np.frombuffer(raw[:16].tobytes(), dtype="<i8"))
    data = np.frombuffer(raw[16:].tobytes(), dtype="<f8").view(np.complex128)
    return data.reshape(shape)
