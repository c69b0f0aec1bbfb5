"""Band sampling over the dual cell, gap audit, bundle diagnostics and a
smooth periodic gauge for the selected band.

Conventions.  Eigenvectors are normalized in the weighted product of
:class:`~blochfx.fiber.CellGrid`.  The quasiperiodic wrap of the fiber
family reads ``Psi(k + g) = exp(-i g.x) Psi(k)`` for dual vectors ``g``,
which makes ``u(k) = exp(i k.x) Psi(k)`` periodic in ``k``; that periodic
field is what gets interpolated.  ``beta = Im <Psi, dPsi/dk>`` is used
internally; the Berry connection reported to users is ``i <Psi, dPsi/dk>
= -beta``.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import scipy.linalg
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .config import ModelSpec
from .errors import (
    AssumptionAViolated,
    AssumptionBViolated,
    GapTooSmall,
    NonOrthogonalRHS,
    NotApplicable,
    SingularSolve,
)
from .fiber import DENSE_MAX, assemble_batch, assemble_fiber_operator, build_stencil, solve_bands
from .trig import TrigInterpolant

log = logging.getLogger(__name__)

_CHUNK_BYTES = 256 * 2**20


def _chunks(total, n, d):
    per = max(1, int(_CHUNK_BYTES // ((1 + 2 * d) * 16 * n * n)))
    for s in range(0, total, per):
        yield slice(s, min(total, s + per))


_BATCH_EIGH_MAX = 128


def _eigh_lowest(H, count=None):
    """Eigenpairs of a stack of Hermitian matrices; only the lowest ``count``
    when given and the matrices are large (subset solver is much cheaper)."""
    n = H.shape[-1]
    if count is None or n <= _BATCH_EIGH_MAX:
        w, v = np.linalg.eigh(H)
        return (w, v) if count is None else (w[:, :count], v[:, :, :count])
    ws = np.empty((len(H), count))
    vs = np.empty((len(H), n, count), dtype=complex)
    for b, h in enumerate(H):
        ws[b], vs[b] = scipy.linalg.eigh(h, subset_by_index=[0, count - 1], driver="evr")
    return ws, vs


def _dense_eigs(spec, ks, count=None):
    """Eigenpairs at ``ks``; vectors returned weighted-normalized."""
    st = build_stencil(spec)
    n = st.grid.size
    ws, vs = [], []
    for sl in _chunks(len(ks), n, 0):
        H, _, _ = assemble_batch(spec, ks[sl])
        w, v = _eigh_lowest(H, count)
        ws.append(w)
        vs.append(v)
    return np.concatenate(ws), np.concatenate(vs) / np.sqrt(st.grid.weight)


# --------------------------------------------------------------------------
# Atlas


@dataclass(frozen=True, eq=False)
class BandAtlas:
    """Band data on the uniform ``nk^d`` grid over the dual cell.

    ``energies[:, i]`` holds band ``bands[i]``; ``vectors`` are raw
    eigenvectors of band ``m`` with arbitrary per-node phases.  Nodes are
    ordered row-major in the fractional index ``(i_1, ..., i_d)``.
    """

    spec: ModelSpec
    frac: np.ndarray
    nodes: np.ndarray
    bands: tuple[int, ...]
    energies: np.ndarray
    vectors: np.ndarray
    lower_margin: float
    upper_margin: float
    assumption_a: bool
    audit_message: str
    interp: TrigInterpolant = field(repr=False)
    _cache: dict = field(default_factory=dict, repr=False)

    @property
    def band(self) -> int:
        return self.spec.band

    @property
    def dimension(self) -> int:
        return self.spec.dimension

    @property
    def grid_shape(self):
        return (self.spec.nk,) * self.dimension

    @property
    def band_energies(self) -> np.ndarray:
        return self.energies[:, self.bands.index(self.band)]

    @property
    def margin(self) -> float:
        return min(self.lower_margin, self.upper_margin)

    def require_assumption_a(self):
        if not self.assumption_a:
            raise AssumptionAViolated(self.audit_message)


def _sample_nodes(spec: ModelSpec, ks, nb: int):
    n = build_stencil(spec).grid.size
    m = spec.band
    if n <= DENSE_MAX:
        w, v = _dense_eigs(spec, ks, nb)
        return w[:, :nb], v[:, :, m - 1]
    E = np.empty((len(ks), nb))
    V = np.empty((len(ks), n), dtype=complex)
    for i, k in enumerate(ks):
        pairs = solve_bands(assemble_fiber_operator(spec, k, dense=False), nb)
        E[i] = [p.energy for p in pairs]
        V[i] = pairs[m - 1].vector
    return E, V


def build_band_atlas(spec: ModelSpec) -> BandAtlas:
    """Sample bands ``m-1, m, m+1`` on the k-grid and audit the gaps.

    The atlas is returned even when the audit fails; it then carries
    ``assumption_a = False`` and a message naming the offending margin.
    """
    d, nk, m = spec.dimension, spec.nk, spec.band
    n = build_stencil(spec).grid.size
    if m + 1 > n:
        raise AssumptionAViolated(f"band {m} needs {m + 1} eigenpairs but the fiber has {n}")
    axes = [np.arange(nk) / nk] * d
    mesh = np.meshgrid(*axes, indexing="ij")
    frac = np.stack([g.ravel() for g in mesh], axis=-1)
    nodes = frac @ spec.lattice.dual
    E, V = _sample_nodes(spec, nodes, m + 1)
    bands = tuple(range(1, m + 2))
    upper = float(np.min(E[:, m] - E[:, m - 1]))
    lower = float(np.min(E[:, m - 1] - E[:, m - 2])) if m > 1 else float("inf")
    gap_tol = spec.gap_tol
    ok = min(lower, upper) >= gap_tol
    if ok:
        msg = f"band {m} isolated: margins lower={lower:.6g} upper={upper:.6g}"
    else:
        side = "upper" if upper < lower else "lower"
        msg = (f"band {m} not isolated: {side} margin {min(lower, upper):.3e} "
               f"< gap tolerance {gap_tol:.3e}")
    log.info("gap audit: %s", msg)
    keep = bands[-3:] if m > 1 else bands
    cols = [b - 1 for b in keep]
    interp = TrigInterpolant(E[:, m - 1].reshape((nk,) * d), spec.lattice.dual_lengths)
    return BandAtlas(
        spec=spec, frac=frac, nodes=nodes, bands=keep, energies=E[:, cols], vectors=V,
        lower_margin=lower, upper_margin=upper, assumption_a=ok, audit_message=msg,
        interp=interp,
    )


def interpolate_band(atlas: BandAtlas, k, order: int = 0):
    """``E_m`` and (order >= 1) its gradient, (order >= 2) its Hessian at ``k``.

    ``k`` may be a single point of shape ``(d,)`` or a batch ``(B, d)``;
    returned arrays carry a leading batch axis in both cases.
    """
    out = atlas.interp(np.asarray(k, dtype=float).reshape(-1, atlas.dimension), order)
    return [np.real(o) for o in out]


def _seam(atlas: BandAtlas, axis: int) -> np.ndarray:
    """Multiplier ``exp(-i g_axis . x)`` mapping ``Psi(k)`` to ``Psi(k + g_axis)``."""
    x = build_stencil(atlas.spec).grid.coords
    return np.exp(-1j * x @ atlas.spec.lattice.dual[axis])


def _link(w, a, b):
    return w * np.sum(np.conj(a) * b, axis=-1)


def zak_phase(atlas: BandAtlas, vectors=None) -> float:
    """Discrete Berry phase of band ``m`` around the 1D zone, in ``[0, 2 pi)``."""
    if atlas.dimension != 1:
        raise NotApplicable("the Zak phase is a 1D diagnostic; use chern_number in 2D")
    atlas.require_assumption_a()
    V = atlas.vectors if vectors is None else vectors
    w = build_stencil(atlas.spec).grid.weight
    nxt = np.roll(V, -1, axis=0)
    nxt[-1] = _seam(atlas, 0) * V[0]
    prod = np.prod(_link(w, V, nxt))
    return float(np.mod(-np.angle(prod), 2 * np.pi))


def plaquette_curvature(atlas: BandAtlas, vectors=None) -> np.ndarray:
    """Link-variable field strength per plaquette, shape ``(nk, nk)``."""
    if atlas.dimension != 2:
        raise NotApplicable("plaquette curvature needs d = 2")
    nk = atlas.spec.nk
    V = (atlas.vectors if vectors is None else vectors).reshape(nk, nk, -1)
    w = build_stencil(atlas.spec).grid.weight
    s1, s2 = _seam(atlas, 0), _seam(atlas, 1)
    sh1 = np.roll(V, -1, axis=0)
    sh1[-1] = s1 * V[0]
    sh2 = np.roll(V, -1, axis=1)
    sh2[:, -1] = s2 * V[:, 0]
    sh12 = np.roll(sh1, -1, axis=1)
    sh12[:, -1] = s2 * sh1[:, 0]
    U1 = _link(w, V, sh1)
    U2 = _link(w, V, sh2)
    U2r = _link(w, sh1, sh12)
    U1t = _link(w, sh2, sh12)
    return np.angle(U1 * U2r * np.conj(U1t) * np.conj(U2))


def chern_number(atlas: BandAtlas, vectors=None) -> int:
    """Integer Chern number of band ``m`` from plaquette link variables."""
    if atlas.dimension != 2:
        raise NotApplicable("the Chern number needs d = 2")
    atlas.require_assumption_a()
    total = np.sum(plaquette_curvature(atlas, vectors)) / (2 * np.pi)
    c = int(round(total))
    if abs(total - c) > 1e-6:
        raise AssumptionAViolated(f"plaquette sum {total:.6f} is not an integer; refine nk")
    return c


# --------------------------------------------------------------------------
# Gauge


def _transport(w, start, line, closure):
    """Parallel-transport phases along ``line`` (first entry replaced by
    ``start``), then spread the end-of-line mismatch against ``closure``
    linearly.  Returns the transported vectors and the raw mismatch angle."""
    out = np.empty_like(line)
    out[0] = start
    for i in range(1, len(line)):
        ph = _link(w, out[i - 1], line[i])
        out[i] = line[i] * np.conj(ph) / abs(ph)
    phi = float(np.angle(_link(w, out[-1], closure)))
    return out, phi


def _spread(line, phi):
    n = len(line)
    return line * np.exp(1j * phi * np.arange(n) / n)[:, None]


def _anchor_phase(v):
    """Fix a deterministic global phase: largest component real positive."""
    j = int(np.argmax(np.abs(v)))
    return v * np.conj(v[j]) / abs(v[j])


def _gauge_nodes(atlas: BandAtlas) -> np.ndarray:
    d, nk = atlas.dimension, atlas.spec.nk
    w = build_stencil(atlas.spec).grid.weight
    V = atlas.vectors
    if d == 1:
        s = _seam(atlas, 0)
        start = _anchor_phase(V[0])
        line, phi = _transport(w, start, V, s * start)
        return _spread(line, phi)
    V = V.reshape(nk, nk, -1)
    s1, s2 = _seam(atlas, 0), _seam(atlas, 1)
    start = _anchor_phase(V[0, 0])
    spine, phi = _transport(w, start, V[0, :], s2 * start)
    spine = _spread(spine, phi)
    rows, phis = [], []
    for j in range(nk):
        line, phi = _transport(w, spine[j], V[:, j], s1 * spine[j])
        rows.append(line)
        phis.append(phi)
    phis = np.unwrap(np.asarray(phis))
    winding = (phis[0] - phis[-1]) + np.angle(np.exp(1j * (phis[-1] - phis[0])))
    if abs(winding) > 1e-6:
        raise AssumptionBViolated("row-closure phases wind; no periodic smooth gauge")
    out = np.stack([_spread(r, p) for r, p in zip(rows, phis)], axis=1)
    return out.reshape(nk * nk, -1)


@dataclass(frozen=True, eq=False)
class FiberData:
    """Band-``m`` data in the smooth gauge at a batch of quasimomenta.

    Shapes: ``E (B,)``, ``dE (B,d)``, ``hessE (B,d,d)``, ``psi (B,n)``,
    ``Q (B,d,n)`` (normal part of dPsi/dk), ``beta (B,d)``, ``gap (B,)``.
    ``dpsi = Q + i beta psi``.  ``spectrum`` holds all eigenvalues when the
    dense path was used (else ``None``).
    """

    k: np.ndarray
    E: np.ndarray
    dE: np.ndarray
    hessE: np.ndarray
    psi: np.ndarray
    Q: np.ndarray
    beta: np.ndarray
    gap: np.ndarray
    resolvent: "ReducedResolvent"
    ops: object
    spectrum: object = None
    spectral_vectors: object = None

    @property
    def dpsi(self) -> np.ndarray:
        return self.Q + 1j * self.beta[..., None] * self.psi[:, None, :]

    @property
    def berry(self) -> np.ndarray:
        """Berry connection ``i <Psi, dPsi/dk>`` (real)."""
        return -self.beta


class _DenseOps:
    def __init__(self, H, dH, d2H):
        self.H, self.dH, self.d2H = H, dH, d2H

    def apply_H(self, v):
        return np.einsum("bij,bj->bi", self.H, v)

    def apply_dH(self, j, v):
        return np.einsum("bij,bj->bi", self.dH[:, j], v)

    def apply_d2H(self, j, v):
        return np.einsum("bij,bj->bi", self.d2H[:, j], v)


class _SparseOps:
    def __init__(self, ops):
        self.ops = ops

    def apply_H(self, v):
        return np.stack([op.H @ x for op, x in zip(self.ops, v)])

    def apply_dH(self, j, v):
        return np.stack([op.dH[j] @ x for op, x in zip(self.ops, v)])

    def apply_d2H(self, j, v):
        return np.stack([op.d2H[j] @ x for op, x in zip(self.ops, v)])


class ReducedResolvent:
    """Inverse of ``H0(k) - E_m(k)`` on the orthogonal complement of ``Psi``.

    Implemented as a bordered solve: ``[[H - E, v], [v^H, 0]]`` is
    nonsingular whenever ``E`` is a simple eigenvalue, and for right-hand
    sides orthogonal to ``v`` its solution is the reduced resolvent.
    """

    def __init__(self, ops, E, psi, gap, weight, gap_tol, sparse_ops=None):
        self.E = E
        self.psi = psi
        self.gap = gap
        self.weight = weight
        self.gap_tol = gap_tol
        self._ops = ops
        v = psi * np.sqrt(weight)
        self._v = v
        B, n = psi.shape
        if sparse_ops is None:
            K = np.zeros((B, n + 1, n + 1), dtype=complex)
            K[:, :n, :n] = ops.H
            K[:, np.arange(n), np.arange(n)] -= E[:, None]
            K[:, :n, n] = v
            K[:, n, :n] = np.conj(v)
            self._K = K
            self._lu = None
        else:
            self._K = None
            self._lu = []
            for op, e, vv in zip(sparse_ops, E, v):
                M = sp.bmat([[op.H - e * sp.identity(n), sp.csr_matrix(vv[:, None])],
                             [sp.csr_matrix(np.conj(vv)[None, :]), None]], format="csc")
                self._lu.append(spla.splu(M))

    def apply_M(self, x):
        return self._ops.apply_H(x) - self.E[:, None] * x

    def project(self, rhs):
        c = self.weight * np.sum(np.conj(self.psi) * rhs, axis=-1)
        return rhs - c[:, None] * self.psi

    def solve(self, rhs, check: bool = True, tol: float = 1e-8):
        """Apply the reduced resolvent to ``rhs`` of shape ``(B, n)``.

        With ``check`` the solvability condition ``<Psi, rhs> = 0`` is
        enforced (NonOrthogonalRHS otherwise); without it ``rhs`` is
        projected first.
        """
        rhs = np.asarray(rhs, dtype=complex)
        if np.any(self.gap < self.gap_tol):
            raise SingularSolve(f"local gap {self.gap.min():.3e} below {self.gap_tol:.3e}")
        c = self.weight * np.sum(np.conj(self.psi) * rhs, axis=-1)
        if check:
            scale = np.maximum(1.0, np.sqrt(self.weight) * np.linalg.norm(rhs, axis=-1))
            bad = np.abs(c) > tol * scale
            if np.any(bad):
                raise NonOrthogonalRHS(
                    f"<F0, rhs> = {np.abs(c).max():.3e} violates the solvability condition")
        rhs = rhs - c[:, None] * self.psi
        B, n = rhs.shape
        b = np.concatenate([rhs, np.zeros((B, 1))], axis=1)
        if self._K is not None:
            x = np.linalg.solve(self._K, b[..., None])[..., 0]
        else:
            x = np.stack([lu.solve(bb) for lu, bb in zip(self._lu, b)])
        return x[:, :n]


@dataclass(frozen=True, eq=False)
class GaugeSection:
    """Smooth periodic gauge for band ``m``.

    ``vectors`` are the gauge-fixed node eigenvectors (twist included);
    ``berry`` holds ``i <Psi, dPsi/dk>`` at the nodes.  Off-grid the phase
    of a freshly computed eigenvector is aligned to the trigonometric
    interpolant of the periodic node field, which is exact at nodes and
    honours the quasiperiodic wrap identically.
    """

    atlas: BandAtlas
    vectors: np.ndarray
    ref: TrigInterpolant = field(repr=False)
    twist: float = 0.0
    _cache: dict = field(default_factory=dict, repr=False)

    @property
    def spec(self) -> ModelSpec:
        return self.atlas.spec

    def _twist(self, k):
        """``chi(k) = kappa sum_mu sin(2 pi t_mu)`` and its derivatives."""
        g = self.spec.lattice.dual_lengths
        t = 2 * np.pi * k / g
        c = 2 * np.pi / g
        chi = self.twist * np.sum(np.sin(t), axis=-1)
        dchi = self.twist * c * np.cos(t)
        d2chi = -self.twist * c**2 * np.sin(t)
        return chi, dchi, d2chi

    @property
    def berry(self) -> np.ndarray:
        if "berry" not in self._cache:
            self._cache["berry"] = self.evaluate(self.atlas.nodes).berry
        return self._cache["berry"]

    def beta_derivative(self, k):
        """``d beta_l / d k_j`` as array ``(B, j, l)`` from the node interpolant."""
        if "beta_interp" not in self._cache:
            nk, d = self.spec.nk, self.spec.dimension
            beta_nodes = -self.berry
            chi_nodes = self._twist(self.atlas.nodes)[1]
            self._cache["beta_interp"] = TrigInterpolant(
                (beta_nodes - chi_nodes).reshape((nk,) * d + (d,)), self.spec.lattice.dual_lengths)
        k = np.asarray(k, dtype=float).reshape(-1, self.spec.dimension)
        _, g = self._cache["beta_interp"](k, 1)
        out = np.real(g)
        d2chi = self._twist(k)[2]
        for j in range(self.spec.dimension):
            out[:, j, j] += d2chi[:, j]
        return out

    def evaluate(self, k, need_spectrum: bool = False) -> FiberData:
        """Band-``m`` eigendata in this gauge at quasimomenta ``k`` ``(B, d)``.

        Raises GapTooSmall when the local gap falls below the tolerance.
        """
        spec = self.spec
        d, m = spec.dimension, spec.band
        k = np.asarray(k, dtype=float).reshape(-1, d)
        st = build_stencil(spec)
        grid = st.grid
        n, w = grid.size, grid.weight
        B = len(k)
        x = grid.coords
        spectrum = svecs = None
        if n <= DENSE_MAX:
            H, dH, d2H = assemble_batch(spec, k)
            evals, evecs = _eigh_lowest(H, None if need_spectrum else m + 1)
            raw = evecs[:, :, m - 1] / np.sqrt(w)
            E = evals[:, m - 1]
            up = evals[:, m] - E
            lo = E - evals[:, m - 2] if m > 1 else np.full(B, np.inf)
            ops = _DenseOps(H, dH, d2H)
            sparse_ops = None
            if need_spectrum:
                spectrum, svecs = evals, evecs / np.sqrt(w)
        else:
            sparse_ops = [assemble_fiber_operator(spec, kk, dense=False) for kk in k]
            raw = np.empty((B, n), dtype=complex)
            E = np.empty(B)
            up = np.empty(B)
            lo = np.full(B, np.inf)
            for b, op in enumerate(sparse_ops):
                pairs = solve_bands(op, m + 1)
                raw[b] = pairs[m - 1].vector
                E[b] = pairs[m - 1].energy
                up[b] = pairs[m].energy - E[b]
                if m > 1:
                    lo[b] = E[b] - pairs[m - 2].energy
            ops = _SparseOps(sparse_ops)
        gap = np.minimum(lo, up)
        if np.any(gap < spec.gap_tol):
            i = int(np.argmin(gap))
            raise GapTooSmall(f"local gap {gap[i]:.3e} at k={k[i]} below {spec.gap_tol:.3e}")
        uval, ugrad = self.ref(k, 1)
        phase = np.exp(-1j * k @ x.T)  # (B, n)
        ref = phase * uval
        dref = phase[:, None, :] * (ugrad - 1j * x.T[None, :, :] * uval[:, None, :])
        r = w * np.sum(np.conj(ref) * raw, axis=-1)
        if np.any(np.abs(r) < 0.5):
            raise GapTooSmall(f"gauge reference overlap {np.abs(r).min():.3f} too small; refine nk")
        psi = raw * (np.conj(r) / np.abs(r))[:, None]
        rr = ReducedResolvent(ops, E, psi, gap, w, spec.gap_tol, sparse_ops)
        dE = np.empty((B, d))
        Q = np.empty((B, d, n), dtype=complex)
        for j in range(d):
            hp = ops.apply_dH(j, psi)
            dE[:, j] = np.real(w * np.sum(np.conj(psi) * hp, axis=-1))
            Q[:, j] = -rr.solve(hp - dE[:, j, None] * psi, check=False)
        rabs = np.abs(r)
        beta = np.empty((B, d))
        for j in range(d):
            t1 = w * np.sum(np.conj(dref[:, j]) * psi, axis=-1)
            t2 = w * np.sum(np.conj(ref) * Q[:, j], axis=-1)
            beta[:, j] = -np.imag(t1 + t2) / rabs
        hess = np.empty((B, d, d))
        for l in range(d):
            hq = [ops.apply_dH(l, Q[:, j]) for j in range(d)]
            for j in range(d):
                val = 2 * np.real(w * np.sum(np.conj(psi) * hq[j], axis=-1))
                if j == l:
                    val = val + np.real(w * np.sum(np.conj(psi) * ops.apply_d2H(j, psi), axis=-1))
                hess[:, j, l] = val
        hess = 0.5 * (hess + np.swapaxes(hess, 1, 2))
        if self.twist:
            chi, dchi, _ = self._twist(k)
            tw = np.exp(1j * chi)[:, None]
            psi = psi * tw
            Q = Q * tw[:, None]
            beta = beta + dchi
            rr.psi = psi
        return FiberData(k=k, E=E, dE=dE, hessE=hess, psi=psi, Q=Q, beta=beta, gap=gap,
                         resolvent=rr, ops=ops, spectrum=spectrum, spectral_vectors=svecs)


def fix_smooth_gauge(atlas: BandAtlas, twist: float | None = None) -> GaugeSection:
    """Parallel-transport gauge with linear distribution of closure phases.

    In 2D the spine ``k_1 = 0`` is transported first, then each ``k_1``
    line; a winding of the row-closure phases is the Chern obstruction and
    raises AssumptionBViolated.
    """
    if atlas.margin < atlas.spec.tol["degeneracy_tol"]:
        raise GapTooSmall(f"degenerate cluster at a node: {atlas.audit_message}")
    atlas.require_assumption_a()
    if atlas.dimension == 2:
        c = chern_number(atlas)
        if c != 0:
            raise AssumptionBViolated(f"band {atlas.band} has Chern number {c}; "
                                      "no smooth periodic gauge exists")
    spec = atlas.spec
    nk, d = spec.nk, spec.dimension
    V = _gauge_nodes(atlas)
    x = build_stencil(spec).grid.coords
    u = np.exp(1j * atlas.nodes @ x.T) * V
    ref = TrigInterpolant(u.reshape((nk,) * d + (-1,)), spec.lattice.dual_lengths)
    kappa = spec.gauge_twist if twist is None else float(twist)
    gs = GaugeSection(atlas=atlas, vectors=V, ref=ref, twist=kappa)
    if kappa:
        chi = gs._twist(atlas.nodes)[0]
        object.__setattr__(gs, "vectors", V * np.exp(1j * chi)[:, None])
    return gs


def dk_eigenvector(gauge: GaugeSection, k):
    """``dPsi/dk_j`` in the smooth gauge, one array ``(n,)`` per direction."""
    fd = gauge.evaluate(np.asarray(k, dtype=float).reshape(1, -1))
    return [fd.dpsi[0, j] for j in range(fd.dpsi.shape[1])]


def seam_residual(gauge: GaugeSection, k, axis: int = 0) -> float:
    """``||Psi(k + g) - exp(-i g.x) Psi(k)||`` in the off-grid gauge."""
    k = np.asarray(k, dtype=float).reshape(1, -1)
    g = gauge.spec.lattice.dual[axis]
    a = gauge.evaluate(k).psi[0]
    b = gauge.evaluate(k + g).psi[0]
    grid = build_stencil(gauge.spec).grid
    return float(grid.norm(b - _seam(gauge.atlas, axis) * a))


def neighbor_overlap_angles(gauge: GaugeSection) -> np.ndarray:
    """Arguments of nearest-neighbour overlaps along every grid direction."""
    atlas = gauge.atlas
    nk, d = atlas.spec.nk, atlas.dimension
    w = build_stencil(atlas.spec).grid.weight
    V = gauge.vectors.reshape((nk,) * d + (-1,))
    out = []
    for ax in range(d):
        sh = np.roll(V, -1, axis=ax)
        idx = [slice(None)] * (d + 1)
        idx[ax] = -1
        src = [slice(None)] * (d + 1)
        src[ax] = 0
        sh[tuple(idx)] = _seam(atlas, ax) * V[tuple(src)]
        out.append(np.angle(_link(w, V, sh)).ravel())
    return np.concatenate(out)


# --------------------------------------------------------------------------
# Cache


def save_atlas(atlas: BandAtlas, directory) -> Path:
    """Write ``atlas-<spec hash>.npz`` into ``directory``."""
    path = Path(directory) / f"atlas-{atlas.spec.spec_hash()}.npz"
    path.parent.mkdir(parents=True, exist_ok=True)
    np.savez_compressed(
        path, frac=atlas.frac, nodes=atlas.nodes, bands=np.asarray(atlas.bands),
        energies=atlas.energies, vectors=atlas.vectors,
        margins=np.array([atlas.lower_margin, atlas.upper_margin]),
        assumption_a=np.array(atlas.assumption_a), message=np.array(atlas.audit_message),
    )
    return path


def load_atlas(spec: ModelSpec, directory) -> BandAtlas | None:
    path = Path(directory) / f"atlas-{spec.spec_hash()}.npz"
    if not path.exists():
        return None
    z = np.load(path)
    bands = tuple(int(b) for b in z["bands"])
    E = z["energies"]
    d, nk = spec.dimension, spec.nk
    interp = TrigInterpolant(E[:, bands.index(spec.band)].reshape((nk,) * d),
                             spec.lattice.dual_lengths)
    return BandAtlas(
        spec=spec, frac=z["frac"], nodes=z["nodes"], bands=bands, energies=E,
        vectors=z["vectors"], lower_margin=float(z["margins"][0]),
        upper_margin=float(z["margins"][1]), assumption_a=bool(z["assumption_a"]),
        audit_message=str(z["message"]), interp=interp,
    )


def cached_band_atlas(spec: ModelSpec, directory=None) -> BandAtlas:
    if directory is not None:
        hit = load_atlas(spec, directory)
        if hit is not None:
            return hit
    atlas = build_band_atlas(spec)
    if directory is not None:
        Path(directory).mkdir(parents=True, exist_ok=True)
        save_atlas(atlas, directory)
    return atlas
