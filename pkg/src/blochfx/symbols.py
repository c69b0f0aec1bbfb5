"""Effective-Hamiltonian symbols ``h0``, ``h1`` and the correctors ``F0``, ``F1``.

Phase-space points carry a slow position ``y`` and quasimomentum ``k``;
all fiber quantities are evaluated at the shifted quasimomentum
``kt = k + A(y)``.  Everything is batched over points.

The first-order fiber operator is the exact two-scale expansion of the
link-phase stencil::

    H1 = -i sum_l dH/dk_l d/dy_l - (i/2) sum_jl d2H/dk_j dk_l  dA_j/dy_l

which reduces to ``-2i (k + A) . grad_y - i div A`` for the continuum
Laplacian (``d2H/dk^2 = 2``).  Using the discrete form keeps the
corrector equations exact at every cell resolution.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .atlas import FiberData, GaugeSection, ReducedResolvent, build_band_atlas, fix_smooth_gauge
from .config import ModelSpec, SlowFields, eval_slow_fields
from .errors import RouteMismatch


@dataclass(frozen=True)
class PhaseSpacePoint:
    y: tuple
    k: tuple

    def shifted(self, spec: ModelSpec) -> np.ndarray:
        sf = eval_slow_fields(spec.slow, np.asarray(self.y, dtype=float)[None, :])
        return np.asarray(self.k, dtype=float) + sf.A[0]


@dataclass(frozen=True, eq=False)
class SymbolData:
    """Symbol values at a batch of ``B`` phase-space points.

    ``dh0_dy`` and ``dh0_dk`` are ``(B, d)``; ``F0``/``F1`` are ``(B, n)``
    cell functions; ``h1`` is route-inner-product, ``h1_explicit`` is the
    closed-form route when requested.
    """

    y: np.ndarray
    k: np.ndarray
    kt: np.ndarray
    slow: SlowFields
    fiber: FiberData
    h0: np.ndarray
    dh0_dy: np.ndarray
    dh0_dk: np.ndarray
    h1: np.ndarray | None = None
    h1_explicit: np.ndarray | None = None
    L3: np.ndarray | None = None
    F0: np.ndarray | None = None
    F1: np.ndarray | None = None
    a1: np.ndarray | None = None
    rhs: np.ndarray | None = None
    dyF0: np.ndarray | None = None
    H1F0: np.ndarray | None = None

    @property
    def B3(self) -> np.ndarray:
        return self.slow.B[:, 2]

    @property
    def L(self) -> np.ndarray:
        out = np.zeros((len(self.h0), 3))
        if self.L3 is not None:
            out[:, 2] = self.L3
        return out


class SymbolTable:
    """Evaluators for ``h0``, ``h1``, ``F0``, ``F1`` and ``a1`` on one band.

    Parameters
    ----------
    gauge : GaugeSection
        Smooth gauge of the band; fixes ``F0`` and the Berry terms.
    use_a1 : bool
        Include the normalizer ``a1 F0`` in ``F1``.  Switching it off is
        only meant for ablation studies.
    check_routes : bool
        Evaluate the closed-form ``h1`` alongside the inner-product route and
        raise RouteMismatch when they disagree.
    """

    def __init__(self, gauge: GaugeSection, use_a1: bool = True, check_routes: bool = False):
        self.gauge = gauge
        self.spec = gauge.spec
        self.use_a1 = use_a1
        self.check_routes = check_routes
        self._memo: dict = {}

    @classmethod
    def from_spec(cls, spec: ModelSpec, **kw) -> "SymbolTable":
        return cls(fix_smooth_gauge(build_band_atlas(spec)), **kw)

    @property
    def weight(self) -> float:
        return _weight(self.spec)

    @property
    def provenance(self) -> dict:
        return {"spec_hash": self.spec.spec_hash(), "band": self.spec.band,
                "h1_route": "inner_product", "a1": self.use_a1, "gauge_twist": self.gauge.twist}

    def _points(self, y, k):
        d = self.spec.dimension
        y = np.asarray(y, dtype=float).reshape(-1, d)
        k = np.asarray(k, dtype=float).reshape(-1, d)
        y, k = np.broadcast_arrays(y, k)
        return y, k

    def evaluate(self, y, k, order: int = 1, explicit: bool | None = None) -> SymbolData:
        """Evaluate symbols at points ``(y, k)``; ``order=0`` stops after
        ``h0`` and ``F0``."""
        y, k = self._points(y, k)
        spec = self.spec
        d = spec.dimension
        w = _weight(spec)
        sf = eval_slow_fields(spec.slow, y, order=2)
        kt = k + sf.A
        fd = self.gauge.evaluate(kt)
        dA = sf.dA
        h0 = fd.E + sf.W
        dh0_dy = np.einsum("bi,bil->bl", fd.dE, dA) + sf.dW
        base = dict(y=y, k=k, kt=kt, slow=sf, fiber=fd, h0=h0, dh0_dy=dh0_dy, dh0_dk=fd.dE,
                    F0=fd.psi)
        if order == 0:
            return SymbolData(**base)
        psi, D = fd.psi, fd.dpsi
        ops = fd.ops
        # dF0/dy_l = sum_j dPsi/dk_j dA_j/dy_l
        dyF0 = np.einsum("bjn,bjl->bln", D, dA)
        H1F0 = np.zeros_like(psi)
        for l in range(d):
            H1F0 = H1F0 - 1j * ops.apply_dH(l, dyF0[:, l])
        for j in range(d):
            H1F0 = H1F0 - 0.5j * dA[:, j, j, None] * ops.apply_d2H(j, psi)
        ip = w * np.sum(np.conj(psi) * H1F0, axis=-1)
        h1 = -np.sum(fd.beta * dh0_dy, axis=-1) + ip
        rhs = (-1j) * np.einsum("bln,bl->bn", D, dh0_dy) + h1[:, None] * psi - H1F0
        F1 = fd.resolvent.solve(rhs)
        a1 = self.a1_values(kt, dA)
        if self.use_a1:
            F1 = F1 + a1[:, None] * psi
        L3 = angular_momentum(fd) if d == 2 else np.zeros(len(h0))
        h1x = None
        if self.check_routes if explicit is None else explicit:
            h1x = h1_explicit(fd, sf, dh0_dy, L3)
            tol = spec.tol["route_tol"]
            bad = np.abs(h1x - h1) > tol * (1 + np.abs(h1))
            if np.any(bad):
                i = int(np.argmax(np.abs(h1x - h1)))
                raise RouteMismatch(
                    f"h1 routes disagree at y={y[i]}, k={k[i]}: "
                    f"inner_product={h1[i]:.10g}, explicit={h1x[i]:.10g}")
        return SymbolData(**base, h1=h1, h1_explicit=h1x, L3=L3, F1=F1, a1=a1, rhs=rhs,
                          dyF0=dyF0, H1F0=H1F0)

    def a1_values(self, kt, dA) -> np.ndarray:
        """``a1 = (1/2) sum_jl d beta_l/dk_j dA_j/dy_l`` (real by construction)."""
        db = self.gauge.beta_derivative(kt)
        return 0.5 * np.einsum("bjl,bjl->b", db, dA)

    # scalar conveniences, memoized per point

    def at(self, y, k) -> SymbolData:
        key = tuple(np.round(np.concatenate([np.ravel(y), np.ravel(k)]), 12))
        hit = self._memo.get(key)
        if hit is None:
            hit = self.evaluate(y, k)
            if len(self._memo) > 4096:
                self._memo.clear()
            self._memo[key] = hit
        return hit


def _weight(spec: ModelSpec) -> float:
    from .fiber import build_stencil

    return build_stencil(spec).grid.weight


def angular_momentum(fd: FiberData) -> np.ndarray:
    """``L3 = Im <M dPsi/dk_1, dPsi/dk_2>`` with ``M = H0 - E``.

    Only normal parts contribute since ``M Psi = 0``.
    """
    w = fd.resolvent.weight
    MQ1 = fd.resolvent.apply_M(fd.Q[:, 0])
    return np.imag(w * np.sum(np.conj(MQ1) * fd.Q[:, 1], axis=-1))


def angular_momentum_sum_over_states(fd: FiberData, band: int) -> np.ndarray:
    """Independent ``L3`` from the full spectrum (dense evaluations only)::

        L3 = Im sum_{n != m} <dH_1 Psi, Psi_n><Psi_n, dH_2 Psi> / (E_n - E_m)
    """
    if fd.spectrum is None:
        raise ValueError("sum-over-states needs FiberData evaluated with need_spectrum=True")
    w = fd.resolvent.weight
    out = np.empty(len(fd.E))
    g1 = fd.ops.apply_dH(0, fd.psi)
    g2 = fd.ops.apply_dH(1, fd.psi)
    for b in range(len(fd.E)):
        vecs = fd.spectral_vectors[b]
        ev = fd.spectrum[b]
        a = w * (vecs.conj().T @ g1[b])
        c = w * (vecs.conj().T @ g2[b])
        mask = np.arange(len(ev)) != band - 1
        out[b] = np.imag(np.sum(np.conj(a[mask]) * c[mask] / (ev[mask] - fd.E[b])))
    return out


def h1_explicit(fd: FiberData, sf: SlowFields, dh0_dy, L3) -> np.ndarray:
    """Closed-form ``h1``: divergence term, ``-L.B`` and the Berry term.

    ``h1 = (1/2i) sum_jl Hess_jl E dA_j/dy_l - L3 B3 + sum_j beta_j dkt_j``
    where ``dkt`` is the rate of change of ``k + A(y)`` along the
    Hamiltonian flow of ``h0``.
    """
    dA = sf.dA
    div = np.einsum("bjl,bjl->b", fd.hessE, dA) / 2j
    kt_dot = np.einsum("bjl,bl->bj", dA, fd.dE) - dh0_dy
    berry = np.sum(fd.beta * kt_dot, axis=-1)
    return div - L3 * sf.B[:, 2] + berry


def fredholm_solve(rr: ReducedResolvent, rhs, tol: float = 1e-8):
    """Solve ``M x = rhs`` with ``x`` orthogonal to ``F0``.

    Raises NonOrthogonalRHS when ``<F0, rhs>`` exceeds ``tol`` and
    SingularSolve when the local gap is below the configured tolerance.
    """
    rhs = np.asarray(rhs, dtype=complex)
    single = rhs.ndim == 1
    out = rr.solve(rhs[None, :] if single else rhs, check=True, tol=tol)
    return out[0] if single else out


def fredholm_residual(sd: SymbolData) -> np.ndarray:
    """``|<F0, rhs>|`` per point: the solvability defect after ``h1``."""
    w = sd.fiber.resolvent.weight
    return np.abs(w * np.sum(np.conj(sd.F0) * sd.rhs, axis=-1))


def corrector_equation_residual(sd: SymbolData) -> np.ndarray:
    """Norm of ``(H0(kt) - E) F1 - rhs`` per point."""
    rr = sd.fiber.resolvent
    r = rr.apply_M(sd.F1) - sd.rhs
    return np.sqrt(rr.weight * np.sum(np.abs(r) ** 2, axis=-1))


# point-wise API


def _one(table: SymbolTable, p: PhaseSpacePoint) -> SymbolData:
    return table.at(np.asarray(p.y, dtype=float), np.asarray(p.k, dtype=float))


def h0(table: SymbolTable, p: PhaseSpacePoint) -> float:
    return float(_one(table, p).h0[0])


def h1(table: SymbolTable, p: PhaseSpacePoint, route: str = "inner_product") -> complex:
    if route == "inner_product":
        return complex(_one(table, p).h1[0])
    if route == "explicit":
        sd = table.evaluate(p.y, p.k, explicit=True)
        return complex(sd.h1_explicit[0])
    raise ValueError(f"unknown route {route!r}")


def F0(table: SymbolTable, p: PhaseSpacePoint) -> np.ndarray:
    return _one(table, p).F0[0]


def F1(table: SymbolTable, p: PhaseSpacePoint) -> np.ndarray:
    return _one(table, p).F1[0]


def a1(table: SymbolTable, p: PhaseSpacePoint) -> float:
    return float(_one(table, p).a1[0])


def angular_momentum_L(table: SymbolTable, p: PhaseSpacePoint) -> np.ndarray:
    return _one(table, p).L[0]


def reduced_resolvent(table: SymbolTable, p: PhaseSpacePoint) -> ReducedResolvent:
    return _one(table, p).fiber.resolvent
