"""Crank-Nicolson reference solver for ``i dpsi/dt = H_eps psi`` on the
periodic box and band-resolved observables (d = 1)."""
from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from . import kernels
from .atlas import _dense_eigs
from .config import ModelSpec, eval_slow_fields
from .errors import CFLViolation, NotApplicable, SolverDivergence
from .fiber import _STENCILS
from .quantize import cells_in_box
from .semiclassics import BandFunctions, WKBInitial, integrate_flow, synthesize_packet
from .symbols import SymbolTable

log = logging.getLogger(__name__)

CFL_LIMIT = 0.1


@dataclass(frozen=True, eq=False)
class PhysicalGrid:
    spec: ModelSpec
    eps: float
    cells: int
    hx: float

    @property
    def size(self) -> int:
        return self.cells * self.spec.nx

    @property
    def x(self) -> np.ndarray:
        return self.hx * np.arange(self.size)

    def norm(self, psi) -> float:
        return float(np.sqrt(self.hx * np.sum(np.abs(psi) ** 2)))


def physical_grid(spec: ModelSpec, eps) -> PhysicalGrid:
    if spec.dimension != 1:
        raise NotApplicable("the direct solver is implemented for d = 1")
    eps = float(eps)
    return PhysicalGrid(spec, eps, cells_in_box(spec, eps), spec.lattice.lengths[0] / spec.nx)


def physical_hamiltonian(spec: ModelSpec, eps):
    """Sparse ``H_eps`` on the box, plus ``(diag, up)`` when it is tridiagonal."""
    g = physical_grid(spec, eps)
    x, N, hx = g.x, g.size, g.hx
    y = g.eps * x
    diag_w, hops = _STENCILS[spec.stencil_order]
    sf = eval_slow_fields(spec.slow, y[:, None])
    diag = diag_w / hx**2 + spec.potential(spec.lattice, x[:, None]) + sf.W
    Af = spec.slow.A[0]
    rows, cols, vals = [np.arange(N)], [np.arange(N)], [diag.astype(complex)]
    up = None
    for step, weight in hops:
        theta = Af.axis_integral(y[:, None], 0, g.eps * step * hx) / g.eps
        v = -weight / hx**2 * np.exp(1j * theta)
        p = np.arange(N)
        q = (p + step) % N
        rows += [p, q]
        cols += [q, p]
        vals += [v, np.conj(v)]
        if step == 1:
            up = v
    H = sp.csr_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
                      shape=(N, N))
    tri = (diag, up) if len(hops) == 1 else None
    return H, tri


def energy_bound(spec: ModelSpec, eps) -> float:
    """``4/h^2 + max|V| + max|W|`` (order-2 stencil bound; order 4 uses 16/3)."""
    g = physical_grid(spec, eps)
    kin = 4.0 if spec.stencil_order == 2 else 16.0 / 3.0
    x = g.x
    V = spec.potential(spec.lattice, x[:, None])
    W = eval_slow_fields(spec.slow, (g.eps * x)[:, None]).W
    return kin / g.hx**2 + float(np.max(np.abs(V))) + float(np.max(np.abs(W)))


@dataclass(frozen=True, eq=False)
class ObservableTrace:
    """Observables sampled during a direct run; ``center`` is the circular
    mean of ``y = eps x``; ``population`` is ``None`` unless requested."""

    t: np.ndarray
    s: np.ndarray
    center: np.ndarray
    quasimomentum: np.ndarray
    norm: np.ndarray
    energy: np.ndarray
    population: np.ndarray | None
    phase: np.ndarray | None
    snapshots: list = field(default_factory=list, repr=False)
    backend: str = "python"

    @property
    def energy_drift(self) -> float:
        return float(np.max(np.abs(self.energy - self.energy[0])) / abs(self.energy[0]))


def circular_center(grid: PhysicalGrid, psi) -> float:
    y = grid.eps * grid.x
    w = np.abs(psi) ** 2
    return float(np.mod(np.angle(np.sum(w * np.exp(1j * y))), 2 * np.pi))


def _mean_quasimomentum(grid: PhysicalGrid, psi) -> float:
    """Circular mean of the plane-wave momentum over the reduced zone."""
    N = grid.size
    p = np.abs(np.fft.fft(psi)) ** 2
    kq = 2 * np.pi * np.fft.fftfreq(N, d=grid.hx)
    g = 2 * np.pi / grid.spec.lattice.lengths[0]
    ang = np.angle(np.sum(p * np.exp(1j * 2 * np.pi * kq / g)))
    return float(ang / (2 * np.pi) * g)


def evolve_direct(spec: ModelSpec, eps, psi0, t_end: float, dt: float | None = None,
                  samples: int = 11, population_band: int | None = None,
                  reference=None, keep_snapshots: bool = False,
                  orientation: int = 1) -> ObservableTrace:
    """Crank-Nicolson evolution of ``psi0`` to ``t_end``.

    ``dt`` defaults to the largest step with ``dt E_max <= 0.1``.
    ``reference(s)`` may return a packet to measure the phase of the
    overlap against.  ``orientation=-1`` runs ``-i dpsi/dt = H psi``.
    """
    g = physical_grid(spec, eps)
    emax = energy_bound(spec, eps)
    if dt is None:
        nsteps = int(np.ceil(t_end * emax / CFL_LIMIT))
        dt = t_end / max(nsteps, 1)
    if dt * emax > CFL_LIMIT * (1 + 1e-12):
        raise CFLViolation(f"dt*E_max = {dt * emax:.3g} exceeds {CFL_LIMIT}")
    total = int(round(t_end / dt))
    if abs(total * dt - t_end) > 1e-9 * max(1.0, t_end):
        raise CFLViolation("t_end must be an integer number of steps")
    H, tri = physical_hamiltonian(spec, eps)
    tau = 0.5 * dt * orientation
    marks = np.unique(np.round(np.linspace(0, total, samples)).astype(int))
    psi = np.array(psi0, dtype=complex)
    n0 = g.norm(psi)
    out = {k: [] for k in ("t", "center", "q", "norm", "energy", "pop", "phase")}
    snaps = []
    done = 0
    use_tri = tri is not None
    backend = kernels.BACKEND if use_tri else "python"
    for mark in marks:
        nsteps = int(mark - done)
        if nsteps:
            if use_tri:
                psi = kernels.cn_cyclic(tri[0].astype(complex), tri[1], psi, tau, nsteps)
            else:
                psi = kernels.cn_sparse(H, psi, tau, nsteps)
            done = mark
        nrm = g.norm(psi)
        if not np.isfinite(nrm) or abs(nrm - n0) > 1e-8 * max(1, mark) ** 0.5 * n0 + 1e-10:
            raise SolverDivergence(f"norm drifted from {n0:.12g} to {nrm:.12g} after {mark} steps")
        t = mark * dt
        out["t"].append(t)
        out["center"].append(circular_center(g, psi))
        out["q"].append(_mean_quasimomentum(g, psi))
        out["norm"].append(nrm)
        out["energy"].append(float(np.real(g.hx * np.vdot(psi, H @ psi))) / nrm**2)
        if population_band is not None:
            out["pop"].append(band_projection_population(psi, spec, eps)[population_band - 1])
        if reference is not None:
            ref = reference(g.eps * t)
            out["phase"].append(float(np.angle(np.vdot(ref, psi))))
        if keep_snapshots:
            snaps.append(psi.copy())
    t = np.asarray(out["t"])
    return ObservableTrace(
        t=t, s=g.eps * t, center=np.asarray(out["center"]), quasimomentum=np.asarray(out["q"]),
        norm=np.asarray(out["norm"]), energy=np.asarray(out["energy"]),
        population=np.asarray(out["pop"]) if population_band is not None else None,
        phase=np.asarray(out["phase"]) if reference is not None else None,
        snapshots=snaps, backend=backend,
    )


def band_projection_population(psi, spec: ModelSpec, eps, nbands: int | None = None) -> np.ndarray:
    """Weights of ``psi`` on bands ``1..nbands`` of the unperturbed fiber.

    Uses the discrete Bloch transform on the box: ``k_q = q e*/M`` and the
    periodic parts ``u_q`` are projected on eigenvectors of ``H0(k_q)``.
    """
    g = physical_grid(spec, eps)
    n, M = spec.nx, g.cells
    nbands = nbands or min(spec.band + 2, n)
    psi = np.asarray(psi, dtype=complex).reshape(M, n)
    q = np.arange(M)
    kq = q * spec.lattice.dual_lengths[0] / M
    xc = g.hx * np.arange(n)
    # u_q(c) = M^{-1/2} sum_j psi[j, c] exp(-i k_q (j a + x_c))
    U = np.fft.fft(psi, axis=0) / np.sqrt(M) * np.exp(-1j * np.outer(kq, xc))
    _, V = _dense_eigs(spec, kq[:, None])
    amps = g.hx * np.einsum("qcb,qc->qb", np.conj(V[:, :, :nbands]), U)
    total = g.hx * np.sum(np.abs(psi) ** 2)
    return np.sum(np.abs(amps) ** 2, axis=0) / total


def prepare_band_packet(table: SymbolTable, eps, init: WKBInitial | None = None,
                        bf=None) -> np.ndarray:
    """``exp(i phi0/eps) f0 Psi(x, phi0' + A)`` on the box, unit L2 norm."""
    init = init or WKBInitial()
    syn = synthesize_packet(table, init, 0.0, eps, bf=bf)
    g = physical_grid(table.spec, eps)
    return syn.psi / g.norm(syn.psi)


def _wrap(a):
    return (a + np.pi) % (2 * np.pi) - np.pi


@dataclass(frozen=True, eq=False)
class DynamicsReport:
    """Direct-versus-semiclassical comparison at one ``eps``."""

    eps: float
    s: np.ndarray
    center_direct: np.ndarray
    center_wkb: np.ndarray
    center_peierls: np.ndarray
    population: np.ndarray
    phase_error_with_h1: np.ndarray
    phase_error_without_h1: np.ndarray
    berry_phase: float
    orientation: str
    orientation_errors: dict
    norm_drift: float
    energy_drift: float
    backend: str
    trace: ObservableTrace = field(repr=False, default=None)
    phase: np.ndarray = field(repr=False, default=None)

    @property
    def center_error(self) -> float:
        return float(np.max(np.abs(_wrap(self.center_direct - self.center_wkb))))

    @property
    def leakage(self) -> float:
        return float(1 - np.min(self.population))

    def rows(self):
        for i in range(len(self.s)):
            yield {
                "s": self.s[i], "t": self.s[i] / self.eps, "center_direct": self.center_direct[i],
                "center_wkb": self.center_wkb[i], "center_peierls": self.center_peierls[i],
                "band_population": self.population[i],
                "phase_error_with_h1": self.phase_error_with_h1[i],
                "phase_error_without_h1": self.phase_error_without_h1[i],
            }

    def observable_rows(self):
        tr = self.trace
        for i in range(len(tr.t)):
            yield {"epsilon": self.eps, "t": tr.t[i], "s": tr.s[i], "center": tr.center[i],
                   "quasimomentum": tr.quasimomentum[i], "band_population": tr.population[i],
                   "phase": self.phase[i], "energy": tr.energy[i]}


def compare_dynamics(spec: ModelSpec, table: SymbolTable, eps, s_end: float = 1.0,
                     init: WKBInitial | None = None, samples: int = 6,
                     test_orientation: bool = True) -> DynamicsReport:
    """Run the direct solver from the WKB initial packet and compare with the
    semiclassical prediction (center, total phase with and without the
    Berry/Rammal-Wilkinson phases, band leakage)."""
    init = init or WKBInitial()
    eps = float(eps)
    bf = BandFunctions(table)
    g = physical_grid(spec, eps)
    psi0 = prepare_band_packet(table, eps, init, bf)
    syn_cache = {}

    def synth(s):
        key = round(s, 12)
        if key not in syn_cache:
            syn_cache[key] = synthesize_packet(table, init, s, eps, bf=bf)
        return syn_cache[key]

    t_end = s_end / eps
    tr = evolve_direct(spec, eps, psi0, t_end, samples=samples, population_band=spec.band,
                       keep_snapshots=True)
    traj = integrate_flow(table, [init.center], [init.k0], s_end, n_out=2, bf=bf)
    cw, cp, pw, pwo = [], [], [], []
    for s, psi in zip(tr.s, tr.snapshots):
        syn = synth(s)
        cw.append(np.mod(syn.density_center, 2 * np.pi))
        cp.append(np.mod(traj.at(s)[0][0], 2 * np.pi))
        pw.append(np.angle(np.vdot(syn.psi, psi)))
        pwo.append(np.angle(np.vdot(syn.psi_no_h1, psi)))
    orient_err = {}
    orientation = "schrodinger"
    if test_orientation:
        ref_end = synth(tr.s[-1]).psi
        ref_end = ref_end / g.norm(ref_end)
        orient_err["schrodinger"] = g.norm(tr.snapshots[-1] - ref_end * np.exp(
            1j * np.angle(np.vdot(ref_end, tr.snapshots[-1]))))
        back = evolve_direct(spec, eps, psi0, t_end, samples=2, keep_snapshots=True,
                             orientation=-1)
        orient_err["reversed"] = g.norm(back.snapshots[-1] - ref_end * np.exp(
            1j * np.angle(np.vdot(ref_end, back.snapshots[-1]))))
        orientation = min(orient_err, key=orient_err.get)
    return DynamicsReport(
        eps=eps, s=tr.s, center_direct=tr.center, center_wkb=np.asarray(cw),
        center_peierls=np.asarray(cp), population=tr.population,
        phase_error_with_h1=np.abs(pw), phase_error_without_h1=np.abs(pwo),
        berry_phase=synth(tr.s[-1]).berry_center, orientation=orientation,
        orientation_errors=orient_err, norm_drift=float(np.max(np.abs(tr.norm - tr.norm[0]))),
        energy_drift=tr.energy_drift, backend=tr.backend, trace=tr, phase=np.asarray(pw),
    )
