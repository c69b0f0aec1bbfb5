"""Peierls flow, phase bookkeeping and WKB packet synthesis.

Time orientation follows ``i d/dt psi = H psi`` with slow time ``s = eps t``:
along characteristics ``d phi/ds = k . dy/ds - h0`` and the amplitude picks
up ``exp(i (berry + rw))`` with

    berry = -int beta(kt) . dkt,      rw = int L3 B3 ds,

which is ``exp(-i int Re h1 ds)`` written out.  The imaginary (divergence)
part of ``h1`` is the amplitude transport and is handled by the Jacobian.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.integrate import solve_ivp

from .atlas import interpolate_band
from .config import eval_slow_fields
from .errors import CausticReached, GapTooSmall, NotApplicable, StepFailure
from .fiber import build_stencil
from .symbols import SymbolTable, angular_momentum
from .trig import TrigInterpolant


class BandFunctions:
    """Cheap interpolants of ``E_m``, ``beta`` and ``L3`` for ODE right-hand sides."""

    def __init__(self, table: SymbolTable):
        self.table = table
        self.spec = table.spec
        self.gauge = table.gauge
        self.atlas = table.gauge.atlas
        if not self.atlas.assumption_a:
            raise GapTooSmall(self.atlas.audit_message)
        d, nk = self.spec.dimension, self.spec.nk
        periods = self.spec.lattice.dual_lengths
        # beta without the analytic twist; twist derivatives are added back exactly
        self.gauge.beta_derivative(self.atlas.nodes[:1])
        self._beta = self.gauge._cache["beta_interp"]
        self._L = None
        if d == 2:
            fd = self.gauge.evaluate(self.atlas.nodes)
            self._L = TrigInterpolant(angular_momentum(fd).reshape((nk,) * d), periods)

    def E(self, kt, order=1):
        return interpolate_band(self.atlas, kt, order)

    def beta(self, kt):
        """``beta (B, d)`` and ``d beta_l / d k_j`` as ``(B, j, l)``."""
        b, g = self._beta(kt, 1)
        _, dchi, d2chi = self.gauge._twist(np.asarray(kt).reshape(-1, self.spec.dimension))
        b = np.real(b) + dchi
        g = np.real(g)
        for j in range(self.spec.dimension):
            g[:, j, j] += d2chi[:, j]
        return b, g

    def L3(self, kt):
        if self._L is None:
            n = len(np.asarray(kt).reshape(-1, self.spec.dimension))
            return np.zeros(n), np.zeros((n, self.spec.dimension))
        v, g = self._L(kt, 1)
        return np.real(v), np.real(g)


def _hamiltonian(bf: BandFunctions, y, k, variant: str, eps: float):
    """``h``, ``dh/dy``, ``dh/dk`` for a batch; plus ``kt``, slow fields."""
    sf = eval_slow_fields(bf.spec.slow, y, order=2)
    kt = k + sf.A
    E, dE, d2E = bf.E(kt, 2)
    h = E + sf.W
    hy = np.einsum("bi,bil->bl", dE, sf.dA) + sf.dW
    hk = dE.copy()
    if variant == "corrected":
        d = bf.spec.dimension
        beta, dbeta = bf.beta(kt)
        B3 = sf.B[:, 2]
        if d == 2:
            L3, dL3 = bf.L3(kt)
            G = beta[:, 1] * dE[:, 0] - beta[:, 0] * dE[:, 1] - L3
            dG = (dbeta[:, :, 1] * dE[:, 0, None] + beta[:, 1, None] * d2E[:, :, 0]
                  - dbeta[:, :, 0] * dE[:, 1, None] - beta[:, 0, None] * d2E[:, :, 1] - dL3)
            dB3 = sf.d2A[:, 1, 0, :] - sf.d2A[:, 0, 1, :]
        else:
            G = np.zeros(len(h))
            dG = np.zeros_like(dE)
            dB3 = np.zeros_like(dE)
        reh1 = B3 * G - np.sum(beta * sf.dW, axis=-1)
        hk_1 = B3[:, None] * dG - np.einsum("bjl,bl->bj", dbeta, sf.dW)
        hy_1 = (dB3 * G[:, None] + B3[:, None] * np.einsum("bi,bil->bl", dG, sf.dA)
                - np.einsum("bij,bil,bj->bl", dbeta, sf.dA, sf.dW)
                - np.einsum("bj,bjl->bl", beta, sf.d2W))
        h = h + eps * reh1
        hy = hy + eps * hy_1
        hk = hk + eps * hk_1
    elif variant != "peierls":
        raise ValueError(f"unknown flow variant {variant!r}")
    return h, hy, hk, kt, sf


@dataclass(frozen=True, eq=False)
class Trajectory:
    """Sampled flow with accumulated phase integrals (not divided by eps).

    ``energy`` is the flow Hamiltonian along the track (``h0`` for the
    Peierls variant).
    """

    s: np.ndarray
    y: np.ndarray
    k: np.ndarray
    energy: np.ndarray
    h0: np.ndarray
    dynamical: np.ndarray
    action: np.ndarray
    berry: np.ndarray
    rw: np.ndarray
    variant: str
    eps: float
    sol: object = field(default=None, repr=False)

    @property
    def energy_drift(self) -> float:
        e0 = self.energy[0]
        return float(np.max(np.abs(self.energy - e0)) / (1 + abs(e0)))

    def at(self, s):
        z = self.sol.sol(s)
        d = self.y.shape[1]
        return z[:d], z[d:2 * d]


def integrate_flow(table: SymbolTable, y0, k0, s_end: float, variant: str = "peierls",
                   eps: float = 0.0, n_out: int = 201, tol_scale: float = 1.0,
                   bf: BandFunctions | None = None) -> Trajectory:
    """Integrate the Hamiltonian flow of ``h0`` (or ``h0 + eps Re h1``).

    DOP853 with the configured ODE tolerances times ``tol_scale``; phase
    integrals are carried as extra ODE components.
    """
    bf = bf or BandFunctions(table)
    d = table.spec.dimension
    y0 = np.asarray(y0, dtype=float).reshape(d)
    k0 = np.asarray(k0, dtype=float).reshape(d)
    if variant == "corrected" and eps <= 0:
        raise ValueError("the corrected flow needs eps > 0")

    def rhs(_s, z):
        y, k = z[:d][None], z[d:2 * d][None]
        h, hy, hk, kt, sf = _hamiltonian(bf, y, k, variant, eps)
        ydot, kdot = hk[0], -hy[0]
        ktdot = kdot + sf.dA[0] @ ydot
        beta, _ = bf.beta(kt)
        L3, _ = bf.L3(kt)
        h0 = bf.E(kt, 0)[0][0] + sf.W[0]
        return np.concatenate([ydot, kdot, [h0, k[0] @ ydot, -beta[0] @ ktdot,
                                            L3[0] * sf.B[0, 2]]])

    tol = table.spec.tol
    z0 = np.concatenate([y0, k0, np.zeros(4)])
    t_eval = np.linspace(0.0, s_end, n_out)
    sol = solve_ivp(rhs, (0.0, s_end), z0, method="DOP853", t_eval=t_eval, dense_output=True,
                    rtol=tol["ode_rtol"] * tol_scale, atol=tol["ode_atol"] * tol_scale)
    if sol.status != 0:
        raise StepFailure(f"flow integration failed: {sol.message}")
    Z = sol.y.T
    y, k = Z[:, :d], Z[:, d:2 * d]
    h, _, _, kt, sf = _hamiltonian(bf, y, k, variant, eps)
    h0 = bf.E(kt, 0)[0] + sf.W
    return Trajectory(s=sol.t, y=y, k=k, energy=h, h0=h0, dynamical=Z[:, 2 * d],
                      action=Z[:, 2 * d + 1], berry=Z[:, 2 * d + 2], rw=Z[:, 2 * d + 3],
                      variant=variant, eps=eps, sol=sol)


@dataclass(frozen=True)
class PhaseReport:
    dynamical: float
    action: float
    berry: float
    rw: float

    @property
    def total(self) -> float:
        """Phase of the packet relative to its initial value."""
        return self.action - self.dynamical + self.berry + self.rw


def accumulate_phases(table: SymbolTable, traj: Trajectory, eps: float) -> PhaseReport:
    """Final phases along ``traj``: ``int h0 ds / eps`` (dynamical),
    ``int k.dy / eps`` (action), Berry and Rammal-Wilkinson."""
    return PhaseReport(dynamical=float(traj.dynamical[-1] / eps),
                       action=float(traj.action[-1] / eps),
                       berry=float(traj.berry[-1]), rw=float(traj.rw[-1]))


# --------------------------------------------------------------------------
# WKB packets (d = 1)


@dataclass(frozen=True)
class WKBInitial:
    """``phi0 = k0 (y - center) + chirp (y - center)^2 / 2`` and a Gaussian
    amplitude ``f0 = exp(-(y - center)^2 / (2 width^2))``."""

    k0: float = 0.25
    center: float = np.pi / 2
    width: float = 0.5
    chirp: float = 0.0

    def phi(self, y):
        z = y - self.center
        return self.k0 * z + 0.5 * self.chirp * z**2, self.k0 + self.chirp * z, self.chirp + 0 * z

    def f0(self, y):
        return np.exp(-0.5 * ((y - self.center) / self.width) ** 2)


def _fan_rhs(bf: BandFunctions):
    def rhs(_s, z):
        n = len(z) // 7
        y, k, Y, K, phi, lnf, berry = z.reshape(7, n)
        sf = eval_slow_fields(bf.spec.slow, y[:, None], order=2)
        A, dA, d2A = sf.A[:, 0], sf.dA[:, 0, 0], sf.d2A[:, 0, 0, 0]
        kt = k + A
        E, dE, d2E = bf.E(kt[:, None], 2)
        E, dE, d2E = E, dE[:, 0], d2E[:, 0, 0]
        h = E + sf.W
        hk = dE
        hy = dE * dA + sf.dW[:, 0]
        hkk = d2E
        hky = d2E * dA
        hyy = d2E * dA**2 + dE * d2A + sf.d2W[:, 0, 0]
        beta, _ = bf.beta(kt[:, None])
        ydot, kdot = hk, -hy
        ktdot = kdot + dA * ydot
        return np.concatenate([
            ydot, kdot, hky * Y + hkk * K, -hyy * Y - hky * K,
            k * ydot - h, -0.5 * (hkk * K / Y + hky), -beta[:, 0] * ktdot,
        ])
    return rhs


def launch_fan(table: SymbolTable, init: WKBInitial, y0s, s: float, bf=None):
    """Characteristics from ``y0s`` to slow time ``s``.

    Returns a dict of arrays: ``y, k, Y, K, phi, lnf`` (the D-term transport
    of ``log|f|/f0``), ``berry``.
    """
    bf = bf or BandFunctions(table)
    y0s = np.asarray(y0s, dtype=float)
    phi0, dphi0, d2phi0 = init.phi(y0s)
    z0 = np.concatenate([y0s, dphi0, np.ones_like(y0s), d2phi0, phi0,
                         np.zeros_like(y0s), np.zeros_like(y0s)])
    keys = ("y", "k", "Y", "K", "phi", "lnf", "berry")
    if s == 0:
        return dict(zip(keys, z0.reshape(7, -1)))
    tol = table.spec.tol
    n = len(y0s)
    caustic = tol["caustic_det"]

    def focus(_s, z):
        return np.min(np.abs(z[2 * n:3 * n])) - caustic

    focus.terminal = True
    sol = solve_ivp(_fan_rhs(bf), (0.0, s), z0, method="DOP853", events=focus,
                    rtol=tol["ode_rtol"], atol=tol["ode_atol"])
    if sol.status == 1:
        raise CausticReached(f"|dy/dy0| fell below {caustic} at s = {sol.t_events[0][0]:.6g}")
    if sol.status != 0:
        raise StepFailure(f"characteristic fan failed: {sol.message}")
    return dict(zip(keys, sol.y[:, -1].reshape(7, -1)))


@dataclass(frozen=True, eq=False)
class PacketSynthesis:
    """WKB packet on the physical box at slow time ``s``.

    ``psi`` is unnormalized physical samples; ``psi_no_h1`` omits the Berry
    and Rammal-Wilkinson phases.  ``amplitude_gap`` compares the Jacobian
    amplitude with the D-term transport over the launched fan.
    """

    eps: float
    s: float
    x: np.ndarray
    psi: np.ndarray
    psi_no_h1: np.ndarray
    density_center: float
    amplitude_gap: float
    min_jacobian: float
    berry_center: float
    hj_residual: float = float("nan")


def synthesize_packet(table: SymbolTable, init: WKBInitial, s: float, eps: float,
                      n_fan: int = 257, newton_steps: int = 3, bf=None) -> PacketSynthesis:
    """Assemble ``exp(i phi/eps) f Psi(x, dphi + A)`` on the physical box.

    Characteristics are launched from a coarse fan, the inverse map
    ``y -> y0`` is interpolated, then exact characteristics are relaunched
    from the interpolated ``y0`` and Newton-refined.
    """
    from .quantize import cells_in_box

    spec = table.spec
    if spec.dimension != 1:
        raise NotApplicable("WKB synthesis is implemented for d = 1")
    bf = bf or BandFunctions(table)
    eps = float(eps)
    n = spec.nx
    M = cells_in_box(spec, eps)
    hx = spec.lattice.lengths[0] / n
    x = hx * np.arange(M * n)
    yp = eps * x
    caustic = spec.tol["caustic_det"]

    span = np.pi
    fan0 = np.linspace(init.center - span, init.center + span, n_fan)
    fan = launch_fan(table, init, fan0, s, bf)
    if np.min(np.abs(fan["Y"])) < caustic:
        raise CausticReached(f"|dy/dy0| = {np.min(np.abs(fan['Y'])):.2e} below {caustic}")
    amp_gap = float(np.max(np.abs(np.abs(fan["Y"]) ** -0.5 - np.exp(fan["lnf"]))
                           * init.f0(fan0) / init.f0(fan0).max()))
    # map physical slow points into the window covered by the fan image
    ymid = np.interp(init.center, fan0, fan["y"])
    yq = ymid + np.mod(yp - ymid + np.pi, 2 * np.pi) - np.pi
    inside = (yq > fan["y"].min()) & (yq < fan["y"].max())
    y0 = np.interp(yq[inside], fan["y"], fan0)
    keep = init.f0(y0) > 1e-15 * init.f0(fan0).max()
    idx = np.flatnonzero(inside)[keep]
    y0 = y0[keep]
    target = yq[idx]
    for _ in range(newton_steps):
        ch = launch_fan(table, init, y0, s, bf)
        y0 = y0 - (ch["y"] - target) / ch["Y"]
    ch = launch_fan(table, init, y0, s, bf)
    delta = target - ch["y"]
    phi = ch["phi"] + ch["k"] * delta + 0.5 * ch["K"] / ch["Y"] * delta**2
    kk = ch["k"] + ch["K"] / ch["Y"] * delta
    if np.min(np.abs(ch["Y"])) < caustic:
        raise CausticReached(f"|dy/dy0| = {np.min(np.abs(ch['Y'])):.2e} below {caustic}")
    mag = init.f0(y0) * np.abs(ch["Y"]) ** -0.5
    sf = eval_slow_fields(spec.slow, target[:, None])
    fd = table.gauge.evaluate((kk + sf.A[:, 0])[:, None])
    cell = idx % n
    bloch = fd.psi[np.arange(len(idx)), cell]
    base = np.exp(1j * phi / eps) * mag * bloch
    psi = np.zeros(len(x), dtype=complex)
    psi0 = np.zeros(len(x), dtype=complex)
    psi[idx] = base * np.exp(1j * ch["berry"])
    psi0[idx] = base
    dens = np.abs(psi) ** 2
    center = float(np.sum(dens * yq) / np.sum(dens))
    mid = launch_fan(table, init, np.array([init.center]), s, bf)
    return PacketSynthesis(eps=eps, s=s, x=x, psi=psi, psi_no_h1=psi0, density_center=center,
                           amplitude_gap=amp_gap, min_jacobian=float(np.min(np.abs(fan["Y"]))),
                           berry_center=float(mid["berry"][0]))


def hj_residual(table: SymbolTable, init: WKBInitial, s: float, ds: float = 1e-4,
                n: int = 65, bf=None) -> float:
    """``max |d_s phi + h0(y, d_y phi)|`` on a set of characteristic endpoints.

    ``d_s phi`` at fixed ``y`` is formed by centred differences of the
    phase field, which is reconstructed at time ``s +- ds`` by Newton
    solves for the launch points hitting the same ``y``.
    """
    bf = bf or BandFunctions(table)
    y0s = init.center + init.width * np.linspace(-2, 2, n)
    mid = launch_fan(table, init, y0s, s, bf)
    target = mid["y"]

    def phase_at(st):
        y0 = y0s.copy()
        for _ in range(4):
            ch = launch_fan(table, init, y0, st, bf)
            y0 = y0 - (ch["y"] - target) / ch["Y"]
        ch = launch_fan(table, init, y0, st, bf)
        dlt = target - ch["y"]
        return ch["phi"] + ch["k"] * dlt + 0.5 * ch["K"] / ch["Y"] * dlt**2

    dphi_ds = (phase_at(s + ds) - phase_at(s - ds)) / (2 * ds)
    sf = eval_slow_fields(table.spec.slow, target[:, None])
    h0 = bf.E((mid["k"] + sf.A[:, 0])[:, None], 0)[0] + sf.W
    return float(np.max(np.abs(dphi_ds + h0)))


def loop_action(table: SymbolTable, y_c, k_c, radius: float, s_end: float, n: int = 64,
                bf=None) -> tuple[float, float]:
    """``oint k dy`` of a small phase-space circle before and after the flow."""
    bf = bf or BandFunctions(table)
    th = 2 * np.pi * np.arange(n) / n
    ys = y_c + radius * np.cos(th)
    ks = k_c + radius * np.sin(th)

    def area(y, k):
        # trapezoid on the closed loop, spectrally accurate for smooth loops
        c_y = np.fft.fft(y) / n
        m = np.fft.fftfreq(n, 1.0 / n)
        dy = np.real(np.fft.ifft(1j * m * c_y) * n)
        return float(np.sum(k * dy) * 2 * np.pi / n)

    init_area = area(ys, ks)
    ends = [integrate_flow(table, y, k, s_end, n_out=2, bf=bf) for y, k in zip(ys, ks)]
    ye = np.array([t.y[-1, 0] for t in ends])
    ke = np.array([t.k[-1, 0] for t in ends])
    return init_area, area(ye, ke)
