"""Standard epsilon-quantization on the slow torus and the intertwining checks.

Slow functions live on the torus ``y in [0, 2 pi)`` and are represented by
their samples on a uniform grid of ``N_y`` points, so frequencies are the
integers ``xi`` returned by :func:`frequencies`.  The quantization of a
symbol ``h(y, k)`` is the left (standard) one::

    (h(y, eps D) u)(y) = sum_xi exp(i y xi) h(y, eps xi) u_hat(xi)

Physical wavefunctions live on ``x in [0, 2 pi / eps)``, a box of
``M = 2 pi / (eps a)`` cells; the two-scale identification evaluates a
two-scale field at ``(x, eps x)``.  Only ``d = 1`` is supported here.
"""
from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from fractions import Fraction

import numpy as np

from . import kernels
from .config import ModelSpec, eval_slow_fields
from .errors import AliasWarning, GridResolutionError, NotApplicable
from .fiber import _STENCILS, build_stencil, free_dispersion
from .symbols import SymbolTable

TWO_PI = 2 * np.pi
_EVAL_CHUNK = 2048


def frequencies(ny: int) -> np.ndarray:
    return np.fft.fftfreq(ny, d=1.0 / ny)


@dataclass(frozen=True, eq=False)
class SlowFunction:
    """Samples of a function on the slow torus at ``y_j = 2 pi j / N_y``."""

    values: np.ndarray

    @property
    def ny(self) -> int:
        return len(self.values)

    @property
    def grid(self) -> np.ndarray:
        return TWO_PI * np.arange(self.ny) / self.ny

    @property
    def coeffs(self) -> np.ndarray:
        """``u_hat(xi)`` in :func:`frequencies` order, ``u = sum u_hat e^{i y xi}``."""
        return np.fft.fft(self.values) / self.ny

    @classmethod
    def from_coeffs(cls, c) -> "SlowFunction":
        c = np.asarray(c, dtype=complex)
        return cls(np.fft.ifft(c) * len(c))

    def norm(self) -> float:
        return float(np.sqrt(TWO_PI / self.ny * np.sum(np.abs(self.values) ** 2)))

    def __add__(self, other):
        return SlowFunction(self.values + other.values)

    def __sub__(self, other):
        return SlowFunction(self.values - other.values)

    def __mul__(self, c):
        return SlowFunction(self.values * c)

    __rmul__ = __mul__


def gaussian_profile(ny: int = 128, width: float = 1.0, center: float = np.pi,
                     momentum: int = 0) -> SlowFunction:
    """Periodized Gaussian of the given width, built from its coefficients
    ``exp(-w^2 (xi - momentum)^2 / 2 - i xi center)``."""
    xi = frequencies(ny)
    c = np.exp(-0.5 * (width * (xi - momentum)) ** 2 - 1j * xi * center)
    return SlowFunction.from_coeffs(c)


# --------------------------------------------------------------------------
# symbol sources


class ScalarSymbols:
    """Test symbols with a y,k-independent corrector.

    ``h(y, k)`` is any vectorized callable; ``F`` is a constant cell
    function (default ``1/sqrt(|E|)``, unit norm on the cell).  With
    ``h = free_dispersion`` and ``V = A = W = 0`` the intertwining is exact.
    """

    def __init__(self, spec: ModelSpec, h, F=None, k_range: float | None = None):
        self.spec = spec
        self.h = h
        grid = build_stencil(spec).grid
        self.F = (np.full(grid.size, 1.0 / np.sqrt(spec.lattice.volume), dtype=complex)
                  if F is None else np.asarray(F, dtype=complex))
        self.k_range = k_range

    @classmethod
    def free(cls, spec: ModelSpec):
        h = spec.lattice.lengths[0] / spec.nx
        order = spec.stencil_order
        return cls(spec, lambda y, k: free_dispersion(k, h, order) + 0 * y)

    def sample(self, eps, ys, xis, N=1, use_a1=True):
        Y, X = np.meshgrid(ys, xis, indexing="ij")
        h = np.asarray(self.h(Y, eps * X), dtype=complex)
        F = np.broadcast_to(self.F, Y.shape + self.F.shape)
        return h, F


class TableSymbols:
    """Samples ``h0 + eps h1`` and ``F0 + eps F1`` from a :class:`SymbolTable`.

    Samples on a ``(y, xi)`` grid are cached per ``eps`` so that both orders
    and the ``a1`` ablation reuse one set of fiber solves.
    """

    def __init__(self, table: SymbolTable):
        if table.spec.dimension != 1:
            raise NotApplicable("quantized residual checks are implemented for d = 1")
        self.table = table
        self.spec = table.spec
        self.k_range = None
        self._cache: dict = {}

    def raw(self, eps, ys, xis):
        key = (float(eps), len(ys), float(ys[0]), len(xis), float(xis.min()), float(xis.max()))
        hit = self._cache.get(key)
        if hit is not None:
            return hit
        Y, X = np.meshgrid(ys, xis, indexing="ij")
        yy, kk = Y.ravel(), eps * X.ravel()
        parts = {n: [] for n in ("h0", "h1", "F0", "F1", "a1")}
        for s in range(0, len(yy), _EVAL_CHUNK):
            sd = self.table.evaluate(yy[s:s + _EVAL_CHUNK], kk[s:s + _EVAL_CHUNK])
            F1 = sd.F1 if self.table.use_a1 else sd.F1 + sd.a1[:, None] * sd.F0
            for n, v in (("h0", sd.h0), ("h1", sd.h1), ("F0", sd.F0), ("F1", F1), ("a1", sd.a1)):
                parts[n].append(v)
        shp = Y.shape
        out = {n: np.concatenate(v).reshape(shp + np.shape(v[0])[1:]) for n, v in parts.items()}
        if len(self._cache) > 8:
            self._cache.clear()
        self._cache[key] = out
        return out

    def sample(self, eps, ys, xis, N=1, use_a1=True):
        """``h`` of shape ``(Ny, Nxi)`` and ``F`` of shape ``(Ny, Nxi, n)``.

        ``F1`` from :meth:`raw` always includes ``a1 F0``; with
        ``use_a1=False`` it is removed again.
        """
        r = self.raw(eps, ys, xis)
        if N == 0:
            return r["h0"].astype(complex), r["F0"]
        F1 = r["F1"] if use_a1 else r["F1"] - r["a1"][..., None] * r["F0"]
        return r["h0"] + eps * r["h1"], r["F0"] + eps * F1


def _as_source(src):
    return TableSymbols(src) if isinstance(src, SymbolTable) else src


def _check_alias(src, eps, xis, u: SlowFunction | None = None):
    kr = getattr(src, "k_range", None)
    if kr is not None and eps * np.max(np.abs(xis)) > kr:
        warnings.warn(f"eps*xi_max = {eps * np.max(np.abs(xis)):.3g} leaves the sampled "
                      f"k-range {kr:.3g}", AliasWarning, stacklevel=3)
    if u is not None:
        c = np.abs(u.coeffs)
        edge = np.abs(frequencies(u.ny)) >= 0.45 * u.ny
        if c.max() > 0 and c[edge].max() > 1e-12 * c.max():
            warnings.warn("slow function is not resolved on its grid (spectral tail "
                          f"{c[edge].max() / c.max():.2e})", AliasWarning, stacklevel=3)


def apply_symbol(h, eps, u: SlowFunction) -> SlowFunction:
    """Standard quantization of a scalar symbol ``h(y, k)`` applied to ``u``.

    ``h`` is a vectorized callable or a precomputed ``(Ny, Ny)`` array of
    samples ``h(y_j, eps xi_l)`` in :func:`frequencies` order.
    """
    ys, xis = u.grid, frequencies(u.ny)
    if callable(h):
        Y, X = np.meshgrid(ys, xis, indexing="ij")
        H = np.asarray(h(Y, eps * X), dtype=complex)
    else:
        H = np.asarray(h, dtype=complex)
    E = np.exp(1j * np.outer(ys, xis))
    return SlowFunction(np.einsum("jl,jl,l->j", E, H, u.coeffs))


# --------------------------------------------------------------------------
# two-scale fields and P_N


@dataclass(frozen=True, eq=False)
class TwoScaleFunction:
    """Samples ``f(x_c, y_j)`` on (cell grid) x (slow grid); shape ``(n, Ny)``."""

    values: np.ndarray
    cell_weight: float
    eps: float = 0.0

    @property
    def ny(self) -> int:
        return self.values.shape[1]

    @property
    def grid(self) -> np.ndarray:
        return TWO_PI * np.arange(self.ny) / self.ny

    def inner(self, other) -> complex:
        return complex(self.cell_weight * TWO_PI / self.ny
                       * np.sum(np.conj(self.values) * other.values))

    def norm(self) -> float:
        return float(np.sqrt(np.real(self.inner(self))))

    def __add__(self, other):
        return TwoScaleFunction(self.values + other.values, self.cell_weight, self.eps)

    def __sub__(self, other):
        return TwoScaleFunction(self.values - other.values, self.cell_weight, self.eps)

    def trace(self, spec: ModelSpec, eps) -> np.ndarray:
        """Physical samples ``w(x_p) = f(x_p mod cell, eps x_p)``.

        For cell index ``c`` the slow arguments ``eps x_p`` form a shifted
        uniform grid, so trigonometric interpolation in ``y`` is exact for
        band-limited fields.
        """
        n = self.values.shape[0]
        M = cells_in_box(spec, eps)
        hx = spec.lattice.lengths[0] / n
        coef = np.fft.fft(self.values, axis=1) / self.ny
        m = frequencies(self.ny)
        out = np.empty((M, n), dtype=complex)
        j = np.arange(M)
        for c in range(n):
            yp = eps * c * hx + TWO_PI * j / M
            out[:, c] = np.exp(1j * np.outer(yp, m)) @ coef[c]
        return out.reshape(-1)


def cells_in_box(spec: ModelSpec, eps) -> int:
    a = spec.lattice.lengths[0]
    M = TWO_PI / (float(eps) * a)
    if abs(M - round(M)) > 1e-9 or round(M) < 1:
        raise GridResolutionError(f"box 2 pi/eps = {TWO_PI / float(eps):.6g} is not a whole "
                                  f"number of cells of length {a:.6g}")
    return int(round(M))


def _pn_matrix(src, N, eps, ny, use_a1=True):
    """Matrix of ``P_N``: slow coefficients -> two-scale samples ``(n, Ny, Nxi)``."""
    ys, xis = TWO_PI * np.arange(ny) / ny, frequencies(ny)
    _, F = src.sample(eps, ys, xis, N, use_a1)
    E = np.exp(1j * np.outer(ys, xis))
    return np.transpose(F, (2, 0, 1)) * E[None]


def apply_PN(src, N: int, eps, u: SlowFunction, use_a1: bool = True) -> TwoScaleFunction:
    """Two-scale field ``(F0 + eps F1)(x, y, eps D_y) u`` (``F0`` alone for N=0)."""
    if N not in (0, 1):
        raise ValueError("only N in {0, 1} is implemented")
    src = _as_source(src)
    eps = float(eps)
    _check_alias(src, eps, frequencies(u.ny), u)
    ys, xis = u.grid, frequencies(u.ny)
    _, F = src.sample(eps, ys, xis, N, use_a1)
    grid = build_stencil(src.spec).grid
    return TwoScaleFunction(kernels.pn_contract(ys, xis, F, u.coeffs), grid.weight, eps)


def apply_PN_adjoint(src, N: int, eps, f: TwoScaleFunction, use_a1: bool = True) -> SlowFunction:
    """Adjoint of :func:`apply_PN` for the products ``<.,.>_{E x torus}`` and
    ``<u, v> = int conj(u) v dy``."""
    src = _as_source(src)
    P = _pn_matrix(src, N, float(eps), f.ny, use_a1)
    c = f.cell_weight / f.ny * np.einsum("cjl,cj->l", np.conj(P), f.values)
    return SlowFunction.from_coeffs(c)


def apply_Heff(src, N: int, eps, u: SlowFunction) -> SlowFunction:
    src = _as_source(src)
    ys, xis = u.grid, frequencies(u.ny)
    h, _ = src.sample(float(eps), ys, xis, N)
    return apply_symbol(h, float(eps), u)


# --------------------------------------------------------------------------
# physical operator


def apply_physical_H(spec: ModelSpec, eps, w) -> np.ndarray:
    """``H_eps w`` on the periodic box with the link-phase stencil.

    Hops carry ``exp(i int A(eps x) dx)`` over the link, integrated exactly.
    """
    if spec.dimension != 1:
        raise NotApplicable("the physical box operator is implemented for d = 1")
    eps = float(eps)
    n = spec.nx
    M = cells_in_box(spec, eps)
    a = spec.lattice.lengths[0]
    hx = a / n
    Np = M * n
    w = np.asarray(w, dtype=complex)
    if w.shape[-1] != Np:
        raise GridResolutionError(f"physical grid has {Np} points, got {w.shape[-1]}")
    x = hx * np.arange(Np)
    y = eps * x
    diag_w, hops = _STENCILS[spec.stencil_order]
    sf = eval_slow_fields(spec.slow, y[:, None])
    V = spec.potential(spec.lattice, x[:, None])
    out = (diag_w / hx**2 + V + sf.W) * w
    Afield = spec.slow.A[0]
    for step, weight in hops:
        for sgn in (1, -1):
            s = sgn * step
            theta = Afield.axis_integral(y[:, None], 0, eps * s * hx) / eps
            out = out - weight / hx**2 * np.exp(1j * theta) * np.roll(w, -s, axis=-1)
    return out


def _phys_norm(spec, eps, w):
    hx = spec.lattice.lengths[0] / spec.nx
    return float(np.sqrt(float(eps) * spec.lattice.volume * hx * np.sum(np.abs(w) ** 2)))


def intertwining_residual(spec: ModelSpec, src, N: int, eps, u: SlowFunction | None = None,
                          use_a1: bool = True) -> float:
    """Relative residual ``||H_eps P_N u - P_N H_eff u|| / ||u||`` on the box.

    Physical norms are scaled by ``sqrt(eps |E|)`` so that an isometric
    ``P_N`` has ratio one.
    """
    src = _as_source(src)
    if spec.nx < 8:
        raise GridResolutionError("the cell grid needs at least 8 points")
    eps = float(eps)
    u = gaussian_profile() if u is None else u
    Pu = apply_PN(src, N, eps, u, use_a1)
    w = Pu.trace(spec, eps)
    v = apply_Heff(src, N, eps, u)
    Pv = apply_PN(src, N, eps, v, use_a1).trace(spec, eps)
    r = apply_physical_H(spec, eps, w) - Pv
    return _phys_norm(spec, eps, r) / u.norm()


def isometry_defect(src, N: int, eps, u: SlowFunction | None = None, use_a1: bool = True) -> float:
    """``||P_N* P_N u - u|| / ||u||``."""
    u = gaussian_profile() if u is None else u
    f = apply_PN(src, N, eps, u, use_a1)
    back = apply_PN_adjoint(src, N, eps, f, use_a1)
    return (back - u).norm() / u.norm()


def default_two_scale_probe(spec: ModelSpec, ny: int = 128, seed: int = 0) -> TwoScaleFunction:
    """Random smooth cell function times a slow Gaussian (deterministic per seed)."""
    grid = build_stencil(spec).grid
    rng = np.random.default_rng(seed)
    n = grid.size
    c = rng.normal(size=(n,)) + 1j * rng.normal(size=(n,))
    # low-pass in the cell so the probe is smooth on the cell scale
    spec_c = np.fft.fft(c)
    spec_c[np.abs(np.fft.fftfreq(n, 1.0 / n)) > 4] = 0
    cell = np.fft.ifft(spec_c)
    g = gaussian_profile(ny).values
    return TwoScaleFunction(np.outer(cell, g), grid.weight)


def projection_defect(src, N: int, eps, g: TwoScaleFunction | None = None,
                      use_a1: bool = True) -> float:
    """``||Pi^2 g - Pi g|| / ||g||`` for ``Pi = P_N P_N*``."""
    src = _as_source(src)
    g = default_two_scale_probe(src.spec) if g is None else g
    pi_g = apply_PN(src, N, eps, apply_PN_adjoint(src, N, eps, g, use_a1), use_a1)
    pi2_g = apply_PN(src, N, eps, apply_PN_adjoint(src, N, eps, pi_g, use_a1), use_a1)
    return (pi2_g - pi_g).norm() / g.norm()


def apply_projection(src, N: int, eps, g: TwoScaleFunction, use_a1: bool = True):
    return apply_PN(src, N, eps, apply_PN_adjoint(src, N, eps, g, use_a1), use_a1)


# --------------------------------------------------------------------------
# WKB symbol expansion


def symbol_expansion_remainder(table: SymbolTable, eps, ny: int = 256, amp=(0.35, 0.15),
                               width: float = 1.0) -> float:
    """Relative remainder of the first-order WKB symbol expansion of ``h0``.

    With ``phi = amp[0] sin y + amp[1] cos y`` (``e^{i phi/eps}`` is periodic
    on the torus) compares ``e^{-i phi/eps} h0(y, eps D)(e^{i phi/eps} f)``
    with ``h0(y, phi') f + eps [(1/i) dh0/dk f' + (1/2i) d2h0/dk2 phi'' f]``.
    """
    if table.spec.dimension != 1:
        raise NotApplicable("the symbol-expansion check is implemented for d = 1")
    from .atlas import interpolate_band

    atlas = table.gauge.atlas
    spec = table.spec
    eps = float(eps)

    def symbol(y, k, order=0):
        sf = eval_slow_fields(spec.slow, np.ravel(y)[:, None], order=0)
        kt = np.ravel(k) + sf.A[:, 0]
        vals = interpolate_band(atlas, kt[:, None], order)
        vals[0] = vals[0] + sf.W
        return [np.reshape(v, np.shape(y)) if i == 0 else v for i, v in enumerate(vals)]

    f = gaussian_profile(ny, width)
    y = f.grid
    s, c = amp
    phi = s * np.sin(y) + c * np.cos(y)
    dphi = s * np.cos(y) - c * np.sin(y)
    d2phi = -phi
    g = SlowFunction(np.exp(1j * phi / eps) * f.values)
    _check_alias(None, eps, frequencies(ny), g)
    lhs = np.exp(-1j * phi / eps) * apply_symbol(lambda Y, K: symbol(Y, K)[0], eps, g).values
    h, dh, d2h = symbol(y, dphi, 2)
    df = np.fft.ifft(1j * frequencies(ny) * f.coeffs) * ny
    rhs = h * f.values + eps * (-1j * dh[:, 0] * df - 0.5j * d2h[:, 0, 0] * d2phi * f.values)
    return float(np.linalg.norm(lhs - rhs) / np.linalg.norm(f.values))


def fit_slope(eps_values, defects) -> tuple[float, float]:
    """Least-squares slope of ``log defect`` against ``log eps`` and the
    half-width of its 95% confidence interval."""
    x = np.log(np.asarray(eps_values, dtype=float))
    y = np.log(np.asarray(defects, dtype=float))
    A = np.vstack([x, np.ones_like(x)]).T
    coef, res, *_ = np.linalg.lstsq(A, y, rcond=None)
    n = len(x)
    if n > 2:
        from scipy import stats

        sigma2 = float(np.sum((y - A @ coef) ** 2)) / (n - 2)
        se = np.sqrt(sigma2 / np.sum((x - x.mean()) ** 2))
        half = float(stats.t.ppf(0.975, n - 2) * se)
    else:
        half = float("nan")
    return float(coef[0]), half


def parse_epsilon(text) -> Fraction:
    return Fraction(str(text).strip())
