"""Crystal model definition, validation and config-file ingestion.

Units are fixed globally to h = 2m = e = 1.  The periodic potential and the
slow fields are finite Fourier series, which makes boundedness and exact
derivatives of every order automatic.

Config files are TOML; the data model is JSON-compatible so the resolved
spec can be echoed verbatim into run manifests.
"""
from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass, field, fields, replace
from fractions import Fraction
from typing import Any, Mapping, Sequence

import numpy as np
try:
    import tomllib as tomli
except ModuleNotFoundError:  # Python < 3.11
    import tomli
import tomli_w

from .errors import FluxNotAdmissible, ParseError, ValidationError

TWO_PI = 2.0 * math.pi
FLUX_TOL = 1e-10
DUAL_TOL = 1e-12

DEFAULT_TOLERANCES = {
    "eig_tol": 1e-10,
    "degeneracy_tol": 1e-8,
    "ode_rtol": 1e-12,
    "ode_atol": 1e-12,
    "route_tol": 1e-4,
    "caustic_det": 1e-3,
}
DEFAULT_EPSILONS = ("1/8", "1/16", "1/32", "1/64")


# --------------------------------------------------------------------------
# Lattice and field


@dataclass(frozen=True)
class LatticeSpec:
    """Bravais lattice with basis ``e_j`` and dual basis ``e_j*``.

    Only rectangular cells are supported in 2D (the link-phase stencil is
    axis aligned).
    """

    basis: tuple[tuple[float, ...], ...]

    def __post_init__(self):
        d = len(self.basis)
        if d not in (1, 2):
            raise ValidationError("lattice.basis", f"dimension must be 1 or 2, got {d}")
        for v in self.basis:
            if len(v) != d:
                raise ValidationError("lattice.basis", "basis vectors must have length d")
        mat = np.asarray(self.basis, dtype=float)
        if d == 2 and (abs(mat[0, 1]) > 0 or abs(mat[1, 0]) > 0):
            raise ValidationError("lattice.basis", "2D cells must be rectangular (axis aligned)")
        if abs(np.linalg.det(mat)) <= 0:
            raise ValidationError("lattice.basis", "cell volume must be positive")
        if np.any(np.diag(mat) <= 0):
            raise ValidationError("lattice.basis", "basis vectors must point along +axes")
        err = np.max(np.abs(self.dual @ mat.T - TWO_PI * np.eye(d)))
        if err > DUAL_TOL * max(1.0, TWO_PI):
            raise ValidationError("lattice.basis", f"dual basis identity fails by {err:.3e}")

    @property
    def dimension(self) -> int:
        return len(self.basis)

    @property
    def matrix(self) -> np.ndarray:
        return np.asarray(self.basis, dtype=float)

    @property
    def dual(self) -> np.ndarray:
        """Rows are ``e_j*`` with ``e_j* . e_k = 2 pi delta_jk``."""
        return TWO_PI * np.linalg.inv(self.matrix).T

    @property
    def lengths(self) -> np.ndarray:
        return np.diag(self.matrix).copy()

    @property
    def dual_lengths(self) -> np.ndarray:
        return TWO_PI / self.lengths

    @property
    def volume(self) -> float:
        return float(abs(np.linalg.det(self.matrix)))

    def reduce_k(self, k):
        """Map quasimomenta into the fundamental dual cell ``[0, e*)``."""
        k = np.asarray(k, dtype=float)
        g = self.dual_lengths
        r = k - np.floor(k / g) * g
        # tiny negative k rounds up to exactly g
        return np.where(r >= g, r - g, r)


def check_flux_admissibility(lattice: LatticeSpec, B0: float) -> int:
    """Return the flux index ``nu`` with ``B0 |E| = 4 pi nu``.

    Raises FluxNotAdmissible unless the flux through a cell is an integer
    multiple of 4 pi; that is the condition under which the magnetic
    translations commute.
    """
    if lattice.dimension == 1:
        if B0 != 0:
            raise FluxNotAdmissible("1D models carry no magnetic field (B0 must be 0)")
        return 0
    flux = B0 * lattice.volume
    nu = round(flux / (4 * math.pi))
    if abs(flux - 4 * math.pi * nu) > FLUX_TOL:
        raise FluxNotAdmissible(
            f"B0*|E| = {flux!r} is not in 4*pi*Z (ratio {flux / (4 * math.pi):.12g})"
        )
    return int(nu)


@dataclass(frozen=True)
class MagneticSpec:
    B0: float = 0.0
    flux_index: int = 0


@dataclass(frozen=True)
class FourierTerm:
    n: tuple[int, ...]
    cos: float = 0.0
    sin: float = 0.0


@dataclass(frozen=True)
class FourierField:
    """Real trigonometric polynomial ``c0 + sum(a cos(n.z) + b sin(n.z))``.

    For slow fields ``z = y``; for the lattice potential ``z`` is the
    reduced coordinate ``(e_j* . x)_j``.
    """

    constant: float = 0.0
    terms: tuple[FourierTerm, ...] = ()

    @property
    def is_zero(self) -> bool:
        return self.constant == 0 and all(t.cos == 0 and t.sin == 0 for t in self.terms)

    def _arrays(self, d):
        if not self.terms:
            return np.zeros((0, d)), np.zeros(0), np.zeros(0)
        n = np.array([t.n for t in self.terms], dtype=float).reshape(len(self.terms), d)
        return n, np.array([t.cos for t in self.terms]), np.array([t.sin for t in self.terms])

    def evaluate(self, z, order=0):
        """Value and derivatives at points ``z`` of shape ``(..., d)``.

        Returns ``[f]``, ``[f, grad]`` or ``[f, grad, hess]`` for orders 0, 1, 2.
        """
        z = np.asarray(z, dtype=float)
        d = z.shape[-1]
        n, a, b = self._arrays(d)
        phase = z @ n.T
        c, s = np.cos(phase), np.sin(phase)
        out = [self.constant + c @ a + s @ b]
        if order >= 1:
            dphase = -s * a + c * b
            out.append(dphase @ n)
        if order >= 2:
            d2 = -(c * a + s * b)
            out.append(np.einsum("...t,ti,tj->...ij", d2, n, n))
        return out

    def __call__(self, z):
        return self.evaluate(z)[0]

    def axis_integral(self, z0, axis, length):
        """Exact ``int_0^length f(z0 + t e_axis) dt`` (vectorized over z0)."""
        z0 = np.asarray(z0, dtype=float)
        d = z0.shape[-1]
        n, a, b = self._arrays(d)
        L = np.broadcast_to(np.asarray(length, dtype=float), z0.shape[:-1])[..., None]
        total = self.constant * L[..., 0]
        if len(a) == 0:
            return total
        nu = n[:, axis]
        mid = z0 @ n.T + 0.5 * nu * L
        # sin(nu L / 2) / nu without cancellation, finite at nu = 0
        half = 0.5 * L * np.sinc(nu * L / (2 * np.pi))
        return total + (2 * np.cos(mid) * half) @ a + (2 * np.sin(mid) * half) @ b


@dataclass(frozen=True)
class PotentialSpec:
    """Lattice-periodic potential ``V(x)``; real by construction."""

    field: FourierField = FourierField()

    def __call__(self, lattice: LatticeSpec, x):
        x = np.asarray(x, dtype=float)
        z = x @ lattice.dual.T
        return self.field(z)


@dataclass(frozen=True)
class SlowFields:
    """Values of the slow fields at a batch of points.

    ``dA[..., j, l]`` is ``dA_j/dy_l``; ``d2A[..., j, l, m]`` is
    ``d^2 A_j / dy_l dy_m``.  ``B`` is always a 3-vector.
    """

    A: np.ndarray
    W: np.ndarray
    dA: np.ndarray | None = None
    dW: np.ndarray | None = None
    d2A: np.ndarray | None = None
    d2W: np.ndarray | None = None
    B: np.ndarray | None = None


@dataclass(frozen=True)
class SlowFieldSpec:
    A: tuple[FourierField, ...]
    W: FourierField = FourierField()

    @property
    def dimension(self) -> int:
        return len(self.A)

    @property
    def is_trivial(self) -> bool:
        return self.W.is_zero and all(a.is_zero for a in self.A)


def eval_slow_fields(spec: SlowFieldSpec, y, order: int = 0) -> SlowFields:
    """Exact values and derivatives (``order`` <= 2) of A, W and B at ``y``."""
    if order not in (0, 1, 2):
        raise ValueError("order must be 0, 1 or 2")
    d = spec.dimension
    y = np.asarray(y, dtype=float)
    if d == 1 and (y.ndim == 0 or y.shape[-1] != 1):
        y = y[..., None]
    comps = [a.evaluate(y, order) for a in spec.A]
    wv = spec.W.evaluate(y, order)
    A = np.stack([c[0] for c in comps], axis=-1)
    kw = {}
    if order >= 1:
        dA = np.stack([c[1] for c in comps], axis=-2)
        kw.update(dA=dA, dW=wv[1])
        B = np.zeros(y.shape[:-1] + (3,))
        if d == 2:
            B[..., 2] = dA[..., 1, 0] - dA[..., 0, 1]
        kw["B"] = B
    if order >= 2:
        kw.update(d2A=np.stack([c[2] for c in comps], axis=-3), d2W=wv[2])
    return SlowFields(A=A, W=wv[0], **kw)


# --------------------------------------------------------------------------
# ModelSpec


@dataclass(frozen=True)
class ModelSpec:
    lattice: LatticeSpec
    magnetic: MagneticSpec
    potential: PotentialSpec
    slow: SlowFieldSpec
    band: int = 1
    nx: int = 32
    nk: int = 32
    gap_tol: float = 1e-3
    stencil_order: int = 2
    gauge_twist: float = 0.0
    seed: int = 0
    epsilons: tuple[str, ...] = DEFAULT_EPSILONS
    tolerances: tuple[tuple[str, float], ...] = tuple(sorted(DEFAULT_TOLERANCES.items()))

    def __post_init__(self):
        d = self.lattice.dimension
        if self.slow.dimension != d:
            raise ValidationError("slow.A", f"need {d} components, got {self.slow.dimension}")
        if self.band < 1:
            raise ValidationError("band", "band index must be >= 1")
        if self.nx < 8:
            raise ValidationError("nx", "cell grid needs nx >= 8")
        if self.nk < 8:
            raise ValidationError("nk", "k grid needs nk >= 8")
        if not self.gap_tol > 0:
            raise ValidationError("gap_tol", "must be positive")
        if self.stencil_order not in (2, 4):
            raise ValidationError("stencil_order", "must be 2 or 4")
        for e in self.epsilon_values:
            if not 0 < e <= Fraction(1, 2):
                raise ValidationError("epsilons", f"{e} not in (0, 1/2]")
        nu = check_flux_admissibility(self.lattice, self.magnetic.B0)
        if nu != self.magnetic.flux_index:
            raise ValidationError("magnetic.flux_index", f"expected {nu}")
        unknown = set(dict(self.tolerances)) - set(DEFAULT_TOLERANCES)
        if unknown:
            raise ValidationError("tolerances", f"unknown keys {sorted(unknown)}")

    @property
    def dimension(self) -> int:
        return self.lattice.dimension

    @property
    def tol(self) -> dict:
        return {**DEFAULT_TOLERANCES, **dict(self.tolerances)}

    @property
    def epsilon_values(self) -> list[Fraction]:
        return [Fraction(e) for e in self.epsilons]

    @property
    def cell_shape(self) -> tuple[int, ...]:
        return (self.nx,) * self.dimension

    def to_dict(self) -> dict:
        return _spec_to_dict(self)

    def spec_hash(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()[:16]

    def with_(self, **changes) -> "ModelSpec":
        return replace(self, **changes)


def _field_to_dict(f: FourierField) -> dict:
    return {
        "constant": float(f.constant),
        "terms": [{"n": list(t.n), "cos": float(t.cos), "sin": float(t.sin)} for t in f.terms],
    }


def _spec_to_dict(spec: ModelSpec) -> dict:
    return {
        "dimension": spec.dimension,
        "band": spec.band,
        "nx": spec.nx,
        "nk": spec.nk,
        "gap_tol": float(spec.gap_tol),
        "stencil_order": spec.stencil_order,
        "gauge_twist": float(spec.gauge_twist),
        "seed": spec.seed,
        "epsilons": list(spec.epsilons),
        "lattice": {"basis": [list(map(float, v)) for v in spec.lattice.basis]},
        "magnetic": {"B0": float(spec.magnetic.B0), "flux_index": spec.magnetic.flux_index},
        "potential": _field_to_dict(spec.potential.field),
        "slow": {
            "W": _field_to_dict(spec.slow.W),
            "A": [_field_to_dict(a) for a in spec.slow.A],
        },
        "tolerances": dict(spec.tolerances),
    }


def _parse_field(raw: Any, where: str, d: int) -> FourierField:
    if raw is None:
        return FourierField()
    if isinstance(raw, (int, float)):
        return FourierField(constant=float(raw))
    if not isinstance(raw, Mapping):
        raise ValidationError(where, "expected a table with 'constant' and 'terms'")
    extra = set(raw) - {"constant", "terms"}
    if extra:
        raise ValidationError(where, f"unknown keys {sorted(extra)}")
    terms = []
    complex_terms = {}
    for i, t in enumerate(raw.get("terms", [])):
        loc = f"{where}.terms[{i}]"
        if not isinstance(t, Mapping) or "n" not in t:
            raise ValidationError(loc, "each term needs an integer vector 'n'")
        n = t["n"]
        if isinstance(n, int):
            n = [n]
        if len(n) != d or not all(isinstance(v, int) for v in n):
            raise ValidationError(loc, f"'n' must be {d} integers")
        extra = set(t) - {"n", "cos", "sin", "re", "im"}
        if extra:
            raise ValidationError(loc, f"unknown keys {sorted(extra)}")
        if "re" in t or "im" in t:
            if "cos" in t or "sin" in t:
                raise ValidationError(loc, "mix of complex (re/im) and real (cos/sin) forms")
            complex_terms[tuple(n)] = complex(float(t.get("re", 0.0)), float(t.get("im", 0.0)))
        else:
            terms.append(FourierTerm(tuple(n), float(t.get("cos", 0.0)), float(t.get("sin", 0.0))))
    const = float(raw.get("constant", 0.0))
    done = set()
    for n, c in complex_terms.items():
        if n in done:
            continue
        neg = tuple(-v for v in n)
        if all(v == 0 for v in n):
            if abs(c.imag) > 1e-14:
                raise ValidationError(where, "zero-frequency coefficient must be real")
            const += c.real
            done.add(n)
            continue
        partner = complex_terms.get(neg)
        if partner is None or abs(partner - c.conjugate()) > 1e-12 * max(1.0, abs(c)):
            raise ValidationError(where, f"coefficients at {n} and {neg} are not conjugate (V must be real)")
        # c e^{i n.z} + conj(c) e^{-i n.z}
        terms.append(FourierTerm(n, 2 * c.real, -2 * c.imag))
        done.update({n, neg})
    return FourierField(constant=const, terms=tuple(terms))


def spec_from_dict(data: Mapping[str, Any]) -> ModelSpec:
    """Build and validate a ModelSpec from a JSON-compatible mapping."""
    known = {"dimension", "band", "nx", "nk", "gap_tol", "stencil_order", "gauge_twist", "seed",
             "epsilons", "lattice", "magnetic", "potential", "slow", "tolerances"}
    extra = set(data) - known
    if extra:
        raise ValidationError(sorted(extra)[0], "unknown key")
    lat = data.get("lattice", {})
    d = int(data.get("dimension", len(lat.get("basis", [[0]]))))
    if d not in (1, 2):
        raise ValidationError("dimension", "must be 1 or 2")
    basis = lat.get("basis")
    if basis is None:
        basis = [[TWO_PI if i == j else 0.0 for j in range(d)] for i in range(d)]
    if len(basis) != d:
        raise ValidationError("lattice.basis", f"expected {d} vectors")
    lattice = LatticeSpec(tuple(tuple(float(v) for v in row) for row in basis))

    mag = data.get("magnetic", {})
    B0 = float(mag.get("B0", 0.0))
    nu = check_flux_admissibility(lattice, B0)
    if "flux_index" in mag and int(mag["flux_index"]) != nu:
        raise ValidationError("magnetic.flux_index", f"inconsistent with B0 (expected {nu})")
    if d == 1:
        B0 = 0.0

    potential = PotentialSpec(_parse_field(data.get("potential"), "potential", d))
    slow = data.get("slow", {})
    A_raw = slow.get("A")
    if A_raw is None:
        A_raw = [None] * d
    if not isinstance(A_raw, list) or len(A_raw) != d:
        raise ValidationError("slow.A", f"expected a list of {d} component fields")
    A = tuple(_parse_field(a, f"slow.A[{i}]", d) for i, a in enumerate(A_raw))
    W = _parse_field(slow.get("W"), "slow.W", d)

    tol = dict(DEFAULT_TOLERANCES)
    for k, v in data.get("tolerances", {}).items():
        if k not in DEFAULT_TOLERANCES:
            raise ValidationError(f"tolerances.{k}", "unknown tolerance")
        tol[k] = float(v)

    eps_raw = data.get("epsilons", list(DEFAULT_EPSILONS))
    epsilons = []
    for e in eps_raw:
        try:
            epsilons.append(str(Fraction(e).limit_denominator(10**9) if isinstance(e, float) else Fraction(e)))
        except (ValueError, ZeroDivisionError, TypeError) as exc:
            raise ValidationError("epsilons", f"cannot parse {e!r}") from exc

    def _int(key, default):
        v = data.get(key, default)
        if isinstance(v, bool) or not isinstance(v, int):
            raise ValidationError(key, "must be an integer")
        return v

    return ModelSpec(
        lattice=lattice,
        magnetic=MagneticSpec(B0=B0, flux_index=nu),
        potential=potential,
        slow=SlowFieldSpec(A=A, W=W),
        band=_int("band", 1),
        nx=_int("nx", 32),
        nk=_int("nk", 32),
        gap_tol=float(data.get("gap_tol", 1e-3)),
        stencil_order=_int("stencil_order", 2),
        gauge_twist=float(data.get("gauge_twist", 0.0)),
        seed=_int("seed", 0),
        epsilons=tuple(epsilons),
        tolerances=tuple(sorted(tol.items())),
    )


def load_spec(config_text: str) -> ModelSpec:
    """Parse TOML (or JSON) config text into a validated ModelSpec.

    Omitted keys take the documented defaults; the defaults are visible in
    the returned spec and in ``spec.to_dict()``.
    """
    text = config_text.strip()
    try:
        if text.startswith("{"):
            data = json.loads(text)
        else:
            data = tomli.loads(config_text)
    except (tomli.TOMLDecodeError, json.JSONDecodeError) as exc:
        raise ParseError(f"malformed config: {exc}") from exc
    return spec_from_dict(data)


def load_spec_file(path) -> ModelSpec:
    with open(path, "r", encoding="utf-8") as fh:
        return load_spec(fh.read())


def dumps_spec(spec: ModelSpec) -> str:
    """Serialize to TOML text such that ``load_spec(dumps_spec(s)) == s``."""
    return tomli_w.dumps(spec.to_dict())


# Convenience constructors used by tests, examples and the CLI ---------------


def mathieu_spec(V0: float = 2.0, W_amp: float = 0.0, A_const: float = 0.0, A_amp: float = 0.0,
                 **kw) -> ModelSpec:
    """1D model ``V = V0 cos x`` on ``Gamma = 2 pi Z`` with slow fields

    ``W = W_amp cos y`` and ``A = A_const + A_amp cos y``.
    """
    data = {
        "dimension": 1,
        "potential": {"terms": [{"n": [1], "cos": V0}]} if V0 else {},
        "slow": {
            "W": {"terms": [{"n": [1], "cos": W_amp}]} if W_amp else {},
            "A": [{"constant": A_const, "terms": [{"n": [1], "cos": A_amp}] if A_amp else []}],
        },
    }
    data.update(kw)
    return spec_from_dict(data)


def landau_spec(nu: int = 1, v: float = 0.0, nx: int = 48, nk: int = 8, band: int = 1,
                A_terms=None, W_terms=None, **kw) -> ModelSpec:
    """2D unit square cell with ``B0 = 4 pi nu`` and
    ``V = v (cos 2 pi x1 + cos 2 pi x2)``."""
    data = {
        "dimension": 2,
        "lattice": {"basis": [[1.0, 0.0], [0.0, 1.0]]},
        "magnetic": {"B0": 4 * math.pi * nu},
        "potential": {"terms": [{"n": [1, 0], "cos": v}, {"n": [0, 1], "cos": v}]} if v else {},
        "nx": nx,
        "nk": nk,
        "band": band,
        "slow": {
            "A": A_terms if A_terms is not None else [None, None],
            "W": W_terms,
        },
    }
    data.update(kw)
    return spec_from_dict(data)
