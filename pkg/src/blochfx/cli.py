"""Command-line front end: ``blochfx <command> [flags]``.

Every command writes CSV files and a ``manifest.json`` into ``--out``.
Exit codes: 0 success, 1 invalid input, 2 numerical failure, 3 when
``validate`` completes with failing criteria.
"""
from __future__ import annotations

import argparse
import logging
import sys
from fractions import Fraction
from pathlib import Path

import numpy as np

from .config import ModelSpec, load_spec_file, mathieu_spec
from .errors import InputError, NumericalError, ParseError
from .io import RunManifest, write_csv

log = logging.getLogger("blochfx")

COMMANDS = ("bands", "atlas", "effective", "residual", "dynamics", "compare", "validate")


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        sys.stderr.write(f"{self.prog}: error: {message}\n")
        raise SystemExit(1)


def _epsilons(text):
    try:
        vals = [Fraction(t.strip()) for t in text.split(",") if t.strip()]
    except (ValueError, ZeroDivisionError) as exc:
        raise argparse.ArgumentTypeError(f"bad epsilon list {text!r}: {exc}") from None
    if not vals:
        raise argparse.ArgumentTypeError("empty epsilon list")
    return vals


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="blochfx", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)
    for name in COMMANDS:
        s = sub.add_parser(name)
        s.add_argument("--config", type=Path, help="TOML model file (default: built-in Mathieu demo)")
        s.add_argument("--out", type=Path, default=Path("blochfx-out"))
        s.add_argument("--band", type=int)
        s.add_argument("--nk", type=int)
        s.add_argument("--nx", type=int)
        s.add_argument("--epsilon", type=_epsilons, help="comma list of rationals, e.g. 1/8,1/16")
        s.add_argument("--order", type=int, choices=(0, 1), default=1)
        s.add_argument("--variant", choices=("peierls", "corrected"), default="peierls")
        s.add_argument("--seed", type=int)
        if name == "validate":
            s.add_argument("--criteria", type=lambda t: [int(v) for v in t.split(",")],
                           help="subset of criterion numbers, e.g. 1,4,7")
        if name in ("dynamics", "compare"):
            s.add_argument("--s-end", type=float, default=1.0)
        if name == "atlas":
            s.add_argument("--cache", type=Path, help="also store the atlas cache here")
    return p


def default_spec() -> ModelSpec:
    return mathieu_spec(W_amp=0.3, A_const=0.2, A_amp=0.1, nx=16, nk=32, gauge_twist=0.3)


def resolve_spec(args) -> ModelSpec:
    spec = load_spec_file(args.config) if args.config else default_spec()
    changes = {k: getattr(args, k) for k in ("band", "nk", "nx", "seed") if getattr(args, k) is not None}
    if args.epsilon:
        changes["epsilons"] = tuple(str(e) for e in args.epsilon)
    return spec.with_(**changes) if changes else spec


def _kcols(d, prefix="k"):
    return [f"{prefix}{i + 1}" for i in range(d)]


# --------------------------------------------------------------------------
# commands


def cmd_bands(spec, args, man):
    from .atlas import build_band_atlas

    atlas = build_band_atlas(spec)
    d = spec.dimension
    rows = []
    for i, k in enumerate(atlas.nodes):
        for j, b in enumerate(atlas.bands):
            rows.append([*k, b, atlas.energies[i, j]])
    man.outputs.append(write_csv(args.out / "bands.csv", _kcols(d) + ["band_index", "energy"], rows).name)
    man.results.update(assumption_a=atlas.assumption_a, audit=atlas.audit_message,
                       lower_margin=atlas.lower_margin, upper_margin=atlas.upper_margin)


def cmd_atlas(spec, args, man):
    from .atlas import (build_band_atlas, chern_number, fix_smooth_gauge, plaquette_curvature,
                        save_atlas, zak_phase)

    atlas = build_band_atlas(spec)
    atlas.require_assumption_a()
    d = spec.dimension
    gauge = fix_smooth_gauge(atlas)
    berry = gauge.berry
    curv = plaquette_curvature(atlas).ravel() if d == 2 else np.full(len(atlas.nodes), np.nan)
    header = _kcols(d) + [f"berry_{i + 1}" for i in range(d)] + ["plaquette_curvature"]
    rows = [[*atlas.nodes[i], *berry[i], curv[i]] for i in range(len(atlas.nodes))]
    man.outputs.append(write_csv(args.out / "geometry.csv", header, rows).name)
    if d == 1:
        man.results["zak_phase"] = zak_phase(atlas)
    else:
        man.results["chern_number"] = chern_number(atlas)
    man.results["audit"] = atlas.audit_message
    if args.cache:
        man.results["cache_file"] = str(save_atlas(atlas, args.cache))


def cmd_effective(spec, args, man):
    from .symbols import SymbolTable

    table = SymbolTable.from_spec(spec)
    d = spec.dimension
    n = 32 if d == 1 else 8
    ys = 2 * np.pi * np.arange(n) / n
    ks = (np.arange(n) / n - 0.5) * spec.lattice.dual_lengths[0]
    mesh = np.meshgrid(*([ys] * d + [ks] * d), indexing="ij")
    pts = np.stack([m.ravel() for m in mesh], axis=-1)
    rows = []
    for lo in range(0, len(pts), 512):
        P = pts[lo:lo + 512]
        sd = table.evaluate(P[:, :d], P[:, d:], explicit=True)
        B3 = sd.B3 if d == 2 else np.zeros(len(P))
        for i in range(len(P)):
            rows.append([*P[i], sd.h0[i], sd.h1[i].real, sd.h1[i].imag, sd.L3[i], B3[i], sd.a1[i]])
    header = _kcols(d, "y") + _kcols(d) + ["h0", "re_h1", "im_h1", "L3", "B3", "a1"]
    man.outputs.append(write_csv(args.out / "symbols.csv", header, rows).name)
    man.results.update(table.provenance, points=len(rows))


def cmd_residual(spec, args, man):
    from .quantize import (TableSymbols, default_two_scale_probe, fit_slope, intertwining_residual,
                           isometry_defect, projection_defect)
    from .symbols import SymbolTable

    src = TableSymbols(SymbolTable.from_spec(spec))
    eps = spec.epsilon_values
    N = args.order
    kinds = {
        "intertwining": lambda e: intertwining_residual(spec, src, N, e),
        "isometry": lambda e: isometry_defect(src, N, e),
    }
    if N == 1:
        probe = default_two_scale_probe(spec, seed=spec.seed)
        kinds["isometry_no_a1"] = lambda e: isometry_defect(src, 1, e, use_a1=False)
        kinds["projection"] = lambda e: projection_defect(src, 1, e, probe)
    rows, slopes = [], {}
    for kind, fn in kinds.items():
        vals = [fn(e) for e in eps]
        rows += [[str(e), N, kind, v] for e, v in zip(eps, vals)]
        s, half = fit_slope(eps, vals)
        slopes[kind] = {"slope": s, "ci95": half}
    man.outputs.append(write_csv(args.out / "residual.csv", ["epsilon", "order", "kind", "value"],
                                 rows).name)
    man.results.update(slopes=slopes, grid={"nx": spec.nx, "nk": spec.nk, "ny": 128})


def cmd_dynamics(spec, args, man):
    from .semiclassics import (BandFunctions, WKBInitial, integrate_flow, launch_fan,
                               synthesize_packet)
    from .symbols import SymbolTable

    table = SymbolTable.from_spec(spec)
    bf = BandFunctions(table)
    init = WKBInitial()
    eps = float(spec.epsilon_values[0] if args.epsilon is None else args.epsilon[0])
    flow_eps = eps if args.variant == "corrected" else 0.0
    tr = integrate_flow(table, [init.center], [init.k0], args.s_end, variant=args.variant,
                        eps=flow_eps, n_out=51, bf=bf)
    detJ = [launch_fan(table, init, np.array([init.center]), s, bf)["Y"][0] for s in tr.s]
    rows = [[tr.s[i], tr.y[i, 0], tr.k[i, 0], tr.h0[i], tr.berry[i], tr.rw[i], detJ[i]]
            for i in range(len(tr.s))]
    man.outputs.append(write_csv(args.out / "traj.csv",
                                 ["s", "y", "k", "h0", "berry_phase", "rw_phase", "det_J"], rows).name)
    syn = synthesize_packet(table, init, args.s_end, eps, bf=bf)
    man.outputs.append(write_csv(args.out / "packet.csv", ["x", "re_psi", "im_psi"],
                                 zip(syn.x, syn.psi.real, syn.psi.imag)).name)
    man.results.update(epsilon=eps, energy_drift=tr.energy_drift, berry_phase=syn.berry_center,
                       amplitude_gap=syn.amplitude_gap, min_jacobian=syn.min_jacobian,
                       density_center=syn.density_center)


def cmd_compare(spec, args, man):
    from .direct import compare_dynamics
    from .quantize import fit_slope
    from .symbols import SymbolTable

    if spec.dimension != 1:
        raise InputError("compare is implemented for d = 1")
    table = SymbolTable.from_spec(spec)
    eps = spec.epsilon_values
    rows, per = [], {}
    for e in eps:
        rep = compare_dynamics(spec, table, e, s_end=args.s_end,
                               test_orientation=(e == Fraction(1, 32)) or len(eps) == 1)
        rows += list(rep.observable_rows())
        per[str(e)] = {"center_error": rep.center_error, "leakage": rep.leakage,
                       "phase_error_with_h1": float(np.max(rep.phase_error_with_h1)),
                       "phase_error_without_h1": float(np.max(rep.phase_error_without_h1)),
                       "berry_phase": rep.berry_phase, "norm_drift": rep.norm_drift,
                       "energy_drift": rep.energy_drift}
        if rep.orientation_errors:
            man.results["orientation"] = rep.orientation
            man.results["orientation_errors"] = rep.orientation_errors
    header = ["epsilon", "t", "s", "center", "quasimomentum", "band_population", "phase", "energy"]
    man.outputs.append(write_csv(args.out / "observables.csv", header, rows).name)
    man.results["per_epsilon"] = per
    if len(eps) > 1:
        man.results["center_slope"] = fit_slope(eps, [per[str(e)]["center_error"] for e in eps])


def cmd_validate(spec, args, man):
    from .acceptance import run_all

    results = run_all(args.criteria)
    man.results["criteria"] = {str(r.number): {"passed": r.passed, "summary": r.summary,
                                               "values": r.values, "seconds": r.seconds}
                               for r in results}
    failed = [r.number for r in results if not r.passed]
    print(f"{len(results) - len(failed)}/{len(results)} criteria passed")
    return 3 if failed else 0


HANDLERS = {name: globals()[f"cmd_{name}"] for name in COMMANDS}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        spec = resolve_spec(args)
        man = RunManifest(command=args.command, spec=spec.to_dict(), spec_hash=spec.spec_hash(),
                          parameters={k: (str(v) if isinstance(v, Path) else v)
                                      for k, v in vars(args).items() if k != "epsilon"})
        man.parameters["epsilon"] = [str(e) for e in spec.epsilon_values]
        args.out.mkdir(parents=True, exist_ok=True)
        code = HANDLERS[args.command](spec, args, man) or 0
    except (InputError, ParseError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except NumericalError as exc:
        print(f"numerical failure in stage '{exc.stage}': {exc}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    man.finish()
    man.write(args.out)
    return code


if __name__ == "__main__":
    sys.exit(main())
