"""Command-line front end.

Every subcommand builds a validated config (from flags, from ``--config``
JSON, or both with flags taking precedence), runs, and writes one CSV
artifact plus a JSON mirror when ``--output`` is given, stdout otherwise.

Exit codes: 0 pass, 1 property failure, 2 input error, 3 solver failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import math
import sys
from pathlib import Path

import numpy as np
from pydantic import ValidationError

from . import __version__
from .acceptance import verify_all
from .config import parse_config, resolved
from .discrete import (
    EigenSolverError,
    ModeSpectrum,
    ThresholdPolicy,
    assemble_circle_dirac,
    assemble_revolution_dirac,
    circle_kernel_estimate,
    eig_smallest,
    eigen_dump_csv,
    flat_torus_surface,
    random_conformal_factor,
    round_sphere_surface,
    surface_kernel_estimate,
    surface_mode_spectra,
)
from .exact import (
    FlatTorus,
    SpinCircle,
    SpinStructure,
    circle_kernel_dim,
    circle_spectrum,
    flat_torus_spectrum,
    sphere_spectrum,
    torus_kernel_dim,
)
from .index import FixtureError, TopologicalData, as_lower_bound, is_d_minimal, load_fixtures
from .io import atomic_write, json_document, with_header
from .surgery import (
    SYNTHETIC_SPINORS,
    assemble_surgery_model,
    build_neck_profile,
    energy_oracle,
    neck_energy_ratio,
    neck_sweep,
    outer_bump,
    sample_synthetic,
)

log = logging.getLogger("spindirac")

EXIT_PASS, EXIT_FAIL, EXIT_INPUT, EXIT_SOLVER = 0, 1, 2, 3
TWO_PI = 2 * math.pi


class InputError(ValueError):
    pass


def _spin_pair(code: str, n: int) -> tuple:
    if len(code) != n or set(code) - {"0", "1"}:
        raise InputError(f"spin must be {n} characters of 0/1, got {code!r}")
    return tuple(int(c) for c in code)


def _circle_spin(code: str) -> SpinStructure:
    aliases = {"0": "non_bounding", "1": "bounding", "nb": "non_bounding", "b": "bounding"}
    try:
        return SpinStructure(aliases.get(code, code))
    except ValueError as exc:
        raise InputError(f"unknown circle spin structure {code!r}") from exc


def _lattice(text: str) -> np.ndarray:
    if text == "2pi-square":
        return TWO_PI * np.eye(2)
    try:
        vals = [float(x) for x in text.split(",")]
    except ValueError as exc:
        raise InputError(f"lattice must be '2pi-square' or four numbers a,b,c,d, got {text!r}") from exc
    if len(vals) != 4:
        raise InputError(f"lattice needs four numbers (rows of the basis), got {len(vals)}")
    return np.array(vals).reshape(2, 2)


def _torus_surface(cfg) -> tuple:
    """Square 2 pi torus as a surface of revolution; spin digits are (theta, t)."""
    spin = _spin_pair(cfg.spin, 2)
    flags = [SpinStructure.BOUNDING if s else SpinStructure.NON_BOUNDING for s in spin]
    return flat_torus_surface(theta_spin=flags[0], t_spin=flags[1]), spin


def cmd_spectrum(cfg):
    if cfg.method == "exact":
        if cfg.model == "torus":
            table = flat_torus_spectrum(FlatTorus(_lattice(cfg.lattice), _spin_pair(cfg.spin, 2)), cfg.cutoff)
        elif cfg.model == "circle":
            table = circle_spectrum(SpinCircle(cfg.length, _circle_spin(cfg.spin)), cfg.cutoff)
        else:
            table = sphere_spectrum(cfg.n, cfg.cutoff)
        return table.to_csv(), {"kernel_dim": table.kernel_dim(), "entries": len(table.entries)}, True
    if cfg.model == "circle":
        op = assemble_circle_dirac(SpinCircle(cfg.length, _circle_spin(cfg.spin)), None, cfg.N)
        pairs = eig_smallest(op, min(op.dimension, 16))
        vals = np.array([v for v, _ in pairs])
        res = np.array([np.linalg.norm(op.apply(v) - lam * v) for lam, v in pairs])
        keep = np.abs(vals) <= cfg.cutoff
        spectra = [ModeSpectrum(0, op.mesh, vals[keep], res[keep])]
    elif cfg.model == "torus":
        if cfg.lattice != "2pi-square":
            raise InputError("discrete torus spectra support only the 2pi-square lattice")
        surface, _ = _torus_surface(cfg)
        spectra = surface_mode_spectra(surface, cfg.m_max, cfg.N)
    else:
        if cfg.n != 2:
            raise InputError("discrete sphere spectra are available only for n = 2")
        spectra = surface_mode_spectra(round_sphere_surface(), cfg.m_max, cfg.N)
    for ms in spectra:
        keep = np.abs(ms.eigenvalues) <= cfg.cutoff
        ms.eigenvalues, ms.residuals = ms.eigenvalues[keep], ms.residuals[keep]
    return eigen_dump_csv(spectra), {"count": int(sum(ms.eigenvalues.size for ms in spectra))}, True


def cmd_kernel(cfg):
    policy = ThresholdPolicy(c_tau=cfg.c_tau)
    if cfg.model == "circle":
        c = SpinCircle(cfg.length, _circle_spin(cfg.spin))
        est = circle_kernel_estimate(c, None, cfg.N, policy)
        exact = circle_kernel_dim(c)
        topo = TopologicalData(1, 0, c.structure is SpinStructure.NON_BOUNDING, "circle")
    elif cfg.model == "torus":
        surface, spin = _torus_surface(cfg)
        est, _ = surface_kernel_estimate(surface, cfg.m_max, cfg.N, policy)
        exact = torus_kernel_dim(FlatTorus(TWO_PI * np.eye(2), spin))
        topo = TopologicalData(2, 0, spin == (0, 0), "flat torus")
    else:
        est, _ = surface_kernel_estimate(round_sphere_surface(), cfg.m_max, cfg.N, policy)
        exact, topo = 0, TopologicalData(2, 0, False, "round sphere")
    verdict = is_d_minimal(est.count, topo)
    rows = {"count": est.count, "exact": exact, "threshold": est.threshold, "gap_ratio": est.gap_ratio,
            "verdict": est.verdict, "bound": as_lower_bound(topo), "minimality": verdict,
            "meshes": list(est.meshes_used), "counts_by_mesh": list(est.counts_by_mesh)}
    csv = "count,exact,threshold,gap_ratio,verdict,bound,minimality\n" \
          f"{est.count},{exact},{est.threshold:.10g},{est.gap_ratio:.10g},{est.verdict}," \
          f"{rows['bound']},{verdict}\n"
    ok = est.confident and est.count == exact and verdict != "inconsistent"
    return csv, rows, ok


def cmd_bound_check(cfg):
    topo = TopologicalData(cfg.n, cfg.a_hat, bool(cfg.alpha))
    bound = as_lower_bound(topo)
    verdict = is_d_minimal(cfg.kernel, topo)
    csv = f"n,alpha,a_hat,kernel,bound,verdict\n{cfg.n},{cfg.alpha},{cfg.a_hat},{cfg.kernel},{bound},{verdict}\n"
    return csv, {"bound": bound, "verdict": verdict}, verdict != "inconsistent"


def cmd_conformal_test(cfg):
    policy = ThresholdPolicy(c_tau=cfg.c_tau)
    c = SpinCircle(cfg.length, cfg.spin)
    ref = circle_kernel_estimate(c, None, cfg.N, policy)
    rng = np.random.default_rng(cfg.seed)
    lines = ["trial,count,reference,gap_ratio,verdict,agrees"]
    failures = 0
    for k in range(cfg.trials):
        est = circle_kernel_estimate(c, random_conformal_factor(rng, amplitude=cfg.amplitude), cfg.N, policy)
        agrees = est.confident and ref.confident and est.count == ref.count
        failures += not agrees
        lines.append(f"{k},{est.count},{ref.count},{est.gap_ratio:.6g},{est.verdict},{str(agrees).lower()}")
    return "\n".join(lines) + "\n", {"reference": ref.count, "failures": failures}, failures == 0


def cmd_neck_sweep(cfg):
    rep = neck_sweep(cfg.rhos, cfg.m_max, cfg.N, cfg.baseline_kernel, cfg.t_spin, cfg.R_max, cfg.r_0,
                     cfg.r_1, cfg.sphere_radius, ThresholdPolicy(c_tau=cfg.c_tau))
    # a partial report is still written, flagged incomplete
    status = rep.passed if rep.complete else "solver"
    return rep.to_csv(), json.loads(rep.to_json()), status


def cmd_energy_ratio(cfg):
    model = assemble_surgery_model(build_neck_profile(cfg.R_max, cfg.r_0, cfg.r_1, cfg.rho),
                                   cfg.sphere_radius, cfg.t_spin)
    s = cfg.s if cfg.s is not None else cfg.r_0 / 2
    tau = ThresholdPolicy(c_tau=cfg.c_tau).tau
    if cfg.spinor == "eigen":
        op = assemble_revolution_dirac(model.surface, cfg.mode, cfg.N)
        lam, vec = eig_smallest(op, 1)[0]
        res = neck_energy_ratio(vec, lam, model, op, s, tau(op.mesh))
        oracle = (float("nan"), float("nan"))
    else:
        sp = outer_bump(s) if cfg.spinor == "bump" else SYNTHETIC_SPINORS[cfg.spinor]
        op, vec = sample_synthetic(model, sp, cfg.N, cfg.mode)
        # synthetic spinors are treated as harmonic
        res = neck_energy_ratio(vec, 0.0, model, op, s, tau(op.mesh))
        inner, outer = energy_oracle(model, sp, s)
        oracle = (inner / 32, outer)
        lam = 0.0
    sat = res.satisfied
    sat_txt = sat if isinstance(sat, str) else str(sat).lower()
    csv = ("spinor,eigenvalue,lhs,rhs,oracle_lhs,oracle_rhs,satisfied\n"
           f"{cfg.spinor},{lam:.10g},{res.lhs:.10g},{res.rhs:.10g},{oracle[0]:.10g},{oracle[1]:.10g},{sat_txt}\n")
    result = {"lhs": res.lhs, "rhs": res.rhs, "satisfied": sat_txt, "eigenvalue": lam}
    return csv, result, sat is not False


def cmd_list_fixtures(cfg):
    fixtures = load_fixtures(cfg.fixtures)
    lines = ["id,kind,label,provenance"]
    for fx in fixtures:
        lines.append(",".join(json.dumps(fx[k]) for k in ("id", "kind", "label", "provenance")))
    return "\n".join(lines) + "\n", fixtures, True


COMMANDS = {
    "spectrum": cmd_spectrum,
    "kernel": cmd_kernel,
    "bound-check": cmd_bound_check,
    "conformal-test": cmd_conformal_test,
    "neck-sweep": cmd_neck_sweep,
    "energy-ratio": cmd_energy_ratio,
    "list-fixtures": cmd_list_fixtures,
}


def _floats(text: str) -> list[float]:
    try:
        return [float(x) for x in text.split(",") if x.strip()]
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from exc


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="spindirac", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"spindirac {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)
    S = argparse.SUPPRESS

    def add(name, help_text):
        p = sub.add_parser(name, help=help_text, argument_default=S)
        p.add_argument("--config", help="JSON config with the same schema")
        p.add_argument("--output", dest="output_path", help="artifact path (CSV); JSON mirror alongside")
        p.add_argument("--seed", type=int)
        return p

    p = add("spectrum", "exact or discrete Dirac spectrum")
    p.add_argument("--model", choices=["circle", "torus", "sphere"])
    p.add_argument("--method", choices=["exact", "discrete"])
    p.add_argument("--lattice")
    p.add_argument("--spin")
    p.add_argument("--length", type=float)
    p.add_argument("--n", type=int)
    p.add_argument("--cutoff", type=float)
    p.add_argument("--N", type=int)
    p.add_argument("--m-max", dest="m_max", type=float)

    p = add("kernel", "discrete kernel estimate with minimality verdict")
    p.add_argument("--model", choices=["circle", "torus", "sphere"])
    p.add_argument("--spin")
    p.add_argument("--length", type=float)
    p.add_argument("--N", type=int)
    p.add_argument("--m-max", dest="m_max", type=float)
    p.add_argument("--c-tau", dest="c_tau", type=float)

    p = add("bound-check", "topological lower bound and minimality verdict")
    p.add_argument("--n", type=int)
    p.add_argument("--alpha", type=int, choices=[0, 1])
    p.add_argument("--a-hat", dest="a_hat", type=int)
    p.add_argument("--kernel", type=int)

    p = add("conformal-test", "kernel count under random conformal factors on a circle")
    p.add_argument("--spin", choices=["bounding", "non_bounding"])
    p.add_argument("--length", type=float)
    p.add_argument("--trials", type=int)
    p.add_argument("--N", type=int)
    p.add_argument("--amplitude", type=float)
    p.add_argument("--c-tau", dest="c_tau", type=float)

    p = add("neck-sweep", "kernel of the surgered sphere along decreasing rho")
    p.add_argument("--rhos", type=_floats)
    p.add_argument("--m-max", dest="m_max", type=float)
    p.add_argument("--N", type=int)
    p.add_argument("--baseline-kernel", dest="baseline_kernel", type=int)
    p.add_argument("--t-spin", dest="t_spin", choices=["bounding", "non_bounding"])
    p.add_argument("--R-max", dest="R_max", type=float)
    p.add_argument("--r0", dest="r_0", type=float)
    p.add_argument("--r1", dest="r_1", type=float)
    p.add_argument("--sphere-radius", dest="sphere_radius", type=float)
    p.add_argument("--c-tau", dest="c_tau", type=float)

    p = add("energy-ratio", "inner/outer neck energy split")
    p.add_argument("--rho", type=float)
    p.add_argument("--s", type=float)
    p.add_argument("--spinor", choices=["constant", "gaussian", "bump", "eigen"])
    p.add_argument("--mode", type=float)
    p.add_argument("--N", type=int)
    p.add_argument("--t-spin", dest="t_spin", choices=["bounding", "non_bounding"])
    p.add_argument("--c-tau", dest="c_tau", type=float)

    p = add("list-fixtures", "print the fixture catalog")
    p.add_argument("--fixtures", help="alternative fixture file")

    p = add("verify-all", "run the acceptance suite")
    p.add_argument("--fixtures", help="alternative fixture file")
    p.add_argument("--c-tau", dest="c_tau", type=float)
    return parser


def _load_config(args: argparse.Namespace):
    data = {}
    raw = vars(args).copy()
    raw.pop("verbose", None)
    path = raw.pop("config", None)
    if path:
        try:
            data = json.loads(Path(path).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise InputError(f"cannot read config {path}: {exc}") from exc
        if not isinstance(data, dict):
            raise InputError("config file must hold a JSON object")
        if data.get("command", raw["command"]) != raw["command"]:
            raise InputError(f"config is for {data['command']!r}, not {raw['command']!r}")
    data.update(raw)
    return parse_config(data)


def _emit(cfg, csv: str, result) -> None:
    conf = resolved(cfg)
    text = with_header(csv, conf)
    if cfg.output_path:
        out = Path(cfg.output_path)
        atomic_write(out, text)
        atomic_write(out.with_suffix(".json"), json_document(result, conf))
    else:
        sys.stdout.write(text)


def _verify(cfg) -> int:
    out_dir = Path(cfg.output_path) if cfg.output_path else None
    results = verify_all(out_dir, cfg.seed, cfg.c_tau, cfg.fixtures)
    failed = [r for r in results if not r.passed]
    print(f"{len(results) - len(failed)}/{len(results)} criteria passed")
    for r in failed:
        print(f"failed: {r.number}. {r.title}", file=sys.stderr)
    return EXIT_PASS if not failed else EXIT_FAIL


def run(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = _load_config(args)
        if cfg.command == "verify-all":
            return _verify(cfg)
        csv, result, ok = COMMANDS[cfg.command](cfg)
        _emit(cfg, csv, result)
        if ok == "solver":
            print(f"solver failure: {result.get('error', '')}", file=sys.stderr)
            return EXIT_SOLVER
        if not ok:
            print(f"{cfg.command}: property check failed", file=sys.stderr)
        return EXIT_PASS if ok else EXIT_FAIL
    except ValidationError as exc:
        first = exc.errors()[0]
        loc = ".".join(str(x) for x in first["loc"])
        print(f"input error: {loc}: {first['msg']}", file=sys.stderr)
        return EXIT_INPUT
    except EigenSolverError as exc:
        print(f"solver failure: {exc}", file=sys.stderr)
        return EXIT_SOLVER
    except (FixtureError, ValueError, KeyError) as exc:
        print(f"input error: {exc}", file=sys.stderr)
        return EXIT_INPUT


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
