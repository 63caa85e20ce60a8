"""momentlab command line: derive, close, simulate and check moment relations.

Every numeric subcommand writes CSV (header always present, floats with 17
significant digits, exact rationals as p/q).  Exit status is 0 on success,
2 when a result carries a flag (unreliable MC, unconverged or unstable
solver, infeasible closure) and 1 on errors.
"""
from __future__ import annotations

import argparse
import csv
import io
import math
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Sequence

from .estimates import EquilibriumEstimate
from .fpe import (FpeInstabilityError, build_grid, density_moments, fpe_evolve,
                  mu2_scale_guess, width_sweep)
from .mc import SimConfig, run_ensemble
from .poly import Polynomial
from .relations import (ClosureInfeasible, MomentRelation, classify_relation,
                        derive_relation, gaussian_closure_mu2, paper_general_relation,
                        relation_residual)
from .systems import ItoSystem, cubic_attractor, make_system

SUBCOMMANDS = ("derive", "closure", "mc", "fpe", "sweep-sigma", "sweep-width", "check")

ESTIMATE_COLUMNS = ["sigma", "mu2", "mu2_se", "mu4", "mu4_se", "mu6", "mu6_se",
                    "method", "dt", "T", "N_or_n", "W", "truncation", "flags"]
CLOSURE_COLUMNS = ["sigma", "mu2_closure", "mu4_closure", "feasible"]
SWEEP_SIGMA_COLUMNS = ESTIMATE_COLUMNS + ["mu2_closure", "mu4_closure", "feasible", "verdict"]
SWEEP_WIDTH_COLUMNS = ["sigma", "W", "mu2", "mu4", "truncation"]
CHECK_COLUMNS = ["relation_variant", "k", "raw_residual", "normalized_residual"]

EXIT_OK, EXIT_ERROR, EXIT_FLAGGED = 0, 1, 2


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_ERROR, f"{self.prog}: error: {message}\n")


# -- argument types ---------------------------------------------------------

def parse_sigma(text: str) -> Fraction:
    """Exact for "p/q"; decimals snap to the nearest rational with denominator <= 1e6."""
    try:
        if "/" in text:
            val = Fraction(text)
        else:
            val = Fraction(text).limit_denominator(10**6)
    except (ValueError, ZeroDivisionError):
        raise argparse.ArgumentTypeError(f"not a number: {text!r}") from None
    if val < 0:
        raise argparse.ArgumentTypeError("must be >= 0")
    return val


def _rational(text: str) -> Fraction:
    try:
        return Fraction(text.strip())
    except (ValueError, ZeroDivisionError):
        raise argparse.ArgumentTypeError(f"not a rational number: {text!r}") from None


def _coeff_list(text: str) -> list[Fraction]:
    return [_rational(t) for t in text.split(",")]


def _sigma_list(text: str) -> list[Fraction]:
    return [parse_sigma(t) for t in text.split(",")]


def _float_list(text: str) -> list[float]:
    try:
        vals = [float(t) for t in text.split(",")]
    except ValueError:
        raise argparse.ArgumentTypeError(f"not a list of numbers: {text!r}") from None
    if any(not v > 0 for v in vals):
        raise argparse.ArgumentTypeError("values must be positive")
    return vals


def _positive(kind):
    def conv(text: str):
        try:
            v = kind(text)
        except ValueError:
            raise argparse.ArgumentTypeError(f"not a number: {text!r}") from None
        if not v > 0:
            raise argparse.ArgumentTypeError("must be positive")
        return v
    return conv


def _nonneg_float(text: str) -> float:
    try:
        v = float(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"not a number: {text!r}") from None
    if not v >= 0:
        raise argparse.ArgumentTypeError("must be >= 0")
    return v


def _grid_n(text: str) -> int:
    v = _positive(int)(text)
    if v < 64:
        raise argparse.ArgumentTypeError("grid needs at least 64 points")
    return v


# -- run specification ------------------------------------------------------

@dataclass
class RunSpec:
    subcommand: str
    system_kind: str | None = None  # "cubic" or "custom"
    sigma: Fraction | None = None
    drift: list[Fraction] | None = None
    noise_sq: list[Fraction] | None = None
    domain_halfwidth: float | None = None
    k: int = 1
    dt_mode: str = "leading"
    variant: str = "expansion"
    dt: Fraction | None = None
    T: float | None = None
    burn_in: float | None = None
    N: int = 10_000
    seed: int = 0
    x0: float = 0.0
    clip: float | None = None
    n: int | None = None
    n_per_std: int = 50
    width_stds: float = 20.0
    widths: list[float] = field(default_factory=lambda: [10.0, 20.0, 40.0, 80.0])
    sigmas: list[Fraction] | None = None
    method: str = "fpe"
    conv_eps: float = 1e-6
    output: str = "-"
    density_out: str | None = None

    def system(self, sigma: Fraction | None = None) -> ItoSystem:
        if self.system_kind == "cubic":
            return cubic_attractor(self.sigma if sigma is None else sigma)
        hw = 10.0 if self.domain_halfwidth is None else self.domain_halfwidth
        return make_system(Polynomial(self.drift), Polynomial(self.noise_sq), hw,
                           label="custom")


def _build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="momentlab",
                     description="Equilibrium moment relations for polynomial Itô SDEs.")
    sub = parser.add_subparsers(dest="subcommand", required=True, parser_class=_Parser)

    common = _Parser(add_help=False)
    common.add_argument("system", nargs="?", choices=["cubic"],
                        help="built-in system (cubic attractor); omit to give --drift/--noise-sq")
    common.add_argument("--sigma", type=parse_sigma, help="noise level, decimal or p/q")
    common.add_argument("--drift", type=_coeff_list, help="drift coefficients c0,c1,...")
    common.add_argument("--noise-sq", type=_coeff_list, help="squared-noise coefficients d0,d1,...")
    common.add_argument("--domain-halfwidth", type=_positive(float))
    common.add_argument("-o", "--output", default="-", help="output path ('-' for stdout)")

    def add(name, help_):
        return sub.add_parser(name, parents=[common], help=help_)

    p = add("derive", "print a moment relation with exact coefficients")
    p.add_argument("--k", type=_positive(int), default=1)
    p.add_argument("--dt-mode", choices=["leading", "symbolic", "full"], default="leading")
    p.add_argument("--dt", type=_rational)
    p.add_argument("--variant", choices=["expansion", "paper_general"], default="expansion")

    add("closure", "solve the k=1 relation under mu4 = 3 mu2^2")

    def sim_opts(p, T_default):
        p.add_argument("--dt", type=_rational)
        p.add_argument("--T", type=_positive(float), default=T_default)

    def mc_opts(p):
        p.add_argument("--N", type=_positive(int), default=10_000)
        p.add_argument("--seed", type=int, default=0)
        p.add_argument("--burn-in", type=_nonneg_float)
        p.add_argument("--x0", type=float, default=0.0)
        p.add_argument("--clip", type=_positive(float))

    def fpe_opts(p):
        p.add_argument("--n", type=_grid_n, help="grid points (overrides --n-per-std)")
        p.add_argument("--n-per-std", type=_positive(int), default=50)
        p.add_argument("--width-stds", type=_positive(float), default=20.0)
        p.add_argument("--conv-eps", type=_positive(float), default=1e-6)

    p = add("mc", "Euler-Maruyama ensemble estimate")
    sim_opts(p, 200.0)
    mc_opts(p)

    p = add("fpe", "Fokker-Planck equilibrium estimate")
    sim_opts(p, 100.0)
    fpe_opts(p)
    p.add_argument("--density-out", help="write x, rho columns to this path")

    p = add("sweep-sigma", "estimates, closure and verdict across sigma values")
    p.add_argument("--sigmas", type=_sigma_list, required=True)
    p.add_argument("--method", choices=["fpe", "mc"], default="fpe")
    sim_opts(p, None)
    mc_opts(p)
    fpe_opts(p)

    p = add("sweep-width", "re-solve the equilibrium on wider domains")
    sim_opts(p, 100.0)
    p.add_argument("--widths", type=_float_list, default=[10.0, 20.0, 40.0, 80.0])
    p.add_argument("--n-per-std", type=_positive(int), default=50)
    p.add_argument("--conv-eps", type=_positive(float), default=1e-6)

    p = add("check", "residuals of FPE (or MC) moments in the general-k relations")
    p.add_argument("--k", type=_positive(int), default=1)
    p.add_argument("--variant", choices=["expansion", "paper_general", "both"], default="both")
    p.add_argument("--method", choices=["fpe", "mc"], default="fpe")
    sim_opts(p, None)
    mc_opts(p)
    fpe_opts(p)
    return parser


def parse_args(argv: Sequence[str]) -> RunSpec:
    parser = _build_parser()
    ns = parser.parse_args(list(argv))
    spec = RunSpec(subcommand=ns.subcommand)
    for key, val in vars(ns).items():
        if key in ("subcommand", "system"):
            continue
        if hasattr(spec, key):
            setattr(spec, key, val)
    custom = ns.drift is not None or ns.noise_sq is not None
    if ns.system == "cubic":
        if custom:
            parser.error("argument --drift/--noise-sq: conflicts with built-in system 'cubic'")
        spec.system_kind = "cubic"
        if ns.subcommand != "sweep-sigma" and ns.sigma is None:
            parser.error("argument --sigma: required for the cubic system")
    elif custom:
        if ns.drift is None or ns.noise_sq is None:
            parser.error("argument --drift/--noise-sq: both are required for a custom system")
        if ns.subcommand == "sweep-sigma":
            parser.error("argument --sigmas: sweep-sigma needs the cubic system")
        spec.system_kind = "custom"
    else:
        parser.error("a system is required: 'cubic --sigma S' or '--drift ... --noise-sq ...'")
    if ns.subcommand == "derive" and ns.dt_mode == "full":
        if ns.dt is None:
            parser.error("argument --dt: required with --dt-mode full")
        if ns.dt <= 0:
            parser.error("argument --dt: must be positive")
    elif getattr(ns, "dt", None) is not None and ns.dt <= 0:
        parser.error("argument --dt: must be positive")
    if spec.subcommand == "mc":
        spec.method = "mc"
    if spec.T is None:
        spec.T = 200.0 if spec.method == "mc" else 100.0
    if spec.subcommand in ("mc", "sweep-sigma", "check") and spec.method == "mc":
        burn = 0.2 * spec.T if spec.burn_in is None else spec.burn_in
        if not burn < spec.T:
            parser.error("argument --burn-in: must be smaller than --T")
    return spec


# -- formatting -------------------------------------------------------------

def fmt(value) -> str:
    if value is None:
        return ""
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, Fraction):
        return str(value)
    if isinstance(value, int):
        return str(value)
    if isinstance(value, float):
        return format(value, ".17g")
    return str(value)


def _sigma_cell(system: ItoSystem):
    return system.sigma


def _estimate_row(system: ItoSystem, est: EquilibriumEstimate) -> list:
    prov = est.provenance
    if est.method == "mc":
        dt, T, n, W, trunc = prov["dt"], prov["total_time"], prov["ensemble_n"], None, None
    else:
        dt, T, n, W = prov.get("dt"), prov.get("T"), prov.get("n"), prov.get("W")
        trunc = est.truncation.get(4)
    return [_sigma_cell(system),
            est.mu(2), est.se(2), est.mu(4), est.se(4), est.mu(6), est.se(6),
            est.method, float(dt) if dt is not None else None,
            float(T) if T is not None else None, n, W, trunc, ";".join(est.flags)]


# -- subcommand bodies ------------------------------------------------------

def _threads() -> int:
    env = os.environ.get("MOMENTLAB_THREADS")
    if env:
        return max(1, int(env))
    return os.cpu_count() or 1


def _fpe_estimate(spec: RunSpec, system: ItoSystem, orders=(2, 4, 6)):
    mu2_guess = mu2_scale_guess(system, spec.T)
    n = spec.n or max(64, int(round(spec.width_stds * spec.n_per_std)) + 1)
    grid = build_grid(system, spec.width_stds, n, mu2_guess)
    dt = None if spec.dt is None else float(spec.dt)
    rho, _ = fpe_evolve(system, grid, dt, spec.T, spec.conv_eps)
    est = density_moments(rho, orders)
    est.provenance.update(W=spec.width_stds, mu2_guess=mu2_guess)
    return est, rho


def _mc_estimate(spec: RunSpec, system: ItoSystem) -> EquilibriumEstimate:
    cfg = SimConfig(dt=1e-3 if spec.dt is None else float(spec.dt), total_time=spec.T,
                    burn_in=spec.burn_in, ensemble_n=spec.N, seed=spec.seed, x0=spec.x0,
                    clip_halfwidth=spec.clip)
    return run_ensemble(system, cfg)


def _estimate(spec: RunSpec, system: ItoSystem, orders=(2, 4, 6)):
    if spec.method == "mc" or spec.subcommand == "mc":
        return _mc_estimate(spec, system)
    try:
        est, _ = _fpe_estimate(spec, system, orders)
    except FpeInstabilityError as exc:
        nan = float("nan")
        est = EquilibriumEstimate({o: (nan, 0.0) for o in orders if o % 2}, "fpe",
                                  dict(W=spec.width_stds, T=spec.T), flags=[f"unstable: {exc}"])
        for o in orders:
            if o % 2 == 0:
                est.moments[o] = (math.inf, 0.0)
    return est


def _closure_cells(system: ItoSystem):
    rel = derive_relation(system, 1)
    try:
        m2 = gaussian_closure_mu2(rel)
    except ClosureInfeasible:
        return [None, None, False]
    return [m2, 3 * m2 * m2, True]


def _run_derive(spec, out):
    system = spec.system()
    if spec.variant == "paper_general":
        rel = paper_general_relation(system, spec.k)
    else:
        rel = derive_relation(system, spec.k, spec.dt_mode, spec.dt)
    out.write(rel.to_text() + "\n")
    return EXIT_OK


def _run_closure(spec, w):
    system = spec.system()
    w.writerow(CLOSURE_COLUMNS)
    cells = _closure_cells(system)
    w.writerow([_sigma_cell(system)] + cells)
    return EXIT_OK if cells[2] else EXIT_FLAGGED


def _run_estimate(spec, w):
    system = spec.system()
    w.writerow(ESTIMATE_COLUMNS)
    if spec.subcommand == "fpe":
        try:
            est, rho = _fpe_estimate(spec, system)
        except FpeInstabilityError as exc:
            print(f"momentlab: {exc}", file=sys.stderr)
            return EXIT_ERROR
        if spec.density_out:
            with open(spec.density_out, "w", encoding="utf-8", newline="\n") as fh:
                fh.write(rho.to_text())
    else:
        est = _mc_estimate(spec, system)
    w.writerow(_estimate_row(system, est))
    return EXIT_FLAGGED if est.flags else EXIT_OK


def _run_sweep_sigma(spec, w):
    w.writerow(SWEEP_SIGMA_COLUMNS)

    def one(sigma):
        system = spec.system(sigma)
        est = _estimate(spec, system)
        verdict = classify_relation(derive_relation(system, 1)).verdict
        return _estimate_row(system, est) + _closure_cells(system) + [verdict], bool(est.flags)

    with ThreadPoolExecutor(_threads()) as pool:
        results = list(pool.map(one, spec.sigmas))
    flagged = False
    for row, f in results:
        w.writerow(row)
        flagged = flagged or f or row[-2] is False
    return EXIT_FLAGGED if flagged else EXIT_OK


def _run_sweep_width(spec, w):
    system = spec.system()
    dt = None if spec.dt is None else float(spec.dt)
    rows = width_sweep(system, spec.widths, spec.n_per_std, dt, spec.T, conv_eps=spec.conv_eps)
    w.writerow(SWEEP_WIDTH_COLUMNS)
    status = EXIT_OK
    for r in rows:
        w.writerow([_sigma_cell(system), r.W, r.mu2, r.mu4, r.truncation])
        if r.error:
            print(f"momentlab: W={r.W}: {r.error}", file=sys.stderr)
            status = EXIT_ERROR
        elif not r.converged and status == EXIT_OK:
            status = EXIT_FLAGGED
    return status


def _run_check(spec, w):
    system = spec.system()
    rels: list[tuple[str, MomentRelation]] = []
    for k in range(1, spec.k + 1):
        if spec.variant in ("expansion", "both"):
            rels.append(("expansion", derive_relation(system, k)))
        if spec.variant in ("paper_general", "both"):
            rels.append(("paper_general", paper_general_relation(system, k)))
    orders = sorted({o for _, r in rels for o in r.orders if o > 0} | {2, 4, 6})
    est = _estimate(spec, system, tuple(orders))
    w.writerow(CHECK_COLUMNS)
    for name, rel in rels:
        try:
            raw, norm = relation_residual(rel, est)
        except KeyError as exc:
            print(f"momentlab: {exc.args[0]}", file=sys.stderr)
            return EXIT_ERROR
        w.writerow([name, rel.k, raw, norm])
    if est.flags:
        print(f"momentlab: moment estimate flagged: {'; '.join(est.flags)}", file=sys.stderr)
        return EXIT_FLAGGED
    return EXIT_OK


_RUNNERS = {
    "closure": _run_closure,
    "mc": _run_estimate,
    "fpe": _run_estimate,
    "sweep-sigma": _run_sweep_sigma,
    "sweep-width": _run_sweep_width,
    "check": _run_check,
}


def run_subcommand(spec: RunSpec) -> int:
    buf = io.StringIO()
    try:
        if spec.subcommand == "derive":
            status = _run_derive(spec, buf)
        else:
            writer = _RowWriter(csv.writer(buf, lineterminator="\n"))
            status = _RUNNERS[spec.subcommand](spec, writer)
    except (ValueError, KeyError) as exc:
        print(f"momentlab: error: {exc}", file=sys.stderr)
        return EXIT_ERROR
    text = buf.getvalue()
    if spec.output == "-":
        sys.stdout.write(text)
        sys.stdout.flush()
    else:
        with open(spec.output, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(text)
    return status


class _RowWriter:
    def __init__(self, writer):
        self._w = writer

    def writerow(self, row):
        self._w.writerow([c if isinstance(c, str) else fmt(c) for c in row])


def main(argv: Sequence[str] | None = None) -> int:
    spec = parse_args(sys.argv[1:] if argv is None else argv)
    return run_subcommand(spec)


if __name__ == "__main__":
    sys.exit(main())
