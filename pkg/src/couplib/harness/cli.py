"""Command-line harness: run the benchmark cases and convergence sweeps.

Subcommands:
  run-oscillator   one partitioned-oscillator run, one CSV row
  run-heat         one partitioned heat-equation run, one CSV row
  sweep            several runs along one axis, CSV table plus fitted order

Exit codes: 0 success, 2 configuration error, 3 non-convergence with
--strict (a window hit max-iterations without meeting the measures).
"""

from __future__ import annotations

import argparse
import json
import logging
import sys

from ..errors import ConfigurationError, CouplingError
from . import runner
from .runner import CaseConfig, CaseResult

log = logging.getLogger(__name__)


def _add_common_flags(p: argparse.ArgumentParser, case: str) -> None:
    p.add_argument("--config", default=None,
                   help="coupling configuration JSON; overrides the generated one")
    p.add_argument("--window", type=float, default=0.1 if case == "oscillator" else 0.2,
                   help="time window size")
    p.add_argument("--dt-a", type=float, default=None,
                   help="participant A step size (default window/5)")
    p.add_argument("--dt-b", type=float, default=None,
                   help="participant B step size (default window/100 for the "
                        "oscillator, window/5 for heat)")
    p.add_argument("--degree", type=int, choices=[0, 1, 2, 3, 5], default=3,
                   help="waveform interpolation degree")
    p.add_argument("--substeps", choices=["on", "off"], default="on",
                   help="exchange all substep data or only window-end values")
    p.add_argument("--scheme", default="serial-implicit",
                   choices=["serial-implicit", "serial-explicit",
                            "parallel-implicit", "parallel-explicit"])
    p.add_argument("--acceleration", default="none",
                   choices=["none", "constant", "iqn-ils-full", "iqn-ils-reduced"])
    p.add_argument("--omega", type=float, default=0.5,
                   help="under-relaxation factor")
    p.add_argument("--limit", type=float, default=None,
                   help="relative convergence limit (case default when omitted)")
    p.add_argument("--max-iterations", type=int, default=200)
    p.add_argument("--integrator-a", default=None,
                   help="A-side integrator (rk4, generalized-alpha, "
                        "implicit-euler, crank-nicolson, gauss-legendre-2)")
    p.add_argument("--integrator-b", default=None, help="B-side integrator")
    p.add_argument("--rho-inf", type=float, default=0.9,
                   help="generalized-alpha spectral radius")
    p.add_argument("--t-end", type=float, default=1.0)
    p.add_argument("--comm", choices=["inprocess", "tcp"], default="inprocess")
    p.add_argument("--tcp-address", default="127.0.0.1:0", metavar="HOST:PORT")
    p.add_argument("--role", choices=["both", "A", "B"], default="both",
                   help="run both participants or a single one (tcp mode)")
    p.add_argument("--result-json", default=None,
                   help="where a single-role run writes its outcome")
    p.add_argument("--out", default=None, help="CSV output path")
    p.add_argument("--no-wall-time", action="store_true",
                   help="write 0.0 as wall time for byte-reproducible CSVs")
    p.add_argument("--strict", action="store_true",
                   help="exit 3 when any window failed to converge")
    if case == "heat":
        p.add_argument("--h", type=float, default=0.1, help="vertex spacing")


def _case_config(args, case: str) -> CaseConfig:
    dt_a = args.dt_a if args.dt_a is not None else args.window / 5.0
    if args.dt_b is not None:
        dt_b = args.dt_b
    else:
        dt_b = args.window / (100.0 if case == "oscillator" else 5.0)
    return CaseConfig(
        case=case,
        window=args.window,
        dt_a=dt_a,
        dt_b=dt_b,
        degree=args.degree,
        substeps=args.substeps == "on",
        scheme=args.scheme,
        acceleration=args.acceleration,
        omega=args.omega,
        limit=args.limit,
        max_iterations=args.max_iterations,
        integrator_a=args.integrator_a or "",
        integrator_b=args.integrator_b or "",
        rho_inf=args.rho_inf,
        t_end=args.t_end,
        h=getattr(args, "h", 0.1),
        comm_mode=args.comm,
        tcp_address=args.tcp_address,
        record_wall_time=not args.no_wall_time,
    ).resolved()


class _NonConvergenceCounter(logging.Handler):
    def __init__(self):
        super().__init__()
        self.count = 0

    def emit(self, record):
        if "did not converge" in record.getMessage():
            self.count += 1


def _emit(results: list[CaseResult], out_path, extra_lines=()) -> None:
    lines = [runner.CSV_HEADER] + [r.csv_row() for r in results]
    text = "\n".join(lines) + "\n"
    if out_path:
        with open(out_path, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(text)
    sys.stdout.write(text)
    for line in extra_lines:
        sys.stdout.write(line + "\n")


def _run_single(args, case: str) -> int:
    cfg = _case_config(args, case)
    counter = _NonConvergenceCounter()
    logging.getLogger("couplib").addHandler(counter)
    try:
        if args.role in ("A", "B"):
            if not args.result_json:
                raise ConfigurationError("--role A|B requires --result-json")
            doc = None
            if args.config:
                with open(args.config, "r", encoding="utf-8") as fh:
                    doc = json.load(fh)
            runner.run_role(cfg, args.role, args.result_json, coupling_doc=doc)
            return 0
        doc = None
        if args.config:
            with open(args.config, "r", encoding="utf-8") as fh:
                doc = json.load(fh)
        result = runner.run_case(cfg, coupling_doc=doc)
        _emit([result], args.out)
    finally:
        logging.getLogger("couplib").removeHandler(counter)
    if args.strict and counter.count:
        log.error("%d windows failed to converge", counter.count)
        return 3
    return 0


def _run_sweep(args) -> int:
    cfg = _case_config(args, args.case)
    values = [float(v) for v in args.values.split(",")]
    counter = _NonConvergenceCounter()
    logging.getLogger("couplib").addHandler(counter)
    try:
        results, order = runner.sweep(cfg, args.axis, values)
    finally:
        logging.getLogger("couplib").removeHandler(counter)
    _emit(results, args.out, extra_lines=[f"# observed_order,{order!r}"])
    if args.strict and counter.count:
        return 3
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="couplib",
        description="Multi-rate waveform-coupling benchmark harness",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_osc = sub.add_parser("run-oscillator", help="partitioned two-mass oscillator")
    _add_common_flags(p_osc, "oscillator")

    p_heat = sub.add_parser("run-heat", help="partitioned 1D heat equation")
    _add_common_flags(p_heat, "heat")

    p_sweep = sub.add_parser("sweep", help="convergence study along one axis")
    p_sweep.add_argument("--case", choices=["oscillator", "heat"], required=True)
    p_sweep.add_argument("--axis", choices=["window", "dt_A", "dt_B", "degree"],
                         default="window")
    p_sweep.add_argument("--values", required=True,
                         help="comma-separated sweep values")
    _add_common_flags(p_sweep, "heat")
    return parser


def main(argv=None) -> int:
    logging.basicConfig(level=logging.WARNING, stream=sys.stderr,
                        format="%(levelname)s %(name)s: %(message)s")
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        if args.command == "run-oscillator":
            return _run_single(args, "oscillator")
        if args.command == "run-heat":
            return _run_single(args, "heat")
        return _run_sweep(args)
    except ConfigurationError as exc:
        log.error("configuration error: %s", exc)
        return 2
    except CouplingError as exc:
        log.error("run failed: %s", exc)
        return 1


if __name__ == "__main__":
    sys.exit(main())
