"""
Command-line front end.

Commands:
    analyze    Analytical FSL / SSL (or combined) R-parameter matrix
    extract    R-parameters measured from transient simulation
    transient  Raw transient trace of a scenario
    covert     Covert-channel transmission or sweep

Exit codes: 0 success, 2 bad input (missing file, scenario, spec or channel
errors), 3 simulation did not converge or diverged, 1 other failures.

Tables and reports go to stdout; logs go to stderr. Output files are
written under --out with fixed names, so reruns are byte-identical.
"""

import argparse
import logging
import sys
import uuid
from dataclasses import replace
from pathlib import Path
from typing import Callable, Optional, Sequence

import numpy as np

from scport.analytical import (
    Regime,
    RMatrix,
    closed_form_check,
    combined_estimate,
    r_matrix,
    write_matrix_csv,
)
from scport.circuit import (
    ChannelError,
    ConfigFileError,
    DivergenceError,
    NonConvergenceError,
    ScportError,
    SpecError,
    build_ladder,
)
from scport.config import config
from scport.config_file import Scenario, format_scenario, load_scenario
from scport.covert import (
    decode,
    format_report,
    format_sweep,
    sweep_bit_rate,
    sweep_offchip,
    sweep_switching_frequency,
    transmit,
    write_sweep_csv,
)
from scport.engine import (
    Simulator,
    Window,
    periodic_average,
    resistive_loads,
    run_transient,
    write_trace_csv,
)
from scport.extraction import (
    ExtractionMode,
    extract_r_matrix,
    extract_with_resistors,
    write_provenance,
)
from scport.logging_config import run_id_var, setup_logging
from scport.units import format_si, parse_si, parse_si_list

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_FAILURE = 1
EXIT_BAD_INPUT = 2
EXIT_NO_CONVERGENCE = 3


# =============================================================================
# Formatting
# =============================================================================

def format_matrix(title: str, matrix: RMatrix, scenario: Scenario) -> str:
    """Matrix table in mΩ with V_TR underneath."""
    spec = scenario.spec
    n = matrix.order
    lines = [
        "=" * 50,
        title,
        "=" * 50,
        f"Stages: {n}   f_sw: {format_si(spec.f_sw, 'Hz')}   "
        f"R_off: {format_si(spec.r_offchip, 'Ω')}",
        "      " + "".join(f"{'port ' + str(j):>12}" for j in range(1, n + 1)) + "   (mΩ)",
    ]
    for i in range(n):
        lines.append(f"  {i + 1:<4}" + "".join(f"{v * 1e3:12.4f}" for v in matrix.values[i]))
    lines.append("V_TR: " + "  ".join(f"{v:.6f}" for v in matrix.v_tr) + " V")
    return "\n".join(lines)


def format_comparison(measured: RMatrix, reference: RMatrix) -> str:
    """Side-by-side relative error of a measured matrix against a reference."""
    n = measured.order
    lines = ["", "RELATIVE ERROR vs analytical FSL:"]
    with np.errstate(divide="ignore", invalid="ignore"):
        rel = (measured.values - reference.values) / np.abs(reference.values)
    for i in range(n):
        lines.append(f"  {i + 1:<4}" + "".join(f"{v:+12.2%}" for v in rel[i]))
    return "\n".join(lines)


# =============================================================================
# Commands
# =============================================================================

def _out_dir(args: argparse.Namespace) -> Path:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def cmd_analyze(args: argparse.Namespace) -> int:
    scenario = load_scenario(args.config)
    spec = scenario.spec
    out = _out_dir(args)

    if args.regime == "combined":
        matrix = combined_estimate(spec)
        title = "R-PARAMETERS (FSL + SSL, approximate)"
        status = "n/a (approximate estimate)"
    else:
        regime = Regime(args.regime)
        matrix = r_matrix(spec, regime)
        title = f"R-PARAMETERS ({regime.value.upper()})"
        check = closed_form_check(spec, matrix, regime)
        status = {True: "match", False: "MISMATCH", None: "n/a"}[check]

    write_matrix_csv(matrix, out / f"r_matrix_{args.regime}.csv")
    print(format_matrix(title, matrix, scenario))
    print(f"Closed form: {status}")
    return EXIT_OK


def cmd_extract(args: argparse.Namespace) -> int:
    scenario = load_scenario(args.config)
    spec = scenario.spec
    if args.frequency is not None:
        spec = spec.replace(f_sw=parse_si(args.frequency, "Hz"))
    settings = scenario.settings
    if args.i_test is not None:
        settings = replace(settings, i_test=parse_si(args.i_test, "A"))
    mode = ExtractionMode(args.mode) if args.mode else scenario.extraction.mode
    out = _out_dir(args)

    network = build_ladder(spec)
    if mode == ExtractionMode.RESISTOR:
        result = extract_with_resistors(
            network, scenario.extraction.r_fixed, scenario.extraction.r_open, settings
        )
    else:
        result = extract_r_matrix(network, settings=settings, jobs=args.jobs)

    write_matrix_csv(result.matrix, out / "r_matrix_extracted.csv")
    write_provenance(result.provenance, out / "r_matrix_extracted.provenance.json")

    analytical = r_matrix(spec, Regime.FSL)
    shown = replace(scenario, spec=spec, settings=settings)
    print(format_matrix(f"EXTRACTED R-PARAMETERS ({mode.value} mode)", result.matrix, shown))
    print()
    print(format_matrix("ANALYTICAL FSL", analytical, shown))
    print(format_comparison(result.matrix, analytical))
    if result.flagged:
        print(f"\nFlagged columns (nonlinear region): {list(result.provenance.flagged_columns)}")
    return EXIT_OK


def cmd_transient(args: argparse.Namespace) -> int:
    scenario = load_scenario(args.config)
    out = _out_dir(args)
    network = build_ladder(scenario.spec)

    loads = scenario.loads
    if args.loads:
        ohms = [
            None if item.strip().lower() in ("open", "inf") else parse_si(item, "Ω")
            for item in args.loads.split(",")
        ]
        loads = resistive_loads(ohms)

    initial = None
    if args.zero_init:
        initial = Simulator(network, scenario.policy).initial_state(zero=True)

    duration = parse_si(args.duration, "s")
    trace = run_transient(network, loads, duration, scenario.policy, initial=initial)
    write_trace_csv(trace, out / "trace.csv")

    lines = [
        "=" * 50,
        "TRANSIENT RUN",
        "=" * 50,
        f"Duration: {format_si(duration, 's')}   Steps: {trace.n_samples}",
    ]
    periods = trace.n_samples // trace.samples_per_period
    if periods:
        last = periodic_average(trace, Window.tail(trace, 1))
        lines.append("Last-period averages:")
        for name in trace.names:
            if name.startswith("V_OUT") or name.startswith("V_IN"):
                lines.append(f"  {name:8} {last[name]:.6f} V")
    print("\n".join(lines))
    return EXIT_OK


def cmd_covert(args: argparse.Namespace) -> int:
    scenario = load_scenario(args.config)
    spec = scenario.spec
    cfg = scenario.channel
    if args.bits is not None:
        cfg = cfg.replace(bits=args.bits)
    if args.rate is not None:
        cfg = cfg.replace(bit_period=1.0 / parse_si(args.rate))
    if args.source is not None:
        cfg = cfg.replace(source_stage=args.source)
    if args.sinks is not None:
        cfg = cfg.replace(sink_stages=tuple(int(s) for s in args.sinks.split(",")))
    resolutions = (
        tuple(parse_si_list(args.resolution)) if args.resolution else scenario.sweep.resolutions
    )
    out = _out_dir(args)

    resolved = replace(scenario, channel=cfg)
    echo = "# resolved configuration\n" + format_scenario(resolved)

    if args.sweep is None:
        trace, report = transmit(build_ladder(spec), cfg, scenario.policy)
        threshold = parse_si(args.threshold, "V") if args.threshold else None
        resolution = resolutions[0] if args.resolution else None
        report = report.with_decode(decode(trace, cfg, threshold, resolution))
        body = format_report(report)
    else:
        sweep = scenario.sweep
        if args.sweep == "freq":
            freqs = parse_si_list(args.frequencies) if args.frequencies else sweep.frequencies
            result = sweep_switching_frequency(spec, cfg, freqs, scenario.policy, args.jobs)
        elif args.sweep == "rate":
            rates = parse_si_list(args.rates) if args.rates else sweep.rates
            result = sweep_bit_rate(spec, cfg, rates, resolutions, scenario.policy, args.jobs)
        else:
            r_offs = parse_si_list(args.r_offchip) if args.r_offchip else sweep.r_offchip
            result = sweep_offchip(spec, cfg, r_offs, scenario.policy, args.jobs)
        write_sweep_csv(result, out / f"sweep_{args.sweep}.csv")
        body = format_sweep(result)

    (out / "covert_report.txt").write_text(echo + "\n" + body + "\n", encoding="utf-8")
    print(echo)
    print(body)
    return EXIT_OK


# =============================================================================
# Parser
# =============================================================================

def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--out", default=".", help="Output directory (default: .)")
    common.add_argument(
        "--jobs", type=int, default=config.JOBS,
        help=f"Worker processes for sweep points (default: {config.JOBS})",
    )
    common.add_argument(
        "--seed", type=int, default=None,
        help="Reserved; simulations are deterministic",
    )
    common.add_argument("--log-level", default=None, help="Override LOG_LEVEL")

    parser = argparse.ArgumentParser(
        prog="scport",
        description="Switched-capacitor converter port coupling and covert-channel analysis",
        formatter_class=argparse.RawDescriptionHelpFormatter,
        epilog="""
Examples:
  scport analyze --fsl reference.cfg                 # closed-form FSL matrix
  scport analyze --ssl reference.cfg                 # SSL matrix, diag 1/(4Cf)
  scport extract reference.cfg --frequency 10MHz     # simulated extraction
  scport extract reference.cfg --mode resistor       # resistor-emulation protocol
  scport transient reference.cfg --duration 2us --loads 100,100,100
  scport covert reference.cfg --bits 1010 --rate 40k
  scport covert reference.cfg --sweep freq --out results/
  scport covert reference.cfg --sweep rate --resolution 2mV --source 2 --sinks 1,3
""",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    analyze = sub.add_parser("analyze", parents=[common], help="Analytical R-parameters")
    regime = analyze.add_mutually_exclusive_group()
    regime.add_argument("--fsl", dest="regime", action="store_const", const="fsl")
    regime.add_argument("--ssl", dest="regime", action="store_const", const="ssl")
    regime.add_argument("--combined", dest="regime", action="store_const", const="combined")
    analyze.add_argument("config", help="Scenario file")
    analyze.set_defaults(func=cmd_analyze, regime="fsl")

    extract = sub.add_parser("extract", parents=[common], help="Simulated R-parameters")
    extract.add_argument("config", help="Scenario file")
    extract.add_argument("--frequency", help="Override f_sw, e.g. 100kHz")
    extract.add_argument("--mode", choices=[m.value for m in ExtractionMode])
    extract.add_argument("--i-test", help="Override the test current, e.g. 10mA")
    extract.set_defaults(func=cmd_extract)

    transient = sub.add_parser("transient", parents=[common], help="Write a transient trace")
    transient.add_argument("config", help="Scenario file")
    transient.add_argument("--duration", required=True, help="Simulated time, e.g. 5us")
    transient.add_argument("--loads", help="Comma list of load ohms or 'open' per stage")
    transient.add_argument("--zero-init", action="store_true", help="Start with empty capacitors")
    transient.set_defaults(func=cmd_transient)

    covert = sub.add_parser("covert", parents=[common], help="Covert-channel experiments")
    covert.add_argument("config", help="Scenario file")
    covert.add_argument("--bits", help="Bit pattern, e.g. 1010")
    covert.add_argument("--rate", help="Bit rate, e.g. 40k")
    covert.add_argument("--source", type=int, help="Transmitting stage (1-based)")
    covert.add_argument("--sinks", help="Receiving stages, e.g. 2,3")
    covert.add_argument("--sweep", choices=["freq", "rate", "offchip"])
    covert.add_argument("--resolution", help="Sensor resolution(s), e.g. 2mV or 1m,2m")
    covert.add_argument("--threshold", help="Decision threshold, e.g. 0.4995V")
    covert.add_argument("--frequencies", help="Frequencies for --sweep freq")
    covert.add_argument("--rates", help="Bit rates for --sweep rate")
    covert.add_argument("--r-offchip", help="Off-chip resistances for --sweep offchip")
    covert.set_defaults(func=cmd_covert)

    return parser


def _init_error_tracking() -> None:
    if not config.SENTRY_DSN:
        return
    try:
        import sentry_sdk

        sentry_sdk.init(dsn=config.SENTRY_DSN, environment=config.ENVIRONMENT)
        logger.info("Sentry error tracking initialized")
    except ImportError:
        logger.warning("sentry-sdk not installed, error tracking disabled")


def main(argv: Optional[Sequence[str]] = None) -> int:
    """Main entry point; returns the process exit code."""
    parser = build_parser()
    args = parser.parse_args(argv)

    setup_logging(level=args.log_level or config.LOG_LEVEL, environment=config.ENVIRONMENT)
    _init_error_tracking()
    run_id_var.set(uuid.uuid4().hex)
    if args.seed is not None:
        logger.debug(f"--seed {args.seed} ignored: simulations are deterministic")

    func: Callable[[argparse.Namespace], int] = args.func
    try:
        return func(args)
    except FileNotFoundError as e:
        logger.error(f"File not found: {e.filename}")
        print(f"error: file not found: {e.filename}", file=sys.stderr)
        return EXIT_BAD_INPUT
    except (ConfigFileError, SpecError, ChannelError, ValueError) as e:
        logger.error(str(e))
        print(f"error: {e}", file=sys.stderr)
        return EXIT_BAD_INPUT
    except (NonConvergenceError, DivergenceError) as e:
        logger.error(str(e))
        print(f"error: {e}", file=sys.stderr)
        return EXIT_NO_CONVERGENCE
    except ScportError as e:
        logger.error(str(e))
        print(f"error: {e}", file=sys.stderr)
        return EXIT_FAILURE


if __name__ == "__main__":
    sys.exit(main())
