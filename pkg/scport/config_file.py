"""
Scenario files.

Flat `key = value` text with `[section]` headers and `#` comments. Lists
are comma-separated, brackets optional. Every number accepts SI suffixes.

Example:
    [converter]
    n_stages = 3
    v_in = 1V
    r_switch = 0.1
    c_fly = 1uF            # broadcast to every stage
    c_out = [10u, 10u, 10u]
    r_par = 10m
    f_sw = 10MHz

    [channel]
    source = 1
    sinks = 2, 3
    rate = 40k
    bits = 1010

Sections: converter, simulation, loads, extraction, channel, sweep. Any
section or key may be omitted; missing converter keys fall back to the
reference case study.
"""

import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Callable, Optional, Union

from scport.circuit import ConfigFileError, ConverterSpec, SpecError, ensure_valid
from scport.config import config
from scport.constants import DEFAULT_C_PARASITIC
from scport.covert import ChannelConfig, ProbeNode
from scport.engine import Loads, StepPolicy, resistive_loads
from scport.extraction import ExtractionMode, MeasurementSettings
from scport.units import format_si, parse_si, parse_si_list

logger = logging.getLogger(__name__)

DEFAULT_FREQUENCIES = (100e3, 200e3, 500e3, 1e6, 2e6, 5e6, 10e6)
DEFAULT_RATES = (20e3, 40e3, 60e3, 80e3, 100e3, 150e3, 200e3, 300e3, 400e3)
DEFAULT_RESOLUTIONS = (2e-3,)
DEFAULT_R_OFFCHIP = (0.0, 0.025, 0.05, 0.075, 0.1)

SECTIONS: dict[str, tuple[str, ...]] = {
    "converter": (
        "n_stages", "v_in", "r_switch", "c_fly", "c_out", "r_par", "r_tap",
        "r_offchip", "f_sw", "dead_time_fraction", "c_parasitic",
    ),
    "simulation": ("steps_per_period", "tolerance", "max_periods", "window_periods"),
    "loads": ("resistance",),
    "extraction": ("mode", "i_test", "r_fixed", "r_open"),
    "channel": (
        "source", "sinks", "r_heavy", "r_light", "idle_load", "bit_period", "rate",
        "bits", "probes", "warmup_bits", "settle_fraction",
    ),
    "sweep": ("frequencies", "rates", "resolutions", "r_offchip"),
}


@dataclass(frozen=True)
class ExtractionOptions:
    mode: ExtractionMode = ExtractionMode.CURRENT
    r_fixed: float = 50.0
    r_open: float = 1e6


@dataclass(frozen=True)
class SweepOptions:
    frequencies: tuple[float, ...] = DEFAULT_FREQUENCIES
    rates: tuple[float, ...] = DEFAULT_RATES
    resolutions: tuple[float, ...] = DEFAULT_RESOLUTIONS
    r_offchip: tuple[float, ...] = DEFAULT_R_OFFCHIP


@dataclass(frozen=True)
class Scenario:
    """Everything a command needs, resolved from one scenario file."""
    spec: ConverterSpec
    settings: MeasurementSettings
    loads: Loads
    load_ohms: tuple[Optional[float], ...]
    extraction: ExtractionOptions
    channel: ChannelConfig
    sweep: SweepOptions = field(default_factory=SweepOptions)
    path: str = ""

    @property
    def policy(self) -> StepPolicy:
        return self.settings.policy


# =============================================================================
# Reading
# =============================================================================

Entry = tuple[str, int]  # raw value, line number


def read_sections(text: str, path: str = "") -> dict[str, dict[str, Entry]]:
    """Split scenario text into {section: {key: (value, lineno)}}."""
    sections: dict[str, dict[str, Entry]] = {}
    current: Optional[str] = None
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if line.startswith("[") and line.endswith("]"):
            current = line[1:-1].strip().lower()
            if current not in SECTIONS:
                raise ConfigFileError(f"unknown section [{current}]", lineno, path)
            sections.setdefault(current, {})
            continue
        if "=" not in line:
            raise ConfigFileError(f"expected 'key = value', got {line!r}", lineno, path)
        if current is None:
            raise ConfigFileError("key outside of any [section]", lineno, path)
        key, _, value = line.partition("=")
        key = key.strip().lower()
        if key not in SECTIONS[current]:
            raise ConfigFileError(f"unknown key '{key}' in [{current}]", lineno, path)
        if key in sections[current]:
            raise ConfigFileError(f"duplicate key '{key}' in [{current}]", lineno, path)
        sections[current][key] = (value.strip(), lineno)
    return sections


class _Section:
    """Typed accessors over one section that report the offending line."""

    def __init__(self, name: str, entries: dict[str, Entry], path: str):
        self.name = name
        self.entries = entries
        self.path = path

    def lineno(self, key: str) -> Optional[int]:
        entry = self.entries.get(key)
        return entry[1] if entry else None

    def convert(self, key: str, default: Any, convert: Callable[[str], Any]) -> Any:
        if key not in self.entries:
            return default
        raw, lineno = self.entries[key]
        try:
            return convert(raw)
        except ValueError as e:
            raise ConfigFileError(f"[{self.name}] {key}: {e}", lineno, self.path) from e

    def number(self, key: str, default: Any) -> Any:
        return self.convert(key, default, parse_si)

    def integer(self, key: str, default: Any) -> Any:
        def convert(raw: str) -> int:
            value = parse_si(raw)
            if value != int(value):
                raise ValueError(f"expected an integer, got {raw!r}")
            return int(value)
        return self.convert(key, default, convert)

    def numbers(self, key: str, default: Any) -> Any:
        def convert(raw: str) -> Any:
            values = parse_si_list(raw)
            if not values:
                raise ValueError("empty list")
            return values[0] if len(values) == 1 else tuple(values)
        return self.convert(key, default, convert)

    def number_list(self, key: str, default: Any) -> Any:
        return self.convert(key, default, lambda raw: tuple(parse_si_list(raw)))

    def text(self, key: str, default: Any) -> Any:
        return self.convert(key, default, lambda raw: raw.strip())


def _parse_ohms(raw: str) -> tuple[Optional[float], ...]:
    body = raw.strip().strip("[]")
    values: list[Optional[float]] = []
    for item in body.split(","):
        item = item.strip()
        if not item:
            continue
        values.append(None if item.lower() in ("open", "inf", "none") else parse_si(item))
    return tuple(values)


def _parse_bits(raw: str) -> str:
    bits = raw.strip().strip("'\"")
    if set(bits) - {"0", "1"}:
        raise ValueError(f"bits must contain only 0 and 1, got {raw!r}")
    return bits


def _parse_probes(raw: str) -> tuple[ProbeNode, ...]:
    names = [p.strip().lower() for p in raw.strip("[]").split(",") if p.strip()]
    return tuple(ProbeNode(name) for name in names)


def parse_scenario(text: str, path: str = "") -> Scenario:
    """
    Build a Scenario from scenario-file text.

    Raises:
        ConfigFileError: On syntax errors, bad values or an invalid converter,
            with the line number of the offending key when known.
    """
    sections = read_sections(text, path)

    def section(name: str) -> _Section:
        return _Section(name, sections.get(name, {}), path)

    conv = section("converter")
    ref = config.reference_case
    n = conv.integer("n_stages", ref.n_stages)
    spec = ConverterSpec(
        n_stages=n,
        v_in=conv.number("v_in", ref.v_in),
        r_switch=conv.number("r_switch", ref.r_switch),
        c_fly=conv.numbers("c_fly", ref.c_fly),
        c_out=conv.numbers("c_out", ref.c_out),
        r_par=conv.numbers("r_par", ref.r_par),
        r_tap=conv.numbers("r_tap", None),
        r_offchip=conv.number("r_offchip", 0.0),
        f_sw=conv.number("f_sw", ref.f_sw),
        dead_time_fraction=conv.number("dead_time_fraction", config.DEAD_TIME_FRACTION),
        c_parasitic=conv.number("c_parasitic", DEFAULT_C_PARASITIC),
    )
    try:
        ensure_valid(spec)
    except SpecError as e:
        first = e.problems[0].split(":", 1)[0].split("[", 1)[0]
        raise ConfigFileError(str(e), conv.lineno(first), path) from e

    sim = section("simulation")
    try:
        policy = StepPolicy(sim.integer("steps_per_period", config.STEPS_PER_PERIOD))
    except ValueError as e:
        raise ConfigFileError(str(e), sim.lineno("steps_per_period"), path) from e

    ext = section("extraction")
    settings = MeasurementSettings(
        i_test=ext.number("i_test", config.I_TEST),
        tolerance=sim.number("tolerance", config.STEADY_TOLERANCE),
        window_periods=sim.integer("window_periods", config.WINDOW_PERIODS),
        max_periods=sim.integer("max_periods", config.MAX_PERIODS),
        policy=policy,
    )
    try:
        mode = ExtractionMode(ext.text("mode", "current").lower())
    except ValueError as e:
        raise ConfigFileError(f"[extraction] mode: {e}", ext.lineno("mode"), path) from e
    extraction = ExtractionOptions(
        mode=mode,
        r_fixed=ext.number("r_fixed", 50.0),
        r_open=ext.number("r_open", 1e6),
    )

    load_section = section("loads")
    load_ohms = load_section.convert("resistance", (None,) * n, _parse_ohms)
    if len(load_ohms) == 1 and n > 1:
        load_ohms = load_ohms * n
    if len(load_ohms) != n:
        raise ConfigFileError(
            f"[loads] resistance: expected {n} entries, got {len(load_ohms)}",
            load_section.lineno("resistance"),
            path,
        )

    chan = section("channel")
    defaults = ChannelConfig()
    bit_period = chan.number("bit_period", None)
    rate = chan.number("rate", None)
    if bit_period is not None and rate is not None:
        raise ConfigFileError("[channel] give either bit_period or rate", chan.lineno("rate"), path)
    if rate is not None:
        bit_period = 1.0 / rate
    sinks = chan.number_list("sinks", defaults.sink_stages)
    channel = ChannelConfig(
        source_stage=chan.integer("source", defaults.source_stage),
        sink_stages=tuple(int(s) for s in sinks),
        r_heavy=chan.number("r_heavy", defaults.r_heavy),
        r_light=chan.number("r_light", defaults.r_light),
        idle_load=chan.number("idle_load", defaults.idle_load),
        bit_period=defaults.bit_period if bit_period is None else bit_period,
        bits=chan.convert("bits", defaults.bits, _parse_bits),
        probes=chan.convert("probes", defaults.probes, _parse_probes),
        warmup_bits=chan.integer("warmup_bits", defaults.warmup_bits),
        settle_fraction=chan.number("settle_fraction", defaults.settle_fraction),
    )

    sw = section("sweep")
    sweep = SweepOptions(
        frequencies=sw.number_list("frequencies", DEFAULT_FREQUENCIES),
        rates=sw.number_list("rates", DEFAULT_RATES),
        resolutions=sw.number_list("resolutions", DEFAULT_RESOLUTIONS),
        r_offchip=sw.number_list("r_offchip", DEFAULT_R_OFFCHIP),
    )

    logger.debug(f"Loaded scenario {path or '<text>'}: {n} stages at {format_si(spec.f_sw, 'Hz')}")
    return Scenario(
        spec=spec,
        settings=settings,
        loads=resistive_loads(load_ohms),
        load_ohms=load_ohms,
        extraction=extraction,
        channel=channel,
        sweep=sweep,
        path=path,
    )


def load_scenario(path: Union[str, Path]) -> Scenario:
    """
    Read a scenario file.

    Raises:
        FileNotFoundError: If the file does not exist.
        ConfigFileError: If it cannot be parsed.
    """
    path = Path(path)
    return parse_scenario(path.read_text(encoding="utf-8"), str(path))


# =============================================================================
# Writing
# =============================================================================

def _fmt_list(values: Any, unit: str = "") -> str:
    return ", ".join(format_si(float(v), unit) for v in values)


def format_scenario(scenario: Scenario) -> str:
    """Resolved scenario in scenario-file syntax; parses back to the same values."""
    spec = scenario.spec
    s = scenario.settings
    ch = scenario.channel
    sw = scenario.sweep
    ohms = ", ".join("open" if r is None else format_si(r, "Ω") for r in scenario.load_ohms)
    lines = [
        "[converter]",
        f"n_stages = {spec.n_stages}",
        f"v_in = {format_si(spec.v_in, 'V')}",
        f"r_switch = {format_si(spec.r_switch, 'Ω')}",
        f"c_fly = {_fmt_list(spec.c_fly, 'F')}",
        f"c_out = {_fmt_list(spec.c_out, 'F')}",
        f"r_par = {_fmt_list(spec.r_par, 'Ω')}",
    ]
    if spec.r_tap is not None:
        lines.append(f"r_tap = {_fmt_list(spec.r_tap, 'Ω')}")
    lines += [
        f"r_offchip = {format_si(spec.r_offchip, 'Ω')}",
        f"f_sw = {format_si(spec.f_sw, 'Hz')}",
        f"dead_time_fraction = {format_si(spec.dead_time_fraction)}",
        f"c_parasitic = {format_si(spec.c_parasitic, 'F')}",
        "",
        "[simulation]",
        f"steps_per_period = {s.policy.steps_per_period}",
        f"tolerance = {format_si(s.tolerance, 'V')}",
        f"max_periods = {s.max_periods}",
        f"window_periods = {s.window_periods}",
        "",
        "[loads]",
        f"resistance = {ohms}",
        "",
        "[extraction]",
        f"mode = {scenario.extraction.mode.value}",
        f"i_test = {format_si(s.i_test, 'A')}",
        f"r_fixed = {format_si(scenario.extraction.r_fixed, 'Ω')}",
        f"r_open = {format_si(scenario.extraction.r_open, 'Ω')}",
        "",
        "[channel]",
        f"source = {ch.source_stage}",
        f"sinks = {', '.join(str(x) for x in ch.sink_stages)}",
        f"r_heavy = {format_si(ch.r_heavy, 'Ω')}",
        f"r_light = {format_si(ch.r_light, 'Ω')}",
        f"idle_load = {format_si(ch.idle_load, 'Ω')}",
        f"bit_period = {format_si(ch.bit_period, 's')}",
        f"bits = {ch.bits}",
        f"probes = {', '.join(p.value for p in ch.probes)}",
        f"warmup_bits = {ch.warmup_bits}",
        f"settle_fraction = {format_si(ch.settle_fraction)}",
        "",
        "[sweep]",
        f"frequencies = {_fmt_list(sw.frequencies, 'Hz')}",
        f"rates = {_fmt_list(sw.rates)}",
        f"resolutions = {_fmt_list(sw.resolutions, 'V')}",
        f"r_offchip = {_fmt_list(sw.r_offchip, 'Ω')}",
    ]
    return "\n".join(lines) + "\n"
