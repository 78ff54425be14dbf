"""
Covert channel through load coupling in a shared ladder converter.

A transmitting stage (the source) encodes bits by switching its load:
a light load for '1' and a heavy load for '0' (on-off keying). Receiving
stages (sinks) see the resulting voltage excursions through the shared
supply path. This module simulates the transmission, measures the
amplitude ΔV at each probe node, decodes bits by thresholding, and sweeps
amplitude against switching frequency, bit rate and off-chip resistance.

Stage numbers in ChannelConfig are 1-based; stage 1 is nearest the supply.

Measurement window per bit: the last floor(n/2) whole switching periods of
a bit spanning n whole periods. ΔV = |mean over '1' windows - mean over
'0' windows|.
"""

import math
from dataclasses import dataclass, field, replace
from enum import Enum
from multiprocessing import Pool
from pathlib import Path
from typing import Any, Optional, Sequence, Union

import numpy as np

from scport.analytical import Regime, RMatrix, r_matrix
from scport.circuit import ChannelError, ConverterSpec, SwitchedNetwork, build_ladder
from scport.constants import (
    DEFAULT_IDLE_LOAD,
    DEFAULT_R_HEAVY,
    DEFAULT_R_LIGHT,
    DEFAULT_SETTLE_FRACTION,
    REFERENCE_SINK_DELTA_V,
    REFERENCE_SOURCE_DELTA_V,
)
from scport.engine import (
    LoadSchedule,
    LoadSegment,
    Simulator,
    StepPolicy,
    TransientTrace,
    resistive_loads,
)
from scport.logging_config import get_logger, sweep_key_var
from scport.units import format_si

logger = get_logger(__name__)

# Slack when mapping bit boundaries onto whole periods
_ALIGN_TOL = 1e-9

RATE_SWEEP_PATTERN = "1010101010"


# =============================================================================
# Configuration
# =============================================================================

class ProbeNode(str, Enum):
    """Where a stage is observed."""
    OUTPUT = "output"
    INPUT = "input"

    def label(self, stage: int) -> str:
        return f"V_OUT{stage}" if self == ProbeNode.OUTPUT else f"V_IN{stage}"


@dataclass(frozen=True)
class ChannelConfig:
    """
    Covert-channel scenario.

    Attributes:
        source_stage: Transmitting stage (1-based).
        sink_stages: Receiving stages (1-based).
        r_heavy: Source load for bit '0', ohms.
        r_light: Source load for bit '1' and while idle, ohms.
        idle_load: Load on every non-source stage, ohms.
        bit_period: Seconds per bit.
        bits: Transmitted pattern of '0'/'1'.
        probes: Nodes observed on each stage.
        warmup_bits: Leading bits excluded from ΔV (still decoded).
        settle_fraction: A window whose first and last period differ by more
            than this fraction of the source ΔV is flagged unsettled.
    """
    source_stage: int = 1
    sink_stages: tuple[int, ...] = (2, 3)
    r_heavy: float = DEFAULT_R_HEAVY
    r_light: float = DEFAULT_R_LIGHT
    idle_load: float = DEFAULT_IDLE_LOAD
    bit_period: float = 25e-6
    bits: str = "1010"
    probes: tuple[ProbeNode, ...] = (ProbeNode.OUTPUT, ProbeNode.INPUT)
    warmup_bits: int = 0
    settle_fraction: float = DEFAULT_SETTLE_FRACTION

    def __post_init__(self) -> None:
        object.__setattr__(self, "sink_stages", tuple(int(s) for s in self.sink_stages))
        object.__setattr__(self, "probes", tuple(ProbeNode(p) for p in self.probes))

    @property
    def rate(self) -> float:
        return 1.0 / self.bit_period

    @property
    def duration(self) -> float:
        return len(self.bits) * self.bit_period

    @property
    def source_label(self) -> str:
        return ProbeNode.OUTPUT.label(self.source_stage)

    def replace(self, **changes: Any) -> "ChannelConfig":
        return replace(self, **changes)

    def node_labels(self) -> list[str]:
        """Probe labels, source stage first."""
        labels = []
        for stage in (self.source_stage, *self.sink_stages):
            for probe in self.probes:
                label = probe.label(stage)
                if label not in labels:
                    labels.append(label)
        if self.source_label not in labels:
            labels.insert(0, self.source_label)
        return labels

    def source_load(self, bit: str) -> float:
        return self.r_light if bit == "1" else self.r_heavy

    def port_ohms(self, n_stages: int, bit: str) -> list[float]:
        """Load resistances of every port while `bit` is sent."""
        ohms = [self.idle_load] * n_stages
        ohms[self.source_stage - 1] = self.source_load(bit)
        return ohms


def validate_channel(cfg: ChannelConfig, spec: ConverterSpec) -> list[str]:
    """Problems with a channel configuration for a given converter."""
    problems: list[str] = []
    n = spec.n_stages
    stages = (cfg.source_stage, *cfg.sink_stages)
    for stage in stages:
        if not 1 <= stage <= n:
            problems.append(f"stage {stage} out of range 1..{n}")
    if len(set(stages)) != len(stages):
        problems.append("source and sink stages must be distinct")
    if not cfg.r_heavy > 0:
        problems.append(f"r_heavy must be positive, got {cfg.r_heavy!r}")
    if not cfg.r_heavy <= cfg.r_light:
        problems.append(f"r_heavy ({cfg.r_heavy!r}) must not exceed r_light ({cfg.r_light!r})")
    if not cfg.idle_load > 0:
        problems.append(f"idle_load must be positive, got {cfg.idle_load!r}")
    if not cfg.bit_period >= 2 * spec.period * (1 - _ALIGN_TOL):
        problems.append(
            f"bit_period {cfg.bit_period!r}s is shorter than two switching periods"
        )
    if set(cfg.bits) - {"0", "1"}:
        problems.append(f"bits must contain only '0' and '1', got {cfg.bits!r}")
    if cfg.warmup_bits < 0:
        problems.append(f"warmup_bits must be non-negative, got {cfg.warmup_bits}")
    return problems


def ensure_channel(cfg: ChannelConfig, spec: ConverterSpec) -> None:
    problems = validate_channel(cfg, spec)
    if problems:
        raise ChannelError("invalid channel config: " + "; ".join(problems))


def encode_schedule(cfg: ChannelConfig, n_stages: int) -> LoadSchedule:
    """
    Piecewise-constant load profile of the bit pattern.

    Consecutive equal bits share one segment; an empty pattern holds the
    idle ('1') profile.
    """
    if not cfg.bits:
        return LoadSchedule.constant(resistive_loads(cfg.port_ohms(n_stages, "1")))

    segments: list[LoadSegment] = []
    for b, bit in enumerate(cfg.bits):
        loads = resistive_loads(cfg.port_ohms(n_stages, bit))
        if segments and segments[-1].loads == loads:
            continue
        segments.append(LoadSegment(b * cfg.bit_period, loads))
    return LoadSchedule(tuple(segments))


# =============================================================================
# Bit Windows
# =============================================================================

@dataclass(frozen=True)
class BitWindow:
    """Sample range [start, stop) used to measure one bit."""
    index: int
    start: int
    stop: int
    full: bool

    def __len__(self) -> int:
        return max(0, self.stop - self.start)


def bit_windows(trace: TransientTrace, cfg: ChannelConfig) -> list[BitWindow]:
    """
    Steady window of every bit, in whole switching periods.

    Bits spanning fewer than two whole periods fall back to the periods
    overlapping their trailing half and are marked not full.
    """
    spp = trace.samples_per_period
    total = trace.n_samples // spp
    ratio = cfg.bit_period / trace.period
    windows = []
    for b in range(len(cfg.bits)):
        begin, end = b * ratio, (b + 1) * ratio
        p_first = math.ceil(begin - _ALIGN_TOL)
        p_end = min(math.floor(end + _ALIGN_TOL), total)
        half = (p_end - p_first) // 2
        if half >= 1:
            p0, p1, full = p_end - half, p_end, True
        else:
            p0 = min(math.floor((begin + end) / 2 + _ALIGN_TOL), total - 1)
            p1 = min(max(p0 + 1, math.ceil(end - _ALIGN_TOL)), total)
            full = False
        windows.append(BitWindow(b, p0 * spp, p1 * spp, full))
    return windows


def _window_means(values: np.ndarray, windows: Sequence[BitWindow]) -> np.ndarray:
    return np.array([
        float(np.mean(values[w.start:w.stop])) if len(w) else math.nan for w in windows
    ])


# =============================================================================
# Reports
# =============================================================================

@dataclass(frozen=True)
class DecodeResult:
    bits: str
    errors: int
    ber: float
    threshold: Optional[float]
    node: str


@dataclass(frozen=True, eq=False)
class ChannelReport:
    """
    Outcome of one transmission.

    Attributes:
        config: Channel configuration used.
        f_sw: Switching frequency of the converter, hertz.
        delta_v: Probe label -> ΔV between the bit levels, volts.
        level_means: Probe label -> (mean over '1' windows, mean over '0').
        settled: Per bit, whether its window was steady.
        decoded: Decoded pattern ('?' for undecidable bits), empty until
            decoded.
        bit_errors: Mismatches against the transmitted pattern.
        ber: bit_errors / len(bits), None until decoded.
        threshold: Decision threshold used, volts.
        decode_node: Label of the decoded node.
    """
    config: ChannelConfig
    f_sw: float
    delta_v: dict[str, float]
    level_means: dict[str, tuple[float, float]]
    settled: tuple[bool, ...]
    decoded: str = ""
    bit_errors: int = 0
    ber: Optional[float] = None
    threshold: Optional[float] = None
    decode_node: Optional[str] = None

    @property
    def unsettled_count(self) -> int:
        return sum(1 for s in self.settled if not s)

    def with_decode(self, result: DecodeResult) -> "ChannelReport":
        return replace(
            self,
            decoded=result.bits,
            bit_errors=result.errors,
            ber=result.ber,
            threshold=result.threshold,
            decode_node=result.node,
        )


def _levels(
    trace: TransientTrace, cfg: ChannelConfig, windows: Sequence[BitWindow]
) -> tuple[dict[str, float], dict[str, tuple[float, float]]]:
    counted = [w for w in windows if w.index >= cfg.warmup_bits and len(w)]
    ones = [w for w in counted if cfg.bits[w.index] == "1"]
    zeros = [w for w in counted if cfg.bits[w.index] == "0"]

    def pooled(values: np.ndarray, group: list[BitWindow]) -> float:
        if not group:
            return math.nan
        return float(np.mean(np.concatenate([values[w.start:w.stop] for w in group])))

    delta_v: dict[str, float] = {}
    level_means: dict[str, tuple[float, float]] = {}
    for label in cfg.node_labels():
        values = trace[label]
        high, low = pooled(values, ones), pooled(values, zeros)
        level_means[label] = (high, low)
        delta_v[label] = abs(high - low) if ones and zeros else 0.0
    return delta_v, level_means


def _settled_flags(
    trace: TransientTrace, cfg: ChannelConfig, windows: Sequence[BitWindow], source_dv: float
) -> tuple[bool, ...]:
    spp = trace.samples_per_period
    values = trace[cfg.source_label]
    limit = cfg.settle_fraction * source_dv + 1e-12
    flags = []
    for w in windows:
        if not w.full:
            flags.append(False)
            continue
        first = float(np.mean(values[w.start:w.start + spp]))
        last = float(np.mean(values[w.stop - spp:w.stop]))
        flags.append(abs(last - first) <= limit)
    return tuple(flags)


def reference_comparison(
    spec: ConverterSpec, cfg: ChannelConfig, report: ChannelReport
) -> Optional[dict[str, float]]:
    """
    Ratios of simulated to reference amplitudes for the reference scenario
    (three-stage reference converter, source 1, 100 Ω / 1 Ω keying).

    Returns:
        {"source": ratio, "sink": ratio}, or None for other scenarios.
    """
    reference = ConverterSpec.reference_case()
    if (
        spec != reference
        or cfg.source_stage != 1
        or not cfg.sink_stages
        or cfg.r_light != 100.0
        or cfg.r_heavy != 1.0
    ):
        return None
    sink_label = ProbeNode.OUTPUT.label(cfg.sink_stages[0])
    if sink_label not in report.delta_v:
        return None
    return {
        "source": report.delta_v[cfg.source_label] / REFERENCE_SOURCE_DELTA_V,
        "sink": report.delta_v[sink_label] / REFERENCE_SINK_DELTA_V,
    }


# =============================================================================
# Transmission
# =============================================================================

def transmit(
    network: SwitchedNetwork,
    cfg: ChannelConfig,
    policy: Optional[StepPolicy] = None,
    simulator: Optional[Simulator] = None,
) -> tuple[TransientTrace, ChannelReport]:
    """
    Send the bit pattern and measure ΔV at every probe node.

    The run starts from the periodic steady state of the idle profile and
    records one period-mean sample per switching period.

    Returns:
        Period-mean trace and a report with ΔV and settled flags (not yet
        decoded; see decode()).

    Raises:
        ChannelError: If the configuration does not fit the converter.
    """
    spec = network.spec
    ensure_channel(cfg, spec)
    sim = simulator or Simulator(network, policy)
    n = spec.n_stages
    log = logger.with_context(stage=cfg.source_stage, f_sw=spec.f_sw)

    preroll = sim.periodic_steady_state(resistive_loads(cfg.port_ohms(n, "1")))
    trace = sim.run_period_means(encode_schedule(cfg, n), cfg.duration, initial=preroll)

    windows = bit_windows(trace, cfg)
    delta_v, level_means = _levels(trace, cfg, windows)
    settled = _settled_flags(trace, cfg, windows, delta_v[cfg.source_label])

    short = sum(1 for w in windows if not w.full)
    if short:
        log.warning(
            f"{short} bit(s) shorter than two whole periods: "
            "ΔV measured over the trailing half-bit"
        )
    unsettled = sum(1 for s in settled if not s)
    if unsettled:
        log.warning(f"{unsettled} of {len(settled)} bits did not settle within their window")

    report = ChannelReport(
        config=cfg,
        f_sw=spec.f_sw,
        delta_v=delta_v,
        level_means=level_means,
        settled=settled,
    )

    ratios = reference_comparison(spec, cfg, report)
    if ratios is not None:
        log.warning(
            f"Absolute ΔV differs from the reference amplitudes: source x{ratios['source']:.2f}, "
            f"sink x{ratios['sink']:.2f}; compare ratios, not absolutes"
        )

    log.info(
        f"Transmitted {len(cfg.bits)} bits at {format_si(cfg.rate, 'bit/s')}: "
        + ", ".join(f"{k}={v * 1e3:.4f}mV" for k, v in delta_v.items())
    )
    return trace, report


def _default_threshold(cfg: ChannelConfig, means: np.ndarray) -> Optional[float]:
    bits = cfg.bits
    if len(bits) >= 2 and bits[0] != bits[1] and np.all(np.isfinite(means[:2])):
        if means[0] != means[1]:
            return float((means[0] + means[1]) / 2)
    ones = [m for m, b in zip(means, bits) if b == "1" and math.isfinite(m)]
    zeros = [m for m, b in zip(means, bits) if b == "0" and math.isfinite(m)]
    if ones and zeros:
        return float((np.mean(ones) + np.mean(zeros)) / 2)
    return None


def decode(
    trace: TransientTrace,
    cfg: ChannelConfig,
    threshold: Optional[float] = None,
    resolution: Optional[float] = None,
    node: Optional[str] = None,
) -> DecodeResult:
    """
    Threshold each bit's window mean at one node.

    A window mean above the threshold reads '1' (light source load keeps
    the shared supply higher). Without a threshold one is trained on the
    first two bits. Bits without data, or with no threshold obtainable,
    read '?' and count as errors.

    Args:
        trace: Trace from transmit() (or any period-aligned trace).
        cfg: Channel configuration with the transmitted pattern.
        threshold: Decision level in volts; None for the default.
        resolution: Sensor resolution; window means are floored to
            multiples of it before comparison.
        node: Label to decode; defaults to the first sink's output.
    """
    if node is None:
        stage = cfg.sink_stages[0] if cfg.sink_stages else cfg.source_stage
        node = ProbeNode.OUTPUT.label(stage)

    means = _window_means(trace[node], bit_windows(trace, cfg))
    if resolution is not None:
        if not resolution > 0:
            raise ValueError(f"resolution must be positive, got {resolution!r}")
        means = np.floor(means / resolution) * resolution

    if threshold is None:
        threshold = _default_threshold(cfg, means)

    decoded = "".join(
        "?" if threshold is None or not math.isfinite(m) else ("1" if m > threshold else "0")
        for m in means
    )
    errors = sum(1 for got, sent in zip(decoded, cfg.bits) if got != sent)
    ber = errors / len(cfg.bits) if cfg.bits else 0.0
    logger.with_context(node=node).debug(f"Decoded {decoded!r}: {errors} error(s)")
    return DecodeResult(bits=decoded, errors=errors, ber=ber, threshold=threshold, node=node)


def predict_delta_v(
    rmatrix: RMatrix,
    cfg: ChannelConfig,
    v_tr: Optional[Sequence[float]] = None,
) -> np.ndarray:
    """
    Model-side ΔV per output port from V = V_TR - R I with I = V / R_load.

    Both bit levels are solved self-consistently; ΔV is the absolute
    difference.

    Raises:
        ChannelError: If a solution has a non-positive output voltage.
    """
    n = rmatrix.order
    targets = rmatrix.v_tr if v_tr is None else np.asarray(v_tr, dtype=float)

    def operating_point(bit: str) -> np.ndarray:
        conductance = np.diag(1.0 / np.asarray(cfg.port_ohms(n, bit)))
        v = np.linalg.solve(np.eye(n) + rmatrix.values @ conductance, targets)
        if np.any(v <= 0):
            raise ChannelError(f"non-physical operating point for bit '{bit}': {v}")
        return v

    return np.abs(operating_point("1") - operating_point("0"))


# =============================================================================
# Sweeps
# =============================================================================

@dataclass(frozen=True)
class SweepPoint:
    value: float
    node: str
    delta_v: float


@dataclass(frozen=True)
class Bandwidth:
    """
    Highest bit rate still resolvable at a sensor resolution.

    Attributes:
        max_rate: Largest swept rate with ΔV >= resolution, or None.
        crossing: Rate where ΔV falls through the resolution, interpolated
            linearly in log(rate); None if it never crosses in range.
    """
    node: str
    resolution: float
    max_rate: Optional[float]
    crossing: Optional[float]


@dataclass(frozen=True)
class LinearFit:
    slope: float
    intercept: float
    residual_fraction: float


@dataclass(eq=False)
class SweepResult:
    """
    ΔV curves of one sweep.

    Attributes:
        kind: "freq", "rate" or "offchip".
        points: Sorted by sweep value, then node order.
        reports: Sweep value -> report of that point.
        bandwidths: Rate sweeps only.
        fits: Off-chip sweeps only; per node.
        model_slopes: Off-chip sweeps only; per output node, from
            predict_delta_v() on analytical FSL matrices.
    """
    kind: str
    points: list[SweepPoint]
    reports: dict[float, ChannelReport] = field(default_factory=dict)
    bandwidths: list[Bandwidth] = field(default_factory=list)
    fits: dict[str, LinearFit] = field(default_factory=dict)
    model_slopes: dict[str, float] = field(default_factory=dict)

    @property
    def nodes(self) -> list[str]:
        seen: list[str] = []
        for p in self.points:
            if p.node not in seen:
                seen.append(p.node)
        return seen

    def curve(self, node: str) -> tuple[np.ndarray, np.ndarray]:
        """Sweep values and ΔV of one node."""
        pts = [p for p in self.points if p.node == node]
        return np.array([p.value for p in pts]), np.array([p.delta_v for p in pts])


def _transmit_point(task: tuple[float, ConverterSpec, ChannelConfig, Optional[StepPolicy], str]) -> tuple[float, ChannelReport]:
    value, spec, cfg, policy, kind = task
    token = sweep_key_var.set(f"{kind}={format_si(value)}")
    try:
        _, report = transmit(build_ladder(spec), cfg, policy)
        return value, report
    finally:
        sweep_key_var.reset(token)


def _run_sweep(
    kind: str,
    tasks: list[tuple[float, ConverterSpec, ChannelConfig, Optional[StepPolicy], str]],
    jobs: int,
) -> SweepResult:
    if jobs > 1 and len(tasks) > 1:
        with Pool(processes=min(jobs, len(tasks))) as pool:
            results = pool.map(_transmit_point, tasks)
    else:
        results = [_transmit_point(task) for task in tasks]
    results.sort(key=lambda item: item[0])

    points = [
        SweepPoint(value, node, dv)
        for value, report in results
        for node, dv in report.delta_v.items()
    ]
    logger.info(f"{kind} sweep finished: {len(results)} points")
    return SweepResult(kind=kind, points=points, reports=dict(results))


def sweep_switching_frequency(
    spec: ConverterSpec,
    cfg: ChannelConfig,
    frequencies: Sequence[float],
    policy: Optional[StepPolicy] = None,
    jobs: int = 1,
) -> SweepResult:
    """Repeat transmit() at each switching frequency."""
    tasks = [(float(f), spec.replace(f_sw=float(f)), cfg, policy, "freq") for f in frequencies]
    return _run_sweep("freq", tasks, jobs)


def bandwidth_at(values: np.ndarray, delta_v: np.ndarray, resolution: float, node: str) -> Bandwidth:
    """Bandwidth of one ΔV-vs-rate curve at a resolution."""
    order = np.argsort(values)
    rates, dv = values[order], delta_v[order]
    ok = dv >= resolution
    max_rate = float(rates[ok].max()) if np.any(ok) else None

    crossing = None
    for i in range(len(rates) - 1):
        if dv[i] >= resolution > dv[i + 1]:
            lo, hi = math.log(rates[i]), math.log(rates[i + 1])
            frac = (dv[i] - resolution) / (dv[i] - dv[i + 1])
            crossing = math.exp(lo + frac * (hi - lo))
            break
    return Bandwidth(node=node, resolution=resolution, max_rate=max_rate, crossing=crossing)


def sweep_bit_rate(
    spec: ConverterSpec,
    cfg: ChannelConfig,
    rates: Sequence[float],
    resolutions: Sequence[float] = (2e-3,),
    policy: Optional[StepPolicy] = None,
    jobs: int = 1,
) -> SweepResult:
    """
    ΔV against bit rate, plus bandwidth per node and resolution.

    Each point discards at least two warm-up bits. Patterns without both
    levels after the warm-up are replaced by an alternating pattern.
    """
    warmup = max(cfg.warmup_bits, 2)
    bits = cfg.bits
    if len(set(bits[warmup:])) < 2:
        bits = RATE_SWEEP_PATTERN

    tasks = [
        (float(rate), spec, cfg.replace(bit_period=1.0 / rate, bits=bits, warmup_bits=warmup), policy, "rate")
        for rate in rates
    ]
    result = _run_sweep("rate", tasks, jobs)
    for node in result.nodes:
        values, dv = result.curve(node)
        for resolution in resolutions:
            result.bandwidths.append(bandwidth_at(values, dv, resolution, node))
    return result


def linear_fit(x: np.ndarray, y: np.ndarray) -> LinearFit:
    """Least-squares line; residual as a fraction of the curve's range."""
    slope, intercept = np.polyfit(x, y, 1)
    span = float(np.ptp(y))
    worst = float(np.max(np.abs(y - (slope * x + intercept))))
    return LinearFit(float(slope), float(intercept), worst / span if span > 0 else 0.0)


def sweep_offchip(
    spec: ConverterSpec,
    cfg: ChannelConfig,
    r_offchip: Sequence[float],
    policy: Optional[StepPolicy] = None,
    jobs: int = 1,
) -> SweepResult:
    """ΔV against off-chip resistance, with fitted and model slopes."""
    tasks = [
        (float(r), spec.replace(r_offchip=float(r)), cfg, policy, "offchip") for r in r_offchip
    ]
    result = _run_sweep("offchip", tasks, jobs)

    for node in result.nodes:
        values, dv = result.curve(node)
        if len(values) >= 2:
            result.fits[node] = linear_fit(values, dv)

    values = np.array(sorted(float(r) for r in r_offchip))
    if len(values) >= 2:
        predicted = np.array([
            predict_delta_v(r_matrix(spec.replace(r_offchip=r), Regime.FSL), cfg) for r in values
        ])
        for stage in range(1, spec.n_stages + 1):
            label = ProbeNode.OUTPUT.label(stage)
            if label in result.nodes:
                result.model_slopes[label] = float(np.polyfit(values, predicted[:, stage - 1], 1)[0])
    return result


# =============================================================================
# Output
# =============================================================================

def format_report(report: ChannelReport) -> str:
    """Structured text report of one transmission."""
    cfg = report.config
    lines = [
        "=" * 50,
        "COVERT CHANNEL REPORT",
        "=" * 50,
        f"Switching frequency: {format_si(report.f_sw, 'Hz')}",
        f"Source stage: {cfg.source_stage}",
        f"Sink stages: {', '.join(str(s) for s in cfg.sink_stages) or '-'}",
        f"Bit period: {format_si(cfg.bit_period, 's')} ({format_si(cfg.rate, 'bit/s')})",
        f"Loads: heavy {format_si(cfg.r_heavy, 'Ω')}, light {format_si(cfg.r_light, 'Ω')}, "
        f"idle {format_si(cfg.idle_load, 'Ω')}",
        f"Bits sent: {cfg.bits or '-'}",
        "",
        "AMPLITUDE (ΔV between bit levels):",
    ]
    for label, dv in report.delta_v.items():
        high, low = report.level_means[label]
        lines.append(
            f"  {label:8} {dv * 1e3:10.4f} mV   ('1' {high:.6f} V, '0' {low:.6f} V)"
        )

    lines.append("")
    lines.append("DECODING:")
    if report.ber is None:
        lines.append("  not decoded")
    else:
        threshold = "-" if report.threshold is None else f"{report.threshold:.6f} V"
        lines.append(f"  Node: {report.decode_node}")
        lines.append(f"  Threshold: {threshold}")
        lines.append(f"  Decoded: {report.decoded or '-'}")
        lines.append(f"  Bit errors: {report.bit_errors} / {len(cfg.bits)}")
        lines.append(f"  BER: {report.ber:.4f}")
    lines.append(f"  Unsettled bits: {report.unsettled_count}")
    return "\n".join(lines)


def format_sweep(result: SweepResult) -> str:
    """Text summary of a sweep: ΔV table plus bandwidths or fits."""
    unit = {"freq": "Hz", "rate": "bit/s", "offchip": "Ω"}.get(result.kind, "")
    nodes = result.nodes
    lines = [
        "=" * 50,
        f"SWEEP: {result.kind}",
        "=" * 50,
        f"{'value':>12} " + " ".join(f"{n:>10}" for n in nodes) + "   (ΔV, mV)",
    ]
    for value in sorted(result.reports):
        dv = result.reports[value].delta_v
        lines.append(
            f"{format_si(value, unit):>12} " + " ".join(f"{dv[n] * 1e3:10.4f}" for n in nodes)
        )

    if result.bandwidths:
        lines.append("")
        lines.append("BANDWIDTH:")
        for bw in result.bandwidths:
            max_rate = "-" if bw.max_rate is None else format_si(bw.max_rate, "bit/s")
            crossing = "-" if bw.crossing is None else f"{bw.crossing / 1e3:.1f}kbit/s"
            lines.append(
                f"  {bw.node:8} @ {format_si(bw.resolution, 'V'):>6}: "
                f"max listed {max_rate}, crossing {crossing}"
            )

    if result.fits:
        lines.append("")
        lines.append("LINEAR FIT (ΔV vs R_off):")
        for node, fit in result.fits.items():
            model = result.model_slopes.get(node)
            model_text = "" if model is None else f", model {model * 1e3:.4f} mV/Ω"
            lines.append(
                f"  {node:8} slope {fit.slope * 1e3:.4f} mV/Ω, "
                f"residual {fit.residual_fraction:.2%}{model_text}"
            )
    return "\n".join(lines)


def write_sweep_csv(result: SweepResult, path: Union[str, Path]) -> None:
    """`sweep_value,node,delta_v_volts`, one row per point."""
    with open(path, "w") as fh:
        fh.write("sweep_value,node,delta_v_volts\n")
        for p in result.points:
            fh.write(f"{p.value!r},{p.node},{p.delta_v!r}\n")
