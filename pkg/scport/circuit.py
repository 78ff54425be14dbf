"""
Converter specification and switched-network construction.

An N-stage 2:1 ladder converter is described by a ConverterSpec and
expanded by build_ladder() into a SwitchedNetwork: named nodes, a flat
branch list and a two-phase non-overlapping schedule.

Topology (stage i, 1-based; stage 1 is nearest the supply):
- Ideal source V_IN, optional off-chip resistor, then ladder segments
  R_SEG1..R_SEGN in series. Segment k carries the input current of every
  stage >= k.
- A private tap stub R_TAPi joins ladder junction i to the stage input.
- Four switches per stage. S1 (tap -> top) and S2 (bottom -> out) close in
  the charge phase; S3 (top -> out) and S4 (bottom -> ground) close in the
  discharge phase.
- Flying capacitor C_FLYi between top and bottom plates, each plate with a
  small parasitic capacitance to ground, and C_OUTi from out to ground.

This module also owns the exception hierarchy shared by the package.
"""

import logging
from dataclasses import dataclass, field, fields, replace as dc_replace
from enum import Enum
from typing import Any, Optional

from scport.config import config
from scport.constants import DEFAULT_C_PARASITIC, DEFAULT_DEAD_TIME_FRACTION

logger = logging.getLogger(__name__)

GROUND = "gnd"


# =============================================================================
# Errors
# =============================================================================

class ScportError(Exception):
    """Base class for all scport errors."""


class SpecError(ScportError):
    """Converter specification failed validation."""

    def __init__(self, problems: list[str]):
        self.problems = list(problems)
        super().__init__("invalid converter spec: " + "; ".join(self.problems))


class AssemblyError(ScportError):
    """Network cannot be assembled into a solvable system (floating node)."""


class DivergenceError(ScportError):
    """Simulation produced a non-finite state."""

    def __init__(self, message: str, time: float):
        self.time = time
        super().__init__(f"{message} at t={time:.6g}s")


class NonConvergenceError(ScportError):
    """Steady state was not reached within the period cap."""

    def __init__(self, residual: float, periods: int):
        self.residual = residual
        self.periods = periods
        super().__init__(
            f"no steady state after {periods} periods (residual {residual:.3g} V)"
        )


class WindowError(ScportError):
    """Averaging window is not aligned to whole switching periods."""


class AnalysisError(ScportError):
    """Analytical system is singular or disagrees with its closed form."""


class ChannelError(ScportError):
    """Covert-channel configuration or prediction is invalid."""


class ConfigFileError(ScportError):
    """Scenario file could not be parsed or validated."""

    def __init__(self, message: str, lineno: Optional[int] = None, path: str = ""):
        self.lineno = lineno
        self.path = path
        where = path or "<config>"
        if lineno is not None:
            where = f"{where}:{lineno}"
        super().__init__(f"{where}: {message}")


# =============================================================================
# Enums
# =============================================================================

class Phase(str, Enum):
    """Switching phase of the two-phase non-overlapping clock."""
    CHARGE = "charge"
    DEAD = "dead"
    DISCHARGE = "discharge"


class BranchKind(str, Enum):
    """Element type of a network branch."""
    RESISTOR = "resistor"
    CAPACITOR = "capacitor"
    VOLTAGE_SOURCE = "voltage-source"
    CURRENT_SOURCE = "current-source"


# =============================================================================
# Converter Specification
# =============================================================================

def _as_tuple(value: Any, n: int) -> tuple[float, ...]:
    """Broadcast a scalar to n entries; pass sequences through as tuples."""
    if isinstance(value, (int, float)):
        return tuple(float(value) for _ in range(n))
    return tuple(float(v) for v in value)


@dataclass(frozen=True)
class ConverterSpec:
    """
    Full parameterization of an N-stage 2:1 ladder converter.

    Per-stage fields accept a scalar (broadcast to every stage) or a
    sequence of length n_stages.

    Attributes:
        n_stages: Number of 2:1 stages (output ports).
        v_in: Input supply in volts.
        r_switch: On-resistance of every switch, ohms.
        c_fly: Flying capacitance per stage, farads.
        c_out: Output filter capacitance per stage, farads.
        r_par: Ladder segment resistances, ohms. Segment k feeds stages k..N.
        r_offchip: Series resistance between the ideal supply and the ladder.
        f_sw: Switching frequency in hertz.
        dead_time_fraction: Fraction of the period per phase transition with
            all switches open.
        r_tap: Private stub resistance per stage between its ladder junction
            and its input; defaults to r_par element-wise.
        c_parasitic: Plate-to-ground capacitance on each flying-capacitor
            terminal, farads.
    """
    n_stages: int
    v_in: float
    r_switch: float
    c_fly: tuple[float, ...]
    c_out: tuple[float, ...]
    r_par: tuple[float, ...]
    r_offchip: float = 0.0
    f_sw: float = 10e6
    dead_time_fraction: float = DEFAULT_DEAD_TIME_FRACTION
    r_tap: Optional[tuple[float, ...]] = None
    c_parasitic: float = DEFAULT_C_PARASITIC

    def __post_init__(self) -> None:
        n = self.n_stages if isinstance(self.n_stages, int) else 0
        for name in ("c_fly", "c_out", "r_par"):
            object.__setattr__(self, name, _as_tuple(getattr(self, name), n))
        if self.r_tap is not None:
            object.__setattr__(self, "r_tap", _as_tuple(self.r_tap, n))

    @property
    def period(self) -> float:
        return 1.0 / self.f_sw

    @property
    def taps(self) -> tuple[float, ...]:
        """Tap stub resistances, falling back to r_par."""
        return self.r_tap if self.r_tap is not None else self.r_par

    def replace(self, **changes: Any) -> "ConverterSpec":
        """Return a validated copy with the given fields changed."""
        spec = dc_replace(self, **changes)
        ensure_valid(spec)
        return spec

    def to_dict(self) -> dict[str, Any]:
        return {f.name: getattr(self, f.name) for f in fields(self)}

    @classmethod
    def reference_case(cls, n_stages: int = 3, **changes: Any) -> "ConverterSpec":
        """The reference case study: 1 V in, 1 µF / 10 µF, 0.1 Ω / 0.01 Ω, 10 MHz."""
        ref = config.reference_case
        spec = cls(
            n_stages=n_stages,
            v_in=ref.v_in,
            r_switch=ref.r_switch,
            c_fly=ref.c_fly,
            c_out=ref.c_out,
            r_par=ref.r_par,
            f_sw=ref.f_sw,
        )
        if changes:
            spec = dc_replace(spec, **changes)
        ensure_valid(spec)
        return spec


def validate(spec: ConverterSpec) -> list[str]:
    """
    Check a spec against every invariant.

    Returns:
        List of problems, empty when the spec is valid. Never raises.
    """
    problems: list[str] = []

    n = spec.n_stages
    if not isinstance(n, int) or isinstance(n, bool) or n < 1:
        problems.append(f"n_stages: must be a positive integer, got {n!r}")
        return problems

    def _check_len(name: str, values: Any) -> bool:
        if len(values) != n:
            problems.append(f"{name}: expected {n} entries, got {len(values)}")
            return False
        return True

    if _check_len("c_fly", spec.c_fly):
        for i, c in enumerate(spec.c_fly, start=1):
            if not c > 0:
                problems.append(f"c_fly[{i}]: capacitance must be positive, got {c!r}")
    if _check_len("c_out", spec.c_out):
        for i, c in enumerate(spec.c_out, start=1):
            if not c > 0:
                problems.append(f"c_out[{i}]: capacitance must be positive, got {c!r}")
    if _check_len("r_par", spec.r_par):
        for i, r in enumerate(spec.r_par, start=1):
            if not r >= 0:
                problems.append(f"r_par[{i}]: resistance must be non-negative, got {r!r}")
    if spec.r_tap is not None and _check_len("r_tap", spec.r_tap):
        for i, r in enumerate(spec.r_tap, start=1):
            if not r >= 0:
                problems.append(f"r_tap[{i}]: resistance must be non-negative, got {r!r}")

    if not spec.r_switch >= 0:
        problems.append(f"r_switch: resistance must be non-negative, got {spec.r_switch!r}")
    if not spec.r_offchip >= 0:
        problems.append(f"r_offchip: resistance must be non-negative, got {spec.r_offchip!r}")
    if not spec.f_sw > 0:
        problems.append(f"f_sw: frequency must be positive, got {spec.f_sw!r}")
    if not 0 <= spec.dead_time_fraction < 0.5:
        problems.append(
            f"dead_time_fraction: must be in [0, 0.5), got {spec.dead_time_fraction!r}"
        )
    if not spec.c_parasitic >= 0:
        problems.append(f"c_parasitic: capacitance must be non-negative, got {spec.c_parasitic!r}")
    if not abs(spec.v_in) < float("inf"):
        problems.append(f"v_in: must be finite, got {spec.v_in!r}")

    return problems


def ensure_valid(spec: ConverterSpec) -> None:
    """Raise SpecError listing every problem, if any."""
    problems = validate(spec)
    if problems:
        raise SpecError(problems)


# =============================================================================
# Switched Network
# =============================================================================

@dataclass(frozen=True)
class Branch:
    """
    One two-terminal element.

    Attributes:
        name: Unique label, e.g. "S1_2" or "C_FLY3".
        kind: Element type.
        value: Ohms, farads, volts or amps depending on kind.
        n_pos: Positive node name.
        n_neg: Negative node name.
        phases: Phases in which the element is present; None means always.
        stage: 1-based stage the element belongs to, None for shared parts.
    """
    name: str
    kind: BranchKind
    value: float
    n_pos: str
    n_neg: str
    phases: Optional[frozenset[Phase]] = None
    stage: Optional[int] = None

    @property
    def is_switch(self) -> bool:
        return self.phases is not None

    def active_in(self, phase: Phase) -> bool:
        return self.phases is None or phase in self.phases


@dataclass(frozen=True)
class PhaseInterval:
    """A slice of the switching period with its closed switches."""
    phase: Phase
    fraction: float
    closed: tuple[str, ...]


@dataclass(frozen=True)
class SwitchedNetwork:
    """
    Per-phase RC network of a converter.

    Node names are stable: "supply", optional "root", "j1".."jN",
    "tap1".., "top1".., "bot1".., "out1".. in that order. Ground is
    implicit and not listed.
    """
    spec: ConverterSpec
    nodes: tuple[str, ...]
    branches: tuple[Branch, ...]
    phase_schedule: tuple[PhaseInterval, ...]
    _index: dict[str, int] = field(default_factory=dict, compare=False, repr=False)

    def __post_init__(self) -> None:
        self._index.update({name: i for i, name in enumerate(self.nodes)})

    @property
    def n_stages(self) -> int:
        return self.spec.n_stages

    def node_index(self, name: str) -> int:
        """Index of a node in the unknown vector; -1 for ground."""
        if name == GROUND:
            return -1
        return self._index[name]

    def output_nodes(self) -> list[str]:
        return [f"out{i}" for i in range(1, self.n_stages + 1)]

    def tap_nodes(self) -> list[str]:
        return [f"tap{i}" for i in range(1, self.n_stages + 1)]

    def branch(self, name: str) -> Branch:
        for b in self.branches:
            if b.name == name:
                return b
        raise KeyError(name)

    def switches(self, phase: Phase) -> list[Branch]:
        """Switches closed during the given phase."""
        return [b for b in self.branches if b.is_switch and b.active_in(phase)]


def build_ladder(spec: ConverterSpec) -> SwitchedNetwork:
    """
    Expand a spec into its switched network.

    Raises:
        SpecError: If the spec is invalid.
    """
    ensure_valid(spec)

    n = spec.n_stages
    nodes: list[str] = ["supply"]
    branches: list[Branch] = [
        Branch("V_IN", BranchKind.VOLTAGE_SOURCE, spec.v_in, "supply", GROUND),
    ]

    head = "supply"
    if spec.r_offchip > 0:
        nodes.append("root")
        branches.append(Branch("R_OFF", BranchKind.RESISTOR, spec.r_offchip, "supply", "root"))
        head = "root"

    for k in range(1, n + 1):
        nodes.append(f"j{k}")
        branches.append(
            Branch(f"R_SEG{k}", BranchKind.RESISTOR, spec.r_par[k - 1], head, f"j{k}")
        )
        head = f"j{k}"

    nodes += [f"tap{i}" for i in range(1, n + 1)]
    nodes += [f"top{i}" for i in range(1, n + 1)]
    nodes += [f"bot{i}" for i in range(1, n + 1)]
    nodes += [f"out{i}" for i in range(1, n + 1)]

    charge = frozenset({Phase.CHARGE})
    discharge = frozenset({Phase.DISCHARGE})
    r = spec.r_switch

    for i in range(1, n + 1):
        tap, top, bot, out = f"tap{i}", f"top{i}", f"bot{i}", f"out{i}"
        branches += [
            Branch(f"R_TAP{i}", BranchKind.RESISTOR, spec.taps[i - 1], f"j{i}", tap, stage=i),
            Branch(f"C_FLY{i}", BranchKind.CAPACITOR, spec.c_fly[i - 1], top, bot, stage=i),
            Branch(f"C_OUT{i}", BranchKind.CAPACITOR, spec.c_out[i - 1], out, GROUND, stage=i),
            Branch(f"S1_{i}", BranchKind.RESISTOR, r, tap, top, charge, stage=i),
            Branch(f"S2_{i}", BranchKind.RESISTOR, r, bot, out, charge, stage=i),
            Branch(f"S3_{i}", BranchKind.RESISTOR, r, top, out, discharge, stage=i),
            Branch(f"S4_{i}", BranchKind.RESISTOR, r, bot, GROUND, discharge, stage=i),
        ]
        if spec.c_parasitic > 0:
            branches += [
                Branch(f"C_PT{i}", BranchKind.CAPACITOR, spec.c_parasitic, top, GROUND, stage=i),
                Branch(f"C_PB{i}", BranchKind.CAPACITOR, spec.c_parasitic, bot, GROUND, stage=i),
            ]

    on = 0.5 - spec.dead_time_fraction
    closed_charge = tuple(b.name for b in branches if b.phases == charge)
    closed_discharge = tuple(b.name for b in branches if b.phases == discharge)
    schedule = (
        PhaseInterval(Phase.CHARGE, on, closed_charge),
        PhaseInterval(Phase.DEAD, spec.dead_time_fraction, ()),
        PhaseInterval(Phase.DISCHARGE, on, closed_discharge),
        PhaseInterval(Phase.DEAD, spec.dead_time_fraction, ()),
    )

    network = SwitchedNetwork(
        spec=spec,
        nodes=tuple(nodes),
        branches=tuple(branches),
        phase_schedule=schedule,
    )
    logger.debug(
        f"Built {n}-stage ladder: {len(network.nodes)} nodes, {len(network.branches)} branches"
    )
    return network
