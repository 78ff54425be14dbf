"""
Fixed-step backward-Euler transient engine for switched RC networks.

Each phase of the clock is assembled once with modified nodal analysis
(MNA) into G x + C dx/dt = b. One implicit step of length h is then the
affine map

    x+ = K x + k,   K = (G + C/h)^-1 C/h,   k = (G + C/h)^-1 b

obtained from a single LU factorization and cached per (phase, loads).
Composing the steps of one switching period gives the period map
x -> M x + m, which drives fast whole-period stepping, steady-state
detection and the shooting solve (I - M) x = m for the periodic steady
state.

The unknown vector holds the non-ground node voltages followed by the
branch currents of the supply and of any zero-ohm element.
"""

import csv
import logging
import math
from dataclasses import dataclass
from enum import Enum
from pathlib import Path
from typing import Optional, Sequence, Union

import numpy as np
import scipy.linalg as linalg

from scport.circuit import (
    GROUND,
    AssemblyError,
    BranchKind,
    DivergenceError,
    NonConvergenceError,
    Phase,
    SwitchedNetwork,
    WindowError,
)
from scport.constants import (
    DEFAULT_MAX_PERIODS,
    DEFAULT_STEPS_PER_PERIOD,
    MIN_STEPS_PER_PERIOD,
)

logger = logging.getLogger(__name__)

# Relative slack when checking that a time lands on a period boundary
_ALIGN_TOL = 1e-6


# =============================================================================
# Loads
# =============================================================================

class LoadKind(str, Enum):
    RESISTOR = "resistor"
    CURRENT = "current"


@dataclass(frozen=True)
class PortLoad:
    """
    Load attached between a stage output and ground.

    A RESISTOR load is in ohms. A CURRENT load is an ideal sink drawing
    `value` amps out of the output node.
    """
    kind: LoadKind
    value: float

    def __post_init__(self) -> None:
        if self.kind == LoadKind.RESISTOR and not self.value > 0:
            raise ValueError(f"load resistance must be positive, got {self.value!r}")
        if not math.isfinite(self.value):
            raise ValueError(f"load value must be finite, got {self.value!r}")

    @classmethod
    def resistor(cls, ohms: float) -> "PortLoad":
        return cls(LoadKind.RESISTOR, float(ohms))

    @classmethod
    def current(cls, amps: float) -> "PortLoad":
        return cls(LoadKind.CURRENT, float(amps))


Loads = tuple[Optional[PortLoad], ...]


def resistive_loads(values: Sequence[Optional[float]]) -> Loads:
    """Resistor loads from ohm values; None or inf leaves the port open."""
    return tuple(
        None if v is None or math.isinf(v) else PortLoad.resistor(v) for v in values
    )


def no_loads(n_stages: int) -> Loads:
    return (None,) * n_stages


@dataclass(frozen=True)
class LoadSegment:
    """Loads applied from `start` seconds (relative to run start) onward."""
    start: float
    loads: Loads


@dataclass(frozen=True)
class LoadSchedule:
    """Piecewise-constant load profile. The first segment starts at 0."""
    segments: tuple[LoadSegment, ...]

    def __post_init__(self) -> None:
        if not self.segments:
            raise ValueError("load schedule needs at least one segment")
        if self.segments[0].start != 0:
            raise ValueError("first load segment must start at t=0")
        starts = [s.start for s in self.segments]
        if starts != sorted(starts):
            raise ValueError("load segments must be in time order")

    @classmethod
    def constant(cls, loads: Loads) -> "LoadSchedule":
        return cls((LoadSegment(0.0, tuple(loads)),))

    def change_steps(self, h: float) -> list[tuple[int, Loads]]:
        """Segment starts rounded to step boundaries; later wins on collisions."""
        changes: dict[int, Loads] = {}
        for seg in self.segments:
            changes[int(round(seg.start / h))] = seg.loads
        return sorted(changes.items())


LoadSpec = Union[Loads, LoadSchedule]


# =============================================================================
# Step Policy and Phase Schedule
# =============================================================================

@dataclass(frozen=True)
class StepPolicy:
    """Fixed integration step, expressed as steps per switching period."""
    steps_per_period: int = DEFAULT_STEPS_PER_PERIOD

    def __post_init__(self) -> None:
        if self.steps_per_period < MIN_STEPS_PER_PERIOD:
            raise ValueError(
                f"steps_per_period must be >= {MIN_STEPS_PER_PERIOD}, "
                f"got {self.steps_per_period}"
            )
        if self.steps_per_period % 2:
            raise ValueError(f"steps_per_period must be even, got {self.steps_per_period}")

    def refined(self) -> "StepPolicy":
        """Same policy with the step halved."""
        return StepPolicy(self.steps_per_period * 2)


def phase_steps(network: SwitchedNetwork, policy: StepPolicy) -> tuple[tuple[Phase, int], ...]:
    """
    Step counts of the period: [charge, dead, discharge, dead].

    Dead intervals with zero steps are dropped.
    """
    s = policy.steps_per_period
    dead = int(round(network.spec.dead_time_fraction * s))
    on = s // 2 - dead
    if on < 1:
        raise ValueError("dead time leaves no conduction steps")
    intervals = (
        (Phase.CHARGE, on),
        (Phase.DEAD, dead),
        (Phase.DISCHARGE, on),
        (Phase.DEAD, dead),
    )
    return tuple((phase, count) for phase, count in intervals if count > 0)


# =============================================================================
# Assembly
# =============================================================================

@dataclass(frozen=True, eq=False)
class PhaseSystem:
    """MNA descriptor G x + C dx/dt = b of one phase."""
    phase: Phase
    G: np.ndarray
    C: np.ndarray
    b: np.ndarray
    labels: tuple[str, ...]

    @property
    def size(self) -> int:
        return len(self.labels)


@dataclass(frozen=True)
class _Layout:
    nodes: tuple[str, ...]
    current_rows: dict[str, int]

    @property
    def size(self) -> int:
        return len(self.nodes) + len(self.current_rows)

    @property
    def labels(self) -> tuple[str, ...]:
        extra = sorted(self.current_rows, key=self.current_rows.__getitem__)
        return self.nodes + tuple(f"I({name})" for name in extra)


def _layout(network: SwitchedNetwork) -> _Layout:
    rows: dict[str, int] = {}
    n = len(network.nodes)
    for br in network.branches:
        needs_row = br.kind == BranchKind.VOLTAGE_SOURCE or (
            br.kind == BranchKind.RESISTOR and br.value == 0
        )
        if needs_row:
            rows[br.name] = n + len(rows)
    return _Layout(network.nodes, rows)


def _stamp(mat: np.ndarray, p: int, q: int, value: float) -> None:
    if p >= 0:
        mat[p, p] += value
    if q >= 0:
        mat[q, q] += value
    if p >= 0 and q >= 0:
        mat[p, q] -= value
        mat[q, p] -= value


def _stamp_branch(G: np.ndarray, p: int, q: int, row: int) -> None:
    if p >= 0:
        G[p, row] += 1.0
        G[row, p] += 1.0
    if q >= 0:
        G[q, row] -= 1.0
        G[row, q] -= 1.0


def _check_connected(network: SwitchedNetwork, phase: Phase, loads: Loads) -> None:
    """Every node must reach ground through some element in this phase."""
    parent = {name: name for name in (*network.nodes, GROUND)}

    def find(a: str) -> str:
        while parent[a] != a:
            parent[a] = parent[parent[a]]
            a = parent[a]
        return a

    def union(a: str, b: str) -> None:
        parent[find(a)] = find(b)

    for br in network.branches:
        if br.kind == BranchKind.CURRENT_SOURCE or not br.active_in(phase):
            continue
        union(br.n_pos, br.n_neg)
    for i, load in enumerate(loads, start=1):
        if load is not None and load.kind == LoadKind.RESISTOR:
            union(f"out{i}", GROUND)

    ground = find(GROUND)
    floating = [name for name in network.nodes if find(name) != ground]
    if floating:
        raise AssemblyError(
            f"floating node(s) in {phase.value} phase: {', '.join(floating)}"
        )


def _normalize_loads(network: SwitchedNetwork, loads: Optional[Sequence[Optional[PortLoad]]]) -> Loads:
    if loads is None:
        return no_loads(network.n_stages)
    loads = tuple(loads)
    if len(loads) != network.n_stages:
        raise ValueError(f"expected {network.n_stages} port loads, got {len(loads)}")
    return loads


def assemble_phase_system(
    network: SwitchedNetwork,
    phase: Phase,
    loads: Optional[Sequence[Optional[PortLoad]]] = None,
) -> PhaseSystem:
    """
    Build the MNA matrices of one phase.

    Open switches are left unstamped; a zero-ohm open switch keeps its
    current row with the equation i = 0.

    Raises:
        AssemblyError: If a node has no path to ground in this phase.
    """
    loads = _normalize_loads(network, loads)
    _check_connected(network, phase, loads)

    layout = _layout(network)
    size = layout.size
    G = np.zeros((size, size))
    C = np.zeros((size, size))
    b = np.zeros(size)

    for br in network.branches:
        p = network.node_index(br.n_pos)
        q = network.node_index(br.n_neg)
        if br.kind == BranchKind.CAPACITOR:
            _stamp(C, p, q, br.value)
        elif br.kind == BranchKind.RESISTOR:
            row = layout.current_rows.get(br.name)
            if row is None:
                if br.active_in(phase):
                    _stamp(G, p, q, 1.0 / br.value)
            elif br.active_in(phase):
                _stamp_branch(G, p, q, row)
            else:
                G[row, row] = 1.0
        elif br.kind == BranchKind.VOLTAGE_SOURCE:
            row = layout.current_rows[br.name]
            _stamp_branch(G, p, q, row)
            b[row] = br.value
        elif br.kind == BranchKind.CURRENT_SOURCE:
            if p >= 0:
                b[p] -= br.value
            if q >= 0:
                b[q] += br.value

    for i, load in enumerate(loads, start=1):
        if load is None:
            continue
        out = network.node_index(f"out{i}")
        if load.kind == LoadKind.RESISTOR:
            G[out, out] += 1.0 / load.value
        else:
            b[out] -= load.value

    return PhaseSystem(phase=phase, G=G, C=C, b=b, labels=layout.labels)


# =============================================================================
# State and Trace Types
# =============================================================================

@dataclass(frozen=True, eq=False)
class SimState:
    """
    Full MNA state at an instant.

    Attributes:
        x: Unknown vector (node voltages, then branch currents).
        time: Seconds since the start of the run.
        phase: Phase that the next step will use.
        labels: Names of the entries of x.
    """
    x: np.ndarray
    time: float
    phase: Phase
    labels: tuple[str, ...]

    @property
    def node_voltages(self) -> dict[str, float]:
        return {
            name: float(v) for name, v in zip(self.labels, self.x) if not name.startswith("I(")
        }

    def voltage(self, node: str) -> float:
        return float(self.x[self.labels.index(node)])


@dataclass(eq=False)
class TransientTrace:
    """
    Uniformly sampled series.

    A step trace has one sample per integration step (the state at the
    start of the step). A period-mean trace has one sample per switching
    period holding that period's mean. Both start on a period boundary.

    Attributes:
        t0: Time of the first sample, seconds.
        sample_period: Seconds between samples.
        samples_per_period: Samples per switching period.
        series: Name -> samples, all the same length.
        final_state: State after the last sample, for continuation.
    """
    t0: float
    sample_period: float
    samples_per_period: int
    series: dict[str, np.ndarray]
    final_state: Optional[SimState] = None

    def __post_init__(self) -> None:
        lengths = {len(v) for v in self.series.values()}
        if len(lengths) > 1:
            raise ValueError(f"series lengths differ: {sorted(lengths)}")

    def __getitem__(self, name: str) -> np.ndarray:
        return self.series[name]

    @property
    def names(self) -> list[str]:
        return list(self.series)

    @property
    def n_samples(self) -> int:
        return len(next(iter(self.series.values()))) if self.series else 0

    @property
    def period(self) -> float:
        return self.sample_period * self.samples_per_period

    @property
    def times(self) -> np.ndarray:
        return self.t0 + self.sample_period * np.arange(self.n_samples)

    @property
    def period_markers(self) -> np.ndarray:
        """Start times of every whole switching period in the trace."""
        n_periods = self.n_samples // self.samples_per_period
        return self.t0 + self.period * np.arange(n_periods)


@dataclass(frozen=True)
class Window:
    """Averaging window [start, stop) in seconds."""
    start: float
    stop: float

    @classmethod
    def periods(cls, trace: TransientTrace, first: int, count: int) -> "Window":
        """Window of `count` whole periods starting at period index `first`."""
        return cls(trace.t0 + first * trace.period, trace.t0 + (first + count) * trace.period)

    @classmethod
    def tail(cls, trace: TransientTrace, count: int) -> "Window":
        """The last `count` whole periods of a trace."""
        n_periods = trace.n_samples // trace.samples_per_period
        return cls.periods(trace, n_periods - count, count)


def _window_slice(trace: TransientTrace, window: Optional[Window]) -> slice:
    if window is None:
        window = Window(trace.t0, trace.t0 + trace.n_samples * trace.sample_period)

    period = trace.period
    first = (window.start - trace.t0) / period
    count = (window.stop - window.start) / period
    for value, what in ((first, "start"), (count, "length")):
        if abs(value - round(value)) > _ALIGN_TOL:
            raise WindowError(f"window {what} is not a whole number of periods ({value:.6g})")
    first, count = int(round(first)), int(round(count))
    if count < 1:
        raise WindowError("window must span at least one period")

    i0 = first * trace.samples_per_period
    i1 = (first + count) * trace.samples_per_period
    if i0 < 0 or i1 > trace.n_samples:
        raise WindowError(
            f"window [{window.start:.6g}, {window.stop:.6g}) lies outside the trace"
        )
    return slice(i0, i1)


def periodic_average(trace: TransientTrace, window: Optional[Window] = None) -> dict[str, float]:
    """
    Mean of every series over a period-aligned window.

    Args:
        trace: Trace to average.
        window: Window of whole periods; None means the whole trace.

    Raises:
        WindowError: If the window is not aligned to whole periods.
    """
    sl = _window_slice(trace, window)
    return {name: float(np.mean(values[sl])) for name, values in trace.series.items()}


def ripple_peak_to_peak(trace: TransientTrace, window: Optional[Window] = None) -> dict[str, float]:
    """Peak-to-peak excursion of every voltage series over a window."""
    sl = _window_slice(trace, window)
    return {
        name: float(np.ptp(values[sl]))
        for name, values in trace.series.items()
        if name.startswith("V_")
    }


def write_trace_csv(trace: TransientTrace, path: Union[str, Path]) -> None:
    """Write `time_s,<series...>` with full double precision."""
    names = trace.names
    columns = [trace.times] + [trace.series[name] for name in names]
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["time_s", *names])
        for row in zip(*columns):
            writer.writerow([repr(float(v)) for v in row])


# =============================================================================
# Simulator
# =============================================================================

@dataclass(frozen=True, eq=False)
class PeriodMap:
    """
    One switching period as affine maps of the period-start state.

    Attributes:
        M, m: End state x_T = M x_0 + m.
        A, a: Period mean of the samples = A x_0 + a.
    """
    M: np.ndarray
    m: np.ndarray
    A: np.ndarray
    a: np.ndarray


class Simulator:
    """
    Transient simulator bound to one network and step policy.

    Step operators and period maps are cached per load configuration, so a
    measurement that revisits the same loads pays for factorization once.
    """

    def __init__(self, network: SwitchedNetwork, policy: Optional[StepPolicy] = None):
        self.network = network
        self.policy = policy or StepPolicy()
        self.spec = network.spec
        self.h = self.spec.period / self.policy.steps_per_period
        self.intervals = phase_steps(network, self.policy)

        layout = _layout(network)
        self.labels = layout.labels
        self.size = layout.size
        self._supply_row = layout.current_rows["V_IN"]

        n = network.n_stages
        idx = network.node_index
        self._out = [idx(f"out{i}") for i in range(1, n + 1)]
        self._tap = [idx(f"tap{i}") for i in range(1, n + 1)]
        self._top = [idx(f"top{i}") for i in range(1, n + 1)]
        self._bot = [idx(f"bot{i}") for i in range(1, n + 1)]

        self._phases: list[Phase] = []
        for phase, count in self.intervals:
            self._phases += [phase] * count

        self._operators: dict[tuple[Phase, Loads], tuple[np.ndarray, np.ndarray]] = {}
        self._period_maps: dict[Loads, PeriodMap] = {}

    @property
    def steps_per_period(self) -> int:
        return self.policy.steps_per_period

    @property
    def period(self) -> float:
        return self.spec.period

    def loads(self, loads: Optional[Sequence[Optional[PortLoad]]]) -> Loads:
        return _normalize_loads(self.network, loads)

    def operator(self, phase: Phase, loads: Loads) -> tuple[np.ndarray, np.ndarray]:
        """Cached one-step operator (K, k) for a phase and load set."""
        key = (phase, loads)
        cached = self._operators.get(key)
        if cached is not None:
            return cached

        system = assemble_phase_system(self.network, phase, loads)
        c_h = system.C / self.h
        lu = linalg.lu_factor(system.G + c_h)
        K = linalg.lu_solve(lu, c_h)
        k = linalg.lu_solve(lu, system.b)
        if not (np.all(np.isfinite(K)) and np.all(np.isfinite(k))):
            raise AssemblyError(f"singular {phase.value}-phase system")

        cached = self._operators[key] = (K, k)
        return cached

    def period_map(self, loads: Loads) -> PeriodMap:
        """Compose one whole period of steps into affine maps."""
        cached = self._period_maps.get(loads)
        if cached is not None:
            return cached

        F = np.eye(self.size)
        f = np.zeros(self.size)
        sum_F = np.zeros_like(F)
        sum_f = np.zeros_like(f)
        for phase, count in self.intervals:
            K, k = self.operator(phase, loads)
            for _ in range(count):
                sum_F += F
                sum_f += f
                F = K @ F
                f = K @ f + k

        s = self.steps_per_period
        pm = PeriodMap(M=F, m=f, A=sum_F / s, a=sum_f / s)
        self._period_maps[loads] = pm
        return pm

    def initial_state(self, zero: bool = False) -> SimState:
        """
        Default start: supply side and top plates at V_in, bottom plates
        and outputs at V_in/2. With zero=True every capacitor starts empty.
        """
        x = np.zeros(self.size)
        if not zero:
            v_in = self.spec.v_in
            half = [*self._bot, *self._out]
            for i, name in enumerate(self.network.nodes):
                x[i] = v_in / 2 if i in half else v_in
        return SimState(x=x, time=0.0, phase=Phase.CHARGE, labels=self.labels)

    def _start(self, initial: Union[SimState, np.ndarray, None]) -> tuple[np.ndarray, float]:
        if initial is None:
            return self.initial_state().x.copy(), 0.0
        if isinstance(initial, SimState):
            return initial.x.copy(), initial.time
        return np.asarray(initial, dtype=float).copy(), 0.0

    def _check_finite(self, x: np.ndarray, time: float) -> None:
        if not np.all(np.isfinite(x)):
            raise DivergenceError("non-finite state", time)

    # -------------------------------------------------------------------------
    # Steady state
    # -------------------------------------------------------------------------

    def periodic_steady_state(self, loads: Optional[Sequence[Optional[PortLoad]]] = None) -> SimState:
        """Shooting solve of (I - M) x = m at a period boundary."""
        pm = self.period_map(self.loads(loads))
        x = np.linalg.solve(np.eye(self.size) - pm.M, pm.m)
        self._check_finite(x, 0.0)
        return SimState(x=x, time=0.0, phase=Phase.CHARGE, labels=self.labels)

    def detect_steady_state(
        self,
        loads: Optional[Sequence[Optional[PortLoad]]],
        tolerance: float,
        initial: Union[SimState, np.ndarray, None] = None,
        max_periods: int = DEFAULT_MAX_PERIODS,
    ) -> tuple[SimState, int]:
        """
        Step whole periods until every output's period mean moves by less
        than `tolerance` between consecutive periods.

        Returns:
            Settled state (at a period boundary) and periods simulated.

        Raises:
            ValueError: If tolerance is not positive.
            NonConvergenceError: If max_periods is exceeded.
        """
        if not tolerance > 0:
            raise ValueError(f"tolerance must be positive, got {tolerance!r}")

        pm = self.period_map(self.loads(loads))
        A_out = pm.A[self._out]
        a_out = pm.a[self._out]
        x, t0 = self._start(initial)

        previous: Optional[np.ndarray] = None
        residual = math.inf
        for p in range(1, max_periods + 1):
            mean = A_out @ x + a_out
            x = pm.M @ x + pm.m
            self._check_finite(x, t0 + p * self.period)
            if previous is not None:
                residual = float(np.max(np.abs(mean - previous)))
                if residual < tolerance:
                    logger.debug(f"Settled after {p} periods (residual {residual:.3g} V)")
                    state = SimState(
                        x=x, time=t0 + p * self.period, phase=Phase.CHARGE, labels=self.labels
                    )
                    return state, p
            previous = mean

        raise NonConvergenceError(residual, max_periods)

    # -------------------------------------------------------------------------
    # Transient runs
    # -------------------------------------------------------------------------

    def _schedule(self, loads: Union[LoadSpec, None]) -> list[tuple[int, Loads]]:
        if isinstance(loads, LoadSchedule):
            changes = loads.change_steps(self.h)
            return [(step, self.loads(seg_loads)) for step, seg_loads in changes]
        return [(0, self.loads(loads))]

    def run(
        self,
        loads: Union[LoadSpec, None],
        duration: float,
        initial: Union[SimState, np.ndarray, None] = None,
    ) -> TransientTrace:
        """Step-resolved transient run; see run_transient()."""
        if duration < 0:
            raise ValueError(f"duration must be non-negative, got {duration!r}")

        n_steps = int(round(duration / self.h))
        x, t0 = self._start(initial)
        offset = int(round(t0 / self.h))
        changes = self._schedule(loads)
        s = self.steps_per_period

        X = np.empty((n_steps + 1, self.size))
        X[0] = x
        load_at_step: list[tuple[int, int, Loads]] = []

        n = 0
        ci = 0
        while n < n_steps:
            while ci + 1 < len(changes) and changes[ci + 1][0] <= n:
                ci += 1
            current = changes[ci][1]
            pos = (offset + n) % s
            phase = self._phases[pos]
            run_end = n + 1
            while (
                run_end < n_steps
                and self._phases[(offset + run_end) % s] == phase
                and not (ci + 1 < len(changes) and changes[ci + 1][0] <= run_end)
            ):
                run_end += 1

            K, k = self.operator(phase, current)
            for i in range(n, run_end):
                x = K @ x + k
                X[i + 1] = x
            self._check_finite(x, t0 + run_end * self.h)
            if load_at_step and load_at_step[-1][2] == current and load_at_step[-1][1] == n:
                load_at_step[-1] = (load_at_step[-1][0], run_end, current)
            else:
                load_at_step.append((n, run_end, current))
            n = run_end

        final_phase = self._phases[(offset + n_steps) % s]
        final = SimState(x=x, time=t0 + n_steps * self.h, phase=final_phase, labels=self.labels)
        return TransientTrace(
            t0=t0,
            sample_period=self.h,
            samples_per_period=s,
            series=self._step_series(X, load_at_step),
            final_state=final,
        )

    def _step_series(
        self, X: np.ndarray, load_at_step: list[tuple[int, int, Loads]]
    ) -> dict[str, np.ndarray]:
        now, nxt = X[:-1], X[1:]
        n_steps = len(now)
        spec = self.spec
        series: dict[str, np.ndarray] = {}

        for i in range(self.network.n_stages):
            label = i + 1
            series[f"V_OUT{label}"] = now[:, self._out[i]].copy()
            series[f"V_IN{label}"] = now[:, self._tap[i]].copy()
            vc = X[:, self._top[i]] - X[:, self._bot[i]]
            series[f"V_CFLY{label}"] = vc[:-1].copy()
            series[f"I_CFLY{label}"] = spec.c_fly[i] * np.diff(vc) / self.h

            current = np.zeros(n_steps)
            for start, stop, loads in load_at_step:
                load = loads[i]
                if load is None:
                    continue
                if load.kind == LoadKind.RESISTOR:
                    current[start:stop] = nxt[start:stop, self._out[i]] / load.value
                else:
                    current[start:stop] = load.value
            series[f"I_LOAD{label}"] = current

        series["I_SUPPLY"] = -nxt[:, self._supply_row].copy()
        return series

    def run_period_means(
        self,
        loads: Union[LoadSpec, None],
        duration: float,
        initial: Union[SimState, np.ndarray, None] = None,
    ) -> TransientTrace:
        """
        Period-resolved run: one sample per switching period holding the
        exact mean of that period's step samples.

        Periods with constant loads go through the cached period map;
        periods containing a load change are stepped individually.
        """
        n_periods = max(0, math.ceil(duration / self.period - _ALIGN_TOL))
        x, t0 = self._start(initial)
        if abs(t0 / self.period - round(t0 / self.period)) > _ALIGN_TOL:
            raise WindowError("period-mean runs must start on a period boundary")

        changes = self._schedule(loads)
        s = self.steps_per_period
        means = np.empty((n_periods, self.size))

        ci = 0
        for p in range(n_periods):
            g0, g1 = p * s, (p + 1) * s
            while ci + 1 < len(changes) and changes[ci + 1][0] <= g0:
                ci += 1

            if ci + 1 < len(changes) and changes[ci + 1][0] < g1:
                acc = np.zeros(self.size)
                for step in range(s):
                    while ci + 1 < len(changes) and changes[ci + 1][0] <= g0 + step:
                        ci += 1
                    acc += x
                    K, k = self.operator(self._phases[step], changes[ci][1])
                    x = K @ x + k
                means[p] = acc / s
            else:
                pm = self.period_map(changes[ci][1])
                means[p] = pm.A @ x + pm.a
                x = pm.M @ x + pm.m
            self._check_finite(x, t0 + (p + 1) * self.period)

        series: dict[str, np.ndarray] = {}
        for i in range(self.network.n_stages):
            label = i + 1
            series[f"V_OUT{label}"] = means[:, self._out[i]].copy()
            series[f"V_IN{label}"] = means[:, self._tap[i]].copy()
            series[f"V_CFLY{label}"] = means[:, self._top[i]] - means[:, self._bot[i]]
        series["I_SUPPLY"] = -means[:, self._supply_row]

        final = SimState(
            x=x, time=t0 + n_periods * self.period, phase=Phase.CHARGE, labels=self.labels
        )
        return TransientTrace(
            t0=t0,
            sample_period=self.period,
            samples_per_period=1,
            series=series,
            final_state=final,
        )


# =============================================================================
# Module-level API
# =============================================================================

def run_transient(
    network: SwitchedNetwork,
    loads: Union[LoadSpec, None],
    duration: float,
    step_policy: Optional[StepPolicy] = None,
    initial: Union[SimState, np.ndarray, None] = None,
) -> TransientTrace:
    """
    Integrate the switched network for `duration` seconds.

    Args:
        network: Network from build_ladder().
        loads: Per-port loads or a LoadSchedule; None leaves all ports open.
        duration: Seconds; rounded to whole steps. Zero gives an empty trace.
        step_policy: Steps per period (default 512).
        initial: Starting state; defaults to the precharged state.

    Returns:
        Step-resolved trace of output, input-tap and flying-capacitor
        voltages plus flying-capacitor, load and supply currents.

    Raises:
        DivergenceError: If the state becomes non-finite.
    """
    return Simulator(network, step_policy).run(loads, duration, initial)


def detect_steady_state(
    network: SwitchedNetwork,
    loads: Optional[Sequence[Optional[PortLoad]]],
    tolerance: float,
    step_policy: Optional[StepPolicy] = None,
    initial: Union[SimState, np.ndarray, None] = None,
    max_periods: int = DEFAULT_MAX_PERIODS,
) -> tuple[SimState, int]:
    """Simulate until per-period output means move less than `tolerance`."""
    return Simulator(network, step_policy).detect_steady_state(
        loads, tolerance, initial=initial, max_periods=max_periods
    )


def periodic_steady_state(
    network: SwitchedNetwork,
    loads: Optional[Sequence[Optional[PortLoad]]] = None,
    step_policy: Optional[StepPolicy] = None,
) -> SimState:
    """Exact periodic state of the discretized network at a period boundary."""
    return Simulator(network, step_policy).periodic_steady_state(loads)
