"""
Simulation-based R-parameter extraction.

Measurement protocol, N+1 steady-state runs:
1. All port currents zero -> V_TR (target voltages).
2. For each port j, sink I_test from port j only -> column j:
       R_ij = (V_OUTi - V_TRi) / I_Sj,   I_Sj = -I_OUTj = -I_test

Each run is seeded with the periodic steady state of its load set,
confirmed with detect_steady_state(), then averaged over a window of whole
switching periods.

The resistor-emulation variant replaces the sources with resistors:
R_open for "zero current" and R_fixed for the test port, using the
measured I_OUTj = V_OUTj / R_fixed as the injected current.
"""

import json
import logging
from dataclasses import asdict, dataclass, field
from enum import Enum
from multiprocessing import Pool
from pathlib import Path
from typing import Any, Optional, Union

import numpy as np

from scport.analytical import RMatrix
from scport.circuit import SwitchedNetwork
from scport.constants import (
    DEFAULT_I_TEST,
    DEFAULT_MAX_PERIODS,
    DEFAULT_STEADY_TOLERANCE,
    DEFAULT_WINDOW_PERIODS,
    MIN_OPEN_TO_FIXED_RATIO,
    NONLINEAR_FRACTION,
)
from scport.engine import (
    Loads,
    PortLoad,
    Simulator,
    StepPolicy,
    no_loads,
    periodic_average,
    resistive_loads,
)
from scport.logging_config import get_logger, sweep_key_var

logger = logging.getLogger(__name__)


class ExtractionMode(str, Enum):
    CURRENT = "current"
    RESISTOR = "resistor"


@dataclass(frozen=True)
class MeasurementSettings:
    """Knobs of the measurement protocol."""
    i_test: float = DEFAULT_I_TEST
    tolerance: float = DEFAULT_STEADY_TOLERANCE
    window_periods: int = DEFAULT_WINDOW_PERIODS
    max_periods: int = DEFAULT_MAX_PERIODS
    policy: StepPolicy = field(default_factory=StepPolicy)


@dataclass(frozen=True)
class Provenance:
    """How an extracted matrix was obtained."""
    mode: ExtractionMode
    f_sw: float
    n_stages: int
    steps_per_period: int
    window_periods: int
    tolerance: float
    i_test: Optional[float] = None
    r_fixed: Optional[float] = None
    r_open: Optional[float] = None
    flagged_columns: tuple[int, ...] = ()

    def to_dict(self) -> dict[str, Any]:
        data = asdict(self)
        data["mode"] = self.mode.value
        data["flagged_columns"] = list(self.flagged_columns)
        return data


@dataclass(frozen=True, eq=False)
class Extraction:
    matrix: RMatrix
    provenance: Provenance

    @property
    def flagged(self) -> bool:
        return bool(self.provenance.flagged_columns)


@dataclass(frozen=True, eq=False)
class ColumnMeasurement:
    """
    One column of the extracted matrix.

    Attributes:
        index: 0-based port index j.
        values: R_ij for every i, ohms.
        outputs: Averaged output voltages of the run.
        injected: I_Sj actually used, amps.
        flagged: Output left the normal operating region.
    """
    index: int
    values: np.ndarray
    outputs: np.ndarray
    injected: float
    flagged: bool = False


# =============================================================================
# Measurement Primitives
# =============================================================================

def measure_outputs(sim: Simulator, loads: Loads, settings: MeasurementSettings) -> np.ndarray:
    """Settled, period-averaged output voltages for one load set."""
    seed = sim.periodic_steady_state(loads)
    settled, periods = sim.detect_steady_state(
        loads, settings.tolerance, initial=seed, max_periods=settings.max_periods
    )
    trace = sim.run(loads, settings.window_periods * sim.period, initial=settled)
    averages = periodic_average(trace)
    logger.debug(f"Measured outputs after {periods} confirmation periods")
    return np.array([averages[f"V_OUT{i}"] for i in range(1, sim.network.n_stages + 1)])


def _check_region(outputs: np.ndarray, v_tr: np.ndarray, column: int) -> bool:
    collapsed = outputs < NONLINEAR_FRACTION * v_tr
    if np.any(collapsed):
        get_logger(__name__).with_context(column=column + 1).warning(
            "Output below "
            f"{NONLINEAR_FRACTION:.0%} of V_TR: nonlinear region, result flagged"
        )
        return True
    return False


def _simulator(network: SwitchedNetwork, settings: MeasurementSettings) -> Simulator:
    return Simulator(network, settings.policy)


# =============================================================================
# Current-Source Protocol
# =============================================================================

def extract_targets(
    network: SwitchedNetwork,
    settings: Optional[MeasurementSettings] = None,
    simulator: Optional[Simulator] = None,
) -> np.ndarray:
    """V_TR: steady-state averaged outputs with every port current zero."""
    settings = settings or MeasurementSettings()
    sim = simulator or _simulator(network, settings)
    v_tr = measure_outputs(sim, no_loads(network.n_stages), settings)
    logger.info(f"Target voltages: {', '.join(f'{v:.6f}' for v in v_tr)} V")
    return v_tr


def extract_r_column(
    network: SwitchedNetwork,
    j: int,
    i_test: Optional[float] = None,
    settings: Optional[MeasurementSettings] = None,
    v_tr: Optional[np.ndarray] = None,
    simulator: Optional[Simulator] = None,
) -> ColumnMeasurement:
    """
    Column j (0-based) from a current sink of I_test at port j.

    The sink draws I_test out of the port, so I_OUTj = I_test and the
    injected current is I_Sj = -I_test.
    """
    settings = settings or MeasurementSettings()
    i_test = settings.i_test if i_test is None else i_test
    if not i_test > 0:
        raise ValueError(f"i_test must be positive, got {i_test!r}")
    n = network.n_stages
    if not 0 <= j < n:
        raise ValueError(f"port index {j} out of range for {n} stages")

    sim = simulator or _simulator(network, settings)
    if v_tr is None:
        v_tr = extract_targets(network, settings, sim)

    loads = list(no_loads(n))
    loads[j] = PortLoad.current(i_test)
    outputs = measure_outputs(sim, tuple(loads), settings)

    injected = -i_test
    values = (outputs - v_tr) / injected
    flagged = _check_region(outputs, v_tr, j)
    get_logger(__name__).with_context(column=j + 1, mode="current").info(
        f"Column {j + 1}: {', '.join(f'{v * 1e3:.4f}' for v in values)} mΩ"
    )
    return ColumnMeasurement(j, values, outputs, injected, flagged)


def _column_worker(args: tuple[SwitchedNetwork, int, float, MeasurementSettings, np.ndarray]) -> ColumnMeasurement:
    network, j, i_test, settings, v_tr = args
    sweep_key_var.set(f"column={j + 1}")
    return extract_r_column(network, j, i_test, settings, v_tr)


def extract_r_matrix(
    network: SwitchedNetwork,
    i_test: Optional[float] = None,
    settings: Optional[MeasurementSettings] = None,
    jobs: int = 1,
) -> Extraction:
    """
    Full matrix: extract_targets() then one column per port.

    Args:
        network: Network to measure.
        i_test: Test current; defaults to settings.i_test (10 mA).
        settings: Measurement settings.
        jobs: Worker processes for the column runs.
    """
    settings = settings or MeasurementSettings()
    i_test = settings.i_test if i_test is None else i_test
    n = network.n_stages

    sim = _simulator(network, settings)
    v_tr = extract_targets(network, settings, sim)

    if jobs > 1 and n > 1:
        with Pool(processes=min(jobs, n)) as pool:
            columns = pool.map(
                _column_worker, [(network, j, i_test, settings, v_tr) for j in range(n)]
            )
    else:
        columns = [extract_r_column(network, j, i_test, settings, v_tr, sim) for j in range(n)]
    columns.sort(key=lambda c: c.index)

    values = np.column_stack([c.values for c in columns])
    provenance = Provenance(
        mode=ExtractionMode.CURRENT,
        f_sw=network.spec.f_sw,
        n_stages=n,
        steps_per_period=settings.policy.steps_per_period,
        window_periods=settings.window_periods,
        tolerance=settings.tolerance,
        i_test=i_test,
        flagged_columns=tuple(c.index + 1 for c in columns if c.flagged),
    )
    logger.info(f"Extracted {n}x{n} matrix at f={network.spec.f_sw:.6g} Hz")
    return Extraction(RMatrix(values=values, v_tr=v_tr, source="extracted"), provenance)


# =============================================================================
# Resistor-Emulation Protocol
# =============================================================================

def extract_with_resistors(
    network: SwitchedNetwork,
    r_fixed: float,
    r_open: float,
    settings: Optional[MeasurementSettings] = None,
) -> Extraction:
    """
    Extraction with load resistors in place of current sources.

    Raises:
        ValueError: If r_open < 1e4 * r_fixed.
    """
    if not r_fixed > 0:
        raise ValueError(f"r_fixed must be positive, got {r_fixed!r}")
    if not r_open >= MIN_OPEN_TO_FIXED_RATIO * r_fixed:
        raise ValueError(
            f"r_open must be at least {MIN_OPEN_TO_FIXED_RATIO:g} x r_fixed "
            f"(got {r_open!r} vs {r_fixed!r})"
        )

    settings = settings or MeasurementSettings()
    n = network.n_stages
    sim = _simulator(network, settings)

    open_loads = [r_open] * n
    v_tr = measure_outputs(sim, resistive_loads(open_loads), settings)

    values = np.zeros((n, n))
    flagged: list[int] = []
    for j in range(n):
        ohms = list(open_loads)
        ohms[j] = r_fixed
        outputs = measure_outputs(sim, resistive_loads(ohms), settings)
        injected = -outputs[j] / r_fixed
        values[:, j] = (outputs - v_tr) / injected
        if _check_region(outputs, v_tr, j):
            flagged.append(j + 1)
        get_logger(__name__).with_context(column=j + 1, mode="resistor").info(
            f"Column {j + 1}: {', '.join(f'{v * 1e3:.4f}' for v in values[:, j])} mΩ"
        )

    provenance = Provenance(
        mode=ExtractionMode.RESISTOR,
        f_sw=network.spec.f_sw,
        n_stages=n,
        steps_per_period=settings.policy.steps_per_period,
        window_periods=settings.window_periods,
        tolerance=settings.tolerance,
        r_fixed=r_fixed,
        r_open=r_open,
        flagged_columns=tuple(flagged),
    )
    return Extraction(RMatrix(values=values, v_tr=v_tr, source="extracted"), provenance)


def write_provenance(provenance: Provenance, path: Union[str, Path]) -> None:
    """JSON sidecar with sorted keys."""
    with open(path, "w") as fh:
        json.dump(provenance.to_dict(), fh, indent=2, sort_keys=True)
        fh.write("\n")
