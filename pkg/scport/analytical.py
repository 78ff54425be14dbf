"""
Analytical R-parameter model of the ladder converter.

Each output port j is excited with a source V_Sj while the input supply is
shorted; the averaged port currents give column j of the Y-parameter
matrix (Y_ij = -I_OUTi / V_Sj) and R = Y^-1.

Two limits are modelled:
- FSL (fast switching): constant phase currents set by the loop
  resistances. Per stage k, with shared supply-path resistance Rnet:
      charge:     2r i_k - Vc_k + (Rnet i)_k = V_Sk
      discharge:  2r i'_k + Vc_k             = V_Sk
      balance:    i_k = i'_k
- SSL (slow switching): capacitors equilibrate every phase and each
  half-period moves 4 C_k V_Sk f of charge; resistances drop out.

In both cases the average port current is I_OUT = -(i + i') / 2.
"""

import csv
from dataclasses import dataclass
from enum import Enum
from pathlib import Path
from typing import Optional, Sequence, Union

import numpy as np

from scport.circuit import AnalysisError, ConverterSpec, ensure_valid
from scport.logging_config import get_logger

logger = get_logger(__name__)

# Condition number above which a linear system is treated as singular
SINGULAR_COND = 1e12

# Relative agreement demanded between numeric and closed-form matrices
CLOSED_FORM_RTOL = 1e-9


class Regime(str, Enum):
    FSL = "fsl"
    SSL = "ssl"


@dataclass(frozen=True, eq=False)
class PhaseCurrents:
    """
    Half-period average currents of every stage.

    Attributes:
        charge: i_k, charge-phase current (out -> bottom plate -> tap).
        discharge: i'_k, discharge-phase current (out -> top plate -> ground).
        v_cap: Flying-capacitor voltage (zero in SSL).
        regime: Model that produced the currents.
    """
    charge: np.ndarray
    discharge: np.ndarray
    v_cap: np.ndarray
    regime: Regime


@dataclass(frozen=True, eq=False)
class YMatrix:
    values: np.ndarray
    regime: Regime

    @property
    def order(self) -> int:
        return self.values.shape[0]


@dataclass(frozen=True, eq=False)
class RMatrix:
    """
    Multi-port resistance parameters with target voltages.

    V_OUT = V_TR - R @ I_OUT.

    Attributes:
        values: N x N ohms.
        v_tr: Target (no-load) voltages, volts.
        source: "fsl", "ssl", "combined" or "extracted".
    """
    values: np.ndarray
    v_tr: np.ndarray
    source: str

    @property
    def order(self) -> int:
        return self.values.shape[0]

    def is_symmetric(self, rtol: float = 1e-12) -> bool:
        scale = float(np.max(np.abs(self.values)))
        return bool(np.all(np.abs(self.values - self.values.T) <= rtol * scale))

    def output_voltages(self, i_out: Sequence[float]) -> np.ndarray:
        """Average output voltages for the given port currents."""
        return self.v_tr - self.values @ np.asarray(i_out, dtype=float)


# =============================================================================
# Phase Currents
# =============================================================================

def shared_path_matrix(spec: ConverterSpec) -> np.ndarray:
    """
    Supply-path resistance shared by the charge loops of stages k and l.

    Entry (k, l) = R_offchip + sum of segments 1..min(k, l), plus the tap
    stub of stage k on the diagonal.
    """
    n = spec.n_stages
    cumulative = np.cumsum(spec.r_par)
    depth = np.minimum.outer(np.arange(n), np.arange(n))
    return spec.r_offchip + cumulative[depth] + np.diag(spec.taps)


def _excitation(spec: ConverterSpec, v_s: Sequence[float]) -> np.ndarray:
    v = np.asarray(v_s, dtype=float)
    if v.shape != (spec.n_stages,):
        raise ValueError(f"expected {spec.n_stages} port voltages, got shape {v.shape}")
    return v


def fsl_currents(spec: ConverterSpec, v_s: Sequence[float]) -> PhaseCurrents:
    """
    Solve the 3N-unknown FSL loop system for the given port excitation.

    Raises:
        AnalysisError: If the system is singular (e.g. every resistance zero).
    """
    ensure_valid(spec)
    v = _excitation(spec, v_s)
    n = spec.n_stages
    eye = np.eye(n)
    zero = np.zeros((n, n))
    two_r = 2 * spec.r_switch * eye

    system = np.block([
        [two_r + shared_path_matrix(spec), zero, -eye],
        [zero, two_r, eye],
        [eye, -eye, zero],
    ])
    rhs = np.concatenate([v, v, np.zeros(n)])

    cond = np.linalg.cond(system)
    if not cond < SINGULAR_COND:
        raise AnalysisError(
            f"singular FSL loop system (condition {cond:.3g}); "
            "switch and supply-path resistances cannot all be zero"
        )

    solution = np.linalg.solve(system, rhs)
    return PhaseCurrents(
        charge=solution[:n],
        discharge=solution[n:2 * n],
        v_cap=solution[2 * n:],
        regime=Regime.FSL,
    )


def ssl_currents(spec: ConverterSpec, v_s: Sequence[float]) -> PhaseCurrents:
    """Charge-transfer currents in the slow switching limit: i = i' = 4 C V f."""
    ensure_valid(spec)
    v = _excitation(spec, v_s)
    current = 4 * np.asarray(spec.c_fly) * v * spec.f_sw
    return PhaseCurrents(
        charge=current,
        discharge=current.copy(),
        v_cap=np.zeros(spec.n_stages),
        regime=Regime.SSL,
    )


def average_port_currents(currents: PhaseCurrents) -> np.ndarray:
    """I_OUT = -(i + i') / 2, the period-average current out of each port."""
    return -(currents.charge + currents.discharge) / 2


# =============================================================================
# Y and R Matrices
# =============================================================================

def y_matrix(spec: ConverterSpec, regime: Regime) -> YMatrix:
    """Column j from a 1 V source at port j with every other port at 0 V."""
    solve = fsl_currents if regime == Regime.FSL else ssl_currents
    n = spec.n_stages
    y = np.zeros((n, n))
    for j in range(n):
        v_s = np.zeros(n)
        v_s[j] = 1.0
        y[:, j] = -average_port_currents(solve(spec, v_s)) / v_s[j]
    return YMatrix(values=y, regime=regime)


def target_voltages(spec: ConverterSpec) -> np.ndarray:
    """No-load output of an ideal 2:1 stage: V_in / 2 at every port."""
    return np.full(spec.n_stages, spec.v_in / 2)


def r_matrix(spec: ConverterSpec, regime: Regime) -> RMatrix:
    """
    R = Y^-1 for the chosen regime.

    When a closed form exists for the spec it is checked against the
    numeric result.

    Raises:
        AnalysisError: If Y is singular or the closed form disagrees.
    """
    y = y_matrix(spec, regime).values
    cond = np.linalg.cond(y)
    if not cond < SINGULAR_COND:
        raise AnalysisError(f"singular Y matrix (condition {cond:.3g})")

    values = np.linalg.inv(y)
    if closed_form_check(spec, values, regime) is False:
        raise AnalysisError(f"{regime.value.upper()} matrix disagrees with its closed form")

    logger.with_context(regime=regime.value).debug(
        f"R-matrix for {spec.n_stages} stages computed"
    )
    return RMatrix(values=values, v_tr=target_voltages(spec), source=regime.value)


def closed_form_fsl(spec: ConverterSpec) -> Optional[np.ndarray]:
    """
    Simplified FSL matrix of the three-stage ladder with equal segments.

    Returns:
        The closed form plus R_offchip/2 in every entry, or None when the
        spec is outside the family it covers.
    """
    if spec.n_stages != 3 or len(set(spec.r_par)) != 1 or spec.taps != spec.r_par:
        return None
    rp = spec.r_par[0]
    two_r = 2 * spec.r_switch
    base = np.array([
        [rp + two_r, rp / 2, rp / 2],
        [rp / 2, 1.5 * rp + two_r, rp],
        [rp / 2, rp, 2 * rp + two_r],
    ])
    return base + spec.r_offchip / 2


def closed_form_ssl(spec: ConverterSpec) -> np.ndarray:
    """SSL matrix: diag(1 / (4 C_i f)), no coupling."""
    return np.diag(1.0 / (4 * np.asarray(spec.c_fly) * spec.f_sw))


def closed_form_check(
    spec: ConverterSpec,
    values: Union[RMatrix, np.ndarray],
    regime: Regime,
) -> Optional[bool]:
    """
    Compare a matrix with the applicable closed form.

    Returns:
        True/False for agreement within 1e-9 relative, None when no closed
        form applies.
    """
    expected = closed_form_fsl(spec) if regime == Regime.FSL else closed_form_ssl(spec)
    if expected is None:
        return None
    actual = values.values if isinstance(values, RMatrix) else values
    scale = float(np.max(np.abs(expected)))
    return bool(np.all(np.abs(actual - expected) <= CLOSED_FORM_RTOL * scale))


def combined_estimate(spec: ConverterSpec) -> RMatrix:
    """
    Approximate finite-frequency matrix R_FSL + R_SSL.

    This is a convenience bound, not an exact model: the true transition
    between the limits has no closed form, and the transient engine is the
    reference there.
    """
    fsl = r_matrix(spec, Regime.FSL)
    ssl = r_matrix(spec, Regime.SSL)
    return RMatrix(values=fsl.values + ssl.values, v_tr=fsl.v_tr, source="combined")


def write_matrix_csv(rmatrix: RMatrix, path: Union[str, Path]) -> None:
    """N rows `R<i>,<ohms...>` followed by one `V_TR,<volts...>` row."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        for i, row in enumerate(rmatrix.values, start=1):
            writer.writerow([f"R{i}", *(repr(float(v)) for v in row)])
        writer.writerow(["V_TR", *(repr(float(v)) for v in rmatrix.v_tr)])
