"""
Numeric defaults and reference values for scport.

This module is the single source of truth for engine defaults and for the
reference numbers the test-suite and the CLI comparison tables
check against. Engine defaults can be customized via environment variables
(see config.py).

Reference values (three-stage 2:1 ladder, V_in = 1 V, r = 0.1 Ω,
R_par = 0.01 Ω, C = 1 µF, C_O = 10 µF, f = 10 MHz):
    - FSL closed form:       [[210, 5, 5], [5, 215, 10], [5, 10, 220]] mΩ
    - Simulated extraction:  [[216.9, 5.107, 5.112], [5.102, 222.0, 10.21],
                              [5.113, 10.21, 227.1]] mΩ
    - Covert amplitudes:     47.9 mV at the source, 1.12 mV at the sinks
"""

try:
    from scport.config import config
    _use_config = True
except ImportError:
    _use_config = False


# =============================================================================
# Engine Defaults
# =============================================================================

if _use_config:
    DEFAULT_STEPS_PER_PERIOD: int = config.STEPS_PER_PERIOD
    DEFAULT_DEAD_TIME_FRACTION: float = config.DEAD_TIME_FRACTION
    DEFAULT_STEADY_TOLERANCE: float = config.STEADY_TOLERANCE
    DEFAULT_MAX_PERIODS: int = config.MAX_PERIODS
    DEFAULT_WINDOW_PERIODS: int = config.WINDOW_PERIODS
    DEFAULT_I_TEST: float = config.I_TEST
else:
    DEFAULT_STEPS_PER_PERIOD = 512
    DEFAULT_DEAD_TIME_FRACTION = 0.02
    DEFAULT_STEADY_TOLERANCE = 10e-6
    DEFAULT_MAX_PERIODS = 20000
    DEFAULT_WINDOW_PERIODS = 8
    DEFAULT_I_TEST = 10e-3

MIN_STEPS_PER_PERIOD: int = 200
DEFAULT_C_PARASITIC: float = 1e-12  # farads, per flying-capacitor plate

# Open-circuit emulation must dwarf the test resistor
MIN_OPEN_TO_FIXED_RATIO: float = 1e4

# Output below this fraction of V_TR means the stage left normal operation
NONLINEAR_FRACTION: float = 0.1


# =============================================================================
# Reference Values (ohms / volts / bits per second)
# =============================================================================

REFERENCE_FSL_MATRIX: tuple[tuple[float, ...], ...] = (
    (0.210, 0.005, 0.005),
    (0.005, 0.215, 0.010),
    (0.005, 0.010, 0.220),
)

REFERENCE_EXTRACTED_MATRIX: tuple[tuple[float, ...], ...] = (
    (0.2169, 0.005107, 0.005112),
    (0.005102, 0.2220, 0.01021),
    (0.005113, 0.01021, 0.2271),
)

REFERENCE_SOURCE_DELTA_V: float = 47.9e-3
REFERENCE_SINK_DELTA_V: float = 1.12e-3
REFERENCE_THROUGHPUT: float = 40e3
REFERENCE_BANDWIDTH_OUTPUT: float = 95e3
REFERENCE_BANDWIDTH_INPUT: float = 140e3
REFERENCE_RESOLUTION: float = 2e-3

# Covert channel load levels
DEFAULT_R_LIGHT: float = 100.0  # bit '1'
DEFAULT_R_HEAVY: float = 1.0    # bit '0'
DEFAULT_IDLE_LOAD: float = 100.0
DEFAULT_SETTLE_FRACTION: float = 0.1
