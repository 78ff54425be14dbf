"""
Centralized configuration for scport.

Configuration is loaded from (in order of precedence):
1. Environment variables
2. .env file (if exists)
3. Default values

Scenario parameters (converter, loads, channel) come from the scenario
file handled by config_file.py; this module only holds process-level
settings and the numeric defaults shared by every command.

Usage:
    from scport.config import config
    print(config.STEPS_PER_PERIOD)
    print(config.reference_case.f_sw)
"""

import os
from dataclasses import dataclass, field
from pathlib import Path

# Load .env file if it exists
try:
    from dotenv import load_dotenv
    # Check scport/.env first, then project root .env
    env_path = Path(__file__).parent / ".env"
    if not env_path.exists():
        env_path = Path(__file__).parent.parent / ".env"
    if env_path.exists():
        load_dotenv(env_path)
except ImportError:
    pass  # python-dotenv not installed, use env vars only


def get_env(key: str, default: str = "") -> str:
    """Get environment variable with default."""
    return os.environ.get(key, default)


def get_env_int(key: str, default: int = 0) -> int:
    """Get integer environment variable."""
    try:
        return int(os.environ.get(key, str(default)))
    except ValueError:
        return default


def get_env_float(key: str, default: float = 0.0) -> float:
    """Get float environment variable."""
    try:
        return float(os.environ.get(key, repr(default)))
    except ValueError:
        return default


@dataclass
class ReferenceCaseDefaults:
    """Parameters of the three-stage 2:1 reference case study."""
    n_stages: int = 3
    v_in: float = 1.0
    r_switch: float = 0.1
    c_fly: float = 1e-6
    c_out: float = 10e-6
    r_par: float = 0.01
    f_sw: float = 10e6


@dataclass
class ToolConfig:
    """Process-level configuration."""
    LOG_LEVEL: str = "INFO"

    # Environment (development, production); production switches logs to JSON
    ENVIRONMENT: str = "development"

    # Transient engine
    STEPS_PER_PERIOD: int = 512
    DEAD_TIME_FRACTION: float = 0.02
    STEADY_TOLERANCE: float = 10e-6  # volts per period
    MAX_PERIODS: int = 20000

    # Measurement protocol
    WINDOW_PERIODS: int = 8
    I_TEST: float = 10e-3  # amps

    # Sweep workers (1 = sequential)
    JOBS: int = 1

    # Error tracking (Sentry)
    SENTRY_DSN: str = ""

    reference_case: ReferenceCaseDefaults = field(default_factory=ReferenceCaseDefaults)

    @classmethod
    def from_env(cls) -> "ToolConfig":
        """Load configuration from environment variables."""
        return cls(
            LOG_LEVEL=get_env("LOG_LEVEL", "INFO"),
            ENVIRONMENT=get_env("ENVIRONMENT", "development"),
            STEPS_PER_PERIOD=get_env_int("SCPORT_STEPS_PER_PERIOD", 512),
            DEAD_TIME_FRACTION=get_env_float("SCPORT_DEAD_TIME_FRACTION", 0.02),
            STEADY_TOLERANCE=get_env_float("SCPORT_STEADY_TOLERANCE", 10e-6),
            MAX_PERIODS=get_env_int("SCPORT_MAX_PERIODS", 20000),
            WINDOW_PERIODS=get_env_int("SCPORT_WINDOW_PERIODS", 8),
            I_TEST=get_env_float("SCPORT_I_TEST", 10e-3),
            JOBS=get_env_int("SCPORT_JOBS", 1),
            SENTRY_DSN=get_env("SENTRY_DSN", ""),
            reference_case=ReferenceCaseDefaults(
                v_in=get_env_float("SCPORT_REF_V_IN", 1.0),
                f_sw=get_env_float("SCPORT_REF_F_SW", 10e6),
            ),
        )


# Global config instance - loaded once at module import
config = ToolConfig.from_env()
