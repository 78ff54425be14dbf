"""Multi-port R-parameter model and covert-channel analysis for switched-capacitor ladder converters."""

__version__ = "0.3.0"
