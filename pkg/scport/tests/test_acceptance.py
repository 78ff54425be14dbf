"""
Acceptance tests against the three-stage reference converter.

These tests verify that:
1. The analytical FSL matrix equals the reference one
2. Simulated extraction lands within a few percent of the reference
   extracted matrix, and near the closed form at low frequency
3. Covert transmission reproduces the reference sink/source amplitude ratio
   and decodes without errors at 40 kbit/s
4. From source stage 2 to sink stage 3 at a 2 mV sensor, the output-node
   bandwidth lies between 50 and 200 kbit/s and the input node reaches a
   strictly higher rate
5. Both bandwidths land within a factor of two of the reference ones
6. A finer sensor never narrows the bandwidth

Absolute ΔV values differ from the reference ones; only ratios are checked.
"""

import numpy as np
import pytest

from scport.analytical import Regime, closed_form_ssl, r_matrix
from scport.circuit import ConverterSpec, build_ladder
from scport.constants import (
    REFERENCE_BANDWIDTH_INPUT,
    REFERENCE_BANDWIDTH_OUTPUT,
    REFERENCE_EXTRACTED_MATRIX,
    REFERENCE_FSL_MATRIX,
    REFERENCE_RESOLUTION,
    REFERENCE_SINK_DELTA_V,
    REFERENCE_SOURCE_DELTA_V,
    REFERENCE_THROUGHPUT,
)
from scport.config_file import DEFAULT_RATES
from scport.covert import ChannelConfig, decode, sweep_bit_rate, transmit
from scport.engine import StepPolicy
from scport.extraction import MeasurementSettings, extract_r_matrix

POLICY = StepPolicy(256)
SETTINGS = MeasurementSettings(window_periods=4, policy=POLICY)


@pytest.fixture(scope="module")
def spec():
    return ConverterSpec.reference_case()


@pytest.fixture(scope="module")
def rate_sweep(spec):
    cfg = ChannelConfig(source_stage=2, sink_stages=(3,))
    return sweep_bit_rate(spec, cfg, DEFAULT_RATES, (1e-3, REFERENCE_RESOLUTION), POLICY)


def max_rate(sweep, node, resolution=REFERENCE_RESOLUTION):
    return next(
        b.max_rate for b in sweep.bandwidths if b.node == node and b.resolution == resolution
    )


class TestRParameters:
    """Matrices of the reference converter."""

    def test_fsl_matches_reference(self, spec):
        np.testing.assert_allclose(
            r_matrix(spec, Regime.FSL).values, np.array(REFERENCE_FSL_MATRIX), rtol=1e-9
        )

    def test_extraction_matches_reference(self, spec):
        values = extract_r_matrix(build_ladder(spec), settings=SETTINGS).matrix.values
        np.testing.assert_allclose(values, np.array(REFERENCE_EXTRACTED_MATRIX), rtol=0.05)

    def test_extraction_at_low_frequency_is_ssl_dominated(self, spec):
        slow = spec.replace(f_sw=100e3)
        values = extract_r_matrix(build_ladder(slow), settings=SETTINGS).matrix.values
        ratio = np.diag(values) / np.diag(closed_form_ssl(slow))
        assert np.all((ratio > 0.6) & (ratio < 1.4))


class TestCovertChannel:
    """Transmission at the reference throughput."""

    def test_amplitude_ratio_and_decoding(self, spec):
        cfg = ChannelConfig(bits="10101010", bit_period=1.0 / REFERENCE_THROUGHPUT)
        trace, report = transmit(build_ladder(spec), cfg, POLICY)
        ratio = report.delta_v["V_OUT2"] / report.delta_v["V_OUT1"]
        assert ratio == pytest.approx(REFERENCE_SINK_DELTA_V / REFERENCE_SOURCE_DELTA_V, rel=0.2)
        for node in ("V_OUT2", "V_OUT3"):
            result = decode(trace, cfg, resolution=REFERENCE_RESOLUTION, node=node)
            assert result.ber == 0.0

    def test_output_bandwidth(self, rate_sweep):
        out = max_rate(rate_sweep, "V_OUT3")
        assert out is not None
        assert 50e3 <= out <= 200e3

    def test_input_node_reaches_higher_rate(self, rate_sweep):
        out = max_rate(rate_sweep, "V_OUT3")
        inp = max_rate(rate_sweep, "V_IN3")
        assert inp is not None
        assert inp > out

    def test_finer_sensor_widens_bandwidth(self, rate_sweep):
        for node in ("V_OUT3", "V_IN3"):
            assert max_rate(rate_sweep, node, 1e-3) >= max_rate(rate_sweep, node)

    @pytest.mark.parametrize(
        "node, reference",
        [("V_OUT3", REFERENCE_BANDWIDTH_OUTPUT), ("V_IN3", REFERENCE_BANDWIDTH_INPUT)],
    )
    def test_bandwidth_near_reference(self, rate_sweep, node, reference):
        assert reference / 2 <= max_rate(rate_sweep, node) <= 2 * reference
