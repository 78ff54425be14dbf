"""
Tests for the covert channel.

Verifies:
- Channel configuration helpers and validation
- Load schedule encoding of a bit pattern
- Per-bit measurement windows (last half of each bit, whole periods)
- Transmission on the reference converter: source and sink amplitudes,
  their ratio against the extracted coupling, settling, error-free decoding
- The deeper sink sees twice the swing of the shallower one, and swapping
  source and sink leaves the swing unchanged
- Decoder thresholds, quantization and undecidable bits
- Model-side amplitude prediction
- Frequency, bit-rate and off-chip sweeps, bandwidth and linear fits
- Sink swing grows with switching frequency and flattens above 5 MHz, and
  output nodes lose it faster than input nodes at low frequency
- Report and CSV output

Run with: pytest test_covert.py -v
"""

import math

import numpy as np
import pytest

from scport.analytical import Regime, RMatrix, r_matrix
from scport.circuit import ChannelError, ConverterSpec, build_ladder
from scport.config_file import DEFAULT_FREQUENCIES
from scport.constants import REFERENCE_SINK_DELTA_V, REFERENCE_SOURCE_DELTA_V
from scport.covert import (
    ChannelConfig,
    ProbeNode,
    bandwidth_at,
    bit_windows,
    decode,
    encode_schedule,
    ensure_channel,
    format_report,
    format_sweep,
    linear_fit,
    predict_delta_v,
    reference_comparison,
    sweep_bit_rate,
    sweep_offchip,
    sweep_switching_frequency,
    transmit,
    validate_channel,
    write_sweep_csv,
)
from scport.engine import StepPolicy, TransientTrace
from scport.extraction import MeasurementSettings, extract_r_matrix

POLICY = StepPolicy(256)


@pytest.fixture(scope="module")
def reference_run():
    spec = ConverterSpec.reference_case()
    cfg = ChannelConfig(bits="1010", bit_period=25e-6)
    trace, report = transmit(build_ladder(spec), cfg, POLICY)
    return spec, cfg, trace, report


@pytest.fixture(scope="module")
def extracted_matrix():
    settings = MeasurementSettings(window_periods=4, policy=POLICY)
    network = build_ladder(ConverterSpec.reference_case())
    return extract_r_matrix(network, settings=settings).matrix.values


@pytest.fixture(scope="module")
def frequency_sweep():
    return sweep_switching_frequency(
        ConverterSpec.reference_case(), ChannelConfig(), DEFAULT_FREQUENCIES, POLICY
    )


def synthetic_trace(values, period=1e-7) -> TransientTrace:
    values = np.asarray(values, dtype=float)
    return TransientTrace(
        t0=0.0,
        sample_period=period,
        samples_per_period=1,
        series={"V_OUT1": values, "V_OUT2": values, "V_OUT3": values},
    )


# =============================================================================
# Configuration
# =============================================================================

class TestChannelConfig:
    """Helpers of the channel configuration."""

    def test_defaults(self):
        cfg = ChannelConfig()
        assert cfg.source_stage == 1
        assert cfg.sink_stages == (2, 3)
        assert cfg.r_light == 100.0
        assert cfg.r_heavy == 1.0
        assert cfg.rate == pytest.approx(40e3)
        assert cfg.duration == pytest.approx(100e-6)

    def test_node_labels_source_first(self):
        assert ChannelConfig().node_labels() == [
            "V_OUT1", "V_IN1", "V_OUT2", "V_IN2", "V_OUT3", "V_IN3",
        ]

    def test_source_output_always_probed(self):
        cfg = ChannelConfig(probes=(ProbeNode.INPUT,))
        assert cfg.node_labels() == ["V_OUT1", "V_IN1", "V_IN2", "V_IN3"]

    def test_probe_names_coerced(self):
        assert ChannelConfig(probes=("input",)).probes == (ProbeNode.INPUT,)

    def test_port_ohms(self):
        cfg = ChannelConfig(source_stage=2, sink_stages=(1,))
        assert cfg.port_ohms(3, "0") == [100.0, 1.0, 100.0]
        assert cfg.port_ohms(3, "1") == [100.0, 100.0, 100.0]


class TestValidateChannel:
    """Problems are collected, then raised together."""

    def test_valid(self):
        assert validate_channel(ChannelConfig(), ConverterSpec.reference_case()) == []

    def test_stage_range(self):
        problems = validate_channel(ChannelConfig(sink_stages=(4,)), ConverterSpec.reference_case())
        assert problems == ["stage 4 out of range 1..3"]

    def test_distinct_stages(self):
        problems = validate_channel(ChannelConfig(sink_stages=(1, 2)), ConverterSpec.reference_case())
        assert "source and sink stages must be distinct" in problems

    def test_heavy_not_above_light(self):
        cfg = ChannelConfig(r_heavy=200.0)
        assert len(validate_channel(cfg, ConverterSpec.reference_case())) == 1

    def test_equal_loads_allowed(self):
        cfg = ChannelConfig(r_heavy=100.0, r_light=100.0)
        assert validate_channel(cfg, ConverterSpec.reference_case()) == []

    def test_bit_period_at_least_two_periods(self):
        spec = ConverterSpec.reference_case()
        assert validate_channel(ChannelConfig(bit_period=2e-7), spec) == []
        assert len(validate_channel(ChannelConfig(bit_period=1.5e-7), spec)) == 1

    def test_bits_alphabet(self):
        problems = validate_channel(ChannelConfig(bits="10x"), ConverterSpec.reference_case())
        assert any("bits" in p for p in problems)

    def test_ensure_raises(self):
        with pytest.raises(ChannelError, match="out of range"):
            ensure_channel(ChannelConfig(source_stage=0), ConverterSpec.reference_case())


# =============================================================================
# Encoding and Windows
# =============================================================================

class TestEncoding:
    """Bit pattern to load schedule."""

    def test_equal_bits_merge(self):
        cfg = ChannelConfig(bits="1100", bit_period=1e-6)
        schedule = encode_schedule(cfg, 3)
        assert [seg.start for seg in schedule.segments] == [0.0, 2e-6]
        assert schedule.segments[1].loads[0].value == 1.0

    def test_alternating(self):
        schedule = encode_schedule(ChannelConfig(bits="1010", bit_period=1e-6), 3)
        assert len(schedule.segments) == 4

    def test_empty_pattern_holds_idle(self):
        schedule = encode_schedule(ChannelConfig(bits=""), 3)
        assert len(schedule.segments) == 1
        assert schedule.segments[0].loads[0].value == 100.0


class TestBitWindows:
    """Last half of each bit, in whole periods."""

    def test_half_bit_windows(self):
        trace = synthetic_trace(np.zeros(20))
        cfg = ChannelConfig(bits="10", bit_period=1e-6)
        windows = bit_windows(trace, cfg)
        assert [(w.start, w.stop, w.full) for w in windows] == [(5, 10, True), (15, 20, True)]

    def test_odd_period_count_rounds_down(self):
        trace = synthetic_trace(np.zeros(14))
        cfg = ChannelConfig(bits="10", bit_period=7e-7)
        windows = bit_windows(trace, cfg)
        assert [(w.start, w.stop) for w in windows] == [(4, 7), (11, 14)]

    def test_short_bit_not_full(self):
        trace = synthetic_trace(np.zeros(10))
        cfg = ChannelConfig(bits="10", bit_period=2.2e-7)
        windows = bit_windows(trace, cfg)
        assert not windows[1].full
        assert len(windows[1]) >= 1


# =============================================================================
# Transmission
# =============================================================================

class TestTransmit:
    """Reference scenario: source stage 1, sinks 2 and 3, 100 Ω / 1 Ω keying."""

    def test_source_amplitude(self, reference_run):
        _, _, _, report = reference_run
        assert 0.06 < report.delta_v["V_OUT1"] < 0.12

    def test_sink_amplitude(self, reference_run):
        _, _, _, report = reference_run
        assert 1e-3 < report.delta_v["V_OUT2"] < 4e-3
        assert 1e-3 < report.delta_v["V_OUT3"] < 4e-3

    def test_sink_to_source_ratio(self, reference_run):
        _, _, _, report = reference_run
        ratio = report.delta_v["V_OUT2"] / report.delta_v["V_OUT1"]
        assert ratio == pytest.approx(REFERENCE_SINK_DELTA_V / REFERENCE_SOURCE_DELTA_V, rel=0.2)

    def test_ratio_follows_extracted_coupling(self, reference_run, extracted_matrix):
        _, _, _, report = reference_run
        source = report.delta_v["V_OUT1"]
        for sink in (2, 3):
            expected = extracted_matrix[sink - 1, 0] / extracted_matrix[0, 0]
            assert report.delta_v[f"V_OUT{sink}"] / source == pytest.approx(expected, rel=0.05)

    def test_light_load_reads_high(self, reference_run):
        _, _, _, report = reference_run
        high, low = report.level_means["V_OUT2"]
        assert high > low

    def test_all_bits_settled(self, reference_run):
        _, _, _, report = reference_run
        assert report.settled == (True, True, True, True)
        assert report.unsettled_count == 0

    def test_trace_is_period_resolved(self, reference_run):
        _, _, trace, _ = reference_run
        assert trace.samples_per_period == 1
        assert trace.n_samples == 1000

    def test_reference_comparison(self, reference_run):
        spec, cfg, _, report = reference_run
        ratios = reference_comparison(spec, cfg, report)
        assert ratios is not None
        assert ratios["sink"] / ratios["source"] == pytest.approx(1.0, rel=0.2)
        assert reference_comparison(spec.replace(f_sw=1e6), cfg, report) is None

    def test_decodes_without_errors(self, reference_run):
        _, cfg, trace, report = reference_run
        result = decode(trace, cfg)
        assert result.node == "V_OUT2"
        assert result.bits == "1010"
        assert result.ber == 0.0
        decoded = report.with_decode(result)
        assert decoded.decoded == "1010"
        assert decoded.bit_errors == 0

    def test_decodes_at_sensor_resolution(self, reference_run):
        _, cfg, trace, _ = reference_run
        assert decode(trace, cfg, resolution=0.5e-3).bits == "1010"

    def test_equal_loads_give_no_signal(self):
        cfg = ChannelConfig(bits="1010", r_heavy=100.0, r_light=100.0)
        trace, report = transmit(build_ladder(ConverterSpec.reference_case()), cfg, POLICY)
        assert all(dv < 1e-9 for dv in report.delta_v.values())
        result = decode(trace, cfg, resolution=2e-3)
        assert result.ber == 0.5

    def test_invalid_channel_rejected(self):
        with pytest.raises(ChannelError):
            transmit(build_ladder(ConverterSpec.reference_case()), ChannelConfig(sink_stages=(5,)), POLICY)


class TestCouplingLaws:
    """Sink amplitudes follow the shared-path structure of the ladder."""

    @pytest.mark.parametrize(
        "source, near, far",
        [(2, 1, 3), (3, 1, 2)],
    )
    def test_deeper_sink_sees_twice_the_swing(self, source, near, far):
        cfg = ChannelConfig(source_stage=source, sink_stages=(near, far), bits="1010")
        _, report = transmit(build_ladder(ConverterSpec.reference_case()), cfg, POLICY)
        ratio = report.delta_v[f"V_OUT{far}"] / report.delta_v[f"V_OUT{near}"]
        assert ratio == pytest.approx(2.0, rel=0.05)

    def test_reciprocity(self, reference_run):
        _, _, _, forward = reference_run
        cfg = ChannelConfig(source_stage=2, sink_stages=(1,), bits="1010")
        _, backward = transmit(build_ladder(ConverterSpec.reference_case()), cfg, POLICY)
        assert backward.delta_v["V_OUT1"] == pytest.approx(forward.delta_v["V_OUT2"], rel=0.02)


class TestDecode:
    """Thresholding of window means."""

    LEVELS = [1.0] * 5 + [0.0] * 5 + [1.0] * 5 + [0.0] * 5
    CFG = ChannelConfig(bits="1010", bit_period=5e-7)

    def test_trained_threshold(self):
        result = decode(synthetic_trace(self.LEVELS), self.CFG)
        assert result.bits == "1010"
        assert result.threshold == pytest.approx(0.5)

    def test_explicit_threshold(self):
        result = decode(synthetic_trace(self.LEVELS), self.CFG, threshold=10.0)
        assert result.bits == "0000"
        assert result.errors == 2
        assert result.ber == 0.5

    def test_quantization_ties_read_zero(self):
        levels = [0.4995] * 5 + [0.4985] * 5 + [0.4995] * 5 + [0.4985] * 5
        trace = synthetic_trace(levels)
        assert decode(trace, self.CFG, resolution=2e-3).bits == "0000"
        assert decode(trace, self.CFG, resolution=0.25e-3).bits == "1010"

    def test_single_level_undecidable(self):
        cfg = ChannelConfig(bits="11", bit_period=5e-7)
        result = decode(synthetic_trace([1.0] * 10), cfg)
        assert result.bits == "??"
        assert result.threshold is None
        assert result.ber == 1.0

    def test_resolution_must_be_positive(self):
        with pytest.raises(ValueError):
            decode(synthetic_trace(self.LEVELS), self.CFG, resolution=0.0)

    def test_node_override(self):
        assert decode(synthetic_trace(self.LEVELS), self.CFG, node="V_OUT1").node == "V_OUT1"


# =============================================================================
# Prediction
# =============================================================================

class TestPredictDeltaV:
    """Self-consistent model-side amplitudes."""

    def test_ratio_follows_coupling(self):
        rm = r_matrix(ConverterSpec.reference_case(), Regime.FSL)
        dv = predict_delta_v(rm, ChannelConfig())
        assert dv[1] / dv[0] == pytest.approx(rm.values[1, 0] / rm.values[0, 0], rel=0.02)
        assert dv[0] > dv[1] > 0

    def test_non_physical_operating_point(self):
        rm = RMatrix(values=np.eye(2) * 0.1, v_tr=np.array([-0.5, -0.5]), source="fsl")
        with pytest.raises(ChannelError):
            predict_delta_v(rm, ChannelConfig(sink_stages=(2,)))


# =============================================================================
# Sweeps
# =============================================================================

class TestSweepHelpers:
    """Bandwidth and fit arithmetic."""

    def test_bandwidth_crossing(self):
        bw = bandwidth_at(np.array([1.0, 2.0, 4.0]), np.array([3.0, 2.5, 1.0]), 2.0, "V_OUT2")
        assert bw.max_rate == 2.0
        assert bw.crossing == pytest.approx(2.0 * 2.0 ** (1.0 / 3.0))

    def test_bandwidth_unsorted_input(self):
        bw = bandwidth_at(np.array([4.0, 1.0, 2.0]), np.array([1.0, 3.0, 2.5]), 2.0, "V_OUT2")
        assert bw.max_rate == 2.0

    def test_bandwidth_never_crossing(self):
        above = bandwidth_at(np.array([1.0, 2.0]), np.array([5.0, 4.0]), 2.0, "n")
        assert above.max_rate == 2.0 and above.crossing is None
        below = bandwidth_at(np.array([1.0, 2.0]), np.array([1.0, 0.5]), 2.0, "n")
        assert below.max_rate is None and below.crossing is None

    def test_linear_fit(self):
        fit = linear_fit(np.array([0.0, 1.0, 2.0]), np.array([1.0, 3.0, 5.0]))
        assert fit.slope == pytest.approx(2.0)
        assert fit.intercept == pytest.approx(1.0)
        assert fit.residual_fraction == pytest.approx(0.0, abs=1e-9)


class TestSweeps:
    """Sweeps over frequency, rate and off-chip resistance."""

    def test_frequency_sweep(self, tmp_path, frequency_sweep):
        result = frequency_sweep
        assert result.kind == "freq"
        assert sorted(result.reports) == sorted(DEFAULT_FREQUENCIES)
        assert [p.value for p in result.points][:1] == [min(DEFAULT_FREQUENCIES)]
        _, source = result.curve("V_OUT1")
        assert source[0] > source[-1]

        path = tmp_path / "sweep_freq.csv"
        write_sweep_csv(result, path)
        lines = path.read_text().splitlines()
        assert lines[0] == "sweep_value,node,delta_v_volts"
        assert len(lines) == 1 + len(result.points)
        assert "SWEEP: freq" in format_sweep(result)

    @pytest.mark.parametrize("node", ["V_OUT2", "V_OUT3"])
    def test_sink_swing_grows_with_frequency(self, frequency_sweep, node):
        _, dv = frequency_sweep.curve(node)
        for lower, higher in zip(dv, dv[1:]):
            assert higher >= 0.98 * lower

    def test_sink_swing_flat_at_high_frequency(self, frequency_sweep):
        freqs, dv = frequency_sweep.curve("V_OUT2")
        by_freq = dict(zip(freqs, dv))
        assert by_freq[5e6] == pytest.approx(by_freq[10e6], rel=0.05)

    def test_output_fades_faster_than_input_at_low_frequency(self, frequency_sweep):
        swing = {}
        for node in ("V_OUT2", "V_IN2"):
            freqs, dv = frequency_sweep.curve(node)
            swing[node] = dict(zip(freqs, dv))
        output_kept = swing["V_OUT2"][100e3] / swing["V_OUT2"][1e6]
        input_kept = swing["V_IN2"][100e3] / swing["V_IN2"][1e6]
        assert output_kept < input_kept

    def test_rate_sweep(self):
        result = sweep_bit_rate(
            ConverterSpec.reference_case(), ChannelConfig(), [40e3, 400e3], (1e-3, 2e-3), POLICY
        )
        assert len(result.bandwidths) == 2 * len(result.nodes)
        report = result.reports[40e3]
        assert report.config.warmup_bits == 2
        _, sink = result.curve("V_OUT2")
        assert sink[0] > sink[1]
        assert "BANDWIDTH:" in format_sweep(result)

    def test_rate_sweep_replaces_single_level_pattern(self):
        result = sweep_bit_rate(
            ConverterSpec.reference_case(), ChannelConfig(bits="1111"), [100e3], policy=POLICY
        )
        assert result.reports[100e3].config.bits == "1010101010"

    def test_offchip_sweep(self):
        result = sweep_offchip(
            ConverterSpec.reference_case(), ChannelConfig(), [0.0, 0.05, 0.1], POLICY
        )
        fit = result.fits["V_OUT2"]
        assert fit.slope > 0
        assert fit.residual_fraction < 0.05
        assert result.model_slopes["V_OUT2"] == pytest.approx(fit.slope, rel=0.25)
        assert "LINEAR FIT" in format_sweep(result)


# =============================================================================
# Reports
# =============================================================================

class TestFormatReport:
    """Structured text report."""

    def test_sections(self, reference_run):
        _, cfg, trace, report = reference_run
        text = format_report(report.with_decode(decode(trace, cfg)))
        assert "COVERT CHANNEL REPORT" in text
        assert "AMPLITUDE" in text
        assert "V_OUT2" in text
        assert "BER: 0.0000" in text
        assert "Switching frequency: 10MHz" in text

    def test_undecoded(self, reference_run):
        _, _, _, report = reference_run
        assert "not decoded" in format_report(report)
        assert not math.isnan(report.delta_v["V_OUT1"])
