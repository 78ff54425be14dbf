"""
Tests for the command-line front end.

Verifies:
- analyze prints FSL / SSL / combined matrices and writes CSVs
- extract writes the matrix and its provenance sidecar
- transient writes a trace
- covert transmits, decodes and echoes the resolved configuration
- Exit codes for missing files, bad scenarios and non-convergence

Run with: pytest test_cli.py -v
"""

import json

import pytest

from scport import cli
from scport.circuit import NonConvergenceError
from scport.config_file import load_scenario

FAST_SCENARIO = """
[simulation]
steps_per_period = 256
window_periods = 4

[loads]
resistance = 100, 100, 100

[channel]
rate = 40k
bits = 1010
"""


@pytest.fixture
def scenario_file(tmp_path):
    path = tmp_path / "fast.cfg"
    path.write_text(FAST_SCENARIO)
    return path


def run(argv, capsys):
    code = cli.main([str(a) for a in argv])
    captured = capsys.readouterr()
    return code, captured.out, captured.err


# =============================================================================
# analyze
# =============================================================================

class TestAnalyze:
    """Analytical matrices."""

    def test_fsl_default(self, scenario_file, tmp_path, capsys):
        code, out, _ = run(["analyze", scenario_file, "--out", tmp_path], capsys)
        assert code == cli.EXIT_OK
        assert "R-PARAMETERS (FSL)" in out
        assert "210.0000" in out
        assert "Closed form: match" in out
        assert (tmp_path / "r_matrix_fsl.csv").exists()

    def test_ssl(self, scenario_file, tmp_path, capsys):
        code, out, _ = run(["analyze", "--ssl", scenario_file, "--out", tmp_path], capsys)
        assert code == cli.EXIT_OK
        assert "25.0000" in out
        assert "Closed form: match" in out
        assert (tmp_path / "r_matrix_ssl.csv").exists()

    def test_combined(self, scenario_file, tmp_path, capsys):
        code, out, _ = run(["analyze", "--combined", scenario_file, "--out", tmp_path], capsys)
        assert code == cli.EXIT_OK
        assert "235.0000" in out
        assert "n/a (approximate estimate)" in out

    def test_no_closed_form_for_four_stages(self, tmp_path, capsys):
        path = tmp_path / "four.cfg"
        path.write_text("[converter]\nn_stages = 4\n")
        code, out, _ = run(["analyze", path, "--out", tmp_path], capsys)
        assert code == cli.EXIT_OK
        assert "Closed form: n/a" in out

    def test_output_is_repeatable(self, scenario_file, tmp_path, capsys):
        run(["analyze", scenario_file, "--out", tmp_path], capsys)
        first = (tmp_path / "r_matrix_fsl.csv").read_bytes()
        run(["analyze", scenario_file, "--out", tmp_path], capsys)
        assert (tmp_path / "r_matrix_fsl.csv").read_bytes() == first


# =============================================================================
# extract / transient / covert
# =============================================================================

class TestSimulationCommands:
    """Commands that run the transient engine."""

    def test_extract(self, scenario_file, tmp_path, capsys):
        code, out, _ = run(["extract", scenario_file, "--out", tmp_path], capsys)
        assert code == cli.EXIT_OK
        assert "EXTRACTED R-PARAMETERS (current mode)" in out
        assert "ANALYTICAL FSL" in out
        assert "RELATIVE ERROR vs analytical FSL:" in out
        data = json.loads((tmp_path / "r_matrix_extracted.provenance.json").read_text())
        assert data["steps_per_period"] == 256
        assert (tmp_path / "r_matrix_extracted.csv").exists()

    def test_transient(self, scenario_file, tmp_path, capsys):
        code, out, _ = run(
            ["transient", scenario_file, "--duration", "1us", "--loads", "100,open,1k",
             "--out", tmp_path],
            capsys,
        )
        assert code == cli.EXIT_OK
        assert "TRANSIENT RUN" in out
        assert "Steps: 2560" in out
        assert "V_OUT2" in out
        assert (tmp_path / "trace.csv").exists()

    def test_covert(self, scenario_file, tmp_path, capsys):
        code, out, _ = run(["covert", scenario_file, "--out", tmp_path], capsys)
        assert code == cli.EXIT_OK
        assert out.startswith("# resolved configuration\n[converter]")
        assert "Decoded: 1010" in out
        assert "BER: 0.0000" in out
        report = (tmp_path / "covert_report.txt").read_text()
        assert "COVERT CHANNEL REPORT" in report

    def test_covert_echo_parses_back(self, scenario_file, tmp_path, capsys):
        run(["covert", scenario_file, "--bits", "0110", "--out", tmp_path], capsys)
        echoed = tmp_path / "echo.cfg"
        text = (tmp_path / "covert_report.txt").read_text()
        echoed.write_text(text.split("\n=", 1)[0])
        scenario = load_scenario(echoed)
        assert scenario.channel.bits == "0110"
        assert scenario.policy.steps_per_period == 256

    def test_covert_offchip_sweep(self, scenario_file, tmp_path, capsys):
        code, out, _ = run(
            ["covert", scenario_file, "--sweep", "offchip", "--r-offchip", "0,50m",
             "--out", tmp_path],
            capsys,
        )
        assert code == cli.EXIT_OK
        assert "SWEEP: offchip" in out
        lines = (tmp_path / "sweep_offchip.csv").read_text().splitlines()
        assert lines[0] == "sweep_value,node,delta_v_volts"


# =============================================================================
# Exit Codes
# =============================================================================

class TestExitCodes:
    """Failures map to documented exit codes."""

    def test_missing_file(self, tmp_path, capsys):
        code, _, err = run(["analyze", tmp_path / "missing.cfg", "--out", tmp_path], capsys)
        assert code == cli.EXIT_BAD_INPUT
        assert "error: file not found" in err

    def test_bad_scenario(self, tmp_path, capsys):
        path = tmp_path / "bad.cfg"
        path.write_text("[converter]\nwattage = 3\n")
        code, _, err = run(["analyze", path, "--out", tmp_path], capsys)
        assert code == cli.EXIT_BAD_INPUT
        assert "unknown key 'wattage'" in err

    def test_bad_channel(self, scenario_file, tmp_path, capsys):
        code, _, err = run(["covert", scenario_file, "--sinks", "1,2", "--out", tmp_path], capsys)
        assert code == cli.EXIT_BAD_INPUT
        assert "source and sink stages must be distinct" in err

    def test_bad_number(self, scenario_file, tmp_path, capsys):
        code, _, _ = run(
            ["transient", scenario_file, "--duration", "soon", "--out", tmp_path], capsys
        )
        assert code == cli.EXIT_BAD_INPUT

    def test_non_convergence(self, scenario_file, tmp_path, capsys, monkeypatch):
        def fail(path):
            raise NonConvergenceError(1e-3, 50)

        monkeypatch.setattr(cli, "load_scenario", fail)
        code, _, err = run(["analyze", scenario_file, "--out", tmp_path], capsys)
        assert code == cli.EXIT_NO_CONVERGENCE
        assert "50 periods" in err

    def test_unknown_command(self, capsys):
        with pytest.raises(SystemExit) as excinfo:
            cli.main(["plot"])
        assert excinfo.value.code == 2
