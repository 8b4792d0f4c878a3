import pytest
from click.testing import CliRunner

from config import config
from controller.cli import EXIT_CONFIG, EXIT_IO, EXIT_NUMERIC, cli
from database.models import RunState, SweepRun
from database.session_manager import get_session

SCALAR_SIMULATION = """
    [experiment]
    name = "{name}"
    kind = "simulate"
    horizon = 4
    [model]
    preset = "scalar"
"""

DIVERGENT_SIMULATION = """
    [experiment]
    name = "divergent"
    kind = "simulate"
    horizon = 5
    [model]
    A = [[1e200]]
    B = [[0.0]]
    C = [[1.0]]
    alpha = [0.5]
    [initial]
    x0 = [1e200]
"""


@pytest.fixture
def runner():
    return CliRunner()


class TestScenarioCommands:
    def test_simulate_preset(self, runner, tmp_path):
        result = runner.invoke(cli, ["simulate", "--preset", "scalar", "--horizon", "3", "--out", str(tmp_path)])
        assert result.exit_code == 0, result.output
        assert (tmp_path / config.TRACE_FILE_NAME).exists()

    def test_coeffs_writes_table(self, runner, tmp_path):
        result = runner.invoke(cli, ["coeffs", "--preset", "paper", "--horizon", "10", "--out", str(tmp_path)])
        assert result.exit_code == 0, result.output
        lines = (tmp_path / config.COEFFICIENTS_FILE_NAME).read_text().splitlines()
        assert lines[0] == "channel,j,psi"
        assert len(lines) == 1 + 4 * 12

    def test_svg_flag(self, runner, tmp_path):
        args = ["simulate", "--preset", "scalar", "--horizon", "3", "--svg", "--out", str(tmp_path)]
        assert runner.invoke(cli, args).exit_code == 0
        assert (tmp_path / config.TRACE_SVG_NAME).exists()

    def test_invalid_horizons_exit_with_config_code(self, runner, write_config, tmp_path):
        path = write_config(
            """
            [experiment]
            kind = "mpc"
            [model]
            preset = "paper"
            [mpc]
            prediction_horizon = 2
            control_horizon = 3
            """
        )
        result = runner.invoke(cli, ["mpc", "--config", str(path), "--out", str(tmp_path)])
        assert result.exit_code == EXIT_CONFIG

    def test_missing_file_exits_with_io_code(self, runner, tmp_path):
        result = runner.invoke(cli, ["simulate", "--config", str(tmp_path / "absent.toml")])
        assert result.exit_code == EXIT_IO

    def test_divergence_exits_with_numeric_code(self, runner, write_config, tmp_path):
        path = write_config(DIVERGENT_SIMULATION)
        result = runner.invoke(cli, ["simulate", "--config", str(path), "--out", str(tmp_path / "out")])
        assert result.exit_code == EXIT_NUMERIC

    def test_divergent_observer_exits_with_numeric_code(self, runner, write_config, tmp_path):
        path = write_config(
            """
            [experiment]
            kind = "mpc"
            horizon = 30
            [model]
            preset = "paper"
            [initial]
            x0 = [1.0, 1.0, 1.0, 1.0]
            [observer]
            gains = [[1e120], [1e120], [1e120], [1e120]]
            """
        )
        result = runner.invoke(cli, ["mpc", "--config", str(path), "--out", str(tmp_path / "out")])
        assert result.exit_code == EXIT_NUMERIC

    def test_kind_mismatch(self, runner, write_config, tmp_path):
        path = write_config(SCALAR_SIMULATION.format(name="scalar"))
        result = runner.invoke(cli, ["mpc", "--config", str(path), "--out", str(tmp_path)])
        assert result.exit_code == EXIT_CONFIG
        assert "experiment.kind" in result.output

    def test_syntax_error_exits_with_config_code(self, runner, write_config):
        path = write_config('[experiment\nkind = "simulate"\n')
        assert runner.invoke(cli, ["simulate", "--config", str(path)]).exit_code == EXIT_CONFIG


class TestSweep:
    def test_runs_are_recorded(self, runner, write_config, tmp_path):
        first = write_config(SCALAR_SIMULATION.format(name="first"), "first.toml")
        second = write_config(SCALAR_SIMULATION.format(name="second"), "second.toml")
        ledger = tmp_path / "ledger.db"
        out = tmp_path / "sweep"

        result = runner.invoke(
            cli, ["sweep", str(first), str(second), "--out", str(out), "--workers", "2", "--ledger", str(ledger)]
        )
        assert result.exit_code == 0, result.output
        assert (out / "first" / config.TRACE_FILE_NAME).exists()
        assert (out / "second" / config.TRACE_FILE_NAME).exists()

        with get_session() as session:
            runs = session.query(SweepRun).order_by(SweepRun.id).all()
            assert [run.scenario_name for run in runs] == ["first", "second"]
            assert all(run.state == RunState.success for run in runs)
            assert all(run.artifact_count == 1 for run in runs)
            assert len({run.run_ulid for run in runs}) == 2

    def test_duplicate_names_get_suffix(self, runner, write_config, tmp_path):
        first = write_config(SCALAR_SIMULATION.format(name="same"), "a.toml")
        second = write_config(SCALAR_SIMULATION.format(name="same"), "b.toml")
        out = tmp_path / "sweep"
        args = ["sweep", str(first), str(second), "--out", str(out), "--ledger", str(tmp_path / "ledger.db")]
        assert runner.invoke(cli, args).exit_code == 0
        assert (out / "same" / config.TRACE_FILE_NAME).exists()
        assert (out / "same-2" / config.TRACE_FILE_NAME).exists()

    def test_failure_is_recorded_and_sets_exit_code(self, runner, write_config, tmp_path):
        good = write_config(SCALAR_SIMULATION.format(name="good"), "good.toml")
        bad = write_config(DIVERGENT_SIMULATION, "bad.toml")
        args = ["sweep", str(good), str(bad), "--out", str(tmp_path / "sweep"), "--ledger", str(tmp_path / "l.db")]

        result = runner.invoke(cli, args)
        assert result.exit_code == EXIT_NUMERIC
        assert (tmp_path / "sweep" / "good" / config.TRACE_FILE_NAME).exists()

        with get_session() as session:
            states = {run.scenario_name: run.state for run in session.query(SweepRun)}
            failed = session.query(SweepRun).filter_by(scenario_name="divergent").one()
            assert failed.last_error.startswith("NumericOverflowError")
        assert states == {"good": RunState.success, "divergent": RunState.failed}
