import json
from pathlib import Path

import numpy as np
import pytest
from numpy.testing import assert_allclose, assert_array_equal

from config import config
from services import trace_io
from services.errors import ConfigParseError, ConfigurationError, NumericOverflowError
from services.experiments import default_spec, load_config, override, run_experiment, run_sweep
from services.frac_core import build_coefficient_table, simulate
from services.mpc import MpcConfig, run_mpc_closed_loop, square_wave_reference
from services.observer import ObserverGains, design_observer_gain
from services.plotting import render_svg
from services.presets import paper_model

SNAPSHOTS = Path(__file__).parent / "snapshots"


@pytest.fixture(scope="module")
def mpc_trace_path(tmp_path_factory):
    out = tmp_path_factory.mktemp("mpc")
    spec = override(default_spec("mpc"), output_dir=out, horizon=160)
    run_experiment(spec)
    return out / config.TRACE_FILE_NAME


class TestLoadConfig:
    def test_minimal_mpc_file_takes_defaults(self, write_config):
        spec = load_config(
            write_config(
                """
                [experiment]
                kind = "mpc"

                [model]
                preset = "paper"
                """
            )
        )
        assert spec.name == "experiment"
        assert spec.mpc.prediction_horizon == 8
        assert spec.mpc.control_horizon == 4
        assert spec.mpc.sample_rate == 160.0
        assert spec.horizon == config.DEFAULT_HORIZON

    def test_control_horizon_above_prediction_names_both(self, write_config):
        path = write_config(
            """
            [experiment]
            kind = "mpc"
            [model]
            preset = "paper"
            [mpc]
            prediction_horizon = 4
            control_horizon = 6
            """
        )
        with pytest.raises(ConfigurationError) as err:
            load_config(path)
        assert "mpc.control_horizon" in str(err.value)
        assert "mpc.prediction_horizon" in str(err.value)

    def test_empty_file(self, write_config):
        with pytest.raises(ConfigParseError) as err:
            load_config(write_config("   \n"))
        assert (err.value.line, err.value.column) == (1, 1)

    def test_syntax_error_reports_line(self, write_config):
        path = write_config('[experiment]\nkind = "simulate"\nhorizon = = 3\n')
        with pytest.raises(ConfigParseError) as err:
            load_config(path)
        assert err.value.line == 3

    def test_unknown_key_uses_dotted_path(self, write_config):
        path = write_config(
            """
            [experiment]
            kind = "mpc"
            [model]
            preset = "paper"
            [mpc]
            horizon = 3
            """
        )
        with pytest.raises(ConfigurationError) as err:
            load_config(path)
        assert err.value.field == "mpc.horizon"

    def test_unknown_kind(self, write_config):
        path = write_config(
            """
            [experiment]
            kind = "identify"
            [model]
            preset = "paper"
            """
        )
        with pytest.raises(ConfigurationError) as err:
            load_config(path)
        assert err.value.field == "experiment.kind"

    def test_missing_kind(self, write_config):
        with pytest.raises(ConfigurationError) as err:
            load_config(write_config('[model]\npreset = "scalar"\n'))
        assert err.value.field == "experiment.kind"

    def test_input_matrix_shape_checked(self, write_config):
        path = write_config(
            """
            [experiment]
            kind = "simulate"
            [model]
            A = [[0.0, 0.0], [0.0, 0.0]]
            B = [[1.0], [1.0], [1.0]]
            C = [[1.0, 0.0]]
            alpha = [0.5, 0.5]
            """
        )
        with pytest.raises(ConfigurationError) as err:
            load_config(path)
        assert err.value.field == "model.B"

    def test_explicit_inputs_fix_horizon(self, write_config):
        spec = load_config(
            write_config(
                """
                [experiment]
                kind = "simulate"
                [model]
                preset = "scalar"
                [inputs]
                values = [0.0, 1.0, 0.0]
                """
            )
        )
        assert spec.horizon == 3
        assert spec.inputs.kind == "explicit"
        assert spec.inputs.values.shape == (3, 1)

    def test_initial_state_length_checked(self, write_config):
        path = write_config(
            """
            [experiment]
            kind = "simulate"
            [model]
            preset = "paper"
            [initial]
            x0 = [1.0, 2.0]
            """
        )
        with pytest.raises(ConfigurationError) as err:
            load_config(path)
        assert err.value.field == "initial.x0"

    @pytest.mark.parametrize("section", ["observer", "feedback"])
    def test_explicit_gain_shape_checked_at_load(self, write_config, section):
        path = write_config(
            f"""
            [experiment]
            kind = "closedloop"
            [model]
            preset = "paper"
            [{section}]
            gains = [[0.1, 0.2], [0.3, 0.4]]
            """
        )
        with pytest.raises(ConfigurationError) as err:
            load_config(path)
        assert err.value.field == f"{section}.gains"

    def test_reference_above_nyquist_rejected_at_load(self, write_config):
        path = write_config(
            """
            [experiment]
            kind = "mpc"
            [model]
            preset = "paper"
            [mpc]
            sample_rate = 12.0
            """
        )
        with pytest.raises(ConfigurationError) as err:
            load_config(path)
        assert err.value.field == "reference.frequency"

    def test_square_input_frequency_checked(self, write_config):
        path = write_config(
            """
            [experiment]
            kind = "simulate"
            [model]
            preset = "scalar"
            [inputs]
            kind = "square"
            frequency = 90.0
            """
        )
        with pytest.raises(ConfigurationError) as err:
            load_config(path)
        assert err.value.field == "inputs.frequency"


class TestOverride:
    def test_preset_replaces_model(self):
        spec = override(default_spec("simulate"), preset="scalar", horizon=5)
        assert spec.model.n_states == 1
        assert spec.horizon == 5

    def test_absent_flags_change_nothing(self):
        spec = default_spec("coeffs")
        assert override(spec, seed=None, horizon=None).horizon == spec.horizon

    def test_zero_horizon_rejected_for_mpc(self):
        with pytest.raises(ConfigurationError):
            override(default_spec("mpc"), horizon=0)


class TestScenarios:
    def test_scalar_simulation_trace(self, tmp_path):
        spec = override(default_spec("simulate", "scalar"), output_dir=tmp_path, horizon=3)
        paths = run_experiment(spec)
        assert paths == [tmp_path / config.TRACE_FILE_NAME]
        frame = trace_io.read_trace(paths[0])
        assert len(frame) == 4
        assert_allclose(frame["x1"], [1.0, 0.5, 0.375, 0.3125], rtol=0, atol=1e-15)
        assert_allclose(frame["t"], np.arange(4) / 160.0)

    def test_coefficients_written(self, tmp_path):
        spec = override(default_spec("coeffs", "scalar"), output_dir=tmp_path, horizon=2)
        (path,) = run_experiment(spec)
        assert path.read_text().splitlines()[:3] == ["channel,j,psi", "1,0,1", "1,1,-0.5"]

    def test_separation_report_passes_on_paper_model(self, tmp_path):
        spec = override(default_spec("verify-separation"), output_dir=tmp_path)
        text_path, csv_path = run_experiment(spec)
        assert "PASS" in text_path.read_text().splitlines()[0]
        assert csv_path.exists()

    def test_closed_loop_summary(self, tmp_path):
        spec = override(default_spec("closedloop"), output_dir=tmp_path, horizon=40)
        trace_path, summary = run_experiment(spec)
        assert summary.read_text().startswith("closed-loop run: closedloop")
        frame = trace_io.read_trace(trace_path)
        assert len(frame) == 41
        assert "xhat4" in frame.columns

    def test_observe_with_zero_steps(self, tmp_path):
        spec = override(default_spec("observe", "scalar"), output_dir=tmp_path, horizon=0)
        (path,) = run_experiment(spec)
        assert len(trace_io.read_trace(path)) == 1

    def test_mpc_trace_columns(self, mpc_trace_path):
        frame = trace_io.read_trace(mpc_trace_path)
        expected = ["k", "t", "x1", "x2", "x3", "x4", "xhat1", "xhat2", "xhat3", "xhat4", "u", "y"]
        expected += ["ref1", "ref2", "ref3", "ref4"]
        assert list(frame.columns) == expected
        assert len(frame) == 161
        assert frame["u"].iloc[-1] == 0.0

    def test_mpc_summary_written(self, mpc_trace_path):
        summary = (mpc_trace_path.parent / config.MPC_SUMMARY_NAME).read_text()
        assert "solves: 40" in summary
        assert "all solves certified: True" in summary

    def test_runs_are_byte_identical(self, tmp_path):
        first = override(default_spec("closedloop"), output_dir=tmp_path / "a", horizon=30)
        second = override(first, output_dir=tmp_path / "b")
        (a, _), (b, _) = run_experiment(first), run_experiment(second)
        assert a.read_bytes() == b.read_bytes()

    def test_mpc_runs_are_byte_identical(self, mpc_trace_path, tmp_path):
        spec = override(default_spec("mpc"), output_dir=tmp_path, horizon=160)
        trace_path, summary = run_experiment(spec)
        assert trace_path.read_bytes() == mpc_trace_path.read_bytes()
        assert summary.read_bytes() == (mpc_trace_path.parent / config.MPC_SUMMARY_NAME).read_bytes()

    def test_divergent_observer_fails_with_step(self, write_config, tmp_path):
        path = write_config(
            f"""
            [experiment]
            kind = "observe"
            horizon = 30
            [model]
            preset = "paper"
            [observer]
            gains = [[1e120], [1e120], [1e120], [1e120]]
            [output]
            directory = "{tmp_path / 'out'}"
            """
        )
        with pytest.raises(NumericOverflowError) as err:
            run_experiment(load_config(path))
        assert 1 <= err.value.step <= 30
        assert not (tmp_path / "out" / config.TRACE_FILE_NAME).exists()

    def test_random_inputs_follow_seed(self, write_config, tmp_path):
        text = """
            [experiment]
            kind = "simulate"
            horizon = 20
            seed = {seed}
            [model]
            preset = "paper"
            [inputs]
            kind = "random"
            [output]
            directory = "{out}"
            """
        runs = []
        for index, seed in enumerate((7, 7, 8)):
            out = tmp_path / f"run{index}"
            path = write_config(text.format(seed=seed, out=out), f"run{index}.toml")
            runs.append(run_experiment(load_config(path))[0].read_bytes())
        assert runs[0] == runs[1]
        assert runs[0] != runs[2]

    def test_svg_rendered_on_request(self, tmp_path):
        spec = override(default_spec("simulate", "scalar"), output_dir=tmp_path, horizon=5, svg=True)
        paths = run_experiment(spec)
        assert paths[-1] == tmp_path / config.TRACE_SVG_NAME
        assert paths[-1].read_text().lstrip().startswith("<?xml")


class TestTraceIO:
    def test_trajectory_round_trip(self, paper, rng, tmp_path):
        trajectory = simulate(paper, rng.standard_normal(4), rng.standard_normal((25, 1)))
        path = trace_io.write_trace(trace_io.trajectory_frame(trajectory, paper, 160.0), tmp_path / "trace.csv")
        restored = trace_io.trajectory_from_frame(trace_io.read_trace(path))
        assert_array_equal(restored.states, trajectory.states)
        assert_array_equal(restored.inputs, trajectory.inputs)
        assert_array_equal(restored.outputs, trajectory.outputs)

    def test_closed_loop_round_trip(self, mpc_trace_path):
        model = paper_model()
        table = build_coefficient_table(model, 160)
        ogains = ObserverGains.single(design_observer_gain(table, model.C, config.OBSERVER_TARGET_RADIUS))
        reference = square_wave_reference(8.0, 160.0, 1.0, 168, 4)
        expected = run_mpc_closed_loop(model, MpcConfig(), ogains, reference, 160, np.zeros(4), np.zeros(4))

        restored = trace_io.closed_loop_from_frame(trace_io.read_trace(mpc_trace_path))
        assert_array_equal(restored.states, expected.states)
        assert_array_equal(restored.estimates, expected.estimates)
        assert_array_equal(restored.inputs, expected.inputs)
        assert_array_equal(restored.outputs, expected.outputs)
        assert_array_equal(restored.references, expected.references)

    def test_missing_columns_rejected(self, tmp_path):
        path = tmp_path / "bad.csv"
        path.write_text("a,b\n1,2\n")
        with pytest.raises(ConfigurationError):
            trace_io.read_trace(path)

    def test_empty_file_rejected(self, tmp_path):
        path = tmp_path / "empty.csv"
        path.write_text("")
        with pytest.raises(ConfigurationError):
            trace_io.read_trace(path)


class TestRenderSvg:
    def test_repeat_renders_identical(self, mpc_trace_path, tmp_path):
        first = render_svg(mpc_trace_path, out_path=tmp_path / "one.svg")
        second = render_svg(mpc_trace_path, out_path=tmp_path / "two.svg")
        assert first.read_bytes() == second.read_bytes()

    def test_reference_channel_labelled(self, mpc_trace_path, tmp_path):
        path = render_svg(mpc_trace_path, ["x1", "ref1"], tmp_path / "x1.svg")
        assert "ref1" in path.read_text()

    def test_header_only_trace(self, tmp_path):
        csv_path = tmp_path / "trace.csv"
        csv_path.write_text("k,t,x1\n")
        path = render_svg(csv_path)
        assert path == tmp_path / config.TRACE_SVG_NAME
        assert path.stat().st_size > 0

    def test_unknown_channel(self, mpc_trace_path, tmp_path):
        with pytest.raises(ConfigurationError) as err:
            render_svg(mpc_trace_path, ["x9"], tmp_path / "bad.svg")
        assert err.value.field == "output.channels"


class TestPresets:
    def test_paper_model_matches_snapshot(self):
        snapshot = json.loads((SNAPSHOTS / "paper_model.json").read_text())
        model = paper_model()
        assert_array_equal(model.A, snapshot["A"])
        assert_array_equal(model.alpha.alpha, snapshot["alpha"])
        assert_array_equal(model.B, snapshot["B"])
        assert_array_equal(model.C, snapshot["C"])
        assert config.SAMPLE_RATE == snapshot["sample_rate"]
        assert config.PREDICTION_HORIZON == snapshot["prediction_horizon"]
        assert config.CONTROL_HORIZON == snapshot["control_horizon"]


class TestConcurrentRendering:
    def test_threaded_renders_match_serial(self, mpc_trace_path, tmp_path):
        from concurrent.futures import ThreadPoolExecutor

        serial = render_svg(mpc_trace_path, out_path=tmp_path / "serial.svg").read_bytes()
        targets = [tmp_path / f"threaded{i}.svg" for i in range(24)]
        with ThreadPoolExecutor(max_workers=8) as pool:
            rendered = list(pool.map(lambda target: render_svg(mpc_trace_path, out_path=target), targets))
        assert [path.read_bytes() == serial for path in rendered] == [True] * len(targets)

    def test_sweep_svgs_match_serial_renders(self, write_config, tmp_path):
        text = """
            [experiment]
            name = "{name}"
            kind = "{kind}"
            horizon = 24
            [model]
            preset = "paper"
            [output]
            svg = true
            """
        scenarios = [("sim-a", "simulate"), ("obs-b", "observe"), ("loop-c", "closedloop"), ("sim-d", "simulate")]
        paths = [write_config(text.format(name=name, kind=kind), f"{name}.toml") for name, kind in scenarios]
        out = tmp_path / "sweep"
        results = run_sweep(paths, out, workers=4, ledger_path=tmp_path / "ledger.db")

        for name, _ in scenarios:
            assert not isinstance(results[name], Exception)
            swept = out / name / config.TRACE_SVG_NAME
            serial = render_svg(out / name / config.TRACE_FILE_NAME, out_path=tmp_path / f"{name}.svg")
            assert swept.read_bytes() == serial.read_bytes(), name
