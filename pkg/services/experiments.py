"""
Experiment files, scenario execution and parameter sweeps.

An experiment is a TOML file with nested sections:

    [experiment]  name, kind, horizon, seed
    [model]       preset | A, B, C, alpha; alpha_range, strict_alpha, memory_window
    [initial]     x0, xhat0 (vectors, or "random" for x0)
    [inputs]      kind = zero | constant | random | square | explicit; amplitude, frequency, values
    [observer]    target_radius, gains
    [feedback]    target_radius, gains
    [mpc]         prediction_horizon, control_horizon, mvar_order, regularization, sample_rate
    [reference]   frequency, amplitude
    [separation]  block_order, tolerance, memory_gains
    [output]      directory, svg, channels

Matrices are row-major lists of lists. Keys outside this layout are rejected
with their dotted path. ExperimentRunner writes every artifact of one
scenario into its output directory; run_sweep fans independent scenarios out
over a thread pool and records each in the run ledger.
"""

import logging
import re
try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib
from concurrent.futures import ThreadPoolExecutor, as_completed
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from config import config
from services import placement
from services.errors import ConfigParseError, ConfigurationError, FodsError, NumericOverflowError
from services.feedback import (
    FeedbackGains,
    closed_loop_simulate,
    design_feedback_gain,
    error_residual,
    plant_residual,
    verify_separation,
)
from services.frac_core import FractionalOrders, SystemModel, build_coefficient_table, simulate
from services.mpc import MpcConfig, run_mpc_closed_loop, square_wave_reference, tracking_rms
from services.observer import (
    EstimateHistory,
    ObserverGains,
    design_observer_gain,
    observer_step_memory,
    validate_observer_decay,
)
from services.plotting import render_svg
from services.presets import load_preset
from services import trace_io

logger = logging.getLogger(__name__)

SECTION_KEYS = {
    "experiment": {"name", "kind", "horizon", "seed"},
    "model": {"preset", "A", "B", "C", "alpha", "alpha_range", "strict_alpha", "memory_window"},
    "initial": {"x0", "xhat0"},
    "inputs": {"kind", "amplitude", "frequency", "values"},
    "observer": {"target_radius", "gains"},
    "feedback": {"target_radius", "gains"},
    "mpc": {"prediction_horizon", "control_horizon", "mvar_order", "regularization", "sample_rate"},
    "reference": {"frequency", "amplitude"},
    "separation": {"block_order", "tolerance", "memory_gains"},
    "output": {"directory", "svg", "channels"},
}
INPUT_KINDS = ("zero", "constant", "random", "square", "explicit")

_TOML_POSITION = re.compile(r"line (\d+), column (\d+)")


@dataclass(frozen=True, eq=False)
class InputPlan:
    kind: str = "zero"
    amplitude: float = 1.0
    frequency: float = config.REFERENCE_FREQUENCY
    values: np.ndarray | None = None


@dataclass(frozen=True, eq=False)
class GainPlan:
    """Explicit gains, or a target radius to design them for."""

    target_radius: float
    gains: np.ndarray | None = None


@dataclass(frozen=True)
class SeparationPlan:
    block_order: int = config.BLOCK_ORDER
    tolerance: float = config.SEPARATION_TOLERANCE
    memory_gains: bool = False


@dataclass(frozen=True, eq=False)
class ExperimentSpec:
    name: str
    kind: str
    model: SystemModel
    horizon: int
    seed: int
    inputs: InputPlan
    observer: GainPlan
    feedback: GainPlan
    mpc: MpcConfig
    separation: SeparationPlan
    output_dir: Path
    x0: object = None  # None (kind default), "random", or a vector
    xhat0: object = None
    reference_frequency: float = config.REFERENCE_FREQUENCY
    reference_amplitude: float = config.REFERENCE_AMPLITUDE
    memory_window: int | None = None
    svg: bool = False
    channels: tuple = ()
    preset: str | None = None


# --- parsing helpers ---


def _int(value, field: str, minimum: int = 0) -> int:
    if isinstance(value, bool) or not isinstance(value, int):
        raise ConfigurationError(f"expected an integer, got {value!r}", field)
    if value < minimum:
        raise ConfigurationError(f"must be >= {minimum}, got {value}", field)
    return value


def _float(value, field: str) -> float:
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise ConfigurationError(f"expected a number, got {value!r}", field)
    return float(value)


def _bool(value, field: str) -> bool:
    if not isinstance(value, bool):
        raise ConfigurationError(f"expected true or false, got {value!r}", field)
    return value


def _str(value, field: str) -> str:
    if not isinstance(value, str) or not value:
        raise ConfigurationError(f"expected a non-empty string, got {value!r}", field)
    return value


def _array(value, field: str, ndim: tuple) -> np.ndarray:
    try:
        array = np.array(value, dtype=float)
    except (TypeError, ValueError) as exc:
        raise ConfigurationError(f"expected a numeric array: {exc}", field) from exc
    if array.ndim not in ndim:
        raise ConfigurationError(f"expected {' or '.join(map(str, ndim))} dimensions, got {array.ndim}", field)
    if not np.all(np.isfinite(array)):
        raise ConfigurationError("entries must be finite", field)
    return array


def _sections(data: dict) -> dict:
    unknown = sorted(set(data) - set(SECTION_KEYS))
    if unknown:
        raise ConfigurationError("unknown section", unknown[0])
    sections = {}
    for name, keys in SECTION_KEYS.items():
        section = data.get(name, {})
        if not isinstance(section, dict):
            raise ConfigurationError("expected a table", name)
        extra = sorted(set(section) - keys)
        if extra:
            raise ConfigurationError("unknown key", f"{name}.{extra[0]}")
        sections[name] = section
    return sections


def _model(section: dict) -> tuple:
    alpha_range = section.get("alpha_range", config.ALPHA_RANGE)
    if not (isinstance(alpha_range, (list, tuple)) and len(alpha_range) == 2):
        raise ConfigurationError("expected [low, high]", "model.alpha_range")
    alpha_range = tuple(_float(v, "model.alpha_range") for v in alpha_range)
    strict = _bool(section.get("strict_alpha", config.STRICT_ALPHA), "model.strict_alpha")

    preset = section.get("preset")
    if preset is not None:
        base = load_preset(_str(preset, "model.preset"))
        A, B, C, alpha = base.A, base.B, base.C, base.alpha.alpha
    elif {"A", "B", "C", "alpha"} <= set(section):
        A = B = C = alpha = None
    else:
        missing = sorted({"A", "B", "C", "alpha"} - set(section))
        raise ConfigurationError("give a preset or all of A, B, C, alpha", f"model.{missing[0]}")

    A = _array(section["A"], "model.A", (2,)) if "A" in section else A
    B = _array(section["B"], "model.B", (1, 2)) if "B" in section else B
    C = _array(section["C"], "model.C", (1, 2)) if "C" in section else C
    alpha = _array(section["alpha"], "model.alpha", (1,)) if "alpha" in section else alpha
    if B.ndim == 1:
        B = B[:, np.newaxis]
    try:
        orders = FractionalOrders(alpha, valid_range=alpha_range, strict=strict)
        model = SystemModel(A=A, B=B, C=C, alpha=orders)
    except ConfigurationError as exc:
        raise ConfigurationError(str(exc).split(": ", 1)[-1], f"model.{exc.field}") from exc
    return model, preset


def _vector(value, field: str, n: int, allow_random: bool = False):
    if value is None:
        return None
    if allow_random and value == "random":
        return "random"
    vector = _array(value, field, (1,))
    if vector.shape[0] != n:
        raise ConfigurationError(f"expected {n} entries, got {vector.shape[0]}", field)
    return vector


def _gains(section: dict, name: str, default_radius: float) -> GainPlan:
    radius = _float(section.get("target_radius", default_radius), f"{name}.target_radius")
    if radius < 0:
        raise ConfigurationError(f"must be >= 0, got {radius}", f"{name}.target_radius")
    gains = section.get("gains")
    if gains is not None:
        gains = _array(gains, f"{name}.gains", (2, 3))
    return GainPlan(target_radius=radius, gains=gains)


def _cross_check(spec: ExperimentSpec) -> ExperimentSpec:
    """Checks that need the model or the sample rate together with another section."""
    if spec.observer.gains is not None:
        ObserverGains(spec.observer.gains).check(spec.model)
    if spec.feedback.gains is not None:
        FeedbackGains(spec.feedback.gains).check(spec.model)
    nyquist = spec.mpc.sample_rate / 2
    if spec.kind == "mpc" and not 0 < spec.reference_frequency < nyquist:
        raise ConfigurationError(
            f"{spec.reference_frequency} Hz must lie in (0, fs/2 = {nyquist})", "reference.frequency"
        )
    if spec.inputs.kind == "square" and not 0 < spec.inputs.frequency < nyquist:
        raise ConfigurationError(f"{spec.inputs.frequency} Hz must lie in (0, fs/2 = {nyquist})", "inputs.frequency")
    return spec


def spec_from_dict(data: dict, default_name: str | None = None) -> ExperimentSpec:
    """Validates a parsed experiment mapping and applies the defaults."""
    sections = _sections(data)
    experiment = sections["experiment"]

    if "kind" not in experiment:
        raise ConfigurationError("scenario kind is required", "experiment.kind")
    kind = _str(experiment["kind"], "experiment.kind")
    if kind not in config.SCENARIO_KINDS:
        raise ConfigurationError(
            f"unknown scenario kind '{kind}', choose from {config.SCENARIO_KINDS}", "experiment.kind"
        )
    name = _str(experiment.get("name", default_name or kind), "experiment.name")
    seed = _int(experiment.get("seed", config.DEFAULT_SEED), "experiment.seed")

    model, preset = _model(sections["model"])
    n = model.n_states
    memory_window = sections["model"].get("memory_window")
    if memory_window is not None:
        memory_window = _int(memory_window, "model.memory_window", minimum=1)

    inputs_section = sections["inputs"]
    values = inputs_section.get("values")
    if values is not None:
        values = _array(values, "inputs.values", (1, 2))
        values = values.reshape(values.shape[0], -1)
        if values.shape[1] != model.n_inputs:
            raise ConfigurationError(
                f"rows have {values.shape[1]} entries, B takes {model.n_inputs}", "inputs.values"
            )
    input_kind = _str(inputs_section.get("kind", "explicit" if values is not None else "zero"), "inputs.kind")
    if input_kind not in INPUT_KINDS:
        raise ConfigurationError(f"unknown input kind '{input_kind}', choose from {INPUT_KINDS}", "inputs.kind")
    if (input_kind == "explicit") != (values is not None):
        raise ConfigurationError("explicit inputs need values and vice versa", "inputs.values")
    inputs = InputPlan(
        kind=input_kind,
        amplitude=_float(inputs_section.get("amplitude", 1.0), "inputs.amplitude"),
        frequency=_float(inputs_section.get("frequency", config.REFERENCE_FREQUENCY), "inputs.frequency"),
        values=values,
    )

    horizon = experiment.get("horizon")
    if horizon is not None:
        horizon = _int(horizon, "experiment.horizon")
    if values is not None:
        if horizon is not None and horizon != values.shape[0]:
            raise ConfigurationError(
                f"{values.shape[0]} input rows but horizon {horizon}", "inputs.values"
            )
        horizon = values.shape[0]
    horizon = config.DEFAULT_HORIZON if horizon is None else horizon
    if kind in ("closedloop", "mpc") and horizon < 1:
        raise ConfigurationError(f"must be >= 1 for {kind}, got {horizon}", "experiment.horizon")

    mpc_section = sections["mpc"]
    mpc_config = MpcConfig(
        prediction_horizon=_int(
            mpc_section.get("prediction_horizon", config.PREDICTION_HORIZON), "mpc.prediction_horizon", 1
        ),
        control_horizon=_int(mpc_section.get("control_horizon", config.CONTROL_HORIZON), "mpc.control_horizon", 1),
        mvar_order=_int(mpc_section.get("mvar_order", config.MVAR_ORDER), "mpc.mvar_order", 1),
        regularization=_float(mpc_section.get("regularization", config.REGULARIZATION), "mpc.regularization"),
        sample_rate=_float(mpc_section.get("sample_rate", config.SAMPLE_RATE), "mpc.sample_rate"),
    )

    separation_section = sections["separation"]
    separation = SeparationPlan(
        block_order=_int(separation_section.get("block_order", config.BLOCK_ORDER), "separation.block_order", 1),
        tolerance=_float(separation_section.get("tolerance", config.SEPARATION_TOLERANCE), "separation.tolerance"),
        memory_gains=_bool(separation_section.get("memory_gains", False), "separation.memory_gains"),
    )

    output = sections["output"]
    directory = output.get("directory")
    output_dir = Path(_str(directory, "output.directory")) if directory else config.OUTPUT_DIR / name
    channels = output.get("channels", [])
    if not isinstance(channels, list) or not all(isinstance(c, str) for c in channels):
        raise ConfigurationError("expected a list of column names", "output.channels")

    reference = sections["reference"]
    spec = ExperimentSpec(
        name=name,
        kind=kind,
        model=model,
        preset=preset,
        horizon=horizon,
        seed=seed,
        x0=_vector(sections["initial"].get("x0"), "initial.x0", n, allow_random=True),
        xhat0=_vector(sections["initial"].get("xhat0"), "initial.xhat0", n),
        inputs=inputs,
        observer=_gains(sections["observer"], "observer", config.OBSERVER_TARGET_RADIUS),
        feedback=_gains(sections["feedback"], "feedback", config.FEEDBACK_TARGET_RADIUS),
        mpc=mpc_config,
        reference_frequency=_float(reference.get("frequency", config.REFERENCE_FREQUENCY), "reference.frequency"),
        reference_amplitude=_float(reference.get("amplitude", config.REFERENCE_AMPLITUDE), "reference.amplitude"),
        separation=separation,
        memory_window=memory_window,
        output_dir=output_dir,
        svg=_bool(output.get("svg", False), "output.svg"),
        channels=tuple(channels),
    )
    _cross_check(spec)
    logger.debug(f"Experiment '{spec.name}' ({spec.kind}) validated: K={spec.horizon}, seed={spec.seed}")
    return spec


def load_config(path: Path) -> ExperimentSpec:
    """Parses and validates one experiment file. OSError propagates."""
    path = Path(path)
    text = path.read_text(encoding="utf-8")
    if not text.strip():
        raise ConfigParseError(f"empty configuration file {path}", 1, 1)
    try:
        data = tomllib.loads(text)
    except tomllib.TOMLDecodeError as exc:
        line, column = getattr(exc, "lineno", None), getattr(exc, "colno", None)
        if line is None:
            match = _TOML_POSITION.search(str(exc))
            line, column = (int(match[1]), int(match[2])) if match else (1, 1)
        message = getattr(exc, "msg", str(exc).split(" (at ")[0])
        raise ConfigParseError(f"{path.name}: {message}", line, column) from exc
    logger.info("Loaded experiment file %s", path)
    return spec_from_dict(data, default_name=path.stem)


def default_spec(kind: str, preset: str = "paper") -> ExperimentSpec:
    """The spec used when the CLI runs a scenario without a file."""
    return spec_from_dict({"experiment": {"kind": kind}, "model": {"preset": preset}})


def override(spec: ExperimentSpec, **changes) -> ExperimentSpec:
    """Applies the CLI flags that were actually given."""
    changes = {key: value for key, value in changes.items() if value is not None}
    preset = changes.pop("preset", None)
    if preset is not None:
        changes["model"] = load_preset(preset)
        changes["preset"] = preset
        changes.setdefault("name", spec.name)
    if "horizon" in changes:
        _int(changes["horizon"], "experiment.horizon", 1 if spec.kind in ("closedloop", "mpc") else 0)
        if spec.inputs.kind == "explicit" and changes["horizon"] != spec.horizon:
            raise ConfigurationError("horizon is fixed by the explicit input rows", "experiment.horizon")
    if "seed" in changes:
        _int(changes["seed"], "experiment.seed")
    if changes.get("model") is not None:
        n = changes["model"].n_states
        for name in ("x0", "xhat0"):
            value = getattr(spec, name)
            if isinstance(value, np.ndarray) and value.shape[0] != n:
                raise ConfigurationError(f"expected {n} entries, got {value.shape[0]}", f"initial.{name}")
    return _cross_check(replace(spec, **changes))


# --- scenario execution ---


class ExperimentRunner:
    """Runs one validated ExperimentSpec and returns the artifact paths."""

    def __init__(self, spec: ExperimentSpec):
        self.spec = spec
        self.model = spec.model
        self.rng = np.random.default_rng(spec.seed)
        self.handlers = {
            "coeffs": self._run_coeffs,
            "simulate": self._run_simulate,
            "observe": self._run_observe,
            "closedloop": self._run_closedloop,
            "mpc": self._run_mpc,
            "verify-separation": self._run_separation,
        }

    def run(self) -> list:
        spec = self.spec
        logger.info(f"Running scenario '{spec.name}' ({spec.kind}) into {spec.output_dir}")
        spec.output_dir.mkdir(parents=True, exist_ok=True)
        try:
            paths = self.handlers[spec.kind]()
        except FodsError as exc:
            logger.error(f"Scenario '{spec.name}' ({spec.kind}) failed: {exc}")
            raise
        trace_path = spec.output_dir / config.TRACE_FILE_NAME
        if spec.svg and trace_path in paths:
            paths.append(render_svg(trace_path, spec.channels or None))
        logger.info(f"Scenario '{spec.name}' wrote {len(paths)} artifacts.")
        return paths

    # initial conditions and signals

    def _x0(self, default: str) -> np.ndarray:
        n = self.model.n_states
        x0 = self.spec.x0
        if isinstance(x0, str):
            return self.rng.standard_normal(n)
        if x0 is None:
            return np.ones(n) if default == "ones" else np.zeros(n)
        return x0

    def _xhat0(self) -> np.ndarray:
        return np.zeros(self.model.n_states) if self.spec.xhat0 is None else self.spec.xhat0

    def _inputs(self) -> np.ndarray:
        plan, steps, p = self.spec.inputs, self.spec.horizon, self.model.n_inputs
        if plan.kind == "explicit":
            return plan.values
        if plan.kind == "constant":
            return np.full((steps, p), plan.amplitude)
        if plan.kind == "random":
            return plan.amplitude * self.rng.standard_normal((steps, p))
        if plan.kind == "square":
            wave = square_wave_reference(plan.frequency, self.spec.mpc.sample_rate, plan.amplitude, steps, p)
            return np.array(wave.samples)
        return np.zeros((steps, p))

    def _observer_gains(self, table) -> ObserverGains:
        plan = self.spec.observer
        if plan.gains is not None:
            gains = ObserverGains(plan.gains)
        else:
            gains = ObserverGains.single(design_observer_gain(table, self.model.C, plan.target_radius))
        gains.check(self.model)
        return gains

    def _feedback_gains(self, table) -> FeedbackGains:
        plan = self.spec.feedback
        if plan.gains is not None:
            gains = FeedbackGains(plan.gains)
        else:
            gains = FeedbackGains.single(design_feedback_gain(table, self.model.B, plan.target_radius))
        gains.check(self.model)
        return gains

    def _write_text(self, file_name: str, text: str):
        path = self.spec.output_dir / file_name
        path.write_text(text, encoding="utf-8")
        logger.info("Summary written to %s", path)
        return path

    # scenarios

    def _run_coeffs(self) -> list:
        table = build_coefficient_table(self.model, self.spec.horizon)
        return [table.to_csv(self.spec.output_dir / config.COEFFICIENTS_FILE_NAME)]

    def _run_simulate(self) -> list:
        trajectory = simulate(self.model, self._x0("ones"), self._inputs(), self.spec.memory_window)
        frame = trace_io.trajectory_frame(trajectory, self.model, self.spec.mpc.sample_rate)
        return [trace_io.write_trace(frame, self.spec.output_dir / config.TRACE_FILE_NAME)]

    def _run_observe(self) -> list:
        spec, model = self.spec, self.model
        table = build_coefficient_table(model, max(spec.horizon, 1))
        gains = self._observer_gains(table)
        plant = simulate(model, self._x0("ones"), self._inputs(), spec.memory_window, table)

        estimates = EstimateHistory.start(model, self._xhat0())
        with np.errstate(over="ignore", invalid="ignore"):
            for k in range(spec.horizon):
                estimate = observer_step_memory(
                    model, gains, estimates, plant.inputs, plant.outputs, table, spec.memory_window
                )
                if not np.all(np.isfinite(estimate)):
                    raise NumericOverflowError(k + 1, "estimate")
                estimates.append(model, estimate)
        if spec.horizon > 0:
            validate_observer_decay(model, gains, spec.horizon)

        frame = trace_io.build_frame(
            plant.states, plant.inputs, plant.outputs, spec.mpc.sample_rate, estimates=estimates.as_array()
        )
        return [trace_io.write_trace(frame, spec.output_dir / config.TRACE_FILE_NAME)]

    def _run_closedloop(self) -> list:
        spec, model = self.spec, self.model
        table = build_coefficient_table(model, spec.horizon)
        ogains = self._observer_gains(table)
        fgains = self._feedback_gains(table)
        trace = closed_loop_simulate(
            model, fgains, ogains, self._x0("ones"), self._xhat0(), spec.horizon, table, spec.memory_window
        )
        frame = trace_io.closed_loop_frame(trace, spec.mpc.sample_rate)
        trace_path = trace_io.write_trace(frame, spec.output_dir / config.TRACE_FILE_NAME)

        A0 = table.memory_matrix(0)
        fmt = config.TRACE_FLOAT_FORMAT
        errors = np.linalg.norm(trace.errors, axis=1)
        lines = [
            f"closed-loop run: {spec.name}",
            f"steps K: {spec.horizon}",
            f"observer gain taps: {ogains.depth}",
            f"feedback gain taps: {fgains.depth}",
            f"rho(A_0 - L_0 C): {fmt % placement.spectral_radius(A0 - ogains.leading @ model.C)}",
            f"rho(A_0 + B F_0): {fmt % placement.spectral_radius(A0 + model.B @ fgains.tap(0))}",
            f"plant residual: {fmt % plant_residual(trace, model, fgains)}",
            f"error residual: {fmt % error_residual(trace, model, ogains)}",
            f"|e[0]|: {fmt % errors[0]}",
            f"|e[K]|: {fmt % errors[-1]}",
            f"|x[K]|: {fmt % np.linalg.norm(trace.states[-1])}",
        ]
        summary = self._write_text(config.CLOSED_LOOP_SUMMARY_NAME, "\n".join(lines) + "\n")
        return [trace_path, summary]

    def _run_mpc(self) -> list:
        spec, model, mpc_config = self.spec, self.model, self.spec.mpc
        steps = spec.horizon
        table = build_coefficient_table(model, steps)
        ogains = self._observer_gains(table)
        reference = square_wave_reference(
            spec.reference_frequency,
            mpc_config.sample_rate,
            spec.reference_amplitude,
            steps + mpc_config.prediction_horizon,
            model.n_states,
        )
        x0 = self._x0("zeros")
        trace = run_mpc_closed_loop(
            model, mpc_config, ogains, reference, steps, x0, self._xhat0(), spec.memory_window
        )
        frame = trace_io.closed_loop_frame(trace, mpc_config.sample_rate)
        trace_path = trace_io.write_trace(frame, spec.output_dir / config.TRACE_FILE_NAME)

        overall, per_channel = tracking_rms(trace)
        baseline = simulate(model, x0, np.zeros((steps, model.n_inputs)), spec.memory_window, table)
        deviation = baseline.states[1:] - trace.references[1:]
        baseline_rms = float(np.sqrt(np.mean(np.sum(deviation**2, axis=1))))
        worst = max(s.gradient_norm / (1.0 + s.cost) for s in trace.solutions)
        certified = all(s.certified for s in trace.solutions)
        if not certified:
            logger.warning("Some MPC solves missed the optimality certificate.")

        fmt = config.TRACE_FLOAT_FORMAT
        lines = [
            f"mpc run: {spec.name}",
            f"prediction horizon P: {mpc_config.prediction_horizon}",
            f"control horizon M: {mpc_config.control_horizon}",
            f"mvar order p: {mpc_config.mvar_order}",
            f"regularization: {fmt % mpc_config.regularization}",
            f"sample rate [Hz]: {fmt % mpc_config.sample_rate}",
            f"steps K: {steps}",
            f"solves: {len(trace.solutions)}",
            f"tracking rms: {fmt % overall}",
            f"zero-input baseline rms: {fmt % baseline_rms}",
            f"rms ratio: {fmt % (overall / baseline_rms if baseline_rms > 0 else float('nan'))}",
            "per-channel rms: " + ", ".join(fmt % value for value in per_channel),
            f"worst relative gradient: {fmt % worst}",
            f"all solves certified: {certified}",
        ]
        summary = self._write_text(config.MPC_SUMMARY_NAME, "\n".join(lines) + "\n")
        return [trace_path, summary]

    def _run_separation(self) -> list:
        spec, model = self.spec, self.model
        table = build_coefficient_table(model, spec.separation.block_order)
        ogains = self._observer_gains(table)
        fgains = self._feedback_gains(table)
        report = verify_separation(
            model,
            fgains,
            ogains,
            block_order=spec.separation.block_order,
            tolerance=spec.separation.tolerance,
            memory_gains=spec.separation.memory_gains,
        )
        if not report.passed:
            logger.warning(f"Separation check failed for '{spec.name}': mismatch {report.max_mismatch:.3g}")
        text_path = self._write_text(config.SEPARATION_REPORT_NAME, report.to_text())
        csv_path = spec.output_dir / config.SEPARATION_CSV_NAME
        report.to_frame().to_csv(
            csv_path, index=False, float_format=config.TRACE_FLOAT_FORMAT, lineterminator="\n"
        )
        return [text_path, csv_path]


def run_experiment(spec: ExperimentSpec) -> list:
    return ExperimentRunner(spec).run()


# --- sweeps ---


def _distinct_names(specs: list) -> list:
    seen = {}
    names = []
    for spec in specs:
        count = seen.get(spec.name, 0)
        seen[spec.name] = count + 1
        names.append(spec.name if count == 0 else f"{spec.name}-{count + 1}")
    return names


def run_sweep(config_paths: list, out_dir: Path, workers: int = 4, ledger_path: Path | None = None) -> dict:
    """
    Runs independent scenarios concurrently, each into out_dir/<name>.

    Every file is validated before anything runs. Returns name -> artifact
    paths, or the exception for scenarios that failed.
    """
    from database.db_config import utcnow
    from database.models import RunState, SweepRun
    from database.session_manager import get_session, init_ledger

    if workers < 1:
        raise ConfigurationError(f"must be >= 1, got {workers}", "workers")
    out_dir = Path(out_dir)
    specs = [load_config(path) for path in config_paths]
    names = _distinct_names(specs)
    specs = [replace(spec, name=name, output_dir=out_dir / name) for spec, name in zip(specs, names)]

    init_ledger(ledger_path or out_dir / config.LEDGER_PATH.name)
    with get_session() as session:
        runs = [
            SweepRun(
                scenario_name=spec.name,
                kind=spec.kind,
                config_path=str(path),
                output_dir=str(spec.output_dir),
                state=RunState.pending,
            )
            for spec, path in zip(specs, config_paths)
        ]
        session.add_all(runs)
        session.flush()
        run_ids = [run.id for run in runs]

    results = {}
    with ThreadPoolExecutor(max_workers=workers) as pool:
        futures = {}
        for spec, run_id in zip(specs, run_ids):
            with get_session() as session:
                run = session.get(SweepRun, run_id)
                run.state = RunState.running
                run.started_at = utcnow()
            futures[pool.submit(run_experiment, spec)] = (spec, run_id)

        for future in as_completed(futures):
            spec, run_id = futures[future]
            with get_session() as session:
                run = session.get(SweepRun, run_id)
                run.finished_at = utcnow()
                try:
                    paths = future.result()
                except Exception as exc:  # recorded, the sweep carries on
                    logger.error(f"Sweep scenario '{spec.name}' failed: {exc}")
                    run.state = RunState.failed
                    run.last_error = f"{type(exc).__name__}: {exc}"
                    results[spec.name] = exc
                else:
                    run.state = RunState.success
                    run.artifact_count = len(paths)
                    results[spec.name] = paths

    failed = sum(isinstance(value, Exception) for value in results.values())
    logger.info(f"Sweep finished: {len(results) - failed} succeeded, {failed} failed.")
    return {name: results[name] for name in names}


logger.debug("services/experiments.py module loaded.")
