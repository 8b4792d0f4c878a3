"""
Command-line surface: one subcommand per scenario kind plus `sweep`.

Exit codes: 0 success, 2 configuration or design error, 3 numeric failure,
4 I/O error, 1 anything unexpected.
"""

import functools
import logging
from pathlib import Path

import click
from rich.console import Console
from rich.table import Table

from config import config
from services.errors import ConfigurationError, DesignError, NumericError
from services.experiments import default_spec, load_config, override, run_experiment, run_sweep
from services.presets import PRESETS

logger = logging.getLogger(__name__)
console = Console()

EXIT_CONFIG = 2
EXIT_NUMERIC = 3
EXIT_IO = 4
EXIT_UNEXPECTED = 1


def guarded(func):
    """Turns service exceptions into a red message and the matching exit code."""

    @functools.wraps(func)
    def wrapper(*args, **kwargs):
        try:
            return func(*args, **kwargs)
        except (ConfigurationError, DesignError) as exc:
            error = exc
            code, label = EXIT_CONFIG, "Configuration error"
        except NumericError as exc:
            error = exc
            code, label = EXIT_NUMERIC, "Numeric failure"
        except OSError as exc:
            error = exc
            code, label = EXIT_IO, "I/O error"
        except Exception as exc:
            error = exc
            logger.critical("Unexpected failure.", exc_info=True)
            code, label = EXIT_UNEXPECTED, "Unexpected error"
        logger.error(f"{label}: {error}")
        console.print(f"[bold red]{label}:[/bold red] {error}")
        raise SystemExit(code)

    return wrapper


def _artifact_table(title: str, rows) -> Table:
    table = Table(title=title, box=config.BOX_STYLE, show_lines=False)
    table.add_column("Scenario", style="cyan")
    table.add_column("Artifact", style="green")
    for scenario, path in rows:
        table.add_row(scenario, str(path))
    return table


def scenario_options(func):
    options = [
        click.option(
            "--config",
            "config_path",
            type=click.Path(dir_okay=False, path_type=Path),
            help="Experiment TOML file.",
        ),
        click.option("--preset", type=click.Choice(sorted(PRESETS)), help="Named model, replaces [model]."),
        click.option("--out", "out_dir", type=click.Path(file_okay=False, path_type=Path), help="Output directory."),
        click.option("--svg/--no-svg", default=None, help="Also render the trace as SVG."),
        click.option("--seed", type=click.IntRange(0, 2**64 - 1), help="Random seed."),
        click.option("--horizon", type=click.IntRange(min=0), help="Steps K (or table horizon J for coeffs)."),
    ]
    for option in reversed(options):
        func = option(func)
    return func


def _run_scenario(kind, config_path, preset, out_dir, svg, seed, horizon):
    if config_path is not None:
        spec = load_config(config_path)
        if spec.kind != kind:
            raise ConfigurationError(
                f"file describes a '{spec.kind}' scenario, not '{kind}'", "experiment.kind"
            )
    else:
        spec = default_spec(kind, preset or "paper")
        preset = None
    spec = override(spec, preset=preset, output_dir=out_dir, svg=svg, seed=seed, horizon=horizon)
    paths = run_experiment(spec)
    console.print(_artifact_table(f"{kind}: {spec.name}", [(spec.name, p) for p in paths]))
    return paths


def _scenario_command(kind: str, help_text: str):
    @guarded
    def command(**kwargs):
        _run_scenario(kind, **kwargs)

    command.__name__ = kind.replace("-", "_")
    return cli.command(name=kind, help=help_text)(scenario_options(command))


@click.group()
def cli():
    """Fractional-order system simulation, estimation and control."""


_scenario_command("coeffs", "Write the Grünwald-Letnikov coefficient table.")
_scenario_command("simulate", "Simulate the open-loop full-memory recursion.")
_scenario_command("observe", "Run the Luenberger observer along an open-loop trajectory.")
_scenario_command("closedloop", "Run observer-based memory feedback.")
_scenario_command("mpc", "Track the square-wave reference with receding-horizon control.")
_scenario_command("verify-separation", "Check the spectral separation on a block-Toeplitz truncation.")


@cli.command()
@click.argument("configs", nargs=-1, required=True, type=click.Path(dir_okay=False, path_type=Path))
@click.option("--out", "out_dir", type=click.Path(file_okay=False, path_type=Path), default=None)
@click.option("--workers", type=click.IntRange(min=1), default=4, show_default=True)
@click.option("--ledger", "ledger_path", type=click.Path(dir_okay=False, path_type=Path), default=None)
@guarded
def sweep(configs, out_dir, workers, ledger_path):
    """Run several experiment files concurrently, each into OUT/<name>."""
    out_dir = out_dir or config.OUTPUT_DIR
    results = run_sweep(list(configs), out_dir, workers=workers, ledger_path=ledger_path)
    rows = []
    failures = []
    for name, outcome in results.items():
        if isinstance(outcome, Exception):
            failures.append((name, outcome))
            rows.append((name, f"FAILED: {outcome}"))
        else:
            rows.extend((name, path) for path in outcome)
    console.print(_artifact_table("sweep", rows))
    if failures:
        # first failure decides the exit code
        raise failures[0][1]
