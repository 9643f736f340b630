"""
Command-line surface.

    python -m peterlin_hdg.cli run       --config configs/example2.toml --out results/example2
    python -m peterlin_hdg.cli sweep-h   --config configs/example1_eps1.toml [--full]
    python -m peterlin_hdg.cli sweep-tau --config configs/example1_temporal.toml [--full]
    python -m peterlin_hdg.cli verify    --seed 7

Exit codes: 0 success, 2 configuration error, 3 numerical failure.
"""

import logging
from typing import Optional

import typer
from tabulate import tabulate

from .config import build_config, load_config
from .exceptions import ConfigError
from .pipeline import EXIT_CONFIG, EXIT_NUMERICAL, EXIT_OK, run_study
from .properties import run_property_suites

logger = logging.getLogger(__name__)

app = typer.Typer(help="HDG solver for the diffusive Peterlin viscoelastic model.", add_completion=False)


def _setup_logging(verbose):
    logging.basicConfig(
        level=logging.DEBUG if verbose else logging.INFO,
        format='%(asctime)s - %(levelname)s - %(message)s',
    )


def _load(config_path, overrides):
    try:
        if config_path is None:
            return build_config({}, overrides)
        return load_config(config_path, overrides)
    except ConfigError as e:
        logger.error(f"❌ {e}")
        raise typer.Exit(EXIT_CONFIG)
    except FileNotFoundError as e:
        logger.error(f"❌ Config file not found: {e.filename}")
        raise typer.Exit(EXIT_CONFIG)


def _print_convergence(manifest):
    rows = [
        [r["label"], r["tau"], r["completed_steps"]]
        + ([r["errors"]["u_l2"], r["errors"]["p_l2"], r["errors"]["C_l2"]] if r["errors"] else ["-", "-", "-"])
        for r in manifest["runs"]
    ]
    headers = ["run", "tau", "steps", "|u-u_h|", "|p-p_h|", "|C-C_h|"]
    typer.echo(tabulate(rows, headers=headers, floatfmt=".3e"))


def _study(config):
    code, manifest = run_study(config)
    _print_convergence(manifest)
    raise typer.Exit(code)


@app.command("run")
def run_command(
    config: Optional[str] = typer.Option(None, "--config", help="TOML configuration document"),
    out: Optional[str] = typer.Option(None, "--out", help="Output directory"),
    threads: Optional[int] = typer.Option(None, "--threads", help="Worker processes for sweep points"),
    verbose: bool = typer.Option(False, "--verbose", "-v"),
):
    """Run the configured study as written in the document."""
    _setup_logging(verbose)
    _study(_load(config, {"output_dir": out, "threads": threads}))


@app.command("sweep-h")
def sweep_h(
    config: Optional[str] = typer.Option(None, "--config"),
    out: Optional[str] = typer.Option(None, "--out"),
    threads: Optional[int] = typer.Option(None, "--threads"),
    full: bool = typer.Option(False, "--full", help="Add the next finer mesh level"),
    verbose: bool = typer.Option(False, "--verbose", "-v"),
):
    """Spatial convergence study over mesh_levels."""
    _setup_logging(verbose)
    run_config = _load(config, {"output_dir": out, "threads": threads, "study": "spatial"})
    if full:
        run_config = run_config.model_copy(update={"mesh_levels": run_config.mesh_levels + [max(run_config.mesh_levels) + 1]})
    _study(run_config)


@app.command("sweep-tau")
def sweep_tau(
    config: Optional[str] = typer.Option(None, "--config"),
    out: Optional[str] = typer.Option(None, "--out"),
    threads: Optional[int] = typer.Option(None, "--threads"),
    full: bool = typer.Option(False, "--full", help="Use mesh level 6"),
    verbose: bool = typer.Option(False, "--verbose", "-v"),
):
    """Temporal convergence study over step_counts at a fixed mesh."""
    _setup_logging(verbose)
    run_config = _load(config, {"output_dir": out, "threads": threads, "study": "temporal"})
    if full:
        run_config = run_config.model_copy(update={"mesh_level": 6})
    _study(run_config)


@app.command("verify")
def verify(
    seed: int = typer.Option(0, "--seed", help="Seed of the randomized suites"),
    verbose: bool = typer.Option(False, "--verbose", "-v"),
):
    """Run the property suites; exit 3 if any fails."""
    _setup_logging(verbose)
    table = run_property_suites(seed)
    typer.echo(tabulate(table, headers="keys", tablefmt="github", showindex=False, floatfmt=".3e"))
    raise typer.Exit(EXIT_OK if table["passed"].all() else EXIT_NUMERICAL)


def main():
    app()


if __name__ == "__main__":
    main()
