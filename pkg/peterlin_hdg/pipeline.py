"""
Study orchestration: run every sweep point, then write the result files.

    task_plan_points      -> (mesh level, step count) per sweep point
    task_run_point        -> one simulation + errors against the exact solution
    task_write_outputs    -> convergence.csv, diagnostics.csv, field dumps
    task_study_report     -> manifest.json with status and effective parameters
"""

import logging
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from typing import Optional

from . import __version__
from .config import default_config
from .exceptions import BlowUpError, StepFailureError
from .stepper import run
from .verification import ConvergenceReport, error_norms
from .writers import (
    build_manifest,
    dump_name,
    write_convergence_csv,
    write_diagnostics_csv,
    write_manifest,
    write_vtk,
)

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_NUMERICAL = 3


@dataclass
class PointOutcome:
    """Everything one sweep point produced (a partial run on failure)."""

    label: str
    level: int
    steps: int
    tau: float
    result: object
    errors: Optional[object] = None
    failure: Optional[str] = None

    @property
    def failed(self):
        return self.failure is not None


# ============================================
# TASK FUNCTIONS
# ============================================

def task_plan_points(config):
    """Sweep points of the study as (mesh level, step count) pairs."""
    if config.study == "spatial":
        return [(level, config.steps) for level in config.mesh_levels]
    if config.study == "temporal":
        return [(config.mesh_level, n) for n in config.step_counts]
    return [(config.mesh_level, config.steps)]


def task_run_point(config, level, steps):
    """
    Run one point. Failures come back inside the outcome instead of being
    raised, so worker processes never have to pickle an exception.
    """
    label = f"level{level}_N{steps}"
    tau = config.final_time / steps
    try:
        result = run(config, mesh_level=level, steps=steps, label=label)
    except (StepFailureError, BlowUpError) as e:
        return PointOutcome(label, level, steps, tau, getattr(e, "partial_result", None), failure=str(e))

    errors = None
    if result.case.has_exact_solution:
        errors = error_norms(
            result.mesh, result.layout, result.final_state, result.case, config.final_time,
            epsilon=config.epsilon, alpha=config.alpha,
        )
        logger.info(
            f"📊 {label}: |u-u_h|={errors.u_l2:.3e}, |p-p_h|={errors.p_l2:.3e}, |C-C_h|={errors.C_l2:.3e}"
        )
    return PointOutcome(label, level, steps, tau, result, errors)


def task_run_points(config, points):
    """Run the sweep, in worker processes when threads > 1; results keep submission order."""
    if config.threads > 1 and len(points) > 1:
        with ProcessPoolExecutor(max_workers=config.threads) as pool:
            futures = [pool.submit(task_run_point, config, level, steps) for level, steps in points]
            return [future.result() for future in futures]
    return [task_run_point(config, level, steps) for level, steps in points]


def task_convergence_report(config, outcomes):
    """Convergence table of the successful points, or None when there is nothing to compare."""
    measured = [o for o in outcomes if o.errors is not None]
    if not measured:
        return None
    if config.study == "temporal":
        kind, steps = "tau", [o.tau for o in measured]
    else:
        kind, steps = "h", [2.0 ** -o.level for o in measured]
    metadata = {"epsilon": config.epsilon, "nu": config.nu, "alpha": config.alpha, "beta": config.beta}
    return ConvergenceReport.from_records(kind, steps, [o.steps for o in measured], [o.errors for o in measured], metadata)


def task_write_outputs(config, outcomes, report):
    out = config.output_dir
    files = []
    if report is not None:
        files.append(write_convergence_csv(report, os.path.join(out, "convergence.csv")))

    results = [o.result for o in outcomes if o.result is not None]
    files.append(write_diagnostics_csv(results, os.path.join(out, "diagnostics.csv")))

    for result in results:
        for t, state in sorted(result.stored_states.items()):
            path = os.path.join(out, dump_name(result.label, t))
            files.append(write_vtk(path, result.mesh, result.layout, state))
    return [os.path.relpath(f, out) for f in files]


def task_study_report(config, outcomes, files):
    failures = [o for o in outcomes if o.failed]
    status = "FAILED" if failures else "SUCCESS"
    message = "; ".join(f"{o.label}: {o.failure}" for o in failures) or None
    runs = [
        {
            "label": o.label,
            "mesh_level": o.level,
            "steps": o.steps,
            "tau": o.tau,
            "completed_steps": o.result.steps if o.result is not None else 0,
            "regularization_activations": o.result.regularization_count if o.result is not None else 0,
            "monitor": o.result.monitor_report if o.result is not None else None,
            "errors": o.errors.as_dict() if o.errors is not None else None,
            "failure": o.failure,
        }
        for o in outcomes
    ]
    manifest = build_manifest(config, status, runs, files + ["manifest.json"], __version__, message)
    write_manifest(os.path.join(config.output_dir, "manifest.json"), manifest)
    return manifest


def run_study(config):
    """
    Run the configured study and write its result files.

    Returns (exit code, manifest). Partial outputs of a failed point are
    kept and the manifest is marked FAILED.
    """
    logger.info(f"🚀 Starting {config.study} study for {config.experiment} in {config.output_dir}")
    os.makedirs(config.output_dir, exist_ok=True)

    points = task_plan_points(config)
    outcomes = task_run_points(config, points)
    report = task_convergence_report(config, outcomes)
    files = task_write_outputs(config, outcomes, report)
    manifest = task_study_report(config, outcomes, files)

    if manifest["status"] == "FAILED":
        logger.error(f"❌ Study failed: {manifest['message']}")
        return EXIT_NUMERICAL, manifest
    logger.info(f"✅ Study complete: {len(outcomes)} run(s), {len(files)} file(s)")
    return EXIT_OK, manifest


if __name__ == "__main__":
    logging.basicConfig(level=logging.INFO, format='%(asctime)s - %(levelname)s - %(message)s')
    code, _ = run_study(default_config("example1", study="single", mesh_level=3, steps=40))
    raise SystemExit(code)
