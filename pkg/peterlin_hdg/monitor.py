"""
Run health monitoring: blow-up guard and discrete energy bookkeeping.

The guard is always active. Accumulating the energy terms is optional and
only feeds the run report.
"""

import logging
import math

import numpy as np

from .exceptions import BlowUpError

logger = logging.getLogger(__name__)

BLOWUP_BOUND = 1e6

# StepDiagnostics fields that must stay finite
MONITORED_FIELDS = (
    "u_l2_sq", "trC_l2_sq", "u_increment_sq", "trC_increment_sq", "viscous_sq", "velocity_jump_sq",
    "eps_trC_grad_sq", "conformation_jump_sq", "upwind_u", "upwind_trC", "trace_product_sq",
    "forcing_l2_sq",
)
# terms summed over time on the left side of the stability estimate
ACCUMULATED_FIELDS = MONITORED_FIELDS[2:11]


class EnergyMonitor:
    """
    Watch the per-step diagnostics of one run.

    Tracks the ratio of the accumulated left side of the energy estimate,
    ||u^n||^2 + ||trC^n||^2 + sum of increments and dissipation terms, to the
    data size ||u^0||^2 + ||trC^0||^2 + tau * sum ||f^n||^2, and the smallest
    growth rate C2 with ratio <= exp(C2 t) seen so far.
    """

    def __init__(self, bound=BLOWUP_BOUND, accumulate=True):
        self.bound = bound
        self.accumulate = accumulate
        self.initial_energy = 0.0
        self.forcing_energy = 0.0
        self.dissipated = 0.0
        self.max_ratio = 0.0
        self.growth = 0.0
        self.spd_lost_at = None
        self.alerts = []

    def start(self, state, ctx):
        """Record the data size of the initial state."""
        w = ctx.cell_weights
        u = ctx.cell_values(state.u)
        C = ctx.cell_values(state.C)
        self.initial_energy = float(np.sum(w[..., None] * u ** 2) + np.sum(w * (C[..., 0] + C[..., 2]) ** 2))
        return self.initial_energy

    def check_bound(self, value, name, step, time, diagnostics=None):
        if not math.isfinite(value) or value > self.bound:
            message = f"{name} = {value:.3e} at step {step} (t={time:.6g}) exceeds bound {self.bound:.1e}"
            self.send_alert(message)
            raise BlowUpError(message, step=step, time=time, diagnostics=diagnostics)

    def check(self, diagnostics, params):
        """Guard one step and fold it into the energy balance."""
        values = diagnostics.as_dict()
        for name in MONITORED_FIELDS:
            if not math.isfinite(values[name]):
                message = f"{name} is not finite at step {diagnostics.step} (t={diagnostics.time:.6g})"
                self.send_alert(message)
                raise BlowUpError(message, step=diagnostics.step, time=diagnostics.time, diagnostics=values)

        self.check_bound(math.sqrt(diagnostics.u_l2_sq), "||u_h||", diagnostics.step, diagnostics.time, values)
        self.check_bound(math.sqrt(diagnostics.trC_l2_sq), "||trC_h||", diagnostics.step, diagnostics.time, values)

        if diagnostics.min_det_C <= 0 and self.spd_lost_at is None:
            self.spd_lost_at = diagnostics.time
            logger.warning(
                f"⚠️ Conformation tensor not positive definite at t={diagnostics.time:.6g} "
                f"(min det {diagnostics.min_det_C:.3e}); continuing"
            )

        if not self.accumulate:
            return True

        self.dissipated += sum(values[name] for name in ACCUMULATED_FIELDS)
        self.forcing_energy += params.tau * diagnostics.forcing_l2_sq
        left = diagnostics.u_l2_sq + diagnostics.trC_l2_sq + self.dissipated
        reference = self.initial_energy + self.forcing_energy
        if reference > 0:
            ratio = left / reference
        else:
            ratio = 0.0 if left == 0 else math.inf
        self.max_ratio = max(self.max_ratio, ratio)
        if diagnostics.time > 0 and math.isfinite(ratio):
            self.growth = max(self.growth, math.log(max(ratio, 1.0)) / diagnostics.time)
        return True

    def send_alert(self, message):
        logger.warning(f"🚨 ALERT: {message}")
        self.alerts.append(message)

    def report(self):
        return {
            "initial_energy": self.initial_energy,
            "forcing_energy": self.forcing_energy,
            "accumulated_dissipation": self.dissipated,
            "max_energy_ratio": self.max_ratio,
            "growth_constant": self.growth,
            "spd_lost_at": self.spd_lost_at,
            "alerts": list(self.alerts),
        }
