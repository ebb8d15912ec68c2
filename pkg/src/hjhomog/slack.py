"""The calibrated tolerance budget shared by every "within slack" assertion.

slack(h, dt, k) = a h + b dt + c / k, with (a, b, c) calibrated once on the
hole-free quadratic case where exact values exist: the effective table of
the free kinetic Lagrangian is |v|^2/2 and the value function of cone
initial data has a closed Hopf-Lax form.  The calibration measures those
errors over a small ladder of resolutions, fits nonnegative coefficients by
least squares, and scales by a safety factor.  The shipped defaults below
were produced by scripts/calibrate_slack.py at the default numerics; rerun
the script to regenerate them after changing scheme parameters.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

__all__ = ["SlackBudget", "DEFAULT_SLACK", "calibrate"]


@dataclass(frozen=True)
class SlackBudget:
    a: float  # proportional to the grid spacing h
    b: float  # proportional to the time step dt
    c: float  # proportional to 1/k (averaging scale)
    floor: float = 1e-9

    def __call__(self, h: float, dt: float, k: int | float) -> float:
        return max(self.floor, self.a * h + self.b * dt + self.c / k)

    def as_dict(self) -> dict:
        return {"a": self.a, "b": self.b, "c": self.c}


# produced by scripts/calibrate_slack.py (safety factor 1.5 over the fitted
# hole-free errors at rho = 4, speed caps as in metric.build_tables); the
# lattice-direction convexification gap of the move set dominates and lands
# in the dt and 1/k terms because dt is tied to h in every calibration run
DEFAULT_SLACK = SlackBudget(a=0.0, b=4.426, c=0.7872)


def calibrate(samples: list[tuple[float, float, int, float]], safety: float = 1.5) -> SlackBudget:
    """Fit slack coefficients from (h, dt, k, measured_error) rows.

    Nonnegative least squares on the three-term model, then the safety
    factor; a final pass guarantees slack >= safety * error at every sample.
    """
    if not samples:
        raise ValueError("no calibration samples")
    arr = np.asarray(samples, dtype=float)
    design = np.stack([arr[:, 0], arr[:, 1], 1.0 / arr[:, 2]], axis=1)
    target = arr[:, 3]
    from scipy.optimize import nnls

    coef, _ = nnls(design, target)
    budget = SlackBudget(a=coef[0], b=coef[1], c=coef[2])
    # rescale so the fit covers every sample, then apply the safety factor
    worst = max(
        (err / max(budget(h, dt, k), 1e-300) for h, dt, k, err in samples),
        default=0.0,
    )
    scale = safety * max(worst, 1.0)
    return SlackBudget(a=budget.a * scale, b=budget.b * scale, c=budget.c * scale)
