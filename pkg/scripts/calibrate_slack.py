#!/usr/bin/env python3
"""Calibrate the shared tolerance budget on the hole-free quadratic case.

Measures, at a ladder of resolutions:
  * effective-table error against the exact kinetic Lagrangian |v|^2/2,
  * solver error against the exact Hopf-Lax value of cone initial data,
  * averaged-metric error against the exact straight-line action,
then fits slack(h, dt, k) = a h + b dt + c / k by nonnegative least squares
with a 1.5x safety factor.  Paste the printed coefficients into
hjhomog.slack.DEFAULT_SLACK.
"""

import math
import time

import numpy as np

from hjhomog.dynamics import (
    BoundaryData,
    LagrangianModel,
    potential_from_name,
    scalar_field_from_config,
)
from hjhomog.geometry import DomainView, UnitCellGeometry
from hjhomog.hj_solver import Grid, solve_dirichlet
from hjhomog.metric import MetricQuery, build_tables, mbar_star, mtilde
from hjhomog.slack import calibrate

M0 = 4.0


def table_rows(samples):
    cell = UnitCellGeometry(holes=(), dim=2)
    model = LagrangianModel.mechanical(potential_from_name("zero"), lip_g=0.0, m0=M0)
    for h, k in [(1 / 8, 4), (1 / 8, 8), (1 / 16, 4), (1 / 16, 8)]:
        t0 = time.time()
        tables = build_tables(cell, model, k=k, h=h, spacing=0.1)
        v = tables.v_axis
        vv = 0.5 * (v[:, None] ** 2 + v[None, :] ** 2)
        fin = np.isfinite(tables.lbar)
        err = float(np.max(np.abs(tables.lbar - vv)[fin]))
        dt = 4 * h / M0
        samples.append((h, dt, k, err))
        print(f"table  h={h:<8} k={k}: err={err:.4f}  [{time.time() - t0:.1f}s]")


def exact_cone_value(x, t):
    # min over y of |x - y|^2 / (2 t) + min(|y|, 1), radially symmetric
    r = float(np.linalg.norm(x))
    ys = np.linspace(0.0, r + 3.0, 4001)
    vals = (r - ys) ** 2 / (2 * t) + np.minimum(ys, 1.0)
    return float(np.min(vals))


def solver_rows(samples):
    cell = UnitCellGeometry(holes=(), dim=2)
    model = LagrangianModel.mechanical(potential_from_name("zero"), lip_g=1.0, m0=M0)
    data = BoundaryData(
        g=scalar_field_from_config("cone"),
        b=scalar_field_from_config("const", 10.0),
    )
    view = DomainView(cell=cell, epsilon=1.0)
    t_end = 0.25
    for h in (1 / 16, 1 / 32):
        t0 = time.time()
        half = math.ceil((1.0 + M0 * t_end + 2 * h) / h) * h
        grid = Grid.build(view, ((-half, half), (-half, half)), h, periodic=False)
        field = solve_dirichlet(view, model, data, grid, t_end)
        xs, ys = grid.axes()
        err = 0.0
        # compare on the uncontaminated core only
        for x in np.linspace(-0.75, 0.75, 7):
            for y in np.linspace(-0.75, 0.75, 7):
                xi = round((x - grid.origin[0]) / h)
                yi = round((y - grid.origin[1]) / h)
                ue = field.values[-1][xi, yi]
                err = max(err, abs(ue - exact_cone_value((xs[xi], ys[yi]), t_end)))
        dt = h / M0
        samples.append((h, dt, 10**9, err))
        print(f"solver h={h:<8}: err={err:.4f}  [{time.time() - t0:.1f}s]")


def metric_rows(samples):
    cell = UnitCellGeometry(holes=(), dim=2)
    model = LagrangianModel.mechanical(potential_from_name("zero"), lip_g=0.0, m0=M0)
    h = 1 / 16
    for k in (2, 4, 8):
        t0 = time.time()
        err = 0.0
        for x in [(1.0, 0.0), (1.0, 0.5), (0.5, 0.5)]:
            q = MetricQuery(tau=0.0, t=1.0, y=(0.0, 0.0), x=x)
            res = mbar_star(cell, model, q, k=k, h=h)
            exact = 0.5 * (x[0] ** 2 + x[1] ** 2)
            err = max(err, abs(res.value - exact))
        dt = 4 * h / M0
        samples.append((h, dt, k, err))
        print(f"metric h={h:<8} k={k}: err={err:.4f}  [{time.time() - t0:.1f}s]")


def main():
    samples = []
    table_rows(samples)
    solver_rows(samples)
    metric_rows(samples)
    budget = calibrate(samples)
    print("\nfitted budget (includes 1.5x safety):")
    print(f"DEFAULT_SLACK = SlackBudget(a={budget.a:.4g}, b={budget.b:.4g}, c={budget.c:.4g})")
    print("\nbudget at reference numerics:")
    for h, dt, k in [(1 / 16, 1 / 16, 8), (1 / 32, 1 / 128, 8)]:
        print(f"  slack(h={h}, dt={dt}, k={k}) = {budget(h, dt, k):.4f}")


if __name__ == "__main__":
    main()
