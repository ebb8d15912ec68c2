"""The limiting solution: a Hopf-Lax formula with an exit-time parameter,
its averaged-metric twin, and an obstacle-equation residual check.

For t > 0 the limit value at (x, t) is the minimum of three candidate
families:

  (i)   tau = 0:      inf_y  t Lbar((x - y)/t) + g(y),
  (ii)  tau in (0,t): inf_y  (t - tau) Lbar((x - y)/(t - tau)) + bbar(y),
  (iii) the explicit ceiling bbar(x), the tau -> t, y -> x limit, which
        removes the short-horizon singularity without special-casing.

Candidate search runs over a uniform tau-grid and uniform y-grids covering
the velocity cone |x - y| <= m0 (t - tau); ties break toward smaller tau,
then lexicographically smaller y.  The ubar variant replaces the running
cost by the averaged metric mbar and shares one backward dynamic program
across all (tau, y) candidates.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from hjhomog.dynamics import BoundaryData, LagrangianModel
from hjhomog.geometry import DomainView, UnitCellGeometry
from hjhomog.hj_solver import Grid
from hjhomog.metric import (
    EffectiveTables,
    MoveSet,
    _DPEngine,
    _hole_instances_in_box,
    _inject_sources,
    _steps_for_span,
    boundary_representatives,
)

__all__ = [
    "LimitQuery",
    "HopfLaxResult",
    "hopf_lax_u",
    "hopf_lax_on_grid",
    "hopf_lax_dpp_split",
    "ubar",
    "obstacle_residual",
    "ObstacleReport",
]


@dataclass(frozen=True)
class LimitQuery:
    """One evaluation point of the limit problem plus its search policy."""

    x: tuple[float, float]
    t: float
    data: BoundaryData
    cell: UnitCellGeometry
    tables: EffectiveTables
    m0: float
    tau_step: float
    y_spacing: float
    cone_margin: float = 0.0

    def __post_init__(self) -> None:
        if self.t < 0:
            raise ValueError("time must be nonnegative")
        object.__setattr__(self, "x", tuple(float(c) for c in self.x))


@dataclass
class HopfLaxResult:
    value: float
    tau: float
    y: tuple[float, float]
    branch: str  # "initial" | "boundary" | "ceiling"


def _y_offsets(radius: float, spacing: float) -> np.ndarray:
    """Offsets of a uniform grid over the cone's bounding box, centered so
    that the zero offset (y = x) is always included."""
    m = int(math.floor(radius / spacing + 1e-12))
    ax = spacing * np.arange(-m, m + 1)
    ox, oy = np.meshgrid(ax, ax, indexing="ij")
    keep = ox * ox + oy * oy <= radius * radius + 1e-12
    return np.stack([ox[keep], oy[keep]], axis=-1)


def _fast_path(q: LimitQuery) -> HopfLaxResult | None:
    """Exact shortcut for constant data when the L-bar table is nonnegative
    with its minimum at v = 0: every branch minimum is attained at y = x."""
    g0 = q.data.g.const
    b0 = q.data.b.const
    if g0 is None or b0 is None:
        return None
    lmin = q.tables.lbar_min()
    l0 = float(q.tables.lbar_at(np.zeros(2)))
    if lmin < -1e-15 or l0 > lmin + 1e-15:
        return None
    initial = g0 + q.t * l0
    if initial <= b0:
        return HopfLaxResult(value=initial, tau=0.0, y=q.x, branch="initial")
    return HopfLaxResult(value=b0, tau=q.t, y=q.x, branch="ceiling")


def hopf_lax_u(q: LimitQuery) -> HopfLaxResult:
    """Limit value by exhaustive search over the tau/y candidate grids."""
    if q.t == 0.0:
        return HopfLaxResult(
            value=float(q.data.g_at(np.asarray(q.x))), tau=0.0, y=q.x, branch="initial"
        )
    fast = _fast_path(q)
    if fast is not None:
        return fast

    x = np.asarray(q.x)
    best = HopfLaxResult(value=math.inf, tau=q.t, y=q.x, branch="ceiling")

    n_tau = int(math.floor(q.t / q.tau_step + 1e-9))
    taus = [0.0] + [i * q.tau_step for i in range(1, n_tau + 1) if i * q.tau_step < q.t - 1e-12]
    for tau in taus:
        span = q.t - tau
        radius = q.m0 * span + q.cone_margin
        offs = _y_offsets(radius, q.y_spacing)
        ys = x[None, :] - offs  # y = x - offset; offset/span is the velocity
        vels = offs / span
        run = span * q.tables.lbar_at(vels)
        if tau == 0.0:
            fvals = np.asarray(q.data.g_at(ys), dtype=float)
        else:
            fvals = np.asarray(q.data.bbar(q.cell, ys), dtype=float)
        cand = run + fvals
        order = np.lexsort((ys[:, 1], ys[:, 0]))
        cand_ordered = cand[order]
        i = int(np.argmin(cand_ordered))
        if cand_ordered[i] < best.value - 1e-15:
            yi = ys[order[i]]
            best = HopfLaxResult(
                value=float(cand_ordered[i]),
                tau=tau,
                y=(float(yi[0]), float(yi[1])),
                branch="initial" if tau == 0.0 else "boundary",
            )
    ceiling = float(q.data.bbar(q.cell, x))
    if ceiling < best.value - 1e-15:
        best = HopfLaxResult(value=ceiling, tau=q.t, y=q.x, branch="ceiling")
    return best


def hopf_lax_on_grid(
    points: np.ndarray, t: float, q_template: LimitQuery
) -> np.ndarray:
    """Limit values at an (..., 2) array of points, sharing the query
    policy of ``q_template``."""
    pts = np.asarray(points, dtype=float)
    flat = pts.reshape(-1, 2)
    fastable = (
        q_template.data.g.const is not None and q_template.data.b.const is not None
    )
    if fastable:
        probe = LimitQuery(
            x=(float(flat[0][0]), float(flat[0][1])),
            t=t,
            data=q_template.data,
            cell=q_template.cell,
            tables=q_template.tables,
            m0=q_template.m0,
            tau_step=q_template.tau_step,
            y_spacing=q_template.y_spacing,
            cone_margin=q_template.cone_margin,
        )
        if _fast_path(probe) is not None or t == 0.0:
            val = hopf_lax_u(probe).value
            return np.full(pts.shape[:-1], val)
    out = np.empty(flat.shape[0])
    for i, p in enumerate(flat):
        qi = LimitQuery(
            x=(float(p[0]), float(p[1])),
            t=t,
            data=q_template.data,
            cell=q_template.cell,
            tables=q_template.tables,
            m0=q_template.m0,
            tau_step=q_template.tau_step,
            y_spacing=q_template.y_spacing,
            cone_margin=q_template.cone_margin,
        )
        out[i] = hopf_lax_u(qi).value
    return out.reshape(pts.shape[:-1])


def hopf_lax_dpp_split(q: LimitQuery, s: float) -> float:
    """Dynamic-programming recomputation through an intermediate time
    s in (0, t): continuation through slice s versus direct exits at
    tau >= s."""
    if not 0.0 < s < q.t:
        raise ValueError("split time must lie strictly inside (0, t)")
    x = np.asarray(q.x)
    # continuation branch: inf_y (t - s) Lbar((x - y)/(t - s)) + w(y, s)
    span = q.t - s
    offs = _y_offsets(q.m0 * span + q.cone_margin, q.y_spacing)
    ys = x[None, :] - offs
    run = span * q.tables.lbar_at(offs / span)
    wvals = np.empty(len(ys))
    for i, y in enumerate(ys):
        qi = LimitQuery(
            x=(float(y[0]), float(y[1])),
            t=s,
            data=q.data,
            cell=q.cell,
            tables=q.tables,
            m0=q.m0,
            tau_step=q.tau_step,
            y_spacing=q.y_spacing,
            cone_margin=q.cone_margin,
        )
        wvals[i] = hopf_lax_u(qi).value
    cont = float(np.min(run + wvals))
    # direct branch: exits with tau in [s, t) plus the ceiling
    direct = math.inf
    n_tau = int(math.floor(q.t / q.tau_step + 1e-9))
    for i in range(0, n_tau + 1):
        tau = i * q.tau_step
        if tau < s - 1e-12 or tau >= q.t - 1e-12:
            continue
        sp = q.t - tau
        offs2 = _y_offsets(q.m0 * sp + q.cone_margin, q.y_spacing)
        ys2 = x[None, :] - offs2
        cand = sp * q.tables.lbar_at(offs2 / sp) + np.asarray(
            q.data.bbar(q.cell, ys2), dtype=float
        )
        direct = min(direct, float(np.min(cand)))
    direct = min(direct, float(q.data.bbar(q.cell, x)))
    return min(cont, direct)


# ---------------------------------------------------------------------------
# ubar: the averaged-metric value function
# ---------------------------------------------------------------------------


@dataclass
class UbarResult:
    value: float
    tau: float
    y: tuple[float, float]
    branch: str


def ubar(
    q: LimitQuery,
    model: LagrangianModel,
    k: int,
    h: float = 1 / 16,
    rho: int = 4,
    margin: float = 3.0,
    max_nodes: int = 20_000_000,
) -> UbarResult:
    """inf over tau in [0, t) and |x - y| <= m0 (t - tau) of
    mbar(tau, t, y, x) + f(y, tau), plus the explicit ceiling bbar(x).

    One backward dynamic program on the scale-k window serves every
    (tau, y) candidate: slice s of the program holds the cost-to-target
    from any node at scaled time s, and minimizing over boundary nodes in
    the cube around k y realizes the extended metric.
    """
    if q.t <= 0.0:
        return UbarResult(
            value=float(q.data.g_at(np.asarray(q.x))), tau=0.0, y=q.x, branch="initial"
        )
    if not q.cell.has_holes:
        raise ValueError("ubar needs a perforated cell (boundary representatives)")
    x = np.asarray(q.x)
    moves = MoveSet.build(model.m0, h, rho, speed_cap=model.m0 + 1.0)
    n_steps = _steps_for_span(k * q.t, moves.dt)

    # window: scaled evaluation point plus the full backward cone
    cone = k * q.t * model.m0
    lo = np.floor((k * x - cone - 0.5 - margin) / h) * h
    hi = np.ceil((k * x + cone + 0.5 + margin) / h) * h
    n_nodes = np.prod(np.round((hi - lo) / h).astype(int) + 1)
    if n_nodes > max_nodes:
        raise MemoryError(f"ubar window of {n_nodes} nodes exceeds {max_nodes}")
    view = DomainView(cell=q.cell, epsilon=1.0)
    grid = Grid.build(view, ((lo[0], hi[0]), (lo[1], hi[1])), h, periodic=False)
    engine = _DPEngine(grid, model, moves)

    tgt_nodes, tgt_circle = boundary_representatives(q.cell, grid, k * x)
    if not tgt_nodes and len(tgt_circle) == 0:
        raise ValueError("no boundary representatives around the evaluation point")

    # backward sweep: psi[s](z) = cost from z at scaled time s to the target
    psi = np.full(grid.shape, np.inf)
    for i, j in tgt_nodes:
        psi[i, j] = 0.0
    psi, _ = engine.step_backward(psi)
    psi = _inject_targets(engine, psi, tgt_circle)

    bnd = grid.boundary_mask
    xs, ys_ax = grid.axes()
    ii, jj = np.nonzero(bnd)
    bx, by = xs[ii], ys_ax[jj]

    best_val = math.inf
    best = (q.t, q.x, "ceiling")
    g0 = q.data.g.const
    b0 = q.data.b.const

    for s_back in range(1, n_steps + 1):
        # psi now holds slice (n_steps - s_back) counted in scaled time
        tau = q.t - s_back * moves.dt / k
        if tau < -1e-12:
            break
        span = q.t - tau
        vals = psi[ii, jj]
        finite = np.isfinite(vals)
        if np.any(finite):
            # cone restriction on the macro source point y ~ z / k
            within = finite & (
                (bx - k * x[0]) ** 2 + (by - k * x[1]) ** 2
                <= (k * model.m0 * span + 0.71) ** 2
            )
            if np.any(within):
                if abs(tau) <= 1e-12:
                    fv = (
                        np.full(int(np.sum(within)), g0)
                        if g0 is not None
                        else np.asarray(
                            q.data.g_at(np.stack([bx[within], by[within]], axis=-1) / k)
                        )
                    )
                else:
                    fv = (
                        np.full(int(np.sum(within)), b0)
                        if b0 is not None
                        else np.asarray(
                            q.data.bbar(
                                q.cell, np.stack([bx[within], by[within]], axis=-1) / k
                            )
                        )
                    )
                cand = vals[within] / k + fv
                i_min = int(np.argmin(cand))
                if cand[i_min] < best_val - 1e-15:
                    best_val = float(cand[i_min])
                    zsel = np.stack([bx[within], by[within]], axis=-1)[i_min]
                    best = (
                        max(tau, 0.0),
                        (float(zsel[0] / k), float(zsel[1] / k)),
                        "initial" if abs(tau) <= 1e-12 else "boundary",
                    )
        if s_back < n_steps:
            psi, _ = engine.step_backward(psi)

    ceiling = float(q.data.bbar(q.cell, x))
    if ceiling < best_val - 1e-15:
        best_val = ceiling
        best = (q.t, q.x, "ceiling")
    return UbarResult(value=best_val, tau=best[0], y=best[1], branch=best[2])


def _inject_targets(engine: _DPEngine, psi1: np.ndarray, targets: np.ndarray) -> np.ndarray:
    """Backward analogue of source injection: a final hop from node z to an
    exact circle target p costs dt L(p, (p - z)/dt)."""
    from hjhomog.metric import _inject_points

    return _inject_points(engine, psi1, targets, backward=True)


# ---------------------------------------------------------------------------
# Obstacle-equation residual
# ---------------------------------------------------------------------------


@dataclass
class ObstacleReport:
    """Central-difference residuals of max{u - bbar, u_t + Hbar(Du)} = 0.

    ``combined_sup`` is the one-sided excess max(R, 0) over interior nodes
    (how far the equation rises above zero) and ``negative_gap_sup`` the
    one-sided deficit max(-R, 0); both should vanish at first order for a
    true solution sampled on the grid.
    """

    combined_sup: float
    negative_gap_sup: float
    r1_max: float
    r2_abs_max: float
    h: float
    dt: float
    n_interior: int


def obstacle_residual(
    xs: np.ndarray,
    ts: np.ndarray,
    u: np.ndarray,
    tables: EffectiveTables,
    data: BoundaryData,
    cell: UnitCellGeometry,
) -> ObstacleReport:
    """Residual report for values u[l, i, j] sampled at times ts[l] and
    space nodes (xs[i], xs[j]) on a uniform grid."""
    xs = np.asarray(xs, dtype=float)
    ts = np.asarray(ts, dtype=float)
    if len(xs) < 3 or len(ts) < 3:
        raise ValueError("grid too coarse for central differencing")
    h = xs[1] - xs[0]
    dt = ts[1] - ts[0]
    pts = np.stack(np.meshgrid(xs, xs, indexing="ij"), axis=-1)
    bbar = np.asarray(data.bbar(cell, pts), dtype=float)

    du_t = (u[2:, 1:-1, 1:-1] - u[:-2, 1:-1, 1:-1]) / (2 * dt)
    du_x = (u[1:-1, 2:, 1:-1] - u[1:-1, :-2, 1:-1]) / (2 * h)
    du_y = (u[1:-1, 1:-1, 2:] - u[1:-1, 1:-1, :-2]) / (2 * h)
    grad = np.stack([du_x, du_y], axis=-1)
    hbar = tables.hbar_at(grad)
    r2 = du_t + hbar
    r1 = u[1:-1, 1:-1, 1:-1] - bbar[None, 1:-1, 1:-1]
    r = np.maximum(r1, r2)
    return ObstacleReport(
        combined_sup=float(np.max(np.maximum(r, 0.0))),
        negative_gap_sup=float(np.max(np.maximum(-r, 0.0))),
        r1_max=float(np.max(r1)),
        r2_abs_max=float(np.max(np.abs(r2))),
        h=float(h),
        dt=float(dt),
        n_interior=int(r.size),
    )
