"""Travel-cost functions on the perforated cell and their large-scale
averages.

The base cost mtilde(tau, t, y, x) is the least action over paths that stay
in the closed perforated set, start at y at time tau, and end at x at time
t.  It is realized exactly as a shortest-path problem over grid paths: one
time step of length dt moves between nodes by an integer offset o with
|o| h / dt below the speed cap, paying dt * L(landing node, o h / dt), and
hops whose straight segment would cut through a hole are excluded.  The
extension mstar minimizes mtilde over boundary representatives of both
endpoints inside unit cubes, and mbar_star evaluates the large-cell average
(1/k) mstar(k tau, k t, k y, k x) together with a Richardson consistency
estimate against scale k/2.

Effective tables sample L-bar over a velocity grid by one multi-source
dynamic program per table (all velocities share the k-cell window), and
H-bar is the discrete convex conjugate of the L-bar table.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from hjhomog.dynamics import LagrangianModel
from hjhomog.geometry import DomainView, UnitCellGeometry
from hjhomog.hj_solver import Grid

__all__ = [
    "MetricQuery",
    "MetricResult",
    "MoveSet",
    "EffectiveTables",
    "mtilde",
    "mstar",
    "mbar_star",
    "build_tables",
    "effective_lagrangian",
    "effective_hamiltonian",
    "boundary_representatives",
]

CIRCLE_POINTS = 256


@dataclass(frozen=True)
class MetricQuery:
    """Endpoints of a travel-cost query in unscaled cell coordinates."""

    tau: float
    t: float
    y: tuple[float, float]
    x: tuple[float, float]

    def __post_init__(self) -> None:
        if not self.t > self.tau:
            raise ValueError(f"need tau < t, got tau={self.tau}, t={self.t}")
        object.__setattr__(self, "y", tuple(float(c) for c in self.y))
        object.__setattr__(self, "x", tuple(float(c) for c in self.x))

    @property
    def span(self) -> float:
        return self.t - self.tau

    def displacement(self) -> np.ndarray:
        return np.asarray(self.x) - np.asarray(self.y)

    def check_cone(self, m0: float) -> None:
        d = float(np.linalg.norm(self.displacement()))
        if d > m0 * self.span + 1e-9:
            raise ValueError(
                f"query outside the velocity cone: |x - y| = {d} > "
                f"m0 (t - tau) = {m0 * self.span}"
            )


@dataclass
class MetricResult:
    cost: float
    path: np.ndarray | None = None
    snap_y: float = 0.0
    snap_x: float = 0.0
    warnings: tuple[str, ...] = ()


@dataclass(frozen=True)
class MoveSet:
    """Integer node offsets for one dt = rho h / m0 step, with velocities
    o h / dt and per-offset validity masks (endpoints admissible and the hop
    segment clear of every hole)."""

    offsets: np.ndarray  # (M, 2) ints, offset (0, 0) first
    dt: float
    h: float

    @staticmethod
    def build(m0: float, h: float, rho: int, speed_cap: float) -> "MoveSet":
        dt = rho * h / m0
        reach = speed_cap * dt / h  # max |o|
        offs = [(0, 0)]
        r = int(math.floor(reach + 1e-9))
        for oi in range(-r, r + 1):
            for oj in range(-r, r + 1):
                if (oi, oj) == (0, 0):
                    continue
                if math.hypot(oi, oj) <= reach + 1e-9:
                    offs.append((oi, oj))
        return MoveSet(offsets=np.asarray(offs, dtype=int), dt=dt, h=h)

    def velocities(self) -> np.ndarray:
        return self.offsets * (self.h / self.dt)


def _hole_instances_in_box(
    cell: UnitCellGeometry, lo: np.ndarray, hi: np.ndarray, pad: float
) -> list[tuple[np.ndarray, float]]:
    out = []
    if not cell.has_holes:
        return out
    z0 = np.floor(lo - pad).astype(int) - 1
    z1 = np.ceil(hi + pad).astype(int) + 1
    for zi in range(z0[0], z1[0] + 1):
        for zj in range(z0[1], z1[1] + 1):
            for hole in cell.holes:
                c = np.asarray(hole.center) + np.asarray([zi, zj], dtype=float)
                if np.all(c + hole.radius >= lo - pad) and np.all(
                    c - hole.radius <= hi + pad
                ):
                    out.append((c, hole.radius))
    return out


def _blocked_on_points(
    xs: np.ndarray, ys: np.ndarray, off: tuple[int, int], h: float, holes
) -> np.ndarray:
    """Mask over the (xs, ys) node lattice of landing points whose incoming
    hop segment (length |off| h) cuts through some hole interior."""
    out = np.zeros((len(xs), len(ys)), dtype=bool)
    if off == (0, 0) or not holes:
        return out
    w = -h * np.asarray(off, dtype=float)  # segment from landing node x to x + w
    ww = float(w @ w)
    for c, r in holes:
        margin = r + math.hypot(*off) * h
        i0 = int(np.searchsorted(xs, c[0] - margin))
        i1 = int(np.searchsorted(xs, c[0] + margin, side="right"))
        j0 = int(np.searchsorted(ys, c[1] - margin))
        j1 = int(np.searchsorted(ys, c[1] + margin, side="right"))
        if i0 >= i1 or j0 >= j1:
            continue
        px = xs[i0:i1][:, None] - c[0]
        py = ys[j0:j1][None, :] - c[1]
        # closest point of the segment x + s w, s in [0, 1], to the center
        s = np.clip(-(px * w[0] + py * w[1]) / ww, 0.0, 1.0)
        dx = px + s * w[0]
        dy = py + s * w[1]
        out[i0:i1, j0:j1] |= dx * dx + dy * dy < (r - 1e-9) ** 2
    return out


def _segment_blocked_masks(grid: Grid, moves: MoveSet) -> list[np.ndarray]:
    """Per-offset boolean masks of landing nodes whose incoming hop segment
    cuts through a hole interior.

    The hole layout is 1-periodic, so when 1/h is an integer the masks are
    computed on one period tile and rolled into place; otherwise they are
    evaluated directly on the window.
    """
    nx, ny = grid.shape
    lo = np.asarray(grid.origin)
    hi = lo + grid.h * (np.asarray(grid.shape) - 1)
    reach = float(np.max(np.abs(moves.offsets))) * grid.h
    n_masks = len(moves.offsets)
    if not grid.view.cell.has_holes:
        return [np.zeros(grid.shape, dtype=bool) for _ in range(n_masks)]

    period = 1.0 / grid.h
    tileable = (
        abs(period - round(period)) < 1e-9
        and not grid.view.defects
        and grid.view.eta == 1.0
        and grid.view.epsilon == 1.0
        and min(nx, ny) >= round(period)
    )
    if not tileable:
        holes = _hole_instances_in_box(grid.view.cell, lo, hi, pad=reach + grid.h)
        xs, ys = grid.axes()
        return [
            _blocked_on_points(xs, ys, tuple(off), grid.h, holes)
            for off in moves.offsets
        ]

    p = int(round(period))
    txs = grid.h * np.arange(p)
    holes = _hole_instances_in_box(
        grid.view.cell, np.zeros(2), np.ones(2), pad=reach + grid.h
    )
    # phase of the window origin inside the period tile
    ph = np.round((lo % 1.0) / grid.h).astype(int) % p
    blocked = []
    for off in moves.offsets:
        tile = _blocked_on_points(txs, txs, tuple(off), grid.h, holes)
        tile = np.roll(tile, shift=(-ph[0], -ph[1]), axis=(0, 1))
        reps = (nx + p - 1) // p, (ny + p - 1) // p
        blocked.append(np.tile(tile, reps)[:nx, :ny])
    return blocked


@dataclass
class _DPEngine:
    """Forward value iteration over grid paths."""

    grid: Grid
    model: LagrangianModel
    moves: MoveSet
    dtype: type = np.float64
    valid: list[np.ndarray] = field(init=False)
    kin_cost: np.ndarray = field(init=False)
    site_cost: np.ndarray = field(init=False)
    full_cost: list[np.ndarray] | None = field(init=False, default=None)

    def __post_init__(self) -> None:
        adm = self.grid.admissible
        blocked = _segment_blocked_masks(self.grid, self.moves)
        self.valid = []
        for m, (oi, oj) in enumerate(self.moves.offsets):
            prev_adm = self.grid.shifted(adm, (-oi, -oj), False)
            self.valid.append(adm & prev_adm & ~blocked[m])
        vels = self.moves.velocities()
        split = self.model.kinetic_potential_split()
        pts = self.grid.points()
        if split is not None:
            kinetic, site = split
            self.kin_cost = (
                self.moves.dt * np.asarray([float(kinetic(v)) for v in vels])
            ).astype(self.dtype)
            self.site_cost = (self.moves.dt * np.asarray(site(pts))).astype(self.dtype)
        else:
            self.kin_cost = None
            self.full_cost = [
                (
                    self.moves.dt
                    * np.asarray(
                        self.model.lagrangian(pts, np.broadcast_to(v, pts.shape))
                    )
                ).astype(self.dtype)
                for v in vels
            ]
            self.site_cost = np.zeros(self.grid.shape, dtype=self.dtype)

    def step(self, phi: np.ndarray, want_argmin: bool = False):
        best = np.full(self.grid.shape, np.inf, dtype=phi.dtype)
        arg = np.full(self.grid.shape, -1, dtype=np.int16) if want_argmin else None
        for m, (oi, oj) in enumerate(self.moves.offsets):
            shifted = self.grid.shifted(phi, (-oi, -oj), np.inf)
            if self.kin_cost is not None:
                cand = shifted + self.kin_cost[m]
            else:
                cand = shifted + self.full_cost[m]
            improves = self.valid[m] & (cand < best)
            if want_argmin:
                arg[improves] = m
            best = np.where(improves, cand, best)
        best = best + self.site_cost
        return best, arg

    def step_backward(self, psi: np.ndarray, want_argmin: bool = False):
        """Cost-to-target update: psi_s(z) = min over moves z -> z + o of
        dt L(z + o, v_o) + psi_{s+1}(z + o)."""
        best = np.full(self.grid.shape, np.inf, dtype=psi.dtype)
        arg = np.full(self.grid.shape, -1, dtype=np.int16) if want_argmin else None
        if self.kin_cost is not None:
            theta = np.where(np.isfinite(psi), psi + self.site_cost, np.inf)
        for m, (oi, oj) in enumerate(self.moves.offsets):
            if self.kin_cost is not None:
                cand = self.grid.shifted(theta, (oi, oj), np.inf) + self.kin_cost[m]
            else:
                arrival = np.where(
                    np.isfinite(psi), psi + self.full_cost[m], np.inf
                )
                cand = self.grid.shifted(arrival, (oi, oj), np.inf)
            valid_dep = self.grid.shifted(self.valid[m], (oi, oj), False)
            improves = valid_dep & (cand < best)
            if want_argmin:
                arg[improves] = m
            best = np.where(improves, cand, best)
        return best, arg

    def run(self, phi0: np.ndarray, n_steps: int, want_traceback: bool = False):
        phi = phi0
        tb = []
        for _ in range(n_steps):
            phi, arg = self.step(phi, want_argmin=want_traceback)
            if want_traceback:
                tb.append(arg)
        return phi, tb


def _steps_for_span(span: float, dt: float) -> int:
    n = span / dt
    if abs(n - round(n)) > 1e-9 or round(n) < 1:
        raise ValueError(
            f"time span {span} is not a positive multiple of the step dt={dt}"
        )
    return int(round(n))


def _snap_to_admissible(grid: Grid, p: Sequence[float]) -> tuple[tuple[int, int], float]:
    """Nearest admissible node to p, with the snap distance."""
    lo = np.asarray(grid.origin)
    idx = np.round((np.asarray(p, dtype=float) - lo) / grid.h).astype(int)
    idx = np.clip(idx, 0, np.asarray(grid.shape) - 1)
    adm = grid.admissible
    if adm[idx[0], idx[1]]:
        pos = grid.position(idx[0], idx[1])
        return (int(idx[0]), int(idx[1])), float(np.linalg.norm(pos - np.asarray(p)))
    for ring in range(1, max(grid.shape)):
        best = None
        for di in range(-ring, ring + 1):
            for dj in range(-ring, ring + 1):
                if max(abs(di), abs(dj)) != ring:
                    continue
                i, j = idx[0] + di, idx[1] + dj
                if 0 <= i < grid.shape[0] and 0 <= j < grid.shape[1] and adm[i, j]:
                    d = float(np.linalg.norm(grid.position(i, j) - np.asarray(p)))
                    if best is None or d < best[1]:
                        best = ((i, j), d)
        if best is not None:
            return best
    raise ValueError("no admissible node in the grid window")


def _metric_grid(
    cell: UnitCellGeometry,
    pts: Sequence[np.ndarray],
    h: float,
    margin: float,
    max_nodes: int,
) -> Grid:
    pts = np.asarray(pts, dtype=float).reshape(-1, 2)
    lo = np.floor((pts.min(axis=0) - margin) / h) * h
    hi = np.ceil((pts.max(axis=0) + margin) / h) * h
    n_nodes = np.prod(np.round((hi - lo) / h).astype(int) + 1)
    if n_nodes > max_nodes:
        raise MemoryError(
            f"metric window of {n_nodes} nodes exceeds the budget of {max_nodes}"
        )
    view = DomainView(cell=cell, epsilon=1.0)
    return Grid.build(view, ((lo[0], hi[0]), (lo[1], hi[1])), h, periodic=False)


def mtilde(
    cell: UnitCellGeometry,
    model: LagrangianModel,
    q: MetricQuery,
    grid: Grid | None = None,
    h: float = 1 / 16,
    rho: int = 4,
    margin: float = 3.0,
    max_nodes: int = 12_000_000,
    want_path: bool = True,
    cone_window: bool = True,
) -> MetricResult:
    """Least action over grid paths in the closed perforated set from y at
    time tau to x at time t.  Endpoints snap to the nearest admissible node;
    the window must contain the reachable cone around y (pass
    ``cone_window=False`` to accept a corridor window around the endpoints,
    exact whenever optimal paths do not wander)."""
    moves = MoveSet.build(model.m0, h if grid is None else grid.h, rho, speed_cap=model.m0)
    n_steps = _steps_for_span(q.span, moves.dt)
    if grid is None and not cone_window:
        pts = [np.asarray(q.y), np.asarray(q.x)]
        grid = _metric_grid(cell, pts, h, margin=margin, max_nodes=max_nodes)
    elif grid is None:
        cone = model.m0 * q.span
        pts = [np.asarray(q.y) - cone, np.asarray(q.y) + cone, np.asarray(q.x)]
        grid = _metric_grid(cell, pts, h, margin=1.0, max_nodes=max_nodes)
    else:
        lo = np.asarray(grid.origin)
        hi = lo + grid.h * (np.asarray(grid.shape) - 1)
        cone = model.m0 * q.span
        if np.any(np.asarray(q.y) - cone < lo - 1e-9) or np.any(
            np.asarray(q.y) + cone > hi + 1e-9
        ):
            raise ValueError("window too small for the reachable cone")
    engine = _DPEngine(grid, model, moves)
    (iy, jy), snap_y = _snap_to_admissible(grid, q.y)
    (ix, jx), snap_x = _snap_to_admissible(grid, q.x)
    warnings = []
    if max(snap_y, snap_x) >= grid.h:
        warnings.append(
            f"query endpoint snapped by {max(snap_y, snap_x):.3g} >= h"
        )
    phi0 = np.full(grid.shape, np.inf)
    phi0[iy, jy] = 0.0
    phi, tb = engine.run(phi0, n_steps, want_traceback=want_path)
    cost = float(phi[ix, jx])
    path = None
    if want_path and math.isfinite(cost):
        path = _backtrack(grid, moves, tb, (ix, jx))
    return MetricResult(cost=cost, path=path, snap_y=snap_y, snap_x=snap_x, warnings=tuple(warnings))


def _backtrack(grid: Grid, moves: MoveSet, tb: list[np.ndarray], end: tuple[int, int]):
    i, j = end
    nodes = [grid.position(i, j)]
    for arg in reversed(tb):
        m = int(arg[i, j])
        if m < 0:
            break
        oi, oj = moves.offsets[m]
        i, j = i - oi, j - oj
        nodes.append(grid.position(i, j))
    return np.asarray(nodes[::-1])


def boundary_representatives(
    cell: UnitCellGeometry,
    grid: Grid,
    anchor: Sequence[float],
    circle_points: int = CIRCLE_POINTS,
) -> tuple[list[tuple[int, int]], np.ndarray]:
    """Boundary representatives of ``anchor`` within the closed unit cube
    anchor + [-1/2, 1/2]^2: Boundary-classified grid nodes, plus exact circle
    points (circle_points angles per hole instance meeting the cube).

    Returns (node index list in lexicographic order, circle point array).
    """
    a = np.asarray(anchor, dtype=float)
    lo_c, hi_c = a - 0.5, a + 0.5
    bnd = grid.boundary_mask
    xs, ys = grid.axes()
    ii, jj = np.nonzero(bnd)
    inside = (
        (xs[ii] >= lo_c[0] - 1e-12)
        & (xs[ii] <= hi_c[0] + 1e-12)
        & (ys[jj] >= lo_c[1] - 1e-12)
        & (ys[jj] <= hi_c[1] + 1e-12)
    )
    keep = sorted(zip(ii[inside].tolist(), jj[inside].tolist()))
    circle = []
    if circle_points > 0:
        angles = 2.0 * np.pi * np.arange(circle_points) / circle_points
        for c, r in _hole_instances_in_box(cell, lo_c, hi_c, pad=0.0):
            ring = c + r * np.stack([np.cos(angles), np.sin(angles)], axis=-1)
            inside = np.all((ring >= lo_c - 1e-12) & (ring <= hi_c + 1e-12), axis=1)
            circle.append(ring[inside])
    pts = np.concatenate(circle, axis=0) if circle else np.zeros((0, 2))
    return keep, pts


def _inject_sources(
    engine: _DPEngine, phi1: np.ndarray, sources: np.ndarray
) -> np.ndarray:
    """Fold point sources (not on nodes) into the slice after one step: a
    first hop from source s to node z costs dt L(z, (z - s)/dt) when within
    the move reach and the segment is clear."""
    return _inject_points(engine, phi1, sources, backward=False)


def _inject_points(
    engine: _DPEngine, sl: np.ndarray, points: np.ndarray, backward: bool
) -> np.ndarray:
    """Connect off-node points to nearby nodes with one hop; forward hops run
    point -> node (cost at the node), backward hops node -> point (cost at
    the point)."""
    grid = engine.grid
    moves = engine.moves
    if len(points) == 0:
        return sl
    reach = float(np.max(np.linalg.norm(moves.offsets, axis=1))) * grid.h
    lo = np.asarray(grid.origin)
    holes = _hole_instances_in_box(
        grid.view.cell, lo, lo + grid.h * (np.asarray(grid.shape) - 1), pad=reach
    )
    xs, ys = grid.axes()
    adm = grid.admissible
    for p in points:
        i0 = max(0, int(math.ceil((p[0] - reach - lo[0]) / grid.h - 1e-9)))
        i1 = min(grid.shape[0] - 1, int(math.floor((p[0] + reach - lo[0]) / grid.h + 1e-9)))
        j0 = max(0, int(math.ceil((p[1] - reach - lo[1]) / grid.h - 1e-9)))
        j1 = min(grid.shape[1] - 1, int(math.floor((p[1] + reach - lo[1]) / grid.h + 1e-9)))
        if i0 > i1 or j0 > j1:
            continue
        bx = xs[i0 : i1 + 1][:, None]
        by = ys[j0 : j1 + 1][None, :]
        dx = bx - p[0]
        dy = by - p[1]
        ok = adm[i0 : i1 + 1, j0 : j1 + 1] & (dx * dx + dy * dy <= reach * reach + 1e-12)
        # segment clearance against nearby holes
        ww = dx * dx + dy * dy
        for c, r in holes:
            if (
                c[0] + r < p[0] - reach
                or c[0] - r > p[0] + reach
                or c[1] + r < p[1] - reach
                or c[1] - r > p[1] + reach
            ):
                continue
            ax, ay = p[0] - c[0], p[1] - c[1]
            with np.errstate(invalid="ignore", divide="ignore"):
                s = np.clip(-(ax * dx + ay * dy) / np.where(ww > 0, ww, 1.0), 0.0, 1.0)
            qx = ax + s * dx
            qy = ay + s * dy
            ok &= qx * qx + qy * qy >= (r - 1e-9) ** 2
        if not np.any(ok):
            continue
        block = np.stack(np.broadcast_arrays(bx, by), axis=-1)
        dxb, dyb = np.broadcast_arrays(dx, dy)
        disp = np.stack([dxb, dyb], axis=-1)
        vel = (disp if not backward else -disp) / moves.dt
        site = block if not backward else np.broadcast_to(p, block.shape)
        cost = moves.dt * np.asarray(engine.model.lagrangian(site, vel))
        target = sl[i0 : i1 + 1, j0 : j1 + 1]
        np.copyto(target, np.where(ok & (cost < target), cost, target))
    return sl


def _segment_hits_hole(a: np.ndarray, b: np.ndarray, holes) -> bool:
    w = b - a
    ww = float(w @ w)
    for c, r in holes:
        if ww == 0.0:
            d2 = float(np.sum((a - c) ** 2))
        else:
            s = min(1.0, max(0.0, float((c - a) @ w) / ww))
            d2 = float(np.sum((a + s * w - c) ** 2))
        if d2 < (r - 1e-9) ** 2:
            return True
    return False


def _interp_points(grid: Grid, phi: np.ndarray, pts: np.ndarray) -> np.ndarray:
    """Bilinear values of phi at arbitrary points; nan where the containing
    cell has an inadmissible or non-finite corner."""
    out = np.full(len(pts), np.nan)
    if len(pts) == 0:
        return out
    lo = np.asarray(grid.origin)
    fij = (pts - lo) / grid.h
    b = np.floor(fij).astype(int)
    ok = (
        (b[:, 0] >= 0)
        & (b[:, 0] < grid.shape[0] - 1)
        & (b[:, 1] >= 0)
        & (b[:, 1] < grid.shape[1] - 1)
    )
    if not np.any(ok):
        return out
    bb = b[ok]
    f = fij[ok] - bb
    adm = grid.admissible
    good = (
        adm[bb[:, 0], bb[:, 1]]
        & adm[bb[:, 0] + 1, bb[:, 1]]
        & adm[bb[:, 0], bb[:, 1] + 1]
        & adm[bb[:, 0] + 1, bb[:, 1] + 1]
    )
    v00 = phi[bb[:, 0], bb[:, 1]]
    v10 = phi[bb[:, 0] + 1, bb[:, 1]]
    v01 = phi[bb[:, 0], bb[:, 1] + 1]
    v11 = phi[bb[:, 0] + 1, bb[:, 1] + 1]
    good &= np.isfinite(v00) & np.isfinite(v10) & np.isfinite(v01) & np.isfinite(v11)
    fx, fy = f[good, 0], f[good, 1]
    vals = (
        (1 - fx) * (1 - fy) * v00[good]
        + fx * (1 - fy) * v10[good]
        + (1 - fx) * fy * v01[good]
        + fx * fy * v11[good]
    )
    tmp = np.full(int(np.sum(ok)), np.nan)
    tmp[good] = vals
    out[ok] = tmp
    return out


def _gather_target(
    grid: Grid, phi: np.ndarray, nodes: list[tuple[int, int]], circle: np.ndarray
) -> float:
    best = math.inf
    if nodes:
        arr = np.asarray(nodes)
        best = float(np.min(phi[arr[:, 0], arr[:, 1]], initial=math.inf))
    vals = _interp_points(grid, phi, np.asarray(circle, dtype=float).reshape(-1, 2))
    finite = vals[np.isfinite(vals)]
    if len(finite):
        best = min(best, float(np.min(finite)))
    return best


def mstar(
    cell: UnitCellGeometry,
    model: LagrangianModel,
    q: MetricQuery,
    grid: Grid | None = None,
    h: float = 1 / 16,
    rho: int = 4,
    margin: float = 3.0,
    max_nodes: int = 12_000_000,
    speed_pad: float = 1.0,
    circle_points: int = CIRCLE_POINTS,
) -> MetricResult:
    """Extension of mtilde to arbitrary endpoints: minimize over boundary
    representatives of y and x inside their unit cubes."""
    if not cell.has_holes:
        # degenerate hole-free case: no boundary exists, fall back to mtilde
        # on a corridor window (straight-line optima need no cone)
        return mtilde(
            cell, model, q, grid=grid, h=h, rho=rho, margin=margin,
            max_nodes=max_nodes, want_path=False, cone_window=False,
        )
    hh = h if grid is None else grid.h
    moves = MoveSet.build(model.m0, hh, rho, speed_cap=model.m0 + speed_pad)
    n_steps = _steps_for_span(q.span, moves.dt)
    if grid is None:
        pts = [np.asarray(q.y) - 0.6, np.asarray(q.y) + 0.6, np.asarray(q.x) - 0.6, np.asarray(q.x) + 0.6]
        grid = _metric_grid(cell, pts, hh, margin=margin, max_nodes=max_nodes)
    engine = _DPEngine(grid, model, moves)
    src_nodes, src_circle = boundary_representatives(cell, grid, q.y, circle_points)
    tgt_nodes, tgt_circle = boundary_representatives(cell, grid, q.x, circle_points)
    if not src_nodes and len(src_circle) == 0:
        raise ValueError("no boundary representatives in the source unit cube")
    if not tgt_nodes and len(tgt_circle) == 0:
        raise ValueError("no boundary representatives in the target unit cube")
    phi = np.full(grid.shape, np.inf)
    for i, j in src_nodes:
        phi[i, j] = 0.0
    phi, _ = engine.step(phi)
    phi = _inject_sources(engine, phi, src_circle)
    for _ in range(n_steps - 1):
        phi, _ = engine.step(phi)
    cost = _gather_target(grid, phi, tgt_nodes, tgt_circle)
    return MetricResult(cost=cost)


@dataclass
class MbarResult:
    value: float
    richardson: float
    k: int
    value_half: float


def mbar_star(
    cell: UnitCellGeometry,
    model: LagrangianModel,
    q: MetricQuery,
    k: int,
    h: float = 1 / 16,
    rho: int = 4,
    margin: float = 3.0,
    max_nodes: int = 12_000_000,
) -> MbarResult:
    """Large-scale average (1/k) mstar(k tau, k t, k y, k x) on a k-cell
    window, with the Richardson consistency gap against scale k/2."""
    if k < 2:
        raise ValueError(f"averaging scale k must be >= 2, got {k}")
    q.check_cone(model.m0)

    def run(kk: int) -> float:
        qk = MetricQuery(
            tau=kk * q.tau,
            t=kk * q.t,
            y=tuple(kk * c for c in q.y),
            x=tuple(kk * c for c in q.x),
        )
        res = mstar(
            cell, model, qk, h=h, rho=rho, margin=margin, max_nodes=max_nodes
        )
        return res.cost / kk

    value = run(k)
    half = k // 2
    value_half = run(half) if half >= 1 else math.nan
    rich = abs(value - value_half) if math.isfinite(value_half) else math.nan
    return MbarResult(value=value, richardson=rich, k=k, value_half=value_half)


# ---------------------------------------------------------------------------
# Effective tables
# ---------------------------------------------------------------------------


@dataclass
class EffectiveTables:
    """Sampled effective Lagrangian over a velocity grid and effective
    Hamiltonian over a momentum grid, with multilinear interpolation."""

    v_axis: np.ndarray
    lbar: np.ndarray  # (nv, nv)
    p_axis: np.ndarray
    hbar: np.ndarray  # (np, np)
    k: int
    k0: float
    provenance: dict
    clamp_warnings: int = 0

    def lbar_at(self, v: np.ndarray) -> np.ndarray:
        """Multilinear interpolation of the L-bar table; out-of-range
        queries clamp to the table edge and are counted."""
        v = np.asarray(v, dtype=float)
        lo, hi = self.v_axis[0], self.v_axis[-1]
        clipped = np.clip(v, lo, hi)
        if np.any(np.abs(clipped - v) > 1e-12):
            self.clamp_warnings += int(np.sum(np.any(np.abs(clipped - v) > 1e-12, axis=-1)))
        step = self.v_axis[1] - self.v_axis[0]
        fij = (clipped - lo) / step
        b = np.minimum(np.floor(fij).astype(int), len(self.v_axis) - 2)
        f = fij - b
        v00 = self.lbar[b[..., 0], b[..., 1]]
        v10 = self.lbar[b[..., 0] + 1, b[..., 1]]
        v01 = self.lbar[b[..., 0], b[..., 1] + 1]
        v11 = self.lbar[b[..., 0] + 1, b[..., 1] + 1]
        fx, fy = f[..., 0], f[..., 1]
        return (
            (1 - fx) * (1 - fy) * v00
            + fx * (1 - fy) * v10
            + (1 - fx) * fy * v01
            + fx * fy * v11
        )

    def lbar_min(self) -> float:
        return float(np.min(self.lbar[np.isfinite(self.lbar)]))

    def hbar_at(self, p: np.ndarray) -> np.ndarray:
        p = np.asarray(p, dtype=float)
        lo, hi = self.p_axis[0], self.p_axis[-1]
        clipped = np.clip(p, lo, hi)
        step = self.p_axis[1] - self.p_axis[0]
        fij = (clipped - lo) / step
        b = np.minimum(np.floor(fij).astype(int), len(self.p_axis) - 2)
        f = fij - b
        v00 = self.hbar[b[..., 0], b[..., 1]]
        v10 = self.hbar[b[..., 0] + 1, b[..., 1]]
        v01 = self.hbar[b[..., 0], b[..., 1] + 1]
        v11 = self.hbar[b[..., 0] + 1, b[..., 1] + 1]
        fx, fy = f[..., 0], f[..., 1]
        return (
            (1 - fx) * (1 - fy) * v00
            + fx * (1 - fy) * v10
            + (1 - fx) * fy * v01
            + fx * fy * v11
        )


def _d4_symmetric(cell: UnitCellGeometry, model: LagrangianModel) -> bool:
    """Whether the hole layout and potential are invariant under the dihedral
    symmetries of the lattice (reflections about the axes and diagonals
    through the origin).  Catalog potentials built from lattice or coordinate
    cosine distances qualify; expression potentials are never assumed to."""
    if model.kind != "mechanical":
        return False
    if model.potential.name not in ("zero", "constant", "bump", "trig"):
        return False
    if not cell.has_holes:
        return True
    return all(
        h.sdf is None and tuple(h.center) == (0.5, 0.5) for h in cell.holes
    ) and len(cell.holes) == 1


def build_tables(
    cell: UnitCellGeometry,
    model: LagrangianModel,
    k: int = 8,
    spacing: float = 0.05,
    h: float = 1 / 16,
    rho: int = 4,
    margin: float = 3.0,
    max_nodes: int = 40_000_000,
    provenance: dict | None = None,
    use_symmetry: bool | None = None,
) -> EffectiveTables:
    """Sample L-bar(v) = (1/k) mstar(0, k, 0, k v) for all v on the radius
    (m0 + 1) grid through one multi-source dynamic program, then conjugate
    for H-bar.

    All velocities share the scale-k window, which only widens the path
    search relative to per-velocity windows.  For dihedrally symmetric
    layouts the program runs on the 45-degree wedge only (reflection folding
    maps any path to an equal-cost path inside the wedge) and the table is
    mirrored; the sweep runs in float32, whose roundoff is far below the
    scheme's own O(h + 1/k) resolution.
    """
    if k < 2:
        raise ValueError(f"averaging scale k must be >= 2, got {k}")
    radius = model.m0 + 1.0
    n_half = int(round(radius / spacing))
    v_axis = spacing * np.arange(-n_half, n_half + 1)
    if use_symmetry is None:
        use_symmetry = _d4_symmetric(cell, model)

    band = 0.5 + margin
    extent = k * radius + band
    if use_symmetry:
        lo_v = (math.floor(-band / h) * h, math.floor(-band / h) * h)
        hi_v = (
            math.ceil(extent / h) * h,
            math.ceil((k * radius / math.sqrt(2.0) + band) / h) * h,
        )
    else:
        lo_v = (math.floor(-extent / h) * h,) * 2
        hi_v = (math.ceil(extent / h) * h,) * 2
    n_nodes = int(round((hi_v[0] - lo_v[0]) / h) + 1) * int(
        round((hi_v[1] - lo_v[1]) / h) + 1
    )
    if n_nodes > max_nodes:
        raise MemoryError(
            f"table window of {n_nodes} nodes exceeds the budget {max_nodes}"
        )
    view = DomainView(cell=cell, epsilon=1.0)
    grid = Grid.build(
        view,
        ((lo_v[0], hi_v[0]), (lo_v[1], hi_v[1])),
        h,
        periodic=False,
        check_connectivity=not use_symmetry,
    )
    if use_symmetry:
        from dataclasses import replace

        xs, ys = grid.axes()
        outside = ys[None, :] > xs[:, None] + band + 1e-12
        cls2 = np.where(outside, np.int8(2), grid.cls)
        grid = replace(grid, cls=cls2)

    moves = MoveSet.build(model.m0, h, rho, speed_cap=model.m0 + 2.0)
    n_steps = _steps_for_span(float(k), moves.dt)
    engine = _DPEngine(grid, model, moves, dtype=np.float32)

    if cell.has_holes:
        src_nodes, src_circle = boundary_representatives(cell, grid, (0.0, 0.0))
        phi = np.full(grid.shape, np.inf, dtype=np.float32)
        for i, j in src_nodes:
            phi[i, j] = 0.0
        phi, _ = engine.step(phi)
        phi = _inject_sources(engine, phi, src_circle)
        for _ in range(n_steps - 1):
            phi, _ = engine.step(phi)
        lbar = _gather_table(cell, grid, phi.astype(float), v_axis, k)
    else:
        (i0, j0), _ = _snap_to_admissible(grid, (0.0, 0.0))
        phi = np.full(grid.shape, np.inf, dtype=np.float32)
        phi[i0, j0] = 0.0
        phi, _ = engine.run(phi, n_steps)
        lbar = _gather_table_pointwise(grid, phi.astype(float), v_axis, k)

    if use_symmetry:
        lbar = _mirror_octant(lbar, n_half)

    # the velocity table is a disc of radius m0 + 1; square corners beyond it
    # are never queried and stay unpopulated
    vv = np.hypot(v_axis[:, None], v_axis[None, :])
    lbar = np.where(vv <= radius + spacing / 2 + 1e-12, lbar, np.inf)

    p_radius = max(1.0, model.m0 - 0.5)
    n_p = int(round(p_radius / spacing))
    p_axis = spacing * np.arange(-n_p, n_p + 1)
    hbar = _conjugate_table(v_axis, lbar, p_axis)

    return EffectiveTables(
        v_axis=v_axis,
        lbar=lbar,
        p_axis=p_axis,
        hbar=hbar,
        k=k,
        k0=model.k0,
        provenance=provenance
        or {
            "model": model.key(),
            "k": k,
            "h": h,
            "rho": rho,
            "spacing": spacing,
        },
    )


def _mirror_octant(lbar: np.ndarray, n_half: int) -> np.ndarray:
    """Fill the full velocity table from its 0 <= vy <= vx octant."""
    ax = np.abs(np.arange(-n_half, n_half + 1))
    hi = np.maximum.outer(ax, ax)
    lo = np.minimum.outer(ax, ax)
    return lbar[n_half + hi, n_half + lo]


def _gather_table(
    cell: UnitCellGeometry, grid: Grid, phi: np.ndarray, v_axis: np.ndarray, k: int
) -> np.ndarray:
    """L-bar values on the velocity grid: minimize phi over the boundary
    representatives of each scaled target k v."""
    nv = len(v_axis)
    lbar = np.full((nv, nv), np.inf)
    lo = np.asarray(grid.origin)
    xs, ys = grid.axes()
    adm = grid.admissible
    spacing = v_axis[1] - v_axis[0]

    # scatter boundary-node values into the velocity cubes that contain them
    ii, jj = np.nonzero(grid.boundary_mask)
    finite = np.isfinite(phi[ii, jj])
    ii, jj = ii[finite], jj[finite]
    px = xs[ii]
    py = ys[jj]
    vals = phi[ii, jj] / k
    _scatter_min(lbar, v_axis, px, py, vals, k)

    # refine with exact circle points where bilinear data is complete
    holes = _hole_instances_in_box(
        cell, lo, lo + grid.h * (np.asarray(grid.shape) - 1), pad=0.0
    )
    angles = 2.0 * np.pi * np.arange(CIRCLE_POINTS) / CIRCLE_POINTS
    ring_unit = np.stack([np.cos(angles), np.sin(angles)], axis=-1)
    for c, r in holes:
        ring = c + r * ring_unit
        fij = (ring - lo) / grid.h
        b = np.floor(fij).astype(int)
        ok = (
            (b[:, 0] >= 0)
            & (b[:, 0] < grid.shape[0] - 1)
            & (b[:, 1] >= 0)
            & (b[:, 1] < grid.shape[1] - 1)
        )
        if not np.any(ok):
            continue
        bb = b[ok]
        f = fij[ok] - bb
        v00 = phi[bb[:, 0], bb[:, 1]]
        v10 = phi[bb[:, 0] + 1, bb[:, 1]]
        v01 = phi[bb[:, 0], bb[:, 1] + 1]
        v11 = phi[bb[:, 0] + 1, bb[:, 1] + 1]
        a00 = adm[bb[:, 0], bb[:, 1]]
        a10 = adm[bb[:, 0] + 1, bb[:, 1]]
        a01 = adm[bb[:, 0], bb[:, 1] + 1]
        a11 = adm[bb[:, 0] + 1, bb[:, 1] + 1]
        good = a00 & a10 & a01 & a11
        good &= np.isfinite(v00) & np.isfinite(v10) & np.isfinite(v01) & np.isfinite(v11)
        if not np.any(good):
            continue
        fx, fy = f[good, 0], f[good, 1]
        interp = (
            (1 - fx) * (1 - fy) * v00[good]
            + fx * (1 - fy) * v10[good]
            + (1 - fx) * fy * v01[good]
            + fx * fy * v11[good]
        )
        pts = ring[ok][good]
        _scatter_min(lbar, v_axis, pts[:, 0], pts[:, 1], interp / k, k)
    return lbar


def _scatter_min(
    lbar: np.ndarray, v_axis: np.ndarray, px: np.ndarray, py: np.ndarray, vals: np.ndarray, k: int
) -> None:
    """For each point p (scaled coordinates) fold its value into every
    velocity node v with k v inside the closed unit cube around p.

    A representative covers at most ceil(1/(k spacing)) + 1 velocity nodes
    per axis, so the scatter runs once per small block offset with
    minimum.at over all points."""
    spacing = v_axis[1] - v_axis[0]
    lo_axis = v_axis[0]
    nv = len(v_axis)
    vx_lo = np.ceil(((px - 0.5) / k - lo_axis) / spacing - 1e-12).astype(int)
    vx_hi = np.floor(((px + 0.5) / k - lo_axis) / spacing + 1e-12).astype(int)
    vy_lo = np.ceil(((py - 0.5) / k - lo_axis) / spacing - 1e-12).astype(int)
    vy_hi = np.floor(((py + 0.5) / k - lo_axis) / spacing + 1e-12).astype(int)
    max_bx = int(np.max(vx_hi - vx_lo, initial=-1))
    max_by = int(np.max(vy_hi - vy_lo, initial=-1))
    flat = lbar.reshape(-1)
    for ox in range(max_bx + 1):
        gx = vx_lo + ox
        okx = (gx <= vx_hi) & (gx >= 0) & (gx < nv)
        for oy in range(max_by + 1):
            gy = vy_lo + oy
            ok = okx & (gy <= vy_hi) & (gy >= 0) & (gy < nv)
            if not np.any(ok):
                continue
            idx = gx[ok] * nv + gy[ok]
            np.minimum.at(flat, idx, vals[ok])


def _gather_table_pointwise(
    grid: Grid, phi: np.ndarray, v_axis: np.ndarray, k: int
) -> np.ndarray:
    """Hole-free tables: read phi at the scaled targets k v directly."""
    nv = len(v_axis)
    lbar = np.full((nv, nv), np.inf)
    lo = np.asarray(grid.origin)
    for a, vx in enumerate(v_axis):
        for b, vy in enumerate(v_axis):
            p = k * np.asarray([vx, vy])
            fij = (p - lo) / grid.h
            bse = np.floor(fij).astype(int)
            if not (0 <= bse[0] < grid.shape[0] - 1 and 0 <= bse[1] < grid.shape[1] - 1):
                continue
            f = fij - bse
            vals = phi[bse[0] : bse[0] + 2, bse[1] : bse[1] + 2]
            if not np.all(np.isfinite(vals)):
                # nearest-node fallback at the reachability rim
                vi = phi[
                    min(grid.shape[0] - 1, int(round(fij[0]))),
                    min(grid.shape[1] - 1, int(round(fij[1]))),
                ]
                if math.isfinite(vi):
                    lbar[a, b] = vi / k
                continue
            lbar[a, b] = (
                (1 - f[0]) * (1 - f[1]) * vals[0, 0]
                + f[0] * (1 - f[1]) * vals[1, 0]
                + (1 - f[0]) * f[1] * vals[0, 1]
                + f[0] * f[1] * vals[1, 1]
            ) / k
    return lbar


def _conjugate_table(v_axis: np.ndarray, lbar: np.ndarray, p_axis: np.ndarray) -> np.ndarray:
    """H-bar(p) = max over table velocities of p . v - L-bar(v)."""
    vx = v_axis[:, None]
    vy = v_axis[None, :]
    finite = np.isfinite(lbar)
    neg_l = np.where(finite, -lbar, -np.inf)
    n_p = len(p_axis)
    hbar = np.empty((n_p, n_p))
    for a, px in enumerate(p_axis):
        # inner maximization vectorized over the velocity grid
        score_x = px * vx + neg_l
        for b, py in enumerate(p_axis):
            hbar[a, b] = np.max(score_x + py * vy)
    return hbar


def effective_lagrangian(tables: EffectiveTables, v: Sequence[float]) -> float:
    """Table-backed L-bar(v); |v| must stay within the query radius m0."""
    v = np.asarray(v, dtype=float)
    radius = tables.v_axis[-1]
    if float(np.max(np.abs(v))) > radius + 1e-12:
        raise ValueError(f"velocity {v} outside the table range {radius}")
    return float(tables.lbar_at(v))


def effective_hamiltonian(tables: EffectiveTables, p: Sequence[float]) -> float:
    """Discrete convex conjugate of the L-bar table at momentum p; errors
    when the maximizer touches the table rim (window too small)."""
    p = np.asarray(p, dtype=float)
    vx = tables.v_axis[:, None]
    vy = tables.v_axis[None, :]
    finite = np.isfinite(tables.lbar)
    score = p[0] * vx + p[1] * vy - np.where(finite, tables.lbar, np.inf)
    score = np.where(finite, score, -np.inf)
    idx = int(np.argmax(score))
    a, b = divmod(idx, score.shape[1])
    n = len(tables.v_axis)
    if a in (0, n - 1) or b in (0, n - 1):
        raise ValueError("conjugate window too small: maximizer on the table rim")
    return float(score[a, b])
