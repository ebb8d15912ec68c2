"""Semi-Lagrangian dynamic programming for the scaled Dirichlet problem and
its state-constraint twin.

The scheme realizes the optimal-control picture directly: one backward step
of length dt at a node x takes the minimum over a polar velocity stencil
(|v| <= m0, plus v = 0) of

    dt L(x / eps, v) + interp(prev, x - dt v),

with multilinear interpolation restricted to grid cells whose corners are
all admissible, so discrete paths never enter holes.  Nodes classified as
Boundary additionally compare against the Dirichlet exit value
b(xhat, xhat / eps).  The state-constraint variant drops that branch.
dt = h / m0 ties the foot-point reach to one cell ring, which keeps the
interpolation local and the scheme monotone and unconditionally stable.

Updates are vectorized per stencil vector: the foot-point offset is constant
across nodes, so one candidate field is a fixed-weight combination of
shifted copies of the previous slice.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from scipy import ndimage

from hjhomog.dynamics import BoundaryData, LagrangianModel
from hjhomog.geometry import (
    Classification,
    DomainView,
    boundary_distance_grid,
)

__all__ = [
    "Grid",
    "Stencil",
    "ValueField",
    "solve_dirichlet",
    "solve_state_constraint",
    "step_update",
    "extract_optimal_path",
    "resolve_from_slice",
]

# traceback codes (stencil indices are >= 0)
TB_INITIAL = -1
TB_DIRICHLET = -2
TB_FROZEN = -3

_INT = 0
_BND = 1
_EXT = 2


@dataclass(frozen=True)
class Grid:
    """A uniform node grid over an axis-aligned window, classified against a
    domain view with tolerance h/2.

    Periodic grids tile the window (node count = side/h per axis, half-open);
    bounded grids include both window edges.  Side lengths must be integer
    multiples of h.
    """

    view: DomainView
    origin: tuple[float, float]
    shape: tuple[int, int]
    h: float
    periodic: bool
    cls: np.ndarray = field(repr=False, compare=False)  # int8 (nx, ny)
    check_connectivity: bool = True

    @staticmethod
    def build(
        view: DomainView,
        window: tuple[tuple[float, float], tuple[float, float]],
        h: float,
        periodic: bool = False,
        check_connectivity: bool = True,
    ) -> "Grid":
        if h <= 0:
            raise ValueError("grid spacing must be positive")
        (x0, x1), (y0, y1) = window
        counts = []
        for lo, hi in ((x0, x1), (y0, y1)):
            span = hi - lo
            m = span / h
            if abs(m - round(m)) > 1e-9 or round(m) < 1:
                raise ValueError(
                    f"window side {span} is not a positive integer multiple of h={h}"
                )
            counts.append(int(round(m)))
        nx = counts[0] if periodic else counts[0] + 1
        ny = counts[1] if periodic else counts[1] + 1
        xs = x0 + h * np.arange(nx)
        ys = y0 + h * np.arange(ny)
        pts = np.stack(np.meshgrid(xs, ys, indexing="ij"), axis=-1)
        d = boundary_distance_grid(view, pts)
        tol = h / 2.0
        cls = np.full(d.shape, _INT, dtype=np.int8)
        cls[np.abs(d) <= tol] = _BND
        cls[d < -tol] = _EXT
        grid = Grid(
            view=view,
            origin=(x0, y0),
            shape=(nx, ny),
            h=h,
            periodic=periodic,
            cls=cls,
            check_connectivity=check_connectivity,
        )
        if check_connectivity and not grid.is_connected():
            raise ValueError("admissible node graph is disconnected; refine the grid")
        return grid

    # -- masks and coordinates ------------------------------------------------

    @property
    def admissible(self) -> np.ndarray:
        return self.cls != _EXT

    @property
    def boundary_mask(self) -> np.ndarray:
        return self.cls == _BND

    @property
    def n_nodes(self) -> int:
        return self.shape[0] * self.shape[1]

    def axes(self) -> tuple[np.ndarray, np.ndarray]:
        xs = self.origin[0] + self.h * np.arange(self.shape[0])
        ys = self.origin[1] + self.h * np.arange(self.shape[1])
        return xs, ys

    def window(self) -> tuple[tuple[float, float], tuple[float, float]]:
        ext = 0 if self.periodic else -1
        return (
            (self.origin[0], self.origin[0] + self.h * (self.shape[0] + ext)),
            (self.origin[1], self.origin[1] + self.h * (self.shape[1] + ext)),
        )

    def points(self) -> np.ndarray:
        xs, ys = self.axes()
        return np.stack(np.meshgrid(xs, ys, indexing="ij"), axis=-1)

    def node_at(self, x: Sequence[float]) -> tuple[int, int]:
        """Index of the node at physical position x (must lie on the grid)."""
        ix = (np.asarray(x, dtype=float) - np.asarray(self.origin)) / self.h
        idx = np.round(ix).astype(int)
        if np.max(np.abs(ix - idx)) > 1e-7:
            raise ValueError(f"point {x} is not a grid node")
        if self.periodic:
            return int(idx[0]) % self.shape[0], int(idx[1]) % self.shape[1]
        if not (0 <= idx[0] < self.shape[0] and 0 <= idx[1] < self.shape[1]):
            raise ValueError(f"point {x} lies outside the grid window")
        return int(idx[0]), int(idx[1])

    def position(self, i: int, j: int) -> np.ndarray:
        return np.asarray(
            [self.origin[0] + self.h * i, self.origin[1] + self.h * j]
        )

    def is_connected(self) -> bool:
        adm = self.admissible
        if not adm.any():
            return False
        structure = np.array([[0, 1, 0], [1, 1, 1], [0, 1, 0]])
        labels, num = ndimage.label(adm, structure=structure)
        if not self.periodic or num == 1:
            return num == 1
        # merge labels across the wrap seams
        parent = list(range(num + 1))

        def find(a):
            while parent[a] != a:
                parent[a] = parent[parent[a]]
                a = parent[a]
            return a

        def union(a, b):
            ra, rb = find(a), find(b)
            if ra != rb:
                parent[ra] = rb

        for a, b in zip(labels[0, :], labels[-1, :]):
            if a and b:
                union(int(a), int(b))
        for a, b in zip(labels[:, 0], labels[:, -1]):
            if a and b:
                union(int(a), int(b))
        roots = {find(int(l)) for l in np.unique(labels) if l != 0}
        return len(roots) == 1

    def shifted(self, arr: np.ndarray, off: tuple[int, int], fill) -> np.ndarray:
        """Array with entry [i, j] = arr[i + off0, j + off1]; out-of-window
        entries become ``fill`` on bounded grids and wrap on periodic ones."""
        if self.periodic:
            return np.roll(arr, shift=(-off[0], -off[1]), axis=(0, 1))
        out = np.full_like(arr, fill)
        nx, ny = arr.shape
        sx0, sx1 = max(0, -off[0]), min(nx, nx - off[0])
        sy0, sy1 = max(0, -off[1]), min(ny, ny - off[1])
        if sx0 < sx1 and sy0 < sy1:
            out[sx0:sx1, sy0:sy1] = arr[
                sx0 + off[0] : sx1 + off[0], sy0 + off[1] : sy1 + off[1]
            ]
        return out


@dataclass(frozen=True)
class Stencil:
    """Polar velocity stencil: v = 0 first, then n_radii rings of n_dirs
    directions with speeds m0 * i / n_radii."""

    vectors: np.ndarray  # (S, 2)

    @staticmethod
    def polar(m0: float, n_dirs: int = 32, n_radii: int = 16) -> "Stencil":
        vecs = [np.zeros(2)]
        for i in range(1, n_radii + 1):
            r = m0 * i / n_radii
            for j in range(n_dirs):
                th = 2.0 * math.pi * j / n_dirs
                vecs.append(np.array([r * math.cos(th), r * math.sin(th)]))
        return Stencil(vectors=np.asarray(vecs))

    def __len__(self) -> int:
        return len(self.vectors)


@dataclass
class ValueField:
    """Space-time values of a solved problem, indexed by (time step, node).

    ``values[k]`` is the slice at time k dt; inadmissible nodes hold +inf.
    ``traceback[k]`` (when stored) holds, per node, the stencil index that
    won the step from slice k to k+1, or one of the negative codes
    TB_DIRICHLET / TB_FROZEN.
    """

    grid: Grid
    dt: float
    values: np.ndarray
    problem: str
    epsilon: float
    traceback: np.ndarray | None
    stencil: Stencil
    frozen_count: int = 0

    @property
    def n_steps(self) -> int:
        return self.values.shape[0] - 1

    def slice_at(self, t: float) -> np.ndarray:
        k = t / self.dt
        if abs(k - round(k)) > 1e-9:
            raise ValueError(f"time {t} is not a multiple of dt={self.dt}")
        return self.values[int(round(k))]

    def value_at(self, x: Sequence[float], t: float) -> float:
        i, j = self.grid.node_at(x)
        return float(self.slice_at(t)[i, j])


@dataclass(frozen=True)
class _StencilPlan:
    """Precomputed per-vector interpolation data: integer corner offsets,
    weights, validity mask, and kinetic cost."""

    corners: tuple[tuple[int, int], ...]
    weights: tuple[float, ...]
    valid: np.ndarray
    run_cost: np.ndarray | float  # dt * L contribution that depends on v


def _snap(x: float, tol: float = 1e-9) -> float:
    r = round(x)
    return float(r) if abs(x - r) <= tol else x


def _build_plans(
    grid: Grid,
    stencil: Stencil,
    dt: float,
    model: LagrangianModel,
    pts_over_eps: np.ndarray,
) -> tuple[list[_StencilPlan], np.ndarray | None]:
    """Per-vector plans plus, for kinetic/potential-split models, the shared
    site-cost array dt * V(x/eps) to be added once after the stencil min."""
    adm = grid.admissible
    nine = {}
    for oi in (-1, 0, 1):
        for oj in (-1, 0, 1):
            nine[(oi, oj)] = grid.shifted(adm, (oi, oj), False)

    split = model.kinetic_potential_split()
    site_cost = None
    if split is not None:
        kinetic, site = split
        site_cost = dt * np.asarray(site(pts_over_eps))

    plans: list[_StencilPlan] = []
    for v in stencil.vectors:
        s = (dt / grid.h) * v  # foot offset in index units
        if np.max(np.abs(s)) > 1.0 + 1e-9:
            raise ValueError("CFL violation: dt * |v| exceeds the one-cell reach")
        sx, sy = _snap(s[0]), _snap(s[1])
        bx, fx = math.floor(-sx), -sx - math.floor(-sx)
        by, fy = math.floor(-sy), -sy - math.floor(-sy)
        fx, fy = _snap(fx), _snap(fy)
        corners = []
        weights = []
        for di, wx in ((0, 1.0 - fx), (1, fx)):
            for dj, wy in ((0, 1.0 - fy), (1, fy)):
                w = wx * wy
                if w > 0.0:
                    corners.append((bx + di, by + dj))
                    weights.append(w)
        valid = nine[corners[0]]
        for c in corners[1:]:
            valid = valid & nine[c]
        if split is not None:
            run = dt * float(kinetic(v))
        else:
            vfield = np.broadcast_to(v, pts_over_eps.shape)
            run = dt * np.asarray(model.lagrangian(pts_over_eps, vfield))
        plans.append(
            _StencilPlan(
                corners=tuple(corners),
                weights=tuple(weights),
                valid=valid,
                run_cost=run,
            )
        )
    return plans, site_cost


def _sweep(
    grid: Grid,
    prev: np.ndarray,
    plans: list[_StencilPlan],
    site_cost: np.ndarray | None,
    want_argmin: bool,
) -> tuple[np.ndarray, np.ndarray | None]:
    """One backward step: stencil minimum of the continuation values."""
    best = np.full(grid.shape, np.inf)
    arg = np.full(grid.shape, TB_FROZEN, dtype=np.int16) if want_argmin else None
    shifted_cache: dict[tuple[int, int], np.ndarray] = {}

    def shifted(off):
        if off not in shifted_cache:
            shifted_cache[off] = grid.shifted(prev, off, np.inf)
        return shifted_cache[off]

    for s_idx, plan in enumerate(plans):
        cand = plan.weights[0] * shifted(plan.corners[0])
        for c, w in zip(plan.corners[1:], plan.weights[1:]):
            cand = cand + w * shifted(c)
        cand = cand + plan.run_cost
        improves = plan.valid & (cand < best)
        if want_argmin:
            arg[improves] = s_idx
        best = np.where(improves, cand, best)
    if site_cost is not None:
        best = best + site_cost
    return best, arg


def _solve(
    view: DomainView,
    model: LagrangianModel,
    data: BoundaryData,
    grid: Grid,
    horizon: float,
    dirichlet: bool,
    n_dirs: int,
    n_radii: int,
    store_traceback: bool | None,
    initial: np.ndarray | None = None,
) -> ValueField:
    dt = grid.h / model.m0
    n_steps_f = horizon / dt
    if abs(n_steps_f - round(n_steps_f)) > 1e-9:
        raise ValueError(f"horizon {horizon} is not a multiple of dt={dt}")
    n_steps = int(round(n_steps_f))

    adm = grid.admissible
    pts = grid.points()
    pts_over_eps = pts / view.epsilon

    gvals = np.asarray(data.g_at(pts), dtype=float)
    bbar_floor = None
    if dirichlet:
        bvals = _dirichlet_values(view, data, grid, pts)
        # A5 on the grid: g <= bbar at admissible nodes
        bbar_floor = (
            np.full(grid.shape, data.b.const)
            if data.b.const is not None
            else data.bbar(view.cell, pts)
        )
        bad = adm & (gvals > bbar_floor + 1e-12)
        if bad.any():
            i, j = np.argwhere(bad)[0]
            raise ValueError(
                f"initial datum exceeds the boundary floor at node {(i, j)} "
                "(A5 fails on the grid)"
            )
    else:
        bvals = None

    stencil = Stencil.polar(model.m0, n_dirs=n_dirs, n_radii=n_radii)
    plans, site_cost = _build_plans(grid, stencil, dt, model, pts_over_eps)

    if store_traceback is None:
        store_traceback = grid.n_nodes <= 512 * 512

    values = np.empty((n_steps + 1, *grid.shape))
    first = np.where(adm, gvals if initial is None else initial, np.inf)
    values[0] = first
    tb = (
        np.empty((n_steps, *grid.shape), dtype=np.int16) if store_traceback else None
    )

    frozen_count = 0
    boundary = grid.boundary_mask
    for k in range(n_steps):
        best, arg = _sweep(grid, values[k], plans, site_cost, store_traceback)
        if dirichlet:
            exit_wins = boundary & (bvals < best)
            best = np.where(exit_wins, bvals, best)
            if store_traceback:
                arg[exit_wins] = TB_DIRICHLET
        frozen = adm & ~np.isfinite(best)
        if frozen.any():
            frozen_count += int(frozen.sum())
            best = np.where(frozen, values[k], best)
        new = np.where(adm, best, np.inf)
        values[k + 1] = new
        if store_traceback:
            tb[k] = arg

    return ValueField(
        grid=grid,
        dt=dt,
        values=values,
        problem="dirichlet-eps" if dirichlet else "state-constraint-eps",
        epsilon=view.epsilon,
        traceback=tb,
        stencil=stencil,
        frozen_count=frozen_count,
    )


def _dirichlet_values(
    view: DomainView, data: BoundaryData, grid: Grid, pts: np.ndarray
) -> np.ndarray:
    """b(xhat, xhat/eps) at Boundary nodes (+inf elsewhere)."""
    out = np.full(grid.shape, np.inf)
    mask = grid.boundary_mask
    if not mask.any():
        return out
    if data.b.const is not None:
        out[mask] = data.b.const
        return out
    from hjhomog.geometry import project_to_boundary

    idx = np.argwhere(mask)
    for i, j in idx:
        xhat = project_to_boundary(view, pts[i, j])
        out[i, j] = float(data.b_at(xhat, xhat / view.epsilon))
    return out


def solve_dirichlet(
    view: DomainView,
    model: LagrangianModel,
    data: BoundaryData,
    grid: Grid,
    horizon: float,
    n_dirs: int = 32,
    n_radii: int = 16,
    store_traceback: bool | None = None,
) -> ValueField:
    """Backward dynamic programming for the scaled problem with generalized
    Dirichlet data on the hole boundaries."""
    return _solve(
        view, model, data, grid, horizon, True, n_dirs, n_radii, store_traceback
    )


def solve_state_constraint(
    view: DomainView,
    model: LagrangianModel,
    data: BoundaryData,
    grid: Grid,
    horizon: float,
    n_dirs: int = 32,
    n_radii: int = 16,
    store_traceback: bool | None = None,
) -> ValueField:
    """Same scheme without the Dirichlet exit branch: trajectories must stay
    in the domain for the whole horizon."""
    return _solve(
        view, model, data, grid, horizon, False, n_dirs, n_radii, store_traceback
    )


def resolve_from_slice(
    model: LagrangianModel,
    data: BoundaryData,
    field_in: ValueField,
    s: float,
) -> ValueField:
    """Re-solve using slice s of ``field_in`` as initial data; the discrete
    dynamic programming principle makes slices >= s reproduce bit-exactly."""
    k = s / field_in.dt
    if abs(k - round(k)) > 1e-9:
        raise ValueError(f"slice time {s} is not a multiple of dt={field_in.dt}")
    k = int(round(k))
    horizon = (field_in.n_steps - k) * field_in.dt
    n_dirs, n_radii = _stencil_counts(field_in.stencil)
    initial = np.where(field_in.grid.admissible, field_in.values[k], 0.0)
    return _solve(
        field_in.grid.view,
        model,
        data,
        field_in.grid,
        horizon,
        field_in.problem == "dirichlet-eps",
        n_dirs,
        n_radii,
        field_in.traceback is not None,
        initial=initial,
    )


def _stencil_counts(stencil: Stencil) -> tuple[int, int]:
    """(n_dirs, n_radii) of a polar stencil, recovered from its vectors."""
    n = len(stencil.vectors) - 1
    if n <= 0:
        return 0, 0
    speeds = np.linalg.norm(stencil.vectors[1:], axis=1)
    n_radii = len(np.unique(np.round(speeds, 12)))
    return n // n_radii, n_radii


def step_update(
    grid: Grid,
    model: LagrangianModel,
    view: DomainView,
    prev: np.ndarray,
    node: tuple[int, int],
    stencil: Stencil,
    dt: float,
) -> tuple[float, int]:
    """Reference single-node update: min over the stencil of
    dt L(x/eps, v) + interp(prev, x - dt v), ties to the earlier stencil
    index.  Returns (value, winning index) with index TB_FROZEN when no
    admissible foot point exists."""
    i, j = node
    if not grid.admissible[i, j]:
        raise ValueError("step_update is defined on admissible nodes only")
    x = grid.position(i, j)
    adm = grid.admissible
    best = math.inf
    best_idx = TB_FROZEN
    for s_idx, v in enumerate(stencil.vectors):
        s = (dt / grid.h) * v
        sx, sy = _snap(float(s[0])), _snap(float(s[1]))
        bx, fx = math.floor(-sx), _snap(-sx - math.floor(-sx))
        by, fy = math.floor(-sy), _snap(-sy - math.floor(-sy))
        val = 0.0
        ok = True
        for di, wx in ((0, 1.0 - fx), (1, fx)):
            for dj, wy in ((0, 1.0 - fy), (1, fy)):
                w = wx * wy
                if w <= 0.0:
                    continue
                ci, cj = i + bx + di, j + by + dj
                if grid.periodic:
                    ci %= grid.shape[0]
                    cj %= grid.shape[1]
                elif not (0 <= ci < grid.shape[0] and 0 <= cj < grid.shape[1]):
                    ok = False
                    break
                if not adm[ci, cj]:
                    ok = False
                    break
                val += w * prev[ci, cj]
            if not ok:
                break
        if not ok:
            continue
        cand = dt * float(model.lagrangian(x / view.epsilon, v)) + val
        if cand < best:
            best = cand
            best_idx = s_idx
    return best, best_idx


def extract_optimal_path(
    field_in: ValueField, x: Sequence[float], t: float
) -> tuple[np.ndarray, float, str]:
    """Greedy backtracking of the stored argmins from (x, t).

    Returns (path points from exit to (x, t), exit time tau, exit kind
    "initial" or "boundary").  Foot points are continued from the heaviest
    interpolation corner, so consecutive points sit within m0 dt + h of each
    other.
    """
    if field_in.traceback is None:
        raise ValueError("field was solved without traceback enabled")
    grid = field_in.grid
    k = t / field_in.dt
    if abs(k - round(k)) > 1e-9:
        raise ValueError(f"time {t} is not a multiple of dt={field_in.dt}")
    k = int(round(k))
    i, j = grid.node_at(x)
    pos = grid.position(i, j)
    # accumulate unwrapped physical positions on periodic grids
    path = [np.array(pos)]
    while k > 0:
        code = int(field_in.traceback[k - 1][i, j])
        if code == TB_DIRICHLET:
            return np.array(path[::-1]), k * field_in.dt, "boundary"
        if code == TB_FROZEN:
            # frozen value: treat as resting at this node
            k -= 1
            path.append(np.array(path[-1]))
            continue
        v = field_in.stencil.vectors[code]
        s = (field_in.dt / grid.h) * v
        sx, sy = _snap(float(s[0])), _snap(float(s[1]))
        bx, fx = math.floor(-sx), _snap(-sx - math.floor(-sx))
        by, fy = math.floor(-sy), _snap(-sy - math.floor(-sy))
        corners = []
        for di, wx in ((0, 1.0 - fx), (1, fx)):
            for dj, wy in ((0, 1.0 - fy), (1, fy)):
                if wx * wy > 0.0:
                    corners.append((wx * wy, di, dj))
        corners.sort(key=lambda c: (-c[0], c[1], c[2]))
        _, di, dj = corners[0]
        step = np.array([(bx + di) * grid.h, (by + dj) * grid.h])
        ni, nj = i + bx + di, j + by + dj
        if grid.periodic:
            ni %= grid.shape[0]
            nj %= grid.shape[1]
        i, j = ni, nj
        path.append(path[-1] + step)
        k -= 1
    return np.array(path[::-1]), 0.0, "initial"
