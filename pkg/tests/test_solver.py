import math

import numpy as np
import pytest

from hjhomog.dynamics import (
    BoundaryData,
    LagrangianModel,
    potential_from_name,
    scalar_field_from_config,
)
from hjhomog.geometry import DomainView
from hjhomog.hj_solver import (
    TB_DIRICHLET,
    Grid,
    Stencil,
    extract_optimal_path,
    resolve_from_slice,
    solve_dirichlet,
    solve_state_constraint,
    step_update,
)


@pytest.fixture(scope="module")
def s5_tile(cell, bump_model, s5_data):
    eps = 0.25
    view = DomainView(cell=cell, epsilon=eps)
    grid = Grid.build(view, ((0.0, eps), (0.0, eps)), eps / 8, periodic=True)
    field = solve_dirichlet(view, bump_model, s5_data, grid, horizon=1.0)
    return view, grid, field


def exact_cone_value(x, t):
    r = float(np.linalg.norm(x))
    ys = np.linspace(0.0, r + 3.0, 4001)
    return float(np.min((r - ys) ** 2 / (2 * t) + np.minimum(ys, 1.0)))


class TestBasicSolves:
    def test_zero_data_zero_potential_gives_zero(self, cell, zero_model, s5_data):
        view = DomainView(cell=cell, epsilon=0.25)
        grid = Grid.build(view, ((0.0, 0.25), (0.0, 0.25)), 1 / 32, periodic=True)
        field = solve_dirichlet(view, zero_model, s5_data, grid, horizon=0.5)
        vals = field.values[-1][grid.admissible]
        np.testing.assert_allclose(vals, 0.0, atol=1e-15)

    def test_hole_free_matches_classical_hopf_lax(self, free_cell):
        model = LagrangianModel.mechanical(potential_from_name("zero"), lip_g=1.0, m0=4.0)
        data = BoundaryData(
            g=scalar_field_from_config("cone"),
            b=scalar_field_from_config("const", 10.0),
        )
        view = DomainView(cell=free_cell, epsilon=1.0)
        h, t_end = 1 / 32, 0.25
        half = math.ceil((1.0 + model.m0 * t_end + 2 * h) / h) * h
        grid = Grid.build(view, ((-half, half), (-half, half)), h, periodic=False)
        field = solve_dirichlet(view, model, data, grid, t_end)
        # compare on the uncontaminated core
        i0, j0 = grid.node_at((0.0, 0.0))
        assert field.values[-1][i0, j0] == pytest.approx(0.0, abs=1e-12)
        worst = 0.0
        for x in np.linspace(-0.75, 0.75, 7):
            for y in np.linspace(-0.75, 0.75, 7):
                i, j = grid.node_at((x, y))
                worst = max(
                    worst,
                    abs(field.values[-1][i, j] - exact_cone_value((x, y), t_end)),
                )
        assert worst <= 4 * (h + h / model.m0) + 1e-3

    def test_s5_floor_at_the_origin(self, s5_tile):
        view, grid, field = s5_tile
        u = field.value_at((0.0, 0.0), 1.0)
        assert u >= view.epsilon / 8

    def test_values_finite_on_admissible_nodes_only(self, s5_tile):
        _, grid, field = s5_tile
        assert np.all(np.isfinite(field.values[-1][grid.admissible]))
        assert np.all(np.isinf(field.values[-1][~grid.admissible]))


class TestSchemeProperties:
    def test_vectorized_sweep_matches_scalar_reference(self, cell, bump_model, s5_data, rng):
        eps = 0.25
        view = DomainView(cell=cell, epsilon=eps)
        grid = Grid.build(view, ((0.0, eps), (0.0, eps)), eps / 8, periodic=True)
        field = solve_dirichlet(view, bump_model, s5_data, grid, horizon=2 * field_dt(grid, bump_model))
        stencil = field.stencil
        prev = np.where(grid.admissible, rng.uniform(0, 1, grid.shape), np.inf)
        # one vectorized sweep via the solver internals
        from hjhomog.hj_solver import _build_plans, _sweep

        pts = grid.points() / view.epsilon
        plans, site = _build_plans(grid, stencil, field.dt, bump_model, pts)
        best, _ = _sweep(grid, prev, plans, site, False)
        for i in range(grid.shape[0]):
            for j in range(grid.shape[1]):
                if not grid.admissible[i, j]:
                    continue
                ref, _ = step_update(grid, bump_model, view, prev, (i, j), stencil, field.dt)
                assert best[i, j] == pytest.approx(ref, rel=1e-12, abs=1e-12)

    def test_monotonicity_of_the_update(self, cell, bump_model, s5_data, rng):
        eps = 0.25
        view = DomainView(cell=cell, epsilon=eps)
        grid = Grid.build(view, ((0.0, eps), (0.0, eps)), eps / 8, periodic=True)
        dt = field_dt(grid, bump_model)
        stencil = Stencil.polar(bump_model.m0)
        lo = np.where(grid.admissible, rng.uniform(0, 1, grid.shape), np.inf)
        hi = lo + np.where(grid.admissible, rng.uniform(0, 0.5, grid.shape), 0.0)
        for node in [(0, 0), (1, 3), (5, 5), (2, 7)]:
            if not grid.admissible[node]:
                continue
            v_lo, _ = step_update(grid, bump_model, view, lo, node, stencil, dt)
            v_hi, _ = step_update(grid, bump_model, view, hi, node, stencil, dt)
            assert v_lo <= v_hi + 1e-14

    def test_constant_field_is_preserved_at_rest_cost(self, cell, zero_model, s5_data):
        # prev == c and L(., 0) = 0 reproduce c
        eps = 0.25
        view = DomainView(cell=cell, epsilon=eps)
        grid = Grid.build(view, ((0.0, eps), (0.0, eps)), eps / 8, periodic=True)
        dt = field_dt(grid, zero_model)
        stencil = Stencil.polar(zero_model.m0)
        prev = np.where(grid.admissible, 0.37, np.inf)
        for node in [(0, 0), (3, 1)]:
            val, idx = step_update(grid, zero_model, view, prev, node, stencil, dt)
            assert val == pytest.approx(0.37, abs=1e-14)
            assert idx == 0  # the resting candidate wins ties

    def test_two_node_update_equals_hand_enumeration(self, free_cell):
        # two admissible nodes on a line; enumerate the stencil by hand
        model = LagrangianModel.mechanical(potential_from_name("constant", 0.3), lip_g=0.0, m0=2.0)
        view = DomainView(cell=free_cell, epsilon=1.0)
        h = 0.5
        grid = Grid.build(view, ((0.0, 0.5), (0.0, 0.5)), h, periodic=False)
        assert grid.shape == (2, 2)
        dt = h / model.m0
        stencil = Stencil.polar(model.m0, n_dirs=4, n_radii=2)
        prev = np.array([[0.0, 0.2], [0.5, 0.1]])
        got, got_idx = step_update(grid, model, view, prev, (0, 0), stencil, dt)
        best, best_idx = math.inf, None
        for s_idx, v in enumerate(stencil.vectors):
            foot = np.array([0.0, 0.0]) - dt * v
            fx, fy = foot / h
            if fx < -1e-12 or fy < -1e-12 or fx > 1 + 1e-12 or fy > 1 + 1e-12:
                continue
            fx, fy = min(max(fx, 0.0), 1.0), min(max(fy, 0.0), 1.0)
            interp = (
                (1 - fx) * (1 - fy) * prev[0, 0]
                + fx * (1 - fy) * prev[1, 0]
                + (1 - fx) * fy * prev[0, 1]
                + fx * fy * prev[1, 1]
            )
            cand = dt * (0.5 * float(v @ v) + 0.3) + interp
            if cand < best - 1e-15:
                best, best_idx = cand, s_idx
        assert got == pytest.approx(best, abs=1e-12)
        assert got_idx == best_idx

    def test_comparison_sandwich(self, s5_tile, bump_model, s5_data):
        view, grid, field = s5_tile
        pts = grid.points()
        g = s5_data.g_at(pts)
        c_upper = bump_model.c1
        c_lower = bump_model.k0  # L >= -K0 bounds the downward drift
        adm = grid.admissible
        for k in range(field.n_steps + 1):
            t = k * field.dt
            sl = field.values[k]
            assert np.all(sl[adm] <= g[adm] + c_upper * t + 1e-12)
            assert np.all(sl[adm] >= g[adm] - c_lower * t - 1e-12)

    def test_dirichlet_below_state_constraint_and_datum(self, cell, bump_model, s5_data):
        eps = 0.25
        view = DomainView(cell=cell, epsilon=eps)
        grid = Grid.build(view, ((0.0, eps), (0.0, eps)), eps / 8, periodic=True)
        fd = solve_dirichlet(view, bump_model, s5_data, grid, horizon=0.5)
        fs = solve_state_constraint(view, bump_model, s5_data, grid, horizon=0.5)
        adm = grid.admissible
        assert np.all(fd.values[-1][adm] <= fs.values[-1][adm] + 1e-14)
        bnd = grid.boundary_mask
        assert np.all(fd.values[-1][bnd] <= 1.0 + 1e-14)

    def test_time_lipschitz(self, s5_tile, bump_model):
        _, grid, field = s5_tile
        adm = grid.admissible
        c0 = bump_model.c0
        for k in range(field.n_steps):
            diff = np.abs(field.values[k + 1][adm] - field.values[k][adm])
            assert np.max(diff) <= (c0 + 1.0) * field.dt

    def test_restart_reproduces_slices_bit_exactly(self, s5_tile, bump_model, s5_data):
        view, grid, field = s5_tile
        s = 0.5
        again = resolve_from_slice(bump_model, s5_data, field, s)
        k0 = int(round(s / field.dt))
        for k in range(k0, field.n_steps + 1):
            a = field.values[k][grid.admissible]
            b = again.values[k - k0][grid.admissible]
            assert np.array_equal(a, b)


class TestPathExtraction:
    def test_zero_potential_paths_exit_at_the_initial_time(self, cell, zero_model, s5_data):
        eps = 0.25
        view = DomainView(cell=cell, epsilon=eps)
        grid = Grid.build(view, ((0.0, eps), (0.0, eps)), 1 / 32, periodic=True)
        field = solve_dirichlet(view, zero_model, s5_data, grid, horizon=0.5)
        path, tau, kind = extract_optimal_path(field, (0.0, 0.0), 0.5)
        assert kind == "initial"
        assert tau == 0.0

    def test_path_velocities_within_reach(self, s5_tile, bump_model):
        _, grid, field = s5_tile
        path, _, _ = extract_optimal_path(field, (0.0, 0.0), 1.0)
        steps = np.diff(path, axis=0)
        reach = bump_model.m0 * field.dt + grid.h
        assert np.all(np.linalg.norm(steps, axis=1) <= reach + 1e-12)

    def test_traceback_required(self, cell, bump_model, s5_data):
        eps = 0.25
        view = DomainView(cell=cell, epsilon=eps)
        grid = Grid.build(view, ((0.0, eps), (0.0, eps)), eps / 8, periodic=True)
        field = solve_dirichlet(
            view, bump_model, s5_data, grid, horizon=0.25, store_traceback=False
        )
        with pytest.raises(ValueError, match="without traceback"):
            extract_optimal_path(field, (0.0, 0.0), 0.25)

    def test_boundary_exit_detected_when_waiting_is_costly(self, cell):
        # V == 1 makes every unit of elapsed time cost 1, so exiting at the
        # hole boundary for 0.3 beats any path that starts at time 0
        model = LagrangianModel.mechanical(
            potential_from_name("constant", 1.0), lip_g=0.0, m0=4.0
        )
        data = BoundaryData(
            g=scalar_field_from_config("const", 0.0),
            b=scalar_field_from_config("const", 0.3),
        )
        eps = 0.25
        view = DomainView(cell=cell, epsilon=eps)
        grid = Grid.build(view, ((0.0, eps), (0.0, eps)), eps / 8, periodic=True)
        field = solve_dirichlet(view, model, data, grid, horizon=1.0)
        path, tau, kind = extract_optimal_path(field, (0.0, 0.0), 1.0)
        assert kind == "boundary"
        assert tau > 0.0
        assert field.value_at((0.0, 0.0), 1.0) < 1.0


class TestValidation:
    def test_window_must_be_commensurate(self, s5_view):
        with pytest.raises(ValueError, match="integer multiple"):
            Grid.build(s5_view, ((0.0, 0.3), (0.0, 0.3)), 0.25, periodic=False)

    def test_horizon_must_be_step_aligned(self, cell, bump_model, s5_data):
        eps = 0.25
        view = DomainView(cell=cell, epsilon=eps)
        grid = Grid.build(view, ((0.0, eps), (0.0, eps)), eps / 8, periodic=True)
        with pytest.raises(ValueError, match="multiple of dt"):
            solve_dirichlet(view, bump_model, s5_data, grid, horizon=0.1234567)

    def test_compatibility_checked_on_the_grid(self, cell, bump_model):
        data = BoundaryData(
            g=scalar_field_from_config("cone"),
            b=scalar_field_from_config("const", 0.5),
        )
        view = DomainView(cell=cell, epsilon=0.25)
        half = 2.0
        grid = Grid.build(view, ((-half, half), (-half, half)), 1 / 16, periodic=False)
        with pytest.raises(ValueError, match="A5"):
            solve_dirichlet(view, bump_model, data, grid, horizon=0.25)

    def test_disconnected_grid_rejected(self, cell):
        # hole diameter comparable to the tile chokes the wrap connections
        from hjhomog.geometry import Hole, UnitCellGeometry

        big = UnitCellGeometry(holes=(Hole(center=(0.5, 0.5), radius=0.49),))
        view = DomainView(cell=big, epsilon=1.0)
        with pytest.raises(ValueError, match="disconnected"):
            Grid.build(view, ((0.0, 1.0), (0.0, 1.0)), 1 / 8, periodic=True)


def field_dt(grid: Grid, model) -> float:
    return grid.h / model.m0
