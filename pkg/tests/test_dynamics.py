import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from hjhomog.dynamics import (
    BoundaryData,
    LagrangianModel,
    boundary_trace,
    limit_trace,
    numeric_conjugate,
    potential_from_name,
    scalar_field_from_config,
    velocity_bound,
)
from hjhomog.geometry import DomainView


class TestLagrangian:
    def test_constant_potential_at_rest(self):
        m = LagrangianModel.mechanical(potential_from_name("constant", 1.0), lip_g=0.0)
        assert m.lagrangian(np.zeros(2), np.zeros(2)) == pytest.approx(1.0)

    def test_free_kinetic(self):
        m = LagrangianModel.mechanical(potential_from_name("zero"), lip_g=0.0)
        assert m.lagrangian(np.zeros(2), np.array([1.0, 0.0])) == pytest.approx(0.5)

    def test_closed_form_is_the_conjugate_of_h(self, bump_model, rng):
        # dense-grid brute-force conjugate of the sampled Hamiltonian
        axes = [np.arange(-8.0, 8.0 + 1e-9, 1e-2)] * 2
        mesh = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1)
        for _ in range(4):
            y = rng.uniform(0, 1, size=2)
            v = rng.uniform(-2, 2, size=2)
            hvals = bump_model.hamiltonian(np.broadcast_to(y, mesh.shape), mesh)
            brute = numeric_conjugate(axes, hvals, v, min_radius=4.0)
            assert brute == pytest.approx(
                float(bump_model.lagrangian(y, v)), abs=1e-3
            )


class TestNumericConjugate:
    def test_half_norm_squared_is_self_conjugate(self):
        axes = [np.linspace(-4, 4, 161)] * 2
        mesh = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1)
        vals = 0.5 * np.sum(mesh**2, axis=-1)
        assert numeric_conjugate(axes, vals, (1.0, 1.0), 2.0) == pytest.approx(
            1.0, abs=1e-3
        )

    def test_norm_conjugate_vanishes_inside_unit_ball(self):
        axes = [np.linspace(-4, 4, 161)] * 2
        mesh = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1)
        vals = np.sqrt(np.sum(mesh**2, axis=-1))
        assert numeric_conjugate(axes, vals, (0.5, 0.0), 2.0) == pytest.approx(
            0.0, abs=1e-12
        )

    def test_random_quadratics_match_closed_form(self, rng):
        for _ in range(10):
            d = rng.uniform(0.5, 2.0, size=2)  # diagonal positive definite
            a = rng.uniform(-1.0, 1.0, size=2)
            c = rng.uniform(-1.0, 1.0)
            axes = [np.arange(-6.0, 6.0 + 1e-9, 5e-3)] * 2
            mesh = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1)
            vals = 0.5 * np.sum(d * (mesh - a) ** 2, axis=-1) + c
            v = rng.uniform(-1.5, 1.5, size=2)
            exact = 0.5 * np.sum(v**2 / d) + float(a @ v) - c
            assert numeric_conjugate(axes, vals, v, 3.0) == pytest.approx(
                exact, abs=1e-3
            )

    def test_small_window_rejected(self):
        axes = [np.linspace(-1, 1, 21)] * 2
        vals = np.zeros((21, 21))
        with pytest.raises(ValueError, match="conjugate window too small"):
            numeric_conjugate(axes, vals, (0.0, 0.0), min_radius=2.0)


class TestVelocityBound:
    def test_reference_constants(self):
        m = LagrangianModel.mechanical(potential_from_name("constant", 1.0), lip_g=0.0)
        assert velocity_bound(m, 0.0) == pytest.approx(7.2)

    def test_zero_constants(self):
        m = LagrangianModel.mechanical(potential_from_name("zero"), lip_g=0.0)
        assert velocity_bound(m, 0.0) == pytest.approx(2.8)

    @given(
        lip1=st.floats(0.0, 5.0, allow_nan=False),
        bump=st.floats(0.0, 5.0, allow_nan=False),
    )
    @settings(max_examples=100, deadline=None)
    def test_monotone_in_lipschitz_constant(self, lip1, bump):
        m = LagrangianModel.mechanical(potential_from_name("constant", 1.0), lip_g=0.0)
        assert velocity_bound(m, lip1 + bump) >= velocity_bound(m, lip1)


class TestModelStructure:
    def test_truncation_sandwich_on_samples(self, bump_model, rng):
        n = 100_000
        y = rng.uniform(-2, 2, size=(n, 2))
        p = rng.uniform(-2 * bump_model.m0, 2 * bump_model.m0, size=(n, 2))
        hv = bump_model.hamiltonian(y, p)
        kin = 0.5 * np.sum(p**2, axis=-1)
        assert np.all(hv >= kin - bump_model.k0 - 1e-12)
        assert np.all(hv <= kin + bump_model.k0 + 1e-12)
        v = rng.uniform(-2 * bump_model.m0, 2 * bump_model.m0, size=(n, 2))
        lv = bump_model.lagrangian(y, v)
        kin = 0.5 * np.sum(v**2, axis=-1)
        assert np.all(lv >= kin - bump_model.k0 - 1e-12)
        assert np.all(lv <= kin + bump_model.k0 + 1e-12)

    def test_momentum_convexity_midpoint(self, bump_model, rng):
        y = rng.uniform(0, 1, size=(500, 2))
        p1 = rng.uniform(-8, 8, size=(500, 2))
        p2 = rng.uniform(-8, 8, size=(500, 2))
        mid = bump_model.hamiltonian(y, 0.5 * (p1 + p2))
        avg = 0.5 * (bump_model.hamiltonian(y, p1) + bump_model.hamiltonian(y, p2))
        assert np.all(mid <= avg + 1e-10)

    def test_periodicity_in_the_fast_variable(self, bump_model, rng):
        y = rng.uniform(0, 1, size=(200, 2))
        p = rng.uniform(-3, 3, size=(200, 2))
        z = rng.integers(-3, 4, size=(200, 2)).astype(float)
        np.testing.assert_allclose(
            bump_model.hamiltonian(y, p), bump_model.hamiltonian(y + z, p), atol=1e-12
        )

    def test_resting_normalization_of_the_free_model(self, zero_model, rng):
        assert zero_model.satisfies_a7
        y = rng.uniform(-2, 2, size=(1000, 2))
        v = rng.uniform(-6, 6, size=(1000, 2))
        assert np.all(zero_model.lagrangian(y, v) >= -1e-15)
        at_rest = zero_model.lagrangian(y, np.zeros_like(y))
        np.testing.assert_allclose(at_rest, 0.0, atol=1e-15)

    def test_bump_model_is_not_strictly_normalized(self, bump_model):
        assert not bump_model.satisfies_a7

    def test_shifted_model_breaks_resting_momentum(self):
        m = LagrangianModel.shifted((0.3, 0.0), lip_g=0.0)
        assert not m.satisfies_a7
        # moving against the drift is cheaper than resting
        assert m.lagrangian(np.zeros(2), np.array([-0.3, 0.0])) < 0.0

    def test_shifted_model_rejects_large_drift(self):
        with pytest.raises(ValueError, match="q0"):
            LagrangianModel.shifted((0.6, 0.0), lip_g=0.0)


class TestBoundaryData:
    def test_compatibility_violation_rejected(self):
        with pytest.raises(ValueError, match="exceeds"):
            BoundaryData(
                g=scalar_field_from_config("const", 5.0),
                b=scalar_field_from_config("const", 1.0),
            )

    def test_trace_values_for_pinned_data(self, cell, s5_data):
        view = DomainView(cell=cell, epsilon=1.0)
        assert boundary_trace(s5_data, view, (0.3, 0.3), 0.0, 1e-6) == 0.0
        assert boundary_trace(s5_data, view, (0.5, 0.25), 0.5, 1e-6) == 1.0

    def test_trace_rejected_off_the_parabolic_boundary(self, cell, s5_data):
        view = DomainView(cell=cell, epsilon=1.0)
        with pytest.raises(ValueError, match="trace undefined here"):
            boundary_trace(s5_data, view, (0.0, 0.0), 0.5, 1e-6)
        with pytest.raises(ValueError, match="trace undefined here"):
            boundary_trace(s5_data, view, (0.5, 0.5), 0.0, 1e-6)

    def test_limit_trace_is_time_monotone(self, cell, s5_data):
        # g <= bbar makes the homogenized trace nondecreasing in time
        for x in [(0.0, 0.0), (1.3, -0.4)]:
            vals = [limit_trace(s5_data, cell, x, t) for t in (0.0, 0.5, 1.0)]
            assert vals[0] <= vals[1] <= vals[2]

    def test_bbar_of_sinusoidal_datum(self, cell):
        data = BoundaryData(
            g=scalar_field_from_config("const", 0.0),
            b=scalar_field_from_config(
                "expr", expr_text="2 + sin(2*pi*x1)", lip=2 * math.pi, periodic_slot=True
            ),
            boundary_samples=2048,
        )
        val = float(data.bbar(cell, np.zeros(2)))
        assert 1.0 <= val <= 3.0
        # circle reaches y1 = 0.75 where the sine attains its minimum
        assert val == pytest.approx(1.0, abs=1e-4)

    def test_bbar_refinement_is_consistent(self, cell):
        lip = 2 * math.pi
        data = BoundaryData(
            g=scalar_field_from_config("const", 0.0),
            b=scalar_field_from_config(
                "expr", expr_text="2 + sin(2*pi*x1)", lip=lip, periodic_slot=True
            ),
        )
        coarse = float(data.bbar(cell, np.zeros(2), samples=128))
        fine = float(data.bbar(cell, np.zeros(2), samples=1280))
        spacing = 2 * math.pi * 0.25 / 128
        assert abs(coarse - fine) <= lip * spacing
