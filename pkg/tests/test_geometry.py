import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from hjhomog.geometry import (
    Classification,
    DomainView,
    Hole,
    UnitCellGeometry,
    boundary_distance,
    boundary_distance_grid,
    classify_point,
    defect_density,
    project_to_boundary,
    s5_cell,
)


class TestClassify:
    def test_origin_is_interior(self, s5_view):
        # the origin is a cell corner, half a diagonal minus the radius away
        assert classify_point(s5_view, (0.0, 0.0), 1e-6) is Classification.INTERIOR

    def test_point_on_circle_is_boundary(self, s5_view):
        assert classify_point(s5_view, (0.5, 0.25), 1e-6) is Classification.BOUNDARY

    def test_hole_center_is_exterior(self, s5_view):
        assert classify_point(s5_view, (0.5, 0.5), 0.2) is Classification.EXTERIOR

    def test_tol_must_be_positive(self, s5_view):
        with pytest.raises(ValueError):
            classify_point(s5_view, (0.0, 0.0), 0.0)


class TestBoundaryDistance:
    def test_edge_midpoint(self, s5_view):
        assert boundary_distance(s5_view, (0.5, 0.0)) == pytest.approx(0.25)

    def test_hole_center(self, s5_view):
        assert boundary_distance(s5_view, (0.5, 0.5)) == pytest.approx(-0.25)

    def test_scaled_view(self, cell):
        view = DomainView(cell=cell, epsilon=0.5)
        assert boundary_distance(view, (0.25, 0.0)) == pytest.approx(0.125)

    def test_hole_free_is_infinite(self, free_cell):
        view = DomainView(cell=free_cell, epsilon=1.0)
        assert boundary_distance(view, (0.3, 0.4)) == math.inf

    def test_grid_matches_scalar(self, s5_view, rng):
        pts = rng.uniform(-2, 2, size=(64, 2))
        grid_vals = boundary_distance_grid(s5_view, pts)
        for p, v in zip(pts, grid_vals):
            assert v == pytest.approx(boundary_distance(s5_view, p), abs=1e-12)

    def test_grid_with_defects(self, cell):
        view = DomainView(cell=cell, epsilon=1.0, defects=frozenset({(0, 0)}))
        # the removed hole's center is now deep inside the domain
        assert boundary_distance(view, (0.5, 0.5)) == pytest.approx(0.75)
        pts = np.array([[0.5, 0.5], [1.5, 0.5]])
        vals = boundary_distance_grid(view, pts)
        assert vals[0] == pytest.approx(0.75)
        assert vals[1] == pytest.approx(-0.25)


class TestProjection:
    def test_radial_projection(self, s5_view):
        assert project_to_boundary(s5_view, (0.5, 0.0)) == pytest.approx([0.5, 0.25])

    def test_fixed_point_on_boundary(self, s5_view):
        p = project_to_boundary(s5_view, (0.5, 0.25))
        assert p == pytest.approx([0.5, 0.25])

    def test_center_uses_angle_tie_break(self, s5_view):
        p = project_to_boundary(s5_view, (0.5, 0.5))
        assert p == pytest.approx([0.75, 0.5])

    def test_projection_distance_matches(self, s5_view, rng):
        for p in rng.uniform(-1, 1, size=(32, 2)):
            xhat = project_to_boundary(s5_view, p)
            d = boundary_distance(s5_view, p)
            assert np.linalg.norm(xhat - p) == pytest.approx(abs(d), abs=1e-12)


class TestDefectDensity:
    def test_single_defect(self):
        assert defect_density([(0, 0)], 10) == pytest.approx(0.1)

    def test_empty(self):
        assert defect_density([], 7) == 0.0

    def test_line_of_defects(self):
        line = [(j, 0) for j in range(-5, 6)]
        assert defect_density(line, 5) == pytest.approx(11 / 5)

    def test_counting_is_clipped_to_the_box(self):
        assert defect_density([(9, 0), (11, 0)], 10) == pytest.approx(0.1)


class TestConstruction:
    def test_hole_must_fit_in_cell(self):
        with pytest.raises(ValueError, match="compactly contained"):
            UnitCellGeometry(holes=(Hole(center=(0.1, 0.5), radius=0.2),))

    def test_holes_must_be_separated(self):
        with pytest.raises(ValueError, match="separated"):
            UnitCellGeometry(
                holes=(
                    Hole(center=(0.3, 0.5), radius=0.1),
                    Hole(center=(0.5, 0.5), radius=0.1),
                )
            )

    def test_dimension_floor(self):
        with pytest.raises(ValueError, match="dim >= 2"):
            UnitCellGeometry(holes=(), dim=1)

    def test_bad_eta(self, cell):
        with pytest.raises(ValueError):
            DomainView(cell=cell, epsilon=1.0, eta=1.5)


# -- property tests ---------------------------------------------------------

coords = st.floats(-3.0, 3.0, allow_nan=False, allow_infinity=False)
lattice = st.integers(-3, 3)


@given(x=coords, y=coords, zx=lattice, zy=lattice)
@settings(max_examples=200, deadline=None)
def test_periodicity_of_classification(x, y, zx, zy):
    view = DomainView(cell=s5_cell(), epsilon=0.5)
    a = classify_point(view, (x, y), 0.01)
    b = classify_point(view, (x + 0.5 * zx, y + 0.5 * zy), 0.01)
    assert a is b


@given(x=coords, y=coords, eps=st.sampled_from([0.25, 0.5, 1.0, 2.0]))
@settings(max_examples=200, deadline=None)
def test_distance_scales_linearly(x, y, eps):
    base = DomainView(cell=s5_cell(), epsilon=1.0)
    view = DomainView(cell=s5_cell(), epsilon=eps)
    assert boundary_distance(view, (eps * x, eps * y)) == pytest.approx(
        eps * boundary_distance(base, (x, y)), rel=1e-12, abs=1e-12
    )


@given(x=coords, y=coords, tol=st.floats(1e-6, 0.2))
@settings(max_examples=200, deadline=None)
def test_boundary_iff_distance_within_tol(x, y, tol):
    view = DomainView(cell=s5_cell(), epsilon=1.0)
    cls = classify_point(view, (x, y), tol)
    d = boundary_distance(view, (x, y))
    assert (cls is Classification.BOUNDARY) == (abs(d) <= tol)


@given(x=coords, y=coords, eta_hi=st.floats(0.3, 1.0), shrink=st.floats(0.0, 1.0))
@settings(max_examples=200, deadline=None)
def test_dilution_never_evicts_interior_points(x, y, eta_hi, shrink):
    tol = 0.01
    wide = DomainView(cell=s5_cell(), epsilon=1.0, eta=eta_hi)
    thin = DomainView(cell=s5_cell(), epsilon=1.0, eta=eta_hi * shrink)
    if classify_point(wide, (x, y), tol) is Classification.INTERIOR:
        assert classify_point(thin, (x, y), tol) is not Classification.EXTERIOR
