"""Periodically perforated domains: unit-cell hole layouts, their scalings,
diluted and defective variants, and point queries against them.

Conventions.  The unit cell is [0, 1]^n and every hole is compactly
contained in its open cell; the classical centered-cell picture on
(-1/2, 1/2)^n is recovered by shifting coordinates by one half in each
axis.  The perforated set is

    Omega = R^n \\ union over z in Z^n of (holes + z),

and a view scales it by epsilon, optionally shrinks hole radii by a
dilution factor eta, and optionally removes the holes of a finite set of
lattice cells (defects).  All queries are pure functions of (view, point).
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from enum import Enum
from typing import Callable, Iterable, Sequence

import numpy as np

__all__ = [
    "Classification",
    "Hole",
    "UnitCellGeometry",
    "DomainView",
    "classify_point",
    "boundary_distance",
    "project_to_boundary",
    "defect_density",
]


class Classification(Enum):
    INTERIOR = "interior"
    BOUNDARY = "boundary"
    EXTERIOR = "exterior"


@dataclass(frozen=True)
class Hole:
    """A single obstacle inside the unit cell.

    Discs carry an analytic signed distance; a custom ``sdf`` hook
    (positive outside the hole) may replace it but is untested beyond
    smoke level.
    """

    center: tuple[float, ...]
    radius: float
    sdf: Callable[[np.ndarray], np.ndarray] | None = None

    def __post_init__(self) -> None:
        if self.radius <= 0.0:
            raise ValueError(f"hole radius must be positive, got {self.radius}")

    def signed_distance(self, y: np.ndarray) -> np.ndarray:
        """Distance to the hole boundary, positive outside the hole."""
        if self.sdf is not None:
            return self.sdf(y)
        d = y - np.asarray(self.center)
        return np.sqrt(np.sum(d * d, axis=-1)) - self.radius


@dataclass(frozen=True)
class UnitCellGeometry:
    """Hole layout of one period cell of a Z^n-periodic perforated domain."""

    holes: tuple[Hole, ...] = ()
    dim: int = 2
    separation_margin: float = 1e-9

    def __post_init__(self) -> None:
        if self.dim < 2:
            raise ValueError("perforated domains need dim >= 2 to stay connected")
        holes = tuple(self.holes)
        object.__setattr__(self, "holes", holes)
        for h in holes:
            if len(h.center) != self.dim:
                raise ValueError(f"hole center {h.center} has wrong dimension")
            for c in h.center:
                # compact containment in the open cell (0,1)^n
                if not (c - h.radius > 0.0 and c + h.radius < 1.0):
                    raise ValueError(
                        f"hole at {h.center} with radius {h.radius} is not "
                        "compactly contained in the open unit cell"
                    )
        for a, b in itertools.combinations(holes, 2):
            gap = math.dist(a.center, b.center) - (a.radius + b.radius)
            if gap <= self.separation_margin:
                raise ValueError(
                    f"holes at {a.center} and {b.center} are not separated"
                )

    @property
    def has_holes(self) -> bool:
        return len(self.holes) > 0

    def max_radius(self) -> float:
        return max((h.radius for h in self.holes), default=0.0)


@dataclass(frozen=True)
class DomainView:
    """A concrete perforated domain: epsilon-scaling of the cell geometry,
    dilution factor eta on hole radii, and an optional finite defect set of
    lattice cells whose holes are removed.

    eta = 1 and no defects gives the plain scaled domain; eta < 1 gives the
    diluted variant; a nonempty defect set gives the defective variant.
    """

    cell: UnitCellGeometry
    epsilon: float = 1.0
    eta: float = 1.0
    defects: frozenset[tuple[int, ...]] = field(default_factory=frozenset)

    def __post_init__(self) -> None:
        if self.epsilon <= 0.0:
            raise ValueError(f"epsilon must be positive, got {self.epsilon}")
        if not 0.0 <= self.eta <= 1.0:
            raise ValueError(f"eta must lie in [0, 1], got {self.eta}")
        object.__setattr__(self, "defects", frozenset(tuple(z) for z in self.defects))
        for z in self.defects:
            if len(z) != self.cell.dim:
                raise ValueError(f"defect index {z} has wrong dimension")

    @property
    def dim(self) -> int:
        return self.cell.dim

    @property
    def has_holes(self) -> bool:
        return self.cell.has_holes and self.eta > 0.0

    def hole_instances_near(
        self, y: np.ndarray, reach: int = 1
    ) -> list[tuple[tuple[int, ...], int, np.ndarray, float]]:
        """Hole instances (lattice index, hole index, center, radius) with
        centers within ``reach`` cells of the unit-cell point ``y``.

        Coordinates are unscaled (epsilon = 1); callers rescale.  Defective
        cells are skipped.  Holes are compactly contained in their cells, so
        reach = 1 suffices for nearest-instance queries away from defects.
        """
        out = []
        if not self.has_holes:
            return out
        offsets = list(itertools.product(range(-reach, reach + 1), repeat=self.dim))
        for off in offsets:
            for idx, hole in enumerate(self.cell.holes):
                base = np.floor(y - np.asarray(hole.center) + 0.5).astype(int)
                z = tuple(int(b) + o for b, o in zip(base, off))
                if z in self.defects:
                    continue
                center = np.asarray(hole.center) + np.asarray(z, dtype=float)
                out.append((z, idx, center, hole.radius * self.eta))
        return out


def _nearest_instance(view: DomainView, y: np.ndarray, max_reach: int = 64):
    """Nearest hole instance to the unscaled point ``y``.

    Returns (signed distance, lattice index, center, radius) or None when no
    instance exists within ``max_reach`` cells (hole-free views).  The search
    ring grows until the best candidate is certified nearest, which matters
    only for views with defects.  Equidistant ties break toward the lattice
    index of smallest norm, then lexicographically, then by hole index.
    """
    if not view.has_holes:
        return None
    best = None  # (distance, (|z|^2, z, hole idx), center, radius)
    reach = 1
    while reach <= max_reach:
        for z, idx, center, radius in view.hole_instances_near(y, reach=reach):
            d = float(np.linalg.norm(y - center)) - radius
            rank = (sum(c * c for c in z), z, idx)
            if best is None or d < best[0] - 1e-12 or (
                abs(d - best[0]) <= 1e-12 and rank < best[1]
            ):
                best = (d, rank, center, radius)
        if best is not None:
            # any instance beyond the ring is at least (reach - 1/2 - r) away
            certified = reach - 0.5 - view.cell.max_radius() * view.eta
            if best[0] <= certified:
                break
        reach *= 2
    if best is None:
        return None
    return best[0], best[1][1], best[2], best[3]


def boundary_distance(view: DomainView, x: Sequence[float]) -> float:
    """Signed distance from ``x`` to the boundary of the scaled perforated
    domain: positive inside the domain, negative inside a hole, zero on the
    hole boundaries.  Exact for disc holes.  Hole-free views return +inf.
    """
    x = np.asarray(x, dtype=float)
    y = x / view.epsilon
    hit = _nearest_instance(view, y)
    if hit is None:
        return math.inf
    return view.epsilon * hit[0]


def boundary_distance_grid(view: DomainView, pts: np.ndarray) -> np.ndarray:
    """Vectorized :func:`boundary_distance` for an (..., n) array of points.

    Defect-aware but restricted to the one-ring instance search, which is
    exact whenever the nearest existing hole is at most one cell away; grids
    fall back to the scalar query for points that find no instance.
    """
    pts = np.asarray(pts, dtype=float)
    if not view.has_holes:
        return np.full(pts.shape[:-1], np.inf)
    y = pts / view.epsilon
    best = np.full(pts.shape[:-1], np.inf)
    for hole in view.cell.holes:
        c = np.asarray(hole.center)
        base = np.floor(y - c + 0.5).astype(int)
        for off in itertools.product((-1, 0, 1), repeat=view.dim):
            z = base + np.asarray(off)
            center = c + z
            d = np.linalg.norm(y - center, axis=-1) - hole.radius * view.eta
            if view.defects:
                keys = [tuple(int(v) for v in row) for row in z.reshape(-1, view.dim)]
                ok = np.asarray([k not in view.defects for k in keys]).reshape(d.shape)
                d = np.where(ok, d, np.inf)
            best = np.minimum(best, d)
        if view.defects and not np.all(np.isfinite(best)):
            flat = best.reshape(-1)
            ypts = y.reshape(-1, view.dim)
            for i in np.nonzero(~np.isfinite(flat))[0]:
                hit = _nearest_instance(view, ypts[i])
                flat[i] = hit[0] if hit is not None else np.inf
    return view.epsilon * best


def classify_point(view: DomainView, x: Sequence[float], tol: float) -> Classification:
    """Classify ``x`` against the scaled domain: Boundary within ``tol`` of a
    hole boundary, Interior strictly inside the domain beyond ``tol``,
    Exterior otherwise (inside a hole).
    """
    if tol <= 0.0:
        raise ValueError(f"tol must be positive, got {tol}")
    d = boundary_distance(view, x)
    if abs(d) <= tol:
        return Classification.BOUNDARY
    return Classification.INTERIOR if d > tol else Classification.EXTERIOR


def project_to_boundary(view: DomainView, x: Sequence[float]) -> np.ndarray:
    """Nearest point of the scaled hole boundary.

    Radial projection onto the nearest hole circle; equidistant ties go to
    the lexicographically smallest hole lattice index, and a point sitting
    exactly on a hole center projects along the +x1 axis (smallest polar
    angle).
    """
    x = np.asarray(x, dtype=float)
    y = x / view.epsilon
    hit = _nearest_instance(view, y)
    if hit is None:
        raise ValueError("projection undefined: view has no holes")
    _, _, center, radius = hit
    d = y - center
    norm = float(np.linalg.norm(d))
    if norm < 1e-14:
        direction = np.zeros(view.dim)
        direction[0] = 1.0
    else:
        direction = d / norm
    return view.epsilon * (center + radius * direction)


def defect_density(defects: Iterable[tuple[int, ...]], k: int) -> float:
    """|I intersect [-k, k]^n| / k for a finite defect index set I."""
    if k <= 0:
        raise ValueError(f"k must be a positive integer, got {k}")
    count = sum(1 for z in set(map(tuple, defects)) if all(abs(c) <= k for c in z))
    return count / k


def s5_cell() -> UnitCellGeometry:
    """The reference two-dimensional cell: one disc hole of radius 1/4 at the
    cell center (1/2, 1/2)."""
    return UnitCellGeometry(holes=(Hole(center=(0.5, 0.5), radius=0.25),), dim=2)
