"""Hamiltonian/Lagrangian models and the problem data functions.

The working model family is the mechanical one,

    H(y, p) = |p|^2 / 2 - V(y),      L(y, v) = |v|^2 / 2 + V(y),

with a 1-periodic potential 0 <= V <= vmax, for which the quadratic
sandwich constants are exact: K0 = vmax and H >= -C1 with C1 = vmax.
A momentum-shifted variant H(y, p) = |p - q0|^2 / 2 exercises the
non-resting case (its minimizing momentum is q0, not 0).  Generic
Hamiltonians with unknown Lagrangians are handled through the numeric
conjugate on a momentum grid.

Truncation: evaluators replace H outside |p| <= 2 C0 + 1 by

    |p|^2/2 + clamp(H(y, R p/|p|) - R^2/2, -K0, K0),    R = 2 C0 + 1,

which keeps continuity and convexity and enforces the sandwich by
construction; for the mechanical family this is the identity.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from hjhomog.expressions import Expression, parse_expression, screen_intervals, smoothstep
from hjhomog.geometry import DomainView, UnitCellGeometry, classify_point, project_to_boundary

__all__ = [
    "Potential",
    "potential_from_name",
    "LagrangianModel",
    "BoundaryData",
    "ScalarField",
    "scalar_field_from_config",
    "velocity_bound",
    "numeric_conjugate",
    "boundary_trace",
    "limit_trace",
    "bump_profile",
]


def bump_profile(d):
    """Radial profile of the reference potential bump: 1 up to 1/8, 0 from
    1/4 on, clamped-cubic in between."""
    return 1.0 - smoothstep(0.125, 0.25, d)


def _lattice_distance(y: np.ndarray) -> np.ndarray:
    """Distance from y to the nearest integer lattice point."""
    frac = y - np.round(y)
    return np.sqrt(np.sum(frac * frac, axis=-1))


@dataclass(frozen=True)
class Potential:
    """A 1-periodic potential with recorded range [0, vmax]."""

    name: str
    fn: Callable[[np.ndarray], np.ndarray]
    vmax: float
    params: tuple[tuple[str, float | str], ...] = ()

    def __call__(self, y: np.ndarray) -> np.ndarray:
        return self.fn(np.asarray(y, dtype=float))

    def key(self) -> str:
        parts = [self.name, f"vmax={self.vmax!r}"]
        parts += [f"{k}={v!r}" for k, v in self.params]
        return ";".join(parts)


def potential_from_name(
    name: str, value: float = 1.0, expr_text: str | None = None
) -> Potential:
    """Catalog lookup: ``zero``, ``constant`` (level = value), ``bump``
    (the corner-anchored reference bump scaled by value), ``trig``
    (value/2 * (1 - cos(2 pi y1) cos(2 pi y2)) in 2D), or ``expr`` with a
    1-periodic expression in x1, x2 screened over the unit box."""
    if name == "zero":
        return Potential("zero", lambda y: np.zeros(y.shape[:-1]), 0.0)
    if name == "constant":
        return Potential(
            "constant",
            lambda y, c=value: np.full(y.shape[:-1], c),
            value,
            params=(("value", value),),
        )
    if name == "bump":
        return Potential(
            "bump",
            lambda y, a=value: a * bump_profile(_lattice_distance(y)),
            value,
            params=(("value", value),),
        )
    if name == "trig":

        def trig(y, a=value):
            return 0.5 * a * (1.0 - np.cos(2 * np.pi * y[..., 0]) * np.cos(2 * np.pi * y[..., 1]))

        return Potential("trig", trig, value, params=(("value", value),))
    if name == "expr":
        if not expr_text:
            raise ValueError("potential 'expr' needs an expression string")
        expr = parse_expression(expr_text)
        lo, hi = screen_intervals(expr, {"x1": (0.0, 1.0), "x2": (0.0, 1.0), "t": (0.0, 0.0)})
        if lo < 0.0:
            raise ValueError(f"potential expression may be negative on the cell (min {lo})")

        def from_expr(y, e=expr):
            # evaluate on the fundamental cell so the screen box applies
            yy = np.mod(y, 1.0)
            return np.asarray(e(x1=yy[..., 0], x2=yy[..., 1], t=0.0))

        return Potential("expr", from_expr, hi, params=(("expr", expr_text),))
    raise ValueError(f"unknown potential {name!r}")


@dataclass(frozen=True)
class LagrangianModel:
    """Evaluators for H(y, p) and L(y, v) with the recorded constants.

    ``k0`` is the sandwich constant, ``c1`` the lower bound H >= -c1,
    ``c0`` the gradient bound of the value function, ``m0`` the velocity
    search radius.  ``satisfies_a7`` records the resting-momentum
    normalization min_p H(y, p) = H(y, 0) = 0 for every y, which for the
    mechanical family means V identically zero.
    """

    kind: str  # "mechanical" | "shifted"
    potential: Potential | None
    k0: float
    c1: float
    c0: float
    m0: float
    lip_g: float
    satisfies_a7: bool
    shift: tuple[float, ...] = ()

    @staticmethod
    def mechanical(potential: Potential, lip_g: float, m0: float | None = None) -> "LagrangianModel":
        k0 = potential.vmax
        c1 = potential.vmax
        c0 = lip_g + c1 + k0 + 1.0
        m_default = velocity_bound_from_constants(k0, c0)
        return LagrangianModel(
            kind="mechanical",
            potential=potential,
            k0=k0,
            c1=c1,
            c0=c0,
            m0=float(m0) if m0 is not None else m_default,
            lip_g=lip_g,
            satisfies_a7=potential.vmax == 0.0,
        )

    @staticmethod
    def shifted(q0: Sequence[float], lip_g: float, m0: float | None = None) -> "LagrangianModel":
        """H(y, p) = |p - q0|^2 / 2; breaks the resting-momentum property
        whenever q0 != 0."""
        q0 = tuple(float(c) for c in q0)
        q = float(np.linalg.norm(q0))
        if q >= 0.5:
            raise ValueError("shifted model needs |q0| < 1/2 for a finite sandwich")
        # |H - |p|^2/2| <= R|q0| + |q0|^2/2 inside the truncation radius
        # R = 2 c0 + 1 with c0 = lip_g + c1 + k0 + 1; solving the fixed point
        # for k0 gives the closed form below.
        c1 = 0.0
        k0 = ((2.0 * lip_g + 2.0 * c1 + 3.0) * q + q * q / 2.0) / (1.0 - 2.0 * q)
        c0 = lip_g + c1 + k0 + 1.0
        m_default = velocity_bound_from_constants(k0, c0)
        return LagrangianModel(
            kind="shifted",
            potential=None,
            k0=k0,
            c1=c1,
            c0=c0,
            m0=float(m0) if m0 is not None else m_default,
            lip_g=lip_g,
            satisfies_a7=q == 0.0,
            shift=q0,
        )

    # -- evaluators ---------------------------------------------------------

    def _raw_hamiltonian(self, y: np.ndarray, p: np.ndarray) -> np.ndarray:
        if self.kind == "mechanical":
            kin = 0.5 * np.sum(np.asarray(p) ** 2, axis=-1)
            return kin - self.potential(y)
        d = np.asarray(p) - np.asarray(self.shift)
        return 0.5 * np.sum(d * d, axis=-1)

    def hamiltonian(self, y, p) -> np.ndarray:
        """Truncated Hamiltonian; identical to the raw one for |p| <= 2 c0 + 1."""
        y = np.asarray(y, dtype=float)
        p = np.asarray(p, dtype=float)
        r = 2.0 * self.c0 + 1.0
        norm = np.sqrt(np.sum(p * p, axis=-1))
        inside = norm <= r
        h_in = self._raw_hamiltonian(y, p)
        if np.all(inside):
            return h_in
        scale = np.where(norm > 0, r / np.maximum(norm, 1e-300), 1.0)
        p_edge = p * scale[..., None]
        shift = np.clip(
            self._raw_hamiltonian(y, p_edge) - 0.5 * r * r, -self.k0, self.k0
        )
        h_out = 0.5 * norm * norm + shift
        return np.where(inside, h_in, h_out)

    def lagrangian(self, y, v) -> np.ndarray:
        """Closed-form Legendre transform of the truncated Hamiltonian on the
        velocity range |v| <= 2 c0 + 1 used by the schemes."""
        y = np.asarray(y, dtype=float)
        v = np.asarray(v, dtype=float)
        if self.kind == "mechanical":
            return 0.5 * np.sum(v * v, axis=-1) + self.potential(y)
        kin = 0.5 * np.sum(v * v, axis=-1)
        drift = np.tensordot(v, np.asarray(self.shift), axes=([-1], [0]))
        return kin + drift

    def kinetic_potential_split(self):
        """(kinetic(v), site_cost(y)) with L(y, v) = kinetic(v) + site_cost(y),
        or None when the model does not split this way."""
        if self.kind == "mechanical":
            return (
                lambda v: 0.5 * np.sum(np.asarray(v) ** 2, axis=-1),
                lambda y: self.potential(y),
            )
        if self.kind == "shifted":
            return (
                lambda v: 0.5 * np.sum(np.asarray(v) ** 2, axis=-1)
                + np.tensordot(np.asarray(v), np.asarray(self.shift), axes=([-1], [0])),
                lambda y: np.zeros(np.asarray(y).shape[:-1]),
            )
        return None

    def key(self) -> str:
        parts = [self.kind, f"k0={self.k0!r}", f"c0={self.c0!r}", f"m0={self.m0!r}"]
        if self.potential is not None:
            parts.append(self.potential.key())
        if self.shift:
            parts.append(f"shift={self.shift!r}")
        return "|".join(parts)


def velocity_bound_from_constants(k0: float, c0: float) -> float:
    """Smallest M with M^2/2 - k0 <= c0 + c0 M, rounded up to one decimal."""
    m = c0 + math.sqrt(c0 * c0 + 2.0 * (c0 + k0))
    return math.ceil(m * 10.0 - 1e-12) / 10.0


def velocity_bound(model: LagrangianModel, lip_g: float) -> float:
    """Uniform speed bound for optimal trajectories: the positive root of
    M^2/2 - K0 = C0 + C0 M with C0 = lip_g + C1 + K0 + 1, rounded up to one
    decimal."""
    if lip_g < 0:
        raise ValueError("lip_g must be nonnegative")
    c0 = lip_g + model.c1 + model.k0 + 1.0
    return velocity_bound_from_constants(model.k0, c0)


def numeric_conjugate(
    axes: Sequence[np.ndarray],
    values: np.ndarray,
    target: Sequence[float],
    min_radius: float,
) -> float:
    """max over grid nodes p of (p . target - values(p)) on a centered
    rectangular grid given by per-axis coordinates.

    Rejects grids whose radius (smallest axis half-width) is below
    ``min_radius``.  Argmax ties break lexicographically by grid index.
    """
    axes = [np.asarray(a, dtype=float) for a in axes]
    radius = min(min(-a[0], a[-1]) for a in axes)
    if radius < min_radius - 1e-12:
        raise ValueError(
            f"conjugate window too small: radius {radius} < required {min_radius}"
        )
    mesh = np.meshgrid(*axes, indexing="ij")
    dot = sum(m * t for m, t in zip(mesh, target))
    score = dot - np.asarray(values)
    # np.argmax returns the first maximizer in C order = lexicographic index
    return float(score.flat[np.argmax(score)])


# ---------------------------------------------------------------------------
# Problem data
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ScalarField:
    """A scalar function of x (and optionally the periodic slot y for b)."""

    name: str
    fn: Callable[..., np.ndarray]
    lip: float
    const: float | None = None
    params: tuple[tuple[str, float | str], ...] = ()

    def __call__(self, *args) -> np.ndarray:
        return self.fn(*args)

    def key(self) -> str:
        parts = [self.name, f"lip={self.lip!r}"]
        if self.const is not None:
            parts.append(f"const={self.const!r}")
        parts += [f"{k}={v!r}" for k, v in self.params]
        return ";".join(parts)


def scalar_field_from_config(
    name: str,
    value: float = 0.0,
    expr_text: str | None = None,
    lip: float | None = None,
    domain_box: float = 64.0,
    periodic_slot: bool = False,
) -> ScalarField:
    """Build g (fn of x) or b (fn of (x, y)) from a catalog name.

    Catalog: ``const``; ``cone`` = min(|x|, 1); ``cosine`` = value/4 *
    (1 - cos(2 pi x1))(1 - cos(2 pi x2)); ``expr`` with variables x1, x2
    (evaluated on x; the periodic slot of b is reached by writing the
    expression in x1, x2 as the unit-cell coordinate).
    """
    if name == "const":

        def fconst(x, *rest, c=value):
            x = np.asarray(x, dtype=float)
            return np.full(x.shape[:-1], c)

        return ScalarField("const", fconst, 0.0, const=value, params=(("value", value),))
    if name == "cone":

        def fcone(x, *rest):
            x = np.asarray(x, dtype=float)
            return np.minimum(np.sqrt(np.sum(x * x, axis=-1)), 1.0)

        return ScalarField("cone", fcone, 1.0)
    if name == "cosine":

        def fcos(x, *rest, a=value):
            x = np.asarray(x, dtype=float)
            return (
                0.25
                * a
                * (1.0 - np.cos(2 * np.pi * x[..., 0]))
                * (1.0 - np.cos(2 * np.pi * x[..., 1]))
            )

        return ScalarField("cosine", fcos, abs(value) * np.pi, params=(("value", value),))
    if name == "expr":
        if not expr_text:
            raise ValueError("field 'expr' needs an expression string")
        expr = parse_expression(expr_text)
        box = {"x1": (-domain_box, domain_box), "x2": (-domain_box, domain_box), "t": (0.0, 0.0)}
        screen_intervals(expr, box)
        if lip is None:
            raise ValueError("expression-defined fields must record a Lipschitz constant")

        if periodic_slot:

            def fexpr(x, y, e=expr):
                y = np.asarray(y, dtype=float)
                return np.asarray(e(x1=y[..., 0], x2=y[..., 1], t=0.0))

        else:

            def fexpr(x, *rest, e=expr):
                x = np.asarray(x, dtype=float)
                return np.asarray(e(x1=x[..., 0], x2=x[..., 1], t=0.0))

        return ScalarField("expr", fexpr, lip, params=(("expr", expr_text),))
    raise ValueError(f"unknown data field {name!r}")


@dataclass(frozen=True)
class BoundaryData:
    """Initial datum g and Dirichlet datum b(x, y), with b periodic in the
    second slot, plus the derived floor bbar(x) = min over the unscaled hole
    boundary of b(x, .)."""

    g: ScalarField
    b: ScalarField
    boundary_samples: int = 2048

    def __post_init__(self) -> None:
        if self.b.const is not None and self.g.const is not None:
            if self.g.const > self.b.const:
                raise ValueError("initial datum exceeds boundary datum (A5 fails)")

    @property
    def lip_g(self) -> float:
        return self.g.lip

    @property
    def lip_b(self) -> float:
        return self.b.lip

    def g_at(self, x) -> np.ndarray:
        return self.g(np.asarray(x, dtype=float))

    def b_at(self, x, y) -> np.ndarray:
        if self.b.const is not None:
            x = np.asarray(x, dtype=float)
            return np.full(x.shape[:-1], self.b.const)
        return self.b(np.asarray(x, dtype=float), np.asarray(y, dtype=float))

    def boundary_points(self, cell: UnitCellGeometry, samples: int | None = None) -> np.ndarray:
        """Sample points of the unscaled hole boundary, ``samples`` per circle."""
        m = samples or self.boundary_samples
        angles = 2.0 * np.pi * np.arange(m) / m
        pts = []
        for hole in cell.holes:
            c = np.asarray(hole.center)
            ring = c + hole.radius * np.stack([np.cos(angles), np.sin(angles)], axis=-1)
            pts.append(ring)
        if not pts:
            raise ValueError("bbar undefined: cell has no holes")
        return np.concatenate(pts, axis=0)

    def bbar(self, cell: UnitCellGeometry, x, samples: int | None = None) -> np.ndarray:
        """min over z in the hole boundary of b(x, z), by dense circle sampling."""
        x = np.asarray(x, dtype=float)
        if self.b.const is not None:
            return np.full(x.shape[:-1], self.b.const)
        zs = self.boundary_points(cell, samples)  # (m, n)
        xflat = x.reshape(-1, x.shape[-1])
        out = np.empty(xflat.shape[0])
        for i, xi in enumerate(xflat):
            vals = self.b(np.broadcast_to(xi, zs.shape), zs)
            out[i] = float(np.min(vals))
        return out.reshape(x.shape[:-1])

    def key(self) -> str:
        return f"g[{self.g.key()}]b[{self.b.key()}]samples={self.boundary_samples}"


def boundary_trace(
    data: BoundaryData, view: DomainView, x, t: float, tol: float
) -> float:
    """The parabolic-boundary datum of the scaled problem: g(x) at t = 0 on
    the closed domain, b(xhat, xhat/eps) at t > 0 for x within ``tol`` of the
    hole boundary (xhat is the boundary projection).  Raises off the
    parabolic boundary."""
    x = np.asarray(x, dtype=float)
    cls = classify_point(view, x, tol)
    if t == 0.0:
        from hjhomog.geometry import Classification

        if cls is Classification.EXTERIOR:
            raise ValueError("trace undefined here: point inside a hole at t = 0")
        return float(data.g_at(x))
    if t < 0.0:
        raise ValueError("trace undefined here: negative time")
    from hjhomog.geometry import Classification

    if cls is not Classification.BOUNDARY:
        raise ValueError("trace undefined here: interior point at positive time")
    xhat = project_to_boundary(view, x)
    return float(data.b_at(xhat, xhat / view.epsilon))


def limit_trace(data: BoundaryData, cell: UnitCellGeometry, x, t: float) -> float:
    """The homogenized trace: g(x) at t = 0 and bbar(x) for t > 0."""
    if t < 0.0:
        raise ValueError("trace undefined here: negative time")
    x = np.asarray(x, dtype=float)
    if t == 0.0:
        return float(data.g_at(x))
    return float(data.bbar(cell, x))
