"""Run configuration: a line-based key = value format with [section]
headers, full validation with collected errors, and builders that turn a
parsed configuration into geometry, model, and data objects.

Example::

    [geometry]
    dim = 2
    eta = 1.0
    defects = []

    [hole]
    center = [0.5, 0.5]
    radius = 0.25

    [model]
    potential = bump
    value = 1.0
    m0 = 4.0

    [data]
    g = const
    g_value = 0.0
    b = const
    b_value = 1.0

    [numerics]
    h_per_eps = 0.125
    k = 8

    [experiment]
    driver = optimality
    epsilon_list = [0.25, 0.125, 0.0625]
    horizon = 1.0

Unknown sections or keys are rejected; every error carries its line number
and all errors are reported together.  The canonical echo of a parsed
configuration reproduces the run bit-exactly.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path

from hjhomog.dynamics import (
    BoundaryData,
    LagrangianModel,
    potential_from_name,
    scalar_field_from_config,
)
from hjhomog.geometry import Hole, UnitCellGeometry
from hjhomog.slack import DEFAULT_SLACK, SlackBudget

__all__ = ["ConfigError", "ExperimentConfig", "parse_config", "parse_config_text"]

DRIVERS = (
    "solve",
    "metric",
    "tables",
    "rate",
    "optimality",
    "diluted",
    "defect",
    "a7check",
)


class ConfigError(ValueError):
    """One or more configuration problems; ``errors`` lists them all."""

    def __init__(self, errors: list[str]):
        super().__init__("; ".join(errors))
        self.errors = errors


@dataclass
class HoleConfig:
    center: tuple[float, float] = (0.5, 0.5)
    radius: float = 0.25


@dataclass
class GeometryConfig:
    dim: int = 2
    eta: float = 1.0
    defects: list[tuple[int, int]] = field(default_factory=list)
    holes: list[HoleConfig] = field(default_factory=list)


@dataclass
class ModelConfig:
    potential: str = "bump"
    value: float = 1.0
    expr: str | None = None
    m0: float | None = None
    q0: tuple[float, float] | None = None  # selects the shifted model


@dataclass
class DataConfig:
    g: str = "const"
    g_value: float = 0.0
    g_expr: str | None = None
    lip_g: float = 0.0
    b: str = "const"
    b_value: float = 1.0
    b_expr: str | None = None
    lip_b: float = 0.0
    boundary_samples: int = 2048


@dataclass
class NumericsConfig:
    h: float | None = None
    h_per_eps: float = 0.125
    stencil_dirs: int = 32
    stencil_radii: int = 16
    metric_h: float = 1 / 16
    metric_rho: int = 4
    metric_margin: float = 3.0
    k: int = 8
    table_spacing: float = 0.05
    max_nodes: int = 40_000_000
    slack_a: float = DEFAULT_SLACK.a
    slack_b: float = DEFAULT_SLACK.b
    slack_c: float = DEFAULT_SLACK.c


@dataclass
class RunConfig:
    driver: str = "optimality"
    epsilon_list: list[float] = field(default_factory=lambda: [0.25, 0.125, 0.0625])
    horizon: float = 1.0
    window: float = 2.0
    times: list[float] = field(default_factory=lambda: [0.25, 0.5, 1.0])
    eta_schedule: str = "eps"  # diluted driver: eps | sqrt | zero
    n_limit_samples: int = 50


@dataclass
class IOConfig:
    out_dir: str = "out"
    cache_dir: str = "cache"
    formats: list[str] = field(default_factory=lambda: ["csv"])


@dataclass
class QueryConfig:
    tau: float = 0.0
    t: float = 1.0
    y: tuple[float, float] = (0.0, 0.0)
    x: tuple[float, float] = (1.0, 0.5)
    k: int = 8


@dataclass
class ExperimentConfig:
    geometry: GeometryConfig = field(default_factory=GeometryConfig)
    model: ModelConfig = field(default_factory=ModelConfig)
    data: DataConfig = field(default_factory=DataConfig)
    numerics: NumericsConfig = field(default_factory=NumericsConfig)
    experiment: RunConfig = field(default_factory=RunConfig)
    io: IOConfig = field(default_factory=IOConfig)
    query: QueryConfig = field(default_factory=QueryConfig)

    # -- builders -----------------------------------------------------------

    def build_cell(self) -> UnitCellGeometry:
        holes = tuple(
            Hole(center=tuple(h.center), radius=h.radius) for h in self.geometry.holes
        )
        return UnitCellGeometry(holes=holes, dim=self.geometry.dim)

    def build_model(self) -> LagrangianModel:
        if self.model.q0 is not None:
            return LagrangianModel.shifted(
                self.model.q0, lip_g=self.data.lip_g, m0=self.model.m0
            )
        pot = potential_from_name(
            self.model.potential, value=self.model.value, expr_text=self.model.expr
        )
        return LagrangianModel.mechanical(
            pot, lip_g=self.data.lip_g, m0=self.model.m0
        )

    def build_data(self) -> BoundaryData:
        g = scalar_field_from_config(
            self.data.g,
            value=self.data.g_value,
            expr_text=self.data.g_expr,
            lip=self.data.lip_g if self.data.g == "expr" else None,
        )
        b = scalar_field_from_config(
            self.data.b,
            value=self.data.b_value,
            expr_text=self.data.b_expr,
            lip=self.data.lip_b if self.data.b == "expr" else None,
            periodic_slot=True,
        )
        return BoundaryData(g=g, b=b, boundary_samples=self.data.boundary_samples)

    def slack(self) -> SlackBudget:
        n = self.numerics
        return SlackBudget(a=n.slack_a, b=n.slack_b, c=n.slack_c)

    def geometry_key(self) -> str:
        g = self.geometry
        holes = ";".join(f"({h.center[0]!r},{h.center[1]!r},r={h.radius!r})" for h in g.holes)
        defects = ";".join(map(str, sorted(g.defects)))
        return f"dim={g.dim};eta={g.eta!r};holes[{holes}];defects[{defects}]"

    def echo(self) -> dict:
        from dataclasses import asdict

        doc = asdict(self)
        return doc


# ---------------------------------------------------------------------------
# Parsing
# ---------------------------------------------------------------------------

_SECTIONS = {
    "geometry": GeometryConfig,
    "hole": HoleConfig,
    "model": ModelConfig,
    "data": DataConfig,
    "numerics": NumericsConfig,
    "experiment": RunConfig,
    "io": IOConfig,
    "query": QueryConfig,
}

_LIST_OF_PAIRS = {"defects"}
_PAIR_KEYS = {"center", "y", "x", "q0"}
_STRING_KEYS = {
    "potential",
    "expr",
    "g",
    "g_expr",
    "b",
    "b_expr",
    "driver",
    "eta_schedule",
    "out_dir",
    "cache_dir",
}
_LIST_KEYS = {"epsilon_list", "times", "formats", "defects", "center", "y", "x", "q0"}
_INT_KEYS = {
    "dim",
    "stencil_dirs",
    "stencil_radii",
    "metric_rho",
    "k",
    "max_nodes",
    "boundary_samples",
    "n_limit_samples",
}
_OPTIONAL_FLOAT_KEYS = {"m0", "h"}


def _parse_scalar(token: str, line_no: int, errors: list[str]):
    token = token.strip()
    if token.startswith('"') and token.endswith('"') and len(token) >= 2:
        return token[1:-1]
    low = token.lower()
    if low in ("true", "false"):
        return low == "true"
    if low in ("none", "auto"):
        return None
    try:
        if "." in token or "e" in low or "/" not in token and not token.lstrip("+-").isdigit():
            return float(token)
        return int(token)
    except ValueError:
        return token  # bare string


def _parse_list(text: str, line_no: int, errors: list[str]):
    inner = text.strip()
    assert inner.startswith("[") and inner.endswith("]")
    inner = inner[1:-1].strip()
    if not inner:
        return []
    items = []
    depth = 0
    start = 0
    for i, ch in enumerate(inner):
        if ch == "[":
            depth += 1
        elif ch == "]":
            depth -= 1
            if depth < 0:
                errors.append(f"line {line_no}: unbalanced brackets")
                return []
        elif ch == "," and depth == 0:
            items.append(inner[start:i])
            start = i + 1
    if depth != 0:
        errors.append(f"line {line_no}: unbalanced brackets")
        return []
    items.append(inner[start:])
    out = []
    for item in items:
        item = item.strip()
        if item.startswith("["):
            out.append(_parse_list(item, line_no, errors))
        else:
            out.append(_parse_scalar(item, line_no, errors))
    return out


def parse_config_text(text: str) -> ExperimentConfig:
    """Parse and validate a configuration; raises :class:`ConfigError` with
    every detected problem."""
    errors: list[str] = []
    cfg = ExperimentConfig()
    holes: list[HoleConfig] = []
    current: object | None = None
    current_name = ""
    explicit: set[tuple[str, str]] = set()

    for line_no, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if line.startswith("[") and line.endswith("]"):
            name = line[1:-1].strip().lower()
            if name not in _SECTIONS:
                errors.append(f"line {line_no}: unknown section [{name}]")
                current = None
                current_name = ""
                continue
            if name == "hole":
                holes.append(HoleConfig())
                current = holes[-1]
            else:
                current = getattr(cfg, "experiment" if name == "experiment" else name)
            current_name = name
            continue
        if "=" not in line:
            errors.append(f"line {line_no}: expected key = value")
            continue
        if current is None:
            errors.append(f"line {line_no}: key outside of any [section]")
            continue
        key, _, value = line.partition("=")
        key = key.strip()
        value = value.strip()
        if not hasattr(current, key):
            errors.append(
                f"line {line_no}: unknown key {key!r} in section [{current_name}]"
            )
            continue
        if value.startswith("["):
            parsed = _parse_list(value, line_no, errors)
            if key in _PAIR_KEYS:
                if len(parsed) != 2 or not all(
                    isinstance(v, (int, float)) for v in parsed
                ):
                    errors.append(f"line {line_no}: {key} needs two numbers")
                    continue
                parsed = (float(parsed[0]), float(parsed[1]))
            elif key in _LIST_OF_PAIRS:
                pairs = []
                ok = True
                for p in parsed:
                    if not isinstance(p, list) or len(p) != 2:
                        errors.append(f"line {line_no}: {key} needs integer pairs")
                        ok = False
                        break
                    pairs.append((int(p[0]), int(p[1])))
                if not ok:
                    continue
                parsed = pairs
        else:
            parsed = _parse_scalar(value, line_no, errors)
            if key in _INT_KEYS and isinstance(parsed, float):
                if parsed != int(parsed):
                    errors.append(f"line {line_no}: {key} must be an integer")
                    continue
                parsed = int(parsed)
            if key in _INT_KEYS and isinstance(parsed, str):
                errors.append(f"line {line_no}: {key} must be an integer")
                continue
            if (
                key not in _STRING_KEYS
                and isinstance(parsed, int)
                and not isinstance(parsed, bool)
                and key not in _INT_KEYS
            ):
                parsed = float(parsed)
        try:
            setattr(current, key, parsed)
            explicit.add((current_name, key))
        except Exception as exc:  # defensive: dataclass fields are plain
            errors.append(f"line {line_no}: cannot set {key}: {exc}")

    cfg.geometry.holes = holes
    _validate(cfg, explicit, errors)
    if errors:
        raise ConfigError(errors)
    return cfg


def parse_config(path: str | Path) -> ExperimentConfig:
    return parse_config_text(Path(path).read_text())


def _validate(cfg: ExperimentConfig, explicit: set, errors: list[str]) -> None:
    g = cfg.geometry
    if g.dim not in (2, 3):
        errors.append(f"geometry.dim must be 2 or 3, got {g.dim}")
    elif g.dim != 2:
        errors.append("only dim = 2 is supported by the solvers in this version")
    if not 0.0 <= g.eta <= 1.0:
        errors.append(f"geometry.eta must lie in [0, 1], got {g.eta}")
    for h in g.holes:
        if h.radius <= 0:
            errors.append(f"hole radius must be positive, got {h.radius}")
        for c in h.center:
            if not (h.radius < c < 1.0 - h.radius):
                errors.append(
                    f"hole at {h.center} radius {h.radius} not compactly inside the cell"
                )
                break

    m = cfg.model
    if m.q0 is None and m.potential not in ("zero", "constant", "bump", "trig", "expr"):
        errors.append(f"unknown potential {m.potential!r}")
    if m.potential == "expr" and not m.expr:
        errors.append("model.potential = expr requires model.expr")

    d = cfg.data
    for name, kind, expr in (("g", d.g, d.g_expr), ("b", d.b, d.b_expr)):
        if kind not in ("const", "cone", "cosine", "expr"):
            errors.append(f"unknown data field kind data.{name} = {kind!r}")
        if kind == "expr" and not expr:
            errors.append(f"data.{name} = expr requires data.{name}_expr")
    if d.g == "const" and d.b == "const" and d.g_value > d.b_value:
        errors.append("data: g exceeds b, the compatibility condition fails")

    n = cfg.numerics
    if n.h_per_eps <= 0 or n.h_per_eps > 0.125 + 1e-12:
        errors.append(f"numerics.h_per_eps must lie in (0, 1/8], got {n.h_per_eps}")
    if n.k < 2:
        errors.append(f"numerics.k must be >= 2, got {n.k}")
    if n.stencil_dirs < 4 or n.stencil_radii < 1:
        errors.append("numerics stencil must have >= 4 directions and >= 1 radius")

    e = cfg.experiment
    if e.driver not in DRIVERS:
        errors.append(f"unknown driver {e.driver!r} (choose from {', '.join(DRIVERS)})")
    if not e.epsilon_list:
        errors.append("experiment.epsilon_list must not be empty")
    if any(not (0 < eps <= 0.5) for eps in e.epsilon_list):
        errors.append("every epsilon must lie in (0, 1/2]")
    if e.driver == "rate":
        if ("experiment", "epsilon_list") not in explicit:
            errors.append("rate driver: epsilon_list must be given explicitly")
        if len(e.epsilon_list) < 3:
            errors.append("rate driver needs at least 3 epsilon values")
        if n.h is not None:
            for eps in e.epsilon_list:
                if n.h > eps / 8 + 1e-12:
                    errors.append(
                        f"h <= eps/8 required: h = {n.h} exceeds eps/8 = {eps / 8}"
                    )
                    break
    if e.driver in ("diluted", "defect"):
        if m.q0 is not None or (
            m.potential not in ("zero",) and m.q0 is None
        ):
            errors.append(
                f"{e.driver} driver requires the resting-momentum normalization "
                "(potential = zero)"
            )
    if e.horizon <= 0:
        errors.append("experiment.horizon must be positive")
    for t in e.times:
        if not 0 < t <= e.horizon + 1e-12:
            errors.append(f"comparison time {t} outside (0, horizon]")
