"""Grid-sampled scalar and vector fields with attached quadrature weights."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .grids import Grid, RadialGrid, gradient, divergence


def _check_grid_match(a, b):
    if a.grid is not b.grid and a.grid.key != b.grid.key:
        raise ValueError(f"grid mismatch: {a.grid.key} vs {b.grid.key}")


@dataclass
class ScalarField:
    """Real-valued samples on a grid's nodes.

    Finite values are an invariant: singular integrands are only ever sampled
    on cell-centered grids that exclude their singular points.
    """

    grid: object
    values: np.ndarray
    field_id: str = "scalar"

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        if self.values.shape != (self.grid.n_nodes,):
            raise ValueError("values must be one sample per grid node")
        if not np.all(np.isfinite(self.values)):
            raise ValueError("field values must be finite")

    @property
    def weights(self) -> np.ndarray:
        return self.grid.weights

    @property
    def domain_id(self) -> str:
        return self.grid.key

    def __add__(self, other):
        _check_grid_match(self, other)
        return ScalarField(self.grid, self.values + other.values,
                           f"({self.field_id}+{other.field_id})")

    def __sub__(self, other):
        _check_grid_match(self, other)
        return ScalarField(self.grid, self.values - other.values,
                           f"({self.field_id}-{other.field_id})")

    def __mul__(self, a):
        if isinstance(a, ScalarField):
            _check_grid_match(self, a)
            return ScalarField(self.grid, self.values * a.values,
                               f"({self.field_id}*{a.field_id})")
        return ScalarField(self.grid, self.values * float(a), self.field_id)

    __rmul__ = __mul__

    def abs(self) -> "ScalarField":
        return ScalarField(self.grid, np.abs(self.values), f"|{self.field_id}|")

    def gradient(self) -> np.ndarray:
        return gradient(self.grid, self.values)


@dataclass
class VectorField:
    """R^n-valued samples on a grid (components shape (N, dim)).

    ``div_values``, when present, carries the analytic divergence sampled at
    the nodes; constructors that know it in closed form attach it so sign
    conditions are not polluted by difference-stencil error near
    singularities.
    """

    grid: object
    components: np.ndarray
    field_id: str = "vector"
    div_values: np.ndarray = field(default=None)

    def __post_init__(self):
        self.components = np.asarray(self.components, dtype=float)
        expected = (self.grid.n_nodes, self.component_count)
        if self.components.shape != expected:
            raise ValueError(f"components must have shape {expected}")
        if not np.all(np.isfinite(self.components)):
            raise ValueError("field values must be finite")
        if self.div_values is not None:
            self.div_values = np.asarray(self.div_values, dtype=float)

    @property
    def component_count(self) -> int:
        # radial grids store only the radial component of an R^n field
        return 1 if isinstance(self.grid, RadialGrid) else 3

    @property
    def ambient_dim(self) -> int:
        return self.grid.n if isinstance(self.grid, RadialGrid) else 3

    @property
    def weights(self) -> np.ndarray:
        return self.grid.weights

    @property
    def domain_id(self) -> str:
        return self.grid.key

    def magnitude(self) -> ScalarField:
        comp = self.components
        if isinstance(self.grid, RadialGrid):
            mag = np.abs(comp[:, 0])
        else:
            mag = np.linalg.norm(comp, axis=1)
        return ScalarField(self.grid, mag, f"|{self.field_id}|")

    def __add__(self, other):
        _check_grid_match(self, other)
        return VectorField(self.grid, self.components + other.components,
                           f"({self.field_id}+{other.field_id})")

    def __sub__(self, other):
        _check_grid_match(self, other)
        return VectorField(self.grid, self.components - other.components,
                           f"({self.field_id}-{other.field_id})")

    def __mul__(self, a):
        return VectorField(self.grid, self.components * float(a), self.field_id)

    __rmul__ = __mul__

    def discrete_divergence(self) -> ScalarField:
        return ScalarField(self.grid, divergence(self.grid, self.components),
                           f"div({self.field_id})")

    def divergence_field(self) -> ScalarField:
        """Analytic divergence when attached, discrete otherwise."""
        if self.div_values is not None:
            return ScalarField(self.grid, self.div_values, f"div({self.field_id})")
        return self.discrete_divergence()


# ---------------------------------------------------------------------------
# constructors and serialization


def zero_field(grid) -> ScalarField:
    return ScalarField(grid, np.zeros(grid.n_nodes), "zero")


def const_field(grid, v: float = 1.0) -> ScalarField:
    return ScalarField(grid, np.full(grid.n_nodes, float(v)), f"const(v={v:g})")


def zero_vector(grid) -> VectorField:
    dim = grid.n if isinstance(grid, RadialGrid) else 3
    return VectorField(grid, np.zeros((grid.n_nodes, dim)), "zero",
                       div_values=np.zeros(grid.n_nodes))


def const_vector(grid, direction=(1.0, 0.0, 0.0), v: float = 1.0) -> VectorField:
    d = np.asarray(direction, dtype=float)
    comps = np.tile(v * d, (grid.n_nodes, 1))
    return VectorField(grid, comps, f"const(v={v:g})",
                       div_values=np.zeros(grid.n_nodes))


def indicator(grid, mask: np.ndarray, field_id: str = "indicator") -> ScalarField:
    vals = np.zeros(grid.n_nodes)
    vals[mask] = 1.0
    return ScalarField(grid, vals, field_id)


def write_table(f, path):
    """Serialize a field to the flat text table (coords, weight, values)."""
    grid = f.grid
    if isinstance(f, ScalarField):
        vals = f.values[:, None]
        names = ["value"]
    else:
        vals = f.components
        names = [f"value_{i}" for i in range(vals.shape[1])]
    if isinstance(grid, RadialGrid):
        cols = ["r"]
        coords = grid.coords
    else:
        cols = ["x", "y", "z"]
        coords = grid.coords
    header = ",".join(cols + ["weight"] + names)
    data = np.hstack([coords, grid.weights[:, None], vals])
    with open(path, "w") as fh:
        fh.write(header + "\n")
        for row in data:
            fh.write(",".join(format(v, ".17g") for v in row) + "\n")


def read_table(path):
    """Read a field table back as (coords, weights, values) arrays."""
    with open(path) as fh:
        header = fh.readline().strip().split(",")
        data = np.loadtxt(fh, delimiter=",", ndmin=2)
    n_coord = 1 if header[0] == "r" else 3
    coords = data[:, :n_coord]
    weights = data[:, n_coord]
    values = data[:, n_coord + 1:]
    return coords, weights, values
