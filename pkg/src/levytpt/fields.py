"""Scalar fields on uniform 1d grids, with explicit out-of-window policies.

The nonlocal operators look up field values at x + F(x, r), which can land
outside the solver window.  Every field therefore carries an edge policy:

  "clamp" : return the boundary value (right for committors and expected
            hitting times, which are constant beyond the window),
  "zero"  : return 0 (right for densities with decaying tails),
  "error" : refuse, for fields where extrapolation would be silent nonsense.
"""

from __future__ import annotations

import dataclasses
import warnings

import numpy as np

from .errors import ConfigError


class ExtrapolationWarning(UserWarning):
    """A field lookup fell outside the grid window."""


@dataclasses.dataclass
class ScalarField1D:
    x: np.ndarray
    values: np.ndarray
    edge: str = "error"
    name: str = ""

    def __post_init__(self):
        self.x = np.asarray(self.x, dtype=float)
        self.values = np.asarray(self.values, dtype=float)
        if self.x.ndim != 1 or self.x.shape != self.values.shape:
            raise ConfigError("field needs matching 1d x and value arrays")
        if self.x.size < 2:
            raise ConfigError("field needs at least two nodes")
        dx = np.diff(self.x)
        if np.any(dx <= 0):
            raise ConfigError("grid must be strictly increasing")
        if not np.allclose(dx, dx[0], rtol=1e-9, atol=0.0):
            raise ConfigError("grid must be uniform")
        self.dx = float(dx[0])
        if self.edge not in ("clamp", "zero", "error"):
            raise ConfigError(f"unknown edge policy '{self.edge}'")

    @property
    def n(self) -> int:
        return self.x.size

    def __call__(self, xq):
        """Linear interpolation with the field's edge policy outside the window."""
        xq = np.asarray(xq, dtype=float)
        scalar = xq.ndim == 0
        xq = np.atleast_1d(xq)
        below = xq < self.x[0]
        above = xq > self.x[-1]
        outside = below | above
        if np.any(outside):
            if self.edge == "error":
                bad = xq[outside][0]
                raise ConfigError(
                    f"lookup of field '{self.name or 'unnamed'}' at x={bad:.6g} outside "
                    f"window [{self.x[0]:.6g}, {self.x[-1]:.6g}]")
            warnings.warn(
                f"{int(outside.sum())} lookups of '{self.name or 'unnamed'}' fell outside "
                f"the window; edge policy '{self.edge}' applied",
                ExtrapolationWarning, stacklevel=2)
        out = np.interp(xq, self.x, self.values)
        if self.edge == "zero":
            out = np.where(outside, 0.0, out)
        return float(out[0]) if scalar else out

    def derivative(self) -> "ScalarField1D":
        """Central differences inside, one-sided at the window edges."""
        d = np.gradient(self.values, self.dx, edge_order=2)
        return ScalarField1D(self.x, d, edge=self.edge, name=f"d({self.name})" if self.name else "")

    def second_derivative(self) -> "ScalarField1D":
        d2 = np.empty_like(self.values)
        v = self.values
        d2[1:-1] = (v[2:] - 2.0 * v[1:-1] + v[:-2]) / self.dx ** 2
        d2[0] = d2[1]
        d2[-1] = d2[-2]
        return ScalarField1D(self.x, d2, edge=self.edge, name=f"d2({self.name})" if self.name else "")

    def copy_with(self, values=None, edge=None, name=None) -> "ScalarField1D":
        return ScalarField1D(
            self.x.copy(),
            self.values.copy() if values is None else np.asarray(values, dtype=float),
            edge=self.edge if edge is None else edge,
            name=self.name if name is None else name,
        )

    def to_csv(self, path) -> None:
        """Two columns x,value at full double precision."""
        with open(path, "w") as fh:
            fh.write("x,value\n")
            for xi, vi in zip(self.x, self.values):
                fh.write(f"{xi:.17g},{vi:.17g}\n")

    @staticmethod
    def from_csv(path, edge: str = "error", name: str = "") -> "ScalarField1D":
        data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
        if data.shape[1] != 2:
            raise ConfigError(f"field csv '{path}' must have exactly two columns")
        return ScalarField1D(data[:, 0], data[:, 1], edge=edge, name=name)


def uniform_grid(lo: float, hi: float, n: int) -> np.ndarray:
    if n < 2:
        raise ConfigError("grid needs at least two nodes")
    if not lo < hi:
        raise ConfigError(f"grid needs lo < hi, got ({lo}, {hi})")
    return np.linspace(lo, hi, n)
