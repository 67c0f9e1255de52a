"""Grid representation of a Calabi-symmetric metric.

The metric is carried by f(x) = u'(rho) on the compactified fiber coordinate

    x = e^{k rho} / (1 + e^{k rho})  in [0, 1],   d/drho = k x (1 - x) d/dx,

so that D_0 sits at x = 0, D_inf at x = 1 and the endpoint values f(0) = a,
f(1) = b are exactly the class coefficients. Between nodes f is treated as
piecewise linear; integrals against the measure drho = dx / (k x (1 - x)) are
then done in closed form on each segment.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import (
    BoundaryNode,
    DegenerateSlope,
    EndpointMismatch,
    GridTooSmall,
    NotMonotone,
)
from .geometry import KahlerClass, ManifoldParams, class_at, reference_potential

MIN_NODES = 33


@dataclass(frozen=True, eq=False)
class ProfileGrid:
    params: ManifoldParams
    cls: KahlerClass
    f: np.ndarray = field(repr=False)

    def __post_init__(self):
        f = np.array(self.f, dtype=float)
        if f.ndim != 1:
            raise ValueError("profile values must be one-dimensional")
        f.setflags(write=False)
        object.__setattr__(self, "f", f)

    @property
    def m(self) -> int:
        return self.f.size

    @property
    def dx(self) -> float:
        return 1.0 / (self.m - 1)

    @property
    def x(self) -> np.ndarray:
        return np.linspace(0.0, 1.0, self.m)

    @property
    def rho(self) -> np.ndarray:
        """rho at every node; -inf and +inf at the two ends."""
        with np.errstate(divide="ignore"):
            return x_to_rho(self.x, self.params.k)

    def with_values(self, f, cls: KahlerClass | None = None) -> "ProfileGrid":
        return ProfileGrid(self.params, self.cls if cls is None else cls, f)


def x_to_rho(x, k: int):
    x = np.asarray(x, dtype=float)
    return (np.log(x) - np.log1p(-x)) / k


def rho_to_x(rho, k: int):
    return 0.5 * (1.0 + np.tanh(0.5 * k * np.asarray(rho, dtype=float)))


def from_reference(params: ManifoldParams, cls: KahlerClass, m: int) -> ProfileGrid:
    """Sample u' of the reference potential; it is affine in x: a + (b - a) x."""
    if m < MIN_NODES:
        raise GridTooSmall(f"need m >= {MIN_NODES}, got {m}")
    a, b = float(cls.a), float(cls.b)
    x = np.linspace(0.0, 1.0, m)
    f = a + (b - a) * x
    f[0], f[-1] = a, b
    return ProfileGrid(params, cls, f)


def validate(grid: ProfileGrid) -> None:
    f = grid.f
    a, b = float(grid.cls.a), float(grid.cls.b)
    if f[0] != a or f[-1] != b:
        raise EndpointMismatch(f"endpoints ({f[0]!r}, {f[-1]!r}) differ from class ({a!r}, {b!r})")
    if not (f[1] - f[0] > 0 and f[-1] - f[-2] > 0):
        raise DegenerateSlope("one-sided slope at x=0 or x=1 is not positive")
    steps = np.diff(f)
    bad = np.flatnonzero(~(steps > 0))
    if bad.size:
        raise NotMonotone(f"f not strictly increasing at node {int(bad[0])}")


# -- derivative diagnostics -------------------------------------------------

def _central_slopes(f: np.ndarray, dx: float) -> np.ndarray:
    """Central f_x at nodes 1..m-2."""
    return (f[2:] - f[:-2]) / (2.0 * dx)


def u_second_interior(grid: ProfileGrid) -> np.ndarray:
    """u'' at nodes 1..m-2."""
    x = grid.x[1:-1]
    return grid.params.k * x * (1.0 - x) * _central_slopes(grid.f, grid.dx)


def u_second(grid: ProfileGrid, j: int) -> float:
    if not 1 <= j <= grid.m - 2:
        raise BoundaryNode(f"u'' needs 1 <= j <= {grid.m - 2}, got {j}")
    return float(u_second_interior(grid)[j - 1])


def u_third_ratio_interior(grid: ProfileGrid) -> np.ndarray:
    """u'''/u'' = d/drho log u'' at nodes 1..m-2."""
    f, dx, k = grid.f, grid.dx, grid.params.k
    x = grid.x[1:-1]
    fx = _central_slopes(f, dx)
    fxx = (f[2:] - 2.0 * f[1:-1] + f[:-2]) / dx**2
    return k * (1.0 - 2.0 * x) + k * x * (1.0 - x) * fxx / fx


def u_third_ratio(grid: ProfileGrid, j: int) -> float:
    if not 2 <= j <= grid.m - 3:
        raise BoundaryNode(f"u'''/u'' needs 2 <= j <= {grid.m - 3}, got {j}")
    return float(u_third_ratio_interior(grid)[j - 1])


# -- potential reconstruction ----------------------------------------------

def _log_x(rho, k):
    return -np.logaddexp(0.0, -k * rho)


def _log_1mx(rho, k):
    return -np.logaddexp(0.0, k * rho)


def _segment_coefficients(grid: ProfileGrid):
    # on segment j, f(x) = lo_j + (hi_j - lo_j) x, i.e. lo/hi are the affine
    # extrapolations to x=0 and x=1; the exact antiderivative of
    # f / (k x (1-x)) is (lo log x - hi log(1-x)) / k
    x, f = grid.x, grid.f
    slope = np.diff(f) / grid.dx
    lo = f[:-1] - slope * x[:-1]
    hi = lo + slope
    return lo, hi


def reconstruct_u(grid: ProfileGrid, rho):
    """u(rho) = int_0^rho u' normalized so that u(0) = 0."""
    rho_arr = np.asarray(rho, dtype=float)
    k, m = grid.params.k, grid.m
    x = grid.x
    lo, hi = _segment_coefficients(grid)
    with np.errstate(divide="ignore"):
        lx = np.log(x)
        l1x = np.log1p(-x)
    # integral from node 1 to node j, for j = 1..m-2 (stored at index j)
    seg = (lo[1:m - 2] * np.diff(lx[1:m - 1]) - hi[1:m - 2] * np.diff(l1x[1:m - 1])) / k
    node_int = np.zeros(m)
    node_int[2:m - 1] = np.cumsum(seg)

    def from_node(target_lx, target_l1x, xt):
        j = np.clip(np.searchsorted(x, xt, side="right") - 1, 0, m - 2)
        start = np.where(j == 0, 1, j)
        part = (lo[j] * (target_lx - lx[start]) - hi[j] * (target_l1x - l1x[start])) / k
        return node_int[start] + part

    origin = from_node(np.log(0.5), np.log(0.5), 0.5)
    xt = rho_to_x(rho_arr, k)
    out = from_node(_log_x(rho_arr, k), _log_1mx(rho_arr, k), xt) - origin
    out = np.where(rho_arr == 0.0, 0.0, out)
    return float(out) if out.ndim == 0 else out


def phi_tilde(grid: ProfileGrid, t: float, cls0: KahlerClass, rho):
    """u(rho, t) - u_hat_t(rho) + u_hat_t(0): the potential relative to the reference."""
    cls_t = class_at(grid.params, cls0, t)
    u_hat, _, _ = reference_potential(grid.params, cls_t, rho)
    u_hat0, _, _ = reference_potential(grid.params, cls_t, 0.0)
    out = reconstruct_u(grid, rho) - u_hat + u_hat0
    return float(out) if np.ndim(out) == 0 else out
