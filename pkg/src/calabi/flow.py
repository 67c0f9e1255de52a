"""Explicit time stepping of the symmetry-reduced Kahler-Ricci flow.

With f = u' on the compactified grid, differentiating the scalar flow

    du/dt = log u'' + (n - 1) log u' - n rho + c_t

in rho gives

    df/dt = u'''/u'' + (n - 1) u''/u' - n
          = k (1 - 2x) + k x (1 - x) [f_xx / f_x + (n - 1) f_x / f] - n,

a quasilinear diffusion with coefficient k x (1 - x) / f_x that degenerates at
both ends. At x = 0 and x = 1 the right side tends to k - n and -(k + n), the
rates of a_t and b_t; the endpoints are pinned to the closed-form class rather
than integrated.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Callable

import numba
import numpy as np

from .errors import DegenerateProfile, InvalidProfile, StepRejected
from .geometry import KahlerClass, ManifoldParams, class_at, singular_time, validate_class
from .profile import ProfileGrid, from_reference, u_second_interior, validate

logger = logging.getLogger(__name__)

DEFAULT_CFL = 0.4
DEFAULT_STOP_MARGIN = 1e-3
MAX_RETRIES = 10


@dataclass(frozen=True, eq=False)
class FlowState:
    t: float
    grid: ProfileGrid
    cls0: KahlerClass

    @property
    def params(self) -> ManifoldParams:
        return self.grid.params


@dataclass
class RunConfig:
    params: ManifoldParams
    cls0: KahlerClass
    m: int = 401
    cfl: float = DEFAULT_CFL
    t_stop: float | None = None
    snapshot_interval: float | None = None
    initial: ProfileGrid | None = field(default=None, repr=False)

    def __post_init__(self):
        validate_class(self.params, self.cls0)
        T = float(singular_time(self.params, self.cls0))
        if self.t_stop is None:
            self.t_stop = T - DEFAULT_STOP_MARGIN
        if self.snapshot_interval is None:
            self.snapshot_interval = T / 50
        if not 0 < self.cfl < 1:
            raise ValueError(f"cfl must lie in (0, 1), got {self.cfl}")
        if not 0 <= self.t_stop < T:
            raise ValueError(f"t_stop={self.t_stop} must lie in [0, T={T})")
        if not self.snapshot_interval > 0:
            raise ValueError("snapshot_interval must be positive")


def _rhs(f: np.ndarray, x: np.ndarray, dx: float, n: int, k: int) -> np.ndarray:
    out = np.empty_like(f)
    fx = (f[2:] - f[:-2]) / (2.0 * dx)
    fxx = (f[2:] - 2.0 * f[1:-1] + f[:-2]) / (dx * dx)
    xi = x[1:-1]
    w = k * xi * (1.0 - xi)
    out[1:-1] = k * (1.0 - 2.0 * xi) + w * (fxx / fx + (n - 1) * fx / f[1:-1]) - n
    out[0] = k - n
    out[-1] = -(k + n)
    return out


def _stable_dt(f: np.ndarray, x: np.ndarray, dx: float, k: int, cfl: float) -> float:
    # forward Euler on f_t = D f_xx is monotone for D dt / dx^2 <= 1/2;
    # D = k x (1 - x) / f_x, taken at its largest node value
    fx = (f[2:] - f[:-2]) / (2.0 * dx)
    xi = x[1:-1]
    diffusion = np.max(k * xi * (1.0 - xi) / fx)
    return cfl * dx * dx / (2.0 * diffusion)


def rhs(state: FlowState) -> np.ndarray:
    """df/dt at every node."""
    grid = state.grid
    fx = (grid.f[2:] - grid.f[:-2]) / (2.0 * grid.dx)
    if not np.all(fx > 0):
        raise DegenerateProfile("non-positive slope in the interior", t=state.t)
    return _rhs(grid.f, grid.x, grid.dx, grid.params.n, grid.params.k)


def stable_dt(state: FlowState, cfl: float = DEFAULT_CFL) -> float:
    grid = state.grid
    return _stable_dt(grid.f, grid.x, grid.dx, grid.params.k, cfl)


def step(state: FlowState, dt: float) -> FlowState:
    """One forward Euler step with endpoints re-pinned to the class at t + dt."""
    if dt < 0:
        raise ValueError(f"dt must be non-negative, got {dt}")
    if dt == 0:
        return state
    grid = state.grid
    t_new = state.t + dt
    cls = class_at(grid.params, state.cls0, t_new)
    f = grid.f + dt * rhs(state)
    f[0], f[-1] = float(cls.a), float(cls.b)
    new_grid = ProfileGrid(grid.params, cls, f)
    try:
        validate(new_grid)
    except InvalidProfile as exc:
        raise StepRejected(f"step of size {dt:g} broke the profile: {exc}", t=state.t) from exc
    return FlowState(t_new, new_grid, state.cls0)


def c_t_diag(state: FlowState) -> float:
    """The normalizing constant that makes du/dt vanish at rho = 0 (x = 1/2)."""
    grid = state.grid
    x = grid.x
    usec = float(np.interp(0.5, x[1:-1], u_second_interior(grid)))
    du = float(np.interp(0.5, x, grid.f))
    return -math.log(usec) - (grid.params.n - 1) * math.log(du)


def initial_state(config: RunConfig) -> FlowState:
    grid = config.initial
    if grid is None:
        grid = from_reference(config.params, config.cls0, config.m)
    validate(grid)
    return FlowState(0.0, grid, config.cls0)


@numba.njit(cache=True)
def _evolve_kernel(f, x, dx, n, k, a0, b0, t, t_end, cfl, max_retries):
    # same arithmetic as _rhs/_stable_dt; returns (t, steps, status) with
    # status 0 = reached t_end, 1 = degenerate slope, 2 = step rejected
    m = f.size
    df = np.empty(m)
    trial = np.empty(m)
    steps = 0
    while t < t_end:
        dmax = 0.0
        for j in range(1, m - 1):
            fx = (f[j + 1] - f[j - 1]) / (2.0 * dx)
            if not fx > 0.0:
                return t, steps, 1
            xi = x[j]
            w = k * xi * (1.0 - xi)
            d = w / fx
            if d > dmax:
                dmax = d
            fxx = (f[j + 1] - 2.0 * f[j] + f[j - 1]) / (dx * dx)
            df[j] = k * (1.0 - 2.0 * xi) + w * (fxx / fx + (n - 1) * fx / f[j]) - n
        df[0] = k - n
        df[m - 1] = -(k + n)
        dt = min(cfl * dx * dx / (2.0 * dmax), t_end - t)
        accepted = False
        t_new = t
        for _ in range(max_retries):
            t_new = t + dt if t + dt < t_end else t_end
            for j in range(m):
                trial[j] = f[j] + dt * df[j]
            trial[0] = a0 + (k - n) * t_new
            trial[m - 1] = b0 - (k + n) * t_new
            ok = True
            for j in range(m - 1):
                if not trial[j + 1] - trial[j] > 0.0:
                    ok = False
                    break
            if ok:
                accepted = True
                break
            dt *= 0.5
        if not accepted:
            return t, steps, 2
        f[:] = trial
        t = t_new
        steps += 1
    return t, steps, 0


def evolve(state: FlowState, t_end: float, cfl: float = DEFAULT_CFL) -> FlowState:
    """Advance ``state`` to exactly ``t_end`` with CFL-limited steps.

    Rejected steps are retried with half the step size. The endpoint values are
    computed from the initial class at every step, so no rounding accumulates.
    """
    params, cls0 = state.params, state.cls0
    grid = state.grid
    f = np.array(grid.f)
    t, nsteps, status = _evolve_kernel(
        f, grid.x, grid.dx, params.n, params.k, float(cls0.a), float(cls0.b),
        float(state.t), float(t_end), float(cfl), MAX_RETRIES,
    )
    if status == 1:
        raise DegenerateProfile("non-positive slope in the interior", t=t)
    if status == 2:
        raise StepRejected(f"no admissible step after {MAX_RETRIES} halvings", t=t)
    logger.debug("evolved to t=%g in %d steps", t, nsteps)
    cls = class_at(params, cls0, t)
    return FlowState(t, ProfileGrid(params, cls, f), cls0)


def snapshot_times(config: RunConfig) -> list[float]:
    t_stop, h = float(config.t_stop), float(config.snapshot_interval)
    count = int(math.floor(t_stop / h + 1e-9))
    times = [i * h for i in range(count + 1)]
    if t_stop - times[-1] > 1e-12 * max(1.0, t_stop):
        times.append(t_stop)
    else:
        times[-1] = t_stop
    return times


def run(config: RunConfig, diagnose: Callable | None = None) -> list[tuple]:
    """Drive the flow from t = 0 to ``config.t_stop``.

    Returns ``[(FlowState, DiagnosticsRecord), ...]`` at the snapshot times.
    ``diagnose`` defaults to :func:`calabi.analytics.diagnose`.
    """
    if diagnose is None:
        from .analytics import diagnose
    state = initial_state(config)
    series = [(state, diagnose(state))]
    for t_snap in snapshot_times(config)[1:]:
        state = evolve(state, t_snap, config.cfl)
        series.append((state, diagnose(state)))
    return series
