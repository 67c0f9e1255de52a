"""Geometric diagnostics of flow snapshots and certification of the flow estimates.

Lengths use the Riemannian form g_R = 2 Re(g_{ij} dz^i dz^j). Restricted to a fiber
the metric is u''(rho) (drho^2 / 2 + 2 dphi^2), with the angle phi of period 2 pi / k.

"There exists C" estimates are certified as stability of the monitored ratio: the
ratio's maximum over the run divided by its median must stay below
``STABILITY_LIMIT``.
"""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass, fields

import numpy as np

from .errors import BoundaryNode, InsufficientRange, WrongCase
from .geometry import (
    CaseLabel,
    class_at,
    classify_singularity,
    fs_base_diameter,
    limit_class,
    singular_time,
)
from .profile import (
    phi_tilde,
    reconstruct_u,
    u_second_interior,
    u_third_ratio_interior,
)

STABILITY_LIMIT = 2.0
PHI_WINDOW = np.linspace(-5.0, 5.0, 201)
THIRD_RATIO_SLACK = 0.05
LIMIT_RTOL = 0.05
CAUCHY_TOL = 1e-2
GH_DECAY = 0.05
EXPONENT_WINDOW = (0.05, 0.3)
EXPONENT_RANGE = (0.8, 1.2)
MIN_FIT_NODES = 8


@dataclass(frozen=True)
class DiagnosticsRecord:
    t: float
    a_t: float
    b_t: float
    volume: float
    usec_max: float
    fiber_len: float
    fiber_diam_bound: float
    tr_chi_max: float
    trace_ref_max: float
    H_max: float
    contraction_env: float
    gh_bound: float
    phi_tilde_sup: float
    utr_min: float
    utr_max: float

    @classmethod
    def field_names(cls) -> list[str]:
        return [f.name for f in fields(cls)]

    def as_dict(self) -> dict:
        return asdict(self)


# -- single-snapshot quantities -----------------------------------------------

def volume(state) -> float:
    """Normalized volume int (u')^{n-1} u'' drho = int f^{n-1} f_x dx, trapezoid in x."""
    f, n = state.grid.f, state.params.n
    p = f ** (n - 1)
    return float(np.sum(np.diff(f) * 0.5 * (p[:-1] + p[1:])))


def fiber_length(state) -> float:
    """Length of a radial fiber curve from D_0 to D_inf.

    (1/sqrt 2) int sqrt(u'') drho becomes (1/sqrt 2) int sqrt(f_x / k) dpsi under
    x = sin^2(psi / 2); with f piecewise linear the integral is a finite sum.
    """
    grid = state.grid
    slopes = np.diff(grid.f) / grid.dx
    psi = 2.0 * np.arcsin(np.sqrt(grid.x))
    return float(np.sum(np.sqrt(slopes / grid.params.k) * np.diff(psi)) / math.sqrt(2.0))


def usec_max(state) -> float:
    return float(np.max(u_second_interior(state.grid)))


def fiber_diameter_bound(state) -> float:
    """Radial length plus half of the widest angular circle of the fiber sphere."""
    k = state.params.k
    return fiber_length(state) + math.pi / k * math.sqrt(2.0 * usec_max(state))


def tr_chi_max(state) -> float:
    """sup of tr_omega chi = (n - 1)/u', attained towards D_0 where u' -> a_t."""
    return (state.params.n - 1) / float(state.grid.f[0])


def trace_ref_max(state, cls0=None) -> float:
    """max over interior nodes of u''/u_hat0'' + (n - 1) u'/u_hat0'."""
    cls0 = state.cls0 if cls0 is None else cls0
    grid = state.grid
    n = grid.params.n
    a0, b0 = float(cls0.a), float(cls0.b)
    x = grid.x[1:-1]
    fx = (grid.f[2:] - grid.f[:-2]) / (2.0 * grid.dx)
    trace = fx / (b0 - a0) + (n - 1) * grid.f[1:-1] / (a0 + (b0 - a0) * x)
    return float(np.max(trace))


def h_ratio(state) -> np.ndarray:
    """u'' / ((u' - a_t)(b_t - u')) at interior nodes."""
    grid = state.grid
    a, b = float(grid.cls.a), float(grid.cls.b)
    f = grid.f[1:-1]
    return u_second_interior(grid) / ((f - a) * (b - f))


def h_max(state) -> float:
    return float(np.max(h_ratio(state)))


def contraction_envelope(state) -> float:
    """max over interior x <= 1/2 of (u' - a_t) e^{-k rho / n}."""
    grid = state.grid
    n = grid.params.n
    x = grid.x[1:-1]
    gap = grid.f[1:-1] - float(grid.cls.a)
    env = gap * ((1.0 - x) / x) ** (1.0 / n)
    return float(np.max(env[x <= 0.5]))


def gh_bound_collapse(state, cls0=None) -> float:
    """Upper bound on d_GH((M, g(t)), (P^{n-1}, a_T g_FS)).

    With F the bundle projection and G any section avoiding D_0, D_inf: points move
    at most one fiber diameter under G.F, distances shrink by at most
    sqrt(b_t) - sqrt(a_t) times the base diameter (from a_t chi <= g and a
    horizontal part <= b_t chi), plus the rescaling from a_t to a_T.
    """
    cls0 = state.cls0 if cls0 is None else cls0
    params = state.params
    if classify_singularity(params, cls0) is CaseLabel.CONTRACT_DIVISOR:
        raise WrongCase("GH bound to the base needs a collapsing or shrinking run")
    a_T, _ = limit_class(params, cls0)
    a_T = max(a_T, 0.0)
    a_t, b_t = float(state.grid.cls.a), float(state.grid.cls.b)
    base = fs_base_diameter(params.n)
    return (
        2.0 * fiber_diameter_bound(state)
        + (math.sqrt(b_t) - math.sqrt(a_t)) * base
        + abs(math.sqrt(a_t) - math.sqrt(a_T)) * base
    )


def divisor_diameter(state) -> float:
    """Diameter of D_0 = (P^{n-1}, a_t g_FS); it must vanish when D_0 is contracted."""
    return math.sqrt(float(state.grid.cls.a)) * fs_base_diameter(state.params.n)


def gh_bound(state) -> float:
    """GH-type convergence bound matched to the case of the run."""
    if classify_singularity(state.params, state.cls0) is CaseLabel.CONTRACT_DIVISOR:
        return divisor_diameter(state)
    return gh_bound_collapse(state)


def phi_tilde_sup(state, rho=PHI_WINDOW) -> float:
    return float(np.max(np.abs(phi_tilde(state.grid, state.t, state.cls0, rho))))


def ricci_eigenvalues(state, j: int) -> tuple[float, float]:
    """(horizontal, fiber) eigenvalues of Ric relative to g at node j.

    From v = n rho - (n - 1) log u' - log u'':  v' = n - (n - 1) u''/u' - u'''/u''.
    """
    grid = state.grid
    if not 2 <= j <= grid.m - 3:
        raise BoundaryNode(f"Ricci eigenvalues need 2 <= j <= {grid.m - 3}, got {j}")
    n, k = grid.params.n, grid.params.k
    usec = u_second_interior(grid)
    ratio = u_third_ratio_interior(grid)
    f = grid.f[1:-1]
    dv = n - (n - 1) * usec / f - ratio
    i = j - 1
    x = grid.x[j]
    d2v = k * x * (1.0 - x) * (dv[i + 1] - dv[i - 1]) / (2.0 * grid.dx)
    return float(dv[i] / f[i]), float(d2v / usec[i])


def calabi_metric(xvec, du: float, d2u: float) -> np.ndarray:
    """g_{ij} = e^{-rho} u' delta_ij + e^{-2 rho} conj(x_i) x_j (u'' - u') at a point of C^n."""
    xvec = np.asarray(xvec, dtype=complex)
    r2 = float(np.sum(np.abs(xvec) ** 2))
    outer = np.outer(np.conj(xvec), xvec)
    return du / r2 * np.eye(xvec.size) + (d2u - du) / r2**2 * outer


def diagnose(state) -> DiagnosticsRecord:
    utr = u_third_ratio_interior(state.grid)[1:-1]
    return DiagnosticsRecord(
        t=float(state.t),
        a_t=float(state.grid.cls.a),
        b_t=float(state.grid.cls.b),
        volume=volume(state),
        usec_max=usec_max(state),
        fiber_len=fiber_length(state),
        fiber_diam_bound=fiber_diameter_bound(state),
        tr_chi_max=tr_chi_max(state),
        trace_ref_max=trace_ref_max(state),
        H_max=h_max(state),
        contraction_env=contraction_envelope(state),
        gh_bound=gh_bound(state),
        phi_tilde_sup=phi_tilde_sup(state),
        utr_min=float(np.min(utr)),
        utr_max=float(np.max(utr)),
    )


# -- certificates over a series -----------------------------------------------

def ratio_to_median(values) -> float:
    values = np.asarray(values, dtype=float)
    return float(np.max(values) / np.median(values))


def _stability(values, times) -> dict:
    ratio = ratio_to_median(values)
    return {
        "ratio_to_median": ratio,
        "limit": STABILITY_LIMIT,
        "pass": bool(ratio <= STABILITY_LIMIT),
        "t": [float(t) for t in times],
        "values": [float(v) for v in values],
    }


def _case_of(series) -> CaseLabel:
    state = series[0][0]
    return classify_singularity(state.params, state.cls0)


def endpoint_certificate(series, rtol: float = 1e-12) -> dict:
    violations = []
    worst = 0.0
    for state, _ in series:
        exact = class_at(state.params, state.cls0, state.t)
        for name, got, want in (
            ("a", state.grid.f[0], float(exact.a)),
            ("b", state.grid.f[-1], float(exact.b)),
        ):
            err = abs(got - want) / abs(want)
            worst = max(worst, err)
            if err > rtol:
                violations.append({"t": float(state.t), "endpoint": name, "rel_err": err})
    return {"pass": not violations, "max_rel_err": worst, "tol": rtol, "violations": violations}


def volume_certificate(series, rtol: float = 1e-6) -> dict:
    state0 = series[0][0]
    n = state0.params.n
    scale = float(state0.cls0.b) ** n / n
    violations = []
    worst = 0.0
    for state, rec in series:
        exact = (rec.b_t**n - rec.a_t**n) / n
        err = abs(rec.volume - exact)
        worst = max(worst, err)
        if err > rtol * scale:
            violations.append({"t": rec.t, "volume": rec.volume, "exact": exact})
    return {"pass": not violations, "max_abs_err": worst, "tol": rtol * scale, "violations": violations}


def collapse_certificates(series) -> dict:
    """Certificates for collapsing and shrinking runs."""
    case = _case_of(series)
    if case is CaseLabel.CONTRACT_DIVISOR:
        raise WrongCase("collapse certificates do not apply to a contracting run")
    state0 = series[0][0]
    params, cls0 = state0.params, state0.cls0
    n, k = params.n, params.k
    T = float(singular_time(params, cls0))
    a_T, _ = limit_class(params, cls0)
    times = [s.t for s, _ in series]

    gap_violations = []
    envelope_ratio, band_min, band_max = [], [], []
    near0, near1 = [], []
    limit_sup, limit_violations = [], []
    for state, _ in series:
        grid = state.grid
        t = state.t
        gap = grid.f[1:-1] - float(grid.cls.a)
        cap = 2 * k * (T - t)
        for j in np.flatnonzero(~((gap > 0) & (gap < cap))):
            gap_violations.append({"t": t, "node": int(j + 1), "gap": float(gap[j]), "cap": cap})

        x = grid.x[1:-1]
        envelope_ratio.append(float(np.max(u_second_interior(grid) / np.minimum(x * (1 - x), T - t))))

        utr = u_third_ratio_interior(grid)
        inner = utr[1:-1]
        band_min.append(float(np.min(inner)))
        band_max.append(float(np.max(np.abs(inner))))
        near0.append(float(utr[int(np.argmin(np.abs(x - 0.01)))]))
        near1.append(float(utr[int(np.argmin(np.abs(x - 0.99)))]))

        # |u - a_T rho| <= (2k(T - t) + |a_t - a_T|) |rho| on the window
        dev = np.abs(reconstruct_u(grid, PHI_WINDOW) - a_T * PHI_WINDOW)
        allowed = (cap + abs(float(grid.cls.a) - a_T)) * np.abs(PHI_WINDOW) + 1e-9
        limit_sup.append(float(np.max(dev)))
        if np.any(dev > allowed):
            limit_violations.append({"t": t, "sup": float(np.max(dev))})

    usec = np.array([r.usec_max for _, r in series])
    tau = T - np.array(times)
    half = np.array(times) >= 0.5 * times[-1]
    decay = usec[half] / tau[half]

    gh = [r.gh_bound for _, r in series]
    lower = -k - THIRD_RATIO_SLACK
    lim0_ok = all(abs(v - k) <= LIMIT_RTOL * k for v in near0)
    lim1_ok = all(abs(v + k) <= LIMIT_RTOL * k for v in near1)
    return {
        "case": case.value,
        "gap_bound": {"pass": not gap_violations, "violations": gap_violations},
        "usec_envelope": _stability(envelope_ratio, times),
        "usec_decay": _stability(decay, np.array(times)[half]),
        "third_ratio_band": {
            "pass": bool(min(band_min) >= lower),
            "min": min(band_min),
            "lower_limit": lower,
            "max_abs": max(band_max),
            "max_abs_over_k": max(band_max) / k,
            "near_x0": near0,
            "near_x1": near1,
            "limits_pass": bool(lim0_ok and lim1_ok),
        },
        "potential_limit": {
            "pass": not limit_violations,
            "sup": limit_sup,
            "violations": limit_violations,
        },
        "gh_decay": {
            "pass": bool(gh[-1] < GH_DECAY * gh[0]),
            "initial": gh[0],
            "final": gh[-1],
            "ratio": gh[-1] / gh[0],
        },
    }


def contraction_growth_exponent(state) -> float:
    """Fitted slope of log(u' - a_t) against (k/n) rho over x in [0.05, 0.3].

    A slope near 1 means u' - a_t grows like e^{k rho / n}, the rate at which
    the metric near the contracted divisor behaves like r^{-2(n-k)/n}.
    """
    grid = state.grid
    if classify_singularity(grid.params, grid.cls) is not CaseLabel.CONTRACT_DIVISOR:
        raise WrongCase("growth exponent is only defined for contracting runs")
    n, k = grid.params.n, grid.params.k
    x = grid.x
    lo, hi = EXPONENT_WINDOW
    sel = (x >= lo) & (x <= hi)
    if np.count_nonzero(sel) < MIN_FIT_NODES:
        raise InsufficientRange(f"only {np.count_nonzero(sel)} nodes in {EXPONENT_WINDOW}")
    s = (k / n) * grid.rho[sel]
    y = np.log(grid.f[sel] - float(grid.cls.a))
    slope, _ = np.polyfit(s, y, 1)
    return float(slope)


def cauchy_gap(state1, state2, x_min: float = 0.2) -> float:
    """sup over x >= x_min of |f(t1) - f(t2)| on a shared grid."""
    x = state1.grid.x
    sel = x >= x_min
    return float(np.max(np.abs(state1.grid.f[sel] - state2.grid.f[sel])))


def contraction_certificates(series, cauchy_times: tuple[float, float] | None = None) -> dict:
    """Certificates for runs where D_0 is contracted.

    ``cauchy_times`` picks the two snapshots (nearest in t) compared away from D_0;
    by default the last two snapshots.
    """
    case = _case_of(series)
    if case is not CaseLabel.CONTRACT_DIVISOR:
        raise WrongCase("contraction certificates need a contracting run")
    times = np.array([s.t for s, _ in series])
    h = [r.H_max for _, r in series]
    env = [r.contraction_env for _, r in series]
    if cauchy_times is None:
        i1, i2 = len(series) - 2, len(series) - 1
    else:
        i1, i2 = (int(np.argmin(np.abs(times - t))) for t in cauchy_times)
    gap = cauchy_gap(series[i1][0], series[i2][0])
    final = series[-1][0]
    slope = contraction_growth_exponent(final)
    div = [r.gh_bound for _, r in series]
    return {
        "case": case.value,
        "h_stability": _stability(h, times),
        "envelope_stability": _stability(env, times),
        "cauchy_off_divisor": {
            "pass": bool(gap <= CAUCHY_TOL),
            "sup": gap,
            "tol": CAUCHY_TOL,
            "t1": float(times[i1]),
            "t2": float(times[i2]),
        },
        "growth_exponent": {
            "pass": bool(EXPONENT_RANGE[0] <= slope <= EXPONENT_RANGE[1]),
            "slope": slope,
            "range": list(EXPONENT_RANGE),
            "provisional": True,
        },
        "gh_decay": {
            "pass": bool(div[-1] < GH_DECAY * div[0]),
            "initial": div[0],
            "final": div[-1],
            "ratio": div[-1] / div[0],
        },
    }


def certify(series) -> dict:
    """All certificates applicable to the run's case, plus an overall verdict."""
    case = _case_of(series)
    checks = {
        "endpoint_exactness": endpoint_certificate(series),
        "volume_identity": volume_certificate(series),
    }
    if case is CaseLabel.CONTRACT_DIVISOR:
        checks.update(contraction_certificates(series))
    else:
        checks.update(collapse_certificates(series))
    checks.pop("case")
    verdict = all(
        c["pass"] for c in checks.values() if not c.get("provisional", False)
    )
    return {"case": case.value, "certificates": checks, "all_pass": verdict}


def certify_records(records, params, cls0) -> dict:
    """Re-check the series-level certificates from diagnostics records alone.

    Node-level checks (slope gap, u'''/u'' band, Cauchy gap, growth exponent)
    need the profiles and are not repeated here.
    """
    case = classify_singularity(params, cls0)
    T = float(singular_time(params, cls0))
    n = params.n
    times = np.array([r.t for r in records])
    endpoint_err = 0.0
    for r in records:
        exact = class_at(params, cls0, r.t)
        endpoint_err = max(
            endpoint_err,
            abs(r.a_t - float(exact.a)) / abs(float(exact.a)),
            abs(r.b_t - float(exact.b)) / abs(float(exact.b)),
        )
    vol_tol = 1e-6 * float(cls0.b) ** n / n
    vol_err = max(abs(r.volume - (r.b_t**n - r.a_t**n) / n) for r in records)
    gh = [r.gh_bound for r in records]
    checks = {
        "endpoint_exactness": {"pass": endpoint_err <= 1e-12, "max_rel_err": endpoint_err},
        "volume_identity": {"pass": vol_err <= vol_tol, "max_abs_err": vol_err, "tol": vol_tol},
        "gh_decay": {"pass": bool(gh[-1] < GH_DECAY * gh[0]), "ratio": gh[-1] / gh[0]},
    }
    if case is CaseLabel.CONTRACT_DIVISOR:
        checks["h_stability"] = _stability([r.H_max for r in records], times)
        checks["envelope_stability"] = _stability([r.contraction_env for r in records], times)
    else:
        half = times >= 0.5 * times[-1]
        usec = np.array([r.usec_max for r in records])
        checks["usec_decay"] = _stability(usec[half] / (T - times[half]), times[half])
    return {
        "case": case.value,
        "certificates": checks,
        "all_pass": all(c["pass"] for c in checks.values()),
    }
