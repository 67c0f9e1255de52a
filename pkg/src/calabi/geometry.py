"""Static geometry of the P^1-bundles M_{n,k} = P(H^k + O) over P^{n-1}.

Kahler classes are written as (b/k)[D_inf] - (a/k)[D_0] with 0 < a < b. Under the
Kahler-Ricci flow the coefficients move linearly in time,

    a_t = a_0 + (k - n) t,    b_t = b_0 - (k + n) t,

until the class leaves the Kahler cone at the singular time T.

Inputs given as ints or ``fractions.Fraction`` are classified and timed in exact
rational arithmetic; float inputs fall back to a relative tolerance for the
equality case a_0 (n + k) = b_0 (n - k).
"""
from __future__ import annotations

import enum
import math
import numbers
from dataclasses import dataclass
from fractions import Fraction
from typing import Union

import numpy as np

from .errors import NonKahlerClass, TimeOutOfRange

Real = Union[int, float, Fraction]

EQUALITY_RTOL = 1e-12


@dataclass(frozen=True)
class ManifoldParams:
    """Complex dimension ``n`` and bundle twist ``k`` of M_{n,k}."""

    n: int
    k: int

    def __post_init__(self):
        if int(self.n) != self.n or int(self.k) != self.k:
            raise ValueError(f"n and k must be integers, got n={self.n!r}, k={self.k!r}")
        if self.n < 2 or self.k < 1:
            raise ValueError(f"need n >= 2 and k >= 1, got n={self.n}, k={self.k}")


@dataclass(frozen=True)
class KahlerClass:
    """Endpoint values (a, b) of u' for the class (b/k)[D_inf] - (a/k)[D_0].

    Construction does not check positivity; use :func:`validate_class`.
    """

    a: Real
    b: Real


class CaseLabel(str, enum.Enum):
    COLLAPSE_TO_BASE = "CollapseToBase"
    SHRINK_TO_POINT = "ShrinkToPoint"
    CONTRACT_DIVISOR = "ContractDivisor"

    def __str__(self) -> str:
        return self.value


def validate_class(params: ManifoldParams, cls: KahlerClass) -> None:
    if not (math.isfinite(cls.a) and math.isfinite(cls.b)):
        raise NonKahlerClass(f"class coefficients must be finite, got a={cls.a}, b={cls.b}")
    if cls.a <= 0:
        raise NonKahlerClass(f"need a > 0, got a={cls.a}")
    if cls.a >= cls.b:
        raise NonKahlerClass(f"need a < b, got a={cls.a}, b={cls.b}")


def _is_exact(*values) -> bool:
    return all(isinstance(v, numbers.Rational) for v in values)


def _balance(params: ManifoldParams, cls: KahlerClass) -> int:
    """Sign of a (n + k) - b (n - k); zero is the first Chern class direction."""
    n, k = params.n, params.k
    lhs = cls.a * (n + k)
    rhs = cls.b * (n - k)
    if _is_exact(cls.a, cls.b):
        lhs, rhs = Fraction(lhs), Fraction(rhs)
        return (lhs > rhs) - (lhs < rhs)
    if abs(lhs - rhs) <= EQUALITY_RTOL * max(abs(lhs), abs(rhs)):
        return 0
    return 1 if lhs > rhs else -1


def classify_singularity(params: ManifoldParams, cls0: KahlerClass) -> CaseLabel:
    validate_class(params, cls0)
    if params.k >= params.n:
        return CaseLabel.COLLAPSE_TO_BASE
    sign = _balance(params, cls0)
    if sign > 0:
        return CaseLabel.COLLAPSE_TO_BASE
    if sign == 0:
        return CaseLabel.SHRINK_TO_POINT
    return CaseLabel.CONTRACT_DIVISOR


def singular_time(params: ManifoldParams, cls0: KahlerClass) -> Real:
    """First time the evolving class leaves the Kahler cone.

    Returns a ``Fraction`` when both coefficients are rational, else a float.
    """
    case = classify_singularity(params, cls0)
    n, k = params.n, params.k
    a, b = cls0.a, cls0.b
    if _is_exact(a, b):
        a, b = Fraction(a), Fraction(b)
    if case is CaseLabel.COLLAPSE_TO_BASE:
        return (b - a) / (2 * k)
    return a / (n - k)


def limit_class(params: ManifoldParams, cls0: KahlerClass) -> tuple[float, float]:
    """(a_T, b_T): the class coefficients extrapolated to the singular time."""
    T = singular_time(params, cls0)
    n, k = params.n, params.k
    return (float(cls0.a + (k - n) * T), float(cls0.b - (k + n) * T))


def class_at(params: ManifoldParams, cls0: KahlerClass, t: Real) -> KahlerClass:
    T = singular_time(params, cls0)
    if t < 0 or t >= T:
        raise TimeOutOfRange(f"t={t} outside [0, T={float(T)})")
    n, k = params.n, params.k
    return KahlerClass(cls0.a + (k - n) * t, cls0.b - (k + n) * t)


def _sigmoid_parts(z):
    # s = e^z/(1+e^z) and s(1-s), both stable for large |z|
    s = 0.5 * (1.0 + np.tanh(0.5 * z))
    ds = 0.25 / np.cosh(0.5 * z) ** 2
    return s, ds


def reference_potential(params: ManifoldParams, cls: KahlerClass, rho):
    """Return (u, u', u'') of  u = a rho + ((b - a)/k) log(e^{k rho} + 1)."""
    k = params.k
    a, b = float(cls.a), float(cls.b)
    rho = np.asarray(rho, dtype=float)
    z = k * rho
    s, ds = _sigmoid_parts(z)
    u = a * rho + (b - a) / k * np.logaddexp(0.0, z)
    du = a + (b - a) * s
    d2u = k * (b - a) * ds
    if rho.ndim == 0:
        return float(u), float(du), float(d2u)
    return u, du, d2u


def reference_det(params: ManifoldParams, cls: KahlerClass, rho):
    """det g = e^{-n rho} (u')^{n-1} u'' for the reference potential."""
    _, du, d2u = reference_potential(params, cls, rho)
    n = params.n
    out = np.exp(-n * np.asarray(rho, dtype=float)) * du ** (n - 1) * d2u
    return float(out) if np.ndim(out) == 0 else out


def fs_base_diameter(n: int) -> float:
    """Diameter of (P^{n-1}, g_FS) with Riemannian form 2 Re(chi_{ij} dz^i dz^j).

    Geodesics of the Fubini-Study metric lie in linear P^1's, each a round sphere of
    radius 1/sqrt(2) in this normalization, so the value does not depend on n.
    """
    if n < 2:
        raise ValueError(f"need n >= 2, got {n}")
    return math.pi / math.sqrt(2.0)


def limit_description(params: ManifoldParams, cls0: KahlerClass) -> str:
    case = classify_singularity(params, cls0)
    n, k = params.n, params.k
    a_T, _ = limit_class(params, cls0)
    if case is CaseLabel.COLLAPSE_TO_BASE:
        return f"(P^{n - 1}, a_T * g_FS) with a_T = {a_T:.12g}"
    if case is CaseLabel.SHRINK_TO_POINT:
        return "a point"
    return f"metric completion of M \\ D_0, homeomorphic to the orbifold P^{n}/Z_{k}"
