"""Bessel functions of the first kind, derivative zeros and basis norms.

Everything here is self-contained double-precision numerics (no scipy):
ascending series where it is safe, backward (Miller) recurrence elsewhere,
bracketing + bisection for the zeros of J'_nu, and composite Gauss-Legendre
quadrature for the radial overlap integrals.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

NU_MAX = 200
X_MAX = 500.0

_BRACKET_STEP = math.pi / 8.0
_BRACKET_LIMIT = 600.0
_BISECT_TOL = 1e-12
ROOT_RESIDUAL_TOL = 1e-10


class BesselDomainError(ValueError):
    """Argument outside the supported (nu, x) envelope."""


class RootSearchError(RuntimeError):
    """Bracketing ran past the search limit before finding enough roots."""


class QuadratureError(RuntimeError):
    """Composite quadrature failed its self-consistency refinement check."""


@dataclass(frozen=True)
class ModeRoot:
    """One radial mode: j-th solution of J'_nu(k*R) = 0 (k=0 counts for nu=0)."""

    nu: int
    j: int
    k: float


def _check_envelope(nu: int, x: float) -> None:
    if not isinstance(nu, (int, np.integer)) or nu < 0 or nu > NU_MAX:
        raise BesselDomainError(f"order nu={nu} outside [0, {NU_MAX}]")
    if not math.isfinite(x) or x < 0.0 or x > X_MAX:
        raise BesselDomainError(f"argument x={x} outside [0, {X_MAX}]")


def _series_j(nu: int, x: float) -> float:
    # sum_m (-1)^m (x/2)^(nu+2m) / (m! (m+nu)!), Kahan-compensated.
    half = 0.5 * x
    term = 1.0
    for i in range(1, nu + 1):
        term *= half / i
    if term == 0.0:
        return 0.0
    q = half * half
    total = term
    comp = 0.0
    for m in range(1, 400):
        term *= -q / (m * (m + nu))
        y = term - comp
        t = total + y
        comp = (t - total) - y
        total = t
        if abs(term) < 1e-18 * (abs(total) + 1e-300) and m * (m + nu) > q:
            break
    return total


def _miller_j(nu: int, x: float) -> float:
    # Downward recurrence, normalized with J_0 + 2 sum_k J_{2k} = 1.
    top = max(nu, int(x))
    start = top + int(math.sqrt(250.0 * (top + 1))) + 12
    if start % 2:
        start += 1
    jp = 0.0
    jc = 1e-300
    even_sum = 0.0
    target = 0.0
    two_over_x = 2.0 / x
    for k in range(start, 0, -1):
        jm = k * two_over_x * jc - jp
        jp = jc
        jc = jm
        km = k - 1
        if km == nu:
            target = jc
        if km % 2 == 0 and km > 0:
            even_sum += jc
        if abs(jc) > 1e250:
            jc *= 1e-250
            jp *= 1e-250
            even_sum *= 1e-250
            target *= 1e-250
    norm = jc + 2.0 * even_sum  # jc is now J~_0
    return target / norm


def _bessel_j_raw(nu: int, x: float) -> float:
    if x == 0.0:
        return 1.0 if nu == 0 else 0.0
    # The ascending series is safe while its terms never grow (x^2 <= 4(nu+1))
    # or while the cancellation stays a few orders of magnitude (x < 12);
    # everywhere else the backward recurrence is the stable route.
    if x < 12.0 or x * x <= 4.0 * (nu + 1.0):
        return _series_j(nu, x)
    return _miller_j(nu, x)


def bessel_j(nu: int, x: float) -> float:
    """J_nu(x) for integer nu in [0, 200] and x in [0, 500]."""
    _check_envelope(nu, x)
    return _bessel_j_raw(int(nu), float(x))


def _bessel_j_prime_raw(nu: int, x: float) -> float:
    if nu == 0:
        return -_bessel_j_raw(1, x)
    return 0.5 * (_bessel_j_raw(nu - 1, x) - _bessel_j_raw(nu + 1, x))


def bessel_j_prime(nu: int, x: float) -> float:
    """dJ_nu/dx via J'_nu = (J_{nu-1} - J_{nu+1})/2, with J'_0 = -J_1."""
    _check_envelope(nu, x)
    return _bessel_j_prime_raw(int(nu), float(x))


def _bisect_prime_zero(nu: int, lo: float, hi: float) -> float:
    flo = _bessel_j_prime_raw(nu, lo)
    while hi - lo > _BISECT_TOL:
        mid = 0.5 * (lo + hi)
        fmid = _bessel_j_prime_raw(nu, mid)
        if fmid == 0.0:
            return mid
        if (flo < 0.0) != (fmid < 0.0):
            hi = mid
        else:
            lo, flo = mid, fmid
    return 0.5 * (lo + hi)


def find_derivative_zeros(nu: int, count: int, radius: float = 1.0) -> list[ModeRoot]:
    """First `count` solutions of J'_nu(k*radius) = 0, ascending in k.

    For nu = 0 the first solution is k = 0, stored exactly (the constant
    basis element). Positive roots are bracketed on a pi/8 grid in k*radius
    and bisected to 1e-12.
    """
    if not isinstance(nu, (int, np.integer)) or nu < 0 or nu > NU_MAX:
        raise BesselDomainError(f"order nu={nu} outside [0, {NU_MAX}]")
    if count < 1:
        raise ValueError("count must be >= 1")
    if radius <= 0.0:
        raise ValueError("radius must be positive")
    nu = int(nu)
    roots: list[ModeRoot] = []
    if nu == 0:
        roots.append(ModeRoot(0, 0, 0.0))
    t0 = _BRACKET_STEP
    f0 = _bessel_j_prime_raw(nu, t0)
    while len(roots) < count:
        t1 = t0 + _BRACKET_STEP
        if t1 > _BRACKET_LIMIT:
            raise RootSearchError(
                f"found {len(roots)}/{count} zeros of J'_{nu} below k*R = {_BRACKET_LIMIT}"
            )
        f1 = _bessel_j_prime_raw(nu, t1)
        if f1 == 0.0 and abs(f0) > 1e-200:
            root = t1
            roots.append(ModeRoot(nu, len(roots), root / radius))
        elif f0 * f1 < 0.0:
            root = _bisect_prime_zero(nu, t0, t1)
            if abs(_bessel_j_prime_raw(nu, root)) > ROOT_RESIDUAL_TOL:
                raise RootSearchError(
                    f"bisection residual too large at k*R={root} for nu={nu}"
                )
            roots.append(ModeRoot(nu, len(roots), root / radius))
        t0, f0 = t1, f1
    return roots


def derivative_zeros_up_to(nu: int, k_limit: float, radius: float = 1.0) -> list[ModeRoot]:
    """All solutions of J'_nu(k*radius) = 0 with k <= k_limit, ascending in k."""
    if k_limit < 0.0:
        raise ValueError("k_limit must be non-negative")
    roots: list[ModeRoot] = []
    if nu == 0:
        roots.append(ModeRoot(0, 0, 0.0))
    t_limit = k_limit * radius
    t0 = _BRACKET_STEP
    f0 = _bessel_j_prime_raw(int(nu), t0)
    while t0 <= t_limit + _BRACKET_STEP:
        t1 = t0 + _BRACKET_STEP
        if t1 > _BRACKET_LIMIT:
            raise RootSearchError(f"cutoff {k_limit} beyond search limit for nu={nu}")
        f1 = _bessel_j_prime_raw(int(nu), t1)
        if f0 * f1 < 0.0 or (f1 == 0.0 and abs(f0) > 1e-200):
            root = t1 if f1 == 0.0 else _bisect_prime_zero(int(nu), t0, t1)
            if root / radius > k_limit:
                break
            roots.append(ModeRoot(int(nu), len(roots), root / radius))
        t0, f0 = t1, f1
    return roots


def normalization_constant(nu: int, k: float, radius: float = 1.0) -> float:
    """N_{nu,j} = 1/sqrt(2 pi int_0^R rho J_nu^2(k rho) d rho), in closed form.

    Valid only when (nu, k) is a derivative-zero pair; then the radial
    integral collapses to (R^2/2 - nu^2/(2 k^2)) J_nu^2(kR), and to R^2/2
    for the constant mode (nu = 0, k = 0).
    """
    if k == 0.0:
        if nu != 0:
            raise ValueError("k = 0 is a valid mode only for nu = 0")
        return 1.0 / math.sqrt(math.pi * radius * radius)
    kr = k * radius
    if abs(_bessel_j_prime_raw(int(nu), kr)) > 1e-8:
        raise ValueError(
            f"(nu={nu}, k={k}) is not a derivative-zero pair; closed form invalid"
        )
    radial = (radius * radius / 2.0 - nu * nu / (2.0 * k * k)) * _bessel_j_raw(
        int(nu), kr
    ) ** 2
    return 1.0 / math.sqrt(2.0 * math.pi * radial)


_GL_NODES, _GL_WEIGHTS = np.polynomial.legendre.leggauss(20)


def _gauss_legendre(f, a: float, b: float, panels: int) -> float:
    edges = np.linspace(a, b, panels + 1)
    total = 0.0
    for lo, hi in zip(edges[:-1], edges[1:]):
        mid = 0.5 * (lo + hi)
        halfw = 0.5 * (hi - lo)
        xs = mid + halfw * _GL_NODES
        total += halfw * float(np.dot(_GL_WEIGHTS, [f(x) for x in xs]))
    return total


def lommel_orthogonality(nu: int, k_a: float, k_b: float, radius: float = 1.0) -> float:
    """int_0^R rho J_nu(k_a rho) J_nu(k_b rho) d rho, by quadrature.

    Validation-only: ~0 for distinct derivative-zero roots, > 0 for k_a = k_b.
    """
    nu = int(nu)
    for k in (k_a, k_b):
        if k == 0.0:
            if nu != 0:
                raise ValueError("k = 0 is a root only for nu = 0")
        elif abs(_bessel_j_prime_raw(nu, k * radius)) > 1e-8:
            raise ValueError(f"k={k} is not a derivative zero for nu={nu}")

    def integrand(rho: float) -> float:
        return rho * _bessel_j_raw(nu, k_a * rho) * _bessel_j_raw(nu, k_b * rho)

    panels = max(8, int((k_a + k_b) * radius / math.pi) + 4)
    coarse = _gauss_legendre(integrand, 0.0, radius, panels)
    fine = _gauss_legendre(integrand, 0.0, radius, 2 * panels)
    if abs(fine - coarse) > 1e-10 + 1e-10 * abs(fine):
        raise QuadratureError(
            f"quadrature not converged: {coarse} vs {fine} at {panels} panels"
        )
    return fine
