"""Bracketed scalar root finding (bisection/secant hybrid).

Shared by the chi-square quantile, the Tikhonov discrepancy equation and the
constrained-filter solvers.  The hybrid takes a secant step whenever it stays
safely inside the current bracket and falls back to bisection otherwise, so it
inherits bisection's guaranteed convergence on any sign-changing bracket.
"""

from __future__ import annotations

from typing import Callable

from .errors import NoRoot


def expand_bracket(
    f: Callable[[float], float],
    lo: float,
    hi: float,
    *,
    grow: float = 2.0,
    max_expansions: int = 200,
) -> tuple[float, float, float, float]:
    """Grow ``hi`` geometrically until ``f`` changes sign on ``[lo, hi]``.

    Returns ``(lo, hi, f_lo, f_hi)``.  Raises :class:`NoRoot` if no sign
    change is found within the expansion budget.
    """
    f_lo = f(lo)
    f_hi = f(hi)
    if f_lo == 0.0:
        return lo, lo, 0.0, 0.0
    for _ in range(max_expansions):
        if f_hi == 0.0 or (f_lo < 0.0) != (f_hi < 0.0):
            return lo, hi, f_lo, f_hi
        lo, f_lo = hi, f_hi
        hi = hi * grow
        f_hi = f(hi)
    raise NoRoot(f"no sign change found while expanding bracket up to {hi!r}")


def find_root(
    f: Callable[[float], float],
    lo: float,
    hi: float,
    *,
    f_lo: float | None = None,
    f_hi: float | None = None,
    xtol_rel: float = 1e-14,
    ftol: float = 0.0,
    max_iter: int = 300,
) -> float:
    """Root of ``f`` on a sign-changing bracket ``[lo, hi]``.

    ``ftol`` is an absolute tolerance on ``|f|`` allowing early exit;
    ``xtol_rel`` bounds the final bracket width relative to its location.
    """
    a, b = float(lo), float(hi)
    fa = f(a) if f_lo is None else float(f_lo)
    fb = f(b) if f_hi is None else float(f_hi)
    if fa == 0.0:
        return a
    if fb == 0.0:
        return b
    if (fa < 0.0) == (fb < 0.0):
        raise NoRoot(f"bracket [{a!r}, {b!r}] does not change sign")

    x, fx = (a, fa) if abs(fa) < abs(fb) else (b, fb)
    for _ in range(max_iter):
        if abs(fx) <= ftol:
            return x
        # secant through the bracket endpoints, clipped to the interior
        denom = fb - fa
        if denom != 0.0:
            s = a - fa * (b - a) / denom
        else:
            s = 0.5 * (a + b)
        width = b - a
        if not (a + 0.01 * width <= s <= b - 0.01 * width):
            s = 0.5 * (a + b)
        fs = f(s)
        if fs == 0.0:
            return s
        if (fs < 0.0) == (fa < 0.0):
            a, fa = s, fs
        else:
            b, fb = s, fs
        x, fx = (a, fa) if abs(fa) < abs(fb) else (b, fb)
        if abs(b - a) <= xtol_rel * max(abs(a), abs(b)):
            return x
    return x
