"""Conjugate gradients for implicit SPD operators and a small L-BFGS."""

from dataclasses import dataclass, field

import numpy as np

from .errors import ConvergenceError, NumericalContractError


@dataclass
class CGResult:
    x: np.ndarray
    residual: float     # ||b - A x|| / ||b||
    iterations: int


def conjugate_gradient(apply, b, x0=None, precond=None, tol=1e-7, maxiter=2000):
    """Solve ``A x = b`` for SPD ``A`` given as a callable.

    ``precond`` applies an approximation of ``A^{-1}``.  Convergence is
    judged on the true relative residual; on failure a
    :class:`ConvergenceError` carries the best iterate seen.
    """
    b = np.asarray(b, dtype=float)
    bnorm = float(np.linalg.norm(b))
    if bnorm == 0.0:
        return CGResult(np.zeros_like(b), 0.0, 0)
    x = np.zeros_like(b) if x0 is None else np.array(x0, dtype=float)
    r = b - apply(x)
    z = precond(r) if precond is not None else r
    p = z.copy()
    rz = float(r @ z)
    best_x, best_res = x.copy(), float(np.linalg.norm(r)) / bnorm
    if best_res <= tol:
        return CGResult(x, best_res, 0)
    for it in range(1, maxiter + 1):
        if best_res <= tol:
            break
        q = apply(p)
        pq = float(p @ q)
        if pq <= 0:
            raise ConvergenceError("operator is not positive definite along a search direction",
                                   best=best_x, residual=best_res, iterations=it)
        alpha = rz / pq
        x += alpha * p
        if it % 50 == 0:
            r = b - apply(x)
        else:
            r -= alpha * q
        res = float(np.linalg.norm(r)) / bnorm
        if res < best_res:
            best_x, best_res = x.copy(), res
        if res <= tol:
            # recursive residuals drift; confirm with the true one
            r = b - apply(x)
            res = float(np.linalg.norm(r)) / bnorm
            if res <= tol:
                return CGResult(x, res, it)
        z = precond(r) if precond is not None else r
        rz_new = float(r @ z)
        p = z + (rz_new / rz) * p
        rz = rz_new
    else:
        raise ConvergenceError(f"CG did not reach {tol:g} in {maxiter} iterations (residual {best_res:.3g})",
                               best=best_x, residual=best_res, iterations=maxiter)
    return CGResult(best_x, best_res, it)


@dataclass
class MinimizeResult:
    x: np.ndarray
    fun: float
    grad: np.ndarray
    nit: int
    nfev: int
    success: bool
    message: str
    history: list = field(default_factory=list)


def _safe_eval(fg, x):
    try:
        f, g = fg(x)
    except NumericalContractError:
        return np.inf, None
    f = float(f)
    if not np.isfinite(f):
        return np.inf, None
    return f, np.asarray(g, dtype=float)


def lbfgs(fg, x0, maxiter=20, gtol=1e-8, memory=10, c1=1e-4, c2=0.9, max_backtracks=40, max_expansions=10):
    """Minimize ``f`` given ``fg(x) -> (f, grad)``.

    The line search starts at the unit quasi-Newton step, then tries the
    minimiser of the quadratic through ``f(0)``, ``f'(0)`` and the trial
    value, and backtracks until the Armijo condition holds.  An accepted
    step along which the slope is still steeper than ``c2`` times the initial
    one is doubled while that keeps decreasing ``f``, so curvature pairs stay
    usable in non-convex valleys.  On an exact quadratic the interpolated step
    is the exact line minimum.  Objectives
    that raise :class:`NumericalContractError` count as ``+inf``.  Every
    accepted step decreases ``f``; ``history`` lists the accepted values.
    """
    x = np.array(x0, dtype=float)
    f, g = _safe_eval(fg, x)
    if g is None:
        raise NumericalContractError("objective is not finite at the starting point")
    nfev = 1
    history = [f]
    S, Y = [], []
    message = "iteration limit"
    success = False
    nit = 0
    for nit in range(maxiter + 1):
        if float(np.max(np.abs(g), initial=0.0)) <= gtol:
            success, message = True, "gradient below tolerance"
            break
        if nit == maxiter:
            break
        p = _two_loop(g, S, Y)
        slope = float(g @ p)
        if slope >= 0:
            S.clear()
            Y.clear()
            p = -g
            slope = float(g @ p)
        alpha = 1.0 if S else min(1.0, 1.0 / float(np.linalg.norm(g)))
        accepted = None
        for _ in range(max_backtracks):
            fa, ga = _safe_eval(fg, x + alpha * p)
            nfev += 1
            cands = []
            if ga is not None:
                cands.append((fa, alpha, ga))
                curv = fa - f - alpha * slope
                if curv > 0:
                    a_star = -slope * alpha * alpha / (2.0 * curv)
                    if abs(a_star - alpha) > 1e-12 * alpha:
                        fs, gs = _safe_eval(fg, x + a_star * p)
                        nfev += 1
                        if gs is not None:
                            cands.append((fs, a_star, gs))
                    next_alpha = min(max(a_star, 0.1 * alpha), 0.5 * alpha)
                else:
                    next_alpha = 0.5 * alpha
            else:
                next_alpha = 0.25 * alpha
            ok = [c for c in cands if c[0] <= f + c1 * c[1] * slope]
            if ok:
                accepted = min(ok, key=lambda c: c[0])
                break
            alpha = next_alpha
        if accepted is None:
            message = "line search failed"
            break
        f_new, alpha, g_new = accepted
        for _ in range(max_expansions):
            if float(g_new @ p) >= c2 * slope:
                break
            trial = 2.0 * alpha
            ft, gt = _safe_eval(fg, x + trial * p)
            nfev += 1
            if gt is None or ft > f + c1 * trial * slope or ft >= f_new:
                break
            f_new, alpha, g_new = ft, trial, gt
        s = alpha * p
        y = g_new - g
        if float(s @ y) > 1e-12 * float(np.linalg.norm(s) * np.linalg.norm(y)):
            S.append(s)
            Y.append(y)
            if len(S) > memory:
                S.pop(0)
                Y.pop(0)
        x = x + s
        f, g = f_new, g_new
        history.append(f)
    return MinimizeResult(x, f, g, nit, nfev, success, message, history)


def _two_loop(g, S, Y):
    q = g.copy()
    alphas = []
    for s, y in zip(reversed(S), reversed(Y)):
        rho = 1.0 / float(y @ s)
        a = rho * float(s @ q)
        alphas.append((a, rho, s, y))
        q -= a * y
    if S:
        q *= float(S[-1] @ Y[-1]) / float(Y[-1] @ Y[-1])
    for a, rho, s, y in reversed(alphas):
        b = rho * float(y @ q)
        q += (a - b) * s
    return -q
