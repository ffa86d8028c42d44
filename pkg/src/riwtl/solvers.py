"""Penalized weighted least squares by cyclic coordinate descent.

Both solvers work on the weighted Gram matrix ``X' W X / N`` and the vector
``X' W y / N`` so one sweep costs O(p^2) regardless of n, and the gradient is
kept up to date incrementally.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np
from numba import njit
from numpy.typing import ArrayLike, NDArray

from riwtl.core import DimensionError

SCAD_A = 3.7
POLISH_EVERY = 10
KKT_REL = 1e-12


class ConvergenceError(RuntimeError):
    """Coordinate descent hit ``max_iter``; ``beta`` holds the last iterate."""

    def __init__(self, message: str, beta: NDArray[np.float64]):
        super().__init__(message)
        self.beta = beta


class DegenerateProblemError(ValueError):
    pass


class NonUniqueSolutionWarning(UserWarning):
    pass


@dataclass(frozen=True)
class SolverOptions:
    max_iter: int = 10_000
    tol: float = 1e-7
    standardize: bool = True
    warm_start: Optional[NDArray[np.float64]] = None

    def __post_init__(self):
        if not self.tol > 0:
            raise ValueError("tol must be positive")
        if self.max_iter < 1:
            raise ValueError("max_iter must be positive")


@dataclass(frozen=True)
class WeightedProblem:
    """(1/2N) sum_i w_i (y_i - x_i'b)^2 + lam * ||b||_1 with N = ``denom``.

    ``denom`` is the total contributing sample count, which may exceed the
    number of nonzero weights.
    """

    x: NDArray[np.float64]
    y: NDArray[np.float64]
    obs_weights: NDArray[np.float64]
    denom: float
    lam: float

    def __post_init__(self):
        x = np.asarray(self.x, dtype=np.float64)
        y = np.asarray(self.y, dtype=np.float64)
        w = np.asarray(self.obs_weights, dtype=np.float64)
        if x.ndim != 2 or y.shape != (x.shape[0],) or w.shape != y.shape:
            raise DimensionError(
                f"incompatible shapes x{x.shape}, y{y.shape}, weights{w.shape}"
            )
        if not np.all(np.isfinite(w)) or np.any(w < 0):
            raise ValueError("observation weights must be finite and nonnegative")
        if not self.denom > 0:
            raise ValueError("denom must be positive")
        if not self.lam >= 0:
            raise ValueError("lambda must be nonnegative")
        object.__setattr__(self, "x", x)
        object.__setattr__(self, "y", y)
        object.__setattr__(self, "obs_weights", w)

    @classmethod
    def unweighted(cls, x, y, lam):
        x = np.asarray(x, dtype=np.float64)
        return cls(x, y, np.ones(x.shape[0]), float(x.shape[0]), lam)

    def gram(self):
        # zero-weight rows are dropped so they cannot perturb the sums even by rounding
        keep = self.obs_weights > 0
        x, w = self.x[keep], self.obs_weights[keep]
        xw = x * w[:, None]
        return (xw.T @ x) / self.denom, (xw.T @ self.y[keep]) / self.denom

    def objective(self, beta: ArrayLike) -> float:
        r = self.y - self.x @ np.asarray(beta)
        return float(0.5 * np.sum(self.obs_weights * r * r) / self.denom
                     + self.lam * np.abs(beta).sum())

    def gradient(self, beta: ArrayLike) -> NDArray[np.float64]:
        """(1/N) X' W (y - X beta); the KKT conditions are stated in terms of this."""
        r = self.y - self.x @ np.asarray(beta)
        return self.x.T @ (self.obs_weights * r) / self.denom


def soft_threshold(z: float, gamma: float) -> float:
    if gamma < 0:
        raise ValueError("threshold must be nonnegative")
    return float(np.sign(z) * max(abs(z) - gamma, 0.0))


def kkt_violation(grad: NDArray[np.float64], beta: NDArray[np.float64], lam: float) -> float:
    """Largest violation of the lasso subgradient conditions."""
    nz = beta != 0
    v_nz = np.abs(grad[nz] - lam * np.sign(beta[nz]))
    v_z = np.maximum(np.abs(grad[~nz]) - lam, 0.0)
    return float(max(v_nz.max(initial=0.0), v_z.max(initial=0.0)))


@njit(cache=True)
def _soft(z, g):
    if z > g:
        return z - g
    if z < -g:
        return z + g
    return 0.0


@njit(cache=True)
def _kkt(grad, beta, lam, free):
    worst = 0.0
    for j in range(beta.shape[0]):
        if not free[j]:
            continue
        if beta[j] > 0:
            v = abs(grad[j] - lam)
        elif beta[j] < 0:
            v = abs(grad[j] + lam)
        else:
            v = abs(grad[j]) - lam
        if v > worst:
            worst = v
    return worst


@njit(cache=True)
def _polish(G, c, lam, beta, free, tol):
    """Solve the KKT system on the current support and signs; keep it only if it verifies."""
    p = c.shape[0]
    m = 0
    for j in range(p):
        if beta[j] != 0.0:
            m += 1
    if m == 0:
        return False
    idx = np.empty(m, dtype=np.int64)
    m = 0
    for j in range(p):
        if beta[j] != 0.0:
            idx[m] = j
            m += 1
    Gaa = np.empty((m, m))
    rhs = np.empty(m)
    for a in range(m):
        ja = idx[a]
        rhs[a] = c[ja] - (lam if beta[ja] > 0 else -lam)
        for b in range(m):
            Gaa[a, b] = G[ja, idx[b]]
    try:
        sol = np.linalg.solve(Gaa, rhs)
    except Exception:
        return False
    for a in range(m):
        if not np.isfinite(sol[a]) or sol[a] * beta[idx[a]] <= 0.0:
            return False
    cand = np.zeros(p)
    for a in range(m):
        cand[idx[a]] = sol[a]
    grad = c - G @ cand
    if _kkt(grad, cand, lam, free) > tol:
        return False
    for j in range(p):
        beta[j] = cand[j]
    return True


@njit(cache=True)
def _cd_lasso(G, c, lam, beta, scale, free, tol, max_iter):
    p = c.shape[0]
    # rounding in c - G beta grows with the size of the moments (large importance weights)
    ktol = max(tol, KKT_REL * np.max(np.abs(c))) if p > 0 else tol
    grad = c - G @ beta
    for it in range(max_iter):
        max_change = 0.0
        for j in range(p):
            if not free[j]:
                continue
            gjj = G[j, j]
            old = beta[j]
            new = _soft(grad[j] + gjj * old, lam) / gjj
            if new != old:
                d = new - old
                beta[j] = new
                for k in range(p):
                    grad[k] -= d * G[k, j]
                ch = abs(d) * scale[j]
                if ch > max_change:
                    max_change = ch
        if max_change < tol:
            grad = c - G @ beta
            if _kkt(grad, beta, lam, free) <= ktol:
                return it + 1, True
        if max_change < tol or (it + 1) % POLISH_EVERY == 0:
            if _polish(G, c, lam, beta, free, ktol):
                return it + 1, True
            grad = c - G @ beta
    return max_iter, False


@njit(cache=True)
def _scad_univariate(z, v, lam, a):
    """argmin_b (v/2)(b - z)^2 + scad(|b|), exact for any curvature v > 0."""
    s = 1.0 if z >= 0 else -1.0
    az = abs(z)
    best_b = 0.0
    best_f = 0.5 * v * az * az
    # candidates on |b| in [0, lam], [lam, a*lam], [a*lam, inf) plus the knots
    cands = np.empty(5)
    cands[0] = min(max(az - lam / v, 0.0), lam)
    denom = v - 1.0 / (a - 1.0)
    if denom != 0.0:
        cands[1] = min(max((v * az - a * lam / (a - 1.0)) / denom, lam), a * lam)
    else:
        cands[1] = lam
    cands[2] = max(az, a * lam)
    cands[3] = lam
    cands[4] = a * lam
    for i in range(5):
        b = cands[i]
        if b <= lam:
            pen = lam * b
        elif b <= a * lam:
            pen = (2.0 * a * lam * b - b * b - lam * lam) / (2.0 * (a - 1.0))
        else:
            pen = 0.5 * (a + 1.0) * lam * lam
        f = 0.5 * v * (b - az) * (b - az) + pen
        if f < best_f:
            best_f = f
            best_b = b
    return s * best_b


@njit(cache=True)
def _cd_scad(G, c, lam, a, beta, scale, free, tol, max_iter):
    p = c.shape[0]
    grad = c - G @ beta
    for it in range(max_iter):
        max_change = 0.0
        for j in range(p):
            if not free[j]:
                continue
            gjj = G[j, j]
            old = beta[j]
            new = _scad_univariate((grad[j] + gjj * old) / gjj, gjj, lam, a)
            if new != old:
                d = new - old
                beta[j] = new
                for k in range(p):
                    grad[k] -= d * G[k, j]
                ch = abs(d) * scale[j]
                if ch > max_change:
                    max_change = ch
        if max_change < tol:
            return it + 1, True
    return max_iter, False


def _prepare(G, opts: SolverOptions):
    diag = np.diag(G).copy()
    free = diag > 0
    if opts.standardize:
        scale = np.sqrt(np.where(free, diag, 0.0))
    else:
        scale = np.ones_like(diag)
    return free, scale


def _start(p, free, warm):
    if warm is None:
        return np.zeros(p)
    beta = np.array(warm, dtype=np.float64)
    if beta.shape != (p,):
        raise DimensionError(f"warm start has shape {beta.shape}, expected ({p},)")
    beta[~free] = 0.0
    return beta


def _check_lambda_zero(lam, n_eff, p):
    if lam == 0 and p > n_eff:
        warnings.warn(
            "lambda = 0 with p > n: the minimizer is not unique",
            NonUniqueSolutionWarning,
            stacklevel=3,
        )


def solve_gram(G, c, lam, opts: SolverOptions = SolverOptions(), warm=None) -> NDArray[np.float64]:
    """Lasso on precomputed moments; shared by the single-fit and path routines."""
    free, scale = _prepare(G, opts)
    beta = _start(c.shape[0], free, warm if warm is not None else opts.warm_start)
    _, ok = _cd_lasso(G, c, float(lam), beta, scale, free, opts.tol, opts.max_iter)
    if not ok:
        raise ConvergenceError(
            f"coordinate descent did not converge in {opts.max_iter} sweeps (lambda={lam:g})",
            beta,
        )
    return beta


def fit_weighted_lasso(prob: WeightedProblem, opts: SolverOptions = SolverOptions()) -> NDArray[np.float64]:
    if not np.any(prob.obs_weights > 0):
        raise DegenerateProblemError("all observation weights are zero")
    _check_lambda_zero(prob.lam, int(np.count_nonzero(prob.obs_weights)), prob.x.shape[1])
    G, c = prob.gram()
    return solve_gram(G, c, prob.lam, opts)


def path_gram(G, c, lambda_grid: Sequence[float], opts: SolverOptions = SolverOptions(),
              errors: str = "raise") -> list:
    """Warm-started solutions along a decreasing grid.

    With ``errors="skip"`` a failed solve yields ``None`` at that grid point
    and the path continues from the last iterate; ``errors="truncate"`` gives
    ``None`` for that point and every smaller lambda.
    """
    grid = np.asarray(lambda_grid, dtype=np.float64)
    if grid.ndim != 1 or grid.size == 0:
        raise ValueError("lambda grid must be a nonempty 1-d sequence")
    if np.any(np.diff(grid) >= 0):
        raise ValueError("lambda grid must be strictly decreasing")
    free, scale = _prepare(G, opts)
    beta = _start(c.shape[0], free, opts.warm_start)
    out = []
    for lam in grid:
        _, ok = _cd_lasso(G, c, float(lam), beta, scale, free, opts.tol, opts.max_iter)
        if ok:
            out.append(beta.copy())
        elif errors == "skip":
            out.append(None)
        elif errors == "truncate":
            out.extend([None] * (grid.size - len(out)))
            break
        else:
            raise ConvergenceError(
                f"coordinate descent did not converge at lambda={lam:g}", beta.copy()
            )
    return out


def lasso_path(x, y, lambda_grid, opts: SolverOptions = SolverOptions(),
               weights=None, denom=None) -> list:
    x = np.asarray(x, dtype=np.float64)
    w = np.ones(x.shape[0]) if weights is None else weights
    prob = WeightedProblem(x, y, w, float(x.shape[0]) if denom is None else denom, 0.0)
    if not np.any(prob.obs_weights > 0):
        raise DegenerateProblemError("all observation weights are zero")
    G, c = prob.gram()
    return path_gram(G, c, lambda_grid, opts)


def fit_scad(x, y, lam: float, a: float = SCAD_A, opts: SolverOptions = SolverOptions(),
             warm=None) -> NDArray[np.float64]:
    """Local minimizer of (1/2n)||y - X b||^2 + sum_j scad(|b_j|), started at the lasso fit.

    ``warm`` replaces the lasso start when given (used along a path).
    """
    if not a > 2:
        raise ValueError("SCAD concavity parameter must exceed 2")
    if not lam >= 0:
        raise ValueError("lambda must be nonnegative")
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.ndim != 2 or y.shape != (x.shape[0],):
        raise DimensionError(f"incompatible shapes x{x.shape}, y{y.shape}")
    _check_lambda_zero(lam, x.shape[0], x.shape[1])
    G = x.T @ x / x.shape[0]
    c = x.T @ y / x.shape[0]
    return scad_gram(G, c, lam, a, opts, warm)


def scad_gram(G, c, lam, a=SCAD_A, opts: SolverOptions = SolverOptions(), warm=None):
    free, scale = _prepare(G, opts)
    beta = solve_gram(G, c, lam, opts) if warm is None else _start(c.shape[0], free, warm)
    _, ok = _cd_scad(G, c, float(lam), float(a), beta, scale, free, opts.tol, opts.max_iter)
    if not ok:
        raise ConvergenceError(f"SCAD coordinate descent did not converge (lambda={lam:g})", beta)
    return beta


def scad_penalty(beta: ArrayLike, lam: float, a: float = SCAD_A) -> float:
    t = np.abs(np.asarray(beta, dtype=np.float64))
    pen = np.where(
        t <= lam,
        lam * t,
        np.where(t <= a * lam, (2 * a * lam * t - t**2 - lam**2) / (2 * (a - 1)), 0.5 * (a + 1) * lam**2),
    )
    return float(pen.sum())
