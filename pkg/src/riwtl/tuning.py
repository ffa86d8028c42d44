"""Cross-validated choice of (M, b, lambda) on held-out target folds.

Folds partition the target only; sources enter each training fit whole. The
lambda grid is nested inside every (M, b) point and solved as a warm-started
path.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from riwtl.core import Dataset, FitResult, TransferProblem
from riwtl.density import DEFAULT_BANDWIDTHS
from riwtl.solvers import DegenerateProblemError, SolverOptions, path_gram
from riwtl import transfer as tr

LINKS = ("M=2A", "M=2A=2T/3")
RIW_METHODS = {"riw-tl": "kde", "riw-tl-p": "parametric_gaussian", "riw-tl-u": "uniform"}
METHODS = ("lasso", "trans-lasso") + tuple(RIW_METHODS)


@dataclass(frozen=True)
class TuneGrid:
    M_grid: tuple = (1.0, 1.5, 2.0, 2.5, 3.0)
    b_grid: tuple = DEFAULT_BANDWIDTHS
    lambda_grid: Optional[tuple] = None  # None: log grid from lambda_max
    n_lambda: int = 50
    lambda_ratio: float = 1e-3
    folds: int = 5
    link: str = "M=2A"

    def __post_init__(self):
        if not self.M_grid or not self.b_grid:
            raise ValueError("tuning grids must be nonempty")
        if any(b <= 0 for b in self.b_grid) or any(m <= 0 for m in self.M_grid):
            raise ValueError("M and bandwidth grid values must be positive")
        if list(self.M_grid) != sorted(self.M_grid):
            raise ValueError("M grid must be increasing")
        if self.folds < 2:
            raise ValueError("need at least two folds")
        if self.link not in LINKS:
            raise ValueError(f"unknown link {self.link!r}")
        if self.lambda_grid is not None and np.any(np.diff(self.lambda_grid) >= 0):
            raise ValueError("lambda grid must be strictly decreasing")

    def lambdas(self, target: Dataset) -> np.ndarray:
        if self.lambda_grid is not None:
            return np.asarray(self.lambda_grid, dtype=np.float64)
        lmax = lambda_max(target.x, target.y)
        return lmax * np.logspace(0.0, math.log10(self.lambda_ratio), self.n_lambda)


@dataclass
class TuneResult:
    method: str
    params: dict
    score: float
    table: list = field(default_factory=list)
    config: Optional[tr.RiwConfig] = None

    def table_rows(self):
        keys = ["M", "b", "lambda", "score", "error"]
        return [{k: row.get(k) for k in keys} for row in self.table]


def lambda_max(x, y, weights=None, denom=None) -> float:
    """Smallest lambda at which the weighted lasso solution is zero."""
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    w = np.ones(x.shape[0]) if weights is None else np.asarray(weights, dtype=np.float64)
    N = float(x.shape[0]) if denom is None else float(denom)
    val = float(np.max(np.abs(x.T @ (w * y)))) / N
    if val == 0.0:
        raise DegenerateProblemError("lambda_max is zero (response orthogonal to all columns)")
    return val


def fold_ids(n: int, folds: int, seed: int) -> np.ndarray:
    if not 2 <= folds <= n:
        raise ValueError(f"cannot split {n} target rows into {folds} folds")
    return tr._rng(seed, 3).permutation(np.arange(n) % folds)


def _truncated_path(G, c, grid, opts):
    """Path that gives up on every smaller lambda after the first failed solve."""
    return path_gram(G, c, grid, opts, errors="truncate")


def _held_out(te: Dataset, betas) -> np.ndarray:
    return np.array([np.inf if b is None else float(np.mean((te.y - te.x @ b) ** 2)) for b in betas])


def _pick(table):
    ok = [r for r in table if np.isfinite(r["score"])]
    if not ok:
        raise RuntimeError("every grid point failed during cross-validation")
    nanless = lambda v: -np.inf if v is None else v
    return min(ok, key=lambda r: (r["score"], nanless(r.get("M")), nanless(r.get("b")), -r["lambda"]))


def _lasso_scores(target: Dataset, grid, fid, opts, offset=None):
    """Mean held-out MSE along the grid for a target lasso (optionally of y - offset)."""
    y = target.y if offset is None else target.y - offset
    scores = np.zeros(grid.size)
    for f in range(fid.max() + 1):
        trn, tst = fid != f, fid == f
        x = target.x[trn]
        path = _truncated_path(x.T @ x / trn.sum(), x.T @ y[trn] / trn.sum(), grid, opts)
        scores += _held_out(Dataset(target.x[tst], y[tst]), path)
    return scores / (fid.max() + 1)


def tune_lasso(problem: TransferProblem, grid: TuneGrid = TuneGrid(), seed: int = 0,
               opts: SolverOptions = SolverOptions()) -> TuneResult:
    lams = grid.lambdas(problem.target)
    fid = fold_ids(problem.target.n, grid.folds, seed)
    scores = _lasso_scores(problem.target, lams, fid, opts)
    table = [{"lambda": float(l), "score": float(s)} for l, s in zip(lams, scores)]
    best = _pick(table)
    return TuneResult("lasso", {"lambda": best["lambda"]}, best["score"], table)


def lasso_cv(x, y, seed=0, folds=5, n_lambda=50, ratio=1e-3, opts=SolverOptions()):
    """Plain K-fold CV lasso; returns (beta, lambda)."""
    d = Dataset(x, y)
    lams = lambda_max(d.x, d.y) * np.logspace(0.0, math.log10(ratio), n_lambda)
    fid = fold_ids(d.n, min(folds, d.n), seed)
    scores = _lasso_scores(d, lams, fid, opts)
    lam = float(lams[int(np.argmin(scores))])
    G, c = d.x.T @ d.x / d.n, d.x.T @ d.y / d.n
    return tr.solve_gram(G, c, lam, opts), lam


def tune_trans_lasso(problem: TransferProblem, informative: Sequence[int], grid: TuneGrid = TuneGrid(),
                     seed: int = 0, opts: SolverOptions = SolverOptions()) -> TuneResult:
    """lambda_w by CV on the pooled informative sources, then lambda_delta on target folds."""
    J, pooled = tr.trans_lasso_pooled(problem, informative)
    if pooled is None:
        w_hat, lam_w = np.zeros(problem.p), 0.0
    else:
        w_hat, lam_w = lasso_cv(pooled.x, pooled.y, seed=seed, folds=grid.folds,
                                n_lambda=grid.n_lambda, ratio=grid.lambda_ratio, opts=opts)
    offset = problem.target.x @ w_hat
    resid = Dataset(problem.target.x, problem.target.y - offset)
    try:
        lams = grid.lambdas(resid)
    except DegenerateProblemError:
        lams = grid.lambdas(problem.target)
    fid = fold_ids(problem.target.n, grid.folds, seed)
    scores = _lasso_scores(problem.target, lams, fid, opts, offset=offset)
    table = [{"lambda": float(l), "score": float(s)} for l, s in zip(lams, scores)]
    best = _pick(table)
    return TuneResult("trans-lasso", {"lambda_w": lam_w, "lambda_delta": best["lambda"], "informative": J},
                      best["score"], table)


def _riw_config(variant, M, b, lam, link, seed):
    # the uniform variant always carries T; M = 2A = 2T/3 is its only supported link
    if variant == "uniform" and link != "M=2A=2T/3":
        link = "M=2A=2T/3"
    T = 1.5 * M if link == "M=2A=2T/3" and variant == "uniform" else None
    return tr.RiwConfig(A=M / 2, M=M, bandwidth=b, lam=lam, variant=variant, T=T, split_seed=seed)


def tune_riw(problem: TransferProblem, method: str = "riw-tl", grid: TuneGrid = TuneGrid(), seed: int = 0,
             opts: SolverOptions = SolverOptions(), cache: Optional[tr.InitialFitCache] = None) -> TuneResult:
    variant = RIW_METHODS[method]
    cache = cache if cache is not None else tr.InitialFitCache()
    lams = grid.lambdas(problem.target)
    b_list = (grid.b_grid[0],) if variant == "parametric_gaussian" else tuple(grid.b_grid)
    fid = fold_ids(problem.target.n, grid.folds, seed)
    sums = {(M, b): np.zeros(lams.size) for M in grid.M_grid for b in b_list}
    errors = {}
    for f in range(grid.folds):
        trn, tst = fid != f, fid == f
        train = problem.with_target(problem.target.subset(np.flatnonzero(trn)))
        test = problem.target.subset(np.flatnonzero(tst))
        plan = tr.SplitPlan.make(train, seed)
        init = tr.initial_fits(train, plan, opts, seed, cache)
        for (M, b), acc in sums.items():
            cfg = _riw_config(variant, M, b, 0.0, grid.link, seed)
            try:
                passes = tr.build_passes(train, plan, init, variant, cfg.A, cfg.M, b, cfg.T, cfg.theta0)
            except (ValueError, ArithmeticError) as exc:
                errors[(M, b)] = repr(exc)
                acc += np.inf
                continue
            paths = [_truncated_path(*ps.gram(), lams, opts) for ps in passes]
            avg = [None if any(p[i] is None for p in paths) else (paths[0][i] + paths[1][i] + paths[2][i]) / 3
                   for i in range(lams.size)]
            acc += _held_out(test, avg)
    table = []
    for (M, b), acc in sums.items():
        for lam, s in zip(lams, acc / grid.folds):
            table.append({"M": M, "b": None if variant == "parametric_gaussian" else b,
                          "lambda": float(lam), "score": float(s), "error": errors.get((M, b))})
    best = _pick(table)
    cfg = _riw_config(variant, best["M"], best["b"] or grid.b_grid[0], best["lambda"], grid.link, seed)
    params = {"A": cfg.A, "M": cfg.M, "b": best["b"], "T": cfg.T, "lambda": cfg.lam}
    return TuneResult(method, params, best["score"], table, cfg)


def cv_tune(problem: TransferProblem, method: str, grid: TuneGrid = TuneGrid(), seed: int = 0,
            opts: SolverOptions = SolverOptions(), cache: Optional[tr.InitialFitCache] = None,
            informative: Sequence[int] = ()) -> TuneResult:
    if method == "lasso":
        return tune_lasso(problem, grid, seed, opts)
    if method == "trans-lasso":
        return tune_trans_lasso(problem, informative, grid, seed, opts)
    if method in RIW_METHODS:
        return tune_riw(problem, method, grid, seed, opts, cache)
    raise ValueError(f"unknown method {method!r}; choose from {METHODS}")


def fit_tuned(problem: TransferProblem, method: str, grid: TuneGrid = TuneGrid(), seed: int = 0,
              opts: SolverOptions = SolverOptions(), cache: Optional[tr.InitialFitCache] = None,
              informative: Sequence[int] = ()) -> FitResult:
    """Tune by CV, then refit on the full problem at the chosen point."""
    res = cv_tune(problem, method, grid, seed, opts, cache, informative)
    if method == "lasso":
        fit = tr.fit_lasso_target(problem, res.params["lambda"], opts)
    elif method == "trans-lasso":
        fit = tr.fit_trans_lasso_oracle(problem, informative, res.params["lambda_w"],
                                        res.params["lambda_delta"], opts)
    elif method == "riw-tl-u":
        fit = tr.fit_riw_tl_u(problem, res.config, opts, cache)
    else:
        fit = tr.fit_riw_tl(problem, res.config, opts, cache)
    fit.tuning_trace = dict(res.params, cv_score=res.score)
    return fit
