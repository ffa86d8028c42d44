"""Importance weights, sample selection and the transfer estimators.

The cross-fitted estimators split every dataset into three parts and rotate
their roles: initial SCAD fit, residual density fit, and the weighted lasso
solve. The three solutions are averaged.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field, replace
from typing import Optional, Sequence

import numpy as np
from numpy.typing import ArrayLike, NDArray

from riwtl import density as dens
from riwtl.core import (
    Dataset,
    DimensionError,
    FitResult,
    Noise,
    SelectionRecord,
    TransferProblem,
    sample_usage_rate,
)
from riwtl.solvers import (
    SCAD_A,
    ConvergenceError,
    SolverOptions,
    WeightedProblem,
    fit_weighted_lasso,
    path_gram,
    scad_gram,
    solve_gram,
)

VARIANTS = ("kde", "parametric_gaussian", "uniform")
DENOM_FLOOR = 1e-12
NO_TRIM = np.inf


class WeightUndefinedError(ZeroDivisionError):
    pass


@dataclass(frozen=True)
class RiwConfig:
    A: float
    M: float
    bandwidth: float = 0.2
    lam: float = 0.0
    variant: str = "kde"
    T: Optional[float] = None
    theta0: float = 0.0
    split_seed: int = 0

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ValueError(f"unknown variant {self.variant!r}")
        if not (self.A > 0 and self.M > 0 and self.bandwidth > 0 and self.lam >= 0):
            raise ValueError("A, M and bandwidth must be positive and lambda nonnegative")
        if self.variant == "uniform":
            if self.T is None or not self.T > 0:
                raise ValueError("uniform variant needs T > 0")
            if self.theta0 < 0:
                raise ValueError("theta0 must be nonnegative")
            if self.A + self.M - 2 * self.theta0 > self.T * (1 + 1e-12):
                raise ValueError(
                    f"need A + M - 2*theta0 <= T, got A={self.A}, M={self.M}, "
                    f"theta0={self.theta0}, T={self.T}"
                )

    @classmethod
    def from_M(cls, M: float, variant: str = "kde", **kw) -> "RiwConfig":
        """Apply the default links: M = 2A, and T = 3A for the uniform variant."""
        A = M / 2.0
        if variant == "uniform":
            kw.setdefault("T", 1.5 * M)
        return cls(A=A, M=M, variant=variant, **kw)

    def with_lambda(self, lam: float) -> "RiwConfig":
        return replace(self, lam=float(lam))


# --- weights and selection -------------------------------------------------

def true_weight(f_eps: dens.DensityModel, f_k: dens.DensityModel, eps_plus_eta: float, eps: float) -> float:
    den = f_k(eps)
    if den <= 0:
        raise WeightUndefinedError(f"source density vanishes at {eps}")
    return f_eps(eps_plus_eta) / den


def _weights(f_eps, f_k, r0, rk):
    return f_eps.pdf(r0) / np.maximum(f_k.pdf(rk), DENOM_FLOOR)


def _selection(source: Dataset, beta0, betak, A, M, subset, rule) -> SelectionRecord:
    beta0 = np.asarray(beta0, dtype=np.float64)
    betak = np.asarray(betak, dtype=np.float64)
    if beta0.shape != (source.p,) or betak.shape != (source.p,):
        raise DimensionError("coefficient vectors do not match the source dimension")
    subset = np.arange(source.n) if subset is None else np.asarray(subset, dtype=np.intp)
    if subset.size and (subset.min() < 0 or subset.max() >= source.n):
        raise IndexError("subset indices out of range")
    x, y = source.x[subset], source.y[subset]
    fit0 = x @ beta0
    fitk = x @ betak
    r0 = y - fit0
    rk = y - fitk
    eta = fitk - fit0
    first = r0 if rule == "target" else rk
    keep = (np.abs(first) <= A) & (np.abs(eta) <= M)
    selected = subset[keep]
    return SelectionRecord(
        source_index=0,
        subset=subset,
        selected=selected,
        weight_index=selected,
        weights=np.ones(selected.size),
        etas=eta,
        residuals_target_scale=r0,
        residuals_source_scale=rk,
        A=float(A),
        M=float(M),
        rule=rule,
    )


def select_samples(source: Dataset, beta0_tilde, betak_tilde, A=NO_TRIM, M=NO_TRIM, subset=None) -> SelectionRecord:
    """Keep i with |y_i - x_i'b0| <= A and |x_i'(bk - b0)| <= M; weights left at one."""
    return _selection(source, beta0_tilde, betak_tilde, A, M, subset, "target")


def select_samples_u(source: Dataset, beta0_tilde, betak_tilde, A=NO_TRIM, M=NO_TRIM, subset=None) -> SelectionRecord:
    """As :func:`select_samples` but the residual bound uses the source fit."""
    return _selection(source, beta0_tilde, betak_tilde, A, M, subset, "source")


def _attach_weights(rec: SelectionRecord, f_eps, f_k, k, rotation, T=None, theta0=None) -> SelectionRecord:
    pos = np.isin(rec.subset, rec.selected)
    w = _weights(f_eps, f_k, rec.residuals_target_scale[pos], rec.residuals_source_scale[pos])
    ok = w > 0
    return replace(rec, source_index=k, weight_index=rec.selected[ok], weights=w[ok],
                   T=T, theta0=theta0, rotation=rotation)


# --- cross-fitting machinery -----------------------------------------------

def _rng(seed: int, *key: int) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(seed, spawn_key=key)))


@dataclass(frozen=True)
class SplitPlan:
    """Three-way partition of every dataset's rows (target first)."""

    parts: tuple

    @classmethod
    def make(cls, problem: TransferProblem, seed: int) -> "SplitPlan":
        parts = []
        for k, d in enumerate(problem.datasets):
            if d.n < 3:
                raise ValueError(f"dataset {k} has {d.n} rows; cross-fitting needs at least 3")
            perm = _rng(seed, 1, k).permutation(d.n)
            parts.append(tuple(np.sort(p) for p in np.array_split(perm, 3)))
        return cls(tuple(parts))

    @staticmethod
    def roles(r: int) -> tuple:
        """Part indices playing (initial fit, density, solve) in pass ``r``."""
        return r % 3, (r + 1) % 3, (r + 2) % 3


def _fingerprint(x, y) -> bytes:
    h = hashlib.blake2b(digest_size=16)
    h.update(np.ascontiguousarray(x).tobytes())
    h.update(np.ascontiguousarray(y).tobytes())
    return h.digest()


def scad_cv(x, y, seed: int = 0, n_lambda: int = 20, ratio: float = 0.05, folds: int = 5,
            a: float = SCAD_A, opts: SolverOptions = SolverOptions()) -> tuple:
    """SCAD fit with lambda picked by K-fold CV over a log grid; returns (beta, lambda)."""
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    n = x.shape[0]
    lmax = float(np.max(np.abs(x.T @ y)) / n)
    if lmax == 0:
        return np.zeros(x.shape[1]), 0.0
    grid = lmax * np.logspace(0, np.log10(ratio), n_lambda)
    folds = min(folds, n)
    fold_id = _rng(seed, 2).permutation(np.arange(n) % folds)
    err = np.zeros(n_lambda)
    for f in range(folds):
        tr, te = fold_id != f, fold_id == f
        G = x[tr].T @ x[tr] / tr.sum()
        c = x[tr].T @ y[tr] / tr.sum()
        lasso = path_gram(G, c, grid, opts, errors="skip")
        for i, lam in enumerate(grid):
            if lasso[i] is None:
                err[i] = np.inf
                continue
            try:
                b = scad_gram(G, c, lam, a, opts, warm=lasso[i])
            except ConvergenceError:
                err[i] = np.inf
                continue
            err[i] += np.sum((y[te] - x[te] @ b) ** 2)
    best = int(np.argmin(err))
    G = x.T @ x / n
    c = x.T @ y / n
    return scad_gram(G, c, grid[best], a, opts), float(grid[best])


class InitialFitCache:
    """Memoizes SCAD initial fits by data content so tuning and sibling methods share them."""

    def __init__(self):
        self._store = {}

    def get(self, x, y, seed, opts):
        key = (_fingerprint(x, y), seed)
        if key not in self._store:
            self._store[key] = scad_cv(x, y, seed=seed, opts=opts)[0]
        return self._store[key]

    def __len__(self):
        return len(self._store)


def initial_fits(problem: TransferProblem, plan: SplitPlan, opts: SolverOptions,
                 seed: int, cache: Optional[InitialFitCache] = None) -> NDArray[np.float64]:
    """SCAD estimates on each dataset's initial-fit part; shape (3, K + 1, p)."""
    cache = cache if cache is not None else InitialFitCache()
    out = np.empty((3, problem.K + 1, problem.p))
    for r in range(3):
        i1 = SplitPlan.roles(r)[0]
        for k, d in enumerate(problem.datasets):
            idx = plan.parts[k][i1]
            out[r, k] = cache.get(d.x[idx], d.y[idx], seed, opts)
    return out


@dataclass
class PassData:
    """Stacked weighted least-squares problem of one cross-fit pass."""

    x: NDArray[np.float64]
    y: NDArray[np.float64]
    w: NDArray[np.float64]
    denom: float
    records: list = field(default_factory=list)

    def gram(self):
        xw = self.x * self.w[:, None]
        return (xw.T @ self.x) / self.denom, (xw.T @ self.y) / self.denom


def _source_density(res, variant, bandwidth):
    if variant == "parametric_gaussian":
        return dens.gaussian_fit(res)
    return dens.kde_fit(res, bandwidth)


def build_passes(problem: TransferProblem, plan: SplitPlan, init: NDArray[np.float64],
                 variant: str, A: float, M: float, bandwidth: float = 0.2,
                 T: Optional[float] = None, theta0: float = 0.0) -> list:
    passes = []
    for r in range(3):
        _, i2, i3 = SplitPlan.roles(r)
        beta0 = init[r, 0]
        t3 = plan.parts[0][i3]
        xs = [problem.target.x[t3]]
        ys = [problem.target.y[t3]]
        ws = [np.ones(t3.size)]
        denom = float(t3.size)
        records = []
        for k, src in enumerate(problem.sources, start=1):
            betak = init[r, k]
            d2, d3 = plan.parts[k][i2], plan.parts[k][i3]
            f_k = _source_density(src.y[d2] - src.x[d2] @ betak, variant, bandwidth)
            if variant == "uniform":
                rec = select_samples_u(src, beta0, betak, A, M, d3)
                rec = _attach_weights(rec, dens.uniform(T), f_k, k, r, T, theta0)
            else:
                rec = select_samples(src, beta0, betak, A, M, d3)
                rec = _attach_weights(rec, dens.symmetrize(f_k), f_k, k, r)
            records.append(rec)
            denom += d3.size
            xs.append(src.x[rec.weight_index])
            ys.append(src.y[rec.weight_index])
            ws.append(rec.weights)
        passes.append(PassData(np.vstack(xs), np.concatenate(ys), np.concatenate(ws), denom, records))
    return passes


def _crossfit_result(problem, passes, lam, opts, method, cfg=None) -> FitResult:
    betas = np.empty((3, problem.p))
    for r, ps in enumerate(passes):
        G, c = ps.gram()
        betas[r] = solve_gram(G, c, lam, opts)
    records = [rec for ps in passes for rec in ps.records]
    ratios = [rec.weight_ratio() for rec in records if rec.weights.size]
    diag = {
        "max_weight_ratio": max(ratios) if ratios else float("nan"),
        "empty_selections": sum(1 for rec in records if rec.weight_index.size == 0),
    }
    trace = None
    if cfg is not None:
        trace = {"A": cfg.A, "M": cfg.M, "b": cfg.bandwidth, "T": cfg.T, "lambda": lam}
    return FitResult(
        beta_hat=betas.mean(axis=0),
        method=method,
        lam=float(lam),
        selections=records,
        sur=sample_usage_rate(problem, records),
        rotation_betas=betas,
        tuning_trace=trace,
        diagnostics=diag,
    )


METHOD_TAGS = {"kde": "riw-tl", "parametric_gaussian": "riw-tl-p", "uniform": "riw-tl-u"}


def _fit_crossfit(problem, cfg: RiwConfig, opts, cache):
    plan = SplitPlan.make(problem, cfg.split_seed)
    init = initial_fits(problem, plan, opts, cfg.split_seed, cache)
    passes = build_passes(problem, plan, init, cfg.variant, cfg.A, cfg.M, cfg.bandwidth, cfg.T, cfg.theta0)
    return _crossfit_result(problem, passes, cfg.lam, opts, METHOD_TAGS[cfg.variant], cfg)


def fit_riw_tl(problem: TransferProblem, cfg: RiwConfig, solver_opts: SolverOptions = SolverOptions(),
               cache: Optional[InitialFitCache] = None) -> FitResult:
    """Cross-fitted RIW-TL with a KDE (or, for ``parametric_gaussian``, Gaussian) residual density."""
    if cfg.variant == "uniform":
        raise ValueError("use fit_riw_tl_u for the uniform-numerator variant")
    return _fit_crossfit(problem, cfg, solver_opts, cache)


def fit_riw_tl_u(problem: TransferProblem, cfg: RiwConfig, solver_opts: SolverOptions = SolverOptions(),
                 cache: Optional[InitialFitCache] = None) -> FitResult:
    if cfg.variant != "uniform":
        raise ValueError("fit_riw_tl_u needs a config with variant='uniform'")
    return _fit_crossfit(problem, cfg, solver_opts, cache)


# --- oracle and baseline estimators ----------------------------------------

def noise_density(noise: Noise) -> dens.DensityModel:
    if noise.kind == "gaussian":
        return dens.gaussian(noise.param)
    return dens.student_t(noise.param)


def oracle_selection(problem: TransferProblem, A: float, M: float) -> list:
    """Selection sets and weights computed from the true errors and contrasts."""
    truth = problem.truth
    if truth is None:
        raise ValueError("oracle estimators need a problem with ground truth")
    records = []
    for k, src in enumerate(problem.sources, start=1):
        f_k = noise_density(truth.noise[k])
        rec = select_samples(src, truth.beta0, truth.betas[k - 1], A, M)
        records.append(_attach_weights(rec, dens.symmetrize(f_k), f_k, k, 0))
    return records


def fit_oracle_riw_tl(problem: TransferProblem, A: float, M: float, lam: float,
                      solver_opts: SolverOptions = SolverOptions()) -> FitResult:
    records = oracle_selection(problem, A, M)
    xs = [problem.target.x] + [src.x[rec.weight_index] for src, rec in zip(problem.sources, records)]
    ys = [problem.target.y] + [src.y[rec.weight_index] for src, rec in zip(problem.sources, records)]
    ws = [np.ones(problem.target.n)] + [rec.weights for rec in records]
    prob = WeightedProblem(np.vstack(xs), np.concatenate(ys), np.concatenate(ws), float(problem.total_n), lam)
    beta = fit_weighted_lasso(prob, solver_opts)
    return FitResult(beta, "oracle-riw-tl", float(lam), records, sample_usage_rate(problem, records),
                     tuning_trace={"A": A, "M": M, "lambda": lam})


def fit_lasso_target(problem: TransferProblem, lam: float, solver_opts: SolverOptions = SolverOptions()) -> FitResult:
    t = problem.target
    beta = fit_weighted_lasso(WeightedProblem.unweighted(t.x, t.y, lam), solver_opts)
    return FitResult(beta, "lasso", float(lam), sur=t.n / problem.total_n)


def trans_lasso_pooled(problem: TransferProblem, informative: Sequence[int]):
    """Stacked data of the informative sources, or None when the set is empty."""
    J = sorted(set(int(k) for k in informative))
    for k in J:
        if not 1 <= k <= problem.K:
            raise IndexError(f"informative source {k} outside 1..{problem.K}")
    if not J:
        return J, None
    x = np.vstack([problem.sources[k - 1].x for k in J])
    y = np.concatenate([problem.sources[k - 1].y for k in J])
    return J, Dataset(x, y)


def trans_lasso_correction(target: Dataset, w_hat, lambda_delta, opts):
    """delta minimizing (1/2n0)||y0 - X0 (w - delta)||^2 + lambda_delta ||delta||_1."""
    offset = target.y - target.x @ w_hat
    # substituting delta = -u turns the problem into a plain lasso of the offset on X0
    u = fit_weighted_lasso(WeightedProblem.unweighted(target.x, offset, lambda_delta), opts)
    return -u


def fit_trans_lasso_oracle(problem: TransferProblem, informative: Sequence[int], lambda_w: float,
                           lambda_delta: float, solver_opts: SolverOptions = SolverOptions()) -> FitResult:
    J, pooled = trans_lasso_pooled(problem, informative)
    diag = {"informative": J}
    if pooled is None:
        w_hat = np.zeros(problem.p)
        diag["empty_informative_set"] = True
    else:
        w_hat = fit_weighted_lasso(WeightedProblem.unweighted(pooled.x, pooled.y, lambda_w), solver_opts)
    delta_hat = trans_lasso_correction(problem.target, w_hat, lambda_delta, solver_opts)
    used = problem.target.n + sum(problem.sources[k - 1].n for k in J)
    diag["w_hat"] = w_hat
    diag["delta_hat"] = delta_hat
    return FitResult(w_hat - delta_hat, "trans-lasso", float(lambda_delta), sur=used / problem.total_n,
                     tuning_trace={"lambda_w": lambda_w, "lambda_delta": lambda_delta},
                     diagnostics=diag)
