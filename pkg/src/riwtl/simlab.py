"""Synthetic designs, metrics and replicate runners for the simulation study.

Every random draw comes from a Philox stream keyed by
``(seed, replicate, purpose, ...)`` so any dataset can be regenerated on its own,
in any process, in any order.
"""

from __future__ import annotations

import math
import os
import traceback
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from typing import Optional, Sequence

import numpy as np
from numpy.typing import NDArray
from scipy import linalg, stats
from threadpoolctl import threadpool_limits

from riwtl.core import Dataset, FitResult, Noise, TransferProblem, TruthSpec, sample_usage_rate
from riwtl import transfer as tr
from riwtl.solvers import SolverOptions
from riwtl.tuning import METHODS, TuneGrid, fit_tuned

RNG_NAME = "numpy.random.Philox (SeedSequence keyed streams)"

COVARIATE_KINDS = ("gaussian_ar", "gaussian_mixture", "student_t")
COEF_SCHEMES = ("fixed_magnitude", "random_magnitude")
SHIFTS = ("posterior", "full")
ERROR_KINDS = ("gaussian", "student_t")
MIXTURE_MEANS = (-4.0, 0.0, 2.0)
ALL_METHODS = METHODS + ("oracle-riw-tl",)

# stream purposes
_COEF, _COVARIATE, _NOISE, _MIXTURE = 11, 12, 13, 14


def stream(seed: int, *key: int) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(seed, spawn_key=tuple(key))))


@dataclass(frozen=True)
class SimConfig:
    """One simulation design. Defaults are the full-scale study."""

    p: int = 200
    n0: int = 150
    K: int = 10
    n_k: int = 600
    s0: int = 10
    rho: float = 0.5
    shift: str = "posterior"  # "full": sources draw multivariate t covariates
    t_df: float = 5.0
    source_error: str = "gaussian"  # or "student_t" (t with t_df degrees of freedom)
    coef_scheme: str = "fixed_magnitude"
    m_B: int = 0
    d: int = 8
    replicates: int = 200
    seed: int = 0

    def __post_init__(self):
        for name in ("p", "n0", "K", "n_k", "s0", "replicates"):
            if int(getattr(self, name)) < 1:
                raise ValueError(f"{name} must be positive")
        if self.shift not in SHIFTS:
            raise ValueError(f"shift must be one of {SHIFTS}")
        if self.source_error not in ERROR_KINDS:
            raise ValueError(f"source_error must be one of {ERROR_KINDS}")
        if self.coef_scheme not in COEF_SCHEMES:
            raise ValueError(f"coef_scheme must be one of {COEF_SCHEMES}")
        if not 0 <= self.m_B <= self.K:
            raise ValueError(f"m_B={self.m_B} outside [0, K={self.K}]")
        if not 0 <= self.d <= self.p - self.s0:
            raise ValueError(f"d={self.d} outside [0, p - s0 = {self.p - self.s0}]")
        if 2 * self.s0 > self.p - self.s0:
            raise ValueError("non-informative sources need 2*s0 <= p - s0")
        if not abs(self.rho) < 1:
            raise ValueError("rho must lie in (-1, 1)")
        if self.shift == "full" and self.t_df <= 2:
            raise ValueError("t covariates need df > 2 for a finite covariance")

    @classmethod
    def desk(cls, **kw) -> "SimConfig":
        base = dict(p=100, n0=100, K=4, n_k=300, replicates=20)
        base.update(kw)
        return cls(**base)

    def cell(self, m_B: int, d: int) -> "SimConfig":
        return replace(self, m_B=int(m_B), d=int(d))

    def covariate_kind(self, k: int) -> str:
        return "student_t" if self.shift == "full" and k > 0 else "gaussian_ar"

    def noises(self) -> tuple:
        src = Noise("gaussian", 1.0) if self.source_error == "gaussian" else Noise("student_t", self.t_df)
        return (Noise("gaussian", 1.0),) + (src,) * self.K


# --- generators ------------------------------------------------------------

def ar_cov(p: int, rho: float = 0.5) -> NDArray[np.float64]:
    idx = np.arange(p)
    return rho ** np.abs(idx[:, None] - idx[None, :])


def _chol(sigma):
    try:
        return linalg.cholesky(sigma, lower=True)
    except linalg.LinAlgError as exc:
        raise ValueError("covariance matrix is not positive definite") from exc


def gen_covariates(kind: str, n: int, p: int, seed, rho: float = 0.5, df: float = 5.0,
                   means: Sequence[float] = MIXTURE_MEANS) -> NDArray[np.float64]:
    """n x p covariates. ``seed`` is an int or a Generator.

    gaussian_ar: N(0, Sigma) with Sigma_ij = rho^|i-j|.
    student_t: multivariate t with covariance Sigma (Gaussian with scale
    Sigma (df-2)/df divided by sqrt(chi2_df / df) row by row).
    gaussian_mixture: equal weights on N(m 1, Sigma) for m in ``means``.
    """
    if n < 1 or p < 1:
        raise ValueError("n and p must be positive")
    rng = seed if isinstance(seed, np.random.Generator) else stream(int(seed), _COVARIATE)
    L = _chol(ar_cov(p, rho))
    z = rng.standard_normal((n, p)) @ L.T
    if kind == "gaussian_ar":
        return z
    if kind == "student_t":
        if df <= 2:
            raise ValueError("df must exceed 2")
        chi = rng.chisquare(df, size=n)
        return z * np.sqrt((df - 2.0) / df) * np.sqrt(df / chi)[:, None]
    if kind == "gaussian_mixture":
        comp = rng.integers(0, len(means), size=n)
        return z + np.asarray(means, dtype=np.float64)[comp][:, None]
    raise ValueError(f"unknown covariate kind {kind!r}; choose from {COVARIATE_KINDS}")


def gen_coefficients(scheme: str, K: int, p: int, s0: int, m_B: int, d: int, seed) -> tuple:
    """(beta0, [beta_1..beta_K]); sources 1..m_B are the informative ones."""
    if scheme not in COEF_SCHEMES:
        raise ValueError(f"unknown coefficient scheme {scheme!r}")
    if d > p - s0:
        raise ValueError(f"d={d} exceeds p - s0 = {p - s0}")
    if not 0 <= m_B <= K:
        raise ValueError("m_B must lie in [0, K]")
    rng = seed if isinstance(seed, np.random.Generator) else stream(int(seed), _COEF)
    beta0 = np.zeros(p)
    beta0[:s0] = 1.0
    tail = np.arange(s0, p)
    betas = []
    for k in range(1, K + 1):
        b = beta0.copy()
        if k > m_B:
            b[:s0] -= 1.0
        size = d if k <= m_B else 2 * s0
        idx = rng.choice(tail, size=size, replace=False)
        drop = 0.5 if scheme == "fixed_magnitude" else rng.uniform(0.0, 1.0, size=size)
        b[idx] -= drop
        betas.append(b)
    return beta0, betas


def gen_problem(cfg: SimConfig, replicate: int) -> TransferProblem:
    """Deterministic in (cfg.seed, replicate); covariates and noise do not depend on the cell."""
    beta0, betas = gen_coefficients(cfg.coef_scheme, cfg.K, cfg.p, cfg.s0, cfg.m_B, cfg.d,
                                    stream(cfg.seed, replicate, _COEF, cfg.m_B, cfg.d))
    noises = cfg.noises()
    truth = TruthSpec(beta0, tuple(betas), noises)
    data = []
    for k, beta in enumerate([beta0] + betas):
        n = cfg.n0 if k == 0 else cfg.n_k
        x = gen_covariates(cfg.covariate_kind(k), n, cfg.p, stream(cfg.seed, replicate, _COVARIATE, k),
                           rho=cfg.rho, df=cfg.t_df)
        eps = noises[k].sample(stream(cfg.seed, replicate, _NOISE, k), n)
        data.append(Dataset(x, x @ beta + eps))
    return TransferProblem(data[0], tuple(data[1:]), truth)


# --- metrics ---------------------------------------------------------------

def sse(beta_hat, beta0) -> float:
    diff = np.asarray(beta_hat, dtype=np.float64) - np.asarray(beta0, dtype=np.float64)
    return float(diff @ diff)


def sur(fit: FitResult, problem: TransferProblem) -> float:
    """Sample usage rate; recomputed from the selection records when the fit has them.

    Cross-fit passes solve on disjoint thirds of each source, so records of all
    passes are counted together.
    """
    if fit.selections:
        return sample_usage_rate(problem, fit.selections)
    return float(fit.sur)


def selection_metrics(beta_check, beta_lasso):
    """(S, PR, NR): sparsity rate, positive and negative agreement with a lasso support.

    PR is None when the lasso selects nothing; NR is None when it selects everything.
    """
    bc = np.asarray(beta_check)
    bl = np.asarray(beta_lasso)
    if bc.shape != bl.shape:
        raise ValueError("coefficient vectors differ in length")
    on = bc != 0
    lon = bl != 0
    S = float(on.mean())
    PR = float((on & lon).sum() / lon.sum()) if lon.any() else None
    NR = float((on & ~lon).sum() / (~lon).sum()) if (~lon).any() else None
    return S, PR, NR


def relative_prediction_error(method_pe: float, lasso_pe: float) -> float:
    if not lasso_pe > 0:
        raise ZeroDivisionError("lasso prediction error must be positive")
    return float(method_pe) / float(lasso_pe)


def prediction_error(beta_hat, beta0, sigma, noise_var: float = 1.0) -> float:
    """Population target prediction error E(y - x'b)^2 under x ~ N(0, sigma)."""
    diff = np.asarray(beta_hat) - np.asarray(beta0)
    return float(diff @ sigma @ diff) + noise_var


def informative_by_threshold(problem: TransferProblem, h: Optional[float] = None) -> list:
    """Sources whose true ||delta||_1 is at most h (default 1.5 * s0)."""
    truth = problem.truth
    if truth is None:
        raise ValueError("threshold rule needs the true coefficients")
    h = 1.5 * truth.s0 if h is None else h
    return [k for k in range(1, problem.K + 1) if np.abs(truth.delta(k)).sum() <= h]


def oracle_lambda(problem: TransferProblem, c: float = 1.0) -> float:
    return c * math.sqrt(2.0 * math.log(problem.p) / problem.total_n)


# --- sweeps ----------------------------------------------------------------

@dataclass(frozen=True)
class SweepOptions:
    grid: TuneGrid = TuneGrid()
    solver: SolverOptions = SolverOptions()
    h: Optional[float] = None
    oracle_A: float = 1.5
    oracle_M: float = 3.0
    oracle_c: float = 1.0
    fail_flag: float = 0.10


@dataclass
class ExperimentResult:
    rows: list  # per-replicate records
    summary: list  # per cell x method aggregates
    failures: list = field(default_factory=list)

    def table(self) -> list:
        """Tidy rows: replicate rows then mean and std rows, sorted by cell and method."""
        out = []
        keyed = sorted(self.rows, key=lambda r: (r["cell_mB"], r["cell_d"], r["method"], r["replicate"]))
        out.extend(keyed)
        for s in self.summary:
            for stat in ("mean", "std"):
                out.append({"cell_mB": s["cell_mB"], "cell_d": s["cell_d"], "shift": s["shift"],
                            "method": s["method"], "replicate": stat, "sse": s[f"sse_{stat}"],
                            "sur": s[f"sur_{stat}"], "rpe": s[f"rpe_{stat}"]})
        return out

    def get(self, m_B: int, d: int, method: str) -> dict:
        for s in self.summary:
            if (s["cell_mB"], s["cell_d"], s["method"]) == (m_B, d, method):
                return s
        raise KeyError((m_B, d, method))


def fit_method(problem: TransferProblem, method: str, opts: SweepOptions, seed: int,
               cache: Optional[tr.InitialFitCache] = None) -> FitResult:
    if method == "oracle-riw-tl":
        return tr.fit_oracle_riw_tl(problem, opts.oracle_A, opts.oracle_M,
                                    oracle_lambda(problem, opts.oracle_c), opts.solver)
    informative = informative_by_threshold(problem, opts.h) if method == "trans-lasso" else ()
    return fit_tuned(problem, method, opts.grid, seed, opts.solver, cache, informative)


def run_replicate(cfg: SimConfig, replicate: int, methods: Sequence[str], opts: SweepOptions) -> list:
    """Fit every method on one replicate; failures become rows with an error field."""
    with threadpool_limits(limits=1):
        problem = gen_problem(cfg, replicate)
        sigma = ar_cov(cfg.p, cfg.rho)
        cache = tr.InitialFitCache()
        seed = int(np.random.SeedSequence(cfg.seed, spawn_key=(replicate, 99)).generate_state(1)[0])
        rows = []
        for m in methods:
            row = {"cell_mB": cfg.m_B, "cell_d": cfg.d, "shift": cfg.shift, "method": m, "replicate": replicate}
            try:
                fit = fit_method(problem, m, opts, seed, cache)
                row.update(sse=sse(fit.beta_hat, problem.truth.beta0), sur=sur(fit, problem),
                           pe=prediction_error(fit.beta_hat, problem.truth.beta0, sigma), error=None)
            except Exception as exc:  # recorded, never dropped
                row.update(sse=np.nan, sur=np.nan, pe=np.nan,
                           error=f"{type(exc).__name__}: {exc}".splitlines()[0])
            rows.append(row)
        lasso_pe = next((r["pe"] for r in rows if r["method"] == "lasso"), np.nan)
        for r in rows:
            r["rpe"] = r["pe"] / lasso_pe if np.isfinite(lasso_pe) and lasso_pe > 0 else np.nan
        return rows


def _task(args):
    cfg, rep, methods, opts = args
    try:
        return run_replicate(cfg, rep, methods, opts)
    except Exception:
        return [{"cell_mB": cfg.m_B, "cell_d": cfg.d, "shift": cfg.shift, "method": m, "replicate": rep,
                 "sse": np.nan, "sur": np.nan, "pe": np.nan, "rpe": np.nan,
                 "error": traceback.format_exc().strip().splitlines()[-1]} for m in methods]


def _summarize(rows, methods, cells, shift, fail_flag):
    summary = []
    for (m_B, d) in cells:
        for m in methods:
            rs = [r for r in rows if (r["cell_mB"], r["cell_d"], r["method"]) == (m_B, d, m)]
            ok = [r for r in rs if r["error"] is None]
            rec = {"cell_mB": m_B, "cell_d": d, "shift": shift, "method": m,
                   "n_ok": len(ok), "n_failed": len(rs) - len(ok)}
            for key in ("sse", "sur", "rpe"):
                vals = np.array([r[key] for r in ok], dtype=np.float64)
                vals = vals[np.isfinite(vals)]
                rec[f"{key}_mean"] = float(vals.mean()) if vals.size else np.nan
                rec[f"{key}_std"] = float(vals.std(ddof=1)) if vals.size > 1 else 0.0 if vals.size else np.nan
            rec["flagged"] = bool(rs) and (len(rs) - len(ok)) / len(rs) > fail_flag
            summary.append(rec)
    return summary


def run_sweep(cfg: SimConfig, methods: Sequence[str], cells: Sequence[tuple],
              opts: SweepOptions = SweepOptions(), threads: Optional[int] = None) -> ExperimentResult:
    """All (cell, replicate) tasks, serially or in worker processes; results merged by key."""
    for m in methods:
        if m not in ALL_METHODS:
            raise ValueError(f"unknown method {m!r}; choose from {ALL_METHODS}")
    cells = [(int(a), int(b)) for a, b in cells]
    tasks = [(cfg.cell(m_B, d), rep, tuple(methods), opts) for (m_B, d) in cells for rep in range(cfg.replicates)]
    threads = threads or os.cpu_count() or 1
    if threads == 1:
        chunks = [_task(t) for t in tasks]
    else:
        with ProcessPoolExecutor(max_workers=threads) as pool:
            chunks = list(pool.map(_task, tasks))
    rows = [r for chunk in chunks for r in chunk]
    rows.sort(key=lambda r: (r["cell_mB"], r["cell_d"], r["method"], r["replicate"]))
    failures = [{k: r[k] for k in ("cell_mB", "cell_d", "method", "replicate", "error")}
                for r in rows if r["error"] is not None]
    return ExperimentResult(rows, _summarize(rows, methods, cells, cfg.shift, opts.fail_flag), failures)


# --- inclusion probabilities ----------------------------------------------

@dataclass(frozen=True)
class Fig1Config:
    p: int = 100
    s0: int = 5
    n1: int = 600
    step: float = 0.2
    lengths: tuple = (5, 10, 15, 20, 25, 30, 35, 40, 45)
    rho: float = 0.5
    A: float = 1.5
    M: float = 3.0
    replicates: int = 100
    seed: int = 0
    xinf_edges: Optional[tuple] = None  # None: 9 equal-count bins of the pooled draws

    def __post_init__(self):
        if not self.lengths or max(self.lengths) > self.p - self.s0:
            raise ValueError("perturbation lengths must be nonempty and fit in p - s0")
        if self.xinf_edges is not None and (len(self.xinf_edges) < 2 or np.any(np.diff(self.xinf_edges) <= 0)):
            raise ValueError("x_inf bin edges must be increasing with at least two entries")


@dataclass
class InclusionGrid:
    delta_l1: NDArray[np.float64]  # row labels
    xinf_edges: NDArray[np.float64]
    freq: NDArray[np.float64]  # rows: delta, cols: x_inf bins; nan for empty bins
    counts: NDArray[np.int64]

    def rows(self) -> list:
        out = []
        for i, dl in enumerate(self.delta_l1):
            for j in range(self.freq.shape[1]):
                f = self.freq[i, j]
                out.append({"delta_l1": float(dl), "xinf_lo": float(self.xinf_edges[j]),
                            "xinf_hi": float(self.xinf_edges[j + 1]), "count": int(self.counts[i, j]),
                            "frequency": None if np.isnan(f) else float(f)})
        return out


def inclusion_probability_grid(cfg: Fig1Config = Fig1Config()) -> InclusionGrid:
    """Frequency that a source row lands in the oracle selection set, by ||delta||_1 and ||x||_inf.

    Covariates, noise and mixture labels are shared across the delta rows of a
    replicate, so the rows differ only through delta.
    """
    beta0 = np.zeros(cfg.p)
    beta0[:cfg.s0] = 1.0
    deltas = []
    for l in cfg.lengths:
        dlt = np.zeros(cfg.p)
        dlt[cfg.s0:cfg.s0 + l] = cfg.step
        deltas.append(dlt)
    D = np.array(deltas)
    xinf, inside = [], []
    with threadpool_limits(limits=1):
        for rep in range(cfg.replicates):
            x = gen_covariates("gaussian_mixture", cfg.n1, cfg.p, stream(cfg.seed, rep, _MIXTURE), rho=cfg.rho)
            eps = stream(cfg.seed, rep, _NOISE, 1).standard_normal(cfg.n1)
            eta = x @ D.T  # n1 x rows
            inside.append((np.abs(eps[:, None] + eta) <= cfg.A) & (np.abs(eta) <= cfg.M))
            xinf.append(np.abs(x).max(axis=1))
    xinf = np.concatenate(xinf)
    inside = np.vstack(inside)
    if cfg.xinf_edges is None:
        edges = np.quantile(xinf, np.linspace(0.0, 1.0, 10))
        edges[-1] = np.nextafter(edges[-1], np.inf)
    else:
        edges = np.asarray(cfg.xinf_edges, dtype=np.float64)
    col = np.searchsorted(edges, xinf, side="right") - 1
    keep = (col >= 0) & (col < edges.size - 1)
    nb = edges.size - 1
    counts = np.bincount(col[keep], minlength=nb)
    freq = np.full((len(cfg.lengths), nb), np.nan)
    for i in range(len(cfg.lengths)):
        hits = np.bincount(col[keep], weights=inside[keep, i].astype(np.float64), minlength=nb)
        nz = counts > 0
        freq[i, nz] = hits[nz] / counts[nz]
    return InclusionGrid(np.abs(D).sum(axis=1), edges, freq, np.tile(counts, (len(cfg.lengths), 1)))


# --- effective sample size -------------------------------------------------

def effective_size_bound(n: int, d: float, A: float, M: float) -> float:
    """Explicit lower bound on E|I_k| for Gaussian x and errors with Var(eta) = d^2."""
    phi = min(A, M)
    q = d * d + 1.0
    return n * math.exp(-A * M) * d / q * (1.0 - math.exp(-(q / (2.0 * d * d)) * phi * phi))


def effective_size_mc(n: int, d: float, A: float, M: float, seed: int = 0) -> int:
    """|I_k| for one draw with eta ~ N(0, d^2) and standard normal errors."""
    rng = stream(seed, 0, 21)
    eta = d * rng.standard_normal(n)
    eps = rng.standard_normal(n)
    return int(np.count_nonzero((np.abs(eps + eta) <= A) & (np.abs(eta) <= M)))


def jarque_bera_flag(resid, alpha: float = 0.05) -> bool:
    """True when a Jarque-Bera test rejects normality of the residuals at level alpha."""
    return bool(stats.jarque_bera(np.asarray(resid)).pvalue < alpha)


def config_dict(cfg) -> dict:
    return asdict(cfg)
