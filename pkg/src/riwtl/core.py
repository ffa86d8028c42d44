"""Domain types shared by the estimators and the simulation harness."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Any, Optional, Sequence

import numpy as np
from numpy.typing import ArrayLike, NDArray

CoefVector = NDArray[np.float64]

NOISE_KINDS = ("gaussian", "student_t")


class DimensionError(ValueError):
    """Array shapes that should agree do not."""


def _frozen(a: ArrayLike, ndim: int, name: str) -> NDArray[np.float64]:
    arr = np.array(a, dtype=np.float64)
    if arr.ndim != ndim:
        raise DimensionError(f"{name} must be {ndim}-dimensional, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} contains non-finite entries")
    arr.setflags(write=False)
    return arr


def as_coef(beta: ArrayLike, p: Optional[int] = None) -> CoefVector:
    b = _frozen(beta, 1, "coefficient vector")
    if p is not None and b.shape[0] != p:
        raise DimensionError(f"coefficient vector has length {b.shape[0]}, expected {p}")
    return b


@dataclass(frozen=True)
class Dataset:
    """One design matrix with its response; rows are observations."""

    x: NDArray[np.float64]
    y: NDArray[np.float64]

    def __post_init__(self):
        x = _frozen(self.x, 2, "x")
        y = _frozen(self.y, 1, "y")
        if x.shape[0] != y.shape[0]:
            raise DimensionError(f"x has {x.shape[0]} rows but y has length {y.shape[0]}")
        object.__setattr__(self, "x", x)
        object.__setattr__(self, "y", y)

    @property
    def n(self) -> int:
        return self.x.shape[0]

    @property
    def p(self) -> int:
        return self.x.shape[1]

    def subset(self, idx: ArrayLike) -> "Dataset":
        idx = np.asarray(idx, dtype=np.intp)
        return Dataset(self.x[idx], self.y[idx])

    def centered(self) -> "Dataset":
        return Dataset(self.x - self.x.mean(axis=0), self.y - self.y.mean())


@dataclass(frozen=True)
class Noise:
    """Error distribution of one dataset: ``gaussian`` with scale sigma or ``student_t`` with df."""

    kind: str = "gaussian"
    param: float = 1.0

    def __post_init__(self):
        if self.kind not in NOISE_KINDS:
            raise ValueError(f"unknown noise kind {self.kind!r}")
        if not self.param > 0:
            raise ValueError("noise parameter must be positive")

    def sample(self, rng: np.random.Generator, n: int) -> NDArray[np.float64]:
        if self.kind == "gaussian":
            return self.param * rng.standard_normal(n)
        return rng.standard_t(self.param, size=n)


@dataclass(frozen=True)
class TruthSpec:
    beta0: CoefVector
    betas: tuple
    noise: tuple = ()  # one Noise per dataset, target first

    def __post_init__(self):
        b0 = as_coef(self.beta0)
        betas = tuple(as_coef(b, b0.shape[0]) for b in self.betas)
        noise = tuple(self.noise) or tuple(Noise() for _ in range(len(betas) + 1))
        if len(noise) != len(betas) + 1:
            raise ValueError("need one noise specification per dataset (target + sources)")
        object.__setattr__(self, "beta0", b0)
        object.__setattr__(self, "betas", betas)
        object.__setattr__(self, "noise", noise)

    @property
    def support0(self) -> NDArray[np.intp]:
        return np.flatnonzero(self.beta0)

    @property
    def s0(self) -> int:
        return int(self.support0.size)

    def delta(self, k: int) -> CoefVector:
        """Contrast of source ``k`` (1-based) against the target."""
        return contrast(self.betas[k - 1], self.beta0)


@dataclass(frozen=True)
class TransferProblem:
    target: Dataset
    sources: tuple = ()
    truth: Optional[TruthSpec] = None

    def __post_init__(self):
        sources = tuple(self.sources)
        if self.target.n == 0:
            raise ValueError("target dataset is empty")
        for k, s in enumerate(sources, start=1):
            if s.p != self.target.p:
                raise DimensionError(
                    f"source {k} has {s.p} columns, target has {self.target.p}"
                )
        if self.truth is not None:
            if self.truth.beta0.shape[0] != self.target.p:
                raise DimensionError("truth.beta0 length does not match p")
            if len(self.truth.betas) != len(sources):
                raise ValueError("truth must carry one coefficient vector per source")
        object.__setattr__(self, "sources", sources)

    @property
    def K(self) -> int:
        return len(self.sources)

    @property
    def p(self) -> int:
        return self.target.p

    @property
    def datasets(self) -> tuple:
        return (self.target,) + self.sources

    @property
    def total_n(self) -> int:
        return sum(d.n for d in self.datasets)

    def with_target(self, target: Dataset) -> "TransferProblem":
        return TransferProblem(target, self.sources, self.truth)


@dataclass(frozen=True)
class SelectionRecord:
    """Selected observations of one source in one cross-fit pass.

    ``subset`` holds the candidate indices; ``etas``, ``residuals_target_scale``
    and ``residuals_source_scale`` are aligned with it. ``weight_index`` lists the
    selected indices that enter the loss, with ``weights`` aligned to it. For the
    uniform-numerator variant a selected observation can have zero weight, in
    which case it is absent from ``weight_index``.
    """

    source_index: int
    subset: NDArray[np.intp]
    selected: NDArray[np.intp]
    weight_index: NDArray[np.intp]
    weights: NDArray[np.float64]
    etas: NDArray[np.float64]
    residuals_target_scale: NDArray[np.float64]
    residuals_source_scale: NDArray[np.float64]
    A: float
    M: float
    T: Optional[float] = None
    theta0: Optional[float] = None
    rule: str = "target"  # "target" for RIW-TL, "source" for RIW-TL-U
    rotation: int = 0

    @property
    def n_selected(self) -> int:
        return int(self.selected.size)

    def weight_map(self) -> dict:
        return dict(zip(self.weight_index.tolist(), self.weights.tolist()))

    def weight_ratio(self) -> float:
        if self.weights.size == 0:
            return float("nan")
        return float(self.weights.max() / self.weights.min())

    def check(self) -> None:
        """Re-derive the threshold constraints from the stored values; raise if any fails."""
        pos = {int(i): j for j, i in enumerate(self.subset)}
        sel = set(self.selected.tolist())
        if not set(self.weight_index.tolist()) <= sel:
            raise AssertionError("weighted index outside the selected set")
        if not np.all(np.isfinite(self.weights)) or np.any(self.weights <= 0):
            raise AssertionError("stored weights must be finite and positive")
        first = self.residuals_target_scale if self.rule == "target" else self.residuals_source_scale
        for i in self.subset.tolist():
            j = pos[i]
            inside = abs(first[j]) <= self.A and abs(self.etas[j]) <= self.M
            if inside != (i in sel):
                raise AssertionError(f"membership of index {i} disagrees with thresholds")


@dataclass
class FitResult:
    beta_hat: CoefVector
    method: str
    lam: float
    selections: list = field(default_factory=list)
    sur: float = 1.0
    rotation_betas: Optional[NDArray[np.float64]] = None
    tuning_trace: Optional[dict] = None
    diagnostics: dict = field(default_factory=dict)

    def __post_init__(self):
        if not 0.0 <= self.sur <= 1.0:
            raise ValueError(f"sample usage rate {self.sur} outside [0, 1]")

    def summary(self) -> dict[str, Any]:
        out = {
            "method": self.method,
            "lambda": self.lam,
            "sur": self.sur,
            "nonzero": int(np.count_nonzero(self.beta_hat)),
        }
        if self.selections:
            ratios = [r.weight_ratio() for r in self.selections if r.weights.size]
            out["n_selected"] = sum(r.n_selected for r in self.selections)
            out["max_weight_ratio"] = max(ratios) if ratios else float("nan")
        if self.tuning_trace:
            out.update({f"tuned_{k}": v for k, v in self.tuning_trace.items()})
        return out


def contrast(beta_k: ArrayLike, beta0: ArrayLike) -> CoefVector:
    bk = np.asarray(beta_k, dtype=np.float64)
    b0 = np.asarray(beta0, dtype=np.float64)
    if bk.shape != b0.shape:
        raise DimensionError(f"cannot contrast shapes {bk.shape} and {b0.shape}")
    return bk - b0


def residuals(d: Dataset, beta: ArrayLike) -> NDArray[np.float64]:
    beta = np.asarray(beta, dtype=np.float64)
    if beta.shape != (d.p,):
        raise DimensionError(f"beta has shape {beta.shape}, dataset has p={d.p}")
    return d.y - d.x @ beta


def sample_usage_rate(problem: TransferProblem, selections: Sequence[SelectionRecord]) -> float:
    used = sum(r.n_selected for r in selections)
    return (problem.target.n + used) / problem.total_n
