import numpy as np
import pytest
from hypothesis import given, strategies as st

from riwtl.core import (Dataset, DimensionError, FitResult, Noise, SelectionRecord, TransferProblem,
                        TruthSpec, contrast, residuals, sample_usage_rate)


def test_dataset_validates_shapes_and_values():
    with pytest.raises(DimensionError):
        Dataset(np.zeros((3, 2)), np.zeros(4))
    with pytest.raises(ValueError):
        Dataset(np.array([[0.0, np.nan]]), np.zeros(1))
    d = Dataset(np.ones((3, 2)), np.arange(3.0))
    assert (d.n, d.p) == (3, 2)
    with pytest.raises(ValueError):
        d.x[0, 0] = 5.0  # read-only


def test_problem_requires_matching_columns():
    t = Dataset(np.ones((3, 2)), np.zeros(3))
    with pytest.raises(DimensionError):
        TransferProblem(t, (Dataset(np.ones((3, 3)), np.zeros(3)),))
    assert TransferProblem(t).K == 0


def test_truth_support():
    tr = TruthSpec([0, 2.0, 0, -1.0], ())
    assert tr.support0.tolist() == [1, 3]
    assert tr.s0 == 2
    assert len(tr.noise) == 1 and tr.noise[0] == Noise()


def test_contrast_examples():
    assert contrast([1, 1], [1, 1]).tolist() == [0, 0]
    assert contrast([1, 0.5], [1, 1]).tolist() == [0, -0.5]
    b0 = np.r_[np.ones(5), np.zeros(95)]
    b1 = b0.copy()
    b1[5:10] -= 0.2
    assert np.abs(contrast(b1, b0)).sum() == pytest.approx(1.0)
    with pytest.raises(DimensionError):
        contrast([1.0], [1.0, 2.0])


def test_residual_examples():
    d = Dataset(np.eye(2), [1.0, 2.0])
    assert residuals(d, [1.0, 2.0]).tolist() == [0.0, 0.0]
    rng = np.random.default_rng(4)
    d = Dataset(rng.standard_normal((5, 3)), rng.standard_normal(5))
    assert np.array_equal(residuals(d, np.zeros(3)), d.y)
    b = rng.standard_normal(3)
    manual = [d.y[i] - sum(d.x[i, j] * b[j] for j in range(3)) for i in range(5)]
    np.testing.assert_allclose(residuals(d, b), manual, rtol=0, atol=1e-14)


def _record(A=1.5, M=3.0):
    r0 = np.array([0.2, 2.0, -1.0, 0.5])
    eta = np.array([1.0, 0.0, -3.5, 2.9])
    sel = np.array([0, 3])
    return SelectionRecord(1, np.arange(4), sel, sel, np.array([1.0, 2.0]), eta, r0, r0 - eta, A, M)


def test_selection_record_check_passes_and_catches_tampering():
    rec = _record()
    rec.check()
    assert rec.weight_map() == {0: 1.0, 3: 2.0}
    assert rec.weight_ratio() == 2.0
    bad = SelectionRecord(1, rec.subset, np.array([0, 1, 3]), rec.weight_index, rec.weights, rec.etas,
                          rec.residuals_target_scale, rec.residuals_source_scale, 1.5, 3.0)
    with pytest.raises(AssertionError):
        bad.check()


def test_fit_result_sur_bounds():
    with pytest.raises(ValueError):
        FitResult(np.zeros(2), "x", 0.1, sur=1.2)


@given(st.integers(1, 50), st.lists(st.integers(3, 40), max_size=4), st.data())
def test_sur_in_bounds(n0, sizes, data):
    t = Dataset(np.zeros((n0, 1)), np.zeros(n0))
    srcs = tuple(Dataset(np.zeros((n, 1)), np.zeros(n)) for n in sizes)
    prob = TransferProblem(t, srcs)
    recs = []
    for k, n in enumerate(sizes, start=1):
        m = data.draw(st.integers(0, n))
        sel = np.arange(m)
        recs.append(SelectionRecord(k, np.arange(n), sel, sel, np.ones(m), np.zeros(n), np.zeros(n),
                                    np.zeros(n), 1.0, 1.0))
    rate = sample_usage_rate(prob, recs)
    assert n0 / prob.total_n - 1e-15 <= rate <= 1.0
