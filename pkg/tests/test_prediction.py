import numpy as np
import pytest

from priorsurv import autodiff as ad
from priorsurv.labels import TimeGrid
from priorsurv.prediction import (
    expected_time,
    hazard_head,
    incidence,
    incidence_distribution,
    risk_score,
    survival_at_time,
)

rng = np.random.default_rng(31)


def unit_rows(n, d):
    m = rng.standard_normal((n, d))
    return m / np.linalg.norm(m, axis=1, keepdims=True)


GRID2 = TimeGrid(cuts=(0.0, 10.0, 20.0), scheme="uniform")


def test_equal_scores_give_uniform():
    prompts = np.tile(np.array([1.0, 0.0, 0.0]), (4, 1))
    res = incidence(np.array([0.0, 1.0, 0.0]), prompts, tau=5.0)
    assert np.allclose(res.y_hat, 0.25, atol=1e-12)


def test_zero_image_uniform_fallback_risk():
    prompts = unit_rows(8, 6)
    res = incidence(np.zeros(6), prompts, tau=3.0)
    assert np.allclose(res.y_hat, 1 / 8, atol=1e-12)
    assert res.risk == pytest.approx(4.5, abs=1e-10)


def test_incidence_softmax_arithmetic():
    # cosines [0.5, -0.5] at tau=1 -> [0.7311, 0.2689]
    prompts = np.array([[1.0, 0.0], [-1.0, 0.0]])
    f = np.array([0.5, np.sqrt(1 - 0.25)])
    res = incidence(f, prompts, tau=1.0)
    assert res.y_hat[0] == pytest.approx(0.73105858, abs=1e-7)
    assert res.y_hat[1] == pytest.approx(0.26894142, abs=1e-7)


def test_incidence_invariants_and_scale_invariance():
    prompts = unit_rows(5, 7)
    f = rng.standard_normal(7)
    res = incidence(f, prompts, tau=11.0)
    assert np.all(res.y_hat >= 0)
    assert res.y_hat.sum() == pytest.approx(1.0, abs=1e-10)
    assert np.all(np.diff(res.cif) >= -1e-15)
    assert res.cif[-1] == pytest.approx(1.0, abs=1e-10)
    assert np.allclose(res.survival + res.cif, 1.0, atol=1e-12)
    scaled = incidence(3.7 * f, prompts, tau=11.0)
    assert np.array_equal(res.y_hat, scaled.y_hat)


def test_zero_prompt_row_errors():
    prompts = np.vstack([np.zeros(4), np.ones(4)])
    with pytest.raises(ValueError, match="zero-norm prompt row"):
        incidence(np.ones(4), prompts, tau=1.0)


def test_risk_point_masses_and_uniform():
    res_first = incidence(np.zeros(3), unit_rows(8, 3), tau=1.0)
    # synthetic point-mass results built directly
    from priorsurv.prediction import IncidenceResult

    y = np.zeros(8)
    y[0] = 1.0
    cif = np.cumsum(y)
    first = IncidenceResult(y, cif, 1 - cif, float(cif.sum()))
    assert risk_score(first) == pytest.approx(8.0)
    y = np.zeros(8)
    y[-1] = 1.0
    cif = np.cumsum(y)
    last = IncidenceResult(y, cif, 1 - cif, float(cif.sum()))
    assert risk_score(last) == pytest.approx(1.0)
    assert risk_score(res_first) == pytest.approx(4.5, abs=1e-10)


def test_risk_mass_shift_identity():
    # moving eps from class i to j>i lowers risk by eps*(j-i)
    from priorsurv.prediction import IncidenceResult

    y = np.full(6, 1 / 6)
    cif = np.cumsum(y)
    base = risk_score(IncidenceResult(y, cif, 1 - cif, float(cif.sum())))
    eps, i, j = 0.05, 1, 4
    y2 = y.copy()
    y2[i] -= eps
    y2[j] += eps
    cif2 = np.cumsum(y2)
    moved = risk_score(IncidenceResult(y2, cif2, 1 - cif2, float(cif2.sum())))
    assert base - moved == pytest.approx(eps * (j - i), abs=1e-12)


def test_expected_time_examples():
    from priorsurv.prediction import IncidenceResult

    def result(y):
        y = np.asarray(y, dtype=float)
        cif = np.cumsum(y)
        return IncidenceResult(y, cif, 1 - cif, float(cif.sum()))

    assert expected_time(result([1.0, 0.0]), GRID2) == pytest.approx(5.0)
    assert expected_time(result([0.5, 0.5]), GRID2) == pytest.approx(10.0)
    assert expected_time(result([0.25, 0.75]), GRID2) == pytest.approx(12.5)
    with pytest.raises(ValueError):
        expected_time(result([1.0, 0.0, 0.0]), GRID2)


def test_incidence_fills_expected_time_with_grid():
    prompts = unit_rows(2, 4)
    res = incidence(rng.standard_normal(4), prompts, tau=2.0, grid=GRID2)
    assert res.expected_time == pytest.approx(
        res.y_hat[0] * 5.0 + res.y_hat[1] * 15.0
    )


def test_hazard_zero_cosines():
    prompts = unit_rows(3, 5)
    res = hazard_head(np.zeros(5), prompts, tau=7.0)
    assert np.allclose(res.hazards, 0.5)
    assert np.allclose(res.survival, [0.5, 0.25, 0.125])


def test_hazard_saturation():
    prompts = np.array([[1.0, 0.0], [0.0, 1.0]])
    res = hazard_head(np.array([1.0, 0.0]), prompts, tau=1e4)
    assert res.hazards[0] == pytest.approx(1.0)
    assert res.survival[0] == pytest.approx(0.0, abs=1e-12)


def test_hazard_cumulative_product_oracle():
    prompts = unit_rows(3, 6)
    f = rng.standard_normal(6)
    tau = 2.5
    res = hazard_head(f, prompts, tau)
    cos = (prompts / np.linalg.norm(prompts, axis=1, keepdims=True)) @ (
        f / np.linalg.norm(f)
    )
    h = 1 / (1 + np.exp(-tau * cos))
    surv = np.cumprod(1 - h)
    assert np.allclose(res.hazards, h, atol=1e-12)
    assert np.allclose(res.survival, surv, atol=1e-12)
    assert res.risk == pytest.approx(float(np.sum(1 - surv)), abs=1e-12)


def test_survival_at_time_piecewise_constant():
    prompts = unit_rows(2, 4)
    res = incidence(rng.standard_normal(4), prompts, tau=2.0)
    assert survival_at_time(res, GRID2, 0.0) == res.survival[0]
    assert survival_at_time(res, GRID2, 9.9) == res.survival[0]
    assert survival_at_time(res, GRID2, 10.0) == res.survival[1]
    assert survival_at_time(res, GRID2, 99.0) == res.survival[1]


def test_incidence_gradient_wrt_image_matches_fd():
    prompts = unit_rows(4, 5)
    f = ad.Tensor(rng.standard_normal(5), requires_grad=True)
    probe = rng.standard_normal(4)

    def scalar():
        return float(
            ad.matmul(incidence_distribution(f, prompts, ad.Tensor(3.0)), ad.Tensor(probe)).value
        )

    loss = ad.matmul(incidence_distribution(f, prompts, ad.Tensor(3.0)), ad.Tensor(probe))
    loss.backward()
    analytic = f.grad.copy()
    h = 1e-6
    fd = np.zeros_like(f.value)
    for i in range(5):
        orig = f.value[i]
        f.value[i] = orig + h
        up = scalar()
        f.value[i] = orig - h
        down = scalar()
        f.value[i] = orig
        fd[i] = (up - down) / (2 * h)
    assert np.linalg.norm(analytic - fd) / np.linalg.norm(fd) < 1e-4
