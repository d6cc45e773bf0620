from hypothesis import given
from hypothesis import strategies as st
from oamlink.field import zero_field
from oamlink.modes import BasisKind, build_space, hybrid_space
from oamlink.qkdsec import (
    binary_entropy_d, crosstalk, CrosstalkMatrix, evaluate_strategy, fidelity, fidelity_model, fidelity_threshold,
    FidelityModelVariant, FidelityStats, fit_fidelity_model, Hybrid, hybrid_outcome, improvement_factor, key_rate,
    mean_matrix, ModelFitError, mub_fidelity, NoStrategy, qser, security_verdict, SecurityInputError, Spacing,
    StrategyError
)
from tests.utils import small_grid, WAIST

import csv
import logging
import math
import numpy as np
import pytest

LABELS = (-2, -1, 0, 1, 2)


def tridiagonal(diagonal: float = 0.8, neighbour: float = 0.1) -> CrosstalkMatrix:
    raw = diagonal * np.eye(5) + neighbour * (np.eye(5, k=1) + np.eye(5, k=-1))
    return CrosstalkMatrix.from_raw(BasisKind.OAM, LABELS, raw)


@pytest.fixture(name="ensemble")
def fixture_ensemble():
    return [tridiagonal(), tridiagonal(0.7, 0.15), tridiagonal(0.9, 0.05)]


@pytest.mark.parametrize("d,expected", [(3, 0.8405), (5, 0.7901), (7, 0.7630), (10, 0.7378)])
def test_fidelity_thresholds(d: int, expected: float) -> None:
    assert fidelity_threshold(d) == pytest.approx(expected, abs=5e-4)
    assert key_rate(d, 1 - fidelity_threshold(d)) == pytest.approx(0.0, abs=1e-8)


def test_thresholds_decrease_with_dimension() -> None:
    values = [fidelity_threshold(d) for d in range(2, 12)]
    assert values == sorted(values, reverse=True)


def test_noiseless_key_rate() -> None:
    assert key_rate(5, 0.0) == pytest.approx(math.log2(5))
    assert binary_entropy_d(0.0, 5) == 0.0


@given(
    st.integers(min_value=2, max_value=16),
    st.floats(min_value=0.0, max_value=1.0),
    st.floats(min_value=0.0, max_value=1.0),
)
def test_key_rate_never_grows_with_error(d: int, a: float, b: float) -> None:
    low, high = sorted((a, b))
    limit = (d - 1) / d
    assert key_rate(d, low * limit) >= key_rate(d, high * limit) - 1e-12


@pytest.mark.parametrize("d,e", [(1, 0.0), (5, 0.81), (5, -0.1)])
def test_error_rate_validation(d: int, e: float) -> None:
    with pytest.raises(SecurityInputError):
        key_rate(d, e)


def test_security_verdict_is_strict() -> None:
    threshold = fidelity_threshold(5)
    assert not security_verdict(threshold, 5)
    assert security_verdict(threshold + 1e-6, 5)


def test_identity_channel_gives_identity_crosstalk() -> None:
    grid = small_grid(256)
    for kind in (BasisKind.OAM, BasisKind.ANG):
        m = crosstalk(build_space(2, 1, WAIST, kind), grid, lambda f: f)
        np.testing.assert_allclose(m.probabilities, np.eye(5), atol=1e-6)
        np.testing.assert_allclose(m.efficiency, 1.0, rtol=1e-6)
        assert fidelity(m) == pytest.approx(1.0)
        assert qser(m) == pytest.approx(0.0, abs=1e-6)


def test_dark_channel_flags_rows(caplog) -> None:
    grid = small_grid()
    with caplog.at_level(logging.WARNING, logger="oamlink.qkdsec"):
        m = crosstalk(build_space(1, 1, WAIST), grid, lambda f: zero_field(grid))
    assert m.flagged.all()
    assert "No power detected" in caplog.text
    with pytest.raises(SecurityInputError):
        fidelity(m)


def test_reference_count_must_match() -> None:
    grid = small_grid()
    with pytest.raises(SecurityInputError):
        crosstalk(build_space(1, 1, WAIST), grid, lambda f: f, reference=[zero_field(grid)])


def test_rows_are_renormalized() -> None:
    m = tridiagonal()
    np.testing.assert_allclose(m.probabilities.sum(axis=1), 1.0)
    assert m.probabilities[0, 0] == pytest.approx(0.8 / 0.9)
    assert fidelity(m) == pytest.approx((2 * 0.8 / 0.9 + 3 * 0.8) / 5)


def test_mean_matrix_averages_raw_overlaps(ensemble) -> None:
    m = mean_matrix(ensemble)
    assert m.raw[2, 2] == pytest.approx(0.8)
    assert m.labels == LABELS


def test_mub_fidelity_is_equal_weight() -> None:
    oam = tridiagonal()
    ang = CrosstalkMatrix.from_raw(BasisKind.ANG, range(5), np.eye(5))
    assert mub_fidelity(oam, ang) == pytest.approx((fidelity(oam) + 1.0) / 2)
    with pytest.raises(SecurityInputError):
        mub_fidelity(oam, CrosstalkMatrix.from_raw(BasisKind.ANG, range(3), np.eye(3)))


def test_crosstalk_csv(tmp_path) -> None:
    path = tmp_path / "crosstalk.csv"
    tridiagonal().write_csv(path)
    with open(path, newline="") as fp:
        rows = list(csv.reader(fp))
    assert rows[0] == ["prepared", "-2", "-1", "0", "1", "2", "efficiency"]
    assert len(rows) == 6
    assert float(rows[1][-1]) == pytest.approx(0.9)


def test_fidelity_stats() -> None:
    stats = FidelityStats.from_series([0.9, 0.7], 0.79)
    assert stats.mean == pytest.approx(0.8)
    assert stats.std == pytest.approx(0.1)
    assert stats.fraction_above_threshold == 0.5
    assert stats.to_dict()["n_realizations"] == 2
    with pytest.raises(SecurityInputError):
        FidelityStats.from_series([], 0.79)
    with pytest.raises(SecurityInputError):
        FidelityStats.from_series([1.5], 0.79)


def test_improvement_factor() -> None:
    never = FidelityStats.from_series([0.5, 0.6], 0.79)
    half = FidelityStats.from_series([0.9, 0.7], 0.79)
    always = FidelityStats.from_series([0.9, 0.95], 0.79)
    assert improvement_factor(half, always) == pytest.approx(2.0)
    assert math.isinf(improvement_factor(never, half))
    assert math.isnan(improvement_factor(never, never))


def test_no_strategy(ensemble) -> None:
    outcome = evaluate_strategy(ensemble[:1], NoStrategy())
    assert outcome.dimension == 5
    assert outcome.stats.mean == pytest.approx(0.8356, abs=1e-4)
    assert outcome.secure


def test_spacing_removes_nearest_neighbour_crosstalk(ensemble) -> None:
    outcome = evaluate_strategy(ensemble, Spacing(2))
    assert outcome.dimension == 3
    assert outcome.stats.mean == pytest.approx(1.0)
    assert outcome.threshold == pytest.approx(fidelity_threshold(3))
    assert outcome.secure


def test_spacing_validation(ensemble) -> None:
    with pytest.raises(StrategyError):
        evaluate_strategy(ensemble, Spacing(3))
    with pytest.raises(StrategyError):
        evaluate_strategy(ensemble, Spacing(2, max_ell=4))
    with pytest.raises(StrategyError):
        evaluate_strategy(ensemble, Spacing(0))
    ang = [CrosstalkMatrix.from_raw(BasisKind.ANG, range(5), np.eye(5))]
    with pytest.raises(StrategyError):
        evaluate_strategy(ang, Spacing(2))


def test_hybrid_doubles_the_dimension(ensemble) -> None:
    outcome = evaluate_strategy(ensemble, Hybrid(0.9823))
    assert outcome.dimension == 10
    assert outcome.stats.mean == pytest.approx(evaluate_strategy(ensemble, NoStrategy()).stats.mean * 0.9823)
    with pytest.raises(StrategyError):
        evaluate_strategy(ensemble, Hybrid(0.4))


def test_hybrid_rescues_a_marginal_link() -> None:
    space = build_space(2, 1, WAIST)
    assert not security_verdict(0.78, space.dimension)
    outcome = hybrid_outcome(hybrid_space(space, 0.9823), 0.78)
    assert outcome.dimension == 10
    assert outcome.secure


def test_ensemble_validation() -> None:
    with pytest.raises(StrategyError):
        evaluate_strategy([], NoStrategy())
    mixed = [tridiagonal(), CrosstalkMatrix.from_raw(BasisKind.OAM, (-1, 0, 1), np.eye(3))]
    with pytest.raises(StrategyError):
        evaluate_strategy(mixed, NoStrategy())


def test_submatrix_needs_known_members() -> None:
    with pytest.raises(StrategyError):
        tridiagonal().submatrix([-4, 0, 4])
    with pytest.raises(StrategyError):
        tridiagonal().submatrix([0])


@pytest.mark.parametrize("variant", list(FidelityModelVariant))
def test_model_fit_recovers_coefficient(variant: FidelityModelVariant) -> None:
    x = np.linspace(0.25, 4.0, 12)
    points = list(zip(x, fidelity_model(x, 3.404, variant)))
    assert fit_fidelity_model(points, variant) == pytest.approx(3.404, rel=1e-5)


def test_model_variants_are_complementary() -> None:
    x = np.array([0.0, 1.0, 2.5])
    total = fidelity_model(x, 2.0, FidelityModelVariant.AS_PRINTED) + fidelity_model(x, 2.0, "B")
    np.testing.assert_allclose(total, 1.0)
    assert float(fidelity_model(0.0, 2.0, FidelityModelVariant.COMPLEMENT)) == 1.0


def test_model_fit_validation() -> None:
    with pytest.raises(ModelFitError):
        fit_fidelity_model([(0.0, 1.0), (1.0, 0.5)], FidelityModelVariant.COMPLEMENT)
    with pytest.raises(ModelFitError):
        fit_fidelity_model([(0.0, 1.0), (1.0, math.nan), (2.0, 0.3)], FidelityModelVariant.COMPLEMENT)
