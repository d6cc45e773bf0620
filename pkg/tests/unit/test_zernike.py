from oamlink.field import Aperture, make_grid
from oamlink.zernike import (
    noll_to_nm, pupil_rms, remove_tip_tilt, zernike_eval, zernike_fit, zernike_reconstruct, ZernikeCoeffs,
    ZernikeError
)
from tests.utils import WAVELENGTH

import numpy as np
import pytest

GRID = make_grid(256, 0.03, WAVELENGTH)
PUPIL = Aperture(0.02)


def test_noll_ordering() -> None:
    assert [noll_to_nm(j) for j in range(7, 12)] == [(3, -1), (3, 1), (3, -3), (3, 3), (4, 0)]
    with pytest.raises(ZernikeError):
        noll_to_nm(0)


def test_modes_are_noll_normalized_over_the_pupil() -> None:
    mask = PUPIL.mask(GRID)
    modes = np.stack([zernike_eval(j, GRID, PUPIL.diameter)[mask] for j in range(1, 11)])
    gram = modes @ modes.T / mask.sum()
    np.testing.assert_allclose(gram, np.eye(10), atol=0.02)


def test_fit_recovers_coefficients_of_a_synthesized_phase() -> None:
    coeffs = ZernikeCoeffs(np.array([0.0, 0.4, -0.2, 0.3, 0.1, 0.0, -0.15, 0.05]))
    phase = zernike_reconstruct(coeffs, GRID, PUPIL.diameter)
    fitted = zernike_fit(phase, GRID, PUPIL, 8)
    np.testing.assert_allclose(fitted.coeffs, coeffs.coeffs, atol=1e-9)


def test_rms_equals_coefficient_norm() -> None:
    phase = 0.3 * zernike_eval(4, GRID, PUPIL.diameter) + 0.4 * zernike_eval(7, GRID, PUPIL.diameter)
    assert pupil_rms(phase, GRID, PUPIL) == pytest.approx(0.5, rel=0.02)
    assert ZernikeCoeffs(np.array([9.0, 0.0, 0.0, 0.3, 0.0, 0.0, 0.4])).rms() == pytest.approx(0.5)


def test_tip_tilt_removal_leaves_higher_orders() -> None:
    defocus = 0.5 * zernike_eval(4, GRID, PUPIL.diameter)
    phase = defocus + 1.2 * zernike_eval(2, GRID, PUPIL.diameter) - 0.7 * zernike_eval(3, GRID, PUPIL.diameter) + 2.0
    fitted = zernike_fit(remove_tip_tilt(phase, GRID, PUPIL), GRID, PUPIL, 4)
    assert fitted.noll(2) == pytest.approx(0.0, abs=1e-9)
    assert fitted.noll(3) == pytest.approx(0.0, abs=1e-9)
    assert fitted.noll(4) == pytest.approx(0.5, abs=1e-9)


def test_single_coefficient() -> None:
    c = ZernikeCoeffs.single(4, 0.25, n_terms=15)
    assert c.n_terms == 15
    assert c.noll(4) == 0.25
    assert c.rms() == 0.25


def test_coefficients_must_be_finite_vector() -> None:
    with pytest.raises(ZernikeError):
        ZernikeCoeffs(np.array([0.0, np.nan]))
    with pytest.raises(ZernikeError):
        ZernikeCoeffs(np.zeros((2, 2)))


def test_fit_validation() -> None:
    phase = np.zeros((GRID.n, GRID.n))
    with pytest.raises(ZernikeError):
        zernike_fit(phase, GRID, PUPIL, 0)
    with pytest.raises(ZernikeError):
        zernike_fit(np.zeros((4, 4)), GRID, PUPIL, 3)
    with pytest.raises(ZernikeError):
        zernike_fit(phase, GRID, Aperture(0.04), 3)
    with pytest.raises(ZernikeError):
        # fewer than 16 samples across
        zernike_fit(phase, GRID, Aperture(10 * GRID.pitch), 3)


def test_off_axis_pupil() -> None:
    pupil = Aperture(0.01, (0.004, -0.002))
    phase = zernike_eval(5, GRID, pupil.diameter, pupil.center_offset)
    fitted = zernike_fit(phase, GRID, pupil, 6)
    assert fitted.noll(5) == pytest.approx(1.0, abs=1e-9)
    assert fitted.rms(first=6) == pytest.approx(0.0, abs=1e-9)
