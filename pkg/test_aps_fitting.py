import numpy as np
import pytest

from aps_fitting import angle_grid, build_dictionary, fit_aps, reconstruct_covariance, refine_covariance
from channel_model import channel_covariance
from conftest import random_covariance
from errors import DimensionMismatch, InvalidParameter, NegativeCoefficient
from hermitian import hermitian_part, is_psd


def test_angle_grid_uniform_in_angle():
    np.testing.assert_allclose(angle_grid(4), [-90.0, -45.0, 0.0, 45.0])


def test_angle_grid_uniform_in_sine():
    np.testing.assert_allclose(angle_grid(4, "sine"), [-90.0, -30.0, 0.0, 30.0], atol=1e-12)


def test_angle_grid_rejects_bad_input():
    with pytest.raises(InvalidParameter):
        angle_grid(0)
    with pytest.raises(InvalidParameter):
        angle_grid(8, "log")


def test_dictionary_layout(on_grid_geometry):
    d = build_dictionary(on_grid_geometry)
    assert d.grid_size == 32
    assert d.num_blocks == 2
    assert d.num_columns == 64
    assert d.masks[-1].all()
    assert d.masks[0][:8].all() and not d.masks[0][8:].any()
    assert d.matrix().shape == (256, 64)


def test_analytic_gram_matches_explicit_dictionary(on_grid_geometry):
    d = build_dictionary(on_grid_geometry, grid_size=20)
    B = d.matrix()
    np.testing.assert_allclose(d.gram, np.real(B.conj().T @ B), atol=1e-9)


def test_projection_matches_explicit_dictionary(on_grid_geometry, rng):
    d = build_dictionary(on_grid_geometry, grid_size=20)
    C = hermitian_part(random_covariance(rng, 16))
    expected = np.real(d.matrix().conj().T @ C.reshape(-1, order="F"))
    np.testing.assert_allclose(d.projection(C), expected, atol=1e-9)


def test_projection_checks_size(on_grid_geometry):
    d = build_dictionary(on_grid_geometry)
    with pytest.raises(DimensionMismatch):
        d.projection(np.eye(4, dtype=complex))


def test_exact_on_grid_covariance_round_trips(on_grid_geometry):
    C = channel_covariance(on_grid_geometry)
    refined, fit = refine_covariance(build_dictionary(on_grid_geometry), C)
    assert fit.converged
    assert np.linalg.norm(refined - C) < 1e-6


def test_reconstruction_is_psd_from_indefinite_input(on_grid_geometry, rng):
    C = channel_covariance(on_grid_geometry)
    noise = rng.standard_normal((16, 16)) + 1j * rng.standard_normal((16, 16))
    indefinite = C + 0.5 * hermitian_part(noise)
    assert not is_psd(indefinite)
    refined, _ = refine_covariance(build_dictionary(on_grid_geometry), indefinite)
    assert is_psd(refined)


def test_fit_objective_is_frobenius_error(on_grid_geometry, rng):
    d = build_dictionary(on_grid_geometry)
    C = hermitian_part(random_covariance(rng, 16)) - 0.2 * np.eye(16)
    fit = fit_aps(d, C)
    error = np.linalg.norm(reconstruct_covariance(d, fit.coefficients) - C) ** 2
    assert fit.objective == pytest.approx(error, rel=1e-6, abs=1e-9)
    assert np.all(fit.coefficients >= 0)


def test_reconstruct_validates_coefficients(on_grid_geometry):
    d = build_dictionary(on_grid_geometry)
    gamma = np.zeros(d.num_columns)
    gamma[3] = -0.1
    with pytest.raises(NegativeCoefficient):
        reconstruct_covariance(d, gamma)
    with pytest.raises(DimensionMismatch):
        reconstruct_covariance(d, np.zeros(5))


def test_reconstruct_single_common_column(on_grid_geometry):
    d = build_dictionary(on_grid_geometry)
    gamma = np.zeros(d.num_columns)
    gamma[d.grid_size + 16] = 2.0  # common block, broadside
    np.testing.assert_allclose(reconstruct_covariance(d, gamma), 2.0 * np.ones((16, 16)), atol=1e-12)
