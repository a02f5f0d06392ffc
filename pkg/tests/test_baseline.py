"""Harmonic regression: exact recovery, normal-equation identities,
extrapolation."""

import numpy as np
import pytest

from slnn import data as gd
from slnn.baseline import (
    HarmonicModel,
    coefficients_csv,
    design_matrix,
    fit_baseline,
    predict_baseline,
)


def _series_from_cell_values(values):
    """One-cell grid padded to 4x4 (all ocean; other cells zero)."""
    t = len(values)
    fields = np.zeros((t, 4, 4))
    fields[:, 0, 0] = values
    return gd.GridSeries(fields, np.ones((4, 4), dtype=np.uint8)).validate()


class TestExactRecovery:
    def test_pure_annual_sine(self):
        t = np.arange(48.0)
        series = _series_from_cell_values(0.1 * np.sin(2 * np.pi * t / 12.0))
        model = fit_baseline(series)
        c = model.coeffs[0, 0]
        assert abs(c[3] - 0.1) < 1e-9
        for i in (0, 1, 2, 4, 5, 6):
            assert abs(c[i]) < 1e-9

    def test_constant_series(self):
        series = _series_from_cell_values(np.full(36, 0.25))
        c = fit_baseline(series).coeffs[0, 0]
        assert abs(c[0] - 0.25) < 1e-9
        assert np.all(np.abs(c[1:]) < 1e-9)

    def test_pure_trend(self):
        t = np.arange(60.0)
        series = _series_from_cell_values(0.001 * t)
        c = fit_baseline(series).coeffs[0, 0]
        assert abs(c[1] - 0.001) < 1e-9

    def test_full_model_recovery_against_generator(self):
        series = gd.synth("harmonic", 8, 8, 72, seed=5, accel=1e-5)
        truth = gd.synth_coefficients("harmonic", 8, 8, accel=1e-5)
        model = fit_baseline(series)
        assert np.max(np.abs(model.coeffs - truth)) < 1e-9

    def test_training_residual_rmse_tiny(self):
        series = gd.synth("harmonic", 8, 8, 48, seed=2)
        model = fit_baseline(series)
        pred = predict_baseline(model, range(series.months))
        ocean = series.mask == 1
        resid = pred.fields[:, ocean] - series.fields[:, ocean]
        assert np.sqrt(np.mean(resid**2)) < 1e-9


class TestLeastSquaresIdentities:
    def test_residuals_orthogonal_to_design(self):
        series = gd.synth("wave", 8, 8, 60, seed=7)  # wave+noise: nonzero residual
        model = fit_baseline(series)
        pred = predict_baseline(model, range(series.months))
        design = design_matrix(np.arange(series.months))
        ocean = series.mask == 1
        resid = series.fields[:, ocean] - pred.fields[:, ocean]
        # X^T r == 0 within 1e-8 relative to X^T y
        lhs = design.T @ resid
        scale = np.abs(design.T @ series.fields[:, ocean]).max()
        assert np.max(np.abs(lhs)) / scale < 1e-8

    def test_shift_equivariance(self):
        series = gd.synth("harmonic", 8, 8, 48, seed=3)
        base = fit_baseline(series).coeffs
        shifted_fields = series.fields.copy()
        shifted_fields[:, 2, 3] += 0.5
        shifted = gd.GridSeries(shifted_fields, series.mask.copy()).validate()
        moved = fit_baseline(shifted).coeffs
        delta = moved - base
        assert abs(delta[2, 3, 0] - 0.5) < 1e-9
        delta[2, 3, 0] = 0.0
        assert np.max(np.abs(delta)) < 1e-9


class TestPredict:
    def test_quadratic_extrapolation(self):
        coeffs = np.zeros((4, 4, 7))
        coeffs[:, :, 2] = 1e-5
        template = gd.GridSeries(
            np.zeros((1, 4, 4)), np.ones((4, 4), dtype=np.uint8)
        ).validate()
        model = HarmonicModel(coeffs, template.mask, template)
        pred = predict_baseline(model, [276])
        assert abs(pred.fields[0, 0, 0] - 1e-5 * 276**2) < 1e-12
        assert abs(pred.fields[0, 0, 0] - 0.76176) < 1e-10

    def test_all_zero_coefficients_give_zero_field(self):
        template = gd.GridSeries(
            np.zeros((1, 4, 4)), np.ones((4, 4), dtype=np.uint8)
        ).validate()
        model = HarmonicModel(np.zeros((4, 4, 7)), template.mask, template)
        pred = predict_baseline(model, range(12))
        np.testing.assert_array_equal(pred.fields, np.zeros((12, 4, 4)))

    def test_land_cells_carry_fill(self):
        series = gd.synth("harmonic", 8, 8, 48, seed=1, land=True)
        model = fit_baseline(series)
        pred = predict_baseline(model, range(10))
        assert np.all(pred.fields[:, series.mask == 0] == series.fill)

    def test_prediction_epoch_follows_month_axis(self):
        series = gd.synth("harmonic", 8, 8, 48, seed=1)
        model = fit_baseline(series)
        pred = predict_baseline(model, range(48, 60))
        assert pred.month_date(0) == (1997, 1)

    def test_non_contiguous_months_rejected(self):
        series = gd.synth("harmonic", 8, 8, 48, seed=1)
        model = fit_baseline(series)
        with pytest.raises(ValueError, match="contiguous"):
            predict_baseline(model, [0, 2, 4])


class TestFitErrors:
    def test_too_few_months_rejected(self):
        series = _series_from_cell_values(np.arange(6.0))
        with pytest.raises(ValueError, match="at least 7"):
            fit_baseline(series)


def test_coefficients_csv_layout(tmp_path):
    series = gd.synth("harmonic", 8, 8, 48, seed=4, land=True)
    model = fit_baseline(series)
    path = tmp_path / "coeffs.csv"
    coefficients_csv(model, path)
    lines = path.read_text().splitlines()
    assert lines[0] == "lon,lat,a0,a1,a2,s1,c1,s2,c2"
    assert len(lines) == 1 + series.ocean_cells
    row = lines[1].split(",")
    assert len(row) == 9
    float(row[2])  # parses
