"""GridSeries container, SLAG format, splitting, synthesis, normalization."""

import struct

import numpy as np
import pytest

from slnn import data as gd


def _random_series(seed=0, t=6, h=8, w=8, land=False):
    rng = np.random.default_rng(seed)
    # quantize to float32 so a save/load round trip is exactly lossless
    fields = (rng.standard_normal((t, h, w)) * 0.1).astype(np.float32).astype(np.float64)
    mask = np.ones((h, w), dtype=np.uint8)
    if land:
        mask[:2, :3] = 0
        fields[:, mask == 0] = gd.FILL_VALUE
    return gd.GridSeries(fields, mask, -15.0, 110.0, 0.25, 0.25, 1993, 1).validate()


class TestSlagFormat:
    def test_round_trip_bit_identical(self, tmp_path):
        series = _random_series(seed=1, land=True)
        path = tmp_path / "a.slag"
        gd.save(series, path)
        loaded = gd.load(path)
        np.testing.assert_array_equal(loaded.fields, series.fields)
        np.testing.assert_array_equal(loaded.mask, series.mask)
        assert loaded.epoch_year == 1993 and loaded.epoch_month == 1
        # a second save of the loaded series reproduces the file bytes
        path2 = tmp_path / "b.slag"
        gd.save(loaded, path2)
        assert path.read_bytes() == path2.read_bytes()

    def test_truncated_file_names_lengths(self, tmp_path):
        series = _random_series()
        path = tmp_path / "t.slag"
        gd.save(series, path)
        raw = path.read_bytes()
        path.write_bytes(raw[: len(raw) - 10])
        with pytest.raises(gd.GridFormatError, match=rf"expected {len(raw)} bytes, got {len(raw) - 10}"):
            gd.load(path)

    def test_bad_magic_rejected_at_byte_zero(self, tmp_path):
        path = tmp_path / "m.slag"
        gd.save(_random_series(), path)
        raw = bytearray(path.read_bytes())
        raw[:4] = b"NOPE"
        path.write_bytes(bytes(raw))
        with pytest.raises(gd.GridFormatError, match="byte 0"):
            gd.load(path)

    def test_bad_version_rejected(self, tmp_path):
        path = tmp_path / "v.slag"
        gd.save(_random_series(), path)
        raw = bytearray(path.read_bytes())
        raw[4:6] = struct.pack("<H", 9)
        path.write_bytes(bytes(raw))
        with pytest.raises(gd.GridFormatError, match="version 9"):
            gd.load(path)

    def test_mask_violation_rejected(self, tmp_path):
        series = _random_series(land=True)
        path = tmp_path / "mv.slag"
        gd.save(series, path)
        raw = bytearray(path.read_bytes())
        # first land cell is (0, 0): overwrite its month-0 value
        data_off = 41 + series.mask.size
        raw[data_off : data_off + 4] = struct.pack("<f", 0.123)
        path.write_bytes(bytes(raw))
        with pytest.raises(gd.GridFormatError, match="land"):
            gd.load(path)

    def test_nan_on_ocean_rejected(self, tmp_path):
        series = _random_series()
        path = tmp_path / "nan.slag"
        gd.save(series, path)
        raw = bytearray(path.read_bytes())
        data_off = 41 + series.mask.size
        raw[data_off : data_off + 4] = struct.pack("<f", float("nan"))
        path.write_bytes(bytes(raw))
        with pytest.raises(gd.GridFormatError, match="finite"):
            gd.load(path)


class TestSplit:
    def test_paper_axis_lengths(self):
        series = _random_series(t=276, h=4, w=4)
        spec = gd.SplitSpec.from_years(16, 4, 3)
        train, val, test = gd.split(series, spec)
        assert (train.months, val.months, test.months) == (192, 48, 36)
        # boundaries at year transitions of the 1993-01 axis
        assert train.month_date(0) == (1993, 1)
        assert val.month_date(0) == (2009, 1)
        assert test.month_date(0) == (2013, 1)

    def test_partitions_tile_the_series(self):
        series = _random_series(t=24)
        train, val, test = gd.split(series, gd.SplitSpec(12, 6, 6))
        rebuilt = np.concatenate([train.fields, val.fields, test.fields])
        np.testing.assert_array_equal(rebuilt, series.fields)

    def test_empty_partition_rejected(self):
        series = _random_series(t=24)
        with pytest.raises(ValueError, match="empty"):
            gd.split(series, gd.SplitSpec.from_years(1, 1, 0))

    def test_gap_or_overlap_rejected(self):
        series = _random_series(t=24)
        with pytest.raises(ValueError, match="gap or overlap"):
            gd.split(series, gd.SplitSpec(12, 6, 12))

    def test_paper_cell_month_products(self):
        cells = 170_240
        assert cells * 276 == 46_986_240  # about 47 million values overall
        assert cells * 192 == 32_686_080  # almost 33 million for training


class TestSynth:
    def test_same_seed_identical(self):
        a = gd.synth("wave", 8, 8, 12, seed=5)
        b = gd.synth("wave", 8, 8, 12, seed=5)
        np.testing.assert_array_equal(a.fields, b.fields)

    def test_invariants_hold_across_seeds_and_kinds(self):
        for seed in range(3):
            for kind in ("constant", "harmonic", "wave"):
                series = gd.synth(kind, 8, 8, 10, seed=seed, land=(seed == 2))
                series.validate()

    def test_wave_shifts_one_cell_west_per_month(self):
        series = gd.synth(
            "wave", 16, 16, 6, seed=3,
            offset=0.0, trend=0.0, accel=0.0, annual=0.0, semiannual=0.0, noise=0.0,
        )
        band = slice(4, 12)  # rows h//4 .. 3h//4
        for t in range(5):
            shifted = np.roll(series.fields[t, band, :], -1, axis=1)
            np.testing.assert_allclose(series.fields[t + 1, band, :], shifted, atol=1e-12)

    def test_harmonic_matches_generating_coefficients(self):
        h = w = 8
        series = gd.synth("harmonic", h, w, 36, seed=1)
        coeffs = gd.synth_coefficients("harmonic", h, w)
        t = np.arange(36.0)
        w1 = 2 * np.pi / 12.0
        at = (
            coeffs[..., 0][None]
            + coeffs[..., 1][None] * t[:, None, None]
            + coeffs[..., 2][None] * t[:, None, None] ** 2
            + coeffs[..., 3][None] * np.sin(w1 * t)[:, None, None]
            + coeffs[..., 4][None] * np.cos(w1 * t)[:, None, None]
            + coeffs[..., 5][None] * np.sin(2 * w1 * t)[:, None, None]
            + coeffs[..., 6][None] * np.cos(2 * w1 * t)[:, None, None]
        )
        np.testing.assert_allclose(series.fields, at, atol=1e-12)

    def test_land_blob_masked_and_filled(self):
        series = gd.synth("harmonic", 16, 16, 6, seed=0, land=True)
        assert 0 < series.ocean_cells < 256
        land = series.mask == 0
        assert np.all(series.fields[:, land] == gd.FILL_VALUE)

    def test_extents_must_be_divisible_by_four(self):
        with pytest.raises(ValueError, match="divisible"):
            gd.synth("harmonic", 6, 8, 10, seed=0)


class TestNormalize:
    def test_round_trip_within_tolerance(self):
        series = gd.synth("wave", 8, 8, 24, seed=2, land=True)
        normed, stats = gd.normalize(series)
        back = gd.denormalize(normed, stats)
        ocean = series.mask == 1
        assert np.max(np.abs(back.fields[:, ocean] - series.fields[:, ocean])) < 1e-6

    def test_ocean_stats_are_standardized(self):
        series = gd.synth("wave", 8, 8, 24, seed=2)
        normed, _ = gd.normalize(series)
        ocean = normed.fields[:, series.mask == 1]
        assert abs(ocean.mean()) < 1e-12
        assert abs(ocean.std() - 1.0) < 1e-12

    def test_constant_field_rejected(self):
        series = gd.synth("constant", 8, 8, 10, seed=0)
        with pytest.raises(ValueError, match="variance"):
            gd.normalize(series)

    def test_half_land_grid_matches_hand_computation(self):
        fields = np.full((1, 2, 2), gd.FILL_VALUE)
        fields[0, 0, 0] = 1.0
        fields[0, 0, 1] = 3.0
        mask = np.array([[1, 1], [0, 0]], dtype=np.uint8)
        series = gd.GridSeries(fields, mask).validate()
        normed, stats = gd.normalize(series)
        assert stats.mean == 2.0 and stats.std == 1.0  # land cells excluded
        np.testing.assert_array_equal(normed.fields[0, 0], [-1.0, 1.0])
        assert np.all(normed.fields[0, 1] == gd.FILL_VALUE)

    def test_land_cells_keep_fill(self):
        series = gd.synth("wave", 8, 8, 6, seed=1, land=True)
        normed, _ = gd.normalize(series)
        assert np.all(normed.fields[:, series.mask == 0] == series.fill)


class TestMonthArithmetic:
    def test_add_months(self):
        assert gd.add_months(1993, 1, 0) == (1993, 1)
        assert gd.add_months(1993, 1, 240) == (2013, 1)
        assert gd.add_months(2013, 1, 8) == (2013, 9)
        assert gd.add_months(1993, 12, 1) == (1994, 1)
        assert gd.add_months(1993, 1, -1) == (1992, 12)

    def test_slice_shifts_epoch(self):
        series = _random_series(t=30)
        part = series.slice_months(13, 20)
        assert part.month_date(0) == (1994, 2)
        assert part.months == 7


def test_cell_series_csv(tmp_path):
    series = _random_series(t=3)
    path = tmp_path / "cell.csv"
    gd.cell_series_csv(series, 2, 5, path)
    lines = path.read_text().splitlines()
    assert lines[0] == "year,month,sla_m"
    assert len(lines) == 4
    year, month, value = lines[1].split(",")
    assert (int(year), int(month)) == (1993, 1)
    assert float(value) == series.fields[0, 2, 5]
