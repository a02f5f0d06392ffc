"""Gridded sea-level-anomaly series: container, binary file format,
partition splitting, normalization, and the synthetic-field generator
used for desk-scale experiments.

A series is a time-ordered stack of 2-D SLA fields in meters on a regular
lat/lon grid, with a land/ocean mask.  Land cells carry the fill sentinel
in every month and are excluded from losses, statistics, and
normalization.  In memory the fields are float64 (training and gradient
checks need double precision); the SLAG file format stores float32.
"""

import struct
from dataclasses import dataclass

import numpy as np

FILL_VALUE = -9999.0

_MAGIC = b"SLAG"
_VERSION = 1
# magic, version, T, H, W, lat0, lon0, dlat, dlon, epoch year/month, fill
_HEADER = struct.Struct("<4sHIIIffffhBf")


class GridFormatError(ValueError):
    """SLAG file rejected; the message names the offending byte offset."""


def add_months(year, month, k):
    """Shift a (year, month-1..12) pair by k months."""
    base = year * 12 + (month - 1) + k
    return base // 12, base % 12 + 1


@dataclass
class GridSeries:
    """T monthly SLA fields on an H x W grid.

    fields : float64 [T,H,W], meters; land cells hold ``fill``
    mask   : uint8 [H,W], ocean=1 / land=0
    lat0, lon0 : degrees of the first grid row/column
    dlat, dlon : cell size in degrees
    epoch_year, epoch_month : calendar date of month index 0
    """

    fields: np.ndarray
    mask: np.ndarray
    lat0: float = 0.0
    lon0: float = 0.0
    dlat: float = 0.25
    dlon: float = 0.25
    epoch_year: int = 1993
    epoch_month: int = 1
    fill: float = FILL_VALUE

    @property
    def months(self):
        return self.fields.shape[0]

    @property
    def height(self):
        return self.fields.shape[1]

    @property
    def width(self):
        return self.fields.shape[2]

    @property
    def ocean_cells(self):
        return int(self.mask.sum())

    def month_date(self, index):
        return add_months(self.epoch_year, self.epoch_month, index)

    def validate(self):
        if self.fields.ndim != 3 or self.mask.shape != self.fields.shape[1:]:
            raise ValueError(
                f"fields {self.fields.shape} and mask {self.mask.shape} disagree"
            )
        land = self.mask == 0
        if not np.all(self.fields[:, land] == self.fill):
            raise ValueError("land cells must hold the fill value in every month")
        if not np.all(np.isfinite(self.fields[:, ~land])):
            raise ValueError("ocean cells must be finite")
        return self

    def slice_months(self, start, stop):
        """Contiguous sub-series [start, stop); epoch shifted accordingly."""
        y, m = self.month_date(start)
        return GridSeries(
            fields=self.fields[start:stop].copy(),
            mask=self.mask.copy(),
            lat0=self.lat0,
            lon0=self.lon0,
            dlat=self.dlat,
            dlon=self.dlon,
            epoch_year=y,
            epoch_month=m,
            fill=self.fill,
        )

    def same_geometry(self, other):
        return (
            self.fields.shape[1:] == other.fields.shape[1:]
            and np.array_equal(self.mask, other.mask)
            and (self.lat0, self.lon0, self.dlat, self.dlon)
            == (other.lat0, other.lon0, other.dlat, other.dlon)
        )


def save(series, path):
    """Write a series as a SLAG file (header, mask bytes, float32 fields)."""
    series.validate()
    t, h, w = series.fields.shape
    header = _HEADER.pack(
        _MAGIC,
        _VERSION,
        t,
        h,
        w,
        series.lat0,
        series.lon0,
        series.dlat,
        series.dlon,
        series.epoch_year,
        series.epoch_month,
        series.fill,
    )
    with open(path, "wb") as f:
        f.write(header)
        f.write(series.mask.astype(np.uint8).tobytes())
        f.write(series.fields.astype("<f4").tobytes())


def load(path):
    """Read a SLAG file back into a GridSeries (fields widened to float64)."""
    with open(path, "rb") as f:
        raw = f.read()
    if len(raw) < _HEADER.size:
        raise GridFormatError(
            f"truncated header: expected {_HEADER.size} bytes, got {len(raw)}"
        )
    magic, version, t, h, w, lat0, lon0, dlat, dlon, ey, em, fill = _HEADER.unpack_from(
        raw, 0
    )
    if magic != _MAGIC:
        raise GridFormatError(f"bad magic {magic!r} at byte 0, expected {_MAGIC!r}")
    if version != _VERSION:
        raise GridFormatError(f"unsupported version {version} at byte 4")
    mask_off = _HEADER.size
    data_off = mask_off + h * w
    expected = data_off + 4 * t * h * w
    if len(raw) != expected:
        raise GridFormatError(
            f"truncated file: expected {expected} bytes, got {len(raw)} "
            f"(data section starts at byte {data_off})"
        )
    mask = np.frombuffer(raw, dtype=np.uint8, count=h * w, offset=mask_off)
    mask = mask.reshape(h, w).copy()
    if not np.all((mask == 0) | (mask == 1)):
        raise GridFormatError(f"mask bytes at offset {mask_off} must be 0 or 1")
    fields = np.frombuffer(raw, dtype="<f4", count=t * h * w, offset=data_off)
    fields = fields.reshape(t, h, w).astype(np.float64)
    series = GridSeries(fields, mask, lat0, lon0, dlat, dlon, ey, em, fill)
    try:
        series.validate()
    except ValueError as err:
        raise GridFormatError(f"invalid field data at offset {data_off}: {err}") from err
    return series


@dataclass
class SplitSpec:
    """Contiguous, ordered, non-overlapping train/val/test partition sizes
    in months.  ``from_years`` places the boundaries at year transitions."""

    train_months: int
    val_months: int
    test_months: int

    @classmethod
    def from_years(cls, train_years, val_years, test_years):
        return cls(12 * train_years, 12 * val_years, 12 * test_years)

    @property
    def total_months(self):
        return self.train_months + self.val_months + self.test_months


def split(series, spec):
    """Partition a series into (train, val, test) with the given sizes.

    The partitions must tile the series exactly and each must be
    non-empty; anything else is an overlap, gap, or empty partition and is
    rejected.
    """
    if min(spec.train_months, spec.val_months, spec.test_months) <= 0:
        raise ValueError(f"empty partition in split {spec}")
    if spec.total_months != series.months:
        raise ValueError(
            f"split {spec} covers {spec.total_months} months, series has "
            f"{series.months} (gap or overlap)"
        )
    a = spec.train_months
    b = a + spec.val_months
    return (
        series.slice_months(0, a),
        series.slice_months(a, b),
        series.slice_months(b, series.months),
    )


@dataclass
class NormStats:
    mean: float
    std: float


def normalize(series):
    """Scale ocean cells to global mean 0, std 1; land cells keep the fill.

    Returns the normalized series and the stats needed to invert.
    """
    ocean = series.mask == 1
    if not ocean.any():
        raise ValueError("normalize needs at least one ocean cell")
    values = series.fields[:, ocean]
    if np.all(values == values.flat[0]):
        raise ValueError("normalize rejected: ocean cells have zero variance")
    mean = float(values.mean())
    std = float(values.std())
    fields = np.full_like(series.fields, series.fill)
    fields[:, ocean] = (values - mean) / std
    out = GridSeries(
        fields,
        series.mask.copy(),
        series.lat0,
        series.lon0,
        series.dlat,
        series.dlon,
        series.epoch_year,
        series.epoch_month,
        series.fill,
    )
    return out, NormStats(mean, std)


def denormalize(series, stats):
    ocean = series.mask == 1
    fields = np.full_like(series.fields, series.fill)
    fields[:, ocean] = series.fields[:, ocean] * stats.std + stats.mean
    return GridSeries(
        fields,
        series.mask.copy(),
        series.lat0,
        series.lon0,
        series.dlat,
        series.dlon,
        series.epoch_year,
        series.epoch_month,
        series.fill,
    )


def _smooth_periodic(a, passes=2):
    """Cheap 3-point smoothing with wraparound, along the last axis."""
    for _ in range(passes):
        a = 0.5 * a + 0.25 * (np.roll(a, 1, axis=-1) + np.roll(a, -1, axis=-1))
    return a


def _smooth2d(a, passes=2):
    for _ in range(passes):
        a = 0.25 * a + 0.125 * (
            np.roll(a, 1, axis=-1)
            + np.roll(a, -1, axis=-1)
            + np.roll(a, 1, axis=-2)
            + np.roll(a, -1, axis=-2)
        ) + 0.0625 * (
            np.roll(np.roll(a, 1, axis=-2), 1, axis=-1)
            + np.roll(np.roll(a, 1, axis=-2), -1, axis=-1)
            + np.roll(np.roll(a, -1, axis=-2), 1, axis=-1)
            + np.roll(np.roll(a, -1, axis=-2), -1, axis=-1)
        )
    return a


def synth_coefficients(kind, h, w, offset=0.03, trend=2e-4, accel=0.0,
                       annual=0.05, semiannual=0.02):
    """Per-cell harmonic-model coefficients [H,W,7] the generator composes:
    offset, trend (m/month), acceleration, annual sine/cosine, semiannual
    sine/cosine.  The wave and noise components of the 'wave' kind are not
    in this span."""
    if kind not in ("constant", "harmonic", "wave"):
        raise ValueError(f"unknown synthetic kind {kind!r}")
    xx = np.linspace(0.0, 1.0, w)[None, :] * np.ones((h, 1))
    yy = np.linspace(0.0, 1.0, h)[:, None] * np.ones((1, w))
    coeffs = np.zeros((h, w, 7))
    coeffs[:, :, 0] = offset * (0.5 + 0.5 * np.cos(np.pi * (xx + yy)))
    if kind == "constant":
        coeffs[:, :, 0] = offset
        return coeffs
    coeffs[:, :, 1] = trend * (0.5 + xx)
    coeffs[:, :, 2] = accel * (0.5 + yy)
    phase1 = 2.0 * np.pi * xx
    phase2 = 2.0 * np.pi * yy
    coeffs[:, :, 3] = annual * np.cos(phase1)
    coeffs[:, :, 4] = annual * np.sin(phase1)
    coeffs[:, :, 5] = semiannual * np.cos(phase2)
    coeffs[:, :, 6] = semiannual * np.sin(phase2)
    return coeffs


def synth(kind, h, w, t, seed, offset=0.03, trend=2e-4, accel=0.0, annual=0.05,
          semiannual=0.02, wave=0.08, noise=0.005, land=False,
          epoch_year=1993, epoch_month=1):
    """Deterministic synthetic SLA series for desk-scale experiments.

    Kinds:
      constant  - spatially and temporally constant ``offset``
      harmonic  - per-cell trend + acceleration + annual/semiannual
                  harmonics with spatially varying phase, noiseless
      wave      - harmonic plus a westward-propagating wave packet and
                  spatially correlated noise

    The wave pattern advances one cell toward lower column index per
    month, wrapping at the grid edge, inside a band of rows.  With
    ``land=True`` an elliptical land blob is masked out.
    """
    if h % 4 or w % 4:
        raise ValueError(f"grid extents must be divisible by 4, got {h}x{w}")
    rng = np.random.default_rng(seed)
    coeffs = synth_coefficients(kind, h, w, offset, trend, accel, annual,
                                semiannual)
    tt = np.arange(t, dtype=np.float64)[:, None, None]
    omega1 = 2.0 * np.pi / 12.0
    fields = (
        coeffs[None, :, :, 0]
        + coeffs[None, :, :, 1] * tt
        + coeffs[None, :, :, 2] * tt * tt
        + coeffs[None, :, :, 3] * np.sin(omega1 * tt)
        + coeffs[None, :, :, 4] * np.cos(omega1 * tt)
        + coeffs[None, :, :, 5] * np.sin(2.0 * omega1 * tt)
        + coeffs[None, :, :, 6] * np.cos(2.0 * omega1 * tt)
    )
    if kind == "wave":
        profile = _smooth_periodic(rng.standard_normal(w), passes=4)
        profile *= 1.0 / max(np.sqrt(np.mean(profile**2)), 1e-12)
        band = np.zeros(h)
        band[h // 4 : 3 * h // 4] = 1.0
        pattern = wave * band[:, None] * profile[None, :]
        for ti in range(t):
            fields[ti] += np.roll(pattern, -ti, axis=1)
        if noise > 0.0:
            eta = _smooth2d(rng.standard_normal((t, h, w)), passes=2)
            eta *= 1.0 / max(np.sqrt(np.mean(eta**2)), 1e-12)
            fields += noise * eta
    mask = np.ones((h, w), dtype=np.uint8)
    if land:
        xx = np.linspace(0.0, 1.0, w)[None, :]
        yy = np.linspace(0.0, 1.0, h)[:, None]
        blob = ((xx - 0.25) ** 2 + (yy - 0.3) ** 2) < 0.04
        mask[blob] = 0
        fields[:, mask == 0] = FILL_VALUE
    series = GridSeries(
        fields,
        mask,
        lat0=-15.0,
        lon0=110.0,
        dlat=0.25,
        dlon=0.25,
        epoch_year=epoch_year,
        epoch_month=epoch_month,
    )
    return series.validate()


def cell_series_csv(series, row, col, path):
    """Export one cell's time series as year,month,sla_m rows."""
    with open(path, "w", newline="") as f:
        f.write("year,month,sla_m\n")
        for i in range(series.months):
            y, m = series.month_date(i)
            f.write(f"{y},{m},{float(series.fields[i, row, col])!r}\n")
