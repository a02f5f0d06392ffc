"""Forecast-vs-truth scoring and rendering.

The scalar RMSE for a partition pools every (ocean cell, month) residual
into one quadratic mean; the per-cell map averages over months only.
``evaluate_model``/``evaluate_baseline`` apply the feeding protocol each
model kind requires:

* lstm / cnn_convlstm: teacher-forced month-ahead over the whole series
  (the recurrent state flows across partition boundaries, so every month
  after the first is predicted from true history),
* seq_lstm: consecutive true 9-month windows inside each partition, each
  predicting the next 9 months,
* seq_lstm_p: one true seed window at each partition start, closed loop
  from there,
* baseline: design-matrix extrapolation over the full axis.
"""

from dataclasses import dataclass

import numpy as np

from slnn.baseline import predict_baseline
from slnn.data import GridSeries, add_months
from slnn.models import is_sequence_kind

PARTITION_NAMES = ("train", "val", "test")


def rmse(pred, truth):
    """Pooled scalar RMSE (m) and the per-cell RMSE map (fill on land)."""
    if pred.fields.shape != truth.fields.shape or not pred.same_geometry(truth):
        raise ValueError(
            f"geometry mismatch: pred {pred.fields.shape}, truth {truth.fields.shape}"
        )
    ocean = truth.mask == 1
    diff = pred.fields[:, ocean] - truth.fields[:, ocean]
    scalar = float(np.sqrt(np.mean(diff * diff)))
    cell = np.full(truth.mask.shape, truth.fill)
    cell[ocean] = np.sqrt(np.mean(diff * diff, axis=0))
    return scalar, cell


@dataclass
class PartitionResult:
    name: str
    rmse_m: float
    months_covered: int
    note: str


@dataclass
class EvalReport:
    """One pooled RMSE per partition plus a per-cell RMSE map over one
    chosen partition."""

    model_id: str
    partitions: list
    cell_rmse: np.ndarray
    map_partition: str
    template: GridSeries

    def partition(self, name):
        for p in self.partitions:
            if p.name == name:
                return p
        raise KeyError(name)

    def to_csv(self, path):
        with open(path, "w", newline="") as f:
            f.write("model,partition,rmse_m\n")
            for p in self.partitions:
                f.write(f"{self.model_id},{p.name},{p.rmse_m!r}\n")

    def map_series(self):
        """Per-cell map as a single-month series (for SLAG export)."""
        tpl = self.template
        return GridSeries(
            self.cell_rmse[None, :, :].copy(),
            tpl.mask.copy(),
            tpl.lat0,
            tpl.lon0,
            tpl.dlat,
            tpl.dlon,
            tpl.epoch_year,
            tpl.epoch_month,
            tpl.fill,
        )


def _bounds(spec, n_months):
    if spec.total_months != n_months:
        raise ValueError(
            f"split {spec} covers {spec.total_months} months, series has {n_months}"
        )
    a = spec.train_months
    b = a + spec.val_months
    return ((0, a), (a, b), (b, n_months))


def _pooled(preds, truths, ocean):
    diff = np.asarray(preds)[:, ocean] - np.asarray(truths)[:, ocean]
    scalar = float(np.sqrt(np.mean(diff * diff)))
    per_cell = np.sqrt(np.mean(diff * diff, axis=0))
    return scalar, per_cell


def feedback_cycles(partition_months, seq_len):
    """Windows needed to cover a partition after its true seed window."""
    remaining = partition_months - seq_len
    if remaining <= 0:
        raise ValueError(
            f"partition of {partition_months} months is shorter than the "
            f"{seq_len}-month protocol window"
        )
    return -(-remaining // seq_len)


def evaluate_model(model, series, spec, cycles=None, map_partition="test", model_id=None):
    """Score a trained model over all three partitions of a series."""
    model_id = model_id or model.config.kind
    cfg = model.config
    ocean = series.mask == 1
    bounds = _bounds(spec, series.months)
    collected = {}  # partition name -> (pred months list, truth months list, note)

    if not is_sequence_kind(cfg.kind):
        ahead = model.predict_month_ahead(series)  # predictions for months 1..T-1
        for name, (lo, hi) in zip(PARTITION_NAMES, bounds):
            months = range(max(lo, 1), hi)
            if len(months) == 0:
                raise ValueError(f"partition {name} has no predictable months")
            preds = [ahead.fields[t - 1] for t in months]
            truths = [series.fields[t] for t in months]
            collected[name] = (preds, truths, "teacher-forced month-ahead")
    elif cfg.kind == "seq_lstm":
        s = cfg.seq_len
        for name, (lo, hi) in zip(PARTITION_NAMES, bounds):
            if hi - lo < s + 1:
                raise ValueError(
                    f"partition {name} ({hi - lo} months) is shorter than the "
                    f"{s}-month protocol window"
                )
            preds, truths = [], []
            n_windows = 0
            for w0 in range(lo, hi - s + 1, s):
                forecast = model.predict_sequence(series.slice_months(w0, w0 + s))
                n_windows += 1
                for j in range(s):
                    t = w0 + s + j
                    if t < hi and t < series.months:
                        preds.append(forecast.series.fields[j])
                        truths.append(series.fields[t])
            collected[name] = (preds, truths, f"{n_windows} true {s}-month windows")
    else:  # seq_lstm_p
        s = cfg.seq_len
        for name, (lo, hi) in zip(PARTITION_NAMES, bounds):
            n_cycles = cycles if cycles is not None else feedback_cycles(hi - lo, s)
            forecast = model.rollout_closed_loop(series.slice_months(lo, lo + s), n_cycles)
            preds, truths = [], []
            for j in range(forecast.series.months):
                t = lo + s + j
                if t < hi:
                    preds.append(forecast.series.fields[j])
                    truths.append(series.fields[t])
            if not preds:
                raise ValueError(f"partition {name} too short for the closed-loop protocol")
            note = (
                f"{s} true seed months, {n_cycles - 1} feedback cycles "
                f"({n_cycles} windows)"
            )
            collected[name] = (preds, truths, note)

    return _build_report(model_id, collected, series, spec, map_partition, ocean)


def evaluate_baseline(harmonic_model, series, spec, map_partition="test",
                      model_id="regression"):
    """Score the per-cell harmonic regression by pure extrapolation."""
    if not np.array_equal(harmonic_model.mask, series.mask):
        raise ValueError("baseline mask does not match the series mask")
    ocean = series.mask == 1
    bounds = _bounds(spec, series.months)
    pred = predict_baseline(harmonic_model, range(series.months))
    collected = {}
    for name, (lo, hi) in zip(PARTITION_NAMES, bounds):
        preds = [pred.fields[t] for t in range(lo, hi)]
        truths = [series.fields[t] for t in range(lo, hi)]
        collected[name] = (preds, truths, "harmonic extrapolation")
    return _build_report(model_id, collected, series, spec, map_partition, ocean)


def _build_report(model_id, collected, series, spec, map_partition, ocean):
    if map_partition not in collected:
        raise ValueError(f"unknown map partition {map_partition!r}")
    partitions = []
    cell_map = None
    for name in PARTITION_NAMES:
        preds, truths, note = collected[name]
        scalar, per_cell = _pooled(preds, truths, ocean)
        partitions.append(PartitionResult(name, scalar, len(preds), note))
        if name == map_partition:
            cell_map = np.full(series.mask.shape, series.fill)
            cell_map[ocean] = per_cell
    bounds = dict(zip(PARTITION_NAMES, _bounds(spec, series.months)))
    lo = bounds[map_partition][0]
    y, m = add_months(series.epoch_year, series.epoch_month, lo)
    template = GridSeries(
        np.full((1,) + series.mask.shape, series.fill),
        series.mask.copy(),
        series.lat0,
        series.lon0,
        series.dlat,
        series.dlon,
        y,
        m,
        series.fill,
    )
    return EvalReport(model_id, partitions, cell_map, map_partition, template)


# -- rendering ------------------------------------------------------------


def render_heatmap(field, mask, vmin, vmax):
    """Linear blue-white-red mapping of a field to RGB, land cells gray.

    vmin maps to pure blue, the midpoint to white, vmax to pure red; one
    pixel per grid cell, deterministic integer rounding.
    """
    if not (np.isfinite(vmin) and np.isfinite(vmax)) or not vmin < vmax:
        raise ValueError(f"need finite bounds with vmin < vmax, got [{vmin}, {vmax}]")
    u = np.clip((np.asarray(field, dtype=np.float64) - vmin) / (vmax - vmin), 0.0, 1.0)
    img = np.empty(u.shape + (3,), dtype=np.uint8)
    low = u < 0.5
    t_low = u / 0.5
    t_high = (u - 0.5) / 0.5
    img[..., 0] = np.rint(np.where(low, 255.0 * t_low, 255.0))
    img[..., 1] = np.rint(np.where(low, 255.0 * t_low, 255.0 * (1.0 - t_high)))
    img[..., 2] = np.rint(np.where(low, 255.0, 255.0 * (1.0 - t_high)))
    img[np.asarray(mask) == 0] = (128, 128, 128)
    return img


def write_ppm(img, path):
    """Write an RGB uint8 image as a binary portable pixmap (P6)."""
    h, w = img.shape[0], img.shape[1]
    with open(path, "wb") as f:
        f.write(f"P6\n{w} {h}\n255\n".encode())
        f.write(np.ascontiguousarray(img, dtype=np.uint8).tobytes())
