"""The four forecasting architectures and their inference protocols.

Kinds:

* ``lstm``           - grid flattened to a vector, three LSTM layers, a
                       linear readout back to the full grid; predicts one
                       month ahead.
* ``cnn_convlstm``   - input batchnorm, two ReLU convolutions, 4x4/stride-4
                       max pooling, two ConvLSTM layers, and a transposed
                       convolution back to the grid; predicts one month
                       ahead while preserving spatial structure.
* ``seq_lstm``       - same stack as ``lstm`` but maps a 9-month input
                       sequence to the 9 months that follow it (the output
                       sequence is the input shifted 9 months forward).
* ``seq_lstm_p``     - a ``seq_lstm`` evaluated closed loop: after one true
                       seed window, its own predictions are fed back.

Vector kinds consume and emit globally normalized anomalies (statistics
from the training partition, land cells zeroed); the grid kind consumes
raw meters and normalizes through its input batchnorm layer.
"""

import json
import struct
from dataclasses import dataclass, field

import numpy as np

from slnn import autodiff as ad
from slnn.autodiff import Tensor
from slnn.data import GridSeries, NormStats, add_months
from slnn.layers import (
    BatchNormInput,
    Conv2d,
    ConvLSTMCell,
    Deconv2d,
    Dense,
    LSTMCell,
    recurrent_dropout_mask,
)
from slnn.optim import masked_mse

KINDS = ("lstm", "cnn_convlstm", "seq_lstm", "seq_lstm_p")


def is_sequence_kind(kind):
    return kind in ("seq_lstm", "seq_lstm_p")


@dataclass
class ModelConfig:
    """Architecture description plus the grid it operates on."""

    kind: str
    grid_h: int
    grid_w: int
    lstm_units: int = 60
    lstm_layers: int = 3
    conv_filters: int = 32
    conv_kernel: int = 3
    pool: int = 4
    convlstm_units: int = 40
    convlstm_layers: int = 2
    dropout: float = 0.8
    seq_len: int = field(default=0)  # 9 for sequence kinds, 1 otherwise

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown model kind {self.kind!r}; expected one of {KINDS}")
        if self.seq_len == 0:
            self.seq_len = 9 if is_sequence_kind(self.kind) else 1
        expected = 9 if is_sequence_kind(self.kind) else 1
        if self.seq_len != expected:
            raise ValueError(f"kind {self.kind} requires seq_len={expected}, got {self.seq_len}")
        if self.kind == "cnn_convlstm" and (
            self.grid_h % self.pool or self.grid_w % self.pool
        ):
            pad_h = (self.pool - self.grid_h % self.pool) % self.pool
            pad_w = (self.pool - self.grid_w % self.pool) % self.pool
            raise ValueError(
                f"grid {self.grid_h}x{self.grid_w} not divisible by pool "
                f"{self.pool}; pad by {pad_h} rows and {pad_w} cols"
            )


def layer_widths(config):
    """Feature widths through a vector stack: n -> units.. -> n."""
    n = config.grid_h * config.grid_w
    return [n] + [config.lstm_units] * config.lstm_layers + [n]


def count_params(config):
    """Exact trainable+tracked parameter total for a configuration."""
    if config.kind == "cnn_convlstm":
        f, k = config.conv_filters, config.conv_kernel
        u, p = config.convlstm_units, config.pool
        total = 4  # input batchnorm: gamma, beta, running mean/var on 1 channel
        total += f * 1 * k * k + f
        total += f * f * k * k + f
        c_in = f
        for _ in range(config.convlstm_layers):
            total += 4 * u * c_in * k * k + 4 * u * u * k * k + 4 * u
            c_in = u
        total += p * p * u * 1 + 1
        return total
    n = config.grid_h * config.grid_w
    u = config.lstm_units
    total = 0
    c_in = n
    for _ in range(config.lstm_layers):
        total += c_in * 4 * u + u * 4 * u + 4 * u
        c_in = u
    total += u * n + n
    return total


def compose_receptive_field(stages):
    """Receptive-field extent of a stack of (kernel, stride) stages:
    rf grows by (k-1)*jump per stage, jump multiplies by the stride."""
    rf, jump = 1, 1
    for k, s in stages:
        rf += (k - 1) * jump
        jump *= s
    return rf


def receptive_field(config, cell_degrees=0.25):
    """Input cells (and degrees) that influence one output cell, composed
    over conv -> conv -> pool -> the ConvLSTM stack."""
    if config.kind != "cnn_convlstm":
        raise ValueError(f"receptive field is defined for cnn_convlstm, not {config.kind}")
    stages = [
        (config.conv_kernel, 1),
        (config.conv_kernel, 1),
        (config.pool, config.pool),
    ] + [(config.conv_kernel, 1)] * config.convlstm_layers
    rf = compose_receptive_field(stages)
    return rf, rf * cell_degrees


class VectorNet:
    """LSTM stack over the flattened grid with a linear readout."""

    def __init__(self, config, rng):
        n = config.grid_h * config.grid_w
        u = config.lstm_units
        self.cells = []
        c_in = n
        for _ in range(config.lstm_layers):
            self.cells.append(LSTMCell(c_in, u, rng))
            c_in = u
        self.dense = Dense(u, n, rng)

    def layers(self):
        return [*self.cells, self.dense]

    def zero_state(self, config):
        return [cell.zero_state() for cell in self.cells]

    def step(self, x, states, drop_masks=None):
        h = x
        new_states = []
        for i, (cell, st) in enumerate(zip(self.cells, states)):
            masks = drop_masks[i] if drop_masks is not None else None
            h, st = cell.step(h, st, masks)
            new_states.append(st)
        return self.dense(h), new_states


class GridNet:
    """Batchnorm -> conv/ReLU x2 -> maxpool -> ConvLSTM stack -> deconv."""

    def __init__(self, config, rng):
        f, k = config.conv_filters, config.conv_kernel
        u = config.convlstm_units
        self.pool = config.pool
        self.bn = BatchNormInput(1)
        self.conv1 = Conv2d(1, f, k, rng)
        self.conv2 = Conv2d(f, f, k, rng)
        self.cells = []
        c_in = f
        for _ in range(config.convlstm_layers):
            self.cells.append(ConvLSTMCell(c_in, u, k, rng))
            c_in = u
        self.deconv = Deconv2d(u, 1, config.pool, rng)

    def layers(self):
        return [self.bn, self.conv1, self.conv2, *self.cells, self.deconv]

    def zero_state(self, config):
        h4 = config.grid_h // self.pool
        w4 = config.grid_w // self.pool
        return [cell.zero_state(h4, w4) for cell in self.cells]

    def step(self, x, states, mask, training):
        z = self.bn(x, mask, training)
        z = ad.relu(self.conv1(z))
        z = ad.relu(self.conv2(z))
        z = ad.maxpool2d(z, self.pool, self.pool)
        new_states = []
        for cell, st in zip(self.cells, states):
            z, st = cell.step(z, st)
            new_states.append(st)
        return self.deconv(z), new_states


def build(config, seed=0):
    """Instantiate the layer stack for a configuration, seeded weights."""
    rng = np.random.default_rng(seed)
    if config.kind == "cnn_convlstm":
        return GridNet(config, rng)
    return VectorNet(config, rng)


@dataclass
class Forecast:
    """Predicted months plus the provenance of the inputs that fed them.

    ``fed[i]`` is "true" when month i of the forecast was produced from
    true observations only, "predicted" when earlier forecast months were
    fed back.  ``true_input_dates`` lists the true months consumed.
    """

    series: GridSeries
    fed: list
    true_input_dates: list


def _detach(states):
    return [type(st)(Tensor(st.h.data), Tensor(st.c.data)) for st in states]


class ForecastModel:
    """A network bound to a grid: mask, geometry, and normalization."""

    def __init__(self, config, net, mask, norm, template):
        self.config = config
        self.net = net
        self.mask = mask.astype(np.uint8)
        self.norm = norm  # NormStats for vector kinds, None for the grid kind
        self.template = template  # 1-month GridSeries carrying geometry/epoch
        self._ocean = self.mask == 1
        self._maskf = self.mask.astype(np.float64)

    # -- parameter plumbing --------------------------------------------

    def params(self):
        return [p for layer in self.net.layers() for p in layer.params()]

    def get_state(self):
        arrays = []
        for layer in self.net.layers():
            arrays.extend(p.data.copy() for p in layer.params())
            arrays.extend(v.copy() for _, v in layer.tracked())
        return arrays

    def set_state(self, arrays):
        it = iter(arrays)
        for layer in self.net.layers():
            for p in layer.params():
                p.data = np.array(next(it), dtype=np.float64)
            tracked = layer.tracked()
            if tracked:
                layer.set_tracked([np.array(next(it)) for _ in tracked])

    # -- field <-> network arrays ----------------------------------------

    def _input_array(self, fld):
        if self.config.kind == "cnn_convlstm":
            return np.where(self._ocean, fld, 0.0)[None, :, :]
        v = np.zeros(fld.size)
        v[self._ocean.ravel()] = (fld[self._ocean] - self.norm.mean) / self.norm.std
        return v

    def _target_and_mask(self, fld):
        if self.config.kind == "cnn_convlstm":
            return np.where(self._ocean, fld, 0.0)[None, :, :], self._maskf[None, :, :]
        return self._input_array(fld), self._maskf.ravel()

    def _output_field(self, out_data):
        if self.config.kind == "cnn_convlstm":
            raw = out_data[0]
        else:
            raw = out_data.reshape(self.mask.shape) * self.norm.std + self.norm.mean
        return np.where(self._ocean, raw, self.template.fill)

    def _feedback_array(self, out_data):
        """Network output turned back into a network input (closed loop)."""
        v = out_data.copy()
        if self.config.kind == "cnn_convlstm":
            v[0][~self._ocean] = 0.0
        else:
            v[~self._ocean.ravel()] = 0.0
        return v

    def _step(self, x_arr, states, training=False, drop_masks=None):
        x = Tensor(x_arr)
        if self.config.kind == "cnn_convlstm":
            return self.net.step(x, states, self._maskf, training)
        return self.net.step(x, states, drop_masks)

    def _check_geometry(self, series):
        if series.fields.shape[1:] != self.mask.shape or not np.array_equal(
            series.mask, self.mask
        ):
            raise ValueError(
                f"series geometry {series.fields.shape[1:]} does not match "
                f"the model's training grid {self.mask.shape}"
            )

    def _forecast_series(self, fields, epoch):
        """Wrap predicted fields [K,H,W] as a GridSeries; land cells fill."""
        tpl = self.template
        return GridSeries(
            np.asarray(fields),
            self.mask.copy(),
            tpl.lat0,
            tpl.lon0,
            tpl.dlat,
            tpl.dlon,
            epoch[0],
            epoch[1],
            tpl.fill,
        )

    # -- training interface (driven by slnn.optim.fit) -------------------

    def window_length(self, schedule):
        if is_sequence_kind(self.config.kind):
            return self.config.seq_len
        return schedule.bptt_window

    def window_starts(self, n_months, schedule):
        w = self.window_length(schedule)
        span = 2 * w if is_sequence_kind(self.config.kind) else w + 1
        last = n_months - span
        if last < 0:
            raise ValueError(
                f"partition of {n_months} months is shorter than one "
                f"{span}-month training window"
            )
        return np.arange(0, last + 1, schedule.window_stride)

    def _drop_masks(self, rng):
        cfg = self.config
        if cfg.kind == "cnn_convlstm" or cfg.dropout == 0.0:
            return None
        masks = []
        for cell in self.net.cells:
            mx = recurrent_dropout_mask(cell.w.shape[0], cfg.dropout, rng)
            mh = recurrent_dropout_mask(cell.units, cfg.dropout, rng)
            masks.append((mx, mh))
        return masks

    def window_loss(self, series, t0, rng, training, schedule):
        """Mean masked MSE over one teacher-forced window.

        Returns the loss graph plus the factor converting its value to
        m**2 (vector kinds train in normalized units).
        """
        cfg = self.config
        fields = series.fields
        drop = self._drop_masks(rng) if training else None
        states = self.net.zero_state(cfg)
        if is_sequence_kind(cfg.kind):
            pairs = [(t0 + j, t0 + cfg.seq_len + j) for j in range(cfg.seq_len)]
        else:
            w = self.window_length(schedule)
            pairs = [(t0 + j, t0 + j + 1) for j in range(w)]
        loss = None
        for t_in, t_out in pairs:
            y, states = self._step(
                self._input_array(fields[t_in]), states, training, drop
            )
            target, maskf = self._target_and_mask(fields[t_out])
            term = masked_mse(y, target, maskf)
            loss = term if loss is None else loss + term
        loss = loss * (1.0 / len(pairs))
        scale = 1.0 if cfg.kind == "cnn_convlstm" else self.norm.std**2
        return loss, scale

    def partition_loss(self, series):
        """Teacher-forced mean masked MSE (m**2) over a whole partition,
        inference mode (no dropout, batchnorm on running stats)."""
        cfg = self.config
        fields = series.fields
        total, count = 0.0, 0
        if is_sequence_kind(cfg.kind):
            s = cfg.seq_len
            starts = range(0, series.months - 2 * s + 1, s)
            for t0 in starts:
                preds = self._run_sequence(fields[t0 : t0 + s])
                for j in range(s):
                    total += self._field_mse(preds[j], fields[t0 + s + j])
                    count += 1
        else:
            states = self.net.zero_state(cfg)
            for t in range(series.months - 1):
                y, states = self._step(self._input_array(fields[t]), states)
                states = _detach(states)
                total += self._field_mse(self._output_field(y.data), fields[t + 1])
                count += 1
        if count == 0:
            raise ValueError("partition shorter than the protocol window")
        return total / count

    def _field_mse(self, pred_field, true_field):
        d = pred_field[self._ocean] - true_field[self._ocean]
        return float(np.mean(d * d))

    # -- inference protocols ---------------------------------------------

    def _replay(self, fields):
        """Feed true months in order, detached state; return final states
        and the prediction made after each month."""
        states = self.net.zero_state(self.config)
        preds = []
        for t in range(fields.shape[0]):
            y, states = self._step(self._input_array(fields[t]), states)
            states = _detach(states)
            preds.append(self._output_field(y.data))
        return preds, states

    def predict_next_month(self, history):
        """One-step protocol: replay true history, emit the next month."""
        if is_sequence_kind(self.config.kind):
            raise ValueError(
                f"{self.config.kind} predicts 9-month sequences; use predict_sequence"
            )
        self._check_geometry(history)
        if history.months < 1:
            raise ValueError("history must contain at least one month")
        preds, _ = self._replay(history.fields)
        epoch = add_months(history.epoch_year, history.epoch_month, history.months)
        series = self._forecast_series([preds[-1]], epoch)
        dates = [history.month_date(i) for i in range(history.months)]
        return Forecast(series.validate(), ["true"], dates)

    def predict_month_ahead(self, series):
        """Teacher-forced predictions for months 1..T-1 of a series, from
        one warm-state replay of the true months before each."""
        if is_sequence_kind(self.config.kind):
            raise ValueError(
                f"{self.config.kind} predicts 9-month sequences; use predict_sequence"
            )
        self._check_geometry(series)
        if series.months < 2:
            raise ValueError("need at least two months to predict month-ahead")
        preds, _ = self._replay(series.fields[:-1])
        epoch = add_months(series.epoch_year, series.epoch_month, 1)
        return self._forecast_series(np.asarray(preds), epoch).validate()

    def _run_sequence(self, window_fields):
        """One fresh-state pass over 9 input months; 9 predicted fields."""
        states = self.net.zero_state(self.config)
        out = []
        for t in range(window_fields.shape[0]):
            y, states = self._step(self._input_array(window_fields[t]), states)
            states = _detach(states)
            out.append(self._output_field(y.data))
        return out

    def predict_sequence(self, window):
        """Map 9 true months to the 9 months that follow them."""
        if not is_sequence_kind(self.config.kind):
            raise ValueError(f"{self.config.kind} is not a sequence model")
        self._check_geometry(window)
        s = self.config.seq_len
        if window.months != s:
            raise ValueError(f"window must contain exactly {s} months, got {window.months}")
        preds = self._run_sequence(window.fields)
        epoch = add_months(window.epoch_year, window.epoch_month, s)
        series = self._forecast_series(np.asarray(preds), epoch)
        dates = [window.month_date(i) for i in range(s)]
        return Forecast(series.validate(), ["true"] * s, dates)

    def rollout_closed_loop(self, seed_window, cycles):
        """Closed loop: cycle 1 consumes the true seed window, every later
        cycle consumes the previous cycle's own predictions."""
        if not is_sequence_kind(self.config.kind):
            raise ValueError(f"{self.config.kind} is not a sequence model")
        if cycles < 1:
            raise ValueError(f"cycles must be >= 1, got {cycles}")
        self._check_geometry(seed_window)
        s = self.config.seq_len
        if seed_window.months != s:
            raise ValueError(
                f"seed window must contain exactly {s} months, got {seed_window.months}"
            )
        inputs = [self._input_array(seed_window.fields[t]) for t in range(s)]
        all_fields = []
        fed = []
        for cycle in range(cycles):
            states = self.net.zero_state(self.config)
            outputs = []
            for x in inputs:
                y, states = self._step(x, states)
                states = _detach(states)
                outputs.append(y.data)
                if not np.all(np.isfinite(y.data)):
                    raise FloatingPointError(
                        f"non-finite prediction in rollout cycle {cycle + 1}"
                    )
            all_fields.extend(self._output_field(o) for o in outputs)
            fed.extend(["true" if cycle == 0 else "predicted"] * s)
            inputs = [self._feedback_array(o) for o in outputs]
        epoch = add_months(seed_window.epoch_year, seed_window.epoch_month, s)
        series = self._forecast_series(np.asarray(all_fields), epoch)
        dates = [seed_window.month_date(i) for i in range(s)]
        return Forecast(series.validate(), fed, dates)


def create_model(config, train_series, seed=0):
    """Build a ForecastModel bound to the training series' grid.

    Vector kinds take their normalization statistics from the training
    partition here; the grid kind normalizes through its input batchnorm.
    """
    if (train_series.height, train_series.width) != (config.grid_h, config.grid_w):
        raise ValueError(
            f"config grid {config.grid_h}x{config.grid_w} does not match "
            f"series {train_series.height}x{train_series.width}"
        )
    net = build(config, seed)
    norm = None
    if config.kind != "cnn_convlstm":
        ocean = train_series.mask == 1
        values = train_series.fields[:, ocean]
        if np.all(values == values.flat[0]):
            raise ValueError("training partition has zero variance; cannot normalize")
        norm = NormStats(float(values.mean()), float(values.std()))
    return ForecastModel(
        config, net, train_series.mask, norm, train_series.slice_months(0, 1)
    )


# -- checkpoint format ---------------------------------------------------

_CKPT_MAGIC = b"SLNN"
_CKPT_VERSION = 1


def save_checkpoint(model, path):
    """Versioned binary checkpoint: magic, config block, mask, then every
    parameter/tracked tensor in build order as little-endian float64."""
    cfg = model.config
    tpl = model.template
    meta = {
        "kind": cfg.kind,
        "grid_h": cfg.grid_h,
        "grid_w": cfg.grid_w,
        "lstm_units": cfg.lstm_units,
        "lstm_layers": cfg.lstm_layers,
        "conv_filters": cfg.conv_filters,
        "conv_kernel": cfg.conv_kernel,
        "pool": cfg.pool,
        "convlstm_units": cfg.convlstm_units,
        "convlstm_layers": cfg.convlstm_layers,
        "dropout": cfg.dropout,
        "seq_len": cfg.seq_len,
        "norm": None if model.norm is None else [model.norm.mean, model.norm.std],
        "lat0": tpl.lat0,
        "lon0": tpl.lon0,
        "dlat": tpl.dlat,
        "dlon": tpl.dlon,
        "epoch_year": tpl.epoch_year,
        "epoch_month": tpl.epoch_month,
        "fill": tpl.fill,
    }
    blob = json.dumps(meta, sort_keys=True).encode()
    arrays = model.get_state()
    with open(path, "wb") as f:
        f.write(_CKPT_MAGIC)
        f.write(struct.pack("<HI", _CKPT_VERSION, len(blob)))
        f.write(blob)
        f.write(struct.pack("<I", model.mask.size))
        f.write(model.mask.astype(np.uint8).tobytes())
        f.write(struct.pack("<I", len(arrays)))
        for arr in arrays:
            f.write(struct.pack("<B", arr.ndim))
            f.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
            f.write(arr.astype("<f8").tobytes())


def load_checkpoint(path):
    with open(path, "rb") as f:
        raw = f.read()
    if raw[:4] != _CKPT_MAGIC:
        raise ValueError(f"bad checkpoint magic {raw[:4]!r} at byte 0")
    version, json_len = struct.unpack_from("<HI", raw, 4)
    if version != _CKPT_VERSION:
        raise ValueError(f"unsupported checkpoint version {version}")
    off = 10
    meta = json.loads(raw[off : off + json_len].decode())
    off += json_len
    (mask_len,) = struct.unpack_from("<I", raw, off)
    off += 4
    h, w = meta["grid_h"], meta["grid_w"]
    if mask_len != h * w:
        raise ValueError(f"mask length {mask_len} does not match grid {h}x{w}")
    mask = np.frombuffer(raw, dtype=np.uint8, count=mask_len, offset=off).reshape(h, w)
    off += mask_len
    (n_arrays,) = struct.unpack_from("<I", raw, off)
    off += 4
    arrays = []
    for _ in range(n_arrays):
        (ndim,) = struct.unpack_from("<B", raw, off)
        off += 1
        shape = struct.unpack_from(f"<{ndim}I", raw, off)
        off += 4 * ndim
        count = int(np.prod(shape)) if ndim else 1
        arrays.append(
            np.frombuffer(raw, dtype="<f8", count=count, offset=off).reshape(shape)
        )
        off += 8 * count
    config = ModelConfig(
        kind=meta["kind"],
        grid_h=h,
        grid_w=w,
        lstm_units=meta["lstm_units"],
        lstm_layers=meta["lstm_layers"],
        conv_filters=meta["conv_filters"],
        conv_kernel=meta["conv_kernel"],
        pool=meta["pool"],
        convlstm_units=meta["convlstm_units"],
        convlstm_layers=meta["convlstm_layers"],
        dropout=meta["dropout"],
        seq_len=meta["seq_len"],
    )
    net = build(config, seed=0)
    norm = None if meta["norm"] is None else NormStats(*meta["norm"])
    template = GridSeries(
        np.full((1, h, w), meta["fill"]),
        mask.copy(),
        meta["lat0"],
        meta["lon0"],
        meta["dlat"],
        meta["dlon"],
        meta["epoch_year"],
        meta["epoch_month"],
        meta["fill"],
    )
    model = ForecastModel(config, net, mask.copy(), norm, template)
    model.set_state(arrays)
    return model
