"""Command-line entry point.

Subcommands compose the library into reproducible runs::

    slnn synth     --kind wave --h 32 --w 32 --t 240 --seed 7 -o toy.slag
    slnn train     --data toy.slag --model cnn_convlstm --split-months 160/40/40 \
                   --epochs 40 --seed 1 --out run1
    slnn evaluate  --data toy.slag --checkpoint run1/model.slnn \
                   --split-months 160/40/40 --out run1/eval
    slnn baseline  --fit toy.slag --split-months 160/40/40 -o coeffs.csv
    slnn predict   --checkpoint run1/model.slnn --data toy.slag -o next.slag
    slnn rollout   --checkpoint seq.slnn --data toy.slag --cycles 20 -o far.slag
    slnn render    --data toy.slag --month 0 -o field.ppm
    slnn inspect   --data toy.slag

Every run is fully determined by (config file, flags, seed); flags
override config-file values.  ``train`` writes the resolved key=value
config into its run directory, so the directory can be re-executed to
bit-identical CSV outputs with ``--config <rundir>/config.txt``.
"""

import argparse
import sys
import time
from dataclasses import replace
from pathlib import Path

from slnn import baseline as bl
from slnn import data as gd
from slnn import evaluate as ev
from slnn import models as md
from slnn.optim import TrainSchedule, fit


def _parse_split(text, months=False):
    parts = text.split("/")
    if len(parts) != 3:
        raise ValueError(f"split must be a/b/c, got {text!r}")
    a, b, c = (int(p) for p in parts)
    return gd.SplitSpec(a, b, c) if months else gd.SplitSpec.from_years(a, b, c)


def _read_config_file(path):
    values = {}
    for lineno, line in enumerate(Path(path).read_text().splitlines(), 1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ValueError(f"{path}:{lineno}: expected key=value, got {line!r}")
        key, _, value = line.partition("=")
        values[key.strip()] = value.strip()
    return values


# (key, type, default); None default means "must be provided" for required keys
_TRAIN_OPTIONS = [
    ("data", str, None),
    ("model", str, None),
    ("split", str, None),
    ("split_months", str, None),
    ("epochs", int, 150),
    ("seed", int, 0),
    ("base_lr", float, 1e-3),
    ("decay_factor", float, 0.5),
    ("decay_interval", int, 50),
    ("window", int, 12),
    ("batch", int, 4),
    ("stride", int, 1),
    ("dropout", float, 0.8),
]


def _resolve_train(args):
    file_cfg = _read_config_file(args.config) if args.config else {}
    resolved = {}
    for key, typ, default in _TRAIN_OPTIONS:
        flag = getattr(args, key)
        if flag is not None:
            resolved[key] = flag
        elif key in file_cfg:
            raw = file_cfg[key]
            resolved[key] = typ(raw) if raw != "" else None
        else:
            resolved[key] = default
    if not resolved["data"]:
        raise ValueError("missing --data (or data= in the config file)")
    if not resolved["model"]:
        raise ValueError("missing --model (or model= in the config file)")
    if not resolved["split"] and not resolved["split_months"]:
        raise ValueError("missing --split or --split-months")
    return resolved


def _split_from_resolved(resolved):
    if resolved.get("split_months"):
        return _parse_split(resolved["split_months"], months=True)
    return _parse_split(resolved["split"], months=False)


def _write_config(resolved, path):
    with open(path, "w") as f:
        for key, _, _ in _TRAIN_OPTIONS:
            value = resolved[key]
            f.write(f"{key}={'' if value is None else value}\n")


def _run_dir(args_out, seed):
    if args_out:
        path = Path(args_out)
    else:
        stamp = time.strftime("%Y%m%d-%H%M%S")
        path = Path("runs") / f"{stamp}-seed{seed}"
    path.mkdir(parents=True, exist_ok=True)
    return path


def _cmd_synth(args):
    series = gd.synth(
        args.kind,
        args.height,
        args.width,
        args.months,
        args.seed,
        offset=args.offset,
        trend=args.trend,
        accel=args.accel,
        annual=args.annual,
        semiannual=args.semiannual,
        wave=args.wave,
        noise=args.noise,
        land=args.land,
    )
    gd.save(series, args.out)
    print(
        f"wrote {args.out}: {series.months} months, {series.height}x{series.width} "
        f"grid, {series.ocean_cells} ocean cells"
    )
    return 0


def _cmd_train(args):
    resolved = _resolve_train(args)
    spec = _split_from_resolved(resolved)
    series = gd.load(resolved["data"])
    train_s, val_s, _ = gd.split(series, spec)
    config = md.ModelConfig(
        kind=resolved["model"],
        grid_h=series.height,
        grid_w=series.width,
        dropout=resolved["dropout"],
    )
    model = md.create_model(config, train_s, seed=resolved["seed"])
    schedule = TrainSchedule(
        epochs=resolved["epochs"],
        base_lr=resolved["base_lr"],
        decay_factor=resolved["decay_factor"],
        decay_interval=resolved["decay_interval"],
        bptt_window=resolved["window"],
        batch_size=resolved["batch"],
        window_stride=resolved["stride"],
    )
    run_dir = _run_dir(args.out, resolved["seed"])
    _write_config(resolved, run_dir / "config.txt")
    history = fit(model, train_s, val_s, schedule, resolved["seed"],
                  stop_train_mse=args.stop_train_mse)
    history.to_csv(run_dir / "history.csv")
    md.save_checkpoint(model, run_dir / "model.slnn")
    best = min(history.val_mse)
    print(
        f"trained {config.kind} for {len(history.epochs)} epochs; "
        f"best val mse {best:.3e} m^2; run dir {run_dir}"
    )
    return 0


def _load_model(args):
    model = md.load_checkpoint(args.checkpoint)
    if getattr(args, "model", None) and args.model != model.config.kind:
        old, new = model.config.kind, args.model
        if not (md.is_sequence_kind(old) and md.is_sequence_kind(new)):
            raise ValueError(
                f"checkpoint holds a {old} model; only seq_lstm <-> seq_lstm_p "
                f"protocol switches are possible, not {new}"
            )
        model.config = replace(model.config, kind=new)
    return model


def _cmd_predict(args):
    model = _load_model(args)
    series = gd.load(args.data)
    if md.is_sequence_kind(model.config.kind):
        s = model.config.seq_len
        window = series.slice_months(series.months - s, series.months)
        forecast = model.predict_sequence(window)
    else:
        forecast = model.predict_next_month(series)
    gd.save(forecast.series, args.out)
    first = forecast.series.month_date(0)
    print(
        f"wrote {args.out}: {forecast.series.months} predicted months starting "
        f"{first[0]}-{first[1]:02d}; {forecast.fed.count('true')} true-fed"
    )
    return 0


def _cmd_rollout(args):
    model = _load_model(args)
    series = gd.load(args.data)
    s = model.config.seq_len
    seed_window = series.slice_months(series.months - s, series.months)
    forecast = model.rollout_closed_loop(seed_window, args.cycles)
    gd.save(forecast.series, args.out)
    print(
        f"wrote {args.out}: {forecast.series.months} months over {args.cycles} "
        f"cycles; {forecast.fed.count('true')} true-fed, "
        f"{forecast.fed.count('predicted')} prediction-fed"
    )
    return 0


def _cmd_baseline(args):
    series = gd.load(args.fit)
    if args.split or args.split_months:
        spec = (
            _parse_split(args.split_months, months=True)
            if args.split_months
            else _parse_split(args.split, months=False)
        )
        train_s, _, _ = gd.split(series, spec)
    else:
        train_s = series
    model = bl.fit_baseline(train_s)
    bl.coefficients_csv(model, args.out)
    print(f"wrote {args.out}: 7 coefficients for {train_s.ocean_cells} ocean cells")
    return 0


def _cmd_evaluate(args):
    series = gd.load(args.data)
    if not args.split and not args.split_months:
        raise ValueError("missing --split or --split-months")
    spec = (
        _parse_split(args.split_months, months=True)
        if args.split_months
        else _parse_split(args.split, months=False)
    )
    if args.model == "regression":
        train_s, _, _ = gd.split(series, spec)
        report = ev.evaluate_baseline(
            bl.fit_baseline(train_s), series, spec, map_partition=args.map_partition
        )
    else:
        if not args.checkpoint:
            raise ValueError("evaluate needs --checkpoint (or --model regression)")
        model = _load_model(args)
        report = ev.evaluate_model(
            model, series, spec, cycles=args.cycles, map_partition=args.map_partition
        )
    out_dir = Path(args.out or "eval")
    out_dir.mkdir(parents=True, exist_ok=True)
    report.to_csv(out_dir / "report.csv")
    gd.save(report.map_series(), out_dir / "rmse_map.slag")
    img = ev.render_heatmap(report.cell_rmse, series.mask, 0.0, args.map_vmax)
    ev.write_ppm(img, out_dir / "rmse_map.ppm")
    with open(out_dir / "notes.txt", "w") as f:
        for p in report.partitions:
            f.write(f"{p.name}: {p.note}; {p.months_covered} months scored\n")
    for p in report.partitions:
        print(f"{report.model_id} {p.name} rmse {p.rmse_m:.6f} m ({p.note})")
    return 0


def _cmd_render(args):
    series = gd.load(args.data)
    if not 0 <= args.month < series.months:
        raise ValueError(f"month {args.month} outside [0, {series.months})")
    img = ev.render_heatmap(series.fields[args.month], series.mask, args.vmin, args.vmax)
    ev.write_ppm(img, args.out)
    print(f"wrote {args.out}: {series.width}x{series.height} pixels")
    return 0


def _cmd_inspect(args):
    with open(args.data, "rb") as f:
        magic = f.read(4)
    if magic == b"SLAG":
        series = gd.load(args.data)
        y0, m0 = series.month_date(0)
        y1, m1 = series.month_date(series.months - 1)
        ocean = series.fields[:, series.mask == 1]
        print(f"SLAG grid series: {args.data}")
        print(f"  months: {series.months} ({y0}-{m0:02d} .. {y1}-{m1:02d})")
        print(f"  grid: {series.height}x{series.width} at ({series.dlat}, {series.dlon}) deg")
        print(f"  origin: lat {series.lat0}, lon {series.lon0}")
        print(f"  ocean cells: {series.ocean_cells} of {series.height * series.width}")
        print(f"  value range: [{ocean.min():.4f}, {ocean.max():.4f}] m, fill {series.fill}")
    elif magic == b"SLNN":
        model = md.load_checkpoint(args.data)
        cfg = model.config
        print(f"SLNN checkpoint: {args.data}")
        print(f"  kind: {cfg.kind}, grid {cfg.grid_h}x{cfg.grid_w}, seq_len {cfg.seq_len}")
        print(f"  parameters: {md.count_params(cfg)}")
        if cfg.kind == "cnn_convlstm":
            cells, deg = md.receptive_field(cfg)
            print(f"  receptive field: {cells} cells = {deg} deg")
        if model.norm is not None:
            print(f"  normalization: mean {model.norm.mean:.6g}, std {model.norm.std:.6g}")
    else:
        raise ValueError(f"unknown file magic {magic!r}; expected SLAG or SLNN")
    return 0


def _build_parser():
    parser = argparse.ArgumentParser(
        prog="slnn", description="Gridded SLA forecasting: networks and baseline."
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a synthetic SLA series")
    p.add_argument("--kind", required=True, choices=("constant", "harmonic", "wave"))
    p.add_argument("--h", dest="height", type=int, required=True)
    p.add_argument("--w", dest="width", type=int, required=True)
    p.add_argument("--t", dest="months", type=int, required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--offset", type=float, default=0.03)
    p.add_argument("--trend", type=float, default=2e-4)
    p.add_argument("--accel", type=float, default=0.0)
    p.add_argument("--annual", type=float, default=0.05)
    p.add_argument("--semiannual", type=float, default=0.02)
    p.add_argument("--wave", type=float, default=0.08)
    p.add_argument("--noise", type=float, default=0.005)
    p.add_argument("--land", action="store_true")
    p.add_argument("-o", "--out", required=True)
    p.set_defaults(func=_cmd_synth)

    p = sub.add_parser("train", help="train a network on a SLAG series")
    p.add_argument("--config", help="key=value file; flags override its values")
    p.add_argument("--data")
    p.add_argument("--model", choices=md.KINDS)
    p.add_argument("--split", help="train/val/test years as a/b/c")
    p.add_argument("--split-months", dest="split_months", help="partition sizes in months")
    p.add_argument("--epochs", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--base-lr", dest="base_lr", type=float)
    p.add_argument("--decay-factor", dest="decay_factor", type=float)
    p.add_argument("--decay-interval", dest="decay_interval", type=int)
    p.add_argument("--window", type=int, help="BPTT window for one-step kinds")
    p.add_argument("--batch", type=int)
    p.add_argument("--stride", type=int, help="training window stride")
    p.add_argument("--dropout", type=float)
    p.add_argument("--stop-train-mse", dest="stop_train_mse", type=float)
    p.add_argument("--out", help="run directory (default runs/<stamp>-seed<k>)")
    p.set_defaults(func=_cmd_train)

    p = sub.add_parser("predict", help="predict the months after a true series")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--model", choices=md.KINDS, help="protocol override (seq kinds)")
    p.add_argument("-o", "--out", required=True)
    p.set_defaults(func=_cmd_predict)

    p = sub.add_parser("rollout", help="closed-loop rollout from the last true window")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--cycles", type=int, default=20)
    p.add_argument("--model", choices=md.KINDS, help="protocol override (seq kinds)")
    p.add_argument("-o", "--out", required=True)
    p.set_defaults(func=_cmd_rollout)

    p = sub.add_parser("baseline", help="fit the per-cell harmonic regression")
    p.add_argument("--fit", required=True, help="SLAG series to fit")
    p.add_argument("--split", help="fit only the train partition of a/b/c years")
    p.add_argument("--split-months", dest="split_months")
    p.add_argument("-o", "--out", default="baseline_coeffs.csv")
    p.set_defaults(func=_cmd_baseline)

    p = sub.add_parser("evaluate", help="per-partition RMSE report and map")
    p.add_argument("--data", required=True)
    p.add_argument("--split", help="train/val/test years as a/b/c")
    p.add_argument("--split-months", dest="split_months")
    p.add_argument("--checkpoint")
    p.add_argument("--model", help="protocol override, or 'regression'")
    p.add_argument("--cycles", type=int, help="feedback cycles for seq_lstm_p")
    p.add_argument("--map-partition", dest="map_partition", default="test",
                   choices=("train", "val", "test"))
    p.add_argument("--map-vmax", dest="map_vmax", type=float, default=0.3)
    p.add_argument("--out", help="output directory (default ./eval)")
    p.set_defaults(func=_cmd_evaluate)

    p = sub.add_parser("render", help="render one month as a portable pixmap")
    p.add_argument("--data", required=True)
    p.add_argument("--month", type=int, default=0)
    p.add_argument("--vmin", type=float, default=-0.3)
    p.add_argument("--vmax", type=float, default=0.3)
    p.add_argument("-o", "--out", required=True)
    p.set_defaults(func=_cmd_render)

    p = sub.add_parser("inspect", help="print a SLAG/SLNN file summary")
    p.add_argument("--data", required=True)
    p.set_defaults(func=_cmd_inspect)

    return parser


def cli_dispatch(argv=None):
    parser = _build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (ValueError, FileNotFoundError, FloatingPointError) as err:
        print(f"error: {err}", file=sys.stderr)
        return 1


def main():
    sys.exit(cli_dispatch())


if __name__ == "__main__":
    main()
