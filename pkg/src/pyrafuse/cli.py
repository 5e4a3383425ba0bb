"""Command-line entry point.

Commands: train, eval, forecast, ablate, gradcheck, synth.
Exit codes: 0 success, 1 validation, 2 IO, 3 numerical failure.
Every run writes its fully-resolved configuration next to its outputs.
"""

from __future__ import annotations

import argparse
import os
import sys
import time
from datetime import timedelta
from statistics import median

import numpy as np

from . import config as cfgmod
from . import data as datamod
from . import gradcheck as gradmod
from . import trainer as trainmod
from .errors import (ConfigError, DataError, IncompatibleCheckpointError,
                     MalformedCheckpointError, NumericalError, PyrafuseError)
from .kernels import active_backend
from .model import VARIANTS, load_checkpoint, make_variant, save_checkpoint
from .numerics import no_grad

# Published ETTm2 horizon-96 ablation reference (MSE/MAE), printed next to
# desk-scale results for orientation; desk-scale numbers will differ.
ABLATION_REFERENCE = {
    "full": (0.173, 0.255),
    "temporal_only": (0.182, 0.276),
    "frequency_only": (0.186, 0.259),
    "no_cross_fusion": (0.215, 0.295),
}


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="pyrafuse",
        description="Dual temporal/frequency pyramid forecaster",
        epilog=cfgmod.registry_help(),
        formatter_class=argparse.RawDescriptionHelpFormatter)
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", help="config file (key = value lines)")
        p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                       help="override a config key (repeatable)")
        p.add_argument("--out", help="output directory (default runs/<command>)")

    common(sub.add_parser("train", help="train a model and evaluate it"))
    p_eval = sub.add_parser("eval", help="evaluate a checkpoint on a split")
    common(p_eval)
    p_eval.add_argument("--checkpoint", required=True)
    p_fc = sub.add_parser("forecast", help="forecast from a checkpoint and input CSV")
    common(p_fc)
    p_fc.add_argument("--checkpoint", required=True)
    p_fc.add_argument("--input", required=True, help="CSV with at least L_in rows")
    p_fc.add_argument("--output", help="forecast CSV path (default <out>/forecast.csv)")
    common(sub.add_parser("ablate", help="train and compare all four variants"))
    common(sub.add_parser("gradcheck", help="finite-difference check of all kernels"))
    p_synth = sub.add_parser("synth", help="generate a synthetic dataset CSV")
    common(p_synth)
    p_synth.add_argument("--output", help="CSV path (default <out>/synth.csv)")
    return parser


def _resolve_settings(args) -> dict[str, object]:
    file_pairs = cfgmod.parse_config_file(args.config) if args.config else {}
    overrides = {}
    problems = []
    for item in args.set:
        if "=" not in item:
            problems.append(f"--set {item!r}: expected KEY=VALUE")
            continue
        key, _, value = item.partition("=")
        overrides[key.strip()] = value.strip()
    if problems:
        raise ConfigError("invalid configuration: " + "; ".join(problems))
    return cfgmod.resolve(file_pairs, overrides)


def _out_dir(args) -> str:
    out = args.out or os.path.join("runs", args.command)
    os.makedirs(out, exist_ok=True)
    return out


def _write_resolved(values: dict[str, object], out: str) -> None:
    with open(os.path.join(out, "resolved.cfg"), "w", encoding="utf-8") as fh:
        fh.write(cfgmod.canonical_text(values))


def _load_data(values):
    path = cfgmod.resolve_data_path(str(values["data.path"]))
    ds = datamod.load_csv(path)
    mcfg = cfgmod.model_config(values, num_channels=ds.num_channels)
    split = datamod.chronological_split(ds, str(values["data.split_policy"]),
                                        mcfg.L_in, mcfg.L_pred)
    scaler = datamod.Scaler.fit(ds.values[split.train[0]:split.train[1]])
    return ds, mcfg, split, scaler


def _sampler(ds, split, which, mcfg, scaler):
    return datamod.WindowSampler(ds, split, which, mcfg.L_in, mcfg.L_pred, scaler)


def _train_one(ds, split, scaler, mcfg, tcfg, max_steps=None):
    model = make_variant(mcfg, seed=tcfg.seed)
    train_s = _sampler(ds, split, "train", mcfg, scaler)
    val_s = _sampler(ds, split, "val", mcfg, scaler)
    result = trainmod.train(model, train_s, val_s, tcfg, max_steps=max_steps)
    return model, result


def cmd_train(args) -> int:
    values = _resolve_settings(args)
    out = _out_dir(args)
    ds, mcfg, split, scaler = _load_data(values)
    values["model.C"] = mcfg.C
    _write_resolved(values, out)
    tcfg = cfgmod.train_config(values)
    started = time.perf_counter()
    model, result = _train_one(ds, split, scaler, mcfg, tcfg)
    for line in result.history_records():
        print(line)
    with open(os.path.join(out, "history.jsonl"), "w", encoding="utf-8") as fh:
        fh.write("".join(line + "\n" for line in result.history_records()))
    if result.diverged:
        print("training diverged (non-finite loss); kept last good state",
              file=sys.stderr)
    save_checkpoint(os.path.join(out, "checkpoint.bin"), mcfg, model.state_arrays(),
                    extras={"scaler_mean": scaler.mean, "scaler_std": scaler.std})
    reports = []
    for which in ("val", "test"):
        rep = trainmod.evaluate(model, _sampler(ds, split, which, mcfg, scaler),
                                batch_size=tcfg.batch_size)
        reports.append(rep)
        print(rep.record())
    with open(os.path.join(out, "report.jsonl"), "w", encoding="utf-8") as fh:
        fh.write("".join(rep.record() + "\n" for rep in reports))
    print(f"done in {time.perf_counter() - started:.1f}s "
          f"(backend={active_backend()}, params={model.num_params()}, out={out})")
    return 3 if result.diverged else 0


def cmd_eval(args) -> int:
    values = _resolve_settings(args)
    out = _out_dir(args)
    ckpt_config, params, extras = load_checkpoint(args.checkpoint)
    path = cfgmod.resolve_data_path(str(values["data.path"]))
    ds = datamod.load_csv(path)
    mcfg = cfgmod.model_config(values, num_channels=ds.num_channels)
    if mcfg.fingerprint() != ckpt_config.fingerprint():
        raise IncompatibleCheckpointError(
            "checkpoint config differs from the resolved config; "
            "pass matching --set overrides")
    values["model.C"] = mcfg.C
    _write_resolved(values, out)
    split = datamod.chronological_split(ds, str(values["data.split_policy"]),
                                        mcfg.L_in, mcfg.L_pred)
    if "scaler_mean" in extras:
        scaler = datamod.Scaler(mean=extras["scaler_mean"], std=extras["scaler_std"])
    else:
        scaler = datamod.Scaler.fit(ds.values[split.train[0]:split.train[1]])
    model = make_variant(mcfg, seed=int(values["seed"]))
    model.load_state(params)
    which = str(values["eval.split"])
    rep = trainmod.evaluate(
        model, _sampler(ds, split, which, mcfg, scaler),
        batch_size=int(values["train.batch_size"]),
        scaler=scaler if values["eval.original_units"] else None)
    print(rep.record())
    with open(os.path.join(out, "report.jsonl"), "w", encoding="utf-8") as fh:
        fh.write(rep.record() + "\n")
    print(f"evaluated {rep.num_windows} {which} windows in {rep.wall_clock_s:.2f}s")
    return 0


def _extrapolate_timestamps(timestamps: list[str], n: int) -> list[str]:
    """Continue the input's timestamp column by its median step."""
    kinds = {datamod._timestamp_key(t, i)[0] for i, t in enumerate(timestamps)}
    if len(kinds) == 1 and kinds == {"num"}:
        vals = [float(t) for t in timestamps]
        step = median(np.diff(vals)) if len(vals) > 1 else 1.0
        out = [vals[-1] + step * (i + 1) for i in range(n)]
        if all(float(v).is_integer() for v in vals + out):
            return [str(int(v)) for v in out]
        return [repr(v) for v in out]
    if len(kinds) == 1 and kinds == {"dt"}:
        from datetime import datetime
        vals = [datetime.fromisoformat(t.strip()) for t in timestamps]
        if len(vals) > 1:
            deltas = sorted((b - a for a, b in zip(vals, vals[1:])))
            step = deltas[len(deltas) // 2]
        else:
            step = timedelta(hours=1)
        return [(vals[-1] + step * (i + 1)).isoformat(sep=" ") for i in range(n)]
    base = len(timestamps)
    return [str(base + i) for i in range(n)]


def cmd_forecast(args) -> int:
    values = _resolve_settings(args)
    out = _out_dir(args)
    _write_resolved(values, out)
    mcfg, params, extras = load_checkpoint(args.checkpoint)
    if "scaler_mean" not in extras:
        raise MalformedCheckpointError("checkpoint lacks scaler statistics")
    scaler = datamod.Scaler(mean=extras["scaler_mean"], std=extras["scaler_std"])
    ds = datamod.load_csv(args.input)
    if ds.num_channels != mcfg.C:
        raise IncompatibleCheckpointError(
            f"input has {ds.num_channels} channels, checkpoint expects {mcfg.C}")
    if ds.num_rows < mcfg.L_in:
        raise DataError(
            f"input has {ds.num_rows} rows; forecasting needs at least L_in={mcfg.L_in}")
    model = make_variant(mcfg, seed=int(values["seed"]))
    model.load_state(params)
    window = scaler.transform(ds.values[-mcfg.L_in:])[None, ...]
    with no_grad():
        fc = model.forward(window.astype(np.float32))
    original = scaler.inverse(fc.values[0].astype(np.float64))
    stamps = _extrapolate_timestamps(ds.timestamps, mcfg.L_pred)
    out_path = args.output or os.path.join(out, "forecast.csv")
    forecast_ds = datamod.RawDataset(name="forecast", timestamps=stamps,
                                     values=original, channel_names=ds.channel_names)
    datamod.write_csv(forecast_ds, out_path)
    print(f"wrote {mcfg.L_pred}-step forecast for {mcfg.C} channels to {out_path}")
    return 0


def cmd_ablate(args) -> int:
    values = _resolve_settings(args)
    out = _out_dir(args)
    ds, base_cfg, _, _ = _load_data(values)
    values["model.C"] = base_cfg.C
    _write_resolved(values, out)
    tcfg = cfgmod.train_config(values)
    horizons = [int(h) for h in values["ablate.horizons"]]
    rows: dict[tuple[str, int], trainmod.EvalReport] = {}
    for variant in VARIANTS:
        for horizon in horizons:
            mcfg = cfgmod.with_model_overrides(base_cfg, variant=variant,
                                               L_pred=horizon)
            split = datamod.chronological_split(
                ds, str(values["data.split_policy"]), mcfg.L_in, mcfg.L_pred)
            scaler = datamod.Scaler.fit(ds.values[split.train[0]:split.train[1]])
            model, result = _train_one(ds, split, scaler, mcfg, tcfg)
            if result.diverged:
                raise NumericalError(f"{variant}/{horizon}: training diverged")
            rep = trainmod.evaluate(model, _sampler(ds, split, "test", mcfg, scaler),
                                    batch_size=tcfg.batch_size)
            rows[(variant, horizon)] = rep
            print(f"{variant:<16} horizon {horizon:<4} "
                  f"MSE {rep.mse:.4f}  MAE {rep.mae:.4f}")
    table = _format_ablation_table(rows, horizons)
    print(table)
    with open(os.path.join(out, "ablate.txt"), "w", encoding="utf-8") as fh:
        fh.write(table + "\n")
    with open(os.path.join(out, "ablate.jsonl"), "w", encoding="utf-8") as fh:
        for (variant, horizon), rep in sorted(rows.items()):
            fh.write(f'{{"variant": "{variant}", "horizon": {horizon}, '
                     f'"record": {rep.record()}}}\n')
    return 0


def _format_ablation_table(rows, horizons) -> str:
    lines = ["variant            " + "".join(f"   h={h:<4} MSE    MAE " for h in horizons)]
    for variant in VARIANTS:
        cells = "".join(f"   {rows[(variant, h)].mse:9.4f} {rows[(variant, h)].mae:6.4f}"
                        for h in horizons)
        lines.append(f"{variant:<18}{cells}")
    lines.append("")
    lines.append("ETTm2 horizon-96 reference values for orientation "
                 "(desk-scale numbers differ):")
    for variant, (mse, mae) in ABLATION_REFERENCE.items():
        lines.append(f"  {variant:<16} MSE {mse:.3f}  MAE {mae:.3f}")
    return "\n".join(lines)


def cmd_gradcheck(args) -> int:
    values = _resolve_settings(args)
    out = _out_dir(args)
    _write_resolved(values, out)
    results = gradmod.run_suite(seed=int(values["seed"]))
    report = gradmod.format_report(results)
    print(report)
    with open(os.path.join(out, "gradcheck.txt"), "w", encoding="utf-8") as fh:
        fh.write(report + "\n")
    failed = [r.name for r in results if not r.passed]
    if failed:
        print(f"gradcheck FAILED for: {', '.join(failed)}", file=sys.stderr)
        return 3
    return 0


def cmd_synth(args) -> int:
    values = _resolve_settings(args)
    out = _out_dir(args)
    _write_resolved(values, out)
    ds = datamod.synth_multiperiodic(
        T_total=int(values["synth.T_total"]), C=int(values["synth.C"]),
        periods=values["synth.periods"], amplitudes=values["synth.amplitudes"],
        noise_sigma=float(values["synth.noise_sigma"]), seed=int(values["seed"]))
    out_path = args.output or os.path.join(out, "synth.csv")
    datamod.write_csv(ds, out_path)
    print(f"wrote {ds.num_rows} x {ds.num_channels} synthetic series to {out_path}")
    return 0


_COMMANDS = {
    "train": cmd_train,
    "eval": cmd_eval,
    "forecast": cmd_forecast,
    "ablate": cmd_ablate,
    "gradcheck": cmd_gradcheck,
    "synth": cmd_synth,
}


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    try:
        return _COMMANDS[args.command](args)
    except (ConfigError, IncompatibleCheckpointError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except (DataError, MalformedCheckpointError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except NumericalError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3
    except PyrafuseError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
