"""Operator commands wiring the pipeline end to end.

Every command is deterministic given its flags and seeds, reads config
files in plain key=value form (unknown keys rejected), writes outputs only
to the paths it was given, and exits 0 on success, 2 on configuration
errors, 3 on file-format errors, 4 on numeric failures.
"""

from __future__ import annotations

import argparse
import sys
from dataclasses import fields, replace
from pathlib import Path

import numpy as np

from . import evaluation as ev
from . import model as md
from . import spectra as sp
from . import training as tr
from .dictionary import build_dictionary, denoise
from .errors import ConfigError, DimensionError, FormatError, MsdgError, NumericError, UsageError

EXIT_CONFIG = 2
EXIT_FORMAT = 3
EXIT_NUMERIC = 4


# ------------------------------------------------------------------ config files


def parse_kv_file(path, schema: dict[str, type]) -> dict:
    """Read ``key=value`` lines; unknown keys are an error, not a warning."""
    values: dict = {}
    for lineno, raw in enumerate(Path(path).read_text().splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{path}:{lineno}: expected key=value, got {raw!r}")
        key, _, val = line.partition("=")
        key = key.strip()
        val = val.strip()
        if key not in schema:
            raise ConfigError(f"{path}:{lineno}: unknown key {key!r}")
        caster = schema[key]
        try:
            if caster is bool:
                values[key] = val.lower() in ("1", "true", "yes")
            else:
                values[key] = caster(val)
        except ValueError as exc:
            raise ConfigError(f"{path}:{lineno}: bad value for {key}: {exc}") from exc
    return values


_DATA_SCHEMA = {
    "l": int, "mz_min": float, "mz_max": float,
    "count_1": int, "count_2": int, "count_3": int, "count_4": int, "count_5": int,
    "sigma": float, "baseline_amplitude": float, "baseline_decay": float,
    "amplitude_jitter": float, "peak_dropout": float, "gain_jitter": float,
    "clutter_count": int, "clutter_amplitude": float, "clutter_width": float,
}

_MODEL_SCHEMA = {f.name: (int if f.type == "int" else float)
                 for f in fields(md.ModelConfig)
                 if f.name not in ("dictionary_enabled",)}
_TRAIN_SCHEMA = {f.name: (int if f.type == "int" else float) for f in fields(tr.TrainConfig)}

_PRESET_COUNTS = {
    "desk": {c: 250 for c in range(1, 6)},
    # paper proportions: bacterial 1500/1500, proteins 1400/1500, dust 630
    "paper": {1: 1500, 2: 1500, 3: 1400, 4: 1500, 5: 630},
}


def _load_model_config(path, ablation: str) -> md.ModelConfig:
    cfg = md.desk_config()
    if path is not None:
        overrides = parse_kv_file(path, _MODEL_SCHEMA)
        cfg = replace(cfg, **overrides)
    if ablation == "ms-former":
        cfg = replace(cfg, dictionary_enabled=False)
    return cfg.validate()


def _load_train_config(path) -> tr.TrainConfig:
    tc = tr.TrainConfig()
    if path is not None:
        tc = replace(tc, **parse_kv_file(path, _TRAIN_SCHEMA))
    return tc.validate()


# ------------------------------------------------------------------ commands


def cmd_gen_data(args) -> int:
    overrides = parse_kv_file(args.config, _DATA_SCHEMA) if args.config else {}
    l = overrides.pop("l", 4000)
    mz_min = overrides.pop("mz_min", sp.MZ_MIN_DA)
    mz_max = overrides.pop("mz_max", sp.MZ_MAX_DA)
    counts = dict(_PRESET_COUNTS[args.preset])
    for c in range(1, 6):
        key = f"count_{c}"
        if key in overrides:
            counts[c] = overrides.pop(key)
    noise = replace(sp.NoiseParams(), **overrides)
    axis = sp.linear_axis(l, mz_min, mz_max)
    templates = sp.default_templates(axis, seed=args.seed)
    ds = sp.generate_dataset(axis, templates, counts, noise, seed=args.seed)
    sp.save_dataset(args.out, ds)
    for class_id, count in sorted(ds.class_counts().items()):
        print(f"class {class_id}: {count} spectra")
    print(f"wrote {len(ds)} spectra ({l} points each) to {args.out}")
    return 0


def _references_from_data(ds: sp.Dataset, cfg: md.ModelConfig) -> md.ClassReference:
    bits = sp.estimate_peak_bits(ds, cfg.rho, cfg.gamma)
    is_dust = bits.sum(axis=1) == 0
    if is_dust.sum() == 0:
        raise ConfigError("no peakless (dust) class found in the training data")
    return md.ClassReference(bits.astype(np.float32), is_dust)


def cmd_train(args) -> int:
    cfg = _load_model_config(args.model_config, args.ablation)
    tc = _load_train_config(args.train_config)
    ds = sp.load_dataset(args.data)
    if len(ds.axis) != cfg.l:
        raise ConfigError(f"dataset length {len(ds.axis)} != model config l={cfg.l}")
    refs = _references_from_data(ds, cfg)
    dictionary = None
    if cfg.dictionary_enabled:
        positives = tuple(int(c) + 1 for c in np.flatnonzero(~refs.is_dust))
        if len(positives) != cfg.c:
            raise ConfigError(
                f"model expects c={cfg.c} dictionary classes, data has {len(positives)}"
            )
        dictionary = denoise(
            build_dictionary(ds, cfg.per_class, positives, seed=tc.seed), cfg.r
        )
    weights, history = tr.fit(cfg, ds, dictionary, tc, refs)
    model = md.Model(cfg, weights, ds.axis, refs, dictionary)
    md.save_checkpoint(args.out_checkpoint, model)
    history_path = args.out_history or f"{args.out_checkpoint}.history.csv"
    with open(history_path, "w") as fh:
        fh.write("epoch,mean_loss,lr,test_macro_f1\n")
        for e, (loss, lr, f1) in enumerate(
            zip(history.mean_loss, history.lr, history.test_macro_f1)
        ):
            fh.write(f"{e},{loss:.6f},{lr:.8e},{f1:.6f}\n")
    print(f"trained {model.kind} model for {tc.epochs} epochs; "
          f"final loss {history.mean_loss[-1]:.4f}" if history.mean_loss
          else "trained for 0 epochs (initialized weights)")
    print(f"checkpoint: {args.out_checkpoint}\nhistory: {history_path}")
    return 0


def cmd_export_e(args) -> int:
    model = md.load_checkpoint(args.checkpoint)
    if not isinstance(model, md.Model) or model.kind != md.FULL:
        raise ConfigError("export needs a full dictionary-guided checkpoint")
    full_count = md.count_parameters(model.cfg, md.FULL)
    eff_count = md.count_parameters(model.cfg, md.EFFICIENT)
    efficient = md.export_efficient(model)
    md.save_checkpoint(args.out, efficient)
    print(f"full model:      {full_count.weights} weights "
          f"(+{full_count.tokens} token scalars)")
    print(f"efficient model: {eff_count.weights} weights")
    print(f"wrote {args.out}")
    return 0


def cmd_eval(args) -> int:
    model = md.load_checkpoint(args.checkpoint)
    ds = sp.load_dataset(args.data)
    report = ev.evaluate(model, ds)
    print(report.to_table())
    if args.out:
        Path(args.out).write_text(report.to_csv())
        print(f"metrics csv: {args.out}")
    return 0


def cmd_bench(args) -> int:
    model = md.load_checkpoint(args.checkpoint)
    batches = tuple(int(b) for b in args.batches.split(","))
    report = ev.benchmark(model, batches, warmup=args.warmup, runs=args.runs,
                          seed=args.seed)
    csv = report.to_csv()
    print(csv, end="")
    if args.out:
        Path(args.out).write_text(csv)
    return 0


def cmd_inspect_attn(args) -> int:
    model = md.load_checkpoint(args.checkpoint)
    ds = sp.load_dataset(args.data)
    if not 0 <= args.spectrum_index < len(ds):
        raise ConfigError(f"spectrum index {args.spectrum_index} outside 0..{len(ds) - 1}")
    spectrum = ds.spectra[args.spectrum_index]
    maps = ev.dump_attention(model, spectrum)
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    written = []
    for name, matrix in maps.items():
        prefix = "class_" if name == "selection" else "seq_"
        path = out_dir / f"{name}.csv"
        path.write_text(ev.attention_csv(matrix, prefix))
        written.append(str(path))
    print(f"spectrum {args.spectrum_index} (class {spectrum.label}): "
          f"wrote {len(written)} files")
    for path in written:
        print(f"  {path}")
    return 0


# ------------------------------------------------------------------ entry point


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="msdg",
        description="Dictionary-guided transformer for single-shot mass spectra",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-data", help="generate a synthetic dataset file")
    p.add_argument("--config", help="key=value overrides for the generator")
    p.add_argument("--preset", choices=("desk", "paper"), default="desk")
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_gen_data)

    p = sub.add_parser("train", help="train a model on a dataset file")
    p.add_argument("--data", required=True)
    p.add_argument("--model-config")
    p.add_argument("--train-config")
    p.add_argument("--out-checkpoint", required=True)
    p.add_argument("--out-history")
    p.add_argument("--ablation", choices=("ms-former", "none"), default="none")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("export-e", help="export the efficient inference variant")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_export_e)

    p = sub.add_parser("eval", help="evaluate a checkpoint on a dataset file")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--out")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("bench", help="measure inference latency/throughput")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--batches", default="1,4,8")
    p.add_argument("--warmup", type=int, default=10)
    p.add_argument("--runs", type=int, default=100)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out")
    p.set_defaults(func=cmd_bench)

    p = sub.add_parser("inspect-attn", help="dump attention maps for one spectrum")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--spectrum-index", type=int, required=True)
    p.add_argument("--out-dir", default=".")
    p.set_defaults(func=cmd_inspect_attn)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except FormatError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_FORMAT
    except NumericError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (ConfigError, DimensionError, UsageError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except MsdgError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
