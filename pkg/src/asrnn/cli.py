"""Command line: ``asrnn gen | train | eval | compare``.

Exit codes: 0 success, 2 configuration error, 3 data/format error,
4 numeric divergence, 5 refusal to overwrite an existing output.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import fields
from pathlib import Path

from .checkpoint import load_checkpoint, save_checkpoint
from .config import ConfigError, ExperimentConfig, parse_pairs
from .rng import RngStream
from .tasks import (CopySpec, DatasetFormatError, SignalIdSpec, gen_copy, gen_signal_id,
                    load_dataset, memoryless_entropy, save_dataset)
from .trainer import (DivergenceError, METRIC_FIELDS, evaluate, metrics_csv,
                      read_metrics_csv, train, trace_jsonl)

EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_DIVERGED, EXIT_EXISTS = 0, 2, 3, 4, 5

log = logging.getLogger("asrnn")


class OutputExists(RuntimeError):
    pass


def _guard(paths, force):
    for path in paths:
        if Path(path).exists() and not force:
            raise OutputExists(f"{path} exists; pass --force to overwrite")


def _config_flags(p):
    p.add_argument("--config", help="key=value file applied before flags")
    p.add_argument("--task", choices=["signal-id", "copy"])
    p.add_argument("--cell", choices=["lstm", "gru"])
    p.add_argument("--mode", choices=["vanilla", "fixed", "adaptive"])
    p.add_argument("--scale-j", type=int, dest="scale_j")
    p.add_argument("--J", type=int)
    p.add_argument("--K", type=int)
    p.add_argument("--tau", type=float)
    p.add_argument("--hidden", type=int)
    p.add_argument("--match-params", action="store_true", default=None,
                   dest="match_params")
    p.add_argument("--lr", type=float)
    p.add_argument("--decay", type=float)
    p.add_argument("--eps", type=float)
    p.add_argument("--iters", type=int)
    p.add_argument("--eval-every", type=int, dest="eval_every")
    p.add_argument("--batch", type=int)
    p.add_argument("--eval-batch", type=int, dest="eval_batch")
    p.add_argument("--eval-limit", type=int, dest="eval_limit")
    p.add_argument("--seed", type=int)
    p.add_argument("--hard-forward", action="store_true", default=None,
                   dest="hard_forward")
    p.add_argument("--eval-argmax-scale", action="store_true", default=None,
                   dest="eval_argmax_scale")
    p.add_argument("--wallclock", action="store_true", default=None,
                   help="record seconds per step (makes metrics non-reproducible)")


def resolve_config(args):
    cfg = ExperimentConfig()
    if getattr(args, "config", None):
        cfg.update(parse_pairs(Path(args.config).read_text().splitlines()))
    for f in fields(ExperimentConfig):
        value = getattr(args, f.name, None)
        if value is not None:
            setattr(cfg, f.name, value)
    return cfg.validate()


def build_parser():
    parser = argparse.ArgumentParser(prog="asrnn")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    gen = sub.add_parser("gen", help="generate train/test dataset files")
    gen.add_argument("--task", choices=["signal-id", "copy"], required=True)
    gen.add_argument("--seed", type=int, default=0)
    gen.add_argument("--out", required=True, help="output directory")
    gen.add_argument("--delay", type=int, help="copy task delay T")
    gen.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                     help="generator field, e.g. length=300 or train_per_class=600")
    gen.add_argument("--force", action="store_true")

    tr = sub.add_parser("train", help="train a model")
    _config_flags(tr)
    tr.add_argument("--data", required=True,
                    help="dataset directory (train.bin, optional test.bin) or file")
    tr.add_argument("--out", required=True, help="run directory")
    tr.add_argument("--trace", action="store_true",
                    help="write per-step scale records of the final evaluation")
    tr.add_argument("--force", action="store_true")

    ev = sub.add_parser("eval", help="evaluate a checkpoint")
    ev.add_argument("--checkpoint", required=True)
    ev.add_argument("--data", required=True, help="dataset file or directory")
    ev.add_argument("--trace", help="write per-step records to this path")
    ev.add_argument("--out", help="write the summary record (JSON) to this path")
    ev.add_argument("--seed", type=int, help="seed for sampled scales")
    ev.add_argument("--eval-argmax-scale", action="store_true", dest="eval_argmax_scale")
    ev.add_argument("--eval-batch", type=int, default=100, dest="eval_batch")
    ev.add_argument("--force", action="store_true")

    cmp = sub.add_parser("compare", help="side-by-side metrics table")
    cmp.add_argument("files", nargs="+")
    cmp.add_argument("--split", default=None, help="split to compare (default: eval "
                     "when present, else train)")
    return parser


# ---------------------------------------------------------------------------

def _gen_spec(args):
    pairs = parse_pairs(args.set)
    spec = SignalIdSpec() if args.task == "signal-id" else CopySpec()
    if args.delay is not None:
        if args.task != "copy":
            raise ConfigError("--delay applies to the copy task only")
        pairs["delay"] = str(args.delay)
    types = {f.name: f.type for f in fields(spec)}
    for key, raw in pairs.items():
        key = key.split(".", 1)[-1].replace("-", "_")
        if key not in types:
            raise ConfigError(f"unknown generator field {key!r}")
        try:
            setattr(spec, key, int(raw) if types[key] in ("int", int) else float(raw))
        except ValueError:
            raise ConfigError(f"bad value for {key}: {raw!r}") from None
    return spec


def cmd_gen(args):
    spec = _gen_spec(args)
    out = Path(args.out)
    paths = [out / "train.bin", out / "test.bin"]
    _guard(paths, args.force)
    if args.task == "signal-id":
        try:
            spec.validate()
        except ValueError as err:
            raise ConfigError(str(err)) from None
        train_set, test_set = gen_signal_id(spec, args.seed)
    else:
        if spec.delay < 1:
            raise ConfigError("delay must be >= 1")
        train_set, test_set = gen_copy(spec, args.seed)
    out.mkdir(parents=True, exist_ok=True)
    save_dataset(train_set, paths[0])
    save_dataset(test_set, paths[1])
    print(f"wrote {len(train_set)} training and {len(test_set)} test sequences to {out}")
    return EXIT_OK


def _load_split(data):
    path = Path(data)
    if path.is_dir():
        train_path, test_path = path / "train.bin", path / "test.bin"
        if not train_path.exists():
            raise FileNotFoundError(f"{train_path} not found")
        return load_dataset(train_path), (
            load_dataset(test_path) if test_path.exists() else None)
    return load_dataset(path), None


def cmd_train(args):
    cfg = resolve_config(args)
    out = Path(args.out)
    files = {"metrics": out / "metrics.csv", "checkpoint": out / "checkpoint.bin",
             "config": out / "config.txt"}
    if args.trace:
        files["trace"] = out / "trace.jsonl"
    _guard(files.values(), args.force)
    train_set, test_set = _load_split(args.data)
    out.mkdir(parents=True, exist_ok=True)
    files["config"].write_text(cfg.to_text())

    with open(files["metrics"], "w", newline="") as fh:
        fh.write(",".join(METRIC_FIELDS) + "\n")

        def on_metrics(row):
            fh.write(metrics_csv([row]).split("\n", 1)[1])
            fh.flush()
            log.info("%s", row)

        result = train(cfg, train_set, test_set, on_metrics=on_metrics)

    save_checkpoint(files["checkpoint"], result.model, cfg, result.rng_state)
    if args.trace:
        res = evaluate(result.model, test_set or train_set, cfg.eval_batch,
                       rng=RngStream.named(cfg.seed, "eval"),
                       argmax_scale=cfg.eval_argmax_scale, limit=cfg.eval_limit,
                       keep_traces=True)
        files["trace"].write_text(trace_jsonl(res.traces))
    print(f"trained {cfg.iters} iterations; outputs in {out}")
    return EXIT_OK


def format_summary(record):
    cols = ["model", "sequences", "loss", "accuracy", "min_scale", "max_scale",
            "avg_scale"]
    vals = [record["model"], str(record["sequences"]), f"{record['loss']:.5f}",
            f"{100 * record['accuracy']:.2f}%", f"{record['scale_min']:g}",
            f"{record['scale_max']:g}", f"{record['scale_mean']:.3f}"]
    if "memoryless_baseline" in record:
        cols.append("baseline")
        vals.append(f"{record['memoryless_baseline']:.5f}")
    widths = [max(len(c), len(v)) for c, v in zip(cols, vals)]
    line = "  ".join(c.ljust(w) for c, w in zip(cols, widths))
    row = "  ".join(v.ljust(w) for v, w in zip(vals, widths))
    return f"{line}\n{row}\n"


def cmd_eval(args):
    model, cfg, _ = load_checkpoint(args.checkpoint)
    path = Path(args.data)
    if path.is_dir():
        path = path / "test.bin"
    dataset = load_dataset(path)
    outputs = [p for p in (args.trace, args.out) if p]
    _guard(outputs, args.force)
    seed = cfg.seed if args.seed is None else args.seed
    argmax = args.eval_argmax_scale or cfg.eval_argmax_scale
    res = evaluate(model, dataset, args.eval_batch, rng=RngStream.named(seed, "eval"),
                   argmax_scale=argmax, keep_traces=bool(args.trace))
    prefix = {"vanilla": "", "fixed": "S", "adaptive": "AS"}[model.mode.kind]
    record = {"model": prefix + model.cell.upper(), "mode": str(model.mode),
              "hidden": model.hidden, "sequences": res.count, "loss": res.loss,
              "accuracy": res.accuracy, "scale_min": res.scale_min,
              "scale_max": res.scale_max, "scale_mean": res.scale_mean,
              "dataset": str(path)}
    if dataset.task == "copy":
        T = len(dataset.examples[0].inputs) - 20
        record["memoryless_baseline"] = memoryless_entropy(T)
    sys.stdout.write(format_summary(record))
    print(json.dumps(record, sort_keys=True))
    if args.out:
        Path(args.out).write_text(json.dumps(record, sort_keys=True, indent=2) + "\n")
    if args.trace:
        Path(args.trace).write_text(trace_jsonl(res.traces))
    return EXIT_OK


def compare_table(named_rows, split=None):
    """Aligned text table of loss/accuracy by step plus a final-row summary."""
    if split is None:
        has_eval = all(any(r.split == "eval" for r in rows) for _, rows in named_rows)
        split = "eval" if has_eval else "train"
    by_file = [(name, {r.step: r for r in rows if r.split == split})
               for name, rows in named_rows]
    steps = sorted(set().union(*(rows.keys() for _, rows in by_file)))
    header = ["step"]
    for name, _ in by_file:
        header += [f"{name}:loss", f"{name}:acc"]
    body = []
    for step in steps:
        line = [str(step)]
        for _, rows in by_file:
            r = rows.get(step)
            line += ["-", "-"] if r is None else [f"{r.loss:.5f}", f"{r.accuracy:.4f}"]
        body.append(line)
    final = ["final"]
    for _, rows in by_file:
        if rows:
            last = rows[max(rows)]
            final += [f"{last.loss:.5f}", f"{last.accuracy:.4f}"]
        else:
            final += ["-", "-"]
    table = [header] + body + [final]
    widths = [max(len(row[i]) for row in table) for i in range(len(header))]
    lines = ["  ".join(cell.rjust(w) for cell, w in zip(row, widths)) for row in table]
    return f"split: {split}\n" + "\n".join(lines) + "\n"


def cmd_compare(args):
    named = []
    for f in args.files:
        try:
            rows = read_metrics_csv(Path(f).read_text())
        except ValueError as err:
            raise DatasetFormatError(f"{f}: {err}", 0) from None
        name = Path(f).parent.name or Path(f).stem
        taken = {n for n, _ in named}
        if name in taken:
            name = next(f"{name}#{i}" for i in range(2, len(named) + 2)
                        if f"{name}#{i}" not in taken)
        named.append((name, rows))
    sys.stdout.write(compare_table(named, args.split))
    return EXIT_OK


COMMANDS = {"gen": cmd_gen, "train": cmd_train, "eval": cmd_eval, "compare": cmd_compare}


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(message)s")
    try:
        return COMMANDS[args.command](args)
    except OutputExists as err:
        print(f"error: {err}", file=sys.stderr)
        return EXIT_EXISTS
    except ConfigError as err:
        print(f"configuration error: {err}", file=sys.stderr)
        return EXIT_CONFIG
    except (DatasetFormatError, FileNotFoundError) as err:
        print(f"data error: {err}", file=sys.stderr)
        return EXIT_DATA
    except DivergenceError as err:
        print(f"numeric divergence: {err}", file=sys.stderr)
        return EXIT_DIVERGED


if __name__ == "__main__":
    sys.exit(main())
