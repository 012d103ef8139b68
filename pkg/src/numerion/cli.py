"""``numerion`` command-line interface.

Output goes to ``--out`` if given, else ``$NUMERION_OUT_DIR``, else
``./numerion_runs``.  Every data-touching command writes
``<command>_manifest.json`` there before work starts and finalizes it on
exit, successful or not.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import platform
import sys
import time
from dataclasses import fields
from pathlib import Path

import numpy as np

from numerion import BACKEND, __version__
from numerion.algebra import build_table, format_table, log2_dim
from numerion.data import (
    ETT_HOURLY_ROWS,
    ETTH1_TABLE_PARTITION,
    SYNTHETIC_KINDS,
    DataError,
    dataset_metadata,
    file_hash,
    load_csv,
    split_standardize_window,
    synthetic,
    write_csv,
)
from numerion.model import SPACES, NumerionConfig, load_checkpoint, save_checkpoint
from numerion.train import (
    TrainConfig,
    TrainingError,
    evaluate,
    format_ablation,
    persistence_metrics,
    resolve_case,
    run_ablation,
    train,
)

log = logging.getLogger("numerion")
DEFAULT_OUT = "numerion_runs"


class UsageError(Exception):
    """Bad flag values detected after parsing; reported with exit code 2."""


# configuration file: one ``key = value`` per line, ``#`` starts a comment;
# keys are flag names with or without leading dashes (``embed-dim`` or ``embed_dim``)


def read_config_file(path) -> dict[str, str]:
    out = {}
    with open(path) as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise DataError(f"{path}: line {lineno}: expected key = value")
            key, value = (s.strip() for s in line.split("=", 1))
            out[key.lstrip("-").replace("-", "_")] = value
    return out


def _spaces(text: str) -> tuple[int, ...]:
    try:
        vals = tuple(int(v) for v in str(text).split(",") if v.strip())
    except ValueError:
        raise argparse.ArgumentTypeError(f"--spaces expects a comma list, got {text!r}") from None
    bad = [v for v in vals if v not in SPACES]
    if bad or not vals:
        raise argparse.ArgumentTypeError(f"--spaces must be a non-empty subset of {SPACES}")
    return vals


def _partition(text: str):
    if text in ("auto", "etth1-table"):
        return text
    try:
        vals = tuple(int(v) for v in text.split(","))
    except ValueError:
        raise argparse.ArgumentTypeError(f"--partition expects a,b,c or 'auto', got {text!r}") from None
    if len(vals) != 3:
        raise argparse.ArgumentTypeError("--partition needs three counts")
    return vals


def _bool(text) -> bool:
    if isinstance(text, bool):
        return text
    t = str(text).strip().lower()
    if t in ("1", "true", "yes", "on"):
        return True
    if t in ("0", "false", "no", "off"):
        return False
    raise argparse.ArgumentTypeError(f"expected a boolean, got {text!r}")


def _add_data_flags(p):
    p.add_argument("--data", required=False, help="CSV file: index column then numeric channels")
    p.add_argument("--partition", type=_partition, default="auto",
                   help="train,val,test counts; 'auto' uses the ETT rows for ETT files, else 70/10/20")
    p.add_argument("--convention", choices=("rows", "windows"), default=None,
                   help="read --partition as row counts or window counts")


def _add_model_flags(p):
    g = p.add_argument_group("model")
    g.add_argument("--T", type=int, default=96, dest="lookback", help="lookback length")
    g.add_argument("--P", type=int, default=96, dest="horizon", help="forecast horizon")
    g.add_argument("--levels", type=int, default=3, dest="patch_levels")
    g.add_argument("--embed-dim", type=int, default=64, dest="embed_dim")
    g.add_argument("--layers", type=int, default=2, dest="rhr_layers")
    g.add_argument("--hidden", type=int, default=64, dest="rhr_hidden")
    g.add_argument("--dropout", type=float, default=0.5)
    g.add_argument("--pnorm", type=float, default=6.0, dest="p_norm")
    g.add_argument("--fusion-hidden", type=int, default=None, dest="fusion_hidden")
    g.add_argument("--spaces", type=_spaces, default=SPACES, dest="enabled_spaces",
                   help="comma list from 1,2,4,8,16")
    g.add_argument("--no-fusion", action="store_true", dest="no_fusion",
                   help="average the spaces with uniform weights")
    t = p.add_argument_group("training")
    t.add_argument("--lr", type=float, default=1e-3, dest="learning_rate")
    t.add_argument("--batch", type=int, default=128, dest="batch_size")
    t.add_argument("--epochs", type=int, default=10, dest="max_epochs")
    t.add_argument("--patience", type=int, default=3)


def _add_common(p):
    p.add_argument("--config", help="key = value file; flags given on the command line win")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", default=None, help="output directory")
    p.add_argument("--threads", type=int, default=1, help="BLAS threads (default 1)")
    p.add_argument("-v", "--verbose", action="store_true")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="numerion", description="Hypercomplex multi-space forecaster")
    ap.add_argument("--version", action="version", version=f"numerion {__version__} ({BACKEND} kernels)")
    sub = ap.add_subparsers(dest="command", metavar="command")
    sub.required = True

    p = sub.add_parser("rules", help="print an algebra's selection and sign matrices")
    p.add_argument("--dim", type=int, required=True)
    p.add_argument("--layout", choices=("published", "left", "right"), default="published",
                   help="'published' uses the gather layout the reference tables are printed in")

    p = sub.add_parser("gradcheck", help="run the gradient verification suite")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--quick", action="store_true", help="skip the full-model check")

    for name, helptext in (("train", "train a model and test it"),
                           ("ablate", "train the ablation cases and compare")):
        p = sub.add_parser(name, help=helptext)
        _add_common(p)
        _add_data_flags(p)
        _add_model_flags(p)
        if name == "ablate":
            p.add_argument("--cases", default="1-17", help="case ids or ranges, e.g. 6,12 or 1-17")

    for name, helptext in (("eval", "test a checkpoint"), ("analyze", "spectral decomposition report")):
        p = sub.add_parser(name, help=helptext)
        _add_common(p)
        _add_data_flags(p)
        p.add_argument("--checkpoint", required=True)
        p.add_argument("--split", choices=("train", "val", "test"), default="test")
        if name == "analyze":
            p.add_argument("--channel", type=int, default=-1, help="channel index (default: last)")
            p.add_argument("--max-windows", type=int, default=None)

    p = sub.add_parser("synth", help="write a synthetic CSV")
    p.add_argument("--kind", choices=SYNTHETIC_KINDS, default="sine_mix")
    p.add_argument("--rows", type=int, default=2000)
    p.add_argument("--channels", type=int, default=1)
    p.add_argument("--frequencies", default=None, help="comma list of cycles per row (sine_mix)")
    p.add_argument("--noise", type=float, default=0.0)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", default=None, help="output CSV path")
    return ap


def _apply_config_file(parser, argv):
    """Re-parse with defaults taken from ``--config`` so explicit flags still win."""
    args = parser.parse_args(argv)
    path = getattr(args, "config", None)
    if not path:
        return args
    values = read_config_file(path)
    sub = parser._subparsers._group_actions[0].choices[args.command]
    actions = {a.dest: a for a in sub._actions}
    # flag spellings map to their dest as well
    for a in sub._actions:
        for opt in a.option_strings:
            actions.setdefault(opt.lstrip("-").replace("-", "_"), a)
    defaults = {}
    for key, raw in values.items():
        if key not in actions:
            raise UsageError(f"{path}: unknown key {key!r}")
        a = actions[key]
        if a.nargs == 0:
            defaults[a.dest] = _bool(raw)
        else:
            conv = a.type or str
            try:
                defaults[a.dest] = conv(raw)
            except (ValueError, argparse.ArgumentTypeError) as exc:
                raise UsageError(f"{path}: {key}: {exc}") from None
    sub.set_defaults(**defaults)
    return parser.parse_args(argv)


def _out_dir(args, default_name: str = "") -> Path:
    root = args.out or os.environ.get("NUMERION_OUT_DIR") or DEFAULT_OUT
    path = Path(root)
    path.mkdir(parents=True, exist_ok=True)
    return path


def model_config(args) -> NumerionConfig:
    names = {f.name for f in fields(NumerionConfig)}
    kw = {k: v for k, v in vars(args).items() if k in names}
    kw["fusion_enabled"] = not args.no_fusion
    return NumerionConfig(**kw)


def train_config(args) -> TrainConfig:
    return TrainConfig(learning_rate=args.learning_rate, batch_size=args.batch_size,
                       max_epochs=args.max_epochs, patience=args.patience, seed=args.seed)


class Manifest:
    def __init__(self, path: Path, command: str, argv):
        self.path = path
        self.t0 = time.time()
        self.doc = {"command": command, "argv": list(argv), "status": "running",
                    "numerion_version": __version__, "kernel_backend": BACKEND,
                    "python": platform.python_version(), "numpy": np.__version__,
                    "started": time.strftime("%Y-%m-%dT%H:%M:%S"), "artifacts": {}, "timings": {}}
        self.write()

    def update(self, **kw):
        self.doc.update(kw)
        self.write()

    def artifact(self, name, path):
        self.doc["artifacts"][name] = str(path)
        self.write()

    def timing(self, name, seconds):
        self.doc["timings"][name] = round(float(seconds), 3)

    def finish(self, status: str, error: str | None = None):
        self.doc["status"] = status
        if error:
            self.doc["error"] = error
        self.doc["timings"]["total_seconds"] = round(time.time() - self.t0, 3)
        self.write()

    def write(self):
        tmp = self.path.with_suffix(".tmp")
        tmp.write_text(json.dumps(self.doc, indent=2, sort_keys=True, default=str))
        tmp.replace(self.path)


def _resolve_partition(args, table):
    part, conv = args.partition, args.convention
    if part == "etth1-table":
        return ETTH1_TABLE_PARTITION, conv or "windows"
    if part == "auto":
        if table.name.lower().startswith("etth"):
            return ETT_HOURLY_ROWS, conv or "rows"
        n = table.rows
        n_train, n_test = int(n * 0.7), int(n * 0.2)
        return (n_train, n - n_train - n_test, n_test), conv or "rows"
    return part, conv or "rows"


def _load_splits(args, lookback, horizon, manifest):
    if not args.data:
        raise UsageError("--data is required")
    table = load_csv(args.data)
    partition, conv = _resolve_partition(args, table)
    splits = split_standardize_window(table, lookback, horizon, partition, conv)
    meta = dataset_metadata(table, partition, conv, splits)
    meta["path"] = str(Path(args.data).resolve())
    meta["sha256"] = file_hash(args.data)
    manifest.update(dataset=meta, seed=getattr(args, "seed", None))
    return table, splits


def _write_history(path: Path, history):
    with path.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["epoch", "train_mae", "val_mae", "seconds", "improved"])
        for r in history:
            w.writerow([r.epoch, f"{r.train_mae:.6f}", f"{r.val_mae:.6f}", f"{r.seconds:.2f}", int(r.improved)])


def cmd_rules(args, out=None):
    k = log2_dim(args.dim)
    layout = args.layout
    if layout == "published":
        layout = "right" if args.dim == 4 else "left"
    print(f"# dim {args.dim}, layout {layout}: selection | sign", file=out)
    print(format_table(build_table(k, layout)), file=out)
    return 0


def cmd_gradcheck(args, out=None):
    from numerion.gradcheck import run_suite

    results = run_suite(seed=args.seed, quick=args.quick)
    for r in results:
        print(r.line(), file=out)
    failed = [r for r in results if not r.passed]
    print(f"{len(results) - len(failed)}/{len(results)} checks passed", file=out)
    return 0 if not failed else 1


def cmd_train(args, manifest, out_dir, out=None):
    cfg, tcfg = model_config(args), train_config(args)
    manifest.update(model_config=cfg.to_dict(), train_config=tcfg.to_dict())
    _, (tr, va, te) = _load_splits(args, cfg.lookback, cfg.horizon, manifest)
    if tr.n_channels != cfg.channels:
        cfg.channels = tr.n_channels
        manifest.update(model_config=cfg.to_dict())
    hist_path = out_dir / "metrics.csv"
    records = []

    def on_epoch(rec):
        records.append(rec)
        _write_history(hist_path, records)
        print(f"epoch {rec.epoch:3d}  train MAE {rec.train_mae:.4f}  val MAE {rec.val_mae:.4f}  "
              f"{rec.seconds:6.1f}s{'  *' if rec.improved else ''}", file=out)

    t0 = time.perf_counter()
    ckpt = out_dir / "checkpoint.npz"
    try:
        res = train(cfg, tcfg, tr, va, callback=on_epoch)
    except TrainingError as exc:
        if exc.last_good is not None:
            from numerion.model import init_params

            params = init_params(cfg)
            params.load_state(exc.last_good)
            save_checkpoint(ckpt, params, cfg, {"status": "aborted"})
            manifest.artifact("checkpoint", ckpt)
        raise
    manifest.timing("train_seconds", time.perf_counter() - t0)
    _write_history(hist_path, res.history)
    manifest.artifact("metrics", hist_path)
    test = evaluate(res.params, cfg, te)
    base = persistence_metrics(te)
    save_checkpoint(ckpt, res.params, cfg, {"best_epoch": res.best_epoch, "test": test})
    manifest.artifact("checkpoint", ckpt)
    result = {"best_epoch": res.best_epoch, "best_val_mae": res.best_val_mae, "epochs": len(res.history),
              "test_mae": test["mae"], "test_mse": test["mse"],
              "persistence_mae": base["mae"], "persistence_mse": base["mse"]}
    (out_dir / "test_metrics.json").write_text(json.dumps(result, indent=2))
    manifest.artifact("test_metrics", out_dir / "test_metrics.json")
    manifest.update(result=result)
    print(f"test MAE {test['mae']:.4f}  MSE {test['mse']:.4f}  "
          f"(persistence MAE {base['mae']:.4f})", file=out)
    return 0


def _checkpoint_splits(args, manifest):
    params, cfg, extra = load_checkpoint(args.checkpoint)
    manifest.update(model_config=cfg.to_dict(), checkpoint=str(args.checkpoint))
    _, splits = _load_splits(args, cfg.lookback, cfg.horizon, manifest)
    ds = {"train": 0, "val": 1, "test": 2}[args.split]
    return params, cfg, splits[ds]


def cmd_eval(args, manifest, out_dir, out=None):
    params, cfg, ds = _checkpoint_splits(args, manifest)
    m = evaluate(params, cfg, ds)
    manifest.update(result=m)
    print(f"{args.split} MAE {m['mae']:.4f}  MSE {m['mse']:.4f}  ({len(ds)} windows)", file=out)
    return 0


def cmd_analyze(args, manifest, out_dir, out=None):
    from numerion.analysis import decomposition_report

    params, cfg, ds = _checkpoint_splits(args, manifest)
    channel = args.channel if args.channel >= 0 else ds.n_channels + args.channel
    rep = decomposition_report(params, cfg, ds, channel, out_dir=out_dir / "analysis",
                               max_windows=args.max_windows)
    for k, v in rep.files.items():
        manifest.artifact(k, v)
    manifest.update(result={"maf_order": rep.maf_order(), "maf_order_ac": rep.maf_order(True)})
    print(rep.format(), file=out)
    print("MAF order (high to low): " + " > ".join(str(s) for s in rep.maf_order()), file=out)
    return 0


def _parse_cases(text: str) -> list[int]:
    cases = []
    for part in text.split(","):
        part = part.strip()
        if not part:
            continue
        if "-" in part and part.replace("-", "").isdigit():
            lo, hi = (int(v) for v in part.split("-"))
            cases.extend(range(lo, hi + 1))
        else:
            cases.append(resolve_case(part))
    for c in cases:
        resolve_case(c)
    return cases


def cmd_ablate(args, manifest, out_dir, out=None):
    cfg, tcfg = model_config(args), train_config(args)
    cases = _parse_cases(args.cases)
    manifest.update(model_config=cfg.to_dict(), train_config=tcfg.to_dict(), cases=cases)
    _, splits = _load_splits(args, cfg.lookback, cfg.horizon, manifest)
    cfg.channels = splits[0].n_channels

    def on_case(case, m):
        print(f"case {case:2d}: test MAE {m['mae']:.4f}  MSE {m['mse']:.4f}  "
              f"({m['epochs']} epochs, {m['seconds']:.0f}s)", file=out)

    rows = run_ablation(cases, cfg, tcfg, splits, callback=on_case)
    path = out_dir / "ablation.csv"
    with path.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["case", "name", "mse", "delta_mse_pct", "mae", "delta_mae_pct", "epochs", "seconds"])
        for r in rows:
            w.writerow([r.case, r.name, r.mse, r.delta_mse_pct, r.mae, r.delta_mae_pct, r.epochs,
                        round(r.seconds, 1)])
    manifest.artifact("ablation", path)
    print(format_ablation(rows), file=out)
    return 0


def cmd_synth(args, out=None):
    freqs = None
    if args.frequencies:
        freqs = [float(v) for v in args.frequencies.split(",")]
    table = synthetic(args.kind, args.rows, args.channels, args.seed, frequencies=freqs, noise=args.noise)
    path = Path(args.out or Path(os.environ.get("NUMERION_OUT_DIR") or DEFAULT_OUT) / f"{args.kind}.csv")
    write_csv(table, path)
    meta_path = path.with_suffix(".json")
    meta_path.write_text(json.dumps(table.metadata, indent=2))
    print(f"wrote {path} ({table.rows} rows, {table.n_channels} channels)", file=out)
    return 0


RUNNERS = {"train": cmd_train, "eval": cmd_eval, "analyze": cmd_analyze, "ablate": cmd_ablate}


def run_cli(argv=None) -> int:
    argv = sys.argv[1:] if argv is None else list(argv)
    parser = build_parser()
    try:
        args = _apply_config_file(parser, argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    except UsageError as exc:
        parser.print_usage(sys.stderr)
        print(f"numerion: error: {exc}", file=sys.stderr)
        return 2
    except (OSError, DataError) as exc:
        print(f"numerion: error: {exc}", file=sys.stderr)
        return 1
    logging.basicConfig(level=logging.INFO if getattr(args, "verbose", False) else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.command == "rules":
            return cmd_rules(args)
        if args.command == "gradcheck":
            return cmd_gradcheck(args)
        if args.command == "synth":
            return cmd_synth(args)
    except (ValueError, OSError) as exc:
        print(f"numerion: error: {exc}", file=sys.stderr)
        return 1
    return _run_with_manifest(args, argv, parser)


def _run_with_manifest(args, argv, parser) -> int:
    from threadpoolctl import threadpool_limits

    if args.threads < 1:
        parser.print_usage(sys.stderr)
        print("numerion: error: --threads must be >= 1", file=sys.stderr)
        return 2
    try:
        out_dir = _out_dir(args)
    except OSError as exc:
        print(f"numerion: error: cannot create output directory: {exc}", file=sys.stderr)
        return 1
    manifest = Manifest(out_dir / f"{args.command}_manifest.json", args.command, argv)
    manifest.update(effective_args={k: v for k, v in vars(args).items() if k != "command"},
                    threads=args.threads)
    try:
        with threadpool_limits(limits=args.threads):
            code = RUNNERS[args.command](args, manifest, out_dir)
    except UsageError as exc:
        manifest.finish("usage-error", str(exc))
        parser.print_usage(sys.stderr)
        print(f"numerion: error: {exc}", file=sys.stderr)
        return 2
    except (DataError, TrainingError, ValueError, KeyError, OSError) as exc:
        msg = str(exc.args[0]) if isinstance(exc, KeyError) and exc.args else str(exc)
        manifest.finish("error", msg)
        print(f"numerion: error: {msg}", file=sys.stderr)
        return 1
    except KeyboardInterrupt:
        manifest.finish("interrupted")
        print("numerion: interrupted", file=sys.stderr)
        return 130
    manifest.finish("ok" if code == 0 else "failed")
    return code


def main() -> None:
    sys.exit(run_cli())


if __name__ == "__main__":
    main()
