"""Command-line entry point: generate | preprocess | train | eval | ablate | bench.

Exit codes: 0 success, 1 usage error, 2 data error, 3 runtime error.
Every command takes ``--seed`` (default: $STARGRAPH_SEED, else 0) and an
optional ``--config`` JSON file; explicit flags override the file, which
overrides built-in defaults.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
import tempfile
from dataclasses import replace
from pathlib import Path

from . import bench, data
from .graph import CenterKind, CenterMode, GraphSpec, GraphType, build_sequence
from .model import DdgnnConfig, DdgnnModel, adam_from_checkpoint, load_checkpoint, save_checkpoint
from .pointcloud import DEFAULT_EPS, DEFAULT_MIN_PTS, RangeBounds, preprocess_sequence
from .train import evaluate, train, write_log_csv

log = logging.getLogger("stargraph")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_RUNTIME = 0, 1, 2, 3

DEFAULTS = {
    "spec": "synth4",
    "n_per_class": 75,
    "graph": "dstar",
    "k": 5,
    "r": 0.5,
    "center": "0,1,0",
    "fc_dim": 64,
    "gcn_dims": "32,16",
    "lstm_hidden": 64,
    "dropout": 0.3,
    "lr": 1e-3,
    "max_epochs": 200,
    "validate_every": 5,
    "patience": 10,
    "final_activation": True,
    "train_subjects": "1,2,3,4",
    "val_subjects": "5",
    "test_subjects": "6",
    "preprocess": False,
    "bounds": "0.5,5,-1.2,6.5,-1,2.5",
    "eps": DEFAULT_EPS,
    "min_pts": DEFAULT_MIN_PTS,
    "types": "dstar,ustar,empty,knn,radius,fc",
    "grid": "64,128,256,512,1024,2048,4096",
    "reps": 20,
    "latency_reps": 3,
}


class UsageError(Exception):
    pass


class DataError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _ints(text: str) -> list[int]:
    try:
        return [int(v) for v in str(text).split(",") if v.strip()]
    except ValueError:
        raise UsageError(f"expected comma-separated integers, got {text!r}") from None


def _floats(text: str, count: int | None = None) -> list[float]:
    try:
        vals = [float(v) for v in str(text).split(",") if v.strip()]
    except ValueError:
        raise UsageError(f"expected comma-separated numbers, got {text!r}") from None
    if count is not None and len(vals) != count:
        raise UsageError(f"expected {count} numbers, got {text!r}")
    return vals


def _default_seed() -> int:
    env = os.environ.get("STARGRAPH_SEED")
    if env is None:
        return 0
    try:
        return int(env)
    except ValueError:
        raise UsageError(f"STARGRAPH_SEED must be an integer, got {env!r}") from None


def resolve(args: argparse.Namespace) -> dict:
    """Merge defaults < --config file < explicit flags."""
    cfg = dict(DEFAULTS)
    cfg["seed"] = _default_seed()
    if getattr(args, "config", None):
        try:
            cfg.update(json.loads(Path(args.config).read_text()))
        except (OSError, json.JSONDecodeError) as exc:
            raise UsageError(f"cannot read --config {args.config}: {exc}") from None
    for key, value in vars(args).items():
        if value is not None and key not in ("func", "config"):
            cfg[key] = value
    return cfg


def graph_spec_from(cfg: dict) -> GraphSpec:
    try:
        kind = GraphType(cfg["graph"])
    except ValueError:
        valid = ", ".join(t.value for t in GraphType)
        raise UsageError(f"unknown graph type {cfg['graph']!r}; valid types: {valid}") from None
    center = str(cfg["center"]).strip().lower()
    if center in (CenterKind.MEAN.value, CenterKind.ZERO.value):
        mode = CenterMode(CenterKind(center))
    elif center == CenterKind.STATIC.value:
        mode = CenterMode()
    else:
        mode = CenterMode(CenterKind.STATIC, tuple(_floats(center, 3)))
    try:
        return GraphSpec(kind, int(cfg["k"]), float(cfg["r"]), mode)
    except ValueError as exc:
        raise UsageError(str(exc)) from None


def model_config_from(cfg: dict, classes: int, seq_len: int) -> DdgnnConfig:
    try:
        return DdgnnConfig(
            class_count=classes, seq_len=seq_len, fc_dim=int(cfg["fc_dim"]),
            gcn_dims=tuple(_ints(cfg["gcn_dims"])), lstm_hidden=int(cfg["lstm_hidden"]),
            dropout_rate=float(cfg["dropout"]), final_activation=bool(cfg["final_activation"]),
            lr=float(cfg["lr"]), seed=int(cfg["seed"]), validate_every=int(cfg["validate_every"]),
            patience=int(cfg["patience"]), max_epochs=int(cfg["max_epochs"]),
        )
    except ValueError as exc:
        raise UsageError(str(exc)) from None


def _load(path) -> data.Dataset:
    try:
        return data.load(path)
    except FileNotFoundError:
        raise DataError(f"dataset not found: {path}") from None
    except data.DatasetFormatError as exc:
        raise DataError(f"{path}: {exc}") from None


def _maybe_preprocess(ds: data.Dataset, cfg: dict) -> data.Dataset:
    if not cfg["preprocess"]:
        return ds
    try:
        bounds = RangeBounds(*_floats(cfg["bounds"], 6))
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    out = data.Dataset(ds.seq_len, ds.classes)
    out.sequences = [preprocess_sequence(s, bounds, float(cfg["eps"]), int(cfg["min_pts"])) for s in ds]
    return out


def _split(ds: data.Dataset, cfg: dict):
    try:
        parts = data.split_by_subject(ds, _ints(cfg["train_subjects"]), _ints(cfg["val_subjects"]),
                                      _ints(cfg["test_subjects"]))
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    for name, part in zip(("train", "val"), parts):
        if not len(part):
            raise DataError(f"{name} split is empty; check the subject flags against {ds.subjects()}")
    return parts


def _graphs(ds: data.Dataset, spec: GraphSpec):
    return [build_sequence(s, spec) for s in ds]


def _outdir(cfg: dict) -> Path:
    out = Path(cfg["out"])
    out.mkdir(parents=True, exist_ok=True)
    return out


def _write_config(out: Path, cfg: dict) -> None:
    (out / "config.json").write_text(json.dumps(cfg, indent=2, sort_keys=True))


def _header(cfg: dict) -> str:
    return "config: " + json.dumps(cfg, sort_keys=True)


# -- commands ----------------------------------------------------------------------

def cmd_generate(cfg: dict) -> int:
    name = cfg["spec"]
    try:
        if name in data.BUILTIN_SPECS:
            spec = data.BUILTIN_SPECS[name]()
        else:
            spec = data.SynthSpec.from_dict(json.loads(Path(name).read_text()))
        ds = data.synth_generate(spec, int(cfg["n_per_class"]), int(cfg["seed"]))
    except FileNotFoundError:
        raise DataError(f"spec file not found: {name}") from None
    except (ValueError, TypeError, KeyError) as exc:
        raise DataError(f"invalid synthetic spec {name!r}: {exc}") from None
    out = Path(cfg["out"])
    out.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=out.parent, prefix=out.name + ".", suffix=".part" + "".join(out.suffixes[-1:]))
    os.close(fd)
    try:
        data.save(ds, tmp, meta={"config": cfg})
        os.replace(tmp, out)
    finally:
        if os.path.exists(tmp):
            os.unlink(tmp)
    frames = sum(len(s) for s in ds)
    print(f"wrote {out}: {ds.classes} classes, {len(ds)} sequences, {frames} frames, subjects {ds.subjects()}")
    return EXIT_OK


def cmd_preprocess(cfg: dict) -> int:
    ds = _load(cfg["dataset"])
    cfg = dict(cfg, preprocess=True)
    out = _maybe_preprocess(ds, cfg)
    data.save(out, cfg["out"], meta={"config": cfg})
    before = sum(len(f) for s in ds for f in s.frames)
    after = sum(len(f) for s in out for f in s.frames)
    print(f"wrote {cfg['out']}: {len(out)} sequences, points {before} -> {after}")
    return EXIT_OK


def cmd_train(cfg: dict) -> int:
    ds = _maybe_preprocess(_load(cfg["dataset"]), cfg)
    spec = graph_spec_from(cfg)
    mcfg = model_config_from(cfg, ds.classes, ds.seq_len)
    tr, va, te = _split(ds, cfg)
    out = _outdir(cfg)
    _write_config(out, cfg)
    model = DdgnnModel(mcfg)
    result = train(model, _graphs(tr, spec), _graphs(va, spec))
    save_checkpoint(model, out / "checkpoint.json", spec, result.adam, extra={"run_config": cfg})
    write_log_csv(result.log, out / "train_log.csv", _header(cfg))
    report = evaluate(model, _graphs(va, spec))
    report.write_json(out / "eval.json", {"split": "val", "config": cfg})
    report.write_confusion_csv(out / "confusion.csv", _header(cfg))
    msg = f"best val acc {result.best_val_acc:.4f} at epoch {result.best_epoch} ({result.epochs_run} epochs run)"
    if len(te):
        test = evaluate(model, _graphs(te, spec))
        test.write_json(out / "eval_test.json", {"split": "test", "config": cfg})
        msg += f"; test acc {test.overall_accuracy:.4f}"
    print(msg)
    return EXIT_OK


def _checkpoint(path):
    try:
        return load_checkpoint(path)
    except FileNotFoundError:
        raise DataError(f"checkpoint not found: {path}") from None
    except (ValueError, KeyError) as exc:
        raise DataError(f"bad checkpoint {path}: {exc}") from None


def cmd_eval(cfg: dict, explicit_graph: bool) -> int:
    model, doc = _checkpoint(cfg["checkpoint"])
    recorded = GraphSpec.from_dict(doc["graph"]) if doc.get("graph") else None
    if explicit_graph:
        spec = graph_spec_from(cfg)
        if recorded is not None and recorded != spec:
            log.warning("checkpoint was trained with %s; evaluating with explicit override %s",
                        recorded.to_dict(), spec.to_dict())
    elif recorded is not None:
        spec = recorded
    else:
        spec = graph_spec_from(cfg)
    ds = _maybe_preprocess(_load(cfg["dataset"]), cfg)
    if ds.classes != model.config.class_count or ds.seq_len != model.config.seq_len:
        raise DataError(f"dataset ({ds.classes} classes, N={ds.seq_len}) does not match the checkpoint "
                        f"({model.config.class_count} classes, N={model.config.seq_len})")
    if cfg.get("subjects"):
        keep = set(_ints(cfg["subjects"]))
        ds.sequences = [s for s in ds if s.subject_id in keep]
    if not len(ds):
        raise DataError("no sequences to evaluate")
    out = _outdir(cfg)
    cfg = dict(cfg, graph_resolved=spec.to_dict())
    report = evaluate(model, _graphs(ds, spec))
    report.write_json(out / "eval.json", {"config": cfg})
    report.write_confusion_csv(cfg.get("confusion_csv") or out / "confusion.csv", _header(cfg))
    print(f"accuracy {report.overall_accuracy:.4f} on {len(ds)} sequences, "
          f"avg inference {report.avg_inference_ms:.2f} ms")
    return EXIT_OK


ABLATION_COLUMNS = ["graph", "center", "k", "r", "seed", "epochs_run", "best_epoch", "best_val_acc",
                    "test_acc", "avg_inference_ms"]


def ablation_configs(base: GraphSpec) -> list[GraphSpec]:
    specs = []
    for kind in (GraphType.DSTAR, GraphType.USTAR):
        for mode in (CenterMode(CenterKind.STATIC, base.center.point), CenterMode(CenterKind.MEAN),
                     CenterMode(CenterKind.ZERO)):
            specs.append(GraphSpec(kind, base.k, base.r, mode))
    for kind in (GraphType.KNN, GraphType.RADIUS, GraphType.FC, GraphType.EMPTY):
        specs.append(GraphSpec(kind, base.k, base.r))
    return specs


def cmd_ablate(cfg: dict) -> int:
    import csv

    ds = _maybe_preprocess(_load(cfg["dataset"]), cfg)
    tr, va, te = _split(ds, cfg)
    base = graph_spec_from(cfg)
    mcfg = model_config_from(cfg, ds.classes, ds.seq_len)
    out = _outdir(cfg)
    _write_config(out, cfg)
    rows = []
    for spec in ablation_configs(base):
        model = DdgnnModel(replace(mcfg))
        result = train(model, _graphs(tr, spec), _graphs(va, spec))
        test_set = te if len(te) else va
        report = evaluate(model, _graphs(test_set, spec))
        center = spec.center.kind.value if spec.kind.is_star else ""
        rows.append({
            "graph": spec.kind.value, "center": center,
            "k": spec.k if spec.kind is GraphType.KNN else "",
            "r": spec.r if spec.kind is GraphType.RADIUS else "",
            "seed": mcfg.seed, "epochs_run": result.epochs_run, "best_epoch": result.best_epoch,
            "best_val_acc": result.best_val_acc, "test_acc": report.overall_accuracy,
            "avg_inference_ms": report.avg_inference_ms,
        })
        log.info("ablation %s/%s: test acc %.4f", spec.kind.value, center or "-", report.overall_accuracy)
    with open(out / "ablation.csv", "w", newline="") as fh:
        fh.write(f"# {_header(cfg)}\n")
        w = csv.DictWriter(fh, fieldnames=ABLATION_COLUMNS)
        w.writeheader()
        w.writerows(rows)
    dstar = next(r for r in rows if r["graph"] == "dstar" and r["center"] == "static")
    fc = next(r for r in rows if r["graph"] == "fc")
    log.info("dstar test acc %.4f vs fc %.4f (%s)", dstar["test_acc"], fc["test_acc"],
             "expected order" if dstar["test_acc"] >= fc["test_acc"] else "unexpected order")
    print(f"wrote {out / 'ablation.csv'} ({len(rows)} configurations)")
    return EXIT_OK


def cmd_bench(cfg: dict) -> int:
    out = _outdir(cfg)
    _write_config(out, cfg)
    base = graph_spec_from(cfg)
    grid = _ints(cfg["grid"])
    reports = []
    for name in str(cfg["types"]).split(","):
        spec = graph_spec_from(dict(cfg, graph=name.strip()))
        spec = GraphSpec(spec.kind, base.k, base.r, base.center)
        try:
            rep = bench.time_construction(spec, grid, int(cfg["reps"]), int(cfg["seed"]))
        except ValueError as exc:
            raise UsageError(str(exc)) from None
        reports.append(rep)
        print(f"{rep.graph_type:7s} slope {rep.slope:.3f}  95% CI [{rep.slope_ci[0]:.3f}, {rep.slope_ci[1]:.3f}]"
              + (f"  dropped {rep.dropped}" if rep.dropped else ""))
    bench.write_scaling(reports, out / "scaling.json", out / "scaling.csv", out / "scaling.tsv", cfg)
    if cfg.get("checkpoint") and cfg.get("dataset"):
        model, doc = _checkpoint(cfg["checkpoint"])
        spec = GraphSpec.from_dict(doc["graph"]) if doc.get("graph") else base
        ds = _load(cfg["dataset"])
        lat = bench.time_inference(model, _graphs(ds, spec), int(cfg["latency_reps"]))
        (out / "latency.json").write_text(json.dumps(
            {"config": cfg, "mean_ms": lat.mean_ms, "p95_ms": lat.p95_ms, "samples_ms": lat.samples_ms}, indent=2))
        print(f"inference latency mean {lat.mean_ms:.2f} ms, p95 {lat.p95_ms:.2f} ms")
    return EXIT_OK


# -- argument parsing --------------------------------------------------------------

def _add_graph_flags(p):
    g = p.add_argument_group("graph")
    g.add_argument("--graph", choices=[t.value for t in GraphType], help="frame graph type (default dstar)")
    g.add_argument("--k", type=int, help="neighbours for knn (default 5)")
    g.add_argument("--r", type=float, help="radius for radius graphs in metres (default 0.5)")
    g.add_argument("--center", help="star centre: x,y,z | static | mean | zero (default 0,1,0)")


def _add_model_flags(p):
    g = p.add_argument_group("model")
    g.add_argument("--fc-dim", type=int)
    g.add_argument("--gcn-dims", help="two comma-separated widths (default 32,16)")
    g.add_argument("--lstm-hidden", type=int, help="hidden units per direction (default 64)")
    g.add_argument("--dropout", type=float)
    g.add_argument("--lr", type=float)
    g.add_argument("--max-epochs", type=int)
    g.add_argument("--validate-every", type=int)
    g.add_argument("--patience", type=int, help="validation rounds without improvement before stopping")
    g.add_argument("--no-final-activation", dest="final_activation", action="store_const", const=False)


def _add_split_flags(p):
    g = p.add_argument_group("split")
    g.add_argument("--train-subjects")
    g.add_argument("--val-subjects")
    g.add_argument("--test-subjects")


def _add_preprocess_flags(p, switch=True):
    g = p.add_argument_group("preprocessing")
    if switch:
        g.add_argument("--preprocess", action="store_const", const=True,
                       help="apply range filter + DBSCAN largest cluster first")
    g.add_argument("--bounds", help="x_min,x_max,y_min,y_max,z_min,z_max")
    g.add_argument("--eps", type=float)
    g.add_argument("--min-pts", type=int)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="stargraph", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def common(p):
        p.add_argument("--seed", type=int)
        p.add_argument("--config", help="JSON file of option overrides")
        p.add_argument("-v", "--verbose", action="store_const", const=True, help="log progress")

    p = sub.add_parser("generate", help="write a synthetic dataset")
    p.add_argument("--spec", help="builtin name (synth4) or spec JSON path")
    p.add_argument("--n-per-class", type=int)
    p.add_argument("--out", required=True, help="output .jsonl or .jsonl.gz")
    common(p)

    p = sub.add_parser("preprocess", help="range filter + DBSCAN every frame")
    p.add_argument("--dataset", required=True)
    p.add_argument("--out", required=True)
    _add_preprocess_flags(p, switch=False)
    common(p)

    p = sub.add_parser("train", help="train a DDGNN")
    p.add_argument("--dataset", required=True)
    p.add_argument("--out", required=True, help="output directory")
    _add_graph_flags(p)
    _add_model_flags(p)
    _add_split_flags(p)
    _add_preprocess_flags(p)
    common(p)

    p = sub.add_parser("eval", help="evaluate a checkpoint")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--dataset", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--subjects", help="only evaluate these subjects")
    p.add_argument("--confusion-csv", help="confusion matrix path (default OUT/confusion.csv)")
    _add_graph_flags(p)
    _add_preprocess_flags(p)
    common(p)

    p = sub.add_parser("ablate", help="train and compare every graph type and centre choice")
    p.add_argument("--dataset", required=True)
    p.add_argument("--out", required=True)
    _add_graph_flags(p)
    _add_model_flags(p)
    _add_split_flags(p)
    _add_preprocess_flags(p)
    common(p)

    p = sub.add_parser("bench", help="graph construction scaling and inference latency")
    p.add_argument("--out", required=True)
    p.add_argument("--types", help="comma-separated graph types")
    p.add_argument("--grid", help="comma-separated frame sizes")
    p.add_argument("--reps", type=int)
    p.add_argument("--checkpoint", help="also time inference with this checkpoint")
    p.add_argument("--dataset", help="sequences for the latency run")
    p.add_argument("--latency-reps", type=int)
    _add_graph_flags(p)
    common(p)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    command = args.command
    explicit_graph = getattr(args, "graph", None) is not None
    del args.command, args.verbose
    try:
        cfg = resolve(args)
        if command == "eval":
            return cmd_eval(cfg, explicit_graph)
        return {"generate": cmd_generate, "preprocess": cmd_preprocess, "train": cmd_train,
                "ablate": cmd_ablate, "bench": cmd_bench}[command](cfg)
    except UsageError as exc:
        print(f"stargraph {command}: usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except DataError as exc:
        print(f"stargraph {command}: data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except Exception as exc:  # noqa: BLE001 - mapped to the runtime exit code
        log.debug("unhandled error", exc_info=True)
        print(f"stargraph {command}: error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
