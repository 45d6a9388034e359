"""``miaudit`` command line.

Exit codes: 0 success, 2 configuration error, 3 data/validation error,
4 training divergence, 5 insufficient knowledge.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from miaudit import __version__
from miaudit.attacks import AttackScoreSet
from miaudit.calibrate import CalibrationResult
from miaudit.dataspec import write_jsonl
from miaudit.errors import ConfigurationError, MiauditError
from miaudit.pipeline.io import emit_report, export_predictions, import_predictions
from miaudit.pipeline.manifest import ExperimentManifest, load_manifest
from miaudit.pipeline.runner import (
    SWEEP_AXES,
    ReportBundle,
    Session,
    audit_predictions,
    run_experiment,
    run_sweep,
    run_unlearning_audit,
)
from miaudit.models import generalization_gap

log = logging.getLogger("miaudit")


def _manifest(args) -> ExperimentManifest:
    m = load_manifest(args.manifest) if args.manifest else ExperimentManifest().validate()
    if args.seed is not None:
        m = m.with_seed(args.seed)
    if args.workers is not None:
        m = m.replace(workers=args.workers)
    return m


def _out(args) -> Path:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _write(path: Path, text: str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(text, encoding="utf-8")


def _dump(obj) -> str:
    return json.dumps(obj, sort_keys=True, indent=1) + "\n"


def cmd_generate_data(args):
    sess = Session(_manifest(args))
    out = _out(args) / "data"
    p = sess.prepared
    parts = dict(p.bundle.principal(), eval_members=p.eval_members, eval_nonmembers=p.eval_nonmembers)
    for name, ds in parts.items():
        out.mkdir(parents=True, exist_ok=True)
        write_jsonl(ds, out / f"{name}.jsonl")
    print(f"wrote {len(parts)} splits to {out}")


def cmd_train(args):
    sess = Session(_manifest(args))
    out = _out(args)
    target = sess.target
    _mkdir(out / "models")
    _mkdir(out / "predictions")
    target.save(out / "models" / "target.npz")
    preds = sess.eval_predictions
    export_predictions(preds.with_membership(sess.truth.lookup(preds.sample_ids)).records(),
                       out / "predictions" / "target_eval.jsonl")
    b = sess.prepared.bundle
    _write(out / "model_summary.json", _dump(generalization_gap(target, b.d_train, b.d_test)))
    print(f"trained target model ({target.config.hidden_widths or 'logistic'}) -> {out / 'models' / 'target.npz'}")


def _mkdir(path: Path) -> None:
    path.mkdir(parents=True, exist_ok=True)


def cmd_shadows(args):
    sess = Session(_manifest(args))
    out = _out(args)
    ens = sess.ensemble
    if ens is None:
        print("no listed attack or mode needs shadow models")
        return
    _mkdir(out / "models")
    listing = []
    for i, (model, (sm, sn)) in enumerate(zip(ens.models, ens.splits)):
        model.save(out / "models" / f"shadow_{i}.npz")
        listing.append({"index": i, "members": sm.sample_ids.tolist(), "nonmembers": sn.sample_ids.tolist()})
    _write(out / "shadows.json", _dump(listing))
    print(f"trained {len(ens)} shadow models -> {out / 'models'}")


def cmd_attack(args):
    sess = Session(_manifest(args))
    out = _out(args) / "scores"
    _mkdir(out)
    failed = 0
    for name, s in sess.scores().items():
        if isinstance(s, AttackScoreSet):
            s.to_jsonl(out / f"{name}.jsonl")
        else:
            failed += 1
            print(f"{name}: {s['type']}: {s['message']}", file=sys.stderr)
    print(f"wrote {len(sess.m.attacks) - failed} score sets to {out}")


def cmd_calibrate(args):
    sess = Session(_manifest(args))
    out = _out(args) / "calibration"
    _mkdir(out)
    for (name, mode), cal in sorted(sess.calibrations().items()):
        if isinstance(cal, CalibrationResult):
            _write(out / f"{name}_{mode}.json", cal.to_json() + "\n")
        else:
            print(f"{name}/{mode}: {cal['type']}: {cal['message']}", file=sys.stderr)
    print(f"wrote calibrations to {out}")


def cmd_evaluate(args):
    bundle = Session(_manifest(args)).bundle()
    out = _out(args)
    _write(out / "bundle.json", bundle.to_json())
    _print_table(bundle)


def cmd_report(args):
    out = _out(args)
    src = Path(args.bundle) if args.bundle else out / "bundle.json"
    if src.exists():
        bundle = ReportBundle.from_dict(json.loads(src.read_text(encoding="utf-8")))
    else:
        bundle = run_experiment(_manifest(args))
    files = emit_report(bundle, args.format, out / "report")
    print("\n".join(files))


def cmd_run(args):
    bundle = run_experiment(_manifest(args))
    out = _out(args)
    _write(out / "bundle.json", bundle.to_json())
    for fmt in ("csv", "json"):
        emit_report(bundle, fmt, out / "report")
    _print_table(bundle)


def _parse_value(axis, raw):
    return raw if axis == "capacity_preset" else (int(raw) if axis == "epochs" else float(raw))


def cmd_sweep(args):
    m = _manifest(args)
    values = [_parse_value(args.axis, v.strip()) for v in args.values.split(",") if v.strip()]
    bundles = run_sweep(m, args.axis, values, include_quantile=args.include_quantile)
    out = _out(args)
    rows = []
    for v, b in zip(values, bundles):
        emit_report(b, "csv", out / "report")
        _write(out / "bundles" / f"{b.scenario}.json", b.to_json())
        gap = b.model_summary["target"]["acc_gap"]
        rows.append(f"{args.axis}={v}\tacc_gap={gap:.4f}")
    print("\n".join(rows))


def cmd_unlearn_audit(args):
    bundle = run_unlearning_audit(_manifest(args))
    out = _out(args)
    _write(out / "bundle.json", bundle.to_json())
    files = emit_report(bundle, "csv", out / "report")
    print("\n".join(files))


def cmd_import_predictions(args):
    records = import_predictions(args.path)
    print(f"{len(records)} valid prediction records from {args.path}")
    if all(r.membership is not None for r in records):
        bundle = audit_predictions(records, name=Path(args.path).stem)
        files = emit_report(bundle, "csv", _out(args) / "report")
        _print_table(bundle)
        print("\n".join(files))


def _print_table(bundle: ReportBundle) -> None:
    for (attack, mode), c in sorted(bundle.cells.items()):
        if isinstance(c, dict):
            print(f"{attack:20s} {mode:7s} ERROR {c['type']}: {c['message']}")
        else:
            print(f"{attack:20s} {mode:7s} BA={c.balanced_accuracy:.4f}")


COMMANDS = {
    "generate-data": (cmd_generate_data, "generate and split the synthetic dataset"),
    "train": (cmd_train, "train the target model"),
    "shadows": (cmd_shadows, "train the shadow ensemble"),
    "attack": (cmd_attack, "score the evaluation set with every listed attack"),
    "calibrate": (cmd_calibrate, "calibrate thresholds per attack and mode"),
    "evaluate": (cmd_evaluate, "compute metrics and write bundle.json"),
    "report": (cmd_report, "emit CSV/JSON reports from bundle.json"),
    "run": (cmd_run, "full pipeline: data to reports"),
    "sweep": (cmd_sweep, "run one scenario axis over several values"),
    "unlearn-audit": (cmd_unlearn_audit, "fixed-data and fixed-model unlearning audit"),
    "import-predictions": (cmd_import_predictions, "validate (and audit) an external prediction file"),
}


def _global_flags(suppress: bool) -> argparse.ArgumentParser:
    # the flags are accepted before or after the subcommand; the subcommand copy must not reset defaults
    def d(value):
        return argparse.SUPPRESS if suppress else value

    p = argparse.ArgumentParser(add_help=False)
    p.add_argument("--manifest", metavar="PATH", default=d(None), help="experiment manifest (INI)")
    p.add_argument("--out", metavar="DIR", default=d("miaudit-out"), help="output directory")
    p.add_argument("--seed", type=int, default=d(None), help="override the manifest seed")
    p.add_argument("--workers", type=int, default=d(None), help="worker threads")
    p.add_argument("-v", "--verbose", action="store_true", default=d(False))
    return p


def build_parser() -> argparse.ArgumentParser:
    common = _global_flags(suppress=True)
    parser = argparse.ArgumentParser(prog="miaudit", description="Membership inference auditing toolkit.",
                                     parents=[_global_flags(suppress=False)])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, (fn, help_) in COMMANDS.items():
        p = sub.add_parser(name, help=help_, parents=[common])
        p.set_defaults(func=fn)
        if name == "report":
            p.add_argument("--format", choices=("csv", "json"), default="csv")
            p.add_argument("--bundle", metavar="PATH", help="bundle JSON (default: OUT/bundle.json)")
        elif name == "sweep":
            p.add_argument("--axis", choices=SWEEP_AXES, required=True)
            p.add_argument("--values", required=True, help="comma-separated axis values")
            p.add_argument("--include-quantile", action="store_true")
        elif name == "import-predictions":
            p.add_argument("path")
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        args.func(args)
    except MiauditError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return getattr(exc, "exit_code", 1)
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return ConfigurationError.exit_code
    return 0


if __name__ == "__main__":
    sys.exit(main())
