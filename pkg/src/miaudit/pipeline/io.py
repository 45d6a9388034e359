"""Prediction interchange files and report emission."""
from __future__ import annotations

import csv
import io
import json
import math
from pathlib import Path

from miaudit.errors import DataValidationError, MiauditError
from miaudit.models import PredictionRecord

NORMALIZATION_TOL = 1e-6
_FIELDS = ("sample_id", "label", "posterior", "member", "model_tag")


def _g17(x: float) -> str:
    return format(float(x), ".17g")


def export_predictions(records, path) -> None:
    """One JSON object per record, floats with 17 significant digits."""
    lines = []
    for r in records:
        post = ", ".join(_g17(v) for v in r.posterior)
        member = "null" if r.membership is None else ("true" if r.membership else "false")
        lines.append(
            f'{{"sample_id": {int(r.sample_id)}, "label": {int(r.true_label)}, "posterior": [{post}], '
            f'"member": {member}, "model_tag": {json.dumps(r.model_tag)}}}\n'
        )
    try:
        Path(path).write_text("".join(lines), encoding="utf-8")
    except OSError as exc:
        raise MiauditError(f"cannot write {path}: {exc}") from None


def _record(obj, lineno: int) -> PredictionRecord:
    where = f"line {lineno}"
    if not isinstance(obj, dict):
        raise DataValidationError(f"{where}: expected a JSON object")
    missing = [k for k in ("sample_id", "label", "posterior") if k not in obj]
    if missing:
        raise DataValidationError(f"{where}: missing field(s) {', '.join(missing)}")
    extra = sorted(set(obj) - set(_FIELDS))
    if extra:
        raise DataValidationError(f"{where}: unknown field(s) {', '.join(extra)}")
    sid, label, post = obj["sample_id"], obj["label"], obj["posterior"]
    if not isinstance(sid, int) or isinstance(sid, bool):
        raise DataValidationError(f"{where}: sample_id must be an integer")
    where = f"line {lineno} (sample_id {sid})"
    if not isinstance(label, int) or isinstance(label, bool):
        raise DataValidationError(f"{where}: label must be an integer")
    if not isinstance(post, list) or not post or not all(isinstance(v, (int, float)) and not isinstance(v, bool) for v in post):
        raise DataValidationError(f"{where}: posterior must be a non-empty array of numbers")
    post = tuple(float(v) for v in post)
    if any(not math.isfinite(v) or v < 0 for v in post):
        raise DataValidationError(f"{where}: posterior entries must be finite and non-negative")
    total = math.fsum(post)
    if abs(total - 1.0) > NORMALIZATION_TOL:
        raise DataValidationError(f"{where}: posterior sums to {total!r}, not 1 within {NORMALIZATION_TOL}")
    if not 0 <= label < len(post):
        raise DataValidationError(f"{where}: label {label} outside the posterior's {len(post)} classes")
    member = obj.get("member")
    if member is not None and not isinstance(member, bool):
        raise DataValidationError(f"{where}: member must be true, false or null")
    tag = obj.get("model_tag", "external")
    if not isinstance(tag, str):
        raise DataValidationError(f"{where}: model_tag must be a string")
    return PredictionRecord(sid, label, post, member, tag)


def import_predictions(path) -> list[PredictionRecord]:
    """Parse and validate a prediction JSON-lines file; errors name the line (and sample)."""
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise DataValidationError(f"cannot read {path}: {exc}") from None
    out, seen, width = [], set(), None
    for lineno, line in enumerate(text.splitlines(), 1):
        if not line.strip():
            continue
        try:
            obj = json.loads(line)
        except json.JSONDecodeError as exc:
            raise DataValidationError(f"line {lineno}: malformed JSON ({exc.msg})") from None
        rec = _record(obj, lineno)
        if rec.sample_id in seen:
            raise DataValidationError(f"line {lineno}: duplicate sample_id {rec.sample_id}")
        if width is not None and len(rec.posterior) != width:
            raise DataValidationError(f"line {lineno} (sample_id {rec.sample_id}): posterior length {len(rec.posterior)} != {width}")
        seen.add(rec.sample_id)
        width = len(rec.posterior)
        out.append(rec)
    if not out:
        raise DataValidationError(f"{path}: no prediction records")
    return out


# -- reports ----------------------------------------------------------------

def _f4(x) -> str:
    if isinstance(x, str):
        return x
    if x is None:
        return "NA"
    return format(float(x), ".4f")


def _rate_key(x: float) -> str:
    return format(float(x), "g")


def _csv_text(header, rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    w.writerows(rows)
    return buf.getvalue()


def _cell_row(bundle, attack, mode, alphas, betas):
    c = bundle.cells[(attack, mode)]
    if isinstance(c, dict):
        return [attack, mode, "ERROR"] + ["ERROR"] * (len(alphas) + len(betas)) + [c.get("type", ""), c.get("message", "")]
    return ([attack, mode, _f4(c.balanced_accuracy)]
            + [_f4(c.tpr_at_fpr[a]) for a in alphas] + [_f4(c.tnr_at_fnr[b]) for b in betas] + ["", ""])


def report_files(bundle, fmt: str = "csv") -> dict:
    """Relative path -> file contents for one bundle (pure, so re-emission is byte-stable)."""
    if fmt not in ("csv", "json"):
        raise MiauditError(f"unknown report format {fmt!r}")
    root = bundle.scenario
    files = {}
    files[f"{root}/summary.json"] = json.dumps(
        {"scenario": bundle.scenario, "model_summary": bundle.to_dict()["model_summary"],
         "provenance": bundle.to_dict()["provenance"], "sections": bundle.to_dict()["sections"],
         "trace": bundle.trace}, sort_keys=True, indent=1) + "\n"
    if fmt == "json":
        files[f"{root}/bundle.json"] = bundle.to_json()
        return files
    keys = sorted(bundle.cells)
    alphas = betas = ()
    for k in keys:
        c = bundle.cells[k]
        if not isinstance(c, dict):
            alphas, betas = sorted(c.tpr_at_fpr), sorted(c.tnr_at_fnr)
            break
    header = (["attack", "mode", "balanced_accuracy"] + [f"tpr@fpr={_rate_key(a)}" for a in alphas]
              + [f"tnr@fnr={_rate_key(b)}" for b in betas] + ["error_type", "error_message"])
    if keys:
        files.update(_cell_files(bundle, keys, header, alphas, betas))
    if bundle.sections.get("fixed_data"):
        files[f"{root}/fixed_data.csv"] = _fixed_data_csv(bundle.sections["fixed_data"])
        files[f"{root}/fixed_model.csv"] = _fixed_model_csv(bundle.sections["fixed_model"])
    return files


def _cell_files(bundle, keys, header, alphas, betas) -> dict:
    root, files = bundle.scenario, {}
    rows = [_cell_row(bundle, a, m, alphas, betas) for a, m in keys]
    files[f"{root}/report.csv"] = _csv_text(header, rows)
    for (a, m), row in zip(keys, rows):
        files[f"{root}/{a}_{m}.csv"] = _csv_text(header, [row])
    # wide table: one row per attack, one column per mode
    modes = [m for m in ("audit", "attack") if any(k[1] == m for k in keys)]
    attacks = sorted({a for a, _ in keys})
    wide = []
    for a in attacks:
        row = [a]
        for m in modes:
            c = bundle.cells.get((a, m))
            row.append("ERROR" if c is None or isinstance(c, dict) else _f4(c.balanced_accuracy))
        if "audit" in modes and "attack" in modes and bundle.ok(a, "audit") and bundle.ok(a, "attack"):
            row.append(_f4(bundle.cells[(a, "audit")].balanced_accuracy - bundle.cells[(a, "attack")].balanced_accuracy))
        elif "audit" in modes and "attack" in modes:
            row.append("ERROR")
        wide.append(row)
    gap = ["audit_attack_gap"] if "audit" in modes and "attack" in modes else []
    files[f"{root}/table.csv"] = _csv_text(["attack"] + [f"{m}_balanced_accuracy" for m in modes] + gap, wide)
    for a in attacks:
        det_rows = []
        for m in modes:
            c = bundle.cells.get((a, m))
            if c is None or isinstance(c, dict):
                continue
            det_rows = [[_f4(fpr), _f4(fnr)] for fpr, fnr in c.det_points]
            break
        if det_rows:
            files[f"{root}/det/{a}.csv"] = _csv_text(["fpr", "fnr"], det_rows)
    return files


def _fixed_data_csv(section: dict) -> str:
    rows = []
    for a, d in sorted(section.items()):
        if "accuracy" in d:
            rows.append([a, _f4(d["accuracy"]), _f4(d["tpr"]), _f4(d["tnr"]), ""])
        else:
            rows.append([a, "NA", "NA", "NA", d.get("inapplicable") or d["error"]["message"]])
    return _csv_text(["attack", "accuracy", "tpr", "tnr", "note"], rows)


def _fixed_model_csv(section: dict) -> str:
    rows = []
    for a, d in sorted(section.items()):
        if "methods" not in d:
            rows.append([a, "NA", "NA", "NA", d.get("inapplicable") or d["error"]["message"]])
            continue
        for method, r in sorted(d["methods"].items()):
            rows.append([a, method, _f4(r["balanced_accuracy"]), _f4(r["opt_indis"]), ""])
    return _csv_text(["attack", "method", "balanced_accuracy", "opt_indis", "note"], rows)


def emit_report(bundle, fmt: str, out_dir) -> list[str]:
    """Write the bundle's report files under ``out_dir``; returns the sorted relative paths."""
    files = report_files(bundle, fmt)
    out_dir = Path(out_dir)
    for rel, text in sorted(files.items()):
        path = out_dir / rel
        try:
            path.parent.mkdir(parents=True, exist_ok=True)
            path.write_text(text, encoding="utf-8")
        except OSError as exc:
            raise MiauditError(f"cannot write report file {path}: {exc}") from None
    return sorted(files)
