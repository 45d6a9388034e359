import csv
import json

import pytest

from miaudit.dataspec import DataSpec
from miaudit.errors import ConfigurationError, DataValidationError
from miaudit.models import PredictionRecord, TrainConfig
from miaudit.pipeline import (
    STAGES,
    ExperimentManifest,
    PostTraining,
    ReportBundle,
    Session,
    emit_report,
    export_predictions,
    import_predictions,
    load_manifest,
    parse_manifest,
    report_files,
    run_experiment,
    run_sweep,
    run_unlearning_audit,
)
from miaudit.pipeline.cli import main
from miaudit.pipeline.runner import _sweep_manifest

FEW = ("metric-confidence", "lira", "blindmi-diffbi", "quantile")


@pytest.fixture(scope="module")
def few_manifest():
    return ExperimentManifest(
        name="few", seed=5, data=DataSpec(per_class_count=40, seed=5), attacks=FEW,
        training=TrainConfig(epochs=8, learning_rate=0.05),
    ).validate()


@pytest.fixture(scope="module")
def few_bundle(few_manifest):
    return run_experiment(few_manifest)


class TestManifest:
    def test_ini_round_trip(self, few_manifest):
        back = parse_manifest(few_manifest.to_ini())
        assert back == few_manifest and back.hash() == few_manifest.hash()

    def test_all_expands(self):
        m = parse_manifest("[attacks]\nnames = all\nmodes = audit\n")
        assert len(m.attacks) == 14 and m.modes == ("audit",)

    def test_inline_comments(self):
        m = parse_manifest("[model]\npreset = small   ; fewer parameters\n; whole-line comment\n")
        assert m.model_preset == "small"

    def test_sections_and_types(self):
        m = parse_manifest(
            "[experiment]\nseed = 9\n[data]\nnum_classes = 3\neval_size = 0\n[model]\nhidden_widths = 8, 4\n"
            "[dp]\nclip_norm = 2.0\nnoise_multiplier = 0.5\n[post_training]\nkind = unlearning\n"
            "methods = exact_retrain, none\n"
        )
        assert m.seed == 9 and m.data.seed == 9 and m.eval_size is None
        assert m.model_config().hidden_widths == (8, 4)
        assert m.train_config().dp.noise_multiplier == 0.5
        assert m.post_training.methods == ("exact_retrain", "none")

    @pytest.mark.parametrize("text,needle", [
        ("[data]\nnum_clases = 3\n", "num_clases"),
        ("[extras]\nx = 1\n", "extras"),
        ("[attacks]\nnames = lira, telepathy\n", "telepathy"),
        ("[attacks]\nmodes = sideways\n", "modes"),
        ("[model]\npreset = gigantic\n", "gigantic"),
        ("[data]\nclass_separation = abc\n", "class_separation"),
        ("[training]\nepochs = 2.5\n", "epochs"),
        ("no section header\n", "parse"),
        ("[shadow]\nn = 0\n", "shadow"),
    ])
    def test_errors_name_the_problem(self, text, needle):
        with pytest.raises(ConfigurationError, match=needle):
            parse_manifest(text)

    def test_workers_excluded_from_hash(self, few_manifest):
        assert few_manifest.replace(workers=3).hash() == few_manifest.hash()
        assert few_manifest.with_seed(6).hash() != few_manifest.hash()

    def test_missing_file(self, tmp_path):
        with pytest.raises(ConfigurationError):
            load_manifest(tmp_path / "absent.ini")


class TestRun:
    def test_cells_and_trace(self, few_manifest, few_bundle):
        assert set(few_bundle.cells) == {(a, m) for a in FEW for m in ("audit", "attack")}
        assert not few_bundle.errors()
        assert few_bundle.trace == [s for s in STAGES if s in few_bundle.trace]
        assert few_bundle.trace[:3] == ["generate", "split", "mislabel"]
        assert few_bundle.provenance["attack_mode_truth_reads"] == 0
        assert few_bundle.provenance["manifest_hash"] == few_manifest.hash()

    def test_oracle_dominance(self, few_bundle):
        for a in FEW:
            audit, attack = few_bundle.cell(a, "audit"), few_bundle.cell(a, "attack")
            assert audit.sample_ids == attack.sample_ids
            assert audit.balanced_accuracy >= attack.balanced_accuracy

    def test_json_round_trip(self, few_bundle):
        back = ReportBundle.from_dict(json.loads(few_bundle.to_json()))
        assert back.to_json() == few_bundle.to_json()

    def test_deterministic_across_workers(self, few_manifest, few_bundle):
        assert run_experiment(few_manifest, workers=3).to_json() == few_bundle.to_json()

    def test_failed_cell_is_isolated(self, few_manifest):
        m = few_manifest.replace(n_shadows=2, attacks=("lira", "metric-confidence"))
        b = run_experiment(m)
        err = b.cell("lira", "attack")
        assert err["stage"] == "calibrate" and err["type"] == "InsufficientKnowledgeError"
        assert b.ok("lira", "audit") and b.ok("metric-confidence", "attack")

    def test_eval_sets_are_balanced_and_disjoint(self, few_manifest):
        p = Session(few_manifest).prepared
        assert len(p.eval_members) == len(p.eval_nonmembers)
        assert p.eval_members.id_set() <= p.bundle.d_train.id_set()
        assert p.eval_nonmembers.id_set() <= p.bundle.d_test.id_set()

    def test_stages_run_once(self, few_manifest):
        s = Session(few_manifest.replace(modes=("audit",), attacks=("metric-confidence",)))
        assert s.target is s.target
        s.bundle()
        assert s.trace.count("train_target") == 1
        assert "train_shadows" not in s.trace

    def test_finetune_scenario(self, few_manifest):
        m = few_manifest.replace(attacks=("metric-confidence",), modes=("audit",),
                                 post_training=PostTraining("finetune", pretrain_per_class_count=30, pretrain_epochs=3))
        b = run_experiment(m)
        assert "pretrained" in b.model_summary and b.ok("metric-confidence", "audit")


class TestSweep:
    def test_epoch_checkpoints_equal_direct_runs(self, few_manifest):
        base = few_manifest.replace(attacks=("metric-confidence", "lira"), modes=("audit",))
        sweep = run_sweep(base, "epochs", [2, 4])
        direct = run_experiment(_sweep_manifest(base, "epochs", 4))
        assert sweep[1].to_json() == direct.to_json()
        assert sweep[0].scenario.endswith("epochs=2")

    def test_quantile_excluded_by_default(self, few_manifest):
        base = few_manifest.replace(attacks=("quantile", "metric-confidence"), modes=("audit",))
        (b,) = run_sweep(base, "mislabel_portion", [0.1])
        assert {a for a, _ in b.cells} == {"metric-confidence"}
        (b,) = run_sweep(base, "mislabel_portion", [0.1], include_quantile=True)
        assert ("quantile", "audit") in b.cells

    def test_dp_axis_zero_is_baseline(self, few_manifest):
        assert _sweep_manifest(few_manifest, "dp_noise", 0).dp is None
        assert _sweep_manifest(few_manifest, "dp_noise", 1.5).dp.noise_multiplier == 1.5

    def test_bad_axis(self, few_manifest):
        with pytest.raises(ConfigurationError):
            run_sweep(few_manifest, "temperature", [1])


@pytest.fixture(scope="module")
def unlearn_bundle(few_manifest):
    m = few_manifest.replace(
        attacks=("metric-confidence", "lira", "blindmi-diffw"), modes=("audit",),
        post_training=PostTraining("unlearning", methods=("finetune_retain", "exact_retrain", "none"), unlearn_epochs=2),
    )
    return run_unlearning_audit(m)


class TestUnlearning:
    def test_exact_retrain_is_indistinguishable(self, unlearn_bundle):
        for name, section in unlearn_bundle.sections["fixed_model"].items():
            assert section["methods"]["exact_retrain"]["opt_indis"] == 0.0, name

    def test_fixed_data_rates(self, unlearn_bundle):
        for name, d in unlearn_bundle.sections["fixed_data"].items():
            assert 0 <= d["accuracy"] <= 1
            assert set(d["nonmember_rate"]) >= {"pretrained", "retrained"}

    def test_report_has_sections_only(self, unlearn_bundle):
        files = report_files(unlearn_bundle, "csv")
        root = unlearn_bundle.scenario
        assert {f"{root}/fixed_data.csv", f"{root}/fixed_model.csv", f"{root}/summary.json"} <= set(files)
        assert f"{root}/table.csv" not in files
        header, *rows = files[f"{root}/fixed_model.csv"].splitlines()
        assert header == "attack,method,balanced_accuracy,opt_indis,note" and rows

    def test_single_category_marks_per_class_inapplicable(self, few_manifest):
        m = few_manifest.replace(
            attacks=("metric-confidence", "mlleaks3"), modes=("audit",),
            post_training=PostTraining("unlearning", forget_mode="single_category", forget_class=1,
                                       methods=("exact_retrain",), unlearn_epochs=1),
        )
        b = run_unlearning_audit(m)
        assert "inapplicable" in b.sections["fixed_model"]["metric-confidence"]
        assert "methods" in b.sections["fixed_model"]["mlleaks3"]
        d_train = Session(m).prepared.bundle.d_train
        assert b.sections["forget"]["size"] == int((d_train.labels == 1).sum())

    def test_needs_block(self, few_manifest):
        with pytest.raises(ConfigurationError):
            run_unlearning_audit(few_manifest)


class TestPredictionFiles:
    def records(self):
        return [
            PredictionRecord(3, 0, (0.7, 0.2, 0.1), True, "m"),
            PredictionRecord(8, 2, (0.1, 0.1, 0.8), False, "m"),
        ]

    def test_round_trip(self, tmp_path):
        path = tmp_path / "p.jsonl"
        export_predictions(self.records(), path)
        assert import_predictions(path) == self.records()
        first = path.read_text().splitlines()[0]
        assert first.startswith('{"sample_id": 3, "label": 0, "posterior": [0.69999999999999996')

    @pytest.mark.parametrize("line,needle", [
        ('{"sample_id": 5, "label": 0, "posterior": [0.5, 0.4]}', "line 2 \\(sample_id 5\\).*sums to"),
        ('{"sample_id": 5, "label": 0, "posterior": [0.5, 0.5', "line 2: malformed JSON"),
        ('{"sample_id": 3, "label": 0, "posterior": [0.5, 0.5]}', "duplicate sample_id 3"),
        ('{"sample_id": 5, "label": 4, "posterior": [0.5, 0.5]}', "label 4"),
        ('{"sample_id": 5, "label": 0, "posterior": [0.2, 0.3, 0.5]}', "posterior length 3"),
        ('{"sample_id": 5, "label": 0, "posterior": [1.5, -0.5]}', "non-negative"),
        ('{"sample_id": 5, "label": 0}', "missing field"),
        ('{"sample_id": 5, "label": 0, "posterior": [0.5, 0.5], "colour": 1}', "unknown field"),
    ])
    def test_validation_errors(self, tmp_path, line, needle):
        path = tmp_path / "bad.jsonl"
        path.write_text('{"sample_id": 3, "label": 1, "posterior": [0.25, 0.75]}\n' + line + "\n")
        with pytest.raises(DataValidationError, match=needle):
            import_predictions(path)


class TestReports:
    def test_emit_is_idempotent(self, few_bundle, tmp_path):
        first = emit_report(few_bundle, "csv", tmp_path)
        snap = {p: (tmp_path / p).read_bytes() for p in first}
        assert emit_report(few_bundle, "csv", tmp_path) == first
        assert {p: (tmp_path / p).read_bytes() for p in first} == snap

    def test_csv_layout(self, few_bundle, tmp_path):
        files = emit_report(few_bundle, "csv", tmp_path)
        root = few_bundle.scenario
        assert f"{root}/report.csv" in files and f"{root}/table.csv" in files and f"{root}/summary.json" in files
        with open(tmp_path / root / "report.csv", newline="") as fh:
            rows = list(csv.DictReader(fh))
        assert len(rows) == len(FEW) * 2
        with open(tmp_path / root / "table.csv", newline="") as fh:
            table = list(csv.reader(fh))
        assert table[0] == ["attack", "audit_balanced_accuracy", "attack_balanced_accuracy", "audit_attack_gap"]
        assert all(cell for row in table for cell in row)
        assert all(f"{root}/det/{a}.csv" in files for a in FEW)

    def test_json_format(self, few_bundle, tmp_path):
        files = emit_report(few_bundle, "json", tmp_path)
        data = json.loads((tmp_path / few_bundle.scenario / "bundle.json").read_text())
        assert data["scenario"] == few_bundle.scenario and len(files) == 2

    def test_error_cells_are_marked(self, few_manifest, tmp_path):
        b = run_experiment(few_manifest.replace(n_shadows=2, attacks=("lira",)))
        emit_report(b, "csv", tmp_path)
        text = (tmp_path / b.scenario / "table.csv").read_text()
        assert "ERROR" in text


class TestCli:
    @pytest.fixture
    def manifest_file(self, tmp_path, few_manifest):
        path = tmp_path / "m.ini"
        path.write_text(few_manifest.replace(attacks=("metric-confidence", "blindmi-diffw"), n_shadows=2).to_ini())
        return path

    def test_staged_commands(self, manifest_file, tmp_path, capsys):
        out = tmp_path / "out"
        for cmd in ("generate-data", "train", "shadows", "attack", "calibrate", "evaluate", "report"):
            assert main([cmd, "--manifest", str(manifest_file), "--out", str(out)]) == 0, cmd
        assert (out / "data" / "target_train.jsonl").exists()
        assert (out / "models" / "target.npz").exists()
        assert (out / "scores" / "metric-confidence.jsonl").exists()
        assert (out / "calibration" / "metric-confidence_attack.json").exists()
        assert (out / "report" / "few" / "table.csv").exists()
        records = import_predictions(out / "predictions" / "target_eval.jsonl")
        assert all(r.membership is not None for r in records)
        assert main(["import-predictions", str(out / "predictions" / "target_eval.jsonl"), "--out", str(out)]) == 0

    def test_global_flags_after_subcommand(self, manifest_file, tmp_path):
        out = tmp_path / "o2"
        assert main(["--manifest", str(manifest_file), "run", "--seed", "11", "--workers", "2", "--out", str(out)]) == 0
        bundle = json.loads((out / "bundle.json").read_text())
        assert bundle["provenance"]["seed"] == 11

    def test_exit_codes(self, tmp_path, capsys):
        assert main(["run", "--manifest", str(tmp_path / "missing.ini"), "--out", str(tmp_path)]) == 2
        bad = tmp_path / "bad.jsonl"
        bad.write_text('{"sample_id": 1, "label": 0, "posterior": [0.6, 0.3]}\n')
        assert main(["import-predictions", str(bad), "--out", str(tmp_path)]) == 3
        assert "sample_id 1" in capsys.readouterr().err
        with pytest.raises(SystemExit):
            main(["sweep", "--axis", "colour", "--values", "1"])

    def test_sweep_and_unlearn_commands(self, manifest_file, tmp_path):
        out = tmp_path / "sw"
        assert main(["sweep", "--manifest", str(manifest_file), "--axis", "epochs", "--values", "2,4", "--out", str(out)]) == 0
        assert len(list((out / "bundles").glob("*.json"))) == 2
        text = manifest_file.read_text() + "\n[post_training]\nkind = unlearning\nmethods = exact_retrain\nunlearn_epochs = 1\n"
        manifest_file.write_text(text)
        assert main(["unlearn-audit", "--manifest", str(manifest_file), "--out", str(tmp_path / "ul")]) == 0
        assert (tmp_path / "ul" / "report" / "few" / "fixed_model.csv").exists()
