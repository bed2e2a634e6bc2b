import json
import subprocess
import sys

import pytest

from corpus import cta_corpus
from golden_pipeline import DATA, SEED, run_pipeline
from cellkit.cli import main
from cellkit.expr import CellAnnotations, load_dataset, save_annotations, save_dataset, split_dataset
from cellkit.templates import load_templates, rouge_l, save_templates
from cellkit.synthetic import separable_dataset


@pytest.fixture(scope="module")
def golden(tmp_path_factory):
    return run_pipeline(tmp_path_factory.mktemp("golden"))


@pytest.fixture(scope="module")
def separable(tmp_path_factory):
    root = tmp_path_factory.mktemp("sep")
    d = split_dataset(separable_dataset(90, 24, 3, seed=1), seed=0)
    save_dataset(d, root / "data")
    assert main(["train-clf", "--input", str(root / "data"), "--epochs", "40", "--lr", "0.01",
                 "--hidden", "16", "--output", str(root / "clf"), "--seed", "0"]) == 0
    return root


class TestGolden:
    def test_eval_report_bytes(self, golden):
        assert (golden / "eval" / "eval_report.json").read_bytes() == (DATA / "golden_eval_report.json").read_bytes()

    def test_markers_bytes(self, golden):
        assert (golden / "markers" / "markers.tsv").read_bytes() == (DATA / "golden_markers.tsv").read_bytes()

    def test_manifests(self, golden):
        m = json.loads((golden / "cvae" / "train-cvae.manifest.json").read_text())
        assert m["command"] == "train-cvae" and m["seeds"] == {"seed": SEED}
        assert len(m["inputs"]["input"]["sha256"]) == 64
        assert (golden / "cvae" / "model" / "model.json").exists()
        assert (golden / "eval" / "eval_report.csv").read_text().startswith("metric,value\n")

    def test_generate_reproducible(self, golden, tmp_path):
        argv = ["generate", "--model", str(golden / "cvae" / "model"), "--like", str(golden / "data"),
                "--seed", str(SEED), "--output", str(tmp_path / "again")]
        assert main(argv) == 0
        assert (tmp_path / "again" / "matrix.cfx").read_bytes() == (golden / "gen" / "matrix.cfx").read_bytes()

    def test_generate_from_labels(self, golden, tmp_path):
        real = load_dataset(golden / "data")
        labels = [real.annotations.labels[i % real.n_cells] for i in range(12)]
        ann = CellAnnotations.uniform(labels, real.annotations.species[0], real.annotations.tissue[0],
                                      [f"q{i}" for i in range(12)])
        save_annotations(ann, tmp_path / "labels.csv")
        assert main(["generate", "--model", str(golden / "cvae" / "model"), "--labels", str(tmp_path / "labels.csv"),
                     "--seed", "1", "--output", str(tmp_path / "g")]) == 0
        g = load_dataset(tmp_path / "g")
        assert g.n_cells == 12 and list(g.annotations.labels) == labels

    def test_unknown_label_fails_cleanly(self, golden, tmp_path):
        ann = CellAnnotations.uniform(["nope"], "human", "synthetic", ["q0"])
        save_annotations(ann, tmp_path / "labels.csv")
        code = main(["generate", "--model", str(golden / "cvae" / "model"), "--labels", str(tmp_path / "labels.csv"),
                     "--seed", "1", "--output", str(tmp_path / "g")])
        assert code == 1
        assert not (tmp_path / "g").exists()
        assert not list(tmp_path.glob(".g.staging-*"))

    def test_identity_evaluation(self, golden, tmp_path):
        assert main(["evaluate", "--real", str(golden / "data"), "--gen", str(golden / "data"),
                     "--output", str(tmp_path / "e")]) == 0
        rep = json.loads((tmp_path / "e" / "eval_report.json").read_text())
        assert rep["mmd"] == 0.0 and rep["delta_sknn.mean"] == 0.0


class TestExitCodes:
    def test_missing_input(self, tmp_path):
        assert main(["markers", "--input", str(tmp_path / "absent"), "--output", str(tmp_path / "o")]) == 2

    def test_bad_flag(self, tmp_path):
        with pytest.raises(SystemExit) as exc:
            main(["markers", "--bogus"])
        assert exc.value.code == 1

    def test_seed_required(self, tmp_path):
        with pytest.raises(SystemExit) as exc:
            main(["ingest", "--input", "x", "--output", str(tmp_path / "o")])
        assert exc.value.code == 1

    def test_ingest_parse_error(self, tmp_path):
        (tmp_path / "bad.mtx").write_text("not a matrix\n")
        assert main(["ingest", "--input", str(tmp_path / "bad.mtx"), "--output", str(tmp_path / "o"),
                     "--seed", "0"]) == 1

    def test_console_script(self):
        out = subprocess.run([sys.executable, "-m", "cellkit.cli", "--version"], capture_output=True, text=True)
        assert out.returncode == 0 and out.stdout.startswith("cellkit ")


class TestClassifierCommands:
    def test_predict_and_evaluate(self, separable, tmp_path):
        assert main(["predict", "--model", str(separable / "clf" / "classifier"), "--input", str(separable / "data"),
                     "--output", str(tmp_path / "p")]) == 0
        rows = (tmp_path / "p" / "predictions.tsv").read_text().splitlines()
        assert rows[0] == "cell_id\tpredicted\tprobability" and len(rows) == 91
        assert main(["evaluate", "--real", str(separable / "data"), "--predictions",
                     str(tmp_path / "p" / "predictions.tsv"), "--output", str(tmp_path / "e")]) == 0
        rep = json.loads((tmp_path / "e" / "eval_report.json").read_text())
        assert rep["accuracy.true"] >= 0.95 and rep["n_unanswered"] == 0

    def test_saliency(self, separable, tmp_path):
        assert main(["saliency", "--model", str(separable / "clf" / "classifier"), "--input", str(separable / "data"),
                     "--top-n", "3", "--output", str(tmp_path / "s")]) == 0
        lines = (tmp_path / "s" / "saliency.tsv").read_text().splitlines()
        assert lines[0] == "class\trank\tgene\tscore" and len(lines) == 1 + 3 * 3


class TestTemplatesCommand:
    def test_canned(self, tmp_path):
        save_templates(cta_corpus(120, seed=5), tmp_path / "c.jsonl")
        code = main(["templates", "--input", str(tmp_path / "c.jsonl"), "--task", "CTA", "--count", "30",
                     "--seed", "0", "--output", str(tmp_path / "t")])
        assert code == 0
        recs = load_templates(tmp_path / "t" / "templates.jsonl")
        assert 0 < len(recs) <= 30
        assert {r.split for r in recs} <= {"train", "valid", "test"}
        for i in range(len(recs)):
            for j in range(i):
                assert rouge_l(recs[i].instruction, recs[j].instruction) <= 0.75
        report = json.loads((tmp_path / "t" / "templates_report.json").read_text())
        assert report["counters"]["accepted"] == len(recs)

    def test_needs_a_source(self, tmp_path):
        with pytest.raises(SystemExit) as exc:
            main(["templates", "--task", "CTA", "--count", "1", "--seed", "0", "--output", str(tmp_path / "t")])
        assert exc.value.code == 1
