"""Regenerate the bundled 200-cell fixture and its golden report.

    python3 tests/data/build_fixture.py          # fixture files only
    python3 tests/data/build_fixture.py --golden # also rewrite golden_eval_report.json
"""
import shutil
import sys
import tempfile
from pathlib import Path

from cellkit.expr import save_annotations, save_matrix
from cellkit.synthetic import zinb_dataset

HERE = Path(__file__).resolve().parent
sys.path.insert(0, str(HERE.parent))


def build_fixture():
    d, _ = zinb_dataset(200, 80, 3, seed=7, weights=(0.5, 0.3, 0.2), log_lib_mean=6.5)
    save_matrix(d.matrix, HERE / "fixture.mtx", "matrix-market")
    save_annotations(d.annotations, HERE / "fixture_annotations.csv")


if __name__ == "__main__":
    build_fixture()
    if "--golden" in sys.argv:
        from golden_pipeline import run_pipeline

        with tempfile.TemporaryDirectory() as td:
            out = run_pipeline(Path(td))
            shutil.copy(out / "eval" / "eval_report.json", HERE / "golden_eval_report.json")
            shutil.copy(out / "markers" / "markers.tsv", HERE / "golden_markers.tsv")
