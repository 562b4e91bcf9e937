import json
import math
import subprocess
import sys
from pathlib import Path

import pytest

from svsoftmax.cli import far_label, main, table_header
from svsoftmax.gradients import full_backward

ROOT = Path(__file__).resolve().parents[1]

SMOKE = """
[dataset]
num_classes = 4
samples_per_class = 20
ambient_dim = 8
embed_dim = 4
seed = 0
[training]
epochs = 4
hidden = 16
[loss.1]
variant = softmax
[loss.2]
variant = sv_softmax
t = 1.0
name = sv_t1
"""


@pytest.fixture
def smoke(tmp_path):
    path = tmp_path / "smoke.ini"
    path.write_text(SMOKE, encoding="utf-8")
    return path


def run(verb, cfg, out, *extra, **kw):
    return main([verb, "--config", str(cfg), "--output", str(out), *extra], **kw)


def read(path):
    return Path(path).read_bytes()


def test_far_label():
    assert [far_label(f) for f in (0.1, 0.01, 1e-9, 0.025, 1.0)] == ["1e-1", "1e-2", "1e-9", "2.5e-2", "1e0"]
    assert table_header([0.1, 0.01]) == "loss,rank1,tpr_far_1e-1,tpr_far_1e-2,intra_angle,inter_angle"


def test_gradcheck_all_variants_pass(tmp_path):
    assert run("gradcheck", ROOT / "configs" / "all_variants.ini", tmp_path) == 0
    report = (tmp_path / "gradcheck" / "sv_am_softmax.txt").read_text()
    assert "passed: true" in report and "failed_instances: 0" in report


def test_gradcheck_corrupted_gradient_fails(tmp_path, smoke):
    def corrupted(*args, **kw):
        out = full_backward(*args, **kw)
        out.d_features = -out.d_features
        return out

    assert run("gradcheck", smoke, tmp_path, backward=corrupted) == 1
    assert "passed: false" in (tmp_path / "gradcheck" / "softmax.txt").read_text()


def test_empty_loss_list_is_config_error(tmp_path):
    cfg = tmp_path / "c.ini"
    cfg.write_text("[dataset]\nseed = 1\n")
    assert run("gradcheck", cfg, tmp_path / "out") == 2


def test_missing_config_and_bad_usage(tmp_path):
    assert run("train", tmp_path / "nope.ini", tmp_path) == 2
    assert main(["train", "--config", "x.ini"]) == 2
    assert main(["train", "--config", "x.ini", "--output", "o", "--seed", "-1"]) == 2


def test_train_layout_and_identities(tmp_path, smoke):
    assert run("train", smoke, tmp_path) == 0
    for name in ("softmax", "sv_t1"):
        for f in ("history.csv", "model.bin", "report.json", "roc.csv"):
            assert (tmp_path / name / f).is_file()
    assert read(tmp_path / "softmax" / "history.csv") == read(tmp_path / "sv_t1" / "history.csv")
    assert read(tmp_path / "softmax" / "model.bin")[:4] == b"SVM1"
    manifest = json.loads((tmp_path / "manifest.json").read_text())
    assert manifest["seed"] == 0 and len(manifest["config_hash"]) == 64
    assert [e["status"] for e in manifest["losses"]] == ["ok", "ok"]
    assert manifest["losses"][0]["files"]["history"] == "softmax/history.csv"
    rows = (tmp_path / "comparison.csv").read_text().splitlines()
    assert rows[0] == "loss,rank1,tpr_far_1e-1,tpr_far_1e-2,intra_angle,inter_angle"
    assert [r.split(",")[0] for r in rows[1:]] == ["softmax", "sv_t1"]


def test_train_is_deterministic(tmp_path, smoke):
    a, b = tmp_path / "a", tmp_path / "b"
    assert run("train", smoke, a) == 0 and run("train", smoke, b) == 0
    for rel in ("comparison.csv", "softmax/history.csv", "softmax/roc.csv", "softmax/report.json",
                "softmax/model.bin"):
        assert read(a / rel) == read(b / rel)


def test_seed_override_changes_run(tmp_path, smoke):
    assert run("train", smoke, tmp_path / "a") == 0
    assert run("train", smoke, tmp_path / "b", "--seed", "5") == 0
    assert read(tmp_path / "a/softmax/history.csv") != read(tmp_path / "b/softmax/history.csv")
    assert json.loads((tmp_path / "b/manifest.json").read_text())["seed"] == 5


def test_table_and_eval(tmp_path, smoke):
    assert run("table", smoke, tmp_path) == 2  # nothing trained yet
    assert run("eval", smoke, tmp_path) == 2
    assert run("train", smoke, tmp_path) == 0
    assert run("table", smoke, tmp_path) == 0
    table = (tmp_path / "table.csv").read_text()
    assert table == (tmp_path / "comparison.csv").read_text()
    report = read(tmp_path / "softmax" / "report.json")
    (tmp_path / "softmax" / "report.json").unlink()
    assert run("eval", smoke, tmp_path) == 0
    assert read(tmp_path / "softmax" / "report.json") == report


def test_table_rows_stable_when_a_loss_is_added(tmp_path, smoke):
    assert run("train", smoke, tmp_path) == 0
    assert run("table", smoke, tmp_path) == 0
    before = (tmp_path / "table.csv").read_text().splitlines()
    bigger = tmp_path / "bigger.ini"
    bigger.write_text(SMOKE + "[loss.3]\nvariant = sv_am_softmax\n")
    assert run("train", bigger, tmp_path) == 0
    assert run("table", bigger, tmp_path) == 0
    after = (tmp_path / "table.csv").read_text().splitlines()
    assert after[: len(before)] == before and len(after) == len(before) + 1


def test_divergence_exit_code_and_clean_files(tmp_path):
    cfg = tmp_path / "c.ini"
    cfg.write_text(SMOKE.replace("epochs = 4", "epochs = 4\nlearning_rate = 1e200"))
    with pytest.warns(RuntimeWarning):
        assert run("train", cfg, tmp_path / "o") == 3
    manifest = json.loads((tmp_path / "o/manifest.json").read_text())
    assert [e["status"] for e in manifest["losses"]] == ["diverged", "diverged"]
    assert not (tmp_path / "o/softmax/model.bin").exists()
    for f in (tmp_path / "o").rglob("*.csv"):
        text = f.read_text().lower()
        assert "nan" not in text and "inf" not in text


def test_module_entry_point(tmp_path, smoke):
    out = subprocess.run([sys.executable, "-m", "svsoftmax", "table", "--config", str(smoke), "--output",
                          str(tmp_path)], capture_output=True, text=True)
    assert out.returncode == 2
    assert "no report" in out.stderr


def test_report_thresholds_are_finite(tmp_path, smoke):
    assert run("train", smoke, tmp_path) == 0
    doc = json.loads((tmp_path / "softmax/report.json").read_text())
    assert all(math.isfinite(r["threshold"]) for r in doc["tpr_at_far"])
