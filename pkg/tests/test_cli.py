import json

import numpy as np
import pytest

from cardfuse.cli import main


def run(argv):
    try:
        return main(argv)
    except SystemExit as e:  # argparse usage errors
        return e.code


SYNTH = "synth --categories 3 --subcats 4 --per-subcat 50 --dim 64 --seed 7".split()


@pytest.fixture(scope="module")
def synth_dir(tmp_path_factory):
    out = tmp_path_factory.mktemp("data")
    assert run(SYNTH + ["--out", str(out)]) == 0
    return out


@pytest.fixture(scope="module")
def run_dir(tmp_path_factory, synth_dir):
    out = tmp_path_factory.mktemp("run")
    code = run(
        [
            "train",
            "--manifest", str(synth_dir / "manifest.json"),
            "--blob", str(synth_dir / "vectors.f32"),
            "--objective", "triplet",
            "--alpha", "0.2",
            "--k-steps", "60",
            "--seed", "1",
            "--out", str(out),
        ]
    )
    assert code == 0
    return out


class TestSynth:
    def test_writes_600_records(self, synth_dir):
        manifest = json.loads((synth_dir / "manifest.json").read_text())
        assert len(manifest["records"]) == 600
        assert (synth_dir / "vectors.f32").exists()

    def test_rerun_is_byte_identical(self, synth_dir, tmp_path):
        assert run(SYNTH + ["--out", str(tmp_path)]) == 0
        assert (tmp_path / "vectors.f32").read_bytes() == (synth_dir / "vectors.f32").read_bytes()
        assert (tmp_path / "manifest.json").read_bytes() == (synth_dir / "manifest.json").read_bytes()

    def test_zero_per_subcat_is_usage_error(self, tmp_path):
        assert run(["synth", "--per-subcat", "0", "--out", str(tmp_path)]) == 2


class TestTrain:
    def test_checkpoint_and_full_loss_curve(self, run_dir):
        assert (run_dir / "checkpoint.json").exists()
        assert (run_dir / "checkpoint.f32").exists()
        rows = (run_dir / "loss.csv").read_text().strip().splitlines()
        assert rows[0] == "step,loss"
        assert len(rows) - 1 == 60

    def test_missing_dataset_path_is_usage_error(self, tmp_path):
        assert run(["train", "--out", str(tmp_path)]) == 2

    def test_rerun_same_seed_identical_checkpoint(self, synth_dir, run_dir, tmp_path):
        code = run(
            [
                "train",
                "--manifest", str(synth_dir / "manifest.json"),
                "--blob", str(synth_dir / "vectors.f32"),
                "--objective", "triplet",
                "--alpha", "0.2",
                "--k-steps", "60",
                "--seed", "1",
                "--out", str(tmp_path),
            ]
        )
        assert code == 0
        assert (tmp_path / "checkpoint.f32").read_bytes() == (run_dir / "checkpoint.f32").read_bytes()
        assert (tmp_path / "checkpoint.json").read_bytes() == (run_dir / "checkpoint.json").read_bytes()


class TestEval:
    def test_four_mode_report(self, synth_dir, run_dir, tmp_path):
        code = run(
            [
                "eval",
                "--manifest", str(synth_dir / "manifest.json"),
                "--blob", str(synth_dir / "vectors.f32"),
                "--checkpoint", str(run_dir),
                "--modes", "image,text,concat,fused",
                "--k", "20",
                "--out", str(tmp_path),
            ]
        )
        assert code == 0
        report = json.loads((tmp_path / "report.json").read_text())
        assert set(report) == {"image_only", "text_only", "concat", "fused"}
        table = (tmp_path / "report.txt").read_text()
        assert "Average" in table
        for rep in report.values():
            assert rep["k"] == 20

    def test_average_row_is_mean_of_categories(self, synth_dir, tmp_path):
        code = run(
            [
                "eval",
                "--manifest", str(synth_dir / "manifest.json"),
                "--blob", str(synth_dir / "vectors.f32"),
                "--modes", "image,concat",
                "--k", "20",
                "--out", str(tmp_path),
            ]
        )
        assert code == 0
        report = json.loads((tmp_path / "report.json").read_text())
        for rep in report.values():
            cats = list(rep["per_category"].values())
            assert abs(rep["overall"] - np.mean(cats)) < 1e-9

    def test_k_zero_is_usage_error(self, synth_dir, tmp_path):
        code = run(
            [
                "eval",
                "--manifest", str(synth_dir / "manifest.json"),
                "--blob", str(synth_dir / "vectors.f32"),
                "--k", "0",
                "--out", str(tmp_path),
            ]
        )
        assert code == 2

    def test_unknown_mode_is_usage_error(self, synth_dir, tmp_path):
        code = run(
            [
                "eval",
                "--manifest", str(synth_dir / "manifest.json"),
                "--blob", str(synth_dir / "vectors.f32"),
                "--modes", "pca",
                "--out", str(tmp_path),
            ]
        )
        assert code == 2


class TestHeadMode:
    def test_cross_entropy_checkpoint_evals_head(self, synth_dir, tmp_path):
        run_dir = tmp_path / "ce"
        code = run(
            [
                "train",
                "--manifest", str(synth_dir / "manifest.json"),
                "--blob", str(synth_dir / "vectors.f32"),
                "--objective", "cross_entropy",
                "--k-steps", "40",
                "--seed", "2",
                "--out", str(run_dir),
            ]
        )
        assert code == 0
        assert (run_dir / "classes.json").exists()
        out = tmp_path / "ev"
        code = run(
            [
                "eval",
                "--manifest", str(synth_dir / "manifest.json"),
                "--blob", str(synth_dir / "vectors.f32"),
                "--checkpoint", str(run_dir),
                "--modes", "fused,head",
                "--k", "20",
                "--out", str(out),
            ]
        )
        assert code == 0
        report = json.loads((out / "report.json").read_text())
        assert set(report) == {"fused", "fused_head"}

    def test_head_mode_without_head_checkpoint_is_usage_error(self, synth_dir, run_dir, tmp_path):
        code = run(
            [
                "eval",
                "--manifest", str(synth_dir / "manifest.json"),
                "--blob", str(synth_dir / "vectors.f32"),
                "--checkpoint", str(run_dir),
                "--modes", "head",
                "--out", str(tmp_path),
            ]
        )
        assert code == 2


class TestInspect:
    def test_counts_match_generator_flags(self, synth_dir, capsys):
        code = run(
            ["inspect", "--manifest", str(synth_dir / "manifest.json"), "--blob", str(synth_dir / "vectors.f32")]
        )
        assert code == 0
        out = capsys.readouterr().out
        assert "records: 600" in out
        assert "dim_image: 64" in out
        assert out.count("C00/") == 0  # labels are formatted "C00 / C00S00"

    def test_split_fractions_within_one_record(self, synth_dir, capsys):
        run(
            ["inspect", "--manifest", str(synth_dir / "manifest.json"), "--blob", str(synth_dir / "vectors.f32")]
        )
        out = capsys.readouterr().out
        checked = 0
        for line in out.splitlines():
            if ": " in line and line.strip().endswith(")") and line.startswith("  "):
                tr, te = line.rsplit("(", 1)[1].rstrip(")").split("/")
                total = int(tr) + int(te)
                assert abs(int(tr) - 0.8 * total) < 1.0
                checked += 1
        assert checked == 12

    def test_corrupt_blob_exits_1(self, synth_dir, tmp_path):
        bad = tmp_path / "bad.f32"
        bad.write_bytes((synth_dir / "vectors.f32").read_bytes()[:-8])
        code = run(["inspect", "--manifest", str(synth_dir / "manifest.json"), "--blob", str(bad)])
        assert code == 1


class TestSplit:
    def test_resplit_writes_new_assignment(self, synth_dir, tmp_path):
        code = run(
            [
                "split",
                "--manifest", str(synth_dir / "manifest.json"),
                "--blob", str(synth_dir / "vectors.f32"),
                "--seed", "99",
                "--out", str(tmp_path),
            ]
        )
        assert code == 0
        old = json.loads((synth_dir / "manifest.json").read_text())
        new = json.loads((tmp_path / "manifest.json").read_text())
        assert [r["split"] for r in new["records"]] != [r["split"] for r in old["records"]]
        assert (tmp_path / "vectors.f32").read_bytes() == (synth_dir / "vectors.f32").read_bytes()
