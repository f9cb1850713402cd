import json
from pathlib import Path

import pytest
from click.testing import CliRunner

from vbdiag.cli import main


@pytest.fixture(scope="module")
def workdir(tmp_path_factory):
    return tmp_path_factory.mktemp("cli")


@pytest.fixture(scope="module")
def cohort_csv(workdir):
    path = workdir / "cohort.csv"
    result = CliRunner().invoke(
        main, ["synth", "--n", "400", "--seed", "11", "--out", str(path)]
    )
    assert result.exit_code == 0, result.output
    return path


def run(args):
    result = CliRunner().invoke(main, [str(a) for a in args])
    assert result.exit_code == 0, result.output
    return result.output


class TestSynthAndIngest:
    def test_synth_deterministic_bytes(self, workdir):
        p1, p2 = workdir / "s1.csv", workdir / "s2.csv"
        run(["synth", "--n", 50, "--seed", 3, "--out", p1])
        run(["synth", "--n", 50, "--seed", 3, "--out", p2])
        assert p1.read_bytes() == p2.read_bytes()

    def test_ingest_reexport(self, workdir, cohort_csv):
        out = workdir / "canon.csv"
        output = run(["ingest", "--in", cohort_csv, "--out", out])
        assert "completeness" in output
        assert out.exists()

    def test_split(self, workdir, cohort_csv):
        run(["split", "--in", cohort_csv, "--test-fraction", 0.25, "--seed", 5,
             "--out-train", workdir / "train.csv", "--out-test", workdir / "test.csv"])
        train_lines = (workdir / "train.csv").read_text().splitlines()
        test_lines = (workdir / "test.csv").read_text().splitlines()
        assert len(train_lines) + len(test_lines) - 2 == 400


class TestTrainPredictExplain:
    def test_train_cv_band_explain(self, workdir, cohort_csv):
        model = workdir / "model.json"
        out = run(["train", "--family", "GBT",
                   "--params", json.dumps({"n_rounds": 15, "max_depth": 3}),
                   "--train", cohort_csv, "--seed", 2, "--out-model", model])
        assert "model_id" in out

        cv_out = workdir / "cv.csv"
        out = run(["cv", "--in", cohort_csv, "--family", "DT",
                   "--params", json.dumps({"max_depth": 3}),
                   "--k", 4, "--seed", 2, "--out", cv_out])
        assert "Accuracy" in out and cv_out.exists()

        band_out = workdir / "band.csv"
        out = run(["band", "--in", cohort_csv, "--model", model, "--out", band_out])
        assert "CRP band" in out and band_out.exists()

        swarm = workdir / "beeswarm.csv"
        bands = workdir / "band_importance.csv"
        # tiny slice for speed
        small = workdir / "small.csv"
        lines = cohort_csv.read_text().splitlines()
        small.write_text("\n".join(lines[:9]) + "\n")
        out = run(["explain", "--model", model, "--data", small,
                   "--permutations", 40, "--seed", 0,
                   "--out-beeswarm", swarm, "--out-bands", bands])
        assert "global importance" in out
        swarm_rows = swarm.read_text().splitlines()
        assert len(swarm_rows) == 1 + 8 * 20  # header + cases x features

    def test_report_byte_determinism(self, workdir, cohort_csv):
        out1, out2 = workdir / "cv1.csv", workdir / "cv2.csv"
        args = ["cv", "--in", cohort_csv, "--family", "DT",
                "--params", json.dumps({"max_depth": 3}), "--k", 3, "--seed", 9]
        run(args + ["--out", out1])
        run(args + ["--out", out2])
        assert out1.read_bytes() == out2.read_bytes()


class TestSemisupCommand:
    def test_semisup_flow(self, workdir, cohort_csv):
        # build an unlabeled pool from a second synthetic cohort
        pool_src = workdir / "pool_src.csv"
        run(["synth", "--n", 60, "--seed", 77, "--out", pool_src])
        lines = pool_src.read_text().splitlines()
        header = lines[0]
        rows = []
        for i, line in enumerate(lines[1:]):
            fields = line.split(",")
            fields[0] = f"poolp{i}"
            fields[1] = f"poolc{i}"
            fields[2] = "UNLABELED"
            rows.append(",".join(fields))
        pool = workdir / "pool.csv"
        pool.write_text("\n".join([header] + rows) + "\n")

        out_train = workdir / "assembled.csv"
        audit = workdir / "audit.csv"
        out = run(["semisup", "--labeled", cohort_csv, "--unlabeled", pool,
                   "--threshold", 0.7, "--family", "KNN", "--k", 4, "--seed", 1,
                   "--out-train", out_train, "--out-audit", audit])
        assert "assembled" in out
        assert out_train.exists() and audit.exists()


class TestRuleAndCompareAndTune:
    def test_crp_rule_fit_and_apply(self, cohort_csv):
        out = run(["crp-rule", "--fit", "--in", cohort_csv])
        assert "CRP_opt" in out
        assert run(["crp-rule", "--apply", 23, "--threshold", 24]).strip() == "VIRUS"
        assert run(["crp-rule", "--apply", 24, "--threshold", 24]).strip() == "BACTERIA"

    def test_compare(self, workdir, cohort_csv):
        out_dir = workdir / "cmp"
        out = run(["compare", "--in", cohort_csv, "--families", "DT,KNN",
                   "--k", 3, "--seed", 4, "--out-dir", out_dir])
        assert "CRP" in out and "pairwise" in out
        assert (out_dir / "comparison.txt").exists()

    def test_tune(self, workdir, cohort_csv):
        trials = workdir / "trials.csv"
        out = run(["tune", "--in", cohort_csv, "--family", "DT", "--budget", 3,
                   "--k", 3, "--seed", 6, "--out", trials])
        assert "best trial" in out
        assert trials.exists()
