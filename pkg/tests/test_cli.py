import json
import subprocess
import sys
from pathlib import Path

import pytest

from seqmon.cli import main

GOLDEN = Path(__file__).parent / "golden"


def run(capsys, *argv):
    code = main([str(a) for a in argv])
    out, err = capsys.readouterr()
    return code, out, err


def usage_exit(capsys, *argv):
    with pytest.raises(SystemExit) as exc:
        main([str(a) for a in argv])
    return exc.value.code, capsys.readouterr().err


class TestBoundary:
    def test_golden(self, capsys):
        code, out, _ = run(capsys, "boundary", "--alpha", "0.05", "--sided", "one", "--n", "500", "--var", "2")
        assert code == 0
        assert out == (GOLDEN / "boundary_one.json").read_text()
        assert json.loads(out)["thresholds"][0] == pytest.approx(61.979, abs=1e-3)

    def test_missing_var(self, capsys):
        code, err = usage_exit(capsys, "boundary", "--alpha", "0.05", "--n", "500")
        assert code == 1 and "usage" in err

    def test_bad_alpha(self, capsys):
        code, _, err = run(capsys, "boundary", "--alpha", "1.5", "--n", "500", "--var", "2")
        assert code == 2 and "alpha" in err

    def test_no_subcommand(self, capsys):
        code, _ = usage_exit(capsys)
        assert code == 1

    def test_out_file(self, capsys, tmp_path):
        dest = tmp_path / "b.json"
        code, out, _ = run(capsys, "boundary", "--n", "500", "--var", "2", "--out", dest)
        assert code == 0 and out == "" and json.loads(dest.read_text())["type"] == "constant"


class TestStaircase:
    def test_single_period_matches_boundary(self, capsys, tmp_path):
        plan = tmp_path / "k1.json"
        plan.write_text(json.dumps({"period_sizes": [500], "variance_per_event": 2.0}))
        _, out, _ = run(capsys, "staircase", "--alpha", "0.05", "--plan", plan)
        _, ref, _ = run(capsys, "boundary", "--n", "500", "--var", "2")
        assert json.loads(out)["thresholds"] == pytest.approx(json.loads(ref)["thresholds"], rel=1e-12)

    def test_seven_periods(self, capsys):
        code, out, _ = run(capsys, "staircase", "--alpha", "0.05", "--plan", GOLDEN / "plan_k7.json")
        doc = json.loads(out)
        assert code == 0
        assert doc["fdr_bound"] <= 0.05 and doc["inflation_steps"] >= 1
        assert len(doc["thresholds"]) == 7 and doc["period_end_indices"][-1] == 500

    def test_explicit_variances(self, capsys, tmp_path):
        plan = tmp_path / "p.json"
        plan.write_text(json.dumps({"period_sizes": [1, 1], "incr_variances": [1.0, 1.0]}))
        code, out, _ = run(capsys, "staircase", "--plan", plan)
        assert code == 0 and json.loads(out)["fdr_bound"] <= 0.05

    @pytest.mark.parametrize("text", ["{oops", '{"period_sizes": [10]}', '{"period_sizes": [0], "variance_per_event": 1}'])
    def test_malformed(self, capsys, tmp_path, text):
        plan = tmp_path / "bad.json"
        plan.write_text(text)
        code, _, _ = run(capsys, "staircase", "--plan", plan)
        assert code == 2

    def test_non_convergence_exit(self, capsys, monkeypatch):
        import seqmon.boundaries as b

        monkeypatch.setattr(
            "seqmon.cli.staircase_boundaries",
            lambda plan, alpha: b.staircase_boundaries(plan, alpha, max_iter=0),
        )
        code, _, err = run(capsys, "staircase", "--plan", GOLDEN / "plan_k7.json")
        assert code == 3 and "inflation" in err


class TestMonitor:
    def test_golden_report_and_trajectory(self, capsys, tmp_path):
        traj = tmp_path / "t.csv"
        code, out, _ = run(capsys, "monitor", "--events", GOLDEN / "table1.csv", "--threshold", "100",
                           "--emit-trajectory", traj)
        assert code == 0
        assert out == (GOLDEN / "table1_report.json").read_text()
        assert traj.read_text() == (GOLDEN / "table1_trajectory.csv").read_text()

    def test_huge_threshold(self, capsys):
        _, out, _ = run(capsys, "monitor", "--events", GOLDEN / "table1.csv", "--threshold", "1e12")
        doc = json.loads(out)
        assert doc["detected_at"] is None and doc["final_s"] == 219.5

    def test_empty_file(self, capsys, tmp_path):
        empty = tmp_path / "e.csv"
        empty.write_text("")
        code, out, _ = run(capsys, "monitor", "--events", empty, "--threshold", "5")
        assert code == 0 and json.loads(out)["n_processed"] == 0

    def test_parse_failure_names_line(self, capsys, tmp_path):
        bad = tmp_path / "bad.csv"
        bad.write_text((GOLDEN / "table1.csv").read_text() + "5,2024-01-01T00:04:00Z,u9,control,oops\n")
        code, _, err = run(capsys, "monitor", "--events", bad, "--threshold", "5")
        assert code == 2 and "line 6" in err

    def test_boundary_file(self, capsys, tmp_path):
        _, doc, _ = run(capsys, "boundary", "--n", "4", "--var", "2600")
        path = tmp_path / "b.json"
        path.write_text(doc)
        _, out, _ = run(capsys, "monitor", "--events", GOLDEN / "table1.csv", "--boundary", path)
        assert json.loads(out)["detected_at"] == 4  # b = 1.96 * sqrt(10400) = 199.9

    def test_ndjson_input(self, capsys, tmp_path):
        from seqmon.eventio import read_events, write_events_ndjson

        path = tmp_path / "t.ndjson"
        with open(path, "w") as fh:
            write_events_ndjson(read_events(GOLDEN / "table1.csv"), fh)
        _, out, _ = run(capsys, "monitor", "--events", path, "--threshold", "100")
        assert json.loads(out)["detected_at"] == 1

    def test_horizon_overflow(self, capsys):
        code, _, _ = run(capsys, "monitor", "--events", GOLDEN / "table1.csv", "--threshold", "1e9", "--n", "2")
        assert code == 1
        code, out, _ = run(capsys, "monitor", "--events", GOLDEN / "table1.csv", "--threshold", "1e9", "--n", "2", "--truncate")
        assert code == 0 and json.loads(out)["n_processed"] == 2

    def test_needs_boundary_source(self, capsys):
        code, _, _ = run(capsys, "monitor", "--events", GOLDEN / "table1.csv")
        assert code == 1


class TestSimulate:
    def test_golden_and_determinism(self, capsys, tmp_path):
        out1, out2 = tmp_path / "a.csv", tmp_path / "b.csv"
        for dest in (out1, out2):
            code, _, _ = run(capsys, "simulate", "--config", GOLDEN / "small_sim.cfg", "--seed", "8163", "--out", dest)
            assert code == 0
        assert out1.read_bytes() == out2.read_bytes() == (GOLDEN / "small_sim.csv").read_bytes()
        manifest = json.loads(Path(f"{out1}.manifest.json").read_text())
        assert manifest["config"]["base_seed"] == 8163 and "code_version" in manifest
        assert len(manifest["mean_savings_detected"]) == 10

    def test_discrete(self, capsys):
        code, out, _ = run(capsys, "simulate", "--config", GOLDEN / "small_sim.cfg", "--seed", "1",
                           "--mode", "discrete", "--checks", "14,28", "--methods", "yeast")
        rows = out.splitlines()[1:]
        assert code == 0 and len(rows) == 4
        assert {r.split(",")[3] for r in rows} == {"14", "28"}

    def test_unknown_method(self, capsys):
        code, _, err = run(capsys, "simulate", "--seed", "1", "--reps", "10", "--methods", "yeast,wald")
        assert code == 1 and "pyeast<K>" in err

    def test_seed_required(self, capsys, tmp_path):
        cfg = tmp_path / "c.cfg"
        cfg.write_text("reps=10\n")
        code, _, err = run(capsys, "simulate", "--config", cfg)
        assert code == 1 and "seed" in err


class TestValidate:
    @pytest.fixture
    def synth(self, tmp_path):
        path = tmp_path / "synth.cfg"
        path.write_text("n_subjects=400\nmin_events=5\nwithin_subject_corr=0.5\n")
        return path

    def test_robust_vs_iid(self, capsys, synth):
        _, robust, _ = run(capsys, "validate", "--synth", synth, "--seed", "4", "--reps", "2000")
        _, iid, _ = run(capsys, "validate", "--synth", synth, "--seed", "4", "--reps", "2000", "--variance", "iid")
        r, i = json.loads(robust), json.loads(iid)
        assert r["detection_rate"] <= 0.06 and i["detection_rate"] >= 0.08
        assert r["ci95"][0] <= r["detection_rate"] <= r["ci95"][1]

    def test_cap(self, capsys, synth):
        _, out, _ = run(capsys, "validate", "--synth", synth, "--seed", "4", "--reps", "200", "--cap-percentile", "0.999")
        doc = json.loads(out)
        assert doc["cap"] is not None and doc["cap"] > 0

    def test_seed_required(self, capsys, synth):
        code, _ = usage_exit(capsys, "validate", "--synth", synth)
        assert code == 1

    def test_event_files(self, capsys, tmp_path):
        from seqmon.eventio import write_events_csv
        from seqmon.simharness import ClusteredSynthConfig, generate_clustered_events

        cfg = ClusteredSynthConfig(n_subjects=100)
        for name, seed in (("h.csv", 1), ("c.csv", 2)):
            with open(tmp_path / name, "w") as fh:
                write_events_csv(generate_clustered_events(cfg, seed), fh)
        code, out, _ = run(capsys, "validate", "--events", tmp_path / "c.csv", "--history", tmp_path / "h.csv",
                           "--seed", "1", "--reps", "100")
        assert code == 0 and 0 <= json.loads(out)["detection_rate"] <= 1

    def test_missing_inputs(self, capsys):
        code, _, _ = run(capsys, "validate", "--seed", "1")
        assert code == 1


class TestLevyCheck:
    def test_golden(self, capsys):
        code, out, _ = run(capsys, "levy-check", "--max-n", "12")
        assert code == 0 and out == (GOLDEN / "levy12.json").read_text()

    def test_resource_limit(self, capsys):
        code, _, _ = run(capsys, "levy-check", "--max-n", "21")
        assert code == 2


def test_module_entry_point():
    proc = subprocess.run([sys.executable, "-m", "seqmon", "--version"], capture_output=True, text=True)
    assert proc.returncode == 0 and "seqmon" in proc.stdout
