"""End-to-end checks of the command-line suite."""

import io
import json
import subprocess
import sys
from contextlib import redirect_stderr, redirect_stdout
from pathlib import Path

import numpy as np
import pytest

from neuromip.cli import EXIT_DATA, EXIT_INTERNAL, EXIT_OK, EXIT_USAGE, main
from neuromip.core import check_feasible
from neuromip.generators import knapsack_instance
from neuromip.gnn import GcnConfig, init_model, load_model, save_model
from neuromip.lp import solve_lp_exact
from neuromip.mpsio import read_canonical, write_canonical

TINY_MPS = """\
NAME          TINY
ROWS
 N  COST
 L  LIM1
COLUMNS
    X1        COST          1.0    LIM1          2.0
    MARKER                  'MARKER'             'INTORG'
    Y1        COST         -3.0    LIM1          1.0
    MARKER                  'MARKER'             'INTEND'
RHS
    RHS       LIM1          8.0
BOUNDS
 UP BND       X1            4.0
 UP BND       Y1            5.0
ENDATA
"""

FAMILY = "knapsack:3:seed=3:n_vars=8:n_rows=3"


def run_cli(argv):
    out, err = io.StringIO(), io.StringIO()
    with redirect_stdout(out), redirect_stderr(err):
        code = main([str(a) for a in argv])
    return code, out.getvalue(), err.getvalue()


def result_path(stdout):
    lines = [ln for ln in stdout.strip().splitlines() if ln.strip()]
    assert lines, "command printed no result path"
    return Path(lines[-1])


@pytest.fixture(scope="module")
def ws(tmp_path_factory):
    """Shared instance files, datasets, and models for the slower commands."""
    root = tmp_path_factory.mktemp("cli")
    instance = knapsack_instance(n_vars=8, n_rows=3, seed=3, name="k8")
    write_canonical(instance, root / "k8.json")

    inst_dir = root / "instances"
    inst_dir.mkdir()
    for seed in (3, 4):
        inst = knapsack_instance(n_vars=8, n_rows=3, seed=seed)
        write_canonical(inst, inst_dir / f"{inst.name}.json")

    code, out, err = run_cli(["gen-data", "--kind", "branching",
                              "--instances", inst_dir, "--out", root / "data",
                              "--repeats", 2, "--node-limit", 60, "--seed", 5])
    assert code == EXIT_OK, err
    code, out, err = run_cli(["gen-data", "--kind", "diving",
                              "--instances", inst_dir, "--out", root / "data",
                              "--node-limit", 200, "--seed", 5])
    assert code == EXIT_OK, err

    code, out, err = run_cli(["train", "--data", root / "data/branching.jsonl",
                              "--out", root / "models/branching.npz",
                              "--steps", 20, "--hidden", 8, "--layers", 1,
                              "--lr", "1e-3",
                              "--loss-csv", root / "models/loss.csv"])
    assert code == EXIT_OK, err
    code, out, err = run_cli(["train", "--data", root / "data/diving.jsonl",
                              "--out", root / "models/diving",
                              "--coverages", "0.25,0.5",
                              "--steps", 20, "--hidden", 8, "--layers", 1])
    assert code == EXIT_OK, err
    return root


class TestUsage:
    def test_help_exits_zero(self):
        code, out, _ = run_cli(["--help"])
        assert code == EXIT_OK
        assert "usage:" in out

    def test_no_command_exits_usage(self):
        code, out, _ = run_cli([])
        assert code == EXIT_USAGE

    def test_unknown_command(self):
        code, _, err = run_cli(["frobnicate"])
        assert code == EXIT_USAGE
        assert "error:" in err

    def test_unknown_flag(self, ws):
        code, _, err = run_cli(["solve", ws / "k8.json", "--warp-speed"])
        assert code == EXIT_USAGE

    def test_module_entrypoint(self):
        proc = subprocess.run([sys.executable, "-m", "neuromip", "--help"],
                              capture_output=True, text=True)
        assert proc.returncode == 0
        assert "usage:" in proc.stdout


class TestConvert:
    def test_mps_to_canonical(self, tmp_path):
        mps = tmp_path / "tiny.mps"
        mps.write_text(TINY_MPS)
        code, out, err = run_cli(["convert", mps, "--out", tmp_path / "t.json"])
        assert code == EXIT_OK, err
        path = result_path(out)
        assert path == tmp_path / "t.json"
        inst = read_canonical(path)
        assert inst.name == "TINY"
        assert inst.n == 2
        assert list(inst.var_kinds) == ["continuous", "integer"]

    def test_default_output_swaps_suffix(self, tmp_path):
        mps = tmp_path / "tiny.mps"
        mps.write_text(TINY_MPS)
        code, out, _ = run_cli(["convert", mps])
        assert code == EXIT_OK
        assert result_path(out) == tmp_path / "tiny.json"

    def test_missing_input_is_data_error(self, tmp_path):
        code, _, err = run_cli(["convert", tmp_path / "nope.mps"])
        assert code == EXIT_DATA
        assert "not found" in err


class TestValidate:
    def test_valid_instance(self, ws, tmp_path):
        code, out, _ = run_cli(["validate", ws / "k8.json",
                                "--out", tmp_path / "report.json"])
        assert code == EXIT_OK
        report = json.loads(result_path(out).read_text())
        assert report["ok"] is True
        assert report["problems"] == []
        assert report["n_variables"] == 8

    def test_reversed_bounds_flagged(self, ws, tmp_path):
        doc = json.loads((ws / "k8.json").read_text())
        doc["variables"]["lower"][0] = 2.0  # above the upper bound of 1
        bad = tmp_path / "bad.json"
        bad.write_text(json.dumps(doc))
        code, out, err = run_cli(["validate", bad,
                                  "--out", tmp_path / "report.json"])
        assert code == EXIT_DATA
        report = json.loads(result_path(out).read_text())
        assert report["ok"] is False
        assert any("exceeds" in p for p in report["problems"])


class TestSolve:
    def test_writes_run_record_and_events(self, ws, tmp_path):
        code, out, err = run_cli(["solve", ws / "k8.json", "--seed", 1,
                                  "--out", tmp_path])
        assert code == EXIT_OK, err
        path = result_path(out)
        doc = json.loads(path.read_text())
        assert doc["format"] == "neuromip-run"
        assert doc["status"] == "optimal"
        assert doc["gap"] == 0.0
        instance = read_canonical(ws / "k8.json")
        assert check_feasible(instance, np.array(doc["incumbent"])).ok
        events = (tmp_path / (path.stem + ".events.csv")).read_text()
        lines = events.strip().splitlines()
        assert lines[0] == "elapsed,primal,dual"
        assert len(lines) == len(doc["events"]) + 1

    def test_fsb_admm_policy(self, ws, tmp_path):
        code, out, _ = run_cli(["solve", ws / "k8.json",
                                "--policy", "fsb-admm", "--seed", 1,
                                "--out", tmp_path])
        assert code == EXIT_OK
        doc = json.loads(result_path(out).read_text())
        assert doc["policy"] == "fsb-admm"
        assert doc["status"] == "optimal"

    def test_deterministic_up_to_timing(self, ws, tmp_path):
        docs = []
        for sub in ("a", "b"):
            code, out, _ = run_cli(["solve", ws / "k8.json", "--seed", 3,
                                    "--out", tmp_path / sub])
            assert code == EXIT_OK
            docs.append(json.loads(result_path(out).read_text()))
        a, b = docs
        for key in ("status", "primal_bound", "dual_bound", "gap",
                    "node_count", "incumbent"):
            assert a[key] == b[key]
        assert [e[1:] for e in a["events"]] == [e[1:] for e in b["events"]]

    def test_target_gap_stops_early(self, ws, tmp_path):
        code, out, _ = run_cli(["solve", ws / "k8.json", "--target-gap", 0.9,
                                "--out", tmp_path])
        assert code == EXIT_OK
        doc = json.loads(result_path(out).read_text())
        assert doc["status"] == "gap_reached"

    def test_bad_policy_is_usage_error(self, ws, tmp_path):
        code, _, err = run_cli(["solve", ws / "k8.json",
                                "--policy", "nonsense", "--out", tmp_path])
        assert code == EXIT_USAGE
        assert "unknown branching policy" in err

    def test_config_file_with_flag_overrides(self, ws, tmp_path):
        cfg = tmp_path / "cfg.json"
        cfg.write_text(json.dumps({"seed": 7, "label": "tuned",
                                   "policy": "fsb:exact"}))
        code, out, _ = run_cli(["solve", ws / "k8.json", "--config", cfg,
                                "--seed", 2, "--out", tmp_path])
        assert code == EXIT_OK
        doc = json.loads(result_path(out).read_text())
        assert doc["seed"] == 2            # flag beats config
        assert doc["label"] == "tuned"     # config beats default
        assert doc["policy"] == "fsb:exact"

    def test_unknown_config_key_is_data_error(self, ws, tmp_path):
        cfg = tmp_path / "cfg.json"
        cfg.write_text(json.dumps({"speed": 11}))
        code, _, err = run_cli(["solve", ws / "k8.json", "--config", cfg])
        assert code == EXIT_DATA
        assert "unknown keys" in err

    def test_calibrated_clock_records_flag(self, ws, tmp_path):
        code, out, err = run_cli(["solve", ws / "k8.json", "--calibrated",
                                  "--out", tmp_path])
        assert code == EXIT_OK, err
        doc = json.loads(result_path(out).read_text())
        assert doc["clock"] == "calibrated"
        assert doc["wall_fallback"] is False


class TestLpBench:
    def test_batch_matches_sequential(self, ws, tmp_path):
        code, out, err = run_cli(["lp-bench", ws / "k8.json",
                                  "--variants", 8, "--iterations", 60,
                                  "--out", tmp_path / "bench.json"])
        assert code == EXIT_OK, err
        doc = json.loads(result_path(out).read_text())
        assert doc["identical"] is True
        assert doc["n_variants"] == 8
        assert doc["speedup"] > 0


class TestGenData:
    def test_family_spec_produces_dataset(self, tmp_path):
        code, out, err = run_cli(["gen-data", "--kind", "branching",
                                  "--instances", FAMILY,
                                  "--out", tmp_path, "--repeats", 1,
                                  "--node-limit", 40, "--seed", 5])
        assert code == EXIT_OK, err
        path = result_path(out)
        index = json.loads((tmp_path / "branching.jsonl.index.json").read_text())
        assert index["count"] > 0
        assert set(index["kind_counts"]) == {"branching"}
        assert path.exists()

    def test_jobs_do_not_change_the_dataset(self, ws, tmp_path):
        outputs = []
        for jobs in (1, 2):
            out_dir = tmp_path / f"j{jobs}"
            code, _, err = run_cli(["gen-data", "--kind", "branching",
                                    "--instances", ws / "instances",
                                    "--out", out_dir, "--repeats", 1,
                                    "--node-limit", 40, "--seed", 5,
                                    "--jobs", jobs])
            assert code == EXIT_OK, err
            outputs.append((out_dir / "branching.jsonl").read_bytes())
        assert outputs[0] == outputs[1]

    def test_diving_kind(self, ws, tmp_path):
        code, out, err = run_cli(["gen-data", "--kind", "diving",
                                  "--instances", ws / "k8.json",
                                  "--out", tmp_path, "--seed", 1])
        assert code == EXIT_OK, err
        index = json.loads((tmp_path / "diving.jsonl.index.json").read_text())
        assert set(index["kind_counts"]) == {"diving"}

    def test_missing_kind_is_usage_error(self, ws, tmp_path):
        code, _, _ = run_cli(["gen-data", "--instances", ws / "k8.json",
                              "--out", tmp_path])
        assert code == EXIT_USAGE

    def test_bad_source_is_data_error(self, tmp_path):
        code, _, err = run_cli(["gen-data", "--kind", "diving",
                                "--instances", tmp_path / "nowhere",
                                "--out", tmp_path])
        assert code == EXIT_DATA
        assert "instance source" in err


class TestTrain:
    def test_branching_model_checkpoint(self, ws):
        model = load_model(ws / "models/branching.npz")
        assert model.config.hidden == 8
        assert model.config.layers == 1
        loss = (ws / "models/loss.csv").read_text().strip().splitlines()
        assert loss[0] == "step,loss"
        assert len(loss) == 21

    def test_coverage_suite_manifest(self, ws):
        manifest = json.loads((ws / "models/diving/models.json").read_text())
        assert manifest["models"] == {"0.25": "diving-c25.npz",
                                      "0.5": "diving-c50.npz"}
        for name in manifest["models"].values():
            model = load_model(ws / "models/diving" / name)
            assert model.config.hidden == 8

    def test_coverage_on_branching_data_rejected(self, ws, tmp_path):
        code, _, err = run_cli(["train", "--data", ws / "data/branching.jsonl",
                                "--coverage", 0.5,
                                "--out", tmp_path / "m.npz"])
        assert code == EXIT_USAGE
        assert "diving data only" in err

    def test_missing_dataset_is_data_error(self, tmp_path):
        code, _, err = run_cli(["train", "--data", tmp_path / "none.jsonl",
                                "--out", tmp_path / "m.npz"])
        assert code == EXIT_DATA


@pytest.fixture(scope="module")
def model_dir(tmp_path_factory):
    d = tmp_path_factory.mktemp("divemodels")
    config = GcnConfig(hidden=4, layers=1)
    for seed in (0, 1):
        save_model(init_model(config, seed=seed), d / f"m{seed}.npz")
    return d


class TestDive:
    def test_sequential_dive_record(self, ws, model_dir, tmp_path):
        code, out, err = run_cli(["dive", ws / "k8.json",
                                  "--models", model_dir, "--mode", "seq",
                                  "--seed", 2, "--out", tmp_path,
                                  "--label", "nd"])
        assert code == EXIT_OK, err
        doc = json.loads(result_path(out).read_text())
        assert doc["format"] == "neuromip-run"
        assert doc["status"] == "completed"
        assert doc["n_submips"] >= 1
        assert doc["label"] == "nd"
        instance = read_canonical(ws / "k8.json")
        if doc["incumbent"] is not None:
            assert check_feasible(instance, np.array(doc["incumbent"])).ok

    def test_parallel_mode(self, ws, model_dir, tmp_path):
        code, out, err = run_cli(["dive", ws / "k8.json",
                                  "--models", model_dir, "--mode", "par",
                                  "--seed", 2, "--out", tmp_path])
        assert code == EXIT_OK, err
        doc = json.loads(result_path(out).read_text())
        assert doc["policy"] == "dive-par"

    def test_missing_models_is_data_error(self, ws, tmp_path):
        code, _, err = run_cli(["dive", ws / "k8.json",
                                "--models", tmp_path / "none",
                                "--out", tmp_path])
        assert code == EXIT_DATA


class TestCutSelect:
    def test_redundant_pool_matches_plain_bound(self, ws, tmp_path):
        instance = read_canonical(ws / "k8.json")
        rows = instance.A.toarray()
        pool = {"rows": [list(2.0 * rows[0]), list(0.5 * rows[1])],
                "rhs": [2.0 * instance.b_u[0], 0.5 * instance.b_u[1]]}
        pool_path = tmp_path / "pool.json"
        pool_path.write_text(json.dumps(pool))
        code, out, err = run_cli(["cut-select", ws / "k8.json",
                                  "--pool", pool_path, "--k", 1,
                                  "--out", tmp_path / "cuts.json"])
        assert code == EXIT_OK, err
        doc = json.loads(result_path(out).read_text())
        assert len(doc["selected"]) == 1
        plain = solve_lp_exact(instance).objective
        assert doc["bound"] == pytest.approx(plain, abs=1e-6)
        assert doc["bound_check"] == pytest.approx(doc["bound"], abs=1e-6)

    def test_malformed_pool_is_data_error(self, ws, tmp_path):
        pool_path = tmp_path / "pool.json"
        pool_path.write_text(json.dumps({"rows": [[1.0, 2.0]], "rhs": [1.0]}))
        code, _, err = run_cli(["cut-select", ws / "k8.json",
                                "--pool", pool_path, "--k", 1,
                                "--out", tmp_path / "cuts.json"])
        assert code == EXIT_DATA
        assert "coefficients" in err


def write_run(path, instance, label, seed, events):
    doc = {"format": "neuromip-run", "version": 1, "instance": instance,
           "label": label, "policy": "x", "seed": seed, "status": "limit",
           "primal_bound": min((e[1] for e in events), default="inf"),
           "dual_bound": "-inf", "gap": "inf", "node_count": 1,
           "elapsed_seconds": 5.0, "incumbent": None,
           "events": [[t, p, d] for t, p, d in events]}
    path.write_text(json.dumps(doc))


class TestEval:
    @pytest.fixture()
    def runs_dir(self, tmp_path):
        d = tmp_path / "runs"
        d.mkdir()
        write_run(d / "a1.json", "i1", "fast", 1, [[1.0, 5.0, 0.0]])
        write_run(d / "a2.json", "i1", "fast", 2, [[2.0, 5.0, 0.0]])
        write_run(d / "b1.json", "i1", "slow", 1, [[4.0, 5.0, 0.0]])
        write_run(d / "b2.json", "i1", "slow", 2, [[3.0, 8.0, 0.0]])
        (d / "stray.json").write_text(json.dumps({"foo": 1}))
        best = tmp_path / "best.json"
        best.write_text(json.dumps({"i1": 5.0}))
        return d, best

    def test_par_table_and_curves(self, runs_dir, tmp_path):
        d, best = runs_dir
        code, out, err = run_cli(["eval", "--runs", d, "--best-known", best,
                                  "--kind", "primal", "--target-gap", 0,
                                  "--out", tmp_path / "ev"])
        assert code == EXIT_OK, err
        manifest = json.loads(result_path(out).read_text())
        assert manifest["par"]["fast"] == pytest.approx(1.5)
        assert manifest["par"]["slow"] == pytest.approx((4.0 + 100000.0) / 2)
        assert manifest["solved"] == {"fast": [2, 2], "slow": [2, 1]}
        table = (tmp_path / "ev/par10.csv").read_text().strip().splitlines()
        assert table[0] == "label,runs,solved,par10"
        assert len(table) == 3

    def test_average_and_survival_values(self, runs_dir, tmp_path):
        d, best = runs_dir
        code, _, _ = run_cli(["eval", "--runs", d, "--best-known", best,
                              "--kind", "primal", "--target-gap", 0,
                              "--out", tmp_path / "ev"])
        assert code == EXIT_OK
        avg = (tmp_path / "ev/average_fast.csv").read_text().strip().splitlines()
        assert avg == ["time,gap", "0.0,1.0", "1.0,0.5", "2.0,0.0"]
        sur = (tmp_path / "ev/survival_fast.csv").read_text().strip().splitlines()
        assert sur[0] == "time,fraction"
        values = {float(r.split(",")[0]): float(r.split(",")[1])
                  for r in sur[1:]}
        assert values[1.0] == 0.5
        assert values[2.0] == 1.0

    def test_plots_and_per_run_curves(self, runs_dir, tmp_path):
        d, best = runs_dir
        code, out, _ = run_cli(["eval", "--runs", d, "--best-known", best,
                                "--kind", "primal", "--out", tmp_path / "ev"])
        assert code == EXIT_OK
        ev = tmp_path / "ev"
        assert (ev / "gap_average.svg").exists()
        assert (ev / "survival.svg").exists()
        assert len(list(ev.glob("curve_*.csv"))) == 4

    def test_positional_runs_dir(self, runs_dir, tmp_path):
        d, best = runs_dir
        code, out, _ = run_cli(["eval", d, "--out", tmp_path / "ev"])
        assert code == EXIT_OK

    def test_empty_dir_is_data_error(self, tmp_path):
        d = tmp_path / "runs"
        d.mkdir()
        code, _, err = run_cli(["eval", "--runs", d, "--out", tmp_path / "ev"])
        assert code == EXIT_DATA
        assert "no run records" in err


class TestPipeline:
    def test_end_to_end_artifacts(self, tmp_path):
        out = tmp_path / "pipe"
        code, stdout, err = run_cli([
            "pipeline", "knapsack:4:seed=3:n_vars=8:n_rows=3", "--out", out,
            "--steps", 10, "--hidden", 8, "--layers", 1, "--repeats", 1,
            "--n-seeds", 1, "--node-limit", 300, "--samples", 1,
            "--gen-node-limit", 80, "--jobs", 2])
        assert code == EXIT_OK, err
        manifest = json.loads(result_path(stdout).read_text())
        assert manifest["format"] == "neuromip-pipeline"
        assert len(manifest["train_instances"]) == 2
        assert len(manifest["test_instances"]) == 2
        assert len(manifest["runs"]) == 2 * 1 * 3
        for rel in (list(manifest["datasets"].values())
                    + [manifest["models"]["branching"], manifest["best_known"],
                       manifest["eval"]] + manifest["runs"]):
            assert (out / rel).exists(), rel
        ev = json.loads((out / manifest["eval"]).read_text())
        assert set(ev["par"]) == {"baseline", "learned-branching",
                                  "neural-diving"}
        assert (out / "instances").is_dir()
        best = json.loads((out / manifest["best_known"]).read_text())
        assert set(best) == set(manifest["test_instances"])


class TestInternalError:
    def test_unexpected_exception_exits_three(self, ws, tmp_path, monkeypatch):
        import neuromip.cli as cli

        def boom(*args, **kwargs):
            raise RuntimeError("wires crossed")

        monkeypatch.setattr(cli, "solve", boom)
        code, _, err = run_cli(["solve", ws / "k8.json", "--out", tmp_path])
        assert code == EXIT_INTERNAL
        assert "wires crossed" in err
