import json
from pathlib import Path

import numpy as np
import pytest

from boxal.baselines import entropy_select
from boxal.cli import main
from boxal.records import iter_pool_file, parse_pool, parse_selection

REPO_ROOT = Path(__file__).resolve().parents[1]
EXAMPLE_CONFIG = REPO_ROOT / "configs" / "example_loop.cfg"


def run_cli(*argv):
    return main([str(a) for a in argv])


def gen_pool(tmp_path, n=120, classes=3, seed=7, name="pool.jsonl"):
    out = tmp_path / name
    code = run_cli("gen", "--n", n, "--classes", classes, "--seed", seed, "--out", out)
    assert code == 0
    return out


class TestGen:
    def test_writes_pool_and_scenes(self, tmp_path, capsys):
        out = gen_pool(tmp_path, n=50)
        assert out.exists()
        scenes = out.with_suffix(".scenes.json")
        assert scenes.exists()
        assert "wrote 50 records" in capsys.readouterr().out
        records = parse_pool(iter_pool_file(out), num_classes=3, mc_pass_count=5)
        assert len(records) == 50

    def test_same_flags_identical_files(self, tmp_path):
        a = gen_pool(tmp_path, name="a.jsonl")
        b = gen_pool(tmp_path, name="b.jsonl")
        assert a.read_bytes() == b.read_bytes()
        assert a.with_suffix(".scenes.json").read_bytes() == b.with_suffix(
            ".scenes.json"
        ).read_bytes()

    def test_n_zero_is_usage_error(self, tmp_path):
        with pytest.raises(SystemExit) as err:
            run_cli("gen", "--n", 0, "--classes", 3, "--out", tmp_path / "x.jsonl")
        assert err.value.code == 2

    def test_bad_spec_weights_config_error(self, tmp_path):
        spec = tmp_path / "spec.json"
        spec.write_text(json.dumps({
            "classes": [
                {"weight": 0.9, "boxes_mean": 2, "density_log_mean": 4,
                 "density_log_sigma": 0.5, "size_mean": [4, 2, 1.5]},
                {"weight": 0.5, "boxes_mean": 1, "density_log_mean": 3,
                 "density_log_sigma": 0.5, "size_mean": [1, 1, 2]},
            ]
        }))
        code = run_cli("gen", "--n", 10, "--classes", 2, "--spec", spec,
                       "--out", tmp_path / "x.jsonl")
        assert code == 2


class TestSelect:
    def test_crb_round_respects_stage_chain(self, tmp_path):
        pool = gen_pool(tmp_path)
        out = tmp_path / "sel.json"
        code = run_cli("select", "--pool", pool, "--strategy", "crb", "--classes", 3,
                       "--k1", 40, "--k2", 25, "--nr", 10, "--seed", 1, "--out", out)
        assert code == 0
        rnd = parse_selection(out.read_text())
        s1, s2, s3 = rnd.stage_sizes
        assert s1 >= s2 >= s3 == len(rnd.selected_ids) == 10

    def test_k2_above_k1_rejected_before_work(self, tmp_path):
        pool = tmp_path / "missing.jsonl"  # never touched: config check fires first
        code = run_cli("select", "--pool", pool, "--strategy", "crb", "--classes", 3,
                       "--k1", 10, "--k2", 20, "--nr", 5, "--out", tmp_path / "s.json")
        assert code == 2

    def test_entropy_matches_library_bit_for_bit(self, tmp_path):
        pool_path = gen_pool(tmp_path)
        out = tmp_path / "sel.json"
        code = run_cli("select", "--pool", pool_path, "--strategy", "entropy",
                       "--classes", 3, "--nr", 12, "--seed", 0, "--out", out)
        assert code == 0
        rnd = parse_selection(out.read_text())
        records = parse_pool(iter_pool_file(pool_path), num_classes=3)
        assert rnd.selected_ids == entropy_select(records, 12, 3).selected_ids

    def test_mc_reg_missing_passes_names_field_and_cloud(self, tmp_path, capsys):
        pool = tmp_path / "bare.jsonl"
        pool.write_text('{"cloud_id": "only", "boxes": []}\n')
        code = run_cli("select", "--pool", pool, "--strategy", "mc_reg",
                       "--classes", 3, "--nr", 1, "--out", tmp_path / "s.json")
        assert code == 3
        err = capsys.readouterr().err
        assert "mc_passes" in err and "only" in err

    def test_crb_missing_embeddings_is_data_error(self, tmp_path, capsys):
        pool = tmp_path / "bare.jsonl"
        pool.write_text('{"cloud_id": "solo", "boxes": []}\n')
        code = run_cli("select", "--pool", pool, "--strategy", "crb", "--classes", 3,
                       "--k1", 2, "--k2", 1, "--nr", 1, "--out", tmp_path / "s.json")
        assert code == 3
        assert "gradient_embedding" in capsys.readouterr().err


class TestLoop:
    def test_bundled_example_config_completes(self, tmp_path, capsys):
        out_dir = tmp_path / "run"
        code = run_cli("loop", "--config", EXAMPLE_CONFIG, "--out-dir", out_dir)
        assert code == 0
        assert (out_dir / "manifest.json").exists()
        assert (out_dir / "metrics.csv").exists()
        assert (out_dir / "round_000.json").exists()
        assert (out_dir / "round_001.json").exists()
        manifest = json.loads((out_dir / "manifest.json").read_text())
        assert len(manifest["rounds"]) == 2

    def test_two_runs_identical_outputs(self, tmp_path):
        dirs = []
        for name in ("r1", "r2"):
            out_dir = tmp_path / name
            assert run_cli("loop", "--config", EXAMPLE_CONFIG, "--out-dir", out_dir) == 0
            dirs.append(out_dir)
        for fname in ("manifest.json", "metrics.csv", "round_000.json"):
            assert (dirs[0] / fname).read_bytes() == (dirs[1] / fname).read_bytes()

    def test_tight_budget_truncation_in_manifest(self, tmp_path):
        cfg = tmp_path / "tight.cfg"
        cfg.write_text(EXAMPLE_CONFIG.read_text() + "budget_boxes = 3\n")
        out_dir = tmp_path / "run"
        assert run_cli("loop", "--config", cfg, "--out-dir", out_dir) == 0
        manifest = json.loads((out_dir / "manifest.json").read_text())
        assert manifest["early_stop"]["reason"] == "budget_exhausted"
        assert manifest["budget"]["spent"] <= 3

    def test_config_parse_error_diagnoses_line(self, tmp_path, capsys):
        cfg = tmp_path / "bad.cfg"
        cfg.write_text("num_classes = 3\nwhat even is this line\n")
        assert run_cli("loop", "--config", cfg) == 2
        assert ":2:" in capsys.readouterr().err


class TestStats:
    def test_entropy_csv_columns(self, tmp_path):
        pool = gen_pool(tmp_path, n=30)
        out = tmp_path / "stats.csv"
        assert run_cli("stats", "--pool", pool, "--classes", 3, "--out", out) == 0
        lines = out.read_text().strip().splitlines()
        assert lines[0] == "cloud_id,entropy,n_boxes"
        assert len(lines) == 31

    def test_distance_medoid_and_greedy_dumps(self, tmp_path):
        pool = gen_pool(tmp_path, n=25)
        dist_out = tmp_path / "dist.csv"
        med_out = tmp_path / "medoids.csv"
        greedy_out = tmp_path / "greedy.csv"
        code = run_cli(
            "stats", "--pool", pool, "--classes", 3, "--out", tmp_path / "e.csv",
            "--distances-out", dist_out, "--medoids-out", med_out, "--k2", 5,
            "--greedy-out", greedy_out, "--k1", 10, "--nr", 4,
        )
        assert code == 0
        assert len(dist_out.read_text().splitlines()) == 26
        assert med_out.read_text().splitlines()[0] == "medoid_index,cloud_id"
        header = greedy_out.read_text().splitlines()[0]
        assert header == "step,chosen_id,objective,class_id,d,d_bar"


class TestBench:
    def test_smoke_and_csv(self, tmp_path, capsys):
        out = tmp_path / "bench.csv"
        code = run_cli("bench", "--sizes", "60,120", "--strategy", "rand",
                       "--seed", 2, "--nr", 5, "--repeats", 1, "--out", out)
        assert code == 0
        lines = out.read_text().strip().splitlines()
        assert lines[0] == "n,strategy,seconds"
        assert len(lines) == 3
        assert "growth exponent" in capsys.readouterr().out


class TestReport:
    def test_renders_figures(self, tmp_path):
        out_dir = tmp_path / "run"
        assert run_cli("loop", "--config", EXAMPLE_CONFIG, "--out-dir", out_dir) == 0
        bench_csv = tmp_path / "bench.csv"
        assert run_cli("bench", "--sizes", "60,120", "--strategy", "rand",
                       "--seed", 2, "--nr", 5, "--repeats", 1, "--out", bench_csv) == 0
        figs = tmp_path / "figs"
        code = run_cli("report", "--metrics", out_dir / "metrics.csv",
                       "--bench", bench_csv, "--out-dir", figs)
        assert code == 0
        assert (figs / "label_kl.png").exists()
        assert (figs / "density_score.png").exists()
        assert (figs / "bench_times.png").exists()

    def test_report_without_inputs_is_usage_error(self, tmp_path):
        assert run_cli("report", "--out-dir", tmp_path / "figs") == 2


def test_loop_from_pool_and_scenes_files(tmp_path):
    pool = gen_pool(tmp_path, n=80, seed=13)
    cfg = tmp_path / "file.cfg"
    cfg.write_text(
        "num_classes = 3\nk1 = 20\nk2 = 15\nnr = 8\nrounds = 2\nseed = 13\n"
        f"strategy = crb\npool = {pool}\nscenes = {pool.with_suffix('.scenes.json')}\n"
    )
    out_dir = tmp_path / "run"
    assert run_cli("loop", "--config", cfg, "--out-dir", out_dir) == 0
    manifest = json.loads((out_dir / "manifest.json").read_text())
    assert manifest["config"]["pool_size"] == 80
