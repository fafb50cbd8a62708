"""End-to-end CLI behavior: exit codes, file outputs, idempotency, help text."""

import subprocess
import sys

import numpy as np
import pytest

from hydranet.config import SCHEMA
from hydranet.evaluation import EvalReport
from hydranet.forecasting import read_cube
from hydranet.ingest import deserialize_volume


def run_cli(*args, env=None):
    return subprocess.run(
        [sys.executable, "-m", "hydranet.cli", *map(str, args)],
        capture_output=True,
        text=True,
        env=env,
    )


@pytest.fixture(scope="module")
def workspace(tmp_path_factory):
    """One tensorize -> train -> forecast -> evaluate chain shared by read-only tests."""
    root = tmp_path_factory.mktemp("cli")
    cfg = root / "run.ini"
    cfg.write_text(
        "[data]\ntest_months = 4\n\n"
        "[model]\nlevels = 2\nbase_filters = 8\n\n"
        "[train]\nseed = 11\nepochs = 2\nbatches_per_epoch = 1\nbatch_size = 1\n"
        "checkpoint_every = 2\n"
    )
    volume = root / "vol.zstk"
    r = run_cli(
        "tensorize", "--synthetic", "moving_blob", "--height", 32, "--width", 32,
        "--months", 16, "--seed", 1, "--out", volume,
    )
    assert r.returncode == 0, r.stderr
    r = run_cli("train", "--volume", volume, "--config", cfg, "--out", root / "run")
    assert r.returncode == 0, r.stderr
    r = run_cli(
        "forecast", "--checkpoint", root / "run" / "checkpoint.hydc", "--volume", volume,
        "--horizon", 4, "--samples", 3, "--seed", 2, "--out", root / "fc.zstk",
    )
    assert r.returncode == 0, r.stderr
    r = run_cli(
        "evaluate", "--forecast", root / "fc.zstk", "--truth", volume,
        "--out-dir", root / "eval",
    )
    assert r.returncode == 0, r.stderr
    return root


class TestPipeline:
    def test_volume_file_valid(self, workspace):
        vol = deserialize_volume(workspace / "vol.zstk")
        assert vol.data.shape == (16, 3, 32, 32)

    def test_train_artifacts(self, workspace):
        assert (workspace / "run" / "checkpoint.hydc").exists()
        assert (workspace / "run" / "train_log.jsonl").read_text().count("\n") == 2

    def test_forecast_artifacts(self, workspace):
        cube = read_cube(workspace / "fc.zstk")
        assert cube.samples.shape == (3, 4, 6, 32, 32)
        # warm-up used the train partition, so forecasts start at the hold-out
        assert cube.first_forecast_month_id == 12
        summary = np.load(str(workspace / "fc.zstk") + ".summary.npz")
        assert summary["mean"].shape == (4, 6, 32, 32)

    def test_evaluate_artifacts(self, workspace):
        report = EvalReport.from_csv(workspace / "eval" / "report.csv")
        assert len(report.rows) == 4 * 3 * 4
        assert report.masked_cells == 32 * 32
        for task in ("sb", "ns", "os"):
            assert (workspace / "eval" / f"{task}_metrics.png").stat().st_size > 0

    def test_report_echoes_single_run(self, workspace):
        r = run_cli("report", workspace / "eval")
        assert r.returncode == 0, r.stderr
        assert "sb" in r.stdout and "mse" in r.stdout

    def test_report_missing_dir_errors(self, workspace, tmp_path):
        r = run_cli("report", tmp_path / "nope")
        assert r.returncode == 2


class TestExitCodes:
    def test_malformed_event_row_exits_2_with_line(self, tmp_path):
        bad = tmp_path / "events.csv"
        bad.write_text("row,col,month_id,sb,ns,os\n0,0,0,1,0,0\n1,1,one,0,0,0\n")
        r = run_cli("tensorize", "--events", bad, "--height", 8, "--width", 8, "--out", tmp_path / "v.zstk")
        assert r.returncode == 2
        assert ":3" in r.stderr

    def test_unknown_config_keys_exit_2_listing_all(self, tmp_path, workspace):
        cfg = tmp_path / "bad.ini"
        cfg.write_text("[train]\nepochz = 3\nbatch_size = 0\n")
        r = run_cli("train", "--volume", workspace / "vol.zstk", "--config", cfg, "--out", tmp_path / "r")
        assert r.returncode == 2
        assert "epochz" in r.stderr and "batch_size" in r.stderr

    def test_misaligned_truth_exits_3(self, workspace, tmp_path):
        short = tmp_path / "short.zstk"
        r = run_cli(
            "tensorize", "--synthetic", "moving_blob", "--height", 32, "--width", 32,
            "--months", 8, "--seed", 1, "--out", short,
        )
        assert r.returncode == 0
        r = run_cli(
            "evaluate", "--forecast", workspace / "fc.zstk", "--truth", short,
            "--out-dir", tmp_path / "eval",
        )
        assert r.returncode == 3
        assert "baseline" in r.stderr or "lacks months" in r.stderr

    def test_missing_input_choice_exits_2(self, tmp_path):
        r = run_cli("tensorize", "--out", tmp_path / "v.zstk")
        assert r.returncode == 2

    def test_events_and_explicit_range(self, tmp_path):
        events = tmp_path / "events.csv"
        events.write_text("row,col,month_id,sb,ns,os\n1,1,2,5,0,0\n")
        r = run_cli(
            "tensorize", "--events", events, "--height", 4, "--width", 4,
            "--first-month", 0, "--last-month", 3, "--out", tmp_path / "v.zstk",
        )
        assert r.returncode == 0, r.stderr
        vol = deserialize_volume(tmp_path / "v.zstk")
        assert vol.months == 4
        assert vol.data[2, 0, 1, 1] > 0


class TestIdempotency:
    def test_tensorize_is_bit_stable(self, tmp_path):
        args = (
            "tensorize", "--synthetic", "diffusion", "--height", 16, "--width", 16,
            "--months", 6, "--seed", 5,
        )
        run_cli(*args, "--out", tmp_path / "a.zstk")
        run_cli(*args, "--out", tmp_path / "b.zstk")
        assert (tmp_path / "a.zstk").read_bytes() == (tmp_path / "b.zstk").read_bytes()

    def test_forecast_is_bit_stable(self, workspace, tmp_path):
        for name in ("a", "b"):
            r = run_cli(
                "forecast", "--checkpoint", workspace / "run" / "checkpoint.hydc",
                "--volume", workspace / "vol.zstk", "--horizon", 2, "--samples", 2,
                "--seed", 7, "--out", tmp_path / f"{name}.zstk",
            )
            assert r.returncode == 0, r.stderr
        assert (tmp_path / "a.zstk").read_bytes() == (tmp_path / "b.zstk").read_bytes()


class TestParserDefaults:
    def test_forecast_defaults_match_production_scale(self):
        from hydranet.cli import build_parser

        args = build_parser().parse_args(
            ["forecast", "--checkpoint", "c", "--volume", "v", "--out", "o"]
        )
        assert args.samples == 128
        assert args.horizon == 36

    def test_tensorize_grid_defaults(self):
        from hydranet.cli import build_parser

        args = build_parser().parse_args(["tensorize", "--synthetic", "diffusion", "--out", "o"])
        assert (args.height, args.width) == (180, 180)
        assert args.cell_size == 0.5
        assert args.month0 == "1990-01"


class TestHelp:
    def test_help_lists_every_config_key_and_default(self):
        r = run_cli("--help")
        assert r.returncode == 0
        for section, keys in SCHEMA.items():
            for key in keys:
                assert f"{section}.{key} = " in r.stdout, f"missing {section}.{key}"

    def test_env_prefix_documented(self):
        r = run_cli("--help")
        assert "HYDRANET_" in r.stdout

    def test_seed_override_changes_trajectory(self, workspace, tmp_path):
        cfg = tmp_path / "run.ini"
        cfg.write_text(
            "[data]\ntest_months = 4\n\n[model]\nlevels = 2\nbase_filters = 8\n\n"
            "[train]\nseed = 11\nepochs = 1\nbatches_per_epoch = 1\nbatch_size = 1\ncheckpoint_every = 1\n"
        )
        r1 = run_cli("train", "--volume", workspace / "vol.zstk", "--config", cfg,
                     "--out", tmp_path / "r1", "--seed", 1)
        r2 = run_cli("train", "--volume", workspace / "vol.zstk", "--config", cfg,
                     "--out", tmp_path / "r2", "--seed", 2)
        assert r1.returncode == 0 and r2.returncode == 0
        a = (tmp_path / "r1" / "checkpoint.hydc").read_bytes()
        b = (tmp_path / "r2" / "checkpoint.hydc").read_bytes()
        assert a != b
