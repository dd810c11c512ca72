"""
Tests for the command-line runner.
"""

import os
import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent.parent / "src"))

from config_validator import format_flat_config
from datasets import load_dataset_manifest
from main import build_parser, main


@pytest.fixture
def cli_env(tmp_path, monkeypatch):
    """Empty working directory and no TGVFM_* variables."""
    monkeypatch.chdir(tmp_path)
    for key in list(os.environ):
        if key.startswith("TGVFM_"):
            monkeypatch.delenv(key)
    return tmp_path


def _config(tmp_path: Path, **extra) -> str:
    config = {"config_version": 1, "data": {"scene": {"min_size": 2, "max_size": 4}}, **extra}
    path = tmp_path / "config.cfg"
    path.write_text(format_flat_config(config))
    return str(path)


class TestParser:
    """Flag defaults and environment fallbacks."""

    def test_defaults(self, cli_env):
        args = build_parser().parse_args(["train"])
        assert args.out_dir == "runs"
        assert args.config is None
        assert args.resume is False

    def test_environment_fallback(self, cli_env, monkeypatch):
        monkeypatch.setenv("TGVFM_SEED", "7")
        monkeypatch.setenv("TGVFM_K", "1,3")
        args = build_parser().parse_args(["sweep-k"])
        assert args.seed == 7
        assert args.k == [1, 3]

    def test_unknown_study(self, cli_env):
        with pytest.raises(SystemExit):
            build_parser().parse_args(["ablate", "--study", "everything"])

    def test_e2vid_study_presets(self, cli_env, monkeypatch):
        args = build_parser().parse_args(["ablate", "--study", "e2vid"])
        assert args.presets == ["B0", "B1", "B2", "B3", "B4"]
        args = build_parser().parse_args(["ablate", "--study", "e2vid", "--presets", "B0", "B2"])
        assert args.presets == ["B0", "B2"]
        monkeypatch.setenv("TGVFM_PRESETS", "B1,B3")
        assert build_parser().parse_args(["ablate"]).presets == ["B1", "B3"]
        with pytest.raises(SystemExit):
            build_parser().parse_args(["ablate", "--presets", "B9"])


class TestValidateCommand:
    """tgvfm validate."""

    def test_valid(self, cli_env, capsys):
        main(["-c", _config(cli_env), "validate"])
        assert "is valid" in capsys.readouterr().out

    def test_invalid(self, cli_env, capsys):
        with pytest.raises(SystemExit) as exc:
            main(["-c", _config(cli_env, task="detect"), "validate"])
        assert exc.value.code == 1
        assert "task must be one of" in capsys.readouterr().err

    def test_needs_config(self, cli_env, capsys):
        with pytest.raises(SystemExit) as exc:
            main(["validate"])
        assert exc.value.code == 1


class TestSimulateCommand:
    """tgvfm simulate."""

    def test_writes_dataset(self, cli_env, capsys):
        out = cli_env / "data"
        main(["-c", _config(cli_env), "--seed", "3", "simulate", "--out", str(out),
              "--n-sequences", "2", "--size", "16", "--frames", "8"])
        manifest = load_dataset_manifest(out)
        assert manifest["sequences"] == ["seq_0000", "seq_0001"]
        assert "Wrote 2 sequences" in capsys.readouterr().out

    def test_errors_exit_with_one(self, cli_env, capsys):
        with pytest.raises(SystemExit) as exc:
            main(["-c", str(cli_env / "missing.cfg"), "simulate"])
        assert exc.value.code == 1
        assert capsys.readouterr().err.startswith("Error:")


class TestReportCommand:
    """tgvfm report on a missing run."""

    def test_missing_run(self, cli_env):
        with pytest.raises(SystemExit) as exc:
            main(["report", str(cli_env / "runs" / "nothing")])
        assert exc.value.code == 1
