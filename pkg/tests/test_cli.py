import csv
import os
from pathlib import Path

import numpy as np
import pytest

from tapsnn.cli import load_run, main, parse_seeds, run_dir_for, runs_root
from tapsnn.config import RunConfig


def test_parse_seeds_forms():
    assert parse_seeds("0..4") == [0, 1, 2, 3, 4]
    assert parse_seeds("3,5,9") == [3, 5, 9]
    assert parse_seeds("7") == [7]


def test_runs_root_env_var(monkeypatch, tmp_path):
    monkeypatch.setenv("TAPSNN_RUNS", str(tmp_path / "elsewhere"))
    assert runs_root(None) == tmp_path / "elsewhere"
    assert runs_root("explicit") == Path("explicit")


class TestConfigRoundTrip:
    def test_lossless(self):
        cfg = RunConfig(env="Pendulum-P", cell="lif", tap=False, t_inner=3, seed=11,
                        steps=123, lr=1.5e-4, updates_per_step=0.25)
        again = RunConfig.from_text(cfg.to_text())
        assert again == cfg

    def test_unknown_key_rejected(self):
        with pytest.raises(ValueError, match="unknown key"):
            RunConfig.from_text("env = CartPole-V\nbogus = 3\n")

    def test_malformed_line_rejected(self):
        with pytest.raises(ValueError, match="expected"):
            RunConfig.from_text("env CartPole-V\n")

    def test_bool_parsing_strict(self):
        with pytest.raises(ValueError):
            RunConfig.from_text("tap = yes\n")

    def test_stamp_fills_version(self):
        from tapsnn import __version__

        assert RunConfig().stamped().version == __version__


@pytest.fixture(scope="module")
def tiny_run(tmp_path_factory):
    """One tiny but real training run through the CLI."""
    root = tmp_path_factory.mktemp("runs")
    rc = main(["train", "--env", "CartPole-V", "--cell", "grsn", "--seeds", "0",
               "--steps", "220", "--warmup", "64", "--batch-size", "4",
               "--seq-len", "8", "--eval-interval", "2", "--eval-episodes", "2",
               "--out", str(root), "--quiet"])
    assert rc == 0
    return root / "CartPole-V-grsn" / "0"


class TestTrainArtifacts:
    def test_layout(self, tiny_run):
        assert (tiny_run / "curve.csv").exists()
        assert (tiny_run / "ckpt.bin").exists()
        assert (tiny_run / "config.snapshot").exists()

    def test_curve_csv_schema(self, tiny_run):
        rows = list(csv.reader((tiny_run / "curve.csv").open()))
        assert rows[0] == ["step", "seed", "mean_return", "std_return"]
        assert len(rows) > 1
        assert all(r[1] == "0" for r in rows[1:])

    def test_snapshot_reproduces_run(self, tiny_run, tmp_path):
        cfg = RunConfig.from_text((tiny_run / "config.snapshot").read_text())
        from tapsnn.cli import train_one

        out = tmp_path / "again"
        train_one(cfg, out, quiet=True)
        assert (out / "curve.csv").read_text() == (tiny_run / "curve.csv").read_text()

    def test_checkpoint_loads_back(self, tiny_run):
        trainer, cfg = load_run(tiny_run)
        assert cfg.env == "CartPole-V"
        assert set(trainer.networks()) == {"actor", "q1", "q2"}

    def test_eval_command(self, tiny_run, capsys):
        rc = main(["eval", "--run-dir", str(tiny_run.parent), "--episodes", "2"])
        assert rc == 0
        out = capsys.readouterr().out
        assert "over 1 seeds" in out
        assert (tiny_run.parent / "eval.csv").exists()

    def test_energy_command(self, tiny_run, capsys, tmp_path):
        out_csv = tmp_path / "energy.csv"
        rc = main(["energy", "--run-dir", str(tiny_run), "--baseline-dir",
                   str(tiny_run), "--samples", "16", "--out", str(out_csv)])
        assert rc == 0
        printed = capsys.readouterr().out
        assert "saved vs baseline" in printed
        assert out_csv.exists()

    def test_analyze_command(self, tmp_path, capsys):
        rc = main(["analyze", "--out", str(tmp_path / "an"), "--episodes", "2"])
        assert rc == 0
        printed = capsys.readouterr().out
        assert printed.count("PASS") == 4
        assert (tmp_path / "an" / "distributions.csv").exists()
        assert (tmp_path / "an" / "extrema.csv").exists()

    def test_version_flag(self, capsys):
        with pytest.raises(SystemExit) as exc:
            main(["--version"])
        assert exc.value.code == 0


def test_ablate_command(tmp_path, capsys):
    rc = main(["ablate", "--env", "CartPole-V", "--cell", "grsn", "--seeds", "0",
               "--steps", "120", "--t-inner", "4", "--out", str(tmp_path)])
    assert rc == 0
    rows = list(csv.reader((tmp_path / "ablate-CartPole-V-grsn.csv").open()))
    assert rows[0][0] == "mode"
    by_mode = {r[0]: r for r in rows[1:]}
    tap_updates = int(by_mode["tap"][3])
    rate_updates = int(by_mode["rate4"][3])
    assert rate_updates == 4 * tap_updates


def test_unknown_env_fails_cleanly(tmp_path):
    with pytest.raises(ValueError):
        main(["train", "--env", "Nope-P", "--seeds", "0", "--steps", "10",
              "--out", str(tmp_path)])


def test_config_file_with_flag_override(tmp_path):
    cfg = RunConfig(env="CartPole-V", cell="grsn", steps=150, warmup_steps=50,
                    batch_size=4, seq_len=8, eval_interval_episodes=100,
                    eval_episodes=2)
    cfg_path = tmp_path / "base.cfg"
    cfg_path.write_text(cfg.to_text())
    rc = main(["train", "--env", "CartPole-V", "--config", str(cfg_path),
               "--seeds", "1", "--lr", "0.001", "--out", str(tmp_path), "--quiet"])
    assert rc == 0
    snap = RunConfig.from_text(
        (tmp_path / "CartPole-V-grsn" / "1" / "config.snapshot").read_text())
    assert snap.steps == 150      # from the file
    assert snap.lr == 0.001       # flag wins
    assert snap.seed == 1
