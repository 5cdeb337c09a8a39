import csv

import numpy as np
import pytest
import torch

from conftest import TINY_INI, run_cli
from pdegen.checkpoint import VAE_MAGIC, CheckpointError, load_checkpoint, save_checkpoint
from pdegen.config import RunConfig
from pdegen.pde_lab import read_container
from pdegen.pipeline import load_tokenizer
from pdegen.plotting import read_pgm


def rows(path):
    with open(path) as fh:
        return list(csv.reader(fh))


class TestConfig:
    def test_roundtrip(self):
        cfg = RunConfig.from_ini(TINY_INI)
        again = RunConfig.from_ini(cfg.to_ini())
        assert again == cfg and again.digest() == cfg.digest()
        assert cfg.interp.grid_size == 32 and cfg.comp.blocks == ["compress_space", "residual"]

    def test_defaults_are_echoed(self):
        text = RunConfig().to_ini()
        assert "[gen_train]" in text and "peak_lr = 0.001" in text

    @pytest.mark.parametrize("text", ["[nope]\na = 1\n", "[data]\nsize = 3\n", "[eval]\nsetting = other\n",
                                      "[data]\nsystem = Burgers\n", "[gen]\npatch = 3\n",
                                      "[eval]\nmembers = 0\n"])
    def test_rejects_invalid(self, text):
        with pytest.raises(ValueError):
            RunConfig.from_ini(text)


class TestCheckpointFormat:
    def test_roundtrip_and_magic(self, tmp_path):
        t = {"a": torch.arange(6.0).reshape(2, 3), "b": torch.tensor(2.5)}
        path = save_checkpoint(tmp_path / "x.ckpt", VAE_MAGIC, ["k = v"], t)
        header, back = load_checkpoint(path, VAE_MAGIC)
        assert header == ["k = v"]
        assert torch.equal(back["a"], t["a"]) and torch.equal(back["b"], t["b"])
        with pytest.raises(CheckpointError):
            load_checkpoint(path, "ENMAGEN1")


class TestPipeline:
    def test_data_files(self, tiny_run):
        d = tiny_run["data"]
        names = sorted(p.name for p in d.glob("*.bin"))
        assert names == ["test_ind.bin", "test_outd.bin", "train_ind.bin"]
        assert read_container(d / "test_outd.bin").regime == "OutD"
        assert (d / "train_ind.txt").read_text().startswith("ENMA1\n")
        seeds = {read_container(p).seed for p in d.glob("*.bin")}
        assert len(seeds) == 3

    def test_loss_csv_rows_equal_steps(self, tiny_run):
        assert rows(tiny_run["vae"] / "vae_loss.csv")[1:] and len(rows(tiny_run["vae"] / "vae_loss.csv")) == 4
        assert len(rows(tiny_run["gen"] / "gen_loss.csv")) == 4

    def test_config_echo(self, tiny_run):
        for d in tiny_run.values():
            assert RunConfig.load(d / "config.ini") == RunConfig.from_ini(TINY_INI)

    def test_rollout_outputs(self, tiny_run):
        pred = read_container(tiny_run["rollout"] / "predictions.bin")
        assert pred.batch_size == 3                       # truth plus two members
        assert pred.nt == 5                               # history 3 + horizon 2
        metrics = rows(tiny_run["rollout"] / "metrics.csv")
        kinds = {r[2] for r in metrics[1:]}
        assert kinds == {"rel_mse", "crps", "rmsce"}
        assert (tiny_run["rollout"] / "metrics.csv").read_bytes() == \
            (tiny_run["evaluate"] / "metrics.csv").read_bytes()

    def test_plot_outputs(self, tiny_run):
        d = tiny_run["plot"]
        for kind in ("pred", "truth", "abserr"):
            img = read_pgm(d / f"traj0000_{kind}.pgm")
            assert img.shape == (5, 128)
        assert rows(d / "ranges.csv")[0] == ["file", "min", "max"]

    def test_resume_continues_steps(self, tiny_run, tiny_config, tmp_path):
        cfg = RunConfig.load(tiny_config)
        cfg.vae_train.steps = 5
        longer = tmp_path / "longer.ini"
        longer.write_text(cfg.to_ini())
        data = tiny_run["data"] / "train_ind.bin"
        out = tmp_path / "resumed"
        assert run_cli("train-vae", "--config", longer, "--data", data, "--resume",
                       tiny_run["vae"] / "vae.ckpt", "--out", out) == 0
        steps = [int(r[0]) for r in rows(out / "vae_loss.csv")[1:]]
        assert steps == [4, 5]
        _, _, meta, _ = load_tokenizer(out / "vae.ckpt")
        assert meta["step"] == "5"


class TestPlotting:
    def test_identical_pair_gives_black_error(self, tmp_path):
        from pdegen.plotting import plot_predictions
        f = np.random.default_rng(0).normal(size=(1, 4, 6, 1)).astype(np.float32)
        plot_predictions(tmp_path, f, f, 1)
        assert not read_pgm(tmp_path / "traj0000_abserr.pgm").any()
        assert np.array_equal(read_pgm(tmp_path / "traj0000_pred.pgm"), read_pgm(tmp_path / "traj0000_truth.pgm"))

    def test_two_dim_frames(self, tmp_path):
        from pdegen.plotting import plot_predictions
        f = np.random.default_rng(0).normal(size=(1, 2, 4, 5, 1)).astype(np.float32)
        plot_predictions(tmp_path, f, f + 1, 2)
        assert read_pgm(tmp_path / "traj0000_t001_pred.pgm").shape == (4, 5)


class TestErrors:
    def test_gen_needs_vae(self, tiny_run, tmp_path, capsys):
        code = run_cli("train-gen", "--data", tiny_run["data"] / "train_ind.bin", "--out", tmp_path)
        err = capsys.readouterr().err
        assert code == 1 and err.count("\n") == 1 and "--vae" in err

    def test_ivp_without_context(self, tiny_run, tiny_config, tmp_path, capsys):
        cfg = RunConfig.load(tiny_config)
        cfg.eval.setting = "ivp"
        path = tmp_path / "ivp.ini"
        path.write_text(cfg.to_ini())
        code = run_cli("rollout", "--config", path, "--data", tiny_run["data"] / "test_ind.bin",
                       "--vae", tiny_run["vae"] / "vae.ckpt", "--gen", tiny_run["gen"] / "gen.ckpt",
                       "--out", tmp_path / "o")
        assert code == 1 and "context" in capsys.readouterr().err

    def test_mismatched_checkpoints(self, tiny_run, tiny_config, tmp_path, capsys):
        other = tmp_path / "vae2"
        assert run_cli("train-vae", "--config", tiny_config, "--seed", 99, "--data",
                       tiny_run["data"] / "train_ind.bin", "--out", other) == 0
        code = run_cli("rollout", "--config", tiny_config, "--data", tiny_run["data"] / "test_ind.bin",
                       "--vae", other / "vae.ckpt", "--gen", tiny_run["gen"] / "gen.ckpt",
                       "--out", tmp_path / "o")
        assert code == 1 and "different tokenizer" in capsys.readouterr().err

    def test_missing_file(self, tmp_path, capsys):
        assert run_cli("evaluate", "--pred", tmp_path / "none.bin", "--out", tmp_path) == 1

    def test_outd_only(self, tmp_path):
        cfg = RunConfig.from_ini(TINY_INI)
        cfg.data.regimes = ["OutD"]
        path = tmp_path / "o.ini"
        path.write_text(cfg.to_ini())
        assert run_cli("gen-data", "--config", path, "--out", tmp_path / "d") == 0
        assert [p.name for p in (tmp_path / "d").glob("*.bin")] == ["test_outd.bin"]

    def test_single_member_has_no_probabilistic_rows(self, tiny_run, tiny_config, tmp_path):
        cfg = RunConfig.load(tiny_config)
        cfg.eval.members = 1
        path = tmp_path / "e1.ini"
        path.write_text(cfg.to_ini())
        assert run_cli("rollout", "--config", path, "--data", tiny_run["data"] / "test_ind.bin",
                       "--vae", tiny_run["vae"] / "vae.ckpt", "--gen", tiny_run["gen"] / "gen.ckpt",
                       "--out", tmp_path / "r") == 0
        assert {r[2] for r in rows(tmp_path / "r" / "metrics.csv")[1:]} == {"rel_mse"}
