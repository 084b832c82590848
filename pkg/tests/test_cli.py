"""End-to-end checks for the experiment orchestrator.

A module-scoped workspace runs the whole pipeline once at toy settings
(tiny dataset, two epochs, two-iteration plans); the tests then assert
on the artifacts it left behind.  Error paths get fresh directories.
"""

import hashlib
import json

import numpy as np
import pytest

from mamsgm import cli, io, models
from mamsgm.cli import ExperimentConfig, load_config
from mamsgm.training import TrainConfig

TINY = {
    "seed": 5,
    "n_traj": 12,
    "channels": 6,
    "latent": 4,
    "disentangled_latent": 6,
    "plots_per_cell": 1,
    "train": {"epochs": 2, "batch_size": 64},
    "plan": {"restarts": 2, "samples": 2, "segments": 2, "iterations": 3, "lr": 0.1},
    "evaluation": [
        {"method": "tsm-conditional", "opponent": "stationary", "start": "same-side", "episodes": 2},
        {"method": "tsm-disentangled-mi", "opponent": "exploration", "start": "opposite-side", "episodes": 2},
        {"method": "single-step", "opponent": "exploration", "start": "random", "episodes": 2},
        {"method": "random", "opponent": "exploration", "start": "random", "episodes": 2,
         "risk": {"alpha": 0.2, "direction": "averse"}},
    ],
}


def write_config(root, **extra):
    payload = dict(TINY, out_dir=str(root / "out"), **extra)
    path = root / "exp.json"
    path.write_text(json.dumps(payload))
    return path


@pytest.fixture(scope="module")
def workspace(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    cfg = load_config(write_config(root))
    cli.cmd_collect(cfg)
    for variant in cli.VARIANTS:
        cli.cmd_train(cfg, variant)
    cli.cmd_evaluate(cfg)
    cli.cmd_plot(cfg)
    cli.cmd_verify(cfg)
    return root / "out", cfg


def sha256(path):
    return hashlib.sha256(path.read_bytes()).hexdigest()


class TestConfig:
    def test_defaults_follow_desk_preset(self):
        cfg = load_config(None)
        assert cfg.preset == "desk"
        assert cfg.n_traj == 3000
        assert cfg.channels == 16
        assert cfg.train.epochs == 200

    def test_preset_key_in_file(self, tmp_path):
        path = tmp_path / "c.json"
        path.write_text(json.dumps({"preset": "paper"}))
        cfg = load_config(path)
        assert (cfg.n_traj, cfg.channels, cfg.train.epochs) == (30000, 32, 2000)

    def test_flag_beats_file_preset(self, tmp_path):
        path = tmp_path / "c.json"
        path.write_text(json.dumps({"preset": "paper"}))
        cfg = load_config(path, preset="desk")
        assert cfg.n_traj == 3000

    def test_file_keys_beat_preset_numbers(self, tmp_path):
        path = tmp_path / "c.json"
        path.write_text(json.dumps({"preset": "paper", "n_traj": 7, "train": {"epochs": 3}}))
        cfg = load_config(path)
        assert cfg.n_traj == 7
        assert cfg.train.epochs == 3
        # untouched nested fields keep their defaults
        assert cfg.train.batch_size == TrainConfig().batch_size

    def test_override_kwargs_win(self, tmp_path):
        path = tmp_path / "c.json"
        path.write_text(json.dumps({"seed": 3}))
        assert load_config(path, seed=9).seed == 9

    def test_override_dicts_merge_into_nested_blocks(self, tmp_path):
        path = tmp_path / "c.json"
        path.write_text(json.dumps({"train": {"epochs": 3, "lr": 0.5}}))
        cfg = load_config(path, train={"epochs": 7}, plan={"restarts": 2})
        assert (cfg.train.epochs, cfg.train.lr) == (7, 0.5)
        assert cfg.plan.restarts == 2
        with pytest.raises(ValueError, match="unknown plan keys"):
            load_config(None, plan={"restart": 2})

    def test_unknown_keys_rejected(self, tmp_path):
        path = tmp_path / "c.json"
        path.write_text(json.dumps({"n_trajs": 5}))
        with pytest.raises(ValueError, match="unknown config keys"):
            load_config(path)
        path.write_text(json.dumps({"train": {"epoch": 5}}))
        with pytest.raises(ValueError, match="unknown train keys"):
            load_config(path)
        path.write_text(json.dumps({"preset": "huge"}))
        with pytest.raises(ValueError, match="unknown preset"):
            load_config(path)

    def test_hash_tracks_content(self):
        a = ExperimentConfig()
        b = ExperimentConfig(seed=1)
        assert a.hash == ExperimentConfig().hash
        assert a.hash != b.hash


class TestCollect:
    def test_manifest_matches_dataset(self, workspace):
        out, cfg = workspace
        manifest = json.loads((out / "dataset.json").read_text())
        assert manifest["n_trajectories"] == 12
        assert manifest["seed"] == 5
        assert manifest["scenario"] == "predator_prey"
        assert manifest["config_hash"] == cfg.hash
        assert manifest["dataset_sha256"] == sha256(out / "dataset.bin")
        ds = io.read_dataset(out / "dataset.bin")
        assert len(ds) == 12

    def test_rerun_writes_identical_bytes(self, workspace):
        out, cfg = workspace
        before = sha256(out / "dataset.bin")
        cli.cmd_collect(cfg)
        assert sha256(out / "dataset.bin") == before


class TestTrain:
    def test_checkpoints_stamped_and_loadable(self, workspace):
        out, cfg = workspace
        for variant in cli.VARIANTS:
            ck = io.load_checkpoint(out / f"{variant}.ckpt")
            assert ck.variant == variant
            assert ck.config_hash == cfg.hash

    def test_pair_checkpoint_rebuilds_both_models(self, workspace):
        out, _ = workspace
        ck = io.load_checkpoint(out / "tsm-conditional.ckpt")
        assert ck.hyper["kind"] == "pair"
        mx = models.model_from_checkpoint(ck.hyper["x"], ck.tensors, prefix="x.")
        my = models.model_from_checkpoint(ck.hyper["y"], ck.tensors, prefix="y.")
        assert mx.variant == "conditional-x"
        assert my.variant == "conditional-y"
        for model in (mx, my):
            for t in model.params.values():
                assert np.all(np.isfinite(t.data))

    def test_report_csvs_carry_config_hash(self, workspace):
        out, cfg = workspace
        names = ["tsm-conditional_x", "tsm-conditional_y", "tsm-disentangled-mi",
                 "tsm-disentangled-penalty", "single-step", "inverse-dynamics"]
        for name in names:
            lines = (out / f"{name}_train.csv").read_text().splitlines()
            assert lines[0] == f"# config={cfg.hash}"
            assert lines[1] == "epoch,loss,recon,kl,aux,heldout"
            assert len(lines) == 2 + 2  # two epochs

    def test_single_step_summary_splits_regions(self, workspace):
        out, _ = workspace
        summary = json.loads((out / "single-step_train.json").read_text())
        split = summary["region_mse"]
        assert split["heldout_rows"] > 0
        assert split["wall_rows"] + 1 <= split["heldout_rows"]
        assert np.isfinite(split["free_mse"])

    def test_zero_epochs_checkpoint_equals_init(self, tmp_path):
        cfg = load_config(write_config(tmp_path, train={"epochs": 0}))
        cli.cmd_collect(cfg)
        cli.cmd_train(cfg, "tsm-disentangled-mi")
        ck = io.load_checkpoint(tmp_path / "out" / "tsm-disentangled-mi.ckpt")
        sc = cfg.resolve_scenario()
        fresh = models.make_segment_model(
            "disentangled", cfg.channels, cfg.disentangled_latent, sc.segment_length, seed=cfg.seed
        )
        for key, tensor in fresh.params.items():
            np.testing.assert_array_equal(ck.tensors[key], tensor.data)
        summary = json.loads((tmp_path / "out" / "tsm-disentangled-mi_train.json").read_text())
        assert "heldout" not in summary

    def test_dataset_scenario_mismatch_rejected(self, workspace):
        out, cfg = workspace
        from dataclasses import replace

        with pytest.raises(ValueError, match="different scenario"):
            cli.cmd_train(replace(cfg, scenario="safe_zone"), "single-step")

    def test_unknown_variant_rejected(self, workspace):
        _, cfg = workspace
        with pytest.raises(ValueError, match="unknown variant"):
            cli.cmd_train(cfg, "tsm")


class TestEvaluate:
    def test_results_table_shape(self, workspace):
        out, cfg = workspace
        lines = (out / "results.csv").read_text().splitlines()
        assert lines[0] == f"# config={cfg.hash}"
        assert lines[1].startswith("method,start,opponent,direction,alpha,episodes,")
        assert len(lines) == 2 + len(cfg.evaluation)
        averse = lines[-1].split(",")
        assert averse[0] == "random"
        assert (averse[3], averse[4]) == ("averse", "0.2")

    def test_episode_records_saved_per_cell(self, workspace):
        out, cfg = workspace
        bins = sorted((out / "episodes").glob("*.bin"))
        summaries = sorted((out / "episodes").glob("*.json"))
        assert len(bins) == len(summaries) == len(cfg.evaluation)
        first = json.loads(summaries[0].read_text())
        assert first["strategy"] == "tsm-conditional"
        assert len(first["episodes"]) == 2

    def test_rerun_is_deterministic(self, workspace):
        out, cfg = workspace
        before = (out / "results.csv").read_text()
        cli.cmd_evaluate(cfg)
        assert (out / "results.csv").read_text() == before

    def test_empty_matrix_rejected(self, workspace):
        _, cfg = workspace
        from dataclasses import replace

        with pytest.raises(ValueError, match="empty evaluation"):
            cli.cmd_evaluate(replace(cfg, evaluation=()))

    def test_unknown_start_rejected(self, workspace):
        _, cfg = workspace
        from dataclasses import replace

        bad = ({"method": "tsm-conditional", "start": "mars", "episodes": 1},)
        with pytest.raises(ValueError, match="start configuration"):
            cli.cmd_evaluate(replace(cfg, evaluation=bad))

    def test_missing_inverse_model_reported(self, tmp_path):
        cfg = load_config(write_config(tmp_path))
        cli.cmd_collect(cfg)
        cli.cmd_train(cfg, "tsm-conditional")
        with pytest.raises(FileNotFoundError, match="inverse-dynamics"):
            cli.cmd_evaluate(cfg)

    def test_checkpoint_from_other_scenario_rejected(self, tmp_path):
        # a checkpoint carries the hash of the scenario it was fit on;
        # lending it to a different world must fail loudly
        model = models.make_single_step_model(seed=0)
        hyper = dict(models.model_hyper(model), scenario="somewhere-else")
        io.save_checkpoint(
            tmp_path / "single-step.ckpt", "single-step", hyper,
            {k: v.data for k, v in model.params.items()},
        )
        with pytest.raises(ValueError, match="different scenario"):
            cli._load_strategy(tmp_path, "single-step", "here")

    def test_missing_checkpoint_names_the_variant(self, tmp_path):
        with pytest.raises(FileNotFoundError, match="tsm-conditional"):
            cli._load_strategy(tmp_path, "tsm-conditional", "hash")


class TestPlot:
    def test_one_svg_per_cell_with_stamp(self, workspace):
        out, cfg = workspace
        svgs = sorted((out / "plots").glob("*.svg"))
        assert len(svgs) == len(cfg.evaluation) * cfg.plots_per_cell
        for path in svgs:
            lines = path.read_text().splitlines()
            assert lines[0] == f"<!-- config={cfg.hash} -->"
            assert lines[1].startswith("<svg")

    def test_plot_without_episodes_fails(self, tmp_path):
        cfg = load_config(write_config(tmp_path))
        with pytest.raises(FileNotFoundError, match="episode records"):
            cli.cmd_plot(cfg)


class TestVerify:
    def test_report_structure(self, workspace):
        out, cfg = workspace
        report = json.loads((out / "verify.json").read_text())
        assert report["config_hash"] == cfg.hash
        assert report["saddle"]["games"] == 10
        assert report["saddle"]["pass"] is True
        assert report["entangled"]["hypothesis_violated"] is True
        assert report["entangled"]["pass"] is True
        freeze = report["freeze"]
        assert freeze["variant"] == "tsm-disentangled-mi"
        assert freeze["threshold"] == cfg.freeze_threshold
        # two epochs cannot disentangle anything; only the bookkeeping
        # is under test here, so the ratios just have to be positive
        assert all(v > 0 for v in freeze["trained"].values())
        assert all(v > 0 for v in freeze["untrained"].values())

    def test_missing_checkpoint_reported(self, tmp_path):
        cfg = load_config(write_config(tmp_path))
        with pytest.raises(FileNotFoundError, match="tsm-disentangled-mi"):
            cli.cmd_verify(cfg)


class TestMain:
    def test_seed_and_out_flags_override(self, tmp_path, capsys):
        cfg_path = write_config(tmp_path)
        other = tmp_path / "elsewhere"
        rc = cli.main(["collect", "--config", str(cfg_path), "--seed", "9", "--out", str(other)])
        assert rc == 0
        manifest = json.loads((other / "dataset.json").read_text())
        assert manifest["seed"] == 9
        assert str(other / "dataset.bin") in capsys.readouterr().out

    def test_threads_env_var_keeps_bytes(self, tmp_path, monkeypatch, workspace):
        # collection is seed-stream deterministic, so the thread count
        # must not show up in the dataset bytes
        out, _ = workspace
        cfg_path = write_config(tmp_path)
        monkeypatch.setenv("MAMSGM_THREADS", "3")
        cli.main(["collect", "--config", str(cfg_path)])
        assert sha256(tmp_path / "out" / "dataset.bin") == sha256(out / "dataset.bin")

    def test_train_requires_variant(self, tmp_path):
        cfg_path = write_config(tmp_path)
        with pytest.raises(SystemExit):
            cli.main(["train", "--config", str(cfg_path)])
