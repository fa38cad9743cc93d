"""End-to-end command pipeline, exit codes, config loading and overrides."""

import json
import math

import pytest

from focusrank.cli import (
    EXIT_OK,
    EXIT_RUNTIME,
    EXIT_VALIDATION,
    _config_hash,
    _parse_tau,
    default_run_config,
    load_run_config,
    main,
)
from focusrank.errors import ConfigInvalidError, MissingArtifactError


def write_config(base_dir, **section_overrides) -> str:
    """A small, fast run config rooted inside base_dir."""
    cfg = {
        "out_dir": str(base_dir / "out"),
        "corpus_dir": str(base_dir / "corpus"),
        "gen": {"projects": 3, "commits_per_project": 6, "seed": 17},
        "provider": {"dimension": 64},
        "balance": {"target_pairs_per_project": 120},
        "train": {"epochs": 30, "h": 16, "batch_size": 32, "early_stop_patience": 5},
    }
    for section, value in section_overrides.items():
        if isinstance(value, dict) and isinstance(cfg.get(section), dict):
            cfg[section].update(value)
        else:
            cfg[section] = value
    path = base_dir / "config.json"
    path.write_text(json.dumps(cfg))
    return str(path)


@pytest.fixture(scope="module")
def pipeline(tmp_path_factory):
    """gen + prepare + train, shared by the read-only tests below."""
    base = tmp_path_factory.mktemp("pipeline")
    config_path = write_config(base)
    assert main(["--config", config_path, "gen"]) == EXIT_OK
    assert main(["--config", config_path, "prepare"]) == EXIT_OK
    assert main(["--config", config_path, "train"]) == EXIT_OK
    return config_path, base / "out", base / "corpus"


class TestPipeline:
    def test_gen_outputs(self, pipeline):
        _, out_dir, corpus_dir = pipeline
        names = sorted(p.name for p in corpus_dir.iterdir())
        assert names == ["manifest.json", "proj00.json", "proj01.json", "proj02.json"]
        stats = json.loads((out_dir / "corpus-stats.json").read_text())
        assert stats["projects"] == 3
        assert stats["versions"] == 3 * 7

    def test_prepare_outputs(self, pipeline):
        _, out_dir, _ = pipeline
        for name in (
            "split.json",
            "pairs.train.jsonl",
            "pairs.train.balanced.jsonl",
            "pairs.val.jsonl",
            "pairs.test.jsonl",
        ):
            assert (out_dir / name).exists(), name
        balanced = (out_dir / "pairs.train.balanced.jsonl").read_text().splitlines()
        assert len(balanced) == 3 * 120

    def test_split_is_temporal(self, pipeline):
        _, out_dir, _ = pipeline
        split = json.loads((out_dir / "split.json").read_text())
        assert split["mode"] == "temporal"
        assert len(split["validation"]) == 3 and len(split["test"]) == 3
        for project, idx in split["test"]:
            assert idx == 5  # last of 6 diffs

    def test_train_writes_checkpoint(self, pipeline):
        _, out_dir, _ = pipeline
        ckpt = json.loads((out_dir / "checkpoint.json").read_text())
        assert ckpt["format"] == "focusrank-checkpoint"
        assert ckpt["d"] == 64
        assert ckpt["provider_fingerprint"] == "hashed:d=64"

    def test_eval_every_approach(self, pipeline):
        config_path, out_dir, _ = pipeline
        for approach in ("nextfocus", "random", "semantic", "cochange"):
            code = main(["--config", config_path, "eval", "--approach", approach])
            assert code == EXIT_OK, approach
            assert (out_dir / f"report-{approach}.csv").exists()
            summary = json.loads((out_dir / f"report-{approach}.json").read_text())
            assert summary["approach"] == approach
            assert summary["anchors"] + summary["skipped_no_positive"] + summary[
                "skipped_no_anchor"
            ] == 3
        assert (out_dir / "cochange.jsonl").exists()

    def test_eval_is_deterministic(self, pipeline):
        config_path, out_dir, _ = pipeline
        assert main(["--config", config_path, "eval", "--approach", "random"]) == EXIT_OK
        first = (out_dir / "report-random.csv").read_bytes()
        assert main(["--config", config_path, "eval", "--approach", "random"]) == EXIT_OK
        assert (out_dir / "report-random.csv").read_bytes() == first

    def test_plot_data_sweeps_radii(self, pipeline):
        config_path, out_dir, _ = pipeline
        code = main(
            ["--config", config_path, "eval", "--approach", "random", "--plot-data"]
        )
        assert code == EXIT_OK
        lines = (out_dir / "plot-random.csv").read_text().splitlines()
        assert lines[0] == "tau,k,precision,prevalence,ratio,margin"
        # default taus: 1, 2, 3, unrestricted; k_max 10 each
        assert len(lines) == 1 + 4 * 10
        taus = {line.split(",")[0] for line in lines[1:]}
        assert taus == {"1.0", "2.0", "3.0", "inf"}

    def test_rank_prints_exactly_k_nodes(self, pipeline, capsys):
        config_path, _, _ = pipeline
        code = main(
            ["--config", config_path, "rank", "--project", "proj00", "--anchor", "n0", "--k", "1"]
        )
        assert code == EXIT_OK
        out = capsys.readouterr().out.strip().splitlines()
        assert len(out) == 1
        assert out[0] != "n0"

    def test_rank_unknown_project_and_anchor(self, pipeline):
        config_path, _, _ = pipeline
        assert (
            main(["--config", config_path, "rank", "--project", "nope", "--anchor", "n0"])
            == EXIT_VALIDATION
        )
        assert (
            main(["--config", config_path, "rank", "--project", "proj00", "--anchor", "ghost"])
            == EXIT_VALIDATION
        )

    def test_manifests_record_config_and_versions_without_timestamps(self, pipeline):
        _, out_dir, _ = pipeline
        manifest = json.loads((out_dir / "manifest-train.json").read_text())
        assert set(manifest) == {"command", "config_sha256", "seeds", "versions", "outputs"}
        assert manifest["command"] == "train"
        assert set(manifest["seeds"]) == {"gen", "split", "balance", "train", "eval"}
        assert set(manifest["versions"]) == {"focusrank", "numpy", "python"}
        assert len(manifest["config_sha256"]) == 64


class TestExitCodes:
    def test_eval_before_train_is_a_validation_error(self, tmp_path, caplog):
        config_path = write_config(tmp_path)
        assert main(["--config", config_path, "gen"]) == EXIT_OK
        assert main(["--config", config_path, "prepare"]) == EXIT_OK
        code = main(["--config", config_path, "eval", "--approach", "nextfocus"])
        assert code == EXIT_VALIDATION
        assert "checkpoint.json not found" in caplog.text
        assert "focusrank train" in caplog.text

    def test_prepare_without_corpus(self, tmp_path):
        config_path = write_config(tmp_path)
        assert main(["--config", config_path, "prepare"]) == EXIT_VALIDATION

    def test_unknown_config_key(self, tmp_path):
        path = tmp_path / "config.json"
        path.write_text(json.dumps({"bogus": 1}))
        assert main(["--config", str(path), "gen"]) == EXIT_VALIDATION

    def test_invalid_approach_flag(self, tmp_path, capsys):
        config_path = write_config(tmp_path)
        code = main(["--config", config_path, "eval", "--approach", "psychic"])
        assert code == EXIT_VALIDATION
        capsys.readouterr()

    def test_invalid_generator_setting_via_set(self, tmp_path):
        config_path = write_config(tmp_path)
        code = main(["--config", config_path, "--set", "gen.projects=0", "gen"])
        assert code == EXIT_VALIDATION

    def test_unreachable_remote_provider_is_a_runtime_error(self, tmp_path):
        config_path = write_config(
            tmp_path,
            provider={
                "kind": "remote",
                "dimension": 64,
                "remote": {"endpoint": "http://127.0.0.1:9/none", "model": "m"},
            },
        )
        assert main(["--config", config_path, "gen"]) == EXIT_OK
        assert main(["--config", config_path, "prepare"]) == EXIT_RUNTIME

    def test_gradcheck_passes(self, capsys):
        assert main(["gradcheck", "--trials", "4"]) == EXIT_OK
        out = capsys.readouterr().out
        assert "4/4 passed" in out
        assert out.count("PASS") == 4


class TestOverrides:
    def test_set_overrides_nested_values(self, tmp_path):
        config_path = write_config(tmp_path)
        code = main(["--config", config_path, "--set", "gen.projects=2", "gen"])
        assert code == EXIT_OK
        projects = [
            p.name for p in (tmp_path / "corpus").glob("proj*.json")
        ]
        assert sorted(projects) == ["proj00.json", "proj01.json"]

    def test_out_flag_redirects_artifacts(self, tmp_path):
        config_path = write_config(tmp_path)
        other = tmp_path / "elsewhere"
        assert main(["--config", config_path, "--out", str(other), "gen"]) == EXIT_OK
        assert (other / "corpus-stats.json").exists()

    def test_seed_flag_reaches_the_generator(self, tmp_path):
        config_path = write_config(tmp_path)
        assert main(["--config", config_path, "--seed", "99", "gen"]) == EXIT_OK
        manifest = json.loads((tmp_path / "corpus" / "manifest.json").read_text())
        assert manifest["config"]["seed"] == 99
        run_manifest = json.loads((tmp_path / "out" / "manifest-gen.json").read_text())
        assert set(run_manifest["seeds"].values()) == {99}


class TestRunConfig:
    def test_defaults_when_no_file_given(self):
        config = load_run_config(None)
        assert config == default_run_config()

    def test_missing_file_rejected(self):
        with pytest.raises(MissingArtifactError):
            load_run_config("/nonexistent/config.json")

    def test_seed_parameter_overrides_every_section(self):
        config = load_run_config(None, seed=123)
        for section in ("gen", "split", "balance", "train", "eval"):
            assert config[section]["seed"] == 123

    def test_set_parses_json_with_string_fallback(self):
        config = load_run_config(
            None,
            set_args=["train.loss.alpha=0.7", "split.mode=cross_project", "eval.tau=2"],
        )
        assert config["train"]["loss"]["alpha"] == 0.7
        assert config["split"]["mode"] == "cross_project"
        assert config["eval"]["tau"] == 2

    def test_grid_section_accepts_known_knobs_only(self):
        config = load_run_config(None, set_args=['grid.learning_rate=[0.01,0.1]'])
        assert config["grid"] == {"learning_rate": [0.01, 0.1]}
        with pytest.raises(ConfigInvalidError):
            load_run_config(None, set_args=["grid.momentum=[0.9]"])

    def test_unknown_key_rejected_with_path(self):
        with pytest.raises(ConfigInvalidError, match="eval.typo"):
            load_run_config(None, set_args=["eval.typo=1"])

    def test_bad_tau_rejected(self):
        with pytest.raises(ConfigInvalidError):
            load_run_config(None, set_args=["eval.tau=-1"])
        with pytest.raises(ConfigInvalidError):
            load_run_config(None, set_args=['eval.tau="sideways"'])

    def test_parse_tau_values(self):
        assert _parse_tau(None, "x") is None
        assert _parse_tau("inf", "x") == math.inf
        assert _parse_tau(2, "x") == 2.0
        with pytest.raises(ConfigInvalidError):
            _parse_tau(True, "x")

    def test_config_hash_ignores_key_order(self):
        a = {"x": 1, "y": {"a": 2, "b": 3}}
        b = {"y": {"b": 3, "a": 2}, "x": 1}
        assert _config_hash(a) == _config_hash(b)
        assert _config_hash(a) != _config_hash({"x": 2, "y": {"a": 2, "b": 3}})
