import json
from pathlib import Path

import pytest

from romda.errors import ConfigError
from romda.pipeline import cli
from romda.pipeline.config import PipelineConfig, apply_overrides
from romda.pipeline.manifest import MANIFEST, RunManifest
from romda.pipeline.stages import STAGES

SMOKE = Path(__file__).resolve().parents[1] / "configs" / "smoke.json"
DEFAULT = Path(__file__).resolve().parents[1] / "configs" / "default.json"

CSV_OUTPUTS = ("train_history.csv", "evaluation.csv", "assimilation_error.csv",
               "assimilation_summary.csv", "finetune_comparison.csv", "finetune_history.csv",
               "moment_report.csv", "report_metrics.csv")


def _run(tmp_path, name, *extra):
    out = tmp_path / name
    code = cli.main(["all", "--config", str(SMOKE), "--out", str(out), *extra])
    return code, out


@pytest.fixture(scope="module")
def smoke_runs(tmp_path_factory):
    base = tmp_path_factory.mktemp("runs")
    a = _run(base, "a")
    b = _run(base, "b")
    return a, b


def test_end_to_end_manifest_lists_every_stage(smoke_runs):
    (code, out), _ = smoke_runs
    assert code == 0
    manifest = RunManifest.load(out)
    assert list(manifest.stages) == list(STAGES)
    assert manifest.missing(out) == []
    assert manifest.config_hash == PipelineConfig.load(SMOKE).digest()
    assert set(manifest.versions) >= {"romda", "numpy", "scipy", "python"}
    for name in CSV_OUTPUTS:
        assert (out / name).stat().st_size > 0
    assert any(p.suffix == ".svg" for p in out.iterdir())


def test_equal_seeds_give_byte_identical_csv(smoke_runs):
    (_, a), (_, b) = smoke_runs
    for name in CSV_OUTPUTS:
        assert (a / name).read_bytes() == (b / name).read_bytes(), name
    assert (a / "model.ckpt").read_bytes() == (b / "model.ckpt").read_bytes()


def test_rerunning_a_stage_reproduces_its_outputs(smoke_runs):
    (_, out), _ = smoke_runs
    before = {n: (out / n).read_bytes() for n in ("evaluation.csv", "assimilation_error.csv")}
    assert cli.main(["evaluate", "--config", str(SMOKE), "--out", str(out)]) == 0
    assert cli.main(["assimilate", "--config", str(SMOKE), "--out", str(out)]) == 0
    for name, data in before.items():
        assert (out / name).read_bytes() == data
    assert list(RunManifest.load(out).stages) == list(STAGES)


def test_different_seed_changes_outputs(tmp_path, smoke_runs):
    (_, a), _ = smoke_runs
    code, out = _run(tmp_path, "c", "--seeds.train=11")
    assert code == 0
    assert (out / "train_history.csv").read_bytes() != (a / "train_history.csv").read_bytes()


def test_output_root_from_environment(tmp_path, monkeypatch):
    monkeypatch.setenv(cli.OUTPUT_ENV, str(tmp_path / "env_run"))
    assert cli.main(["generate", "--config", str(SMOKE)]) == 0
    assert (tmp_path / "env_run" / MANIFEST).exists()
    assert (tmp_path / "env_run" / "corpus" / "manifest.json").exists()


def test_validation_error_exits_2_with_field_path(tmp_path, capsys):
    code = cli.main(["generate", "--config", str(SMOKE), "--out", str(tmp_path), "--n_members=1"])
    assert code == 2
    assert "n_members" in capsys.readouterr().err
    code = cli.main(["generate", "--config", str(SMOKE), "--out", str(tmp_path), "--rom.nope=3"])
    assert code == 2
    assert "rom.nope" in capsys.readouterr().err
    assert cli.main(["generate", "--out", str(tmp_path), "stray"]) == 2


def test_missing_input_exits_1(tmp_path, capsys):
    assert cli.main(["train", "--config", str(SMOKE), "--out", str(tmp_path)]) == 1
    assert "generate" in capsys.readouterr().err


def test_bad_json_config_exits_2(tmp_path):
    bad = tmp_path / "bad.json"
    bad.write_text("{not json")
    assert cli.main(["generate", "--config", str(bad), "--out", str(tmp_path)]) == 2


def test_config_round_trip():
    for cfg in (PipelineConfig(), PipelineConfig.load(SMOKE)):
        again = PipelineConfig.loads(cfg.dumps())
        assert again == cfg
        assert again.digest() == cfg.digest()


def test_shipped_default_matches_builtin_defaults():
    assert PipelineConfig.load(DEFAULT) == PipelineConfig()


def test_overrides_parse_json_literals_and_reject_unknown_keys():
    doc = apply_overrides(PipelineConfig().to_dict(),
                          ["--rom.epochs=50", "retrain.variant=full", "xi_eval=[100, 140]"])
    cfg = PipelineConfig.from_dict(doc)
    assert cfg.rom["epochs"] == 50 and cfg.retrain.variant == "full"
    assert cfg.xi_eval == [100.0, 140.0]
    with pytest.raises(ConfigError) as err:
        apply_overrides(PipelineConfig().to_dict(), ["flow.bogus.x=1"])
    assert err.value.path == "flow.bogus"
    with pytest.raises(ConfigError):
        apply_overrides(PipelineConfig().to_dict(), ["epsilon"])


@pytest.mark.parametrize("doc,path", [
    ({"epsilon": 0.0}, "epsilon"),
    ({"xi_train": [50.0]}, "xi_train"),
    ({"retrain": {"variant": "bogus"}}, "retrain"),
    ({"rom": {"d_h": 10, "n_heads": 3}}, "rom"),
    ({"unknown": 1}, "unknown"),
])
def test_invalid_configs_report_field_path(doc, path):
    with pytest.raises(ConfigError) as err:
        PipelineConfig.from_dict(doc)
    assert err.value.path == path


def test_config_file_is_written_to_run_dir(smoke_runs):
    (_, out), _ = smoke_runs
    assert json.loads((out / "config.json").read_text()) == PipelineConfig.load(SMOKE).to_dict()
