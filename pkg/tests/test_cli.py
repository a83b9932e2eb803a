import dataclasses
import os

import pytest

from easycore.cli.commands import COMMANDS, EXIT_OK, EXIT_RUNTIME, EXIT_VALIDATION
from easycore.cli.config import apply_overrides, config_digest, load_config, validate, worker_count
from easycore.cli.main import build_parser, flag_assignments, main
from easycore.cli.manifest import read_manifest
from easycore.core.coreset import read_scores, read_selection
from easycore.core.io import read_table, read_yaml
from easycore.errors import ValidationError

TINY = """
seed = 3

[dataset.clusters]
centers = [[-3.0, 0.0], [3.0, 0.0]]
train_counts = [20, 20]
test_counts = [10, 10]
stds = [0.5, 0.5]

[model]
input_dim = 2
hidden_dim = 8
num_blocks = 1
num_classes = 2

[train]
epochs = 2
batch_size = 16
initial_lr = 0.05

[train.scheduler]
kind = "cosine"
t_max = 2

[attack]
epsilon = 0.5
steps = 2

[select]
method = "easycore"
fraction = 0.5

[analysis]
bins = 4
histogram_bins = 5
resolution = 12
lemma_batches = 3
svg = false
"""


@pytest.fixture
def tiny_config(tmp_path):
    path = tmp_path / "tiny.toml"
    path.write_text(TINY)
    return str(path)


def run(config, out, *argv):
    return main([argv[0], "--config", config, "--output", str(out), "-q", *argv[1:]])


# -- configuration -------------------------------------------------------------

def test_defaults_and_seed_injection():
    cfg = validate({"seed": 7})
    assert cfg.model.parameter_count() == 1_317_122
    assert cfg.mode == "standard"
    assert cfg.train.seed == cfg.attack.start_seed == cfg.select.seed == 7
    assert cfg.trades.inner_attack.start_seed == 7
    assert cfg.trades.inner_attack.objective == "kl-to-clean"
    assert cfg.dataset.clusters.train_counts == (100, 100, 400, 400, 100, 100)


def test_all_problems_are_reported_together():
    raw = {"bogus": 1, "model": {"hidden_dim": 0}, "train": {"mode": "adversarial", "epochs": "ten"},
           "analysis": {"split": "valid"}}
    with pytest.raises(ValidationError) as err:
        validate(raw)
    assert len(err.value.problems) >= 5
    text = str(err.value)
    assert "bogus" in text and "hidden_dim" in text and "train.epochs" in text and "analysis.split" in text


def test_trades_section():
    cfg = validate({"train": {"mode": "trades"}, "trades": {"beta": 3.0, "epsilon": 0.25, "steps": 4}})
    assert cfg.mode == "trades"
    assert cfg.trades.beta == 3.0
    assert (cfg.trades.inner_attack.epsilon, cfg.trades.inner_attack.steps) == (0.25, 4)
    assert cfg.trades.inner_attack.random_start


def test_attack_run_keys_are_split_from_the_attack():
    cfg = validate({"attack": {"split": "train", "batch_size": 32, "epsilon": 0.1}})
    assert (cfg.attack_run.split, cfg.attack_run.batch_size) == ("train", 32)
    assert cfg.attack.epsilon == 0.1


def test_overrides():
    raw = {"train": {"epochs": 5}}
    out = apply_overrides(raw, ["train.epochs=7", "select.method=uniform", 'train.scheduler.kind="step"'])
    assert out["train"]["epochs"] == 7
    assert out["select"]["method"] == "uniform"
    assert out["train"]["scheduler"]["kind"] == "step"
    assert raw == {"train": {"epochs": 5}}
    with pytest.raises(ValidationError):
        apply_overrides(raw, ["noequals"])
    with pytest.raises(ValidationError):
        apply_overrides(raw, ["train.epochs.x=1"])


def test_flag_assignments_come_after_set():
    args = build_parser().parse_args(["select", "--set", "select.fraction=0.3", "--fraction", "0.4", "--seed", "2"])
    assert flag_assignments(args) == ["seed=2", "select.fraction=0.4"]
    raw = apply_overrides({}, list(args.overrides) + flag_assignments(args))
    assert raw["select"]["fraction"] == 0.4


def test_digest_ignores_workers_only():
    cfg = validate({"train": {"epochs": 3}})
    assert config_digest(cfg) == config_digest(validate({"train": {"epochs": 3}}))
    threaded = dataclasses.replace(cfg, train=dataclasses.replace(cfg.train, workers=8))
    assert config_digest(threaded) == config_digest(cfg)
    assert config_digest(validate({"train": {"epochs": 4}})) != config_digest(cfg)


def test_worker_count():
    assert worker_count({}) == (os.cpu_count() or 1)
    assert worker_count({"EASYCORE_THREADS": "3"}) == 3
    for bad in ("0", "x", "-2"):
        with pytest.raises(ValidationError):
            worker_count({"EASYCORE_THREADS": bad})


def test_toml_and_yaml_configs_agree(tmp_path, tiny_config):
    yaml_path = tmp_path / "tiny.yaml"
    yaml_path.write_text(
        "seed: 3\n"
        "dataset:\n  clusters:\n    centers: [[-3.0, 0.0], [3.0, 0.0]]\n    train_counts: [20, 20]\n"
        "    test_counts: [10, 10]\n    stds: [0.5, 0.5]\n"
        "model: {input_dim: 2, hidden_dim: 8, num_blocks: 1, num_classes: 2}\n"
        "train: {epochs: 2, batch_size: 16, initial_lr: 0.05, scheduler: {kind: cosine, t_max: 2}}\n"
        "attack: {epsilon: 0.5, steps: 2}\n"
        "select: {method: easycore, fraction: 0.5}\n"
        "analysis: {bins: 4, histogram_bins: 5, resolution: 12, lemma_batches: 3, svg: false}\n"
    )
    assert config_digest(validate(load_config(str(yaml_path)))) == config_digest(validate(load_config(tiny_config)))


def test_unparseable_config(tmp_path):
    path = tmp_path / "bad.toml"
    path.write_text("seed = = 1\n")
    with pytest.raises(ValidationError):
        load_config(str(path))
    with pytest.raises(ValidationError):
        load_config(str(tmp_path / "absent.toml"))


def test_shipped_configs_validate():
    root = os.path.join(os.path.dirname(__file__), "..", "configs")
    for name in ("clusters_2d.toml", "clusters_2d_trades.toml"):
        cfg = validate(load_config(os.path.join(root, name)))
        assert cfg.model.parameter_count() == 1_317_122
    assert validate(load_config(os.path.join(root, "clusters_2d_trades.toml"))).mode == "trades"


def test_epochs_past_the_cosine_horizon_are_rejected():
    path = os.path.join(os.path.dirname(__file__), "..", "configs", "clusters_2d.toml")
    with pytest.raises(ValidationError, match="t_max"):
        validate(apply_overrides(load_config(path), ["train.epochs=100"]))
    cfg = validate(apply_overrides(load_config(path), ["train.epochs=100", "train.scheduler.t_max=100"]))
    assert cfg.train.epochs == 100


# -- exit codes ------------------------------------------------------------------

def test_parser_knows_every_command():
    parser = build_parser()
    for name in COMMANDS:
        assert parser.parse_args([name, "--kind", "kappa"] if name == "analyze" else [name]).command == name


def test_missing_config_is_a_validation_error(tmp_path):
    assert main(["score", "--config", str(tmp_path / "absent.toml")]) == EXIT_VALIDATION


def test_invalid_override_is_a_validation_error(tiny_config, tmp_path):
    assert run(tiny_config, tmp_path / "out", "score", "--set", "train.epochs=-1") == EXIT_VALIDATION


def test_unknown_analysis_kind(tiny_config, tmp_path):
    assert run(tiny_config, tmp_path / "out", "analyze", "--kind", "curvature") == EXIT_VALIDATION


def test_corrupt_checkpoint_is_a_runtime_error(tiny_config, tmp_path):
    bad = tmp_path / "bad.ezc"
    bad.write_bytes(b"EZC1\x01")
    assert run(tiny_config, tmp_path / "out", "attack", "--checkpoint", str(bad)) == EXIT_RUNTIME


def test_empty_selection_is_a_validation_error(tiny_config, tmp_path):
    selection = tmp_path / "empty.csv"
    selection.write_text("rank,id\n")
    assert run(tiny_config, tmp_path / "out", "train", "--selection", str(selection)) == EXIT_VALIDATION


# -- end to end ----------------------------------------------------------------

def test_pipeline(tiny_config, tmp_path):
    out = tmp_path / "run"
    assert run(tiny_config, out, "score") == EXIT_OK
    table = read_scores(str(out / "scores.csv"))
    assert len(table.ids) == 40 and (table.aign >= 0).all()
    assert read_manifest(str(out / "manifest_score.yaml")).outputs

    assert run(tiny_config, out, "select") == EXIT_OK
    selection = read_selection(str(out / "selection_easycore.csv"))
    assert len(selection) == 20

    assert run(tiny_config, out, "train", "--selection", str(out / "selection_easycore.csv")) == EXIT_OK
    assert (out / "model.ezc").exists()
    assert read_table(str(out / "train_log.csv"), ["epoch"])["epoch"] == ["0", "1"]

    assert run(tiny_config, out, "attack") == EXIT_OK
    summary = read_yaml(str(out / "attack_summary.yaml"))
    assert summary["n"] == 20 and summary["split"] == "test"
    assert 0.0 <= summary["adversarial_accuracy"] <= 1.0

    assert run(tiny_config, out, "score", "--set", "score.split=test", "--tag", "test") == EXIT_OK
    test_scores = str(out / "scores_test.csv")
    assert len(read_scores(test_scores).ids) == 20

    assert run(tiny_config, out, "analyze", "--kind", "curve", "--scores", test_scores,
               "--attack", str(out / "attack.csv")) == EXIT_OK
    curve = read_table(str(out / "curve.csv"), ["bin", "accuracy"])
    assert cols_len(curve) == 4

    assert run(tiny_config, out, "analyze", "--kind", "boundary") == EXIT_OK
    assert len(read_table(str(out / "boundary.csv"), ["x", "y", "class"])["x"]) == 144
    assert read_yaml(str(out / "boundary_summary.yaml"))["complexity"] >= 0

    assert run(tiny_config, out, "analyze", "--kind", "kappa") == EXIT_OK
    kappa = read_table(str(out / "kappa.csv"), ["kappa", "total_dim"])
    assert 1 <= int(kappa["kappa"][0]) <= int(kappa["total_dim"][0]) == 8

    assert run(tiny_config, out, "analyze", "--kind", "lemma1") == EXIT_OK
    lemma = read_table(str(out / "lemma1.csv"), ["holds"])
    assert lemma["holds"] == ["1", "1", "1"]

    scores = str(out / "scores.csv")
    assert run(tiny_config, out, "analyze", "--kind", "histogram", "--scores", scores) == EXIT_OK
    assert len(read_table(str(out / "histogram.csv"), ["density"])["density"]) == 5

    assert run(tiny_config, out, "analyze", "--kind", "project2d", "--scores", scores) == EXIT_OK
    assert "prototypicality" in read_yaml(str(out / "project2d_summary.yaml"))

    assert run(tiny_config, out, "analyze", "--kind", "agreement", "--scores", scores, "--scores-b", scores) == EXIT_OK
    agreement = read_table(str(out / "agreement.csv"), ["spearman", "jaccard"])
    assert float(agreement["jaccard"][0]) == 1.0

    for kind in ("curve", "boundary", "kappa", "lemma1", "histogram", "project2d", "agreement"):
        assert (out / f"manifest_analyze_{kind}.yaml").exists()


def cols_len(columns):
    return len(next(iter(columns.values())))


def test_curve_needs_scores(tiny_config, tmp_path):
    assert run(tiny_config, tmp_path / "out", "analyze", "--kind", "curve") == EXIT_VALIDATION


def test_verify_detects_stale_artifacts(tiny_config, tmp_path):
    out = tmp_path / "run"
    assert run(tiny_config, out, "score", "--verify") == EXIT_VALIDATION
    assert run(tiny_config, out, "score") == EXIT_OK
    assert run(tiny_config, out, "score", "--verify") == EXIT_OK
    assert run(tiny_config, out, "score", "--verify", "--set", "train.batch_size=8") == EXIT_VALIDATION
    os.remove(out / "scores.csv")
    assert run(tiny_config, out, "score", "--verify") == EXIT_VALIDATION


def test_verify_detects_changed_inputs(tiny_config, tmp_path):
    out = tmp_path / "run"
    assert run(tiny_config, out, "score") == EXIT_OK
    assert run(tiny_config, out, "select") == EXIT_OK
    assert run(tiny_config, out, "select", "--verify") == EXIT_OK
    with open(out / "scores.csv", "a") as f:
        f.write("999,0,0.5,0.5\n")
    assert run(tiny_config, out, "select", "--verify") == EXIT_VALIDATION


def test_rerun_with_fewer_epochs_drops_old_checkpoints(tiny_config, tmp_path):
    out = tmp_path / "run"
    every = ("--set", "train.checkpoint_every=1")
    assert run(tiny_config, out, "score", *every) == EXIT_OK
    assert sorted(os.listdir(out / "score_checkpoints")) == ["epoch_0000.ezc", "epoch_0001.ezc"]

    assert run(tiny_config, out, "score", *every, "--set", "train.epochs=1") == EXIT_OK
    assert os.listdir(out / "score_checkpoints") == ["epoch_0000.ezc"]
    outputs = read_manifest(str(out / "manifest_score.yaml")).outputs
    assert [os.path.basename(p) for p in outputs if "score_checkpoints" in p] == ["epoch_0000.ezc"]

    live = read_scores(str(out / "scores.csv"))
    replayed_out = tmp_path / "replayed"
    assert run(tiny_config, replayed_out, "score", "--replay", str(out / "score_checkpoints")) == EXIT_OK
    replayed = read_scores(str(replayed_out / "scores.csv"))
    assert replayed.ids.tolist() == live.ids.tolist()
    assert replayed.aign.tolist() == live.aign.tolist()


def test_runs_are_byte_identical(tiny_config, tmp_path, monkeypatch):
    monkeypatch.setenv("EASYCORE_THREADS", "1")
    assert run(tiny_config, tmp_path / "a", "score") == EXIT_OK
    monkeypatch.setenv("EASYCORE_THREADS", "4")
    assert run(tiny_config, tmp_path / "b", "score") == EXIT_OK
    for name in ("scores.csv", "score_model.ezc", "score_train_log.csv"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()
    a = read_manifest(str(tmp_path / "a" / "manifest_score.yaml"))
    b = read_manifest(str(tmp_path / "b" / "manifest_score.yaml"))
    assert a.run_id == b.run_id and a.config_digest == b.config_digest


def test_different_seeds_differ(tiny_config, tmp_path):
    assert run(tiny_config, tmp_path / "a", "score") == EXIT_OK
    assert run(tiny_config, tmp_path / "b", "score", "--seed", "4") == EXIT_OK
    assert (tmp_path / "a" / "scores.csv").read_bytes() != (tmp_path / "b" / "scores.csv").read_bytes()


def test_run_log_is_appended(tiny_config, tmp_path):
    out = tmp_path / "run"
    assert main(["score", "--config", tiny_config, "--output", str(out)]) == EXIT_OK
    assert "[easycore.core.train] epoch 1" in (out / "easycore.log").read_text()
