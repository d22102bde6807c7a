import subprocess
import sys

import pytest

from dchanet.cli import main
from dchanet.config import (
    MissingConfigError,
    RunConfig,
    parse_config,
    parse_text,
    render,
    thread_count,
    write_effective,
)
from dchanet.errors import ConfigError, MalformedValueError, UnknownKeyError


def test_empty_file_gives_defaults(tmp_path):
    p = tmp_path / "empty.txt"
    p.write_text("")
    assert parse_config(p) == RunConfig()


def test_default_learning_rate_parses():
    assert parse_text("train.lr0 = 5e-5").train.lr0 == 5e-5


def test_types_and_comments():
    cfg = parse_text(
        "# comment line\n"
        "\n"
        "phantom.misalign_shift_max = 2   # trailing comment\n"
        "train.augment = yes\n"
        "backbone.bottlenecks_per_stage = [2, 1, 1]\n"
        "phantom.lesion_radius_range = 2.5, 4\n"
        "preprocess.augment.hflip_prob = 0\n"
        "paths.run_dir = \"out dir\"\n"
        "model.variant = corr_only\n"
    )
    assert cfg.phantom.misalign_shift_max == 2
    assert cfg.train.augment is True
    assert cfg.backbone.bottlenecks_per_stage == [2, 1, 1]
    assert cfg.phantom.lesion_radius_range == [2.5, 4.0]
    assert cfg.preprocess.augment.hflip_prob == 0.0
    assert cfg.paths.run_dir == "out dir"
    assert cfg.model_config().use_corr and not cfg.model_config().has_attention


def test_unknown_key_line_number():
    with pytest.raises(UnknownKeyError) as exc:
        parse_text("train.lr0 = 1e-3\n\nbogus.key = 1\n")
    assert exc.value.line == 3 and "line 3" in str(exc.value)


@pytest.mark.parametrize("text", ["train", "phantom", "train.lr0.x", ".lr0"])
def test_section_or_bare_key_rejected(text):
    with pytest.raises(ConfigError):
        parse_text(text + " = 1")


def test_malformed_value_line_number():
    with pytest.raises(MalformedValueError) as exc:
        parse_text("train.epochs = 3\ntrain.epochs = three\n")
    assert exc.value.line == 2
    with pytest.raises(MalformedValueError) as exc:
        parse_text("just words")
    assert exc.value.line == 1


def test_missing_file(tmp_path):
    with pytest.raises(MissingConfigError, match="nope.txt"):
        parse_config(tmp_path / "nope.txt")


def test_error_kinds_are_distinct():
    kinds = {UnknownKeyError, MalformedValueError, MissingConfigError}
    assert len(kinds) == 3
    assert all(issubclass(k, ConfigError) for k in kinds)
    assert not issubclass(UnknownKeyError, MalformedValueError)


def test_overrides_win(tmp_path):
    p = tmp_path / "c.txt"
    p.write_text("train.epochs = 3\n")
    cfg = parse_config(p, ["train.epochs=7", "model.k = 5"])
    assert cfg.train.epochs == 7 and cfg.model.k == 5
    with pytest.raises(MalformedValueError):
        parse_config(None, ["train.epochs"])


def test_effective_config_round_trip(tmp_path):
    cfg = parse_text("train.lr0 = 0.001\nphantom.seed = 4\ntrain.augment = true\n")
    path = write_effective(cfg, tmp_path / "eff.txt")
    assert parse_config(path) == cfg
    assert "train.lr0 = 0.001\n" in render(cfg)


def test_thread_env():
    assert thread_count({"DCHA_THREADS": "3"}) == 3
    assert thread_count({}) >= 1
    for bad in ("0", "-2", "many"):
        with pytest.raises(ConfigError):
            thread_count({"DCHA_THREADS": bad})


# command line -------------------------------------------------------------

def test_unknown_command(capsys):
    assert main(["bogus"]) == 1
    err = capsys.readouterr().err
    assert "usage:" in err and "bogus" in err


def test_no_command(capsys):
    assert main([]) == 1
    assert "usage:" in capsys.readouterr().err


def test_bad_config_key_is_usage_error(capsys):
    assert main(["generate", "--set", "nope.x=1"]) == 1
    assert "nope.x" in capsys.readouterr().err


def test_eval_without_checkpoint(tmp_path, capsys):
    ckpt = tmp_path / "missing" / "final.ckpt"
    assert main(["eval", "--set", f"paths.checkpoint={ckpt}"]) == 2
    err = capsys.readouterr().err
    assert str(ckpt) in err and "Traceback" not in err


def test_train_without_data(tmp_path, capsys):
    assert main(["train", "--set", f"paths.data_dir={tmp_path / 'empty'}"]) == 2
    assert "manifest" in capsys.readouterr().err


def test_module_entry_point():
    out = subprocess.run([sys.executable, "-m", "dchanet", "bogus"], capture_output=True, text=True)
    assert out.returncode == 1 and "usage:" in out.stderr


def _pipeline(root, cfg_text):
    root.mkdir(parents=True, exist_ok=True)
    cfg = root / "run.cfg"
    cfg.write_text(cfg_text + f"paths.data_dir = {root / 'data'}\npaths.run_dir = {root / 'run'}\n")
    return [main([cmd, "-c", str(cfg)]) for cmd in ("generate", "train", "eval", "saliency")]


SMALL = "data.n_cases = 12\ntrain.epochs = 1\ntrain.lr0 = 1e-3\nphantom.misalign_shift_max = 2\n"


def test_pipeline_is_reproducible(tmp_path, capsys):
    assert _pipeline(tmp_path / "a", SMALL) == [0, 0, 0, 0]
    assert _pipeline(tmp_path / "b", SMALL) == [0, 0, 0, 0]
    capsys.readouterr()
    for rel in ("data/manifest.csv", "run/final.ckpt", "run/loss_trace.csv", "run/eval/per_case.csv",
                "run/eval/summary.txt", "run/saliency/hits.csv", "run/checkpoints/epoch000.ckpt"):
        assert (tmp_path / "a" / rel).read_bytes() == (tmp_path / "b" / rel).read_bytes(), rel
    for name in ("data", "run", "run/eval", "run/saliency"):
        assert (tmp_path / "a" / name / "effective_config.txt").exists()
