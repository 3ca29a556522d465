from pathlib import Path

import pytest

from glaste.config import ConfigError, TrainConfig, dump_config, load_config, paper_scale, parse_config, schema_lines

CONFIGS = Path(__file__).resolve().parent.parent / "configs"


def test_round_trip():
    cfg = TrainConfig()
    cfg.flags.skip_connections = False
    cfg.net.skip_stages = (1, 3)
    again = parse_config(dump_config(cfg))
    assert again == cfg


def test_unknown_key_and_bad_value():
    with pytest.raises(ConfigError, match="unknown key"):
        parse_config("net.nope = 3")
    with pytest.raises(ConfigError, match="cannot parse"):
        parse_config("lr = fast")
    with pytest.raises(ConfigError):
        parse_config("just words")


def test_validation():
    with pytest.raises(ConfigError):
        parse_config("net.canvas_h = 48")
    with pytest.raises(ConfigError):
        parse_config("mix_ratio = 1.5")
    with pytest.raises(ConfigError):
        parse_config("net.skip_stages = 1,4")
    with pytest.raises(ConfigError):
        parse_config("loss.beta = -1")


def test_paper_scale_file_parses():
    cfg = load_config(CONFIGS / "paper_scale.cfg")
    assert (cfg.net.canvas_h, cfg.net.canvas_w, cfg.net.content_h) == (256, 256, 64)
    assert cfg.iterations == 500_000 and cfg.batch_size == 12 and cfg.lr == 1e-4
    assert cfg.loss == paper_scale().loss
    ref = paper_scale()
    assert (cfg.net.style_dim, cfg.net.base_width) == (ref.net.style_dim, ref.net.base_width)


@pytest.mark.parametrize("name,flag", [("no_skip", "skip_connections"), ("no_local", "local_loss"),
                                       ("no_paired", "paired_data"), ("no_rec", "use_recognizer")])
def test_ablation_files(name, flag):
    cfg = load_config(CONFIGS / f"{name}.cfg")
    assert getattr(cfg.flags, flag) is False
    others = [f for f in ("skip_connections", "local_loss", "paired_data", "use_recognizer") if f != flag]
    assert all(getattr(cfg.flags, f) for f in others)


def test_toy_defaults():
    cfg = load_config(CONFIGS / "toy.cfg")
    assert (cfg.net.canvas_h, cfg.net.content_h, cfg.batch_size, cfg.iterations) == (64, 32, 8, 3000)


def test_env_seed(monkeypatch):
    monkeypatch.setenv("GLASTE_SEED", "42")
    assert load_config(None).seed == 42
    monkeypatch.setenv("GLASTE_SEED", "x")
    with pytest.raises(ConfigError):
        load_config(None)


def test_schema_lists_every_key():
    keys = {line.split(" : ")[0] for line in schema_lines()}
    assert {"lr", "net.canvas_h", "loss.lambda3", "flags.use_recognizer"} <= keys
    assert keys == {line.split(" = ")[0] for line in dump_config(TrainConfig()).splitlines()}
