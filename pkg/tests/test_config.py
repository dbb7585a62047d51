import pytest

from pefad import config
from pefad.errors import ConfigError

BASE = """
seed = 7
train.learning_rate = 0.1
train.global_rounds = 3
train.local_epochs = 1
train.lambda = 2.0
"""


def test_parse_and_defaults():
    cfg = config.build_config(config.parse_text(BASE + "bench.anomaly_kinds = spike, level_shift\n"
                                                "detection.point_adjust = false\nadms.ssa_window = 4\n"))
    assert cfg.seed == 7 and cfg.train.learning_rate == 0.1 and cfg.train.lambda_ == 2.0
    assert cfg.bench.anomaly_kinds == ("spike", "level_shift")
    assert cfg.detection.point_adjust is False and cfg.adms.ssa_window == 4
    assert cfg.train.n_clients == cfg.bench.n_clients
    assert cfg.adms.l_p == cfg.backbone.l_p and cfg.backbone.input_dim == cfg.bench.dim


def test_missing_key_is_named():
    text = "\n".join(ln for ln in BASE.splitlines() if "learning_rate" not in ln)
    with pytest.raises(ConfigError, match="learning_rate"):
        config.build_config(config.parse_text(text))


@pytest.mark.parametrize("extra, fragment", [
    ("train.bogus = 1", "train.bogus"),
    ("nosection = 1", "nosection"),
    ("bench.seed = 3", "bench.seed"),
    ("backbone.n_layers = four", "backbone.n_layers"),
    ("train.lambda = -1", "lambda"),
])
def test_bad_keys_and_values(extra, fragment):
    with pytest.raises(ConfigError, match=fragment):
        config.build_config(config.parse_text(BASE + extra + "\n"))


def test_syntax_errors():
    with pytest.raises(ConfigError, match="line|:3:"):
        config.parse_text("a = 1\n# note\njust words\n")
    with pytest.raises(ConfigError, match="duplicate"):
        config.parse_text("a = 1\na = 2\n")


def test_seed_derivation():
    cfg = config.build_config(config.parse_text(BASE))
    assert cfg.sub_seed("backbone") != cfg.sub_seed("bench")
    assert cfg.sub_seed("backbone") == config.build_config(config.parse_text(BASE)).sub_seed("backbone")
    other = config.with_seed(cfg, 8)
    assert other.bench.seed != cfg.bench.seed and other.train.seed == 8


def test_variants():
    cfg = config.build_config(config.parse_text(BASE))
    assert config.apply_variant(cfg, "w/o_adms").use_adms is False
    assert config.apply_variant(cfg, "w/o_ppds").use_shared is False
    assert config.apply_variant(cfg, "w/o_kd").train.lambda_ == 0.0
    assert config.apply_variant(cfg, "w/o_ft").backbone.tuning == "none"
    assert config.apply_variant(cfg, "PeFAD_fft").backbone.tuning == "full"
    t5 = config.apply_variant(cfg, "PeFAD_t5l")
    assert t5.backbone.tune_last_k == 5 and t5.variant == "pefad_t5l"
    with pytest.raises(ConfigError, match="unknown variant"):
        config.apply_variant(cfg, "w/o_everything")
    with pytest.raises(ConfigError):
        config.apply_variant(cfg, "pefad_t99l")
