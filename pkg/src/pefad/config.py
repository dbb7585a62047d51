"""Experiment configuration: flat ``section.key = value`` files and ablation variants.

Example::

    seed = 0
    bench.n_clients = 4
    backbone.n_layers = 4
    train.learning_rate = 0.05
    train.global_rounds = 10
    train.local_epochs = 2
    train.lambda = 1.0
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field, fields, replace
from pathlib import Path

from .adms import AdmsConfig
from .backbone import BackboneConfig
from .data import SynthBenchConfig
from .detection import DetectionConfig
from .errors import ConfigError
from .federation import TrainConfig
from .ppds import VaeConfig
from .seeding import derive_seed

REQUIRED = ("train.learning_rate", "train.global_rounds", "train.local_epochs", "train.lambda")

# keys fixed by other sections or derived from the master seed
_EXCLUDED = {"bench.seed", "train.seed", "train.n_clients", "adms.l_p", "backbone.input_dim"}
_RENAMED = {"train.lambda": "lambda_"}

_SECTIONS = {
    "bench": SynthBenchConfig,
    "backbone": BackboneConfig,
    "adms": AdmsConfig,
    "vae": VaeConfig,
    "train": TrainConfig,
    "detection": DetectionConfig,
}

_TUNE_K = re.compile(r"pefad_t(\d+)l")


@dataclass(frozen=True)
class ExperimentConfig:
    seed: int = 0
    out: str = "runs/default"
    csv_dir: str | None = None
    variant: str = "pefad"
    bench: SynthBenchConfig = field(default_factory=SynthBenchConfig)
    backbone: BackboneConfig = field(default_factory=BackboneConfig)
    adms: AdmsConfig = field(default_factory=AdmsConfig)
    vae: VaeConfig = field(default_factory=VaeConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    detection: DetectionConfig = field(default_factory=DetectionConfig)
    use_adms: bool = True
    use_shared: bool = True

    def sub_seed(self, name: str) -> int:
        return derive_seed(self.seed, name)


def _coerce(key: str, raw: str, default):
    try:
        if isinstance(default, bool):
            if raw.lower() not in ("true", "false", "1", "0", "yes", "no"):
                raise ValueError(raw)
            return raw.lower() in ("true", "1", "yes")
        if isinstance(default, int):
            return int(raw)
        if isinstance(default, float):
            return float(raw)
        if isinstance(default, tuple):
            items = [s.strip() for s in raw.split(",") if s.strip()]
            kind = type(default[0]) if default else str
            return tuple(kind(s) for s in items)
        if default is None:
            return None if raw.lower() == "none" else int(raw)
        return raw
    except ValueError:
        raise ConfigError(f"config key {key!r}: cannot parse {raw!r}") from None


def parse_text(text: str, source: str = "<config>") -> dict[str, str]:
    out: dict[str, str] = {}
    for n, line in enumerate(text.splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{source}:{n}: expected 'key = value', got {line!r}")
        key, value = (s.strip() for s in line.split("=", 1))
        if key in out:
            raise ConfigError(f"{source}:{n}: duplicate config key {key!r}")
        out[key] = value
    return out


def build_config(values: dict[str, str]) -> ExperimentConfig:
    missing = [k for k in REQUIRED if k not in values]
    if missing:
        raise ConfigError(f"missing required config key {missing[0]!r}")
    top: dict = {}
    per_section: dict[str, dict] = {name: {} for name in _SECTIONS}
    for key, raw in values.items():
        if key in ("seed", "out", "csv_dir", "variant"):
            top[key] = int(raw) if key == "seed" else raw
            continue
        section, _, name = key.partition(".")
        if section not in _SECTIONS or key in _EXCLUDED:
            raise ConfigError(f"unknown config key {key!r}")
        attr = _RENAMED.get(key, name)
        defaults = {f.name: getattr(_SECTIONS[section](), f.name) for f in fields(_SECTIONS[section])}
        if attr not in defaults:
            raise ConfigError(f"unknown config key {key!r}")
        per_section[section][attr] = _coerce(key, raw, defaults[attr])

    seed = top.get("seed", 0)
    try:
        bench = SynthBenchConfig(**per_section["bench"], seed=derive_seed(seed, "bench"))
        backbone = BackboneConfig(**per_section["backbone"], input_dim=bench.dim)
        adms = AdmsConfig(**per_section["adms"], l_p=backbone.l_p)
        train = TrainConfig(**per_section["train"], n_clients=bench.n_clients, seed=seed)
        cfg = ExperimentConfig(
            seed=seed, out=top.get("out", "runs/default"), csv_dir=top.get("csv_dir"),
            bench=bench, backbone=backbone, adms=adms, vae=VaeConfig(**per_section["vae"]),
            train=train, detection=DetectionConfig(**per_section["detection"]))
    except TypeError as exc:
        raise ConfigError(str(exc)) from None
    return apply_variant(cfg, top.get("variant", "pefad"))


def load_config(path) -> ExperimentConfig:
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file not found: {path}")
    return build_config(parse_text(path.read_text(), str(path)))


def with_seed(cfg: ExperimentConfig, seed: int) -> ExperimentConfig:
    """Re-derive every sub-seed from a new master seed."""
    return replace(cfg, seed=seed, bench=replace(cfg.bench, seed=derive_seed(seed, "bench")),
                   train=replace(cfg.train, seed=seed))


VARIANTS = ("pefad", "w/o_adms", "w/o_ppds", "w/o_kd", "w/o_ft", "pefad_fft", "pefad_t{k}l")


def apply_variant(cfg: ExperimentConfig, variant: str) -> ExperimentConfig:
    name = variant.strip().lower()
    if name == "pefad":
        return replace(cfg, variant=name)
    if name == "w/o_adms":
        return replace(cfg, variant=name, use_adms=False)
    if name == "w/o_ppds":
        return replace(cfg, variant=name, use_shared=False)
    if name == "w/o_kd":
        return replace(cfg, variant=name, train=replace(cfg.train, lambda_=0.0))
    if name == "w/o_ft":
        return replace(cfg, variant=name, backbone=replace(cfg.backbone, tuning="none"))
    if name == "pefad_fft":
        return replace(cfg, variant=name, backbone=replace(cfg.backbone, tuning="full"))
    m = _TUNE_K.fullmatch(name)
    if m:
        backbone = replace(cfg.backbone, tuning="partial", tune_last_k=int(m.group(1)))
        return replace(cfg, variant=name, backbone=backbone)
    raise ConfigError(f"unknown variant {variant!r}; expected one of {', '.join(VARIANTS)}")
