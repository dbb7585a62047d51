"""Compact transformer reconstruction model with a trainable/frozen split.

The "pretrained" weights are a seeded Gaussian draw known to every party, so
the server and all clients hold bit-identical frozen parameters without ever
exchanging them.
"""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass, fields
from pathlib import Path
from typing import Literal

import numpy as np

from . import numerics as nx
from .errors import ConfigError, ContractError, InputError, ShapeError
from .numerics import Tensor

Tuning = Literal["partial", "full", "none"]
_TUNING_CODES = {"partial": 0, "full": 1, "none": 2}

MAGIC = b"PEFADCKP"
VERSION = 1


@dataclass(frozen=True)
class BackboneConfig:
    d_model: int = 32
    n_layers: int = 8
    n_heads: int = 4
    d_ff: int = 128
    l_p: int = 10
    input_dim: int = 1
    tune_last_k: int = 3
    window: int = 100
    # "partial": last tune_last_k blocks + IO layers; "full": everything; "none": nothing.
    tuning: Tuning = "partial"

    def __post_init__(self):
        for name in ("d_model", "n_layers", "n_heads", "d_ff", "l_p", "input_dim", "window"):
            if getattr(self, name) < 1:
                raise ConfigError(f"backbone.{name} must be >= 1, got {getattr(self, name)}")
        if self.d_model % self.n_heads:
            raise ConfigError(f"backbone.d_model={self.d_model} not divisible by n_heads={self.n_heads}")
        if not 1 <= self.tune_last_k <= self.n_layers:
            raise ConfigError(f"backbone.tune_last_k must be in [1, {self.n_layers}], got {self.tune_last_k}")
        if self.window < self.l_p:
            raise ConfigError(f"backbone.window={self.window} shorter than patch length {self.l_p}")
        if self.tuning not in _TUNING_CODES:
            raise ConfigError(f"backbone.tuning must be one of {sorted(_TUNING_CODES)}, got {self.tuning!r}")

    @property
    def n_patches(self) -> int:
        return self.window // self.l_p

    @property
    def patch_width(self) -> int:
        return self.l_p * self.input_dim


def parameter_shapes(config: BackboneConfig) -> list[tuple[str, tuple[int, ...]]]:
    """Registry of (parameter_id, shape) in canonical order."""
    d, f, w = config.d_model, config.d_ff, config.patch_width
    reg = [
        ("embed.weight", (w, d)),
        ("embed.bias", (d,)),
        ("pos", (config.n_patches, d)),
        ("mask_token", (d,)),
    ]
    for i in range(config.n_layers):
        p = f"block{i}"
        reg += [(f"{p}.ln1.gain", (d,)), (f"{p}.ln1.bias", (d,))]
        for proj in ("q", "k", "v", "o"):
            reg += [(f"{p}.attn.{proj}.weight", (d, d)), (f"{p}.attn.{proj}.bias", (d,))]
        reg += [
            (f"{p}.ln2.gain", (d,)),
            (f"{p}.ln2.bias", (d,)),
            (f"{p}.ff.fc1.weight", (d, f)),
            (f"{p}.ff.fc1.bias", (f,)),
            (f"{p}.ff.fc2.weight", (f, d)),
            (f"{p}.ff.fc2.bias", (d,)),
        ]
    reg += [
        ("ln_f.gain", (d,)),
        ("ln_f.bias", (d,)),
        ("out_proj.weight", (d, w)),
        ("out_proj.bias", (w,)),
    ]
    return reg


def _init_value(pid: str, shape: tuple[int, ...], rng: np.random.Generator, d_model: int) -> np.ndarray:
    if pid.endswith(".gain"):
        return np.ones(shape)
    if pid.endswith(".bias"):
        return np.zeros(shape)
    fan_in = shape[0] if pid.endswith(".weight") else d_model
    return rng.standard_normal(shape) / math.sqrt(fan_in)


class Backbone:
    def __init__(self, config: BackboneConfig, params: dict[str, Tensor], seed: int):
        self.config = config
        self.params = params
        self.seed = seed

    @property
    def parameter_ids(self) -> list[str]:
        return list(self.params)

    @property
    def n_params(self) -> int:
        return sum(p.size for p in self.params.values())

    def copy(self) -> Backbone:
        return Backbone(self.config, {k: Tensor(v.data) for k, v in self.params.items()}, self.seed)

    def state_bytes(self, ids=None) -> bytes:
        ids = self.parameter_ids if ids is None else ids
        return b"".join(self.params[k].data.astype("<f8").tobytes() for k in ids)


def build_model(config: BackboneConfig, seed: int) -> Backbone:
    rng = np.random.default_rng(seed)
    params = {
        pid: Tensor(_init_value(pid, shape, rng, config.d_model))
        for pid, shape in parameter_shapes(config)
    }
    return Backbone(config, params, seed)


# --------------------------------------------------------------------------- #
# partition

@dataclass(frozen=True)
class PartitionEntry:
    parameter_id: str
    role: Literal["trainable", "frozen"]
    shape: tuple[int, ...]

    @property
    def size(self) -> int:
        return int(np.prod(self.shape))


@dataclass(frozen=True)
class ParameterPartition:
    entries: tuple[PartitionEntry, ...]

    @property
    def trainable_ids(self) -> list[str]:
        return [e.parameter_id for e in self.entries if e.role == "trainable"]

    @property
    def frozen_ids(self) -> list[str]:
        return [e.parameter_id for e in self.entries if e.role == "frozen"]

    @property
    def trainable_count(self) -> int:
        return sum(e.size for e in self.entries if e.role == "trainable")

    @property
    def frozen_count(self) -> int:
        return sum(e.size for e in self.entries if e.role == "frozen")


def _is_trainable(pid: str, n_layers: int, k: int) -> bool:
    if ".ln" in pid or pid.startswith("ln_"):
        return False
    if not pid.startswith("block"):
        return True
    block = int(pid.split(".", 1)[0][len("block"):])
    return block >= n_layers - k


def partition_parameters(model: Backbone, tune_last_k: int | None = None,
                         tuning: Tuning | None = None) -> ParameterPartition:
    cfg = model.config
    k = cfg.tune_last_k if tune_last_k is None else tune_last_k
    mode = cfg.tuning if tuning is None else tuning
    if not 1 <= k <= cfg.n_layers:
        raise ConfigError(f"tune_last_k must be in [1, {cfg.n_layers}], got {k}")
    if mode not in _TUNING_CODES:
        raise ConfigError(f"unknown tuning mode {mode!r}")
    entries = []
    for pid, t in model.params.items():
        if mode == "full":
            trainable = True
        elif mode == "none":
            trainable = False
        else:
            trainable = _is_trainable(pid, cfg.n_layers, k)
        entries.append(PartitionEntry(pid, "trainable" if trainable else "frozen", t.shape))
    return ParameterPartition(tuple(entries))


def set_trainable(model: Backbone, partition: ParameterPartition) -> list[Tensor]:
    """Flag trainable tensors for gradient tracking; returns them in partition order."""
    trainable = set(partition.trainable_ids)
    for pid, t in model.params.items():
        t.requires_grad = pid in trainable
        t.grad = None
    return [model.params[pid] for pid in partition.trainable_ids]


def flatten_trainable(model: Backbone, partition: ParameterPartition) -> np.ndarray:
    ids = partition.trainable_ids
    if not ids:
        return np.zeros(0)
    return np.concatenate([model.params[pid].data.reshape(-1) for pid in ids])


def load_trainable(model: Backbone, partition: ParameterPartition, vector) -> None:
    vector = np.asarray(vector, dtype=np.float64)
    if vector.shape != (partition.trainable_count,):
        raise ContractError(
            f"trainable vector has shape {vector.shape}, expected ({partition.trainable_count},)")
    offset = 0
    for entry in partition.entries:
        if entry.role != "trainable":
            continue
        chunk = vector[offset:offset + entry.size].reshape(entry.shape).copy()
        model.params[entry.parameter_id].data = chunk
        offset += entry.size


# --------------------------------------------------------------------------- #
# forward pass

def _linear(x, params, prefix):
    return nx.add(nx.matmul(x, params[f"{prefix}.weight"]), params[f"{prefix}.bias"])


def _attention(h, params, prefix, n_heads):
    b, p, d = h.shape
    dh = d // n_heads

    def heads(t):
        return nx.transpose(nx.reshape(t, (b, p, n_heads, dh)), (0, 2, 1, 3))

    q = heads(_linear(h, params, f"{prefix}.q"))
    k = heads(_linear(h, params, f"{prefix}.k"))
    v = heads(_linear(h, params, f"{prefix}.v"))
    scores = nx.scale(nx.matmul(q, nx.transpose(k)), 1.0 / math.sqrt(dh))
    ctx = nx.matmul(nx.softmax(scores), v)
    ctx = nx.reshape(nx.transpose(ctx, (0, 2, 1, 3)), (b, p, d))
    return _linear(ctx, params, f"{prefix}.o")


def forward(model: Backbone, patched_input, mask=None, params: dict | None = None) -> Tensor:
    """Reconstruct every patch of a (batch, n_patches, l_p*D) input.

    ``mask`` is a boolean (batch, n_patches) array; masked patches have their
    value embedding replaced by the mask token before positions are added.
    ``params`` overrides individual parameters (used for gradient checks).
    """
    cfg = model.config
    ps = dict(model.params)
    if params:
        ps.update(params)
    x = nx.as_tensor(patched_input)
    if x.ndim != 3 or x.shape[2] != cfg.patch_width or not 1 <= x.shape[1] <= cfg.n_patches:
        raise ShapeError(
            f"expected input (batch, <= {cfg.n_patches}, {cfg.patch_width}), got {x.shape}")
    b, p, _ = x.shape

    h = _linear(x, ps, "embed")
    if mask is not None:
        m = np.asarray(mask, dtype=bool)
        if m.shape != (b, p):
            raise ShapeError(f"mask shape {m.shape} does not match input {(b, p)}")
        if m.any():
            mf = m[..., None].astype(np.float64)
            h = nx.add(nx.mul(h, 1.0 - mf), nx.mul(ps["mask_token"], mf))
    h = nx.add(h, ps["pos"][:p])

    for i in range(cfg.n_layers):
        pre = f"block{i}"
        a = nx.layer_norm(h, ps[f"{pre}.ln1.gain"], ps[f"{pre}.ln1.bias"])
        h = nx.add(h, _attention(a, ps, f"{pre}.attn", cfg.n_heads))
        a = nx.layer_norm(h, ps[f"{pre}.ln2.gain"], ps[f"{pre}.ln2.bias"])
        ff = _linear(nx.gelu(_linear(a, ps, f"{pre}.ff.fc1")), ps, f"{pre}.ff.fc2")
        h = nx.add(h, ff)

    h = nx.layer_norm(h, ps["ln_f.gain"], ps["ln_f.bias"])
    return _linear(h, ps, "out_proj")


def reconstruct(model: Backbone, patched_input) -> np.ndarray:
    """Unmasked forward pass returning plain arrays (no graph is recorded)."""
    saved = [(t, t.requires_grad) for t in model.params.values()]
    for t, _ in saved:
        t.requires_grad = False
    try:
        return forward(model, patched_input).data
    finally:
        for t, flag in saved:
            t.requires_grad = flag


# --------------------------------------------------------------------------- #
# checkpoint file

_HEADER_FIELDS = [f.name for f in fields(BackboneConfig)]


def save_checkpoint(model: Backbone, path) -> None:
    cfg = model.config
    ints = [getattr(cfg, name) if name != "tuning" else _TUNING_CODES[cfg.tuning]
            for name in _HEADER_FIELDS]
    header = MAGIC + struct.pack("<I", VERSION) + struct.pack(f"<{len(ints)}Q", *ints)
    header += struct.pack("<Q", model.seed & 0xFFFFFFFFFFFFFFFF)
    Path(path).write_bytes(header + model.state_bytes())


def load_checkpoint(path) -> Backbone:
    path = Path(path)
    if not path.exists():
        raise InputError(f"checkpoint file not found: {path}")
    raw = path.read_bytes()
    if raw[:len(MAGIC)] != MAGIC:
        raise InputError(f"{path} is not a pefad checkpoint")
    pos = len(MAGIC)
    (version,) = struct.unpack_from("<I", raw, pos)
    if version != VERSION:
        raise InputError(f"unsupported checkpoint version {version}")
    pos += 4
    n = len(_HEADER_FIELDS)
    ints = struct.unpack_from(f"<{n}Q", raw, pos)
    pos += 8 * n
    (seed,) = struct.unpack_from("<Q", raw, pos)
    pos += 8
    codes = {v: k for k, v in _TUNING_CODES.items()}
    kwargs = dict(zip(_HEADER_FIELDS, ints))
    kwargs["tuning"] = codes[kwargs["tuning"]]
    cfg = BackboneConfig(**kwargs)
    params = {}
    for pid, shape in parameter_shapes(cfg):
        count = int(np.prod(shape))
        blob = np.frombuffer(raw, dtype="<f8", count=count, offset=pos)
        params[pid] = Tensor(blob.astype(np.float64).reshape(shape))
        pos += 8 * count
    if pos != len(raw):
        raise InputError(f"{path}: {len(raw) - pos} trailing bytes after parameters")
    return Backbone(cfg, params, seed)
