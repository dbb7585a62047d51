"""Federated training: broadcast, local training, weighted aggregation and the round ledger.

Transport is simulated in-process, but every parameter message goes through
its little-endian float64 wire form so that byte counts and the privacy scan
see exactly what a network would carry.
"""

from __future__ import annotations

import csv
import hashlib
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from . import numerics as nx
from .adms import AdmsConfig, PatchScoreTable, patch_windows, score_window, select_mask
from .backbone import (Backbone, ParameterPartition, flatten_trainable, forward, load_trainable,
                       reconstruct, set_trainable)
from .data import make_windows
from .errors import ConfigError, ProtocolError, TrainingError
from .ppds import SharedDataset
from .seeding import stream

OPTIMIZERS = ("sgd", "adam")


@dataclass(frozen=True)
class TrainConfig:
    n_clients: int = 4
    global_rounds: int = 10
    local_epochs: int = 2
    learning_rate: float = 0.05
    lambda_: float = 1.0
    batch_size: int = 32
    seed: int = 0
    optimizer: str = "sgd"
    workers: int = 1

    def __post_init__(self):
        if self.n_clients < 1 or self.local_epochs < 1 or self.batch_size < 1 or self.workers < 1:
            raise ConfigError("train.n_clients, local_epochs, batch_size and workers must be >= 1")
        if self.global_rounds < 0:
            raise ConfigError(f"train.global_rounds must be >= 0, got {self.global_rounds}")
        if not self.learning_rate > 0:
            raise ConfigError(f"train.learning_rate must be positive, got {self.learning_rate}")
        if self.lambda_ < 0:
            raise ConfigError(f"train.lambda must be >= 0, got {self.lambda_}")
        if self.optimizer not in OPTIMIZERS:
            raise ConfigError(f"train.optimizer must be one of {OPTIMIZERS}, got {self.optimizer!r}")


# --------------------------------------------------------------------------- #
# wire format

def to_wire(vector: np.ndarray) -> bytes:
    return np.asarray(vector, dtype="<f8").tobytes()


def from_wire(payload: bytes) -> np.ndarray:
    return np.frombuffer(payload, dtype="<f8").astype(np.float64)


def checksum(vector: np.ndarray) -> str:
    return hashlib.sha256(to_wire(vector)).hexdigest()


@dataclass(frozen=True)
class Message:
    round: int
    direction: str        # "down" (server -> client) or "up"
    client_id: int
    payload_bytes: int


@dataclass
class RoundLedger:
    messages: list[Message] = field(default_factory=list)
    losses: list[tuple[int, int, float]] = field(default_factory=list)    # (round, client, loss)
    checksums: list[tuple[int, str]] = field(default_factory=list)
    keep_payloads: bool = False
    payloads: list[bytes] = field(default_factory=list, repr=False)

    def send(self, round_: int, direction: str, client_id: int, payload: bytes) -> bytes:
        self.messages.append(Message(round_, direction, client_id, len(payload)))
        if self.keep_payloads:
            self.payloads.append(payload)
        return payload

    @property
    def total_bytes(self) -> int:
        return sum(m.payload_bytes for m in self.messages)

    def write_csv(self, path) -> None:
        with Path(path).open("w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["round", "direction", "client_id", "bytes"])
            w.writerows([m.round, m.direction, m.client_id, m.payload_bytes] for m in self.messages)

    def write_losses_csv(self, path) -> None:
        with Path(path).open("w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["round", "client_id", "loss"])
            w.writerows([r, c, repr(float(v))] for r, c, v in self.losses)


def comm_cost(ledger: RoundLedger) -> tuple[int, float]:
    total = ledger.total_bytes
    return total, total / 2 ** 30


# --------------------------------------------------------------------------- #
# states

@dataclass
class ClientState:
    client_id: int
    windows: np.ndarray                 # (N, w, D), normalised
    patched: np.ndarray                 # (N, P, l_p*D)
    tables: list[PatchScoreTable]
    model: Backbone
    rng: np.random.Generator

    @property
    def n_samples(self) -> int:
        return len(self.windows)


@dataclass
class ServerState:
    model: Backbone                     # holds θ_p and the current θ_e,g
    partition: ParameterPartition
    theta: np.ndarray
    round: int = 0
    shared: SharedDataset | None = None
    shared_patched: np.ndarray | None = None
    snapshot: Backbone | None = None


def uniform_table(n_patches: int) -> PatchScoreTable:
    z = np.zeros(n_patches)
    return PatchScoreTable(z, z, z, z, z, np.zeros(n_patches, dtype=bool))


def make_client(client_id: int, train_series, model: Backbone, adms_cfg: AdmsConfig,
                seed: int, use_adms: bool = True) -> ClientState:
    cfg = model.config
    windows = make_windows(train_series, cfg.window)
    if use_adms:
        tables = [score_window(w, adms_cfg) for w in windows]
    else:
        tables = [uniform_table(cfg.n_patches) for _ in windows]
    return ClientState(client_id, windows, patch_windows(windows, cfg.l_p), tables,
                       model.copy(), stream(seed, f"client:{client_id}"))


# --------------------------------------------------------------------------- #
# protocol steps

def broadcast(server: ServerState, clients: list[ClientState], ledger: RoundLedger) -> None:
    """Send θ_e,g to every client and fix the round's distillation snapshot."""
    if server.snapshot is None:
        server.snapshot = server.model.copy()
    load_trainable(server.snapshot, server.partition, server.theta)
    for c in sorted(clients, key=lambda c: c.client_id):
        payload = ledger.send(server.round, "down", c.client_id, to_wire(server.theta))
        load_trainable(c.model, server.partition, from_wire(payload))


def _distill_batch(shared_patched: np.ndarray | None, batch_size: int,
                   rng: np.random.Generator) -> np.ndarray | None:
    if shared_patched is None or len(shared_patched) == 0:
        return None
    if len(shared_patched) <= batch_size:
        return np.arange(len(shared_patched))
    return np.sort(rng.choice(len(shared_patched), size=batch_size, replace=False))


def _epochs(model: Backbone, partition: ParameterPartition, patched: np.ndarray,
            tables: list[PatchScoreTable], rng: np.random.Generator, n_epochs: int,
            cfg: TrainConfig, adms_cfg: AdmsConfig, shared_patched=None, snapshot_out=None,
            where: str = "") -> float:
    """Run ``n_epochs`` of masked-reconstruction training; returns the last batch loss."""
    params = set_trainable(model, partition)
    opt = nx.make_optimizer(cfg.optimizer, params, cfg.learning_rate) if params else None
    n = len(patched)
    last = float("nan")
    for epoch in range(n_epochs):
        order = rng.permutation(n)
        distill = _distill_batch(shared_patched, cfg.batch_size, rng) if cfg.lambda_ > 0 else None
        for b, start in enumerate(range(0, n, cfg.batch_size)):
            idx = order[start:start + cfg.batch_size]
            mask = np.stack([select_mask(tables[i], adms_cfg.r_m, adms_cfg.weight_boost, rng)
                             .as_array(patched.shape[1]) for i in idx])
            x = patched[idx]
            loss = nx.mse(forward(model, x, mask), x)
            if distill is not None:
                consistency = nx.mse(forward(model, shared_patched[distill]), snapshot_out[distill])
                loss = nx.add(loss, nx.scale(consistency, cfg.lambda_))
            last = loss.item()
            if not np.isfinite(last):
                raise TrainingError(f"{where}epoch {epoch} batch {b}: loss is not finite")
            if opt is not None:
                opt.zero_grad()
                loss.backward()
                opt.step()
    for p in params:
        p.grad = None
        p.requires_grad = False
    return last


def local_train(client: ClientState, server: ServerState, cfg: TrainConfig,
                adms_cfg: AdmsConfig) -> tuple[np.ndarray, float]:
    """Local epochs on one client against the round's frozen global snapshot."""
    snapshot_out = None
    if cfg.lambda_ > 0 and server.shared_patched is not None:
        snapshot_out = reconstruct(server.snapshot, server.shared_patched)
    loss = _epochs(client.model, server.partition, client.patched, client.tables, client.rng,
                   cfg.local_epochs, cfg, adms_cfg, server.shared_patched, snapshot_out,
                   where=f"client {client.client_id} round {server.round} ")
    return flatten_trainable(client.model, server.partition), loss


def aggregate(updates) -> np.ndarray:
    """Weighted mean of ``(vector, weight)`` pairs, reduced in the given order."""
    updates = [(np.asarray(v, dtype=np.float64), float(w)) for v, w in updates]
    if not updates:
        raise ProtocolError("no updates to aggregate")
    length = updates[0][0].shape
    for v, w in updates:
        if v.shape != length:
            raise ProtocolError(f"update of shape {v.shape} does not match {length}")
        if w < 0:
            raise ProtocolError(f"negative aggregation weight {w}")
    total = sum(w for _, w in updates)
    if total <= 0:
        raise ProtocolError("aggregation weights sum to zero")
    acc = (updates[0][1] / total) * updates[0][0]
    for v, w in updates[1:]:
        acc = acc + (w / total) * v
    return acc


@dataclass
class TrainingResult:
    model: Backbone
    ledger: RoundLedger
    server: ServerState


def run_training(model: Backbone, partition: ParameterPartition, client_series, cfg: TrainConfig,
                 adms_cfg: AdmsConfig, shared: SharedDataset | None = None, use_adms: bool = True,
                 keep_payloads: bool = False) -> TrainingResult:
    """Full federated loop; ``client_series[i]`` is client i's normalised training split."""
    if len(client_series) != cfg.n_clients:
        raise ConfigError(f"{len(client_series)} client datasets for n_clients={cfg.n_clients}")
    server_model = model.copy()
    server = ServerState(server_model, partition, flatten_trainable(server_model, partition))
    ledger = RoundLedger(keep_payloads=keep_payloads)
    if shared is not None and len(shared):
        server.shared = shared
        server.shared_patched = patch_windows(shared.windows(model.config.window), model.config.l_p)
        if keep_payloads:
            ledger.payloads.append(shared.to_bytes())
    clients = [make_client(i, s, model, adms_cfg, cfg.seed, use_adms)
               for i, s in enumerate(client_series)]

    pool = ThreadPoolExecutor(cfg.workers) if cfg.workers > 1 else None
    try:
        for t in range(1, cfg.global_rounds + 1):
            server.round = t
            broadcast(server, clients, ledger)

            def work(c: ClientState):
                try:
                    return local_train(c, server, cfg, adms_cfg)
                except TrainingError:
                    raise
                except Exception as exc:
                    raise TrainingError(f"client {c.client_id} round {t}: {exc}") from exc

            results = list(pool.map(work, clients)) if pool else [work(c) for c in clients]
            updates = []
            for c, (theta, loss) in zip(clients, results):
                payload = ledger.send(t, "up", c.client_id, to_wire(theta))
                updates.append((from_wire(payload), c.n_samples))
                ledger.losses.append((t, c.client_id, loss))
            server.theta = aggregate(updates)
            ledger.checksums.append((t, checksum(server.theta)))
    finally:
        if pool:
            pool.shutdown()
    load_trainable(server.model, partition, server.theta)
    return TrainingResult(server.model, ledger, server)


def centralized_train(model: Backbone, partition: ParameterPartition, train_series,
                      cfg: TrainConfig, adms_cfg: AdmsConfig, rng: np.random.Generator,
                      use_adms: bool = True) -> Backbone:
    """Single-party training for T_g * T_l epochs with no distillation."""
    out = model.copy()
    client = make_client(0, train_series, out, adms_cfg, cfg.seed, use_adms)
    plain = replace(cfg, lambda_=0.0, n_clients=1)
    for _ in range(cfg.global_rounds):
        _epochs(out, partition, client.patched, client.tables, rng, cfg.local_epochs, plain, adms_cfg)
    return out


# --------------------------------------------------------------------------- #
# privacy scan

def find_leaks(raw_series, blobs, k: int = 8) -> list[tuple[int, int]]:
    """Locate any ``k`` consecutive raw float64 values inside the traffic blobs.

    Each raw series is checked along time per dimension and in row-major
    order.  Returns ``(blob_index, byte_offset)`` for every hit.
    """
    runs: set[bytes] = set()
    heads: set[int] = set()
    for series in raw_series:
        x = np.asarray(series, dtype="<f8")
        x = x[:, None] if x.ndim == 1 else x
        seqs = [x[:, d] for d in range(x.shape[1])]
        if x.shape[1] > 1:
            seqs.append(x.reshape(-1))
        for s in seqs:
            s = np.ascontiguousarray(s, dtype="<f8")
            for i in range(len(s) - k + 1):
                runs.add(s[i:i + k].tobytes())
            heads.update(s[:max(len(s) - k + 1, 0)].view("<u8").tolist())
    if not runs:
        return []
    head_arr = np.fromiter(heads, dtype=np.uint64, count=len(heads))
    width = 8 * k
    hits = []
    for bi, blob in enumerate(blobs):
        for align in range(8):
            usable = (len(blob) - align) // 8
            if usable < k:
                continue
            words = np.frombuffer(blob, dtype="<u8", count=usable, offset=align)
            for j in np.flatnonzero(np.isin(words[:usable - k + 1], head_arr)):
                pos = align + 8 * int(j)
                if blob[pos:pos + width] in runs:
                    hits.append((bi, pos))
    return hits
