"""Privacy-preserving shared dataset synthesis.

Every client fits a small VAE to its own normalised training windows.  Besides
the usual reconstruction + KL objective, the training loss pulls the value
distribution of the reconstructions toward the real one (1-D Wasserstein
distance) and penalises the mutual information between real and reconstructed
values.  Decoded prior samples are then pooled on the server into the shared
dataset used for distillation.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import numerics as nx
from .data import make_windows
from .errors import ConfigError, InputError, ProtocolError, TrainingError
from .numerics import Tensor

_LOG_EPS = 1e-12


@dataclass(frozen=True)
class VaeConfig:
    latent_dim: int = 4
    hidden_dims: tuple[int, ...] = (32,)
    alpha_1: float = 1.0
    alpha_2: float = 0.1
    epochs: int = 100
    learning_rate: float = 0.01
    batch_size: int = 32
    window: int = 20
    synth_length: int = 100
    mi_bins: int = 16
    mi_bandwidth: float = 0.05
    optimizer: str = "adam"

    def __post_init__(self):
        if self.alpha_1 < 0 or self.alpha_2 < 0:
            raise ConfigError("vae.alpha_1 and vae.alpha_2 must be >= 0")
        if self.synth_length < 1:
            raise ConfigError("vae.synth_length must be >= 1")
        if self.mi_bins < 2:
            raise ConfigError("vae.mi_bins must be >= 2")
        if self.latent_dim < 1 or self.window < 1 or self.epochs < 0 or self.batch_size < 1:
            raise ConfigError("vae.latent_dim, window, batch_size must be >= 1 and epochs >= 0")
        if any(h < 1 for h in self.hidden_dims):
            raise ConfigError("vae.hidden_dims entries must be >= 1")
        if self.mi_bandwidth < 0:
            raise ConfigError("vae.mi_bandwidth must be >= 0 (0 selects hard binning)")


# --------------------------------------------------------------------------- #
# distribution distances

def _columns(x) -> np.ndarray:
    a = np.asarray(x, dtype=np.float64)
    return a[:, None] if a.ndim == 1 else a.reshape(len(a), -1)


def _w1_exact(x: np.ndarray, y: np.ndarray) -> float:
    x, y = np.sort(x), np.sort(y)
    if len(x) == len(y):
        return float(np.mean(np.abs(x - y)))
    support = np.concatenate([x, y])
    support.sort()
    deltas = np.diff(support)
    fx = np.searchsorted(x, support[:-1], side="right") / len(x)
    fy = np.searchsorted(y, support[:-1], side="right") / len(y)
    return float(np.sum(np.abs(fx - fy) * deltas))


def wasserstein_1d(x, y) -> float:
    """Exact W1 between empirical distributions; columns are treated separately and averaged."""
    x, y = _columns(x), _columns(y)
    if len(x) == 0 or len(y) == 0:
        raise InputError("wasserstein_1d needs non-empty sample sets")
    if x.shape[1] != y.shape[1]:
        raise InputError(f"dimension mismatch: {x.shape[1]} vs {y.shape[1]}")
    return float(np.mean([_w1_exact(x[:, d], y[:, d]) for d in range(x.shape[1])]))


def wasserstein_1d_tensor(real: np.ndarray, synth: Tensor) -> Tensor:
    """Differentiable W1 for equal-size (n, D) samples via sorted pairing."""
    real = _columns(real)
    if synth.shape != real.shape:
        raise InputError(f"wasserstein_1d_tensor needs equal shapes, got {real.shape} and {synth.shape}")
    n, dim = real.shape
    terms = []
    for d in range(dim):
        order = np.argsort(synth.data[:, d], kind="stable")
        ys = synth[order, d]
        terms.append(nx.mean(nx.abs_(nx.sub(ys, np.sort(real[:, d])))))
    total = terms[0]
    for t in terms[1:]:
        total = nx.add(total, t)
    return nx.scale(total, 1.0 / dim)


def gaussian_kl(mu, log_var):
    """KL(N(mu, exp(log_var)) || N(0, I)) summed over the last axis.

    Accepts arrays (returns float or array) or Tensors (returns Tensor).
    """
    if isinstance(mu, Tensor) or isinstance(log_var, Tensor):
        inner = nx.sub(nx.add(nx.exp(log_var), nx.square(mu)), nx.add(log_var, 1.0))
        return nx.scale(nx.sum_(inner, axis=-1), 0.5)
    mu = np.asarray(mu, dtype=np.float64)
    lv = np.asarray(log_var, dtype=np.float64)
    out = 0.5 * np.sum(np.exp(lv) + mu * mu - lv - 1.0, axis=-1)
    return float(out) if np.ndim(out) == 0 else out


def _memberships(v, bins: int, bandwidth: float) -> Tensor:
    """(n,) values -> (n, bins) bin memberships after range-normalising to [0, 1]."""
    t = nx.as_tensor(v)
    lo, hi = t[int(np.argmin(t.data))], t[int(np.argmax(t.data))]
    if hi.item() > lo.item():
        u = nx.div(nx.sub(t, lo), nx.sub(hi, lo))
    else:
        u = Tensor(np.zeros(t.shape))
    if bandwidth == 0:
        idx = np.clip(np.floor(u.data * bins).astype(int), 0, bins - 1)
        return Tensor(np.eye(bins)[idx])
    centers = (np.arange(bins) + 0.5) / bins
    diff = nx.sub(nx.reshape(u, (-1, 1)), centers[None, :])
    k = nx.exp(nx.scale(nx.square(diff), -0.5 / bandwidth ** 2))
    return nx.div(k, nx.sum_(k, axis=1, keepdims=True))


def _mi_column(x, y, bins: int, bandwidth: float) -> Tensor:
    mx = _memberships(x, bins, bandwidth)
    my = _memberships(y, bins, bandwidth)
    n = mx.shape[0]
    joint = nx.scale(nx.matmul(nx.transpose(mx), my), 1.0 / n)
    px = nx.sum_(joint, axis=1, keepdims=True)
    py = nx.sum_(joint, axis=0, keepdims=True)
    ratio = nx.sub(nx.log(nx.add(joint, _LOG_EPS)), nx.log(nx.add(nx.mul(px, py), _LOG_EPS)))
    return nx.sum_(nx.mul(joint, ratio))


def mutual_information(x, y, bins: int = 16, bandwidth: float = 0.05):
    """Plug-in MI (nats) of paired samples from a soft (or, with bandwidth 0, hard) histogram.

    Returns a Tensor when either input is a Tensor, else a float.
    """
    want_tensor = isinstance(x, Tensor) or isinstance(y, Tensor)
    xt, yt = nx.as_tensor(x), nx.as_tensor(y)
    if xt.ndim == 1:
        xt, yt = nx.reshape(xt, (-1, 1)), nx.reshape(yt, (-1, 1))
    if xt.shape != yt.shape:
        raise InputError(f"mutual_information needs paired samples, got {xt.shape} and {yt.shape}")
    if xt.shape[0] < 2:
        raise InputError("mutual_information needs at least 2 samples")
    dim = xt.shape[1]
    total = _mi_column(xt[:, 0], yt[:, 0], bins, bandwidth)
    for d in range(1, dim):
        total = nx.add(total, _mi_column(xt[:, d], yt[:, d], bins, bandwidth))
    out = nx.scale(total, 1.0 / dim)
    return out if want_tensor else out.item()


# --------------------------------------------------------------------------- #
# VAE

@dataclass
class VaeModel:
    config: VaeConfig
    input_dim: int
    params: dict[str, Tensor]
    history: list[float] = field(default_factory=list)

    @property
    def flat_width(self) -> int:
        return self.config.window * self.input_dim


def _mlp_shapes(sizes):
    return [(sizes[i], sizes[i + 1]) for i in range(len(sizes) - 1)]


def build_vae(config: VaeConfig, input_dim: int, rng: np.random.Generator) -> VaeModel:
    width = config.window * input_dim
    params: dict[str, Tensor] = {}

    def layer(name, fan_in, fan_out):
        params[f"{name}.weight"] = Tensor(rng.standard_normal((fan_in, fan_out)) / math.sqrt(fan_in),
                                          requires_grad=True)
        params[f"{name}.bias"] = Tensor(np.zeros(fan_out), requires_grad=True)

    enc = [width, *config.hidden_dims]
    for i, (a, b) in enumerate(_mlp_shapes(enc)):
        layer(f"enc{i}", a, b)
    layer("enc_mu", enc[-1], config.latent_dim)
    layer("enc_logvar", enc[-1], config.latent_dim)
    dec = [config.latent_dim, *config.hidden_dims]
    for i, (a, b) in enumerate(_mlp_shapes(dec)):
        layer(f"dec{i}", a, b)
    layer("dec_out", dec[-1], width)
    return VaeModel(config, input_dim, params)


def _dense(x, params, name):
    return nx.add(nx.matmul(x, params[f"{name}.weight"]), params[f"{name}.bias"])


def encode(model: VaeModel, x) -> tuple[Tensor, Tensor]:
    h = nx.as_tensor(x)
    for i in range(len(model.config.hidden_dims)):
        h = nx.tanh(_dense(h, model.params, f"enc{i}"))
    return _dense(h, model.params, "enc_mu"), _dense(h, model.params, "enc_logvar")


def decode(model: VaeModel, z) -> Tensor:
    h = nx.as_tensor(z)
    for i in range(len(model.config.hidden_dims)):
        h = nx.tanh(_dense(h, model.params, f"dec{i}"))
    return _dense(h, model.params, "dec_out")


def vae_loss(model: VaeModel, x: np.ndarray, eps: np.ndarray) -> tuple[Tensor, dict[str, float]]:
    """Objective on a batch of flattened windows ``x`` with reparameterisation noise ``eps``."""
    cfg = model.config
    mu, log_var = encode(model, x)
    z = nx.add(mu, nx.mul(nx.exp(nx.scale(log_var, 0.5)), eps))
    recon = decode(model, z)
    rec = nx.mse(recon, x)
    # KL per latent sample, spread over window elements to sit on the same scale as the MSE
    kl = nx.scale(nx.mean(gaussian_kl(mu, log_var)), 1.0 / model.flat_width)
    loss = nx.add(rec, kl)
    real = x.reshape(-1, model.input_dim)
    synth = nx.reshape(recon, (-1, model.input_dim))
    parts = {"recon": rec.item(), "kl": kl.item()}
    if cfg.alpha_1 > 0:
        w = wasserstein_1d_tensor(real, synth)
        loss = nx.add(loss, nx.scale(w, cfg.alpha_1))
        parts["wasserstein"] = w.item()
    if cfg.alpha_2 > 0:
        mi = mutual_information(Tensor(real), synth, cfg.mi_bins, cfg.mi_bandwidth)
        loss = nx.add(loss, nx.scale(mi, cfg.alpha_2))
        parts["mi"] = mi.item()
    parts["total"] = loss.item()
    return loss, parts


def train_vae(local_data, config: VaeConfig, seed: int) -> VaeModel:
    series = np.asarray(local_data, dtype=np.float64)
    if series.ndim == 1:
        series = series[:, None]
    windows = make_windows(series, config.window)
    x_all = windows.reshape(len(windows), -1)
    rng = np.random.default_rng(seed)
    model = build_vae(config, series.shape[1], rng)
    opt = nx.make_optimizer(config.optimizer, list(model.params.values()), config.learning_rate)
    for epoch in range(config.epochs):
        order = rng.permutation(len(x_all))
        losses = []
        for start in range(0, len(order), config.batch_size):
            batch = x_all[order[start:start + config.batch_size]]
            eps = rng.standard_normal((len(batch), config.latent_dim))
            loss, _ = vae_loss(model, batch, eps)
            if not np.isfinite(loss.item()):
                raise TrainingError(f"VAE loss diverged at epoch {epoch}")
            opt.zero_grad()
            loss.backward()
            opt.step()
            losses.append(loss.item())
        model.history.append(float(np.mean(losses)))
    for p in model.params.values():
        p.grad = None
    return model


def synthesize(model: VaeModel, synth_length: int, seed: int) -> np.ndarray:
    """Decode prior samples into a (synth_length, D) series."""
    cfg = model.config
    n_windows = -(-synth_length // cfg.window)
    z = np.random.default_rng(seed).standard_normal((n_windows, cfg.latent_dim))
    out = decode(model, z).data.reshape(n_windows * cfg.window, model.input_dim)
    return out[:synth_length].copy()


# --------------------------------------------------------------------------- #
# shared dataset

@dataclass(frozen=True)
class SharedDataset:
    entries: tuple[tuple[int, np.ndarray], ...]

    def __len__(self) -> int:
        return len(self.entries)

    @property
    def client_ids(self) -> list[int]:
        return [cid for cid, _ in self.entries]

    def windows(self, w: int) -> np.ndarray:
        """All entries cut into non-overlapping windows of length ``w``, in client order."""
        parts = [make_windows(series, w) for _, series in self.entries]
        return np.concatenate(parts) if parts else np.zeros((0, w, 1))

    def to_bytes(self) -> bytes:
        return b"".join(np.asarray(s, dtype="<f8").tobytes() for _, s in self.entries)

    def to_csv(self, path) -> None:
        dim = self.entries[0][1].shape[1] if self.entries else 1
        with Path(path).open("w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["client_id", "step", *[f"dim_{d}" for d in range(dim)]])
            for cid, series in self.entries:
                for step, row in enumerate(series):
                    w.writerow([cid, step, *[repr(float(v)) for v in row]])

    @classmethod
    def from_csv(cls, path) -> SharedDataset:
        path = Path(path)
        if not path.exists():
            raise InputError(f"shared dataset file not found: {path}")
        rows: dict[int, list[list[float]]] = {}
        with path.open(newline="") as fh:
            reader = csv.reader(fh)
            next(reader, None)
            for row in reader:
                rows.setdefault(int(row[0]), []).append([float(v) for v in row[2:]])
        return pool_shared_dataset({cid: np.array(v) for cid, v in rows.items()})


def pool_shared_dataset(per_client) -> SharedDataset:
    """Union of client syntheses ordered by client id.

    ``per_client`` is a mapping ``{client_id: series}`` or an iterable of
    ``(client_id, series)`` pairs; repeated ids are a protocol error.
    """
    items = list(per_client.items()) if isinstance(per_client, dict) else list(per_client)
    seen = set()
    for cid, _ in items:
        if cid in seen:
            raise ProtocolError(f"client {cid} submitted more than one synthesis")
        seen.add(cid)
    entries = []
    for cid, series in sorted(items, key=lambda kv: kv[0]):
        arr = np.array(series, dtype=np.float64)
        arr.setflags(write=False)
        entries.append((int(cid), arr if arr.ndim == 2 else arr[:, None]))
    return SharedDataset(tuple(entries))
