"""Anomaly-driven mask selection.

Each window is cut into non-overlapping patches.  A patch is scored by two
signals: the magnitude of its SSA residual (intra-patch irregularity) and its
cosine dissimilarity to the preceding patch (inter-patch change).  Patches
whose combined score passes a threshold get a larger weight when the mask is
sampled.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, InputError


RESIDUAL_RULES = ("last", "tail")


@dataclass(frozen=True)
class AdmsConfig:
    l_p: int = 10
    r_m: float = 0.20
    beta: float = 0.5
    score_threshold: float = 0.7
    weight_boost: float = 4.0
    ssa_window: int | None = None
    energy_tail: float = 0.10
    residual_rule: str = "last"     # "last" component only, or the longest low-energy "tail"

    def __post_init__(self):
        if self.ssa_window is None:
            object.__setattr__(self, "ssa_window", self.l_p // 2)
        if not 0 < self.r_m < 1:
            raise ConfigError(f"adms.r_m must be in (0, 1), got {self.r_m}")
        if not 0 <= self.beta <= 1:
            raise ConfigError(f"adms.beta must be in [0, 1], got {self.beta}")
        if not 2 <= self.ssa_window <= self.l_p - 1:
            raise ConfigError(f"adms.ssa_window must be in [2, {self.l_p - 1}], got {self.ssa_window}")
        if not 0 < self.energy_tail < 1:
            raise ConfigError(f"adms.energy_tail must be in (0, 1), got {self.energy_tail}")
        if self.weight_boost <= 0:
            raise ConfigError(f"adms.weight_boost must be positive, got {self.weight_boost}")
        if self.residual_rule not in RESIDUAL_RULES:
            raise ConfigError(f"adms.residual_rule must be one of {RESIDUAL_RULES}, got {self.residual_rule!r}")


@dataclass
class SsaDecomposition:
    singular_values: np.ndarray
    components: np.ndarray          # (K, l_p), one diagonal-averaged series per rank-1 term
    residual_index_set: tuple[int, ...]   # 0-based indices into singular_values

    @property
    def residual(self) -> np.ndarray:
        if not self.residual_index_set:
            return np.zeros(self.components.shape[1])
        return self.components[list(self.residual_index_set)].sum(axis=0)


@dataclass
class PatchScoreTable:
    residual: np.ndarray        # R_i
    similarity: np.ndarray      # C_i
    residual_norm: np.ndarray   # R'_i
    similarity_norm: np.ndarray  # C'_i
    score: np.ndarray
    flagged: np.ndarray

    def __len__(self) -> int:
        return len(self.score)


@dataclass
class MaskPlan:
    masked_indices: tuple[int, ...]
    sampling_weights: np.ndarray = field(repr=False)

    def as_array(self, n_patches: int) -> np.ndarray:
        out = np.zeros(n_patches, dtype=bool)
        out[list(self.masked_indices)] = True
        return out


def make_patches(series, l_p: int) -> np.ndarray:
    """(m, D) or (m,) series -> (m // l_p, l_p, D); the tail remainder is dropped."""
    x = np.asarray(series, dtype=np.float64)
    if x.ndim == 1:
        x = x[:, None]
    m = x.shape[0]
    if m < l_p:
        raise InputError(f"series of length {m} is shorter than one patch ({l_p})")
    n = m // l_p
    return x[: n * l_p].reshape(n, l_p, x.shape[1])


def patch_windows(windows: np.ndarray, l_p: int) -> np.ndarray:
    """(N, w, D) windows -> (N, w // l_p, l_p * D) model input, time-major inside a patch."""
    n, w, d = windows.shape
    p = w // l_p
    return windows[:, : p * l_p].reshape(n, p, l_p * d)


def hankel(x: np.ndarray, L: int) -> np.ndarray:
    k = len(x) - L + 1
    return np.stack([x[i:i + k] for i in range(L)])


def diagonal_average(m: np.ndarray) -> np.ndarray:
    rows, cols = m.shape
    idx = np.add.outer(np.arange(rows), np.arange(cols))
    total = np.bincount(idx.ravel(), weights=m.ravel(), minlength=rows + cols - 1)
    counts = np.bincount(idx.ravel(), minlength=rows + cols - 1)
    return total / counts


def _residual_indices(sv: np.ndarray, energy_tail: float, rule: str = "last") -> tuple[int, ...]:
    """Indices of the residual group.

    "last": the smallest trailing group, i.e. the final component alone.
    "tail": the longest trailing group whose energy share is at most
    ``energy_tail`` (never empty).
    """
    energy = sv * sv
    total = energy.sum()
    if total == 0.0:
        return tuple(range(len(sv)))
    if rule == "last":
        return (len(sv) - 1,)
    tail = np.cumsum(energy[::-1])[::-1] / total   # tail[j] = fraction carried by j..K-1
    start = len(sv) - 1
    while start > 0 and tail[start - 1] <= energy_tail:
        start -= 1
    return tuple(range(start, len(sv)))


def ssa_decompose(channel, L: int, energy_tail: float = 0.10, rule: str = "last") -> SsaDecomposition:
    x = np.asarray(channel, dtype=np.float64)
    if x.ndim != 1:
        raise InputError("ssa_decompose takes one channel at a time")
    if not 2 <= L <= len(x) - 1:
        raise ConfigError(f"SSA window L={L} out of range [2, {len(x) - 1}]")
    u, s, vt = np.linalg.svd(hankel(x, L), full_matrices=False)
    comps = np.stack([diagonal_average(s[k] * np.outer(u[:, k], vt[k])) for k in range(len(s))])
    return SsaDecomposition(s, comps, _residual_indices(s, energy_tail, rule))


def residual_score(patch, config: AdmsConfig) -> float:
    """Mean absolute SSA residual over every channel and time step of a patch."""
    p = np.asarray(patch, dtype=np.float64)
    if p.ndim == 1:
        p = p[:, None]
    total = 0.0
    for d in range(p.shape[1]):
        dec = ssa_decompose(p[:, d], config.ssa_window, config.energy_tail, config.residual_rule)
        total += np.abs(dec.residual).sum()
    return total / p.size


def inter_patch_similarity(patches) -> np.ndarray:
    flat = np.asarray(patches, dtype=np.float64).reshape(len(patches), -1)
    out = np.ones(len(flat))
    norms = np.linalg.norm(flat, axis=1)
    for i in range(1, len(flat)):
        denom = norms[i] * norms[i - 1]
        if denom > 0:
            out[i] = float(flat[i] @ flat[i - 1]) / denom
    return np.clip(out, -1.0, 1.0)


def _minmax(v: np.ndarray) -> np.ndarray:
    lo, hi = v.min(), v.max()
    if hi == lo:
        return np.zeros_like(v)
    return (v - lo) / (hi - lo)


def score_patches(residuals, similarities, beta: float, score_threshold: float = 0.7) -> PatchScoreTable:
    r = np.asarray(residuals, dtype=np.float64)
    c = np.asarray(similarities, dtype=np.float64)
    if r.size == 0 or r.shape != c.shape:
        raise InputError("score_patches needs equal-length, non-empty R and C")
    r_norm = _minmax(r)
    c_norm = _minmax((1.0 - c) / 2.0)
    score = beta * r_norm + (1.0 - beta) * c_norm
    return PatchScoreTable(r, c, r_norm, c_norm, score, score > score_threshold)


def score_window(window, config: AdmsConfig) -> PatchScoreTable:
    patches = make_patches(window, config.l_p)
    r = np.array([residual_score(p, config) for p in patches])
    return score_patches(r, inter_patch_similarity(patches), config.beta, config.score_threshold)


def mask_count(n_patches: int, r_m: float) -> int:
    return max(1, int(np.floor(n_patches * r_m + 0.5)))


def select_mask(table: PatchScoreTable, r_m: float, weight_boost: float,
                rng: np.random.Generator) -> MaskPlan:
    """Sequential weighted sampling without replacement (renormalised per draw)."""
    n = len(table)
    weights = np.where(table.flagged, float(weight_boost), 1.0)
    k = min(mask_count(n, r_m), n)
    remaining = list(range(n))
    w = weights.copy()
    chosen = []
    for _ in range(k):
        cum = np.cumsum(w[remaining])
        u = rng.random() * cum[-1]
        j = min(int(np.searchsorted(cum, u, side="right")), len(remaining) - 1)
        chosen.append(remaining.pop(j))
    return MaskPlan(tuple(sorted(chosen)), weights)
