"""Toy autoregressive policy: context-conditioned first-order softmax chain.

Row layout of ``logits`` is ``[ctx][prev][next]`` where ``prev`` ranges over
the ``n`` vocabulary tokens plus a BOS state at index ``n``.  Token ``n - 1``
is the stop token.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .core import ConfigurationError, InputError, RngStream, TokenSeq, validate_seq

GradientVector = np.ndarray  # flat, row-major over PolicyModel.logits

_MAGIC = b"RBPOLICY"
_LAYOUT_VERSION = 1
_HEADER = struct.Struct("<8sIIII")


def log_softmax(x: np.ndarray) -> np.ndarray:
    m = x.max(axis=-1, keepdims=True)
    z = x - m
    return z - np.log(np.exp(z).sum(axis=-1, keepdims=True))


@dataclass
class PolicyModel:
    logits: np.ndarray
    T_max: int

    def __post_init__(self) -> None:
        self.logits = np.asarray(self.logits, dtype=np.float64)
        if self.logits.ndim != 3 or self.logits.shape[1] != self.logits.shape[2] + 1:
            raise ConfigurationError(f"logits must have shape [C][n+1][n], got {self.logits.shape}")
        if self.logits.shape[2] < 2:
            raise ConfigurationError("vocabulary needs at least one regular token plus stop")
        if self.T_max < 1:
            raise ConfigurationError("T_max must be >= 1")
        if not np.all(np.isfinite(self.logits)):
            raise ConfigurationError("policy logits must be finite")

    @property
    def C(self) -> int:
        return self.logits.shape[0]

    @property
    def n(self) -> int:
        return self.logits.shape[2]

    @property
    def bos(self) -> int:
        return self.n

    @property
    def stop(self) -> int:
        return self.n - 1

    @property
    def size(self) -> int:
        return self.logits.size

    @property
    def dims(self) -> tuple[int, int, int]:
        return (self.n, self.C, self.T_max)

    def copy(self) -> "PolicyModel":
        return PolicyModel(self.logits.copy(), self.T_max)

    def with_params(self, flat: np.ndarray) -> "PolicyModel":
        return PolicyModel(np.asarray(flat, dtype=np.float64).reshape(self.logits.shape).copy(), self.T_max)

    def log_probs(self) -> np.ndarray:
        """Log step distributions for every (ctx, prev) row."""
        return log_softmax(self.logits)

    def probs(self) -> np.ndarray:
        return np.exp(self.log_probs())


def init_policy(n: int, C: int, T_max: int, rng: RngStream, scale: float = 0.1) -> PolicyModel:
    """Logits drawn i.i.d. Normal(0, scale) from ``rng``."""
    gen = rng.generator()
    return PolicyModel(gen.normal(0.0, scale, size=(C, n + 1, n)), T_max)


def check_same_shape(a: PolicyModel, b: PolicyModel) -> None:
    if a.dims != b.dims:
        raise ConfigurationError(f"policy shapes differ: {a.dims} vs {b.dims}")


def _check(model: PolicyModel, ctx: int, y: Sequence[int]) -> None:
    if not 0 <= ctx < model.C:
        raise InputError(f"context {ctx} outside [0, {model.C})")
    validate_seq(y, model.n, model.T_max)


def _prev_states(model: PolicyModel, y: Sequence[int]) -> np.ndarray:
    prev = np.empty(len(y), dtype=np.intp)
    prev[0] = model.bos
    prev[1:] = y[:-1]
    return prev


def seq_log_prob(logp: np.ndarray, model: PolicyModel, ctx: int, y: Sequence[int]) -> float:
    """``log_prob`` against precomputed log step distributions (no validation)."""
    return float(logp[ctx, _prev_states(model, y), np.asarray(y, dtype=np.intp)].sum())


def log_prob(model: PolicyModel, ctx: int, y: Sequence[int]) -> float:
    _check(model, ctx, y)
    return seq_log_prob(model.log_probs(), model, ctx, y)


class GradAccumulator:
    """Accumulates ``sum_k w_k * grad log pi(y_k | ctx_k)`` without materialising per-sequence gradients.

    For one step the row gradient is ``one_hot(y_i) - softmax(row)``; summing
    weights per row and per (row, token) lets the softmax part be applied once.
    """

    def __init__(self, model: PolicyModel, probs: np.ndarray | None = None):
        self.model = model
        self.probs = model.probs() if probs is None else probs
        self.row_weight = np.zeros(model.logits.shape[:2])
        self.token_weight = np.zeros(model.logits.shape)

    def add(self, ctx: int, y: Sequence[int], weight: float) -> None:
        prev = _prev_states(self.model, y)
        tok = np.asarray(y, dtype=np.intp)
        np.add.at(self.row_weight[ctx], prev, weight)
        np.add.at(self.token_weight[ctx], (prev, tok), weight)

    def result(self) -> GradientVector:
        g = self.token_weight - self.row_weight[..., None] * self.probs
        return g.ravel()


def grad_log_prob(model: PolicyModel, ctx: int, y: Sequence[int]) -> GradientVector:
    _check(model, ctx, y)
    acc = GradAccumulator(model)
    acc.add(ctx, y, 1.0)
    return acc.result()


class _RowSampler:
    def __init__(self, model: PolicyModel):
        cdf = np.cumsum(model.probs(), axis=-1)
        cdf[..., -1] = 1.0
        self.cdf = cdf

    def draw(self, ctx: int, prev: int, u: float) -> int:
        return int(np.searchsorted(self.cdf[ctx, prev], u, side="right"))


def sample(model: PolicyModel, ctx: int, rng: RngStream, _sampler: _RowSampler | None = None) -> TokenSeq:
    """Sample from BOS until the stop token.

    At most ``T_max - 1`` tokens are drawn; if none of them is the stop token
    the sequence is truncated and the stop token appended, so ``|y| <= T_max``.
    """
    if not 0 <= ctx < model.C:
        raise InputError(f"context {ctx} outside [0, {model.C})")
    sampler = _sampler or _RowSampler(model)
    gen = rng.generator()
    out: list[int] = []
    prev = model.bos
    for _ in range(model.T_max - 1):
        tok = sampler.draw(ctx, prev, gen.random())
        out.append(tok)
        if tok == model.stop:
            return tuple(out)
        prev = tok
    out.append(model.stop)
    return tuple(out)


def sample_many(model: PolicyModel, ctxs: Sequence[int], rngs: Sequence[RngStream]) -> list[TokenSeq]:
    sampler = _RowSampler(model)
    return [sample(model, c, r, sampler) for c, r in zip(ctxs, rngs)]


def entropy_table(model: PolicyModel) -> np.ndarray:
    """Shannon entropy (nats) of every row, shape ``[C][n+1]``."""
    logp = model.log_probs()
    p = np.exp(logp)
    h = -(p * logp).sum(axis=-1)
    return np.clip(h, 0.0, np.log(model.n))


def conditional_entropy(model: PolicyModel, ctx: int, prev: int) -> float:
    """Entropy of the next-token distribution given the previous token (``prev == n`` is BOS)."""
    if not 0 <= ctx < model.C or not 0 <= prev <= model.n:
        raise InputError(f"row ({ctx}, {prev}) out of range")
    logp = log_softmax(model.logits[ctx, prev])
    h = float(-(np.exp(logp) * logp).sum())
    return min(max(h, 0.0), float(np.log(model.n)))


def save_policy(model: PolicyModel, path: Path | str) -> Path:
    path = Path(path)
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(_MAGIC, _LAYOUT_VERSION, model.n, model.C, model.T_max))
        fh.write(np.ascontiguousarray(model.logits, dtype="<f8").tobytes())
    return path


def load_policy(path: Path | str) -> PolicyModel:
    raw = Path(path).read_bytes()
    if len(raw) < _HEADER.size:
        raise InputError(f"{path}: truncated checkpoint header")
    magic, version, n, C, T_max = _HEADER.unpack_from(raw)
    if magic != _MAGIC or version != _LAYOUT_VERSION:
        raise InputError(f"{path}: not a policy checkpoint (layout {version})")
    body = np.frombuffer(raw, dtype="<f8", offset=_HEADER.size)
    if body.size != C * (n + 1) * n:
        raise InputError(f"{path}: expected {C * (n + 1) * n} logits, found {body.size}")
    return PolicyModel(body.astype(np.float64).reshape(C, n + 1, n), T_max)
