"""Preference-pair construction: best/worst-of-K and percentile rejection sampling (RS+)."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .core import ConfigurationError, PreferencePair, RngStream, TokenSeq, substream
from .policy import PolicyModel, _RowSampler, sample

RewardFn = Callable[[int, TokenSeq], float]

_CANDIDATES = 0
_ACCEPT = 1


@dataclass(frozen=True)
class SamplerConfig:
    K: int = 5
    N: int = 32
    M: int = 8
    tau: float = 0.2
    J_max: int | None = None  # None means 100 * N

    def __post_init__(self) -> None:
        if self.K < 2:
            raise ConfigurationError("K must be >= 2")
        if self.N < 2 or self.M < 2:
            raise ConfigurationError("N and M must be >= 2")
        if self.M > self.N:
            raise ConfigurationError("M must not exceed N")
        if not (self.tau > 0 and math.isfinite(self.tau)):
            raise ConfigurationError("tau must be a positive finite number")
        if self.J_max is not None and self.J_max < 1:
            raise ConfigurationError("J_max must be >= 1")

    @property
    def attempt_cap(self) -> int:
        return 100 * self.N if self.J_max is None else self.J_max


def draw_candidates(policy: PolicyModel, ctx: int, count: int, rng: RngStream) -> list[TokenSeq]:
    """Candidate ``i`` always comes from the same substream, whichever sampler asks."""
    base = substream(rng, _CANDIDATES)
    rows = _RowSampler(policy)
    return [sample(policy, ctx, substream(base, i), rows) for i in range(count)]


def _extremes(indices: Sequence[int], scores: Sequence[float]) -> tuple[int, int]:
    # max/min return the first occurrence, i.e. the lowest candidate index on ties
    best = max(indices, key=lambda i: (scores[i], -i))
    worst = min(indices, key=lambda i: (scores[i], i))
    return best, worst


def best_worst_of_k(policy: PolicyModel, reward: RewardFn, ctx: int, cfg: SamplerConfig,
                    rng: RngStream) -> PreferencePair:
    """Sample K candidates and pair the highest-scored with the lowest-scored.

    When every candidate scores the same the pair is still returned with
    ``score_w == score_l``; ``pair.degenerate`` flags it.
    """
    cands = draw_candidates(policy, ctx, cfg.K, rng)
    scores = [reward(ctx, y) for y in cands]
    w, l = _extremes(range(cfg.K), scores)
    return PreferencePair(ctx, cands[w], cands[l], scores[w], scores[l])


def percentiles(rewards: Sequence[float]) -> list[float]:
    """Ascending rank / N; on ties the earlier index gets the lower rank."""
    N = len(rewards)
    if N < 1:
        raise ValueError("percentiles need at least one reward")
    order = np.argsort(np.asarray(rewards, dtype=np.float64), kind="stable")
    out = [0.0] * N
    for rank, idx in enumerate(order, 1):
        out[int(idx)] = rank / N
    return out


def acceptance_probability(p: float, tau: float) -> float:
    return math.exp((p - 1.0) / tau)


@dataclass
class AcceptanceTrace:
    accepted: list[int]
    attempts: list[tuple[int, float, bool]] = field(default_factory=list)  # (candidate, u, accepted)
    backfilled: list[int] = field(default_factory=list)

    def first_visit(self) -> dict[int, bool]:
        seen: dict[int, bool] = {}
        for cand, _, ok in self.attempts:
            seen.setdefault(cand, ok)
        return seen


def accept_candidates(pcts: Sequence[float], M: int, tau: float, j_max: int,
                      rng: RngStream) -> AcceptanceTrace:
    """The RS+ acceptance loop over precomputed percentiles.

    Attempt ``j`` visits candidate ``(j - 1) mod N``; already-accepted
    candidates are skipped without a draw.  After ``j_max`` attempts any
    shortfall is filled with the highest-percentile unaccepted candidates.
    """
    N = len(pcts)
    if M > N:
        raise ConfigurationError("M must not exceed the number of candidates")
    gen = rng.generator()
    trace = AcceptanceTrace([])
    taken = [False] * N
    for j in range(1, j_max + 1):
        if len(trace.accepted) >= M:
            break
        i = (j - 1) % N
        if taken[i]:
            continue
        u = float(gen.random())
        ok = u <= acceptance_probability(pcts[i], tau)
        trace.attempts.append((i, u, ok))
        if ok:
            taken[i] = True
            trace.accepted.append(i)
    if len(trace.accepted) < M:
        rest = sorted((i for i in range(N) if not taken[i]), key=lambda i: (-pcts[i], i))
        fill = rest[: M - len(trace.accepted)]
        trace.backfilled.extend(fill)
        trace.accepted.extend(fill)
    return trace


def rs_plus(policy: PolicyModel, reward: RewardFn, ctx: int, cfg: SamplerConfig,
            rng: RngStream) -> PreferencePair:
    cands = draw_candidates(policy, ctx, cfg.N, rng)
    scores = [reward(ctx, y) for y in cands]
    trace = accept_candidates(percentiles(scores), cfg.M, cfg.tau, cfg.attempt_cap, substream(rng, _ACCEPT))
    w, l = _extremes(sorted(trace.accepted), scores)
    return PreferencePair(ctx, cands[w], cands[l], scores[w], scores[l])
