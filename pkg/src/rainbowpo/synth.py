"""Synthetic world: latent additive rewards, dataset generation and evaluation metrics."""

from __future__ import annotations

import enum
import hashlib
import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .core import (
    ConfigurationError,
    PreferenceDataset,
    Provenance,
    RngStream,
    substream,
)
from .losses import sigmoid
from .policy import PolicyModel, log_softmax, sample_many
from .sampler import SamplerConfig, best_worst_of_k, rs_plus


class Method(str, enum.Enum):
    BEST_WORST_OF_K = "BestWorstOfK"
    RS_PLUS = "RSPlus"


@dataclass(frozen=True)
class SyntheticReward:
    """r*(ctx, y) = sum_i token_scores[ctx][y_i] + length_bias * |y|."""

    token_scores: np.ndarray
    length_bias: float
    seed: int

    def __call__(self, ctx: int, y: Sequence[int]) -> float:
        return float(self.token_scores[ctx, list(y)].sum()) + self.length_bias * len(y)

    def digest(self) -> str:
        h = hashlib.sha256(np.ascontiguousarray(self.token_scores, dtype="<f8").tobytes())
        h.update(np.float64(self.length_bias).tobytes())
        return h.hexdigest()


def make_reward(n: int, C: int, length_bias: float, rng: RngStream) -> SyntheticReward:
    scores = rng.generator().normal(0.0, 1.0, size=(C, n))
    return SyntheticReward(scores, float(length_bias), rng.seed)


def bt_preference_prob(r_w: float, r_l: float, margin: float = 0.0) -> float:
    """Bradley-Terry win probability with an optional home-advantage margin."""
    return sigmoid(r_w - r_l - margin)


def generate_dataset(ref: PolicyModel, reward: SyntheticReward, prompts: int, method: Method | str,
                     sampler_cfg: SamplerConfig, rng: RngStream) -> PreferenceDataset:
    """One pair per prompt; prompt ``i`` uses context ``i mod C`` and substream ``i``."""
    if prompts < 1:
        raise ConfigurationError("prompts must be >= 1")
    method = Method(method)
    build = best_worst_of_k if method is Method.BEST_WORST_OF_K else rs_plus
    pairs = tuple(build(ref, reward, i % ref.C, sampler_cfg, substream(rng, i)) for i in range(prompts))
    prov = Provenance.BEST_WORST_OF_K if method is Method.BEST_WORST_OF_K else Provenance.REJECTION_SAMPLED
    return PreferenceDataset(pairs, prov, ref.n, ref.C)


@dataclass(frozen=True)
class EvalReport:
    win_rate: float
    avg_length: float
    pairwise_accuracy: float
    mean_reward: float
    accuracy_ties: int = 0

    def to_record(self) -> dict:
        return {
            "win_rate": self.win_rate,
            "avg_length": self.avg_length,
            "pairwise_accuracy": self.pairwise_accuracy,
            "mean_reward": self.mean_reward,
            "accuracy_ties": self.accuracy_ties,
        }


def _seq_logps(logp: np.ndarray, bos: int, ctxs, seqs) -> np.ndarray:
    out = np.empty(len(seqs))
    for k, (c, y) in enumerate(zip(ctxs, seqs)):
        prev = np.empty(len(y), dtype=np.intp)
        prev[0] = bos
        prev[1:] = y[:-1]
        out[k] = logp[c, prev, list(y)].sum()
    return out


def pairwise_accuracy(theta: PolicyModel, ref: PolicyModel, data: PreferenceDataset) -> tuple[float, int]:
    """Fraction of pairs with implicit_reward(y_w) > implicit_reward(y_l), and the tie count."""
    lt, lr = log_softmax(theta.logits), log_softmax(ref.logits)
    ctxs = [p.ctx for p in data.pairs]
    ws = [p.yw for p in data.pairs]
    ls = [p.yl for p in data.pairs]
    rw = _seq_logps(lt, theta.bos, ctxs, ws) - _seq_logps(lr, ref.bos, ctxs, ws)
    rl = _seq_logps(lt, theta.bos, ctxs, ls) - _seq_logps(lr, ref.bos, ctxs, ls)
    return float(np.mean(rw > rl)), int(np.sum(rw == rl))


def evaluate(theta: PolicyModel, ref: PolicyModel, reward: SyntheticReward, held_out: PreferenceDataset,
             n_eval: int, rng: RngStream) -> EvalReport:
    """Head-to-head generations against the reference plus held-out implicit-reward accuracy.

    Prompt ``k`` uses context ``k mod C``; the policy draws from substream
    ``2k`` and the reference from ``2k + 1``.  Exact reward ties count 0.5.
    """
    if n_eval < 1:
        raise ConfigurationError("n_eval must be >= 1")
    ctxs = [k % theta.C for k in range(n_eval)]
    ys = sample_many(theta, ctxs, [substream(rng, 2 * k) for k in range(n_eval)])
    yr = sample_many(ref, ctxs, [substream(rng, 2 * k + 1) for k in range(n_eval)])
    wins = 0.0
    reward_total = 0.0
    for c, a, b in zip(ctxs, ys, yr):
        ra, rb = reward(c, a), reward(c, b)
        reward_total += ra
        wins += 1.0 if ra > rb else 0.5 if ra == rb else 0.0
    acc, ties = pairwise_accuracy(theta, ref, held_out)
    report = EvalReport(
        win_rate=wins / n_eval,
        avg_length=sum(len(y) for y in ys) / n_eval,
        pairwise_accuracy=acc,
        mean_reward=reward_total / n_eval,
        accuracy_ties=ties,
    )
    if not all(math.isfinite(v) for v in (report.win_rate, report.avg_length, report.mean_reward)):
        raise ArithmeticError("non-finite evaluation metric")
    return report


def world_seed_streams(seed: int) -> dict[str, RngStream]:
    """Fixed, named substreams of a world seed."""
    root = RngStream(seed)
    names = ["reference", "reward", "data", "init", "train", "eval"]
    return {name: substream(root, i) for i, name in enumerate(names)}
