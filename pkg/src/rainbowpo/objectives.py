"""Direct, per-objective loss formulas.

These are written straight from each method's published objective with their
own log-likelihood routine and scalar link code, and share nothing with
:mod:`rainbowpo.losses` beyond the policy container.  They exist to check the
unified loss against.
"""

from __future__ import annotations

import math
from typing import Callable, Sequence

from .core import PreferencePair
from .policy import PolicyModel


def seq_logp(model: PolicyModel, ctx: int, y: Sequence[int]) -> float:
    total = 0.0
    prev = model.n
    for tok in y:
        row = [float(v) for v in model.logits[ctx, prev]]
        m = max(row)
        lse = m + math.log(sum(math.exp(v - m) for v in row))
        total += row[tok] - lse
        prev = tok
    return total


def neg_log_sigmoid(x: float) -> float:
    # log(1 + exp(-x)), stable in both tails
    if x > 0:
        return math.log1p(math.exp(-x))
    return -x + math.log1p(math.exp(x))


def _mean(pairs, term: Callable[[PreferencePair], float]) -> float:
    return sum(term(p) for p in pairs) / len(pairs)


def _logratio(theta, ref, p, y):
    return seq_logp(theta, p.ctx, y) - seq_logp(ref, p.ctx, y)


def dpo(theta, ref, pairs, beta):
    return _mean(pairs, lambda p: neg_log_sigmoid(
        beta * _logratio(theta, ref, p, p.yw) - beta * _logratio(theta, ref, p, p.yl)))


def ln_dpo(theta, ref, pairs, beta):
    return _mean(pairs, lambda p: neg_log_sigmoid(
        beta / len(p.yw) * _logratio(theta, ref, p, p.yw) - beta / len(p.yl) * _logratio(theta, ref, p, p.yl)))


def simpo(theta, pairs, beta, gamma):
    return _mean(pairs, lambda p: neg_log_sigmoid(
        beta / len(p.yw) * seq_logp(theta, p.ctx, p.yw)
        - beta / len(p.yl) * seq_logp(theta, p.ctx, p.yl) - gamma))


def ipo(theta, ref, pairs, beta):
    return _mean(pairs, lambda p: (
        beta * _logratio(theta, ref, p, p.yw) - beta * _logratio(theta, ref, p, p.yl) - 0.5) ** 2)


def dpo_plus(theta, ref, pairs, beta, gamma):
    return _mean(pairs, lambda p: neg_log_sigmoid(
        beta * _logratio(theta, ref, p, p.yw) - beta * _logratio(theta, ref, p, p.yl) - gamma))


def cpo(theta, pairs, beta, lam=1.0, normalized_sft=True):
    def term(p):
        lw = seq_logp(theta, p.ctx, p.yw)
        sft = -(lw / len(p.yw) if normalized_sft else lw)
        return lam * sft + neg_log_sigmoid(beta * lw - beta * seq_logp(theta, p.ctx, p.yl))
    return _mean(pairs, term)


def slic_gpo(theta, ref, pairs, beta, delta):
    """Hinge link on the reference-anchored margin (no SFT term)."""
    return _mean(pairs, lambda p: max(
        0.0, delta - beta * _logratio(theta, ref, p, p.yw) + beta * _logratio(theta, ref, p, p.yl)))


def slic_rank(theta, pairs, delta):
    """Rank-calibration part of SLiC-HF: max(0, delta - log pi(y_w) + log pi(y_l))."""
    return _mean(pairs, lambda p: max(
        0.0, delta - seq_logp(theta, p.ctx, p.yw) + seq_logp(theta, p.ctx, p.yl)))


def odpo(theta, ref, pairs, beta, scale):
    return _mean(pairs, lambda p: neg_log_sigmoid(
        beta * _logratio(theta, ref, p, p.yw) - beta * _logratio(theta, ref, p, p.yl)
        - scale * (p.score_w - p.score_l)))


def mallows(theta, ref, pairs, beta, phis):
    terms = [neg_log_sigmoid(phi * (beta * _logratio(theta, ref, p, p.yw) - beta * _logratio(theta, ref, p, p.yl)))
             for p, phi in zip(pairs, phis)]
    return sum(terms) / len(terms)


def r_dpo(theta, ref, pairs, beta, penalty):
    return _mean(pairs, lambda p: neg_log_sigmoid(
        beta * _logratio(theta, ref, p, p.yw) - beta * _logratio(theta, ref, p, p.yl)
        - (penalty * len(p.yw) - penalty * len(p.yl))))


def dpo_sft(theta, ref, pairs, beta, lam):
    return _mean(pairs, lambda p: neg_log_sigmoid(
        beta * _logratio(theta, ref, p, p.yw) - beta * _logratio(theta, ref, p, p.yl))
        - lam * seq_logp(theta, p.ctx, p.yw))


def orpo(theta, pairs, lam):
    def term(p):
        pw = math.exp(seq_logp(theta, p.ctx, p.yw) / len(p.yw))
        pl = math.exp(seq_logp(theta, p.ctx, p.yl) / len(p.yl))
        z = math.log(pw / (1 - pw)) - math.log(pl / (1 - pl))
        return -math.log(pw) + lam * neg_log_sigmoid(z)
    return _mean(pairs, term)
