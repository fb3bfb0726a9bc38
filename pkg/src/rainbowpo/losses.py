"""The unified RainbowPO objective, its named presets, and ORPO.

Every loss returns a :class:`LossReport` holding the scalar value and its
exact gradient with respect to the trainable policy's logits.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np

from .core import (
    ConfigurationError,
    InputError,
    NumericalError,
    PreconditionError,
    PreferenceDataset,
    PreferencePair,
)
from .policy import (
    GradAccumulator,
    GradientVector,
    PolicyModel,
    check_same_shape,
    log_prob,
    seq_log_prob,
)

ORPO_CLAMP = 1e-12


def log_sigmoid(x: float) -> float:
    return -float(np.logaddexp(0.0, -x))


def sigmoid(x: float) -> float:
    if x >= 0:
        return 1.0 / (1.0 + math.exp(-x))
    e = math.exp(x)
    return e / (1.0 + e)


class LinkKind(str, enum.Enum):
    LOGISTIC = "logistic"
    HINGE = "hinge"
    SQUARE = "square"


@dataclass(frozen=True)
class LinkFunction:
    kind: LinkKind = LinkKind.LOGISTIC
    delta: float = 1.0  # hinge margin, unused by the other kinds

    def __post_init__(self) -> None:
        object.__setattr__(self, "kind", LinkKind(self.kind))
        if self.kind is LinkKind.HINGE and not self.delta > 0:
            raise ConfigurationError("hinge link needs delta > 0")

    def value(self, x: float) -> float:
        if self.kind is LinkKind.LOGISTIC:
            return -log_sigmoid(x)
        if self.kind is LinkKind.HINGE:
            return max(0.0, self.delta - x)
        return (x - 0.5) ** 2

    def derivative(self, x: float) -> float:
        if self.kind is LinkKind.LOGISTIC:
            return -sigmoid(-x)
        if self.kind is LinkKind.HINGE:
            # subgradient 0 at the kink
            return -1.0 if x < self.delta else 0.0
        return 2.0 * (x - 0.5)


LOGISTIC = LinkFunction(LinkKind.LOGISTIC)
SQUARE = LinkFunction(LinkKind.SQUARE)


def hinge(delta: float = 1.0) -> LinkFunction:
    return LinkFunction(LinkKind.HINGE, delta)


@dataclass(frozen=True)
class RainbowConfig:
    """Loss configuration; defaults are the full RainbowPO setting (beta 10, alpha 0.25, gamma 0.1).

    ``gamma`` is the target margin entering as ``(1 - alpha) * gamma`` through
    reference mixing.  ``home_advantage`` is a constant margin applied
    regardless of ``alpha`` (DPO+ when ``alpha = 1``).
    """

    beta: float = 10.0
    alpha: float = 0.25
    gamma: float = 0.1
    eta: int = 1
    lam: float = 0.0
    link: LinkFunction = field(default_factory=LinkFunction)
    use_dispersion: bool = True
    use_pair_offset: bool = False
    offset_scale: float = 0.0
    length_penalty: float = 0.0
    home_advantage: float = 0.0
    sft_normalized: bool = False

    def __post_init__(self) -> None:
        if isinstance(self.link, dict):
            object.__setattr__(self, "link", LinkFunction(**self.link))
        vals = (self.beta, self.alpha, self.gamma, self.lam, self.offset_scale,
                self.length_penalty, self.home_advantage)
        if not all(math.isfinite(v) for v in vals):
            raise ConfigurationError("loss configuration values must be finite")
        if not self.beta > 0:
            raise ConfigurationError("beta must be > 0")
        if not 0.0 <= self.alpha <= 1.0:
            raise ConfigurationError("alpha must lie in [0, 1]")
        if self.eta not in (0, 1):
            raise ConfigurationError("eta must be 0 or 1")
        if self.gamma < 0 or self.lam < 0 or self.offset_scale < 0 or self.length_penalty < 0:
            raise ConfigurationError("gamma, lam, offset_scale and length_penalty must be >= 0")

    # Named specialisations.  Each leaves dispersion off unless stated.
    @classmethod
    def dpo(cls, beta: float) -> "RainbowConfig":
        return cls(beta=beta, alpha=1.0, gamma=0.0, eta=0, use_dispersion=False)

    @classmethod
    def ln_dpo(cls, beta: float) -> "RainbowConfig":
        return cls(beta=beta, alpha=1.0, gamma=0.0, eta=1, use_dispersion=False)

    @classmethod
    def simpo(cls, beta: float, gamma: float) -> "RainbowConfig":
        return cls(beta=beta, alpha=0.0, gamma=gamma, eta=1, use_dispersion=False)

    @classmethod
    def ipo(cls, beta: float) -> "RainbowConfig":
        return cls(beta=beta, alpha=1.0, gamma=0.0, eta=0, link=SQUARE, use_dispersion=False)

    @classmethod
    def dpo_plus(cls, beta: float, margin: float) -> "RainbowConfig":
        return cls(beta=beta, alpha=1.0, gamma=0.0, eta=0, home_advantage=margin, use_dispersion=False)

    @classmethod
    def cpo(cls, beta: float, lam: float = 1.0, sft_normalized: bool = True) -> "RainbowConfig":
        return cls(beta=beta, alpha=0.0, gamma=0.0, eta=0, lam=lam, sft_normalized=sft_normalized,
                   use_dispersion=False)

    @classmethod
    def slic(cls, beta: float, delta: float) -> "RainbowConfig":
        return cls(beta=beta, alpha=1.0, gamma=0.0, eta=0, link=hinge(delta), use_dispersion=False)

    @classmethod
    def odpo(cls, beta: float, offset_scale: float) -> "RainbowConfig":
        return cls(beta=beta, alpha=1.0, gamma=0.0, eta=0, use_pair_offset=True,
                   offset_scale=offset_scale, use_dispersion=False)

    @classmethod
    def mallows(cls, beta: float) -> "RainbowConfig":
        return cls(beta=beta, alpha=1.0, gamma=0.0, eta=0, use_dispersion=True)

    @classmethod
    def r_dpo(cls, beta: float, length_penalty: float) -> "RainbowConfig":
        return cls(beta=beta, alpha=1.0, gamma=0.0, eta=0, length_penalty=length_penalty,
                   use_dispersion=False)

    def but(self, **changes) -> "RainbowConfig":
        return replace(self, **changes)


@dataclass
class LossReport:
    loss: float
    gradient: GradientVector
    per_pair_inner: list[float]
    # mean over pairs of l_theta(y_w) - l_theta(y_l) (eta-normalised)
    mean_margin: float
    clamped: int = 0

    def to_record(self) -> dict:
        return {"loss": self.loss, "mean_margin": self.mean_margin,
                "per_pair_inner": list(self.per_pair_inner), "clamped": self.clamped}


def implicit_reward(theta: PolicyModel, ref: PolicyModel, ctx: int, y: Sequence[int]) -> float:
    """log pi_theta(y|x) - log pi_ref(y|x)."""
    check_same_shape(theta, ref)
    return log_prob(theta, ctx, y) - log_prob(ref, ctx, y)


def length_normalized_reward(theta: PolicyModel, ref: PolicyModel, ctx: int, y: Sequence[int]) -> float:
    return implicit_reward(theta, ref, ctx, y) / len(y)


def length_regularized_reward(theta: PolicyModel, ref: PolicyModel, ctx: int, y: Sequence[int],
                              length_penalty: float) -> float:
    return implicit_reward(theta, ref, ctx, y) - length_penalty * len(y)


def normalized_loglik(model: PolicyModel, ctx: int, y: Sequence[int], eta: int) -> float:
    if eta not in (0, 1):
        raise ConfigurationError("eta must be 0 or 1")
    lp = log_prob(model, ctx, y)
    return lp / len(y) if eta == 1 else lp


def normalized_likelihood(model: PolicyModel, ctx: int, y: Sequence[int]) -> float:
    """Geometric-mean per-token probability exp(log pi(y|x) / |y|)."""
    return math.exp(log_prob(model, ctx, y) / len(y))


def pair_offset(pair: PreferencePair, cfg: RainbowConfig) -> float:
    if not cfg.use_pair_offset:
        return 0.0
    if not pair.has_scores:
        raise InputError("pair offset requested but the pair carries no scores")
    return cfg.offset_scale * (pair.score_w - pair.score_l)


def _inner(lw: float, ll: float, rw: float, rl: float, lenw: int, lenl: int,
           offset: float, cfg: RainbowConfig, phi: float) -> float:
    return phi * (
        cfg.beta * (lw - ll)
        - cfg.alpha * cfg.beta * (rw - rl)
        - (1.0 - cfg.alpha) * cfg.gamma
        - cfg.home_advantage
        - offset
        - cfg.length_penalty * (lenw - lenl)
    )


def _norm(lp: float, length: int, eta: int) -> float:
    return lp / length if eta == 1 else lp


def inner_argument(theta: PolicyModel, ref: PolicyModel, pair: PreferencePair,
                   cfg: RainbowConfig, phi: float = 1.0) -> float:
    """The link argument for one pair (practical mixed-reference form)."""
    check_same_shape(theta, ref)
    if phi < 0:
        raise PreconditionError("phi must be >= 0")
    e = cfg.eta
    lw = _norm(log_prob(theta, pair.ctx, pair.yw), len(pair.yw), e)
    ll = _norm(log_prob(theta, pair.ctx, pair.yl), len(pair.yl), e)
    rw = _norm(log_prob(ref, pair.ctx, pair.yw), len(pair.yw), e)
    rl = _norm(log_prob(ref, pair.ctx, pair.yl), len(pair.yl), e)
    return _inner(lw, ll, rw, rl, len(pair.yw), len(pair.yl), pair_offset(pair, cfg), cfg, phi)


def _batch_pairs(batch) -> Sequence[PreferencePair]:
    pairs = batch.pairs if isinstance(batch, PreferenceDataset) else tuple(batch)
    if not pairs:
        raise InputError("empty batch")
    return pairs


def reference_logliks(ref: PolicyModel, pairs: Sequence[PreferencePair]) -> list[tuple[float, float]]:
    """Unnormalised reference log-likelihoods (y_w, y_l) per pair; cacheable across steps."""
    logp = ref.log_probs()
    return [(seq_log_prob(logp, ref, p.ctx, p.yw), seq_log_prob(logp, ref, p.ctx, p.yl)) for p in pairs]


def rainbow_loss(theta: PolicyModel, ref: PolicyModel, batch, cfg: RainbowConfig,
                 phi_values: Sequence[float] | None = None,
                 ref_logliks: Sequence[tuple[float, float]] | None = None) -> LossReport:
    """mean_i f(inner_i) + lam * mean_i(-log pi_theta(y_w,i)) with its exact gradient.

    ``phi_values`` defaults to all ones; ``ref_logliks`` may carry precomputed
    reference log-likelihoods aligned with the batch.
    """
    check_same_shape(theta, ref)
    pairs = _batch_pairs(batch)
    B = len(pairs)
    if phi_values is None:
        phi_values = [1.0] * B
    if len(phi_values) != B:
        raise InputError(f"{len(phi_values)} phi values for {B} pairs")
    for p in pairs:
        for y in (p.yw, p.yl):
            if len(y) > theta.T_max or min(y) < 0 or max(y) >= theta.n:
                raise InputError("pair sequence invalid for policy dimensions")
        if not 0 <= p.ctx < theta.C:
            raise InputError(f"context {p.ctx} outside [0, {theta.C})")
    if ref_logliks is None:
        ref_logliks = reference_logliks(ref, pairs)

    logp = theta.log_probs()
    acc = GradAccumulator(theta, np.exp(logp))
    e = cfg.eta
    link_total = 0.0
    sft_total = 0.0
    margin_total = 0.0
    inners: list[float] = []
    for i, (p, phi, (rw_raw, rl_raw)) in enumerate(zip(pairs, phi_values, ref_logliks)):
        lpw = seq_log_prob(logp, theta, p.ctx, p.yw)
        lpl = seq_log_prob(logp, theta, p.ctx, p.yl)
        nw, nl = len(p.yw), len(p.yl)
        lw, ll = _norm(lpw, nw, e), _norm(lpl, nl, e)
        x = _inner(lw, ll, _norm(rw_raw, nw, e), _norm(rl_raw, nl, e), nw, nl, pair_offset(p, cfg), cfg, phi)
        fx = cfg.link.value(x)
        sft = -(lpw / nw if cfg.sft_normalized else lpw)
        if not (math.isfinite(x) and math.isfinite(fx) and math.isfinite(sft)):
            raise NumericalError(f"non-finite loss term at pair {i}")
        inners.append(x)
        link_total += fx
        sft_total += sft
        margin_total += lw - ll

        dfx = cfg.link.derivative(x) * phi * cfg.beta / B
        scale_w = 1.0 / nw if e == 1 else 1.0
        scale_l = 1.0 / nl if e == 1 else 1.0
        w_weight = dfx * scale_w
        if cfg.lam:
            w_weight -= cfg.lam / B * (1.0 / nw if cfg.sft_normalized else 1.0)
        acc.add(p.ctx, p.yw, w_weight)
        acc.add(p.ctx, p.yl, -dfx * scale_l)

    loss = link_total / B + cfg.lam * sft_total / B
    if not math.isfinite(loss):
        raise NumericalError("non-finite batch loss")
    return LossReport(loss, acc.result(), inners, margin_total / B)


def _clamp(p: float) -> tuple[float, bool]:
    lo, hi = ORPO_CLAMP, 1.0 - ORPO_CLAMP
    if p < lo:
        return lo, True
    if p > hi:
        return hi, True
    return p, False


def _log_odds(p: float) -> float:
    return math.log(p) - math.log1p(-p)


def orpo_loss(theta: PolicyModel, batch, lam_orpo: float) -> LossReport:
    """mean_i [ -log p(y_w) - lam * log sigma(log odds_w - log odds_l) ] with p the geometric-mean likelihood.

    ``p`` is clamped into [1e-12, 1 - 1e-12] before forming odds; clamped
    likelihoods contribute no odds gradient.  ``per_pair_inner`` holds the
    odds-ratio arguments.
    """
    if lam_orpo < 0:
        raise ConfigurationError("lam_orpo must be >= 0")
    pairs = _batch_pairs(batch)
    B = len(pairs)
    logp = theta.log_probs()
    acc = GradAccumulator(theta, np.exp(logp))
    total = 0.0
    margin_total = 0.0
    clamped = 0
    inners = []
    for i, p in enumerate(pairs):
        nw, nl = len(p.yw), len(p.yl)
        sw = seq_log_prob(logp, theta, p.ctx, p.yw) / nw
        sl = seq_log_prob(logp, theta, p.ctx, p.yl) / nl
        pw, cw = _clamp(math.exp(sw))
        pl, cl = _clamp(math.exp(sl))
        clamped += cw + cl
        z = _log_odds(pw) - _log_odds(pl)
        term = -sw - lam_orpo * log_sigmoid(z)
        if not math.isfinite(term):
            raise NumericalError(f"non-finite ORPO term at pair {i}")
        total += term
        margin_total += sw - sl
        inners.append(z)
        # d/dz of -lam*log sigma(z) is -lam*sigma(-z); d log-odds / ds = 1/(1-p)
        dz = -lam_orpo * sigmoid(-z)
        gw = -1.0 + (0.0 if cw else dz / (1.0 - pw))
        gl = 0.0 if cl else -dz / (1.0 - pl)
        acc.add(p.ctx, p.yw, gw / (nw * B))
        acc.add(p.ctx, p.yl, gl / (nl * B))
    return LossReport(total / B, acc.result(), inners, margin_total / B, clamped)


def orpo_po_bound(p_w: float, p_l: float) -> tuple[float, float]:
    """Odds-ratio preference term and its length-normalised logistic upper bound.

    Requires ``log p_w >= log p_l``; returns ``(po_term, bound)`` with
    ``po_term <= bound``.
    """
    if not (0.0 < p_w < 1.0 and 0.0 < p_l < 1.0):
        raise PreconditionError("likelihoods must lie strictly inside (0, 1)")
    delta = math.log(p_w) - math.log(p_l)
    if delta < 0:
        raise PreconditionError(f"bound assumes log p_w >= log p_l (got delta={delta})")
    po = -log_sigmoid(_log_odds(p_w) - _log_odds(p_l))
    bound = -log_sigmoid(delta / (1.0 - p_l))
    return po, bound
