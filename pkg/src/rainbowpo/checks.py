"""Invariant suite run by ``rainbowpo check``.

Each check returns a :class:`CheckResult`; a failure names the offending
inputs.  The suite is deterministic (fixed seeds).
"""

from __future__ import annotations

import itertools
import math
import time
from dataclasses import dataclass
from typing import Callable

import numpy as np

from . import objectives as obj
from .core import ConfigurationError, PreferencePair, RngStream, substream
from .dispersion import DispersionConfig, dispersion, dispersion_values
from .losses import (
    LOGISTIC,
    SQUARE,
    RainbowConfig,
    hinge,
    inner_argument,
    orpo_loss,
    orpo_po_bound,
    rainbow_loss,
)
from .policy import PolicyModel, grad_log_prob, log_prob
from .sampler import (
    SamplerConfig,
    accept_candidates,
    acceptance_probability,
    best_worst_of_k,
    rs_plus,
)
from .synth import make_reward


@dataclass
class CheckResult:
    name: str
    passed: bool
    detail: str
    seconds: float = 0.0


def central_difference(fn: Callable[[np.ndarray], float], x: np.ndarray, h: float = 1e-5) -> np.ndarray:
    g = np.empty_like(x)
    for j in range(x.size):
        xp, xm = x.copy(), x.copy()
        xp[j] += h
        xm[j] -= h
        g[j] = (fn(xp) - fn(xm)) / (2 * h)
    return g


def max_relative_error(analytic: np.ndarray, numeric: np.ndarray) -> float:
    """Infinity-norm error relative to the larger gradient (floored at 1e-8)."""
    scale = max(np.max(np.abs(analytic)), np.max(np.abs(numeric)), 1e-8)
    return float(np.max(np.abs(analytic - numeric)) / scale)


def random_policy(gen: np.random.Generator, n: int, C: int, T_max: int, scale: float = 1.0) -> PolicyModel:
    return PolicyModel(gen.normal(0.0, scale, size=(C, n + 1, n)), T_max)


def random_seq(gen: np.random.Generator, n: int, T_max: int) -> tuple[int, ...]:
    L = int(gen.integers(1, T_max + 1))
    body = gen.integers(0, n - 1, size=L - 1).tolist()
    return tuple(body + [n - 1])


def random_pairs(gen: np.random.Generator, n: int, C: int, T_max: int, count: int) -> list[PreferencePair]:
    pairs = []
    for _ in range(count):
        sw, sl = sorted(gen.normal(size=2).tolist(), reverse=True)
        pairs.append(PreferencePair(int(gen.integers(C)), random_seq(gen, n, T_max), random_seq(gen, n, T_max),
                                    sw, sl))
    return pairs


def random_loss_config(gen: np.random.Generator) -> RainbowConfig:
    link = [LOGISTIC, SQUARE, hinge(float(gen.choice([0.5, 1.0, 2.0])))][int(gen.integers(3))]
    return RainbowConfig(
        beta=float(gen.choice([0.1, 0.5, 1.0, 2.0, 10.0])),
        alpha=float(gen.choice([0.0, 0.25, 1.0])),
        gamma=float(gen.choice([0.0, 0.1])),
        eta=int(gen.integers(2)),
        lam=float(gen.choice([0.0, 0.1])),
        link=link,
        use_dispersion=bool(gen.integers(2)),
        use_pair_offset=bool(gen.integers(2)),
        offset_scale=float(gen.choice([0.0, 0.5])),
        length_penalty=float(gen.choice([0.0, 0.05])),
        sft_normalized=bool(gen.integers(2)),
    )


def _rainbow_value(theta: PolicyModel, ref, pairs, cfg, phis):
    return lambda x: rainbow_loss(theta.with_params(x), ref, pairs, cfg, phis).loss


def check_gradients(instances: int = 100, seed: int = 11, tol: float = 1e-6) -> CheckResult:
    gen = RngStream(seed).generator()
    worst = 0.0
    done = 0
    while done < instances:
        n, C, T = int(gen.integers(3, 6)), int(gen.integers(1, 3)), int(gen.integers(2, 6))
        theta, ref = random_policy(gen, n, C, T), random_policy(gen, n, C, T)
        pairs = random_pairs(gen, n, C, T, int(gen.integers(1, 4)))
        cfg = random_loss_config(gen)
        phis = dispersion_values(ref, pairs_dataset(pairs)) if cfg.use_dispersion else None
        xs = [inner_argument(theta, ref, p, cfg, 1.0 if phis is None else phis[i]) for i, p in enumerate(pairs)]
        if cfg.link.kind.value == "hinge" and any(abs(x - cfg.link.delta) < 1e-3 for x in xs):
            continue  # too close to the kink for a finite-difference comparison
        rep = rainbow_loss(theta, ref, pairs, cfg, phis)
        num = central_difference(_rainbow_value(theta, ref, pairs, cfg, phis), theta.logits.ravel().copy())
        err = max_relative_error(rep.gradient, num)
        if err > tol:
            return CheckResult("gradients", False, f"rel err {err:.3e} for cfg={cfg}")
        worst = max(worst, err)
        done += 1
    # ORPO and raw log-likelihood gradients
    for k in range(20):
        n, C, T = 4, 2, 5
        theta = random_policy(gen, n, C, T, scale=0.5)
        pairs = random_pairs(gen, n, C, T, 3)
        rep = orpo_loss(theta, pairs, 0.5)
        num = central_difference(lambda x: orpo_loss(theta.with_params(x), pairs, 0.5).loss,
                                 theta.logits.ravel().copy())
        err = max_relative_error(rep.gradient, num)
        y = pairs[0].yw
        num_lp = central_difference(lambda x: log_prob(theta.with_params(x), pairs[0].ctx, y),
                                    theta.logits.ravel().copy())
        err = max(err, max_relative_error(grad_log_prob(theta, pairs[0].ctx, y), num_lp))
        if err > tol:
            return CheckResult("gradients", False, f"ORPO/log-prob rel err {err:.3e} (instance {k})")
        worst = max(worst, err)
    return CheckResult("gradients", True, f"{instances} rainbow + 20 ORPO instances, max rel err {worst:.2e}")


def pairs_dataset(pairs):
    from .core import PreferenceDataset
    return PreferenceDataset(tuple(pairs))


def _close(a: float, b: float, tol: float = 1e-12) -> bool:
    return abs(a - b) <= tol * max(1.0, abs(b))


def specialization_cases(gen: np.random.Generator):
    """(name, config, oracle) triples; oracles take (theta, ref, pairs, phis)."""
    beta = float(gen.choice([0.1, 0.5, 1.0, 2.0]))
    gamma = float(gen.choice([0.1, 0.5, 1.0]))
    delta = float(gen.choice([0.5, 1.0]))
    scale = float(gen.choice([0.2, 0.5]))
    lam = float(gen.choice([0.1, 1.0]))
    return [
        ("DPO", RainbowConfig.dpo(beta), lambda t, r, p, f: obj.dpo(t, r, p, beta)),
        ("LN-DPO", RainbowConfig.ln_dpo(beta).but(gamma=gamma),
         lambda t, r, p, f: obj.ln_dpo(t, r, p, beta)),
        ("SimPO", RainbowConfig.simpo(beta, gamma), lambda t, r, p, f: obj.simpo(t, p, beta, gamma)),
        ("IPO", RainbowConfig.ipo(beta), lambda t, r, p, f: obj.ipo(t, r, p, beta)),
        ("DPO+", RainbowConfig.dpo_plus(beta, gamma), lambda t, r, p, f: obj.dpo_plus(t, r, p, beta, gamma)),
        ("CPO", RainbowConfig.cpo(beta, lam), lambda t, r, p, f: obj.cpo(t, p, beta, lam, True)),
        ("CPO-unnormalized-SFT", RainbowConfig.cpo(beta, lam, sft_normalized=False),
         lambda t, r, p, f: obj.cpo(t, p, beta, lam, False)),
        ("SLiC-hinge", RainbowConfig.slic(beta, delta), lambda t, r, p, f: obj.slic_gpo(t, r, p, beta, delta)),
        ("SLiC-rank", RainbowConfig(beta=1.0, alpha=0.0, gamma=0.0, eta=0, link=hinge(delta), use_dispersion=False),
         lambda t, r, p, f: obj.slic_rank(t, p, delta)),
        ("ODPO", RainbowConfig.odpo(beta, scale), lambda t, r, p, f: obj.odpo(t, r, p, beta, scale)),
        ("MallowsPO", RainbowConfig.mallows(beta), lambda t, r, p, f: obj.mallows(t, r, p, beta, f)),
        ("R-DPO", RainbowConfig.r_dpo(beta, 0.05), lambda t, r, p, f: obj.r_dpo(t, r, p, beta, 0.05)),
        ("DPO+SFT", RainbowConfig.dpo(beta).but(lam=lam), lambda t, r, p, f: obj.dpo_sft(t, r, p, beta, lam)),
    ]


def check_specializations(batches: int = 50, seed: int = 12) -> CheckResult:
    gen = RngStream(seed).generator()
    for b in range(batches):
        n, C, T = 5, 3, 6
        theta, ref = random_policy(gen, n, C, T), random_policy(gen, n, C, T)
        pairs = random_pairs(gen, n, C, T, 4)
        phis = dispersion_values(ref, pairs_dataset(pairs))
        for name, cfg, oracle in specialization_cases(gen):
            got = rainbow_loss(theta, ref, pairs, cfg, phis if cfg.use_dispersion else None).loss
            want = oracle(theta, ref, pairs, phis)
            if not _close(got, want):
                return CheckResult("specializations", False,
                                   f"{name}-equivalence broken on batch {b}: unified {got!r} vs direct {want!r}")
    return CheckResult("specializations", True, f"13 objectives x {batches} batches within 1e-12")


def check_mixing_affine(instances: int = 1000, seed: int = 13) -> CheckResult:
    gen = RngStream(seed).generator()
    worst = 0.0
    for k in range(instances):
        n, C, T = 4, 2, 6
        theta, ref = random_policy(gen, n, C, T), random_policy(gen, n, C, T)
        pair = random_pairs(gen, n, C, T, 1)[0]
        base = random_loss_config(gen)
        phi = float(gen.uniform(0.0, 2.0))
        v0, vh, v1 = (inner_argument(theta, ref, pair, base.but(alpha=a), phi) for a in (0.0, 0.5, 1.0))
        resid = abs(vh - 0.5 * (v0 + v1))
        worst = max(worst, resid)
        if resid > 1e-12 * max(1.0, abs(vh)):
            return CheckResult("mixing-affine", False, f"collinearity residual {resid:.3e} at instance {k}")
    return CheckResult("mixing-affine", True, f"{instances} instances, max residual {worst:.2e}")


def orpo_bound_sweep(samples: int = 10_000, seed: int = 14) -> tuple[int, float]:
    """(violations, fitted log-log slope of bound - po_term vs delta near 0)."""
    gen = RngStream(seed).generator()
    violations = 0
    for _ in range(samples):
        a, b = gen.uniform(1e-6, 1 - 1e-6, size=2)
        pw, pl = max(a, b), min(a, b)
        po, bound = orpo_po_bound(pw, pl)
        if po > bound + 1e-15:
            violations += 1
    pl = 0.3
    deltas = np.logspace(-4, -1.5, 12)
    gaps = []
    for d in deltas:
        po, bound = orpo_po_bound(pl * math.exp(d), pl)
        gaps.append(bound - po)
    slope = float(np.polyfit(np.log(deltas), np.log(gaps), 1)[0])
    return violations, slope


def check_orpo_bound() -> CheckResult:
    violations, slope = orpo_bound_sweep()
    ok = violations == 0 and 1.8 <= slope <= 2.2
    return CheckResult("orpo-bound", ok, f"{violations} violations over 1e4 draws, gap exponent {slope:.3f}")


def acceptance_frequencies(tau: float, trials: int, N: int = 8, seed: int = 15) -> dict[float, tuple[int, int]]:
    """First-visit acceptance counts per percentile: {P: (accepted, visits)}."""
    pcts = [(i + 1) / N for i in range(N)]
    counts = {p: [0, 0] for p in pcts}
    root = RngStream(seed, int(tau * 1e6))
    for t in range(trials):
        trace = accept_candidates(pcts, N, tau, N, substream(root, t))
        for cand, ok in trace.first_visit().items():
            counts[pcts[cand]][0] += ok
            counts[pcts[cand]][1] += 1
    return {p: (a, v) for p, (a, v) in counts.items()}


def check_rs_plus(trials: int = 10_000, seeds: int = 1000) -> CheckResult:
    for tau in (0.05, 0.2, 1.0):
        for p, (acc, visits) in acceptance_frequencies(tau, trials).items():
            q = acceptance_probability(p, tau)
            if p == 1.0 and acc != visits:
                return CheckResult("rs-plus", False, f"P=1 candidate rejected at tau={tau}")
            sigma = math.sqrt(max(q * (1 - q), 1e-300) / visits)
            if abs(acc / visits - q) > 3 * sigma + 1e-12:
                return CheckResult("rs-plus", False, f"tau={tau} P={p}: freq {acc / visits:.4f} vs {q:.4f}")
    gen = RngStream(16).generator()
    n, C, T = 5, 2, 6
    policy = random_policy(gen, n, C, T)
    reward = make_reward(n, C, 0.05, RngStream(17))
    cfg_rs = SamplerConfig(N=6, M=6, tau=1e9)
    cfg_bw = SamplerConfig(K=6)
    for s in range(seeds):
        rng = RngStream(1000 + s)
        a = rs_plus(policy, reward, s % C, cfg_rs, rng)
        b = best_worst_of_k(policy, reward, s % C, cfg_bw, rng)
        if a != b:
            return CheckResult("rs-plus", False, f"tau=1e9 pair differs from best/worst-of-N at seed {s}")
    return CheckResult("rs-plus", True, "acceptance within 3 sigma for tau in {0.05, 0.2, 1.0}; tau=1e9 == best/worst")


def check_policy_normalization(seed: int = 18) -> CheckResult:
    gen = RngStream(seed).generator()
    for n, T in itertools.product((2, 3), (1, 2, 3, 4)):
        model = random_policy(gen, n, 1, T)
        stop = n - 1
        terminated = 0.0
        truncated = 0.0
        for L in range(1, T + 1):
            for body in itertools.product(range(n - 1), repeat=L - 1):
                y = body + (stop,)
                p = math.exp(log_prob(model, 0, y))
                terminated += p
                if L == T:
                    # sampler forces stop here: mass is the prefix probability
                    truncated += p / math.exp(model.log_probs()[0, body[-1] if body else n, stop])
                elif L < T:
                    truncated += p
        if terminated > 1 + 1e-12 or abs(truncated - 1.0) > 1e-12:
            return CheckResult("policy-normalization", False, f"n={n} T_max={T}: {terminated}, {truncated}")
    return CheckResult("policy-normalization", True, "enumeration n<=3, T_max<=4")


def check_dispersion(seed: int = 19) -> CheckResult:
    gen = RngStream(seed).generator()
    cfg = DispersionConfig()
    for k in range(200):
        ref = random_policy(gen, 5, 2, 8, scale=float(gen.uniform(0.1, 5.0)))
        pair = random_pairs(gen, 5, 2, 8, 1)[0]
        phi = dispersion(ref, pair, cfg)
        if not phi >= 0:
            return CheckResult("dispersion", False, f"phi={phi} < 0 at instance {k}")
    return CheckResult("dispersion", True, "phi >= 0 on 200 random references")


def check_swap_antisymmetry(instances: int = 200, seed: int = 20) -> CheckResult:
    gen = RngStream(seed).generator()
    for k in range(instances):
        theta, ref = random_policy(gen, 4, 2, 6), random_policy(gen, 4, 2, 6)
        p = random_pairs(gen, 4, 2, 6, 1)[0]
        cfg = random_loss_config(gen).but(gamma=0.0, use_pair_offset=False)
        phi = float(gen.uniform(0, 2))
        a = inner_argument(theta, ref, PreferencePair(p.ctx, p.yw, p.yl), cfg, phi)
        b = inner_argument(theta, ref, PreferencePair(p.ctx, p.yl, p.yw), cfg, phi)
        if a != -b:
            return CheckResult("swap-antisymmetry", False, f"instance {k}: {a!r} vs {b!r}")
    return CheckResult("swap-antisymmetry", True, f"{instances} instances exact")


CHECKS: dict[str, Callable[[], CheckResult]] = {
    "gradients": check_gradients,
    "specializations": check_specializations,
    "mixing-affine": check_mixing_affine,
    "orpo-bound": check_orpo_bound,
    "rs-plus": check_rs_plus,
    "policy-normalization": check_policy_normalization,
    "dispersion": check_dispersion,
    "swap-antisymmetry": check_swap_antisymmetry,
}


def run_checks(names=None) -> list[CheckResult]:
    unknown = [n for n in names or () if n not in CHECKS]
    if unknown:
        raise ConfigurationError(f"unknown checks {unknown}; available: {sorted(CHECKS)}")
    results = []
    for name in names or CHECKS:
        t0 = time.perf_counter()
        try:
            res = CHECKS[name]()
        except Exception as exc:  # a crashing check is a failing check
            res = CheckResult(name, False, f"raised {type(exc).__name__}: {exc}")
        res.seconds = time.perf_counter() - t0
        results.append(res)
    return results
