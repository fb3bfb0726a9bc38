"""Acceptance criteria, one test per criterion.

Each test records a PASS/FAIL line that the terminal summary prints.
Run alone with ``pytest tests/test_acceptance.py -v``.
"""

import itertools
import json
import math
import time
from pathlib import Path

import numpy as np
import pytest
from conftest import ACCEPTANCE_LINES, random_model, random_pairs
from oracles import close, finite_difference, rel_error

import oracles
from rainbowpo.cli import main
from rainbowpo.config import ExperimentConfig
from rainbowpo.core import PreferenceDataset, RngStream, substream
from rainbowpo.dispersion import dispersion_values
from rainbowpo.experiment import build_world, initial_report, make_data, run_training
from rainbowpo.losses import RainbowConfig, hinge, inner_argument, orpo_po_bound, rainbow_loss
from rainbowpo.sampler import SamplerConfig, accept_candidates, best_worst_of_k, rs_plus

ROOT = Path(__file__).resolve().parent.parent


def record(criterion: int, passed: bool, detail: str) -> None:
    ACCEPTANCE_LINES.append(f"[{'PASS' if passed else 'FAIL'}] criterion {criterion}: {detail}")
    assert passed, detail


def test_criterion_01_scope_statement():
    text = (ROOT / "README.md").read_text(encoding="utf-8")
    ok = "does not reproduce" in text and "GPT-4" in text
    record(1, ok, "README states that large-model win rates are out of reach; desk-scale criteria substitute")


# ---------------------------------------------------------------- 2


def test_criterion_02_gradient_fidelity():
    gen = np.random.default_rng(2002)
    links = [RainbowConfig().link, RainbowConfig.ipo(1.0).link, hinge(1.0)]
    grid = list(itertools.product(links, (0, 1), (0.0, 0.25, 1.0), (0.0, 0.1), (0.0, 0.1), (False, True)))
    t0 = time.perf_counter()
    worst = 0.0
    for k, (link, eta, alpha, gamma, lam, disp) in enumerate(grid):
        cfg = RainbowConfig(beta=(0.5, 1.0, 10.0)[k % 3], alpha=alpha, gamma=gamma, eta=eta, lam=lam,
                            link=link, use_dispersion=disp)
        while True:
            theta, ref = random_model(gen, n=3, C=2, T_max=4), random_model(gen, n=3, C=2, T_max=4)
            pairs = random_pairs(gen, theta, 3)
            phis = dispersion_values(ref, PreferenceDataset(pairs)) if disp else None
            if any(p.yw == p.yl for p in pairs):
                continue  # identical responses are not a preference; covered by a unit test
            inner = rainbow_loss(theta, ref, pairs, cfg, phis).per_pair_inner
            # the hinge is not differentiable at its kink; keep finite differences off it
            if link.kind.value != "hinge" or min(abs(x - link.delta) for x in inner) > 1e-3:
                break
        analytic = rainbow_loss(theta, ref, pairs, cfg, phis).gradient
        numeric = finite_difference(lambda x: rainbow_loss(theta.with_params(x), ref, pairs, cfg, phis).loss,
                                    theta.logits.ravel())
        worst = max(worst, rel_error(analytic, numeric))
    secs = time.perf_counter() - t0
    ok = len(grid) >= 100 and worst <= 1e-6 and secs <= 60
    record(2, ok, f"{len(grid)} configs, max rel err {worst:.2e} (<= 1e-6), {secs:.1f}s (<= 60s)")


# ---------------------------------------------------------------- 3


def _specializations(gen):
    beta = float(gen.choice([0.1, 0.5, 1.0, 2.0, 10.0]))
    gamma = float(gen.choice([0.1, 0.5, 1.0]))
    lam = float(gen.choice([0.1, 1.0]))
    delta = float(gen.choice([0.5, 1.0]))
    return [
        ("DPO", RainbowConfig(beta=beta, alpha=1.0, gamma=0.0, eta=0, use_dispersion=False),
         lambda t, r, p: oracles.dpo(t, r, p, beta)),
        ("LN-DPO", RainbowConfig(beta=beta, alpha=1.0, gamma=gamma, eta=1, use_dispersion=False),
         lambda t, r, p: oracles.ln_dpo(t, r, p, beta)),
        ("SimPO", RainbowConfig(beta=beta, alpha=0.0, gamma=gamma, eta=1, use_dispersion=False),
         lambda t, r, p: oracles.simpo(t, p, beta, gamma)),
        ("IPO", RainbowConfig.ipo(beta), lambda t, r, p: oracles.ipo(t, r, p, beta)),
        ("DPO+", RainbowConfig.dpo_plus(beta, gamma), lambda t, r, p: oracles.dpo_plus(t, r, p, beta, gamma)),
        ("CPO", RainbowConfig.cpo(beta, lam, sft_normalized=True), lambda t, r, p: oracles.cpo(t, p, beta, lam, True)),
        ("CPO-raw-SFT", RainbowConfig.cpo(beta, lam, sft_normalized=False),
         lambda t, r, p: oracles.cpo(t, p, beta, lam, False)),
        ("SLiC-hinge", RainbowConfig.slic(beta, delta), lambda t, r, p: oracles.slic_hinge(t, r, p, beta, delta)),
        ("SLiC-rank", RainbowConfig(beta=1.0, alpha=0.0, gamma=0.0, eta=0, link=hinge(delta), use_dispersion=False),
         lambda t, r, p: oracles.slic_rank(t, p, delta)),
    ]


def test_criterion_03_specializations():
    gen = np.random.default_rng(3003)
    failures = []
    checked = {}
    for b in range(50):
        theta = random_model(gen, n=5, C=3, T_max=6)
        ref = random_model(gen, n=5, C=3, T_max=6)
        pairs = random_pairs(gen, theta, 4)
        for name, cfg, oracle in _specializations(gen):
            got, want = rainbow_loss(theta, ref, pairs, cfg).loss, oracle(theta, ref, pairs)
            checked[name] = checked.get(name, 0) + 1
            if not close(got, want):
                failures.append(f"{name} batch {b}: {got!r} vs {want!r}")
    ok = not failures and all(v == 50 for v in checked.values())
    record(3, ok, f"{len(checked)} objectives x 50 batches within 1e-12" + (f"; {failures[:3]}" if failures else ""))


# ---------------------------------------------------------------- 4


def test_criterion_04_mixing_affine():
    gen = np.random.default_rng(4004)
    worst = 0.0
    for _ in range(1000):
        theta, ref = random_model(gen, n=4, C=2, T_max=6), random_model(gen, n=4, C=2, T_max=6)
        pair = random_pairs(gen, theta, 1)[0]
        cfg = RainbowConfig(beta=float(gen.choice([0.5, 1.0, 10.0])), gamma=float(gen.uniform(0, 1)),
                            eta=int(gen.integers(0, 2)), use_dispersion=False)
        phi = float(gen.uniform(0.0, 2.0))
        a0, a1, a2 = sorted(gen.uniform(0, 1, size=3))
        x0, x1, x2 = (inner_argument(theta, ref, pair, cfg.but(alpha=float(a)), phi) for a in (a0, a1, a2))
        resid = abs((x1 - x0) * (a2 - a0) - (x2 - x0) * (a1 - a0)) / max(1.0, abs(x0), abs(x1), abs(x2))
        worst = max(worst, resid)
    record(4, worst <= 1e-12, f"1000 instances, max collinearity residual {worst:.2e} (<= 1e-12)")


# ---------------------------------------------------------------- 5


def test_criterion_05_orpo_bound():
    gen = np.random.default_rng(5005)
    violations = 0
    for _ in range(10_000):
        a, b = gen.uniform(1e-6, 1 - 1e-6, size=2)
        po, bound = orpo_po_bound(float(max(a, b)), float(min(a, b)))
        violations += po > bound
    p_l = 0.3
    deltas = np.logspace(-4, -1.5, 25)
    gaps = []
    for d in deltas:
        po, bound = orpo_po_bound(p_l * math.exp(d), p_l)
        gaps.append(bound - po)
    slope = float(np.polyfit(np.log(deltas), np.log(gaps), 1)[0])
    ok = violations == 0 and 1.8 <= slope <= 2.2
    record(5, ok, f"10^4 draws, {violations} violations; gap exponent {slope:.3f} in [1.8, 2.2]")


# ---------------------------------------------------------------- 6


def test_criterion_06_rs_plus_statistics():
    N, trials = 8, 10_000
    pcts = [k / N for k in range(1, N + 1)]
    worst_z = 0.0
    top_exact = True
    for t_i, tau in enumerate((0.05, 0.2, 1.0)):
        hits = np.zeros(N)
        for t in range(trials):
            first = accept_candidates(pcts, N, tau, N, substream(RngStream(606, t_i), t)).first_visit()
            for i in range(N):
                hits[i] += first[i]
        top_exact &= hits[N - 1] == trials
        for i, p in enumerate(pcts):
            a = math.exp((p - 1) / tau)
            sd = math.sqrt(a * (1 - a) / trials)
            dev = abs(hits[i] / trials - a)
            if sd == 0:
                worst_z = max(worst_z, 0.0 if dev == 0 else math.inf)
            else:
                worst_z = max(worst_z, dev / sd)

    cfg = ExperimentConfig()
    world = build_world(cfg)
    same = 0
    seeds = 1000
    for s in range(seeds):
        ctx = s % cfg.world.C
        r = rs_plus(world.ref, world.reward, ctx, SamplerConfig(N=8, M=8, tau=1e9), RngStream(s))
        b = best_worst_of_k(world.ref, world.reward, ctx, SamplerConfig(K=8), RngStream(s))
        same += r == b
    ok = worst_z <= 3 and top_exact and same == seeds
    record(6, ok, f"max |z| {worst_z:.2f} (<= 3) over 3 taus x 10^4 trials; P=1 always accepted: {top_exact}; "
                  f"tau=1e9 matches best/worst-of-N on {same}/{seeds} seeds")


# ---------------------------------------------------------------- 7


def test_criterion_07_end_to_end_learning():
    t0 = time.perf_counter()
    cfg = ExperimentConfig()
    w = cfg.world
    assert (w.n, w.C, w.T_max, w.kappa) == (12, 8, 16, 0.05)
    assert (cfg.data.prompts, cfg.sampler.K, cfg.train.epochs) == (500, 5, 3)
    data = make_data(cfg)
    before = initial_report(cfg, data)
    after = run_training(cfg, data).rows[-1]
    secs = time.perf_counter() - t0
    held_out = len(data.split(cfg.eval.holdout_fraction)[1])
    chance_band = 3 * math.sqrt(0.25 / held_out)
    ok = (abs(before.pairwise_accuracy - 0.5) <= chance_band and after["pairwise_accuracy"] >= 0.80
          and after["win_rate"] >= 0.60 and secs <= 300)
    record(7, ok, f"accuracy {before.pairwise_accuracy:.2f} -> {after['pairwise_accuracy']:.2f} (>= 0.80), "
                  f"win rate {after['win_rate']:.3f} (>= 0.60), {secs:.1f}s")


# ---------------------------------------------------------------- 8


def test_criterion_08_length_normalization_shortens():
    shorter = 0
    details = []
    for seed in range(5):
        base = ExperimentConfig().with_seed(seed)
        data = make_data(base)
        lengths = {}
        for eta in (0, 1):
            cfg = base.override({"loss.eta": eta})
            lengths[eta] = run_training(cfg, data, eval_every_epoch=False).rows[-1]["avg_length"]
        shorter += lengths[1] <= lengths[0]
        details.append(f"{lengths[1]:.2f}/{lengths[0]:.2f}")
    record(8, shorter >= 4, f"eta=1 no longer than eta=0 on {shorter}/5 seeds (eta1/eta0: {', '.join(details)})")


# ---------------------------------------------------------------- 9


def test_criterion_09_greedy_ablation(tmp_path):
    grid = ROOT / "configs" / "ablation.json"
    spec = json.loads(grid.read_text())
    assert [s["name"] for s in spec["stages"]] == ["LN", "Mix", "CS"]
    assert all(len(s["grid"]) == 2 for s in spec["stages"])
    outs = []
    for run in ("first", "second"):
        out = tmp_path / run
        assert main(["ablate", "--grid", str(grid), "--out", str(out)]) == 0
        outs.append({p.name: p.read_bytes() for p in sorted(out.iterdir())})
    rows = outs[0]["ablation.jsonl"].decode().splitlines()
    table = outs[0]["ablation.md"].decode().splitlines()
    shaped = table[0].startswith("| Model |") and len(table) == 2 + 6 and all(r.startswith("| ⊕") for r in table[2:])
    ok = len(rows) == 6 and shaped and outs[0] == outs[1]
    record(9, ok, f"{len(rows)} runs (expected 6), table rows {len(table) - 2}, rerun identical: {outs[0] == outs[1]}")


# ---------------------------------------------------------------- 10


def _snapshot(root: Path) -> dict:
    return {p.name: p.read_bytes() for p in sorted(root.rglob("*")) if p.is_file()}


def test_criterion_10_determinism(tmp_path, capsys):
    out = tmp_path / "out"
    ds = out / "dataset.jsonl"
    commands = [
        ["gen-data", "--out", str(out)],
        ["train", "--dataset", str(ds), "--out", str(out / "train")],
        ["eval", "--dataset", str(ds), "--checkpoint", str(out / "train" / "policy.ckpt"), "--out", str(out / "eval")],
        ["ablate", "--grid", str(ROOT / "configs" / "ablation.json"), "--out", str(out / "ablate")],
        ["check", "--only", "specializations", "mixing-affine", "dispersion"],
    ]
    mismatched = []
    for cmd in commands:
        runs = []
        for _ in range(2):
            code = main(cmd)
            runs.append((code, capsys.readouterr().out, _snapshot(out)))
        if runs[0] != runs[1] or runs[0][0] != 0:
            mismatched.append(cmd[0])
    record(10, not mismatched, f"{len(commands)} commands rerun byte-identical"
                               + (f"; differing: {mismatched}" if mismatched else ""))


if __name__ == "__main__":
    raise SystemExit(pytest.main([__file__, "-q"]))
