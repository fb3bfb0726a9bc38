import itertools
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from rainbowpo.core import ConfigurationError, RngStream, substream
from rainbowpo.policy import PolicyModel
from rainbowpo.sampler import (
    SamplerConfig,
    accept_candidates,
    acceptance_probability,
    best_worst_of_k,
    percentiles,
    rs_plus,
)

# Three-sequence world: n=3 (stop=2), T_max=2, so the outputs are (2,), (0, 2), (1, 2).
BOS_LOGITS = [0.3, -0.4, 0.1]
REWARDS = {(2,): 0.0, (0, 2): 1.0, (1, 2): -0.5}


def tiny_world():
    logits = np.zeros((1, 4, 3))
    logits[0, 3] = BOS_LOGITS
    return PolicyModel(logits, 2)


def reward(ctx, y):
    return REWARDS[tuple(y)]


def test_percentiles_examples():
    assert percentiles([0.9, 0.5, 0.1, 0.3]) == [1.0, 0.75, 0.25, 0.5]
    assert percentiles([2.0] * 4) == [0.25, 0.5, 0.75, 1.0]
    assert percentiles([3.0]) == [1.0]


@settings(max_examples=100, deadline=None)
@given(st.lists(st.floats(-1e3, 1e3), min_size=1, max_size=20))
def test_percentiles_are_a_rank_permutation(rewards):
    p = percentiles(rewards)
    N = len(rewards)
    assert sorted(p) == [k / N for k in range(1, N + 1)]
    assert p[max(range(N), key=lambda i: (rewards[i], i))] == 1.0


def test_acceptance_probability_example():
    assert acceptance_probability(0.25, 0.25) == pytest.approx(math.exp(-3), abs=1e-15)
    assert acceptance_probability(0.25, 0.25) == pytest.approx(0.049787, abs=1e-6)


@settings(max_examples=100, deadline=None)
@given(st.floats(0, 1), st.floats(0, 1), st.floats(1e-3, 1e3))
def test_acceptance_monotone_in_percentile(a, b, tau):
    lo, hi = sorted((a, b))
    assert acceptance_probability(lo, tau) <= acceptance_probability(hi, tau)


def test_acceptance_frequency_matches_closed_form():
    pcts = [0.25, 0.5, 0.75, 1.0]
    trials = 10_000
    hits = sum(accept_candidates(pcts, 1, 0.25, 1, substream(RngStream(21), t)).first_visit().get(0, False)
               for t in range(trials))
    p = math.exp(-3)
    assert abs(hits / trials - p) <= 3 * math.sqrt(p * (1 - p) / trials)


def test_accepted_set_has_no_duplicates_and_backfills():
    tr = accept_candidates([0.1, 0.2, 0.3, 1.0], 3, 1e-3, 8, RngStream(0))
    assert len(set(tr.accepted)) == 3
    assert tr.backfilled == [2, 1]


def test_lower_tau_raises_mean_accepted_percentile():
    means = []
    for tau in (1.0, 0.2, 0.05):
        vals = []
        for t in range(2000):
            pcts = [k / 8 for k in range(1, 9)]
            tr = accept_candidates(pcts, 3, tau, 800, substream(RngStream(5), t))
            vals.extend(pcts[i] for i in tr.accepted)
        means.append(np.mean(vals))
    assert means[0] < means[1] < means[2]


def test_best_worst_k2_is_ordered_pair():
    pol = tiny_world()
    for i in range(50):
        p = best_worst_of_k(pol, reward, 0, SamplerConfig(K=2), substream(RngStream(3), i))
        assert p.score_w >= p.score_l
        assert p.score_w == reward(0, p.yw) and p.score_l == reward(0, p.yl)


def test_deterministic_policy_flags_degenerate_pair():
    logits = np.zeros((1, 4, 3))
    logits[0, 3, 2] = 1e6
    p = best_worst_of_k(PolicyModel(logits, 2), reward, 0, SamplerConfig(), RngStream(1))
    assert p.degenerate and p.yw == p.yl == (2,)


def test_best_worst_spread_matches_enumeration():
    pol = tiny_world()
    probs = np.exp(pol.log_probs()[0, 3])
    outcomes = [(0, 2), (1, 2), (2,)]  # first drawn token 0, 1, or the stop token
    K = 5
    mean = second = 0.0
    for draw in itertools.product(range(3), repeat=K):
        w = float(np.prod([probs[d] for d in draw]))
        rs = [REWARDS[outcomes[d]] for d in draw]
        spread = max(rs) - min(rs)
        mean += w * spread
        second += w * spread ** 2
    sd = math.sqrt(second - mean ** 2)
    runs = 10_000
    pairs = (best_worst_of_k(pol, reward, 0, SamplerConfig(K=K), substream(RngStream(8), i)) for i in range(runs))
    got = [p.score_w - p.score_l for p in pairs]
    assert abs(np.mean(got) - mean) <= 3 * sd / math.sqrt(runs)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**31), st.floats(0.01, 5.0))
def test_rs_plus_pairs_are_ordered_and_reproducible(seed, tau):
    pol = tiny_world()
    cfg = SamplerConfig(N=6, M=3, tau=tau)
    a = rs_plus(pol, reward, 0, cfg, RngStream(seed))
    assert a.score_w >= a.score_l
    assert a == rs_plus(pol, reward, 0, cfg, RngStream(seed))


def test_sampler_config_validation():
    with pytest.raises(ConfigurationError):
        SamplerConfig(N=4, M=5)
    with pytest.raises(ConfigurationError):
        SamplerConfig(tau=0.0)
    assert SamplerConfig(N=32).attempt_cap == 3200
