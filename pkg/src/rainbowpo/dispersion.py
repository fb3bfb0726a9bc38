"""Contextual scaling factor from reference-policy predictive entropies."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .core import ConfigurationError, PreferenceDataset, PreferencePair
from .policy import PolicyModel, entropy_table


@dataclass(frozen=True)
class DispersionConfig:
    eps_floor: float = 1e-6
    # Without averaging the ratio exceeds 1 for long pairs.
    per_token_average: bool = True

    def __post_init__(self) -> None:
        if not 0.0 < self.eps_floor < 1.0:
            raise ConfigurationError("eps_floor must lie in (0, 1)")


def _states(y, N: int) -> list[int]:
    # Steps past the end of the shorter sequence reuse its final token state.
    return [y[min(i, len(y) - 1)] for i in range(N - 1)]


def entropy_ratio(entropies: np.ndarray, pair: PreferencePair, n: int, per_token_average: bool) -> float:
    N = max(len(pair.yw), len(pair.yl))
    if N == 1:
        return 1.0
    h = entropies[pair.ctx]
    total = sum(h[s] for s in _states(pair.yw, N)) + sum(h[s] for s in _states(pair.yl, N))
    denom = 2.0 * math.log(n)
    if per_token_average:
        denom *= N - 1
    return float(total / denom)


def dispersion(ref: PolicyModel, pair: PreferencePair, cfg: DispersionConfig = DispersionConfig(),
               _entropies: np.ndarray | None = None) -> float:
    """phi = -log(clamp(rho, eps_floor, 1)), rho the normalised entropy of the pair's transitions.

    A pair whose longer sequence has a single token has no transitions and
    gets phi = 0.
    """
    if max(len(pair.yw), len(pair.yl)) == 1:
        return 0.0
    ent = entropy_table(ref) if _entropies is None else _entropies
    rho = entropy_ratio(ent, pair, ref.n, cfg.per_token_average)
    return -math.log(min(max(rho, cfg.eps_floor), 1.0))


def dispersion_values(ref: PolicyModel, data: PreferenceDataset, cfg: DispersionConfig = DispersionConfig()) -> list[float]:
    ent = entropy_table(ref)
    return [dispersion(ref, p, cfg, ent) for p in data.pairs]
