"""Shared domain types, errors, seeded random streams and dataset files."""

from __future__ import annotations

import enum
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

TokenSeq = tuple[int, ...]

_MASK64 = (1 << 64) - 1


class InputError(ValueError):
    """Malformed input to an operation (bad token ids, empty batch, ...)."""


class ConfigurationError(ValueError):
    """Invalid or mutually inconsistent configuration."""


class PreconditionError(ValueError):
    """A mathematical precondition of an operation does not hold."""


class NumericalError(ArithmeticError):
    """A non-finite value appeared during a computation."""


class Provenance(str, enum.Enum):
    BEST_WORST_OF_K = "BestWorstOfK"
    REJECTION_SAMPLED = "RejectionSampled"
    LOADED = "Loaded"


@dataclass(frozen=True)
class RngStream:
    """An immutable handle on a counter-based (Philox) random stream.

    Every call to :meth:`generator` returns a fresh generator positioned at
    the start of the stream, so a stream value always yields the same draws.
    """

    seed: int
    stream: int = 0

    def generator(self) -> np.random.Generator:
        ss = np.random.SeedSequence(self.seed & _MASK64, spawn_key=(self.stream & _MASK64,))
        return np.random.Generator(np.random.Philox(ss))


def substream(parent: RngStream, label: int) -> RngStream:
    """Derive a child stream keyed by ``(parent.seed, parent.stream, label)``."""
    ss = np.random.SeedSequence(
        parent.seed & _MASK64, spawn_key=(parent.stream & _MASK64, label & _MASK64)
    )
    stream_id = int(ss.generate_state(1, dtype=np.uint64)[0])
    return RngStream(parent.seed, stream_id)


def as_seq(tokens: Iterable[int]) -> TokenSeq:
    return tuple(int(t) for t in tokens)


def validate_seq(y: Sequence[int], n: int, t_max: int) -> None:
    if len(y) < 1:
        raise InputError("token sequence must contain at least one token")
    if len(y) > t_max:
        raise InputError(f"sequence length {len(y)} exceeds T_max={t_max}")
    for t in y:
        if not 0 <= t < n:
            raise InputError(f"token id {t} outside vocabulary [0, {n})")


@dataclass(frozen=True)
class PreferencePair:
    ctx: int
    yw: TokenSeq
    yl: TokenSeq
    score_w: float | None = None
    score_l: float | None = None
    offset: float | None = None

    def __post_init__(self) -> None:
        object.__setattr__(self, "yw", as_seq(self.yw))
        object.__setattr__(self, "yl", as_seq(self.yl))
        if not self.yw or not self.yl:
            raise InputError("preference pair sequences must be non-empty")
        if self.score_w is not None and self.score_l is not None and self.score_w < self.score_l:
            raise InputError(f"score_w={self.score_w} < score_l={self.score_l}")
        if self.offset is not None and not math.isfinite(self.offset):
            raise InputError("pair offset must be finite")

    @property
    def has_scores(self) -> bool:
        return self.score_w is not None and self.score_l is not None

    @property
    def degenerate(self) -> bool:
        """True when winner and loser carry equal scores (e.g. identical candidates)."""
        return self.has_scores and self.score_w == self.score_l

    def to_record(self) -> dict:
        return {
            "ctx": self.ctx,
            "yw": list(self.yw),
            "yl": list(self.yl),
            "score_w": self.score_w,
            "score_l": self.score_l,
            "offset": self.offset,
        }

    @classmethod
    def from_record(cls, rec: dict) -> "PreferencePair":
        return cls(
            ctx=int(rec["ctx"]),
            yw=as_seq(rec["yw"]),
            yl=as_seq(rec["yl"]),
            score_w=rec.get("score_w"),
            score_l=rec.get("score_l"),
            offset=rec.get("offset"),
        )


@dataclass(frozen=True)
class PreferenceDataset:
    pairs: tuple[PreferencePair, ...]
    provenance: Provenance = Provenance.LOADED
    n: int | None = None
    C: int | None = None
    meta: dict = field(default_factory=dict, compare=False)

    def __post_init__(self) -> None:
        object.__setattr__(self, "pairs", tuple(self.pairs))
        object.__setattr__(self, "provenance", Provenance(self.provenance))
        if not self.pairs:
            raise InputError("a preference dataset must contain at least one pair")
        if self.n is not None:
            for i, p in enumerate(self.pairs):
                if any(t >= self.n or t < 0 for t in p.yw + p.yl):
                    raise InputError(f"pair {i} has a token outside vocabulary size {self.n}")
        if self.C is not None:
            for i, p in enumerate(self.pairs):
                if not 0 <= p.ctx < self.C:
                    raise InputError(f"pair {i} context {p.ctx} outside [0, {self.C})")

    def __len__(self) -> int:
        return len(self.pairs)

    def __iter__(self):
        return iter(self.pairs)

    def subset(self, indices: Iterable[int]) -> "PreferenceDataset":
        return PreferenceDataset(
            tuple(self.pairs[i] for i in indices), self.provenance, self.n, self.C, dict(self.meta)
        )

    def split(self, holdout_fraction: float) -> tuple["PreferenceDataset", "PreferenceDataset"]:
        """Deterministic split: the last ``holdout_fraction`` of pairs by index are held out."""
        n_hold = max(1, int(math.ceil(holdout_fraction * len(self.pairs))))
        if n_hold >= len(self.pairs):
            raise ConfigurationError("holdout fraction leaves no training pairs")
        cut = len(self.pairs) - n_hold
        return self.subset(range(cut)), self.subset(range(cut, len(self.pairs)))


def meta_path(path: Path | str) -> Path:
    path = Path(path)
    return path.with_name(path.name + ".meta.json")


def canonical_json(obj) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"), allow_nan=False)


def save_dataset(ds: PreferenceDataset, path: Path | str, meta: dict | None = None) -> Path:
    """Write one JSON record per line plus a ``.meta.json`` sidecar."""
    path = Path(path)
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for pair in ds.pairs:
            fh.write(canonical_json(pair.to_record()))
            fh.write("\n")
    sidecar = {"provenance": ds.provenance.value, "n": ds.n, "C": ds.C, "pairs": len(ds)}
    sidecar.update(ds.meta)
    if meta:
        sidecar.update(meta)
    with open(meta_path(path), "w", encoding="utf-8", newline="\n") as fh:
        fh.write(json.dumps(sidecar, sort_keys=True, indent=2))
        fh.write("\n")
    return path


def load_dataset(path: Path | str) -> PreferenceDataset:
    path = Path(path)
    pairs = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                pairs.append(PreferencePair.from_record(json.loads(line)))
            except (KeyError, TypeError, json.JSONDecodeError) as exc:
                raise InputError(f"{path}:{lineno}: malformed record ({exc})") from exc
    provenance, n, C, meta = Provenance.LOADED, None, None, {}
    side = meta_path(path)
    if side.exists():
        meta = json.loads(side.read_text(encoding="utf-8"))
        provenance = Provenance(meta.pop("provenance", Provenance.LOADED.value))
        n, C = meta.pop("n", None), meta.pop("C", None)
        meta.pop("pairs", None)
    return PreferenceDataset(tuple(pairs), provenance, n, C, meta)
