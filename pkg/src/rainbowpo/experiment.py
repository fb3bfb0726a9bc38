"""End-to-end pipelines behind the CLI: data generation, training runs, greedy ablations."""

from __future__ import annotations

import csv
import dataclasses
import hashlib
import io
import json
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .config import ExperimentConfig, from_dict
from .core import (
    ConfigurationError,
    PreferenceDataset,
    canonical_json,
    load_dataset,
    save_dataset,
)
from .policy import PolicyModel, init_policy, load_policy, save_policy
from .synth import EvalReport, SyntheticReward, evaluate, generate_dataset, make_reward, world_seed_streams
from .trainer import train

RESULTS_ENV = "RAINBOW_RESULTS_DIR"

RESULT_COLUMNS = [
    "label", "stage", "epoch", "config_hash", "win_rate", "pairwise_accuracy", "accuracy_ties",
    "avg_length", "mean_reward", "epoch_loss",
]


def output_root(out: str | os.PathLike | None) -> Path:
    root = Path(out) if out else Path(os.environ.get(RESULTS_ENV, "results"))
    root.mkdir(parents=True, exist_ok=True)
    return root


@dataclass(frozen=True)
class World:
    ref: PolicyModel
    reward: SyntheticReward
    theta_init: PolicyModel


def build_world(cfg: ExperimentConfig) -> World:
    w = cfg.world
    s = world_seed_streams(w.seed)
    ref = init_policy(w.n, w.C, w.T_max, s["reference"], scale=w.ref_scale)
    reward = make_reward(w.n, w.C, w.kappa, s["reward"])
    noise = init_policy(w.n, w.C, w.T_max, s["init"], scale=w.init_scale)
    theta = PolicyModel(ref.logits + noise.logits, w.T_max)
    return World(ref, reward, theta)


def make_data(cfg: ExperimentConfig, world: World | None = None) -> PreferenceDataset:
    world = world or build_world(cfg)
    ds = generate_dataset(world.ref, world.reward, cfg.data.prompts, cfg.data.method, cfg.sampler,
                          world_seed_streams(cfg.world.seed)["data"])
    return dataclasses.replace(ds, meta={
        "seed": cfg.world.seed,
        "reward_hash": world.reward.digest(),
        "config_hash": cfg.digest(),
        "method": cfg.data.method.value,
    })


def dataset_digest(ds: PreferenceDataset) -> str:
    h = hashlib.sha256()
    for p in ds.pairs:
        h.update(canonical_json(p.to_record()).encode())
    return h.hexdigest()


def row_hash(cfg: ExperimentConfig, data_digest: str, epoch: int) -> str:
    blob = canonical_json({"config": cfg.to_dict(), "dataset": data_digest, "epoch": epoch})
    return hashlib.sha256(blob.encode()).hexdigest()


def check_dims(cfg: ExperimentConfig, ds: PreferenceDataset) -> None:
    w = cfg.world
    if (ds.n is not None and ds.n != w.n) or (ds.C is not None and ds.C != w.C):
        raise ConfigurationError(f"dataset dims (n={ds.n}, C={ds.C}) do not match world (n={w.n}, C={w.C})")
    for i, p in enumerate(ds.pairs):
        if not 0 <= p.ctx < w.C or max(p.yw + p.yl) >= w.n or max(len(p.yw), len(p.yl)) > w.T_max:
            raise ConfigurationError(f"pair {i} does not fit world (n={w.n}, C={w.C}, T_max={w.T_max})")


@dataclass
class RunResult:
    policy: PolicyModel
    trace: list[float]
    rows: list[dict]


def run_training(cfg: ExperimentConfig, data: PreferenceDataset, label: str = "", stage: str = "",
                 checkpoint_dir: Path | None = None, eval_every_epoch: bool = True) -> RunResult:
    """Train on the first part of ``data`` and evaluate on the held-out tail.

    One result row per epoch (or only the last when ``eval_every_epoch`` is
    false); checkpoints are written per epoch when ``checkpoint_dir`` is set.
    """
    check_dims(cfg, data)
    world = build_world(cfg)
    train_set, held_out = data.split(cfg.eval.holdout_fraction)
    eval_rng = world_seed_streams(cfg.world.seed)["eval"]
    digest = dataset_digest(data)
    rows: list[dict] = []
    steps_seen = [0]

    def on_epoch(epoch: int, policy: PolicyModel, trace: list[float]) -> None:
        epoch_trace = trace[steps_seen[0]:]
        steps_seen[0] = len(trace)
        if checkpoint_dir is not None:
            save_policy(policy, checkpoint_dir / f"policy_epoch{epoch}.ckpt")
        if not eval_every_epoch and epoch != cfg.train.epochs:
            return
        report = evaluate(policy, world.ref, world.reward, held_out, cfg.eval.n_eval, eval_rng)
        rows.append(result_row(cfg, digest, epoch, report, float(np.mean(epoch_trace)), label, stage))

    policy, trace = train(world.theta_init, world.ref, train_set, cfg.loss, cfg.train, cfg.dispersion, on_epoch)
    return RunResult(policy, trace, rows)


def result_row(cfg: ExperimentConfig, digest: str, epoch: int, report: EvalReport, epoch_loss: float,
               label: str = "", stage: str = "") -> dict:
    row = {"label": label, "stage": stage, "epoch": epoch, "config_hash": row_hash(cfg, digest, epoch)}
    row.update(report.to_record())
    row["epoch_loss"] = epoch_loss
    return row


def initial_report(cfg: ExperimentConfig, data: PreferenceDataset) -> EvalReport:
    world = build_world(cfg)
    _, held_out = data.split(cfg.eval.holdout_fraction)
    return evaluate(world.theta_init, world.ref, world.reward, held_out, cfg.eval.n_eval,
                    world_seed_streams(cfg.world.seed)["eval"])


def write_rows(rows: Sequence[dict], root: Path, stem: str = "results", extra: Sequence[str] = ()) -> None:
    """Write ``<stem>.csv`` (plotting) and ``<stem>.jsonl`` (tooling)."""
    cols = RESULT_COLUMNS + [c for c in extra if c not in RESULT_COLUMNS]
    buf = io.StringIO()
    writer = csv.DictWriter(buf, fieldnames=cols, extrasaction="ignore", lineterminator="\n")
    writer.writeheader()
    for r in rows:
        writer.writerow({k: _fmt(r.get(k, "")) for k in cols})
    (root / f"{stem}.csv").write_text(buf.getvalue(), encoding="utf-8")
    with open(root / f"{stem}.jsonl", "w", encoding="utf-8", newline="\n") as fh:
        for r in rows:
            fh.write(canonical_json(r) + "\n")


def _fmt(v):
    return repr(v) if isinstance(v, float) else v


def write_trace(trace: Sequence[float], path: Path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("step,loss\n")
        for i, v in enumerate(trace):
            fh.write(f"{i},{v!r}\n")


# ---------------------------------------------------------------- commands


def gen_data(cfg: ExperimentConfig, root: Path) -> Path:
    ds = make_data(cfg)
    return save_dataset(ds, root / "dataset.jsonl")


def train_command(cfg: ExperimentConfig, dataset_path: Path, root: Path) -> list[dict]:
    data = load_dataset(dataset_path)
    result = run_training(cfg, data, label="train", checkpoint_dir=root)
    save_policy(result.policy, root / "policy.ckpt")
    write_rows(result.rows, root)
    write_trace(result.trace, root / "loss_trace.csv")
    return result.rows


def eval_command(cfg: ExperimentConfig, dataset_path: Path, checkpoint: Path | None, root: Path) -> dict:
    data = load_dataset(dataset_path)
    check_dims(cfg, data)
    world = build_world(cfg)
    policy = load_policy(checkpoint) if checkpoint else world.theta_init
    if policy.dims != world.ref.dims:
        raise ConfigurationError("checkpoint dimensions do not match the world")
    _, held_out = data.split(cfg.eval.holdout_fraction)
    report = evaluate(policy, world.ref, world.reward, held_out, cfg.eval.n_eval,
                      world_seed_streams(cfg.world.seed)["eval"])
    digest = hashlib.sha256(policy.logits.astype("<f8").tobytes()).hexdigest()
    row = {"checkpoint_hash": digest, "config_hash": row_hash(cfg, dataset_digest(data), 0)}
    row.update(report.to_record())
    with open(root / "eval.jsonl", "w", encoding="utf-8", newline="\n") as fh:
        fh.write(canonical_json(row) + "\n")
    return row


# ---------------------------------------------------------------- ablations


@dataclass(frozen=True)
class Stage:
    name: str
    grid: tuple[dict, ...]
    # "base"/"add": sweep, winner carried forward; "remove": variants of the current winner
    mode: str = "add"
    label: str = ""

    def row_label(self, point: dict) -> str:
        if self.mode == "base":
            return self.label or self.name
        if self.mode == "remove":
            return f"− {point.get('label', self.name)}"
        return f"⊕ {self.label or self.name}"


@dataclass(frozen=True)
class GridSpec:
    base: ExperimentConfig
    stages: tuple[Stage, ...]
    metric: str = "win_rate"

    @property
    def run_count(self) -> int:
        return sum(len(s.grid) for s in self.stages)


def load_grid(path: Path | str) -> GridSpec:
    path = Path(path)
    try:
        spec = json.loads(path.read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigurationError(f"cannot read grid spec {path}: {exc}") from exc
    return parse_grid(spec, path.parent)


def parse_grid(spec: dict, base_dir: Path = Path(".")) -> GridSpec:
    base = spec.get("base", {})
    if isinstance(base, str):
        base = json.loads((base_dir / base).read_text(encoding="utf-8"))
    cfg = from_dict(base)
    stages = []
    for raw in spec.get("stages", []):
        grid = tuple(raw.get("grid", ()))
        if not grid:
            raise ConfigurationError(f"stage {raw.get('name')!r} has an empty grid")
        mode = raw.get("mode", "add")
        if mode not in ("base", "add", "remove"):
            raise ConfigurationError(f"stage mode must be 'base', 'add' or 'remove', got {mode!r}")
        stages.append(Stage(raw["name"], grid, mode, raw.get("label", "")))
    if not stages:
        raise ConfigurationError("ablation grid has no stages")
    metric = spec.get("metric", "win_rate")
    if metric not in ("win_rate", "pairwise_accuracy", "mean_reward"):
        raise ConfigurationError(f"unsupported selection metric {metric!r}")
    return GridSpec(cfg, tuple(stages), metric)


def _point_overrides(point: dict) -> dict:
    return point.get("set", {k: v for k, v in point.items() if k != "label"})


def _ablation_run(args) -> dict:
    cfg_dict, label, stage, overrides = args
    cfg = from_dict(cfg_dict)
    data = make_data(cfg)
    res = run_training(cfg, data, label=label, stage=stage, eval_every_epoch=False)
    row = res.rows[-1]
    row["params"] = canonical_json(overrides)
    return row


def _run_batch(jobs: list, n_workers: int) -> list[dict]:
    if n_workers <= 1 or len(jobs) <= 1:
        return [_ablation_run(j) for j in jobs]
    with ProcessPoolExecutor(max_workers=n_workers) as pool:
        return list(pool.map(_ablation_run, jobs))


def run_ablation(grid: GridSpec, workers: int = 1) -> list[dict]:
    """Greedy component-by-component search.

    Each "add" stage sweeps only its own grid on top of the winners of the
    earlier stages and carries its best point forward.  "remove" stages
    evaluate the current winner with each listed change applied and do not
    alter it.  Exactly ``grid.run_count`` training runs are executed.
    """
    current = grid.base
    rows: list[dict] = []
    for stage in grid.stages:
        jobs = []
        for point in stage.grid:
            overrides = _point_overrides(point)
            cfg = current.override(overrides)
            jobs.append((cfg.to_dict(), stage.row_label(point), stage.name, overrides))
        stage_rows = _run_batch(jobs, workers)
        for r in stage_rows:
            r["selected"] = False
        if stage.mode != "remove":
            best = max(range(len(stage_rows)), key=lambda i: (stage_rows[i][grid.metric], -i))
            stage_rows[best]["selected"] = True
            current = current.override(_point_overrides(stage.grid[best]))
        rows.extend(stage_rows)
    return rows


def format_table(rows: Sequence[dict]) -> str:
    """Markdown table with one row per run, stage winners starred."""
    head = "| Model | params | win rate | pairwise acc. | avg length | mean reward | selected |"
    lines = [head, "|" + "---|" * 7]
    for r in rows:
        lines.append(
            f"| {r['label']} | `{r['params']}` | {r['win_rate']:.4f} | {r['pairwise_accuracy']:.4f} "
            f"| {r['avg_length']:.3f} | {r['mean_reward']:.4f} | {'*' if r.get('selected') else ''} |"
        )
    return "\n".join(lines) + "\n"


def ablate_command(grid: GridSpec, root: Path, workers: int = 1) -> list[dict]:
    rows = run_ablation(grid, workers)
    write_rows(rows, root, stem="ablation", extra=("params", "selected"))
    (root / "ablation.md").write_text(format_table(rows), encoding="utf-8")
    return rows
