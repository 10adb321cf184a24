"""Baseline agents, paired statistical comparison, and report assembly.

Baselines:
* ALL_KNOWING ("X"): every task available from the start, one training round
  drawing episodes uniformly across tasks.
* PARTIAL ("Y"): exactly one task, one training round.
* SEQUENTIAL_LL ("M"): one task per round over the whole list, replaying its
  own past buffers (no incoming), so rounds = number of tasks.

The significance test is an exact paired permutation test over sign flips of
the per-task differences (Monte Carlo beyond n = 20), reported together with
the classical paired t statistic.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .config import (
    BASELINE_ALL_KNOWING,
    BASELINE_PARTIAL,
    BASELINE_SEQUENTIAL_LL,
    ExperimentConfig,
)
from .hashing import hash_parts
from .learner import QFunction, evaluate, run_episodes, train_round
from .replay import ErbMeta, ExperienceReplayBuffer
from .sim import MetricRow

BASELINE_AGENT_IDS = {
    BASELINE_ALL_KNOWING: "X",
    BASELINE_PARTIAL: "Y",
    BASELINE_SEQUENTIAL_LL: "M",
}
_BASELINE_ORDER = ("X", "Y", "M")

EXACT_TEST_MAX_N = 20
_MC_DRAWS = 20000


class DegenerateInputError(ValueError):
    """Paired test on all-zero differences."""


def run_baseline(kind: str, tasks: tuple[str, ...], cfg: ExperimentConfig) -> dict[str, float]:
    """Train the named baseline on `tasks` and evaluate it on the config's
    evaluation suite with the shared seeded start points."""
    rng = cfg.baseline_rng(kind)
    qf = QFunction(cfg.train.backend, cfg.train.n_cells)
    if kind == BASELINE_ALL_KNOWING:
        envs = [cfg.env_for_task(t) for t in tasks]
        train = cfg.train.with_mix((1.0, 0.0, 0.0))
        current = ExperienceReplayBuffer(
            ErbMeta("X", "MIXED", 1, 0), capacity=train.erb_capacity
        )
        order = [rng.below(len(envs)) for _ in range(train.episodes_per_round)]
        run_episodes(
            qf, lambda ep: envs[order[ep]], train.episodes_per_round,
            current, [], [], train, rng,
        )
    elif kind == BASELINE_PARTIAL:
        if len(tasks) < 1:
            raise ValueError("PARTIAL baseline needs a task")
        train = cfg.train.with_mix((1.0, 0.0, 0.0))
        train_round(qf, cfg.env_for_task(tasks[0]), [], [], train, rng, agent_id="Y")
    elif kind == BASELINE_SEQUENTIAL_LL:
        train = cfg.train.with_mix((0.5, 0.5, 0.0))
        personal: list[ExperienceReplayBuffer] = []
        for rnd, task in enumerate(tasks, start=1):
            result = train_round(
                qf, cfg.env_for_task(task), personal, [], train, rng,
                agent_id="M", round_index=rnd, created_seq=len(personal),
            )
            personal.append(result.published_erb)
    else:
        raise ValueError(f"unknown baseline kind {kind!r}")
    return evaluate(
        qf,
        cfg.eval_envs(),
        cfg.eval_episodes,
        cfg.eval_rng(),
        max_steps=cfg.effective_eval_max_steps(),
        terminal_radius=cfg.train.terminal_radius,
        half_extent=cfg.train.half_extent,
    )


def baseline_rounds(kind: str, n_tasks: int) -> int:
    return n_tasks if kind == BASELINE_SEQUENTIAL_LL else 1


def run_baselines(cfg: ExperimentConfig, tasks: tuple[str, ...] | None = None):
    """Run every baseline the config enables; returns (metric rows, evals)."""
    tasks = tasks if tasks is not None else cfg.eval_task_ids
    rows: list[MetricRow] = []
    evals: dict[str, dict[str, float]] = {}
    for kind in cfg.baselines:
        agent_id = BASELINE_AGENT_IDS[kind]
        errors = run_baseline(kind, tasks, cfg)
        evals[agent_id] = errors
        rounds = baseline_rounds(kind, len(tasks))
        for task_id in cfg.eval_task_ids:
            rows.append(
                MetricRow(rounds, "final", agent_id, task_id, errors[task_id], cfg.eval_episodes)
            )
    return rows, evals


def _t_statistic(d: np.ndarray) -> float:
    n = len(d)
    m = float(np.mean(d))
    s = float(np.std(d, ddof=1))
    if s == 0.0:
        return math.copysign(math.inf, m) if m != 0.0 else 0.0
    return m / (s / math.sqrt(n))


def _flip_t_values(d: np.ndarray, signs: np.ndarray) -> np.ndarray:
    flipped = signs * d
    m = flipped.mean(axis=1)
    s = flipped.std(axis=1, ddof=1)
    n = flipped.shape[1]
    with np.errstate(divide="ignore", invalid="ignore"):
        t = m / (s / math.sqrt(n))
    # s == 0 implies every |d_i| equal and aligned, so the mean is nonzero.
    t = np.where(s == 0.0, np.copysign(np.inf, m), t)
    return np.abs(t)


def paired_test(x, y) -> tuple[float, float]:
    """Paired t statistic plus a two-sided sign-flip permutation p-value.

    For n <= 20 the p-value enumerates all 2^n sign assignments exactly;
    beyond that it uses a deterministic Monte Carlo seeded from the data.
    """
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.shape != y.shape or x.ndim != 1 or len(x) < 2:
        raise ValueError("paired_test needs two equal-length vectors, n >= 2")
    d = x - y
    if np.all(d == 0.0):
        raise DegenerateInputError("all paired differences are zero")
    t_obs = _t_statistic(d)
    threshold = abs(t_obs) - 1e-12 * max(1.0, min(abs(t_obs), 1e300))
    n = len(d)
    if n <= EXACT_TEST_MAX_N:
        total = 1 << n
        hits = 0
        chunk = 1 << 14
        bit = np.arange(n, dtype=np.uint32)
        for start in range(0, total, chunk):
            codes = np.arange(start, min(start + chunk, total), dtype=np.uint32)
            bits = ((codes[:, None] >> bit) & 1).astype(np.float64)
            hits += int(np.sum(_flip_t_values(d, bits * 2.0 - 1.0) >= threshold))
        return t_obs, hits / total
    seed = hash_parts("paired-test", d.tobytes()) % (1 << 63)
    gen = np.random.Generator(np.random.PCG64(seed))
    signs = gen.integers(0, 2, size=(_MC_DRAWS, n)).astype(np.float64) * 2 - 1
    hits = int(np.sum(_flip_t_values(d, signs) >= threshold))
    return t_obs, hits / _MC_DRAWS


@dataclass
class ComparisonReport:
    task_ids: tuple[str, ...]
    agent_ids: tuple[str, ...]
    errors: dict[str, dict[str, float]]
    means: dict[str, float]
    pairwise: list[tuple[str, str, float | None, float | None, str]] = field(
        default_factory=list
    )
    round_rows: list[tuple[int, int, float]] = field(default_factory=list)

    def table_csv_text(self) -> str:
        header = "agent_id," + ",".join(self.task_ids) + ",mean"
        lines = [header]
        for a in self.agent_ids:
            vals = ",".join(repr(self.errors[a][t]) for t in self.task_ids)
            lines.append(f"{a},{vals},{self.means[a]!r}")
        return "\n".join(lines) + "\n"

    def rounds_csv_text(self) -> str:
        lines = ["round,n_agents,mean_error"]
        for rnd, n_agents, mean in self.round_rows:
            lines.append(f"{rnd},{n_agents},{mean!r}")
        return "\n".join(lines) + "\n"

    def pairwise_csv_text(self) -> str:
        lines = ["agent_a,agent_b,n,t_statistic,p_value,note"]
        n = len(self.task_ids)
        for a, b, t, p, note in self.pairwise:
            t_txt = "" if t is None else repr(t)
            p_txt = "" if p is None else repr(p)
            lines.append(f"{a},{b},{n},{t_txt},{p_txt},{note}")
        return "\n".join(lines) + "\n"


def _agent_order(agent_ids) -> tuple[str, ...]:
    regular = sorted(a for a in agent_ids if a not in _BASELINE_ORDER)
    tail = [a for a in _BASELINE_ORDER if a in agent_ids]
    return tuple(regular + tail)


def build_report(metrics: list[MetricRow]) -> ComparisonReport:
    """Assemble the comparison matrix, means, pairwise tests, and per-round
    mean errors from metric rows (simulator plus baselines)."""
    final = [m for m in metrics if m.phase == "final"]
    if not final:
        raise ValueError("no final-phase metric rows")
    task_ids: list[str] = []
    for m in final:
        if m.task_id not in task_ids:
            task_ids.append(m.task_id)
    errors: dict[str, dict[str, float]] = {}
    for m in final:
        errors.setdefault(m.agent_id, {})[m.task_id] = m.mean_error
    for agent_id, per_task in errors.items():
        missing = [t for t in task_ids if t not in per_task]
        if missing:
            raise ValueError(f"{agent_id} missing evaluations for {missing}")
    agent_ids = _agent_order(errors)
    means = {
        a: sum(errors[a][t] for t in task_ids) / len(task_ids) for a in agent_ids
    }
    pairwise = []
    for i, a in enumerate(agent_ids):
        for b in agent_ids[i + 1 :]:
            xa = [errors[a][t] for t in task_ids]
            xb = [errors[b][t] for t in task_ids]
            try:
                t_stat, p = paired_test(xa, xb)
                pairwise.append((a, b, t_stat, p, ""))
            except DegenerateInputError:
                pairwise.append((a, b, None, None, "no difference"))
    by_round: dict[int, list[float]] = {}
    agents_by_round: dict[int, set[str]] = {}
    for m in metrics:
        if m.phase == "round":
            by_round.setdefault(m.round, []).append(m.mean_error)
            agents_by_round.setdefault(m.round, set()).add(m.agent_id)
    round_rows = [
        (rnd, len(agents_by_round[rnd]), sum(vals) / len(vals))
        for rnd, vals in sorted(by_round.items())
    ]
    return ComparisonReport(
        task_ids=tuple(task_ids),
        agent_ids=agent_ids,
        errors=errors,
        means=means,
        pairwise=pairwise,
        round_rows=round_rows,
    )


def parse_metrics_csv(text: str) -> list[MetricRow]:
    lines = [ln for ln in text.splitlines() if ln.strip()]
    if not lines or not lines[0].startswith("round,"):
        raise ValueError("not a metrics CSV")
    rows = []
    for ln in lines[1:]:
        rnd, phase, agent_id, task_id, err, eps = ln.split(",")
        rows.append(MetricRow(int(rnd), phase, agent_id, task_id, float(err), int(eps)))
    return rows
