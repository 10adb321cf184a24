"""Discrete-event simulation of the asynchronous system.

Two engines share the same agent/round/exchange machinery:

* ASYNC_EVENT: a deterministic event loop. Agents run speed-scaled rounds;
  at each round end they upload the round's buffer to their hub and query
  for unseen buffers; hubs run periodic anti-entropy sweeps.
* SYNC_LOCKSTEP: global rounds with phases (join, train, upload, sync,
  download, eval, leave). Transfer phases retry dropped records within the
  session, so a lockstep round is knowledge-complete regardless of the
  dropout rate; dropout shows up as extra transfer attempts, not lost data.

Given identical (config, seeds) the produced event log, metrics, and hub
contents are byte-identical.
"""

from __future__ import annotations

import heapq
import json
import os
from dataclasses import dataclass, field

from .config import ASYNC_EVENT, ConfigError, ExperimentConfig, save_config
from .hubnet import HubDatabase, sync_session
from .learner import QFunction, RoundResult, evaluate, train_round
from .replay import ExperienceReplayBuffer, erb_id, erb_id_hex
from .rng import Pcg32

EV_AGENT_JOIN = "AGENT_JOIN"
EV_ROUND_START = "ROUND_START"
EV_HUB_SYNC = "HUB_SYNC"
EV_ROUND_END = "ROUND_END"
EV_AGENT_LEAVE = "AGENT_LEAVE"
EV_EVAL = "EVAL"

# Processing order for events at equal times (then subject id, then insertion).
KIND_ORDER = {
    EV_AGENT_JOIN: 0,
    EV_ROUND_START: 1,
    EV_HUB_SYNC: 2,
    EV_ROUND_END: 3,
    EV_AGENT_LEAVE: 4,
    EV_EVAL: 5,
}

MAX_DRAIN_PASSES = 1000


@dataclass(frozen=True)
class SimEvent:
    time: float
    kind: str
    subject: str
    data: dict

    def to_json_line(self) -> str:
        return json.dumps(
            {"t": self.time, "kind": self.kind, "subject": self.subject, "data": self.data},
            sort_keys=True,
            separators=(",", ":"),
        )


@dataclass
class MetricRow:
    round: int
    phase: str  # "round" or "final"
    agent_id: str
    task_id: str
    mean_error: float
    episodes: int

    def to_csv_row(self) -> str:
        return (
            f"{self.round},{self.phase},{self.agent_id},{self.task_id},"
            f"{self.mean_error!r},{self.episodes}"
        )


METRICS_HEADER = "round,phase,agent_id,task_id,mean_error,episodes"


@dataclass
class _AgentRun:
    spec_id: str
    hub_id: str
    qf: QFunction
    rng: Pcg32
    xfer_rng: Pcg32
    target_rounds: int
    schedule: tuple[str, ...]
    personal: list[ExperienceReplayBuffer] = field(default_factory=list)
    inbox: dict[int, ExperienceReplayBuffer] = field(default_factory=dict)
    pending: list[ExperienceReplayBuffer] = field(default_factory=list)
    rounds_done: int = 0
    active: bool = False
    joined: bool = False
    results: list[RoundResult] = field(default_factory=list)

    def next_task(self) -> str:
        return self.schedule[self.rounds_done]

    def finished(self) -> bool:
        return self.rounds_done >= self.target_rounds

    def inbox_task_coverage(self) -> frozenset[str]:
        return frozenset(e.meta.task_id for e in self.inbox.values())


@dataclass
class SimResult:
    config: ExperimentConfig
    events: list[SimEvent]
    metrics: list[MetricRow]
    hubs: dict[str, HubDatabase]
    round_results: dict[str, list[RoundResult]]
    final_evals: dict[str, dict[str, float]]
    agent_sessions: dict[int, int]
    sync_sessions: dict[int, int]
    coverage_history: dict[str, dict[int, frozenset[str]]]
    union_digest_timeline: list[frozenset[int]]
    end_time: float
    qfunctions: dict[str, QFunction] = field(default_factory=dict)

    def record_meta(self) -> dict[int, tuple[str, str, int]]:
        out: dict[int, tuple[str, str, int]] = {}
        for hub in self.hubs.values():
            for rid, (meta, _) in hub.records.items():
                out[rid] = (meta.agent_id, meta.task_id, meta.round)
        return out

    def events_log_text(self) -> str:
        return "\n".join(ev.to_json_line() for ev in self.events) + "\n"

    def metrics_csv_text(self) -> str:
        lines = [METRICS_HEADER] + [m.to_csv_row() for m in self.metrics]
        return "\n".join(lines) + "\n"

    def write(self, out_dir) -> None:
        os.makedirs(out_dir, exist_ok=True)
        with open(os.path.join(out_dir, "events.log"), "w", encoding="utf-8") as f:
            f.write(self.events_log_text())
        with open(os.path.join(out_dir, "metrics.csv"), "w", encoding="utf-8") as f:
            f.write(self.metrics_csv_text())
        for hub_id in sorted(self.hubs):
            self.hubs[hub_id].write_manifest(
                os.path.join(out_dir, f"manifest_{hub_id}.csv")
            )
        save_config(self.config, os.path.join(out_dir, "config.json"))


class _Simulator:
    def __init__(self, cfg: ExperimentConfig):
        self.cfg = cfg
        self.hubs = {h: HubDatabase(h) for h in cfg.hubs}
        self.edges = sorted(tuple(sorted(e)) for e in cfg.hub_edges)
        self.sync_rng = cfg.sync_rng()
        self.agents: dict[str, _AgentRun] = {}
        for spec in cfg.agents:
            target = min(cfg.rounds_to_complete, len(spec.task_schedule))
            if spec.leave_round is not None:
                target = min(target, spec.leave_round - spec.join_round)
            self.agents[spec.agent_id] = _AgentRun(
                spec_id=spec.agent_id,
                hub_id=spec.hub_id,
                qf=QFunction(cfg.train.backend, cfg.train.n_cells),
                rng=cfg.agent_rng(spec.agent_id),
                xfer_rng=cfg.transfer_rng(spec.agent_id),
                target_rounds=target,
                schedule=spec.task_schedule,
            )
        self.specs = {a.agent_id: a for a in cfg.agents}
        self.events: list[SimEvent] = []
        self.metrics: list[MetricRow] = []
        self.agent_sessions: dict[int, int] = {}
        self.sync_sessions: dict[int, int] = {}
        self.coverage_history: dict[str, dict[int, frozenset[str]]] = {
            a: {} for a in self.agents
        }
        self.union_digest_timeline: list[frozenset[int]] = []
        self.end_time = 0.0

    # -- shared helpers -------------------------------------------------

    def log(self, time: float, kind: str, subject: str, **data) -> None:
        self.events.append(SimEvent(time, kind, subject, data))
        self.end_time = max(self.end_time, time)

    def record_union_digest(self) -> None:
        union: set[int] = set()
        for hub in self.hubs.values():
            union.update(hub.digest())
        self.union_digest_timeline.append(frozenset(union))

    def upload_pending(self, run: _AgentRun, drain: bool) -> dict:
        """Attempt every pending buffer once; with drain, repeat until empty."""
        hub = self.hubs[run.hub_id]
        attempts = 0
        passes = MAX_DRAIN_PASSES if drain else 1
        for _ in range(passes):
            if not run.pending:
                break
            still = []
            for erb in run.pending:
                outcome = hub.upload(erb, self.cfg.dropout_p, run.xfer_rng)
                attempts += 1
                if not outcome.delivered:
                    still.append(erb)
            run.pending = still
        return {"attempts": attempts, "pending_after": len(run.pending)}

    def download_new(self, run: _AgentRun, drain: bool) -> dict:
        hub = self.hubs[run.hub_id]
        got: list[int] = []
        attempts = 0
        passes = MAX_DRAIN_PASSES if drain else 1
        for _ in range(passes):
            erbs, outcome = hub.download_new(
                run.spec_id, True, self.cfg.dropout_p, run.xfer_rng
            )
            attempts += 1
            for rid, erb in zip(outcome.delivered, erbs):
                run.inbox[rid] = erb
                got.append(rid)
            if not drain or not outcome.attempted:
                break
        return {"received": len(got), "ids": [erb_id_hex(r) for r in got], "calls": attempts}

    def sync_all_edges(self, time: float, round_index: int | None) -> None:
        for u, v in self.edges:
            exchanges, _ = sync_session(
                self.hubs[u], self.hubs[v], self.cfg.dropout_p, self.sync_rng
            )
            self.log(
                time,
                EV_HUB_SYNC,
                f"{u}-{v}",
                exchanges=exchanges,
                sizes={u: len(self.hubs[u]), v: len(self.hubs[v])},
            )
        if round_index is not None:
            self.sync_sessions[round_index] = self.sync_sessions.get(round_index, 0) + len(
                self.edges
            )
        self.record_union_digest()

    def train_agent(self, run: _AgentRun) -> RoundResult:
        task = run.next_task()
        env = self.cfg.env_for_task(task)
        result = train_round(
            run.qf,
            env,
            run.personal,
            list(run.inbox.values()),
            self.cfg.train,
            run.rng,
            agent_id=run.spec_id,
            round_index=run.rounds_done + 1,
            created_seq=len(run.personal),
        )
        run.rounds_done += 1
        run.personal.append(result.published_erb)
        run.pending.append(result.published_erb)
        run.results.append(result)
        return result

    def evaluate_agent(self, run: _AgentRun) -> dict[str, float]:
        return evaluate(
            run.qf,
            self.cfg.eval_envs(),
            self.cfg.eval_episodes,
            self.cfg.eval_rng(),
            max_steps=self.cfg.effective_eval_max_steps(),
            terminal_radius=self.cfg.train.terminal_radius,
            half_extent=self.cfg.train.half_extent,
        )

    def emit_metrics(self, run: _AgentRun, errors: dict[str, float], phase: str, rnd: int):
        for task_id in self.cfg.eval_task_ids:
            self.metrics.append(
                MetricRow(rnd, phase, run.spec_id, task_id, errors[task_id], self.cfg.eval_episodes)
            )

    def finalize(self) -> SimResult:
        final_evals: dict[str, dict[str, float]] = {}
        if self.cfg.eval_task_ids:
            for agent_id in sorted(self.agents):
                run = self.agents[agent_id]
                errors = self.evaluate_agent(run)
                final_evals[agent_id] = errors
                self.emit_metrics(run, errors, "final", run.rounds_done)
                self.log(
                    self.end_time,
                    EV_EVAL,
                    agent_id,
                    phase="final",
                    mean_error=sum(errors.values()) / len(errors),
                    eval_seed_digest=erb_id_hex(self.cfg.eval_seed_digest),
                )
        return SimResult(
            config=self.cfg,
            events=self.events,
            metrics=self.metrics,
            hubs=self.hubs,
            round_results={a: r.results for a, r in self.agents.items()},
            final_evals=final_evals,
            agent_sessions=self.agent_sessions,
            sync_sessions=self.sync_sessions,
            coverage_history=self.coverage_history,
            union_digest_timeline=self.union_digest_timeline,
            end_time=self.end_time,
            qfunctions={a: r.qf for a, r in self.agents.items()},
        )

    # -- async event engine ----------------------------------------------

    def run_async(self) -> SimResult:
        brt = self.cfg.base_round_time
        heap: list[tuple[float, int, str, int]] = []
        kinds: dict[int, str] = {}
        seq = 0

        def push(time: float, kind: str, subject: str):
            nonlocal seq
            heapq.heappush(heap, (time, KIND_ORDER[kind], subject, seq))
            kinds[seq] = kind
            seq += 1

        for spec in self.cfg.agents:
            push((spec.join_round - 1) * brt, EV_AGENT_JOIN, spec.agent_id)
            if spec.leave_round is not None:
                push((spec.leave_round - 1) * brt, EV_AGENT_LEAVE, spec.agent_id)
        push(self.cfg.sync_period_rounds * brt, EV_HUB_SYNC, "*")

        while heap:
            time, _, subject, ev_seq = heapq.heappop(heap)
            kind = kinds.pop(ev_seq)
            if kind == EV_AGENT_JOIN:
                run = self.agents[subject]
                run.active = True
                run.joined = True
                self.log(time, EV_AGENT_JOIN, subject, hub=run.hub_id)
                if not run.finished():
                    push(time, EV_ROUND_START, subject)
            elif kind == EV_ROUND_START:
                run = self.agents[subject]
                if not run.active or run.finished():
                    continue
                self.log(
                    time,
                    EV_ROUND_START,
                    subject,
                    round=run.rounds_done + 1,
                    task=run.next_task(),
                    incoming=len(run.inbox),
                )
                speed = self.specs[subject].speed
                push(time + brt / speed, EV_ROUND_END, subject)
            elif kind == EV_ROUND_END:
                run = self.agents[subject]
                if not run.active:
                    continue
                result = self.train_agent(run)
                up = self.upload_pending(run, drain=False)
                down = self.download_new(run, drain=False)
                self.record_union_digest()
                rnd = run.rounds_done
                self.coverage_history[subject][rnd] = run.inbox_task_coverage()
                self.agent_sessions[rnd] = self.agent_sessions.get(rnd, 0) + 1
                will_continue = not run.finished()
                self.log(
                    time,
                    EV_ROUND_END,
                    subject,
                    round=rnd,
                    task=result.published_erb.meta.task_id,
                    published=erb_id_hex(erb_id(result.published_erb)),
                    consumed=len(result.consumed_erb_ids),
                    upload=up,
                    download=down,
                    next_round=will_continue,
                    trigger="schedule" if will_continue else "none",
                )
                if self.cfg.eval_every_round and self.cfg.eval_task_ids:
                    errors = self.evaluate_agent(run)
                    self.emit_metrics(run, errors, "round", rnd)
                    self.log(
                        time, EV_EVAL, subject,
                        phase="round", round=rnd,
                        mean_error=sum(errors.values()) / len(errors),
                    )
                if will_continue:
                    push(time, EV_ROUND_START, subject)
            elif kind == EV_AGENT_LEAVE:
                run = self.agents[subject]
                if not run.active:
                    continue
                up = self.upload_pending(run, drain=True)  # graceful flush
                run.active = False
                self.log(time, EV_AGENT_LEAVE, subject, flush=up)
            elif kind == EV_HUB_SYNC:
                self.sync_all_edges(time, None)
                # Keep syncing while any agent can still produce rounds.
                if any(
                    not r.finished() and (r.active or not r.joined)
                    for r in self.agents.values()
                ):
                    push(time + self.cfg.sync_period_rounds * brt, EV_HUB_SYNC, "*")
        return self.finalize()

    # -- lockstep engine ---------------------------------------------------

    def run_lockstep(self) -> SimResult:
        for spec in self.cfg.agents:
            active_rounds = sum(
                1 for r in range(1, self.cfg.rounds_to_complete + 1) if spec.active_in(r)
            )
            if active_rounds > len(spec.task_schedule):
                raise ConfigError(
                    f"{spec.agent_id}: schedule shorter than its active rounds"
                )
        for rnd in range(1, self.cfg.rounds_to_complete + 1):
            t0, t1 = float(rnd - 1), float(rnd)
            active = sorted(
                a for a, s in self.specs.items() if s.active_in(rnd)
            )
            for agent_id in active:
                run = self.agents[agent_id]
                if not run.joined:
                    run.active = True
                    run.joined = True
                    fetch = self.download_new(run, drain=True)  # hub backlog
                    self.log(
                        t0, EV_AGENT_JOIN, agent_id,
                        hub=run.hub_id, backlog=fetch["received"],
                    )
            for agent_id in active:
                run = self.agents[agent_id]
                self.log(
                    t0, EV_ROUND_START, agent_id,
                    round=rnd, task=run.next_task(), incoming=len(run.inbox),
                )
            results = {}
            for agent_id in active:
                results[agent_id] = self.train_agent(self.agents[agent_id])
            for agent_id in active:
                run = self.agents[agent_id]
                up = self.upload_pending(run, drain=True)
                self.log(
                    t1, EV_ROUND_END, agent_id,
                    round=rnd,
                    task=results[agent_id].published_erb.meta.task_id,
                    published=erb_id_hex(erb_id(results[agent_id].published_erb)),
                    consumed=len(results[agent_id].consumed_erb_ids),
                    upload=up,
                )
            self.agent_sessions[rnd] = len(active)
            self.sync_all_edges(t1, rnd)
            downloads = {}
            for agent_id in active:
                run = self.agents[agent_id]
                downloads[agent_id] = self.download_new(run, drain=True)
                self.coverage_history[agent_id][rnd] = run.inbox_task_coverage()
            if self.cfg.eval_every_round and self.cfg.eval_task_ids:
                for agent_id in active:
                    run = self.agents[agent_id]
                    errors = self.evaluate_agent(run)
                    self.emit_metrics(run, errors, "round", rnd)
                    self.log(
                        t1, EV_EVAL, agent_id,
                        phase="round", round=rnd,
                        mean_error=sum(errors.values()) / len(errors),
                        downloaded=downloads[agent_id]["received"],
                    )
            for agent_id in active:
                spec = self.specs[agent_id]
                if spec.leave_round == rnd + 1:
                    run = self.agents[agent_id]
                    run.active = False
                    self.log(t1, EV_AGENT_LEAVE, agent_id, round=rnd)
        return self.finalize()


def run_simulation(cfg: ExperimentConfig, out_dir=None) -> SimResult:
    """Execute a configured experiment; optionally write the output files."""
    sim = _Simulator(cfg)
    result = sim.run_async() if cfg.mode == ASYNC_EVENT else sim.run_lockstep()
    if out_dir is not None:
        result.write(out_dir)
    return result
