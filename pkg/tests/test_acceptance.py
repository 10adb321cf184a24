"""Acceptance suite: one test per criterion, one printed verdict line each.

Run with `pytest tests/test_acceptance.py -v -s`. The experiment criteria
execute the shipped presets at their pinned seeds, so every verdict is
deterministic.
"""

import dataclasses
import os
import signal
import subprocess
import sys
import time

import numpy as np
import pytest

from adfll.bench import BASELINE_AGENT_IDS, paired_test, run_baseline
from adfll.config import (
    BASELINE_PARTIAL,
    SYNC_LOCKSTEP,
    AgentSpec,
    ExperimentConfig,
    save_config,
)
from adfll.env import (
    Action,
    AgentBox,
    EnvSpec,
    Sequence,
    make_environment,
    observe,
    sample_start,
    step,
)
from adfll.hashing import fnv1a64
from adfll.hubnet import HubDatabase, db_digest, hub_sync
from adfll.learner import (
    LINEAR,
    TABULAR,
    QFunction,
    TrainConfig,
    select_action,
    td_update,
    train_round,
)
from adfll.net import HubServer, run_agent
from adfll.presets import preset_addition, preset_deletion, preset_deployment
from adfll.replay import (
    ErbMeta,
    ExperienceReplayBuffer,
    Transition,
    erb_id,
    sample_mixed,
)
from adfll.rng import Pcg32, derive_rng
from adfll.sim import run_simulation
from adfll.wire import (
    WireError,
    decode_message,
    deserialize_erb,
    serialize_erb,
    write_erb_file,
    read_erb_file,
)

ADFLL_AGENTS = ("A1", "A2", "A3", "A4")


def verdict(n: int, ok: bool, detail: str) -> None:
    print(f"\nACCEPTANCE {n}: {'PASS' if ok else 'FAIL'} - {detail}")
    assert ok, detail


@pytest.fixture(scope="module")
def deployment_run():
    cfg = preset_deployment()
    result = run_simulation(cfg)
    baselines = {
        BASELINE_AGENT_IDS[kind]: run_baseline(kind, cfg.eval_task_ids, cfg)
        for kind in cfg.baselines
    }
    return cfg, result, baselines


def episode_errors(cfg: ExperimentConfig, qf: QFunction) -> list[float]:
    """Per-episode terminal errors from the shared seeded eval starts."""
    errs = []
    rng = cfg.eval_rng()
    for env in cfg.eval_envs():
        for _ in range(cfg.eval_episodes):
            box = sample_start(env, rng, cfg.train.terminal_radius, cfg.train.half_extent)
            for _ in range(cfg.effective_eval_max_steps()):
                action = select_action(qf, observe(env, box), 0.0, rng)
                box, _, terminal = step(
                    env, box, action, terminal_radius=cfg.train.terminal_radius
                )
                if terminal:
                    break
            errs.append(env.goal_distance(box.center))
    return errs


def test_criterion_1_deployment_ordering(deployment_run):
    cfg, result, baselines = deployment_run
    means = {a: sum(ev.values()) / len(ev) for a, ev in result.final_evals.items()}
    for agent_id, ev in baselines.items():
        means[agent_id] = sum(ev.values()) / len(ev)
    best_mean, best = min((means[a], a) for a in ADFLL_AGENTS)
    worst_mean = max(means[a] for a in ADFLL_AGENTS)
    ordering = best_mean < means["M"] < means["Y"] and worst_mean < means["Y"]

    # paired permutation test on per-episode errors from the shared starts
    qy = QFunction(cfg.train.backend, cfg.train.n_cells)
    train_round(
        qy,
        cfg.env_for_task(cfg.eval_task_ids[0]),
        [],
        [],
        cfg.train.with_mix((1.0, 0.0, 0.0)),
        cfg.baseline_rng(BASELINE_PARTIAL),
        agent_id="Y",
    )
    t_stat, p = paired_test(episode_errors(cfg, result.qfunctions[best]), episode_errors(cfg, qy))

    # asynchrony: fast agents end round 3 first, slow agents consume more
    ends = {}
    for ev in result.events:
        if ev.kind == "ROUND_END" and ev.data["round"] == 3:
            ends[ev.subject] = ev.time
    fast_before_slow = max(ends["A3"], ends["A4"]) < min(ends["A1"], ends["A2"])
    final_consumed = {a: len(result.round_results[a][-1].consumed_erb_ids) for a in ADFLL_AGENTS}
    slow_consumed_more = min(final_consumed["A1"], final_consumed["A2"]) > max(
        final_consumed["A3"], final_consumed["A4"]
    )

    ok = ordering and p <= 0.05 and fast_before_slow and slow_consumed_more
    verdict(
        1,
        ok,
        f"best={best} {best_mean:.2f} < M {means['M']:.2f} < Y {means['Y']:.2f}, "
        f"worst {worst_mean:.2f} < Y, p={p:.2e}, "
        f"final consumed slow {final_consumed['A1']}/{final_consumed['A2']} vs "
        f"fast {final_consumed['A3']}/{final_consumed['A4']}",
    )


def _forgetting_arm(mix2, master_seed):
    dims, landmark = (7, 7, 7), (3, 3, 3)
    env0 = make_environment(EnvSpec(landmark=landmark, dims=dims, sequence=Sequence.S0))
    env1 = make_environment(EnvSpec(landmark=landmark, dims=dims, sequence=Sequence.S1))
    base = dict(
        alpha=0.0006, batch_size=64, max_steps_per_episode=50,
        erb_capacity=4096, half_extent=2,
    )
    qf = QFunction(LINEAR, 125)
    rng = derive_rng(master_seed, "forget")

    def eval_s0():
        eval_rng = Pcg32(1234)
        total = 0.0
        for _ in range(80):
            box = sample_start(env0, eval_rng, half_extent=2)
            for _ in range(5):  # tight budget: truncation residue is the baseline
                action = select_action(qf, observe(env0, box), 0.0, eval_rng)
                box, _, terminal = step(env0, box, action)
                if terminal:
                    break
            total += env0.goal_distance(box.center)
        return total / 80

    first = train_round(
        qf, env0, [], [], TrainConfig(episodes_per_round=150, mix=(1.0, 0, 0), **base), rng
    )
    e1 = eval_s0()
    personal = [first.published_erb] if mix2[1] > 0 else []
    cfg2 = TrainConfig(episodes_per_round=100, mix=mix2, epsilon_start=0.3, **base)
    train_round(qf, env1, personal, [], cfg2, rng, round_index=2)
    return e1, eval_s0()


def test_criterion_2_forgetting_avoidance():
    lines = []
    ok = True
    for seed in (7, 11):
        e1_n, e2_n = _forgetting_arm((1.0, 0.0, 0.0), seed)
        e1_w, e2_w = _forgetting_arm((0.5, 0.5, 0.0), seed)
        deg_n = (e2_n - e1_n) / e1_n
        deg_w = (e2_w - e1_w) / e1_w
        ok = ok and deg_n >= 0.5 and deg_w < 0.2
        lines.append(f"seed {seed}: no-replay {deg_n:+.0%}, replay {deg_w:+.0%}")
    verdict(2, ok, "; ".join(lines))


def test_criterion_3_addition_shape():
    per_seed = []
    coverage_ok = True
    for seed in (1, 2, 3):
        cfg = preset_addition(master_seed=seed)
        result = run_simulation(cfg)
        by_round = {}
        for m in result.metrics:
            if m.phase == "round":
                by_round.setdefault(m.round, []).append(m.mean_error)
        means = [sum(v) / len(v) for _, v in sorted(by_round.items())]
        violations = sum(1 for i in range(1, len(means)) if means[i] > means[i - 1])
        per_seed.append(violations)
        for rnd in (2, 3, 4):
            covs = {
                a: result.coverage_history[a][rnd]
                for a in result.coverage_history
                if rnd in result.coverage_history[a]
            }
            if len(set(covs.values())) != 1:
                coverage_ok = False
    # tolerance: one violation across the 4 rounds, at each of the 3 seeds
    ok = all(v <= 1 for v in per_seed) and coverage_ok
    verdict(
        3,
        ok,
        f"nonincreasing-mean violations per seed {per_seed} (<=1 each); "
        f"joiner coverage equals incumbents: {coverage_ok}",
    )


def test_criterion_4_deletion_preservation():
    cfg = preset_deletion(master_seed=1)
    result = run_simulation(cfg)
    meta = result.record_meta()
    consumed_tasks = set()
    for rr in result.round_results["A01"]:
        for rid in rr.consumed_erb_ids:
            consumed_tasks.add(meta[rid][1])
    timeline = result.union_digest_timeline
    monotone = all(a <= b for a, b in zip(timeline, timeline[1:]))
    ok = len(consumed_tasks) == 24 and monotone
    verdict(
        4,
        ok,
        f"survivor consumed {len(consumed_tasks)}/24 task ids; "
        f"hub digest union monotone: {monotone}",
    )


def _seed_hub(tag: int) -> ExperienceReplayBuffer:
    erb = ExperienceReplayBuffer(ErbMeta(f"p{tag}", "P0-S0-AXIAL", tag), capacity=8)
    rng = Pcg32(tag)
    for i in range(2):
        erb.offer(Transition(bytes([(i + tag) % 8] * 27), i, 1.0, bytes([i] * 27), False), rng)
    return erb.freeze()


def test_criterion_5_hub_convergence():
    # 75% dropout on a 3-hub line: converged within 50 sweeps in >= 99% of 500 seeds
    converged = 0
    trials = 500
    for trial in range(trials):
        hubs = [HubDatabase(h) for h in "ABC"]
        for i, hub in enumerate(hubs):
            hub.upload(_seed_hub(i), 0.0, Pcg32(i))
        rng = derive_rng(trial, "line")
        for _ in range(50):
            hub_sync(hubs[0], hubs[1], 0.75, rng)
            hub_sync(hubs[1], hubs[2], 0.75, rng)
            if db_digest(hubs[0]) == db_digest(hubs[1]) == db_digest(hubs[2]):
                converged += 1
                break
    rate = converged / trials

    # dropout 0: identical after exactly one full pairwise sweep
    hubs = [HubDatabase(h) for h in "ABC"]
    for i, hub in enumerate(hubs):
        hub.upload(_seed_hub(10 + i), 0.0, Pcg32(i))
    before_equal = db_digest(hubs[0]) == db_digest(hubs[1]) == db_digest(hubs[2])
    rng = Pcg32(0)
    for i in range(3):
        for j in range(i + 1, 3):
            hub_sync(hubs[i], hubs[j], 0.0, rng)
    after_equal = db_digest(hubs[0]) == db_digest(hubs[1]) == db_digest(hubs[2])
    ok = rate >= 0.99 and not before_equal and after_equal
    verdict(5, ok, f"dropout-0.75 convergence rate {rate:.1%}; dropout-0 one-sweep: {after_equal}")


def _lockstep_config(n_agents: int) -> ExperimentConfig:
    tasks = ("P0-S0-AXIAL", "P0-S1-AXIAL")
    agents = tuple(
        AgentSpec(
            f"N{i:02d}", ("H1", "H2", "H3")[i % 3], task_schedule=tasks
        )
        for i in range(n_agents)
    )
    return ExperimentConfig(
        name=f"linearity{n_agents}",
        agents=agents,
        hubs=("H1", "H2", "H3"),
        hub_edges=(("H1", "H2"), ("H1", "H3"), ("H2", "H3")),
        mode=SYNC_LOCKSTEP,
        rounds_to_complete=2,
        dropout_p=0.5,
        master_seed=4,
        dims=(8, 8, 8),
        train=TrainConfig(
            alpha=0.0006, episodes_per_round=1, max_steps_per_episode=5,
            batch_size=4, erb_capacity=16, half_extent=2,
        ),
    )


def test_criterion_6_communication_linearity():
    details = []
    ok = True
    for n in (4, 8, 16, 24):
        result = run_simulation(_lockstep_config(n))
        agent_counts = set(result.agent_sessions.values())
        sync_counts = set(result.sync_sessions.values())
        ok = ok and agent_counts == {n} and sync_counts == {3}
        details.append(f"n={n}: sessions {sorted(agent_counts)} syncs {sorted(sync_counts)}")
    verdict(6, ok, "; ".join(details))


def _chain_oracle():
    env = make_environment(EnvSpec(landmark=(0, 0, 0), dims=(5, 1, 1)))
    states = [1, 2, 3, 4]
    v = {x: 0.0 for x in states}
    q = {}
    for _ in range(500):
        for x in states:
            for a in Action:
                box2, r, term = step(env, AgentBox((x, 0, 0)), a)
                q[(x, a)] = r + (0.0 if term else 0.9 * v[box2.center[0]])
            v[x] = max(q[(x, a)] for a in Action)
    policy = {}
    for x in states:
        best = max(q[(x, a)] for a in Action)
        policy[x] = min(a for a in Action if q[(x, a)] == best)
    return env, policy


def test_criterion_7_numerical_correctness():
    # linear update equals the finite-difference gradient step
    qf = QFunction(LINEAR, 27)
    gen = np.random.default_rng(11)
    qf.weights[:] = gen.normal(0, 0.1, qf.weights.shape)
    cfg = TrainConfig(alpha=0.02, gamma=0.9)
    s = gen.integers(0, 8, 27, dtype=np.uint8).tobytes()
    s2 = gen.integers(0, 8, 27, dtype=np.uint8).tobytes()
    t = Transition(s, 3, 0.5, s2, False)
    target = t.reward + cfg.gamma * float(np.max(qf.q_values(s2)))
    before = qf.weights.copy()
    td_update(qf, [t], cfg)
    analytic = qf.weights - before
    idx = qf.feature_indices(s)
    h = 1e-6
    max_rel = 0.0
    for j in [int(idx[0]) + 3 * qf.feature_dim, int(idx[13]) + 3 * qf.feature_dim,
              int(idx[26]) + 3 * qf.feature_dim]:
        plus, minus = before.copy(), before.copy()
        plus.flat[j] += h
        minus.flat[j] -= h
        grad = (
            0.5 * (target - plus[3, idx].sum()) ** 2
            - 0.5 * (target - minus[3, idx].sum()) ** 2
        ) / (2 * h)
        rel = abs(analytic.flat[j] - (-cfg.alpha * grad)) / abs(analytic.flat[j])
        max_rel = max(max_rel, rel)

    # tabular chain policy equals brute-force value iteration exactly
    env, oracle = _chain_oracle()
    cfg_chain = TrainConfig(
        alpha=0.5, gamma=0.9, epsilon_start=1.0, epsilon_end=1.0,
        episodes_per_round=300, max_steps_per_episode=30, batch_size=8,
        erb_capacity=4096, mix=(1.0, 0.0, 0.0), backend=TABULAR,
    )
    qt = QFunction(TABULAR, 27)
    train_round(qt, env, [], [], cfg_chain, derive_rng(13, "chain"))
    policy_match = all(
        select_action(qt, observe(env, AgentBox((x, 0, 0))), 0.0, Pcg32(0)) == oracle[x]
        for x in (1, 2, 3, 4)
    )
    ok = max_rel < 1e-6 and policy_match
    verdict(7, ok, f"finite-difference max rel err {max_rel:.1e}; chain policy match: {policy_match}")


def test_criterion_8_replay_statistics():
    c, n, trials = 4, 16, 10_000
    probe = Transition(bytes([3] * 27), 3, 0.0, bytes([3] * 27), False)
    hits = 0
    for s in range(trials):
        erb = ExperienceReplayBuffer(ErbMeta("a", "t", 0), capacity=c)
        rng = Pcg32(s, 77)
        for i in range(n):
            erb.offer(Transition(bytes([i % 8] * 27), i % 6, 0.0, bytes(27), False), rng)
        if any(e.state == probe.state and e.action == probe.action for e in erb.entries):
            hits += 1
    reservoir_err = abs(hits / trials - c / n)

    def tagged(tag, reward):
        erb = ExperienceReplayBuffer(ErbMeta(tag, "t", 0), capacity=16)
        rng = Pcg32(hash(tag) & 0xFFFF)
        for i in range(10):
            erb.offer(Transition(bytes([i % 8] * 27), i % 6, reward, bytes(27), False), rng)
        return erb

    batch = sample_mixed(
        tagged("c", 0.0), [tagged("p", 100.0)], [tagged("i", 200.0)],
        10_000, (0.5, 0.25, 0.25), Pcg32(9),
    )
    f_cur = sum(1 for t in batch if t.reward == 0.0) / len(batch)
    f_per = sum(1 for t in batch if t.reward == 100.0) / len(batch)
    f_inc = sum(1 for t in batch if t.reward == 200.0) / len(batch)
    mix_err = max(abs(f_cur - 0.5), abs(f_per - 0.25), abs(f_inc - 0.25))
    ok = reservoir_err < 0.02 and mix_err < 0.02
    verdict(8, ok, f"reservoir |f - c/n| = {reservoir_err:.4f}; mix max dev = {mix_err:.4f}")


def _determinism_config():
    return ExperimentConfig(
        name="det",
        agents=(
            AgentSpec("D1", "H1", task_schedule=("P0-S0-AXIAL", "P0-S1-AXIAL")),
            AgentSpec("D2", "H2", speed=2.0, task_schedule=("P1-S2-CORONAL", "P0-S3-AXIAL")),
        ),
        hubs=("H1", "H2"),
        hub_edges=(("H1", "H2"),),
        rounds_to_complete=2,
        master_seed=21,
        dims=(8, 8, 8),
        train=TrainConfig(
            alpha=0.0006, episodes_per_round=8, max_steps_per_episode=20,
            batch_size=8, erb_capacity=128, half_extent=2,
        ),
        eval_task_ids=("P0-S0-AXIAL",),
        eval_episodes=3,
    )


def test_criterion_9_determinism_and_formats(tmp_path):
    cfg = _determinism_config()
    a = run_simulation(cfg)
    b = run_simulation(cfg)
    logs_equal = a.events_log_text() == b.events_log_text()
    metrics_equal = a.metrics_csv_text() == b.metrics_csv_text()
    erbs_a = [payload for _, payload in sorted(a.hubs["H1"].records.items())]
    erbs_b = [payload for _, payload in sorted(b.hubs["H1"].records.items())]
    erb_bytes_equal = [p for _, p in erbs_a] == [p for _, p in erbs_b]

    # .erb files round-trip through disk byte-identically
    rid, (meta, payload) = next(iter(a.hubs["H1"].records.items()))
    path = tmp_path / "one.erb"
    write_erb_file(path, deserialize_erb(payload))
    file_ok = serialize_erb(read_erb_file(path)) == payload

    # committed golden fixtures decode to their frozen ids
    import json

    fixtures_dir = os.path.join(os.path.dirname(__file__), "fixtures")
    with open(os.path.join(fixtures_dir, "erb_fixtures.json")) as f:
        expected = json.load(f)
    fixtures_ok = True
    for name, exp in expected.items():
        with open(os.path.join(fixtures_dir, name), "rb") as f:
            data = f.read()
        erb = deserialize_erb(data)
        fixtures_ok = fixtures_ok and f"{fnv1a64(data):016x}" == exp["id"]
        fixtures_ok = fixtures_ok and serialize_erb(erb) == data

    # decoder fuzz: 100k random byte strings produce only typed errors
    gen = np.random.default_rng(2024)
    crashes = 0
    for _ in range(100_000):
        blob = gen.bytes(int(gen.integers(0, 120)))
        try:
            deserialize_erb(blob)
        except WireError:
            pass
        except Exception:
            crashes += 1
        try:
            decode_message(blob)
        except WireError:
            pass
        except Exception:
            crashes += 1

    ok = logs_equal and metrics_equal and erb_bytes_equal and file_ok and fixtures_ok and crashes == 0
    verdict(
        9,
        ok,
        f"logs={logs_equal} metrics={metrics_equal} erbs={erb_bytes_equal} "
        f"file={file_ok} fixtures={fixtures_ok} fuzz crashes={crashes}",
    )


def _net_config(agents):
    return ExperimentConfig(
        name="netparity",
        agents=agents,
        hubs=("H1", "H2"),
        hub_edges=(("H1", "H2"),),
        rounds_to_complete=2,
        master_seed=33,
        dims=(8, 8, 8),
        train=TrainConfig(
            alpha=0.0006, episodes_per_round=8, max_steps_per_episode=20,
            batch_size=8, erb_capacity=128, half_extent=2,
        ),
        eval_task_ids=("P0-S0-AXIAL", "P0-S1-AXIAL"),
        eval_episodes=3,
    )


def test_criterion_10_networked_parity(tmp_path):
    # (a) single-agent parity: identical metrics rows and hub digest vs simulator
    solo = _net_config((AgentSpec("A1", "H1", task_schedule=("P0-S0-AXIAL", "P0-S1-AXIAL")),))
    solo = dataclasses.replace(solo, hubs=("H1",), hub_edges=())
    sim_result = run_simulation(solo)
    sim_rows = [m.to_csv_row() for m in sim_result.metrics if m.phase == "final"]

    hub = HubServer("H1", "127.0.0.1:0")
    hub.start()
    try:
        rc = run_agent(f"127.0.0.1:{hub.port}", solo, "A1", out_dir=str(tmp_path))
        net_lines = (tmp_path / "metrics_A1.csv").read_text().splitlines()
        parity = (
            rc == 0
            and net_lines[1:] == sim_rows
            and hub.digest() == sim_result.hubs["H1"].digest()
        )
    finally:
        hub.stop()

    # (b) 2-hub / 2-agent loopback: digests converge, schema identical
    duo = _net_config(
        (
            AgentSpec("A1", "H1", task_schedule=("P0-S0-AXIAL", "P0-S1-AXIAL")),
            AgentSpec("A2", "H2", task_schedule=("P1-S2-CORONAL", "P0-S3-AXIAL")),
        )
    )
    h1 = HubServer("H1", "127.0.0.1:0")
    h1.start()
    h2 = HubServer("H2", "127.0.0.1:0", peers=(f"127.0.0.1:{h1.port}",), sync_period_s=0.2)
    h2.start()
    try:
        rc1 = run_agent(f"127.0.0.1:{h1.port}", duo, "A1", out_dir=str(tmp_path))
        rc2 = run_agent(f"127.0.0.1:{h2.port}", duo, "A2", out_dir=str(tmp_path))
        deadline = time.time() + 15
        while time.time() < deadline and not (
            h1.digest() == h2.digest() and len(h1.digest()) == 4
        ):
            time.sleep(0.05)
        duo_ok = rc1 == 0 and rc2 == 0 and h1.digest() == h2.digest() and len(h1.digest()) == 4
        header = (tmp_path / "metrics_A2.csv").read_text().splitlines()[0]
        duo_ok = duo_ok and header == "round,phase,agent_id,task_id,mean_error,episodes"
    finally:
        h2.stop()
        h1.stop()

    # (c) kill an agent mid-round: hub keeps serving, the other agent completes
    slow = dataclasses.replace(
        duo,
        train=dataclasses.replace(duo.train, episodes_per_round=4000, max_steps_per_episode=50),
    )
    hub3 = HubServer("H1", "127.0.0.1:0")
    hub3.start()
    try:
        cfg_path = tmp_path / "slow.json"
        save_config(slow, cfg_path)
        env = dict(os.environ)
        env["PYTHONPATH"] = os.pathsep.join(sys.path)
        proc = subprocess.Popen(
            [
                sys.executable, "-m", "adfll", "agent",
                "--hub", f"127.0.0.1:{hub3.port}",
                "--config", str(cfg_path), "--agent-id", "A1",
            ],
            stdout=subprocess.DEVNULL,
            stderr=subprocess.DEVNULL,
            env=env,
        )
        time.sleep(2.0)  # mid-round: training is long by construction
        proc.send_signal(signal.SIGKILL)
        proc.wait(timeout=10)
        killed_mid_round = proc.returncode != 0
        # hub must still serve a full agent run
        rc_other = run_agent(f"127.0.0.1:{hub3.port}", duo, "A2", out_dir=str(tmp_path))
        kill_ok = killed_mid_round and rc_other == 0 and len(hub3.digest()) >= 2
    finally:
        hub3.stop()

    ok = parity and duo_ok and kill_ok
    verdict(
        10,
        ok,
        f"single-agent parity={parity}; duo digests converged={duo_ok}; "
        f"kill-resilience={kill_ok}",
    )
