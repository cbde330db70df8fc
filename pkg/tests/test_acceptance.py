"""End-to-end acceptance checks on the seeded synthetic market.

Each test records one pass/fail line (printed in the terminal summary) and then
asserts it.  The slow ones share session fixtures so every training run is done once.
"""

import time
from pathlib import Path

import numpy as np
import pytest

from conftest import record
from ssrtb import harness
from ssrtb.bidder import LinearBidPolicy
from ssrtb.dqn import (
    DqnAgent,
    QNetwork,
    ReplayMemory,
    RMSProp,
    TrainerConfig,
    Transition,
    epsilon_at,
    load_checkpoint,
    save_checkpoint,
    train,
)
from ssrtb.mdp import OBSERVED_ETA, SUBSTITUTE_THRESHOLD, eta_bound
from ssrtb.simulator import run_episode

pytestmark = pytest.mark.acceptance

CONFIGS = Path(__file__).resolve().parent.parent / "configs"


@pytest.fixture(scope="session")
def example_cfg():
    return harness.ExperimentConfig.load(CONFIGS / "example.json")


@pytest.fixture(scope="session")
def single_ad(example_cfg):
    t = time.time()
    res = harness.compare(example_cfg, ("kb", "amdp", "rmdp"))
    return res, time.time() - t


@pytest.fixture(scope="session")
def shared_market():
    cfg = harness.ExperimentConfig.load(CONFIGS / "market10.json")
    t = time.time()
    res = harness.compare_market(cfg)
    return res, time.time() - t


# ---------------------------------------------------------------------------
# 1. gradients


def test_criterion_1_gradient_check():
    t = time.time()
    rng = np.random.default_rng(0)
    net = QNetwork((15, 4, 3, 100), rng)
    for b in net.biases:
        b[:] = rng.normal(0.0, 0.1, b.shape)
    x = rng.random((16, 15))
    a = rng.integers(0, 100, 16)
    y = rng.normal(size=16)
    _, grads = net.loss_and_grads(x, a, y)
    h = 1e-6
    worst = 0.0
    for p, g in zip(net.params, grads):
        flat, gflat = p.reshape(-1), g.reshape(-1)
        for i in range(flat.size):
            old = flat[i]
            flat[i] = old + h
            up, _ = net.loss_and_grads(x, a, y)
            flat[i] = old - h
            down, _ = net.loss_and_grads(x, a, y)
            flat[i] = old
            num = (up - down) / (2 * h)
            worst = max(worst, abs(num - gflat[i]) / max(abs(num), abs(gflat[i]), 1e-6))
    elapsed = time.time() - t
    ok = record(1, worst < 1e-4 and elapsed < 10, f"max relative error {worst:.2e} over all 479 params, {elapsed:.1f}s")
    assert ok


# ---------------------------------------------------------------------------
# 2. Bellman oracle


class _TwoStates:
    """Deterministic chain: state A then state B, two actions each, reward table below."""

    budget = 1.0
    budget_left = 1.0
    REWARD = {0: (1.0, 0.0), 1: (0.0, 2.0)}

    def reset(self):
        self.t = 0
        return self._state()

    def _state(self):
        s = type("S", (), {})()
        s.g = np.zeros(15)
        s.g[self.t] = 1.0
        return s

    def step(self, action):
        r = self.REWARD[self.t][action]
        self.t += 1
        done = self.t == 2
        return (None if done else self._state()), r, done


def _value_iteration():
    q = np.zeros((2, 2))
    for _ in range(5):
        v_next = [q[1].max(), 0.0]
        q = np.array([[_TwoStates.REWARD[s][a] + v_next[s] for a in range(2)] for s in range(2)])
    return q


def test_criterion_2_bellman_oracle():
    t = time.time()
    cfg = TrainerConfig(
        sizes=(15, 16, 2), gamma=1.0, lr=3e-4, batch_size=32, memory_capacity=10_000, target_sync=20,
        episodes=4000, horizon=2, eps_end=0.3, eps_fraction=0.5, seed=11,
    )
    agent, _ = train(lambda i: _TwoStates(), cfg)
    q_star = _value_iteration()
    q = np.array([agent.train_net.forward(np.eye(15)[s]) for s in range(2)])
    err = float(np.abs(q - q_star).max())
    greedy_ok = list(q.argmax(axis=1)) == list(q_star.argmax(axis=1))
    elapsed = time.time() - t
    ok = record(2, err < 1e-2 and greedy_ok and elapsed < 60,
                f"max |Q - Q*| {err:.4f}, greedy optimal {greedy_ok}, {elapsed:.1f}s")
    assert ok


# ---------------------------------------------------------------------------
# 3. consistency chain


def test_criterion_3_consistency_chain(example_cfg):
    t = time.time()
    assert example_cfg.consistency["pairs"] >= 20
    reports = harness.consistency_run(example_cfg)
    cells = [c for r in reports for c in r.included]
    frac = sum(c.passed for c in cells) / len(cells)
    chain = all(r.chain_holds for r in reports)
    bound = eta_bound(OBSERVED_ETA)
    bound_ok = bound == pytest.approx(0.0038266, abs=1e-6) and bound <= SUBSTITUTE_THRESHOLD
    elapsed = time.time() - t
    ok = record(3, frac >= 0.9 and chain and bound_ok and elapsed < 300,
                f"{frac:.1%} of {len(cells)} cells with eta < {OBSERVED_ETA}, chain {chain}, "
                f"eta_bound({OBSERVED_ETA}) = {bound:.7f}, {elapsed:.0f}s")
    assert ok


# ---------------------------------------------------------------------------
# 4-5. single-ad comparison


def test_criterion_4_rmdp_vs_amdp_ordering(single_ad):
    res, elapsed = single_ad
    a_tr, a_te = res.improvement("amdp", "train"), res.improvement("amdp", "test")
    r_tr, r_te = res.improvement("rmdp", "train"), res.improvement("rmdp", "test")
    ok = a_tr >= r_tr >= 0 and r_te > 0 > a_te - r_te and elapsed < 1800
    record(4, ok, f"AMDP train {a_tr:+.1%} test {a_te:+.1%}; RMDP train {r_tr:+.1%} test {r_te:+.1%}; {elapsed:.0f}s")
    assert ok


def test_criterion_5_rmdp_beats_kb(single_ad):
    res, elapsed = single_ad
    avg = res.avg("rmdp", "test")
    per_ad = [s for s in res.summary if s.algo == "rmdp" and s.split == "test"]
    ok = avg.improvement >= 0.10 and avg.valid and elapsed < 1800
    record(5, ok, f"RMDP test {avg.improvement:+.1%} vs KB, cost ratio {avg.cost_ratio:.3f}, "
                  f"all days within tolerance {avg.valid} ({sum(s.valid for s in per_ad)}/{len(per_ad)} ads)")
    assert ok


# ---------------------------------------------------------------------------
# 6. shared market


def test_criterion_6_shared_market_ordering(shared_market):
    res, elapsed = shared_market
    kb, rmdp, mrmdp = (res.avg(a, "test").ratio for a in ("kb", "rmdp", "m-rmdp"))
    ok = mrmdp >= rmdp and rmdp >= kb and mrmdp >= kb and elapsed < 3600
    record(6, ok, f"mean PUR_AMT/COST: M-RMDP {mrmdp:.3f}, RMDP {rmdp:.3f}, KB {kb:.3f}; {elapsed:.0f}s")
    assert ok


# ---------------------------------------------------------------------------
# 7. convergence shape


def test_criterion_7_convergence(single_ad, shared_market):
    logs = {**single_ad[0].logs, **shared_market[0].logs}
    bad = []
    for name, log in logs.items():
        s = harness.convergence_summary(log)
        if not s.converged:
            bad.append(name)
    ok = record(7, not bad, f"{len(logs) - len(bad)}/{len(logs)} runs with falling loss and rising PUR_AMT"
                            + (f"; failing: {', '.join(sorted(bad))}" if bad else ""))
    assert ok


# ---------------------------------------------------------------------------
# 8. mechanical invariants


def test_criterion_8_invariants(example_cfg, tmp_path):
    t = time.time()
    checks = {}

    day = example_cfg.day("test", 0)
    setups = harness.calibrate(example_cfg, [example_cfg.day("calibration", 0)])
    conserved = True
    for s in setups:
        log = day.for_ad(s.ad_id)
        for pol in (s.kb, LinearBidPolicy(s.alpha_ref), LinearBidPolicy(10 * s.alpha_ref)):
            for budget in (None, 0.3, 5.0):
                r = run_episode(log, pol, budget)
                steps = sum(st.cost_micros for st in r.steps)
                conserved &= r.cost_micros == steps
                if budget is not None:
                    conserved &= r.budget_micros - r.final_budget_left_micros == steps
    checks["budget conservation"] = conserved

    m = ReplayMemory(3)
    for i in range(4):
        m.push(Transition(np.full(15, float(i)), i, float(i), None))
    checks["replay FIFO"] = len(m) == 3 and [x.a for x in m.transitions()] == [1, 2, 3]

    cfg = TrainerConfig(sizes=(15, 8, 100), batch_size=4, memory_capacity=100, target_sync=7, episodes=10)
    agent = DqnAgent(cfg)
    rng = np.random.default_rng(0)
    syncs_ok = True
    for i in range(50):
        agent.observe(Transition(rng.random(15), int(rng.integers(100)), 0.1, rng.random(15)))
        if (i + 1) % 7 == 0:
            syncs_ok &= agent.target_net.same_weights(agent.train_net)
    checks["target sync every C"] = syncs_ok and agent.target_sync_steps == list(range(7, 50, 7))

    eps = [epsilon_at(s, 2400) for s in range(2401)]
    checks["epsilon 1 -> 0 monotone"] = eps[0] == 1.0 and eps[-1] == 0.0 and all(b <= a for a, b in zip(eps, eps[1:]))

    net = QNetwork(rng=np.random.default_rng(5))
    opt = RMSProp(net.params)
    save_checkpoint(tmp_path / "q.ckpt", net, opt)
    back, _, _ = load_checkpoint(tmp_path / "q.ckpt")
    probes = np.random.default_rng(6).random((100, 15))
    checks["checkpoint bit-exact"] = np.array_equal(back.forward(probes), net.forward(probes))

    small = harness.ExperimentConfig.from_dict(
        {**example_cfg.to_dict(), "trainer": {**example_cfg.trainer, "episodes": 4, "batch_size": 16}}
    )
    runs = []
    for _ in range(2):
        s = harness.calibrate(small, [small.day("calibration", 0)])
        tr = harness.train_rmdp(small, s[0], small.days("train"))
        ev = harness.evaluate(harness.RmdpPolicy(tr.net, s[0].grid, s[0].norms), s[0], [day], "rmdp", "test")
        runs.append((tr, ev))
    (a, ea), (b, eb) = runs
    checks["full-run determinism"] = a.net.same_weights(b.net) and a.log.losses == b.log.losses and ea == eb

    elapsed = time.time() - t
    failed = [k for k, v in checks.items() if not v]
    ok = record(8, not failed and elapsed < 120,
                f"{len(checks) - len(failed)}/{len(checks)} invariants green in {elapsed:.0f}s"
                + (f"; failing: {', '.join(failed)}" if failed else ""))
    assert ok
