import numpy as np
import pytest

from ssrtb.dqn import (
    CHECKPOINT_VERSION,
    CheckpointError,
    CheckpointVersionError,
    DqnAgent,
    QNetwork,
    ReplayMemory,
    RMSProp,
    TrainerConfig,
    TrainingLog,
    Transition,
    compute_targets,
    epsilon_at,
    load_checkpoint,
    q_forward,
    run_training_episode,
    save_checkpoint,
    select_action,
    sync_target,
    train,
    train_step,
)


def test_zero_weights_give_zero_q():
    net = QNetwork()
    assert np.array_equal(q_forward(net, np.ones(15)), np.zeros(100))


def test_hand_computed_forward():
    net = QNetwork((2, 2, 2))
    net.weights[0][:] = [[1.0, -1.0], [2.0, 0.5]]
    net.biases[0][:] = [0.0, -1.0]
    net.weights[1][:] = [[1.0, 2.0], [3.0, -1.0]]
    net.biases[1][:] = [0.5, 0.0]
    # hidden = relu([1*1 + 2*2, -1*1 + 0.5*2 - 1]) = [5, 0]
    assert np.allclose(net.forward(np.array([1.0, 2.0])), [5.5, 10.0])


def test_q_forward_rejects_wrong_width():
    with pytest.raises(ValueError):
        q_forward(QNetwork(), np.ones(14))


def test_gradient_matches_finite_differences():
    rng = np.random.default_rng(0)
    net = QNetwork((15, 12, 8, 6), rng)
    for b in net.biases:
        b[:] = rng.normal(0, 0.1, b.shape)
    x = rng.random((7, 15))
    a = rng.integers(0, 6, 7)
    y = rng.normal(size=7)
    _, grads = net.loss_and_grads(x, a, y)
    h = 1e-6
    worst = 0.0
    for p, g in zip(net.params, grads):
        flat = p.reshape(-1)
        for i in rng.choice(flat.size, size=min(flat.size, 20), replace=False):
            old = flat[i]
            flat[i] = old + h
            up, _ = net.loss_and_grads(x, a, y)
            flat[i] = old - h
            down, _ = net.loss_and_grads(x, a, y)
            flat[i] = old
            num = (up - down) / (2 * h)
            worst = max(worst, abs(num - g.reshape(-1)[i]) / max(1.0, abs(num)))
    assert worst < 1e-4


def test_exploration_is_uniform():
    net = QNetwork()
    rng = np.random.default_rng(4)
    n = 100_000
    counts = np.bincount([select_action(net, np.zeros(15), 1.0, rng) for _ in range(n)], minlength=100)
    assert np.all(np.abs(counts / n - 0.01) < 0.003)


def test_greedy_when_eps_zero():
    net = QNetwork((15, 3))
    net.biases[0][:] = [0.0, 2.0, 1.0]
    assert select_action(net, np.zeros(15), 0.0, np.random.default_rng(0)) == 1
    with pytest.raises(ValueError):
        select_action(net, np.zeros(15), 1.5, np.random.default_rng(0))


def _const_net(value, n=3):
    net = QNetwork((15, n))
    net.biases[0][:] = value
    return net


def test_targets():
    tgt = _const_net([1.0, 3.0, 2.0])
    s = np.zeros((3, 15))
    y = compute_targets([5.0, 2.0, 2.0], s, [True, False, False], tgt, 1.0)
    assert np.allclose(y, [5.0, 5.0, 5.0])
    assert np.allclose(compute_targets([2.0], s[:1], [False], tgt, 0.0), [2.0])
    assert np.allclose(compute_targets([2.0], s[:1], [False], tgt, 0.5), [3.5])


def test_loss_decreases_on_fixed_batch():
    rng = np.random.default_rng(1)
    net = QNetwork((15, 32, 16, 10), rng)
    opt = RMSProp(net.params, lr=1e-4)
    x, a, y = rng.random((64, 15)), rng.integers(0, 10, 64), rng.normal(1.0, 0.5, 64)
    losses = [train_step(net, x, a, y, opt) for _ in range(1000)]
    assert all(b <= l * (1 + 1e-9) for l, b in zip(losses, losses[1:]))
    assert losses[-1] < 0.5 * losses[0]
    assert net.updates == 1000


def test_sync_copies_weights():
    a = QNetwork((15, 4, 3), np.random.default_rng(0))
    b = QNetwork((15, 4, 3), np.random.default_rng(1))
    assert not a.same_weights(b)
    sync_target(b, a)
    assert a.same_weights(b)
    x = np.random.default_rng(2).random((100, 15))
    assert np.array_equal(a.forward(x), b.forward(x))
    a.weights[0][0, 0] += 1.0
    assert not a.same_weights(b)


def _cfg(**kw):
    base = dict(sizes=(15, 8, 4), batch_size=2, memory_capacity=50, target_sync=5, episodes=10, horizon=3, seed=3)
    base.update(kw)
    return TrainerConfig(**base)


def test_target_syncs_every_c_steps():
    agent = DqnAgent(_cfg())
    rng = np.random.default_rng(0)
    for i in range(12):
        agent.observe(Transition(rng.random(15), i % 4, 1.0, rng.random(15)))
        if i == 4:
            assert agent.target_net.same_weights(agent.train_net)
        if i == 6:
            assert not agent.target_net.same_weights(agent.train_net)
    assert agent.target_sync_steps == [5, 10]
    assert agent.batches == 11


def test_epsilon_schedule():
    total = 1000
    eps = [epsilon_at(s, total) for s in range(total + 1)]
    assert eps[0] == 1.0
    assert eps[800] == 0.0 and eps[-1] == 0.0
    assert all(b <= a for a, b in zip(eps, eps[1:]))


def test_replay_is_fifo():
    m = ReplayMemory(3)
    for r in range(4):
        m.push(Transition(np.full(15, r), r, float(r), None))
    assert len(m) == 3
    assert [t.r for t in m.transitions()] == [1.0, 2.0, 3.0]
    assert all(t.s_next is None for t in m.transitions())


def test_replay_sample_empty():
    with pytest.raises(ValueError):
        ReplayMemory(3).sample(1, np.random.default_rng(0))


class _Overspend:
    """Three steps; the second one exhausts the budget."""

    budget = 1.0

    def reset(self):
        self.t = 0
        self.budget_left = 1.0
        return self._state()

    def _state(self):
        s = type("S", (), {})()
        s.g = np.full(15, float(self.t))
        return s

    def step(self, action):
        self.t += 1
        if self.t == 2:
            self.budget_left = -0.5
        done = self.t == 3
        return (None if done else self._state()), 1.0, done


@pytest.mark.parametrize("rule,stored,terminal_last", [("terminate", 1, False), ("store_terminal", 2, True)])
def test_budget_rule(rule, stored, terminal_last):
    agent = DqnAgent(_cfg(budget_rule=rule, batch_size=10))
    log = TrainingLog()
    rec = run_training_episode(agent, _Overspend(), 0, log)
    assert rec["overspent"] and rec["steps"] == 2
    assert len(agent.memory) == stored
    assert agent.global_step == 2
    assert agent.memory.transitions()[-1].s_next is None if terminal_last else agent.memory.transitions()[-1].s_next is not None


class _TwoStates:
    """Deterministic two-step chain: state A then state B, two actions each."""

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


def _value_iteration(gamma):
    q = np.zeros((2, 2))
    for _ in range(10):
        v_next = np.array([q[1].max(), 0.0])
        for s in range(2):
            for a in range(2):
                q[s, a] = _TwoStates.REWARD[s][a] + gamma * v_next[s]
    return q


def test_learns_two_state_toy():
    cfg = TrainerConfig(
        sizes=(15, 16, 2), lr=3e-4, batch_size=32, memory_capacity=10_000, target_sync=20,
        episodes=4000, horizon=2, eps_end=0.3, eps_fraction=0.5, seed=11,
    )
    agent, _ = train(lambda i: _TwoStates(), cfg)
    q = _value_iteration(1.0)
    assert np.allclose(q, [[3.0, 2.0], [0.0, 2.0]])
    for s in range(2):
        g = np.zeros(15)
        g[s] = 1.0
        assert np.allclose(agent.train_net.forward(g), q[s], atol=1e-2)


def test_checkpoint_round_trip(tmp_path):
    net = QNetwork((15, 6, 5), np.random.default_rng(2))
    net.updates = 17
    opt = RMSProp(net.params, lr=3e-4)
    opt.cache[0][:] = 0.25
    path = tmp_path / "q.ckpt"
    save_checkpoint(path, net, opt, {"ad_id": "ad3"})
    back, bopt, meta = load_checkpoint(path)
    assert back.same_weights(net) and back.updates == 17
    assert bopt.lr == 3e-4 and np.array_equal(bopt.cache[0], opt.cache[0])
    assert meta == {"ad_id": "ad3"}
    x = np.random.default_rng(0).random((20, 15))
    assert np.array_equal(back.forward(x), net.forward(x))


def test_checkpoint_truncated_and_version(tmp_path):
    net = QNetwork((15, 6, 5), np.random.default_rng(2))
    path = tmp_path / "q.ckpt"
    save_checkpoint(path, net)
    data = path.read_bytes()
    (tmp_path / "cut.ckpt").write_bytes(data[:-9])
    with pytest.raises(CheckpointError):
        load_checkpoint(tmp_path / "cut.ckpt")
    bad = bytearray(data)
    bad[8:12] = (CHECKPOINT_VERSION + 1).to_bytes(4, "little")
    (tmp_path / "v.ckpt").write_bytes(bytes(bad))
    with pytest.raises(CheckpointVersionError):
        load_checkpoint(tmp_path / "v.ckpt")
    flip = bytearray(data)
    flip[-20] ^= 0xFF
    (tmp_path / "crc.ckpt").write_bytes(bytes(flip))
    with pytest.raises(CheckpointError):
        load_checkpoint(tmp_path / "crc.ckpt")


def test_training_is_deterministic():
    cfg = TrainerConfig(sizes=(15, 16, 2), batch_size=4, memory_capacity=100, target_sync=7, episodes=50, horizon=2, seed=5)
    a, la = train(lambda i: _TwoStates(), cfg)
    b, lb = train(lambda i: _TwoStates(), cfg)
    assert a.train_net.same_weights(b.train_net)
    assert la.losses == lb.losses


def test_config_validation():
    for bad in (dict(gamma=1.5), dict(batch_size=0), dict(target_sync=0), dict(budget_rule="x"), dict(eps_fraction=0)):
        with pytest.raises(ValueError):
            TrainerConfig(**bad)
