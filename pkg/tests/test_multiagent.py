import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from ssrtb.bidder import ActionGrid, KbPolicy, calibrate_norms
from ssrtb.dqn import TrainerConfig, train
from ssrtb.env import BiddingEnv, MarketEnv
from ssrtb.multiagent import AgentPool, mixed_reward, mixed_rewards, train_massive
from ssrtb.simulator import AdSpec, DayProfile, generate_day, run_episode

ADS = [AdSpec("ad0", ("kw0",)), AdSpec("ad1", ("kw1",))]
CFG = dict(sizes=(15, 16, 100), batch_size=8, memory_capacity=500, target_sync=30, episodes=6, budget_rule="store_terminal")


@pytest.fixture(scope="module")
def market():
    day = generate_day(13, DayProfile.default(500), ADS)
    grids, norms, budgets = [], [], []
    for a in ADS:
        log = day.for_ad(a.ad_id)
        kb = KbPolicy({a.keywords[0]: 0.3})
        g = ActionGrid(2.0)
        grids.append(g)
        norms.append(calibrate_norms([log], kb, g))
        budgets.append(run_episode(log, kb, None).cost)
    return day, grids, norms, budgets


def test_mixed_reward_example():
    assert mixed_reward(2.0, [2.0, 6.0], 0.5) == pytest.approx(3.0)
    assert mixed_reward(2.0, [2.0, 6.0], 0.0) == 2.0
    assert mixed_reward(2.0, [2.0, 6.0], 1.0) == pytest.approx(4.0)
    with pytest.raises(ValueError):
        mixed_reward(1.0, [1.0], 1.5)


@given(st.lists(st.floats(0, 1e3), min_size=1, max_size=10), st.floats(0, 1))
def test_mixing_preserves_total(rewards, lam):
    assert sum(mixed_rewards(rewards, lam)) == pytest.approx(sum(rewards), rel=1e-9, abs=1e-9)


def test_pool_validation():
    cfg = TrainerConfig(**CFG)
    with pytest.raises(ValueError):
        AgentPool.create(["a", "a"], cfg, [ActionGrid(1.0)] * 2, [None] * 2)
    with pytest.raises(ValueError):
        AgentPool.create(["a"], cfg, [ActionGrid(1.0)], [None], lam=2.0)


def _single(day, grids, norms, budgets, j, cfg):
    log = day.for_ad(ADS[j].ad_id)
    return train(lambda i: BiddingEnv(log, budgets[j], grids[j], norms[j]), cfg, name=ADS[j].ad_id)


def test_one_agent_pool_equals_single_training(market):
    day, grids, norms, budgets = market
    cfg = TrainerConfig(**CFG)
    log = day.for_ad("ad0")
    pool = AgentPool.create(["ad0"], cfg, grids[:1], norms[:1], lam=0.5)
    mlog = train_massive(pool, lambda i: MarketEnv(log, budgets[:1], grids[:1], norms[:1]), cfg.episodes)
    agent, slog = _single(day, grids, norms, budgets, 0, cfg)
    assert pool.agents[0].train_net.same_weights(agent.train_net)
    assert mlog.agent_logs["ad0"].losses == slog.losses
    assert [e["pur_amt"] for e in mlog.agent_logs["ad0"].episodes] == slog.episode_pur_amt()


def test_selfish_disjoint_keywords_match_independent_training(market):
    """With lam = 0 and no shared auctions, each market agent learns exactly what it would alone."""
    day, grids, norms, budgets = market
    assert not (day.present[:, 0] & day.present[:, 1]).any()
    cfg = TrainerConfig(**CFG)
    pool = AgentPool.create(["ad0", "ad1"], cfg, grids, norms, lam=0.0)
    train_massive(pool, lambda i: MarketEnv(day, budgets, grids, norms), cfg.episodes)
    for j in range(2):
        agent, _ = _single(day, grids, norms, budgets, j, cfg)
        assert pool.agents[j].train_net.same_weights(agent.train_net)


def test_massive_training_deterministic(market):
    day, grids, norms, budgets = market
    cfg = TrainerConfig(**CFG)
    runs = []
    for _ in range(2):
        pool = AgentPool.create(["ad0", "ad1"], cfg, grids, norms, lam=0.5)
        log = train_massive(pool, lambda i: MarketEnv(day, budgets, grids, norms), cfg.episodes)
        runs.append((pool, log))
    (p1, l1), (p2, l2) = runs
    assert l1.rows == l2.rows
    assert all(a.train_net.same_weights(b.train_net) for a, b in zip(p1.agents, p2.agents))
    assert len(l1.episode_totals()) == cfg.episodes
    assert np.all(np.isfinite(l1.mean_losses()))


def test_market_order_must_match(market):
    day, grids, norms, budgets = market
    cfg = TrainerConfig(**CFG)
    pool = AgentPool.create(["ad1", "ad0"], cfg, grids, norms)
    with pytest.raises(ValueError):
        train_massive(pool, lambda i: MarketEnv(day, budgets, grids, norms), 1)
