"""Many independent learners in one shared market, each rewarded with a blend of
its own purchase amount and the mean over all agents."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .bidder import ActionGrid
from .dqn import DqnAgent, TrainerConfig, TrainingLog, Transition
from .env import MarketEnv
from .mdp import StateNorms


def mixed_reward(own: float, rewards: Sequence[float], lam: float) -> float:
    """``(1 - lam) * own + lam * mean(rewards)``."""
    if not 0.0 <= lam <= 1.0:
        raise ValueError("lambda must lie in [0, 1]")
    return (1.0 - lam) * own + lam * float(np.mean(rewards))


def mixed_rewards(rewards: Sequence[float], lam: float) -> list[float]:
    return [mixed_reward(r, rewards, lam) for r in rewards]


@dataclass
class AgentPool:
    ad_ids: list[str]
    agents: list[DqnAgent]
    grids: list[ActionGrid]
    norms: list[StateNorms]
    lam: float = 0.5

    def __post_init__(self) -> None:
        if not 0.0 <= self.lam <= 1.0:
            raise ValueError("lambda must lie in [0, 1]")
        if not (len(self.ad_ids) == len(self.agents) == len(self.grids) == len(self.norms)):
            raise ValueError("one agent, grid and norm set per ad")
        if len(set(self.ad_ids)) != len(self.ad_ids):
            raise ValueError("one agent per ad")

    @classmethod
    def create(
        cls,
        ad_ids: Sequence[str],
        config: TrainerConfig,
        grids: Sequence[ActionGrid],
        norms: Sequence[StateNorms],
        lam: float = 0.5,
    ) -> "AgentPool":
        agents = [DqnAgent(config, name=ad) for ad in ad_ids]
        return cls(list(ad_ids), agents, list(grids), list(norms), lam)

    def __len__(self) -> int:
        return len(self.agents)


@dataclass
class MassiveLog:
    rows: list[tuple[int, str, float, float, float]] = field(default_factory=list)
    agent_logs: dict[str, TrainingLog] = field(default_factory=dict)

    HEADER = ("episode", "agent", "cost", "pur_amt", "mixed_reward")

    def episode_totals(self) -> list[float]:
        """Sum of private purchase amounts over agents, per episode."""
        out: dict[int, float] = {}
        for ep, _, _, pa, _ in self.rows:
            out[ep] = out.get(ep, 0.0) + pa
        return [out[k] for k in sorted(out)]

    def mean_losses(self) -> list[float]:
        """Loss averaged over agents at each batch index they share."""
        series = [[l for _, l, _ in log.losses] for log in self.agent_logs.values()]
        n = min((len(s) for s in series), default=0)
        return [float(np.mean([s[i] for s in series])) for i in range(n)]


def run_massive_episode(pool: AgentPool, env: MarketEnv, episode: int, log: MassiveLog) -> None:
    """One lockstep day: every active agent acts, the hour resolves once, rewards are mixed, agents learn."""
    n = len(pool)
    states = env.reset()
    active = [True] * n
    start = [env.budget_left_of(j) for j in range(n)]
    private = np.zeros(n)
    mixed = np.zeros(n)
    steps = [0] * n
    overspent = [False] * n
    while not env.done and any(active):
        actions = [pool.agents[j].act(states[j]) if active[j] else 0 for j in range(n)]
        nxt, rewards, done = env.step(actions)
        blended = mixed_rewards(rewards, pool.lam)
        private += rewards
        for j, agent in enumerate(pool.agents):
            if not active[j]:
                continue
            steps[j] += 1
            mixed[j] += blended[j]
            over = env.budget_left_of(j) < 0
            overspent[j] = over
            if over and agent.config.budget_rule == "terminate":
                agent.observe(None)
                active[j] = False
                continue
            terminal = done or over
            scale = env.budgets[j]
            tr = Transition(states[j].g, actions[j], blended[j] / scale, None if terminal else nxt[j].g)
            loss = agent.observe(tr)
            if loss is not None:
                log.agent_logs[pool.ad_ids[j]].losses.append((agent.batches, loss, episode))
            if terminal:
                active[j] = False
        states = nxt
    for j, agent in enumerate(pool.agents):
        agent.end_episode()
        cost = start[j] - env.budget_left_of(j)
        ad = pool.ad_ids[j]
        log.agent_logs[ad].episodes.append(
            {"episode": episode, "pur_amt": float(private[j]), "cost": cost, "steps": steps[j], "overspent": overspent[j]}
        )
        log.rows.append((episode, ad, cost, float(private[j]), float(mixed[j])))


def train_massive(pool: AgentPool, env_factory: Callable[[int], MarketEnv], episodes: int) -> MassiveLog:
    """Train every agent of ``pool`` for ``episodes`` shared days; ``env_factory(i)`` builds day i."""
    log = MassiveLog(agent_logs={ad: TrainingLog() for ad in pool.ad_ids})
    for ep in range(episodes):
        env = env_factory(ep)
        if list(env.log.ad_ids) != pool.ad_ids:
            raise ValueError("market ads must match the pool order")
        run_massive_episode(pool, env, ep, log)
    return log
