"""Step/reset environments over a replayed day.

``MarketEnv`` runs every learning ad in lockstep, one hour per step, with alpha
set from each ad's action.  ``BiddingEnv`` is the one-ad view of it and
``AuctionLevelEnv`` decides a direct price every fixed number of auctions.
"""

from __future__ import annotations

from typing import Sequence

import numpy as np

from .bidder import ActionGrid, AmdpNorms, amdp_features, interval_bounds
from .mdp import EMPTY_AGGREGATE, HourAggregate, MdpState, StateNorms, build_state, step_reward
from .money import from_micros, to_micros
from .simulator import HOURS, AuctionLog, EpisodeFinishedError, EpisodeResult, MarketDay


class MarketEnv:
    def __init__(
        self,
        log: AuctionLog,
        budgets: Sequence[float],
        grids: Sequence[ActionGrid],
        norms: Sequence[StateNorms],
        horizon: int = HOURS,
    ):
        if not (len(budgets) == len(grids) == len(norms) == log.n_ads):
            raise ValueError("one budget, grid and norm set per ad")
        if any(not b > 0 for b in budgets):
            raise ValueError("budgets must be positive")
        self.log = log
        self.budgets = [float(b) for b in budgets]
        self.grids = list(grids)
        self.norms = [n.with_budget(b) for n, b in zip(norms, self.budgets)]
        self.horizon = horizon
        self._day: MarketDay | None = None
        self.t = 0
        self.done = True

    @property
    def n_ads(self) -> int:
        return self.log.n_ads

    def budget_left_of(self, j: int) -> float:
        """May be negative: the click that exhausts the budget is charged in full."""
        return from_micros(int(self._day.budget_left[j]))

    def reset(self) -> list[MdpState]:
        self._day = MarketDay(self.log, [to_micros(b) for b in self.budgets], self.horizon)
        self.t = 1
        self.done = False
        self.prev_alpha = [0.0] * self.n_ads
        self.last: list[HourAggregate] = [EMPTY_AGGREGATE] * self.n_ads
        self.actions: list[list[int]] = [[] for _ in range(self.n_ads)]
        return self._states()

    def _states(self) -> list[MdpState]:
        return [
            build_state(self.budget_left_of(j), self.t, self.last[j], self.prev_alpha[j], self.norms[j])
            for j in range(self.n_ads)
        ]

    def step(self, actions: Sequence[int]) -> tuple[list[MdpState] | None, list[float], bool]:
        """Run hour ``t`` with alpha_j from action_j; returns (next states or None, rewards, done)."""
        if self._day is None or self.done:
            raise EpisodeFinishedError("episode has terminated; call reset()")
        if len(actions) != self.n_ads:
            raise ValueError("one action per ad")
        alphas = np.array([g.alpha(int(a)) for g, a in zip(self.grids, actions)])
        lo, hi = int(self._day.bounds[self.t - 1]), int(self._day.bounds[self.t])
        bids = self.log.pcvr[lo:hi] * alphas[None, :]
        aggs = self._day.run(lo, hi, bids)
        for j, a in enumerate(actions):
            self.actions[j].append(int(a))
        self.prev_alpha = list(alphas)
        self.last = aggs
        rewards = [step_reward(a) for a in aggs]
        self.t += 1
        if self.t > self.horizon:
            self.done = True
            return None, rewards, True
        return self._states(), rewards, False

    def result(self, j: int) -> EpisodeResult:
        return self._day.result(j)


class BiddingEnv:
    """Single-ad hourly environment (scalar interface for the learning loop)."""

    def __init__(self, log: AuctionLog, budget: float, grid: ActionGrid, norms: StateNorms, horizon: int = HOURS):
        if log.n_ads != 1:
            raise ValueError("BiddingEnv expects a single-ad log")
        self.market = MarketEnv(log, [budget], [grid], [norms], horizon)
        self.budget = float(budget)

    @property
    def budget_left(self) -> float:
        return self.market.budget_left_of(0)

    @property
    def done(self) -> bool:
        return self.market.done

    def reset(self) -> MdpState:
        return self.market.reset()[0]

    def step(self, action: int) -> tuple[MdpState | None, float, bool]:
        states, rewards, done = self.market.step([action])
        return (None if states is None else states[0]), rewards[0], done

    def result(self) -> EpisodeResult:
        return self.market.result(0)


class _State:
    """Bare feature vector with the ``g`` attribute the learning loop expects."""

    __slots__ = ("g",)

    def __init__(self, g: np.ndarray):
        self.g = g


class AuctionLevelEnv:
    """One decision per ``interval`` auctions; the action is a direct price from ``price_grid``."""

    def __init__(self, log: AuctionLog, budget: float, price_grid: ActionGrid, norms: AmdpNorms, interval: int = 100):
        if log.n_ads != 1:
            raise ValueError("AuctionLevelEnv expects a single-ad log")
        if not budget > 0:
            raise ValueError("budget must be positive")
        self.log = log
        self.budget = float(budget)
        self.grid = price_grid
        self.norms = norms
        self.interval = interval
        self.bounds = interval_bounds(len(log), interval)
        self._day: MarketDay | None = None
        self.done = True

    @property
    def budget_left(self) -> float:
        return from_micros(int(self._day.budget_left[0]))

    def reset(self) -> _State:
        self._day = MarketDay(self.log, [to_micros(self.budget)])
        self.i = 0
        self.prev_price = 0.0
        self.last = EMPTY_AGGREGATE
        self.done = False
        return self._state()

    def _state(self) -> _State:
        lo = int(self.bounds[self.i])
        g = amdp_features(self.log, lo, self.i, self.budget_left, self.budget, self.last, self.prev_price, self.norms)
        return _State(g)

    def step(self, action: int) -> tuple[_State | None, float, bool]:
        if self._day is None or self.done:
            raise EpisodeFinishedError("episode has terminated; call reset()")
        price = self.grid.alpha(int(action))
        lo, hi = int(self.bounds[self.i]), int(self.bounds[self.i + 1])
        bids = np.where(self.log.present[lo:hi, 0], price, 0.0)
        self.last = self._day.run(lo, hi, bids[:, None])[0]
        self.prev_price = price
        self.i += 1
        if self.i >= len(self.bounds) - 1:
            self.done = True
            return None, step_reward(self.last), True
        return self._state(), step_reward(self.last), False

    def result(self) -> EpisodeResult:
        return self._day.result(0)
