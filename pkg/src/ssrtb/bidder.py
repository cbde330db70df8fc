"""Bidding policies: the linear PCVR bidder with its 100-step alpha grid, keyword-level
fixed prices, and the auction-level baseline that sets prices directly."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from .mdp import STATE_DIM, CLIP_MAX, HourAggregate, StateNorms, build_state
from .simulator import HOURS, AuctionLog, BidContext, run_episode

N_ACTIONS = 100


class UntrainedModelError(RuntimeError):
    pass


@dataclass(frozen=True)
class ActionGrid:
    """100 geometric multipliers of ``alpha_ref`` from 0.1 to 10."""

    alpha_ref: float
    size: int = N_ACTIONS
    low: float = 0.1
    high: float = 10.0

    def __post_init__(self) -> None:
        if not self.alpha_ref > 0:
            raise ValueError("alpha_ref must be positive")
        if self.size < 2 or not 0 < self.low < self.high:
            raise ValueError("grid needs size >= 2 and 0 < low < high")

    @property
    def values(self) -> np.ndarray:
        k = np.arange(self.size)
        return self.alpha_ref * self.low * (self.high / self.low) ** (k / (self.size - 1))

    @property
    def alpha_max(self) -> float:
        return self.alpha_ref * self.high

    def alpha(self, k: int) -> float:
        if not 0 <= k < self.size or int(k) != k:
            raise IndexError(f"action {k} outside 0..{self.size - 1}")
        return float(self.alpha_ref * self.low * (self.high / self.low) ** (k / (self.size - 1)))


def action_to_alpha(grid: ActionGrid, k: int) -> float:
    return grid.alpha(k)


def _hourly(log: AuctionLog, horizon: int) -> np.ndarray:
    return log.step_bounds(horizon)


@dataclass
class LinearBidPolicy:
    """Bids ``alpha * pcvr``; alpha is held fixed for the whole block."""

    alpha: float

    def __post_init__(self) -> None:
        if self.alpha < 0:
            raise ValueError("alpha must be non-negative")

    def bid(self, pcvr):
        return self.alpha * pcvr

    def segments(self, log: AuctionLog, horizon: int = HOURS) -> np.ndarray:
        return _hourly(log, horizon)

    def bids(self, log: AuctionLog, lo: int, hi: int, ctx: BidContext) -> np.ndarray:
        return self.bid(log.pcvr[lo:hi, ctx.ad])


def bid(policy: LinearBidPolicy, pcvr: float) -> float:
    if not 0.0 <= pcvr <= 1.0:
        raise ValueError("pcvr must lie in [0, 1]")
    return policy.bid(pcvr)


@dataclass
class KbPolicy:
    """Keyword-level baseline: one preset price per keyword for the whole day."""

    prices: Mapping[str, float]

    def __post_init__(self) -> None:
        self.prices = dict(self.prices)
        for kw, p in self.prices.items():
            if p < 0:
                raise ValueError(f"negative preset for {kw!r}")

    def bid(self, keyword: str) -> float:
        if keyword not in self.prices:
            raise KeyError(f"no preset price for keyword {keyword!r}")
        return self.prices[keyword]

    def segments(self, log: AuctionLog, horizon: int = HOURS) -> np.ndarray:
        return _hourly(log, horizon)

    def bids(self, log: AuctionLog, lo: int, hi: int, ctx: BidContext) -> np.ndarray:
        table = np.array([self.prices.get(kw, np.nan) for kw in log.keywords])
        out = table[log.keyword[lo:hi]] if len(log.keywords) else np.zeros(hi - lo)
        present = log.present[lo:hi, ctx.ad]
        if np.isnan(out[present]).any():
            missing = sorted({log.keywords[i] for i in log.keyword[lo:hi][present & np.isnan(out)]})
            raise KeyError(f"no preset price for keywords {missing}")
        return np.where(present, out, 0.0)


def kb_bid(policy: KbPolicy, keyword: str) -> float:
    return policy.bid(keyword)


def greedy_action(q: np.ndarray) -> int:
    """argmax with ties going to the lowest index."""
    return int(np.argmax(q))


@dataclass
class RmdpPolicy:
    """Greedy hourly policy: state from last hour's aggregate, alpha from the Q-network."""

    net: object
    grid: ActionGrid
    norms: StateNorms
    actions: list[int] = field(default_factory=list)

    def segments(self, log: AuctionLog, horizon: int = HOURS) -> np.ndarray:
        return _hourly(log, horizon)

    def bids(self, log: AuctionLog, lo: int, hi: int, ctx: BidContext) -> np.ndarray:
        if getattr(self.net, "updates", 1) == 0:
            raise UntrainedModelError("RMDP policy needs a trained network")
        if ctx.step == 0:
            self.actions = []
        prev_alpha = self.grid.alpha(self.actions[-1]) if self.actions else 0.0
        state = build_state(ctx.budget_left, ctx.step + 1, ctx.last, prev_alpha, self.norms.with_budget(ctx.budget))
        k = greedy_action(self.net.forward(state.g))
        self.actions.append(k)
        return self.grid.alpha(k) * log.pcvr[lo:hi, ctx.ad]


# ---------------------------------------------------------------------------
# auction-level baseline


@dataclass(frozen=True)
class AmdpNorms:
    """Scales for the auction-level state; counts and money are per interval."""

    pcvr: float
    bidscore: float
    score: float
    clicks: float
    purchases: float
    cost: float
    pur_amt: float
    price_ref: float
    n_competitors: int
    expected_intervals: float

    def __post_init__(self) -> None:
        for name in self.__dataclass_fields__:
            if not getattr(self, name) > 0:
                raise ValueError(f"AMDP normalizer {name} must be positive")


def interval_bounds(n: int, interval: int) -> np.ndarray:
    """Row offsets of consecutive ``interval``-sized blocks; an empty log has one empty block."""
    if interval < 1:
        raise ValueError("interval must be >= 1")
    if n == 0:
        return np.array([0, 0])
    b = np.arange(0, n, interval)
    return np.append(b, n)


def amdp_features(
    log: AuctionLog,
    row: int,
    index: int,
    budget_left: float,
    budget: float,
    prev: HourAggregate,
    prev_price: float,
    norms: AmdpNorms,
    ad: int = 0,
) -> np.ndarray:
    """15 features of the auction sampled at the start of an interval."""
    clip = lambda x: min(max(x, 0.0), CLIP_MAX)  # noqa: E731
    if row < len(log):
        comp = log.comp_score[row]
        live = comp[comp > 0]
        ts = log.timestamp[row]
        pcvr = log.pcvr[row, ad]
        bs = log.bidscore[row, ad]
    else:
        live = np.zeros(0)
        ts = pcvr = bs = 0.0
    g = np.array(
        [
            min(max(budget_left, 0.0) / budget, 1.0),
            ts / 86_400.0,
            clip(index / norms.expected_intervals),
            clip(pcvr / norms.pcvr),
            clip(bs / norms.bidscore),
            clip(live.max() / norms.score) if live.size else 0.0,
            clip(live.mean() / norms.score) if live.size else 0.0,
            live.size / norms.n_competitors,
            prev.win_rate,
            clip(prev.clicks / norms.clicks),
            clip(prev.purchases / norms.purchases),
            clip(prev.cost / norms.cost),
            clip(prev.pur_amt / norms.pur_amt),
            clip(prev_price / (10.0 * norms.price_ref)),
            clip(prev.avg_pcvr / norms.pcvr),
        ],
        dtype=np.float64,
    )
    assert g.shape == (STATE_DIM,)
    return g


def amdp_policy(net, features: np.ndarray, grid: ActionGrid) -> float:
    """Direct price for an interval: grid value of the greedy action (grid scaled by the price reference)."""
    if net is None or getattr(net, "updates", 0) == 0:
        raise UntrainedModelError("AMDP policy needs a trained network")
    return grid.alpha(greedy_action(net.forward(np.asarray(features, dtype=np.float64))))


@dataclass
class AmdpPolicy:
    """Replays the auction-level greedy policy: one direct price per ``interval`` auctions."""

    net: object
    grid: ActionGrid
    norms: AmdpNorms
    interval: int = 100
    _prev_price: float = 0.0

    def segments(self, log: AuctionLog, horizon: int = HOURS) -> np.ndarray:
        return interval_bounds(len(log), self.interval)

    def bids(self, log: AuctionLog, lo: int, hi: int, ctx: BidContext) -> np.ndarray:
        if ctx.step == 0:
            self._prev_price = 0.0
        g = amdp_features(log, lo, ctx.step, ctx.budget_left, ctx.budget, ctx.last, self._prev_price, self.norms, ctx.ad)
        price = amdp_policy(self.net, g, self.grid)
        self._prev_price = price
        return np.where(log.present[lo:hi, ctx.ad], price, 0.0)


# ---------------------------------------------------------------------------
# calibration


def natural_cost(log: AuctionLog, policy, horizon: int = HOURS) -> float:
    """Cost of a single-ad policy over a day without a budget cap."""
    return run_episode(log, policy, None, horizon=horizon).cost


def calibrate_alpha_ref(
    logs: Sequence[AuctionLog],
    target_cost: float,
    lo: float = 1e-3,
    hi: float = 1e4,
    iters: int = 60,
) -> float:
    """Alpha whose uncapped linear spend, averaged over ``logs``, matches ``target_cost``.

    Bisection on log-alpha; spend is non-decreasing in alpha.
    """
    if not target_cost > 0:
        raise ValueError("target cost must be positive")

    def spend(a: float) -> float:
        return float(np.mean([natural_cost(log, LinearBidPolicy(a)) for log in logs]))

    a, b = np.log(lo), np.log(hi)
    if spend(np.exp(b)) < target_cost:
        return float(np.exp(b))
    for _ in range(iters):
        mid = 0.5 * (a + b)
        if spend(np.exp(mid)) < target_cost:
            a = mid
        else:
            b = mid
    return float(np.exp(0.5 * (a + b)))


def _mean_or_one(x: float) -> float:
    return float(x) if x > 0 else 1.0


def calibrate_norms(
    logs: Sequence[AuctionLog],
    kb: KbPolicy,
    grid: ActionGrid,
    horizon: int = HOURS,
) -> StateNorms:
    """Typical per-step magnitudes of the KB baseline; zero means fall back to 1."""
    results = [run_episode(log, kb, None, horizon=horizon) for log in logs]
    steps = [s for r in results for s in r.steps]
    mean = lambda f: _mean_or_one(np.mean([f(s) for s in steps]))  # noqa: E731
    clicks = sum(s.clicks for s in steps)
    cost = sum(s.cost for s in steps)
    return StateNorms(
        budget=_mean_or_one(np.mean([r.cost for r in results])),
        impressions=mean(lambda s: s.impressions),
        wins=mean(lambda s: s.wins),
        clicks=mean(lambda s: s.clicks),
        purchases=mean(lambda s: s.purchases),
        cost=mean(lambda s: s.cost),
        pur_amt=mean(lambda s: s.pur_amt),
        ppc=_mean_or_one(cost / clicks if clicks else 0.0),
        slot_count=logs[0].slot_count,
        alpha_max=grid.alpha_max,
        horizon=horizon,
    )


def calibrate_amdp_norms(
    logs: Sequence[AuctionLog],
    kb: KbPolicy,
    alpha_ref: float,
    interval: int,
) -> AmdpNorms:
    """Per-interval scales for the auction-level state, measured under KB bidding."""
    results = [run_episode(log, kb, None) for log in logs]
    n = float(np.mean([len(log) for log in logs]))
    per = max(n / interval, 1.0)
    pcvr = np.concatenate([log.pcvr[:, 0] for log in logs]) if logs else np.zeros(0)
    bs = np.concatenate([log.bidscore[:, 0] for log in logs]) if logs else np.zeros(0)
    comp = np.concatenate([log.comp_score.ravel() for log in logs]) if logs else np.zeros(0)
    comp = comp[comp > 0]
    tot = lambda f: _mean_or_one(np.mean([f(r) for r in results]) / per)  # noqa: E731
    mean_pcvr = _mean_or_one(pcvr.mean() if pcvr.size else 0.0)
    return AmdpNorms(
        pcvr=mean_pcvr,
        bidscore=_mean_or_one(bs.mean() if bs.size else 0.0),
        score=_mean_or_one(comp.mean() if comp.size else 0.0),
        clicks=tot(lambda r: r.clicks),
        purchases=tot(lambda r: r.purchases),
        cost=tot(lambda r: r.cost),
        pur_amt=tot(lambda r: r.pur_amt),
        price_ref=alpha_ref * mean_pcvr,
        n_competitors=max(len(logs[0].competitor_ids), 1),
        expected_intervals=per,
    )

