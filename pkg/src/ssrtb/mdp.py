"""Hour-aggregated robust MDP: aggregates, states, rewards and the day-consistency checks."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .money import from_micros, to_micros

STATE_DIM = 15
CLIP_MAX = 10.0
SUBSTITUTE_THRESHOLD = 0.01
OBSERVED_ETA = 0.03

FEATURE_NAMES = (
    "budget_frac",
    "time_frac",
    "impressions",
    "wins",
    "clicks",
    "purchases",
    "cost",
    "pur_amt",
    "ctr",
    "cvr",
    "ppc",
    "avg_pcvr",
    "avg_rank",
    "win_rate",
    "alpha_frac",
)

# aggregate fields compared across days by consistency_check
CONSISTENCY_FEATURES = (
    "impressions",
    "wins",
    "clicks",
    "purchases",
    "cost",
    "pur_amt",
    "ctr",
    "cvr",
    "ppc",
    "avg_pcvr",
    "avg_rank",
    "win_rate",
)


class ConfigurationError(ValueError):
    pass


class UndefinedSimilarityError(ValueError):
    pass


def _ratio(num: float, den: float) -> float:
    return num / den if den else 0.0


@dataclass(frozen=True)
class AuctionRecord:
    """One ad's view of one auction."""

    pcvr: float
    entered: bool
    won: bool = False
    rank: int = 0
    clicked: bool = False
    purchased: bool = False
    cost: float = 0.0
    purchase_amount: float = 0.0


@dataclass(frozen=True)
class HourAggregate:
    impressions: int = 0
    wins: int = 0
    clicks: int = 0
    purchases: int = 0
    cost_micros: int = 0
    pur_amt_micros: int = 0
    ctr: float = 0.0
    cvr: float = 0.0
    ppc: float = 0.0
    avg_pcvr: float = 0.0
    avg_rank: float = 0.0
    win_rate: float = 0.0

    @property
    def cost(self) -> float:
        return from_micros(self.cost_micros)

    @property
    def pur_amt(self) -> float:
        return from_micros(self.pur_amt_micros)

    def value(self, name: str) -> float:
        return float(getattr(self, name))


EMPTY_AGGREGATE = HourAggregate()


def aggregate_arrays(entered, won, rank, clicked, purchased, cost_micros, amount_micros, pcvr) -> HourAggregate:
    """Aggregate per-auction arrays (one ad, one period) into an HourAggregate."""
    entered = np.asarray(entered, dtype=bool)
    won = np.asarray(won, dtype=bool) & entered
    impressions = int(entered.sum())
    wins = int(won.sum())
    clicks = int(np.count_nonzero(np.asarray(clicked, dtype=bool) & won))
    purchases = int(np.count_nonzero(np.asarray(purchased, dtype=bool) & won))
    cost = int(np.sum(cost_micros, dtype=np.int64))
    pur_amt = int(np.sum(amount_micros, dtype=np.int64))
    pcvr_sum = float(np.sum(np.asarray(pcvr, dtype=np.float64)[entered])) if impressions else 0.0
    rank_sum = float(np.sum(np.asarray(rank)[won])) if wins else 0.0
    return HourAggregate(
        impressions=impressions,
        wins=wins,
        clicks=clicks,
        purchases=purchases,
        cost_micros=cost,
        pur_amt_micros=pur_amt,
        ctr=_ratio(clicks, impressions),
        cvr=_ratio(purchases, clicks),
        ppc=_ratio(from_micros(cost), clicks),
        avg_pcvr=_ratio(pcvr_sum, impressions),
        avg_rank=_ratio(rank_sum, wins),
        win_rate=_ratio(wins, impressions),
    )


def merge_aggregates(parts: Sequence[HourAggregate]) -> HourAggregate:
    """Combine aggregates of consecutive blocks of one period into one."""
    parts = [p for p in parts if p.impressions]
    if not parts:
        return EMPTY_AGGREGATE
    imp = sum(p.impressions for p in parts)
    wins = sum(p.wins for p in parts)
    clicks = sum(p.clicks for p in parts)
    purchases = sum(p.purchases for p in parts)
    cost = sum(p.cost_micros for p in parts)
    return HourAggregate(
        impressions=imp,
        wins=wins,
        clicks=clicks,
        purchases=purchases,
        cost_micros=cost,
        pur_amt_micros=sum(p.pur_amt_micros for p in parts),
        ctr=_ratio(clicks, imp),
        cvr=_ratio(purchases, clicks),
        ppc=_ratio(from_micros(cost), clicks),
        avg_pcvr=_ratio(sum(p.avg_pcvr * p.impressions for p in parts), imp),
        avg_rank=_ratio(sum(p.avg_rank * p.wins for p in parts), wins),
        win_rate=_ratio(wins, imp),
    )


def aggregate_hour(records: Sequence[AuctionRecord]) -> HourAggregate:
    if not records:
        return EMPTY_AGGREGATE
    return aggregate_arrays(
        [r.entered for r in records],
        [r.won for r in records],
        [r.rank for r in records],
        [r.clicked for r in records],
        [r.purchased for r in records],
        np.array([to_micros(r.cost) for r in records], dtype=np.int64),
        np.array([to_micros(r.purchase_amount) for r in records], dtype=np.int64),
        [r.pcvr for r in records],
    )


def step_reward(aggregate: HourAggregate) -> float:
    """Reward of one step: the purchase amount gained in it."""
    return aggregate.pur_amt


@dataclass(frozen=True)
class StateNorms:
    """Per-feature scales for the state vector.

    Count and money normalizers are typical hourly values from a calibration
    run; ``budget`` is the day's budget ``c``.
    """

    budget: float
    impressions: float
    wins: float
    clicks: float
    purchases: float
    cost: float
    pur_amt: float
    ppc: float
    slot_count: int
    alpha_max: float
    horizon: int = 24

    def __post_init__(self) -> None:
        for name in ("budget", "impressions", "wins", "clicks", "purchases", "cost", "pur_amt", "ppc", "alpha_max"):
            if not getattr(self, name) > 0:
                raise ConfigurationError(f"normalizer {name} must be positive, got {getattr(self, name)!r}")
        if self.slot_count < 1 or self.horizon < 1:
            raise ConfigurationError("slot_count and horizon must be >= 1")

    def with_budget(self, budget: float) -> "StateNorms":
        return replace(self, budget=budget)


@dataclass(frozen=True)
class MdpState:
    b: float
    t: int
    g: np.ndarray = field(repr=False)

    def __post_init__(self) -> None:
        if self.g.shape != (STATE_DIM,):
            raise ValueError(f"state vector must have {STATE_DIM} entries")


def _clip(x: float) -> float:
    return min(max(x, 0.0), CLIP_MAX)


def build_state(b: float, t: int, aggregate: HourAggregate, prev_alpha: float, norms: StateNorms) -> MdpState:
    """State for step ``t`` given the budget left and the previous step's aggregate."""
    b = max(b, 0.0)
    g = np.array(
        [
            min(b / norms.budget, 1.0),
            t / norms.horizon,
            _clip(aggregate.impressions / norms.impressions),
            _clip(aggregate.wins / norms.wins),
            _clip(aggregate.clicks / norms.clicks),
            _clip(aggregate.purchases / norms.purchases),
            _clip(aggregate.cost / norms.cost),
            _clip(aggregate.pur_amt / norms.pur_amt),
            aggregate.ctr,
            aggregate.cvr,
            _clip(aggregate.ppc / norms.ppc),
            aggregate.avg_pcvr,
            aggregate.avg_rank / norms.slot_count,
            aggregate.win_rate,
            _clip(prev_alpha / norms.alpha_max),
        ],
        dtype=np.float64,
    )
    return MdpState(b=b, t=t, g=g)


@dataclass(frozen=True)
class SimilarityReport:
    ratio: float
    substitutable: bool


def similarity(x: Sequence[float], y: Sequence[float]) -> SimilarityReport:
    """Substitutability of two feature vectors: ``|x-y|^2 / min(|x|^2, |y|^2) < 0.01``."""
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.shape != y.shape:
        raise ValueError("vectors must have equal length")
    den = min(float(x @ x), float(y @ y))
    if den == 0.0:
        raise UndefinedSimilarityError("similarity is undefined for a zero vector")
    d = x - y
    ratio = float(d @ d) / den
    return SimilarityReport(ratio, ratio < SUBSTITUTE_THRESHOLD)


def eta_bound(eta: float) -> float:
    """Largest substitution ratio between two values that both lie within ``eta`` of a common mean."""
    if not 0.0 <= eta < 1.0:
        raise ValueError("eta must lie in [0, 1)")
    return (2.0 * eta / (1.0 - eta)) ** 2


@dataclass(frozen=True)
class ConsistencyCell:
    feature: str
    step: int
    eta_hat: float
    excluded: bool
    ratio: float | None

    @property
    def passed(self) -> bool:
        return not self.excluded and self.eta_hat < OBSERVED_ETA


@dataclass
class ConsistencyReport:
    cells: list[ConsistencyCell]
    actions: tuple[int, ...]

    @property
    def included(self) -> list[ConsistencyCell]:
        return [c for c in self.cells if not c.excluded]

    @property
    def flagged(self) -> list[ConsistencyCell]:
        return [c for c in self.cells if c.excluded]

    @property
    def max_eta(self) -> float:
        return max((c.eta_hat for c in self.included), default=0.0)

    @property
    def pass_fraction(self) -> float:
        cells = self.included
        return sum(c.passed for c in cells) / len(cells) if cells else 1.0

    @property
    def within_observation(self) -> bool:
        return self.max_eta < OBSERVED_ETA

    @property
    def implied_bound(self) -> float:
        return eta_bound(self.max_eta) if self.max_eta < 1.0 else math.inf

    @property
    def chain_holds(self) -> bool:
        """Every measurable pairwise ratio respects ``eta_bound`` of its cell, and
        whenever the day pair sits inside the observed band every ratio is below
        the substitution threshold."""
        for c in self.included:
            if c.ratio is None or c.eta_hat >= 1.0:
                continue
            if c.ratio > eta_bound(c.eta_hat) * (1 + 1e-9) + 1e-15:
                return False
            if c.eta_hat <= OBSERVED_ETA and not c.ratio < SUBSTITUTE_THRESHOLD:
                return False
        return True


def consistency_check(
    day_a: Sequence[HourAggregate],
    day_b: Sequence[HourAggregate],
    actions: Sequence[int],
    features: Iterable[str] = CONSISTENCY_FEATURES,
) -> ConsistencyReport:
    """Per-feature, per-step relative deviation of two days from their mean.

    Both days must come from the same profile under the same action sequence.
    Cells whose cross-day mean is zero are excluded and flagged.
    """
    if len(day_a) != len(day_b) or len(day_a) != len(actions):
        raise ValueError("days and action sequence must have the same number of steps")
    cells = []
    for name in features:
        for step, (ha, hb) in enumerate(zip(day_a, day_b), start=1):
            a, b = ha.value(name), hb.value(name)
            mean = 0.5 * (a + b)
            if mean == 0.0:
                cells.append(ConsistencyCell(name, step, 0.0, True, None))
                continue
            eta = max(abs(a - mean), abs(b - mean)) / abs(mean)
            ratio = similarity([a], [b]).ratio if a != 0.0 and b != 0.0 else None
            cells.append(ConsistencyCell(name, step, eta, False, ratio))
    return ConsistencyReport(cells, tuple(int(a) for a in actions))


def write_consistency_csv(reports: Sequence[ConsistencyReport], path: str | Path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["pair", "feature", "step", "eta_hat", "pass", "excluded"])
        for i, rep in enumerate(reports):
            for c in rep.cells:
                w.writerow([i, c.feature, c.step, f"{c.eta_hat:.6g}", int(c.passed), int(c.excluded)])
