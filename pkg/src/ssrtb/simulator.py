"""Synthetic auction days and a vectorized, budget-capped market engine.

A day is stored column-wise (one row per auction, one column per learning ad)
together with the uniform draws that decide user responses.  Replaying the same
log under two policies therefore uses common random numbers: only the bids
differ.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Iterator, Protocol, Sequence

import numpy as np

from .auction import AuctionRequest, Participant, position_factor, response_from_uniforms
from .mdp import EMPTY_AGGREGATE, HourAggregate, aggregate_arrays
from .money import from_micros, to_micros
from .seeding import stream

HOURS = 24
DAY_SECONDS = 86_400
UNLIMITED = 2**62
LOG_FORMAT = "ssrtb-auction-log"
LOG_VERSION = 1

# relative auction intensity per hour: night valley, 9:00 peak, evening plateau
_DEFAULT_SHAPE = (
    0.90, 0.60, 0.40, 0.22, 0.18, 0.18, 0.22, 0.40, 0.80, 1.60, 1.45, 1.30,
    1.20, 1.20, 1.20, 1.15, 1.10, 1.10, 1.20, 1.40, 1.55, 1.50, 1.30, 1.10,
)
_DEFAULT_CVR = (
    0.80, 0.75, 0.70, 0.70, 0.70, 0.75, 0.80, 0.85, 0.90, 0.90, 0.95, 1.00,
    1.00, 1.00, 1.00, 1.00, 1.05, 1.10, 1.20, 1.35, 1.55, 1.50, 1.30, 1.00,
)
_DEFAULT_COMPETITION = (
    0.90, 0.90, 0.90, 0.90, 0.90, 0.90, 0.90, 0.95, 1.10, 1.40, 1.30, 1.10,
    1.00, 1.00, 1.00, 1.00, 1.00, 1.00, 1.05, 1.10, 1.20, 1.20, 1.10, 1.00,
)


class EpisodeFinishedError(RuntimeError):
    """Stepping an environment whose episode already ended."""


@dataclass(frozen=True)
class CompetitorSpec:
    """An exogenous bidder; its ranking score is ``bidscore * bid`` (both lognormal)."""

    id: str
    presence: float = 0.8
    bidscore_mu: float = 0.0
    bidscore_sigma: float = 0.25
    bid_mu: float = 0.0
    bid_sigma: float = 0.4


@dataclass
class DayProfile:
    hourly_intensity: list[float]
    hourly_cvr_multiplier: list[float]
    competitor_pool: list[CompetitorSpec]
    hourly_competition: list[float] = field(default_factory=lambda: [1.0] * HOURS)
    slot_count: int = 3
    reserve: float = 0.1
    position_decay: float = 0.5

    def __post_init__(self) -> None:
        for name in ("hourly_intensity", "hourly_cvr_multiplier", "hourly_competition"):
            v = getattr(self, name)
            if len(v) != HOURS:
                raise ValueError(f"{name} needs {HOURS} entries")
            setattr(self, name, [float(x) for x in v])
        if any(x < 0 for x in self.hourly_intensity):
            raise ValueError("hourly_intensity must be non-negative")
        if any(x <= 0 for x in self.hourly_cvr_multiplier) or any(x <= 0 for x in self.hourly_competition):
            raise ValueError("multipliers must be positive")
        if sum(self.hourly_intensity) > 0 and not max(self.hourly_intensity[3:8]) < self.hourly_intensity[9]:
            raise ValueError("intensity over hours 3-7 must stay below the 9:00 peak")
        if self.slot_count < 1:
            raise ValueError("slot_count must be >= 1")
        ids = [c.id for c in self.competitor_pool]
        if len(set(ids)) != len(ids):
            raise ValueError("competitor ids must be unique")

    @classmethod
    def default(
        cls,
        daily_auctions: float = 1000.0,
        competitors: Sequence[CompetitorSpec] | None = None,
        **kwargs,
    ) -> "DayProfile":
        shape = np.array(_DEFAULT_SHAPE)
        if competitors is None:
            competitors = [
                CompetitorSpec("comp0", presence=0.9, bid_mu=math.log(0.5)),
                CompetitorSpec("comp1", presence=0.8, bid_mu=math.log(0.4)),
                CompetitorSpec("comp2", presence=0.6, bid_mu=math.log(0.3)),
                CompetitorSpec("comp3", presence=0.5, bid_mu=math.log(0.25)),
            ]
        return cls(
            hourly_intensity=list(shape / shape.sum() * daily_auctions),
            hourly_cvr_multiplier=list(_DEFAULT_CVR),
            competitor_pool=list(competitors),
            hourly_competition=list(_DEFAULT_COMPETITION),
            **kwargs,
        )

    def scaled(self, factor: float) -> "DayProfile":
        return replace(self, hourly_intensity=[x * factor for x in self.hourly_intensity])


@dataclass(frozen=True)
class AdSpec:
    """Traffic model of one learning ad: what the market shows it, not how it bids."""

    ad_id: str
    keywords: tuple[str, ...]
    pcvr_mean: float = 0.1
    pcvr_concentration: float = 6.0
    ctr_mean: float = 0.2
    ctr_pcvr_elasticity: float = 0.2
    bidscore_mu: float = 0.0
    bidscore_sigma: float = 0.25
    purchase_amount_mean: float = 50.0
    participation: float = 1.0
    keyword_pcvr_scale: tuple[float, ...] = ()

    def __post_init__(self) -> None:
        if self.keyword_pcvr_scale and len(self.keyword_pcvr_scale) != len(self.keywords):
            raise ValueError("keyword_pcvr_scale needs one factor per keyword")
        if any(x <= 0 for x in self.keyword_pcvr_scale):
            raise ValueError("keyword_pcvr_scale factors must be positive")

    def scale_of(self, keyword: str) -> float:
        if not self.keyword_pcvr_scale:
            return 1.0
        return self.keyword_pcvr_scale[self.keywords.index(keyword)]


@dataclass
class AuctionLog:
    """One day of auctions, sorted by timestamp.

    Per-ad arrays have shape ``(n, n_ads)`` and are zero where the ad does not
    take part; competitor arrays have shape ``(n, n_competitors)`` with a zero
    bid for an absent competitor.
    """

    day: int
    ad_ids: tuple[str, ...]
    competitor_ids: tuple[str, ...]
    keywords: tuple[str, ...]
    amount_mean: np.ndarray
    timestamp: np.ndarray
    keyword: np.ndarray
    present: np.ndarray
    bidscore: np.ndarray
    pcvr: np.ndarray
    true_ctr: np.ndarray
    true_cvr: np.ndarray
    u_click: np.ndarray
    u_purchase: np.ndarray
    u_amount: np.ndarray
    comp_bidscore: np.ndarray
    comp_bid: np.ndarray
    slot_count: int = 3
    reserve: float = 0.1
    position_decay: float = 0.5

    _AD_ARRAYS = ("present", "bidscore", "pcvr", "true_ctr", "true_cvr", "u_click", "u_purchase", "u_amount")
    _ROW_ARRAYS = ("timestamp", "keyword", *_AD_ARRAYS, "comp_bidscore", "comp_bid")

    def __len__(self) -> int:
        return len(self.timestamp)

    @property
    def n_ads(self) -> int:
        return len(self.ad_ids)

    @property
    def comp_score(self) -> np.ndarray:
        return self.comp_bidscore * self.comp_bid

    def ad_index(self, ad_id: str) -> int:
        return self.ad_ids.index(ad_id)

    def step_bounds(self, horizon: int = HOURS) -> np.ndarray:
        """Row offsets splitting the day into ``horizon`` equal time steps."""
        edges = np.arange(horizon + 1) * (DAY_SECONDS / horizon)
        return np.searchsorted(self.timestamp, edges, side="left")

    def step_index(self, horizon: int = HOURS) -> np.ndarray:
        return np.minimum((self.timestamp * horizon / DAY_SECONDS).astype(np.int64), horizon - 1)

    def _take(self, rows, cols=None) -> "AuctionLog":
        cols = slice(None) if cols is None else cols
        kw = {}
        for name in self._ROW_ARRAYS:
            a = getattr(self, name)[rows]
            if name in self._AD_ARRAYS:
                a = a[:, cols]
            kw[name] = a
        ad_ids = tuple(np.array(self.ad_ids, dtype=object)[cols]) if cols != slice(None) else self.ad_ids
        return AuctionLog(
            day=self.day,
            ad_ids=tuple(ad_ids),
            competitor_ids=self.competitor_ids,
            keywords=self.keywords,
            amount_mean=self.amount_mean[cols],
            slot_count=self.slot_count,
            reserve=self.reserve,
            position_decay=self.position_decay,
            **kw,
        )

    def for_ad(self, ad_id: str) -> "AuctionLog":
        """Auctions the ad takes part in, with the other learning ads removed.

        Exact when the ads' keyword sets are disjoint.
        """
        j = self.ad_index(ad_id)
        return self._take(self.present[:, j], [j])

    @classmethod
    def concat(cls, parts: Sequence["AuctionLog"]) -> "AuctionLog":
        first = parts[0]
        kw = {name: np.concatenate([getattr(p, name) for p in parts]) for name in cls._ROW_ARRAYS}
        return cls(
            day=first.day,
            ad_ids=first.ad_ids,
            competitor_ids=first.competitor_ids,
            keywords=first.keywords,
            amount_mean=first.amount_mean,
            slot_count=first.slot_count,
            reserve=first.reserve,
            position_decay=first.position_decay,
            **kw,
        )

    def request(self, i: int) -> tuple[AuctionRequest, dict[str, float]]:
        """The i-th auction as an AuctionRequest plus the competitors' fixed bids."""
        parts = []
        for j, ad in enumerate(self.ad_ids):
            if self.present[i, j]:
                parts.append(
                    Participant(
                        ad,
                        float(self.bidscore[i, j]),
                        float(self.pcvr[i, j]),
                        float(self.true_ctr[i, j]),
                        float(self.true_cvr[i, j]),
                        float(self.amount_mean[j]),
                    )
                )
        fixed = {}
        for k, cid in enumerate(self.competitor_ids):
            if self.comp_bid[i, k] > 0:
                parts.append(Participant(cid, float(self.comp_bidscore[i, k]), 0.0, 0.0, 0.0, 1.0))
                fixed[cid] = float(self.comp_bid[i, k])
        req = AuctionRequest(float(self.timestamp[i]), self.keywords[int(self.keyword[i])], parts, self.slot_count)
        return req, fixed

    def to_requests(self) -> Iterator[tuple[AuctionRequest, dict[str, float]]]:
        for i in range(len(self)):
            yield self.request(i)

    def write_jsonl(self, path: str | Path) -> None:
        """One header line, then one auction per line."""
        header = {
            "format": LOG_FORMAT,
            "version": LOG_VERSION,
            "day": self.day,
            "ad_ids": list(self.ad_ids),
            "competitor_ids": list(self.competitor_ids),
            "keywords": list(self.keywords),
            "purchase_amount_mean": self.amount_mean.tolist(),
            "slot_count": self.slot_count,
            "reserve": self.reserve,
            "position_decay": self.position_decay,
        }
        with open(path, "w") as fh:
            fh.write(json.dumps(header) + "\n")
            for i in range(len(self)):
                ads = []
                for j, ad in enumerate(self.ad_ids):
                    if self.present[i, j]:
                        ads.append(
                            {
                                "ad_id": ad,
                                "bidscore": float(self.bidscore[i, j]),
                                "pcvr": float(self.pcvr[i, j]),
                                "true_ctr": float(self.true_ctr[i, j]),
                                "true_cvr": float(self.true_cvr[i, j]),
                                "u": [float(self.u_click[i, j]), float(self.u_purchase[i, j]), float(self.u_amount[i, j])],
                            }
                        )
                comps = [
                    {"id": cid, "bidscore": float(self.comp_bidscore[i, k]), "bid": float(self.comp_bid[i, k])}
                    for k, cid in enumerate(self.competitor_ids)
                    if self.comp_bid[i, k] > 0
                ]
                rec = {
                    "timestamp": float(self.timestamp[i]),
                    "keyword": self.keywords[int(self.keyword[i])],
                    "participants": ads,
                    "competitors": comps,
                }
                fh.write(json.dumps(rec) + "\n")

    @classmethod
    def read_jsonl(cls, path: str | Path) -> "AuctionLog":
        with open(path) as fh:
            header = json.loads(fh.readline())
            if header.get("format") != LOG_FORMAT or header.get("version") != LOG_VERSION:
                raise ValueError(f"{path}: not a version-{LOG_VERSION} auction log")
            rows = [json.loads(line) for line in fh if line.strip()]
        ad_ids = tuple(header["ad_ids"])
        comp_ids = tuple(header["competitor_ids"])
        keywords = tuple(header["keywords"])
        n, A, K = len(rows), len(ad_ids), len(comp_ids)
        ad_col = {a: j for j, a in enumerate(ad_ids)}
        comp_col = {c: k for k, c in enumerate(comp_ids)}
        kw_idx = {k: i for i, k in enumerate(keywords)}
        arr = {name: np.zeros((n, A)) for name in cls._AD_ARRAYS}
        arr["present"] = np.zeros((n, A), dtype=bool)
        comp_bs = np.zeros((n, K))
        comp_bid = np.zeros((n, K))
        ts = np.zeros(n)
        kw = np.zeros(n, dtype=np.int32)
        for i, r in enumerate(rows):
            ts[i] = r["timestamp"]
            kw[i] = kw_idx[r["keyword"]]
            for p in r["participants"]:
                j = ad_col[p["ad_id"]]
                arr["present"][i, j] = True
                for name in ("bidscore", "pcvr", "true_ctr", "true_cvr"):
                    arr[name][i, j] = p[name]
                arr["u_click"][i, j], arr["u_purchase"][i, j], arr["u_amount"][i, j] = p["u"]
            for c in r["competitors"]:
                k = comp_col[c["id"]]
                comp_bs[i, k] = c["bidscore"]
                comp_bid[i, k] = c["bid"]
        return cls(
            day=header["day"],
            ad_ids=ad_ids,
            competitor_ids=comp_ids,
            keywords=keywords,
            amount_mean=np.asarray(header["purchase_amount_mean"], dtype=np.float64),
            timestamp=ts,
            keyword=kw,
            comp_bidscore=comp_bs,
            comp_bid=comp_bid,
            slot_count=header["slot_count"],
            reserve=header["reserve"],
            position_decay=header["position_decay"],
            **arr,
        )


def generate_hour(seed: int, profile: DayProfile, ads: Sequence[AdSpec], hour: int) -> AuctionLog:
    """Auctions of one hour.  Each hour has its own sub-stream, so days can be streamed."""
    rng = stream(seed, "day-hour", hour)
    keywords = tuple(sorted({kw for ad in ads for kw in ad.keywords}))
    n = int(rng.poisson(profile.hourly_intensity[hour]))
    ts = hour * 3600.0 + np.sort(rng.uniform(0.0, 3600.0, n))
    kw = rng.integers(0, max(len(keywords), 1), size=n).astype(np.int32)
    A, K = len(ads), len(profile.competitor_pool)
    shape = (n, A)
    out = {name: np.zeros(shape) for name in AuctionLog._AD_ARRAYS}
    out["present"] = np.zeros(shape, dtype=bool)
    cvr_mult = profile.hourly_cvr_multiplier[hour]
    for j, ad in enumerate(ads):
        own = np.isin(kw, [keywords.index(k) for k in ad.keywords])
        present = own & (rng.random(n) < ad.participation)
        kw_scale = np.array([ad.scale_of(k) if k in ad.keywords else 1.0 for k in keywords])[kw] if n else np.ones(0)
        mean = np.clip(ad.pcvr_mean * cvr_mult * kw_scale, 1e-4, 0.95)
        pcvr = rng.beta(mean * ad.pcvr_concentration, (1.0 - mean) * ad.pcvr_concentration)
        true_cvr = np.clip(pcvr * (1.0 + rng.uniform(-0.1, 0.1, n)), 0.0, 1.0)
        true_ctr = np.clip(ad.ctr_mean * (pcvr / mean) ** ad.ctr_pcvr_elasticity, 0.0, 1.0)
        bidscore = rng.lognormal(ad.bidscore_mu, ad.bidscore_sigma, n)
        u = rng.random((3, n))
        cols = {
            "bidscore": bidscore,
            "pcvr": pcvr,
            "true_ctr": true_ctr,
            "true_cvr": true_cvr,
            "u_click": u[0],
            "u_purchase": u[1],
            "u_amount": u[2],
        }
        out["present"][:, j] = present
        for name, v in cols.items():
            out[name][:, j] = np.where(present, v, 0.0)
    comp_bs = np.zeros((n, K))
    comp_bid = np.zeros((n, K))
    level = math.log(profile.hourly_competition[hour])
    for k, c in enumerate(profile.competitor_pool):
        here = rng.random(n) < c.presence
        comp_bs[:, k] = np.where(here, rng.lognormal(c.bidscore_mu, c.bidscore_sigma, n), 0.0)
        comp_bid[:, k] = np.where(here, rng.lognormal(c.bid_mu + level, c.bid_sigma, n), 0.0)
    return AuctionLog(
        day=seed,
        ad_ids=tuple(ad.ad_id for ad in ads),
        competitor_ids=tuple(c.id for c in profile.competitor_pool),
        keywords=keywords,
        amount_mean=np.array([ad.purchase_amount_mean for ad in ads], dtype=np.float64),
        timestamp=ts,
        keyword=kw,
        comp_bidscore=comp_bs,
        comp_bid=comp_bid,
        slot_count=profile.slot_count,
        reserve=profile.reserve,
        position_decay=profile.position_decay,
        **out,
    )


def generate_day(seed: int, profile: DayProfile, ads: Sequence[AdSpec]) -> AuctionLog:
    """A seeded synthetic day: Poisson arrivals per hour, Beta PCVRs, lognormal competitors."""
    return AuctionLog.concat([generate_hour(seed, profile, ads, h) for h in range(HOURS)])


# ---------------------------------------------------------------------------
# market engine


@dataclass
class BlockOutcome:
    """Per-auction, per-ad results of a contiguous block of auctions."""

    entered: np.ndarray
    won: np.ndarray
    rank: np.ndarray
    price: np.ndarray
    clicked: np.ndarray
    purchased: np.ndarray
    cost_micros: np.ndarray
    amount_micros: np.ndarray

    def head(self, k: int) -> "BlockOutcome":
        return BlockOutcome(*(getattr(self, f)[:k] for f in self.__dataclass_fields__))

    @classmethod
    def concat(cls, parts: Sequence["BlockOutcome"], n_ads: int) -> "BlockOutcome":
        if not parts:
            z = np.zeros((0, n_ads))
            return cls(z.astype(bool), z.astype(bool), z.astype(np.int64), z, z.astype(bool), z.astype(bool),
                       z.astype(np.int64), z.astype(np.int64))
        return cls(*(np.concatenate([getattr(p, f) for p in parts]) for f in cls.__dataclass_fields__))


def _id_order(log: AuctionLog) -> np.ndarray:
    ids = list(log.ad_ids) + list(log.competitor_ids)
    order = sorted(range(len(ids)), key=lambda i: ids[i])
    rank = np.empty(len(ids), dtype=np.int64)
    rank[order] = np.arange(len(ids))
    return rank


def resolve(log: AuctionLog, lo: int, hi: int, bids: np.ndarray) -> BlockOutcome:
    """Rank, price (GSP) and respond for auctions ``lo:hi`` given the learning ads' bids.

    Mirrors :func:`ssrtb.auction.run_auction` row by row, with the log's stored
    uniforms in place of fresh random draws.
    """
    A = log.n_ads
    bids = np.asarray(bids, dtype=np.float64).reshape(hi - lo, A)
    present = log.present[lo:hi]
    bs = log.bidscore[lo:hi]
    s_ads = np.where(present & (bids > 0), bs * bids, 0.0)
    s_ads = np.where(s_ads >= log.reserve, s_ads, 0.0)
    comp = log.comp_score[lo:hi]
    comp = np.where(comp >= log.reserve, comp, 0.0)
    s_all = np.concatenate([s_ads, comp], axis=1)
    idr = _id_order(log)
    sj = s_ads[:, :, None]
    sm = s_all[:, None, :]
    tie_first = idr[None, None, :] < idr[:A][None, :, None]
    above = (sm > 0) & ((sm > sj) | ((sm == sj) & tie_first))
    is_self = np.zeros((A, A + comp.shape[1]), dtype=bool)
    is_self[np.arange(A), np.arange(A)] = True
    below = (sm > 0) & ~above & ~is_self[None]
    entered = s_ads > 0
    rank = np.where(entered, 1 + above.sum(axis=2), 0)
    next_score = np.where(below, sm, 0.0).max(axis=2, initial=0.0)
    won = entered & (rank <= log.slot_count)
    with np.errstate(divide="ignore", invalid="ignore"):
        price = np.where(won, np.minimum(np.maximum(next_score, log.reserve) / np.where(bs > 0, bs, 1.0), bids), 0.0)
    click_prob = log.true_ctr[lo:hi] * position_factor(np.maximum(rank, 1), log.position_decay)
    clicked, purchased, amount = response_from_uniforms(
        log.u_click[lo:hi], log.u_purchase[lo:hi], log.u_amount[lo:hi], click_prob, log.true_cvr[lo:hi], log.amount_mean[None, :]
    )
    clicked &= won
    purchased &= won
    return BlockOutcome(
        entered=entered,
        won=won,
        rank=rank.astype(np.int64),
        price=price,
        clicked=clicked,
        purchased=purchased,
        cost_micros=np.where(clicked, to_micros(price), 0),
        amount_micros=np.where(purchased, np.maximum(to_micros(amount), 1), 0),
    )


def run_capped(log: AuctionLog, lo: int, hi: int, bids: np.ndarray, budget_left: np.ndarray) -> BlockOutcome:
    """Resolve auctions ``lo:hi`` in timestamp order under per-ad budgets.

    ``budget_left`` (micros, one entry per ad) is debited in place.  Once an
    ad's budget left reaches zero or below it bids 0 for the remaining
    auctions; the click that crosses zero is still charged.
    """
    A = log.n_ads
    bids = np.asarray(bids, dtype=np.float64).reshape(hi - lo, A)
    parts = []
    pos = lo
    while pos < hi:
        active = budget_left > 0
        out = resolve(log, pos, hi, np.where(active[None, :], bids[pos - lo :], 0.0))
        cum = np.cumsum(out.cost_micros, axis=0)
        hit = (cum >= budget_left[None, :]) & active[None, :]
        rows = hit.any(axis=1)
        if not rows.any():
            parts.append(out)
            budget_left -= cum[-1]
            break
        k = int(np.argmax(rows))
        parts.append(out.head(k + 1))
        budget_left -= cum[k]
        pos += k + 1
    return BlockOutcome.concat(parts, A)


# ---------------------------------------------------------------------------
# episodes


@dataclass(frozen=True)
class StepRecord:
    t: int
    impressions: int
    wins: int
    clicks: int
    purchases: int
    cost_micros: int
    pur_amt_micros: int

    @property
    def cost(self) -> float:
        return from_micros(self.cost_micros)

    @property
    def pur_amt(self) -> float:
        return from_micros(self.pur_amt_micros)


@dataclass
class EpisodeResult:
    steps: list[StepRecord]
    budget_micros: int
    final_budget_left_micros: int

    def _sum(self, name: str) -> int:
        return sum(getattr(s, name) for s in self.steps)

    @property
    def impressions(self) -> int:
        return self._sum("impressions")

    @property
    def wins(self) -> int:
        return self._sum("wins")

    @property
    def clicks(self) -> int:
        return self._sum("clicks")

    @property
    def purchases(self) -> int:
        return self._sum("purchases")

    @property
    def cost_micros(self) -> int:
        return self._sum("cost_micros")

    @property
    def pur_amt_micros(self) -> int:
        return self._sum("pur_amt_micros")

    @property
    def cost(self) -> float:
        return from_micros(self.cost_micros)

    @property
    def pur_amt(self) -> float:
        return from_micros(self.pur_amt_micros)

    @property
    def budget(self) -> float:
        return from_micros(self.budget_micros)

    @property
    def final_budget_left(self) -> float:
        return from_micros(self.final_budget_left_micros)


@dataclass
class BidContext:
    """What a policy may look at when bidding on a block of auctions."""

    ad: int
    step: int
    budget_micros: int
    budget_left_micros: int
    last: HourAggregate
    rng: np.random.Generator | None = None

    @property
    def budget(self) -> float:
        return from_micros(self.budget_micros)

    @property
    def budget_left(self) -> float:
        return from_micros(self.budget_left_micros)


class BidPolicy(Protocol):
    def segments(self, log: AuctionLog, horizon: int) -> np.ndarray: ...

    def bids(self, log: AuctionLog, lo: int, hi: int, ctx: BidContext) -> np.ndarray: ...


class MarketDay:
    """Mutable state of one replayed day: budgets left and every resolved block."""

    def __init__(self, log: AuctionLog, budgets_micros: Sequence[int], horizon: int = HOURS):
        if len(budgets_micros) != log.n_ads:
            raise ValueError("one budget per ad")
        self.log = log
        self.horizon = horizon
        self.bounds = log.step_bounds(horizon)
        self.budgets = np.array([int(b) for b in budgets_micros], dtype=np.int64)
        self.budget_left = self.budgets.copy()
        self._parts: list[BlockOutcome] = []
        self._done_to = 0

    def run(self, lo: int, hi: int, bids: np.ndarray) -> list[HourAggregate]:
        if lo != self._done_to:
            raise ValueError("blocks must be run in order")
        out = run_capped(self.log, lo, hi, bids, self.budget_left)
        self._parts.append(out)
        self._done_to = hi
        return [self._aggregate(out, lo, hi, j) for j in range(self.log.n_ads)]

    def run_step(self, t: int, bids: np.ndarray) -> list[HourAggregate]:
        """Run step ``t`` (1-based) of the day."""
        return self.run(int(self.bounds[t - 1]), int(self.bounds[t]), bids)

    def _aggregate(self, out: BlockOutcome, lo: int, hi: int, j: int) -> HourAggregate:
        return aggregate_arrays(
            out.entered[:, j],
            out.won[:, j],
            out.rank[:, j],
            out.clicked[:, j],
            out.purchased[:, j],
            out.cost_micros[:, j],
            out.amount_micros[:, j],
            self.log.pcvr[lo:hi, j],
        )

    def outcome(self) -> BlockOutcome:
        return BlockOutcome.concat(self._parts, self.log.n_ads)

    def result(self, j: int) -> EpisodeResult:
        out = self.outcome()
        n = len(out.entered)
        step = self.log.step_index(self.horizon)[:n]
        steps = []
        for t in range(self.horizon):
            m = step == t
            steps.append(
                StepRecord(
                    t=t + 1,
                    impressions=int(np.count_nonzero(out.entered[m, j])),
                    wins=int(np.count_nonzero(out.won[m, j])),
                    clicks=int(np.count_nonzero(out.clicked[m, j])),
                    purchases=int(np.count_nonzero(out.purchased[m, j])),
                    cost_micros=int(out.cost_micros[m, j].sum()),
                    pur_amt_micros=int(out.amount_micros[m, j].sum()),
                )
            )
        return EpisodeResult(steps, int(self.budgets[j]), int(self.budget_left[j]))


def _budget_micros(budget: float | None) -> int:
    return UNLIMITED if budget is None else to_micros(budget)


def run_episode(
    log: AuctionLog,
    policy: BidPolicy,
    budget: float | None,
    rng: np.random.Generator | None = None,
    horizon: int = HOURS,
) -> EpisodeResult:
    """Replay one day for a single-ad log under ``policy`` with budget ``c``.

    ``budget=None`` disables the cap (used to measure a baseline's natural cost).
    """
    if log.n_ads != 1:
        raise ValueError("run_episode expects a single-ad log; use AuctionLog.for_ad or run_market_episode")
    return run_market_episode(log, [policy], [budget], rng, horizon)[0]


def run_market_episode(
    log: AuctionLog,
    policies: Sequence[BidPolicy],
    budgets: Sequence[float | None],
    rng: np.random.Generator | None = None,
    horizon: int = HOURS,
) -> list[EpisodeResult]:
    """Replay one day with every learning ad bidding through its own policy.

    With a single ad the policy's own segmentation is used; shared markets are
    run hour by hour so all ads see the same block boundaries.
    """
    if len(policies) != log.n_ads:
        raise ValueError("one policy per ad")
    day = MarketDay(log, [_budget_micros(b) for b in budgets], horizon)
    if log.n_ads == 1:
        bounds = policies[0].segments(log, horizon)
    else:
        bounds = day.bounds
    last = [EMPTY_AGGREGATE] * log.n_ads
    for i in range(len(bounds) - 1):
        lo, hi = int(bounds[i]), int(bounds[i + 1])
        bids = np.zeros((hi - lo, log.n_ads))
        for j, pol in enumerate(policies):
            ctx = BidContext(j, i, int(day.budgets[j]), int(day.budget_left[j]), last[j], rng)
            bids[:, j] = pol.bids(log, lo, hi, ctx)
        last = day.run(lo, hi, bids)
    return [day.result(j) for j in range(log.n_ads)]
