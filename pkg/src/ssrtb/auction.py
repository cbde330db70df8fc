"""Single-impression sponsored-search auction: ranking, GSP pricing, user response.

Ranking score is ``bidscore * bid``; ties go to the lexicographically smaller
ad id.  Slots are priced with generalized second price on score.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

DEFAULT_RESERVE = 0.1
_TINY_U = 2.0**-53


class AuctionInputError(ValueError):
    """Raised when an auction is fed bids or participants it cannot accept."""


@dataclass(frozen=True)
class KeywordTuple:
    belong_ad: str
    keyword: str
    bidprice: float

    def __post_init__(self) -> None:
        if self.bidprice < 0:
            raise AuctionInputError(f"negative bidprice for {self.belong_ad}/{self.keyword}")


@dataclass
class Ad:
    id: str
    keyword_tuples: list[KeywordTuple]
    daily_budget: float
    alpha_ref: float = 1.0

    def __post_init__(self) -> None:
        if self.daily_budget <= 0:
            raise AuctionInputError(f"ad {self.id}: daily_budget must be positive")
        if self.alpha_ref <= 0:
            raise AuctionInputError(f"ad {self.id}: alpha_ref must be positive")
        seen = set()
        for kt in self.keyword_tuples:
            if kt.belong_ad != self.id:
                raise AuctionInputError(f"keyword tuple {kt.keyword} belongs to {kt.belong_ad}, not {self.id}")
            if kt.keyword in seen:
                raise AuctionInputError(f"duplicate keyword {kt.keyword} in ad {self.id}")
            seen.add(kt.keyword)

    def preset(self, keyword: str) -> float:
        for kt in self.keyword_tuples:
            if kt.keyword == keyword:
                return kt.bidprice
        raise KeyError(f"ad {self.id} has no keyword {keyword!r}")


@dataclass(frozen=True)
class Participant:
    ad_id: str
    bidscore: float
    pcvr: float
    true_ctr: float
    true_cvr: float
    purchase_amount_mean: float


@dataclass
class AuctionRequest:
    timestamp: float
    keyword: str
    participants: list[Participant]
    slot_count: int = 3

    def __post_init__(self) -> None:
        if self.slot_count < 1:
            raise AuctionInputError("slot_count must be >= 1")
        ids = [p.ad_id for p in self.participants]
        if len(set(ids)) != len(ids):
            raise AuctionInputError("an ad may appear at most once per auction")

    def participant(self, ad_id: str) -> Participant:
        for p in self.participants:
            if p.ad_id == ad_id:
                return p
        raise AuctionInputError(f"ad {ad_id!r} is not a participant")


@dataclass(frozen=True)
class SlotResult:
    ad_id: str
    rank: int
    price_per_click: float
    clicked: bool
    purchased: bool
    purchase_amount: float


@dataclass
class AuctionOutcome:
    slots: list[SlotResult]
    losers: list[str] = field(default_factory=list)

    def for_ad(self, ad_id: str) -> SlotResult | None:
        for s in self.slots:
            if s.ad_id == ad_id:
                return s
        return None


def position_factor(rank: int | np.ndarray, decay: float = 0.5):
    """Click-probability multiplier for a 1-based slot position."""
    return 1.0 / (1.0 + decay * (rank - 1))


def _ordered(request: AuctionRequest, bids: Mapping[str, float]) -> list[tuple[str, float]]:
    by_id = {p.ad_id: p for p in request.participants}
    for ad_id, b in bids.items():
        if ad_id not in by_id:
            raise AuctionInputError(f"bid for unknown ad {ad_id!r}")
        if b < 0:
            raise AuctionInputError(f"negative bid for {ad_id!r}")
    scored = []
    for ad_id, b in bids.items():
        bs = by_id[ad_id].bidscore
        if bs <= 0:
            raise AuctionInputError(f"non-positive bidscore for {ad_id!r}")
        if b > 0:
            scored.append((ad_id, bs * b))
    scored.sort(key=lambda e: (-e[1], e[0]))
    return scored


def rank_ads(request: AuctionRequest, bids: Mapping[str, float]) -> list[tuple[str, float]]:
    """Rank participants by ``bidscore * bid`` and keep the top ``slot_count``.

    Zero bids do not enter.  Equal scores are ordered by ad id.
    """
    return _ordered(request, bids)[: request.slot_count]


def price_slots(
    ranked: Sequence[tuple[str, float]],
    bidscores: Mapping[str, float],
    reserve: float = DEFAULT_RESERVE,
    bids: Mapping[str, float] | None = None,
) -> dict[str, float]:
    """GSP price-per-click for each ranked entry.

    Entry ``i`` pays ``score[i+1] / bidscore[i]``; the last entry pays
    ``reserve / bidscore``.  Prices are clipped to ``[reserve/bidscore, bid]``
    where the bid is taken from ``bids`` or recovered as ``score/bidscore``.
    """
    prices: dict[str, float] = {}
    for i, (ad_id, score) in enumerate(ranked):
        bs = bidscores[ad_id]
        own_bid = bids[ad_id] if bids is not None else score / bs
        next_score = ranked[i + 1][1] if i + 1 < len(ranked) else reserve
        floor = reserve / bs
        prices[ad_id] = min(max(next_score / bs, floor), own_bid)
    return prices


def response_from_uniforms(u_click, u_purchase, u_amount, click_prob, true_cvr, amount_mean):
    """Map uniform draws to (clicked, purchased, amount); works on scalars and arrays.

    Purchase amounts are exponential with the given mean (inverse-CDF transform);
    a zero draw is nudged up so that a purchase always has a positive amount.
    """
    clicked = u_click < click_prob
    purchased = clicked & (u_purchase < true_cvr)
    u = np.maximum(u_amount, _TINY_U)
    amount = np.where(purchased, -amount_mean * np.log1p(-u), 0.0)
    return clicked, purchased, amount


def simulate_response(
    request: AuctionRequest,
    ranked: Sequence[tuple[str, float]],
    prices: Mapping[str, float],
    rng: np.random.Generator,
    losers: Sequence[str] = (),
    decay: float = 0.5,
) -> AuctionOutcome:
    """Sample clicks, purchases and purchase amounts for the won slots.

    Three uniforms are drawn per slot in rank order so a seeded ``rng`` gives
    bit-identical outcomes.
    """
    slots = []
    for rank, (ad_id, _) in enumerate(ranked, start=1):
        p = request.participant(ad_id)
        u = rng.random(3)
        clicked, purchased, amount = response_from_uniforms(
            u[0], u[1], u[2], p.true_ctr * position_factor(rank, decay), p.true_cvr, p.purchase_amount_mean
        )
        slots.append(
            SlotResult(ad_id, rank, float(prices[ad_id]), bool(clicked), bool(purchased), float(amount))
        )
    return AuctionOutcome(slots, list(losers))


def run_auction(
    request: AuctionRequest,
    bids: Mapping[str, float],
    rng: np.random.Generator,
    reserve: float = DEFAULT_RESERVE,
    decay: float = 0.5,
) -> AuctionOutcome:
    """Rank, price and simulate one impression.

    Scores below the reserve do not enter.  The last winner pays the first
    loser's score when there is one, the reserve otherwise.
    """
    order = [(a, s) for a, s in _ordered(request, bids) if s >= reserve]
    bidscores = {p.ad_id: p.bidscore for p in request.participants}
    priced = order[: request.slot_count + 1]
    prices = price_slots(priced, bidscores, reserve, bids)
    winners = order[: request.slot_count]
    losers = [a for a, _ in order[request.slot_count :]] + [
        a for a, b in bids.items() if a not in {w for w, _ in order}
    ]
    return simulate_response(request, winners, prices, rng, losers, decay)
