import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ssrtb.auction import (
    Ad,
    AuctionInputError,
    AuctionRequest,
    KeywordTuple,
    Participant,
    position_factor,
    price_slots,
    rank_ads,
    response_from_uniforms,
    run_auction,
    simulate_response,
)


def _p(ad_id, bidscore, ctr=0.5, cvr=0.5, amount=10.0):
    return Participant(ad_id, bidscore, pcvr=0.1, true_ctr=ctr, true_cvr=cvr, purchase_amount_mean=amount)


@pytest.fixture
def abc():
    return AuctionRequest(0.0, "kw", [_p("A", 1.0), _p("B", 2.0), _p("C", 0.5)])


def test_rank_by_score(abc):
    ranked = rank_ads(abc, {"A": 2.0, "B": 0.8, "C": 3.0})
    assert [a for a, _ in ranked] == ["A", "B", "C"]
    assert [s for _, s in ranked] == pytest.approx([2.0, 1.6, 1.5])


def test_zero_bid_excluded():
    req = AuctionRequest(0.0, "kw", [_p("A", 1.0)])
    assert rank_ads(req, {"A": 0.0}) == []


def test_tie_goes_to_smaller_id():
    req = AuctionRequest(0.0, "kw", [_p("B", 1.0), _p("A", 2.0)])
    ranked = rank_ads(req, {"B": 1.6, "A": 0.8})
    assert [a for a, _ in ranked] == ["A", "B"]


def test_unknown_ad_rejected(abc):
    with pytest.raises(AuctionInputError):
        rank_ads(abc, {"Z": 1.0})


def test_negative_bid_rejected(abc):
    with pytest.raises(AuctionInputError):
        rank_ads(abc, {"A": -1.0})


def test_truncated_to_slot_count():
    req = AuctionRequest(0.0, "kw", [_p(c, 1.0) for c in "ABCDE"], slot_count=2)
    assert len(rank_ads(req, {c: 1.0 + i for i, c in enumerate("ABCDE")})) == 2


def test_gsp_prices():
    ranked = [("A", 2.0), ("B", 1.6), ("C", 1.5)]
    prices = price_slots(ranked, {"A": 1.0, "B": 2.0, "C": 0.5}, reserve=0.1)
    assert prices["A"] == pytest.approx(1.6)
    assert prices["B"] == pytest.approx(0.75)
    assert prices["C"] == pytest.approx(0.2)


def test_single_slot_pays_reserve():
    assert price_slots([("A", 3.0)], {"A": 1.0}, reserve=0.1)["A"] == pytest.approx(0.1)


def test_price_never_above_bid():
    prices = price_slots([("B", 1.6), ("C", 1.5)], {"B": 2.0, "C": 0.5}, 0.1, bids={"B": 0.8, "C": 3.0})
    assert prices["B"] == pytest.approx(0.75) and prices["B"] <= 0.8


@settings(max_examples=200, deadline=None)
@given(
    st.lists(
        st.tuples(st.floats(0.05, 5.0), st.floats(0.0, 5.0)),
        min_size=1,
        max_size=6,
    ),
    st.integers(1, 4),
)
def test_gsp_properties(entries, slots):
    ids = [f"ad{i}" for i in range(len(entries))]
    req = AuctionRequest(0.0, "kw", [_p(i, bs) for i, (bs, _) in zip(ids, entries)], slot_count=slots)
    bids = {i: b for i, (_, b) in zip(ids, entries)}
    ranked = rank_ads(req, bids)
    scores = [s for _, s in ranked]
    assert scores == sorted(scores, reverse=True)
    assert len(ranked) <= slots
    bs = {i: e[0] for i, e in zip(ids, entries)}
    prices = price_slots(ranked, bs, 0.1, bids) if ranked else {}
    for ad, _ in ranked:
        # a winner never pays more than its bid, nor less than the reserve floor
        assert prices[ad] <= bids[ad] + 1e-12
        assert prices[ad] >= min(0.1 / bs[ad], bids[ad]) - 1e-12


def test_position_factor():
    assert position_factor(1) == 1.0
    assert position_factor(2) == pytest.approx(1 / 1.5)
    assert position_factor(3) == pytest.approx(0.5)


def test_response_degenerate():
    clicked, purchased, amount = response_from_uniforms(0.3, 0.3, 0.5, 0.0, 1.0, 10.0)
    assert not clicked and not purchased and amount == 0.0
    clicked, purchased, amount = response_from_uniforms(0.999, 0.999, 0.0, 1.0, 1.0, 10.0)
    assert clicked and purchased and amount > 0.0


def test_click_rate_monte_carlo():
    req = AuctionRequest(0.0, "kw", [_p("A", 1.0, ctr=0.5)])
    rng = np.random.default_rng(11)
    clicks = sum(simulate_response(req, [("A", 1.0)], {"A": 0.1}, rng).slots[0].clicked for _ in range(10_000))
    assert abs(clicks / 10_000 - 0.5) < 0.02


def test_click_rate_second_slot():
    req = AuctionRequest(0.0, "kw", [_p("A", 1.0, ctr=0.5), _p("B", 1.0, ctr=0.5)])
    rng = np.random.default_rng(12)
    n = 10_000
    clicks = sum(simulate_response(req, [("A", 2.0), ("B", 1.0)], {"A": 1, "B": 0.1}, rng).slots[1].clicked for _ in range(n))
    assert abs(clicks / n - 0.5 * position_factor(2)) < 0.02


def test_response_deterministic():
    req = AuctionRequest(0.0, "kw", [_p("A", 1.0), _p("B", 2.0)])
    a = run_auction(req, {"A": 1.0, "B": 1.0}, np.random.default_rng(5))
    b = run_auction(req, {"A": 1.0, "B": 1.0}, np.random.default_rng(5))
    assert a == b


def test_reserve_filters_low_scores():
    req = AuctionRequest(0.0, "kw", [_p("A", 1.0), _p("B", 1.0)])
    out = run_auction(req, {"A": 0.05, "B": 1.0}, np.random.default_rng(0), reserve=0.1)
    assert [s.ad_id for s in out.slots] == ["B"]
    assert "A" in out.losers


def test_last_winner_pays_first_loser():
    req = AuctionRequest(0.0, "kw", [_p("A", 1.0), _p("B", 1.0), _p("C", 1.0)], slot_count=2)
    out = run_auction(req, {"A": 3.0, "B": 2.0, "C": 0.5}, np.random.default_rng(0))
    assert out.for_ad("B").price_per_click == pytest.approx(0.5)
    assert out.for_ad("C") is None


def test_purchase_implies_positive_amount():
    u = np.linspace(0.0, 1.0 - 1e-12, 101)
    _, purchased, amount = response_from_uniforms(np.zeros_like(u), np.zeros_like(u), u, 1.0, 1.0, 5.0)
    assert purchased.all() and (amount > 0).all()


def test_ad_validation():
    with pytest.raises(AuctionInputError):
        Ad("a", [KeywordTuple("b", "kw", 1.0)], 10.0)
    with pytest.raises(AuctionInputError):
        Ad("a", [], 0.0)
    with pytest.raises(AuctionInputError):
        KeywordTuple("a", "kw", -1.0)
    ad = Ad("a", [KeywordTuple("a", "kw", 1.5)], 10.0)
    assert ad.preset("kw") == 1.5
