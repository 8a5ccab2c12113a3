from __future__ import annotations

from fractions import Fraction

import pytest
from hypothesis import given, settings, strategies as st

from consortium_bridge.errors import ContractError
from consortium_bridge.federation import (AUCTION_CONTRACT, OFFERINGS_CONTRACT, SCHEDULING_CONTRACT, PricingPolicy,
                                          SchedulingWindow, VmConfig, VmOffering, auction_commit, auction_contract,
                                          auction_reveal, auction_settle, auction_start, bid_commitment,
                                          catalog_price, contribution_proportions, fair_schedule,
                                          member_contribution, offerings_contract, provision_vm,
                                          scheduling_backlog, scheduling_contract)
from consortium_bridge.privchain import Ledger, PrivTx
from consortium_bridge.pubchain import ConsumerRequest

SMALL, BIG = VmConfig(2, 4, 50, "eu"), VmConfig(4, 8, 100, "eu")


def offering(cfg, k, price=10):
    return VmOffering(cfg, k, price)


def three_members():
    # vCPU capacity 50:30:20
    return {0: (offering(VmConfig(1, 2, 10, "eu"), 50),),
            1: (offering(VmConfig(1, 2, 10, "eu"), 30),),
            2: (offering(VmConfig(1, 2, 10, "eu"), 20),)}


def test_weighted_contribution():
    assert member_contribution([offering(BIG, 10), offering(SMALL, 5)]) == 50


def test_proportions_are_exact():
    table = contribution_proportions(three_members())
    assert [table.proportion(m) for m in range(3)] == [Fraction(1, 2), Fraction(3, 10), Fraction(1, 5)]


def test_empty_window_picks_largest_share():
    member, window = fair_schedule("r", contribution_proportions(three_members()), SchedulingWindow(30))
    assert member == 0 and window.entries == (0,)


def test_two_member_alternation():
    offers = {0: (offering(SMALL, 5),), 1: (offering(SMALL, 5),)}
    member, _ = fair_schedule("r", contribution_proportions(offers), SchedulingWindow(4, (0,)))
    assert member == 1


def test_window_evicts_oldest():
    w = SchedulingWindow(2, (0, 1)).push(2)
    assert w.entries == (1, 2)


def test_equal_shares_converge():
    offers = {m: (offering(SMALL, 4),) for m in range(3)}
    table = contribution_proportions(offers)
    window = SchedulingWindow(30)
    counts = [0, 0, 0]
    for i in range(10_000):
        m, window = fair_schedule(i, table, window)
        counts[m] += 1
        if i >= 300:
            for j in range(3):
                assert abs(window.share(j) - Fraction(1, 3)) <= Fraction(1, 30)
    for c in counts:
        assert abs(Fraction(c, 10_000) - Fraction(1, 3)) <= Fraction(1, 30)


def test_raising_quantity_shifts_proportions():
    before = contribution_proportions(three_members())
    raised = dict(three_members())
    raised[1] = (offering(VmConfig(1, 2, 10, "eu"), 40),)
    after = contribution_proportions(raised)
    assert after.proportion(1) > before.proportion(1)
    assert after.proportion(0) < before.proportion(0) and after.proportion(2) < before.proportion(2)


@settings(max_examples=50, deadline=None)
@given(k=st.lists(st.integers(1, 40), min_size=2, max_size=5), scale=st.integers(2, 9),
       history=st.lists(st.integers(0, 4), max_size=20))
def test_choice_invariant_under_contribution_scaling(k, scale, history):
    offers = {m: (offering(SMALL, q),) for m, q in enumerate(k)}
    scaled = {m: (offering(SMALL, q * scale),) for m, q in enumerate(k)}
    window = SchedulingWindow(20, tuple(h for h in history if h < len(k)))
    assert fair_schedule("r", contribution_proportions(offers), window)[0] == \
        fair_schedule("r", contribution_proportions(scaled), window)[0]


def test_pricing_policies():
    offers = {0: (offering(SMALL, 1, 10),), 1: (offering(SMALL, 2, 12),), 2: (offering(SMALL, 3, 15),)}
    assert catalog_price(SMALL, offers, PricingPolicy.PROFIT_MAX) == 16
    assert catalog_price(SMALL, offers, "user-friendly") == 11
    offers[0] = (offering(SMALL, 0, 10),)
    offers.pop(2)
    assert catalog_price(SMALL, offers, "user-friendly") == 13
    assert catalog_price(BIG, offers, "profit-max") is None


def request(i, cfg=SMALL):
    return ConsumerRequest(f"r{i}", b"\x03" * 32, cfg, 60)


def test_provision_decrements_stock():
    offers = {0: (offering(SMALL, 5),)}
    credential, updated = provision_vm(0, request(0), offers)
    assert updated[0][0].quantity == 4 and credential


def test_last_unit_goes_to_first_request():
    offers = {0: (offering(SMALL, 1),)}
    _, offers = provision_vm(0, request(0), offers)
    with pytest.raises(ContractError):
        provision_vm(0, request(1), offers)


# -- auction -----------------------------------------------------------------

def run_auction(bids, reveals=None, withhold=()):
    state = auction_start("a", 0, "gpu", deadline=100, reveal_window=50)
    reveals = reveals or {}
    for member, bid in bids.items():
        state = auction_commit(state, member, bid_commitment(bid, b"n%d" % member), 10)
    for member, bid in bids.items():
        if member not in withhold:
            state = auction_reveal(state, member, reveals.get(member, bid), b"n%d" % member, 120)
    return auction_settle(state, 150)


def test_lowest_bid_wins():
    result = run_auction({1: 8, 2: 9})
    assert (result.winner, result.winning_bid) == (1, 8)
    assert result.penalized == frozenset()


def test_changed_bid_is_penalized():
    result = run_auction({1: 8, 2: 9}, reveals={2: 5})
    assert result.winner == 1 and result.penalized == {2}


def test_no_reveals_no_winner():
    result = run_auction({1: 8, 2: 9}, withhold={1, 2})
    assert result.winner is None and result.penalized == {1, 2}


def test_phase_windows_enforced():
    state = auction_start("a", 0, "gpu", 100, 50)
    with pytest.raises(ContractError):
        auction_commit(state, 1, "h", 100)
    state = auction_commit(state, 1, bid_commitment(3, b"x"), 5)
    with pytest.raises(ContractError):
        auction_reveal(state, 1, 3, b"x", 50)
    with pytest.raises(ContractError):
        auction_settle(state, 120)


def test_auction_contract_uses_block_time():
    ledger = Ledger([auction_contract()])
    ledger.apply(PrivTx(0, AUCTION_CONTRACT, "start", ("a", "spec", 100, 50)), time=0)
    ledger.apply(PrivTx(1, AUCTION_CONTRACT, "commit", ("a", bid_commitment(7, b"k"))), time=10)
    late = ledger.apply(PrivTx(2, AUCTION_CONTRACT, "commit", ("a", bid_commitment(6, b"k"))), time=101)
    assert late.error
    ledger.apply(PrivTx(1, AUCTION_CONTRACT, "reveal", ("a", 7, b"k")), time=110)
    record = ledger.apply(PrivTx(0, AUCTION_CONTRACT, "settle", "a"), time=150)
    assert record.result == 1


# -- contracts --------------------------------------------------------------

def scheduling_ledger(digests, mode="order-execute"):
    from consortium_bridge.privchain import Contract
    dispatch = Contract("propagation", {}, {"dispatched": tuple(digests)})  # stand-in for the dispatched list
    return Ledger([dispatch, offerings_contract(3, three_members()), scheduling_contract(30, mode)])


def test_schedule_next_assigns_in_dispatch_order():
    ledger = scheduling_ledger(["d0", "d1", "d2"])
    results = [ledger.apply(PrivTx(m, SCHEDULING_CONTRACT, "schedule_next", nonce=i), 0).result
               for i, m in enumerate([2, 1, 0])]
    assert [a.request_digest for a in results] == ["d0", "d1", "d2"]
    assert [a.member for a in results] == [0, 1, 2]
    assert scheduling_backlog(ledger) == 0
    assert ledger.apply(PrivTx(0, SCHEDULING_CONTRACT, "schedule_next", nonce=9)).error


def test_catalog_update_needs_threshold():
    ledger = Ledger([offerings_contract(4, {m: (offering(SMALL, 2),) for m in range(4)})])
    update = (offering(SMALL, 6, 9),)
    rec = ledger.apply(PrivTx(3, OFFERINGS_CONTRACT, "propose_catalog", update))
    key = [k for k, _ in ledger.state(OFFERINGS_CONTRACT)["proposals"]][0]
    assert rec.result is False
    assert ledger.apply(PrivTx(0, OFFERINGS_CONTRACT, "endorse_catalog", key)).result is False
    assert ledger.apply(PrivTx(1, OFFERINGS_CONTRACT, "endorse_catalog", key)).result is True
    state = ledger.state(OFFERINGS_CONTRACT)
    assert state["table"].proportion(3) == Fraction(6, 12)
    assert len(state["catalog_digests"]) == 2
