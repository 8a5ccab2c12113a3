from __future__ import annotations

from fractions import Fraction

import pytest
from hypothesis import given, settings, strategies as st

from consortium_bridge.crypto import get_scheme
from consortium_bridge.errors import ContractError
from consortium_bridge.federation import VmConfig
from consortium_bridge.privchain import Ledger, PrivTx
from consortium_bridge.propagation import (CONTRACT_ID, EndorseArgs, EndorsementRecord, RecordStatus, add_endorsement,
                                           dispatch_ready, dispatched_requests, fault_bound, phantom_request,
                                           propagation_contract, records_of, request_digest, sign_endorsement,
                                           threshold_met)
from consortium_bridge.pubchain import ConsumerRequest, SequenceNumber

SCHEME = get_scheme("arithmetic")


def req(i):
    return ConsumerRequest(f"r{i}", b"\x02" * 32, VmConfig(1, 2, 10, "eu"), 30)


def keys(n):
    return [SCHEME.keygen(f"member-{i}") for i in range(n)]


def endorse(ledger, ks, member, request, seq, time=0):
    e = sign_endorsement(SCHEME, ks[member].secret, member, request_digest(request), seq)
    return ledger.apply(PrivTx(member, CONTRACT_ID, "endorse", EndorseArgs(e, request), nonce=hash((member, seq))),
                        time)


def test_threshold_examples():
    assert not threshold_met(2, 3) and threshold_met(3, 3)
    assert not threshold_met(4, 6) and threshold_met(5, 6)
    assert [fault_bound(n) for n in (1, 3, 4, 6, 7, 10)] == [0, 0, 1, 1, 2, 3]


@settings(max_examples=200)
@given(n=st.integers(1, 60), ec=st.integers(0, 60))
def test_threshold_matches_rational_comparison(n, ec):
    assert threshold_met(ec, n) == (Fraction(ec) > Fraction(2, 3) * n)


def test_three_members_approve_at_three():
    n, ks = 3, keys(3)
    ledger = Ledger([propagation_contract(n, SCHEME, [k.public for k in ks])])
    seq = SequenceNumber(4, 0)
    for m in range(3):
        record = endorse(ledger, ks, m, req(0), seq)
        assert record.ok
        stored = ledger.state(CONTRACT_ID)["r/" + request_digest(req(0))]
        assert stored.endorsement_count == m + 1
    assert stored.status is RecordStatus.DISPATCHED
    assert record.result[0].index == 0
    assert dispatched_requests(ledger.state(CONTRACT_ID)) == [req(0)]


def test_duplicate_vote_and_forged_signature_rejected():
    ks = keys(4)
    ledger = Ledger([propagation_contract(4, SCHEME, [k.public for k in ks])])
    seq = SequenceNumber(1, 0)
    assert endorse(ledger, ks, 0, req(0), seq).ok
    assert not endorse(ledger, ks, 0, req(0), seq).ok
    forged = sign_endorsement(SCHEME, ks[1].secret, 2, request_digest(req(0)), seq)  # claims member 2
    rec = ledger.apply(PrivTx(2, CONTRACT_ID, "endorse", EndorseArgs(forged, req(0))))
    assert rec.error and "signature" in rec.error
    wrong_submitter = sign_endorsement(SCHEME, ks[1].secret, 1, request_digest(req(0)), seq)
    rec = ledger.apply(PrivTx(3, CONTRACT_ID, "endorse", EndorseArgs(wrong_submitter, req(0))))
    assert rec.error and "signer" in rec.error


def test_later_approved_waits_for_earlier_pending():
    n, ks = 4, keys(4)
    ledger = Ledger([propagation_contract(n, SCHEME, [k.public for k in ks])])
    first, second = SequenceNumber(5, 0), SequenceNumber(5, 1)
    endorse(ledger, ks, 0, req(0), first)
    endorse(ledger, ks, 1, req(0), first)          # EC=2 > f=1: can still approve
    for m in range(3):
        rec = endorse(ledger, ks, m, req(1), second)
    assert rec.result == ()
    state = ledger.state(CONTRACT_ID)
    assert state["r/" + request_digest(req(1))].status is RecordStatus.APPROVED
    rec = endorse(ledger, ks, 2, req(0), first)
    assert [d.seq for d in rec.result] == [first, second]


def test_phantom_endorsement_never_approves_nor_blocks():
    n, ks = 4, keys(4)
    ledger = Ledger([propagation_contract(n, SCHEME, [k.public for k in ks])])
    phantom = phantom_request(req(0))
    endorse(ledger, ks, 3, phantom, SequenceNumber(1, 0))
    for m in range(3):
        rec = endorse(ledger, ks, m, req(1), SequenceNumber(2, 0))
    assert [d.request_digest for d in rec.result] == [request_digest(req(1))]
    state = ledger.state(CONTRACT_ID)
    assert state["r/" + request_digest(phantom)].status is RecordStatus.PENDING
    assert phantom not in dispatched_requests(state)


def test_two_endorse_invalid_of_four_cannot_commit_phantom():
    n, ks = 4, keys(4)
    ledger = Ledger([propagation_contract(n, SCHEME, [k.public for k in ks])])
    phantom = phantom_request(req(0))
    for m in (2, 3):
        endorse(ledger, ks, m, phantom, SequenceNumber(1, 0))
    assert ledger.state(CONTRACT_ID)["dispatched"] == ()


def test_records_approved_after_dispatch_point_become_stale():
    votes = tuple(sign_endorsement(SCHEME, k.secret, i, "a", SequenceNumber(1, 0)) for i, k in enumerate(keys(3)))
    r_early = EndorsementRecord("a", req(0), votes, RecordStatus.APPROVED)
    ready, stale = dispatch_ready([r_early], 3, SequenceNumber(2, 0))
    assert ready == [] and stale == [r_early]


def test_majority_sequence_number_wins():
    ks = keys(4)
    rec = None
    for i, seq in enumerate([SequenceNumber(1, 1), SequenceNumber(1, 0), SequenceNumber(1, 0), SequenceNumber(1, 0)]):
        e = sign_endorsement(SCHEME, ks[i].secret, i, "d", seq)
        rec = add_endorsement(rec, e, req(0), 4)
    assert rec.seq == SequenceNumber(1, 0) and rec.endorsers == (1, 2, 3)
    assert rec.status is RecordStatus.APPROVED
    with pytest.raises(ContractError):
        add_endorsement(rec, sign_endorsement(SCHEME, ks[0].secret, 0, "d", SequenceNumber(1, 0)), req(0), 4)


@settings(max_examples=40, deadline=None)
@given(data=st.data())
def test_dispatch_is_monotone_in_sequence_order(data):
    n = 4
    ks = keys(n)
    ledger = Ledger([propagation_contract(n, SCHEME, [k.public for k in ks])])
    count = data.draw(st.integers(1, 6))
    events = [(m, i) for i in range(count) for m in range(n - 1)]
    order = data.draw(st.permutations(events))
    # honest members endorse in public order; interleave members arbitrarily but keep per-member order
    per_member = {m: [i for mm, i in sorted(order, key=lambda e: e[1]) if mm == m] for m in range(n - 1)}
    picks = data.draw(st.lists(st.integers(0, n - 2), min_size=len(events), max_size=len(events)))
    seen = []
    for p in picks:
        m = p
        while not per_member[m]:
            m = (m + 1) % (n - 1)
        i = per_member[m].pop(0)
        rec = endorse(ledger, ks, m, req(i), SequenceNumber(1, i))
        seen.extend(d.seq.offset for d in rec.result)
    assert seen == list(range(count))
    assert all(r.status is RecordStatus.DISPATCHED for r in records_of(ledger.state(CONTRACT_ID)))
