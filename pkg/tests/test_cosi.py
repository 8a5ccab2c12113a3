from __future__ import annotations

import pytest

from consortium_bridge.cosi import (CollectionPath, CollectionSimulation, PrivateEnvelope, PublicEnvelope,
                                    RejectReason, build_tree, client_verify, collection_latency, decode_envelope,
                                    make_private_envelope, make_public_envelope, non_cooperators, payload_digest,
                                    sign_directly)
from consortium_bridge.crypto import Bitmap, consumer_keygen, decrypt, encrypt_for, get_scheme
from consortium_bridge.errors import ArgumentError
from consortium_bridge.netsim import DelayModel

SCHEME = get_scheme("arithmetic")
KEYS = [SCHEME.keygen(f"member-{i}") for i in range(4)]
PUBS = [k.public for k in KEYS]

# depth of a complete M-ary tree over 32 nodes, counted by hand:
# M=1 chain; M=2 levels 1,2,4,8,16 (+1 leaf) -> 5; M=4 1,4,16 (+11) -> 3; M>=6 two levels except the star
DEPTHS_32 = {1: 31, 2: 5, 4: 3, 6: 2, 8: 2, 16: 2, 31: 1}


@pytest.mark.parametrize("arity,depth", sorted(DEPTHS_32.items()))
def test_tree_depths_for_32_members(arity, depth):
    assert build_tree(32, arity).depth == depth


def test_tree_structure_and_bounds():
    tree = build_tree(7, 2, root=3)
    assert tree.root == 3 and tree.parent(3) is None
    assert sorted(tree.subtree(3)) == list(range(7))
    for node in tree.order[1:]:
        assert node in tree.children(tree.parent(node))
    with pytest.raises(ArgumentError):
        build_tree(4, 4)
    with pytest.raises(ArgumentError):
        build_tree(4, 0)


@pytest.mark.parametrize("arity", [1, 2, 4, 31])
def test_fault_free_latency_is_round_trip_depth(arity):
    latency = collection_latency(32, arity, 400)
    assert latency == 2 * DEPTHS_32[arity] * 400


def test_one_silent_member_excluded_but_offchain_succeeds():
    sim = CollectionSimulation(4, 3, DelayModel(50), faults={2: "silent"})
    outcome = sim.run()
    assert outcome.result.success and outcome.result.path is CollectionPath.OFFCHAIN
    assert outcome.result.bitmap.members() == [0, 1, 3]
    assert not outcome.fallback_used


def test_chain_topology_with_silent_member_uses_fallback():
    sim = CollectionSimulation(4, 1, DelayModel(50), faults={1: "silent"})
    outcome = sim.run()
    assert outcome.fallback_used
    assert outcome.result.path is CollectionPath.ONCHAIN
    assert outcome.result.bitmap.members() == [0, 2, 3]
    assert outcome.non_cooperators == (1,)


def test_equivocating_member_is_excluded():
    sim = CollectionSimulation(4, 3, DelayModel(50), faults={2: "equivocate"})
    outcome = sim.run()
    assert outcome.result.success
    assert 2 not in outcome.result.bitmap.members()
    assert outcome.exclusions == (2,)


def test_two_silent_of_four_cannot_complete():
    sim = CollectionSimulation(4, 1, DelayModel(50), faults={1: "silent", 2: "silent"})
    outcome = sim.run(horizon=60_000)
    assert outcome.result is None or not outcome.result.success
    assert sim.net.assumption_violated


def test_non_cooperators_helper():
    assert non_cooperators(4, Bitmap.of(4, [0]), [2, 3]) == [1]
    assert non_cooperators(3, None, []) == [0, 1, 2]


# -- envelopes and client verification -----------------------------------------

def public_env(signers=(0, 1, 2)):
    info = b'{"catalog":[]}'
    return make_public_envelope(info, sign_directly(SCHEME, KEYS, info, signers), 4)


def test_valid_envelopes_accepted():
    assert client_verify(public_env(), PUBS, 4, SCHEME)
    assert client_verify(public_env().to_bytes(), PUBS, 4, SCHEME)


def test_envelope_roundtrip():
    env = public_env()
    assert decode_envelope(env.to_bytes()) == env


def test_threshold_enforced_at_construction_and_client():
    info = b"x"
    with pytest.raises(ArgumentError):
        make_public_envelope(info, sign_directly(SCHEME, KEYS, info, [0, 1]), 4)
    weak = PublicEnvelope(info, payload_digest(info), Bitmap.of(4, [0]),
                          sign_directly(SCHEME, KEYS, info, [0]).value)
    assert client_verify(weak, PUBS, 4, SCHEME).reason is RejectReason.THRESHOLD


def test_tampered_payload_rejected():
    env = public_env()
    tampered = PublicEnvelope(env.info + b" ", env.digest, env.bitmap, env.aggregate)
    assert client_verify(tampered, PUBS, 4, SCHEME).reason is RejectReason.DIGEST_MISMATCH


def test_mismatched_bitmap_rejected():
    env = public_env((0, 1, 2))
    swapped = PublicEnvelope(env.info, env.digest, Bitmap.of(4, [0, 1, 3]), env.aggregate)
    assert client_verify(swapped, PUBS, 4, SCHEME).reason is RejectReason.SIGNATURE
    short = PublicEnvelope(env.info, env.digest, Bitmap.of(3, [0, 1, 2]), env.aggregate)
    assert client_verify(short, PUBS, 4, SCHEME).reason is RejectReason.BITMAP_SIZE


def test_impersonator_with_one_signature_rejected():
    info = b"fake catalog"
    agg = sign_directly(SCHEME, KEYS, info, [3])
    env = PublicEnvelope(info, payload_digest(info), agg.bitmap, agg.value)
    assert client_verify(env, PUBS, 4, SCHEME).reason is RejectReason.THRESHOLD


def test_private_envelope_only_recipient_decrypts():
    alice, bob = consumer_keygen("alice"), consumer_keygen("bob")
    cipher = encrypt_for(alice.public, b"vm credentials", b"s")
    env = make_private_envelope(cipher, sign_directly(SCHEME, KEYS, cipher.to_bytes()), 4)
    assert isinstance(decode_envelope(env.to_bytes()), PrivateEnvelope)
    assert client_verify(env, PUBS, 4, SCHEME)
    assert env.recipient == alice.public
    assert decrypt(alice.secret, env.ciphertext) == b"vm credentials"
    with pytest.raises(Exception):
        decrypt(bob.secret, env.ciphertext)


def test_garbage_is_malformed():
    assert client_verify(b"", PUBS, 4, SCHEME).reason is RejectReason.MALFORMED
    assert client_verify(b"Zabc", PUBS, 4, SCHEME).reason is RejectReason.MALFORMED
