"""Endorsement of finalized public-chain requests by the consortium.

Every member that observes a finalized consumer request submits a signed
endorsement to the propagation contract on the private chain. The record for
a request is approved once more than two thirds of the members endorsed it
with the same sequence number, and approved requests are dispatched strictly
in (block_number, offset) order.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, replace
from enum import Enum
from typing import Callable, Mapping, Optional, Sequence

from .crypto import Signature, SignatureScheme
from .encoding import canonical, hexdigest
from .errors import ContractError
from .netsim import FaultBehavior, NodeId
from .privchain import Contract, ExecMode, Replica
from .pubchain import ConsumerRequest, FinalizedTx, PublicChain, PublicTx, SequenceNumber, TxKind

logger = logging.getLogger(__name__)

CONTRACT_ID = "propagation"
_RECORD = "r/"


class RecordStatus(str, Enum):
    PENDING = "pending"
    APPROVED = "approved"
    DISPATCHED = "dispatched"
    STALE = "stale"


def threshold_met(count: int, n: int) -> bool:
    """Strictly more than two thirds, in integer arithmetic."""
    return 3 * count > 2 * n


def fault_bound(n: int) -> int:
    return (n - 1) // 3


def request_digest(request: ConsumerRequest) -> str:
    return hexdigest(request)


def endorsement_message(digest: str, seq: SequenceNumber) -> bytes:
    return canonical(("endorsement", digest, seq))


@dataclass(frozen=True)
class SignedEndorsement:
    member: NodeId
    request_digest: str
    seq: SequenceNumber
    signature: Signature


def sign_endorsement(scheme: SignatureScheme, secret: int, member: NodeId, digest: str,
                     seq: SequenceNumber) -> SignedEndorsement:
    return SignedEndorsement(member, digest, seq, scheme.sign(secret, endorsement_message(digest, seq)))


@dataclass(frozen=True)
class EndorsementRecord:
    request_digest: str
    request: ConsumerRequest
    votes: tuple[SignedEndorsement, ...] = ()
    status: RecordStatus = RecordStatus.PENDING
    dispatch_index: Optional[int] = None

    @property
    def seq(self) -> SequenceNumber:
        """The sequence number carried by the largest group of endorsers (first seen on ties)."""
        counts: dict[SequenceNumber, int] = {}
        for v in self.votes:
            counts[v.seq] = counts.get(v.seq, 0) + 1
        best = max(counts.values())
        return next(s for s, c in counts.items() if c == best)

    @property
    def endorsers(self) -> tuple[NodeId, ...]:
        seq = self.seq
        return tuple(sorted(v.member for v in self.votes if v.seq == seq))

    @property
    def endorsement_count(self) -> int:
        return len(self.endorsers)

    def has_voted(self, member: NodeId) -> bool:
        return any(v.member == member for v in self.votes)


def check_commit(record: EndorsementRecord, n: int) -> EndorsementRecord:
    if record.status is RecordStatus.PENDING and threshold_met(record.endorsement_count, n):
        return replace(record, status=RecordStatus.APPROVED)
    return record


def add_endorsement(record: Optional[EndorsementRecord], endorsement: SignedEndorsement,
                    request: ConsumerRequest, n: int) -> EndorsementRecord:
    """Create or extend a record; a second vote from the same member is refused."""
    if record is None:
        record = EndorsementRecord(endorsement.request_digest, request)
    elif record.has_voted(endorsement.member):
        raise ContractError(f"member {endorsement.member} already endorsed {endorsement.request_digest[:12]}")
    return check_commit(replace(record, votes=record.votes + (endorsement,)), n)


def dispatch_ready(records: Sequence[EndorsementRecord], n: int,
                   last: Optional[SequenceNumber]) -> tuple[list[EndorsementRecord], list[EndorsementRecord]]:
    """Approved records that can be dispatched now, plus records that became stale.

    The smallest approved record is held back while an earlier-sequenced
    pending record has more than ``fault_bound(n)`` endorsements: such a
    record has at least one correct endorser and will eventually approve.
    Records endorsed by at most ``fault_bound(n)`` members never block, so
    phantom requests from faulty members cannot stall dispatch.
    """
    f = fault_bound(n)
    approved = sorted((r for r in records if r.status is RecordStatus.APPROVED),
                      key=lambda r: (r.seq, r.request_digest))
    blockers = [r.seq for r in records if r.status is RecordStatus.PENDING and r.endorsement_count > f]
    ready, stale = [], []
    for r in approved:
        if last is not None and r.seq <= last:
            stale.append(r)
            continue
        if any(b < r.seq for b in blockers):
            break
        ready.append(r)
        last = r.seq
    return ready, stale


@dataclass(frozen=True)
class EndorseArgs:
    endorsement: SignedEndorsement
    request: ConsumerRequest


@dataclass(frozen=True)
class Dispatch:
    index: int
    request_digest: str
    seq: SequenceNumber


def propagation_contract(n: int, scheme: SignatureScheme, member_keys: Sequence[bytes]) -> Contract:
    """Contract holding endorsement records and the dispatched sequence."""

    def endorse(state, args: EndorseArgs, ctx):
        e = args.endorsement
        if e.member != ctx.submitter:
            raise ContractError("endorsement must be submitted by its signer")
        if e.request_digest != request_digest(args.request):
            raise ContractError("request digest mismatch")
        if not scheme.verify(member_keys[e.member], endorsement_message(e.request_digest, e.seq), e.signature):
            raise ContractError("endorsement signature does not verify")
        key = _RECORD + e.request_digest
        state[key] = add_endorsement(state.get(key), e, args.request, n)
        records = [v for k, v in state.items() if k.startswith(_RECORD)]
        ready, stale = dispatch_ready(records, n, state["last_seq"])
        out = []
        for r in stale:
            state[_RECORD + r.request_digest] = replace(r, status=RecordStatus.STALE)
        for r in ready:
            index = len(state["dispatched"])
            state[_RECORD + r.request_digest] = replace(r, status=RecordStatus.DISPATCHED, dispatch_index=index)
            state["dispatched"] = state["dispatched"] + (r.request_digest,)
            state["last_seq"] = r.seq
            out.append(Dispatch(index, r.request_digest, r.seq))
        return tuple(out)

    return Contract(CONTRACT_ID, {"endorse": endorse},
                    {"dispatched": (), "last_seq": None}, ExecMode.ORDER_EXECUTE)


def records_of(state: Mapping) -> list[EndorsementRecord]:
    return [v for k, v in sorted(state.items()) if k.startswith(_RECORD)]


def dispatched_requests(state: Mapping) -> list[ConsumerRequest]:
    return [state[_RECORD + d].request for d in state["dispatched"]]


def phantom_request(template: ConsumerRequest) -> ConsumerRequest:
    """A request that was never submitted to the public chain."""
    return replace(template, request_id=f"phantom:{template.request_id}")


class Endorser:
    """Member-side listener turning finalized public events into endorsements."""

    def __init__(self, replica: Replica, chain: PublicChain, scheme: SignatureScheme, secret: int):
        self.replica = replica
        self.chain = chain
        self.scheme = scheme
        self.secret = secret
        self.phantom_sent = False
        self.endorsed: list[SequenceNumber] = []
        replica.process.route(FinalizedTx, self._on_finalized)
        self._listeners: list[Callable[[FinalizedTx], None]] = []

    def on_event(self, listener: Callable[[FinalizedTx], None]) -> None:
        self._listeners.append(listener)

    @property
    def member(self) -> NodeId:
        return self.replica.node_id

    def _on_finalized(self, _src: NodeId, event: FinalizedTx) -> None:
        for listener in self._listeners:
            listener(event)
        if event.tx.kind is TxKind.REQUEST:
            self.on_public_event(event.tx.payload, event.seq)

    def on_public_event(self, request: ConsumerRequest, seq: SequenceNumber) -> None:
        behavior = self.replica.process.behavior
        if behavior is FaultBehavior.SILENT:
            return
        if behavior is FaultBehavior.ENDORSE_INVALID:
            # withhold genuine endorsements, push one phantom instead
            if not self.phantom_sent:
                self.phantom_sent = True
                fake = phantom_request(request)
                self._submit(fake, SequenceNumber(seq.block_number, seq.offset))
            return
        if not self.chain.is_finalized(PublicTx(TxKind.REQUEST, request), seq):
            logger.warning("member %s: %s not found at %s on the canonical chain", self.member,
                           request.request_id, seq)
            return
        if behavior is FaultBehavior.EQUIVOCATE:
            seq = SequenceNumber(seq.block_number, seq.offset + 1)
        self._submit(request, seq)

    def _submit(self, request: ConsumerRequest, seq: SequenceNumber) -> None:
        digest = request_digest(request)
        endorsement = sign_endorsement(self.scheme, self.secret, self.member, digest, seq)
        self.endorsed.append(seq)
        self.replica.submit(CONTRACT_ID, "endorse", EndorseArgs(endorsement, request))

