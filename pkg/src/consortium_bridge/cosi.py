"""Collective signing of consortium responses.

Signatures are gathered off-chain over a complete M-ary tree rooted at the
member that proposed the message: requests flow down, partial aggregates flow
up, and every hop verifies its children's partials before multiplying them
in. If the root's deadline passes without a two-thirds quorum, a signature
collection contract on the private chain takes over, and members that signed
on neither path are reported as non-cooperators.

The resulting aggregate is wrapped in a public or private envelope, posted on
the public chain, and checked by consumer clients with ``client_verify``.
"""
from __future__ import annotations

import hashlib
import json
import logging
from dataclasses import dataclass, field
from enum import Enum
from typing import Callable, Mapping, Optional, Sequence, Union

from .crypto import AggregateSignature, Bitmap, CipherEnvelope, KeyPair, Signature, SignatureScheme, get_scheme
from .crypto.envelope import decrypt
from .encoding import length_prefixed, split_length_prefixed
from .errors import ArgumentError, ContractError, DecodeError, DecryptionError
from .netsim import DelayModel, FaultBehavior, Network, NodeId, Process
from .privchain import CommitRecord, Contract, ExecMode, PrivateChain, PrivBlock, Replica
from .propagation import threshold_met
from .pubchain import FinalizedTx, TxKind

logger = logging.getLogger(__name__)

FALLBACK_CONTRACT = "signature-collection"


def payload_digest(payload: bytes) -> bytes:
    return hashlib.sha256(bytes(payload)).digest()


# -- tree -------------------------------------------------------------------

@dataclass(frozen=True)
class CollectionTree:
    arity: int
    root: NodeId
    order: tuple[NodeId, ...]

    def _index(self, node: NodeId) -> int:
        return self.order.index(node)

    def parent(self, node: NodeId) -> Optional[NodeId]:
        i = self._index(node)
        return None if i == 0 else self.order[(i - 1) // self.arity]

    def children(self, node: NodeId) -> tuple[NodeId, ...]:
        i = self._index(node)
        first = i * self.arity + 1
        return self.order[first:first + self.arity]

    def level(self, node: NodeId) -> int:
        i, level = self._index(node), 0
        while i:
            i = (i - 1) // self.arity
            level += 1
        return level

    @property
    def depth(self) -> int:
        return self.level(self.order[-1])

    def subtree(self, node: NodeId) -> list[NodeId]:
        out, frontier = [], [node]
        while frontier:
            out.extend(frontier)
            frontier = [c for f in frontier for c in self.children(f)]
        return out


def build_tree(members: int, arity: int, root: NodeId = 0) -> CollectionTree:
    """Complete M-ary tree, breadth-first by ordinal with ``root`` first."""
    if not 0 <= root < members:
        raise ArgumentError(f"root {root} is not one of {members} members")
    if not 1 <= arity <= members - 1:
        raise ArgumentError(f"arity must lie in 1..{members - 1}, got {arity}")
    order = (root,) + tuple(m for m in range(members) if m != root)
    return CollectionTree(arity, root, order)


def default_timeout(tree: CollectionTree, delta_bound: int) -> int:
    return 4 * max(tree.depth, 1) * delta_bound


# -- results and messages -----------------------------------------------------

class CollectionPath(str, Enum):
    OFFCHAIN = "offchain"
    ONCHAIN = "onchain"


@dataclass(frozen=True)
class CollectionResult:
    payload_digest: bytes
    aggregate: Optional[AggregateSignature]
    success: bool
    path: CollectionPath
    started_at: int
    finished_at: int
    offchain_bitmap: Optional[Bitmap] = None

    @property
    def bitmap(self) -> Optional[Bitmap]:
        return self.aggregate.bitmap if self.aggregate else None

    @property
    def latency(self) -> int:
        return self.finished_at - self.started_at


@dataclass(frozen=True)
class SigningRequest:
    payload_digest: bytes
    root: NodeId
    arity: int
    reply_by: int


@dataclass(frozen=True)
class SigningResponse:
    payload_digest: bytes
    partial: AggregateSignature


@dataclass(frozen=True)
class _Deadline:
    payload_digest: bytes


@dataclass(frozen=True)
class _Flush:
    payload_digest: bytes


@dataclass
class _Session:
    request: SigningRequest
    tree: CollectionTree
    parent: Optional[NodeId]
    waiting: set[NodeId]
    own: Optional[Signature] = None
    partials: list[AggregateSignature] = field(default_factory=list)
    excluded: list[NodeId] = field(default_factory=list)
    replied: bool = False
    flushing: bool = False
    started_at: int = 0


# -- fallback contract ----------------------------------------------------------

@dataclass(frozen=True)
class FallbackRecord:
    payload_digest: bytes
    opened_by: NodeId
    offchain: Bitmap
    signatures: tuple[tuple[NodeId, Signature], ...] = ()

    @property
    def signers(self) -> list[NodeId]:
        return [m for m, _ in self.signatures]


def signature_collection_contract(n: int, scheme: SignatureScheme, member_keys: Sequence[bytes]) -> Contract:
    """On-chain signature gathering, used when off-chain collection times out.

    Signatures keep being accepted after the quorum is reached so that late
    cooperators are not reported.
    """

    def open_(state, args, ctx):
        digest, offchain = args
        key = digest.hex()
        if key in state:
            raise ContractError("collection already open")
        state[key] = FallbackRecord(digest, ctx.submitter, offchain)
        return key

    def sign(state, args, ctx):
        digest, signature = args
        record = state.get(digest.hex())
        if record is None:
            raise ContractError("no open collection for digest")
        if ctx.submitter in record.signers:
            raise ContractError("member already signed")
        if not scheme.verify(member_keys[ctx.submitter], digest, signature):
            raise ContractError("signature does not verify")
        before = threshold_met(len(record.signatures), n)
        record = FallbackRecord(record.payload_digest, record.opened_by, record.offchain,
                                record.signatures + ((ctx.submitter, signature),))
        state[digest.hex()] = record
        return (not before) and threshold_met(len(record.signatures), n)

    return Contract(FALLBACK_CONTRACT, {"open": open_, "sign": sign}, {}, ExecMode.ORDER_EXECUTE)


def fallback_aggregate(scheme: SignatureScheme, record: FallbackRecord, n: int) -> AggregateSignature:
    ordered = sorted(record.signatures, key=lambda p: p[0])
    return scheme.aggregate([s for _, s in ordered], Bitmap.of(n, [m for m, _ in ordered]))


def non_cooperators(n: int, offchain: Optional[Bitmap], onchain_signers: Sequence[NodeId]) -> list[NodeId]:
    signed = set(onchain_signers) | set(offchain.members() if offchain else ())
    return [m for m in range(n) if m not in signed]


# -- member-side protocol -------------------------------------------------------

ResultCallback = Callable[[CollectionResult], None]


class CosiMember:
    """Collective-signing behavior of one consortium member."""

    def __init__(self, process: Process, n: int, keypair: KeyPair, scheme: SignatureScheme,
                 member_keys: Sequence[bytes], *, delta_bound: int,
                 is_committed: Callable[[bytes], bool] = lambda digest: True,
                 replica: Optional[Replica] = None, compute_cost_per_child: int = 0):
        self.process = process
        self.n = n
        self.keypair = keypair
        self.scheme = scheme
        self.member_keys = list(member_keys)
        self.delta_bound = delta_bound
        self.is_committed = is_committed
        self.replica = replica
        self.compute_cost_per_child = compute_cost_per_child
        self.sessions: dict[bytes, _Session] = {}
        self.results: dict[bytes, CollectionResult] = {}
        self.exclusions: list[tuple[bytes, NodeId]] = []
        self.fallbacks_opened = 0
        self._deferred: list[tuple[NodeId, SigningRequest]] = []
        self._callbacks: dict[bytes, ResultCallback] = {}
        self._offchain: dict[bytes, CollectionResult] = {}
        process.route(SigningRequest, self._on_request)
        process.route(SigningResponse, self._on_response)
        process.route_timer(_Deadline, self._on_deadline)
        process.route_timer(_Flush, lambda p: self._flush(p.payload_digest))
        if replica is not None:
            replica.on_commit(self._on_commit)

    @property
    def member(self) -> NodeId:
        return self.process.node_id

    @property
    def now(self) -> int:
        return self.process.net.now

    def _own_signature(self, digest: bytes) -> Signature:
        if self.process.behavior is FaultBehavior.EQUIVOCATE:
            return self.scheme.sign(self.keypair.secret, digest + b"|equivocated")
        return self.scheme.sign(self.keypair.secret, digest)

    # root ----------------------------------------------------------------
    def collect_offchain(self, digest: bytes, arity: int, timeout: Optional[int] = None,
                         on_done: Optional[ResultCallback] = None) -> None:
        """Start collection as tree root; ``on_done`` receives the final result."""
        if not self.is_committed(digest):
            raise ArgumentError("message must be committed on the private chain before signing")
        tree = build_tree(self.n, arity, self.member)
        timeout = default_timeout(tree, self.delta_bound) if timeout is None else timeout
        request = SigningRequest(digest, self.member, arity, self.now + timeout)
        if on_done is not None:
            self._callbacks[digest] = on_done
        self._begin(request, None, tree)
        self.process.set_timer(timeout, _Deadline(digest))

    def _begin(self, request: SigningRequest, parent: Optional[NodeId], tree: CollectionTree) -> None:
        children = tree.children(self.member)
        session = _Session(request, tree, parent, set(children), started_at=self.now)
        session.own = self._own_signature(request.payload_digest)
        self.sessions[request.payload_digest] = session
        child_deadline = request.reply_by - self.delta_bound
        for c in children:
            self.process.send(c, SigningRequest(request.payload_digest, request.root, request.arity, child_deadline))
        if not children:
            self._flush(request.payload_digest)
        elif parent is not None:
            self.process.net.at(self.member, request.reply_by, _Deadline(request.payload_digest))

    # inner nodes -----------------------------------------------------------
    def _on_request(self, src: NodeId, request: SigningRequest) -> None:
        if self.process.silent or request.payload_digest in self.sessions:
            return
        tree = build_tree(self.n, request.arity, request.root)
        if tree.parent(self.member) != src:
            return
        if not self.is_committed(request.payload_digest):
            self._deferred.append((src, request))
            return
        self._begin(request, src, tree)

    def _on_response(self, src: NodeId, response: SigningResponse) -> None:
        session = self.sessions.get(response.payload_digest)
        if session is None or src not in session.waiting or session.replied:
            return
        session.waiting.discard(src)
        partial = response.partial
        allowed = set(session.tree.subtree(src))
        valid = (partial.bitmap.size == self.n
                 and set(partial.bitmap.members()) <= allowed
                 and self._verify_partial(response.payload_digest, partial))
        if valid:
            session.partials.append(partial)
        else:
            session.excluded.append(src)
            self.exclusions.append((response.payload_digest, src))
        if not session.waiting:
            self._schedule_flush(session)

    def _verify_partial(self, digest: bytes, partial: AggregateSignature) -> bool:
        try:
            key = self.scheme.aggregate_pubkeys(partial.bitmap, self.member_keys)
            return self.scheme.verify_aggregate(key, digest, partial)
        except (DecodeError, ArgumentError):
            return False

    def _schedule_flush(self, session: _Session) -> None:
        if session.flushing:
            return
        session.flushing = True
        cost = self.compute_cost_per_child * len(session.partials)
        if cost:
            self.process.set_timer(cost, _Flush(session.request.payload_digest))
        else:
            self._flush(session.request.payload_digest)

    def _on_deadline(self, payload: _Deadline) -> None:
        session = self.sessions.get(payload.payload_digest)
        if session is None or session.replied:
            return
        session.waiting.clear()
        self._flush(payload.payload_digest, deadline=True)

    def _flush(self, digest: bytes, deadline: bool = False) -> None:
        session = self.sessions[digest]
        if session.replied:
            return
        session.replied = True
        own = self.scheme.aggregate([session.own], Bitmap.of(self.n, [self.member]))
        combined = self.scheme.combine(own, *session.partials)
        if session.parent is not None:
            self.process.send(session.parent, SigningResponse(digest, combined))
            return
        self._root_done(session, combined)

    def _root_done(self, session: _Session, combined: AggregateSignature) -> None:
        digest = session.request.payload_digest
        # the root's own signature is checked too, so an equivocating root fails honestly
        key = self.scheme.aggregate_pubkeys(combined.bitmap, self.member_keys)
        ok = threshold_met(combined.bitmap.popcount, self.n) and self.scheme.verify_aggregate(key, digest, combined)
        result = CollectionResult(digest, combined if ok else None, ok, CollectionPath.OFFCHAIN,
                                  session.started_at, self.now, combined.bitmap)
        self._offchain[digest] = result
        if ok or self.replica is None:
            self._finish(result)
            return
        self.fallbacks_opened += 1
        logger.info("member %s: off-chain collection for %s fell short (%d signers); opening fallback",
                    self.member, digest.hex()[:12], combined.bitmap.popcount)
        self.replica.submit(FALLBACK_CONTRACT, "open", (digest, combined.bitmap))

    def _finish(self, result: CollectionResult) -> None:
        self.results[result.payload_digest] = result
        callback = self._callbacks.pop(result.payload_digest, None)
        if callback is not None:
            callback(result)

    # private-chain hooks ------------------------------------------------------
    def notify_committed(self) -> None:
        """Release signing requests that were waiting for a local commit."""
        pending, self._deferred = self._deferred, []
        for src, request in pending:
            self._on_request(src, request)

    def _on_commit(self, record: CommitRecord, block: PrivBlock) -> None:
        if self._deferred:
            self.notify_committed()
        tx = record.tx
        if tx.contract_id != FALLBACK_CONTRACT or not record.ok:
            return
        if tx.procedure == "open":
            digest = tx.args[0]
            if not self.process.silent:
                self.replica.submit(FALLBACK_CONTRACT, "sign", (digest, self._own_signature(digest)))
        elif tx.procedure == "sign" and record.result:
            digest = tx.args[0]
            state = self.replica.ledger.query_state(FALLBACK_CONTRACT)
            fb = state[digest.hex()]
            if fb.opened_by != self.member or digest in self.results:
                return
            offchain = self._offchain[digest]
            aggregate = fallback_aggregate(self.scheme, fb, self.n)
            self._finish(CollectionResult(digest, aggregate, True, CollectionPath.ONCHAIN,
                                          offchain.started_at, self.now, offchain.offchain_bitmap))

    def non_cooperators(self, digest: bytes) -> list[NodeId]:
        """Members that signed neither off-chain nor on-chain (as seen by this root)."""
        offchain = self._offchain.get(digest)
        signers: list[NodeId] = []
        if self.replica is not None:
            record = self.replica.ledger.query_state(FALLBACK_CONTRACT).get(digest.hex())
            if record is not None:
                signers = record.signers
        return non_cooperators(self.n, offchain.offchain_bitmap if offchain else None, signers)


# -- envelopes --------------------------------------------------------------------

_PUBLIC_TAG = b"P"
_PRIVATE_TAG = b"V"


@dataclass(frozen=True)
class PublicEnvelope:
    info: bytes
    digest: bytes
    bitmap: Bitmap
    aggregate: bytes

    @property
    def payload(self) -> bytes:
        return self.info

    def signature(self) -> AggregateSignature:
        return AggregateSignature(self.bitmap, self.aggregate)

    def to_bytes(self) -> bytes:
        return _PUBLIC_TAG + length_prefixed(self.info, self.digest, self.bitmap.to_bytes(), self.aggregate)


@dataclass(frozen=True)
class PrivateEnvelope:
    ciphertext: bytes
    digest: bytes
    bitmap: Bitmap
    aggregate: bytes

    @property
    def payload(self) -> bytes:
        return self.ciphertext

    @property
    def recipient(self) -> bytes:
        return CipherEnvelope.from_bytes(self.ciphertext).recipient

    def signature(self) -> AggregateSignature:
        return AggregateSignature(self.bitmap, self.aggregate)

    def to_bytes(self) -> bytes:
        return _PRIVATE_TAG + length_prefixed(self.ciphertext, self.digest, self.bitmap.to_bytes(), self.aggregate)


Envelope = Union[PublicEnvelope, PrivateEnvelope]


def decode_envelope(data: bytes) -> Envelope:
    data = bytes(data)
    if not data or data[:1] not in (_PUBLIC_TAG, _PRIVATE_TAG):
        raise DecodeError("unknown envelope tag")
    try:
        payload, digest, bitmap, aggregate = split_length_prefixed(data[1:], 4)
    except ValueError as exc:
        raise DecodeError(f"malformed envelope: {exc}") from exc
    bits = Bitmap.from_bytes(bitmap)
    if len(digest) != 32:
        raise DecodeError("digest must be 32 bytes")
    if data[:1] == _PUBLIC_TAG:
        return PublicEnvelope(payload, digest, bits, aggregate)
    CipherEnvelope.from_bytes(payload)
    return PrivateEnvelope(payload, digest, bits, aggregate)


def _checked_aggregate(payload: bytes, result: Union[CollectionResult, AggregateSignature], n: int,
                       digest: Optional[bytes]) -> AggregateSignature:
    aggregate = result.aggregate if isinstance(result, CollectionResult) else result
    expected = payload_digest(payload)
    if isinstance(result, CollectionResult) and result.payload_digest != expected:
        raise ArgumentError("collection result is over a different digest")
    if digest is not None and digest != expected:
        raise ArgumentError("collection result is over a different digest")
    if aggregate is None or not threshold_met(aggregate.bitmap.popcount, n):
        raise ArgumentError("not enough signatures for a consortium envelope")
    if aggregate.bitmap.size != n:
        raise ArgumentError("bitmap does not cover the consortium")
    return aggregate


def make_public_envelope(info: bytes, result: Union[CollectionResult, AggregateSignature], n: int,
                         signed_digest: Optional[bytes] = None) -> PublicEnvelope:
    aggregate = _checked_aggregate(info, result, n, signed_digest)
    return PublicEnvelope(bytes(info), payload_digest(info), aggregate.bitmap, aggregate.value)


def make_private_envelope(ciphertext: Union[CipherEnvelope, bytes], result: Union[CollectionResult, AggregateSignature],
                          n: int, signed_digest: Optional[bytes] = None) -> PrivateEnvelope:
    """Wrap an already encrypted payload; members sign the ciphertext digest."""
    data = ciphertext.to_bytes() if isinstance(ciphertext, CipherEnvelope) else bytes(ciphertext)
    aggregate = _checked_aggregate(data, result, n, signed_digest)
    return PrivateEnvelope(data, payload_digest(data), aggregate.bitmap, aggregate.value)


class RejectReason(str, Enum):
    MALFORMED = "malformed"
    DIGEST_MISMATCH = "digest-mismatch"
    BITMAP_SIZE = "bitmap-size"
    THRESHOLD = "threshold"
    SIGNATURE = "signature"


@dataclass(frozen=True)
class Verdict:
    accepted: bool
    reason: Optional[RejectReason] = None

    def __bool__(self) -> bool:
        return self.accepted


def client_verify(envelope: Union[Envelope, bytes], member_pubkeys: Sequence[bytes], n: int,
                  scheme: Union[SignatureScheme, str] = "arithmetic") -> Verdict:
    """Consumer-side acceptance check for a posted envelope."""
    scheme = get_scheme(scheme) if isinstance(scheme, str) else scheme
    if isinstance(envelope, (bytes, bytearray)):
        try:
            envelope = decode_envelope(bytes(envelope))
        except DecodeError:
            return Verdict(False, RejectReason.MALFORMED)
    if payload_digest(envelope.payload) != envelope.digest:
        return Verdict(False, RejectReason.DIGEST_MISMATCH)
    if envelope.bitmap.size != n or len(member_pubkeys) != n:
        return Verdict(False, RejectReason.BITMAP_SIZE)
    if not threshold_met(envelope.bitmap.popcount, n):
        return Verdict(False, RejectReason.THRESHOLD)
    try:
        key = scheme.aggregate_pubkeys(envelope.bitmap, member_pubkeys)
        ok = scheme.verify_aggregate(key, envelope.digest, envelope.signature())
    except (DecodeError, ArgumentError):
        return Verdict(False, RejectReason.MALFORMED)
    return Verdict(True) if ok else Verdict(False, RejectReason.SIGNATURE)


def sign_directly(scheme: SignatureScheme, keys: Sequence[KeyPair], payload: bytes,
                  signers: Optional[Sequence[int]] = None) -> AggregateSignature:
    """Aggregate signatures from ``signers`` without the network (setup and tests)."""
    n = len(keys)
    signers = list(range(n)) if signers is None else sorted(signers)
    digest = payload_digest(payload)
    return scheme.aggregate([scheme.sign(keys[i].secret, digest) for i in signers], Bitmap.of(n, signers))


# -- consumer client ----------------------------------------------------------------

@dataclass(frozen=True)
class Delivery:
    request_id: Optional[str]
    credential: bytes
    received_at: int


class ConsumerClient(Process):
    """Consumer-side observer that verifies and decrypts responses addressed to it."""

    def __init__(self, node_id: NodeId, net: Network, secret: bytes, public: bytes,
                 member_pubkeys: Sequence[bytes], n: int, scheme: SignatureScheme):
        super().__init__(node_id, net)
        self.secret = secret
        self.public = public
        self.member_pubkeys = list(member_pubkeys)
        self.n = n
        self.scheme = scheme
        self.deliveries: list[Delivery] = []
        self.rejected: list[tuple[int, RejectReason]] = []
        self.public_infos: list[bytes] = []
        self.route(FinalizedTx, self._on_finalized)

    def _on_finalized(self, _src: NodeId, event: FinalizedTx) -> None:
        if event.tx.kind is not TxKind.RESPONSE:
            return
        try:
            envelope = decode_envelope(event.tx.payload)
        except DecodeError:
            self.rejected.append((self.net.now, RejectReason.MALFORMED))
            return
        if isinstance(envelope, PrivateEnvelope) and envelope.recipient != self.public:
            return
        verdict = client_verify(envelope, self.member_pubkeys, self.n, self.scheme)
        if not verdict:
            self.rejected.append((self.net.now, verdict.reason))
            return
        if isinstance(envelope, PublicEnvelope):
            self.public_infos.append(envelope.info)
            return
        try:
            plaintext = decrypt(self.secret, envelope.ciphertext)
        except (DecryptionError, DecodeError):
            self.rejected.append((self.net.now, RejectReason.MALFORMED))
            return
        request_id, credential = parse_credential_message(plaintext)
        self.deliveries.append(Delivery(request_id, credential, self.net.now))


def credential_message(request_id: str, credential: bytes) -> bytes:
    return json.dumps({"request_id": request_id, "credential": credential.decode("latin-1")},
                      sort_keys=True).encode()


def parse_credential_message(plaintext: bytes) -> tuple[Optional[str], bytes]:
    try:
        data = json.loads(plaintext.decode())
        return data["request_id"], data["credential"].encode("latin-1")
    except (ValueError, KeyError, TypeError, AttributeError):
        return None, plaintext


# -- standalone collection runs ----------------------------------------------------

@dataclass(frozen=True)
class CollectionOutcome:
    result: Optional[CollectionResult]
    depth: int
    latency: Optional[int]
    fallback_used: bool
    non_cooperators: tuple[NodeId, ...]
    exclusions: tuple[NodeId, ...]


class CollectionSimulation:
    """A consortium that only signs one message: used for latency experiments.

    Members 0..n-1 run ``CosiMember``; node n orders the fallback contract.
    """

    def __init__(self, n: int, arity: int, delay: DelayModel, *, seed: int = 0, scheme: str = "arithmetic",
                 faults: Mapping[NodeId, FaultBehavior | str] = (), compute_cost_per_child: int = 0,
                 batch_timeout: int = 10):
        if n < 2:
            raise ArgumentError("collective signing needs at least two members")
        self.n = n
        self.arity = arity
        self.net = Network(n + 1, delay, seed, consortium_size=n)
        for node, behavior in dict(faults).items():
            self.net.inject_fault(node, behavior)
        self.scheme = get_scheme(scheme)
        self.keys = [self.scheme.keygen(f"member-{i}") for i in range(n)]
        pubs = [k.public for k in self.keys]
        self.chain = PrivateChain(self.net, list(range(n)), n,
                                  lambda: [signature_collection_contract(n, self.scheme, pubs)],
                                  batch_timeout=batch_timeout)
        self.members = [
            CosiMember(self.chain.processes[i], n, self.keys[i], self.scheme, pubs,
                       delta_bound=delay.delta_bound, replica=self.chain.replicas[i],
                       compute_cost_per_child=compute_cost_per_child)
            for i in range(n)
        ]

    def run(self, payload: bytes = b"response", root: NodeId = 0, timeout: Optional[int] = None,
            horizon: Optional[int] = None) -> CollectionOutcome:
        digest = payload_digest(payload)
        leader = self.members[root]
        leader.collect_offchain(digest, self.arity, timeout)
        self.net.run_until_quiet(horizon)
        result = leader.results.get(digest)
        tree = build_tree(self.n, self.arity, root)
        excluded = tuple(sorted(m for member in self.members for d, m in member.exclusions if d == digest))
        return CollectionOutcome(result, tree.depth, result.latency if result else None,
                                 leader.fallbacks_opened > 0, tuple(leader.non_cooperators(digest)), excluded)


def collection_latency(n: int, arity: int, hop_delay: int, *, jitter: int = 0, seed: int = 0,
                       compute_cost_per_child: int = 0, scheme: str = "arithmetic") -> int:
    """Fault-free off-chain collection latency for one message (ms)."""
    sim = CollectionSimulation(n, arity, DelayModel(hop_delay, jitter), seed=seed, scheme=scheme,
                               compute_cost_per_child=compute_cost_per_child)
    outcome = sim.run()
    if outcome.result is None or outcome.result.path is not CollectionPath.OFFCHAIN:
        raise AssertionError("fault-free collection did not complete off-chain")
    return outcome.latency
