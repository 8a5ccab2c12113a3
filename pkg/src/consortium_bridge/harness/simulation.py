"""End-to-end wiring of a scenario: public chain, consortium, consumers.

Node layout: members ``0..n-1``, the ordering service ``n``, the public chain
``n+1``, the scenario driver ``n+2`` and one consumer client per consumer
from ``n+3`` on.
"""
from __future__ import annotations

import hashlib
import logging
from dataclasses import dataclass
from fractions import Fraction
from functools import partial
from typing import Callable, Optional

from ..cosi import (CollectionResult, ConsumerClient, CosiMember, PublicEnvelope,
                    client_verify, credential_message, decode_envelope, make_private_envelope,
                    make_public_envelope, payload_digest, sign_directly, signature_collection_contract)
from ..crypto import consumer_keygen, encrypt_for, get_scheme
from ..encoding import hexdigest
from ..errors import ContractError, DecodeError, TransactionRejected
from ..federation import (AUCTION_CONTRACT, OFFERINGS_CONTRACT, SCHEDULING_CONTRACT, CatalogProposal,
                          auction_contract, bid_commitment, catalog_info, offerings_contract,
                          parse_catalog_info, price_catalog, provision_vm, scheduling_backlog, scheduling_contract,
                          VmOffering)
from ..netsim import Network, NodeId, Process
from ..privchain import CommitRecord, PrivateChain, PrivBlock
from ..propagation import (CONTRACT_ID as PROPAGATION_CONTRACT, Endorser, RecordStatus, endorsement_message,
                           fault_bound, propagation_contract, records_of, request_digest, threshold_met)
from ..pubchain import ConsumerRequest, PublicChain, PublicTx, TxKind
from .report import RequestTimeline, RunReport, ShareRow
from .scenario import PlannedRequest, Scenario

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class _Provision:
    request: ConsumerRequest


@dataclass(frozen=True)
class _Action:
    index: int


class MemberNode:
    """One consortium member: endorser, scheduler client, provider and signer."""

    def __init__(self, sim: "ConsortiumSimulation", member: NodeId):
        spec = sim.scenario.spec
        self.sim = sim
        self.member = member
        self.replica = sim.priv.replicas[member]
        self.process = self.replica.process
        self.ledger = self.replica.ledger
        self.endorser = Endorser(self.replica, sim.pub, sim.scheme, sim.keys[member].secret)
        self.cosi = CosiMember(self.process, sim.n, sim.keys[member], sim.scheme, sim.pubkeys,
                               delta_bound=sim.net.delay.delta_bound, is_committed=self._is_committed,
                               replica=self.replica, compute_cost_per_child=spec.compute_cost_per_child_ms)
        self.replica.on_commit(self._on_commit)
        self.process.route_timer(_Provision, self._on_provision)
        self._schedule_tx: Optional[str] = None
        self._ciphers = {}
        self._published: set[bytes] = set()

    @property
    def silent(self) -> bool:
        return self.process.silent

    def _is_committed(self, digest: bytes) -> bool:
        state = self.ledger.query_state(OFFERINGS_CONTRACT)
        h = digest.hex()
        return h in state["catalog_digests"] or any(r[2] == h for r in state["responses"])

    # -- reactions to committed private transactions ---------------------------
    def _on_commit(self, record: CommitRecord, block: PrivBlock) -> None:
        tx = record.tx
        if not record.ok:
            return
        if tx.contract_id == PROPAGATION_CONTRACT:
            self._try_schedule()
        elif tx.contract_id == SCHEDULING_CONTRACT:
            self._try_schedule()
            if record.ok and record.result.member == self.member and not self.silent:
                digest = record.result.request_digest
                request = self.ledger.query_state(PROPAGATION_CONTRACT)["r/" + digest].request
                self.process.set_timer(self.sim.scenario.spec.provision_delay_ms, _Provision(request))
        elif tx.contract_id == OFFERINGS_CONTRACT:
            self._on_offerings(record)

    def _on_offerings(self, record: CommitRecord) -> None:
        tx = record.tx
        if tx.procedure == "provision" and tx.submitter == self.member:
            request = tx.args[0]
            cipher = self._ciphers[request.request_id]
            digest = payload_digest(cipher.to_bytes())
            self.cosi.collect_offchain(digest, self.sim.arity, self.sim.scenario.spec.offchain_timeout_ms,
                                       partial(self._post_private, request, cipher))
        elif tx.procedure == "propose_catalog":
            key = CatalogProposal(tx.submitter, tuple(tx.args), ()).key
            if tx.submitter != self.member and not record.result:
                self.replica.submit(OFFERINGS_CONTRACT, "endorse_catalog", key)
            self._maybe_publish(key, record.result)
        elif tx.procedure == "endorse_catalog":
            self._maybe_publish(tx.args, record.result)

    def _try_schedule(self) -> None:
        # at most one scheduling call in flight per member
        if self.silent or scheduling_backlog(self.ledger) <= 0:
            return
        if self._schedule_tx is not None and self.replica.is_outstanding(self._schedule_tx):
            return
        tx = self.replica.submit(SCHEDULING_CONTRACT, "schedule_next", (), still_needed=_backlog_remains)
        self._schedule_tx = None if tx is None else tx.tx_id

    # -- provisioning and response -----------------------------------------------
    def _on_provision(self, payload: _Provision) -> None:
        request = payload.request
        offers = dict(self.ledger.query_state(OFFERINGS_CONTRACT)["offerings"])
        try:
            credential, _ = provision_vm(self.member, request, offers)
        except ContractError:
            credential = b""  # the provisioning transaction will record the failure on-ledger
        seed = f"{self.sim.scenario.seed}|{request.request_id}".encode()
        cipher = encrypt_for(request.consumer_pubkey, credential_message(request.request_id, credential), seed)
        self._ciphers[request.request_id] = cipher
        self.replica.submit(OFFERINGS_CONTRACT, "provision", (request, payload_digest(cipher.to_bytes()).hex()))

    def _post_private(self, request: ConsumerRequest, cipher, result: CollectionResult) -> None:
        self.sim.note_signing(result, request.request_id)
        if not result.success:
            return
        envelope = make_private_envelope(cipher, result, self.sim.n)
        self.sim.pub.post_response(envelope)
        self.sim.timelines[request.request_id].response_posted = self.sim.net.now
        self.sim.timelines[request.request_id].signing_path = result.path.value

    def _maybe_publish(self, key: str, applied) -> None:
        if not applied or self.silent:
            return
        proposals = dict(self.ledger.query_state(OFFERINGS_CONTRACT)["proposals"])
        if proposals[key].member != self.member:
            return
        offers = dict(self.ledger.query_state(OFFERINGS_CONTRACT)["offerings"])
        info = catalog_info(price_catalog(offers, self.sim.scenario.spec.pricing_policy))
        digest = payload_digest(info)
        if digest in self._published:
            return
        self._published.add(digest)
        self.cosi.collect_offchain(digest, self.sim.arity, self.sim.scenario.spec.offchain_timeout_ms,
                                   partial(self._post_public, key, info))

    def _post_public(self, key: str, info: bytes, result: CollectionResult) -> None:
        self.sim.note_signing(result, f"catalog-{key[:12]}")
        if not result.success:
            return
        try:
            self.sim.pub.post_response(make_public_envelope(info, result, self.sim.n))
        except TransactionRejected:
            logger.info("catalog %s already posted", key[:12])
        self.sim.published_catalogs.append((key, self.sim.net.now))


def _backlog_remains(ledger) -> bool:
    return scheduling_backlog(ledger) > 0


class ConsortiumSimulation:
    def __init__(self, scenario: Scenario):
        spec = scenario.spec
        self.scenario = scenario
        self.n = n = spec.members
        self.arity = spec.tree_arity
        self.orderer_id, self.chain_id, self.driver_id = n, n + 1, n + 2
        self.net = Network(n + 3 + spec.consumers, scenario.delay, scenario.seed, consortium_size=n)
        self.faults = scenario.faults()
        for member, behavior in self.faults.items():
            self.net.inject_fault(member, behavior)
        self.scheme = get_scheme(spec.scheme)
        self.keys = [self.scheme.keygen(f"member-{i}") for i in range(n)]
        self.pubkeys = [k.public for k in self.keys]
        self.consumer_keys = [consumer_keygen(f"consumer-{c}") for c in range(spec.consumers)]
        offerings = scenario.offerings()
        self.signing_results: list[tuple[str, CollectionResult]] = []
        self.published_catalogs: list[tuple[str, int]] = []

        info = catalog_info(price_catalog(offerings, spec.pricing_policy))
        genesis = make_public_envelope(info, sign_directly(self.scheme, self.keys, info), n)
        self.pub = PublicChain(self.chain_id, self.net, scenario.finality,
                               genesis_txs=[PublicTx(TxKind.RESPONSE, genesis.to_bytes())],
                               catalog_reader=self._read_catalog, envelope_check=decode_envelope)

        capacity = scenario.window_capacity

        def contracts():
            return [propagation_contract(n, self.scheme, self.pubkeys),
                    offerings_contract(n, offerings, spec.pricing_policy),
                    scheduling_contract(capacity, spec.exec_mode),
                    auction_contract(),
                    signature_collection_contract(n, self.scheme, self.pubkeys)]

        self.priv = PrivateChain(self.net, list(range(n)), self.orderer_id, contracts,
                                 batch_timeout=spec.batch_timeout_ms, retry_limit=spec.retry_limit)
        self.nodes = [MemberNode(self, m) for m in range(n)]
        for m in range(n):
            self.pub.subscribe(m)
        self.clients = [ConsumerClient(n + 3 + c, self.net, k.secret, k.public, self.pubkeys, n, self.scheme)
                        for c, k in enumerate(self.consumer_keys)]
        for client in self.clients:
            self.pub.subscribe(client.node_id)

        self.trace = scenario.request_trace()
        self.timelines = {p.request_id: RequestTimeline(p.request_id, p.config.label(), p.consumer, p.submit_at)
                          for p in self.trace}
        self.requests: dict[str, ConsumerRequest] = {}
        self.digest_to_id: dict[str, str] = {}
        for p in self.trace:
            request = ConsumerRequest(p.request_id, self.consumer_keys[p.consumer].public, p.config, p.duration)
            self.requests[p.request_id] = request
            self.digest_to_id[request_digest(request)] = p.request_id

        correct = [m for m in range(n) if m not in self.faults]
        self.reference = correct[0] if correct else 0
        self.priv.replicas[self.reference].on_commit(self._record_timeline)

        self.driver = Process(self.driver_id, self.net)
        self.driver.route_timer(_Action, lambda a: self._actions[a.index]())
        self._actions: list[Callable[[], None]] = []
        for p in self.trace:
            self._schedule(p.submit_at, partial(self._submit, p))
        for u in spec.catalog_updates:
            self._schedule(u.at_ms, partial(self._propose_catalog, u))
        for a in spec.auctions:
            self._plan_auction(a)

    # -- driver ----------------------------------------------------------------
    def _schedule(self, at: int, action: Callable[[], None]) -> None:
        self._actions.append(action)
        self.net.at(self.driver_id, at, _Action(len(self._actions) - 1))

    def _submit(self, planned: PlannedRequest) -> None:
        try:
            self.pub.submit_request(self.requests[planned.request_id])
        except TransactionRejected as exc:
            self.timelines[planned.request_id].rejected = str(exc)

    def _propose_catalog(self, update) -> None:
        offers = tuple(VmOffering(o.build(), o.quantity, o.price) for o in update.offerings)
        self.priv.replicas[update.member].submit(OFFERINGS_CONTRACT, "propose_catalog", offers)

    def _plan_auction(self, a) -> None:
        deadline = a.start_ms + a.commit_window_ms
        reveal_deadline = deadline + a.reveal_window_ms
        submit = lambda member, procedure, args: self.priv.replicas[member].submit(AUCTION_CONTRACT, procedure, args)
        self._schedule(a.start_ms, partial(submit, a.initiator, "start",
                                           (a.id, a.spec, deadline, a.reveal_window_ms)))
        for bid in a.bids:
            nonce = hashlib.sha256(f"{self.scenario.seed}|{a.id}|{bid.member}".encode()).digest()[:16]
            self._schedule(a.start_ms + a.commit_window_ms // 2,
                           partial(submit, bid.member, "commit", (a.id, bid_commitment(bid.bid, nonce))))
            if not bid.withhold_reveal:
                revealed = bid.bid if bid.reveal is None else bid.reveal
                self._schedule(deadline + a.reveal_window_ms // 2,
                               partial(submit, bid.member, "reveal", (a.id, revealed, nonce)))
        self._schedule(reveal_deadline, partial(submit, a.initiator, "settle", a.id))

    def _read_catalog(self, tx: PublicTx):
        try:
            envelope = decode_envelope(tx.payload)
        except DecodeError:
            return None
        if not isinstance(envelope, PublicEnvelope) or not client_verify(envelope, self.pubkeys, self.n, self.scheme):
            return None
        try:
            prices = parse_catalog_info(envelope.info)
        except (ValueError, KeyError):
            return None
        return [c for c, p in prices.items() if p is not None]

    def note_signing(self, result: CollectionResult, label: str) -> None:
        self.signing_results.append((label, result))

    # -- timeline from the reference replica ----------------------------------------
    def _record_timeline(self, record: CommitRecord, block: PrivBlock) -> None:
        tx, now = record.tx, self.net.now
        if tx.contract_id == PROPAGATION_CONTRACT and record.ok:
            request_id = self.digest_to_id.get(tx.args.endorsement.request_digest)
            if request_id is not None:
                timeline = self.timelines[request_id]
                if timeline.first_endorsed is None:
                    timeline.first_endorsed = now
                state = self.priv.replicas[self.reference].ledger.query_state(PROPAGATION_CONTRACT)
                rec = state["r/" + tx.args.endorsement.request_digest]
                if rec.status in (RecordStatus.APPROVED, RecordStatus.DISPATCHED) and timeline.approved is None:
                    timeline.approved = now
            for d in record.result:
                rid = self.digest_to_id.get(d.request_digest)
                if rid is not None:
                    self.timelines[rid].dispatched = now
                    self.timelines[rid].dispatch_index = d.index
        elif tx.contract_id == SCHEDULING_CONTRACT and record.ok:
            rid = self.digest_to_id.get(record.result.request_digest)
            if rid is not None:
                self.timelines[rid].scheduled = now
                self.timelines[rid].scheduled_to = record.result.member
        elif tx.contract_id == OFFERINGS_CONTRACT and tx.procedure == "provision":
            rid = tx.args[0].request_id
            timeline = self.timelines.get(rid)
            if timeline is None or timeline.provisioned is not None:
                return
            if record.ok:
                timeline.provisioned = now
            elif tx.submitter == timeline.scheduled_to:
                timeline.provision_error = record.error

    # -- run -------------------------------------------------------------------------
    def run(self) -> RunReport:
        self.pub.start()
        self.net.run_until_quiet(self.scenario.spec.horizon_ms)
        return self._report()

    def _report(self) -> RunReport:
        spec = self.scenario.spec
        n = self.n
        for event in self.pub.finalized:
            if event.tx.kind is TxKind.REQUEST:
                rid = event.tx.payload.request_id
                if rid in self.timelines:
                    self.timelines[rid].finalized = self.pub.finalized_at[event.tx.tx_id]
                    self.timelines[rid].seq = str(event.seq)
        for client in self.clients:
            for delivery in client.deliveries:
                timeline = self.timelines.get(delivery.request_id)
                if timeline is not None and timeline.client_verified is None:
                    timeline.client_verified = delivery.received_at

        correct = [m for m in range(n) if m not in self.faults]
        finalized_order = [e.tx.payload.request_id for e in self.pub.finalized if e.tx.kind is TxKind.REQUEST]
        dispatch = {m: [self._name(d) for d in
                        self.priv.replicas[m].ledger.query_state(PROPAGATION_CONTRACT)["dispatched"]]
                    for m in correct}
        ref_ledger = self.priv.replicas[self.reference].ledger
        sched = ref_ledger.query_state(SCHEDULING_CONTRACT)
        assignments = [(self._name(a.request_digest), a.member) for a in sched["assignments"]]

        sequences = list(dispatch.values())
        finalized_set = set(finalized_order)
        checks = {
            "dispatch-agreement": all(s == sequences[0] for s in sequences),
            "no-phantom-dispatch": all(r in finalized_set for s in sequences for r in s),
            "dispatch-follows-public-order": all(s == finalized_order[:len(s)] for s in sequences),
            "all-finalized-dispatched": all(s == finalized_order for s in sequences),
            "replica-agreement": len({(self.priv.replicas[m].next_block, self.priv.replicas[m].ledger.digest())
                                      for m in correct}) <= 1,
            "endorsement-quorum": self._quorum_check(ref_ledger),
            "report-complete": len(self.timelines) == len(self.trace),
        }

        violations = []
        if self.net.assumption_violated:
            violations.append(f"{len(self.faults)} faulty members exceed the fault bound {fault_bound(n)}")
        non_coop = self._non_cooperators()
        completed = {label for label, r in self.signing_results if r.success}
        for label in non_coop:
            if label not in completed:
                violations.append(f"signature collection for {label} could not reach a quorum")

        table = ref_ledger.query_state(OFFERINGS_CONTRACT)["table"]
        total = len(assignments)
        counts = {m: 0 for m in table.members}
        for _, member in assignments:
            counts[member] = counts.get(member, 0) + 1
        shares = [ShareRow(m, table.proportion(m), counts[m], Fraction(counts[m], total) if total else Fraction(0))
                  for m in sorted(counts)]

        stats = [self.priv.replicas[m].stats for m in correct]
        conflicts = {k: sum(getattr(s, k) for s in stats)
                     for k in ("submitted", "committed", "conflicts", "retries", "failed", "abandoned")}

        return RunReport(
            scenario=self.scenario.name, seed=self.scenario.seed, members=n,
            exec_mode=spec.exec_mode.value, scheme=spec.scheme, final_time=self.net.now,
            timed_out=self.net.timed_out, requests=[self.timelines[p.request_id] for p in self.trace],
            shares=shares, conflicts=conflicts,
            fallback_invocations=sum(node.cosi.fallbacks_opened for node in self.nodes),
            non_cooperators=non_coop, assumption_violations=violations, checks=checks,
            scheduler_state=hexdigest(dict(sched)), assignments=assignments,
            finalized_order=finalized_order, dispatch_order=dispatch[correct[0]] if correct else [],
            signing_latencies=[r.latency for _, r in self.signing_results if r.success],
            messages={"sent": self.net.sent, "delivered": self.net.delivered, "dropped": self.net.dropped},
            trace_digest=hexdigest("\n".join(self.net.trace_lines())),
            auctions=self._auctions(ref_ledger), catalog_updates=self._catalog_updates(ref_ledger),
            faulty={m: b.value for m, b in self.faults.items()},
        )

    def _name(self, digest: str) -> str:
        return self.digest_to_id.get(digest, f"phantom-{digest[:12]}")

    def _quorum_check(self, ledger) -> bool:
        state = ledger.query_state(PROPAGATION_CONTRACT)
        for rec in records_of(state):
            if rec.status is not RecordStatus.DISPATCHED:
                continue
            valid = [v for v in rec.votes if v.seq == rec.seq and self.scheme.verify(
                self.pubkeys[v.member], endorsement_message(v.request_digest, v.seq), v.signature)]
            if not threshold_met(len({v.member for v in valid}), self.n):
                return False
        return True

    def _non_cooperators(self) -> dict[str, list[int]]:
        out = {}
        for node in self.nodes:
            for digest, offchain in node.cosi._offchain.items():
                if offchain.success:
                    continue
                label = self._digest_label(node, digest)
                out[label] = node.cosi.non_cooperators(digest)
        return dict(sorted(out.items()))

    def _digest_label(self, node: MemberNode, digest: bytes) -> str:
        for label, result in self.signing_results:
            if result.payload_digest == digest:
                return label
        for rid, cipher in node._ciphers.items():
            if payload_digest(cipher.to_bytes()) == digest:
                return rid
        return digest.hex()[:16]

    def _auctions(self, ledger) -> list[dict]:
        out = []
        for auction_id, a in sorted(ledger.query_state(AUCTION_CONTRACT).items()):
            out.append({"auction_id": auction_id, "initiator": a.initiator, "phase": a.phase.value,
                        "winner": a.winner, "winning_bid": a.winning_bid,
                        "penalized": sorted(a.penalized), "commitments": len(a.commitments),
                        "valid_reveals": len(a.reveals)})
        return out

    def _catalog_updates(self, ledger) -> list[dict]:
        out = []
        published = {key for key, _ in self.published_catalogs}
        for key, p in ledger.query_state(OFFERINGS_CONTRACT)["proposals"]:
            out.append({"proposal": key[:16], "member": p.member, "applied": p.applied,
                        "endorsers": list(p.endorsers), "published": key in published})
        return out


def run_scenario(scenario: Scenario | str) -> RunReport:
    """Run one scenario (object, file path or shipped name) to quiescence or its horizon."""
    from .scenario import load_scenario
    if not isinstance(scenario, Scenario):
        scenario = load_scenario(scenario)
    return ConsortiumSimulation(scenario).run()
