"""Simulated permissioned chain hosting deterministic contracts.

Two execution flows are supported per contract:

* order-execute: transactions are ordered, then applied sequentially;
* execute-order: a transaction is simulated against a state version, that
  version travels with it, and at commit time it is rejected if the contract
  has moved on (multiversion concurrency control).

``Ledger`` is the replicated state machine. ``OrderingService`` and
``Replica`` run it over ``netsim``: a block is committed by a member once
more than two thirds of the members acknowledged it.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, replace
from enum import Enum
from types import MappingProxyType
from typing import Any, Callable, Mapping, Optional, Sequence

from .encoding import hexdigest
from .errors import ArgumentError, ContractError, VersionError
from .netsim import Network, NodeId, Process

logger = logging.getLogger(__name__)

DEFAULT_RETRY_LIMIT = 10


class ExecMode(str, Enum):
    ORDER_EXECUTE = "order-execute"
    EXECUTE_ORDER = "execute-order"


class Outcome(str, Enum):
    COMMITTED = "committed"
    REJECTED_CONFLICT = "rejected-conflict"


@dataclass(frozen=True)
class PrivTx:
    submitter: NodeId
    contract_id: str
    procedure: str
    args: Any = ()
    read_version: Optional[int] = None
    nonce: int = 0
    attempt: int = 0

    @property
    def tx_id(self) -> str:
        # stable across resubmissions
        return hexdigest((self.submitter, self.contract_id, self.procedure, self.args, self.nonce), 32)


@dataclass(frozen=True)
class StateVersion:
    version: int
    state_digest: str


@dataclass(frozen=True)
class CommitRecord:
    tx: PrivTx
    outcome: Outcome
    applied_version: int
    result: Any = None
    error: Optional[str] = None

    @property
    def committed(self) -> bool:
        return self.outcome is Outcome.COMMITTED

    @property
    def ok(self) -> bool:
        return self.committed and self.error is None


@dataclass
class Context:
    """What a procedure may see besides its own state."""
    submitter: NodeId
    time: int
    ledger: "Ledger"


Procedure = Callable[[dict, Any, Context], Any]


class Contract:
    """A named bundle of deterministic procedures over a key-value state.

    Procedures receive a shallow copy of the state and mutate it by assigning
    keys; values stored in state must be immutable.
    """

    def __init__(self, contract_id: str, procedures: Mapping[str, Procedure],
                 initial_state: Mapping[str, Any], mode: ExecMode | str = ExecMode.ORDER_EXECUTE):
        self.contract_id = contract_id
        self.procedures = dict(procedures)
        self.initial_state = dict(initial_state)
        self.mode = ExecMode(mode)


def counting_contract(mode: ExecMode | str = ExecMode.ORDER_EXECUTE) -> Contract:
    """The modulo-100 counter used to illustrate execution flows."""

    def call_increment(state, args, ctx):
        state["count"] = (state["count"] + 1) % 100
        return state["count"]

    def call_double(state, args, ctx):
        state["count"] = state["count"] * 2 % 100
        return state["count"]

    return Contract("counter", {"CallIncrement": call_increment, "CallDouble": call_double},
                    {"count": 0}, mode)


class Ledger:
    """One member's replica of every contract, with full version history."""

    def __init__(self, contracts: Sequence[Contract]):
        self.contracts = {c.contract_id: c for c in contracts}
        self._history: dict[str, list[dict]] = {c.contract_id: [dict(c.initial_state)] for c in contracts}
        self.log: list[CommitRecord] = []

    def _contract(self, contract_id: str) -> Contract:
        try:
            return self.contracts[contract_id]
        except KeyError:
            raise ArgumentError(f"unknown contract {contract_id!r}") from None

    def version(self, contract_id: str) -> int:
        self._contract(contract_id)
        return len(self._history[contract_id]) - 1

    def state(self, contract_id: str) -> Mapping[str, Any]:
        return self.query_state(contract_id)

    def query_state(self, contract_id: str, version: Optional[int] = None) -> Mapping[str, Any]:
        self._contract(contract_id)
        history = self._history[contract_id]
        if version is None:
            version = len(history) - 1
        if not 0 <= version < len(history):
            raise VersionError(f"{contract_id} has no version {version} (current {len(history) - 1})")
        return MappingProxyType(history[version])

    def state_version(self, contract_id: str, version: Optional[int] = None) -> StateVersion:
        v = self.version(contract_id) if version is None else version
        return StateVersion(v, hexdigest(dict(self.query_state(contract_id, v))))

    def digest(self) -> str:
        return hexdigest({cid: self.state_version(cid) for cid in sorted(self.contracts)})

    def _execute(self, tx: PrivTx, time: int) -> tuple[dict, Any]:
        contract = self._contract(tx.contract_id)
        try:
            procedure = contract.procedures[tx.procedure]
        except KeyError:
            raise ContractError(f"{tx.contract_id} has no procedure {tx.procedure!r}") from None
        state = dict(self._history[tx.contract_id][-1])
        result = procedure(state, tx.args, Context(tx.submitter, time, self))
        return state, result

    def simulate(self, tx: PrivTx, time: int = 0) -> tuple[PrivTx, Any]:
        """Run ``tx`` against the current version without committing it."""
        _, result = self._execute(tx, time)
        return replace(tx, read_version=self.version(tx.contract_id)), result

    def apply(self, tx: PrivTx, time: int = 0, mode: Optional[ExecMode] = None) -> CommitRecord:
        mode = ExecMode(mode) if mode is not None else self._contract(tx.contract_id).mode
        current = self.version(tx.contract_id)
        if mode is ExecMode.EXECUTE_ORDER:
            if tx.read_version is None:
                raise ArgumentError("execute-order transactions must carry a read_version")
            if tx.read_version != current:
                record = CommitRecord(tx, Outcome.REJECTED_CONFLICT, current)
                self.log.append(record)
                return record
        try:
            state, result = self._execute(tx, time)
        except ContractError as exc:
            record = CommitRecord(tx, Outcome.COMMITTED, current, None, str(exc))
        else:
            self._history[tx.contract_id].append(state)
            record = CommitRecord(tx, Outcome.COMMITTED, current + 1, result)
        self.log.append(record)
        return record


def run_order_execute(ledger: Ledger, batch: Sequence[PrivTx], time: int = 0) -> list[CommitRecord]:
    return [ledger.apply(tx, time, ExecMode.ORDER_EXECUTE) for tx in batch]


def run_execute_order(ledger: Ledger, txs: Sequence[PrivTx], retry_limit: int = DEFAULT_RETRY_LIMIT,
                      time: int = 0) -> list[CommitRecord]:
    """Apply parallel transactions round by round with MVCC.

    In each round the transactions are validated in the given order; those
    whose read version is stale are rejected and resubmitted in the next round
    against the then-current version, at most ``retry_limit`` times.
    """
    records: list[CommitRecord] = []
    pending = list(txs)
    while pending:
        retry = []
        for tx in pending:
            record = ledger.apply(tx, time, ExecMode.EXECUTE_ORDER)
            records.append(record)
            if not record.committed and tx.attempt < retry_limit:
                retry.append(tx)
        pending = [replace(tx, read_version=ledger.version(tx.contract_id), attempt=tx.attempt + 1)
                   for tx in retry]
    return records


def failed_transactions(records: Sequence[CommitRecord]) -> list[PrivTx]:
    """Transactions whose final record is still a conflict."""
    last: dict[str, CommitRecord] = {}
    for r in records:
        last[r.tx.tx_id] = r
    return [r.tx for r in last.values() if not r.committed]


# -- replication over the network ---------------------------------------------

@dataclass(frozen=True)
class PrivBlock:
    number: int
    timestamp: int
    txs: tuple[PrivTx, ...]

    @property
    def digest(self) -> str:
        return hexdigest(self, 32)


@dataclass(frozen=True)
class SubmitTx:
    tx: PrivTx


@dataclass(frozen=True)
class Proposal:
    block: PrivBlock


@dataclass(frozen=True)
class Ack:
    number: int
    block_digest: str
    member: NodeId


@dataclass(frozen=True)
class _Cut:
    pass


class OrderingService(Process):
    """Orders member submissions by arrival (ties by submitter) into blocks."""

    def __init__(self, node_id: NodeId, net: Network, members: Sequence[NodeId], batch_timeout: int = 50):
        super().__init__(node_id, net)
        self.members = list(members)
        self.batch_timeout = batch_timeout
        self.rejected: list[PrivTx] = []
        self.blocks: list[PrivBlock] = []
        self._pending: list[tuple[int, NodeId, int, PrivTx]] = []
        self._arrivals = 0
        self._cut_scheduled = False
        self.route(SubmitTx, self._on_submit)
        self.route_timer(_Cut, self._on_cut)

    def _on_submit(self, src: NodeId, msg: SubmitTx) -> None:
        tx = msg.tx
        if tx.submitter not in self.members or src != tx.submitter:
            self.rejected.append(tx)
            return
        self._arrivals += 1
        self._pending.append((self.net.now, tx.submitter, self._arrivals, tx))
        if not self._cut_scheduled:
            self._cut_scheduled = True
            self.set_timer(self.batch_timeout, _Cut())

    def _on_cut(self, _payload) -> None:
        self._cut_scheduled = False
        if not self._pending:
            return
        txs = tuple(tx for *_, tx in sorted(self._pending, key=lambda p: p[:3]))
        self._pending = []
        block = PrivBlock(len(self.blocks), self.net.now, txs)
        self.blocks.append(block)
        for m in self.members:
            self.send(m, Proposal(block))


@dataclass
class SubmissionStats:
    submitted: int = 0
    conflicts: int = 0
    retries: int = 0
    failed: int = 0
    abandoned: int = 0
    committed: int = 0


CommitListener = Callable[[CommitRecord, PrivBlock], None]


class Replica:
    """Private-chain participant attached to a member process."""

    def __init__(self, process: Process, ledger: Ledger, orderer: NodeId, members: Sequence[NodeId],
                 retry_limit: int = DEFAULT_RETRY_LIMIT):
        self.process = process
        self.ledger = ledger
        self.orderer = orderer
        self.members = list(members)
        self.retry_limit = retry_limit
        self.next_block = 0
        self.commit_times: list[int] = []
        self.stats = SubmissionStats()
        self._proposals: dict[int, PrivBlock] = {}
        self._acks: dict[tuple[int, str], set[NodeId]] = {}
        self._outstanding: dict[str, tuple[PrivTx, Optional[Callable[[Ledger], bool]]]] = {}
        self._nonce = 0
        self._listeners: list[CommitListener] = []
        process.route(Proposal, self._on_proposal)
        process.route(Ack, self._on_ack)

    @property
    def node_id(self) -> NodeId:
        return self.process.node_id

    def on_commit(self, listener: CommitListener) -> None:
        self._listeners.append(listener)

    @property
    def quorum_met(self) -> Callable[[int], bool]:
        n = len(self.members)
        return lambda count: 3 * count > 2 * n

    # -- submission -------------------------------------------------------
    def submit(self, contract_id: str, procedure: str, args: Any = (),
               still_needed: Optional[Callable[[Ledger], bool]] = None) -> Optional[PrivTx]:
        """Submit a transaction; execute-order contracts are simulated first.

        ``still_needed`` is consulted before every conflict resubmission; when
        it returns False the transaction is abandoned instead.
        """
        if self.node_id not in self.members:
            raise ArgumentError(f"node {self.node_id} is not a consortium member")
        if self.process.silent:
            return None
        self._nonce += 1
        tx = PrivTx(self.node_id, contract_id, procedure, args, nonce=self._nonce)
        tx = self._prepare(tx)
        if tx is None:
            return None
        self.stats.submitted += 1
        self._outstanding[tx.tx_id] = (tx, still_needed)
        self.process.send(self.orderer, SubmitTx(tx))
        return tx

    def is_outstanding(self, tx_id: str) -> bool:
        """True while a submitted transaction (or its retry) awaits a final outcome."""
        return tx_id in self._outstanding

    def _prepare(self, tx: PrivTx) -> Optional[PrivTx]:
        if self.ledger.contracts[tx.contract_id].mode is not ExecMode.EXECUTE_ORDER:
            return tx
        try:
            simulated, _ = self.ledger.simulate(tx, self.process.net.now)
        except ContractError as exc:
            logger.debug("node %s: simulation of %s failed: %s", self.node_id, tx.procedure, exc)
            return None
        return simulated

    # -- ordering protocol ------------------------------------------------
    def _on_proposal(self, src: NodeId, msg: Proposal) -> None:
        if src != self.orderer:
            return
        block = msg.block
        self._proposals[block.number] = block
        if not self.process.silent:
            ack = Ack(block.number, block.digest, self.node_id)
            self._record_ack(ack)
            for m in self.members:
                if m != self.node_id:
                    self.process.send(m, ack)
        self._try_commit()

    def _on_ack(self, src: NodeId, ack: Ack) -> None:
        if src != ack.member or src not in self.members:
            return
        self._record_ack(ack)
        self._try_commit()

    def _record_ack(self, ack: Ack) -> None:
        self._acks.setdefault((ack.number, ack.block_digest), set()).add(ack.member)

    def _try_commit(self) -> None:
        while self.next_block in self._proposals:
            block = self._proposals[self.next_block]
            if not self.quorum_met(len(self._acks.get((block.number, block.digest), ()))):
                return
            self.next_block += 1
            self.commit_times.append(self.process.net.now)
            self._commit(block)

    def _commit(self, block: PrivBlock) -> None:
        records = [self.ledger.apply(tx, block.timestamp) for tx in block.txs]
        for record in records:
            self._settle_own(record)
        for record in records:
            for listener in self._listeners:
                listener(record, block)

    def _settle_own(self, record: CommitRecord) -> None:
        entry = self._outstanding.get(record.tx.tx_id)
        if entry is None or entry[0] != record.tx:
            return
        del self._outstanding[record.tx.tx_id]
        if record.committed:
            self.stats.committed += 1
            return
        self.stats.conflicts += 1
        tx, still_needed = entry
        if still_needed is not None and not still_needed(self.ledger):
            self.stats.abandoned += 1
            return
        if tx.attempt >= self.retry_limit:
            self.stats.failed += 1
            return
        retried = self._prepare(replace(tx, attempt=tx.attempt + 1))
        if retried is None:
            self.stats.abandoned += 1
            return
        self.stats.retries += 1
        self._outstanding[retried.tx_id] = (retried, still_needed)
        self.process.send(self.orderer, SubmitTx(retried))


class PrivateChain:
    """Convenience wiring: an ordering service plus one replica per member."""

    def __init__(self, net: Network, members: Sequence[NodeId], orderer: NodeId,
                 contracts_factory: Callable[[], Sequence[Contract]], batch_timeout: int = 50,
                 retry_limit: int = DEFAULT_RETRY_LIMIT, processes: Optional[Mapping[NodeId, Process]] = None):
        self.net = net
        self.members = list(members)
        self.orderer = OrderingService(orderer, net, self.members, batch_timeout)
        self.processes = dict(processes) if processes else {m: Process(m, net) for m in self.members}
        self.replicas = {m: Replica(self.processes[m], Ledger(contracts_factory()), orderer, self.members,
                                    retry_limit) for m in self.members}

    def submit_private_tx(self, member: NodeId, contract_id: str, procedure: str, args: Any = ()) -> Optional[PrivTx]:
        if member not in self.replicas:
            raise ArgumentError(f"node {member} is not a consortium member")
        return self.replicas[member].submit(contract_id, procedure, args)

    def correct_members(self) -> list[NodeId]:
        return [m for m in self.members if self.net.behavior(m) is None]

    def replica_digests(self) -> dict[NodeId, tuple[int, str]]:
        return {m: (r.next_block, r.ledger.digest()) for m, r in self.replicas.items()}
