"""Simulated public blockchain with a mining-delay model and temporary forks.

Blocks are produced by a timer with exponentially distributed intervals.
With probability ``fork_probability`` a mining step emits two competing
blocks at the same height with disjoint packings; both branches are extended
in lockstep until ``fork_resolution_depth`` heights have passed, then one
branch (chosen by the seeded generator) pulls ahead and becomes canonical.
Transactions only on the losing branch go back to the pool.

Observers learn about a transaction once its block has ``confirmation_depth``
descendants on the canonical chain; notifications travel over netsim.
"""
from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from enum import Enum
from typing import TYPE_CHECKING, Any, Callable, Iterable, Optional, Sequence, Union

from .encoding import hexdigest
from .errors import ConfigurationError, DecodeError, TransactionRejected
from .netsim import Network, NodeId, Process

if TYPE_CHECKING:
    from .federation import VmConfig

logger = logging.getLogger(__name__)

GENESIS_PARENT = "0" * 64


@dataclass(frozen=True)
class ConsumerRequest:
    request_id: str
    consumer_pubkey: bytes
    vm_config: "VmConfig"
    duration: int


@dataclass(frozen=True, order=True)
class SequenceNumber:
    block_number: int
    offset: int

    def __str__(self) -> str:
        return f"({self.block_number},{self.offset})"


class TxKind(str, Enum):
    REQUEST = "request"
    RESPONSE = "response"


@dataclass(frozen=True)
class PublicTx:
    kind: TxKind
    payload: Any  # ConsumerRequest for requests, envelope wire bytes for responses

    @property
    def tx_id(self) -> str:
        return hexdigest(self, 32)


@dataclass(frozen=True)
class PublicBlock:
    height: int
    parent_digest: str
    transactions: tuple[PublicTx, ...]
    digest: str = field(init=False, compare=False, metadata={"canonical": False})

    def __post_init__(self):
        object.__setattr__(self, "digest", hexdigest((self.height, self.parent_digest, self.transactions)))


@dataclass(frozen=True)
class FinalityParams:
    confirmation_depth: int = 2
    fork_probability: float = 0.0
    fork_resolution_depth: int = 1
    mine_interval: int = 1000

    def __post_init__(self):
        if self.confirmation_depth < 0 or self.fork_resolution_depth < 1:
            raise ConfigurationError("confirmation_depth must be >= 0 and fork_resolution_depth >= 1")
        if not 0 <= self.fork_probability <= 1:
            raise ConfigurationError("fork_probability must lie in [0, 1]")
        if self.mine_interval < 1:
            raise ConfigurationError("mine_interval must be >= 1 ms")
        if self.fork_probability > 0 and self.confirmation_depth < self.fork_resolution_depth:
            raise ConfigurationError(
                "confirmation_depth must be >= fork_resolution_depth when forks can occur "
                "(otherwise finalized transactions could be reorganized away)")


@dataclass(frozen=True)
class Receipt:
    tx_id: str
    accepted_at: int


@dataclass(frozen=True)
class FinalizedTx:
    """Event delivered to a subscribed observer."""
    tx: PublicTx
    seq: SequenceNumber


@dataclass(frozen=True)
class _MineTick:
    pass


@dataclass
class _Fork:
    tips: list[str]           # [branch 0 tip, branch 1 tip]
    remaining: int            # lockstep heights still to mine before resolution


EnvelopeCheck = Callable[[bytes], Any]
CatalogReader = Callable[[PublicTx], Optional[Iterable["VmConfig"]]]


class PublicChain(Process):
    """The public ledger, its miner, and its finality notifier."""

    def __init__(self, node_id: NodeId, net: Network, params: FinalityParams, *,
                 genesis_txs: Sequence[PublicTx] = (),
                 catalog: Optional[Iterable["VmConfig"]] = None,
                 catalog_reader: Optional[CatalogReader] = None,
                 envelope_check: Optional[EnvelopeCheck] = None,
                 force_fork_at: Optional[int] = None,
                 max_block_txs: Optional[int] = None):
        super().__init__(node_id, net)
        self.params = params
        self.catalog = frozenset(catalog) if catalog is not None else None
        self.catalog_reader = catalog_reader
        self.envelope_check = envelope_check
        self.force_fork_at = force_fork_at
        self.max_block_txs = max_block_txs
        self.blocks: dict[str, PublicBlock] = {}
        self.block_times: dict[str, int] = {}
        self.pool: list[PublicTx] = []
        self.observers: list[NodeId] = []
        self.finalized: list[FinalizedTx] = []
        self.finalized_at: dict[str, int] = {}
        self.submitted_at: dict[str, int] = {}
        self.forks_started = 0
        self._final_chain: list[str] = []
        self._known_ids: set[str] = set()
        self._request_ids: set[str] = set()
        self._fork: Optional[_Fork] = None
        self._mining = False
        self._started = False
        genesis = PublicBlock(0, GENESIS_PARENT, tuple(genesis_txs))
        for tx in genesis.transactions:
            self._remember(tx, 0)
        self._add_block(genesis)
        self.route_timer(_MineTick, self._on_tick)

    # -- chain structure --------------------------------------------------
    def _add_block(self, block: PublicBlock) -> None:
        self.blocks[block.digest] = block
        self.block_times[block.digest] = self.net.now

    @property
    def tip(self) -> PublicBlock:
        return min(self.blocks.values(), key=lambda b: (-b.height, b.digest))

    def chain(self, tip: Optional[PublicBlock] = None) -> list[PublicBlock]:
        """Blocks from genesis to ``tip`` (default: the canonical tip)."""
        block = tip or self.tip
        out = [block]
        while block.height > 0:
            block = self.blocks[block.parent_digest]
            out.append(block)
        out.reverse()
        return out

    def _included(self, tip_digest: str) -> set[str]:
        return {tx.tx_id for b in self.chain(self.blocks[tip_digest]) for tx in b.transactions}

    def tx_at(self, seq: SequenceNumber) -> Optional[PublicTx]:
        """Transaction at ``seq`` on the canonical chain, if any."""
        chain = self.chain()
        if seq.block_number >= len(chain):
            return None
        txs = chain[seq.block_number].transactions
        return txs[seq.offset] if 0 <= seq.offset < len(txs) else None

    def is_finalized(self, tx: PublicTx, seq: SequenceNumber) -> bool:
        return seq.block_number < len(self._final_chain) and self.tx_at(seq) == tx

    def scan(self) -> list[FinalizedTx]:
        return list(self.finalized)

    # -- submission ---------------------------------------------------------
    def subscribe(self, observer: NodeId) -> None:
        if observer not in self.observers:
            self.observers.append(observer)
            for event in self.finalized:
                self.send(observer, event)

    def _remember(self, tx: PublicTx, now: int) -> None:
        self._known_ids.add(tx.tx_id)
        self.submitted_at[tx.tx_id] = now

    def submit_request(self, request: ConsumerRequest) -> Receipt:
        if request.request_id in self._request_ids:
            raise TransactionRejected(f"duplicate request id {request.request_id!r}")
        if self.catalog is not None and request.vm_config not in self.catalog:
            raise TransactionRejected(f"configuration {request.vm_config.label()} is not in the published catalog")
        self._request_ids.add(request.request_id)
        return self._accept(PublicTx(TxKind.REQUEST, request))

    def post_response(self, envelope: Union[bytes, Any]) -> Receipt:
        """Post a response envelope; only its structure is checked here."""
        data = envelope if isinstance(envelope, (bytes, bytearray)) else envelope.to_bytes()
        data = bytes(data)
        if self.envelope_check is not None:
            try:
                self.envelope_check(data)
            except DecodeError as exc:
                raise TransactionRejected(f"malformed envelope: {exc}") from exc
        tx = PublicTx(TxKind.RESPONSE, data)
        if tx.tx_id in self._known_ids:
            raise TransactionRejected("envelope already posted")
        return self._accept(tx)

    def _accept(self, tx: PublicTx) -> Receipt:
        self._remember(tx, self.net.now)
        self.pool.append(tx)
        self._wake()
        return Receipt(tx.tx_id, self.net.now)

    # -- mining -------------------------------------------------------------
    def start(self) -> None:
        """Emit genesis as final and start mining if there is work."""
        if self._started:
            return
        self._started = True
        self._finalize()
        self._wake()

    def _has_work(self) -> bool:
        if self.pool or self._fork is not None:
            return True
        # keep mining empty blocks until the last transaction is confirmed
        return any(b.transactions for b in self.chain()[len(self._final_chain):])

    def _wake(self) -> None:
        if self._started and not self._mining and self._has_work():
            self._mining = True
            interval = self.net.rng("mining").expovariate(1.0 / self.params.mine_interval)
            self.set_timer(max(1, round(interval)), _MineTick())

    def _on_tick(self, _payload) -> None:
        self._mining = False
        self.mine_step(self.net.now)
        self._wake()

    def _pack(self, tip_digest: str, candidates: Sequence[PublicTx]) -> tuple[PublicTx, ...]:
        included = self._included(tip_digest)
        txs = [tx for tx in candidates if tx.tx_id not in included]
        if self.max_block_txs is not None:
            txs = txs[:self.max_block_txs]
        return tuple(txs)

    def _extend(self, tip_digest: str, candidates: Sequence[PublicTx]) -> PublicBlock:
        parent = self.blocks[tip_digest]
        block = PublicBlock(parent.height + 1, parent.digest, self._pack(tip_digest, candidates))
        self._add_block(block)
        return block

    def mine_step(self, now: int) -> list[PublicBlock]:
        """Produce the blocks for one mining tick and notify newly final ones."""
        if self._fork is not None:
            mined = self._step_fork()
        elif not self._has_work():
            mined = []
        else:
            tip = self.tip
            height = tip.height + 1
            forced = self.force_fork_at == height
            fork = forced or (self.params.fork_probability > 0
                              and self.net.rng("forks").random() < self.params.fork_probability)
            if fork and len(self.pool) >= 2:
                mined = self._start_fork(tip)
            else:
                mined = [self._extend(tip.digest, self.pool)]
                self._drop_from_pool(mined[0].digest)
        self._finalize()
        return mined

    def _start_fork(self, tip: PublicBlock) -> list[PublicBlock]:
        self.forks_started += 1
        half = (len(self.pool) + 1) // 2
        a = self._extend(tip.digest, self.pool[:half])
        b = self._extend(tip.digest, self.pool[half:])
        self._fork = _Fork([a.digest, b.digest], self.params.fork_resolution_depth - 1)
        logger.debug("fork at height %d", a.height)
        if self._fork.remaining == 0:
            return [a, b] + self._resolve_fork()
        return [a, b]

    def _step_fork(self) -> list[PublicBlock]:
        fork = self._fork
        if fork.remaining > 0:
            blocks = [self._extend(t, self.pool) for t in fork.tips]
            fork.tips = [b.digest for b in blocks]
            fork.remaining -= 1
            return blocks
        return self._resolve_fork()

    def _resolve_fork(self) -> list[PublicBlock]:
        fork = self._fork
        winner = fork.tips[self.net.rng("forks").randrange(2)]
        self._fork = None
        block = self._extend(winner, self.pool)
        self._drop_from_pool(block.digest)
        return [block]

    def _drop_from_pool(self, tip_digest: str) -> None:
        included = self._included(tip_digest)
        self.pool = [tx for tx in self.pool if tx.tx_id not in included]

    # -- finality ---------------------------------------------------------
    def _finalize(self) -> None:
        chain = self.chain()
        for i, digest in enumerate(self._final_chain):
            if chain[i].digest != digest:
                raise AssertionError(f"finalized block at height {i} was reorganized")
        final_height = chain[-1].height - self.params.confirmation_depth
        while len(self._final_chain) <= final_height:
            block = chain[len(self._final_chain)]
            self._final_chain.append(block.digest)
            for offset, tx in enumerate(block.transactions):
                event = FinalizedTx(tx, SequenceNumber(block.height, offset))
                self.finalized.append(event)
                self.finalized_at[tx.tx_id] = self.net.now
                self._read_catalog(tx)
                for observer in self.observers:
                    self.send(observer, event)

    def _read_catalog(self, tx: PublicTx) -> None:
        if self.catalog_reader is None or tx.kind is not TxKind.RESPONSE:
            return
        catalog = self.catalog_reader(tx)
        if catalog is not None:
            self.catalog = frozenset(catalog)

    # -- export -------------------------------------------------------------
    def dump_lines(self) -> list[str]:
        """Finalized transactions as line-delimited JSON records."""
        lines = []
        for event in self.finalized:
            record = {"block": event.seq.block_number, "offset": event.seq.offset, "kind": event.tx.kind.value}
            if event.tx.kind is TxKind.RESPONSE:
                record["envelope"] = event.tx.payload.hex()
            else:
                r = event.tx.payload
                record["request"] = {
                    "request_id": r.request_id, "consumer_pubkey": r.consumer_pubkey.hex(),
                    "vm_config": r.vm_config.label(), "duration": r.duration,
                }
            lines.append(json.dumps(record, sort_keys=True))
        return lines


def read_chain_dump(lines: Iterable[str]) -> list[tuple[SequenceNumber, str, Any]]:
    """Parse ``dump_lines`` output into (seq, kind, payload) triples."""
    out = []
    for n, line in enumerate(lines, 1):
        line = line.strip()
        if not line:
            continue
        try:
            record = json.loads(line)
            seq = SequenceNumber(int(record["block"]), int(record["offset"]))
            kind = record["kind"]
            payload = bytes.fromhex(record["envelope"]) if kind == TxKind.RESPONSE.value else record["request"]
        except (ValueError, KeyError, TypeError) as exc:
            raise DecodeError(f"chain dump line {n}: {exc}") from exc
        out.append((seq, kind, payload))
    return out


class ChainObserver(Process):
    """Minimal subscriber that records the finalized stream it receives."""

    def __init__(self, node_id: NodeId, net: Network):
        super().__init__(node_id, net)
        self.received: list[tuple[int, FinalizedTx]] = []
        self.route(FinalizedTx, self._on_finalized)

    def _on_finalized(self, _src: NodeId, event: FinalizedTx) -> None:
        self.received.append((self.net.now, event))

    @property
    def stream(self) -> list[tuple[PublicTx, SequenceNumber]]:
        return [(e.tx, e.seq) for _, e in self.received]
