"""Consortium business logic: catalog, contributions, fair scheduling, pricing, auctions.

All ratios are exact ``Fraction`` values so every replica reaches bit-identical
decisions. Ties are always broken by the lowest member ordinal.
"""
from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field, replace
from enum import Enum
from fractions import Fraction
from typing import Iterable, Mapping, Optional, Sequence

from .encoding import hexdigest
from .errors import ArgumentError, ConfigurationError, ContractError
from .privchain import Contract, ExecMode
from .propagation import request_digest, threshold_met


@dataclass(frozen=True, order=True)
class VmConfig:
    cpu: int
    mem: int
    storage: int
    location: str

    def __post_init__(self):
        if self.cpu < 1:
            raise ConfigurationError("cpu must be >= 1")
        if self.mem <= 0 or self.storage <= 0:
            raise ConfigurationError("mem and storage must be positive")

    def label(self) -> str:
        return f"{self.cpu}c/{self.mem}g/{self.storage}g@{self.location}"


@dataclass(frozen=True)
class VmOffering:
    config: VmConfig
    quantity: int
    price: int

    def __post_init__(self):
        if self.quantity < 0:
            raise ConfigurationError("quantity must be >= 0")
        if self.price <= 0:
            raise ConfigurationError("price must be positive")


Offerings = Mapping[int, Sequence[VmOffering]]


# -- contributions -----------------------------------------------------------

@dataclass(frozen=True)
class ContributionTable:
    contributions: tuple[tuple[int, int], ...]
    proportions: tuple[tuple[int, Fraction], ...]

    @property
    def members(self) -> list[int]:
        return [m for m, _ in self.proportions]

    def proportion(self, member: int) -> Fraction:
        return dict(self.proportions).get(member, Fraction(0))

    def contribution(self, member: int) -> int:
        return dict(self.contributions).get(member, 0)


def member_contribution(offerings: Iterable[VmOffering]) -> int:
    return sum(o.config.cpu * o.quantity for o in offerings)


def contribution_proportions(offerings: Offerings) -> ContributionTable:
    """Weighted vCPU capacity of each member and its exact share of the total."""
    if not offerings:
        raise ArgumentError("no members in the federation")
    contributions = {m: member_contribution(offerings[m]) for m in sorted(offerings)}
    total = sum(contributions.values())
    if total <= 0:
        raise ArgumentError("federation offers no capacity")
    return ContributionTable(
        tuple(contributions.items()),
        tuple((m, Fraction(k, total)) for m, k in contributions.items()),
    )


# -- scheduling window and fair scheduler -----------------------------------

@dataclass(frozen=True)
class SchedulingWindow:
    capacity: int
    entries: tuple[int, ...] = ()

    def __post_init__(self):
        if self.capacity < 1:
            raise ConfigurationError("window capacity must be >= 1")
        if len(self.entries) > self.capacity:
            raise ConfigurationError("window holds more entries than its capacity")

    def push(self, member: int) -> "SchedulingWindow":
        entries = self.entries + (member,)
        if len(entries) > self.capacity:
            entries = entries[1:]
        return replace(self, entries=entries)

    def share(self, member: int) -> Fraction:
        if not self.entries:
            return Fraction(0)
        return Fraction(self.entries.count(member), len(self.entries))


def scheduling_deficits(table: ContributionTable, window: SchedulingWindow) -> dict[int, Fraction]:
    return {m: p - window.share(m) for m, p in table.proportions}


def fair_schedule(request, table: ContributionTable, window: SchedulingWindow) -> tuple[int, SchedulingWindow]:
    """Pick the member furthest below its contribution share in the recent window.

    Returns the chosen member and the window with that choice appended (the
    oldest entry is evicted past capacity). ``request`` does not influence the
    choice; it is accepted so the call mirrors the contract invocation.
    """
    if not table.proportions:
        raise ArgumentError("empty contribution table")
    deficits = scheduling_deficits(table, window)
    # max deficit, lowest ordinal on ties
    chosen = min(deficits, key=lambda m: (-deficits[m], m))
    return chosen, window.push(chosen)


def default_window_capacity(members: int) -> int:
    return 4 * members


# -- catalog and pricing ------------------------------------------------------

class PricingPolicy(str, Enum):
    PROFIT_MAX = "profit-max"
    USER_FRIENDLY = "user-friendly"


def federation_catalog(offerings: Offerings) -> frozenset[VmConfig]:
    return frozenset(o.config for m in offerings for o in offerings[m])


def catalog_price(config: VmConfig, offerings: Offerings, policy: PricingPolicy | str,
                  epsilon: int = 1) -> Optional[int]:
    """Catalog price one unit above the max (or min) cost of available offerings.

    Returns None when no member has the configuration in stock.
    """
    policy = PricingPolicy(policy)
    costs = [o.price for m in offerings for o in offerings[m] if o.config == config and o.quantity > 0]
    if not costs:
        return None
    base = max(costs) if policy is PricingPolicy.PROFIT_MAX else min(costs)
    return base + epsilon


def price_catalog(offerings: Offerings, policy: PricingPolicy | str, epsilon: int = 1) -> dict[VmConfig, Optional[int]]:
    return {c: catalog_price(c, offerings, policy, epsilon) for c in sorted(federation_catalog(offerings))}


def catalog_info(prices: Mapping[VmConfig, Optional[int]]) -> bytes:
    """Serialize a priced catalog as the public information payload."""
    entries = [
        {"cpu": c.cpu, "mem": c.mem, "storage": c.storage, "location": c.location, "price": p}
        for c, p in sorted(prices.items())
    ]
    return json.dumps({"catalog": entries}, sort_keys=True, separators=(",", ":")).encode()


def parse_catalog_info(info: bytes) -> dict[VmConfig, Optional[int]]:
    data = json.loads(info.decode())
    return {VmConfig(e["cpu"], e["mem"], e["storage"], e["location"]): e["price"] for e in data["catalog"]}


# -- provisioning stub ----------------------------------------------------------

def take_offering(offerings: Sequence[VmOffering], config: VmConfig) -> Optional[tuple[VmOffering, ...]]:
    """Decrement the first in-stock offering of ``config``; None when none is left."""
    for i, o in enumerate(offerings):
        if o.config == config and o.quantity > 0:
            updated = list(offerings)
            updated[i] = replace(o, quantity=o.quantity - 1)
            return tuple(updated)
    return None


def provision_vm(member: int, request, offerings: Offerings) -> tuple[bytes, dict[int, tuple[VmOffering, ...]]]:
    """Reserve one VM of the requested configuration from ``member``.

    Returns opaque access credentials and the updated offerings; raises
    ContractError when the member has no unit left.
    """
    updated = take_offering(offerings.get(member, ()), request.vm_config)
    if updated is None:
        raise ContractError(f"member {member} has no {request.vm_config.label()} left")
    new = {m: tuple(offerings[m]) for m in offerings}
    new[member] = updated
    credential = hashlib.sha256(f"vm-access|{member}|{request.request_id}".encode()).hexdigest().encode()
    return credential, new


# -- sealed-bid auction -------------------------------------------------------

class AuctionPhase(str, Enum):
    COMMIT = "commit"
    REVEAL = "reveal"
    SETTLED = "settled"


def bid_commitment(bid: int, nonce: bytes) -> str:
    return hashlib.sha256(int(bid).to_bytes(16, "big", signed=True) + bytes(nonce)).hexdigest()


@dataclass(frozen=True)
class AuctionState:
    auction_id: str
    initiator: int
    request_spec: str
    deadline: int
    reveal_deadline: int
    commitments: tuple[tuple[int, str], ...] = ()
    reveals: tuple[tuple[int, int, bytes], ...] = ()
    phase: AuctionPhase = AuctionPhase.COMMIT
    winner: Optional[int] = None
    winning_bid: Optional[int] = None
    penalized: frozenset[int] = field(default_factory=frozenset)

    def phase_at(self, now: int) -> AuctionPhase:
        if self.phase is AuctionPhase.SETTLED:
            return self.phase
        return AuctionPhase.COMMIT if now < self.deadline else AuctionPhase.REVEAL


def auction_start(auction_id: str, initiator: int, request_spec: str, deadline: int,
                  reveal_window: int) -> AuctionState:
    if reveal_window <= 0:
        raise ContractError("reveal window must be positive")
    return AuctionState(auction_id, initiator, request_spec, deadline, deadline + reveal_window)


def auction_commit(state: AuctionState, member: int, commitment: str, now: int) -> AuctionState:
    if state.phase_at(now) is not AuctionPhase.COMMIT:
        raise ContractError("commit after deadline")
    if member == state.initiator:
        raise ContractError("initiator cannot bid on its own auction")
    if member in dict(state.commitments):
        raise ContractError("member already committed")
    return replace(state, commitments=state.commitments + ((member, commitment),))


def auction_reveal(state: AuctionState, member: int, bid: int, nonce: bytes, now: int) -> AuctionState:
    """Record a reveal; a reveal that does not open the commitment marks the member penalized."""
    if state.phase_at(now) is not AuctionPhase.REVEAL or now >= state.reveal_deadline:
        raise ContractError("reveal outside the reveal window")
    committed = dict(state.commitments).get(member)
    if committed is None:
        raise ContractError("no commitment from member")
    if any(r[0] == member for r in state.reveals) or member in state.penalized:
        raise ContractError("member already revealed")
    if bid_commitment(bid, nonce) != committed:
        return replace(state, penalized=state.penalized | {member})
    return replace(state, reveals=state.reveals + ((member, int(bid), bytes(nonce)),))


def auction_settle(state: AuctionState, now: int) -> AuctionState:
    """Lowest valid bid wins (ties to the lowest ordinal); silent committers are penalized."""
    if state.phase is AuctionPhase.SETTLED:
        raise ContractError("auction already settled")
    if now < state.reveal_deadline:
        raise ContractError("reveal window still open")
    valid = [(bid, member) for member, bid, _ in state.reveals]
    revealed = {member for _, member in valid}
    penalized = state.penalized | {m for m, _ in state.commitments if m not in revealed}
    winner = winning_bid = None
    if valid:
        winning_bid, winner = min(valid)
    return replace(state, phase=AuctionPhase.SETTLED, winner=winner, winning_bid=winning_bid,
                   penalized=frozenset(penalized))


def request_key(request) -> str:
    return hexdigest(request, 32)


# -- private-chain contracts ------------------------------------------------------

OFFERINGS_CONTRACT = "offerings"
SCHEDULING_CONTRACT = "scheduling"
AUCTION_CONTRACT = "auction"


def _offerings_dict(state) -> dict[int, tuple[VmOffering, ...]]:
    return dict(state["offerings"])


def _freeze_offerings(offerings: Offerings) -> tuple[tuple[int, tuple[VmOffering, ...]], ...]:
    return tuple((m, tuple(offerings[m])) for m in sorted(offerings))


@dataclass(frozen=True)
class CatalogProposal:
    member: int
    offerings: tuple[VmOffering, ...]
    endorsers: tuple[int, ...]
    applied: bool = False

    @property
    def key(self) -> str:
        return hexdigest((self.member, self.offerings), 32)


def catalog_digest(offerings: Offerings, policy: PricingPolicy | str) -> str:
    """Hex SHA-256 of the priced catalog payload that members sign for publication."""
    return hashlib.sha256(catalog_info(price_catalog(offerings, policy))).hexdigest()


def offerings_contract(n: int, offerings: Offerings,
                       policy: PricingPolicy | str = PricingPolicy.PROFIT_MAX) -> Contract:
    """Member offerings, the contribution table, catalog updates and provisioning."""

    def propose(state, args, ctx):
        proposal = CatalogProposal(ctx.submitter, tuple(args), (ctx.submitter,))
        proposals = dict(state["proposals"])
        if proposal.key in proposals:
            raise ContractError("identical catalog update already proposed")
        proposals[proposal.key] = proposal
        state["proposals"] = tuple(sorted(proposals.items()))
        return _maybe_apply(state, proposal.key)

    def endorse(state, key, ctx):
        proposals = dict(state["proposals"])
        proposal = proposals.get(key)
        if proposal is None:
            raise ContractError("unknown catalog update")
        if ctx.submitter in proposal.endorsers:
            raise ContractError("member already endorsed this update")
        proposals[key] = replace(proposal, endorsers=tuple(sorted(proposal.endorsers + (ctx.submitter,))))
        state["proposals"] = tuple(sorted(proposals.items()))
        return _maybe_apply(state, key)

    def _maybe_apply(state, key):
        proposals = dict(state["proposals"])
        proposal = proposals[key]
        if proposal.applied or not threshold_met(len(proposal.endorsers), n):
            return False
        current = _offerings_dict(state)
        current[proposal.member] = proposal.offerings
        state["offerings"] = _freeze_offerings(current)
        state["table"] = contribution_proportions(current)
        proposals[key] = replace(proposal, applied=True)
        state["proposals"] = tuple(sorted(proposals.items()))
        state["catalog_digests"] = state["catalog_digests"] + (catalog_digest(current, policy),)
        return True

    def provision(state, args, ctx):
        request, response_digest = args
        assigned = {a.request_digest: a.member for a in ctx.ledger.query_state(SCHEDULING_CONTRACT)["assignments"]}
        if assigned.get(request_digest(request)) != ctx.submitter:
            raise ContractError("request is not scheduled to this member")
        if any(r[0] == request.request_id for r in state["responses"]):
            raise ContractError("request already provisioned")
        credential, updated = provision_vm(ctx.submitter, request, _offerings_dict(state))
        state["offerings"] = _freeze_offerings(updated)
        state["responses"] = state["responses"] + ((request.request_id, ctx.submitter, response_digest),)
        return credential

    initial = {
        "offerings": _freeze_offerings(offerings),
        "table": contribution_proportions(offerings),
        "proposals": (),
        "responses": (),
        "catalog_digests": (catalog_digest(offerings, policy),),
    }
    return Contract(OFFERINGS_CONTRACT, {"propose_catalog": propose, "endorse_catalog": endorse,
                                         "provision": provision}, initial, ExecMode.ORDER_EXECUTE)


@dataclass(frozen=True)
class Assignment:
    index: int
    request_digest: str
    member: int


def scheduling_contract(capacity: int, mode="order-execute", dispatch_contract: str = "propagation") -> Contract:
    """The fair scheduler, assigning dispatched requests one at a time in dispatch order.

    ``schedule_next`` takes no arguments: it assigns the oldest dispatched
    request that has no member yet. Any member may invoke it, so concurrent
    invocations under execute-order read the same ``next_index`` and all but
    one of them conflict.
    """

    def schedule_next(state, _args, ctx):
        index = state["next_index"]
        dispatched = ctx.ledger.query_state(dispatch_contract)["dispatched"]
        if index >= len(dispatched):
            raise ContractError("no dispatched request is waiting to be scheduled")
        digest = dispatched[index]
        table = ctx.ledger.query_state(OFFERINGS_CONTRACT)["table"]
        chosen, window = fair_schedule(digest, table, state["window"])
        assignment = Assignment(index, digest, chosen)
        state["window"] = window
        state["assignments"] = state["assignments"] + (assignment,)
        state["next_index"] = index + 1
        return assignment

    initial = {"window": SchedulingWindow(capacity), "assignments": (), "next_index": 0}
    return Contract(SCHEDULING_CONTRACT, {"schedule_next": schedule_next}, initial, mode)


def scheduling_backlog(ledger, dispatch_contract: str = "propagation") -> int:
    """Dispatched requests that still wait for a scheduling decision."""
    dispatched = ledger.query_state(dispatch_contract)["dispatched"]
    return len(dispatched) - ledger.query_state(SCHEDULING_CONTRACT)["next_index"]


def auction_contract() -> Contract:
    """Sealed-bid auctions keyed by id; the block timestamp is the clock."""

    def _get(state, auction_id) -> AuctionState:
        auction = state.get(auction_id)
        if auction is None:
            raise ContractError(f"unknown auction {auction_id!r}")
        return auction

    def start(state, args, ctx):
        auction_id, spec, deadline, reveal_window = args
        if auction_id in state:
            raise ContractError(f"auction {auction_id!r} exists")
        state[auction_id] = auction_start(auction_id, ctx.submitter, spec, deadline, reveal_window)
        return auction_id

    def commit(state, args, ctx):
        auction_id, commitment = args
        state[auction_id] = auction_commit(_get(state, auction_id), ctx.submitter, commitment, ctx.time)

    def reveal(state, args, ctx):
        auction_id, bid, nonce = args
        auction = auction_reveal(_get(state, auction_id), ctx.submitter, bid, nonce, ctx.time)
        state[auction_id] = auction
        return ctx.submitter not in auction.penalized

    def settle(state, auction_id, ctx):
        auction = auction_settle(_get(state, auction_id), ctx.time)
        state[auction_id] = auction
        return auction.winner

    return Contract(AUCTION_CONTRACT, {"start": start, "commit": commit, "reveal": reveal, "settle": settle},
                    {}, ExecMode.ORDER_EXECUTE)
