"""Scenario files: versioned TOML describing one simulation run.

Validation goes through pydantic so errors carry the offending field path,
e.g. ``delay.jitter_ms: Input should be greater than or equal to 0``.
"""
from __future__ import annotations

import copy
import sys
from dataclasses import dataclass
from importlib import resources
from pathlib import Path
from typing import Any, Literal, Optional

from pydantic import BaseModel, ConfigDict, Field, ValidationError, model_validator

from ..errors import ConfigurationError
from ..federation import PricingPolicy, VmConfig, VmOffering, default_window_capacity
from ..netsim import DelayModel, FaultBehavior
from ..privchain import ExecMode
from ..pubchain import FinalityParams

if sys.version_info >= (3, 11):
    import tomllib
else:  # pragma: no cover
    import tomli as tomllib

FORMAT = "consortium-scenario"
FORMAT_VERSION = 1


class _Model(BaseModel):
    model_config = ConfigDict(extra="forbid")


class DelaySpec(_Model):
    base_latency_ms: int = Field(ge=0)
    jitter_ms: int = Field(0, ge=0)
    drop_probability: float = Field(0.0, ge=0, lt=1)
    delta_bound_ms: Optional[int] = Field(None, ge=0)


class FinalitySpec(_Model):
    confirmation_depth: int = Field(2, ge=0)
    fork_probability: float = Field(0.0, ge=0, le=1)
    fork_resolution_depth: int = Field(1, ge=1)
    mine_interval_ms: int = Field(1000, ge=1)


class ByzantineSpec(_Model):
    member: int = Field(ge=0)
    behavior: FaultBehavior


class ConfigSpec(_Model):
    cpu: int = Field(ge=1)
    mem: int = Field(gt=0)
    storage: int = Field(gt=0)
    location: str

    def build(self) -> VmConfig:
        return VmConfig(self.cpu, self.mem, self.storage, self.location)


class OfferingSpec(ConfigSpec):
    member: int = Field(ge=0)
    quantity: int = Field(ge=0)
    price: int = Field(gt=0)


class RequestSpec(ConfigSpec):
    at_ms: int = Field(0, ge=0)
    count: int = Field(1, ge=1)
    interval_ms: int = Field(0, ge=0)
    duration: int = Field(3600, ge=1)
    consumer: int = Field(0, ge=0)


class UpdatedOfferingSpec(ConfigSpec):
    quantity: int = Field(ge=0)
    price: int = Field(gt=0)


class CatalogUpdateSpec(_Model):
    at_ms: int = Field(ge=0)
    member: int = Field(ge=0)
    offerings: list[UpdatedOfferingSpec]


class BidSpec(_Model):
    member: int = Field(ge=0)
    bid: int
    reveal: Optional[int] = None     # bid actually revealed; defaults to ``bid``
    withhold_reveal: bool = False


class AuctionSpec(_Model):
    id: str
    initiator: int = Field(ge=0)
    spec: str = ""
    start_ms: int = Field(ge=0)
    commit_window_ms: int = Field(gt=0)
    reveal_window_ms: int = Field(gt=0)
    bids: list[BidSpec] = []


class ScenarioSpec(_Model):
    format: Literal["consortium-scenario"]
    version: Literal[1]
    name: str = "scenario"
    seed: int = Field(0, ge=0, lt=2 ** 64)
    members: int = Field(ge=2)
    consumers: int = Field(1, ge=1)
    scheme: Literal["arithmetic", "bls12-381"] = "arithmetic"
    exec_mode: ExecMode = ExecMode.ORDER_EXECUTE
    tree_arity: int = Field(2, ge=1)
    window_capacity: Optional[int] = Field(None, ge=1)
    pricing_policy: PricingPolicy = PricingPolicy.PROFIT_MAX
    horizon_ms: int = Field(3_600_000, ge=1)
    provision_delay_ms: int = Field(0, ge=0)
    batch_timeout_ms: int = Field(50, ge=1)
    compute_cost_per_child_ms: int = Field(0, ge=0)
    offchain_timeout_ms: Optional[int] = Field(None, ge=1)
    retry_limit: int = Field(10, ge=0)
    delay: DelaySpec
    finality: FinalitySpec = FinalitySpec()
    byzantine: list[ByzantineSpec] = []
    offerings: list[OfferingSpec]
    requests: list[RequestSpec] = []
    catalog_updates: list[CatalogUpdateSpec] = []
    auctions: list[AuctionSpec] = []

    @model_validator(mode="after")
    def _cross_checks(self):
        n = self.members
        if self.tree_arity > n - 1:
            raise ValueError(f"tree_arity must be at most members - 1 = {n - 1}")
        for where, member in ([("byzantine", b.member) for b in self.byzantine]
                              + [("offerings", o.member) for o in self.offerings]
                              + [("catalog_updates", u.member) for u in self.catalog_updates]
                              + [("auctions", a.initiator) for a in self.auctions]
                              + [("auctions.bids", b.member) for a in self.auctions for b in a.bids]):
            if member >= n:
                raise ValueError(f"{where}: member {member} is outside 0..{n - 1}")
        if len({b.member for b in self.byzantine}) != len(self.byzantine):
            raise ValueError("byzantine: a member is listed twice")
        for r in self.requests:
            if r.consumer >= self.consumers:
                raise ValueError(f"requests: consumer {r.consumer} is outside 0..{self.consumers - 1}")
        if self.finality.fork_probability > 0 and \
                self.finality.confirmation_depth < self.finality.fork_resolution_depth:
            raise ValueError("finality: confirmation_depth must be >= fork_resolution_depth when forks can occur")
        d = self.delay
        delta = d.delta_bound_ms if d.delta_bound_ms is not None else d.base_latency_ms + d.jitter_ms
        if d.base_latency_ms + d.jitter_ms > delta:
            raise ValueError("delay: base_latency_ms + jitter_ms exceeds delta_bound_ms")
        return self


@dataclass(frozen=True)
class PlannedRequest:
    request_id: str
    submit_at: int
    config: VmConfig
    duration: int
    consumer: int


@dataclass(frozen=True)
class Scenario:
    """Validated scenario with derived model objects."""
    spec: ScenarioSpec
    raw: dict

    @property
    def name(self) -> str:
        return self.spec.name

    @property
    def seed(self) -> int:
        return self.spec.seed

    @property
    def members(self) -> int:
        return self.spec.members

    @property
    def delay(self) -> DelayModel:
        d = self.spec.delay
        return DelayModel(d.base_latency_ms, d.jitter_ms, d.drop_probability, d.delta_bound_ms)

    @property
    def finality(self) -> FinalityParams:
        f = self.spec.finality
        return FinalityParams(f.confirmation_depth, f.fork_probability, f.fork_resolution_depth, f.mine_interval_ms)

    @property
    def window_capacity(self) -> int:
        return self.spec.window_capacity or default_window_capacity(self.members)

    def offerings(self) -> dict[int, tuple[VmOffering, ...]]:
        out: dict[int, list[VmOffering]] = {m: [] for m in range(self.members)}
        for o in self.spec.offerings:
            out[o.member].append(VmOffering(o.build(), o.quantity, o.price))
        return {m: tuple(v) for m, v in out.items()}

    def request_trace(self) -> list[PlannedRequest]:
        trace = []
        for r in self.spec.requests:
            for k in range(r.count):
                trace.append((r.at_ms + k * r.interval_ms, r))
        trace.sort(key=lambda p: p[0])
        return [PlannedRequest(f"req-{i:04d}", at, r.build(), r.duration, r.consumer)
                for i, (at, r) in enumerate(trace)]

    def faults(self) -> dict[int, FaultBehavior]:
        return {b.member: b.behavior for b in self.spec.byzantine}


def _format_errors(exc: ValidationError) -> str:
    lines = []
    for err in exc.errors():
        path = ".".join(str(p) for p in err["loc"]) or "<root>"
        lines.append(f"{path}: {err['msg']}")
    return "; ".join(lines)


def scenario_from_dict(raw: dict) -> Scenario:
    if raw.get("format") != FORMAT:
        raise ConfigurationError(f"format: expected {FORMAT!r} header, got {raw.get('format')!r}")
    if raw.get("version") != FORMAT_VERSION:
        raise ConfigurationError(f"version: unsupported scenario version {raw.get('version')!r}")
    try:
        spec = ScenarioSpec.model_validate(raw)
    except ValidationError as exc:
        raise ConfigurationError(_format_errors(exc)) from None
    return Scenario(spec, copy.deepcopy(raw))


def parse_scenario(text: str) -> Scenario:
    try:
        raw = tomllib.loads(text)
    except tomllib.TOMLDecodeError as exc:
        raise ConfigurationError(f"scenario is not valid TOML: {exc}") from None
    return scenario_from_dict(raw)


def builtin_scenarios() -> list[str]:
    root = resources.files("consortium_bridge") / "scenarios"
    return sorted(p.name[:-5] for p in root.iterdir() if p.name.endswith(".toml"))


def load_scenario(path: str | Path) -> Scenario:
    """Load a scenario file, or a shipped scenario by name (e.g. ``testbed-3``)."""
    p = Path(path)
    if p.is_file():
        return parse_scenario(p.read_text())
    if str(path) in builtin_scenarios():
        text = (resources.files("consortium_bridge") / "scenarios" / f"{path}.toml").read_text()
        return parse_scenario(text)
    raise ConfigurationError(f"scenario {str(path)!r} not found (shipped: {', '.join(builtin_scenarios())})")


def with_override(scenario: Scenario, dotted: str, value: Any) -> Scenario:
    """Copy of ``scenario`` with one (possibly nested) key replaced."""
    raw = copy.deepcopy(scenario.raw)
    node = raw
    *parents, leaf = dotted.split(".")
    for key in parents:
        node = node.setdefault(key, {})
        if not isinstance(node, dict):
            raise ConfigurationError(f"{dotted}: {key} is not a table")
    node[leaf] = value
    return scenario_from_dict(raw)
