"""Run reports: per-request timelines, aggregates, and their renderings."""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from fractions import Fraction
from typing import Any, Optional

from ..errors import ArgumentError

# (phase name, start mark, end mark); consecutive phases share their marks, so
# the phase latencies of a completed request sum to its end-to-end latency
PHASES = (
    ("finalize", "submitted", "finalized"),
    ("endorse", "finalized", "first_endorsed"),
    ("approve", "first_endorsed", "approved"),
    ("dispatch", "approved", "dispatched"),
    ("schedule", "dispatched", "scheduled"),
    ("provision", "scheduled", "provisioned"),
    ("sign", "provisioned", "response_posted"),
    ("deliver", "response_posted", "client_verified"),
)


@dataclass
class RequestTimeline:
    request_id: str
    config: str
    consumer: int
    submitted: int
    seq: Optional[str] = None
    finalized: Optional[int] = None
    first_endorsed: Optional[int] = None
    approved: Optional[int] = None
    dispatched: Optional[int] = None
    dispatch_index: Optional[int] = None
    scheduled: Optional[int] = None
    scheduled_to: Optional[int] = None
    provisioned: Optional[int] = None
    response_posted: Optional[int] = None
    client_verified: Optional[int] = None
    signing_path: Optional[str] = None
    rejected: Optional[str] = None
    provision_error: Optional[str] = None

    @property
    def status(self) -> str:
        if self.rejected is not None:
            return "rejected"
        if self.provision_error is not None:
            return "provision-failed"
        for phase, _, end in PHASES:
            if getattr(self, end) is None:
                return f"stalled-{phase}"
        return "completed"

    def phase_latencies(self) -> dict[str, int]:
        out = {}
        for phase, start, end in PHASES:
            a, b = getattr(self, start), getattr(self, end)
            if a is None or b is None:
                break
            out[phase] = b - a
        return out

    @property
    def end_to_end(self) -> Optional[int]:
        return None if self.client_verified is None else self.client_verified - self.submitted

    def record(self) -> dict[str, Any]:
        data = asdict(self)
        data["status"] = self.status
        data["record"] = "request"
        return data


@dataclass(frozen=True)
class ShareRow:
    member: int
    proportion: Fraction
    assigned: int
    share: Fraction

    @property
    def gap(self) -> Fraction:
        return self.share - self.proportion


@dataclass
class RunReport:
    scenario: str
    seed: int
    members: int
    exec_mode: str
    scheme: str
    final_time: int
    timed_out: bool
    requests: list[RequestTimeline]
    shares: list[ShareRow]
    conflicts: dict[str, int]
    fallback_invocations: int
    non_cooperators: dict[str, list[int]]
    assumption_violations: list[str]
    checks: dict[str, bool]
    scheduler_state: str
    assignments: list[tuple[str, int]]
    finalized_order: list[str]
    dispatch_order: list[str]
    signing_latencies: list[int]
    messages: dict[str, int]
    trace_digest: str
    auctions: list[dict[str, Any]] = field(default_factory=list)
    catalog_updates: list[dict[str, Any]] = field(default_factory=list)
    faulty: dict[int, str] = field(default_factory=dict)

    @property
    def violated(self) -> bool:
        return bool(self.assumption_violations)

    def status_counts(self) -> dict[str, int]:
        counts: dict[str, int] = {}
        for r in self.requests:
            counts[r.status] = counts.get(r.status, 0) + 1
        return dict(sorted(counts.items()))

    def phase_stats(self) -> dict[str, dict[str, float]]:
        samples: dict[str, list[int]] = {p: [] for p, _, _ in PHASES}
        for r in self.requests:
            for phase, value in r.phase_latencies().items():
                samples[phase].append(value)
        e2e = [r.end_to_end for r in self.requests if r.end_to_end is not None]
        samples["end_to_end"] = e2e
        return {name: _stats(values) for name, values in samples.items()}

    # -- rendering ----------------------------------------------------------
    def records(self) -> list[dict[str, Any]]:
        out: list[dict[str, Any]] = [{
            "record": "run", "scenario": self.scenario, "seed": self.seed, "members": self.members,
            "exec_mode": self.exec_mode, "scheme": self.scheme, "final_time": self.final_time,
            "timed_out": self.timed_out, "statuses": self.status_counts(),
            "conflicts": self.conflicts, "fallback_invocations": self.fallback_invocations,
            "non_cooperators": self.non_cooperators, "assumption_violations": self.assumption_violations,
            "faulty": {str(k): v for k, v in sorted(self.faulty.items())},
            "checks": self.checks, "scheduler_state": self.scheduler_state,
            "messages": self.messages, "trace_digest": self.trace_digest,
            "finalized_order": self.finalized_order, "dispatch_order": self.dispatch_order,
            "signing_latencies": self.signing_latencies,
        }]
        out.extend(r.record() for r in self.requests)
        for phase, stats in self.phase_stats().items():
            out.append({"record": "phase", "phase": phase, **stats})
        for row in self.shares:
            out.append({"record": "share", "member": row.member, "proportion": str(row.proportion),
                        "assigned": row.assigned, "share": str(row.share), "gap": str(row.gap)})
        for index, (request_id, member) in enumerate(self.assignments):
            out.append({"record": "assignment", "index": index, "request_id": request_id, "member": member})
        for a in self.auctions:
            out.append({"record": "auction", **a})
        for u in self.catalog_updates:
            out.append({"record": "catalog_update", **u})
        return out

    @classmethod
    def from_records(cls, records: list[dict[str, Any]]) -> "RunReport":
        """Rebuild a report from ``records()`` output (latency aggregates are recomputed)."""
        try:
            run = next(r for r in records if r.get("record") == "run")
            timelines = []
            for r in records:
                if r.get("record") != "request":
                    continue
                fields = {k: v for k, v in r.items() if k not in ("record", "status")}
                timelines.append(RequestTimeline(**fields))
            shares = [ShareRow(r["member"], Fraction(r["proportion"]), r["assigned"], Fraction(r["share"]))
                      for r in records if r.get("record") == "share"]
            assignments = [(r["request_id"], r["member"]) for r in
                           sorted((r for r in records if r.get("record") == "assignment"), key=lambda r: r["index"])]
            return cls(
                scenario=run["scenario"], seed=run["seed"], members=run["members"], exec_mode=run["exec_mode"],
                scheme=run["scheme"], final_time=run["final_time"], timed_out=run["timed_out"],
                requests=timelines, shares=shares, conflicts=run["conflicts"],
                fallback_invocations=run["fallback_invocations"], non_cooperators=run["non_cooperators"],
                assumption_violations=run["assumption_violations"], checks=run["checks"],
                scheduler_state=run["scheduler_state"], assignments=assignments,
                finalized_order=run["finalized_order"], dispatch_order=run["dispatch_order"],
                signing_latencies=run["signing_latencies"], messages=run["messages"],
                trace_digest=run["trace_digest"],
                auctions=[{k: v for k, v in r.items() if k != "record"} for r in records if r.get("record") == "auction"],
                catalog_updates=[{k: v for k, v in r.items() if k != "record"}
                                 for r in records if r.get("record") == "catalog_update"],
                faulty={int(k): v for k, v in run["faulty"].items()},
            )
        except (StopIteration, KeyError, TypeError) as exc:
            raise ArgumentError(f"not a run report: {exc!r}") from None

    @classmethod
    def from_jsonl(cls, text: str) -> "RunReport":
        try:
            records = [json.loads(line) for line in text.splitlines() if line.strip()]
        except ValueError as exc:
            raise ArgumentError(f"not a run report: {exc}") from None
        return cls.from_records(records)

    def to_jsonl(self) -> str:
        return "".join(json.dumps(r, sort_keys=True, separators=(",", ":")) + "\n" for r in self.records())

    def to_table(self) -> str:
        lines = [f"scenario {self.scenario}  seed {self.seed}  members {self.members}  "
                 f"mode {self.exec_mode}  scheme {self.scheme}  final time {self.final_time} ms"
                 + ("  (horizon reached)" if self.timed_out else "")]
        lines.append("")
        header = ("request", "status", "seq", "member", "e2e ms", "path")
        rows = [(r.request_id, r.status, r.seq or "-", "-" if r.scheduled_to is None else str(r.scheduled_to),
                 "-" if r.end_to_end is None else str(r.end_to_end), r.signing_path or "-") for r in self.requests]
        lines.extend(_align([header] + rows))
        lines.append("")
        stats = self.phase_stats()
        lines.extend(_align([("phase", "n", "mean ms", "p50 ms", "max ms")] + [
            (p, str(s["count"]), _fmt(s["mean"]), _fmt(s["p50"]), _fmt(s["max"])) for p, s in stats.items()]))
        lines.append("")
        lines.extend(_align([("member", "proportion", "assigned", "share")] + [
            (str(r.member), str(r.proportion), str(r.assigned), f"{float(r.share):.3f}") for r in self.shares]))
        lines.append("")
        lines.append("conflicts: " + ", ".join(f"{k}={v}" for k, v in sorted(self.conflicts.items())))
        lines.append(f"fallback invocations: {self.fallback_invocations}")
        for digest, members in sorted(self.non_cooperators.items()):
            lines.append(f"  non-cooperators for {digest}: {members}")
        for a in self.auctions:
            lines.append(f"auction {a['auction_id']}: winner={a['winner']} bid={a['winning_bid']} "
                         f"penalized={a['penalized']}")
        lines.append("checks: " + ", ".join(f"{k}={'ok' if v else 'FAIL'}" for k, v in sorted(self.checks.items())))
        if self.assumption_violations:
            lines.append("ASSUMPTION VIOLATIONS: " + "; ".join(self.assumption_violations))
        return "\n".join(lines) + "\n"


def _stats(values: list[int]) -> dict[str, Any]:
    if not values:
        return {"count": 0, "mean": None, "p50": None, "max": None}
    ordered = sorted(values)
    return {"count": len(values), "mean": round(sum(values) / len(values), 3),
            "p50": ordered[(len(ordered) - 1) // 2], "max": ordered[-1]}


def _fmt(value) -> str:
    return "-" if value is None else (f"{value:.1f}" if isinstance(value, float) else str(value))


def _align(rows: list[tuple[str, ...]]) -> list[str]:
    widths = [max(len(r[i]) for r in rows) for i in range(len(rows[0]))]
    return ["  ".join(cell.ljust(w) for cell, w in zip(row, widths)).rstrip() for row in rows]


def compare_runs(a: RunReport, b: RunReport) -> list[str]:
    """Differences in outcomes (not timings) between two runs of one request trace."""
    ids_a = [r.request_id for r in a.requests]
    ids_b = [r.request_id for r in b.requests]
    configs_a = [(r.request_id, r.config, r.consumer) for r in a.requests]
    configs_b = [(r.request_id, r.config, r.consumer) for r in b.requests]
    if ids_a != ids_b or configs_a != configs_b:
        raise ArgumentError("reports cover different request traces")
    diff = []
    for ra, rb in zip(a.requests, b.requests):
        if ra.status != rb.status:
            diff.append(f"{ra.request_id}: status {ra.status} != {rb.status}")
        if ra.scheduled_to != rb.scheduled_to:
            diff.append(f"{ra.request_id}: scheduled to {ra.scheduled_to} != {rb.scheduled_to}")
    if a.dispatch_order != b.dispatch_order:
        diff.append("dispatch order differs")
    if a.assignments != b.assignments:
        diff.append("assignment sequence differs")
    if a.scheduler_state != b.scheduler_state:
        diff.append(f"scheduler state {a.scheduler_state[:16]} != {b.scheduler_state[:16]}")
    return diff
