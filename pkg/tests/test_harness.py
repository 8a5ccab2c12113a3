from __future__ import annotations

from fractions import Fraction

import pytest

from consortium_bridge.errors import ArgumentError, ConfigurationError
from consortium_bridge.harness import (PHASES, RunReport, builtin_scenarios, compare_runs, load_scenario,
                                       parse_scenario, run_scenario, with_override)

MINIMAL = """
format = "consortium-scenario"
version = 1
members = 4
[delay]
base_latency_ms = 20
[[offerings]]
member = 0
cpu = 1
mem = 2
storage = 10
location = "eu"
quantity = 3
price = 5
[[requests]]
cpu = 1
mem = 2
storage = 10
location = "eu"
count = 2
"""


@pytest.fixture(scope="module")
def testbed():
    return run_scenario("testbed-3")


def test_shipped_scenarios_present():
    assert builtin_scenarios() == ["byzantine-4", "mininet-32", "testbed-3"]


@pytest.mark.parametrize("text,fragment", [
    (MINIMAL.replace("base_latency_ms = 20", "base_latency_ms = -5"), "delay.base_latency_ms"),
    (MINIMAL.replace("members = 4", "members = 4\ntree_arity = 9"), "tree_arity"),
    (MINIMAL.replace("member = 0", "member = 7"), "offerings: member 7"),
    (MINIMAL.replace("version = 1", "version = 3"), "version"),
    (MINIMAL.replace('format = "consortium-scenario"', ""), "format"),
    (MINIMAL + "\nunknown_key = 1\n", "unknown_key"),
    ("members = [", "not valid TOML"),
])
def test_invalid_scenarios_name_the_field(text, fragment):
    with pytest.raises(ConfigurationError) as err:
        parse_scenario(text)
    assert fragment in str(err.value)


def test_missing_scenario_file():
    with pytest.raises(ConfigurationError):
        load_scenario("/nonexistent/scenario.toml")


def test_override_nested_key():
    s = with_override(parse_scenario(MINIMAL), "delay.jitter_ms", 7)
    assert s.spec.delay.jitter_ms == 7
    with pytest.raises(ConfigurationError):
        with_override(s, "delay.jitter_ms", -1)


def test_minimal_scenario_completes():
    report = run_scenario(parse_scenario(MINIMAL))
    assert report.status_counts() == {"completed": 2}
    assert all(report.checks.values())


def test_testbed_completes_with_fair_shares(testbed):
    assert testbed.status_counts() == {"completed": 64}
    assert all(testbed.checks.values())
    for row in testbed.shares:
        assert abs(row.share - row.proportion) <= Fraction(1, 30)
    assert [r.proportion for r in testbed.shares] == [Fraction(1, 2), Fraction(3, 10), Fraction(1, 5)]
    assert testbed.auctions[0]["winner"] == 1


def test_report_completeness_and_additivity(testbed):
    assert len(testbed.requests) == len({r.request_id for r in testbed.requests}) == 64
    for r in testbed.requests:
        phases = r.phase_latencies()
        assert list(phases) == [p for p, _, _ in PHASES]
        assert sum(phases.values()) == r.end_to_end


def test_dispatch_follows_finalized_order(testbed):
    assert testbed.dispatch_order == [rid for rid in testbed.finalized_order]


def test_same_seed_is_byte_identical(testbed):
    assert run_scenario("testbed-3").to_jsonl() == testbed.to_jsonl()


def test_jsonl_roundtrip_compares_equal(testbed):
    again = RunReport.from_jsonl(testbed.to_jsonl())
    assert compare_runs(testbed, again) == []
    assert again.to_jsonl() == testbed.to_jsonl()
    with pytest.raises(ArgumentError):
        RunReport.from_jsonl('{"record": "phase"}\n')


def test_different_seed_keeps_dispatch_order(testbed):
    other = run_scenario(with_override(load_scenario("testbed-3"), "seed", 99))
    assert other.dispatch_order == testbed.dispatch_order
    assert other.to_jsonl() != testbed.to_jsonl()


def test_execute_order_matches_order_execute(testbed):
    eo = run_scenario(with_override(load_scenario("testbed-3"), "exec_mode", "execute-order"))
    assert compare_runs(testbed, eo) == []
    assert eo.scheduler_state == testbed.scheduler_state
    assert eo.conflicts["retries"] >= 1 and testbed.conflicts["retries"] == 0


def test_compare_rejects_different_traces(testbed):
    with pytest.raises(ArgumentError):
        compare_runs(testbed, run_scenario(parse_scenario(MINIMAL)))


def test_byzantine_scenario_reports_non_cooperator():
    report = run_scenario("byzantine-4")
    assert report.fallback_invocations >= 1
    assert report.non_cooperators and all(v == [1] for v in report.non_cooperators.values())
    assert not report.violated and all(report.checks.values())
    assert report.catalog_updates


def test_too_many_faults_flagged():
    s = with_override(load_scenario("byzantine-4"), "byzantine",
                      [{"member": 1, "behavior": "silent"}, {"member": 2, "behavior": "silent"}])
    report = run_scenario(s)
    assert report.violated
    assert "exceed the fault bound" in report.assumption_violations[0]
    assert len(report.requests) == 6


def test_table_rendering_mentions_checks(testbed):
    table = testbed.to_table()
    assert "checks:" in table and "req-0063" in table and "proportion" in table
