import json

import pytest

from deftsim import (
    BucketProfile,
    ClusterSpec,
    ComparisonError,
    LinkSpec,
    ModelProfile,
    PartitionConfig,
    ScheduleMismatchError,
    SimConfig,
    build_schedule,
    compare,
    export_chrome_trace,
    simulate,
)
from deftsim.scheduler import Schedule, ScheduleDecision, baseline_wfbp

from conftest import make_uniform_profile


def one_bucket_profile():
    return ModelProfile(
        name="tiny", buckets=(BucketProfile(1, 100, 10, 20, 25),))


class TestSteadyState:
    def test_wfbp_one_bucket_iteration_time(self, fast_only_cluster):
        # fwd 10 + bwd 20 + unoverlappable comm 25 = 55us, every iteration
        p = one_bucket_profile()
        report = simulate(baseline_wfbp(p, fast_only_cluster, 10))
        assert report.iteration_times_us == [55] * 10
        assert report.total_time_us == 550

    def test_wfbp_single_bucket_comm_never_overlaps(self, fast_only_cluster):
        # the lone bucket's communication is a hard dependency: it sits
        # between its backward pass and the next forward pass regardless of
        # how short it is
        p = ModelProfile(name="lo", buckets=(BucketProfile(1, 100, 10, 20, 5),))
        report = simulate(baseline_wfbp(p, fast_only_cluster, 10))
        assert report.iteration_times_us[1:-1] == [35] * 8


class TestBubbles:
    @pytest.mark.parametrize("n", [12, 24])
    def test_deft_zero_bubble_when_plan_fits(self, n, equal_dual_cluster):
        # CR_multi <= 1: all communication fits the per-stage knapsacks
        p = make_uniform_profile(n)
        s = build_schedule("deft", p, equal_dual_cluster,
                           PartitionConfig(partition_size=10**12), 100)
        report = simulate(s)
        assert report.bubble_ratio == 0.0
        assert report.bubble_time_us == 0

    def test_deft_never_stalls_even_over_capacity(self, equal_dual_cluster):
        p = make_uniform_profile(48)  # CR_multi = 2
        s = build_schedule("deft", p, equal_dual_cluster,
                           PartitionConfig(partition_size=10**12), 100)
        assert simulate(s).bubble_ratio == 0.0

    def test_wfbp_high_coverage_has_bubbles(self, vgg_profile, fast_only_cluster):
        report = simulate(baseline_wfbp(vgg_profile, fast_only_cluster, 20))
        assert report.bubble_ratio > 0.3


class TestAccounting:
    def test_comm_work_conservation(self, vgg_profile, fast_only_cluster):
        iterations = 7
        report = simulate(baseline_wfbp(vgg_profile, fast_only_cluster, iterations))
        comm_events = [e for e in report.timeline if e.kind == "comm_end"]
        assert len(comm_events) == iterations * vgg_profile.n_buckets
        busy = sum(e.end_us - e.start_us for e in comm_events)
        assert busy == iterations * vgg_profile.total_comm_fast_us

    def test_compute_work_conservation(self, vgg_profile, fast_only_cluster):
        report = simulate(baseline_wfbp(vgg_profile, fast_only_cluster, 5))
        fwd = sum(e.end_us - e.start_us for e in report.timeline
                  if e.kind == "forward_compute")
        bwd = sum(e.end_us - e.start_us for e in report.timeline
                  if e.kind == "backward_compute")
        assert fwd == 5 * vgg_profile.total_forward_us
        assert bwd == 5 * vgg_profile.total_backward_us

    def test_updates_counted(self, vgg_profile, fast_only_cluster):
        report = simulate(baseline_wfbp(vgg_profile, fast_only_cluster, 13))
        assert report.updates_performed == 13

    def test_determinism(self, vgg_profile, dual_cluster):
        cfg = PartitionConfig(partition_size=6_500_000, mu=1.65)
        s = build_schedule("deft", vgg_profile, dual_cluster, cfg, 30)
        r1, r2 = simulate(s), simulate(s)
        assert r1.timeline == r2.timeline
        assert r1.summary_dict() == r2.summary_dict()

    def test_startup_cost_extends_comm(self, fast_only_cluster):
        p = one_bucket_profile()
        cl = ClusterSpec(links=(LinkSpec("fast", startup_us=7),))
        base = simulate(baseline_wfbp(p, fast_only_cluster, 5)).total_time_us
        with_startup = simulate(baseline_wfbp(p, cl, 5)).total_time_us
        assert with_startup == base + 5 * 7

    def test_jitter_reproducible_by_seed(self, vgg_profile, fast_only_cluster):
        s = baseline_wfbp(vgg_profile, fast_only_cluster, 10)
        a = simulate(s, SimConfig(jitter=0.1, seed=4))
        b = simulate(s, SimConfig(jitter=0.1, seed=4))
        c = simulate(s, SimConfig(jitter=0.1, seed=5))
        assert a.total_time_us == b.total_time_us
        assert a.total_time_us != c.total_time_us


class TestValidationPaths:
    def test_unknown_bucket_in_plan(self, fast_only_cluster):
        p = one_bucket_profile()
        bad = Schedule(
            scheme="wfbp", profile=p, cluster=fast_only_cluster,
            decisions=[ScheduleDecision(
                iteration=0, stage="backward", forward_plan={},
                backward_plan={"fast": (99,)}, fresh_ids=frozenset({99}),
                merged=(), update_events=(), case_taken=None,
            )],
            delayed_updates=False, iterations=1,
        )
        with pytest.raises(ScheduleMismatchError, match="unknown buckets"):
            simulate(bad)

    def test_unknown_link_in_plan(self, fast_only_cluster):
        p = one_bucket_profile()
        bad = Schedule(
            scheme="wfbp", profile=p, cluster=fast_only_cluster,
            decisions=[ScheduleDecision(
                iteration=0, stage="backward", forward_plan={},
                backward_plan={"infiniband": (1,)}, fresh_ids=frozenset({1}),
                merged=(), update_events=(), case_taken=None,
            )],
            delayed_updates=False, iterations=1,
        )
        with pytest.raises(ScheduleMismatchError, match="unknown link"):
            simulate(bad)


class TestCompare:
    def test_empty_rejected(self):
        with pytest.raises(ComparisonError, match="no reports"):
            compare({})

    def test_missing_baseline_rejected(self, vgg_profile, fast_only_cluster):
        r = simulate(baseline_wfbp(vgg_profile, fast_only_cluster, 3))
        with pytest.raises(ComparisonError, match="baseline"):
            compare({"priority": r}, baseline="wfbp")

    def test_identical_reports_speedup_one(self, vgg_profile, fast_only_cluster):
        r = simulate(baseline_wfbp(vgg_profile, fast_only_cluster, 3))
        table = compare({"wfbp": r, "other": r})
        assert all(row["speedup_vs_wfbp"] == 1.0 for row in table["rows"])

    def test_mismatched_iterations_rejected(self, vgg_profile, fast_only_cluster):
        a = simulate(baseline_wfbp(vgg_profile, fast_only_cluster, 3))
        b = simulate(baseline_wfbp(vgg_profile, fast_only_cluster, 4))
        with pytest.raises(ComparisonError, match="iteration counts"):
            compare({"wfbp": a, "other": b})


def test_chrome_trace_export(tmp_path, vgg_profile, fast_only_cluster):
    report = simulate(baseline_wfbp(vgg_profile, fast_only_cluster, 2))
    path = tmp_path / "trace.json"
    export_chrome_trace(report, path)
    doc = json.loads(path.read_text())
    events = doc["traceEvents"]
    assert any(e["ph"] == "X" and e["name"].startswith("comm:") for e in events)
    assert any(e["name"].startswith("forward_compute") for e in events)
    assert all(e["ts"] >= 0 for e in events)


def test_timeline_jsonl(tmp_path, vgg_profile, fast_only_cluster):
    report = simulate(baseline_wfbp(vgg_profile, fast_only_cluster, 2))
    path = tmp_path / "timeline.jsonl"
    report.dump_timeline_jsonl(path)
    rows = [json.loads(line) for line in path.read_text().splitlines()]
    assert len(rows) == len(report.timeline)
    assert {"kind", "bucket_id", "start_us", "end_us", "iteration", "link"} == \
        set(rows[0])
