import json

import pytest
from hypothesis import given, settings, strategies as st

from deftsim import (
    BucketProfile,
    MalformedTraceError,
    ModelProfile,
    OperatorEvent,
    ReconstructionError,
    SchemaError,
    emit_trace,
    load_trace,
    reconstruct_buckets,
    save_trace,
    trace_from_dict,
    trace_to_dict,
)

profile_st = st.builds(
    lambda rows, bs: ModelProfile(
        name="gen",
        buckets=tuple(BucketProfile(i + 1, *r) for i, r in enumerate(rows)),
        batch_size=bs,
    ),
    st.lists(
        st.tuples(
            st.integers(1, 10**7),
            st.integers(1, 10**5),
            st.integers(1, 10**5),
            st.integers(1, 10**5),
        ),
        min_size=1,
        max_size=20,
    ),
    st.integers(1, 512),
)


@given(profile_st, st.integers(1, 3))
@settings(max_examples=200, deadline=None)
def test_round_trip_recovers_profile_exactly(profile, iterations):
    trace = emit_trace(profile, iterations)
    rebuilt = reconstruct_buckets(trace, profile.n_buckets)
    assert rebuilt.buckets == profile.buckets
    assert rebuilt.batch_size == profile.batch_size


def test_round_trip_single_bucket():
    p = ModelProfile(name="one", buckets=(BucketProfile(1, 42, 10, 20, 25),))
    assert reconstruct_buckets(emit_trace(p), 1).buckets == p.buckets


def test_emitted_trace_is_wfbp_shaped(vgg_profile):
    trace = emit_trace(vgg_profile, 1)
    comms = [e for e in trace.events if e.kind == "communication"]
    assert len(comms) == vgg_profile.n_buckets
    # communication launch order follows backward completion: bucket 1 first
    starts = [e.start_us for e in comms]
    assert starts == sorted(starts)
    # the parameter count rides on the communication event name
    assert f"params_{vgg_profile.bucket(1).param_count}" in comms[0].name


def test_wrong_bucket_count_fails(vgg_profile):
    trace = emit_trace(vgg_profile, 1)
    with pytest.raises(ReconstructionError, match="communication events"):
        reconstruct_buckets(trace, vgg_profile.n_buckets + 1)


def test_overlapping_compute_kernels_rejected(vgg_profile):
    trace = emit_trace(vgg_profile, 1)
    clash = OperatorEvent(
        name="rogue", thread="compute_stream", external_id=999,
        start_us=0, end_us=10**9, kind="kernel",
    )
    broken = trace_from_dict({
        "events": [vars(e) for e in trace.events] + [vars(clash)],
        "iteration_boundaries_us": list(trace.iteration_boundaries_us),
    })
    with pytest.raises(MalformedTraceError, match="overlapping"):
        reconstruct_buckets(broken, vgg_profile.n_buckets)


def test_median_filters_one_slow_iteration():
    p = ModelProfile(name="m", buckets=(BucketProfile(1, 10, 100, 200, 50),))
    trace = emit_trace(p, 3)
    # stretch the middle iteration's backward kernel by shifting its end
    events = []
    for e in trace.events:
        if e.name == "bwd_kernel_b1" and e.start_us >= 350 and e.start_us < 700:
            events.append(vars(e) | {"end_us": e.end_us + 37})
        else:
            events.append(vars(e))
    doc = {"events": events,
           "iteration_boundaries_us": list(trace.iteration_boundaries_us),
           "metadata": trace.metadata}
    rebuilt = reconstruct_buckets(trace_from_dict(doc), 1)
    assert rebuilt.bucket(1).backward_us == 200


class TestSchema:
    def test_unknown_thread(self):
        with pytest.raises(SchemaError, match="thread"):
            OperatorEvent("x", "gpu7", 1, 0, 1, "kernel")

    def test_unknown_kind(self):
        with pytest.raises(SchemaError, match="kind"):
            OperatorEvent("x", "forward", 1, 0, 1, "magic")

    def test_end_before_start(self):
        with pytest.raises(MalformedTraceError):
            OperatorEvent("x", "forward", 1, 10, 5, "kernel")

    def test_missing_events_key(self):
        with pytest.raises(SchemaError, match="events"):
            trace_from_dict({"iteration_boundaries_us": [0]})

    def test_missing_event_field(self):
        with pytest.raises(SchemaError, match="external_id"):
            trace_from_dict({
                "events": [{"name": "a", "thread": "forward", "start_us": 0,
                            "end_us": 1, "kind": "kernel"}],
                "iteration_boundaries_us": [0, 1],
            })


def test_file_round_trip(tmp_path, gpt2_profile):
    trace = emit_trace(gpt2_profile, 2)
    path = tmp_path / "trace.json"
    save_trace(trace, path)
    loaded = load_trace(path)
    assert loaded == trace
    assert reconstruct_buckets(loaded, gpt2_profile.n_buckets).buckets == \
        gpt2_profile.buckets


def test_trace_dict_shape(vgg_profile):
    doc = trace_to_dict(emit_trace(vgg_profile))
    assert set(doc) == {"events", "iteration_boundaries_us", "metadata"}
    assert set(doc["events"][0]) == {
        "name", "thread", "external_id", "start_us", "end_us", "kind"}
    json.dumps(doc)  # must be serializable as-is
