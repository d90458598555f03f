import json
import threading

import pytest
from hypothesis import given
from hypothesis import strategies as st

from promptor.errors import MalformedTraceError
from promptor.plan import Plan, Subtask, SubtaskStatus
from promptor.prompt import ModularPrompt
from promptor.trace import (
    EVENT_TYPES,
    ExecutionTrace,
    TraceEvent,
    TraceWriter,
    canonical_trace_bytes,
    canonicalize,
    parse_trace_lines,
    read_trace,
    replay_trace,
    write_trace,
)


def make_trace(events):
    return ExecutionTrace(
        header={"version": 1, "created_at": "2024-01-01T00:00:00", "run": "t"},
        events=tuple(events),
    )


class TestEventAndSerialization:
    def test_unknown_event_type_rejected(self):
        with pytest.raises(ValueError):
            TraceEvent(seq=0, type="telemetry", payload={}, ts=0.0)

    def test_round_trip_preserves_canonical_form(self):
        trace = make_trace(
            [
                TraceEvent(0, "warning", {"reason": "x"}, 1.5),
                TraceEvent(1, "score", {"subtask_id": "a", "value": 0.25}, 2.5),
            ]
        )
        parsed = parse_trace_lines(trace.to_lines())
        assert canonicalize(parsed) == canonicalize(trace)
        assert parsed.events[1].payload["value"] == 0.25

    def test_events_of_type(self):
        trace = make_trace(
            [
                TraceEvent(0, "warning", {"reason": "x"}, 0.0),
                TraceEvent(1, "score", {"v": 1}, 0.0),
                TraceEvent(2, "warning", {"reason": "y"}, 0.0),
            ]
        )
        reasons = [e.payload["reason"] for e in trace.events_of_type("warning")]
        assert reasons == ["x", "y"]

    def test_file_round_trip(self, tmp_path):
        trace = make_trace([TraceEvent(0, "warning", {"reason": "x"}, 0.0)])
        path = tmp_path / "run.jsonl"
        write_trace(trace, path)
        assert canonicalize(read_trace(path)) == canonicalize(trace)

    @given(
        st.lists(
            st.tuples(
                st.sampled_from(EVENT_TYPES),
                st.dictionaries(
                    st.text(min_size=1, max_size=8),
                    st.one_of(st.integers(), st.text(max_size=12), st.booleans()),
                    max_size=4,
                ),
            ),
            max_size=8,
        )
    )
    def test_any_payload_round_trips(self, specs):
        trace = make_trace(
            TraceEvent(i, t, p, float(i)) for i, (t, p) in enumerate(specs)
        )
        assert canonicalize(parse_trace_lines(trace.to_lines())) == canonicalize(trace)


class TestWriter:
    def test_seq_assignment_and_header(self):
        with TraceWriter({"run": "w"}) as writer:
            writer.emit("warning", {"reason": "a"})
            writer.warning("b", detail=1)
            trace = writer.trace()
        assert [e.seq for e in trace.events] == [0, 1]
        assert trace.header["version"] == 1
        assert trace.header["run"] == "w"
        assert "created_at" in trace.header
        assert trace.events[1].payload == {"reason": "b", "detail": 1}

    def test_live_file_append_matches_memory(self, tmp_path):
        path = tmp_path / "live.jsonl"
        with TraceWriter({"run": "w"}, path=path) as writer:
            writer.emit("warning", {"reason": "a"})
            writer.emit("score", {"subtask_id": "s", "value": 1.0})
            in_memory = writer.trace()
        assert canonical_trace_bytes(read_trace(path)) == canonical_trace_bytes(in_memory)

    def test_concurrent_emitters_get_unique_contiguous_seqs(self):
        writer = TraceWriter({"run": "w"})
        barrier = threading.Barrier(8)

        def emit_many():
            barrier.wait()
            for _ in range(25):
                writer.emit("warning", {"reason": "r"})

        threads = [threading.Thread(target=emit_many) for _ in range(8)]
        for t in threads:
            t.start()
        for t in threads:
            t.join()
        seqs = [e.seq for e in writer.trace().events]
        assert seqs == list(range(200))


class TestParsingErrors:
    HEADER = json.dumps({"kind": "header", "version": 1})

    def test_empty_trace(self):
        with pytest.raises(MalformedTraceError, match="empty"):
            parse_trace_lines([])

    def test_invalid_json(self):
        with pytest.raises(MalformedTraceError, match="invalid JSON"):
            parse_trace_lines([self.HEADER, "{not json"])

    def test_non_object_record(self):
        with pytest.raises(MalformedTraceError, match="not an object"):
            parse_trace_lines([self.HEADER, "[1, 2]"])

    def test_first_record_must_be_header(self):
        event = json.dumps(
            {"kind": "event", "seq": 0, "type": "warning", "payload": {}, "ts": 0}
        )
        with pytest.raises(MalformedTraceError, match="header"):
            parse_trace_lines([event])

    def test_header_needs_version(self):
        with pytest.raises(MalformedTraceError, match="version"):
            parse_trace_lines([json.dumps({"kind": "header"})])

    def test_second_header_rejected(self):
        with pytest.raises(MalformedTraceError, match="expected an event"):
            parse_trace_lines([self.HEADER, self.HEADER])

    def test_unknown_event_type(self):
        bad = json.dumps(
            {"kind": "event", "seq": 0, "type": "telemetry", "payload": {}, "ts": 0}
        )
        with pytest.raises(MalformedTraceError, match="bad event"):
            parse_trace_lines([self.HEADER, bad])

    def test_payload_must_be_object(self):
        bad = json.dumps(
            {"kind": "event", "seq": 0, "type": "warning", "payload": [1], "ts": 0}
        )
        with pytest.raises(MalformedTraceError, match="payload"):
            parse_trace_lines([self.HEADER, bad])

    def test_seq_must_strictly_increase(self):
        ev = {"kind": "event", "seq": 3, "type": "warning", "payload": {}, "ts": 0}
        with pytest.raises(MalformedTraceError, match="strictly increase"):
            parse_trace_lines([self.HEADER, json.dumps(ev), json.dumps(ev)])

    def test_missing_file(self, tmp_path):
        with pytest.raises(MalformedTraceError, match="cannot read"):
            read_trace(tmp_path / "absent.jsonl")

    def test_blank_lines_skipped(self):
        ev = json.dumps(
            {"kind": "event", "seq": 0, "type": "warning", "payload": {}, "ts": 0}
        )
        trace = parse_trace_lines([self.HEADER, "", ev, "   "])
        assert len(trace.events) == 1


class TestCanonicalization:
    def test_timestamps_do_not_affect_canonical_bytes(self):
        a = ExecutionTrace(
            header={"version": 1, "created_at": "2024-01-01", "run": "r"},
            events=(TraceEvent(0, "warning", {"reason": "x"}, 1.0),),
        )
        b = ExecutionTrace(
            header={"version": 1, "created_at": "2030-12-31", "run": "r"},
            events=(TraceEvent(0, "warning", {"reason": "x"}, 99.0),),
        )
        assert canonical_trace_bytes(a) == canonical_trace_bytes(b)

    def test_payload_difference_changes_canonical_bytes(self):
        a = make_trace([TraceEvent(0, "warning", {"reason": "x"}, 0.0)])
        b = make_trace([TraceEvent(0, "warning", {"reason": "y"}, 0.0)])
        assert canonical_trace_bytes(a) != canonical_trace_bytes(b)


class TestReplay:
    def plan(self):
        return Plan(
            task_description="t",
            subtasks=(
                Subtask(id="a", description="first step."),
                Subtask(id="b", description="second step.", dependencies=frozenset({"a"})),
            ),
        )

    def prompt(self):
        return ModularPrompt(role="executor", requirements=("do the step",))

    def test_replay_reconstructs_state(self):
        plan = self.plan()
        prompt = self.prompt()
        revised = ModularPrompt(
            role="executor", requirements=("do the step", "show units"), revision=1
        )
        events = [
            TraceEvent(0, "status-change", {"subtask_id": "__run__", "from": None, "to": "running"}, 0.0),
            TraceEvent(1, "plan-update", {"note": "created", "update": None, "plan_after": plan.to_json_dict(), "run_status": None}, 0.0),
            TraceEvent(2, "revision", {"subtask_id": "a", "component": "initial", "revision": 0, "prompt_after": prompt.to_json_dict()}, 0.0),
            TraceEvent(3, "score", {"subtask_id": "a", "metric": "semantic", "value": 0.4, "sample_count": 3}, 0.0),
            TraceEvent(4, "augmentation", {"subtask_id": "a", "clause": "show units", "revision": 1, "prompt_after": revised.to_json_dict()}, 0.0),
            TraceEvent(5, "score", {"subtask_id": "a", "metric": "semantic", "value": 0.9, "sample_count": 3}, 0.0),
            TraceEvent(6, "status-change", {"subtask_id": "a", "from": "pending", "to": "stable-prompt-ready"}, 0.0),
            TraceEvent(7, "generation", {"subtask_id": "a", "purpose": "execution", "outputs": ["42"]}, 0.0),
            TraceEvent(8, "status-change", {"subtask_id": "a", "from": "stable-prompt-ready", "to": "executed-ok"}, 0.0),
            TraceEvent(9, "status-change", {"subtask_id": "__run__", "from": "running", "to": "failed", "final_output": ""}, 0.0),
        ]
        state = replay_trace(make_trace(events))
        assert state.run_status == "failed"
        assert state.plan.subtask("a").status is SubtaskStatus.EXECUTED_OK
        assert state.plan.subtask("b").status is SubtaskStatus.PENDING
        assert state.prompts["a"] == revised
        assert state.scores["a"] == [0.4, 0.9]
        assert state.outputs["a"] == "42"

    def test_non_execution_generations_do_not_record_outputs(self):
        events = [
            TraceEvent(0, "generation", {"subtask_id": "a", "purpose": "stability", "outputs": ["x"]}, 0.0),
        ]
        assert replay_trace(make_trace(events)).outputs == {}

    def test_status_change_before_plan_is_malformed(self):
        events = [
            TraceEvent(0, "status-change", {"subtask_id": "a", "from": "pending", "to": "stable-prompt-ready"}, 0.0),
        ]
        with pytest.raises(MalformedTraceError, match="before any plan"):
            replay_trace(make_trace(events))

    def test_illegal_transition_is_malformed(self):
        plan = self.plan()
        events = [
            TraceEvent(0, "plan-update", {"note": "created", "update": None, "plan_after": plan.to_json_dict(), "run_status": None}, 0.0),
            TraceEvent(1, "status-change", {"subtask_id": "a", "from": "pending", "to": "executed-ok"}, 0.0),
        ]
        with pytest.raises(MalformedTraceError, match="replay failed"):
            replay_trace(make_trace(events))
