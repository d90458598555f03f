"""Reports computed from execution traces alone: success rates, reference
checks, per-subtask trajectories, and the stability/success correlation.
Reports never read anything but the trace, so identical trace bytes always
produce identical report bytes."""

from __future__ import annotations

from dataclasses import dataclass

from .config import EXACT, NUMERIC_MATCH
from .errors import InsufficientSamplesError, MalformedTraceError
from .metrics import pearson_correlation
from .plan import SubtaskStatus
from .trace import ExecutionTrace, replay_trace

TERMINAL_RUN_STATUSES = ("succeeded", "failed")


def normalize_whitespace(text: str) -> str:
    return " ".join(text.split())


def reference_check(
    output: str, reference: str, match: str = EXACT, tolerance: float = 1e-6
) -> bool:
    """Default judge: exact match after whitespace normalization; numeric
    mode parses both sides and compares within the tolerance."""
    if match == EXACT:
        return normalize_whitespace(output) == normalize_whitespace(reference)
    if match == NUMERIC_MATCH:
        try:
            return abs(float(output.strip()) - float(reference.strip())) <= tolerance
        except ValueError:
            return False
    raise ValueError(f"unknown reference match mode: {match!r}")


@dataclass(frozen=True)
class SubtaskDigest:
    subtask_id: str
    final_status: str
    stability_trajectory: tuple[float, ...]
    refinement_count: int
    augmentation_count: int

    @property
    def succeeded(self) -> bool:
        return self.final_status == SubtaskStatus.EXECUTED_OK.value

    @property
    def last_stability(self) -> float | None:
        return self.stability_trajectory[-1] if self.stability_trajectory else None


@dataclass(frozen=True)
class TraceDigest:
    """Everything a report needs from one run's trace."""

    run_status: str
    final_output: str
    subtasks: tuple[SubtaskDigest, ...]
    reference_passed: bool | None  # None when the run had no reference answer

    @property
    def succeeded(self) -> bool:
        return self.run_status == "succeeded"


def digest_trace(trace: ExecutionTrace) -> TraceDigest:
    state = replay_trace(trace)
    if state.run_status not in TERMINAL_RUN_STATUSES:
        raise MalformedTraceError(
            f"trace lacks a terminal run status (got {state.run_status!r})"
        )
    final_output = ""
    for event in trace.events_of_type("status-change"):
        if event.payload.get("subtask_id") == "__run__" and "final_output" in event.payload:
            final_output = event.payload["final_output"]
    refinements: dict[str, int] = {}
    for event in trace.events_of_type("revision"):
        if event.payload.get("component") != "initial":
            sid = event.payload["subtask_id"]
            refinements[sid] = refinements.get(sid, 0) + 1
    augmentations: dict[str, int] = {}
    for event in trace.events_of_type("augmentation"):
        sid = event.payload["subtask_id"]
        augmentations[sid] = augmentations.get(sid, 0) + 1
    subtasks = []
    if state.plan is not None:
        for sub in state.plan.subtasks:
            subtasks.append(
                SubtaskDigest(
                    subtask_id=sub.id,
                    final_status=sub.status.value,
                    stability_trajectory=tuple(state.scores.get(sub.id, ())),
                    refinement_count=refinements.get(sub.id, 0),
                    augmentation_count=augmentations.get(sub.id, 0),
                )
            )
    reference = trace.header.get("reference_answer")
    passed = None
    if reference is not None:
        passed = reference_check(
            final_output,
            str(reference),
            trace.header.get("reference_match", EXACT),
            float(trace.header.get("reference_tolerance", 1e-6)),
        )
    return TraceDigest(
        run_status=state.run_status,
        final_output=final_output,
        subtasks=tuple(subtasks),
        reference_passed=passed,
    )


@dataclass(frozen=True)
class RunReport:
    digests: tuple[TraceDigest, ...]

    @property
    def run_count(self) -> int:
        return len(self.digests)

    @property
    def execution_success_rate(self) -> float:
        """Fraction of runs finishing with every subtask executed-ok."""
        return sum(1 for d in self.digests if d.succeeded) / len(self.digests)

    @property
    def reference_count(self) -> int:
        return sum(1 for d in self.digests if d.reference_passed is not None)

    @property
    def completion_rate(self) -> float | None:
        """Fraction of reference-checked runs whose final output matched;
        None when no run carried a reference answer."""
        if self.reference_count == 0:
            return None
        passed = sum(1 for d in self.digests if d.reference_passed)
        return passed / self.reference_count


def compute_run_metrics(traces: list[ExecutionTrace]) -> RunReport:
    if not traces:
        raise InsufficientSamplesError("compute_run_metrics needs at least one trace")
    return RunReport(digests=tuple(digest_trace(t) for t in traces))


def stability_success_pairs(
    traces: list[ExecutionTrace],
) -> tuple[list[float], list[float]]:
    """One (last stability score, succeeded) pair per scored subtask, in
    trace order. Unscored subtasks contribute nothing."""
    stabilities: list[float] = []
    successes: list[float] = []
    for trace in traces:
        for sub in digest_trace(trace).subtasks:
            if sub.last_stability is None:
                continue
            stabilities.append(sub.last_stability)
            successes.append(1.0 if sub.succeeded else 0.0)
    return stabilities, successes


@dataclass(frozen=True)
class CorrelationReport:
    pair_count: int
    coefficient: float


def correlate_traces(traces: list[ExecutionTrace]) -> CorrelationReport:
    stabilities, successes = stability_success_pairs(traces)
    return CorrelationReport(
        pair_count=len(stabilities),
        coefficient=pearson_correlation(stabilities, successes),
    )


def render_run_report(report: RunReport) -> str:
    lines = [
        f"runs: {report.run_count}",
        f"execution success rate: {report.execution_success_rate:.6f}",
    ]
    if report.completion_rate is None:
        lines.append("completion rate: n/a (no reference answer configured)")
    else:
        passed = round(report.completion_rate * report.reference_count)
        lines.append(
            f"completion rate: {report.completion_rate:.6f} "
            f"({passed}/{report.reference_count} reference checks passed)"
        )
    for k, digest in enumerate(report.digests, start=1):
        lines.append("")
        lines.append(f"run {k}: {digest.run_status}")
        lines.append(f"  final output: {digest.final_output!r}")
        if digest.reference_passed is not None:
            lines.append(
                f"  reference check: {'pass' if digest.reference_passed else 'fail'}"
            )
        for sub in digest.subtasks:
            trajectory = ", ".join(f"{v:.6f}" for v in sub.stability_trajectory)
            lines.append(
                f"  {sub.subtask_id}: {sub.final_status}"
                f" stability=[{trajectory}]"
                f" refinements={sub.refinement_count}"
                f" augmentations={sub.augmentation_count}"
            )
    return "\n".join(lines) + "\n"


def render_correlation_report(report: CorrelationReport) -> str:
    return (
        f"pairs: {report.pair_count}\n"
        f"pearson_r: {report.coefficient:.10f}\n"
    )
