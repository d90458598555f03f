"""Task plans: subtasks with dependencies, granularity, and a status machine.

A Plan is immutable; every mutation helper returns a new Plan. Construction
re-sorts subtasks into a deterministic topological order (original order
breaks ties), so two plans with the same subtasks serialize identically.
"""

from __future__ import annotations

import enum
import heapq
import re
from dataclasses import dataclass, field, replace
from typing import Iterable

from .errors import PlanningFailure, StateError
from .prompt import IoSpec


class SubtaskStatus(str, enum.Enum):
    PENDING = "pending"
    STABLE_PROMPT_READY = "stable-prompt-ready"
    EXECUTED_OK = "executed-ok"
    EXECUTED_FAILED = "executed-failed"
    REFORMULATED = "reformulated"


# reformulated may re-enter stable-prompt-ready: a rewritten subtask gets one
# fresh refinement pass.
_TRANSITIONS: dict[SubtaskStatus, frozenset[SubtaskStatus]] = {
    SubtaskStatus.PENDING: frozenset({SubtaskStatus.STABLE_PROMPT_READY}),
    SubtaskStatus.STABLE_PROMPT_READY: frozenset(
        {SubtaskStatus.EXECUTED_OK, SubtaskStatus.EXECUTED_FAILED}
    ),
    SubtaskStatus.EXECUTED_FAILED: frozenset({SubtaskStatus.REFORMULATED}),
    SubtaskStatus.REFORMULATED: frozenset({SubtaskStatus.STABLE_PROMPT_READY}),
    SubtaskStatus.EXECUTED_OK: frozenset(),
}


def allowed_transitions(status: SubtaskStatus) -> frozenset[SubtaskStatus]:
    return _TRANSITIONS[status]


_CLAUSE_SPLIT = re.compile(r"[.;!?\n]+|\bthen\b", re.IGNORECASE)


def estimate_granularity(description: str) -> int:
    """Proxy for how much work a description packs: the number of clause
    segments, splitting on sentence punctuation and the connective 'then'."""
    segments = [s for s in _CLAUSE_SPLIT.split(description) if s.strip()]
    return max(1, len(segments))


@dataclass(frozen=True)
class Subtask:
    id: str
    description: str
    dependencies: frozenset[str] = frozenset()
    granularity: float | None = None
    io_spec: IoSpec = field(default_factory=IoSpec)
    status: SubtaskStatus = SubtaskStatus.PENDING
    injected_notes: tuple[str, ...] = ()

    def __post_init__(self):
        if not self.id or not self.id.strip():
            raise ValueError("subtask id must be non-empty")
        if not self.description.strip():
            raise ValueError(f"subtask {self.id!r} has an empty description")
        object.__setattr__(self, "dependencies", frozenset(self.dependencies))
        object.__setattr__(self, "status", SubtaskStatus(self.status))
        object.__setattr__(self, "injected_notes", tuple(self.injected_notes))
        if self.granularity is None:
            object.__setattr__(self, "granularity", estimate_granularity(self.description))
        elif self.granularity <= 0:
            raise ValueError("granularity must be positive")

    def with_status(self, status: SubtaskStatus) -> "Subtask":
        status = SubtaskStatus(status)
        if status not in _TRANSITIONS[self.status]:
            raise StateError(
                f"subtask {self.id!r}: illegal transition "
                f"{self.status.value} -> {status.value}"
            )
        return replace(self, status=status)

    def to_json_dict(self) -> dict:
        return {
            "id": self.id,
            "description": self.description,
            "dependencies": sorted(self.dependencies),
            "granularity": self.granularity,
            "io_spec": self.io_spec.to_json_dict(),
            "status": self.status.value,
            "injected_notes": list(self.injected_notes),
        }

    @classmethod
    def from_json_dict(cls, data: dict) -> "Subtask":
        return cls(
            id=data["id"],
            description=data["description"],
            dependencies=frozenset(data.get("dependencies", ())),
            granularity=data.get("granularity"),
            io_spec=IoSpec.from_json_dict(data.get("io_spec", {})),
            status=SubtaskStatus(data.get("status", "pending")),
            injected_notes=tuple(data.get("injected_notes", ())),
        )


def _topological(subtasks: tuple[Subtask, ...]) -> tuple[Subtask, ...]:
    index = {s.id: i for i, s in enumerate(subtasks)}
    if len(index) != len(subtasks):
        seen = set()
        dup = next(s.id for s in subtasks if s.id in seen or seen.add(s.id))
        raise ValueError(f"duplicate subtask id: {dup!r}")
    for s in subtasks:
        unknown = s.dependencies - index.keys()
        if unknown:
            raise ValueError(
                f"subtask {s.id!r} depends on unknown ids: {sorted(unknown)}"
            )
    # Kahn's algorithm; the heap of original positions makes ties resolve to
    # the order the planner produced.
    indegree = {s.id: len(s.dependencies) for s in subtasks}
    dependents: dict[str, list[str]] = {s.id: [] for s in subtasks}
    for s in subtasks:
        for dep in s.dependencies:
            dependents[dep].append(s.id)
    ready = [index[sid] for sid, deg in indegree.items() if deg == 0]
    heapq.heapify(ready)
    ordered: list[Subtask] = []
    while ready:
        pos = heapq.heappop(ready)
        current = subtasks[pos]
        ordered.append(current)
        for child in dependents[current.id]:
            indegree[child] -= 1
            if indegree[child] == 0:
                heapq.heappush(ready, index[child])
    if len(ordered) != len(subtasks):
        stuck = sorted(sid for sid, deg in indegree.items() if deg > 0)
        raise PlanningFailure(f"dependency cycle among subtasks: {stuck}")
    return tuple(ordered)


@dataclass(frozen=True)
class Plan:
    task_description: str
    subtasks: tuple[Subtask, ...]
    interaction_template: str = "linear-chain"
    created_from: str = ""

    def __post_init__(self):
        object.__setattr__(self, "subtasks", _topological(tuple(self.subtasks)))

    def subtask(self, subtask_id: str) -> Subtask:
        for s in self.subtasks:
            if s.id == subtask_id:
                return s
        raise KeyError(subtask_id)

    def dependents(self, subtask_id: str) -> tuple[Subtask, ...]:
        self.subtask(subtask_id)
        return tuple(s for s in self.subtasks if subtask_id in s.dependencies)

    def transitive_dependents(self, subtask_id: str) -> tuple[Subtask, ...]:
        reached = {subtask_id}
        # subtasks are topologically ordered, so one forward pass suffices
        out = []
        for s in self.subtasks:
            if s.id != subtask_id and s.dependencies & reached:
                reached.add(s.id)
                out.append(s)
        return tuple(out)

    def ready_subtasks(self) -> tuple[Subtask, ...]:
        done = {s.id for s in self.subtasks if s.status is SubtaskStatus.EXECUTED_OK}
        return tuple(
            s
            for s in self.subtasks
            if s.status is SubtaskStatus.PENDING and s.dependencies <= done
        )

    def to_json_dict(self) -> dict:
        return {
            "task_description": self.task_description,
            "interaction_template": self.interaction_template,
            "created_from": self.created_from,
            "subtasks": [s.to_json_dict() for s in self.subtasks],
        }

    @classmethod
    def from_json_dict(cls, data: dict) -> "Plan":
        return cls(
            task_description=data["task_description"],
            subtasks=tuple(Subtask.from_json_dict(s) for s in data.get("subtasks", ())),
            interaction_template=data.get("interaction_template", "linear-chain"),
            created_from=data.get("created_from", ""),
        )


def with_subtask(plan: Plan, new_subtask: Subtask) -> Plan:
    """Replace the subtask with the same id; the plan is re-validated."""
    plan.subtask(new_subtask.id)
    updated = tuple(new_subtask if s.id == new_subtask.id else s for s in plan.subtasks)
    return replace(plan, subtasks=updated)


def with_status(plan: Plan, subtask_id: str, status: SubtaskStatus) -> Plan:
    return with_subtask(plan, plan.subtask(subtask_id).with_status(status))


def with_subtasks(plan: Plan, subtasks: Iterable[Subtask]) -> Plan:
    return replace(plan, subtasks=tuple(subtasks))
