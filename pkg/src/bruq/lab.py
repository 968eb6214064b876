"""Laboratory model: measurement unitaries, event schedules, state timelines.

Nothing happens between events, so the lab state is piecewise constant and
``Timeline.state_at(t)`` is the state after every event with time <= t.
Measurement is a unitary premeasurement.  Its action on the ready sector is
fixed by the measurement itself; elsewhere it is completed to the swap
involution

    (observed=i, pointer=ready, companions=ready) <-> (observed=i, pointer=i, companions=i)

which makes the unitary its own inverse.  A reset applies the adjoint of the
unitary of the event it targets.
"""

from __future__ import annotations

from dataclasses import dataclass
from fractions import Fraction
from typing import Sequence, Union

import numpy as np

from .hilbert import (
    LayoutError,  # noqa: F401  re-exported
    PermutationUnitary,
    PureState,
    SubsystemLayout,
    UnitaryMap,
    compose_layout,
    product_state,
)

READY_SUFFIX = "r"


class ScheduleError(ValueError):
    pass


def as_time(t) -> Fraction:
    if isinstance(t, Fraction):
        return t
    if isinstance(t, float):
        return Fraction(repr(t))
    return Fraction(t)


def format_time(t: Fraction | None) -> str:
    if t is None:
        return "inf"
    return str(t)


def pointer_labels(pointer: str, outcomes: Sequence[str]) -> tuple[str, ...]:
    """Label set of a pointer recording ``outcomes``: ready first, then one per outcome."""
    return (pointer + READY_SUFFIX,) + tuple(pointer + o for o in outcomes)


@dataclass(frozen=True)
class MeasurementSpec:
    observed: str
    pointer: str
    companions: tuple[str, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "companions", tuple(self.companions))
        names = (self.observed, self.pointer) + self.companions
        if len(set(names)) != len(names):
            raise ScheduleError(f"measurement subsystems must be distinct, got {names}")

    @property
    def targets(self) -> tuple[str, ...]:
        return (self.observed, self.pointer) + self.companions

    def validate(self, layout: SubsystemLayout) -> None:
        d = layout.subsystem(self.observed).dim
        for name in (self.pointer,) + self.companions:
            pd = layout.subsystem(name).dim
            if pd != d + 1:
                raise ScheduleError(
                    f"pointer {name!r} has dimension {pd}; measuring {self.observed!r} (dim {d}) needs {d + 1}"
                )

    def __str__(self):
        s = f"measure {self.observed} -> {self.pointer}"
        if self.companions:
            s += " with " + " ".join(self.companions)
        return s


@dataclass(frozen=True)
class Measure:
    spec: MeasurementSpec

    def __str__(self):
        return str(self.spec)


@dataclass(frozen=True)
class Reset:
    target: int  # 0-based event id

    def __str__(self):
        return f"reset of event {self.target}"


@dataclass(frozen=True)
class Custom:
    unitary: UnitaryMap
    name: str = "custom"

    def __str__(self):
        return f"unitary {self.name}"


EventKind = Union[Measure, Reset, Custom]


@dataclass(frozen=True)
class Event:
    time: Fraction
    kind: EventKind

    def __post_init__(self):
        object.__setattr__(self, "time", as_time(self.time))


@dataclass(frozen=True, eq=False)
class Schedule:
    layout: SubsystemLayout
    initial: PureState
    events: tuple[Event, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "events", tuple(self.events))
        if self.initial.layout != self.layout:
            raise ScheduleError("initial state layout differs from schedule layout")
        for i, (a, b) in enumerate(zip(self.events, self.events[1:])):
            if not a.time < b.time:
                raise ScheduleError(f"event times must be strictly increasing (event {i + 1} at t={b.time})")
        for i, ev in enumerate(self.events):
            k = ev.kind
            if isinstance(k, Measure):
                k.spec.validate(self.layout)
            elif isinstance(k, Custom):
                for t in k.unitary.targets:
                    self.layout.position(t)
            elif isinstance(k, Reset):
                if not 0 <= k.target < len(self.events):
                    raise ScheduleError(f"reset at event {i} targets missing event {k.target}")
                if k.target >= i:
                    raise ScheduleError(f"reset at event {i} (t={ev.time}) precedes its target event {k.target}")
                if isinstance(self.events[k.target].kind, Reset):
                    raise ScheduleError(f"reset at event {i} targets another reset")
            else:
                raise ScheduleError(f"unknown event kind {k!r}")

    def __eq__(self, other):
        if not isinstance(other, Schedule):
            return NotImplemented
        return self.layout == other.layout and self.initial == other.initial and self.events == other.events

    __hash__ = None

    def measurements(self) -> list[int]:
        return [i for i, e in enumerate(self.events) if isinstance(e.kind, Measure)]


def measurement_unitary(layout: SubsystemLayout, spec: MeasurementSpec) -> PermutationUnitary:
    spec.validate(layout)
    d = layout.subsystem(spec.observed).dim
    n_ptr = 1 + len(spec.companions)
    dims = (d,) + (d + 1,) * n_ptr
    perm = np.arange(int(np.prod(dims)))
    for i in range(d):
        ready = np.ravel_multi_index((i,) + (0,) * n_ptr, dims)
        seen = np.ravel_multi_index((i,) + (i + 1,) * n_ptr, dims)
        perm[ready], perm[seen] = seen, ready
    return PermutationUnitary(spec.targets, dims, perm)


@dataclass(frozen=True)
class RecordInterval:
    event: int
    pointer: str
    birth: Fraction
    death: Fraction | None  # None: never erased
    killer: int | None = None

    def live_at(self, t) -> bool:
        t = as_time(t)
        return self.birth <= t and (self.death is None or t < self.death)


@dataclass(frozen=True, eq=False)
class Timeline:
    """Evolved schedule.  ``states[k]`` holds from event ``k-1`` up to event ``k``."""

    schedule: Schedule
    unitaries: tuple[UnitaryMap, ...]
    states: tuple[PureState, ...]

    @property
    def layout(self) -> SubsystemLayout:
        return self.schedule.layout

    @property
    def events(self) -> tuple[Event, ...]:
        return self.schedule.events

    @property
    def epoch_starts(self) -> tuple[Fraction | None, ...]:
        return (None,) + tuple(e.time for e in self.events)

    def epoch_of(self, t) -> int:
        t = as_time(t)
        return sum(1 for e in self.events if e.time <= t)

    def state_at(self, t) -> PureState:
        return self.states[self.epoch_of(t)]

    def record_liveness(self) -> list[RecordInterval]:
        return record_liveness(self)


def evolve(schedule: Schedule) -> Timeline:
    unitaries: list[UnitaryMap] = []
    states = [schedule.initial]
    for ev in schedule.events:
        k = ev.kind
        if isinstance(k, Measure):
            u = measurement_unitary(schedule.layout, k.spec)
        elif isinstance(k, Custom):
            u = k.unitary
        else:
            u = unitaries[k.target].adjoint()
        unitaries.append(u)
        states.append(u.apply(states[-1]))
    return Timeline(schedule, tuple(unitaries), tuple(states))


def record_liveness(timeline: Timeline) -> list[RecordInterval]:
    out = []
    events = timeline.events
    for i, ev in enumerate(events):
        if not isinstance(ev.kind, Measure):
            continue
        pointer = ev.kind.spec.pointer
        death = killer = None
        for j in range(i + 1, len(events)):
            if not timeline.unitaries[j].acts_trivially_on(pointer):
                death, killer = events[j].time, j
                break
        out.append(RecordInterval(i, pointer, ev.time, death, killer))
    return out


def lab_layout(outcomes: Sequence[str] = ("1", "2")) -> SubsystemLayout:
    """System S plus Alice's pointer A, Bob's pointer B and environment E."""
    return compose_layout(
        [
            ("S", len(outcomes), tuple(outcomes)),
            ("A", len(outcomes) + 1, pointer_labels("A", outcomes)),
            ("B", len(outcomes) + 1, pointer_labels("B", outcomes)),
            ("E", len(outcomes) + 1, pointer_labels("E", outcomes)),
        ]
    )


ALICE = MeasurementSpec("S", "A", ("E",))
BOB = MeasurementSpec("S", "B")
SCENARIOS = ("version1", "version2")


def builtin_scenario(name: str) -> Schedule:
    if name not in SCENARIOS:
        raise ScheduleError(f"unknown scenario {name!r}; choose from {', '.join(SCENARIOS)}")
    layout = lab_layout()
    h = 1 / np.sqrt(2)
    ready = [1.0, 0.0, 0.0]
    initial = product_state(layout, {"S": [h, h], "A": ready, "B": ready, "E": ready})
    events = [Event(Fraction(1), Measure(ALICE))]
    if name == "version2":
        events.append(Event(Fraction(2), Reset(0)))
    events.append(Event(Fraction(3), Measure(BOB)))
    return Schedule(layout, initial, tuple(events))


__all__ = [
    "LayoutError",
    "ScheduleError",
    "MeasurementSpec",
    "Measure",
    "Reset",
    "Custom",
    "Event",
    "Schedule",
    "Timeline",
    "RecordInterval",
    "measurement_unitary",
    "evolve",
    "record_liveness",
    "builtin_scenario",
    "lab_layout",
    "pointer_labels",
    "as_time",
    "format_time",
]
