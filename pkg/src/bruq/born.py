"""Born-rule queries over a lab timeline.

A probability for a conjunction of outcomes is assigned only when every
queried record exists at one common time: the records are then jointly
readable off a single state vector, and the Born rule applies to the
product question on their pointers.  If no such time exists (a record was
erased before another was made), the query is Born-indeterminate and
``evaluate`` raises :class:`BornIndeterminate`.

:func:`chained_two_time` is deliberately separate.  It evaluates alternating
projections and unitary evolution, which goes beyond the record-based rule,
and reports the largest interference term of the history family so callers
can judge whether the value means anything.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass
from fractions import Fraction
from typing import Sequence

import numpy as np

from .hilbert import PureState, Question, born_probability
from .lab import Measure, RecordInterval, Timeline, as_time, format_time, record_liveness


class QueryError(ValueError):
    pass


@dataclass(frozen=True)
class OutcomeEvent:
    event: int
    label: str
    time: Fraction

    def __post_init__(self):
        object.__setattr__(self, "time", as_time(self.time))


@dataclass(frozen=True)
class MultiTimeQuery:
    outcomes: tuple[OutcomeEvent, ...]

    def __post_init__(self):
        object.__setattr__(self, "outcomes", tuple(self.outcomes))
        if not self.outcomes:
            raise QueryError("query needs at least one outcome")

    @classmethod
    def of(cls, *outcomes: OutcomeEvent) -> MultiTimeQuery:
        return cls(tuple(outcomes))


@dataclass(frozen=True)
class Computable:
    time: Fraction
    question: Question


@dataclass(frozen=True)
class Indeterminate:
    reason: str
    erased_event: int
    erased_at: Fraction
    erased_by: int
    blocking_event: int
    blocking_birth: Fraction


Verdict = Computable | Indeterminate


class BornIndeterminate(Exception):
    """No single time at which all queried records coexist; the Born rule assigns no value."""

    def __init__(self, verdict: Indeterminate):
        super().__init__(verdict.reason)
        self.verdict = verdict


def resolve_outcome(timeline: Timeline, pointer: str, label: str, time) -> OutcomeEvent:
    """Outcome of the latest measurement into ``pointer`` at or before ``time``."""
    t = as_time(time)
    found = None
    for i, ev in enumerate(timeline.events):
        if isinstance(ev.kind, Measure) and ev.kind.spec.pointer == pointer and ev.time <= t:
            found = i
    if found is None:
        raise QueryError(f"no measurement into pointer {pointer!r} at or before t={t}")
    return OutcomeEvent(found, label, t)


def _pointer_of(timeline: Timeline, o: OutcomeEvent) -> str:
    if not 0 <= o.event < len(timeline.events):
        raise QueryError(f"unknown event id {o.event}")
    ev = timeline.events[o.event]
    if not isinstance(ev.kind, Measure):
        raise QueryError(f"event {o.event} is not a measurement")
    pointer = ev.kind.spec.pointer
    labels = timeline.layout.subsystem(pointer).labels
    if o.label not in labels[1:]:
        raise QueryError(f"unknown outcome label {o.label!r} for pointer {pointer!r} (outcomes {labels[1:]})")
    if o.time < ev.time:
        raise QueryError(f"query time {o.time} precedes measurement at t={ev.time}")
    return pointer


def describe_query(query: MultiTimeQuery, timeline: Timeline) -> str:
    parts = [f"{_pointer_of(timeline, o)}={o.label}@{o.time}" for o in query.outcomes]
    return "P(" + " & ".join(parts) + ")"


def _intervals(query: MultiTimeQuery, timeline: Timeline) -> list[RecordInterval]:
    by_event = {r.event: r for r in record_liveness(timeline)}
    return [by_event[o.event] for o in query.outcomes]


def classify(query: MultiTimeQuery, timeline: Timeline) -> Verdict:
    pointers = [_pointer_of(timeline, o) for o in query.outcomes]
    records = _intervals(query, timeline)
    lo = max(r.birth for r in records)
    deaths = [r.death for r in records if r.death is not None]
    hi = min(deaths) if deaths else None
    if hi is None or lo < hi:
        # prefer the latest requested time when it lies in the common window
        t_req = max(o.time for o in query.outcomes)
        t = t_req if (lo <= t_req and (hi is None or t_req < hi)) else lo
        question = Question.always()
        for p, o in zip(pointers, query.outcomes):
            question = question & Question.where(**{p: o.label})
        return Computable(t, question)

    dying = min((r for r in records if r.death is not None), key=lambda r: (r.death, r.event))
    blocking = max(records, key=lambda r: (r.birth, r.event))
    killer = timeline.events[dying.killer]
    reason = (
        f"record {dying.pointer} of event {dying.event} (t={dying.birth}) was erased at "
        f"t={format_time(dying.death)} by {killer.kind}, before record {blocking.pointer} of "
        f"event {blocking.event} was made at t={blocking.birth}; no time has both records"
    )
    return Indeterminate(reason, dying.event, dying.death, dying.killer, blocking.event, blocking.birth)


def evaluate(query: MultiTimeQuery, timeline: Timeline) -> float:
    verdict = classify(query, timeline)
    if isinstance(verdict, Indeterminate):
        raise BornIndeterminate(verdict)
    return born_probability(timeline.state_at(verdict.time), verdict.question)


def _evolve_between(timeline: Timeline, amps: np.ndarray, t0: Fraction, t1: Fraction) -> np.ndarray:
    layout = timeline.layout
    for ev, u in zip(timeline.events, timeline.unitaries):
        if t0 < ev.time <= t1:
            amps = u.apply(PureState(layout, amps, check=False)).amplitudes
    return amps


def _chain(timeline: Timeline, steps: Sequence[tuple[Fraction, Question]]) -> np.ndarray:
    layout = timeline.layout
    t_prev = steps[0][0]
    amps = np.array(timeline.state_at(t_prev).amplitudes)
    for t, q in steps:
        amps = _evolve_between(timeline, amps, t_prev, t)
        amps = np.where(q.mask(layout), amps, 0.0)
        t_prev = t
    return amps


@dataclass(frozen=True)
class ChainedValue:
    value: float
    max_offdiagonal: float


def chained_two_time(query: MultiTimeQuery, timeline: Timeline) -> ChainedValue:
    """Squared norm after projecting onto each outcome at its query time, evolving in between.

    This is not the record-based Born rule used by :func:`evaluate`; it
    returns a number even for erased records.  ``max_offdiagonal`` is the
    largest ``|Re <h|h'>|`` over pairs of distinct histories built from
    every pointer label at every query time.  Values near zero mean the
    family is consistent (no interference between alternatives).
    """
    times = [o.time for o in query.outcomes]
    if any(b < a for a, b in zip(times, times[1:])):
        raise QueryError("chained query times must be nondecreasing")
    pointers = [_pointer_of(timeline, o) for o in query.outcomes]

    steps = [(o.time, Question.where(**{p: o.label})) for p, o in zip(pointers, query.outcomes)]
    value = float(np.vdot(c := _chain(timeline, steps), c).real)

    alternatives = [timeline.layout.subsystem(p).labels for p in pointers]
    histories = []
    for labels in itertools.product(*alternatives):
        hs = [(o.time, Question.where(**{p: lab})) for p, o, lab in zip(pointers, query.outcomes, labels)]
        histories.append(_chain(timeline, hs))
    h = np.array(histories)
    gram = h.conj() @ h.T
    off = gram - np.diag(np.diag(gram))
    return ChainedValue(value, float(np.max(np.abs(off.real))) if len(histories) > 1 else 0.0)
