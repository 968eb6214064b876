"""Experiment Description Language (``.edl``).

A line-oriented format; ``#`` starts a comment that runs to end of line::

    system  <name> outcomes <label> <label> ...
    pointer <name> for <system> [with <companion-pointer> ...]
    state   <term> ( ("+" | "-") <term> )*
    at <time> measure <system> -> <pointer>
    at <time> reset <event-number>        # 1-based, counts events in file order
    at <time> unitary <name>              # supplied to validate() by name
    query P( <pointer> = <label> @ <time> ( & ... )* )

A term is ``<coeff>|<label> <label> ...>`` with one label per declared
subsystem, in declaration order.  Coefficients are exact: a rational, an
optional ``/sqrt(<integer>)``, and an optional leading ``-``.  Times are
rationals (``3/2``) or decimals (``1.5``).  Events may also be written
postfix, ``measure S -> A @ 1``.

A pointer for a system with outcomes ``o1 .. on`` has labels
``<pointer>r`` (ready) and ``<pointer>o1 .. <pointer>on``.

:func:`format` emits the canonical form.  It drops comments, and writes
decimals back as fractions.
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass, field
from fractions import Fraction
from importlib import resources
from typing import Mapping

import numpy as np

from .born import MultiTimeQuery, OutcomeEvent
from .hilbert import LayoutError, PureState, UnitaryMap, compose_layout
from .lab import Custom, Event, Measure, MeasurementSpec, Reset, Schedule, ScheduleError, pointer_labels


class EdlError(Exception):
    def __init__(self, message: str, line: int, column: int = 1, token: str | None = None):
        self.message = message
        self.line = line
        self.column = column
        self.token = token
        super().__init__(f"line {line}, column {column}: {message}")


class ParseError(EdlError):
    pass


class ValidationError(EdlError):
    pass


# -- AST ---------------------------------------------------------------------


@dataclass(frozen=True)
class Coeff:
    """``value / sqrt(radicand)``."""

    value: Fraction
    radicand: int = 1

    def __float__(self):
        return float(self.value) / math.sqrt(self.radicand)

    def __neg__(self):
        return Coeff(-self.value, self.radicand)

    def __str__(self):
        s = str(self.value)
        return s if self.radicand == 1 else f"{s}/sqrt({self.radicand})"


@dataclass(frozen=True)
class Term:
    coeff: Coeff
    labels: tuple[str, ...]


@dataclass(frozen=True)
class SystemDecl:
    name: str
    outcomes: tuple[str, ...]
    line: int = field(default=0, compare=False)


@dataclass(frozen=True)
class PointerDecl:
    name: str
    system: str
    companions: tuple[str, ...] = ()
    line: int = field(default=0, compare=False)


@dataclass(frozen=True)
class StateDecl:
    terms: tuple[Term, ...]
    line: int = field(default=0, compare=False)


@dataclass(frozen=True)
class MeasureStmt:
    time: Fraction
    system: str
    pointer: str
    line: int = field(default=0, compare=False)


@dataclass(frozen=True)
class ResetStmt:
    time: Fraction
    target: int
    line: int = field(default=0, compare=False)


@dataclass(frozen=True)
class UnitaryStmt:
    time: Fraction
    name: str
    line: int = field(default=0, compare=False)


@dataclass(frozen=True)
class QueryItem:
    pointer: str
    label: str
    time: Fraction


@dataclass(frozen=True)
class QueryStmt:
    items: tuple[QueryItem, ...]
    line: int = field(default=0, compare=False)


@dataclass(frozen=True)
class EdlDocument:
    declarations: tuple
    state: StateDecl
    events: tuple
    queries: tuple[QueryStmt, ...]
    source: str = field(default="", compare=False, repr=False)


# -- lexer -------------------------------------------------------------------

_TOKEN = re.compile(
    r"""
    (?P<ws>[ \t]+)
  | (?P<comment>\#.*)
  | (?P<number>\d+(?:\.\d+)?)
  | (?P<ident>[A-Za-z_][A-Za-z0-9_]*)
  | (?P<arrow>->)
  | (?P<punct>[/()|>+\-@&=,])
    """,
    re.VERBOSE,
)


@dataclass(frozen=True)
class Token:
    kind: str  # number | ident | punct | eol
    text: str
    line: int
    column: int


def tokenize_line(text: str, line: int) -> list[Token]:
    out = []
    pos = 0
    while pos < len(text):
        m = _TOKEN.match(text, pos)
        if not m:
            raise ParseError(f"unexpected character {text[pos]!r}", line, pos + 1, text[pos])
        kind = m.lastgroup
        if kind not in ("ws", "comment"):
            out.append(Token("punct" if kind == "arrow" else kind, m.group(), line, pos + 1))
        pos = m.end()
    out.append(Token("eol", "", line, len(text) + 1))
    return out


# -- parser ------------------------------------------------------------------

_EVENT_WORDS = ("measure", "reset", "unitary")


class _LineParser:
    def __init__(self, tokens: list[Token]):
        self.toks = tokens
        self.i = 0

    @property
    def tok(self) -> Token:
        return self.toks[self.i]

    def fail(self, expected: str):
        t = self.tok
        shown = "end of line" if t.kind == "eol" else repr(t.text)
        raise ParseError(f"expected {expected}, found {shown}", t.line, t.column, t.text or None)

    def at(self, text: str) -> bool:
        return self.tok.text == text and self.tok.kind != "eol"

    def accept(self, text: str) -> bool:
        if self.at(text):
            self.i += 1
            return True
        return False

    def expect(self, text: str) -> Token:
        if not self.at(text):
            self.fail(repr(text))
        t = self.tok
        self.i += 1
        return t

    def ident(self, what: str = "name") -> str:
        if self.tok.kind != "ident":
            self.fail(what)
        t = self.tok
        self.i += 1
        return t.text

    def label(self) -> str:
        t = self.tok
        if t.kind == "ident" or (t.kind == "number" and "." not in t.text):
            self.i += 1
            return t.text
        self.fail("label")

    def integer(self, what: str = "integer") -> int:
        t = self.tok
        if t.kind != "number" or "." in t.text:
            self.fail(what)
        self.i += 1
        return int(t.text)

    def rational(self, what: str = "number") -> Fraction:
        t = self.tok
        if t.kind != "number":
            self.fail(what)
        self.i += 1
        value = Fraction(t.text)
        if self.at("/") and self.toks[self.i + 1].kind == "number":
            self.i += 1
            den_tok = self.tok
            den = self.integer("denominator")
            if den == 0:
                raise ParseError("division by zero", den_tok.line, den_tok.column, den_tok.text)
            value /= den
        return value

    def time(self) -> Fraction:
        return self.rational("time")

    def end(self):
        if self.tok.kind != "eol":
            self.fail("end of line")

    def coeff(self) -> Coeff:
        neg = False
        while self.accept("-"):
            neg = not neg
        if self.at("|"):
            c = Coeff(Fraction(1))
        else:
            value = self.rational("coefficient")
            radicand = 1
            if self.at("/") and self.toks[self.i + 1].text == "sqrt":
                self.i += 2
                self.expect("(")
                rt = self.tok
                radicand = self.integer("integer under sqrt")
                if radicand < 1:
                    raise ParseError("sqrt argument must be positive", rt.line, rt.column, rt.text)
                self.expect(")")
            c = Coeff(value, radicand)
        return -c if neg else c

    def term(self) -> Term:
        c = self.coeff()
        self.expect("|")
        labels = []
        while not self.at(">"):
            if self.tok.kind == "eol":
                self.fail("'>'")
            self.accept(",")
            labels.append(self.label())
        self.expect(">")
        if not labels:
            self.fail("label")
        return Term(c, tuple(labels))


def parse(text: str) -> EdlDocument:
    """Parse EDL source.  Raises :class:`ParseError` at the first problem."""
    if text.startswith("﻿"):
        text = text[1:]
    declarations: list = []
    state: StateDecl | None = None
    events: list = []
    queries: list = []
    last_line = 0
    for lineno, raw in enumerate(text.splitlines(), start=1):
        last_line = lineno
        toks = tokenize_line(raw, lineno)
        if toks[0].kind == "eol":
            continue
        p = _LineParser(toks)
        head = p.tok
        word = head.text if head.kind == "ident" else None
        if word in ("system", "pointer"):
            if state is not None:
                raise ParseError("declarations must precede the state", lineno, head.column, head.text)
            p.i += 1
            name = p.ident(f"{word} name")
            if word == "system":
                p.expect("outcomes")
                outcomes = [p.label()]
                while p.tok.kind != "eol":
                    outcomes.append(p.label())
                declarations.append(SystemDecl(name, tuple(outcomes), lineno))
            else:
                p.expect("for")
                system = p.ident("system name")
                companions = []
                if p.accept("with"):
                    companions.append(p.ident("companion pointer"))
                    while p.tok.kind != "eol":
                        companions.append(p.ident("companion pointer"))
                declarations.append(PointerDecl(name, system, tuple(companions), lineno))
            p.end()
        elif word == "state":
            if state is not None:
                raise ParseError("state declared twice", lineno, head.column, head.text)
            p.i += 1
            terms = [p.term()]
            while p.tok.kind != "eol":
                if p.accept("+"):
                    terms.append(p.term())
                elif p.accept("-"):
                    t = p.term()
                    terms.append(Term(-t.coeff, t.labels))
                else:
                    p.fail("'+', '-' or end of line")
            state = StateDecl(tuple(terms), lineno)
        elif word == "at" or word in _EVENT_WORDS:
            if word == "at":
                p.i += 1
                t = p.time()
                ev = _event_body(p, t, lineno)
            else:
                ev = _event_body(p, None, lineno)
            p.end()
            if state is None:
                raise ParseError("state not declared before events", lineno, head.column, head.text)
            events.append(ev)
        elif word == "query":
            p.i += 1
            p.expect("P")
            p.expect("(")
            items = [_query_item(p)]
            while p.accept("&"):
                items.append(_query_item(p))
            p.expect(")")
            p.end()
            if state is None:
                raise ParseError("state not declared before queries", lineno, head.column, head.text)
            queries.append(QueryStmt(tuple(items), lineno))
        else:
            p.fail("statement keyword (system, pointer, state, at, query)")
    if state is None:
        raise ParseError("no state declared", max(last_line, 1), 1)
    return EdlDocument(tuple(declarations), state, tuple(events), tuple(queries), text)


def _event_body(p: _LineParser, t: Fraction | None, lineno: int):
    kind = p.tok.text if p.tok.kind == "ident" else None
    if kind not in _EVENT_WORDS:
        p.fail("event (measure, reset, unitary)")
    p.i += 1
    if kind == "measure":
        system = p.ident("system name")
        p.expect("->")
        pointer = p.ident("pointer name")
        args = (system, pointer)
        ctor = MeasureStmt
    elif kind == "reset":
        args = (p.integer("event number"),)
        ctor = ResetStmt
    else:
        args = (p.ident("unitary name"),)
        ctor = UnitaryStmt
    if t is None:
        p.expect("@")
        t = p.time()
    return ctor(t, *args, line=lineno)


def _query_item(p: _LineParser) -> QueryItem:
    pointer = p.ident("pointer name")
    p.expect("=")
    label = p.label()
    p.expect("@")
    return QueryItem(pointer, label, p.time())


# -- formatter -----------------------------------------------------------------


def _fmt_state(state: StateDecl) -> str:
    parts = []
    for i, t in enumerate(state.terms):
        ket = f"|{' '.join(t.labels)}>"
        if i == 0:
            parts.append(f"{t.coeff}{ket}")
        elif t.coeff.value < 0:
            parts.append(f"- {-t.coeff}{ket}")
        else:
            parts.append(f"+ {t.coeff}{ket}")
    return "state " + " ".join(parts)


def format(doc: EdlDocument) -> str:  # noqa: A001  (mirrors parse)
    lines = []
    for d in doc.declarations:
        if isinstance(d, SystemDecl):
            lines.append(f"system {d.name} outcomes {' '.join(d.outcomes)}")
        else:
            with_ = f" with {' '.join(d.companions)}" if d.companions else ""
            lines.append(f"pointer {d.name} for {d.system}{with_}")
    lines.append(_fmt_state(doc.state))
    for e in doc.events:
        if isinstance(e, MeasureStmt):
            lines.append(f"at {e.time} measure {e.system} -> {e.pointer}")
        elif isinstance(e, ResetStmt):
            lines.append(f"at {e.time} reset {e.target}")
        else:
            lines.append(f"at {e.time} unitary {e.name}")
    for q in doc.queries:
        items = " & ".join(f"{i.pointer}={i.label}@{i.time}" for i in q.items)
        lines.append(f"query P({items})")
    return "\n".join(lines) + "\n"


# -- validation ----------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class Experiment:
    schedule: Schedule
    queries: tuple[MultiTimeQuery, ...]


def validate(doc: EdlDocument, unitaries: Mapping[str, UnitaryMap] | None = None) -> Experiment:
    """Compile a parsed document to a :class:`Schedule` and resolved queries."""
    unitaries = unitaries or {}
    systems: dict[str, SystemDecl] = {}
    pointers: dict[str, PointerDecl] = {}
    parts = []
    seen = set()
    for d in doc.declarations:
        if d.name in seen:
            raise ValidationError(f"duplicate subsystem {d.name!r}", d.line)
        seen.add(d.name)
        if isinstance(d, SystemDecl):
            if len(set(d.outcomes)) != len(d.outcomes) or len(d.outcomes) < 2:
                raise ValidationError(f"system {d.name!r} needs at least two distinct outcomes", d.line)
            systems[d.name] = d
            parts.append((d.name, len(d.outcomes), d.outcomes))
        else:
            if d.system not in systems:
                raise ValidationError(f"unknown subsystem {d.system!r}", d.line)
            pointers[d.name] = d
            outs = systems[d.system].outcomes
            parts.append((d.name, len(outs) + 1, pointer_labels(d.name, outs)))
    if not parts:
        raise ValidationError("no subsystems declared", doc.state.line)
    for d in pointers.values():
        for c in d.companions:
            if c not in pointers:
                raise ValidationError(f"unknown subsystem {c!r}", d.line)
            if pointers[c].system != d.system:
                raise ValidationError(f"companion {c!r} records {pointers[c].system!r}, not {d.system!r}", d.line)
    try:
        layout = compose_layout(parts)
    except LayoutError as exc:
        raise ValidationError(str(exc), doc.declarations[0].line) from None

    amps = np.zeros(layout.total_dim, dtype=complex)
    for term in doc.state.terms:
        if len(term.labels) != len(layout.subsystems):
            raise ValidationError(
                f"ket has {len(term.labels)} labels, expected {len(layout.subsystems)} ({' '.join(layout.names)})",
                doc.state.line,
            )
        try:
            cfg = layout.config_from_labels(term.labels)
        except LayoutError as exc:
            raise ValidationError(str(exc), doc.state.line) from None
        amps[layout.flat_index(cfg)] += float(term.coeff)
    try:
        initial = PureState(layout, amps)
    except ValueError as exc:
        raise ValidationError(str(exc), doc.state.line) from None

    events = []
    for idx, e in enumerate(doc.events):
        if events and not e.time > events[-1].time:
            raise ValidationError(f"non-increasing event times ({e.time} after {events[-1].time})", e.line)
        if isinstance(e, MeasureStmt):
            if e.system not in systems:
                raise ValidationError(f"unknown subsystem {e.system!r}", e.line)
            if e.pointer not in pointers:
                raise ValidationError(f"unknown subsystem {e.pointer!r}", e.line)
            pd = pointers[e.pointer]
            if pd.system != e.system:
                raise ValidationError(f"pointer {e.pointer!r} records {pd.system!r}, not {e.system!r}", e.line)
            kind = Measure(MeasurementSpec(e.system, e.pointer, pd.companions))
        elif isinstance(e, ResetStmt):
            if not 1 <= e.target <= len(doc.events):
                raise ValidationError(f"reset target {e.target} does not exist", e.line)
            if e.target - 1 >= idx:
                raise ValidationError("reset precedes target", e.line)
            if isinstance(doc.events[e.target - 1], ResetStmt):
                raise ValidationError("reset cannot target another reset", e.line)
            kind = Reset(e.target - 1)
        else:
            if e.name not in unitaries:
                raise ValidationError(f"unknown unitary {e.name!r}", e.line)
            kind = Custom(unitaries[e.name], e.name)
        events.append(Event(e.time, kind))
    try:
        schedule = Schedule(layout, initial, tuple(events))
    except (ScheduleError, LayoutError) as exc:
        raise ValidationError(str(exc), doc.events[0].line if doc.events else doc.state.line) from None

    queries = []
    for q in doc.queries:
        outcomes = []
        for item in q.items:
            if item.pointer not in pointers:
                raise ValidationError(f"unknown subsystem {item.pointer!r}", q.line)
            outs = pointer_labels(item.pointer, systems[pointers[item.pointer].system].outcomes)[1:]
            if item.label not in outs:
                raise ValidationError(f"unknown outcome label {item.label!r} (outcomes {' '.join(outs)})", q.line)
            found = None
            for i, ev in enumerate(events):
                if isinstance(ev.kind, Measure) and ev.kind.spec.pointer == item.pointer and ev.time <= item.time:
                    found = i
            if found is None:
                raise ValidationError(f"no measurement into {item.pointer!r} at or before t={item.time}", q.line)
            outcomes.append(OutcomeEvent(found, item.label, item.time))
        queries.append(MultiTimeQuery(tuple(outcomes)))
    return Experiment(schedule, tuple(queries))


def load(path, unitaries: Mapping[str, UnitaryMap] | None = None) -> Experiment:
    with open(path, encoding="utf-8", newline="") as fh:
        return validate(parse(fh.read()), unitaries)


def bundled(name: str) -> str:
    """Source text of a bundled scenario file (``version1`` or ``version2``)."""
    return resources.files("bruq").joinpath("data").joinpath(f"{name}.edl").read_text(encoding="utf-8")
