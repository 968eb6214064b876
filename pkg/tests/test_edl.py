import math
import re
from fractions import Fraction
from pathlib import Path

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from bruq import edl
from bruq.born import evaluate
from bruq.edl import Coeff, EdlError, ParseError, ValidationError
from bruq.hilbert import DenseUnitary, born_probability, Question
from bruq.lab import builtin_scenario, evolve

CORPUS = Path(__file__).parent / "corpus"
GOLDEN = sorted((CORPUS / "golden").glob("*.edl"))
DEFECTS = sorted((CORPUS / "defects").glob("*.edl"))


def rotation(theta=math.pi / 3):
    c, s = math.cos(theta), math.sin(theta)
    return DenseUnitary(["S"], [2], [[c, -s], [s, c]])


def test_corpus_sizes():
    assert len(GOLDEN) >= 10
    assert len(DEFECTS) >= 10


@pytest.mark.parametrize("path", GOLDEN, ids=lambda p: p.stem)
def test_golden_round_trip(path):
    doc = edl.parse(path.read_text())
    text = edl.format(doc)
    again = edl.parse(text)
    assert again == doc
    assert edl.format(again) == text
    assert "#" not in text and "\r" not in text


@pytest.mark.parametrize("path", GOLDEN, ids=lambda p: p.stem)
def test_golden_validates(path):
    exp = edl.validate(edl.parse(path.read_text()), {"rotate": rotation()})
    assert abs(np.linalg.norm(exp.schedule.initial.amplitudes) - 1) < 1e-12


@pytest.mark.parametrize("path", DEFECTS, ids=lambda p: p.stem)
def test_defect_reports_line(path):
    text = path.read_text()
    expected = int(re.search(r"# expect-line: (\d+)", text).group(1))
    with pytest.raises(EdlError) as info:
        edl.validate(edl.parse(text))
    assert info.value.line == expected, str(info.value)
    assert info.value.column >= 1


@pytest.mark.parametrize("name", ["version1", "version2"])
def test_bundled_matches_builtin(name):
    exp = edl.validate(edl.parse(edl.bundled(name)))
    assert exp.schedule == builtin_scenario(name)


def test_bundled_version2_shape():
    doc = edl.parse(edl.bundled("version2"))
    assert len(doc.declarations) == 4
    assert len(doc.events) == 3
    assert len(doc.state.terms) == 2
    assert len(doc.queries) == 3


def test_bundled_queries_match_direct_evaluation(v1):
    exp = edl.validate(edl.parse(edl.bundled("version1")))
    tl = evolve(exp.schedule)
    values = [evaluate(q, tl) for q in exp.queries]
    assert values == pytest.approx([0.5, 0.5, 0.5], abs=1e-12)


def test_event_without_state():
    with pytest.raises(ParseError, match="state not declared before events") as info:
        edl.parse("measure S -> A @ 1")
    assert info.value.line == 1


def test_banana_column():
    with pytest.raises(ParseError) as info:
        edl.parse("at banana")
    assert (info.value.line, info.value.column, info.value.token) == (1, 4, "banana")


def test_reset_precedes_target_message():
    text = "system S outcomes 1 2\npointer A for S\nstate 1|1 Ar>\nat 1/2 reset 2\nat 1 measure S -> A\n"
    with pytest.raises(ValidationError, match="reset precedes target"):
        edl.validate(edl.parse(text))


def test_unknown_outcome_label_message():
    text = "system S outcomes 1 2\npointer A for S\nstate 1|1 Ar>\nat 1 measure S -> A\nquery P(A=A3@1)\n"
    with pytest.raises(ValidationError, match="unknown outcome label"):
        edl.validate(edl.parse(text))


def test_ready_label_is_not_an_outcome():
    text = "system S outcomes 1 2\npointer A for S\nstate 1|1 Ar>\nat 1 measure S -> A\nquery P(A=Ar@1)\n"
    with pytest.raises(ValidationError, match="unknown outcome label"):
        edl.validate(edl.parse(text))


def test_unknown_unitary_without_binding():
    with pytest.raises(ValidationError, match="unknown unitary"):
        edl.validate(edl.parse((CORPUS / "golden" / "10_custom_unitary.edl").read_text()))


def test_custom_unitary_is_applied():
    exp = edl.validate(edl.parse((CORPUS / "golden" / "10_custom_unitary.edl").read_text()), {"rotate": rotation()})
    tl = evolve(exp.schedule)
    assert evaluate(exp.queries[0], tl) == pytest.approx(math.cos(math.pi / 3) ** 2, abs=1e-12)


def test_crlf_equals_lf():
    text = edl.bundled("version2")
    assert edl.parse(text.replace("\n", "\r\n")) == edl.parse(text)


def test_comments_dropped():
    doc = edl.parse("# header\nsystem S outcomes 1 2 # tail\npointer A for S\nstate 1|1 Ar>\n")
    assert edl.format(doc) == "system S outcomes 1 2\npointer A for S\nstate 1|1 Ar>\n"


def test_exact_coefficients():
    doc = edl.parse(edl.bundled("version1"))
    c = doc.state.terms[0].coeff
    assert c == Coeff(Fraction(1), 2)
    assert "1/sqrt(2)|" in edl.format(doc)
    assert "0.7071" not in edl.format(doc)
    assert float(c) == 1 / math.sqrt(2)


def test_decimal_times_become_exact():
    doc = edl.parse((CORPUS / "golden" / "11_decimal_times.edl").read_text())
    assert doc.events[0].time == Fraction(1, 4)
    assert "at 1/4 measure" in edl.format(doc)


def test_signed_terms_amplitudes():
    exp = edl.validate(edl.parse((CORPUS / "golden" / "12_signed_terms.edl").read_text()))
    amps = exp.schedule.initial.amplitudes
    assert sorted(np.round(amps[np.abs(amps) > 0].real, 12)) == sorted(np.round([-0.5, 1 / math.sqrt(2), -0.5], 12))


def test_signed_terms_reset_then_remeasure():
    exp = edl.validate(edl.parse((CORPUS / "golden" / "12_signed_terms.edl").read_text()))
    tl = evolve(exp.schedule)
    assert evaluate(exp.queries[0], tl) == pytest.approx(0.25, abs=1e-12)


def test_two_systems_joint():
    exp = edl.validate(edl.parse((CORPUS / "golden" / "08_two_systems.edl").read_text()))
    tl = evolve(exp.schedule)
    assert evaluate(exp.queries[0], tl) == pytest.approx(0.25, abs=1e-12)
    assert born_probability(tl.state_at(2), Question.where(A="A1")) == pytest.approx(0.5, abs=1e-12)


_ident = st.sampled_from(["S", "T", "Spin", "q0"])
_coeff = st.builds(Coeff, st.fractions(min_value=-5, max_value=5).filter(lambda f: f != 0), st.integers(1, 7))


@settings(max_examples=60, deadline=None)
@given(
    outcomes=st.lists(st.sampled_from(["1", "2", "3", "x", "y"]), min_size=2, max_size=3, unique=True),
    coeffs=st.lists(_coeff, min_size=1, max_size=4),
    times=st.lists(st.fractions(min_value=0, max_value=10), min_size=1, max_size=4, unique=True),
    name=_ident,
)
def test_format_parse_round_trip_generated(outcomes, coeffs, times, name):
    decls = (edl.SystemDecl(name, tuple(outcomes)), edl.PointerDecl("P", name))
    terms = tuple(edl.Term(c, (outcomes[i % len(outcomes)], "Pr")) for i, c in enumerate(coeffs))
    events = tuple(edl.MeasureStmt(t, name, "P") for t in sorted(times))
    queries = (edl.QueryStmt((edl.QueryItem("P", "P" + outcomes[0], max(times)),)),)
    doc = edl.EdlDocument(decls, edl.StateDecl(terms), events, queries)
    assert edl.parse(edl.format(doc)) == doc
