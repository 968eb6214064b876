import math
from collections import Counter
from fractions import Fraction

import numpy as np
import pytest
from scipy import stats

from bruq.born import MultiTimeQuery, OutcomeEvent, evaluate, resolve_outcome
from bruq.hilbert import DenseUnitary, Question, basis_state, born_probability
from bruq.lab import Custom, Event, Schedule, builtin_scenario, evolve, lab_layout, measurement_unitary, ALICE
from bruq.trajectories import (
    DynamicsRule,
    RuleInapplicable,
    TrajectoryEnsemble,
    equivariance_report,
    exact_permutation_joint,
    multi_time_joint,
    run_ensemble,
    sample_initial,
    single_time_estimate,
    step,
)

N = 100_000
T15, T35 = Fraction(3, 2), Fraction(7, 2)


def joint_query(tl, a="A1", b="B1"):
    return MultiTimeQuery.of(resolve_outcome(tl, "A", a, T15), resolve_outcome(tl, "B", b, T35))


@pytest.fixture(scope="module")
def ensembles(v1, v2):
    return {
        (name, rule): run_ensemble(tl, rule, N, seed=11)
        for name, tl in (("version1", v1), ("version2", v2))
        for rule in DynamicsRule
    }


def test_sample_initial_basis_state():
    lay = lab_layout()
    psi = basis_state(lay, ["2", "A1", "Br", "E2"])
    for seed in range(5):
        assert sample_initial(psi, seed) == lay.config_from_labels(["2", "A1", "Br", "E2"])


def test_sample_initial_two_outcomes(v1):
    lay = v1.layout
    allowed = {lay.config_from_labels(["1", "Ar", "Br", "Er"]), lay.config_from_labels(["2", "Ar", "Br", "Er"])}
    seen = {sample_initial(v1.schedule.initial, seed, index=k) for seed in range(3) for k in range(20)}
    assert seen == allowed


def test_sample_initial_frequency(v1):
    ens = run_ensemble(v1, "resample", N, seed=3)
    freq = single_time_estimate(ens, v1, Question.where(S="1"), 0).value
    assert abs(freq - 0.5) <= 3 * math.sqrt(0.25 / N)


def test_step_permutation_follows_measurement_and_reset(v2):
    lay = v2.layout
    u = v2.unitaries[0]
    start = lay.config_from_labels(["1", "Ar", "Br", "Er"])
    after = step(start, u, v2.states[1], "permutation", seed=0)
    assert after == lay.config_from_labels(["1", "A1", "Br", "E1"])
    back = step(after, v2.unitaries[1], v2.states[2], "permutation", seed=0)
    assert back == start


def test_step_resample_ignores_input(v1):
    lay = v1.layout
    u, post = v1.unitaries[0], v1.states[1]
    targets = {lay.config_from_labels(["1", "A1", "Br", "E1"]), lay.config_from_labels(["2", "A2", "Br", "E2"])}
    draws = Counter()
    weird = lay.config_from_labels(["2", "A1", "B2", "E1"])
    for k in range(4000):
        a = step(lay.config_from_labels(["1", "Ar", "Br", "Er"]), u, post, "resample", seed=5, index=k)
        b = step(weird, u, post, "resample", seed=5, index=k)
        assert a == b
        draws[a] += 1
    assert set(draws) == targets
    # oracle: Born weights of the post-measurement superposition are 1/2 each
    p = draws[lay.config_from_labels(["1", "A1", "Br", "E1"])] / 4000
    assert abs(p - 0.5) <= 3 * math.sqrt(0.25 / 4000)


def test_permutation_rule_rejects_dense_unitaries():
    base = builtin_scenario("version1")
    rot = DenseUnitary(["S"], [2], [[1 / math.sqrt(2), -1 / math.sqrt(2)], [1 / math.sqrt(2), 1 / math.sqrt(2)]])
    tl = evolve(Schedule(base.layout, base.initial, (Event(2, Custom(rot, "rot")),)))
    with pytest.raises(RuleInapplicable):
        run_ensemble(tl, "permutation", 10, seed=0)
    with pytest.raises(RuleInapplicable):
        step((0, 0, 0, 0), rot, tl.states[1], "permutation", seed=0)
    with pytest.raises(RuleInapplicable):
        exact_permutation_joint(tl, MultiTimeQuery.of(OutcomeEvent(0, "A1", 3)))


def test_exact_enumeration(v1, v2):
    assert exact_permutation_joint(v2, joint_query(v2)) == pytest.approx(0.5, abs=1e-15)
    assert exact_permutation_joint(v1, joint_query(v1)) == pytest.approx(0.5, abs=1e-15)
    assert exact_permutation_joint(v2, joint_query(v2, "A1", "B2")) == 0.0


def test_version2_permutation_joint(ensembles, v2):
    ens = ensembles[("version2", DynamicsRule.PERMUTATION)]
    est = multi_time_joint(ens, joint_query(v2), v2)
    # deterministic given the initial draw: joint == fraction that started with S=1
    started_s1 = single_time_estimate(ens, v2, Question.where(S="1"), 0).value
    assert est.value == started_s1
    assert abs(est.value - 0.5) <= 3 * math.sqrt(0.25 / N)


def test_version2_resample_joint(ensembles, v2):
    est = multi_time_joint(ensembles[("version2", DynamicsRule.RESAMPLE)], joint_query(v2), v2)
    assert abs(est.value - 0.25) <= 3 * math.sqrt(0.25 * 0.75 / N)
    assert est.stderr == pytest.approx(math.sqrt(est.value * (1 - est.value) / N))


@pytest.mark.parametrize("rule", list(DynamicsRule))
def test_version1_single_time_joint(ensembles, v1, rule):
    est = single_time_estimate(ensembles[("version1", rule)], v1, Question.where(A="A1", B="B1"), T35)
    assert abs(est.value - evaluate(joint_query(v1), v1)) <= 3 * math.sqrt(0.25 / N)


def test_impossible_conjunction_is_zero(ensembles, v2):
    ens = ensembles[("version2", DynamicsRule.RESAMPLE)]
    q = MultiTimeQuery.of(OutcomeEvent(0, "A1", T15), OutcomeEvent(0, "A2", T15))
    assert multi_time_joint(ens, q, v2).value == 0.0


def test_missing_readout(ensembles, v2):
    ens = ensembles[("version2", DynamicsRule.RESAMPLE)]
    with pytest.raises(Exception, match="readout"):
        multi_time_joint(ens, MultiTimeQuery.of(OutcomeEvent(1, "A1", 3)), v2)


def test_counts_sum_to_n(ensembles):
    for ens in ensembles.values():
        assert np.all(ens.counts.sum(axis=1) == N)


@pytest.mark.parametrize("name", ["version1", "version2"])
@pytest.mark.parametrize("rule", list(DynamicsRule))
def test_equivariance(ensembles, v1, v2, name, rule):
    tl = v1 if name == "version1" else v2
    fits = equivariance_report(ensembles[(name, rule)], tl)
    assert len(fits) == len(tl.states)
    assert all(f.passed(1e-3) for f in fits), fits


def test_chi_square_matches_scipy(ensembles, v2):
    ens = ensembles[("version2", DynamicsRule.RESAMPLE)]
    fits = equivariance_report(ens, v2)
    for e, fit in enumerate(fits):
        probs = v2.states[e].probabilities
        sup = probs > 1e-12
        ref = stats.chisquare(ens.counts[e][sup], N * probs[sup] / probs[sup].sum())
        assert fit.chi2 == pytest.approx(ref.statistic, rel=1e-9)
        assert fit.p_value == pytest.approx(ref.pvalue, rel=1e-6)
        assert fit.dof == int(sup.sum()) - 1


def test_frozen_configurations_fail_under_rotation():
    base = builtin_scenario("version1")
    c, s = math.cos(math.pi / 4), math.sin(math.pi / 4)
    rot = DenseUnitary(["S"], [2], [[c, -s], [s, c]])
    # start in |1>; after the rotation Born weights are 1/2, 1/2
    lay = base.layout
    init = basis_state(lay, ["1", "Ar", "Br", "Er"])
    tl = evolve(Schedule(lay, init, (Event(1, Custom(rot, "rot")),)))
    row = np.full(N, lay.flat_index(lay.config_from_labels(["1", "Ar", "Br", "Er"])))
    frozen = TrajectoryEnsemble("frozen", 0, lay, np.stack([row, row]), {})
    fits = equivariance_report(frozen, tl)
    assert fits[0].passed(1e-3)
    assert not fits[1].passed(1e-3)


def test_marginal_agreement(ensembles, v1, v2):
    for (name, rule), ens in ensembles.items():
        tl = v1 if name == "version1" else v2
        for t in (Fraction(1, 2), T15, Fraction(5, 2), T35):
            for q in (Question.where(S="1"), Question.where(A="A1"), Question.where(B="B2")):
                est = single_time_estimate(ens, tl, q, t)
                p = born_probability(tl.state_at(t), q)
                assert abs(est.value - p) <= 3 * max(est.stderr, 1 / N)


def test_permutation_keeps_system_component(ensembles, v1, v2):
    for name in ("version1", "version2"):
        ens = ensembles[(name, DynamicsRule.PERMUTATION)]
        s = np.unravel_index(ens.configs, ens.layout.dims)[0]
        assert np.all(s == s[0])


@pytest.mark.parametrize("rule", list(DynamicsRule))
def test_worker_count_does_not_change_results(v2, rule):
    one = run_ensemble(v2, rule, 5003, seed=99, workers=1)
    many = run_ensemble(v2, rule, 5003, seed=99, workers=8)
    assert np.array_equal(one.configs, many.configs)
    assert one.readouts.keys() == many.readouts.keys()
    for j in one.readouts:
        assert np.array_equal(one.readouts[j], many.readouts[j])


def test_thread_env(monkeypatch, v2):
    monkeypatch.setenv("BRUQ_THREADS", "4")
    a = run_ensemble(v2, "resample", 1000, seed=1)
    monkeypatch.setenv("BRUQ_THREADS", "1")
    b = run_ensemble(v2, "resample", 1000, seed=1)
    assert np.array_equal(a.configs, b.configs)


def test_trajectory_record(ensembles, v2):
    ens = ensembles[("version2", DynamicsRule.PERMUTATION)]
    rec = ens.trajectory(0, v2)
    assert len(rec.configurations) == len(v2.states)
    assert [j for j, _ in rec.readouts] == [0, 2]


def test_measurement_unitary_used_by_timeline(v1):
    assert v1.unitaries[0] == measurement_unitary(v1.layout, ALICE)


def test_run_ensemble_requires_trajectories(v1):
    with pytest.raises(ValueError):
        run_ensemble(v1, "resample", 0, seed=0)
