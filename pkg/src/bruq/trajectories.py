"""Hidden-variable configuration dynamics on the discrete lab basis.

Each trajectory carries one basis configuration alongside the state vector.
Two transition rules are provided:

``permutation``
    The configuration follows the event's basis permutation.  Since a
    permutation maps each configuration block onto exactly one other, this is
    the discrete counterpart of a Bohm position that never jumps between
    non-overlapping packets.
``resample``
    After every event the configuration is drawn afresh from the post-event
    Born weights, independently of where it was.

Both keep the configuration distribution equal to the Born weights at every
epoch, yet they give different answers for multi-time joint probabilities
of erased records.

Random numbers come from :mod:`bruq.rng`: trajectory ``k`` at step ``s``
(0 = initial draw, ``j + 1`` = after event ``j``) uses counter ``(k, s)``, so
results do not depend on how the ensemble is split across workers.
"""

from __future__ import annotations

import enum
import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np
from scipy import stats

from . import rng
from .born import MultiTimeQuery, QueryError
from .hilbert import Configuration, PureState, Question, SubsystemLayout, UnitaryMap
from .lab import Measure, Timeline

SUPPORT_TOL = 1e-12


class DynamicsRule(enum.Enum):
    PERMUTATION = "permutation"
    RESAMPLE = "resample"


class RuleInapplicable(ValueError):
    pass


def thread_count() -> int:
    """Worker count from ``BRUQ_THREADS`` (default 1)."""
    raw = os.environ.get("BRUQ_THREADS", "").strip()
    if not raw:
        return 1
    n = int(raw)
    if n < 1:
        raise ValueError(f"BRUQ_THREADS must be >= 1, got {raw!r}")
    return n


def _chunks(n: int, workers: int) -> list[range]:
    workers = max(1, min(workers, n))
    bounds = np.linspace(0, n, workers + 1).astype(int)
    return [range(a, b) for a, b in zip(bounds[:-1], bounds[1:]) if b > a]


def _sample_flat(probs: np.ndarray, u: np.ndarray) -> np.ndarray:
    cdf = np.cumsum(probs)
    if cdf[-1] <= 0:
        raise ValueError("cannot sample from an all-zero state")
    idx = np.searchsorted(cdf, u * cdf[-1], side="right")
    return np.minimum(idx, len(probs) - 1)


def _rule(rule) -> DynamicsRule:
    return rule if isinstance(rule, DynamicsRule) else DynamicsRule(rule)


def sample_initial(state: PureState, seed: int, index: int = 0) -> Configuration:
    u = rng.uniforms(seed, [index], step=0)
    return state.layout.configuration(_sample_flat(state.probabilities, u)[0])


def step(
    config: Configuration,
    unitary: UnitaryMap,
    post_state: PureState,
    rule,
    seed: int,
    *,
    index: int = 0,
    step_index: int = 1,
) -> Configuration:
    """Move one configuration across one event."""
    rule = _rule(rule)
    layout = post_state.layout
    if rule is DynamicsRule.PERMUTATION:
        if not unitary.is_permutation:
            raise RuleInapplicable(f"permutation rule needs a permutation unitary, got {unitary!r}")
        return layout.configuration(unitary.map_flat(layout, [layout.flat_index(config)])[0])
    u = rng.uniforms(seed, [index], step=step_index)
    return layout.configuration(_sample_flat(post_state.probabilities, u)[0])


@dataclass(frozen=True)
class TrajectoryRecord:
    configurations: tuple[Configuration, ...]
    readouts: tuple[tuple[int, str], ...]


@dataclass(frozen=True, eq=False)
class TrajectoryEnsemble:
    """Configurations of ``n`` trajectories at every epoch.

    ``configs[e, k]`` is the flat configuration index of trajectory ``k``
    during epoch ``e``; ``readouts[j][k]`` is the pointer label index read
    immediately after measurement event ``j``.
    """

    rule: DynamicsRule | str
    seed: int
    layout: SubsystemLayout
    configs: np.ndarray
    readouts: dict

    @property
    def n(self) -> int:
        return self.configs.shape[1]

    @property
    def counts(self) -> np.ndarray:
        return np.stack([np.bincount(row, minlength=self.layout.total_dim) for row in self.configs])

    def trajectory(self, k: int, timeline: Timeline) -> TrajectoryRecord:
        confs = tuple(self.layout.configuration(c) for c in self.configs[:, k])
        reads = []
        for j, arr in sorted(self.readouts.items()):
            ptr = timeline.events[j].kind.spec.pointer
            reads.append((j, self.layout.subsystem(ptr).labels[arr[k]]))
        return TrajectoryRecord(confs, tuple(reads))


def _check_rule(timeline: Timeline, rule: DynamicsRule) -> None:
    if rule is DynamicsRule.PERMUTATION:
        for j, u in enumerate(timeline.unitaries):
            if not u.is_permutation:
                raise RuleInapplicable(
                    f"permutation rule is inapplicable: event {j} ({timeline.events[j].kind}) is not a permutation"
                )


def _run_chunk(timeline: Timeline, rule: DynamicsRule, seed: int, idx: np.ndarray):
    layout = timeline.layout
    flat = _sample_flat(timeline.states[0].probabilities, rng.uniforms(seed, idx, step=0))
    configs = [flat]
    readouts = {}
    for j, (ev, u) in enumerate(zip(timeline.events, timeline.unitaries)):
        if rule is DynamicsRule.PERMUTATION:
            flat = u.map_flat(layout, flat)
        else:
            flat = _sample_flat(timeline.states[j + 1].probabilities, rng.uniforms(seed, idx, step=j + 1))
        configs.append(flat)
        if isinstance(ev.kind, Measure):
            axis = layout.position(ev.kind.spec.pointer)
            readouts[j] = np.unravel_index(flat, layout.dims)[axis]
    return np.stack(configs), readouts


def run_ensemble(timeline: Timeline, rule, n: int, seed: int, workers: int | None = None) -> TrajectoryEnsemble:
    rule = _rule(rule)
    if n < 1:
        raise ValueError("need at least one trajectory")
    _check_rule(timeline, rule)
    workers = thread_count() if workers is None else workers
    parts = _chunks(n, workers)
    job = lambda r: _run_chunk(timeline, rule, seed, np.arange(r.start, r.stop, dtype=np.uint64))  # noqa: E731
    if len(parts) == 1:
        results = [job(parts[0])]
    else:
        with ThreadPoolExecutor(max_workers=len(parts)) as pool:
            results = list(pool.map(job, parts))
    configs = np.concatenate([r[0] for r in results], axis=1).astype(np.int64)
    readouts = {j: np.concatenate([r[1][j] for r in results]).astype(np.int64) for j in results[0][1]}
    return TrajectoryEnsemble(rule, seed, timeline.layout, configs, readouts)


@dataclass(frozen=True)
class Estimate:
    value: float
    stderr: float
    n: int


def _estimate(hits: np.ndarray) -> Estimate:
    n = hits.size
    p = float(np.count_nonzero(hits)) / n
    return Estimate(p, float(np.sqrt(p * (1 - p) / n)), n)


def multi_time_joint(ensemble: TrajectoryEnsemble, query: MultiTimeQuery, timeline: Timeline) -> Estimate:
    """Fraction of trajectories whose logged readouts match every queried outcome."""
    hits = np.ones(ensemble.n, dtype=bool)
    for o in query.outcomes:
        if o.event not in ensemble.readouts:
            raise QueryError(f"event {o.event} has no readout log")
        ptr = timeline.events[o.event].kind.spec.pointer
        labels = ensemble.layout.subsystem(ptr).labels
        if o.label not in labels:
            raise QueryError(f"unknown outcome label {o.label!r} for pointer {ptr!r}")
        hits &= ensemble.readouts[o.event] == labels.index(o.label)
    return _estimate(hits)


def single_time_estimate(ensemble: TrajectoryEnsemble, timeline: Timeline, question: Question, t) -> Estimate:
    """Fraction of trajectories whose configuration at time ``t`` satisfies ``question``."""
    row = ensemble.configs[timeline.epoch_of(t)]
    return _estimate(question.mask(ensemble.layout)[row])


def exact_permutation_joint(timeline: Timeline, query: MultiTimeQuery) -> float:
    """Joint probability under the permutation rule by enumerating initial configurations.

    No sampling: each initial configuration with nonzero Born weight is
    pushed through every event deterministically and its weight is added
    when its readouts match the query.  The matched weight is divided by
    the total enumerated weight, so rounding in the amplitudes' norm does
    not leak into the answer.
    """
    _check_rule(timeline, DynamicsRule.PERMUTATION)
    layout = timeline.layout
    probs = timeline.states[0].probabilities
    flat = np.flatnonzero(probs > 0)
    weight = probs[flat]
    match = np.ones(flat.size, dtype=bool)
    wanted = {}
    for o in query.outcomes:
        ptr = timeline.events[o.event].kind.spec.pointer
        wanted.setdefault(o.event, []).append(layout.subsystem(ptr).label_index(o.label))
    for j, (ev, u) in enumerate(zip(timeline.events, timeline.unitaries)):
        flat = u.map_flat(layout, flat)
        if j in wanted:
            axis = layout.position(ev.kind.spec.pointer)
            read = np.unravel_index(flat, layout.dims)[axis]
            for lab in wanted[j]:
                match &= read == lab
    return math.fsum(weight[match]) / math.fsum(weight)


@dataclass(frozen=True)
class EpochFit:
    epoch: int
    start: object  # Fraction, or None for the initial epoch
    chi2: float
    dof: int
    p_value: float
    outside_support: int

    def passed(self, alpha: float = 1e-3) -> bool:
        return self.p_value >= alpha


def equivariance_report(ensemble: TrajectoryEnsemble, timeline: Timeline) -> list[EpochFit]:
    """Per-epoch Pearson chi-square of configuration counts against Born weights.

    Degrees of freedom are the number of configurations with weight above
    ``SUPPORT_TOL``, minus one.  Any trajectory found outside that support
    makes the statistic infinite.
    """
    fits = []
    counts = ensemble.counts
    n = ensemble.n
    for e, start in enumerate(timeline.epoch_starts):
        probs = timeline.states[e].probabilities
        support = probs > SUPPORT_TOL
        observed = counts[e]
        outside = int(observed[~support].sum())
        expected = n * probs[support]
        dof = int(support.sum()) - 1
        if outside:
            chi2, p = float("inf"), 0.0
        else:
            chi2 = float(np.sum((observed[support] - expected) ** 2 / expected))
            p = float(stats.chi2.sf(chi2, dof)) if dof > 0 else 1.0
        fits.append(EpochFit(e, start, chi2, dof, p, outside))
    return fits


__all__ = [
    "DynamicsRule",
    "RuleInapplicable",
    "TrajectoryEnsemble",
    "TrajectoryRecord",
    "Estimate",
    "EpochFit",
    "sample_initial",
    "step",
    "run_ensemble",
    "multi_time_joint",
    "single_time_estimate",
    "exact_permutation_joint",
    "equivariance_report",
    "thread_count",
]
