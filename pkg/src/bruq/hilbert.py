"""Labelled finite-dimensional state algebra.

Composite spaces are tensor products of named subsystems.  Amplitude vectors
are indexed row-major in layout order, so the configuration
``(i_0, i_1, ..., i_{n-1})`` lives at ``np.ravel_multi_index(config, dims)``.
Every module in the package shares this indexing.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence

import numpy as np

NORM_TOL = 1e-10
UNITARY_TOL = 1e-10

Configuration = tuple[int, ...]


class LayoutError(ValueError):
    """Bad subsystem declaration, or a reference to an unknown subsystem/label."""


@dataclass(frozen=True)
class Subsystem:
    name: str
    dim: int
    labels: tuple[str, ...]

    def __post_init__(self):
        if self.dim < 2:
            raise LayoutError(f"subsystem {self.name!r}: dimension must be >= 2, got {self.dim}")
        if len(self.labels) != self.dim:
            raise LayoutError(
                f"subsystem {self.name!r}: {len(self.labels)} labels for dimension {self.dim}"
            )
        if len(set(self.labels)) != self.dim:
            raise LayoutError(f"subsystem {self.name!r}: duplicate labels {self.labels}")

    def label_index(self, label: str) -> int:
        try:
            return self.labels.index(label)
        except ValueError:
            raise LayoutError(f"label {label!r} not in subsystem {self.name!r} {self.labels}") from None


@dataclass(frozen=True)
class SubsystemLayout:
    subsystems: tuple[Subsystem, ...]
    _index: dict = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        if not self.subsystems:
            raise LayoutError("empty layout")
        names = [s.name for s in self.subsystems]
        if len(set(names)) != len(names):
            raise LayoutError(f"duplicate subsystem names in {names}")
        object.__setattr__(self, "_index", {n: i for i, n in enumerate(names)})

    @property
    def names(self) -> tuple[str, ...]:
        return tuple(s.name for s in self.subsystems)

    @property
    def dims(self) -> tuple[int, ...]:
        return tuple(s.dim for s in self.subsystems)

    @property
    def total_dim(self) -> int:
        return math.prod(self.dims)

    def __contains__(self, name: str) -> bool:
        return name in self._index

    def position(self, name: str) -> int:
        try:
            return self._index[name]
        except KeyError:
            raise LayoutError(f"unknown subsystem {name!r}; layout has {self.names}") from None

    def subsystem(self, name: str) -> Subsystem:
        return self.subsystems[self.position(name)]

    def flat_index(self, config: Sequence[int]) -> int:
        if len(config) != len(self.subsystems):
            raise LayoutError(f"configuration {tuple(config)} has wrong length for {self.names}")
        for i, d in zip(config, self.dims):
            if not 0 <= i < d:
                raise LayoutError(f"configuration {tuple(config)} out of range for dims {self.dims}")
        return int(np.ravel_multi_index(tuple(config), self.dims))

    def configuration(self, flat: int) -> Configuration:
        return tuple(int(i) for i in np.unravel_index(int(flat), self.dims))

    def config_from_labels(self, labels: Mapping[str, str] | Sequence[str]) -> Configuration:
        """Configuration from labels, given in layout order or keyed by subsystem name."""
        if isinstance(labels, Mapping):
            missing = set(self.names) - set(labels)
            if missing:
                raise LayoutError(f"labels missing for subsystems {sorted(missing)}")
            labels = [labels[n] for n in self.names]
        if len(labels) != len(self.subsystems):
            raise LayoutError(f"expected {len(self.subsystems)} labels, got {len(labels)}")
        return tuple(s.label_index(lab) for s, lab in zip(self.subsystems, labels))

    def describe(self, config: Sequence[int]) -> str:
        return "(" + ",".join(s.labels[i] for s, i in zip(self.subsystems, config)) + ")"


def compose_layout(subsystems: Iterable[tuple]) -> SubsystemLayout:
    """Build a layout from ``(name, dim)`` or ``(name, dim, labels)`` tuples.

    Without explicit labels, basis states are labelled ``"0"``, ``"1"``, ...
    """
    parts = []
    for entry in subsystems:
        if len(entry) == 2:
            name, dim = entry
            labels = tuple(str(i) for i in range(dim))
        else:
            name, dim, labels = entry
        parts.append(Subsystem(name, int(dim), tuple(labels)))
    return SubsystemLayout(tuple(parts))


class PureState:
    """Unit-norm amplitude vector over a layout.  Immutable."""

    __slots__ = ("layout", "amplitudes")

    def __init__(self, layout: SubsystemLayout, amplitudes, *, check: bool = True):
        amps = np.array(amplitudes, dtype=complex).reshape(-1)
        if amps.size != layout.total_dim:
            raise LayoutError(f"{amps.size} amplitudes for total dimension {layout.total_dim}")
        if check:
            norm = np.linalg.norm(amps)
            if abs(norm - 1.0) > NORM_TOL:
                raise ValueError(f"state is not normalized (norm {norm!r})")
        amps.flags.writeable = False
        object.__setattr__(self, "layout", layout)
        object.__setattr__(self, "amplitudes", amps)

    def __setattr__(self, name, value):
        raise AttributeError("PureState is immutable")

    def __eq__(self, other):
        if not isinstance(other, PureState):
            return NotImplemented
        return self.layout == other.layout and np.array_equal(self.amplitudes, other.amplitudes)

    __hash__ = None

    def __repr__(self):
        terms = []
        for flat in np.flatnonzero(np.abs(self.amplitudes) > 1e-15)[:8]:
            a = self.amplitudes[flat]
            terms.append(f"{a:.4g}{self.layout.describe(self.layout.configuration(flat))}")
        more = " + ..." if np.count_nonzero(np.abs(self.amplitudes) > 1e-15) > 8 else ""
        return f"PureState({' + '.join(terms)}{more})"

    @property
    def norm(self) -> float:
        return float(np.linalg.norm(self.amplitudes))

    @property
    def probabilities(self) -> np.ndarray:
        return np.abs(self.amplitudes) ** 2

    def amplitude(self, labels: Mapping[str, str] | Sequence[str]) -> complex:
        return complex(self.amplitudes[self.layout.flat_index(self.layout.config_from_labels(labels))])

    def tensor(self) -> np.ndarray:
        return self.amplitudes.reshape(self.layout.dims)


def basis_state(layout: SubsystemLayout, labels: Mapping[str, str] | Sequence[str]) -> PureState:
    amps = np.zeros(layout.total_dim, dtype=complex)
    amps[layout.flat_index(layout.config_from_labels(labels))] = 1.0
    return PureState(layout, amps)


def product_state(layout: SubsystemLayout, locals_: Mapping[str, Sequence[complex]] | Sequence) -> PureState:
    """Tensor product of per-subsystem vectors, each of unit norm."""
    if isinstance(locals_, Mapping):
        missing = set(layout.names) - set(locals_)
        if missing:
            raise LayoutError(f"no local vector for subsystems {sorted(missing)}")
        extra = set(locals_) - set(layout.names)
        if extra:
            raise LayoutError(f"unknown subsystems {sorted(extra)}")
        vectors = [locals_[n] for n in layout.names]
    else:
        vectors = list(locals_)
        if len(vectors) != len(layout.subsystems):
            raise LayoutError(f"expected {len(layout.subsystems)} local vectors, got {len(vectors)}")
    amps = np.ones(1, dtype=complex)
    for sub, vec in zip(layout.subsystems, vectors):
        v = np.asarray(vec, dtype=complex).reshape(-1)
        if v.size != sub.dim:
            raise LayoutError(f"local vector for {sub.name!r} has length {v.size}, expected {sub.dim}")
        n = np.linalg.norm(v)
        if abs(n - 1.0) > NORM_TOL:
            raise ValueError(f"local vector for {sub.name!r} is not normalized (norm {n!r})")
        amps = np.kron(amps, v)
    return PureState(layout, amps)


class UnitaryMap:
    """A unitary acting on an ordered subset of subsystems.

    The target block is indexed row-major over ``targets`` in the given order
    (which need not match layout order).
    """

    targets: tuple[str, ...]
    dims: tuple[int, ...]

    @property
    def block_dim(self) -> int:
        return math.prod(self.dims)

    @property
    def is_permutation(self) -> bool:
        return False

    def matrix(self) -> np.ndarray:
        raise NotImplementedError

    def adjoint(self) -> UnitaryMap:
        raise NotImplementedError

    def _apply_block(self, block: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def _check_layout(self, layout: SubsystemLayout) -> list[int]:
        axes = [layout.position(t) for t in self.targets]
        actual = tuple(layout.dims[a] for a in axes)
        if actual != self.dims:
            raise LayoutError(f"unitary on {self.targets} expects dims {self.dims}, layout has {actual}")
        return axes

    def apply(self, state: PureState) -> PureState:
        layout = state.layout
        axes = self._check_layout(layout)
        front = list(range(len(axes)))
        t = np.moveaxis(state.tensor(), axes, front)
        shape = t.shape
        block = t.reshape(self.block_dim, -1)
        out = self._apply_block(block).reshape(shape)
        out = np.moveaxis(out, front, axes)
        return PureState(layout, out.reshape(-1), check=False)

    def acts_trivially_on(self, name: str) -> bool:
        """True when the map factorises as identity on ``name`` times something on the rest."""
        if name not in self.targets:
            return True
        k = self.targets.index(name)
        d = self.dims[k]
        rest = self.block_dim // d
        m = self.matrix().reshape(self.dims + self.dims)
        n = len(self.dims)
        # bring the chosen output and input axes to the front: (out_k, in_k, out_rest..., in_rest...)
        m = np.moveaxis(m, [k, n + k], [0, 1]).reshape(d, d, rest, rest)
        v = m[0, 0]
        for a in range(d):
            for b in range(d):
                want = v if a == b else 0.0
                if not np.allclose(m[a, b], want, atol=UNITARY_TOL, rtol=0):
                    return False
        return True


class PermutationUnitary(UnitaryMap):
    """Basis permutation: target-block basis state ``i`` is sent to ``perm[i]``."""

    def __init__(self, targets: Sequence[str], dims: Sequence[int], perm):
        self.targets = tuple(targets)
        self.dims = tuple(int(d) for d in dims)
        p = np.array(perm, dtype=np.int64).reshape(-1)
        if len(set(self.targets)) != len(self.targets):
            raise LayoutError(f"repeated targets {self.targets}")
        if p.size != self.block_dim or not np.array_equal(np.sort(p), np.arange(self.block_dim)):
            raise ValueError("permutation is not a bijection on the target block")
        p.flags.writeable = False
        self.perm = p

    @property
    def is_permutation(self) -> bool:
        return True

    def __eq__(self, other):
        if not isinstance(other, PermutationUnitary):
            return NotImplemented
        return (self.targets, self.dims) == (other.targets, other.dims) and np.array_equal(self.perm, other.perm)

    __hash__ = None

    def __repr__(self):
        moved = int(np.count_nonzero(self.perm != np.arange(self.block_dim)))
        return f"PermutationUnitary(targets={self.targets}, moves={moved})"

    def matrix(self) -> np.ndarray:
        m = np.zeros((self.block_dim, self.block_dim), dtype=complex)
        m[self.perm, np.arange(self.block_dim)] = 1.0
        return m

    def adjoint(self) -> PermutationUnitary:
        inv = np.empty_like(self.perm)
        inv[self.perm] = np.arange(self.block_dim)
        return PermutationUnitary(self.targets, self.dims, inv)

    def _apply_block(self, block):
        out = np.empty_like(block)
        out[self.perm] = block
        return out

    def map_flat(self, layout: SubsystemLayout, flat) -> np.ndarray:
        """Image of flat configuration indices under the permutation (vectorised)."""
        axes = self._check_layout(layout)
        multi = np.unravel_index(np.asarray(flat, dtype=np.int64), layout.dims)
        multi = [np.array(m, dtype=np.int64) for m in multi]
        sub = np.ravel_multi_index([multi[a] for a in axes], self.dims)
        image = np.unravel_index(self.perm[sub], self.dims)
        for a, m in zip(axes, image):
            multi[a] = m
        return np.ravel_multi_index(multi, layout.dims)


class DenseUnitary(UnitaryMap):
    """Unitary given as a dense matrix on the target block."""

    def __init__(self, targets: Sequence[str], dims: Sequence[int], matrix, *, check: bool = True):
        self.targets = tuple(targets)
        self.dims = tuple(int(d) for d in dims)
        if len(set(self.targets)) != len(self.targets):
            raise LayoutError(f"repeated targets {self.targets}")
        m = np.array(matrix, dtype=complex)
        if m.shape != (self.block_dim, self.block_dim):
            raise LayoutError(f"matrix shape {m.shape} does not match target block {self.block_dim}")
        if check:
            err = np.max(np.abs(m @ m.conj().T - np.eye(self.block_dim)))
            if err > UNITARY_TOL:
                raise ValueError(f"matrix is not unitary (max |UU^dagger - I| = {err:.3g})")
        m.flags.writeable = False
        self._m = m

    def __eq__(self, other):
        if not isinstance(other, DenseUnitary):
            return NotImplemented
        return (self.targets, self.dims) == (other.targets, other.dims) and np.array_equal(self._m, other._m)

    __hash__ = None

    def __repr__(self):
        return f"DenseUnitary(targets={self.targets}, dims={self.dims})"

    def matrix(self) -> np.ndarray:
        return self._m.copy()

    def adjoint(self) -> DenseUnitary:
        return DenseUnitary(self.targets, self.dims, self._m.conj().T, check=False)

    def _apply_block(self, block):
        return self._m @ block


def identity(targets: Sequence[str], dims: Sequence[int]) -> PermutationUnitary:
    return PermutationUnitary(targets, dims, np.arange(math.prod(dims)))


def apply_unitary(state: PureState, u: UnitaryMap) -> PureState:
    return u.apply(state)


def adjoint(u: UnitaryMap) -> UnitaryMap:
    return u.adjoint()


@dataclass(frozen=True)
class Question:
    """Diagonal yes/no question: each constrained subsystem must show one of its allowed labels.

    An empty allowed set makes the question unsatisfiable; no constraints at
    all is the trivial always-true question.
    """

    constraints: tuple[tuple[str, frozenset], ...] = ()

    @classmethod
    def where(cls, **allowed) -> Question:
        return cls.of(allowed)

    @classmethod
    def of(cls, allowed: Mapping[str, str | Iterable[str]]) -> Question:
        items = []
        for name, labels in allowed.items():
            labels = frozenset([labels]) if isinstance(labels, str) else frozenset(labels)
            items.append((name, labels))
        return cls(tuple(sorted(items, key=lambda kv: kv[0])))

    @classmethod
    def always(cls) -> Question:
        return cls(())

    def allowed(self) -> dict[str, frozenset]:
        return dict(self.constraints)

    def __and__(self, other: Question) -> Question:
        merged = self.allowed()
        for name, labels in other.constraints:
            merged[name] = merged[name] & labels if name in merged else labels
        return Question.of(merged)

    def __or__(self, other: Question) -> Question:
        """Disjunction; exact only when the two questions differ on at most one subsystem."""
        a, b = self.allowed(), other.allowed()
        differing = [n for n in set(a) | set(b) if a.get(n) != b.get(n)]
        if len(differing) > 1:
            raise ValueError("disjunction differing on several subsystems is not a product question")
        if not differing:
            return self
        n = differing[0]
        if n not in a or n not in b:
            # one side is unconstrained there, so the union is unconstrained
            merged = {k: v for k, v in a.items() if k != n}
            return Question.of(merged)
        merged = dict(a)
        merged[n] = a[n] | b[n]
        return Question.of(merged)

    def mask(self, layout: SubsystemLayout) -> np.ndarray:
        """Boolean vector over flat configurations."""
        m = np.ones(1, dtype=bool)
        allowed = self.allowed()
        for name in allowed:
            layout.position(name)
        for sub in layout.subsystems:
            if sub.name in allowed:
                labels = allowed[sub.name]
                for lab in labels:
                    sub.label_index(lab)
                local = np.array([lab in labels for lab in sub.labels])
            else:
                local = np.ones(sub.dim, dtype=bool)
            m = np.logical_and.outer(m, local).reshape(-1)
        return m

    def projector_apply(self, state_amps: np.ndarray, layout: SubsystemLayout) -> np.ndarray:
        return np.where(self.mask(layout), state_amps, 0.0)

    def __str__(self):
        if not self.constraints:
            return "TRUE"
        parts = []
        for name, labels in self.constraints:
            ls = sorted(labels)
            parts.append(f"{name}={ls[0]}" if len(ls) == 1 else f"{name} in {{{','.join(ls)}}}")
        return " & ".join(parts)


def born_probability(state: PureState, q: Question) -> float:
    p = float(np.sum(state.probabilities[q.mask(state.layout)]))
    return min(max(p, 0.0), 1.0)


def state_distance(a: PureState, b: PureState) -> float:
    if a.layout != b.layout:
        raise LayoutError("states live on different layouts")
    return float(np.linalg.norm(a.amplitudes - b.amplitudes))
