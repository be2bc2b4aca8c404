"""Dense linear algebra over finite, labelled tensor-product Hilbert spaces."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Sequence, Union

import numpy as np

TOL_HERM = 1e-10
TOL_TR = 1e-10
TOL_POS = 1e-9

# Gram-Schmidt candidates with a smaller residual are treated as dependent.
GS_SKIP = 1e-8
# Eigenvalues closer than this are merged into one degenerate group.
EIG_GAP = 1e-8


def _frozen(a: np.ndarray) -> np.ndarray:
    a = np.array(a, dtype=complex)
    a.flags.writeable = False
    return a


@dataclass(frozen=True)
class HilbertSpace:
    """Ordered product of labelled factors, e.g. ``(("S", 2), ("A", 3))``."""

    factors: tuple[tuple[str, int], ...]

    def __post_init__(self):
        factors = tuple((str(lbl), int(d)) for lbl, d in self.factors)
        if not factors:
            raise ValueError("a Hilbert space needs at least one factor")
        labels = [lbl for lbl, _ in factors]
        if len(set(labels)) != len(labels):
            raise ValueError(f"factor labels must be unique, got {labels}")
        if any(d < 1 for _, d in factors):
            raise ValueError(f"factor dimensions must be positive, got {factors}")
        object.__setattr__(self, "factors", factors)

    @classmethod
    def single(cls, label: str, dim: int) -> HilbertSpace:
        return cls(((label, dim),))

    @property
    def dim(self) -> int:
        return int(np.prod(self.dims))

    @property
    def dims(self) -> tuple[int, ...]:
        return tuple(d for _, d in self.factors)

    @property
    def labels(self) -> tuple[str, ...]:
        return tuple(lbl for lbl, _ in self.factors)

    def index(self, label: str) -> int:
        try:
            return self.labels.index(label)
        except ValueError:
            raise KeyError(f"unknown factor label {label!r}; have {self.labels}") from None

    def dim_of(self, label: str) -> int:
        return self.factors[self.index(label)][1]

    def sub(self, labels: Iterable[str]) -> HilbertSpace:
        return HilbertSpace(tuple((lbl, self.dim_of(lbl)) for lbl in labels))

    def __mul__(self, other: HilbertSpace) -> HilbertSpace:
        return HilbertSpace(self.factors + other.factors)

    def relabel(self, mapping: dict[str, str]) -> HilbertSpace:
        return HilbertSpace(tuple((mapping.get(lbl, lbl), d) for lbl, d in self.factors))


@dataclass(frozen=True)
class Operator:
    space: HilbertSpace
    matrix: np.ndarray

    def __post_init__(self):
        m = _frozen(self.matrix)
        d = self.space.dim
        if m.shape != (d, d):
            raise ValueError(f"matrix shape {m.shape} does not match space dim {d}")
        object.__setattr__(self, "matrix", m)

    @classmethod
    def identity(cls, space: HilbertSpace) -> Operator:
        return cls(space, np.eye(space.dim))

    def dag(self) -> Operator:
        return Operator(self.space, self.matrix.conj().T)

    def __matmul__(self, other):
        if isinstance(other, Operator):
            _same_space(self.space, other.space)
            return Operator(self.space, self.matrix @ other.matrix)
        if isinstance(other, VectorState):
            _same_space(self.space, other.space)
            return self.matrix @ other.amplitudes
        return self.matrix @ np.asarray(other)

    def hermiticity_residual(self) -> float:
        return float(np.max(np.abs(self.matrix - self.matrix.conj().T)))

    def unitarity_residual(self) -> float:
        m = self.matrix
        return float(np.max(np.abs(m.conj().T @ m - np.eye(len(m)))))

    def is_unitary(self, tol: float = TOL_HERM) -> bool:
        return self.unitarity_residual() < tol

    def trace(self) -> complex:
        return complex(np.trace(self.matrix))


class StateOperator(Operator):
    """Density operator.

    Negative eigenvalues down to ``-TOL_POS`` are clipped to zero and the
    trace renormalised; anything worse raises ``ValueError``.
    """

    def __post_init__(self):
        super().__post_init__()
        m = self.matrix
        herm = float(np.max(np.abs(m - m.conj().T))) if m.size else 0.0
        if herm > TOL_HERM:
            raise ValueError(f"state operator is not Hermitian (residual {herm:.3e})")
        m = (m + m.conj().T) / 2
        tr = np.trace(m).real
        if abs(tr - 1) > TOL_TR:
            raise ValueError(f"state operator trace is {tr!r}, expected 1")
        w, v = np.linalg.eigh(m)
        if w[0] < -TOL_POS:
            raise ValueError(f"state operator has negative eigenvalue {w[0]:.3e}")
        if w[0] < 0:
            w = np.clip(w, 0, None)
            m = (v * w) @ v.conj().T
            m = m / np.trace(m).real
        object.__setattr__(self, "matrix", _frozen(m))

    @classmethod
    def pure(cls, v: VectorState) -> StateOperator:
        a = v.amplitudes
        return cls(v.space, np.outer(a, a.conj()))

    @classmethod
    def from_unnormalized(cls, space: HilbertSpace, matrix: np.ndarray) -> StateOperator:
        """Apply the normalisation map to a positive operator."""
        matrix = np.asarray(matrix, dtype=complex)
        tr = np.trace(matrix).real
        if tr <= 1e-300:
            raise ValueError("cannot normalise an operator with vanishing trace")
        return cls(space, matrix / tr)

    @classmethod
    def maximally_mixed(cls, space: HilbertSpace) -> StateOperator:
        return cls(space, np.eye(space.dim) / space.dim)

    def expectation(self, op: Operator | np.ndarray) -> complex:
        m = op.matrix if isinstance(op, Operator) else np.asarray(op)
        return complex(np.trace(self.matrix @ m))

    def purity(self) -> float:
        return float(np.trace(self.matrix @ self.matrix).real)


def _psd_sqrt(m: np.ndarray) -> np.ndarray:
    w, v = np.linalg.eigh((m + m.conj().T) / 2)
    w = np.where(w > 1e-14, w, 0.0)  # round-off eigenvalues would dominate after the sqrt
    return (v * np.sqrt(w)) @ v.conj().T


def fidelity(a: Operator, b: Operator) -> float:
    """Uhlmann fidelity ``||sqrt(a) sqrt(b)||_1^2``."""
    if a.space != b.space:
        raise ValueError(f"fidelity needs operators on the same space, got {a.space.labels} and {b.space.labels}")
    s = np.linalg.svd(_psd_sqrt(a.matrix) @ _psd_sqrt(b.matrix), compute_uv=False)
    return float(np.sum(s) ** 2)


@dataclass(frozen=True)
class VectorState:
    space: HilbertSpace
    amplitudes: np.ndarray

    def __post_init__(self):
        a = _frozen(np.ravel(self.amplitudes))
        if a.shape != (self.space.dim,):
            raise ValueError(f"amplitude length {a.shape[0]} does not match space dim {self.space.dim}")
        n = np.linalg.norm(a)
        if abs(n - 1) > TOL_TR:
            raise ValueError(f"vector state must have unit norm, got {n!r}")
        object.__setattr__(self, "amplitudes", a)

    @classmethod
    def normalized(cls, space: HilbertSpace, amplitudes) -> VectorState:
        a = np.asarray(amplitudes, dtype=complex).ravel()
        n = np.linalg.norm(a)
        if n < 1e-300:
            raise ValueError("cannot normalise the zero vector")
        return cls(space, a / n)

    @classmethod
    def basis(cls, space: HilbertSpace, index: int) -> VectorState:
        a = np.zeros(space.dim, dtype=complex)
        a[index] = 1
        return cls(space, a)

    def inner(self, other: VectorState) -> complex:
        return complex(np.vdot(self.amplitudes, other.amplitudes))


Tensorable = Union[Operator, VectorState]


def _same_space(a: HilbertSpace, b: HilbertSpace):
    if a != b:
        raise ValueError(f"space mismatch: {a.factors} vs {b.factors}")


def tensor(a: Tensorable, b: Tensorable) -> Tensorable:
    """Kronecker product; the factor lists are concatenated."""
    space = a.space * b.space
    if isinstance(a, VectorState) and isinstance(b, VectorState):
        return VectorState(space, np.kron(a.amplitudes, b.amplitudes))
    if isinstance(a, VectorState) or isinstance(b, VectorState):
        raise TypeError("cannot tensor a vector state with an operator")
    m = np.kron(a.matrix, b.matrix)
    if isinstance(a, StateOperator) and isinstance(b, StateOperator):
        return StateOperator(space, m)
    return Operator(space, m)


def tensor_all(items: Sequence[Tensorable]) -> Tensorable:
    out = items[0]
    for it in items[1:]:
        out = tensor(out, it)
    return out


def partial_trace(s: Operator, keep: Iterable[str]) -> Operator:
    """Trace out every factor not in ``keep``; kept factors retain their order."""
    keep = list(keep)
    if not keep:
        raise ValueError("keep must name at least one factor")
    for lbl in keep:
        s.space.index(lbl)
    labels = s.space.labels
    kept = [i for i, lbl in enumerate(labels) if lbl in keep]
    traced = [i for i in range(len(labels)) if i not in kept]
    dims = s.space.dims
    n = len(dims)
    t = np.asarray(s.matrix).reshape(dims + dims)
    perm = kept + traced
    t = t.transpose(perm + [p + n for p in perm])
    dk = int(np.prod([dims[i] for i in kept]))
    dt = int(np.prod([dims[i] for i in traced])) if traced else 1
    t = t.reshape(dk, dt, dk, dt)
    red = np.einsum("ajbj->ab", t)
    space = HilbertSpace(tuple(s.space.factors[i] for i in kept))
    cls = StateOperator if isinstance(s, StateOperator) else Operator
    return cls(space, red)


def _permutation(space: HilbertSpace, order: Sequence[str]) -> list[int]:
    order = list(order)
    if sorted(order) != sorted(space.labels):
        raise ValueError(f"order {order} is not a permutation of {space.labels}")
    return [space.index(lbl) for lbl in order]


def reorder(x: Tensorable, order: Sequence[str]) -> Tensorable:
    """Permute tensor factors into ``order`` (a permutation of the labels)."""
    perm = _permutation(x.space, order)
    dims = x.space.dims
    space = HilbertSpace(tuple(x.space.factors[i] for i in perm))
    if isinstance(x, VectorState):
        a = x.amplitudes.reshape(dims).transpose(perm).reshape(-1)
        return VectorState(space, a)
    n = len(dims)
    m = x.matrix.reshape(dims + dims).transpose(perm + [p + n for p in perm])
    m = m.reshape(space.dim, space.dim)
    return type(x)(space, m) if isinstance(x, StateOperator) else Operator(space, m)


def lift(op: Operator, space: HilbertSpace) -> Operator:
    """Extend an operator on a subset of ``space``'s factors by identities."""
    rest = [lbl for lbl in space.labels if lbl not in op.space.labels]
    for lbl in op.space.labels:
        if op.space.dim_of(lbl) != space.dim_of(lbl):
            raise ValueError(f"factor {lbl!r} has different dimension in target space")
    full = op
    if rest:
        full = tensor(Operator(op.space, op.matrix), Operator.identity(space.sub(rest)))
    return reorder(full, space.labels)


def projector(vectors: np.ndarray) -> np.ndarray:
    """Orthogonal projector onto the span of orthonormal columns."""
    v = np.asarray(vectors, dtype=complex)
    if v.ndim == 1:
        v = v[:, None]
    return v @ v.conj().T


def _orthonormality_residual(cols: np.ndarray) -> float:
    if cols.shape[1] == 0:
        return 0.0
    g = cols.conj().T @ cols
    return float(np.max(np.abs(g - np.eye(g.shape[0]))))


def _extend_basis(cols: np.ndarray, pool: np.ndarray, target: int) -> np.ndarray:
    """Gram-Schmidt ``pool`` columns (in order) against ``cols`` until ``target`` columns."""
    basis = [c for c in cols.T]
    for cand in pool.T:
        if len(basis) >= target:
            break
        r = cand.astype(complex)
        # two passes keep the result orthonormal to machine precision
        for _ in range(2):
            for b in basis:
                r = r - np.vdot(b, r) * b
        n = np.linalg.norm(r)
        if n < GS_SKIP:
            continue
        basis.append(r / n)
    if len(basis) != target:
        raise ValueError(f"could only extend to {len(basis)} of {target} basis vectors")
    return np.column_stack(basis) if basis else np.zeros((pool.shape[0], 0), complex)


def complete_unitary(
    partial_map: Sequence[tuple[VectorState | np.ndarray, VectorState | np.ndarray]],
    space: HilbertSpace | None = None,
    within: np.ndarray | Operator | None = None,
) -> Operator:
    """Unitary ``U`` with ``U @ inp == out`` for every pair.

    Both the inputs and the outputs are extended to full orthonormal bases by
    Gram-Schmidt over the canonical basis vectors in index order, and
    ``U = B_out @ B_in^dagger``.  With ``within`` (an orthogonal projector),
    the completion happens inside its range and ``U`` acts as the identity on
    the complement, so ``U`` commutes with the projector.
    """
    if space is None:
        if not partial_map:
            raise ValueError("space is required for an empty partial map")
        first = partial_map[0][0]
        if not isinstance(first, VectorState):
            raise ValueError("space is required when the map is given as arrays")
        space = first.space
    d = space.dim

    def col(v):
        if isinstance(v, VectorState):
            _same_space(v.space, space)
            return v.amplitudes
        a = np.asarray(v, dtype=complex).ravel()
        if a.shape != (d,):
            raise ValueError(f"vector length {a.shape[0]} does not match dim {d}")
        return a

    a = np.column_stack([col(i) for i, _ in partial_map]) if partial_map else np.zeros((d, 0), complex)
    b = np.column_stack([col(o) for _, o in partial_map]) if partial_map else np.zeros((d, 0), complex)
    for name, m in (("inputs", a), ("outputs", b)):
        r = _orthonormality_residual(m)
        if r > TOL_HERM:
            raise ValueError(f"{name} are not orthonormal (residual {r:.3e})")

    if within is None:
        p = np.eye(d, dtype=complex)
        rank = d
    else:
        p = within.matrix if isinstance(within, Operator) else np.asarray(within, dtype=complex)
        rank = int(round(np.trace(p).real))
        for name, m in (("inputs", a), ("outputs", b)):
            if m.shape[1] and np.max(np.abs(p @ m - m)) > TOL_HERM:
                raise ValueError(f"{name} do not lie in the range of the projector")
    pool = p @ np.eye(d, dtype=complex)
    a_full = _extend_basis(a, pool, rank)
    b_full = _extend_basis(b, pool, rank)
    u = b_full @ a_full.conj().T + (np.eye(d) - p)
    return Operator(space, u)


@dataclass(frozen=True)
class EigenGroup:
    value: float
    vectors: np.ndarray  # columns phi_{n,k}

    def __post_init__(self):
        v = _frozen(self.vectors)
        if v.ndim == 1:
            v = _frozen(v[:, None])
        object.__setattr__(self, "vectors", v)
        object.__setattr__(self, "value", float(self.value))

    @property
    def degeneracy(self) -> int:
        return self.vectors.shape[1]


@dataclass(frozen=True)
class Observable:
    """Hermitian operator with eigenvectors grouped by distinct eigenvalue.

    The groups may span a proper subspace (e.g. an observable that only acts
    on a region); ``complete`` says whether they span everything.
    """

    op: Operator
    groups: tuple[EigenGroup, ...]

    def __post_init__(self):
        object.__setattr__(self, "groups", tuple(self.groups))
        d = self.op.space.dim
        for g in self.groups:
            if g.vectors.shape[0] != d:
                raise ValueError("eigenvector length does not match observable space")
        r = _orthonormality_residual(self.basis)
        if r > TOL_HERM:
            raise ValueError(f"eigenvectors are not orthonormal (residual {r:.3e})")
        vals = [g.value for g in self.groups]
        if len(set(vals)) != len(vals):
            raise ValueError("eigenvalues of distinct groups must differ")

    @classmethod
    def from_groups(cls, space: HilbertSpace, groups: Sequence[tuple[float, np.ndarray]]) -> Observable:
        gs = tuple(EigenGroup(v, vecs) for v, vecs in groups)
        m = sum((g.value * projector(g.vectors) for g in gs), np.zeros((space.dim, space.dim), complex))
        return cls(Operator(space, m), gs)

    @property
    def space(self) -> HilbertSpace:
        return self.op.space

    @property
    def values(self) -> tuple[float, ...]:
        return tuple(g.value for g in self.groups)

    @property
    def sizes(self) -> tuple[int, ...]:
        return tuple(g.degeneracy for g in self.groups)

    @property
    def basis(self) -> np.ndarray:
        """All eigenvectors as columns, group by group."""
        return np.column_stack([g.vectors for g in self.groups])

    @property
    def complete(self) -> bool:
        return self.basis.shape[1] == self.space.dim

    def offsets(self) -> list[int]:
        return list(np.cumsum((0,) + self.sizes))

    def group_projector(self, m: int) -> np.ndarray:
        return projector(self.groups[m].vectors)

    def vector(self, m: int, k: int) -> VectorState:
        return VectorState(self.space, self.groups[m].vectors[:, k])

    def reconstruction_residual(self) -> float:
        m = sum((g.value * projector(g.vectors) for g in self.groups), np.zeros_like(self.op.matrix))
        return float(np.max(np.abs(m - self.op.matrix)))


def eig_grouped(o: Operator, n_groups: int | None = None) -> Observable:
    """Group the spectrum of a Hermitian operator into distinct eigenvalues.

    Eigenvalues are sorted in descending order and split wherever consecutive
    values differ by more than ``EIG_GAP``.
    """
    h = o.hermiticity_residual()
    if h > TOL_HERM:
        raise ValueError(f"operator is not Hermitian (residual {h:.3e})")
    w, v = np.linalg.eigh((o.matrix + o.matrix.conj().T) / 2)
    order = np.argsort(-w, kind="stable")
    w, v = w[order], v[:, order]
    groups: list[list[int]] = [[0]]
    for i in range(1, len(w)):
        if w[groups[-1][-1]] - w[i] > EIG_GAP:
            groups.append([i])
        else:
            groups[-1].append(i)
    if n_groups is not None and len(groups) != n_groups:
        raise ValueError(f"found {len(groups)} distinct eigenvalues, expected {n_groups}")
    gs = tuple(EigenGroup(float(np.mean(w[idx])), v[:, idx]) for idx in groups)
    return Observable(o, gs)
