"""Symmetrisation over identical particles, the maps J and R[f, D], formal
evolution, and detection of swallowing / re-separation."""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from typing import Literal, Sequence

import numpy as np

from .hilbert import (
    TOL_HERM,
    HilbertSpace,
    Operator,
    StateOperator,
    VectorState,
    lift,
    tensor,
)
from .locality import (
    DEFAULT_EPS,
    Region,
    TestFunction,
    configuration_mask,
    product_test_function,
    separation_status,
)

MAX_IDENTICAL = 3
RESEP_TOL = 1e-8
N_TEST_FUNCTIONS = 10
TEST_FUNCTION_SEED = 20111201


class PauliBlockedError(ValueError):
    """The symmetrised product vanishes, so the composition is inadmissible."""


@dataclass(frozen=True)
class Species:
    label: str
    statistics: Literal["boson", "fermion"]
    slots: tuple[str, ...]

    def __post_init__(self):
        if self.statistics not in ("boson", "fermion"):
            raise ValueError(f"statistics must be 'boson' or 'fermion', got {self.statistics!r}")
        object.__setattr__(self, "slots", tuple(self.slots))


@dataclass(frozen=True)
class SpeciesPartition:
    """Species groups; factors not named by any group are distinguishable."""

    species: tuple[Species, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "species", tuple(self.species))
        seen: set[str] = set()
        for sp in self.species:
            dup = seen & set(sp.slots)
            if dup or len(set(sp.slots)) != len(sp.slots):
                raise ValueError(f"slot(s) {sorted(dup) or sp.slots} assigned to more than one species")
            seen |= set(sp.slots)

    @classmethod
    def distinguishable(cls) -> SpeciesPartition:
        return cls(())

    @classmethod
    def of(cls, statistics: str, slots: Sequence[str], label: str = "x") -> SpeciesPartition:
        return cls((Species(label, statistics, tuple(slots)),))


def _parity(perm: Sequence[int]) -> int:
    sign = 1
    p = list(perm)
    for i in range(len(p)):
        for j in range(i + 1, len(p)):
            if p[i] > p[j]:
                sign = -sign
    return sign


def permutation_operator(space: HilbertSpace, slots: Sequence[str], perm: Sequence[int]) -> np.ndarray:
    """Operator sending the slot ``slots[i]`` content to ``slots[perm[i]]``."""
    n = len(space.factors)
    axes = list(range(n))
    idx = [space.index(s) for s in slots]
    for i, j in enumerate(perm):
        axes[idx[j]] = idx[i]
    d = space.dim
    w = np.eye(d, dtype=complex).reshape(space.dims + (d,))
    w = w.transpose(axes + [n]).reshape(d, d)
    return w


def _species_projector(space: HilbertSpace, sp: Species) -> np.ndarray:
    dims = {space.dim_of(s) for s in sp.slots}
    if len(dims) > 1:
        raise ValueError(f"identical particles of species {sp.label!r} have mismatched dimensions {sorted(dims)}")
    n = len(sp.slots)
    if n > MAX_IDENTICAL:
        raise ValueError(f"at most {MAX_IDENTICAL} identical particles per species are supported, got {n}")
    p = np.zeros((space.dim, space.dim), dtype=complex)
    for perm in itertools.permutations(range(n)):
        sign = _parity(perm) if sp.statistics == "fermion" else 1
        p += sign * permutation_operator(space, sp.slots, perm)
    return p / math.factorial(n)


@dataclass(frozen=True)
class SymmetryProjector:
    space: HilbertSpace
    partition: SpeciesPartition
    matrix: np.ndarray = field(repr=False)

    def __post_init__(self):
        m = np.array(self.matrix, dtype=complex)
        m.flags.writeable = False
        object.__setattr__(self, "matrix", m)

    @property
    def op(self) -> Operator:
        return Operator(self.space, self.matrix)

    @property
    def rank(self) -> int:
        return int(round(np.trace(self.matrix).real))

    def apply(self, v: np.ndarray | VectorState) -> np.ndarray:
        a = v.amplitudes if isinstance(v, VectorState) else np.asarray(v, dtype=complex)
        return self.matrix @ a

    def idempotency_residual(self) -> float:
        return float(np.max(np.abs(self.matrix @ self.matrix - self.matrix)))

    def adjointness_residual(self) -> float:
        return float(np.max(np.abs(self.matrix - self.matrix.conj().T)))


def build_projector(space: HilbertSpace, partition: SpeciesPartition | None = None) -> SymmetryProjector:
    """Projector onto the subspace symmetric over each boson group and
    antisymmetric over each fermion group."""
    partition = partition or SpeciesPartition.distinguishable()
    for sp in partition.species:
        for s in sp.slots:
            space.index(s)
    p = np.eye(space.dim, dtype=complex)
    for sp in partition.species:
        if len(sp.slots) > 1:
            p = p @ _species_projector(space, sp)
    out = SymmetryProjector(space, partition, p)
    if out.idempotency_residual() > TOL_HERM or out.adjointness_residual() > TOL_HERM:
        raise ArithmeticError("symmetry projector failed idempotency/self-adjointness")
    return out


def map_J(t: Operator, t_prime: Operator, p: SymmetryProjector) -> StateOperator:
    """Normalised symmetrised composition ``P (T x T') P / tr[...]``."""
    prod = tensor(Operator(t.space, t.matrix), Operator(t_prime.space, t_prime.matrix))
    if prod.space != p.space:
        raise ValueError(f"composite space {prod.space.factors} does not match projector space {p.space.factors}")
    rho = p.matrix @ prod.matrix @ p.matrix
    tr = np.trace(rho).real
    if tr <= 1e-12:
        raise PauliBlockedError("symmetrised composite has vanishing trace (Pauli blocked)")
    return StateOperator(p.space, rho / tr)


def map_J_vector(phi: VectorState, phi_prime: VectorState, p: SymmetryProjector) -> VectorState:
    v = p.apply(np.kron(phi.amplitudes, phi_prime.amplitudes))
    n = np.linalg.norm(v)
    if n <= 1e-12:
        raise PauliBlockedError("symmetrised product vector vanishes (Pauli blocked)")
    return VectorState(p.space, v / n)


def _as_vector(f) -> np.ndarray:
    if isinstance(f, TestFunction):
        return f.values
    if isinstance(f, (list, tuple)) and f and isinstance(f[0], TestFunction):
        return product_test_function(f)
    return np.asarray(f, dtype=complex).ravel()


def _split_trailing(space: HilbertSpace, length: int) -> int:
    """Number of leading factors left once the trailing ones have total dim ``length``."""
    dims = space.dims
    for j in range(1, len(dims)):
        if int(np.prod(dims[-j:])) == length:
            return len(dims) - j
    raise ValueError(f"no trailing factor group of dimension {length} in {space.factors}")


def _split_leading(space: HilbertSpace, length: int) -> int:
    dims = space.dims
    for j in range(1, len(dims)):
        if int(np.prod(dims[:j])) == length:
            return j
    raise ValueError(f"no leading factor group of dimension {length} in {space.factors}")


def contraction_left(p: SymmetryProjector, f_prime) -> tuple[np.ndarray, HilbertSpace]:
    """Matrix of R[f', D'] : H_as -> H (contract the trailing slots with f')."""
    f = _as_vector(f_prime)
    k = _split_trailing(p.space, f.size)
    left = HilbertSpace(p.space.factors[:k])
    r = np.kron(np.eye(left.dim), f[None, :])
    return r @ p.matrix, left


def contraction_right(p: SymmetryProjector, f) -> tuple[np.ndarray, HilbertSpace]:
    """Matrix of R[f, D] : H_as -> H' (contract the leading slots with f)."""
    f = _as_vector(f)
    k = _split_leading(p.space, f.size)
    right = HilbertSpace(p.space.factors[k:])
    r = np.kron(f[None, :], np.eye(right.dim))
    return r @ p.matrix, right


def _reconstruct(r: np.ndarray, space: HilbertSpace, phi) -> StateOperator:
    if isinstance(phi, VectorState):
        v = r @ phi.amplitudes
        n = np.linalg.norm(v)
        if n <= 1e-12:
            raise ValueError("test function does not overlap the factor (all contractions vanish)")
        return StateOperator.pure(VectorState(space, v / n))
    m = r @ phi.matrix @ r.conj().T
    if np.trace(m).real <= 1e-12:
        raise ValueError("test function does not overlap the factor (all contractions vanish)")
    return StateOperator.from_unnormalized(space, m)


def _check_admissible(f, space: HilbertSpace, region: Region | None, slots):
    if region is None:
        return
    mask = configuration_mask(space, region, _positional(space, slots))
    if np.any(np.abs(_as_vector(f)[~mask]) > 0):
        raise ValueError("test function is not supported in the given region")


def reconstruct_left(phi_as: VectorState | Operator, f_prime, p: SymmetryProjector,
                     d_prime: Region | None = None, slots: Sequence[str] | None = None) -> StateOperator:
    """State of the leading subsystem: ``N(R[f'] T R[f']^dagger)``.

    With ``d_prime`` the test function is first checked to live in that region.
    """
    r, left = contraction_left(p, f_prime)
    _check_admissible(f_prime, HilbertSpace(p.space.factors[len(left.factors):]), d_prime, slots)
    return _reconstruct(r, left, phi_as)


def reconstruct_right(phi_as: VectorState | Operator, f, p: SymmetryProjector,
                      d: Region | None = None, slots: Sequence[str] | None = None) -> StateOperator:
    """State of the trailing subsystem: ``N(R[f] T R[f]^dagger)``."""
    r, right = contraction_right(p, f)
    _check_admissible(f, HilbertSpace(p.space.factors[:len(p.space.factors) - len(right.factors)]), d, slots)
    return _reconstruct(r, right, phi_as)


def adjoint_R(f, phi: VectorState | np.ndarray, p: SymmetryProjector, side: Literal["left", "right"] = "left") -> np.ndarray:
    """``R[f',D']^dagger phi = P(phi x f'*)`` (or ``P(f* x phi')`` for ``side='right'``).

    The result is not normalised.
    """
    f = _as_vector(f)
    a = phi.amplitudes if isinstance(phi, VectorState) else np.asarray(phi, dtype=complex)
    pad = np.kron(a, f.conj()) if side == "left" else np.kron(f.conj(), a)
    if pad.size != p.space.dim:
        raise ValueError("padded vector does not match the projector space")
    return p.matrix @ pad


def symmetrized_one_body(a: Operator, space: HilbertSpace, slots: Sequence[str]) -> Operator:
    """``sum_i a_(slot i)``: a one-particle operator acting on each listed slot."""
    total = np.zeros((space.dim, space.dim), dtype=complex)
    for s in slots:
        total += lift(Operator(space.sub([s]), a.matrix), space).matrix
    return Operator(space, total)


@dataclass(frozen=True)
class FormalEvolution:
    """One stage of unitary evolution on the symmetrised composite."""

    coupling: Operator
    projector: SymmetryProjector
    regions: tuple[Region | None, Region | None] = (None, None)

    def __post_init__(self):
        if self.coupling.space != self.projector.space:
            raise ValueError("coupling and projector act on different spaces")
        r = self.coupling.unitarity_residual()
        if r > TOL_HERM:
            raise ValueError(f"coupling is not unitary (residual {r:.3e})")
        c = self.commutator_residual()
        if c > TOL_HERM:
            raise ValueError(f"coupling does not commute with the symmetry projector (residual {c:.3e})")

    def commutator_residual(self) -> float:
        u, p = self.coupling.matrix, self.projector.matrix
        return float(np.max(np.abs(u @ p - p @ u)))

    @property
    def space(self) -> HilbertSpace:
        return self.coupling.space

    def then(self, later: Operator) -> FormalEvolution:
        """Compose with a later stage unitary."""
        return FormalEvolution(Operator(self.space, later.matrix @ self.coupling.matrix), self.projector, self.regions)


def evolve(u: Operator, rho: StateOperator) -> StateOperator:
    return StateOperator(rho.space, u.matrix @ rho.matrix @ u.matrix.conj().T)


def formal_evolve(fe: FormalEvolution, t: Operator, t_prime: Operator) -> StateOperator:
    """``U J(T x T') U^dagger``."""
    return evolve(fe.coupling, map_J(t, t_prime, fe.projector))


def detect_swallow(state: StateOperator, d_prime: Region, eps: float = DEFAULT_EPS,
                   slots: Sequence[str] | None = None) -> bool:
    """All lattice coordinates lie in ``d_prime`` with probability >= 1 - eps."""
    return separation_status(state, d_prime, eps, slots)


def _positional(space: HilbertSpace, slots: Sequence[str] | None) -> list[str] | None:
    if slots is None:
        return None
    return [s for s in slots if s in space.labels]


def _admissible_functions(space: HilbertSpace, region: Region, slots, rng: np.random.Generator,
                          count: int) -> list[np.ndarray]:
    mask = configuration_mask(space, region, _positional(space, slots))
    out = []
    for _ in range(count):
        v = rng.normal(size=space.dim) + 1j * rng.normal(size=space.dim)
        v[~mask] = 0
        out.append(v)
    return out


def _cross_support_residual(rho: StateOperator, forbidden: Region, slots) -> float:
    """Largest matrix element touching a configuration with any slot in ``forbidden``."""
    lat = forbidden.lattice
    allowed = lat.region(set(range(lat.sites)) - forbidden.members)
    ok = configuration_mask(rho.space, allowed, _positional(rho.space, slots))
    bad = ~np.outer(ok, ok)
    vals = np.abs(rho.matrix[bad])
    return float(vals.max()) if vals.size else 0.0


def _independent_reconstruction(state: Operator, rs: list[np.ndarray], space: HilbertSpace) -> StateOperator | None:
    results = []
    for r in rs:
        m = r @ state.matrix @ r.conj().T
        tr = np.trace(m).real
        if tr > 1e-12:
            results.append(m / tr)
    if not results:
        return None
    ref = results[0]
    if any(np.max(np.abs(x - ref)) > RESEP_TOL for x in results[1:]):
        return None
    return StateOperator(space, ref)


def detect_reseparation(
    state: Operator,
    d3: Region,
    d_prime: Region,
    p: SymmetryProjector,
    n_left: int,
    slots: Sequence[str] | None = None,
    seed: int = TEST_FUNCTION_SEED,
) -> tuple[StateOperator, StateOperator] | None:
    """Return the re-separated pair (state with status D3, state with status D')
    or ``None`` if the composite does not separate.

    ``n_left`` is the number of leading factors belonging to the first
    subsystem; ``slots`` names the lattice factors (default: all).
    Independence from the test function is checked over a fixed, seeded
    family of random admissible functions.
    """
    if d3.members & d_prime.members:
        raise ValueError("D3 and D' must be disjoint")
    space = p.space
    left = HilbertSpace(space.factors[:n_left])
    right = HilbertSpace(space.factors[n_left:])
    rng = np.random.default_rng(seed)
    fps = _admissible_functions(right, d_prime, slots, rng, N_TEST_FUNCTIONS)
    fs = _admissible_functions(left, d3, slots, rng, N_TEST_FUNCTIONS)
    rl = [np.kron(np.eye(left.dim), f[None, :]) @ p.matrix for f in fps]
    rr = [np.kron(f[None, :], np.eye(right.dim)) @ p.matrix for f in fs]
    s_state = _independent_reconstruction(state, rl, left)  # condition (a)
    if s_state is None:
        return None
    a_state = _independent_reconstruction(state, rr, right)  # condition (b)
    if a_state is None:
        return None
    # conditions (c), (d): neither reconstructed state reaches into the other's region
    if _cross_support_residual(s_state, d_prime, slots) > RESEP_TOL:
        return None
    if _cross_support_residual(a_state, d3, slots) > RESEP_TOL:
        return None
    return s_state, a_state
