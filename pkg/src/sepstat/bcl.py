"""Unitary premeasurement model: eigenvector/pointer coupling, Born
probabilities and pointer coherence of the superposed end state."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .hilbert import (
    TOL_HERM,
    HilbertSpace,
    Observable,
    Operator,
    StateOperator,
    VectorState,
    _orthonormality_residual,
    complete_unitary,
    partial_trace,
)

__all__ = [
    "Observable",
    "PointerSpec",
    "Amplitudes",
    "decompose",
    "default_outputs",
    "build_bcl_coupling",
    "phi1",
    "unitary_end_state",
    "pointer_probabilities",
    "pointer_state",
    "signal_coherence",
    "objectification_violation",
]


@dataclass(frozen=True)
class PointerSpec:
    """Ready state, one signal state per eigenvalue group and optional
    no-signal states, all columns of a pointer space."""

    space: HilbertSpace
    ready: np.ndarray
    signals: tuple[np.ndarray, ...]
    silent: tuple[np.ndarray, ...] = ()

    def __post_init__(self):
        d = self.space.dim
        vecs = []
        for v in (self.ready, *self.signals, *self.silent):
            a = np.asarray(v, dtype=complex).ravel()
            if a.shape != (d,):
                raise ValueError(f"pointer vector has length {a.size}, expected {d}")
            vecs.append(a)
        r = _orthonormality_residual(np.column_stack(vecs))
        if r > TOL_HERM:
            raise ValueError(f"pointer states are not orthonormal (residual {r:.3e})")
        object.__setattr__(self, "ready", vecs[0])
        object.__setattr__(self, "signals", tuple(vecs[1:1 + len(self.signals)]))
        object.__setattr__(self, "silent", tuple(vecs[1 + len(self.signals):]))

    @classmethod
    def standard(cls, n: int, silent: bool = False, label: str = "A") -> PointerSpec:
        """Pointer of dimension 1 + n (+ n): ready, signals, then silent states."""
        dim = 1 + n + (n if silent else 0)
        e = np.eye(dim, dtype=complex)
        sig = tuple(e[i] for i in range(1, n + 1))
        sil = tuple(e[i] for i in range(n + 1, 2 * n + 1)) if silent else ()
        return cls(HilbertSpace.single(label, dim), e[0], sig, sil)

    @property
    def n(self) -> int:
        return len(self.signals)

    def all_states(self) -> list[np.ndarray]:
        return [self.ready, *self.signals, *self.silent]


@dataclass(frozen=True)
class Amplitudes:
    """Initial state written in the grouped eigenbasis of an observable.

    ``matrix`` holds ``S_{mk,nl}``; for a vector it is ``c c^dagger`` and
    ``c`` is kept as well.
    """

    observable: Observable
    matrix: np.ndarray = field(repr=False)
    c: np.ndarray | None = None

    @property
    def probabilities(self) -> np.ndarray:
        d = np.real(np.diag(self.matrix))
        off = self.observable.offsets()
        return np.array([d[off[m]:off[m + 1]].sum() for m in range(len(self.observable.groups))])

    @property
    def is_vector(self) -> bool:
        return self.c is not None

    def block(self, m: int, n: int | None = None) -> np.ndarray:
        n = m if n is None else n
        off = self.observable.offsets()
        return self.matrix[off[m]:off[m + 1], off[n]:off[n + 1]]

    def group_coefficients(self, m: int) -> np.ndarray:
        if self.c is None:
            raise ValueError("coefficients are only defined for vector states")
        off = self.observable.offsets()
        return self.c[off[m]:off[m + 1]]

    def outside_mass(self) -> float:
        """Weight of the state outside the span of the observable's groups."""
        return float(1 - self.probabilities.sum())


def decompose(phi: VectorState | Operator, o: Observable) -> Amplitudes:
    b = o.basis
    if isinstance(phi, VectorState):
        if phi.space.dim != o.space.dim:
            raise ValueError("state and observable dimensions differ")
        c = b.conj().T @ phi.amplitudes
        return Amplitudes(o, np.outer(c, c.conj()), c)
    if phi.space.dim != o.space.dim:
        raise ValueError("state and observable dimensions differ")
    return Amplitudes(o, b.conj().T @ phi.matrix @ b)


def default_outputs(o: Observable) -> list[np.ndarray]:
    """First-kind outputs: phi'_nl = phi_nl."""
    return [g.vectors for g in o.groups]


def _check_outputs(o: Observable, outputs: Sequence[np.ndarray]) -> list[np.ndarray]:
    if len(outputs) != len(o.groups):
        raise ValueError(f"expected {len(o.groups)} output groups, got {len(outputs)}")
    out = []
    for g, vecs in zip(o.groups, outputs):
        v = np.asarray(vecs, dtype=complex)
        if v.ndim == 1:
            v = v[:, None]
        if v.shape != g.vectors.shape:
            raise ValueError(f"output group shape {v.shape} does not match {g.vectors.shape}")
        r = _orthonormality_residual(v)
        if r > TOL_HERM:
            raise ValueError(f"outputs within a group are not orthonormal (residual {r:.3e})")
        out.append(v)
    return out


def build_bcl_coupling(o: Observable, pointer: PointerSpec, outputs: Sequence[np.ndarray] | None = None) -> Operator:
    """Unitary extension of ``phi_nl x psi -> phi'_nl x psi_n``."""
    if pointer.n != len(o.groups):
        raise ValueError(f"pointer has {pointer.n} signal states but observable has {len(o.groups)} groups")
    outputs = _check_outputs(o, outputs if outputs is not None else default_outputs(o))
    space = o.space * pointer.space
    pairs = []
    for n, g in enumerate(o.groups):
        for l in range(g.degeneracy):
            pairs.append((np.kron(g.vectors[:, l], pointer.ready), np.kron(outputs[n][:, l], pointer.signals[n])))
    return complete_unitary(pairs, space)


def phi1(amps: Amplitudes, outputs: Sequence[np.ndarray], n: int) -> np.ndarray:
    """Normalised ``sum_k c_nk phi'_nk`` for a vector input."""
    c = amps.group_coefficients(n)
    p = amps.probabilities[n]
    if p <= 0:
        raise ValueError(f"group {n} has zero probability")
    return np.asarray(outputs[n], dtype=complex) @ c / np.sqrt(p)


def unitary_end_state(u: Operator, phi: VectorState, pointer: PointerSpec) -> VectorState:
    if not u.is_unitary():
        raise ValueError("coupling is not unitary")
    v = u.matrix @ np.kron(phi.amplitudes, pointer.ready)
    return VectorState(u.space, v)


def pointer_state(end: VectorState | Operator, pointer: PointerSpec) -> np.ndarray:
    """Reduced density matrix on the pointer factors."""
    rho = StateOperator.pure(end) if isinstance(end, VectorState) else end
    return partial_trace(Operator(rho.space, rho.matrix), pointer.space.labels).matrix


def pointer_probabilities(end: VectorState | Operator, pointer: PointerSpec) -> np.ndarray:
    r = pointer_state(end, pointer)
    return np.array([np.vdot(s, r @ s).real for s in pointer.signals])


def signal_coherence(rho: Operator | np.ndarray, projectors: Sequence[np.ndarray]) -> float:
    """Largest ``||P_i rho P_j||`` (spectral norm) over distinct signal subspaces."""
    m = rho.matrix if isinstance(rho, Operator) else np.asarray(rho)
    best = 0.0
    for i, pi in enumerate(projectors):
        for j, pj in enumerate(projectors):
            if i != j:
                best = max(best, float(np.linalg.norm(pi @ m @ pj, 2)))
    return best


def objectification_violation(end: VectorState | Operator, pointer: PointerSpec) -> float:
    """Largest off-diagonal ``|<psi_i| rho_A |psi_j>|`` between distinct pointer states."""
    r = pointer_state(end, pointer)
    states = pointer.all_states()
    best = 0.0
    for i, a in enumerate(states):
        for j, b in enumerate(states):
            if i != j:
                best = max(best, abs(np.vdot(a, r @ b)))
    return float(best)
