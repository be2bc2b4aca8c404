"""Scattering on a macroscopic target: swallowing followed by
re-separation, with no reduction."""

from __future__ import annotations

import itertools
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .hilbert import TOL_HERM, HilbertSpace, Operator, StateOperator, reorder, tensor
from .locality import DEFAULT_EPS, Lattice, Region, disjoint
from .reduction import NO_SIGNAL, Gemenge, SignalClassifier, apply_rule
from .symmetrization import (
    FormalEvolution,
    SpeciesPartition,
    SymmetryProjector,
    build_projector,
    detect_reseparation,
    detect_swallow,
    evolve,
    map_J,
)

RULE_TOL = 1e-10


class RuleNotApplicable(ValueError):
    """The rule produced a reduced gemenge, so there is no single unitary branch to compare."""


@dataclass(frozen=True)
class ScatteringStages:
    """Ordered step unitaries; the first ``cut`` steps run before t_scatt."""

    steps: tuple[Operator, ...]
    cut: int
    d1: Region
    d_a: Region
    d2: Region

    def __post_init__(self):
        steps = tuple(self.steps)
        if not steps:
            raise ValueError("at least one step is required")
        if not 0 <= self.cut <= len(steps):
            raise ValueError(f"cut {self.cut} outside 0..{len(steps)}")
        for i, s in enumerate(steps):
            if s.space != steps[0].space:
                raise ValueError("all steps must act on the same space")
            r = s.unitarity_residual()
            if r > TOL_HERM:
                raise ValueError(f"step {i} is not unitary (residual {r:.3e})")
        object.__setattr__(self, "steps", steps)

    @property
    def space(self) -> HilbertSpace:
        return self.steps[0].space

    def _product(self, seq: Sequence[Operator]) -> Operator:
        u = np.eye(self.space.dim, dtype=complex)
        for s in seq:
            u = s.matrix @ u
        return Operator(self.space, u)

    @property
    def u1(self) -> Operator:
        return self._product(self.steps[:self.cut])

    @property
    def u2(self) -> Operator:
        return self._product(self.steps[self.cut:])

    @property
    def total(self) -> Operator:
        return self._product(self.steps)

    def with_cut(self, cut: int) -> ScatteringStages:
        return ScatteringStages(self.steps, cut, self.d1, self.d_a, self.d2)


@dataclass(frozen=True)
class ScatterReport:
    intermediate: StateOperator
    end: StateOperator
    swallowed: bool
    reseparated: bool
    entangled: bool
    pair: tuple[StateOperator, StateOperator] | None
    channels: int = 1

    def to_dict(self) -> dict:
        return {
            "swallowed": self.swallowed,
            "reseparated": self.reseparated,
            "entangled": self.entangled,
            "channels": self.channels,
            "reduction": "no reduction applied",
        }


def frozen_residual(u: Operator, frozen: Sequence[str]) -> float:
    """Distance of ``u`` from ``u' x I`` on the frozen factors."""
    if not frozen:
        return 0.0
    rest = [lbl for lbl in u.space.labels if lbl not in frozen]
    moved = reorder(u, rest + list(frozen))
    df = int(np.prod([u.space.dim_of(f) for f in frozen]))
    dr = moved.space.dim // df
    t = moved.matrix.reshape(dr, df, dr, df)
    inner = np.einsum("ajbj->ab", t) / df
    return float(np.max(np.abs(moved.matrix - np.kron(inner, np.eye(df)))))


def _config_split_mass(rho: StateOperator, d_s: Region, d_t: Region, n_s: int, slots: Sequence[str]) -> float:
    """Probability that exactly ``n_s`` lattice slots sit in ``d_s`` and the
    remaining ones in ``d_t`` (order-free, so it also suits identical particles)."""
    space = rho.space
    diag = np.real(np.diag(rho.matrix)).reshape(space.dims)
    idx = [space.index(s) for s in slots]
    total = 0.0
    for cfg in itertools.product(*(range(d) for d in space.dims)):
        sites = [cfg[i] for i in idx]
        in_s = sum(x in d_s.members for x in sites)
        in_t = sum(x in d_t.members for x in sites)
        if in_s == n_s and in_t == len(sites) - n_s:
            total += diag[cfg]
    return float(total)


def run_scattering(stages: ScatteringStages, phi: StateOperator, target: StateOperator, p: SymmetryProjector,
                   slots: Sequence[str], frozen: Sequence[str] = (), eps: float = DEFAULT_EPS) -> ScatterReport:
    """Evolve ``J(phi x T)`` through both stages and report the two
    separation-status changes.  There is one channel and no reduction."""
    if not disjoint(stages.d1, stages.d_a):
        raise ValueError("initial regions D and D_A must be disjoint")
    for i, s in enumerate(stages.steps):
        r = frozen_residual(s, frozen)
        if r > TOL_HERM:
            raise ValueError(f"step {i} acts on the frozen target degrees of freedom (residual {r:.3e})")
    rho0 = map_J(phi, target, p)
    inter = evolve(stages.u1, rho0)
    n_left = len(phi.space.factors)
    s_slots = [s for s in slots if s in phi.space.labels]
    swallowed = detect_swallow(inter, stages.d_a, eps, slots)
    end = evolve(stages.u2, inter)
    mass = _config_split_mass(end, stages.d2, stages.d_a, len(s_slots), slots)
    reseparated = mass >= 1 - eps
    pair = detect_reseparation(end, stages.d2, stages.d_a, p, n_left, slots) if reseparated else None
    return ScatterReport(inter, end, swallowed, reseparated, reseparated and pair is None, pair)


def scattering_oracle(stages: ScatteringStages, phi: StateOperator, target: StateOperator,
                      p: SymmetryProjector, report: ScatterReport) -> float:
    """Residual against the standard-theory end state: ``U (rho x T) U^dagger``
    for distinguishable factors, or the symmetrised re-separated product."""
    if np.allclose(p.matrix, np.eye(p.space.dim)):
        want = evolve(stages.total, tensor(phi, target))
    elif report.pair is not None:
        want = map_J(report.pair[0], report.pair[1], p)
    else:
        want = evolve(stages.total, map_J(phi, target, p))
    return float(np.max(np.abs(report.end.matrix - want.matrix)))


def compare_with_rule(report: ScatterReport, rule: Gemenge) -> bool:
    """True iff the rule returned one unreduced branch equal to the end state."""
    if len(rule.branches) != 1 or rule.branches[0].signal != NO_SIGNAL:
        raise RuleNotApplicable("the rule reduced the state onto signal branches; scattering comparison does not apply")
    return float(np.max(np.abs(rule.branches[0].state.matrix - report.end.matrix))) <= RULE_TOL


def rule_for(stages: ScatteringStages, phi: StateOperator, target: StateOperator, p: SymmetryProjector) -> Gemenge:
    fe = FormalEvolution(stages.total, p, (stages.d1, stages.d_a))
    return apply_rule(fe, (phi, stages.d1), (target, stages.d_a), SignalClassifier())


# -- presets ------------------------------------------------------------------


def site_permutation(m: int, swaps: Sequence[tuple[int, int]]) -> np.ndarray:
    perm = np.eye(m)
    for a, b in swaps:
        s = np.eye(m)
        s[[a, b]] = s[[b, a]]
        perm = s @ perm
    return perm


def _phase(m: int, site: int, angle: float) -> np.ndarray:
    d = np.ones(m, dtype=complex)
    d[site] = np.exp(1j * angle)
    return np.diag(d)


@dataclass(frozen=True)
class ScatteringSetup:
    name: str
    stages: ScatteringStages
    phi: StateOperator
    target: StateOperator
    projector: SymmetryProjector
    slots: tuple[str, ...]
    frozen: tuple[str, ...]
    valid_cuts: tuple[int, ...]

    def run(self, cut: int | None = None, eps: float = DEFAULT_EPS) -> ScatterReport:
        st = self.stages if cut is None else self.stages.with_cut(cut)
        return run_scattering(st, self.phi, self.target, self.projector, self.slots, self.frozen, eps)


def _spin_target_setup(name: str, entangle: bool) -> ScatteringSetup:
    m = 6
    lat = Lattice(m)
    space = HilbertSpace((("S", m), ("t", 2), ("F", 2)))
    i_t, i_f = np.eye(2), np.eye(2)
    x = np.array([[0, 1], [1, 0]], dtype=complex)

    def on_s(a):
        return Operator(space, np.kron(np.kron(a, i_t), i_f))

    into = on_s(site_permutation(m, [(0, 2), (1, 3)]))
    if entangle:
        # flip the target spin only when S sits at site 2
        at2 = np.zeros((m, m))
        at2[2, 2] = 1
        kick = Operator(space, np.kron(np.kron(at2, x) + np.kron(np.eye(m) - at2, i_t), i_f))
    else:
        kick = Operator(space, np.kron(np.kron(np.eye(m), x), i_f))
    wobble = on_s(_phase(m, 3, 0.7))
    out = on_s(site_permutation(m, [(2, 4), (3, 5)]))
    stages = ScatteringStages((into, kick, wobble, out), 1, lat.region([0, 1]), lat.region([2, 3]), lat.region([4, 5]))
    v = np.zeros(m, dtype=complex)
    v[[0, 1]] = 1 / np.sqrt(2)
    phi = StateOperator(HilbertSpace.single("S", m), np.outer(v, v.conj()))
    t0 = np.zeros((2, 2))
    t0[0, 0] = 1
    target = StateOperator(HilbertSpace((("t", 2), ("F", 2))), np.kron(t0, np.eye(2) / 2))
    return ScatteringSetup(name, stages, phi, target, build_projector(space), ("S",), ("F",), (1, 2, 3))


def no_entanglement_setup() -> ScatteringSetup:
    return _spin_target_setup("no_entanglement", False)


def entanglement_setup() -> ScatteringSetup:
    return _spin_target_setup("entanglement", True)


def cavity_setup() -> ScatteringSetup:
    """Particle crossing a cavity that holds one identical gas fermion."""
    m = 8
    lat = Lattice(m)
    space = HilbertSpace((("S", m), ("G", m), ("F", 2)))
    p = build_projector(space, SpeciesPartition.of("fermion", ["S", "G"]))

    def both(v):
        return Operator(space, np.kron(np.kron(v, v), np.eye(2)))

    steps = (
        both(site_permutation(m, [(0, 2), (1, 3)])),
        both(site_permutation(m, [(2, 3)])),
        both(_phase(m, 2, 0.3)),
        both(site_permutation(m, [(2, 5), (3, 6)])),
    )
    stages = ScatteringStages(steps, 1, lat.region([0, 1]), lat.region([2, 3, 4]), lat.region([5, 6]))
    v = np.zeros(m, dtype=complex)
    v[0], v[1] = 0.6, 0.8j
    phi = StateOperator(HilbertSpace.single("S", m), np.outer(v, v.conj()))
    g = np.zeros((m, m))
    g[4, 4] = 1
    target = StateOperator(HilbertSpace((("G", m), ("F", 2))), np.kron(g, np.eye(2) / 2))
    return ScatteringSetup("cavity", stages, phi, target, p, ("S", "G"), ("F",), (1, 2, 3))


SETUPS = {"no_entanglement": no_entanglement_setup, "entanglement": entanglement_setup, "cavity": cavity_setup}
