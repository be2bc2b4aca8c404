"""Concrete system + detector composites used by the presets.

Two detector families are provided: abstract distinguishable pointers
(trivial symmetry projector) and small lattice models in which the
registered particle and the detector's sensitive particles are identical
fermions on a common lattice.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .bcl import PointerSpec, build_bcl_coupling
from .hilbert import HilbertSpace, Observable, Operator, StateOperator, complete_unitary, tensor_all
from .locality import Lattice
from .reduction import DetectorSpec, SignalClassifier, SubDetector, build_nonideal_coupling
from .symmetrization import (
    FormalEvolution,
    SpeciesPartition,
    SymmetryProjector,
    build_projector,
    evolve,
    map_J,
    symmetrized_one_body,
)


@dataclass(frozen=True)
class Model:
    name: str
    fe: FormalEvolution
    observable: Observable
    t_a: StateOperator
    classifier: SignalClassifier
    labels: tuple[str, ...]
    system_factors: tuple[str, ...]
    detector: DetectorSpec | None = None
    pointer: PointerSpec | None = None
    regions: dict = field(default_factory=dict, compare=False)
    slots: tuple[str, ...] | None = None

    @property
    def space(self) -> HilbertSpace:
        return self.fe.space

    @property
    def projector(self) -> SymmetryProjector:
        return self.fe.projector

    def unitary_end(self, s: Operator) -> StateOperator:
        """Formal (unreduced) end state ``U J(S x T_A) U^dagger``."""
        return evolve(self.fe.coupling, map_J(s, self.t_a, self.fe.projector))


def _ket(dim: int, i: int) -> np.ndarray:
    v = np.zeros(dim, dtype=complex)
    v[i] = 1
    return v


def _proj(v: np.ndarray) -> np.ndarray:
    return np.outer(v, v.conj())


def _pure(space: HilbertSpace, v: np.ndarray) -> StateOperator:
    return StateOperator(space, _proj(v))


def _signal_label(value: float) -> str:
    return f"o={value:g}"


def pointer_classifier(o: Observable, pointer: PointerSpec, labels: Sequence[str]) -> SignalClassifier:
    i_s = np.eye(o.space.dim)
    projs = [np.kron(i_s, _proj(s)) for s in pointer.signals]
    return SignalClassifier(tuple(labels), tuple(projs))


def bcl_model(o: Observable, outputs: Sequence[np.ndarray] | None = None, pointer: PointerSpec | None = None,
              name: str = "bcl") -> Model:
    """Abstract system coupled to a pointer by the eigenvector map."""
    pointer = pointer or PointerSpec.standard(len(o.groups))
    u = build_bcl_coupling(o, pointer, outputs)
    p = build_projector(u.space)
    fe = FormalEvolution(u, p)
    labels = tuple(_signal_label(v) for v in o.values)
    t_a = _pure(pointer.space, pointer.ready)
    det = DetectorSpec("flexible", (SubDetector("A", pointer.space.labels, t_a),))
    return Model(name, fe, o, t_a, pointer_classifier(o, pointer, labels), labels, o.space.labels, det, pointer)


def default_bcl() -> tuple[Observable, list[np.ndarray]]:
    """dim-4 system, two doubly degenerate values; outputs overlap across groups."""
    e = np.eye(4, dtype=complex)
    o = Observable.from_groups(HilbertSpace.single("S", 4), [(1.0, e[:, [0, 1]]), (-1.0, e[:, [2, 3]])])
    outputs = [e[:, [0, 1]], e[:, [0, 2]]]
    return o, outputs


def flexible_lattice_model(
    sites: int = 6,
    groups: Sequence[Sequence[int]] = ((0, 1), (2,)),
    outputs: Sequence[Sequence[int]] = ((3, 4), (3,)),
    detector_site: int = 5,
    prep: Sequence[int] = (0, 1, 2),
    detector_region: Sequence[int] = (3, 4, 5),
) -> Model:
    """Registered fermion S swallowed by a detector that holds one identical
    fermion; the pointer is a separate distinguishable factor."""
    lat = Lattice(sites)
    n = len(groups)
    pointer = PointerSpec.standard(n, label="ptr")
    space = HilbertSpace((("S", sites), ("E", sites))) * pointer.space
    p = build_projector(space, SpeciesPartition.of("fermion", ["S", "E"]))
    s_space = HilbertSpace.single("S", sites)
    o = Observable.from_groups(
        s_space, [(float(m + 1), np.column_stack([_ket(sites, i) for i in g])) for m, g in enumerate(groups)]
    )
    e_det = _ket(sites, detector_site)
    pairs = []
    for m, g in enumerate(groups):
        for k, site in enumerate(g):
            src = p.apply(np.kron(np.kron(_ket(sites, site), e_det), pointer.ready))
            dst = p.apply(np.kron(np.kron(_ket(sites, outputs[m][k]), e_det), pointer.signals[m]))
            pairs.append((src / np.linalg.norm(src), dst / np.linalg.norm(dst)))
    u = complete_unitary(pairs, space, within=p.matrix)
    fe = FormalEvolution(u, p, (lat.region(prep), lat.region(detector_region)))
    a_space = HilbertSpace((("E", sites),)) * pointer.space
    t_a = StateOperator(a_space, np.kron(_proj(e_det), _proj(pointer.ready)))
    labels = tuple(_signal_label(v) for v in o.values)
    i_lat = np.eye(sites * sites)
    cls = SignalClassifier(labels, tuple(np.kron(i_lat, _proj(s)) for s in pointer.signals))
    d_a = lat.region(detector_region)
    det = DetectorSpec("flexible", (SubDetector("A", a_space.labels, t_a, d_a),), prep_region=lat.region(prep))
    regions = {"D": lat.region(prep), "D_A": d_a}
    return Model("flexible", fe, o, t_a, cls, labels, ("S",), det, pointer, regions, ("S", "E"))


def fixed_array_model(n: int = 2, degeneracy: int = 2, environment: bool = False) -> Model:
    """One fixed-signal sub-detector per channel (ready/fired pointer each).

    With ``environment`` an extra channel misses the array and is absorbed by
    an environment sub-detector ``E``.
    """
    names = [f"A{i + 1}" for i in range(n)] + (["E"] if environment else [])
    c = len(names)
    sdim = degeneracy * c
    s_space = HilbertSpace.single("S", sdim)
    e = np.eye(sdim, dtype=complex)
    o = Observable.from_groups(s_space, [(float(m + 1), e[:, m * degeneracy:(m + 1) * degeneracy]) for m in range(c)])
    a_space = HilbertSpace(tuple((nm, 2) for nm in names))
    space = s_space * a_space
    ready, fired = _ket(2, 0), _ket(2, 1)

    def det_vec(hit: int | None):
        return tensor_vec([fired if i == hit else ready for i in range(c)])

    pairs = []
    for m in range(c):
        for k in range(degeneracy):
            pairs.append((np.kron(e[:, m * degeneracy + k], det_vec(None)), np.kron(e[:, m * degeneracy + k], det_vec(m))))
    u = complete_unitary(pairs, space)
    fe = FormalEvolution(u, build_projector(space))
    lat = Lattice(c + 1)
    subs = tuple(
        SubDetector(nm, (nm,), _pure(HilbertSpace.single(nm, 2), ready), lat.region([i + 1])) for i, nm in enumerate(names)
    )
    det = DetectorSpec("fixed", subs, tuple((nm,) for nm in names), prep_region=lat.region([0]))
    t_a = tensor_all([s.initial for s in subs])
    i_s = np.eye(sdim)
    cls = SignalClassifier(tuple(names), tuple(np.kron(i_s, _proj(det_vec(m))) for m in range(c)))
    regions = {"D": lat.region([0])} | {nm: s.region for nm, s in zip(names, subs)}
    return Model("fixed", fe, o, t_a, cls, tuple(names), ("S",), det, None, regions)


def tensor_vec(vs: Sequence[np.ndarray]) -> np.ndarray:
    out = np.ones(1, dtype=complex)
    for v in vs:
        out = np.kron(out, v)
    return out


def release_model(sites: int = 6) -> Model:
    """Two-channel array of one-electron sub-detectors that release S.

    S starts in {0, 1}; A1 holds an electron at 2 (fires by hopping to 3),
    A2 one at 4 (fires to 5).  Channel 1 returns S to site 1, channel 2 to
    site 0.  All three particles are identical fermions.
    """
    lat = Lattice(sites)
    space = HilbertSpace((("S", sites), ("E1", sites), ("E2", sites)))
    p = build_projector(space, SpeciesPartition.of("fermion", ["S", "E1", "E2"]))
    s_space = HilbertSpace.single("S", sites)
    o = Observable.from_groups(s_space, [(1.0, _ket(sites, 0)), (2.0, _ket(sites, 1))])
    k = lambda i: _ket(sites, i)  # noqa: E731
    maps = [((0, 2, 4), (1, 3, 4)), ((1, 2, 4), (0, 2, 5))]
    pairs = []
    for src, dst in maps:
        a = p.apply(tensor_vec([k(i) for i in src]))
        b = p.apply(tensor_vec([k(i) for i in dst]))
        pairs.append((a / np.linalg.norm(a), b / np.linalg.norm(b)))
    u = complete_unitary(pairs, space, within=p.matrix)
    prep, r1, r2 = lat.region([0, 1]), lat.region([2, 3]), lat.region([4, 5])
    fe = FormalEvolution(u, p, (prep, r1 | r2))
    a1 = _pure(HilbertSpace.single("E1", sites), k(2))
    a2 = _pure(HilbertSpace.single("E2", sites), k(4))
    subs = (SubDetector("A1", ("E1",), a1, r1), SubDetector("A2", ("E2",), a2, r2))
    det = DetectorSpec("fixed", subs, (("A1",), ("A2",)), absorbing=False, prep_region=prep,
                       release_regions=(lat.region([1]), lat.region([0])))
    t_a = tensor_all([a1, a2])
    slots = ["S", "E1", "E2"]
    n3 = symmetrized_one_body(Operator(s_space, _proj(k(3))), space, slots).matrix
    n5 = symmetrized_one_body(Operator(s_space, _proj(k(5))), space, slots).matrix
    eye = np.eye(space.dim)
    cls = SignalClassifier(("A1", "A2"), (n3 @ (eye - n5) @ p.matrix, n5 @ (eye - n3) @ p.matrix))
    regions = {"D": prep, "A1": r1, "A2": r2, "D_1": det.release_regions[0], "D_2": det.release_regions[1]}
    return Model("release", fe, o, t_a, cls, ("A1", "A2"), ("S",), det, None, regions, tuple(slots))


def nonideal_model(etas: Sequence[float] = (1.0, 0.5), o: Observable | None = None) -> Model:
    if o is None:
        o, _ = default_bcl()
    pointer = PointerSpec.standard(len(o.groups), silent=True)
    u = build_nonideal_coupling(o, pointer, etas)
    fe = FormalEvolution(u, build_projector(u.space))
    labels = tuple(_signal_label(v) for v in o.values)
    i_s = np.eye(o.space.dim)
    projs = [np.kron(i_s, _proj(s)) for s in pointer.signals]
    projs.append(np.kron(i_s, sum(_proj(s) for s in pointer.silent)))
    cls = SignalClassifier(labels + ("silent",), tuple(projs))
    t_a = _pure(pointer.space, pointer.ready)
    det = DetectorSpec("flexible", (SubDetector("A", pointer.space.labels, t_a),), efficiencies=tuple(etas))
    return Model("nonideal", fe, o, t_a, cls, labels, o.space.labels, det, pointer)


SPIN_UP, SPIN_DOWN = _ket(2, 0), _ket(2, 1)


def singlet() -> np.ndarray:
    """(|+-> - |-+>)/sqrt(2) on two spin-1/2 factors."""
    return (np.kron(SPIN_UP, SPIN_DOWN) - np.kron(SPIN_DOWN, SPIN_UP)) / np.sqrt(2)


def epr_model() -> Model:
    """Sub-detectors A1+ and A1- register the spin of S1 only; S2 flies on."""
    s_space = HilbertSpace((("S1", 2), ("S2", 2)))
    e = np.eye(4, dtype=complex)
    # degeneracy index = spin of S2
    o = Observable.from_groups(s_space, [(1.0, e[:, [0, 1]]), (-1.0, e[:, [2, 3]])])
    a_space = HilbertSpace((("Ap", 2), ("Am", 2)))
    space = s_space * a_space
    ready, fired = _ket(2, 0), _ket(2, 1)
    idle = np.kron(ready, ready)
    hits = [np.kron(fired, ready), np.kron(ready, fired)]
    pairs = [(np.kron(e[:, 2 * m + k], idle), np.kron(e[:, 2 * m + k], hits[m])) for m in range(2) for k in range(2)]
    u = complete_unitary(pairs, space)
    fe = FormalEvolution(u, build_projector(space))
    lat = Lattice(4)
    subs = (
        SubDetector("A1+", ("Ap",), _pure(HilbertSpace.single("Ap", 2), ready), lat.region([1])),
        SubDetector("A1-", ("Am",), _pure(HilbertSpace.single("Am", 2), ready), lat.region([2])),
    )
    det = DetectorSpec("fixed", subs, (("A1+",), ("A1-",)), prep_region=lat.region([0]))
    t_a = tensor_all([s.initial for s in subs])
    i_s = np.eye(4)
    cls = SignalClassifier(("A1+", "A1-"), tuple(np.kron(i_s, _proj(h)) for h in hits))
    return Model("epr", fe, o, t_a, cls, ("A1+", "A1-"), ("S1", "S2"), det)
