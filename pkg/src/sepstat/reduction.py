"""Channel decomposition of a formal evolution and the state-reduction
formulas that turn it into a gemenge (one direct signal per branch)."""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Literal, Mapping, Sequence

import numpy as np

from .bcl import Amplitudes, PointerSpec, decompose
from .hilbert import (
    TOL_HERM,
    TOL_TR,
    HilbertSpace,
    Observable,
    Operator,
    StateOperator,
    complete_unitary,
    partial_trace,
    reorder,
    tensor_all,
)
from .locality import Region, disjoint
from .symmetrization import (
    FormalEvolution,
    Species,
    SpeciesPartition,
    build_projector,
    detect_reseparation,
    evolve,
    map_J,
)

P_DROP = 1e-12
SILENT = "silent"
NO_SIGNAL = "no signal"


@dataclass(frozen=True)
class Branch:
    p: float
    signal: str
    state: StateOperator
    # factor states of a re-separated branch, keyed by role
    parts: Mapping[str, StateOperator] | None = field(default=None, compare=False)


@dataclass(frozen=True)
class Gemenge:
    """Convex decomposition kept as an explicit branch list."""

    branches: tuple[Branch, ...]

    def __post_init__(self):
        bs = tuple(self.branches)
        if not bs:
            raise ValueError("a gemenge needs at least one branch")
        space = bs[0].state.space
        for b in bs:
            if b.p < 0:
                raise ValueError(f"negative branch weight {b.p}")
            if b.state.space != space:
                raise ValueError("branch states live on different spaces")
        total = sum(b.p for b in bs)
        if abs(total - 1) > TOL_TR:
            raise ValueError(f"branch weights sum to {total!r}, expected 1")
        object.__setattr__(self, "branches", bs)

    @property
    def space(self) -> HilbertSpace:
        return self.branches[0].state.space

    @property
    def weights(self) -> np.ndarray:
        return np.array([b.p for b in self.branches])

    @property
    def labels(self) -> list[str]:
        return [b.signal for b in self.branches]

    def weight_of(self, label: str) -> float:
        return float(sum(b.p for b in self.branches if b.signal == label))

    def branch(self, label: str) -> Branch:
        for b in self.branches:
            if b.signal == label:
                return b
        raise KeyError(label)

    def flatten(self) -> StateOperator:
        m = sum(b.p * b.state.matrix for b in self.branches)
        return StateOperator(self.space, m)


def _gemenge(items: list[tuple[float, str, np.ndarray | StateOperator, dict | None]], space: HilbertSpace) -> Gemenge:
    branches = []
    for p, label, st, parts in items:
        if p < P_DROP:
            continue
        if not isinstance(st, StateOperator):
            st = StateOperator.from_unnormalized(space, st)
        branches.append(Branch(float(p), label, st, parts))
    total = sum(b.p for b in branches)
    # dropped noise-level branches leave a tiny deficit
    if branches and abs(total - 1) <= 1e-9:
        branches = [Branch(b.p / total, b.signal, b.state, b.parts) for b in branches]
    return Gemenge(tuple(branches))


@dataclass(frozen=True)
class ChannelEndStates:
    """``T'_mkl`` for every channel m, as arrays of shape (g_m, g_m, D, D)."""

    space: HilbertSpace
    observable: Observable
    families: tuple[np.ndarray, ...] = field(repr=False)
    labels: tuple[str, ...] = ()

    def __post_init__(self):
        fams = tuple(np.asarray(f, dtype=complex) for f in self.families)
        object.__setattr__(self, "families", fams)
        labels = tuple(self.labels) or tuple(f"m{m + 1}" for m in range(len(fams)))
        if len(labels) != len(fams):
            raise ValueError("one label per channel is required")
        object.__setattr__(self, "labels", labels)
        r = self.trace_residual()
        if r > TOL_TR:
            raise ValueError(f"channel end states violate tr[T'_mkl] = delta_kl (residual {r:.3e})")

    def trace_residual(self) -> float:
        worst = 0.0
        for f in self.families:
            tr = np.einsum("klii->kl", f)
            worst = max(worst, float(np.max(np.abs(tr - np.eye(len(tr))))))
        return worst

    def combine(self, m: int, weights: np.ndarray) -> np.ndarray:
        """``sum_kl w_kl T'_mkl``."""
        return np.einsum("kl,klij->ij", weights, self.families[m])


def _matrix_unit(u: np.ndarray, v: np.ndarray) -> np.ndarray:
    return np.outer(u, v.conj())


def _evolved_unit(fe: FormalEvolution, a: np.ndarray, b: np.ndarray, t_a: np.ndarray) -> np.ndarray:
    p, u = fe.projector.matrix, fe.coupling.matrix
    x = np.kron(_matrix_unit(a, b), t_a)
    return u @ p @ x @ p @ u.conj().T


def _channel_norms(fe: FormalEvolution, vecs: np.ndarray, t_a: np.ndarray) -> np.ndarray:
    p = fe.projector.matrix
    out = np.empty(vecs.shape[1])
    for k in range(vecs.shape[1]):
        out[k] = np.trace(p @ np.kron(_matrix_unit(vecs[:, k], vecs[:, k]), t_a) @ p).real
    return out


def _derive_one(fe: FormalEvolution, vecs: np.ndarray, t_a: np.ndarray, m: int) -> np.ndarray:
    g = vecs.shape[1]
    norms = _channel_norms(fe, vecs, t_a)
    if np.any(norms <= 1e-12):
        raise ValueError(f"channel {m + 1} has vanishing trace (the coupling does not populate it)")
    d = fe.space.dim
    fam = np.empty((g, g, d, d), dtype=complex)
    for k in range(g):
        for l in range(g):
            fam[k, l] = _evolved_unit(fe, vecs[:, k], vecs[:, l], t_a) / np.sqrt(norms[k] * norms[l])
    return fam


def derive_channels(fe: FormalEvolution, o: Observable, t_a: Operator, labels: Sequence[str] | None = None,
                    workers: int | None = None) -> ChannelEndStates:
    """Evolve ``P(|phi_mk><phi_ml| x T_A)P`` for every channel and normalise so
    that ``tr[T'_mkl] = delta_kl``.

    Channels are independent; with ``workers > 1`` they are computed in a
    thread pool and merged in channel order.
    """
    if o.space * t_a.space != fe.space:
        raise ValueError(f"observable x detector space {(o.space * t_a.space).factors} != coupling space {fe.space.factors}")
    tm = t_a.matrix
    jobs = [(g.vectors, m) for m, g in enumerate(o.groups)]
    if workers and workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as ex:
            fams = list(ex.map(lambda j: _derive_one(fe, j[0], tm, j[1]), jobs))
    else:
        fams = [_derive_one(fe, v, tm, m) for v, m in jobs]
    return ChannelEndStates(fe.space, o, tuple(fams), tuple(labels or ()))


def _check_channels(ch: ChannelEndStates, amps: Amplitudes):
    if len(ch.families) != len(amps.observable.groups):
        raise ValueError("missing channel: channel family count differs from the observable's groups")
    for m, p in enumerate(amps.probabilities):
        if p > P_DROP and ch.families[m].shape[0] != amps.observable.groups[m].degeneracy:
            raise ValueError(f"channel {m + 1} has the wrong degeneracy")


def reduce_flexible(ch: ChannelEndStates, amps: Amplitudes) -> Gemenge:
    """Branch m: weight p_m, state ``sum_kl S_mkml/p_m T'_mkl``."""
    _check_channels(ch, amps)
    items = []
    for m, p in enumerate(amps.probabilities):
        if p < P_DROP:
            continue
        items.append((p, ch.labels[m], ch.combine(m, amps.block(m) / p), None))
    return _gemenge(items, ch.space)


@dataclass(frozen=True)
class SubDetector:
    name: str
    factors: tuple[str, ...]
    initial: StateOperator
    region: Region | None = None

    def __post_init__(self):
        object.__setattr__(self, "factors", tuple(self.factors))
        if tuple(self.initial.space.labels) != self.factors:
            raise ValueError(f"initial state of {self.name!r} does not live on factors {self.factors}")


@dataclass(frozen=True)
class DetectorSpec:
    """Detector made of sub-detectors; ``channel_map[m]`` names the
    sub-detectors that channel m touches."""

    kind: Literal["flexible", "fixed"]
    subdetectors: tuple[SubDetector, ...]
    channel_map: tuple[tuple[str, ...], ...] = ()
    efficiencies: tuple[float, ...] | None = None
    absorbing: bool = True
    prep_region: Region | None = None
    release_regions: tuple[Region, ...] | None = None

    def __post_init__(self):
        object.__setattr__(self, "subdetectors", tuple(self.subdetectors))
        object.__setattr__(self, "channel_map", tuple(tuple(c) for c in self.channel_map))
        if self.kind not in ("flexible", "fixed"):
            raise ValueError(f"unknown detector kind {self.kind!r}")
        names = [s.name for s in self.subdetectors]
        if len(set(names)) != len(names):
            raise ValueError("sub-detector names must be unique")
        for touched in self.channel_map:
            for t in touched:
                if t not in names:
                    raise ValueError(f"channel touches unknown sub-detector {t!r}")
        regions = [s.region for s in self.subdetectors if s.region is not None]
        for i in range(len(regions)):
            for j in range(i + 1, len(regions)):
                if not disjoint(regions[i], regions[j]):
                    raise ValueError("sub-detector regions must be pairwise disjoint")
            if self.prep_region is not None and not disjoint(regions[i], self.prep_region):
                raise ValueError("sub-detector regions must be disjoint from the preparation region")
        if self.efficiencies is not None:
            for e in self.efficiencies:
                if not 0 < e <= 1:
                    raise ValueError(f"efficiency must lie in (0, 1], got {e}")

    def sub(self, name: str) -> SubDetector:
        for s in self.subdetectors:
            if s.name == name:
                return s
        raise KeyError(name)

    @property
    def factors(self) -> tuple[str, ...]:
        return tuple(f for s in self.subdetectors for f in s.factors)


def _split_fixed(ch: ChannelEndStates, m: int, weights: np.ndarray, det: DetectorSpec):
    full = ch.combine(m, weights)
    touched = det.channel_map[m]
    untouched = [s for s in det.subdetectors if s.name not in touched]
    drop = {f for s in untouched for f in s.factors}
    keep = [lbl for lbl in ch.space.labels if lbl not in drop]
    excited = partial_trace(StateOperator(ch.space, full), keep)
    prod = reorder(tensor_all([excited] + [s.initial for s in untouched]), ch.space.labels)
    r = float(np.max(np.abs(prod.matrix - full)))
    if r > TOL_HERM:
        raise ValueError(f"channel {m + 1} touches sub-detectors outside {touched} (residual {r:.3e})")
    parts = {"excited": excited}
    parts.update({s.name: s.initial for s in untouched})
    return prod, parts


def reduce_fixed(ch: ChannelEndStates, amps: Amplitudes, det: DetectorSpec) -> Gemenge:
    """Branch m: excited (system + touched sub-detectors) state tensored with
    the untouched sub-detectors' initial states."""
    _check_channels(ch, amps)
    if len(det.channel_map) != len(ch.families):
        raise ValueError("missing channel: the detector's channel map does not cover every channel")
    items = []
    for m, p in enumerate(amps.probabilities):
        if p < P_DROP:
            continue
        prod, parts = _split_fixed(ch, m, amps.block(m) / p, det)
        items.append((p, ch.labels[m], prod, parts))
    return _gemenge(items, ch.space)


def reduce_release(ch: ChannelEndStates, amps: Amplitudes, det: DetectorSpec, fe: FormalEvolution,
                   system_factors: Sequence[str], slots: Sequence[str] | None = None) -> Gemenge:
    """Like the flexible formula, but each branch must re-separate into the
    released system (status ``det.release_regions[m]``) and the detector,
    which in turn splits into the excited and untouched sub-detectors."""
    if det.absorbing:
        raise ValueError("an absorbing detector never releases the registered system")
    if det.release_regions is None or len(det.release_regions) != len(ch.families):
        raise ValueError("one release region per channel is required")
    _check_channels(ch, amps)
    n_left = len(system_factors)
    if tuple(ch.space.labels[:n_left]) != tuple(system_factors):
        raise ValueError("system factors must lead the composite")
    det_space = HilbertSpace(ch.space.factors[n_left:])
    det_region = None
    for s in det.subdetectors:
        det_region = s.region if det_region is None else det_region | s.region
    # symmetry projector of the detector part alone
    det_part = _restrict_partition(fe.projector.partition, det_space.labels)
    p_det = build_projector(det_space, det_part)
    items = []
    for m, prob in enumerate(amps.probabilities):
        if prob < P_DROP:
            continue
        st = StateOperator(ch.space, ch.combine(m, amps.block(m) / prob))
        sep = detect_reseparation(st, det.release_regions[m], det_region, fe.projector, n_left, slots)
        if sep is None:
            raise ValueError(f"channel {m + 1}: the registered system does not re-separate from the detector")
        released, det_state = sep
        parts = {"released": released, "detector": det_state}
        parts.update(_split_subdetectors(det_state, det, p_det, slots, det.channel_map[m] if det.channel_map else ()))
        items.append((prob, ch.labels[m], st, parts))
    return _gemenge(items, ch.space)


def _restrict_partition(partition: SpeciesPartition, labels) -> SpeciesPartition:
    out = []
    for sp in partition.species:
        slots = tuple(s for s in sp.slots if s in labels)
        if len(slots) > 1:
            out.append(Species(sp.label, sp.statistics, slots))
    return SpeciesPartition(tuple(out))


def _split_subdetectors(det_state: StateOperator, det: DetectorSpec, p_det, slots, touched) -> dict:
    """Peel sub-detectors off one at a time; untouched ones must be in their initial state."""
    parts = {}
    state, p = det_state, p_det
    subs = list(det.subdetectors)
    while len(subs) > 1:
        first = subs[0]
        rest_region = None
        for s in subs[1:]:
            rest_region = s.region if rest_region is None else rest_region | s.region
        sep = detect_reseparation(state, first.region, rest_region, p, len(first.factors), slots)
        if sep is None:
            raise ValueError(f"sub-detector {first.name!r} is not separated from the rest of the detector")
        parts[first.name], state = sep
        rest_space = state.space
        p = build_projector(rest_space, _restrict_partition(p.partition, rest_space.labels))
        subs = subs[1:]
    parts[subs[0].name] = state
    for s in det.subdetectors:
        if s.name not in touched:
            r = float(np.max(np.abs(parts[s.name].matrix - s.initial.matrix)))
            if r > 1e-8:
                raise ValueError(f"untouched sub-detector {s.name!r} left its initial state (residual {r:.3e})")
    return parts


def substitute_nonvector(formula: Literal["endflex", "endfix", "release"], s: Operator, ch: ChannelEndStates,
                         **kwargs) -> Gemenge:
    """Run a reduction formula on a general initial state operator:
    ``c_mk c*_ml`` becomes ``S_mkml`` and ``p_m = sum_k S_mkmk``."""
    amps = decompose(s, ch.observable)
    if formula == "endflex":
        return reduce_flexible(ch, amps)
    if formula == "endfix":
        return reduce_fixed(ch, amps, kwargs["det"])
    if formula == "release":
        return reduce_release(ch, amps, kwargs["det"], kwargs["fe"], kwargs["system_factors"], kwargs.get("slots"))
    raise ValueError(f"unknown formula {formula!r}")


# -- non-ideal detectors -------------------------------------------------------


@dataclass(frozen=True)
class NonIdealEndStates:
    space: HilbertSpace
    observable: Observable
    t1: tuple[np.ndarray, ...] = field(repr=False)  # (g_m, g_m, D, D)
    t0: tuple[tuple[np.ndarray, ...], ...] = field(repr=False)  # [m][n] -> (g_m, g_n, D, D)
    etas: tuple[float, ...] = ()

    def __post_init__(self):
        r1, r0 = self.trace_residuals()
        if max(r1, r0) > TOL_TR:
            raise ValueError(f"non-ideal families violate the trace conditions (residuals {r1:.3e}, {r0:.3e})")

    def trace_residuals(self) -> tuple[float, float]:
        r1 = 0.0
        for f in self.t1:
            tr = np.einsum("klii->kl", f)
            r1 = max(r1, float(np.max(np.abs(tr - np.eye(len(tr))))))
        r0 = 0.0
        for m, row in enumerate(self.t0):
            for n, f in enumerate(row):
                tr = np.einsum("klii->kl", f)
                want = (1 - self.etas[m]) * np.eye(*tr.shape) if m == n else np.zeros(tr.shape)
                r0 = max(r0, float(np.max(np.abs(tr - want))))
        return r1, r0


def build_nonideal_coupling(o: Observable, pointer: PointerSpec, etas: Sequence[float],
                            signal_outputs: Sequence[np.ndarray] | None = None,
                            silent_outputs: Sequence[np.ndarray] | None = None) -> Operator:
    """``phi_mk x psi -> C1_m varphi_mk x psi1_m + C0_m phi'_mk x psi0_m`` with
    ``|C1_m|^2 = eta_m``, extended to a unitary."""
    n = len(o.groups)
    if pointer.n != n or len(pointer.silent) != n:
        raise ValueError("pointer needs one signal and one no-signal state per group")
    if len(etas) != n:
        raise ValueError("one efficiency per group is required")
    sig = signal_outputs or [g.vectors for g in o.groups]
    sil = silent_outputs or [g.vectors for g in o.groups]
    pairs = []
    for m, g in enumerate(o.groups):
        eta = float(etas[m])
        if not 0 < eta <= 1:
            raise ValueError(f"efficiency must lie in (0, 1], got {eta}")
        c1, c0 = np.sqrt(eta), np.sqrt(1 - eta)
        for k in range(g.degeneracy):
            img = c1 * np.kron(sig[m][:, k], pointer.signals[m]) + c0 * np.kron(sil[m][:, k], pointer.silent[m])
            pairs.append((np.kron(g.vectors[:, k], pointer.ready), img))
    return complete_unitary(pairs, o.space * pointer.space)


def build_nonideal_families(fe: FormalEvolution, o: Observable, pointer: PointerSpec, etas: Sequence[float],
                            t_a: Operator | None = None) -> NonIdealEndStates:
    """Split the evolved matrix units with the pointer projectors and keep
    the (signal m, signal m) and (silent, silent) blocks."""
    if t_a is None:
        t_a = Operator(pointer.space, np.outer(pointer.ready, pointer.ready.conj()))
    if o.space * t_a.space != fe.space:
        raise ValueError("observable x detector space does not match the coupling")
    i_s = np.eye(o.space.dim)
    pi1 = [np.kron(i_s, np.outer(s, s.conj())) for s in pointer.signals]
    pi0 = np.kron(i_s, sum(np.outer(s, s.conj()) for s in pointer.silent))
    tm = t_a.matrix
    norms = [_channel_norms(fe, g.vectors, tm) for g in o.groups]
    t1, t0 = [], []
    for m, gm in enumerate(o.groups):
        d = fe.space.dim
        f1 = np.empty((gm.degeneracy, gm.degeneracy, d, d), dtype=complex)
        for k in range(gm.degeneracy):
            for l in range(gm.degeneracy):
                y = _evolved_unit(fe, gm.vectors[:, k], gm.vectors[:, l], tm) / np.sqrt(norms[m][k] * norms[m][l])
                f1[k, l] = pi1[m] @ y @ pi1[m] / etas[m]
        t1.append(f1)
        row = []
        for n, gn in enumerate(o.groups):
            f0 = np.empty((gm.degeneracy, gn.degeneracy, d, d), dtype=complex)
            for k in range(gm.degeneracy):
                for l in range(gn.degeneracy):
                    y = _evolved_unit(fe, gm.vectors[:, k], gn.vectors[:, l], tm) / np.sqrt(norms[m][k] * norms[n][l])
                    f0[k, l] = pi0 @ y @ pi0
            row.append(f0)
        t0.append(tuple(row))
    return NonIdealEndStates(fe.space, o, tuple(t1), tuple(t0), tuple(float(e) for e in etas))


def reduce_nonideal(fam: NonIdealEndStates, amps: Amplitudes, labels: Sequence[str] | None = None) -> Gemenge:
    """N signal branches of weight ``p_m eta_m`` plus one silent branch."""
    labels = list(labels or [f"m{m + 1}" for m in range(len(fam.t1))])
    probs = amps.probabilities
    items = []
    for m, p in enumerate(probs):
        w = p * fam.etas[m]
        if w < P_DROP:
            continue
        st = np.einsum("kl,klij->ij", amps.block(m) / p, fam.t1[m])
        items.append((w, labels[m], st, None))
    w0 = float(sum(p * (1 - e) for p, e in zip(probs, fam.etas)))
    if w0 >= P_DROP:
        st = sum(np.einsum("kl,klij->ij", amps.block(m, n), fam.t0[m][n])
                 for m in range(len(probs)) for n in range(len(probs)))
        items.append((w0, SILENT, st / w0, None))
    total = sum(i[0] for i in items)
    if abs(total - 1) > TOL_TR:
        raise ValueError(f"non-ideal branch weights sum to {total!r}")
    return _gemenge(items, fam.space)


# -- the rule ------------------------------------------------------------------


@dataclass(frozen=True)
class SignalClassifier:
    """Scenario-supplied labelling of signal subspaces of the composite."""

    labels: tuple[str, ...] = ()
    projectors: tuple[np.ndarray, ...] = field(default=(), repr=False)

    def __post_init__(self):
        labels = tuple(self.labels)
        projs = tuple(np.asarray(p, dtype=complex) for p in self.projectors)
        if len(labels) != len(projs):
            raise ValueError("one projector per signal label is required")
        if len(set(labels)) != len(labels):
            raise ValueError("signal labels must be unique")
        for lbl, p in zip(labels, projs):
            if np.max(np.abs(p @ p - p)) > TOL_HERM or np.max(np.abs(p - p.conj().T)) > TOL_HERM:
                raise ValueError(f"signal {lbl!r} is not an orthogonal projector")
        for i in range(len(projs)):
            for j in range(i + 1, len(projs)):
                if np.max(np.abs(projs[i] @ projs[j])) > TOL_HERM:
                    raise ValueError(f"signals {labels[i]!r} and {labels[j]!r} overlap")
        object.__setattr__(self, "labels", labels)
        object.__setattr__(self, "projectors", projs)

    @property
    def empty(self) -> bool:
        return not self.labels


def apply_rule(fe: FormalEvolution, initial: tuple[Operator, Region | None], detector: tuple[Operator, Region | None],
               classifier: SignalClassifier) -> Gemenge:
    """Compose, evolve formally, then reduce onto the signal subspaces.

    With no signal channels the unitary result is returned as a single branch.
    """
    (t_s, d_s), (t_a, d_a) = initial, detector
    if d_s is not None and d_a is not None and not disjoint(d_s, d_a):
        raise ValueError("initial separation statuses must be disjoint")
    rho = evolve(fe.coupling, map_J(t_s, t_a, fe.projector))
    if classifier.empty:
        return Gemenge((Branch(1.0, NO_SIGNAL, rho),))
    items = []
    covered = 0.0
    for lbl, pr in zip(classifier.labels, classifier.projectors):
        blk = pr @ rho.matrix @ pr
        p = float(np.trace(blk).real)
        covered += p
        items.append((p, lbl, blk / p if p >= P_DROP else None, None))
    if abs(covered - 1) > 1e-10:
        raise ValueError(f"signal labels do not partition the channels (covered weight {covered:.12f})")
    return _gemenge([i for i in items if i[0] >= P_DROP], fe.space)
