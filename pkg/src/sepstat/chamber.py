"""Layered fixed-signal detector stack and Monte Carlo track formation.

The transverse coordinate of the particle is a lattice of ``N*d`` sites cut
into ``N`` cubes of ``d`` sites; layer ``n`` registers which cube the particle
crosses.  Registrations are first-kind: the released state is the
normalised projection onto the hit cube's column.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy import stats

from .hilbert import TOL_HERM, HilbertSpace, Observable, Operator, StateOperator
from .locality import Lattice, Region, disjoint, separation_status
from .reduction import Branch, Gemenge
from .sampling import pick, run_trials


@dataclass(frozen=True)
class ChamberGeometry:
    layers: int
    cubes: int
    edge: int = 1

    def __post_init__(self):
        if self.layers < 1 or self.cubes < 1 or self.edge < 1:
            raise ValueError("layers, cubes and edge must all be positive")
        if self.transverse < 2:
            raise ValueError("the transverse lattice needs at least 2 sites")

    @property
    def transverse(self) -> int:
        return self.cubes * self.edge

    @property
    def space(self) -> HilbertSpace:
        return HilbertSpace.single("x", self.transverse)

    def origin(self, k: int) -> int:
        """Transverse origin u_k of cube k (1-based)."""
        return (k - 1) * self.edge

    def column(self, k: int) -> Region:
        """Transverse sites of cube k."""
        lat = Lattice(self.transverse)
        return lat.region(range(self.origin(k), self.origin(k) + self.edge))

    def stack_lattice(self) -> Lattice:
        return Lattice(self.layers * self.transverse)

    def cube(self, n: int, k: int) -> Region:
        """Cube D^(nk) on the full layer x transverse lattice (site = n*M + x)."""
        m = self.transverse
        return self.stack_lattice().region((n - 1) * m + x for x in self.column(k).members)

    def check_disjoint(self) -> bool:
        cubes = [self.cube(n, k) for n in range(1, self.layers + 1) for k in range(1, self.cubes + 1)]
        return all(disjoint(a, b) for i, a in enumerate(cubes) for b in cubes[i + 1:])


def cube_modes(geom: ChamberGeometry, k: int) -> np.ndarray:
    """Discrete plane waves supported on cube k, one column per mode l."""
    d, m = geom.edge, geom.transverse
    u = geom.origin(k)
    out = np.zeros((m, d), dtype=complex)
    xs = np.arange(u, u + d)
    for l in range(d):
        out[xs, l] = np.exp(2j * np.pi * l * (xs - u) / d) / np.sqrt(d)
    return out


def layer_observable(geom: ChamberGeometry, n: int) -> Observable:
    """Eigenvalue k on cube k, degenerate over the within-cube modes."""
    if not 1 <= n <= geom.layers:
        raise ValueError(f"layer {n} outside 1..{geom.layers}")
    return Observable.from_groups(geom.space, [(float(k), cube_modes(geom, k)) for k in range(1, geom.cubes + 1)])


def embedded_layer_operator(geom: ChamberGeometry, n: int) -> np.ndarray:
    """Layer observable placed on the full stack lattice (zero on other layers)."""
    m = geom.transverse
    big = np.zeros((geom.layers * m, geom.layers * m), dtype=complex)
    big[(n - 1) * m:n * m, (n - 1) * m:n * m] = layer_observable(geom, n).op.matrix
    return big


def _cube_projectors(geom: ChamberGeometry) -> list[np.ndarray]:
    out = []
    for k in range(1, geom.cubes + 1):
        p = np.zeros((geom.transverse, geom.transverse))
        idx = geom.column(k).sorted()
        p[idx, idx] = 1
        out.append(p)
    return out


def register_layer(s: Operator, geom: ChamberGeometry, n: int) -> Gemenge:
    """Branch k: weight ``sum_l S_klkl``, released state projected onto cube k."""
    o = layer_observable(geom, n)
    rho = s.matrix
    items = []
    total = 0.0
    for k, g in enumerate(o.groups, start=1):
        b = g.vectors
        blk = b.conj().T @ rho @ b
        p = float(np.trace(blk).real)
        total += p
        if p < 1e-12:
            continue
        items.append((p, k, b @ blk @ b.conj().T / p))
    if total < 1e-12:
        raise ValueError(f"state has no overlap with layer {n}")
    branches = tuple(Branch(p / total, f"layer {n} cube {k}", StateOperator(geom.space, st)) for p, k, st in items)
    return Gemenge(branches)


def shift_unitary(m: int, offset: int) -> np.ndarray:
    """Cyclic transverse shift x -> x + offset."""
    return np.roll(np.eye(m), offset, axis=0)


def hopping_unitary(m: int, theta: float) -> np.ndarray:
    """exp(-i theta H) for nearest-neighbour hopping on an open chain."""
    h = np.zeros((m, m))
    for x in range(m - 1):
        h[x, x + 1] = h[x + 1, x] = 1
    w, v = np.linalg.eigh(h)
    return (v * np.exp(-1j * theta * w)) @ v.conj().T


def propagate(s: StateOperator, v: np.ndarray | Operator) -> StateOperator:
    vm = v.matrix if isinstance(v, Operator) else np.asarray(v, dtype=complex)
    if vm.shape != s.matrix.shape:
        raise ValueError("propagator dimension does not match the state")
    r = float(np.max(np.abs(vm.conj().T @ vm - np.eye(len(vm)))))
    if r > TOL_HERM:
        raise ValueError(f"inter-layer propagator is not unitary (residual {r:.3e})")
    return StateOperator(s.space, vm @ s.matrix @ vm.conj().T)


def plane_wave(geom: ChamberGeometry) -> StateOperator:
    m = geom.transverse
    v = np.ones(m, dtype=complex) / np.sqrt(m)
    return StateOperator(geom.space, np.outer(v, v.conj()))


def localized(geom: ChamberGeometry, k: int) -> StateOperator:
    """Uniform packet inside cube k."""
    v = np.zeros(geom.transverse, dtype=complex)
    v[geom.column(k).sorted()] = 1
    v /= np.linalg.norm(v)
    return StateOperator(geom.space, np.outer(v, v.conj()))


@dataclass(frozen=True)
class TrackSample:
    trial: int
    cubes: tuple[int, ...]  # k_n for n = 1..L
    stream: tuple[int, int] = (0, 0)  # (seed, trial)


@dataclass(frozen=True)
class TrackSummary:
    trials: int
    straight_fraction: float
    near_fraction: float
    histograms: tuple[tuple[int, ...], ...]
    first_layer_chi2: float
    first_layer_p: float
    samples: tuple[TrackSample, ...] = field(repr=False, default=())

    def to_dict(self) -> dict:
        return {
            "trials": self.trials,
            "straight_fraction": self.straight_fraction,
            "near_fraction": self.near_fraction,
            "histograms": [list(h) for h in self.histograms],
            "first_layer_chi2": self.first_layer_chi2,
            "first_layer_p": self.first_layer_p,
        }


def _track(rho0: np.ndarray, projs: list[np.ndarray], layers: int, v: np.ndarray | None, rng: np.random.Generator):
    rho = rho0
    ks = []
    for _ in range(layers):
        w = np.array([np.trace(p @ rho).real for p in projs])
        k = pick(np.clip(w, 0, None), rng.random())
        blk = projs[k] @ rho @ projs[k]
        rho = blk / np.trace(blk).real
        if v is not None:
            rho = v @ rho @ v.conj().T
        ks.append(k + 1)
    return tuple(ks)


def sample_tracks(s1: StateOperator, geom: ChamberGeometry, v: np.ndarray | Operator | None = None,
                  trials: int = 1000, seed: int = 0, workers: int = 1) -> TrackSummary:
    """Register layer by layer, sampling one cube per layer and conditioning
    on it before propagating to the next layer."""
    if trials < 1:
        raise ValueError("trials must be at least 1")
    vm = None
    if v is not None:
        vm = v.matrix if isinstance(v, Operator) else np.asarray(v, dtype=complex)
        propagate(s1, vm)  # validates unitarity
    # cube projectors equal the per-cube sums over the mode projectors
    projs = _cube_projectors(geom)
    rho0 = np.asarray(s1.matrix)
    tracks = run_trials(lambda t, rng: _track(rho0, projs, geom.layers, vm, rng), trials, seed, workers)
    samples = tuple(TrackSample(t, ks, (seed, t)) for t, ks in enumerate(tracks))
    arr = np.array(tracks)
    straight = float(np.mean(np.all(arr == arr[:, :1], axis=1)))
    near = float(np.mean(np.all(np.abs(arr - arr[:, :1]) <= 1, axis=1)))
    hists = tuple(tuple(int(c) for c in np.bincount(arr[:, n] - 1, minlength=geom.cubes)) for n in range(geom.layers))
    expected = _first_layer_expectation(s1, projs, trials)
    first = np.array(hists[0], dtype=float)
    mask = expected > 0
    if mask.sum() > 1:
        chi2, p = stats.chisquare(first[mask], expected[mask])
    else:
        chi2, p = 0.0, 1.0
    return TrackSummary(trials, straight, near, hists, float(chi2), float(p), samples)


def _first_layer_expectation(s1: StateOperator, projs: list[np.ndarray], trials: int) -> np.ndarray:
    w = np.array([np.trace(p @ s1.matrix).real for p in projs])
    return w / w.sum() * trials


def write_tracks_csv(path: str, samples: Sequence[TrackSample]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["trial", "layer", "cube"])
        for s in samples:
            for n, k in enumerate(s.cubes, start=1):
                w.writerow([s.trial, n, k])


def branch_confined(g: Gemenge, geom: ChamberGeometry, eps: float = 1e-9) -> bool:
    """Each branch's released state has status equal to its cube column."""
    for b in g.branches:
        k = int(b.signal.rsplit(" ", 1)[1])
        if not separation_status(b.state, geom.column(k), eps):
            return False
    return True
