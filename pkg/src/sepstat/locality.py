"""Regions of a discretised position space, D-locality and separation status.

Position space is a 1D lattice of ``M`` sites.  A particle's single-particle
space is ``C^M``; a composite has one lattice slot per particle and possibly
further non-positional factors (pointer, internal degrees of freedom).
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from .hilbert import HilbertSpace, Operator, StateOperator

LOCAL_TOL = 1e-12
DEFAULT_EPS = 1e-6


@dataclass(frozen=True)
class Lattice:
    sites: int

    def __post_init__(self):
        if int(self.sites) < 2:
            raise ValueError(f"a lattice needs at least 2 sites, got {self.sites}")
        object.__setattr__(self, "sites", int(self.sites))

    def region(self, members: Iterable[int]) -> Region:
        return Region(self, frozenset(members))

    def everywhere(self) -> Region:
        return Region(self, frozenset(range(self.sites)))


@dataclass(frozen=True)
class Region:
    lattice: Lattice
    members: frozenset[int]

    def __post_init__(self):
        members = frozenset(int(i) for i in self.members)
        bad = [i for i in members if not 0 <= i < self.lattice.sites]
        if bad:
            raise ValueError(f"region sites {sorted(bad)} outside lattice of {self.lattice.sites} sites")
        object.__setattr__(self, "members", members)

    def mask(self) -> np.ndarray:
        m = np.zeros(self.lattice.sites, dtype=bool)
        m[list(self.members)] = True
        return m

    def __or__(self, other: Region) -> Region:
        _same_lattice(self, other)
        return Region(self.lattice, self.members | other.members)

    def __len__(self):
        return len(self.members)

    def sorted(self) -> list[int]:
        return sorted(self.members)


@dataclass(frozen=True)
class TestFunction:
    """Single-particle test function; must vanish outside ``support``."""

    __test__ = False  # not a pytest class

    lattice: Lattice
    values: np.ndarray
    support: Region

    def __post_init__(self):
        v = np.array(self.values, dtype=complex).ravel()
        if v.shape != (self.lattice.sites,):
            raise ValueError("test function length does not match lattice")
        if self.support.lattice != self.lattice:
            raise ValueError("support region lives on a different lattice")
        outside = v[~self.support.mask()]
        if outside.size and np.max(np.abs(outside)) > 0:
            raise ValueError("test function does not vanish outside its declared support")
        v.flags.writeable = False
        object.__setattr__(self, "values", v)

    @classmethod
    def random(cls, region: Region, rng: np.random.Generator) -> TestFunction:
        v = np.zeros(region.lattice.sites, dtype=complex)
        idx = region.sorted()
        v[idx] = rng.normal(size=len(idx)) + 1j * rng.normal(size=len(idx))
        return cls(region.lattice, v, region)


def product_test_function(fs: Sequence[TestFunction]) -> np.ndarray:
    """Multi-slot test function ``f(x1) f(x2) ...`` as a flat vector."""
    out = np.ones(1, dtype=complex)
    for f in fs:
        out = np.kron(out, f.values)
    return out


def _same_lattice(a: Region, b: Region):
    if a.lattice != b.lattice:
        raise ValueError("regions live on different lattices")


def disjoint(d1: Region, d2: Region) -> bool:
    _same_lattice(d1, d2)
    return not (d1.members & d2.members)


def _slot_indices(space: HilbertSpace, lattice: Lattice, slots: Sequence[str] | None) -> list[int]:
    if slots is None:
        idx = list(range(len(space.factors)))
    else:
        idx = [space.index(s) for s in slots]
    for i in idx:
        if space.dims[i] != lattice.sites:
            raise ValueError(
                f"factor {space.labels[i]!r} has dim {space.dims[i]}, not a lattice slot of {lattice.sites} sites"
            )
    return idx


def configuration_mask(space: HilbertSpace, d: Region, slots: Sequence[str] | None = None) -> np.ndarray:
    """Boolean mask over the basis of ``space``: every lattice slot lies in ``d``."""
    idx = _slot_indices(space, d.lattice, slots)
    inside = d.mask()
    masks = []
    for i, dim in enumerate(space.dims):
        masks.append(inside if i in idx else np.ones(dim, dtype=bool))
    out = masks[0]
    for m in masks[1:]:
        out = np.logical_and.outer(out, m).ravel()
    return out


def mask_operator(a: Operator, d: Region, slots: Sequence[str] | None = None) -> Operator:
    """Restrict an operator's kernel to D x D (zero every other entry)."""
    m = configuration_mask(a.space, d, slots)
    return Operator(a.space, a.matrix * np.outer(m, m))


def locality_residual(a: Operator, d: Region, slots: Sequence[str] | None = None) -> float:
    m = configuration_mask(a.space, d, slots)
    out = a.matrix[~np.outer(m, m)]
    return float(np.max(np.abs(out))) if out.size else 0.0


def is_D_local(a: Operator, d: Region, slots: Sequence[str] | None = None) -> bool:
    """Kernel entries with any coordinate outside ``d`` all vanish."""
    return locality_residual(a, d, slots) < LOCAL_TOL


def mass_in(s: StateOperator, d: Region, slots: Sequence[str] | None = None) -> float:
    """Probability that every lattice coordinate lies in ``d``."""
    m = configuration_mask(s.space, d, slots)
    return float(np.real(np.diag(s.matrix))[m].sum())


def separation_status(s: StateOperator, d: Region, eps: float = DEFAULT_EPS, slots: Sequence[str] | None = None) -> bool:
    """Whether ``s`` is supported in ``d`` up to probability ``eps``.

    With ``eps == 0`` the support must be contained exactly: every matrix
    element outside D x D is below the locality tolerance.
    """
    if not 0 <= eps < 1:
        raise ValueError(f"eps must lie in [0, 1), got {eps}")
    if eps == 0:
        return locality_residual(s, d, slots) < LOCAL_TOL
    return mass_in(s, d, slots) >= 1 - eps


def integral_criterion_residual(a: Operator, f: np.ndarray) -> float:
    """Max of |int a(x;x') f(x') dx'| and |int a(x;x') f(x) dx| for one test function."""
    m = a.matrix
    return float(max(np.max(np.abs(m @ f)), np.max(np.abs(f @ m))))


def vanishing_test_functions(space: HilbertSpace, d: Region, count: int, rng: np.random.Generator,
                             slots: Sequence[str] | None = None) -> list[np.ndarray]:
    """Random vectors on ``space`` that vanish on every configuration inside ``d``."""
    inside = configuration_mask(space, d, slots)
    out = []
    for _ in range(count):
        v = rng.normal(size=space.dim) + 1j * rng.normal(size=space.dim)
        v[inside] = 0
        out.append(v)
    return out
