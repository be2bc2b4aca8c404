import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from sepstat.chamber import ChamberGeometry
from sepstat.checks import random_density
from sepstat.hilbert import HilbertSpace, Operator, StateOperator, tensor
from sepstat.locality import (
    Lattice,
    TestFunction,
    disjoint,
    integral_criterion_residual,
    is_D_local,
    mask_operator,
    mass_in,
    separation_status,
    vanishing_test_functions,
)


def site_state(m, x, label="x"):
    v = np.zeros((m, m))
    v[x, x] = 1
    return StateOperator(HilbertSpace.single(label, m), v)


def test_site_projector_is_local():
    lat = Lattice(4)
    p = Operator(HilbertSpace.single("x", 4), np.diag([0, 0, 1.0, 0]))
    assert is_D_local(p, lat.region([2]))


def test_identity_not_local():
    lat = Lattice(4)
    assert not is_D_local(Operator.identity(HilbertSpace.single("x", 4)), lat.region([0, 1]))


@given(st.integers(0, 2**32 - 1))
def test_masked_operator_local_both_criteria(seed):
    rng = np.random.default_rng(seed)
    lat = Lattice(6)
    d = lat.region([1, 4])
    space = HilbertSpace.single("x", 6)
    a = Operator(space, rng.normal(size=(6, 6)) + 1j * rng.normal(size=(6, 6)))
    masked = mask_operator(a, d)
    assert is_D_local(masked, d)
    for f in vanishing_test_functions(space, d, 20, rng):
        assert integral_criterion_residual(masked, f) < 1e-12


@pytest.mark.parametrize("eps", [1e-9, 1e-3, 0.5])
def test_localized_state_in_region(eps):
    lat = Lattice(5)
    assert separation_status(site_state(5, 2), lat.region([2]), eps)


def test_uniform_state_mass():
    lat = Lattice(4)
    s = StateOperator(HilbertSpace.single("x", 4), np.full((4, 4), 0.25))
    d = lat.region([0, 1])
    assert mass_in(s, d) == pytest.approx(0.5, abs=1e-15)
    assert not separation_status(s, d, 0.1)


def test_two_particle_product_in_region():
    lat = Lattice(4)
    s = tensor(site_state(4, 0, "a"), site_state(4, 1, "b"))
    assert separation_status(s, lat.region([0, 1]))


def test_exact_status_uses_support():
    lat = Lattice(3)
    v = np.array([1, 1e-7, 0])
    v = v / np.linalg.norm(v)
    s = StateOperator(HilbertSpace.single("x", 3), np.outer(v, v))
    assert separation_status(s, lat.region([0]), 1e-6)
    assert not separation_status(s, lat.region([0]), 0.0)


@pytest.mark.parametrize("a, b, want", [([0, 1], [2, 3], True), ([0, 1], [1, 2], False)])
def test_disjoint(a, b, want):
    lat = Lattice(4)
    assert disjoint(lat.region(a), lat.region(b)) is want


def test_chamber_cubes_disjoint():
    g = ChamberGeometry(3, 4, 2)
    for n in range(1, 4):
        for m in range(1, 4):
            if n != m:
                for k in range(1, 5):
                    a, b = g.cube(n, k), g.cube(m, k)
                    assert disjoint(a, b)
                    assert not (a.members & b.members)


@given(st.integers(0, 2**32 - 1), st.sets(st.integers(0, 5), min_size=1), st.sets(st.integers(0, 5)))
def test_status_monotone_in_region(seed, base, extra):
    rng = np.random.default_rng(seed)
    lat = Lattice(6)
    s = StateOperator(HilbertSpace.single("x", 6), random_density(rng, 6))
    small, big = lat.region(base), lat.region(base | extra)
    for eps in (0.0, 0.3, 0.9):
        if separation_status(s, small, eps):
            assert separation_status(s, big, eps)


def test_region_outside_lattice():
    with pytest.raises(ValueError, match="outside lattice"):
        Lattice(3).region([3])


def test_regions_on_different_lattices():
    with pytest.raises(ValueError, match="different lattices"):
        disjoint(Lattice(3).region([0]), Lattice(4).region([1]))


def test_test_function_support_enforced():
    lat = Lattice(3)
    with pytest.raises(ValueError, match="vanish"):
        TestFunction(lat, np.array([1, 1, 0]), lat.region([0]))


def test_random_test_function_support(rng):
    lat = Lattice(5)
    f = TestFunction.random(lat.region([1, 3]), rng)
    assert np.all(f.values[[0, 2, 4]] == 0)


def test_eps_range():
    with pytest.raises(ValueError):
        separation_status(site_state(3, 0), Lattice(3).region([0]), 1.0)
