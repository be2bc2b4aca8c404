import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from sepstat.checks import local_state, random_vector, roundtrip_infidelity
from sepstat.hilbert import HilbertSpace, Operator, StateOperator, VectorState, fidelity, tensor
from sepstat.locality import Lattice
from sepstat.symmetrization import (
    MAX_IDENTICAL,
    FormalEvolution,
    PauliBlockedError,
    SpeciesPartition,
    adjoint_R,
    build_projector,
    contraction_left,
    detect_reseparation,
    detect_swallow,
    evolve,
    formal_evolve,
    map_J,
    map_J_vector,
    reconstruct_left,
    reconstruct_right,
)

seeds = st.integers(0, 2**32 - 1)
M = 6
D, DP = [0, 1, 2], [3, 4, 5]
PAIR = HilbertSpace((("S", M), ("E", M)))
S_SP, E_SP = HilbertSpace.single("S", M), HilbertSpace.single("E", M)


def proj(stat):
    if stat == "distinguishable":
        return build_projector(PAIR)
    return build_projector(PAIR, SpeciesPartition.of(stat, ["S", "E"]))


def ket(d, i):
    v = np.zeros(d, dtype=complex)
    v[i] = 1
    return v


def local_vector(rng, region):
    v = np.zeros(M, dtype=complex)
    v[region] = random_vector(rng, len(region))
    return v


def test_distinguishable_projector_identity():
    assert np.array_equal(build_projector(HilbertSpace((("a", 2), ("b", 3)))).matrix, np.eye(6))


def test_fermion_pair_antisymmetrizes():
    space = HilbertSpace((("a", 2), ("b", 2)))
    p = build_projector(space, SpeciesPartition.of("fermion", ["a", "b"]))
    out = p.apply(np.kron(ket(2, 0), ket(2, 1)))
    assert np.allclose(out, 0.5 * (np.kron(ket(2, 0), ket(2, 1)) - np.kron(ket(2, 1), ket(2, 0))))


def test_boson_symmetric_input_fixed():
    space = HilbertSpace((("a", 2), ("b", 2)))
    p = build_projector(space, SpeciesPartition.of("boson", ["a", "b"]))
    v = np.kron(ket(2, 0), ket(2, 0))
    assert np.allclose(p.apply(v), v)


@pytest.mark.parametrize("stat, rank", [("boson", 10), ("fermion", 1)])
def test_three_particle_ranks(stat, rank):
    space = HilbertSpace((("a", 3), ("b", 3), ("c", 3)))
    p = build_projector(space, SpeciesPartition.of(stat, ["a", "b", "c"]))
    assert p.rank == rank
    assert p.idempotency_residual() < 1e-12


def test_species_cap():
    space = HilbertSpace(tuple((c, 2) for c in "abcd"))
    with pytest.raises(ValueError, match=f"at most {MAX_IDENTICAL}"):
        build_projector(space, SpeciesPartition.of("fermion", list("abcd")))


def test_mismatched_dimensions():
    with pytest.raises(ValueError, match="mismatched"):
        build_projector(HilbertSpace((("a", 2), ("b", 3))), SpeciesPartition.of("boson", ["a", "b"]))


def test_slot_in_two_species():
    from sepstat.symmetrization import Species
    with pytest.raises(ValueError, match="more than one species"):
        SpeciesPartition((Species("x", "boson", ("a", "b")), Species("y", "boson", ("b",))))


def test_J_distinguishable_is_product(rng):
    t = StateOperator(S_SP, local_state(rng, M, D, True))
    tp = StateOperator(E_SP, local_state(rng, M, DP, True))
    assert np.allclose(map_J(t, tp, proj("distinguishable")).matrix, tensor(t, tp).matrix)


def test_pauli_blocked():
    t = StateOperator(S_SP, np.outer(ket(M, 2), ket(M, 2)))
    tp = StateOperator(E_SP, np.outer(ket(M, 2), ket(M, 2)))
    with pytest.raises(PauliBlockedError):
        map_J(t, tp, proj("fermion"))
    with pytest.raises(PauliBlockedError):
        map_J_vector(VectorState(S_SP, ket(M, 2)), VectorState(E_SP, ket(M, 2)), proj("fermion"))


def test_orthogonal_fermions_pure_antisymmetric():
    t = StateOperator(S_SP, np.outer(ket(M, 0), ket(M, 0)))
    tp = StateOperator(E_SP, np.outer(ket(M, 4), ket(M, 4)))
    rho = map_J(t, tp, proj("fermion"))
    v = (np.kron(ket(M, 0), ket(M, 4)) - np.kron(ket(M, 4), ket(M, 0))) / np.sqrt(2)
    assert abs(rho.trace() - 1) < 1e-12
    assert rho.purity() == pytest.approx(1, abs=1e-12)
    assert np.allclose(rho.matrix, np.outer(v, v.conj()))


@pytest.mark.parametrize("stat", ["boson", "fermion", "distinguishable"])
def test_reconstruct_left_pure(stat, rng):
    p = proj(stat)
    phi, phip = local_vector(rng, D), local_vector(rng, DP)
    phi_as = map_J_vector(VectorState(S_SP, phi), VectorState(E_SP, phip), p)
    got = reconstruct_left(phi_as, phip, p)
    assert fidelity(got, StateOperator(S_SP, np.outer(phi, phi.conj()))) == pytest.approx(1, abs=1e-12)
    got_r = reconstruct_right(phi_as, phi, p)
    assert fidelity(got_r, StateOperator(E_SP, np.outer(phip, phip.conj()))) == pytest.approx(1, abs=1e-12)


def test_reconstruct_wrong_side_distinguishable_vanishes(rng):
    p = proj("distinguishable")
    phi, phip = local_vector(rng, D), local_vector(rng, DP)
    phi_as = map_J_vector(VectorState(S_SP, phi), VectorState(E_SP, phip), p)
    with pytest.raises(ValueError, match="overlap"):
        reconstruct_left(phi_as, local_vector(rng, [1, 2]), p)


def test_reconstruct_wrong_side_region_rejected(rng):
    lat = Lattice(M)
    p = proj("fermion")
    phi, phip = local_vector(rng, D), local_vector(rng, DP)
    phi_as = map_J_vector(VectorState(S_SP, phi), VectorState(E_SP, phip), p)
    with pytest.raises(ValueError, match="not supported"):
        reconstruct_left(phi_as, local_vector(rng, [1, 2]), p, lat.region(DP))
    with pytest.raises(ValueError, match="not supported"):
        reconstruct_right(phi_as, local_vector(rng, [4]), p, lat.region(D))
    got = reconstruct_left(phi_as, local_vector(rng, [4, 5]), p, lat.region(DP))
    assert fidelity(got, StateOperator(S_SP, np.outer(phi, phi.conj()))) == pytest.approx(1, abs=1e-12)


@pytest.mark.parametrize("stat", ["boson", "fermion"])
def test_reconstruct_mixed_independent_of_f(stat, rng):
    p = proj(stat)
    t = StateOperator(S_SP, local_state(rng, M, D, True))
    tp = StateOperator(E_SP, local_state(rng, M, DP, True))
    rho = map_J(t, tp, p)
    for _ in range(10):
        assert np.max(np.abs(reconstruct_left(rho, local_vector(rng, DP), p).matrix - t.matrix)) < 1e-10
        assert np.max(np.abs(reconstruct_right(rho, local_vector(rng, D), p).matrix - tp.matrix)) < 1e-10


def test_adjoint_distinguishable_is_pad(rng):
    f, phi = random_vector(rng, M), random_vector(rng, M)
    assert np.allclose(adjoint_R(f, phi, proj("distinguishable")), np.kron(phi, f.conj()))


def test_adjoint_fermion_is_antisymmetrized_pad(rng):
    f, phi = random_vector(rng, M), random_vector(rng, M)
    pad = np.kron(phi, f.conj())
    swapped = np.kron(f.conj(), phi)
    assert np.allclose(adjoint_R(f, phi, proj("fermion")), (pad - swapped) / 2)


@given(seeds, st.sampled_from(["boson", "fermion", "distinguishable"]), st.sampled_from(["left", "right"]))
def test_adjointness(seed, stat, side):
    rng = np.random.default_rng(seed)
    p = proj(stat)
    f, phi, big = random_vector(rng, M), random_vector(rng, M), random_vector(rng, M * M)
    if side == "left":
        r, _ = contraction_left(p, f)
    else:
        from sepstat.symmetrization import contraction_right
        r, _ = contraction_right(p, f)
    lhs = np.vdot(adjoint_R(f, phi, p, side), big)
    rhs = np.vdot(phi, r @ big)
    assert abs(lhs - rhs) < 1e-10


def test_formal_identity_is_J(rng):
    p = proj("boson")
    t = StateOperator(S_SP, local_state(rng, M, D, False))
    tp = StateOperator(E_SP, local_state(rng, M, DP, False))
    fe = FormalEvolution(Operator.identity(PAIR), p)
    assert np.allclose(formal_evolve(fe, t, tp).matrix, map_J(t, tp, p).matrix)


@given(seeds)
def test_symmetric_evolution_stays_symmetric(seed):
    rng = np.random.default_rng(seed)
    q = np.linalg.qr(rng.normal(size=(M, M)) + 1j * rng.normal(size=(M, M)))[0]
    p = proj("boson")
    fe = FormalEvolution(Operator(PAIR, np.kron(q, q)), p)
    t = StateOperator(S_SP, local_state(rng, M, D, True))
    tp = StateOperator(E_SP, local_state(rng, M, DP, True))
    rho = formal_evolve(fe, t, tp)
    out = np.eye(M * M) - p.matrix
    assert abs(rho.trace() - 1) < 1e-10
    assert np.max(np.abs(out @ rho.matrix @ out)) < 1e-10


def test_non_commuting_coupling_rejected():
    swap_first = np.eye(M * M)
    swap_first[[0, 1]] = swap_first[[1, 0]]
    with pytest.raises(ValueError, match="commute"):
        FormalEvolution(Operator(PAIR, swap_first), proj("fermion"))


def test_swallow_cases(rng):
    lat = Lattice(M)
    p = proj("fermion")
    inside = map_J(StateOperator(S_SP, local_state(rng, M, [3, 4], False)),
                   StateOperator(E_SP, local_state(rng, M, [5], False)), p)
    assert detect_swallow(inside, lat.region(DP))
    sep = map_J(StateOperator(S_SP, local_state(rng, M, D, False)),
                StateOperator(E_SP, local_state(rng, M, DP, False)), p)
    assert not detect_swallow(sep, lat.region(DP))
    # move S from site 0 into site 3 by a symmetric single-particle swap
    perm = np.eye(M)
    perm[[0, 3]] = perm[[3, 0]]
    s0 = StateOperator(S_SP, np.outer(ket(M, 0), ket(M, 0)))
    e5 = StateOperator(E_SP, np.outer(ket(M, 5), ket(M, 5)))
    moved = evolve(Operator(PAIR, np.kron(perm, perm)), map_J(s0, e5, p))
    assert detect_swallow(moved, lat.region(DP), 1e-6)


@pytest.mark.parametrize("stat", ["boson", "fermion"])
def test_reseparation_returns_factors(stat, rng):
    lat = Lattice(M)
    p = proj(stat)
    t = StateOperator(S_SP, local_state(rng, M, D, True))
    tp = StateOperator(E_SP, local_state(rng, M, DP, True))
    got = detect_reseparation(map_J(t, tp, p), lat.region(D), lat.region(DP), p, 1)
    assert got is not None
    assert np.max(np.abs(got[0].matrix - t.matrix)) < 1e-9
    assert np.max(np.abs(got[1].matrix - tp.matrix)) < 1e-9


def test_reseparation_entangled_none():
    lat = Lattice(M)
    p = proj("distinguishable")
    v = (np.kron(ket(M, 0), ket(M, 3)) + np.kron(ket(M, 1), ket(M, 4))) / np.sqrt(2)
    bell = StateOperator(PAIR, np.outer(v, v))
    assert detect_reseparation(bell, lat.region(D), lat.region(DP), p, 1) is None


def test_reseparation_swallowed_none(rng):
    lat = Lattice(M)
    p = proj("fermion")
    inside = map_J(StateOperator(S_SP, local_state(rng, M, [3, 4], False)),
                   StateOperator(E_SP, local_state(rng, M, [5], False)), p)
    assert detect_reseparation(inside, lat.region(D), lat.region(DP), p, 1) is None


def test_reseparation_overlapping_regions():
    lat = Lattice(M)
    p = proj("fermion")
    rho = StateOperator(PAIR, np.eye(M * M) / M**2)
    with pytest.raises(ValueError, match="disjoint"):
        detect_reseparation(rho, lat.region([0, 1]), lat.region([1, 2]), p, 1)


@pytest.mark.parametrize("stat", ["boson", "fermion"])
@pytest.mark.parametrize("mixed", [False, True])
def test_roundtrip_fifty_pairs(stat, mixed):
    assert roundtrip_infidelity(stat, 50, mixed=mixed) <= 1e-9
