import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from sepstat.bcl import signal_coherence
from sepstat.checks import hbt_closed_form_residual, random_vector
from sepstat.correlations import (
    D0,
    D1,
    D2,
    D12,
    HBT_LABELS,
    TwoBosonState,
    build_projectors,
    correlation,
    correlation_closed_form,
    unreduced_end_state,
    epr4_model,
    exchange_operator,
    fire_probabilities,
    hbt_model,
    reduce_epr4,
    reduce_hbt,
    sample_correlation,
    same_sign_probability,
)
from sepstat.models import SPIN_UP
from sepstat.sampling import pick, run_trials, sample_branches, trial_rng

R3 = 1 / np.sqrt(3)
R2 = 1 / np.sqrt(2)


@pytest.fixture(scope="module")
def model():
    return hbt_model()


def test_projector_ranks():
    pr = build_projectors()
    assert np.linalg.matrix_rank(pr.pm) == 2
    sym = np.array([[1, 0, 0], [0, R2, 0], [0, R2, 0], [0, 0, 1]])
    assert np.linalg.matrix_rank(sym.T @ pr.pm @ sym) == 1


def test_pp_fixes_plus_plus():
    uu = np.kron(SPIN_UP, SPIN_UP)
    assert np.allclose(build_projectors().pp @ uu, uu)


def test_product_relation():
    pr = build_projectors()
    assert np.max(np.abs(pr.plus @ pr.minus - pr.pm)) == 0
    assert max(pr.residuals().values()) < 1e-12


def test_bad_single_projectors():
    with pytest.raises(ValueError, match="P\\+P- = 0"):
        build_projectors(p1p=np.eye(2), p1m=np.diag([1.0, 0]))


def test_c_zero_anticorrelated():
    phi = TwoBosonState(R2, R2, 0)
    assert correlation(phi) == pytest.approx(-1, abs=1e-12)
    assert correlation_closed_form(phi) == pytest.approx(-1, abs=1e-12)


def test_equal_amplitudes_two_ways():
    phi = TwoBosonState(R3, R3, R3)
    assert abs(correlation(phi) - correlation_closed_form(phi)) < 1e-12
    assert correlation_closed_form(phi) == pytest.approx(-0.5, abs=1e-12)


@given(st.integers(0, 2**32 - 1))
def test_dual_formula(seed):
    rng = np.random.default_rng(seed)
    phi = TwoBosonState(*random_vector(rng, 3))
    assert abs(correlation(phi) - correlation_closed_form(phi)) < 1e-10


def test_dual_formula_hundred():
    assert hbt_closed_form_residual(100) < 1e-10


@pytest.mark.parametrize("abc", [(1, 0, 0), (0, 1, 0)])
def test_undefined_correlation(abc):
    with pytest.raises(ValueError, match="undefined"):
        correlation(TwoBosonState(*abc))


def test_unnormalized_amplitudes():
    with pytest.raises(ValueError, match="must equal 1"):
        TwoBosonState(1, 1, 0)


def test_exchange_is_involution():
    x = exchange_operator()
    assert np.allclose(x @ x, np.eye(64))
    assert np.allclose(x, x.T)


def test_plus_plus_image(model):
    e = np.eye(4)
    p = model.projector.matrix
    idle = np.kron(e[D0], e[D0])
    uu = np.kron(SPIN_UP, SPIN_UP)
    src = p @ np.kron(uu, idle)
    dst = p @ np.kron(uu, np.kron(e[D12], e[D0]))
    out = model.fe.coupling.matrix @ (src / np.linalg.norm(src))
    assert np.allclose(out, dst / np.linalg.norm(dst), atol=1e-12)


def test_images_orthogonal_and_unitary(model):
    e = np.eye(4)
    uu = np.kron(SPIN_UP, SPIN_UP)
    p = model.projector.matrix
    imgs = [p @ np.kron(uu, np.kron(a, b)) for a, b in ((e[D12], e[D0]), (e[D0], e[D12]), (e[D1], e[D2]))]
    imgs = np.column_stack([v / np.linalg.norm(v) for v in imgs])
    assert np.max(np.abs(imgs.conj().T @ imgs - np.eye(3))) < 1e-10
    assert model.fe.coupling.unitarity_residual() < 1e-10


def test_branch_weights(model):
    phi = TwoBosonState.normalized(0.3, 0.5j, -0.8)
    g = reduce_hbt(phi, model)
    assert [g.weight_of(l) for l in HBT_LABELS] == pytest.approx(list(phi.weights), abs=1e-12)
    assert max(signal_coherence(b.state, model.classifier.projectors) for b in g.branches) < 1e-10


def test_unreduced_coherence_and_probabilities(model):
    phi = TwoBosonState(R3, R3, R3)
    end = unreduced_end_state(phi, model)
    assert signal_coherence(end, model.classifier.projectors) > 0.1
    g = reduce_hbt(phi, model)
    assert fire_probabilities(end, model) == pytest.approx(fire_probabilities(g.flatten(), model), abs=1e-12)


def test_c_zero_branch_absent(model):
    g = reduce_hbt(TwoBosonState(R2, R2, 0), model)
    assert HBT_LABELS[2] not in g.labels


def test_monte_carlo_reproduces_correlation(model):
    g = reduce_hbt(TwoBosonState(R3, R3, R3), model)
    mc, sampled = sample_correlation(g, 100_000, 20111201)
    assert mc.z <= 3
    assert len(sampled) == 100_000


def test_monte_carlo_thread_independent(model):
    g = reduce_hbt(TwoBosonState(R3, R3, R3), model)
    a, _ = sample_correlation(g, 5000, 3, workers=1)
    b, _ = sample_correlation(g, 5000, 3, workers=4)
    assert a == b


def test_epr4_pairs():
    g = reduce_epr4()
    assert g.weights == pytest.approx([0.5, 0.5], abs=1e-12)
    assert same_sign_probability(g) == 0
    for b in g.branches:
        first, second = b.signal.split("&")
        assert first.startswith("A1") and second.startswith("A2")
        assert first[-1] != second[-1]


def test_epr4_excited_subdetectors():
    model = epr4_model()
    g = reduce_epr4(model=model)
    for b in g.branches:
        excited = [s.name for s in model.detector.subdetectors if s.name not in b.parts]
        assert sorted(excited) == sorted(b.signal.split("&"))


# -- sampling


def test_trial_streams_independent_of_chunking():
    a = run_trials(lambda t, rng: rng.random(), 5000, 9, workers=1)
    b = run_trials(lambda t, rng: rng.random(), 5000, 9, workers=3)
    assert a == b
    assert a[17] == trial_rng(9, 17).random()


@pytest.mark.parametrize("u, want", [(0.0, 0), (0.29, 0), (0.3, 2), (0.99, 2)])
def test_pick(u, want):
    assert pick(np.array([0.3, 0.0, 0.7]), u) == want


def test_sample_branches_validation():
    with pytest.raises(ValueError):
        sample_branches([-0.1, 1.1], 10, 0)
    with pytest.raises(ValueError):
        run_trials(lambda t, r: 0, 0, 0)
