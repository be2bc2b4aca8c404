import csv

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from sepstat.chamber import (
    ChamberGeometry,
    branch_confined,
    cube_modes,
    hopping_unitary,
    layer_observable,
    localized,
    plane_wave,
    propagate,
    register_layer,
    sample_tracks,
    shift_unitary,
    write_tracks_csv,
)
from sepstat.checks import random_density
from sepstat.hilbert import StateOperator
from sepstat.locality import mass_in


def test_unit_cubes_are_position():
    o = layer_observable(ChamberGeometry(2, 4, 1), 1)
    assert o.sizes == (1, 1, 1, 1)
    assert np.allclose(o.basis, np.eye(4))


def test_cube_modes_orthonormal():
    g = ChamberGeometry(2, 2, 2)
    o = layer_observable(g, 1)
    assert o.sizes == (2, 2)
    assert np.max(np.abs(o.basis.conj().T @ o.basis - np.eye(4))) < 1e-12
    assert np.allclose(sum(o.group_projector(m) for m in range(2)), np.eye(4), atol=1e-12)


def test_modes_supported_in_cube():
    g = ChamberGeometry(1, 3, 3)
    m = cube_modes(g, 2)
    assert np.all(m[[0, 1, 2, 6, 7, 8]] == 0)


def test_bad_layer():
    with pytest.raises(ValueError, match="layer"):
        layer_observable(ChamberGeometry(2, 2, 1), 3)


def test_localized_single_branch():
    g = ChamberGeometry(3, 4, 2)
    gm = register_layer(localized(g, 3), g, 2)
    assert gm.labels == ["layer 2 cube 3"]
    assert branch_confined(gm, g)


def test_plane_wave_uniform():
    g = ChamberGeometry(3, 5, 2)
    assert register_layer(plane_wave(g), g, 1).weights == pytest.approx([0.2] * 5, abs=1e-12)


@given(st.integers(0, 2**32 - 1))
def test_weights_sum_to_one(seed):
    g = ChamberGeometry(2, 3, 2)
    s = StateOperator(g.space, random_density(np.random.default_rng(seed), 6))
    gm = register_layer(s, g, 1)
    assert abs(gm.weights.sum() - 1) < 1e-12
    assert branch_confined(gm, g)


def test_identity_propagation():
    g = ChamberGeometry(2, 3, 1)
    s = plane_wave(g)
    assert np.array_equal(propagate(s, np.eye(3)).matrix, s.matrix)


def test_shift_moves_support():
    g = ChamberGeometry(2, 4, 2)
    s = propagate(localized(g, 1), shift_unitary(8, 2))
    assert mass_in(s, g.column(2)) == pytest.approx(1)
    assert abs(s.trace() - 1) < 1e-12


def test_hopping_unitary_and_trace():
    g = ChamberGeometry(2, 3, 2)
    v = hopping_unitary(6, 0.7)
    assert np.max(np.abs(v.conj().T @ v - np.eye(6))) < 1e-12
    assert abs(propagate(localized(g, 2), v).trace() - 1) < 1e-12


def test_non_unitary_propagator():
    g = ChamberGeometry(2, 2, 1)
    with pytest.raises(ValueError, match="unitary"):
        propagate(plane_wave(g), np.diag([1.0, 0.5]))


def test_localized_tracks_straight():
    g = ChamberGeometry(4, 5, 2)
    s = sample_tracks(localized(g, 2), g, None, 500, seed=1)
    assert s.straight_fraction == 1.0
    assert all(set(t.cubes) == {2} for t in s.samples)


def test_plane_wave_tracks():
    g = ChamberGeometry(4, 5, 2)
    s = sample_tracks(plane_wave(g), g, None, 10_000, seed=42)
    assert s.straight_fraction == 1.0
    assert s.first_layer_p > 0.01
    assert sum(s.histograms[0]) == 10_000


def test_hopping_bends_tracks():
    g = ChamberGeometry(4, 5, 2)
    s = sample_tracks(localized(g, 3), g, hopping_unitary(10, 0.6), 2000, seed=42)
    assert s.straight_fraction < 1.0
    assert s.near_fraction >= s.straight_fraction


def test_tracks_deterministic_across_workers():
    g = ChamberGeometry(3, 4, 2)
    a = sample_tracks(plane_wave(g), g, hopping_unitary(8, 0.3), 3000, seed=5, workers=1)
    b = sample_tracks(plane_wave(g), g, hopping_unitary(8, 0.3), 3000, seed=5, workers=4)
    assert a == b


def test_csv_export(tmp_path):
    g = ChamberGeometry(3, 2, 1)
    s = sample_tracks(plane_wave(g), g, None, 4, seed=0)
    path = tmp_path / "t.csv"
    write_tracks_csv(str(path), s.samples)
    rows = list(csv.reader(path.open()))
    assert rows[0] == ["trial", "layer", "cube"]
    assert len(rows) == 1 + 4 * 3


@pytest.mark.parametrize("args", [(0, 2, 1), (1, 1, 1), (1, 2, 0)])
def test_geometry_validation(args):
    with pytest.raises(ValueError):
        ChamberGeometry(*args)


def test_cube_disjointness():
    assert ChamberGeometry(3, 4, 2).check_disjoint()
