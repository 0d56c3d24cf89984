import json

import pytest

from greenwalk.errors import UnsupportedGroupError
from greenwalk.groups import GroupElement, GroupModel, parse_element
from greenwalk.sampler import (
    boundary_from_path,
    harmonic_measure_estimate,
    rn_identity_check,
    sample_path,
    stationarity_residual,
)
from greenwalk.walks import drift_z, srw_free, wreath_walk

F2 = GroupModel.free(2)


def test_worker_count_does_not_change_estimate():
    a = harmonic_measure_estimate(srw_free(2), depth=2, n_samples=20_000,
                                  seed=11, workers=1)
    b = harmonic_measure_estimate(srw_free(2), depth=2, n_samples=20_000,
                                  seed=11, workers=3)
    assert json.dumps(a.to_json_dict(), sort_keys=True) == json.dumps(
        b.to_json_dict(), sort_keys=True
    )


def test_seed_changes_estimate():
    a = harmonic_measure_estimate(srw_free(2), depth=1, n_samples=20_000,
                                  seed=1)
    b = harmonic_measure_estimate(srw_free(2), depth=1, n_samples=20_000,
                                  seed=2)
    assert a.masses != b.masses


def test_free_estimate_matches_exact_law(m_f2, m_exact):
    """Every depth-2 cell of the 100k-sample law sits within 4 sigma."""
    assert m_f2.depth == 4 and m_f2.n_eff > 99_000
    for cell in ((1,), (2, 2), (-1, 2)):
        got = m_f2.cell_mass(cell)
        want = m_exact.cell_mass(cell)
        se = m_f2.cell_se(cell)
        assert abs(got - want) < 4 * se, (cell, got, want, se)
    assert m_f2.nonconverged < 1e-3
    assert m_f2.total_mass() == pytest.approx(1.0, abs=1e-12)


def test_lattice_drift_all_mass_right():
    m = harmonic_measure_estimate(drift_z(0.7), depth=1, n_samples=5_000,
                                  seed=3)
    assert m.kind == "binned"
    assert m.cell_mass("+inf") == 1.0
    assert m.cell_mass("-inf") == 0.0


def test_wreath_bins_sum_to_one():
    m = harmonic_measure_estimate(wreath_walk(2, 0.75, 0.4), depth=2,
                                  n_samples=5_000, seed=5)
    assert m.kind == "binned"
    assert m.total_mass() == pytest.approx(1.0, abs=1e-12)
    # strong right drift: essentially every path escapes to +
    plus = sum(mass for (sign, _), mass in m.masses.items() if sign == "+")
    assert plus > 0.95


def test_unsupported_boundary():
    Z2 = GroupModel.lattice(2)
    from greenwalk.walks import make_walk

    steps = {}
    for axis in range(2):
        for sign in (1, -1):
            vec = [0, 0]
            vec[axis] = sign
            steps[GroupElement("lattice", tuple(vec))] = 0.25
    w = make_walk(Z2, steps)
    with pytest.raises(UnsupportedGroupError):
        harmonic_measure_estimate(w, depth=1, n_samples=2_000, seed=1)


def test_sample_size_floor():
    with pytest.raises(ValueError):
        harmonic_measure_estimate(srw_free(2), depth=1, n_samples=10, seed=1)


def test_stationarity_of_exit_law(m_f2):
    res, se = stationarity_residual(srw_free(2), m_f2, (1,))
    assert res < 4 * se + 1e-12


def test_stationarity_exact_law(m_exact):
    res, se = stationarity_residual(srw_free(2), m_exact, (1, 2))
    assert res < 1e-12 and se == 0.0


def test_rn_identity_on_sampled_measure(t_f2, m_f2):
    res, z = rn_identity_check(t_f2, m_f2, parse_element(F2, "a"), (1,))
    assert z < 4.0, (res, z)


def test_rn_identity_exact_is_zero(t_f2, m_exact):
    res, z = rn_identity_check(t_f2, m_exact, parse_element(F2, "a"), (1,))
    assert res < 1e-12 and z == 0.0


def test_sample_path_shape():
    p = sample_path(srw_free(2), F2.identity(), horizon=50, seed=9)
    assert len(p.positions) == 51
    assert p.positions[0] == F2.identity()
    # consecutive positions differ by one generator
    for x, y in zip(p.positions, p.positions[1:]):
        assert len(F2.mul(F2.inv(x), y).data) == 1
    again = sample_path(srw_free(2), F2.identity(), horizon=50, seed=9)
    assert again.positions == p.positions


def test_boundary_from_path_free():
    p = sample_path(srw_free(2), F2.identity(), horizon=400, seed=21)
    xi = boundary_from_path(p, depth=3)
    assert xi.kind == "tree_end" and len(xi.prefix) == 3


def test_boundary_from_path_drift():
    p = sample_path(drift_z(0.7), GroupModel.lattice(1).identity(),
                    horizon=300, seed=2)
    xi = boundary_from_path(p, depth=5)
    assert xi.kind == "sequence"
    vals = [x.data[0] for x in xi.elements]
    assert vals == sorted(vals) and vals[-1] > 5
