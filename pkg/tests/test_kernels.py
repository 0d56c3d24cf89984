import math
from fractions import Fraction

import pytest

from greenwalk.errors import RangeError, TransienceError
from greenwalk.groups import GroupElement, GroupModel, parse_element
from greenwalk.kernels import (
    build_kernel_table,
    harnack_scan,
    kernel_bounds_check,
    n_step_distribution,
    spectral_radius_estimate,
    tail_condition_check,
)
from greenwalk.walks import drift_z, srw_free, wreath_walk

F2 = GroupModel.free(2)


# -- F_2 closed forms ---------------------------------------------------------
#
# For the simple walk on F_k the first-visit probability across one edge is
# F = 1/(2k-1), hence G(e,e) = 1/(1 - 2k*F/(2k)) ... = (2k-1)/(2k-2) and
# G(e,g) = G(e,e) * F^{|g|}.  For k = 2: G(e,e) = 3/2, F = 1/3.


def test_f2_green_at_identity_both_methods():
    for method in ("linear-solve", "series"):
        t = build_kernel_table(srw_free(2), radius=6, method=method)
        e = F2.identity()
        assert abs(t.green_at_e - 1.5) <= t.entry_error(e) + 1e-12
        assert t.green_at_e == pytest.approx(1.5, abs=1e-6)


def test_f2_green_decay(t_f2):
    for word in ("a", "ab", "abA", "abab", "ababa"):
        g = parse_element(F2, word)
        expected = 1.5 * 3.0 ** (-len(g.data))
        assert t_f2.green_at(g) == pytest.approx(expected, rel=1e-9)
        assert t_f2.entry_error(g) <= 1e-6


def test_f2_first_visit_and_martin(t_f2):
    a = parse_element(F2, "a")
    ab = parse_element(F2, "ab")
    assert t_f2.first_visit(F2.identity(), a) == pytest.approx(1 / 3, rel=1e-9)
    # moving one step toward h multiplies the kernel by 1/F = 3
    assert t_f2.martin(a, ab) == pytest.approx(3.0, rel=1e-9)
    assert t_f2.martin(F2.identity(), ab) == 1.0


def test_f2_green_metric(t_f2):
    g = parse_element(F2, "ab")
    assert t_f2.green_metric(g) == pytest.approx(2 * math.log(3.0), rel=1e-9)
    assert t_f2.green_metric(F2.identity()) == 0.0


def test_f2_translation_invariance(t_f2):
    a = parse_element(F2, "a")
    ab = parse_element(F2, "ab")
    b = parse_element(F2, "b")
    assert t_f2.green_pair(a, ab) == t_f2.green_at(b)


def test_range_error_outside_radius(t_f2):
    far = GroupElement("free", tuple([1, 2] * 5))  # length 10 > radius 8
    with pytest.raises(RangeError):
        t_f2.green_at(far)
    with pytest.raises(RangeError):
        t_f2.entry_error(far)


# -- drift walk on Z ----------------------------------------------------------
#
# For P(+1)=p > 1/2: G(0,0) = 1/(p-q) with q = 1-p, G(0,n) = G(0,0) for
# n > 0 (the walk drifts right, hitting is certain), and
# G(0,-n) = G(0,0) * (q/p)^n.


def test_drift_green_values(t_drift):
    G = t_drift.walk.group
    g00 = 1.0 / (0.7 - 0.3)
    assert t_drift.green_at_e == pytest.approx(g00, rel=1e-9)
    for n in range(1, 10):
        right = GroupElement("lattice", (n,))
        left = GroupElement("lattice", (-n,))
        assert t_drift.green_at(right) == pytest.approx(g00, rel=1e-9)
        assert t_drift.green_at(left) == pytest.approx(
            g00 * (0.3 / 0.7) ** n, rel=1e-8
        )
    assert G.kind == "lattice"


def test_drift_dual_route_agreement():
    solve = build_kernel_table(drift_z(0.7), radius=12, method="linear-solve")
    series = build_kernel_table(drift_z(0.7), radius=12, method="series")
    for n in range(-12, 13):
        g = GroupElement("lattice", (n,))
        gap = abs(solve.green_at(g) - series.green_at(g))
        budget = solve.entry_error(g) + series.entry_error(g) + 1e-12
        assert gap <= budget, f"n={n}: gap {gap} exceeds {budget}"


def test_recurrent_walk_rejected():
    with pytest.raises(TransienceError):
        build_kernel_table(drift_z(0.5), radius=6)


def test_wreath_dual_route_agreement():
    w = wreath_walk(2, 0.75, 0.4)
    solve = build_kernel_table(w, radius=4, method="linear-solve")
    series = build_kernel_table(w, radius=4, method="series")
    Gw = w.group
    probes = [
        Gw.identity(),
        parse_element(Gw, "{}@1"),
        parse_element(Gw, "{}@2"),
        parse_element(Gw, "{0:1}@0"),
        parse_element(Gw, "{0:1,1:1}@2"),
        parse_element(Gw, "{}@-2"),
    ]
    for g in probes:
        gap = abs(solve.green_at(g) - series.green_at(g))
        budget = solve.entry_error(g) + series.entry_error(g) + 1e-10
        assert gap <= budget, f"{g}: gap {gap} exceeds {budget}"


# -- spectral radius, Harnack, n-step law --------------------------------------


def test_spectral_radius_f2():
    est = spectral_radius_estimate(srw_free(2), n_max=120)
    true_rho = math.sqrt(3.0) / 2.0
    assert est.rho_hat <= true_rho + 1e-12
    assert est.rho_hat > 0.8
    assert est.even_monotone


def test_harnack_constant_f2(t_f2):
    # on the tree the Green ratio across one edge is exactly 1/F = 3
    c = harnack_scan(t_f2, radius=3)
    assert c == pytest.approx(3.0, abs=1e-6)


def test_harnack_needs_double_radius(t_f2):
    with pytest.raises(RangeError):
        harnack_scan(t_f2, radius=5)


def test_tail_condition_finite_support():
    value, finite = tail_condition_check(srw_free(2), 3.0)
    assert finite
    assert value == pytest.approx(3.0)  # all four steps at distance 1


def test_kernel_bounds_hold(t_f2):
    a = parse_element(F2, "a")
    for word in ("ab", "ba", "Ab", "aa"):
        assert kernel_bounds_check(t_f2, a, parse_element(F2, word))


def test_n_step_distribution_mass():
    dist, dropped = n_step_distribution(srw_free(2), 4, radius=4)
    assert dropped == pytest.approx(0.0, abs=1e-15)
    assert sum(dist.values()) == pytest.approx(1.0, abs=1e-12)
    # parity: after an even number of steps only even-length words carry mass
    assert all(len(g.data) % 2 == 0 for g in dist)


def test_n_step_distribution_exact_matches_float():
    ex, ex_drop = n_step_distribution(srw_free(2), 4, radius=4, exact=True)
    fl, _ = n_step_distribution(srw_free(2), 4, radius=4)
    assert ex_drop == 0
    assert set(ex) == set(fl)
    for g, frac in ex.items():
        assert fl[g] == pytest.approx(float(frac), rel=1e-12)
    # closed 4-step walks on the 4-regular tree: 16 out/back pairs plus
    # 12 two-deep excursions, each of probability 4^-4
    assert ex[F2.identity()] == Fraction(28, 256)


def test_n_step_truncation_drops_mass():
    dist, dropped = n_step_distribution(srw_free(2), 6, radius=2)
    assert dropped > 0
    assert sum(dist.values()) + dropped == pytest.approx(1.0, abs=1e-12)
