import csv

import numpy as np
import pytest

from endolab import families
from endolab.conjugacy import ConjugacyField
from endolab.errors import NoDomination, UnsupportedDimension
from endolab.foliation import (
    PlaqueChart,
    chain_dispersion,
    constant_unstable_plane,
    estimate_ph_constants,
    holonomy_jacobian,
    integrate_leaf,
    invariance_residuals,
    levelset_leaf,
    quasi_isometry_scan,
    splitting_at,
    wu_leaf,
    write_segment_csv,
)
from endolab.lattice import IntMatrix, PHConstants


def _line_angle(u, v):
    u, v = u / np.linalg.norm(u), v / np.linalg.norm(v)
    return float(np.linalg.norm(np.cross(u, v)))


def test_linear_frame_is_eigenbasis(rng):
    lin = families.linear()
    for x in rng.random((3, 3)):
        fr = splitting_at(lin, x)
        for i in range(3):
            assert _line_angle(fr.vectors[i], lin.splitting.basis[:, i]) < 1e-8


def test_cat_frame(rng):
    cat = families.linear(families.CAT)
    fr = splitting_at(cat, rng.random(2))
    assert fr.labels == ("s", "u")
    u, e = fr["u"], cat.splitting.basis[:, 1]
    assert abs(u[0] * e[1] - u[1] * e[0]) < 1e-8


@pytest.mark.parametrize("model", [families.cross_shear(0.5, 0.5), families.manufactured_conjugacy(0.005),
                                   families.generic_displacement(0.1)], ids=lambda m: m.name)
def test_frame_invariance(model):
    res = invariance_residuals(model, np.array([0.31, 0.72, 0.13]), 5)
    assert max(res.values()) < 1e-8


def test_frame_not_converged_raises(live):
    with pytest.raises(NoDomination):
        splitting_at(live, np.array([0.3, 0.2, 0.1]), n_fwd=2, m_back=2, tol=1e-14)


def test_unsupported_frame_dimension():
    expanding = families.linear(IntMatrix.from_rows([[2, 0], [0, 3]]))
    with pytest.raises(UnsupportedDimension):
        splitting_at(expanding, np.zeros(2))


def test_chain_dispersion_linear_and_control(control):
    lin = families.linear()
    d = chain_dispersion(lin, np.array([0.2, 0.5, 0.7]), n_chains=4, rng=0)
    assert d.plane < 1e-12 and d.strong < 1e-12
    d = chain_dispersion(control, np.array([0.2, 0.5, 0.7]), n_chains=6, rng=0)
    assert d.plane < 1e-8 and d.strong < 1e-8


def test_cross_shear_plane_is_chain_independent(live):
    for i, x in enumerate(np.random.default_rng(4).random((3, 3))):
        d = chain_dispersion(live, x, n_chains=6, rng=i)
        assert d.plane < 1e-8
        # the strong-unstable direction itself does depend on the chain when move (b) is on
        assert d.strong > 1e-3


def test_generic_plane_depends_on_chain():
    generic = families.generic_displacement(0.1)
    d = chain_dispersion(generic, np.array([0.4, 0.1, 0.8]), n_chains=6, rng=1)
    assert d.plane > 1e-4


def test_ph_constants_for_live_family(live):
    consts, n = estimate_ph_constants(live, n_samples=16)
    assert isinstance(consts, PHConstants)
    assert consts.nu < 1 < consts.gamma1 <= consts.gamma2 < consts.mu
    assert n >= 1


def test_constant_plane_detection(live, control, generic, manufactured):
    assert constant_unstable_plane(live) and constant_unstable_plane(control)
    assert not constant_unstable_plane(generic)
    assert not constant_unstable_plane(manufactured)
    with pytest.raises(UnsupportedDimension):
        PlaqueChart(generic, np.zeros(3))


def test_linear_leaf_is_straight():
    lin = families.linear()
    x = np.array([0.1, 0.2, 0.3])
    seg = integrate_leaf(lin, x, "wu", 0.5)
    e = lin.splitting.basis[:, 1]
    rel = seg.points - x
    off = rel - np.outer(rel @ e, e)
    assert np.abs(off).max() < 1e-12
    assert seg.length == pytest.approx(0.5, abs=1e-12)
    again = integrate_leaf(lin, seg.points[200], "wu", 0.1)
    assert np.abs((again.points - seg.points[200]) - np.outer((again.points - seg.points[200]) @ e, e)).max() < 1e-12


def test_rk4_and_levelset_leaves_agree(live):
    x = np.array([0.21, 0.43, 0.67])
    rk = integrate_leaf(live, x, "wu", 0.5, step=1e-3)
    ls = levelset_leaf(live, x, 0.6, 1e-3)
    dist = np.linalg.norm(rk.points[:, None, :] - ls.points[None, :, :], axis=2).min(axis=1)
    assert dist.max() < 1e-3
    assert wu_leaf(live, x, 0.1, 1e-3).method == "levelset"
    assert wu_leaf(families.linear(), x, 0.1, 1e-3).method == "rk4"


def test_frame_wu_is_tangent_to_conjugacy_level_sets(live):
    """Dynamics route (frame e^wu) against conjugacy route (level sets of h^su):
    h^su is flat along e^wu to first order, but not along A's eigenvector."""
    fld = ConjugacyField.series_only(live)
    binv = np.linalg.inv(live.splitting.basis)
    y = np.array([0.3, 0.41, 0.62])
    fr = splitting_at(live, y)

    def h_su(p):
        return (binv @ fld(p[None, :], "series", reduce_mod=False)[0])[2]

    def quotient(v, s):
        return abs(h_su(y + s * v) - h_su(y)) / s

    along_frame = [quotient(fr["wu"], s) for s in (1e-3, 1e-4, 1e-5)]
    along_linear = quotient(live.splitting.basis[:, 1], 1e-5)
    assert along_frame[0] > along_frame[1] > along_frame[2]
    assert along_frame[2] < 1e-2 * along_linear


def test_conjugacy_maps_wu_leaf_to_linear_leaf(live):
    """h sends the weak-unstable leaf of f through x into the line h(x) + E^wu_A."""
    x = np.array([0.05, 0.61, 0.37])
    seg = levelset_leaf(live, x, 1.0, 1e-2)
    h = ConjugacyField.series_only(live)(seg.points, "series", reduce_mod=False)
    rel = h - h[0]
    e = live.splitting.basis[:, 1]
    off = rel - np.outer(rel @ e, e)
    assert np.abs(off).max() < 1e-10


def test_quasi_isometry_linear():
    lin = families.linear()
    seg = integrate_leaf(lin, np.zeros(3), "wu", 5.0)
    rep = quasi_isometry_scan(seg, lin.splitting.basis[:, 1], pair_count=2000)
    assert rep.Q <= 1 + 1e-12
    assert rep.R_c <= 1e-12
    assert rep.drift <= 1e-12


def test_quasi_isometry_live_short(live):
    seg = levelset_leaf(live, np.array([0.3, 0.3, 0.3]), 20.0, 1e-2)
    rep = quasi_isometry_scan(seg, live.splitting.basis[:, 1], pair_count=5000)
    assert 1.0 <= rep.Q < 1.2
    assert rep.R_c < 0.5
    assert rep.angle_trend_decreasing


def test_holonomy_linear_ratios_are_one():
    rep = holonomy_jacobian(families.linear(), np.random.default_rng(0).random((4, 3)), n_boot=50)
    assert all(np.abs(r - 1).max() <= 1e-8 for r in rep.ratios)
    assert rep.verdict == "AC-band"


def test_holonomy_control_is_ac_band(control):
    rep = holonomy_jacobian(control, np.random.default_rng(3).random((6, 3)), n_boot=200)
    assert rep.verdict == "AC-band"
    assert np.all(rep.outside_mass == 0)


def test_segment_csv(tmp_path, live):
    seg = levelset_leaf(live, np.array([0.1, 0.2, 0.3]), 0.05, 1e-2)
    path = tmp_path / "leaf.csv"
    write_segment_csv(path, seg)
    rows = list(csv.reader(open(path)))
    assert rows[0] == ["s", "x0", "x1", "x2"]
    assert len(rows) == len(seg.points) + 1
    np.testing.assert_array_equal(np.array(rows[1:], float)[:, 1:], seg.points)
