import math

import numpy as np
import pytest

from endolab import families
from endolab.errors import DegeneratePeriod
from endolab.lattice import count_linear_periodic
from endolab.maps import torus_distance
from endolab.periodic import (
    PeriodicOrbitRecord,
    continue_periodic,
    linear_periodic_points,
    periodic_orbits,
    periodic_specialness_certificate,
    volume_criterion,
)


def test_linear_periodic_points_cat():
    pts = linear_periodic_points(families.CAT, 1)
    np.testing.assert_array_equal(pts, [[0.0, 0.0]])
    pts2 = linear_periodic_points(families.CAT, 2)
    assert len(pts2) == 7
    A2 = np.array([[10, 4], [4, 2]])
    assert torus_distance(pts2 @ A2.T, pts2).max() < 1e-12


def test_origin_always_present():
    for A in (families.CAT, families.BLOCK):
        for n in (1, 2, 3):
            assert any(np.all(p == 0) for p in linear_periodic_points(A, n))


def test_degenerate_period():
    with pytest.raises(DegeneratePeriod):
        linear_periodic_points([[2, 0], [0, 1]], 1)


def test_zero_amplitude_returns_seed():
    model = families.cross_shear(0.0, 0.0)
    for seed in linear_periodic_points(families.BLOCK, 2)[:5]:
        rec = continue_periodic(model, 2, seed)
        assert torus_distance(rec.point, seed) <= 1e-12
        assert rec.residual <= 1e-12


def test_manufactured_points_are_transported(manufactured):
    seeds = linear_periodic_points(families.BLOCK, 2)
    for seed in seeds[::3]:
        rec = continue_periodic(manufactured, 2, seed)
        assert torus_distance(rec.point, manufactured.conjugacy_H(seed)) < 1e-9


@pytest.mark.parametrize("n", [1, 2, 3, 4])
def test_cardinality_preserved_under_continuation(n):
    model = families.cross_shear(0.6, 0.6)
    search = periodic_orbits(model, n)
    assert search.count == count_linear_periodic(families.BLOCK, n)
    assert not search.duplicates
    pts = np.array([r.point for r in search.records])
    d = torus_distance(pts[:, None, :], pts[None, :, :]) + np.eye(len(pts))
    assert d.min() > 1e-8


def test_record_invariants(live):
    for rec in periodic_orbits(live, 3).records:
        assert rec.residual < 1e-10
        assert np.all(np.diff(rec.moduli) >= 0)
        assert abs(np.prod(rec.moduli) - rec.jacobian) <= 1e-10 * rec.jacobian
        # conservative model: total log modulus is n log(degree)
        assert abs(rec.log_moduli.sum() - 3 * math.log(4)) < 1e-9


def test_volume_criterion_degree_power_at_period_two():
    rec = PeriodicOrbitRecord(2, np.zeros(3), np.zeros(3), 16.0, np.array([0.5, 4.0, 8.0]), 0.0)
    assert volume_criterion([rec], 4)[0]
    bad = PeriodicOrbitRecord(2, np.zeros(3), np.zeros(3), 16.5, np.array([0.5, 4.0, 8.25]), 0.0)
    assert not volume_criterion([bad], 4)[0]


def test_volume_criterion_linear_exact():
    search = periodic_orbits(families.linear(), 2)
    assert all(abs(r.jacobian - 16.0) <= 1e-12 * 16 for r in search.records)
    assert volume_criterion(search.records, 4)[0]


def test_volume_criterion_fails_for_generic_displacement():
    search = periodic_orbits(families.generic_displacement(0.02), 2)
    ok, verdicts = volume_criterion(search.records, 4, rtol=1e-6)
    assert not ok and not all(verdicts)


def test_specialness_certificate():
    for model in (families.linear(), families.cross_shear(0.6, 0.6)):
        for n in (1, 2, 3):
            ok, _, gap = periodic_specialness_certificate(periodic_orbits(model, n).records, model.splitting)
            assert ok and gap < 1e-8
    generic = families.generic_displacement(0.02)
    ok, _, gap = periodic_specialness_certificate(periodic_orbits(generic, 2).records, generic.splitting)
    assert not ok and gap > 1e-4


def test_period_cap():
    with pytest.raises(ValueError):
        periodic_orbits(families.linear(), 7)
