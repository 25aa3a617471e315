import math

import numpy as np
import pytest

from endolab import families
from endolab.lattice import IntMatrix
from endolab.maps import (
    EndomorphismModel,
    ShearChain,
    ShearMove,
    TrigPoly,
    reduce,
    torus_distance,
)


def single_shear(eps):
    move = ShearMove("su-eigvec", TrigPoly.sine([0, 0, 1]), eps)
    return EndomorphismModel(families.BLOCK, ShearChain((move,)), name="single")


ALL_MODELS = [
    families.linear(),
    families.cross_shear(0.5, 0.0),
    families.cross_shear(0.5, 0.5),
    families.manufactured_conjugacy(0.005),
    families.generic_displacement(0.1),
]


def test_linear_fixes_origin_and_cat_example():
    cat = families.linear(families.CAT)
    np.testing.assert_array_equal(cat.eval(np.zeros(2)), [0.0, 0.0])
    np.testing.assert_allclose(cat.eval([0.5, 0.0]), [0.5, 0.5], atol=1e-15)
    assert np.all(families.linear().eval(np.zeros(3)) == 0)


def test_zero_amplitude_shear_equals_linear(rng):
    X = rng.random((20, 3))
    lin = families.linear()
    for m in (families.cross_shear(0.0, 0.0), single_shear(0.0)):
        np.testing.assert_array_equal(m.eval(X), lin.eval(X))
        np.testing.assert_array_equal(m.differential(X), np.broadcast_to(lin.A, (20, 3, 3)))
        assert m.c1_distance_estimate() == 0.0
        np.testing.assert_array_equal(m.displacement(X), 0.0)


def test_shear_determinant_is_constant(rng):
    X = rng.random((1000, 3))
    for m in (single_shear(0.4), families.cross_shear(0.5, 0.5)):
        det = np.linalg.det(m.differential(X))
        assert np.abs(det - 4.0).max() < 1e-12
        assert m.conservative


def test_shear_differential_closed_form(rng):
    m = single_shear(0.3)
    v = m.shear_directions[0]
    mod = TrigPoly.sine([0, 0, 1])
    for x in rng.random((10, 3)):
        dphi = np.eye(3) + 0.3 * np.outer(v, mod.grad(x))
        np.testing.assert_allclose(m.differential(x), m.A @ dphi, atol=1e-14)


def test_differential_matches_finite_differences(rng):
    h = 1e-6
    for m in ALL_MODELS:
        x = rng.random(3)
        fd = np.stack([(m.lift(x + h * e) - m.lift(x - h * e)) / (2 * h) for e in np.eye(3)], axis=1)
        np.testing.assert_allclose(m.differential(x), fd, atol=1e-7)


def test_manufactured_conjugacy_identity(rng, manufactured):
    X = rng.random((200, 3))
    lhs = manufactured.eval(manufactured.conjugacy_H(X))
    rhs = manufactured.conjugacy_H(reduce(X @ manufactured.A.T))
    assert torus_distance(lhs, rhs).max() < 1e-10
    back = manufactured.conjugacy_H(manufactured.conjugacy_H(X), inverse=True)
    assert torus_distance(back, X).max() < 1e-12


def test_manufactured_fixed_point_moduli(manufactured):
    p = manufactured.conjugacy_H(np.zeros(3))
    assert torus_distance(manufactured.eval(p), p) < 1e-12
    moduli = np.sort(np.abs(np.linalg.eigvals(manufactured.differential(p))))
    np.testing.assert_allclose(moduli, manufactured.splitting.moduli, atol=1e-10)


def test_torus_well_definedness(rng):
    for m in ALL_MODELS:
        X = rng.random((100, 3))
        j = rng.integers(3, size=100)
        shifted = X + np.eye(3)[j]
        assert torus_distance(m.eval(X), m.eval(shifted)).max() < 1e-12
        np.testing.assert_allclose(m.displacement(X), m.displacement(shifted), atol=1e-12)


def test_lift_equivariance(rng):
    m = families.cross_shear(0.5, 0.5)
    X = rng.random((50, 3))
    n = rng.integers(-3, 4, size=(50, 3))
    np.testing.assert_allclose(m.lift(X + n), m.lift(X) + n @ m.A.T, atol=1e-12)


def test_cat_preimages_of_origin():
    cat = families.linear(families.CAT)
    pre = cat.preimages(np.zeros(2))
    assert len(pre) == 2
    got = sorted(map(tuple, np.round(pre, 12) % 1))
    assert got == [(0.0, 0.0), (0.5, 0.5)]


def test_preimages_round_trip(rng):
    for m in ALL_MODELS:
        X = rng.random((30, 3))
        Y = m.eval(X)
        pre = m.preimages(Y)
        assert pre.shape == (30, 4, 3)
        back = m.eval(pre.reshape(-1, 3)).reshape(30, 4, 3)
        assert torus_distance(back, Y[:, None, :]).max() < 1e-10
        assert torus_distance(pre, X[:, None, :]).min(axis=1).max() < 1e-10
        for i in range(4):
            for j in range(i + 1, 4):
                assert torus_distance(pre[:, i], pre[:, j]).min() > 1e-3


def test_random_backward_orbit(rng):
    m = families.cross_shear(0.5, 0.5)
    x0 = rng.random(3)
    chain = m.random_backward_orbit(x0, 12, 7)
    np.testing.assert_array_equal(chain, m.random_backward_orbit(x0, 12, 7))
    y = chain[-1]
    for _ in range(12):
        y = m.eval(y)
    assert torus_distance(y, x0) < 1e-9


def test_backward_orbit_branch_frequencies():
    cat = families.linear(families.CAT)
    hits = [tuple(np.round(cat.random_backward_orbit(np.zeros(2), 1, s)[0], 9) % 1) for s in range(400)]
    share = hits.count((0.0, 0.0)) / len(hits)
    assert abs(share - 0.5) < 0.1
    assert set(hits) == {(0.0, 0.0), (0.5, 0.5)}


def test_single_shear_c1_bound():
    eps = 0.02
    m = single_shear(eps)
    mod = TrigPoly.sine([0, 0, 1])
    expected = eps * np.linalg.norm(m.A, 2) * float(np.sum(2 * math.pi * np.abs(mod.freqs).sum(1) * np.abs(mod.sin)))
    assert m.c1_distance_estimate() == pytest.approx(expected, rel=1e-12)
    assert m.c1_distance_sampled() <= m.c1_distance_estimate() + 1e-12
    assert m.within_budget and m.certified_anosov()


def test_cone_certificate_margins():
    assert families.cross_shear(0.5, 0.5).cone_certificate()[0]
    assert families.cross_shear(0.6, 0.6).cone_certificate()[0]
    assert not families.cross_shear(0.8, 0.8).cone_certificate()[0]
    assert not families.cross_shear(0.5, 0.5).within_budget


def test_modulator_must_not_depend_on_moved_coordinates():
    move = ShearMove("axis:2", TrigPoly.sine([0, 0, 1]), 0.1)
    with pytest.raises(ValueError):
        EndomorphismModel(families.BLOCK, ShearChain((move,)))


def test_manufactured_bump_must_be_invertible():
    with pytest.raises(ValueError):
        families.manufactured_conjugacy(2.0)


def test_serialisation_round_trip(rng):
    X = rng.random((20, 3))
    for m in ALL_MODELS:
        twin = EndomorphismModel.from_dict(m.to_dict())
        assert twin.to_dict() == m.to_dict()
        np.testing.assert_array_equal(twin.eval(X), m.eval(X))


def test_scaled_model():
    m = families.cross_shear(0.5, 0.5)
    assert m.scaled(0.0).c1_distance_estimate() == 0.0
    assert m.scaled(2.0).to_dict()["perturbation"]["moves"][0]["amplitude"] == 1.0


def test_integer_matrix_required():
    with pytest.raises(ValueError):
        EndomorphismModel([[1.5, 0], [0, 2]])
    assert EndomorphismModel(IntMatrix.from_rows([[2, 1], [1, 1]])).degree == 1
