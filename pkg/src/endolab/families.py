"""Canonical models used by the experiments and tests."""

from __future__ import annotations

from .lattice import IntMatrix, search_irreducible_model
from .maps import (
    EndomorphismModel,
    GenericDisplacement,
    ManufacturedConjugacy,
    ShearChain,
    ShearMove,
    TrigPoly,
)

CAT = IntMatrix.from_rows([[3, 1], [1, 1]])
BLOCK = IntMatrix.block_diag(CAT, IntMatrix.from_rows([[2]]))


def linear(A=BLOCK):
    return EndomorphismModel(A, name="linear")


def cross_shear(eps_a, eps_b, A=BLOCK):
    """Move (a) along the strong-unstable eigenvector, modulated by x3; move (b)
    along e3, modulated by x1. eps_b = 0 leaves a triangular unstable cocycle."""
    moves = (
        ShearMove("su-eigvec", TrigPoly.sine([0, 0, 1]), eps_a),
        ShearMove("axis:2", TrigPoly.sine([1, 0, 0]), eps_b),
    )
    return EndomorphismModel(A, ShearChain(moves), name=f"cross_shear({eps_a:g},{eps_b:g})")


def manufactured_conjugacy(eps, A=BLOCK):
    """f = H A H^-1 with H = Id + eps b, b built from unit-slope modes."""
    d = A.dim
    if d == 2:
        bump = (TrigPoly.sine([0, 1]), TrigPoly.cosine([1, 1]))
    else:
        bump = (
            TrigPoly.sine([0, 0, 1]) + TrigPoly.cosine([0, 1, 0], 0.5),
            TrigPoly.sine([1, 0, 0]),
            TrigPoly.cosine([1, 1, 0]),
        )
    return EndomorphismModel(A, ManufacturedConjugacy(bump, eps), name=f"manufactured({eps:g})")


def generic_displacement(eps, A=BLOCK):
    """phi = Id + eps eta with eta pushing along the stable eigenvector, so the
    stable part of the displacement varies from preimage to preimage."""
    es = EndomorphismModel(A).splitting.basis[:, 0]
    d = A.dim
    comps = []
    for i in range(d):
        p = TrigPoly.sine([1] + [0] * (d - 1), es[i])
        if i == d - 1:
            p = p + TrigPoly.cosine([0, 1] + [0] * (d - 2), 0.5)
        comps.append(p)
    return EndomorphismModel(A, GenericDisplacement(tuple(comps), eps), name=f"generic({eps:g})")


def irreducible(coeff_bound=2):
    """Smallest-coefficient irreducible 3x3 companion matrix found by the search."""
    return EndomorphismModel(search_irreducible_model(coeff_bound), name="irreducible")
