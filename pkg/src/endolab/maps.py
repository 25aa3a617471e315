"""Smooth endomorphisms f of the d-torus built on an integer linearization A.

Three perturbation families are supported, all with closed-form
trigonometric-polynomial ingredients so that everything is exactly
Z^d-periodic:

* shear chains f = A o phi, phi a composition of volume-preserving shears
  x -> x + eps g(x) v with g constant along v;
* manufactured conjugacies f = H o A o H^-1 with H = Id + eps b;
* generic displacements f = A o (Id + eps eta), not volume preserving.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from . import _kernels as K
from .errors import NewtonDivergence
from .lattice import IntMatrix, preimage_offsets, spectral_splitting

NEWTON_TOL = 1e-12
NEWTON_MAXIT = 50


def generic_frame(d):
    """Fixed orthonormal frame in general position (deterministic)."""
    rng = np.random.default_rng(20240601 + d)
    q, r = np.linalg.qr(rng.standard_normal((d, d)))
    return np.ascontiguousarray(q * np.sign(np.diag(r)))


def torus_distance(x, y):
    """Quotient metric on the torus (min over integer translates)."""
    diff = np.asarray(x, float) - np.asarray(y, float)
    diff -= np.round(diff)
    return np.linalg.norm(diff, axis=-1)


def reduce(x):
    x = np.asarray(x, float)
    return x - np.floor(x)


# --------------------------------------------------------------------------
# trigonometric polynomials


@dataclass(frozen=True)
class TrigPoly:
    """g(x) = sum_k a_k cos(2 pi k.x) + b_k sin(2 pi k.x) over integer k."""

    freqs: np.ndarray
    cos: np.ndarray
    sin: np.ndarray

    def __post_init__(self):
        f = np.atleast_2d(np.asarray(self.freqs, dtype=float))
        if not np.all(f == np.round(f)):
            raise ValueError("frequencies must be integer vectors")
        object.__setattr__(self, "freqs", np.ascontiguousarray(f))
        object.__setattr__(self, "cos", np.ascontiguousarray(np.asarray(self.cos, float).reshape(-1)))
        object.__setattr__(self, "sin", np.ascontiguousarray(np.asarray(self.sin, float).reshape(-1)))
        if not (len(self.cos) == len(self.sin) == len(f)):
            raise ValueError("coefficient tables must match the frequency table")

    @classmethod
    def from_terms(cls, terms, dim):
        """Build from {freq tuple: (cos coeff, sin coeff)}."""
        if not terms:
            return cls(np.zeros((0, dim)), [], [])
        keys = sorted(terms)
        return cls(np.array(keys, float), [terms[k][0] for k in keys], [terms[k][1] for k in keys])

    @classmethod
    def sine(cls, freq, amplitude=1.0):
        """amplitude * sin(2 pi k.x) / (2 pi |k|): unit-slope mode."""
        k = np.asarray(freq, float)
        return cls(k[None, :], [0.0], [amplitude / (2 * math.pi * np.linalg.norm(k))])

    @classmethod
    def cosine(cls, freq, amplitude=1.0):
        k = np.asarray(freq, float)
        return cls(k[None, :], [amplitude / (2 * math.pi * np.linalg.norm(k))], [0.0])

    def __add__(self, other):
        return TrigPoly(np.vstack([self.freqs, other.freqs]), np.r_[self.cos, other.cos], np.r_[self.sin, other.sin])

    @property
    def dim(self):
        return self.freqs.shape[1]

    def __call__(self, x):
        x = np.asarray(x, float)
        ph = 2 * np.pi * (x @ self.freqs.T)
        return np.cos(ph) @ self.cos + np.sin(ph) @ self.sin

    def grad(self, x):
        x = np.asarray(x, float)
        ph = 2 * np.pi * (x @ self.freqs.T)
        dv = 2 * np.pi * (np.cos(ph) * self.sin - np.sin(ph) * self.cos)
        return dv @ self.freqs

    def active_coords(self):
        return {j for j in range(self.dim) if np.any(self.freqs[:, j] != 0)}

    @property
    def amplitudes(self):
        return np.hypot(self.cos, self.sin)

    def sup_bound(self):
        return float(self.amplitudes.sum())

    def gradient_bound(self):
        """sum 2 pi |k| |c_k|, a bound on sup |grad g|."""
        return float((2 * np.pi * np.linalg.norm(self.freqs, axis=1) * self.amplitudes).sum())

    def hessian_bound(self):
        return float(((2 * np.pi * np.linalg.norm(self.freqs, axis=1)) ** 2 * self.amplitudes).sum())

    def to_dict(self):
        return {
            "terms": [
                {"freq": [int(v) for v in k], "cos": float(a), "sin": float(b)}
                for k, a, b in zip(self.freqs, self.cos, self.sin)
            ]
        }

    @classmethod
    def from_dict(cls, data, dim):
        terms = data.get("terms", [])
        if not terms:
            return cls(np.zeros((0, dim)), [], [])
        return cls(
            np.array([t["freq"] for t in terms], float),
            [t.get("cos", 0.0) for t in terms],
            [t.get("sin", 0.0) for t in terms],
        )


def _field_from_dict(data, dim):
    return tuple(TrigPoly.from_dict(c, dim) for c in data)


def _field_bounds(components):
    grads = np.array([c.gradient_bound() for c in components])
    return float(np.sqrt((grads ** 2).sum())), float(np.sqrt(sum(c.sup_bound() ** 2 for c in components)))


# --------------------------------------------------------------------------
# perturbation specs


@dataclass(frozen=True)
class ShearMove:
    """x -> x + amplitude * g(x) * v with g independent of the coordinates v moves.

    ``direction`` is a vector or a selector: "su-eigvec" (strongest unstable
    eigenvector of A) or "axis:k" (0-based coordinate axis k).
    """

    direction: object
    modulator: TrigPoly
    amplitude: float

    def resolve(self, splitting):
        d = splitting.dim
        sel = self.direction
        if isinstance(sel, str):
            if sel == "su-eigvec":
                v = splitting.basis[:, -1].copy()
            elif sel.startswith("axis:"):
                v = np.zeros(d)
                v[int(sel.split(":")[1])] = 1.0
            else:
                raise ValueError(f"unknown direction selector {sel!r}")
        else:
            v = np.asarray(sel, float)
        v = v / np.linalg.norm(v)
        moved = {j for j in range(d) if abs(v[j]) > 1e-14}
        clash = moved & self.modulator.active_coords()
        if clash:
            raise ValueError(f"modulator depends on coordinates {sorted(clash)} moved by the shear")
        return v

    def to_dict(self):
        direction = self.direction if isinstance(self.direction, str) else [float(v) for v in self.direction]
        return {"direction": direction, "amplitude": float(self.amplitude), "modulator": self.modulator.to_dict()}

    @classmethod
    def from_dict(cls, data, dim):
        direction = data["direction"]
        if not isinstance(direction, str):
            direction = tuple(float(v) for v in direction)
        return cls(direction, TrigPoly.from_dict(data["modulator"], dim), float(data["amplitude"]))


@dataclass(frozen=True)
class NoPerturbation:
    kind = "none"

    def to_dict(self):
        return {"kind": self.kind}


@dataclass(frozen=True)
class ShearChain:
    moves: tuple
    kind = "shear_chain"

    def to_dict(self):
        return {"kind": self.kind, "moves": [m.to_dict() for m in self.moves]}


@dataclass(frozen=True)
class ManufacturedConjugacy:
    """H = Id + amplitude * bump; the model is f = H o A o H^-1."""

    bump: tuple
    amplitude: float
    kind = "manufactured_conjugacy"

    def lipschitz_bound(self):
        return self.amplitude * _field_bounds(self.bump)[0]

    def sup_bound(self):
        return self.amplitude * _field_bounds(self.bump)[1]

    def hessian_bound(self):
        return self.amplitude * float(np.sqrt(sum(c.hessian_bound() ** 2 for c in self.bump)))

    def to_dict(self):
        return {"kind": self.kind, "amplitude": float(self.amplitude), "bump": [c.to_dict() for c in self.bump]}


@dataclass(frozen=True)
class GenericDisplacement:
    """phi = Id + amplitude * field; no volume preservation."""

    field: tuple
    amplitude: float
    kind = "generic_displacement"

    def to_dict(self):
        return {"kind": self.kind, "amplitude": float(self.amplitude), "field": [c.to_dict() for c in self.field]}


def perturbation_from_dict(data, dim):
    kind = data.get("kind", "none")
    if kind == "none":
        return NoPerturbation()
    if kind == "shear_chain":
        return ShearChain(tuple(ShearMove.from_dict(m, dim) for m in data["moves"]))
    if kind == "manufactured_conjugacy":
        return ManufacturedConjugacy(_field_from_dict(data["bump"], dim), float(data["amplitude"]))
    if kind == "generic_displacement":
        return GenericDisplacement(_field_from_dict(data["field"], dim), float(data["amplitude"]))
    raise ValueError(f"unknown perturbation kind {kind!r}")


def _pack_terms(polys, dim):
    starts = [0]
    freqs, cc, ss = [np.zeros((0, dim))], [np.zeros(0)], [np.zeros(0)]
    for p in polys:
        freqs.append(p.freqs)
        cc.append(p.cos)
        ss.append(p.sin)
        starts.append(starts[-1] + len(p.cos))
    return (
        np.asarray(starts, dtype=np.int64),
        np.ascontiguousarray(np.vstack(freqs)),
        np.ascontiguousarray(np.concatenate(cc)),
        np.ascontiguousarray(np.concatenate(ss)),
    )


# --------------------------------------------------------------------------
# the model


class EndomorphismModel:
    """f = (linear part, perturbation) on T^d, with a numba-packed twin."""

    def __init__(self, linear, perturbation=None, name=None):
        if not isinstance(linear, IntMatrix):
            linear = IntMatrix.from_rows(linear)
        self.linear = linear
        self.perturbation = perturbation if perturbation is not None else NoPerturbation()
        self.name = name or self.perturbation.kind
        self.splitting = spectral_splitting(linear, allow_complex=True)
        self.A = linear.array
        self.offsets = np.array(preimage_offsets(linear), dtype=float)
        self.c1_budget = self.splitting.spectral_gap / 4
        self._directions = None
        self.P = self._pack()

    @property
    def dim(self):
        return self.linear.dim

    @property
    def degree(self):
        return self.linear.degree

    def _pack(self):
        d = self.dim
        A = np.ascontiguousarray(self.A)
        Ainv = np.ascontiguousarray(np.linalg.inv(A))
        pert = self.perturbation
        dirs = np.zeros((0, d))
        eps = np.zeros(1)
        if isinstance(pert, NoPerturbation):
            kind = K.LINEAR
            start, freqs, cc, ss = _pack_terms([], d)
        elif isinstance(pert, ShearChain):
            kind = K.SHEAR
            dirs = np.array([m.resolve(self.splitting) for m in pert.moves]).reshape(-1, d)
            self._directions = dirs
            eps = np.array([m.amplitude for m in pert.moves], float)
            start, freqs, cc, ss = _pack_terms([m.modulator for m in pert.moves], d)
        elif isinstance(pert, ManufacturedConjugacy):
            kind = K.CONJUGATE
            if len(pert.bump) != d:
                raise ValueError("bump needs one component per dimension")
            if pert.lipschitz_bound() >= 1:
                raise ValueError(f"bump Lipschitz bound {pert.lipschitz_bound():.3g} >= 1; H not invertible")
            eps = np.array([pert.amplitude])
            start, freqs, cc, ss = _pack_terms(pert.bump, d)
        elif isinstance(pert, GenericDisplacement):
            kind = K.GENERIC
            if len(pert.field) != d:
                raise ValueError("displacement needs one component per dimension")
            eps = np.array([pert.amplitude])
            start, freqs, cc, ss = _pack_terms(pert.field, d)
        else:
            raise TypeError(f"unsupported perturbation {pert!r}")
        return (kind, A, Ainv, np.ascontiguousarray(dirs), eps, start, freqs, cc, ss)

    @property
    def kind(self):
        return self.P[0]

    @property
    def shear_directions(self):
        return self._directions

    @property
    def conservative(self):
        """Jacobian constantly |det A| (linear models and shear chains)."""
        return self.kind in (K.LINEAR, K.SHEAR)

    # -- evaluation -------------------------------------------------------

    def eval(self, x):
        """f(x) on the torus."""
        x = np.asarray(x, float)
        return K.eval_batch(self.P, np.ascontiguousarray(x.reshape(-1, self.dim)), True).reshape(x.shape)

    __call__ = eval

    def lift(self, x):
        """The lift F on R^d (F(x + n) = F(x) + A n)."""
        x = np.asarray(x, float)
        return K.eval_batch(self.P, np.ascontiguousarray(x.reshape(-1, self.dim)), False).reshape(x.shape)

    def differential(self, x):
        x = np.asarray(x, float)
        J = K.jac_batch(self.P, np.ascontiguousarray(x.reshape(-1, self.dim)))
        return J.reshape(x.shape[:-1] + (self.dim, self.dim))

    def jacobian(self, x):
        return np.abs(np.linalg.det(self.differential(x)))

    def displacement(self, x):
        """g = F - A x, a Z^d-periodic map."""
        x = np.asarray(x, float)
        return self.lift(x) - x @ self.A.T

    def conjugacy_H(self, x, inverse=False):
        """H (or H^-1) for manufactured-conjugacy models."""
        if self.kind != K.CONJUGATE:
            raise TypeError("only manufactured-conjugacy models carry H")
        x = np.asarray(x, float)
        out = K.h_batch(self.P, np.ascontiguousarray(x.reshape(-1, self.dim)), inverse)
        return out.reshape(x.shape)

    # -- inverse branches -------------------------------------------------

    def preimages(self, y):
        """All degree-many preimages of y (rows follow preimage_offsets order)."""
        y = np.asarray(y, float)
        Y = np.ascontiguousarray(reduce(y).reshape(-1, self.dim))
        out, res = K.preimage_batch(self.P, Y, self.offsets, NEWTON_TOL, NEWTON_MAXIT)
        if res.max() > 1e-10:
            p, b = np.unravel_index(np.argmax(res), res.shape)
            raise NewtonDivergence("preimage Newton failed", seed=Y[p].tolist(), residual=float(res[p, b]))
        return out.reshape(y.shape[:-1] + (self.degree, self.dim))

    def backward_chains(self, x, branches):
        """Chains x_{-1}, ..., x_{-L} following the branch indices (shape (n, L))."""
        X = np.ascontiguousarray(reduce(np.asarray(x, float)).reshape(-1, self.dim))
        br = np.ascontiguousarray(np.asarray(branches, dtype=np.int64).reshape(len(X), -1))
        out, worst = K.chains_batch(self.P, X, self.offsets, br, NEWTON_TOL, NEWTON_MAXIT)
        if worst > 1e-10:
            raise NewtonDivergence("backward chain Newton failed", residual=float(worst))
        return out

    def random_backward_orbit(self, x0, n, rng):
        """x_{-1}, ..., x_{-n} with branches drawn uniformly from ``rng``."""
        rng = np.random.default_rng(rng)
        branches = rng.integers(self.degree, size=(1, n))
        return self.backward_chains(np.asarray(x0, float)[None, :], branches)[0]

    # -- C^1 size ---------------------------------------------------------

    def c1_distance_estimate(self):
        """Analytic bound on sup ||Df - A|| from the coefficient tables."""
        norm_a = float(np.linalg.norm(self.A, 2))
        pert = self.perturbation
        if isinstance(pert, NoPerturbation):
            return 0.0
        if isinstance(pert, ShearChain):
            prod = 1.0
            for m in pert.moves:
                prod *= 1.0 + abs(m.amplitude) * m.modulator.gradient_bound()
            return norm_a * (prod - 1.0)
        if isinstance(pert, GenericDisplacement):
            return norm_a * abs(pert.amplitude) * _field_bounds(pert.field)[0]
        L = pert.lipschitz_bound()
        return norm_a * (L + L * (1 + L) / (1 - L))

    def c1_distance_sampled(self, per_axis=64):
        """sup of ||Df(x) - A|| over a regular grid with per_axis**d nodes."""
        grid = np.stack(np.meshgrid(*[np.arange(per_axis) / per_axis] * self.dim, indexing="ij"), -1)
        J = self.differential(grid.reshape(-1, self.dim))
        return float(np.linalg.norm(J - self.A, ord=2, axis=(1, 2)).max())

    @property
    def within_budget(self):
        return self.c1_distance_estimate() < self.c1_budget

    def cone_certificate(self, per_axis=16, gammas=(1.0, 0.5, 0.25, 0.1)):
        """Sampled cone-field check in the adapted basis of A.

        Returns (passes, gamma, margin): the unstable cone ||v_s|| <= gamma ||v_u||
        is mapped into itself with expansion > 1, and the stable cone is
        mapped into itself by Df^-1 with expansion > 1, at every sample.
        """
        sp = self.splitting
        ks = sp.stable_dim
        if ks == 0 or ks == self.dim:
            return False, None, -np.inf
        B, Binv = sp.basis, sp.adapted_inverse
        grid = np.stack(np.meshgrid(*[(np.arange(per_axis) + 0.5) / per_axis] * self.dim, indexing="ij"), -1)
        J = self.differential(grid.reshape(-1, self.dim))
        M = Binv @ J @ B
        Minv = np.linalg.inv(M)
        s, u = slice(0, ks), slice(ks, self.dim)

        def norm(a):
            return np.linalg.norm(a, ord=2, axis=(1, 2))

        def smin(a):
            return np.linalg.svd(a, compute_uv=False)[:, -1]

        for g in gammas:
            exp_u = smin(M[:, u, u]) - norm(M[:, u, s]) * g
            inv_u = (norm(M[:, s, s]) * g + norm(M[:, s, u])) - g * exp_u
            exp_s = smin(Minv[:, s, s]) - norm(Minv[:, s, u]) * g
            inv_s = (norm(Minv[:, u, u]) * g + norm(Minv[:, u, s])) - g * exp_s
            margin = float(min((exp_u - 1).min(), (exp_s - 1).min(), -inv_u.max(), -inv_s.max()))
            if margin > 0:
                return True, g, margin
        return False, None, margin

    def certified_anosov(self):
        """Accepted as Anosov: analytic C^1 bound below budget, else the sampled cone check."""
        if not self.splitting.anosov:
            return False
        return self.within_budget or self.cone_certificate()[0]

    def scaled(self, t):
        """The same model with every perturbation amplitude multiplied by t."""
        pert = self.perturbation
        if isinstance(pert, ShearChain):
            pert = ShearChain(tuple(replace(m, amplitude=t * m.amplitude) for m in pert.moves))
        elif not isinstance(pert, NoPerturbation):
            pert = replace(pert, amplitude=t * pert.amplitude)
        return EndomorphismModel(self.linear, pert, self.name)

    # -- serialisation ----------------------------------------------------

    def to_dict(self):
        return {
            "name": self.name,
            "matrix": self.linear.to_list(),
            "perturbation": self.perturbation.to_dict(),
        }

    @classmethod
    def from_dict(cls, data):
        m = IntMatrix.from_rows(data["matrix"])
        return cls(m, perturbation_from_dict(data.get("perturbation", {"kind": "none"}), m.dim), data.get("name"))

    def __repr__(self):
        return f"EndomorphismModel({self.name!r}, A={self.linear.to_list()}, kind={self.perturbation.kind})"
