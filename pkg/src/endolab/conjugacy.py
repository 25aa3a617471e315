"""Numerical solution of h o f = A o h with h = Id + u homotopic to the identity.

With g = F - A (a periodic map) the equation reads u(f(x)) = A u(x) - g(x).
In the adapted basis of A it splits into

* an unstable part solved forward: u^u(x) = L_u^-1 [u^u(f(x)) + g^u(x)],
  iterated on a periodic grid (a contraction with rate ||L_u^-1||), or summed
  pointwise as the series sum_j L_u^-(j+1) g^u(f^j x);
* a stable part that needs the past: u^s(x) = -sum_{j>=1} L_s^(j-1) g^s(x_-j)
  along a backward chain. It is a function of x only when the sums do not
  depend on the chain, which is what the specialness diagnostic measures.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field

import numpy as np
from scipy import stats

from . import _kernels as K
from .errors import InsufficientScales, NewtonDivergence, NoConvergence
from .maps import NEWTON_MAXIT, NEWTON_TOL, reduce, torus_distance

MAX_SWEEPS = 200
SERIES_TOL = 1e-15


def _blocks(model):
    sp = model.splitting
    if np.iscomplexobj(sp.basis) or np.iscomplexobj(sp.eigenvalues):
        raise ValueError("conjugacy solver needs a real eigenbasis")
    ks = sp.stable_dim
    B = np.asarray(sp.basis, float)
    Binv = np.asarray(sp.adapted_inverse, float)
    L = Binv @ model.A @ B
    return dict(
        ks=ks,
        B=B,
        Bs=np.ascontiguousarray(B[:, :ks]),
        Bu=np.ascontiguousarray(B[:, ks:]),
        Ps=np.ascontiguousarray(Binv[:ks]),
        Pu=np.ascontiguousarray(Binv[ks:]),
        Ls=np.ascontiguousarray(L[:ks, :ks]),
        Lu=np.ascontiguousarray(L[ks:, ks:]),
    )


def displacement(model, x):
    """g = F - A on the torus, evaluated in closed form from the perturbation."""
    return model.displacement(x)


def _series_terms(Lu):
    rate = np.linalg.norm(np.linalg.inv(Lu), 2)
    return int(math.ceil(math.log(SERIES_TOL) / math.log(rate))) + 1


def _stable_length(Ls, tol=1e-12):
    if Ls.size == 0:
        return 0
    rate = np.linalg.norm(Ls, 2)
    return int(math.ceil(math.log(tol) / math.log(rate))) + 1


# --------------------------------------------------------------------------
# unstable component


@dataclass
class UnstableSolution:
    N: int
    values: np.ndarray  # (N^d, ku), node index in C order
    updates: list
    sweeps: int


def solve_unstable_component(model, N, tol=1e-12, max_sweeps=MAX_SWEEPS):
    """Full-Jacobi iteration for u^u on the N^d periodic grid, from u^u = 0."""
    bl = _blocks(model)
    d = model.dim
    total = N ** d
    ku = bl["Pu"].shape[0]
    targets = np.empty((total, d))
    gu = np.empty((total, ku))
    K.grid_setup(model.P, N, d, bl["Pu"], targets, gu)
    Linv = np.ascontiguousarray(np.linalg.inv(bl["Lu"]))
    old = np.zeros((total, ku))
    new = np.empty_like(old)
    updates = []
    for sweep in range(1, max_sweeps + 1):
        upd = K.grid_sweep(old, new, targets, gu, Linv, N, d)
        updates.append(float(upd))
        old, new = new, old
        if upd < tol:
            return UnstableSolution(N, old, updates, sweep)
    raise NoConvergence(f"unstable grid iteration after {max_sweeps} sweeps", last_update=updates[-1])


def unstable_series(model, X, nterms=None):
    """u^u at arbitrary points by the pointwise forward series (grid-free)."""
    bl = _blocks(model)
    Linv = np.ascontiguousarray(np.linalg.inv(bl["Lu"]))
    nterms = nterms or _series_terms(bl["Lu"])
    X = np.ascontiguousarray(np.asarray(X, float).reshape(-1, model.dim))
    return K.forward_series(model.P, X, bl["Pu"], Linv, nterms)


# --------------------------------------------------------------------------
# stable component and the specialness diagnostic


@dataclass
class SpecialnessDiagnostic:
    points: np.ndarray
    values: np.ndarray  # (n_points, n_chains, ks)
    variance: np.ndarray  # per point, summed over stable components
    chain_length: int
    n_chains: int

    @property
    def max_variance(self):
        return float(self.variance.max()) if self.variance.size else 0.0

    @property
    def mean(self):
        return self.values.mean(axis=1)


def stable_backward_sum(model, X, chain_len=None, n_chains=8, rng=None):
    """Truncated stable sums along ``n_chains`` random backward chains per point."""
    bl = _blocks(model)
    X = np.ascontiguousarray(reduce(np.asarray(X, float)).reshape(-1, model.dim))
    L = chain_len or _stable_length(bl["Ls"])
    rng = np.random.default_rng(rng)
    branches = rng.integers(model.degree, size=(len(X), n_chains, L))
    vals, worst = K.stable_chain_sums(
        model.P, X, model.offsets, np.ascontiguousarray(branches), bl["Ps"], bl["Ls"], NEWTON_TOL, NEWTON_MAXIT
    )
    if worst > 1e-10:
        raise NewtonDivergence("preimage Newton failed in stable sums", residual=float(worst))
    var = vals.var(axis=1).sum(axis=-1) if n_chains > 1 else np.zeros(len(X))
    return SpecialnessDiagnostic(X, vals, var, L, n_chains)


# --------------------------------------------------------------------------
# the conjugacy field


@dataclass
class ConjugacyField:
    """h = Id + u with u^u from a grid (or the series) and u^s from chain means.

    ``stable_chains`` chains are averaged per point for the stable part; for
    the certified-special families they all agree so one chain is enough.
    """

    model: object
    N: int
    uu: np.ndarray
    apriori_bound: float
    residual_sup: float = float("nan")
    stable_chains: int = 1
    stable_seed: int = 0
    solve_updates: list = field(default_factory=list)

    def __post_init__(self):
        self._bl = _blocks(self.model)

    @property
    def dim(self):
        return self.model.dim

    @property
    def basis(self):
        return self._bl["B"]

    @classmethod
    def series_only(cls, model, stable_chains=1, stable_seed=0):
        """A field without a grid; evaluate it with method="series"."""
        ku = model.dim - model.splitting.stable_dim
        return cls(model, 0, np.zeros((0, ku)), apriori_bound(model), stable_chains=stable_chains,
                   stable_seed=stable_seed)

    def unstable(self, X, method="grid"):
        X = np.ascontiguousarray(np.asarray(X, float).reshape(-1, self.dim))
        if method == "series":
            return unstable_series(self.model, X)
        if self.N == 0:
            raise ValueError("field has no grid; use method='series'")
        return K.interp_batch(self.uu, self.N, self.dim, X)

    def stable(self, X):
        if self._bl["ks"] == 0:
            return np.zeros((len(np.atleast_2d(X)), 0))
        diag = stable_backward_sum(self.model, X, n_chains=self.stable_chains, rng=self.stable_seed)
        return diag.mean

    def displacement(self, X, method="grid"):
        X = np.asarray(X, float).reshape(-1, self.dim)
        return self.unstable(X, method) @ self._bl["Bu"].T + self.stable(X) @ self._bl["Bs"].T

    def __call__(self, X, method="grid", reduce_mod=True):
        X = np.asarray(X, float)
        flat = X.reshape(-1, self.dim)
        out = flat + self.displacement(flat, method)
        if reduce_mod:
            out = reduce(out)
        return out.reshape(X.shape)

    # -- serialisation --------------------------------------------------

    def save(self, path, extra=None):
        """Flat little-endian float64 array plus a JSON text header file."""
        header = dict(extra or {})
        header.update({
            "dims": self.dim,
            "resolution": self.N,
            "components": int(self.uu.shape[1]),
            "basis": self.basis.tolist(),
            "residual": self.residual_sup,
            "apriori_bound": self.apriori_bound,
            "model": self.model.to_dict(),
        })
        with open(str(path) + ".json", "w") as fh:
            json.dump(header, fh, indent=2, sort_keys=True)
        self.uu.astype("<f8").tofile(str(path) + ".bin")

    @classmethod
    def load(cls, path, model):
        with open(str(path) + ".json") as fh:
            header = json.load(fh)
        uu = np.fromfile(str(path) + ".bin", dtype="<f8").reshape(-1, header["components"])
        return cls(model, header["resolution"], uu, header["apriori_bound"], header["residual"])


def apriori_bound(model, per_axis=32):
    """2 ||f - A||_sup / (spectral gap), with the sup sampled on a grid."""
    grid = np.stack(np.meshgrid(*[np.arange(per_axis) / per_axis] * model.dim, indexing="ij"), -1)
    g = model.displacement(grid.reshape(-1, model.dim))
    return 2 * float(np.linalg.norm(g, axis=1).max()) / model.splitting.spectral_gap


def solve_conjugacy(model, N, tol=1e-12, n_test=2000, seed=0):
    sol = solve_unstable_component(model, N, tol)
    fld = ConjugacyField(model, N, sol.values, apriori_bound(model), solve_updates=sol.updates)
    fld.residual_sup = conjugacy_residual(fld, n_test, seed)
    return fld


def conjugacy_residual(field_, n_test=2000, seed=0, method="grid"):
    """sup over random x of the quotient distance between h(f(x)) and A h(x)."""
    model = field_.model
    X = np.random.default_rng(seed).random((n_test, model.dim))
    lhs = field_(model.eval(X), method)
    rhs = field_(X, method, reduce_mod=False) @ model.A.T
    return float(torus_distance(lhs, rhs).max())


def error_vs_reference(field_, reference, n_test=2000, seed=1):
    """sup |h(x) - reference(x)| (quotient metric) over random x."""
    X = np.random.default_rng(seed).random((n_test, field_.dim))
    return float(torus_distance(field_(X), reference(X)).max())


# --------------------------------------------------------------------------
# regularity


@dataclass
class HolderEstimate:
    alpha: float
    ci: tuple
    scales: np.ndarray
    mean_log_increment: np.ndarray
    n_pairs: int
    dropped_scales: int = 0

    def contains(self, value, slack=1e-9):
        """CI membership with a rounding allowance for degenerate intervals."""
        return self.ci[0] - slack <= value <= self.ci[1] + slack


def holder_exponent_wu(field_, segments, ks=range(4, 13), n_boot=2000, seed=0, curvature_bound=None, method="series"):
    """Regress log |h(x) - h(y)| on log d_W(x, y) for leaf pairs at scales 2^-k.

    ``segments`` are LeafSegment objects sampled at a uniform parameter step.
    At scale delta the pairs are (p_i, p_{i + lag}) with lag = delta / step;
    the leaf distance is the polyline arclength between them. Per segment and
    scale the mean logs are taken, the slope is fitted to the across-segment
    means, and the CI is a percentile bootstrap over segments.
    """
    ks = list(ks)
    xs, ys = [], []
    for seg in segments:
        h_pts = field_(seg.points, method, reduce_mod=False)
        arc = seg.arclength
        rx, ry = [], []
        for k in ks:
            lag = int(round(2.0 ** -k / seg.step))
            if lag < 1:
                raise InsufficientScales(f"segment step {seg.step:g} does not resolve delta=2^-{k}")
            if lag >= len(seg.points):
                raise InsufficientScales(f"segment too short for delta=2^-{k}")
            diff = h_pts[lag:] - h_pts[:-lag]
            diff -= np.round(diff)
            rx.append(np.log(arc[lag:] - arc[:-lag]).mean())
            ry.append(np.log(np.linalg.norm(diff, axis=1)).mean())
        xs.append(rx)
        ys.append(ry)
    xs, ys = np.array(xs), np.array(ys)
    dropped = 0
    if curvature_bound is not None and max(s.curvature for s in segments) > curvature_bound:
        xs, ys, dropped = xs[:, 2:], ys[:, 2:], 2

    def slope(idx):
        return float(np.polyfit(xs[idx].mean(0), ys[idx].mean(0), 1)[0])

    n = len(xs)
    alpha = slope(np.arange(n))
    rng = np.random.default_rng(seed)
    boots = np.array([slope(rng.integers(n, size=n)) for _ in range(n_boot)])
    ci = (float(np.quantile(boots, 0.025)), float(np.quantile(boots, 0.975)))
    return HolderEstimate(alpha, ci, np.exp(xs.mean(0)), ys.mean(0), n, dropped)


@dataclass
class DensityReport:
    counts: np.ndarray
    statistic: float
    dof: int
    band: tuple
    n_samples: int

    @property
    def uniform(self):
        return self.band[0] <= self.statistic <= self.band[1]


def pushforward_density(field_, bins=8, n_samples=200_000, seed=0, level=0.99):
    """Histogram of h(X), X uniform, with a chi-square uniformity statistic.

    The band is the two-sided ``level`` interval of the chi-square law with
    bins^d - 1 degrees of freedom.
    """
    X = np.random.default_rng(seed).random((n_samples, field_.dim))
    Y = field_(X)
    counts, _ = np.histogramdd(Y, bins=[bins] * field_.dim, range=[(0, 1)] * field_.dim)
    expected = n_samples / counts.size
    stat = float(((counts - expected) ** 2 / expected).sum())
    dof = counts.size - 1
    tail = (1 - level) / 2
    band = (float(stats.chi2.ppf(tail, dof)), float(stats.chi2.ppf(1 - tail, dof)))
    return DensityReport(counts, stat, dof, band, n_samples)


def write_regression_csv(path, est):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["delta", "mean_log_increment"])
        for d_, v in zip(est.scales, est.mean_log_increment):
            w.writerow([f"{d_:.17g}", f"{v:.17g}"])
        w.writerow(["alpha", f"{est.alpha:.6g}"])
        w.writerow(["ci_low", f"{est.ci[0]:.6g}"])
        w.writerow(["ci_high", f"{est.ci[1]:.6g}"])
