"""Invariant splittings, one-dimensional leaves, quasi-isometry scans and
holonomy ratios.

Frames need a stable bundle of dimension one. In d = 3 the weak direction
is the intersection of the unstable plane with the future-determined
E^s + E^wu, and the strong direction comes from pushing a generic frame
forward along a backward chain (so it may depend on the chain).

For special models whose unstable plane is the constant plane E^u_A, the
weak-unstable leaves inside a plaque are level sets of h^su = y^su + u^su(y)
with u^su from the exact forward series. These level-set leaves are used
for holonomy and regularity work, where integrating the (only Hölder)
direction field would swamp the signal with step error.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field

import numpy as np

from . import _kernels as K
from .conjugacy import unstable_series
from .errors import MatchingFailure, NoDomination, OrientationFlip, UnsupportedDimension
from .lattice import PHConstants
from .maps import generic_frame, reduce

N_FWD = 200
M_BACK = 200
LEAF_N_FWD = 64
LEAF_M_BACK = 64


def _angle(u, v):
    """Angle between the lines spanned by u and v, accurate near zero."""
    u = np.asarray(u, float) / np.linalg.norm(u)
    v = np.asarray(v, float) / np.linalg.norm(v)
    if np.dot(u, v) < 0:
        v = -v
    return 2.0 * math.asin(min(1.0, 0.5 * float(np.linalg.norm(u - v))))


# --------------------------------------------------------------------------
# pointwise splitting


@dataclass
class SplittingFrame:
    x: np.ndarray
    vectors: np.ndarray  # rows, weak to strong: (e_s, e_wu, e_su) or (e_s, e_u)
    labels: tuple
    chain_id: object
    residuals: dict = field(default_factory=dict)

    def __getitem__(self, label):
        return self.vectors[self.labels.index(label)]

    @property
    def min_angle(self):
        v = self.vectors
        return min(_angle(v[i], v[j]) for i in range(len(v)) for j in range(i + 1, len(v)))


def _labels(d):
    return ("s", "u") if d == 2 else ("s", "wu", "su")


def _raw_frame(model, x, n_fwd, chain):
    d = model.dim
    W = K.adjoint_flag(model.P, np.asarray(x, float), n_fwd, generic_frame(d))
    Q = K.forward_flag(model.P, np.ascontiguousarray(chain), generic_frame(d))
    if d == 2:
        vecs = np.array([W[:, 1], Q[:, 0]])
    else:
        wu = np.cross(Q[:, 2], W[:, 0])
        vecs = np.array([W[:, 2], wu / np.linalg.norm(wu), Q[:, 0]])
    ref = model.splitting.basis.T
    signs = np.sign((vecs * ref).sum(1))
    signs[signs == 0] = 1
    return vecs * signs[:, None]


def splitting_at(model, x, n_fwd=N_FWD, chain=None, branch=0, m_back=M_BACK, tol=1e-8):
    """Invariant frame at x; chain = x_-1, ..., x_-m (defaults to a constant-branch chain).

    The convergence residual compares against the frame built from half the
    forward steps and half the chain; NoDomination if it exceeds ``tol``.
    """
    if model.splitting.stable_dim != 1 or model.dim not in (2, 3):
        raise UnsupportedDimension("frames need d in {2, 3} with one stable direction")
    x = reduce(np.asarray(x, float))
    chain_id = "given" if chain is not None else f"branch:{branch}"
    if chain is None:
        chain = model.backward_chains(x[None, :], np.full((1, m_back), branch))[0]
    vecs = _raw_frame(model, x, n_fwd, chain)
    half = _raw_frame(model, x, max(n_fwd // 2, 1), chain[: max(len(chain) // 2, 1)])
    res = {lab: _angle(a, b) for lab, a, b in zip(_labels(model.dim), vecs, half)}
    if max(res.values()) > tol:
        raise NoDomination(f"frame not converged at {x.tolist()}: {res}")
    return SplittingFrame(x, vecs, _labels(model.dim), chain_id, res)


def invariance_residuals(model, x, n_steps, n_fwd=N_FWD, m_back=M_BACK, branch=0):
    """Max angle between Df(x_t) e(x_t) and e(x_{t+1}) along a forward orbit.

    The chain at x_{t+1} is (x_t, chain at x_t), so the strong direction is
    transported consistently.
    """
    x = reduce(np.asarray(x, float))
    chain = model.backward_chains(x[None, :], np.full((1, m_back), branch))[0]
    cur = splitting_at(model, x, n_fwd, chain)
    worst = {lab: 0.0 for lab in cur.labels}
    for _ in range(n_steps):
        J = model.differential(cur.x)
        nxt_x = model.eval(cur.x)
        chain = np.vstack([cur.x[None, :], chain[:-1]])
        nxt = splitting_at(model, nxt_x, n_fwd, chain)
        for lab in cur.labels:
            worst[lab] = max(worst[lab], _angle(J @ cur[lab], nxt[lab]))
        cur = nxt
    return worst


@dataclass
class ChainDispersion:
    """Spread over backward chains at one point: ``plane`` is the largest
    angle between unstable planes (via their normals), ``strong`` the largest
    angle between strong-unstable directions."""

    x: np.ndarray
    plane: float
    strong: float
    n_chains: int


def chain_dispersion(model, x, n_chains=10, rng=None, m_back=M_BACK, n_fwd=N_FWD):
    """Dependence of the unstable bundle on the backward chain at x (d = 3)."""
    rng = np.random.default_rng(rng)
    x = reduce(np.asarray(x, float))
    frames = []
    for _ in range(n_chains):
        chain = model.random_backward_orbit(x, m_back, rng)
        frames.append(splitting_at(model, x, n_fwd, chain).vectors)
    normals = [np.cross(v[1], v[2]) for v in frames]
    pairs = [(i, j) for i in range(n_chains) for j in range(i + 1, n_chains)]
    plane = max(_angle(normals[i], normals[j]) for i, j in pairs)
    strong = max(_angle(frames[i][-1], frames[j][-1]) for i, j in pairs)
    return ChainDispersion(x, plane, strong, n_chains)


def estimate_ph_constants(model, n_samples=64, rng=0, max_block=16):
    """Partial hyperbolicity rates from sampled frames (d = 3).

    For block length n = 1, 2, ... the n-step growth factors of e_s, e_wu and
    e_su are sampled at random points; the first n whose worst-case rates are
    ordered nu < gamma1 <= gamma2 < mu is returned with C = 1 for f^n.
    Returns (PHConstants, n).
    """
    if model.dim != 3:
        raise UnsupportedDimension("PH constants are estimated for d = 3")
    X = np.random.default_rng(rng).random((n_samples, 3))
    frames = [splitting_at(model, x, n_fwd=64, m_back=64, tol=1e-6) for x in X]
    last = None
    for n in range(1, max_block + 1):
        _, _, jac = K.iterate_with_jac(model.P, np.ascontiguousarray(X), n)
        rates = np.array([[np.linalg.norm(J @ v) ** (1.0 / n) for v in fr.vectors] for J, fr in zip(jac, frames)])
        nu, g1, g2, mu = rates[:, 0].max(), rates[:, 1].min(), rates[:, 1].max(), rates[:, 2].min()
        last = (nu, g1, g2, mu)
        if 0 < nu < g1 <= g2 < mu and nu < 1 < g1:
            return PHConstants(nu, g1, g2, mu), n
    raise NoDomination(f"no dominated block up to n={max_block}: rates {last}")


# --------------------------------------------------------------------------
# leaves


@dataclass
class LeafSegment:
    bundle: str
    base: np.ndarray
    points: np.ndarray  # polyline on the lift
    step: float  # nominal parameter spacing
    method: str
    curvature: float = 0.0
    worst_alignment: float = 1.0

    @property
    def arclength(self):
        seg = np.linalg.norm(np.diff(self.points, axis=0), axis=1)
        return np.r_[0.0, np.cumsum(seg)]

    @property
    def length(self):
        return float(self.arclength[-1])


def _curvature(points):
    if len(points) < 3:
        return 0.0
    d1 = np.diff(points, axis=0)
    ds = np.linalg.norm(d1, axis=1)
    tang = d1 / ds[:, None]
    dt = np.linalg.norm(np.diff(tang, axis=0), axis=1)
    return float((dt / (0.5 * (ds[1:] + ds[:-1]))).max())


def integrate_leaf(model, x, bundle, arclength, step=1e-3, branch=0, n_fwd=LEAF_N_FWD, m_back=LEAF_M_BACK,
                   min_cos=0.5, backwards=False):
    """RK4 integration of the unit direction field of ``bundle`` on the lift.

    Orientation is fixed at the base point (aligned with A's eigenvector,
    reversed if ``backwards``) and propagated by continuity; a jump in the
    field larger than ``min_cos`` allows raises OrientationFlip.
    """
    if step > 1e-3:
        raise ValueError("step must be <= 1e-3")
    labels = _labels(model.dim)
    which = labels.index(bundle)
    x = np.asarray(x, float)
    direction = model.splitting.basis[:, which] * (-1.0 if backwards else 1.0)
    nsteps = int(round(arclength / step))
    pts, worst, fail = K.integrate_leaf_rk4(
        model.P, x.copy(), np.ascontiguousarray(direction), which, nsteps, step, n_fwd, m_back,
        model.offsets, branch, generic_frame(model.dim), generic_frame(model.dim), min_cos,
    )
    if fail >= 0:
        raise OrientationFlip("direction field reversed or jumped", location=pts[-1].tolist())
    return LeafSegment(bundle, x, pts, step, "rk4", _curvature(pts), worst)


def constant_unstable_plane(model, n_samples=256, tol=1e-12, rng=0):
    """True when E^u_A is Df-invariant at sampled points and g has no stable part.

    Then the unstable plaques are the affine planes x + E^u_A and the conjugacy
    has no stable component.
    """
    sp = model.splitting
    if sp.stable_dim != 1 or model.dim != 3:
        return False
    X = np.random.default_rng(rng).random((n_samples, 3))
    J = model.differential(X)
    Ps = sp.adapted_inverse[:1]
    leak = np.abs(np.einsum("i,nij,jk->nk", Ps[0], J, sp.basis[:, 1:])).max()
    gs = np.abs(model.displacement(X) @ Ps.T).max()
    return bool(leak < tol and gs < tol)


class PlaqueChart:
    """Plaque coordinates y = p + a w + b t with w, t the weak and strong
    unstable eigenvectors of A, and the level function H(a, b) = h^su(y) - p^su."""

    def __init__(self, model, p):
        if not constant_unstable_plane(model):
            raise UnsupportedDimension("level-set leaves need a constant unstable plane")
        self.model = model
        self.p = np.asarray(p, float)
        B = model.splitting.basis
        self.w = B[:, 1].copy()
        self.t = B[:, 2].copy()
        grid = np.random.default_rng(7).random((4096, 3))
        usup = float(np.abs(unstable_series(model, grid)[:, 1]).max())
        self.bracket = 2.5 * usup + 1e-6

    def point(self, a, b):
        return self.p + np.outer(np.atleast_1d(a), self.w) + np.outer(np.atleast_1d(b), self.t)

    def level(self, a, b):
        a, b = np.broadcast_arrays(np.atleast_1d(np.asarray(a, float)), np.atleast_1d(np.asarray(b, float)))
        return b + unstable_series(self.model, self.point(a, b))[:, 1]

    def solve_b(self, a, target, guess):
        """b with level(a, b) = target, by bisection in [guess - R, guess + R]."""
        a = np.atleast_1d(np.asarray(a, float))
        target = np.broadcast_to(np.asarray(target, float), a.shape)
        lo = np.broadcast_to(np.asarray(guess, float), a.shape) - self.bracket
        hi = lo + 2 * self.bracket
        if np.any(self.level(a, lo) > target) or np.any(self.level(a, hi) < target):
            raise MatchingFailure("level set left the bracket; leaf exits the plaque")
        for _ in range(64):
            mid = 0.5 * (lo + hi)
            below = self.level(a, mid) < target
            lo = np.where(below, mid, lo)
            hi = np.where(below, hi, mid)
            if np.all(hi - lo < 1e-16):
                break
        return 0.5 * (lo + hi)


def levelset_leaf(model, x, length, step):
    """Weak-unstable leaf through x for constant-plane special models, sampled
    at wu-coordinate spacing ``step`` over [0, length]."""
    chart = PlaqueChart(model, x)
    a = np.arange(int(round(length / step)) + 1) * step
    target = chart.level(0.0, 0.0)[0]
    b = chart.solve_b(a, target, 0.0)
    pts = chart.point(a, b)
    return LeafSegment("wu", np.asarray(x, float), pts, step, "levelset", _curvature(pts))


def wu_leaf(model, x, length, step):
    """Weak-unstable leaf by the best available method for the model."""
    if model.dim == 3 and model.kind != K.LINEAR and constant_unstable_plane(model):
        return levelset_leaf(model, x, length, step)
    return integrate_leaf(model, x, "wu" if model.dim == 3 else "u", length, step)


# --------------------------------------------------------------------------
# quasi-isometry


@dataclass
class QuasiIsometryReport:
    Q: float
    R_c: float
    lengths: tuple
    Q_by_length: tuple
    R_by_length: tuple
    angle_bins: np.ndarray = None
    angle_means: np.ndarray = None

    @property
    def drift(self):
        """Relative change of Q between the last two segment lengths."""
        if len(self.Q_by_length) < 2:
            return 0.0
        return abs(self.Q_by_length[-1] - self.Q_by_length[-2]) / self.Q_by_length[-2]

    @property
    def angle_trend_decreasing(self):
        m = self.angle_means[np.isfinite(self.angle_means)]
        return bool(len(m) >= 2 and np.all(np.diff(m) <= 1e-12))


def _q_and_r(points, arc, direction, pair_count, rng):
    n = len(points)
    i = rng.integers(n, size=pair_count)
    j = rng.integers(n, size=pair_count)
    dW = np.abs(arc[i] - arc[j])
    dM = np.linalg.norm(points[i] - points[j], axis=1)
    Q = max(1.0, float((dW / (dM + 1.0)).max()))
    rel = points - points[0]
    along = rel @ direction
    R = float(np.sqrt(np.maximum((rel ** 2).sum(1) - along ** 2, 0.0)).max())
    return Q, R


def quasi_isometry_scan(segment, linear_direction, pair_count=20000, fractions=(0.25, 0.5, 1.0), rng=0, n_angle_bins=6,
                        angle_min_distance=1.0):
    """Minimal Q with d_W <= Q d + Q over sampled pairs, and the largest offset
    R_c from the linear leaf through the base point, for nested prefixes of
    the segment (so doubling is read off consecutive fractions).

    The chord-angle check bins pairs by distance from ``angle_min_distance``
    upward; below that scale chords follow the local tangent of the leaf.
    """
    rng = np.random.default_rng(rng)
    direction = np.asarray(linear_direction, float)
    direction = direction / np.linalg.norm(direction)
    arc = segment.arclength
    Qs, Rs, lengths = [], [], []
    for frac in fractions:
        n = max(2, int(round(frac * (len(arc) - 1))) + 1)
        Q, R = _q_and_r(segment.points[:n], arc[:n], direction, pair_count, rng)
        Qs.append(Q)
        Rs.append(R)
        lengths.append(float(arc[n - 1]))
    # direction-ratio check: angle of chords to the linear direction vs chord length
    i = rng.integers(len(arc), size=pair_count)
    j = rng.integers(len(arc), size=pair_count)
    chord = segment.points[i] - segment.points[j]
    dist = np.linalg.norm(chord, axis=1)
    ok = dist > 0
    ang = np.arccos(np.clip(np.abs(chord[ok] @ direction) / dist[ok], 0, 1))
    edges = np.geomspace(angle_min_distance, dist[ok].max() * (1 + 1e-12), n_angle_bins + 1)
    idx = np.digitize(dist[ok], edges) - 1
    means = np.array([ang[idx == b].mean() if np.any(idx == b) else np.nan for b in range(n_angle_bins)])
    return QuasiIsometryReport(Qs[-1], Rs[-1], tuple(lengths), tuple(Qs), tuple(Rs), edges, means)


# --------------------------------------------------------------------------
# holonomy


AC_SLOPE_TOL = 2e-3


@dataclass
class HolonomyReport:
    offset: float
    scales: np.ndarray
    spread: np.ndarray  # std of log ratios per scale
    max_abs_log: np.ndarray
    outside_mass: np.ndarray  # fraction of ratios outside [1/T, T]
    T: float
    trend_slope: float  # d spread / d log2(1/delta)
    trend_ci: tuple
    ratios: list = field(repr=False, default_factory=list)
    ac_slope_tol: float = AC_SLOPE_TOL

    @property
    def verdict(self):
        """"AC-band" when ratios stay in [1/T, T] with no spread growth,
        "non-AC-trend" when the spread grows significantly under refinement."""
        if self.spread.max() < 1e-8 or (np.all(self.outside_mass == 0) and self.trend_ci[1] < self.ac_slope_tol):
            return "AC-band"
        if self.trend_ci[0] > 0:
            return "non-AC-trend"
        return "inconclusive"



def holonomy_jacobian(model, base_points, offset=0.1, ks=range(4, 15, 2), T=2.0, n_boot=2000, rng=0,
                      ac_slope_tol=AC_SLOPE_TOL):
    """Holonomy along weak-unstable leaves between the strong-unstable
    transversals a = 0 and a = offset of the plaque through each base point.

    For each scale delta = 2^-k the divided difference
    (hol(b + delta) - hol(b)) / delta is sampled at b = 0 for every base
    point. Linear models give ratio 1 exactly. Returns a HolonomyReport whose
    trend slope is the growth of the log-ratio spread per halving of delta,
    with a bootstrap CI over base points.
    """
    base_points = np.atleast_2d(np.asarray(base_points, float))
    ks = list(ks)
    if model.kind == K.LINEAR:
        logs = np.zeros((len(ks), len(base_points)))
    else:
        logs = []
        for k in ks:
            delta = 2.0 ** -k
            row = []
            for p in base_points:
                chart = PlaqueChart(model, p)
                b0 = np.array([0.0, delta])
                target = chart.level(np.zeros(2), b0)
                bD = chart.solve_b(np.full(2, offset), target, b0)
                row.append(math.log((bD[1] - bD[0]) / delta))
            logs.append(row)
        logs = np.array(logs)
    spread = logs.std(axis=1)
    outside = (np.abs(logs) > math.log(T)).mean(axis=1)
    x = np.array(ks, float)

    def slope(L):
        return float(np.polyfit(x, L.std(axis=1), 1)[0])

    gen = np.random.default_rng(rng)
    n = logs.shape[1]
    boots = np.array([slope(logs[:, gen.integers(n, size=n)]) for _ in range(n_boot)])
    ci = (float(np.quantile(boots, 0.025)), float(np.quantile(boots, 0.975)))
    return HolonomyReport(offset, 2.0 ** -x, spread, np.abs(logs).max(axis=1), outside, T, slope(logs), ci,
                          [np.exp(r) for r in logs], ac_slope_tol)


def write_segment_csv(path, segment):
    arc = segment.arclength
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["s"] + [f"x{i}" for i in range(segment.points.shape[1])])
        for s, p in zip(arc, segment.points):
            w.writerow([f"{s:.17g}"] + [f"{c:.17g}" for c in p])
