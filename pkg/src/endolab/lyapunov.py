"""Lyapunov spectra of the derivative cocycle by QR (Benettin) iteration.

Exponents are reported in ascending order, so the stable exponent comes
first and the unstable ones run from weak to strong. Partial sums over the
k weakest unstable exponents then match the weak-unstable flag.
"""

from __future__ import annotations

import csv
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from . import _kernels as K
from .errors import FrameCollapse
from .maps import generic_frame

BURN_IN = 1000
N_BATCHES = 20
FP_FLOOR = 1e-12


@dataclass
class LyapunovReport:
    exponents: np.ndarray
    n_steps: int
    orbit_seed: np.ndarray
    stable_dim: int
    mean_log_jac: float
    batch_exponents: np.ndarray  # (n_batches, d) per-batch means, ascending
    batch_lengths: np.ndarray
    multiplicities: tuple = ()

    def __post_init__(self):
        if not self.multiplicities:
            self.multiplicities = (1,) * len(self.exponents)

    @property
    def dim(self):
        return len(self.exponents)

    @property
    def unstable(self):
        return self.exponents[self.stable_dim:]

    @property
    def sums(self):
        cs = np.cumsum(self.unstable)
        return {k + 1: float(v) for k, v in enumerate(cs)}

    @property
    def telescope_error(self):
        """|sum of exponents - mean log Jacobian|; zero up to rounding."""
        return abs(float(self.exponents.sum()) - self.mean_log_jac)

    def batch_stderr(self):
        nb = len(self.batch_lengths)
        if nb < 2:
            return np.zeros(self.dim)
        w = self.batch_lengths / self.batch_lengths.sum()
        mean = w @ self.batch_exponents
        var = (w[:, None] * (self.batch_exponents - mean) ** 2).sum(0) * nb / (nb - 1)
        return np.sqrt(var / nb)


@dataclass
class EnsembleReport:
    exponents: np.ndarray
    stderr: np.ndarray
    n_orbits: int
    n_steps: int
    seed: int
    stable_dim: int
    per_orbit: np.ndarray  # (M, d)
    mean_log_jac: float
    sum_stderr: dict = field(default_factory=dict)
    per_orbit_log_jac: np.ndarray = None

    @property
    def telescope_error(self):
        """Largest per-orbit |sum of exponents - mean log Jacobian|."""
        return float(np.abs(self.per_orbit.sum(1) - self.per_orbit_log_jac).max())

    @property
    def unstable(self):
        return self.exponents[self.stable_dim:]

    @property
    def sums(self):
        cs = np.cumsum(self.unstable)
        return {k + 1: float(v) for k, v in enumerate(cs)}


def _batch_lengths(n, nbatch):
    bs = max(n // nbatch, 1)
    nb = min(nbatch, n)
    lengths = np.full(nb, bs, dtype=float)
    lengths[-1] = n - bs * (nb - 1)
    return lengths, nb


def _run(model, X0, n, burn, nbatch, frame):
    M, d = X0.shape
    lengths, nb = _batch_lengths(n, nbatch)
    logs = np.zeros((M, nb, d))
    logjac = np.zeros((M, nb))
    status = np.zeros(M, dtype=np.int64)
    K.qr_orbits(model.P, np.ascontiguousarray(X0), np.ascontiguousarray(frame), n, burn, nb, logs, logjac, status)
    return logs, logjac, status, lengths


def _frame(model, frame):
    if frame is None or (isinstance(frame, str) and frame == "generic"):
        return generic_frame(model.dim)
    if isinstance(frame, str) and frame == "identity":
        return np.eye(model.dim)
    return np.asarray(frame, float)


def _order(logs):
    """Column permutation that sorts the accumulated exponents ascending."""
    return np.argsort(logs.sum(axis=-2), axis=-1, kind="stable")


def qr_spectrum(model, x0, n, burn=BURN_IN, nbatch=N_BATCHES, frame=None):
    """Lyapunov exponents along the forward orbit of x0 (n steps after burn-in)."""
    if n < 1:
        raise ValueError("n must be >= 1")
    x0 = np.asarray(x0, float).reshape(1, model.dim)
    logs, logjac, status, lengths = _run(model, x0, n, burn, nbatch, _frame(model, frame))
    if status[0]:
        raise FrameCollapse("QR frame collapsed", step=int(status[0]), orbit=0)
    order = _order(logs[0])
    lg = logs[0][:, order]
    return LyapunovReport(
        exponents=lg.sum(0) / n,
        n_steps=n,
        orbit_seed=x0[0].copy(),
        stable_dim=model.splitting.stable_dim,
        mean_log_jac=float(logjac[0].sum() / n),
        batch_exponents=lg / lengths[:, None],
        batch_lengths=lengths,
    )


def ensemble_starts(model, M, seed, start_map=None):
    """M uniform start points, one SeedSequence child per orbit."""
    children = np.random.SeedSequence(seed).spawn(M)
    X = np.array([np.random.default_rng(c).random(model.dim) for c in children])
    if start_map is not None:
        X = start_map(X)
    return X


def ensemble_spectrum(model, M, n, seed, workers=1, burn=BURN_IN, nbatch=N_BATCHES, start_map=None, frame=None):
    """Lebesgue-ensemble mean exponents with batch-means standard errors.

    The standard error is the larger of the across-orbit spread and the
    pooled within-orbit batch-means estimate, floored at 1e-12 to stand for
    rounding. Orbit start points depend only on (seed, orbit index), so the
    result does not depend on ``workers``.
    """
    if M < 2:
        raise ValueError("ensemble needs M >= 2")
    X0 = ensemble_starts(model, M, seed, start_map)
    Q0 = _frame(model, frame)
    chunks = np.array_split(np.arange(M), max(1, min(workers, M)))

    def job(idx):
        return _run(model, X0[idx], n, burn, nbatch, Q0)

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as ex:
            parts = list(ex.map(job, chunks))
    else:
        parts = [job(c) for c in chunks]
    logs = np.concatenate([p[0] for p in parts])
    logjac = np.concatenate([p[1] for p in parts])
    status = np.concatenate([p[2] for p in parts])
    lengths = parts[0][3]
    bad = np.flatnonzero(status)
    if len(bad):
        raise FrameCollapse("QR frame collapsed", step=int(status[bad[0]]), orbit=int(bad[0]))

    order = _order(logs)
    logs = np.take_along_axis(logs, order[:, None, :], axis=-1)
    per_orbit = logs.sum(1) / n
    batch = logs / lengths[None, :, None]
    stable_dim = model.splitting.stable_dim

    def stderr_of(per_o, per_b):
        across = per_o.std(0, ddof=1) / math.sqrt(M)
        nb = per_b.shape[1]
        if nb > 1:
            within = per_b.var(1, ddof=1) / nb
            pooled = np.sqrt(within.mean(0) / M)
        else:
            pooled = np.zeros_like(across)
        return np.maximum(np.maximum(across, pooled), FP_FLOOR)

    means = per_orbit.mean(0)
    se = stderr_of(per_orbit, batch)
    sum_se = {}
    for k in range(1, model.dim - stable_dim + 1):
        cols = slice(stable_dim, stable_dim + k)
        sum_se[k] = float(stderr_of(per_orbit[:, cols].sum(1, keepdims=True), batch[:, :, cols].sum(2, keepdims=True))[0])
    return EnsembleReport(
        exponents=means,
        stderr=se,
        n_orbits=M,
        n_steps=n,
        seed=seed,
        stable_dim=stable_dim,
        per_orbit=per_orbit,
        mean_log_jac=float(logjac.sum() / (n * M)),
        sum_stderr=sum_se,
        per_orbit_log_jac=logjac.sum(1) / n,
    )


def exponent_sums(report, k):
    """Sum of the k weakest unstable exponents."""
    nu = len(report.exponents) - report.stable_dim
    if not 1 <= k <= nu:
        raise ValueError(f"k must lie in 1..{nu}")
    return float(report.unstable[:k].sum())


def pesin_scalar(report):
    """Sum of the positive exponents (all multiplicities are 1 here)."""
    ex = np.asarray(report.exponents)
    return float(ex[ex > 0].sum())


CSV_FIELDS = ["model", "seed", "n", "M"]


def write_csv(path, rows):
    """rows: iterable of (model_id, EnsembleReport | LyapunovReport)."""
    rows = list(rows)
    d = max(len(r.exponents) for _, r in rows)
    header = CSV_FIELDS + [f"lambda_{i}" for i in range(d)] + [f"stderr_{i}" for i in range(d)]
    header += [f"sum_{k}" for k in range(1, d + 1)]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for model_id, r in rows:
            ens = isinstance(r, EnsembleReport)
            se = r.stderr if ens else r.batch_stderr()
            sums = r.sums
            w.writerow(
                [model_id, getattr(r, "seed", ""), r.n_steps, r.n_orbits if ens else 1]
                + [f"{v:.17g}" for v in r.exponents]
                + [f"{v:.6g}" for v in se]
                + [f"{sums[k]:.17g}" if k in sums else "" for k in range(1, d + 1)]
            )
