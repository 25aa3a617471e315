"""Exact integer-matrix linear algebra for linear toral endomorphisms.

Eigenvalues are obtained from closed-form quadratic/cubic root formulas so
fixtures are reproducible bit-for-bit; everything lattice-theoretic (degree,
coset representatives, periodic point counts) is done in Python integers.
"""

from __future__ import annotations

import cmath
import itertools
import math
from dataclasses import dataclass, field
from fractions import Fraction

import numpy as np

from .errors import (
    ComplexUnstablePair,
    DegeneratePeriod,
    NotFound,
    NotHyperbolic,
    SingularMatrix,
    UnsupportedDimension,
)

UNIT_TOL = 1e-9


# --------------------------------------------------------------------------
# integer helpers


def int_det(rows):
    """Determinant of a square integer matrix by fraction-free Bareiss elimination."""
    m = [list(map(int, r)) for r in rows]
    n = len(m)
    if n == 0:
        return 1
    sign = 1
    prev = 1
    for k in range(n - 1):
        if m[k][k] == 0:
            swap = next((i for i in range(k + 1, n) if m[i][k] != 0), None)
            if swap is None:
                return 0
            m[k], m[swap] = m[swap], m[k]
            sign = -sign
        for i in range(k + 1, n):
            for j in range(k + 1, n):
                m[i][j] = (m[i][j] * m[k][k] - m[i][k] * m[k][j]) // prev
        prev = m[k][k]
    return sign * m[n - 1][n - 1]


def int_adjugate(rows):
    n = len(rows)
    if n == 1:
        return [[1]]
    adj = [[0] * n for _ in range(n)]
    for i in range(n):
        for j in range(n):
            minor = [[rows[r][c] for c in range(n) if c != j] for r in range(n) if r != i]
            adj[j][i] = (-1) ** (i + j) * int_det(minor)
    return adj


def int_matmul(a, b):
    return [[sum(a[i][k] * b[k][j] for k in range(len(b))) for j in range(len(b[0]))] for i in range(len(a))]


def int_matpow(a, n):
    d = len(a)
    result = [[int(i == j) for j in range(d)] for i in range(d)]
    base = [list(r) for r in a]
    while n:
        if n & 1:
            result = int_matmul(result, base)
        base = int_matmul(base, base)
        n >>= 1
    return result


def hermite_lower(rows):
    """Lower-triangular column Hermite form H of the lattice spanned by the columns.

    Returns H with positive diagonal; the column lattices of ``rows`` and H
    coincide. Column operations are applied in a fixed order so the result is
    deterministic.
    """
    d = len(rows)
    cols = [[int(rows[i][j]) for i in range(d)] for j in range(d)]
    for i in range(d):
        # gcd-reduce row i over columns i..d-1 into column i
        for j in range(i + 1, d):
            a, b = cols[i][i], cols[j][i]
            if b == 0:
                continue
            g, x, y = _ext_gcd(a, b)
            ca, cb = cols[i], cols[j]
            new_i = [x * p + y * q for p, q in zip(ca, cb)]
            new_j = [(-b // g) * p + (a // g) * q for p, q in zip(ca, cb)]
            cols[i], cols[j] = new_i, new_j
        if cols[i][i] < 0:
            cols[i] = [-v for v in cols[i]]
        if cols[i][i] == 0:
            raise SingularMatrix("lattice is degenerate")
    # reduce entries below the diagonal into [0, H_jj) for a canonical form
    for i in range(d):
        for j in range(i):
            q = cols[j][i] // cols[i][i]
            if q:
                cols[j] = [p - q * r for p, r in zip(cols[j], cols[i])]
    return [[cols[j][i] for j in range(d)] for i in range(d)]


def _ext_gcd(a, b):
    # returns g >= 0 with x*a + y*b = g
    old_r, r = a, b
    old_s, s = 1, 0
    old_t, t = 0, 1
    while r:
        q = old_r // r
        old_r, r = r, old_r - q * r
        old_s, s = s, old_s - q * s
        old_t, t = t, old_t - q * t
    if old_r < 0:
        old_r, old_s, old_t = -old_r, -old_s, -old_t
    return old_r, old_s, old_t


def smith_normal_form(rows):
    """Unimodular U, V and diagonal D with U M V = D and d_i | d_(i+1), d_i >= 0.

    Pivots are chosen as the smallest nonzero entry (first in row-major order)
    so the decomposition is deterministic.
    """
    d = len(rows)
    a = [[int(v) for v in r] for r in rows]
    u = [[int(i == j) for j in range(d)] for i in range(d)]
    v = [[int(i == j) for j in range(d)] for i in range(d)]

    def swap_rows(i, j):
        a[i], a[j] = a[j], a[i]
        u[i], u[j] = u[j], u[i]

    def swap_cols(i, j):
        for m in (a, v):
            for r in m:
                r[i], r[j] = r[j], r[i]

    def add_row(dst, src, q):  # row dst -= q * row src
        a[dst] = [x - q * y for x, y in zip(a[dst], a[src])]
        u[dst] = [x - q * y for x, y in zip(u[dst], u[src])]

    def add_col(dst, src, q):  # col dst -= q * col src
        for m in (a, v):
            for r in m:
                r[dst] -= q * r[src]

    for t in range(d):
        while True:
            cand = [(abs(a[i][j]), i, j) for i in range(t, d) for j in range(t, d) if a[i][j]]
            if not cand:
                break
            _, i, j = min(cand)
            swap_rows(t, i)
            swap_cols(t, j)
            p = a[t][t]
            for i in range(t + 1, d):
                add_row(i, t, a[i][t] // p)
            for j in range(t + 1, d):
                add_col(j, t, a[t][j] // p)
            if any(a[i][t] for i in range(t + 1, d)) or any(a[t][j] for j in range(t + 1, d)):
                continue
            bad = [i for i in range(t + 1, d) if any(a[i][j] % p for j in range(t + 1, d))]
            if bad:
                add_row(t, bad[0], -1)
                continue
            break
        if a[t][t] < 0:
            a[t] = [-x for x in a[t]]
            u[t] = [-x for x in u[t]]
    return u, [a[i][i] for i in range(d)], v


def reduce_mod_lattice(vec, hermite):
    """Canonical representative of ``vec`` modulo the column lattice of ``hermite``."""
    v = [int(x) for x in vec]
    d = len(v)
    for i in range(d):
        q = v[i] // hermite[i][i]
        if q:
            for r in range(d):
                v[r] -= q * hermite[r][i]
    return tuple(v)


# --------------------------------------------------------------------------
# matrices


@dataclass(frozen=True)
class IntMatrix:
    """Square integer matrix defining a linear endomorphism of the d-torus."""

    entries: tuple

    def __post_init__(self):
        rows = tuple(tuple(int(v) for v in r) for r in self.entries)
        if not rows or any(len(r) != len(rows) for r in rows):
            raise ValueError("matrix must be square")
        for r, raw in zip(rows, self.entries):
            for v, w in zip(r, raw):
                if float(v) != float(w):
                    raise ValueError(f"non-integer entry {w!r}")
        object.__setattr__(self, "entries", rows)
        if int_det(rows) == 0:
            raise SingularMatrix("det = 0; not a local diffeomorphism of the torus")

    @classmethod
    def from_rows(cls, rows):
        return cls(tuple(tuple(r) for r in rows))

    @classmethod
    def block_diag(cls, *blocks):
        blocks = [b.entries if isinstance(b, IntMatrix) else tuple(tuple(r) for r in b) for b in blocks]
        d = sum(len(b) for b in blocks)
        out = [[0] * d for _ in range(d)]
        k = 0
        for b in blocks:
            for i, r in enumerate(b):
                for j, v in enumerate(r):
                    out[k + i][k + j] = v
            k += len(b)
        return cls.from_rows(out)

    @property
    def dim(self):
        return len(self.entries)

    @property
    def det(self):
        return int_det(self.entries)

    @property
    def degree(self):
        return abs(self.det)

    @property
    def invertible(self):
        return self.degree == 1

    @property
    def array(self):
        return np.array(self.entries, dtype=float)

    def power(self, n):
        return IntMatrix.from_rows(int_matpow(self.entries, n))

    def char_poly(self):
        """Integer coefficients [1, c_{d-1}, ..., c_0] of det(t I - M)."""
        m = self.entries
        d = self.dim
        if d == 1:
            return [1, -m[0][0]]
        if d == 2:
            tr = m[0][0] + m[1][1]
            return [1, -tr, self.det]
        if d == 3:
            tr = m[0][0] + m[1][1] + m[2][2]
            minors = (
                m[0][0] * m[1][1] - m[0][1] * m[1][0]
                + m[0][0] * m[2][2] - m[0][2] * m[2][0]
                + m[1][1] * m[2][2] - m[1][2] * m[2][1]
            )
            return [1, -tr, minors, -self.det]
        raise UnsupportedDimension(f"characteristic polynomial implemented for d <= 3, got {d}")

    def to_list(self):
        return [list(r) for r in self.entries]


@dataclass(frozen=True)
class PHConstants:
    """Constants of a partially hyperbolic splitting: 0 < nu < gamma1 <= gamma2 < mu."""

    nu: float
    gamma1: float
    gamma2: float
    mu: float
    C: float = 1.0

    def __post_init__(self):
        if not (0 < self.nu < self.gamma1 <= self.gamma2 < self.mu):
            raise ValueError(f"need 0 < nu < gamma1 <= gamma2 < mu, got {self}")
        if not (self.nu < 1 < self.mu):
            raise ValueError("need nu < 1 < mu")
        if self.C < 1:
            raise ValueError("C must be >= 1")


# --------------------------------------------------------------------------
# closed-form roots


def _quadratic_roots(b, c):
    """Roots of t^2 + b t + c, numerically stable."""
    disc = b * b - 4 * c
    if disc >= 0:
        s = math.sqrt(disc)
        q = -0.5 * (b + math.copysign(s, b)) if b != 0 else -0.5 * s
        if q == 0:
            return [0.0, 0.0]
        return [q, c / q]
    s = cmath.sqrt(disc)
    return [(-b + s) / 2, (-b - s) / 2]


def _polish(coeffs, r, steps=2):
    for _ in range(steps):
        p = 0.0
        dp = 0.0
        for c in coeffs:
            dp = dp * r + p
            p = p * r + c
        if dp == 0:
            break
        r = r - p / dp
    return r


def poly_roots(coeffs):
    """All roots of a monic integer polynomial of degree <= 3 via closed forms."""
    coeffs = [float(c) for c in coeffs]
    deg = len(coeffs) - 1
    if deg == 1:
        return [-coeffs[1]]
    if deg == 2:
        return _quadratic_roots(coeffs[1], coeffs[2])
    if deg != 3:
        raise UnsupportedDimension(f"closed-form roots only for degree <= 3, got {deg}")
    _, a, b, c = coeffs
    p = b - a * a / 3
    q = 2 * a ** 3 / 27 - a * b / 3 + c
    disc = -(4 * p ** 3 + 27 * q ** 2)
    if disc > 0:
        m = 2 * math.sqrt(-p / 3)
        arg = 3 * q / (p * m)
        theta = math.acos(max(-1.0, min(1.0, arg))) / 3
        roots = [m * math.cos(theta - 2 * math.pi * k / 3) - a / 3 for k in range(3)]
        return [_polish(coeffs, r) for r in roots]
    # one real root (Cardano), deflate for the rest
    sq = math.sqrt(max(q * q / 4 + p ** 3 / 27, 0.0))
    u = math.copysign(abs(-q / 2 + sq) ** (1 / 3), -q / 2 + sq)
    v = math.copysign(abs(-q / 2 - sq) ** (1 / 3), -q / 2 - sq)
    r = _polish(coeffs, u + v - a / 3, steps=3)
    rest = _quadratic_roots(a + r, b + r * (a + r))
    return [r] + rest


# --------------------------------------------------------------------------
# spectral splitting


@dataclass(frozen=True)
class SpectralSplitting:
    matrix: IntMatrix
    eigenvalues: tuple
    moduli: tuple
    stable_dim: int
    unstable_dims: tuple
    stable_dims: tuple
    basis: np.ndarray = field(repr=False)
    adapted_inverse: np.ndarray = field(repr=False)
    degree: int = 1

    @property
    def dim(self):
        return self.matrix.dim

    @property
    def log_moduli(self):
        return np.log(np.array(self.moduli))

    @property
    def hyperbolic(self):
        return all(abs(m - 1) > UNIT_TOL for m in self.moduli)

    @property
    def anosov(self):
        return self.stable_dim > 0 and self.hyperbolic

    @property
    def stable_slice(self):
        return slice(0, self.stable_dim)

    @property
    def unstable_slice(self):
        return slice(self.stable_dim, self.dim)

    def unstable_block_slices(self):
        out, k = [], self.stable_dim
        for n in self.unstable_dims:
            out.append(slice(k, k + n))
            k += n
        return out

    @property
    def adapted_matrix(self):
        """A written in the adapted basis (block diagonal up to rounding)."""
        return self.adapted_inverse @ self.matrix.array @ self.basis

    def unstable_lyapunov(self):
        """log-moduli of the unstable eigenvalues, weak to strong."""
        return self.log_moduli[self.stable_dim:]

    def stable_lyapunov(self):
        return self.log_moduli[: self.stable_dim]

    @property
    def spectral_gap(self):
        """Distance of the eigenvalue moduli from the unit circle."""
        return min(abs(m - 1) for m in self.moduli)


def _group_blocks(moduli, tol):
    groups, current = [], [0]
    for i in range(1, len(moduli)):
        if abs(moduli[i] - moduli[current[0]]) <= tol * max(1.0, moduli[i]):
            current.append(i)
        else:
            groups.append(current)
            current = [i]
    groups.append(current)
    return groups


def _invariant_subspace(a, eigs):
    # null space of the real polynomial prod (A - lambda I) over the block
    d = a.shape[0]
    p = np.eye(d, dtype=complex)
    for lam in eigs:
        p = p @ (a - lam * np.eye(d))
    p = p.real if np.allclose(p.imag, 0, atol=1e-9 * max(1.0, np.abs(p).max())) else p
    _, _, vh = np.linalg.svd(p)
    k = len(eigs)
    basis = vh[-k:].conj().T.real
    if k == 1:
        v = basis[:, 0]
        v = v / np.linalg.norm(v)
        if v[np.argmax(np.abs(v))] < 0:
            v = -v
        basis = v[:, None]
    return basis


def spectral_splitting(m, tol=UNIT_TOL, allow_complex=False):
    """Eigen-data and adapted basis of an integer matrix (d <= 3).

    Raises NotHyperbolic when an eigenvalue modulus is within ``tol`` of 1 and
    ComplexUnstablePair in d = 3 when the two largest roots are non-real,
    unless ``allow_complex`` is set.
    """
    if not isinstance(m, IntMatrix):
        m = IntMatrix.from_rows(m)
    d = m.dim
    if d > 3:
        raise UnsupportedDimension(f"closed-form splitting only for d <= 3, got {d}")
    roots = poly_roots(m.char_poly())
    roots = [complex(r) for r in roots]
    roots.sort(key=lambda z: (abs(z), z.real, z.imag))
    moduli = [abs(z) for z in roots]
    for z in moduli:
        if abs(z - 1) < tol:
            raise NotHyperbolic(f"eigenvalue modulus {z!r} within {tol} of 1")
    stable_dim = sum(1 for z in moduli if z < 1)
    if d == 3 and not allow_complex:
        top = roots[1:]
        if all(abs(z.imag) > 1e-12 for z in top) and moduli[1] > 1:
            raise ComplexUnstablePair("the two unstable eigenvalues are a complex pair")
    a = m.array
    groups = _group_blocks(moduli, 1e-9)
    cols = []
    sizes = []
    for g in groups:
        cols.append(_invariant_subspace(a, [roots[i] for i in g]))
        sizes.append(len(g))
    basis = np.hstack(cols)
    inv = np.linalg.inv(basis)
    st, un, k = [], [], 0
    for g, n in zip(groups, sizes):
        (st if moduli[g[0]] < 1 else un).append(n)
    eigenvalues = tuple(z.real if abs(z.imag) == 0 else z for z in roots)
    return SpectralSplitting(
        matrix=m,
        eigenvalues=eigenvalues,
        moduli=tuple(moduli),
        stable_dim=stable_dim,
        unstable_dims=tuple(un),
        stable_dims=tuple(st),
        basis=basis,
        adapted_inverse=inv,
        degree=m.degree,
    )


# --------------------------------------------------------------------------
# irreducibility


def _divisors(n):
    n = abs(n)
    return [k for k in range(1, n + 1) if n % k == 0]


def has_rational_root(coeffs):
    """Rational-root test for a monic integer polynomial: roots must divide c_0."""
    c0 = coeffs[-1]
    if c0 == 0:
        return True
    for k in _divisors(c0):
        for r in (k, -k):
            acc = 0
            for c in coeffs:
                acc = acc * r + c
            if acc == 0:
                return True
    return False


def check_irreducible(m):
    """Irreducibility of the characteristic polynomial over Q for d = 2, 3."""
    if not isinstance(m, IntMatrix):
        m = IntMatrix.from_rows(m)
    if m.dim > 3:
        raise UnsupportedDimension(f"rational-root test only decides irreducibility for d <= 3, got {m.dim}")
    return not has_rational_root(m.char_poly())


def companion(coeffs):
    """3x3 companion matrix of t^3 + a t^2 + b t + c, coeffs = (a, b, c)."""
    a, b, c = coeffs
    return IntMatrix.from_rows([[0, 0, -c], [1, 0, -b], [0, 1, -a]])


def search_irreducible_model(coeff_bound):
    """First companion matrix (lexicographic in (a, b, c)) with a simple split unstable spectrum.

    Requirements: one root of modulus < 1, two distinct real roots of modulus
    > 1, |c| >= 2, irreducible characteristic polynomial.
    """
    if coeff_bound < 0:
        raise ValueError("coeff_bound must be >= 0")
    rng = range(-coeff_bound, coeff_bound + 1)
    for a, b, c in itertools.product(rng, rng, rng):
        if abs(c) < 2:
            continue
        coeffs = [1, a, b, c]
        if has_rational_root(coeffs):
            continue
        roots = sorted(poly_roots(coeffs), key=abs)
        small, r1, r2 = roots
        if abs(small) >= 1 - UNIT_TOL:
            continue
        if isinstance(r1, complex) or isinstance(r2, complex):
            if abs(complex(r1).imag) > 0 or abs(complex(r2).imag) > 0:
                continue
        r1, r2 = float(np.real(r1)), float(np.real(r2))
        if not (abs(r1) > 1 + UNIT_TOL and abs(r2) > 1 + UNIT_TOL):
            continue
        if abs(abs(r1) - abs(r2)) <= 1e-9:
            continue
        return companion((a, b, c))
    raise NotFound(f"no admissible cubic with |coefficients| <= {coeff_bound}")


# --------------------------------------------------------------------------
# lattice structure


def preimage_offsets(m):
    """Coset representatives of Z^d / M Z^d from the Smith normal form.

    With U M V = D, the vectors U^-1 r for r in prod [0, d_i) represent all
    cosets; each is reduced into the Hermite box prod [0, H_ii) so that every
    representative has non-negative entries, and the list is sorted
    (first coordinate varying fastest).
    """
    if not isinstance(m, IntMatrix):
        m = IntMatrix.from_rows(m)
    u, diag, _ = smith_normal_form(m.entries)
    u_inv = int_adjugate(u)
    det_u = int_det(u)
    h = hermite_lower(m.entries)
    reps = set()
    for r in itertools.product(*[range(k) for k in diag]):
        vec = [sum(u_inv[i][j] * r[j] for j in range(m.dim)) * det_u for i in range(m.dim)]
        reps.add(reduce_mod_lattice(vec, h))
    return sorted(reps, key=lambda r: tuple(reversed(r)))


def same_coset(m, r1, r2):
    """True iff M^{-1}(r1 - r2) is an integer vector."""
    if not isinstance(m, IntMatrix):
        m = IntMatrix.from_rows(m)
    det = m.det
    adj = int_adjugate(m.entries)
    diff = [a - b for a, b in zip(r1, r2)]
    num = [sum(adj[i][j] * diff[j] for j in range(m.dim)) for i in range(m.dim)]
    return all(v % det == 0 for v in num)


def _period_matrix(m, n):
    p = int_matpow(m.entries, n)
    return [[p[i][j] - (i == j) for j in range(m.dim)] for i in range(m.dim)]


def count_linear_periodic(m, n):
    """Number of points of period n (fixed points of M^n) on the torus: |det(M^n - I)|."""
    if not isinstance(m, IntMatrix):
        m = IntMatrix.from_rows(m)
    det = int_det(_period_matrix(m, n))
    if det == 0:
        raise DegeneratePeriod(f"det(M^{n} - I) = 0")
    return abs(det)


def linear_periodic_points_exact(m, n):
    """Fixed points of M^n on the torus as exact Fractions, in a deterministic order."""
    if not isinstance(m, IntMatrix):
        m = IntMatrix.from_rows(m)
    b = _period_matrix(m, n)
    det = int_det(b)
    if det == 0:
        raise DegeneratePeriod(f"det(M^{n} - I) = 0")
    adj = int_adjugate(b)
    h = hermite_lower(b)
    box = [range(h[i][i]) for i in range(m.dim)]
    pts = []
    for k in itertools.product(*box):
        num = [sum(adj[i][j] * k[j] for j in range(m.dim)) for i in range(m.dim)]
        pts.append(tuple(Fraction(v, det) % 1 for v in num))
    pts = sorted(set(pts))
    return pts
