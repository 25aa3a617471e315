"""Numba kernels for the hot loops: map evaluation, derivative cocycles, QR
orbits, invariant frames, leaf integration and grid sweeps.

A model is passed around as a flat tuple ``P``::

    (kind, A, Ainv, dirs, eps, start, freqs, cc, ss)

kind 0: linear; 1: shear chain (moves m use dirs[m], eps[m], terms
start[m]:start[m+1]); 2: manufactured conjugacy f = H A H^-1 with
H(y) = y + eps[0] b(y), component i of b using terms start[i]:start[i+1];
3: generic displacement phi = Id + eps[0] eta, same layout as kind 2.
Trig terms are cc cos(2 pi k.x) + ss sin(2 pi k.x) with k = freqs[t].

Every kernel loops over points in a fixed order and never reduces across
points, so per-point results do not depend on how callers batch them.
"""

import math

import numpy as np
from numba import njit

TWO_PI = 2.0 * math.pi

LINEAR, SHEAR, CONJUGATE, GENERIC = 0, 1, 2, 3


@njit(cache=True)
def trig(freqs, cc, ss, lo, hi, x):
    s = 0.0
    d = x.shape[0]
    for t in range(lo, hi):
        ph = 0.0
        for k in range(d):
            ph += freqs[t, k] * x[k]
        ph *= TWO_PI
        s += cc[t] * math.cos(ph) + ss[t] * math.sin(ph)
    return s


@njit(cache=True)
def trig_grad(freqs, cc, ss, lo, hi, x, out):
    d = x.shape[0]
    for k in range(d):
        out[k] = 0.0
    for t in range(lo, hi):
        ph = 0.0
        for k in range(d):
            ph += freqs[t, k] * x[k]
        ph *= TWO_PI
        dv = TWO_PI * (ss[t] * math.cos(ph) - cc[t] * math.sin(ph))
        for k in range(d):
            out[k] += dv * freqs[t, k]


@njit(cache=True)
def matmul(a, b, out):
    n, m = a.shape
    p = b.shape[1]
    for i in range(n):
        for j in range(p):
            s = 0.0
            for k in range(m):
                s += a[i, k] * b[k, j]
            out[i, j] = s


@njit(cache=True)
def matvec(a, x, out):
    n, m = a.shape
    for i in range(n):
        s = 0.0
        for k in range(m):
            s += a[i, k] * x[k]
        out[i] = s


@njit(cache=True)
def det_small(a):
    d = a.shape[0]
    if d == 1:
        return a[0, 0]
    if d == 2:
        return a[0, 0] * a[1, 1] - a[0, 1] * a[1, 0]
    if d == 3:
        return (a[0, 0] * (a[1, 1] * a[2, 2] - a[1, 2] * a[2, 1])
                - a[0, 1] * (a[1, 0] * a[2, 2] - a[1, 2] * a[2, 0])
                + a[0, 2] * (a[1, 0] * a[2, 1] - a[1, 1] * a[2, 0]))
    return np.linalg.det(a)


@njit(cache=True)
def solve_small(a, b):
    """Solve a x = b by Gaussian elimination with partial pivoting (small d, no LAPACK call)."""
    d = b.shape[0]
    m = a.copy()
    x = b.copy()
    for c in range(d):
        piv = c
        for r in range(c + 1, d):
            if abs(m[r, c]) > abs(m[piv, c]):
                piv = r
        if piv != c:
            for k in range(d):
                m[c, k], m[piv, k] = m[piv, k], m[c, k]
            x[c], x[piv] = x[piv], x[c]
        for r in range(c + 1, d):
            f = m[r, c] / m[c, c]
            for k in range(c, d):
                m[r, k] -= f * m[c, k]
            x[r] -= f * x[c]
    for c in range(d - 1, -1, -1):
        s = x[c]
        for k in range(c + 1, d):
            s -= m[c, k] * x[k]
        x[c] = s / m[c, c]
    return x


@njit(cache=True)
def gram_schmidt(y, q, rdiag):
    """Orthonormalise the columns of y into q (classical GS, applied twice).

    rdiag receives the diagonal of R (non-negative). Returns False if a column
    collapses.
    """
    d, k = y.shape
    v = np.empty(d)
    for j in range(k):
        for i in range(d):
            v[i] = y[i, j]
        for _ in range(2):
            for l in range(j):
                c = 0.0
                for i in range(d):
                    c += q[i, l] * v[i]
                for i in range(d):
                    v[i] -= c * q[i, l]
        nrm = 0.0
        for i in range(d):
            nrm += v[i] * v[i]
        nrm = math.sqrt(nrm)
        rdiag[j] = nrm
        if not (nrm > 1e-300) or not math.isfinite(nrm):
            return False
        for i in range(d):
            q[i, j] = v[i] / nrm
    return True


# --------------------------------------------------------------------------
# map pieces


@njit(cache=True)
def _field(P, x, out):
    freqs, cc, ss, start = P[6], P[7], P[8], P[5]
    for i in range(x.shape[0]):
        out[i] = trig(freqs, cc, ss, start[i], start[i + 1], x)


@njit(cache=True)
def _field_jac(P, x, J):
    freqs, cc, ss, start = P[6], P[7], P[8], P[5]
    d = x.shape[0]
    g = np.empty(d)
    for i in range(d):
        trig_grad(freqs, cc, ss, start[i], start[i + 1], x, g)
        for k in range(d):
            J[i, k] = g[k]


@njit(cache=True)
def h_inverse(P, x, out):
    """Solve y + eps b(y) = x by Newton (I + eps Db is invertible since Lip(eps b) < 1)."""
    eps = P[4][0]
    d = x.shape[0]
    b = np.empty(d)
    J = np.empty((d, d))
    r = np.empty(d)
    scale = 1.0
    for i in range(d):
        out[i] = x[i]
        scale = max(scale, abs(x[i]))
    prev = 1e300
    for _ in range(50):
        _field(P, out, b)
        err = 0.0
        for i in range(d):
            r[i] = out[i] + eps * b[i] - x[i]
            err = max(err, abs(r[i]))
        # stop at the rounding floor of the lift coordinates or when Newton stalls
        if err <= 4e-16 * scale or err >= prev:
            break
        prev = err
        _field_jac(P, out, J)
        for i in range(d):
            for k in range(d):
                J[i, k] = eps * J[i, k] + (1.0 if i == k else 0.0)
        step = solve_small(J, r)
        for i in range(d):
            out[i] -= step[i]


@njit(cache=True)
def h_forward(P, y, out):
    eps = P[4][0]
    d = y.shape[0]
    b = np.empty(d)
    _field(P, y, b)
    for i in range(d):
        out[i] = y[i] + eps * b[i]


@njit(cache=True)
def _pre_and_jac(P, x, y, J, want_jac):
    """Pre-map Phi and (optionally) its derivative."""
    kind = P[0]
    d = x.shape[0]
    for i in range(d):
        y[i] = x[i]
    if want_jac:
        for i in range(d):
            for k in range(d):
                J[i, k] = 1.0 if i == k else 0.0
    if kind == LINEAR:
        return
    if kind == SHEAR:
        dirs, eps, start, freqs, cc, ss = P[3], P[4], P[5], P[6], P[7], P[8]
        g = np.empty(d)
        row = np.empty(d)
        for m in range(eps.shape[0]):
            if want_jac:
                trig_grad(freqs, cc, ss, start[m], start[m + 1], y, g)
                # J <- (I + eps v g^T) J
                for k in range(d):
                    s = 0.0
                    for l in range(d):
                        s += g[l] * J[l, k]
                    row[k] = s
                for i in range(d):
                    for k in range(d):
                        J[i, k] += eps[m] * dirs[m, i] * row[k]
            val = trig(freqs, cc, ss, start[m], start[m + 1], y)
            for i in range(d):
                y[i] += eps[m] * val * dirs[m, i]
        return
    eps = P[4][0]
    if kind == CONJUGATE:
        h_inverse(P, x, y)
        if want_jac:
            Db = np.empty((d, d))
            _field_jac(P, y, Db)
            for i in range(d):
                for k in range(d):
                    Db[i, k] = eps * Db[i, k] + (1.0 if i == k else 0.0)
            e = np.zeros(d)
            for k in range(d):
                e[:] = 0.0
                e[k] = 1.0
                col = solve_small(Db, e)
                for i in range(d):
                    J[i, k] = col[i]
        return
    # GENERIC
    b = np.empty(d)
    _field(P, x, b)
    for i in range(d):
        y[i] = x[i] + eps * b[i]
    if want_jac:
        _field_jac(P, x, J)
        for i in range(d):
            for k in range(d):
                J[i, k] = eps * J[i, k] + (1.0 if i == k else 0.0)


@njit(cache=True)
def lift_and_jac(P, x, out, J, want_jac):
    """out = F(x) on the lift; J = DF(x) when want_jac."""
    kind = P[0]
    A = P[1]
    d = x.shape[0]
    y = np.empty(d)
    Jp = np.empty((d, d))
    _pre_and_jac(P, x, y, Jp, want_jac)
    z = np.empty(d)
    matvec(A, y, z)
    if kind == CONJUGATE:
        h_forward(P, z, out)
        if want_jac:
            eps = P[4][0]
            Dq = np.empty((d, d))
            _field_jac(P, z, Dq)
            for i in range(d):
                for k in range(d):
                    Dq[i, k] = eps * Dq[i, k] + (1.0 if i == k else 0.0)
            tmp = np.empty((d, d))
            matmul(Dq, A, tmp)
            matmul(tmp, Jp, J)
    else:
        for i in range(d):
            out[i] = z[i]
        if want_jac:
            matmul(A, Jp, J)


@njit(cache=True)
def shear_inverse(P, y, out):
    """Closed-form inverse of a shear chain (moves undone in reverse order)."""
    d = y.shape[0]
    for i in range(d):
        out[i] = y[i]
    if P[0] != SHEAR:
        return
    dirs, eps, start, freqs, cc, ss = P[3], P[4], P[5], P[6], P[7], P[8]
    for m in range(eps.shape[0] - 1, -1, -1):
        val = trig(freqs, cc, ss, start[m], start[m + 1], out)
        for i in range(d):
            out[i] -= eps[m] * val * dirs[m, i]


@njit(cache=True)
def preimage(P, y, r, out, tol, maxit):
    """Preimage of torus point y on the branch with lattice offset r.

    Returns the final residual (0 for closed-form branches, > tol on failure).
    """
    kind = P[0]
    Ainv = P[2]
    d = y.shape[0]
    w = np.empty(d)
    for i in range(d):
        w[i] = y[i] + r[i]
    seed = np.empty(d)
    matvec(Ainv, w, seed)
    if kind == LINEAR or kind == SHEAR:
        shear_inverse(P, seed, out)
        for i in range(d):
            out[i] -= math.floor(out[i])
        return 0.0
    x = seed.copy()
    fx = np.empty(d)
    J = np.empty((d, d))
    res = 1e300
    for _ in range(maxit):
        lift_and_jac(P, x, fx, J, True)
        res = 0.0
        for i in range(d):
            fx[i] -= w[i]
            res = max(res, abs(fx[i]))
        if res < tol:
            break
        step = solve_small(J, fx)
        for i in range(d):
            x[i] -= step[i]
    lift_and_jac(P, x, fx, J, False)
    res = 0.0
    for i in range(d):
        res = max(res, abs(fx[i] - w[i]))
    for i in range(d):
        out[i] = x[i] - math.floor(x[i])
    return res


# --------------------------------------------------------------------------
# batch wrappers


@njit(cache=True)
def eval_batch(P, X, reduce):
    n, d = X.shape
    out = np.empty((n, d))
    J = np.empty((d, d))
    y = np.empty(d)
    for p in range(n):
        lift_and_jac(P, X[p], y, J, False)
        for i in range(d):
            out[p, i] = y[i] - math.floor(y[i]) if reduce else y[i]
    return out


@njit(cache=True)
def jac_batch(P, X):
    n, d = X.shape
    out = np.empty((n, d, d))
    J = np.empty((d, d))
    y = np.empty(d)
    for p in range(n):
        lift_and_jac(P, X[p], y, J, True)
        out[p] = J
    return out


@njit(cache=True)
def pre_batch(P, X):
    n, d = X.shape
    out = np.empty((n, d))
    J = np.empty((d, d))
    y = np.empty(d)
    for p in range(n):
        _pre_and_jac(P, X[p], y, J, False)
        out[p] = y
    return out


@njit(cache=True)
def h_batch(P, X, inverse):
    n, d = X.shape
    out = np.empty((n, d))
    y = np.empty(d)
    for p in range(n):
        if inverse:
            h_inverse(P, X[p], y)
        else:
            h_forward(P, X[p], y)
        out[p] = y
    return out


@njit(cache=True)
def preimage_batch(P, Y, R, tol, maxit):
    """All preimages: out[p, b] is the preimage of Y[p] on branch R[b]."""
    n, d = Y.shape
    nb = R.shape[0]
    out = np.empty((n, nb, d))
    res = np.empty((n, nb))
    x = np.empty(d)
    for p in range(n):
        for b in range(nb):
            res[p, b] = preimage(P, Y[p], R[b], x, tol, maxit)
            out[p, b] = x
    return out, res


@njit(cache=True)
def chains_batch(P, X, R, branches, tol, maxit):
    """Backward chains: out[p, j] = x_{-(j+1)} following branch indices."""
    n, d = X.shape
    L = branches.shape[1]
    out = np.empty((n, L, d))
    worst = 0.0
    cur = np.empty(d)
    nxt = np.empty(d)
    for p in range(n):
        for i in range(d):
            cur[i] = X[p, i]
        for j in range(L):
            res = preimage(P, cur, R[branches[p, j]], nxt, tol, maxit)
            worst = max(worst, res)
            for i in range(d):
                out[p, j, i] = nxt[i]
                cur[i] = nxt[i]
    return out, worst


@njit(cache=True)
def iterate_with_jac(P, X, n):
    """F^n on the lift with integer bookkeeping, plus DF^n, for each row of X.

    Returns (frac, shift, jac) with F^n(x) = frac + shift exactly, shift integer.
    """
    m, d = X.shape
    A = P[1]
    frac = np.empty((m, d))
    shift = np.empty((m, d))
    jac = np.empty((m, d, d))
    y = np.empty(d)
    J = np.empty((d, d))
    acc = np.empty((d, d))
    tmp = np.empty((d, d))
    k = np.empty(d)
    kn = np.empty(d)
    x = np.empty(d)
    for p in range(m):
        for i in range(d):
            x[i] = X[p, i] - math.floor(X[p, i])
            k[i] = X[p, i] - x[i]
            for l in range(d):
                acc[i, l] = 1.0 if i == l else 0.0
        for _ in range(n):
            lift_and_jac(P, x, y, J, True)
            matmul(J, acc, tmp)
            acc[:, :] = tmp
            matvec(A, k, kn)
            for i in range(d):
                fl = math.floor(y[i])
                k[i] = kn[i] + fl
                x[i] = y[i] - fl
        frac[p] = x
        shift[p] = k
        jac[p] = acc
    return frac, shift, jac


# --------------------------------------------------------------------------
# QR cocycle


@njit(cache=True, nogil=True)
def qr_orbits(P, X0, Q0, n, burn, nbatch, logs, logjac, status):
    """Benettin/QR iteration for each start point.

    logs[o, b, j] accumulates log R_jj over batch b (compensated summation),
    logjac[o, b] the matching log|det DF|. status[o] = 0 on success or the
    1-based step index where the frame collapsed.
    """
    M, d = X0.shape
    bs = max(n // nbatch, 1)
    x = np.empty(d)
    xn = np.empty(d)
    J = np.empty((d, d))
    Q = np.empty((d, d))
    Y = np.empty((d, d))
    rd = np.empty(d)
    comp = np.empty(d + 1)
    for o in range(M):
        for i in range(d):
            x[i] = X0[o, i]
        Q[:, :] = Q0
        for b in range(nbatch):
            for j in range(d):
                logs[o, b, j] = 0.0
            logjac[o, b] = 0.0
        comp[:] = 0.0
        cur_b = 0
        status[o] = 0
        for t in range(burn + n):
            lift_and_jac(P, x, xn, J, True)
            matmul(J, Q, Y)
            ok = gram_schmidt(Y, Q, rd)
            if not ok:
                status[o] = t + 1
                break
            if t >= burn:
                b = min((t - burn) // bs, nbatch - 1)
                if b != cur_b:
                    comp[:] = 0.0
                    cur_b = b
                for j in range(d):
                    # Kahan summation
                    yv = math.log(rd[j]) - comp[j]
                    tv = logs[o, b, j] + yv
                    comp[j] = (tv - logs[o, b, j]) - yv
                    logs[o, b, j] = tv
                yv = math.log(abs(det_small(J))) - comp[d]
                tv = logjac[o, b] + yv
                comp[d] = (tv - logjac[o, b]) - yv
                logjac[o, b] = tv
            for i in range(d):
                x[i] = xn[i] - math.floor(xn[i])


# --------------------------------------------------------------------------
# invariant frames


@njit(cache=True)
def adjoint_flag(P, x0, n, W0):
    """Dominant covector flag of the adjoint cocycle pulled back from x_n to x_0.

    Column j of the result spans (with columns < j) the annihilator of the
    forward filtration; the last column is the forward-slowest direction.
    """
    d = x0.shape[0]
    orbit = np.empty((n, d))
    x = x0.copy()
    y = np.empty(d)
    J = np.empty((d, d))
    for t in range(n):
        for i in range(d):
            orbit[t, i] = x[i]
        lift_and_jac(P, x, y, J, False)
        for i in range(d):
            x[i] = y[i] - math.floor(y[i])
    W = W0.copy()
    Y = np.empty((d, d))
    rd = np.empty(d)
    for t in range(n - 1, -1, -1):
        lift_and_jac(P, orbit[t], y, J, True)
        for i in range(d):
            for j in range(d):
                s = 0.0
                for k in range(d):
                    s += J[k, i] * W[k, j]
                Y[i, j] = s
        gram_schmidt(Y, W, rd)
    return W


@njit(cache=True)
def forward_flag(P, chain, Q0):
    """Push a generic frame forward along chain[m-1], ..., chain[0] to x_0."""
    m, d = chain.shape
    Q = Q0.copy()
    y = np.empty(d)
    J = np.empty((d, d))
    Y = np.empty((d, d))
    rd = np.empty(d)
    for t in range(m - 1, -1, -1):
        lift_and_jac(P, chain[t], y, J, True)
        matmul(J, Q, Y)
        gram_schmidt(Y, Q, rd)
    return Q


@njit(cache=True)
def _cross(a, b, out):
    out[0] = a[1] * b[2] - a[2] * b[1]
    out[1] = a[2] * b[0] - a[0] * b[2]
    out[2] = a[0] * b[1] - a[1] * b[0]


@njit(cache=True)
def frame_at(P, x, n_fwd, m_back, R, branch, W0, Q0, out):
    """Invariant directions at x (stable dimension 1).

    d = 3: out rows (e_s, e_wu, e_su); d = 2: (e_s, e_u). The backward chain
    follows branch index ``branch`` at every step.
    """
    d = x.shape[0]
    W = adjoint_flag(P, x, n_fwd, W0)
    chain = np.empty((m_back, d))
    cur = x.copy()
    nxt = np.empty(d)
    for j in range(m_back):
        preimage(P, cur, R[branch], nxt, 1e-13, 50)
        for i in range(d):
            chain[j, i] = nxt[i]
            cur[i] = nxt[i]
    Q = forward_flag(P, chain, Q0)
    for i in range(d):
        out[0, i] = W[i, d - 1]
    if d == 2:
        for i in range(d):
            out[1, i] = Q[i, 0]
        return
    a = np.empty(3)
    b = np.empty(3)
    c = np.empty(3)
    for i in range(3):
        a[i] = Q[i, 2]
        b[i] = W[i, 0]
    _cross(a, b, c)
    nrm = math.sqrt(c[0] ** 2 + c[1] ** 2 + c[2] ** 2)
    for i in range(3):
        out[1, i] = c[i] / nrm
        out[2, i] = Q[i, 0]


@njit(cache=True)
def _unit_field(P, x, which, n_fwd, m_back, R, branch, W0, Q0, ref, out):
    d = x.shape[0]
    fr = np.empty((d, d))
    xm = np.empty(d)
    for i in range(d):
        xm[i] = x[i] - math.floor(x[i])
    frame_at(P, xm, n_fwd, m_back, R, branch, W0, Q0, fr)
    dot = 0.0
    for i in range(d):
        out[i] = fr[which, i]
        dot += out[i] * ref[i]
    if dot < 0:
        for i in range(d):
            out[i] = -out[i]
        dot = -dot
    return dot


@njit(cache=True)
def integrate_leaf_rk4(P, x0, direction, which, nsteps, h, n_fwd, m_back, R, branch, W0, Q0, min_cos):
    """RK4 integration of the unit frame field on the lift.

    Returns (points (nsteps+1, d), worst alignment cosine, index of first
    orientation failure or -1).
    """
    d = x0.shape[0]
    pts = np.empty((nsteps + 1, d))
    x = x0.copy()
    ref = direction.copy()
    k1 = np.empty(d)
    k2 = np.empty(d)
    k3 = np.empty(d)
    k4 = np.empty(d)
    tmp = np.empty(d)
    worst = 1.0
    for i in range(d):
        pts[0, i] = x[i]
    for s in range(nsteps):
        c = _unit_field(P, x, which, n_fwd, m_back, R, branch, W0, Q0, ref, k1)
        worst = min(worst, c)
        if c < min_cos:
            return pts[: s + 1], worst, s
        for i in range(d):
            tmp[i] = x[i] + 0.5 * h * k1[i]
        _unit_field(P, tmp, which, n_fwd, m_back, R, branch, W0, Q0, k1, k2)
        for i in range(d):
            tmp[i] = x[i] + 0.5 * h * k2[i]
        _unit_field(P, tmp, which, n_fwd, m_back, R, branch, W0, Q0, k1, k3)
        for i in range(d):
            tmp[i] = x[i] + h * k3[i]
        _unit_field(P, tmp, which, n_fwd, m_back, R, branch, W0, Q0, k1, k4)
        for i in range(d):
            x[i] += h * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]) / 6.0
            pts[s + 1, i] = x[i]
            ref[i] = k1[i]
    return pts, worst, -1


@njit(cache=True)
def grid_setup(P, N, d, Pu, targets, gu):
    """For every grid node: f(node) mod 1 (in grid units) and the unstable
    components of g = F - A on the node."""
    A = P[1]
    k = Pu.shape[0]
    total = N ** d
    x = np.empty(d)
    y = np.empty(d)
    ax = np.empty(d)
    J = np.empty((d, d))
    for idx in range(total):
        rem = idx
        for i in range(d - 1, -1, -1):
            x[i] = (rem % N) / N
            rem //= N
        lift_and_jac(P, x, y, J, False)
        matvec(A, x, ax)
        for i in range(d):
            targets[idx, i] = (y[i] - math.floor(y[i])) * N
        for c in range(k):
            s = 0.0
            for i in range(d):
                s += Pu[c, i] * (y[i] - ax[i])
            gu[idx, c] = s


@njit(cache=True)
def interp_periodic(field, N, d, pos, out):
    """Multilinear periodic interpolation of field (N^d, k) at grid-unit positions."""
    k = field.shape[1]
    for c in range(k):
        out[c] = 0.0
    base = np.empty(d, np.int64)
    frac = np.empty(d)
    for i in range(d):
        f = math.floor(pos[i])
        frac[i] = pos[i] - f
        base[i] = int(f) % N
    for corner in range(1 << d):
        w = 1.0
        idx = 0
        for i in range(d):
            bit = (corner >> (d - 1 - i)) & 1
            j = base[i] + bit
            if j == N:
                j = 0
            idx = idx * N + j
            w *= frac[i] if bit else 1.0 - frac[i]
        if w != 0.0:
            for c in range(k):
                out[c] += w * field[idx, c]


@njit(cache=True)
def grid_sweep(old, new, targets, gu, Linv, N, d):
    """new = Linv (old(f(x)) + g^u(x)); returns sup |new - old|."""
    total, k = old.shape
    tmp = np.empty(k)
    upd = 0.0
    for idx in range(total):
        interp_periodic(old, N, d, targets[idx], tmp)
        for c in range(k):
            tmp[c] += gu[idx, c]
        for c in range(k):
            s = 0.0
            for l in range(k):
                s += Linv[c, l] * tmp[l]
            new[idx, c] = s
            upd = max(upd, abs(s - old[idx, c]))
    return upd


@njit(cache=True)
def interp_batch(field, N, d, X):
    n = X.shape[0]
    k = field.shape[1]
    out = np.empty((n, k))
    pos = np.empty(d)
    tmp = np.empty(k)
    for p in range(n):
        for i in range(d):
            pos[i] = (X[p, i] - math.floor(X[p, i])) * N
        interp_periodic(field, N, d, pos, tmp)
        out[p] = tmp
    return out


@njit(cache=True)
def forward_series(P, X, Pu, Linv, nterms):
    """u^u(x) = sum_j Linv^{j+1} g^u(f^j x), truncated."""
    n, d = X.shape
    A = P[1]
    k = Pu.shape[0]
    out = np.zeros((n, k))
    x = np.empty(d)
    y = np.empty(d)
    ax = np.empty(d)
    J = np.empty((d, d))
    g = np.empty(k)
    acc = np.empty(k)
    M = np.empty((k, k))
    tmp = np.empty((k, k))
    for p in range(n):
        for i in range(d):
            x[i] = X[p, i] - math.floor(X[p, i])
        M[:, :] = Linv
        for c in range(k):
            acc[c] = 0.0
        for _ in range(nterms):
            lift_and_jac(P, x, y, J, False)
            matvec(A, x, ax)
            for c in range(k):
                s = 0.0
                for i in range(d):
                    s += Pu[c, i] * (y[i] - ax[i])
                g[c] = s
            for c in range(k):
                s = 0.0
                for l in range(k):
                    s += M[c, l] * g[l]
                acc[c] += s
            matmul(M, Linv, tmp)
            M[:, :] = tmp
            for i in range(d):
                x[i] = y[i] - math.floor(y[i])
        out[p] = acc
    return out


@njit(cache=True)
def stable_chain_sums(P, X, R, branches, Ps, Ls, tol, maxit):
    """u^s(x) = -sum_{j>=1} Ls^{j-1} g^s(x_{-j}) along the given branch sequences.

    branches has shape (n, nchains, L). Returns (sums (n, nchains, ks), worst residual).
    """
    n, d = X.shape
    nch, L = branches.shape[1], branches.shape[2]
    A = P[1]
    ks = Ps.shape[0]
    out = np.zeros((n, nch, ks))
    cur = np.empty(d)
    nxt = np.empty(d)
    y = np.empty(d)
    ax = np.empty(d)
    J = np.empty((d, d))
    M = np.empty((ks, ks))
    tmp = np.empty((ks, ks))
    g = np.empty(ks)
    worst = 0.0
    for p in range(n):
        for c in range(nch):
            for i in range(d):
                cur[i] = X[p, i] - math.floor(X[p, i])
            for a in range(ks):
                for b in range(ks):
                    M[a, b] = 1.0 if a == b else 0.0
            for j in range(L):
                res = preimage(P, cur, R[branches[p, c, j]], nxt, tol, maxit)
                worst = max(worst, res)
                lift_and_jac(P, nxt, y, J, False)
                matvec(A, nxt, ax)
                for a in range(ks):
                    s = 0.0
                    for i in range(d):
                        s += Ps[a, i] * (y[i] - ax[i])
                    g[a] = s
                for a in range(ks):
                    s = 0.0
                    for b in range(ks):
                        s += M[a, b] * g[b]
                    out[p, c, a] -= s
                matmul(M, Ls, tmp)
                M[:, :] = tmp
                for i in range(d):
                    cur[i] = nxt[i]
    return out, worst
