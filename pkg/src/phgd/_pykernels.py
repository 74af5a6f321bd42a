"""Pure-Python (numpy) implementations of the hot numerical kernels.

These are the reference versions; ``_ckernels.pyx`` mirrors every function
here with the same signature and semantics. Activation codes:

    hidden: 0 identity, 1 CeLU
    head:   0 identity, 1 sigmoid, 2 softmax, 3 logit (softmax of [t, 0])
"""
import math

import numpy as np

from .errors import IterationLimit

MAX_SWEEPS = 200
_ROT_EPS = 1e-15
# columns whose squared norm is below this fraction of |a|_F^2 count as converged
_NEGLIGIBLE = 1e-32


def jacobi_columns(a, max_sweeps=MAX_SWEEPS):
    """One-sided (Hestenes) Jacobi orthogonalization of the columns of ``a``.

    Returns ``(b, w)`` with ``b = a @ w``, ``w`` orthogonal and the columns
    of ``b`` mutually orthogonal. The column norms of ``b`` are the singular
    values of ``a`` (unsorted) when ``a`` has at least as many rows as columns.
    """
    b = np.array(a, dtype=np.float64, copy=True)
    n = b.shape[1]
    w = np.eye(n)
    floor = _NEGLIGIBLE * float(np.sum(b * b))
    for _ in range(max_sweeps):
        rotated = False
        for p in range(n - 1):
            for q in range(p + 1, n):
                bp = b[:, p]
                bq = b[:, q]
                alpha = bp @ bp
                beta = bq @ bq
                gamma = bp @ bq
                if gamma == 0.0 or min(alpha, beta) <= floor or \
                        abs(gamma) <= _ROT_EPS * math.sqrt(alpha) * math.sqrt(beta):
                    continue
                rotated = True
                zeta = (beta - alpha) / (2.0 * gamma)
                t = math.copysign(1.0, zeta) / (abs(zeta) + math.hypot(1.0, zeta))
                c = 1.0 / math.sqrt(1.0 + t * t)
                s = c * t
                new_p = c * bp - s * bq
                b[:, q] = s * bp + c * bq
                b[:, p] = new_p
                wp = w[:, p].copy()
                w[:, p] = c * wp - s * w[:, q]
                w[:, q] = s * wp + c * w[:, q]
        if not rotated:
            return b, w
    raise IterationLimit(f"Jacobi sweep did not converge in {max_sweeps} sweeps")


def gram_pinv(j, rank_tol):
    """Return ``pinv(j.T @ j)`` for a single Jacobian ``j`` (o x d)."""
    o, d = j.shape
    if o <= d:
        # columns of j.T @ w are sigma_k * v_k, v_k the right singular vectors
        b, _ = jacobi_columns(j.T)
        sig2 = np.einsum("ij,ij->j", b, b)
        cols = b
        scale = sig2 * sig2
    else:
        b, w = jacobi_columns(j)
        sig2 = np.einsum("ij,ij->j", b, b)
        cols = w
        scale = sig2
    smax2 = sig2.max() if sig2.size else 0.0
    keep = sig2 > rank_tol * smax2 * d
    if rank_tol == 0.0:
        keep &= sig2 > 0.0
    out = np.zeros((d, d))
    for k in np.flatnonzero(keep):
        v = cols[:, k]
        out += np.outer(v, v) / scale[k]
    return out


def gram_pinv_batch(jac, rank_tol):
    """Batched :func:`gram_pinv` over a stack of Jacobians (N, o, d)."""
    jac = np.asarray(jac, dtype=np.float64)
    n, _, d = jac.shape
    out = np.empty((n, d, d))
    for i in range(n):
        out[i] = gram_pinv(jac[i], rank_tol)
    return out


def precondition_batch(jac, v, rank_tol):
    """``out[i] = pinv(jac[i].T @ jac[i]) @ v[i]`` for a stack of Jacobians."""
    v = np.asarray(v, dtype=np.float64)
    p = gram_pinv_batch(jac, rank_tol)
    if v.shape != p.shape[:2]:
        raise ValueError("v must have shape (N, d) matching jac (N, o, d)")
    return np.matmul(p, v[:, :, None])[:, :, 0]


def _sigmoid(t):
    out = np.empty_like(t)
    pos = t >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-t[pos]))
    e = np.exp(t[~pos])
    out[~pos] = e / (1.0 + e)
    return out


def mlp_forward_batch(w1, w2, x, hidden, head):
    """Evaluate stacked two-layer maps and their Jacobians.

    Shapes: ``w1`` (N, h, d), ``w2`` (N, k, h), ``x`` (N, d). Returns ``z``
    (N, o) and ``jac`` (N, o, d) with ``o = k`` except for the logit head,
    where ``o = k + 1``.
    """
    w1 = np.asarray(w1, dtype=np.float64)
    w2 = np.asarray(w2, dtype=np.float64)
    x = np.asarray(x, dtype=np.float64)
    pre1 = np.einsum("nhd,nd->nh", w1, x)
    if hidden == 1:
        neg = pre1 <= 0.0
        act = np.where(neg, np.expm1(np.minimum(pre1, 0.0)), pre1)
        dact = np.where(neg, np.exp(np.minimum(pre1, 0.0)), 1.0)
        # CeLU'(0) = 1 from both sides
        dact[pre1 == 0.0] = 1.0
    else:
        act = pre1
        dact = np.ones_like(pre1)
    pre2 = np.einsum("nkh,nh->nk", w2, act)
    inner = np.einsum("nkh,nh,nhd->nkd", w2, dact, w1)
    if head == 0:
        return pre2, inner
    if head == 1:
        z = _sigmoid(pre2)
        return z, (z * (1.0 - z))[:, :, None] * inner
    if head == 3:
        pre2 = np.concatenate([pre2, np.zeros((pre2.shape[0], 1))], axis=1)
    m = pre2.max(axis=1, keepdims=True)
    e = np.exp(pre2 - m)
    p = e / e.sum(axis=1, keepdims=True)
    local = np.einsum("nk,kl->nkl", p, np.eye(p.shape[1])) - p[:, :, None] * p[:, None, :]
    if head == 3:
        local = local[:, :, :-1]
    return p, np.einsum("nok,nkd->nod", local, inner)


def poibin_tail(probs, c):
    """P(sum of independent Bernoulli(probs) >= c), O(n*c)."""
    probs = np.asarray(probs, dtype=np.float64)
    if c <= 0:
        return 1.0
    if c > probs.size:
        return 0.0
    # f[k] = P(S = k) for k < c; f[c] absorbs P(S >= c)
    f = np.zeros(c + 1)
    f[0] = 1.0
    for p in probs:
        absorbed = f[c - 1] * p
        f[1:c] = f[1:c] * (1.0 - p) + f[0:c - 1] * p
        f[0] *= 1.0 - p
        f[c] += absorbed
    return float(f[c])


def loo_tails(z, c):
    """Leave-one-out tails: out[i] = P(sum_{j != i} Bernoulli(z_j) >= c)."""
    z = np.asarray(z, dtype=np.float64)
    n = z.size
    if c <= 0:
        return np.ones(n)
    if c > n - 1:
        return np.zeros(n)
    f = np.zeros((n, c + 1))
    f[:, 0] = 1.0
    for j in range(n):
        p = np.full(n, z[j])
        p[j] = 0.0
        absorbed = f[:, c - 1] * p
        f[:, 1:c] = f[:, 1:c] * (1.0 - p)[:, None] + f[:, 0:c - 1] * p[:, None]
        f[:, 0] *= 1.0 - p
        f[:, c] += absorbed
    return f[:, c].copy()


def affine_velocity(w1, w2, x, hidden, head, a, b, rank_tol):
    """Flow velocity ``-P_i J_i^T g_i`` for an affine field ``g = a @ vec(z) + b``; returns (velocity, z)."""
    z, jac = mlp_forward_batch(w1, w2, x, hidden, head)
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != (z.size, z.size) or b.shape != (z.size,):
        raise ValueError("affine field does not match the latent profile size")
    g = (a @ z.ravel() + b).reshape(z.shape)
    v = np.matmul(g[:, None, :], jac)[:, 0, :]
    return -precondition_batch(jac, v, rank_tol), z


def _in_domain(z, simplex, tol):
    if z.min() < -tol:
        return False
    if simplex:
        return bool(np.all(np.abs(z.sum(axis=1) - 1.0) <= tol))
    return z.max() <= 1.0 + tol


def affine_flow(w1, w2, x0, hidden, head, a, b, z_star, dt, steps, record_every, simplex, tol,
                rank_tol):
    """RK4 for the affine-field flow; returns (steps, states, energies, status, failed_step).

    ``status`` is 0 (ok), 1 (non-finite state), 2 (non-finite latent image)
    or 3 (latent point outside the domain); records stop before the failure.
    """
    x = np.array(x0, dtype=np.float64)
    z_star = np.asarray(z_star, dtype=np.float64).reshape(x.shape[0], -1)
    ks, xs, es = [], [], []

    def rhs(x):
        vel, z = affine_velocity(w1, w2, x, hidden, head, a, b, rank_tol)
        if not (np.isfinite(z).all() and np.isfinite(vel).all()):
            return None, 2
        return vel, 0 if _in_domain(z, simplex, tol) else 3

    def done(status, step):
        shape = (0,) + x.shape
        states = np.array(xs) if xs else np.empty(shape)
        return np.array(ks, dtype=np.int64), states, np.array(es), status, step

    step = 0
    while True:
        if step < steps:
            k1, z = affine_velocity(w1, w2, x, hidden, head, a, b, rank_tol)
            if not (np.isfinite(z).all() and np.isfinite(k1).all()):
                return done(2, step)
        else:
            z = mlp_forward_batch(w1, w2, x, hidden, head)[0]
            if not np.isfinite(z).all():
                return done(2, step)
        if not _in_domain(z, simplex, tol):
            return done(3, step)
        if step % record_every == 0 or step == steps:
            dz = (z - z_star).ravel()
            ks.append(step)
            xs.append(x.copy())
            es.append(0.5 * float(dz @ dz))
        if step == steps:
            return done(0, step)
        step += 1
        k2, status = rhs(x + 0.5 * dt * k1)
        if status == 0:
            k3, status = rhs(x + 0.5 * dt * k2)
        if status == 0:
            k4, status = rhs(x + dt * k3)
        if status != 0:
            return done(status, step)
        x = x + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
        if not np.isfinite(x).all():
            return done(1, step)
