# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled versions of the kernels in ``_pykernels``; same signatures."""
import numpy as np
cimport numpy as cnp
from libc.math cimport sqrt, fabs, exp, expm1, copysign, hypot

from .errors import IterationLimit

cnp.import_array()

cdef int MAX_SWEEPS = 200
cdef double _ROT_EPS = 1e-15
cdef double _NEGLIGIBLE = 1e-32


cdef int _jacobi(double[:, ::1] b, double[:, ::1] w, int max_sweeps) noexcept nogil:
    """In-place one-sided Jacobi on the columns of b, accumulating w. Returns 0 on success."""
    cdef Py_ssize_t m = b.shape[0], n = b.shape[1]
    cdef Py_ssize_t p, q, i, sweep
    cdef double alpha, beta, gamma, zeta, t, c, s, bp, bq
    cdef bint rotated
    cdef double floor = 0.0
    for p in range(n):
        for i in range(m):
            floor += b[i, p] * b[i, p]
    floor *= _NEGLIGIBLE
    for sweep in range(max_sweeps):
        rotated = False
        for p in range(n - 1):
            for q in range(p + 1, n):
                alpha = 0.0
                beta = 0.0
                gamma = 0.0
                for i in range(m):
                    alpha += b[i, p] * b[i, p]
                    beta += b[i, q] * b[i, q]
                    gamma += b[i, p] * b[i, q]
                if gamma == 0.0 or alpha <= floor or beta <= floor or \
                        fabs(gamma) <= _ROT_EPS * sqrt(alpha) * sqrt(beta):
                    continue
                rotated = True
                zeta = (beta - alpha) / (2.0 * gamma)
                t = copysign(1.0, zeta) / (fabs(zeta) + hypot(1.0, zeta))
                c = 1.0 / sqrt(1.0 + t * t)
                s = c * t
                for i in range(m):
                    bp = b[i, p]
                    bq = b[i, q]
                    b[i, p] = c * bp - s * bq
                    b[i, q] = s * bp + c * bq
                for i in range(n):
                    bp = w[i, p]
                    bq = w[i, q]
                    w[i, p] = c * bp - s * bq
                    w[i, q] = s * bp + c * bq
        if not rotated:
            return 0
    return 1


def jacobi_columns(a, int max_sweeps=MAX_SWEEPS):
    cdef cnp.ndarray[double, ndim=2] b = np.array(a, dtype=np.float64, order="C", copy=True)
    cdef cnp.ndarray[double, ndim=2] w = np.eye(b.shape[1])
    if _jacobi(b, w, max_sweeps) != 0:
        raise IterationLimit(f"Jacobi sweep did not converge in {max_sweeps} sweeps")
    return b, w


cdef int _gram_pinv(const double[:, :] j, double rank_tol, double[:, ::1] out,
                    double[:, ::1] b, double[:, ::1] w, double[::1] sig2) noexcept nogil:
    cdef Py_ssize_t o = j.shape[0], d = j.shape[1]
    cdef Py_ssize_t i, k, r, c_, ncol
    cdef double smax2 = 0.0, scale, vr
    cdef bint transposed = o <= d
    if transposed:
        ncol = o
        for i in range(d):
            for k in range(o):
                b[i, k] = j[k, i]
    else:
        ncol = d
        for i in range(o):
            for k in range(d):
                b[i, k] = j[i, k]
    for i in range(ncol):
        for k in range(ncol):
            w[i, k] = 1.0 if i == k else 0.0
    if _jacobi(b, w, MAX_SWEEPS) != 0:
        return 1
    for k in range(ncol):
        sig2[k] = 0.0
        for i in range(b.shape[0]):
            sig2[k] += b[i, k] * b[i, k]
        if sig2[k] > smax2:
            smax2 = sig2[k]
    for r in range(d):
        for c_ in range(d):
            out[r, c_] = 0.0
    for k in range(ncol):
        if not sig2[k] > rank_tol * smax2 * d:
            continue
        if rank_tol == 0.0 and not sig2[k] > 0.0:
            continue
        if transposed:
            scale = 1.0 / (sig2[k] * sig2[k])
            for r in range(d):
                vr = b[r, k] * scale
                for c_ in range(d):
                    out[r, c_] += vr * b[c_, k]
        else:
            scale = 1.0 / sig2[k]
            for r in range(d):
                vr = w[r, k] * scale
                for c_ in range(d):
                    out[r, c_] += vr * w[c_, k]
    return 0


def gram_pinv(j, double rank_tol):
    jj = np.ascontiguousarray(j, dtype=np.float64)
    cdef Py_ssize_t o = jj.shape[0], d = jj.shape[1]
    cdef Py_ssize_t rows = d if o <= d else o
    out = np.empty((d, d))
    b = np.empty((rows, min(o, d)))
    w = np.empty((min(o, d), min(o, d)))
    sig2 = np.empty(min(o, d))
    if _gram_pinv(jj, rank_tol, out, b, w, sig2) != 0:
        raise IterationLimit(f"Jacobi sweep did not converge in {MAX_SWEEPS} sweeps")
    return out


def gram_pinv_batch(jac, double rank_tol):
    cdef const double[:, :, ::1] jv = np.ascontiguousarray(jac, dtype=np.float64)
    cdef Py_ssize_t n = jv.shape[0], o = jv.shape[1], d = jv.shape[2]
    cdef Py_ssize_t r = min(o, d)
    cdef Py_ssize_t rows = d if o <= d else o
    out = np.empty((n, d, d))
    cdef double[:, :, ::1] ov = out
    cdef double[:, ::1] b = np.empty((rows, r))
    cdef double[:, ::1] w = np.empty((r, r))
    cdef double[::1] sig2 = np.empty(r)
    cdef Py_ssize_t i
    cdef int status = 0
    with nogil:
        for i in range(n):
            status = _gram_pinv(jv[i], rank_tol, ov[i], b, w, sig2)
            if status != 0:
                break
    if status != 0:
        raise IterationLimit(f"Jacobi sweep did not converge in {MAX_SWEEPS} sweeps")
    return out


cdef inline double _sigmoid(double t) noexcept nogil:
    cdef double e
    if t >= 0.0:
        return 1.0 / (1.0 + exp(-t))
    e = exp(t)
    return e / (1.0 + e)


cdef void _mlp_forward(const double[:, :, ::1] a1, const double[:, :, ::1] a2,
                       const double[:, ::1] xv, int hidden, int head,
                       double[:, ::1] zv, double[:, :, ::1] jv, double[::1] scratch) noexcept nogil:
    cdef Py_ssize_t n = a1.shape[0], h = a1.shape[1], d = a1.shape[2], k = a2.shape[1]
    cdef Py_ssize_t o = k + 1 if head == 3 else k
    # scratch holds 2h + o + o*d + o*o doubles, carved into the per-sample work arrays
    cdef double* act = &scratch[0]
    cdef double* dact = act + h
    cdef double* pre2 = act + 2 * h
    cdef double* inner = pre2 + o
    cdef double* local = inner + o * d
    cdef Py_ssize_t i, a, b_, c
    cdef double s, mx, tot
    for i in range(n):
        for a in range(h):
            s = 0.0
            for c in range(d):
                s += a1[i, a, c] * xv[i, c]
            if hidden == 1 and s <= 0.0:
                act[a] = expm1(s)
                dact[a] = exp(s)
            else:
                act[a] = s
                dact[a] = 1.0
        for b_ in range(k):
            s = 0.0
            for a in range(h):
                s += a2[i, b_, a] * act[a]
            pre2[b_] = s
            for c in range(d):
                s = 0.0
                for a in range(h):
                    s += a2[i, b_, a] * dact[a] * a1[i, a, c]
                inner[b_ * d + c] = s
        if head == 0:
            for b_ in range(k):
                zv[i, b_] = pre2[b_]
                for c in range(d):
                    jv[i, b_, c] = inner[b_ * d + c]
        elif head == 1:
            for b_ in range(k):
                s = _sigmoid(pre2[b_])
                zv[i, b_] = s
                for c in range(d):
                    jv[i, b_, c] = s * (1.0 - s) * inner[b_ * d + c]
        else:
            if head == 3:
                pre2[k] = 0.0
                for c in range(d):
                    inner[k * d + c] = 0.0
            mx = pre2[0]
            for b_ in range(1, o):
                if pre2[b_] > mx:
                    mx = pre2[b_]
            tot = 0.0
            for b_ in range(o):
                zv[i, b_] = exp(pre2[b_] - mx)
                tot += zv[i, b_]
            for b_ in range(o):
                zv[i, b_] /= tot
            for a in range(o):
                for b_ in range(o):
                    local[a * o + b_] = (zv[i, a] if a == b_ else 0.0) - zv[i, a] * zv[i, b_]
            for a in range(o):
                for c in range(d):
                    s = 0.0
                    for b_ in range(o):
                        s += local[a * o + b_] * inner[b_ * d + c]
                    jv[i, a, c] = s


def mlp_forward_batch(w1, w2, x, int hidden, int head):
    cdef const double[:, :, ::1] a1 = np.ascontiguousarray(w1, dtype=np.float64)
    cdef const double[:, :, ::1] a2 = np.ascontiguousarray(w2, dtype=np.float64)
    cdef const double[:, ::1] xv = np.ascontiguousarray(x, dtype=np.float64)
    cdef Py_ssize_t n = a1.shape[0], h = a1.shape[1], d = a1.shape[2], k = a2.shape[1]
    cdef Py_ssize_t o = k + 1 if head == 3 else k
    z = np.empty((n, o))
    jac = np.empty((n, o, d))
    cdef double[:, ::1] zv = z
    cdef double[:, :, ::1] jv = jac
    cdef double[::1] scratch = np.empty(2 * h + o + o * d + o * o)
    with nogil:
        _mlp_forward(a1, a2, xv, hidden, head, zv, jv, scratch)
    return z, jac


def poibin_tail(probs, Py_ssize_t c):
    cdef const double[::1] p = np.ascontiguousarray(probs, dtype=np.float64)
    cdef Py_ssize_t n = p.shape[0], j, k
    if c <= 0:
        return 1.0
    if c > n:
        return 0.0
    cdef double[::1] f = np.zeros(c + 1)
    cdef double q, absorbed
    with nogil:
        f[0] = 1.0
        for j in range(n):
            q = p[j]
            absorbed = f[c - 1] * q
            for k in range(c - 1, 0, -1):
                f[k] = f[k] * (1.0 - q) + f[k - 1] * q
            f[0] *= 1.0 - q
            f[c] += absorbed
    return f[c]


def loo_tails(z, Py_ssize_t c):
    cdef const double[::1] p = np.ascontiguousarray(z, dtype=np.float64)
    cdef Py_ssize_t n = p.shape[0], i, j, k
    if c <= 0:
        return np.ones(n)
    if c > n - 1:
        return np.zeros(n)
    out = np.empty(n)
    cdef double[::1] ov = out
    cdef double[::1] f = np.empty(c + 1)
    cdef double q, absorbed
    with nogil:
        for i in range(n):
            for k in range(c + 1):
                f[k] = 0.0
            f[0] = 1.0
            for j in range(n):
                if j == i:
                    continue
                q = p[j]
                absorbed = f[c - 1] * q
                for k in range(c - 1, 0, -1):
                    f[k] = f[k] * (1.0 - q) + f[k - 1] * q
                f[0] *= 1.0 - q
                f[c] += absorbed
            ov[i] = f[c]
    return out


def precondition_batch(jac, v, double rank_tol):
    """``out[i] = pinv(jac[i].T @ jac[i]) @ v[i]`` for a stack of Jacobians."""
    cdef const double[:, :, ::1] jv = np.ascontiguousarray(jac, dtype=np.float64)
    cdef const double[:, ::1] vv = np.ascontiguousarray(v, dtype=np.float64)
    cdef Py_ssize_t n = jv.shape[0], o = jv.shape[1], d = jv.shape[2]
    if vv.shape[0] != n or vv.shape[1] != d:
        raise ValueError("v must have shape (N, d) matching jac (N, o, d)")
    cdef Py_ssize_t r = min(o, d)
    cdef Py_ssize_t rows = d if o <= d else o
    out = np.zeros((n, d))
    cdef double[:, ::1] outv = out
    cdef double[:, ::1] p = np.empty((d, d))
    cdef double[:, ::1] b = np.empty((rows, r))
    cdef double[:, ::1] w = np.empty((r, r))
    cdef double[::1] sig2 = np.empty(r)
    cdef Py_ssize_t i, a, c
    cdef double acc
    cdef int status = 0
    with nogil:
        for i in range(n):
            status = _gram_pinv(jv[i], rank_tol, p, b, w, sig2)
            if status != 0:
                break
            for a in range(d):
                acc = 0.0
                for c in range(d):
                    acc = acc + p[a, c] * vv[i, c]
                outv[i, a] = acc
    if status != 0:
        raise IterationLimit(f"Jacobi sweep did not converge in {MAX_SWEEPS} sweeps")
    return out


cdef int _affine_rhs(const double[:, :, ::1] a1, const double[:, :, ::1] a2,
                     const double[:, ::1] xv, int hidden, int head,
                     const double[:, ::1] av, const double[::1] bv, double rank_tol,
                     double[:, ::1] zv, double[:, :, ::1] jv, double[:, ::1] outv,
                     double[::1] fwd, double[::1] g, double[::1] vi, double[:, ::1] p,
                     double[:, ::1] bw, double[:, ::1] w, double[::1] sig2) noexcept nogil:
    """Writes z and the velocity; 0 on success, 1 if the Jacobi sweep fails."""
    cdef Py_ssize_t n = jv.shape[0], o = jv.shape[1], d = jv.shape[2]
    cdef Py_ssize_t i, k, c, m = n * o
    cdef double acc
    _mlp_forward(a1, a2, xv, hidden, head, zv, jv, fwd)
    for k in range(m):
        acc = bv[k]
        for c in range(m):
            acc = acc + av[k, c] * zv[c // o, c % o]
        g[k] = acc
    for i in range(n):
        for c in range(d):
            acc = 0.0
            for k in range(o):
                acc = acc + jv[i, k, c] * g[i * o + k]
            vi[c] = acc
        if _gram_pinv(jv[i], rank_tol, p, bw, w, sig2) != 0:
            return 1
        for k in range(d):
            acc = 0.0
            for c in range(d):
                acc = acc + p[k, c] * vi[c]
            outv[i, k] = -acc
    return 0


cdef bint _finite(const double[:, ::1] v) noexcept nogil:
    cdef Py_ssize_t i, k
    cdef double s = 0.0
    for i in range(v.shape[0]):
        for k in range(v.shape[1]):
            s += v[i, k] * 0.0
    # inf * 0 and nan * 0 are nan, so s stays 0 only for finite entries
    return s == 0.0


cdef bint _in_domain(const double[:, ::1] z, int simplex, double tol) noexcept nogil:
    cdef Py_ssize_t i, k
    cdef double s
    for i in range(z.shape[0]):
        s = 0.0
        for k in range(z.shape[1]):
            if z[i, k] < -tol or (not simplex and z[i, k] > 1.0 + tol):
                return False
            s += z[i, k]
        if simplex and fabs(s - 1.0) > tol:
            return False
    return True


cdef class _Flow:
    """Preallocated state for repeated affine right-hand-side evaluations."""
    cdef const double[:, :, ::1] a1
    cdef const double[:, :, ::1] a2
    cdef const double[:, ::1] av
    cdef const double[::1] bv
    cdef int hidden, head
    cdef double rank_tol
    cdef public object z, jac
    cdef double[:, ::1] zv
    cdef double[:, :, ::1] jv
    cdef double[::1] fwd, g, vi, sig2
    cdef double[:, ::1] p, bw, w

    def __init__(self, w1, w2, int hidden, int head, a, b, double rank_tol):
        self.a1 = np.ascontiguousarray(w1, dtype=np.float64)
        self.a2 = np.ascontiguousarray(w2, dtype=np.float64)
        self.av = np.ascontiguousarray(a, dtype=np.float64)
        self.bv = np.ascontiguousarray(b, dtype=np.float64)
        cdef Py_ssize_t n = self.a1.shape[0], h = self.a1.shape[1], d = self.a1.shape[2]
        cdef Py_ssize_t k = self.a2.shape[1]
        cdef Py_ssize_t o = k + 1 if head == 3 else k
        if self.av.shape[0] != n * o or self.av.shape[1] != n * o or self.bv.shape[0] != n * o:
            raise ValueError("affine field does not match the latent profile size")
        cdef Py_ssize_t r = min(o, d)
        self.hidden, self.head, self.rank_tol = hidden, head, rank_tol
        self.z = np.empty((n, o))
        self.jac = np.empty((n, o, d))
        self.zv, self.jv = self.z, self.jac
        self.fwd = np.empty(2 * h + o + o * d + o * o)
        self.g = np.empty(n * o)
        self.vi = np.empty(d)
        self.p = np.empty((d, d))
        self.bw = np.empty((d if o <= d else o, r))
        self.w = np.empty((r, r))
        self.sig2 = np.empty(r)

    cdef int rhs(self, const double[:, ::1] xv, double[:, ::1] outv) noexcept nogil:
        return _affine_rhs(self.a1, self.a2, xv, self.hidden, self.head, self.av, self.bv,
                           self.rank_tol, self.zv, self.jv, outv, self.fwd, self.g, self.vi,
                           self.p, self.bw, self.w, self.sig2)

    cdef void forward(self, const double[:, ::1] xv) noexcept nogil:
        _mlp_forward(self.a1, self.a2, xv, self.hidden, self.head, self.zv, self.jv, self.fwd)


def affine_velocity(w1, w2, x, int hidden, int head, a, b, double rank_tol):
    """Flow velocity ``-P_i J_i^T g_i`` for an affine field ``g = a @ vec(z) + b``; returns (velocity, z)."""
    cdef _Flow f = _Flow(w1, w2, hidden, head, a, b, rank_tol)
    cdef const double[:, ::1] xv = np.ascontiguousarray(x, dtype=np.float64)
    out = np.empty((xv.shape[0], xv.shape[1]))
    cdef double[:, ::1] outv = out
    cdef int status
    with nogil:
        status = f.rhs(xv, outv)
    if status != 0:
        raise IterationLimit(f"Jacobi sweep did not converge in {MAX_SWEEPS} sweeps")
    return out, f.z


cdef int _stage(_Flow f, const double[:, ::1] x, const double[:, ::1] k, double h,
                double[:, ::1] xt, double[:, ::1] out, int simplex, double tol) noexcept nogil:
    cdef Py_ssize_t i, c
    for i in range(x.shape[0]):
        for c in range(x.shape[1]):
            xt[i, c] = x[i, c] + h * k[i, c]
    if f.rhs(xt, out) != 0:
        return 4
    if not (_finite(f.zv) and _finite(out)):
        return 2
    if not _in_domain(f.zv, simplex, tol):
        return 3
    return 0


def affine_flow(w1, w2, x0, int hidden, int head, a, b, z_star, double dt, Py_ssize_t steps,
                Py_ssize_t record_every, int simplex, double tol, double rank_tol):
    """RK4 for the affine-field flow; returns (steps, states, energies, status, failed_step).

    ``status`` is 0 (ok), 1 (non-finite state), 2 (non-finite latent image)
    or 3 (latent point outside the domain); records stop before the failure.
    """
    cdef _Flow f = _Flow(w1, w2, hidden, head, a, b, rank_tol)
    x_arr = np.array(x0, dtype=np.float64, order="C")
    cdef double[:, ::1] x = x_arr
    cdef Py_ssize_t n = x.shape[0], d = x.shape[1], o = f.zv.shape[1]
    cdef const double[:, ::1] zs = np.ascontiguousarray(z_star, dtype=np.float64).reshape(n, o)
    cdef Py_ssize_t total = steps // record_every + 1 + (1 if steps % record_every else 0)
    ks = np.empty(total, dtype=np.int64)
    xs = np.empty((total, n, d))
    es = np.empty(total)
    cdef cnp.int64_t[::1] ksv = ks
    cdef double[:, :, ::1] xsv = xs
    cdef double[::1] esv = es
    cdef double[:, ::1] k1 = np.empty((n, d)), k2 = np.empty((n, d))
    cdef double[:, ::1] k3 = np.empty((n, d)), k4 = np.empty((n, d))
    cdef double[:, ::1] xt = np.empty((n, d))
    cdef Py_ssize_t step = 0, rec = 0, i, c
    cdef int status = 0, jacobi = 0
    cdef double e, h6 = dt / 6.0
    with nogil:
        while True:
            # k1 at the current state; its z doubles as the latent point for the record
            if step < steps:
                jacobi = f.rhs(x, k1)
                if jacobi != 0:
                    break
                if not (_finite(f.zv) and _finite(k1)):
                    status = 2
                    break
            else:
                f.forward(x)
                if not _finite(f.zv):
                    status = 2
                    break
            if not _in_domain(f.zv, simplex, tol):
                status = 3
                break
            if step % record_every == 0 or step == steps:
                e = 0.0
                for i in range(n):
                    for c in range(o):
                        e += (f.zv[i, c] - zs[i, c]) * (f.zv[i, c] - zs[i, c])
                ksv[rec] = step
                xsv[rec, :, :] = x
                esv[rec] = 0.5 * e
                rec += 1
            if step == steps:
                break
            step += 1
            status = _stage(f, x, k1, 0.5 * dt, xt, k2, simplex, tol)
            if status == 0:
                status = _stage(f, x, k2, 0.5 * dt, xt, k3, simplex, tol)
            if status == 0:
                status = _stage(f, x, k3, dt, xt, k4, simplex, tol)
            if status != 0:
                break
            for i in range(n):
                for c in range(d):
                    x[i, c] = x[i, c] + h6 * (k1[i, c] + 2.0 * k2[i, c] + 2.0 * k3[i, c] + k4[i, c])
            if not _finite(x):
                status = 1
                break
    if jacobi != 0 or status == 4:
        raise IterationLimit(f"Jacobi sweep did not converge in {MAX_SWEEPS} sweeps")
    return ks[:rec], xs[:rec], es[:rec], status, step
