"""Convergence metrics and lemma-level checkers."""
from dataclasses import dataclass

import numpy as np

from . import numkit
from .errors import DomainViolation, MissingRecording, ShapeMismatch
from .games import HiddenGame, LatentDomain


@dataclass(frozen=True)
class MeritReport:
    err: float
    energy: float
    tgap_latent: float
    tgap_control: float
    gap_restricted: float
    sample_count: int


def energy(z, z_hat) -> float:
    """Half squared Euclidean distance between latent profiles."""
    z = np.asarray(z, dtype=np.float64)
    z_hat = np.asarray(z_hat, dtype=np.float64)
    if z.shape != z_hat.shape:
        raise ShapeMismatch(f"{z.shape} vs {z_hat.shape}")
    return 0.5 * float(np.sum((z - z_hat) ** 2))


def err(x, maps, z_star) -> float:
    """Latent equilibrium distance ``0.5 |phi(x) - z*|^2``."""
    return energy(maps(x), z_star)


def tgap_from_field(z, g, domain: LatentDomain) -> float:
    return float(np.sqrt(np.sum(domain.tangent_projection(z, -np.asarray(g)) ** 2)))


def tgap_latent(z, game: HiddenGame) -> float:
    """Norm of the tangent-cone projection of ``-g(z)``."""
    z = game.domain.check(z)
    return tgap_from_field(z, game.field(z), game.domain)


def tgap_control(x, game: HiddenGame, maps) -> float:
    """Euclidean norm of the control field ``V(x)``."""
    from .dynamics import control_field

    return numkit.norm2(control_field(game, maps, x))


def _effective_svd(j):
    u, s, v = numkit.svd(j)
    keep = s > numkit.DEFAULT_RANK_TOL * s[0] * max(j.shape) if s.size and s[0] > 0 else np.zeros(s.size, bool)
    return u[:, keep], s[keep]


def sandwich(x, game: HiddenGame, maps) -> tuple[float, float, float]:
    """Return ``(sigma_min * G, tgap_control, sigma_max * G)`` at ``x``.

    ``G`` is the norm of ``g`` projected onto the range of the block Jacobian,
    and the singular values are the nonzero ones of the Jacobians at ``x``.
    """
    z, jac = maps.eval_jac(x)
    g = game.field(z)
    proj2 = 0.0
    lo, hi = np.inf, 0.0
    ctrl2 = 0.0
    for j, gi in zip(jac, g):
        u, s = _effective_svd(j)
        pg = u.T @ gi
        proj2 += float(pg @ pg)
        ctrl2 += float(np.sum((j.T @ gi) ** 2))
        if s.size:
            lo, hi = min(lo, s[-1]), max(hi, s[0])
    gap = np.sqrt(proj2)
    if not np.isfinite(lo):
        lo = 0.0
    return lo * gap, float(np.sqrt(ctrl2)), hi * gap


def gap_restricted(z_hat, game: HiddenGame, samples=256, refine_steps=20, seed=0) -> float:
    """Monte-Carlo lower bound on ``sup_z <g(z), z_hat - z>`` over the latent domain.

    Samples are drawn in order from one generator; each sample that sets a
    new running maximum is refined by projected gradient ascent. The set of
    refined points for ``k`` samples is a prefix of the set for ``k' > k``,
    so the result never decreases as ``samples`` grows. ``z = z_hat`` is
    always a candidate, so the result is at least 0 for feasible ``z_hat``.
    """
    if samples < 1:
        raise ValueError("samples must be >= 1")
    z_hat = np.asarray(z_hat, dtype=np.float64)
    dom = game.domain
    rng = np.random.default_rng(seed)

    def objective(z):
        try:
            return float(np.sum(game.field(z) * (z_hat - z)))
        except DomainViolation:
            return -np.inf

    best = objective(z_hat) if dom.contains(z_hat) else -np.inf
    running = -np.inf
    for _ in range(samples):
        z = dom.sample(rng, game.n_players)
        val = objective(z)
        if val > running:
            running = val
            best = max(best, val, _ascend(objective, z, val, dom, refine_steps))
    return best


def _ascend(objective, z, val, dom, steps, h=1e-6):
    eta = 0.1
    for _ in range(steps):
        grad = np.zeros_like(z)
        for idx in np.ndindex(z.shape):
            e = np.zeros_like(z)
            e[idx] = h
            grad[idx] = (objective(dom.project(z + e)) - objective(dom.project(z - e))) / (2 * h)
        if not np.all(np.isfinite(grad)):
            break
        while eta > 1e-8:
            cand = dom.project(z + eta * grad)
            cval = objective(cand)
            if cval > val:
                z, val = cand, cval
                eta *= 1.5
                break
            eta *= 0.5
        else:
            break
    return val


def template_residuals(record, z_hat) -> np.ndarray:
    """Per-step ``[E_{n+1} - E_n + gamma_n g_n.(z_n - z_hat)] / gamma_n^2``.

    ``record`` is a :class:`~phgd.dynamics.TrajectoryRecord` produced with
    ``record_full=True``. Steps with ``gamma_n = 0`` are skipped.
    """
    steps = getattr(record, "steps", None)
    if not steps:
        raise MissingRecording("trajectory was run without record_full=True")
    z_hat = np.asarray(z_hat, dtype=np.float64)
    zs, gs, gammas = steps["z"], steps["g"], steps["gamma"]
    out = []
    for k, gamma in enumerate(gammas):
        if gamma == 0:
            continue
        e0 = energy(zs[k], z_hat)
        e1 = energy(zs[k + 1], z_hat)
        out.append((e1 - e0 + gamma * float(np.sum(gs[k] * (zs[k] - z_hat)))) / gamma ** 2)
    return np.array(out)


template_check = template_residuals


def merit_report(x, game: HiddenGame, maps, z_hat=None, samples=256, refine_steps=20, seed=0):
    z = maps(x)
    z_star = game.z_star
    z_hat = z_star if z_hat is None else z_hat
    return MeritReport(
        err=energy(z, z_star),
        energy=energy(z, z_hat),
        tgap_latent=tgap_latent(z, game),
        tgap_control=tgap_control(x, game, maps),
        gap_restricted=gap_restricted(z, game, samples, refine_steps, seed),
        sample_count=samples,
    )
