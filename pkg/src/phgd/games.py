"""Latent games: per-player loss gradients, domains and reference equilibria.

Latent profiles are arrays of shape ``(n_players, dim)``; every player in a
game shares one latent domain.
"""
from dataclasses import dataclass
from functools import cached_property

import math

import numpy as np

from . import kernels
from .errors import DomainViolation, IterationLimit, ShapeMismatch, ValidationError

DOMAIN_TOL = 1e-9

RPS_MATRIX = np.array([[0.0, -1.0, 1.0], [1.0, 0.0, -1.0], [-1.0, 1.0, 0.0]])
KL_TARGET = np.array([1 / 2, 1 / 3, 1 / 6])


def _project_simplex(v):
    """Euclidean projection of a vector onto the probability simplex."""
    u = np.sort(v)[::-1]
    css = np.cumsum(u) - 1.0
    idx = np.arange(1, v.size + 1)
    rho = np.nonzero(u - css / idx > 0)[0][-1]
    theta = css[rho] / (rho + 1.0)
    return np.maximum(v - theta, 0.0)


def _simplex_cone_projection(v, active):
    """Project ``v`` onto ``{u : sum(u) = 0, u[active] >= 0}``."""
    if not active.any():
        return v - v.mean()
    # the shift lam solves sum(v[free] - lam) + sum(max(v[active] - lam, 0)) = 0,
    # piecewise linear with breakpoints at the active entries
    free = v[~active]
    top = np.sort(v[active])[::-1]
    total, count = free.sum(), free.size
    for k in range(top.size + 1):
        if count + k:
            lam = (total + top[:k].sum()) / (count + k)
            if (k == 0 or top[k - 1] >= lam) and (k == top.size or top[k] <= lam):
                break
    else:
        return np.zeros_like(v)  # every coordinate active: the cone is {0}
    u = v - lam
    u[active] = np.maximum(u[active], 0.0)
    return u


@dataclass(frozen=True)
class LatentDomain:
    """``box``: the cube [0,1]^dim; ``simplex``: the (dim-1)-simplex in R^dim."""

    kind: str
    dim: int

    def __post_init__(self):
        if self.kind not in ("box", "simplex"):
            raise ValueError(f"unknown domain kind {self.kind!r}")

    def violation(self, z):
        z = np.asarray(z, dtype=np.float64)
        out = np.max(np.maximum(-z, 0.0), initial=0.0)
        if self.kind == "box":
            return max(out, np.max(np.maximum(z - 1.0, 0.0), initial=0.0))
        return max(out, np.max(np.abs(z.sum(axis=-1) - 1.0), initial=0.0))

    def contains(self, z, tol=DOMAIN_TOL):
        return self.violation(z) <= tol

    def check(self, z):
        z = np.asarray(z, dtype=np.float64)
        if z.shape[-1] != self.dim:
            raise ShapeMismatch(f"latent dim {z.shape[-1]} != {self.dim}")
        # plain floats: profiles are tiny and numpy reductions dominate the cost
        rows = z.reshape(-1, self.dim).tolist()
        flat = [t for r in rows for t in r]
        ok = math.isfinite(math.fsum(flat)) and min(flat) >= -DOMAIN_TOL
        if ok and self.kind == "box":
            ok = max(flat) <= 1.0 + DOMAIN_TOL
        elif ok:
            ok = all(abs(math.fsum(r) - 1.0) <= DOMAIN_TOL for r in rows)
        if not ok:
            raise DomainViolation(f"latent point outside the {self.kind} domain")
        return z

    def sample(self, rng, n_players):
        if self.kind == "box":
            return rng.uniform(0.0, 1.0, (n_players, self.dim))
        return rng.dirichlet(np.ones(self.dim), n_players)

    def project(self, z):
        z = np.asarray(z, dtype=np.float64)
        if self.kind == "box":
            return np.clip(z, 0.0, 1.0)
        return np.stack([_project_simplex(row) for row in z])

    def tangent_projection(self, z, v, tol=DOMAIN_TOL):
        """Project ``v`` onto the tangent cone of the domain at ``z`` (row-wise)."""
        z = np.asarray(z, dtype=np.float64)
        v = np.array(v, dtype=np.float64)
        if self.kind == "box":
            v = np.where(z <= tol, np.maximum(v, 0.0), v)
            return np.where(z >= 1.0 - tol, np.minimum(v, 0.0), v)
        return np.stack([_simplex_cone_projection(vi, zi <= tol) for zi, vi in zip(z, v)])


_BOX1 = LatentDomain("box", 1)
_SIMPLEX3 = LatentDomain("simplex", 3)


def reg_grad(z_i, z_star_i, mu):
    """Gradient of the quadratic regularizer (mu/2)|z_i - z*_i|^2."""
    z_i = np.asarray(z_i, dtype=np.float64)
    z_star_i = np.asarray(z_star_i, dtype=np.float64)
    if z_i.shape != z_star_i.shape:
        raise ShapeMismatch(f"{z_i.shape} vs {z_star_i.shape}")
    return mu * (z_i - z_star_i)


def _reg_value(z, center, mu):
    return 0.5 * mu * float(np.sum((z - center) ** 2))


class HiddenGame:
    """Base class for latent games.

    Subclasses set ``name``, ``mu``, ``domain``, ``n_players`` and
    ``center`` (the regularizer anchor) and implement ``field``/``losses``.
    """

    name = "game"
    mu = 0.0
    domain: LatentDomain
    n_players: int
    center: np.ndarray

    @property
    def dim(self):
        return self.domain.dim

    @property
    def z_star(self):
        return self.center

    def field(self, z):
        raise NotImplementedError

    def losses(self, z):
        raise NotImplementedError

    def params(self) -> dict:
        return {}

    # (A, b) with field(z) = A @ z.ravel() + b for affine games, else None
    affine = None

    def _check(self, z):
        z = np.asarray(z, dtype=np.float64)
        if z.shape != (self.n_players, self.dim):
            raise ShapeMismatch(f"{self.name} expects latent profile {(self.n_players, self.dim)}, got {z.shape}")
        return self.domain.check(z)


def field_mp(z, mu=0.75):
    z = np.asarray(z, dtype=np.float64)
    if z.shape != (2, 1):
        raise ShapeMismatch(f"Matching Pennies profile must be (2, 1), got {z.shape}")
    _BOX1.check(z)
    z1, z2 = float(z[0, 0]), float(z[1, 0])
    out = np.empty((2, 1))
    out[0, 0] = -2.0 * (2 * z2 - 1) + mu * (z1 - 0.5)
    out[1, 0] = 2.0 * (2 * z1 - 1) + mu * (z2 - 0.5)
    return out


class MatchingPennies(HiddenGame):
    name = "MatchingPennies"

    def __init__(self, mu=0.75):
        if mu < 0:
            raise ValidationError("mu must be non-negative")
        self.mu = float(mu)
        self.n_players = 2
        self.domain = LatentDomain("box", 1)
        self.center = np.full((2, 1), 0.5)

    def params(self):
        return {"mu": self.mu}

    @cached_property
    def affine(self):
        mu = self.mu
        return np.array([[mu, -4.0], [4.0, mu]]), np.array([2.0 - mu / 2, -2.0 - mu / 2])

    def field(self, z):
        return field_mp(z, self.mu)

    def losses(self, z):
        z = self._check(z)
        bilinear = (2 * z[0, 0] - 1) * (2 * z[1, 0] - 1)
        h = _reg_value(z, self.center, self.mu)
        return np.array([-bilinear + h, bilinear + h])


def _simplex_pair_check(z):
    z = np.asarray(z, dtype=np.float64)
    if z.shape != (2, 3):
        raise ShapeMismatch(f"expected a (2, 3) profile, got {z.shape}")
    return _SIMPLEX3.check(z)


def field_rps(z, mu=0.2, a=RPS_MATRIX):
    z = _simplex_pair_check(z)
    return _bimatrix_field(z, np.stack([-a, a.T]), mu)


def _bimatrix_affine(m, mu):
    a = np.zeros((6, 6))
    a[:3, 3:] = m[0]
    a[3:, :3] = m[1]
    a += mu * np.eye(6)
    return a, np.full(6, -mu / 3)


def _bimatrix_field(z, m, mu):
    # g_1 = m[0] z_2 + mu (z_1 - 1/3), g_2 = m[1] z_1 + mu (z_2 - 1/3)
    return np.matmul(m, z[::-1, :, None])[:, :, 0] + mu * (z - 1 / 3)


def shapley_matrices(beta):
    a = np.array([[1.0, 0.0, beta], [beta, 1.0, 0.0], [0.0, beta, 1.0]])
    b = np.array([[-beta, 1.0, 0.0], [0.0, -beta, 1.0], [1.0, 0.0, -beta]])
    return a, b


def field_shapley(z, beta=0.2, mu=0.2):
    z = _simplex_pair_check(z)
    a, b = shapley_matrices(beta)
    return _bimatrix_field(z, np.stack([-a, -b.T]), mu)


class RockPaperScissors(HiddenGame):
    name = "RPS"

    def __init__(self, mu=0.2):
        if mu < 0:
            raise ValidationError("mu must be non-negative")
        self.mu = float(mu)
        self.n_players = 2
        self.domain = LatentDomain("simplex", 3)
        self.center = np.full((2, 3), 1 / 3)
        self.a = RPS_MATRIX.copy()
        self._m = np.stack([-self.a, self.a.T])

    def params(self):
        return {"mu": self.mu}

    @cached_property
    def affine(self):
        return _bimatrix_affine(self._m, self.mu)

    def field(self, z):
        return _bimatrix_field(_simplex_pair_check(z), self._m, self.mu)

    def losses(self, z):
        z = self._check(z)
        v = z[0] @ self.a @ z[1]
        h = _reg_value(z, self.center, self.mu)
        return np.array([-v + h, v + h])


class Shapley(HiddenGame):
    name = "Shapley"

    def __init__(self, beta=0.2, mu=0.2):
        if not 0.0 < beta < 1.0:
            raise ValidationError("Shapley beta must lie in (0, 1)")
        if mu < 0:
            raise ValidationError("mu must be non-negative")
        self.beta = float(beta)
        self.mu = float(mu)
        self.n_players = 2
        self.domain = LatentDomain("simplex", 3)
        self.center = np.full((2, 3), 1 / 3)
        self.a, self.b = shapley_matrices(self.beta)
        self._m = np.stack([-self.a, -self.b.T])

    def params(self):
        return {"beta": self.beta, "mu": self.mu}

    @cached_property
    def affine(self):
        return _bimatrix_affine(self._m, self.mu)

    def field(self, z):
        return _bimatrix_field(_simplex_pair_check(z), self._m, self.mu)

    def losses(self, z):
        z = self._check(z)
        h = _reg_value(z, self.center, self.mu)
        return np.array([-z[0] @ self.a @ z[1] + h, -z[1] @ self.b.T @ z[0] + h])


def poisson_binomial_tail(probs, c: int) -> float:
    """P(X_1 + ... + X_n >= c) for independent X_j ~ Bernoulli(probs[j])."""
    probs = np.asarray(probs, dtype=np.float64).reshape(-1)
    if np.any(probs < 0) or np.any(probs > 1) or not np.all(np.isfinite(probs)):
        raise ValueError("probabilities must lie in [0, 1]")
    if not 0 <= c <= probs.size + 1:
        raise ValueError(f"c={c} outside [0, {probs.size + 1}]")
    return float(kernels.poibin_tail(probs, int(c)))


def field_elfarol(z, capacity, payoffs, mu=0.5, literal_loss=False):
    """El Farol latent field.

    ``payoffs = (S, B, G)``. With ``literal_loss`` each player's loss is the
    expected payoff ``S + z_i (G - S + T_i (B - G)) + h``; by default the
    loss is its negation (players maximize payoff), see :class:`ElFarol`.
    """
    z = np.asarray(z, dtype=np.float64)
    if z.ndim != 2 or z.shape[1] != 1:
        raise ShapeMismatch(f"El Farol profile must be (n, 1), got {z.shape}")
    _BOX1.check(z)
    s, b, g = payoffs
    n = z.shape[0]
    tails = kernels.loo_tails(z[:, 0], int(capacity))
    linear = g - s + tails * (b - g)
    sign = 1.0 if literal_loss else -1.0
    return (sign * linear + mu * (z[:, 0] - capacity / n))[:, None]


class ElFarol(HiddenGame):
    """Atomic El Farol bar game with a quadratic regularizer at C/n.

    ``z_star`` is the numerically computed equilibrium of the regularized
    game (damped best-response iteration); ``nominal_equilibrium`` is C/n.
    """

    name = "ElFarol"

    def __init__(self, n=30, capacity=18, S=0.5, B=0.0, G=1.0, mu=0.5, literal_loss=False):
        if not (B < S < G):
            raise ValidationError("El Farol payoffs must satisfy B < S < G")
        if not 0 <= capacity <= n:
            raise ValidationError("El Farol capacity must satisfy 0 <= C <= n")
        if n < 2:
            raise ValidationError("El Farol needs at least two players")
        if mu < 0:
            raise ValidationError("mu must be non-negative")
        self.n_players = int(n)
        self.capacity = int(capacity)
        self.payoffs = (float(S), float(B), float(G))
        self.mu = float(mu)
        self.literal_loss = bool(literal_loss)
        self.domain = LatentDomain("box", 1)
        self.center = np.full((self.n_players, 1), self.capacity / self.n_players)

    def params(self):
        s, b, g = self.payoffs
        return {"n": self.n_players, "capacity": self.capacity, "S": s, "B": b, "G": g,
                "mu": self.mu, "literal_loss": self.literal_loss}

    @property
    def nominal_equilibrium(self):
        return self.center

    @cached_property
    def _equilibrium(self):
        return damped_best_response(self)

    @property
    def z_star(self):
        return self._equilibrium

    def field(self, z):
        return field_elfarol(z, self.capacity, self.payoffs, self.mu, self.literal_loss)

    def losses(self, z):
        z = self._check(z)
        s, b, g = self.payoffs
        tails = kernels.loo_tails(z[:, 0], self.capacity)
        payoff = s + z[:, 0] * (g - s + tails * (b - g))
        h = _reg_value(z, self.center, self.mu)
        return (payoff if self.literal_loss else -payoff) + h


def damped_best_response(game: ElFarol, damping=0.1, tol=1e-15, max_iter=100_000):
    """Fixed point of z <- (1 - eta) z + eta BR(z) for the regularized El Farol game.

    Each player's loss is linear in z_i plus the regularizer, so the best
    response is a clipped affine map. The step ``eta`` is halved whenever
    the residual grows.
    """
    s, b, g = game.payoffs
    sign = 1.0 if game.literal_loss else -1.0
    center = game.capacity / game.n_players
    z = np.full(game.n_players, center)

    def best_response(z):
        tails = kernels.loo_tails(z, game.capacity)
        slope = sign * (g - s + tails * (b - g))
        if game.mu == 0:
            return np.where(slope > 0, 0.0, 1.0)
        return np.clip(center - slope / game.mu, 0.0, 1.0)

    eta = damping
    prev = np.inf
    for _ in range(max_iter):
        step = best_response(z) - z
        res = np.max(np.abs(step))
        if res <= tol:
            return z[:, None]
        if res > prev:
            eta *= 0.5
        prev = res
        z = z + eta * step
    raise IterationLimit(f"best-response iteration stalled at residual {prev:.3e}")


def field_kldemo(z):
    z = np.asarray(z, dtype=np.float64)
    if z.shape[-1] != 3:
        raise ShapeMismatch("KL demo latent points have 3 coordinates")
    if np.any(z <= 0):
        raise DomainViolation("KL demo field needs strictly positive coordinates")
    _SIMPLEX3.check(z)
    return np.log(z / KL_TARGET) + 1.0


class KLDemo(HiddenGame):
    """Single-player minimization of KL(z || (1/2, 1/3, 1/6)) over the simplex."""

    name = "KLdemo"

    def __init__(self):
        self.mu = 1.0
        self.n_players = 1
        self.domain = LatentDomain("simplex", 3)
        self.center = KL_TARGET[None, :].copy()

    def field(self, z):
        z = np.asarray(z, dtype=np.float64)
        if z.shape != (1, 3):
            raise ShapeMismatch(f"KL demo profile must be (1, 3), got {z.shape}")
        return field_kldemo(z)

    def losses(self, z):
        z = np.asarray(z, dtype=np.float64)
        field_kldemo(z)
        return np.array([float(np.sum(z[0] * np.log(z[0] / KL_TARGET)))])


class LinearGame(HiddenGame):
    """Affine test game ``g(z) = M (z - z*)`` on a box or simplex domain."""

    name = "Linear"

    def __init__(self, matrix, z_star, domain: LatentDomain, mu=None):
        self.z_ref = np.array(z_star, dtype=np.float64)
        self.n_players = self.z_ref.shape[0]
        self.domain = domain
        self.center = self.z_ref
        self.matrix = np.asarray(matrix, dtype=np.float64)
        size = self.z_ref.size
        if self.matrix.shape != (size, size):
            raise ShapeMismatch(f"matrix must be {(size, size)}")
        if mu is None:
            mu = float(np.linalg.eigvalsh(0.5 * (self.matrix + self.matrix.T)).min())
        self.mu = mu

    @cached_property
    def affine(self):
        return self.matrix, -self.matrix @ self.z_ref.ravel()

    def field(self, z):
        z = self._check(z)
        return (self.matrix @ (z - self.z_ref).ravel()).reshape(z.shape)

    def losses(self, z):
        # each player's loss whose z_i-gradient is the field's block
        z = self._check(z)
        d = (z - self.z_ref).ravel()
        out = []
        k = self.dim
        for i in range(self.n_players):
            rows = slice(i * k, (i + 1) * k)
            own = d[rows]
            block = self.matrix[rows]
            diag = block[:, rows]
            cross = block @ d - diag @ own
            out.append(0.5 * own @ (0.5 * (diag + diag.T)) @ own + cross @ own)
        return np.array(out)


GAMES = {
    "MatchingPennies": MatchingPennies,
    "RPS": RockPaperScissors,
    "Shapley": Shapley,
    "ElFarol": ElFarol,
    "KLdemo": KLDemo,
}

MAP_FOR_GAME = {
    "MatchingPennies": "MP",
    "RPS": "RPS",
    "Shapley": "Shapley",
    "ElFarol": "ElFarol",
    "KLdemo": "KLdemo",
}


def make_game(kind: str, **params) -> HiddenGame:
    try:
        cls = GAMES[kind]
    except KeyError:
        raise ValidationError(f"unknown game {kind!r}; known: {sorted(GAMES)}") from None
    try:
        return cls(**params)
    except TypeError as exc:
        raise ValidationError(f"bad parameters for {kind}: {exc}") from None


def monotonicity_probe(game: HiddenGame, pairs: int, seed) -> tuple[float, int]:
    """Sample domain pairs and return (min quotient, count below mu - 1e-9).

    The quotient is <g(z) - g(z'), z - z'> / |z - z'|^2. Pairs from a simplex
    domain already differ by a tangent displacement.
    """
    if pairs < 1:
        raise ValueError("pairs must be >= 1")
    rng = np.random.default_rng(seed)
    worst = np.inf
    violations = 0
    done = 0
    while done < pairs:
        z = game.domain.sample(rng, game.n_players)
        zp = game.domain.sample(rng, game.n_players)
        if game.name == "KLdemo":
            z = np.maximum(z, 1e-12) / np.maximum(z, 1e-12).sum(axis=1, keepdims=True)
            zp = np.maximum(zp, 1e-12) / np.maximum(zp, 1e-12).sum(axis=1, keepdims=True)
        dz = z - zp
        nrm2 = float(np.sum(dz * dz))
        if nrm2 <= 1e-24:
            continue
        q = float(np.sum((game.field(z) - game.field(zp)) * dz)) / nrm2
        worst = min(worst, q)
        violations += q < game.mu - 1e-9
        done += 1
    return worst, violations
