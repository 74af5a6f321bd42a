import itertools

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from phgd import games
from phgd.errors import DomainViolation, ShapeMismatch, ValidationError

SUITE = ("MatchingPennies", "RPS", "Shapley", "ElFarol", "KLdemo")


def brute_tail(p, c):
    total = 0.0
    for bits in itertools.product((0, 1), repeat=len(p)):
        if sum(bits) >= c:
            total += np.prod([q if b else 1 - q for q, b in zip(p, bits)])
    return total


def tangent(z, v, domain):
    return domain.tangent_projection(z, v)


def test_reg_grad():
    assert not games.reg_grad(np.array([0.2, 0.3]), np.array([0.2, 0.3]), 0.75).any()
    assert not games.reg_grad(np.array([0.9, 0.3]), np.array([0.2, 0.3]), 0.0).any()
    assert np.allclose(games.reg_grad(np.array([1.0, 1.0]), np.array([0.5, 0.5]), 0.75), [0.375, 0.375])
    with pytest.raises(ShapeMismatch):
        games.reg_grad(np.zeros(2), np.zeros(3), 1.0)


def test_field_mp_examples():
    assert np.allclose(games.field_mp([[0.5], [0.5]]), 0.0)
    assert np.allclose(games.field_mp([[1.0], [1.0]], 0.75), [[-1.625], [2.375]])
    assert np.allclose(games.field_mp([[0.5], [1.0]], 0.0), [[-2.0], [0.0]])
    with pytest.raises(DomainViolation):
        games.field_mp([[1.1], [0.5]])
    games.field_mp([[1.0 + 5e-10], [0.5]])  # within tolerance


def test_field_rps_examples(rng):
    assert np.allclose(games.field_rps(np.full((2, 3), 1 / 3)), 0.0)
    z1 = rng.dirichlet(np.ones(3))
    g = games.field_rps(np.array([z1, [1.0, 0.0, 0.0]]), mu=0.0)
    assert np.allclose(g[0], -np.array([0.0, 1.0, -1.0]))
    with pytest.raises(DomainViolation):
        games.field_rps(np.array([[0.5, 0.5, 0.5], [1 / 3, 1 / 3, 1 / 3]]))


def test_field_shapley_examples():
    g = games.make_game("Shapley")
    z = np.full((2, 3), 1 / 3)
    raw = games.field_shapley(z, 0.2, mu=0.0)
    assert np.allclose(raw[0], -(1.2) / 3) and np.allclose(raw[1], -(0.8) / 3)
    assert np.linalg.norm(tangent(z, -g.field(z), g.domain)) <= 1e-12
    a, _ = games.shapley_matrices(1e-300)
    assert np.allclose(a, np.eye(3))


def test_shapley_beta_range():
    with pytest.raises(ValidationError):
        games.make_game("Shapley", beta=1.0)


def test_poisson_binomial_examples(rng):
    assert games.poisson_binomial_tail([0.3, 0.9], 0) == 1.0
    assert games.poisson_binomial_tail([0.5, 0.5], 1) == pytest.approx(0.75, abs=1e-15)
    assert games.poisson_binomial_tail([0.5, 0.5], 3) == 0.0
    p = rng.uniform(0, 1, 12)
    for c in range(14):
        assert abs(games.poisson_binomial_tail(p, c) - brute_tail(p, c)) <= 1e-12


def test_field_elfarol_examples():
    z = np.full((3, 1), 0.3)
    assert np.allclose(games.field_elfarol(z, 2, (0.5, 0.5, 0.5), 0.5), 0.5 * (0.3 - 2 / 3))
    # hand evaluation with the loss taken as the expected payoff itself
    g = games.field_elfarol(np.ones((2, 1)), 1, (0.0, -1.0, 1.0), 0.5, literal_loss=True)
    assert g[0, 0] == pytest.approx(-0.75)
    # the default treats payoffs as utilities, flipping the payoff part only
    g = games.field_elfarol(np.ones((2, 1)), 1, (0.0, -1.0, 1.0), 0.5)
    assert g[0, 0] == pytest.approx(1.25)


def test_elfarol_validation():
    with pytest.raises(ValidationError):
        games.make_game("ElFarol", S=0.0, B=0.5)
    with pytest.raises(ValidationError):
        games.make_game("ElFarol", capacity=40)


def test_elfarol_equilibrium_is_fixed_point():
    g = games.make_game("ElFarol")
    z = g.z_star
    assert np.all((z > 0) & (z < 1))
    assert np.abs(g.field(z)).max() <= 1e-9
    assert np.abs(z - g.nominal_equilibrium).max() > 1e-3


def test_field_kldemo_examples():
    g = games.make_game("KLdemo")
    p = games.KL_TARGET[None, :]
    assert np.allclose(g.field(p), 1.0)
    assert np.linalg.norm(tangent(p, -g.field(p), g.domain)) <= 1e-12
    u = np.full((1, 3), 1 / 3)
    assert np.allclose(g.field(u), np.log((1 / 3) / games.KL_TARGET) + 1)
    with pytest.raises(DomainViolation):
        g.field(np.array([[1.0, 0.0, 0.0]]))


def test_unknown_game():
    with pytest.raises(ValidationError):
        games.make_game("Chess")
    with pytest.raises(ValidationError):
        games.make_game("RPS", beta=0.1)


@pytest.mark.parametrize("name", SUITE)
def test_field_vanishes_at_equilibrium(name):
    g = games.make_game(name)
    z = g.z_star
    assert np.linalg.norm(tangent(z, -g.field(z), g.domain)) <= 1e-9


def loss_grad_fd(game, z, h=1e-6):
    """Each player's own-coordinate loss gradient by central differences along tangent directions."""
    out = np.zeros_like(z)
    k = z.shape[1]
    if game.domain.kind == "simplex":
        # differentiate along e_j - mean, then compare tangential parts only
        dirs = np.eye(k) - 1.0 / k
    else:
        dirs = np.eye(k)
    for i in range(z.shape[0]):
        for j, d in enumerate(dirs):
            zp, zm = z.copy(), z.copy()
            zp[i] += h * d
            zm[i] -= h * d
            out[i, j] = (game.losses(zp)[i] - game.losses(zm)[i]) / (2 * h)
    return out


@pytest.mark.parametrize("name", SUITE)
def test_field_is_loss_gradient(name, rng):
    g = games.make_game(name)
    k = g.dim
    for _ in range(20):
        z = g.domain.sample(rng, g.n_players)
        if g.domain.kind == "simplex":
            z = 0.8 * z + 0.2 / k  # keep clear of the boundary
            proj = np.eye(k) - 1.0 / k
            expect = g.field(z) @ proj
        else:
            z = 0.1 + 0.8 * z
            expect = g.field(z)
        assert np.abs(loss_grad_fd(g, z) - expect).max() <= 1e-7 * (1 + np.abs(expect).max())


def test_monotonicity_probe_examples():
    lo, bad = games.monotonicity_probe(games.make_game("MatchingPennies"), 1000, 0)
    assert lo >= 0.75 - 1e-9 and bad == 0
    lo, _ = games.monotonicity_probe(games.make_game("MatchingPennies", mu=0.0), 1000, 0)
    assert lo >= -1e-9
    lo, bad = games.monotonicity_probe(games.make_game("RPS"), 1000, 0)
    assert lo >= 0.2 - 1e-6 and bad == 0
    for name in SUITE:
        lo, _ = games.monotonicity_probe(games.make_game(name), 50, 1)
        assert np.isfinite(lo)


def test_domain_project_and_tangent(rng):
    dom = games.LatentDomain("simplex", 3)
    z = dom.project(rng.standard_normal((2, 3)))
    assert dom.contains(z)
    v = rng.standard_normal((2, 3))
    t = dom.tangent_projection(z, v)
    assert np.allclose(t.sum(axis=1), 0.0, atol=1e-12)
    box = games.LatentDomain("box", 1)
    assert np.array_equal(box.tangent_projection(np.array([[0.5]]), np.array([[2.0]])), [[2.0]])
    assert box.tangent_projection(np.array([[1.0]]), np.array([[2.0]]))[0, 0] == 0.0


@settings(max_examples=100, deadline=None)
@given(st.lists(st.floats(0, 1), min_size=1, max_size=12), st.integers(0, 13),
       st.integers(0, 11), st.floats(0, 1))
def test_property_poisson_binomial(p, c, idx, bump):
    c = min(c, len(p) + 1)
    t = games.poisson_binomial_tail(p, c)
    assert abs(t - brute_tail(p, c)) <= 1e-12
    if c <= len(p):
        assert games.poisson_binomial_tail(p, c + 1) <= t + 1e-15
    q = list(p)
    i = idx % len(q)
    q[i] = max(q[i], bump)
    assert games.poisson_binomial_tail(q, c) >= t - 1e-15


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_property_strong_monotonicity_on_tangent_pairs(seed):
    rng = np.random.default_rng(seed)
    for name, mu in (("MatchingPennies", 0.75), ("RPS", 0.2)):
        g = games.make_game(name)
        z, zp = g.domain.sample(rng, 2), g.domain.sample(rng, 2)
        d = z - zp
        if np.sum(d * d) > 1e-20:
            assert np.sum((g.field(z) - g.field(zp)) * d) >= (mu - 1e-9) * np.sum(d * d)


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_property_affine_form_matches_field(seed):
    rng = np.random.default_rng(seed)
    for name in ("MatchingPennies", "RPS", "Shapley"):
        g = games.make_game(name)
        a, b = g.affine
        z = g.domain.sample(rng, g.n_players)
        assert np.allclose(a @ z.ravel() + b, g.field(z).ravel(), rtol=1e-13, atol=1e-14)


def test_affine_absent_for_nonlinear_games():
    assert games.make_game("ElFarol").affine is None
    assert games.make_game("KLdemo").affine is None
