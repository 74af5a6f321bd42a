import numpy as np
import pytest

from phgd import kernels, repmaps

BACKENDS = kernels.backends()
needs_two = pytest.mark.skipif(len(BACKENDS) < 2, reason="compiled extension not built")


def test_backend_selected_at_import():
    assert kernels.BACKEND in BACKENDS
    assert "python" in BACKENDS


def test_use_backend_restores():
    before = kernels.BACKEND
    with kernels.use_backend("python"):
        assert kernels.BACKEND == "python"
    assert kernels.BACKEND == before


def test_unknown_backend():
    with pytest.raises(ValueError):
        with kernels.use_backend("fortran"):
            pass


@needs_two
@pytest.mark.parametrize("arch,n", [("MP", 2), ("RPS", 2), ("Shapley", 2), ("ElFarol", 30), ("KLdemo", 1)])
def test_forward_parity(arch, n, rng):
    maps = repmaps.sample_product(arch, n, 5)
    x = rng.uniform(-3, 3, (n, maps.input_dim))
    c, p = BACKENDS["cython"], BACKENDS["python"]
    zc, jc = c.mlp_forward_batch(maps._w1, maps._w2, x, *maps._codes)
    zp, jp = p.mlp_forward_batch(maps._w1, maps._w2, x, *maps._codes)
    assert np.allclose(zc, zp, rtol=1e-13, atol=1e-15)
    assert np.allclose(jc, jp, rtol=1e-12, atol=1e-15)


@needs_two
def test_precondition_parity(rng):
    c, p = BACKENDS["cython"], BACKENDS["python"]
    for o, d in [(1, 1), (3, 5), (1, 5), (2, 2), (3, 3)]:
        jac = rng.standard_normal((4, o, d))
        jac[0, -1] = 0.0  # rank deficient player
        v = rng.standard_normal((4, d))
        assert np.allclose(c.precondition_batch(jac, v, 1e-12), p.precondition_batch(jac, v, 1e-12),
                           rtol=1e-10, atol=1e-12)
        assert np.allclose(c.gram_pinv_batch(jac, 1e-12), p.gram_pinv_batch(jac, 1e-12),
                           rtol=1e-10, atol=1e-12)


@needs_two
def test_gram_pinv_matches_numpy(rng):
    for name, mod in BACKENDS.items():
        j = rng.standard_normal((3, 5))
        assert np.allclose(mod.gram_pinv(j, 1e-12), np.linalg.pinv(j.T @ j), atol=1e-9), name


@needs_two
def test_jacobi_tiny_entries_parity():
    a = np.array([[1e-150, 2e-151], [3e-151, -1e-150], [0.0, 4e-152]])
    for mod in BACKENDS.values():
        b, w = mod.jacobi_columns(a)
        assert np.allclose(b @ w.T, a, rtol=0, atol=1e-160)
        assert np.allclose(w.T @ w, np.eye(2), atol=1e-12)


@needs_two
def test_poisson_binomial_parity(rng):
    c, p = BACKENDS["cython"], BACKENDS["python"]
    z = rng.uniform(0, 1, 30)
    for cap in (0, 1, 7, 18, 30):
        assert abs(c.poibin_tail(z, cap) - p.poibin_tail(z, cap)) <= 1e-14
        assert np.allclose(c.loo_tails(z, cap), p.loo_tails(z, cap), atol=1e-14)


@needs_two
@pytest.mark.parametrize("name,arch", [("MatchingPennies", "MP"), ("RPS", "RPS"), ("Shapley", "Shapley")])
def test_affine_kernel_parity(name, arch, rng):
    from phgd import games
    g = games.make_game(name)
    maps = repmaps.sample_product(arch, g.n_players, 4)
    x = rng.uniform(-0.5, 0.5, (g.n_players, maps.input_dim))
    c, p = BACKENDS["cython"], BACKENDS["python"]
    vc, zc = c.affine_velocity(maps._w1, maps._w2, x, *maps._codes, *g.affine, 1e-12)
    vp, zp = p.affine_velocity(maps._w1, maps._w2, x, *maps._codes, *g.affine, 1e-12)
    assert np.allclose(zc, zp, rtol=1e-13, atol=1e-15)
    assert np.allclose(vc, vp, rtol=1e-10, atol=1e-13)
    args = (maps._w1, maps._w2, x, *maps._codes, *g.affine, g.z_star, 1e-2, 30, 4,
            int(g.domain.kind == "simplex"), 1e-9, 1e-12)
    kc, xc, ec, sc, _ = c.affine_flow(*args)
    kp, xp, ep, sp, _ = p.affine_flow(*args)
    assert sc == sp == 0
    assert np.array_equal(kc, kp) and list(kc) == [0, 4, 8, 12, 16, 20, 24, 28, 30]
    assert np.allclose(xc, xp, rtol=1e-10, atol=1e-12) and np.allclose(ec, ep, rtol=1e-10, atol=1e-14)
