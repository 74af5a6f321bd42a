"""Invariant suites for every module, run by ``phgd verify``.

Each check returns ``(ok, detail)``. A check that raises counts as a
failure and the exception text becomes its detail. ``quick`` runs reduced
sample counts; ``full`` runs every check at its documented size.
"""
import tempfile
import time
from dataclasses import dataclass
from itertools import product
from pathlib import Path

import numpy as np

from . import bench, config, dynamics, games, kernels, merit, numkit, repmaps

SUITE_GAMES = ("MatchingPennies", "RPS", "Shapley", "ElFarol", "KLdemo")
STRONGLY_MONOTONE = ("MatchingPennies", "RPS")
# start box for flow checks; inside it the suite maps stay well conditioned
FLOW_INIT = (-0.5, 0.5)


@dataclass
class Result:
    module: str
    name: str
    ok: bool
    detail: str
    seconds: float


_CHECKS = []


def check(module, full_only=False):
    def deco(fn):
        _CHECKS.append((module, fn.__name__.replace("_", "-"), fn, full_only))
        return fn
    return deco


def _shapes():
    return list(product(range(1, 7), range(1, 7)))


def _random_matrix(rng, m, n, rank=None):
    a = rng.standard_normal((m, n))
    if rank is not None and rank < min(m, n):
        a = rng.standard_normal((m, rank)) @ rng.standard_normal((rank, n))
    return a


def _suite_maps(name, seed=0):
    game = games.make_game(name)
    return game, repmaps.sample_product(games.MAP_FOR_GAME[name], game.n_players, (seed, 0))


# ---------------------------------------------------------------- numkit

@check("numkit")
def svd_reconstruction(full):
    rng = np.random.default_rng(1)
    worst = 0.0
    for m, n in _shapes():
        for _ in range(10 if full else 2):
            a = _random_matrix(rng, m, n, rng.integers(1, min(m, n) + 1))
            u, s, v = numkit.svd(a)
            worst = max(worst, np.abs(u * s @ v.T - a).max() / (1 + s[0]))
    return worst <= 1e-10, f"max |U S V^T - M| / (1 + s_max) = {worst:.2e}"


def penrose_residual(a, p):
    return max(np.abs(a @ p @ a - a).max(), np.abs(p @ a @ p - p).max(),
               np.abs((a @ p).T - a @ p).max(), np.abs((p @ a).T - p @ a).max())


@check("numkit")
def penrose_conditions(full):
    rng = np.random.default_rng(2)
    count = 1000 if full else 200
    shapes = _shapes()
    worst = 0.0
    for k in range(count):
        m, n = shapes[k % len(shapes)]
        rank = rng.integers(1, min(m, n) + 1) if k % 3 == 0 else None
        a = _random_matrix(rng, m, n, rank)
        worst = max(worst, penrose_residual(a, numkit.pinv(a)))
    return worst <= 1e-9, f"{count} matrices, worst Penrose residual {worst:.2e}"


@check("numkit")
def pinv_involution(full):
    rng = np.random.default_rng(3)
    worst = 0.0
    for m, n in _shapes():
        a = _random_matrix(rng, m, n)
        worst = max(worst, np.abs(numkit.pinv(numkit.pinv(a)) - a).max())
    return worst <= 1e-8, f"max |pinv(pinv(M)) - M| = {worst:.2e}"


def charpoly_singular_values(a):
    """Singular values from the characteristic polynomial of ``a^T a`` (2x2 or 3x3)."""
    g = a.T @ a
    if g.shape == (2, 2):
        coeffs = [1.0, -np.trace(g), np.linalg.det(g)]
    else:
        c2 = g[0, 0] * g[1, 1] + g[0, 0] * g[2, 2] + g[1, 1] * g[2, 2] \
            - g[0, 1] * g[1, 0] - g[0, 2] * g[2, 0] - g[1, 2] * g[2, 1]
        coeffs = [1.0, -np.trace(g), c2, -np.linalg.det(g)]
    roots = np.sort(np.real(np.roots(coeffs)))[::-1]
    return np.sqrt(np.clip(roots, 0.0, None))


@check("numkit")
def sigma_vs_charpoly(full):
    rng = np.random.default_rng(4)
    worst = 0.0
    for d in (2, 3):
        for _ in range(50 if full else 10):
            a = rng.standard_normal((d, d))
            worst = max(worst, np.abs(numkit.svd(a).sigma - charpoly_singular_values(a)).max())
    return worst <= 1e-8, f"max singular value gap {worst:.2e}"


# ---------------------------------------------------------------- repmaps

@check("repmaps")
def jacobian_vs_fd(full):
    worst = 0.0
    points = 100 if full else 10
    for arch in repmaps.ARCHS:
        rng = np.random.default_rng(5)
        for s in range(3 if full else 1):
            m = repmaps.sample_map(arch, (s, 7))
            for _ in range(points):
                x = rng.uniform(-2.5, 2.5, m.input_dim)
                j = repmaps.map_jacobian(m, x)
                err = np.abs(j - repmaps.jacobian_fd(m, x, 1e-5)).max() / (1 + np.linalg.norm(j))
                worst = max(worst, err)
    return worst <= 1e-6, f"max scaled FD disagreement {worst:.2e}"


@check("repmaps")
def head_codomains(full):
    rng = np.random.default_rng(6)
    bad = []
    for arch in ("RPS", "Shapley", "KLdemo"):
        m = repmaps.sample_map(arch, 0)
        for _ in range(100 if full else 20):
            p = m(rng.uniform(-2.5, 2.5, m.input_dim))
            if abs(p.sum() - 1) > 1e-12 or p.min() <= 0:
                bad.append(arch)
            local = np.diag(p) - np.outer(p, p)
            if np.abs(local.sum(axis=1)).max() > 1e-12:
                bad.append(arch + " local")
    for arch in ("MP", "ElFarol"):
        m = repmaps.sample_map(arch, 0)
        for _ in range(100 if full else 20):
            z = m(rng.uniform(-2.5, 2.5, m.input_dim))
            if not (0 < z.min() and z.max() < 1):
                bad.append(arch)
    return not bad, "ok" if not bad else f"violations in {sorted(set(bad))}"


@check("repmaps")
def map_determinism(full):
    same = True
    for arch in repmaps.ARCHS:
        a, b = repmaps.sample_map(arch, 11), repmaps.sample_map(arch, 11)
        x = np.linspace(-1, 1, a.input_dim)
        za, ja = a.eval_jac(x)
        zb, jb = b.eval_jac(x)
        same &= np.array_equal(a.w1, b.w1) and np.array_equal(za, zb) and np.array_equal(ja, jb)
    return bool(same), "bit-identical" if same else "differs"


# ---------------------------------------------------------------- latent games

@check("latent-games")
def field_vanishes_at_equilibrium(full):
    worst = {}
    for name in SUITE_GAMES:
        g = games.make_game(name)
        worst[name] = merit.tgap_latent(g.z_star, g)
    ok = max(worst.values()) <= 1e-9
    return ok, ", ".join(f"{k} {v:.1e}" for k, v in worst.items())


def _tangent_dirs(dim, kind):
    if kind == "box":
        return list(np.eye(dim))
    return [e - f for e, f in zip(np.eye(dim)[:-1], np.eye(dim)[1:])]


def loss_gradient_error(game, z, h=1e-6):
    """Largest gap between field and central-difference loss derivatives (tangent directions)."""
    g = game.field(z)
    worst = 0.0
    for i in range(game.n_players):
        for d in _tangent_dirs(game.dim, game.domain.kind):
            zp, zm = z.copy(), z.copy()
            zp[i] += h * d
            zm[i] -= h * d
            fd = (game.losses(zp)[i] - game.losses(zm)[i]) / (2 * h)
            worst = max(worst, abs(fd - g[i] @ d))
    return worst


@check("latent-games")
def field_is_loss_gradient(full):
    worst = {}
    for name in SUITE_GAMES:
        g = games.make_game(name)
        rng = np.random.default_rng(8)
        pts = 100 if full else (3 if name == "ElFarol" else 10)
        w = 0.0
        for _ in range(pts):
            z = g.domain.sample(rng, g.n_players)
            z = 0.9 * z + 0.1 * g.center  # stay away from the boundary
            w = max(w, loss_gradient_error(g, z))
        worst[name] = w
    return max(worst.values()) <= 1e-7, ", ".join(f"{k} {v:.1e}" for k, v in worst.items())


def _probe(names, full):
    out = []
    ok = True
    for name in names:
        g = games.make_game(name)
        q, _ = games.monotonicity_probe(g, 1000 if full else 200, 0)
        ok &= q >= g.mu - 1e-6
        out.append(f"{name} {q:.4f} (mu {g.mu})")
    return bool(ok), ", ".join(out)


@check("latent-games")
def strong_monotonicity(full):
    return _probe(STRONGLY_MONOTONE, full)


@check("latent-games", full_only=True)
def strong_monotonicity_elfarol(full):
    return _probe(("ElFarol",), full)


def enumerate_tail(probs, c):
    total = 0.0
    for bits in product((0, 1), repeat=len(probs)):
        if sum(bits) >= c:
            total += np.prod([p if b else 1 - p for p, b in zip(probs, bits)])
    return total


@check("latent-games")
def poisson_binomial_exact(full):
    rng = np.random.default_rng(9)
    worst = 0.0
    for n in range(0, 13 if full else 9):
        for _ in range(5 if full else 2):
            p = rng.uniform(0, 1, n)
            for c in range(0, n + 2):
                worst = max(worst, abs(games.poisson_binomial_tail(p, c) - enumerate_tail(p, c)))
    return worst <= 1e-12, f"max |DP - enumeration| = {worst:.2e}"


@check("latent-games")
def poisson_binomial_monotone(full):
    rng = np.random.default_rng(10)
    ok = True
    for _ in range(200 if full else 40):
        n = int(rng.integers(1, 15))
        p = rng.uniform(0, 1, n)
        tails = [games.poisson_binomial_tail(p, c) for c in range(n + 2)]
        ok &= all(a >= b - 1e-15 for a, b in zip(tails, tails[1:]))
        k = int(rng.integers(n))
        q = p.copy()
        q[k] = min(1.0, q[k] + rng.uniform(0, 0.5))
        c = int(rng.integers(n + 1))
        ok &= games.poisson_binomial_tail(q, c) >= games.poisson_binomial_tail(p, c) - 1e-15
    return bool(ok), "monotone" if ok else "monotonicity violated"


# ---------------------------------------------------------------- dynamics

def projector_error(j):
    p = dynamics.precondition(j)
    m = j @ p @ j.T
    u, s, _ = numkit.svd(j)
    r = u[:, s > 1e-12 * max(s[0], 1e-300) * max(j.shape)]
    return max(np.abs(m @ m - m).max(), np.abs(m - m.T).max(), np.abs(m @ r - r).max())


@check("dynamics")
def right_inverse_identity(full):
    rng = np.random.default_rng(12)
    worst_full, worst_def = 0.0, 0.0
    for _ in range(100 if full else 20):
        o = int(rng.integers(1, 4))
        j = rng.standard_normal((o, int(rng.integers(o, 6))))
        worst_full = max(worst_full, np.abs(j @ dynamics.precondition(j) @ j.T - np.eye(o)).max())
    for name in ("RPS", "Shapley", "KLdemo"):
        game, maps = _suite_maps(name)
        for _ in range(50 if full else 10):
            x = rng.uniform(-1, 1, (maps.n_players, maps.input_dim))
            for j in maps.eval_jac(x)[1]:
                worst_def = max(worst_def, projector_error(j))
    ok = worst_full <= 1e-9 and worst_def <= 1e-9
    return ok, f"full rank {worst_full:.1e}, rank deficient {worst_def:.1e}"


def covariant_error(maps, x, z_hat):
    """max over players of |J P grad_x E - Pi(phi - z_hat)| / (1 + |phi - z_hat|)."""
    z, jac = maps.eval_jac(x)
    worst = 0.0
    for j, zi, zh in zip(jac, z, z_hat):
        r = zi - zh
        lhs = j @ dynamics.precondition(j) @ (j.T @ r)
        u, s, _ = numkit.svd(j)
        basis = u[:, s > 1e-12 * s[0] * max(j.shape)] if s[0] > 0 else u[:, :0]
        rhs = basis @ (basis.T @ r)
        worst = max(worst, np.linalg.norm(lhs - rhs) / (1 + np.linalg.norm(r)))
    return worst


@check("dynamics")
def covariant_preconditioning(full):
    rng = np.random.default_rng(13)
    worst = 0.0
    for name in SUITE_GAMES:
        game, maps = _suite_maps(name)
        for _ in range(100 if full else 10):
            x = rng.uniform(-2.5, 2.5, (maps.n_players, maps.input_dim))
            worst = max(worst, covariant_error(maps, x, game.domain.sample(rng, game.n_players)))
    return worst <= 1e-8, f"max relative residual {worst:.2e}"


@check("dynamics")
def equilibrium_is_fixed_point(full):
    worst = 0.0
    for name in ("MatchingPennies", "RPS", "Shapley"):
        game, maps = _suite_maps(name)
        x = np.zeros((maps.n_players, maps.input_dim))  # phi(0) = z* for these maps
        state = dynamics.init_state(x, maps)
        nxt = dynamics.phgd_step(state, game, maps, dynamics.StepSchedule())
        worst = max(worst, np.abs(nxt.x - x).max())
    return worst <= 1e-12, f"max displacement {worst:.1e}"


@check("dynamics")
def noise_unbiased(full):
    draws = 100_000 if full else 10_000
    sigma = 0.1
    game, maps = _suite_maps("RPS")
    x = np.full((maps.n_players, maps.input_dim), 0.3)
    state = dynamics.init_state(x, maps, seed=14)
    noise = dynamics.NoiseModel(sigma, 14)
    total = np.zeros((maps.n_players, maps.input_dim))
    for _ in range(draws):
        _, v, q = dynamics._oracle(state, game, noise)
        total += q - v
    dev = np.abs(total / draws).max()
    bound = 5 * sigma / np.sqrt(draws)
    return dev <= bound, f"{draws} draws, max |mean| {dev:.2e} vs bound {bound:.2e}"


@check("dynamics")
def flow_energy_nonincreasing(full):
    worst = -np.inf
    t_end = 5.0 if full else 1.0
    names = ("MatchingPennies", "RPS", "ElFarol") if full else ("MatchingPennies", "RPS")
    for name in names:
        for s in range(2 if full else 1):
            game, maps = _suite_maps(name, s)
            x0 = dynamics.sample_init(maps, (s, 1), *FLOW_INIT)
            tr = dynamics.phgf_integrate(x0, game, maps, 1e-3, t_end)
            worst = max(worst, np.diff(tr.energy).max())
    return worst <= 1e-10, f"largest per-step energy increase {worst:.2e}"


# ---------------------------------------------------------------- merit

@check("merit")
def merits_nonnegative_and_zero(full):
    rng = np.random.default_rng(15)
    ok = True
    for name in SUITE_GAMES:
        game, maps = _suite_maps(name)
        ok &= merit.energy(game.z_star, game.z_star) == 0.0
        ok &= merit.tgap_latent(game.z_star, game) <= 1e-9
        for _ in range(20 if full else 5):
            x = rng.uniform(-2.5, 2.5, (maps.n_players, maps.input_dim))
            z = maps(x)
            ok &= merit.err(x, maps, game.z_star) >= 0 and merit.tgap_latent(z, game) >= 0
            ok &= merit.tgap_control(x, game, maps) >= 0
    game, maps = _suite_maps("RPS")
    x = np.zeros((2, 5))
    ok &= merit.err(x, maps, game.z_star) <= 1e-30 and merit.tgap_control(x, game, maps) <= 1e-12
    return bool(ok), "ok" if ok else "negative merit or nonzero at equilibrium"


@check("merit")
def tangent_gap_detects_disequilibrium(full):
    rng = np.random.default_rng(16)
    smallest = np.inf
    for name in STRONGLY_MONOTONE:
        g = games.make_game(name)
        n = 0
        while n < (100 if full else 20):
            z = g.domain.sample(rng, g.n_players)
            if np.linalg.norm(z - g.z_star) < 1e-2:
                continue
            smallest = min(smallest, merit.tgap_latent(z, g))
            n += 1
    return smallest > 1e-6, f"smallest tgap away from z*: {smallest:.2e}"


@check("merit")
def sandwich_inequality(full):
    rng = np.random.default_rng(17)
    worst = 0.0
    for name in SUITE_GAMES:
        game, maps = _suite_maps(name)
        for _ in range(100 if full else 10):
            x = rng.uniform(-2.5, 2.5, (maps.n_players, maps.input_dim))
            lo, mid, hi = merit.sandwich(x, game, maps)
            scale = max(mid, 1e-300)
            worst = max(worst, (lo - mid) / scale, (mid - hi) / scale)
    return worst <= 1e-8, f"largest relative violation {worst:.2e}"


@check("merit")
def restricted_gap_monotone(full):
    game = games.make_game("RPS")
    rng = np.random.default_rng(18)
    ok = True
    for _ in range(3 if full else 1):
        z_hat = game.domain.sample(rng, 2)
        vals = [merit.gap_restricted(z_hat, game, k, refine_steps=5, seed=3) for k in (4, 16, 64)]
        ok &= all(a <= b for a, b in zip(vals, vals[1:]))
    return bool(ok), "nondecreasing in samples" if ok else f"decreased: {vals}"


def template_max(gamma, iters, seed=0):
    game, maps = _suite_maps("MatchingPennies", seed)
    x0 = dynamics.sample_init(maps, (seed, 1))
    rec = dynamics.run("PHGD", game, maps, x0, dynamics.StepSchedule("constant", gamma),
                       max_iters=iters, stop_tol=0.0, record_every=iters, record_full=True)
    return float(np.max(merit.template_residuals(rec, game.z_star)))


@check("merit")
def template_residuals_stable(full):
    iters = 2000 if full else 500
    a = template_max(0.01, iters)
    b = template_max(0.005, 2 * iters)
    ok = np.isfinite(a) and np.isfinite(b) and max(abs(a), abs(b)) <= 4 * max(min(abs(a), abs(b)), 1e-300)
    return bool(ok), f"max r_n {a:.3e} (step 0.01) vs {b:.3e} (step 0.005)"


# ---------------------------------------------------------------- bench-cli

_TINY = """
[game]
kind = "RPS"
[algorithm]
names = ["PHGD", "GD"]
[noise]
sigma = 0.05
[run]
max_iters = 50
record_every = 5
seeds = [0, 1, 2]
"""


@check("bench-cli")
def outputs_deterministic(full):
    cfg = config.parse_config(_TINY)
    with tempfile.TemporaryDirectory() as a, tempfile.TemporaryDirectory() as b:
        for d in (a, b):
            bench.cmd_run(cfg, d, workers=1)
            bench.cmd_bench(cfg, Path(d) / "bench", workers=1)
        files = sorted(p.relative_to(a) for p in Path(a).rglob("*.csv"))
        same = all((Path(a) / f).read_bytes() == (Path(b) / f).read_bytes() for f in files)
    return bool(same and files), f"{len(files)} files byte-identical" if same else "outputs differ"


@check("bench-cli")
def csv_schema_and_roundtrip(full):
    cfg = config.parse_config(_TINY)
    rec = bench.run_seed(cfg, "PHGD", 0)
    header, rows = bench.read_trajectory_text(bench.trajectory_csv(rec))
    ok = tuple(header) == bench.CSV_COLUMNS
    for row, parsed in zip(rec.rows, rows):
        ok &= all(float(p) == float(v) for v, p in zip(row, parsed))
    ok &= config.parse_config(config.serialize(cfg)) == cfg
    return bool(ok), "header and values round-trip" if ok else "schema or round-trip mismatch"


@check("bench-cli")
def percentiles_ordered(full):
    cfg = config.parse_config(_TINY)
    with tempfile.TemporaryDirectory() as d:
        rows, _ = bench.cmd_bench(cfg, d, workers=1)
    ok = all(p10 <= med <= p90 for _, _, med, p10, p90, _, _ in rows)
    return ok, f"{len(rows)} summary rows"


# ---------------------------------------------------------------- driver

def run_checks(level="quick", only=None):
    full = level == "full"
    results = []
    for module, name, fn, full_only in _CHECKS:
        if full_only and not full:
            continue
        if only and module not in only:
            continue
        t = time.perf_counter()
        try:
            ok, detail = fn(full)
        except Exception as exc:  # a crashing check is a failed check
            ok, detail = False, f"{type(exc).__name__}: {exc}"
        results.append(Result(module, name, bool(ok), detail, time.perf_counter() - t))
    return results


def format_table(results):
    width = max(len(r.module) + len(r.name) for r in results) + 3
    lines = []
    for r in results:
        tag = "PASS" if r.ok else "FAIL"
        # no wall-clock column: the report must be byte-identical across runs
        lines.append(f"{tag}  {(r.module + ' / ' + r.name).ljust(width)}  {r.detail}")
    n_fail = sum(not r.ok for r in results)
    lines.append(f"{len(results) - n_fail}/{len(results)} checks passed (backend: {kernels.BACKEND})")
    return "\n".join(lines)


def cmd_verify(level="quick", out=print) -> int:
    results = run_checks(level)
    out(format_table(results))
    return 0 if all(r.ok for r in results) else 1
