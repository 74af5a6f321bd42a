"""Time the compiled and numpy kernel backends on the shapes the experiments use.

    python benchmarks/bench_kernels.py [--repeat 5] [--csv out.csv]
"""
import argparse
import csv
import sys
import timeit

import numpy as np

from phgd import dynamics, games, kernels, repmaps

CASES = {
    # name: (arch, players)
    "MP": ("MP", 2),
    "RPS": ("RPS", 2),
    "ElFarol": ("ElFarol", 30),
}


def workloads(rng):
    """(label, callable factory) pairs; each factory takes a backend module."""
    out = []
    for name, (arch, n) in CASES.items():
        maps = repmaps.sample_product(arch, n, 0)
        x = rng.uniform(-2.5, 2.5, (n, maps.input_dim))
        w1, w2, codes = maps._w1, maps._w2, maps._codes
        _, jac = maps.eval_jac(x)
        v = rng.standard_normal((n, maps.input_dim))
        out.append((f"mlp_forward_batch[{name}]", lambda k, w1=w1, w2=w2, x=x, c=codes: k.mlp_forward_batch(w1, w2, x, *c)))
        out.append((f"precondition_batch[{name}]", lambda k, j=jac, v=v: k.precondition_batch(j, v, 1e-12)))
    rps = games.make_game("RPS")
    maps = repmaps.sample_product("RPS", 2, 0)
    x = rng.uniform(-0.5, 0.5, (2, maps.input_dim))
    args = (maps._w1, maps._w2, x, *maps._codes, *rps.affine)
    out.append(("affine_velocity[RPS]", lambda k: k.affine_velocity(*args, 1e-12)))
    flow = args + (rps.z_star, 1e-3, 100, 100, 1, 1e-9, 1e-12)
    out.append(("affine_flow[RPS,100 RK4 steps]", lambda k: k.affine_flow(*flow)))
    a = rng.standard_normal((6, 6))
    out.append(("jacobi_columns[6x6]", lambda k: k.jacobi_columns(a)))
    z = rng.uniform(0, 1, 30)
    out.append(("poibin_tail[n=30,c=18]", lambda k: k.poibin_tail(z, 18)))
    out.append(("loo_tails[n=30,c=18]", lambda k: k.loo_tails(z, 18)))
    return out


def trajectory(game_name, steps):
    """A full deterministic PHGD run, the unit the experiments actually repeat."""
    game = games.make_game(game_name)
    maps = repmaps.sample_product(games.MAP_FOR_GAME[game_name], game.n_players, 0)
    x0 = dynamics.sample_init(maps, 1, -0.5, 0.5)
    return lambda: dynamics.run("PHGD", game, maps, x0, max_iters=steps, stop_tol=0.0, record_every=steps)


def measure(fn, repeat):
    loops, _ = timeit.Timer(fn).autorange()
    best = min(timeit.repeat(fn, number=loops, repeat=repeat))
    return best / loops * 1e6


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    ap.add_argument("--csv", help="also write the table as CSV")
    args = ap.parse_args(argv)

    backends = kernels.backends()
    if "cython" not in backends:
        print("compiled extension not available; timing the numpy backend only", file=sys.stderr)
    rng = np.random.default_rng(0)
    rows = []
    for label, make in workloads(rng):
        times = {b: measure(lambda m=m: make(m), args.repeat) for b, m in backends.items()}
        speedup = times["python"] / times["cython"] if "cython" in times else float("nan")
        rows.append((label, times.get("cython", float("nan")), times["python"], speedup))

    for game_name, steps in (("RPS", 1000), ("ElFarol", 100)):
        run = trajectory(game_name, steps)
        times = {}
        for b in backends:
            with kernels.use_backend(b):
                times[b] = min(timeit.repeat(run, number=1, repeat=args.repeat)) / steps * 1e6
        speedup = times["python"] / times["cython"] if "cython" in times else float("nan")
        rows.append((f"PHGD step[{game_name}]", times.get("cython", float("nan")), times["python"], speedup))

    print(f"{'kernel':34s} {'cython us':>11s} {'python us':>11s} {'speedup':>8s}")
    for label, c, p, s in rows:
        print(f"{label:34s} {c:11.2f} {p:11.2f} {s:7.1f}x")
    if args.csv:
        with open(args.csv, "w", newline="") as f:
            w = csv.writer(f)
            w.writerow(["kernel", "cython_us", "python_us", "speedup"])
            w.writerows(rows)


if __name__ == "__main__":
    main()
