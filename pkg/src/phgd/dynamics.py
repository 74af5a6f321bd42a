"""PHGD, its continuous-time flow, and the GD / NHGD baselines.

Control profiles are arrays ``(n_players, input_dim)``. Every algorithm
shares one oracle: ``q = V(x) + noise`` with ``V_i = J_i^T g_i(phi(x))``.
"""
import math
import time
from dataclasses import dataclass, field
from functools import partial

import numpy as np

from . import kernels
from .errors import DerivativeVanished, DomainViolation, NonFiniteIterate, NotSeparable
from .games import DOMAIN_TOL, HiddenGame
from .numkit import DEFAULT_RANK_TOL
from .repmaps import ProductRepMap

ALGORITHMS = ("PHGD", "GD", "NHGD", "PHGF")
INIT_RANGE = (-2.5, 2.5)
DEFAULT_STOP_TOL = 1e-12


@dataclass(frozen=True)
class StepSchedule:
    """``constant``: gamma; ``invsqrt``: gamma/sqrt(n); ``harmonic``: gamma/n (n >= 1)."""

    kind: str = "constant"
    gamma: float = 0.01

    def __post_init__(self):
        if self.kind not in ("constant", "invsqrt", "harmonic"):
            raise ValueError(f"unknown schedule {self.kind!r}")
        if not self.gamma > 0:
            raise ValueError("step size must be positive")

    def __call__(self, n: int) -> float:
        if n < 1:
            raise ValueError("schedule index starts at 1")
        if self.kind == "constant":
            return self.gamma
        if self.kind == "invsqrt":
            return self.gamma / math.sqrt(n)
        return self.gamma / n


@dataclass(frozen=True)
class NoiseModel:
    """I.i.d. zero-mean Gaussian noise of scale ``sigma`` on each control gradient coordinate."""

    sigma: float = 0.0
    seed: int | None = None

    def __post_init__(self):
        if not self.sigma >= 0:
            raise ValueError("noise scale must be non-negative")

    @property
    def kind(self):
        return "none" if self.sigma == 0 else "gaussian"


@dataclass
class IterState:
    n: int
    x: np.ndarray
    z: np.ndarray
    rng: np.random.Generator
    jac: np.ndarray = field(repr=False, default=None)


def init_state(x0, maps: ProductRepMap, seed=None) -> IterState:
    x0 = np.array(x0, dtype=np.float64)
    z, jac = maps.eval_jac(x0)
    return IterState(0, x0, z, np.random.default_rng(seed), jac)


def derive_seeds(seed: int):
    """Independent ``(map, init, noise)`` seeds for one run seed."""
    return (seed, 0), (seed, 1), (seed, 2)


def sample_init(maps: ProductRepMap, seed, low=INIT_RANGE[0], high=INIT_RANGE[1]):
    rng = np.random.default_rng(seed)
    return rng.uniform(low, high, (maps.n_players, maps.input_dim))


def _matvec_t(jac, g):
    # V_i = J_i^T g_i
    return np.matmul(g[:, None, :], jac)[:, 0, :]


def control_field(game: HiddenGame, maps: ProductRepMap, x) -> np.ndarray:
    """Per-player control gradient ``V_i = J_i(x_i)^T g_i(phi(x))``."""
    z, jac = maps.eval_jac(x)
    return _matvec_t(jac, game.field(z))


def precondition(j) -> np.ndarray:
    """``P = pinv(J^T J)`` for one player's Jacobian ``J``."""
    return kernels.gram_pinv(np.asarray(j, dtype=np.float64), DEFAULT_RANK_TOL)


def _check_separable(maps):
    if maps.input_dim != 1 or maps.output_dim != 1:
        raise NotSeparable("NHGD needs one-dimensional control and latent variables per player")


def _direction(algorithm, jac, q):
    if algorithm == "PHGD":
        return kernels.precondition_batch(jac, q, DEFAULT_RANK_TOL)
    if algorithm == "GD":
        return q
    if algorithm == "NHGD":
        d = jac[:, 0, 0]
        if np.any(np.abs(d) < 1e-12):
            raise DerivativeVanished("|phi'(x_i)| below 1e-12")
        return q / (d * d)[:, None]
    raise ValueError(f"no discrete step for {algorithm!r}")


def _oracle(state, game, noise):
    g = game.field(state.z)
    v = _matvec_t(state.jac, g)
    q = v + noise.sigma * state.rng.standard_normal(v.shape) if noise.sigma > 0 else v
    return g, v, q


def _advance(algorithm, state, maps, gamma, q):
    x = state.x - gamma * _direction(algorithm, state.jac, q)
    if not np.isfinite(x).all():
        raise NonFiniteIterate(f"{algorithm} iterate became non-finite at step {state.n + 1}")
    z, jac = maps.eval_jac(x)
    if not (np.isfinite(z).all() and np.isfinite(jac).all()):
        raise NonFiniteIterate(f"{algorithm} latent image became non-finite at step {state.n + 1}")
    return IterState(state.n + 1, x, z, state.rng, jac)


def _step(algorithm, state, game, maps, schedule, noise):
    if state.jac is None:
        state.z, state.jac = maps.eval_jac(state.x)
    _, _, q = _oracle(state, game, noise)
    return _advance(algorithm, state, maps, schedule(state.n + 1), q)


def phgd_step(state, game, maps, schedule, noise=NoiseModel()) -> IterState:
    """``x_i <- x_i - gamma_n P_i q_i`` with ``P_i = pinv(J_i^T J_i)``."""
    return _step("PHGD", state, game, maps, schedule, noise)


def gd_step(state, game, maps, schedule, noise=NoiseModel()) -> IterState:
    return _step("GD", state, game, maps, schedule, noise)


def nhgd_step(state, game, maps, schedule, noise=NoiseModel()) -> IterState:
    """Separable baseline: ``x_i <- x_i - gamma_n q_i / phi_i'(x_i)^2``."""
    _check_separable(maps)
    return _step("NHGD", state, game, maps, schedule, noise)


STEPS = {"PHGD": phgd_step, "GD": gd_step, "NHGD": nhgd_step}


@dataclass
class FlowTrajectory:
    t: np.ndarray
    x: np.ndarray
    energy: np.ndarray
    status: str = "ok"
    message: str = ""


def _flow_rhs(game, maps, x):
    """``(velocity, z)`` at ``x``; affine games take the fused kernel."""
    affine = game.affine
    if affine is not None:
        vel, z = kernels.affine_velocity(maps._w1, maps._w2, x, *maps._codes, *affine, DEFAULT_RANK_TOL)
        if not (np.isfinite(z).all() and np.isfinite(vel).all()):
            raise NonFiniteIterate("PHGF latent image became non-finite")
        game.domain.check(z)
        return vel, z
    z, jac = maps.eval_jac(x)
    if not (np.isfinite(z).all() and np.isfinite(jac).all()):
        raise NonFiniteIterate("PHGF latent image became non-finite")
    v = _matvec_t(jac, game.field(z))
    return -_direction("PHGD", jac, v), z


def flow_velocity(game, maps, x):
    """PHGF right-hand side ``-P_i(x_i) V_i(x)``."""
    return _flow_rhs(game, maps, x)[0]


def phgf_integrate(x0, game: HiddenGame, maps: ProductRepMap, dt=1e-3, t_end=50.0,
                   record_every=1, strict=True) -> FlowTrajectory:
    """Classical RK4 for ``dx_i/dt = -P_i(x_i) V_i(x)``; records the energy to ``z*``.

    With ``strict=False`` a non-finite state or a latent point outside the
    domain ends the integration and the partial trajectory is returned with
    ``status`` set, instead of raising.
    """
    if not dt > 0 or t_end < dt:
        raise ValueError("need dt > 0 and t_end >= dt")
    if record_every < 1:
        raise ValueError("record_every must be >= 1")
    steps = int(round(t_end / dt))
    x = np.array(x0, dtype=np.float64)
    z_star = game.z_star
    ts, xs, es = [], [], []

    def record(k, x, z):
        dz = (z - z_star).ravel()
        ts.append(k * dt)
        xs.append(x.copy())
        es.append(0.5 * float(dz @ dz))

    def done(status="ok", message=""):
        return FlowTrajectory(np.array(ts), np.array(xs), np.array(es), status, message)

    def stop(exc):
        if strict:
            raise exc
        return done("nonfinite" if isinstance(exc, NonFiniteIterate) else "domain", str(exc))

    if game.affine is not None:
        return _affine_integrate(x, game, maps, dt, steps, record_every, strict)
    rhs = partial(_flow_rhs, game, maps)
    try:
        # k1 of the next step is evaluated at the current state, so its z
        # doubles as the latent point for the energy record
        k1, z = rhs(x)
    except (NonFiniteIterate, DomainViolation) as exc:
        return stop(exc)
    record(0, x, z)
    for k in range(1, steps + 1):
        try:
            k2 = rhs(x + 0.5 * dt * k1)[0]
            k3 = rhs(x + 0.5 * dt * k2)[0]
            k4 = rhs(x + dt * k3)[0]
            x = x + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
            if not np.isfinite(x).all():
                raise NonFiniteIterate(f"PHGF state became non-finite at t={k * dt:g}")
            if k < steps:
                k1, z = rhs(x)
            else:
                z = maps(x)
                if not np.isfinite(z).all():
                    raise NonFiniteIterate(f"PHGF latent image became non-finite at t={k * dt:g}")
                game.domain.check(z)
        except (NonFiniteIterate, DomainViolation) as exc:
            return stop(exc)
        if k % record_every == 0 or k == steps:
            record(k, x, z)
    return done()


def _affine_integrate(x, game, maps, dt, steps, record_every, strict):
    # whole RK4 loop in one kernel call; same stages and checks as the generic loop
    ks, xs, es, status, step = kernels.affine_flow(
        maps._w1, maps._w2, x, *maps._codes, *game.affine, game.z_star, dt, steps, record_every,
        game.domain.kind == "simplex", DOMAIN_TOL, DEFAULT_RANK_TOL)
    if status == 0:
        return FlowTrajectory(ks * dt, xs, es, "ok", "")
    if status == 1:
        exc = NonFiniteIterate(f"PHGF state became non-finite at t={step * dt:g}")
    elif status == 2:
        exc = NonFiniteIterate(f"PHGF latent image became non-finite at t={step * dt:g}")
    else:
        exc = DomainViolation(f"latent point outside the {game.domain.kind} domain")
    if strict:
        raise exc
    return FlowTrajectory(ks * dt, xs, es, "nonfinite" if status < 3 else "domain", str(exc))


COLUMNS = ("n", "gamma", "err", "energy", "tgap_latent", "tgap_control", "walltime_us")


@dataclass
class TrajectoryRecord:
    """Per-row metrics of one run plus optional full per-step recordings."""

    algorithm: str
    rows: list = field(default_factory=list)
    status: str = "ok"
    message: str = ""
    final_x: np.ndarray | None = None
    steps: dict | None = None
    zbar: dict = field(default_factory=dict)

    def column(self, name):
        return np.array([r[COLUMNS.index(name)] for r in self.rows])

    @property
    def final_err(self):
        return self.rows[-1][2]


def run(algorithm, game: HiddenGame, maps: ProductRepMap, x0, schedule=StepSchedule(),
        noise=NoiseModel(), max_iters=1000, stop_tol=DEFAULT_STOP_TOL, record_every=1,
        test_point=None, record_at=(), record_full=False, track_average=False,
        record_walltime=False) -> TrajectoryRecord:
    """Iterate a discrete algorithm until ``max_iters`` or ``err <= stop_tol``.

    Step failures (non-finite iterates, domain violations) end the run and
    are reported in ``status`` instead of being raised. With
    ``track_average`` the running latent average is stored in ``zbar`` at
    every recorded row.
    """
    if algorithm not in STEPS:
        raise ValueError(f"run() drives discrete algorithms {sorted(STEPS)}, got {algorithm!r}")
    if record_every < 1 or max_iters < 0:
        raise ValueError("need record_every >= 1 and max_iters >= 0")
    if algorithm == "NHGD":
        _check_separable(maps)
    from .merit import tgap_from_field

    z_star = game.z_star
    z_hat = z_star if test_point is None else np.asarray(test_point, dtype=np.float64)
    record_at = set(record_at)
    rec = TrajectoryRecord(algorithm)
    if record_full:
        rec.steps = {"z": [], "g": [], "q": [], "gamma": []}
    state = init_state(x0, maps, noise.seed)
    zsum = np.zeros_like(state.z)
    t0 = time.perf_counter()
    n = 0
    while True:
        try:
            g, v, q = _oracle(state, game, noise)
        except DomainViolation as exc:
            rec.status, rec.message = "domain", str(exc)
            break
        n = state.n
        dz = (state.z - z_star).ravel()
        err = 0.5 * float(dz @ dz)
        if track_average:
            zsum += state.z
        done = n >= max_iters or err <= stop_tol
        gamma = schedule(n + 1)
        if done or n % record_every == 0 or n in record_at:
            energy = err if test_point is None else 0.5 * float(np.sum((state.z - z_hat) ** 2))
            wall = int((time.perf_counter() - t0) * 1e6) if record_walltime else 0
            rec.rows.append((n, gamma, err, energy, tgap_from_field(state.z, g, game.domain),
                             float(np.sqrt(np.sum(v * v))), wall))
            if track_average:
                rec.zbar[n] = zsum / (n + 1)
        if done:
            break
        if record_full:
            rec.steps["z"].append(state.z)
            rec.steps["g"].append(g)
            rec.steps["q"].append(q)
            rec.steps["gamma"].append(gamma)
        try:
            state = _advance(algorithm, state, maps, gamma, q)
        except NonFiniteIterate as exc:
            rec.status, rec.message = "nonfinite", str(exc)
            break
    if record_full:
        rec.steps["z"].append(state.z)
    rec.final_x = state.x
    return rec
