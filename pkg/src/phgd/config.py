"""Experiment configuration documents (TOML).

A document has the tables ``[game]``, ``[map]``, ``[algorithm]``,
``[schedule]``, ``[noise]``, ``[init]`` and ``[run]``; only ``[game]`` is
required. Unknown tables or keys raise :class:`~phgd.errors.ParseError`,
constraint violations raise :class:`~phgd.errors.ValidationError`::

    [game]
    kind = "ElFarol"
    capacity = 18

    [algorithm]
    names = ["PHGD", "GD"]

    [run]
    max_iters = 10000
    seeds = [0, 1, 2]
"""
import inspect
import math
import sys
from dataclasses import dataclass, field, replace
from pathlib import Path

import tomli_w

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from . import repmaps
from .dynamics import ALGORITHMS, DEFAULT_STOP_TOL, INIT_RANGE, NoiseModel, StepSchedule
from .errors import ParseError, ValidationError
from .games import GAMES, MAP_FOR_GAME, make_game


@dataclass(frozen=True)
class ExperimentConfig:
    game: str = "MatchingPennies"
    game_params: dict = field(default_factory=dict)
    map_spec: str = "MP"
    map_seed: int | None = None
    map_weights: str | None = None
    algorithms: tuple = ("PHGD",)
    schedule: StepSchedule = StepSchedule()
    noise_sigma: float = 0.0
    noise_seed: int | None = None
    init_low: float = INIT_RANGE[0]
    init_high: float = INIT_RANGE[1]
    init_seed: int | None = None
    x0: tuple | None = None
    max_iters: int = 10000
    stop_tol: float = DEFAULT_STOP_TOL
    record_every: int = 1
    seeds: tuple = (0,)
    dt: float = 1e-3
    t_end: float = 50.0

    @property
    def algorithm(self):
        return self.algorithms[0]

    def make_game(self):
        return make_game(self.game, **self.game_params)

    def noise(self, seed):
        return NoiseModel(self.noise_sigma, seed)


_TABLES = {
    "game": {"kind"},
    "map": {"spec", "seed", "weights"},
    "algorithm": {"name", "names"},
    "schedule": {"kind", "gamma"},
    "noise": {"sigma", "seed"},
    "init": {"low", "high", "seed", "x0"},
    "run": {"max_iters", "stop_tol", "record_every", "seeds", "dt", "t_end"},
}


def _game_keys(kind):
    params = inspect.signature(GAMES[kind].__init__).parameters
    return {p for p in params if p != "self"}


def _expect(value, types, where):
    if isinstance(value, bool) and bool not in types:
        raise ValidationError(f"{where}: expected {types[0].__name__}, got a boolean")
    if not isinstance(value, types):
        raise ValidationError(f"{where}: expected {types[0].__name__}, got {type(value).__name__}")
    return value


def _int(v, where):
    return _expect(v, (int,), where)


def _real(v, where):
    v = float(_expect(v, (float, int), where))
    if not math.isfinite(v):
        raise ValidationError(f"{where}: must be finite")
    return v


def parse_config(text: str, base_dir=None) -> ExperimentConfig:
    """Parse and validate a TOML experiment document.

    ``base_dir`` resolves a relative ``[map] weights`` path.
    """
    try:
        doc = tomllib.loads(text)
    except tomllib.TOMLDecodeError as exc:
        raise ParseError(f"malformed config: {exc}") from None
    for table, body in doc.items():
        if table not in _TABLES:
            raise ParseError(f"unknown table [{table}]")
        if not isinstance(body, dict):
            raise ParseError(f"[{table}] must be a table")
    game = dict(doc.get("game", {}))
    if "kind" not in game:
        raise ParseError("[game] needs a 'kind' key")
    kind = game.pop("kind")
    if kind not in GAMES:
        raise ValidationError(f"unknown game {kind!r}; known: {sorted(GAMES)}")
    allowed = _game_keys(kind)
    for table, body in doc.items():
        keys = _TABLES[table] | (allowed if table == "game" else set())
        for key in body:
            if key not in keys:
                raise ParseError(f"unknown key '{key}' in [{table}]")

    mp = doc.get("map", {})
    alg = doc.get("algorithm", {})
    sch = doc.get("schedule", {})
    noi = doc.get("noise", {})
    ini = doc.get("init", {})
    run = doc.get("run", {})

    if "name" in alg and "names" in alg:
        raise ParseError("[algorithm] takes 'name' or 'names', not both")
    names = alg.get("names", [alg.get("name", "PHGD")])
    if isinstance(names, str) or not isinstance(names, list) or not names:
        raise ValidationError("[algorithm] names must be a non-empty list")
    for a in names:
        if a not in ALGORITHMS:
            raise ValidationError(f"unknown algorithm {a!r}; known: {list(ALGORITHMS)}")
    if len(set(names)) != len(names):
        raise ValidationError("[algorithm] names has duplicates")

    try:
        schedule = StepSchedule(sch.get("kind", "constant"), _real(sch.get("gamma", 0.01), "schedule.gamma"))
    except ValueError as exc:
        raise ValidationError(f"[schedule]: {exc}") from None
    sigma = _real(noi.get("sigma", 0.0), "noise.sigma")
    if sigma < 0:
        raise ValidationError("noise.sigma must be non-negative")

    seeds = run.get("seeds", [0])
    if not isinstance(seeds, list) or not seeds:
        raise ValidationError("run.seeds must be a non-empty list")
    seeds = tuple(_int(s, "run.seeds") for s in seeds)
    if len(set(seeds)) != len(seeds):
        raise ValidationError("run.seeds has duplicates")

    weights = mp.get("weights")
    if weights is not None:
        weights = str(_expect(weights, (str,), "map.weights"))
        if base_dir is not None and not Path(weights).is_absolute():
            weights = str(Path(base_dir) / weights)

    x0 = ini.get("x0")
    if x0 is not None:
        if not isinstance(x0, list) or not all(isinstance(r, list) for r in x0):
            raise ValidationError("init.x0 must be a list of per-player lists")
        x0 = tuple(tuple(_real(v, "init.x0") for v in r) for r in x0)

    cfg = ExperimentConfig(
        game=kind,
        game_params=game,
        map_spec=_expect(mp.get("spec", MAP_FOR_GAME[kind]), (str,), "map.spec"),
        map_seed=None if "seed" not in mp else _int(mp["seed"], "map.seed"),
        map_weights=weights,
        algorithms=tuple(names),
        schedule=schedule,
        noise_sigma=sigma,
        noise_seed=None if "seed" not in noi else _int(noi["seed"], "noise.seed"),
        init_low=_real(ini.get("low", INIT_RANGE[0]), "init.low"),
        init_high=_real(ini.get("high", INIT_RANGE[1]), "init.high"),
        init_seed=None if "seed" not in ini else _int(ini["seed"], "init.seed"),
        x0=x0,
        max_iters=_int(run.get("max_iters", 10000), "run.max_iters"),
        stop_tol=_real(run.get("stop_tol", DEFAULT_STOP_TOL), "run.stop_tol"),
        record_every=_int(run.get("record_every", 1), "run.record_every"),
        seeds=seeds,
        dt=_real(run.get("dt", 1e-3), "run.dt"),
        t_end=_real(run.get("t_end", 50.0), "run.t_end"),
    )
    validate(cfg)
    return cfg


def validate(cfg: ExperimentConfig) -> ExperimentConfig:
    if cfg.record_every < 1:
        raise ValidationError("run.record_every must be >= 1")
    if cfg.max_iters < 0:
        raise ValidationError("run.max_iters must be >= 0")
    if cfg.stop_tol < 0:
        raise ValidationError("run.stop_tol must be >= 0")
    if not cfg.init_low < cfg.init_high:
        raise ValidationError("init.low must be below init.high")
    if not (cfg.dt > 0 and cfg.t_end >= cfg.dt):
        raise ValidationError("need run.dt > 0 and run.t_end >= run.dt")
    if cfg.map_weights is None and cfg.map_spec not in repmaps.ARCHS:
        raise ValidationError(f"unknown map spec {cfg.map_spec!r}; known: {sorted(repmaps.ARCHS)}")
    game = cfg.make_game()  # raises ValidationError on bad parameters
    if cfg.map_weights is None:
        arch = repmaps.ARCHS[cfg.map_spec]
        if arch.output_dim + (1 if arch.head is repmaps.Activation.LOGIT else 0) != game.dim:
            raise ValidationError(f"map {cfg.map_spec} does not produce {game.name} latent points")
        in_dim = arch.input_dim
    else:
        in_dim = None
    if cfg.x0 is not None:
        if len(cfg.x0) != game.n_players or len({len(r) for r in cfg.x0}) != 1 or \
                (in_dim is not None and len(cfg.x0[0]) != in_dim):
            raise ValidationError("init.x0 does not match the players' control dimensions")
    return cfg


def to_dict(cfg: ExperimentConfig) -> dict:
    doc = {
        "game": {"kind": cfg.game, **cfg.game_params},
        "map": {"spec": cfg.map_spec},
        "algorithm": {"names": list(cfg.algorithms)},
        "schedule": {"kind": cfg.schedule.kind, "gamma": cfg.schedule.gamma},
        "noise": {"sigma": cfg.noise_sigma},
        "init": {"low": cfg.init_low, "high": cfg.init_high},
        "run": {
            "max_iters": cfg.max_iters,
            "stop_tol": cfg.stop_tol,
            "record_every": cfg.record_every,
            "seeds": list(cfg.seeds),
            "dt": cfg.dt,
            "t_end": cfg.t_end,
        },
    }
    if cfg.map_seed is not None:
        doc["map"]["seed"] = cfg.map_seed
    if cfg.map_weights is not None:
        doc["map"]["weights"] = cfg.map_weights
    if cfg.noise_seed is not None:
        doc["noise"]["seed"] = cfg.noise_seed
    if cfg.init_seed is not None:
        doc["init"]["seed"] = cfg.init_seed
    if cfg.x0 is not None:
        doc["init"]["x0"] = [list(r) for r in cfg.x0]
    return doc


def serialize(cfg: ExperimentConfig) -> str:
    return tomli_w.dumps(to_dict(cfg))


def load_config(path) -> ExperimentConfig:
    path = Path(path)
    return parse_config(path.read_text(), base_dir=path.parent)


def with_seeds(cfg: ExperimentConfig, seeds) -> ExperimentConfig:
    seeds = tuple(int(s) for s in seeds)
    if not seeds:
        raise ValidationError("seed list must be non-empty")
    return replace(cfg, seeds=seeds)


__all__ = ["ExperimentConfig", "parse_config", "validate", "serialize", "to_dict", "load_config",
           "with_seeds"]
