"""Multi-seed experiment driver: trajectory CSVs, percentile summaries, rate fits."""
import csv
import io
import math
import os
import re
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import merit, repmaps
from .config import ExperimentConfig
from .dynamics import COLUMNS, TrajectoryRecord, derive_seeds, phgf_integrate, run, sample_init
from .errors import IoError, ParseError, ValidationError

CSV_COLUMNS = COLUMNS + ("status",)
SUMMARY_COLUMNS = ("algorithm", "n", "median_err", "p10_err", "p90_err", "seeds", "failed")
RATE_COLUMNS = ("algorithm", "model", "slope", "level", "r_squared", "points")
PLOT_COLUMNS = ("source", "algorithm", "seed", "n", "metric", "value")
ERR_FLOOR = 1e-14
GEOMETRIC_STOP = 1e-12
LOG10_FLOOR = -14.0


def fmt(v) -> str:
    """17 significant digits: exact round trip for float64."""
    if isinstance(v, (int, np.integer)) and not isinstance(v, bool):
        return str(int(v))
    return format(float(v), ".17g")


# ---------------------------------------------------------------- running

def build_maps(cfg: ExperimentConfig, game, seed):
    if cfg.map_weights is not None:
        try:
            text = Path(cfg.map_weights).read_text()
        except OSError as exc:
            raise IoError(f"cannot read map weights: {exc}") from None
        try:
            maps = repmaps.ProductRepMap.from_json(text)
        except (ValueError, KeyError, TypeError) as exc:
            raise ParseError(f"bad map weights document {cfg.map_weights}: {exc}") from None
    else:
        map_seed = cfg.map_seed if cfg.map_seed is not None else derive_seeds(seed)[0]
        maps = repmaps.sample_product(cfg.map_spec, game.n_players, map_seed)
    if maps.n_players != game.n_players or maps.output_dim != game.dim:
        raise ValidationError("map weights do not match the game's players")
    return maps


def initial_point(cfg: ExperimentConfig, maps, seed):
    if cfg.x0 is not None:
        x0 = np.array(cfg.x0, dtype=np.float64)
        if x0.shape != (maps.n_players, maps.input_dim):
            raise ValidationError("init.x0 does not match the map's control dimension")
        return x0
    init_seed = cfg.init_seed if cfg.init_seed is not None else derive_seeds(seed)[1]
    return sample_init(maps, init_seed, cfg.init_low, cfg.init_high)


def _flow_record(cfg, game, maps, x0):
    every = cfg.record_every
    tr = phgf_integrate(x0, game, maps, cfg.dt, cfg.t_end, record_every=every, strict=False)
    rec = TrajectoryRecord("PHGF", status=tr.status, message=tr.message)
    for t, x in zip(tr.t, tr.x):
        z, jac = maps.eval_jac(x)
        g = game.field(z)
        v = np.matmul(g[:, None, :], jac)[:, 0, :]
        dz = (z - game.z_star).ravel()
        err = 0.5 * float(dz @ dz)
        rec.rows.append((int(round(t / cfg.dt)), cfg.dt, err, err,
                         merit.tgap_from_field(z, g, game.domain), float(np.sqrt(np.sum(v * v))), 0))
    rec.final_x = tr.x[-1]
    return rec


def run_seed(cfg: ExperimentConfig, algorithm: str, seed: int) -> TrajectoryRecord:
    """One trajectory; map, initial point and noise all derive from ``seed``."""
    game = cfg.make_game()
    maps = build_maps(cfg, game, seed)
    x0 = initial_point(cfg, maps, seed)
    if algorithm == "PHGF":
        return _flow_record(cfg, game, maps, x0)
    noise_seed = cfg.noise_seed if cfg.noise_seed is not None else derive_seeds(seed)[2]
    return run(algorithm, game, maps, x0, cfg.schedule, cfg.noise(noise_seed), cfg.max_iters,
               cfg.stop_tol, cfg.record_every)


def _task(args):
    cfg, algorithm, seed = args
    return algorithm, seed, run_seed(cfg, algorithm, seed)


def run_all(cfg: ExperimentConfig, workers=None):
    """Run every (algorithm, seed) pair; results sorted by (algorithm, seed)."""
    tasks = [(cfg, a, s) for a in cfg.algorithms for s in cfg.seeds]
    if workers is None:
        workers = os.cpu_count() or 1
    if workers > 1 and len(tasks) > 1:
        with ProcessPoolExecutor(max_workers=min(workers, len(tasks))) as pool:
            results = list(pool.map(_task, tasks))
    else:
        results = [_task(t) for t in tasks]
    return sorted(results, key=lambda r: (r[0], r[1]))


# ---------------------------------------------------------------- CSV output

def trajectory_csv(rec: TrajectoryRecord) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CSV_COLUMNS)
    last = len(rec.rows) - 1
    for k, row in enumerate(rec.rows):
        # rows before the last are by construction fine; the status describes the end
        w.writerow([fmt(v) for v in row] + [rec.status if k == last else "ok"])
    return buf.getvalue()


def csv_name(game, algorithm, seed):
    return f"{game}_{algorithm}_seed{seed}.csv"


_NAME_RE = re.compile(r"^(?P<game>.+)_(?P<alg>[A-Za-z]+)_seed(?P<seed>-?\d+)$")


def _write(path: Path, text: str):
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(text)
    except OSError as exc:
        raise IoError(f"cannot write {path}: {exc}") from None


def cmd_run(cfg: ExperimentConfig, out_dir, workers=None) -> list:
    """Write one trajectory CSV per (algorithm, seed); return the paths."""
    out_dir = Path(out_dir)
    paths = []
    for alg, seed, rec in run_all(cfg, workers):
        path = out_dir / csv_name(cfg.game, alg, seed)
        _write(path, trajectory_csv(rec))
        paths.append(path)
    return paths


# ---------------------------------------------------------------- summaries

def padded_errors(records, ns):
    """err of every record at every n in ``ns``; finished runs hold their last value."""
    out = np.empty((len(records), len(ns)))
    for i, rec in enumerate(records):
        n_col = np.array([r[0] for r in rec.rows])
        e_col = np.array([r[2] for r in rec.rows])
        idx = np.searchsorted(n_col, ns, side="right") - 1
        out[i] = e_col[np.clip(idx, 0, None)]
    return out


def summarize(records_by_alg: dict):
    """Per-(algorithm, n) median and 10th/90th percentile of err across seeds."""
    rows = []
    curves = {}
    for alg in sorted(records_by_alg):
        recs = records_by_alg[alg]
        ns = np.array(sorted({r[0] for rec in recs for r in rec.rows}))
        errs = padded_errors(recs, ns)
        p10, med, p90 = np.percentile(errs, [10, 50, 90], axis=0)
        failed = sum(rec.status != "ok" for rec in recs)
        curves[alg] = (ns, med)
        for k, n in enumerate(ns):
            rows.append((alg, int(n), med[k], p10[k], p90[k], len(recs), failed))
    return rows, curves


@dataclass(frozen=True)
class RateFit:
    model: str
    slope: float
    level: float
    r_squared: float
    points: int


def _linfit(x, y):
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.size < 2 or np.ptp(x) == 0:
        return math.nan, math.nan, math.nan
    slope, level = np.polyfit(x, y, 1)
    resid = y - (level + slope * x)
    ss_tot = float(np.sum((y - y.mean()) ** 2))
    r2 = 1.0 - float(np.sum(resid ** 2)) / ss_tot if ss_tot > 0 else (1.0 if np.allclose(resid, 0) else 0.0)
    return float(slope), float(level), r2


def geometric_window(ns, errs):
    """Rows after a 10% burn-in, before err first reaches 1e-12, with err > 1e-14."""
    ns = np.asarray(ns)
    errs = np.asarray(errs, dtype=np.float64)
    if ns.size == 0:
        return np.zeros(0, bool)
    keep = ns >= 0.1 * ns.max()
    hit = np.flatnonzero(errs <= GEOMETRIC_STOP)
    if hit.size:
        keep &= ns < ns[hit[0]]
    return keep & (errs > ERR_FLOOR)


def fit_geometric(ns, errs) -> RateFit:
    """``log err = a + n log rho``; ``slope`` is ``log rho``."""
    keep = geometric_window(ns, errs)
    slope, level, r2 = _linfit(np.asarray(ns)[keep], np.log(np.asarray(errs)[keep]))
    return RateFit("geometric", slope, level, r2, int(keep.sum()))


def _late_half(ns, errs):
    ns = np.asarray(ns, dtype=np.float64)
    errs = np.asarray(errs, dtype=np.float64)
    keep = (ns >= 0.5 * ns.max()) & (errs > ERR_FLOOR) & (ns > 1)
    return ns[keep], errs[keep]


def fit_harmonic(ns, errs) -> RateFit:
    """Trend of ``err * n`` against ``log n`` over the last half of the run."""
    n, e = _late_half(ns, errs)
    slope, level, r2 = _linfit(np.log(n), e * n) if n.size else (math.nan,) * 3
    return RateFit("harmonic", slope, level, r2, int(n.size))


def fit_sqrtlog(ns, vals) -> RateFit:
    """Trend of ``v * sqrt(n) / log n`` against ``log n`` over the last half."""
    n, e = _late_half(ns, vals)
    slope, level, r2 = _linfit(np.log(n), e * np.sqrt(n) / np.log(n)) if n.size else (math.nan,) * 3
    return RateFit("sqrtlog", slope, level, r2, int(n.size))


FITS = (fit_geometric, fit_harmonic, fit_sqrtlog)


def cmd_bench(cfg: ExperimentConfig, out_dir, workers=None):
    """Write ``summary.csv`` and ``rates.csv``; return (summary rows, {alg: [RateFit]})."""
    out_dir = Path(out_dir)
    by_alg = {}
    for alg, _, rec in run_all(cfg, workers):
        by_alg.setdefault(alg, []).append(rec)
    rows, curves = summarize(by_alg)
    fits = {alg: [f(*curves[alg]) for f in FITS] for alg in sorted(curves)}

    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(SUMMARY_COLUMNS)
    for alg, n, med, p10, p90, count, failed in rows:
        w.writerow([alg, n, fmt(med), fmt(p10), fmt(p90), count, failed])
    _write(out_dir / "summary.csv", buf.getvalue())

    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(RATE_COLUMNS)
    for alg, fl in fits.items():
        for f in fl:
            w.writerow([alg, f.model, fmt(f.slope), fmt(f.level), fmt(f.r_squared), f.points])
    _write(out_dir / "rates.csv", buf.getvalue())
    return rows, fits


# ---------------------------------------------------------------- plot data

def read_trajectory(path):
    """Parse a trajectory CSV into (header, rows of strings)."""
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise IoError(f"cannot read {path}: {exc}") from None
    return read_trajectory_text(text, path)


def read_trajectory_text(text: str, where="<text>"):
    rows = list(csv.reader(io.StringIO(text)))
    path = where
    if not rows or tuple(rows[0]) != CSV_COLUMNS:
        raise ParseError(f"{path}: header must be {','.join(CSV_COLUMNS)}")
    for k, r in enumerate(rows[1:], start=2):
        if len(r) != len(CSV_COLUMNS):
            raise ParseError(f"{path}:{k}: expected {len(CSV_COLUMNS)} fields, got {len(r)}")
        for name, v in zip(CSV_COLUMNS[:-1], r):
            try:
                float(v)
            except ValueError:
                raise ParseError(f"{path}:{k}: column {name} is not numeric: {v!r}") from None
    return rows[0], rows[1:]


def log10_floored(err: float) -> float:
    return max(LOG10_FLOOR, math.log10(err)) if err > 0 else LOG10_FLOOR


def cmd_plot_data(paths, out_path) -> int:
    """Long-format ``(source, algorithm, seed, n, metric, value)`` rows; returns the row count.

    ``algorithm`` and ``seed`` come from file names written by :func:`cmd_run`
    (``<game>_<algorithm>_seed<k>.csv``); other names leave them empty.
    Input order and per-file row order are preserved.
    """
    if not paths:
        raise ValidationError("plot-data needs at least one input CSV")
    metrics = [c for c in COLUMNS if c != "n"]
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(PLOT_COLUMNS)
    count = 0
    for path in paths:
        _, rows = read_trajectory(path)
        m = _NAME_RE.match(Path(path).stem)
        alg, seed = (m.group("alg"), m.group("seed")) if m else ("", "")
        source = Path(path).name
        for r in rows:
            vals = dict(zip(CSV_COLUMNS, r))
            for metric in metrics:
                w.writerow([source, alg, seed, vals["n"], metric, vals[metric]])
            w.writerow([source, alg, seed, vals["n"], "log10_err", fmt(log10_floored(float(vals["err"])))])
            count += len(metrics) + 1
    _write(Path(out_path), buf.getvalue())
    return count
