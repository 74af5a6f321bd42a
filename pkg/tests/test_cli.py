import csv
import subprocess
import sys

import numpy as np
import pytest

from phgd import bench, cli, config, numkit, verify
from phgd.dynamics import COLUMNS, TrajectoryRecord

MP = '[game]\nkind = "MatchingPennies"\n'


def write(tmp_path, text, name="c.toml"):
    p = tmp_path / name
    p.write_text(text)
    return p


def read_csv(path):
    with open(path, newline="") as f:
        return list(csv.reader(f))


def test_fmt_roundtrips():
    for v in (0.1, 1 / 3, 1e-300, -2.5e17, 0.0):
        assert float(bench.fmt(v)) == v
    assert bench.fmt(7) == "7"


def test_run_zero_iterations(tmp_path):
    cfg = config.parse_config(MP + "[run]\nmax_iters = 0\n")
    (path,) = bench.cmd_run(cfg, tmp_path, workers=1)
    rows = read_csv(path)
    assert tuple(rows[0]) == bench.CSV_COLUMNS and len(rows) == 2
    assert rows[1][0] == "0" and rows[1][-1] == "ok"


def test_run_mp_converges(tmp_path):
    cfg = config.parse_config(MP + "[run]\nrecord_every = 10000\n")
    rec = bench.run_seed(cfg, "PHGD", 0)
    assert rec.final_err <= 1e-8 and rec.rows[-1][0] <= 10_000


def test_run_flow_rows(tmp_path):
    cfg = config.parse_config(MP + '[algorithm]\nname = "PHGF"\n[init]\nlow = -0.5\nhigh = 0.5\n'
                              "[run]\ndt = 0.01\nt_end = 1.0\nrecord_every = 10\n")
    rec = bench.run_seed(cfg, "PHGF", 0)
    assert [r[0] for r in rec.rows] == list(range(0, 101, 10))
    assert all(r[1] == 0.01 for r in rec.rows)


def test_truncated_run_has_status(tmp_path):
    rec = TrajectoryRecord("PHGD", rows=[(0, 0.01, 1.0, 1.0, 0.5, 0.5, 0), (1, 0.01, 2.0, 2.0, 0.5, 0.5, 0)],
                           status="nonfinite")
    rows = list(csv.reader(bench.trajectory_csv(rec).splitlines()))
    assert [r[-1] for r in rows[1:]] == ["ok", "nonfinite"]


def test_cli_run_is_byte_identical(tmp_path):
    cfg = write(tmp_path, MP + '[algorithm]\nnames = ["PHGD", "GD"]\n[noise]\nsigma = 0.1\n'
                "[schedule]\nkind = \"invsqrt\"\ngamma = 0.05\n[run]\nmax_iters = 300\nseeds = [0, 1]\n")
    outs = []
    for k in range(2):
        out = tmp_path / f"o{k}"
        assert cli.main(["run", str(cfg), "--out-dir", str(out), "--quiet", "--workers", "1"]) == 0
        outs.append({p.name: p.read_bytes() for p in sorted(out.iterdir())})
    assert outs[0] == outs[1]
    assert sorted(outs[0]) == ["MatchingPennies_GD_seed0.csv", "MatchingPennies_GD_seed1.csv",
                               "MatchingPennies_PHGD_seed0.csv", "MatchingPennies_PHGD_seed1.csv"]


def test_cli_seed_override(tmp_path):
    cfg = write(tmp_path, MP + "[run]\nmax_iters = 5\n")
    assert cli.main(["run", str(cfg), "--out-dir", str(tmp_path / "o"), "--seeds", "3,4", "--quiet"]) == 0
    assert sorted(p.name for p in (tmp_path / "o").iterdir()) == [
        "MatchingPennies_PHGD_seed3.csv", "MatchingPennies_PHGD_seed4.csv"]


def test_cli_exit_codes(tmp_path, capsys):
    assert cli.main(["run", str(tmp_path / "missing.toml")]) == 2
    bad = write(tmp_path, '[game]\nkind = "Go"\n')
    assert cli.main(["run", str(bad), "--out-dir", str(tmp_path)]) == 1
    junk = tmp_path / "junk.csv"
    junk.write_text("a,b\n1,2\n")
    assert cli.main(["plot-data", str(junk), "-o", str(tmp_path / "p.csv")]) == 1
    assert cli.main(["plot-data", str(tmp_path / "nope.csv"), "-o", str(tmp_path / "p.csv")]) == 2
    assert "phgd:" in capsys.readouterr().err


def test_unwritable_output_is_io_error(tmp_path):
    cfg = write(tmp_path, MP + "[run]\nmax_iters = 0\n")
    blocker = tmp_path / "file"
    blocker.write_text("")
    assert cli.main(["run", str(cfg), "--out-dir", str(blocker / "sub"), "--quiet"]) == 2


def test_bench_single_seed_percentiles(tmp_path):
    cfg = config.parse_config(MP + "[run]\nmax_iters = 200\nrecord_every = 20\n")
    rows, fits = bench.cmd_bench(cfg, tmp_path, workers=1)
    assert all(r[2] == r[3] == r[4] for r in rows)
    summary = read_csv(tmp_path / "summary.csv")
    assert tuple(summary[0]) == bench.SUMMARY_COLUMNS and len(summary) == len(rows) + 1
    rates = read_csv(tmp_path / "rates.csv")
    assert tuple(rates[0]) == bench.RATE_COLUMNS
    assert [r[1] for r in rates[1:]] == ["geometric", "harmonic", "sqrtlog"]


def test_percentiles_ordered_and_padded(tmp_path):
    cfg = config.parse_config(MP + "[run]\nmax_iters = 3000\nrecord_every = 100\nseeds = [0, 1, 2, 3]\n")
    rows, _ = bench.cmd_bench(cfg, tmp_path, workers=1)
    assert all(r[3] <= r[2] <= r[4] for r in rows)
    assert rows[-1][1] == 3000 and rows[-1][5] == 4


def test_geometric_fit_recovers_rate():
    ns = np.arange(0, 2000, 10)
    errs = 3.0 * 0.99 ** ns
    f = bench.fit_geometric(ns, errs)
    assert f.slope == pytest.approx(np.log(0.99), rel=1e-9) and f.r_squared == pytest.approx(1.0)


def test_harmonic_fit_is_flat_for_one_over_n():
    ns = np.arange(1, 10001, 10)
    f = bench.fit_harmonic(ns, 5.0 / ns)
    assert abs(f.slope) <= 1e-9 and f.level == pytest.approx(5.0)


def test_plot_data(tmp_path):
    cfg = config.parse_config(MP + "[run]\nmax_iters = 40\nrecord_every = 10\n")
    (path,) = bench.cmd_run(cfg, tmp_path, workers=1)
    out = tmp_path / "plot.csv"
    n = bench.cmd_plot_data([path], out)
    rows = read_csv(out)
    metrics = len(COLUMNS) - 1 + 1  # every column but n, plus log10_err
    assert n == 5 * metrics == len(rows) - 1
    assert tuple(rows[0]) == bench.PLOT_COLUMNS
    assert rows[1][1:3] == ["PHGD", "0"]


def test_plot_data_merges_seeds_in_order(tmp_path):
    cfg = config.parse_config(MP + "[run]\nmax_iters = 30\nrecord_every = 10\nseeds = [0, 1]\n")
    paths = bench.cmd_run(cfg, tmp_path, workers=1)
    out = tmp_path / "plot.csv"
    bench.cmd_plot_data(list(reversed(paths)), out)
    rows = read_csv(out)[1:]
    seeds = [r[2] for r in rows]
    # inputs stay contiguous in the given order and each keeps its own n order
    assert seeds == sorted(seeds, reverse=True)
    for seed in ("0", "1"):
        ns = [int(r[3]) for r in rows if r[2] == seed and r[4] == "err"]
        assert ns == sorted(ns) and ns[0] == 0


def test_log10_floor():
    assert bench.log10_floored(0.0) == -14.0
    assert bench.log10_floored(1e-20) == -14.0
    assert bench.log10_floored(1e-3) == pytest.approx(-3.0)


def test_read_trajectory_rejects_bad_rows():
    head = ",".join(bench.CSV_COLUMNS)
    with pytest.raises(Exception, match="not numeric"):
        bench.read_trajectory_text(head + "\n0,0.01,x,1,1,1,0,ok\n")
    with pytest.raises(Exception, match="fields"):
        bench.read_trajectory_text(head + "\n0,0.01\n")


def test_verify_quick_passes():
    assert verify.cmd_verify("quick", out=lambda *a: None) == 0


def test_verify_catches_broken_pinv(monkeypatch):
    real = numkit.pinv
    monkeypatch.setattr(numkit, "pinv", lambda m, rank_tol=1e-12: 1.01 * real(m, rank_tol))
    lines = []
    assert verify.cmd_verify("quick", out=lines.append) == 1
    table = "\n".join(lines).splitlines()
    assert any(line.startswith("FAIL") and "penrose" in line for line in table)


def test_verify_registry_covers_every_module():
    assert {r.module for r in verify.run_checks("quick", only=["numkit"])} == {"numkit"}
    assert {c[0] for c in verify._CHECKS} >= {"numkit", "repmaps", "latent-games", "dynamics", "merit",
                                               "bench-cli"}


def test_module_entry_point(tmp_path):
    cfg = write(tmp_path, MP + "[run]\nmax_iters = 0\n")
    res = subprocess.run([sys.executable, "-m", "phgd", "run", str(cfg), "--out-dir", str(tmp_path / "o")],
                         capture_output=True, text=True)
    assert res.returncode == 0 and "wrote 1 trajectory files" in res.stdout
