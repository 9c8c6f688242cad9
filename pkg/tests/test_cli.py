import numpy as np
import pandas as pd
import pytest

from rcvsub.cli import build_parser, main, merge_argv, parse_beta, read_config
from rcvsub.dataset import CsvSchema, Dataset, write_csv
from rcvsub.errors import ConfigError
from rcvsub.sampler import child_rng
from rcvsub.simulate import SimDesign, generate


@pytest.fixture(scope="module")
def wide_csv(tmp_path_factory):
    # same shape as a 98-covariate energy table
    rng = np.random.default_rng(8)
    n, p = 12_000, 98
    X = rng.normal(size=(n, p))
    y = X[:, :4] @ [1.0, -0.5, 0.8, 0.3] + rng.normal(size=n)
    f = tmp_path_factory.mktemp("wide") / "energy.csv"
    write_csv(Dataset(X, "linear", y=y, column_names=tuple(f"w{k}" for k in range(p))), f,
              CsvSchema(response="power"))
    return f


def _fit_args(data, out, *extra):
    return ["fit", "--data", str(data), "--model", "linear", "--response", "power",
            "--r", "1000", "--out", str(out), "--plots", "false", *extra]


def test_fit_writes_one_row_per_coefficient(wide_csv, tmp_path, capsys):
    out = tmp_path / "res.csv"
    assert main(_fit_args(wide_csv, out, "--plots", "true")) == 0
    df = pd.read_csv(out)
    assert len(df) == 98
    assert list(df.columns) == ["name", "j", "beta1", "beta2", "beta_hat", "se1", "se2", "se",
                                "ci_lo", "ci_hi", "selected1", "selected2", "status"]
    assert df["j"].tolist() == list(range(1, 99))
    assert (tmp_path / "res_ci.png").exists()
    text = capsys.readouterr().out
    assert "98 coefficients" in text and "w0" in text
    assert np.isfinite(df[["beta_hat", "se", "ci_lo", "ci_hi"]].to_numpy()).all()


def test_fit_same_seed_byte_identical(wide_csv, tmp_path):
    a, b, c = tmp_path / "a.csv", tmp_path / "b.csv", tmp_path / "c.csv"
    assert main(_fit_args(wide_csv, a, "--seed", "5", "--threads", "1")) == 0
    assert main(_fit_args(wide_csv, b, "--seed", "5", "--threads", "1")) == 0
    assert main(_fit_args(wide_csv, c, "--seed", "5", "--threads", "3")) == 0
    assert a.read_bytes() == b.read_bytes() == c.read_bytes()


def test_exit_codes(wide_csv, tmp_path, capsys):
    out = tmp_path / "x.csv"
    base = ["fit", "--data", str(wide_csv), "--model", "linear", "--r", "500",
            "--out", str(out), "--plots", "false"]
    assert main(base) == 2                                  # missing --response
    assert main(["fit"]) == 2
    assert main(["simulate", "--model", "linear", "--reps", "0"]) == 2
    assert main(["bogus"]) == 2
    assert main(base + ["--response", "nope"]) == 3         # schema error
    bad = tmp_path / "bad.csv"
    bad.write_text("power,a\n1,2\n2,NA\n")
    assert main(["fit", "--data", str(bad), "--model", "linear", "--response", "power",
                 "--r", "1", "--out", str(out)]) == 3
    assert "line 3" in capsys.readouterr().err
    assert main(base + ["--response", "power", "--r", "9000"]) == 3   # too few rows
    sep = tmp_path / "sep.csv"
    x = np.random.default_rng(0).normal(size=4000)
    pd.DataFrame({"y": (x > 0).astype(int), "x": x}).to_csv(sep, index=False)
    assert main(["fit", "--data", str(sep), "--model", "logistic", "--response", "y",
                 "--r", "300", "--out", str(out), "--plots", "false"]) == 4


def test_cox_fit(tmp_path):
    design = SimDesign("cox", 1, n=6000, p=8, seed=1)
    d = generate(design, child_rng(1, "cli"), c0=7.75)
    f = tmp_path / "surv.csv"
    write_csv(d, f)
    out = tmp_path / "cox.csv"
    assert main(["fit", "--data", str(f), "--model", "cox", "--r", "500", "--out", str(out),
                 "--plots", "false"]) == 2
    assert main(["fit", "--data", str(f), "--model", "cox", "--time", "time", "--status",
                 "status", "--r", "500", "--out", str(out), "--plots", "false"]) == 0
    assert len(pd.read_csv(out)) == 8


def test_parse_beta():
    assert parse_beta("0.5*3", "linear", 5) == (0.5, 0.5, 0.5, 0.0, 0.0)
    assert parse_beta("1,2", "linear", 2) == (1.0, 2.0)
    assert parse_beta(None, "linear", 4) is None
    with pytest.raises(ConfigError):
        parse_beta("1*5", "linear", 3)


@pytest.mark.parametrize("in_file,on_cli,expected", [
    (None, None, 0.1),
    ("0.3", None, 0.3),
    (None, "0.4", 0.4),
    ("0.3", "0.4", 0.4),
])
def test_config_merge_matrix(tmp_path, in_file, on_cli, expected):
    cfg = tmp_path / "run.cfg"
    lines = ["# defaults for this run", "model = linear", "n = 5000"]
    if in_file is not None:
        lines.append(f"delta = {in_file}   # mixture weight")
    cfg.write_text("\n".join(lines) + "\n")
    argv = ["simulate", "--config", str(cfg)]
    if on_cli is not None:
        argv += ["--delta", on_cli]
    args = build_parser().parse_args(merge_argv(argv))
    assert args.delta == pytest.approx(expected)
    assert args.model == "linear" and args.n == 5000


def test_config_file_errors(tmp_path):
    cfg = tmp_path / "bad.cfg"
    cfg.write_text("delta 0.3\n")
    assert main(["simulate", "--config", str(cfg)]) == 2
    assert main(["simulate", "--config", str(tmp_path / "missing.cfg")]) == 2
    cfg.write_text("r_01 = 7\n")
    assert read_config(cfg) == ["--r-01", "7"]


def test_simulate_outputs(tmp_path, capsys):
    out = tmp_path / "sim.csv"
    argv = ["simulate", "--model", "linear", "--n", "6000", "--p", "8", "--r", "400",
            "--reps", "3", "--out", str(out), "--seed", "2"]
    assert main(argv) == 0
    df = pd.read_csv(out)
    assert len(df) == 2 * 8
    assert list(df.columns) == ["model", "case", "method", "r", "j", "bias", "ssd", "ese", "cp"]
    summ = pd.read_csv(tmp_path / "sim_summary.csv")
    assert set(summ["method"]) == {"osp", "unif"}
    for name in ("sim_timings.csv", "sim_ase.png", "sim_ssd_ese.png"):
        assert (tmp_path / name).exists()
    first = out.read_bytes()
    assert main(argv + ["--threads", "2"]) == 0
    assert out.read_bytes() == first


def test_simulate_cox_case2_reports_censoring(tmp_path, capsys):
    out = tmp_path / "cox.csv"
    assert main(["simulate", "--model", "cox", "--case", "2", "--n", "6000", "--p", "6",
                 "--r", "400", "--reps", "2", "--methods", "osp", "--out", str(out),
                 "--plots", "false"]) == 0
    cr = pd.read_csv(tmp_path / "cox_summary.csv")["censoring_rate"].iloc[0]
    assert 0.29 <= cr <= 0.31
    assert "censoring rate" in capsys.readouterr().out


def test_bench_outputs(tmp_path):
    out = tmp_path / "bench.csv"
    assert main(["bench", "--model", "linear", "--n", "5000", "--p", "10", "--r", "300",
                 "--reps", "2", "--include-full-scad", "true", "--out", str(out)]) == 0
    df = pd.read_csv(out)
    assert set(df["method"]) == {"unif", "osp", "full", "full-scad"}
    t = pd.read_csv(tmp_path / "bench_timings.csv")
    assert (t["mean_time"] > 0).all()
    assert (tmp_path / "bench_timings.png").exists()
