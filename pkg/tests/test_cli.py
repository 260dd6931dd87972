import csv
import hashlib

import numpy as np
import pytest

from sabrnet.cli import main
from sabrnet.dataio import read_dataset

BASE = """\
gen.m = 3
gen.n = 5
gen.t_last = 0.6
sim.dt = 0.01
sim.n_paths = 1000
sim.accurate_factor = 10
generate.count = 12
net.nodes_per_layer = 8
train.lr_initial = 1e-3
train.lr_floor = 1e-5
train.batch_size = 4
train.max_epochs = 20
data.train = {d}/tr.bin
data.validate = {d}/va.bin
data.test = {d}/te.bin
data.test_accurate = {d}/ta.bin
sweep.layers = 1
sweep.nodes = 4,8
study.fractions = 1,0.5
synth.points = 300
synth.replications = 40
hagan.n_paths = 20000
hagan.n_strikes = 7
"""


def sha(path):
    return hashlib.sha256(open(path, "rb").read()).hexdigest()


def read_rows(path):
    with open(path) as fh:
        lines = [ln for ln in fh if not ln.startswith("#")]
    return list(csv.DictReader(lines))


@pytest.fixture(scope="module")
def work(tmp_path_factory):
    d = tmp_path_factory.mktemp("cli")
    cfg = d / "run.cfg"
    cfg.write_text(BASE.format(d=d))
    c = ["--config", str(cfg), "--quiet"]
    for role, extra in (("train", []), ("validate", ["--count", "6"]), ("test", []),
                        ("test-accurate", ["--workers", "2"])):
        fname = {"train": "tr", "validate": "va", "test": "te", "test-accurate": "ta"}[role]
        assert main(["generate", *c, "--role", role, "--out", str(d / f"{fname}.bin"), *extra]) == 0
    assert main(["train", *c, "--out", str(d / "net.ckpt")]) == 0
    return d, c


def test_generate_outputs(work):
    d, _ = work
    ta = read_dataset(d / "ta.bin")
    assert ta.n_paths == 10 * read_dataset(d / "te.bin").n_paths
    assert "config_hash" in ta.meta and "tool_version" in ta.meta
    assert (d / "tr.bin.log").exists()
    assert "paths_per_second" in (d / "tr.bin.log").read_text()


def test_generate_is_idempotent_across_workers(work, tmp_path):
    d, c = work
    for w in ("1", "3"):
        assert main(["generate", *c, "--role", "test-accurate", "--workers", w,
                     "--out", str(tmp_path / f"w{w}.bin")]) == 0
    assert sha(tmp_path / "w1.bin") == sha(tmp_path / "w3.bin") == sha(d / "ta.bin")


def test_train_is_idempotent(work, tmp_path):
    d, c = work
    assert main(["train", *c, "--out", str(tmp_path / "again.ckpt")]) == 0
    assert sha(tmp_path / "again.ckpt") == sha(d / "net.ckpt")
    hist = read_rows(d / "net.ckpt.history.csv")
    assert [int(r["epoch"]) for r in hist] == list(range(1, len(hist) + 1))


def test_evaluate_outputs(work):
    d, c = work
    out = d / "eval"
    assert main(["evaluate", *c, "--checkpoint", str(d / "net.ckpt"), "--out", str(out)]) == 0
    report = {r["field"]: r["value"] for r in read_rows(out / "report.csv")}
    assert "e_pred_hat" in report and "n_pred" in report
    for name in ("T", "K", "alpha0", "nu", "rho"):
        rows = read_rows(out / f"quintiles_{name}.csv")
        assert len(rows) == 6 and rows[0]["bucket"] == "all"
        assert float(rows[0]["e_pred"]) == float(report["e_pred_hat"])
    ci = read_rows(out / "ci_plot.csv")
    assert len(ci) == 3 * 3 * 5
    first = open(out / "report.txt").readline()
    assert first.startswith("# sabrnet ") and "config=" in first


def test_subset_sweep_study_synth(work, tmp_path):
    d, c = work
    assert main(["subset", *c, "--input", str(d / "tr.bin"), "--fraction", "0.25",
                 "--out", str(tmp_path / "q.bin")]) == 0
    assert read_dataset(tmp_path / "q.bin").ids == [0, 1, 2]
    assert main(["sweep", *c, "--out", str(tmp_path / "sweep.csv")]) == 0
    assert len(read_rows(tmp_path / "sweep.csv")) == 2
    assert main(["study", *c, "--out", str(tmp_path / "study.csv")]) == 0
    assert [float(r["fraction"]) for r in read_rows(tmp_path / "study.csv")] == [0.5, 1.0]
    assert main(["synth-validate", *c, "--out", str(tmp_path / "syn.csv")]) == 0
    assert len(read_rows(tmp_path / "syn.csv")) == 40
    assert main(["export", *c, "--input", str(d / "te.bin"), "--out", str(tmp_path / "te.csv")]) == 0


def test_exit_codes(work, tmp_path):
    d, c = work
    assert main(["train", *c, "--set", "nope=1", "--out", str(tmp_path / "x")]) == 2
    assert main(["train", *c, "--set", "train.lr_floor=1", "--out", str(tmp_path / "x")]) == 2
    bad = tmp_path / "bad.bin"
    bad.write_bytes(open(d / "te.bin", "rb").read()[:100])
    assert main(["evaluate", *c, "--checkpoint", str(d / "net.ckpt"), "--test", str(bad),
                 "--out", str(tmp_path / "e")]) == 3
    assert main(["subset", *c, "--input", str(d / "tr.bin"), "--fraction", "0.3",
                 "--out", str(tmp_path / "s.bin")]) == 3
    assert main(["generate", *c, "--role", "train", "--set", "hagan.rho=2",
                 "--out", str(tmp_path / "g.bin")]) == 0  # unused keys are still validated lazily
    assert main(["hagan-compare", *c, "--set", "hagan.rho=2", "--out", str(tmp_path / "h.csv")]) == 2


def test_hagan_compare_collapse(work, tmp_path):
    _, c = work
    out = tmp_path / "h.csv"
    assert main(["hagan-compare", *c, "--set", "hagan.nu=0", "--set", "hagan.alpha0=0.25",
                 "--out", str(out)]) == 0
    rows = read_rows(out)
    assert len(rows) == 2 * 7
    for r in rows:
        assert float(r["hagan_iv"]) == 0.25
        if r["excluded"] == "False":
            assert float(r["ci_lo"]) <= 0.25 <= float(r["ci_hi"])
    for T in {r["T"] for r in rows}:
        ks = [float(r["K"]) for r in rows if r["T"] == T]
        assert np.all(np.diff(ks) > 0)


def test_hagan_compare_long_maturity_failure(work, tmp_path):
    _, c = work
    out = tmp_path / "h.csv"
    assert main(["hagan-compare", *c, "--set", "hagan.n_paths=200000", "--set", "sim.dt=0.005",
                 "--set", "hagan.n_strikes=15", "--out", str(out)]) == 0
    rows = [r for r in read_rows(out) if float(r["T"]) == 1.5 and r["excluded"] == "False"]
    outside = [r for r in rows if not float(r["ci_lo"]) <= float(r["hagan_iv"]) <= float(r["ci_hi"])]
    assert outside
