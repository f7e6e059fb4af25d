import csv
import json
import subprocess
import sys

import numpy as np
import pytest

from gomp import __version__
from gomp.cli import main
from gomp.pursuit import fingerprint


def _toy_csv(path, n=40, p=8, seed=0, noise=0.0):
    rng = np.random.default_rng(seed)
    X = rng.standard_normal((n, p))
    y = 2.0 * X[:, 1] - 1.5 * X[:, 4] + noise * rng.standard_normal(n)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["y"] + [f"f{j}" for j in range(p)])
        for i in range(n):
            w.writerow([repr(float(y[i]))] + [repr(float(v)) for v in X[i]])
    return path


def _load(path):
    with open(path) as fh:
        return json.load(fh)


def _check_envelope(doc, seed=None):
    assert doc["tool"] == "gomp"
    assert doc["version"] == __version__
    assert doc["seed"] == seed
    assert doc["config_fingerprint"] == fingerprint(doc["run_config"])


def test_simulate_single_and_envelope(tmp_path):
    assert main(["simulate", "--n", "50", "--p", "20", "--seed", "3", "--out", str(tmp_path)]) == 0
    doc = _load(tmp_path / "simulate.json")
    _check_envelope(doc, 3)
    assert len(doc["datasets"]) == 1
    for f in ("sim.csv", "sim.schema.json", "sim.truth.json"):
        assert (tmp_path / f).exists()


def test_simulate_sweep_ten_datasets(tmp_path):
    assert main(["simulate", "--p", "15", "--sweep", "--seed", "1", "--out", str(tmp_path)]) == 0
    doc = _load(tmp_path / "simulate.json")
    assert len(doc["datasets"]) == 10
    assert sorted(tmp_path.glob("sim_n*.csv")) == sorted(tmp_path / f"sim_n{n}.csv" for n in range(100, 1001, 100))


def test_simulate_reproduces_bytes(tmp_path):
    for sub in ("a", "b"):
        assert main(["simulate", "--n", "40", "--p", "10", "--seed", "7", "--out", str(tmp_path / sub)]) == 0
    for f in ("sim.csv", "sim.schema.json", "sim.truth.json", "simulate.json"):
        assert (tmp_path / "a" / f).read_bytes() == (tmp_path / "b" / f).read_bytes()


def test_select_noiseless_lists_planted(tmp_path):
    data = _toy_csv(tmp_path / "toy.csv")
    rc = main(["select", "--input", str(data), "--outcome", "y", "--stop-rule", "lr", "--stop-grid", "3.84",
               "--out", str(tmp_path)])
    assert rc == 0
    doc = _load(tmp_path / "select.json")
    _check_envelope(doc)
    assert [sorted(r["selected"]) for r in doc["gomp"]] == [[1, 4]]
    assert doc["gomp"][0]["steps"]


def test_select_lasso_sizes(tmp_path):
    data = _toy_csv(tmp_path / "toy.csv", noise=0.5)
    assert main(["select", "--input", str(data), "--outcome", "y", "--method", "lasso", "--lambda-count", "20",
                 "--out", str(tmp_path)]) == 0
    lasso = _load(tmp_path / "select.json")["lasso"]
    assert lasso["support_sizes"][0] == 0
    assert len(lasso["support_sizes"]) == len(lasso["lambdas"])


def test_select_omp_classic(tmp_path):
    data = _toy_csv(tmp_path / "toy.csv")
    assert main(["select", "--input", str(data), "--outcome", "y", "--method", "omp-classic", "--stop-grid",
                 "1e-6", "--out", str(tmp_path)]) == 0
    assert sorted(_load(tmp_path / "select.json")["omp_classic"][0]["selected"]) == [1, 4]


def test_exit_codes(tmp_path, capsys):
    data = _toy_csv(tmp_path / "toy.csv")
    # family incompatible with a continuous outcome
    assert main(["select", "--input", str(data), "--outcome", "y", "--family", "cox", "--out", str(tmp_path)]) == 2
    assert "usage error" in capsys.readouterr().err
    assert main(["select", "--input", str(tmp_path / "missing.csv"), "--outcome", "y"]) == 3
    bad = tmp_path / "bad.csv"
    bad.write_text("y,f0\n1.0,2.0\n2.0,oops\n")
    assert main(["select", "--input", str(bad), "--outcome", "y", "--out", str(tmp_path)]) == 3
    surv = tmp_path / "surv.csv"
    surv.write_text("t,e,f0\n1.0,0,0.5\n2.0,0,-0.5\n3.0,0,1.5\n4.0,0,0.1\n")
    assert main(["select", "--input", str(surv), "--time", "t", "--event", "e", "--out", str(tmp_path)]) == 4
    with pytest.raises(SystemExit) as exc:
        main(["cv", "--input", str(data), "--outcome", "y"])
    assert exc.value.code == 2


def test_module_entry_point(tmp_path):
    proc = subprocess.run([sys.executable, "-m", "gomp", "--version"], capture_output=True, text=True)
    assert proc.returncode == 0
    assert __version__ in proc.stdout


def _cv_run(data, out, threads, extra=()):
    args = ["cv", "--input", str(data), "--outcome", "y", "--folds", "4", "--bbc-iters", "50", "--seed", "5",
            "--lambda-count", "10", "--method", "both", "--threads", str(threads), "--out", str(out), *extra]
    assert main(args) == 0


def test_cv_outputs_and_determinism(tmp_path):
    data = _toy_csv(tmp_path / "toy.csv", n=48, p=12, noise=1.0)
    _cv_run(data, tmp_path / "a", 1)
    _cv_run(data, tmp_path / "b", 1)
    _cv_run(data, tmp_path / "c", 4)
    doc = _load(tmp_path / "a" / "cv.json")
    _check_envelope(doc, 5)
    gomp = doc["reports"]["gomp"]
    assert len(gomp["config_labels"]) == 100
    assert gomp["naive_best_metric"] is not None and gomp["bbc_metric"] is not None
    assert len(gomp["selected_set_sizes"]) == 4
    for f in ("cv.json", "predictions_gomp.csv", "predictions_lasso.csv"):
        ref = (tmp_path / "a" / f).read_bytes()
        assert (tmp_path / "b" / f).read_bytes() == ref
        assert (tmp_path / "c" / f).read_bytes() == ref
    assert _load(tmp_path / "c" / "timing.json")["threads"] == 4


def test_cv_survival_defaults_to_eight_folds(tmp_path):
    rng = np.random.default_rng(2)
    x = rng.standard_normal((40, 3))
    t = rng.exponential(np.exp(-x[:, 0]))
    path = tmp_path / "s.csv"
    with open(path, "w") as fh:
        fh.write("time,event,a,b,c\n")
        for i in range(40):
            fh.write(",".join([repr(float(t[i])), str(int(i % 4 != 0))] + [repr(float(v)) for v in x[i]]) + "\n")
    assert main(["cv", "--input", str(path), "--time", "time", "--event", "event", "--bbc-iters", "20",
                 "--no-reregularize", "--seed", "1", "--out", str(tmp_path)]) == 0
    report = _load(tmp_path / "cv.json")["reports"]["gomp"]
    assert report["folds"] == 8
    assert report["metric"] == "c-index"


def _bench_args(out, threads):
    return ["bench", "--n-values", "60,80", "--p", "30", "--n-true", "3", "--snr", "1e9", "--folds", "3",
            "--bbc-iters", "30", "--lambda-count", "20", "--no-reregularize", "--seed", "11",
            "--threads", str(threads), "--out", str(out)]


def test_bench_outputs(tmp_path):
    assert main(_bench_args(tmp_path / "a", 1)) == 0
    assert main(_bench_args(tmp_path / "b", 4)) == 0
    doc = _load(tmp_path / "a" / "bench.json")
    _check_envelope(doc, 11)
    assert len(doc["datasets"]) == 2
    for e in doc["datasets"]:
        assert e["gomp"]["fdr"] == 0.0 and e["gomp"]["tpr"] == 1.0
        assert abs(e["lasso_star"]["size"] - e["gomp"]["size"]) <= 1
    # both methods recover every planted feature, so the paired TPR differences are all zero
    assert doc["sign_permutation_tests"]["tpr"]["p_value"] == 1.0
    for f in ("bench.json", "bench.csv"):
        assert (tmp_path / "a" / f).read_bytes() == (tmp_path / "b" / f).read_bytes()
    with open(tmp_path / "a" / "bench.csv") as fh:
        rows = list(csv.DictReader(fh))
    assert {r["method"] for r in rows} == {"gomp", "lasso", "lasso_star"}
    timing = _load(tmp_path / "a" / "timing.json")
    assert "speedup_gomp_vs_lasso" in timing["seconds"]["per_dataset"][0]


def test_threads_env_fallback(tmp_path, monkeypatch):
    from gomp.cli import _thread_count

    monkeypatch.setenv("GOMP_THREADS", "3")
    assert _thread_count(None) == 3
    assert _thread_count(2) == 2
