"""Acceptance suite: one test per criterion, each printing a PASS/FAIL line."""

import json
import subprocess
import sys

import numpy as np
import pytest

from smgd import theory
from smgd.core import LatticeVector, SmgdConfig
from smgd.estimators import EstimatorSpec, half_norm_squared, random_finite_sum_quadratic, unbiasedness_check
from smgd.qnn import memory_report
from smgd.rng import substream
from smgd.cli import count_inversions

from conftest import CONFIGS, MNIST_DIR, REPO
from test_qnn import central_differences, random_real_net, real_gradient

pytestmark = pytest.mark.acceptance


def standard_instance():
    return half_norm_squared(2), LatticeVector.from_real([0.4, -0.2], 0.1), SmgdConfig(0.1, 1.0, 1)


def smgd_cli(*args, cwd=REPO):
    proc = subprocess.run([sys.executable, "-m", "smgd.cli", *map(str, args)], cwd=cwd,
                          capture_output=True, text=True)
    return proc.returncode, proc.stdout, proc.stderr


def test_c01_cost_bound(criterion):
    with criterion(1, "cost bound equality on separable quadratics", 1.0) as c:
        p, x, cfg = standard_instance()
        d = theory.check_cost_bound(p, EstimatorSpec.exact(), x, cfg).details[0]
        assert abs(d["lhs"] - 0.083) <= 1e-15 and abs(d["rhs"] - 0.083) <= 1e-15
        r = theory.suite_cost_bound(n_problems=20, n_points=50)
        gap = max(rec["gap"] for rec in r.details)
        assert r.instances_checked == 1000
        assert r.violations == 0
        assert gap <= 1e-12
        c.detail = f"1000 points, max |E f(x') - rhs| = {gap:.2e}; worked value 0.083"


def test_c02_minibatch_theorem(criterion):
    with criterion(2, "mini-batch expected-norm theorem", 10.0) as c:
        r = theory.suite_minibatch((4, 6, 8), trials=20)
        monotone = [d for d in r.details if d["check"] == "monotone" and d["norm"] == "l1"]
        assert r.violations == 0
        assert monotone and all(d["value"] <= d["bound"] + 1e-12 * max(1, abs(d["value"])) for d in monotone)
        c.detail = f"20 problems, {r.instances_checked} enumerated checks, 0 violations"


def test_c03_rate_bound(criterion):
    with criterion(3, "iterate-distance rate bound", 120.0) as c:
        p, x, cfg = standard_instance()
        d = theory.check_rate_bound(p, EstimatorSpec.exact(), x, cfg).details[0]
        assert abs(d["lhs"] - 0.166) <= 1e-15 and d["lhs"] <= d["rhs"]
        assert abs(d["rhs"] - 0.16632) <= 5e-6
        r = theory.suite_rate_bound(n_problems=10, n_points=50, n_draws=10**5)
        noisy = [rec for rec in r.details if rec["estimator"].startswith("minibatch") and rec["noise_term"] > 0]
        assert r.instances_checked == 500
        assert noisy
        assert r.violations == 0
        c.detail = (f"500 points, {len(noisy)} mini-batch points with E||G(x*)||_1 > 0, "
                    f"min slack {r.max_slack:.2e}, 0 violations beyond 4 SE")


def test_c04_tightness(criterion):
    with criterion(4, "tightness example by enumeration", 1.0) as c:
        r = theory.suite_tightness(range(1, 9), (0.25, 0.5), (1.0, 2.0, 10.0))
        cases = [case for d in r.details for case in d["cases"]]
        assert len(cases) == 48
        assert all(case["exact_equal"] for case in cases)
        assert r.violations == 0
        c.detail = "n = 1..8, 2 alphas x 3 etas, E f(x1) = f(x0) and E||x1 - x*||^2 = ||x0 - x*||^2 exactly"


def test_c05_corollaries(criterion):
    with criterion(5, "exact-gradient corollaries", 120.0) as c:
        reports = theory.suite_corollaries(1000, 0)
        for tid in ("mgd_decrease_s6", "mgd_strongconv_s6", "mgd_rate_s6"):
            assert reports[tid].instances_checked >= 1000
            assert reports[tid].violations == 0, tid
        c.detail = ", ".join(f"{k}: {v.instances_checked} ok" for k, v in sorted(reports.items()))


def test_c06_mnist(criterion, tmp_path):
    with criterion(6, "MNIST desk run, q=4 and q=1", 1200.0) as c:
        assert (MNIST_DIR / "subset-train-images-idx3-ubyte.gz").exists() or any(MNIST_DIR.glob("train-images*")), \
            f"no MNIST files under {MNIST_DIR}"
        accs = {}
        for q, bar in ((4, 0.90), (1, 0.70)):
            code, out, err = smgd_cli("train", "--config", CONFIGS / f"mnist_q{q}.json", "--data-dir", MNIST_DIR,
                                      "--out", tmp_path / f"q{q}")
            assert code == 0, err
            summary = json.loads(out)
            accs[q] = summary["median_test_acc"]
            assert len(summary["test_acc"]) == 3
            assert accs[q] >= bar, f"q={q} median accuracy {accs[q]} below {bar}"
        c.detail = f"3-seed median test accuracy q=4 {accs[4]:.4f} (>= 0.90), q=1 {accs[1]:.4f} (>= 0.70)"


def test_c07_memory(criterion):
    with criterion(7, "memory model", 1.0) as c:
        from fractions import Fraction

        for q in range(1, 9):
            assert memory_report(1, "online", q_bits=q).bits_per_weight == 2 + q
            assert memory_report(1, "minibatch", q_bits=q).bits_per_weight == 32 + q
            assert memory_report(1, "full_precision_sgd", q_bits=q).bits_per_weight == 64
            assert memory_report(1, "online", q_bits=q).size_multiplier_vs_fp == Fraction(64, 2 + q)
        c.detail = "bits {2+q, 32+q, 64} and multiplier 64/(2+q) for q = 1..8"


def test_c08_minibatch_effect(criterion, tmp_path):
    with criterion(8, "mini-batch effect on blobs", 300.0) as c:
        code, out, err = smgd_cli("minibatch-study", "--config", CONFIGS / "minibatch_blobs.json", "--out", tmp_path)
        assert code == 0, err
        summary = json.loads((tmp_path / "summary.json").read_text())
        assert summary["batch_sizes"] == [1, 4, 16, 64]
        assert all(len(e["final_losses"]) == 5 for e in summary["per_k"])
        inversions = count_inversions(summary["medians"])
        assert inversions <= 1
        c.detail = "medians " + ", ".join(f"{m:.4f}" for m in summary["medians"]) + f"; {inversions} inversions"


def test_c09_estimators_and_backward(criterion):
    with criterion(9, "estimator unbiasedness and backward pass", 60.0) as c:
        gen = substream(9)
        worst = 0.0
        for trial in range(3):
            m = (4, 6, 8)[trial]
            p = random_finite_sum_quadratic(3, m, gen, spread=1.0)
            x = p.minimizer + gen.normal(size=3)
            specs = [EstimatorSpec.exact(), EstimatorSpec.uniform()] + [EstimatorSpec.minibatch(k) for k in range(1, m + 1)]
            for spec in specs:
                rep = unbiasedness_check(p, spec, x, 20_000, trial)
                worst = max(worst, float(np.max(np.abs(rep.z_scores))))
        assert worst < 4.0
        fd_worst, checked = 0.0, 0
        for seed in range(5):
            W, B = random_real_net((8, 4, 3), seed)
            g = np.random.default_rng(100 + seed)
            xb, yb = g.normal(size=(6, 8)), g.integers(0, 3, 6)
            analytic = real_gradient(W, B, xb, yb)
            (gw, gb), (sw, sb) = central_differences(W, B, xb, yb)
            for a, n, s in zip([*analytic.weights, *analytic.biases], [*gw, *gb], [*sw, *sb]):
                rel = np.abs(a - n)[s] / np.maximum(np.maximum(np.abs(a), np.abs(n))[s], 1e-3)
                fd_worst = max(fd_worst, float(rel.max(initial=0.0)))
                checked += int(s.sum())
        assert fd_worst <= 1e-5
        c.detail = f"max |z| = {worst:.2f} over all estimators; backward vs central differences {fd_worst:.1e} ({checked} entries)"


def test_c10_determinism(criterion, tmp_path):
    with criterion(10, "byte-identical outputs across executions", 600.0) as c:
        runs = [
            ("verify", "--theorem", "all", "--omit-timing", "--instances", "200"),
            ("convex-lab", "--config", CONFIGS / "convex_lab_eta.json", "--seeds", "10"),
            ("minibatch-study", "--config", CONFIGS / "minibatch_blobs.json"),
            ("train", "--config", CONFIGS / "mnist_q4.json", "--data-dir", MNIST_DIR, "--max-steps", "150"),
        ]
        compared = 0
        for i, args in enumerate(runs):
            # identical config includes the output directory, so both executions share it
            out = tmp_path / str(i)
            snapshots = []
            for _ in range(2):
                code, stdout, err = smgd_cli(*args, "--out", out)
                assert code == 0, err
                snapshots.append(({f.name: f.read_bytes() for f in sorted(out.iterdir())}, stdout))
                for f in out.iterdir():
                    f.unlink()
            (a, sa), (b, sb) = snapshots
            assert sorted(a) == sorted(b)
            for name in sorted(a):
                assert a[name] == b[name], f"{args[0]}: {name} differs"
                compared += name.endswith(".csv")
            assert sa == sb
        assert compared >= 4
        c.detail = f"{len(runs)} commands run twice, {compared} CSV files plus JSON and checkpoints identical"
