"""Command-line experiment driver.

Subcommands: ``verify``, ``convex-lab``, ``minibatch-study``, ``train`` and
``memory``.  Each accepts ``--config FILE`` (a JSON object whose keys are the
subcommand's option names, plus an optional ``"command"``) and individual
flags, which override the file.  Unknown keys are rejected.  Runs that write
to ``--out`` also write the resolved configuration there as
``config.resolved.json``.

Traces use a fixed CSV schema, see :data:`CSV_HEADER`.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import io
import json
import math
import statistics
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Callable, Optional, Sequence, Union

import numpy as np

from . import theory
from .core import LatticeVector, SmgdConfig, run
from .data import Dataset, blobs_from_spec, load_mnist
from .estimators import EstimatorSpec, enumerate_expected_l1, make_problem
from .qnn import (
    MEMORY_MODES,
    FloatMlp,
    QuantizedMlp,
    TrainConfig,
    memory_report,
    save_checkpoint,
    train_sgd,
    train_smgd,
)

CSV_HEADER = ("run_id", "seed", "step", "epoch", "f", "grad_l1", "grad_l2", "dist_sq", "support", "clip_rate", "test_acc")

EXIT_OK = 0
EXIT_VIOLATION = 1
EXIT_USAGE = 2


class ConfigError(ValueError):
    pass


# ---------------------------------------------------------------- CSV output

def _cell(value) -> str:
    if value is None:
        return ""
    if isinstance(value, (bool, np.bool_)):
        return str(int(value))
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    if isinstance(value, (float, np.floating)):
        return repr(float(value))
    return str(value)


def csv_text(rows: Sequence[dict], header: Sequence[str] = CSV_HEADER) -> str:
    """RFC 4180 text with LF line endings; missing fields are empty."""
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for r in rows:
        extra = set(r) - set(header)
        if extra:
            raise ValueError(f"row has fields outside the schema: {sorted(extra)}")
        w.writerow([_cell(r.get(k)) for k in header])
    return buf.getvalue()


def write_csv(path: Path, rows: Sequence[dict], header: Sequence[str] = CSV_HEADER) -> None:
    path.write_bytes(csv_text(rows, header).encode("utf-8"))


def _dump_json(path: Path, obj) -> None:
    path.write_text(json.dumps(obj, indent=2, sort_keys=True, default=_json_default) + "\n", encoding="utf-8")


def _json_default(obj):
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, np.generic):
        return obj.item()
    raise TypeError(f"cannot serialize {type(obj).__name__}")


def trace_rows(trace, run_id: str, seed: int, lattice: bool = True) -> list[dict]:
    # support counts flips, so it is blank before the first step and for real-valued baselines
    return [dict(run_id=run_id, seed=seed, step=r.step, f=r.f, grad_l1=r.grad_l1, grad_l2=r.grad_l2,
                 dist_sq=r.dist_sq, support=r.support if lattice and r.step > 0 else None,
                 clip_rate=r.clip_rate) for r in trace.rows]


def curve_rows(curve, run_id: str, seed: int) -> list[dict]:
    return [dict(run_id=run_id, seed=seed, step=r.step, epoch=r.epoch, f=r.f, grad_l1=r.grad_l1,
                 grad_l2=r.grad_l2, support=r.support, clip_rate=r.clip_rate, test_acc=r.test_acc)
            for r in curve.rows]


# ------------------------------------------------------------ configuration

@dataclass
class VerifyConfig:
    theorem: str = "all"
    n: str = "1..8"
    m: Optional[list] = None
    trials: int = 20
    # default: 20 for the cost bound, 10 for the rate bound
    problems: Optional[int] = None
    points: int = 50
    draws: int = 100_000
    instances: int = 1000
    seed: int = 0
    lipschitz_scale: float = 1.0
    omit_timing: bool = False
    out: Optional[str] = None


@dataclass
class ConvexLabConfig:
    problem: dict = field(default_factory=lambda: {"family": "half_norm_squared", "n": 2})
    estimator: str = "exact"
    alphas: list = field(default_factory=lambda: [0.1])
    etas: list = field(default_factory=lambda: [1.0])
    seeds: int = 10
    seed: int = 0
    iterations: int = 200
    trace_stride: int = 1
    x0: Optional[list] = None
    sgd_baseline: bool = True
    workers: int = 1
    out: Optional[str] = None


@dataclass
class MinibatchStudyConfig:
    task: str = "blobs"
    dataset: str = "blobs:n=200,d=2,c=2,sep=1.5,seed=0"
    layer_dims: list = field(default_factory=lambda: [2, 16, 2])
    q_bits: int = 8
    midrise: bool = False
    alpha_scale: float = 1.0
    eta: float = 0.05
    steps: int = 300
    eval_stride: int = 50
    problem: dict = field(default_factory=lambda: {"family": "finite_sum_quadratic", "n": 3, "m": 6})
    alpha: float = 0.05
    batch_sizes: list = field(default_factory=lambda: [1, 4, 16, 64])
    seeds: int = 5
    seed: int = 0
    workers: int = 1
    out: Optional[str] = None


@dataclass
class TrainRunConfig:
    dataset: str = "mnist"
    test_dataset: Optional[str] = None
    data_dir: Optional[str] = None
    layer_dims: list = field(default_factory=lambda: [784, 256, 10])
    q_bits: int = 4
    midrise: bool = False
    alpha: Any = None
    alpha_scale: float = 1.0
    eta: float = 0.1
    epochs: int = 5
    batch_size: int = 32
    eval_stride: int = 0
    max_steps: Optional[int] = None
    seeds: list = field(default_factory=lambda: [0])
    sgd_gamma: Optional[float] = None
    out: Optional[str] = None


@dataclass
class MemoryConfig:
    q: int = 4
    mode: str = "online"
    dims: list = field(default_factory=lambda: [784, 256, 10])
    weights: Optional[int] = None
    out: Optional[str] = None


# one JSON document per run; the optional "command" key must match the subcommand
ExperimentConfig = Union[VerifyConfig, ConvexLabConfig, MinibatchStudyConfig, TrainRunConfig, MemoryConfig]


def resolve_config(cls, file_values: dict, overrides: dict, command: str):
    """Merge file values and flag overrides into ``cls``, rejecting unknown keys."""
    names = {f.name for f in dataclasses.fields(cls)}
    merged = dict(file_values)
    cmd = merged.pop("command", command)
    if cmd != command:
        raise ConfigError(f"config is for command {cmd!r}, not {command!r}")
    merged.update(overrides)
    unknown = sorted(set(merged) - names)
    if unknown:
        raise ConfigError(f"unknown {command} config keys: {', '.join(unknown)}")
    return cls(**merged)


def config_dict(cfg, command: str) -> dict:
    return {"command": command, **dataclasses.asdict(cfg)}


def _load_json(path: Optional[str]) -> dict:
    if not path:
        return {}
    doc = json.loads(Path(path).read_text(encoding="utf-8"))
    if not isinstance(doc, dict):
        raise ConfigError(f"{path}: config must be a JSON object")
    return doc


def _prepare_out(out: Optional[str], cfg, command: str) -> Optional[Path]:
    if out is None:
        return None
    path = Path(out)
    path.mkdir(parents=True, exist_ok=True)
    _dump_json(path / "config.resolved.json", config_dict(cfg, command))
    return path


def parse_int_range(text: str) -> list[int]:
    """``"3"`` -> [3]; ``"1..8"`` -> [1, ..., 8]; ``"1,4,16"`` -> [1, 4, 16]."""
    text = str(text).strip()
    if ".." in text:
        a, b = text.split("..", 1)
        lo, hi = int(a), int(b)
        if hi < lo:
            raise ConfigError(f"empty range {text!r}")
        return list(range(lo, hi + 1))
    return [int(t) for t in text.split(",") if t]


def parse_estimator(text: str) -> EstimatorSpec:
    if text == "exact":
        return EstimatorSpec.exact()
    if text == "uniform":
        return EstimatorSpec.uniform()
    if text.startswith("minibatch:"):
        return EstimatorSpec.minibatch(int(text.split(":", 1)[1]))
    raise ConfigError(f"estimator must be exact, uniform or minibatch:K, got {text!r}")


def _floats(text: str) -> list[float]:
    return [float(t) for t in text.split(",") if t]


def _ints(text: str) -> list[int]:
    return [int(t) for t in text.split(",") if t]


def _problem(spec: dict):
    if not isinstance(spec, dict) or "family" not in spec:
        raise ConfigError("problem must be an object with a 'family' key")
    params = {k: v for k, v in spec.items() if k != "family"}
    try:
        return make_problem(spec["family"], **params)
    except (TypeError, KeyError) as exc:
        raise ConfigError(f"bad problem parameters: {exc}") from exc


def _map(fn: Callable, items: list, workers: int) -> list:
    if workers <= 1 or len(items) <= 1:
        return [fn(it) for it in items]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, items))


# ----------------------------------------------------------------- verify

def _verify_one(theorem: str, cfg: VerifyConfig) -> list[theory.TheoremReport]:
    T = theory.TheoremId
    if theorem == T.COST_BOUND.value:
        return [theory.suite_cost_bound(cfg.problems or 20, cfg.points, cfg.seed,
                                        lipschitz_scale=cfg.lipschitz_scale)]
    if theorem == T.MINIBATCH.value:
        m_values = tuple(int(v) for v in (cfg.m or [4, 6, 8]))
        return [theory.suite_minibatch(m_values, cfg.trials, cfg.seed)]
    if theorem == T.RATE.value:
        return [theory.suite_rate_bound(cfg.problems or 10, cfg.points, cfg.draws, cfg.seed)]
    if theorem == T.TIGHTNESS.value:
        return [theory.suite_tightness(parse_int_range(cfg.n))]
    if theorem in (T.MGD_DECREASE.value, T.MGD_STRONGCONV.value, T.MGD_RATE.value):
        reps = theory.suite_corollaries(cfg.instances, cfg.seed)
        return [reps[theorem]]
    raise ConfigError(f"unknown theorem {theorem!r}; expected one of {[t.value for t in T]} or 'all'")


def cmd_verify(cfg: VerifyConfig, stdout=None, stderr=None) -> int:
    stdout, stderr = stdout or sys.stdout, stderr or sys.stderr
    ids = [t.value for t in theory.TheoremId]
    selected = ids if cfg.theorem == "all" else [cfg.theorem]
    for t in selected:
        if t not in ids:
            raise ConfigError(f"unknown theorem {t!r}; expected one of {ids} or 'all'")
    out = _prepare_out(cfg.out, cfg, "verify")
    reports: list[theory.TheoremReport] = []
    corollaries = None
    for t in selected:
        if t.startswith("mgd_") and cfg.theorem == "all":
            # one sweep serves all three corollaries
            if corollaries is None:
                corollaries = theory.suite_corollaries(cfg.instances, cfg.seed)
            reports.append(corollaries[t])
        else:
            reports.extend(_verify_one(t, cfg))
    status = EXIT_OK
    for r in reports:
        if cfg.omit_timing:
            r.runtime_ms = 0.0
        print(json.dumps(r.summary(), sort_keys=True), file=stdout)
        if out is not None:
            (out / f"{r.theorem_id}.json").write_text(r.to_json(with_details=True) + "\n", encoding="utf-8")
        if not r.passed:
            status = EXIT_VIOLATION
            bad = [d for d in r.details if d.get("violated")]
            worst = min(bad, key=lambda d: d.get("slack", 0.0)) if bad else r.worst()
            print(f"VIOLATION {r.theorem_id}: {r.violations}/{r.instances_checked} instances; worst instance:",
                  file=stderr)
            print(json.dumps(worst, sort_keys=True, default=_json_default), file=stderr)
    return status


# ------------------------------------------------------------- convex lab

def _convex_cell(args) -> tuple[str, list[dict], dict]:
    cfg, kind, alpha, eta, seed = args
    problem = _problem(cfg.problem)
    spec = parse_estimator(cfg.estimator)
    x0 = np.asarray(cfg.x0, dtype=float) if cfg.x0 is not None else problem.minimizer + 1.0
    smgd_cfg = SmgdConfig(alpha=alpha, eta=eta, iterations=cfg.iterations, seed=seed, trace_stride=cfg.trace_stride)
    if kind == "smgd":
        run_id = f"smgd_alpha={alpha!r}_eta={eta!r}"
        trace = run(problem, spec, smgd_cfg, LatticeVector.from_real(x0, alpha))
    else:
        gamma = alpha / eta
        run_id = f"sgd_gamma={gamma!r}"
        trace = theory.sgd_comparison_run(problem, gamma, smgd_cfg, x0, spec)
    rows = trace_rows(trace, run_id, seed, lattice=kind == "smgd")
    stats = {"final_f": trace.rows[-1].f, "diverged": trace.diverged}
    steps = [r for r in trace.rows[1:] if r.support is not None]
    if kind == "smgd" and steps:
        stats["support_fraction"] = float(np.mean([r.support for r in steps])) / problem.dimension
        prev = trace.rows[:-1]
        if cfg.trace_stride == 1:
            pred = [min(p.grad_l1 / eta, problem.dimension) / problem.dimension for p in prev]
            stats["predicted_fraction"] = float(np.mean(pred))
    return run_id, rows, stats


def cmd_convex_lab(cfg: ConvexLabConfig, stdout=None) -> int:
    stdout = stdout or sys.stdout
    out = _prepare_out(cfg.out, cfg, "convex-lab")
    _problem(cfg.problem)
    parse_estimator(cfg.estimator)
    seeds = [cfg.seed + s for s in range(cfg.seeds)]
    tasks = [(cfg, "smgd", float(a), float(e), s) for a in cfg.alphas for e in cfg.etas for s in seeds]
    if cfg.sgd_baseline:
        tasks += [(cfg, "sgd", float(a), float(e), s) for a in cfg.alphas for e in cfg.etas for s in seeds]
    results, failures = [], []
    for task, res in zip(tasks, _map(_safe(_convex_cell), tasks, cfg.workers)):
        if isinstance(res, str):
            failures.append({"cell": f"{task[1]} alpha={task[2]!r} eta={task[3]!r}", "seed": task[4], "error": res})
        else:
            results.append((res[0], task[4], res))
    results.sort(key=lambda r: (r[0], r[1]))
    rows = [row for _, _, (_, rs, _) in results for row in rs]
    summary = []
    for run_id in sorted({r[0] for r in results}):
        cell = [st for rid, _, (_, _, st) in results if rid == run_id]
        entry = {"run_id": run_id, "seeds": len(cell), "mean_final_f": float(np.mean([c["final_f"] for c in cell])),
                 "diverged": sum(c["diverged"] for c in cell)}
        for key in ("support_fraction", "predicted_fraction"):
            if all(key in c for c in cell):
                entry["mean_" + key] = float(np.mean([c[key] for c in cell]))
        summary.append(entry)
    if out is not None:
        write_csv(out / "trace.csv", rows)
        _dump_json(out / "summary.json", {"cells": summary, "failures": failures})
    for s in summary:
        print(json.dumps(s, sort_keys=True), file=stdout)
    for f in failures:
        print(json.dumps({"failed": f}, sort_keys=True), file=stdout)
    return EXIT_OK if not failures else EXIT_VIOLATION


def _safe(fn):
    return _Safe(fn)


class _Safe:
    """Picklable wrapper recording a cell failure as its message instead of aborting the sweep."""

    def __init__(self, fn):
        self.fn = fn

    def __call__(self, arg):
        try:
            return self.fn(arg)
        except (ArithmeticError, ValueError) as exc:
            return f"{type(exc).__name__}: {exc}"


# -------------------------------------------------------- mini-batch study

def _study_cell(args):
    cfg, k, seed = args
    run_id = f"k={k}"
    if cfg.task == "blobs":
        train = blobs_from_spec(cfg.dataset)
        net = QuantizedMlp.initialize(cfg.layer_dims, cfg.q_bits, seed, alpha_scale=cfg.alpha_scale,
                                      midrise=cfg.midrise)
        epochs = math.ceil(cfg.steps / (len(train) // k))
        tc = TrainConfig(epochs=epochs, batch_size=k, eta=cfg.eta, seed=seed, eval_stride=cfg.eval_stride,
                         max_steps=cfg.steps)
        _, curve = train_smgd(net, train, tc)
        return run_id, curve_rows(curve, run_id, seed), curve.final_loss
    problem = _problem(cfg.problem)
    smgd_cfg = SmgdConfig(alpha=cfg.alpha, eta=cfg.eta, iterations=cfg.steps, seed=seed,
                          trace_stride=cfg.eval_stride or 1)
    x0 = LatticeVector.from_real(problem.minimizer + 1.0, cfg.alpha)
    trace = run(problem, EstimatorSpec.minibatch(k), smgd_cfg, x0)
    return run_id, trace_rows(trace, run_id, seed), trace.rows[-1].f


def count_inversions(values: Sequence[float]) -> int:
    """Adjacent increases in a sequence that should be non-increasing."""
    return sum(b > a for a, b in zip(values, values[1:]))


def cmd_minibatch_study(cfg: MinibatchStudyConfig, stdout=None) -> int:
    stdout = stdout or sys.stdout
    if cfg.task not in ("blobs", "finite_sum"):
        raise ConfigError(f"task must be 'blobs' or 'finite_sum', got {cfg.task!r}")
    out = _prepare_out(cfg.out, cfg, "minibatch-study")
    ks = sorted(int(k) for k in cfg.batch_sizes)
    seeds = [cfg.seed + s for s in range(cfg.seeds)]
    tasks = [(cfg, k, s) for k in ks for s in seeds]
    results = _map(_study_cell, tasks, cfg.workers)
    rows, finals = [], {k: [] for k in ks}
    for (_, k, s), (run_id, rs, final) in sorted(zip(tasks, results), key=lambda t: (t[0][1], t[0][2])):
        rows.extend(rs)
        finals[k].append(final)
    per_k = []
    enum_x = None
    if cfg.task == "finite_sum":
        problem = _problem(cfg.problem)
        enum_x = problem.minimizer + 1.0
    for k in ks:
        entry = {"batch_size": k, "median_final_loss": statistics.median(finals[k]), "final_losses": finals[k]}
        if enum_x is not None and k <= problem.m:
            entry["expected_grad_l1"] = enumerate_expected_l1(problem, enum_x, k)
        per_k.append(entry)
    medians = [e["median_final_loss"] for e in per_k]
    summary = {"batch_sizes": ks, "medians": medians, "inversions": count_inversions(medians), "per_k": per_k}
    if out is not None:
        write_csv(out / "trace.csv", rows)
        summary_rows = [{"batch_size": e["batch_size"], "median_final_loss": e["median_final_loss"],
                         "expected_grad_l1": e.get("expected_grad_l1")} for e in per_k]
        write_csv(out / "summary.csv", summary_rows, ("batch_size", "median_final_loss", "expected_grad_l1"))
        _dump_json(out / "summary.json", summary)
    print(json.dumps({"medians": medians, "inversions": summary["inversions"]}, sort_keys=True), file=stdout)
    return EXIT_OK


# ------------------------------------------------------------------ train

def _datasets(cfg: TrainRunConfig) -> tuple[Dataset, Optional[Dataset]]:
    if cfg.dataset == "mnist":
        return load_mnist(cfg.data_dir)
    if cfg.dataset.startswith("blobs:"):
        test = blobs_from_spec(cfg.test_dataset, split="test") if cfg.test_dataset else None
        return blobs_from_spec(cfg.dataset), test
    raise ConfigError(f"dataset must be 'mnist' or a blobs spec, got {cfg.dataset!r}")


def cmd_train(cfg: TrainRunConfig, stdout=None) -> int:
    stdout = stdout or sys.stdout
    out = _prepare_out(cfg.out, cfg, "train")
    train, test = _datasets(cfg)
    rows, results = [], []
    for seed in cfg.seeds:
        tc = TrainConfig(epochs=cfg.epochs, batch_size=cfg.batch_size, eta=cfg.eta, seed=int(seed),
                         eval_stride=cfg.eval_stride, max_steps=cfg.max_steps)
        net = QuantizedMlp.initialize(cfg.layer_dims, cfg.q_bits, int(seed), alpha=cfg.alpha,
                                      alpha_scale=cfg.alpha_scale, midrise=cfg.midrise)
        trained, curve = train_smgd(net, train, tc, test)
        run_id = f"smgd_q={cfg.q_bits}"
        rows.extend(curve_rows(curve, run_id, seed))
        results.append({"run_id": run_id, "seed": seed, "final_train_loss": curve.final_loss,
                        "test_acc": curve.final_test_acc, "warnings": curve.warnings})
        if out is not None:
            save_checkpoint(trained, out / f"checkpoint_seed{seed}.bin")
        if cfg.sgd_gamma is not None:
            base = FloatMlp.from_quantized(net)
            _, sgd_curve = train_sgd(base, train, tc, cfg.sgd_gamma, test)
            rows.extend(curve_rows(sgd_curve, f"sgd_gamma={cfg.sgd_gamma!r}", seed))
            results.append({"run_id": f"sgd_gamma={cfg.sgd_gamma!r}", "seed": seed,
                            "final_train_loss": sgd_curve.final_loss, "test_acc": sgd_curve.final_test_acc,
                            "warnings": sgd_curve.warnings})
    accs = [r["test_acc"] for r in results if r["run_id"].startswith("smgd") and r["test_acc"] is not None]
    summary = {"runs": results, "median_test_acc": statistics.median(accs) if accs else None}
    total = _weight_count(cfg.layer_dims)
    memory = {mode: memory_report(total, mode, q_bits=cfg.q_bits).to_json() for mode in MEMORY_MODES}
    if out is not None:
        write_csv(out / "curve.csv", rows)
        _dump_json(out / "summary.json", summary)
        _dump_json(out / "memory.json", memory)
    print(json.dumps({"median_test_acc": summary["median_test_acc"],
                      "test_acc": [r["test_acc"] for r in results]}, sort_keys=True), file=stdout)
    return EXIT_OK


# ----------------------------------------------------------------- memory

def _weight_count(dims) -> int:
    dims = [int(d) for d in dims]
    return sum(a * b + b for a, b in zip(dims[:-1], dims[1:]))


def cmd_memory(cfg: MemoryConfig, stdout=None) -> int:
    stdout = stdout or sys.stdout
    if cfg.mode not in (*MEMORY_MODES, "all"):
        raise ConfigError(f"mode must be one of {MEMORY_MODES} or 'all', got {cfg.mode!r}")
    if cfg.weights is not None:
        total = int(cfg.weights)
    else:
        total = _weight_count(cfg.dims)
    modes = MEMORY_MODES if cfg.mode == "all" else (cfg.mode,)
    reports = [memory_report(total, m, q_bits=cfg.q).to_json() for m in modes]
    out = _prepare_out(cfg.out, cfg, "memory")
    if out is not None:
        _dump_json(out / "memory.json", reports)
    for r in reports:
        print(json.dumps(r, sort_keys=True), file=stdout)
    return EXIT_OK


# ----------------------------------------------------------------- parser

_COMMANDS = {
    "verify": (VerifyConfig, cmd_verify),
    "convex-lab": (ConvexLabConfig, cmd_convex_lab),
    "minibatch-study": (MinibatchStudyConfig, cmd_minibatch_study),
    "train": (TrainRunConfig, cmd_train),
    "memory": (MemoryConfig, cmd_memory),
}


def _json_arg(text: str):
    try:
        return json.loads(text)
    except json.JSONDecodeError as exc:
        raise argparse.ArgumentTypeError(f"not valid JSON: {exc}") from exc


def build_parser() -> argparse.ArgumentParser:
    S = argparse.SUPPRESS
    ap = argparse.ArgumentParser(prog="smgd", description="Stochastic Markov gradient descent experiments")
    sub = ap.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", default=S, help="JSON config file; flags override its values")
        p.add_argument("--out", default=S, help="output directory")

    p = sub.add_parser("verify", help="run theorem verification suites")
    common(p)
    p.add_argument("--theorem", default=S, help="theorem id or 'all'")
    p.add_argument("--n", default=S, help="dimensions for the tightness example, e.g. 1..8")
    p.add_argument("--m", type=_ints, default=S, help="component counts for the mini-batch suite, e.g. 4,6,8")
    p.add_argument("--trials", type=int, default=S)
    p.add_argument("--problems", type=int, default=S)
    p.add_argument("--points", type=int, default=S)
    p.add_argument("--draws", type=int, default=S)
    p.add_argument("--instances", type=int, default=S)
    p.add_argument("--seed", type=int, default=S)
    p.add_argument("--lipschitz-scale", dest="lipschitz_scale", type=float, default=S,
                   help="multiply L in the cost bound (values below 1 are a negative control)")
    p.add_argument("--omit-timing", dest="omit_timing", action="store_const", const=True, default=S,
                   help="write runtime_ms = 0 so reports are byte-reproducible")

    p = sub.add_parser("convex-lab", help="SMGD and SGD sweeps on convex problems")
    common(p)
    p.add_argument("--problem", type=_json_arg, default=S, help='JSON, e.g. {"family": "half_norm_squared", "n": 2}')
    p.add_argument("--estimator", default=S, help="exact, uniform or minibatch:K")
    p.add_argument("--alphas", type=_floats, default=S)
    p.add_argument("--etas", type=_floats, default=S)
    p.add_argument("--seeds", type=int, default=S, help="number of seeds")
    p.add_argument("--seed", type=int, default=S, help="first seed")
    p.add_argument("--iterations", type=int, default=S)
    p.add_argument("--trace-stride", dest="trace_stride", type=int, default=S)
    p.add_argument("--x0", type=_floats, default=S)
    p.add_argument("--no-sgd-baseline", dest="sgd_baseline", action="store_const", const=False, default=S)
    p.add_argument("--workers", type=int, default=S)

    p = sub.add_parser("minibatch-study", help="final training loss against mini-batch size")
    common(p)
    p.add_argument("--task", default=S, choices=["blobs", "finite_sum"])
    p.add_argument("--dataset", default=S, help="blobs spec")
    p.add_argument("--batch-sizes", dest="batch_sizes", type=_ints, default=S)
    p.add_argument("--seeds", type=int, default=S)
    p.add_argument("--seed", type=int, default=S)
    p.add_argument("--steps", type=int, default=S)
    p.add_argument("--eval-stride", dest="eval_stride", type=int, default=S)
    p.add_argument("--eta", type=float, default=S)
    p.add_argument("--layer-dims", dest="layer_dims", type=_ints, default=S, help="blobs network")
    p.add_argument("--q", "--q-bits", dest="q_bits", type=int, default=S, help="blobs network")
    p.add_argument("--midrise", action="store_const", const=True, default=S)
    p.add_argument("--alpha-scale", dest="alpha_scale", type=float, default=S, help="blobs network")
    p.add_argument("--problem", type=_json_arg, default=S, help="finite_sum problem as JSON")
    p.add_argument("--alpha", type=float, default=S, help="finite_sum lattice resolution")
    p.add_argument("--workers", type=int, default=S)

    p = sub.add_parser("train", help="train a quantized network with SMGD")
    common(p)
    p.add_argument("--dataset", default=S, help="'mnist' or a blobs spec")
    p.add_argument("--test-dataset", dest="test_dataset", default=S)
    p.add_argument("--data-dir", dest="data_dir", default=S, help="MNIST directory (default $SMGD_MNIST_DIR)")
    p.add_argument("--layer-dims", dest="layer_dims", type=_ints, default=S)
    p.add_argument("--q", "--q-bits", dest="q_bits", type=int, default=S)
    p.add_argument("--midrise", action="store_const", const=True, default=S)
    p.add_argument("--alpha", type=float, default=S)
    p.add_argument("--alpha-scale", dest="alpha_scale", type=float, default=S)
    p.add_argument("--eta", type=float, default=S)
    p.add_argument("--epochs", type=int, default=S)
    p.add_argument("--batch-size", dest="batch_size", type=int, default=S)
    p.add_argument("--eval-stride", dest="eval_stride", type=int, default=S)
    p.add_argument("--max-steps", dest="max_steps", type=int, default=S)
    p.add_argument("--seeds", type=_ints, default=S)
    p.add_argument("--sgd-gamma", dest="sgd_gamma", type=float, default=S)

    p = sub.add_parser("memory", help="training memory model")
    common(p)
    p.add_argument("--q", type=int, default=S)
    p.add_argument("--mode", default=S, help="online, minibatch, full_precision_sgd or all")
    p.add_argument("--dims", type=_ints, default=S)
    p.add_argument("--weights", type=int, default=S)
    return ap


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = vars(build_parser().parse_args(argv))
    command = args.pop("command")
    cls, fn = _COMMANDS[command]
    try:
        file_values = _load_json(args.pop("config", None))
        cfg = resolve_config(cls, file_values, args, command)
        return fn(cfg)
    except (ValueError, FileNotFoundError) as exc:
        print(f"smgd {command}: error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
