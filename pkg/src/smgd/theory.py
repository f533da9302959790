"""Oracles and checkers for the SMGD per-step bounds.

Each checker compares a conditional expectation of the next iterate
(``E[f(x')]`` or ``E||x' - x*||^2`` given ``x`` and the clip event) with the
analytic upper bound, and reports the signed slack ``bound - value``.

Three oracles compute the conditional expectation:

* ``closed_form_per_coordinate`` -- exact, for coordinate-separable quadratics.
  Flips are independent across coordinates, so the expected change of a
  separable quadratic is a sum of per-coordinate terms.
* ``outcome_enumeration`` -- exact for any objective with ``n <= 20``: sums over
  all ``2^n`` flip patterns weighted by their probabilities.
* ``monte_carlo`` -- simulation of the estimator and the flips, optionally
  rejecting draws on which the clip event fails.

For stochastic estimators the first two average over the estimator's law by
enumerating every mini-batch subset.
"""

from __future__ import annotations

import itertools
import json
import math
import time
from dataclasses import asdict, dataclass, field
from enum import Enum
from fractions import Fraction
from typing import Iterable, Optional, Sequence

import numpy as np

from . import rng as rngmod
from .core import LatticeVector, NumericError, RunTrace, SmgdConfig, TraceRow
from .estimators import (
    CostProblem,
    EstimatorKind,
    EstimatorSpec,
    enumerate_expected_l1,
    estimator_realizations,
    gradients_from_indices,
    random_finite_sum_quadratic,
    random_separable_quadratic,
    sample_gradient,
    sample_indices,
    tightness_problem,
)

ENUMERATION_MAX_N = 20
MIN_SURVIVING_DRAWS = 1000
DIVERGENCE_COST = 1e12


class StatisticalError(RuntimeError):
    """Too few Monte Carlo draws survived conditioning to support a verdict."""


class TheoremId(str, Enum):
    COST_BOUND = "cost_bound_s4"
    MINIBATCH = "minibatch_s42"
    RATE = "rate_s5"
    MGD_DECREASE = "mgd_decrease_s6"
    MGD_STRONGCONV = "mgd_strongconv_s6"
    MGD_RATE = "mgd_rate_s6"
    TIGHTNESS = "tightness_example_s6"


@dataclass
class TheoremReport:
    theorem_id: str
    instances_checked: int = 0
    violations: int = 0
    # Most negative bound-minus-value observed (the worst case).
    max_slack: float = math.inf
    tolerance: float = 0.0
    tolerance_kind: str = "absolute"
    runtime_ms: float = 0.0
    details: list[dict] = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return self.violations == 0

    def add(self, record: dict) -> None:
        self.instances_checked += 1
        self.violations += bool(record["violated"])
        if record.get("slack") is not None:
            self.max_slack = min(self.max_slack, float(record["slack"]))
        self.details.append(record)

    def worst(self) -> Optional[dict]:
        rows = [d for d in self.details if d.get("slack") is not None]
        if not rows:
            return None
        return min(rows, key=lambda d: d["slack"])

    def summary(self) -> dict:
        return {
            "theorem_id": self.theorem_id,
            "instances": self.instances_checked,
            "violations": self.violations,
            "max_slack": None if math.isinf(self.max_slack) else self.max_slack,
            "tolerance": self.tolerance,
            "tolerance_kind": self.tolerance_kind,
            "runtime_ms": round(self.runtime_ms, 3),
        }

    def to_json(self, with_details: bool = False) -> str:
        out = self.summary()
        if with_details:
            out["details"] = self.details
        return json.dumps(out, indent=2, sort_keys=True, default=_json_default)

    @staticmethod
    def merge(reports: Sequence["TheoremReport"]) -> "TheoremReport":
        if not reports:
            raise ValueError("nothing to merge")
        ids = {r.theorem_id for r in reports}
        if len(ids) != 1:
            raise ValueError(f"cannot merge reports for different theorems {sorted(ids)}")
        out = TheoremReport(reports[0].theorem_id, tolerance=reports[0].tolerance,
                            tolerance_kind=reports[0].tolerance_kind)
        for r in reports:
            out.instances_checked += r.instances_checked
            out.violations += r.violations
            out.max_slack = min(out.max_slack, r.max_slack)
            out.runtime_ms += r.runtime_ms
            out.details.extend(r.details)
        return out


def _json_default(obj):
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, (np.floating, np.integer, np.bool_)):
        return obj.item()
    if isinstance(obj, Fraction):
        return str(obj)
    raise TypeError(f"not JSON serializable: {type(obj)}")


class OracleMode(str, Enum):
    CLOSED_FORM = "closed_form_per_coordinate"
    ENUMERATION = "outcome_enumeration"
    MONTE_CARLO = "monte_carlo"


@dataclass(frozen=True)
class ConditionalExpectationOracle:
    mode: OracleMode = OracleMode.CLOSED_FORM
    n_draws: Optional[int] = None
    seed: int = 0
    # Drop estimator realizations on which max|G| > eta.
    condition_on_clip: bool = True

    def __post_init__(self):
        object.__setattr__(self, "mode", OracleMode(self.mode))
        if self.mode is OracleMode.MONTE_CARLO and (self.n_draws is None or self.n_draws < 1):
            raise ValueError("monte_carlo oracle needs n_draws")


@dataclass(frozen=True)
class Estimate:
    """Expected change of a quantity over one step, with its standard error."""

    delta: float
    std_error: float = 0.0
    n_used: Optional[int] = None

    @property
    def exact(self) -> bool:
        return self.std_error == 0.0 and self.n_used is None


# --------------------------------------------------------------------------
# conditional expectation of f(x') - f(x) and ||x' - x*||^2 - ||x - x*||^2
# --------------------------------------------------------------------------


def _clip_mask(rows: np.ndarray, eta: float) -> np.ndarray:
    return np.max(np.abs(rows), axis=1) <= eta


def _conditioned_law(problem, spec, xv, eta, oracle):
    rows, probs = estimator_realizations(problem, spec, xv)
    keep = _clip_mask(rows, eta) if oracle.condition_on_clip else np.ones(len(rows), dtype=bool)
    if not keep.any():
        raise StatisticalError("the clip event has probability zero at this point")
    probs = probs[keep] / math.fsum(probs[keep].tolist())
    return keep, rows[keep], probs


def _quantity(problem: CostProblem, X: np.ndarray, quantity: str) -> np.ndarray:
    if quantity == "cost":
        return problem.values(X)
    if quantity == "dist_sq":
        if problem.minimizer is None:
            raise ValueError("dist_sq needs the problem minimizer")
        return np.sum((X - problem.minimizer) ** 2, axis=1)
    raise ValueError(f"unknown quantity {quantity!r}")


def _closed_form(problem, rows, probs, x: LatticeVector, eta, quantity) -> float:
    if problem.curvature is None:
        raise ValueError(f"closed form needs a coordinate-separable quadratic; {problem.name} has no curvature")
    alpha = x.alpha
    xv = x.values
    P = np.minimum(np.abs(rows) / eta, 1.0)
    S = np.sign(rows)
    if quantity == "cost":
        grad = np.asarray(problem.gradient(xv), dtype=float)
        per = P * (-alpha * S * grad + 0.5 * problem.curvature * alpha**2)
    else:
        e = xv - problem.minimizer
        per = P * (-2.0 * alpha * S * e + alpha**2)
    return math.fsum((probs[:, None] * per).ravel().tolist())


def flip_patterns(n: int) -> np.ndarray:
    """All ``2^n`` boolean flip patterns, one per row."""
    if n > ENUMERATION_MAX_N:
        raise ValueError(f"n={n} exceeds the enumeration limit {ENUMERATION_MAX_N}")
    codes = np.arange(2**n, dtype=np.int64)[:, None]
    return ((codes >> np.arange(n)) & 1).astype(bool)


def _enumerated(problem, rows, probs, x: LatticeVector, eta, quantity) -> float:
    pats = flip_patterns(x.n)
    base = _quantity(problem, x.values[None, :], quantity)[0]
    terms = []
    for g, w in zip(rows, probs):
        P = np.minimum(np.abs(g) / eta, 1.0)
        step = -np.sign(g).astype(np.int64)
        pw = np.prod(np.where(pats, P, 1.0 - P), axis=1)
        nxt = (x.coords + step * pats) * x.alpha
        q = _quantity(problem, nxt, quantity) - base
        terms.extend((w * pw * q).tolist())
    return math.fsum(terms)


def _mc_draws(problem, spec, x: LatticeVector, eta, oracle, stream_key):
    gen = rngmod.substream(oracle.seed, *stream_key)
    n_draws = oracle.n_draws
    idx = sample_indices(problem, spec, gen, n_draws)
    G = gradients_from_indices(problem, x.values, idx, n_draws)
    keep = _clip_mask(G, eta) if oracle.condition_on_clip else np.ones(n_draws, dtype=bool)
    U = gen.random(G.shape)
    flips = U < np.minimum(np.abs(G) / eta, 1.0)
    nxt = (x.coords - np.sign(G).astype(np.int64) * flips) * x.alpha
    return idx, G, keep, nxt


def _mc_estimate(problem, x: LatticeVector, keep, nxt, quantity) -> Estimate:
    used = int(keep.sum())
    if used < MIN_SURVIVING_DRAWS:
        raise StatisticalError(f"only {used} draws satisfy the clip event (need {MIN_SURVIVING_DRAWS})")
    base = _quantity(problem, x.values[None, :], quantity)[0]
    d = _quantity(problem, nxt[keep], quantity) - base
    return Estimate(float(d.mean()), float(d.std(ddof=1) / math.sqrt(used)), used)


def conditional_delta(
    problem: CostProblem,
    spec: EstimatorSpec,
    x: LatticeVector,
    eta: float,
    oracle: ConditionalExpectationOracle,
    quantity: str = "cost",
    stream_key: tuple[int, ...] = (0,),
) -> Estimate:
    """Expected one-step change of ``quantity`` given ``x`` and the clip event."""
    if oracle.mode is OracleMode.MONTE_CARLO:
        _, _, keep, nxt = _mc_draws(problem, spec, x, eta, oracle, stream_key)
        return _mc_estimate(problem, x, keep, nxt, quantity)
    _, rows, probs = _conditioned_law(problem, spec, x.values, eta, oracle)
    if oracle.mode is OracleMode.CLOSED_FORM:
        return Estimate(_closed_form(problem, rows, probs, x, eta, quantity))
    return Estimate(_enumerated(problem, rows, probs, x, eta, quantity))


def conditional_expectation(
    problem, spec, x, eta, oracle, quantity="cost", stream_key=(0,)
) -> tuple[float, float]:
    """``(E[q(x') | x, clip], std_error)`` for ``q`` = cost or squared distance to ``x*``."""
    est = conditional_delta(problem, spec, x, eta, oracle, quantity, stream_key)
    base = _quantity(problem, x.values[None, :], quantity)[0]
    return base + est.delta, est.std_error


def _conditional_l1(problem, spec, x_eval, x_cond, eta, oracle) -> float:
    """Exact ``E[||G(x_eval)||_1 | clip event at x_cond]``."""
    keep, _, probs = _conditioned_law(problem, spec, x_cond, eta, oracle)
    rows, _ = estimator_realizations(problem, spec, x_eval)
    return math.fsum((probs * np.sum(np.abs(rows[keep]), axis=1)).tolist())


def _violation(slack: float, est: Estimate, tol: float, n_sigma: float) -> bool:
    if est.exact:
        return slack < -tol
    return slack < -n_sigma * est.std_error


# --------------------------------------------------------------------------
# per-step cost bound and iterate-distance bound
# --------------------------------------------------------------------------


def cost_bound_rhs_delta(
    problem: CostProblem, spec: EstimatorSpec, x: LatticeVector, config: SmgdConfig,
    oracle: ConditionalExpectationOracle = ConditionalExpectationOracle(),
    lipschitz_scale: float = 1.0,
) -> float:
    """Bound minus ``f(x)``: ``L a^2/(2 eta) E[||G||_1 | clip] - (a/eta) ||grad f||^2``."""
    if problem.lipschitz_L is None:
        raise ValueError("cost bound needs lipschitz_L")
    L = problem.lipschitz_L * lipschitz_scale
    a, eta = config.alpha, config.eta
    xv = x.values
    grad = np.asarray(problem.gradient(xv), dtype=float)
    el1 = _conditional_l1(problem, spec, xv, xv, eta, oracle)
    return L * a**2 / (2 * eta) * el1 - (a / eta) * float(np.dot(grad, grad))


def check_cost_bound(
    problem: CostProblem,
    spec: EstimatorSpec,
    x: LatticeVector,
    config: SmgdConfig,
    oracle: ConditionalExpectationOracle = ConditionalExpectationOracle(),
    tol: float = 1e-12,
    n_sigma: float = 4.0,
    lipschitz_scale: float = 1.0,
    stream_key: tuple[int, ...] = (0,),
) -> TheoremReport:
    """Check ``E[f(x')|x, clip] <= f(x) + L a^2/(2 eta) E||G||_1 - (a/eta)||grad f||^2`` at ``x``."""
    start = time.perf_counter()
    if problem.lipschitz_L is None:
        raise ValueError("cost bound needs lipschitz_L")
    if x.alpha != config.alpha:
        raise ValueError("point lattice differs from config alpha")
    est = conditional_delta(problem, spec, x, config.eta, oracle, "cost", stream_key)
    rhs_d = cost_bound_rhs_delta(problem, spec, x, config, oracle, lipschitz_scale)
    f0 = float(problem.value(x.values))
    slack = rhs_d - est.delta
    report = TheoremReport(TheoremId.COST_BOUND.value, tolerance=tol if est.exact else n_sigma,
                           tolerance_kind="absolute" if est.exact else "std_errors")
    report.add({
        "point": x.values.tolist(),
        "estimator": spec.label,
        "f": f0,
        "lhs": f0 + est.delta,
        "rhs": f0 + rhs_d,
        "lhs_delta": est.delta,
        "rhs_delta": rhs_d,
        "slack": slack,
        "std_error": est.std_error,
        "violated": _violation(slack, est, tol, n_sigma),
    })
    report.runtime_ms = 1e3 * (time.perf_counter() - start)
    return report


def rate_bound_rhs(
    problem: CostProblem, spec: EstimatorSpec, x: LatticeVector, config: SmgdConfig,
    oracle: ConditionalExpectationOracle = ConditionalExpectationOracle(),
) -> tuple[float, float, float, float]:
    """Terms of the iterate-distance bound: ``(contraction, lipschitz, noise, total)``."""
    if problem.strong_mu is None or problem.lipschitz_L is None or problem.minimizer is None:
        raise ValueError("rate bound needs strong_mu, lipschitz_L and minimizer")
    a, eta, mu, L = config.alpha, config.eta, problem.strong_mu, problem.lipschitz_L
    e = x.values - problem.minimizer
    d2 = float(np.dot(e, e))
    contraction = (1 - 2 * a * mu / eta) * d2
    lip = L * a**2 * math.sqrt(x.n) / eta * math.sqrt(d2)
    noise = a**2 / eta * _conditional_l1(problem, spec, problem.minimizer, x.values, eta, oracle)
    return contraction, lip, noise, contraction + lip + noise


def check_rate_bound(
    problem: CostProblem,
    spec: EstimatorSpec,
    x: LatticeVector,
    config: SmgdConfig,
    oracle: ConditionalExpectationOracle = ConditionalExpectationOracle(),
    tol: float = 1e-12,
    n_sigma: float = 4.0,
    stream_key: tuple[int, ...] = (0,),
) -> TheoremReport:
    """Check the strongly convex iterate-distance bound at ``x``."""
    start = time.perf_counter()
    est = conditional_delta(problem, spec, x, config.eta, oracle, "dist_sq", stream_key)
    contraction, lip, noise, rhs = rate_bound_rhs(problem, spec, x, config, oracle)
    e = x.values - problem.minimizer
    d2 = float(np.dot(e, e))
    a, eta, mu = config.alpha, config.eta, problem.strong_mu
    # slack = rhs - (d2 + delta), assembled from increments to avoid cancellation
    slack = (-2 * a * mu / eta * d2 + lip + noise) - est.delta
    report = TheoremReport(TheoremId.RATE.value, tolerance=tol if est.exact else n_sigma,
                           tolerance_kind="absolute" if est.exact else "std_errors")
    report.add({
        "point": x.values.tolist(),
        "estimator": spec.label,
        "dist_sq": d2,
        "lhs": d2 + est.delta,
        "rhs": rhs,
        "noise_term": noise,
        "slack": slack,
        "std_error": est.std_error,
        "draws_used": est.n_used,
        "violated": _violation(slack, est, tol, n_sigma),
    })
    report.runtime_ms = 1e3 * (time.perf_counter() - start)
    return report


# --------------------------------------------------------------------------
# mini-batch expected-norm theorem
# --------------------------------------------------------------------------


def check_minibatch_theorem(
    problem: CostProblem, x, norms: Sequence[str] = ("l1", "l2"), rel_tol: float = 1e-12
) -> TheoremReport:
    """Monotonicity in ``k``, the complement bound, and the ``k = m`` endpoint, by enumeration."""
    start = time.perf_counter()
    x = np.asarray(x, dtype=float)
    m = problem.m
    report = TheoremReport(TheoremId.MINIBATCH.value, tolerance=rel_tol, tolerance_kind="relative")
    grad = np.asarray(problem.gradient(x), dtype=float)
    for norm in norms:
        gnorm = float(np.sum(np.abs(grad))) if norm == "l1" else float(np.linalg.norm(grad))
        vals = [enumerate_expected_l1(problem, x, k, norm) for k in range(1, m + 1)]
        for k in range(1, m + 1):
            v = vals[k - 1]
            scale = max(1.0, abs(v))
            if k > 1:
                prev = vals[k - 2]
                report.add({"check": "monotone", "norm": norm, "k": k, "value": v, "bound": prev,
                            "slack": prev - v, "violated": v > prev + rel_tol * scale})
            if k < m:
                bound = m / k * gnorm + (m - k) / k * vals[m - k - 1]
                report.add({"check": "complement_bound", "norm": norm, "k": k, "value": v,
                            "bound": bound, "slack": bound - v,
                            "violated": v > bound + rel_tol * max(1.0, abs(bound))})
        report.add({"check": "endpoint", "norm": norm, "k": m, "value": vals[-1], "bound": gnorm,
                    "slack": -abs(vals[-1] - gnorm),
                    "violated": abs(vals[-1] - gnorm) > rel_tol * max(1.0, gnorm)})
    report.runtime_ms = 1e3 * (time.perf_counter() - start)
    return report


# --------------------------------------------------------------------------
# exact-gradient (MGD) corollaries
# --------------------------------------------------------------------------


def _mgd_delta(problem, x, config, quantity, oracle, stream_key) -> Estimate:
    if problem.curvature is not None:
        mode = OracleMode.CLOSED_FORM
    elif x.n <= 12:
        mode = OracleMode.ENUMERATION
    else:
        mode = OracleMode.MONTE_CARLO
    o = ConditionalExpectationOracle(mode, oracle.n_draws or 10**5, oracle.seed, True)
    return conditional_delta(problem, EstimatorSpec.exact(), x, config.eta, o, quantity, stream_key)


def _decrease_violation(est: Estimate, n_sigma: float) -> bool:
    if est.exact:
        return not est.delta < 0
    return est.delta > n_sigma * est.std_error


def check_mgd_corollaries(
    problem: CostProblem,
    config: SmgdConfig,
    points: Iterable[LatticeVector],
    epsilons: Sequence[float] = (1e-1, 1e-2, 1e-3),
    oracle: ConditionalExpectationOracle = ConditionalExpectationOracle(OracleMode.MONTE_CARLO, 10**5),
    n_sigma: float = 4.0,
) -> dict[str, TheoremReport]:
    """Evaluate the three exact-gradient corollaries at each point.

    Only points whose hypothesis holds strictly are counted; a violation is a
    counted point where the promised strict decrease fails.  Points where the
    clip event fails (``max|grad f| > eta``) are skipped.
    """
    start = time.perf_counter()
    L, mu, xstar = problem.lipschitz_L, problem.strong_mu, problem.minimizer
    if L is None:
        raise ValueError(f"{TheoremId.MGD_DECREASE.value} skipped: lipschitz_L missing")
    reports = {
        TheoremId.MGD_DECREASE.value: TheoremReport(TheoremId.MGD_DECREASE.value),
        TheoremId.MGD_STRONGCONV.value: TheoremReport(TheoremId.MGD_STRONGCONV.value),
        TheoremId.MGD_RATE.value: TheoremReport(TheoremId.MGD_RATE.value),
    }
    strong = mu is not None and xstar is not None
    a = config.alpha
    for i, x in enumerate(points):
        xv = x.values
        n = x.n
        grad = np.asarray(problem.gradient(xv), dtype=float)
        if np.max(np.abs(grad)) > config.eta:
            continue
        gnorm = float(np.linalg.norm(grad))
        cost_est = None
        if gnorm > L * a * math.sqrt(n) / 2:
            cost_est = _mgd_delta(problem, x, config, "cost", oracle, (i, 0))
            reports[TheoremId.MGD_DECREASE.value].add({
                "point": xv.tolist(), "grad_l2": gnorm, "threshold": L * a * math.sqrt(n) / 2,
                "delta": cost_est.delta, "std_error": cost_est.std_error, "slack": -cost_est.delta,
                "violated": _decrease_violation(cost_est, n_sigma),
            })
        if not strong:
            continue
        gap = float(problem.value(xv)) - float(problem.value(xstar))
        for eps in epsilons:
            if a < math.sqrt(4 * eps * mu / (L**2 * n)) and gap > eps:
                if cost_est is None:
                    cost_est = _mgd_delta(problem, x, config, "cost", oracle, (i, 0))
                reports[TheoremId.MGD_STRONGCONV.value].add({
                    "point": xv.tolist(), "epsilon": eps, "gap": gap, "delta": cost_est.delta,
                    "std_error": cost_est.std_error, "slack": -cost_est.delta,
                    "violated": _decrease_violation(cost_est, n_sigma),
                })
        dist = float(np.linalg.norm(xv - xstar))
        if dist > L * a * math.sqrt(n) / (2 * mu):
            est = _mgd_delta(problem, x, config, "dist_sq", oracle, (i, 1))
            reports[TheoremId.MGD_RATE.value].add({
                "point": xv.tolist(), "dist": dist, "threshold": L * a * math.sqrt(n) / (2 * mu),
                "delta": est.delta, "std_error": est.std_error, "slack": -est.delta,
                "violated": _decrease_violation(est, n_sigma),
            })
    elapsed = 1e3 * (time.perf_counter() - start)
    for r in reports.values():
        r.runtime_ms = elapsed
    return reports


# --------------------------------------------------------------------------
# boundary example
# --------------------------------------------------------------------------


@dataclass
class TightnessReport:
    n: int
    alpha: float
    eta: float
    expected_f: Fraction
    expected_dist_sq: Fraction
    f0: Fraction
    dist0_sq: Fraction
    analytic: Fraction
    expected_f_float: float
    expected_dist_sq_float: float

    @property
    def exact_equal(self) -> bool:
        return self.expected_f == self.f0 == self.analytic and self.expected_dist_sq == self.dist0_sq == self.analytic

    def as_record(self) -> dict:
        rec = asdict(self)
        for k, v in rec.items():
            if isinstance(v, Fraction):
                rec[k] = str(v)
        rec["exact_equal"] = self.exact_equal
        return rec


def reproduce_tightness_example(n: int, alpha: float, eta: float) -> TightnessReport:
    """Exact one-step expectations for ``sum_i (x_i - alpha/2)^2`` started at the origin.

    All ``2^n`` flip outcomes are enumerated in rational arithmetic (the float
    inputs are converted exactly), alongside a float enumeration through the
    generic outcome oracle.
    """
    if not 1 <= n <= 16:
        raise ValueError(f"n must be in 1..16 for enumeration, got {n}")
    if not alpha > 0 or eta < alpha:
        raise ValueError(f"need alpha > 0 and eta >= alpha, got alpha={alpha}, eta={eta}")
    problem = tightness_problem(n, alpha)
    x0 = LatticeVector(np.zeros(n, dtype=np.int64), alpha)
    grad = np.asarray(problem.gradient(x0.values), dtype=float)

    A, E = Fraction(alpha), Fraction(eta)
    shift = A / 2
    xstar = [Fraction(c) for c in problem.minimizer]
    probs = [min(abs(Fraction(g)) / E, Fraction(1)) for g in grad]
    steps = [-int(np.sign(g)) for g in grad]

    def cost(point):
        return sum((c - shift) ** 2 for c in point)

    def dist_sq(point):
        return sum((c - s) ** 2 for c, s in zip(point, xstar))

    ef = Fraction(0)
    ed = Fraction(0)
    for pattern in itertools.product((0, 1), repeat=n):
        w = Fraction(1)
        for p, bit in zip(probs, pattern):
            w *= p if bit else 1 - p
        point = [s * bit * A for s, bit in zip(steps, pattern)]
        ef += w * cost(point)
        ed += w * dist_sq(point)
    origin = [Fraction(0)] * n
    oracle = ConditionalExpectationOracle(OracleMode.ENUMERATION)
    ef_float, _ = conditional_expectation(problem, EstimatorSpec.exact(), x0, float(eta), oracle, "cost")
    ed_float, _ = conditional_expectation(problem, EstimatorSpec.exact(), x0, float(eta), oracle, "dist_sq")
    return TightnessReport(
        n=n, alpha=alpha, eta=eta,
        expected_f=ef, expected_dist_sq=ed, f0=cost(origin), dist0_sq=dist_sq(origin),
        analytic=n * A**2 / 4,
        expected_f_float=ef_float, expected_dist_sq_float=ed_float,
    )


# --------------------------------------------------------------------------
# SGD baseline
# --------------------------------------------------------------------------


def sgd_comparison_run(
    problem: CostProblem,
    gamma: float,
    config: SmgdConfig,
    x0,
    estimator: EstimatorSpec = EstimatorSpec.exact(),
    replicate: int = 0,
) -> RunTrace:
    """Unconstrained SGD ``x <- x - gamma G(x)`` with the same trace schema as :func:`core.run`.

    Uses the same estimator substreams as SMGD so both see identical mini-batches.
    A run whose cost exceeds ``1e12`` is marked diverged and truncated.
    """
    if gamma < 0:
        raise ValueError("gamma must be non-negative")
    x = np.asarray(x0, dtype=float).copy()
    trace = RunTrace()

    def row(step, support):
        grad = np.asarray(problem.gradient(x), dtype=float)
        return TraceRow(
            step=step, f=float(problem.value(x)), grad_l1=float(np.sum(np.abs(grad))),
            grad_l2=float(np.linalg.norm(grad)),
            dist_sq=None if problem.minimizer is None else float(np.sum((x - problem.minimizer) ** 2)),
            support=support, clip_rate=None,
        )

    trace.rows.append(row(0, 0))
    for t in range(1, config.iterations + 1):
        g = sample_gradient(problem, estimator, x, config.eta, rngmod.substream(config.seed, replicate, t, rngmod.ESTIMATOR))
        upd = gamma * g.values
        x = x - upd
        f = float(problem.value(x))
        if not np.isfinite(f) or abs(f) > DIVERGENCE_COST:
            trace.diverged = True
            trace.rows.append(row(t, int(np.count_nonzero(upd))) if np.isfinite(f) else TraceRow(t, f, math.nan, math.nan, None, 0, None))
            break
        if t % config.trace_stride == 0 or t == config.iterations:
            trace.rows.append(row(t, int(np.count_nonzero(upd))))
    trace.final_values = x
    return trace


def expected_sq_l2(problem: CostProblem, spec: EstimatorSpec, x) -> float:
    rows, probs = estimator_realizations(problem, spec, x)
    return math.fsum((probs * np.sum(rows**2, axis=1)).tolist())


def sgd_bound_recursion(problem: CostProblem, spec: EstimatorSpec, gamma: float, dist0_sq: float, steps: int) -> np.ndarray:
    """Iterate ``b <- (1 - 2 g mu + 2 g^2 L) b + 2 g^2 E||G(x*)||^2`` from ``dist0_sq``."""
    mu, L = problem.strong_mu, problem.lipschitz_L
    noise = expected_sq_l2(problem, spec, problem.minimizer)
    out = np.empty(steps + 1)
    out[0] = dist0_sq
    for t in range(steps):
        out[t + 1] = (1 - 2 * gamma * mu + 2 * gamma**2 * L) * out[t] + 2 * gamma**2 * noise
    return out


# --------------------------------------------------------------------------
# randomized suites (used by the CLI and the acceptance tests)
# --------------------------------------------------------------------------


def _random_lattice_point(gen, center, alpha, radius_steps) -> LatticeVector:
    base = np.rint(np.asarray(center) / alpha).astype(np.int64)
    return LatticeVector(base + gen.integers(-radius_steps, radius_steps + 1, size=base.size), alpha)


def _eta_for(rows: np.ndarray, gen, low=1.0, high=3.0) -> float:
    top = float(np.max(np.abs(rows)))
    return (top if top > 0 else 1.0) * float(gen.uniform(low, high))


def suite_cost_bound(
    n_problems: int = 20,
    n_points: int = 50,
    seed: int = 0,
    lipschitz_scale: float = 1.0,
    isotropic: bool = True,
    tol: float = 1e-12,
) -> TheoremReport:
    """Exact-gradient cost bound on random separable quadratics, closed-form oracle.

    With ``isotropic=True`` every curvature equals ``L`` and the bound is an
    equality; each record carries ``gap = |lhs - rhs|`` for that check.
    """
    start = time.perf_counter()
    reports = []
    for p in range(n_problems):
        gen = rngmod.substream(seed, p, rngmod.PROBLEM)
        n = int(gen.integers(1, 9))
        problem = random_separable_quadratic(n, gen, isotropic=isotropic)
        alpha = float(gen.choice([0.05, 0.1, 0.2]))
        for j in range(n_points):
            pg = rngmod.substream(seed, p, j, rngmod.POINTS)
            x = _random_lattice_point(pg, problem.minimizer, alpha, 20)
            g = np.asarray(problem.gradient(x.values))[None, :]
            cfg = SmgdConfig(alpha=alpha, eta=_eta_for(g, pg), iterations=1)
            r = check_cost_bound(problem, EstimatorSpec.exact(), x, cfg, tol=tol, lipschitz_scale=lipschitz_scale)
            d = r.details[0]
            d.update(problem=p, n=n, alpha=alpha, eta=cfg.eta, gap=abs(d["rhs_delta"] - d["lhs_delta"]))
            reports.append(r)
    out = TheoremReport.merge(reports)
    out.runtime_ms = 1e3 * (time.perf_counter() - start)
    return out


def suite_minibatch(m_values: Sequence[int] = (4, 6, 8), trials: int = 20, seed: int = 0) -> TheoremReport:
    """Mini-batch theorem on random finite-sum quadratics at random points."""
    start = time.perf_counter()
    reports = []
    for t in range(trials):
        gen = rngmod.substream(seed, t, rngmod.PROBLEM)
        m = int(m_values[t % len(m_values)])
        n = int(gen.integers(1, 6))
        problem = random_finite_sum_quadratic(n, m, gen, spread=float(gen.uniform(0.1, 2.0)))
        x = problem.minimizer + gen.normal(0, 1.0, n)
        r = check_minibatch_theorem(problem, x)
        for d in r.details:
            d.update(trial=t, m=m, n=n)
        reports.append(r)
    out = TheoremReport.merge(reports)
    out.runtime_ms = 1e3 * (time.perf_counter() - start)
    return out


def _rate_instance(p: int, seed: int):
    """Problem ``p`` of the rate suite: alternates exact, uniform and mini-batch estimators."""
    gen = rngmod.substream(seed, p, rngmod.PROBLEM)
    n = int(gen.integers(1, 7))
    kind = p % 3
    if kind == 0:
        problem = random_separable_quadratic(n, gen)
        spec = EstimatorSpec.exact()
    else:
        m = int(gen.choice([4, 6, 8]))
        problem = random_finite_sum_quadratic(n, m, gen, spread=float(gen.uniform(0.05, 0.3)))
        spec = EstimatorSpec.uniform() if kind == 1 else EstimatorSpec.minibatch(int(gen.integers(2, m)))
    alpha = float(gen.choice([0.02, 0.05, 0.1]))
    return problem, spec, alpha


def suite_rate_bound(
    n_problems: int = 10,
    n_points: int = 50,
    n_draws: int = 10**5,
    seed: int = 0,
    n_sigma: float = 4.0,
) -> TheoremReport:
    """Iterate-distance bound with clip-conditioned Monte Carlo LHS.

    ``eta`` is set above the largest realizable ``|G_i|`` at each point so the
    clip event is sure; draws are still filtered on it.  Each record also
    carries the exact LHS from subset enumeration for cross-checking.
    """
    start = time.perf_counter()
    reports = []
    for p in range(n_problems):
        problem, spec, alpha = _rate_instance(p, seed)
        for j in range(n_points):
            pg = rngmod.substream(seed, p, j, rngmod.POINTS)
            x = _random_lattice_point(pg, problem.minimizer, alpha, 15)
            rows, _ = estimator_realizations(problem, spec, x.values)
            cfg = SmgdConfig(alpha=alpha, eta=_eta_for(rows, pg, 1.0, 2.0), iterations=1)
            mc = ConditionalExpectationOracle(OracleMode.MONTE_CARLO, n_draws, seed)
            r = check_rate_bound(problem, spec, x, cfg, mc, n_sigma=n_sigma, stream_key=(p, j))
            exact, _ = conditional_expectation(problem, spec, x, cfg.eta, ConditionalExpectationOracle(), "dist_sq")
            r.details[0].update(problem=p, n=problem.dimension, alpha=alpha, eta=cfg.eta, lhs_exact=exact)
            reports.append(r)
    out = TheoremReport.merge(reports)
    out.tolerance, out.tolerance_kind = n_sigma, "std_errors"
    out.runtime_ms = 1e3 * (time.perf_counter() - start)
    return out


def suite_tightness(
    ns: Iterable[int] = range(1, 9),
    alphas: Sequence[float] = (0.25, 0.5),
    eta_multipliers: Sequence[float] = (1.0, 2.0, 10.0),
) -> TheoremReport:
    start = time.perf_counter()
    report = TheoremReport(TheoremId.TIGHTNESS.value, tolerance=0.0, tolerance_kind="exact")
    # one record per dimension, holding every (alpha, eta) case
    for n in ns:
        cases = [reproduce_tightness_example(n, a, mult * a) for a in alphas for mult in eta_multipliers]
        ok = all(t.exact_equal for t in cases)
        report.add({"n": n, "exact_equal": ok, "cases": [t.as_record() for t in cases],
                    "slack": 0.0 if ok else -1.0, "violated": not ok})
    report.runtime_ms = 1e3 * (time.perf_counter() - start)
    return report


def suite_corollaries(
    n_instances: int = 1000,
    seed: int = 0,
    epsilons: Sequence[float] = (1e-1, 1e-2, 1e-3),
    max_attempts: int = 200_000,
) -> dict[str, TheoremReport]:
    """Random (problem, point) pairs until every corollary has ``n_instances`` hypothesis hits.

    The lattice resolution is half the admissible threshold for a randomly
    drawn tolerance level, and points lie at distances spread around the
    corollary thresholds so that near-boundary cases are exercised.
    """
    start = time.perf_counter()
    merged: dict[str, list[TheoremReport]] = {}
    counts = {tid.value: 0 for tid in (TheoremId.MGD_DECREASE, TheoremId.MGD_STRONGCONV, TheoremId.MGD_RATE)}
    for attempt in range(max_attempts):
        if min(counts.values()) >= n_instances:
            break
        gen = rngmod.substream(seed, attempt, rngmod.PROBLEM)
        n = int(gen.integers(1, 9))
        problem = random_separable_quadratic(n, gen)
        L, mu = problem.lipschitz_L, problem.strong_mu
        eps = float(gen.choice(epsilons))
        alpha = 0.5 * math.sqrt(4 * eps * mu / (L**2 * n))
        radius = L * alpha * math.sqrt(n) / (2 * mu) * float(gen.uniform(0.3, 3.0))
        direction = gen.normal(size=n)
        direction /= np.linalg.norm(direction)
        x = LatticeVector.from_real(problem.minimizer + radius * direction, alpha)
        grad = np.asarray(problem.gradient(x.values))
        eta = max(float(np.max(np.abs(grad))), 1e-12) * float(gen.uniform(1.0, 3.0))
        cfg = SmgdConfig(alpha=alpha, eta=eta, iterations=1)
        reps = check_mgd_corollaries(problem, cfg, [x], epsilons=[eps])
        for tid, r in reps.items():
            if counts[tid] >= n_instances:
                continue
            for d in r.details:
                d.update(attempt=attempt, n=n, alpha=alpha, eta=eta)
            counts[tid] += r.instances_checked
            merged.setdefault(tid, []).append(r)
    out = {tid: TheoremReport.merge(rs) for tid, rs in merged.items()}
    elapsed = 1e3 * (time.perf_counter() - start)
    for r in out.values():
        r.runtime_ms = elapsed
    return out
