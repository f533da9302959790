"""Cost problems and unbiased gradient estimators.

A :class:`CostProblem` bundles an objective with its gradient and, for
finite-sum objectives ``f = (1/m) sum_i f^i``, the per-component pairs.
Estimators are described by :class:`EstimatorSpec` and realized by
:func:`sample_gradient`.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from enum import Enum
from typing import Callable, Optional, Sequence

import numpy as np

from .core import GradientSample, NumericError
from .rng import PROBLEM, substream

Vector = np.ndarray
ValueFn = Callable[[Vector], float]
GradFn = Callable[[Vector], Vector]

ENUMERATION_LIMIT = 10**6


@dataclass
class CostProblem:
    dimension: int
    value: ValueFn
    gradient: GradFn
    components: Optional[list[tuple[ValueFn, GradFn]]] = None
    lipschitz_L: Optional[float] = None
    strong_mu: Optional[float] = None
    minimizer: Optional[Vector] = None
    # Per-coordinate curvature when f is a coordinate-separable quadratic.
    curvature: Optional[Vector] = None
    # Fast path: all component gradients at x as an (m, n) array.
    component_gradient_matrix: Optional[Callable[[Vector], np.ndarray]] = None
    # Fast path: f at every row of a (N, n) array.
    value_batch: Optional[Callable[[np.ndarray], np.ndarray]] = None
    name: str = "problem"
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.dimension < 1:
            raise ValueError("dimension must be >= 1")
        if self.lipschitz_L is not None and not self.lipschitz_L > 0:
            raise ValueError("lipschitz_L must be positive")
        if self.strong_mu is not None and not self.strong_mu > 0:
            raise ValueError("strong_mu must be positive")
        if self.lipschitz_L is not None and self.strong_mu is not None and self.strong_mu > self.lipschitz_L:
            raise ValueError(f"strong_mu={self.strong_mu} exceeds lipschitz_L={self.lipschitz_L}")
        if self.minimizer is not None:
            self.minimizer = np.asarray(self.minimizer, dtype=float)
            gmin = np.asarray(self.gradient(self.minimizer), dtype=float)
            if np.max(np.abs(gmin)) > 1e-10:
                raise ValueError(f"gradient at the stated minimizer is {gmin}, not zero")
        if self.components is not None:
            self._spot_check_components()

    def _spot_check_components(self):
        gen = substream(0, 0xC0FFEE)
        scale = 1.0 if self.minimizer is None else 1.0 + float(np.max(np.abs(self.minimizer)))
        for _ in range(3):
            x = gen.uniform(-scale, scale, self.dimension)
            v = float(self.value(x))
            mean = math.fsum(float(fv(x)) for fv, _ in self.components) / len(self.components)
            if abs(v - mean) > 1e-12 * max(1.0, abs(v)):
                raise ValueError(f"f(x)={v} differs from the mean of component values {mean}")

    @property
    def m(self) -> Optional[int]:
        return None if self.components is None else len(self.components)

    def values(self, X: np.ndarray) -> np.ndarray:
        """``f`` evaluated at each row of ``X``."""
        X = np.asarray(X, dtype=float)
        if self.value_batch is not None:
            return np.asarray(self.value_batch(X), dtype=float)
        return np.array([float(self.value(row)) for row in X])

    def component_gradients(self, x: Vector) -> np.ndarray:
        """All component gradients at ``x`` stacked as rows."""
        if self.components is None:
            raise ValueError(f"{self.name} has no finite-sum components")
        if self.component_gradient_matrix is not None:
            mat = np.asarray(self.component_gradient_matrix(x), dtype=float)
        else:
            mat = np.array([np.asarray(g(x), dtype=float) for _, g in self.components])
        bad = ~np.all(np.isfinite(mat), axis=1)
        if bad.any():
            raise NumericError(f"non-finite gradient from component {int(np.flatnonzero(bad)[0])}")
        return mat


class EstimatorKind(str, Enum):
    EXACT = "exact"
    UNIFORM_SINGLE = "uniform_single"
    MINIBATCH = "minibatch"


@dataclass(frozen=True)
class EstimatorSpec:
    kind: EstimatorKind = EstimatorKind.EXACT
    batch_size: Optional[int] = None

    def __post_init__(self):
        object.__setattr__(self, "kind", EstimatorKind(self.kind))
        if self.kind is EstimatorKind.MINIBATCH:
            if self.batch_size is None or self.batch_size < 1:
                raise ValueError("minibatch estimator needs batch_size >= 1")

    @classmethod
    def exact(cls) -> "EstimatorSpec":
        return cls(EstimatorKind.EXACT)

    @classmethod
    def uniform(cls) -> "EstimatorSpec":
        return cls(EstimatorKind.UNIFORM_SINGLE)

    @classmethod
    def minibatch(cls, k: int) -> "EstimatorSpec":
        return cls(EstimatorKind.MINIBATCH, k)

    @property
    def label(self) -> str:
        if self.kind is EstimatorKind.MINIBATCH:
            return f"minibatch{self.batch_size}"
        return self.kind.value

    def validate(self, problem: CostProblem) -> None:
        if self.kind is EstimatorKind.EXACT:
            return
        if problem.components is None:
            raise ValueError(f"{self.kind.value} estimator needs a finite-sum problem")
        if self.kind is EstimatorKind.MINIBATCH and self.batch_size > problem.m:
            raise ValueError(f"batch size k={self.batch_size} exceeds m={problem.m} components")


def partial_shuffle(m: int, k: int, rng: np.random.Generator) -> np.ndarray:
    """First ``k`` entries of a Fisher-Yates shuffle of ``range(m)``, sorted."""
    idx = np.arange(m)
    for j in range(k):
        r = int(rng.integers(j, m))
        idx[j], idx[r] = idx[r], idx[j]
    return np.sort(idx[:k])


def sample_gradient(
    problem: CostProblem, spec: EstimatorSpec, x, eta: float, rng: np.random.Generator
) -> GradientSample:
    """Draw one realization of the estimator at ``x``."""
    x = np.asarray(x, dtype=float)
    if x.shape != (problem.dimension,):
        raise ValueError(f"point has shape {x.shape}, problem dimension is {problem.dimension}")
    spec.validate(problem)
    if spec.kind is EstimatorKind.EXACT:
        values = np.asarray(problem.gradient(x), dtype=float)
        if not np.all(np.isfinite(values)):
            raise NumericError("non-finite gradient")
    elif spec.kind is EstimatorKind.UNIFORM_SINGLE:
        i = int(rng.integers(problem.m))
        values = np.asarray(problem.components[i][1](x), dtype=float)
        if not np.all(np.isfinite(values)):
            raise NumericError(f"non-finite gradient from component {i}")
    else:
        sel = partial_shuffle(problem.m, spec.batch_size, rng)
        values = problem.component_gradients(x)[sel].mean(axis=0)
    return GradientSample.evaluate(values, eta)


def sample_indices(
    problem: CostProblem, spec: EstimatorSpec, rng: np.random.Generator, size: int
) -> Optional[np.ndarray]:
    """Component indices for ``size`` independent draws, shape ``(size, k)``.

    Returns ``None`` for the exact estimator, which uses no components.
    Mini-batches are drawn by a partial Fisher-Yates shuffle vectorized across rows.
    """
    spec.validate(problem)
    if spec.kind is EstimatorKind.EXACT:
        return None
    m = problem.m
    if spec.kind is EstimatorKind.UNIFORM_SINGLE:
        return rng.integers(m, size=(size, 1))
    k = spec.batch_size
    idx = np.tile(np.arange(m), (size, 1))
    rows = np.arange(size)
    for j in range(k):
        r = rng.integers(j, m, size=size)
        tmp = idx[rows, j].copy()
        idx[rows, j] = idx[rows, r]
        idx[rows, r] = tmp
    return np.sort(idx[:, :k], axis=1)


def gradients_from_indices(problem: CostProblem, x, indices: Optional[np.ndarray], size: int) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    if indices is None:
        return np.tile(np.asarray(problem.gradient(x), dtype=float), (size, 1))
    return problem.component_gradients(x)[indices].mean(axis=1)


def sample_gradients(
    problem: CostProblem, spec: EstimatorSpec, x, rng: np.random.Generator, size: int
) -> np.ndarray:
    """``size`` independent realizations at a fixed ``x`` as a ``(size, n)`` array.

    Same law as :func:`sample_gradient`, vectorized across draws.
    """
    return gradients_from_indices(problem, x, sample_indices(problem, spec, rng, size), size)


@dataclass
class UnbiasednessReport:
    mean: np.ndarray
    gradient: np.ndarray
    std_error: np.ndarray
    z_scores: np.ndarray
    n_draws: int

    @property
    def flagged(self) -> bool:
        return bool(np.any(np.abs(self.z_scores) > 4.0))


def unbiasedness_check(
    problem: CostProblem, spec: EstimatorSpec, x, n_draws: int, seed: int
) -> UnbiasednessReport:
    """Standardized Monte Carlo bias of the estimator at ``x``."""
    if n_draws < 1000:
        raise ValueError("n_draws must be at least 1000")
    x = np.asarray(x, dtype=float)
    gen = substream(seed, 0xB1A5)
    draws = np.array([sample_gradient(problem, spec, x, np.inf, gen).values for _ in range(n_draws)])
    grad = np.asarray(problem.gradient(x), dtype=float)
    mean = np.array([math.fsum(col) for col in draws.T.tolist()]) / n_draws
    se = draws.std(axis=0, ddof=1) / math.sqrt(n_draws)
    diff = mean - grad
    # the correctly rounded mean of identical draws can still sit an ulp away
    rounding = 4 * np.finfo(float).eps * np.maximum(np.abs(mean), np.abs(grad))
    diff = np.where(np.abs(diff) <= rounding, 0.0, diff)
    with np.errstate(divide="ignore", invalid="ignore"):
        z = np.where(diff == 0, 0.0, diff / se)
    return UnbiasednessReport(mean=mean, gradient=grad, std_error=se, z_scores=z, n_draws=n_draws)


def subset_gradients(problem: CostProblem, x, k: int) -> np.ndarray:
    """Mini-batch gradient for every size-``k`` subset, one row per subset."""
    m = problem.m
    if m is None:
        raise ValueError(f"{problem.name} has no finite-sum components")
    if not 1 <= k <= m:
        raise ValueError(f"k={k} outside 1..{m}")
    count = math.comb(m, k)
    if count > ENUMERATION_LIMIT:
        raise ValueError(
            f"C({m},{k}) = {count} subsets exceeds the enumeration limit {ENUMERATION_LIMIT}; "
            "use a Monte Carlo estimate instead"
        )
    mat = problem.component_gradients(np.asarray(x, dtype=float))
    combos = np.array(list(itertools.combinations(range(m), k)), dtype=np.intp)
    return mat[combos].mean(axis=1)


def _norms(rows: np.ndarray, norm: str) -> np.ndarray:
    if norm == "l1":
        return np.sum(np.abs(rows), axis=1)
    if norm == "l2":
        return np.sqrt(np.sum(rows**2, axis=1))
    raise ValueError(f"norm must be 'l1' or 'l2', got {norm!r}")


def enumerate_expected_l1(problem: CostProblem, x, k: int, norm: str = "l1") -> float:
    """Exact ``E||G_k(x)||`` by enumerating every size-``k`` subset."""
    rows = subset_gradients(problem, x, k)
    return math.fsum(_norms(rows, norm).tolist()) / rows.shape[0]


def expected_norm(problem: CostProblem, spec: EstimatorSpec, x, norm: str = "l1") -> float:
    """Exact ``E||G(x)||`` for any estimator kind."""
    x = np.asarray(x, dtype=float)
    if spec.kind is EstimatorKind.EXACT:
        return float(_norms(np.asarray(problem.gradient(x), dtype=float)[None, :], norm)[0])
    k = 1 if spec.kind is EstimatorKind.UNIFORM_SINGLE else spec.batch_size
    return enumerate_expected_l1(problem, x, k, norm)


def estimator_realizations(problem: CostProblem, spec: EstimatorSpec, x) -> tuple[np.ndarray, np.ndarray]:
    """Support of the estimator's law at ``x``: ``(rows, probabilities)``."""
    x = np.asarray(x, dtype=float)
    if spec.kind is EstimatorKind.EXACT:
        return np.asarray(problem.gradient(x), dtype=float)[None, :], np.ones(1)
    k = 1 if spec.kind is EstimatorKind.UNIFORM_SINGLE else spec.batch_size
    rows = subset_gradients(problem, x, k)
    return rows, np.full(rows.shape[0], 1.0 / rows.shape[0])


# --------------------------------------------------------------------------
# Problem families
# --------------------------------------------------------------------------


def separable_quadratic(curvature, center, name: str = "separable_quadratic") -> CostProblem:
    """``f(x) = 1/2 sum_j d_j (x_j - c_j)^2`` with exact ``L = max d``, ``mu = min d``."""
    d = np.asarray(curvature, dtype=float)
    c = np.asarray(center, dtype=float)
    if d.shape != c.shape or d.ndim != 1:
        raise ValueError("curvature and center must be 1-d vectors of equal length")
    if np.any(d <= 0):
        raise ValueError("curvatures must be positive")
    return CostProblem(
        dimension=d.size,
        value=lambda x: 0.5 * float(np.sum(d * (np.asarray(x) - c) ** 2)),
        gradient=lambda x: d * (np.asarray(x, dtype=float) - c),
        value_batch=lambda X: 0.5 * np.sum(d * (X - c) ** 2, axis=1),
        lipschitz_L=float(d.max()),
        strong_mu=float(d.min()),
        minimizer=c.copy(),
        curvature=d.copy(),
        name=name,
        params={"curvature": d.tolist(), "center": c.tolist()},
    )


def half_norm_squared(n: int) -> CostProblem:
    """``f(x) = 1/2 ||x||^2``."""
    return separable_quadratic(np.ones(n), np.zeros(n), name="half_norm_squared")


def tightness_problem(n: int, alpha: float) -> CostProblem:
    """``f(x) = sum_i (x_i - alpha/2)^2``: curvature 2, minimizer at the cell center."""
    p = separable_quadratic(np.full(n, 2.0), np.full(n, alpha / 2.0), name="tightness")
    p.params = {"n": n, "alpha": alpha}
    return p


def finite_sum_quadratic(curvatures, centers, name: str = "finite_sum_quadratic") -> CostProblem:
    """Mean of ``f^i(x) = 1/2 sum_j D_ij (x_j - C_ij)^2``.

    ``lipschitz_L`` is the largest component curvature, which bounds both the
    gradient of ``f`` and every mini-batch estimator's Lipschitz constant.
    """
    D = np.asarray(curvatures, dtype=float)
    C = np.asarray(centers, dtype=float)
    if D.shape != C.shape or D.ndim != 2:
        raise ValueError("curvatures and centers must be (m, n) arrays of equal shape")
    if np.any(D <= 0):
        raise ValueError("component curvatures must be positive")
    m, n = D.shape
    dbar = D.mean(axis=0)
    xstar = (D * C).sum(axis=0) / D.sum(axis=0)

    def grad_matrix(x):
        return D * (np.asarray(x, dtype=float) - C)

    def value(x):
        return float(np.mean(0.5 * np.sum(D * (np.asarray(x) - C) ** 2, axis=1)))

    components = [
        (
            (lambda x, i=i: 0.5 * float(np.sum(D[i] * (np.asarray(x) - C[i]) ** 2))),
            (lambda x, i=i: D[i] * (np.asarray(x, dtype=float) - C[i])),
        )
        for i in range(m)
    ]
    return CostProblem(
        dimension=n,
        value=value,
        gradient=lambda x: grad_matrix(x).mean(axis=0),
        components=components,
        lipschitz_L=float(D.max()),
        strong_mu=float(dbar.min()),
        minimizer=xstar,
        curvature=dbar,
        component_gradient_matrix=grad_matrix,
        value_batch=lambda X: np.mean(0.5 * np.sum(D * (X[:, None, :] - C) ** 2, axis=2), axis=1),
        name=name,
        params={"curvatures": D.tolist(), "centers": C.tolist()},
    )


def opposing_pair(n: int = 1) -> CostProblem:
    """Two linear components with gradients ``+1`` and ``-1``; ``f`` is identically zero."""
    ones = np.ones(n)
    return CostProblem(
        dimension=n,
        value=lambda x: 0.0,
        gradient=lambda x: np.zeros(n),
        components=[
            (lambda x: float(np.sum(x)), lambda x: ones.copy()),
            (lambda x: -float(np.sum(x)), lambda x: -ones),
        ],
        name="opposing_pair",
        params={"n": n},
    )


def linear_components(gradients, name: str = "linear_components") -> CostProblem:
    """Components ``f^i(x) = <g_i, x>`` with constant gradients ``g_i``."""
    G = np.asarray(gradients, dtype=float)
    m, n = G.shape
    gbar = G.mean(axis=0)
    return CostProblem(
        dimension=n,
        value=lambda x: float(np.dot(gbar, x)),
        gradient=lambda x: gbar.copy(),
        components=[(lambda x, i=i: float(np.dot(G[i], x)), lambda x, i=i: G[i].copy()) for i in range(m)],
        component_gradient_matrix=lambda x: G.copy(),
        name=name,
        params={"gradients": G.tolist()},
    )


def random_separable_quadratic(
    n: int, rng: np.random.Generator, mu0: float = 0.5, L0: float = 2.0, scale: float = 1.0, isotropic: bool = False
) -> CostProblem:
    """Diagonal quadratic with curvatures uniform in ``[mu0, L0]`` and a random center."""
    if isotropic:
        d = np.full(n, rng.uniform(mu0, L0))
    else:
        d = rng.uniform(mu0, L0, n)
    c = rng.uniform(-scale, scale, n)
    return separable_quadratic(d, c, name="random_isotropic" if isotropic else "random_separable")


def random_finite_sum_quadratic(
    n: int,
    m: int,
    rng: np.random.Generator,
    mu0: float = 0.5,
    L0: float = 2.0,
    spread: float = 0.5,
    scale: float = 1.0,
) -> CostProblem:
    """Finite-sum quadratic whose components disagree at the minimizer.

    Component curvatures are ``D_j`` plus zero-mean perturbations (kept
    positive); component centers are the common minimizer plus offsets whose
    curvature-weighted mean is zero, so the minimizer is exactly ``x*``.
    """
    if m < 2:
        raise ValueError("m must be >= 2")
    d = rng.uniform(mu0, L0, n)
    pert = rng.uniform(-1.0, 1.0, (m, n))
    pert -= pert.mean(axis=0)
    D = d + pert * (0.5 * d / np.maximum(np.abs(pert).max(axis=0), 1e-300))
    xstar = rng.uniform(-scale, scale, n)
    xi = rng.normal(0.0, spread, (m, n))
    xi -= (D * xi).sum(axis=0) / D.sum(axis=0)
    return finite_sum_quadratic(D, xstar + xi, name="random_finite_sum")


_FAMILY_KEYS = {
    "half_norm_squared": {"n"},
    "tightness": {"n", "alpha"},
    "separable_quadratic": {"curvature", "center"},
    "finite_sum_quadratic": {"curvatures", "centers", "n", "m", "spread", "seed"},
    "random_separable": {"n", "seed"},
}


def make_problem(family: str, **params) -> CostProblem:
    """Build a problem from a family name plus keyword parameters (config-file form).

    Unknown families and unknown parameter names raise ``ValueError``.
    """
    if family not in _FAMILY_KEYS:
        raise ValueError(f"unknown problem family {family!r}; expected one of {sorted(_FAMILY_KEYS)}")
    extra = set(params) - _FAMILY_KEYS[family]
    if extra:
        raise ValueError(f"unknown parameters {sorted(extra)} for problem family {family!r}")
    if family == "half_norm_squared":
        return half_norm_squared(int(params.get("n", 2)))
    if family == "tightness":
        return tightness_problem(int(params["n"]), float(params["alpha"]))
    if family == "separable_quadratic":
        return separable_quadratic(params["curvature"], params["center"])
    if family == "finite_sum_quadratic":
        if "curvatures" in params:
            return finite_sum_quadratic(params["curvatures"], params["centers"])
        seed = int(params.get("seed", 0))
        return random_finite_sum_quadratic(
            int(params.get("n", 2)),
            int(params.get("m", 8)),
            substream(seed, PROBLEM),
            spread=float(params.get("spread", 0.5)),
        )
    seed = int(params.get("seed", 0))
    return random_separable_quadratic(int(params.get("n", 2)), substream(seed, PROBLEM))


PROBLEM_FAMILIES: Sequence[str] = tuple(_FAMILY_KEYS)
