"""Lattice state, the SMGD update rule, and the iteration loop."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import TYPE_CHECKING, Optional, Sequence

import numpy as np

from . import rng as rngmod

if TYPE_CHECKING:
    from .estimators import CostProblem, EstimatorSpec

_I64 = np.iinfo(np.int64)


class NumericError(ArithmeticError):
    """Non-finite values or integer overflow inside a numeric routine."""

    def __init__(self, message: str, iteration: Optional[int] = None):
        super().__init__(message)
        self.iteration = iteration


class PreconditionError(ValueError):
    """A closed form was requested outside the event it is valid on."""


@dataclass(frozen=True)
class LatticeVector:
    """A point of ``alpha * Z^n`` stored as integer step counts."""

    coords: np.ndarray
    alpha: float

    def __post_init__(self):
        coords = np.asarray(self.coords)
        if coords.ndim != 1 or coords.size < 1:
            raise ValueError("coords must be a non-empty 1-d integer vector")
        if not np.issubdtype(coords.dtype, np.integer):
            raise ValueError(f"coords must be integers, got dtype {coords.dtype}")
        if not (np.isfinite(self.alpha) and self.alpha > 0):
            raise ValueError(f"alpha must be positive, got {self.alpha}")
        object.__setattr__(self, "coords", coords.astype(np.int64, copy=True))
        object.__setattr__(self, "alpha", float(self.alpha))
        self.coords.setflags(write=False)

    @classmethod
    def from_real(cls, values: Sequence[float], alpha: float) -> "LatticeVector":
        """Snap real values to the nearest lattice point."""
        return cls(np.rint(np.asarray(values, dtype=float) / alpha).astype(np.int64), alpha)

    @property
    def n(self) -> int:
        return int(self.coords.size)

    @property
    def values(self) -> np.ndarray:
        return self.coords * self.alpha

    def __eq__(self, other):
        if not isinstance(other, LatticeVector):
            return NotImplemented
        return self.alpha == other.alpha and np.array_equal(self.coords, other.coords)

    def __hash__(self):
        return hash((self.alpha, self.coords.tobytes()))


@dataclass(frozen=True)
class SmgdConfig:
    alpha: float
    eta: float
    iterations: int
    seed: int = 0
    trace_stride: int = 1
    # Stop when f has not improved by more than ``stagnation_tol`` for this many steps.
    stagnation_patience: Optional[int] = None
    stagnation_tol: float = 0.0

    def __post_init__(self):
        if not self.alpha > 0:
            raise ValueError(f"alpha must be positive, got {self.alpha}")
        if not self.eta > 0:
            raise ValueError(f"eta must be positive, got {self.eta}")
        if self.iterations < 0:
            raise ValueError(f"iterations must be non-negative, got {self.iterations}")
        if self.trace_stride < 1:
            raise ValueError(f"trace_stride must be >= 1, got {self.trace_stride}")
        if not 0 <= self.seed < 2**64:
            raise ValueError(f"seed must be a 64-bit unsigned integer, got {self.seed}")
        if self.stagnation_patience is not None and self.stagnation_patience < 1:
            raise ValueError("stagnation_patience must be >= 1 when set")


@dataclass(frozen=True)
class GradientSample:
    """One realization of the gradient estimator and its clip event."""

    values: np.ndarray
    clip_event: bool

    @classmethod
    def evaluate(cls, values, eta: float) -> "GradientSample":
        values = np.asarray(values, dtype=float)
        with np.errstate(invalid="ignore"):
            inside = bool(np.max(np.abs(values), initial=0.0) <= eta)
        return cls(values, inside)


@dataclass(frozen=True)
class StepOutcome:
    flips: np.ndarray
    support_size: int
    update: np.ndarray


def flip_probabilities(g: np.ndarray, eta: float) -> np.ndarray:
    return np.minimum(np.abs(g) / eta, 1.0)


def lattice_flip(
    coords: np.ndarray,
    g: np.ndarray,
    eta: float,
    rng: np.random.Generator,
    lo: Optional[int] = None,
    hi: Optional[int] = None,
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Apply one SMGD flip pass to an integer array of any shape.

    Consumes one uniform per entry in C order.  When ``lo``/``hi`` are given,
    moves that would leave ``[lo, hi]`` are suppressed and the entry stays put.

    Returns ``(new_coords, flips, update)``; ``flips`` marks accepted moves.
    """
    g = np.asarray(g, dtype=float)
    if g.shape != coords.shape:
        raise ValueError(f"gradient shape {g.shape} does not match state shape {coords.shape}")
    if not np.all(np.isfinite(g)):
        bad = int(np.flatnonzero(~np.isfinite(g.ravel()))[0])
        raise NumericError(f"non-finite gradient entry at flat index {bad}")
    u = rng.random(g.shape)
    flips = u < flip_probabilities(g, eta)
    update = -np.sign(g).astype(np.int64) * flips
    if lo is not None or hi is not None:
        target = coords + update
        ok = np.ones(coords.shape, dtype=bool)
        if lo is not None:
            ok &= target >= lo
        if hi is not None:
            ok &= target <= hi
        flips = flips & ok
        update = np.where(ok, update, 0)
    else:
        if np.any((update > 0) & (coords == _I64.max)) or np.any((update < 0) & (coords == _I64.min)):
            raise NumericError("lattice coordinate overflow")
    return coords + update, flips, update


def smgd_step(
    x: LatticeVector, g: GradientSample, config: SmgdConfig, rng: np.random.Generator
) -> tuple[LatticeVector, StepOutcome]:
    """One SMGD update of ``x`` driven by the gradient realization ``g``."""
    if x.alpha != config.alpha:
        raise ValueError(f"state lattice alpha={x.alpha} differs from config alpha={config.alpha}")
    values = np.asarray(g.values, dtype=float)
    if values.shape != x.coords.shape:
        raise ValueError(f"gradient has length {values.size}, state has length {x.n}")
    new, flips, update = lattice_flip(x.coords, values, config.eta, rng)
    outcome = StepOutcome(flips=flips, support_size=int(flips.sum()), update=update)
    return LatticeVector(new, x.alpha), outcome


def expected_update(x: LatticeVector, grad, config: SmgdConfig) -> np.ndarray:
    """Conditional mean of the next iterate given the gradient realization ``grad``.

    Only valid when ``max|grad_i| <= eta``; raises :class:`PreconditionError` otherwise.
    """
    grad = np.asarray(grad, dtype=float)
    if grad.shape != x.coords.shape:
        raise ValueError(f"gradient has length {grad.size}, state has length {x.n}")
    if np.max(np.abs(grad)) > config.eta:
        raise PreconditionError(
            f"max|grad| = {np.max(np.abs(grad))} exceeds eta = {config.eta}; "
            "the per-coordinate closed form needs unclipped probabilities"
        )
    return x.values - (config.alpha / config.eta) * grad


@dataclass(frozen=True)
class TraceRow:
    step: int
    f: float
    grad_l1: float
    grad_l2: float
    dist_sq: Optional[float]
    support: int
    clip_rate: Optional[float]


@dataclass
class RunTrace:
    rows: list[TraceRow] = field(default_factory=list)
    final_point: Optional[LatticeVector] = None
    stopped_early: bool = False
    diverged: bool = False
    # Real-valued final iterate for runs that leave the lattice (SGD baselines).
    final_values: Optional[np.ndarray] = None

    @property
    def costs(self) -> np.ndarray:
        return np.array([r.f for r in self.rows])

    @property
    def steps(self) -> list[int]:
        return [r.step for r in self.rows]


def _row(problem: "CostProblem", x: np.ndarray, step: int, support: int, clip_rate) -> TraceRow:
    grad = np.asarray(problem.gradient(x), dtype=float)
    f = float(problem.value(x))
    if not (np.isfinite(f) and np.all(np.isfinite(grad))):
        raise NumericError(f"non-finite cost or gradient at step {step}", iteration=step)
    dist_sq = None
    if problem.minimizer is not None:
        dist_sq = float(np.sum((x - problem.minimizer) ** 2))
    return TraceRow(
        step=step,
        f=f,
        grad_l1=float(np.sum(np.abs(grad))),
        grad_l2=float(np.sqrt(np.sum(grad**2))),
        dist_sq=dist_sq,
        support=support,
        clip_rate=clip_rate,
    )


def run(
    problem: "CostProblem",
    estimator: "EstimatorSpec",
    config: SmgdConfig,
    x0: LatticeVector,
    replicate: int = 0,
) -> RunTrace:
    """Run SMGD for ``config.iterations`` steps from ``x0``.

    Step ``t`` draws its gradient from substream ``(seed, replicate, t, ESTIMATOR)``
    and its flips from ``(seed, replicate, t, FLIPS)``, so estimators that consume
    no randomness leave the flip draws unchanged.
    """
    from .estimators import sample_gradient

    if x0.n != problem.dimension:
        raise ValueError(f"initial point has dimension {x0.n}, problem has {problem.dimension}")
    if x0.alpha != config.alpha:
        raise ValueError(f"initial lattice alpha={x0.alpha} differs from config alpha={config.alpha}")
    estimator.validate(problem)

    trace = RunTrace()
    x = x0
    trace.rows.append(_row(problem, x.values, 0, 0, None))
    best = trace.rows[0].f
    since_best = 0
    clipped = 0
    window = 0
    for t in range(1, config.iterations + 1):
        try:
            g = sample_gradient(
                problem, estimator, x.values, config.eta,
                rngmod.substream(config.seed, replicate, t, rngmod.ESTIMATOR),
            )
            x, outcome = smgd_step(x, g, config, rngmod.substream(config.seed, replicate, t, rngmod.FLIPS))
        except NumericError as exc:
            raise NumericError(f"iteration {t}: {exc}", iteration=t) from exc
        window += 1
        clipped += not g.clip_event

        stop = False
        if config.stagnation_patience is not None:
            f_now = float(problem.value(x.values))
            if f_now < best - config.stagnation_tol:
                best, since_best = f_now, 0
            else:
                since_best += 1
                stop = since_best >= config.stagnation_patience

        if t % config.trace_stride == 0 or t == config.iterations or stop:
            trace.rows.append(_row(problem, x.values, t, outcome.support_size, clipped / window))
            clipped = window = 0
        if stop:
            trace.stopped_early = True
            break
    trace.final_point = x
    return trace
