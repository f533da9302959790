"""Quantized feed-forward networks trained by SMGD.

Weights and biases are integer codes in the q-bit range
``[-2**(q-1), 2**(q-1) - 1]``.  Layer ``i`` maps a code ``c`` to the real
weight ``(c + offset) * alphas[i]``.  The offset is 0 by default; with
``midrise=True`` it is 1/2, which gives the 1-bit range the symmetric values
``+-alpha/2``.

Training moves every code by at most one lattice step per iteration using the
SMGD flip rule.  A move that would leave the code range is suppressed and the
code stays put.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from fractions import Fraction
from pathlib import Path
from typing import Optional, Sequence, Union

import numpy as np

from . import rng as rngmod
from .core import NumericError, lattice_flip
from .data import Dataset, epoch_permutation

MAX_Q_BITS = 16


def code_range(q_bits: int) -> tuple[int, int]:
    if not 1 <= q_bits <= MAX_Q_BITS:
        raise ValueError(f"q_bits must lie in [1, {MAX_Q_BITS}], got {q_bits}")
    return -(1 << (q_bits - 1)), (1 << (q_bits - 1)) - 1


def _init_range(q_bits: int) -> tuple[int, int]:
    # central half of the code range
    lo, hi = code_range(q_bits)
    return lo // 2, hi // 2


def _init_rms(q_bits: int, offset: float) -> float:
    a, b = _init_range(q_bits)
    c = np.arange(a, b + 1) + offset
    return float(np.sqrt(np.mean(c**2)))


@dataclass
class QuantizedMlp:
    layer_dims: tuple[int, ...]
    q_bits: int
    codes: list[np.ndarray]
    bias_codes: list[np.ndarray]
    alphas: tuple[float, ...]
    midrise: bool = False
    activation: str = "relu"
    output: str = "softmax_cross_entropy"

    def __post_init__(self):
        self.layer_dims = tuple(int(d) for d in self.layer_dims)
        if len(self.layer_dims) < 2 or min(self.layer_dims) < 1:
            raise ValueError(f"layer_dims needs at least two positive sizes, got {self.layer_dims}")
        lo, hi = code_range(self.q_bits)
        n_layers = len(self.layer_dims) - 1
        if not (len(self.codes) == len(self.bias_codes) == len(self.alphas) == n_layers):
            raise ValueError(f"expected {n_layers} weight, bias and alpha entries")
        if self.activation != "relu" or self.output != "softmax_cross_entropy":
            raise ValueError("only relu activations with a softmax cross-entropy output are supported")
        self.alphas = tuple(float(a) for a in self.alphas)
        if not all(np.isfinite(a) and a > 0 for a in self.alphas):
            raise ValueError(f"alphas must be positive, got {self.alphas}")
        for i, (fan_in, fan_out) in enumerate(zip(self.layer_dims[:-1], self.layer_dims[1:])):
            self.codes[i] = np.asarray(self.codes[i], dtype=np.int64)
            self.bias_codes[i] = np.asarray(self.bias_codes[i], dtype=np.int64)
            if self.codes[i].shape != (fan_out, fan_in) or self.bias_codes[i].shape != (fan_out,):
                raise ValueError(f"layer {i}: code shapes do not match dims {fan_in}->{fan_out}")
        self.check_codes()

    @property
    def n_layers(self) -> int:
        return len(self.layer_dims) - 1

    @property
    def offset(self) -> float:
        return 0.5 if self.midrise else 0.0

    @property
    def code_range(self) -> tuple[int, int]:
        return code_range(self.q_bits)

    @property
    def total_weights(self) -> int:
        return int(sum(c.size + b.size for c, b in zip(self.codes, self.bias_codes)))

    def check_codes(self) -> None:
        lo, hi = self.code_range
        for i, arr in enumerate([*self.codes, *self.bias_codes]):
            if arr.size and (arr.min() < lo or arr.max() > hi):
                raise ValueError(f"code array {i} leaves the {self.q_bits}-bit range [{lo}, {hi}]")

    def weights(self) -> list[np.ndarray]:
        return [(c + self.offset) * a for c, a in zip(self.codes, self.alphas)]

    def biases(self) -> list[np.ndarray]:
        return [(b + self.offset) * a for b, a in zip(self.bias_codes, self.alphas)]

    def copy(self) -> "QuantizedMlp":
        return QuantizedMlp(self.layer_dims, self.q_bits, [c.copy() for c in self.codes],
                            [b.copy() for b in self.bias_codes], self.alphas, self.midrise)

    @classmethod
    def initialize(
        cls,
        layer_dims: Sequence[int],
        q_bits: int,
        seed: int,
        alpha: Union[None, float, Sequence[float]] = None,
        alpha_scale: float = 1.0,
        midrise: bool = False,
    ) -> "QuantizedMlp":
        """Uniform random codes in the central half of the code range.

        With ``alpha=None`` each layer gets ``alpha_scale * sqrt(2/fan_in) / rms(code)``
        so the initial real weights have variance close to ``2/fan_in``.  A float
        shares one alpha across layers; a sequence sets each layer.  An explicit
        alpha also narrows the code interval to about ``+-sqrt(6/fan_in)/alpha``
        so a fine lattice does not start with huge weights.
        """
        dims = tuple(int(d) for d in layer_dims)
        offset = 0.5 if midrise else 0.0
        a, b = _init_range(q_bits)
        rms = _init_rms(q_bits, offset)
        gen = rngmod.substream(seed, rngmod.INIT)
        n_layers = len(dims) - 1
        if alpha is None:
            alphas = [alpha_scale * np.sqrt(2.0 / fan_in) / rms for fan_in in dims[:-1]]
        elif np.ndim(alpha) == 0:
            alphas = [float(alpha)] * n_layers
        else:
            if len(alpha) != n_layers:
                raise ValueError(f"need {n_layers} per-layer alphas, got {len(alpha)}")
            alphas = [float(x) for x in alpha]
        codes, bias_codes = [], []
        for i, (fan_in, fan_out) in enumerate(zip(dims[:-1], dims[1:])):
            lo, hi = a, b
            if alpha is not None:
                # keep real weights near uniform(+-sqrt(6/fan_in)) when alpha is small
                m = max(1, int(np.ceil(np.sqrt(6.0 / fan_in) / alphas[i])))
                lo, hi = max(a, -m), min(b, m)
            codes.append(gen.integers(lo, hi + 1, size=(fan_out, fan_in)))
            if midrise:
                bias_codes.append(gen.integers(lo, hi + 1, size=fan_out))
            else:
                bias_codes.append(np.zeros(fan_out, dtype=np.int64))
        return cls(dims, q_bits, codes, bias_codes, tuple(alphas), midrise)


# real-valued network math, shared by the quantized net and the float baseline

@dataclass
class ForwardCache:
    inputs: list[np.ndarray]
    preacts: list[np.ndarray]
    weights: list[np.ndarray]


@dataclass
class Gradient:
    weights: list[np.ndarray]
    biases: list[np.ndarray]

    def flat(self) -> np.ndarray:
        return np.concatenate([a.ravel() for pair in zip(self.weights, self.biases) for a in pair])


def forward_real(weights: Sequence[np.ndarray], biases: Sequence[np.ndarray], batch: np.ndarray):
    h = np.asarray(batch, dtype=np.float64)
    if h.ndim != 2 or h.shape[1] != weights[0].shape[1]:
        raise ValueError(f"batch must have shape (k, {weights[0].shape[1]}), got {h.shape}")
    inputs, preacts = [], []
    last = len(weights) - 1
    for i, (W, b) in enumerate(zip(weights, biases)):
        with np.errstate(over="ignore", invalid="ignore"):
            z = h @ W.T + b
        if not np.all(np.isfinite(z)):
            raise NumericError(f"non-finite pre-activation in layer {i}")
        inputs.append(h)
        preacts.append(z)
        h = z if i == last else np.maximum(z, 0.0)
    return h, ForwardCache(inputs, preacts, list(weights))


def softmax_cross_entropy(logits: np.ndarray, labels: np.ndarray) -> tuple[float, np.ndarray]:
    """Mean cross-entropy and its gradient with respect to the logits."""
    labels = np.asarray(labels)
    if labels.shape != (logits.shape[0],):
        raise ValueError(f"{logits.shape[0]} logit rows but {labels.size} labels")
    if labels.size and (labels.min() < 0 or labels.max() >= logits.shape[1]):
        raise ValueError(f"labels must lie in [0, {logits.shape[1]})")
    z = logits - logits.max(axis=1, keepdims=True)
    logp = z - np.log(np.exp(z).sum(axis=1, keepdims=True))
    rows = np.arange(labels.size)
    loss = float(-logp[rows, labels].mean())
    d = np.exp(logp)
    d[rows, labels] -= 1.0
    return loss, d / labels.size


def backward_real(cache: ForwardCache, dlogits: np.ndarray) -> Gradient:
    n = len(cache.weights)
    gW, gB = [None] * n, [None] * n
    d = dlogits
    for i in reversed(range(n)):
        if i < n - 1:
            d = d * (cache.preacts[i] > 0)
        gW[i] = d.T @ cache.inputs[i]
        gB[i] = d.sum(axis=0)
        if not (np.all(np.isfinite(gW[i])) and np.all(np.isfinite(gB[i]))):
            raise NumericError(f"non-finite gradient in layer {i}")
        if i:
            d = d @ cache.weights[i]
    return Gradient(gW, gB)


def forward(net: QuantizedMlp, batch: np.ndarray):
    return forward_real(net.weights(), net.biases(), batch)


def backward(net: QuantizedMlp, cache: ForwardCache, labels) -> Gradient:
    """Gradient of the mean cross-entropy with respect to the real weights and biases."""
    logits = cache.preacts[-1]
    _, d = softmax_cross_entropy(logits, labels)
    return backward_real(cache, d)


def loss_and_gradient(net: QuantizedMlp, batch, labels) -> tuple[float, Gradient]:
    logits, cache = forward(net, batch)
    loss, d = softmax_cross_entropy(logits, labels)
    return loss, backward_real(cache, d)


def evaluate(weights, biases, dataset: Dataset, chunk: int = 4096) -> tuple[float, float]:
    """Mean loss and accuracy over a dataset."""
    total, correct = 0.0, 0
    for s in range(0, len(dataset), chunk):
        X, y = dataset.features[s:s + chunk], dataset.labels[s:s + chunk]
        logits, _ = forward_real(weights, biases, X)
        loss, _ = softmax_cross_entropy(logits, y)
        total += loss * y.size
        correct += int(np.sum(logits.argmax(axis=1) == y))
    return total / len(dataset), correct / len(dataset)


@dataclass(frozen=True)
class TrainConfig:
    epochs: int
    batch_size: int
    eta: float
    seed: int = 0
    # None: per-layer alphas from the initialization rule; float: shared; list: per layer
    alpha: Union[None, float, tuple[float, ...]] = None
    alpha_scale: float = 1.0
    # steps between curve rows; 0 records once per epoch
    eval_stride: int = 0
    # cap on total steps, for equal-work comparisons across batch sizes
    max_steps: Optional[int] = None

    def __post_init__(self):
        if self.epochs < 1:
            raise ValueError(f"epochs must be >= 1, got {self.epochs}")
        if self.batch_size < 1:
            raise ValueError(f"batch_size must be >= 1, got {self.batch_size}")
        if not self.eta > 0:
            raise ValueError(f"eta must be positive, got {self.eta}")
        if self.eval_stride < 0:
            raise ValueError("eval_stride must be >= 0")
        if self.max_steps is not None and self.max_steps < 1:
            raise ValueError("max_steps must be >= 1 when set")
        if not 0 <= self.seed < 2**64:
            raise ValueError("seed must be a 64-bit unsigned integer")


@dataclass(frozen=True)
class CurveRow:
    step: int
    epoch: int
    f: float
    grad_l1: Optional[float]
    grad_l2: Optional[float]
    support: Optional[int]
    clip_rate: Optional[float]
    test_acc: Optional[float]


@dataclass
class LearningCurve:
    rows: list[CurveRow] = field(default_factory=list)
    warnings: list[str] = field(default_factory=list)

    @property
    def final_loss(self) -> float:
        return self.rows[-1].f

    @property
    def final_test_acc(self) -> Optional[float]:
        return self.rows[-1].test_acc


def _batches(n: int, config: TrainConfig):
    """Yield ``(step, epoch, indices)``; each epoch walks a fresh permutation, dropping the ragged tail."""
    if config.batch_size > n:
        raise ValueError(f"batch_size {config.batch_size} exceeds dataset size {n}")
    per_epoch = n // config.batch_size
    step = 0
    for epoch in range(config.epochs):
        perm = epoch_permutation(n, config.seed, epoch)
        for j in range(per_epoch):
            if config.max_steps is not None and step >= config.max_steps:
                return
            step += 1
            yield step, epoch, perm[j * config.batch_size:(j + 1) * config.batch_size]


def _train(params_of, update, dims, train: Dataset, config: TrainConfig, test: Optional[Dataset]) -> LearningCurve:
    if train.dims != dims[0]:
        raise ValueError(f"dataset has {train.dims} features, network expects {dims[0]}")
    if train.num_classes > dims[-1]:
        raise ValueError(f"dataset has {train.num_classes} classes, network outputs {dims[-1]}")
    curve = LearningCurve()
    per_epoch = len(train) // config.batch_size
    stride = config.eval_stride or per_epoch

    def record(step, epoch, stats):
        W, B = params_of()
        f, _ = evaluate(W, B, train)
        acc = evaluate(W, B, test)[1] if test is not None else None
        curve.rows.append(CurveRow(step, epoch, f, *stats, acc))

    record(0, 0, (None, None, None, None))
    window = clipped = support = 0
    l1 = l2 = None
    step = 0
    for step, epoch, idx in _batches(len(train), config):
        W, B = params_of()
        try:
            logits, cache = forward_real(W, B, train.features[idx])
            _, d = softmax_cross_entropy(logits, train.labels[idx])
            grad = backward_real(cache, d)
        except NumericError as exc:
            curve.warnings.append(f"step {step}: {exc}; update skipped")
            continue
        flat = grad.flat()
        l1, l2 = float(np.abs(flat).sum()), float(np.sqrt(np.sum(flat**2)))
        clipped += bool(np.max(np.abs(flat)) > config.eta)
        support = update(step, grad, curve)
        window += 1
        if step % stride == 0:
            record(step, epoch + 1 if step % per_epoch == 0 else epoch, (l1, l2, support, clipped / window))
            window = clipped = 0
    if step and curve.rows[-1].step != step:
        record(step, epoch + 1 if step % per_epoch == 0 else epoch,
               (l1, l2, support, clipped / window if window else None))
    return curve


def train_smgd(net: QuantizedMlp, train: Dataset, config: TrainConfig,
               test: Optional[Dataset] = None) -> tuple[QuantizedMlp, LearningCurve]:
    """Train a copy of ``net`` with mini-batch SMGD; ``net`` itself is left unchanged.

    Step ``t`` draws its flips for every parameter array, layer by layer with
    weights before biases, from substream ``(seed, 1, t, FLIPS)``.
    """
    net = net.copy()
    lo, hi = net.code_range

    def params_of():
        return net.weights(), net.biases()

    def update(step, grad, curve):
        gen = rngmod.substream(config.seed, 1, step, rngmod.FLIPS)
        moved = 0
        for i in range(net.n_layers):
            for arrays, g in ((net.codes, grad.weights[i]), (net.bias_codes, grad.biases[i])):
                new, flips, _ = lattice_flip(arrays[i], g, config.eta, gen, lo, hi)
                arrays[i] = new
                moved += int(flips.sum())
        return moved

    curve = _train(params_of, update, net.layer_dims, train, config, test)
    net.check_codes()
    for i, c in enumerate(net.codes):
        if np.all((c == lo) | (c == hi)):
            curve.warnings.append(f"layer {i}: every weight code is saturated")
    return net, curve


@dataclass
class FloatMlp:
    layer_dims: tuple[int, ...]
    weights: list[np.ndarray]
    biases: list[np.ndarray]

    @classmethod
    def initialize(cls, layer_dims: Sequence[int], seed: int) -> "FloatMlp":
        dims = tuple(int(d) for d in layer_dims)
        gen = rngmod.substream(seed, rngmod.INIT)
        W = [gen.normal(0.0, np.sqrt(2.0 / a), size=(b, a)) for a, b in zip(dims[:-1], dims[1:])]
        return cls(dims, W, [np.zeros(b) for b in dims[1:]])

    @classmethod
    def from_quantized(cls, net: QuantizedMlp) -> "FloatMlp":
        return cls(net.layer_dims, net.weights(), net.biases())


def train_sgd(net: FloatMlp, train: Dataset, config: TrainConfig, gamma: float,
              test: Optional[Dataset] = None) -> tuple[FloatMlp, LearningCurve]:
    """Full-precision mini-batch SGD baseline with step size ``gamma``; ``config.eta`` is unused."""
    net = FloatMlp(net.layer_dims, [w.copy() for w in net.weights], [b.copy() for b in net.biases])

    def params_of():
        return net.weights, net.biases

    def update(step, grad, curve):
        for i in range(len(net.weights)):
            net.weights[i] = net.weights[i] - gamma * grad.weights[i]
            net.biases[i] = net.biases[i] - gamma * grad.biases[i]
        return None

    curve = _train(params_of, update, net.layer_dims, train, config, test)
    return net, curve


# memory accounting

MEMORY_MODES = ("online", "minibatch", "full_precision_sgd")


@dataclass(frozen=True)
class MemoryReport:
    q_bits: int
    mode: str
    bits_per_weight: int
    total_weights: int
    training_bits_total: int
    size_multiplier_vs_fp: Fraction

    def to_json(self) -> dict:
        m = self.size_multiplier_vs_fp
        return {
            "q_bits": self.q_bits,
            "mode": self.mode,
            "bits_per_weight": self.bits_per_weight,
            "total_weights": self.total_weights,
            "training_bits_total": self.training_bits_total,
            "size_multiplier_vs_fp": f"{m.numerator}/{m.denominator}",
            "size_multiplier_vs_fp_float": float(m),
        }


def bits_per_weight(q_bits: int, mode: str) -> int:
    """Online keeps a 2-bit (sign, flip) gradient beside each q-bit code; mini-batch keeps a 32-bit float."""
    code_range(q_bits)
    if mode == "online":
        return 2 + q_bits
    if mode == "minibatch":
        return 32 + q_bits
    if mode == "full_precision_sgd":
        return 64
    raise ValueError(f"mode must be one of {MEMORY_MODES}, got {mode!r}")


def memory_report(net: Union[QuantizedMlp, int], mode: str, q_bits: Optional[int] = None) -> MemoryReport:
    """Training memory for ``net``, or for a bare weight count when ``net`` is an int."""
    if isinstance(net, QuantizedMlp):
        total, q = net.total_weights, net.q_bits
    else:
        if q_bits is None:
            raise ValueError("q_bits is required with a bare weight count")
        total, q = int(net), q_bits
    bits = bits_per_weight(q, mode)
    return MemoryReport(q, mode, bits, total, bits * total, Fraction(64, bits))


# checkpoints
#
# layout, little-endian:
#   magic    8 bytes  b"SMGDQNN\0"
#   version  u16
#   q_bits   u8
#   flags    u8       bit 0: midrise
#   n_dims   u16, then n_dims x u32 layer sizes
#   alphas   (n_dims - 1) x f64
#   codes    per layer: weights (out x in, row-major) then biases, i16 each

CHECKPOINT_MAGIC = b"SMGDQNN\0"
CHECKPOINT_VERSION = 1


class CheckpointError(ValueError):
    pass


def checkpoint_bytes(net: QuantizedMlp) -> bytes:
    parts = [CHECKPOINT_MAGIC, struct.pack("<HBBH", CHECKPOINT_VERSION, net.q_bits, int(net.midrise),
                                           len(net.layer_dims))]
    parts.append(struct.pack(f"<{len(net.layer_dims)}I", *net.layer_dims))
    parts.append(struct.pack(f"<{net.n_layers}d", *net.alphas))
    for c, b in zip(net.codes, net.bias_codes):
        parts.append(c.astype("<i2").tobytes())
        parts.append(b.astype("<i2").tobytes())
    return b"".join(parts)


def save_checkpoint(net: QuantizedMlp, path) -> None:
    Path(path).write_bytes(checkpoint_bytes(net))


def checkpoint_from_bytes(raw: bytes) -> QuantizedMlp:
    if raw[:8] != CHECKPOINT_MAGIC:
        raise CheckpointError("bad checkpoint magic at offset 0")
    pos = 8
    try:
        version, q, flags, n_dims = struct.unpack_from("<HBBH", raw, pos)
        pos += 6
        if version != CHECKPOINT_VERSION:
            raise CheckpointError(f"unsupported checkpoint version {version}")
        dims = struct.unpack_from(f"<{n_dims}I", raw, pos)
        pos += 4 * n_dims
        alphas = struct.unpack_from(f"<{n_dims - 1}d", raw, pos)
        pos += 8 * (n_dims - 1)
    except struct.error as exc:
        raise CheckpointError(f"truncated checkpoint header near offset {pos}") from exc
    if flags & ~1:
        raise CheckpointError(f"unknown checkpoint flags 0x{flags:02x}")
    try:
        lo, hi = code_range(q)
    except ValueError as exc:
        raise CheckpointError(str(exc)) from exc
    codes, biases = [], []
    for i, (fan_in, fan_out) in enumerate(zip(dims[:-1], dims[1:])):
        for shape, out in (((fan_out, fan_in), codes), ((fan_out,), biases)):
            count = int(np.prod(shape))
            if len(raw) < pos + 2 * count:
                raise CheckpointError(f"truncated codes for layer {i} at offset {pos}")
            arr = np.frombuffer(raw, dtype="<i2", count=count, offset=pos).astype(np.int64).reshape(shape)
            if arr.size and (arr.min() < lo or arr.max() > hi):
                raise CheckpointError(f"layer {i} codes at offset {pos} leave the {q}-bit range [{lo}, {hi}]")
            out.append(arr)
            pos += 2 * count
    if pos != len(raw):
        raise CheckpointError(f"{len(raw) - pos} trailing bytes at offset {pos}")
    return QuantizedMlp(dims, q, codes, biases, alphas, bool(flags & 1))


def load_checkpoint(path) -> QuantizedMlp:
    return checkpoint_from_bytes(Path(path).read_bytes())


def accuracy(net: QuantizedMlp, dataset: Dataset) -> float:
    return evaluate(net.weights(), net.biases(), dataset)[1]

