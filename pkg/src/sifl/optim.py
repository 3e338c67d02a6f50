"""Gradient-descent step functions and their immersed counterparts.

A standard local update is ``w <- w - g(w, batch)`` where ``g`` depends on the
optimizer (SGD, momentum, Adam). The immersed update acts on encoded
parameters without ever materialising the plain ones in the update rule::

    w_tilde <- w_tilde - pi1 @ g(pi1_left @ w_tilde, batch)

Starting from ``w_tilde = pi1 @ w + n1 @ r``, the encoded trajectory tracks
the plain one exactly: the update only ever adds columns of pi1, so the
kernel offset ``n1 @ r`` rides along untouched and decoding recovers the
plain trajectory up to float rounding.

Optimizer internals (momentum velocity, Adam moments) live in the original
n-dimensional coordinates and are fed the gradient at the decoded point;
this is the only choice that preserves the tracking property for stateful
optimizers. Minibatches are sampled without replacement per epoch, reshuffled
from the caller's RNG, so two runs with equal seeds see bitwise-equal batch
sequences.
"""

from dataclasses import dataclass, replace

import numpy as np

from .errors import DimensionError, EmptyDataset, InvalidArgs
from .models import Dataset, loss_and_grad


@dataclass(frozen=True)
class Sgd:
    eta: float = 0.01

    def __post_init__(self):
        if self.eta <= 0:
            raise InvalidArgs("learning rate must be positive")


@dataclass(frozen=True)
class Momentum:
    eta: float = 0.01
    beta: float = 0.9

    def __post_init__(self):
        if self.eta <= 0:
            raise InvalidArgs("learning rate must be positive")
        if not 0 <= self.beta < 1:
            raise InvalidArgs("beta must be in [0, 1)")


@dataclass(frozen=True)
class Adam:
    eta: float = 0.001
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    def __post_init__(self):
        if self.eta <= 0:
            raise InvalidArgs("learning rate must be positive")
        if not (0 <= self.beta1 < 1 and 0 <= self.beta2 < 1):
            raise InvalidArgs("betas must be in [0, 1)")
        if self.eps <= 0:
            raise InvalidArgs("eps must be positive")


OptimizerKind = Sgd | Momentum | Adam


@dataclass(frozen=True)
class OptimizerState:
    """Per-client optimizer internals, kept in original coordinates."""

    kind: OptimizerKind
    velocity: np.ndarray | None = None   # momentum
    m1: np.ndarray | None = None         # Adam first moment
    m2: np.ndarray | None = None         # Adam second moment
    step_count: int = 0


def init_state(kind: OptimizerKind, n: int) -> OptimizerState:
    if isinstance(kind, Sgd):
        return OptimizerState(kind=kind)
    if isinstance(kind, Momentum):
        return OptimizerState(kind=kind, velocity=np.zeros(n))
    return OptimizerState(kind=kind, m1=np.zeros(n), m2=np.zeros(n))


def step_g(state: OptimizerState, w, grad):
    """The step vector g (plain update is w - g) and the advanced state."""
    w = np.asarray(w, dtype=np.float64)
    grad = np.asarray(grad, dtype=np.float64)
    if w.shape != grad.shape or w.ndim != 1:
        raise DimensionError(f"w and grad must be equal-length vectors, got {w.shape} and {grad.shape}")
    kind = state.kind
    if isinstance(kind, Sgd):
        return kind.eta * grad, state
    if isinstance(kind, Momentum):
        if state.velocity is None or state.velocity.shape != w.shape:
            raise DimensionError("momentum state does not match the parameter length")
        v = kind.beta * state.velocity + grad
        return kind.eta * v, replace(state, velocity=v)
    if state.m1 is None or state.m1.shape != w.shape:
        raise DimensionError("Adam state does not match the parameter length")
    t = state.step_count + 1
    m1 = kind.beta1 * state.m1 + (1 - kind.beta1) * grad
    m2 = kind.beta2 * state.m2 + (1 - kind.beta2) * grad**2
    m1_hat = m1 / (1 - kind.beta1**t)
    m2_hat = m2 / (1 - kind.beta2**t)
    g = kind.eta * m1_hat / (np.sqrt(m2_hat) + kind.eps)
    return g, replace(state, m1=m1, m2=m2, step_count=t)


@dataclass(frozen=True)
class LocalRunConfig:
    """K local iterations on minibatches; optional final-norm clipping."""

    local_iters: int = 1
    batch_size: int | None = None   # None = full batch
    clip_threshold: float | None = None

    def __post_init__(self):
        if self.local_iters < 1:
            raise InvalidArgs("local_iters must be >= 1")
        if self.batch_size is not None and self.batch_size < 1:
            raise InvalidArgs("batch_size must be >= 1")
        if self.clip_threshold is not None and self.clip_threshold <= 0:
            raise InvalidArgs("clip_threshold must be positive")


def _batches(m: int, cfg: LocalRunConfig, rng: np.random.Generator):
    """Yield index arrays: without-replacement epochs, reshuffled from rng."""
    size = cfg.batch_size
    if size is None or size >= m:
        full = np.arange(m)
        while True:
            yield full
    while True:
        order = rng.permutation(m)
        for off in range(0, m, size):
            yield order[off : off + size]


def clip_norm(w, threshold):
    """Project onto the L2 ball of the given radius."""
    norm = float(np.linalg.norm(w))
    if norm > threshold:
        return w * (threshold / norm)
    return w


def plain_local_run(spec, state: OptimizerState, w0, data: Dataset,
                    cfg: LocalRunConfig, rng: np.random.Generator) -> np.ndarray:
    """K plain optimizer iterations from w0; returns the final local model."""
    if data.m < 1:
        raise EmptyDataset("local dataset is empty")
    w = np.array(w0, dtype=np.float64)
    batches = _batches(data.m, cfg, rng)
    for _ in range(cfg.local_iters):
        idx = next(batches)
        _, grad = loss_and_grad(spec, w, data.features[idx], data.labels[idx])
        g, state = step_g(state, w, grad)
        w = w - g
    if cfg.clip_threshold is not None:
        w = clip_norm(w, cfg.clip_threshold)
    return w


def target_local_run(keys, spec, state: OptimizerState, w_tilde0, data: Dataset,
                     cfg: LocalRunConfig, rng: np.random.Generator) -> np.ndarray:
    """K immersed iterations on encoded parameters.

    ``keys`` needs only ``apply_pi1``/``apply_pi1_left`` (a client view is
    enough). Clipping is applied as a plain-space projection expressed through
    pi1 so the run stays on its manifold.
    """
    if data.m < 1:
        raise EmptyDataset("local dataset is empty")
    w_tilde = np.array(w_tilde0, dtype=np.float64)
    if w_tilde.shape != (keys.n_tilde,):
        raise DimensionError(
            f"encoded start must have shape ({keys.n_tilde},), got {w_tilde.shape}"
        )
    batches = _batches(data.m, cfg, rng)
    for _ in range(cfg.local_iters):
        idx = next(batches)
        w = keys.apply_pi1_left(w_tilde)
        _, grad = loss_and_grad(spec, w, data.features[idx], data.labels[idx])
        g, state = step_g(state, w, grad)
        w_tilde = w_tilde - keys.apply_pi1(g)
    if cfg.clip_threshold is not None:
        w = keys.apply_pi1_left(w_tilde)
        w_tilde = w_tilde + keys.apply_pi1(clip_norm(w, cfg.clip_threshold) - w)
    return w_tilde
