"""Desk-scale models, datasets, and client partitioning.

Models are defined by a spec (linear regression, softmax regression, or an
MLP with ReLU hidden layers and a softmax output) whose parameters live in a
single flat float64 vector. The flat layout is fixed: layers in order, each
layer's weight matrix (out x in, row-major) followed by its bias vector.
Losses are means over the batch; cross-entropy uses log-sum-exp
stabilisation. All gradients are analytic and are checked against central
finite differences in the test suite.
"""

from dataclasses import dataclass
from fractions import Fraction

import numpy as np

from .errors import (
    DimensionError,
    EmptyBatch,
    EmptyDataset,
    InvalidArgs,
    ParseError,
    ShapeMismatch,
    TooManyClients,
)


@dataclass(frozen=True)
class Dataset:
    """Feature matrix (m x d) plus labels (length m).

    Labels are integer class ids for classification and floats for
    regression. Arrays are frozen; datasets are shared read-only.
    """

    features: np.ndarray
    labels: np.ndarray

    def __post_init__(self):
        f = np.asarray(self.features, dtype=np.float64)
        l = np.asarray(self.labels)
        if f.ndim != 2:
            raise DimensionError(f"features must be 2-D, got shape {f.shape}")
        if f.shape[0] < 1:
            raise EmptyDataset("dataset has no samples")
        if l.shape != (f.shape[0],):
            raise DimensionError(
                f"labels must have shape ({f.shape[0]},), got {l.shape}"
            )
        f.flags.writeable = False
        l.flags.writeable = False
        object.__setattr__(self, "features", f)
        object.__setattr__(self, "labels", l)

    @property
    def m(self) -> int:
        return self.features.shape[0]

    @property
    def d(self) -> int:
        return self.features.shape[1]

    def subset(self, idx) -> "Dataset":
        return Dataset(self.features[idx], self.labels[idx])


@dataclass(frozen=True)
class Partition:
    """Disjoint client index sets with exact-rational weights |D_i| / |D|."""

    client_indices: tuple
    weights_exact: tuple          # Fractions summing to exactly 1

    @property
    def n_clients(self) -> int:
        return len(self.client_indices)

    @property
    def sizes(self):
        return [len(ix) for ix in self.client_indices]

    @property
    def weights(self):
        return np.array([float(w) for w in self.weights_exact])


# ---------------------------------------------------------------------------
# model specs
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class LinearRegression:
    """y ~ x . w, squared-error loss, no bias; n = d."""
    d: int

    @property
    def n(self) -> int:
        return self.d

    @property
    def layer_shapes(self):
        return ((1, self.d, False),)


@dataclass(frozen=True)
class LogisticRegression:
    """Softmax regression with bias; n = classes * d + classes."""
    d: int
    classes: int = 2

    @property
    def n(self) -> int:
        return self.classes * self.d + self.classes

    @property
    def layer_shapes(self):
        return ((self.classes, self.d, True),)


@dataclass(frozen=True)
class Mlp:
    """ReLU hidden layers, softmax output. layers = (in, hidden..., out)."""
    layers: tuple

    def __post_init__(self):
        if len(self.layers) < 2:
            raise InvalidArgs("an MLP needs at least input and output sizes")

    @property
    def n(self) -> int:
        return sum(o * i + o for i, o in zip(self.layers[:-1], self.layers[1:]))

    @property
    def layer_shapes(self):
        return tuple(
            (o, i, True) for i, o in zip(self.layers[:-1], self.layers[1:])
        )


ModelSpec = LinearRegression | LogisticRegression | Mlp


def flatten_params(spec: ModelSpec, layers) -> np.ndarray:
    """Pack [(W, b), ...] into the flat layout; lossless with unflatten."""
    parts = []
    shapes = spec.layer_shapes
    if len(layers) != len(shapes):
        raise ShapeMismatch(f"expected {len(shapes)} layers, got {len(layers)}")
    for (out, inp, has_bias), (W, b) in zip(shapes, layers):
        W = np.asarray(W, dtype=np.float64)
        if W.shape != (out, inp):
            raise ShapeMismatch(f"weight shape {W.shape} != ({out}, {inp})")
        parts.append(W.ravel())
        if has_bias:
            b = np.asarray(b, dtype=np.float64)
            if b.shape != (out,):
                raise ShapeMismatch(f"bias shape {b.shape} != ({out},)")
            parts.append(b)
        elif b is not None:
            raise ShapeMismatch("layer has no bias but one was given")
    return np.concatenate(parts)


def unflatten_params(spec: ModelSpec, w) -> list:
    """Unpack a flat vector into [(W, b), ...]; b is None for bias-free layers."""
    w = np.asarray(w, dtype=np.float64)
    if w.shape != (spec.n,):
        raise ShapeMismatch(f"parameter vector must have shape ({spec.n},), got {w.shape}")
    layers = []
    off = 0
    for out, inp, has_bias in spec.layer_shapes:
        W = w[off : off + out * inp].reshape(out, inp)
        off += out * inp
        b = None
        if has_bias:
            b = w[off : off + out]
            off += out
        layers.append((W, b))
    return layers


def _softmax_ce(logits, labels):
    """Mean cross-entropy and dLoss/dLogits for integer labels."""
    m = logits.shape[0]
    shifted = logits - logits.max(axis=1, keepdims=True)
    logsumexp = np.log(np.sum(np.exp(shifted), axis=1))
    loss = float(np.mean(logsumexp - shifted[np.arange(m), labels]))
    probs = np.exp(shifted)
    probs /= probs.sum(axis=1, keepdims=True)
    probs[np.arange(m), labels] -= 1.0
    return loss, probs / m


def loss_and_grad(spec: ModelSpec, w, features, labels):
    """Mean loss and its analytic gradient on a batch.

    Squared error for linear regression, softmax cross-entropy otherwise.
    """
    X = np.asarray(features, dtype=np.float64)
    if X.ndim != 2:
        raise DimensionError(f"batch features must be 2-D, got shape {X.shape}")
    if X.shape[0] == 0:
        raise EmptyBatch("empty minibatch")
    w = np.asarray(w, dtype=np.float64)
    if w.shape != (spec.n,):
        raise DimensionError(f"w must have shape ({spec.n},), got {w.shape}")

    if isinstance(spec, LinearRegression):
        y = np.asarray(labels, dtype=np.float64)
        resid = X @ w - y
        loss = float(0.5 * np.mean(resid**2))
        grad = X.T @ resid / X.shape[0]
        return loss, grad

    y = np.asarray(labels)
    if isinstance(spec, LogisticRegression):
        (W, b), = unflatten_params(spec, w)
        logits = X @ W.T + b
        loss, dlogits = _softmax_ce(logits, y)
        return loss, np.concatenate([(dlogits.T @ X).ravel(), dlogits.sum(axis=0)])

    # MLP forward
    layers = unflatten_params(spec, w)
    acts = [X]
    pre = []
    for i, (W, b) in enumerate(layers):
        z = acts[-1] @ W.T + b
        pre.append(z)
        acts.append(np.maximum(z, 0.0) if i < len(layers) - 1 else z)
    loss, delta = _softmax_ce(acts[-1], y)
    # backward
    grads = [None] * len(layers)
    for i in range(len(layers) - 1, -1, -1):
        grads[i] = (delta.T @ acts[i], delta.sum(axis=0))
        if i > 0:
            delta = (delta @ layers[i][0]) * (pre[i - 1] > 0)
    return loss, np.concatenate([np.concatenate([gW.ravel(), gb]) for gW, gb in grads])


def predict_logits(spec: ModelSpec, w, features):
    if isinstance(spec, LinearRegression):
        raise InvalidArgs("linear regression has no class logits")
    X = np.asarray(features, dtype=np.float64)
    layers = unflatten_params(spec, np.asarray(w, dtype=np.float64))
    a = X
    for i, (W, b) in enumerate(layers):
        a = a @ W.T + b
        if i < len(layers) - 1:
            a = np.maximum(a, 0.0)
    return a


def accuracy(spec: ModelSpec, w, dataset: Dataset) -> float:
    """Fraction of argmax-correct predictions; classification specs only."""
    logits = predict_logits(spec, w, dataset.features)
    if int(np.max(dataset.labels)) >= logits.shape[1]:
        raise DimensionError("label ids exceed the model's class count")
    return float(np.mean(np.argmax(logits, axis=1) == dataset.labels))


# ---------------------------------------------------------------------------
# data ingestion and partitioning
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class CsvSchema:
    """CSV layout: optional header row, configurable label column."""
    has_header: bool = False
    label_col: int = 0
    integer_labels: bool = True


def load_csv(path, schema: CsvSchema = CsvSchema()) -> Dataset:
    """Parse a CSV of f64 values into a Dataset.

    Raises ParseError with the 1-based line number on malformed rows.
    """
    rows = []
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            if schema.has_header and lineno == 1:
                continue
            cells = line.split(",")
            try:
                rows.append([float(c) for c in cells])
            except ValueError as exc:
                raise ParseError(str(exc), line=lineno) from None
            if len(rows) > 1 and len(rows[-1]) != len(rows[0]):
                raise ParseError(
                    f"row has {len(rows[-1])} columns, expected {len(rows[0])}",
                    line=lineno,
                )
    if not rows:
        raise ParseError("no data rows", line=1)
    data = np.array(rows, dtype=np.float64)
    lc = schema.label_col if schema.label_col >= 0 else data.shape[1] + schema.label_col
    if not 0 <= lc < data.shape[1]:
        raise ParseError(f"label column {schema.label_col} out of range", line=1)
    labels = data[:, lc]
    features = np.delete(data, lc, axis=1)
    if schema.integer_labels:
        labels = labels.astype(np.int64)
    return Dataset(features, labels)


def save_csv(dataset: Dataset, path, label_col: int = 0) -> None:
    """Write a Dataset back to CSV with 17 significant digits (bit-exact)."""
    with open(path, "w", encoding="utf-8") as fh:
        for x, y in zip(dataset.features, dataset.labels):
            cells = [format(v, ".17g") for v in x]
            label = format(float(y), ".17g") if not np.issubdtype(dataset.labels.dtype, np.integer) else str(int(y))
            cells.insert(label_col if label_col >= 0 else len(cells) + 1 + label_col, label)
            fh.write(",".join(cells) + "\n")


def partition_iid(dataset: Dataset, n_clients: int, seed: int) -> Partition:
    """Shuffle-then-split into near-equal disjoint client slices.

    The first m mod N_c clients get one extra sample. Weights are computed
    as exact rationals, which sum to exactly 1 before any float conversion.
    """
    m = dataset.m
    if n_clients < 1:
        raise InvalidArgs("need at least one client")
    if n_clients > m:
        raise TooManyClients(f"{n_clients} clients for {m} samples")
    order = np.random.default_rng(seed).permutation(m)
    base, extra = divmod(m, n_clients)
    sizes = [base + (1 if i < extra else 0) for i in range(n_clients)]
    indices = []
    off = 0
    for s in sizes:
        idx = np.sort(order[off : off + s])
        idx.flags.writeable = False
        indices.append(idx)
        off += s
    weights = tuple(Fraction(s, m) for s in sizes)
    assert sum(weights) == 1
    return Partition(client_indices=tuple(indices), weights_exact=weights)


def synth_dataset(kind: str, m: int, d: int, seed: int, classes: int = 2,
                  noise: float = 0.5) -> Dataset:
    """Deterministic synthetic data.

    ``blobs``: one Gaussian cluster per class around well-separated centres
    (classification). ``linear``: y = x . w* + noise (regression).
    """
    if m < 1 or d < 1:
        raise InvalidArgs("m and d must be positive")
    rng = np.random.default_rng(seed)
    if kind == "blobs":
        if classes < 2:
            raise InvalidArgs("blobs need >= 2 classes")
        centers = rng.uniform(-3.0, 3.0, size=(classes, d))
        labels = rng.integers(0, classes, size=m)
        features = centers[labels] + noise * rng.standard_normal((m, d))
        return Dataset(features, labels)
    if kind == "linear":
        w_true = rng.standard_normal(d)
        features = rng.standard_normal((m, d))
        labels = features @ w_true + noise * rng.standard_normal(m)
        return Dataset(features, labels.astype(np.float64))
    raise InvalidArgs(f"unknown synthetic dataset kind {kind!r}")
