"""Affine immersion coding of model parameter vectors.

The server lifts an n-dimensional parameter vector into n_tilde > n dimensions
with a secret full-column-rank matrix ``pi1`` plus kernel noise::

    encoded = pi1 @ w + n1 @ r1

``pi1_left`` is the Moore-Penrose left inverse (``pi1_left @ pi1 = I``) and the
columns of ``n1`` are an orthonormal basis of ``ker(pi1_left)``, so decoding
annihilates the noise term exactly. A second, aggregator-owned coding widens a
vector to an (n_tilde, p) matrix from the right::

    widened = outer(v, pi2) + r2 @ n2

with ``pi2 @ pi2_right = 1`` and ``n2 @ pi2_right = 0``.

Two key representations exist behind one interface:

* dense (default for n <= DENSE_LIMIT): explicit ``pi1``/``pi1_left``/``n1``
  arrays, used by everything that needs the matrices themselves;
* structured (large n): a column permutation, a row permutation, and per-block
  data where each block is a diagonal plus one dense row. Generation, encode
  and decode cost O(n_tilde) instead of O(n_tilde * n), which is what makes
  six-figure parameter counts workable.

Encoded vectors/matrices are plain float64 ndarrays; every operation checks
shapes and raises :class:`~sifl.errors.DimensionError` on mismatch. Keys are
immutable after generation (their arrays are marked read-only) and safe to
share across threads.
"""

from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import null_space

from .errors import DimensionError, GenerationFailure, InvalidArgs

# Tolerances for the algebraic identities on dense float64 keys, and for
# round trips that pass through training arithmetic. Tests reuse these.
TOL_ALGEBRA = 1e-10
TOL_AGG = 1e-12
TOL_ROUNDTRIP = 1e-9

# Largest n for which keys are materialised as dense matrices.
DENSE_LIMIT = 2048

_RETRY_BUDGET = 16
# Reject kernel-row norms below this during generation; the DP conditions
# divide by them.
_ROW_NORM_FLOOR = 1e-9


@dataclass(frozen=True)
class KeyGenConfig:
    """Parameters for key generation.

    ``n`` is the model dimension, ``n_tilde`` the lifted dimension, ``p`` the
    width of the aggregator coding. ``scale`` sets the row 1-norms of ``pi1``
    and the element magnitude of ``pi2`` (the DP conditions shrink with it).
    """

    n: int
    n_tilde: int
    p: int = 2
    scale: float = 1.0
    max_condition: float = 1e4
    seed: int = 0

    def __post_init__(self):
        if self.n < 1:
            raise DimensionError(f"n must be >= 1, got {self.n}")
        if self.n_tilde <= self.n:
            raise DimensionError(
                f"n_tilde must exceed n, got n_tilde={self.n_tilde}, n={self.n}"
            )
        if self.p < 2:
            raise DimensionError(f"p must be >= 2, got {self.p}")
        if self.scale <= 0:
            raise InvalidArgs("scale must be positive")
        if self.max_condition < 1.0:
            raise InvalidArgs("max_condition must be >= 1")


def _freeze(*arrays):
    for a in arrays:
        a.flags.writeable = False


def _as_f64(x, name):
    a = np.asarray(x, dtype=np.float64)
    if not np.all(np.isfinite(a)):
        raise InvalidArgs(f"{name} contains non-finite values")
    return a


class ClientCodingView:
    """The key material a client holds: pi1 and pi1_left, nothing else.

    Exposes exactly the operations the target optimizer needs. The kernel
    basis and noise draws stay with the server.
    """

    def __init__(self, keys):
        self._keys = keys
        self.n = keys.n
        self.n_tilde = keys.n_tilde

    def apply_pi1(self, x):
        return self._keys.apply_pi1(x)

    def apply_pi1_left(self, x):
        return self._keys.apply_pi1_left(x)


@dataclass(frozen=True)
class DenseServerKeys:
    """Explicit immersion matrices; the server's secret."""

    pi1: np.ndarray        # (n_tilde, n)
    pi1_left: np.ndarray   # (n, n_tilde)
    n1: np.ndarray         # (n_tilde, n_tilde - n), orthonormal columns

    @property
    def n(self) -> int:
        return self.pi1.shape[1]

    @property
    def n_tilde(self) -> int:
        return self.pi1.shape[0]

    @property
    def kernel_dim(self) -> int:
        return self.n_tilde - self.n

    def apply_pi1(self, x):
        x = _check_first_dim(x, self.n, "pi1 input")
        return self.pi1 @ x

    def apply_pi1_left(self, x):
        """pi1_left @ x, computed noise-robustly.

        The kernel component is projected out first and everything runs in
        extended precision, so the result stays within ~1e-12 of the exact
        decode even when the kernel noise dwarfs the signal by six orders of
        magnitude. Mathematically identical to a plain multiply because
        pi1_left annihilates span(n1).
        """
        x = _check_first_dim(x, self.n_tilde, "pi1_left input")
        n1, left = self._ld_cache()
        xl = x.astype(np.longdouble)
        xl = xl - n1 @ (n1.T @ xl)
        return np.asarray(left @ xl, dtype=np.float64)

    def _ld_cache(self):
        cached = self.__dict__.get("_ld")
        if cached is None:
            cached = (self.n1.astype(np.longdouble),
                      self.pi1_left.astype(np.longdouble))
            object.__setattr__(self, "_ld", cached)
        return cached

    def apply_n1(self, r):
        r = _check_first_dim(r, self.kernel_dim, "n1 input")
        return self.n1 @ r

    def n1_row_norms(self):
        return np.linalg.norm(self.n1, axis=1)

    def client_view(self) -> ClientCodingView:
        return ClientCodingView(self)


@dataclass(frozen=True)
class StructuredServerKeys:
    """O(n_tilde) immersion keys for large models.

    ``pi1 = P_row @ blockdiag(B_1..B_k) @ P_col`` where each block is
    ``[diag(d); v^T]`` (one extra row per block, k = n_tilde - n). The
    Moore-Penrose left inverse is applied per block with Sherman-Morrison,
    and the block kernel vector ``[-v/d; 1] / z`` gives an orthonormal
    kernel basis with disjoint column supports.
    """

    diag: np.ndarray        # (n,) block diagonals, concatenated
    spike: np.ndarray       # (n,) block dense rows, concatenated
    starts: np.ndarray      # (k,) block start offsets into diag/spike
    sizes: np.ndarray       # (k,) block column counts
    col_perm: np.ndarray    # (n,)  permuted-column j reads w[col_perm[j]]
    row_perm: np.ndarray    # (n_tilde,) block-coord row j lands at row_perm[j]
    # cached per-block quantities
    u: np.ndarray = field(repr=False)        # spike / diag**2
    denom: np.ndarray = field(repr=False)    # (k,) 1 + spike . u
    kern_z: np.ndarray = field(repr=False)   # (k,) kernel normalisers
    sigma_min: float = 0.0
    sigma_max: float = 0.0

    @property
    def n(self) -> int:
        return self.diag.shape[0]

    @property
    def n_tilde(self) -> int:
        return self.row_perm.shape[0]

    @property
    def kernel_dim(self) -> int:
        return self.sizes.shape[0]

    def _expand(self, per_block):
        return np.repeat(per_block, self.sizes, axis=0)

    def _block_sums(self, values):
        return np.add.reduceat(values, self.starts, axis=0)

    def apply_pi1(self, x):
        x = _check_first_dim(x, self.n, "pi1 input")
        xp = x[self.col_perm]
        tops = (self.diag.T * xp.T).T if xp.ndim > 1 else self.diag * xp
        spikes = self._block_sums((self.spike.T * xp.T).T if xp.ndim > 1 else self.spike * xp)
        out = np.empty((self.n_tilde,) + x.shape[1:], dtype=np.float64)
        out[self.row_perm] = np.concatenate([tops, spikes], axis=0)
        return out

    def apply_pi1_left(self, x):
        """Blockwise Moore-Penrose decode via Sherman-Morrison.

        Runs in extended precision: the block kernel directions are implicit
        in (diag, spike), so the exact cancellation of kernel noise survives
        to ~1e-13 relative even under very large noise.
        """
        x = _check_first_dim(x, self.n_tilde, "pi1_left input")
        diag, spike, u, denom = self._ld_cache()
        z = x[self.row_perm].astype(np.longdouble)
        tops, spikes = z[: self.n], z[self.n :]
        # rhs = D^T y_top + v y_spike, then (D^2 + v v^T)^{-1} rhs blockwise.
        sp = self._expand(spikes)
        if x.ndim > 1:
            rhs = diag[:, None] * tops + spike[:, None] * sp
            corr = self._expand(self._block_sums(u[:, None] * rhs) / denom[:, None])
            sol = rhs / (diag**2)[:, None] - u[:, None] * corr
        else:
            rhs = diag * tops + spike * sp
            corr = self._expand(self._block_sums(u * rhs) / denom)
            sol = rhs / diag**2 - u * corr
        out = np.empty(sol.shape, dtype=np.float64)
        out[self.col_perm] = np.asarray(sol, dtype=np.float64)
        return out

    def _ld_cache(self):
        cached = self.__dict__.get("_ld")
        if cached is None:
            diag = self.diag.astype(np.longdouble)
            spike = self.spike.astype(np.longdouble)
            u = spike / diag**2
            denom = 1.0 + np.add.reduceat(spike * u, self.starts)
            cached = (diag, spike, u, denom)
            object.__setattr__(self, "_ld", cached)
        return cached

    def apply_n1(self, r):
        r = _check_first_dim(r, self.kernel_dim, "n1 input")
        ktop = -(self.spike / self.diag) / self._expand(self.kern_z)
        rk = self._expand(np.atleast_1d(r)) if r.ndim == 1 else r[np.repeat(np.arange(self.kernel_dim), self.sizes)]
        if r.ndim > 1:
            tops = ktop[:, None] * rk
            spikes = r / self.kern_z[:, None]
        else:
            tops = ktop * rk
            spikes = r / self.kern_z
        out = np.empty((self.n_tilde,) + r.shape[1:], dtype=np.float64)
        out[self.row_perm] = np.concatenate([tops, spikes], axis=0)
        return out

    def n1_row_norms(self):
        # Disjoint supports: each row of n1 has exactly one nonzero entry.
        tops = np.abs(self.spike / self.diag) / self._expand(self.kern_z)
        norms = np.empty(self.n_tilde)
        norms[self.row_perm] = np.concatenate([tops, 1.0 / self.kern_z])
        return norms

    def pi1_row_l1(self):
        tops = np.abs(self.diag)
        spikes = self._block_sums(np.abs(self.spike))
        out = np.empty(self.n_tilde)
        out[self.row_perm] = np.concatenate([tops, spikes])
        return out

    def pi1_row_l2(self):
        tops = np.abs(self.diag)
        spikes = np.sqrt(self._block_sums(self.spike**2))
        out = np.empty(self.n_tilde)
        out[self.row_perm] = np.concatenate([tops, spikes])
        return out

    def client_view(self) -> ClientCodingView:
        return ClientCodingView(self)


ServerKeys = DenseServerKeys | StructuredServerKeys


@dataclass(frozen=True)
class AggregatorKeys:
    """Row-vector widening keys; the aggregator's secret (pi2_right is shared
    with clients during handshaking)."""

    pi2: np.ndarray        # (p,)
    pi2_right: np.ndarray  # (p,)
    n2: np.ndarray         # (p - 1, p), orthonormal rows

    @property
    def p(self) -> int:
        return self.pi2.shape[0]


def _check_first_dim(x, expected, what):
    x = np.asarray(x, dtype=np.float64)
    if x.ndim not in (1, 2) or x.shape[0] != expected:
        raise DimensionError(f"{what}: expected leading dimension {expected}, got shape {x.shape}")
    return x


# ---------------------------------------------------------------------------
# generation
# ---------------------------------------------------------------------------

def gen_server_keys(cfg: KeyGenConfig, representation: str = "auto") -> ServerKeys:
    """Generate server immersion keys from ``cfg.seed``.

    ``representation`` is ``"dense"``, ``"structured"`` or ``"auto"`` (dense
    up to DENSE_LIMIT columns). Retries up to the budget until the condition
    number is within ``cfg.max_condition`` and the kernel basis has no
    (near-)zero rows, then fails loudly.
    """
    if representation not in ("auto", "dense", "structured"):
        raise InvalidArgs(f"unknown representation {representation!r}")
    if representation == "auto":
        representation = "dense" if cfg.n <= DENSE_LIMIT else "structured"
    if representation == "dense":
        return _gen_dense_server_keys(cfg)
    return _gen_structured_server_keys(cfg)


def _gen_dense_server_keys(cfg: KeyGenConfig) -> DenseServerKeys:
    rng = np.random.default_rng(cfg.seed)
    n, nt = cfg.n, cfg.n_tilde
    for _ in range(_RETRY_BUDGET):
        # Orthonormalise the random draw before row rescaling: conditioning
        # then depends only on the spread of row norms, so decode stays
        # accurate even when the kernel noise is huge.
        base = rng.standard_normal((nt, n))
        q = np.linalg.qr(base)[0]
        row_l1 = np.sum(np.abs(q), axis=1, keepdims=True)
        if np.min(row_l1) < 1e-6:
            continue
        pi1 = q * (cfg.scale / row_l1)
        sv = np.linalg.svd(pi1, compute_uv=False)
        if sv[-1] <= 0 or sv[0] / sv[-1] > cfg.max_condition:
            continue
        pi1_left = np.linalg.solve(pi1.T @ pi1, pi1.T)
        n1 = null_space(pi1.T)
        if n1.shape != (nt, nt - n):
            continue
        if np.min(np.linalg.norm(n1, axis=1)) < _ROW_NORM_FLOOR:
            continue
        _freeze(pi1, pi1_left, n1)
        return DenseServerKeys(pi1=pi1, pi1_left=pi1_left, n1=n1)
    raise GenerationFailure(
        f"no acceptable dense keys for n={n}, n_tilde={nt} within {_RETRY_BUDGET} attempts"
    )


def _gen_structured_server_keys(cfg: KeyGenConfig) -> StructuredServerKeys:
    n, nt = cfg.n, cfg.n_tilde
    k = nt - n
    if k > n:
        raise GenerationFailure(
            f"structured keys need n_tilde - n <= n (got {k} > {n}); use dense keys"
        )
    rng = np.random.default_rng(cfg.seed)
    sizes = np.full(k, n // k, dtype=np.int64)
    sizes[: n % k] += 1
    starts = np.concatenate([[0], np.cumsum(sizes)[:-1]])

    for _ in range(_RETRY_BUDGET):
        diag = cfg.scale * rng.uniform(0.75, 1.25, n) * rng.choice([-1.0, 1.0], n)
        spike = rng.standard_normal(n)
        # Keep kernel rows bounded away from zero: the DP conditions divide
        # by per-row kernel norms, which are proportional to |spike|.
        spike = np.where(np.abs(spike) < 0.05, np.copysign(0.05, spike), spike)
        l1 = np.add.reduceat(np.abs(spike), starts)
        spike = spike * np.repeat(cfg.scale / l1, sizes)

        u = spike / diag**2
        denom = 1.0 + np.add.reduceat(spike * u, starts)
        ratio = spike / diag
        kern_z = np.sqrt(1.0 + np.add.reduceat(ratio**2, starts))

        smin, smax = _structured_extremal_singvals(diag, spike, starts, sizes)
        if smin <= 0 or smax / smin > cfg.max_condition:
            continue

        col_perm = rng.permutation(n)
        row_perm = rng.permutation(nt)
        _freeze(diag, spike, starts, sizes, col_perm, row_perm, u, denom, kern_z)
        return StructuredServerKeys(
            diag=diag, spike=spike, starts=starts, sizes=sizes,
            col_perm=col_perm, row_perm=row_perm,
            u=u, denom=denom, kern_z=kern_z,
            sigma_min=smin, sigma_max=smax,
        )
    raise GenerationFailure(
        f"no acceptable structured keys for n={n}, n_tilde={nt} within {_RETRY_BUDGET} attempts"
    )


def _bisect_increasing(f, a, b, iters=110):
    """Root of an increasing f on [a, b] with f(a) <= 0 <= f(b)."""
    for _ in range(iters):
        mid = 0.5 * (a + b)
        if mid <= a or mid >= b:
            break
        if f(mid) < 0.0:
            a = mid
        else:
            b = mid
    return 0.5 * (a + b)


def _structured_extremal_singvals(diag, spike, starts, sizes):
    """Exact extreme singular values of blockdiag([diag(d); v^T]) blocks.

    Per block the squared singular values are the eigenvalues of
    D^2 + v v^T: the roots of the secular function
    f(lam) = 1 + sum_j v_j^2 / (d_j^2 - lam), which is increasing between
    consecutive poles. The smallest eigenvalue lies between the two smallest
    d_j^2; the largest lies in [top + v_top^2, top + |v|^2] with top the
    largest d_j^2 and v_top its matching spike entry.
    """
    lo = np.inf
    hi = 0.0
    for s, m in zip(starts, sizes):
        d2 = diag[s : s + m] ** 2
        v2 = spike[s : s + m] ** 2
        order = np.argsort(d2)
        d2s = d2[order]
        v2sum = float(np.sum(v2))

        def secular(lam, _d2=d2, _v2=v2):
            return 1.0 + float(np.sum(_v2 / (_d2 - lam)))

        if m == 1:
            lam_min = lam_max = d2s[0] + v2sum
        else:
            # smallest eigenvalue in (d2s[0], d2s[1]); f rises from -inf to +inf
            a, b = float(d2s[0]), float(d2s[1])
            step = (b - a) * 1e-6
            aa = a + step
            tries = 0
            while secular(aa) > 0.0 and tries < 80:
                step /= 16.0
                aa = a + step
                tries += 1
            bb = b - (b - a) * 1e-6
            while secular(bb) < 0.0 and bb < b:
                bb = b - (b - bb) / 16.0
            lam_min = _bisect_increasing(secular, aa, bb) if secular(aa) <= 0.0 else a

            top = float(d2s[-1])
            v_top2 = float(v2[order[-1]])
            aa = top + v_top2          # f <= 0 here
            bb = top + v2sum           # f >= 0 here
            while secular(bb) < 0.0:
                bb = top + 2.0 * (bb - top)
            if secular(aa) > 0.0:
                lam_max = aa
            else:
                lam_max = _bisect_increasing(secular, aa, bb)
        lo = min(lo, lam_min)
        hi = max(hi, lam_max)
    return float(np.sqrt(lo)), float(np.sqrt(hi))


def gen_aggregator_keys(cfg: KeyGenConfig) -> AggregatorKeys:
    """Generate the aggregator's widening keys from ``cfg.seed``."""
    p = cfg.p
    if p < 2:
        raise DimensionError(f"p must be >= 2, got {p}")
    rng = np.random.default_rng(cfg.seed + 1)
    for _ in range(_RETRY_BUDGET):
        pi2 = rng.standard_normal(p)
        pi2 *= cfg.scale / np.max(np.abs(pi2))
        pi2_right = pi2 / np.dot(pi2, pi2)
        n2 = null_space(pi2_right[None, :]).T
        if n2.shape != (p - 1, p):
            continue
        if np.min(np.linalg.norm(n2, axis=0)) < _ROW_NORM_FLOOR:
            continue
        _freeze(pi2, pi2_right, n2)
        return AggregatorKeys(pi2=pi2, pi2_right=pi2_right, n2=n2)
    raise GenerationFailure(f"no acceptable aggregator keys for p={p}")


# ---------------------------------------------------------------------------
# coding operations
# ---------------------------------------------------------------------------

def encode_model(keys: ServerKeys, w, r1) -> np.ndarray:
    """pi1 @ w + n1 @ r1 for a model vector w and noise vector r1."""
    w = _as_f64(w, "w")
    r1 = _as_f64(r1, "r1")
    if w.shape != (keys.n,):
        raise DimensionError(f"w must have shape ({keys.n},), got {w.shape}")
    if r1.shape != (keys.kernel_dim,):
        raise DimensionError(f"r1 must have shape ({keys.kernel_dim},), got {r1.shape}")
    return keys.apply_pi1(w) + keys.apply_n1(r1)


def encode_model_matrix(keys: ServerKeys, W, R1) -> np.ndarray:
    """Column-wise immersion of an (n, p) matrix: pi1 @ W + n1 @ R1."""
    W = _as_f64(W, "W")
    R1 = _as_f64(R1, "R1")
    if W.ndim != 2 or W.shape[0] != keys.n:
        raise DimensionError(f"W must have shape ({keys.n}, p), got {W.shape}")
    if R1.shape != (keys.kernel_dim, W.shape[1]):
        raise DimensionError(
            f"R1 must have shape ({keys.kernel_dim}, {W.shape[1]}), got {R1.shape}"
        )
    return keys.apply_pi1(W) + keys.apply_n1(R1)


def decode_model(keys: ServerKeys, x) -> np.ndarray:
    """pi1_left @ x; exact up to rounding for any x = pi1 w + n1 r."""
    x = _as_f64(x, "encoded input")
    if x.shape[0] != keys.n_tilde or x.ndim not in (1, 2):
        raise DimensionError(
            f"encoded input must have leading dimension {keys.n_tilde}, got {x.shape}"
        )
    return keys.apply_pi1_left(x)


def encode_aggregate(keys: AggregatorKeys, w_tilde, R2) -> np.ndarray:
    """Widen a vector from the right: outer(w_tilde, pi2) + R2 @ n2."""
    w_tilde = _as_f64(w_tilde, "w_tilde")
    R2 = _as_f64(R2, "R2")
    if w_tilde.ndim != 1:
        raise DimensionError(f"w_tilde must be a vector, got shape {w_tilde.shape}")
    if R2.shape != (w_tilde.shape[0], keys.p - 1):
        raise DimensionError(
            f"R2 must have shape ({w_tilde.shape[0]}, {keys.p - 1}), got {R2.shape}"
        )
    return np.outer(w_tilde, keys.pi2) + R2 @ keys.n2


def decode_aggregate(keys: AggregatorKeys, w_prime) -> np.ndarray:
    """Collapse a widened matrix: w_prime @ pi2_right."""
    w_prime = _as_f64(w_prime, "w_prime")
    if w_prime.ndim != 2 or w_prime.shape[1] != keys.p:
        raise DimensionError(
            f"widened input must have shape (*, {keys.p}), got {w_prime.shape}"
        )
    return w_prime @ keys.pi2_right


# ---------------------------------------------------------------------------
# validation
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class CheckResult:
    name: str
    residual: float
    tol: float

    @property
    def passed(self) -> bool:
        return self.residual <= self.tol


@dataclass(frozen=True)
class ValidationReport:
    checks: tuple

    @property
    def passed(self) -> bool:
        return all(c.passed for c in self.checks)

    def failures(self):
        return [c for c in self.checks if not c.passed]

    def lines(self):
        out = []
        for c in self.checks:
            status = "ok" if c.passed else "FAIL"
            out.append(f"{status:4s} {c.name}: residual={c.residual:.3e} tol={c.tol:.1e}")
        out.append("overall: " + ("pass" if self.passed else "fail"))
        return out


def validate_keys(server: ServerKeys, agg: AggregatorKeys | None = None) -> ValidationReport:
    """Measure every key invariant and report residuals.

    Dense keys are checked against the explicit matrices. Structured keys are
    checked by probing with random vectors (their identities hold by
    construction; probing measures the float residual actually seen by users).
    """
    checks = []
    if isinstance(server, DenseServerKeys):
        n, nt = server.n, server.n_tilde
        eye_res = np.linalg.norm(server.pi1_left @ server.pi1 - np.eye(n))
        checks.append(CheckResult("pi1_left @ pi1 = I", float(eye_res), TOL_ALGEBRA))
        ker_res = np.linalg.norm(server.pi1_left @ server.n1)
        checks.append(CheckResult("pi1_left @ n1 = 0", float(ker_res), TOL_ALGEBRA))
        sv = np.linalg.svd(server.pi1, compute_uv=False)
        rank = int(np.sum(sv > sv[0] * max(nt, n) * np.finfo(float).eps))
        checks.append(CheckResult("rank(pi1) = n", float(n - rank), 0.0))
        row_min = float(np.min(server.n1_row_norms()))
        zero_rows = np.flatnonzero(server.n1_row_norms() < _ROW_NORM_FLOOR)
        name = "n1 has no zero rows"
        if zero_rows.size:
            name += f" (zero kernel row {zero_rows[0]})"
        checks.append(CheckResult(name, 0.0 if row_min >= _ROW_NORM_FLOOR else 1.0, 0.0))
    else:
        rng = np.random.default_rng(0)
        probe = rng.standard_normal((server.n, 3))
        res = np.max(np.abs(server.apply_pi1_left(server.apply_pi1(probe)) - probe))
        checks.append(CheckResult("pi1_left(pi1(w)) = w (probe)", float(res), TOL_ALGEBRA))
        rp = rng.standard_normal((server.kernel_dim, 3))
        res = np.max(np.abs(server.apply_pi1_left(server.apply_n1(rp))))
        checks.append(CheckResult("pi1_left(n1 r) = 0 (probe)", float(res), TOL_ALGEBRA))
        rank_ok = float(np.min(np.abs(server.diag)) <= 0.0)
        checks.append(CheckResult("rank(pi1) = n", rank_ok, 0.0))
        row_min = float(np.min(server.n1_row_norms()))
        checks.append(CheckResult(
            "n1 has no zero rows", 0.0 if row_min >= _ROW_NORM_FLOOR else 1.0, 0.0
        ))

    if agg is not None:
        res = abs(float(np.dot(agg.pi2, agg.pi2_right)) - 1.0)
        checks.append(CheckResult("pi2 @ pi2_right = 1", res, TOL_AGG))
        res = float(np.linalg.norm(agg.n2 @ agg.pi2_right))
        checks.append(CheckResult("n2 @ pi2_right = 0", res, TOL_AGG))
        col_min = float(np.min(np.linalg.norm(agg.n2, axis=0)))
        zero_cols = np.flatnonzero(np.linalg.norm(agg.n2, axis=0) < _ROW_NORM_FLOOR)
        name = "n2 has no zero columns"
        if zero_cols.size:
            name += f" (zero kernel column {zero_cols[0]})"
        checks.append(CheckResult(name, 0.0 if col_min >= _ROW_NORM_FLOOR else 1.0, 0.0))

    return ValidationReport(checks=tuple(checks))
