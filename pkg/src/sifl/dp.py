"""Differential-privacy calculus for the affine coding mechanisms.

Per round, every element of an encoded local model and of the widened global
matrix carries additive kernel noise. The privacy level of element j against
one-record changes of a client dataset is governed by the worst-case norms of
the key rows and kernel rows. This module computes those norms, evaluates the
closed-form conditions for Laplace and Gaussian noise, calibrates noise
scales, and draws the noise itself.

Conventions (they matter, both change calibration by constant factors):

* ``sigma`` is the Laplace *scale* parameter b (variance ``2 b^2``) for the
  Laplace mechanism, and the standard deviation for the Gaussian mechanism.
* Noise means are zero.
* Against one-record changes and L2 clipping at C, the local and global
  sensitivities are ``2 C / |D_i|`` and ``2 C / |D|``.

The epsilon bounds are evaluated at the NormProfile's worst-case aggregates
(max over rows of pi1, min over kernel rows/columns). For profiles computed
from concrete keys this is conservative whenever the extremes occur at
different rows; the per-row arrays kept on the profile allow exact per-row
diagnostics.
"""

import math
from dataclasses import dataclass, field

import numpy as np

from .coding import AggregatorKeys, DenseServerKeys, ServerKeys
from .errors import DomainError, InvalidArgs


# ---------------------------------------------------------------------------
# Q-function machinery
# ---------------------------------------------------------------------------

_SQRT2 = math.sqrt(2.0)


def q_function(x: float) -> float:
    """Standard normal upper-tail probability Q(x)."""
    return 0.5 * math.erfc(x / _SQRT2)


def q_inverse(p: float) -> float:
    """Functional inverse of Q on (0, 1).

    Bracketed bisection followed by Newton polish; round-trip error
    |Q(Q^-1(p)) - p| stays below 1e-12 * p for p >= 1e-12.
    """
    if not 0.0 < p < 1.0:
        raise DomainError(f"q_inverse needs 0 < p < 1, got {p}")
    if p == 0.5:
        return 0.0
    if p > 0.5:
        return -q_inverse(1.0 - p)
    lo, hi = 0.0, 1.0
    while q_function(hi) > p:
        hi *= 2.0
        if hi > 1e3:
            raise DomainError(f"q_inverse({p}) out of bracketing range")
    for _ in range(80):
        mid = 0.5 * (lo + hi)
        if q_function(mid) > p:
            lo = mid
        else:
            hi = mid
    x = 0.5 * (lo + hi)
    for _ in range(4):
        pdf = math.exp(-0.5 * x * x) / math.sqrt(2.0 * math.pi)
        if pdf == 0.0:
            break
        x += (q_function(x) - p) / pdf
    return x


# ---------------------------------------------------------------------------
# sensitivity and norm profiles
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Sensitivity:
    """One-record sensitivities of the local and global models."""

    local: float
    global_: float
    norm_order: int
    clip: float
    size_local: int
    size_global: int


def sensitivity(clip: float, size: int, order: int = 1) -> float:
    """2 C / size: worst-case model change from one record under clipping."""
    if clip <= 0:
        raise InvalidArgs("clipping threshold must be positive")
    if size < 1:
        raise InvalidArgs("dataset size must be >= 1")
    if order not in (1, 2):
        raise InvalidArgs("norm order must be 1 or 2")
    return 2.0 * clip / size


def make_sensitivity(clip: float, size_local: int, size_global: int,
                     order: int = 1) -> Sensitivity:
    return Sensitivity(
        local=sensitivity(clip, size_local, order),
        global_=sensitivity(clip, size_global, order),
        norm_order=order,
        clip=clip,
        size_local=size_local,
        size_global=size_global,
    )


@dataclass(frozen=True)
class NormProfile:
    """Worst-case key norms entering the privacy conditions.

    The scalar fields are the aggregates the conditions are evaluated at;
    the optional arrays hold the per-row values for diagnostics.
    """

    pi1_row_l1_max: float
    pi1_row_l2_max: float
    n1_row_l2_min: float
    pi1_left_l2: float
    pi2_right_l2: float
    pi2_elem_abs_max: float
    n2_l2: float
    n2_col_l2_min: float
    pi1_row_l1: np.ndarray | None = field(default=None, repr=False)
    pi1_row_l2: np.ndarray | None = field(default=None, repr=False)
    n1_row_l2: np.ndarray | None = field(default=None, repr=False)
    n2_col_l2: np.ndarray | None = field(default=None, repr=False)

    def __post_init__(self):
        for name in ("pi1_row_l1_max", "pi1_row_l2_max", "n1_row_l2_min",
                     "pi1_left_l2", "pi2_right_l2", "pi2_elem_abs_max",
                     "n2_l2", "n2_col_l2_min"):
            if getattr(self, name) <= 0:
                raise InvalidArgs(f"{name} must be positive")


def norm_profile(server: ServerKeys, agg: AggregatorKeys) -> NormProfile:
    """Exact norms computed from the key material."""
    if isinstance(server, DenseServerKeys):
        row_l1 = np.sum(np.abs(server.pi1), axis=1)
        row_l2 = np.linalg.norm(server.pi1, axis=1)
        n1_rows = server.n1_row_norms()
        pi1_left_l2 = float(np.linalg.svd(server.pi1_left, compute_uv=False)[0])
    else:
        row_l1 = server.pi1_row_l1()
        row_l2 = server.pi1_row_l2()
        n1_rows = server.n1_row_norms()
        pi1_left_l2 = 1.0 / server.sigma_min
    n2_cols = np.linalg.norm(agg.n2, axis=0)
    return NormProfile(
        pi1_row_l1_max=float(np.max(row_l1)),
        pi1_row_l2_max=float(np.max(row_l2)),
        n1_row_l2_min=float(np.min(n1_rows)),
        pi1_left_l2=pi1_left_l2,
        pi2_right_l2=float(np.linalg.norm(agg.pi2_right)),
        pi2_elem_abs_max=float(np.max(np.abs(agg.pi2))),
        n2_l2=float(np.linalg.svd(agg.n2, compute_uv=False)[0]),
        n2_col_l2_min=float(np.min(n2_cols)),
        pi1_row_l1=row_l1,
        pi1_row_l2=row_l2,
        n1_row_l2=n1_rows,
        n2_col_l2=n2_cols,
    )


# ---------------------------------------------------------------------------
# Laplace and Gaussian conditions
# ---------------------------------------------------------------------------

def laplace_eps(profile: NormProfile, sens: Sensitivity,
                sigma1: float, sigma2: float) -> tuple[float, float]:
    """Pure-DP levels (eps_local, eps_global) under Laplace noise.

    eps_local bounds each element of an encoded local model, eps_global each
    element of the widened global matrix; the guarantees are (eps, 0)-DP.
    Both shrink linearly as the noise scales grow.
    """
    if sigma1 <= 0 or sigma2 <= 0:
        raise InvalidArgs("noise scales must be positive")
    eps_local = (profile.pi1_row_l1_max * sens.local
                 / (profile.n1_row_l2_min * sigma1 * profile.pi2_right_l2))
    denom = (profile.n1_row_l2_min * sigma1
             + profile.pi1_row_l2_max * profile.pi1_left_l2 * profile.n2_l2 * sigma2)
    eps_global = (profile.pi1_row_l1_max * sens.global_
                  * profile.pi2_elem_abs_max / denom)
    return eps_local, eps_global


@dataclass(frozen=True)
class GaussianCheck:
    """Both quadratic conditions evaluated at the worst-case norms.

    ``lhs >= 0`` means the requested (eps, delta) level is met. The scales
    are the squared effective deviations, for judging boundary closeness.
    """

    local_ok: bool
    global_ok: bool
    local_lhs: float
    global_lhs: float
    local_scale: float
    global_scale: float

    @property
    def passed(self) -> bool:
        return self.local_ok and self.global_ok


def _check_eps_delta(eps: float, delta: float) -> None:
    if eps <= 0:
        raise InvalidArgs("epsilon must be positive")
    if not 0.0 < delta < 0.5:
        raise InvalidArgs("delta must lie in (0, 0.5) for the Q-inverse to apply")


def gaussian_check(profile: NormProfile, sens: Sensitivity,
                   sigma1: float, sigma2: float,
                   eps_local: float, delta_local: float,
                   eps_global: float, delta_global: float) -> GaussianCheck:
    """Evaluate the two Gaussian-noise conditions at the given levels."""
    if sigma1 <= 0 or sigma2 <= 0:
        raise InvalidArgs("noise scales must be positive")
    _check_eps_delta(eps_local, delta_local)
    _check_eps_delta(eps_global, delta_global)

    a_loc = profile.pi1_row_l2_max * sens.local
    s_loc = profile.n1_row_l2_min * sigma1 * profile.pi2_right_l2
    local_lhs = (s_loc**2 - a_loc**2 / (2 * eps_local)
                 - (a_loc / eps_local) * q_inverse(delta_local) * s_loc)

    a_glo = profile.pi1_row_l2_max * sens.global_ * profile.pi2_elem_abs_max
    s_glo = profile.n1_row_l2_min * sigma1 + profile.n2_col_l2_min * sigma2
    # The linear term carries a different combination than the squared one
    # (pi1_left and the full n2 spectral norm); kept exactly as stated.
    mix = (profile.n1_row_l2_min * sigma1
           + profile.pi1_row_l2_max * profile.pi1_left_l2 * profile.n2_l2 * sigma2)
    global_lhs = (s_glo**2 - a_glo**2 / (2 * eps_global)
                  - (a_glo / eps_global) * q_inverse(delta_global) * mix)

    return GaussianCheck(
        local_ok=local_lhs >= 0.0,
        global_ok=global_lhs >= 0.0,
        local_lhs=float(local_lhs),
        global_lhs=float(global_lhs),
        local_scale=float(s_loc**2),
        global_scale=float(s_glo**2),
    )


def gaussian_solve_sigma(profile: NormProfile, sens: Sensitivity,
                         eps_local: float, delta_local: float,
                         eps_global: float, delta_global: float) -> tuple[float, float]:
    """Smallest (sigma1, sigma2) meeting both Gaussian conditions.

    sigma1 comes from the positive root of the local quadratic in the
    effective deviation; sigma2 then solves the global condition with sigma1
    fixed. Returns sigma2 = 0.0 when sigma1 alone already satisfies the
    global condition for every sigma2 (no aggregator noise needed). At the
    returned values the binding condition sits exactly on its boundary.
    """
    _check_eps_delta(eps_local, delta_local)
    _check_eps_delta(eps_global, delta_global)

    a = profile.pi1_row_l2_max * sens.local
    q = q_inverse(delta_local)
    half_lin = a * q / (2 * eps_local)
    sbar = half_lin + math.sqrt(half_lin**2 + a**2 / (2 * eps_local))
    sigma1 = sbar / (profile.n1_row_l2_min * profile.pi2_right_l2)

    # Global condition as a quadratic in sigma2 with sigma1 fixed:
    # (A + beta s2)^2 - c (A + gamma s2) - a'^2/(2 eps') >= 0.
    a_glo = profile.pi1_row_l2_max * sens.global_ * profile.pi2_elem_abs_max
    c = a_glo * q_inverse(delta_global) / eps_global
    A = profile.n1_row_l2_min * sigma1
    beta = profile.n2_col_l2_min
    gamma = profile.pi1_row_l2_max * profile.pi1_left_l2 * profile.n2_l2
    c2 = beta**2
    c1 = 2 * A * beta - c * gamma
    c0 = A**2 - c * A - a_glo**2 / (2 * eps_global)
    disc = c1**2 - 4 * c2 * c0
    if disc < 0:
        return sigma1, 0.0
    root = (-c1 + math.sqrt(disc)) / (2 * c2)
    return sigma1, max(root, 0.0)


# ---------------------------------------------------------------------------
# noise samplers
# ---------------------------------------------------------------------------

def sample_laplace(rows: int, cols: int, sigma: float,
                   rng: np.random.Generator) -> np.ndarray:
    """i.i.d. Laplace(0, scale=sigma) entries."""
    if sigma <= 0:
        raise InvalidArgs("sigma must be positive")
    return rng.laplace(0.0, sigma, size=(rows, cols))


def sample_gaussian(rows: int, cols: int, sigma: float,
                    rng: np.random.Generator) -> np.ndarray:
    """i.i.d. N(0, sigma^2) entries."""
    if sigma <= 0:
        raise InvalidArgs("sigma must be positive")
    return rng.normal(0.0, sigma, size=(rows, cols))


def sample_noise(kind: str, rows: int, cols: int, sigma: float,
                 rng: np.random.Generator) -> np.ndarray:
    if kind == "laplace":
        return sample_laplace(rows, cols, sigma, rng)
    if kind == "gaussian":
        return sample_gaussian(rows, cols, sigma, rng)
    raise InvalidArgs(f"unknown noise kind {kind!r}")


# ---------------------------------------------------------------------------
# parameter bundles and reporting
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class PrivacyParams:
    """Noise configuration plus the privacy levels being claimed/targeted."""

    noise_kind: str = "gaussian"
    sigma1: float = 1e3
    sigma2: float = 1e3
    eps_local: float | None = None
    delta_local: float | None = None
    eps_global: float | None = None
    delta_global: float | None = None

    def __post_init__(self):
        if self.noise_kind not in ("laplace", "gaussian"):
            raise InvalidArgs(f"unknown noise kind {self.noise_kind!r}")
        if self.sigma1 <= 0 or self.sigma2 <= 0:
            raise InvalidArgs("noise scales must be positive")
        for name in ("delta_local", "delta_global"):
            v = getattr(self, name)
            if v is not None and not 0.0 <= v < 1.0:
                raise InvalidArgs(f"{name} must lie in [0, 1)")


@dataclass(frozen=True)
class PrivacyReport:
    """Everything that went into the per-element privacy statement."""

    noise_kind: str
    sigma1: float
    sigma2: float
    sens: Sensitivity
    profile: NormProfile
    laplace_eps_local: float
    laplace_eps_global: float
    gaussian: GaussianCheck | None = None
    gaussian_targets: tuple | None = None

    def to_dict(self) -> dict:
        d = {
            "noise_kind": self.noise_kind,
            "sigma1": self.sigma1,
            "sigma2": self.sigma2,
            "clip": self.sens.clip,
            "size_local": self.sens.size_local,
            "size_global": self.sens.size_global,
            "sens_local": self.sens.local,
            "sens_global": self.sens.global_,
            "pi1_row_l1_max": self.profile.pi1_row_l1_max,
            "pi1_row_l2_max": self.profile.pi1_row_l2_max,
            "n1_row_l2_min": self.profile.n1_row_l2_min,
            "pi1_left_l2": self.profile.pi1_left_l2,
            "pi2_right_l2": self.profile.pi2_right_l2,
            "pi2_elem_abs_max": self.profile.pi2_elem_abs_max,
            "n2_l2": self.profile.n2_l2,
            "n2_col_l2_min": self.profile.n2_col_l2_min,
            "laplace_eps_local": self.laplace_eps_local,
            "laplace_eps_global": self.laplace_eps_global,
        }
        if self.gaussian is not None:
            el, dl, eg, dg = self.gaussian_targets
            d.update({
                "gaussian_eps_local": el,
                "gaussian_delta_local": dl,
                "gaussian_eps_global": eg,
                "gaussian_delta_global": dg,
                "gaussian_local_ok": self.gaussian.local_ok,
                "gaussian_global_ok": self.gaussian.global_ok,
                "gaussian_local_lhs": self.gaussian.local_lhs,
                "gaussian_global_lhs": self.gaussian.global_lhs,
            })
        return d

    def lines(self) -> list:
        """Flat name=value text record, one entry per line."""
        out = []
        for key, value in self.to_dict().items():
            if isinstance(value, bool):
                out.append(f"{key}={'true' if value else 'false'}")
            elif isinstance(value, float):
                out.append(f"{key}={value!r}")
            else:
                out.append(f"{key}={value}")
        return out


def privacy_report(profile: NormProfile, sens: Sensitivity,
                   params: PrivacyParams) -> PrivacyReport:
    eps_l, eps_g = laplace_eps(profile, sens, params.sigma1, params.sigma2)
    gaussian = None
    targets = None
    have_targets = None not in (params.eps_local, params.delta_local,
                                params.eps_global, params.delta_global)
    if params.noise_kind == "gaussian" and have_targets:
        gaussian = gaussian_check(
            profile, sens, params.sigma1, params.sigma2,
            params.eps_local, params.delta_local,
            params.eps_global, params.delta_global,
        )
        targets = (params.eps_local, params.delta_local,
                   params.eps_global, params.delta_global)
    return PrivacyReport(
        noise_kind=params.noise_kind,
        sigma1=params.sigma1,
        sigma2=params.sigma2,
        sens=sens,
        profile=profile,
        laplace_eps_local=eps_l,
        laplace_eps_global=eps_g,
        gaussian=gaussian,
        gaussian_targets=targets,
    )
