"""Privacy calculus: Q machinery, sensitivities, norms, conditions, samplers."""

import math

import numpy as np
import pytest

from sifl.coding import KeyGenConfig, gen_aggregator_keys, gen_server_keys
from sifl.dp import (
    NormProfile,
    gaussian_check,
    gaussian_solve_sigma,
    laplace_eps,
    make_sensitivity,
    norm_profile,
    q_function,
    q_inverse,
    sample_gaussian,
    sample_laplace,
    sensitivity,
)
from sifl.errors import DomainError, InvalidArgs


# --- independent erfc oracle: Taylor series near 0, Lentz continued
# fraction in the tail; no use of math.erfc ---------------------------------

def erf_series(x):
    total = 0.0
    term = x
    n = 0
    while abs(term) > 1e-18 * max(1.0, abs(total)):
        total += term / (2 * n + 1)
        n += 1
        term *= -x * x / n
        if n > 200:
            break
    return 2.0 / math.sqrt(math.pi) * total


def erfc_continued_fraction(x):
    # erfc(x) = exp(-x^2)/sqrt(pi) * 1/(x + (1/2)/(x + (2/2)/(x + (3/2)/(x + ...))))
    frac = 0.0
    for i in range(200, 0, -1):
        frac = (i * 0.5) / (x + frac)
    return math.exp(-x * x) / math.sqrt(math.pi) / (x + frac)


def q_oracle(x):
    z = x / math.sqrt(2.0)
    if z < 2.0:
        return 0.5 * (1.0 - erf_series(z))
    return 0.5 * erfc_continued_fraction(z)


def q_inverse_oracle(p, lo=0.0, hi=40.0):
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if q_oracle(mid) > p:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


class TestQFunction:
    def test_q_zero_exact(self):
        assert q_function(0.0) == 0.5

    def test_q_inverse_of_half_is_zero(self):
        assert q_inverse(0.5) == 0.0

    @pytest.mark.parametrize("p", [0.5, 1e-3, 1e-5, 1e-9])
    def test_round_trip(self, p):
        assert abs(q_function(q_inverse(p)) - p) <= 1e-12 * p

    def test_against_independent_oracle(self):
        x = q_inverse(1e-5)
        x_oracle = q_inverse_oracle(1e-5)
        assert abs(x - 4.26489) < 1e-4
        assert abs(x_oracle - 4.26489) < 1e-4
        assert abs(x - x_oracle) < 1e-8

    def test_oracle_agreement_wide(self):
        for x in (0.1, 0.7, 1.5, 2.5, 4.0, 6.0):
            assert abs(q_function(x) - q_oracle(x)) < 1e-13 * max(q_oracle(x), 1e-300) + 1e-16

    def test_domain(self):
        with pytest.raises(DomainError):
            q_inverse(0.0)
        with pytest.raises(DomainError):
            q_inverse(1.0)

    def test_negative_branch(self):
        assert abs(q_function(q_inverse(0.9)) - 0.9) < 1e-12


class TestSensitivity:
    def test_worked_values(self):
        assert abs(sensitivity(1000, 6000) - 1 / 3) < 1e-15
        assert abs(sensitivity(1000, 60000) - 1 / 30) < 1e-16

    def test_invalid(self):
        with pytest.raises(InvalidArgs):
            sensitivity(0.0, 10)
        with pytest.raises(InvalidArgs):
            sensitivity(1.0, 0)
        with pytest.raises(InvalidArgs):
            sensitivity(1.0, 10, order=3)


class TestNormProfile:
    def test_hand_values(self):
        from sifl.coding import DenseServerKeys, AggregatorKeys
        server = DenseServerKeys(pi1=np.array([[1.0], [1.0]]),
                                 pi1_left=np.array([[0.5, 0.5]]),
                                 n1=np.array([[2 ** -0.5], [-(2 ** -0.5)]]))
        agg = AggregatorKeys(pi2=np.array([1.0, 1.0]),
                             pi2_right=np.array([0.5, 0.5]),
                             n2=np.array([[2 ** -0.5, -(2 ** -0.5)]]))
        prof = norm_profile(server, agg)
        assert prof.pi1_row_l1_max == 1.0
        assert abs(prof.n1_row_l2_min - 2 ** -0.5) < 1e-15
        assert abs(prof.pi2_right_l2 - 2 ** -0.5) < 1e-15
        assert prof.pi2_elem_abs_max == 1.0

    def test_matches_bruteforce_row_scan(self):
        cfg = KeyGenConfig(n=7, n_tilde=11, p=4, seed=99, scale=0.3)
        server = gen_server_keys(cfg)
        agg = gen_aggregator_keys(cfg)
        prof = norm_profile(server, agg)
        l1 = max(sum(abs(v) for v in row) for row in server.pi1)
        l2 = max(math.sqrt(sum(v * v for v in row)) for row in server.pi1)
        n1min = min(math.sqrt(sum(v * v for v in row)) for row in server.n1)
        assert abs(prof.pi1_row_l1_max - l1) < 1e-14
        assert abs(prof.pi1_row_l2_max - l2) < 1e-14
        assert abs(prof.n1_row_l2_min - n1min) < 1e-14
        n2colmin = min(math.sqrt(sum(server_row[m] ** 2 for server_row in agg.n2))
                       for m in range(agg.p))
        assert abs(prof.n2_col_l2_min - n2colmin) < 1e-14

    def test_structured_profile_matches_probe(self):
        cfg = KeyGenConfig(n=50, n_tilde=60, seed=4, scale=2.0)
        server = gen_server_keys(cfg, representation="structured")
        agg = gen_aggregator_keys(cfg)
        prof = norm_profile(server, agg)
        eye = np.eye(50)
        pi1 = np.column_stack([server.apply_pi1(eye[:, j]) for j in range(50)])
        assert abs(prof.pi1_row_l1_max - np.abs(pi1).sum(axis=1).max()) < 1e-12
        assert abs(prof.pi1_row_l2_max - np.linalg.norm(pi1, axis=1).max()) < 1e-12
        assert abs(prof.pi1_left_l2 - 1.0 / np.linalg.svd(pi1, compute_uv=False)[-1]) < 1e-9

    def test_positive_required(self):
        with pytest.raises(InvalidArgs):
            NormProfile(pi1_row_l1_max=0.0, pi1_row_l2_max=1, n1_row_l2_min=1,
                        pi1_left_l2=1, pi2_right_l2=1, pi2_elem_abs_max=1,
                        n2_l2=1, n2_col_l2_min=1)


def worked_profile():
    """The worked operating point: tiny immersion rows, large kernel rows."""
    return NormProfile(
        pi1_row_l1_max=1e-3, pi1_row_l2_max=1e-3, n1_row_l2_min=1e3,
        pi1_left_l2=1e3, pi2_right_l2=1e3, pi2_elem_abs_max=1e-3,
        n2_l2=1e3, n2_col_l2_min=1e3,
    )


def worked_sens():
    return make_sensitivity(1000.0, 6000, 60000, order=1)


class TestLaplace:
    def test_worked_example(self):
        eps_l, eps_g = laplace_eps(worked_profile(), worked_sens(), 1e3, 1e3)
        assert eps_l <= 1e-12
        assert abs(eps_l - 3.3333333333333334e-13) < 1e-15 * 3.34e-13 * 10
        assert eps_g <= 1e-13

    def test_doubling_sigma_halves_local_eps(self):
        eps_l, _ = laplace_eps(worked_profile(), worked_sens(), 1e3, 1e3)
        eps_l2, _ = laplace_eps(worked_profile(), worked_sens(), 2e3, 1e3)
        assert abs(eps_l2 - eps_l / 2) < 1e-25

    def test_monotonicity(self):
        prof, sens = worked_profile(), worked_sens()
        base = laplace_eps(prof, sens, 1e3, 1e3)
        more_noise = laplace_eps(prof, sens, 2e3, 3e3)
        assert more_noise[0] < base[0] and more_noise[1] < base[1]
        import dataclasses
        bigger_rows = dataclasses.replace(prof, pi1_row_l1_max=2e-3)
        worse = laplace_eps(bigger_rows, sens, 1e3, 1e3)
        assert worse[0] > base[0] and worse[1] > base[1]

    def test_invalid_sigma(self):
        with pytest.raises(InvalidArgs):
            laplace_eps(worked_profile(), worked_sens(), 0.0, 1.0)


class TestGaussian:
    def test_worked_example_passes(self):
        check = gaussian_check(worked_profile(), worked_sens(), 1e3, 1e3,
                               1e-11, 1e-5, 1e-13, 1e-5)
        assert check.local_ok and check.global_ok

    def test_solve_then_check_sits_on_boundary(self):
        prof, sens = worked_profile(), worked_sens()
        s1, s2 = gaussian_solve_sigma(prof, sens, 1e-11, 1e-5, 1e-13, 1e-5)
        assert s1 > 0 and s2 > 0
        check = gaussian_check(prof, sens, s1, s2, 1e-11, 1e-5, 1e-13, 1e-5)
        assert check.local_ok and check.global_ok
        assert abs(check.local_lhs) <= 1e-9 * check.local_scale
        assert abs(check.global_lhs) <= 1e-9 * check.global_scale

    def test_slightly_less_noise_fails(self):
        prof, sens = worked_profile(), worked_sens()
        s1, s2 = gaussian_solve_sigma(prof, sens, 1e-11, 1e-5, 1e-13, 1e-5)
        check = gaussian_check(prof, sens, s1 * (1 - 1e-6), s2, 1e-11, 1e-5, 1e-13, 1e-5)
        assert not check.local_ok

    def test_delta_domain(self):
        with pytest.raises(InvalidArgs):
            gaussian_check(worked_profile(), worked_sens(), 1e3, 1e3,
                           1e-11, 0.6, 1e-13, 1e-5)
        with pytest.raises(InvalidArgs):
            gaussian_solve_sigma(worked_profile(), worked_sens(), -1.0, 1e-5, 1e-13, 1e-5)


class TestSamplers:
    def test_sigma_zero_rejected(self):
        rng = np.random.default_rng(0)
        with pytest.raises(InvalidArgs):
            sample_gaussian(2, 2, 0.0, rng)
        with pytest.raises(InvalidArgs):
            sample_laplace(2, 2, -1.0, rng)

    def test_gaussian_moments(self):
        rng = np.random.default_rng(12345)
        sigma = 7.0
        x = sample_gaussian(1000, 1000, sigma, rng)
        assert abs(x.mean()) < 5 * sigma / 1e3
        assert abs(x.std() - sigma) < 0.01 * sigma

    def test_laplace_tail_ks(self):
        rng = np.random.default_rng(54321)
        scale = 3.0
        x = np.abs(sample_laplace(1000, 1000, scale, rng).ravel())
        # |X| is exponential(scale); KS distance of the empirical CDF
        x.sort()
        ecdf_hi = np.arange(1, x.size + 1) / x.size
        ecdf_lo = np.arange(0, x.size) / x.size
        cdf = 1.0 - np.exp(-x / scale)
        ks = max(np.max(np.abs(ecdf_hi - cdf)), np.max(np.abs(cdf - ecdf_lo)))
        assert ks < 0.01

    def test_laplace_variance_convention(self):
        # sigma is the scale parameter b, so the variance is 2 b^2
        rng = np.random.default_rng(777)
        x = sample_laplace(1000, 1000, 5.0, rng)
        assert abs(x.var() - 2 * 25.0) < 0.02 * 50.0
