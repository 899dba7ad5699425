import itertools
import math

import mpmath
import numpy as np
import pytest
from scipy.stats import binom

from labelcert import (
    SmoothingConfig,
    ValidationError,
    build_table,
    certify_point,
    chernoff_objective,
    exact_binary_tails,
    kl_divergence,
    kl_radius,
    precompute,
    solve_chernoff,
)
from labelcert.certify import margin_from_log_bound, radius_from_log_bound

from conftest import (
    chernoff_oracle_min,
    kl_radius_oracle,
    random_binary_instance,
    separable_instance,
)


class TestObjective:
    def test_zero_alpha_is_linear(self):
        for t in (-3.0, 0.0, 1.7):
            value, d1, d2 = chernoff_objective([0.0, 0.0], [1, 0], 0.2, t)
            assert value == pytest.approx(t / 2)
            assert d1 == pytest.approx(0.5)
            assert d2 == pytest.approx(0.0, abs=1e-15)

    def test_single_coordinate_closed_form(self):
        t = math.log(9)
        value, d1, _ = chernoff_objective([1.0], [1], 0.1, t)
        assert value == pytest.approx(math.log(0.6), abs=1e-12)
        assert d1 == pytest.approx(0.0, abs=1e-12)

    def test_value_zero_at_t_zero(self, rng):
        alpha = rng.standard_normal(7)
        y = rng.integers(0, 2, 7)
        value, _, _ = chernoff_objective(alpha, y, 0.3, 0.0)
        assert value == pytest.approx(0.0, abs=1e-14)

    def test_convex_everywhere(self, rng):
        for _ in range(5):
            alpha, y, q = random_binary_instance(rng)
            for t in rng.standard_normal(100) * 20:
                _, _, d2 = chernoff_objective(alpha, y, q, float(t))
                assert d2 > 0

    def test_no_overflow_at_extreme_tilt(self):
        value, d1, d2 = chernoff_objective([50.0, -50.0], [1, 0], 0.1, 200.0)
        assert math.isfinite(value) and math.isfinite(d1) and math.isfinite(d2)
        value, d1, d2 = chernoff_objective([50.0, -50.0], [1, 0], 0.1, -200.0)
        assert math.isfinite(value) and math.isfinite(d1) and math.isfinite(d2)


class TestSolve:
    def test_closed_form_single_coordinate(self):
        res = solve_chernoff([1.0], [1], 0.1)
        assert res.t_star == pytest.approx(math.log(9), abs=1e-9)
        assert math.exp(res.log_bound) == pytest.approx(0.6, abs=1e-9)
        assert res.prediction == 1
        assert res.p_star == 0.5  # 1 - 0.6 < 1/2

    def test_bound_dominates_binomial_tail(self):
        # ten identical coordinates: the score is 0.1 * Binomial(10, 0.9)
        alpha = [0.1] * 10
        y = [1] * 10
        res = solve_chernoff(alpha, y, 0.1)
        assert res.prediction == 1
        exact = float(binom.sf(4, 10, 0.1))  # P(Bin(10,0.1) >= 5)
        assert exact == pytest.approx(0.0016349, abs=1e-7)
        assert math.exp(res.log_bound) >= exact
        t_o, f_o = chernoff_oracle_min(alpha, y, 0.1, lo=0.0, hi=60.0)
        assert res.log_bound == pytest.approx(f_o, abs=1e-9)

    def test_matches_grid_oracle_on_random_instances(self, rng):
        for _ in range(10):
            alpha, y, q = random_binary_instance(rng, n_max=10)
            res = solve_chernoff(alpha, y, q)
            if res.degenerate:
                continue
            _, f_o = chernoff_oracle_min(alpha, y, q)
            assert res.log_bound <= f_o + 1e-9

    def test_relabel_symmetry_unit_mass(self, rng):
        # swapping y for 1-y mirrors the objective when the weights sum to 1
        for _ in range(8):
            n = int(rng.integers(3, 10))
            alpha = rng.random(n) + 0.1
            alpha /= alpha.sum()
            y = rng.integers(0, 2, n)
            a = solve_chernoff(alpha, y, 0.2)
            b = solve_chernoff(alpha, 1 - y, 0.2)
            assert a.p_star == pytest.approx(b.p_star, abs=1e-12)
            assert a.log_bound == pytest.approx(b.log_bound, abs=1e-10)
            if abs(a.t_star) > 1e-9:
                assert a.prediction != b.prediction
                assert a.t_star == pytest.approx(-b.t_star, abs=1e-8)

    def test_degenerate_small_positive_mass(self):
        res = solve_chernoff([0.2, 0.2, -1.0], [1, 1, 0], 0.3)
        assert res.degenerate
        assert res.prediction == 0
        assert res.p_star == 1.0 - 2.0**-52
        assert res.t_star == float("-inf")

    def test_extended_mode_triggers_on_small_q(self):
        res = solve_chernoff([0.7, 0.6], [1, 1], 1e-4)
        assert res.precision_bits == 256
        assert res.log_bound_mp is not None

    def test_extended_mode_triggers_on_underflow(self, rng):
        # strong instance: bound far below double-epsilon of 1
        alpha, y, q = separable_instance(rng, 400, 0.1)
        res = solve_chernoff(alpha, y, q)
        if 1.0 - math.exp(res.log_bound) == 1.0:
            assert res.log_bound_mp is not None
            assert res.precision_bits == 256
            # extended value agrees with the double evaluation to ~1e-9
            assert float(res.log_bound_mp) == pytest.approx(res.log_bound, rel=1e-9)


class TestKlDivergence:
    def test_zero_flips(self):
        assert kl_divergence(0, 0.3) == 0.0

    def test_single_flip_binary_vs_two_outcome_oracle(self):
        q = 0.25
        # numeric KL over the two outcomes of the one flipped coordinate
        mu = np.array([1 - q, q])
        rho = np.array([q, 1 - q])
        oracle = float(np.sum(mu * np.log(mu / rho)))
        assert kl_divergence(1, q, 2) == pytest.approx(oracle, abs=1e-12)
        assert kl_divergence(1, q, 2) == pytest.approx(0.5 * math.log(3), abs=1e-12)

    def test_ten_class_vs_product_enumeration(self):
        q, K, r = 0.1, 10, 3
        y1 = [0, 0, 0]
        y2 = [1, 2, 3]
        probs1 = np.full((r, K), q / (K - 1))
        probs2 = np.full((r, K), q / (K - 1))
        for i in range(r):
            probs1[i, y1[i]] = 1 - q
            probs2[i, y2[i]] = 1 - q
        oracle = 0.0
        for outcome in itertools.product(range(K), repeat=r):
            pmu = np.prod([probs1[i, v] for i, v in enumerate(outcome)])
            prho = np.prod([probs2[i, v] for i, v in enumerate(outcome)])
            oracle += pmu * math.log(pmu / prho)
        assert kl_divergence(r, q, K) == pytest.approx(oracle, rel=1e-10)
        assert kl_divergence(r, q, K) == pytest.approx(
            3 * (1 - 1 / 9) * math.log(0.9 * 9 / 0.1), rel=1e-12
        )

    def test_symmetric_in_measures(self):
        # swapping mu and rho gives the same value (binary)
        q = 0.3
        mu = np.array([1 - q, q])
        rho = np.array([q, 1 - q])
        forward = float(np.sum(mu * np.log(mu / rho)))
        backward = float(np.sum(rho * np.log(rho / mu)))
        assert forward == pytest.approx(backward, abs=1e-14)
        assert kl_divergence(1, q, 2) == pytest.approx(forward, abs=1e-14)

    def test_positive_and_monotone_in_r(self):
        vals = [kl_divergence(r, 0.2, 4) for r in range(5)]
        assert vals[0] == 0.0
        assert all(b > a for a, b in zip(vals, vals[1:]))


class TestKlRadius:
    def test_half_margin_certifies_nothing(self):
        assert kl_radius(0.5, 0.3, 2, 100) == 0

    @pytest.mark.parametrize("p,q,expected", [(0.9, 0.3, 1), (0.99, 0.45, 80)])
    def test_spec_values(self, p, q, expected):
        assert kl_radius(p, q, 2, 10_000) == expected

    def test_matches_numeric_inversion_oracle(self, rng):
        for _ in range(60):
            p = float(rng.uniform(0.5, 0.999999))
            q = float(rng.uniform(0.02, 0.48))
            K = int(rng.choice([2, 3, 10]))
            if q >= (K - 1) / K:
                continue
            assert kl_radius(p, q, K, 10**7) == kl_radius_oracle(p, q, K)

    def test_k2_reduction_exact(self, rng):
        # the general-K radius at K=2 equals the binary closed form bit for bit
        for _ in range(40):
            p = float(rng.uniform(0.5, 0.9999))
            q = float(rng.uniform(0.02, 0.48))
            binary = math.floor(
                math.log(4 * p * (1 - p)) / (2 * (1 - 2 * q) * math.log(q / (1 - q)))
            )
            assert kl_radius(p, q, 2, 10**7) == binary

    def test_monotone_in_margin(self):
        rs = [kl_radius(p, 0.3, 2, 10**6) for p in np.linspace(0.5, 0.9999, 50)]
        assert all(b >= a for a, b in zip(rs, rs[1:]))

    def test_clamped_to_n(self):
        assert kl_radius(0.99, 0.45, 2, 10) == 10

    def test_log_domain_path_agrees_with_margin_path(self, rng):
        for _ in range(30):
            lb = float(-rng.uniform(0.1, 30.0))
            q = float(rng.uniform(0.05, 0.45))
            p = 1.0 - math.exp(lb)
            r_direct = kl_radius(p, q, 2, 10**7)
            r_log, _ = radius_from_log_bound(lb, q, 2, 10**7, 53)
            assert r_direct == r_log

    def test_extended_precision_extends_radius(self):
        lb = mpmath.mpf(-120)
        r53, _ = radius_from_log_bound(-120.0, 0.1, 2, 10**6, 53)
        r256, _ = radius_from_log_bound(lb, 0.1, 2, 10**6, 256)
        assert r256 > r53  # 53-bit clamps the margin first


class TestCertifyPoint:
    def test_single_coordinate_vote(self):
        model = precompute(np.eye(2), 0.0)
        cert = certify_point(model, [1, 1], np.array([1.0, 0.0]), SmoothingConfig(q=0.3))
        assert cert.prediction == 1

    def test_margin_shrinks_with_noise(self):
        model = precompute(np.eye(2), 0.0)
        p_stars = []
        for q in (0.3, 0.4, 0.45, 0.49):
            cert = certify_point(model, [1, 1], np.array([1.0, 0.0]), SmoothingConfig(q=q))
            p_stars.append(cert.p_star)
        assert all(b <= a + 1e-12 for a, b in zip(p_stars, p_stars[1:]))

    def test_recomposition(self, rng):
        # certificate radius matches an independent recomputation from p*
        X = rng.standard_normal((12, 3))
        y = rng.integers(0, 2, 12)
        model = precompute(X, 0.4)
        cfg = SmoothingConfig(q=0.2)
        x = rng.standard_normal(3)
        cert = certify_point(model, y, x, cfg)
        alpha = model.M @ x
        res = solve_chernoff(alpha, y, 0.2)
        assert cert.prediction == res.prediction
        assert cert.p_star == res.p_star
        assert cert.r_kl == kl_radius(res.p_star, 0.2, 2, 12) or res.log_bound_mp is not None

    def test_degenerate_gets_full_radius(self):
        model = precompute(np.eye(3), 0.0)
        cert = certify_point(model, [0, 1, 0], np.zeros(3), SmoothingConfig(q=0.2))
        assert cert.prediction == 0
        assert cert.r_kl == 3
        assert cert.radius_capped

    def test_tight_radius_present_and_dominant(self, rng):
        table = build_table(0.2, 40)
        X = rng.standard_normal((10, 2))
        y = rng.integers(0, 2, 10)
        model = precompute(X, 0.5)
        cfg = SmoothingConfig(q=0.2)
        for _ in range(5):
            cert = certify_point(model, y, rng.standard_normal(2), cfg, table=table)
            assert cert.r_tight is not None
            assert cert.r_tight >= cert.r_kl

    def test_table_q_mismatch_rejected(self, rng):
        table = build_table(0.3, 5)
        model = precompute(np.eye(2), 0.0)
        with pytest.raises(ValidationError, match="table"):
            certify_point(model, [1, 1], np.ones(2), SmoothingConfig(q=0.2), table=table)

    def test_record_schema(self):
        model = precompute(np.eye(2), 0.0)
        cert = certify_point(model, [1, 1], np.array([1.0, 0.0]), SmoothingConfig(q=0.3))
        rec = cert.as_record(7)
        assert list(rec) == [
            "index", "prediction", "t_star", "p_star", "r_kl", "r_tight",
            "radius_capped",
        ]
        assert rec["index"] == 7


class TestSoundness:
    def test_bound_dominates_enumeration(self, rng):
        for _ in range(40):
            alpha, y, q = random_binary_instance(rng, n_max=14)
            res = solve_chernoff(alpha, y, q)
            if res.degenerate:
                continue
            tails = exact_binary_tails(alpha, y, q)
            if res.prediction == 1:
                assert tails.le <= math.exp(res.log_bound) + 1e-12
            else:
                assert tails.ge <= math.exp(res.log_bound) + 1e-12

    def test_prediction_matches_majority_when_informative(self, rng):
        checked = 0
        for _ in range(60):
            alpha, y, q = random_binary_instance(rng, n_max=14)
            res = solve_chernoff(alpha, y, q)
            if res.degenerate or res.p_star <= 0.5:
                continue
            tails = exact_binary_tails(alpha, y, q)
            majority = 1 if tails.ge >= 0.5 else 0
            assert res.prediction == majority
            checked += 1
        assert checked >= 10

    def test_margin_never_exceeds_truth(self, rng):
        for _ in range(40):
            alpha, y, q = random_binary_instance(rng, n_max=12)
            res = solve_chernoff(alpha, y, q)
            if res.degenerate:
                continue
            tails = exact_binary_tails(alpha, y, q)
            truth = tails.ge if res.prediction == 1 else tails.lt
            assert res.p_star <= truth + 1e-12 or res.p_star == 0.5

    def test_margin_nonincreasing_in_q(self, rng):
        for _ in range(5):
            alpha, y, _ = random_binary_instance(rng, n_max=12, signal_prob=1.0)
            stars = []
            for q in np.linspace(0.05, 0.45, 9):
                res = solve_chernoff(alpha, y, float(q))
                stars.append((res.prediction, res.p_star))
            preds = {p for p, _ in stars}
            if len(preds) == 1:  # prediction stable across the grid
                vals = [s for _, s in stars]
                assert all(b <= a + 1e-9 for a, b in zip(vals, vals[1:]))


class TestFlipInvariance:
    def test_certified_flips_never_change_majority(self, rng):
        # the central contract: any flip set within the radius keeps the vote
        table = build_table(0.15, 30)
        cfg = SmoothingConfig(q=0.15)
        tested = 0
        for _ in range(25):
            n = int(rng.integers(8, 15))
            alpha, y, _ = separable_instance(rng, n, 0.15)
            res = solve_chernoff(alpha, y, 0.15)
            if res.degenerate:
                continue
            lb = res.log_bound_mp if res.log_bound_mp is not None else res.log_bound
            from labelcert.tight import radius_from_bound

            r_kl, _ = radius_from_log_bound(lb, 0.15, 2, n, res.precision_bits)
            r = max(radius_from_bound(lb, table, n, res.precision_bits), r_kl)
            if r < 1:
                continue
            tested += 1
            for size in range(1, min(r, 2) + 1):
                for flip_set in itertools.combinations(range(n), size):
                    y2 = y.copy()
                    y2[list(flip_set)] = 1 - y2[list(flip_set)]
                    tails = exact_binary_tails(alpha, y2, 0.15)
                    majority = 1 if tails.ge >= 0.5 else 0
                    assert majority == res.prediction, (
                        f"flip set {flip_set} broke a radius-{r} certificate"
                    )
            for _ in range(100):
                size = int(rng.integers(1, r + 1))
                flip_set = rng.choice(n, size=size, replace=False)
                y2 = y.copy()
                y2[flip_set] = 1 - y2[flip_set]
                tails = exact_binary_tails(alpha, y2, 0.15)
                majority = 1 if tails.ge >= 0.5 else 0
                assert majority == res.prediction
        assert tested >= 5


def test_margin_from_log_bound_clamps():
    assert margin_from_log_bound(-1000.0, 53) == 1.0 - 2.0**-52
    assert margin_from_log_bound(-0.01, 53) == 0.5
    assert margin_from_log_bound(math.log(0.4), 53) == pytest.approx(0.6)
