import numpy as np
import pytest

from reference import equality_qp_kkt
from stradic.errors import (
    ConfigError,
    DimensionError,
    ProblemEvaluationError,
    UnknownProblemError,
)
from stradic.oracles import GradientOracle, describe_oracle, parse_oracle
from stradic.problems import (
    Problem,
    evaluate,
    evaluate_constraints,
    fd_gradient_error,
    fd_jacobian_error,
    finite_sum_lsq,
    get_problem,
    load_finite_sum_csv,
    register_test_problems,
    separable_quadratic,
)

REGISTRY = sorted(register_test_problems())


class TestEvaluate:
    def test_exact_oracle_returns_true_gradient(self):
        p = get_problem("rosenbrock-circle")
        x = np.array([0.7, 0.3])
        s = evaluate(p, GradientOracle(), x)
        assert np.array_equal(s.g, p.gradient(x))
        assert np.array_equal(s.G, p.gradient(x))

    def test_circle_constraint_at_feasible_point(self):
        s = evaluate(get_problem("sphere-linear"), GradientOracle(), np.array([1.0, 1.0]))
        np.testing.assert_array_equal(s.c_val, [0.0])
        np.testing.assert_array_equal(s.J_val, [[2.0, 2.0]])

    def test_zero_variance_gaussian_is_exact(self):
        p = get_problem("separable-quadratic")
        x = np.array([1.0, 0.5, 0.2])
        g, G = GradientOracle("additive_gaussian", sigma=0.0, seed=3).sample(p, x)
        assert np.array_equal(g, G)

    def test_wrong_dimension(self):
        with pytest.raises(DimensionError):
            evaluate(get_problem("sphere-linear"), GradientOracle(), np.zeros(3))

    def test_nonfinite_constraint_is_reported(self):
        p = Problem(
            "bad",
            lower=-np.ones(2),
            upper=np.ones(2),
            constraint=lambda x: np.array([np.inf if x[0] < 0 else x[0]]),
            jacobian=lambda x: np.array([[1.0, 0.0]]),
            gradient=lambda x: np.zeros(2),
            x0=np.array([0.5, 0.0]),
        )
        with pytest.raises(ProblemEvaluationError):
            evaluate_constraints(p, np.array([-0.5, 0.0]))


class TestRegistry:
    def test_unknown_name_lists_registry(self):
        with pytest.raises(UnknownProblemError) as err:
            get_problem("nosuch")
        for name in REGISTRY:
            assert name in str(err.value)

    def test_empty_box_rejected(self):
        with pytest.raises(DimensionError):
            Problem("x", lower=np.ones(2), upper=np.zeros(2), constraint=lambda x: x[:1], jacobian=None)

    @pytest.mark.parametrize("name", REGISTRY)
    def test_starting_point_in_box(self, name):
        p = get_problem(name)
        assert p.in_box(p.x0)

    @pytest.mark.parametrize("name", REGISTRY)
    def test_derivatives_match_finite_differences(self, name):
        p = get_problem(name)
        rng = np.random.default_rng(11)
        for _ in range(100):
            x = p.random_box_point(rng)
            assert fd_jacobian_error(p, x) <= 1e-5
            assert fd_gradient_error(p, x) <= 1e-5

    @pytest.mark.parametrize("name", [n for n in REGISTRY if get_problem(n).x_star is not None])
    def test_known_solution_is_kkt(self, name):
        p = get_problem(name)
        x, lam = p.x_star, p.lambda_star
        c, J = evaluate_constraints(p, x)
        assert np.max(np.abs(c)) <= 1e-12
        r = p.gradient(x) + J.T @ lam
        at_lo, at_hi = x <= p.lower, x >= p.upper
        free = ~(at_lo | at_hi)
        assert np.max(np.abs(r[free])) <= 1e-10
        assert np.all(r[at_lo] >= -1e-10) and np.all(r[at_hi] <= 1e-10)

    def test_sphere_linear_solution(self):
        p = get_problem("sphere-linear")
        np.testing.assert_array_equal(p.x_star, [-1.0, -1.0])
        np.testing.assert_array_equal(p.lambda_star, [0.5])

    def test_separable_quadratic_without_bounds_matches_kkt_solve(self):
        p = separable_quadratic(lower=np.full(3, -np.inf), upper=np.full(3, np.inf))
        w, t, a = p.data["w"], p.data["t"], p.data["a"]
        x, nu = equality_qp_kkt(np.diag(w), w * t, a[None, :], np.array([2.0]))
        c, J = evaluate_constraints(p, x)
        assert abs(c[0]) <= 1e-12
        np.testing.assert_allclose(p.gradient(x) + J.T @ nu, 0.0, atol=1e-12)
        # stationary point of the Lagrangian is unique: the gradient is in range(J^T)
        g = p.gradient(x)
        np.testing.assert_allclose(g - a * (a @ g) / 3.0, 0.0, atol=1e-12)

    def test_finite_sum_csv_roundtrip(self, tmp_path):
        A = np.arange(12.0).reshape(4, 3)
        y = np.array([1.0, 0.0, 2.0, 1.0])
        path = tmp_path / "data.csv"
        np.savetxt(path, np.column_stack([A, y]), delimiter=",")
        A2, y2 = load_finite_sum_csv(path)
        np.testing.assert_array_equal(A2, A)
        np.testing.assert_array_equal(y2, y)
        p = finite_sum_lsq(csv_path=path)
        assert (p.n, p.m, p.num_samples) == (3, 1, 4)


class TestOracles:
    def test_same_seed_same_samples(self):
        p = get_problem("sphere-linear")
        x = np.array([0.3, -0.2])
        a, b = parse_oracle("gaussian:0.1", seed=5), parse_oracle("gaussian:0.1", seed=5)
        for _ in range(5):
            np.testing.assert_array_equal(a.sample(p, x)[0], b.sample(p, x)[0])

    def test_reset_replays_stream(self):
        p = get_problem("sphere-linear")
        o = parse_oracle("gaussian:0.1", seed=2)
        first = [o.sample(p, p.x0)[0] for _ in range(3)]
        o.reset()
        np.testing.assert_array_equal(first, [o.sample(p, p.x0)[0] for _ in range(3)])

    def test_full_batch_is_exact(self):
        p = get_problem("finite-sum-lsq")
        x = np.array([0.1, 0.2, 0.3, 0.4])
        g, G = GradientOracle("finite_sum", batch_size=p.num_samples).sample(p, x)
        assert np.array_equal(g, G)

    def test_minibatch_is_unbiased_in_the_mean(self):
        p = get_problem("finite-sum-lsq")
        x = np.array([0.1, 0.2, 0.3, 0.4])
        o = GradientOracle("finite_sum", batch_size=8, seed=1)
        samples = np.array([o.sample(p, x)[0] for _ in range(4000)])
        G = p.gradient(x)
        sem = samples.std(axis=0) / np.sqrt(len(samples))
        assert np.all(np.abs(samples.mean(axis=0) - G) <= 5 * sem)

    def test_step_proportional_scales_with_last_step(self):
        p = get_problem("sphere-linear")
        o = GradientOracle("step_proportional", kappa_dir2=0.1, seed=0)
        g, G = o.sample(p, p.x0)
        assert np.array_equal(g, G)  # no step observed yet
        o.observe_step(np.array([3.0, 4.0]))
        assert o.noise_scale() == pytest.approx(0.5)
        errs = []
        for _ in range(20000):
            g, G = o.sample(p, p.x0)
            errs.append((g - G) @ (g - G))
        # E||z||^2 / n = 1, so E||G - g||^2 = (kappa ||s||)^2
        assert np.mean(errs) == pytest.approx(0.25, rel=0.05)

    def test_history_relaxed_uses_weighted_past_steps(self):
        o = GradientOracle("history_relaxed", kappas=(0.5, 0.25))
        o.observe_step(np.array([1.0, 0.0]))
        o.observe_step(np.array([0.0, 2.0]))
        assert o.noise_scale() == pytest.approx(0.5 * 2.0 + 0.25 * 1.0)

    @pytest.mark.parametrize("text", ["exact", "gaussian:0.01", "step:0.1", "batch:8", "history:0.05,0.02"])
    def test_parse_describe_roundtrip(self, text):
        assert describe_oracle(parse_oracle(text)) == text

    @pytest.mark.parametrize("text", ["bogus", "gaussian", "gaussian:-1", "batch:0", "history:0,0"])
    def test_bad_oracle_text(self, text):
        with pytest.raises(ConfigError):
            parse_oracle(text)
