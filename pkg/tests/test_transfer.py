import time

import numpy as np
import pytest

from emtransfer.datagen import toy_ambiguous, toy_source, toy_target
from emtransfer.dataset import Dataset
from emtransfer.errors import (
    DegenerateResponsibilityError,
    InvalidInputError,
    SingularSystemError,
)
from emtransfer.lgmm import LabeledGMM, classify_batch, fit_lgmm
from emtransfer.optim import SolverConfig
from emtransfer.transfer import (
    Responsibilities,
    TransferConfig,
    apply_transfer,
    e_step,
    em_transfer,
    eq_error,
    eq_gradient,
    identity_map,
    m_step_closed_form,
    m_step_gradient,
)


def fig2_model():
    means = np.array([[-1.0, 0.0], [0.0, 0.0], [1.0, 0.0]])
    precisions = np.stack([np.eye(2) / 0.09] * 3)
    return LabeledGMM(means, precisions, np.eye(3), np.full(3, 1 / 3), shared_precision=True)


def ambiguous_model():
    means = np.array([[-1.0, 0.0], [0.0, 0.0], [1.0, 0.0]])
    precisions = np.stack([np.eye(2) / 0.09] * 3)
    label_cond = np.array([[1.0, 0.0], [0.0, 1.0], [1.0, 0.0]])
    return LabeledGMM(means, precisions, label_cond, np.full(3, 1 / 3), shared_precision=True)


def random_local_model(rng, k=3, m=2, num_labels=3):
    means = rng.standard_normal((k, m)) * 2.0
    precisions = []
    for _ in range(k):
        a = rng.standard_normal((m, m))
        precisions.append(a @ a.T + 0.5 * np.eye(m))
    label_cond = np.zeros((k, num_labels))
    label_cond[np.arange(k), rng.integers(0, num_labels, size=k)] = 1.0
    # Ensure at least one component per used label by overwriting row 0.
    priors = rng.uniform(0.2, 1.0, size=k)
    return LabeledGMM(means, np.stack(precisions), label_cond, priors / priors.sum())


class TestEStep:
    def test_crisp_one_to_one_independent_of_h(self):
        model = fig2_model()
        target = toy_target(10, seed=0)
        rng = np.random.default_rng(0)
        a = e_step(model, rng.standard_normal((2, 2)), target)
        b = e_step(model, rng.standard_normal((2, 2)), target)
        assert a.gamma.tobytes() == b.gamma.tobytes()
        expected = (np.arange(1, 4)[:, None] == target.labels[None, :]).astype(float)
        assert np.array_equal(a.gamma, expected)

    def test_identical_components_split_evenly(self):
        precision = np.eye(2) * 4.0
        model = LabeledGMM(
            [[1.0, 1.0], [1.0, 1.0]], [precision, precision],
            [[1.0], [1.0]], [0.5, 0.5],
        )
        target = Dataset([[0.3, -0.2]], [1])
        resp = e_step(model, np.eye(2), target)
        assert resp.gamma[:, 0] == pytest.approx([0.5, 0.5], abs=1e-12)

    def test_ambiguous_model_splits_between_outer_components(self):
        model = ambiguous_model()
        target = Dataset([[0.0, 2.0], [0.0, -2.0]], [1, 1])
        resp = e_step(model, np.eye(2), target)
        # Equidistant from the two label-1 components: symmetric split.
        np.testing.assert_allclose(resp.gamma[[0, 2], 0], [0.5, 0.5], atol=1e-12)
        assert resp.gamma[1, 0] < 1e-10
        # A slight rotation toward the right component shifts the weight.
        angle = 0.1
        rot = np.array([[np.cos(angle), np.sin(angle)], [-np.sin(angle), np.cos(angle)]])
        resp_rot = e_step(model, rot, target)
        mapped = rot @ np.array([0.0, 2.0])
        nearer = 2 if mapped[0] > 0 else 0
        assert resp_rot.gamma[nearer, 0] > resp_rot.gamma[2 - nearer, 0]

    def test_impossible_label_names_point(self):
        model = ambiguous_model()  # emits labels 1 and 2 only, but L would be 2
        target = Dataset([[0.0, 0.0], [1.0, 0.0]], [1, 2])
        ok = e_step(model, np.eye(2), target)
        assert ok.gamma.shape == (3, 2)
        bad_model = LabeledGMM(
            model.means, model.precisions,
            np.array([[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [1.0, 0.0, 0.0]]),
            model.priors, shared_precision=True,
        )
        with pytest.raises(DegenerateResponsibilityError) as err:
            e_step(bad_model, np.eye(2), Dataset([[0.0, 0.0], [1.0, 0.0]], [1, 3]))
        assert err.value.point_index == 1

    def test_columns_sum_to_one(self):
        rng = np.random.default_rng(3)
        model = ambiguous_model()
        target = toy_ambiguous(40, seed=1)
        resp = e_step(model, rng.standard_normal((2, 2)), target)
        np.testing.assert_allclose(resp.gamma.sum(axis=0), 1.0, atol=1e-9)


class TestEqError:
    def test_exact_fit_is_zero(self):
        model = fig2_model()
        # Two points mapped exactly onto their means by H = I.
        target = Dataset([[-1.0, 0.0], [0.0, 0.0]], [1, 2])
        resp = e_step(model, np.eye(2), target)
        assert eq_error(model, np.eye(2), target, resp) == pytest.approx(0.0, abs=1e-20)

    def test_single_point_identity_precision(self):
        model = LabeledGMM([[1.0, 2.0]], [np.eye(2)], [[1.0]], [1.0])
        target = Dataset([[3.0, 5.0]], [1])
        gamma = Responsibilities([[1.0]])
        h = np.eye(2)
        residual = np.array([3.0, 5.0]) - np.array([1.0, 2.0])
        assert eq_error(model, h, target, gamma) == pytest.approx(residual @ residual)

    def test_midpoint_convexity(self):
        rng = np.random.default_rng(7)
        model = random_local_model(rng)
        target = Dataset(rng.standard_normal((15, 2)), rng.integers(1, 4, size=15))
        gamma = rng.uniform(size=(3, 15))
        gamma /= gamma.sum(axis=0)
        for _ in range(100):
            h1 = rng.standard_normal((2, 2))
            h2 = rng.standard_normal((2, 2))
            mid = eq_error(model, 0.5 * (h1 + h2), target, gamma)
            avg = 0.5 * eq_error(model, h1, target, gamma) + 0.5 * eq_error(model, h2, target, gamma)
            assert mid <= avg + 1e-9


class TestEqGradient:
    def finite_difference(self, model, H, target, gamma, step=1e-5):
        fd = np.zeros_like(H)
        for i in range(H.shape[0]):
            for j in range(H.shape[1]):
                up = H.copy(); up[i, j] += step
                down = H.copy(); down[i, j] -= step
                fd[i, j] = (eq_error(model, up, target, gamma)
                            - eq_error(model, down, target, gamma)) / (2 * step)
        return fd

    def test_matches_finite_differences(self):
        rng = np.random.default_rng(11)
        for trial in range(20):
            if trial % 2 == 0:
                model = random_local_model(rng, k=3, m=3)
            else:
                prec = np.eye(3) * rng.uniform(0.5, 3.0)
                model = LabeledGMM(rng.standard_normal((3, 3)), np.stack([prec] * 3),
                                   np.eye(3), np.full(3, 1 / 3), shared_precision=True)
            target = Dataset(rng.standard_normal((8, 2)), rng.integers(1, 4, size=8))
            gamma = rng.uniform(size=(3, 8))
            gamma /= gamma.sum(axis=0)
            H = rng.standard_normal((3, 2))
            got = eq_gradient(model, H, target, gamma)
            fd = self.finite_difference(model, H, target, gamma)
            scale = max(1.0, float(np.max(np.abs(fd))))
            assert np.max(np.abs(got - fd)) / scale < 1e-5

    def test_single_term_expansion(self):
        model = LabeledGMM([[0.0, 0.0]], [np.eye(2)], [[1.0]], [1.0])
        target = Dataset([[2.0, -1.0]], [1])
        gamma = Responsibilities([[1.0]])
        H = np.array([[0.5, 1.0], [-1.0, 0.25]])
        x = np.array([2.0, -1.0])
        expected = 2.0 * np.outer(H @ x, x)
        np.testing.assert_allclose(eq_gradient(model, H, target, gamma), expected, atol=1e-12)

    def test_stationary_at_closed_form(self):
        rng = np.random.default_rng(13)
        model = fig2_model()
        target = Dataset(rng.standard_normal((12, 2)) * 2.0, rng.integers(1, 4, size=12))
        gamma = e_step(model, np.eye(2), target)
        for ridge in (0.0, 0.5):
            h_star = m_step_closed_form(model, target, gamma, ridge)
            grad = eq_gradient(model, h_star, target, gamma, ridge)
            scale = max(1.0, abs(eq_error(model, h_star, target, gamma, ridge)))
            assert np.max(np.abs(grad)) <= 1e-8 * scale


class TestMStepClosedForm:
    def test_identity_design_matrix(self):
        model = LabeledGMM([[2.0, 3.0]], [np.eye(2)], [[1.0]], [1.0], shared_precision=True)
        target = Dataset([[1.0, 0.0], [0.0, 1.0]], [1, 1])
        gamma = Responsibilities([[1.0, 1.0]])
        H = m_step_closed_form(model, target, gamma)
        np.testing.assert_allclose(H, [[2.0, 2.0], [3.0, 3.0]], atol=1e-12)
        np.testing.assert_allclose(apply_transfer(H, [1.0, 0.0]), [2.0, 3.0], atol=1e-12)

    def test_global_optimality_against_random_probes(self):
        rng = np.random.default_rng(17)
        model = fig2_model()
        target = Dataset(rng.standard_normal((10, 2)), rng.integers(1, 4, size=10))
        gamma = e_step(model, np.eye(2), target)
        h_star = m_step_closed_form(model, target, gamma)
        best = eq_error(model, h_star, target, gamma)
        for _ in range(100):
            probe = h_star + rng.standard_normal((2, 2)) * rng.uniform(0.01, 1.0)
            assert best <= eq_error(model, probe, target, gamma) + 1e-9

    def test_toy_transfer_aligns_class_means(self):
        model = fig2_model()
        target = toy_target(30, seed=5)
        gamma = e_step(model, identity_map(2, 2), target)
        H = m_step_closed_form(model, target, gamma, ridge=1e-8)
        for label, source_mean in zip((1, 2, 3), model.means):
            target_mean = target.points[target.labels == label].mean(axis=0)
            assert np.linalg.norm(H @ target_mean - source_mean) < 0.15

    def test_rank_deficient_needs_ridge(self):
        model = LabeledGMM([[0.0, 0.0]], [np.eye(2)], [[1.0]], [1.0], shared_precision=True)
        target = Dataset([[1.0, 1.0]], [1])
        gamma = Responsibilities([[1.0]])
        with pytest.raises(SingularSystemError):
            m_step_closed_form(model, target, gamma, ridge=0.0)
        H = m_step_closed_form(model, target, gamma, ridge=1e-6)
        assert np.all(np.isfinite(H))

    def test_local_precisions_rejected(self):
        rng = np.random.default_rng(19)
        model = random_local_model(rng)
        target = Dataset(rng.standard_normal((5, 2)), np.ones(5, dtype=int))
        gamma = np.full((3, 5), 1 / 3)
        with pytest.raises(InvalidInputError):
            m_step_closed_form(model, target, gamma)


class TestMStepGradient:
    def test_matches_closed_form_on_shared_instance(self):
        rng = np.random.default_rng(23)
        model = fig2_model()
        target = Dataset(rng.standard_normal((20, 2)), rng.integers(1, 4, size=20))
        gamma = e_step(model, np.eye(2), target)
        closed = m_step_closed_form(model, target, gamma)
        solver = SolverConfig(gradient_tolerance=1e-10)
        iterative = m_step_gradient(model, target, gamma, identity_map(2, 2), solver)
        assert np.max(np.abs(iterative - closed)) < 1e-4

    def test_does_not_increase_error(self):
        rng = np.random.default_rng(29)
        model = random_local_model(rng)
        target = Dataset(rng.standard_normal((15, 2)), rng.integers(1, 4, size=15))
        gamma = rng.uniform(size=(3, 15))
        gamma /= gamma.sum(axis=0)
        h0 = rng.standard_normal((2, 2))
        h1 = m_step_gradient(model, target, gamma, h0)
        assert eq_error(model, h1, target, gamma) <= eq_error(model, h0, target, gamma)

    def test_gradient_shrinks_on_local_instance(self):
        rng = np.random.default_rng(31)
        model = random_local_model(rng)
        target = Dataset(rng.standard_normal((25, 2)), rng.integers(1, 4, size=25))
        gamma = rng.uniform(size=(3, 25))
        gamma /= gamma.sum(axis=0)
        h0 = identity_map(2, 2)
        h1 = m_step_gradient(model, target, gamma, h0)
        g0 = np.linalg.norm(eq_gradient(model, h0, target, gamma))
        g1 = np.linalg.norm(eq_gradient(model, h1, target, gamma))
        assert g1 <= 1e-6 * max(g0, 1.0)


class TestEmTransfer:
    def test_crisp_one_to_one_takes_two_iterations(self):
        model = fig2_model()
        target = toy_target(30, seed=3)
        result = em_transfer(model, target)
        assert result.converged
        assert result.iterations == 2
        assert len(result.eq_error_trace) == 2
        assert len(result.loglik_trace) == 2

    def test_toy_transfer_generalizes(self):
        model = fig2_model()
        train = toy_target(30, seed=4)
        heldout = toy_target(200, seed=104)
        result = em_transfer(model, train)
        mapped = apply_transfer(result, heldout.points)
        error = np.mean(classify_batch(model, mapped) != heldout.labels)
        assert error < 0.01

    def test_self_transfer_preserves_class_structure(self):
        # The exact identity is not optimal here: the fitted objective maps
        # points toward their class means, so the best H suppresses the
        # label-free axis. What must hold: the class means are (nearly)
        # fixed points, classification survives the round trip, and the
        # error trace never increases after the first M-step.
        source = toy_source(100, seed=6)
        model = fit_lgmm(source, k_per_label=1, shared_precision=True, seed=0)
        result = em_transfer(model, source)
        for mean in model.means:
            assert np.linalg.norm(result.matrix @ mean - mean) < 0.2
        before = classify_batch(model, source.points)
        after = classify_batch(model, apply_transfer(result, source.points))
        assert np.mean(before != after) < 0.05
        diffs = np.diff(np.array(result.eq_error_trace))
        assert np.all(diffs <= 1e-9)

    def test_loglik_trace_non_decreasing_on_ambiguous_problem(self):
        model = ambiguous_model()
        target = toy_ambiguous(60, seed=8)
        # Rotate the target so the assignment is genuinely ambiguous.
        rot = np.array([[0.0, -1.0], [1.0, 0.0]])
        rotated = Dataset(target.points @ rot.T, target.labels)
        result = em_transfer(model, rotated)
        trace = np.array(result.loglik_trace)
        assert len(trace) >= 2
        assert np.all(np.diff(trace) >= -1e-8)

    def test_non_convergence_flagged(self):
        model = ambiguous_model()
        target = toy_ambiguous(60, seed=9)
        config = TransferConfig(epsilon=1e-300, max_iterations=3)
        result = em_transfer(model, target, config)
        assert not result.converged
        assert result.iterations == 3

    def test_rectangular_spaces(self):
        # 3-d target, 2-d source model: H is 2x3 and starts as the padded
        # identity. The third target coordinate is pure noise.
        rng = np.random.default_rng(35)
        model = fig2_model()
        comp = rng.integers(0, 3, size=90)
        base = model.means[comp] + 0.3 * rng.standard_normal((90, 2))
        extra = rng.standard_normal((90, 1))
        target = Dataset(np.hstack([base[:, 1:2], base[:, 0:1], extra]), comp + 1)
        result = em_transfer(model, target)
        assert result.matrix.shape == (2, 3)
        assert result.converged
        mapped = apply_transfer(result, target.points)
        assert np.mean(classify_batch(model, mapped) != target.labels) < 0.1

    def test_local_precision_route(self):
        rng = np.random.default_rng(33)
        means = np.array([[-1.0, 0.0], [1.0, 0.0]])
        precisions = np.stack([np.diag([4.0, 1.0]), np.diag([1.0, 4.0])])
        model = LabeledGMM(means, precisions, np.eye(2), [0.5, 0.5])
        pts = np.vstack([
            means[0] + rng.standard_normal((40, 2)) * [0.5, 1.0],
            means[1] + rng.standard_normal((40, 2)) * [1.0, 0.5],
        ])
        rot = np.array([[0.0, -1.0], [1.0, 0.0]])
        target = Dataset(pts @ rot.T, np.repeat([1, 2], 40))
        result = em_transfer(model, target)
        assert result.converged
        mapped = apply_transfer(result, target.points)
        assert np.mean(classify_batch(model, mapped) != target.labels) < 0.1


class TestApplyTransfer:
    def test_zero_padding_extends(self):
        H = identity_map(3, 2)
        np.testing.assert_allclose(apply_transfer(H, [4.0, 5.0]), [4.0, 5.0, 0.0])

    def test_zero_matrix(self):
        np.testing.assert_allclose(apply_transfer(np.zeros((2, 2)), [1.0, 2.0]), [0.0, 0.0])

    def test_hand_product(self):
        H = np.array([[2.0, 2.0], [3.0, 3.0]])
        np.testing.assert_allclose(apply_transfer(H, [1.0, 0.0]), [2.0, 3.0])


def test_em_iteration_scales_linearly_in_n():
    model = fig2_model()

    def one_iteration_seconds(n):
        target = toy_target(n, seed=12)
        best = np.inf
        for _ in range(3):
            start = time.perf_counter()
            gamma = e_step(model, identity_map(2, 2), target)
            m_step_closed_form(model, target, gamma, ridge=1e-8)
            best = min(best, time.perf_counter() - start)
        return best

    one_iteration_seconds(2000)  # warm caches
    small = one_iteration_seconds(4000)
    large = one_iteration_seconds(8000)
    assert large < 3.0 * max(small, 1e-4)
