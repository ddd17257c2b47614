import json

import numpy as np
import pytest

from btucker import linalg
from btucker.decomp import (
    TuckerModel,
    btud_fit,
    core_regression,
    design_matrix,
    estimate_beta,
    hooi,
    hosvd_init,
    load_model,
    posterior_core_stats,
    posterior_stats,
    save_model,
    self_consistency_check,
)
from btucker.errors import DegenerateComponentError
from btucker.tensor import Tensor3, frobenius_norm, reconstruct, unfold


def random_tensor(dims, seed=0):
    rng = np.random.default_rng(seed)
    return Tensor3(rng.normal(size=dims))


def random_model(dims, ranks, seed=0):
    """Random Tucker model with orthonormal factor rows."""
    rng = np.random.default_rng(seed)
    factors = []
    for d, r in zip(dims, ranks):
        q, _ = np.linalg.qr(rng.normal(size=(d, r)))
        factors.append(q.T)
    core = rng.normal(size=ranks)
    return TuckerModel(core=core, u1=factors[0], u2=factors[1], u3=factors[2])


def separable_tensor(dims, seed=0):
    """Exactly rank-(1,1,1) tensor a x b x c with unit-norm factors."""
    rng = np.random.default_rng(seed)
    a, b, c = (rng.normal(size=d) for d in dims)
    a, b, c = a / np.linalg.norm(a), b / np.linalg.norm(b), c / np.linalg.norm(c)
    return Tensor3(3.0 * np.einsum("i,j,k->ijk", a, b, c)), (a, b, c)


class TestHosvdInit:
    def test_separable_rank_one(self):
        t, _ = separable_tensor((5, 4, 3), seed=1)
        model = hosvd_init(t, (1, 1, 1))
        err = frobenius_norm(Tensor3(t.values - reconstruct(model).values))
        assert err / frobenius_norm(t) < 1e-10

    def test_full_rank_exact(self):
        t = random_tensor((3, 3, 3), seed=2)
        model = hosvd_init(t, (3, 3, 3))
        err = frobenius_norm(Tensor3(t.values - reconstruct(model).values))
        assert err / frobenius_norm(t) < 1e-10

    def test_factor_rows_orthonormal(self):
        t = random_tensor((5, 4, 3), seed=3)
        model = hosvd_init(t, (2, 2, 2))
        for u in (model.u1, model.u2, model.u3):
            assert np.max(np.abs(u @ u.T - np.eye(u.shape[0]))) < 1e-10

    def test_rank_bounds(self):
        t = random_tensor((3, 3, 3))
        with pytest.raises(ValueError):
            hosvd_init(t, (4, 1, 1))


class TestHooi:
    def test_exactly_low_rank_recovery(self):
        t, _ = separable_tensor((6, 5, 4), seed=4)
        model, report = hooi(t, (1, 1, 1))
        assert report.converged
        assert report.residual_history[-1] <= 1e-8

    def test_residual_history_non_increasing(self):
        t = random_tensor((10, 8, 6), seed=5)
        _, report = hooi(t, (3, 3, 3))
        diffs = np.diff(report.residual_history)
        assert np.all(diffs <= 1e-7)

    def test_improves_on_hosvd(self):
        t = random_tensor((10, 8, 6), seed=6)
        _, report = hooi(t, (3, 2, 2))
        # history[0] is the HOSVD-initialized error
        assert report.residual_history[-1] <= report.residual_history[0] + 1e-12

    def test_factor_orthonormality(self):
        t = random_tensor((8, 7, 6), seed=7)
        model, _ = hooi(t, (3, 3, 2))
        for u in (model.u1, model.u2, model.u3):
            assert np.max(np.abs(u @ u.T - np.eye(u.shape[0]))) < 1e-8

    def test_parameter_validation(self):
        t = random_tensor((3, 3, 3))
        with pytest.raises(ValueError):
            hooi(t, (2, 2, 2), max_iter=0)
        with pytest.raises(ValueError):
            hooi(t, (2, 2, 2), tol=0.0)


class TestDesignMatrix:
    def test_rank_one_constant_closed_form(self):
        n, m, k = 3, 4, 5
        model = TuckerModel(
            core=np.ones((1, 1, 1)),
            u1=np.full((1, n), 1 / np.sqrt(n)),
            u2=np.full((1, m), 1 / np.sqrt(m)),
            u3=np.full((1, k), 1 / np.sqrt(k)),
        )
        phi = design_matrix(model, 1)
        assert phi.shape == (m * k, 1)
        assert np.allclose(phi, 1 / np.sqrt(m * k), atol=1e-14)

    @pytest.mark.parametrize("mode", [1, 2, 3])
    def test_brute_force_loop_oracle(self, mode):
        model = random_model((5, 4, 3), (2, 3, 2), seed=8)
        phi = design_matrix(model, mode)
        core, u1, u2, u3 = model.core, model.u1, model.u2, model.u3
        n, m, k = model.dims
        if mode == 1:
            expected = np.zeros((m * k, 2))
            for j in range(m):
                for kk in range(k):
                    for a in range(2):
                        expected[j + m * kk, a] = sum(
                            core[a, b, c] * u2[b, j] * u3[c, kk]
                            for b in range(3)
                            for c in range(2)
                        )
        elif mode == 2:
            expected = np.zeros((n * k, 3))
            for i in range(n):
                for kk in range(k):
                    for b in range(3):
                        expected[i + n * kk, b] = sum(
                            core[a, b, c] * u1[a, i] * u3[c, kk]
                            for a in range(2)
                            for c in range(2)
                        )
        else:
            expected = np.zeros((n * m, 2))
            for i in range(n):
                for j in range(m):
                    for c in range(2):
                        expected[i + n * j, c] = sum(
                            core[a, b, cc] * u1[a, i] * u2[b, j]
                            for a in range(2)
                            for b in range(3)
                            for cc in [c]
                        )
        assert np.max(np.abs(phi - expected)) < 1e-12

    def test_regression_consistency_identity(self):
        # unfold(reconstruct(model), 1) == u1^T @ phi^T
        model = random_model((6, 5, 4), (2, 2, 3), seed=9)
        phi = design_matrix(model, 1)
        lhs = unfold(reconstruct(model), 1)
        rhs = model.u1.T @ phi.T
        assert np.max(np.abs(lhs - rhs)) < 1e-10


class TestCoreRegression:
    def test_recovers_core_from_exact_model(self):
        model = random_model((5, 4, 3), (2, 2, 2), seed=10)
        t = reconstruct(model)
        got = core_regression(t, model.u1, model.u2, model.u3)
        assert np.max(np.abs(got - model.core)) < 1e-10

    def test_scalar_case(self):
        u1 = np.array([[1.0]])
        u2 = np.array([[-1.0]])
        u3 = np.array([[1.0]])
        t = Tensor3(np.array([[[4.0]]]))
        got = core_regression(t, u1, u2, u3)
        assert np.isclose(got[0, 0, 0], -4.0, atol=1e-14)

    def test_projection_equals_pseudoinverse_path(self):
        model = random_model((4, 3, 3), (2, 2, 2), seed=11)
        t = random_tensor((4, 3, 3), seed=12)
        fast = core_regression(t, model.u1, model.u2, model.u3)
        # literal regression on the Kronecker design (oracle)
        a = np.kron(model.u3.T, np.kron(model.u2.T, model.u1.T))
        g, *_ = np.linalg.lstsq(a, t.values.ravel(order="F"), rcond=None)
        assert np.max(np.abs(fast - g.reshape((2, 2, 2), order="F"))) < 1e-9

    def test_non_orthonormal_factors_fall_back(self):
        rng = np.random.default_rng(13)
        t = random_tensor((4, 4, 4), seed=14)
        u1 = rng.normal(size=(2, 4))
        u2 = rng.normal(size=(2, 4))
        u3 = rng.normal(size=(2, 4))
        got = core_regression(t, u1, u2, u3)
        a = np.kron(u3.T, np.kron(u2.T, u1.T))
        g, *_ = np.linalg.lstsq(a, t.values.ravel(order="F"), rcond=None)
        assert np.max(np.abs(got - g.reshape((2, 2, 2), order="F"))) < 1e-9


class TestPosteriorStats:
    def test_self_consistency_on_exact_model(self):
        model = random_model((6, 5, 4), (2, 2, 2), seed=15)
        t = reconstruct(model)
        for mode in (1, 2, 3):
            mean, _ = posterior_stats(t, model, mode, alpha=0.0, beta=1.0)
            u = model.factor(mode)
            flips = np.where(np.sum(mean * u, axis=1) < 0, -1.0, 1.0)
            assert np.max(np.abs(mean * flips[:, None] - u)) < 1e-9

    def test_large_alpha_shrinks_mean(self):
        model = random_model((5, 4, 3), (2, 2, 2), seed=16)
        t = random_tensor((5, 4, 3), seed=17)
        mean, _ = posterior_stats(t, model, 1, alpha=1e12, beta=1.0)
        assert np.max(np.abs(mean)) < 1e-6

    def test_single_column_least_squares(self):
        # L1 = 1: mean_i = <phi, x_i> / <phi, phi>
        model = random_model((5, 4, 3), (1, 1, 1), seed=18)
        t = random_tensor((5, 4, 3), seed=19)
        mean, _ = posterior_stats(t, model, 1, alpha=0.0, beta=1.0)
        phi = design_matrix(model, 1)[:, 0]
        x1 = unfold(t, 1)
        expected = x1 @ phi / (phi @ phi)
        assert np.max(np.abs(mean[0] - expected)) < 1e-10

    def test_cov_shape_and_symmetry(self):
        model = random_model((5, 4, 3), (2, 2, 2), seed=20)
        t = random_tensor((5, 4, 3), seed=21)
        for mode, l in ((1, 2), (2, 2), (3, 2)):
            _, cov = posterior_stats(t, model, mode, alpha=0.5, beta=2.0)
            assert cov.shape == (l, l)
            assert np.max(np.abs(cov - cov.T)) < 1e-12
            assert np.all(np.linalg.eigvalsh(cov) > -1e-10)

    def test_beta_validation(self):
        model = random_model((4, 3, 3), (1, 1, 1))
        t = random_tensor((4, 3, 3))
        with pytest.raises(ValueError):
            posterior_stats(t, model, 1, alpha=0.0, beta=0.0)


class TestPosteriorCoreStats:
    def test_mean_matches_core_on_exact_model(self):
        model = random_model((5, 4, 4), (2, 2, 2), seed=22)
        t = reconstruct(model)
        mean, _ = posterior_core_stats(t, model, alpha=0.0, beta=1.0)
        assert np.max(np.abs(mean - model.core)) < 1e-9

    def test_cov_is_identity_over_beta_for_orthonormal_factors(self):
        model = random_model((5, 4, 4), (2, 2, 2), seed=23)
        t = random_tensor((5, 4, 4), seed=24)
        beta = 2.5
        _, cov = posterior_core_stats(t, model, alpha=0.0, beta=beta)
        assert np.max(np.abs(cov - np.eye(8) / beta)) < 1e-9

    def test_large_alpha_shrinks_core_mean(self):
        model = random_model((5, 4, 4), (2, 2, 2), seed=25)
        t = random_tensor((5, 4, 4), seed=26)
        mean, _ = posterior_core_stats(t, model, alpha=1e12, beta=1.0)
        assert np.max(np.abs(mean)) < 1e-6

    def test_ridge_cov_identity_for_orthonormal_design(self):
        # orthonormal factor grams: S = I / (alpha + beta)
        model = random_model((5, 4, 4), (2, 2, 2), seed=47)
        t = random_tensor((5, 4, 4), seed=48)
        alpha, beta = 0.7, 1.9
        _, cov = posterior_core_stats(t, model, alpha=alpha, beta=beta)
        assert np.max(np.abs(cov - np.eye(8) / (alpha + beta))) < 1e-9


class TestEstimateBeta:
    def test_unit_residuals(self):
        model = random_model((4, 4, 4), (1, 1, 1), seed=27)
        recon = reconstruct(model).values
        signs = np.where(np.arange(64).reshape(4, 4, 4) % 2 == 0, 1.0, -1.0)
        t = Tensor3(recon + signs)
        assert np.isclose(estimate_beta(t, model), 1.0, rtol=1e-12)

    def test_exact_fit_cap(self):
        model = random_model((4, 4, 4), (2, 2, 2), seed=28)
        t = reconstruct(model)
        assert estimate_beta(t, model) == 1e12

    def test_naive_loop_oracle(self):
        model = random_model((4, 3, 3), (2, 2, 2), seed=29)
        t = random_tensor((4, 3, 3), seed=30)
        recon = reconstruct(model).values
        ssq = 0.0
        for i in range(4):
            for j in range(3):
                for k in range(3):
                    ssq += (t.values[i, j, k] - recon[i, j, k]) ** 2
        assert np.isclose(estimate_beta(t, model), t.values.size / ssq, rtol=1e-12)


class TestBtudFit:
    def test_converges_immediately_from_hooi(self):
        t = random_tensor((10, 8, 6), seed=31)
        init, _ = hooi(t, (2, 2, 2), max_iter=2000, tol=1e-10, factor_tol=1e-9)
        _, _, report = btud_fit(t, init, alpha=0.0, max_sweeps=10, tol=1e-6)
        assert report.converged
        assert report.sweeps <= 1

    def test_exactly_low_rank_small_residual(self):
        t, _ = separable_tensor((6, 5, 4), seed=32)
        init = hosvd_init(t, (1, 1, 1))
        model, _, report = btud_fit(t, init, alpha=0.0, max_sweeps=20, tol=1e-8)
        assert report.residual_history[-1] <= 1e-6

    def test_residual_history_non_increasing(self):
        t = random_tensor((8, 6, 5), seed=33)
        init = hosvd_init(t, (3, 2, 2))
        _, _, report = btud_fit(t, init, alpha=0.0, max_sweeps=5, tol=1e-10)
        assert np.all(np.diff(report.residual_history) <= 1e-7)

    def test_factor_orthonormality_after_fit(self):
        t = random_tensor((8, 6, 5), seed=34)
        init = hosvd_init(t, (2, 2, 2))
        model, _, _ = btud_fit(t, init, alpha=0.0, max_sweeps=3, tol=1e-10)
        for u in (model.u1, model.u2, model.u3):
            assert np.max(np.abs(u @ u.T - np.eye(u.shape[0]))) < 1e-8

    def test_ridge_branch_shrinks_low_signal_rows(self):
        # alpha >> data scale: coefficient rows shrink before normalization;
        # property check is that the fit still runs and stays orthonormal
        t = random_tensor((6, 5, 4), seed=35)
        init = hosvd_init(t, (2, 2, 2))
        model, stats, _ = btud_fit(t, init, alpha=10.0, max_sweeps=2, tol=1e-10)
        assert stats.alpha == 10.0
        for u in (model.u1, model.u2, model.u3):
            assert np.max(np.abs(u @ u.T - np.eye(u.shape[0]))) < 1e-8

    def test_degenerate_component_error(self):
        # all-zero tensor: the first regression returns a zero row
        t = Tensor3(np.zeros((4, 4, 4)))
        init = random_model((4, 4, 4), (2, 2, 2), seed=36)
        with pytest.raises(DegenerateComponentError):
            btud_fit(t, init, alpha=0.0, max_sweeps=1, tol=1e-8)


class TestSelfConsistency:
    def test_converged_hooi_is_consistent(self):
        t = random_tensor((12, 9, 7), seed=37)
        model, _ = hooi(t, (3, 2, 2), max_iter=3000, tol=1e-12, factor_tol=1e-9)
        beta = estimate_beta(t, model)
        check = self_consistency_check(t, model, alpha=0.0, beta=beta, tol=1e-6)
        assert check.self_consistent

    def test_perturbed_model_fails(self):
        t = random_tensor((12, 9, 7), seed=38)
        model, _ = hooi(t, (3, 2, 2), max_iter=2000, tol=1e-10, factor_tol=1e-9)
        u1 = model.u1.copy()
        rng = np.random.default_rng(39)
        u1 += 0.1 * rng.normal(size=u1.shape)
        for row in range(u1.shape[0]):
            u1 = linalg.orthonormalize_rows(u1, row)
        perturbed = TuckerModel(core=model.core, u1=u1, u2=model.u2, u3=model.u3)
        beta = estimate_beta(t, perturbed)
        check = self_consistency_check(t, perturbed, alpha=0.0, beta=beta, tol=1e-6)
        assert not check.self_consistent

    def test_exact_separable_model(self):
        t, (a, b, c) = separable_tensor((6, 5, 4), seed=40)
        model = TuckerModel(
            core=np.array([[[3.0]]]), u1=a[None, :], u2=b[None, :], u3=c[None, :]
        )
        check = self_consistency_check(t, model, alpha=0.0, beta=1.0, tol=1e-6)
        assert check.self_consistent
        assert check.max_mode_deviation <= 1e-10
        assert check.core_deviation <= 1e-10


class TestModelSerialization:
    def test_round_trip_exact(self, tmp_path):
        t = random_tensor((6, 5, 4), seed=41)
        model, report = hooi(t, (2, 2, 2))
        path = tmp_path / "model.json"
        save_model(model, path, beta=3.5, alpha=0.0, report=report)
        back, meta = load_model(path)
        assert np.array_equal(back.core, model.core)
        assert np.array_equal(back.u1, model.u1)
        assert np.array_equal(back.u2, model.u2)
        assert np.array_equal(back.u3, model.u3)
        assert meta["beta"] == 3.5
        assert meta["fit_report"]["sweeps"] == report.sweeps

    def test_json_is_plain_document(self, tmp_path):
        model = random_model((4, 3, 3), (1, 1, 1), seed=42)
        path = tmp_path / "model.json"
        save_model(model, path)
        doc = json.load(open(path))
        assert doc["ranks"] == [1, 1, 1]
        assert len(doc["core"]) == 1
