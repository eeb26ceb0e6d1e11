import numpy as np
import pytest

from evolgrad import presets
from evolgrad.conditions import (
    SampleRegion,
    algebraic_residual,
    algebraic_tensor,
    check_algebraic,
    check_ellipticity,
    check_lyapunov,
    dissipativity_matrix,
    estimate_c0,
    run_checks,
    sample_points,
)
from evolgrad.linalg import jacobi_eigvalsh, lambda_max, lambda_min, sym_eigvalsh
from evolgrad.operator import build_operator, eval_at


class TestLinalg:
    @pytest.mark.parametrize("d", [1, 2, 3, 4])
    def test_matches_numpy(self, d):
        rng = np.random.default_rng(d)
        a = rng.normal(size=(200, d, d))
        a = a + np.swapaxes(a, -1, -2)
        np.testing.assert_allclose(sym_eigvalsh(a), np.linalg.eigvalsh(a), atol=1e-12)

    def test_near_degenerate_3x3(self):
        # eigenvalues 1, 1 + 1e-9, 2 defeat the trigonometric formula
        rng = np.random.default_rng(3)
        q, _ = np.linalg.qr(rng.normal(size=(3, 3)))
        a = q @ np.diag([1.0, 1.0 + 1e-9, 2.0]) @ q.T
        np.testing.assert_allclose(sym_eigvalsh(a[None])[0], [1.0, 1.0 + 1e-9, 2.0], atol=1e-13)
        assert lambda_min(a[None])[0] == pytest.approx(1.0, abs=1e-13)
        assert lambda_max(a[None])[0] == pytest.approx(2.0, abs=1e-13)

    def test_jacobi_diagonal_input(self):
        np.testing.assert_array_equal(jacobi_eigvalsh(np.diag([3.0, 1.0, 2.0])), [1.0, 2.0, 3.0])


class TestSampling:
    def test_counts_and_bounds(self):
        region = SampleRegion.cube(2.0, (1.0, 2.0), 2, n_space=5, n_time=3, n_random=10)
        t, x = sample_points(region)
        assert len(t) == 3 * 25 + 10
        assert x.shape == (85, 2)
        assert np.all((t >= 1) & (t <= 2)) and np.all(np.abs(x) <= 2)

    def test_seeded(self):
        region = SampleRegion.cube(1.0, (0.0, 1.0), 3, seed=5)
        np.testing.assert_array_equal(sample_points(region)[1], sample_points(region)[1])

    @pytest.mark.parametrize(
        "kwargs",
        [
            dict(t_range=(0, 1), lo=(0.0,), hi=(0.0,), space_counts=(3,)),
            dict(t_range=(1, 0), lo=(0.0,), hi=(1.0,), space_counts=(3,)),
            dict(t_range=(0, 1), lo=(0.0,), hi=(1.0,), space_counts=(1,)),
            dict(t_range=(0, 1), lo=(0.0, 0.0), hi=(1.0,), space_counts=(3,)),
        ],
    )
    def test_invalid_region(self, kwargs):
        with pytest.raises(ValueError):
            SampleRegion(**kwargs)


class TestAlgebraic:
    def test_tensor_symmetrizes(self):
        rng = np.random.default_rng(0)
        dq = rng.normal(size=(3, 3, 3))
        dq = dq + np.swapaxes(dq, -1, -2)
        t = algebraic_tensor(dq)
        np.testing.assert_allclose(t, np.transpose(t, (1, 0, 2)))
        np.testing.assert_allclose(t, np.transpose(t, (2, 1, 0)))

    def test_example41_satisfies(self):
        op = presets.build("example41")
        assert algebraic_residual(op, 1.0, [0.4, -1.3, 0.8]) == 0.0

    def test_scalar_diffusion_fails(self):
        op = presets.build("wang-counterexample")
        # T_111 = 3 D_1 q_11 = 6 x1, T_122 = 2 x1
        assert algebraic_residual(op, 1.0, [1.5, 0.0]) == pytest.approx(9.0)
        report = check_algebraic(op, SampleRegion.cube(2.0, (1.0, 2.0), 2))
        assert not report.passed
        assert report.extremal == pytest.approx(12.0)
        assert abs(report.witness_x[0]) == 2.0


class TestC0:
    def test_ou_closed_form(self):
        op = presets.build("ou", {"kappa": 2.5})
        report = estimate_c0(op, SampleRegion.cube(3.0, (0.0, 1.0), 1))
        assert report.extremal == pytest.approx(-2.5, abs=1e-14)

    @pytest.mark.parametrize("params", [{}, {"psi": 0.5, "gamma": 4}, {"a1": 2, "a2": 3, "a3": 1.5, "beta": 2}])
    def test_example41_pointwise_bound(self, params):
        # lambda_max(M) <= (2 psi^2 / abar)|x|^2 - gamma |x|^(2 beta) with eta = abar
        merged = {**presets.get("example41").defaults, **params}
        op = presets.build("example41", params)
        abar = min(float(merged[k]) for k in ("a1", "a2", "a3"))
        psi, gamma, beta = (float(merged[k]) for k in ("psi", "gamma", "beta"))
        rng = np.random.default_rng(11)
        for x in rng.uniform(-2, 2, size=(100, 3)):
            m = dissipativity_matrix(op, 1.0, x, "user-expression")
            r2 = float(x @ x)
            bound = 2 * psi**2 / abar * r2 - gamma * r2**beta
            assert np.linalg.eigvalsh(m)[-1] <= bound + 1e-12 * max(1.0, abs(bound))

    def test_degenerate_eta_rejected(self):
        op = build_operator("[meta]\nd=1\n[diffusion]\nq11=x1^2\n[drift]\nb1=0\n")
        with pytest.raises(ValueError, match="degenerate"):
            estimate_c0(op, SampleRegion.cube(1.0, (0.0, 1.0), 1, n_space=3, n_random=0))

    def test_user_eta_requires_entry(self):
        op = presets.build("ou")
        op_no_eta = build_operator(op.source.split("[ellipticity]")[0])
        with pytest.raises(ValueError):
            estimate_c0(op_no_eta, SampleRegion.cube(1.0, (0.0, 1.0), 1), eta_mode="user-expression")


class TestEllipticityAndLyapunov:
    def test_ellipticity_of_wang(self):
        report = check_ellipticity(presets.build("wang-counterexample"), SampleRegion.cube(2.0, (1.0, 2.0), 2))
        assert report.passed and report.extremal == 1.0
        assert report.details["user_eta_admissible"]

    def test_lyapunov_violation_reported(self):
        op = presets.build("heat")
        report = check_lyapunov(op, op.parse("1 + norm2(x)"), 1.0, SampleRegion.cube(1.0, (0.0, 1.0), 1))
        assert not report.passed
        assert report.extremal == pytest.approx(2.0)

    def test_lyapunov_positive_phi_required(self):
        op = presets.build("heat")
        with pytest.raises(ValueError, match="not positive"):
            check_lyapunov(op, op.parse("x1"), 1.0, SampleRegion.cube(1.0, (0.0, 1.0), 1))

    @pytest.mark.parametrize("name", presets.names())
    def test_presets_match_expected(self, name):
        preset = presets.get(name)
        op = presets.build(name)
        region = SampleRegion.cube(2.0, (1.0, 2.0), op.dimension, n_space=7, n_time=3, n_random=200)
        reports = run_checks(op, region, eta_mode=preset.eta_mode)
        for r in reports:
            if r.condition in preset.expected:
                assert r.passed == preset.expected[r.condition], r.condition
        if preset.expected_c0 is not None:
            assert reports[2].extremal == pytest.approx(preset.expected_c0, abs=1e-9)

    def test_point_evaluation_eta_is_lambda_min(self):
        pe = eval_at(presets.build("example41"), 1.0, [1.0, 1.0, 0.0])
        assert pe.eta == pytest.approx(1.0, abs=1e-14)
