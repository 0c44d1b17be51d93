"""Flow engine: schemes, inverses, Jacobians, and the volume identity."""

import numpy as np
import pytest

from stochtrans import brownian, fields, flow
from stochtrans.errors import DivergenceError, ValidationError
from stochtrans.fields import DriftField


def _linear_field(matrix):
    A = np.asarray(matrix, dtype=float)

    def ev(t, x):
        return np.einsum("ij,...j->...i", A, np.asarray(x, dtype=float))

    def grad(t, x):
        x = np.asarray(x, dtype=float)
        return np.broadcast_to(A, x.shape[:-1] + A.shape).copy()

    def div(t, x):
        x = np.asarray(x, dtype=float)
        return np.full(x.shape[:-1], float(np.trace(A)))

    return DriftField(A.shape[0], ev, grad, div, "smooth_bounded", "linear")


class TestForward:
    def test_zero_drift_deterministic(self):
        zf = fields.zero_field(2)
        res = flow.integrate_forward(zf, [0.4, -0.7], t=1.0, n_steps=32,
                                     with_jacobian=True)
        assert np.all(res.states == np.array([0.4, -0.7]))
        assert np.all(res.jacobians == np.eye(2))

    def test_zero_drift_is_translation_by_path(self):
        zf = fields.zero_field(2)
        p = brownian.generate(1, 0, 2, 1.0, 64)
        res = flow.integrate_forward(zf, [0.0, 0.0], path=p)
        np.testing.assert_array_equal(res.states[1:], p.values[1:])

    def test_counterexample_first_order_convergence(self):
        ce = fields.counterexample_field()
        target = np.array(fields.analytic_flow(1.0, 1.0, 1.0))
        errors = []
        for n in (512, 1024, 2048):
            res = flow.integrate_forward(ce, [1.0, 1.0], t=1.0, n_steps=n)
            errors.append(np.linalg.norm(res.final_state - target))
        for coarse, fine in zip(errors, errors[1:]):
            assert coarse / fine == pytest.approx(2.0, abs=0.3)

    def test_divergence_error_carries_escape_time(self):
        cf = fields.constant_field([1.0, 0.0])
        with pytest.raises(DivergenceError) as err:
            flow.integrate_forward(cf, [0.0, 0.0], t=1.0, n_steps=100,
                                   bbox_radius=0.5)
        # crossing happens at t = 0.5; escape is flagged within one step of it
        assert err.value.escape_time == pytest.approx(0.5, abs=0.011)

    def test_scheme_validation(self):
        zf = fields.zero_field(2)
        with pytest.raises(ValidationError):
            flow.integrate_forward(zf, [0.0, 0.0], t=1.0, n_steps=4,
                                   scheme="milstein")

    def test_path_grid_alignment_required(self):
        zf = fields.zero_field(2)
        p = brownian.generate(1, 0, 2, 1.0, 10)
        with pytest.raises(ValidationError):
            flow.integrate_forward(zf, [0.0, 0.0], path=p, t=0.55)
        with pytest.raises(ValidationError):
            flow.integrate_forward(zf, [0.0, 0.0], path=p, t=1.5)


class TestInverse:
    def test_trivial_cases(self):
        zf = fields.zero_field(2)
        out = flow.integrate_inverse(zf, [0.3, 0.3], t=1.0, n_steps=8)
        np.testing.assert_array_equal(out, [0.3, 0.3])
        p = brownian.generate(2, 1, 2, 1.0, 32)
        out = flow.integrate_inverse(zf, [0.3, 0.3], t=1.0, path=p)
        np.testing.assert_allclose(out, np.array([0.3, 0.3]) - p.values[-1],
                                   atol=1e-14)

    def test_round_trip_error_bound(self):
        field = fields.gaussian_bump_field(2, [0.8, -0.6], 0.9)
        rng = np.random.default_rng(0)
        t, n = 1.0, 256
        h = t / n
        for case in range(100):
            x = rng.uniform(-1.5, 1.5, 2)
            p = brownian.generate(3, case, 2, t, n)
            fwd = flow.integrate_forward(field, x, path=p).final_state
            back = flow.inverse_points(field, fwd[None, :], t, path=p)[0][0]
            bound = 5.0 * np.sqrt(h) * (1.0 + np.linalg.norm(x))
            assert np.linalg.norm(back - x) <= bound

    def test_flow_composition_property(self):
        # one run over [0, T] equals the two-stage run split at T/2, same path
        field = fields.gaussian_bump_field(2, [0.5, 0.7], 0.8)
        p = brownian.generate(4, 2, 2, 1.0, 128)
        x = np.array([0.2, -0.3])
        full = flow.integrate_forward(field, x, path=p).final_state
        half = flow.integrate_forward(field, x, path=p, t=0.5).final_state
        second = flow.integrate_forward(
            field, half, path=p, start_step=64
        ).final_state
        assert np.max(np.abs(full - second)) <= 1e-10


class TestJacobians:
    def test_identity_cases(self):
        zf = fields.zero_field(2)
        p = brownian.generate(5, 0, 2, 1.0, 16)
        np.testing.assert_array_equal(
            flow.jacobian_inverse_flow(zf, [0.1, 0.2], 0.0, path=p), np.eye(2)
        )
        np.testing.assert_array_equal(
            flow.jacobian_inverse_flow(zf, [0.1, 0.2], 1.0, path=p), np.eye(2)
        )

    def test_counterexample_matches_closed_form(self):
        ce = fields.counterexample_field()
        t, n = 1.0, 10_000
        start = np.array([0.5, 1.0])
        image = np.array(fields.analytic_flow(t, start[0], start[1]))
        numeric = flow.jacobian_inverse_flow(ce, image, t, n_steps=n)
        # closed form is laid out start-variable x component; transpose to compare
        analytic = fields.analytic_jacobian_inverse(t, start[0], start[1]).T
        np.testing.assert_allclose(numeric, analytic, atol=1e-3)

    def test_variational_jacobian_matches_finite_differences(self):
        field = fields.gaussian_bump_field(2, [0.8, -0.6], 0.9)
        x = np.array([0.3, -0.2])
        t, n = 1.0, 10_000
        res = flow.integrate_forward(field, x, t=t, n_steps=n, with_jacobian=True)
        delta = 1e-5
        fd = np.empty((2, 2))
        for j in range(2):
            dx = np.zeros(2)
            dx[j] = delta
            plus = flow.integrate_forward(field, x + dx, t=t, n_steps=n).final_state
            minus = flow.integrate_forward(field, x - dx, t=t, n_steps=n).final_state
            fd[:, j] = (plus - minus) / (2 * delta)
        np.testing.assert_allclose(res.final_jacobian, fd, atol=1e-4)

    def test_orientation_preserved(self):
        field = fields.gaussian_bump_field(2, [0.9, 0.7], 0.6)
        for sid in range(5):
            p = brownian.generate(6, sid, 2, 1.0, 128)
            res = flow.integrate_forward(field, [0.1, 0.1], path=p,
                                         with_jacobian=True)
            dets = np.linalg.det(res.jacobians)
            assert np.all(dets > 0.0)

    def test_singular_jacobian_detected(self):
        stiff = _linear_field([[-60.0, 0.0], [0.0, 60.0]])
        with pytest.raises(flow.SingularInputError):
            flow.jacobian_inverse_flow(stiff, [0.0, 0.0], 0.6, n_steps=6000)


class TestEulerIdentity:
    def test_zero_field_exact(self):
        zf = fields.zero_field(2)
        assert flow.euler_identity_residual(zf, [0.0, 0.0], 1.0, n_steps=100) == 0.0

    def test_divergence_free_rotation(self):
        rot = fields.rotation_field()
        resid = flow.euler_identity_residual(
            rot, [1.0, 0.0], 1.0, n_steps=1000, scheme="heun"
        )
        assert resid <= 1e-4

    def test_counterexample_first_order_decay(self):
        ce = fields.counterexample_field()
        residuals = [
            flow.euler_identity_residual(ce, [0.5, 1.0], 1.0, n_steps=n)
            for n in (256, 512, 1024)
        ]
        for coarse, fine in zip(residuals, residuals[1:]):
            assert coarse / fine == pytest.approx(2.0, abs=0.3)

    def test_with_noise_on_bump_field(self):
        field = fields.gaussian_bump_field(2, [0.4, 0.3], 0.8)
        p = brownian.generate(7, 0, 2, 1.0, 512)
        resid = flow.euler_identity_residual(field, [0.2, 0.1], 1.0, path=p)
        assert np.isfinite(resid) and resid < 0.05


def _coarsen(path, stride):
    return brownian.BrownianPath(
        path.dim, path.horizon, path.values[::stride], path.seed, path.stream_id
    )


class TestStrongOrder:
    def test_deterministic_first_order(self):
        field = fields.gaussian_bump_field(2, [0.8, -0.5], 0.7)
        x = [0.2, 0.1]
        ref = flow.integrate_forward(field, x, t=1.0, n_steps=64 * 64).final_state
        errs, hs = [], []
        for n in (16, 32, 64):
            out = flow.integrate_forward(field, x, t=1.0, n_steps=n).final_state
            errs.append(np.linalg.norm(out - ref))
            hs.append(1.0 / n)
        slope = np.polyfit(np.log(hs), np.log(errs), 1)[0]
        assert slope == pytest.approx(1.0, abs=0.15)

    def test_noisy_error_decays_at_least_like_sqrt_h(self):
        # additive noise: the scheme is guaranteed at least order 1/2 (and is
        # empirically first order on smooth fields); assert the floor
        field = fields.gaussian_bump_field(2, [0.8, -0.5], 0.7)
        x = [0.2, 0.1]
        slopes = []
        for sid in range(3):
            fine = brownian.generate(8, sid, 2, 1.0, 64 * 64)
            ref = flow.integrate_forward(field, x, path=fine).final_state
            errs, hs = [], []
            for n in (16, 32, 64):
                coarse = _coarsen(fine, (64 * 64) // n)
                out = flow.integrate_forward(field, x, path=coarse).final_state
                errs.append(np.linalg.norm(out - ref))
                hs.append(1.0 / n)
            slopes.append(np.polyfit(np.log(hs), np.log(errs), 1)[0])
        assert np.median(slopes) >= 0.5 - 0.15
