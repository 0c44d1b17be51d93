"""Representation solver, weak form, commutator, comparison, local norms."""

import numpy as np
import pytest

from stochtrans import brownian, fields, transport
from stochtrans.errors import ResolutionError, ValidationError
from stochtrans.grids import Grid
from stochtrans.transport import ReliabilityWarning


@pytest.fixture(scope="module")
def rotation():
    return fields.rotation_field(flat_radius=1.8, fade_radius=2.6)


@pytest.fixture(scope="module")
def bump_field():
    return fields.gaussian_bump_field(2, [0.5, -0.4], 0.9)


class TestSolve:
    def test_time_zero_reproduces_datum(self):
        zf = fields.zero_field(2)
        u0 = fields.gaussian_datum((0.0, 0.0), 0.5)
        grid = Grid.regular([-1, -1], [1, 1], [21, 21])
        sol = transport.solve(zf, u0, 0.0, grid)
        np.testing.assert_array_equal(sol.values, u0.eval(grid.points()))
        assert np.all(sol.mask)

    def test_zero_drift_translates(self):
        zf = fields.zero_field(2)
        u0 = fields.gaussian_datum((0.0, 0.0), 0.5)
        grid = Grid.regular([-2, -2], [2, 2], [33, 33])
        p = brownian.generate(3, 0, 2, 0.5, 64)
        sol = transport.solve(zf, u0, 0.5, grid, path=p)
        expected = u0.eval(grid.points() - p.values[-1])
        np.testing.assert_allclose(sol.values, expected, atol=1e-13)

    def test_quarter_turn_matches_rotated_datum(self, rotation):
        u0 = fields.cos2_bump_datum((0.6, 0.0), 0.5)
        grid = Grid.regular([-1.5, -1.5], [1.5, 1.5], [41, 41])
        theta = np.pi / 2.0
        sol = transport.solve(rotation, u0, theta, grid, n_steps=4000)
        rot_back = np.array(
            [[np.cos(theta), np.sin(theta)], [-np.sin(theta), np.cos(theta)]]
        )
        expected = u0.eval(grid.points() @ rot_back.T)
        assert np.max(np.abs(sol.values - expected)) <= 1e-3

    def test_maximum_principle(self):
        ce = fields.counterexample_field()
        u0 = fields.blowup_seed_datum()
        grid = Grid.regular([-2, -2], [2, 2], [25, 25])
        fine = Grid.regular([0, 0], [2, 2], [801, 801])
        sup0 = np.max(np.abs(u0.eval(fine.points())))
        for sid in range(3):
            p = brownian.generate(5, sid, 2, 1.0, 128)
            sol = transport.solve(ce, u0, 1.0, grid, path=p)
            assert np.max(np.abs(sol.values)) <= sup0 + 1e-12

    def test_dimension_mismatch_rejected(self):
        zf = fields.zero_field(2)
        u0 = fields.gaussian_datum((0.0,), 0.5)
        grid = Grid.regular([-1, -1], [1, 1], [5, 5])
        with pytest.raises(ValidationError):
            transport.solve(zf, u0, 1.0, grid, n_steps=4)


class TestWeakForm:
    def setup_method(self):
        self.u0 = fields.cos2_bump_datum((0.5, 0.0), 0.6)
        self.phi = fields.smooth_test_bump((0.0, 0.0), 1.4)
        self.grid = Grid.regular([-2.8, -2.8], [2.8, 2.8], [129, 129])

    def test_stationary_machine_zero(self):
        zf = fields.zero_field(2)
        rep = transport.weak_form_residual(
            zf, self.u0, self.phi, 0.5, self.grid, n_steps=16
        )
        assert abs(rep.residual) <= 1e-6

    def test_deterministic_first_order_decay(self, rotation):
        residuals = [
            abs(transport.weak_form_residual(
                rotation, self.u0, self.phi, 0.5, self.grid, n_steps=n
            ).residual)
            for n in (8, 16, 32, 64)
        ]
        for coarse, fine in zip(residuals, residuals[1:]):
            assert coarse / fine >= 1.8

    def test_noisy_monotone_decay_fixed_seed(self, bump_field):
        path = brownian.generate(14, 0, 2, 0.5, 32)
        residuals = []
        for level in range(4):
            rep = transport.weak_form_residual(
                bump_field, self.u0, self.phi, 0.5, self.grid, path=path
            )
            residuals.append(abs(rep.residual))
            if level < 3:
                path = brownian.refine(path)
        for coarse, fine in zip(residuals, residuals[1:]):
            assert coarse / fine >= 1.3

    def test_support_validation(self):
        small = Grid.regular([-1, -1], [1, 1], [33, 33])
        with pytest.raises(ValidationError):
            transport.weak_form_residual(
                fields.zero_field(2), self.u0, self.phi, 0.5, small, n_steps=4
            )


class TestCommutator:
    def test_constant_drift_vanishes(self):
        cf = fields.constant_field([0.7, -0.3])
        u = fields.gaussian_datum((0.0, 0.0), 0.5)
        val = transport.commutator_norm(
            cf, u, 0.2, 2.0, ([-1, -1], [1, 1]), 0.05
        )
        assert val <= 1e-8

    def test_smooth_case_decays_with_radius(self, rotation):
        u = fields.gaussian_datum((0.3, 0.0), 0.5)
        radii = [0.4, 0.2, 0.1, 0.05]
        vals = [
            transport.commutator_norm(
                rotation, u, e, 2.0, ([-1.2, -1.2], [1.2, 1.2]), 0.025
            )
            for e in radii
        ]
        slope = np.polyfit(np.log(radii), np.log(vals), 1)[0]
        assert slope >= 0.9

    def test_counterexample_diagnostic_regression(self):
        # no convergence claim; values pinned at first computation
        ce = fields.counterexample_field()
        seed = fields.blowup_seed_datum()
        v1 = transport.commutator_norm(
            ce, seed, 0.1, 3.0, ([0.2, 0.2], [1.4, 1.4]), 0.02
        )
        v2 = transport.commutator_norm(
            ce, seed, 0.05, 3.0, ([0.2, 0.2], [1.4, 1.4]), 0.02
        )
        assert v1 == pytest.approx(0.004867396152142085, rel=1e-9)
        assert v2 == pytest.approx(0.0013945050684397368, rel=1e-9)

    def test_resolution_guard(self):
        cf = fields.constant_field([1.0, 0.0])
        u = fields.gaussian_datum((0.0, 0.0), 0.5)
        with pytest.raises(ResolutionError):
            transport.commutator_norm(cf, u, 0.04, 2.0, ([-1, -1], [1, 1]), 0.05)

    def test_accepts_solution_field_input(self):
        zf = fields.zero_field(2)
        u0 = fields.gaussian_datum((0.0, 0.0), 0.5)
        grid = Grid.regular([-2, -2], [2, 2], [81, 81])
        sol = transport.solve(zf, u0, 0.0, grid)
        cf = fields.constant_field([0.5, 0.5])
        val = transport.commutator_norm(
            cf, sol, 0.3, 2.0, ([-0.8, -0.8], [0.8, 0.8]), 0.1
        )
        assert val <= 1e-6  # interpolation of a stationary field stays smooth


class TestComparison:
    def test_identical_data_exact(self, bump_field):
        u0 = fields.gaussian_datum((0.0, 0.0), 0.5)
        grid = Grid.regular([-1.5, -1.5], [1.5, 1.5], [21, 21])
        p = brownian.generate(1, 0, 2, 0.5, 64)
        violations, gap = transport.comparison_check(
            bump_field, u0, u0, 0.5, grid, path=p
        )
        assert violations == 0 and gap == 0.0

    def test_constant_offset(self, bump_field):
        low = fields.gaussian_datum((0.0, 0.0), 0.5)
        high = fields.constant_datum(1.5, dim=2)
        grid = Grid.regular([-1.5, -1.5], [1.5, 1.5], [21, 21])
        p = brownian.generate(2, 0, 2, 0.5, 64)
        violations, _ = transport.comparison_check(
            bump_field, low, high, 0.5, grid, path=p
        )
        assert violations == 0

    def test_ordered_pairs_over_twenty_seeds(self, bump_field):
        low = fields.gaussian_datum((0.1, 0.0), 0.4)
        high_fn = fields.gaussian_datum((0.1, 0.0), 0.7)  # wider dominates
        grid = Grid.regular([-1.5, -1.5], [1.5, 1.5], [17, 17])
        total = 0
        for sid in range(20):
            p = brownian.generate(7, sid, 2, 0.5, 64)
            violations, gap = transport.comparison_check(
                bump_field, low, high_fn, 0.5, grid, path=p
            )
            total += violations
            assert gap == 0.0
        assert total == 0

    def test_unordered_data_rejected(self, bump_field):
        low = fields.constant_datum(1.0, dim=2)
        high = fields.gaussian_datum((0.0, 0.0), 0.5)
        grid = Grid.regular([-1, -1], [1, 1], [9, 9])
        with pytest.raises(ValidationError):
            transport.comparison_check(bump_field, low, high, 0.5, grid,
                                       n_steps=8)


class TestLocalSobolevNorm:
    def test_constant_datum_zero(self):
        zf = fields.zero_field(2)
        u0 = fields.constant_datum(2.0, dim=2)
        grid = Grid.regular([-1, -1], [1, 1], [17, 17])
        sol = transport.solve(zf, u0, 0.5, grid, n_steps=8)
        assert transport.local_sobolev_norm(sol, 0.8, 2.0) == 0.0

    def test_translation_invariance(self):
        zf = fields.zero_field(2)
        u0 = fields.cos2_bump_datum((0.0, 0.0), 0.7)
        grid = Grid.regular([-2.5, -2.5], [2.5, 2.5], [201, 201])
        p = brownian.generate(4, 0, 2, 0.25, 32)
        sol = transport.solve(zf, u0, 0.25, grid, path=p)
        moved = transport.local_sobolev_norm(sol, 2.4, 2.0)
        ref_sol = transport.solve(zf, u0, 0.0, grid)
        ref = transport.local_sobolev_norm(ref_sol, 2.4, 2.0)
        assert moved == pytest.approx(ref, rel=1e-3)

    def test_rotation_preserves_l2_gradient_norm(self, rotation):
        u0 = fields.cos2_bump_datum((0.5, 0.0), 0.5)
        grid = Grid.regular([-1.6, -1.6], [1.6, 1.6], [101, 101])
        sol = transport.solve(rotation, u0, np.pi / 2, grid, n_steps=500,
                              scheme="heun")
        ref_sol = transport.solve(rotation, u0, 0.0, grid)
        turned = transport.local_sobolev_norm(sol, 1.5, 2.0)
        ref = transport.local_sobolev_norm(ref_sol, 1.5, 2.0)
        assert turned == pytest.approx(ref, rel=1e-3)

    def test_sup_norm_mode(self):
        zf = fields.zero_field(2)
        u0 = fields.cos2_bump_datum((0.0, 0.0), 0.7)
        grid = Grid.regular([-1, -1], [1, 1], [101, 101])
        sol = transport.solve(zf, u0, 0.0, grid)
        sup = transport.local_sobolev_norm(sol, 0.9, np.inf)
        direct = np.max(np.linalg.norm(u0.gradient(grid.points()), axis=-1))
        assert sup == pytest.approx(direct, rel=1e-12)

    def test_masked_cells_warn(self):
        cf = fields.constant_field([2.0, 0.0])
        u0 = fields.gaussian_datum((0.0, 0.0), 0.3)
        grid = Grid.regular([-0.5, -0.5], [0.5, 0.5], [9, 9])
        sol = transport.solve(cf, u0, 1.0, grid, n_steps=32, bbox_radius=0.9)
        assert not np.all(sol.mask)
        with pytest.warns(ReliabilityWarning):
            transport.local_sobolev_norm(sol, 0.4, 2.0)


class TestStructuralBounds:
    def test_change_of_variables_bound(self, bump_field):
        # r-mass growth is controlled by exp of the time-integrated sup of div b
        u0 = fields.cos2_bump_datum((0.0, 0.0), 0.7)
        grid = Grid.regular([-3, -3], [3, 3], [121, 121])
        t, r = 0.5, 2.0
        div_sup = float(np.max(np.abs(bump_field.divergence(0.0, grid.points()))))
        mass0 = grid.integrate(np.abs(u0.eval(grid.points())) ** r)
        for sid in range(3):
            p = brownian.generate(9, sid, 2, t, 64)
            sol = transport.solve(bump_field, u0, t, grid, path=p)
            mass_t = grid.integrate(np.abs(sol.values) ** r)
            bound = np.exp(t * div_sup) * mass0
            assert mass_t <= bound * (1.0 + 1e-2)

    def test_chain_rule_gradient_matches_value_differences(self, rotation):
        u0 = fields.gaussian_datum((0.5, 0.0), 0.55)
        grid = Grid.regular([-1.5, -1.5], [1.5, 1.5], [151, 151])
        sol = transport.solve(rotation, u0, 0.7, grid, n_steps=300,
                              scheme="heun")
        vals = sol.values.reshape(grid.shape)
        h = grid.axes[0][1] - grid.axes[0][0]
        fd = np.stack(np.gradient(vals, h, edge_order=2), axis=-1).reshape(-1, 2)
        inner = grid.window_mask([-1.2, -1.2], [1.2, 1.2])
        err = np.linalg.norm(sol.gradient_values[inner] - fd[inner], axis=-1)
        assert np.max(err) <= 1e-3
