"""Measurement synthesis: mass noise, critical-point extraction, prediction."""

import numpy as np
import pytest

from popident import (
    ALL_TIMES,
    CriticalPoint,
    CriticalPointSet,
    KIND_FLAT,
    KIND_MAX,
    ModelInstance,
    SpatialGrid,
    TimeGrid,
    add_l2_noise,
    constant_field,
    extract_critical_points,
    field_from_callable,
    perturb_critical_points,
    predict_critical_time,
    preset_field,
    solve_forward,
)

from conftest import bump_model


@pytest.fixture(scope="module")
def sweep_solution():
    """Moving-extremum setup: n0 = cos(pi x/2), p = 1 + sin^2 x, d = 1.

    Every trait is eventually critical: x = 0 at all times, each x != 0 at
    exactly one crossing. Coarser than the acceptance run to stay quick.
    """
    grid = SpatialGrid.from_spacing(-1.0, 1.0, 2e-3)
    tg = TimeGrid.from_spacing(10.0, 2e-2)
    model = bump_model(grid)
    sol = solve_forward(model, tg)
    return model, sol, extract_critical_points(sol)


class TestAddL2Noise:
    def test_zero_delta_is_identity(self):
        tg = TimeGrid.from_spacing(1.0, 0.01)
        rho = 1.0 + np.sin(tg.nodes)
        m = add_l2_noise(rho, tg, 0.0, 7)
        np.testing.assert_array_equal(m.values, rho)

    def test_deterministic_in_seed(self):
        tg = TimeGrid.from_spacing(1.0, 0.01)
        rho = 1.0 + np.sin(tg.nodes)
        a = add_l2_noise(rho, tg, 0.01, 123)
        b = add_l2_noise(rho, tg, 0.01, 123)
        np.testing.assert_array_equal(a.values, b.values)
        c = add_l2_noise(rho, tg, 0.01, 124)
        assert np.any(c.values != a.values)

    @pytest.mark.parametrize("delta", [1.2e-2, 3e-4, 0.7])
    def test_noise_norm_is_exact(self, delta):
        # oracle: recompute the discrete L2(0,T) norm of the injected noise
        tg = TimeGrid.from_spacing(1.0, 0.01)
        rho = 1.0 + np.sin(tg.nodes)
        m = add_l2_noise(rho, tg, delta, 99)
        assert tg.l2_norm(m.values - rho) == pytest.approx(delta, rel=1e-12)

    def test_negative_delta_rejected(self):
        tg = TimeGrid.from_spacing(1.0, 0.5)
        with pytest.raises(ValueError):
            add_l2_noise(np.ones(3), tg, -1.0, 0)


class TestPerturbCriticalPoints:
    def _cps(self):
        entries = [
            CriticalPoint(0.5, 0.0, KIND_FLAT),
            CriticalPoint(0.5, 0.4, KIND_MAX),
            CriticalPoint(1.0, -0.8, KIND_MAX),
        ]
        return CriticalPointSet(entries, -1.0, 1.0)

    def test_zero_delta_identity(self):
        cps = self._cps()
        out = perturb_critical_points(cps, 0.0, 5)
        assert [(e.t, e.x_bar, e.kind) for e in out.entries] == [
            (e.t, e.x_bar, e.kind) for e in cps.entries
        ]

    def test_origin_is_fixed_point(self):
        # multiplicative noise cannot move x_bar = 0
        cps = self._cps()
        out = perturb_critical_points(cps, 0.3, 5)
        assert out.entries[0].x_bar == 0.0

    def test_uniform_bound(self):
        cps = self._cps()
        for seed in range(10):
            out = perturb_critical_points(cps, 0.05, seed)
            for before, after in zip(cps.entries, out.entries):
                assert abs(after.x_bar - before.x_bar) <= 0.025 * abs(before.x_bar)

    def test_determinism(self):
        cps = self._cps()
        a = perturb_critical_points(cps, 0.1, 11)
        b = perturb_critical_points(cps, 0.1, 11)
        assert [e.x_bar for e in a.entries] == [e.x_bar for e in b.entries]

    def test_clamped_to_open_interval(self):
        cps = CriticalPointSet([CriticalPoint(1.0, 0.99, KIND_MAX)], -1.0, 1.0)
        for seed in range(20):
            out = perturb_critical_points(cps, 2.0, seed)
            assert -1.0 < out.entries[0].x_bar < 1.0


class TestCriticalPointSet:
    def test_entries_sorted(self):
        cps = CriticalPointSet(
            [CriticalPoint(2.0, 0.1, KIND_MAX), CriticalPoint(1.0, 0.3, KIND_MAX)],
            -1.0,
            1.0,
        )
        assert cps.times().tolist() == [1.0, 2.0]

    def test_interior_invariant(self):
        with pytest.raises(ValueError):
            CriticalPointSet([CriticalPoint(1.0, 1.0, KIND_MAX)], -1.0, 1.0)


class TestExtraction:
    def test_monotone_region_never_critical(self, grid_coarse):
        # n0' and p' share a sign for x < 0 (p = e^x): no observation there
        model = bump_model(grid_coarse, p_name="exp")
        sol = solve_forward(model, TimeGrid.from_spacing(5.0, 1e-2))
        cps = extract_critical_points(sol)
        assert len(cps) > 0
        assert all(e.x_bar >= 0.0 for e in cps.entries)
        assert all(e.kind == KIND_MAX for e in cps.entries)

    def test_symmetric_center_flat_at_every_time(self, grid_coarse):
        # p' = n0' = 0 at x = 0: recorded (as a plateau) at every time node
        model = bump_model(grid_coarse)  # p = 1 + sin^2 x
        tg = TimeGrid.from_spacing(2.0, 1e-2)
        sol = solve_forward(model, tg)
        cps = extract_critical_points(sol)
        flat_times = sorted(e.t for e in cps.entries if e.x_bar == 0.0)
        np.testing.assert_allclose(flat_times, tg.nodes[1:], atol=1e-12)

    def test_each_offcenter_node_has_one_crossing(self, sweep_solution):
        # away from the plateau each flagged node belongs to a single
        # crossing event whose earliest time matches the prediction
        from popident.critical import cluster_times

        model, sol, cps = sweep_solution
        dt = sol.tg.dt
        h = model.grid.h
        by_node = {}
        for e in cps.entries:
            if e.kind == KIND_FLAT or abs(e.x_bar) < 0.05:
                continue
            by_node.setdefault(e.x_bar, []).append(e.t)
        assert len(by_node) > 300
        worst = 0.0
        for xb, times in by_node.items():
            assert len(cluster_times(times, 2 * dt)) == 1
            t_pred = predict_critical_time(xb, model)
            worst = max(worst, abs(min(times) - t_pred))
        assert worst <= dt + 60.0 * h

    def test_coverage_of_the_support(self, sweep_solution):
        # observed locations fill the support: every gap beyond 2h is
        # explained by the local crossing speed times the frame interval
        # (the sweep can skip nodes where it outruns the sampling), with
        # the widest skipped band right at the plateau split where the
        # speed diverges; the outer reach is set by the horizon T
        model, sol, cps = sweep_solution
        h = model.grid.h
        dt = sol.tg.dt
        locs = np.sort(np.unique(cps.locations()))

        def crossing_time(x):
            return predict_critical_time(float(x), model)

        for left, right in zip(locs[:-1], locs[1:]):
            gap = right - left
            if gap <= 2 * h + 1e-12 or left <= 0.0 <= right:
                continue
            dtdx = abs(crossing_time(right) - crossing_time(left)) / gap
            speed = 1.0 / max(dtdx, 1e-30)
            assert gap <= 2 * h + 1.6 * speed * dt
        split_gap = np.min(locs[locs > 0])
        assert split_gap <= 0.5 * np.sqrt(dt)
        reach = max(abs(locs[0]), abs(locs[-1]))
        for xb in (0.95 * reach, -0.95 * reach):
            assert crossing_time(xb) <= 10.0
        outside = reach + 50 * h
        assert crossing_time(outside) > 10.0

    def test_requires_density(self, grid_coarse):
        model = bump_model(grid_coarse)
        sol = solve_forward(model, TimeGrid.from_spacing(1.0, 0.1), store_density=False)
        with pytest.raises(ValueError, match="density"):
            extract_critical_points(sol)


class TestPredictCriticalTime:
    def test_same_sign_derivatives_never_critical(self, grid_coarse):
        model = bump_model(grid_coarse, p_name="exp")
        assert predict_critical_time(-0.5, model) is None

    def test_unique_time_formula(self, grid_coarse):
        # analytic: t(0.5) = (pi/2) tan(pi/4) / sin(1) for p = 1 + sin^2 x
        model = bump_model(grid_coarse)
        assert predict_critical_time(0.5, model) == pytest.approx(
            (np.pi / 2.0) / np.sin(1.0), rel=1e-12
        )

    def test_unique_time_against_simulated_extremum(self):
        # oracle: locate the density maximum of a high-resolution solve at
        # the predicted instant; it must sit at the queried trait value
        grid = SpatialGrid.from_spacing(-1.0, 1.0, 1e-3)
        model = bump_model(grid)
        t_star = predict_critical_time(0.5, model)
        n_steps = int(round(t_star / 2e-3))
        tg = TimeGrid(t_star, n_steps)
        sol = solve_forward(model, tg)
        interior = slice(int((0.2 - grid.x_min) / grid.h), grid.n_points - 1)
        x_max = grid.nodes[interior][np.argmax(sol.n[-1, interior])]
        assert abs(x_max - 0.5) <= 3 * grid.h

    def test_flat_center_is_critical_forever(self, grid_coarse):
        model = bump_model(grid_coarse)  # p' and n0' both vanish at 0
        assert predict_critical_time(0.0, model) is ALL_TIMES

    def test_initial_instant_only(self, grid_coarse):
        # n0'(x) = 0 but p'(x) != 0: critical only at t = 0
        grid = grid_coarse
        model = ModelInstance(
            p=preset_field(grid, "exp"),
            d=constant_field(grid, 1.0),
            n0=field_from_callable(
                grid,
                lambda x: np.cos(np.pi * x / 2.0) ** 2,
                lambda x: -np.pi / 2.0 * np.sin(np.pi * x),
            ),
        )
        assert predict_critical_time(0.0, model) == 0.0

    def test_flat_growth_sloped_density_never_critical(self, grid_coarse):
        # p'(x) = 0 with n0'(x) != 0: the criticality condition has no root
        model = bump_model(grid_coarse, p_name="const:1")
        assert predict_critical_time(0.4, model) is None

    def test_requires_constant_d(self, grid_coarse):
        model = ModelInstance(
            p=preset_field(grid_coarse, "exp"),
            d=preset_field(grid_coarse, "one_minus_x_sq", offset=1.0),
            n0=preset_field(grid_coarse, "cos_half"),
        )
        with pytest.raises(ValueError, match="constant d"):
            predict_critical_time(0.3, model)

    def test_requires_positive_density(self, grid_coarse):
        model = bump_model(grid_coarse)
        with pytest.raises(ValueError, match="not positive"):
            predict_critical_time(1.2, model)
