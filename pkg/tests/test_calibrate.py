import numpy as np
import pytest

from fdl import (
    CalibConfig,
    SceneSpec,
    ShiftParams,
    calibrate,
    calibrate_relaxed,
    grad_factored,
    grad_shift_matrix,
    layer_coefficients,
    layer_regularizer,
    objective,
    synthesize_lightfield,
    synthesize_views_with_shifts,
)
from fdl.calibrate import data_residual, frequency_pool, write_history_csv
from fdl.lfmodel import ViewSet
from fdl.spectra import FrequencyGrid

from conftest import grid_coords, quadrant_masks, smooth_texture


def two_layer_views(rng, h=32, w=32, coords=None, jitter=0.0):
    scene = SceneSpec(masks=quadrant_masks(h, w, 2), disparities=[0.0, 1.0],
                      texture=smooth_texture(rng, h, w))
    if coords is None:
        coords = grid_coords(3)
    coords = np.asarray(coords, float)
    if jitter:
        coords = coords + jitter * rng.uniform(-1, 1, coords.shape)
        coords -= coords.mean(axis=0, keepdims=True)
    return scene, coords, synthesize_lightfield(scene, coords)


class TestLayerRegularizer:
    def test_matrix_structure(self):
        g = layer_regularizer(4)
        assert np.array_equal(np.diag(g), [-2.0] * 4)
        assert np.array_equal(np.diag(g, 1), [1.0] * 3)
        assert np.array_equal(g, g.T)

    def test_row_sums(self):
        g = layer_regularizer(5)
        sums = g.sum(axis=1)
        assert np.allclose(sums[1:-1], 0.0)
        assert sums[0] == sums[-1] == -1.0


class TestObjective:
    def test_zero_at_truth(self, rng):
        scene, coords, views = two_layer_views(rng)
        val = objective(views, coords[:, 0], coords[:, 1], scene.disparities, lam=0.0)
        grid = FrequencyGrid(views.width, views.height)
        b_energy = float(np.sum(np.abs(np.fft.rfft2(views.images[:, :, :, 0])) ** 2))
        assert val <= 1e-10 * b_energy

    def test_constant_view_fits_anywhere(self):
        views = ViewSet(images=np.full((1, 16, 16, 1), 0.3), u=[0.4], v=[-0.7])
        val = objective(views, [123.0], [-5.0], [0.0, 2.0], lam=0.0)
        assert val < 1e-12

    def test_perturbed_parameters_increase_objective(self, rng):
        scene, coords, views = two_layer_views(rng)
        base = objective(views, coords[:, 0], coords[:, 1], scene.disparities, lam=1e-4)
        for _ in range(20):
            d_pert = scene.disparities + rng.uniform(0.02, 0.3) * rng.choice([-1, 1], 2)
            val = objective(views, coords[:, 0], coords[:, 1], d_pert, lam=1e-4)
            assert val > base

    def test_refuses_wide_aperture(self, rng):
        from fdl import aperture_spectrum

        views = ViewSet(images=np.zeros((1, 8, 8, 1)), u=[0.0], v=[0.0],
                        apertures=[aperture_spectrum("disk", diameter=1.0)])
        with pytest.raises(ValueError, match="pinhole"):
            objective(views, [0.0], [0.0], [0.0], lam=0.0)

    @pytest.mark.parametrize("c", [0.5, -2.0, 3.7])
    def test_scale_gauge_invariance(self, rng, c):
        scene, coords, views = two_layer_views(rng)
        u, v = coords[:, 0] + 0.1, coords[:, 1] - 0.05
        d = np.array([0.2, 0.9])
        a = objective(views, u, v, d, lam=1e-3)
        b = objective(views, c * u, c * v, d / c, lam=1e-3)
        assert b == pytest.approx(a, rel=1e-9)


class TestGradients:
    def grad_check(self, rng, m, n, n_freqs, relaxed=False):
        h = w = 16
        scene = SceneSpec(masks=quadrant_masks(h, w, min(n, 3)),
                          disparities=np.linspace(0, 1, min(n, 3)),
                          texture=smooth_texture(rng, h, w))
        coords = rng.uniform(-1, 1, (m, 2))
        views = synthesize_lightfield(scene, coords)
        pool = frequency_pool(FrequencyGrid(w, h))
        freqs = rng.choice(pool, size=n_freqs, replace=False)
        lam = 1e-3
        u = coords[:, 0] + 0.1 * rng.standard_normal(m)
        v = coords[:, 1] + 0.1 * rng.standard_normal(m)
        d = np.sort(rng.uniform(-0.5, 1.2, n))
        h_fd = 1e-6

        if not relaxed:
            sp = ShiftParams.factored(u, v, d)
            x = layer_coefficients(views, sp, lam=lam, freq_indices=freqs)
            g_pu, g_pv = grad_shift_matrix(views, sp, x, freq_indices=freqs, lam=lam)
            gu, gv, gd = grad_factored(g_pu, g_pv, u, v, d)

            def f(u_, v_, d_):
                return objective(views, u_, v_, d_, lam=lam, freq_indices=freqs)

            errs = []
            for j in range(m):
                e = np.zeros(m); e[j] = h_fd
                fd = (f(u + e, v, d) - f(u - e, v, d)) / (2 * h_fd)
                errs.append(abs(fd - gu[j]) / max(abs(fd), 1e-10))
                fd = (f(u, v + e, d) - f(u, v - e, d)) / (2 * h_fd)
                errs.append(abs(fd - gv[j]) / max(abs(fd), 1e-10))
            for k in range(n):
                e = np.zeros(n); e[k] = h_fd
                fd = (f(u, v, d + e) - f(u, v, d - e)) / (2 * h_fd)
                errs.append(abs(fd - gd[k]) / max(abs(fd), 1e-10))
            return max(errs)

        pu, pv = ShiftParams.factored(u, v, d).expand()
        sp = ShiftParams.relaxed(pu, pv, d=d)
        x = layer_coefficients(views, sp, lam=lam, freq_indices=freqs)
        g_pu, g_pv = grad_shift_matrix(views, sp, x, freq_indices=freqs, lam=lam)

        def fP(pu_, pv_):
            spr = ShiftParams.relaxed(pu_, pv_, d=d)
            xx = layer_coefficients(views, spr, lam=lam, freq_indices=freqs)
            from fdl.calibrate import _batch_quantities, _objective_terms

            _, A, b, _, _, gamma = _batch_quantities(views, spr, lam, freqs, "layer")
            val, _ = _objective_terms(A, xx, b, lam, gamma)
            return val

        errs = []
        for j in range(m):
            for k in range(n):
                e = np.zeros_like(pu); e[j, k] = h_fd
                fd = (fP(pu + e, pv) - fP(pu - e, pv)) / (2 * h_fd)
                errs.append(abs(fd - g_pu[j, k]) / max(abs(fd), 1e-10))
                fd = (fP(pu, pv + e) - fP(pu, pv - e)) / (2 * h_fd)
                errs.append(abs(fd - g_pv[j, k]) / max(abs(fd), 1e-10))
        return max(errs)

    def test_factored_gradients_match_finite_differences(self, rng):
        for i in range(5):
            m = int(rng.integers(2, 5))
            n = int(rng.integers(1, 4))
            assert self.grad_check(rng, m, n, 64) < 1e-4

    def test_shift_matrix_gradients_match_finite_differences(self, rng):
        for i in range(5):
            m = int(rng.integers(2, 4))
            n = int(rng.integers(1, 4))
            assert self.grad_check(rng, m, n, 64, relaxed=True) < 1e-4

    def test_zero_gradient_cases(self, rng):
        g_pu = np.zeros((3, 2))
        g_pv = np.zeros((3, 2))
        gu, gv, gd = grad_factored(g_pu, g_pv, np.ones(3), np.ones(3), np.ones(2))
        assert not gu.any() and not gv.any() and not gd.any()
        # zero disparity kills grad u
        g_pu = np.ones((3, 2))
        gu, _, _ = grad_factored(g_pu, g_pv, np.ones(3), np.ones(3), np.zeros(2))
        assert not gu.any()

    def test_gradient_scaling_quadratic(self, rng):
        # scaling the images by c scales the data-term gradient by c^2
        scene, coords, views = two_layer_views(rng, h=16, w=16)
        pool = frequency_pool(FrequencyGrid(16, 16))
        freqs = rng.choice(pool, 32, replace=False)
        u, v = coords[:, 0] + 0.07, coords[:, 1]
        d = np.array([0.1, 0.8])
        sp = ShiftParams.factored(u, v, d)
        c = 3.0
        scaled = ViewSet(images=views.images * c, u=views.u, v=views.v)
        x1 = layer_coefficients(views, sp, lam=0.0, freq_indices=freqs)
        x2 = layer_coefficients(scaled, sp, lam=0.0, freq_indices=freqs)
        g1 = grad_shift_matrix(views, sp, x1, freq_indices=freqs, lam=0.0)[0]
        g2 = grad_shift_matrix(scaled, sp, x2, freq_indices=freqs, lam=0.0)[0]
        assert np.allclose(g2, c**2 * g1, rtol=1e-9, atol=1e-12)

    def test_zero_residual_zero_gradient(self, rng):
        scene, coords, views = two_layer_views(rng, h=16, w=16)
        sp = ShiftParams.factored(coords[:, 0], coords[:, 1], scene.disparities)
        x = layer_coefficients(views, sp, lam=0.0)
        g_pu, g_pv = grad_shift_matrix(views, sp, x, lam=0.0)
        scale = float(np.sum(views.images**2)) * views.width * views.height
        assert np.max(np.abs(g_pu)) < 1e-9 * scale
        assert np.max(np.abs(g_pv)) < 1e-9 * scale


class TestCalibrate:
    def test_recovers_jittered_grid(self, rng):
        scene, coords, views = two_layer_views(rng, h=64, w=64, jitter=0.15)
        cfg = CalibConfig(n_layers=2, batch_size=10**6, grid_dims=(3, 3),
                          d_min=-0.2, d_max=1.2, max_iters=2000, seed=0, lam=1e-4)
        res = calibrate(views, cfg)
        pu_t = np.outer(coords[:, 0], scene.disparities)
        pv_t = np.outer(coords[:, 1], scene.disparities)
        pu, pv = res.shift_params.expand()
        err = max(np.max(np.abs(pu - pu_t)), np.max(np.abs(pv - pv_t)))
        assert err < 1e-2
        objs = [h.objective for h in res.history]
        assert all(b <= a * (1 + 1e-12) for a, b in zip(objs, objs[1:]))
        assert np.all(np.diff(res.d) > 0)

    def test_degenerate_single_layer_scene(self, rng):
        tex = smooth_texture(rng, 16, 16)
        views = ViewSet(images=np.repeat(tex[None, :, :, None], 4, axis=0),
                        u=[-1, 0, 1, 2], v=[0, 0, 0, 0])
        cfg = CalibConfig(n_layers=1, batch_size=10**6, max_iters=50, seed=0,
                          d_min=-0.5, d_max=0.5)
        res = calibrate(views, cfg)
        objs = [h.objective for h in res.history]
        assert objs[-1] <= objs[0] * (1 + 1e-12)

    def test_full_batch_seed_independent(self, rng):
        scene, coords, views = two_layer_views(rng)
        out = []
        for seed in (0, 1):
            cfg = CalibConfig(n_layers=2, batch_size=10**6, grid_dims=(3, 3),
                              d_min=-0.2, d_max=1.2, max_iters=40, seed=seed)
            res = calibrate(views, cfg)
            out.append((res.u, res.v, res.d))
        assert np.array_equal(out[0][0], out[1][0])
        assert np.array_equal(out[0][2], out[1][2])

    def test_stochastic_seeds_agree_within_5_percent(self, rng):
        scene, coords, views = two_layer_views(rng, h=64, w=64, jitter=0.1)
        finals = []
        for seed in range(5):
            cfg = CalibConfig(n_layers=2, batch_size=512, grid_dims=(3, 3),
                              d_min=-0.2, d_max=1.2, max_iters=600, seed=seed, lam=1e-4)
            res = calibrate(views, cfg)
            finals.append(objective(views, res.u, res.v, res.d, lam=1e-4))
        assert (max(finals) - min(finals)) <= 0.05 * min(finals)

    def test_u_recentered_and_d_sorted(self, rng):
        scene, coords, views = two_layer_views(rng)
        cfg = CalibConfig(n_layers=3, batch_size=10**6, grid_dims=(3, 3),
                          d_min=-0.5, d_max=1.5, max_iters=30, seed=0)
        res = calibrate(views, cfg)
        assert abs(res.u.mean()) < 1e-9
        assert abs(res.v.mean()) < 1e-9
        assert np.all(np.diff(res.d) > 0)

    def test_layer_regularizer_gives_more_uniform_disparities(self, rng):
        # Scenario with one dominant disparity (85% of the image) plus rare
        # far layers: the second-difference regularizer yields more uniformly
        # spaced disparity estimates than plain l2 (smaller gap spread).
        h = w = 48
        labels = np.zeros((h, w), int)
        labels[:, int(0.85 * w) : int(0.95 * w)] = 1
        labels[:, int(0.95 * w) :] = 2
        masks = np.stack([labels == k for k in range(3)])
        scene = SceneSpec(masks=masks, disparities=[0.1, 0.3, -1.0],
                          texture=smooth_texture(rng, h, w))
        views = synthesize_lightfield(scene, grid_coords(3))

        def gap_cv(d):
            g = np.diff(np.sort(d))
            return float(np.std(g) / np.mean(g))

        cvs = {}
        for kind in ("layer", "identity"):
            cfg = CalibConfig(n_layers=8, batch_size=10**6, grid_dims=(3, 3),
                              d_min=-1.2, d_max=0.6, max_iters=400, seed=0,
                              lam=1e-2, reg_kind=kind)
            cvs[kind] = gap_cv(calibrate(views, cfg).d)
        assert cvs["layer"] <= cvs["identity"] + 1e-9

    def test_history_csv(self, rng, tmp_path):
        scene, coords, views = two_layer_views(rng, h=16, w=16)
        cfg = CalibConfig(n_layers=2, batch_size=10**6, grid_dims=(3, 3),
                          d_min=-0.2, d_max=1.2, max_iters=5, seed=0)
        res = calibrate(views, cfg)
        path = tmp_path / "hist.csv"
        write_history_csv(res.history, path)
        lines = path.read_text().splitlines()
        assert lines[0].startswith("iteration,objective")
        assert len(lines) == len(res.history) + 1


class TestRelaxed:
    def test_fixed_point_at_zero_gradient(self, rng):
        scene, coords, views = two_layer_views(rng, h=16, w=16)
        p0 = ShiftParams.factored(coords[:, 0], coords[:, 1], scene.disparities)
        cfg = CalibConfig(n_layers=2, batch_size=10**6, max_iters=20, seed=0, lam=0.0)
        relaxed, _ = calibrate_relaxed(views, p0, cfg)
        pu0, pv0 = p0.expand()
        assert np.max(np.abs(relaxed.pu - pu0)) < 1e-9
        assert np.max(np.abs(relaxed.pv - pv0)) < 1e-9

    def test_stays_near_init_on_lambertian_data(self, rng):
        scene, coords, views = two_layer_views(rng, h=64, w=64, jitter=0.1)
        cfg = CalibConfig(n_layers=2, batch_size=10**6, grid_dims=(3, 3),
                          d_min=-0.2, d_max=1.2, max_iters=2000, seed=0, lam=1e-6)
        res = calibrate(views, cfg)
        relaxed, _ = calibrate_relaxed(views, res.shift_params, cfg)
        pu0, pv0 = res.shift_params.expand()
        drift = max(np.linalg.norm(relaxed.pu - pu0), np.linalg.norm(relaxed.pv - pv0))
        assert drift < 1e-3

    def test_improves_on_non_rank_one_data(self, rng):
        # Two layers with opposite nonzero disparities pin the per-view
        # coordinates, so perturbing one layer's shifts per view makes the
        # data genuinely non-rank-1.
        d_true = np.array([-1.0, 0.0, 1.0])
        scene = SceneSpec(masks=quadrant_masks(64, 64, 3), disparities=d_true,
                          texture=smooth_texture(rng, 64, 64))
        coords = grid_coords(3)
        pu = np.outer(coords[:, 0], d_true)
        pv = np.outer(coords[:, 1], d_true)
        pu_nr = pu.copy()
        pu_nr[:, 2] += 0.3 * rng.uniform(-1, 1, 9)  # per-view phase perturbation
        views = synthesize_views_with_shifts(scene, pu_nr, pv, coords=coords)
        cfg = CalibConfig(n_layers=3, batch_size=10**6, grid_dims=(3, 3),
                          d_min=-1.2, d_max=1.2, max_iters=2000, seed=0, lam=1e-5)
        res = calibrate(views, cfg)
        relaxed, _ = calibrate_relaxed(views, res.shift_params, cfg)
        r_fact = data_residual(views, res.shift_params, lam=1e-5)
        r_rel = data_residual(views, relaxed, lam=1e-5)
        assert r_rel < 0.1 * r_fact
        assert np.max(np.abs(relaxed.pu - pu_nr)) < 0.05
