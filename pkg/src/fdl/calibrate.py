"""Estimation of view positions and layer disparities by stochastic descent.

The objective sums, over a random subset of stored frequencies, the
regularized residual of the per-frequency layer solve.  Gradients with
respect to the shift matrix P (and its factors u, v, d) come from the
closed-form layer coefficients, which make the analytic partial derivative
equal the total derivative.  Only pinhole views are supported; wide-aperture
calibration would also need psi and s estimates.

Frequencies on self-conjugate Nyquist lines are excluded from the sampling
pool: they use a symmetric phase convention that keeps inverse transforms
real but does not follow the plain exponential the gradients assume.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numpy.typing import NDArray

from .construct import _phase_tables
from .lfmodel import ShiftParams, ViewSet, luminance
from .spectra import FrequencyGrid

__all__ = [
    "CalibConfig",
    "CalibrationResult",
    "CalibrationDivergence",
    "layer_regularizer",
    "frequency_pool",
    "objective",
    "layer_coefficients",
    "grad_shift_matrix",
    "grad_factored",
    "calibrate",
    "calibrate_relaxed",
    "write_history_csv",
]

DEFAULT_LAMBDA = 1e-3


class CalibrationDivergence(RuntimeError):
    """Objective exploded; carries the iteration history for diagnosis."""

    def __init__(self, message, history):
        super().__init__(message)
        self.history = history


@dataclass
class CalibConfig:
    """Settings for the stochastic calibration descent.

    batch_size is clamped to the available frequency pool.  stability_eps
    None picks a curvature-matched value from the first iteration's gradient
    (step = alpha*g/(eps + ||g||^2) then interpolates between a normalized
    step far from the optimum and a Newton-like step near it).
    """

    n_layers: int
    batch_size: int = 4096
    step: float = 0.2
    stability_eps: float | None = None
    max_iters: int = 1000
    tol: float = 1e-5
    tol_window: int = 10
    lam: float = DEFAULT_LAMBDA
    d_min: float = -2.0
    d_max: float = 2.0
    grid_dims: tuple[int, int] | None = None
    init_u: NDArray | None = None
    init_v: NDArray | None = None
    seed: int = 0
    reg_kind: str = "layer"  # "layer" or "identity"

    def __post_init__(self):
        if self.n_layers < 1:
            raise ValueError("n_layers must be >= 1")
        if self.batch_size < 1:
            raise ValueError("batch size must be >= 1")
        if self.step <= 0:
            raise ValueError("step must be positive")
        if not self.d_min < self.d_max:
            raise ValueError("need d_min < d_max")
        if self.reg_kind not in ("layer", "identity"):
            raise ValueError("reg_kind must be 'layer' or 'identity'")


@dataclass
class HistoryEntry:
    iteration: int
    objective: float
    step_u: float = 0.0
    step_v: float = 0.0
    step_d: float = 0.0


@dataclass
class CalibrationResult:
    u: NDArray[np.float64]
    v: NDArray[np.float64]
    d: NDArray[np.float64]
    history: list[HistoryEntry]
    converged: bool = False

    @property
    def shift_params(self) -> ShiftParams:
        return ShiftParams.factored(self.u, self.v, self.d)


def layer_regularizer(n: int) -> NDArray[np.float64]:
    """Tridiagonal second-difference matrix over the layer index (-2 diag, 1 off).

    Penalizing ||Gamma x||^2 discourages large jumps between neighboring
    layers, spreading the calibrated disparities more uniformly.
    """
    g = -2.0 * np.eye(n)
    idx = np.arange(n - 1)
    g[idx, idx + 1] = 1.0
    g[idx + 1, idx] = 1.0
    return g


def frequency_pool(grid: FrequencyGrid) -> NDArray[np.intp]:
    """Flat indices of stored frequencies eligible for calibration sampling."""
    wh = grid.half_width
    keep = np.ones((grid.height, wh), dtype=bool)
    if grid.width % 2 == 0:
        keep[:, grid.width // 2] = False
    if grid.height % 2 == 0:
        keep[grid.height // 2, :] = False
    return np.nonzero(keep.ravel())[0]


def _require_pinhole(views: ViewSet, what: str):
    if not views.all_pinhole:
        raise ValueError(
            f"{what} requires pinhole views; wide-aperture inputs are not supported"
        )


def _luma_spectra(views: ViewSet):
    """(grid, flat luminance spectra of shape (Q, m))."""
    grid = FrequencyGrid(width=views.width, height=views.height)
    lum = luminance(views)
    spec = np.fft.rfft2(lum, axes=(-2, -1))
    return grid, spec.reshape(views.num_views, -1).T.copy()


def _system_batch(pu, pv, grid: FrequencyGrid, kx, ky):
    px, py = _phase_tables(pu, pv, grid)
    return np.ascontiguousarray((px[:, :, kx] * py[:, :, ky]).transpose(2, 0, 1))


def _solve_batch(A, b, lam, gram):
    """Closed-form layer coefficients for a batch: (B, n)."""
    Ah = A.conj().transpose(0, 2, 1)
    G = Ah @ A
    if lam > 0:
        G = G + lam * gram[None]
    rhs = (Ah @ b[:, :, None])[:, :, 0]
    try:
        return np.linalg.solve(G, rhs[:, :, None])[:, :, 0]
    except np.linalg.LinAlgError:
        out = np.empty_like(rhs)
        for i in range(A.shape[0]):
            out[i] = np.linalg.lstsq(G[i], rhs[i], rcond=None)[0]
        return out


def _objective_terms(A, x, b, lam, gamma):
    r = (A @ x[:, :, None])[:, :, 0] - b
    val = float(np.sum(r.real**2 + r.imag**2))
    if lam > 0:
        gx = x @ gamma.T
        val += lam * float(np.sum(gx.real**2 + gx.imag**2))
    return val, r


def _batch_quantities(views, shifts, lam, freq_indices, reg_kind):
    grid, b_all = _luma_spectra(views)
    if freq_indices is None:
        freq_indices = frequency_pool(grid)
    q = np.asarray(freq_indices, dtype=np.intp)
    kx = q % grid.half_width
    ky = q // grid.half_width
    pu, pv = shifts.expand()
    A = _system_batch(pu, pv, grid, kx, ky)
    n = pu.shape[1]
    gamma = layer_regularizer(n) if reg_kind == "layer" else np.eye(n)
    return grid, A, b_all[q], kx, ky, gamma


def objective(views: ViewSet, u, v, d, lam: float = DEFAULT_LAMBDA,
              freq_indices=None, reg_kind: str = "layer") -> float:
    """Calibration objective at (u, v, d) over a frequency subset.

    Layers are re-solved in closed form at the given parameters, so this is
    the exact function the descent minimizes (luminance channel).
    """
    _require_pinhole(views, "calibration objective")
    shifts = ShiftParams.factored(u, v, d)
    _, A, b, _, _, gamma = _batch_quantities(views, shifts, lam, freq_indices, reg_kind)
    x = _solve_batch(A, b, lam, gamma.T @ gamma)
    val, _ = _objective_terms(A, x, b, lam, gamma)
    return val


def layer_coefficients(views: ViewSet, shifts: ShiftParams, lam: float = DEFAULT_LAMBDA,
                       freq_indices=None, reg_kind: str = "layer"):
    """Closed-form per-frequency layer coefficients x (shape (B, n))."""
    _require_pinhole(views, "layer solve")
    _, A, b, _, _, gamma = _batch_quantities(views, shifts, lam, freq_indices, reg_kind)
    return _solve_batch(A, b, lam, gamma.T @ gamma)


def _grad_p(A, x, r, wx, wy):
    """Gradients of the data term w.r.t. the shift matrices Pu and Pv.

    grad_P[j,k] = 4*pi * sum_q w_q * Im(conj(x_qk) * conj(A_qjk) * r_qj),
    with w_q = omega_x for Pu and omega_y for Pv.
    """
    cA = A.conj()
    cx = x.conj()
    tu = np.einsum("bjk,bj,bk->jk", cA, wx[:, None] * r, cx)
    tv = np.einsum("bjk,bj,bk->jk", cA, wy[:, None] * r, cx)
    return 4 * np.pi * tu.imag, 4 * np.pi * tv.imag


def data_residual(views: ViewSet, shifts: ShiftParams, lam: float = DEFAULT_LAMBDA,
                  freq_indices=None, reg_kind: str = "layer") -> float:
    """Data term sum ||A x - b||^2 at the closed-form layer solve.

    Separates fit quality from the regularization penalty; used to compare
    factored and relaxed models on equal footing.
    """
    _require_pinhole(views, "residual evaluation")
    _, A, b, _, _, gamma = _batch_quantities(views, shifts, lam, freq_indices, reg_kind)
    x = _solve_batch(A, b, lam, gamma.T @ gamma)
    r = (A @ x[:, :, None])[:, :, 0] - b
    return float(np.sum(r.real**2 + r.imag**2))


def grad_shift_matrix(views: ViewSet, shifts: ShiftParams, x, freq_indices=None,
                      lam: float = DEFAULT_LAMBDA, reg_kind: str = "layer"):
    """(grad_Pu, grad_Pv) of the objective at the given layer coefficients.

    `x` must be the closed-form solution at the current shifts (the solve's
    optimality is what reduces the total derivative to this expression).
    """
    _require_pinhole(views, "gradient computation")
    grid, A, b, kx, ky, _ = _batch_quantities(views, shifts, lam, freq_indices, reg_kind)
    r = (A @ x[:, :, None])[:, :, 0] - b
    return _grad_p(A, x, r, grid.omega_x[kx], grid.omega_y[ky])


def grad_factored(g_pu, g_pv, u, v, d):
    """Chain-rule contraction of shift-matrix gradients onto (u, v, d)."""
    d = np.asarray(d, dtype=np.float64)
    gu = g_pu @ d
    gv = g_pv @ d
    gd = g_pu.T @ np.asarray(u, float) + g_pv.T @ np.asarray(v, float)
    return gu, gv, gd


def _init_uv(views: ViewSet, config: CalibConfig, rng):
    m = views.num_views
    if config.init_u is not None:
        u = np.asarray(config.init_u, dtype=np.float64).reshape(m).copy()
        v = np.asarray(config.init_v, dtype=np.float64).reshape(m).copy()
    elif config.grid_dims is not None:
        gw, gh = config.grid_dims
        if gw * gh != m:
            raise ValueError(f"grid {gw}x{gh} does not match {m} views")
        uu = np.arange(gw) - (gw - 1) / 2
        vv = np.arange(gh) - (gh - 1) / 2
        vgrid, ugrid = np.meshgrid(vv, uu, indexing="ij")
        u, v = ugrid.ravel().copy(), vgrid.ravel().copy()
    else:
        u = 0.01 * rng.standard_normal(m)
        v = 0.01 * rng.standard_normal(m)
    return u - u.mean(), v - v.mean()


def _auto_eps(alpha, grad_sq, f0):
    # Matches the curvature implied by the first iterate: the step rule then
    # behaves like a normalized step far out and a Newton-like step close in.
    return max(1e-8, alpha * grad_sq / max(2.0 * f0, np.finfo(float).tiny))


class _Stepper:
    """Trial steps alpha*g/(eps + ||g||^2) with a lazily fixed per-block eps."""

    def __init__(self, alpha, eps_fixed):
        self.alpha = alpha
        self.eps_fixed = eps_fixed
        self.eps = {}

    def delta(self, name, grad, f0):
        gsq = float(np.sum(grad * grad))
        if name not in self.eps:
            self.eps[name] = self.eps_fixed if self.eps_fixed is not None else _auto_eps(self.alpha, gsq, f0)
        return self.alpha * grad / (self.eps[name] + gsq)


def _prepare(views: ViewSet, config: CalibConfig):
    _require_pinhole(views, "calibration")
    grid, b_all = _luma_spectra(views)
    pool = frequency_pool(grid)
    # Normalize so the mean per-frequency ||b||^2 is 1: step-rule dynamics
    # then do not depend on image size or intensity scale.
    scale = np.sqrt(np.mean(np.sum(np.abs(b_all[pool]) ** 2, axis=1)))
    scale = scale if scale > 0 else 1.0
    b_all = b_all / scale
    batch = min(config.batch_size, len(pool))
    return grid, b_all, pool, batch


def _run_descent(views, config, shifts_of, grads_of, params, recenter):
    """Shared descent loop over named parameter blocks.

    Each iteration takes the normalized trial step and accepts it through a
    halving backtracking test on the batch objective, so full-batch histories
    are monotone non-increasing by construction.
    """
    grid, b_all, pool, batch = _prepare(views, config)
    rng = np.random.default_rng(config.seed)
    wh = grid.half_width
    n = params["d"].shape[0] if "d" in params else params["pu"].shape[1]
    gamma = layer_regularizer(n) if config.reg_kind == "layer" else np.eye(n)
    gram = gamma.T @ gamma
    full_batch = batch >= len(pool)

    def batch_objective(p, kx, ky, b):
        pu, pv = shifts_of(p)
        A = _system_batch(pu, pv, grid, kx, ky)
        x = _solve_batch(A, b, config.lam, gram)
        val, r = _objective_terms(A, x, b, config.lam, gamma)
        return val / b.shape[0], A, x, r

    holdout = pool if full_batch else rng.permutation(pool)[: min(len(pool), 2048)]
    hk_x, hk_y = holdout % wh, holdout // wh

    def holdout_objective():
        val, _, _, _ = batch_objective(params, hk_x, hk_y, b_all[holdout])
        return val

    stepper = _Stepper(config.step, config.stability_eps)
    history: list[HistoryEntry] = []
    obj0 = holdout_objective()
    order = None
    cursor = 0
    converged = False
    gain = 1.0

    for it in range(config.max_iters):
        if full_batch:
            sel = pool
        else:
            if order is None or cursor + batch > len(order):
                order = rng.permutation(pool)
                cursor = 0
            sel = order[cursor : cursor + batch]
            cursor += batch
        kx, ky = sel % wh, sel // wh
        b = b_all[sel]
        f_cur, A, x, r = batch_objective(params, kx, ky, b)
        g_pu, g_pv = _grad_p(A, x, r, grid.omega_x[kx], grid.omega_y[ky])
        g_pu /= len(sel)
        g_pv /= len(sel)
        grads = grads_of(params, g_pu, g_pv)
        deltas = {name: gain * stepper.delta(name, g, f_cur) for name, g in grads.items()}

        t = 1.0
        accepted = None
        for _ in range(40):
            trial = {name: params[name] - t * deltas[name] for name in params}
            recenter(trial)
            f_trial, _, _, _ = batch_objective(trial, kx, ky, b)
            if np.isfinite(f_trial) and f_trial <= f_cur:
                accepted = (trial, f_trial)
                break
            t /= 2.0
        if accepted is None:
            converged = True
            history.append(HistoryEntry(iteration=it, objective=f_cur if full_batch else holdout_objective()))
            break
        params.update(accepted[0])
        # Trust-region style adaptation: grow while full steps keep being
        # accepted, shrink toward the accepted scale after backtracks.
        gain = float(np.clip(gain * (1.5 if t == 1.0 else t), 1e-6, 1e9))

        obj = accepted[1] if full_batch else holdout_objective()
        steps = {f"step_{name[-1]}": t * float(np.linalg.norm(d)) for name, d in deltas.items()}
        history.append(HistoryEntry(iteration=it, objective=obj, **steps))
        if not np.isfinite(obj) or obj > 10.0 * max(obj0, np.finfo(float).tiny):
            raise CalibrationDivergence(
                f"objective grew to {obj:.3e} from {obj0:.3e} at iteration {it}", history
            )
        if len(history) > config.tol_window:
            prev = history[-1 - config.tol_window].objective
            denom = max(abs(prev), np.finfo(float).tiny)
            if (prev - obj) / denom < config.tol:
                converged = True
                break
    return history, converged


def calibrate(views: ViewSet, config: CalibConfig) -> CalibrationResult:
    """Estimate (u, v, d) for a set of pinhole views.

    Runs the normalized stochastic descent on the factored shift model,
    re-centering u and v to zero mean every iteration (the objective only
    constrains them up to translation and scale).  Returns d sorted
    ascending with the iteration history.
    """
    rng = np.random.default_rng(config.seed)
    u0, v0 = _init_uv(views, config, rng)
    d0 = np.linspace(config.d_min, config.d_max, config.n_layers)
    params = {"u": u0, "v": v0, "d": d0.copy()}

    def shifts_of(p):
        return np.outer(p["u"], p["d"]), np.outer(p["v"], p["d"])

    def grads_of(p, g_pu, g_pv):
        gu, gv, gd = grad_factored(g_pu, g_pv, p["u"], p["v"], p["d"])
        return {"u": gu, "v": gv, "d": gd}

    def recenter(p):
        p["u"] = p["u"] - p["u"].mean()
        p["v"] = p["v"] - p["v"].mean()

    history, converged = _run_descent(views, config, shifts_of, grads_of, params, recenter)
    order = np.argsort(params["d"])
    return CalibrationResult(
        u=params["u"], v=params["v"], d=params["d"][order], history=history, converged=converged
    )


def calibrate_relaxed(views: ViewSet, p_init: ShiftParams, config: CalibConfig) -> tuple[ShiftParams, list[HistoryEntry]]:
    """Refine per-(view, layer) shift matrices without the rank-1 constraint.

    `p_init` should come from a completed factored calibration; its layer
    disparities ride along on the result for construction and rendering.
    """
    pu0, pv0 = p_init.expand()
    d_attached = p_init.d
    params = {"pu": pu0.copy(), "pv": pv0.copy()}

    def shifts_of(p):
        return p["pu"], p["pv"]

    def grads_of(p, g_pu, g_pv):
        return {"pu": g_pu, "pv": g_pv}

    history, _ = _run_descent(views, config, shifts_of, grads_of, params, lambda p: None)
    return ShiftParams.relaxed(params["pu"], params["pv"], d=d_attached), history


def regauge_to_coords(shifts: ShiftParams, u_ref, v_ref) -> ShiftParams:
    """Express factored shifts in the gauge of reference coordinates.

    The objective only pins u, v up to a shared scale and translation (both
    absorbed by the layer solve), so calibrated coordinates float in an
    arbitrary gauge.  This maps (u, v, d) -> (c*u + tu, c*v + tv, d/c) with
    (c, tu, tv) the least-squares fit onto the reference coordinates, making
    the model renderable at user-declared viewpoints.
    """
    if not shifts.is_factored:
        raise ValueError("only factored shift parameters carry a gauge")
    u_ref = np.asarray(u_ref, dtype=np.float64)
    v_ref = np.asarray(v_ref, dtype=np.float64)
    uc = shifts.u - shifts.u.mean()
    vc = shifts.v - shifts.v.mean()
    ur = u_ref - u_ref.mean()
    vr = v_ref - v_ref.mean()
    denom = float(np.sum(uc * uc) + np.sum(vc * vc))
    if denom <= 0:
        return ShiftParams.factored(
            uc + u_ref.mean(), vc + v_ref.mean(), shifts.d
        )
    c = float(np.sum(uc * ur) + np.sum(vc * vr)) / denom
    if abs(c) < 1e-12:
        c = 1.0
    return ShiftParams.factored(
        c * uc + u_ref.mean(), c * vc + v_ref.mean(), np.sort(shifts.d / c)
    )


def write_history_csv(history: list[HistoryEntry], path):
    """Diagnostic CSV: iteration, objective, step norms."""
    import csv

    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["iteration", "objective", "step_u", "step_v", "step_d"])
        for h in history:
            w.writerow([h.iteration, f"{h.objective:.12g}", h.step_u, h.step_v, h.step_d])
