"""Layer construction: per-frequency regularized least squares.

Every stored frequency carries an independent m x n complex system
A x = b with A_jk = exp(+2i*pi*(u_j*wx + v_j*wy)*d_k) * psi_j((s_j-d_k)*f_j*(wx,wy)),
solved in closed form through the regularized normal equations.  Frequencies
are embarrassingly parallel; the implementation batches them in chunks.
"""

from __future__ import annotations

import math

import numpy as np

from .lfmodel import FdlModel, ShiftParams, ViewSet
from .spectra import FrequencyGrid

__all__ = [
    "RankDeficiencyError",
    "view_regularizer",
    "regularizer_finite_range",
    "build_system_row",
    "solve_frequency",
    "construct_fdl",
]

DEFAULT_EPS = 1e-9
SOLVE_CHUNK = 16384
_NORMAL_RESIDUAL_TOL = 1e-8


class RankDeficiencyError(Exception):
    """Unregularized normal matrix is singular at some frequency."""


def view_regularizer(omega_x, omega_y, d, eps: float = DEFAULT_EPS):
    """Diagonal entries (wx^2+wy^2)^2 * d_k^4 + eps of the view regularizer.

    Penalizes the angular curvature of views rendered from the layers,
    integrated over the whole camera plane.  Broadcasts omega arrays against
    the layer axis: returns shape broadcast(omega).shape + (n,).
    """
    osq = (np.asarray(omega_x, float) ** 2 + np.asarray(omega_y, float) ** 2) ** 2
    d = np.asarray(d, float)
    return osq[..., None] * d**4 + eps


def regularizer_finite_range(d, omega, r: float):
    """Hermitian view-regularizer Gram matrix for a finite camera-plane range.

    For an angular integration interval of size r (per axis), entry (k1,k2)
    is |w|^4 d_k1^2 d_k2^2 prod_axis sinc(r*(d_k1-d_k2)*w_axis), the 1/r-scaled
    inner product of layer curvature responses.  As r grows this tends to the
    diagonal form used in production (`view_regularizer`).
    """
    if r <= 0:
        raise ValueError("range r must be positive")
    d = np.asarray(d, dtype=np.float64)
    dd = d[:, None] - d[None, :]
    om = np.atleast_1d(np.asarray(omega, dtype=np.float64))
    osq = float(np.sum(om**2))
    out = (osq**2) * np.outer(d**2, d**2)
    for w in om:
        out = out * np.sinc(r * dd * w)
    return out


def _phase_tables(pu, pv, grid: FrequencyGrid):
    """Per-axis phase factor tables exp(+2i*pi*P*omega), shape (m, n, bins).

    Self-conjugate Nyquist lines take the symmetric cosine value so that
    models built from these factors invert to exactly real images.
    """
    px = np.exp(2j * np.pi * pu[:, :, None] * grid.omega_x[None, None, :])
    py = np.exp(2j * np.pi * pv[:, :, None] * grid.omega_y[None, None, :])
    if grid.width % 2 == 0:
        px[:, :, grid.width // 2] = np.cos(np.pi * pu)
    if grid.height % 2 == 0:
        py[:, :, grid.height // 2] = np.cos(np.pi * pv)
    return px, py


def build_system_row(view: ViewSet, j: int, omega, d, grid: FrequencyGrid | None = None):
    """System-matrix row for view j at frequency (wx, wy): one entry per layer.

    With `grid` given, frequencies on a self-conjugate Nyquist line use the
    symmetric phase convention of the batched construction path.
    """
    wx, wy = float(omega[0]), float(omega[1])
    d = np.asarray(d, dtype=np.float64)
    if view.is_pinhole(j):
        pu = view.u[j] * d
        pv = view.v[j] * d
    else:
        pu = view.u[j] * d
        pv = view.v[j] * d
    phx = np.exp(2j * np.pi * pu * wx)
    phy = np.exp(2j * np.pi * pv * wy)
    if grid is not None:
        if grid.width % 2 == 0 and wx == grid.omega_x[grid.width // 2]:
            phx = np.cos(np.pi * pu).astype(np.complex128)
        if grid.height % 2 == 0 and wy == grid.omega_y[grid.height // 2]:
            phy = np.cos(np.pi * pv).astype(np.complex128)
    row = phx * phy
    ap = view.apertures[j]
    if ap is not None and not ap.is_pinhole:
        t = view.aperture_scale[j] * (view.s[j] - d)
        row = row * ap.evaluate(t * wx, t * wy)
    return row


def _as_reg_matrix(reg, n):
    reg = np.asarray(reg, dtype=np.float64)
    if reg.ndim == 1:
        if reg.shape != (n,):
            raise ValueError("diagonal regularizer length must equal layer count")
        return np.diag(reg)
    if reg.shape != (n, n):
        raise ValueError("regularizer must be an n-vector or n x n matrix")
    return reg


def solve_frequency(A, b, reg, lam: float, freq=None):
    """Closed-form Tikhonov solution x = (A*A + lam*reg)^-1 A*b for one frequency.

    `reg` is the diagonal of the regularizer Gram matrix, or a full Hermitian
    matrix.  Guarantees a normal-equation residual below 1e-8 relative; at
    lam=0 a singular system raises RankDeficiencyError.
    """
    A = np.asarray(A, dtype=np.complex128)
    b = np.asarray(b, dtype=np.complex128)
    m, n = A.shape
    if lam < 0:
        raise ValueError("lam must be non-negative")
    if lam == 0 and n > m:
        raise RankDeficiencyError(
            f"{n} layers from {m} images is ill-posed without regularization"
        )
    R = _as_reg_matrix(reg, n) if lam > 0 else np.zeros((n, n))
    G = A.conj().T @ A + lam * R
    rhs = A.conj().T @ b
    tag = "" if freq is None else f" at frequency {freq}"
    try:
        x = np.linalg.solve(G, rhs)
    except np.linalg.LinAlgError:
        if lam == 0:
            raise RankDeficiencyError(f"singular normal matrix{tag}") from None
        x = _stacked_lstsq(A, b, lam, R)
    resid = np.linalg.norm(G @ x - rhs) / max(np.linalg.norm(rhs), np.finfo(float).tiny)
    if resid > _NORMAL_RESIDUAL_TOL:
        if lam == 0:
            raise RankDeficiencyError(f"singular normal matrix{tag}")
        x = _stacked_lstsq(A, b, lam, R)
    return x


def _stacked_lstsq(A, b, lam, R):
    """Minimum-norm solve of the regularized LS problem (degenerate fallback)."""
    w, V = np.linalg.eigh(R)
    w = np.clip(w, 0.0, None)
    Gamma = (V * np.sqrt(lam * w)) @ V.conj().T
    Astack = np.vstack([A, Gamma])
    pad = np.zeros((A.shape[1],) + b.shape[1:], dtype=np.complex128)
    bstack = np.concatenate([b, pad], axis=0)
    return np.linalg.lstsq(Astack, bstack, rcond=None)[0]


def _system_chunk(pu, pv, px, py, views, d, grid, kx, ky):
    """A matrices for a chunk of frequencies: (B, m, n)."""
    A = (px[:, :, kx] * py[:, :, ky]).transpose(2, 0, 1)
    for j in range(pu.shape[0]):
        ap = views.apertures[j]
        if ap is None or ap.is_pinhole:
            continue
        t = views.aperture_scale[j] * (views.s[j] - np.asarray(d))
        wx = grid.omega_x[kx]
        wy = grid.omega_y[ky]
        for k in range(len(d)):
            A[:, j, k] *= ap.evaluate(t[k] * wx, t[k] * wy)
    return np.ascontiguousarray(A)


def _solve_chunk(A, b, reg, lam, grid, kx, ky):
    """Batched normal-equation solve for one frequency chunk.

    A: (B, m, n), b: (B, m, C), reg: (B, n).  Falls back to a minimum-norm
    stacked solve on frequencies where the normal equations are numerically
    degenerate (possible when lam*reg is tiny and layer phases alias).
    """
    Ah = A.conj().transpose(0, 2, 1)
    G = Ah @ A
    n = A.shape[2]
    if lam > 0:
        G[:, np.arange(n), np.arange(n)] += lam * reg
    rhs = Ah @ b
    try:
        x = np.linalg.solve(G, rhs)
        bad = ~np.all(np.isfinite(x), axis=(1, 2))
    except np.linalg.LinAlgError:
        x = np.zeros((A.shape[0], n, b.shape[2]), dtype=np.complex128)
        bad = np.ones(A.shape[0], dtype=bool)
    resid = np.linalg.norm(G @ x - rhs, axis=(1, 2))
    scale = np.linalg.norm(rhs, axis=(1, 2))
    bad |= resid > _NORMAL_RESIDUAL_TOL * np.maximum(scale, np.finfo(float).tiny)
    for idx in np.nonzero(bad)[0]:
        freq = (grid.omega_x[kx[idx]], grid.omega_y[ky[idx]])
        if lam == 0:
            raise RankDeficiencyError(f"singular normal matrix at frequency {freq}")
        R = np.diag(reg[idx])
        x[idx] = _stacked_lstsq(A[idx], b[idx], lam, R)
    return x


def default_lambda(b_norms_sq, m: int) -> float:
    """Relative default: 1e-4 times the mean per-frequency ||b||^2 / m."""
    return 1e-4 * float(np.mean(b_norms_sq)) / m


def construct_fdl(
    views: ViewSet,
    shifts: ShiftParams,
    lam: float | None = None,
    eps: float = DEFAULT_EPS,
    pad_margin: int | None = None,
    chunk: int = SOLVE_CHUNK,
) -> FdlModel:
    """Build the disparity-layer model from a ViewSet by per-frequency solves.

    Images are zero-padded spatially by `pad_margin` (default: the ceiling of
    the largest layer shift) before the transforms, suppressing circular
    wrap-around on non-periodic photographs; the margin is recorded in the
    model.  `lam=None` picks the data-scaled default.
    """
    pu, pv = shifts.expand()
    m = views.num_views
    if pu.shape[0] != m:
        raise ValueError(f"shift parameters describe {pu.shape[0]} views, got {m}")
    n = pu.shape[1]
    if shifts.is_factored:
        d = np.asarray(shifts.d, dtype=np.float64)
    elif shifts.d is not None:
        d = np.asarray(shifts.d, dtype=np.float64)
    else:
        raise ValueError("relaxed shift parameters need layer disparities attached")
    if lam == 0 and n > m:
        raise RankDeficiencyError(
            f"{n} layers from {m} images is ill-posed without regularization"
        )

    if pad_margin is None:
        biggest = max(np.max(np.abs(pu)), np.max(np.abs(pv))) if n else 0.0
        pad_margin = int(math.ceil(biggest))
    img = views.images
    if pad_margin > 0:
        img = np.pad(img, ((0, 0), (pad_margin, pad_margin), (pad_margin, pad_margin), (0, 0)))
    mh, mw = img.shape[1], img.shape[2]
    grid = FrequencyGrid(width=mw, height=mh)
    wh = grid.half_width
    c = views.channels

    # (m, C, H, Wh) -> (Q, m, C) with q enumerating (ky, kx) row-major
    spec = np.fft.rfft2(np.moveaxis(img, 3, 1), axes=(-2, -1))
    b_all = spec.reshape(m, c, mh * wh).transpose(2, 0, 1)

    if lam is None:
        lam = default_lambda(np.sum(np.abs(b_all) ** 2, axis=(1, 2)), m)
    if lam < 0:
        raise ValueError("lam must be non-negative")

    px, py = _phase_tables(pu, pv, grid)
    osq_cols = grid.omega_x**2
    osq_rows = grid.omega_y**2
    d4 = d**4

    q_total = mh * wh
    x_all = np.empty((q_total, n, c), dtype=np.complex128)
    for q0 in range(0, q_total, chunk):
        q1 = min(q0 + chunk, q_total)
        q = np.arange(q0, q1)
        kx = q % wh
        ky = q // wh
        A = _system_chunk(pu, pv, px, py, views, d, grid, kx, ky)
        reg = (osq_cols[kx] + osq_rows[ky])[:, None] ** 2 * d4[None, :] + eps
        x_all[q0:q1] = _solve_chunk(A, b_all[q0:q1], reg, lam, grid, kx, ky)

    layers = np.ascontiguousarray(x_all.reshape(mh, wh, n, c).transpose(2, 3, 0, 1))
    # The kx=0 (and even-W Nyquist) columns carry both members of each
    # conjugate pair.  Degenerate-frequency fallbacks can pick different
    # members of the solution family for the two halves, so enforce the
    # pairing explicitly; any averaged pair fits the data at least as well.
    flip = np.concatenate(([0], np.arange(mh - 1, 0, -1)))
    for kx_sc in grid.self_conjugate_x():
        col = layers[:, :, :, kx_sc]
        layers[:, :, :, kx_sc] = 0.5 * (col + np.conj(col[:, :, flip]))
    for ky_sc in grid.self_conjugate_y():
        for kx_sc in grid.self_conjugate_x():
            layers[:, :, ky_sc, kx_sc] = layers[:, :, ky_sc, kx_sc].real
    return FdlModel(
        disparities=d,
        layers=layers,
        grid=grid,
        width=views.width,
        height=views.height,
        pad_margin=pad_margin,
        color_space=views.color_space,
        calibration=shifts,
        lambda_used=float(lam),
    )
