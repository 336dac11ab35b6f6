"""Rendering from a disparity-layer model: any viewpoint, focus and aperture.

A rendered image is a per-frequency weighted sum of layer coefficients,
weight(k) = exp(+2i*pi*(u0*wx + v0*wy)*d_k) * psi_hat(f*(s-d_k)*(wx, wy)),
followed by one inverse transform.  The cost depends only on the spatial
resolution and the layer count, never on how many images built the model.
"""

from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np
from numpy.typing import NDArray

from . import spectra
from .construct import _phase_tables
from .lfmodel import ApertureSpec, FdlModel, ViewSet, LINEAR
from .spectra import FrequencyGrid

__all__ = [
    "RenderRequest",
    "RenderStats",
    "aperture_spectrum",
    "render",
    "render_views_with_shifts",
    "refocus_shift_and_sum",
    "srgb_encode",
    "srgb_decode",
    "last_render_stats",
]

DEFAULT_PAD_FACTOR = 4
DEFAULT_RESOLUTION = 64
_SUPERSAMPLE = 4


def srgb_decode(x: NDArray) -> NDArray:
    """sRGB-encoded values to linear light."""
    x = np.asarray(x, dtype=np.float64)
    return np.where(x <= 0.04045, x / 12.92, ((np.clip(x, 0.04045, None) + 0.055) / 1.055) ** 2.4)


def srgb_encode(x: NDArray) -> NDArray:
    """Linear light to sRGB encoding (negative inputs clamp to 0)."""
    x = np.clip(np.asarray(x, dtype=np.float64), 0.0, None)
    return np.where(x <= 0.0031308, x * 12.92, 1.055 * np.clip(x, 0.0031308, None) ** (1 / 2.4) - 0.055)


def _coverage_raster(shape: str, resolution: int, **params) -> tuple[NDArray, float]:
    """(raster, extent) for a shape; raster values are pixel coverage in [0,1]."""
    n = resolution * _SUPERSAMPLE
    if shape == "square":
        side = float(params["side"])
        if side <= 0:
            raise ValueError("square aperture needs a positive side")
        return np.ones((resolution, resolution)), side
    if shape == "disk":
        diameter = float(params["diameter"])
        if diameter <= 0:
            raise ValueError("disk aperture needs a positive diameter")
        c = np.arange(n) + 0.5 - n / 2
        yy, xx = np.meshgrid(c, c, indexing="ij")
        inside = (xx**2 + yy**2) <= (n / 2) ** 2
        cov = inside.reshape(resolution, _SUPERSAMPLE, resolution, _SUPERSAMPLE).mean(axis=(1, 3))
        return cov, diameter
    if shape == "polygon":
        verts = np.asarray(params["vertices"], dtype=np.float64)
        if verts.ndim != 2 or verts.shape[0] < 3 or verts.shape[1] != 2:
            raise ValueError("polygon aperture needs at least 3 (x, y) vertices")
        from PIL import Image, ImageDraw

        extent = 2.0 * float(np.max(np.abs(verts)))
        if extent <= 0:
            raise ValueError("invalid aperture: zero area")
        img = Image.new("L", (n, n), 0)
        # physical (x, y) -> supersampled pixel coordinates, y down
        px = (verts[:, 0] / extent + 0.5) * n - 0.5
        py = (verts[:, 1] / extent + 0.5) * n - 0.5
        ImageDraw.Draw(img).polygon(list(zip(px.tolist(), py.tolist())), fill=255)
        cov = np.asarray(img, dtype=np.float64) / 255.0
        cov = cov.reshape(resolution, _SUPERSAMPLE, resolution, _SUPERSAMPLE).mean(axis=(1, 3))
        return cov, extent
    if shape == "raster":
        img = np.asarray(params["image"], dtype=np.float64)
        if img.ndim != 2 or img.size == 0:
            raise ValueError("raster aperture needs a 2D image")
        return img, float(params["extent"])
    raise ValueError(f"unknown aperture shape {shape!r}")


def aperture_spectrum(shape: str, pad_factor: int = DEFAULT_PAD_FACTOR,
                      resolution: int = DEFAULT_RESOLUTION, **params) -> ApertureSpec:
    """Sample the Fourier transform of an aperture shape onto a padded grid.

    The shape is drawn as a coverage raster, zero-padded by `pad_factor` to
    refine the spectral sampling, transformed, and area-normalized so
    psi_hat(0) = 1.  Returns a pinhole spec (psi_hat = 1 everywhere) for
    shape "pinhole".
    """
    if pad_factor < 1:
        raise ValueError("pad_factor must be >= 1")
    if shape == "pinhole":
        return ApertureSpec(shape="pinhole", pad_factor=pad_factor)
    raster, extent = _coverage_raster(shape, resolution, **params)
    area = raster.sum()
    if area <= 0:
        raise ValueError("invalid aperture: zero area")
    nr, nc = raster.shape
    if extent <= 0:
        raise ValueError("aperture extent must be positive")
    du = extent / max(nr, nc)
    pr, pc = nr * pad_factor, nc * pad_factor
    padded = np.zeros((pr, pc))
    padded[:nr, :nc] = raster
    f = np.fft.fft2(padded)
    # Shift so pixel centers sit symmetrically around the physical origin.
    ax_c = np.exp(2j * np.pi * np.fft.fftfreq(pc) * ((nc - 1) / 2))
    ax_r = np.exp(2j * np.pi * np.fft.fftfreq(pr) * ((nr - 1) / 2))
    f *= ax_r[:, None] * ax_c[None, :]
    table = np.fft.fftshift(f) / area
    xi_x = np.fft.fftshift(np.fft.fftfreq(pc, d=du))
    xi_y = np.fft.fftshift(np.fft.fftfreq(pr, d=du))
    if np.max(np.abs(table.imag)) < 1e-12 * np.max(np.abs(table.real)):
        table = np.ascontiguousarray(table.real)
    label = {"square": f"square({params.get('side')})",
             "disk": f"disk({params.get('diameter')})",
             "polygon": "polygon",
             "raster": "raster"}[shape]
    return ApertureSpec(shape=label if shape != "raster" else "raster",
                        pad_factor=pad_factor, table=table, xi_x=xi_x, xi_y=xi_y)


@dataclass
class RenderRequest:
    """One render: viewpoint (u, v), refocus s, aperture scale f >= 0.

    f = 0 gives a sub-aperture (pinhole) image regardless of aperture shape
    and s.  gamma_mode "linear-process" re-encodes to sRGB after rendering
    (only valid for models built in linear light).
    """

    u: float = 0.0
    v: float = 0.0
    s: float = 0.0
    f: float = 0.0
    aperture: ApertureSpec | None = None
    gamma_mode: str = "as-stored"
    crop: bool = True

    def __post_init__(self):
        if not np.isfinite(self.u) or not np.isfinite(self.v):
            raise ValueError("u and v must be finite")
        if not np.isfinite(self.s):
            raise ValueError("s must be finite")
        if not (np.isfinite(self.f) and self.f >= 0):
            raise ValueError("f must be >= 0")
        if self.gamma_mode not in ("as-stored", "linear-process"):
            raise ValueError(f"unknown gamma_mode {self.gamma_mode!r}")


@dataclass
class RenderStats:
    """Operation count of the last render; a pure function of (n, H, W)."""

    layer_ops: int = 0
    num_layers: int = 0
    grid_bins: int = 0
    seconds: float = 0.0
    aperture_pass: bool = False
    oob_lookups: int = 0

    def reset(self):
        self.layer_ops = 0
        self.num_layers = 0
        self.grid_bins = 0
        self.seconds = 0.0
        self.aperture_pass = False
        self.oob_lookups = 0


_LAST_STATS = RenderStats()


def last_render_stats() -> RenderStats:
    return _LAST_STATS


def _weighted_layer_sum(model: FdlModel, pu_row, pv_row, ap_values, stats: RenderStats):
    """Accumulate sum_k weight_k * layer_k over the half-plane grid."""
    grid = model.grid
    n = model.num_layers
    px, py = _phase_tables(pu_row[None, :], pv_row[None, :], grid)
    px, py = px[0], py[0]
    acc = np.zeros_like(model.layers[0])
    tmp = np.empty((grid.height, grid.half_width), dtype=np.complex128)
    for k in range(n):
        np.multiply(py[k][:, None], px[k][None, :], out=tmp)
        if ap_values is not None and ap_values[k] is not None:
            tmp *= ap_values[k]
            stats.layer_ops += tmp.size
        acc += tmp[None, :, :] * model.layers[k]
        stats.layer_ops += 2 * tmp.size
    stats.num_layers = n
    stats.grid_bins = grid.height * grid.half_width
    return acc


def _finish_image(model: FdlModel, acc, gamma_mode: str, crop: bool):
    img = spectra.irfft_fast(acc, model.grid)
    img = np.moveaxis(img, 0, 2)
    if crop and model.pad_margin:
        p = model.pad_margin
        img = img[p : p + model.height, p : p + model.width]
    if gamma_mode == "linear-process":
        if model.color_space != LINEAR:
            raise ValueError(
                "linear-process rendering needs a model built in linear light "
                f"(model stores {model.color_space!r} data)"
            )
        img = srgb_encode(img)
    if img.shape[2] == 1:
        img = img[:, :, 0]
    return np.ascontiguousarray(img)


def render(model: FdlModel, req: RenderRequest) -> NDArray[np.float64]:
    """Render the requested view from the layer model.

    Returns (H, W) or (H, W, C) float data in the model's color space
    (re-encoded to sRGB in linear-process mode), cropped back to the
    original image size unless req.crop is False.
    """
    t0 = time.perf_counter()
    _LAST_STATS.reset()
    d = model.disparities
    ap_values = None
    ap = req.aperture
    if req.f > 0 and ap is not None and not ap.is_pinhole:
        before = ap.oob_count
        ap_values = [ap.evaluate_scaled_grid(req.f * (req.s - dk), model.grid) for dk in d]
        _LAST_STATS.aperture_pass = True
        _LAST_STATS.oob_lookups = ap.oob_count - before
    acc = _weighted_layer_sum(model, req.u * d, req.v * d, ap_values, _LAST_STATS)
    out = _finish_image(model, acc, req.gamma_mode, req.crop)
    _LAST_STATS.seconds = time.perf_counter() - t0
    return out


def render_views_with_shifts(model: FdlModel, shifts) -> NDArray[np.float64]:
    """Reconstruct pinhole views using explicit per-(view, layer) shifts.

    This is the relaxed-model reconstruction path: view j applies the shift
    (pu[j,k], pv[j,k]) to layer k instead of (u_j*d_k, v_j*d_k).  Returns
    (m, H, W[, C]) images.
    """
    pu, pv = shifts.expand()
    out = []
    for j in range(pu.shape[0]):
        acc = _weighted_layer_sum(model, pu[j], pv[j], None, _LAST_STATS)
        out.append(_finish_image(model, acc, "as-stored", True))
    return np.stack(out)


def refocus_shift_and_sum(views: ViewSet, s: float, weights=None) -> NDArray[np.float64]:
    """Baseline refocusing oracle: weighted average of shifted pinhole views.

    View j is displaced by (+u_j*s, +v_j*s) pixels (fractional shifts via
    Fourier phase) and the stack averaged with the given aperture weights.
    """
    if views.num_views == 0:
        raise ValueError("cannot refocus an empty view set")
    if not views.all_pinhole:
        raise ValueError("shift-and-sum refocusing expects pinhole views")
    if weights is None:
        w = np.ones(views.num_views)
    else:
        w = np.asarray(weights, dtype=np.float64).reshape(views.num_views)
    total = w.sum()
    if total == 0:
        raise ValueError("aperture weights sum to zero")
    grid = FrequencyGrid(width=views.width, height=views.height)
    acc = np.zeros((views.channels, grid.height, grid.half_width), dtype=np.complex128)
    for j in range(views.num_views):
        hs = spectra.forward(views.images[j], grid)
        py, px = spectra.shift_phase(grid, views.u[j] * s, views.v[j] * s)
        acc += (w[j] / total) * hs.values * (py[None, :, None] * px[None, None, :])
    out = spectra.inverse(spectra.HalfSpectrum(grid, acc))
    return out
