"""Domain types for light fields, apertures, shift parameters and layer models.

Shift conventions: a view at angular position (u, v) shows scene content of
disparity d displaced by (-u*d, -v*d) pixels relative to the central view.
All shifts are circular (the DFT's implicit periodicity), so Fourier-side
identities hold exactly on synthetic data; real photographs are handled by
spatial zero-padding at construction time.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from numpy.typing import NDArray

from . import spectra
from .spectra import FrequencyGrid, HalfSpectrum

__all__ = [
    "ViewSet",
    "FdlModel",
    "ApertureSpec",
    "ShiftParams",
    "SceneSpec",
    "synthesize_lightfield",
    "synthesize_views_with_shifts",
    "expand_shifts",
    "luminance",
]

# Rec. 709 luma weights, used when collapsing RGB to a single channel.
LUMA_WEIGHTS = np.array([0.2126, 0.7152, 0.0722])

GAMMA = "gamma"
LINEAR = "linear"


@dataclass
class ApertureSpec:
    """Sampled Fourier transform of an aperture shape.

    `table` holds the centered (DC at index center) spectrum of the
    area-normalized aperture on a zero-padded frequency grid; `xi_x`/`xi_y`
    are its axes in cycles per angular unit.  A pinhole has no table and
    evaluates to 1 everywhere.  Lookups outside the table range return 0 and
    increment `oob_count` (aperture spectra decay, but a high count suggests
    raising pad_factor).
    """

    shape: str
    pad_factor: int = 1
    table: NDArray | None = None
    xi_x: NDArray[np.float64] | None = None
    xi_y: NDArray[np.float64] | None = None
    oob_count: int = field(default=0, compare=False)

    def __post_init__(self):
        if self.pad_factor < 1:
            raise ValueError("pad_factor must be >= 1")
        if not self.is_pinhole:
            if self.table is None or self.xi_x is None or self.xi_y is None:
                raise ValueError(f"aperture {self.shape!r} requires a sampled table")
            dc = self.table[len(self.xi_y) // 2, len(self.xi_x) // 2]
            if abs(dc - 1.0) > 1e-9:
                raise ValueError(f"aperture table not area-normalized: psi_hat(0)={dc}")

    @property
    def is_pinhole(self) -> bool:
        return self.shape == "pinhole"

    def _axis_lookup(self, q, axis_vals):
        step = axis_vals[1] - axis_vals[0]
        pos = (q - axis_vals[0]) / step
        n = len(axis_vals)
        valid = (pos >= 0.0) & (pos <= n - 1)
        i0 = np.clip(np.floor(pos).astype(np.intp), 0, n - 2)
        frac = np.clip(pos - i0, 0.0, 1.0)
        return i0, frac, valid

    def evaluate(self, xi_x, xi_y):
        """Bilinear lookup of psi_hat at arbitrary points (broadcastable)."""
        if self.is_pinhole:
            return np.ones(np.broadcast(xi_x, xi_y).shape, dtype=np.float64)
        xi_x, xi_y = np.broadcast_arrays(np.asarray(xi_x, float), np.asarray(xi_y, float))
        ix, fx, okx = self._axis_lookup(xi_x, self.xi_x)
        iy, fy, oky = self._axis_lookup(xi_y, self.xi_y)
        t = self.table
        out = (
            t[iy, ix] * (1 - fy) * (1 - fx)
            + t[iy, ix + 1] * (1 - fy) * fx
            + t[iy + 1, ix] * fy * (1 - fx)
            + t[iy + 1, ix + 1] * fy * fx
        )
        bad = ~(okx & oky)
        if np.any(bad):
            self.oob_count += int(np.count_nonzero(bad))
            out = np.where(bad, 0.0, out)
        return out

    def evaluate_scaled_grid(self, t: float, grid: FrequencyGrid):
        """psi_hat(t*omega_x, t*omega_y) over a half-plane grid.

        The query points form a rectilinear grid, so the bilinear lookup
        separates into one pass per axis; this is the render hot path.
        """
        if self.is_pinhole:
            return None  # callers treat None as all-ones
        qy = t * grid.omega_y
        qx = t * grid.omega_x
        iy, fy, oky = self._axis_lookup(qy, self.xi_y)
        ix, fx, okx = self._axis_lookup(qx, self.xi_x)
        rows = self.table[iy, :] * (1 - fy)[:, None] + self.table[iy + 1, :] * fy[:, None]
        out = rows[:, ix] * (1 - fx)[None, :] + rows[:, ix + 1] * fx[None, :]
        n_oob = (len(qy) - int(np.count_nonzero(oky))) * len(qx) + int(
            np.count_nonzero(oky)
        ) * (len(qx) - int(np.count_nonzero(okx)))
        if n_oob:
            self.oob_count += n_oob
            out[~oky, :] = 0.0
            out[:, ~okx] = 0.0
        return out


@dataclass
class ViewSet:
    """A set of m input images with per-image acquisition parameters.

    images: (m, H, W, C) real data in [0, 1].
    u, v: angular coordinates; s: refocus parameter (ignored by pinholes).
    apertures: per-view ApertureSpec, None meaning pinhole.
    """

    images: NDArray[np.float64]
    u: NDArray[np.float64]
    v: NDArray[np.float64]
    s: NDArray[np.float64] | None = None
    apertures: list[ApertureSpec | None] | None = None
    aperture_scale: NDArray[np.float64] | None = None
    color_space: str = GAMMA

    def __post_init__(self):
        img = np.asarray(self.images, dtype=np.float64)
        if img.ndim == 3:
            img = img[:, :, :, None]
        if img.ndim != 4:
            raise ValueError(f"images must be (m,H,W[,C]), got shape {np.shape(self.images)}")
        self.images = img
        m = img.shape[0]
        self.u = np.asarray(self.u, dtype=np.float64).reshape(m)
        self.v = np.asarray(self.v, dtype=np.float64).reshape(m)
        if self.s is None:
            self.s = np.zeros(m)
        else:
            self.s = np.asarray(self.s, dtype=np.float64).reshape(m)
        if not (np.all(np.isfinite(self.u)) and np.all(np.isfinite(self.v)) and np.all(np.isfinite(self.s))):
            raise ValueError("view coordinates must be finite")
        if self.apertures is None:
            self.apertures = [None] * m
        if len(self.apertures) != m:
            raise ValueError("apertures list length must match image count")
        if self.aperture_scale is None:
            self.aperture_scale = np.ones(m)
        else:
            self.aperture_scale = np.asarray(self.aperture_scale, dtype=np.float64).reshape(m)
        if self.color_space not in (GAMMA, LINEAR):
            raise ValueError(f"unknown color space {self.color_space!r}")

    @property
    def num_views(self) -> int:
        return self.images.shape[0]

    @property
    def height(self) -> int:
        return self.images.shape[1]

    @property
    def width(self) -> int:
        return self.images.shape[2]

    @property
    def channels(self) -> int:
        return self.images.shape[3]

    def is_pinhole(self, j: int) -> bool:
        ap = self.apertures[j]
        return ap is None or ap.is_pinhole

    @property
    def all_pinhole(self) -> bool:
        return all(self.is_pinhole(j) for j in range(self.num_views))


def luminance(views: ViewSet) -> NDArray[np.float64]:
    """(m, H, W) luma images (Rec. 709 weights for 3-channel data)."""
    img = views.images
    if img.shape[3] == 1:
        return img[:, :, :, 0]
    if img.shape[3] == 3:
        return img @ LUMA_WEIGHTS
    return img.mean(axis=3)


@dataclass
class ShiftParams:
    """Per-(view, layer) pixel shifts, factored (u d^T) or relaxed (explicit).

    The factored form stores u, v (m-vectors) and d (n-vector); it expands to
    the rank-1 outer products Pu = u d^T, Pv = v d^T.  The relaxed form stores
    the matrices directly.
    """

    u: NDArray[np.float64] | None = None
    v: NDArray[np.float64] | None = None
    d: NDArray[np.float64] | None = None
    pu: NDArray[np.float64] | None = None
    pv: NDArray[np.float64] | None = None

    @classmethod
    def factored(cls, u, v, d) -> "ShiftParams":
        u = np.atleast_1d(np.asarray(u, dtype=np.float64))
        v = np.atleast_1d(np.asarray(v, dtype=np.float64))
        d = np.atleast_1d(np.asarray(d, dtype=np.float64))
        if u.shape != v.shape:
            raise ValueError("u and v must have the same length")
        if not (np.all(np.isfinite(u)) and np.all(np.isfinite(v)) and np.all(np.isfinite(d))):
            raise ValueError("shift parameters must be finite")
        return cls(u=u, v=v, d=d)

    @classmethod
    def relaxed(cls, pu, pv, d=None) -> "ShiftParams":
        """Explicit per-(view, layer) shifts; `d` optionally keeps the layer
        disparities of the factored solution the matrices were seeded from
        (construction and rendering still need them)."""
        pu = np.atleast_2d(np.asarray(pu, dtype=np.float64))
        pv = np.atleast_2d(np.asarray(pv, dtype=np.float64))
        if pu.shape != pv.shape:
            raise ValueError("Pu and Pv must have the same shape")
        if not (np.all(np.isfinite(pu)) and np.all(np.isfinite(pv))):
            raise ValueError("shift matrices must be finite")
        if d is not None:
            d = np.atleast_1d(np.asarray(d, dtype=np.float64))
            if d.shape != (pu.shape[1],):
                raise ValueError("d must have one entry per layer column")
        return cls(pu=pu, pv=pv, d=d)

    @property
    def is_factored(self) -> bool:
        return self.u is not None

    @property
    def num_views(self) -> int:
        return len(self.u) if self.is_factored else self.pu.shape[0]

    @property
    def num_layers(self) -> int:
        return len(self.d) if self.is_factored else self.pu.shape[1]

    def expand(self):
        if self.is_factored:
            return np.outer(self.u, self.d), np.outer(self.v, self.d)
        return self.pu, self.pv


def expand_shifts(p: ShiftParams):
    """(Pu, Pv) pixel-shift matrices; outer products for factored params."""
    return p.expand()


@dataclass
class FdlModel:
    """Disparity-layer spectra plus everything needed to render from them.

    layers: (n, C, Hp, Whp) complex coefficients over the padded half-plane
    grid; disparities are strictly increasing, in pixels per unit angular
    coordinate.  `width`/`height` are the original (pre-padding) image dims.
    """

    disparities: NDArray[np.float64]
    layers: NDArray[np.complex128]
    grid: FrequencyGrid
    width: int
    height: int
    pad_margin: int = 0
    color_space: str = GAMMA
    calibration: ShiftParams | None = None
    lambda_used: float | None = None
    convention: str = spectra.DFT_CONVENTION

    def __post_init__(self):
        d = np.asarray(self.disparities, dtype=np.float64)
        if d.ndim != 1 or d.size < 1:
            raise ValueError("disparities must be a non-empty vector")
        if not np.all(np.isfinite(d)):
            raise ValueError("disparities must be finite")
        if d.size > 1 and not np.all(np.diff(d) > 0):
            raise ValueError("disparities must be strictly increasing")
        self.disparities = d
        lay = np.asarray(self.layers, dtype=np.complex128)
        expected = (self.grid.height, self.grid.half_width)
        if lay.ndim != 4 or lay.shape[0] != d.size or lay.shape[2:] != expected:
            raise ValueError(
                f"layers must be (n={d.size}, C, {expected[0]}, {expected[1]}), got {lay.shape}"
            )
        self.layers = lay
        if self.grid.width != self.width + 2 * self.pad_margin or self.grid.height != self.height + 2 * self.pad_margin:
            raise ValueError("grid dimensions must equal spatial dims plus twice the pad margin")

    @property
    def num_layers(self) -> int:
        return self.layers.shape[0]

    @property
    def channels(self) -> int:
        return self.layers.shape[1]

    def layer_spectrum(self, k: int) -> HalfSpectrum:
        return HalfSpectrum(self.grid, self.layers[k])


@dataclass
class SceneSpec:
    """Ground-truth layered scene: disjoint label masks over a texture.

    The masks must partition the image (the non-occluded Lambertian premise);
    each region k moves with disparity d_k across views.
    """

    masks: NDArray[np.bool_]
    disparities: NDArray[np.float64]
    texture: NDArray[np.float64]

    def __post_init__(self):
        masks = np.asarray(self.masks, dtype=bool)
        if masks.ndim != 3:
            raise ValueError("masks must be (K, H, W)")
        cover = masks.sum(axis=0)
        if np.any(cover > 1):
            raise ValueError("invalid scene: region masks overlap")
        if np.any(cover < 1):
            raise ValueError("invalid scene: region masks do not cover the image")
        self.masks = masks
        d = np.asarray(self.disparities, dtype=np.float64).reshape(masks.shape[0])
        self.disparities = d
        tex = np.asarray(self.texture, dtype=np.float64)
        if tex.ndim == 2:
            tex = tex[:, :, None]
        if tex.shape[:2] != masks.shape[1:]:
            raise ValueError("texture dimensions must match the masks")
        self.texture = tex

    @property
    def num_regions(self) -> int:
        return self.masks.shape[0]


def _shift_image(img: NDArray[np.float64], dx: float, dy: float) -> NDArray[np.float64]:
    """Circularly displace content by (+dx, +dy) pixels; Fourier for fractional."""
    if dx == int(dx) and dy == int(dy):
        return np.roll(img, (int(dy), int(dx)), axis=(0, 1))
    hs = spectra.forward(img)
    py, px = spectra.shift_phase(hs.grid, dx, dy)
    hs.values *= py[None, :, None] * px[None, None, :]
    hs.realize_self_conjugate()
    out = spectra.inverse(hs)
    if img.ndim == 3 and out.ndim == 2:
        out = out[:, :, None]
    return out


def synthesize_views_with_shifts(
    scene: SceneSpec,
    pu: NDArray[np.float64],
    pv: NDArray[np.float64],
    coords=None,
    color_space: str = GAMMA,
) -> ViewSet:
    """Render views whose layer k is displaced by (-pu[j,k], -pv[j,k]) pixels.

    With pu = u d^T this is the non-occluded Lambertian light field; arbitrary
    matrices produce rank-relaxed test data.
    """
    pu = np.atleast_2d(np.asarray(pu, dtype=np.float64))
    pv = np.atleast_2d(np.asarray(pv, dtype=np.float64))
    m, k = pu.shape
    if k != scene.num_regions:
        raise ValueError("shift matrices must have one column per scene region")
    views = np.zeros((m,) + scene.texture.shape, dtype=np.float64)
    region_images = scene.texture * scene.masks[:, :, :, None]
    for j in range(m):
        for r in range(k):
            views[j] += _shift_image(region_images[r], -pu[j, r], -pv[j, r])
    if coords is None:
        u = np.zeros(m)
        v = np.zeros(m)
    else:
        coords = np.asarray(coords, dtype=np.float64)
        u, v = coords[:, 0], coords[:, 1]
    return ViewSet(images=views, u=u, v=v, color_space=color_space)


def synthesize_lightfield(scene: SceneSpec, coords, color_space: str = GAMMA) -> ViewSet:
    """Views of the layered scene at the given (u, v) angular coordinates."""
    coords = np.asarray(coords, dtype=np.float64).reshape(-1, 2)
    pu = np.outer(coords[:, 0], scene.disparities)
    pv = np.outer(coords[:, 1], scene.disparities)
    return synthesize_views_with_shifts(scene, pu, pv, coords=coords, color_space=color_space)
