"""Real-input 2D Fourier transforms with half-plane spectrum storage.

Convention (recorded in model file headers as "ufwd-inv1/WH"): unnormalized
forward DFT, inverse scaled by 1/(W*H).  Frequencies are expressed in cycles
per pixel.  Only the non-negative half of the x-frequency axis is stored
(floor(W/2)+1 columns); the y axis keeps its full range.  Every full-plane
coefficient is either stored or the complex conjugate of a stored one.

On even dimensions the Nyquist column/row is self-conjugate; those entries
must be real for the spectrum to describe a real image.  Phase factors for
fractional shifts use the symmetric (cosine) value on self-conjugate lines so
that shifted spectra stay exactly invertible to real images.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from numpy.typing import NDArray

DFT_CONVENTION = "ufwd-inv1/WH"

__all__ = [
    "DFT_CONVENTION",
    "FrequencyGrid",
    "HalfSpectrum",
    "SpectrumIntegrityError",
    "forward",
    "inverse",
    "axis_phase",
    "shift_phase",
    "parseval_energy",
]


class SpectrumIntegrityError(Exception):
    """Half spectrum violates the conjugate symmetry of a real image."""


@dataclass(frozen=True)
class FrequencyGrid:
    """Frequency bookkeeping for a W x H real image.

    ``omega_x`` has floor(W/2)+1 entries; for even W the last column is the
    Nyquist column and is labeled -0.5 so all frequencies lie in [-0.5, 0.5).
    ``omega_y`` is the full fftfreq range.
    """

    width: int
    height: int
    omega_x: NDArray[np.float64] = field(init=False, repr=False, compare=False)
    omega_y: NDArray[np.float64] = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        if self.width < 1 or self.height < 1:
            raise ValueError(f"invalid grid dimensions {self.width}x{self.height}")
        ox = np.arange(self.width // 2 + 1, dtype=np.float64) / self.width
        if self.width % 2 == 0:
            ox[-1] = -0.5
        oy = np.fft.fftfreq(self.height)
        object.__setattr__(self, "omega_x", ox)
        object.__setattr__(self, "omega_y", oy)
        ox.setflags(write=False)
        oy.setflags(write=False)

    @property
    def half_width(self) -> int:
        return self.width // 2 + 1

    @property
    def num_entries(self) -> int:
        return self.half_width * self.height

    def entries(self):
        """Yield (index, omega_x, omega_y) for every stored frequency."""
        idx = 0
        for ky in range(self.height):
            for kx in range(self.half_width):
                yield idx, self.omega_x[kx], self.omega_y[ky]
                idx += 1

    def self_conjugate_x(self) -> list[int]:
        """Column indices whose mirror column is themselves."""
        cols = [0]
        if self.width % 2 == 0:
            cols.append(self.width // 2)
        return cols

    def self_conjugate_y(self) -> list[int]:
        rows = [0]
        if self.height % 2 == 0:
            rows.append(self.height // 2)
        return rows

    def pair_weights(self) -> NDArray[np.float64]:
        """Multiplicity of each stored column in the full spectrum (1 or 2)."""
        w = np.full(self.half_width, 2.0)
        for c in self.self_conjugate_x():
            w[c] = 1.0
        return w


@dataclass
class HalfSpectrum:
    """Per-channel complex coefficients on a FrequencyGrid half-plane.

    values has shape (channels, H, floor(W/2)+1), channel-major so one
    channel's coefficients are contiguous.
    """

    grid: FrequencyGrid
    values: NDArray[np.complex128]

    def __post_init__(self):
        v = np.asarray(self.values)
        if v.ndim == 2:
            v = v[None]
        expected = (self.grid.height, self.grid.half_width)
        if v.shape[1:] != expected:
            raise ValueError(
                f"spectrum shape {v.shape[1:]} does not match grid half-plane {expected}"
            )
        self.values = np.ascontiguousarray(v, dtype=np.complex128)

    @property
    def channels(self) -> int:
        return self.values.shape[0]

    def copy(self) -> "HalfSpectrum":
        return HalfSpectrum(self.grid, self.values.copy())

    def realize_self_conjugate(self) -> None:
        """Project self-conjugate bins onto the real axis, in place.

        Solves and filters can leave a vanishing imaginary part on the four
        DC/Nyquist bins; a real inverse requires them to be exactly real.
        """
        for ky in self.grid.self_conjugate_y():
            for kx in self.grid.self_conjugate_x():
                self.values[:, ky, kx] = self.values[:, ky, kx].real


def forward(image: NDArray, grid: FrequencyGrid | None = None) -> HalfSpectrum:
    """Transform a real (H, W) or (H, W, C) image to its half spectrum.

    Raises ValueError when the image dimensions disagree with `grid`.
    """
    img = np.asarray(image, dtype=np.float64)
    if img.ndim == 2:
        img = img[:, :, None]
    if img.ndim != 3:
        raise ValueError(f"expected 2D or 3D image, got shape {np.shape(image)}")
    h, w, _ = img.shape
    if grid is None:
        grid = FrequencyGrid(width=w, height=h)
    elif (grid.width, grid.height) != (w, h):
        raise ValueError(
            f"image is {w}x{h} but grid declares {grid.width}x{grid.height}"
        )
    spec = np.fft.rfft2(np.moveaxis(img, 2, 0), axes=(-2, -1))
    return HalfSpectrum(grid, spec)


def _full_spectrum(hs: HalfSpectrum) -> NDArray[np.complex128]:
    """Expand the stored half plane to the full W-column spectrum."""
    g = hs.grid
    w, h = g.width, g.height
    full = np.empty((hs.channels, h, w), dtype=np.complex128)
    full[:, :, : g.half_width] = hs.values
    # Columns 1..ceil(W/2)-1 mirror to W-1..; conjugate with the y axis flipped.
    k = (w + 1) // 2 - 1
    if k > 0:
        flip_y = np.concatenate(([0], np.arange(h - 1, 0, -1)))
        src = np.conj(hs.values[:, flip_y, 1 : k + 1])
        full[:, :, w - 1 : w - k - 1 : -1] = src
    return full


def inverse(hs: HalfSpectrum, residue_tol: float = 1e-8) -> NDArray[np.float64]:
    """Invert a half spectrum to a real image, checking conjugate symmetry.

    The imaginary residue of the full inverse transform must stay below
    `residue_tol` times the signal peak; a larger residue means the spectrum
    does not describe a real image and raises SpectrumIntegrityError.
    Returns (H, W) for single-channel input, else (H, W, C).
    """
    full = _full_spectrum(hs)
    img = np.fft.ifft2(full, axes=(-2, -1))
    peak = float(np.max(np.abs(img.real)))
    residue = float(np.max(np.abs(img.imag)))
    if residue > residue_tol * max(peak, np.finfo(np.float64).tiny):
        raise SpectrumIntegrityError(
            f"imaginary residue {residue:.3e} exceeds {residue_tol:.1e} of peak {peak:.3e}"
        )
    out = np.moveaxis(img.real, 0, 2)
    if out.shape[2] == 1:
        return np.ascontiguousarray(out[:, :, 0])
    return np.ascontiguousarray(out)


def irfft_fast(values: NDArray[np.complex128], grid: FrequencyGrid) -> NDArray[np.float64]:
    """Inverse transform without the symmetry audit (hot render path).

    Callers must guarantee symmetry by construction; `inverse` is the
    checked variant.
    """
    return np.fft.irfft2(values, s=(grid.height, grid.width), axes=(-2, -1))


def axis_phase(omega: NDArray[np.float64], shift: float, nyquist_index: int | None) -> NDArray[np.complex128]:
    """Per-bin phase factors moving content by `shift` pixels along one axis.

    exp(-2i*pi*omega*shift), except the self-conjugate Nyquist bin takes the
    symmetric value cos(2*pi*0.5*shift) so real images stay real under
    fractional shifts.  Integer shifts are unaffected: cos(pi*t) = (-1)^t.
    """
    ph = np.exp(-2j * np.pi * omega * shift)
    if nyquist_index is not None:
        ph[nyquist_index] = np.cos(np.pi * shift)
    return ph


def shift_phase(grid: FrequencyGrid, dx: float, dy: float) -> tuple[NDArray[np.complex128], NDArray[np.complex128]]:
    """(y-axis, x-axis) phase vectors for a content shift of (+dx, +dy) pixels."""
    nyq_x = grid.width // 2 if grid.width % 2 == 0 else None
    nyq_y = grid.height // 2 if grid.height % 2 == 0 else None
    px = axis_phase(grid.omega_x, dx, nyq_x)
    py = axis_phase(grid.omega_y, dy, nyq_y)
    return py, px


def parseval_energy(hs: HalfSpectrum) -> float:
    """Spectral energy (1/WH)*sum |coeff|^2 with conjugate pairs counted twice."""
    g = hs.grid
    w = g.pair_weights()
    e = np.sum(w[None, None, :] * (hs.values.real**2 + hs.values.imag**2))
    return float(e) / (g.width * g.height)
