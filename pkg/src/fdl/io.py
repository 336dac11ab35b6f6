"""Persistent formats: light-field manifests, PNG images, binary models.

Model files ("FDL1") store spectra as interleaved 32-bit float complex pairs
in row-major half-plane order, per layer then per channel; all computation
upcasts to 64-bit.  Write -> read -> write round-trips are bit-identical.
"""

from __future__ import annotations

import json
import math
import struct
from pathlib import Path

import numpy as np
from PIL import Image

from .lfmodel import ApertureSpec, FdlModel, ShiftParams, ViewSet, GAMMA, LINEAR
from .render import DEFAULT_PAD_FACTOR, aperture_spectrum, srgb_decode
from .spectra import DFT_CONVENTION, FrequencyGrid

__all__ = [
    "ManifestError",
    "ModelFormatError",
    "load_lightfield",
    "load_image",
    "save_image",
    "save_model",
    "load_model",
    "save_calibration",
    "load_calibration",
]

MAGIC = b"FDL1"
_HEADER = struct.Struct("<4sIIIIIBB16sId")


class ManifestError(ValueError):
    """Manifest or referenced data is invalid."""


class ModelFormatError(ValueError):
    """Model file is corrupt or has an unsupported format."""


def load_image(path) -> np.ndarray:
    """Decode an 8- or 16-bit PNG (or similar) to float64 in [0, 1]."""
    img = Image.open(path)
    if img.mode == "RGBA":
        img = img.convert("RGB")
    if img.mode == "P":
        img = img.convert("RGB")
    arr = np.asarray(img)
    if arr.dtype == np.uint8:
        return arr.astype(np.float64) / 255.0
    if arr.dtype == np.uint16:
        return arr.astype(np.float64) / 65535.0
    if arr.dtype in (np.int32, np.int64):  # PIL mode "I" for 16-bit grayscale
        return arr.astype(np.float64) / 65535.0
    if np.issubdtype(arr.dtype, np.floating):
        return arr.astype(np.float64)
    raise ManifestError(f"unsupported image dtype {arr.dtype} in {path}")


def save_image(path, data, bit_depth: int = 8):
    """Write float data in [0, 1] as a PNG (values are clipped)."""
    arr = np.clip(np.asarray(data, dtype=np.float64), 0.0, 1.0)
    if arr.ndim == 3 and arr.shape[2] == 1:
        arr = arr[:, :, 0]
    if bit_depth == 8:
        out = (arr * 255.0).round().astype(np.uint8)
    elif bit_depth == 16:
        out = (arr * 65535.0).round().astype(np.uint16)
        if out.ndim == 3:
            raise ManifestError("16-bit output only supported for grayscale")
    else:
        raise ValueError("bit_depth must be 8 or 16")
    Image.fromarray(out).save(path)


def _build_aperture(name: str, defs: dict, cache: dict) -> ApertureSpec | None:
    if name == "pinhole":
        return None
    if name in cache:
        return cache[name]
    if name not in defs:
        raise ManifestError(f"unknown aperture name {name!r}")
    spec = dict(defs[name])
    shape = spec.pop("shape", None)
    if shape is None:
        raise ManifestError(f"aperture {name!r} does not declare a shape")
    pad = int(spec.pop("pad_factor", DEFAULT_PAD_FACTOR))
    try:
        ap = aperture_spectrum(shape, pad_factor=pad, **spec)
    except (KeyError, TypeError) as exc:
        raise ManifestError(f"aperture {name!r} is incomplete: {exc}") from exc
    cache[name] = ap
    return ap


def load_lightfield(manifest_path, to_linear: bool = False) -> ViewSet:
    """Load a ViewSet from a JSON manifest.

    The manifest lists image files with per-image angular coordinates, an
    optional refocus parameter and aperture name (default pinhole), plus a
    color-space flag.  With to_linear=True, gamma-encoded inputs are decoded
    to linear light before use.
    """
    manifest_path = Path(manifest_path)
    try:
        manifest = json.loads(manifest_path.read_text())
    except FileNotFoundError:
        raise ManifestError(f"manifest not found: {manifest_path}") from None
    except json.JSONDecodeError as exc:
        raise ManifestError(f"manifest is not valid JSON: {exc}") from exc
    entries = manifest.get("images")
    if not entries:
        raise ManifestError("manifest lists no images")
    color_space = manifest.get("color_space", GAMMA)
    aperture_defs = manifest.get("apertures", {})
    base = manifest_path.parent

    images, u, v, s, apertures, scales = [], [], [], [], [], []
    cache: dict[str, ApertureSpec] = {}
    for entry in entries:
        f = entry.get("file")
        if f is None:
            raise ManifestError("image entry missing 'file'")
        path = base / f
        if not path.exists():
            raise ManifestError(f"image file not found: {path}")
        img = load_image(path)
        images.append(img if img.ndim == 3 else img[:, :, None])
        try:
            u.append(float(entry["u"]))
            v.append(float(entry["v"]))
        except KeyError as exc:
            raise ManifestError(f"image {f!r} missing coordinate {exc}") from None
        s.append(float(entry.get("s", 0.0)))
        apertures.append(_build_aperture(entry.get("aperture", "pinhole"), aperture_defs, cache))
        scales.append(float(entry.get("aperture_scale", 1.0)))

    shapes = {im.shape for im in images}
    if len(shapes) > 1:
        raise ManifestError(f"images disagree on dimensions: {sorted(shapes)}")
    stack = np.stack(images)
    if to_linear and color_space == GAMMA:
        stack = srgb_decode(stack)
        color_space = LINEAR
    if not (all(math.isfinite(x) for x in u) and all(math.isfinite(x) for x in v)):
        raise ManifestError("view coordinates must be finite")
    return ViewSet(images=stack, u=np.array(u), v=np.array(v), s=np.array(s),
                   apertures=apertures, aperture_scale=np.array(scales),
                   color_space=color_space)


def save_model(path, model: FdlModel):
    """Serialize an FdlModel to the FDL1 binary format."""
    calib = model.calibration
    if calib is None:
        kind, m = 0, 0
    elif calib.is_factored:
        kind, m = 1, calib.num_views
    else:
        kind, m = 2, calib.num_views
    lam = model.lambda_used if model.lambda_used is not None else math.nan
    header = _HEADER.pack(
        MAGIC, model.width, model.height, model.pad_margin, model.num_layers,
        model.channels, 1 if model.color_space == LINEAR else 0, kind,
        model.convention.encode()[:16].ljust(16, b"\0"), m, lam,
    )
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(np.ascontiguousarray(model.disparities, dtype="<f8").tobytes())
        fh.write(np.ascontiguousarray(model.layers.astype(np.complex64)).tobytes())
        if kind == 1:
            fh.write(np.ascontiguousarray(calib.u, dtype="<f8").tobytes())
            fh.write(np.ascontiguousarray(calib.v, dtype="<f8").tobytes())
        elif kind == 2:
            fh.write(np.ascontiguousarray(calib.pu, dtype="<f8").tobytes())
            fh.write(np.ascontiguousarray(calib.pv, dtype="<f8").tobytes())


def load_model(path) -> FdlModel:
    """Read an FDL1 model file; rejects bad magic and truncated payloads."""
    raw = Path(path).read_bytes()
    if len(raw) < _HEADER.size:
        raise ModelFormatError(f"file too small for a model header: {path}")
    magic, w, h, pad, n, c, gamma_flag, kind, conv, m, lam = _HEADER.unpack_from(raw)
    if magic != MAGIC:
        raise ModelFormatError(f"bad magic {magic!r}; not an FDL1 model file")
    convention = conv.rstrip(b"\0").decode()
    if convention != DFT_CONVENTION:
        raise ModelFormatError(f"unsupported transform convention {convention!r}")
    hp, wp = h + 2 * pad, w + 2 * pad
    whp = wp // 2 + 1
    sizes = [n * 8, n * c * hp * whp * 8]
    if kind == 1:
        sizes += [m * 8, m * 8]
    elif kind == 2:
        sizes += [m * n * 8, m * n * 8]
    elif kind != 0:
        raise ModelFormatError(f"unknown calibration block kind {kind}")
    expected = _HEADER.size + sum(sizes)
    if len(raw) != expected:
        raise ModelFormatError(
            f"payload size mismatch: header implies {expected} bytes, file has {len(raw)}"
        )
    off = _HEADER.size
    d = np.frombuffer(raw, dtype="<f8", count=n, offset=off).copy()
    off += n * 8
    layers = np.frombuffer(raw, dtype=np.complex64, count=n * c * hp * whp, offset=off)
    layers = layers.reshape(n, c, hp, whp).astype(np.complex128)
    off += n * c * hp * whp * 8
    calibration = None
    if kind == 1:
        u = np.frombuffer(raw, dtype="<f8", count=m, offset=off).copy()
        off += m * 8
        v = np.frombuffer(raw, dtype="<f8", count=m, offset=off).copy()
        calibration = ShiftParams.factored(u, v, d)
    elif kind == 2:
        pu = np.frombuffer(raw, dtype="<f8", count=m * n, offset=off).reshape(m, n).copy()
        off += m * n * 8
        pv = np.frombuffer(raw, dtype="<f8", count=m * n, offset=off).reshape(m, n).copy()
        calibration = ShiftParams.relaxed(pu, pv, d=d)
    return FdlModel(
        disparities=d,
        layers=layers,
        grid=FrequencyGrid(width=wp, height=hp),
        width=w,
        height=h,
        pad_margin=pad,
        color_space=LINEAR if gamma_flag else GAMMA,
        calibration=calibration,
        lambda_used=None if math.isnan(lam) else lam,
        convention=convention,
    )


def save_calibration(path, u, v, d, meta: dict | None = None):
    """Calibration JSON consumed by `fdl build`."""
    doc = {"u": list(map(float, u)), "v": list(map(float, v)), "d": list(map(float, d))}
    if meta:
        doc.update(meta)
    with open(path, "w") as fh:
        json.dump(doc, fh, indent=2)


def load_calibration(path) -> ShiftParams:
    try:
        doc = json.loads(Path(path).read_text())
    except FileNotFoundError:
        raise ManifestError(f"calibration file not found: {path}") from None
    except json.JSONDecodeError as exc:
        raise ManifestError(f"calibration file is not valid JSON: {exc}") from exc
    try:
        return ShiftParams.factored(doc["u"], doc["v"], doc["d"])
    except KeyError as exc:
        raise ManifestError(f"calibration file missing field {exc}") from None
