import json

import numpy as np
import pytest

from fdl import RenderRequest, ShiftParams, construct_fdl, render, synthesize_lightfield
from fdl.io import (
    ManifestError,
    ModelFormatError,
    load_calibration,
    load_image,
    load_lightfield,
    load_model,
    save_calibration,
    save_image,
    save_model,
)
from fdl.lfmodel import LINEAR

from conftest import grid_coords


def write_manifest(tmp_path, doc):
    path = tmp_path / "manifest.json"
    path.write_text(json.dumps(doc))
    return path


def make_pngs(tmp_path, rng, count=2, size=(8, 8), gray=False):
    names = []
    for i in range(count):
        name = f"view_{i}.png"
        img = rng.uniform(0, 1, size if gray else (*size, 3))
        save_image(tmp_path / name, img)
        names.append(name)
    return names


class TestImages:
    def test_png_8bit_round_trip(self, tmp_path, rng):
        img = rng.uniform(0, 1, (8, 8, 3))
        save_image(tmp_path / "x.png", img)
        back = load_image(tmp_path / "x.png")
        assert back.shape == (8, 8, 3)
        assert np.max(np.abs(back - img)) <= 0.5 / 255 + 1e-12

    def test_png_16bit_round_trip(self, tmp_path, rng):
        img = rng.uniform(0, 1, (8, 8))
        save_image(tmp_path / "x.png", img, bit_depth=16)
        back = load_image(tmp_path / "x.png")
        assert np.max(np.abs(back - img)) <= 0.5 / 65535 + 1e-12


class TestManifest:
    def test_two_views_on_grid(self, tmp_path, rng):
        names = make_pngs(tmp_path, rng, 2)
        path = write_manifest(tmp_path, {
            "version": 1,
            "grid": [1, 2],
            "images": [
                {"file": names[0], "u": -0.5, "v": 0.0},
                {"file": names[1], "u": 0.5, "v": 0.0},
            ],
        })
        views = load_lightfield(path)
        assert views.num_views == 2
        assert views.channels == 3
        assert np.array_equal(views.u, [-0.5, 0.5])
        assert views.all_pinhole

    def test_missing_file_named(self, tmp_path):
        path = write_manifest(tmp_path, {
            "images": [{"file": "nowhere.png", "u": 0, "v": 0}],
        })
        with pytest.raises(ManifestError, match="nowhere.png"):
            load_lightfield(path)

    def test_dimension_mismatch(self, tmp_path, rng):
        save_image(tmp_path / "a.png", rng.uniform(0, 1, (8, 8, 3)))
        save_image(tmp_path / "b.png", rng.uniform(0, 1, (4, 8, 3)))
        path = write_manifest(tmp_path, {
            "images": [{"file": "a.png", "u": 0, "v": 0},
                       {"file": "b.png", "u": 1, "v": 0}],
        })
        with pytest.raises(ManifestError, match="dimensions"):
            load_lightfield(path)

    def test_unknown_aperture_named(self, tmp_path, rng):
        names = make_pngs(tmp_path, rng, 1)
        path = write_manifest(tmp_path, {
            "images": [{"file": names[0], "u": 0, "v": 0, "aperture": "octagon"}],
        })
        with pytest.raises(ManifestError, match="octagon"):
            load_lightfield(path)

    def test_focal_stack_routed_wide_aperture(self, tmp_path, rng):
        names = make_pngs(tmp_path, rng, 2, gray=True)
        path = write_manifest(tmp_path, {
            "apertures": {"main": {"shape": "disk", "diameter": 1.0}},
            "images": [
                {"file": names[0], "u": 0, "v": 0, "s": 0.0, "aperture": "main"},
                {"file": names[1], "u": 0, "v": 0, "s": 1.0, "aperture": "main"},
            ],
        })
        views = load_lightfield(path)
        assert not views.all_pinhole
        assert np.array_equal(views.s, [0.0, 1.0])

    def test_linear_decode(self, tmp_path, rng):
        names = make_pngs(tmp_path, rng, 1)
        path = write_manifest(tmp_path, {
            "images": [{"file": names[0], "u": 0, "v": 0}],
        })
        lin = load_lightfield(path, to_linear=True)
        assert lin.color_space == LINEAR
        raw = load_lightfield(path)
        assert np.all(lin.images <= raw.images + 1e-12)


def small_model(rng, pad=0, calibration=None):
    from fdl import SceneSpec
    from conftest import quadrant_masks, smooth_texture

    scene = SceneSpec(masks=quadrant_masks(16, 16, 2), disparities=[0.0, 1.0],
                      texture=smooth_texture(rng, 16, 16))
    views = synthesize_lightfield(scene, grid_coords(3))
    shifts = calibration or ShiftParams.factored(views.u, views.v, [0.0, 1.0])
    return construct_fdl(views, shifts, lam=1e-4, pad_margin=pad)


class TestModelFile:
    def test_round_trip_bit_exact(self, tmp_path, rng):
        model = small_model(rng)
        p1, p2 = tmp_path / "a.fdl", tmp_path / "b.fdl"
        save_model(p1, model)
        loaded = load_model(p1)
        save_model(p2, loaded)
        assert p1.read_bytes() == p2.read_bytes()
        assert np.array_equal(loaded.disparities, model.disparities)
        assert loaded.width == model.width and loaded.pad_margin == model.pad_margin
        assert np.array_equal(loaded.layers.astype(np.complex64),
                              model.layers.astype(np.complex64))
        assert loaded.calibration is not None and loaded.calibration.is_factored

    def test_relaxed_calibration_block(self, tmp_path, rng):
        base = small_model(rng)
        pu = np.outer(np.arange(9) - 4.0, base.disparities)
        shifts = ShiftParams.relaxed(pu, pu * 0.5, d=base.disparities)
        base.calibration = shifts
        save_model(tmp_path / "m.fdl", base)
        loaded = load_model(tmp_path / "m.fdl")
        assert not loaded.calibration.is_factored
        assert np.array_equal(loaded.calibration.pu, pu)

    def test_corrupted_magic(self, tmp_path, rng):
        path = tmp_path / "m.fdl"
        save_model(path, small_model(rng))
        raw = bytearray(path.read_bytes())
        raw[:4] = b"NOPE"
        path.write_bytes(bytes(raw))
        with pytest.raises(ModelFormatError, match="magic"):
            load_model(path)

    def test_truncated_payload(self, tmp_path, rng):
        path = tmp_path / "m.fdl"
        save_model(path, small_model(rng))
        raw = path.read_bytes()
        path.write_bytes(raw[: len(raw) - 11])
        with pytest.raises(ModelFormatError, match="size"):
            load_model(path)

    def test_pad_margin_crop_after_reload(self, tmp_path, rng):
        model = small_model(rng, pad=8)
        assert model.pad_margin == 8
        save_model(tmp_path / "m.fdl", model)
        loaded = load_model(tmp_path / "m.fdl")
        out = render(loaded, RenderRequest(u=0.0, v=0.0, f=0.0))
        assert out.shape == (16, 16)
        direct = render(model, RenderRequest(u=0.0, v=0.0, f=0.0))
        # float32 storage bounds the reload error
        assert np.max(np.abs(out - direct)) < 1e-5


class TestCalibrationFile:
    def test_round_trip(self, tmp_path):
        save_calibration(tmp_path / "c.json", [0.0, 1.0], [0.5, -0.5], [0.0, 1.0],
                         meta={"iterations": 12})
        shifts = load_calibration(tmp_path / "c.json")
        assert shifts.is_factored
        assert np.array_equal(shifts.u, [0.0, 1.0])
        assert np.array_equal(shifts.d, [0.0, 1.0])

    def test_missing_field(self, tmp_path):
        (tmp_path / "c.json").write_text('{"u": [0], "v": [0]}')
        with pytest.raises(ManifestError, match="d"):
            load_calibration(tmp_path / "c.json")
