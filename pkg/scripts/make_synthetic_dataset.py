#!/usr/bin/env python3
"""Write a synthetic layered light field as PNGs plus a manifest.

Produces a grid of views of a piecewise-planar scene, optionally noisy, so
the CLI pipeline (calibrate / build / render / denoise) can be exercised
without external data:

    python scripts/make_synthetic_dataset.py out/ --grid 3 --noise 0.05
    fdl calibrate out/manifest.json -n 4 -o out/calib.json
    fdl build out/manifest.json --calib out/calib.json -o out/model.fdl
    fdl render out/model.fdl --u 0.5 --v 0.5 --f 1.0 --out out/view.png
"""

import argparse
import json
from pathlib import Path

import numpy as np

from fdl import SceneSpec, synthesize_lightfield
from fdl.io import save_image


def quadrant_scene(rng, size, disparities):
    h = w = size
    labels = np.zeros((h, w), int)
    labels[:, w // 2 :] = 1
    if len(disparities) > 2:
        labels[h // 2 :, : w // 2] = 2
    if len(disparities) > 3:
        labels[: h // 4, : w // 4] = 3
    masks = np.stack([labels == k for k in range(len(disparities))])
    tex = rng.uniform(0, 1, (h, w))
    fx = np.fft.rfftfreq(w)
    fy = np.fft.fftfreq(h)
    lp = 1.0 / (1.0 + (fx[None, :] ** 2 + fy[:, None] ** 2) / 0.02)
    tex = np.fft.irfft2(np.fft.rfft2(tex) * lp, s=(h, w))
    tex = (tex - tex.min()) / np.ptp(tex)
    return SceneSpec(masks=masks, disparities=disparities, texture=tex)


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("outdir")
    ap.add_argument("--size", type=int, default=96)
    ap.add_argument("--grid", type=int, default=3)
    ap.add_argument("--disparities", default="-1,0,1,2")
    ap.add_argument("--noise", type=float, default=0.0)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()

    rng = np.random.default_rng(args.seed)
    d = [float(x) for x in args.disparities.split(",")]
    scene = quadrant_scene(rng, args.size, d)
    g = (np.arange(args.grid) - (args.grid - 1) / 2)
    coords = [(u, v) for v in g for u in g]
    views = synthesize_lightfield(scene, coords)
    images = views.images / views.images.max()
    if args.noise > 0:
        images = np.clip(images + args.noise * rng.standard_normal(images.shape), 0, 1)

    outdir = Path(args.outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    entries = []
    for j, (u, v) in enumerate(coords):
        name = f"view_{j:02d}.png"
        save_image(outdir / name, images[j], bit_depth=16)
        entries.append({"file": name, "u": float(u), "v": float(v)})
    manifest = {"version": 1, "grid": [args.grid, args.grid],
                "color_space": "gamma", "images": entries}
    (outdir / "manifest.json").write_text(json.dumps(manifest, indent=2))
    print(f"wrote {len(entries)} views ({args.size}x{args.size}) and manifest to {outdir}")


if __name__ == "__main__":
    main()
