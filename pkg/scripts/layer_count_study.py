#!/usr/bin/env python3
"""Reconstruction quality versus layer count on synthetic data.

Reproduces the saturation behavior: round-trip PSNR climbs until the layer
count reaches the number of distinct scene disparities, then stays flat.
Writes a CSV and, with --plot, a PNG chart.

    python scripts/layer_count_study.py --out saturation.csv --plot saturation.png
"""

import argparse
import csv

import numpy as np

from fdl import RenderRequest, ShiftParams, ViewSet, construct_fdl, psnr, render, synthesize_lightfield

from make_synthetic_dataset import quadrant_scene


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--size", type=int, default=48)
    ap.add_argument("--grid", type=int, default=11)
    ap.add_argument("--noise", type=float, default=0.01)
    ap.add_argument("--max-layers", type=int, default=8)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--out", default="layer_count_study.csv")
    ap.add_argument("--plot", default=None)
    args = ap.parse_args()

    rng = np.random.default_rng(args.seed)
    d_true = [-1.0, 0.0, 1.0, 2.0]
    scene = quadrant_scene(rng, args.size, d_true)
    g = np.linspace(-1, 1, args.grid)
    coords = np.array([(u, v) for v in g for u in g])
    clean = synthesize_lightfield(scene, coords)
    views = ViewSet(images=clean.images + args.noise * rng.standard_normal(clean.images.shape),
                    u=clean.u, v=clean.v)

    priority = [0.0, -1.0, 1.0, 2.0, 0.5, -0.5, 1.5, -1.5, 2.5, -2.5]
    rows = []
    for n in range(1, args.max_layers + 1):
        d = np.sort(priority[:n])
        model = construct_fdl(views, ShiftParams.factored(views.u, views.v, d),
                              lam=None, pad_margin=0)
        mean_psnr = float(np.mean([
            psnr(render(model, RenderRequest(u=u, v=v, f=0.0)), views.images[j][:, :, 0])
            for j, (u, v) in enumerate(coords)
        ]))
        rows.append((n, mean_psnr))
        print(f"n={n:2d}  round-trip {mean_psnr:6.2f} dB")

    with open(args.out, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["layers", "mean_psnr_db"])
        w.writerows(rows)
    print(f"wrote {args.out}")

    if args.plot:
        import matplotlib

        matplotlib.use("Agg")
        import matplotlib.pyplot as plt

        ns, ps = zip(*rows)
        plt.figure(figsize=(5, 3.2))
        plt.plot(ns, ps, "o-")
        plt.axvline(len(d_true), color="gray", ls=":", label=f"true layer count {len(d_true)}")
        plt.xlabel("layers")
        plt.ylabel("round-trip PSNR (dB)")
        plt.legend()
        plt.tight_layout()
        plt.savefig(args.plot, dpi=150)
        print(f"wrote {args.plot}")


if __name__ == "__main__":
    main()
