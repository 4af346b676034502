"""Why a learned mapping is needed: the DMSP-like sensor compresses bright light.

One synthetic scene is rendered at VIIRS-like resolution, then degraded the
way the older sensor sees it. Pixels are averaged onto a grid twice as
coarse, blurred (overglow), passed through a saturating response and rounded
to 6-bit digital numbers. Near the top of the scale one DN step covers tens
of radiance units, and overglow smears city light into dark surroundings, so
no per-pixel curve can undo the degradation.

    python demos/01_saturation.py [--png out.png]
"""

import argparse

import numpy as np

from ntlcut.synth import DegradeParams, SceneSpec, dmsp_dn, generate_pair, saturating_map

ap = argparse.ArgumentParser()
ap.add_argument("--png", help="write a side-by-side figure (needs matplotlib)")
args = ap.parse_args()

params = DegradeParams()
pair = generate_pair(SceneSpec(seed=7, n_cities=6, city_peak_range=(20.0, 300.0)), params)
viirs = pair.viirs.values.astype(np.float64)
dn = dmsp_dn(pair.viirs, params)
print(f"VIIRS-like radiance on {viirs.shape}: {viirs.min():.2f} .. {viirs.max():.1f}")
print(f"DMSP-like DN on the coarse grid {dn.shape}: {dn.min():.0f} .. {dn.max():.0f} "
      f"(delivered resampled back to {pair.dmsp.shape})")

print("\nresponse curve: radiance -> DN, and radiance needed for one more DN")
for x in (5, 30, 100, 300):
    d = saturating_map(np.array(x, float), params.k)
    step = params.k / (63 - d - 1) * (d + 1) - x if d < 62 else float("inf")
    print(f"  {x:>4} -> {d:5.1f}   (+{step:.1f})")

# Coarse-grid truth: the same block average the sensor model starts from.
h, w = dn.shape
truth = np.maximum(viirs, 0).reshape(h, 2, w, 2).mean(axis=(1, 3))
print("\ntrue coarse radiance behind each DN band (5th..95th percentile)")
for lo, hi in ((0, 4), (4, 16), (16, 32), (32, 48), (48, 64)):
    sel = (dn >= lo) & (dn < hi)
    if sel.any():
        p5, p95 = np.percentile(truth[sel], [5, 95])
        print(f"  DN {lo:>2}-{hi - 1:<2} {sel.sum():6d} px   {p5:7.2f} .. {p95:7.2f}")

dark_truth = truth < 0.5
print(f"\n{(dn[dark_truth] > 0).mean():.0%} of truly dark pixels read DN > 0 because of overglow")

if args.png:
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    fig, ax = plt.subplots(1, 2, figsize=(9, 4.2))
    ax[0].imshow(np.log1p(viirs), cmap="magma")
    ax[0].set_title("VIIRS-like, log1p radiance")
    ax[1].imshow(pair.dmsp.values, cmap="magma", vmin=0, vmax=63)
    ax[1].set_title("DMSP-like, digital number")
    for a in ax:
        a.axis("off")
    fig.savefig(args.png, dpi=100, bbox_inches="tight")
    print("wrote", args.png)
