"""How far simple calibrations get on held-out geographic blocks.

A small dataset is synthesized and cut into 64x64 patch pairs. The two
reference calibrations are then scored against the full-resolution truth:

* a straight line fitted in log1p space on the training split;
* histogram matching of the DMSP codes onto the VIIRS code distribution.

    python demos/02_baselines.py [--scenes 40] [--out runs/demo_baselines]
"""

import argparse
import tempfile
from pathlib import Path

from ntlcut.cli import main as ntlcut
from ntlcut.evaluate import evaluate_run, fit_baselines

ap = argparse.ArgumentParser()
ap.add_argument("--scenes", type=int, default=40)
ap.add_argument("--out", help="keep artifacts here instead of a temporary directory")
args = ap.parse_args()

root = Path(args.out) if args.out else Path(tempfile.mkdtemp(prefix="ntlcut_demo_"))
quiet = ["--log-level", "WARNING"]
ntlcut(["synth", "--n-scenes", str(args.scenes), "--format", "bin", "--out-dir", str(root / "raw"), *quiet])
ntlcut(["preprocess", str(root / "raw"), "--out-dir", str(root / "data"), *quiet])

lin, _ = fit_baselines(root / "data")
print(f"log1p(VIIRS) ~= {lin.slope:.3f} * log1p(DMSP) {lin.intercept:+.3f}  (training split)")

# No model: evaluate_run scores only the baselines when the predictor is None.
rep = evaluate_run(None, root / "data", root / "eval")
print(f"\n{'method':<20}{'R2':>8}{'r':>8}{'SSIM':>8}{'MAE':>8}")
for row in rep.per_method:
    print(f"{row['method']:<20}{row['r_squared']:>8.3f}{row['pearson_r']:>8.3f}"
          f"{row['ssim_mean']:>8.3f}{row['mae']:>8.2f}")
print(f"\nartifacts in {root}")
