"""Train the desk-size CUT model briefly and compare it with the baselines.

A few hundred iterations are enough to watch the contrastive loss fall. They
are not enough to beat the baselines: after so little training the generator
usually scores a negative R2. The full desk run (30 epochs) is what the
acceptance suite exercises. This script uses the library API rather than the
CLI to show the pieces.

    python demos/03_short_training.py [--iterations 200] [--out runs/demo_train]
"""

import argparse
import tempfile
from pathlib import Path

import numpy as np

from ntlcut.cli import main as ntlcut
from ntlcut.evaluate import evaluate_run, generator_predictor
from ntlcut.report import render_report
from ntlcut.train import TrainConfig, Trainer, read_loss_log

ap = argparse.ArgumentParser()
ap.add_argument("--scenes", type=int, default=40)
ap.add_argument("--iterations", type=int, default=200)
ap.add_argument("--out", help="keep artifacts here instead of a temporary directory")
args = ap.parse_args()

root = Path(args.out) if args.out else Path(tempfile.mkdtemp(prefix="ntlcut_demo_"))
quiet = ["--log-level", "WARNING"]
ntlcut(["synth", "--n-scenes", str(args.scenes), "--format", "bin", "--out-dir", str(root / "raw"), *quiet])
ntlcut(["preprocess", str(root / "raw"), "--out-dir", str(root / "data"), *quiet])

cfg = TrainConfig.desk(max_iterations=args.iterations)
trainer = Trainer(cfg, root / "data", root / "train")
print(f"generator {trainer.model.generator.num_parameters():,} parameters, "
      f"{len(trainer.train_x)} training pairs, batch {cfg.batch_size}")
trainer.run(on_epoch=lambda e, m: print(f"  epoch {e}: NCE {m['loss_nce']:.3f}  "
                                        f"G {m['loss_gan_g']:.3f}  D {m['loss_gan_d']:.3f}"))

log = read_loss_log(root / "train/losses.csv")
k = max(1, len(log["loss_nce"]) // 10)
print(f"NCE loss, first vs last 10% of iterations: {np.mean(log['loss_nce'][:k]):.3f} -> "
      f"{np.mean(log['loss_nce'][-k:]):.3f}")

rep = evaluate_run(generator_predictor(trainer.model.generator), root / "data", root / "eval")
for row in rep.per_method:
    print(f"  {row['method']:<20} R2 {row['r_squared']:7.3f}   SSIM {row['ssim_mean']:.3f}")
md, html = render_report(root / "eval", root / "report", root / "train")
print(f"report: {md}")
