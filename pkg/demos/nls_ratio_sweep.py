"""A reduced coarse-to-total ratio sweep on the NLS desk problem.

Trains at three budget splits with fewer iterations and seeds than the
acceptance run, so it finishes in a few minutes. Endpoints train a single
level; the interior point fine-tunes one network from coarse to fine data.

    python3 demos/nls_ratio_sweep.py [iterations] [seeds]
"""
import sys
import warnings
from dataclasses import replace

import numpy as np

from mlft import train
from mlft.config import load_config

iters = int(sys.argv[1]) if len(sys.argv) > 1 else 300
n_seeds = int(sys.argv[2]) if len(sys.argv) > 2 else 2
warnings.simplefilter("ignore")

cfg = load_config("nls")
tspec = replace(cfg.training, iters=iters)
print(f"levels n = {[lv.n for lv in cfg.hierarchy]}, costs {cfg.costs}, budget T = {cfg.budget:g}, "
      f"{iters} iterations per level, {n_seeds} seeds")

rows = train.sweep_ratio(cfg.hierarchy, cfg.budget, [0.0, 0.5, 1.0], range(n_seeds), cfg.network,
                         cfg.optimizer, tspec,
                         lambda s: train.build_eval_data(cfg.hierarchy, cfg.n_test, cfg.n_validation, s))
for row in rows:
    print(f"r = {row.r:.2f}  M = ({row.m1:3d}, {row.m2:2d})  median g = {row.median:.4f}  "
          f"seeds {np.round(row.g, 4)}")
