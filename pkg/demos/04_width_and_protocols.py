"""
Width sweep and a small tuning protocol
=======================================

First, hold depth and learning rate fixed and vary the MLP width: tree
initializers get as many trees as fit. Then run a reduced version of the
shared-settings protocol, where the MLP settings are tuned for random
initialization and each tree initializer tunes only its own knobs.
"""

from treeseed.data import xor_classif
from treeseed.evaluation import run_protocol_p1, summary_table, width_sweep

ds = xor_classif(2000, d_extra=3, flip_prob=0.1, seed=0)

rows = width_sweep(ds, ("random", "gbdt"), widths=(16, 64, 256), depth=3,
                   learning_rate=3e-3, epochs=30, seeds=(0,), max_folds=1)
print("width  method   AUROC")
for r in rows:
    print(f"{r['width']:>5}  {r['method']:<7} {r['mean']:.4f}")

# budget 4 per phase keeps this to a couple of minutes on one core
report = run_protocol_p1(ds, ("random", "rf", "gbdt"), width=64, budget=4, seeds=(0, 1),
                         epochs=30, max_folds=1, log=print)
print()
print(summary_table(report))
