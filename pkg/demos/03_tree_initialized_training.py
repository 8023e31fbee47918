"""
Training from a tree-based starting point
=========================================

Fit a boosted ensemble, relax its first two translated layers, copy them
into an otherwise random MLP and train. Compare validation curves and
first-layer sparsity with a randomly initialized MLP of the same shape.
"""

import numpy as np

from treeseed.data import friedman1, holdout_split, normalize_apply, normalize_fit
from treeseed.evaluation import kept_sparse, sparsity_stats
from treeseed.net import InitSpec, TrainConfig, initialize, train
from treeseed.translate import Strengths
from treeseed.trees import TreeFitConfig

ds = friedman1(5000, noise_sd=1.0, d_extra=5, seed=0)
fit_rows, val_rows = holdout_split(np.arange(ds.n), 0.2, seed=0)
ds = normalize_apply(ds, normalize_fit(ds, fit_rows))

width, depth = 256, 3
cfg = TrainConfig(epochs=60, batch_size=256, learning_rate=1e-3, seed=0)
inits = {
    "random": InitSpec("random", width, depth, seed=0),
    # 32 depth-3 trees fill 256 leaf neurons
    "gbdt": InitSpec("gbdt", width, depth, Strengths(3.0, 0.3, 1.0, 1.0),
                     TreeFitConfig(max_depth=3, n_estimators=32, eta=0.1), seed=0),
}

curves = {}
for name, init in inits.items():
    mlp, _ = initialize(ds, init, fit_rows, val_rows)
    w0 = mlp.weights[0].copy()
    final = {}
    best, hist = train(mlp, ds.subset(fit_rows), ds.subset(val_rows), cfg,
                       lambda epoch, net, h: final.update(net=net))
    curves[name] = hist.val_loss
    frac0 = sparsity_stats(mlp)["layers"][0]["fraction_below"]
    print(f"{name:>6}: best val MSE {hist.best_val_loss:.3f} at epoch {hist.best_epoch}; "
          f"layer-1 |w|<1e-3 at start {frac0:.1%}; "
          f"still <1e-2 after training {kept_sparse(w0, final['net'].weights[0]):.1%}")

print("\nepoch  random    gbdt")
for e in (1, 5, 10, 20, 30, 45, 60):
    print(f"{e:>5} {curves['random'][e - 1]:>7.3f} {curves['gbdt'][e - 1]:>7.3f}")
