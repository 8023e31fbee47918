"""
Turning a decision tree into a network
======================================

A fitted regression tree becomes a three-layer network with sign
activations: one neuron per split, one per leaf, one output. Replacing
sign by a steep tanh gives a differentiable network that still tracks the
tree closely.
"""

import numpy as np

from treeseed.data import friedman1
from treeseed.translate import (Strengths, cancellation_compensated_readout, fidelity, relax,
                                stack_forward, translate_exact)
from treeseed.trees import TreeFitConfig, apply_tree, fit_gbdt, fit_model

ds = friedman1(2000, noise_sd=1.0, d_extra=5, seed=0)
X = np.random.default_rng(1).uniform(0, 1, size=(5000, ds.d))

# a single depth-4 tree
tree_model = fit_model("cart", ds, cfg=TreeFitConfig(max_depth=4))
tree = tree_model.trees[0]
stack = translate_exact(tree_model)
print("layer widths:", stack.widths)
print("inner nodes:", tree.n_inner, "leaves:", tree.n_leaves)

# every split neuron reads exactly one input
W1 = stack.layers[0].W
print("non-zeros per split neuron:", np.unique((W1 != 0).sum(axis=1)))

# the +1 neuron of layer 2 is the leaf the tree routes to
_, hidden = stack_forward(stack, X, return_hidden=True)
same = np.mean(np.argmax(hidden[1], axis=1) == apply_tree(tree, X))
print(f"leaf identity on {len(X)} inputs: {same:.0%}")
print("exact stack vs tree:", fidelity(tree_model, stack, X))

# a boosted ensemble translates block by block
gbdt = fit_gbdt(ds, cfg=TreeFitConfig(max_depth=3, n_estimators=20, eta=0.1))
gstack = translate_exact(gbdt)
print("\nboosted ensemble widths:", gstack.widths)
print("exact stack vs ensemble:", fidelity(gbdt, gstack, X))

# smooth relaxation: larger strengths approach the exact network
ref = stack_forward(gstack, X)
for s in (1.0, 10.0, 1e2, 1e4, 1e10):
    soft = relax(gstack, Strengths(s, s, s, s))
    err = np.abs(stack_forward(soft, X) - ref).mean()
    print(f"strength {s:>8.0e}: mean |relaxed - exact| = {err:.3e}")

# in 32-bit the leaf read-out can lose digits; the compensated form keeps them
for name, st in (("plain", gstack), ("compensated", cancellation_compensated_readout(gstack))):
    print(f"{name:>12} float32 error: {fidelity(gbdt, st, X, np.float32).max:.2e}")
