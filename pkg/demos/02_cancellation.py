"""
Read-out precision as trees get deeper
======================================

The exact read-out adds half of every leaf value with a +1 or -1 sign and
relies on the pairs cancelling. With thousands of leaves in 32-bit floats
the leftover rounding grows with depth. Reading the leaves through a
{0, 1} indicator layer instead keeps the error at the level of a single
product.
"""

import numpy as np

from treeseed.evaluation import cancellation_sweep

rows = cancellation_sweep(depths=(2, 4, 6, 8, 10, 12), dtype=np.float32)

print(f"{'depth':>5} {'leaves':>7} {'plain mean':>12} {'plain max':>12} {'comp. max':>12}")
for r in rows:
    print(f"{r['depth']:>5} {r['n_leaves']:>7} {r['plain_mean']:>12.3e} "
          f"{r['plain_max']:>12.3e} {r['compensated_max']:>12.3e}")

growth = rows[-1]["plain_mean"] / rows[0]["plain_mean"]
print(f"\nplain error grows {growth:.0f}x from depth 2 to depth 12")

# the same trees in 64-bit are exact to near machine precision
rows64 = cancellation_sweep(depths=(2, 12), dtype=np.float64)
print("64-bit plain max error:", [f"{r['plain_max']:.1e}" for r in rows64])
