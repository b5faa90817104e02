"""
Quantizer error bounds
======================

Round-to-nearest quantization errs by at most half a step per entry, so
the squared error of a vector is bounded by its dynamic range. Rotations
that shrink the range therefore shrink the worst-case error.
"""

import numpy as np

from cornerquant.quantizers import QuantizerSpec, mse_bound_sym, mse_bound_zp, quantize_tensor, range_ratio

g = np.random.default_rng(0)
x = g.standard_normal(64)
x[5] = 30.0  # one outlier channel

for b in (2, 4, 8):
    sym = QuantizerSpec(bits=b, mode="symmetric", granularity="per_tensor")
    zp = QuantizerSpec(bits=b, mode="zeropoint", granularity="per_tensor")
    e_sym = np.sum((quantize_tensor(x, sym) - x) ** 2)
    e_zp = np.sum((quantize_tensor(x, zp) - x) ** 2)
    print(f"b={b}: sym {e_sym:9.4f} <= {mse_bound_sym(x, b):9.4f}   zp {e_zp:9.4f} <= {mse_bound_zp(x, b):9.4f}")

# %% The range ratio max|x|^2/||x||^2 lies between 1/d and 1.
print("range ratio with outlier:", range_ratio(x), " flat vector:", range_ratio(np.ones(64)), " 1/d:", 1 / 64)
