# ---
# jupyter:
#   jupytext:
#     formats: py:light
#     text_representation:
#       extension: .py
#       format_name: light
#       format_version: '1.5'
#   kernelspec:
#     display_name: Python 3
#     language: python
#     name: python3
# ---

# # Losses and the margin
#
# The margin-cosine loss compares real and fake critic values as a pair:
# the discriminator wants `s * (c_real - c_fake - m)` large, the generator
# wants the swapped difference large.

import numpy as np

from rmcosgan.autodiff import Tensor
from rmcosgan.losses import (LogitBatch, LossKind, MarginCosineParams, discriminator_loss, generator_loss,
                             link_function_variant_check, margin_monotonicity_check, rmcos_objective,
                             rsgan_objective)

rng = np.random.default_rng(0)
batch = LogitBatch(Tensor(rng.uniform(-1, 1, 32)), Tensor(rng.uniform(-1, 1, 32)))
params = MarginCosineParams(s=10.0, m=0.15)

for kind in LossKind:
    p = params if kind is LossKind.RMCOS else None
    print(f"{kind.value:9s} D {discriminator_loss(kind, batch, p).item():8.4f}  "
          f"G {generator_loss(kind, batch, p).item():8.4f}")

# With s = 1 and m = 0 the margin loss is the paired relativistic
# cross-entropy, term for term.

rmcos_objective(batch, 1.0, 0.0).item() - rsgan_objective(batch).item()

# ## Sweeping m
#
# The saddle objective (both terms) rises with m at every grid point, and
# the tape derivative with respect to m stays positive.

grid = np.round(np.arange(-0.5, 0.501, 0.05), 10)
res = margin_monotonicity_check(batch, 10.0, grid)
print(res.passed, res.min_increment)
np.column_stack([grid, res.values, res.derivatives])[::4]

# The same ordering holds when the sigmoid is swapped for other increasing
# links with positive range.

{link: link_function_variant_check(batch, 10.0, grid, link).passed
 for link in ("sigmoid", "softplus", "tanh-shifted", "arctan-shifted")}
