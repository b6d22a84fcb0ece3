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

# # Training on the ring of eight Gaussians
#
# A short run with the default architecture. The full-length runs
# (20k steps) take a couple of minutes each on one core; this notebook
# stops at 3000 steps.

import numpy as np

from rmcosgan.harness import ExperimentConfig, evaluate, make_dataset, sweep_sample_count, train

cfg = ExperimentConfig(steps=3000, eval_interval=500)
result = train(cfg)
for row in result.report.rows:
    print(f"{row.step:5d}  FID {row.fid:.4f}  IS {row.is_mean:.3f}  modes {row.modes}  hq {row.hq_frac:.3f}")

# FID estimated from more samples is lower: the small-sample estimate
# carries a positive bias.

dataset = make_dataset(cfg)
sweep_sample_count(result.generator, [500, 2000, 10000], dataset, seed=0, latent_dim=cfg.latent_dim)

# Final scores at 10000 samples.

evaluate(result.generator, 10000, dataset, latent_dim=cfg.latent_dim)
