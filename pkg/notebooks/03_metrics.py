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

# # Toy-scale FID and IS
#
# On 2D data the Frechet distance is computed on raw coordinates, and a
# soft nearest-centre classifier plays the role of the image classifier.

import numpy as np

from rmcosgan.data import RngStream, SyntheticSpec, sample_real
from rmcosgan.metrics import (GaussianStats, ModeSpec, fit_gaussian, frechet_distance, inception_score,
                              mode_classifier_probs, mode_coverage)

spec = SyntheticSpec("ring8", radius=2.0, std=0.1)
modes = ModeSpec(spec.centers(), spec.std, quality_radius=3.0)
reference = fit_gaussian(sample_real(spec, 10000, RngStream(0, "reference")))

# Real samples sit at the noise floor; the floor shrinks as the sample
# count grows.

for n in (500, 2000, 10000):
    x = sample_real(spec, n, RngStream(n, "eval")).data
    print(n, round(frechet_distance(reference, fit_gaussian(x)), 5))

# A collapsed generator that only hits two modes: coverage and IS drop,
# while the high-quality fraction stays at one.

collapsed = np.concatenate([spec.centers()[:2]] * 500) + RngStream(1, "eval").normal((1000, 2)) * 0.1
print(mode_coverage(collapsed, modes), inception_score(mode_classifier_probs(collapsed, modes)))

# Closed form check: two 1D unit Gaussians one apart.

frechet_distance(GaussianStats([0.0], [[1.0]]), GaussianStats([1.0], [[1.0]]))
