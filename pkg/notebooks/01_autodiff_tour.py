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

# # A tour of the tape
#
# Every operation on a `Tensor` records a node. `backward` walks the nodes
# in reverse and returns a map from leaf id to gradient.

import numpy as np

from rmcosgan.autodiff import AdamState, Tensor, adam_step, backward, finite_difference_gradient, max_relative_error

# A two-layer expression with a known derivative.

x = Tensor(np.array([[0.5, -1.0], [2.0, 0.25]]), requires_grad=True)
w = Tensor(np.array([[1.0], [-2.0]]), requires_grad=True)
y = (x @ w).tanh().sum()
grads = backward(y)
grads[id(w)]

# Central differences agree to about 1e-10.

f = lambda _: (x @ w).tanh().sum()
max_relative_error(grads[id(x)], finite_difference_gradient(f, x))

# ## Adam on a quadratic
#
# With beta1 = 0.5 the first step moves each coordinate by almost exactly
# the learning rate, whatever the gradient scale.

p = Tensor(np.array([3.0, -4.0]), requires_grad=True)
opt = AdamState(lr=0.1, beta1=0.5, beta2=0.999, epsilon=1e-8)
for step in range(200):
    adam_step([p], backward((p * p).sum()), opt)
p.data
