"""A first walk through the tensor core.

Builds a few small graphs, runs backward, and checks one gradient
against central differences to show the two agree.
"""

import numpy as np

from mxrunet.tensor import backward, finite_diff_grad, no_grad, tensor

# Two float64 leaves; float64 keeps the finite-difference check sharp.
x = tensor(np.array([[1.0, 2.0], [3.0, 4.0]]), requires_grad=True)
w = tensor(np.array([[0.5, -1.0], [2.0, 0.0]]), requires_grad=True)

# Forward: a tiny expression ending in a scalar.  backward() only
# accepts scalars, so reductions close every graph.
y = ((x @ w) * 2.0 + 1.0).mean()
print("forward value:", y.item())

backward(y)
print("dy/dx:\n", x.grad)
print("dy/dw:\n", w.grad)

# The same gradient, computed numerically.  finite_diff_grad hands the
# closure a perturbed copy of the leaf and re-runs the forward pass.
def run(xp):
    return ((xp @ w) * 2.0 + 1.0).mean()

numeric = finite_diff_grad(run, x)
print("worst |analytic - numeric|:", np.abs(x.grad - numeric.data).max())

# Gradients accumulate across backward calls until zeroed.
x.zero_grad()
w.zero_grad()
loss_a = (x * w).sum()
loss_b = (x + w).sum()
backward(loss_a)
backward(loss_b)
print("accumulated dx (w + 1):\n", x.grad)

# Inside no_grad nothing is recorded, which is what inference uses.
with no_grad():
    silent = (x @ w).sum()
print("built under no_grad -> requires_grad:", silent.requires_grad)

# Nonlinearities carry their own local derivatives.
z = tensor(np.linspace(-2, 2, 5), requires_grad=True)
out = (z.tanh() + z.relu()).sum()
backward(out)
print("d(tanh + relu)/dz:", z.grad)
