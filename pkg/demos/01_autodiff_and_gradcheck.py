"""
Reverse-mode differentiation and finite-difference checks
=========================================================

Build a small graph by hand, run backward, and compare against central
differences. Run with ``python3 demos/01_autodiff_and_gradcheck.py``.
"""

import numpy as np

from focusseg import functional as F
from focusseg import tensor as T
from focusseg.gradcheck import grad_check
from focusseg.tensor import Tensor, backward

rng = np.random.default_rng(0)

# a leaf that wants gradients, and sum(x * x)
x = Tensor([1.0, 2.0], requires_grad=True)
backward((x * x).sum())
print("d/dx sum(x^2) at [1, 2]:", x.grad)            # [2. 4.]

# fan-out: the same leaf used twice accumulates
x.zero_grad()
backward(T.reshape(x, (2,)).sum() + x.sum())
print("fan-out gradient:", x.grad)                    # [2. 2.]

# a dilated convolution, checked coordinate by coordinate
img = Tensor(rng.uniform(-2, 2, size=(1, 8, 8)), requires_grad=True)
w = Tensor(rng.uniform(-2, 2, size=(2, 1, 3, 3)), requires_grad=True)
b = Tensor(rng.uniform(-2, 2, size=2), requires_grad=True)
probe = Tensor(rng.normal(size=(2, 8, 8)))

report = grad_check(lambda: (F.conv2d(img, w, b, dilation=2) * probe).sum(), {"input": img, "weight": w, "bias": b})
print(report.format())

# the same machinery catches a wrong backward rule
def bad_square(t):
    return T.make_node(t.data ** 2, (t,), lambda g: (3 * t.data * g,), "bad_square")

y = Tensor(rng.uniform(0.5, 2, size=4), requires_grad=True)
print("wrong rule caught:", not grad_check(lambda: bad_square(y).sum(), [y]).passed)
