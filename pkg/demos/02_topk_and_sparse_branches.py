"""
Hard Top-K selection and sparse branch execution
================================================

An importance map picks the k most informative positions; each branch then
convolves only the masked features. The sparse engine evaluates the branch
at the selected outputs only and matches the dense path exactly.
"""

from fractions import Fraction

import numpy as np

from focusseg.region import DEFAULT_BRANCHES, topk_mask
from focusseg.sparse import bench_branches, bench_tsv, dense_masked_branch, index_from_mask, masked_conv2d

rng = np.random.default_rng(1)

# hand example: keep half of a 2x2 map
s = np.array([[[0.9, 0.1], [0.5, 0.7]]])
print("mask for ratio 0.5:\n", topk_mask(s, 0.5).mask[0])

# ties go to the lowest row-major index
print("uniform map, ratio 0.25:", topk_mask(np.full((1, 2, 2), 0.5), 0.25).mask.ravel())

# dense reference vs sparse gather/scatter on one branch
x = rng.normal(size=(8, 12, 12))
weight = rng.normal(size=(8, 8, 5, 5))
bias = rng.normal(size=8)
sel = topk_mask(rng.uniform(size=(1, 12, 12)), 0.3)
sparse_out, rep = masked_conv2d(x, weight, bias, index_from_mask(sel), dilation=2)
dense_out = dense_masked_branch(x, weight, bias, sel, dilation=2)
print(f"k = {sel.k} of 144, max |sparse - dense| = {np.abs(sparse_out.data - dense_out.data).max():.2e}")
print("FLOP ratio:", Fraction(rep.sparse_flops, rep.dense_flops))

# the default branch schedule on a 40x40 map, where every ratio * 1600 is whole
print(bench_tsv(bench_branches(DEFAULT_BRANCHES, channels=16, spatial=(40, 40), trials=3)))
