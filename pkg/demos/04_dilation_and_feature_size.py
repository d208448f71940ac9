"""
Dilation, receptive span and feature-map size
=============================================

A k x k kernel with dilation d spans 1 + (k - 1) * d input positions. When
that span is much larger than the feature map, most taps only ever read
zero padding. The convolution drops those taps, so on an 8x8 map (a 64x64
input at output stride 8) a 7x7 kernel at dilation 16 keeps only its centre.
"""

from focusseg.functional import receptive_span, tap_plan

print(f"{'d':>3} {'span':>5} {'live taps 8x8':>14} {'live taps 32x32':>16} {'live taps 96x96':>16}")
for d in (1, 2, 4, 8, 16):
    taps = [len(tap_plan(n, n, 7, d).taps) for n in (8, 32, 96)]
    print(f"{d:>3} {receptive_span(7, d):>5} {taps[0]:>14} {taps[1]:>16} {taps[2]:>16}")
