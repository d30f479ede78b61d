"""Brute-force reference implementations used as test oracles.

These deliberately avoid numpy vectorisation and the package's own helpers
so that they fail independently of the code they check.
"""

import itertools
import math


def focal_scalar(y, p, alpha_fg, alpha_bg, gamma, eps):
    p = min(max(p, eps), 1 - eps)
    return -alpha_fg * y * (1 - p) ** gamma * math.log(p) - alpha_bg * (1 - y) * p**gamma * math.log(1 - p)


def fp_focal_scalar(y, p, gamma, eps):
    p = min(max(p, eps), 1 - eps)
    return -(1 - y) * p**gamma * math.log(1 - p)


def mean_fp_scalar(y, p):
    return (1 - y) * p


def reduce_channels(ys, ps, fn):
    """ys, ps: lists of voxels, each a list of K channel values -> (total, per_class)."""
    n = len(ys)
    k = len(ys[0])
    per = [sum(fn(ys[v][c], ps[v][c]) for v in range(n)) / n for c in range(k)]
    return sum(per), per


def points(mask):
    """Coordinates of true voxels of a nested-list / numpy mask."""
    import numpy as np

    m = np.asarray(mask, dtype=bool)
    return [tuple(int(i) for i in idx) for idx in itertools.product(*map(range, m.shape)) if m[idx]]


def dice_bruteforce(a, b):
    pa, pb = set(points(a)), set(points(b))
    tp = len(pa & pb)
    fp = len(pa - pb)
    fn = len(pb - pa)
    if tp + fp + fn == 0:
        return 1.0
    return 2 * tp / ((tp + fp) + (tp + fn))


def _nearest_all(src, dst):
    return [min(math.dist(s, d) for d in dst) for s in src]


def directed_hd_bruteforce(x, y):
    return max(_nearest_all(points(x), points(y)))


def percentile_linear(values, q):
    """Linear interpolation between closest ranks (numpy's default 'linear')."""
    v = sorted(values)
    pos = (len(v) - 1) * q / 100.0
    lo = math.floor(pos)
    hi = min(lo + 1, len(v) - 1)
    return v[lo] + (v[hi] - v[lo]) * (pos - lo)


def hd95_bruteforce(a, b):
    pa, pb = points(a), points(b)
    return percentile_linear(_nearest_all(pa, pb) + _nearest_all(pb, pa), 95)


def adam_scalar(grads, lr=0.01, b1=0.9, b2=0.999, eps=1e-8, w=0.0):
    m = v = 0.0
    for t, g in enumerate(grads, start=1):
        m = b1 * m + (1 - b1) * g
        v = b2 * v + (1 - b2) * g * g
        w -= lr * (m / (1 - b1**t)) / (math.sqrt(v / (1 - b2**t)) + eps)
    return w
