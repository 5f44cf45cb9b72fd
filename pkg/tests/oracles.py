"""Independent reference computations used as test oracles.

Deliberately loop-based and written from the textbook definitions, sharing no
code with the package.
"""

import itertools
import math

import numpy as np

SCHARR_X = [[3.0, 0.0, -3.0], [10.0, 0.0, -10.0], [3.0, 0.0, -3.0]]
SCHARR_Y = [[3.0, 10.0, 3.0], [0.0, 0.0, 0.0], [-3.0, -10.0, -3.0]]


def _clip(i, n):
    return min(max(i, 0), n - 1)


def dense_gradient_fields(cube):
    """True 2D convolution per band with replicate borders; forward spectral difference."""
    h, w, c = cube.shape
    gx = np.zeros((h, w, c))
    gy = np.zeros((h, w, c))
    gz = np.zeros((h, w, c))
    for i in range(h):
        for j in range(w):
            for b in range(c):
                sx = sy = 0.0
                for a in range(3):
                    for d in range(3):
                        v = cube[_clip(i - (a - 1), h), _clip(j - (d - 1), w), b]
                        sx += SCHARR_X[a][d] * v
                        sy += SCHARR_Y[a][d] * v
                gx[i, j, b] = sx
                gy[i, j, b] = sy
                if b + 1 < c:
                    gz[i, j, b] = 1.0 * cube[i, j, b + 1] + (-1.0) * cube[i, j, b]
    return gx, gy, gz


def dense_difficulty(cube, aggregation="average"):
    gx, gy, gz = dense_gradient_fields(cube)
    vals = []
    h, w, c = cube.shape
    for i in range(h):
        for j in range(w):
            for b in range(c):
                vals.append(math.sqrt(gx[i, j, b] ** 2 + gy[i, j, b] ** 2 + gz[i, j, b] ** 2))
    n = len(vals)
    mean = sum(vals) / n
    if aggregation == "average":
        return mean
    if aggregation == "maximum":
        return max(vals)
    return math.sqrt(sum((v - mean) ** 2 for v in vals) / n)


def pearson(x, y):
    n = len(x)
    mx = sum(x) / n
    my = sum(y) / n
    sxy = sum((a - mx) * (b - my) for a, b in zip(x, y))
    sxx = sum((a - mx) ** 2 for a in x)
    syy = sum((b - my) ** 2 for b in y)
    return sxy / math.sqrt(sxx * syy)


def bce(targets, logits):
    total = 0.0
    for y, x in zip(targets, logits):
        p = 1.0 / (1.0 + math.exp(-x))
        total += -(y * math.log(p) + (1 - y) * math.log(1 - p))
    return total / len(targets)


def masked_mae(original, recon, mask):
    total, count = 0.0, 0
    h, w, c = original.shape
    for i in range(h):
        for j in range(w):
            for b in range(c):
                if mask[i, j, b]:
                    total += abs(float(recon[i, j, b]) - float(original[i, j, b]))
                    count += 1
    return total / count


def count_confusion(pred, truth, num_classes, ignore_id):
    cm = [[0] * num_classes for _ in range(num_classes)]
    for p, t in zip(np.ravel(pred), np.ravel(truth)):
        if t == ignore_id:
            continue
        cm[int(t)][int(p)] += 1
    return np.array(cm)


def best_assignment(scores):
    """Exhaustive search over all permutations for the maximum total score."""
    n = scores.shape[0]
    best, best_perm = -math.inf, None
    for perm in itertools.permutations(range(n)):
        total = sum(scores[i, perm[i]] for i in range(n))
        if total > best:
            best, best_perm = total, perm
    return best, np.array(best_perm)


def simulate_curriculum_steps(n, s, k, f, batch):
    """Count optimizer steps by walking the stage/epoch/mini-batch loop."""
    steps = 0
    epochs = k
    for stage in range(1, s + 1):
        size = (n * stage) // s
        e_int = max(1, int(math.floor(epochs + 0.5)))
        for _ in range(e_int):
            remaining = size
            while remaining > 0:
                remaining -= batch
                steps += 1
        epochs = epochs * f
    return steps
