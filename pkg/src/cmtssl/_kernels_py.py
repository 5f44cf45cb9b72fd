"""Pure numpy versions of the compiled kernels, used when the extension is absent."""

import numpy as np

AGG_AVERAGE = 0
AGG_MAXIMUM = 1
AGG_STD = 2


def gradient_fields(cube):
    """Scharr x/y responses per band and forward spectral difference, all on the H x W x C grid."""
    p = np.pad(cube, ((1, 1), (1, 1), (0, 0)), mode="edge")
    left, right = p[:, :-2], p[:, 2:]
    dx = right - left
    gx = 3.0 * dx[:-2] + 10.0 * dx[1:-1] + 3.0 * dx[2:]
    up, down = p[:-2], p[2:]
    dy = down - up
    gy = 3.0 * dy[:, :-2] + 10.0 * dy[:, 1:-1] + 3.0 * dy[:, 2:]
    gz = np.zeros_like(cube)
    gz[..., :-1] = cube[..., 1:] - cube[..., :-1]
    return gx, gy, gz


def gradient_magnitude(cube):
    gx, gy, gz = gradient_fields(np.asarray(cube, dtype=np.float64))
    return np.sqrt(gx * gx + gy * gy + gz * gz)


def batch_scores(cubes, aggregation):
    cubes = np.asarray(cubes, dtype=np.float64)
    out = np.empty(cubes.shape[0], dtype=np.float64)
    for n, cube in enumerate(cubes):
        mag = gradient_magnitude(cube)
        if aggregation == AGG_AVERAGE:
            out[n] = mag.mean()
        elif aggregation == AGG_MAXIMUM:
            out[n] = mag.max()
        else:
            out[n] = mag.std()
    return out


def confusion_counts(truth, pred, ignore_id, num_classes):
    keep = truth != ignore_id
    flat = truth[keep] * num_classes + pred[keep]
    return np.bincount(flat, minlength=num_classes * num_classes).reshape(num_classes, num_classes).astype(np.int64)
