"""Pure numpy versions of the grid kernels, used when the extension is absent."""

from __future__ import annotations

import numpy as np

# Rows of ``points`` processed per block; keeps the temporary below ~8M doubles.
_BLOCK_ELEMS = 8_000_000


def _blocks(npts: int, width: int):
    step = max(1, _BLOCK_ELEMS // max(width, 1))
    for start in range(0, npts, step):
        yield slice(start, min(npts, start + step))


def logistic_loglik_many(design, labels, points):
    design = np.ascontiguousarray(design, dtype=float)
    labels = np.ascontiguousarray(labels, dtype=float)
    points = np.ascontiguousarray(points, dtype=float)
    out = np.empty(points.shape[0])
    linear = design.T @ labels
    for sl in _blocks(points.shape[0], design.shape[0]):
        eta = points[sl] @ design.T
        out[sl] = points[sl] @ linear - np.logaddexp(0.0, eta).sum(axis=1)
    return out


def tilted_logsumexp_many(features, log_weights, points):
    features = np.ascontiguousarray(features, dtype=float)
    log_weights = np.ascontiguousarray(log_weights, dtype=float)
    points = np.ascontiguousarray(points, dtype=float)
    out = np.empty(points.shape[0])
    for sl in _blocks(points.shape[0], features.shape[0]):
        expo = points[sl] @ features.T + log_weights
        top = expo.max(axis=1)
        out[sl] = top + np.log(np.exp(expo - top[:, None]).sum(axis=1))
    return out
