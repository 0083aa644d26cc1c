"""Hot loops used by the posterior oracle.

The compiled extension is preferred; set ``LAPLACECERT_KERNELS=python`` to
force the numpy fallback (useful for benchmarking and for checking that the
two backends agree).
"""

from __future__ import annotations

import os

from . import _pykernels

BACKEND = "python"
_impl = _pykernels

if os.environ.get("LAPLACECERT_KERNELS", "").lower() != "python":
    try:
        from . import _ckernels as _impl  # type: ignore[no-redef]

        BACKEND = "cython"
    except ImportError:  # extension not built
        _impl = _pykernels


def logistic_loglik_many(design, labels, points):
    """Logistic log-likelihood at every row of ``points`` (shape ``(N, p)``)."""
    import numpy as np

    return _impl.logistic_loglik_many(
        np.ascontiguousarray(design, dtype=float),
        np.ascontiguousarray(labels, dtype=float),
        np.ascontiguousarray(np.atleast_2d(points), dtype=float),
    )


def tilted_logsumexp_many(features, log_weights, points):
    """``log sum_m w_m exp<features_m, u>`` at every row ``u`` of ``points``."""
    import numpy as np

    return _impl.tilted_logsumexp_many(
        np.ascontiguousarray(features, dtype=float),
        np.ascontiguousarray(log_weights, dtype=float),
        np.ascontiguousarray(np.atleast_2d(points), dtype=float),
    )


__all__ = ["BACKEND", "logistic_loglik_many", "tilted_logsumexp_many"]
