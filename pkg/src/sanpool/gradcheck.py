"""Central finite differences, used as an independent check on ``backward``."""
import numpy as np

from .errors import ContractError, EvaluationError


def _scalar(value):
    value = getattr(value, "data", value)
    arr = np.asarray(value, dtype=np.float64)
    if arr.size != 1:
        raise ContractError(f"function must return a scalar, got shape {arr.shape}")
    return float(arr.reshape(-1)[0])


def finite_diff_gradient(f, x, h=1e-5):
    """Approximate the gradient of scalar ``f`` at tensor ``x`` coordinate by coordinate.

    ``x.data`` is perturbed in place and restored afterwards, so ``f`` may
    either use its argument or close over a model that owns ``x``.
    """
    if not h > 0:
        raise ContractError("step size h must be positive")
    data = x.data
    flat = data.reshape(-1)
    grad = np.empty(flat.size)
    for i in range(flat.size):
        orig = flat[i]
        try:
            flat[i] = orig + h
            fp = _scalar(f(x))
            flat[i] = orig - h
            fm = _scalar(f(x))
        finally:
            flat[i] = orig
        if not (np.isfinite(fp) and np.isfinite(fm)):
            raise EvaluationError(f"non-finite function value at coordinate {i}")
        grad[i] = (fp - fm) / (2.0 * h)
    return grad.reshape(data.shape)


def relative_error(a, b, floor=1e-10):
    """Norm-wise relative difference ``|a - b| / max(|a|, |b|)``."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    denom = max(np.linalg.norm(a), np.linalg.norm(b), floor)
    return float(np.linalg.norm(a - b) / denom)
