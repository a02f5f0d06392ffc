import numpy as np


def numeric_grad(f, arrays, which, eps=1e-5):
    """Central-difference gradient of scalar f(arrays) wrt arrays[which]."""
    work = [a.copy() for a in arrays]
    grad = np.zeros_like(work[which])
    for idx in np.ndindex(work[which].shape):
        work[which][idx] += eps
        fp = f(work)
        work[which][idx] -= 2 * eps
        fm = f(work)
        work[which][idx] += eps
        grad[idx] = (fp - fm) / (2 * eps)
    return grad


def max_rel_err(analytic, numeric):
    denom = np.maximum(1.0, np.maximum(np.abs(analytic), np.abs(numeric)))
    return float(np.max(np.abs(analytic - numeric) / denom))


def away_from_kinks(rng, shape, low=0.1, high=2.3):
    """Values in [-high,-low] or [low,high]: clear of the relu kink at 0
    and the hard-sigmoid kinks at +-2.5, so finite differences are exact."""
    mag = rng.uniform(low, high, size=shape)
    sign = np.where(rng.random(size=shape) < 0.5, -1.0, 1.0)
    return mag * sign
