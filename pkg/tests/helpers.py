import numpy as np

from diffsoft import autodiff as ad


def fd_gradient(fn, x, eps=1e-6):
    """Central differences of a scalar function of an array."""
    x = np.asarray(x, dtype=np.float64)
    g = np.zeros_like(x)
    for k in range(x.size):
        xp = x.copy().reshape(-1)
        xm = x.copy().reshape(-1)
        xp[k] += eps
        xm[k] -= eps
        g.reshape(-1)[k] = (fn(xp.reshape(x.shape)) - fn(xm.reshape(x.shape))) / (2 * eps)
    return g


def ad_gradient(energy, x):
    xv = ad.variable(x)
    (g,) = ad.gradient(energy(xv), [xv])
    return g.value


def rel_err(a, b):
    a, b = np.asarray(a), np.asarray(b)
    scale = max(np.max(np.abs(b)), 1e-300)
    return float(np.max(np.abs(a - b)) / scale)
