"""Pure-numpy implementations of the compiled kernels in ``_kernels.pyx``."""
import numpy as np


def synth_loglinear(rho, t1, t2, sel, kind, c0, c1, c2):
    out = np.zeros(rho.shape[0], dtype=np.float32)
    idx = sel.astype(bool)
    if not idx.any():
        return out, -np.inf
    r1 = t1[idx].astype(np.float64)
    v = c0 + np.log(rho[idx].astype(np.float64))
    if kind == 0:
        v = v + c1 / r1
        v = v + c2 / t2[idx].astype(np.float64)
    else:
        v = v + c1 * r1
        v = v + c2 * (r1 * r1)
    with np.errstate(over="ignore"):
        out[idx] = np.exp(v).astype(np.float32)
    return out, float(v.max())


def _log_terms(x, means, variances, weights):
    mu = np.asarray(means, dtype=np.float64)
    var = np.asarray(variances, dtype=np.float64)
    lognorm = np.log(np.asarray(weights, dtype=np.float64)) - 0.5 * np.log(2.0 * np.pi * var)
    d = x[:, None] - mu[None, :]
    return lognorm - d * d * (0.5 / var), d


def em_pass(x, means, variances, weights):
    lp, d = _log_terms(x, means, variances, weights)
    m = lp.max(axis=1, keepdims=True)
    e = np.exp(lp - m)
    s = e.sum(axis=1, keepdims=True)
    ll = float(np.sum(m[:, 0] + np.log(s[:, 0])))
    r = e / s
    return r.sum(axis=0), (r * d).sum(axis=0), (r * d * d).sum(axis=0), ll


def responsibilities(x, means, variances, weights):
    lp, _ = _log_terms(x, means, variances, weights)
    e = np.exp(lp - lp.max(axis=1, keepdims=True))
    return e / e.sum(axis=1, keepdims=True)


def fuse_accumulate(acc, cnt, ox, oy, oz, patch):
    sx, sy, sz = patch.shape[:3]
    sl = (slice(ox, ox + sx), slice(oy, oy + sy), slice(oz, oz + sz))
    acc[sl] += patch
    cnt[sl] += 1
