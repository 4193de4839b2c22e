"""Recover pulse-sequence parameters from class mean intensities.

For each class k the approximate model gives one linear equation

    log S_k - log rho_k = theta0 + theta1 * g1(beta_k) + theta2 * g2(beta_k)

so three classes determine theta exactly.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DomainError, IllConditionedError, SeqforgeError
from .sequences import PulseParams, SequenceKind, basis, synth_signal
from .tissue import ClassStats, GmmConfig, TissueNMRMeans, fit_gmm3, foreground_mask
from .volume import Volume3

MAX_CONDITION = 1e12


@dataclass(frozen=True)
class EstimationReport:
    theta: PulseParams
    residual_norm: float
    condition_number: float
    class_stats: ClassStats
    resynthesized_means: tuple[float, float, float]

    def to_dict(self) -> dict:
        return {
            "theta": self.theta.to_dict(),
            "residual_norm": self.residual_norm,
            "condition_number": self.condition_number,
            "class_stats": self.class_stats.to_dict(),
            "resynthesized_means": list(self.resynthesized_means),
        }


def lu_solve_pivoted(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Gaussian elimination with partial pivoting for a small dense system.

    ``b`` may be a vector or a matrix of right-hand sides.  Raises
    ``ZeroDivisionError`` on an exactly zero pivot.
    """
    a = np.array(a, dtype=np.float64)
    b = np.array(b, dtype=np.float64)
    vec = b.ndim == 1
    if vec:
        b = b[:, None]
    n = a.shape[0]
    for col in range(n):
        p = col + int(np.argmax(np.abs(a[col:, col])))
        if a[p, col] == 0.0:
            raise ZeroDivisionError(f"zero pivot in column {col}")
        if p != col:
            a[[col, p]] = a[[p, col]]
            b[[col, p]] = b[[p, col]]
        for r in range(col + 1, n):
            f = a[r, col] / a[col, col]
            a[r, col:] -= f * a[col, col:]
            b[r] -= f * b[col]
    x = np.zeros_like(b)
    for r in range(n - 1, -1, -1):
        x[r] = (b[r] - a[r, r + 1 :] @ x[r + 1 :]) / a[r, r]
    return x[:, 0] if vec else x


def condition_inf(a: np.ndarray) -> float:
    """Infinity-norm condition number ``||A|| ||A^-1||``."""
    try:
        inv = lu_solve_pivoted(a, np.eye(a.shape[0]))
    except ZeroDivisionError:
        return float("inf")
    return float(np.abs(a).sum(axis=1).max() * np.abs(inv).sum(axis=1).max())


def _triples(nmr):
    return nmr.triples if isinstance(nmr, TissueNMRMeans) else tuple(nmr)


def design_matrix(nmr, kind: SequenceKind) -> np.ndarray:
    rows = []
    for beta in _triples(nmr):
        g1, g2 = basis(kind, beta.t1, beta.t2)
        rows.append([1.0, float(g1), float(g2)])
    return np.array(rows)


def estimate_theta(stats: ClassStats, nmr, kind=SequenceKind.FLASH_APPROX) -> EstimationReport:
    """Solve the three class equations for theta.

    ``nmr`` is a :class:`TissueNMRMeans` or any (csf, gm, wm) sequence of
    :class:`NMRTriple`.  Columns are scaled to unit max-norm before the
    conditioning check and the pivoted solve.
    """
    kind = SequenceKind.parse(kind)
    triples = _triples(nmr)
    means = np.asarray(stats.means, dtype=np.float64)
    if np.any(means <= 0):
        bad = int(np.flatnonzero(means <= 0)[0])
        raise DomainError(f"class mean {bad} is nonpositive ({means[bad]}); log-signal undefined")
    a = design_matrix(nmr, kind)
    rhs = np.log(means) - np.log([t.rho for t in triples])

    scale = np.abs(a).max(axis=0)
    if np.any(scale == 0):
        raise IllConditionedError("design matrix has an all-zero column")
    scaled = a / scale
    cond = condition_inf(scaled)
    if not cond <= MAX_CONDITION:
        raise IllConditionedError(
            f"class NMR means give an ill-conditioned system (condition number {cond:.3g})", cond
        )
    theta = lu_solve_pivoted(scaled, rhs) / scale
    residual = float(np.abs(a @ theta - rhs).max())
    params = PulseParams(kind, *theta)
    resynth = tuple(float(synth_signal(beta, params)) for beta in triples)
    return EstimationReport(params, residual, cond, stats, resynth)


def estimate_from_volume(
    vol: Volume3,
    nmr: TissueNMRMeans,
    kind=SequenceKind.FLASH_APPROX,
    gmm_cfg: GmmConfig = GmmConfig(),
    mask_method="otsu",
) -> EstimationReport:
    """Mask, fit the three-class mixture, then solve for theta."""
    stage = "mask"
    try:
        mask = foreground_mask(vol, mask_method)
        stage = "gmm"
        stats = fit_gmm3(vol, mask, gmm_cfg)
        stage = "solve"
        return estimate_theta(stats, nmr, kind)
    except SeqforgeError as exc:
        exc.args = (f"[{stage}] {exc.args[0] if exc.args else ''}",) + exc.args[1:]
        exc.stage = stage
        raise
