"""Closed-form pulse-sequence signal models.

``flash_exact`` is the steady-state spoiled gradient echo signal.  The two
log-linear families share one parameterisation ``theta = (theta0, theta1,
theta2)``::

    FLASH_APPROX   log S = theta0 + log rho + theta1 / T1 + theta2 / T2
    MPRAGE_APPROX  log S = theta0 + log rho + theta1 * T1 + theta2 * T1**2

All times are in milliseconds.  ``theta0`` absorbs gain and flip-angle
terms.  A single transverse relaxation channel ``t2`` stands in for both
T2 and T2*.
"""
from __future__ import annotations

import enum
import json
import math
from dataclasses import dataclass
from typing import Callable

import numpy as np

from . import _backend
from .errors import DataError, GeometryError, RangeError, RankError, SingularityError
from .volume import NMRVolumeSet, Volume3

# exp() of anything larger overflows float32 volumes
MAX_LOG_FLOAT32 = math.log(float(np.finfo(np.float32).max))
MAX_LOG_FLOAT64 = math.log(float(np.finfo(np.float64).max))


class SequenceKind(str, enum.Enum):
    FLASH_APPROX = "flash_approx"
    MPRAGE_APPROX = "mprage_approx"

    @classmethod
    def parse(cls, value) -> "SequenceKind":
        if isinstance(value, cls):
            return value
        v = str(value).strip().lower()
        aliases = {"flash": cls.FLASH_APPROX, "mprage": cls.MPRAGE_APPROX}
        if v in aliases:
            return aliases[v]
        return cls(v)


@dataclass(frozen=True)
class AcquisitionParams:
    tr: float
    te: float = 0.0
    flip_angle: float = 90.0
    gain: float = 1.0
    ti: float | None = None

    def __post_init__(self):
        if not (self.tr > 0 and self.te >= 0 and self.tr > self.te):
            raise ValueError(f"need tr > te >= 0, got tr={self.tr} te={self.te}")
        if not 0 < self.flip_angle < 180:
            raise ValueError(f"flip angle must lie in (0, 180) degrees, got {self.flip_angle}")
        if not self.gain > 0:
            raise ValueError(f"gain must be positive, got {self.gain}")
        if self.ti is not None and self.ti < 0:
            raise ValueError(f"ti must be >= 0, got {self.ti}")


@dataclass(frozen=True)
class NMRTriple:
    rho: float
    t1: float
    t2: float

    def __post_init__(self):
        # fields may be arrays for vectorised evaluation
        if not all(np.all(np.asarray(v) > 0) for v in (self.rho, self.t1, self.t2)):
            raise ValueError(f"NMR parameters must be positive, got {self}")

    @classmethod
    def from_dict(cls, d: dict) -> "NMRTriple":
        return cls(float(d["rho"]), float(d["t1_ms"]), float(d["t2_ms"]))

    def to_dict(self) -> dict:
        return {"rho": self.rho, "t1_ms": self.t1, "t2_ms": self.t2}


@dataclass(frozen=True)
class PulseParams:
    kind: SequenceKind
    theta0: float
    theta1: float
    theta2: float

    def __post_init__(self):
        object.__setattr__(self, "kind", SequenceKind.parse(self.kind))
        for name in ("theta0", "theta1", "theta2"):
            v = float(getattr(self, name))
            if not math.isfinite(v):
                raise ValueError(f"{name} must be finite, got {v}")
            object.__setattr__(self, name, v)

    @property
    def theta(self) -> tuple[float, float, float]:
        return (self.theta0, self.theta1, self.theta2)

    def shifted(self, delta0: float) -> "PulseParams":
        return PulseParams(self.kind, self.theta0 + delta0, self.theta1, self.theta2)

    def to_dict(self) -> dict:
        return {"kind": self.kind.value, "theta0": self.theta0, "theta1": self.theta1, "theta2": self.theta2}

    @classmethod
    def from_dict(cls, d: dict) -> "PulseParams":
        return cls(SequenceKind.parse(d["kind"]), float(d["theta0"]), float(d["theta1"]), float(d["theta2"]))

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)

    @classmethod
    def from_json(cls, text: str) -> "PulseParams":
        return cls.from_dict(json.loads(text))


@dataclass(frozen=True)
class FitReport:
    fitted: PulseParams
    r_squared: float
    max_rel_error: float
    sample_count: int
    t1: np.ndarray | None = None
    exact_log: np.ndarray | None = None
    approx_log: np.ndarray | None = None

    def to_dict(self) -> dict:
        return {
            "fitted": self.fitted.to_dict(),
            "r_squared": self.r_squared,
            "max_rel_error": self.max_rel_error,
            "sample_count": self.sample_count,
        }

    def table(self) -> str:
        """Tab-separated sampled curves: T1, exact log-signal, approximate log-signal."""
        rows = ["t1_ms\texact_log_signal\tapprox_log_signal"]
        rows += [f"{a:.6f}\t{b:.12g}\t{c:.12g}" for a, b, c in zip(self.t1, self.exact_log, self.approx_log)]
        return "\n".join(rows) + "\n"


def basis(kind: SequenceKind, t1, t2):
    """The two relaxation regressors multiplying theta1 and theta2."""
    kind = SequenceKind.parse(kind)
    if kind is SequenceKind.FLASH_APPROX:
        return 1.0 / np.asarray(t1, dtype=np.float64), 1.0 / np.asarray(t2, dtype=np.float64)
    t1 = np.asarray(t1, dtype=np.float64)
    return t1, t1 * t1


def _fields(beta):
    if isinstance(beta, NMRTriple):
        beta = (beta.rho, beta.t1, beta.t2)
    return tuple(np.asarray(v, dtype=np.float64) for v in beta)


def flash_exact(beta: NMRTriple, acq: AcquisitionParams, *, singular_tol: float = 4 * np.finfo(float).eps):
    """Spoiled gradient echo signal ``G rho sin(a) (1-E1)/(1-cos(a) E1) exp(-TE/T2)``.

    ``beta`` is an :class:`NMRTriple` or a plain ``(rho, t1, t2)`` tuple; the
    latter skips validation (so rho = 0 is allowed) and accepts arrays.
    """
    a = math.radians(acq.flip_angle)
    rho, t1, t2 = _fields(beta)
    e1 = np.exp(-acq.tr / t1)
    denom = 1.0 - math.cos(a) * e1
    if np.any(np.abs(denom) <= singular_tol):
        raise SingularityError("FLASH denominator 1 - cos(alpha) exp(-TR/T1) vanishes")
    s = acq.gain * rho * math.sin(a) * (1.0 - e1) / denom * np.exp(-acq.te / t2)
    return float(s) if s.ndim == 0 else s


def flash_exact_log(t1, acq: AcquisitionParams, rho=1.0, t2=np.inf):
    """Natural log of :func:`flash_exact`; ``t2=inf`` drops the echo decay."""
    a = math.radians(acq.flip_angle)
    t1 = np.asarray(t1, dtype=np.float64)
    e1 = np.exp(-acq.tr / t1)
    denom = 1.0 - math.cos(a) * e1
    if np.any(np.abs(denom) <= 4 * np.finfo(float).eps):
        raise SingularityError("FLASH denominator 1 - cos(alpha) exp(-TR/T1) vanishes")
    return (
        math.log(acq.gain * math.sin(a))
        + np.log(rho)
        + np.log1p(-e1)
        - np.log(denom)
        - acq.te / np.asarray(t2, dtype=np.float64)
    )


def log_signal_approx(beta: NMRTriple, theta: PulseParams):
    rho, t1, t2 = _fields(beta)
    if theta.kind is SequenceKind.FLASH_APPROX:
        v = theta.theta0 + np.log(rho) + theta.theta1 / t1 + theta.theta2 / t2
    else:
        v = theta.theta0 + np.log(rho) + theta.theta1 * t1 + theta.theta2 * (t1 * t1)
    return float(v) if np.ndim(v) == 0 else v


def synth_signal(beta: NMRTriple, theta: PulseParams):
    v = log_signal_approx(beta, theta)
    if np.max(v) > MAX_LOG_FLOAT64:
        raise RangeError(f"synthesised log-signal {np.max(v):.6g} overflows")
    s = np.exp(v)
    return float(s) if np.ndim(s) == 0 else s


def _sequence_code(kind: SequenceKind) -> int:
    return 0 if kind is SequenceKind.FLASH_APPROX else 1


def synth_arrays(rho: np.ndarray, t1: np.ndarray, t2: np.ndarray, theta: PulseParams, sel=None) -> np.ndarray:
    """Voxel-wise synthesis over same-shaped arrays; zero where ``sel`` is false.

    ``sel`` defaults to the voxels where rho, T1 and T2 are all positive.
    Every selected voxel is computed independently, so cropping the inputs
    and synthesising commutes bit-exactly with synthesising and cropping.
    """
    shape = rho.shape
    r = np.ascontiguousarray(rho, dtype=np.float32).ravel()
    a = np.ascontiguousarray(t1, dtype=np.float32).ravel()
    b = np.ascontiguousarray(t2, dtype=np.float32).ravel()
    valid = (r > 0) & (a > 0) & (b > 0)
    if sel is None:
        sel = valid
    else:
        sel = np.ascontiguousarray(sel, dtype=bool).ravel()
        bad = sel & ~valid
        if bad.any():
            idx = tuple(int(v) for v in np.unravel_index(int(np.argmax(bad)), shape))
            raise DataError(f"nonpositive NMR value inside mask at voxel {idx}", idx)
    out, max_log = _backend.get().synth_loglinear(
        r, a, b, sel.view(np.uint8), _sequence_code(theta.kind), theta.theta0, theta.theta1, theta.theta2
    )
    if max_log > MAX_LOG_FLOAT32:
        raise RangeError(f"synthesised log-signal {max_log:.6g} overflows float32")
    return out.reshape(shape)


def synth_volume(nmr: NMRVolumeSet, theta: PulseParams, mask: Volume3 | None = None) -> Volume3:
    """Push whole NMR maps through the approximate forward model.

    Without ``mask`` the model is evaluated wherever the maps are positive
    and the remaining voxels are zero.  With a mask, voxels outside it are
    zero and every voxel inside must have positive maps.
    """
    sel = None
    if mask is not None:
        if not mask.same_geometry(nmr.rho):
            raise GeometryError(f"mask {mask.geometry_str()} does not match maps {nmr.rho.geometry_str()}")
        sel = mask.data > 0
    out = synth_arrays(nmr.rho.data, nmr.t1.data, nmr.t2.data, theta, sel)
    return nmr.rho.like(out)


def _solve_normal(design: np.ndarray, y: np.ndarray) -> np.ndarray:
    scale = np.abs(design).max(axis=0)
    if np.any(scale == 0):
        raise RankError("design matrix has an all-zero column")
    a = design / scale
    gram = a.T @ a
    # a rank test on the scaled design; the normal matrix squares its condition
    sv = np.linalg.svd(a, compute_uv=False)
    if sv[-1] <= sv[0] * 1e-10:
        raise RankError(f"design matrix is rank deficient (singular values {sv.tolist()})")
    coef = np.linalg.solve(gram, a.T @ y)
    return coef / scale


def fit_theta_to_exact(
    acq: AcquisitionParams,
    kind=SequenceKind.FLASH_APPROX,
    t1_range: tuple[float, float] = (500.0, 3000.0),
    t2_fixed: float = 80.0,
    n_samples: int = 200,
    target: Callable[[np.ndarray], np.ndarray] | None = None,
) -> FitReport:
    """Least-squares fit of an approximate family to an exact log-signal curve.

    T1 is sampled uniformly on ``t1_range`` with T2 held at ``t2_fixed`` and
    rho = 1.  ``target`` maps the T1 samples to log-signal; it defaults to
    the FLASH equation for ``acq``.

    For FLASH_APPROX the T2 term is exact (``theta2 = -TE``), so only theta0
    and theta1 are free.  MPRAGE_APPROX fits all three coefficients.
    """
    kind = SequenceKind.parse(kind)
    lo, hi = map(float, t1_range)
    if not (0 < lo < hi and math.isfinite(hi)):
        raise ValueError(f"need 0 < lo < hi, got {t1_range}")
    if n_samples < 3:
        raise ValueError("n_samples must be >= 3")
    t1 = np.linspace(lo, hi, int(n_samples))
    if target is None:
        y = flash_exact_log(t1, acq, t2=t2_fixed)
    else:
        y = np.asarray(target(t1), dtype=np.float64)
    if np.unique(t1).size < 3:
        raise RankError("fewer than three distinct T1 samples")

    if kind is SequenceKind.FLASH_APPROX:
        theta2 = -acq.te
        resp = y - theta2 / t2_fixed
        c0, c1 = _solve_normal(np.column_stack([np.ones_like(t1), 1.0 / t1]), resp)
        fitted = PulseParams(kind, c0, c1, theta2)
    else:
        c = _solve_normal(np.column_stack([np.ones_like(t1), t1, t1 * t1]), y)
        fitted = PulseParams(kind, *c)
    approx = _approx_curve(fitted, t1, t2_fixed)
    ss_res = float(np.sum((y - approx) ** 2))
    ss_tot = float(np.sum((y - y.mean()) ** 2))
    r2 = 1.0 - ss_res / ss_tot if ss_tot > 0 else (1.0 if ss_res == 0 else 0.0)
    r2 = min(max(r2, 0.0), 1.0)
    with np.errstate(divide="ignore", invalid="ignore"):
        rel = np.abs(approx - y) / np.abs(y)
    rel = np.where(y == 0, np.where(approx == y, 0.0, np.inf), rel)
    return FitReport(fitted, r2, float(rel.max()), int(n_samples), t1, y, approx)


def _approx_curve(theta: PulseParams, t1: np.ndarray, t2: float) -> np.ndarray:
    g1, g2 = basis(theta.kind, t1, np.full_like(t1, t2))
    return theta.theta0 + theta.theta1 * g1 + theta.theta2 * g2
