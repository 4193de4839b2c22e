"""Foreground masking and three-class intensity mixture fitting."""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

import numpy as np

from . import _backend
from .errors import DegeneracyError, DegenerateInputError, GeometryError, SampleSizeError
from .sequences import NMRTriple
from .volume import Volume3

CLASS_NAMES = ("csf", "gm", "wm")
MIN_SAMPLES = 1000
MIN_WEIGHT = 1e-6
OTSU_BINS = 256


@dataclass(frozen=True)
class ClassStats:
    """CSF/GM/WM mixture components, ascending by mean."""

    means: tuple[float, float, float]
    variances: tuple[float, float, float]
    weights: tuple[float, float, float]
    log_likelihood: float
    iterations: int
    ll_history: tuple[float, ...] = field(default=(), compare=False, repr=False)

    def __post_init__(self):
        m = self.means
        if not (m[0] < m[1] < m[2]):
            raise ValueError(f"class means must be strictly ascending, got {m}")
        if any(v <= 0 for v in self.variances):
            raise ValueError("variances must be positive")
        if abs(sum(self.weights) - 1.0) > 1e-9:
            raise ValueError(f"weights must sum to 1, got {sum(self.weights)}")

    def to_dict(self) -> dict:
        return {
            "means": list(self.means),
            "variances": list(self.variances),
            "weights": list(self.weights),
            "log_likelihood": self.log_likelihood,
            "iterations": self.iterations,
        }

    @classmethod
    def from_means(cls, means, variances=(1.0, 1.0, 1.0), weights=(1 / 3, 1 / 3, 1 / 3)) -> "ClassStats":
        """Stats carrying only class means, e.g. computed by a forward model."""
        w = np.asarray(weights, dtype=np.float64)
        w = w / w.sum()
        return cls(tuple(map(float, means)), tuple(map(float, variances)), tuple(w.tolist()), 0.0, 0)


@dataclass(frozen=True)
class TissueNMRMeans:
    csf: NMRTriple
    gm: NMRTriple
    wm: NMRTriple

    def __post_init__(self):
        if not (self.wm.t1 < self.gm.t1 < self.csf.t1):
            raise ValueError(
                f"expected T1 ordering wm < gm < csf, got {self.wm.t1}, {self.gm.t1}, {self.csf.t1}"
            )

    @property
    def triples(self) -> tuple[NMRTriple, NMRTriple, NMRTriple]:
        return (self.csf, self.gm, self.wm)

    def to_dict(self) -> dict:
        return {name: t.to_dict() for name, t in zip(CLASS_NAMES, self.triples)}

    @classmethod
    def from_dict(cls, d: dict) -> "TissueNMRMeans":
        return cls(*(NMRTriple.from_dict(d[name]) for name in CLASS_NAMES))


def load_tissue_means(path=None) -> TissueNMRMeans:
    """Read class NMR means from JSON; ``None`` loads the bundled 1.5 T defaults."""
    if path is None:
        text = resources.files("seqforge").joinpath("data/tissue_means_1p5t.json").read_text()
    else:
        text = Path(path).read_text()
    d = json.loads(text)
    d = {k: v for k, v in d.items() if k in CLASS_NAMES}
    return TissueNMRMeans.from_dict(d)


@dataclass(frozen=True)
class GmmConfig:
    max_iters: int = 200
    tol: float = 1e-10
    init: str = "quantile"
    init_means: tuple[float, float, float] | None = None
    seed: int = 0
    variance_floor: float = 1e-6

    def __post_init__(self):
        if self.max_iters < 1:
            raise ValueError("max_iters must be >= 1")
        if not self.tol > 0:
            raise ValueError("tol must be positive")
        if not self.variance_floor > 0:
            raise ValueError("variance_floor must be positive")
        if self.init not in ("quantile", "provided-means"):
            raise ValueError(f"unknown init {self.init!r}")
        if self.init == "provided-means" and (self.init_means is None or len(self.init_means) != 3):
            raise ValueError("provided-means init needs three init_means")


def otsu_threshold(values: np.ndarray, bins: int = OTSU_BINS) -> float:
    """Otsu threshold over a ``bins``-bin histogram.

    Returns the upper edge of the last bin of the lower class.
    """
    values = np.asarray(values, dtype=np.float64)
    lo, hi = float(values.min()), float(values.max())
    if lo == hi:
        return lo
    hist, edges = np.histogram(values, bins=bins, range=(lo, hi))
    hist = hist.astype(np.float64)
    centers = 0.5 * (edges[:-1] + edges[1:])
    w0 = np.cumsum(hist)
    w1 = w0[-1] - w0
    m0 = np.cumsum(hist * centers)
    mu0 = m0 / np.where(w0 > 0, w0, 1)
    mu1 = (m0[-1] - m0) / np.where(w1 > 0, w1, 1)
    between = w0 * w1 * (mu0 - mu1) ** 2
    between[(w0 == 0) | (w1 == 0)] = -1
    return float(edges[int(np.argmax(between)) + 1])


def foreground_mask(vol: Volume3, method="otsu") -> Volume3:
    """Binary foreground mask.

    ``method`` is ``"otsu"``, ``"threshold:<t>"`` or ``("threshold", t)``.
    With Otsu, a volume that already has an exactly-zero background is
    treated as masked and its foreground is the nonzero support.  Otherwise
    the threshold is found on log intensities, where dark CSF stays well
    separated from background noise; on linear intensities Otsu tends to
    split CSF from GM instead.
    """
    data = vol.data
    kind, t = _parse_method(method)
    if kind == "threshold":
        mask = data > t
    else:
        nz = data[data != 0]
        if nz.size == 0:
            raise DegenerateInputError("volume has no nonzero voxels")
        if nz.size < data.size:
            mask = data != 0
        else:
            if np.any(nz < 0):
                raise DegenerateInputError("Otsu masking needs nonnegative intensities; use a threshold")
            logv = np.log(nz.astype(np.float64))
            thr = otsu_threshold(logv)
            mask = np.log(np.where(data > 0, data, 1).astype(np.float64)) > thr if thr < logv.max() else data != 0
    if not mask.any():
        raise DegenerateInputError("foreground mask is empty")
    return vol.like(mask.astype(np.float32))


def _parse_method(method):
    if isinstance(method, (tuple, list)):
        return method[0], float(method[1])
    m = str(method)
    if m == "otsu":
        return "otsu", None
    if m.startswith("threshold:"):
        return "threshold", float(m.split(":", 1)[1])
    raise ValueError(f"unknown mask method {method!r}")


def fit_gmm3(vol: Volume3, mask: Volume3, cfg: GmmConfig = GmmConfig()) -> ClassStats:
    if not vol.same_geometry(mask):
        raise GeometryError("mask geometry does not match volume")
    samples = vol.data[mask.data > 0]
    return fit_gmm3_samples(samples, cfg)


def fit_gmm3_samples(samples, cfg: GmmConfig = GmmConfig()) -> ClassStats:
    """EM for a 1D, three-component Gaussian mixture.

    Each iteration is one E-step and one M-step.  The log-likelihood history
    covers the initial parameters and every subsequent update, so it has
    ``iterations + 1`` entries and ``log_likelihood`` is its last value.
    """
    x = np.ascontiguousarray(samples, dtype=np.float64).ravel()
    if x.size < MIN_SAMPLES:
        raise SampleSizeError(f"need at least {MIN_SAMPLES} foreground samples, got {x.size}")
    data_var = float(np.var(x))
    if data_var == 0:
        raise DegeneracyError("all samples are identical; three classes cannot be separated")
    floor = cfg.variance_floor * data_var

    if cfg.init == "quantile":
        means = np.percentile(x, [10, 50, 90])
    else:
        means = np.sort(np.asarray(cfg.init_means, dtype=np.float64))
    variances = np.full(3, data_var / 9.0)
    weights = np.full(3, 1.0 / 3.0)

    kern = _backend.get()
    history = []
    it = 0
    while True:
        nk, s1, s2, ll = kern.em_pass(x, means, variances, weights)
        history.append(ll)
        if it > 0 and abs(ll - history[-2]) <= cfg.tol * abs(history[-2]):
            break
        if it == cfg.max_iters:
            break
        small = np.flatnonzero(nk / x.size < MIN_WEIGHT)
        if small.size:
            k = int(small[0])
            raise DegeneracyError(f"mixture component {k} collapsed (weight {nk[k] / x.size:.3g})", k)
        shift = s1 / nk
        means = means + shift
        variances = np.maximum(s2 / nk - shift * shift, floor)
        weights = nk / nk.sum()
        it += 1

    weights = weights / weights.sum()
    order = np.argsort(means, kind="stable")
    means, variances, weights = means[order], variances[order], weights[order]
    for k in range(3):
        if weights[k] < MIN_WEIGHT:
            raise DegeneracyError(f"mixture component {k} collapsed (weight {weights[k]:.3g})", k)
    if not (means[0] < means[1] < means[2]):
        raise DegeneracyError(f"two mixture components share a mean: {means.tolist()}")
    return ClassStats(
        tuple(means.tolist()),
        tuple(variances.tolist()),
        tuple(weights.tolist()),
        float(history[-1]),
        it,
        tuple(history),
    )


def responsibilities(samples, stats: ClassStats) -> np.ndarray:
    """Posterior class probabilities, shape (n, 3)."""
    x = np.ascontiguousarray(samples, dtype=np.float64).ravel()
    return _backend.get().responsibilities(x, stats.means, stats.variances, stats.weights)

