"""Patch sampling, feature assembly and augmented patch synthesis."""
from __future__ import annotations

import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .errors import GeometryError
from .sequences import PulseParams, SequenceKind, synth_arrays
from .volume import CoordVolume, LabelVolume, NMRVolumeSet, Volume3

SAMPLING_MODES = ("uniform-foreground", "label-balanced", "dense")
CHANNELS = ("intensity", "coord_x", "coord_y", "coord_z", "labels")


@dataclass(frozen=True)
class PatchSpec:
    size: int = 32
    stride: int = 32
    count: int = 1
    sampling: str = "uniform-foreground"
    seed: int = 0
    labels: tuple[int, ...] | None = None

    def __post_init__(self):
        if self.size < 1 or self.stride < 1 or self.count < 1:
            raise ValueError("size, stride and count must all be >= 1")
        if self.sampling not in SAMPLING_MODES:
            raise ValueError(f"sampling must be one of {SAMPLING_MODES}, got {self.sampling!r}")


@dataclass(frozen=True, eq=False)
class FeatureSample:
    """Intensity patch, coordinate patch (size^3 x 3) and label patch."""

    intensity: np.ndarray
    coords: np.ndarray
    labels: np.ndarray
    origin: tuple[int, int, int]

    def __eq__(self, other):
        if not isinstance(other, FeatureSample):
            return NotImplemented
        return (
            tuple(self.origin) == tuple(other.origin)
            and self.intensity.dtype == other.intensity.dtype
            and np.array_equal(self.intensity, other.intensity)
            and np.array_equal(self.coords, other.coords)
            and np.array_equal(self.labels, other.labels)
        )

    __hash__ = None

    @property
    def features(self) -> np.ndarray:
        """Intensity and coordinates stacked as a (size, size, size, 4) array."""
        return np.concatenate([self.intensity[..., None], self.coords], axis=-1)


@dataclass(eq=False)
class PatchDataset:
    """Patch records plus a manifest describing how they were made.

    ``record_meta`` holds one dict per record (centre voxel, centre label,
    index into ``provenance``); ``provenance`` lists the sources.
    """

    size: int
    label_count: int
    records: list[FeatureSample] = field(default_factory=list)
    provenance: list[dict] = field(default_factory=list)
    record_meta: list[dict] = field(default_factory=list)
    warnings: list[str] = field(default_factory=list)
    channels: tuple[str, ...] = CHANNELS

    @property
    def count(self) -> int:
        return len(self.records)

    def manifest(self) -> dict:
        return {
            "format": "seqforge-patches",
            "version": 1,
            "count": self.count,
            "size": self.size,
            "label_count": self.label_count,
            "channels": list(self.channels),
            "provenance": self.provenance,
            "records": self.record_meta,
            "warnings": self.warnings,
        }

    def __eq__(self, other):
        if not isinstance(other, PatchDataset):
            return NotImplemented
        return self.manifest() == other.manifest() and all(a == b for a, b in zip(self.records, other.records))


@dataclass(frozen=True)
class ThetaSamplingSpec:
    theta0: tuple[float, float]
    theta1: tuple[float, float]
    theta2: tuple[float, float]
    n: int = 1
    seed: int = 0
    kind: SequenceKind = SequenceKind.FLASH_APPROX

    def __post_init__(self):
        object.__setattr__(self, "kind", SequenceKind.parse(self.kind))
        for name in ("theta0", "theta1", "theta2"):
            lo, hi = getattr(self, name)
            if not lo <= hi:
                raise ValueError(f"{name} range must satisfy lo <= hi, got {(lo, hi)}")
            object.__setattr__(self, name, (float(lo), float(hi)))
        if self.n < 1:
            raise ValueError("n must be >= 1")

    @classmethod
    def from_dict(cls, d: dict, **overrides) -> "ThetaSamplingSpec":
        args = dict(
            theta0=tuple(d["theta0"]),
            theta1=tuple(d["theta1"]),
            theta2=tuple(d["theta2"]),
            n=int(d.get("n", 1)),
            seed=int(d.get("seed", 0)),
            kind=d.get("kind", "flash_approx"),
        )
        args.update(overrides)
        return cls(**args)


def sample_theta_space(spec: ThetaSamplingSpec) -> list[PulseParams]:
    """``spec.n`` independent uniform draws inside the per-axis ranges."""
    rng = np.random.default_rng(spec.seed)
    lo = np.array([spec.theta0[0], spec.theta1[0], spec.theta2[0]])
    hi = np.array([spec.theta0[1], spec.theta1[1], spec.theta2[1]])
    draws = lo + (hi - lo) * rng.random((spec.n, 3))
    # guard against lo + (hi - lo) * u rounding past hi
    draws = np.clip(draws, lo, hi)
    return [PulseParams(spec.kind, *row) for row in draws]


def _check_inputs(ref, *others):
    for o in others:
        if not ref.same_geometry(o):
            raise GeometryError(f"geometry mismatch: {ref.geometry_str()} vs {o.geometry_str()}")


def tile_origins(dims, size: int, stride: int) -> list[tuple[int, int, int]]:
    """Origins of a dense tiling; the last tile on each axis is flush with the edge."""
    axes = []
    for n in dims:
        if n < size:
            raise GeometryError(f"volume extent {n} is smaller than patch size {size}")
        starts = list(range(0, n - size + 1, stride))
        if starts[-1] != n - size:
            starts.append(n - size)
        axes.append(starts)
    return [(i, j, k) for i in axes[0] for j in axes[1] for k in axes[2]]


def _origin_for(center, dims, size):
    return tuple(int(min(max(c - size // 2, 0), n - size)) for c, n in zip(center, dims))


def sample_locations(labels: LabelVolume, spec: PatchSpec):
    """Patch centres and origins as ``(center, origin)`` pairs, plus warnings."""
    dims = labels.dims
    if any(n < spec.size for n in dims):
        raise GeometryError(f"volume {dims} is smaller than patch size {spec.size}")
    if spec.sampling == "dense":
        out = []
        for o in tile_origins(dims, spec.size, spec.stride):
            c = tuple(v + spec.size // 2 for v in o)
            out.append((c, o))
        return out, []

    rng = np.random.default_rng(spec.seed)
    lab = labels.data
    notes: list[str] = []
    if spec.sampling == "uniform-foreground":
        pool = np.flatnonzero(lab.ravel() > 0)
        if pool.size == 0:
            notes.append("no foreground labels; sampling centres from the whole volume")
            pool = np.arange(lab.size)
        picks = pool[rng.integers(0, pool.size, size=spec.count)]
    else:
        present = np.unique(lab)
        wanted = present if spec.labels is None else np.asarray(spec.labels)
        use = []
        for l in wanted:
            if l in present:
                use.append(int(l))
            else:
                msg = f"label {int(l)} absent from label volume; skipped"
                notes.append(msg)
                warnings.warn(msg, stacklevel=2)
        if not use:
            raise GeometryError("none of the requested labels is present")
        share = [spec.count // len(use) + (1 if i < spec.count % len(use) else 0) for i in range(len(use))]
        flat = lab.ravel()
        picks = []
        for l, m in zip(use, share):
            pool = np.flatnonzero(flat == l)
            picks.append(pool[rng.integers(0, pool.size, size=m)])
        picks = np.concatenate(picks)
        picks = picks[rng.permutation(picks.size)]
    out = []
    for p in picks:
        c = tuple(int(v) for v in np.unravel_index(int(p), dims))
        out.append((c, _origin_for(c, dims, spec.size)))
    return out, notes


def _window(origin, size):
    return tuple(slice(o, o + size) for o in origin)


def _sample(intensity, coords: CoordVolume, labels: LabelVolume, origin, size) -> FeatureSample:
    w = _window(origin, size)
    return FeatureSample(
        np.ascontiguousarray(intensity, dtype=np.float32),
        np.ascontiguousarray(coords.data[w], dtype=np.float32),
        np.ascontiguousarray(labels.data[w], dtype=np.uint16),
        tuple(int(v) for v in origin),
    )


def _meta(labels: LabelVolume, center, origin, source: int) -> dict:
    return {
        "origin": list(origin),
        "center": list(center),
        "center_label": int(labels.data[tuple(center)]),
        "source": source,
    }


def extract_patches(vol: Volume3, coords: CoordVolume, labels: LabelVolume, spec: PatchSpec) -> PatchDataset:
    """Original (non-augmented) feature patches from an acquired image."""
    _check_inputs(vol, coords, labels)
    locs, notes = sample_locations(labels, spec)
    ds = PatchDataset(spec.size, labels.label_count, warnings=notes)
    ds.provenance.append({"kind": "original", "sampling": spec.sampling, "seed": spec.seed})
    for center, origin in locs:
        ds.records.append(_sample(vol.data[_window(origin, spec.size)], coords, labels, origin, spec.size))
        ds.record_meta.append(_meta(labels, center, origin, 0))
    return ds


def augment_patches(
    nmr: NMRVolumeSet,
    coords: CoordVolume,
    labels: LabelVolume,
    theta: PulseParams | Sequence[PulseParams],
    spec: PatchSpec,
    threads: int = 1,
) -> PatchDataset:
    """Patches whose intensity is the forward model applied to NMR patches.

    ``theta`` is one parameter set or a sequence used round-robin, record
    ``r`` taking ``theta[r % len(theta)]``.  Results do not depend on
    ``threads``.
    """
    _check_inputs(nmr.rho, coords, labels)
    thetas = [theta] if isinstance(theta, PulseParams) else list(theta)
    if not thetas:
        raise ValueError("need at least one theta")
    locs, notes = sample_locations(labels, spec)
    ds = PatchDataset(spec.size, labels.label_count, warnings=notes)
    for t in thetas:
        ds.provenance.append(
            {"kind": "augmented", "theta": t.to_dict(), "sampling": spec.sampling, "seed": spec.seed}
        )

    def build(r):
        center, origin = locs[r]
        w = _window(origin, spec.size)
        t = thetas[r % len(thetas)]
        inten = synth_arrays(nmr.rho.data[w], nmr.t1.data[w], nmr.t2.data[w], t)
        return _sample(inten, coords, labels, origin, spec.size), _meta(labels, center, origin, r % len(thetas))

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            built = list(pool.map(build, range(len(locs))))
    else:
        built = [build(r) for r in range(len(locs))]
    for rec, meta in built:
        ds.records.append(rec)
        ds.record_meta.append(meta)
    return ds
