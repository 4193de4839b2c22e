"""Deterministic digital brain phantoms with known ground truth."""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import SpecError
from .sequences import NMRTriple, PulseParams, synth_volume
from .tissue import CLASS_NAMES, TissueNMRMeans
from .volume import CoordVolume, LabelVolume, NMRVolumeSet, Volume3

# float32-exact values keep the maps equal to the declared triples
DEFAULT_TISSUES = {
    "csf": NMRTriple(1.0, 3000.0, 500.0),
    "gm": NMRTriple(0.8125, 1100.0, 100.0),
    "wm": NMRTriple(0.6875, 650.0, 80.0),
}
NOISE_FLOOR_FRAC = 1e-6


@dataclass(frozen=True)
class Structure:
    label: int
    center: tuple[float, float, float]
    semi_axes: tuple[float, float, float]
    nmr: NMRTriple
    tissue: str | None = None

    def to_dict(self) -> dict:
        d = {
            "label": self.label,
            "ellipsoid": {"center": list(self.center), "semi_axes": list(self.semi_axes)},
            "nmr": self.nmr.to_dict(),
        }
        if self.tissue:
            d["tissue"] = self.tissue
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "Structure":
        geo = d["ellipsoid"]
        return cls(
            int(d["label"]),
            tuple(map(float, geo["center"])),
            tuple(map(float, geo["semi_axes"])),
            NMRTriple.from_dict(d["nmr"]),
            d.get("tissue"),
        )


@dataclass(frozen=True)
class PhantomSpec:
    """Ordered ellipsoids painted into a grid; later structures win.

    Centres and semi-axes are in voxel index units.
    """

    dims: tuple[int, int, int]
    structures: tuple[Structure, ...]
    voxel_size: tuple[float, float, float] = (1.0, 1.0, 1.0)
    noise_sigma_frac: float = 0.0
    seed: int = 0
    label_count: int = 44
    meta: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        object.__setattr__(self, "structures", tuple(self.structures))
        if len(self.dims) != 3 or any(int(n) < 1 for n in self.dims):
            raise SpecError(f"dims must be three positive integers, got {self.dims}")
        if self.noise_sigma_frac < 0:
            raise SpecError("noise_sigma_frac must be >= 0")
        seen: dict[int, NMRTriple] = {}
        for s in self.structures:
            if s.label <= 0 or s.label >= self.label_count:
                raise SpecError(f"structure label {s.label} outside 1..{self.label_count - 1}")
            if s.label in seen and seen[s.label] != s.nmr:
                raise SpecError(f"label {s.label} declared with two different NMR triples")
            seen[s.label] = s.nmr
            if any(a <= 0 for a in s.semi_axes):
                raise SpecError(f"structure {s.label} has nonpositive semi-axes")
            if s.tissue is not None and s.tissue not in CLASS_NAMES:
                raise SpecError(f"unknown tissue tag {s.tissue!r}")

    def tissue_means(self) -> TissueNMRMeans:
        """Class NMR means from the structures tagged csf/gm/wm."""
        tagged = {s.tissue: s.nmr for s in self.structures if s.tissue}
        missing = [n for n in CLASS_NAMES if n not in tagged]
        if missing:
            raise SpecError(f"phantom has no structure tagged {missing}")
        return TissueNMRMeans(tagged["csf"], tagged["gm"], tagged["wm"])

    def to_dict(self) -> dict:
        return {
            "dims": list(self.dims),
            "voxel_size": list(self.voxel_size),
            "structures": [s.to_dict() for s in self.structures],
            "noise_sigma_frac": self.noise_sigma_frac,
            "seed": self.seed,
            "label_count": self.label_count,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "PhantomSpec":
        try:
            return cls(
                tuple(int(n) for n in d["dims"]),
                tuple(Structure.from_dict(s) for s in d["structures"]),
                tuple(map(float, d.get("voxel_size", (1.0, 1.0, 1.0)))),
                float(d.get("noise_sigma_frac", 0.0)),
                int(d.get("seed", 0)),
                int(d.get("label_count", 44)),
            )
        except (KeyError, TypeError, ValueError) as exc:
            raise SpecError(f"invalid phantom spec: {exc}") from exc


def load_phantom_spec(path) -> PhantomSpec:
    try:
        d = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise SpecError(f"{path}: {exc}") from exc
    return PhantomSpec.from_dict(d)


def three_shell_spec(dims=(128, 128, 128), tissues=None, *, radius_frac=0.42, **kw) -> PhantomSpec:
    """Nested CSF shell, GM shell and WM core with about equal volumes."""
    tissues = {**DEFAULT_TISSUES, **(tissues or {})}
    center = tuple((n - 1) / 2.0 for n in dims)
    radius = radius_frac * min(dims)
    # radii at cube roots of 3:2:1 volume fractions
    radii = [radius, radius * (2 / 3) ** (1 / 3), radius * (1 / 3) ** (1 / 3)]
    structures = [
        Structure(label, center, (r, r, r), tissues[name], name)
        for label, name, r in zip((1, 2, 3), CLASS_NAMES, radii)
    ]
    return PhantomSpec(tuple(dims), tuple(structures), **kw)


def phantom_affine(spec: PhantomSpec) -> np.ndarray:
    """Voxel sizes on the diagonal, origin at the grid centre."""
    vs = np.asarray(spec.voxel_size, dtype=np.float64)
    aff = np.diag([*vs, 1.0])
    aff[:3, 3] = -vs * (np.asarray(spec.dims) - 1) / 2.0
    return aff


def generate_phantom(spec: PhantomSpec) -> tuple[NMRVolumeSet, LabelVolume, CoordVolume]:
    dims = tuple(int(n) for n in spec.dims)
    labels = np.zeros(dims, dtype=np.uint16)
    rho = np.zeros(dims, dtype=np.float32)
    t1 = np.zeros(dims, dtype=np.float32)
    t2 = np.zeros(dims, dtype=np.float32)
    grids = [np.arange(n, dtype=np.float64) for n in dims]
    for s in spec.structures:
        terms = [((g - c) / a) ** 2 for g, c, a in zip(grids, s.center, s.semi_axes)]
        inside = terms[0][:, None, None] + terms[1][None, :, None] + terms[2][None, None, :] <= 1.0
        if not inside.any():
            raise SpecError(f"structure {s.label} contains no voxel of the {dims} grid")
        labels[inside] = s.label
        rho[inside] = s.nmr.rho
        t1[inside] = s.nmr.t1
        t2[inside] = s.nmr.t2

    aff = phantom_affine(spec)
    idx = np.stack(np.meshgrid(*grids, indexing="ij"), axis=-1)
    coords = idx @ aff[:3, :3].T + aff[:3, 3]
    geo = dict(voxel_size=spec.voxel_size, affine=aff)
    nmr = NMRVolumeSet(Volume3(rho, **geo), Volume3(t1, **geo), Volume3(t2, **geo))
    return nmr, LabelVolume(labels, label_count=spec.label_count, **geo), CoordVolume(coords, **geo)


def acquire_phantom(nmr: NMRVolumeSet, theta: PulseParams, noise_sigma_frac: float = 0.0, seed: int = 0) -> Volume3:
    """Synthesise the maps under ``theta`` and add Gaussian noise.

    Noise goes on the phantom support only, with sigma equal to
    ``noise_sigma_frac`` times the mean foreground intensity; noisy values
    are clamped below at a small positive floor so the foreground stays
    positive and the background stays exactly zero.
    """
    clean = synth_volume(nmr, theta)
    if noise_sigma_frac == 0:
        return clean
    fg = nmr.support()
    mean_fg = float(clean.data[fg].astype(np.float64).mean())
    sigma = noise_sigma_frac * mean_fg
    rng = np.random.default_rng(seed)
    noise = rng.normal(0.0, sigma, size=clean.data.shape)
    noisy = clean.data.astype(np.float64)
    noisy[fg] = np.maximum(noisy[fg] + noise[fg], NOISE_FLOOR_FRAC * mean_fg)
    return clean.like(noisy.astype(np.float32))
