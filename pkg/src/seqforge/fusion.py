"""Prediction-time probability fusion and Dice overlap."""
from __future__ import annotations

from collections import Counter
from typing import Iterable, Sequence

import numpy as np

from . import _backend
from .errors import GeometryError
from .volume import LabelVolume

BACKGROUND_LABEL = 0


def fuse_probability_patches(
    patches: Iterable[tuple[Sequence[int], np.ndarray]],
    dims: Sequence[int],
    label_count: int,
    *,
    voxel_size=(1.0, 1.0, 1.0),
    affine=None,
) -> tuple[np.ndarray, LabelVolume]:
    """Average overlapping per-patch label probabilities into a full volume.

    Each patch is ``(origin, probs)`` with ``probs`` shaped
    ``(sx, sy, sz, label_count)``.  Probabilities are taken as float32 and
    summed in float64, which is exact for any realistic overlap, and
    patches are accumulated in a canonical order, so the result does not
    depend on the order of ``patches``.  Uncovered voxels get a uniform
    vector and the background label.  Ties in the argmax go to the lowest
    label index.
    """
    dims = tuple(int(n) for n in dims)
    items = []
    for origin, probs in patches:
        origin = tuple(int(v) for v in origin)
        p = np.ascontiguousarray(probs, dtype=np.float32)
        if p.ndim != 4 or p.shape[3] != label_count:
            raise GeometryError(f"patch at {origin} has shape {p.shape}, expected (..., {label_count})")
        if any(o < 0 or o + s > n for o, s, n in zip(origin, p.shape[:3], dims)):
            raise GeometryError(f"patch at {origin} with extent {p.shape[:3]} exceeds volume {dims}")
        items.append((origin, p))
    dup = {o for o, n in Counter(o for o, _ in items).items() if n > 1}
    # content bytes only break ties between patches sharing an origin
    items.sort(key=lambda it: (it[0], it[1].shape, it[1].tobytes() if it[0] in dup else b""))

    acc = np.zeros(dims + (label_count,), dtype=np.float64)
    cnt = np.zeros(dims, dtype=np.int64)
    kern = _backend.get()
    for origin, p in items:
        kern.fuse_accumulate(acc, cnt, origin[0], origin[1], origin[2], p)

    covered = cnt > 0
    prob = np.full(dims + (label_count,), 1.0 / label_count, dtype=np.float64)
    prob[covered] = acc[covered] / cnt[covered][:, None]
    hard = np.full(dims, BACKGROUND_LABEL, dtype=np.int64)
    hard[covered] = np.argmax(prob[covered], axis=1)
    return prob.astype(np.float32), LabelVolume(hard, voxel_size, affine, label_count=label_count)


def dice_overlap(a: LabelVolume, b: LabelVolume, labels: Iterable[int] | None = None):
    """Per-label Dice ``2|A∩B| / (|A|+|B|)`` and the macro average.

    Labels absent from both volumes map to ``None`` and are left out of the
    average.  By default every label present in either volume is scored.
    """
    if a.dims != b.dims:
        raise GeometryError(f"label volumes differ in shape: {a.dims} vs {b.dims}")
    x = a.data.ravel().astype(np.int64)
    y = b.data.ravel().astype(np.int64)
    n = int(max(x.max(initial=0), y.max(initial=0))) + 1
    ca = np.bincount(x, minlength=n)
    cb = np.bincount(y, minlength=n)
    inter = np.bincount(x[x == y], minlength=n)
    if labels is None:
        labels = [int(l) for l in np.flatnonzero((ca + cb) > 0)]
    scores: dict[int, float | None] = {}
    for l in labels:
        l = int(l)
        if l >= n or ca[l] + cb[l] == 0:
            scores[l] = None
        else:
            scores[l] = float(2.0 * inter[l] / (ca[l] + cb[l]))
    defined = [v for v in scores.values() if v is not None]
    macro = float(np.mean(defined)) if defined else None
    return scores, macro
