"""On-disk patch dataset: ``manifest.json`` beside ``records.bin``.

Each record in ``records.bin`` is, little-endian and with no padding:

=========  ===========  =========================================
offset     type         content
=========  ===========  =========================================
0          f4 x s^3     intensity
4 s^3      f4 x 3 s^3   coordinates; channel x, then y, then z
16 s^3     u2 x s^3     labels
18 s^3     i4 x 3       origin (i, j, k)
=========  ===========  =========================================

where ``s`` is the patch edge length.  Within each block voxels run x
fastest, then y, then z.  A record is therefore ``18 s^3 + 12`` bytes.
"""
from __future__ import annotations

import json
import os
from pathlib import Path
from typing import Iterable, Iterator

import numpy as np

from .errors import FormatError
from .patches import FeatureSample, PatchDataset

MANIFEST = "manifest.json"
RECORDS = "records.bin"


def record_nbytes(size: int) -> int:
    return 18 * size**3 + 12


def encode_record(rec: FeatureSample) -> bytes:
    s = rec.intensity.shape[0]
    if rec.intensity.shape != (s, s, s) or rec.coords.shape != (s, s, s, 3) or rec.labels.shape != (s, s, s):
        raise FormatError("record tensors do not share one cubic patch size", field="record")
    parts = [
        rec.intensity.astype("<f4").ravel(order="F").tobytes(),
        *(rec.coords[..., c].astype("<f4").ravel(order="F").tobytes() for c in range(3)),
        rec.labels.astype("<u2").ravel(order="F").tobytes(),
        np.asarray(rec.origin, dtype="<i4").tobytes(),
    ]
    return b"".join(parts)


def decode_record(buf: bytes | memoryview, size: int) -> FeatureSample:
    n = size**3
    shape = (size, size, size)
    inten = np.frombuffer(buf, "<f4", n, 0).reshape(shape, order="F").astype(np.float32)
    blocks = np.frombuffer(buf, "<f4", 3 * n, 4 * n).reshape(3, n)
    coords = np.stack([b.reshape(shape, order="F") for b in blocks], axis=-1).astype(np.float32)
    labels = np.frombuffer(buf, "<u2", n, 16 * n).reshape(shape, order="F").astype(np.uint16)
    origin = tuple(int(v) for v in np.frombuffer(buf, "<i4", 3, 18 * n))
    return FeatureSample(inten, np.ascontiguousarray(coords), labels, origin)


def export_dataset(ds: PatchDataset, path, records: Iterable[FeatureSample] | None = None) -> None:
    """Write ``ds`` into directory ``path``.

    ``records`` may be given as an iterator to stream records that were
    never collected in ``ds.records``; the manifest still describes them.
    """
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    source = ds.records if records is None else records
    written = 0
    tmp = path / (RECORDS + ".part")
    with open(tmp, "wb") as fh:
        for rec in source:
            if rec.intensity.shape[0] != ds.size:
                raise FormatError(
                    f"record {written} has size {rec.intensity.shape[0]}, manifest says {ds.size}", field="record"
                )
            if rec.labels.size and int(rec.labels.max()) >= ds.label_count:
                raise FormatError(f"record {written} has a label >= {ds.label_count}", field="record")
            fh.write(encode_record(rec))
            written += 1
    manifest = ds.manifest()
    manifest["count"] = written
    if len(ds.record_meta) not in (0, written):
        raise FormatError(f"{len(ds.record_meta)} record descriptors for {written} records", field="records")
    os.replace(tmp, path / RECORDS)
    (path / MANIFEST).write_text(json.dumps(manifest, indent=1, sort_keys=True) + "\n")


def read_manifest(path) -> dict:
    path = Path(path)
    try:
        manifest = json.loads((path / MANIFEST).read_text())
    except FileNotFoundError as exc:
        raise FormatError(f"{path}: no {MANIFEST}", field="manifest") from exc
    except json.JSONDecodeError as exc:
        raise FormatError(f"{path / MANIFEST}: {exc}", field="manifest") from exc
    for key in ("count", "size", "label_count", "channels"):
        if key not in manifest:
            raise FormatError(f"manifest lacks {key!r}", field=key)
    return manifest


def iter_records(path) -> Iterator[FeatureSample]:
    """Stream records without loading the whole file."""
    path = Path(path)
    manifest = read_manifest(path)
    size, count = int(manifest["size"]), int(manifest["count"])
    nb = record_nbytes(size)
    try:
        fh = open(path / RECORDS, "rb")
    except FileNotFoundError as exc:
        raise FormatError(f"{path}: no {RECORDS}", field="records") from exc
    with fh:
        total = os.fstat(fh.fileno()).st_size
        if total > count * nb:
            raise FormatError(
                f"{RECORDS} holds {total} bytes, more than {count} records of {nb} bytes", field="records"
            )
        for r in range(count):
            buf = fh.read(nb)
            if len(buf) != nb:
                raise FormatError(f"record {r} truncated ({len(buf)} of {nb} bytes)", field=f"record[{r}]")
            yield decode_record(buf, size)


def import_dataset(path) -> PatchDataset:
    manifest = read_manifest(path)
    records = list(iter_records(path))
    return PatchDataset(
        size=int(manifest["size"]),
        label_count=int(manifest["label_count"]),
        records=records,
        provenance=list(manifest.get("provenance", [])),
        record_meta=list(manifest.get("records", [])),
        warnings=list(manifest.get("warnings", [])),
        channels=tuple(manifest["channels"]),
    )
