"""Compare the compiled kernels with the numpy fallback, and time the I/O baselines.

    python3 benchmarks/bench_kernels.py [--repeat 3] [--skip-io]
"""
import argparse
import tempfile
import time
from pathlib import Path

import numpy as np

from seqforge import _backend
from seqforge.dataset_io import export_dataset, record_nbytes
from seqforge.fusion import fuse_probability_patches
from seqforge.patches import FeatureSample, PatchDataset, tile_origins
from seqforge.phantom import generate_phantom, three_shell_spec
from seqforge.sequences import PulseParams, synth_volume
from seqforge.tissue import fit_gmm3_samples
from seqforge.volume import Volume3, read_volume, write_volume


def best_of(fn, repeat):
    times = []
    for _ in range(repeat):
        t = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t)
    return min(times)


def kernel_cases():
    nmr, labels, _ = generate_phantom(three_shell_spec((128, 128, 128)))
    flash = PulseParams("flash", -1.0, 900.0, -5.0)
    mprage = PulseParams("mprage", 0.5, -1.2e-3, 1.5e-7)
    rng = np.random.default_rng(0)
    comp = rng.integers(0, 3, 1_000_000)
    x = rng.normal(np.array([20.0, 60.0, 100.0])[comp], 5.0)
    oh = np.eye(4, dtype=np.float32)[labels.data]
    patches = [(o, oh[o[0] : o[0] + 32, o[1] : o[1] + 32, o[2] : o[2] + 32]) for o in tile_origins(labels.dims, 32, 16)]
    return {
        "synth FLASH 128^3": lambda: synth_volume(nmr, flash),
        "synth MPRAGE 128^3": lambda: synth_volume(nmr, mprage),
        "GMM fit 1e6 samples": lambda: fit_gmm3_samples(x),
        "fuse 343 patches 32^3x4": lambda: fuse_probability_patches(patches, labels.dims, 4),
    }


def io_cases(root: Path):
    vol = Volume3(np.random.default_rng(1).random((256, 256, 256), dtype=np.float32))
    s = 32
    rec = FeatureSample(
        np.ones((s, s, s), np.float32), np.zeros((s, s, s, 3), np.float32), np.zeros((s, s, s), np.uint16), (0, 0, 0)
    )

    def rw():
        write_volume(vol, root / "big.nii")
        read_volume(root / "big.nii")

    def export():
        export_dataset(PatchDataset(s, 44), root / "ds", records=(rec for _ in range(10_000)))

    return {
        "write+read 256^3 float32": rw,
        f"export 1e4 patches 32^3 ({10_000 * record_nbytes(s) / 2**30:.2f} GiB)": export,
    }


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--repeat", type=int, default=3)
    ap.add_argument("--skip-io", action="store_true")
    args = ap.parse_args()

    names = sorted(_backend.BACKENDS)
    cases = kernel_cases()
    rows = []
    prev = _backend.NAME
    try:
        for label, fn in cases.items():
            t = {}
            for name in names:
                _backend.use(name)
                fn()
                t[name] = best_of(fn, args.repeat)
            rows.append((label, t))
    finally:
        _backend.use(prev)

    print(f"{'kernel':<28}" + "".join(f"{n:>12}" for n in names) + ("     speedup" if len(names) > 1 else ""))
    for label, t in rows:
        line = f"{label:<28}" + "".join(f"{t[n]:>11.3f}s" for n in names)
        if len(names) > 1:
            line += f"{t['python'] / t['compiled']:>11.1f}x"
        print(line)

    if not args.skip_io:
        with tempfile.TemporaryDirectory() as tmp:
            print()
            for label, fn in io_cases(Path(tmp)).items():
                print(f"{label:<44}{best_of(fn, args.repeat):>8.3f}s")


if __name__ == "__main__":
    main()
