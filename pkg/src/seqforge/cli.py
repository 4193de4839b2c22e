"""Command-line interface.

Exit codes: 0 success, 1 usage error, 2 data or format error, 3 numerical
error (ill-conditioning, degeneracy).
"""
from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .dataset_io import export_dataset
from .errors import SeqforgeError
from .estimation import estimate_from_volume
from .fusion import dice_overlap, fuse_probability_patches
from .patches import PatchSpec, ThetaSamplingSpec, augment_patches, sample_theta_space
from .phantom import PhantomSpec, acquire_phantom, generate_phantom, three_shell_spec
from .sequences import AcquisitionParams, PulseParams, SequenceKind, fit_theta_to_exact, synth_volume
from .tissue import GmmConfig, load_tissue_means
from .volume import Volume3, load_nmr_set, read_labels, read_volume, write_volume

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _dump(obj, path=None):
    text = json.dumps(obj, indent=2, sort_keys=True) + "\n"
    if path is None:
        sys.stdout.write(text)
    else:
        Path(path).write_text(text)


def _read_json(path):
    try:
        return json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise ValueError(f"{path}: invalid JSON ({exc})") from exc


def _load_theta(path) -> PulseParams:
    d = _read_json(path)
    # an estimation report carries theta under its own key
    return PulseParams.from_dict(d["theta"] if "theta" in d else d)


def _triple_paths(text: str):
    parts = [p for p in text.split(",") if p]
    if len(parts) != 3:
        raise UsageError("--nmr takes three comma-separated paths: rho,t1,t2")
    return parts


def _int_triple(text: str):
    try:
        vals = tuple(int(v) for v in text.replace("x", ",").split(","))
    except ValueError:
        raise UsageError(f"expected three integers, got {text!r}") from None
    if len(vals) != 3:
        raise UsageError(f"expected three integers, got {text!r}")
    return vals


def _threads(args) -> int:
    if args.threads is not None:
        return max(1, args.threads)
    env = os.environ.get("SEQFORGE_THREADS")
    try:
        return max(1, int(env)) if env else 1
    except ValueError:
        raise UsageError(f"SEQFORGE_THREADS must be an integer, got {env!r}") from None


def cmd_estimate(args) -> int:
    vol = read_volume(args.input)
    if not isinstance(vol, Volume3):
        raise UsageError(f"{args.input} is not a scalar image")
    means = load_tissue_means(args.nmr_means)
    cfg = GmmConfig(max_iters=args.max_iters, tol=args.tol)
    report = estimate_from_volume(vol, means, SequenceKind.parse(args.kind), cfg, args.mask)
    _dump(report.to_dict(), args.out)
    return EXIT_OK


def cmd_synthesize(args) -> int:
    nmr = load_nmr_set(*_triple_paths(args.nmr))
    theta = _load_theta(args.theta)
    mask = read_volume(args.mask) if args.mask else None
    write_volume(synth_volume(nmr, theta, mask), args.out)
    return EXIT_OK


def cmd_augment(args) -> int:
    nmr = load_nmr_set(*_triple_paths(args.nmr))
    coords = read_volume(args.coords)
    labels = read_labels(args.labels)
    spec = PatchSpec(args.size, args.stride, args.count, args.sampling, args.seed)
    if args.theta:
        thetas = [_load_theta(args.theta)]
    else:
        d = _read_json(args.theta_ranges)
        thetas = sample_theta_space(ThetaSamplingSpec.from_dict(d, n=args.count, seed=args.seed))
    ds = augment_patches(nmr, coords, labels, thetas, spec, threads=_threads(args))
    export_dataset(ds, args.out)
    return EXIT_OK


def cmd_phantom(args) -> int:
    if args.spec:
        raw = _read_json(args.spec)
        spec = PhantomSpec.from_dict(raw)
        has_seed = "seed" in raw
    else:
        spec = three_shell_spec(_int_triple(args.three_shell))
        has_seed = False
    noise = spec.noise_sigma_frac if args.noise is None else args.noise
    if args.seed is not None:
        seed, has_seed = args.seed, True
    else:
        seed = spec.seed
    if args.theta and noise > 0 and not has_seed:
        raise UsageError("a seed is required for noisy acquisition (spec 'seed' or --seed)")

    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    nmr, labels, coords = generate_phantom(spec)
    write_volume(nmr.rho, out / "rho.nii.gz")
    write_volume(nmr.t1, out / "t1.nii.gz")
    write_volume(nmr.t2, out / "t2.nii.gz")
    write_volume(labels, out / "labels.nii.gz")
    write_volume(coords, out / "coords.nii.gz")
    _dump(spec.to_dict(), out / "spec.json")
    if any(s.tissue for s in spec.structures):
        _dump(spec.tissue_means().to_dict(), out / "tissue_means.json")
    if args.theta:
        theta = _load_theta(args.theta)
        write_volume(acquire_phantom(nmr, theta, noise, seed), out / "image.nii.gz")
    return EXIT_OK


def cmd_fitcheck(args) -> int:
    try:
        lo, hi = (float(v) for v in args.t1_range.split(":"))
    except ValueError:
        raise UsageError(f"--t1-range must be lo:hi, got {args.t1_range!r}") from None
    acq = AcquisitionParams(tr=args.tr, te=args.te, flip_angle=args.alpha, gain=args.gain)
    report = fit_theta_to_exact(acq, SequenceKind.parse(args.kind), (lo, hi), args.t2, args.samples)
    _dump(report.to_dict(), args.out)
    if args.table:
        Path(args.table).write_text(report.table())
    return EXIT_OK


def _load_prob_patches(directory: Path):
    index = _read_json(directory / "index.json")
    L = int(index["label_count"])
    items = []
    for entry in index["patches"]:
        items.append((tuple(entry["origin"]), np.load(directory / entry["file"], allow_pickle=False)))
    return items, L, index


def cmd_fuse(args) -> int:
    items, L, index = _load_prob_patches(Path(args.patches))
    dims = _int_triple(args.dims) if args.dims else tuple(index["dims"])
    ref = read_volume(args.reference) if args.reference else None
    geo = dict(voxel_size=ref.voxel_size, affine=ref.affine) if ref is not None else {}
    _, hard = fuse_probability_patches(items, dims, L, **geo)
    write_volume(hard, args.out)
    return EXIT_OK


def cmd_dice(args) -> int:
    a, b = read_labels(args.a), read_labels(args.b)
    labels = [int(v) for v in args.labels.split(",")] if args.labels else None
    scores, macro = dice_overlap(a, b, labels)
    _dump({"per_label": {str(k): v for k, v in scores.items()}, "macro": macro}, args.out)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="seqforge", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=f"seqforge {__version__}")
    p.add_argument("--threads", type=int, default=None, help="worker cap (default: $SEQFORGE_THREADS or 1)")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    s = sub.add_parser("estimate", help="estimate theta from a T1-weighted image")
    s.add_argument("--input", required=True, help="NIfTI image")
    s.add_argument("--nmr-means", required=True, help="tissue NMR means JSON")
    s.add_argument("--kind", required=True, choices=["flash", "mprage"])
    s.add_argument("--mask", default="otsu", help="otsu or threshold:<t> (default: otsu)")
    s.add_argument("--max-iters", type=int, default=200, help="EM iteration cap")
    s.add_argument("--tol", type=float, default=1e-10, help="EM relative log-likelihood tolerance")
    s.add_argument("--out", help="report JSON path (default: stdout)")
    s.set_defaults(func=cmd_estimate)

    s = sub.add_parser("synthesize", help="synthesise a whole volume from NMR maps")
    s.add_argument("--nmr", required=True, help="rho.nii,t1.nii,t2.nii")
    s.add_argument("--theta", required=True, help="theta JSON (or an estimate report)")
    s.add_argument("--mask", help="optional mask NIfTI")
    s.add_argument("--out", required=True, help="output NIfTI")
    s.set_defaults(func=cmd_synthesize)

    s = sub.add_parser("augment", help="write an augmented patch dataset")
    s.add_argument("--nmr", required=True, help="rho.nii,t1.nii,t2.nii")
    s.add_argument("--coords", required=True, help="atlas coordinate NIfTI")
    s.add_argument("--labels", required=True, help="label NIfTI")
    g = s.add_mutually_exclusive_group(required=True)
    g.add_argument("--theta", help="theta JSON (or an estimate report)")
    g.add_argument("--theta-ranges", help="theta sampling ranges JSON")
    s.add_argument("--count", type=int, required=True, help="number of patches")
    s.add_argument("--seed", type=int, required=True, help="sampling seed")
    s.add_argument("--size", type=int, default=32, help="patch edge length (default 32)")
    s.add_argument("--stride", type=int, default=32, help="tiling stride for --sampling dense")
    s.add_argument(
        "--sampling", default="uniform-foreground", choices=["uniform-foreground", "label-balanced", "dense"]
    )
    s.add_argument("--out", required=True, help="output dataset directory")
    s.set_defaults(func=cmd_augment)

    s = sub.add_parser("phantom", help="generate a digital phantom")
    g = s.add_mutually_exclusive_group(required=True)
    g.add_argument("--spec", help="phantom spec JSON")
    g.add_argument("--three-shell", metavar="NX,NY,NZ", help="built-in CSF/GM/WM shell phantom")
    s.add_argument("--out-dir", required=True)
    s.add_argument("--theta", help="also acquire image.nii.gz under this theta")
    s.add_argument("--noise", type=float, help="noise sigma fraction (overrides spec)")
    s.add_argument("--seed", type=int, help="noise seed (overrides spec)")
    s.set_defaults(func=cmd_phantom)

    s = sub.add_parser("fitcheck", help="fit an approximation to the exact FLASH T1 curve")
    s.add_argument("--kind", default="flash", choices=["flash", "mprage"])
    s.add_argument("--tr", type=float, required=True, help="ms")
    s.add_argument("--te", type=float, required=True, help="ms")
    s.add_argument("--alpha", type=float, required=True, help="flip angle, degrees")
    s.add_argument("--gain", type=float, default=1.0)
    s.add_argument("--t1-range", default="500:3000", help="lo:hi in ms")
    s.add_argument("--t2", type=float, default=80.0, help="fixed T2 in ms (default 80)")
    s.add_argument("--samples", type=int, default=200)
    s.add_argument("--out", help="report JSON path (default: stdout)")
    s.add_argument("--table", help="write the sampled T1 / exact / approx table here")
    s.set_defaults(func=cmd_fitcheck)

    s = sub.add_parser("fuse", help="average overlapping probability patches into a segmentation")
    s.add_argument("--patches", required=True, help="directory with index.json and .npy patches")
    s.add_argument("--dims", help="NX,NY,NZ (default: from index.json)")
    s.add_argument("--reference", help="NIfTI whose geometry the output copies")
    s.add_argument("--out", required=True, help="output label NIfTI")
    s.set_defaults(func=cmd_fuse)

    s = sub.add_parser("dice", help="per-label Dice overlap of two label maps")
    s.add_argument("--a", required=True)
    s.add_argument("--b", required=True)
    s.add_argument("--labels", help="comma-separated labels to score")
    s.add_argument("--out", help="JSON path (default: stdout)")
    s.set_defaults(func=cmd_dice)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"seqforge {args.command}: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except SeqforgeError as exc:
        print(f"seqforge {args.command}: {type(exc).__name__}: {exc}", file=sys.stderr)
        return exc.exit_code
    except FileNotFoundError as exc:
        print(f"seqforge {args.command}: no such file: {exc.filename}", file=sys.stderr)
        return EXIT_DATA
    except (OSError, ValueError, KeyError, TypeError) as exc:
        print(f"seqforge {args.command}: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
