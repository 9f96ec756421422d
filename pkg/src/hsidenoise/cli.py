"""Command-line surface tying the library together.

Subcommands cover the whole workflow: synthesize a clean cube (gen),
add noise (corrupt), fit a model (train), run it over a cube in tiles
(denoise), score a result (eval), time the complexity kernels (bench)
and run the finite-difference gradient suite (gradcheck).

Every command that writes an output also drops a ``*.config.txt``
provenance file beside it with the fully resolved parameters, and the
report-producing commands (train, eval, bench) render a PNG next to
each CSV unless ``--no-plot`` is given.

Exit codes: 0 success, 1 usage or configuration error, 2 data error
(missing or malformed files, shape mismatches), 3 numeric failure.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

import numpy as np

from .cubeio import (RunConfig, format_keyvalue_text, load_checkpoint,
                     parse_keyvalue_text, read_cube, save_checkpoint,
                     write_cube)
from .errors import ConfigError, DataError, NumericError, ShapeError
from .metrics import MetricsReport
from .model import DenoiserModel, denoise_cube
from .noise import NOISE_CASES, NoiseSpec, corrupt, generate_synthetic_clean


class _Parser(argparse.ArgumentParser):
    # usage problems are exit code 1, not argparse's default 2
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        raise SystemExit(1)


def _config_sidecar(out_path) -> Path:
    p = Path(out_path)
    return p.with_name(p.stem + ".config.txt")


def _write_provenance(path, mapping: dict) -> None:
    lines = []
    for k, v in mapping.items():
        if isinstance(v, bool):
            v = "true" if v else "false"
        lines.append(f"{k}={v}")
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def _cmd_gen(args) -> int:
    cube = generate_synthetic_clean(args.bands, args.height, args.width,
                                    args.rank, seed=args.seed,
                                    constant_spectrum=args.constant_spectrum)
    write_cube(args.out, cube)
    _write_provenance(_config_sidecar(args.out), {
        "command": "gen", "bands": args.bands, "height": args.height,
        "width": args.width, "rank": args.rank, "seed": args.seed,
        "constant_spectrum": args.constant_spectrum, "out": args.out,
    })
    print(f"wrote {args.out} ({args.bands}x{args.height}x{args.width})")
    return 0


def _cmd_corrupt(args) -> int:
    clean = read_cube(args.inp)
    spec = NoiseSpec(case=args.case, seed=args.seed)
    noisy = corrupt(clean, spec)
    write_cube(args.out, noisy)
    prov = {"command": "corrupt", "input": args.inp, "out": args.out}
    for line in format_keyvalue_text(spec).strip().splitlines():
        key, _, value = line.partition("=")
        prov[f"noise.{key}"] = value
    _write_provenance(_config_sidecar(args.out), prov)
    print(f"wrote {args.out} (case {args.case}, seed {args.seed})")
    return 0


def _cmd_train(args) -> int:
    from .train import train

    cfg = RunConfig.load(args.config)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    if args.data is not None:
        paths = sorted(Path(args.data).glob("*.hsc"))
        if not paths:
            raise DataError(f"no .hsc cubes under {args.data}")
        cubes = [read_cube(p) for p in paths]
    else:
        cubes = [generate_synthetic_clean(cfg.model.bands, args.size,
                                          args.size, args.rank,
                                          seed=cfg.seed + i)
                 for i in range(args.cubes)]
    model = DenoiserModel(cfg.model)
    cfg.save(out_dir / "run.config.txt")
    log = train(model, cubes, cfg.train, out_dir=out_dir, quiet=args.quiet,
                base_noise=cfg.noise)
    save_checkpoint(out_dir / "final.hsdm", model)
    if not args.no_plot:
        from .plots import save_training_curves
        save_training_curves(log, out_dir / "training_curves.png")
    last = log.rows[-1]
    print(f"trained {len(log.rows)} epochs; loss {last[2]:.6g}; "
          f"val PSNR {last[4]:.2f} dB; outputs in {out_dir}")
    return 0


def _cmd_denoise(args) -> int:
    model = load_checkpoint(args.model)
    cube = read_cube(args.inp)
    tile = None if args.tile == 0 else args.tile
    result = denoise_cube(model, cube, tile=tile, overlap=args.overlap)
    write_cube(args.out, result)
    _write_provenance(_config_sidecar(args.out), {
        "command": "denoise", "model": args.model, "input": args.inp,
        "tile": args.tile, "overlap": args.overlap, "out": args.out,
    })
    print(f"wrote {args.out}")
    return 0


def _cmd_eval(args) -> int:
    clean = read_cube(args.clean)
    test = read_cube(args.test)
    report = MetricsReport.compute(test, clean)
    print(report)
    if args.out is not None:
        out = Path(args.out)
        out.write_text(report.to_csv(), encoding="utf-8")
        bands = out.with_name(out.stem + "_bands.csv")
        bands.write_text(report.per_band_csv(), encoding="utf-8")
        _write_provenance(_config_sidecar(out), {
            "command": "eval", "clean": args.clean, "test": args.test,
            "out": args.out,
        })
        if not args.no_plot:
            from .plots import save_band_metrics
            save_band_metrics(report, out.with_suffix(".png"))
    return 0


def _cmd_bench(args) -> int:
    from .bench import BenchConfig, run_bench

    if args.config is not None:
        text = Path(args.config).read_text(encoding="utf-8")
        cfg = parse_keyvalue_text(BenchConfig, text)
    else:
        cfg = BenchConfig()
    result = run_bench(cfg)
    if args.out is None:
        print(result.to_csv(), end="")
        return 0
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / "bench.csv").write_text(result.to_csv(), encoding="utf-8")
    (out_dir / "bench.config.txt").write_text(format_keyvalue_text(cfg),
                                              encoding="utf-8")
    if not args.no_plot:
        from .plots import save_bench_figure
        save_bench_figure(result, out_dir / "bench_times.png")
    for kernel, (slope, _, n) in result.slopes.items():
        print(f"{kernel}: slope {slope:.3f} over {n} points")
    return 0


def _cmd_gradcheck(args) -> int:
    from .gradcheck import run_all

    rows = run_all(seed=args.seed)
    worst = 0
    for name, err, tol in rows:
        ok = np.isfinite(err) and err < tol
        print(f"{'PASS' if ok else 'FAIL'} {name:28s} "
              f"rel_err {err:.3e} (tol {tol:g})")
        if not ok:
            worst = 3
    return worst


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="hsidenoise",
                     description="hyperspectral cube denoising toolkit")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen", help="write a synthetic low-rank clean cube")
    p.add_argument("--bands", type=int, required=True)
    p.add_argument("--height", type=int, required=True)
    p.add_argument("--width", type=int, required=True)
    p.add_argument("--rank", type=int, required=True)
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--constant-spectrum", action="store_true",
                   help="flat spectra: each component is one constant value")
    p.set_defaults(func=_cmd_gen)

    p = sub.add_parser("corrupt", help="apply a synthetic noise case")
    p.add_argument("--in", dest="inp", required=True)
    p.add_argument("--case", choices=NOISE_CASES, required=True)
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_corrupt)

    p = sub.add_parser("train", help="fit a model from a run config")
    p.add_argument("--config", required=True,
                   help="key=value run config (model.*, train.*, noise.*, seed)")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--data",
                   help="directory of .hsc training cubes; omit to synthesize")
    p.add_argument("--cubes", type=int, default=12,
                   help="synthesized cube count when --data is omitted")
    p.add_argument("--size", type=int, default=64,
                   help="synthesized cube height/width")
    p.add_argument("--rank", type=int, default=3,
                   help="synthesized cube spectral rank")
    p.add_argument("--quiet", action="store_true")
    p.add_argument("--no-plot", action="store_true")
    p.set_defaults(func=_cmd_train)

    p = sub.add_parser("denoise", help="run a checkpoint over a cube")
    p.add_argument("--model", required=True)
    p.add_argument("--in", dest="inp", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--tile", type=int, default=64,
                   help="tile size; 0 processes the cube in one pass")
    p.add_argument("--overlap", type=int, default=8)
    p.set_defaults(func=_cmd_denoise)

    p = sub.add_parser("eval", help="score a denoised cube against clean")
    p.add_argument("--clean", required=True)
    p.add_argument("--test", required=True)
    p.add_argument("--out", help="write summary CSV (+ per-band CSV and PNG)")
    p.add_argument("--no-plot", action="store_true")
    p.set_defaults(func=_cmd_eval)

    p = sub.add_parser("bench", help="time the complexity kernels")
    p.add_argument("--config", help="key=value BenchConfig overrides file")
    p.add_argument("--out", help="output directory; omit to print CSV")
    p.add_argument("--no-plot", action="store_true")
    p.set_defaults(func=_cmd_bench)

    p = sub.add_parser("gradcheck", help="finite-difference gradient suite")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=_cmd_gradcheck)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        code = exc.code
        return code if isinstance(code, int) else 0
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"hsidenoise: config error: {exc}", file=sys.stderr)
        return 1
    except (DataError, ShapeError, OSError) as exc:
        print(f"hsidenoise: data error: {exc}", file=sys.stderr)
        return 2
    except NumericError as exc:
        print(f"hsidenoise: numeric failure: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
