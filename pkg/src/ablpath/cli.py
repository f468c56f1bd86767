"""Command-line entry point.

Exit codes: 0 success, 1 a requested check failed, 2 bad arguments,
3 unreadable or invalid input files, 4 optimisation or training aborted.
"""
from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np

from . import io
from .classifier import GradientUnavailable, TrainingConfig, TrainingFailure, train_reference_model
from .constraints import validate_path
from .core import DimensionError, Image, ParameterError, blend
from .corpus import generate_blob_corpus
from .harness import (
    DEFAULT_BASELINE,
    MethodConfig,
    make_brittle_model,
    parse_baseline,
    pointing_game,
    run_suite,
    summary_markdown,
    sweep_regularisation,
    write_sweep_csv,
)
from .optimizer import OptimizationAborted, OptimizerConfig, optimize
from .reduction import (
    apply_boundary_window,
    argmax_point,
    reduce_average,
    reduce_class_transition,
    reduce_contrastive_average,
)
from .scores import integrated_gradients

log = logging.getLogger("ablpath")

EXIT_OK, EXIT_CHECK, EXIT_ARGS, EXIT_IO, EXIT_ABORT = 0, 1, 2, 3, 4
FILMSTRIP_FRAMES = 8


class CliError(Exception):
    def __init__(self, message, code):
        super().__init__(message)
        self.code = code


def _global_flags(parser, suppress: bool):
    # suppressed copies live on the subcommands; the formatter cannot show their defaults
    d = (lambda v: argparse.SUPPRESS) if suppress else (lambda v: v)
    say = (lambda text, default: f"{text} (default: {default})") if suppress else (lambda text, default: text)
    parser.add_argument("--config", default=d(None), help=say("JSON file of flag defaults", "none"))
    parser.add_argument("--seed", type=int, default=d(0), help=say("seed for all randomness", 0))
    parser.add_argument("--workers", type=int, default=d(1), help=say("worker threads", 1))
    parser.add_argument("--output-dir", default=d("out"), help=say("output directory", "out"))
    parser.add_argument("--verbose", "-v", action="store_true", default=d(False), help="debug logging")


def _optimizer_flags(p):
    d = OptimizerConfig()
    p.add_argument("--objective", default=d.objective, choices=("retain", "dissipate", "contrastive", "straddle"))
    p.add_argument("--T", type=int, default=d.T, help="time samples per path")
    p.add_argument("--max-steps", type=int, default=d.max_steps)
    p.add_argument("--step-linf", type=float, default=d.step_linf)
    p.add_argument("--sigma-regu-blur", type=float, default=d.sigma_regu_blur)
    p.add_argument("--zeta-sat", type=float, default=d.zeta_sat)
    p.add_argument("--zeta-pinch", type=float, default=d.zeta_pinch)
    p.add_argument("--saturation-stop", type=float, default=d.saturation_stop)


def _sample_flags(p):
    p.add_argument("--image", required=True, help="input image (.png or .fgrid)")
    p.add_argument("--model", required=True, help="model JSON file")
    p.add_argument("--target", type=int, required=True, help="target class index")
    p.add_argument("--baseline", default=DEFAULT_BASELINE,
                   help="baseline file, or blur:SIGMA, or const:VALUE")


def build_parser() -> tuple[argparse.ArgumentParser, dict]:
    fmt = argparse.ArgumentDefaultsHelpFormatter
    parser = argparse.ArgumentParser(prog="ablpath", description="Ablation-path saliency tools.",
                                     formatter_class=fmt)
    _global_flags(parser, suppress=False)
    common = argparse.ArgumentParser(add_help=False)
    _global_flags(common, suppress=True)
    sub = parser.add_subparsers(dest="command", required=True)
    subs = {}

    def add(name, func, help):
        p = sub.add_parser(name, parents=[common], help=help, formatter_class=fmt)
        p.set_defaults(func=func)
        subs[name] = p
        return p

    p = add("gen-corpus", cmd_gen_corpus, "generate a synthetic annotated corpus")
    p.add_argument("--n", type=int, default=100)
    p.add_argument("--height", type=int, default=32)
    p.add_argument("--width", type=int, default=32)
    p.add_argument("--classes", type=int, default=3)

    p = add("train", cmd_train, "train the reference classifier")
    t = TrainingConfig()
    p.add_argument("--corpus", default=None, help="corpus manifest; generated from --seed when absent")
    p.add_argument("--n", type=int, default=12000, help="corpus size when generating")
    p.add_argument("--classes", type=int, default=3)
    p.add_argument("--hidden", type=int, default=t.hidden)
    p.add_argument("--activation", default=t.activation, choices=("tanh", "softplus"))
    p.add_argument("--learning-rate", type=float, default=t.learning_rate)
    p.add_argument("--momentum", type=float, default=t.momentum)
    p.add_argument("--batch-size", type=int, default=t.batch_size)
    p.add_argument("--max-epochs", type=int, default=t.max_epochs)
    p.add_argument("--target-accuracy", type=float, default=t.target_accuracy)
    p.add_argument("--min-accuracy", type=float, default=t.min_accuracy)

    p = add("optimize", cmd_optimize, "optimise an ablation path for one image")
    _sample_flags(p)
    _optimizer_flags(p)
    p.add_argument("--snapshot-every", type=int, default=0, help="write path snapshots every N iterations")
    p.add_argument("--filmstrip-frames", type=int, default=FILMSTRIP_FRAMES)

    p = add("reduce", cmd_reduce, "reduce stored path(s) to a heatmap")
    p.add_argument("--path", nargs="+", required=True, help="path .fgrid file(s); two for contrastive-average")
    p.add_argument("--method", default="average", choices=("average", "class-transition", "contrastive-average"))
    p.add_argument("--window", action="store_true", help="apply the boundary window")
    p.add_argument("--image", default=None, help="input image (class-transition only)")
    p.add_argument("--model", default=None, help="model file (class-transition only)")
    p.add_argument("--target", type=int, default=None, help="target class (class-transition only)")
    p.add_argument("--baseline", default=DEFAULT_BASELINE)

    p = add("ig", cmd_ig, "integrated gradients and its completeness check")
    _sample_flags(p)
    p.add_argument("--steps", type=int, default=256)
    p.add_argument("--tolerance", type=float, default=1e-2, help="allowed completeness residual")

    p = add("pointing", cmd_pointing, "pointing game over a corpus or a suite manifest")
    p.add_argument("--manifest", default=None, help="suite manifest JSON (rows of method configs)")
    p.add_argument("--corpus", default=None, help="corpus manifest")
    p.add_argument("--model", default=None, help="model file")
    p.add_argument("--method", default="ablation", choices=("ablation", "linear", "center", "ig", "oracle"))
    p.add_argument("--reduction", default="contrastive_average",
                   choices=("contrastive_average", "average", "class_transition"))
    p.add_argument("--postproc", default="none", choices=("none", "window"))
    p.add_argument("--baseline", default=DEFAULT_BASELINE)
    _optimizer_flags(p)

    p = add("sweep", cmd_sweep, "regularisation sweep with score histograms")
    p.add_argument("--corpus", required=True)
    p.add_argument("--model", required=True)
    p.add_argument("--sigmas", default="0,1,2,4", help="comma-separated sigma_regu_blur values")
    p.add_argument("--brittle", type=float, default=0.0,
                   help="if > 0, add random first-layer weights of this amplitude to the model")
    p.add_argument("--baseline", default=DEFAULT_BASELINE)
    _optimizer_flags(p)
    for sp in [parser, *subs.values()]:
        for a in sp._actions:
            if a.help is None and a.option_strings and a.nargs != 0:
                a.help = "default: %(default)s"
    return parser, subs


def parse_args(argv=None) -> argparse.Namespace:
    parser, subs = build_parser()
    args = parser.parse_args(argv)
    if args.config:
        try:
            cfg = json.loads(Path(args.config).read_text())
        except OSError as exc:
            raise CliError(f"cannot read config {args.config}: {exc}", EXIT_IO) from exc
        except json.JSONDecodeError as exc:
            raise CliError(f"config {args.config} is not valid JSON: {exc}", EXIT_ARGS) from exc
        sp = subs[args.command]
        known = {a.dest for a in sp._actions}
        cfg = {k.replace("-", "_"): v for k, v in cfg.items()}
        unknown = set(cfg) - known
        if unknown:
            raise CliError(f"config {args.config}: unknown keys {sorted(unknown)}", EXIT_ARGS)
        sp.set_defaults(**cfg)
        parser.set_defaults(**{k: v for k, v in cfg.items() if k in ("seed", "workers", "output_dir")})
        args = parser.parse_args(argv)
    return args


def _echo_config(args, out: Path):
    cfg = {k: v for k, v in sorted(vars(args).items()) if k not in ("func", "verbose")}
    io.write_json(out / "effective_config.json", cfg)


def _load_model(path):
    if not path:
        raise CliError("a --model file is required", EXIT_ARGS)
    if not Path(path).exists():
        raise CliError(f"model file not found: {path}", EXIT_IO)
    return io.load_model(path)


def _load_input(path) -> Image:
    if not Path(path).exists():
        raise CliError(f"image file not found: {path}", EXIT_IO)
    return io.load_image(path)


def _baseline(spec: str, image: Image) -> Image:
    if spec.startswith(("blur:", "const:")):
        return parse_baseline(spec, image)
    if not Path(spec).exists():
        raise CliError(f"baseline file not found: {spec}", EXIT_IO)
    b = io.load_image(spec)
    if b.shape != image.shape:
        raise CliError(f"baseline {b.shape} does not match image {image.shape}", EXIT_ARGS)
    return b


def _optimizer_config(args) -> OptimizerConfig:
    return OptimizerConfig(
        objective=args.objective, T=args.T, max_steps=args.max_steps, step_linf=args.step_linf,
        sigma_regu_blur=args.sigma_regu_blur, zeta_sat=args.zeta_sat, zeta_pinch=args.zeta_pinch,
        saturation_stop=args.saturation_stop, seed=args.seed,
    )


def cmd_gen_corpus(args, out: Path) -> int:
    samples = generate_blob_corpus(args.seed, args.n, args.height, args.width, args.classes)
    manifest = io.save_corpus(out, samples)
    n_diff = sum(s.difficulty == "difficult" for s in samples)
    print(f"wrote {len(samples)} samples ({n_diff} difficult) to {manifest}")
    return EXIT_OK


def cmd_train(args, out: Path) -> int:
    if args.corpus:
        corpus = io.load_corpus(args.corpus)
    else:
        corpus = generate_blob_corpus(args.seed, args.n, K=args.classes)
    cfg = TrainingConfig(
        hidden=args.hidden, activation=args.activation, learning_rate=args.learning_rate,
        momentum=args.momentum, batch_size=args.batch_size, max_epochs=args.max_epochs,
        target_accuracy=args.target_accuracy, min_accuracy=args.min_accuracy, seed=args.seed,
    )
    model, report = train_reference_model(corpus, cfg)
    io.save_model(out / "model.json", model)
    io.write_json(out / "training.json", {"accuracy": report.accuracy, "epochs": report.epochs,
                                          "history": report.history})
    print(f"validation accuracy {report.accuracy:.4f} after {report.epochs} epochs; model at {out / 'model.json'}")
    return EXIT_OK


def filmstrip(paths, xi: Image, beta: Image, frames: int) -> np.ndarray:
    """Interpolated images at ``frames`` evenly spaced times, one row per path."""
    T = paths[0].T
    ks = np.unique(np.round(np.linspace(0, T - 1, frames)).astype(int))
    H, W, C = xi.shape
    rows = []
    for p in paths:
        imgs = blend(p.masks[ks], xi.values, beta.values)
        row = np.ones((H, len(ks) * (W + 1) - 1, C))
        for j, im in enumerate(imgs):
            row[:, j * (W + 1) : j * (W + 1) + W] = im
        rows.append(row)
    sep = np.ones((1, rows[0].shape[1], C))
    strip = rows[0]
    for r in rows[1:]:
        strip = np.concatenate([strip, sep, r], axis=0)
    return strip


def cmd_optimize(args, out: Path) -> int:
    model = _load_model(args.model)
    xi = _load_input(args.image)
    beta = _baseline(args.baseline, xi)
    cfg = _optimizer_config(args)
    try:
        trace = optimize(model, xi, beta, args.target, cfg, snapshot_every=args.snapshot_every)
    except OptimizationAborted as exc:
        io.write_json(out / "trace.json", exc.trace.to_dict())
        raise CliError(f"optimisation aborted: {exc}", EXIT_ABORT) from exc
    names = ["path_ret", "path_diss"] if len(trace.paths) == 2 else ["path"]
    for name, p in zip(names, trace.paths):
        io.save_path(out / f"{name}.fgrid", p)
    for it, masks in sorted(trace.snapshots.items()):
        for name, m in zip(names, masks):
            io.write_fgrid(out / f"{name}.iter{it:03d}.fgrid", m[..., None])
    io.write_fgrid(out / "baseline.fgrid", beta.values)
    io.write_json(out / "trace.json", trace.to_dict())
    with open(out / "per_step_F.csv", "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["k", "t"] + [f"F_{n}" for n in names])
        probs = [model.predict_proba(blend(p.masks, xi.values, beta.values))[:, args.target] for p in trace.paths]
        for k, t in enumerate(trace.paths[0].times):
            w.writerow([k, repr(float(t))] + [repr(float(pr[k])) for pr in probs])
    io.write_png(out / "filmstrip.png", filmstrip(trace.paths, xi, beta, args.filmstrip_frames))
    print(f"{cfg.objective}: score {trace.initial_score:.4f} -> {trace.final_score:.4f} "
          f"in {len(trace.records)} iterations ({trace.stop_reason})")
    return EXIT_OK


def cmd_reduce(args, out: Path) -> int:
    paths = []
    for p in args.path:
        if not Path(p).exists():
            raise CliError(f"path file not found: {p}", EXIT_IO)
        path = io.load_path(p)
        bad = validate_path(path, tol=1e-6)
        if bad:
            raise CliError(f"{p} is not an admissible path: {bad[0]}", EXIT_IO)
        paths.append(path)
    report: dict = {"method": args.method}
    if args.method == "contrastive-average":
        if len(paths) != 2:
            raise CliError("contrastive-average needs two --path files (retain, dissipate)", EXIT_ARGS)
        smap = reduce_contrastive_average(paths[0], paths[1])
    elif len(paths) != 1:
        raise CliError(f"{args.method} takes one --path file", EXIT_ARGS)
    elif args.method == "average":
        smap = reduce_average(paths[0])
    else:
        if args.image is None or args.target is None:
            raise CliError("class-transition needs --image, --model and --target", EXIT_ARGS)
        model = _load_model(args.model)
        xi = _load_input(args.image)
        beta = _baseline(args.baseline, xi)
        smap = reduce_class_transition(paths[0], model, xi, beta, args.target)
        report.update(k_star=smap.info["k_star"], rule=smap.info["rule"])
    if args.window:
        smap = apply_boundary_window(smap)
    am = argmax_point(smap)
    report.update(argmax=[am.row, am.col], tie=am.tie, orientation=smap.orientation, window=args.window)
    io.save_heatmap(out / "heatmap", smap)
    io.write_json(out / "reduce.json", report)
    print(json.dumps(report))
    return EXIT_OK


def cmd_ig(args, out: Path) -> int:
    model = _load_model(args.model)
    xi = _load_input(args.image)
    beta = _baseline(args.baseline, xi)
    ig = integrated_gradients(model, xi, beta, args.target, steps=args.steps)
    F_in = float(model.predict_proba(xi.values)[0, args.target])
    F_base = float(model.predict_proba(beta.values)[0, args.target])
    residual = abs(float(ig.values.sum()) - (F_base - F_in))
    ok = residual <= args.tolerance
    report = {"steps": args.steps, "sum": float(ig.values.sum()), "F_input": F_in, "F_baseline": F_base,
              "orientation": ig.orientation, "completeness_residual": residual,
              "tolerance": args.tolerance, "passed": ok}
    io.save_heatmap(out / "ig", ig)
    io.write_json(out / "ig.json", report)
    print(f"completeness residual {residual:.3e} ({'ok' if ok else 'FAILED'} at tolerance {args.tolerance:g})")
    return EXIT_OK if ok else EXIT_CHECK


def cmd_pointing(args, out: Path) -> int:
    if args.manifest:
        if not Path(args.manifest).exists():
            raise CliError(f"suite manifest not found: {args.manifest}", EXIT_IO)
        corpus = io.load_corpus(args.corpus) if args.corpus else None
        model = _load_model(args.model) if args.model else None
        results = run_suite(args.manifest, out, corpus=corpus, model=model, workers=args.workers)
        print(summary_markdown(results), end="")
        return EXIT_OK
    if not args.corpus:
        raise CliError("pointing needs --manifest or --corpus", EXIT_ARGS)
    corpus = io.load_corpus(args.corpus)
    needs_model = args.method not in ("center", "oracle")
    model = _load_model(args.model) if needs_model or args.model else None
    cfg = MethodConfig(
        method=args.method, objective=args.objective, reduction=args.reduction, postproc=args.postproc,
        baseline=args.baseline, T=args.T, max_steps=args.max_steps, step_linf=args.step_linf,
        sigma_regu_blur=args.sigma_regu_blur, zeta_sat=args.zeta_sat, zeta_pinch=args.zeta_pinch,
        saturation_stop=args.saturation_stop,
    )
    res = pointing_game(corpus, model, cfg, workers=args.workers)
    io.write_json(out / "pointing.json", res.to_dict())
    res.write_csv(out / "pointing.csv")
    (out / "summary.md").write_text(summary_markdown([res]))
    print(summary_markdown([res]), end="")
    return EXIT_OK


def cmd_sweep(args, out: Path) -> int:
    try:
        sigmas = [float(s) for s in args.sigmas.split(",") if s.strip()]
    except ValueError:
        raise CliError(f"bad --sigmas {args.sigmas!r}", EXIT_ARGS) from None
    corpus = io.load_corpus(args.corpus)
    model = _load_model(args.model)
    if args.brittle > 0:
        model = make_brittle_model(model, amplitude=args.brittle, seed=args.seed)
    reduction = "contrastive_average" if args.objective == "straddle" else "average"
    base = MethodConfig(objective=args.objective, reduction=reduction, baseline=args.baseline, T=args.T,
                        max_steps=args.max_steps, step_linf=args.step_linf, zeta_sat=args.zeta_sat,
                        zeta_pinch=args.zeta_pinch, saturation_stop=args.saturation_stop)
    records = sweep_regularisation(corpus, model, sigmas, args.objective, base=base, workers=args.workers)
    write_sweep_csv(out / "sweep.csv", records)
    io.write_json(out / "sweep.json", [
        {"name": r.name, "value": r.value, "histogram": r.histogram, "bin_edges": r.bin_edges,
         "all_pct": r.all_pct, "diff_pct": r.diff_pct, "mean_score": r.mean_score, "n_runs": r.n_runs,
         "top_mass_1.5": r.top_mass(1.5)}
        for r in records
    ])
    for r in records:
        print(f"sigma {r.value:g}: All {r.all_pct:.1f}%  mean score {r.mean_score:.3f}  "
              f"runs with score >= 1.5: {r.top_mass(1.5)}")
    return EXIT_OK


def main(argv=None) -> int:
    try:
        args = parse_args(argv)
    except CliError as exc:
        print(f"ablpath: error: {exc}", file=sys.stderr)
        return exc.code
    except SystemExit as exc:  # argparse usage errors and --help
        return int(exc.code) if isinstance(exc.code, int) else EXIT_ARGS
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.workers < 1:
            raise CliError(f"--workers must be >= 1, got {args.workers}", EXIT_ARGS)
        out = io.ensure_dir(args.output_dir)
        _echo_config(args, out)
        return args.func(args, out)
    except CliError as exc:
        print(f"ablpath: error: {exc}", file=sys.stderr)
        return exc.code
    except (ParameterError, DimensionError, GradientUnavailable, IndexError) as exc:
        print(f"ablpath: error: {exc}", file=sys.stderr)
        return EXIT_ARGS
    except (OSError, io.FormatError) as exc:
        print(f"ablpath: error: {exc}", file=sys.stderr)
        return EXIT_IO
    except (OptimizationAborted, TrainingFailure) as exc:
        print(f"ablpath: error: {exc}", file=sys.stderr)
        return EXIT_ABORT


if __name__ == "__main__":
    sys.exit(main())
