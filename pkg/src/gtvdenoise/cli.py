"""Command line interface for the denoising pipeline.

Subcommands: noise, denoise, eval, inspect, bench.

Configuration precedence is flags > config file > built-in defaults. Config
files are flat "key = value" lines with '#' comments. Every run that produces
an output file also writes an effective-config echo next to it; re-running
with that echo as the config file reproduces the output bit-exactly.

Exit codes:
  0  success
  1  benchmark completed with at least one failed model
  2  usage or configuration error
  3  I/O failure (missing or unwritable file)
  4  cloud parse failure
  5  solver divergence
  6  degenerate geometry (too few points, collinear supports, ...)
"""

from __future__ import annotations

import argparse
import concurrent.futures
import logging
import sys
import time
from dataclasses import fields as dataclass_fields
from pathlib import Path

from .bipartite import BLUE, RED, approximate_bipartite, bipartition_lines
from .cloud import NoiseSpec, PointCloud, add_gaussian_noise, load_cloud, save_cloud
from .errors import (
    AdmmDivergenceError,
    CloudFormatError,
    CollinearityError,
    ConfigError,
    DegenerateCloudError,
    GtvDenoiseError,
    NoSupportPairError,
    UsageError,
)
from .graph import build_knn_graph, edge_list_lines
from .metrics import CSV_HEADER, evaluate
from .normals import estimate_normal_field, normal_field_lines
from .solver import DenoiseParams, denoise

EXIT_OK = 0
EXIT_BENCH_PARTIAL = 1
EXIT_USAGE = 2
EXIT_IO = 3
EXIT_PARSE = 4
EXIT_CONVERGENCE = 5
EXIT_DEGENERATE = 6

log = logging.getLogger("gtvdenoise")

_PARAM_FIELDS = {f.name: type(f.default) for f in dataclass_fields(DenoiseParams)}


def _coerce(key: str, text: str):
    """Convert a config-file string to the type of the matching parameter."""
    kind = _PARAM_FIELDS[key]
    text = text.strip()
    if kind is bool:
        low = text.lower()
        if low in ("1", "true", "yes", "on"):
            return True
        if low in ("0", "false", "no", "off"):
            return False
        raise ConfigError(f"expected a boolean for {key!r}, got {text!r}")
    try:
        return kind(text)
    except ValueError as exc:
        raise ConfigError(f"expected {kind.__name__} for {key!r}, got {text!r}") from exc


def parse_config_file(path: str) -> dict:
    """Read flat 'key = value' lines; '#' starts a comment; blank lines skipped."""
    values = {}
    try:
        raw = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read config file {path}: {exc}") from exc
    for lineno, line in enumerate(raw.splitlines(), start=1):
        body = line.split("#", 1)[0].strip()
        if not body:
            continue
        if "=" not in body:
            raise ConfigError(f"{path}:{lineno}: expected 'key = value', got {line!r}")
        key, _, value = body.partition("=")
        key = key.strip()
        value = value.strip()
        if not key or not value:
            raise ConfigError(f"{path}:{lineno}: empty key or value in {line!r}")
        values[key] = value
    return values


def build_params(
    config_path: str | None, args: argparse.Namespace
) -> tuple[DenoiseParams, dict]:
    """Merge defaults, config file, and CLI flags into DenoiseParams.

    Returns the parameters plus any config keys that are not solver
    parameters (sigma, seed, ...) for the subcommand to interpret.
    """
    merged = {}
    extra = {}
    if config_path:
        for key, text in parse_config_file(config_path).items():
            if key in _PARAM_FIELDS:
                merged[key] = _coerce(key, text)
            else:
                extra[key] = text
    for key in _PARAM_FIELDS:
        flag_value = getattr(args, key, None)
        if flag_value is not None:
            merged[key] = flag_value
    try:
        params = DenoiseParams(**merged)
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from exc
    return params, extra


def effective_config_text(params: DenoiseParams, extra: dict) -> str:
    lines = ["# effective configuration (rerun with --config <this file>)"]
    for key, value in params.as_dict().items():
        lines.append(f"{key} = {value}")
    for key, value in extra.items():
        lines.append(f"{key} = {value}")
    return "\n".join(lines) + "\n"


def _write_echo(path: Path, params: DenoiseParams, extra: dict) -> None:
    path.write_text(effective_config_text(params, extra), encoding="utf-8")
    log.info("effective config written to %s", path)


def _config_float(cfg: dict, key: str, fallback: float | None) -> float | None:
    if key in cfg:
        try:
            return float(cfg[key])
        except ValueError as exc:
            raise ConfigError(f"expected a number for {key!r}, got {cfg[key]!r}") from exc
    return fallback


def _config_int(cfg: dict, key: str, fallback: int | None) -> int | None:
    if key in cfg:
        try:
            return int(cfg[key])
        except ValueError as exc:
            raise ConfigError(f"expected an integer for {key!r}, got {cfg[key]!r}") from exc
    return fallback


# ---------------------------------------------------------------------------
# subcommands


def cmd_noise(args: argparse.Namespace) -> int:
    params, extra = build_params(args.config, args)
    sigma = args.sigma if args.sigma is not None else _config_float(extra, "sigma", None)
    if sigma is None:
        raise UsageError("noise requires --sigma (or 'sigma' in the config file)")
    seed = args.seed if args.seed is not None else _config_int(extra, "seed", 0)
    cloud = load_cloud(args.input, args.input_format)
    spec = NoiseSpec(sigma=sigma, seed=seed)
    noisy = add_gaussian_noise(cloud, spec)
    save_cloud(noisy, args.output, args.output_format)
    delta = noisy.positions - cloud.positions
    std = delta.std(axis=0, ddof=0)
    print(f"noise std per axis: {std[0]:.6g} {std[1]:.6g} {std[2]:.6g}")
    extra_echo = dict(extra)
    extra_echo.update({"sigma": repr(sigma), "seed": str(seed)})
    _write_echo(Path(args.output + ".config"), params, extra_echo)
    return EXIT_OK


def cmd_denoise(args: argparse.Namespace) -> int:
    params, extra = build_params(args.config, args)
    cloud = load_cloud(args.input, args.input_format)
    log.info("denoising %d points from %s", cloud.n, args.input)
    t0 = time.perf_counter()
    result, diagnostics = denoise(cloud, params)
    elapsed = time.perf_counter() - t0
    save_cloud(result, args.output, args.output_format)
    diag_path = args.diagnostics or (args.output + ".diag")
    diagnostics.save(diag_path)
    _write_echo(Path(args.output + ".config"), params, extra)
    skipped = diagnostics.meta.get("no_support_pair_events", 0)
    if skipped:
        log.warning("%d node passes had no valid support pair and kept their "
                    "positions", skipped)
    finals = [diagnostics.rows_for(lbl)[-1][2] for lbl in diagnostics.pass_labels()]
    worst = max(finals) if finals else 0.0
    log.info("done: %d passes, worst final primal residual %.3e, %.2fs",
             len(diagnostics.pass_labels()), worst, elapsed)
    return EXIT_OK


def cmd_eval(args: argparse.Namespace) -> int:
    ground = load_cloud(args.ground, None)
    test = load_cloud(args.test, None)
    t0 = time.perf_counter()
    report = evaluate(ground, test, k=args.k)
    runtime = time.perf_counter() - t0
    model = args.model or Path(args.test).stem
    print(report.to_table())
    print(CSV_HEADER)
    print(report.csv_row(model, args.sigma, runtime))
    return EXIT_OK


def cmd_inspect(args: argparse.Namespace) -> int:
    params, _ = build_params(args.config, args)
    cloud = load_cloud(args.input, args.input_format)
    graph = build_knn_graph(cloud, params.k, params.sigma_p)
    if args.what == "graph":
        lines = edge_list_lines(graph)
    else:
        part = approximate_bipartite(
            graph, params.delta, params.start_node, params.view_hops
        )
        if args.what == "bipartition":
            lines = bipartition_lines(part)
        else:  # normals
            cls = RED if args.which == "red" else BLUE
            field, failed = estimate_normal_field(
                cloud.positions, graph, part.assignment, cls, params.k,
                params.collinearity_tol,
            )
            if failed:
                log.warning("%d nodes had no valid support pair", len(failed))
            lines = normal_field_lines(field)
    out = sys.stdout if args.output is None else open(args.output, "w", encoding="utf-8")
    try:
        for line in lines:
            out.write(line + "\n")
    finally:
        if out is not sys.stdout:
            out.close()
    return EXIT_OK


def _bench_one(model_path: Path, sigma: float, seed: int, params: DenoiseParams,
               out_dir: Path) -> dict:
    """Noise + denoise + evaluate one model at one sigma. Returns a result row."""
    clean = load_cloud(str(model_path))
    noisy = add_gaussian_noise(clean, NoiseSpec(sigma=sigma, seed=seed))
    t0 = time.perf_counter()
    denoised, diagnostics = denoise(noisy, params)
    runtime = time.perf_counter() - t0
    stem = model_path.stem
    tag = f"{stem}_s{sigma:g}"
    save_cloud(noisy, str(out_dir / f"{tag}_noisy.xyz"))
    save_cloud(denoised, str(out_dir / f"{tag}_denoised.xyz"))
    diagnostics.save(str(out_dir / f"{tag}.diag"))
    noisy_report = evaluate(clean, noisy, k=params.k)
    denoised_report = evaluate(clean, denoised, k=params.k)
    return {
        "model": stem,
        "sigma": sigma,
        "seed": seed,
        "c2c_noisy": noisy_report.c2c_mean_dist.symmetric,
        "c2c_denoised": denoised_report.c2c_mean_dist.symmetric,
        "c2p_noisy": noisy_report.c2p_mean_sq.symmetric,
        "c2p_denoised": denoised_report.c2p_mean_sq.symmetric,
        "runtime_s": runtime,
    }


def cmd_bench(args: argparse.Namespace) -> int:
    params, extra = build_params(args.config, args)
    model_dir = Path(args.model_dir)
    models = sorted(
        p for p in model_dir.iterdir()
        if p.suffix.lower() in (".xyz", ".ply")
    ) if model_dir.is_dir() else []
    if not models:
        raise UsageError(f"no .xyz or .ply models found in {args.model_dir}")
    sigmas = [float(s) for s in args.sigmas.split(",") if s.strip()]
    if not sigmas:
        raise UsageError("--sigmas must list at least one value")
    out_dir = Path(args.output_dir)
    out_dir.mkdir(parents=True, exist_ok=True)

    gamma_given = args.gamma is not None or (args.config and
                  "gamma" in parse_config_file(args.config))
    jobs = []
    for model in models:
        for sigma in sigmas:
            run_params = params
            if not gamma_given and sigma >= 0.3:
                run_params = DenoiseParams(**{**params.as_dict(), "gamma": 0.1})
                log.info("auto-selected gamma=0.1 for %s at sigma=%g",
                         model.name, sigma)
            jobs.append((model, sigma, run_params))

    rows, failures = [], []

    def run(job):
        model, sigma, run_params = job
        return _bench_one(model, sigma, args.seed, run_params, out_dir)

    if args.workers > 1:
        with concurrent.futures.ThreadPoolExecutor(max_workers=args.workers) as pool:
            futures = {pool.submit(run, job): job for job in jobs}
            for fut in concurrent.futures.as_completed(futures):
                model, sigma, _ = futures[fut]
                try:
                    rows.append(fut.result())
                except Exception as exc:
                    log.error("model %s sigma %g failed: %s", model.name, sigma, exc)
                    failures.append((model.name, sigma))
    else:
        for job in jobs:
            model, sigma, _ = job
            try:
                rows.append(run(job))
            except Exception as exc:
                log.error("model %s sigma %g failed: %s", model.name, sigma, exc)
                failures.append((model.name, sigma))

    rows.sort(key=lambda r: (r["model"], r["sigma"]))
    header = (f"{'model':<20} {'sigma':>6} {'c2c noisy':>12} {'c2c denoised':>13} "
              f"{'c2p noisy':>12} {'c2p denoised':>13} {'time s':>8}")
    print(header)
    for r in rows:
        print(f"{r['model']:<20} {r['sigma']:>6g} {r['c2c_noisy']:>12.6f} "
              f"{r['c2c_denoised']:>13.6f} {r['c2p_noisy']:>12.6f} "
              f"{r['c2p_denoised']:>13.6f} {r['runtime_s']:>8.2f}")

    # Runtime is excluded from the CSV so identical seeds give identical bytes.
    csv_path = out_dir / "bench.csv"
    with open(csv_path, "w", encoding="utf-8") as fh:
        fh.write("model,sigma,seed,c2c_noisy,c2c_denoised,c2p_noisy,c2p_denoised\n")
        for r in rows:
            fh.write(f"{r['model']},{r['sigma']:g},{r['seed']},"
                     f"{r['c2c_noisy']:.9e},{r['c2c_denoised']:.9e},"
                     f"{r['c2p_noisy']:.9e},{r['c2p_denoised']:.9e}\n")
    log.info("benchmark CSV written to %s", csv_path)
    _write_echo(out_dir / "bench.config", params,
                {**extra, "sigmas": args.sigmas, "seed": str(args.seed)})
    return EXIT_BENCH_PARTIAL if failures else EXIT_OK


# ---------------------------------------------------------------------------
# argument parsing


def _add_param_flags(parser: argparse.ArgumentParser) -> None:
    group = parser.add_argument_group("solver parameters",
                                      "override config file and defaults")
    for name, kind in _PARAM_FIELDS.items():
        flag = "--" + name.replace("_", "-")
        if kind is bool:
            group.add_argument(flag, default=None,
                               action=argparse.BooleanOptionalAction)
        else:
            group.add_argument(flag, type=kind, default=None, metavar=kind.__name__)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="gtvdenoise",
        description="Point cloud denoising by graph-total-variation "
                    "regularization of surface normals.",
        epilog="eval CSV schema: " + CSV_HEADER + ". bench CSV schema: "
               "model,sigma,seed,c2c_noisy,c2c_denoised,c2p_noisy,c2p_denoised "
               "(runtime excluded so reruns are byte-identical).",
    )
    parser.add_argument("-v", "--verbose", action="count", default=0,
                        help="increase log detail (repeatable)")
    parser.add_argument("-q", "--quiet", action="store_true",
                        help="log warnings and errors only")
    sub = parser.add_subparsers(dest="command", required=True)

    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", default=None,
                        help="flat 'key = value' config file")

    p = sub.add_parser("noise", parents=[common],
                       help="add seeded Gaussian noise to a cloud")
    p.add_argument("input")
    p.add_argument("output")
    p.add_argument("--sigma", type=float, default=None,
                   help="noise standard deviation per axis (model units)")
    p.add_argument("--seed", type=int, default=None, help="RNG seed (default 0)")
    p.add_argument("--input-format", choices=("xyz", "ply"), default=None)
    p.add_argument("--output-format", choices=("xyz", "ply"), default=None)
    _add_param_flags(p)
    p.set_defaults(func=cmd_noise)

    p = sub.add_parser("denoise", parents=[common], help="denoise a cloud")
    p.add_argument("input")
    p.add_argument("output")
    p.add_argument("--diagnostics", default=None,
                   help="diagnostics path (default <output>.diag)")
    p.add_argument("--input-format", choices=("xyz", "ply"), default=None)
    p.add_argument("--output-format", choices=("xyz", "ply"), default=None)
    _add_param_flags(p)
    p.set_defaults(func=cmd_denoise)

    p = sub.add_parser("eval", parents=[common],
                       help="compare a cloud against ground truth")
    p.add_argument("ground")
    p.add_argument("test")
    p.add_argument("--k", type=int, default=8, help="plane-fit neighborhood size")
    p.add_argument("--model", default=None, help="label for the CSV row")
    p.add_argument("--sigma", type=float, default=0.0, help="label for the CSV row")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("inspect", parents=[common],
                       help="dump intermediate pipeline structures")
    p.add_argument("input")
    p.add_argument("what", choices=("graph", "bipartition", "normals"))
    p.add_argument("--which", choices=("red", "blue"), default="red",
                   help="node class for 'normals'")
    p.add_argument("--output", default=None, help="write here instead of stdout")
    p.add_argument("--input-format", choices=("xyz", "ply"), default=None)
    _add_param_flags(p)
    p.set_defaults(func=cmd_inspect)

    p = sub.add_parser("bench", parents=[common],
                       help="noise + denoise + evaluate a directory of models")
    p.add_argument("model_dir")
    p.add_argument("--sigmas", default="0.1",
                   help="comma-separated noise levels (default 0.1)")
    p.add_argument("--seed", type=int, default=0, help="noise seed for all runs")
    p.add_argument("--output-dir", default="bench_out")
    p.add_argument("--workers", type=int, default=1,
                   help="concurrent model runs (default 1)")
    _add_param_flags(p)
    p.set_defaults(func=cmd_bench)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    level = logging.WARNING if args.quiet else (
        logging.DEBUG if args.verbose else logging.INFO)
    logging.basicConfig(stream=sys.stderr, level=level,
                        format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except (UsageError, ConfigError) as exc:
        log.error("%s", exc)
        return EXIT_USAGE
    except CloudFormatError as exc:
        log.error("%s", exc)
        return EXIT_PARSE
    except AdmmDivergenceError as exc:
        log.error("%s", exc)
        return EXIT_CONVERGENCE
    except (DegenerateCloudError, CollinearityError, NoSupportPairError) as exc:
        log.error("%s", exc)
        return EXIT_DEGENERATE
    except GtvDenoiseError as exc:
        log.error("%s", exc)
        return EXIT_USAGE
    except OSError as exc:
        log.error("%s", exc)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
