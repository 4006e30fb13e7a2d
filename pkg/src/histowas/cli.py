"""Command-line front end: extract, simulate, associate, plot.

Exit codes: 0 success (possibly with per-item diagnostics on stderr),
1 runtime or I/O error, 2 usage or configuration error.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import sys
import warnings
import zlib
from functools import partial
from pathlib import Path

import numpy as np

from . import assoc, features, io, simulate, svg
from ._parallel import pmap, worker_count
from .geometry import GeometryError, NoWindowError, estimate_window
from .ppstats import EdgeCorrection

EXIT_OK, EXIT_RUNTIME, EXIT_USAGE = 0, 1, 2

log = logging.getLogger("histowas")


class ConfigError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise ConfigError(f"{self.prog}: {message}")


def _positive_float(s: str) -> float:
    try:
        v = float(s)
    except ValueError:
        raise argparse.ArgumentTypeError(f"not a number: {s!r}") from None
    if not v > 0:
        raise argparse.ArgumentTypeError(f"must be positive: {s!r}")
    return v


def _probability(s: str) -> float:
    try:
        v = float(s)
    except ValueError:
        raise argparse.ArgumentTypeError(f"not a number: {s!r}") from None
    if not 0 < v < 1:
        raise argparse.ArgumentTypeError(f"must lie in (0, 1): {s!r}")
    return v


def _positive_int(s: str) -> int:
    try:
        v = int(s)
    except ValueError:
        raise argparse.ArgumentTypeError(f"not an integer: {s!r}") from None
    if v < 1:
        raise argparse.ArgumentTypeError(f"must be >= 1: {s!r}")
    return v


def _radii(s: str) -> list:
    try:
        vals = [float(t) for t in s.split(",") if t.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"bad radii list: {s!r}") from None
    if not vals or any(v <= 0 for v in vals) or any(b <= a for a, b in zip(vals, vals[1:])):
        raise argparse.ArgumentTypeError("radii must be positive and strictly increasing")
    return vals


def _dims(s: str) -> tuple:
    try:
        w, h = (float(t) for t in s.lower().split("x"))
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected WxH, got {s!r}") from None
    if w <= 0 or h <= 0:
        raise argparse.ArgumentTypeError("window sides must be positive")
    return (w, h)


CORRECTIONS = {
    "none": (EdgeCorrection.NONE, EdgeCorrection.NONE),
    "isotropic": (EdgeCorrection.ISOTROPIC, EdgeCorrection.NONE),
    "km": (EdgeCorrection.NONE, EdgeCorrection.KAPLAN_MEIER),
    "both": (EdgeCorrection.ISOTROPIC, EdgeCorrection.KAPLAN_MEIER),
}


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="histowas", description=__doc__.splitlines()[0])
    p.add_argument("--config", type=Path, help="JSON file whose keys mirror the long flags")
    p.add_argument("--threads", type=_positive_int, help="worker processes (default: $HISTOWAS_THREADS or 1)")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    e = sub.add_parser("extract", help="spatial feature matrix from a centroid table")
    e.add_argument("--centroids", type=Path, required=True)
    e.add_argument("--object-type")
    e.add_argument("--eps", type=_positive_float, default=500.0, help="DBSCAN radius in µm")
    e.add_argument("--min-samples", type=_positive_int, default=10)
    grid = e.add_mutually_exclusive_group()
    grid.add_argument("--radii", type=_radii, help="comma-separated radii in µm")
    grid.add_argument("--auto-grid", action="store_true", help="64 radii up to a quarter of sqrt(area) (default)")
    e.add_argument("--correction", choices=sorted(CORRECTIONS), default="both",
                   help="isotropic for K/L/g, km for G/F/J, both, or none")
    e.add_argument("--g-bandwidth", type=_positive_float)
    e.add_argument("--quadrats", type=_positive_int)
    e.add_argument("--seed", type=int, default=0)
    e.add_argument("--out", type=Path, required=True)

    s = sub.add_parser("simulate", help="CSR validation envelopes")
    s.add_argument("--lambda", dest="lam", type=_positive_float, default=1e-3)
    s.add_argument("--base", type=_dims, default=(5000.0, 5000.0))
    s.add_argument("--sub", type=_dims, default=(1000.0, 1000.0))
    s.add_argument("--n-samples", type=_positive_int, default=299)
    s.add_argument("--held-out", type=int, default=0, help="extra sub-samples scored against the envelopes")
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--out", type=Path, required=True)
    s.add_argument("--svg", type=Path)

    a = sub.add_parser("associate", help="mass univariate association study")
    a.add_argument("--features", type=Path, required=True)
    a.add_argument("--extra-features", type=Path, action="append", default=[])
    a.add_argument("--subject-map", type=Path, help="CSV observation_id,subject_id overriding the matrix")
    a.add_argument("--phenotype", type=Path, required=True)
    a.add_argument("--aggregate", choices=("mean", "median"), default="mean")
    a.add_argument("--alpha", type=_probability, default=0.05)
    a.add_argument("--fdr-q", type=_probability, default=0.05)
    a.add_argument("--out", type=Path, required=True)

    pl = sub.add_parser("plot", help="render SVG figures")
    psub = pl.add_subparsers(dest="plot_kind", required=True, parser_class=_Parser)
    for name in ("manhattan", "effect-size"):
        q = psub.add_parser(name)
        src = q.add_mutually_exclusive_group(required=True)
        src.add_argument("--results", type=Path)
        src.add_argument("--data", type=Path)
        q.add_argument("--alpha", type=_probability, default=0.05)
        q.add_argument("--threshold", choices=("bonferroni", "fdr", "nominal"), default="bonferroni")
        if name == "manhattan":
            q.add_argument("--top-below", type=int, default=25)
        q.add_argument("--data-out", type=Path, help="also write the plot data JSON")
        q.add_argument("--out", type=Path, required=True)
    q = psub.add_parser("envelope")
    q.add_argument("--data", type=Path, required=True)
    q.add_argument("--max-samples", type=int)
    q.add_argument("--out", type=Path, required=True)
    return p


def _config_tokens(cfg: dict, argv) -> list:
    tokens = []
    for key, value in cfg.items():
        flag = "--" + key.replace("_", "-")
        if any(a == flag or a.startswith(flag + "=") for a in argv):
            continue
        if value is True:
            tokens.append(flag)
        elif value is False or value is None:
            continue
        elif isinstance(value, list) and key == "radii":
            tokens += [flag, ",".join(str(v) for v in value)]
        elif isinstance(value, list):
            for v in value:
                tokens += [flag, str(v)]
        else:
            tokens += [flag, str(value)]
    return tokens


def _apply_config(parser, argv):
    """Parse ``argv`` with extra flags taken from ``--config``; explicit flags win.

    Config keys are long flag names (``min_samples`` or ``min-samples``);
    ``threads`` and ``verbose`` are global, the rest belong to the subcommand.
    """
    pre = argparse.ArgumentParser(add_help=False)
    pre.add_argument("--config", type=Path)
    known, _ = pre.parse_known_args(argv)
    if known.config is None:
        return parser.parse_args(argv)
    try:
        cfg = json.loads(known.config.read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read config {known.config}: {exc}") from None
    if not isinstance(cfg, dict):
        raise ConfigError("config must be a JSON object")
    glob = {k: cfg.pop(k) for k in ("threads", "verbose") if k in cfg}
    args = parser.parse_args(argv + _config_tokens(cfg, argv))
    if args.threads is None and "threads" in glob:
        args.threads = _positive_int(str(glob["threads"]))
    args.verbose = args.verbose or bool(glob.get("verbose"))
    return args


def _observation_seed(seed: int, slide: str) -> int:
    return int(np.random.SeedSequence([seed, zlib.crc32(slide.encode("utf-8"))]).generate_state(1)[0])


def _extract_one(item, eps, min_samples, fconfig):
    (slide, otype), pattern = item
    cfg = dataclasses.replace(fconfig, seed=_observation_seed(fconfig.seed, slide))
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        try:
            window = estimate_window(pattern, eps, min_samples)
        except NoWindowError:
            window = None
        except GeometryError as exc:
            window = None
            caught.append(warnings.WarningMessage(str(exc), UserWarning, "", 0))
        fv = features.extract_spatial_features(pattern, window, cfg, observation_id=slide)
    notes = [str(w.message) for w in caught] + fv.diagnostics
    return fv, notes


def cmd_extract(args) -> int:
    patterns = io.read_centroids(args.centroids, args.object_type)
    subjects = io.read_centroid_subjects(args.centroids)
    types = {k[1] for k in patterns}
    if args.object_type is None and len(types) > 1:
        raise ConfigError(f"several object types present {sorted(types)}; pass --object-type")
    pair_corr, nn_corr = CORRECTIONS[args.correction]
    fconfig = features.FeatureConfig(radii=args.radii, pair_correction=pair_corr, nn_correction=nn_corr,
                                     g_bandwidth=args.g_bandwidth, n_quadrats=args.quadrats, seed=args.seed)
    fn = partial(_extract_one, eps=args.eps, min_samples=args.min_samples, fconfig=fconfig)
    out = pmap(fn, list(patterns.items()), worker_count(args.threads))
    roster = fconfig.roster
    rows, obs, subj = [], [], []
    for fv, notes in out:
        for note in notes:
            print(f"[{fv.observation_id}] {note}", file=sys.stderr)
        obs.append(fv.observation_id)
        subj.append(subjects.get(fv.observation_id, fv.observation_id))
        rows.append(fv.as_row(roster))
    matrix = assoc.FeatureMatrix(obs, subj, [d.name for d in roster],
                                 np.array(rows, dtype=float).reshape(len(obs), len(roster)),
                                 {d.name: d.category for d in roster})
    io.write_feature_matrix(args.out, matrix, roster)
    print(f"extracted {len(roster)} features for {len(obs)} slides -> {args.out}", file=sys.stderr)
    return EXIT_OK


def cmd_simulate(args) -> int:
    try:
        cfg = simulate.CsrConfig(args.lam, args.base, args.sub, args.n_samples, args.seed)
    except simulate.SimulationError as exc:
        raise ConfigError(str(exc)) from None
    workers = worker_count(args.threads)
    result = simulate.run_validation(cfg, workers=workers)
    data = io.emit_envelope_data(result)
    if args.held_out > 0:
        held, skipped, _ = simulate.simulate_curves(cfg, result.radii, n_samples=args.held_out, stream=1,
                                                    workers=workers)
        data["held_out"] = {"n_samples": args.held_out, "skipped": skipped,
                            "coverage": {f: result.envelopes[f].coverage(held[f]) for f in held}}
    io.write_plot_data(args.out, data)
    for f, cov in result.coverage.items():
        line = f"{f}: coverage {cov:.4f}"
        if "held_out" in data:
            line += f", held-out {data['held_out']['coverage'][f]:.4f}"
        print(line)
    print(f"samples: {cfg.n_samples}, skipped: {result.skipped}")
    if args.svg:
        args.svg.write_text(svg.render_envelope(io.read_plot_data(args.out)), encoding="utf-8")
    return EXIT_OK


def cmd_associate(args) -> int:
    matrix = io.read_feature_matrix(args.features)
    for path in args.extra_features:
        matrix = matrix.merge(io.read_feature_matrix(path))
    if args.subject_map:
        mapping = io.read_subject_map(args.subject_map)
        missing = [o for o in matrix.observation_ids if o not in mapping]
        if missing:
            raise assoc.StudyError(f"observations missing from subject map: {missing}")
        matrix = assoc.FeatureMatrix(matrix.observation_ids, [mapping[o] for o in matrix.observation_ids],
                                     matrix.feature_names, matrix.values, matrix.categories)
    phenotype = io.read_phenotype(args.phenotype)
    config = assoc.StudyConfig(alpha=args.alpha, fdr_q=args.fdr_q, aggregation=args.aggregate)
    study = assoc.run_study(matrix, phenotype, config, workers=worker_count(args.threads))
    io.write_results(args.out, study.results)
    for s in study.skipped:
        print(f"skipped {s.feature}: {s.reason}", file=sys.stderr)
    crit = "none" if study.bh_critical_p is None else io.fmt_real(study.bh_critical_p)
    print(f"subjects={study.n_subjects} n_tests={study.n_tests} "
          f"bonferroni={io.fmt_real(study.bonferroni)} bh_critical_p={crit} "
          f"n_sig_bonferroni={sum(r.sig_bonferroni for r in study.results)} "
          f"n_sig_fdr={sum(r.sig_fdr for r in study.results)}")
    return EXIT_OK


def _write(path: Path, text: str) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write(text)


def cmd_plot(args) -> int:
    if args.plot_kind == "envelope":
        data = io.read_plot_data(args.data)
        if data["kind"] != "envelope":
            raise ConfigError(f"expected envelope plot data, got {data['kind']!r}")
        _write(args.out, svg.render_envelope(data, args.max_samples))
        return EXIT_OK
    kind = "manhattan" if args.plot_kind == "manhattan" else "effect_size"
    if args.data:
        data = io.read_plot_data(args.data)
        if data["kind"] != kind:
            raise ConfigError(f"expected {kind} plot data, got {data['kind']!r}")
    else:
        results = io.read_results(args.results)
        if kind == "manhattan":
            if not results:
                raise ConfigError("results file is empty")
            data = io.emit_manhattan_data(results, args.alpha, len(results), args.top_below, args.threshold)
        else:
            data = io.emit_effect_size_data(results, args.alpha, len(results), args.threshold)
    if args.data_out:
        io.write_plot_data(args.data_out, data)
    _write(args.out, svg.render(data))
    return EXIT_OK


COMMANDS = {"extract": cmd_extract, "simulate": cmd_simulate, "associate": cmd_associate, "plot": cmd_plot}


def main(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    try:
        args = _apply_config(parser, argv)
    except ConfigError as exc:
        print(exc, file=sys.stderr)
        return EXIT_USAGE
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    try:
        return COMMANDS[args.command](args)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except assoc.SubjectMismatchError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    except (OSError, io.FormatError, assoc.StudyError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
