"""Delimited-text and JSON formats for centroids, matrices, phenotypes, results and plot data.

All text is UTF-8 with LF line endings. Reals are written with 17
significant digits so they read back bit-identical; ``NA`` is the only
missing-value token and empty cells are rejected.
"""

from __future__ import annotations

import csv
import json
import math
import warnings
from pathlib import Path
from typing import Iterable, Optional

import numpy as np

from .assoc import AssociationResult, FeatureMatrix, PhenotypeVector, benjamini_hochberg
from .features import CORRELATION, DENSITY, SPACING, FeatureDescriptor
from .geometry import PointPattern

NA = "NA"
SCHEMA_VERSION = 1
SPATIAL_CATEGORIES = (DENSITY, SPACING, CORRELATION)
CENTROID_COLUMNS = ("slide_id", "object_type", "x_um", "y_um")
OPTIONAL_CENTROID_COLUMNS = ("subject_id",)
RESULT_COLUMNS = ("feature", "category", "beta", "se", "ci_low", "ci_high", "p",
                  "neg_log10_p", "sig_bonferroni", "sig_fdr", "n_used")


class FormatError(ValueError):
    """Malformed input file; ``line`` is 1-based and counts the header."""

    def __init__(self, path, line: Optional[int], message: str):
        self.path = str(path)
        self.line = line
        where = f"{path}:{line}" if line is not None else str(path)
        super().__init__(f"{where}: {message}")


def fmt_real(x) -> str:
    x = float(x)
    if math.isnan(x):
        return NA
    return format(x, ".17g")


def _parse_real(token: str, path, line: int, column: str) -> float:
    if token == NA:
        return math.nan
    if token == "":
        raise FormatError(path, line, f"empty cell in column {column!r} (use {NA})")
    try:
        return float(token)
    except ValueError:
        raise FormatError(path, line, f"non-numeric value {token!r} in column {column!r}") from None


def _open_write(path):
    return open(path, "w", encoding="utf-8", newline="")


def _reader(path, delimiter=","):
    fh = open(path, encoding="utf-8", newline="")
    return fh, csv.reader(fh, delimiter=delimiter)


def _writer(fh, delimiter=","):
    return csv.writer(fh, delimiter=delimiter, lineterminator="\n")


# Centroids

def read_centroids(path, object_type: Optional[str] = None) -> dict:
    """PointPatterns keyed by (slide_id, object_type) in first-appearance order.

    Rows keep file order within a group. If a ``subject_id`` column is present
    the per-slide subject is exposed via :func:`read_centroid_subjects`.
    """
    patterns, _ = _read_centroid_table(path, object_type)
    return patterns


def read_centroid_subjects(path) -> dict:
    _, subjects = _read_centroid_table(path, None)
    return subjects


def _read_centroid_table(path, object_type):
    fh, rows = _reader(path)
    with fh:
        try:
            header = next(rows)
        except StopIteration:
            raise FormatError(path, 1, "missing header") from None
        missing = [c for c in CENTROID_COLUMNS if c not in header]
        if missing:
            raise FormatError(path, 1, f"missing required columns {missing}")
        if len(set(header)) != len(header):
            raise FormatError(path, 1, "duplicate column names")
        unknown = [c for c in header if c not in CENTROID_COLUMNS + OPTIONAL_CENTROID_COLUMNS]
        if unknown:
            warnings.warn(f"{path}: ignoring unknown columns {unknown}", stacklevel=3)
        col = {c: header.index(c) for c in header}
        groups: dict = {}
        subjects: dict = {}
        for lineno, row in enumerate(rows, start=2):
            if not row:
                continue
            if len(row) != len(header):
                raise FormatError(path, lineno, f"expected {len(header)} fields, got {len(row)}")
            slide = row[col["slide_id"]]
            otype = row[col["object_type"]]
            if not slide:
                raise FormatError(path, lineno, "empty slide_id")
            x = _parse_real(row[col["x_um"]], path, lineno, "x_um")
            y = _parse_real(row[col["y_um"]], path, lineno, "y_um")
            if not (math.isfinite(x) and math.isfinite(y)):
                raise FormatError(path, lineno, "coordinates must be finite")
            if "subject_id" in col:
                subj = row[col["subject_id"]]
                if subjects.setdefault(slide, subj) != subj:
                    raise FormatError(path, lineno, f"slide {slide!r} maps to several subjects")
            if object_type is not None and otype != object_type:
                continue
            groups.setdefault((slide, otype), []).append((x, y))
    patterns = {k: PointPattern(np.array(v), slide_id=k[0], object_type=k[1]) for k, v in groups.items()}
    return patterns, subjects


def write_centroids(path, patterns: Iterable[PointPattern], subjects: Optional[dict] = None) -> None:
    with _open_write(path) as fh:
        w = _writer(fh)
        cols = list(CENTROID_COLUMNS) + (["subject_id"] if subjects else [])
        w.writerow(cols)
        for p in patterns:
            for x, y in p.points:
                row = [p.slide_id, p.object_type, fmt_real(x), fmt_real(y)]
                if subjects:
                    row.append(subjects[p.slide_id])
                w.writerow(row)


# Feature matrices

def metadata_path(path) -> Path:
    p = Path(path)
    return p.with_name(p.stem + ".meta" + p.suffix)


def write_feature_matrix(path, matrix: FeatureMatrix, descriptors: Optional[Iterable[FeatureDescriptor]] = None) -> None:
    """Matrix CSV plus a companion ``<stem>.meta<suffix>`` (feature, category, source)."""
    with _open_write(path) as fh:
        w = _writer(fh)
        w.writerow(["observation_id", "subject_id", *matrix.feature_names])
        for o, s, row in zip(matrix.observation_ids, matrix.subject_ids, matrix.values):
            w.writerow([o, s, *(fmt_real(v) for v in row)])
    source = {d.name: d.source_function for d in descriptors or ()}
    with _open_write(metadata_path(path)) as fh:
        w = _writer(fh)
        w.writerow(["feature", "category", "source"])
        for name in matrix.feature_names:
            w.writerow([name, matrix.category(name) or NA, source.get(name, NA)])


def read_feature_matrix(path, default_category: str = "Object-level") -> FeatureMatrix:
    """Read a matrix; categories come from the metadata file when it exists."""
    fh, rows = _reader(path)
    with fh:
        try:
            header = next(rows)
        except StopIteration:
            raise FormatError(path, 1, "missing header") from None
        if header[:2] != ["observation_id", "subject_id"]:
            raise FormatError(path, 1, "first columns must be observation_id, subject_id")
        names = header[2:]
        if len(set(names)) != len(names):
            raise FormatError(path, 1, "duplicate feature names")
        obs, subj, vals = [], [], []
        seen = set()
        for lineno, row in enumerate(rows, start=2):
            if not row:
                continue
            if len(row) != len(header):
                raise FormatError(path, lineno, f"expected {len(header)} fields, got {len(row)}")
            if not row[0] or not row[1]:
                raise FormatError(path, lineno, "empty observation or subject id")
            if row[0] in seen:
                raise FormatError(path, lineno, f"duplicate observation_id {row[0]!r}")
            seen.add(row[0])
            obs.append(row[0])
            subj.append(row[1])
            vals.append([_parse_real(t, path, lineno, c) for t, c in zip(row[2:], names)])
    categories = {n: default_category for n in names}
    meta = metadata_path(path)
    if meta.exists():
        fh, mrows = _reader(meta)
        with fh:
            mheader = next(mrows, None)
            if not mheader or mheader[:2] != ["feature", "category"]:
                raise FormatError(meta, 1, "metadata header must start with feature, category")
            for row in mrows:
                if row and row[0] in categories and row[1] != NA:
                    categories[row[0]] = row[1]
    values = np.array(vals, dtype=float).reshape(len(obs), len(names))
    return FeatureMatrix(obs, subj, names, values, categories)


def read_subject_map(path) -> dict:
    fh, rows = _reader(path)
    with fh:
        header = next(rows, None)
        if not header or header[:2] != ["observation_id", "subject_id"]:
            raise FormatError(path, 1, "header must be observation_id, subject_id")
        out = {}
        for lineno, row in enumerate(rows, start=2):
            if not row:
                continue
            if len(row) < 2 or not row[0] or not row[1]:
                raise FormatError(path, lineno, "malformed row")
            if row[0] in out:
                raise FormatError(path, lineno, f"duplicate observation_id {row[0]!r}")
            out[row[0]] = row[1]
    return out


# Phenotypes

def write_phenotype(path, phenotype: PhenotypeVector, name: str = "phenotype") -> None:
    with _open_write(path) as fh:
        w = _writer(fh)
        w.writerow(["subject_id", name])
        for s, v in zip(phenotype.subject_ids, phenotype.values):
            w.writerow([s, fmt_real(v)])


def read_phenotype(path) -> PhenotypeVector:
    fh, rows = _reader(path)
    with fh:
        header = next(rows, None)
        if not header or len(header) < 2 or header[0] != "subject_id":
            raise FormatError(path, 1, "header must be subject_id, <phenotype>")
        ids, vals = [], []
        seen = set()
        for lineno, row in enumerate(rows, start=2):
            if not row:
                continue
            if len(row) != len(header) or not row[0]:
                raise FormatError(path, lineno, "malformed row")
            if row[0] in seen:
                raise FormatError(path, lineno, f"duplicate subject {row[0]!r}")
            seen.add(row[0])
            v = _parse_real(row[1], path, lineno, header[1])
            if not math.isfinite(v):
                raise FormatError(path, lineno, "phenotype must be a finite number")
            ids.append(row[0])
            vals.append(v)
    return PhenotypeVector(ids, np.array(vals))


# Results

def _fmt_bool(b) -> str:
    return "true" if b else "false"


def _parse_bool(token, path, line):
    if token == "true":
        return True
    if token == "false":
        return False
    raise FormatError(path, line, f"expected true/false, got {token!r}")


def write_results(path, results: Iterable[AssociationResult]) -> None:
    with _open_write(path) as fh:
        w = _writer(fh, "\t")
        w.writerow(RESULT_COLUMNS)
        for r in results:
            w.writerow([r.feature, r.category, fmt_real(r.beta), fmt_real(r.se), fmt_real(r.ci_low),
                        fmt_real(r.ci_high), fmt_real(r.p), fmt_real(r.neg_log10_p),
                        _fmt_bool(r.sig_bonferroni), _fmt_bool(r.sig_fdr), str(r.n_used)])


def read_results(path) -> list:
    fh, rows = _reader(path, "\t")
    with fh:
        header = next(rows, None)
        if header is None or tuple(header) != RESULT_COLUMNS:
            raise FormatError(path, 1, "unexpected results header")
        out = []
        for lineno, row in enumerate(rows, start=2):
            if not row:
                continue
            if len(row) != len(RESULT_COLUMNS):
                raise FormatError(path, lineno, "wrong number of fields")
            reals = [_parse_real(t, path, lineno, c) for t, c in zip(row[2:8], RESULT_COLUMNS[2:8])]
            try:
                n_used = int(row[10])
            except ValueError:
                raise FormatError(path, lineno, "n_used must be an integer") from None
            out.append(AssociationResult(
                row[0], row[1], *reals,
                sig_bonferroni=_parse_bool(row[8], path, lineno),
                sig_fdr=_parse_bool(row[9], path, lineno),
                n_used=n_used,
            ))
    return out


# Plot data

def _clean(obj):
    """JSON-safe copy: NaN/inf become null, numpy scalars become Python numbers."""
    if isinstance(obj, dict):
        return {k: _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _clean(obj.tolist())
    if isinstance(obj, (np.floating, float)):
        x = float(obj)
        return x if math.isfinite(x) else None
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, np.bool_):
        return bool(obj)
    return obj


def dumps_plot_data(data: dict) -> str:
    return json.dumps(_clean(data), indent=2, sort_keys=True, allow_nan=False) + "\n"


def write_plot_data(path, data: dict) -> None:
    with _open_write(path) as fh:
        fh.write(dumps_plot_data(data))


def read_plot_data(path) -> dict:
    with open(path, encoding="utf-8") as fh:
        data = json.load(fh)
    if not isinstance(data, dict) or "kind" not in data:
        raise FormatError(path, None, "plot data needs a 'kind' field")
    if data.get("schema_version") != SCHEMA_VERSION:
        raise FormatError(path, None, f"unsupported schema_version {data.get('schema_version')!r}")
    return data


def feature_class(category: str) -> str:
    """Two colour classes: spatial features vs everything else (object-level)."""
    return "spatial" if category in SPATIAL_CATEGORIES or category == "Spatial" else "object"


def significance_threshold(results, alpha: float, n_tests: int, method: str = "bonferroni",
                           fdr_q: Optional[float] = None) -> Optional[float]:
    """Largest p counted as significant, or None when nothing can pass (FDR)."""
    if method == "bonferroni":
        return alpha / n_tests
    if method == "fdr":
        _, crit = benjamini_hochberg([r.p for r in results], alpha if fdr_q is None else fdr_q)
        return crit
    if method == "nominal":
        return alpha
    raise ValueError(f"unknown threshold method {method!r}")


def _is_significant(p: float, threshold: Optional[float], method: str) -> bool:
    if threshold is None:
        return False
    return p <= threshold if method == "fdr" else p < threshold


def _sorted(results) -> list:
    return sorted(results, key=lambda r: (r.p, r.feature))


def emit_manhattan_data(results, alpha: float = 0.05, n_tests: Optional[int] = None, top_below: int = 25,
                        method: str = "bonferroni") -> dict:
    """Significant features plus the ``top_below`` strongest ones under the threshold, ranked by p."""
    results = _sorted(results)
    if not results:
        raise ValueError("no results to plot")
    n_tests = len(results) if n_tests is None else n_tests
    thr = significance_threshold(results, alpha, n_tests, method)
    sig = [r for r in results if _is_significant(r.p, thr, method)]
    below = [r for r in results if not _is_significant(r.p, thr, method)][:max(0, top_below)]
    points = []
    for rank, r in enumerate(sig + below, start=1):
        points.append({
            "feature": r.feature, "x": rank, "p": r.p, "neg_log10_p": r.neg_log10_p,
            "category": r.category, "class": feature_class(r.category),
            "significant": _is_significant(r.p, thr, method),
        })
    line_p = thr if thr is not None else alpha / n_tests
    return {
        "kind": "manhattan",
        "schema_version": SCHEMA_VERSION,
        "n_tests": n_tests,
        "n_significant": len(sig),
        "threshold": {"method": method, "p": line_p, "neg_log10_p": -math.log10(line_p)},
        "points": points,
    }


def emit_effect_size_data(results, alpha: float = 0.05, n_tests: Optional[int] = None,
                          method: str = "bonferroni") -> dict:
    """Beta and 95% CI for the features that pass the threshold."""
    results = _sorted(results)
    n_tests = len(results) if n_tests is None else n_tests
    thr = significance_threshold(results, alpha, n_tests, method) if results else None
    rows = [
        {"feature": r.feature, "beta": r.beta, "ci_low": r.ci_low, "ci_high": r.ci_high,
         "p": r.p, "category": r.category, "class": feature_class(r.category)}
        for r in results if _is_significant(r.p, thr, method)
    ]
    return {"kind": "effect_size", "schema_version": SCHEMA_VERSION, "threshold": {"method": method, "p": thr},
            "features": rows}


def emit_envelope_data(validation, max_curves: Optional[int] = None) -> dict:
    """Envelope bands, theoretical curves, per-sample curves and coverage."""
    panels = []
    for fid, env in validation.envelopes.items():
        curves = validation.curves[fid]
        if max_curves is not None:
            curves = curves[:max_curves]
        panels.append({
            "function": fid, "lower": env.lower, "upper": env.upper,
            "theoretical": env.theoretical, "level": env.level,
            "coverage": validation.coverage[fid], "samples": curves,
        })
    cfg = validation.config
    return {
        "kind": "envelope",
        "schema_version": SCHEMA_VERSION,
        "config": {"lambda": cfg.lam, "base": list(cfg.base_window), "sub": list(cfg.sub_window),
                   "n_samples": cfg.n_samples, "seed": cfg.seed},
        "radii": validation.radii,
        "skipped": validation.skipped,
        "panels": panels,
    }
