"""Mass univariate association: aggregate, standardise, regress, correct."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy import stats

from ._parallel import pmap

log = logging.getLogger(__name__)

P_FLOOR = 1e-300
EXACT_FIT_P = 1e-15


class StudyError(ValueError):
    pass


class SubjectMismatchError(StudyError):
    def __init__(self, missing_in_phenotype, missing_in_features):
        self.missing_in_phenotype = sorted(missing_in_phenotype)
        self.missing_in_features = sorted(missing_in_features)
        super().__init__(
            "unmatched subject ids: "
            f"not in phenotype {self.missing_in_phenotype}, not in features {self.missing_in_features}"
        )


@dataclass
class FeatureMatrix:
    """Observations x features with NaN as the missing marker."""

    observation_ids: list
    subject_ids: list
    feature_names: list
    values: np.ndarray
    categories: dict = field(default_factory=dict)

    def __post_init__(self):
        self.observation_ids = [str(x) for x in self.observation_ids]
        self.subject_ids = [str(x) for x in self.subject_ids]
        self.feature_names = [str(x) for x in self.feature_names]
        self.values = np.asarray(self.values, dtype=float).reshape(len(self.observation_ids),
                                                                    len(self.feature_names))
        if len(set(self.feature_names)) != len(self.feature_names):
            raise StudyError("feature names must be unique")
        if len(set(self.observation_ids)) != len(self.observation_ids):
            raise StudyError("observation ids must be unique")
        if len(self.subject_ids) != len(self.observation_ids):
            raise StudyError("every observation needs exactly one subject")

    def category(self, name: str) -> str:
        return self.categories.get(name, "")

    def column(self, name: str) -> np.ndarray:
        return self.values[:, self.feature_names.index(name)]

    def merge(self, other: "FeatureMatrix") -> "FeatureMatrix":
        """Join columns of ``other`` on observation id; subjects must agree."""
        clash = set(self.feature_names) & set(other.feature_names)
        if clash:
            raise StudyError(f"duplicate feature columns: {sorted(clash)}")
        pos = {o: k for k, o in enumerate(other.observation_ids)}
        missing = [o for o in self.observation_ids if o not in pos]
        if missing:
            raise StudyError(f"observations missing from extra features: {missing}")
        rows = [pos[o] for o in self.observation_ids]
        for o, s, k in zip(self.observation_ids, self.subject_ids, rows):
            if other.subject_ids[k] != s:
                raise StudyError(f"observation {o} maps to different subjects")
        return FeatureMatrix(
            self.observation_ids, self.subject_ids,
            self.feature_names + other.feature_names,
            np.hstack([self.values, other.values[rows]]),
            {**self.categories, **other.categories},
        )


@dataclass
class PhenotypeVector:
    subject_ids: list
    values: np.ndarray

    def __post_init__(self):
        self.subject_ids = [str(x) for x in self.subject_ids]
        self.values = np.asarray(self.values, dtype=float)
        if len(set(self.subject_ids)) != len(self.subject_ids):
            raise StudyError("duplicate subject in phenotype")
        if not np.all(np.isfinite(self.values)):
            raise StudyError("phenotype values must be finite")

    def as_dict(self) -> dict:
        return dict(zip(self.subject_ids, self.values.tolist()))


@dataclass
class StudyConfig:
    alpha: float = 0.05
    fdr_q: float = 0.05
    aggregation: str = "mean"
    min_subjects: int = 3

    def __post_init__(self):
        for name in ("alpha", "fdr_q"):
            v = getattr(self, name)
            if not 0 < v < 1:
                raise StudyError(f"{name} must lie in (0, 1)")
        if self.aggregation not in ("mean", "median"):
            raise StudyError("aggregation must be 'mean' or 'median'")


@dataclass
class AssociationResult:
    feature: str
    category: str
    beta: float
    se: float
    ci_low: float
    ci_high: float
    p: float
    neg_log10_p: float
    sig_bonferroni: bool = False
    sig_fdr: bool = False
    n_used: int = 0
    intercept: float = float("nan")
    t: float = float("nan")


@dataclass
class Skipped:
    feature: str
    reason: str


@dataclass
class StudyResult:
    results: list
    skipped: list
    n_tests: int
    bonferroni: float
    bh_critical_p: Optional[float]
    n_subjects: int


def aggregate_to_subjects(matrix: FeatureMatrix, method: str = "mean") -> FeatureMatrix:
    """One row per subject (first-appearance order) over non-missing observations."""
    if method not in ("mean", "median"):
        raise StudyError("aggregation must be 'mean' or 'median'")
    reducer = np.nanmean if method == "mean" else np.nanmedian
    subjects = list(dict.fromkeys(matrix.subject_ids))
    sid = np.array(matrix.subject_ids)
    out = np.full((len(subjects), len(matrix.feature_names)), np.nan)
    for k, s in enumerate(subjects):
        block = matrix.values[sid == s]
        has = ~np.all(np.isnan(block), axis=0)
        if has.any():
            out[k, has] = reducer(block[:, has], axis=0)
    return FeatureMatrix(subjects, subjects, list(matrix.feature_names), out, dict(matrix.categories))


def zscore(column) -> Optional[np.ndarray]:
    """(x - mean) / sd with n-1 denominator over non-missing values.

    Returns None for a column that cannot be standardised (fewer than 2
    values or zero spread).
    """
    x = np.asarray(column, dtype=float)
    ok = ~np.isnan(x)
    if ok.sum() < 2:
        return None
    mu = x[ok].mean()
    sd = x[ok].std(ddof=1)
    if not sd > 0 or not np.isfinite(sd):
        return None
    out = np.full_like(x, np.nan)
    out[ok] = (x[ok] - mu) / sd
    return out


def fit_univariate(x, y, feature: str = "", category: str = "") -> AssociationResult:
    """OLS of y on x with intercept; t-based p-value and 95% CI for the slope."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    ok = ~(np.isnan(x) | np.isnan(y))
    x, y = x[ok], y[ok]
    n = len(x)
    if n < 3:
        raise StudyError("need at least 3 complete pairs")
    xm, ym = x.mean(), y.mean()
    dx, dy = x - xm, y - ym
    sxx = float(dx @ dx)
    if not sxx > 0:
        raise StudyError("feature has no variation")
    sxy = float(dx @ dy)
    syy = float(dy @ dy)
    beta = sxy / sxx
    intercept = float(ym - beta * xm)
    df = n - 2
    tcrit = float(stats.t.ppf(0.975, df))
    if syy == 0.0:
        # constant response: no association by convention
        return AssociationResult(feature, category, 0.0, 0.0, 0.0, 0.0, 1.0, 0.0,
                                 n_used=n, intercept=intercept, t=0.0)
    resid = y - intercept - beta * x
    sse = float(resid @ resid)
    se = math.sqrt(sse / df / sxx)
    if se == 0.0:
        t = math.copysign(math.inf, beta)
        p = EXACT_FIT_P
    else:
        t = beta / se
        p = max(float(2.0 * stats.t.sf(abs(t), df)), P_FLOOR)
    p_plot = max(p, P_FLOOR)
    return AssociationResult(
        feature, category, beta, se, beta - tcrit * se, beta + tcrit * se, p,
        -math.log10(p_plot), n_used=n, intercept=intercept, t=t,
    )


def bonferroni_threshold(alpha: float, n_tests: int) -> float:
    if n_tests < 1:
        raise StudyError("n_tests must be >= 1")
    return alpha / n_tests


def benjamini_hochberg(p_values, q: float = 0.05):
    """Step-up FDR: returns (reject mask, critical p or None)."""
    p = np.asarray(p_values, dtype=float)
    m = len(p)
    if m == 0:
        return np.zeros(0, dtype=bool), None
    order = np.argsort(p, kind="stable")
    ranked = p[order]
    below = ranked <= q * np.arange(1, m + 1) / m
    if not below.any():
        return np.zeros(m, dtype=bool), None
    k = int(np.flatnonzero(below)[-1])
    crit = float(ranked[k])
    return p <= crit, crit


def _fit_one(args):
    name, category, x, y = args
    z = zscore(x)
    if z is None:
        return Skipped(name, "constant or insufficient values")
    try:
        return fit_univariate(z, y, name, category)
    except StudyError as exc:
        return Skipped(name, str(exc))


def run_study(matrix: FeatureMatrix, phenotype: PhenotypeVector, config: Optional[StudyConfig] = None,
              workers: Optional[int] = None) -> StudyResult:
    """Aggregate to subjects, then z-score and regress each feature on the phenotype.

    Features are standardised at subject level over the complete cases for that
    feature. Results are sorted by p (ties by name); skipped features are
    returned separately and do not count as tests.
    """
    config = config or StudyConfig()
    subj = aggregate_to_subjects(matrix, config.aggregation)
    pheno = phenotype.as_dict()
    in_matrix = set(subj.subject_ids)
    missing_pheno = in_matrix - set(pheno)
    missing_feat = set(pheno) - in_matrix
    if missing_pheno or missing_feat:
        raise SubjectMismatchError(missing_pheno, missing_feat)
    if len(subj.subject_ids) < config.min_subjects:
        raise StudyError(f"need at least {config.min_subjects} subjects")
    y = np.array([pheno[s] for s in subj.subject_ids])

    tasks = []
    for k, name in enumerate(subj.feature_names):
        col = subj.values[:, k]
        ok = ~np.isnan(col)
        tasks.append((name, subj.category(name), col[ok], y[ok]))
    fitted = pmap(_fit_one, tasks, workers)
    results = [r for r in fitted if isinstance(r, AssociationResult)]
    skipped = [r for r in fitted if isinstance(r, Skipped)]
    for s in skipped:
        log.info("skipped %s: %s", s.feature, s.reason)

    n_tests = len(results)
    bonf = bonferroni_threshold(config.alpha, n_tests) if n_tests else float("nan")
    reject, crit = benjamini_hochberg([r.p for r in results], config.fdr_q)
    for r, rej in zip(results, reject):
        r.sig_bonferroni = bool(r.p < bonf)
        r.sig_fdr = bool(rej)
    results.sort(key=lambda r: (r.p, r.feature))
    return StudyResult(results, skipped, n_tests, bonf, crit, len(subj.subject_ids))
