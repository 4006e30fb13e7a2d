"""Regenerate the golden fixtures in this directory.

    python3 tests/fixtures/make_fixtures.py

Outputs are committed; tests compare against them byte for byte, so only
rerun this when the fixture design changes.
"""

from pathlib import Path

import numpy as np

from histowas import io
from histowas.assoc import AssociationResult, FeatureMatrix, PhenotypeVector
from histowas.geometry import PointPattern

HERE = Path(__file__).resolve().parent
N_SLIDES = 20
N_SUBJECTS = 14
N_OBJECT_FEATURES = 72


def _blob(rng, center, radius, lam):
    n = rng.poisson(lam * np.pi * radius ** 2)
    r = radius * np.sqrt(rng.uniform(0, 1, n))
    t = rng.uniform(0, 2 * np.pi, n)
    return np.column_stack([center[0] + r * np.cos(t), center[1] + r * np.sin(t)])


def make_centroids(rng):
    """Two well separated tissue blobs per slide; some slides are clustered."""
    slides, subjects = [], {}
    for k in range(N_SLIDES):
        sid = f"slide{k:02d}"
        subjects[sid] = f"P{k % N_SUBJECTS:02d}"
        lam = 2e-4 * (1 + 0.5 * (k % 3))
        a = _blob(rng, (800.0, 800.0), 600.0, lam)
        b = _blob(rng, (3000.0, 900.0), 500.0, lam)
        pts = np.vstack([a, b])
        if k % 4 == 0:
            # tight aggregates inside the first blob
            extra = np.vstack([_blob(rng, (700.0 + 80 * j, 700.0), 15.0, 0.02) for j in range(4)])
            pts = np.vstack([pts, extra])
        pts = np.round(pts, 3)
        slides.append(PointPattern(pts, sid, "glomerulus"))
    io.write_centroids(HERE / "centroids.csv", slides, subjects)
    return subjects


def make_object_features(rng, subjects):
    obs = sorted(subjects)
    names = [f"obj{j:02d}" for j in range(N_OBJECT_FEATURES)]
    vals = np.round(rng.normal(size=(len(obs), N_OBJECT_FEATURES)), 6)
    m = FeatureMatrix(obs, [subjects[o] for o in obs], names, vals, {n: "Object-level" for n in names})
    io.write_feature_matrix(HERE / "object_features.csv", m)
    return m


def make_phenotype(rng, objects: FeatureMatrix):
    subj = list(dict.fromkeys(objects.subject_ids))
    sid = np.array(objects.subject_ids)
    base = np.array([objects.values[sid == s, 0].mean() for s in subj])
    y = np.round(1.5 * base + rng.normal(0, 0.3, len(subj)), 6)
    io.write_phenotype(HERE / "phenotype.csv", PhenotypeVector(subj, y), "eGFR_slope")


def make_results(rng):
    """102 results with exactly 6 below the Bonferroni line (0.05 / 102)."""
    rows = []
    p_sig = [1e-9, 3e-8, 2e-6, 4e-5, 1.1e-4, 4.0e-4]
    p_rest = np.sort(rng.uniform(6e-4, 1.0, 96))
    cats = ["Density", "Spacing", "Correlation", "Object-level"]
    for k, p in enumerate(list(p_sig) + list(p_rest)):
        beta = float(np.round(rng.normal(0, 0.5), 6))
        se = 0.1 + 0.01 * (k % 7)
        rows.append(AssociationResult(
            f"feat{k:03d}", cats[k % 4], beta, se, beta - 1.97 * se, beta + 1.97 * se,
            float(p), float(-np.log10(p)), sig_bonferroni=k < 6, sig_fdr=k < 6, n_used=120))
    io.write_results(HERE / "results_6sig.tsv", rows)


def main():
    rng = np.random.default_rng(20240101)
    subjects = make_centroids(rng)
    objects = make_object_features(rng, subjects)
    make_phenotype(rng, objects)
    make_results(rng)


if __name__ == "__main__":
    main()
