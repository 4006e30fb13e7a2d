import json
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from histowas import io
from histowas.assoc import AssociationResult, FeatureMatrix, PhenotypeVector


def write(path, text):
    path.write_text(text, encoding="utf-8")
    return path


class TestCentroids:
    def test_two_rows(self, tmp_path):
        p = write(tmp_path / "c.csv", "slide_id,object_type,x_um,y_um\ns1,glom,1.5,2\ns1,glom,3,4\n")
        pats = io.read_centroids(p)
        assert list(pats) == [("s1", "glom")]
        assert pats[("s1", "glom")].points.tolist() == [[1.5, 2.0], [3.0, 4.0]]

    def test_interleaved(self, tmp_path):
        rows = ["s1,g,0,0", "s2,g,1,1", "s1,g,2,2", "s2,g,3,3", "s2,g,4,4"]
        p = write(tmp_path / "c.csv", "slide_id,object_type,x_um,y_um\n" + "\n".join(rows) + "\n")
        pats = io.read_centroids(p)
        assert [len(pats[k]) for k in [("s1", "g"), ("s2", "g")]] == [2, 3]
        assert pats[("s2", "g")].points[:, 0].tolist() == [1.0, 3.0, 4.0]

    def test_bad_number_names_line(self, tmp_path):
        p = write(tmp_path / "c.csv", "slide_id,object_type,x_um,y_um\ns1,g,1,2\ns1,g,abc,2\n")
        with pytest.raises(io.FormatError) as err:
            io.read_centroids(p)
        assert err.value.line == 3 and ":3:" in str(err.value)

    def test_empty_cell(self, tmp_path):
        p = write(tmp_path / "c.csv", "slide_id,object_type,x_um,y_um\ns1,g,,2\n")
        with pytest.raises(io.FormatError):
            io.read_centroids(p)

    def test_unknown_column_warns(self, tmp_path):
        p = write(tmp_path / "c.csv", "slide_id,object_type,x_um,y_um,area\ns1,g,1,2,9\n")
        with pytest.warns(UserWarning, match="area"):
            pats = io.read_centroids(p)
        assert len(pats[("s1", "g")]) == 1

    def test_filter_and_subjects(self, tmp_path):
        p = write(tmp_path / "c.csv",
                  "slide_id,object_type,x_um,y_um,subject_id\ns1,a,0,0,P1\ns1,b,1,1,P1\ns2,a,2,2,P2\n")
        assert list(io.read_centroids(p, "a")) == [("s1", "a"), ("s2", "a")]
        assert io.read_centroid_subjects(p) == {"s1": "P1", "s2": "P2"}

    def test_missing_column(self, tmp_path):
        p = write(tmp_path / "c.csv", "slide_id,x_um,y_um\ns1,1,2\n")
        with pytest.raises(io.FormatError):
            io.read_centroids(p)


class TestMatrices:
    def test_round_trip_with_na(self, tmp_path):
        vals = np.array([[1.0, np.nan, 0.1, 1e-300], [2.5, 3.0, -0.0, 1 / 3], [7.0, 8.0, 9.0, 1e300]])
        m = FeatureMatrix(["o1", "o2", "o3"], ["s1", "s1", "s2"], ["a", "b", "c", "d"], vals,
                          {"a": "Density", "b": "Spacing"})
        io.write_feature_matrix(tmp_path / "m.csv", m)
        back = io.read_feature_matrix(tmp_path / "m.csv")
        assert back.observation_ids == m.observation_ids and back.subject_ids == m.subject_ids
        assert np.array_equal(back.values, vals, equal_nan=True)
        assert back.categories == {"a": "Density", "b": "Spacing", "c": "Object-level", "d": "Object-level"}
        assert "NA" in (tmp_path / "m.csv").read_text().splitlines()[1].split(",")

    def test_duplicate_observation(self, tmp_path):
        p = write(tmp_path / "m.csv", "observation_id,subject_id,f\no1,s1,1\no1,s1,2\n")
        with pytest.raises(io.FormatError):
            io.read_feature_matrix(p)

    @settings(max_examples=100, deadline=None)
    @given(st.floats(allow_nan=False, allow_infinity=False))
    def test_real_round_trip(self, x):
        assert float(io.fmt_real(x)) == x

    def test_subject_map(self, tmp_path):
        p = write(tmp_path / "map.csv", "observation_id,subject_id\no1,A\no2,B\n")
        assert io.read_subject_map(p) == {"o1": "A", "o2": "B"}


class TestPhenotype:
    def test_round_trip(self, tmp_path):
        ph = PhenotypeVector(["a", "b"], [0.1, -2.0 / 3])
        io.write_phenotype(tmp_path / "p.csv", ph)
        back = io.read_phenotype(tmp_path / "p.csv")
        assert back.subject_ids == ["a", "b"] and back.values.tolist() == ph.values.tolist()

    def test_duplicate(self, tmp_path):
        p = write(tmp_path / "p.csv", "subject_id,y\na,1\na,2\n")
        with pytest.raises(io.FormatError):
            io.read_phenotype(p)


def _result(name, p, cat="Object-level", beta=0.5):
    return AssociationResult(name, cat, beta, 0.1, beta - 0.2, beta + 0.2, p, -math.log10(p),
                             sig_bonferroni=False, sig_fdr=False, n_used=10)


class TestResults:
    def test_round_trip_bit_equal(self, tmp_path):
        rs = [_result("f1", 4.90196e-4), _result("f2", 1 / 3, "Spacing")]
        rs[0].sig_bonferroni = True
        io.write_results(tmp_path / "r.tsv", rs)
        back = io.read_results(tmp_path / "r.tsv")
        assert back[0].p == 4.90196e-4 and back[0].sig_bonferroni is True and back[1].sig_fdr is False
        for a, b in zip(rs, back):
            for k in ("feature", "category", "beta", "se", "ci_low", "ci_high", "p", "neg_log10_p", "n_used"):
                assert getattr(a, k) == getattr(b, k)
        text = (tmp_path / "r.tsv").read_bytes()
        assert b"\r" not in text and text.split(b"\n")[0].count(b"\t") == 10


class TestManhattan:
    def test_six_plus_25(self, fixtures):
        rs = io.read_results(fixtures / "results_6sig.tsv")
        data = io.emit_manhattan_data(rs, 0.05, len(rs))
        assert len(rs) == 102 and data["n_significant"] == 6
        assert len(data["points"]) == 31
        assert [p["x"] for p in data["points"]] == list(range(1, 32))
        ps = [p["p"] for p in data["points"]]
        assert ps == sorted(ps)
        text = io.dumps_plot_data(data)
        assert text.count('"threshold"') == 1
        assert data["threshold"]["p"] == pytest.approx(0.05 / 102)

    def test_fewer_than_25(self):
        rs = [_result(f"f{k}", 0.1 + 0.05 * k) for k in range(10)]
        data = io.emit_manhattan_data(rs)
        assert len(data["points"]) == 10 and data["n_significant"] == 0

    def test_effect_size_only_significant(self, fixtures):
        rs = io.read_results(fixtures / "results_6sig.tsv")
        data = io.emit_effect_size_data(rs, 0.05, len(rs))
        assert [r["feature"] for r in data["features"]] == [f"feat{k:03d}" for k in range(6)]

    def test_feature_class(self):
        assert io.feature_class("Spacing") == "spatial" and io.feature_class("Object-level") == "object"


class TestPlotData:
    def test_nan_to_null_and_schema(self, tmp_path):
        io.write_plot_data(tmp_path / "d.json", {"kind": "x", "schema_version": 1, "v": [1.0, float("nan")]})
        raw = json.loads((tmp_path / "d.json").read_text())
        assert raw["v"] == [1.0, None]
        assert io.read_plot_data(tmp_path / "d.json")["kind"] == "x"

    def test_rejects_other_schema(self, tmp_path):
        write(tmp_path / "d.json", '{"kind": "manhattan", "schema_version": 99}')
        with pytest.raises(io.FormatError):
            io.read_plot_data(tmp_path / "d.json")
