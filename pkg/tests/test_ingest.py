import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from perceptdiff import exceptions as E
from perceptdiff.ingest import (
    AnnotationSet,
    LabelSpace,
    PredictionSet,
    build_frame,
    format_annotations,
    format_label_space,
    format_predictions,
    format_truth,
    parse_annotations,
    parse_label_space,
    parse_predictions,
    parse_truth,
)

K3 = LabelSpace(("a", "b", "c"))
K4 = LabelSpace(("a", "b", "c", "d"))


def write(tmp_path, name, text):
    p = tmp_path / name
    p.write_text(text, encoding="utf-8")
    return p


class TestLabelSpace:
    def test_two_classes(self, tmp_path):
        ls = parse_label_space(write(tmp_path, "classes.txt", "cat\ndog\n"))
        assert ls.K == 2
        assert ls.index("cat") == 0 and ls.index("dog") == 1

    def test_cifar10(self, tmp_path):
        names = "airplane automobile bird cat deer dog frog horse ship truck".split()
        ls = parse_label_space(write(tmp_path, "classes.txt", "\n".join(names) + "\n"))
        assert ls.K == 10

    def test_duplicate(self, tmp_path):
        with pytest.raises(E.DuplicateClass):
            parse_label_space(write(tmp_path, "classes.txt", "cat\ncat\n"))

    def test_too_few(self, tmp_path):
        with pytest.raises(E.TooFewClasses):
            parse_label_space(write(tmp_path, "classes.txt", "cat\n"))

    def test_unreadable(self, tmp_path):
        with pytest.raises(E.IngestError):
            parse_label_space(tmp_path / "nope.txt")


class TestPredictions:
    def test_soft_row(self, tmp_path):
        p = write(tmp_path, "predictions_x.csv", "sample_id,p_0,p_1,p_2\ns1,0.7,0.2,0.1\n")
        ps = parse_predictions(p, K3)
        assert ps.kind == "soft" and ps.classifier_id == "x"
        np.testing.assert_allclose(ps.probabilities[0], [0.7, 0.2, 0.1])
        assert ps.probabilities[0].sum() == pytest.approx(1.0, abs=1e-15)

    def test_not_normalized(self, tmp_path):
        p = write(tmp_path, "predictions_x.csv", "sample_id,p_0,p_1,p_2\ns1,0.5,0.5,0.5\n")
        with pytest.raises(E.RowNotNormalized) as info:
            parse_predictions(p, K3)
        assert info.value.row == 2

    def test_within_tolerance_is_renormalized(self, tmp_path):
        p = write(tmp_path, "predictions_x.csv", "sample_id,p_0,p_1,p_2\ns1,0.5,0.3,0.2000005\n")
        ps = parse_predictions(p, K3)
        assert ps.probabilities[0].sum() == pytest.approx(1.0, abs=1e-15)

    def test_hard(self, tmp_path):
        p = write(tmp_path, "predictions_x.csv", "sample_id,label\ns1,2\n")
        ps = parse_predictions(p, K3)
        assert ps.kind == "hard" and ps.labels.tolist() == [2]

    def test_label_out_of_range(self, tmp_path):
        p = write(tmp_path, "predictions_x.csv", "sample_id,label\ns1,3\n")
        with pytest.raises(E.LabelOutOfRange):
            parse_predictions(p, K3)

    def test_column_mismatch(self, tmp_path):
        p = write(tmp_path, "predictions_x.csv", "sample_id,p_0,p_1\ns1,0.5,0.5\n")
        with pytest.raises(E.ColumnMismatch):
            parse_predictions(p, K3)

    @pytest.mark.parametrize("body,err", [
        ("s1,1\ns1,2\n", E.DuplicateSampleId),
        (",1\n", E.MissingSampleId),
        ("s1,x\n", E.MalformedValue),
        ("s1,1,2\n", E.ColumnMismatch),
    ])
    def test_bad_rows(self, tmp_path, body, err):
        p = write(tmp_path, "predictions_x.csv", "sample_id,label\n" + body)
        with pytest.raises(err):
            parse_predictions(p, K3)

    def test_argmax_tie_lowest_index(self):
        ps = PredictionSet("m", ["s1"], np.array([[0.4, 0.4, 0.2]]), 3)
        assert ps.labels.tolist() == [0]

    def test_values_read_only(self):
        ps = PredictionSet("m", ["s1"], np.array([[0.4, 0.4, 0.2]]), 3)
        with pytest.raises(ValueError):
            ps.values[0, 0] = 1.0


class TestAnnotations:
    def test_with_time(self, tmp_path):
        p = write(tmp_path, "annotations_h.csv", "sample_id,label,time_seconds\ns1,3,1.25\n")
        a = parse_annotations(p, K4)
        assert a.labels.tolist() == [3] and a.times.tolist() == [1.25] and a.annotator_id == "h"

    def test_without_time(self, tmp_path):
        a = parse_annotations(write(tmp_path, "annotations_h.csv", "sample_id,label\ns1,3\n"), K4)
        assert a.labels.tolist() == [3] and a.times is None

    def test_negative_time(self, tmp_path):
        p = write(tmp_path, "annotations_h.csv", "sample_id,label,time_seconds\ns1,3,-1.0\n")
        with pytest.raises(E.NegativeTime):
            parse_annotations(p, K4)

    def test_partial_time(self, tmp_path):
        p = write(tmp_path, "annotations_h.csv", "sample_id,label,time_seconds\ns1,3,1.0\ns2,1,\n")
        with pytest.raises(E.PartialTimes):
            parse_annotations(p, K4)

    def test_label_range(self, tmp_path):
        p = write(tmp_path, "annotations_h.csv", "sample_id,label\ns1,4\n")
        with pytest.raises(E.LabelOutOfRange):
            parse_annotations(p, K4)


class TestBuildFrame:
    def test_two_samples(self):
        m = PredictionSet("m", ["s2", "s1"], np.array([1, 0]), 3)
        f = build_frame({"s1": 0, "s2": 1}, [m], [], K3)
        assert f.sample_ids == ("s1", "s2")
        assert f.get("m").labels.tolist() == [0, 1]

    def test_coverage_mismatch(self):
        m = PredictionSet("m", ["s1"], np.array([0]), 3)
        with pytest.raises(E.CoverageMismatch) as info:
            build_frame({"s1": 0, "s2": 1}, [m], [], K3)
        assert info.value.missing == ["s2"]

    def test_extra_ids(self):
        m = PredictionSet("m", ["s1", "s2", "s3"], np.array([0, 0, 0]), 3)
        with pytest.raises(E.CoverageMismatch) as info:
            build_frame({"s1": 0, "s2": 1}, [m], [], K3)
        assert info.value.extra == ["s3"]

    def test_duplicate_ids(self):
        a = PredictionSet("CE", ["s1"], np.array([0]), 3)
        b = PredictionSet("CE", ["s1"], np.array([1]), 3)
        with pytest.raises(E.DuplicateId):
            build_frame({"s1": 0}, [a, b], [], K3)

    def test_needs_a_set(self):
        with pytest.raises(E.IngestError):
            build_frame({"s1": 0}, [], [], K3)

    def test_deterministic(self):
        def make():
            m = PredictionSet("m", ["b", "a", "c"], np.array([2, 1, 0]), 3)
            h = AnnotationSet("h", ["c", "b", "a"], np.array([0, 2, 1]), 3, np.array([1., 2., 3.]))
            return build_frame({"c": 0, "a": 1, "b": 2}, [m], [h], K3)

        f1, f2 = make(), make()
        assert f1.sample_ids == f2.sample_ids == ("a", "b", "c")
        assert f1.truth.tolist() == f2.truth.tolist() == [1, 2, 0]
        assert f1.get("h").times.tolist() == [3.0, 2.0, 1.0]
        with pytest.raises(ValueError):
            f1.truth[0] = 0


ids_st = st.lists(st.text("abcxyz0123", min_size=1, max_size=6), min_size=1, max_size=20,
                  unique=True)


@settings(max_examples=60, deadline=None)
@given(ids=ids_st, data=st.data())
def test_round_trip(tmp_path_factory, ids, data):
    tmp = tmp_path_factory.mktemp("rt")
    K = data.draw(st.integers(2, 5))
    ls = LabelSpace(tuple(f"c{i}" for i in range(K)))
    raw = np.array([[data.draw(st.floats(0.01, 1.0)) for _ in range(K)] for _ in ids])
    soft = PredictionSet("m", ids, raw / raw.sum(axis=1, keepdims=True), K)
    labs = np.array([data.draw(st.integers(0, K - 1)) for _ in ids])
    times = np.array([data.draw(st.floats(0, 100)) for _ in ids])
    ann = AnnotationSet("h", ids, labs, K, times)
    truth = dict(zip(ids, labs.tolist()))

    (tmp / "classes.txt").write_text(format_label_space(ls))
    (tmp / "truth.csv").write_text(format_truth(truth))
    (tmp / "predictions_m.csv").write_text(format_predictions(soft))
    (tmp / "annotations_h.csv").write_text(format_annotations(ann))

    ls2 = parse_label_space(tmp / "classes.txt")
    assert ls2 == ls
    assert parse_truth(tmp / "truth.csv", ls2) == truth
    soft2 = parse_predictions(tmp / "predictions_m.csv", ls2)
    ann2 = parse_annotations(tmp / "annotations_h.csv", ls2)
    order = np.argsort(ids)
    np.testing.assert_allclose(soft2.values, soft.values[order], rtol=0, atol=1e-15)
    assert ann2.labels.tolist() == labs[order].tolist()
    assert ann2.times.tolist() == times[order].tolist()
    # second pass is byte-stable
    assert format_predictions(soft2) == format_predictions(
        parse_predictions(tmp / "predictions_m.csv", ls2))
    assert format_annotations(ann2) == (tmp / "annotations_h.csv").read_text()
