"""Seven-metric evaluation: confusion-matrix accumulation, metric values on
known matrices, rounding, averaging, and report emission."""

import csv
import itertools
import json

import numpy as np
import pytest

from cnet.errors import EmptyMatrix, ShapeMismatch
from cnet.metrics import (
    METRIC_NAMES,
    ConfusionMatrix,
    MetricReport,
    accumulate,
    average_report,
    compute_metrics,
    emit_report,
    format_percent,
)


def _cm(tp, tn, fp, fn):
    return ConfusionMatrix(tp=tp, tn=tn, fp=fp, fn=fn)


class TestAccumulate:
    def test_counts_land_in_the_right_cell(self):
        cm = ConfusionMatrix()
        accumulate(np.array([[0.2, 0.9]]), np.array([[0.0, 1.0]]), cm)  # tp
        accumulate(np.array([[0.9, 0.2]]), np.array([[0.0, 1.0]]), cm)  # fn
        accumulate(np.array([[0.1, 0.6]]), np.array([[1.0, 0.0]]), cm)  # fp
        accumulate(np.array([[0.8, 0.1]]), np.array([[1.0, 0.0]]), cm)  # tn
        assert (cm.tp, cm.tn, cm.fp, cm.fn) == (1, 1, 1, 1)

    def test_tie_breaks_toward_class_zero(self):
        cm = ConfusionMatrix()
        accumulate(np.array([[0.5, 0.5]]), np.array([[1.0, 0.0]]), cm)
        assert (cm.tp, cm.tn, cm.fp, cm.fn) == (0, 1, 0, 0)

    def test_batched_input(self):
        cm = ConfusionMatrix()
        preds = np.array([[0.1, 0.9], [0.9, 0.1], [0.3, 0.7], [0.6, 0.4]])
        labels = np.array([[0, 1], [1, 0], [1, 0], [0, 1]], dtype=float)
        accumulate(preds, labels, cm)
        assert (cm.tp, cm.tn, cm.fp, cm.fn) == (1, 1, 1, 1)
        assert cm.total == 4

    def test_shape_mismatch(self):
        with pytest.raises(ShapeMismatch):
            accumulate(np.array([[0.1, 0.9]]), np.array([[1.0, 0.0, 0.0]]),
                       ConfusionMatrix())
        with pytest.raises(ShapeMismatch):
            accumulate(np.array([0.1, 0.9]), np.array([0.0, 1.0]),
                       ConfusionMatrix())


class TestComputeMetrics:
    def test_known_matrix_40x(self):
        rep = compute_metrics(_cm(205, 92, 2, 0))
        want = {"accuracy": 99.33, "precision": 99.03, "npv": 100.00,
                "recall": 100.00, "specificity": 97.87, "f1": 99.51,
                "mcc": 98.45}
        for name, pct in want.items():
            assert rep.values()[name] * 100 == pytest.approx(pct, abs=0.01), name

    def test_known_matrix_small_study(self):
        rep = compute_metrics(_cm(37, 44, 0, 2))
        assert rep.precision * 100 == pytest.approx(100.00, abs=0.01)
        assert rep.recall * 100 == pytest.approx(94.87, abs=0.01)
        assert rep.f1 * 100 == pytest.approx(97.37, abs=0.01)
        assert rep.npv * 100 == pytest.approx(95.65, abs=0.01)
        assert rep.accuracy * 100 == pytest.approx(97.59, abs=0.01)
        assert rep.specificity * 100 == pytest.approx(100.00, abs=0.01)
        assert rep.mcc * 100 == pytest.approx(95.26, abs=0.01)

    def test_perfect_classifier(self):
        rep = compute_metrics(_cm(7, 9, 0, 0))
        assert all(v == 1.0 for v in rep.values().values())

    def test_coin_flip_has_zero_mcc(self):
        rep = compute_metrics(_cm(1, 1, 1, 1))
        assert rep.mcc == 0.0
        assert rep.accuracy == 0.5

    def test_always_positive_degenerate(self):
        rep = compute_metrics(_cm(10, 0, 10, 0))
        assert rep.accuracy == 0.5
        assert rep.recall == 1.0
        assert rep.specificity == 0.0
        assert rep.precision == 0.5
        assert rep.npv is None    # tn + fn == 0
        assert rep.mcc is None

    def test_zero_denominators_give_none_not_nan(self):
        rep = compute_metrics(_cm(0, 5, 0, 0))
        assert rep.precision is None
        assert rep.recall is None
        assert rep.f1 is None
        assert rep.mcc is None
        assert rep.accuracy == 1.0
        for v in rep.values().values():
            if v is not None:
                assert np.isfinite(v)

    def test_empty_matrix_rejected(self):
        with pytest.raises(EmptyMatrix):
            compute_metrics(ConfusionMatrix())

    def test_label_swap_symmetry(self):
        # Swapping the positive and negative classes exchanges tp<->tn and
        # fp<->fn, which must swap precision<->npv and recall<->specificity
        # while leaving accuracy and mcc unchanged.
        a = compute_metrics(_cm(17, 23, 5, 3))
        b = compute_metrics(_cm(23, 17, 3, 5))
        assert a.accuracy == b.accuracy
        assert a.mcc == pytest.approx(b.mcc, rel=1e-12)
        assert a.precision == pytest.approx(b.npv, rel=1e-12)
        assert a.recall == pytest.approx(b.specificity, rel=1e-12)

    def test_mcc_is_one_only_for_error_free_matrices(self):
        for tp, tn, fp, fn in itertools.product(range(4), repeat=4):
            cm = _cm(tp, tn, fp, fn)
            if cm.total == 0:
                continue
            rep = compute_metrics(cm)
            if rep.mcc is None:
                continue
            perfect = fp == 0 and fn == 0 and tp >= 1 and tn >= 1
            assert (abs(rep.mcc - 1.0) < 1e-12) == perfect, (tp, tn, fp, fn)

    def test_f1_matches_harmonic_mean_identity(self):
        for tp, tn, fp, fn in itertools.product(range(6), repeat=4):
            cm = _cm(tp, tn, fp, fn)
            if cm.total == 0:
                continue
            rep = compute_metrics(cm)
            if rep.f1 is None:
                continue
            assert rep.f1 == pytest.approx(2 * tp / (2 * tp + fp + fn), rel=1e-12)


class TestFormatPercent:
    def test_two_decimals_half_even(self):
        assert format_percent(0.5) == "50.00"
        assert format_percent(0.99345) == "99.34"  # 99.345 rounds to even
        assert format_percent(0.99335) == "99.34"
        assert format_percent(1.0) == "100.00"

    def test_none_formats_empty(self):
        assert format_percent(None) == ""


class TestAverageReport:
    def test_single_group_average_is_the_row(self):
        rep = compute_metrics(_cm(205, 92, 2, 0))
        avg, defined = average_report({"40X": rep})
        for name in METRIC_NAMES:
            assert avg.values()[name] == rep.values()[name]
        assert all(v == 1 for v in defined.values())
        assert avg.cm.total == rep.cm.total

    def test_mean_accuracy_rounds_like_reference_table(self):
        # Accuracies 99.33, 98.72, 99.67, 99.63 average to 99.3375 which
        # must print as 99.34.
        reports = {}
        for i, acc in enumerate((0.9933, 0.9872, 0.9967, 0.9963)):
            reports[f"g{i}"] = MetricReport(accuracy=acc,
                                            cm=_cm(1, 1, 0, 0))
        avg, _ = average_report(reports)
        assert format_percent(avg.accuracy) == "99.34"

    def test_partially_defined_metric(self):
        reports = {
            "a": compute_metrics(_cm(5, 5, 0, 0)),
            "b": compute_metrics(_cm(0, 5, 0, 0)),  # precision undefined
        }
        avg, defined = average_report(reports)
        assert defined["precision"] == 1
        assert avg.precision == 1.0
        assert defined["accuracy"] == 2

    def test_counts_are_summed(self):
        reports = {"a": compute_metrics(_cm(1, 2, 3, 4)),
                   "b": compute_metrics(_cm(10, 20, 30, 40))}
        avg, _ = average_report(reports)
        assert (avg.cm.tp, avg.cm.tn, avg.cm.fp, avg.cm.fn) == (11, 22, 33, 44)


class TestEmitReport:
    def _reports(self):
        return {"40X": compute_metrics(_cm(205, 92, 2, 0)),
                "100X": compute_metrics(_cm(37, 44, 0, 2))}

    def test_csv_layout(self, tmp_path):
        path = tmp_path / "report.csv"
        emit_report(self._reports(), "csv", path)
        with open(path, newline="", encoding="utf-8") as fh:
            rows = list(csv.reader(fh))
        assert rows[0] == ["group", "tp", "tn", "fp", "fn", *METRIC_NAMES]
        assert [r[0] for r in rows[1:]] == ["40X", "100X", "Average"]
        row_40x = rows[1]
        assert row_40x[1:5] == ["205", "92", "2", "0"]
        assert row_40x[5] == "99.33"
        assert row_40x[8] == "100.00"

    def test_csv_flags_partial_averages(self, tmp_path):
        reports = {"a": compute_metrics(_cm(5, 5, 0, 0)),
                   "b": compute_metrics(_cm(0, 5, 0, 0))}
        path = tmp_path / "report.csv"
        emit_report(reports, "csv", path)
        text = path.read_text(encoding="utf-8")
        assert text.rstrip().splitlines()[-1].startswith(
            "# average over defined entries only:")
        assert "precision" in text.rstrip().splitlines()[-1]

    def test_json_round_trips(self, tmp_path):
        path = tmp_path / "report.json"
        emit_report(self._reports(), "json", path)
        doc = json.loads(path.read_text(encoding="utf-8"))
        assert [r["group"] for r in doc["rows"]] == ["40X", "100X", "Average"]
        first = doc["rows"][0]
        assert first["tp"] == 205
        assert first["accuracy"] == 99.33
        assert "partial_metrics" not in doc

    def test_json_partial_metrics_listed(self, tmp_path):
        reports = {"a": compute_metrics(_cm(5, 5, 0, 0)),
                   "b": compute_metrics(_cm(0, 5, 0, 0))}
        path = tmp_path / "report.json"
        emit_report(reports, "json", path)
        doc = json.loads(path.read_text(encoding="utf-8"))
        assert "precision" in doc["partial_metrics"]
        assert doc["rows"][1]["precision"] is None

    def test_empty_reports_rejected(self, tmp_path):
        with pytest.raises(EmptyMatrix):
            emit_report({}, "csv", tmp_path / "r.csv")

    def test_unknown_format_rejected(self, tmp_path):
        with pytest.raises(ValueError):
            emit_report(self._reports(), "yaml", tmp_path / "r.yaml")
