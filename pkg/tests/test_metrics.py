"""Evaluation helpers and .dat serialization."""

import numpy as np
import pytest

from permfl.engine import DeviceState
from permfl.errors import ConfigurationError, EvaluationError
from permfl.metrics import (
    MetricsRecord,
    evaluate_gm,
    evaluate_pm,
    evaluate_pm_weighted,
    parse_dat,
    write_dat,
    write_manifest,
    write_table,
)
from permfl.models import Batch, MclrModel, MclrSpec


def make_device(did, theta, features, labels):
    return DeviceState(
        device_id=did, team_id=0, theta=np.asarray(theta, dtype=float),
        val=Batch(features, labels),
    )


@pytest.fixture
def mclr():
    return MclrModel(MclrSpec(n_features=2, n_classes=2, l2=0.0))


def theta_for_rule(model, scale=5.0):
    """Parameters that label by the sign of the first feature."""
    theta = np.zeros(model.dim)
    table = theta.reshape(2, 3)
    table[0, 0] = -scale
    table[1, 0] = scale
    return theta


class TestEvaluatePm:
    def test_mean_of_device_accuracies(self, mclr):
        theta = theta_for_rule(mclr)
        feats = np.array([[1.0, 0.0], [-1.0, 0.0]])
        dev_a = make_device(0, theta, feats, np.array([1, 0]))  # both right
        dev_b = make_device(1, theta, feats, np.array([1, 1]))  # one right
        acc, _ = evaluate_pm([dev_a, dev_b], mclr)
        assert acc == pytest.approx(0.75)

    def test_all_correct(self, mclr):
        theta = theta_for_rule(mclr)
        feats = np.array([[2.0, 0.3], [-0.5, 1.0]])
        devs = [make_device(i, theta, feats, np.array([1, 0])) for i in range(3)]
        acc, _ = evaluate_pm(devs, mclr)
        assert acc == 1.0

    def test_zero_theta_ties_resolve_to_class_zero(self, mclr):
        feats = np.array([[0.4, 0.2], [1.0, -1.0], [0.0, 3.0]])
        labels = np.array([0, 0, 1])
        dev = make_device(0, np.zeros(mclr.dim), feats, labels)
        acc, _ = evaluate_pm([dev], mclr)
        assert acc == pytest.approx(2.0 / 3.0)

    def test_missing_validation_rejected(self, mclr):
        dev = DeviceState(device_id=0, team_id=0, theta=np.zeros(mclr.dim))
        with pytest.raises(EvaluationError):
            evaluate_pm([dev], mclr)

    def test_weighted_variant_uses_sample_counts(self, mclr):
        theta = theta_for_rule(mclr)
        dev_small = make_device(0, theta, np.array([[1.0, 0.0]]), np.array([0]))  # wrong
        feats = np.array([[1.0, 0.0]] * 3)
        dev_large = make_device(1, theta, feats, np.array([1, 1, 1]))  # right
        acc_uniform, _ = evaluate_pm([dev_small, dev_large], mclr)
        acc_weighted, _ = evaluate_pm_weighted([dev_small, dev_large], mclr)
        assert acc_uniform == pytest.approx(0.5)
        assert acc_weighted == pytest.approx(0.75)


class TestEvaluateGm:
    def test_homogeneous_matches_pm(self, mclr):
        theta = theta_for_rule(mclr)
        feats = np.array([[1.0, 0.1], [-1.0, 0.2]])
        labels = np.array([1, 0])
        devs = [make_device(i, theta, feats, labels) for i in range(4)]
        pm_acc, pm_loss = evaluate_pm(devs, mclr)
        gm_acc, gm_loss = evaluate_gm(theta, devs, mclr)
        assert gm_acc == pytest.approx(pm_acc, abs=1e-9)
        assert gm_loss == pytest.approx(pm_loss, abs=1e-9)

    def test_chance_level_on_balanced_classes(self):
        rng = np.random.default_rng(0)
        model = MclrModel(MclrSpec(n_features=8, n_classes=10, l2=0.0))
        feats = rng.normal(size=(2000, 8))
        labels = rng.integers(0, 10, size=2000)
        devs = [make_device(0, np.zeros(model.dim), feats, labels)]
        x = rng.normal(size=model.dim)
        acc, _ = evaluate_gm(x, devs, model)
        assert acc == pytest.approx(0.1, abs=0.05)

    def test_zero_x_predicts_class_zero_frequency(self, mclr):
        feats = np.array([[0.1, 0.2], [0.3, 0.4], [0.5, 0.6], [0.7, 0.8]])
        labels = np.array([0, 0, 0, 1])
        devs = [make_device(0, np.zeros(mclr.dim), feats, labels)]
        acc, _ = evaluate_gm(np.zeros(mclr.dim), devs, mclr)
        assert acc == pytest.approx(0.75)


class TestDatFiles:
    def test_golden_single_record(self, tmp_path):
        path = tmp_path / "one.dat"
        write_dat([MetricsRecord(t=0, pm_acc=0.5)], [("GR", "t"), ("PerMFL(PM)", "pm_acc")], path)
        assert path.read_text() == "GR PerMFL(PM)\n0 0.500000\n"

    def test_empty_records_header_only(self, tmp_path):
        path = tmp_path / "empty.dat"
        write_dat([], [("GR", "t"), ("PerMFL(PM)", "pm_acc")], path)
        assert path.read_text() == "GR PerMFL(PM)\n"

    def test_round_trip_byte_identical(self, tmp_path):
        rng = np.random.default_rng(1)
        records = [
            MetricsRecord(t=t, pm_acc=float(rng.uniform()), gm_acc=float(rng.uniform()),
                          pm_loss=float(rng.uniform(0, 10)), gm_loss=float(rng.uniform(0, 10)))
            for t in range(20)
        ]
        first = tmp_path / "a.dat"
        second = tmp_path / "b.dat"
        columns = [("GR", "t"), ("PerMFL(PM)", "pm_acc"), ("PerMFL(GM)", "gm_acc"),
                   ("pm_loss", "pm_loss"), ("gm_loss", "gm_loss")]
        write_dat(records, columns, first)
        header, rows = parse_dat(first)
        write_table(second, header, rows)
        assert first.read_bytes() == second.read_bytes()

    def test_duplicate_columns_rejected(self, tmp_path):
        with pytest.raises(ConfigurationError):
            write_dat([], [("GR", "t"), ("GR", "pm_acc")], tmp_path / "x.dat")

    def test_whitespace_column_rejected(self, tmp_path):
        with pytest.raises(ConfigurationError):
            write_dat([], [("bad name", "t")], tmp_path / "x.dat")

    def test_manifest_sorted_keys(self, tmp_path):
        path = tmp_path / "manifest.txt"
        write_manifest(path, {"b": 2, "a": 1})
        assert path.read_text() == "a=1\nb=2\n"


def test_accuracy_range_enforced():
    with pytest.raises(ConfigurationError):
        MetricsRecord(t=0, pm_acc=1.5)
