import math
import xml.etree.ElementTree as ET

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from perovnet.evaluate import (
    EvaluationError,
    baseline_mean_predictor,
    export_scatter,
    metrics_report,
    overall_rmse,
    read_scatter,
    rmse_per_layer,
    uniform_baseline,
)
from perovnet.sampling import TRANSPARENT_BOX

# reference per-layer RMSE vectors (before and after tuning), nm; overall 76.24 and 22.54
BEFORE = (26.74, 7.67, 33.57, 4.24, 13.27, 27.32, 54.52)
AFTER = (7.64, 1.87, 13.16, 1.38, 7.47, 8.72, 11.93)

NAMES = list(TRANSPARENT_BOX.names)


def test_reference_overall_values():
    assert abs(overall_rmse(BEFORE) - 76.24) <= 0.1
    assert abs(overall_rmse(AFTER) - 22.54) <= 0.1


def test_pythagorean():
    assert overall_rmse([3, 4]) == 5.0


def test_single_layer_identity():
    assert overall_rmse([7.25]) == 7.25


def test_overall_empty():
    with pytest.raises(EvaluationError):
        overall_rmse([])


def test_per_layer_examples():
    t = np.arange(14.0).reshape(2, 7)
    assert np.all(rmse_per_layer(t, t) == 0)
    one = np.zeros((1, 7))
    err = np.array([[3.0, 4, 0, 0, 0, 0, 0]])
    assert rmse_per_layer(err, one).tolist() == [3, 4, 0, 0, 0, 0, 0]
    shifted = t.copy()
    shifted[:, 2] += 5
    assert rmse_per_layer(shifted, t).tolist() == [0, 0, 5, 0, 0, 0, 0]


def test_input_errors():
    with pytest.raises(EvaluationError, match="empty"):
        rmse_per_layer(np.zeros((0, 7)), np.zeros((0, 7)))
    with pytest.raises(EvaluationError, match="mismatch"):
        rmse_per_layer(np.zeros((3, 7)), np.zeros((3, 5)))
    with pytest.raises(EvaluationError):
        baseline_mean_predictor(np.zeros((0, 7)), np.zeros((2, 7)))


@settings(max_examples=60, deadline=None)
@given(arrays(float, 5, elements=st.floats(0, 100)), st.permutations(range(5)))
def test_overall_permutation_invariant_and_monotone(v, perm):
    assert math.isclose(overall_rmse(v), overall_rmse(v[list(perm)]), rel_tol=1e-12, abs_tol=1e-12)
    bigger = v.copy()
    bigger[0] += 1.0
    assert overall_rmse(bigger) >= overall_rmse(v)


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 10**6), st.floats(-50, 50), st.integers(0, 6))
def test_translation_detecting(seed, c, layer):
    rng = np.random.default_rng(seed)
    t = rng.uniform(0, 300, (20, 7))
    p = t + rng.normal(0, 4, t.shape)
    base = rmse_per_layer(p, t)[layer]
    q = p.copy()
    q[:, layer] += c
    assert rmse_per_layer(q, t)[layer] >= abs(c) - base - 1e-9
    exact = t.copy()
    exact[:, layer] += c
    assert abs(rmse_per_layer(exact, t)[layer] - abs(c)) <= 1e-9


def test_report_norm_invariant():
    rng = np.random.default_rng(4)
    t = rng.uniform(0, 100, (30, 7))
    r = metrics_report(t + rng.normal(0, 3, t.shape), t, rng.uniform(0, 100, (50, 7)), NAMES)
    assert abs(r.overall_rmse - np.linalg.norm(r.per_layer_rmse)) <= 1e-9
    assert min(r.per_layer_rmse) >= 0 and min(r.per_layer_baseline_rmse) >= 0
    assert r.count == 30 and len(r.per_layer_baseline_rmse) == 7
    assert r.layers_beating_baseline() == 7
    assert "overall" in r.format() and r.to_dict()["count"] == 30


def test_baseline_constant_set():
    c = np.tile(np.arange(7.0), (5, 1))
    assert np.all(baseline_mean_predictor(c, c) == 0)


def test_baseline_uniform_monte_carlo():
    rng = np.random.default_rng(0)
    lo, hi = np.array(TRANSPARENT_BOX.lower), np.array(TRANSPARENT_BOX.upper)
    tr = rng.uniform(lo, hi, (100_000, 7))
    te = rng.uniform(lo, hi, (100_000, 7))
    got = baseline_mean_predictor(tr, te)
    for j in range(7):
        ref = uniform_baseline(lo[j], hi[j])
        assert abs(got[j] - ref) <= 0.02 * ref


def test_export_fan_out(tmp_path):
    rng = np.random.default_rng(1)
    t = rng.uniform(0, 300, (1000, 7))
    p = t + rng.normal(0, 5, t.shape)
    files = export_scatter(p, t, NAMES, tmp_path / "sc")
    assert len([f for f in files if f.suffix == ".csv"]) == 7
    assert len([f for f in files if f.suffix == ".svg"]) == 7
    for name in NAMES:
        rows = (tmp_path / "sc" / f"{name}.csv").read_text().splitlines()
        assert rows[0] == "truth_nm,pred_nm" and len(rows) == 1001
        root = ET.parse(tmp_path / "sc" / f"{name}.svg").getroot()
        assert any(el.tag.endswith("line") and el.get("stroke") == "red" for el in root)
        assert sum(el.tag.endswith("circle") for el in root) == 1000


def test_export_identity(tmp_path):
    t = np.random.default_rng(2).uniform(0, 100, (10, 7))
    export_scatter(t, t, NAMES, tmp_path)
    p, tt = read_scatter(tmp_path, NAMES)
    assert np.array_equal(p, tt)


def test_export_empty_writes_nothing(tmp_path):
    out = tmp_path / "nothing"
    with pytest.raises(EvaluationError):
        export_scatter(np.zeros((0, 7)), np.zeros((0, 7)), NAMES, out)
    assert not out.exists()


def test_export_unwritable(tmp_path):
    blocker = tmp_path / "file"
    blocker.write_text("x")
    with pytest.raises(EvaluationError, match="cannot"):
        export_scatter(np.ones((2, 7)), np.ones((2, 7)), NAMES, blocker / "sub")


def test_recompute_from_export(tmp_path):
    rng = np.random.default_rng(3)
    t = rng.uniform(0, 300, (200, 7))
    p = t + rng.normal(0, 8, t.shape)
    r = metrics_report(p, t, t, NAMES)
    export_scatter(p, t, NAMES, tmp_path)
    p2, t2 = read_scatter(tmp_path, NAMES)
    r2 = metrics_report(p2, t2, t, NAMES)
    assert np.abs(np.subtract(r.per_layer_rmse, r2.per_layer_rmse)).max() <= 1e-9
    assert abs(r.overall_rmse - r2.overall_rmse) <= 1e-9
