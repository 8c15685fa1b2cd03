import csv
import json
import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from ihforest.evaluation import (ADD, ADI, EvalParams, EvalRecord, emit_report, f1_score, is_correct, make_record,
                                 pose_error, pr_curve, records_csv, summarize, table_text)
from ihforest.render import Pose, make_box

from oracles import add_bruteforce, rot_z

CUBE = make_box((100, 100, 100))
angles = st.tuples(*[st.floats(-math.pi, math.pi)] * 3)
shifts = st.tuples(*[st.floats(-200, 200)] * 3)


def test_identity_and_translation(mug):
    p = Pose((0.3, 0.2, 0.1), (0, 0, 750))
    assert pose_error(p, p, mug) == 0.0
    q = Pose(p.rotation, (1, 0, 750))
    assert pose_error(p, q, mug) == pytest.approx(1.0, abs=1e-12)


def test_cube_quarter_turn():
    gt, est = Pose(), Pose((0, 0, math.pi / 2))
    ref = add_bruteforce(CUBE.vertices, np.eye(3), np.zeros(3), rot_z(90), np.zeros(3))
    assert ref == pytest.approx(100.0)
    assert pose_error(gt, est, CUBE) == pytest.approx(ref, abs=1e-9)
    # a cube is symmetric under the quarter turn
    assert pose_error(gt, est, CUBE, ADI) == pytest.approx(0.0, abs=1e-9)


@given(angles, shifts, angles, shifts, shifts)
def test_add_translation_equivariant(r1, t1, r2, t2, d):
    a, b = Pose(r1, t1), Pose(r2, t2)
    a2, b2 = Pose(r1, np.add(t1, d)), Pose(r2, np.add(t2, d))
    assert pose_error(a2, b2, CUBE) == pytest.approx(pose_error(a, b, CUBE), abs=1e-9)


@given(angles, shifts, angles, shifts)
def test_adi_le_add(r1, t1, r2, t2):
    a, b = Pose(r1, t1), Pose(r2, t2)
    assert pose_error(a, b, CUBE, ADI) <= pose_error(a, b, CUBE, ADD) + 1e-9


def test_correctness_boundary():
    phi = 173.205
    assert is_correct(0.0, phi)
    assert is_correct(0.08 * phi, phi)
    assert not is_correct(0.081 * phi, phi)
    with pytest.raises(ValueError):
        EvalParams(z_omega=0)
    with pytest.raises(ValueError):
        EvalParams(mode="XYZ")


def rec(i, correct, conf, k=0):
    return EvalRecord(f"s{i}", 1.0 if correct else 99.0, 100.0, correct, conf, k)


def test_pr_examples():
    assert pr_curve([rec(i, True, 0.5) for i in range(4)]).best_f1 == 1.0
    rs = [rec(0, True, 0.9), rec(1, True, 0.8), rec(2, False, 0.1), rec(3, False, 0.2)]
    pts = {t: (p, r) for t, p, r in pr_curve(rs).points}
    assert pts[0.8] == (1.0, 0.5)
    assert f1_score(1.0, 0.5) == pytest.approx(2 / 3)
    assert pr_curve([rec(i, False, i / 4) for i in range(4)]).best_f1 == 0.0
    with pytest.raises(ValueError):
        pr_curve([])


@given(st.lists(st.tuples(st.booleans(), st.floats(0, 1)), min_size=1, max_size=40))
def test_recall_non_increasing(items):
    pts = pr_curve([rec(i, c, f) for i, (c, f) in enumerate(items)]).points
    recalls = [r for _, _, r in pts]
    assert all(b <= a for a, b in zip(recalls, recalls[1:]))
    assert all(0 <= p <= 1 for _, p, _ in pts)


def test_make_record_uses_diameter():
    r = make_record("a", Pose(), Pose((0, 0, 0), (5, 0, 0)), 0.4, 2, CUBE)
    assert r.omega == pytest.approx(5.0) and r.phi == pytest.approx(100 * math.sqrt(3))
    assert r.correct and r.k == 2


def test_report(tmp_path):
    rs = [rec(0, True, 0.9), rec(1, False, 0.3), rec(2, True, 0.5)]
    s1 = emit_report(rs, tmp_path / "a")
    emit_report(rs, tmp_path / "b")
    for name in ("records.csv", "pr.csv", "summary.json"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()
    rows = list(csv.reader((tmp_path / "a" / "records.csv").read_text().splitlines()))
    assert rows[0] == ["scene_id", "omega_mm", "phi_mm", "correct", "confidence", "k"]
    assert len(rows) == 4
    summary = json.loads((tmp_path / "a" / "summary.json").read_text())
    assert summary["per_k"]["0"]["success_rate"] == pytest.approx(2 / 3)
    assert summary == json.loads(json.dumps(s1))
    assert "F1" in table_text(summary)
    with pytest.raises(ValueError):
        emit_report([], tmp_path / "c")


def test_summary_per_k():
    rs = [rec(0, False, 0.2, 0), rec(0, True, 0.6, 5), rec(1, True, 0.3, 0), rec(1, True, 0.7, 5)]
    s = summarize(rs)
    assert s["final_k"] == 5
    assert s["per_k"]["0"]["success_rate"] == 0.5 and s["per_k"]["5"]["success_rate"] == 1.0
    assert records_csv(rs).count("\n") == 5
