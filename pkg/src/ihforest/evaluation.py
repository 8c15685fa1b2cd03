"""Pose error, the correctness test and precision/recall reporting."""

from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np
from scipy.spatial import cKDTree

from .errors import IoError
from .render import Mesh, Pose

ADD, ADI = "ADD", "ADI"


@dataclass(frozen=True)
class EvalParams:
    z_omega: float = 0.08
    mode: str = ADD

    def __post_init__(self):
        if not self.z_omega > 0:
            raise ValueError("z_omega must be positive")
        if self.mode not in (ADD, ADI):
            raise ValueError(f"mode must be {ADD} or {ADI}")


@dataclass(frozen=True)
class EvalRecord:
    scene_id: str
    omega: float
    phi: float
    correct: bool
    confidence: float
    k: int


def pose_error(gt: Pose, est: Pose, mesh: Mesh, mode: str = ADD) -> float:
    a = gt.apply(mesh.vertices)
    b = est.apply(mesh.vertices)
    if mode == ADD:
        return float(np.linalg.norm(a - b, axis=1).mean())
    if mode == ADI:
        return float(cKDTree(b).query(a)[0].mean())
    raise ValueError(f"unknown error mode {mode!r}")


def is_correct(omega: float, phi: float, params: EvalParams = EvalParams()) -> bool:
    return bool(omega <= params.z_omega * phi)


def make_record(scene_id: str, gt: Pose, est: Pose, confidence: float, k: int, mesh: Mesh,
                params: EvalParams = EvalParams()) -> EvalRecord:
    omega = pose_error(gt, est, mesh, params.mode)
    return EvalRecord(scene_id, omega, mesh.diameter, is_correct(omega, mesh.diameter, params), float(confidence), k)


@dataclass(frozen=True)
class PRCurve:
    points: tuple  # (threshold, precision, recall), thresholds ascending
    best_f1: float
    best_threshold: float


def f1_score(precision: float, recall: float) -> float:
    return 0.0 if precision + recall == 0 else 2 * precision * recall / (precision + recall)


def pr_curve(records: Sequence[EvalRecord]) -> PRCurve:
    if not records:
        raise ValueError("no records to evaluate")
    conf = np.array([r.confidence for r in records])
    ok = np.array([r.correct for r in records])
    pts = []
    best = (-1.0, 0.0)
    for thr in np.unique(conf):
        det = conf >= thr
        tp = int((det & ok).sum())
        p, r = tp / int(det.sum()), tp / len(records)
        pts.append((float(thr), p, r))
        f1 = f1_score(p, r)
        if f1 > best[0]:
            best = (f1, float(thr))
    return PRCurve(tuple(pts), best[0], best[1])


def summarize(records: Sequence[EvalRecord]) -> dict:
    """Success rate, mean error and best F1, per iteration count k."""
    if not records:
        raise ValueError("no records to summarise")
    out = {}
    for k in sorted({r.k for r in records}):
        rs = [r for r in records if r.k == k]
        pr = pr_curve(rs)
        out[str(k)] = {
            "n": len(rs),
            "success_rate": float(np.mean([r.correct for r in rs])),
            "mean_omega_mm": float(np.mean([r.omega for r in rs])),
            "f1": pr.best_f1,
            "f1_threshold": pr.best_threshold,
        }
    return {"per_k": out, "final_k": max(int(k) for k in out)}


def records_csv(records: Sequence[EvalRecord]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["scene_id", "omega_mm", "phi_mm", "correct", "confidence", "k"])
    for r in records:
        w.writerow([r.scene_id, repr(r.omega), repr(r.phi), int(r.correct), repr(r.confidence), r.k])
    return buf.getvalue()


def pr_csv(records: Sequence[EvalRecord]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["k", "threshold", "precision", "recall"])
    for k in sorted({r.k for r in records}):
        for thr, p, rc in pr_curve([r for r in records if r.k == k]).points:
            w.writerow([k, repr(thr), repr(p), repr(rc)])
    return buf.getvalue()


def emit_report(records: Sequence[EvalRecord], out_dir, params: EvalParams = EvalParams()) -> dict:
    """Write records.csv, summary.json and pr.csv into ``out_dir``; returns the summary."""
    if not records:
        raise ValueError("no records to report")
    summary = summarize(records)
    summary["z_omega"] = params.z_omega
    summary["mode"] = params.mode
    out = Path(out_dir)
    try:
        out.mkdir(parents=True, exist_ok=True)
        (out / "records.csv").write_text(records_csv(records))
        (out / "pr.csv").write_text(pr_csv(records))
        (out / "summary.json").write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n")
    except OSError as e:
        raise IoError(f"cannot write report to {out}: {e}") from e
    return summary


def table_text(summary: dict, label: str = "") -> str:
    """One row per iteration count, in the layout of an F1 results table."""
    lines = [f"{'k':>3} {'n':>4} {'success':>8} {'mean w (mm)':>12} {'F1':>7}  {label}".rstrip()]
    for k, s in summary["per_k"].items():
        lines.append(f"{k:>3} {s['n']:>4} {s['success_rate']:>8.4f} {s['mean_omega_mm']:>12.3f} {s['f1']:>7.4f}")
    return "\n".join(lines)
