"""Point-cloud benchmark metrics: accuracy, completeness and their F1 score.

Accuracy is the fraction of reconstructed points with a ground-truth point
within the tolerance; completeness is the symmetric fraction of ground-truth
points covered by the reconstruction. Nearest-neighbor queries run on a
regular grid hash with cell size equal to the tolerance, which is exact: any
point within distance tol of a query lies in one of the 27 surrounding cells.
"""

from __future__ import annotations

import json
from collections import defaultdict
from dataclasses import dataclass

import numpy as np

from .errors import EmptyCloud, OutOfRange


@dataclass(frozen=True)
class EvalReport:
    """Single-tolerance evaluation result."""

    accuracy: float
    completeness: float
    f1: float
    tolerance: float
    n_reconstructed: int
    n_ground_truth: int

    def to_dict(self) -> dict:
        return {
            "tolerance": self.tolerance,
            "accuracy": self.accuracy,
            "completeness": self.completeness,
            "f1": self.f1,
            "n_reconstructed": self.n_reconstructed,
            "n_ground_truth": self.n_ground_truth,
        }


class _GridIndex:
    """Hash grid over 3D points with cell size = tolerance."""

    def __init__(self, points: np.ndarray, cell: float):
        self.points = np.asarray(points, dtype=np.float64)
        self.cell = float(cell)
        self.cells = defaultdict(list)
        keys = np.floor(self.points / self.cell).astype(np.int64)
        for idx, key in enumerate(map(tuple, keys)):
            self.cells[key].append(idx)

    def has_neighbor_within(self, query: np.ndarray, tol: float) -> bool:
        kx, ky, kz = np.floor(query / self.cell).astype(np.int64)
        tol2 = tol * tol
        for dx in (-1, 0, 1):
            for dy in (-1, 0, 1):
                for dz in (-1, 0, 1):
                    idxs = self.cells.get((kx + dx, ky + dy, kz + dz))
                    if not idxs:
                        continue
                    diff = self.points[idxs] - query
                    if (np.einsum("ij,ij->i", diff, diff) <= tol2).any():
                        return True
        return False


def _covered_fraction(queries: np.ndarray, targets: np.ndarray, tol: float) -> float:
    index = _GridIndex(targets, tol)
    hits = sum(1 for q in queries if index.has_neighbor_within(q, tol))
    return hits / len(queries)


def _check_clouds(recon, gt):
    recon = np.asarray(recon, dtype=np.float64).reshape(-1, 3)
    gt = np.asarray(gt, dtype=np.float64).reshape(-1, 3)
    if len(recon) == 0 or len(gt) == 0:
        raise EmptyCloud("both clouds must be non-empty")
    return recon, gt


def accuracy(recon, gt, tol: float) -> float:
    """Fraction of reconstructed points within tol of some ground-truth point."""
    recon, gt = _check_clouds(recon, gt)
    if tol <= 0:
        raise OutOfRange("tolerance must be positive")
    return _covered_fraction(recon, gt, tol)


def completeness(recon, gt, tol: float) -> float:
    """Fraction of ground-truth points within tol of some reconstructed point."""
    recon, gt = _check_clouds(recon, gt)
    if tol <= 0:
        raise OutOfRange("tolerance must be positive")
    return _covered_fraction(gt, recon, tol)


def f1(acc: float, comp: float) -> float:
    """Harmonic mean of accuracy and completeness; 0 when both are 0."""
    if not (0.0 <= acc <= 1.0 and 0.0 <= comp <= 1.0):
        raise OutOfRange(f"accuracy/completeness must be in [0, 1], got {acc}, {comp}")
    if acc + comp == 0.0:
        return 0.0
    return 2.0 * acc * comp / (acc + comp)


def evaluate_clouds(recon, gt, tolerances) -> list[EvalReport]:
    """One EvalReport per tolerance."""
    recon, gt = _check_clouds(recon, gt)
    reports = []
    for tol in np.atleast_1d(np.asarray(tolerances, dtype=np.float64)):
        a = accuracy(recon, gt, float(tol))
        c = completeness(recon, gt, float(tol))
        reports.append(
            EvalReport(
                accuracy=a,
                completeness=c,
                f1=f1(a, c),
                tolerance=float(tol),
                n_reconstructed=len(recon),
                n_ground_truth=len(gt),
            )
        )
    return reports


def report_to_json(reports: list[EvalReport]) -> str:
    return json.dumps([r.to_dict() for r in reports], indent=2) + "\n"


def report_to_table(reports: list[EvalReport]) -> str:
    """Aligned plain-text table of evaluation rows."""
    header = f"{'tol':>10} {'accuracy':>10} {'complete':>10} {'f1':>10} {'n_rec':>10} {'n_gt':>10}"
    lines = [header, "-" * len(header)]
    for r in reports:
        lines.append(
            f"{r.tolerance:>10.4g} {r.accuracy:>10.4f} {r.completeness:>10.4f} "
            f"{r.f1:>10.4f} {r.n_reconstructed:>10d} {r.n_ground_truth:>10d}"
        )
    return "\n".join(lines) + "\n"
