"""Point-set metrics: Chamfer distance with gradients, exact EMD, nearest neighbours.

Squared distances are always formed as ``dx*dx + dy*dy + dz*dz`` in that
order, and reductions use ``math.fsum``, so results do not depend on
vectorization or summation order.
"""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass, field

import numpy as np

from .assignment import linear_sum_assignment
from .errors import ContractError
from .kdtree import KDTree


def _cloud(a, name: str) -> np.ndarray:
    a = np.asarray(a, dtype=np.float64)
    if a.ndim != 2 or a.shape[1] != 3:
        raise ContractError(f"{name} must be (N, 3), got {a.shape}")
    if a.shape[0] == 0:
        raise ContractError(f"{name} is empty")
    return a


def pairwise_sq_dists(p: np.ndarray, q: np.ndarray) -> np.ndarray:
    """``(..., N, M)`` squared Euclidean distances."""
    pc = np.moveaxis(p, -1, 0).copy()
    qc = np.moveaxis(q, -1, 0).copy()
    d = pc[0][..., :, None] - qc[0][..., None, :]
    out = d * d
    for axis in (1, 2):
        np.subtract(pc[axis][..., :, None], qc[axis][..., None, :], out=d)
        d *= d
        out += d
    return out


def nearest_neighbors(p, q, method: str = "brute") -> np.ndarray:
    """Index into ``q`` of the closest point for every row of ``p``.

    Ties go to the lowest index.  ``method="kdtree"`` answers the same
    queries with a k-d tree and returns identical indices.
    """
    p = _cloud(p, "P")
    q = _cloud(q, "Q")
    if method == "kdtree":
        idx, _ = KDTree(q).query(p)
        return idx
    if method != "brute":
        raise ValueError(f"unknown method {method!r}")
    out = np.empty(len(p), dtype=np.int64)
    step = max(1, 2_000_000 // len(q))
    for start in range(0, len(p), step):
        out[start:start + step] = np.argmin(pairwise_sq_dists(p[start:start + step], q), axis=1)
    return out


def _nn_sq(p: np.ndarray, q: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    d2 = pairwise_sq_dists(p, q)
    idx = np.argmin(d2, axis=-1)
    return idx, np.take_along_axis(d2, idx[..., None], axis=-1)[..., 0]


def chamfer_distance(p, q) -> float:
    """Mean squared nearest-neighbour distance from P to Q plus from Q to P."""
    p = _cloud(p, "P")
    q = _cloud(q, "Q")
    _, d_pq = _nn_sq(p, q)
    _, d_qp = _nn_sq(q, p)
    return math.fsum(d_pq.tolist()) / len(p) + math.fsum(d_qp.tolist()) / len(q)


def chamfer_gradient(p, q) -> np.ndarray:
    """Gradient of ``chamfer_distance`` with respect to P.

    Nearest-neighbour assignments are held fixed (the loss is piecewise
    quadratic; this is its gradient almost everywhere).
    """
    p = _cloud(p, "P")
    q = _cloud(q, "Q")
    _, grad = batch_chamfer(p[None], q[None])
    return grad[0]


def batch_chamfer(pred: np.ndarray, target: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Per-item Chamfer distance for ``(B, N, 3)`` vs ``(B, M, 3)`` and its gradient wrt ``pred``.

    Uses plain numpy sums; ``chamfer_distance`` is the correctly rounded
    single-pair version.
    """
    b, n, _ = pred.shape
    m = target.shape[1]
    d2 = pairwise_sq_dists(pred, target)
    nn_pq = np.argmin(d2, axis=2)
    nn_qp = np.argmin(d2, axis=1)
    d_pq = np.take_along_axis(d2, nn_pq[:, :, None], axis=2)[:, :, 0]
    d_qp = np.take_along_axis(d2, nn_qp[:, None, :], axis=1)[:, 0, :]
    values = d_pq.mean(axis=1) + d_qp.mean(axis=1)

    rows = np.arange(b)[:, None]
    grad = (2.0 / n) * (pred - target[rows, nn_pq])
    back = (2.0 / m) * (pred[rows, nn_qp] - target)
    flat = grad.reshape(b * n, 3)
    np.add.at(flat, (nn_qp + rows * n).ravel(), back.reshape(b * m, 3))
    return values, flat.reshape(b, n, 3)


def emd(p, q) -> float:
    """Earth mover's distance between equal-size clouds.

    Mean unsquared Euclidean cost of the optimal one-to-one matching, solved
    exactly by ``assignment.linear_sum_assignment``.
    """
    p = _cloud(p, "P")
    q = _cloud(q, "Q")
    if len(p) != len(q):
        raise ContractError(f"emd needs equal sizes, got {len(p)} and {len(q)}")
    cost = np.sqrt(pairwise_sq_dists(p, q))
    rows, cols = linear_sum_assignment(cost)
    return math.fsum(cost[rows, cols].tolist()) / len(p)


@dataclass
class MetricReport:
    cd: list = field(default_factory=list)
    emd: list = field(default_factory=list)
    ids: list = field(default_factory=list)

    @property
    def mean_cd(self) -> float:
        return _mean(self.cd)

    @property
    def std_cd(self) -> float:
        return _pstd(self.cd)

    @property
    def mean_emd(self) -> float:
        return _mean(self.emd)

    @property
    def std_emd(self) -> float:
        return _pstd(self.emd)

    def summary(self) -> dict:
        return {"mean_cd": self.mean_cd, "std_cd": self.std_cd,
                "mean_emd": self.mean_emd, "std_emd": self.std_emd, "count": len(self.cd)}

    def to_json(self) -> str:
        samples = [{"id": i, "cd": c, "emd": e} for i, c, e in zip(self.ids, self.cd, self.emd)]
        return json.dumps({"samples": samples, "summary": self.summary()}, indent=2) + "\n"

    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(["id", "cd", "emd"])
        for i, c, e in zip(self.ids, self.cd, self.emd):
            writer.writerow([i, repr(c), repr(e)])
        s = self.summary()
        writer.writerow(["mean", repr(s["mean_cd"]), repr(s["mean_emd"])])
        writer.writerow(["std", repr(s["std_cd"]), repr(s["std_emd"])])
        return buf.getvalue()


def _mean(values) -> float:
    return math.fsum(values) / len(values) if values else float("nan")


def _pstd(values) -> float:
    if not values:
        return float("nan")
    mu = _mean(values)
    return math.sqrt(math.fsum((v - mu) ** 2 for v in values) / len(values))


def evaluate_set(recon, gt, ids=None, with_emd: bool = True) -> MetricReport:
    """Per-pair CD and EMD, plus mean and population std."""
    recon, gt = list(recon), list(gt)
    if len(recon) != len(gt):
        raise ContractError(f"{len(recon)} reconstructions vs {len(gt)} ground truths")
    ids = list(ids) if ids is not None else [str(i) for i in range(len(gt))]
    report = MetricReport(ids=ids)
    for r, g in zip(recon, gt):
        report.cd.append(chamfer_distance(r, g))
        report.emd.append(emd(r, g) if with_emd else float("nan"))
    return report
