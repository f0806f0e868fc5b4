"""2-D t-SNE layout of embeddings.

Per-point Gaussian bandwidths are calibrated by bisection to a target
perplexity; the layout minimizes KL(P||Q) with a Student-t (1 dof) kernel
under gradient descent with gains, momentum, and early exaggeration.  The
gradient is exact up to `exact_threshold` points and Barnes-Hut approximated
above it.  Runs are deterministic for a fixed seed, independent of worker
count.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Optional, Sequence, Union

import numpy as np
import scipy.sparse as sp

from .data_model import Dataset, Region
from .errors import JobCancelled, ValidationError

LN2 = float(np.log(2.0))

EXAGGERATION_ITERS = 250  # early exaggeration and low momentum end here
MIN_GAIN = 0.01


@dataclass
class TsneParams:
    """Optimizer settings; only perplexity deviates from common defaults."""

    perplexity: float = 50.0
    iterations: int = 1000
    early_exaggeration: float = 12.0
    momentum_early: float = 0.5  # before iteration 250
    momentum_late: float = 0.8  # from iteration 250 on
    learning_rate: Optional[float] = None  # default max(N / 12, 50)
    theta: float = 0.5
    seed: int = 0
    exact_threshold: int = 5000
    n_workers: int = 1

    def validate(self, n: int) -> None:
        if n < 3:
            raise ValidationError(f"need at least 3 points, got {n}")
        if not (2.0 <= self.perplexity < n):
            raise ValidationError(
                f"perplexity must satisfy 2 <= perplexity < N, got "
                f"{self.perplexity} with N={n}"
            )
        if not (0.0 <= self.theta <= 1.0):
            raise ValidationError(f"theta must lie in [0, 1], got {self.theta}")
        if self.iterations < 0:
            raise ValidationError("iterations must be non-negative")
        if self.n_workers < 1:
            raise ValidationError("n_workers must be >= 1")

    def effective_learning_rate(self, n: int) -> float:
        if self.learning_rate is not None:
            return float(self.learning_rate)
        return max(n / 12.0, 50.0)


@dataclass
class AffinityMatrix:
    """Symmetric joint probabilities p_ij (dense or k-nearest sparse)."""

    probabilities: Union[np.ndarray, sp.csr_matrix]
    mode: str  # "dense" | "sparse"
    betas: np.ndarray
    warnings: list = field(default_factory=list)

    @property
    def n(self) -> int:
        return self.probabilities.shape[0]

    def total(self) -> float:
        return float(self.probabilities.sum())


@dataclass(frozen=True)
class LayoutPoint:
    subject_id: str
    region: Optional[Region]
    x: float
    y: float

    def __post_init__(self):
        if not (np.isfinite(self.x) and np.isfinite(self.y)):
            raise ValidationError(
                f"non-finite layout coordinates for {self.subject_id!r}"
            )


@dataclass
class TsneResult:
    points: list[LayoutPoint]
    kl_trace: list[float]
    warnings: list = field(default_factory=list)

    def coords(self) -> np.ndarray:
        return np.array([[p.x, p.y] for p in self.points])


# ---------------------------------------------------------------------------
# Affinity calibration
# ---------------------------------------------------------------------------

def conditional_entropy_bits(sq_dists: np.ndarray, beta: float):
    """Shannon entropy (bits) and probabilities of exp(-beta * d^2) weights."""
    d2 = np.asarray(sq_dists, dtype=np.float64)
    shifted = d2 - d2.min()
    w = np.exp(-beta * shifted)
    s = w.sum()
    p = w / s
    h_nats = np.log(s) + beta * float(np.dot(shifted, p))
    return h_nats / LN2, p


def _calibrate_row(d2, target_bits, tol, max_bisect):
    """Bisection on beta so the conditional perplexity matches the target.

    Returns (p, beta, status) with status one of "ok", "max_bisect",
    "duplicates".  Rows of exact duplicates (all distances zero) get a
    uniform conditional and skip the search.
    """
    if d2.max() == 0.0:
        return np.full(d2.size, 1.0 / d2.size), np.inf, "duplicates"
    beta = 1.0
    beta_min, beta_max = -np.inf, np.inf
    h, p = conditional_entropy_bits(d2, beta)
    diff = h - target_bits
    tries = 0
    while abs(diff) > tol and tries < max_bisect:
        if diff > 0:  # entropy too high -> sharpen by raising beta
            beta_min = beta
            beta = beta * 2.0 if beta_max == np.inf else (beta + beta_max) / 2.0
        else:
            beta_max = beta
            beta = beta / 2.0 if beta_min == -np.inf else (beta + beta_min) / 2.0
        h, p = conditional_entropy_bits(d2, beta)
        diff = h - target_bits
        tries += 1
    return p, beta, "ok" if abs(diff) <= tol else "max_bisect"


def calibrate_affinities(
    X: np.ndarray,
    perplexity: float,
    tol: float = 1e-5,
    max_bisect: int = 64,
    mode: str = "dense",
) -> AffinityMatrix:
    """Perplexity-calibrated symmetric joint affinities.

    Dense mode computes full conditionals; sparse mode restricts each row to
    its k = min(N-1, 3 * perplexity) nearest neighbors.  Conditionals are
    symmetrized as p_ij = (p_j|i + p_i|j) / (2N).
    """
    X = np.asarray(X, dtype=np.float64)
    n = X.shape[0]
    if n < 3:
        raise ValidationError(f"need at least 3 points, got {n}")
    if not (2.0 <= perplexity < n):
        raise ValidationError(
            f"perplexity must satisfy 2 <= perplexity < N, got {perplexity}"
        )
    if mode not in ("dense", "sparse"):
        raise ValidationError(f"mode must be dense or sparse, got {mode!r}")
    target_bits = np.log2(perplexity)
    betas = np.empty(n)
    warnings = []

    if mode == "dense":
        d2 = _sq_distances(X)
        cond = np.zeros((n, n))
        for i in range(n):
            row = np.delete(d2[i], i)
            p, beta, status = _calibrate_row(row, target_bits, tol, max_bisect)
            betas[i] = beta
            if status != "ok":
                warnings.append(_row_warning(i, status))
            cond[i, np.arange(n) != i] = p
        joint = (cond + cond.T) / (2.0 * n)
        np.fill_diagonal(joint, 0.0)
        return AffinityMatrix(joint, "dense", betas, warnings)

    k = min(n - 1, int(round(3 * perplexity)))
    neigh_idx, neigh_d2 = _knn(X, k)
    rows, cols, vals = [], [], []
    for i in range(n):
        p, beta, status = _calibrate_row(neigh_d2[i], target_bits, tol, max_bisect)
        betas[i] = beta
        if status != "ok":
            warnings.append(_row_warning(i, status))
        rows.append(np.full(k, i))
        cols.append(neigh_idx[i])
        vals.append(p)
    cond = sp.csr_matrix(
        (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
        shape=(n, n),
    )
    joint = (cond + cond.T) / (2.0 * n)
    joint = sp.csr_matrix(joint)
    joint.sort_indices()
    return AffinityMatrix(joint, "sparse", betas, warnings)


def _row_warning(i: int, status: str) -> str:
    if status == "duplicates":
        return f"row {i}: duplicate points, using a uniform conditional"
    return f"row {i}: perplexity calibration hit the bisection cap"


def _sq_distances(X: np.ndarray) -> np.ndarray:
    norms = (X * X).sum(axis=1)
    d2 = norms[:, None] + norms[None, :] - 2.0 * (X @ X.T)
    np.maximum(d2, 0.0, out=d2)
    np.fill_diagonal(d2, 0.0)
    return d2


def _knn(X: np.ndarray, k: int, block: int = 512):
    """Blockwise k-nearest neighbors (squared distances), self excluded.

    Neighbors within a row are ordered by (distance, index) so the result
    does not depend on partitioning internals.
    """
    n = X.shape[0]
    norms = (X * X).sum(axis=1)
    idx_out = np.empty((n, k), dtype=np.int64)
    d2_out = np.empty((n, k))
    for start in range(0, n, block):
        stop = min(n, start + block)
        d2 = norms[start:stop, None] + norms[None, :] - 2.0 * (X[start:stop] @ X.T)
        np.maximum(d2, 0.0, out=d2)
        for r in range(stop - start):
            d2[r, start + r] = np.inf  # exclude self
        part = np.argpartition(d2, k - 1, axis=1)[:, :k]
        for r in range(stop - start):
            cand = part[r]
            order = np.lexsort((cand, d2[r, cand]))
            sel = cand[order]
            idx_out[start + r] = sel
            d2_out[start + r] = d2[r, sel]
    return idx_out, d2_out


# ---------------------------------------------------------------------------
# KL divergence and gradients
# ---------------------------------------------------------------------------

def _student_t(Y: np.ndarray):
    """Unnormalized Student-t similarities (1 dof) with zero diagonal."""
    d2 = _sq_distances(Y)
    t = 1.0 / (1.0 + d2)
    np.fill_diagonal(t, 0.0)
    return t


def kl_divergence(P, layout) -> float:
    """KL(P || Q) of the layout's normalized Student-t similarities.

    Exact for both dense and sparse affinities (the normalizer is computed
    over all pairs).  Result is >= 0 by Gibbs' inequality.
    """
    Y = _layout_coords(layout)
    probs = P.probabilities if isinstance(P, AffinityMatrix) else P
    if probs.shape[0] != Y.shape[0]:
        raise ValidationError(
            f"affinity rows ({probs.shape[0]}) != layout points ({Y.shape[0]})"
        )
    t = _student_t(Y)
    z = t.sum()
    if sp.issparse(probs):
        coo = probs.tocoo()
        p = coo.data
        q = t[coo.row, coo.col] / z
    else:
        mask = probs > 0
        p = probs[mask]
        q = t[mask] / z
    val = float(np.sum(p * np.log(p / q)))
    # Gibbs: the true value is >= 0; clear rounding dust near zero
    return 0.0 if -1e-9 < val < 0.0 else val


def _layout_coords(layout) -> np.ndarray:
    if isinstance(layout, TsneResult):
        return layout.coords()
    if len(layout) and isinstance(layout[0], LayoutPoint):
        return np.array([[p.x, p.y] for p in layout])
    return np.asarray(layout, dtype=np.float64)


def exact_kl_grad(probs, Y: np.ndarray, kl_probs=None):
    """KL value and exact gradient 4 * sum_j (p - q) t (y_i - y_j).

    `probs` drives the gradient; `kl_probs` (default: same) drives the
    reported KL, so the trace can stay un-exaggerated during exploration.
    """
    t = _student_t(Y)
    z = t.sum()
    if sp.issparse(probs):
        coo = probs.tocoo()
        r, c, p = coo.row, coo.col, coo.data
        w_attr = p * t[r, c]
        grad = np.zeros_like(Y)
        np.add.at(grad, r, w_attr[:, None] * (Y[r] - Y[c]))
        # exact repulsion over all pairs
        t2 = t * t
        grad -= (t2.sum(axis=1)[:, None] * Y - t2 @ Y) / z
        grad *= 4.0
    else:
        q = t / z
        m = (probs - q) * t
        grad = 4.0 * (m.sum(axis=1)[:, None] * Y - m @ Y)
    kl = _kl_from_t(kl_probs if kl_probs is not None else probs, t, z)
    return kl, grad


def _kl_from_t(probs, t, z) -> float:
    if sp.issparse(probs):
        coo = probs.tocoo()
        p = coo.data
        q = t[coo.row, coo.col] / z
        return float(np.sum(p * np.log(p / q)))
    mask = probs > 0
    p = probs[mask]
    q = t[mask] / z
    return float(np.sum(p * np.log(p / q)))


class _QuadNode:
    """Quadtree cell: point count, center of mass, and four children."""

    __slots__ = ("n", "com", "width", "children")

    def __init__(self, points, cx, cy, width, min_width):
        self.n = points.shape[0]
        self.width = width
        self.com = points.mean(axis=0)
        self.children = ()
        if self.n > 1 and width > min_width:
            east = points[:, 0] > cx
            north = points[:, 1] > cy
            shift, half = width / 4.0, width / 2.0
            kids = []
            for ex, ny, dx, dy in (
                (True, True, 1, 1),
                (True, False, 1, -1),
                (False, True, -1, 1),
                (False, False, -1, -1),
            ):
                mask = (east == ex) & (north == ny)
                if mask.any():
                    kids.append(
                        _QuadNode(
                            points[mask],
                            cx + dx * shift,
                            cy + dy * shift,
                            half,
                            min_width,
                        )
                    )
            self.children = tuple(kids)


def _build_quadtree(Y: np.ndarray) -> _QuadNode:
    mins = Y.min(axis=0)
    maxs = Y.max(axis=0)
    center = (mins + maxs) / 2.0
    width = float(max(maxs[0] - mins[0], maxs[1] - mins[1]))
    width = width * (1.0 + 1e-9) if width > 0 else 1.0
    return _QuadNode(Y, center[0], center[1], width, min_width=width * 1e-12)


def _bh_repulsion(node: _QuadNode, Y, idx, theta, f_rep, z_contrib):
    """Accumulate Barnes-Hut repulsion for the points in `idx`.

    A cell is summarized for a point when width / distance < theta or the
    cell is a leaf; otherwise the point descends into the children.  Each
    point's sums accumulate in its own slot, so results are independent of
    how points are chunked across workers.
    """
    diff = Y[idx] - node.com
    d2 = (diff * diff).sum(axis=1)
    at_com = d2 == 0.0
    if node.children:
        dist = np.sqrt(d2, where=~at_com, out=np.zeros_like(d2))
        use = ~at_com & (node.width < theta * dist)
    else:
        use = ~at_com
    if use.any():
        t = 1.0 / (1.0 + d2[use])
        z_contrib[idx[use]] += node.n * t
        f_rep[idx[use]] += (node.n * t * t)[:, None] * diff[use]
    if not node.children:
        # coincident multi-point leaf: members feel the others at t = 1
        if node.n > 1 and at_com.any():
            z_contrib[idx[at_com]] += node.n - 1
        return
    descend = idx[~use]
    if descend.size:
        for child in node.children:
            _bh_repulsion(child, Y, descend, theta, f_rep, z_contrib)


def bh_kl_grad(probs: sp.csr_matrix, Y: np.ndarray, theta: float,
               n_workers: int = 1, kl_probs=None):
    """Barnes-Hut KL estimate and gradient for sparse affinities."""
    n = Y.shape[0]
    coo = probs.tocoo()
    r, c, p = coo.row, coo.col, coo.data
    diff = Y[r] - Y[c]
    t_pairs = 1.0 / (1.0 + (diff * diff).sum(axis=1))
    f_attr = np.zeros_like(Y)
    np.add.at(f_attr, r, (p * t_pairs)[:, None] * diff)

    tree = _build_quadtree(Y)
    f_rep = np.zeros_like(Y)
    z_contrib = np.zeros(n)
    if n_workers <= 1:
        _bh_repulsion(tree, Y, np.arange(n), theta, f_rep, z_contrib)
    else:
        chunks = np.array_split(np.arange(n), n_workers)
        with ThreadPoolExecutor(max_workers=n_workers) as pool:
            futures = [
                pool.submit(_bh_repulsion, tree, Y, chunk, theta, f_rep, z_contrib)
                for chunk in chunks
                if chunk.size
            ]
            for fut in futures:
                fut.result()
    z = float(z_contrib.sum())
    if z <= 0.0:
        grad = 4.0 * f_attr  # all points coincide; only attraction acts
    else:
        grad = 4.0 * (f_attr - f_rep / z)

    kp = kl_probs if kl_probs is not None else probs
    kp_coo = kp.tocoo()
    kd = Y[kp_coo.row] - Y[kp_coo.col]
    kt = 1.0 / (1.0 + (kd * kd).sum(axis=1))
    if z > 0.0:
        kl = float(np.sum(kp_coo.data * np.log(kp_coo.data / kt)) + np.log(z))
    else:
        kl = 0.0
    return kl, grad


# ---------------------------------------------------------------------------
# Layout optimization
# ---------------------------------------------------------------------------

ProgressFn = Callable[[int, float], None]
CancelFn = Callable[[], bool]


def tsne_layout(
    ds_or_matrix,
    params: Optional[TsneParams] = None,
    progress: Optional[ProgressFn] = None,
    cancel: Optional[CancelFn] = None,
) -> TsneResult:
    """Optimize a 2-D layout of the dataset (or raw matrix) rows.

    Deterministic for fixed seed and params, independent of worker count.
    Dataset points are processed in (subject_id, region) order, so the
    layout is invariant to record order.  `progress(iteration, kl)` fires
    each iteration; `cancel()` returning True aborts with JobCancelled.
    """
    params = params or TsneParams()
    if isinstance(ds_or_matrix, Dataset):
        order = sorted(
            range(len(ds_or_matrix.records)),
            key=lambda i: (
                ds_or_matrix.records[i].subject_id,
                int(ds_or_matrix.records[i].region),
            ),
        )
        records = [ds_or_matrix.records[i] for i in order]
        X = np.stack([rec.vector.astype(np.float64) for rec in records])
        ids = [(rec.subject_id, rec.region) for rec in records]
    else:
        X = np.asarray(ds_or_matrix, dtype=np.float64)
        ids = [(str(i), None) for i in range(X.shape[0])]
    n = X.shape[0]
    params.validate(n)

    rng = np.random.default_rng(params.seed)
    if np.all(X == X[0]):
        # no structure to lay out: keep the seeded near-origin cloud
        Y = rng.normal(0.0, 1e-4, size=(n, 2))
        affinities = calibrate_affinities(X, params.perplexity)
        kl = kl_divergence(affinities, Y)
        kl_trace = []
        for it in range(params.iterations):
            if cancel is not None and cancel():
                raise JobCancelled(f"layout canceled at iteration {it}")
            kl_trace.append(kl)
            if progress is not None:
                progress(it, kl)
        points = [
            LayoutPoint(subject_id=sid, region=region, x=float(xy[0]), y=float(xy[1]))
            for (sid, region), xy in zip(ids, Y)
        ]
        warnings = ["degenerate input: all points identical, layout left at its "
                    "near-origin initialization"] + list(affinities.warnings)
        return TsneResult(points=points, kl_trace=kl_trace, warnings=warnings)

    exact = n <= params.exact_threshold
    affinities = calibrate_affinities(
        X, params.perplexity, mode="dense" if exact else "sparse"
    )
    warnings = list(affinities.warnings)
    P = affinities.probabilities
    P_ex = P * params.early_exaggeration

    Y = rng.normal(0.0, 1e-4, size=(n, 2))
    lr = params.effective_learning_rate(n)
    update = np.zeros_like(Y)
    gains = np.ones_like(Y)
    kl_trace = []

    for it in range(params.iterations):
        if cancel is not None and cancel():
            raise JobCancelled(f"layout canceled at iteration {it}")
        exaggerated = it < EXAGGERATION_ITERS
        momentum = params.momentum_early if exaggerated else params.momentum_late
        grad_p = P_ex if exaggerated else P
        if exact:
            kl, grad = exact_kl_grad(grad_p, Y, kl_probs=P)
        else:
            kl, grad = bh_kl_grad(
                grad_p, Y, params.theta, params.n_workers, kl_probs=P
            )
        if not np.all(np.isfinite(grad)):
            raise ArithmeticError(f"non-finite gradient at iteration {it}")
        same_sign = (grad > 0.0) == (update > 0.0)
        gains = np.where(same_sign, gains * 0.8, gains + 0.2)
        np.maximum(gains, MIN_GAIN, out=gains)
        update = momentum * update - lr * (gains * grad)
        Y += update
        Y -= Y.mean(axis=0)
        kl_trace.append(kl)
        if progress is not None:
            progress(it, kl)

    points = [
        LayoutPoint(subject_id=sid, region=region, x=float(xy[0]), y=float(xy[1]))
        for (sid, region), xy in zip(ids, Y)
    ]
    return TsneResult(points=points, kl_trace=kl_trace, warnings=warnings)


# ---------------------------------------------------------------------------
# Exports
# ---------------------------------------------------------------------------

def layout_to_csv(points: Sequence[LayoutPoint], dest) -> None:
    close = False
    if isinstance(dest, (str, Path)):
        dest = open(dest, "w", newline="")
        close = True
    try:
        dest.write("subject_id,region,x,y\n")
        for p in points:
            region = p.region.name if p.region is not None else ""
            dest.write(f"{p.subject_id},{region},{p.x!r},{p.y!r}\n")
    finally:
        if close:
            dest.close()


def kl_trace_to_csv(trace: Sequence[float], dest) -> None:
    close = False
    if isinstance(dest, (str, Path)):
        dest = open(dest, "w", newline="")
        close = True
    try:
        dest.write("iter,kl\n")
        for i, kl in enumerate(trace):
            dest.write(f"{i},{kl!r}\n")
    finally:
        if close:
            dest.close()
