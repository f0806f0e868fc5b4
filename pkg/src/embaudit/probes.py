"""Supervised probes on embeddings.

How decodable is a variable from the embedding space?  Classification runs
through an SMO-trained SVM on rebalanced data; continuous targets use an
epsilon-insensitive linear regressor scored by mean absolute error.  Lag
curves train a logistic classifier on everyone while tracking a designated
subgroup, exposing populations the model learns late or never.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping, Optional, Sequence

import numpy as np

from .errors import ValidationError

# ---------------------------------------------------------------------------
# Rebalancing
# ---------------------------------------------------------------------------

def rebalance_classification(labels: Sequence, seed: int = 0) -> np.ndarray:
    """Seeded undersampling: every class keeps min-class-count indices.

    Missing labels (None) are filtered out first.  Returns sorted indices
    into the input sequence, without replacement.
    """
    idx_by_class: dict = {}
    for i, lab in enumerate(labels):
        if lab is None:
            continue
        idx_by_class.setdefault(lab, []).append(i)
    if len(idx_by_class) < 2:
        raise ValidationError(
            f"need at least 2 classes after filtering missing labels, "
            f"got {len(idx_by_class)}"
        )
    m = min(len(v) for v in idx_by_class.values())
    rng = np.random.default_rng(seed)
    chosen = []
    for lab in sorted(idx_by_class, key=str):
        members = np.array(idx_by_class[lab])
        chosen.append(rng.choice(members, size=m, replace=False))
    return np.sort(np.concatenate(chosen))


def rebalance_regression(
    targets: Sequence[float], bins: int = 10, seed: int = 0
) -> np.ndarray:
    """Equal-width-bin undersampling to the smallest non-empty bin count."""
    t = np.asarray([x for x in targets if x is not None], dtype=np.float64)
    keep_map = np.array([i for i, x in enumerate(targets) if x is not None])
    if t.size == 0:
        raise ValidationError("no targets after filtering missing values")
    lo, hi = t.min(), t.max()
    if hi == lo:
        raise ValidationError("degenerate target range: all targets identical")
    bin_idx = np.minimum(((t - lo) / (hi - lo) * bins).astype(int), bins - 1)
    occupied = np.unique(bin_idx)
    if occupied.size < 2:
        raise ValidationError("need at least 2 non-empty bins")
    m = min(int((bin_idx == b).sum()) for b in occupied)
    rng = np.random.default_rng(seed)
    chosen = []
    for b in occupied:
        members = keep_map[bin_idx == b]
        chosen.append(rng.choice(members, size=m, replace=False))
    return np.sort(np.concatenate(chosen))


# ---------------------------------------------------------------------------
# SVM (SMO)
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class KernelSpec:
    name: str  # "linear" | "rbf"
    gamma: Optional[float] = None

    def __post_init__(self):
        if self.name not in ("linear", "rbf"):
            raise ValidationError(f"kernel must be linear or rbf, got {self.name!r}")
        if self.name == "rbf" and (self.gamma is None or self.gamma <= 0):
            raise ValidationError("rbf kernel needs gamma > 0")

    def matrix(self, A: np.ndarray, B: np.ndarray) -> np.ndarray:
        if self.name == "linear":
            return A @ B.T
        a2 = (A * A).sum(axis=1)[:, None]
        b2 = (B * B).sum(axis=1)[None, :]
        d2 = np.maximum(a2 + b2 - 2.0 * (A @ B.T), 0.0)
        return np.exp(-self.gamma * d2)


def make_kernel(kernel, gamma: Optional[float] = None) -> KernelSpec:
    if isinstance(kernel, KernelSpec):
        return kernel
    return KernelSpec(name=kernel, gamma=gamma)


@dataclass
class BinarySvm:
    """One trained binary machine: f(x) = sum alpha_i y_i K(x_i, x) + b."""

    kernel: KernelSpec
    C: float
    alphas: np.ndarray  # retained alpha_i > 0
    sv_x: np.ndarray
    sv_y: np.ndarray  # +-1
    b: float
    converged: bool
    max_kkt_violation: float

    def decision(self, X: np.ndarray) -> np.ndarray:
        if self.alphas.size == 0:
            return np.full(X.shape[0], self.b)
        K = self.kernel.matrix(X, self.sv_x)
        return K @ (self.alphas * self.sv_y) + self.b

    def dual_objective(self) -> float:
        """W(alpha) = sum alpha - 1/2 sum alpha_i alpha_j y_i y_j K_ij."""
        if self.alphas.size == 0:
            return 0.0
        K = self.kernel.matrix(self.sv_x, self.sv_x)
        ay = self.alphas * self.sv_y
        return float(self.alphas.sum() - 0.5 * ay @ K @ ay)


@dataclass
class SvmModel:
    """Multi-class wrapper: one-vs-rest binary machines in class order."""

    kernel: KernelSpec
    C: float
    classes: list
    machines: list
    n_features: int

    @property
    def converged(self) -> bool:
        return all(m.converged for m in self.machines)

    def decision_scores(self, X: np.ndarray) -> np.ndarray:
        X = np.asarray(X, dtype=np.float64)
        if X.shape[1] != self.n_features:
            raise ValidationError(
                f"feature dim {X.shape[1]} != training dim {self.n_features}"
            )
        if len(self.classes) == 2:
            f = self.machines[0].decision(X)
            return np.stack([-f, f], axis=1)
        return np.stack([m.decision(X) for m in self.machines], axis=1)


class _Smo:
    """SMO with maximal-violating-pair working-set selection.

    Maintains g_i = sum_j alpha_j y_j K_ij and picks the pair that most
    violates the optimality interval for the bias; the analytic pair update
    is the classic SMO step.  Fully deterministic (ties resolve to the
    lowest index).
    """

    def __init__(self, K, y, C, tol):
        self.K = K
        self.y = y.astype(np.float64)
        self.C = float(C)
        self.tol = float(tol)
        self.n = y.size
        self.alpha = np.zeros(self.n)
        self.g = np.zeros(self.n)  # sum_j alpha_j y_j K_ij
        self.b = 0.0
        # alphas this close to a box bound count as being on it
        self.bound_eps = 1e-10 * self.C

    def _masks(self):
        nz = self.alpha > self.bound_eps
        nc = self.alpha < self.C - self.bound_eps
        pos = self.y > 0
        up = (pos & nc) | (~pos & nz)  # these points demand b >= F_i
        low = (pos & nz) | (~pos & nc)  # these demand b <= F_i
        return up, low

    def run(self, max_iter: int) -> bool:
        """Iterate pair updates; True when the violating gap closed."""
        for _ in range(max_iter):
            up, low = self._masks()
            if not up.any() or not low.any():
                break
            F = self.y - self.g
            i = int(np.flatnonzero(up)[np.argmax(F[up])])
            j = int(np.flatnonzero(low)[np.argmin(F[low])])
            if F[i] - F[j] <= 2.0 * self.tol:
                break
            if not self._step(i, j, F):
                break  # no numerical progress possible on the worst pair
        self._set_bias()
        return self.kkt_max_violation() <= self.tol

    def _step(self, i: int, j: int, F) -> bool:
        ai, aj = self.alpha[i], self.alpha[j]
        yi, yj = self.y[i], self.y[j]
        if yi != yj:
            L, H = max(0.0, aj - ai), min(self.C, self.C + aj - ai)
        else:
            L, H = max(0.0, ai + aj - self.C), min(self.C, ai + aj)
        if L >= H:
            return False
        eta = self.K[i, i] + self.K[j, j] - 2.0 * self.K[i, j]
        if eta <= 0.0:  # flat direction: lean on box clipping
            eta = 1e-12
        aj_new = aj + yj * (F[j] - F[i]) / eta
        aj_new = min(max(aj_new, L), H)
        d_aj = aj_new - aj
        if abs(d_aj) < 1e-16 * (aj_new + aj + 1e-16):
            return False
        ai_new = ai + yi * yj * (aj - aj_new)
        d_ai = ai_new - ai
        self.alpha[i], self.alpha[j] = ai_new, aj_new
        self.g += yi * d_ai * self.K[i] + yj * d_aj * self.K[j]
        return True

    def _set_bias(self):
        """Midpoint of the KKT-feasible bias interval [max F_up, min F_low]."""
        up, low = self._masks()
        F = self.y - self.g
        lo = F[up].max() if up.any() else None
        hi = F[low].min() if low.any() else None
        if lo is None and hi is None:
            self.b = 0.0
        elif lo is None:
            self.b = float(hi)
        elif hi is None:
            self.b = float(lo)
        else:
            self.b = float((lo + hi) / 2.0)

    def kkt_max_violation(self) -> float:
        m = self.y * (self.g + self.b)
        viol = np.zeros(self.n)
        at_zero = self.alpha <= self.bound_eps
        at_c = self.alpha >= self.C - self.bound_eps
        interior = ~at_zero & ~at_c
        viol[at_zero] = np.maximum(0.0, 1.0 - m[at_zero])
        viol[interior] = np.abs(m[interior] - 1.0)
        viol[at_c] = np.maximum(0.0, m[at_c] - 1.0)
        return float(viol.max()) if self.n else 0.0


ALPHA_RETAIN = 1e-12


def _train_binary(X, y_signed, kernel: KernelSpec, C, tol, max_iter):
    K = kernel.matrix(X, X)
    smo = _Smo(K, y_signed, C, tol)
    converged = smo.run(max_iter)
    max_viol = smo.kkt_max_violation()
    keep = smo.alpha > ALPHA_RETAIN
    bal = float(np.abs((smo.alpha * y_signed).sum()))
    if bal > 1e-6:
        raise ArithmeticError(f"dual constraint drift: |sum alpha_i y_i| = {bal}")
    return BinarySvm(
        kernel=kernel,
        C=float(C),
        alphas=smo.alpha[keep].copy(),
        sv_x=X[keep].copy(),
        sv_y=y_signed[keep].copy(),
        b=float(smo.b),
        converged=converged,
        max_kkt_violation=max_viol,
    )


def train_svm(
    X,
    y: Sequence,
    kernel="linear",
    C: float = 1.0,
    tol: float = 1e-3,
    seed: int = 0,
    gamma: Optional[float] = None,
    max_iter: int = 100_000,
) -> SvmModel:
    """Train an SVM by SMO until no alpha pair violates KKT beyond tol.

    Two classes train one binary machine; more classes train one-vs-rest.
    The kernel matrix is dense, so memory is O(n^2) in training points.
    A hard cap on pair updates bounds runtime; hitting it leaves
    converged=False on the affected machine.  Training is deterministic;
    `seed` is accepted for API uniformity.
    """
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2:
        raise ValidationError("X must be 2-D")
    if C <= 0:
        raise ValidationError(f"C must be positive, got {C}")
    labels = list(y)
    if len(labels) != X.shape[0]:
        raise ValidationError("X and y lengths differ")
    classes = sorted(set(labels), key=str)
    if len(classes) < 2:
        raise ValidationError(f"need at least 2 classes, got {len(classes)}")
    spec = make_kernel(kernel, gamma)
    y_arr = np.array(labels, dtype=object)

    machines = []
    if len(classes) == 2:
        signed = np.where(y_arr == classes[1], 1.0, -1.0)
        machines.append(_train_binary(X, signed, spec, C, tol, max_iter))
    else:
        for cls in classes:
            signed = np.where(y_arr == cls, 1.0, -1.0)
            machines.append(_train_binary(X, signed, spec, C, tol, max_iter))
    return SvmModel(
        kernel=spec,
        C=float(C),
        classes=classes,
        machines=machines,
        n_features=X.shape[1],
    )


def predict_svm(model: SvmModel, X):
    """Predicted class per row plus the decision-score matrix.

    One-vs-rest argmax; exact score ties resolve to the lowest class index.
    """
    scores = model.decision_scores(np.asarray(X, dtype=np.float64))
    best = np.argmax(scores == scores.max(axis=1, keepdims=True), axis=1)
    return [model.classes[i] for i in best], scores


# ---------------------------------------------------------------------------
# Epsilon-insensitive linear regression
# ---------------------------------------------------------------------------

@dataclass
class RegModel:
    """Linear regressor t = w . x + b fit on epsilon-insensitive loss."""

    weights: np.ndarray
    bias: float
    epsilon: float
    lam: float
    loss_trace: list = field(default_factory=list)

    def predict(self, X) -> np.ndarray:
        return np.asarray(X, dtype=np.float64) @ self.weights + self.bias


def train_regressor(
    X,
    t: Sequence[float],
    epsilon: Optional[float] = None,
    lam: float = 1e-4,
    epochs: int = 500,
    seed: int = 0,
) -> RegModel:
    """Full-batch subgradient descent on epsilon-insensitive loss + L2.

    epsilon defaults to 0.1 * std(t).  Features and targets are standardized
    internally (the L2 penalty applies to the standardized weights); the
    returned model predicts in original units.  Steps are accepted only if
    they do not increase the loss, so the recorded trace is non-increasing.
    The fit is deterministic; `seed` is accepted for API uniformity.
    """
    X = np.asarray(X, dtype=np.float64)
    t = np.asarray(t, dtype=np.float64)
    if X.ndim != 2 or t.ndim != 1 or X.shape[0] != t.size:
        raise ValidationError("X must be (n, d) and t length n")
    t_std = t.std()
    if t_std == 0.0:
        raise ValidationError("degenerate targets: std(t) is zero")
    if epsilon is None:
        epsilon = 0.1 * float(t_std)
    if epsilon < 0:
        raise ValidationError(f"epsilon must be >= 0, got {epsilon}")

    x_mean, x_std = X.mean(axis=0), X.std(axis=0)
    x_std = np.where(x_std == 0.0, 1.0, x_std)
    t_mean = t.mean()
    Xs = (X - x_mean) / x_std
    ts = (t - t_mean) / t_std
    eps_s = epsilon / t_std

    def loss(w, b):
        resid = ts - (Xs @ w + b)
        hinge = np.maximum(np.abs(resid) - eps_s, 0.0)
        return float(hinge.mean() + lam * (w @ w))

    def subgrad(w, b):
        resid = ts - (Xs @ w + b)
        outside = np.abs(resid) > eps_s
        sgn = np.where(outside, np.sign(resid), 0.0)
        g_w = -(Xs.T @ sgn) / ts.size + 2.0 * lam * w
        g_b = -sgn.mean()
        return g_w, g_b

    w = np.zeros(X.shape[1])
    b = 0.0
    lr = 1.0
    current = loss(w, b)
    trace = []
    for _ in range(epochs):
        g_w, g_b = subgrad(w, b)
        accepted = False
        for _ in range(40):
            w_try = w - lr * g_w
            b_try = b - lr * g_b
            l_try = loss(w_try, b_try)
            if l_try <= current:
                accepted = True
                break
            lr /= 2.0
        if accepted:
            w, b, current = w_try, b_try, l_try
            lr = min(lr * 1.25, 1e3)
        trace.append(current)

    w_orig = (t_std * w) / x_std
    b_orig = float(t_mean + t_std * b - w_orig @ x_mean)
    return RegModel(
        weights=w_orig,
        bias=b_orig,
        epsilon=float(epsilon),
        lam=float(lam),
        loss_trace=trace,
    )


# ---------------------------------------------------------------------------
# Metric evaluation
# ---------------------------------------------------------------------------

@dataclass
class Metrics:
    task: str  # "classification" | "regression"
    n_eval: int
    accuracy: Optional[float] = None
    mae: Optional[float] = None
    per_group: Optional[dict] = None


def evaluate_metrics(
    predictions: Sequence,
    truth: Sequence,
    task: str,
    groups=None,
) -> Metrics:
    """Accuracy (classification) or mean absolute error (regression).

    `groups` is either a per-sample label sequence or a mapping
    group -> index list; either way a per-group breakdown is added.
    """
    if task not in ("classification", "regression"):
        raise ValidationError(f"task must be classification or regression, got {task!r}")
    preds = list(predictions)
    trues = list(truth)
    if len(preds) != len(trues):
        raise ValidationError("predictions and truth lengths differ")
    if not preds:
        raise ValidationError("empty input")

    metrics = _score(preds, trues, task)
    if groups is not None:
        per_group = {}
        if isinstance(groups, Mapping):
            for name, idx in groups.items():
                idx = list(idx)
                if any(i < 0 or i >= len(preds) for i in idx):
                    raise ValidationError(f"group {name!r} has out-of-range indices")
                if idx:
                    per_group[name] = _score(
                        [preds[i] for i in idx], [trues[i] for i in idx], task
                    )
        else:
            labels = list(groups)
            if len(labels) != len(preds):
                raise ValidationError("group labels length differs from predictions")
            for name in sorted(set(labels), key=str):
                idx = [i for i, g in enumerate(labels) if g == name]
                per_group[name] = _score(
                    [preds[i] for i in idx], [trues[i] for i in idx], task
                )
        metrics.per_group = per_group
    return metrics


def _score(preds, trues, task) -> Metrics:
    n = len(preds)
    if task == "classification":
        correct = sum(1 for p, t in zip(preds, trues) if p == t)
        return Metrics(task=task, n_eval=n, accuracy=correct / n)
    err = float(np.mean(np.abs(np.asarray(preds, float) - np.asarray(trues, float))))
    return Metrics(task=task, n_eval=n, mae=err)


# ---------------------------------------------------------------------------
# Subgroup lag curves
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class LagEpoch:
    epoch: int
    overall_train_acc: float
    subgroup_train_acc: float
    rest_train_acc: float
    overall_val_acc: float
    subgroup_val_acc: float


@dataclass
class LagReport:
    entries: list
    subgroup_ids: list


def logistic_loss_grad(w, b, X, y01):
    """Mean cross-entropy and its exact gradient (stable formulation)."""
    z = X @ w + b
    loss = float(np.mean(np.logaddexp(0.0, z) - y01 * z))
    p = 1.0 / (1.0 + np.exp(-z))
    g_w = X.T @ (p - y01) / y01.size
    g_b = float(np.mean(p - y01))
    return loss, g_w, g_b


def train_lag_curves(
    X,
    y: Sequence,
    subgroup_mask,
    epochs: int = 50,
    lr: float = 0.1,
    seed: int = 0,
    val_data=None,
    val_fraction: float = 0.15,
    subgroup_ids: Optional[list] = None,
) -> LagReport:
    """Per-epoch accuracy of a logistic classifier, subgroup vs the rest.

    The subgroup stays in the training data; only its accuracy is tracked
    separately.  Validation comes from `val_data = (X_val, y_val, mask_val)`
    or, by default, a seeded stratified holdout of `val_fraction`.  Slices
    that end up empty record NaN.
    """
    X = np.asarray(X, dtype=np.float64)
    mask = np.asarray(subgroup_mask, dtype=bool)
    labels = list(y)
    if X.shape[0] != len(labels) or mask.size != len(labels):
        raise ValidationError("X, y and subgroup_mask lengths differ")
    if not mask.any():
        raise ValidationError("subgroup is empty")
    if mask.all():
        raise ValidationError("subgroup must be a strict subset")
    classes = sorted(set(labels), key=str)
    if len(classes) != 2:
        raise ValidationError(f"lag curves need exactly 2 classes, got {len(classes)}")
    y01 = np.array([1.0 if lab == classes[1] else 0.0 for lab in labels])
    if subgroup_ids is None:
        subgroup_ids = [int(i) for i in np.nonzero(mask)[0]]

    if val_data is not None:
        X_val, y_val_raw, mask_val = val_data
        X_val = np.asarray(X_val, dtype=np.float64)
        y_val = np.array([1.0 if lab == classes[1] else 0.0 for lab in y_val_raw])
        mask_val = np.asarray(mask_val, dtype=bool)
        X_tr, y_tr, mask_tr = X, y01, mask
    else:
        rng = np.random.default_rng(seed)
        val_idx = []
        for stratum in (np.nonzero(mask)[0], np.nonzero(~mask)[0]):
            n_val = int(np.floor(val_fraction * stratum.size))
            perm = rng.permutation(stratum.size)
            val_idx.extend(stratum[perm[:n_val]])
        val_sel = np.zeros(len(labels), dtype=bool)
        val_sel[val_idx] = True
        X_tr, y_tr, mask_tr = X[~val_sel], y01[~val_sel], mask[~val_sel]
        X_val, y_val, mask_val = X[val_sel], y01[val_sel], mask[val_sel]

    def acc(Xp, yp, sel=None):
        if sel is not None:
            Xp, yp = Xp[sel], yp[sel]
        if yp.size == 0:
            return float("nan")
        pred = (Xp @ w + b > 0.0).astype(float)
        return float((pred == yp).mean())

    w = np.zeros(X.shape[1])
    b = 0.0
    entries = []
    for epoch in range(1, epochs + 1):
        _, g_w, g_b = logistic_loss_grad(w, b, X_tr, y_tr)
        w -= lr * g_w
        b -= lr * g_b
        entries.append(
            LagEpoch(
                epoch=epoch,
                overall_train_acc=acc(X_tr, y_tr),
                subgroup_train_acc=acc(X_tr, y_tr, mask_tr),
                rest_train_acc=acc(X_tr, y_tr, ~mask_tr),
                overall_val_acc=acc(X_val, y_val),
                subgroup_val_acc=acc(X_val, y_val, mask_val),
            )
        )
    return LagReport(entries=entries, subgroup_ids=list(subgroup_ids))
