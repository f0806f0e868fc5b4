"""Acceptance suite: one test per criterion, each printing PASS/FAIL.

Run with `pytest tests/test_acceptance.py -s` to see the per-criterion
lines.  Every tolerance is pinned here; no criterion defers calibration.
"""

import sys
import time
from contextlib import contextmanager

import numpy as np
import pytest

from embaudit.cli import main as cli_main
from embaudit.cluster_tools import independence_expectation
from embaudit.data_model import split_dataset
from embaudit.image_analysis import edge_profile, estimate_shift, aggregate_profiles
from embaudit.probes import (
    make_kernel,
    predict_svm,
    rebalance_classification,
    train_lag_curves,
    train_svm,
)
from embaudit.synth import (
    SynthEmbeddingSpec,
    SynthImageSpec,
    generate_embeddings,
    generate_neck_images,
)
from embaudit.tsne import (
    TsneParams,
    bh_kl_grad,
    calibrate_affinities,
    conditional_entropy_bits,
    exact_kl_grad,
    kl_divergence,
    tsne_layout,
    _sq_distances,
)

PAPER_RATES = (211 / 11186, 411 / 11186, 347 / 11186)
PAPER_N = 11186


@contextmanager
def criterion(name):
    try:
        yield
    except BaseException:
        print(f"FAIL  {name}", file=sys.stderr, flush=True)
        raise
    print(f"PASS  {name}", file=sys.stderr, flush=True)


def test_independence_baseline():
    with criterion("independence baseline: E3 = 0.24 +- 0.01, E2 = 26.3 +- 0.5, < 1 ms"):
        t0 = time.perf_counter()
        expected = independence_expectation(PAPER_RATES, PAPER_N)
        elapsed = time.perf_counter() - t0
        assert abs(expected[3] - 0.24) <= 0.01, expected[3]
        assert abs(expected[2] - 26.3) <= 0.5, expected[2]
        assert elapsed < 1e-3, f"{elapsed * 1e3:.3f} ms"


def test_observed_vs_expected_gap():
    with criterion("observed-vs-expected gap: ratios > 5x (k=2) and > 100x (k=3), < 1 ms"):
        t0 = time.perf_counter()
        expected = independence_expectation(PAPER_RATES, PAPER_N)
        ratio_2 = 141 / expected[2]
        ratio_3 = 34 / expected[3]
        elapsed = time.perf_counter() - t0
        assert ratio_2 > 5.0, ratio_2
        assert ratio_3 > 100.0, ratio_3
        assert elapsed < 1e-3, f"{elapsed * 1e3:.3f} ms"


def test_tsne_correctness():
    with criterion("t-SNE: calibration 1e-3, exact grad 1e-4, BH 5%, purity >= 0.9, < 120 s"):
        t0 = time.perf_counter()

        # (a) per-row perplexity within 1e-3 of the target (N=500, d=32)
        rng = np.random.default_rng(0)
        X = rng.normal(size=(500, 32))
        target = 50.0
        aff = calibrate_affinities(X, target, tol=1e-5)
        d2 = _sq_distances(X)
        worst = 0.0
        for i in range(500):
            row = np.delete(d2[i], i)
            h, _ = conditional_entropy_bits(row, aff.betas[i])
            worst = max(worst, abs(2.0**h - target))
        assert worst <= 1e-3, worst

        # (b) exact-mode gradient vs central finite differences (N <= 50)
        Xs = rng.normal(size=(40, 8))
        aff_s = calibrate_affinities(Xs, 10.0)
        Y = rng.normal(size=(40, 2))
        _, grad = exact_kl_grad(aff_s.probabilities, Y)
        h = 1e-6
        num = np.zeros_like(Y)
        for i in range(40):
            for k in range(2):
                Yp, Ym = Y.copy(), Y.copy()
                Yp[i, k] += h
                Ym[i, k] -= h
                num[i, k] = (
                    kl_divergence(aff_s, Yp) - kl_divergence(aff_s, Ym)
                ) / (2 * h)
        rel = np.linalg.norm(grad - num) / np.linalg.norm(num)
        assert rel <= 1e-4, rel

        # (c) Barnes-Hut vs exact gradient at theta = 0.5, N = 2000
        Xb = np.vstack([rng.normal(loc=c, size=(500, 10)) for c in (0, 4, 8, 12)])
        aff_b = calibrate_affinities(Xb, 30.0, mode="sparse")
        Yb = rng.normal(size=(2000, 2))
        _, g_exact = exact_kl_grad(aff_b.probabilities, Yb)
        _, g_bh = bh_kl_grad(aff_b.probabilities, Yb, theta=0.5)
        rel_bh = np.linalg.norm(g_bh - g_exact) / np.linalg.norm(g_exact)
        assert rel_bh <= 0.05, rel_bh

        # (d) 3 well-separated clusters, 10-NN purity >= 0.9
        centers = np.zeros((3, 50))
        centers[1, 0] = 10.0
        centers[2, 1] = 10.0
        Xc = np.vstack([rng.normal(size=(200, 50)) + c for c in centers])
        labels = np.repeat([0, 1, 2], 200)
        res = tsne_layout(Xc, TsneParams(perplexity=50.0, iterations=1000, seed=1))
        Yc = res.coords()
        dc = ((Yc[:, None, :] - Yc[None, :, :]) ** 2).sum(-1)
        np.fill_diagonal(dc, np.inf)
        nn = np.argsort(dc, axis=1)[:, :10]
        purity = float((labels[nn] == labels[:, None]).mean())
        assert purity >= 0.9, purity

        elapsed = time.perf_counter() - t0
        assert elapsed < 120.0, f"{elapsed:.1f} s"


def qp_dual_oracle(K, y, C):
    import cvxopt

    cvxopt.solvers.options["show_progress"] = False
    cvxopt.solvers.options.update({"abstol": 1e-12, "reltol": 1e-12, "feastol": 1e-12})
    n = y.size
    Q = cvxopt.matrix(np.outer(y, y) * K)
    sol = cvxopt.solvers.qp(
        Q,
        cvxopt.matrix(-np.ones(n)),
        cvxopt.matrix(np.vstack([-np.eye(n), np.eye(n)])),
        cvxopt.matrix(np.hstack([np.zeros(n), C * np.ones(n)])),
        cvxopt.matrix(y.reshape(1, -1)),
        cvxopt.matrix(0.0),
    )
    a = np.array(sol["x"]).ravel()
    return float(a.sum() - 0.5 * (a * y) @ K @ (a * y))


def test_svm_correctness():
    with criterion("SVM: dual within 1e-6 of QP oracle, KKT within tol, XOR 1.0, < 10 s"):
        t0 = time.perf_counter()
        rng = np.random.default_rng(3)
        tol = 1e-8
        n_checked = 0
        for trial in range(10):
            X = rng.normal(size=(12, 3))
            y = np.where(X[:, 0] + 0.3 * rng.normal(size=12) > 0, 1.0, -1.0)
            if len(set(y)) < 2:
                continue
            for kern, gamma in (("linear", None), ("rbf", 0.7)):
                model = train_svm(X, y, kernel=kern, gamma=gamma, C=1.0, tol=tol)
                machine = model.machines[0]
                K = make_kernel(kern, gamma).matrix(X, X)
                signed = np.where(y == sorted(set(y))[1], 1.0, -1.0)
                obj_ref = qp_dual_oracle(K, signed, 1.0)
                assert abs(machine.dual_objective() - obj_ref) <= 1e-6
                assert machine.dual_objective() >= obj_ref - 1e-6
                assert machine.max_kkt_violation <= tol
                n_checked += 1
        assert n_checked >= 12

        X = np.array([[0.0, 0.0], [0.0, 1.0], [1.0, 0.0], [1.0, 1.0]])
        y = [0, 1, 1, 0]
        model = train_svm(X, y, kernel="rbf", gamma=1.0, C=10.0, tol=1e-4)
        preds, _ = predict_svm(model, X)
        assert preds == y
        assert model.machines[0].max_kkt_violation <= 1e-4

        elapsed = time.perf_counter() - t0
        assert elapsed < 10.0, f"{elapsed:.1f} s"


def test_planted_sex_bias_pipeline():
    with criterion("planted sex bias: overall >= 0.97, flipped <= 0.2, lag below, < 30 s"):
        t0 = time.perf_counter()
        spec = SynthEmbeddingSpec(
            n_subjects=1000, dim=32, separation=10.0, flipped_fraction=0.03, seed=5
        )
        ds, truth = generate_embeddings(spec)
        X = ds.matrix().astype(np.float64)
        y = np.array([ds.metadata[r.subject_id].sex for r in ds.records])
        flipped_mask = np.array([truth[r.subject_id].flipped for r in ds.records])

        split = split_dataset(ds, seed=5)
        train_idx = np.array(
            [i for i, r in enumerate(ds.records)
             if split.assignment[r.subject_id] == "train"]
        )
        keep = rebalance_classification(list(y[train_idx]), seed=5)
        train_sel = train_idx[keep]
        model = train_svm(X[train_sel], list(y[train_sel]), kernel="linear", C=1.0)
        preds, _ = predict_svm(model, X)
        correct = np.array(preds) == y
        overall = float(correct.mean())
        flipped_acc = float(correct[flipped_mask].mean())
        assert overall >= 0.97, overall
        assert flipped_acc <= 0.2, flipped_acc

        epochs = 40
        report = train_lag_curves(
            X, list(y), flipped_mask, epochs=epochs, lr=0.5, seed=5
        )
        first_half = report.entries[: epochs // 2]
        assert all(
            e.subgroup_train_acc < e.overall_train_acc for e in first_half
        )

        elapsed = time.perf_counter() - t0
        assert elapsed < 30.0, f"{elapsed:.1f} s"


def test_planted_framing_shift():
    with criterion("planted framing shift: mean-profile shift == 50, exact -100..100, < 30 s"):
        t0 = time.perf_counter()
        base_spec = SynthImageSpec(count=1000, noise_std=0.01, seed=0)
        moved_spec = SynthImageSpec(
            count=1000, noise_std=0.01, vertical_shift=50, seed=1
        )
        base_images, _ = generate_neck_images(base_spec)
        moved_images, _ = generate_neck_images(moved_spec)
        base_prof = aggregate_profiles([edge_profile(im) for im in base_images])
        moved_prof = aggregate_profiles([edge_profile(im) for im in moved_images])
        res = estimate_shift(base_prof, moved_prof)
        assert res.shift == 50, res.shift

        _, clean = generate_neck_images(SynthImageSpec(count=1, seed=2))
        for k in range(-100, 101):
            _, shifted = generate_neck_images(
                SynthImageSpec(count=1, vertical_shift=k, seed=2)
            )
            assert estimate_shift(clean, shifted).shift == k, k

        elapsed = time.perf_counter() - t0
        assert elapsed < 30.0, f"{elapsed:.1f} s"


def test_split_ratios():
    with criterion("split ratios: floor rule partitions exactly for n in {20, 100, 11186}"):
        from embaudit.data_model import Dataset, EmbeddingRecord, Region, SubjectMetadata

        for n in (20, 100, 11186):
            records, meta = [], {}
            vec = np.zeros(2, dtype=np.float32)
            for i in range(n):
                sid = f"S{i:06d}"
                meta[sid] = SubjectMetadata(sid)
                records.append(EmbeddingRecord(sid, Region.cervical, vec))
            ds = Dataset(dim=2, records=records, metadata=meta)
            split = split_dataset(ds, seed=n)
            train = split.subjects("train")
            val = split.subjects("val")
            test = split.subjects("test")
            assert len(train) == int(np.floor(0.80 * n))
            assert len(val) == int(np.floor(0.05 * n))
            assert len(test) == n - len(train) - len(val)
            assert set(train) | set(val) | set(test) == set(ds.subject_ids())
            assert len(train) + len(val) + len(test) == n


def run_cli(argv):
    return cli_main([str(a) for a in argv])


def test_determinism_across_runs_and_workers(tmp_path):
    with criterion("determinism: pipelines byte-identical across reruns and 1 vs 4 workers"):
        # synth -> probe -> bias -> report, twice
        artifacts = []
        for run in ("r1", "r2"):
            fx = tmp_path / run / "fx"
            probe = tmp_path / run / "probe"
            bias = tmp_path / run / "bias"
            rep = tmp_path / run / "rep"
            assert run_cli(
                ["synth", "embeddings", "--n", 60, "--dim", 12, "--flip", 0.05,
                 "--seed", 9, "-o", fx]
            ) == 0
            assert run_cli(
                ["probe", "--embeddings", fx / "embeddings.emb1",
                 "--metadata", fx / "metadata.csv", "--target", "sex",
                 "--label", "acc", "--seed", 9, "-o", probe]
            ) == 0
            assert run_cli(
                ["bias", "regions", "--predictions", probe / "predictions.csv",
                 "-o", bias]
            ) == 0
            assert run_cli(
                ["report", "table1", "--metrics", probe / "metrics.csv", "-o", rep]
            ) == 0
            artifacts.append(
                [
                    (fx / "embeddings.emb1").read_bytes(),
                    (fx / "metadata.csv").read_bytes(),
                    (probe / "metrics.csv").read_bytes(),
                    (probe / "predictions.csv").read_bytes(),
                    (bias / "consistency.csv").read_bytes(),
                    (rep / "table1.csv").read_bytes(),
                ]
            )
        assert artifacts[0] == artifacts[1]

        # synth images determinism
        img_bytes = []
        for run in ("i1", "i2"):
            out = tmp_path / run
            assert run_cli(
                ["synth", "images", "--count", 3, "--noise", 0.05, "--seed", 4,
                 "-o", out]
            ) == 0
            img_bytes.append(
                [(out / "images" / f"all_{k:05d}.pgm").read_bytes() for k in range(3)]
            )
        assert img_bytes[0] == img_bytes[1]

        # Barnes-Hut layout: 1 worker vs 4 workers
        fx = tmp_path / "r1" / "fx"
        layouts = []
        for threads in (1, 4):
            out = tmp_path / f"w{threads}"
            assert run_cli(
                ["tsne", "--embeddings", fx / "embeddings.emb1",
                 "--metadata", fx / "metadata.csv", "--perplexity", 10,
                 "--iterations", 40, "--seed", 9, "--exact-threshold", 0,
                 "--threads", threads, "-o", out]
            ) == 0
            layouts.append(
                ((out / "layout.csv").read_bytes(), (out / "kl_trace.csv").read_bytes())
            )
        assert layouts[0] == layouts[1]
