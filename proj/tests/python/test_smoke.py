import csv
import itertools

import numpy as np
import pytest

import df2am


def brute_triplet(emb, labels, margin):
    n = len(labels)
    d = np.linalg.norm(emb[:, None, :] - emb[None, :, :], axis=-1)
    total = 0.0
    for a in range(n):
        pos = max(d[a, p] for p in range(n) if p != a and labels[p] == labels[a])
        neg = min(d[a, q] for q in range(n) if labels[q] != labels[a])
        total += max(0.0, margin + pos - neg)
    return total


def test_lr_schedule():
    cfg = {"epochs": 80}
    assert [df2am.lr_at(e, cfg) for e in (0, 30, 50)] == [0.1, 0.01, 0.001]


def test_triplet_matches_brute_force():
    rng = np.random.default_rng(0)
    labels = [0, 0, 1, 1, 2, 2]
    for _ in range(20):
        emb = rng.normal(size=(6, 4))
        assert abs(df2am.batch_hard_triplet(emb, labels, 0.3) - brute_triplet(emb, labels, 0.3)) <= 1e-10


def test_affinity_invariants():
    rng = np.random.default_rng(1)
    rgb, ir = rng.normal(size=(4, 5)), rng.normal(size=(4, 5))
    d = df2am.affinity_matrix(rgb, ir)
    assert d.shape == (8, 8)
    assert np.allclose(d, d.T, atol=1e-10)
    assert np.allclose(np.diag(d), 0.0, atol=1e-10)
    assert np.allclose(d, df2am.affinity_matrix(3.0 * rgb, 0.5 * ir), atol=1e-10)
    g = df2am.ground_truth_affinity([0, 1, 0, 1] * 2)
    expected = np.sum(d * g) + np.sum(np.maximum(0.0, 0.3 - d) * (1 - g))
    assert abs(df2am.margin_affinity_loss(d, g, 0.3) - expected) <= 1e-10


def test_ranking_metrics():
    d = np.array([[0.1, 0.2, 0.9]])
    assert df2am.mean_ap(d, [4], [4, 4, 1]) == 1.0
    assert df2am.cmc(np.array([[0.1, 0.2, 0.3, 0.4, 0.5]]), [7], [1, 2, 7, 3, 4], [1, 5]) == [0.0, 1.0]
    with pytest.raises(df2am.ConfigError):
        df2am.cmc(d, [4], [4, 4, 1], [0])


def test_gradient_suite_per_term():
    errors = df2am.gradient_suite(seed=1, coordinates=20)
    assert set(errors) == {"L_ID", "L_BH", "L_D", "L_1", "L_A", "L_Final"}
    for name in ("L_ID", "L_BH", "L_D", "L_1", "L_A"):
        assert errors[name] <= 1e-4


def test_unknown_config_key_is_rejected():
    with pytest.raises(df2am.ConfigError):
        df2am.train({"epoch": 3})


def test_end_to_end(tmp_path):
    cfg = {
        "batch": {"identities": 2, "per_identity": 2},
        "epochs": 2,
        "data": {"identity_count": 10, "samples_per_identity": 4},
        "eval": {"repetitions": 2},
        "out_dir": str(tmp_path / "run"),
    }
    assert df2am.generate_dataset(tmp_path / "data.df2amds", cfg) == 80
    cfg["dataset_file"] = str(tmp_path / "data.df2amds")
    log = df2am.train(cfg)
    assert len(log["steps"]) == 4
    assert len(log["epochs"]) == 2
    assert all(np.isfinite(s["loss_final"]) for s in log["steps"])
    report = df2am.evaluate(tmp_path / "run" / "checkpoint.json", cfg)
    assert 0.0 < report["mAP"] <= 1.0
    assert report["ks"] == [1, 5, 10, 20]
    with open(tmp_path / "run" / "runlog.csv") as f:
        rows = list(csv.reader(f))
    assert rows[0][0] == "step" and len(rows) == 5
    again = df2am.train(cfg)
    assert again == log
