import csv
import warnings

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from sklearn.metrics import accuracy_score, confusion_matrix, f1_score

from conftest import TINY
from geobridge import TrainConfig
from geobridge.data import SynthSpec, compute_stats, generate_synthetic, region_shift_spec, split_extrap
from geobridge.experiment import (ABLATION_ROWS, REFERENCE_ABLATION, TrainingError, embeddings, evaluate,
                                  export_embeddings, export_rgb, run_ablation, run_extrap, run_loro,
                                  train, write_ablation_csv)
from geobridge.metrics import argmax_lowest, report_from_predictions
from geobridge.model import expected_param_count
from geobridge.pca import pca_rgb

FAST = TrainConfig(**TINY, epochs=3, batch_size=32, lr=1e-3)


@pytest.fixture(scope="module")
def small_ds():
    return generate_synthetic(SynthSpec(3, 2, 5, 20, seed=2))


# -- metrics ---------------------------------------------------------------


def test_metrics_hand_case():
    rep = report_from_predictions([0, 0, 0, 1], [0, 0, 0, 0], 2)
    assert rep.per_class_f1[0] == pytest.approx(6 / 7, abs=1e-15)
    assert rep.per_class_f1[1] == 0.0
    assert rep.weighted_f1 == pytest.approx(0.642857142857, abs=1e-12)
    assert rep.accuracy == 0.75
    assert rep.confusion.tolist() == [[3, 0], [1, 0]]


def test_metrics_all_correct():
    y = np.array([0, 1, 2, 2, 1])
    rep = report_from_predictions(y, y, 3)
    assert rep.accuracy == 1.0 and rep.weighted_f1 == 1.0
    assert np.array_equal(rep.confusion, np.diag([1, 2, 2]))


def test_metrics_absent_class():
    rep = report_from_predictions([0, 1, 1], [0, 1, 0], 3)
    assert rep.support[2] == 0 and rep.per_class_f1[2] == 0.0
    assert rep.weighted_f1 == pytest.approx(1 / 3 * 2 / 3 + 2 / 3 * 2 / 3, abs=1e-15)


def test_argmax_ties_go_low():
    assert argmax_lowest(np.array([[0.4, 0.4, 0.2], [0.1, 0.45, 0.45]])).tolist() == [0, 1]


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 2**31 - 1), st.integers(2, 6), st.integers(1, 60))
def test_metrics_match_sklearn(seed, C, n):
    rng = np.random.default_rng(seed)
    y = rng.integers(0, C, n)
    p = np.where(rng.random(n) < 0.6, y, rng.integers(0, C, n))
    rep = report_from_predictions(y, p, C)
    labels = list(range(C))
    assert abs(rep.accuracy - accuracy_score(y, p)) < 1e-12
    assert abs(rep.weighted_f1 - f1_score(y, p, labels=labels, average="weighted", zero_division=0)) < 1e-12
    assert np.allclose(rep.per_class_f1, f1_score(y, p, labels=labels, average=None, zero_division=0),
                       rtol=0, atol=1e-12)
    assert np.array_equal(rep.confusion, confusion_matrix(y, p, labels=labels))
    # invariants recomputed from the confusion matrix alone
    cm = rep.confusion
    assert np.array_equal(cm.sum(axis=1), rep.support)
    assert rep.accuracy == pytest.approx(np.trace(cm) / n, abs=1e-15)
    f1 = [2 * cm[k, k] / (cm[k].sum() + cm[:, k].sum()) if cm[k].sum() + cm[:, k].sum() else 0.0
          for k in range(C)]
    assert abs(rep.weighted_f1 - sum(cm[k].sum() / n * f1[k] for k in range(C))) < 1e-12
    rn = rep.row_normalized()
    rows = rep.support > 0
    assert np.allclose(rn[rows].sum(axis=1), 1.0, rtol=0, atol=1e-12)
    assert not rn[~rows].any()


# -- training --------------------------------------------------------------


def test_zero_epochs_returns_initial_model(small_ds):
    from geobridge import build_model

    cfg = FAST.replace(epochs=0)
    model, hist = train(cfg, small_ds)
    assert len(hist) == 0
    fresh = build_model(cfg, 5, small_ds.class_scheme, small_ds.region_scheme)
    for k, v in fresh.parameters().items():
        assert np.array_equal(v, model.parameters()[k])


def test_training_deterministic(small_ds):
    a, ha = train(FAST, small_ds)
    b, hb = train(FAST, small_ds)
    assert ha.rows == hb.rows
    for k, v in a.parameters().items():
        assert np.array_equal(v, b.parameters()[k])
    c, _ = train(FAST.replace(seed=1), small_ds)
    assert any(not np.array_equal(v, c.parameters()[k]) for k, v in a.parameters().items())


def test_history_columns(small_ds, tmp_path):
    _, hist = train(FAST, small_ds)
    assert len(hist) == 3 and [r["epoch"] for r in hist.rows] == [0, 1, 2]
    for r in hist.rows:
        assert r["total"] == pytest.approx(r["l_lc"] + r["l_region"] + r["l_con"], rel=1e-12)
    hist.write_csv(tmp_path / "h.csv")
    rows = list(csv.DictReader(open(tmp_path / "h.csv")))
    assert list(rows[0]) == ["epoch", "l_lc", "l_region", "l_con", "total"]
    assert float(rows[2]["total"]) == hist.rows[2]["total"]


def test_stats_come_from_training_split_only(small_ds):
    res = run_extrap(FAST.replace(epochs=1), small_ds)
    tr = small_ds.subset(res.plan.folds[0].train)
    expected = compute_stats(tr)
    assert np.array_equal(res.model.stats.mean, expected.mean)
    assert not np.allclose(res.model.stats.mean, compute_stats(small_ds).mean, rtol=0, atol=1e-15)


def test_size_one_remainder_is_dropped(small_ds):
    # 120 samples, batch 119 leaves a single-sample tail batch each epoch
    model, hist = train(FAST.replace(batch_size=119, epochs=2), small_ds)
    assert len(hist) == 2


def test_non_finite_loss_aborts_with_coordinates(small_ds):
    cfg = FAST.replace(lr=1e300, epochs=5)
    with pytest.raises(TrainingError, match=r"epoch \d+, batch \d+"):
        with np.errstate(all="ignore"):
            train(cfg, small_ds)


def test_ablation_flags_rewire_input(small_ds):
    ds = generate_synthetic(region_shift_spec(3, 2, 6, 10))
    for flags in ABLATION_ROWS:
        cfg = FAST.replace(epochs=1, use_latlon=flags[0], learned_pe=flags[1], use_region=flags[2])
        model, _ = train(cfg, ds)
        assert model.input_width == (6 + 2 * cfg.pe_dim if flags[0] else 6)
        assert (model.pe_head is not None) == flags[1]
        assert (model.enc_spec is not None) == flags[2]
        assert model.num_parameters() == expected_param_count(cfg, 6, 3, 2)


def test_separable_training_accuracy(separable_run, separable_ds):
    res, _ = separable_run
    # independent oracle on the same data
    means = np.stack([separable_ds.features[separable_ds.label == c].mean(axis=0) for c in range(3)])
    d = ((separable_ds.features[:, None] - means[None]) ** 2).sum(axis=2)
    assert np.mean(d.argmin(axis=1) == separable_ds.label) >= 0.99
    assert res.train_report.accuracy >= 0.99


def test_evaluate_rejects_width_mismatch(small_ds):
    model, _ = train(FAST.replace(epochs=0), small_ds)
    other = generate_synthetic(SynthSpec(3, 2, 4, 5))
    with pytest.raises(ValueError):
        evaluate(model, other)


# -- protocols -------------------------------------------------------------


def test_loro_eight_regions():
    ds = generate_synthetic(SynthSpec(2, 8, 4, 6, seed=3))
    res = run_loro(FAST.replace(epochs=1, batch_size=64), ds)
    assert res.regions == list(ds.region_scheme.names)
    assert len(res.reports) == 8
    assert abs(res.mean_accuracy - sum(r.accuracy for r in res.reports) / 8) < 1e-12
    assert abs(res.mean_weighted_f1 - sum(r.weighted_f1 for r in res.reports) / 8) < 1e-12
    cover = np.zeros(len(ds), dtype=int)
    for f in res.plan.folds:
        assert not np.intersect1d(f.train, f.test).size
        cover[f.test] += 1
    assert np.all(cover == 1)


def test_ablation_table(small_ds, tmp_path):
    rows = run_ablation(FAST.replace(epochs=1), small_ds, "extrap")
    assert [r.flags for r in rows] == list(ABLATION_ROWS)
    assert len({r.plan_digest for r in rows}) == 1
    assert rows[-1].reference[:2] == (74.77, 73.59) and rows[0].reference[:2] == (74.49, 73.17)
    write_ablation_csv(rows, tmp_path / "a.csv")
    table = list(csv.reader(open(tmp_path / "a.csv")))
    assert len(table) == 7
    # any single row reproduces bit-exactly
    cfg = FAST.replace(epochs=1, use_latlon=True, learned_pe=False, use_region=True)
    again = run_extrap(cfg, small_ds, split_extrap(small_ds, seed=FAST.seed))
    assert again.report.weighted_f1 == rows[3].weighted_f1
    assert again.report.accuracy == rows[3].accuracy


def test_ablation_reference_table_complete():
    assert set(REFERENCE_ABLATION) == set(ABLATION_ROWS)
    # learned PE beats fixed PE in the reference numbers, both levels
    assert REFERENCE_ABLATION[(True, True, False)][1] > REFERENCE_ABLATION[(True, False, False)][1]


def test_unknown_scenario(small_ds):
    with pytest.raises(ValueError):
        run_ablation(FAST, small_ds, "nowhere")


# -- exports ---------------------------------------------------------------


@pytest.fixture(scope="module")
def trained_small(small_ds):
    return train(FAST.replace(epochs=2), small_ds)[0]


@pytest.mark.parametrize("which,width", [("z_inv", 8), ("z_spec", 8), ("positional", 8)])
def test_export_embeddings(trained_small, small_ds, tmp_path, which, width):
    p1, p2 = tmp_path / "a.csv", tmp_path / "b.csv"
    vec = export_embeddings(trained_small, small_ds, which, p1)
    export_embeddings(trained_small, small_ds, which, p2)
    assert vec.shape == (len(small_ds), width)
    assert p1.read_bytes() == p2.read_bytes()
    rows = list(csv.reader(open(p1)))
    assert rows[0][:5] == ["id", "lat", "lon", "region", "label"] and len(rows[0]) == 5 + width
    assert len(rows) == len(small_ds) + 1
    assert float(rows[1][5]) == vec[0, 0]


def test_positional_width_at_defaults(small_ds):
    model, _ = train(TrainConfig(epochs=0), small_ds)
    assert embeddings(model, small_ds, "positional").shape == (len(small_ds), 128)


def test_export_errors(small_ds):
    model, _ = train(FAST.replace(epochs=0, use_latlon=False, learned_pe=False, use_region=False), small_ds)
    with pytest.raises(ValueError):
        embeddings(model, small_ds, "positional")
    with pytest.raises(ValueError):
        embeddings(model, small_ds, "z_spec")


def test_export_rgb(trained_small, small_ds, tmp_path):
    rgb = export_rgb(trained_small, small_ds, tmp_path / "rgb.csv")
    assert rgb.shape == (len(small_ds), 3)
    assert np.all(rgb.min(axis=0) == 0.0) and np.all(rgb.max(axis=0) == 1.0)
    rows = list(csv.reader(open(tmp_path / "rgb.csv")))
    assert rows[0] == ["id", "lat", "lon", "r", "g", "b"]


# -- PCA -------------------------------------------------------------------


def svd_best_rank3_error(X):
    Xc = X - X.mean(axis=0)
    s = np.linalg.svd(Xc, compute_uv=False)
    return float(np.sum(s[3:] ** 2))


def test_pca_axis_aligned():
    rng = np.random.default_rng(0)
    X = rng.normal(size=(200, 3)) * np.array([1.0, 5.0, 2.0])
    res = pca_rgb(X)
    axes = np.abs(res.components)
    assert np.allclose(axes, np.eye(3)[[1, 2, 0]], atol=0.1)
    assert np.all(res.rgb.min(axis=0) == 0.0) and np.all(res.rgb.max(axis=0) == 1.0)


def test_pca_duplicates():
    X = np.random.default_rng(1).normal(size=(10, 6))
    res = pca_rgb(np.concatenate([X, X]))
    assert np.array_equal(res.rgb[:10], res.rgb[10:])


@pytest.mark.parametrize("seed", range(5))
def test_pca_matches_svd_oracle(seed):
    X = np.random.default_rng(seed).normal(size=(10, 8))
    res = pca_rgb(X)
    err = float(np.sum((X - res.reconstruct()) ** 2))
    assert abs(err - svd_best_rank3_error(X)) < 1e-9
    # any other rank-3 orthonormal projection does no better
    Q, _ = np.linalg.qr(np.random.default_rng(seed + 50).normal(size=(8, 3)))
    Xc = X - X.mean(axis=0)
    assert np.sum((Xc - Xc @ Q @ Q.T) ** 2) >= err - 1e-12


def test_pca_rank_deficient_pads():
    X = np.zeros((6, 4))
    X[:, 0] = np.arange(6.0)
    with pytest.warns(RuntimeWarning, match="rank 1"):
        res = pca_rgb(X)
    assert np.all(res.rgb[:, 1:] == 0.5)
    assert res.rgb[:, 0].min() == 0.0 and res.rgb[:, 0].max() == 1.0


def test_pca_preconditions():
    with pytest.raises(ValueError):
        pca_rgb(np.zeros((3, 5)))
    with pytest.raises(ValueError):
        pca_rgb(np.zeros((10, 2)))
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        pca_rgb(np.random.default_rng(0).normal(size=(5, 3)))


@pytest.mark.slow
@pytest.mark.xfail(strict=False, reason="a held-out region's shift is not identifiable from the other region")
def test_loro_full_beats_nogeo_on_region_shift():
    wins = 0
    for seed in range(5):
        ds = generate_synthetic(region_shift_spec(3, 2, 10, 100, step=4.0, seed=seed))
        cfg = TrainConfig(epochs=30, lr=1e-3, hidden=64, pe_hidden=64, pe_dim=16, seed=seed)
        full = run_loro(cfg, ds).mean_weighted_f1
        nogeo = run_loro(cfg.replace(use_latlon=False, learned_pe=False, use_region=False), ds).mean_weighted_f1
        wins += full > nogeo
    # one-sided sign test over 5 paired seeds: only 5/5 wins reaches p < 0.05
    assert wins == 5
