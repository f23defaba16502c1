import json

import numpy as np
import pytest

from crossmeta.data import default_specs, generate, sister_pairs
from crossmeta.encoders import EncoderConfig, ModelParams
from crossmeta.evaluation import (EvalReport, GridSpec, HeatmapGrid, class_heatmap, evaluate,
                                  export_location_embeddings, range_mask, report_from_probs,
                                  run_ablation, run_pipeline)
from crossmeta.training import TrainConfig, finetune, init_head, init_params, predict, pretrain

TINY = EncoderConfig(image_dim=8, image_hidden=16, text_width=8, meta_frequencies=4, meta_hidden=16,
                     shared_dim=16, head_hidden=16)
SMALL_GRID = GridSpec(6, 12)


@pytest.fixture(scope="module")
def tiny_data():
    return generate(default_specs(feature_dim=8), 12, seed=0)


@pytest.fixture(scope="module")
def trained(tiny_data):
    train, _ = tiny_data
    cfg = TrainConfig(epochs=15, finetune_epochs=5, batch_size=16, freeze_encoders=False)
    params, _ = pretrain(train, cfg, TINY)
    params, _ = finetune(train, params, cfg, TINY)
    return params


def fast(**kw):
    base = dict(epochs=2, finetune_epochs=2, batch_size=16)
    base.update(kw)
    return TrainConfig(**base)


# ----------------------------------------------------------------- metrics

def test_perfect_predictor():
    labels = np.array([0, 1, 2, 2, 1, 0])
    r = report_from_probs(labels, np.eye(3)[labels], 3, pairs=[(0, 1)])
    assert r.accuracy == 1.0 and r.sister_accuracy == 1.0
    assert r.per_class_accuracy == [1.0, 1.0, 1.0]
    conf = np.array(r.confusion)
    assert np.array_equal(conf, np.diag(np.diag(conf)))
    assert np.diag(conf).tolist() == [2, 2, 2]


def test_constant_predictor_on_balanced_classes():
    labels = np.repeat(np.arange(4), 5)
    probs = np.tile(np.eye(4)[2], (20, 1))
    assert report_from_probs(labels, probs, 4).accuracy == pytest.approx(1 / 4, abs=1e-15)


def test_hand_counted_example():
    labels = [0, 0, 0, 1, 1, 1, 2, 2, 2, 2]
    preds = [0, 1, 0, 1, 1, 0, 2, 2, 1, 2]
    r = report_from_probs(labels, np.eye(3)[preds], 3, pairs=[(0, 1)])
    # correct: 0,2,3,4,6,7,9 -> 7 of 10
    assert r.accuracy == 0.7
    assert r.per_class_accuracy == pytest.approx([2 / 3, 2 / 3, 3 / 4])
    assert r.confusion == [[2, 1, 0], [1, 2, 0], [0, 1, 3]]
    # sister pair restricted to labels {0,1}: rows 0..5, binary choice between 0 and 1
    assert r.sister_pair_accuracy == {"0-1": pytest.approx(4 / 6)}


def test_sister_choice_ignores_third_class():
    labels = np.array([0, 1])
    probs = np.array([[0.3, 0.1, 0.6], [0.1, 0.3, 0.6]])
    r = report_from_probs(labels, probs, 3, pairs=[(1, 0)])
    assert r.accuracy == 0.0 and r.sister_pair_accuracy == {"0-1": 1.0}


def test_report_json_round_trip_with_stable_keys():
    r = report_from_probs([0, 1], np.eye(2), 2, pairs=[(0, 1)], seed=3, variant="full")
    text = r.to_json()
    keys = list(json.loads(text))
    assert keys == sorted(keys)
    assert EvalReport.from_json(text) == r


def test_evaluation_is_pure(tiny_data, trained):
    _, test = tiny_data
    pairs = sister_pairs(default_specs(feature_dim=8))
    assert evaluate(test, trained, TINY, pairs).to_json() == evaluate(test, trained, TINY, pairs).to_json()


# ---------------------------------------------------------------- ablation

def test_empty_drop_reproduces_full_run_bitwise(tiny_data):
    train, test = tiny_data
    cfg = fast()
    out = run_ablation(train, test, cfg, TINY, {"a": (), "b": ()})
    full, _ = run_pipeline(train, test, cfg, TINY)
    assert out["a"][0].confusion == out["b"][0].confusion == full.confusion
    assert out["a"][0].accuracy == full.accuracy


def test_dropping_every_term_skips_pretraining(tiny_data):
    train, _ = tiny_data
    cfg = fast(terms=())
    params, hist = pretrain(train, cfg, TINY)
    assert params.equal(init_params(TINY, cfg))
    assert all(r["total"] == 0.0 for r in hist.records)


def test_ablation_rejects_unknown_term(tiny_data):
    train, test = tiny_data
    with pytest.raises(KeyError):
        run_ablation(train, test, fast(), TINY, {"bad": ("XY",)})


def test_ablation_runs_each_seed(tiny_data):
    train, test = tiny_data
    out = run_ablation(train, test, fast(epochs=1, finetune_epochs=1), TINY, {"two": ("MT", "TM", "MI", "IM")},
                       seeds=[0, 1])
    assert [r.seed for r in out["two"]] == [0, 1]
    assert all(r.variant == "two" for r in out["two"])


# ------------------------------------------------------------------ exports

def test_export_row_count_and_csv(tmp_path):
    params = ModelParams.initialize(TINY)
    table = export_location_embeddings(params, TINY, SMALL_GRID, 100, tmp_path / "e.csv")
    assert table.shape == (72, 2 + TINY.shared_dim)
    lines = (tmp_path / "e.csv").read_text().splitlines()
    assert len(lines) == 73
    assert lines[0].split(",")[:3] == ["lat", "lon", "e0"]


def test_zero_weight_encoder_gives_identical_rows():
    params = ModelParams.initialize(TINY)
    for n in params.names("meta"):
        params[n] = np.zeros_like(params[n])
    emb = export_location_embeddings(params, TINY, SMALL_GRID)[:, 2:]
    assert np.all(emb == emb[0])


def test_trained_embeddings_spatially_smooth(trained):
    grid = GridSpec(60, 120)
    table = export_location_embeddings(trained, TINY, grid)
    lat, lon, emb = table[:, 0], table[:, 1], table[:, 2:]
    eq = np.flatnonzero(np.isclose(lat, 1.5))
    a, b = emb[eq[30]], emb[eq[31]]
    south = np.flatnonzero(np.isclose(lat, -1.5))
    # antipode of (1.5, lon) is (-1.5, lon + 180)
    anti = emb[south[(30 + 60) % 120]]
    assert a @ b > a @ anti


def test_heatmap_bounded_and_written(tmp_path, trained):
    hm = class_heatmap(trained, TINY, 0, np.zeros(8), 150, SMALL_GRID)
    assert hm.probs.shape == (6, 12)
    assert np.all((hm.probs >= 0) & (hm.probs <= 1))
    hm.write(tmp_path / "h.csv")
    back = HeatmapGrid.read(tmp_path / "h.csv")
    assert back.grid == SMALL_GRID and back.class_id == 0 and back.date == 150
    np.testing.assert_array_equal(back.probs, hm.probs)
    head = json.loads((tmp_path / "h.csv.json").read_text())
    assert set(head) >= {"bbox", "resolution", "class_id", "date"}


def test_uniform_head_gives_flat_map():
    params = init_head(ModelParams.initialize(TINY), TINY, TrainConfig())
    params["head.w2"] = np.zeros_like(params["head.w2"])
    hm = class_heatmap(params, TINY, 4, np.ones(8), 10, SMALL_GRID)
    np.testing.assert_allclose(hm.probs, 1 / 12, atol=1e-15)


def test_heatmap_argmax_invariant_to_logit_scaling(trained):
    lat, lon = SMALL_GRID.mesh()
    x = np.tile(np.linspace(-1, 1, 8), (lat.size, 1))
    date = np.full(lat.size, 200)
    a, _ = predict(trained, x, lat, lon, date, TINY)
    scaled = trained.clone()
    scaled["head.w2"] = scaled["head.w2"] * 3.5
    scaled["head.b2"] = scaled["head.b2"] * 3.5
    b, _ = predict(scaled, x, lat, lon, date, TINY)
    assert np.array_equal(a, b)


def test_range_mask_matches_distance():
    m = range_mask(GridSpec(60, 120), (40.0, -100.0), 12.0)
    assert m.shape == (60, 120) and 0 < m.sum() < 60 * 120
    lat, lon = GridSpec(60, 120).centers()
    i, j = np.argmin(np.abs(lat - 40)), np.argmin(np.abs(lon + 100))
    assert m[i, j] and not m[i, (j + 60) % 120]


def test_heatmap_rejects_bad_class():
    with pytest.raises(ValueError):
        class_heatmap(ModelParams.initialize(TINY), TINY, 12, np.zeros(8))
