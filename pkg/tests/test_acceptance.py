"""Acceptance criteria, each checked at its stated tolerance.

Every test prints one ``criterion N PASS/FAIL`` line; the lines are also
collected into the pytest terminal summary. Run just this file with

    pytest tests/test_acceptance.py -v -s
"""
import json
import math
import time
from dataclasses import replace

import numpy as np
import pytest

from crossmeta import autodiff as ad
from crossmeta.autodiff import Tensor
from crossmeta.cli import main as cli_main
from crossmeta.data import default_specs, generate, sister_pairs
from crossmeta.encoders import EncoderConfig, ModelParams, embed_image, embed_meta, embed_text, \
    encode_meta_features
from crossmeta.evaluation import GridSpec, class_heatmap, range_mask, run_pipeline
from crossmeta.loss import (ALL_TERMS, LOGIT_SCALE_NAME, TWO_TERMS, brute_force_total_loss,
                            build_positive_mask, pair_loss, similarity_logits, total_loss)
from crossmeta.training import Adam, AdamW, TrainConfig, finetune, pretrain
from helpers import central_diff, cross_entropy_diag, record_criterion, rel_err

SEEDS = range(5)


def unit_rows(rng, b, d):
    x = rng.normal(size=(b, d))
    return x / np.linalg.norm(x, axis=1, keepdims=True)


# ------------------------------------------------------------ criterion 1

GRAD_ENC = EncoderConfig(image_dim=5, image_hidden=6, num_classes=3, text_width=4, meta_frequencies=2,
                         meta_hidden=6, shared_dim=8, head_hidden=5, activation="softplus")


def six_term_objective(p, x, classes, mf):
    zi = embed_image(x, p, "softplus")
    zt = embed_text(classes, p)
    zm = embed_meta(mf, p, "softplus")
    return total_loss(zi, zt, zm, classes, p[LOGIT_SCALE_NAME]).loss


def test_criterion_1_gradient_suite():
    start = time.perf_counter()
    worst = 0.0
    for seed in range(10):
        rng = np.random.default_rng(seed)
        params = ModelParams.initialize(GRAD_ENC, rng)
        params[LOGIT_SCALE_NAME] = np.array(math.log(1 / rng.uniform(0.05, 0.5)))
        names = [n for n in params if not n.startswith("head.")]
        x = rng.normal(size=(4, GRAD_ENC.image_dim))
        classes = np.array([0, 1, 1, rng.integers(0, 3)])
        mf = encode_meta_features(rng.uniform(-80, 80, 4), rng.uniform(-170, 170, 4),
                                  rng.integers(1, 366, 4), GRAD_ENC.meta_frequencies)
        leaves = params.leaves(names)
        ad.backward(six_term_objective(leaves, x, classes, mf))
        num = central_diff(lambda a: six_term_objective({k: Tensor(v) for k, v in a.items()}, x, classes, mf).item(),
                           {n: params[n].copy() for n in names})
        worst = max(worst, max(rel_err(leaves[n].grad, num[n]) for n in names))
    elapsed = time.perf_counter() - start
    ok = worst < 1e-4 and elapsed < 30
    record_criterion(1, "six-term gradients vs central differences, B=4 D=8, 10 seeds", ok,
                     f"max rel err {worst:.2e} (< 1e-4), {elapsed:.1f} s (< 30 s)")
    assert ok


# ------------------------------------------------------------ criterion 2

def test_criterion_2_oracle_equivalence():
    start = time.perf_counter()
    worst = 0.0
    for case in range(50):
        rng = np.random.default_rng(1000 + case)
        b = 2 + case % 7
        labels = rng.integers(0, max(1, b // 2), size=b)
        I, T, M = (unit_rows(rng, b, 8) for _ in range(3))
        tau = float(rng.choice([0.007, 0.07, 0.5]))
        got = total_loss(Tensor(I), Tensor(T), Tensor(M), labels, tau)
        ref = brute_force_total_loss(I, T, M, labels, tau)
        worst = max(worst, abs(got.total - ref["total"]), *(abs(got.terms[k] - ref[k]) for k in ALL_TERMS))
    elapsed = time.perf_counter() - start
    ok = worst <= 1e-9 and elapsed < 10
    record_criterion(2, "total_loss vs brute-force oracle, 50 cases B in 2..8", ok,
                     f"max abs diff {worst:.2e} (<= 1e-9), {elapsed:.1f} s (< 10 s)")
    assert ok


# ------------------------------------------------------------ criterion 3

def test_criterion_3_unique_labels_reduce_to_cross_entropy():
    worst = 0.0
    for seed in range(20):
        rng = np.random.default_rng(seed)
        b = 2 + seed % 7
        a, t = unit_rows(rng, b, 8), unit_rows(rng, b, 8)
        tau = float(rng.choice([0.007, 0.1, 1.0]))
        loss, _ = pair_loss(Tensor(a), Tensor(t), build_positive_mask(np.arange(b), np.arange(b)), tau)
        logits = (a @ t.T / tau).tolist()
        worst = max(worst, abs(loss.item() - cross_entropy_diag(logits)))
    ok = worst <= 1e-10
    record_criterion(3, "unique-label pair loss equals diagonal cross-entropy", ok,
                     f"max abs diff {worst:.2e} (<= 1e-10)")
    assert ok


# ------------------------------------------------------------ criterion 4

def test_criterion_4_invariant_suite():
    rng = np.random.default_rng(0)
    checks = {}

    # permutation invariance of the total loss
    b = 8
    labels = rng.integers(0, 4, b)
    I, T, M = (unit_rows(rng, b, 16) for _ in range(3))
    base = total_loss(Tensor(I), Tensor(T), Tensor(M), labels, 0.07).total
    perm_err = 0.0
    for _ in range(10):
        pi = rng.permutation(b)
        perm_err = max(perm_err, abs(total_loss(Tensor(I[pi]), Tensor(T[pi]), Tensor(M[pi]), labels[pi], 0.07).total - base))
    checks["permutation"] = (perm_err <= 1e-12, f"{perm_err:.1e}")

    # unit-norm embeddings from every encoder
    enc = EncoderConfig()
    p = {k: Tensor(v) for k, v in ModelParams.initialize(enc).arrays.items()}
    zs = [embed_image(rng.normal(size=(6, 64)), p), embed_text(np.arange(6), p),
          embed_meta(encode_meta_features(rng.uniform(-90, 90, 6), rng.uniform(-179, 180, 6),
                                          rng.integers(1, 366, 6)), p)]
    norm_err = max(float(np.max(np.abs(np.linalg.norm(z.data, axis=1) - 1))) for z in zs)
    checks["unit norm"] = (norm_err <= 1e-6, f"{norm_err:.1e}")

    # total equals the sum of its terms
    br = total_loss(Tensor(I), Tensor(T), Tensor(M), labels, 0.07)
    sum_err = abs(br.total - sum(br.terms.values()))
    checks["total=sum"] = (sum_err <= 1e-12, f"{sum_err:.1e}")

    # seed determinism and freezing contract on a small run
    tiny = EncoderConfig(image_dim=8, image_hidden=16, text_width=8, meta_frequencies=4, meta_hidden=16,
                         shared_dim=16, head_hidden=16)
    train, _ = generate(default_specs(feature_dim=8), 12, seed=0)
    cfg = TrainConfig(epochs=3, finetune_epochs=2, batch_size=16)
    pa, ha = pretrain(train, cfg, tiny)
    pb, hb = pretrain(train, cfg, tiny)
    checks["determinism"] = (ha.records == hb.records and pa.equal(pb), "bitwise")
    tuned, _ = finetune(train, pa, cfg, tiny)
    frozen_ok = all(np.array_equal(tuned[n], pa[n]) for g in ("image", "meta", "text") for n in pa.names(g))
    checks["freezing"] = (frozen_ok, "bitwise")

    # AdamW with zero decay matches Adam
    store_a = ModelParams({"w": rng.normal(size=(4, 3))})
    store_b = store_a.clone()
    oa, ob = Adam(["w"], lr=0.01), AdamW(["w"], lr=0.01, weight_decay=0.0)
    adam_err = 0.0
    for _ in range(50):
        g = {"w": rng.normal(size=(4, 3))}
        oa.step(store_a, g)
        ob.step(store_b, g)
        adam_err = max(adam_err, float(np.max(np.abs(store_a["w"] - store_b["w"]))))
    checks["AdamW(0)=Adam"] = (adam_err <= 1e-15, f"{adam_err:.1e}")

    ok = all(v[0] for v in checks.values())
    record_criterion(4, "invariant suite", ok, ", ".join(f"{k} {'ok' if v[0] else 'BAD'} ({v[1]})"
                                                        for k, v in checks.items()))
    assert ok


# ----------------------------------------------------- criteria 5, 6, 7

BASE = TrainConfig(freeze_encoders=False)


@pytest.fixture(scope="module")
def default_runs():
    """Paired runs per seed on the default 12-class set: same data, init and order per seed."""
    enc = EncoderConfig()
    specs = default_specs()
    pairs = sister_pairs(specs)
    out = {"six": [], "image_only": [], "two_term": [], "drop_IM": [], "times": {}, "specs": specs}
    variants = {
        "six": BASE,
        "image_only": replace(BASE, terms=TWO_TERMS, use_meta=False),
        "two_term": replace(BASE, terms=TWO_TERMS),
        "drop_IM": replace(BASE, terms=tuple(t for t in ALL_TERMS if t not in ("IM", "MI"))),
    }
    for seed in SEEDS:
        train, test = generate(specs, 160, seed=seed)
        for name, cfg in variants.items():
            start = time.perf_counter()
            report, params = run_pipeline(train, test, replace(cfg, seed=seed), enc, pairs, name)
            out["times"][name] = out["times"].get(name, 0.0) + time.perf_counter() - start
            out[name].append(report)
            if name == "six":
                out.setdefault("six_params", []).append((params, test))
    return out


def mean_of(reports, key):
    return float(np.mean([getattr(r, key) for r in reports]))


def test_criterion_5_metadata_disambiguation(default_runs):
    six_acc = mean_of(default_runs["six"], "accuracy")
    six_sis = mean_of(default_runs["six"], "sister_accuracy")
    img_sis = mean_of(default_runs["image_only"], "sister_accuracy")
    elapsed = default_runs["times"]["six"] + default_runs["times"]["image_only"]
    ok = six_acc >= 0.90 and six_sis >= 0.90 and img_sis <= 0.60 and elapsed < 600
    record_criterion(5, "six-term + unfrozen fine-tune vs image-only, 5 seeds", ok,
                     f"six top-1 {six_acc:.3f} (>= 0.90), six sister {six_sis:.3f} (>= 0.90), "
                     f"image-only sister {img_sis:.3f} (<= 0.60), {elapsed:.0f} s (< 600 s)")
    assert ok


def test_criterion_6_ablation_direction(default_runs):
    six = np.array([r.sister_accuracy for r in default_runs["six"]])
    two = np.array([r.sister_accuracy for r in default_runs["two_term"]])
    no_im = np.array([r.sister_accuracy for r in default_runs["drop_IM"]])
    gap_two = float(np.mean(six - two))
    gap_im = float(np.mean(six - no_im))
    ok = gap_two >= 0.10 and gap_im >= 0.05
    record_criterion(6, "ablation direction on sister-pair accuracy, 5 paired seeds", ok,
                     f"six {six.mean():.3f}, two-term {two.mean():.3f} (gap {gap_two:+.3f}, need >= 0.10), "
                     f"drop I<->M {no_im.mean():.3f} (gap {gap_im:+.3f}, need >= 0.05)")
    assert ok


def heatmap_ratio(params, test, spec, grid):
    image = test.features[test.labels == spec.class_id].mean(axis=0)
    hm = class_heatmap(params, EncoderConfig(), spec.class_id, image, int(spec.season_center), grid)
    inside = range_mask(grid, spec.range_center, spec.range_radius)
    return float(hm.probs[inside].mean() / hm.probs[~inside].mean())


def test_criterion_7_heatmap(default_runs):
    spec = default_runs["specs"][0]  # first geographically separated sister class
    grid = GridSpec(60, 120)
    ratios = [heatmap_ratio(p, test, spec, grid) for p, test in default_runs["six_params"]]
    ok = ratios[0] >= 2.0
    record_criterion(7, "in-range / out-of-range class probability on 60x120 grid (reference run)", ok,
                     f"ratio {ratios[0]:.2f} (>= 2) for class {spec.class_id}; "
                     f"other seeds {', '.join(f'{r:.2f}' for r in ratios[1:])}")
    assert ok


# ------------------------------------------------------------ criterion 8

def test_criterion_8_cli_smoke(tmp_path, capsys):
    start = time.perf_counter()
    data, pre, ft, ev, hm = (tmp_path / n for n in ("data", "pre", "ft", "eval", "heatmap"))
    steps = [
        ["gen-data", "--seed", "0", "--out", data],
        ["pretrain", "--data", data, "--seed", "0", "--out", pre],
        ["finetune", "--data", data, "--checkpoint", pre / "checkpoint.npz", "--seed", "0", "--unfreeze",
         "--out", ft],
        ["eval", "--data", data, "--checkpoint", ft / "finetune.npz", "--out", ev],
        ["heatmap", "--data", data, "--checkpoint", ft / "finetune.npz", "--out", hm],
    ]
    codes = [cli_main([str(a) for a in argv]) for argv in steps]
    logs = [json.loads(line) for line in capsys.readouterr().out.splitlines() if line.startswith("{")]
    elapsed = time.perf_counter() - start

    report = json.loads((ev / "report.json").read_text()) if (ev / "report.json").exists() else {}
    schema_ok = (isinstance(report.get("accuracy"), float)
                 and len(report.get("confusion", [])) == 12
                 and len(report.get("sister_pair_accuracy", {})) == 4
                 and all(l["status"] == "ok" for l in logs) and len(logs) == 5)
    grid_ok = False
    if (hm / "heatmap.csv").exists():
        grid = np.loadtxt(hm / "heatmap.csv", delimiter=",")
        side = json.loads((hm / "heatmap.csv.json").read_text())
        grid_ok = grid.shape == (60, 120) and side["resolution"] == [60, 120] and np.all((grid >= 0) & (grid <= 1))
    ok = codes == [0] * 5 and schema_ok and grid_ok and elapsed < 900
    record_criterion(8, "CLI gen-data -> pretrain -> finetune -> eval -> heatmap on defaults", ok,
                     f"exit codes {codes}, report schema {'ok' if schema_ok else 'BAD'}, "
                     f"heatmap {'ok' if grid_ok else 'BAD'}, test top-1 {report.get('accuracy', float('nan')):.3f}, "
                     f"{elapsed:.0f} s (< 900 s)")
    assert ok
