"""Acceptance suite: one test per criterion, one printed PASS/FAIL line each.

The slow criteria (4-10) train desk-scale models: a (1,1,1,1)-unit classifier
for the baseline timing criterion and (2,2,2,2)-unit classifiers plus
segmenters for the sweep-pattern criteria, three seeds each. Set
RESABLATE_TEST_CACHE=<dir> to reuse trained checkpoints across runs while
iterating; timing numbers are recorded at first training and replayed from
the cache.
"""

import hashlib
import json
import os
import time

import numpy as np
import pytest

from resablate import ops
from resablate.ablation import (
    AblationSpec,
    analytic_ablated_forward,
    fold_and_prune,
    run_protocol_e1,
    run_protocol_e2,
    run_protocol_e3,
    zero_kernels,
)
from resablate.checkpoint import load_checkpoint, save_checkpoint
from resablate.cli import main as cli_main
from resablate.datasets import gen_classification_dataset, gen_segmentation_dataset
from resablate.model import ResNetConfig, build_model
from resablate.reference import conv2d_naive, max_relative_error
from resablate.tensor import ConvKernel, Tensor
from resablate.training import Hyperparams, evaluate, train
from test_gradcheck import GRAD_CHECKS

SEEDS = (0, 1, 2)
TAU = 0.02
CLASSIFY_DATA = dict(n_per_class=200, classes=10, size=32, test_per_class=50)
SEGMENT_DATA = dict(n=512, test_n=128, size=32)


def report_line(criterion: int, ok: bool, detail: str) -> None:
    print(f"[criterion {criterion:2d}] {'PASS' if ok else 'FAIL'}  {detail}")


# ---------------------------------------------------------------------------
# trained-model fixtures (cached when RESABLATE_TEST_CACHE is set)
# ---------------------------------------------------------------------------

def _cache_dir():
    return os.environ.get("RESABLATE_TEST_CACHE")


def _trained(config: ResNetConfig, hyper: Hyperparams, data_kind: str,
             data_kwargs: dict):
    """Train (or load from cache) and return (model, test_set, meta)."""
    gen = gen_classification_dataset if data_kind == "classify" else \
        gen_segmentation_dataset
    train_set, test_set = gen(**data_kwargs)

    cache = _cache_dir()
    key = hashlib.sha256(json.dumps(
        [config.to_dict(), hyper.to_dict(), data_kind, data_kwargs],
        sort_keys=True).encode()).hexdigest()[:16]
    if cache:
        os.makedirs(cache, exist_ok=True)
        ckpt = os.path.join(cache, key + ".ckpt")
        meta_path = os.path.join(cache, key + ".json")
        if os.path.exists(ckpt) and os.path.exists(meta_path):
            with open(meta_path) as f:
                return load_checkpoint(ckpt), test_set, json.load(f)

    model = build_model(config)
    t0 = time.time()
    model, history = train(model, train_set, test_set, hyper)
    meta = {
        "elapsed": time.time() - t0,
        "final_metric": history[-1]["test_metric"],
        "train_losses": [h["train_loss"] for h in history],
    }
    if cache:
        save_checkpoint(model, ckpt)
        with open(meta_path, "w") as f:
            json.dump(meta, f)
    return model, test_set, meta


@pytest.fixture(scope="session")
def desk_baseline():
    """Criterion 4's model: units (1,1,1,1), seed 0, default hyperparameters."""
    config = ResNetConfig((8, 16, 32, 64), (1, 1, 1, 1), num_classes=10, seed=0)
    return _trained(config, Hyperparams(seed=0), "classify",
                    dict(CLASSIFY_DATA, seed=0))


@pytest.fixture(scope="session")
def desk_models():
    """(2,2,2,2)-unit classifiers for the sweep-pattern criteria."""
    out = {}
    for seed in SEEDS:
        config = ResNetConfig((8, 16, 32, 64), (2, 2, 2, 2), num_classes=10,
                              seed=seed)
        out[seed] = _trained(config, Hyperparams(seed=seed), "classify",
                             dict(CLASSIFY_DATA, seed=seed))
    return out


@pytest.fixture(scope="session")
def desk_reports(desk_models):
    """E1/E2/E3 reports per seed at the pattern tau."""
    out = {}
    for seed, (model, test_set, _) in desk_models.items():
        out[seed] = {
            "e1": run_protocol_e1(model, test_set, TAU),
            "e2": run_protocol_e2(model, test_set, TAU),
            "e3": run_protocol_e3(model, test_set, TAU),
        }
    return out


@pytest.fixture(scope="session")
def seg_models():
    out = {}
    for seed in SEEDS:
        config = ResNetConfig((8, 16, 32, 64), (2, 2, 2, 2), num_classes=1,
                              task="segment", seed=seed)
        out[seed] = _trained(config, Hyperparams(seed=seed), "segment",
                             dict(SEGMENT_DATA, seed=seed))
    return out


# ---------------------------------------------------------------------------
# criterion 1: analytic-oracle equivalence
# ---------------------------------------------------------------------------

def test_c01_analytic_oracle_equivalence():
    from _util import random_model

    t0 = time.time()
    worst = 0.0
    checked = 0
    pool = [
        dict(stages=(4, 8), units=(1, 1), task="classify"),
        dict(stages=(4, 8), units=(2, 1), task="classify"),
        dict(stages=(4, 8, 16), units=(1, 2, 1), task="classify"),
        dict(stages=(4, 8), units=(2, 2), task="segment"),
        dict(stages=(4, 8, 16), units=(1, 1, 1), task="segment"),
    ]
    for trial in range(20):
        rng = np.random.default_rng(1000 + trial)
        m = random_model(rng, **pool[trial % len(pool)])
        x = rng.normal(size=(2, 3, 16, 16)).astype(np.float32)
        for addr in m.backbone_addresses():
            if addr.slot not in ("conv1", "conv2", "proj"):
                continue
            zeroed = zero_kernels(m, AblationSpec(frozenset([addr])))
            err = max_relative_error(analytic_ablated_forward(m, x, addr),
                                     zeroed.forward(x))
            worst = max(worst, err)
            checked += 1
    elapsed = time.time() - t0
    ok = worst <= 1e-5 and elapsed < 10.0
    report_line(1, ok, f"{checked} ablations over 20 models, max rel err "
                       f"{worst:.2e} (<=1e-5), {elapsed:.1f}s (<10s)")
    assert worst <= 1e-5
    assert elapsed < 10.0


# ---------------------------------------------------------------------------
# criterion 2: gradient suite
# ---------------------------------------------------------------------------

def test_c02_gradient_suite():
    t0 = time.time()
    worst = {}
    for name, check in GRAD_CHECKS.items():
        rng = np.random.default_rng(2000 + hash(name) % 997)
        worst[name] = max(check(rng) for _ in range(20))
    elapsed = time.time() - t0
    bad = {k: v for k, v in worst.items() if v > 1e-6}
    ok = not bad and elapsed < 60.0
    detail = ", ".join(f"{k} {v:.1e}" for k, v in worst.items())
    report_line(2, ok, f"20 instances each (<=1e-6, 64-bit): {detail}; "
                       f"{elapsed:.1f}s (<60s)")
    assert not bad, bad
    assert elapsed < 60.0


# ---------------------------------------------------------------------------
# criterion 3: convolution oracle
# ---------------------------------------------------------------------------

def test_c03_convolution_oracle():
    t0 = time.time()
    rng = np.random.default_rng(33)
    worst = 0.0
    for _ in range(50):
        b = int(rng.integers(1, 4))
        cin = int(rng.integers(1, 5))
        cout = int(rng.integers(1, 5))
        k = int(rng.choice([1, 3]))
        stride = int(rng.choice([1, 2]))
        padding = int(rng.choice([0, 1]))
        h = int(rng.integers(k + 2 * padding if padding == 0 else k, 9))
        w = int(rng.integers(k, 9))
        h = max(h, k - 2 * padding)
        w = max(w, k - 2 * padding)
        x = Tensor(rng.normal(size=(b, cin, h, w)).astype(np.float32))
        kern = ConvKernel(rng.normal(size=(cout, cin, k, k)).astype(np.float32),
                          stride=stride, padding=padding)
        worst = max(worst, max_relative_error(ops.conv2d(x, kern).data,
                                              conv2d_naive(x, kern).data))
    elapsed = time.time() - t0
    ok = worst <= 1e-5 and elapsed < 30.0
    report_line(3, ok, f"50 random shape/stride/padding configs, max rel err "
                       f"{worst:.2e} (<=1e-5), {elapsed:.1f}s (<30s)")
    assert worst <= 1e-5
    assert elapsed < 30.0


# ---------------------------------------------------------------------------
# criterion 4: desk baseline
# ---------------------------------------------------------------------------

def test_c04_desk_baseline(desk_baseline):
    _, _, meta = desk_baseline
    acc = meta["final_metric"]
    elapsed = meta["elapsed"]
    ok = acc >= 0.90 and elapsed <= 600.0
    report_line(4, ok, f"units (1,1,1,1) seed 0: accuracy {acc:.3f} (>=0.90) "
                       f"in {elapsed:.0f}s (<=600s)")
    assert acc >= 0.90
    assert elapsed <= 600.0


def test_desk_train_loss_decreases_first_three_epochs(desk_baseline):
    _, _, meta = desk_baseline
    losses = meta["train_losses"][:3]
    assert losses[1] < losses[0] and losses[2] < losses[1], losses


def test_linear_probe_trails_desk_cnn_by_twenty_points(desk_baseline):
    """Raw-pixel softmax regression vs the trained desk CNN."""
    model, test_set, meta = desk_baseline
    train_set, _ = gen_classification_dataset(seed=0, **CLASSIFY_DATA)
    xtr = train_set.images.reshape(len(train_set), -1).astype(np.float64)
    xte = test_set.images.reshape(len(test_set), -1).astype(np.float64)
    w = np.zeros((10, xtr.shape[1]))
    b = np.zeros(10)
    for _ in range(150):
        logits = xtr @ w.T + b
        _, g = ops.softmax_cross_entropy(logits, train_set.targets)
        w -= 0.5 * (g.T @ xtr)
        b -= 0.5 * g.sum(axis=0)
    probe_acc = float(((xte @ w.T + b).argmax(axis=1) == test_set.targets).mean())
    cnn_acc = meta["final_metric"]
    assert cnn_acc - probe_acc >= 0.20, (cnn_acc, probe_acc)


# ---------------------------------------------------------------------------
# criteria 5-7: sweep patterns on the (2,2,2,2) desk classifiers
# ---------------------------------------------------------------------------

def _passing_seeds(per_seed: dict[int, bool]) -> list[int]:
    return [s for s, ok in per_seed.items() if ok]


def test_c05_e1_qualitative_pattern(desk_reports):
    per_seed = {}
    details = []
    last_convs = [f"s3u{u}.{slot}" for u in (0, 1) for slot in ("conv1", "conv2")]
    for seed, reports in desk_reports.items():
        e1 = reports["e1"]
        by_addr = {str(r.addresses[0]): r for r in e1.results}
        early_ok = (by_addr["stem"].ablated <= 0.20
                    and by_addr["s0u0.conv1"].ablated <= 0.20)
        trivial_frac = float(np.mean([by_addr[a].trivial for a in last_convs]))
        per_seed[seed] = early_ok and trivial_frac >= 0.75
        details.append(f"seed{seed}: stem {by_addr['stem'].ablated:.2f}, "
                       f"s0u0.conv1 {by_addr['s0u0.conv1'].ablated:.2f}, "
                       f"last-block trivial {trivial_frac:.0%}")
    ok = len(_passing_seeds(per_seed)) >= 2
    report_line(5, ok, f"early craters <=0.20 and >=75% of last-block convs "
                       f"trivial at tau={TAU}; {'; '.join(details)} "
                       f"-> {len(_passing_seeds(per_seed))}/3 seeds")
    assert ok, per_seed


def test_c06_e3_projection_pattern(desk_reports):
    per_seed = {}
    details = []
    for seed, reports in desk_reports.items():
        e3 = reports["e3"]
        per_seed[seed] = all(r.ablated < 0.5 * e3.baseline for r in e3.results)
        details.append(
            f"seed{seed}: base {e3.baseline:.2f}, proj-zeroed "
            + "/".join(f"{r.ablated:.2f}" for r in e3.results))
    ok = len(_passing_seeds(per_seed)) >= 2
    report_line(6, ok, f"every projection zeroing < 0.5 x baseline; "
                       f"{'; '.join(details)} "
                       f"-> {len(_passing_seeds(per_seed))}/3 seeds")
    assert ok, per_seed


def test_c07_e2_block_pattern(desk_reports):
    per_seed = {}
    details = []
    for seed, reports in desk_reports.items():
        e2 = reports["e2"]
        last_drop = e2.baseline - e2.results[-1].ablated
        first_drop = e2.baseline - e2.results[0].ablated
        per_seed[seed] = last_drop <= 0.05 and first_drop > 0.10
        details.append(f"seed{seed}: block1 drop {first_drop:+.3f}, "
                       f"block4 drop {last_drop:+.3f}")
    ok = len(_passing_seeds(per_seed)) >= 2
    report_line(7, ok, f"last block within 0.05, block 1 beyond 0.10; "
                       f"{'; '.join(details)} "
                       f"-> {len(_passing_seeds(per_seed))}/3 seeds")
    assert ok, per_seed


# ---------------------------------------------------------------------------
# criterion 8: segmentation task-dependence
# ---------------------------------------------------------------------------

def test_c08_segmentation_back_layers_load_bearing(seg_models):
    per_seed = {}
    details = []
    for seed, (model, test_set, meta) in seg_models.items():
        dice = meta["final_metric"]
        e2 = run_protocol_e2(model, test_set, TAU)
        drop = e2.baseline - e2.results[-1].ablated
        per_seed[seed] = dice >= 0.85 and drop > 0.20
        details.append(f"seed{seed}: dice {dice:.3f}, last-block drop {drop:+.3f}")
    ok = len(_passing_seeds(per_seed)) >= 2
    report_line(8, ok, f"dice >=0.85 and last-block E2 drop >0.20; "
                       f"{'; '.join(details)} "
                       f"-> {len(_passing_seeds(per_seed))}/3 seeds")
    assert ok, per_seed


# ---------------------------------------------------------------------------
# criterion 9: fold-prune exactness
# ---------------------------------------------------------------------------

def test_c09_fold_prune_exactness(desk_models, desk_reports):
    model, test_set, _ = desk_models[0]
    e1 = desk_reports[0]["e1"]
    targets = {r.addresses[0] for r in e1.results
               if r.trivial and r.addresses[0].slot in ("conv1", "conv2")}
    assert targets, "no trivial conv kernels to fold"
    zeroed = zero_kernels(model, AblationSpec(frozenset(targets)))
    pruned = fold_and_prune(model, targets)
    m_zero = evaluate(zeroed, test_set)
    m_fold = evaluate(pruned, test_set)
    dropped = model.parameter_count() - pruned.parameter_count()
    ok = abs(m_zero - m_fold) <= 1e-6 and dropped > 0
    report_line(9, ok, f"folded {len(targets)} kernels: metric "
                       f"|{m_fold:.6f} - {m_zero:.6f}| <= 1e-6, "
                       f"parameters -{dropped}")
    assert abs(m_zero - m_fold) <= 1e-6
    assert dropped > 0


# ---------------------------------------------------------------------------
# criterion 10: determinism of full train+ablate runs
# ---------------------------------------------------------------------------

def test_c10_determinism(tmp_path):
    config = {
        "model": {"stage_widths": [4, 8, 16], "units_per_stage": [1, 1, 1],
                  "input_channels": 3, "num_classes": 10, "task": "classify",
                  "seed": 0},
        "hyper": {"epochs": 2, "batch_size": 8, "lr": 0.05, "seed": 0},
        "dataset": {"kind": "synthetic-classify", "seed": 0, "n_per_class": 8,
                    "classes": 10, "size": 16, "test_per_class": 3},
    }
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps(config))
    blobs = []
    for tag in ("a", "b"):
        ckpt = tmp_path / f"{tag}.ckpt"
        rep = tmp_path / f"{tag}.json"
        assert cli_main(["train", "--config", str(cfg), "--out", str(ckpt)]) == 0
        assert cli_main(["ablate", "--checkpoint", str(ckpt), "--config", str(cfg),
                         "--protocol", "all", "--tau", "0.02",
                         "--out", str(rep)]) == 0
        blobs.append((ckpt.read_bytes(), rep.read_bytes(),
                      (tmp_path / f"{tag}.ckpt.history.json").read_bytes()))
    ok = blobs[0] == blobs[1]
    report_line(10, ok, f"two train+ablate runs: checkpoints "
                        f"{'identical' if blobs[0][0] == blobs[1][0] else 'DIFFER'}, "
                        f"reports {'identical' if blobs[0][1] == blobs[1][1] else 'DIFFER'}")
    assert ok


# ---------------------------------------------------------------------------
# criterion 11: dice correctness
# ---------------------------------------------------------------------------

def test_c11_dice_correctness():
    m = np.zeros((1, 1, 4, 4), np.float32)
    m[0, 0, :2, :] = 1
    identical = ops.dice_coefficient(m, m)

    a = np.zeros((1, 1, 4, 4), np.float32)
    b = np.zeros((1, 1, 4, 4), np.float32)
    a[0, 0, 0, :] = 1
    b[0, 0, 3, :] = 1
    disjoint = ops.dice_coefficient(a, b)

    true = np.zeros((1, 1, 4, 4), np.float32)
    true[0, 0, :2, :] = 1  # 8 pixels
    pred = np.zeros_like(true)
    pred[0, 0, 0, :] = 1  # covers exactly half, no false positives
    half = ops.dice_coefficient(pred, true)

    ok = identical == 1.0 and disjoint == 0.0 and half == 2.0 / 3.0
    report_line(11, ok, f"identical {identical}, disjoint {disjoint}, "
                        f"half-overlap {half} (expect 1, 0, 2/3)")
    assert identical == 1.0
    assert disjoint == 0.0
    assert half == 2.0 / 3.0
