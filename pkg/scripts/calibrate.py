"""Calibration harness: trains desk models and checks the acceptance
predicates for a candidate dataset parameterization.

Not part of the package; used while tuning generator defaults.
Caches trained checkpoints under /tmp/resablate-calib keyed by inputs.
"""

import argparse
import hashlib
import json
import os
import sys
import time

import numpy as np

sys.path.insert(0, os.path.join(os.path.dirname(__file__), "..", "src"))

from resablate import (
    Hyperparams,
    ResNetConfig,
    build_model,
    gen_classification_dataset,
    gen_segmentation_dataset,
    load_checkpoint,
    run_protocol_e1,
    run_protocol_e2,
    run_protocol_e3,
    save_checkpoint,
    train,
)

CACHE = "/tmp/resablate-calib"
os.makedirs(CACHE, exist_ok=True)


def cached_train(cfg, hyper, data_kind, data_kwargs):
    key = hashlib.sha256(json.dumps(
        [cfg.to_dict(), hyper.to_dict(), data_kind, data_kwargs], sort_keys=True
    ).encode()).hexdigest()[:16]
    path = os.path.join(CACHE, key + ".ckpt")
    meta_path = os.path.join(CACHE, key + ".json")
    gen = gen_classification_dataset if data_kind == "classify" else gen_segmentation_dataset
    train_set, test_set = gen(**data_kwargs)
    if os.path.exists(path):
        meta = json.load(open(meta_path))
        return load_checkpoint(path), test_set, meta
    model = build_model(cfg)
    t0 = time.time()
    model, hist = train(model, train_set, test_set, hyper)
    dt = time.time() - t0
    save_checkpoint(model, path)
    meta = {"train_time": dt, "final": hist[-1]["test_metric"],
            "history": [h["test_metric"] for h in hist],
            "losses": [h["train_loss"] for h in hist]}
    json.dump(meta, open(meta_path, "w"))
    return model, test_set, meta


def classify_checks(noise, seeds=(0, 1, 2), epochs=30, angle_jitter=0.14,
                    freq_jitter=0.10):
    print(f"=== classification, noise={noise} aj={angle_jitter} fj={freq_jitter} ===")
    data_kwargs = dict(seed=0, n_per_class=200, classes=10, size=32,
                       test_per_class=50, noise=noise,
                       angle_jitter=angle_jitter, freq_jitter=freq_jitter)

    # criterion 4: units (1,1,1,1), seed 0, default hyper
    cfg = ResNetConfig((8, 16, 32, 64), (1, 1, 1, 1), num_classes=10, seed=0)
    model, test_set, meta = cached_train(cfg, Hyperparams(epochs=epochs, seed=0),
                                         "classify", data_kwargs)
    print(f"C4 units(1,1,1,1) seed0: acc={meta['final']:.3f} "
          f"time={meta['train_time']:.0f}s losses[:4]={[round(x,3) for x in meta['losses'][:4]]}")

    for seed in seeds:
        cfg = ResNetConfig((8, 16, 32, 64), (2, 2, 2, 2), num_classes=10, seed=seed)
        dk = dict(data_kwargs, seed=seed)
        model, test_set, meta = cached_train(cfg, Hyperparams(epochs=epochs, seed=seed),
                                             "classify", dk)
        base = meta["final"]
        e1 = run_protocol_e1(model, test_set, tau=0.02)
        e2 = run_protocol_e2(model, test_set, tau=0.02)
        e3 = run_protocol_e3(model, test_set, tau=0.02)
        by_addr = {str(r.addresses[0]): r for r in e1.results if r.addresses}

        stem_acc = by_addr["stem"].ablated
        c1_acc = by_addr["s0u0.conv1"].ablated
        last_convs = [f"s3u{u}.{s}" for u in (0, 1) for s in ("conv1", "conv2")]
        trivial_frac = np.mean([by_addr[a].trivial for a in last_convs])
        e3_ok = all(r.ablated < 0.5 * e3.baseline for r in e3.results)
        e2_last = e2.results[-1]
        e2_first = e2.results[0]
        c5a = stem_acc <= 0.20 and c1_acc <= 0.20
        c5b = trivial_frac >= 0.75
        c7 = (e2.baseline - e2_last.ablated) <= 0.05 and (e2.baseline - e2_first.ablated) > 0.10
        print(f" seed{seed}: base={base:.3f} t={meta['train_time']:.0f}s | "
              f"C5a stem={stem_acc:.2f} c1={c1_acc:.2f} ok={c5a} | "
              f"C5b last-block trivial={trivial_frac:.2f} ok={c5b} "
              f"({[f'{a}:{by_addr[a].ablated:.2f}' for a in last_convs]}) | "
              f"C6 e3={[f'{r.ablated:.2f}' for r in e3.results]} ok={e3_ok} | "
              f"C7 last_drop={e2.baseline - e2_last.ablated:+.3f} "
              f"first_drop={e2.baseline - e2_first.ablated:+.3f} ok={c7}")


def segment_checks(contrast, noise, seeds=(0, 1, 2), epochs=30, n=512, lr=0.05):
    print(f"=== segmentation, contrast={contrast} noise={noise} lr={lr} ===")
    for seed in seeds:
        cfg = ResNetConfig((8, 16, 32, 64), (2, 2, 2, 2), num_classes=1,
                           task="segment", seed=seed)
        dk = dict(seed=seed, n=n, test_n=128, size=32, contrast=contrast, noise=noise)
        model, test_set, meta = cached_train(
            cfg, Hyperparams(epochs=epochs, seed=seed, lr=lr), "segment", dk)
        base = meta["final"]
        e2 = run_protocol_e2(model, test_set, tau=0.02)
        drop = e2.baseline - e2.results[-1].ablated
        ok = base >= 0.85 and drop > 0.20
        print(f" seed{seed}: dice={base:.3f} t={meta['train_time']:.0f}s "
              f"e2_last_drop={drop:+.3f} ok={ok} "
              f"e2={[f'{r.ablated:.2f}' for r in e2.results]}")


if __name__ == "__main__":
    ap = argparse.ArgumentParser()
    ap.add_argument("--mode", choices=["classify", "segment", "both"], default="both")
    ap.add_argument("--noise", type=float, default=1.5)
    ap.add_argument("--angle-jitter", type=float, default=0.14)
    ap.add_argument("--freq-jitter", type=float, default=0.10)
    ap.add_argument("--contrast", type=float, default=1.0)
    ap.add_argument("--seg-noise", type=float, default=0.35)
    ap.add_argument("--lr", type=float, default=0.05)
    ap.add_argument("--epochs", type=int, default=30)
    ap.add_argument("--seeds", type=int, nargs="+", default=[0, 1, 2])
    args = ap.parse_args()
    if args.mode in ("classify", "both"):
        classify_checks(args.noise, tuple(args.seeds), args.epochs,
                        args.angle_jitter, args.freq_jitter)
    if args.mode in ("segment", "both"):
        segment_checks(args.contrast, args.seg_noise, tuple(args.seeds),
                       args.epochs, lr=args.lr)
