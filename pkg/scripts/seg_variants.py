"""Fast A/B probes for segmentation task variants: which design makes the
last backbone stage load-bearing? Trains briefly and reports the E2 pattern.
Scratch tooling, not part of the package."""

import os
import sys
import time

import numpy as np

sys.path.insert(0, os.path.join(os.path.dirname(__file__), "..", "src"))

from resablate.ablation import run_protocol_e2
from resablate.datasets import (
    LabeledDataset,
    _sample_shape,
    _sample_true_shapes,
    _standardize_pair,
)
from resablate.model import ResNetConfig, build_model
from resablate.training import Hyperparams, evaluate, train


def gen_variant(seed, n, test_n, size=32, *, contrast_true=1.0, contrast_distr=1.0,
                tex_amp=0.8, amp_jitter=0.0, true_freq=6.0, distr_freq=6.0,
                true_dir="+", distr_dir="-", key_mode=False, key_amp=0.45,
                noise=0.35, n_shapes=(1, 4), n_distr=(1, 3),
                shape_size=(0.12, 0.30)):
    ss = np.random.SeedSequence((seed, 777))
    train_ss, test_ss = ss.spawn(2)
    ys, xs = np.mgrid[0:size, 0:size].astype(np.float64)
    diag = {"+": (xs + ys) / size, "-": (xs - ys) / size}

    def shape(rng):
        cy, cx = rng.uniform(0.2 * size, 0.8 * size, size=2)
        lo, hi = shape_size
        if rng.random() < 0.5:
            a = rng.uniform(lo, hi) * size
            b = rng.uniform(lo, hi) * size
            ang = rng.uniform(0, np.pi)
            dy, dx = ys - cy, xs - cx
            u = np.cos(ang) * dx + np.sin(ang) * dy
            v = -np.sin(ang) * dx + np.cos(ang) * dy
            return (u / a) ** 2 + (v / b) ** 2 <= 1.0
        hy = rng.uniform(0.8 * lo, 0.9 * hi) * size
        hx = rng.uniform(0.8 * lo, 0.9 * hi) * size
        return (np.abs(ys - cy) <= hy) & (np.abs(xs - cx) <= hx)

    def true_mask(rng):
        while True:
            mask = np.zeros((size, size), dtype=bool)
            for _ in range(rng.integers(n_shapes[0], n_shapes[1] + 1)):
                mask |= shape(rng)
            if 0.10 <= mask.mean() <= 0.40:
                return mask

    def paint(rng, img, region, direction, freq, lift):
        phase = rng.uniform(0, 2 * np.pi)
        amp = tex_amp * np.exp(rng.uniform(-amp_jitter, amp_jitter))
        tex = amp * np.sin(2 * np.pi * freq * diag[direction] + phase)
        img[region] = lift + tex[region]

    def make(split_ss, count):
        rng = np.random.default_rng(split_ss)
        imgs = np.empty((count, 3, size, size))
        masks = np.empty((count, 1, size, size), dtype=np.float32)
        for i in range(count):
            if key_mode:
                key = int(rng.integers(0, 2))
                t_dir, d_dir = ("+", "-") if key == 0 else ("-", "+")
                phase = rng.uniform(0, 2 * np.pi)
                surface = key_amp * np.sin(2 * np.pi * 2.0 * diag[t_dir] + phase)
            else:
                t_dir, d_dir = true_dir, distr_dir
                theta = rng.uniform(0, np.pi)
                phase = rng.uniform(0, 2 * np.pi)
                surface = 0.3 * np.sin(
                    2 * np.pi * 2.0 * (np.cos(theta) * xs + np.sin(theta) * ys) / size + phase)
            for _ in range(rng.integers(n_distr[0], n_distr[1] + 1)):
                paint(rng, surface, shape(rng), d_dir, distr_freq, contrast_distr)
            mask = true_mask(rng)
            paint(rng, surface, mask, t_dir, true_freq, contrast_true)
            imgs[i] = surface[None] + rng.normal(0.0, noise, size=(3, size, size))
            masks[i, 0] = mask
        return imgs, masks

    tr_i, tr_m = make(train_ss, n)
    te_i, te_m = make(test_ss, test_n)
    tr_i, te_i = _standardize_pair(tr_i, te_i)
    return (LabeledDataset("segmentation", tr_i, tr_m, "train", {"v": "probe"}),
            LabeledDataset("segmentation", te_i, te_m, "test", {"v": "probe"}))


VARIANTS = {
    "A_pure_texture_boundary": dict(contrast_true=0.0, contrast_distr=0.0),
    "B_weak_intensity": dict(contrast_true=0.25, contrast_distr=0.25),
    "C_freq_discrimination": dict(true_freq=5.0, distr_freq=3.4, distr_dir="+",
                                  amp_jitter=0.35),
    "D_global_key": dict(key_mode=True, key_amp=0.7),
    "H_many_small_shapes": dict(n_shapes=(3, 5), n_distr=(2, 4),
                                shape_size=(0.09, 0.18)),
    "H2_small_pure_texture": dict(n_shapes=(3, 5), n_distr=(2, 4),
                                  shape_size=(0.09, 0.18),
                                  contrast_true=0.25, contrast_distr=0.25),
}


def run(name, kwargs, epochs, seed=0, n=512):
    tr, te = gen_variant(seed, n, 128, **kwargs)
    cfg = ResNetConfig((8, 16, 32, 64), (2, 2, 2, 2), num_classes=1,
                       task="segment", seed=seed)
    model = build_model(cfg)
    t0 = time.time()
    model, hist = train(model, tr, te, Hyperparams(epochs=epochs, seed=seed))
    dice = hist[-1]["test_metric"]
    e2 = run_protocol_e2(model, te, 0.02)
    drops = [e2.baseline - r.ablated for r in e2.results]
    print(f"{name}: dice={dice:.3f} t={time.time()-t0:.0f}s "
          f"e2_drops={[f'{d:+.2f}' for d in drops]} last={drops[-1]:+.3f}",
          flush=True)


if __name__ == "__main__":
    epochs = int(sys.argv[2]) if len(sys.argv) > 2 else 15
    names = sys.argv[1].split(",") if len(sys.argv) > 1 and sys.argv[1] != "all" \
        else list(VARIANTS)
    for name in names:
        run(name, VARIANTS[name], epochs)
