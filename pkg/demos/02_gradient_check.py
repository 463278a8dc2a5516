"""Trust but verify: compare backprop with central differences on the full network.

Every trainable number in both branches, the attention projections and the
head gets nudged by +-h and the loss re-evaluated.

    python demos/02_gradient_check.py [--seeds 3]
"""
import argparse

import numpy as np

from padphys.network import NetworkConfig, body_forward, head_forward, init_weights
from padphys.tensor import backward
from padphys.training import bce_loss

CONFIG = NetworkConfig(input_size=8, conv_filters=(2, 2, 3, 3), head_hidden=4, dropout_rate=0.0)


def loss(w, m, a, y):
    feats, _ = body_forward(m, a, w, "eval")
    return bce_loss(head_forward(feats, w, "eval"), y)


def check(seed, h=1e-5):
    r = np.random.default_rng(seed)
    w = init_weights(CONFIG, seed)
    m, a, y = r.normal(size=(2, 3, 8, 8)), r.normal(size=(2, 3, 8, 8)), np.array([1.0, 0.0])
    backward(loss(w, m, a, y))
    per_layer = {}
    for name in w.params.trainable_names():
        t = w.params[name]
        flat, grad = t.data.reshape(-1), t.grad.reshape(-1).copy()
        worst = 0.0
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + h
            up = loss(w, m, a, y).item()
            flat[i] = orig - h
            down = loss(w, m, a, y).item()
            flat[i] = orig
            num = (up - down) / (2 * h)
            worst = max(worst, abs(grad[i] - num) / max(abs(grad[i]), abs(num), 1e-6))
        per_layer[name] = worst
    return per_layer


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--seeds", type=int, default=3)
    args = ap.parse_args()
    for seed in range(args.seeds):
        per_layer = check(seed)
        name = max(per_layer, key=per_layer.get)
        print(f"seed {seed}: {len(per_layer)} tensors, worst relative error {per_layer[name]:.2e} ({name})")


if __name__ == "__main__":
    main()
