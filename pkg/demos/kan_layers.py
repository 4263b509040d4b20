"""A quick tour of the feed-forward blocks.

Prints the basis functions each KAN variant builds on, fits every block to a
1-D target with AdamW, and lists parameter counts at a common width.

    python demos/kan_layers.py
"""

import numpy as np

from abfrkan import kan as K
from abfrkan import tensor as T
from abfrkan.kan import KanLayerConfig, KanVariant


def fit(variant, x, y, steps=300):
    # layer norm over a single feature is constant, so switch it off for 1-D
    cfg = KanLayerConfig(variant, 1, 1, grid_size=6, expansion=8, layer_norm=False)
    layer = K.make_block(cfg, np.random.default_rng(0))
    opt = T.AdamW(layer.parameters(), lr=1e-2, weight_decay=0.0)
    xt = T.tensor(x[:, None])
    for _ in range(steps):
        opt.zero_grad()
        err = layer(xt) - y[:, None]
        loss = T.tmean(err * err)
        T.backward(loss)
        opt.step()
    return loss.item()


def main():
    z = np.linspace(-2, 2, 5)
    print("z            ", np.round(z, 3))
    print("cubic B-spline", np.round(K.bspline_basis(0.0, K.uniform_knots(5, 3, -2, 2), 3), 3))
    print("gaussian rbf  ", np.round(K.rbf(z), 3))
    print("switch        ", np.round(K.switch(z), 3))
    print("mexican hat   ", np.round(K.mexican_hat(z), 3))
    print("T_0..T_4(0.5) ", np.round(K.chebyshev_table(np.array(0.5), 4)[0], 3))

    x = np.linspace(-2, 2, 64)
    y = np.sin(2 * x) * np.exp(-0.2 * x * x)
    print("\nfit of sin(2x)exp(-x^2/5), mse after 300 AdamW steps:")
    for v in KanVariant:
        print(f"  {v.value:<13} {fit(v, x, y):.5f}")

    print("\nparameters of a 64 -> 64 feed-forward block:")
    for v in KanVariant:
        print(f"  {v.value:<13} {K.block_param_count(KanLayerConfig(v, 64, 64)):>8,}")


if __name__ == "__main__":
    main()
