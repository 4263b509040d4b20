"""Train the classifier on a small phantom cohort with 5-fold CV.

Defaults keep the run to a few minutes on one core; raise --subjects and
--epochs for the full-size check.

    python demos/train_small_cohort.py --encoder fastkan --head wavkan
"""

import argparse
import time

from abfrkan import anchors as A
from abfrkan import model as M
from abfrkan import sampling as S
from abfrkan import volume as V
from abfrkan.rng import Rng


def build(n, H, N, seed):
    reps, aset, table = [], None, None
    for i in range(n):
        vol, mask, label = V.make_phantom(V.PhantomSpec(seed=seed + i, label=i % 2, T=120))
        if aset is None:
            aset = A.select_random_anchors(mask, H, 8, 100, rng=Rng(seed))
            table = A.SupportTable(mask)
        reps.append(S.iterative_representation(vol, mask, aset, N=N, rng=Rng(1000 + i), label=label, table=table))
    return reps


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--subjects", type=int, default=40)
    ap.add_argument("--epochs", type=int, default=40)
    ap.add_argument("--encoder", default="mlp")
    ap.add_argument("--head", default="mlp")
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()

    t0 = time.perf_counter()
    reps = build(args.subjects, H=32, N=128, seed=args.seed)
    print(f"built {len(reps)} representations in {time.perf_counter() - t0:.1f}s")

    cfg = M.ModelConfig(H=32, embed_dim=16, n_layers=1, n_heads=2, grid_size=5, degree=3,
                        encoder_block=args.encoder, head_block=args.head)
    print(f"{cfg.name}: {M.model_param_count(cfg):,} parameters")
    t0 = time.perf_counter()
    res = M.run_cv(reps, cfg, M.TrainSpec(epochs=args.epochs, seed=args.seed))
    for f in res.folds:
        print(f"  fold {f.fold}: acc {f.metrics.acc:.3f} auc {f.metrics.auc:.3f}")
    print(f"mean acc {res.mean['acc']:.3f} +- {res.std['acc']:.3f}, "
          f"auc {res.mean['auc']:.3f} +- {res.std['auc']:.3f} ({time.perf_counter() - t0:.0f}s)")


if __name__ == "__main__":
    main()
