# scratch calibration harness; not part of the package
import sys
from dataclasses import replace

import numpy as np

from divdrop.cli import build_corpus
from divdrop.clustering import ClusteringConfig
from divdrop.trainer import ExperimentConfig, run


def corpus(seed, spread, sep, rot, mag, hard_frac, overlap, spi=25, dim=8):
    values = {
        "seed": seed,
        "datagen.samples_per_identity": spi,
        "datagen.dim": dim,
        "datagen.intra_class_spread": spread,
        "datagen.inter_class_separation": sep,
        "datagen.shift_rotation_deg": rot,
        "datagen.shift_magnitude": mag,
        "datagen.hard_fraction": hard_frac,
        "datagen.hard_overlap": overlap,
    }
    return build_corpus(values)


def sweep(src, tgt, lr, alpha, eps, seed, rhos=(0.0, 0.2, 0.4, 0.6, 0.8), epochs=55):
    rows = []
    for rho in rhos:
        cfg = ExperimentConfig(
            rho=rho, alpha=alpha, lr_initial=lr, epochs_total=epochs,
            clustering=ClusteringConfig(eps=eps, min_pts=4), seed=seed,
        )
        rep = run(src, tgt, cfg)
        aborted = sum(1 for r in rep.epochs if r.aborted)
        rows.append((rho, rep.final_clustering_error_rate, rep.rel_err_10,
                     rep.final_metrics.mAP, rep.cross_branch_cosine, aborted))
    return rows


def show(tag, rows):
    print(f"=== {tag}")
    for rho, err, rel10, map_, cos, ab in rows:
        err_s = "none " if err is None else f"{err:.3f}"
        print(f"  rho={rho}: err={err_s} rel10={rel10:.3f} mAP={map_:.4f} cos={cos:+.3f} aborted={ab}")
    maps = {r[0]: r[3] for r in rows}
    best_interior = max(maps[r] for r in (0.2, 0.4, 0.6))
    print(f"  interior-vs-ends margin: {best_interior - maps[0.0]:+.4f} / {best_interior - maps[0.8]:+.4f}")


if __name__ == "__main__":
    spread = float(sys.argv[1]) if len(sys.argv) > 1 else 0.30
    overlap = float(sys.argv[2]) if len(sys.argv) > 2 else 1.5
    lr = float(sys.argv[3]) if len(sys.argv) > 3 else 0.08
    alpha = float(sys.argv[4]) if len(sys.argv) > 4 else 0.95
    eps = float(sys.argv[5]) if len(sys.argv) > 5 else 0.6
    seed = int(sys.argv[6]) if len(sys.argv) > 6 else 20260810
    src, tgt, hard = corpus(seed, spread, 3.0, 30.0, 1.0, 0.1, overlap)
    rows = sweep(src, tgt, lr, alpha, eps, seed)
    show(f"spread={spread} overlap={overlap} lr={lr} alpha={alpha} eps={eps} seed={seed}", rows)
