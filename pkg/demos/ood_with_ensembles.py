"""Flag out-of-distribution inputs by epistemic uncertainty, alone and as an ensemble.

Run: python3 demos/ood_with_ensembles.py
"""
import numpy as np

from creinn.credal import ProbabilityIntervals, average_intervals, batch_uncertainty
from creinn.data import split, standardize, synth_blobs, synth_ood
from creinn.layers import ModelSpec
from creinn.metrics import ood_detect
from creinn.training import TrainConfig, fit, predict


def main(data_seed=0, members=5):
    train, valid = split(synth_blobs(3, 240, 4.0, seed=data_seed), seed=data_seed)
    test = synth_blobs(3, 200, 4.0, seed=data_seed + 1000)
    ood = synth_ood(200, 10.0, seed=data_seed + 2000)
    train, valid, test, ood = standardize(train, valid, test, ood)

    preds = []
    for seed in range(members):
        model, _ = fit(ModelSpec.mlp([2, 16, 16, 3], use_ibn=True), train, valid, TrainConfig(epochs=50, seed=seed))
        preds.append([ProbabilityIntervals(*predict(model, d)[:2]) for d in (test, ood)])
        u_id, u_ood = (batch_uncertainty(p)["eu"] for p in preds[-1])
        print(f"member {seed}: EU AUROC {ood_detect(u_id, u_ood)[0]:.3f}, "
              f"median EU in-dist {np.median(u_id):.3f}, out-of-dist {np.median(u_ood):.3f}")

    ens_id = average_intervals([p[0] for p in preds])
    ens_ood = average_intervals([p[1] for p in preds])
    for m in ("eu", "tu"):
        auroc, auprc = ood_detect(batch_uncertainty(ens_id)[m], batch_uncertainty(ens_ood)[m])
        print(f"ensemble {m.upper()}: AUROC {auroc:.4f}, AUPRC {auprc:.4f}")


if __name__ == "__main__":
    main()
