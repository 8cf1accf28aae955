"""Feed inputs known only up to an interval and watch uncertainty grow with the interval.

Run: python3 demos/interval_inputs.py
"""
import numpy as np

from creinn.credal import ProbabilityIntervals, batch_uncertainty
from creinn.data import NOISE_PAIRS, make_interval_noise, split, standardize, synth_blobs, to_unit_box
from creinn.layers import ModelSpec
from creinn.metrics import relative_increase
from creinn.training import TrainConfig, fit, predict


def main(seed=0):
    train, valid = split(synth_blobs(3, 200, 4.0, seed=seed), seed=seed)
    test = synth_blobs(3, 200, 4.0, seed=seed + 1000)
    train, valid, test = to_unit_box(train, valid, test)

    # the model only ever sees the mildest disturbance during training
    ref = make_interval_noise(train, *NOISE_PAIRS[0])
    itrain, ivalid = standardize(ref, ref, make_interval_noise(valid, *NOISE_PAIRS[0]))[1:]
    model, _ = fit(ModelSpec.mlp([2, 16, 16, 3], use_ibn=True), itrain, ivalid, TrainConfig(epochs=50, seed=seed))

    scores = {m: {} for m in ("au", "eu", "tu")}
    for pair in NOISE_PAIRS:
        (itest,) = standardize(ref, make_interval_noise(test, *pair))[1:]
        u = batch_uncertainty(ProbabilityIntervals(*predict(model, itest)[:2]))
        for m in scores:
            scores[m][pair] = u[m]

    print("disturbance    mean EU   r_AU    r_EU    r_TU")
    ratios = {m: relative_increase(scores[m], NOISE_PAIRS[0]).ratios for m in scores}
    for pair in NOISE_PAIRS:
        print(f"[{pair[0]:.2f}, {pair[1]:.2f}]   {np.mean(scores['eu'][pair]):.4f}  "
              + "  ".join(f"{ratios[m][pair]:6.2f}" for m in scores))


if __name__ == "__main__":
    main()
