"""Train one interval network on noisy blobs and read its uncertainty.

Run: python3 demos/uncertainty_on_blobs.py
"""
import numpy as np

from creinn.credal import ProbabilityIntervals, batch_uncertainty, intersection_probability
from creinn.data import split, standardize, synth_blobs, with_label_noise
from creinn.layers import ModelSpec
from creinn.metrics import ar_curve
from creinn.training import TrainConfig, fit, predict


def main(seed=0):
    noisy = with_label_noise(synth_blobs(3, 200, 2.0, seed=seed), 0.1, seed=seed)
    test = synth_blobs(3, 500, 2.0, seed=seed + 1000)
    train, valid = split(noisy, seed=seed)
    train, valid, test = standardize(train, valid, test)

    model, history = fit(ModelSpec.mlp([2, 16, 16, 3], use_ibn=True), train, valid, TrainConfig(epochs=50, seed=seed))
    print(f"best validation accuracy: {max(h['valid_acc'] for h in history):.3f}")

    lo, hi, _ = predict(model, test)
    pi = ProbabilityIntervals(lo, hi)
    q = intersection_probability(pi).probs
    correct = np.argmax(q, axis=-1) == test.labels
    print(f"test accuracy: {correct.mean():.3f}")

    i = int(np.argmin(np.linalg.norm(test.inputs, axis=1)))
    print(f"\nsample nearest the origin, where the classes meet:")
    for k in range(3):
        print(f"  class {k}: [{lo[i, k]:.3f}, {hi[i, k]:.3f}]  chosen p={q[i, k]:.3f}")

    u = batch_uncertainty(pi)
    print("\nrejecting uncertain samples first")
    print("measure  acc@0%  acc@50%  AUARC")
    for m in ("au", "eu", "tu"):
        c = ar_curve(u[m], correct)
        print(f"{m.upper():>7}  {c.accuracy[0]:.3f}   {c.accuracy[len(c.accuracy) // 2]:.3f}    {c.auarc:.3f}")


if __name__ == "__main__":
    main()
